use gebd_core::data::{generate_synthetic_dataset, make_folds, BoundaryClass, Dataset, SynthConfig};
use gebd_core::encoder::EncoderConfig;
use gebd_core::eval::{evaluate_dataset, PredictionRecord};
use gebd_core::heads::{DecoderConfig, DirectHeadConfig};
use gebd_core::model::ModelConfig;
use gebd_core::trainer::{ensemble_average, evaluate_model, train_fold, TrainConfig};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { d_enc: 4, transformer_layers: 1, transformer_heads: 1, ..Default::default() },
        simsiam_hidden: 4,
        decoder: DecoderConfig { c_decoder: 4, stage_widths: vec![4, 4, 4, 4], blocks_per_stage: 1 },
        tsm_head_hidden: 4,
        direct_head: DirectHeadConfig { layers: 1, heads: 1, ff_mult: 1 },
        ..Default::default()
    }
}

#[test]
fn saved_dataset_trains_and_evaluates() {
    let synth = SynthConfig { dim: 6, ..Default::default() };
    let (videos, annotations) = generate_synthetic_dataset(10, 3, &synth).unwrap();
    let original = Dataset::new(videos, annotations).unwrap();
    let dir = tempfile::tempdir().unwrap();
    original.save_dir(dir.path()).unwrap();
    let data = Dataset::load_dir(dir.path()).unwrap();
    assert_eq!(data.ids(), original.ids());
    for id in data.ids() {
        assert_eq!(data.labels(&id).unwrap(), original.labels(&id).unwrap());
    }

    let split = make_folds(&data.ids(), 5, 0).unwrap().remove(1);
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let ckpt = train_fold(&split, &data, &tiny_model(), &cfg).unwrap();
    let val = data.subset(&split.val_ids).unwrap();
    let report = evaluate_model(&ckpt.model().unwrap(), &ckpt.params, &val, &ckpt.peak, &[0.05, 0.1], BoundaryClass::Whole).unwrap();
    assert_eq!(report.num_videos, 2);
    assert_eq!(report.mean.len(), 2);
    // A wider tolerance can only match more.
    assert!(report.mean[1].f1 >= report.mean[0].f1);
    assert_eq!(report.mean_f1(0), ckpt.history[ckpt.best_epoch].val_f1[0]);

    let v = &val.videos()[0];
    let p = ckpt.predict(v).unwrap().p_final;
    assert_eq!(ensemble_average(&[p.view()]).unwrap(), p);
}

#[test]
fn ground_truth_scores_perfectly_for_every_class() {
    let (videos, annotations) = generate_synthetic_dataset(8, 5, &SynthConfig::default()).unwrap();
    let data = Dataset::new(videos, annotations).unwrap();
    for class in BoundaryClass::ALL {
        let preds: Vec<PredictionRecord> = data
            .annotations()
            .iter()
            .map(|a| PredictionRecord { video_id: a.video_id.clone(), class, timestamps: a.boundaries(class).to_vec() })
            .collect();
        let report = evaluate_dataset(&preds, data.annotations(), &[0.05], class).unwrap();
        assert_eq!(report.num_videos, 8);
        assert_eq!(report.mean_f1(0), 1.0, "{class}");
    }
}
