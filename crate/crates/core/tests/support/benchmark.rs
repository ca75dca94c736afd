//! The synthetic benchmark behind criteria 5 to 7. Each seed generates its
//! own data: 200 videos for 5-fold cross-validation and 50 held-out videos
//! for the ensembling check. Training runs are shared between criteria.
//!
//! The epoch and the peak threshold are chosen on the last 20 videos of each
//! training fold, which are then not trained on; the fold's own validation
//! videos are only used for scoring.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gebd_core::data::{generate_synthetic_dataset, make_folds, BoundaryClass, Dataset, DatasetSplit};
use gebd_core::heads::LossWeights;
use gebd_core::model::{GebdModel, ModelConfig, PassMode};
use gebd_core::presets;
use gebd_core::trainer::{
    ensemble_average, ensemble_peak, evaluate_model, evaluate_probabilities, train_fold, Checkpoint, TrainConfig,
};
use ndarray::Array2;

use super::{check, Outcome};

const SEEDS: [u64; 3] = [0, 1, 2];
const CV_VIDEOS: usize = 200;
const TEST_VIDEOS: usize = 50;
const FOLDS: usize = 5;
const SELECTION_VIDEOS: usize = 20;
const REL: f64 = 0.05;
const FOLD_BUDGET: Duration = Duration::from_secs(15 * 60);

struct SeedData {
    cv: Dataset,
    test: Dataset,
    folds: Vec<DatasetSplit>,
}

fn seed_data(seed: u64) -> SeedData {
    let (videos, annotations) = generate_synthetic_dataset(CV_VIDEOS + TEST_VIDEOS, seed, &presets::desk_synth()).unwrap();
    let all = Dataset::new(videos, annotations).unwrap();
    let ids = all.ids();
    let cv = all.subset(&ids[..CV_VIDEOS]).unwrap();
    let test = all.subset(&ids[CV_VIDEOS..]).unwrap();
    let folds = make_folds(&cv.ids(), FOLDS, seed).unwrap();
    SeedData { cv, test, folds }
}

fn whole_f1(model: &GebdModel, ckpt: &Checkpoint, data: &Dataset) -> f64 {
    evaluate_model(model, &ckpt.params, data, &ckpt.peak, &[REL], BoundaryClass::Whole).unwrap().mean_f1(0)
}

struct Run {
    val_f1: f64,
    seconds: f64,
}

fn train(data: &SeedData, fold: usize, model: &ModelConfig, cfg: &TrainConfig) -> (Run, Checkpoint) {
    let mut inner = data.folds[fold].clone();
    let cut = inner.train_ids.len() - SELECTION_VIDEOS;
    inner.val_ids = inner.train_ids.split_off(cut);
    let start = Instant::now();
    let ckpt = train_fold(&inner, &data.cv, model, cfg).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let val = data.cv.subset(&data.folds[fold].val_ids).unwrap();
    let val_f1 = whole_f1(&ckpt.model().unwrap(), &ckpt, &val);
    (Run { val_f1, seconds }, ckpt)
}

struct SeedResult {
    seed: u64,
    /// Full model, one entry per fold.
    folds: Vec<Run>,
    test_single: Vec<f64>,
    test_ensemble: f64,
}

fn full_model_runs() -> &'static [SeedResult] {
    static RUNS: OnceLock<Vec<SeedResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let data = seed_data(seed);
                let cfg = TrainConfig { seed, ..presets::desk_train() };
                let mut folds = Vec::new();
                let mut test_probs: Vec<Vec<Array2<f64>>> = Vec::new();
                let mut test_single = Vec::new();
                let mut peaks = Vec::new();
                for fold in 0..FOLDS {
                    let (run, ckpt) = train(&data, fold, &presets::desk_model(), &cfg);
                    let model = ckpt.model().unwrap();
                    let probs: Vec<Array2<f64>> = data
                        .test
                        .videos()
                        .iter()
                        .map(|v| model.predict(&ckpt.params, v.features_f64().view()).unwrap().p_final)
                        .collect();
                    test_single.push(
                        evaluate_probabilities(&data.test, &probs, &ckpt.peak, &[REL], BoundaryClass::Whole).unwrap().mean_f1(0),
                    );
                    eprintln!(
                        "  seed {seed} fold {fold}: val F1 {:.3}, test F1 {:.3}, {:.0}s",
                        run.val_f1,
                        test_single[fold],
                        run.seconds
                    );
                    test_probs.push(probs);
                    peaks.push(ckpt.peak);
                    folds.push(run);
                }
                let averaged: Vec<Array2<f64>> = (0..data.test.len())
                    .map(|i| ensemble_average(&test_probs.iter().map(|p| p[i].view()).collect::<Vec<_>>()).unwrap())
                    .collect();
                let peak = ensemble_peak(&peaks).unwrap();
                let test_ensemble =
                    evaluate_probabilities(&data.test, &averaged, &peak, &[REL], BoundaryClass::Whole).unwrap().mean_f1(0);
                SeedResult { seed, folds, test_single, test_ensemble }
            })
            .collect()
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

pub fn criterion_5() -> Outcome {
    let runs = full_model_runs();
    let per_seed: Vec<f64> = runs.iter().map(|r| mean(&r.folds.iter().map(|f| f.val_f1).collect::<Vec<_>>())).collect();
    let overall = mean(&per_seed);
    let slowest = runs.iter().flat_map(|r| r.folds.iter().map(|f| f.seconds)).fold(0.0, f64::max);
    check(
        overall >= 0.85 && slowest <= FOLD_BUDGET.as_secs_f64(),
        format!(
            "mean held-out fold F1@{REL} {overall:.3} (per seed: {}; need >= 0.85); slowest fold {slowest:.0}s (limit {}s)",
            fmt(&per_seed),
            FOLD_BUDGET.as_secs()
        ),
    )
}

pub fn criterion_6() -> Outcome {
    let runs = full_model_runs();
    let (mut direct, mut tsm_cl, mut tsm_plain, mut combined) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in runs {
        let data = seed_data(r.seed);
        let cfg = TrainConfig { seed: r.seed, ..presets::desk_train() };
        let no_cl = TrainConfig { loss_weights: LossWeights { lambda_contra: 0.0, ..cfg.loss_weights }, ..cfg.clone() };
        let with_passes = |passes| ModelConfig { passes, ..presets::desk_model() };
        combined.push(r.folds[0].val_f1);
        direct.push(train(&data, 0, &with_passes(PassMode::Direct), &cfg).0.val_f1);
        tsm_cl.push(train(&data, 0, &with_passes(PassMode::Tsm), &cfg).0.val_f1);
        tsm_plain.push(train(&data, 0, &with_passes(PassMode::Tsm), &no_cl).0.val_f1);
        eprintln!(
            "  seed {} fold 0: direct {:.3}, tsm+cl {:.3}, tsm {:.3}, combined {:.3}",
            r.seed,
            direct.last().unwrap(),
            tsm_cl.last().unwrap(),
            tsm_plain.last().unwrap(),
            combined.last().unwrap()
        );
    }
    let (d, tc, tp, c) = (median(&direct), median(&tsm_cl), median(&tsm_plain), median(&combined));
    let a = tc >= tp + 0.02;
    let b = c >= d.max(tc) - 0.01;
    check(
        a && b,
        format!(
            "medians: direct {d:.3}, TSM w/ CL {tc:.3}, TSM w/o CL {tp:.3}, combined {c:.3}; \
             (a) {} ({tc:.3} vs {tp:.3} + 0.02), (b) {} ({c:.3} vs {:.3} - 0.01)",
            if a { "holds" } else { "fails" },
            if b { "holds" } else { "fails" },
            d.max(tc)
        ),
    )
}

pub fn criterion_7() -> Outcome {
    let runs = full_model_runs();
    let gains: Vec<f64> = runs.iter().map(|r| r.test_ensemble - mean(&r.test_single)).collect();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: ensemble {:.3} vs mean single {:.3}", r.seed, r.test_ensemble, mean(&r.test_single)))
        .collect();
    let m = median(&gains);
    check(m >= 0.0, format!("median gain {m:+.3} on {TEST_VIDEOS} held-out videos ({})", detail.join("; ")))
}
