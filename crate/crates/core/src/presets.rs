//! Configurations sized for a single commodity CPU core.

use crate::data::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::heads::{DecoderConfig, DirectHeadConfig};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub fn desk_synth() -> SynthConfig {
    SynthConfig { noise: 0.2, ..Default::default() }
}

pub fn desk_model() -> ModelConfig {
    let d = 16;
    let w = 8;
    ModelConfig {
        encoder: EncoderConfig { d_enc: d, transformer_layers: 1, transformer_heads: 2, ..Default::default() },
        simsiam_hidden: d,
        decoder: DecoderConfig { c_decoder: 2 * w, stage_widths: vec![w, w, 2 * w, 2 * w], blocks_per_stage: 1 },
        tsm_head_hidden: 2 * w,
        direct_head: DirectHeadConfig { layers: 1, heads: 4, ff_mult: 1 },
        ..Default::default()
    }
}

pub fn desk_train() -> TrainConfig {
    TrainConfig { epochs: 8, tune_threshold: true, aux_pass_bce: true, ..Default::default() }
}
