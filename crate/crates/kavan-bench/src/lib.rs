//! Shared fixtures for the criterion benchmarks.

use kavan_core::data::{generate_synthetic, EmotionTaxonomy, SyntheticConfig};
use kavan_core::losses::LossWeights;
use kavan_core::model::{KavanParams, ModelConfig};
use kavan_core::train::{prepare_samples, PreparedSample};

/// One prepared sample plus initialized parameters for the given dims.
pub fn training_fixture(
    feat_channels: usize,
    hidden: usize,
) -> (KavanParams, PreparedSample, LossWeights) {
    let config = ModelConfig {
        feat_channels,
        hidden,
        ..ModelConfig::default()
    };
    let taxonomy = EmotionTaxonomy::default();
    let dataset = generate_synthetic(
        1,
        &SyntheticConfig {
            seed: 7,
            ..SyntheticConfig::default()
        },
    )
    .expect("synthetic generation succeeds");
    let mut prepared = prepare_samples(
        &dataset,
        &taxonomy,
        &config,
        kavan_core::data::SampleMode::Center,
        7,
    )
    .expect("preparation succeeds");
    let params = KavanParams::init(config, 7).expect("init succeeds");
    (params, prepared.remove(0), LossWeights::default())
}
