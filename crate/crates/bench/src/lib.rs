//! Shared fixtures for the criterion benches in `benches/`.

use preclab_core::exprgen::default_dataset;
use preclab_core::tinylm::{Model, ModelConfig, TokenId};
use preclab_core::Expression;

/// Default-size model with a fixed seed.
pub fn model() -> Model<f32> {
    Model::new(ModelConfig::default()).expect("default config is valid")
}

/// The first `n` dataset prompts, tokenized.
pub fn prompts(n: usize) -> (Vec<Expression>, Vec<Vec<TokenId>>) {
    let data: Vec<Expression> = default_dataset().into_iter().step_by(7).take(n).collect();
    let vocab = preclab_core::Vocab;
    let tokens = data.iter().map(|e| vocab.tokenize(&e.text).expect("dataset prompts tokenize")).collect();
    (data, tokens)
}
