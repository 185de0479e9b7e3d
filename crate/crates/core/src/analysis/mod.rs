//! Reading a trained model: logit lens, intermediate detection,
//! component attribution, and probes on frozen activations.

mod lens;
mod probe;

use thiserror::Error;

pub use lens::{
    analyze_prompt, annotate, attribute_component, detect_intermediate, logit_lens, logit_lens_k, Component,
    Detection, LensEntry, LensReport, LENS_TOPK,
};
pub use probe::{
    fit_linear_probe, fit_logistic_probe, write_probe_csv, PositionSelector, ProbeConfig, ProbeKind, ProbeReport,
    ProbeSite, MIN_PROBE_SAMPLES,
};

use crate::exprgen::Expression;
use crate::tinylm::{Model, Scalar, TinyLmError, TokenId};
use crate::tracing::CapturePoint;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{n} samples, need at least {min}")]
    TooFewSamples { n: usize, min: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("target is constant on the held-out split")]
    ConstantTarget,
    #[error("non-finite activation")]
    NonFinite,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] TinyLmError),
}

/// Token positions of the two operators in a tokenized prompt.
pub fn operator_positions(tokens: &[TokenId]) -> Vec<usize> {
    let vocab = crate::tinylm::Vocab;
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| vocab.is_operator(t))
        .map(|(i, _)| i)
        .collect()
}

/// Activations of every prompt at one site. Returns one row per selected
/// position and the index of the source expression for each row.
pub fn collect_activations<T: Scalar>(
    model: &Model<T>,
    exprs: &[Expression],
    layer: usize,
    point: CapturePoint,
    position: PositionSelector,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), AnalysisError> {
    if layer >= model.config.n_layers {
        return Err(AnalysisError::Precondition(format!("layer {layer} out of range")));
    }
    let vocab = model.vocab();
    let tokens = exprs
        .iter()
        .map(|e| vocab.tokenize(&e.text))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut owner = Vec::new();
    for (chunk_i, chunk) in tokens.chunks(256).enumerate() {
        let seqs: Vec<&[TokenId]> = chunk.iter().map(Vec::as_slice).collect();
        for (j, (cache, _)) in model.capture_batch(&seqs, &[])?.into_iter().enumerate() {
            let positions = match position {
                PositionSelector::Final => vec![cache.seq_len - 1],
                PositionSelector::Operators => operator_positions(&cache.tokens),
                PositionSelector::At(p) if p < cache.seq_len => vec![p],
                PositionSelector::At(p) => {
                    return Err(AnalysisError::Precondition(format!("position {p} beyond prompt length")))
                }
            };
            for p in positions {
                rows.push(cache.get(layer, point, p).iter().map(|v| v.f64()).collect());
                owner.push(chunk_i * 256 + j);
            }
        }
    }
    Ok((rows, owner))
}

/// Operator-position activations with their precedence-rank labels
/// (`true` = evaluated second) and surface labels (`1m2`...).
pub fn operator_dataset<T: Scalar>(
    model: &Model<T>,
    exprs: &[Expression],
    layer: usize,
    point: CapturePoint,
) -> Result<(Vec<Vec<f64>>, Vec<bool>, Vec<String>, Vec<usize>), AnalysisError> {
    let (rows, owner) = collect_activations(model, exprs, layer, point, PositionSelector::Operators)?;
    let mut second = Vec::with_capacity(rows.len());
    let mut surface = Vec::with_capacity(rows.len());
    // rows come in pairs per prompt, in textual order
    for (i, &o) in owner.iter().enumerate() {
        let first_of_pair = i == 0 || owner[i - 1] != o;
        let nth = if first_of_pair { 1 } else { 2 };
        let label = *exprs[o]
            .labels
            .iter()
            .find(|l| l.position == nth)
            .expect("two operator labels");
        second.push(label.evaluated_second());
        surface.push(label.surface());
    }
    Ok((rows, second, surface, owner))
}
