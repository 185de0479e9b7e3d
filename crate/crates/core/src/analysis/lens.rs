//! Logit lens over cached residual states, intermediate-value detection and
//! attention-vs-MLP attribution.

use std::fmt;
use std::io::Write;

use crate::exprgen::Expression;
use crate::tinylm::{top_k, Model, Scalar, TokenId};
use crate::tracing::{CapturePoint, ResidualCache};

use super::AnalysisError;

pub const LENS_TOPK: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LensEntry {
    pub layer: usize,
    pub point: CapturePoint,
    /// Descending by logit; ties broken by lower token id.
    pub top: Vec<(TokenId, f64)>,
}

impl LensEntry {
    pub fn rank_of(&self, token: TokenId) -> Option<usize> {
        self.top.iter().position(|&(t, _)| t == token)
    }

    pub fn top1(&self) -> Option<TokenId> {
        self.top.first().map(|&(t, _)| t)
    }
}

/// Which residual addition produced a lens event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Attention,
    Mlp,
    Neither,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Attention => "attention",
            Component::Mlp => "mlp",
            Component::Neither => "neither",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensReport {
    /// Final prompt position that was read.
    pub position: usize,
    pub entries: Vec<LensEntry>,
    pub first_layer_top1: Option<usize>,
    pub attribution: Option<Component>,
}

impl LensReport {
    pub fn entry(&self, layer: usize, point: CapturePoint) -> Option<&LensEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.point == point)
    }

    pub fn n_layers(&self) -> usize {
        self.entries.iter().map(|e| e.layer + 1).max().unwrap_or(0)
    }

    /// `layer,point,rank,token,logit` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,point,rank,token,logit")?;
        for e in &self.entries {
            for (rank, (tok, logit)) in e.top.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", e.layer, e.point, rank + 1, tok, logit)?;
            }
        }
        Ok(())
    }
}

/// Projects the final-position residual at every layer and capture point
/// through the final norm and unembedding.
pub fn logit_lens<T: Scalar>(cache: &ResidualCache<T>, model: &Model<T>) -> Result<LensReport, AnalysisError> {
    logit_lens_k(cache, model, LENS_TOPK)
}

pub fn logit_lens_k<T: Scalar>(cache: &ResidualCache<T>, model: &Model<T>, k: usize) -> Result<LensReport, AnalysisError> {
    if cache.d_model != model.config.d_model || cache.n_layers != model.config.n_layers {
        return Err(AnalysisError::DimensionMismatch(format!(
            "cache is {} layers x d{}, model is {} layers x d{}",
            cache.n_layers, cache.d_model, model.config.n_layers, model.config.d_model
        )));
    }
    if cache.seq_len == 0 {
        return Err(AnalysisError::DimensionMismatch("empty cache".into()));
    }
    let position = cache.seq_len - 1;
    let mut entries = Vec::with_capacity(cache.n_layers * 3);
    for layer in 0..cache.n_layers {
        for point in CapturePoint::ALL {
            let logits = model.project_residual(cache.get(layer, point, position));
            entries.push(LensEntry {
                layer,
                point,
                top: top_k(&logits, k).into_iter().map(|(t, v)| (t, v.f64())).collect(),
            });
        }
    }
    Ok(LensReport {
        position,
        entries,
        first_layer_top1: None,
        attribution: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    /// Intermediate token: `None` when it has no vocabulary entry.
    pub token: Option<TokenId>,
    /// Per layer: intermediate in the post-MLP top-k.
    pub in_topk: Vec<bool>,
    /// Per layer: intermediate ranked first at post-MLP.
    pub is_top1: Vec<bool>,
    pub first_layer_top1: Option<usize>,
    /// Intermediate equals final answer; detection is ambiguous.
    pub degenerate: bool,
}

impl Detection {
    pub fn any(&self) -> bool {
        self.in_topk.iter().any(|&b| b)
    }
}

/// Looks for `expr`'s intermediate value in the post-MLP lens of each layer.
pub fn detect_intermediate(report: &LensReport, expr: &Expression) -> Detection {
    let n = report.n_layers();
    let token = u32::try_from(expr.intermediate)
        .ok()
        .filter(|&v| v <= crate::tinylm::MAX_INT);
    let mut in_topk = vec![false; n];
    let mut is_top1 = vec![false; n];
    if let Some(t) = token {
        for layer in 0..n {
            if let Some(e) = report.entry(layer, CapturePoint::PostMlp) {
                in_topk[layer] = e.rank_of(t).is_some();
                is_top1[layer] = e.top1() == Some(t);
            }
        }
    }
    Detection {
        token,
        first_layer_top1: is_top1.iter().position(|&b| b),
        in_topk,
        is_top1,
        degenerate: expr.is_degenerate(),
    }
}

/// Fills `first_layer_top1` on the report from a detection.
pub fn annotate(report: &mut LensReport, det: &Detection) {
    report.first_layer_top1 = det.first_layer_top1;
}

/// Replays `layer` at the final position as three partial sums and reports
/// which addition first puts `token` at rank 1.
pub fn attribute_component<T: Scalar>(
    model: &Model<T>,
    cache: &ResidualCache<T>,
    layer: usize,
    token: TokenId,
) -> Result<Component, AnalysisError> {
    if layer >= cache.n_layers {
        return Err(AnalysisError::Precondition(format!("layer {layer} out of range")));
    }
    let pos = cache.seq_len - 1;
    let top1 = |v: &[T]| crate::tinylm::argmax(&model.project_residual(v)) == token;
    let base = cache.get(layer, CapturePoint::BlockInput, pos).to_vec();
    let with_attn: Vec<T> = base.iter().zip(cache.attn_output(layer, pos)).map(|(&a, &b)| a + b).collect();
    let with_mlp: Vec<T> = with_attn.iter().zip(cache.mlp_output(layer, pos)).map(|(&a, &b)| a + b).collect();
    Ok(if top1(&base) {
        Component::Neither
    } else if top1(&with_attn) {
        Component::Attention
    } else if top1(&with_mlp) {
        Component::Mlp
    } else {
        return Err(AnalysisError::Precondition(format!(
            "token {token} is not rank 1 after layer {layer}"
        )));
    })
}

/// Lens, detection and (when detected) attribution for one prompt.
pub fn analyze_prompt<T: Scalar>(
    model: &Model<T>,
    cache: &ResidualCache<T>,
    expr: &Expression,
) -> Result<(LensReport, Detection), AnalysisError> {
    let mut report = logit_lens(cache, model)?;
    let det = detect_intermediate(&report, expr);
    annotate(&mut report, &det);
    if let (Some(layer), Some(tok)) = (det.first_layer_top1, det.token) {
        report.attribution = Some(attribute_component(model, cache, layer, tok)?);
    }
    Ok((report, det))
}
