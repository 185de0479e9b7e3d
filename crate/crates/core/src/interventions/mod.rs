//! Layer-wise attention ablation and the partial embedding swap
//! (per-dimension contributions, then cumulative patching).

use std::io::Write;

use thiserror::Error;

use crate::analysis::{detect_intermediate, logit_lens, operator_positions, AnalysisError};
use crate::exprgen::Expression;
use crate::tinylm::{argmax, Model, Scalar, TinyLmError, TokenId};
use crate::tracing::HookSpec;

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("prompt not usable for a swap experiment: {0}")]
    NotSwappable(String),
    #[error("baseline predicts token {predicted}, expected {expected}")]
    BaselineMismatch { predicted: TokenId, expected: TokenId },
    #[error(transparent)]
    Model(#[from] TinyLmError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

const BATCH: usize = 256;

/// Prompts whose greedy answer matches the exact value.
pub fn correct_subset<T: Scalar>(model: &Model<T>, exprs: &[Expression]) -> Result<Vec<Expression>, TinyLmError> {
    let vocab = model.vocab();
    let tokens = exprs.iter().map(|e| vocab.tokenize(&e.text)).collect::<Result<Vec<_>, _>>()?;
    let preds = model.predict_batch(tokens.iter().map(Vec::as_slice), BATCH)?;
    Ok(exprs
        .iter()
        .zip(preds)
        .filter(|(e, p)| vocab.int_id(e.final_value) == Some(*p))
        .map(|(e, _)| e.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `None` for the unablated baseline.
    pub layer: Option<usize>,
    pub accuracy: f64,
    pub detection_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub n_prompts: usize,
    pub baseline: AblationRow,
    pub layers: Vec<AblationRow>,
}

impl AblationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,accuracy,detection_count,n_prompts")?;
        for r in std::iter::once(&self.baseline).chain(&self.layers) {
            let layer = r.layer.map_or_else(|| "baseline".to_string(), |l| l.to_string());
            writeln!(w, "{layer},{},{},{}", r.accuracy, r.detection_count, self.n_prompts)?;
        }
        Ok(())
    }
}

fn ablation_row<T: Scalar>(
    model: &Model<T>,
    exprs: &[Expression],
    tokens: &[Vec<TokenId>],
    layer: Option<usize>,
) -> Result<AblationRow, InterventionError> {
    let hooks: Vec<HookSpec> = layer.into_iter().map(HookSpec::ablate).collect();
    let vocab = model.vocab();
    let mut correct = 0;
    let mut detected = 0;
    for (chunk_e, chunk_t) in exprs.chunks(BATCH).zip(tokens.chunks(BATCH)) {
        let seqs: Vec<&[TokenId]> = chunk_t.iter().map(Vec::as_slice).collect();
        for (e, (cache, logits)) in chunk_e.iter().zip(model.capture_batch(&seqs, &hooks)?) {
            if vocab.int_id(e.final_value) == Some(argmax(&logits)) {
                correct += 1;
            }
            let report = logit_lens(&cache, model)?;
            if detect_intermediate(&report, e).any() {
                detected += 1;
            }
        }
    }
    Ok(AblationRow {
        layer,
        accuracy: if exprs.is_empty() { 0.0 } else { correct as f64 / exprs.len() as f64 },
        detection_count: detected,
    })
}

/// Baseline plus one pass per layer with that layer's attention output
/// zeroed. `prompts` should be the baseline-correct set.
pub fn ablate_attention_sweep<T: Scalar>(
    model: &Model<T>,
    prompts: &[Expression],
) -> Result<AblationReport, InterventionError> {
    let vocab = model.vocab();
    let tokens = prompts.iter().map(|e| vocab.tokenize(&e.text)).collect::<Result<Vec<_>, _>>()?;
    let baseline = ablation_row(model, prompts, &tokens, None)?;
    let layers = (0..model.config.n_layers)
        .map(|l| ablation_row(model, prompts, &tokens, Some(l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationReport {
        n_prompts: prompts.len(),
        baseline,
        layers,
    })
}

/// One prompt prepared for the swap algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapExperiment {
    pub expr: Expression,
    pub tokens: Vec<TokenId>,
    pub pos1: usize,
    pub pos2: usize,
    /// Token of the value under exchanged precedence.
    pub t_target: TokenId,
    /// Token of the value under standard precedence.
    pub t_real: TokenId,
}

impl SwapExperiment {
    pub fn new(expr: &Expression) -> Result<Self, InterventionError> {
        let bad = |m: &str| InterventionError::NotSwappable(format!("{}: {m}", expr.text.trim_end()));
        if expr.variant.is_parenthesized() {
            return Err(bad("parenthesized"));
        }
        let swapped = expr.swapped_final.ok_or_else(|| bad("swapped-precedence value undefined"))?;
        let vocab = crate::tinylm::Vocab;
        let t_target = vocab.int_id(swapped).ok_or_else(|| bad("swapped value has no token"))?;
        let t_real = vocab.int_id(expr.final_value).ok_or_else(|| bad("answer has no token"))?;
        if t_target == t_real {
            return Err(bad("swapped and standard values coincide"));
        }
        let tokens = vocab.tokenize(&expr.text)?;
        let ops = operator_positions(&tokens);
        let [pos1, pos2] = ops[..] else {
            return Err(bad("expected two operators"));
        };
        Ok(Self {
            expr: expr.clone(),
            tokens,
            pos1,
            pos2,
            t_target,
            t_real,
        })
    }

    pub fn hook(&self, dims: Vec<usize>) -> HookSpec {
        HookSpec::swap(self.pos1, self.pos2, dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionRanking {
    /// `(dim, delta logit of t_target)`, descending; ties by lower dim.
    pub entries: Vec<(usize, f64)>,
    pub baseline_target_logit: f64,
    pub topk: usize,
}

impl ContributionRanking {
    pub fn dims(&self, k: usize) -> Vec<usize> {
        self.entries.iter().take(k).map(|&(e, _)| e).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rank,dim,delta_logit")?;
        for (r, (e, c)) in self.entries.iter().enumerate() {
            writeln!(w, "{},{e},{c}", r + 1)?;
        }
        Ok(())
    }
}

/// One single-dimension swap per dimension; `C[e]` is the change of the
/// `t_target` logit at the final position.
pub fn dim_contributions<T: Scalar>(
    model: &Model<T>,
    exp: &SwapExperiment,
    topk: usize,
) -> Result<ContributionRanking, InterventionError> {
    let base = model.forward(&exp.tokens, &[], false)?;
    let base_logits = base.last_logits();
    let predicted = argmax(base_logits);
    if predicted != exp.t_real {
        return Err(InterventionError::BaselineMismatch {
            predicted,
            expected: exp.t_real,
        });
    }
    let base_target = base_logits[exp.t_target as usize].f64();
    let mut entries = Vec::with_capacity(model.config.d_model);
    for e in 0..model.config.d_model {
        let out = model.forward(&exp.tokens, &[exp.hook(vec![e])], false)?;
        entries.push((e, out.last_logits()[exp.t_target as usize].f64() - base_target));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ContributionRanking {
        entries,
        baseline_target_logit: base_target,
        topk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStep {
    pub k: usize,
    pub swapped_logit: f64,
    pub real_logit: f64,
    pub top_logit: f64,
    pub top_token: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchResult {
    pub minimal_k: Option<usize>,
    /// One step per k = 1..=d.
    pub trace: Vec<PatchStep>,
}

impl PatchResult {
    pub fn prediction_at(&self, k: usize) -> Option<TokenId> {
        self.trace.iter().find(|s| s.k == k).map(|s| s.top_token)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,swapped_logit,real_logit,top_logit,top_token")?;
        for s in &self.trace {
            writeln!(w, "{},{},{},{},{}", s.k, s.swapped_logit, s.real_logit, s.top_logit, s.top_token)?;
        }
        Ok(())
    }
}

/// Swaps the top-k ranked dimensions for every k and records the logit
/// triple; `minimal_k` is the first k whose prediction is `t_target`.
pub fn cumulative_patch<T: Scalar>(
    model: &Model<T>,
    exp: &SwapExperiment,
    ranking: &ContributionRanking,
) -> Result<PatchResult, InterventionError> {
    let mut trace = Vec::with_capacity(ranking.entries.len());
    let mut minimal_k = None;
    for k in 1..=ranking.entries.len() {
        let out = model.forward(&exp.tokens, &[exp.hook(ranking.dims(k))], false)?;
        let logits = out.last_logits();
        let top = argmax(logits);
        trace.push(PatchStep {
            k,
            swapped_logit: logits[exp.t_target as usize].f64(),
            real_logit: logits[exp.t_real as usize].f64(),
            top_logit: logits[top as usize].f64(),
            top_token: top,
        });
        if minimal_k.is_none() && top == exp.t_target {
            minimal_k = Some(k);
        }
    }
    Ok(PatchResult { minimal_k, trace })
}
