//! Intervention specs and the residual-stream cache.
//!
//! Hooks are declarative: the forward pass in [`crate::tinylm`] reads a
//! `&[HookSpec]` and applies each one at its site. Capture produces a
//! [`ResidualCache`] holding three residual snapshots per layer plus the raw
//! attention and MLP outputs.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::tinylm::{Model, ModelConfig, Scalar, TinyLmError, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HookError {
    #[error("layer {layer} out of range (model has {n_layers})")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("position {pos} out of range (sequence length {seq_len})")]
    PositionOutOfRange { pos: usize, seq_len: usize },
    #[error("swap positions must differ (both {0})")]
    SamePosition(usize),
    #[error("dimension {dim} out of range (d_model {d_model})")]
    DimOutOfRange { dim: usize, d_model: usize },
    #[error("dimension {0} listed twice")]
    DuplicateDim(usize),
}

/// Where a dimension swap is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapSite {
    /// Token embeddings entering block 0.
    #[default]
    BlockInput,
    /// Residual after block 0's attention output has been added.
    Layer0PostAttention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookSpec {
    /// Zero the projected attention output of `layer` before it is added to
    /// the residual stream.
    AblateAttention { layer: usize },
    /// Exchange `dims` between positions `pos1` and `pos2`.
    SwapDims {
        pos1: usize,
        pos2: usize,
        dims: Vec<usize>,
        site: SwapSite,
    },
}

impl HookSpec {
    pub fn ablate(layer: usize) -> Self {
        HookSpec::AblateAttention { layer }
    }

    /// Swap at block-0 input.
    pub fn swap(pos1: usize, pos2: usize, dims: Vec<usize>) -> Self {
        HookSpec::SwapDims {
            pos1,
            pos2,
            dims,
            site: SwapSite::BlockInput,
        }
    }

    pub fn validate(&self, cfg: &ModelConfig, seq_len: usize) -> Result<(), HookError> {
        match self {
            HookSpec::AblateAttention { layer } => {
                if *layer >= cfg.n_layers {
                    return Err(HookError::LayerOutOfRange {
                        layer: *layer,
                        n_layers: cfg.n_layers,
                    });
                }
            }
            HookSpec::SwapDims { pos1, pos2, dims, .. } => {
                for &pos in [pos1, pos2] {
                    if pos >= seq_len {
                        return Err(HookError::PositionOutOfRange { pos, seq_len });
                    }
                }
                if pos1 == pos2 {
                    return Err(HookError::SamePosition(*pos1));
                }
                let mut seen = HashSet::with_capacity(dims.len());
                for &dim in dims {
                    if dim >= cfg.d_model {
                        return Err(HookError::DimOutOfRange {
                            dim,
                            d_model: cfg.d_model,
                        });
                    }
                    if !seen.insert(dim) {
                        return Err(HookError::DuplicateDim(dim));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exchanges `dims` between rows `pos1` and `pos2` of a `[seq, d]` block.
pub(crate) fn swap_rows<T: Copy>(rows: &mut [T], d: usize, pos1: usize, pos2: usize, dims: &[usize]) {
    for &e in dims {
        rows.swap(pos1 * d + e, pos2 * d + e);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CapturePoint {
    BlockInput,
    PostAttention,
    PostMlp,
}

impl CapturePoint {
    pub const ALL: [CapturePoint; 3] = [CapturePoint::BlockInput, CapturePoint::PostAttention, CapturePoint::PostMlp];

    pub fn name(self) -> &'static str {
        match self {
            CapturePoint::BlockInput => "block_input",
            CapturePoint::PostAttention => "post_attention",
            CapturePoint::PostMlp => "post_mlp",
        }
    }
}

impl fmt::Display for CapturePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Activations of one forward pass, laid out `[layer][position][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCache<T: Scalar = f32> {
    pub n_layers: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub tokens: Vec<TokenId>,
    pub(crate) block_input: Vec<T>,
    pub(crate) post_attention: Vec<T>,
    pub(crate) post_mlp: Vec<T>,
    pub(crate) attn_out: Vec<T>,
    pub(crate) mlp_out: Vec<T>,
}

impl<T: Scalar> ResidualCache<T> {
    /// All-zero cache; callers fill it with [`ResidualCache::set`].
    pub fn zeroed(n_layers: usize, seq_len: usize, d_model: usize, tokens: Vec<TokenId>) -> Self {
        let n = n_layers * seq_len * d_model;
        Self {
            n_layers,
            seq_len,
            d_model,
            tokens,
            block_input: vec![T::zero(); n],
            post_attention: vec![T::zero(); n],
            post_mlp: vec![T::zero(); n],
            attn_out: vec![T::zero(); n],
            mlp_out: vec![T::zero(); n],
        }
    }

    fn index(&self, layer: usize, pos: usize) -> usize {
        assert!(layer < self.n_layers && pos < self.seq_len, "cache index out of range");
        (layer * self.seq_len + pos) * self.d_model
    }

    fn store(&self, point: CapturePoint) -> &Vec<T> {
        match point {
            CapturePoint::BlockInput => &self.block_input,
            CapturePoint::PostAttention => &self.post_attention,
            CapturePoint::PostMlp => &self.post_mlp,
        }
    }

    pub fn get(&self, layer: usize, point: CapturePoint, pos: usize) -> &[T] {
        let i = self.index(layer, pos);
        &self.store(point)[i..i + self.d_model]
    }

    /// All positions of one layer/point as a `[seq, d]` block.
    pub fn layer_block(&self, layer: usize, point: CapturePoint) -> &[T] {
        let i = self.index(layer, 0);
        &self.store(point)[i..i + self.seq_len * self.d_model]
    }

    pub fn set(&mut self, layer: usize, point: CapturePoint, pos: usize, v: &[T]) {
        assert_eq!(v.len(), self.d_model, "vector width");
        let i = self.index(layer, pos);
        let store = match point {
            CapturePoint::BlockInput => &mut self.block_input,
            CapturePoint::PostAttention => &mut self.post_attention,
            CapturePoint::PostMlp => &mut self.post_mlp,
        };
        store[i..i + v.len()].copy_from_slice(v);
    }

    /// Sets the raw attention and MLP outputs of one layer/position.
    pub fn set_components(&mut self, layer: usize, pos: usize, attn: &[T], mlp: &[T]) {
        assert!(attn.len() == self.d_model && mlp.len() == self.d_model, "vector width");
        let i = self.index(layer, pos);
        self.attn_out[i..i + self.d_model].copy_from_slice(attn);
        self.mlp_out[i..i + self.d_model].copy_from_slice(mlp);
    }

    pub fn attn_output(&self, layer: usize, pos: usize) -> &[T] {
        let i = self.index(layer, pos);
        &self.attn_out[i..i + self.d_model]
    }

    pub fn mlp_output(&self, layer: usize, pos: usize) -> &[T] {
        let i = self.index(layer, pos);
        &self.mlp_out[i..i + self.d_model]
    }

    pub fn len_scalars(&self) -> usize {
        self.block_input.len() + self.post_attention.len() + self.post_mlp.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.block_input, &self.post_attention, &self.post_mlp, &self.attn_out, &self.mlp_out]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Comma-separated dump: `layer,point,position,v0,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "layer,point,position")?;
        for i in 0..self.d_model {
            write!(w, ",v{i}")?;
        }
        writeln!(w)?;
        for layer in 0..self.n_layers {
            for point in CapturePoint::ALL {
                for pos in 0..self.seq_len {
                    write!(w, "{layer},{point},{pos}")?;
                    for x in self.get(layer, point, pos) {
                        write!(w, ",{}", x.f64())?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

/// One capturing forward pass over a canonical prompt.
pub fn capture<T: Scalar>(model: &Model<T>, prompt: &str) -> Result<ResidualCache<T>, TinyLmError> {
    let tokens = model.vocab().tokenize(prompt)?;
    let out = model.forward(&tokens, &[], true)?;
    Ok(out.cache.expect("capture requested"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_hooks() {
        let cfg = ModelConfig::small();
        assert!(HookSpec::ablate(1).validate(&cfg, 7).is_ok());
        assert_eq!(
            HookSpec::ablate(2).validate(&cfg, 7),
            Err(HookError::LayerOutOfRange { layer: 2, n_layers: 2 })
        );
        assert_eq!(HookSpec::swap(2, 2, vec![]).validate(&cfg, 7), Err(HookError::SamePosition(2)));
        assert_eq!(
            HookSpec::swap(2, 7, vec![]).validate(&cfg, 7),
            Err(HookError::PositionOutOfRange { pos: 7, seq_len: 7 })
        );
        assert_eq!(
            HookSpec::swap(2, 4, vec![16]).validate(&cfg, 7),
            Err(HookError::DimOutOfRange { dim: 16, d_model: 16 })
        );
        assert_eq!(HookSpec::swap(2, 4, vec![3, 3]).validate(&cfg, 7), Err(HookError::DuplicateDim(3)));
    }

    #[test]
    fn swap_rows_exchanges_listed_dims_only() {
        let mut rows = vec![0, 1, 2, 10, 11, 12];
        swap_rows(&mut rows, 3, 0, 1, &[0, 2]);
        assert_eq!(rows, vec![10, 1, 12, 0, 11, 2]);
    }
}
