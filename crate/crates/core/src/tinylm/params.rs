//! Flat parameter storage with a named layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Scalar, TinyLmError, Vocab};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Matrices get weight decay; norm gains and embeddings do not.
    pub decay: bool,
}

/// Entry indices for one transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub mlp_norm: usize,
    pub w1: usize,
    pub w2: usize,
}

impl LayerParams {
    pub fn attention_weights(&self) -> [usize; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }

    pub fn mlp_weights(&self) -> [usize; 2] {
        [self.w1, self.w2]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub embed: usize,
    pub layers: Vec<LayerParams>,
    pub final_norm: usize,
    pub unembed: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, decay: bool| {
            let len = shape.iter().product();
            entries.push(ParamEntry {
                name,
                shape,
                offset,
                len,
                decay,
            });
            offset += len;
            entries.len() - 1
        };
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let embed = push("embed".into(), vec![v, d], false);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerParams {
                attn_norm: push(format!("layers.{l}.attn_norm"), vec![d], false),
                wq: push(format!("layers.{l}.wq"), vec![d, d], true),
                wk: push(format!("layers.{l}.wk"), vec![d, d], true),
                wv: push(format!("layers.{l}.wv"), vec![d, d], true),
                wo: push(format!("layers.{l}.wo"), vec![d, d], true),
                mlp_norm: push(format!("layers.{l}.mlp_norm"), vec![d], false),
                w1: push(format!("layers.{l}.w1"), vec![d, f], true),
                w2: push(format!("layers.{l}.w2"), vec![f, d], true),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d], false);
        let unembed = push("unembed".into(), vec![d, v], true);
        Self {
            entries,
            embed,
            layers,
            final_norm,
            unembed,
            total: offset,
        }
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Name of the entry holding flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| (e.offset..e.offset + e.len).contains(&i))
    }
}

/// Provenance recorded by training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_hash: String,
    pub steps: usize,
    pub heldout_accuracy: Option<f64>,
}

/// A model: configuration, flat parameters and training provenance.
/// Immutable once trained or loaded; share it by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    pub meta: TrainingMeta,
    pub(crate) rope: Rope<T>,
}

/// The production model type.
pub type ModelBundle = Model<f32>;

impl<T: Scalar> Model<T> {
    /// Random initialization seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, TinyLmError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        for entry in &layout.entries {
            let slice = &mut params[entry.offset..entry.offset + entry.len];
            if entry.shape.len() == 1 {
                slice.fill(T::one());
                continue;
            }
            let sigma = if entry.name.ends_with(".wo") || entry.name.ends_with(".w2") {
                resid_std
            } else {
                std
            };
            let normal = Normal::new(0.0, sigma).expect("positive sigma");
            for p in slice.iter_mut() {
                *p = T::cst(normal.sample(&mut rng));
            }
        }
        Ok(Self::from_parts(config, params, TrainingMeta::default()))
    }

    pub fn from_parts(config: ModelConfig, params: Vec<T>, meta: TrainingMeta) -> Self {
        let layout = ParamLayout::new(&config);
        assert_eq!(params.len(), layout.total, "parameter count does not match config");
        let rope = Rope::new(config.max_seq, config.head_dim());
        Self {
            config,
            layout,
            params,
            meta,
            rope,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn entry(&self, idx: usize) -> &[T] {
        let e = &self.layout.entries[idx];
        &self.params[e.offset..e.offset + e.len]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut [T] {
        let e = &self.layout.entries[idx];
        &mut self.params[e.offset..e.offset + e.len]
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|i| self.entry(i))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let i = self.layout.find(name)?;
        Some(self.entry_mut(i))
    }

    /// Converts element type (e.g. f32 → f64 for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let params = self.params.iter().map(|p| U::cst(p.f64())).collect();
        Model::from_parts(self.config.clone(), params, self.meta.clone())
    }
}

/// Rotary cos/sin tables: `[pos][pair]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Rope<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Scalar> Rope<T> {
    pub fn new(max_seq: usize, head_dim: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_seq * half);
        let mut sin = Vec::with_capacity(max_seq * half);
        for pos in 0..max_seq {
            for i in 0..half {
                let theta = 10_000f64.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = pos as f64 * theta;
                cos.push(T::cst(angle.cos()));
                sin.push(T::cst(angle.sin()));
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates interleaved pairs of one head vector in place.
    #[inline]
    pub fn rotate(&self, x: &mut [T], pos: usize) {
        let (c, s) = (&self.cos[pos * self.half..], &self.sin[pos * self.half..]);
        for i in 0..self.half {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            x[2 * i] = a * c[i] - b * s[i];
            x[2 * i + 1] = a * s[i] + b * c[i];
        }
    }

    /// Transpose of [`Rope::rotate`], used in the backward pass.
    #[inline]
    pub fn rotate_back(&self, g: &mut [T], pos: usize) {
        let (c, s) = (&self.cos[pos * self.half..], &self.sin[pos * self.half..]);
        for i in 0..self.half {
            let (a, b) = (g[2 * i], g[2 * i + 1]);
            g[2 * i] = a * c[i] + b * s[i];
            g[2 * i + 1] = -a * s[i] + b * c[i];
        }
    }
}
