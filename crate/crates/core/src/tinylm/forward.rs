//! Batched forward pass with hook application and activation taping.
//!
//! A batch is `B` sequences right-padded to a common length `S`; rows are
//! laid out `[b * S + t]`. Causal masking means padding never influences
//! earlier positions. Inference and training share [`Model::run`], so the
//! logits seen by analysis code are the ones the model was trained on.

use crate::tracing::{swap_rows, HookSpec, ResidualCache, SwapSite};

use super::scalar::{matmul, Scalar};
use super::{Model, TinyLmError, TokenId, Vocab};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Per-block activations kept for backward and capture.
#[derive(Debug, Clone)]
pub(crate) struct LayerTape<T> {
    pub x_in: Vec<T>,
    pub h: Vec<T>,
    pub inv1: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `[b][head][i][j]`, zero above the diagonal.
    pub probs: Vec<T>,
    pub ctx: Vec<T>,
    pub attn_out: Vec<T>,
    pub x_mid: Vec<T>,
    pub h2: Vec<T>,
    pub inv2: Vec<T>,
    pub u: Vec<T>,
    pub th: Vec<T>,
    pub act: Vec<T>,
    pub mlp_out: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    pub batch: usize,
    pub seq: usize,
    pub layers: Vec<LayerTape<T>>,
    pub x_final: Vec<T>,
    pub hf: Vec<T>,
    pub inv_f: Vec<T>,
    pub logits: Vec<T>,
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T: Scalar = f32> {
    pub seq_len: usize,
    pub vocab_size: usize,
    /// `[seq_len, vocab]`, row-major.
    pub logits: Vec<T>,
    pub cache: Option<ResidualCache<T>>,
}

impl<T: Scalar> ForwardResult<T> {
    pub fn logits_at(&self, pos: usize) -> &[T] {
        &self.logits[pos * self.vocab_size..(pos + 1) * self.vocab_size]
    }

    pub fn last_logits(&self) -> &[T] {
        self.logits_at(self.seq_len - 1)
    }
}

/// `y = g ⊙ x / rms(x)` row-wise; returns the inverse rms per row.
pub(crate) fn rmsnorm_rows<T: Scalar>(x: &[T], gain: &[T], y: &mut [T], inv: &mut [T]) {
    let d = gain.len();
    let eps = T::cst(NORM_EPS);
    let dn = T::cst(d as f64);
    for ((xr, yr), r) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(inv.iter_mut()) {
        let ms = xr.iter().fold(T::zero(), |acc, &v| acc + v * v) / dn;
        let ir = T::one() / (ms + eps).sqrt();
        *r = ir;
        for ((o, &v), &g) in yr.iter_mut().zip(xr).zip(gain) {
            *o = g * (v * ir);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; several times cheaper than the libm call.
#[inline]
fn tanh_exp<T: Scalar>(x: T) -> T {
    T::one() - T::cst(2.0) / ((x + x).exp() + T::one())
}

/// GELU (tanh form). Returns the activation and the tanh value, which the
/// backward pass reuses.
#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> (T, T) {
    let inner = T::cst(GELU_C) * (x + T::cst(GELU_A) * x * x * x);
    let t = tanh_exp(inner);
    (T::cst(0.5) * x * (T::one() + t), t)
}

/// Derivative of [`gelu`] at `x`, given its tanh value `t`.
#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T, t: T) -> T {
    let c = T::cst(GELU_C);
    let a = T::cst(GELU_A);
    let half = T::cst(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::cst(3.0) * a * x * x)
}

impl<T: Scalar> Model<T> {
    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), TinyLmError> {
        if tokens.is_empty() {
            return Err(TinyLmError::EmptySequence);
        }
        if tokens.len() > self.config.max_seq {
            return Err(TinyLmError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(TinyLmError::UnknownLexeme(format!("id {bad}")));
        }
        Ok(())
    }

    /// Embeds a padded `[batch * seq]` token block.
    pub(crate) fn embed(&self, tokens: &[TokenId]) -> Vec<T> {
        let d = self.config.d_model;
        let table = self.entry(self.layout.embed);
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            x.extend_from_slice(&table[t as usize * d..(t as usize + 1) * d]);
        }
        x
    }

    /// Runs layers `start..` on residual `x` (`[batch * seq, d]`).
    pub(crate) fn run_layers(&self, mut x: Vec<T>, batch: usize, seq: usize, start: usize, hooks: &[HookSpec]) -> Trace<T> {
        let cfg = &self.config;
        let (d, f, nh, hd) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.head_dim());
        let n = batch * seq;
        let scale = T::cst(1.0 / (hd as f64).sqrt());
        let mut layers = Vec::with_capacity(cfg.n_layers - start);

        for l in start..cfg.n_layers {
            let lp = self.layout.layers[l];
            let x_in = x.clone();

            let mut h = vec![T::zero(); n * d];
            let mut inv1 = vec![T::zero(); n];
            rmsnorm_rows(&x_in, self.entry(lp.attn_norm), &mut h, &mut inv1);

            let mut q = vec![T::zero(); n * d];
            let mut k = vec![T::zero(); n * d];
            let mut v = vec![T::zero(); n * d];
            matmul(&h, self.entry(lp.wq), &mut q, n, d, d, false);
            matmul(&h, self.entry(lp.wk), &mut k, n, d, d, false);
            matmul(&h, self.entry(lp.wv), &mut v, n, d, d, false);
            for row in 0..n {
                let pos = row % seq;
                for head in 0..nh {
                    let o = row * d + head * hd;
                    self.rope.rotate(&mut q[o..o + hd], pos);
                    self.rope.rotate(&mut k[o..o + hd], pos);
                }
            }

            let mut probs = vec![T::zero(); batch * nh * seq * seq];
            let mut ctx = vec![T::zero(); n * d];
            let mut scores = vec![T::zero(); seq];
            for b in 0..batch {
                for head in 0..nh {
                    let pbase = (b * nh + head) * seq * seq;
                    for i in 0..seq {
                        let qi = &q[(b * seq + i) * d + head * hd..][..hd];
                        let mut max = T::neg_infinity();
                        for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                            let kj = &k[(b * seq + j) * d + head * hd..][..hd];
                            let dot = qi.iter().zip(kj).fold(T::zero(), |acc, (&a, &c)| acc + a * c) * scale;
                            *s = dot;
                            max = max.max(dot);
                        }
                        let mut sum = T::zero();
                        for s in scores.iter_mut().take(i + 1) {
                            *s = (*s - max).exp();
                            sum = sum + *s;
                        }
                        let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                        let out = &mut ctx[(b * seq + i) * d + head * hd..][..hd];
                        for j in 0..=i {
                            let p = scores[j] / sum;
                            prow[j] = p;
                            let vj = &v[(b * seq + j) * d + head * hd..][..hd];
                            for (o, &vv) in out.iter_mut().zip(vj) {
                                *o = *o + p * vv;
                            }
                        }
                    }
                }
            }

            let mut attn_out = vec![T::zero(); n * d];
            matmul(&ctx, self.entry(lp.wo), &mut attn_out, n, d, d, false);
            if hooks.iter().any(|hk| matches!(hk, HookSpec::AblateAttention { layer } if *layer == l)) {
                attn_out.fill(T::zero());
            }
            for (xv, &a) in x.iter_mut().zip(&attn_out) {
                *xv = *xv + a;
            }
            if l == 0 {
                apply_swaps(&mut x, batch, seq, d, hooks, SwapSite::Layer0PostAttention);
            }
            let x_mid = x.clone();

            let mut h2 = vec![T::zero(); n * d];
            let mut inv2 = vec![T::zero(); n];
            rmsnorm_rows(&x_mid, self.entry(lp.mlp_norm), &mut h2, &mut inv2);
            let mut u = vec![T::zero(); n * f];
            matmul(&h2, self.entry(lp.w1), &mut u, n, d, f, false);
            let mut act = vec![T::zero(); n * f];
            let mut th = vec![T::zero(); n * f];
            for ((a, t), &z) in act.iter_mut().zip(th.iter_mut()).zip(&u) {
                (*a, *t) = gelu(z);
            }
            let mut mlp_out = vec![T::zero(); n * d];
            matmul(&act, self.entry(lp.w2), &mut mlp_out, n, f, d, false);
            for (xv, &m) in x.iter_mut().zip(&mlp_out) {
                *xv = *xv + m;
            }

            layers.push(LayerTape {
                x_in,
                h,
                inv1,
                q,
                k,
                v,
                probs,
                ctx,
                attn_out,
                x_mid,
                h2,
                inv2,
                u,
                th,
                act,
                mlp_out,
            });
        }

        let (hf, inv_f, logits) = self.unembed_rows(&x);
        Trace {
            batch,
            seq,
            layers,
            x_final: x,
            hf,
            inv_f,
            logits,
        }
    }

    /// Final normalization then unembedding of residual rows `[n, d]`.
    /// Returns `(normed, inverse rms, logits)`.
    pub(crate) fn unembed_rows(&self, x: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (d, vs) = (self.config.d_model, self.config.vocab_size);
        let n = x.len() / d;
        let mut hf = vec![T::zero(); n * d];
        let mut inv = vec![T::zero(); n];
        rmsnorm_rows(x, self.entry(self.layout.final_norm), &mut hf, &mut inv);
        let mut logits = vec![T::zero(); n * vs];
        let w = self.entry(self.layout.unembed);
        // plain per-row loop: a lone residual vector projects bit-identically
        // to the same vector inside a batch
        for (hr, lr) in hf.chunks_exact(d).zip(logits.chunks_exact_mut(vs)) {
            for (&h, wr) in hr.iter().zip(w.chunks_exact(vs)) {
                for (l, &wv) in lr.iter_mut().zip(wr) {
                    *l = *l + h * wv;
                }
            }
        }
        (hf, inv, logits)
    }

    /// Vocabulary logits of a single residual vector (the logit lens).
    pub fn project_residual(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.config.d_model, "residual width");
        self.unembed_rows(x).2
    }

    /// Pads and runs a batch of sequences. Every hook applies to every
    /// sequence.
    pub(crate) fn run(&self, seqs: &[&[TokenId]], hooks: &[HookSpec]) -> Result<Trace<T>, TinyLmError> {
        let seq = seqs.iter().map(|s| s.len()).max().ok_or(TinyLmError::EmptySequence)?;
        for s in seqs {
            self.check_tokens(s)?;
            for hk in hooks {
                hk.validate(&self.config, s.len())?;
            }
        }
        let mut tokens = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            tokens.extend_from_slice(s);
            tokens.extend(std::iter::repeat(Vocab::PAD).take(seq - s.len()));
        }
        let mut x = self.embed(&tokens);
        apply_swaps(&mut x, seqs.len(), seq, self.config.d_model, hooks, SwapSite::BlockInput);
        Ok(self.run_layers(x, seqs.len(), seq, 0, hooks))
    }

    /// Forward pass over one token sequence.
    pub fn forward(&self, tokens: &[TokenId], hooks: &[HookSpec], capture: bool) -> Result<ForwardResult<T>, TinyLmError> {
        let trace = self.run(&[tokens], hooks)?;
        Ok(self.finish(trace, tokens, capture))
    }

    /// Resumes a forward pass from the block input of `start_layer`.
    /// `residual` is `[tokens.len(), d_model]`. Block-input swap hooks are
    /// not applied (they act on embeddings, which are upstream).
    pub fn forward_from(
        &self,
        start_layer: usize,
        residual: &[T],
        tokens: &[TokenId],
        hooks: &[HookSpec],
        capture: bool,
    ) -> Result<ForwardResult<T>, TinyLmError> {
        self.check_tokens(tokens)?;
        if start_layer >= self.config.n_layers {
            return Err(crate::tracing::HookError::LayerOutOfRange {
                layer: start_layer,
                n_layers: self.config.n_layers,
            }
            .into());
        }
        assert_eq!(residual.len(), tokens.len() * self.config.d_model, "residual shape");
        for hk in hooks {
            hk.validate(&self.config, tokens.len())?;
        }
        let trace = self.run_layers(residual.to_vec(), 1, tokens.len(), start_layer, hooks);
        // layers before start_layer are not recomputed and stay zero
        let cache = capture.then(|| self.cache_from(&trace, tokens, start_layer));
        let mut out = self.finish(trace, tokens, false);
        out.cache = cache;
        Ok(out)
    }

    fn finish(&self, trace: Trace<T>, tokens: &[TokenId], capture: bool) -> ForwardResult<T> {
        let vs = self.config.vocab_size;
        let cache = capture.then(|| self.cache_from(&trace, tokens, 0));
        let seq_len = tokens.len();
        let mut logits = trace.logits;
        logits.truncate(seq_len * vs);
        ForwardResult {
            seq_len,
            vocab_size: vs,
            logits,
            cache,
        }
    }

    fn cache_from(&self, trace: &Trace<T>, tokens: &[TokenId], start_layer: usize) -> ResidualCache<T> {
        self.cache_of(trace, 0, tokens, start_layer)
    }

    /// Cache of sequence `b` within a padded batch trace.
    fn cache_of(&self, trace: &Trace<T>, b: usize, tokens: &[TokenId], start_layer: usize) -> ResidualCache<T> {
        let d = self.config.d_model;
        let s = tokens.len();
        let src = b * trace.seq * d..(b * trace.seq + s) * d;
        let mut cache = ResidualCache::zeroed(self.config.n_layers, s, d, tokens.to_vec());
        for (i, tape) in trace.layers.iter().enumerate() {
            let l = start_layer + i;
            let dst = l * s * d..(l + 1) * s * d;
            cache.block_input[dst.clone()].copy_from_slice(&tape.x_in[src.clone()]);
            cache.post_attention[dst.clone()].copy_from_slice(&tape.x_mid[src.clone()]);
            cache.attn_out[dst.clone()].copy_from_slice(&tape.attn_out[src.clone()]);
            cache.mlp_out[dst.clone()].copy_from_slice(&tape.mlp_out[src.clone()]);
            let post: Vec<T> = tape.x_mid[src.clone()].iter().zip(&tape.mlp_out[src.clone()]).map(|(&a, &m)| a + m).collect();
            cache.post_mlp[dst].copy_from_slice(&post);
        }
        cache
    }

    /// Batched capture: one cache per sequence plus its final-position
    /// logits. Padding never leaks into a sequence's cache (attention is
    /// causal and padding is appended).
    pub fn capture_batch(
        &self,
        seqs: &[&[TokenId]],
        hooks: &[HookSpec],
    ) -> Result<Vec<(ResidualCache<T>, Vec<T>)>, TinyLmError> {
        let trace = self.run(seqs, hooks)?;
        let vs = self.config.vocab_size;
        Ok(seqs
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let row = b * trace.seq + s.len() - 1;
                (self.cache_of(&trace, b, s, 0), trace.logits[row * vs..(row + 1) * vs].to_vec())
            })
            .collect())
    }

    /// Final-position logits for each sequence, batched.
    pub fn last_logits_batch(&self, seqs: &[&[TokenId]], hooks: &[HookSpec]) -> Result<Vec<Vec<T>>, TinyLmError> {
        let trace = self.run(seqs, hooks)?;
        let vs = self.config.vocab_size;
        Ok(seqs
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let row = b * trace.seq + s.len() - 1;
                trace.logits[row * vs..(row + 1) * vs].to_vec()
            })
            .collect())
    }

    /// Argmax of the final-position logits; ties go to the lowest id.
    pub fn predict_answer(&self, prompt: &str) -> Result<TokenId, TinyLmError> {
        let tokens = self.vocab().tokenize(prompt)?;
        let out = self.forward(&tokens, &[], false)?;
        Ok(argmax(out.last_logits()))
    }
}

fn apply_swaps<T: Copy>(x: &mut [T], batch: usize, seq: usize, d: usize, hooks: &[HookSpec], at: SwapSite) {
    for hk in hooks {
        if let HookSpec::SwapDims { pos1, pos2, dims, site } = hk {
            if *site == at {
                for b in 0..batch {
                    swap_rows(&mut x[b * seq * d..(b + 1) * seq * d], d, *pos1, *pos2, dims);
                }
            }
        }
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax<T: Scalar>(xs: &[T]) -> TokenId {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Indices of the `k` largest values, descending, ties by lower index.
pub fn top_k<T: Scalar>(xs: &[T], k: usize) -> Vec<(TokenId, T)> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i as TokenId, xs[i])).collect()
}
