//! Hand-written reverse pass for the next-token loss.

use super::forward::{gelu_grad, Trace};
use super::scalar::{matmul_nt, matmul_tn, Scalar};
use super::{Model, TinyLmError, TokenId, Vocab};

/// Next-token targets for a padded batch: row `b * S + t` predicts token
/// `t + 1` of sequence `b`; padding and the last position have no target.
pub(crate) fn targets(seqs: &[&[TokenId]], seq: usize) -> Vec<Option<TokenId>> {
    let mut out = Vec::with_capacity(seqs.len() * seq);
    for s in seqs {
        for t in 0..seq {
            out.push(s.get(t + 1).copied().filter(|&id| t + 1 < s.len() && id != Vocab::PAD));
        }
    }
    out
}

/// Mean cross-entropy and its gradient w.r.t. logits.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], targets: &[Option<TokenId>], vocab: usize) -> (T, Vec<T>) {
    let count = targets.iter().filter(|t| t.is_some()).count().max(1);
    let inv_count = T::one() / T::cst(count as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for ((row, g), target) in logits.chunks_exact(vocab).zip(grad.chunks_exact_mut(vocab)).zip(targets) {
        let Some(t) = *target else { continue };
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut sum = T::zero();
        for (gi, &x) in g.iter_mut().zip(row) {
            let e = (x - max).exp();
            *gi = e;
            sum = sum + e;
        }
        loss = loss + (sum.ln() + max - row[t as usize]);
        for gi in g.iter_mut() {
            *gi = *gi / sum * inv_count;
        }
        g[t as usize] = g[t as usize] - inv_count;
    }
    (loss * inv_count, grad)
}

/// Accumulates the RMSNorm backward into `dx` and `dgain`.
fn rmsnorm_back<T: Scalar>(dy: &[T], x: &[T], inv: &[T], gain: &[T], dx: &mut [T], dgain: &mut [T]) {
    let d = gain.len();
    let dn = T::cst(d as f64);
    for (((dyr, xr), &r), dxr) in dy.chunks_exact(d).zip(x.chunks_exact(d)).zip(inv).zip(dx.chunks_exact_mut(d)) {
        let mut dot = T::zero();
        for i in 0..d {
            dot = dot + gain[i] * dyr[i] * xr[i];
            dgain[i] = dgain[i] + dyr[i] * xr[i] * r;
        }
        let coef = dot * r * r * r / dn;
        for i in 0..d {
            dxr[i] = dxr[i] + r * gain[i] * dyr[i] - xr[i] * coef;
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Loss and flat gradient for a batch of full training sequences.
    pub fn loss_and_grad(&self, seqs: &[&[TokenId]]) -> Result<(T, Vec<T>), TinyLmError> {
        let trace = self.run(seqs, &[])?;
        let tg = targets(seqs, trace.seq);
        let (loss, dlogits) = cross_entropy(&trace.logits, &tg, self.config.vocab_size);
        let mut grad = vec![T::zero(); self.params.len()];
        self.backward(&trace, seqs, &dlogits, &mut grad);
        Ok((loss, grad))
    }

    /// Loss only; used by finite-difference checks.
    pub fn loss(&self, seqs: &[&[TokenId]]) -> Result<T, TinyLmError> {
        let trace = self.run(seqs, &[])?;
        let tg = targets(seqs, trace.seq);
        Ok(cross_entropy(&trace.logits, &tg, self.config.vocab_size).0)
    }

    pub(crate) fn backward(&self, trace: &Trace<T>, seqs: &[&[TokenId]], dlogits: &[T], grad: &mut [T]) {
        let cfg = &self.config;
        let (d, f, nh, hd, vs) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
        let (batch, seq) = (trace.batch, trace.seq);
        let n = batch * seq;
        let scale = T::cst(1.0 / (hd as f64).sqrt());
        let layout = &self.layout;
        let span = |idx: usize| {
            let e = &layout.entries[idx];
            e.offset..e.offset + e.len
        };

        // unembedding and final norm
        matmul_tn(&trace.hf, dlogits, &mut grad[span(layout.unembed)], n, d, vs, true);
        let mut dhf = vec![T::zero(); n * d];
        matmul_nt(dlogits, self.entry(layout.unembed), &mut dhf, n, vs, d, false);
        let mut dx = vec![T::zero(); n * d];
        {
            let mut dgain = vec![T::zero(); d];
            rmsnorm_back(&dhf, &trace.x_final, &trace.inv_f, self.entry(layout.final_norm), &mut dx, &mut dgain);
            add_into(&mut grad[span(layout.final_norm)], &dgain);
        }

        let mut dact = vec![T::zero(); n * f];
        let mut dh = vec![T::zero(); n * d];
        let mut dctx = vec![T::zero(); n * d];
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); seq];

        for (l, tape) in trace.layers.iter().enumerate().rev() {
            let lp = layout.layers[l];

            // MLP
            matmul_tn(&tape.act, &dx, &mut grad[span(lp.w2)], n, f, d, true);
            matmul_nt(&dx, self.entry(lp.w2), &mut dact, n, d, f, false);
            for ((g, &z), &t) in dact.iter_mut().zip(&tape.u).zip(&tape.th) {
                *g = *g * gelu_grad(z, t);
            }
            matmul_tn(&tape.h2, &dact, &mut grad[span(lp.w1)], n, d, f, true);
            matmul_nt(&dact, self.entry(lp.w1), &mut dh, n, f, d, false);
            {
                let mut dgain = vec![T::zero(); d];
                rmsnorm_back(&dh, &tape.x_mid, &tape.inv2, self.entry(lp.mlp_norm), &mut dx, &mut dgain);
                add_into(&mut grad[span(lp.mlp_norm)], &dgain);
            }

            // attention
            matmul_tn(&tape.ctx, &dx, &mut grad[span(lp.wo)], n, d, d, true);
            matmul_nt(&dx, self.entry(lp.wo), &mut dctx, n, d, d, false);
            dq.fill(T::zero());
            dk.fill(T::zero());
            dv.fill(T::zero());
            for b in 0..batch {
                for head in 0..nh {
                    let pbase = (b * nh + head) * seq * seq;
                    for i in 0..seq {
                        let row_i = (b * seq + i) * d + head * hd;
                        let prow = &tape.probs[pbase + i * seq..pbase + (i + 1) * seq];
                        let dci = &dctx[row_i..row_i + hd];
                        let mut weighted = T::zero();
                        for j in 0..=i {
                            let row_j = (b * seq + j) * d + head * hd;
                            let vj = &tape.v[row_j..row_j + hd];
                            let dot = dci.iter().zip(vj).fold(T::zero(), |acc, (&a, &c)| acc + a * c);
                            dp[j] = dot;
                            weighted = weighted + prow[j] * dot;
                            let p = prow[j];
                            for (g, &c) in dv[row_j..row_j + hd].iter_mut().zip(dci) {
                                *g = *g + p * c;
                            }
                        }
                        for j in 0..=i {
                            let ds = prow[j] * (dp[j] - weighted) * scale;
                            let row_j = (b * seq + j) * d + head * hd;
                            for t in 0..hd {
                                dq[row_i + t] = dq[row_i + t] + ds * tape.k[row_j + t];
                                dk[row_j + t] = dk[row_j + t] + ds * tape.q[row_i + t];
                            }
                        }
                    }
                }
            }
            for row in 0..n {
                let pos = row % seq;
                for head in 0..nh {
                    let o = row * d + head * hd;
                    self.rope.rotate_back(&mut dq[o..o + hd], pos);
                    self.rope.rotate_back(&mut dk[o..o + hd], pos);
                }
            }
            matmul_tn(&tape.h, &dq, &mut grad[span(lp.wq)], n, d, d, true);
            matmul_tn(&tape.h, &dk, &mut grad[span(lp.wk)], n, d, d, true);
            matmul_tn(&tape.h, &dv, &mut grad[span(lp.wv)], n, d, d, true);
            matmul_nt(&dq, self.entry(lp.wq), &mut dh, n, d, d, false);
            matmul_nt(&dk, self.entry(lp.wk), &mut dh, n, d, d, true);
            matmul_nt(&dv, self.entry(lp.wv), &mut dh, n, d, d, true);
            {
                let mut dgain = vec![T::zero(); d];
                rmsnorm_back(&dh, &tape.x_in, &tape.inv1, self.entry(lp.attn_norm), &mut dx, &mut dgain);
                add_into(&mut grad[span(lp.attn_norm)], &dgain);
            }
        }

        // embedding
        let emb = span(layout.embed);
        let gemb = &mut grad[emb];
        for (b, s) in seqs.iter().enumerate() {
            for t in 0..seq {
                let id = s.get(t).copied().unwrap_or(Vocab::PAD) as usize;
                let row = (b * seq + t) * d;
                add_into(&mut gemb[id * d..(id + 1) * d], &dx[row..row + d]);
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}
