//! Single-threaded, seed-deterministic training loop (AdamW).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exprgen::Expression;

use super::backward::{cross_entropy, targets};
use super::forward::argmax;
use super::{Model, Scalar, TinyLmError, TokenId, TrainConfig, Vocab};

/// A prompt tokenized for training: `BOS prompt answer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub answer: TokenId,
}

impl Example {
    pub fn from_expression(vocab: &Vocab, e: &Expression) -> Result<Self, TinyLmError> {
        let mut tokens = vocab.tokenize(&e.text)?;
        let answer = vocab
            .int_id(e.final_value)
            .ok_or_else(|| TinyLmError::UnknownLexeme(e.final_value.to_string()))?;
        tokens.push(answer);
        Ok(Self { tokens, answer })
    }

    /// Prompt tokens without the answer.
    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

/// SHA-256 over the canonical prompt texts and answers, in order.
pub fn dataset_hash(data: &[Expression]) -> String {
    let mut h = Sha256::new();
    for e in data {
        h.update(e.text.as_bytes());
        h.update(e.final_value.to_le_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic shuffle-then-cut split into `(train, held_out)` indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    let cut = ((n as f64) * fraction).round() as usize;
    let cut = cut.clamp(1.min(n), n);
    let held = idx.split_off(cut);
    (idx, held)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: usize,
    pub epoch: f64,
    pub train_loss: f64,
    pub heldout_accuracy: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub trace: Vec<MetricPoint>,
    pub final_loss: f64,
    pub heldout_accuracy: f64,
    pub train_size: usize,
    pub heldout_size: usize,
}

/// Adam moment buffers.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    /// One decoupled-weight-decay Adam step.
    pub fn step(&mut self, model: &mut Model<T>, grad: &[T], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step_size = T::cst(lr / bc1);
        let (tb1, tb2) = (T::cst(b1), T::cst(b2));
        let (ob1, ob2) = (T::cst(1.0 - b1), T::cst(1.0 - b2));
        let inv_bc2 = T::cst(1.0 / bc2);
        let eps = T::cst(1e-8);
        for entry in &model.layout.entries {
            let decay = if entry.decay {
                T::cst(1.0 - lr * cfg.weight_decay)
            } else {
                T::one()
            };
            let range = entry.offset..entry.offset + entry.len;
            for i in range {
                let g = grad[i];
                let m = tb1 * self.m[i] + ob1 * g;
                let v = tb2 * self.v[i] + ob2 * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let p = model.params[i] * decay;
                model.params[i] = p - step_size * m / ((v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

fn clip<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::cst(max_norm / norm);
        for g in grad.iter_mut() {
            *g = *g * s;
        }
    }
    norm
}

impl<T: Scalar> Model<T> {
    /// Exact-match accuracy of the answer token over `examples`.
    pub fn accuracy(&self, examples: &[Example], batch_size: usize) -> Result<f64, TinyLmError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let correct = self.predict_batch(examples.iter().map(|e| e.prompt()), batch_size)?
            .iter()
            .zip(examples)
            .filter(|(p, e)| **p == e.answer)
            .count();
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Greedy answer tokens for many prompts.
    pub fn predict_batch<'a, I>(&self, prompts: I, batch_size: usize) -> Result<Vec<TokenId>, TinyLmError>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let prompts: Vec<&[TokenId]> = prompts.into_iter().collect();
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(batch_size.max(1)) {
            for logits in self.last_logits_batch(chunk, &[])? {
                out.push(argmax(&logits));
            }
        }
        Ok(out)
    }

    /// Trains in place on `dataset`; returns the metric trace.
    pub fn train(&mut self, dataset: &[Expression], cfg: &TrainConfig) -> Result<TrainOutcome, TinyLmError> {
        self.train_with(dataset, cfg, |_| {})
    }

    /// As [`Model::train`], calling `on_eval` after each evaluation.
    pub fn train_with<F: FnMut(&MetricPoint)>(
        &mut self,
        dataset: &[Expression],
        cfg: &TrainConfig,
        mut on_eval: F,
    ) -> Result<TrainOutcome, TinyLmError> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(TinyLmError::EmptyDataset);
        }
        let vocab = self.vocab();
        let examples = dataset
            .iter()
            .map(|e| Example::from_expression(&vocab, e))
            .collect::<Result<Vec<_>, _>>()?;
        let (train_idx, held_idx) = split_indices(examples.len(), cfg.split_fraction, cfg.seed);
        let train: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();
        let held: Vec<Example> = held_idx.iter().map(|&i| examples[i].clone()).collect();
        let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);
        let eval_every = if cfg.eval_every == 0 { steps_per_epoch } else { cfg.eval_every };

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut cursor = order.len();
        let mut adam = AdamState::new(self.params.len());
        let mut trace = Vec::new();
        let mut running = 0.0;
        let mut running_n = 0usize;
        let mut last_loss = f64::NAN;
        let start = Instant::now();

        for step in 0..cfg.steps {
            let mut batch: Vec<&[TokenId]> = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size.min(train.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&train[order[cursor]].tokens);
                cursor += 1;
            }

            let run = self.run(&batch, &[])?;
            let tg = targets(&batch, run.seq);
            let (loss, dlogits) = cross_entropy(&run.logits, &tg, self.config.vocab_size);
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(TinyLmError::Diverged { step, loss });
            }
            let mut grad = vec![T::zero(); self.params.len()];
            self.backward(&run, &batch, &dlogits, &mut grad);
            drop(run);
            clip(&mut grad, cfg.grad_clip);
            adam.step(self, &grad, cfg.lr_at(step), cfg);

            last_loss = loss;
            running += loss;
            running_n += 1;
            let done = step + 1 == cfg.steps;
            if (step + 1) % eval_every == 0 || done {
                let acc = if held.is_empty() { f64::NAN } else { self.accuracy(&held, 256)? };
                let point = MetricPoint {
                    step: step + 1,
                    epoch: (step + 1) as f64 / steps_per_epoch as f64,
                    train_loss: running / running_n as f64,
                    heldout_accuracy: acc,
                    elapsed_secs: start.elapsed().as_secs_f64(),
                };
                log::info!(
                    "step {} epoch {:.1} loss {:.4} held-out acc {:.4} ({:.0}s)",
                    point.step,
                    point.epoch,
                    point.train_loss,
                    point.heldout_accuracy,
                    point.elapsed_secs
                );
                on_eval(&point);
                trace.push(point);
                running = 0.0;
                running_n = 0;
            }
        }

        let heldout_accuracy = trace.last().map(|p| p.heldout_accuracy).unwrap_or(f64::NAN);
        self.meta.dataset_hash = dataset_hash(dataset);
        self.meta.steps += cfg.steps;
        self.meta.heldout_accuracy = heldout_accuracy.is_finite().then_some(heldout_accuracy);
        Ok(TrainOutcome {
            trace,
            final_loss: last_loss,
            heldout_accuracy,
            train_size: train.len(),
            heldout_size: held.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprgen::default_dataset;
    use crate::tinylm::ModelConfig;

    #[test]
    fn split_is_deterministic_and_complete() {
        let (a, b) = split_indices(100, 0.8, 3);
        let (c, d) = split_indices(100, 0.8, 3);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(a, c);
        assert_eq!(b, d);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let data: Vec<Expression> = default_dataset().into_iter().take(16).collect();
        let mut model = Model::<f32>::new(ModelConfig::small()).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 3,
            batch_size: 4,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        model.train(&data, &cfg).unwrap();
        assert!(model.params.iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = Model::<f32>::new(ModelConfig::small()).unwrap();
        assert!(matches!(model.train(&[], &TrainConfig::default()), Err(TinyLmError::EmptyDataset)));
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<Expression> = default_dataset().into_iter().take(8).collect();
        let mut model = Model::<f32>::new(ModelConfig::small()).unwrap();
        model.param_mut("unembed").unwrap()[0] = f32::NAN;
        let err = model.train(&data, &TrainConfig { steps: 2, batch_size: 4, ..TrainConfig::default() });
        assert!(matches!(err, Err(TinyLmError::Diverged { step: 0, .. })));
    }
}
