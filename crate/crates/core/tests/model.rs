use preclab_core::tinylm::{grad_check, gradcheck::compare_gradients, Model, ModelConfig, TokenId, Vocab};
use preclab_core::tracing::{capture, CapturePoint, HookSpec};

fn model(seed: u64) -> Model<f32> {
    Model::new(ModelConfig {
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn toks(m: &Model<f32>, s: &str) -> Vec<TokenId> {
    m.vocab().tokenize(s).unwrap()
}

fn bits(xs: &[f32]) -> Vec<u32> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn empty_hook_list_and_empty_swap_are_bit_exact() {
    let m = model(1);
    let t = toks(&m, "3 + 4 * 5 = ");
    let base = m.forward(&t, &[], false).unwrap();
    let empty = m.forward(&t, &[HookSpec::swap(2, 4, vec![])], false).unwrap();
    assert_eq!(bits(&base.logits), bits(&empty.logits));
}

#[test]
fn capture_does_not_perturb_logits() {
    let m = model(2);
    let t = toks(&m, "7 - ( 2 * 3 ) = ");
    let off = m.forward(&t, &[], false).unwrap();
    let on = m.forward(&t, &[], true).unwrap();
    assert_eq!(bits(&off.logits), bits(&on.logits));
    assert!(on.cache.unwrap().is_finite());
}

#[test]
fn full_swap_equals_operator_exchanged_prompt() {
    let m = model(3);
    let swapped = m
        .forward(&toks(&m, "3 + 4 * 5 = "), &[HookSpec::swap(2, 4, (0..128).collect())], false)
        .unwrap();
    let exchanged = m.forward(&toks(&m, "3 * 4 + 5 = "), &[], false).unwrap();
    for (a, b) in swapped.logits.iter().zip(&exchanged.logits) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-6), "{a} vs {b}");
    }
}

#[test]
fn swapping_identical_tokens_is_bit_exact() {
    let m = model(4);
    let t = toks(&m, "3 * 3 + 3 = ");
    let base = m.forward(&t, &[], false).unwrap();
    let swapped = m.forward(&t, &[HookSpec::swap(1, 3, (0..128).collect())], false).unwrap();
    assert_eq!(bits(&base.logits), bits(&swapped.logits));
}

#[test]
fn ablating_every_layer_matches_zeroed_output_projections() {
    let m = model(5);
    let t = toks(&m, "9 * 2 - 4 = ");
    let hooks: Vec<HookSpec> = (0..m.config.n_layers).map(HookSpec::ablate).collect();
    let ablated = m.forward(&t, &hooks, false).unwrap();
    let mut reference = m.clone();
    for l in 0..m.config.n_layers {
        reference.param_mut(&format!("layers.{l}.wo")).unwrap().fill(0.0);
    }
    let expect = reference.forward(&t, &[], false).unwrap();
    assert_eq!(bits(&ablated.logits), bits(&expect.logits));
}

#[test]
fn ablation_order_does_not_matter() {
    let m = model(6);
    let t = toks(&m, "8 / 2 + 1 = ");
    let a = m.forward(&t, &[HookSpec::ablate(1), HookSpec::ablate(4)], false).unwrap();
    let b = m.forward(&t, &[HookSpec::ablate(4), HookSpec::ablate(1)], false).unwrap();
    assert_eq!(bits(&a.logits), bits(&b.logits));
}

#[test]
fn attention_is_causal() {
    let m = model(7);
    let full = toks(&m, "6 + 2 * 8 = ");
    let a = m.forward(&full, &[], false).unwrap();
    let b = m.forward(&full[..4], &[], false).unwrap();
    for pos in 0..4 {
        for (x, y) in a.logits_at(pos).iter().zip(b.logits_at(pos)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn cache_layout_and_identities() {
    let m = model(8);
    let prompt = "3 + 4 * 5 = ";
    let cache = capture(&m, prompt).unwrap();
    let (l, s, d) = (m.config.n_layers, 7, m.config.d_model);
    assert_eq!((cache.n_layers, cache.seq_len, cache.d_model), (l, s, d));
    assert_eq!(cache.len_scalars(), 6 * 3 * 7 * 128);
    let embed = m.param("embed").unwrap();
    for (p, &t) in cache.tokens.iter().enumerate() {
        let row = &embed[t as usize * d..(t as usize + 1) * d];
        assert_eq!(cache.get(0, CapturePoint::BlockInput, p), row);
    }
    for layer in 0..l {
        for p in 0..s {
            let bi = cache.get(layer, CapturePoint::BlockInput, p);
            let pa = cache.get(layer, CapturePoint::PostAttention, p);
            for ((a, b), o) in pa.iter().zip(bi).zip(cache.attn_output(layer, p)) {
                assert!((a - b - o).abs() <= 1e-6);
            }
            if layer + 1 < l {
                assert_eq!(cache.get(layer, CapturePoint::PostMlp, p), cache.get(layer + 1, CapturePoint::BlockInput, p));
            }
        }
    }
}

#[test]
fn resuming_from_a_cached_block_input_reproduces_downstream() {
    let m = model(9);
    let t = toks(&m, "2 * ( 5 - 3 ) = ");
    let full = m.forward(&t, &[], true).unwrap();
    let cache = full.cache.as_ref().unwrap();
    for start in 0..m.config.n_layers {
        let resumed = m
            .forward_from(start, cache.layer_block(start, CapturePoint::BlockInput), &t, &[], true)
            .unwrap();
        assert_eq!(bits(&resumed.logits), bits(&full.logits));
        let rc = resumed.cache.unwrap();
        for layer in start..m.config.n_layers {
            for point in CapturePoint::ALL {
                assert_eq!(rc.layer_block(layer, point), cache.layer_block(layer, point));
            }
        }
    }
}

#[test]
fn lone_vector_unembeds_like_the_batch() {
    let m = model(10);
    let t = toks(&m, "5 * 5 - 6 = ");
    let out = m.forward(&t, &[], true).unwrap();
    let cache = out.cache.as_ref().unwrap();
    let last = cache.seq_len - 1;
    let lens = m.project_residual(cache.get(m.config.n_layers - 1, CapturePoint::PostMlp, last));
    assert_eq!(bits(&lens), bits(out.last_logits()));
}

#[test]
fn batched_capture_matches_single_prompts() {
    let m = model(11);
    let a = toks(&m, "3 + 4 * 5 = ");
    let b = toks(&m, "( 3 + 4 ) * 5 = ");
    let batch = m.capture_batch(&[&a, &b], &[HookSpec::ablate(2)]).unwrap();
    for (seq, (cache, logits)) in [&a, &b].into_iter().zip(batch) {
        let single = m.forward(seq, &[HookSpec::ablate(2)], true).unwrap();
        let sc = single.cache.as_ref().unwrap();
        for (x, y) in logits.iter().zip(single.last_logits()) {
            assert!((x - y).abs() < 1e-5);
        }
        for layer in 0..m.config.n_layers {
            for (x, y) in cache
                .layer_block(layer, CapturePoint::PostMlp)
                .iter()
                .zip(sc.layer_block(layer, CapturePoint::PostMlp))
            {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = model(12);
    let long = vec![Vocab::BOS; 17];
    assert!(m.forward(&long, &[], false).is_err());
    assert!(m.forward(&[], &[], false).is_err());
    let t = toks(&m, "3 + 4 * 5 = ");
    assert!(m.forward(&t, &[HookSpec::ablate(6)], false).is_err());
    assert!(m.forward(&t, &[HookSpec::swap(2, 9, vec![0])], false).is_err());
    assert!(m.forward(&t, &[HookSpec::swap(2, 4, vec![128])], false).is_err());
    assert!(m.vocab().tokenize("3 ^ 4 = ").is_err());
}

fn small_f64(seed: u64) -> Model<f64> {
    Model::<f64>::new(ModelConfig {
        seed,
        ..ModelConfig::small()
    })
    .unwrap()
}

fn grad_batch(m: &Model<f64>) -> Vec<Vec<TokenId>> {
    ["3 + 4 * 5 = 23", "( 8 - 2 ) / 3 = 2", "9 * 2 - 4 = 14"]
        .iter()
        .map(|s| {
            let mut t = m.vocab().tokenize(&s[..s.rfind(' ').unwrap()]).unwrap();
            t.push(s[s.rfind(' ').unwrap() + 1..].parse().unwrap());
            t
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let m = small_f64(21);
    let seqs = grad_batch(&m);
    let batch: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
    let report = grad_check(&m, &batch, 200, 1e-4, 7).unwrap();
    assert_eq!(report.samples.len(), 200);
    assert!(report.passes(1e-3), "worst {:?}", report.worst());
}

#[test]
fn gradient_check_catches_a_corrupted_gradient() {
    let m = small_f64(22);
    let seqs = grad_batch(&m);
    let batch: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
    let (_, mut grad) = m.loss_and_grad(&batch).unwrap();
    for g in &mut grad {
        *g *= 1.01;
    }
    let report = compare_gradients(&m, &batch, &grad, 100, 1e-4, 7).unwrap();
    assert!(!report.passes(1e-3));
}

#[test]
fn linear_only_model_gradient_is_exact() {
    let mut m = small_f64(23);
    for l in 0..m.config.n_layers {
        for w in ["wq", "wk", "wv", "wo", "w1", "w2"] {
            m.param_mut(&format!("layers.{l}.{w}")).unwrap().fill(0.0);
        }
    }
    let seqs = grad_batch(&m);
    let batch: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
    // norms and softmax keep this model nonlinear, so compare absolute
    // differences at a step where truncation error is negligible
    let report = grad_check(&m, &batch, 150, 1e-5, 3).unwrap();
    let worst_abs = report
        .samples
        .iter()
        .map(|s| (s.analytic - s.numeric).abs())
        .fold(0.0, f64::max);
    assert!(worst_abs < 1e-8, "worst abs {worst_abs}");
}
