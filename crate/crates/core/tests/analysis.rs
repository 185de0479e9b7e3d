use preclab_core::analysis::{
    attribute_component, detect_intermediate, fit_linear_probe, fit_logistic_probe, logit_lens, AnalysisError,
    Component, LensEntry, LensReport, ProbeConfig,
};
use preclab_core::exprgen::{eval_expression, FilterPolicy};
use preclab_core::tinylm::{Model, ModelConfig, TokenId};
use preclab_core::tracing::{CapturePoint, ResidualCache};
use preclab_core::{Expression, Operator, StructureVariant};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn model() -> Model<f32> {
    Model::new(ModelConfig::default()).unwrap()
}

/// Column `t` of the `[d, V]` unembedding, scaled.
fn unembed_row(m: &Model<f32>, t: TokenId, scale: f32) -> Vec<f32> {
    let v = m.config.vocab_size;
    let w = m.param("unembed").unwrap();
    (0..m.config.d_model).map(|i| scale * w[i * v + t as usize]).collect()
}

#[test]
fn synthetic_cache_surfaces_the_planted_token() {
    let m = model();
    let mut cache = ResidualCache::zeroed(m.config.n_layers, 4, m.config.d_model, vec![0; 4]);
    cache.set(3, CapturePoint::PostMlp, 3, &unembed_row(&m, 42, 100.0));
    let report = logit_lens(&cache, &m).unwrap();
    assert_eq!(report.entry(3, CapturePoint::PostMlp).unwrap().top1(), Some(42));
    for e in &report.entries {
        assert_eq!(e.top.len(), 10);
        assert!(e.top.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn lens_rejects_a_foreign_cache() {
    let m = model();
    let cache = ResidualCache::<f32>::zeroed(2, 4, 16, vec![0; 4]);
    assert!(matches!(logit_lens(&cache, &m), Err(AnalysisError::DimensionMismatch(_))));
}

fn report_with(post_mlp_tops: &[Vec<TokenId>]) -> LensReport {
    let entries = post_mlp_tops
        .iter()
        .enumerate()
        .map(|(layer, toks)| LensEntry {
            layer,
            point: CapturePoint::PostMlp,
            top: toks.iter().enumerate().map(|(i, &t)| (t, 10.0 - i as f64)).collect(),
        })
        .collect();
    LensReport {
        position: 6,
        entries,
        first_layer_top1: None,
        attribution: None,
    }
}

#[test]
fn detection_reads_post_mlp_topk() {
    let e = Expression::build(2, 3, 3, Operator::Add, Operator::Mul, StructureVariant::NoParenNatural, FilterPolicy::default())
        .unwrap();
    assert_eq!(e.text, "2 + 3 * 3 = ");
    assert_eq!(e.intermediate, 9);
    let report = report_with(&[vec![1, 2, 3], vec![5, 9, 4], vec![9, 11], vec![11, 9]]);
    let det = detect_intermediate(&report, &e);
    assert_eq!(det.token, Some(9));
    assert_eq!(det.in_topk, vec![false, true, true, true]);
    assert_eq!(det.is_top1, vec![false, false, true, false]);
    assert_eq!(det.first_layer_top1, Some(2));
    assert!(!det.degenerate);

    let absent = detect_intermediate(&report_with(&[vec![1], vec![2]]), &e);
    assert_eq!(absent.in_topk, vec![false, false]);
    assert_eq!(absent.first_layer_top1, None);
}

#[test]
fn degenerate_flag_follows_exact_values() {
    let e = Expression::build(1, 1, 1, Operator::Add, Operator::Mul, StructureVariant::FlippedRightParen, FilterPolicy::default())
        .unwrap();
    assert_eq!(e.text, "1 * ( 1 + 1 ) = ");
    assert_eq!((e.intermediate, e.final_value), (2, 2));
    assert!(detect_intermediate(&report_with(&[vec![2]]), &e).degenerate);
    let (i, f) = eval_expression("2 * ( 1 + 1 ) = ", FilterPolicy::default()).unwrap();
    assert_ne!(i, f);
}

#[test]
fn attribution_on_constructed_residuals() {
    let m = model();
    let d = m.config.d_model;
    let mut cache = ResidualCache::zeroed(m.config.n_layers, 3, d, vec![0; 3]);
    let big = unembed_row(&m, 30, 100.0);
    let small = unembed_row(&m, 31, 1.0);

    cache.set_components(1, 2, &big, &vec![0.0; d]);
    assert_eq!(attribute_component(&m, &cache, 1, 30).unwrap(), Component::Attention);

    cache.set_components(1, 2, &small, &big);
    assert_eq!(attribute_component(&m, &cache, 1, 30).unwrap(), Component::Mlp);

    cache.set(1, CapturePoint::BlockInput, 2, &big);
    cache.set_components(1, 2, &vec![0.0; d], &vec![0.0; d]);
    assert_eq!(attribute_component(&m, &cache, 1, 30).unwrap(), Component::Neither);

    assert!(matches!(
        attribute_component(&m, &cache, 1, 77),
        Err(AnalysisError::Precondition(_))
    ));
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn linear_probe_recovers_exact_linear_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(&mut rng, 300, 12);
    let w: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
    let y: Vec<f64> = x.iter().map(|r| 3.0 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
    let rep = fit_linear_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert!((rep.metric - 1.0).abs() < 1e-6, "R² {}", rep.metric);
    assert_eq!((rep.train_size, rep.test_size), (240, 60));
}

#[test]
fn linear_probe_on_permuted_targets_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(&mut rng, 1000, 8);
    let mut y: Vec<f64> = x.iter().map(|r| r.iter().sum()).collect();
    y.shuffle(&mut rng);
    let rep = fit_linear_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert!(rep.metric <= 0.1, "R² {}", rep.metric);
}

#[test]
fn linear_probe_survives_collinear_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = gaussian(&mut rng, 100, 3)
        .into_iter()
        .map(|r| vec![r[0], r[0], 2.0 * r[0], r[1], r[2]])
        .collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] - r[3]).collect();
    let rep = fit_linear_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert!(rep.metric > 0.999);
}

#[test]
fn probes_reject_bad_input() {
    let x = vec![vec![1.0, 2.0]; 10];
    assert!(matches!(
        fit_linear_probe(&x, &[0.0; 10], &ProbeConfig::default()),
        Err(AnalysisError::TooFewSamples { n: 10, min: 50 })
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(&mut rng, 100, 3);
    assert!(matches!(
        fit_logistic_probe(&x, &[true; 100], &ProbeConfig::default()),
        Err(AnalysisError::SingleClass)
    ));
    assert!(fit_linear_probe(&x, &[1.0; 99], &ProbeConfig::default()).is_err());
}

fn blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut x = gaussian(rng, n, d);
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
    for (r, &l) in x.iter_mut().zip(&y) {
        r[0] += if l { sep } else { -sep };
    }
    (x, y)
}

#[test]
fn logistic_probe_separates_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = blobs(&mut rng, 400, 6, 10.0);
    let rep = fit_logistic_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert_eq!(rep.metric, 1.0);
}

#[test]
fn logistic_probe_on_shuffled_labels_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, mut y) = blobs(&mut rng, 2000, 8, 3.0);
    y.shuffle(&mut rng);
    let rep = fit_logistic_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert!((0.4..=0.6).contains(&rep.metric), "accuracy {}", rep.metric);
}

#[test]
fn probes_are_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, y) = blobs(&mut rng, 300, 5, 0.5);
    let cfg = ProbeConfig {
        seed: 11,
        ..ProbeConfig::default()
    };
    assert_eq!(fit_logistic_probe(&x, &y, &cfg).unwrap(), fit_logistic_probe(&x, &y, &cfg).unwrap());
    let t: Vec<f64> = x.iter().map(|r| r[0] * 2.0 + r[1]).collect();
    assert_eq!(fit_linear_probe(&x, &t, &cfg).unwrap(), fit_linear_probe(&x, &t, &cfg).unwrap());
}
