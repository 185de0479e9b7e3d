use nalgebra::DMatrix;
use preclab_core::geometry::{cluster_separation, project_2d, ActivationSite, GeometryError, LabeledActivationSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn set(rows: Vec<Vec<f64>>, labels: Vec<String>) -> LabeledActivationSet {
    let ids = (0..rows.len()).collect();
    LabeledActivationSet::new(ActivationSite::PostAttention, rows, labels, ids).unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn rank_one_data_has_no_second_component() {
    let dir: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
    let rows: Vec<Vec<f64>> = (0..15).map(|t| dir.iter().map(|v| v * t as f64 + 1.0).collect()).collect();
    let p = project_2d(&set(rows, vec!["a".into(); 15])).unwrap();
    assert!(p.points.iter().all(|pt| pt.y.abs() < 1e-6));
    assert!(p.explained[1] < 1e-9 * p.explained[0]);
}

#[test]
fn duplicated_rows_project_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base = gaussian(&mut rng, 10, 6);
    let rows: Vec<Vec<f64>> = base.iter().chain(&base).cloned().collect();
    let p = project_2d(&set(rows, vec!["x".into(); 20])).unwrap();
    for i in 0..10 {
        assert_eq!((p.points[i].x, p.points[i].y), (p.points[i + 10].x, p.points[i + 10].y));
    }
}

#[test]
fn projection_is_rotation_invariant_up_to_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 8;
    let mut rows = gaussian(&mut rng, 40, d);
    for r in &mut rows {
        r[0] *= 5.0;
        r[1] *= 3.0;
    }
    let q = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let rotated: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let v = &q * nalgebra::DVector::from_column_slice(r);
            v.iter().copied().collect()
        })
        .collect();
    let a = project_2d(&set(rows, vec!["a".into(); 40])).unwrap();
    let b = project_2d(&set(rotated, vec!["a".into(); 40])).unwrap();
    for i in 0..40 {
        for j in 0..40 {
            let da = (a.points[i].x - a.points[j].x).hypot(a.points[i].y - a.points[j].y);
            let db = (b.points[i].x - b.points[j].x).hypot(b.points[i].y - b.points[j].y);
            assert!((da - db).abs() < 1e-6);
        }
    }
}

#[test]
fn sign_convention_makes_largest_loading_positive() {
    // single dominant axis along -e0 after centering still maps to +x for
    // the row with the largest e0 value
    let rows = vec![vec![-3.0, 0.1], vec![0.0, -0.1], vec![3.0, 0.0], vec![1.0, 0.05]];
    let p = project_2d(&set(rows, vec!["a".into(); 4])).unwrap();
    assert!(p.points[2].x > 0.0 && p.points[0].x < 0.0);
}

#[test]
fn degenerate_and_tiny_sets_are_rejected() {
    assert_eq!(
        project_2d(&set(vec![vec![1.0, 2.0]; 5], vec!["a".into(); 5])),
        Err(GeometryError::DegenerateSet)
    );
    assert!(matches!(
        project_2d(&set(vec![vec![1.0], vec![2.0]], vec!["a".into(); 2])),
        Err(GeometryError::TooFewRows { .. })
    ));
    assert!(LabeledActivationSet::new(ActivationSite::PreAttention, vec![vec![1.0]], vec![], vec![0]).is_err());
}

#[test]
fn far_blobs_score_near_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = gaussian(&mut rng, 200, 10);
    let labels: Vec<String> = (0..200).map(|i| if i < 100 { "a".into() } else { "b".into() }).collect();
    for r in &mut rows[100..] {
        r[0] += 50.0;
    }
    assert!(cluster_separation(&set(rows, labels)).unwrap() > 0.9);
}

#[test]
fn random_labels_on_one_blob_score_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows = gaussian(&mut rng, 600, 10);
    let labels: Vec<String> = (0..600).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let s = cluster_separation(&set(rows, labels)).unwrap();
    assert!(s.abs() < 0.1, "{s}");
}

#[test]
fn silhouette_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = gaussian(&mut rng, 700, 4);
    for r in &mut rows[..300] {
        r[1] += 2.0;
    }
    let labels: Vec<String> = (0..700).map(|i| if i < 300 { "p".into() } else { "q".into() }).collect();
    let a = cluster_separation(&set(rows.clone(), labels.clone())).unwrap();
    let mut perm: Vec<usize> = (0..700).collect();
    perm.shuffle(&mut rng);
    let b = cluster_separation(&set(
        perm.iter().map(|&i| rows[i].clone()).collect(),
        perm.iter().map(|&i| labels[i].clone()).collect(),
    ))
    .unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn silhouette_matches_a_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows = gaussian(&mut rng, 30, 3);
    let labels: Vec<String> = (0..30).map(|i| ["u", "v", "w"][i % 3].to_string()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..30 {
        let mean_to = |l: &str, skip: bool| {
            let ds: Vec<f64> = (0..30)
                .filter(|&j| labels[j] == l && !(skip && j == i))
                .map(|j| dist(&rows[i], &rows[j]))
                .collect();
            ds.iter().sum::<f64>() / ds.len() as f64
        };
        let a = mean_to(&labels[i], true);
        let b = ["u", "v", "w"]
            .iter()
            .filter(|&&l| l != labels[i])
            .map(|l| mean_to(l, false))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    let got = cluster_separation(&set(rows, labels)).unwrap();
    assert!((got - total / 30.0).abs() < 1e-9);
}

#[test]
fn single_label_is_rejected() {
    let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
    assert_eq!(
        cluster_separation(&set(rows.clone(), vec!["a".into(); 3])),
        Err(GeometryError::SingleLabel)
    );
    assert_eq!(
        cluster_separation(&set(rows, vec!["a".into(), "a".into(), "b".into()])),
        Err(GeometryError::SingleLabel)
    );
}
