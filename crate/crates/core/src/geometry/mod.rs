//! Two-dimensional PCA projection of labeled activations and silhouette
//! separation in the full space.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::tinylm::matmul_nt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("need at least {min} rows, got {n}")]
    TooFewRows { n: usize, min: usize },
    #[error("rows and labels differ in length ({rows} vs {labels})")]
    Misaligned { rows: usize, labels: usize },
    #[error("ragged rows")]
    Ragged,
    #[error("input has zero variance")]
    DegenerateSet,
    #[error("need at least two labels, each with at least two rows")]
    SingleLabel,
}

/// Layer-0 site an activation set was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationSite {
    PreAttention,
    PostAttention,
}

impl fmt::Display for ActivationSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationSite::PreAttention => "layer0_pre_attention",
            ActivationSite::PostAttention => "layer0_post_attention",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledActivationSet {
    pub site: ActivationSite,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub prompt_ids: Vec<usize>,
}

impl LabeledActivationSet {
    pub fn new(
        site: ActivationSite,
        rows: Vec<Vec<f64>>,
        labels: Vec<String>,
        prompt_ids: Vec<usize>,
    ) -> Result<Self, GeometryError> {
        if rows.len() != labels.len() || rows.len() != prompt_ids.len() {
            return Err(GeometryError::Misaligned {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(GeometryError::Ragged);
            }
        }
        Ok(Self {
            site,
            rows,
            labels,
            prompt_ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub prompt_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Variance captured by each of the two components.
    pub explained: [f64; 2],
}

impl Projection {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,label,prompt_id")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.x, p.y, p.label, p.prompt_id)?;
        }
        Ok(())
    }
}

/// Centered projection onto the top two principal directions. Each
/// direction's sign is fixed so its largest-magnitude loading is positive.
pub fn project_2d(set: &LabeledActivationSet) -> Result<Projection, GeometryError> {
    let n = set.rows.len();
    if n < 3 {
        return Err(GeometryError::TooFewRows { n, min: 3 });
    }
    let d = set.dim();
    let mut x = DMatrix::from_fn(n, d, |r, c| set.rows[r][c]);
    for c in 0..d {
        let mean = x.column(c).sum() / n as f64;
        x.column_mut(c).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= f64::EPSILON * d as f64 {
        return Err(GeometryError::DegenerateSet);
    }

    let mut comps = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        explained[slot] = eig.eigenvalues[k].max(0.0);
        comps.push(v);
    }
    while comps.len() < 2 {
        comps.push(nalgebra::DVector::zeros(d));
    }
    let px = &x * &comps[0];
    let py = &x * &comps[1];
    let points = (0..n)
        .map(|r| ProjectedPoint {
            x: px[r],
            y: py[r],
            label: set.labels[r].clone(),
            prompt_id: set.prompt_ids[r],
        })
        .collect();
    Ok(Projection { points, explained })
}

/// Mean silhouette with Euclidean distance in the full space. Points in
/// singleton clusters score 0.
pub fn cluster_separation(set: &LabeledActivationSet) -> Result<f64, GeometryError> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &set.labels {
        let next = ids.len();
        ids.entry(l.as_str()).or_insert(next);
    }
    let mut sizes = vec![0usize; ids.len()];
    let cluster: Vec<usize> = set.labels.iter().map(|l| ids[l.as_str()]).collect();
    for &c in &cluster {
        sizes[c] += 1;
    }
    if ids.len() < 2 || sizes.iter().any(|&s| s < 2) {
        return Err(GeometryError::SingleLabel);
    }
    let n = set.rows.len();
    let d = set.dim();
    let k = ids.len();
    let flat: Vec<f64> = set.rows.iter().flatten().copied().collect();
    let sq: Vec<f64> = set.rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();

    // per-row sum of distances to each cluster, built from Gram blocks
    let mut sums = vec![0.0f64; n * k];
    const BLOCK: usize = 512;
    let mut gram = vec![0.0f64; BLOCK * BLOCK];
    for i0 in (0..n).step_by(BLOCK) {
        let bi = BLOCK.min(n - i0);
        for j0 in (0..n).step_by(BLOCK) {
            let bj = BLOCK.min(n - j0);
            let g = &mut gram[..bi * bj];
            matmul_nt(&flat[i0 * d..(i0 + bi) * d], &flat[j0 * d..(j0 + bj) * d], g, bi, d, bj, false);
            for i in 0..bi {
                let row = &mut sums[(i0 + i) * k..(i0 + i + 1) * k];
                for j in 0..bj {
                    if i0 + i == j0 + j {
                        continue;
                    }
                    let d2 = (sq[i0 + i] + sq[j0 + j] - 2.0 * g[i * bj + j]).max(0.0);
                    row[cluster[j0 + j]] += d2.sqrt();
                }
            }
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = cluster[i];
        let row = &sums[i * k..(i + 1) * k];
        let a = row[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| row[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// `site,score,n_rows,n_labels` row for a separation report.
pub fn write_separation_csv<W: Write>(rows: &[(ActivationSite, f64, usize, usize)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "site,score,n_rows,n_labels")?;
    for (site, score, n, k) in rows {
        writeln!(w, "{site},{score},{n},{k}")?;
    }
    Ok(())
}
