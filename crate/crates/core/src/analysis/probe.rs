//! Linear (ridge) and logistic probes on frozen activations.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::tinylm::split_indices;
use crate::tracing::CapturePoint;

use super::AnalysisError;

pub const MIN_PROBE_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    LinearR2,
    LogisticAccuracy,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::LinearR2 => "linear_r2",
            ProbeKind::LogisticAccuracy => "logistic_accuracy",
        })
    }
}

/// Which token position(s) feed a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionSelector {
    /// The last prompt token (`=`).
    #[default]
    Final,
    /// Both operator tokens.
    Operators,
    /// A fixed absolute position.
    At(usize),
}

impl fmt::Display for PositionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositionSelector::Final => f.write_str("final"),
            PositionSelector::Operators => f.write_str("operators"),
            PositionSelector::At(p) => write!(f, "pos{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSite {
    pub layer: usize,
    pub point: CapturePoint,
    pub position: PositionSelector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub site: Option<ProbeSite>,
    /// Held-out R² or accuracy.
    pub metric: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl ProbeReport {
    pub fn at(mut self, site: ProbeSite) -> Self {
        self.site = Some(site);
        self
    }
}

pub fn write_probe_csv<W: Write>(reports: &[ProbeReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "kind,layer,point,position,metric,train_size,test_size,seed")?;
    for r in reports {
        let (layer, point, pos) = match r.site {
            Some(s) => (s.layer.to_string(), s.point.to_string(), s.position.to_string()),
            None => Default::default(),
        };
        writeln!(
            w,
            "{},{layer},{point},{pos},{},{},{},{}",
            r.kind, r.metric, r.train_size, r.test_size, r.seed
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub seed: u64,
    pub split_fraction: f64,
    /// Ridge damping for the linear probe; L2 weight for the logistic one.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_fraction: 0.8,
            lambda: 1e-4,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

fn check_rows(x: &[Vec<f64>], n_targets: usize) -> Result<usize, AnalysisError> {
    if x.len() != n_targets {
        return Err(AnalysisError::DimensionMismatch(format!("{} rows, {} targets", x.len(), n_targets)));
    }
    if x.len() < MIN_PROBE_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            n: x.len(),
            min: MIN_PROBE_SAMPLES,
        });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::DimensionMismatch("ragged or empty rows".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(d)
}

fn gather(x: &[Vec<f64>], idx: &[usize], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), d, |r, c| x[idx[r]][c])
}

/// Column means and (population) standard deviations; zero spread maps to 1.
fn moments(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.nrows() as f64;
    let mean = DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n);
    let sd = DVector::from_fn(m.ncols(), |c, _| {
        let v = m.column(c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>() / n;
        if v > 0.0 {
            v.sqrt()
        } else {
            1.0
        }
    });
    (mean, sd)
}

fn standardize(m: &mut DMatrix<f64>, mean: &DVector<f64>, sd: &DVector<f64>) {
    for c in 0..m.ncols() {
        for v in m.column_mut(c).iter_mut() {
            *v = (*v - mean[c]) / sd[c];
        }
    }
}

/// Ridge regression with an unpenalized intercept; R² on the held-out split.
pub fn fit_linear_probe(x: &[Vec<f64>], y: &[f64], cfg: &ProbeConfig) -> Result<ProbeReport, AnalysisError> {
    let d = check_rows(x, y.len())?;
    let (tr, te) = split_indices(x.len(), cfg.split_fraction, cfg.seed);
    let mut xt = gather(x, &tr, d);
    let yt = DVector::from_iterator(tr.len(), tr.iter().map(|&i| y[i]));
    let (mean, sd) = moments(&xt);
    standardize(&mut xt, &mean, &sd);
    let ymean = yt.mean();
    let yc = yt.add_scalar(-ymean);

    let mut gram = xt.transpose() * &xt;
    for i in 0..d {
        gram[(i, i)] += cfg.lambda;
    }
    let rhs = xt.transpose() * yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| AnalysisError::Numeric(e.to_string()))?,
    };

    let mut xs = gather(x, &te, d);
    standardize(&mut xs, &mean, &sd);
    let pred = xs * w;
    let ys: Vec<f64> = te.iter().map(|&i| y[i]).collect();
    let ys_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|v| (v - ys_mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(pred.iter()).map(|(v, p)| (v - (p + ymean)).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(AnalysisError::ConstantTarget);
    }
    Ok(ProbeReport {
        kind: ProbeKind::LinearR2,
        site: None,
        metric: 1.0 - ss_res / ss_tot,
        train_size: tr.len(),
        test_size: te.len(),
        seed: cfg.seed,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood plus `lambda/2 |w|²` (intercept excluded).
fn logistic_objective(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, lambda: f64) -> f64 {
    let z = x * w;
    let nll: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            // log(1 + e^z) - t z, stable
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t * z
        })
        .sum();
    let reg: f64 = w.rows(1, w.len() - 1).norm_squared();
    nll / y.len() as f64 + 0.5 * lambda * reg
}

/// L2-regularized logistic regression by damped Newton iterations.
/// Labels must contain both classes.
pub fn fit_logistic_probe(x: &[Vec<f64>], y: &[bool], cfg: &ProbeConfig) -> Result<ProbeReport, AnalysisError> {
    let d = check_rows(x, y.len())?;
    if y.iter().all(|&b| b) || y.iter().all(|&b| !b) {
        return Err(AnalysisError::SingleClass);
    }
    let (tr, te) = split_indices(x.len(), cfg.split_fraction, cfg.seed);
    let xt_raw = gather(x, &tr, d);
    let (mean, sd) = moments(&xt_raw);
    // design matrix with a leading bias column
    let design = |idx: &[usize]| {
        let mut m = gather(x, idx, d);
        standardize(&mut m, &mean, &sd);
        m.insert_column(0, 1.0)
    };
    let xt = design(&tr);
    let yt: Vec<f64> = tr.iter().map(|&i| if y[i] { 1.0 } else { 0.0 }).collect();
    let n = tr.len() as f64;
    let p = d + 1;
    let mut w = DVector::<f64>::zeros(p);
    let mut obj = logistic_objective(&xt, &yt, &w, cfg.lambda);

    for _ in 0..cfg.max_iter {
        let z = &xt * &w;
        let mu: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(tr.len(), mu.iter().zip(&yt).map(|(m, t)| m - t));
        let mut grad = xt.transpose() * resid / n;
        let mut hess = {
            let mut xw = xt.clone();
            for (r, &m) in mu.iter().enumerate() {
                let s = (m * (1.0 - m)).max(1e-12);
                xw.row_mut(r).scale_mut(s);
            }
            xt.transpose() * xw / n
        };
        for i in 1..p {
            grad[i] += cfg.lambda * w[i];
            hess[(i, i)] += cfg.lambda;
        }
        hess[(0, 0)] += 1e-12;
        if grad.amax() < cfg.tol {
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        // backtracking keeps the objective monotone on nearly separable data
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &w - &step * t;
            let c_obj = logistic_objective(&xt, &yt, &cand, cfg.lambda);
            if c_obj <= obj {
                w = cand;
                obj = c_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (&step * t).amax() < cfg.tol {
            break;
        }
    }

    let xs = design(&te);
    let correct = (&xs * &w)
        .iter()
        .zip(&te)
        .filter(|(&z, &i)| (z > 0.0) == y[i])
        .count();
    Ok(ProbeReport {
        kind: ProbeKind::LogisticAccuracy,
        site: None,
        metric: correct as f64 / te.len().max(1) as f64,
        train_size: tr.len(),
        test_size: te.len(),
        seed: cfg.seed,
    })
}
