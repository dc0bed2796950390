//! Standard errors for the recursive estimates: the quasi-likelihood Hessian,
//! a perturbed within-rung bootstrap, and the importance-sampling ESS.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::LogWeightMatrix;
use crate::error::{Error, Result};
use crate::estimators::{log_denominators, LogNormalizers};
use crate::numeric::{logsumexp, logsumexp_iter, quantile, sample_sd};
use crate::seed::rng_for;

pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    QuasiHessian,
    Bootstrap,
}

/// Covariance of `(log Z_2, ..., log Z_m)` (or of a single derived target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub method: CovMethod,
    pub cov: Vec<Vec<f64>>,
    /// Fixed-design covariance (Hessian method only), see
    /// [`quasi_hessian_covariance`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_fixed: Option<Vec<Vec<f64>>>,
    pub se_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_fixed: Option<f64>,
    /// Percentile 95% interval of the target (bootstrap only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Posterior rung-membership probabilities `pi_k(theta_i)`, row-major `n x m`.
pub fn membership(w: &LogWeightMatrix, log_z: &[f64]) -> Vec<f64> {
    let d = log_denominators(w, log_z);
    let m = w.m();
    let log_n: Vec<f64> = w.counts().iter().map(|&c| (c as f64).ln()).collect();
    let mut out = vec![0.0; w.n() * m];
    for i in 0..w.n() {
        let row = w.row(i);
        for k in 0..m {
            out[i * m + k] = (log_n[k] + row[k] - log_z[k] - d[i]).exp();
        }
    }
    out
}

/// Negative Hessian of the quasi-log-likelihood in `nu_k = log Z_k`, `k >= 1`.
pub fn neg_hessian(w: &LogWeightMatrix, log_z: &[f64]) -> DMatrix<f64> {
    let m = w.m();
    let p = membership(w, log_z);
    let mut h = DMatrix::zeros(m - 1, m - 1);
    for i in 0..w.n() {
        let row = &p[i * m..(i + 1) * m];
        for k in 1..m {
            h[(k - 1, k - 1)] += row[k];
            for l in 1..m {
                h[(k - 1, l - 1)] -= row[k] * row[l];
            }
        }
    }
    h
}

/// Cholesky factor, or the first rung whose pivot collapses.
fn cholesky_or_rung(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-12 * scale) {
            return Err(Error::RankDeficient { rungs: vec![j + 1] });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Quasi-likelihood covariance of the anchored log normalizers.
///
/// `cov` is the inverse negative Hessian. It treats the labels as random and
/// so is conservative for fixed per-rung sample sizes; removing
/// `diag(1/n_k) + 1/n_1` gives `cov_fixed`, the covariance for fixed `n_k`
/// and independent draws. A fixed-design variance below `1e-9` of the raw
/// one is cancellation noise: it is set to zero along with its row and column.
pub fn quasi_hessian_covariance(
    w: &LogWeightMatrix,
    normalizers: &LogNormalizers,
) -> Result<CovarianceEstimate> {
    let m = w.m();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "covariance needs at least two rungs".into(),
        ));
    }
    if !normalizers.converged {
        return Err(Error::InvalidArgument(
            "normalizers have not converged".into(),
        ));
    }
    let h = neg_hessian(w, &normalizers.log_z);
    let l = cholesky_or_rung(&h)?;
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(m - 1, m - 1))
        .ok_or_else(|| Error::RankDeficient {
            rungs: (1..m).collect(),
        })?;
    let raw = linv.transpose() * &linv;
    let counts = w.counts();
    let inv0 = 1.0 / counts[0] as f64;
    let mut cov = raw.clone();
    for k in 0..m - 1 {
        for l in 0..m - 1 {
            cov[(k, l)] -= inv0;
        }
        cov[(k, k)] -= 1.0 / counts[k + 1] as f64;
    }
    cov = (&cov + cov.transpose()) * 0.5;
    for k in 0..m - 1 {
        if cov[(k, k)] <= 1e-9 * raw[(k, k)] {
            for l in 0..m - 1 {
                cov[(k, l)] = 0.0;
                cov[(l, k)] = 0.0;
            }
        }
    }
    Ok(CovarianceEstimate {
        method: CovMethod::QuasiHessian,
        se_target: raw[(m - 2, m - 2)].sqrt(),
        se_fixed: Some(cov[(m - 2, m - 2)].sqrt()),
        cov: to_rows(&raw),
        cov_fixed: Some(to_rows(&cov)),
        interval: None,
    })
}

/// What a bootstrap replicate recomputes.
#[derive(Debug, Clone, PartialEq)]
pub enum BootstrapTarget {
    /// Every `log Z_k`, `k >= 1`, by reweighting to each rung; the target SE
    /// is that of the last rung.
    Rungs,
    /// A single reweighted evidence with per-draw `log(numerator / prior)`.
    Reweighted(Vec<f64>),
}

/// Symmetric square root with negative eigenvalues clipped.
fn psd_sqrt(cov: &[Vec<f64>]) -> DMatrix<f64> {
    let d = cov.len();
    let a = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let eig = SymmetricEigen::new(a);
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// Resamples rows with replacement within each label group, perturbs the
/// normalizers by a draw from `N(0, perturb_cov)`, and recomputes the target
/// by reweighting the pseudo-mixture.
pub fn bootstrap_se(
    w: &LogWeightMatrix,
    normalizers: &LogNormalizers,
    perturb_cov: &[Vec<f64>],
    b: usize,
    seed: u64,
    target: &BootstrapTarget,
) -> Result<CovarianceEstimate> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs B >= {MIN_BOOTSTRAP}, got {b}"
        )));
    }
    let m = w.m();
    if perturb_cov.len() != m - 1 {
        return Err(Error::InvalidArgument(
            "perturbation covariance has wrong size".into(),
        ));
    }
    if let BootstrapTarget::Reweighted(r) = target {
        if r.len() != w.n() {
            return Err(Error::InvalidArgument(
                "one target ratio per draw required".into(),
            ));
        }
    }
    let root = psd_sqrt(perturb_cov);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &l) in w.labels().iter().enumerate() {
        groups[l].push(i);
    }

    let reps: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(seed, "bootstrap", rep as u64);
            let mut idx = Vec::with_capacity(w.n());
            for g in &groups {
                for _ in 0..g.len() {
                    idx.push(*g.choose(&mut rng).expect("nonempty group"));
                }
            }
            let eps = DVector::from_fn(m - 1, |_, _| StandardNormal.sample(&mut rng));
            let shift = &root * eps;
            let mut log_z = normalizers.log_z.clone();
            for k in 1..m {
                log_z[k] += shift[k - 1];
            }
            let sub = w.select_rows(&idx);
            let d = log_denominators(&sub, &log_z);
            match target {
                BootstrapTarget::Rungs => (1..m)
                    .map(|k| logsumexp_iter((0..sub.n()).map(|i| sub.get(i, k) - d[i])))
                    .collect(),
                BootstrapTarget::Reweighted(r) => {
                    vec![logsumexp_iter(idx.iter().zip(&d).map(|(&i, di)| r[i] - di))]
                }
            }
        })
        .collect();

    let dim = reps[0].len();
    let means: Vec<f64> = (0..dim)
        .map(|k| reps.iter().map(|r| r[k]).sum::<f64>() / b as f64)
        .collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for r in &reps {
        for k in 0..dim {
            for l in 0..dim {
                cov[k][l] += (r[k] - means[k]) * (r[l] - means[l]) / (b - 1) as f64;
            }
        }
    }
    let last: Vec<f64> = reps.iter().map(|r| r[dim - 1]).collect();
    Ok(CovarianceEstimate {
        method: CovMethod::Bootstrap,
        cov,
        cov_fixed: None,
        se_target: sample_sd(&last),
        se_fixed: None,
        interval: Some((quantile(&last, 0.025), quantile(&last, 0.975))),
    })
}

/// Kong's effective sample size `1 / sum u_i^2` of normalized weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let norm = logsumexp(log_weights);
    if norm == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "ESS needs at least one positive weight".into(),
        ));
    }
    let sq: f64 = log_weights.iter().map(|l| (2.0 * (l - norm)).exp()).sum();
    Ok(1.0 / sq)
}
