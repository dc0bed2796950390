//! Importance reweighting of a normalized pseudo-mixture to other targets,
//! reusing cached likelihoods so prior changes cost no new likelihood calls.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::LogWeightMatrix;
use crate::error::{Error, Result};
use crate::estimators::{log_denominators, LogNormalizers, PseudoMixture};
use crate::model::TargetModel;
use crate::numeric::logsumexp_iter;
use crate::sampler::DrawPool;
use crate::uncertainty::{bootstrap_se, ess, membership, BootstrapTarget};

/// Reweighted estimates with an ESS below this are flagged unstable.
pub const ESS_WARNING: f64 = 10.0;

type LogNumerator = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// An unnormalized target density, given as `log(L_alt(theta) pi_alt(theta))`
/// computed from the draw and its cached full-data log-likelihood.
#[derive(Clone)]
pub struct ReweightTarget {
    pub description: String,
    log_numerator: Arc<LogNumerator>,
}

impl fmt::Debug for ReweightTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReweightTarget")
            .field("description", &self.description)
            .finish_non_exhaustive()
    }
}

impl ReweightTarget {
    pub fn new<F>(description: impl Into<String>, log_numerator: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            description: description.into(),
            log_numerator: Arc::new(log_numerator),
        }
    }

    /// Same likelihood, different prior.
    pub fn alternative_prior<F>(description: impl Into<String>, log_prior: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(description, move |theta, log_lik| {
            let lp = log_prior(theta);
            if lp == f64::NEG_INFINITY {
                lp
            } else {
                log_lik + lp
            }
        })
    }

    /// General form: a base-prior numerator times a log Radon–Nikodym
    /// derivative `log d(pi_alt)/d(pi)`.
    pub fn with_log_derivative<F>(description: impl Into<String>, log_derivative: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(description, move |theta, log_lik| {
            log_lik + log_derivative(theta)
        })
    }

    pub fn log_numerator(&self, theta: &[f64], log_lik: f64) -> f64 {
        (self.log_numerator)(theta, log_lik)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightEstimate {
    pub log_z: f64,
    pub ess: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    /// ESS fell below [`ESS_WARNING`].
    pub unstable: bool,
}

/// Per-draw `log(numerator / pi)` for a target.
pub fn target_log_ratios<M: TargetModel + ?Sized>(
    w: &LogWeightMatrix,
    pool: &DrawPool,
    model: &M,
    target: &ReweightTarget,
) -> Result<Vec<f64>> {
    if pool.len() != w.n() {
        return Err(Error::InvalidArgument(
            "pool and weight matrix differ in size".into(),
        ));
    }
    let log_lik = w
        .log_likelihoods()
        .ok_or_else(|| Error::InvalidArgument("reweighting needs cached log-likelihoods".into()))?;
    pool.draws
        .par_iter()
        .zip(log_lik)
        .enumerate()
        .map(|(i, (theta, &ll))| {
            let lp = model.log_prior(theta);
            if lp == f64::NEG_INFINITY {
                return Err(Error::OutsideSupport { index: i });
            }
            let num = target.log_numerator(theta, ll);
            if num.is_nan() || num == f64::INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "target numerator is {num} at draw {i}"
                )));
            }
            Ok(num - lp)
        })
        .collect()
}

/// `log Z_alt` and ESS from per-draw log ratios.
pub fn reweight_from_ratios(
    p: &PseudoMixture,
    w: &LogWeightMatrix,
    log_ratio: &[f64],
) -> Result<(f64, f64)> {
    if log_ratio.len() != w.n() {
        return Err(Error::InvalidArgument(
            "one log ratio per draw required".into(),
        ));
    }
    let u: Vec<f64> = (0..w.n())
        .map(|i| log_ratio[i] - p.log_density(w.row(i)))
        .collect();
    let log_z = logsumexp_iter(u.iter().copied()) - (w.n() as f64).ln();
    Ok((log_z, ess(&u)?))
}

pub fn reweight_evidence<M: TargetModel + ?Sized>(
    p: &PseudoMixture,
    w: &LogWeightMatrix,
    pool: &DrawPool,
    model: &M,
    target: &ReweightTarget,
) -> Result<ReweightEstimate> {
    let r = target_log_ratios(w, pool, model, target)?;
    let (log_z, ess) = reweight_from_ratios(p, w, &r)?;
    Ok(ReweightEstimate {
        log_z,
        ess,
        se: None,
        interval: None,
        unstable: ess < ESS_WARNING,
    })
}

/// [`reweight_evidence`] with a perturbed-bootstrap SE and percentile interval.
#[allow(clippy::too_many_arguments)]
pub fn reweight_evidence_with_se<M: TargetModel + ?Sized>(
    w: &LogWeightMatrix,
    normalizers: &LogNormalizers,
    perturb_cov: &[Vec<f64>],
    pool: &DrawPool,
    model: &M,
    target: &ReweightTarget,
    b: usize,
    seed: u64,
) -> Result<ReweightEstimate> {
    let p = PseudoMixture::new(w.counts(), normalizers);
    let r = target_log_ratios(w, pool, model, target)?;
    let (log_z, ess) = reweight_from_ratios(&p, w, &r)?;
    let boot = bootstrap_se(
        w,
        normalizers,
        perturb_cov,
        b,
        seed,
        &BootstrapTarget::Reweighted(r),
    )?;
    Ok(ReweightEstimate {
        log_z,
        ess,
        se: Some(boot.se_target),
        interval: boot.interval,
        unstable: ess < ESS_WARNING,
    })
}

/// Self-normalized estimate of `E_target[f]` and its ESS.
pub fn reweight_posterior_expectation<M, F>(
    p: &PseudoMixture,
    w: &LogWeightMatrix,
    pool: &DrawPool,
    model: &M,
    f: F,
    target: &ReweightTarget,
) -> Result<(f64, f64)>
where
    M: TargetModel + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    let r = target_log_ratios(w, pool, model, target)?;
    let values: Vec<f64> = pool.draws.iter().map(|t| f(t)).collect();
    expectation_from_ratios(p, w, &r, &values)
}

pub fn expectation_from_ratios(
    p: &PseudoMixture,
    w: &LogWeightMatrix,
    log_ratio: &[f64],
    values: &[f64],
) -> Result<(f64, f64)> {
    let u: Vec<f64> = (0..w.n())
        .map(|i| log_ratio[i] - p.log_density(w.row(i)))
        .collect();
    let norm = logsumexp_iter(u.iter().copied());
    if norm == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "target has no mass on the pooled draws".into(),
        ));
    }
    let est = u
        .iter()
        .zip(values)
        .filter(|(l, _)| **l > f64::NEG_INFINITY)
        .map(|(l, v)| (l - norm).exp() * v)
        .sum();
    Ok((est, ess(&u)?))
}

/// Delta-method SE of a reweighted log evidence: the normalizer covariance
/// pushed through `d log Z_alt / d log Z_k = sum_i u_i pi_k(theta_i)`, plus
/// the plain importance-sampling variance `1/ESS - 1/n`.
pub fn delta_method_se(
    w: &LogWeightMatrix,
    normalizers: &LogNormalizers,
    cov: &[Vec<f64>],
    log_ratio: &[f64],
) -> f64 {
    let (n, m) = (w.n(), w.m());
    let d = log_denominators(w, &normalizers.log_z);
    let u: Vec<f64> = (0..n).map(|i| log_ratio[i] - d[i]).collect();
    let norm = logsumexp_iter(u.iter().copied());
    let u: Vec<f64> = u.iter().map(|l| (l - norm).exp()).collect();
    let pi = membership(w, &normalizers.log_z);
    let g: Vec<f64> = (1..m)
        .map(|k| (0..n).map(|i| u[i] * pi[i * m + k]).sum())
        .collect();
    let mut var = 0.0;
    for a in 0..m - 1 {
        for b in 0..m - 1 {
            var += g[a] * cov[a][b] * g[b];
        }
    }
    var += u.iter().map(|x| x * x).sum::<f64>() - 1.0 / n as f64;
    var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tests::two_state_toy;
    use crate::estimators::{recursive_normalize, DEFAULT_MAX_ITER};
    use crate::model::{BoxBounds, Support};
    use crate::seed::Rng;

    /// Uniform prior on the two-point space, encoded as a 1-d coordinate:
    /// 0 for `a`, 1 for `b`.
    struct TwoPoint;

    impl TargetModel for TwoPoint {
        fn dim(&self) -> usize {
            1
        }
        fn support(&self) -> Support {
            Support::Box(BoxBounds::new(vec![0.0], vec![1.0]))
        }
        fn log_prior(&self, _: &[f64]) -> f64 {
            0.5f64.ln()
        }
        fn log_likelihood(&self, theta: &[f64]) -> f64 {
            if theta[0] == 0.0 {
                2f64.ln()
            } else {
                0.5f64.ln()
            }
        }
        fn sample_prior(&self, _: &mut Rng) -> Vec<f64> {
            unreachable!()
        }
    }

    fn toy_setup() -> (LogWeightMatrix, DrawPool, LogNormalizers) {
        let w = two_state_toy();
        let draws: Vec<Vec<f64>> = (0..w.n())
            .map(|i| vec![if w.get(i, 1) > 0.0 { 0.0 } else { 1.0 }])
            .collect();
        let ll: Vec<f64> = draws.iter().map(|d| TwoPoint.log_likelihood(d)).collect();
        let w = w.with_log_likelihoods(ll);
        let pool = DrawPool::new(draws, w.labels().to_vec(), 2).unwrap();
        let z = recursive_normalize(&w, 1e-14, DEFAULT_MAX_ITER).unwrap();
        (w, pool, z)
    }

    #[test]
    fn self_reweighting_reproduces_rung_normalizers() {
        let (w, pool, z) = toy_setup();
        let p = PseudoMixture::new(w.counts(), &z);
        let own = ReweightTarget::new("posterior", |_, ll| ll + 0.5f64.ln());
        let est = reweight_evidence(&p, &w, &pool, &TwoPoint, &own).unwrap();
        assert!((est.log_z - z.log_z[1]).abs() < 1e-10);
        let prior = ReweightTarget::new("prior", |_, _| 0.5f64.ln());
        let lz0 = reweight_evidence(&p, &w, &pool, &TwoPoint, &prior)
            .unwrap()
            .log_z;
        assert!(lz0.abs() < 1e-10);
    }

    #[test]
    fn hand_computed_alternative() {
        // p/pi is 12/9 on a and 6/9 on b; six a's and three b's.
        // Ratios 3 on a and 1 on b give (6 * 3 * 3/4 + 3 * 1 * 3/2) / 9 = 2.
        let (w, pool, z) = toy_setup();
        let p = PseudoMixture::new(w.counts(), &z);
        let t = ReweightTarget::new("3:1", |theta, _| {
            if theta[0] == 0.0 {
                3f64.ln() + 0.5f64.ln()
            } else {
                0.5f64.ln()
            }
        });
        let est = reweight_evidence(&p, &w, &pool, &TwoPoint, &t).unwrap();
        assert!((est.log_z - 2f64.ln()).abs() < 1e-12, "{}", est.log_z);
        assert!(!est.unstable || est.ess < ESS_WARNING);
    }

    #[test]
    fn expectation_of_one_is_one() {
        let (w, pool, z) = toy_setup();
        let p = PseudoMixture::new(w.counts(), &z);
        let t = ReweightTarget::new("posterior", |_, ll| ll);
        let (e, ess) =
            reweight_posterior_expectation(&p, &w, &pool, &TwoPoint, |_| 1.0, &t).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        assert!(ess > 1.0 && ess <= w.n() as f64);
        // Posterior mass on `a` is 2 * 0.5 / 1.25 = 0.8.
        let (pa, _) = reweight_posterior_expectation(
            &p,
            &w,
            &pool,
            &TwoPoint,
            |t| (t[0] == 0.0) as u8 as f64,
            &t,
        )
        .unwrap();
        assert!((pa - 0.8).abs() < 1e-10, "{pa}");
    }

    #[test]
    fn low_ess_is_flagged_not_fatal() {
        let (w, pool, z) = toy_setup();
        let p = PseudoMixture::new(w.counts(), &z);
        let t = ReweightTarget::new(
            "spike",
            |theta, _| if theta[0] == 0.0 { 0.0 } else { -50.0 },
        );
        let est = reweight_evidence(&p, &w, &pool, &TwoPoint, &t).unwrap();
        assert!(est.unstable);
        assert!(est.log_z.is_finite());
    }

    #[test]
    fn bootstrap_se_is_attached() {
        let (w, pool, z) = toy_setup();
        let cov = vec![vec![0.0]];
        let t = ReweightTarget::new("posterior", |_, ll| ll + 0.5f64.ln());
        let est = reweight_evidence_with_se(&w, &z, &cov, &pool, &TwoPoint, &t, 200, 3).unwrap();
        assert!(est.se.unwrap() > 0.0);
        let (lo, hi) = est.interval.unwrap();
        assert!(lo <= hi);
    }

    #[test]
    fn delta_se_for_rung_target_is_close_to_hessian_plus_is_term() {
        let (w, _, z) = toy_setup();
        let cov = vec![vec![0.0]];
        let r: Vec<f64> = (0..w.n()).map(|i| w.get(i, 1)).collect();
        let se = delta_method_se(&w, &z, &cov, &r);
        let d = log_denominators(&w, &z.log_z);
        let lw: Vec<f64> = (0..w.n()).map(|i| r[i] - d[i]).collect();
        let expect = (1.0 / ess(&lw).unwrap() - 1.0 / w.n() as f64).sqrt();
        assert!((se - expect).abs() < 1e-12);
    }
}
