//! Finite univariate Normal mixture in latent-allocation form.
//!
//! For fixed `k` the parameter vector is laid out as
//! `[phi_1..phi_k, mu_1..mu_k, tau_1..tau_k, beta]` with
//!
//! ```text
//! phi    ~ Dirichlet(1, ..., 1)
//! mu_j   ~ N(kappa, 1/xi)
//! tau_j  ~ Gamma(shape = alpha, rate = beta)
//! beta   ~ Gamma(shape = beta1, rate = beta2)   (or held fixed)
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{Support, TargetModel};
use crate::error::{Error, Result};
use crate::numeric::{gamma_log_pdf, ln_gamma, logsumexp, normal_log_pdf_precision};
use crate::seed::Rng;

const SIMPLEX_TOL: f64 = 1e-12;

/// Prior on the precision-rate hyperparameter `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPrior {
    Fixed { value: f64 },
    Gamma { shape: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureHyper {
    /// Location of the prior on component means.
    pub kappa: f64,
    /// Precision of the prior on component means.
    pub xi: f64,
    /// Shape of the Gamma prior on component precisions.
    pub alpha: f64,
    pub beta: BetaPrior,
    /// Poisson rate of the truncated prior on `k`.
    pub lambda: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl MixtureHyper {
    /// Defaults motivated by the survey selection function of the galaxy data.
    pub fn astronomical() -> Self {
        Self {
            kappa: 17.0,
            xi: 0.008,
            alpha: 2.0,
            beta: BetaPrior::Gamma {
                shape: 1.0,
                rate: 0.05,
            },
            lambda: 5.0,
            k_min: 3,
            k_max: 10,
        }
    }

    /// Priors of Chib (1995) for the three-component galaxy benchmark:
    /// `mu_j ~ N(20, 100)`, `sigma_j^2 ~ IG(3, 20)`, uniform Dirichlet weights.
    pub fn chib() -> Self {
        Self {
            kappa: 20.0,
            xi: 0.01,
            alpha: 3.0,
            beta: BetaPrior::Fixed { value: 20.0 },
            lambda: 5.0,
            k_min: 3,
            k_max: 3,
        }
    }

    /// Richardson & Green (1997) defaults: `kappa` at the data midrange,
    /// `xi = 1/R^2`, `alpha = 2`, `beta ~ Gamma(0.2, 10/R^2)`.
    pub fn richardson_green(data: &[f64]) -> Self {
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        Self {
            kappa: 0.5 * (lo + hi),
            xi: 1.0 / (range * range),
            alpha: 2.0,
            beta: BetaPrior::Gamma {
                shape: 0.2,
                rate: 10.0 / (range * range),
            },
            ..Self::astronomical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("mixture hyperparameter {what}")));
        if !(self.xi > 0.0) {
            return bad("xi must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        match self.beta {
            BetaPrior::Fixed { value } if !(value > 0.0) => {
                return bad("fixed beta must be positive")
            }
            BetaPrior::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return bad("beta hyperprior must have positive shape and rate")
            }
            _ => {}
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return bad("needs 1 <= k_min <= k_max");
        }
        Ok(())
    }

    /// Truncated-Poisson log prior on `k`, normalized over `[k_min, k_max]`.
    pub fn log_prior_k(&self, k: usize) -> f64 {
        if k < self.k_min || k > self.k_max {
            return f64::NEG_INFINITY;
        }
        let unnorm = |j: usize| j as f64 * self.lambda.ln() - ln_gamma(j as f64 + 1.0);
        let norm: Vec<f64> = (self.k_min..=self.k_max).map(unnorm).collect();
        unnorm(k) - logsumexp(&norm)
    }
}

/// Structured view of one fixed-`k` parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub beta: f64,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.k() + 1);
        v.extend_from_slice(&self.phi);
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.tau);
        v.push(self.beta);
        v
    }

    pub fn from_slice(theta: &[f64], k: usize) -> Self {
        assert_eq!(theta.len(), 3 * k + 1, "parameter vector length");
        Self {
            phi: theta[..k].to_vec(),
            mu: theta[k..2 * k].to_vec(),
            tau: theta[2 * k..3 * k].to_vec(),
            beta: theta[3 * k],
        }
    }

    fn check(&self) -> Result<()> {
        let sum: f64 = self.phi.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || self.phi.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mixture weights are not on the simplex (sum {sum})"
            )));
        }
        if self.tau.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("precisions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    data: Vec<f64>,
    k: usize,
    hyper: MixtureHyper,
    /// Fixed observation order; partial-data subsets are its prefixes.
    order: Vec<usize>,
}

impl MixtureModel {
    pub fn new(data: Vec<f64>, k: usize, hyper: MixtureHyper, subset_seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("mixture needs k >= 1".into()));
        }
        hyper.validate()?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = Rng::seed_from_u64(crate::seed::derive_seed(subset_seed, "subset-order", 0));
        order.shuffle(&mut rng);
        Ok(Self {
            data,
            k,
            hyper,
            order,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn hyper(&self) -> &MixtureHyper {
        &self.hyper
    }

    pub fn with_hyper(&self, hyper: MixtureHyper) -> Self {
        Self {
            hyper,
            ..self.clone()
        }
    }

    /// Observations in subset order: the first `r` form the partial-data set.
    pub fn ordered_data(&self) -> impl Iterator<Item = f64> + '_ {
        self.order.iter().map(move |&i| self.data[i])
    }

    pub fn subset(&self, r: usize) -> Result<Vec<f64>> {
        if r > self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "subset size {r} exceeds {} observations",
                self.data.len()
            )));
        }
        Ok(self.ordered_data().take(r).collect())
    }

    /// `log sum_j phi_j N(y | mu_j, 1/tau_j)` for each observation, in subset order.
    pub fn per_datum_log_density(&self, p: &MixtureParams) -> Vec<f64> {
        let comps: Vec<(f64, f64, f64)> = (0..p.k())
            .map(|j| (p.phi[j].ln(), p.mu[j], p.tau[j]))
            .collect();
        let mut buf = vec![0.0; comps.len()];
        self.ordered_data()
            .map(|y| {
                for (b, &(lphi, mu, tau)) in buf.iter_mut().zip(&comps) {
                    *b = lphi + normal_log_pdf_precision(y, mu, tau);
                }
                logsumexp(&buf)
            })
            .collect()
    }

    pub fn mixture_log_likelihood(&self, p: &MixtureParams) -> Result<f64> {
        p.check()?;
        Ok(self.per_datum_log_density(p).iter().sum())
    }

    pub fn partial_log_likelihood(&self, r: usize, p: &MixtureParams) -> Result<f64> {
        if r > self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "subset size {r} exceeds {} observations",
                self.data.len()
            )));
        }
        p.check()?;
        Ok(self.per_datum_log_density(p).iter().take(r).sum())
    }

    pub fn log_prior_params(&self, p: &MixtureParams) -> f64 {
        let h = &self.hyper;
        let sum: f64 = p.phi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.phi.iter().any(|&x| !(x > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let mut lp = ln_gamma(p.k() as f64);
        lp +=
            p.mu.iter()
                .map(|&m| normal_log_pdf_precision(m, h.kappa, h.xi))
                .sum::<f64>();
        lp += p
            .tau
            .iter()
            .map(|&t| gamma_log_pdf(t, h.alpha, p.beta))
            .sum::<f64>();
        lp += match h.beta {
            BetaPrior::Gamma { shape, rate } => gamma_log_pdf(p.beta, shape, rate),
            BetaPrior::Fixed { value } => {
                if p.beta == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        };
        lp
    }

    pub fn sample_prior_params(&self, rng: &mut Rng) -> MixtureParams {
        let h = &self.hyper;
        let beta = match h.beta {
            BetaPrior::Fixed { value } => value,
            BetaPrior::Gamma { shape, rate } => gamma_draw(rng, shape, rate),
        };
        let mut phi: Vec<f64> = (0..self.k).map(|_| gamma_draw(rng, 1.0, 1.0)).collect();
        let s: f64 = phi.iter().sum();
        phi.iter_mut().for_each(|x| *x /= s);
        let normal = Normal::new(h.kappa, 1.0 / h.xi.sqrt()).expect("valid normal");
        let mu = (0..self.k).map(|_| normal.sample(rng)).collect();
        let tau = (0..self.k)
            .map(|_| gamma_draw(rng, h.alpha, beta))
            .collect();
        MixtureParams { phi, mu, tau, beta }
    }
}

pub(crate) fn gamma_draw(rng: &mut Rng, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    // Guard against exact zeros from tiny shapes.
    g.sample(rng).max(f64::MIN_POSITIVE)
}

impl TargetModel for MixtureModel {
    fn dim(&self) -> usize {
        3 * self.k + 1
    }

    fn support(&self) -> Support {
        Support::Unbounded
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.log_prior_params(&MixtureParams::from_slice(theta, self.k))
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let p = MixtureParams::from_slice(theta, self.k);
        if p.tau.iter().any(|&t| !(t > 0.0)) || p.phi.iter().any(|&x| x < 0.0) {
            return f64::NEG_INFINITY;
        }
        self.per_datum_log_density(&p).iter().sum()
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        self.sample_prior_params(rng).to_vec()
    }

    fn n_observations(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn partial_log_likelihoods(&self, theta: &[f64], rs: &[usize]) -> Result<Vec<f64>> {
        let n = self.data.len();
        if let Some(&r) = rs.iter().find(|&&r| r > n) {
            return Err(Error::InvalidArgument(format!(
                "subset size {r} exceeds {n} observations"
            )));
        }
        let p = MixtureParams::from_slice(theta, self.k);
        let per = self.per_datum_log_density(&p);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in per {
            acc += v;
            prefix.push(acc);
        }
        Ok(rs.iter().map(|&r| prefix[r]).collect())
    }
}
