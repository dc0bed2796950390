//! Target models: prior × likelihood over a parameter space.

mod galaxy;
mod mixture;

pub use galaxy::{load_galaxy_file, parse_galaxy_text, GalaxyVariant};
pub(crate) use mixture::gamma_draw;
pub use mixture::{BetaPrior, MixtureHyper, MixtureModel, MixtureParams};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::simpson_log_integral;
use crate::seed::Rng;

/// Axis-aligned box `[lower_d, upper_d]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn log_volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Box(BoxBounds),
    Unbounded,
}

/// A Bayesian target: a proper prior and a likelihood, both in log space.
///
/// `log_prior` is finite on the support and `-inf` off it; `log_likelihood`
/// returns `-inf` where the likelihood vanishes and never errors.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    fn support(&self) -> Support;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn log_likelihood(&self, theta: &[f64]) -> f64;

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64>;

    /// Number of observations, for models that admit partial-data bridges.
    fn n_observations(&self) -> Option<usize> {
        None
    }

    /// Log-likelihoods of the first `r` observations (in the model's fixed
    /// subset order) for each `r` in `rs`.
    fn partial_log_likelihoods(&self, _theta: &[f64], _rs: &[usize]) -> Result<Vec<f64>> {
        Err(Error::UnsupportedModel(
            "model does not support partial-data likelihoods".into(),
        ))
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        self.log_prior(theta) > f64::NEG_INFINITY
    }
}

/// Banana-shaped mock likelihood on `[-0.5, 1.5]^2` with a uniform prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct BananaModel;

impl BananaModel {
    pub const LOWER: f64 = -0.5;
    pub const UPPER: f64 = 1.5;

    pub fn bounds() -> BoxBounds {
        BoxBounds::new(vec![Self::LOWER; 2], vec![Self::UPPER; 2])
    }
}

pub fn banana_log_likelihood(theta: &[f64]) -> f64 {
    let a = 10.0 * (0.45 - theta[0]);
    let b = 20.0 * (theta[1] / 2.0 - theta[0].powi(4));
    -a * a / 4.0 - b * b
}

impl TargetModel for BananaModel {
    fn dim(&self) -> usize {
        2
    }

    fn support(&self) -> Support {
        Support::Box(Self::bounds())
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if Self::bounds().contains(theta) {
            -(4f64.ln())
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        banana_log_likelihood(theta)
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        Self::bounds().sample_uniform(rng)
    }
}

/// Uniform prior on a box with an arbitrary log-likelihood.
pub struct UniformBoxModel<F> {
    bounds: BoxBounds,
    log_lik: F,
}

impl<F> UniformBoxModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(bounds: BoxBounds, log_lik: F) -> Self {
        Self { bounds, log_lik }
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }
}

impl<F> TargetModel for UniformBoxModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn support(&self) -> Support {
        Support::Box(self.bounds.clone())
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.bounds.contains(theta) {
            -self.bounds.log_volume()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (self.log_lik)(theta)
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        self.bounds.sample_uniform(rng)
    }
}

/// Brute-force log-evidence by tensor Simpson quadrature over the prior box.
pub fn quadrature_evidence<M: TargetModel + ?Sized>(
    model: &M,
    grid_points_per_dim: usize,
) -> Result<f64> {
    let bounds = match model.support() {
        Support::Box(b) => b,
        Support::Unbounded => {
            return Err(Error::UnsupportedModel(
                "quadrature needs a bounded box support".into(),
            ))
        }
    };
    if model.dim() > 3 {
        return Err(Error::UnsupportedModel(format!(
            "quadrature limited to dimension <= 3, model has {}",
            model.dim()
        )));
    }
    simpson_log_integral(&bounds.lower, &bounds.upper, grid_points_per_dim, |t| {
        model.log_prior(t) + model.log_likelihood(t)
    })
}
