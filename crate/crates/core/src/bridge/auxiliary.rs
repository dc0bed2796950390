//! Data-driven auxiliary reference densities centred on the posterior mode.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxBounds, Support, TargetModel};
use crate::numeric::simpson_log_integral;
use crate::optim::{central_hessian, nelder_mead, NelderMeadOptions};
use crate::seed::Rng;

/// Draws outside the box are rejected; give up after this many in a row.
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxFamily {
    TruncatedNormal,
    /// Multivariate Student-t with one degree of freedom.
    TruncatedStudentTNu1,
}

impl std::str::FromStr for AuxFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated_normal" | "normal" => Ok(AuxFamily::TruncatedNormal),
            "truncated_student_t_nu1" | "student_t" => Ok(AuxFamily::TruncatedStudentTNu1),
            other => Err(Error::Config(format!("unknown auxiliary family `{other}`"))),
        }
    }
}

/// A location-scale density truncated to the prior box.
///
/// `precision` is the curvature of `-log(prior * likelihood)` at the mode; the
/// Normal family uses it as its precision matrix and the Student-t family as
/// the inverse of its scale matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryDensity {
    pub family: AuxFamily,
    pub mode: Vec<f64>,
    pub precision: Vec<Vec<f64>>,
    pub bounds: BoxBounds,
    /// `log` of the untruncated kernel's integral over the box.
    pub log_norm_const: f64,
    /// Set when the curvature had to be regularized to be positive definite.
    pub regularized: bool,
}

impl AuxiliaryDensity {
    pub fn new(
        family: AuxFamily,
        mode: Vec<f64>,
        precision: DMatrix<f64>,
        bounds: BoxBounds,
        regularized: bool,
    ) -> Result<Self> {
        let d = mode.len();
        if precision.nrows() != d || bounds.dim() != d {
            return Err(Error::InvalidArgument(
                "auxiliary dimension mismatch".into(),
            ));
        }
        if precision.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "auxiliary precision is not positive definite".into(),
            ));
        }
        let mut aux = Self {
            family,
            mode,
            precision: (0..d)
                .map(|i| (0..d).map(|j| precision[(i, j)]).collect())
                .collect(),
            bounds,
            log_norm_const: 0.0,
            regularized,
        };
        let n = match d {
            1 => 4001,
            2 => 801,
            3 => 121,
            _ => {
                return Err(Error::UnsupportedModel(format!(
                    "auxiliary normalization by quadrature needs dimension <= 3, got {d}"
                )))
            }
        };
        aux.log_norm_const = simpson_log_integral(&aux.bounds.lower, &aux.bounds.upper, n, |t| {
            aux.log_kernel(t)
        })?;
        Ok(aux)
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    fn precision_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.precision[i][j])
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision_matrix()
            .try_inverse()
            .expect("precision is positive definite")
    }

    fn quad_form(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            let di = theta[i] - self.mode[i];
            for j in 0..d {
                q += di * self.precision[i][j] * (theta[j] - self.mode[j]);
            }
        }
        q
    }

    /// Unnormalized log kernel, ignoring the box.
    fn log_kernel(&self, theta: &[f64]) -> f64 {
        let q = self.quad_form(theta);
        match self.family {
            AuxFamily::TruncatedNormal => -0.5 * q,
            AuxFamily::TruncatedStudentTNu1 => -0.5 * (1.0 + self.dim() as f64) * q.ln_1p(),
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.bounds.contains(theta) {
            return f64::NEG_INFINITY;
        }
        self.log_kernel(theta) - self.log_norm_const
    }

    /// Exact draw by rejection from the untruncated distribution.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let chol = Cholesky::new(self.precision_matrix()).expect("positive definite");
        let l = chol.l();
        for _ in 0..MAX_REJECTIONS {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            // If P = L L^T then x = L^{-T} z has covariance P^{-1}.
            let mut x = l
                .transpose()
                .solve_upper_triangular(&z)
                .expect("nonsingular");
            if self.family == AuxFamily::TruncatedStudentTNu1 {
                let w: f64 = ChiSquared::new(1.0).expect("valid").sample(rng);
                x /= w.sqrt();
            }
            let theta: Vec<f64> = (0..d).map(|i| self.mode[i] + x[i]).collect();
            if self.bounds.contains(&theta) {
                return theta;
            }
        }
        panic!("auxiliary density places almost no mass inside the box");
    }
}

/// Mode and curvature of the unnormalized posterior of a box-supported model.
#[derive(Debug, Clone)]
pub struct ModeFit {
    pub mode: Vec<f64>,
    pub precision: DMatrix<f64>,
    pub regularized: bool,
}

pub fn fit_mode<M: TargetModel + ?Sized>(model: &M) -> Result<ModeFit> {
    let bounds = match model.support() {
        Support::Box(b) => b,
        Support::Unbounded => {
            return Err(Error::UnsupportedModel(
                "auxiliary densities need a bounded box support".into(),
            ))
        }
    };
    let d = model.dim();
    let objective = |t: &[f64]| -(model.log_prior(t) + model.log_likelihood(t));

    // Multi-start from a regular interior grid (4 points per axis plus centre).
    let per_axis: usize = 4;
    let mut starts = vec![bounds.center()];
    for flat in 0..per_axis.pow(d as u32) {
        let mut rem = flat;
        let start: Vec<f64> = (0..d)
            .map(|i| {
                let idx = rem % per_axis;
                rem /= per_axis;
                let frac = (idx as f64 + 0.5) / per_axis as f64;
                bounds.lower[i] + frac * (bounds.upper[i] - bounds.lower[i])
            })
            .collect();
        starts.push(start);
    }
    let opts = NelderMeadOptions {
        max_iter: 20_000,
        f_tol: 1e-15,
        x_tol: 1e-11,
        initial_step: (0..d)
            .map(|i| 0.05 * (bounds.upper[i] - bounds.lower[i]))
            .collect(),
    };
    let best = starts
        .iter()
        .map(|s| nelder_mead(objective, s, &opts))
        .filter(|m| m.converged && m.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| Error::Optimization("no multi-start run converged".into()))?;
    // Restart once from the winner to shake off a collapsed simplex.
    let polished = nelder_mead(objective, &best.x, &opts);
    let mode = if polished.converged && polished.f <= best.f {
        polished.x
    } else {
        best.x
    };

    let h: Vec<f64> = mode.iter().map(|m| (1e-4 * m.abs()).max(1e-4)).collect();
    let mut precision = central_hessian(objective, &mode, &h);
    let mut regularized = false;
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization(
            "non-finite curvature at the mode (mode on the support boundary?)".into(),
        ));
    }
    if precision.clone().cholesky().is_none() {
        let trace = precision.trace().abs().max(f64::MIN_POSITIVE);
        let eps = 1e-6 * trace / d as f64;
        let mut bump = eps;
        loop {
            let candidate = &precision + DMatrix::identity(d, d) * bump;
            if candidate.clone().cholesky().is_some() {
                precision = candidate;
                break;
            }
            bump *= 10.0;
            if !bump.is_finite() {
                return Err(Error::Optimization("cannot regularize curvature".into()));
            }
        }
        regularized = true;
        log::warn!("curvature at mode not positive definite; added {bump:e} I");
    }
    Ok(ModeFit {
        mode,
        precision,
        regularized,
    })
}

pub fn auxiliary_from_mode<M: TargetModel + ?Sized>(
    model: &M,
    family: AuxFamily,
) -> Result<AuxiliaryDensity> {
    let fit = fit_mode(model)?;
    let bounds = match model.support() {
        Support::Box(b) => b,
        Support::Unbounded => unreachable!("checked by fit_mode"),
    };
    AuxiliaryDensity::new(family, fit.mode, fit.precision, bounds, fit.regularized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{banana_log_likelihood, BananaModel, UniformBoxModel};
    use rand::SeedableRng;

    #[test]
    fn banana_mode_matches_grid_search() {
        let aux = auxiliary_from_mode(&BananaModel, AuxFamily::TruncatedNormal).unwrap();
        // Coarse grid, then a 1e-4 grid around the coarse winner.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=200 {
            for j in 0..=200 {
                let t = [-0.5 + 0.01 * i as f64, -0.5 + 0.01 * j as f64];
                let v = banana_log_likelihood(&t);
                if v > best.0 {
                    best = (v, t[0], t[1]);
                }
            }
        }
        let (c0, c1) = (best.1, best.2);
        for i in -100..=100 {
            for j in -100..=100 {
                let t = [c0 + 1e-4 * i as f64, c1 + 1e-4 * j as f64];
                let v = banana_log_likelihood(&t);
                if v > best.0 {
                    best = (v, t[0], t[1]);
                }
            }
        }
        assert!(
            (aux.mode[0] - best.1).abs() <= 1e-4,
            "{:?} {:?}",
            aux.mode,
            best
        );
        assert!(
            (aux.mode[1] - best.2).abs() <= 1e-4,
            "{:?} {:?}",
            aux.mode,
            best
        );
        assert!(!aux.regularized);
    }

    #[test]
    fn gaussian_likelihood_recovers_its_covariance() {
        let s2 = 0.04;
        let m = UniformBoxModel::new(BoxBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]), move |t| {
            -0.5 * (t[0] * t[0] + t[1] * t[1]) / s2
        });
        let aux = auxiliary_from_mode(&m, AuxFamily::TruncatedNormal).unwrap();
        assert!(aux.mode.iter().all(|x| x.abs() < 1e-5), "{:?}", aux.mode);
        let cov = aux.covariance();
        assert!((cov[(0, 0)] - s2).abs() < 1e-3);
        assert!((cov[(1, 1)] - s2).abs() < 1e-3);
        assert!(cov[(0, 1)].abs() < 1e-3);
    }

    #[test]
    fn families_share_the_mode_fit() {
        let a = auxiliary_from_mode(&BananaModel, AuxFamily::TruncatedNormal).unwrap();
        let b = auxiliary_from_mode(&BananaModel, AuxFamily::TruncatedStudentTNu1).unwrap();
        assert_eq!(a.mode, b.mode);
        assert_eq!(a.precision, b.precision);
        assert_ne!(a.family, b.family);
    }

    #[test]
    fn densities_integrate_to_one_on_the_box() {
        for family in [AuxFamily::TruncatedNormal, AuxFamily::TruncatedStudentTNu1] {
            let aux = auxiliary_from_mode(&BananaModel, family).unwrap();
            let b = BananaModel::bounds();
            let z = simpson_log_integral(&b.lower, &b.upper, 1201, |t| aux.log_density(t)).unwrap();
            assert!(z.abs() < 1e-4, "{family:?}: {z}");
        }
    }

    #[test]
    fn samples_stay_in_box_and_centre_on_mode() {
        let aux = auxiliary_from_mode(&BananaModel, AuxFamily::TruncatedNormal).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..20_000).map(|_| aux.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| aux.bounds.contains(x)));
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        let sd0 = aux.covariance()[(0, 0)].sqrt();
        assert!((m0 - aux.mode[0]).abs() < 4.0 * sd0 / (xs.len() as f64).sqrt());
    }

    #[test]
    fn unbounded_models_are_rejected() {
        let m =
            crate::model::MixtureModel::new(vec![1.0], 1, crate::model::MixtureHyper::chib(), 0)
                .unwrap();
        assert!(auxiliary_from_mode(&m, AuxFamily::TruncatedNormal).is_err());
    }
}
