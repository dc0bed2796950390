use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::ln_gamma;
use crate::seed::Rng;

/// Smallest allowed ratio of minor to major semi-axis.
const AXIS_FLOOR: f64 = 1e-6;

/// `{x : (x - c)^T A (x - c) <= 1}` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vec<f64>,
    /// `W = diag(sqrt(mu)) V^T` from `A = V diag(mu) V^T`, row-major, so the
    /// quadratic form is the sum of squares `|W (x - c)|^2`.
    whiten: Vec<f64>,
    /// `W^{-1}`, row-major: maps the unit ball onto the ellipsoid.
    transform: Vec<f64>,
    log_volume: f64,
}

/// Log volume of the unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl Ellipsoid {
    pub fn new(center: Vec<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if shape.nrows() != d || shape.ncols() != d {
            return Err(Error::InvalidArgument(
                "shape matrix does not match the center".into(),
            ));
        }
        let eig = SymmetricEigen::new((&shape + shape.transpose()) * 0.5);
        if eig
            .eigenvalues
            .iter()
            .any(|&mu| !(mu > 0.0 && mu.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "shape matrix is not positive definite".into(),
            ));
        }
        let root = eig.eigenvalues.map(f64::sqrt);
        let whiten = DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
        let transform = &eig.eigenvectors * DMatrix::from_diagonal(&root.map(|r| 1.0 / r));
        let log_det: f64 = eig.eigenvalues.iter().map(|mu| mu.ln()).sum();
        Ok(Self {
            center,
            whiten: row_major(&whiten),
            transform: row_major(&transform),
            log_volume: log_unit_ball_volume(d) - 0.5 * log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// The shape matrix `A = W^T W`.
    pub fn shape(&self) -> DMatrix<f64> {
        let d = self.dim();
        let w = DMatrix::from_row_slice(d, d, &self.whiten);
        w.transpose() * w
    }

    pub fn log_volume(&self) -> f64 {
        self.log_volume
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for k in 0..d {
            let row = &self.whiten[k * d..(k + 1) * d];
            let mut s = 0.0;
            for j in 0..d {
                s += row[j] * (x[j] - self.center[j]);
            }
            q += s * s;
        }
        q
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.quad_form(x) <= 1.0
    }

    /// Scales every axis by `f`; the volume grows by `f^d`.
    pub fn expanded(&self, f: f64) -> Self {
        let d = self.dim();
        Self {
            center: self.center.clone(),
            whiten: self.whiten.iter().map(|a| a / f).collect(),
            transform: self.transform.iter().map(|a| a * f).collect(),
            log_volume: self.log_volume + d as f64 * f.ln(),
        }
    }

    /// Semi-axis lengths, ascending.
    pub fn semi_axes(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.shape());
        let mut axes: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
        axes.sort_by(f64::total_cmp);
        axes
    }

    /// A uniform draw from the interior.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        let u: Vec<f64> = z.iter().map(|v| v / norm * radius).collect();
        (0..d)
            .map(|i| {
                let row = &self.transform[i * d..(i + 1) * d];
                self.center[i] + row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Minimum-volume enclosing ellipsoid by Khachiyan's algorithm with away
/// steps (Todd and Yildirim).
///
/// Stops once every point satisfies `M_i <= (1 + tol)(d + 1)` and every
/// support point `M_i >= (1 - tol)(d + 1)`, then rescales so all points lie
/// inside. Flat point sets are inflated so the minor semi-axis is at least
/// `1e-6` of the major one.
pub fn mvee(points: &[Vec<f64>], tol: f64) -> Result<Ellipsoid> {
    mvee_warm(points, tol, None).map(|(e, _)| e)
}

/// [`mvee`] started from the given point weights (for example those of a
/// slightly different point set); also returns the final weights.
pub fn mvee_warm(
    points: &[Vec<f64>],
    tol: f64,
    init: Option<&[f64]>,
) -> Result<(Ellipsoid, Vec<f64>)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "MVEE needs at least two points".into(),
        ));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidArgument(
            "points must share a positive dimension".into(),
        ));
    }
    let dd = d + 1;
    // The weights are affine invariant; standardizing keeps the lifted
    // matrix well conditioned for tight clusters far from the origin.
    let mean: Vec<f64> = (0..d)
        .map(|a| points.iter().map(|p| p[a]).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|a| {
            let s = points
                .iter()
                .map(|p| (p[a] - mean[a]).abs())
                .fold(0.0, f64::max);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let q: Vec<f64> = points
        .iter()
        .flat_map(|p| {
            (0..d)
                .map(|a| (p[a] - mean[a]) / scale[a])
                .chain(std::iter::once(1.0))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut u = match init {
        Some(w) if w.len() == n && w.iter().all(|v| *v >= 0.0) && w.iter().sum::<f64>() > 0.0 => {
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect()
        }
        _ => vec![1.0 / n as f64; n],
    };
    let mut mval = vec![0.0; n];
    let target = dd as f64;
    for _ in 0..100_000 {
        let mut x = DMatrix::<f64>::zeros(dd, dd);
        for i in 0..n {
            let qi = &q[i * dd..(i + 1) * dd];
            for a in 0..dd {
                for b in 0..=a {
                    x[(a, b)] += u[i] * qi[a] * qi[b];
                }
            }
        }
        for a in 0..dd {
            for b in 0..a {
                x[(b, a)] = x[(a, b)];
            }
        }
        let ridge = 1e-12 * x.trace() / target;
        for a in 0..dd {
            x[(a, a)] += ridge;
        }
        let Some(xinv) = x.try_inverse() else { break };
        let (mut up, mut down) = (0, usize::MAX);
        for i in 0..n {
            let qi = &q[i * dd..(i + 1) * dd];
            let mut s = 0.0;
            for a in 0..dd {
                let mut r = 0.0;
                for b in 0..dd {
                    r += xinv[(a, b)] * qi[b];
                }
                s += qi[a] * r;
            }
            mval[i] = s;
            if s > mval[up] {
                up = i;
            }
            if u[i] > 0.0 && (down == usize::MAX || s < mval[down]) {
                down = i;
            }
        }
        if down == usize::MAX || !mval[up].is_finite() {
            break;
        }
        let eps_up = mval[up] / target - 1.0;
        // A lone support point cannot give weight away.
        let eps_down = if u[down] < 1.0 {
            1.0 - mval[down] / target
        } else {
            0.0
        };
        if eps_up <= tol && eps_down <= tol {
            break;
        }
        let (j, step) = if eps_up > eps_down {
            let m = mval[up];
            (up, (m - target) / (target * (m - 1.0)))
        } else {
            let m = mval[down];
            let raw = (m - target) / (target * (m - 1.0));
            let floor = -u[down] / (1.0 - u[down]);
            (down, raw.max(floor))
        };
        if !step.is_finite() || step == 0.0 {
            break;
        }
        u.iter_mut().for_each(|v| *v *= 1.0 - step);
        u[j] += step;
        if u[j] < 1e-300 {
            u[j] = 0.0;
        }
    }

    let center: Vec<f64> = (0..d)
        .map(|a| (0..n).map(|i| u[i] * points[i][a]).sum())
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += u[i] * (points[i][a] - center[a]) * (points[i][b] - center[b]);
            }
        }
    }
    cov *= d as f64;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("MVEE of coincident points".into()));
    }
    let floor = AXIS_FLOOR * AXIS_FLOOR * top;
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let shape = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let mut ell = Ellipsoid::new(center.clone(), shape.clone())?;
    let worst = points.iter().map(|p| ell.quad_form(p)).fold(0.0, f64::max);
    if worst > 1.0 {
        ell = Ellipsoid::new(center, shape / worst)?;
    }
    Ok((ell, u))
}
