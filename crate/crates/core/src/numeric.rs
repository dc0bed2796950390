//! Log-space arithmetic and composite Simpson quadrature.

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    logsumexp_iter(xs.iter().copied())
}

pub fn logsumexp_iter<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = it.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-density of `N(mean, 1/precision)` at `x`.
pub fn normal_log_pdf_precision(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * d * d
}

/// Log-density of `Gamma(shape, rate)` at `x`.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Composite Simpson weights for `n` equally spaced nodes on `[a, b]`.
pub fn simpson_weights(n: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "Simpson rule needs an odd node count >= 3, got {n}"
        )));
    }
    let h = (b - a) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

/// Node positions matching [`simpson_weights`]. Endpoints are exact.
pub fn simpson_nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect()
}

/// `log ∫ exp(log_f)` over an axis-aligned box (dimension 1 to 3) by a
/// tensor-product composite Simpson rule with `n` nodes per axis.
pub fn simpson_log_integral<F>(lower: &[f64], upper: &[f64], n: usize, log_f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = lower.len();
    if dim == 0 || dim > 3 || upper.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "quadrature supports boxes of dimension 1..=3, got {dim}"
        )));
    }
    let weights: Vec<Vec<f64>> = (0..dim)
        .map(|d| simpson_weights(n, lower[d], upper[d]))
        .collect::<Result<_>>()?;
    let nodes: Vec<Vec<f64>> = (0..dim)
        .map(|d| simpson_nodes(n, lower[d], upper[d]))
        .collect();
    let log_w: Vec<Vec<f64>> = weights
        .iter()
        .map(|w| w.iter().map(|x| x.ln()).collect())
        .collect();

    // Running log-sum-exp with a rescaling accumulator keeps memory flat.
    let mut acc = LogAccumulator::default();
    let mut point = vec![0.0; dim];
    let total = n.pow(dim as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut lw = 0.0;
        for d in 0..dim {
            let idx = rem % n;
            rem /= n;
            point[d] = nodes[d][idx];
            lw += log_w[d][idx];
        }
        acc.push(lw + log_f(&point));
    }
    Ok(acc.value())
}

/// Streaming log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogAccumulator {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY || x.is_nan() {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linear-interpolated empirical quantile of a sample, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
