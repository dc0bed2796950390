//! Thermodynamic integration by importance sampling over the pseudo-mixture.
//!
//! For adjacent rungs the log ratio `log Z_k - log Z_{k-1}` is the integral
//! over `t` in `[0, 1]` of the mean of `W_ik - W_{i,k-1}` under the weights
//! `u_i(t) ∝ exp(t W_ik + (1 - t) W_{i,k-1} - log p_i)`.

use super::{log_denominators, precheck, LogNormalizers};
use crate::bridge::LogWeightMatrix;
use crate::error::{Error, Result};
use crate::numeric::{simpson_nodes, simpson_weights};

/// Iterates full TIVIS passes from `init` until successive passes agree to
/// `tol`. Started from the recursive solution this converges in a couple of
/// passes.
pub fn tivis_estimate(
    w: &LogWeightMatrix,
    init: &[f64],
    quad_points: usize,
    tol: f64,
    max_passes: usize,
) -> Result<LogNormalizers> {
    let weights = simpson_weights(quad_points, 0.0, 1.0)?;
    let nodes = simpson_nodes(quad_points, 0.0, 1.0);
    precheck(w)?;
    if init.len() != w.m() {
        return Err(Error::InvalidArgument(
            "initial vector length must equal m".into(),
        ));
    }
    let (n, m) = (w.n(), w.m());

    // Draws with weight under both rungs, and their log-weight differences.
    let mut pairs: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(m);
    pairs.push((Vec::new(), Vec::new()));
    for k in 1..m {
        let mut idx = Vec::new();
        let mut diff = Vec::new();
        for i in 0..n {
            let (lo, hi) = (w.get(i, k - 1), w.get(i, k));
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => {
                    idx.push(i);
                    diff.push(hi - lo);
                }
                (false, false) => {}
                _ => {
                    return Err(Error::SupportMismatch {
                        left: k - 1,
                        right: k,
                    })
                }
            }
        }
        pairs.push((idx, diff));
    }

    let mut log_z = init.to_vec();
    log_z[0] = 0.0;
    let mut delta = f64::INFINITY;
    let mut passes = 0;
    let mut base = Vec::with_capacity(n);
    while passes < max_passes {
        passes += 1;
        let d = log_denominators(w, &log_z);
        let mut next = vec![0.0; m];
        for k in 1..m {
            let (idx, diff) = &pairs[k];
            base.clear();
            base.extend(idx.iter().map(|&i| w.get(i, k - 1) - d[i]));
            let mut integral = 0.0;
            for (&t, &wt) in nodes.iter().zip(&weights) {
                // Self-normalized mean of the difference under u(., t).
                let shift = base
                    .iter()
                    .zip(diff)
                    .map(|(b, a)| b + t * a)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for (b, a) in base.iter().zip(diff) {
                    let u = (b + t * a - shift).exp();
                    num += u * a;
                    den += u;
                }
                integral += wt * num / den;
            }
            next[k] = next[k - 1] + integral;
        }
        delta = next
            .iter()
            .zip(&log_z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log_z = next;
        if delta < tol {
            return Ok(LogNormalizers {
                log_z,
                iterations: passes,
                final_delta: delta,
                converged: true,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: passes,
        final_delta: delta,
    })
}
