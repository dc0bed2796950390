//! Normalizing-constant estimators: the recursive fixed point, its
//! thermodynamic-integration twin, and the harmonic/arithmetic mean baselines.

mod tivis;

pub use tivis::tivis_estimate;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::bridge::LogWeightMatrix;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, logsumexp_iter};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// The reference point is refreshed once the estimate drifts this far,
/// keeping the linear-space sums well inside double range.
const REFRESH_DRIFT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalizers {
    /// `log Z_k` per rung; entry 0 is exactly zero.
    pub log_z: Vec<f64>,
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub connected: bool,
    /// Strongly connected components, each sorted, ordered by smallest rung.
    pub components: Vec<Vec<usize>>,
}

/// Strong connectivity of the rung graph with an edge `h -> j` whenever a
/// draw from rung `j` has positive weight under rung `h`.
pub fn check_connectivity(w: &LogWeightMatrix) -> Connectivity {
    let m = w.m();
    let mut edge = vec![false; m * m];
    for i in 0..w.n() {
        let j = w.labels()[i];
        for (h, &v) in w.row(i).iter().enumerate() {
            if v > f64::NEG_INFINITY {
                edge[h * m + j] = true;
            }
        }
    }
    let mut g = DiGraph::<(), ()>::with_capacity(m, m * m);
    let nodes: Vec<_> = (0..m).map(|_| g.add_node(())).collect();
    for h in 0..m {
        for j in 0..m {
            if h != j && edge[h * m + j] {
                g.add_edge(nodes[h], nodes[j], ());
            }
        }
    }
    let mut components: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    components.sort();
    Connectivity {
        connected: components.len() == 1,
        components,
    }
}

fn precheck(w: &LogWeightMatrix) -> Result<()> {
    for k in 0..w.m() {
        if (0..w.n()).all(|i| w.get(i, k) == f64::NEG_INFINITY) {
            return Err(Error::UnsampledRung { rung: k });
        }
    }
    let conn = check_connectivity(w);
    if !conn.connected {
        return Err(Error::NotConnected {
            components: conn.components,
        });
    }
    Ok(())
}

/// `log p_i - log n`: the per-draw log of `sum_s n_s w_s(theta_i) / Z_s`.
pub fn log_denominators(w: &LogWeightMatrix, log_z: &[f64]) -> Vec<f64> {
    let log_n: Vec<f64> = w.counts().iter().map(|&c| (c as f64).ln()).collect();
    (0..w.n())
        .map(|i| {
            let row = w.row(i);
            logsumexp_iter((0..w.m()).map(|s| log_n[s] + row[s] - log_z[s]))
        })
        .collect()
}

/// One exact (Jacobi) application of the recursive update in log space,
/// without re-anchoring.
pub fn recursive_step(w: &LogWeightMatrix, log_z: &[f64]) -> Vec<f64> {
    let d = log_denominators(w, log_z);
    (0..w.m())
        .map(|k| logsumexp_iter((0..w.n()).map(|i| w.get(i, k) - d[i])))
        .collect()
}

pub fn recursive_normalize(
    w: &LogWeightMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<LogNormalizers> {
    recursive_normalize_from(w, &vec![0.0; w.m()], tol, max_iter)
}

/// Gauss–Seidel iteration of the recursive update from a given start.
///
/// Each sweep updates every rung in ascending order (rung 0 included) and
/// then re-anchors so that entry 0 is zero. Sums are taken in linear space on
/// row-rescaled weights `E_is = exp(W_is - r_s - R_i)`, where
/// `R_i = max_s (W_is - r_s)` and the reference point `r` is refreshed as
/// the estimate moves, so a sweep costs `O(n m)` multiply-adds.
pub fn recursive_normalize_from(
    w: &LogWeightMatrix,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<LogNormalizers> {
    precheck(w)?;
    let m = w.m();
    if init.len() != m {
        return Err(Error::InvalidArgument(
            "initial vector length must equal m".into(),
        ));
    }
    let mut nu: Vec<f64> = init.iter().map(|v| v - init[0]).collect();
    if m == 1 {
        return Ok(LogNormalizers {
            log_z: nu,
            iterations: 0,
            final_delta: 0.0,
            converged: true,
        });
    }

    let mut ws = Workspace::new(w, &nu);
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let previous = nu.clone();
        ws.refresh_if_drifted(w, &nu);
        ws.recompute_denominators(&nu);
        for k in 0..m {
            let new = ws.update(w, k);
            if !new.is_finite() {
                return Err(Error::NonConvergence {
                    iterations,
                    final_delta: f64::INFINITY,
                });
            }
            nu[k] = new;
            ws.set(k, new);
            if (new - ws.nu_ref[k]).abs() > 2.0 * REFRESH_DRIFT {
                ws.refresh(w, &nu);
                ws.recompute_denominators(&nu);
            }
        }
        let anchor = nu[0];
        nu.iter_mut().for_each(|v| *v -= anchor);
        delta = nu
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta < tol {
            return Ok(LogNormalizers {
                log_z: nu,
                iterations,
                final_delta: delta,
                converged: true,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations,
        final_delta: delta,
    })
}

/// Linear-space state for the Gauss–Seidel sweep.
struct Workspace {
    n: usize,
    m: usize,
    counts: Vec<f64>,
    nu_ref: Vec<f64>,
    /// Row maxima `R_i`.
    r: Vec<f64>,
    e: Vec<f64>,
    /// `exp(nu_ref_s - nu_s)`.
    c: Vec<f64>,
    denom: Vec<f64>,
}

impl Workspace {
    fn new(w: &LogWeightMatrix, nu: &[f64]) -> Self {
        let (n, m) = (w.n(), w.m());
        let mut ws = Self {
            n,
            m,
            counts: w.counts().iter().map(|&c| c as f64).collect(),
            nu_ref: nu.to_vec(),
            r: vec![0.0; n],
            e: vec![0.0; n * m],
            c: vec![1.0; m],
            denom: vec![0.0; n],
        };
        ws.refresh(w, nu);
        ws
    }

    fn refresh(&mut self, w: &LogWeightMatrix, nu: &[f64]) {
        self.nu_ref.copy_from_slice(nu);
        let m = self.m;
        for i in 0..self.n {
            let row = w.row(i);
            let r = (0..m)
                .map(|s| row[s] - nu[s])
                .fold(f64::NEG_INFINITY, f64::max);
            self.r[i] = r;
            for s in 0..m {
                self.e[i * m + s] = (row[s] - nu[s] - r).exp();
            }
        }
        self.c.iter_mut().for_each(|x| *x = 1.0);
    }

    fn refresh_if_drifted(&mut self, w: &LogWeightMatrix, nu: &[f64]) {
        if nu
            .iter()
            .zip(&self.nu_ref)
            .any(|(a, b)| (a - b).abs() > REFRESH_DRIFT)
        {
            self.refresh(w, nu);
        }
    }

    fn set(&mut self, k: usize, value: f64) {
        let c_new = (self.nu_ref[k] - value).exp();
        let dc = self.counts[k] * (c_new - self.c[k]);
        if dc != 0.0 {
            let m = self.m;
            for i in 0..self.n {
                self.denom[i] += dc * self.e[i * m + k];
            }
        }
        self.c[k] = c_new;
    }

    fn recompute_denominators(&mut self, nu: &[f64]) {
        let m = self.m;
        for s in 0..m {
            self.c[s] = (self.nu_ref[s] - nu[s]).exp();
        }
        for i in 0..self.n {
            let row = &self.e[i * m..(i + 1) * m];
            self.denom[i] = (0..m).map(|s| self.counts[s] * row[s] * self.c[s]).sum();
        }
    }

    /// Right-hand side of the update for rung `k` at the current state.
    fn update(&self, w: &LogWeightMatrix, k: usize) -> f64 {
        let m = self.m;
        let total: f64 = (0..self.n).map(|i| self.e[i * m + k] / self.denom[i]).sum();
        if total > 0.0 && total.is_finite() {
            return self.nu_ref[k] + total.ln();
        }
        // The column underflowed against the row maxima: redo it in log space.
        logsumexp_iter((0..self.n).map(|i| w.get(i, k) - self.r[i] - self.denom[i].ln()))
    }
}

/// The pseudo-mixture density of the pooled draws relative to the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMixture {
    log_weights: Vec<f64>,
    log_z: Vec<f64>,
}

impl PseudoMixture {
    pub fn new(counts: &[usize], normalizers: &LogNormalizers) -> Self {
        Self::from_log_z(counts, &normalizers.log_z)
    }

    pub fn from_log_z(counts: &[usize], log_z: &[f64]) -> Self {
        assert_eq!(counts.len(), log_z.len());
        let n: usize = counts.iter().sum();
        Self {
            log_weights: counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect(),
            log_z: log_z.to_vec(),
        }
    }

    /// Mixture weights `n_j / n`.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn log_z(&self) -> &[f64] {
        &self.log_z
    }

    /// `log(p(theta) / pi(theta))` for one weight-matrix row.
    pub fn log_density(&self, row: &[f64]) -> f64 {
        logsumexp_iter(
            self.log_weights
                .iter()
                .zip(row)
                .zip(&self.log_z)
                .map(|((lw, r), lz)| lw + r - lz),
        )
    }

    pub fn log_densities(&self, w: &LogWeightMatrix) -> Vec<f64> {
        (0..w.n()).map(|i| self.log_density(w.row(i))).collect()
    }
}

pub fn pseudo_mixture_logdensity(p: &PseudoMixture, row: &[f64]) -> f64 {
    p.log_density(row)
}

/// Harmonic mean of the likelihood over posterior draws.
pub fn hme(log_likelihoods: &[f64]) -> Result<f64> {
    if log_likelihoods.is_empty() {
        return Err(Error::InvalidArgument(
            "harmonic mean needs at least one draw".into(),
        ));
    }
    let neg: Vec<f64> = log_likelihoods.iter().map(|l| -l).collect();
    Ok(-logsumexp(&neg) + (log_likelihoods.len() as f64).ln())
}

/// Arithmetic mean of the likelihood over prior draws.
pub fn ame(log_likelihoods: &[f64]) -> Result<f64> {
    if log_likelihoods.is_empty() {
        return Err(Error::InvalidArgument(
            "arithmetic mean needs at least one draw".into(),
        ));
    }
    Ok(logsumexp(log_likelihoods) - (log_likelihoods.len() as f64).ln())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two-point space {a, b}, uniform prior; rung 2 weights 2 on a and 1/2 on b.
    /// Rung 1 contributes 2 a's and 2 b's, rung 2 four a's and one b.
    pub(crate) fn two_state_toy() -> LogWeightMatrix {
        let a = vec![0.0, 2f64.ln()];
        let b = vec![0.0, 0.5f64.ln()];
        let rows = vec![
            a.clone(),
            a.clone(),
            b.clone(),
            b.clone(),
            a.clone(),
            a.clone(),
            a.clone(),
            a,
            b,
        ];
        LogWeightMatrix::from_rows(&rows, vec![0, 0, 0, 0, 1, 1, 1, 1, 1], 2).unwrap()
    }

    /// Plain-arithmetic iteration of the update, written independently of the
    /// log-space implementation.
    fn toy_oracle() -> f64 {
        let (n1, n2) = (4.0, 5.0);
        let (wa, wb) = (2.0f64, 0.5f64);
        let (ca, cb) = (6.0, 3.0);
        let mut z = 1.0f64;
        for _ in 0..10_000 {
            let pa = n1 + n2 * wa / z;
            let pb = n1 + n2 * wb / z;
            z = ca * wa / pa + cb * wb / pb;
            // Anchor rung 1: its update is ca/pa + cb/pb.
            z /= ca / pa + cb / pb;
        }
        z.ln()
    }

    #[test]
    fn two_state_toy_matches_plain_iteration() {
        let w = two_state_toy();
        let est = recursive_normalize(&w, 1e-14, DEFAULT_MAX_ITER).unwrap();
        let oracle = toy_oracle();
        assert!(
            (est.log_z[1] - oracle).abs() < 1e-12,
            "{} {oracle}",
            est.log_z[1]
        );
        assert_eq!(est.log_z[0], 0.0);
    }

    #[test]
    fn constant_weight_fixed_point() {
        let c = 3.7f64;
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![0.0, c.ln()]).collect();
        let w = LogWeightMatrix::from_rows(&rows, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let est = recursive_normalize(&w, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((est.log_z[1] - c.ln()).abs() < 1e-10);
    }

    #[test]
    fn connectivity_examples() {
        let full =
            LogWeightMatrix::from_rows(&[vec![0.0, -1.0], vec![-2.0, 0.0]], vec![0, 1], 2).unwrap();
        assert!(check_connectivity(&full).connected);

        let ninf = f64::NEG_INFINITY;
        let block = LogWeightMatrix::from_rows(
            &[
                vec![0.0, ninf],
                vec![0.0, ninf],
                vec![ninf, 0.0],
                vec![ninf, 0.0],
            ],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap();
        let c = check_connectivity(&block);
        assert!(!c.connected);
        assert_eq!(c.components, vec![vec![0], vec![1]]);
        assert!(matches!(
            recursive_normalize(&block, DEFAULT_TOL, 10),
            Err(Error::NotConnected { .. })
        ));

        // 1 overlaps 2, 2 overlaps 3, 1 and 3 disjoint.
        let chain = LogWeightMatrix::from_rows(
            &[
                vec![0.0, -1.0, ninf],
                vec![0.0, ninf, ninf],
                vec![0.0, -0.5, ninf],
                vec![ninf, 0.0, -1.0],
                vec![ninf, -1.0, 0.0],
                vec![ninf, ninf, 0.0],
            ],
            vec![0, 0, 1, 1, 2, 2],
            3,
        )
        .unwrap();
        assert!(check_connectivity(&chain).connected);
        let est = recursive_normalize(&chain, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let again = recursive_step(&chain, &est.log_z);
        for k in 0..3 {
            assert!((again[k] - est.log_z[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn unsampled_rung_and_nonconvergence() {
        let ninf = f64::NEG_INFINITY;
        let w =
            LogWeightMatrix::from_rows(&[vec![0.0, ninf], vec![0.0, ninf]], vec![0, 1], 2).unwrap();
        assert!(matches!(
            recursive_normalize(&w, DEFAULT_TOL, 10),
            Err(Error::UnsampledRung { rung: 1 })
        ));
        let toy = two_state_toy();
        match recursive_normalize(&toy, 1e-300, 3) {
            Err(Error::NonConvergence {
                iterations,
                final_delta,
            }) => {
                assert_eq!(iterations, 3);
                assert!(final_delta > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn handles_huge_normalizer_gaps() {
        // Rung 2 weights around e^-500 relative to the prior.
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![0.0, -500.0 + 0.1 * i as f64, -1000.0 + 0.3 * i as f64])
            .collect();
        let w = LogWeightMatrix::from_rows(&rows, vec![0, 0, 0, 1, 1, 1, 2, 2], 3).unwrap();
        let est = recursive_normalize(&w, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let again = recursive_step(&w, &est.log_z);
        for k in 0..3 {
            assert!(
                (again[k] - est.log_z[k]).abs() < 1e-9,
                "{k}: {again:?} {:?}",
                est.log_z
            );
        }
    }

    #[test]
    fn pseudo_mixture_examples() {
        let single = PseudoMixture::from_log_z(&[5], &[0.0]);
        assert_eq!(single.log_density(&[-1.3]), -1.3);

        let same = PseudoMixture::from_log_z(&[1, 7], &[0.0, 0.0]);
        assert!((same.log_density(&[-0.4, -0.4]) + 0.4).abs() < 1e-15);

        // 3 of 4 draws from rung 1, Z_2 = 2, row (0, ln 3): 3/4 + (1/4)(3/2).
        let p = PseudoMixture::from_log_z(&[3, 1], &[0.0, 2f64.ln()]);
        let v = pseudo_mixture_logdensity(&p, &[0.0, 3f64.ln()]);
        assert!((v - (0.75f64 + 0.375).ln()).abs() < 1e-15);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_estimator_examples() {
        let c = -2.5;
        assert!((hme(&[c; 4]).unwrap() - c).abs() < 1e-15);
        assert!((ame(&[c; 4]).unwrap() - c).abs() < 1e-15);
        let l = [0.0, 3f64.ln()];
        assert!((hme(&l).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!((ame(&l).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(hme(&[]).is_err() && ame(&[]).is_err());
    }
}
