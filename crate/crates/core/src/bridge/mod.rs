//! Bridging sequences and the log-weight matrix they induce on a draw pool.
//!
//! Rungs are indexed from zero; rung 0 is the normalized reference (the
//! prior or an auxiliary density) and the last rung is the posterior.

mod auxiliary;

pub use auxiliary::{auxiliary_from_mode, fit_mode, AuxFamily, AuxiliaryDensity, ModeFit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::sampler::DrawPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    PowerPosterior,
    PartialData,
    AuxiliaryPath,
    NestedShells,
}

impl std::str::FromStr for BridgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power_posterior" => Ok(BridgeKind::PowerPosterior),
            "partial_data" => Ok(BridgeKind::PartialData),
            "auxiliary_path" => Ok(BridgeKind::AuxiliaryPath),
            "nested_shells" => Ok(BridgeKind::NestedShells),
            other => Err(Error::Config(format!("unknown bridge kind `{other}`"))),
        }
    }
}

/// `((j-1)/(m-1))^c` for `j = 1..m`, with exact endpoints.
pub fn temperature_schedule(m: usize, c: f64) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::Config(format!(
            "a bridge needs m >= 2 rungs, got {m}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!(
            "schedule exponent must be positive, got {c}"
        )));
    }
    let mut t: Vec<f64> = (0..m)
        .map(|j| (j as f64 / (m - 1) as f64).powf(c))
        .collect();
    t[0] = 0.0;
    t[m - 1] = 1.0;
    Ok(t)
}

/// Subset sizes `floor(n_tot ((j-1)/(m-1))^c)`, interior sizes floored at
/// `r_min`, first forced to 0 and last to `n_tot`.
pub fn partial_data_schedule(n_tot: usize, m: usize, c: f64, r_min: usize) -> Result<Vec<usize>> {
    if r_min > n_tot {
        return Err(Error::Config(format!(
            "r_min = {r_min} exceeds n_tot = {n_tot}"
        )));
    }
    let t = temperature_schedule(m, c)?;
    let mut r: Vec<usize> = t
        .iter()
        .map(|&x| ((n_tot as f64) * x).floor() as usize)
        .collect();
    for rj in r.iter_mut().take(m - 1).skip(1) {
        *rj = (*rj).max(r_min);
    }
    r[0] = 0;
    r[m - 1] = n_tot;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub kind: BridgeKind,
    pub m: usize,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxiliaryDensity>,
    /// Log-likelihood thresholds, one per rung (`-inf` for the prior rung).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<Vec<f64>>,
}

impl BridgeSpec {
    pub fn power_posterior(m: usize, c: f64) -> Result<Self> {
        Ok(Self {
            kind: BridgeKind::PowerPosterior,
            m,
            c,
            t: temperature_schedule(m, c)?,
            r: Vec::new(),
            aux: None,
            shells: None,
        })
    }

    pub fn auxiliary_path(m: usize, c: f64, aux: AuxiliaryDensity) -> Result<Self> {
        Ok(Self {
            kind: BridgeKind::AuxiliaryPath,
            m,
            c,
            t: temperature_schedule(m, c)?,
            r: Vec::new(),
            aux: Some(aux),
            shells: None,
        })
    }

    pub fn partial_data(n_tot: usize, m: usize, c: f64, r_min: usize) -> Result<Self> {
        Ok(Self {
            kind: BridgeKind::PartialData,
            m,
            c,
            t: Vec::new(),
            r: partial_data_schedule(n_tot, m, c, r_min)?,
            aux: None,
            shells: None,
        })
    }

    pub fn nested_shells(thresholds: Vec<f64>) -> Result<Self> {
        let m = thresholds.len();
        if m == 0 {
            return Err(Error::Config(
                "nested-shell bridge needs at least one rung".into(),
            ));
        }
        Ok(Self {
            kind: BridgeKind::NestedShells,
            m,
            c: 1.0,
            t: Vec::new(),
            r: Vec::new(),
            aux: None,
            shells: Some(thresholds),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.kind {
            BridgeKind::PowerPosterior | BridgeKind::AuxiliaryPath => {
                if self.m < 2 || self.t.len() != self.m {
                    return bad(format!("need m >= 2 temperatures, got m = {}", self.m));
                }
                if self.t[0] != 0.0 || self.t[self.m - 1] != 1.0 {
                    return bad("temperatures must run from exactly 0 to exactly 1".into());
                }
                if self.t.windows(2).any(|w| w[1] < w[0]) {
                    return bad("temperatures must be nondecreasing".into());
                }
                if self.kind == BridgeKind::AuxiliaryPath && self.aux.is_none() {
                    return bad("auxiliary path needs an auxiliary density".into());
                }
            }
            BridgeKind::PartialData => {
                if self.m < 2 || self.r.len() != self.m || self.r[0] != 0 {
                    return bad("partial-data ladder needs m >= 2 sizes starting at 0".into());
                }
                if self.r.windows(2).any(|w| w[1] < w[0]) {
                    return bad("subset sizes must be nondecreasing".into());
                }
            }
            BridgeKind::NestedShells => {
                let s = self.shells.as_deref().unwrap_or(&[]);
                if s.len() != self.m || s.is_empty() {
                    return bad("one threshold per shell rung required".into());
                }
                if s.windows(2).any(|w| w[1] < w[0]) {
                    return bad("shell thresholds must be nondecreasing".into());
                }
            }
        }
        Ok(())
    }

    /// `log q_j(theta) - log pi(theta)` from cached per-draw quantities.
    ///
    /// `log_h_ratio` is `log h - log pi` (ignored unless on an auxiliary path).
    pub fn log_weight(&self, rung: usize, log_lik: f64, log_h_ratio: f64) -> f64 {
        match self.kind {
            BridgeKind::PowerPosterior => power_entry(self.t[rung], log_lik),
            BridgeKind::AuxiliaryPath => path_entry(self.t[rung], log_h_ratio, log_lik),
            BridgeKind::NestedShells => {
                shell_entry(self.shells.as_ref().expect("validated")[rung], log_lik)
            }
            BridgeKind::PartialData => {
                panic!("partial-data weights need per-subset likelihoods")
            }
        }
    }
}

/// `t log L`, with `0 * (-inf) = 0` so the prior rung stays finite.
pub fn power_entry(t: f64, log_lik: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * log_lik
    }
}

/// `(1 - t)(log h - log pi) + t log L` with exact endpoints.
pub fn path_entry(t: f64, log_h_ratio: f64, log_lik: f64) -> f64 {
    if t == 0.0 {
        log_h_ratio
    } else if t == 1.0 {
        log_lik
    } else {
        (1.0 - t) * log_h_ratio + t * log_lik
    }
}

pub fn shell_entry(threshold: f64, log_lik: f64) -> f64 {
    if threshold == f64::NEG_INFINITY || log_lik > threshold {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Row-major `n x m` matrix of `log w_k(theta_i)` with row labels and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogWeightMatrix {
    entries: Vec<f64>,
    n: usize,
    m: usize,
    labels: Vec<usize>,
    counts: Vec<usize>,
    /// Cached `log L` per row, for reweighting without new likelihood calls.
    log_lik: Option<Vec<f64>>,
}

impl LogWeightMatrix {
    pub fn new(
        entries: Vec<f64>,
        m: usize,
        labels: Vec<usize>,
        counts: Vec<usize>,
    ) -> Result<Self> {
        if m == 0 || entries.len() % m != 0 {
            return Err(Error::InvalidArgument("matrix shape mismatch".into()));
        }
        let n = entries.len() / m;
        if labels.len() != n || counts.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} labels and {} counts for a {n} x {m} matrix",
                labels.len(),
                counts.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        if counts.iter().sum::<usize>() != n {
            return Err(Error::InvalidArgument("counts do not sum to n".into()));
        }
        if entries.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument(
                "weights must be finite or -inf".into(),
            ));
        }
        Ok(Self {
            entries,
            n,
            m,
            labels,
            counts,
            log_lik: None,
        })
    }

    /// Builds a matrix whose counts are tallied from the labels.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, m: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged weight rows".into()));
        }
        let mut counts = vec![0; m];
        for &l in &labels {
            if l >= m {
                return Err(Error::InvalidArgument(format!("label {l} out of range")));
            }
            counts[l] += 1;
        }
        Self::new(rows.concat(), m, labels, counts)
    }

    pub fn with_log_likelihoods(mut self, log_lik: Vec<f64>) -> Self {
        assert_eq!(log_lik.len(), self.n);
        self.log_lik = Some(log_lik);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.m + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, k)).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn log_likelihoods(&self) -> Option<&[f64]> {
        self.log_lik.as_deref()
    }

    /// Same weights, new labels (counts recomputed).
    pub fn relabel(&self, labels: Vec<usize>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| self.row(i).to_vec()).collect();
        let mut out = Self::from_rows(&rows, labels, self.m)?;
        out.log_lik = self.log_lik.clone();
        Ok(out)
    }

    /// Rows picked (with repetition) by index.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(idx.len() * self.m);
        let mut labels = Vec::with_capacity(idx.len());
        let mut counts = vec![0; self.m];
        for &i in idx {
            entries.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            counts[self.labels[i]] += 1;
        }
        Self {
            entries,
            n: idx.len(),
            m: self.m,
            labels,
            counts,
            log_lik: self
                .log_lik
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Adds `shift` to every entry of column `k`.
    pub fn shift_column(&mut self, k: usize, shift: f64) {
        for i in 0..self.n {
            self.entries[i * self.m + k] += shift;
        }
    }
}

/// Evaluates the bridge weights for every pooled draw.
///
/// Rows are computed in parallel; output order follows the pool.
pub fn eval_weight_matrix<M: TargetModel + ?Sized>(
    pool: &DrawPool,
    spec: &BridgeSpec,
    model: &M,
) -> Result<LogWeightMatrix> {
    spec.validate()?;
    if pool.counts.len() != spec.m {
        return Err(Error::InvalidArgument(format!(
            "pool has {} rungs, bridge has {}",
            pool.counts.len(),
            spec.m
        )));
    }
    let rows: Vec<Result<(Vec<f64>, f64)>> = pool
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let lp = model.log_prior(theta);
            if lp == f64::NEG_INFINITY {
                return Err(Error::OutsideSupport { index: i });
            }
            match spec.kind {
                BridgeKind::PartialData => {
                    let ls = model.partial_log_likelihoods(theta, &spec.r)?;
                    let full = *ls.last().expect("m >= 2");
                    Ok((ls, full))
                }
                _ => {
                    let ll = model.log_likelihood(theta);
                    let ratio = match &spec.aux {
                        Some(aux) if spec.kind == BridgeKind::AuxiliaryPath => {
                            aux.log_density(theta) - lp
                        }
                        _ => 0.0,
                    };
                    let row = (0..spec.m).map(|k| spec.log_weight(k, ll, ratio)).collect();
                    Ok((row, ll))
                }
            }
        })
        .collect();
    let mut entries = Vec::with_capacity(pool.draws.len() * spec.m);
    let mut log_lik = Vec::with_capacity(pool.draws.len());
    for (i, r) in rows.into_iter().enumerate() {
        let (row, ll) = r?;
        if row.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::Invariant(format!(
                "draw {i} has zero weight under every rung"
            )));
        }
        entries.extend(row);
        log_lik.push(ll);
    }
    Ok(
        LogWeightMatrix::new(entries, spec.m, pool.labels.clone(), pool.counts.clone())?
            .with_log_likelihoods(log_lik),
    )
}
