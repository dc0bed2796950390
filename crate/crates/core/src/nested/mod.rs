//! Ellipsoid-based nested sampling and three ways to sum its output: the
//! classic prior-mass identity, the shell ladder as a biased-sampling design,
//! and importance nested sampling over every proposal.

mod ellipsoid;

pub use ellipsoid::{log_unit_ball_volume, mvee, mvee_warm, Ellipsoid};

use std::io::Write;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{shell_entry, LogWeightMatrix};
use crate::error::{Error, Result};
use crate::estimators::{recursive_normalize, PseudoMixture, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::model::{BoxBounds, Support, TargetModel};
use crate::numeric::{log_add, logsumexp, logsumexp_iter, sample_sd};
use crate::reweight::{delta_method_se, reweight_from_ratios};
use crate::seed::rng_for;
use crate::uncertainty::{bootstrap_se, quasi_hessian_covariance, BootstrapTarget};

pub const DEFAULT_EXPAND: f64 = 1.5;
pub const MAX_PROPOSALS: usize = 1_000_000;
const MVEE_TOL: f64 = 1e-4;
/// Accepted points with quadratic form above this sit within 1% of the
/// sampling ellipsoid's boundary (in radius).
const BOUNDARY_QUAD: f64 = 0.99 * 0.99;

/// Whether a replacement must strictly beat the threshold or may tie it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Strict,
    Inclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedConfig {
    pub n_live: usize,
    pub steps: usize,
    #[serde(default = "default_expand")]
    pub expand_factor: f64,
    pub seed: u64,
    #[serde(default)]
    pub tie: TieRule,
    #[serde(default = "default_max_proposals")]
    pub max_proposals: usize,
}

fn default_expand() -> f64 {
    DEFAULT_EXPAND
}

fn default_max_proposals() -> usize {
    MAX_PROPOSALS
}

impl NestedConfig {
    pub fn new(n_live: usize, steps: usize, seed: u64) -> Self {
        Self {
            n_live,
            steps,
            expand_factor: DEFAULT_EXPAND,
            seed,
            tie: TieRule::Strict,
            max_proposals: MAX_PROPOSALS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_live < 2 {
            return Err(Error::Config(
                "nested sampling needs at least 2 live points".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Config(
                "nested sampling needs at least one step".into(),
            ));
        }
        if !(self.expand_factor >= 1.0) {
            return Err(Error::Config("expansion factor must be at least 1".into()));
        }
        if self.max_proposals == 0 {
            return Err(Error::Config("proposal cap must be positive".into()));
        }
        Ok(())
    }
}

/// One nested-sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    /// `log L` of the point being replaced.
    pub threshold: f64,
    /// The expanded ellipsoid the proposals were drawn from.
    pub ellipsoid: Ellipsoid,
    pub accepted: Vec<f64>,
    pub accepted_log_l: f64,
    /// Slot of the live set the accepted point replaced.
    pub replaced: usize,
    /// Proposals that failed the threshold, in draw order. Out-of-box points
    /// carry `log L = -inf`.
    pub rejected: Vec<Vec<f64>>,
    pub rejected_log_l: Vec<f64>,
}

impl Shell {
    pub fn overhead(&self) -> usize {
        self.rejected.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NSRun {
    pub config: NestedConfig,
    pub bounds: BoxBounds,
    /// The initial prior draws, i.e. the zeroth sampling region.
    pub initial: Vec<Vec<f64>>,
    pub initial_log_l: Vec<f64>,
    pub shells: Vec<Shell>,
    pub live: Vec<Vec<f64>>,
    pub live_log_l: Vec<f64>,
    /// Every proposal, out-of-box ones included, plus the initial draws.
    pub likelihood_calls: usize,
    /// Accepted points within 1% of their ellipsoid's boundary.
    pub boundary_hits: usize,
}

impl NSRun {
    pub fn n_live(&self) -> usize {
        self.live.len()
    }

    pub fn total_overhead(&self) -> usize {
        self.shells.iter().map(Shell::overhead).sum()
    }

    pub fn mean_overhead(&self) -> f64 {
        if self.shells.is_empty() {
            return 0.0;
        }
        self.total_overhead() as f64 / self.shells.len() as f64
    }

    /// One row per shell: index, threshold, overhead, accepted point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let d = self.bounds.dim();
        let mut header = vec![
            "shell".to_string(),
            "threshold".into(),
            "overhead".into(),
            "log_l".into(),
        ];
        header.extend((1..=d).map(|k| format!("theta_{k}")));
        wtr.write_record(&header)?;
        for (i, s) in self.shells.iter().enumerate() {
            let mut rec = vec![
                (i + 1).to_string(),
                s.threshold.to_string(),
                s.overhead().to_string(),
                s.accepted_log_l.to_string(),
            ];
            rec.extend(s.accepted.iter().map(|x| x.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn box_support<M: TargetModel + ?Sized>(model: &M) -> Result<BoxBounds> {
    match model.support() {
        Support::Box(b) => Ok(b),
        Support::Unbounded => Err(Error::UnsupportedModel(
            "nested sampling needs a uniform prior on a box".into(),
        )),
    }
}

/// Runs exactly `cfg.steps` replacements of the worst live point.
pub fn nested_run<M: TargetModel + ?Sized>(model: &M, cfg: &NestedConfig) -> Result<NSRun> {
    cfg.validate()?;
    let bounds = box_support(model)?;
    if bounds.dim() != model.dim() {
        return Err(Error::Invariant(
            "box dimension differs from the model".into(),
        ));
    }
    let mut rng = rng_for(cfg.seed, "nested", 0);
    let initial: Vec<Vec<f64>> = (0..cfg.n_live)
        .map(|_| bounds.sample_uniform(&mut rng))
        .collect();
    let initial_log_l: Vec<f64> = initial.iter().map(|t| model.log_likelihood(t)).collect();
    let mut live = initial.clone();
    let mut live_log_l = initial_log_l.clone();
    let mut shells = Vec::with_capacity(cfg.steps);
    let mut calls = cfg.n_live;
    let mut boundary_hits = 0;
    let mut weights: Option<Vec<f64>> = None;

    for step in 0..cfg.steps {
        let worst = (0..live.len())
            .min_by(|&a, &b| live_log_l[a].total_cmp(&live_log_l[b]))
            .expect("live set is nonempty");
        let threshold = live_log_l[worst];
        let (bound, mut u) = mvee_warm(&live, MVEE_TOL, weights.as_deref())?;
        let ellipsoid = bound.expanded(cfg.expand_factor);
        // The replacement enters the next bound with an even share.
        u[worst] = 1.0 / live.len() as f64;
        weights = Some(u);
        let mut rejected = Vec::new();
        let mut rejected_log_l = Vec::new();
        let (theta, ll) = loop {
            if rejected.len() >= cfg.max_proposals {
                return Err(Error::Stall {
                    shell: step + 1,
                    proposals: rejected.len(),
                });
            }
            let theta = ellipsoid.sample(&mut rng);
            calls += 1;
            let ll = if bounds.contains(&theta) {
                model.log_likelihood(&theta)
            } else {
                f64::NEG_INFINITY
            };
            let ok = match cfg.tie {
                TieRule::Strict => ll > threshold,
                TieRule::Inclusive => ll >= threshold && ll > f64::NEG_INFINITY,
            };
            if ok {
                break (theta, ll);
            }
            rejected.push(theta);
            rejected_log_l.push(ll);
        };
        if ellipsoid.quad_form(&theta) > BOUNDARY_QUAD {
            boundary_hits += 1;
        }
        live[worst] = theta.clone();
        live_log_l[worst] = ll;
        shells.push(Shell {
            threshold,
            ellipsoid,
            accepted: theta,
            accepted_log_l: ll,
            replaced: worst,
            rejected,
            rejected_log_l,
        });
    }
    if boundary_hits > 0 {
        log::warn!(
            "{boundary_hits} accepted points lie within 1% of their sampling ellipsoid's boundary; \
             the expanded ellipsoid may not cover the constrained region"
        );
    }
    Ok(NSRun {
        config: cfg.clone(),
        bounds,
        initial,
        initial_log_l,
        shells,
        live,
        live_log_l,
        likelihood_calls: calls,
        boundary_hits,
    })
}

/// Classic summation with `X_i = exp(-i / N_live)` and the mean live
/// likelihood times the final prior mass as terminal term.
pub fn ns_evidence(run: &NSRun) -> f64 {
    let n = run.n_live() as f64;
    let log_width = (-(-1.0 / n).exp_m1()).ln();
    let body = logsumexp_iter(
        run.shells
            .iter()
            .enumerate()
            .map(|(i, s)| s.threshold - i as f64 / n + log_width),
    );
    let live_mean = logsumexp(&run.live_log_l) - n.ln();
    log_add(body, live_mean - run.shells.len() as f64 / n)
}

/// Partial sums before the terminal term, one per shell.
pub fn ns_partial_sums(run: &NSRun) -> Vec<f64> {
    let n = run.n_live() as f64;
    let log_width = (-(-1.0 / n).exp_m1()).ln();
    let mut acc = f64::NEG_INFINITY;
    run.shells
        .iter()
        .enumerate()
        .map(|(i, s)| {
            acc = log_add(acc, s.threshold - i as f64 / n + log_width);
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedEstimate {
    pub log_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_hessian: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_bootstrap: Option<f64>,
    /// The analytic SE rests on iid-within-rung asymptotics that the
    /// adaptive shell ladder violates.
    pub se_unreliable: bool,
    pub ess: Option<f64>,
    /// Normalizers of the shell ladder (shell-recursive only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_z_rungs: Vec<f64>,
    pub n_draws: usize,
}

/// Decimated shell ladder. Rung 0 is the initial live set (prior draws);
/// rung `j >= 1` is the live set right after step `j N_live - 1`, which
/// consists of `N_live` draws from the prior constrained above that step's
/// threshold. A trailing partial block contributes the final live set.
pub fn shell_ladder(run: &NSRun) -> Result<(LogWeightMatrix, Vec<f64>)> {
    let n_live = run.n_live();
    let steps = run.shells.len();
    let mut snaps: Vec<usize> = (1..=steps / n_live).map(|j| j * n_live - 1).collect();
    if steps % n_live != 0 {
        snaps.push(steps - 1);
    }
    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut log_l = run.initial_log_l.clone();
    let mut labels = vec![0; run.initial.len()];
    let mut live_l = run.initial_log_l.clone();
    let mut next = snaps.iter().peekable();
    for (i, s) in run.shells.iter().enumerate() {
        live_l[s.replaced] = s.accepted_log_l;
        if next.peek() == Some(&&i) {
            next.next();
            thresholds.push(s.threshold);
            let rung = thresholds.len() - 1;
            log_l.extend_from_slice(&live_l);
            labels.extend(std::iter::repeat_n(rung, n_live));
        }
    }
    let rows: Vec<Vec<f64>> = log_l
        .iter()
        .map(|&l| thresholds.iter().map(|&t| shell_entry(t, l)).collect())
        .collect();
    let m = thresholds.len();
    let w = LogWeightMatrix::from_rows(&rows, labels, m)?.with_log_likelihoods(log_l.clone());
    Ok((w, log_l))
}

/// Normalizes the decimated shell ladder and reweights to the posterior.
pub fn shell_recursive_evidence(
    run: &NSRun,
    bootstrap: Option<(usize, u64)>,
) -> Result<NestedEstimate> {
    let (w, log_l) = shell_ladder(run)?;
    let z = recursive_normalize(&w, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let p = PseudoMixture::new(w.counts(), &z);
    let (log_z, ess) = reweight_from_ratios(&p, &w, &log_l)?;
    let (mut se_hessian, mut se_bootstrap) = (None, None);
    if w.m() >= 2 {
        if let Ok(cov) = quasi_hessian_covariance(&w, &z) {
            se_hessian = Some(delta_method_se(&w, &z, &cov.cov, &log_l));
            if let Some((b, seed)) = bootstrap {
                let boot = bootstrap_se(
                    &w,
                    &z,
                    cov.cov_fixed.as_ref().expect("Hessian method"),
                    b,
                    seed,
                    &BootstrapTarget::Reweighted(log_l),
                )?;
                se_bootstrap = Some(boot.se_target);
            }
        }
    }
    Ok(NestedEstimate {
        log_z,
        se_hessian,
        se_bootstrap,
        se_unreliable: true,
        ess: Some(ess),
        log_z_rungs: z.log_z,
        n_draws: w.n(),
    })
}

/// Every proposal with its sampling region and `log(L pi / p)` ingredients.
struct InsPool {
    /// Group 0 is the prior box, group `k` the `k`-th shell ellipsoid.
    group: Vec<usize>,
    /// `log L + log pi - log p`, `-inf` for out-of-box draws.
    log_ratio: Vec<f64>,
    counts: Vec<usize>,
}

fn ins_pool<M: TargetModel + ?Sized>(run: &NSRun, model: &M) -> Result<InsPool> {
    let mut draws: Vec<(&[f64], f64, usize)> = Vec::new();
    for (t, &l) in run.initial.iter().zip(&run.initial_log_l) {
        draws.push((t, l, 0));
    }
    let mut counts = vec![run.initial.len()];
    for (k, s) in run.shells.iter().enumerate() {
        draws.push((&s.accepted, s.accepted_log_l, k + 1));
        for (t, &l) in s.rejected.iter().zip(&s.rejected_log_l) {
            draws.push((t, l, k + 1));
        }
        counts.push(1 + s.rejected.len());
    }
    let n_tot = draws.len() as f64;
    let log_frac: Vec<f64> = counts.iter().map(|&c| (c as f64 / n_tot).ln()).collect();
    let log_box = run.bounds.log_volume();
    let results: Vec<Result<f64>> = draws
        .par_iter()
        .map(|&(theta, ll, _)| {
            if ll == f64::NEG_INFINITY && !run.bounds.contains(theta) {
                return Ok(f64::NEG_INFINITY);
            }
            let mut terms = Vec::with_capacity(counts.len());
            if run.bounds.contains(theta) {
                terms.push(log_frac[0] - log_box);
            }
            for (k, s) in run.shells.iter().enumerate() {
                if s.ellipsoid.contains(theta) {
                    terms.push(log_frac[k + 1] - s.ellipsoid.log_volume());
                }
            }
            if terms.is_empty() {
                return Err(Error::Invariant("draw lies in no sampling region".into()));
            }
            if ll == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(ll + model.log_prior(theta) - logsumexp(&terms))
        })
        .collect();
    let log_ratio = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(InsPool {
        group: draws.iter().map(|d| d.2).collect(),
        log_ratio,
        counts,
    })
}

/// Importance nested sampling: every proposal, weighted by the exactly known
/// ellipsoid-mixture sampling density. The SE is a stratified bootstrap over
/// draws when `bootstrap = Some((B, seed))`.
pub fn ins_evidence<M: TargetModel + ?Sized>(
    run: &NSRun,
    model: &M,
    bootstrap: Option<(usize, u64)>,
) -> Result<NestedEstimate> {
    let pool = ins_pool(run, model)?;
    let n = pool.log_ratio.len();
    let log_z = logsumexp(&pool.log_ratio) - (n as f64).ln();
    let ess = crate::uncertainty::ess(&pool.log_ratio).ok();
    let se_bootstrap = match bootstrap {
        Some((b, seed)) => {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); pool.counts.len()];
            for (i, &g) in pool.group.iter().enumerate() {
                groups[g].push(i);
            }
            let reps: Vec<f64> = (0..b)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = rng_for(seed, "ins-bootstrap", rep as u64);
                    let picks = groups.iter().flat_map(|g| {
                        (0..g.len())
                            .map(|_| pool.log_ratio[*g.choose(&mut rng).expect("nonempty")])
                            .collect::<Vec<_>>()
                    });
                    logsumexp_iter(picks.collect::<Vec<_>>().into_iter()) - (n as f64).ln()
                })
                .collect();
            let finite: Vec<f64> = reps.into_iter().filter(|v| v.is_finite()).collect();
            Some(sample_sd(&finite))
        }
        None => None,
    };
    Ok(NestedEstimate {
        log_z,
        se_hessian: None,
        se_bootstrap,
        se_unreliable: false,
        ess,
        log_z_rungs: Vec::new(),
        n_draws: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ame;
    use crate::model::BananaModel;
    use crate::numeric::mean;
    use crate::seed::Rng;

    /// `L(theta) = theta` on `[0, 1]`; `Z = 1/2`.
    struct Triangle;

    impl TargetModel for Triangle {
        fn dim(&self) -> usize {
            1
        }
        fn support(&self) -> Support {
            Support::Box(BoxBounds::new(vec![0.0], vec![1.0]))
        }
        fn log_prior(&self, theta: &[f64]) -> f64 {
            if (0.0..=1.0).contains(&theta[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        fn log_likelihood(&self, theta: &[f64]) -> f64 {
            theta[0].ln()
        }
        fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
            use rand::Rng as _;
            vec![rng.random()]
        }
    }

    /// Constant likelihood on the unit square.
    struct Flat(f64);

    impl TargetModel for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn support(&self) -> Support {
            Support::Box(BoxBounds::new(vec![0.0; 2], vec![1.0; 2]))
        }
        fn log_prior(&self, theta: &[f64]) -> f64 {
            if theta.iter().all(|x| (0.0..=1.0).contains(x)) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        fn log_likelihood(&self, _: &[f64]) -> f64 {
            self.0
        }
        fn sample_prior(&self, _: &mut Rng) -> Vec<f64> {
            unreachable!()
        }
    }

    /// Radial likelihood on `[-1, 1]^2`: constrained regions are disks
    /// clipped to the box.
    struct Radial;

    impl TargetModel for Radial {
        fn dim(&self) -> usize {
            2
        }
        fn support(&self) -> Support {
            Support::Box(BoxBounds::new(vec![-1.0; 2], vec![1.0; 2]))
        }
        fn log_prior(&self, _: &[f64]) -> f64 {
            -(4f64.ln())
        }
        fn log_likelihood(&self, t: &[f64]) -> f64 {
            -(t[0] * t[0] + t[1] * t[1])
        }
        fn sample_prior(&self, _: &mut Rng) -> Vec<f64> {
            unreachable!()
        }
    }

    #[test]
    fn flat_likelihood_stalls_under_the_strict_rule() {
        let mut cfg = NestedConfig::new(10, 5, 1);
        cfg.max_proposals = 5000;
        match nested_run(&Flat(-1.3), &cfg) {
            Err(Error::Stall {
                shell: 1,
                proposals: 5000,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_likelihood_with_ties_is_exact() {
        let mut cfg = NestedConfig::new(20, 200, 1);
        cfg.tie = TieRule::Inclusive;
        let run = nested_run(&Flat(-1.3), &cfg).unwrap();
        assert!((ns_evidence(&run) + 1.3).abs() < 1e-12);
    }

    #[test]
    fn run_invariants() {
        let cfg = NestedConfig::new(25, 250, 7);
        let run = nested_run(&BananaModel, &cfg).unwrap();
        assert_eq!(run.shells.len(), 250);
        assert!(run
            .shells
            .windows(2)
            .all(|w| w[1].threshold > w[0].threshold));
        for s in &run.shells {
            assert!(s.accepted_log_l > s.threshold);
            assert!(s.ellipsoid.quad_form(&s.accepted) <= 1.0 + 1e-12);
            for t in &s.rejected {
                assert!(s.ellipsoid.quad_form(t) <= 1.0 + 1e-12);
            }
            assert!(s.rejected_log_l.iter().all(|&l| l <= s.threshold));
        }
        assert_eq!(run.total_overhead(), run.likelihood_calls - 250 - 25);
        let partial = ns_partial_sums(&run);
        assert!(partial.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn radial_overhead_matches_negative_binomial() {
        let cfg = NestedConfig::new(30, 300, 3);
        let run = nested_run(&Radial, &cfg).unwrap();
        let mut rng = rng_for(99, "oracle", 0);
        let (mut observed, mut expected, mut var) = (0.0, 0.0, 0.0);
        for s in &run.shells {
            // Feasible fraction of the sampling ellipsoid by Monte Carlo.
            let m = 20_000;
            let hits = (0..m)
                .filter(|_| {
                    let t = s.ellipsoid.sample(&mut rng);
                    run.bounds.contains(&t) && Radial.log_likelihood(&t) > s.threshold
                })
                .count();
            let p = hits as f64 / m as f64;
            observed += s.overhead() as f64;
            expected += 1.0 / p - 1.0;
            var += (1.0 - p) / (p * p);
        }
        assert!(
            (observed - expected).abs() < 3.0 * var.sqrt(),
            "{observed} {expected} {}",
            var.sqrt()
        );
    }

    #[test]
    fn triangle_estimators_are_consistent() {
        let runs: Vec<NSRun> = (0..100)
            .map(|r| nested_run(&Triangle, &NestedConfig::new(20, 200, 1000 + r)).unwrap())
            .collect();
        let truth = 0.5f64.ln();
        // The mean of 100 runs against the standard error of that mean.
        let check = |name: &str, xs: Vec<f64>| {
            let se = sample_sd(&xs) / (xs.len() as f64).sqrt();
            let m = mean(&xs);
            assert!((m - truth).abs() < 3.0 * se, "{name}: {m} se {se}");
        };
        check("ns", runs.iter().map(ns_evidence).collect());
        check(
            "shell",
            runs.iter()
                .map(|r| shell_recursive_evidence(r, None).unwrap().log_z)
                .collect(),
        );
        // INS runs slightly low at small budgets; hold it to three
        // replicate standard deviations.
        let ins: Vec<f64> = runs
            .iter()
            .map(|r| ins_evidence(r, &Triangle, None).unwrap().log_z)
            .collect();
        assert!(
            (mean(&ins) - truth).abs() < 3.0 * sample_sd(&ins),
            "{}",
            mean(&ins)
        );
        assert!(sample_sd(&ins) < sample_sd(&runs.iter().map(ns_evidence).collect::<Vec<_>>()));
    }

    fn bare_run() -> NSRun {
        let mut run = nested_run(&BananaModel, &NestedConfig::new(40, 1, 5)).unwrap();
        run.shells.clear();
        run.live = run.initial.clone();
        run.live_log_l = run.initial_log_l.clone();
        run
    }

    #[test]
    fn empty_ladders_collapse_to_the_arithmetic_mean() {
        let run = bare_run();
        let a = ame(&run.initial_log_l).unwrap();
        let s = shell_recursive_evidence(&run, None).unwrap();
        assert!((s.log_z - a).abs() < 1e-12);
        let i = ins_evidence(&run, &BananaModel, None).unwrap();
        assert!((i.log_z - a).abs() < 1e-12);
        assert!((ns_evidence(&run) - a).abs() < 1e-12);
    }

    #[test]
    fn ladder_has_one_rung_per_live_set() {
        let run = nested_run(&BananaModel, &NestedConfig::new(20, 200, 2)).unwrap();
        let (w, _) = shell_ladder(&run).unwrap();
        assert_eq!(w.m(), 11);
        assert_eq!(w.counts(), &[20; 11][..]);
        let est = shell_recursive_evidence(&run, Some((100, 1))).unwrap();
        assert!(est.se_unreliable);
        assert!(est.se_hessian.unwrap() > 0.0);
        assert!(est.se_bootstrap.unwrap() > 0.0);
    }

    #[test]
    fn ins_density_integrates_to_one() {
        let run = nested_run(&BananaModel, &NestedConfig::new(25, 40, 8)).unwrap();
        let pool = ins_pool(&run, &BananaModel).unwrap();
        let n_tot: usize = pool.counts.iter().sum();
        // Mass of each region inside the box by a midpoint grid, plus the
        // part outside the box by Monte Carlo.
        let g = 400;
        let h = 2.0 / g as f64;
        let mut inside = vec![0.0; run.shells.len()];
        for a in 0..g {
            for b in 0..g {
                let t = [-0.5 + h * (a as f64 + 0.5), -0.5 + h * (b as f64 + 0.5)];
                for (k, s) in run.shells.iter().enumerate() {
                    if s.ellipsoid.contains(&t) {
                        inside[k] += h * h;
                    }
                }
            }
        }
        let mut rng = rng_for(4, "test", 0);
        let mut total = pool.counts[0] as f64 / n_tot as f64;
        for (k, s) in run.shells.iter().enumerate() {
            let m = 100_000;
            let out = (0..m)
                .filter(|_| !run.bounds.contains(&s.ellipsoid.sample(&mut rng)))
                .count();
            let out_mass = out as f64 / m as f64;
            let frac = pool.counts[k + 1] as f64 / n_tot as f64;
            total += frac * (inside[k] / s.ellipsoid.log_volume().exp() + out_mass);
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn requires_box_support_and_valid_config() {
        assert!(NestedConfig::new(1, 5, 0).validate().is_err());
        assert!(NestedConfig::new(5, 0, 0).validate().is_err());
        let m = crate::model::MixtureModel::new(
            vec![1.0, 2.0],
            1,
            crate::model::MixtureHyper::chib(),
            0,
        )
        .unwrap();
        assert!(matches!(
            nested_run(&m, &NestedConfig::new(5, 5, 0)),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn csv_has_one_row_per_shell() {
        let run = nested_run(&BananaModel, &NestedConfig::new(10, 15, 2)).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 16);
        assert!(text.starts_with("shell,threshold,overhead,log_l,theta_1,theta_2"));
    }
}
