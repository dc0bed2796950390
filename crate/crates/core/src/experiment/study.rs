//! Replicate studies, the c-sweep and the galaxy model-selection study.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_model, pool_run, recursive_estimate, reweight_pass, run_with_seed, Estimate,
    ExperimentConfig, ModelKind,
};
use crate::bridge::BridgeKind;
use crate::error::{Error, ErrorClass, Result};
use crate::numeric::{logsumexp, mean, quantile, sample_sd};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub n_tot: usize,
    pub c: f64,
    pub estimates: Vec<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_overhead: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub n_tot: usize,
    pub c: f64,
    pub replicates: usize,
    pub mean_log_z: f64,
    /// Sample SD of `log Z` across replicates.
    pub replicate_se: f64,
    pub mean_se_hessian: Option<f64>,
    pub mean_se_bootstrap: Option<f64>,
    pub mean_overhead: Option<f64>,
    /// Replicates whose analytic SE was flagged unreliable.
    pub unreliable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub n_tot: usize,
    pub c: f64,
    pub class: ErrorClass,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStudy {
    pub base_seed: u64,
    pub rows: Vec<ReplicateRow>,
    pub summary: Vec<EstimatorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ReplicateFailure>,
    pub wall_time_s: f64,
}

impl ReplicateStudy {
    pub fn find(&self, estimator: &str, n_tot: usize, c: f64) -> Option<&EstimatorSummary> {
        self.summary
            .iter()
            .find(|s| s.estimator == estimator && s.n_tot == n_tot && s.c == c)
    }

    /// The `c` with the smallest replicate SE for `estimator`.
    pub fn best_c(&self, estimator: &str) -> Option<f64> {
        self.summary
            .iter()
            .filter(|s| s.estimator == estimator)
            .min_by(|a, b| a.replicate_se.total_cmp(&b.replicate_se))
            .map(|s| s.c)
    }

    /// `summary.csv`, `replicates.csv` and `study.json` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record([
            "estimator",
            "n_tot",
            "c",
            "replicates",
            "mean_log_z",
            "replicate_se",
            "mean_se_hessian",
            "mean_se_bootstrap",
            "mean_overhead",
        ])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for s in &self.summary {
            w.write_record([
                s.estimator.clone(),
                s.n_tot.to_string(),
                s.c.to_string(),
                s.replicates.to_string(),
                s.mean_log_z.to_string(),
                s.replicate_se.to_string(),
                opt(s.mean_se_hessian),
                opt(s.mean_se_bootstrap),
                opt(s.mean_overhead),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
        w.write_record([
            "replicate",
            "seed",
            "n_tot",
            "c",
            "estimator",
            "log_z",
            "se_hessian",
            "se_bootstrap",
        ])?;
        for r in &self.rows {
            for e in &r.estimates {
                w.write_record([
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    r.n_tot.to_string(),
                    r.c.to_string(),
                    e.estimator.clone(),
                    e.log_z.to_string(),
                    opt(e.se_hessian),
                    opt(e.se_bootstrap),
                ])?;
            }
        }
        w.flush()?;
        fs::write(dir.join("study.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sorted copy; summing in sorted order makes the statistics independent of
/// replicate order.
fn sorted(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| mean(&sorted(v.into_iter())))
}

/// Groups rows by `(n_tot, c, estimator)` in order of first appearance.
pub fn summarize(rows: &[ReplicateRow]) -> Vec<EstimatorSummary> {
    let mut keys: Vec<(usize, f64, String)> = Vec::new();
    for r in rows {
        for e in &r.estimates {
            let key = (r.n_tot, r.c, e.estimator.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.into_iter()
        .map(|(n_tot, c, name)| {
            let hits: Vec<(&ReplicateRow, &Estimate)> = rows
                .iter()
                .filter(|r| r.n_tot == n_tot && r.c == c)
                .filter_map(|r| {
                    r.estimates
                        .iter()
                        .find(|e| e.estimator == name)
                        .map(|e| (r, e))
                })
                .collect();
            let log_z = sorted(hits.iter().map(|(_, e)| e.log_z));
            EstimatorSummary {
                estimator: name,
                n_tot,
                c,
                replicates: hits.len(),
                mean_log_z: mean(&log_z),
                replicate_se: sample_sd(&log_z),
                mean_se_hessian: mean_opt(hits.iter().map(|(_, e)| e.se_hessian)),
                mean_se_bootstrap: mean_opt(hits.iter().map(|(_, e)| e.se_bootstrap)),
                mean_overhead: mean_opt(hits.iter().map(|(r, _)| r.mean_overhead)),
                unreliable: hits.iter().filter(|(_, e)| e.se_unreliable).count(),
            }
        })
        .collect()
}

fn n_tot_of(cfg: &ExperimentConfig) -> usize {
    if cfg.estimator.kind.uses_nested_run() {
        cfg.nested.steps
    } else {
        cfg.sampler
            .per_rung
            .map_or(cfg.sampler.n_tot, |p| p * cfg.bridge.m)
    }
}

/// Runs `r` replicates (per `n_tot` in `cfg.run.n_tot_grid`) with seeds
/// `derive_seed(base_seed, "replicate", i)`. The first failing replicate
/// stops the study; completed rows are kept.
pub fn replicate_study(cfg: &ExperimentConfig, r: usize, base_seed: u64) -> Result<ReplicateStudy> {
    if r < 2 {
        return Err(Error::Config(format!(
            "a replicate study needs R >= 2, got {r}"
        )));
    }
    cfg.validate()?;
    let start = Instant::now();
    let grid: Vec<Option<usize>> =
        if cfg.run.n_tot_grid.is_empty() || cfg.estimator.kind.uses_nested_run() {
            vec![None]
        } else {
            cfg.run.n_tot_grid.iter().map(|&n| Some(n)).collect()
        };
    let mut rows = Vec::new();
    let mut failure = None;
    for n in grid {
        let mut c = cfg.clone();
        if let Some(n) = n {
            c.sampler.n_tot = n;
            c.sampler.per_rung = None;
        }
        let n_tot = n_tot_of(&c);
        let results: Vec<Result<ReplicateRow>> = (0..r)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(base_seed, "replicate", i as u64);
                let exp = run_with_seed(&c, seed)?;
                Ok(ReplicateRow {
                    replicate: i,
                    seed,
                    n_tot,
                    c: c.bridge.c,
                    estimates: exp.report.estimates(),
                    mean_overhead: exp.report.diagnostics.mean_overhead,
                })
            })
            .collect();
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failure = Some(ReplicateFailure {
                        replicate: i,
                        n_tot,
                        c: c.bridge.c,
                        class: e.class(),
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        if failure.is_some() {
            break;
        }
    }
    Ok(ReplicateStudy {
        base_seed,
        summary: summarize(&rows),
        rows,
        failure,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Replicate studies over `cfg.run.c_grid`, merged into one.
pub fn csweep(cfg: &ExperimentConfig, r: usize, base_seed: u64) -> Result<ReplicateStudy> {
    if cfg.run.c_grid.is_empty() {
        return Err(Error::Config("run.c_grid is empty".into()));
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut failure = None;
    for &c in &cfg.run.c_grid {
        let mut one = cfg.clone();
        one.bridge.c = c;
        one.run.n_tot_grid.clear();
        let study = replicate_study(&one, r, base_seed)?;
        rows.extend(study.rows);
        if study.failure.is_some() {
            failure = study.failure;
            break;
        }
    }
    Ok(ReplicateStudy {
        base_seed,
        summary: summarize(&rows),
        rows,
        failure,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalaxyRow {
    pub k: usize,
    pub log_z: f64,
    pub se: Option<f64>,
    pub log_prior_k: f64,
    pub posterior: f64,
    /// Percentile 95% interval of `pi(k | y)` under the per-k SEs.
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_log_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_posterior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalaxyStudy {
    pub rows: Vec<GalaxyRow>,
    /// `log sum_k pi(k) Z_k`.
    pub log_z_total: f64,
    /// Delta-method SE of `log_z_total` from independent per-k SEs.
    pub se_total: Option<f64>,
    pub mode: usize,
    pub unimodal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_mode: Option<usize>,
    pub draws_per_rung: usize,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl GalaxyStudy {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("galaxy.csv"))?;
        w.write_record([
            "k",
            "log_z",
            "se",
            "log_prior_k",
            "posterior",
            "lower",
            "upper",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.log_z.to_string(),
                r.se.map_or(String::new(), |v| v.to_string()),
                r.log_prior_k.to_string(),
                r.posterior.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
            ])?;
        }
        w.flush()?;
        let mut f = fs::File::create(dir.join("report.json"))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}

/// Non-decreasing then non-increasing.
fn is_unimodal(p: &[f64]) -> bool {
    let peak = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    p[..=peak].windows(2).all(|w| w[0] <= w[1]) && p[peak..].windows(2).all(|w| w[0] >= w[1])
}

fn posterior(log_prior: &[f64], log_z: &[f64]) -> (Vec<f64>, f64) {
    let joint: Vec<f64> = log_prior.iter().zip(log_z).map(|(a, b)| a + b).collect();
    let total = logsumexp(&joint);
    (joint.iter().map(|j| (j - total).exp()).collect(), total)
}

/// Per-k partial-data runs combined under the prior on `k`.
pub fn galaxy_study(cfg: &ExperimentConfig) -> Result<GalaxyStudy> {
    if cfg.model.kind != ModelKind::Mixture {
        return Err(Error::Config(
            "the galaxy study needs model.kind = \"mixture\"".into(),
        ));
    }
    if cfg.bridge.kind != BridgeKind::PartialData {
        return Err(Error::Config(
            "the galaxy study uses a partial-data bridge".into(),
        ));
    }
    cfg.validate()?;
    let start = Instant::now();
    let seed = cfg.run.seed;
    let data = cfg.model.load_data()?;
    let hyper = cfg.model.hyper(&data)?;
    let draws = cfg.galaxy.draws_per_rung();
    let ks: Vec<usize> = (hyper.k_min..=hyper.k_max).collect();

    let per_k: Vec<Result<(Estimate, Option<crate::reweight::ReweightEstimate>)>> = ks
        .par_iter()
        .map(|&k| {
            let mut kc = cfg.clone();
            kc.model.k = Some(k);
            kc.sampler.per_rung = Some(draws);
            kc.bridge.r_min = None;
            let kseed = derive_seed(seed, "galaxy-k", k as u64);
            let model = build_model(&kc, kseed)?;
            let run = pool_run(&kc, &model, kseed)?;
            let (est, cov) = recursive_estimate(&kc, &run, kseed, &mut Vec::new())?;
            let rw = reweight_pass(&kc, &model, &run, cov.as_ref(), kseed)?;
            Ok((est, rw))
        })
        .collect();
    let per_k: Vec<(Estimate, Option<crate::reweight::ReweightEstimate>)> =
        per_k.into_iter().collect::<Result<_>>()?;

    let log_prior: Vec<f64> = if cfg.model.uniform_k {
        vec![-(ks.len() as f64).ln(); ks.len()]
    } else {
        ks.iter().map(|&k| hyper.log_prior_k(k)).collect()
    };
    let log_z: Vec<f64> = per_k.iter().map(|(e, _)| e.log_z).collect();
    let se: Vec<Option<f64>> = per_k.iter().map(|(e, _)| e.se_hessian).collect();
    let (post, total) = posterior(&log_prior, &log_z);
    let se_total = se
        .iter()
        .zip(&post)
        .map(|(s, p)| s.map(|s| (p * s).powi(2)))
        .sum::<Option<f64>>()
        .map(f64::sqrt);

    let mut rng = rng_for(seed, "galaxy-interval", 0);
    let n_mc = cfg.galaxy.interval_draws.max(1);
    let mut samples = vec![Vec::with_capacity(n_mc); ks.len()];
    for _ in 0..n_mc {
        let perturbed: Vec<f64> = log_z
            .iter()
            .zip(&se)
            .map(|(z, s)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                z + s.unwrap_or(0.0) * e
            })
            .collect();
        let (p, _) = posterior(&log_prior, &perturbed);
        for (j, v) in p.into_iter().enumerate() {
            samples[j].push(v);
        }
    }

    let reweighted = if per_k.iter().all(|(_, r)| r.is_some()) {
        let alt = cfg
            .reweight
            .as_ref()
            .expect("reweight estimates imply a reweight section")
            .hyper
            .apply(hyper.clone())?;
        let lp: Vec<f64> = if cfg.model.uniform_k {
            log_prior.clone()
        } else {
            ks.iter().map(|&k| alt.log_prior_k(k)).collect()
        };
        let lz: Vec<f64> = per_k
            .iter()
            .map(|(_, r)| r.as_ref().unwrap().log_z)
            .collect();
        Some(posterior(&lp, &lz).0)
    } else {
        None
    };

    let rows: Vec<GalaxyRow> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| GalaxyRow {
            k,
            log_z: log_z[j],
            se: se[j],
            log_prior_k: log_prior[j],
            posterior: post[j],
            lower: quantile(&samples[j], 0.025),
            upper: quantile(&samples[j], 0.975),
            reweighted_log_z: per_k[j].1.as_ref().map(|r| r.log_z),
            reweighted_posterior: reweighted.as_ref().map(|p| p[j]),
            reweighted_ess: per_k[j].1.as_ref().map(|r| r.ess),
        })
        .collect();
    let argmax = |p: &[f64]| {
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| ks[i])
            .expect("k range is nonempty")
    };
    Ok(GalaxyStudy {
        mode: argmax(&post),
        unimodal: is_unimodal(&post),
        reweighted_mode: reweighted.as_deref().map(argmax),
        rows,
        log_z_total: total,
        se_total,
        draws_per_rung: draws,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
