//! End-to-end runs: sampling, normalization, estimation and reporting.

mod config;
mod study;

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    BridgeSection, EstimatorKind, EstimatorSection, ExperimentConfig, GalaxySection,
    HyperOverrides, ModelKind, ModelSection, NestedSection, PriorPreset, ReweightSection,
    RunSection, SamplerSection, DEFAULT_PROPOSAL_SCALE, GIBBS_BURN_IN, GIBBS_THIN, MC3_BURN_IN,
    MC3_THIN,
};
pub use study::{
    csweep, galaxy_study, replicate_study, summarize, EstimatorSummary, GalaxyRow, GalaxyStudy,
    ReplicateFailure, ReplicateRow, ReplicateStudy,
};

use crate::bridge::{
    auxiliary_from_mode, eval_weight_matrix, AuxFamily, BridgeKind, BridgeSpec, LogWeightMatrix,
};
use crate::error::{Error, Result};
use crate::estimators::{
    ame, check_connectivity, hme, recursive_normalize, tivis_estimate, Connectivity,
    LogNormalizers, PseudoMixture,
};
use crate::model::{BananaModel, MixtureModel, TargetModel};
use crate::nested::{
    ins_evidence, nested_run, ns_evidence, shell_recursive_evidence, NSRun, NestedConfig,
};
use crate::reweight::{
    delta_method_se, reweight_evidence, reweight_evidence_with_se, reweight_from_ratios,
    target_log_ratios, ReweightEstimate, ReweightTarget,
};
use crate::sampler::{gibbs_mixture, mc3_sample, ChainConfig, DrawPool, GibbsConfig};
use crate::seed::derive_seed;
use crate::uncertainty::{
    bootstrap_se, quasi_hessian_covariance, BootstrapTarget, CovarianceEstimate,
};

/// One estimate of `log Z` with whatever uncertainty the method provides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: String,
    pub log_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_hessian: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_bootstrap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    #[serde(default)]
    pub se_unreliable: bool,
}

impl Estimate {
    fn point(estimator: &str, log_z: f64) -> Self {
        Self {
            estimator: estimator.into(),
            log_z,
            se_hessian: None,
            se_bootstrap: None,
            ess: None,
            interval: None,
            se_unreliable: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_draws: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counts: Vec<usize>,
    /// Within-rung acceptance rates (`None` where undefined).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptance: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub swap_acceptance: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<Connectivity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_overhead: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_hits: Option<usize>,
    #[serde(default)]
    pub aux_regularized: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub log_z: f64,
    #[serde(default)]
    pub se_hessian: Option<f64>,
    #[serde(default)]
    pub se_bootstrap: Option<f64>,
    #[serde(default)]
    pub se_replicate: Option<f64>,
    #[serde(default)]
    pub ess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    #[serde(default)]
    pub se_unreliable: bool,
    /// `log Z_k` for every rung (rung 0 anchored at zero).
    #[serde(default)]
    pub log_z_rungs: Vec<f64>,
    /// Other estimators computed from the same draws.
    #[serde(default)]
    pub companions: Vec<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweight: Option<ReweightEstimate>,
    pub diagnostics: Diagnostics,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl EstimateReport {
    pub fn primary(&self) -> Estimate {
        Estimate {
            estimator: self.estimator.clone(),
            log_z: self.log_z,
            se_hessian: self.se_hessian,
            se_bootstrap: self.se_bootstrap,
            ess: self.ess,
            interval: self.interval,
            se_unreliable: self.se_unreliable,
        }
    }

    /// The primary estimate followed by the companions.
    pub fn estimates(&self) -> Vec<Estimate> {
        std::iter::once(self.primary())
            .chain(self.companions.iter().cloned())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Raw sampler output behind a report.
#[derive(Debug, Clone)]
pub enum Trace {
    Pool(DrawPool),
    Nested(NSRun),
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: EstimateReport,
    pub trace: Trace,
}

impl Experiment {
    /// Writes `report.json` and `trace.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json())?;
        let out = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
        match &self.trace {
            Trace::Pool(p) => p.write_trace(out, 0),
            Trace::Nested(r) => r.write_csv(out),
        }
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub(crate) enum Built {
    Banana(BananaModel),
    Mixture(MixtureModel),
}

impl Built {
    fn target(&self) -> &dyn TargetModel {
        match self {
            Built::Banana(m) => m,
            Built::Mixture(m) => m,
        }
    }
}

pub(crate) fn build_model(cfg: &ExperimentConfig, seed: u64) -> Result<Built> {
    match cfg.model.kind {
        ModelKind::Banana => Ok(Built::Banana(BananaModel)),
        ModelKind::Mixture => {
            let data = cfg.model.load_data()?;
            let hyper = cfg.model.hyper(&data)?;
            let k = match cfg.model.k {
                Some(k) => k,
                None if hyper.k_min == hyper.k_max => hyper.k_min,
                None => {
                    return Err(Error::Config(
                        "model.k is required unless k_min == k_max".into(),
                    ))
                }
            };
            let model = MixtureModel::new(
                data,
                k,
                hyper,
                cfg.model
                    .subset_seed
                    .unwrap_or_else(|| derive_seed(seed, "subset", 0)),
            )?;
            Ok(Built::Mixture(model))
        }
    }
}

fn bridge_spec(cfg: &ExperimentConfig, model: &Built) -> Result<(BridgeSpec, bool)> {
    let b = &cfg.bridge;
    match b.kind {
        BridgeKind::PowerPosterior => Ok((BridgeSpec::power_posterior(b.m, b.c)?, false)),
        BridgeKind::AuxiliaryPath => {
            let family = b.family.unwrap_or(AuxFamily::TruncatedNormal);
            let aux = auxiliary_from_mode(model.target(), family)?;
            let regularized = aux.regularized;
            Ok((BridgeSpec::auxiliary_path(b.m, b.c, aux)?, regularized))
        }
        BridgeKind::PartialData => {
            let Built::Mixture(mm) = model else {
                return Err(Error::Config(
                    "partial-data bridges need the mixture model".into(),
                ));
            };
            let r_min = b.r_min.unwrap_or(mm.k());
            Ok((
                BridgeSpec::partial_data(mm.data().len(), b.m, b.c, r_min)?,
                false,
            ))
        }
        BridgeKind::NestedShells => Err(Error::Config(
            "nested shells are built by the nested estimators, not sampled directly".into(),
        )),
    }
}

fn per_rung(cfg: &ExperimentConfig) -> Result<usize> {
    if let Some(n) = cfg.sampler.per_rung {
        return if n == 0 {
            Err(Error::Config("sampler.per_rung must be positive".into()))
        } else {
            Ok(n)
        };
    }
    let (n, m) = (cfg.sampler.n_tot, cfg.bridge.m);
    if n == 0 || n % m != 0 {
        return Err(Error::Config(format!(
            "sampler.n_tot ({n}) must be a positive multiple of bridge.m ({m})"
        )));
    }
    Ok(n / m)
}

fn sample_pool(
    cfg: &ExperimentConfig,
    model: &Built,
    spec: &BridgeSpec,
    seed: u64,
) -> Result<DrawPool> {
    let n_per = per_rung(cfg)?;
    let s = &cfg.sampler;
    match (model, spec.kind) {
        (Built::Mixture(mm), BridgeKind::PartialData) => {
            let thin = s.thin.unwrap_or(GIBBS_THIN);
            let mut draws = Vec::with_capacity(n_per * spec.m);
            let mut labels = Vec::with_capacity(n_per * spec.m);
            for (j, &r) in spec.r.iter().enumerate() {
                let out = gibbs_mixture(
                    mm,
                    r,
                    &GibbsConfig {
                        draws: n_per,
                        burn_in: s.burn_in.unwrap_or(GIBBS_BURN_IN),
                        thin,
                        seed: derive_seed(seed, "rung", j as u64),
                    },
                )?;
                draws.extend(out.params.iter().map(|p| p.to_vec()));
                labels.extend(std::iter::repeat_n(j, out.params.len()));
            }
            let mut pool = DrawPool::new(draws, labels, spec.m)?;
            pool.seed = seed;
            pool.thin = thin;
            Ok(pool)
        }
        _ => {
            let dim = model.target().dim();
            let chain = ChainConfig {
                steps: 0,
                burn_in: s.burn_in.unwrap_or(MC3_BURN_IN),
                thin: s.thin.unwrap_or(MC3_THIN),
                proposal_scale: s
                    .proposal_scale
                    .clone()
                    .unwrap_or_else(|| vec![DEFAULT_PROPOSAL_SCALE; dim]),
                swap_interval: s.swap_interval,
                seed,
                adapt: s.adapt,
            };
            mc3_sample(model.target(), spec, n_per, &chain)
        }
    }
}

/// Sampled, weighted and normalized pool.
pub(crate) struct PoolRun {
    pub pool: DrawPool,
    pub spec: BridgeSpec,
    pub w: LogWeightMatrix,
    pub z: LogNormalizers,
    pub connectivity: Connectivity,
    pub aux_regularized: bool,
}

pub(crate) fn pool_run(cfg: &ExperimentConfig, model: &Built, seed: u64) -> Result<PoolRun> {
    let (spec, aux_regularized) = bridge_spec(cfg, model)?;
    let pool = sample_pool(cfg, model, &spec, seed)?;
    let w = eval_weight_matrix(&pool, &spec, model.target())?;
    let connectivity = check_connectivity(&w);
    if !connectivity.connected {
        return Err(Error::NotConnected {
            components: connectivity.components,
        });
    }
    let z = recursive_normalize(&w, cfg.estimator.tol, cfg.estimator.max_iter)?;
    Ok(PoolRun {
        pool,
        spec,
        w,
        z,
        connectivity,
        aux_regularized,
    })
}

/// Bootstrap perturbations use the fixed-design covariance: the resampling
/// already supplies the label noise that the raw Hessian form includes.
fn perturbation(cov: Option<&CovarianceEstimate>, m: usize) -> Vec<Vec<f64>> {
    cov.and_then(|c| c.cov_fixed.clone())
        .unwrap_or_else(|| vec![vec![0.0; m - 1]; m - 1])
}

/// Recursive estimate of the last rung with Hessian (and optionally
/// bootstrap) SE. Returns the Hessian covariance for later reuse.
pub(crate) fn recursive_estimate(
    cfg: &ExperimentConfig,
    run: &PoolRun,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<(Estimate, Option<CovarianceEstimate>)> {
    let (w, z) = (&run.w, &run.z);
    let m = w.m();
    let mut est = Estimate::point("recursive", z.log_z[m - 1]);
    let p = PseudoMixture::new(w.counts(), z);
    est.ess = Some(reweight_from_ratios(&p, w, &w.column(m - 1))?.1);
    let cov = match quasi_hessian_covariance(w, z) {
        Ok(c) => {
            est.se_hessian = Some(c.se_target);
            Some(c)
        }
        Err(e) => {
            warnings.push(format!("Hessian SE unavailable: {e}"));
            None
        }
    };
    if cfg.estimator.bootstrap > 0 {
        let boot = bootstrap_se(
            w,
            z,
            &perturbation(cov.as_ref(), m),
            cfg.estimator.bootstrap,
            derive_seed(seed, "bootstrap", 0),
            &BootstrapTarget::Rungs,
        )?;
        est.se_bootstrap = Some(boot.se_target);
        est.interval = boot.interval;
    }
    Ok((est, cov))
}

fn simple_estimators(run: &PoolRun) -> Vec<Estimate> {
    let Some(ll) = run.w.log_likelihoods() else {
        return Vec::new();
    };
    let m = run.w.m();
    let pick = |rung: usize| -> Vec<f64> {
        ll.iter()
            .zip(run.w.labels())
            .filter(|(_, &l)| l == rung)
            .map(|(v, _)| *v)
            .collect()
    };
    let mut out = Vec::new();
    if let Ok(v) = hme(&pick(m - 1)) {
        out.push(Estimate::point("hme", v));
    }
    // Rung 0 is the prior except on the auxiliary path.
    if run.spec.kind != BridgeKind::AuxiliaryPath {
        if let Ok(v) = ame(&pick(0)) {
            out.push(Estimate::point("ame", v));
        }
    }
    out.retain(|e| e.log_z.is_finite());
    out
}

fn reweight_target(cfg: &ExperimentConfig, model: &Built) -> Result<Option<ReweightTarget>> {
    let Some(section) = &cfg.reweight else {
        return Ok(None);
    };
    let Built::Mixture(mm) = model else {
        return Err(Error::Config(
            "reweighting overrides apply to the mixture model".into(),
        ));
    };
    let alt = mm.with_hyper(section.hyper.apply(mm.hyper().clone())?);
    Ok(Some(ReweightTarget::alternative_prior(
        "alternative mixture prior",
        move |theta| alt.log_prior(theta),
    )))
}

pub(crate) fn reweight_pass(
    cfg: &ExperimentConfig,
    model: &Built,
    run: &PoolRun,
    cov: Option<&CovarianceEstimate>,
    seed: u64,
) -> Result<Option<ReweightEstimate>> {
    let Some(target) = reweight_target(cfg, model)? else {
        return Ok(None);
    };
    let (w, z) = (&run.w, &run.z);
    if cfg.estimator.bootstrap > 0 {
        return reweight_evidence_with_se(
            w,
            z,
            &perturbation(cov, w.m()),
            &run.pool,
            model.target(),
            &target,
            cfg.estimator.bootstrap,
            derive_seed(seed, "reweight", 0),
        )
        .map(Some);
    }
    let p = PseudoMixture::new(w.counts(), z);
    let mut est = reweight_evidence(&p, w, &run.pool, model.target(), &target)?;
    if let Some(c) = cov {
        let r = target_log_ratios(w, &run.pool, model.target(), &target)?;
        est.se = finite_or_none(delta_method_se(w, z, &c.cov, &r));
    }
    Ok(Some(est))
}

fn nested_experiment(
    cfg: &ExperimentConfig,
    model: &Built,
    seed: u64,
) -> Result<(Estimate, Vec<Estimate>, Diagnostics, Vec<f64>, NSRun)> {
    let n = &cfg.nested;
    let ncfg = NestedConfig {
        n_live: n.n_live,
        steps: n.steps,
        expand_factor: n.expand,
        seed,
        tie: n.tie,
        max_proposals: n.max_proposals,
    };
    let run = nested_run(model.target(), &ncfg)?;
    let boot = (cfg.estimator.bootstrap > 0)
        .then(|| (cfg.estimator.bootstrap, derive_seed(seed, "bootstrap", 0)));
    let ns = Estimate::point("nested", ns_evidence(&run));
    let shell = shell_recursive_evidence(&run, boot)?;
    let ins = ins_evidence(&run, model.target(), boot)?;
    let to_est = |name: &str, e: &crate::nested::NestedEstimate| Estimate {
        estimator: name.into(),
        log_z: e.log_z,
        se_hessian: e.se_hessian,
        se_bootstrap: e.se_bootstrap,
        ess: e.ess,
        interval: None,
        se_unreliable: e.se_unreliable,
    };
    let shell_est = to_est("shell_recursive", &shell);
    let ins_est = to_est("ins", &ins);
    let mut all = vec![ns, ins_est, shell_est];
    let primary_name = cfg.estimator.kind.name();
    let idx = all
        .iter()
        .position(|e| e.estimator == primary_name)
        .expect("nested estimator kinds are all computed");
    let primary = all.remove(idx);
    let diag = Diagnostics {
        n_draws: run.likelihood_calls,
        mean_overhead: Some(run.mean_overhead()),
        likelihood_calls: Some(run.likelihood_calls),
        boundary_hits: Some(run.boundary_hits),
        ..Default::default()
    };
    Ok((primary, all, diag, shell.log_z_rungs, run))
}

/// Runs the configured experiment with `cfg.run.seed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    run_with_seed(cfg, cfg.run.seed)
}

/// Runs the configured experiment with an explicit seed. The embedded config
/// in the report carries that seed, so re-running it reproduces the report.
pub fn run_with_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Experiment> {
    cfg.validate()?;
    let start = Instant::now();
    let mut embedded = cfg.clone();
    embedded.run.seed = seed;
    let model = build_model(cfg, seed)?;
    let kind = cfg.estimator.kind;

    let (primary, companions, diagnostics, log_z_rungs, reweight, trace) = if kind.uses_nested_run()
    {
        let (p, c, d, rungs, run) = nested_experiment(cfg, &model, seed)?;
        (p, c, d, rungs, None, Trace::Nested(run))
    } else {
        let run = pool_run(cfg, &model, seed)?;
        let mut warnings = Vec::new();
        let (rec, cov) = recursive_estimate(cfg, &run, seed, &mut warnings)?;
        let mut companions = simple_estimators(&run);
        let primary = match kind {
            EstimatorKind::Recursive => rec,
            EstimatorKind::Tivis => {
                let t = tivis_estimate(
                    &run.w,
                    &run.z.log_z,
                    cfg.estimator.quad_points,
                    cfg.estimator.tol,
                    cfg.estimator.max_iter,
                )?;
                let tivis = Estimate {
                    estimator: "tivis".into(),
                    log_z: t.log_z[run.w.m() - 1],
                    interval: None,
                    ..rec.clone()
                };
                companions.insert(0, rec);
                tivis
            }
            EstimatorKind::Hme | EstimatorKind::Ame => {
                let name = kind.name();
                let idx = companions
                    .iter()
                    .position(|e| e.estimator == name)
                    .ok_or_else(|| Error::Config(format!("{name} is undefined for this bridge")))?;
                let e = companions.remove(idx);
                companions.insert(0, rec);
                e
            }
            _ => unreachable!("nested kinds handled above"),
        };
        let reweight = reweight_pass(cfg, &model, &run, cov.as_ref(), seed)?;
        let diagnostics = Diagnostics {
            n_draws: run.pool.len(),
            counts: run.pool.counts.clone(),
            acceptance: run
                .pool
                .acceptance
                .iter()
                .map(|&a| finite_or_none(a))
                .collect(),
            swap_acceptance: run
                .pool
                .swap_acceptance
                .iter()
                .map(|&a| finite_or_none(a))
                .collect(),
            connectivity: Some(run.connectivity.clone()),
            iterations: Some(run.z.iterations),
            final_delta: Some(run.z.final_delta),
            aux_regularized: run.aux_regularized,
            warnings,
            ..Default::default()
        };
        (
            primary,
            companions,
            diagnostics,
            run.z.log_z.clone(),
            reweight,
            Trace::Pool(run.pool),
        )
    };

    if !primary.log_z.is_finite() {
        return Err(Error::Invariant(format!(
            "{} produced a non-finite log evidence",
            primary.estimator
        )));
    }
    let report = EstimateReport {
        estimator: primary.estimator,
        log_z: primary.log_z,
        se_hessian: primary.se_hessian,
        se_bootstrap: primary.se_bootstrap,
        se_replicate: None,
        ess: primary.ess,
        interval: primary.interval,
        se_unreliable: primary.se_unreliable,
        log_z_rungs,
        companions,
        reweight,
        diagnostics,
        config_hash: embedded.hash(),
        config: embedded,
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(Experiment { report, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_banana(kind: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            "sampler.n_tot = 500\nsampler.burn_in = 200\nestimator.kind = \"{kind}\"\n\
             nested.n_live = 20\nnested.steps = 100\nrun.seed = 5\n"
        ))
        .unwrap()
    }

    #[test]
    fn banana_recursive_report() {
        let exp = run_experiment(&small_banana("recursive")).unwrap();
        let r = &exp.report;
        assert_eq!(r.estimator, "recursive");
        assert_eq!(r.log_z_rungs.len(), 5);
        assert_eq!(r.log_z_rungs[0], 0.0);
        assert_eq!(r.log_z, r.log_z_rungs[4]);
        assert!((r.log_z + 4.154).abs() < 1.0, "{}", r.log_z);
        assert!(r.se_hessian.unwrap() > 0.0);
        assert_eq!(r.diagnostics.n_draws, 500);
        assert!(r.companions.iter().any(|e| e.estimator == "hme"));
        assert!(r.companions.iter().any(|e| e.estimator == "ame"));
        assert_eq!(r.seed, 5);
    }

    #[test]
    fn report_round_trips_and_reruns_bit_identically() {
        let exp = run_experiment(&small_banana("recursive")).unwrap();
        let parsed = EstimateReport::from_json(&exp.report.to_json()).unwrap();
        assert_eq!(parsed.config, exp.report.config);
        let again = run_experiment(&parsed.config).unwrap();
        assert_eq!(again.report.log_z.to_bits(), exp.report.log_z.to_bits());
        assert_eq!(again.report.config_hash, exp.report.config_hash);
    }

    #[test]
    fn tivis_matches_recursive() {
        let r = run_experiment(&small_banana("tivis")).unwrap().report;
        let rec = &r.companions[0];
        assert_eq!(rec.estimator, "recursive");
        assert!((r.log_z - rec.log_z).abs() < 1e-4);
    }

    #[test]
    fn nested_kinds_share_one_run() {
        let a = run_experiment(&small_banana("nested")).unwrap().report;
        let b = run_experiment(&small_banana("ins")).unwrap().report;
        assert_eq!(a.estimator, "nested");
        assert_eq!(b.estimator, "ins");
        let ins_in_a = a.companions.iter().find(|e| e.estimator == "ins").unwrap();
        assert_eq!(ins_in_a.log_z, b.log_z);
        assert!(a.diagnostics.mean_overhead.unwrap() >= 0.0);
        let s = a
            .companions
            .iter()
            .find(|e| e.estimator == "shell_recursive")
            .unwrap();
        assert!(s.se_unreliable);
    }

    #[test]
    fn writes_report_and_trace() {
        let dir = tempfile::tempdir().unwrap();
        let exp = run_experiment(&small_banana("recursive")).unwrap();
        exp.write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert_eq!(
            EstimateReport::from_json(&text).unwrap().log_z,
            exp.report.log_z
        );
        let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 501);
    }

    #[test]
    fn mixture_partial_data_runs() {
        let cfg = ExperimentConfig::from_toml_str(
            "model.kind = \"mixture\"\nmodel.prior = \"chib\"\nmodel.variant = \"chib78\"\n\
             bridge.kind = \"partial_data\"\nbridge.m = 10\nbridge.c = 2.0\n\
             sampler.per_rung = 50\nreweight.kappa = 21.0\n",
        )
        .unwrap();
        let r = run_experiment(&cfg).unwrap().report;
        assert_eq!(r.log_z_rungs.len(), 10);
        assert_eq!(r.diagnostics.counts, vec![50; 10]);
        assert!(r.log_z < -200.0 && r.log_z > -260.0, "{}", r.log_z);
        let rw = r.reweight.unwrap();
        assert!(rw.log_z.is_finite() && rw.se.is_some());
    }

    #[test]
    fn config_errors_are_classified() {
        let cfg = ExperimentConfig::from_toml_str("bridge.m = 1").unwrap();
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.class().exit_code(), 2);
        let cfg = ExperimentConfig::from_toml_str("sampler.n_tot = 501").unwrap();
        assert_eq!(run_experiment(&cfg).unwrap_err().class().exit_code(), 2);
    }
}
