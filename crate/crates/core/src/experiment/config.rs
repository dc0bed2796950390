//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{AuxFamily, BridgeKind};
use crate::error::{Error, Result};
use crate::model::{load_galaxy_file, BetaPrior, GalaxyVariant, MixtureHyper};
use crate::nested::{TieRule, DEFAULT_EXPAND, MAX_PROPOSALS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Banana,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPreset {
    #[default]
    Astronomical,
    Chib,
    RichardsonGreen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Recursive,
    Tivis,
    Nested,
    Ins,
    ShellRecursive,
    Hme,
    Ame,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Recursive => "recursive",
            EstimatorKind::Tivis => "tivis",
            EstimatorKind::Nested => "nested",
            EstimatorKind::Ins => "ins",
            EstimatorKind::ShellRecursive => "shell_recursive",
            EstimatorKind::Hme => "hme",
            EstimatorKind::Ame => "ame",
        }
    }

    pub fn uses_nested_run(self) -> bool {
        matches!(
            self,
            EstimatorKind::Nested | EstimatorKind::Ins | EstimatorKind::ShellRecursive
        )
    }
}

/// Optional overrides of the preset mixture hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_fixed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl HyperOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, mut h: MixtureHyper) -> Result<MixtureHyper> {
        if let Some(v) = self.kappa {
            h.kappa = v;
        }
        if let Some(v) = self.xi {
            h.xi = v;
        }
        if let Some(v) = self.alpha {
            h.alpha = v;
        }
        if let Some(v) = self.lambda {
            h.lambda = v;
        }
        match (self.beta_fixed, self.beta_shape, self.beta_rate) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::Config(
                    "beta_fixed cannot be combined with beta_shape/beta_rate".into(),
                ))
            }
            (Some(value), None, None) => h.beta = BetaPrior::Fixed { value },
            (None, None, None) => {}
            (None, shape, rate) => {
                let (s0, r0) = match h.beta {
                    BetaPrior::Gamma { shape, rate } => (shape, rate),
                    BetaPrior::Fixed { .. } => (f64::NAN, f64::NAN),
                };
                h.beta = BetaPrior::Gamma {
                    shape: shape.unwrap_or(s0),
                    rate: rate.unwrap_or(r0),
                };
            }
        }
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    /// Galaxy data file; the bundled copy of `variant` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_variant")]
    pub variant: GalaxyVariant,
    /// Fixed component count (`estimate`, `replicate`, `csweep`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Component range of the galaxy study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub prior: PriorPreset,
    #[serde(default, skip_serializing_if = "HyperOverrides::is_empty")]
    pub hyper: HyperOverrides,
    /// Replace the truncated-Poisson prior on `k` by a uniform one.
    #[serde(default)]
    pub uniform_k: bool,
    /// Seed of the partial-data observation order; derived from the run
    /// seed when absent, so replicates also vary the order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,
}

fn default_variant() -> GalaxyVariant {
    GalaxyVariant::Roeder
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Banana,
            data: None,
            variant: default_variant(),
            k: None,
            k_min: None,
            k_max: None,
            prior: PriorPreset::Astronomical,
            hyper: HyperOverrides::default(),
            uniform_k: false,
            subset_seed: None,
        }
    }
}

impl ModelSection {
    pub fn load_data(&self) -> Result<Vec<f64>> {
        match &self.data {
            Some(p) => load_galaxy_file(p, self.variant),
            None => Ok(self.variant.builtin()),
        }
    }

    /// Preset hyperparameters with overrides and the configured `k` range.
    pub fn hyper(&self, data: &[f64]) -> Result<MixtureHyper> {
        let base = match self.prior {
            PriorPreset::Astronomical => MixtureHyper::astronomical(),
            PriorPreset::Chib => MixtureHyper::chib(),
            PriorPreset::RichardsonGreen => MixtureHyper::richardson_green(data),
        };
        let mut h = self.hyper.apply(base)?;
        if let Some(lo) = self.k_min {
            h.k_min = lo;
        }
        if let Some(hi) = self.k_max {
            h.k_max = hi;
        }
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSection {
    #[serde(default = "default_bridge_kind")]
    pub kind: BridgeKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Auxiliary family (auxiliary_path only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<AuxFamily>,
    /// Smallest nonzero subset size (partial_data only); defaults to `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<usize>,
}

fn default_bridge_kind() -> BridgeKind {
    BridgeKind::PowerPosterior
}
fn default_m() -> usize {
    5
}
fn default_c() -> f64 {
    5.0
}

impl Default for BridgeSection {
    fn default() -> Self {
        Self {
            kind: default_bridge_kind(),
            m: default_m(),
            c: default_c(),
            family: None,
            r_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Total retained draws, split equally over the rungs (MC3).
    #[serde(default = "default_n_tot")]
    pub n_tot: usize,
    /// Retained draws per rung (Gibbs); overrides `n_tot` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_rung: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Defaults to 0.25 for MC3 and 0.9 for Gibbs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<Vec<f64>>,
    #[serde(default = "default_swap_interval")]
    pub swap_interval: usize,
    #[serde(default = "default_true")]
    pub adapt: bool,
}

fn default_n_tot() -> usize {
    12_500
}
fn default_swap_interval() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            n_tot: default_n_tot(),
            per_rung: None,
            burn_in: None,
            thin: None,
            proposal_scale: None,
            swap_interval: default_swap_interval(),
            adapt: true,
        }
    }
}

pub const MC3_THIN: f64 = 0.25;
pub const GIBBS_THIN: f64 = 0.9;
pub const MC3_BURN_IN: usize = 1000;
pub const GIBBS_BURN_IN: usize = 100;
pub const DEFAULT_PROPOSAL_SCALE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Simpson nodes per TIVIS integral.
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    /// Bootstrap replicates; 0 disables the bootstrap SE.
    #[serde(default)]
    pub bootstrap: usize,
}

fn default_tol() -> f64 {
    crate::estimators::DEFAULT_TOL
}
fn default_max_iter() -> usize {
    crate::estimators::DEFAULT_MAX_ITER
}
fn default_quad_points() -> usize {
    201
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Recursive,
            tol: default_tol(),
            max_iter: default_max_iter(),
            quad_points: default_quad_points(),
            bootstrap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedSection {
    #[serde(default = "default_n_live")]
    pub n_live: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_expand")]
    pub expand: f64,
    #[serde(default)]
    pub tie: TieRule,
    #[serde(default = "default_max_proposals")]
    pub max_proposals: usize,
}

fn default_n_live() -> usize {
    125
}
fn default_steps() -> usize {
    1250
}
fn default_expand() -> f64 {
    DEFAULT_EXPAND
}
fn default_max_proposals() -> usize {
    MAX_PROPOSALS
}

impl Default for NestedSection {
    fn default() -> Self {
        Self {
            n_live: default_n_live(),
            steps: default_steps(),
            expand: default_expand(),
            tie: TieRule::default(),
            max_proposals: default_max_proposals(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `n_tot` values of a replicate study; empty means `[sampler.n_tot]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_tot_grid: Vec<usize>,
    /// Schedule exponents of a c-sweep.
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
}

fn default_seed() -> u64 {
    1
}
fn default_replicates() -> usize {
    100
}
fn default_c_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            replicates: default_replicates(),
            out: None,
            n_tot_grid: Vec::new(),
            c_grid: default_c_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalaxySection {
    /// Draws per rung of the smoke profile.
    #[serde(default = "default_smoke_draws")]
    pub smoke_draws: usize,
    /// Draws per rung under `--full`.
    #[serde(default = "default_full_draws")]
    pub full_draws: usize,
    #[serde(default)]
    pub full: bool,
    /// Monte Carlo draws behind the posterior intervals.
    #[serde(default = "default_interval_draws")]
    pub interval_draws: usize,
}

fn default_smoke_draws() -> usize {
    400
}
fn default_full_draws() -> usize {
    4000
}
fn default_interval_draws() -> usize {
    4000
}

impl Default for GalaxySection {
    fn default() -> Self {
        Self {
            smoke_draws: default_smoke_draws(),
            full_draws: default_full_draws(),
            full: false,
            interval_draws: default_interval_draws(),
        }
    }
}

impl GalaxySection {
    pub fn draws_per_rung(&self) -> usize {
        if self.full {
            self.full_draws
        } else {
            self.smoke_draws
        }
    }
}

/// Alternative prior for a reweighting pass (mixture models).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightSection {
    #[serde(flatten)]
    pub hyper: HyperOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub bridge: BridgeSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub nested: NestedSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub galaxy: GalaxySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweight: Option<ReweightSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are taken relative to the config file.
        if let (Some(data), Some(dir)) = (&cfg.model.data, path.parent()) {
            if data.is_relative() {
                cfg.model.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks the settings shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if let Some(p) = &m.data {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.bridge.m < 2 {
            return Err(Error::Config(format!(
                "bridge.m must be at least 2, got {}",
                self.bridge.m
            )));
        }
        if !(self.bridge.c > 0.0) {
            return Err(Error::Config("bridge.c must be positive".into()));
        }
        if let Some(t) = self.sampler.thin {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!(
                    "sampler.thin must lie in (0, 1], got {t}"
                )));
            }
        }
        if self.sampler.swap_interval == 0 {
            return Err(Error::Config(
                "sampler.swap_interval must be positive".into(),
            ));
        }
        if !(self.estimator.tol > 0.0) || self.estimator.max_iter == 0 {
            return Err(Error::Config(
                "estimator.tol and max_iter must be positive".into(),
            ));
        }
        if self.estimator.bootstrap != 0
            && self.estimator.bootstrap < crate::uncertainty::MIN_BOOTSTRAP
        {
            return Err(Error::Config(format!(
                "estimator.bootstrap must be 0 or at least {}",
                crate::uncertainty::MIN_BOOTSTRAP
            )));
        }
        match m.kind {
            ModelKind::Banana => {
                if self.bridge.kind == BridgeKind::PartialData {
                    return Err(Error::Config(
                        "the banana model has no partial-data bridge".into(),
                    ));
                }
            }
            ModelKind::Mixture => {
                if self.estimator.kind.uses_nested_run() {
                    return Err(Error::Config(
                        "nested estimators need a box-bounded model".into(),
                    ));
                }
                let data = m.load_data()?;
                let h = m.hyper(&data)?;
                if let Some(k) = m.k {
                    if k < h.k_min || k > h.k_max {
                        return Err(Error::Config(format!(
                            "k = {k} outside [{}, {}]",
                            h.k_min, h.k_max
                        )));
                    }
                }
                if let Some(r) = &self.reweight {
                    r.hyper.apply(h)?;
                }
            }
        }
        Ok(())
    }
}
