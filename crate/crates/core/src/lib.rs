//! Marginal likelihood estimation by biased sampling (reverse logistic
//! regression), with thermodynamic-integration, nested-sampling and
//! importance-sampling companions.

pub mod bridge;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod model;
pub mod nested;
pub mod numeric;
pub mod optim;
pub mod reweight;
pub mod sampler;
pub mod seed;
pub mod uncertainty;

pub use bridge::{AuxFamily, BridgeKind, BridgeSpec, LogWeightMatrix};
pub use error::{Error, ErrorClass, Result};
pub use estimators::{recursive_normalize, LogNormalizers, PseudoMixture};
pub use experiment::{run_experiment, EstimateReport, ExperimentConfig};
pub use model::{BananaModel, GalaxyVariant, MixtureHyper, MixtureModel, TargetModel};
pub use nested::{NSRun, NestedConfig};
pub use sampler::{ChainConfig, DrawPool};
pub use seed::{derive_seed, rng_for, Rng};
pub use uncertainty::CovarianceEstimate;
