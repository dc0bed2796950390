use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use recnorm::experiment::{
    csweep, galaxy_study, replicate_study, run_with_seed, EstimatorKind, ExperimentConfig,
    ReplicateStudy,
};
use recnorm::model::{quadrature_evidence, BananaModel};
use recnorm::{Error, ErrorClass};
use serde_json::json;

/// Recursive marginal-likelihood estimation experiments.
#[derive(Parser)]
#[command(name = "recnorm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Banana evidence by grid quadrature.
    Oracle {
        /// Grid points per axis (odd).
        #[arg(long, default_value_t = 2001)]
        points: usize,
    },
    /// One run of the configured estimator.
    Estimate(Common),
    /// Replicate study over `run.n_tot_grid`.
    Replicate(Common),
    /// Nested sampling with the NS, INS and shell-recursive estimates.
    Nested(Common),
    /// Posterior over the number of mixture components.
    Galaxy(Common),
    /// One run plus the `[reweight]` alternative-prior estimate.
    Reweight(Common),
    /// Replicate study over `run.c_grid`.
    Csweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replicate count; overrides `run.replicates`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Full-size galaxy profile.
    #[arg(long)]
    full: bool,
}

const GALAXY_DEFAULT: &str = "\
model.kind = \"mixture\"
bridge.kind = \"partial_data\"
bridge.m = 10
bridge.c = 2.0
";

const CHIB_DEFAULT: &str = "\
model.kind = \"mixture\"
model.variant = \"chib78\"
model.prior = \"chib\"
model.k = 3
bridge.kind = \"partial_data\"
bridge.m = 10
bridge.c = 2.0
sampler.per_rung = 200
";

impl Common {
    fn load(&self, fallback: &str) -> recnorm::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::from_toml_str(fallback)?,
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.run.out = Some(o.clone());
        }
        if let Some(r) = self.replicates {
            cfg.run.replicates = r;
        }
        if self.full {
            cfg.galaxy.full = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A failure as reported on stderr.
struct Failure {
    class: ErrorClass,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("json values serialize")
    );
}

fn single(cfg: &ExperimentConfig) -> recnorm::Result<()> {
    let exp = run_with_seed(cfg, cfg.run.seed)?;
    if let Some(dir) = &cfg.run.out {
        exp.write(dir)?;
        info!("wrote {}", dir.display());
    }
    println!("{}", exp.report.to_json());
    Ok(())
}

fn study_out(study: &ReplicateStudy, out: Option<&Path>) -> Result<(), Failure> {
    if let Some(dir) = out {
        study.write(dir)?;
        info!("wrote {}", dir.display());
    }
    println!("estimator,n_tot,c,replicates,mean_log_z,replicate_se,mean_se_hessian");
    for s in &study.summary {
        let hess = s
            .mean_se_hessian
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        println!(
            "{},{},{},{},{:.6},{:.6},{}",
            s.estimator, s.n_tot, s.c, s.replicates, s.mean_log_z, s.replicate_se, hess
        );
    }
    match &study.failure {
        Some(f) => Err(Failure {
            class: f.class,
            message: format!(
                "replicate {} (n_tot {}, c {}) failed: {}",
                f.replicate, f.n_tot, f.c, f.message
            ),
        }),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Oracle { points } => {
            let log_z = quadrature_evidence(&BananaModel, points)?;
            print_json(&json!({ "log_z": log_z, "z": log_z.exp(), "points": points }));
            Ok(())
        }
        Command::Estimate(c) => Ok(single(&c.load("")?)?),
        Command::Nested(c) => {
            let mut cfg = c.load("")?;
            if !cfg.estimator.kind.uses_nested_run() {
                cfg.estimator.kind = EstimatorKind::Nested;
            }
            cfg.validate()?;
            if c.replicates.is_some() {
                let study = replicate_study(&cfg, cfg.run.replicates, cfg.run.seed)?;
                study_out(&study, cfg.run.out.as_deref())
            } else {
                Ok(single(&cfg)?)
            }
        }
        Command::Reweight(c) => {
            let cfg = c.load(CHIB_DEFAULT)?;
            if cfg.reweight.is_none() {
                return Err(Error::Config("reweight needs a [reweight] section".into()).into());
            }
            Ok(single(&cfg)?)
        }
        Command::Replicate(c) => {
            let cfg = c.load("")?;
            let study = replicate_study(&cfg, cfg.run.replicates, cfg.run.seed)?;
            study_out(&study, cfg.run.out.as_deref())
        }
        Command::Csweep(c) => {
            let cfg = c.load(CHIB_DEFAULT)?;
            let study = csweep(&cfg, cfg.run.replicates, cfg.run.seed)?;
            study_out(&study, cfg.run.out.as_deref())?;
            if let Some(best) = study.best_c("recursive") {
                info!("smallest replicate SE at c = {best}");
            }
            Ok(())
        }
        Command::Galaxy(c) => {
            let cfg = c.load(GALAXY_DEFAULT)?;
            let g = galaxy_study(&cfg)?;
            if let Some(dir) = &cfg.run.out {
                g.write(dir)?;
                info!("wrote {}", dir.display());
            }
            print_json(&serde_json::to_value(&g).map_err(Error::from)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.class.exit_code();
            eprintln!(
                "{}",
                json!({ "error": f.class.name(), "exit_code": code, "message": f.message })
            );
            ExitCode::from(code as u8)
        }
    }
}
