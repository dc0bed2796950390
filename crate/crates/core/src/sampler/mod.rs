//! Draw generation: random-walk Metropolis, Metropolis-coupled chains across
//! bridge rungs, and a conjugate Gibbs sampler for the Normal mixture.

mod gibbs;

pub use gibbs::{gibbs_mixture, GibbsConfig, GibbsOutput};

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeKind, BridgeSpec};
use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::seed::{rng_for, Rng};

/// Acceptance rate targeted while adapting proposal scales during burn-in.
pub const TARGET_ACCEPTANCE: f64 = 0.375;

/// Pooled draws with their source-rung labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawPool {
    pub draws: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub thin: f64,
    /// Within-rung acceptance rates after burn-in, one per rung.
    #[serde(default)]
    pub acceptance: Vec<f64>,
    /// Acceptance rates of swaps between rungs `j` and `j + 1`.
    #[serde(default)]
    pub swap_acceptance: Vec<f64>,
}

impl DrawPool {
    pub fn new(draws: Vec<Vec<f64>>, labels: Vec<usize>, m: usize) -> Result<Self> {
        if draws.len() != labels.len() {
            return Err(Error::InvalidArgument("one label per draw required".into()));
        }
        let mut counts = vec![0; m];
        for &l in &labels {
            if l >= m {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for m = {m}"
                )));
            }
            counts[l] += 1;
        }
        Ok(Self {
            draws,
            labels,
            counts,
            seed: 0,
            thin: 1.0,
            acceptance: Vec::new(),
            swap_acceptance: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    /// Writes `replicate,rung,draw,theta_0,...` rows (rungs and draws 1-based).
    pub fn write_trace<W: Write>(&self, out: W, replicate: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.draws.first().map_or(0, Vec::len);
        let mut header = vec!["replicate".to_string(), "rung".into(), "draw".into()];
        header.extend((0..dim).map(|d| format!("theta_{d}")));
        w.write_record(&header)?;
        let mut per_rung = vec![0usize; self.m()];
        for (theta, &l) in self.draws.iter().zip(&self.labels) {
            per_rung[l] += 1;
            let mut rec = vec![
                replicate.to_string(),
                (l + 1).to_string(),
                per_rung[l].to_string(),
            ];
            rec.extend(theta.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total steps, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    /// Retention fraction in `(0, 1]`.
    pub thin: f64,
    pub proposal_scale: Vec<f64>,
    pub swap_interval: usize,
    pub seed: u64,
    /// Adapt the proposal scale during burn-in.
    pub adapt: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < self.burn_in {
            return Err(Error::Config(format!(
                "steps ({}) must not be below burn_in ({})",
                self.steps, self.burn_in
            )));
        }
        if !(self.thin > 0.0 && self.thin <= 1.0) {
            return Err(Error::Config(format!(
                "thin must lie in (0, 1], got {}",
                self.thin
            )));
        }
        if self.proposal_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("proposal scales must be positive".into()));
        }
        if self.swap_interval == 0 {
            return Err(Error::Config("swap_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Whether post-burn-in step `s` survives thinning at retention `f`.
pub fn keep_step(s: usize, f: f64) -> bool {
    ((s + 1) as f64 * f).floor() > (s as f64 * f).floor()
}

/// Smallest post-burn-in step count that retains `n` draws at fraction `f`.
pub fn steps_for_draws(n: usize, f: f64) -> usize {
    let mut s = (n as f64 / f).floor() as usize;
    while ((s as f64) * f).floor() < n as f64 {
        s += 1;
    }
    s
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate (`NaN` if no post-burn-in steps).
    pub acceptance: f64,
    pub final_scale: Vec<f64>,
}

/// Robbins–Monro step on the log scale multiplier.
fn adapt_log_scale(log_scale: &mut f64, step: usize, accepted: bool) {
    let gain = 1.0 / ((step + 1) as f64).powf(0.6);
    *log_scale += gain * (f64::from(u8::from(accepted)) - TARGET_ACCEPTANCE);
}

fn propose(rng: &mut Rng, x: &[f64], scale: &[f64], mult: f64) -> Vec<f64> {
    x.iter()
        .zip(scale)
        .map(|(xi, si)| {
            let z: f64 = StandardNormal.sample(rng);
            xi + mult * si * z
        })
        .collect()
}

/// Gaussian random-walk Metropolis on an unnormalized log density.
pub fn rwm_chain<F>(log_target: F, init: &[f64], cfg: &ChainConfig) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if cfg.proposal_scale.len() != init.len() {
        return Err(Error::Config(
            "proposal_scale length must match dimension".into(),
        ));
    }
    let mut x = init.to_vec();
    let mut fx = log_target(&x);
    if !fx.is_finite() {
        return Err(Error::OutsideSupport { index: 0 });
    }
    let mut rng = rng_for(cfg.seed, "chain", 0);
    let mut log_mult = 0.0f64;
    let mut draws = Vec::new();
    let mut accepted = 0usize;
    for step in 0..cfg.steps {
        let y = propose(&mut rng, &x, &cfg.proposal_scale, log_mult.exp());
        let fy = log_target(&y);
        let u: f64 = rng.random();
        let acc = fy > f64::NEG_INFINITY && u.ln() < fy - fx;
        if acc {
            x = y;
            fx = fy;
        }
        if step < cfg.burn_in {
            if cfg.adapt {
                adapt_log_scale(&mut log_mult, step, acc);
            }
        } else {
            accepted += usize::from(acc);
            if keep_step(step - cfg.burn_in, cfg.thin) {
                draws.push(x.clone());
            }
        }
    }
    let post = cfg.steps - cfg.burn_in;
    Ok(ChainOutput {
        draws,
        acceptance: accepted as f64 / post as f64,
        final_scale: cfg
            .proposal_scale
            .iter()
            .map(|s| s * log_mult.exp())
            .collect(),
    })
}

/// A chain state with its cached log prior, log likelihood and `log h - log pi`.
#[derive(Debug, Clone)]
struct State {
    theta: Vec<f64>,
    lp: f64,
    ll: f64,
    lr: f64,
}

impl State {
    fn eval<M: TargetModel + ?Sized>(theta: Vec<f64>, model: &M, spec: &BridgeSpec) -> Self {
        let lp = model.log_prior(&theta);
        if lp == f64::NEG_INFINITY {
            return Self {
                theta,
                lp,
                ll: f64::NEG_INFINITY,
                lr: 0.0,
            };
        }
        let ll = model.log_likelihood(&theta);
        let lr = match (&spec.aux, spec.kind) {
            (Some(aux), BridgeKind::AuxiliaryPath) => aux.log_density(&theta) - lp,
            _ => 0.0,
        };
        Self { theta, lp, ll, lr }
    }

    fn log_target(&self, spec: &BridgeSpec, rung: usize) -> f64 {
        if self.lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.lp + spec.log_weight(rung, self.ll, self.lr)
    }
}

/// Metropolis-coupled MCMC: one random-walk chain per rung, with adjacent
/// state swaps proposed every `swap_interval` steps.
///
/// `cfg.steps` is ignored: each chain runs `burn_in` steps followed by just
/// enough steps to keep `per_rung` draws after thinning.
pub fn mc3_sample<M: TargetModel + ?Sized>(
    model: &M,
    spec: &BridgeSpec,
    per_rung: usize,
    cfg: &ChainConfig,
) -> Result<DrawPool> {
    if per_rung == 0 {
        return Err(Error::Config("per_rung must be positive".into()));
    }
    if !matches!(
        spec.kind,
        BridgeKind::PowerPosterior | BridgeKind::AuxiliaryPath
    ) {
        return Err(Error::Config(format!(
            "MC3 needs a tempered bridge, got {:?}",
            spec.kind
        )));
    }
    // A single rung is allowed here: it degenerates to plain random-walk Metropolis.
    if spec.m == 1 {
        if spec.t.len() != 1 {
            return Err(Error::Config(
                "one temperature required for a single rung".into(),
            ));
        }
    } else {
        spec.validate()?;
    }
    let post = steps_for_draws(per_rung, cfg.thin.clamp(f64::MIN_POSITIVE, 1.0));
    let total = cfg.burn_in + post;
    ChainConfig {
        steps: total,
        ..cfg.clone()
    }
    .validate()?;
    let m = spec.m;
    let d = model.dim();
    if cfg.proposal_scale.len() != d {
        return Err(Error::Config(
            "proposal_scale length must match dimension".into(),
        ));
    }

    let mut rungs: Vec<Rng> = (0..m)
        .map(|j| rng_for(cfg.seed, "chain", j as u64))
        .collect();
    let mut swap_rng = rng_for(cfg.seed, "swap", 0);
    let mut states: Vec<State> = Vec::with_capacity(m);
    for j in 0..m {
        let mut rng = rng_for(cfg.seed, "init", j as u64);
        let mut tries = 0;
        loop {
            let s = State::eval(model.sample_prior(&mut rng), model, spec);
            if s.log_target(spec, j).is_finite() {
                states.push(s);
                break;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::OutsideSupport { index: j });
            }
        }
    }

    let mut log_mult = vec![0.0f64; m];
    let mut accepted = vec![0usize; m];
    let mut swaps_tried = vec![0usize; m.saturating_sub(1)];
    let mut swaps_done = vec![0usize; m.saturating_sub(1)];
    let mut per: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(per_rung); m];

    for step in 0..total {
        for j in 0..m {
            let rng = &mut rungs[j];
            let cur = &states[j];
            let y = propose(rng, &cur.theta, &cfg.proposal_scale, log_mult[j].exp());
            let u: f64 = rng.random();
            let prop = State::eval(y, model, spec);
            let fy = prop.log_target(spec, j);
            let acc = fy > f64::NEG_INFINITY && u.ln() < fy - cur.log_target(spec, j);
            if acc {
                states[j] = prop;
            }
            if step < cfg.burn_in {
                if cfg.adapt {
                    adapt_log_scale(&mut log_mult[j], step, acc);
                }
            } else {
                accepted[j] += usize::from(acc);
            }
        }
        if m > 1 && (step + 1) % cfg.swap_interval == 0 {
            for j in 0..m - 1 {
                let (a, b) = (&states[j], &states[j + 1]);
                let log_ratio = b.log_target(spec, j) + a.log_target(spec, j + 1)
                    - a.log_target(spec, j)
                    - b.log_target(spec, j + 1);
                let u: f64 = swap_rng.random();
                swaps_tried[j] += 1;
                if log_ratio >= 0.0 || u.ln() < log_ratio {
                    states.swap(j, j + 1);
                    swaps_done[j] += 1;
                }
            }
        }
        if step >= cfg.burn_in && keep_step(step - cfg.burn_in, cfg.thin) {
            for j in 0..m {
                if per[j].len() < per_rung {
                    per[j].push(states[j].theta.clone());
                }
            }
        }
    }

    let mut draws = Vec::with_capacity(m * per_rung);
    let mut labels = Vec::with_capacity(m * per_rung);
    for (j, ds) in per.into_iter().enumerate() {
        labels.extend(std::iter::repeat(j).take(ds.len()));
        draws.extend(ds);
    }
    let mut pool = DrawPool::new(draws, labels, m)?;
    pool.seed = cfg.seed;
    pool.thin = cfg.thin;
    pool.acceptance = accepted.iter().map(|&a| a as f64 / post as f64).collect();
    pool.swap_acceptance = swaps_tried
        .iter()
        .zip(&swaps_done)
        .map(|(&t, &s)| {
            if t == 0 {
                f64::NAN
            } else {
                s as f64 / t as f64
            }
        })
        .collect();
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BananaModel, BoxBounds};
    use crate::numeric::{mean, sample_sd};

    fn cfg(steps: usize, burn_in: usize, scale: f64, dim: usize) -> ChainConfig {
        ChainConfig {
            steps,
            burn_in,
            thin: 1.0,
            proposal_scale: vec![scale; dim],
            swap_interval: 10,
            seed: 11,
            adapt: true,
        }
    }

    #[test]
    fn thinning_rule() {
        let kept: Vec<usize> = (0..12).filter(|&s| keep_step(s, 0.25)).collect();
        assert_eq!(kept, vec![3, 7, 11]);
        assert_eq!((0..1000).filter(|&s| keep_step(s, 0.9)).count(), 900);
        assert_eq!(steps_for_draws(200, 0.9), 223);
        assert_eq!(steps_for_draws(250, 0.25), 1000);
        assert_eq!(steps_for_draws(7, 1.0), 7);
    }

    #[test]
    fn uniform_target_accepts_every_in_box_move() {
        let b = BoxBounds::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        let inside = b.clone();
        let target = move |t: &[f64]| {
            if inside.contains(t) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut c = cfg(40_000, 0, 1e-3, 2);
        c.adapt = false;
        let out = rwm_chain(&target, &[0.5, 1.0], &c).unwrap();
        assert_eq!(out.acceptance, 1.0);

        let c = cfg(60_000, 2_000, 0.3, 2);
        let out = rwm_chain(&target, &[0.5, 1.0], &c).unwrap();
        let xs: Vec<f64> = out.draws.iter().map(|x| x[0]).collect();
        // Batch means for the autocorrelated chain.
        let batches: Vec<f64> = xs.chunks(2_000).map(mean).collect();
        let se = sample_sd(&batches) / (batches.len() as f64).sqrt();
        assert!(
            (mean(&xs) - 0.5).abs() < 3.0 * se + 1e-3,
            "{} {se}",
            mean(&xs)
        );
    }

    #[test]
    fn standard_normal_variance() {
        let c = cfg(100_000, 2_000, 1.0, 1);
        let out = rwm_chain(|t: &[f64]| -0.5 * t[0] * t[0], &[0.0], &c).unwrap();
        let xs: Vec<f64> = out.draws.iter().map(|x| x[0]).collect();
        let v = sample_sd(&xs).powi(2);
        assert!((v - 1.0).abs() < 0.05, "{v}");
        assert!(
            (out.acceptance - TARGET_ACCEPTANCE).abs() < 0.1,
            "{}",
            out.acceptance
        );
    }

    #[test]
    fn empty_budget_and_bad_init() {
        let c = cfg(100, 100, 1.0, 1);
        let out = rwm_chain(|t: &[f64]| -t[0] * t[0], &[0.0], &c).unwrap();
        assert!(out.draws.is_empty());
        assert!(rwm_chain(|_: &[f64]| f64::NEG_INFINITY, &[0.0], &c).is_err());
    }

    fn banana_cfg(seed: u64) -> ChainConfig {
        ChainConfig {
            steps: 0,
            burn_in: 1000,
            thin: 0.25,
            proposal_scale: vec![0.2, 0.2],
            swap_interval: 10,
            seed,
            adapt: true,
        }
    }

    #[test]
    fn mc3_pool_shape_and_determinism() {
        let spec = BridgeSpec::power_posterior(5, 5.0).unwrap();
        let pool = mc3_sample(&BananaModel, &spec, 2500, &banana_cfg(3)).unwrap();
        assert_eq!(pool.len(), 12_500);
        assert_eq!(pool.counts, vec![2500; 5]);
        let again = mc3_sample(&BananaModel, &spec, 2500, &banana_cfg(3)).unwrap();
        assert_eq!(pool, again);
        assert!(pool.draws.iter().all(|t| BananaModel::bounds().contains(t)));
        assert!(mc3_sample(&BananaModel, &spec, 0, &banana_cfg(3)).is_err());
    }

    #[test]
    fn mc3_prior_rung_matches_prior_moments() {
        let spec = BridgeSpec::power_posterior(5, 5.0).unwrap();
        let pool = mc3_sample(&BananaModel, &spec, 20_000, &banana_cfg(8)).unwrap();
        let xs: Vec<f64> = pool
            .draws
            .iter()
            .zip(&pool.labels)
            .filter(|(_, &l)| l == 0)
            .map(|(t, _)| t[0])
            .collect();
        let batches: Vec<f64> = xs.chunks(500).map(mean).collect();
        let se = sample_sd(&batches) / (batches.len() as f64).sqrt();
        assert!((mean(&xs) - 0.5).abs() < 3.0 * se, "{} {se}", mean(&xs));
        // Uniform on a width-2 interval has variance 1/3.
        let v = sample_sd(&xs).powi(2);
        assert!((v - 1.0 / 3.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn identical_rungs_always_swap() {
        let mut spec = BridgeSpec::power_posterior(3, 1.0).unwrap();
        spec.t = vec![0.0, 1.0, 1.0];
        let pool = mc3_sample(&BananaModel, &spec, 200, &banana_cfg(1)).unwrap();
        assert_eq!(pool.swap_acceptance[1], 1.0);
    }

    #[test]
    fn single_rung_is_plain_rwm() {
        let spec = BridgeSpec {
            m: 1,
            t: vec![1.0],
            ..BridgeSpec::power_posterior(2, 1.0).unwrap()
        };
        let c = banana_cfg(2);
        let pool = mc3_sample(&BananaModel, &spec, 300, &c).unwrap();
        let init = BananaModel.sample_prior(&mut rng_for(c.seed, "init", 0));
        let plain = ChainConfig {
            steps: c.burn_in + steps_for_draws(300, c.thin),
            ..c.clone()
        };
        let out = rwm_chain(
            |t: &[f64]| BananaModel.log_prior(t) + BananaModel.log_likelihood(t),
            &init,
            &plain,
        )
        .unwrap();
        assert_eq!(pool.draws, out.draws);
        assert!(pool.swap_acceptance.is_empty());
    }

    #[test]
    fn trace_csv_layout() {
        let pool = DrawPool::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![1, 1], 2).unwrap();
        let mut buf = Vec::new();
        pool.write_trace(&mut buf, 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "replicate,rung,draw,theta_0,theta_1\n4,2,1,1,2\n4,2,2,3,4\n"
        );
    }
}
