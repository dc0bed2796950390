#![allow(dead_code)]

use std::io::Write;

use recnorm::bridge::{eval_weight_matrix, BridgeSpec, LogWeightMatrix};
use recnorm::model::{BetaPrior, MixtureHyper, MixtureModel, TargetModel};
use recnorm::numeric::{
    gamma_log_pdf, ln_gamma, logsumexp, normal_log_pdf_precision, LogAccumulator,
};
use recnorm::sampler::{gibbs_mixture, mc3_sample, ChainConfig, DrawPool, GibbsConfig};
use recnorm::seed::derive_seed;

/// Writes straight to stdout so the line survives the test harness's capture.
pub fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn banana_chain(seed: u64) -> ChainConfig {
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

pub fn mc3_weights<M: TargetModel>(
    model: &M,
    spec: &BridgeSpec,
    per_rung: usize,
    seed: u64,
) -> (DrawPool, LogWeightMatrix) {
    let pool = mc3_sample(model, spec, per_rung, &banana_chain(seed)).unwrap();
    let w = eval_weight_matrix(&pool, spec, model).unwrap();
    (pool, w)
}

pub fn gibbs_weights(
    model: &MixtureModel,
    spec: &BridgeSpec,
    per_rung: usize,
    seed: u64,
) -> (DrawPool, LogWeightMatrix) {
    let mut draws = Vec::new();
    let mut labels = Vec::new();
    for (j, &r) in spec.r.iter().enumerate() {
        let cfg = GibbsConfig {
            draws: per_rung,
            burn_in: 100,
            thin: 0.9,
            seed: derive_seed(seed, "rung", j as u64),
        };
        let out = gibbs_mixture(model, r, &cfg).unwrap();
        draws.extend(out.params.iter().map(|p| p.to_vec()));
        labels.extend(std::iter::repeat_n(j, per_rung));
    }
    let pool = DrawPool::new(draws, labels, spec.m).unwrap();
    let w = eval_weight_matrix(&pool, spec, model).unwrap();
    (pool, w)
}

/// Log evidence and posterior mean of `mu` for one Normal component with
/// `(mu, tau)` integrated on a grid.
fn component_grid(y: &[f64], h: &MixtureHyper, beta: f64) -> (f64, f64) {
    let (nm, nt) = (1601, 401);
    let (m_lo, m_hi) = (h.kappa - 8.0 / h.xi.sqrt(), h.kappa + 8.0 / h.xi.sqrt());
    let (t_lo, t_hi) = (1e-6, 40.0);
    let dm = (m_hi - m_lo) / (nm - 1) as f64;
    let dt = (t_hi - t_lo) / (nt - 1) as f64;
    let mut z = LogAccumulator::default();
    let mut zmu = LogAccumulator::default();
    let shift = h.kappa.abs() + 9.0 / h.xi.sqrt();
    for a in 0..nm {
        let mu = m_lo + dm * a as f64;
        for b in 0..nt {
            let tau = t_lo + dt * b as f64;
            let mut l =
                normal_log_pdf_precision(mu, h.kappa, h.xi) + gamma_log_pdf(tau, h.alpha, beta);
            for &yi in y {
                l += normal_log_pdf_precision(yi, mu, tau);
            }
            z.push(l);
            zmu.push(l + (mu + shift).ln());
        }
    }
    let lz = z.value() + (dm * dt).ln();
    (lz, (zmu.value() - z.value()).exp() - shift)
}

/// Posterior mean of `mu_1 + mu_2` for a two-component mixture, by exact
/// enumeration of allocations.
pub fn grid_sum_of_means(y: &[f64], h: &MixtureHyper, beta: f64) -> f64 {
    let n = y.len();
    let mut weights = Vec::new();
    let mut values = Vec::new();
    for mask in 0u32..(1 << n) {
        let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (mask & (1 << i) != 0, y[i])).fold(
            (Vec::new(), Vec::new()),
            |(mut a, mut b), (bit, v)| {
                if bit {
                    b.push(v)
                } else {
                    a.push(v)
                }
                (a, b)
            },
        );
        let (n1, n2) = (a.len() as f64, b.len() as f64);
        let mut lw =
            ln_gamma(2.0) + ln_gamma(1.0 + n1) + ln_gamma(1.0 + n2) - ln_gamma(2.0 + n as f64);
        let mut v = 0.0;
        for g in [&a, &b] {
            if g.is_empty() {
                v += h.kappa;
            } else {
                let (lz, pm) = component_grid(g, h, beta);
                lw += lz;
                v += pm;
            }
        }
        weights.push(lw);
        values.push(v);
    }
    let norm = logsumexp(&weights);
    weights
        .iter()
        .zip(&values)
        .map(|(w, v)| (w - norm).exp() * v)
        .sum()
}

pub fn five_point_model() -> (Vec<f64>, MixtureHyper, MixtureModel) {
    let y = vec![-1.8, -1.1, 0.9, 1.6, 2.2];
    let hyper = MixtureHyper {
        kappa: 0.0,
        xi: 0.25,
        alpha: 2.0,
        beta: BetaPrior::Fixed { value: 1.0 },
        lambda: 5.0,
        k_min: 2,
        k_max: 2,
    };
    let model = MixtureModel::new(y.clone(), 2, hyper.clone(), 0).unwrap();
    (y, hyper, model)
}

/// Batch-means SE of a correlated series.
pub fn batch_se(xs: &[f64]) -> f64 {
    let b = 50;
    let size = xs.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    recnorm::numeric::sample_sd(&means) / (b as f64).sqrt()
}
