use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::gamma_draw;
use crate::model::{BetaPrior, MixtureModel, MixtureParams};
use crate::numeric::{logsumexp, normal_log_pdf_precision};
use crate::sampler::{keep_step, steps_for_draws};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Draws kept after burn-in and thinning.
    pub draws: usize,
    pub burn_in: usize,
    pub thin: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GibbsOutput {
    pub params: Vec<MixtureParams>,
    /// Component allocation of each of the first `r` observations, per draw.
    pub allocations: Vec<Vec<u8>>,
}

/// Conjugate Gibbs sampler for the mixture posterior given the first `r`
/// observations (in the model's subset order). `r = 0` samples the prior.
///
/// Full conditionals are cycled as `z -> phi -> mu -> tau -> beta`.
pub fn gibbs_mixture(model: &MixtureModel, r: usize, cfg: &GibbsConfig) -> Result<GibbsOutput> {
    let k = model.k();
    if r > 0 && r < k {
        return Err(Error::Identifiability { r, k });
    }
    if k > u8::MAX as usize {
        return Err(Error::Config("at most 255 components supported".into()));
    }
    let y = model.subset(r)?;
    if !(cfg.thin > 0.0 && cfg.thin <= 1.0) {
        return Err(Error::Config(format!(
            "thin must lie in (0, 1], got {}",
            cfg.thin
        )));
    }
    let mut rng = rng_for(cfg.seed, "gibbs", r as u64);
    if r == 0 {
        let params = (0..cfg.draws)
            .map(|_| model.sample_prior_params(&mut rng))
            .collect();
        return Ok(GibbsOutput {
            params,
            allocations: vec![Vec::new(); cfg.draws],
        });
    }

    let h = model.hyper();
    let mut p = model.sample_prior_params(&mut rng);
    let mut z = vec![0u8; r];
    let post = steps_for_draws(cfg.draws, cfg.thin);
    let mut out = GibbsOutput {
        params: Vec::with_capacity(cfg.draws),
        allocations: Vec::with_capacity(cfg.draws),
    };
    let mut logp = vec![0.0; k];
    let mut n = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut ss = vec![0.0; k];

    for step in 0..cfg.burn_in + post {
        // Allocations.
        let lphi: Vec<f64> = p.phi.iter().map(|x| x.ln()).collect();
        for (zi, &yi) in z.iter_mut().zip(&y) {
            for j in 0..k {
                logp[j] = lphi[j] + normal_log_pdf_precision(yi, p.mu[j], p.tau[j]);
            }
            let norm = logsumexp(&logp);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = k - 1;
            for (j, lp) in logp.iter().enumerate() {
                acc += (lp - norm).exp();
                if u < acc {
                    pick = j;
                    break;
                }
            }
            *zi = pick as u8;
        }
        n.iter_mut().for_each(|v| *v = 0);
        sum.iter_mut().for_each(|v| *v = 0.0);
        for (&zi, &yi) in z.iter().zip(&y) {
            n[zi as usize] += 1;
            sum[zi as usize] += yi;
        }

        // Weights: Dirichlet(1 + n_j) via normalized gammas.
        let g: Vec<f64> = n
            .iter()
            .map(|&nj| gamma_draw(&mut rng, 1.0 + nj as f64, 1.0))
            .collect();
        let total: f64 = g.iter().sum();
        p.phi = g.iter().map(|x| x / total).collect();

        // Means.
        for j in 0..k {
            let prec = p.tau[j] * n[j] as f64 + h.xi;
            let centre = (p.tau[j] * sum[j] + h.xi * h.kappa) / prec;
            p.mu[j] = Normal::new(centre, 1.0 / prec.sqrt())
                .expect("positive precision")
                .sample(&mut rng);
        }

        // Precisions.
        ss.iter_mut().for_each(|v| *v = 0.0);
        for (&zi, &yi) in z.iter().zip(&y) {
            let d = yi - p.mu[zi as usize];
            ss[zi as usize] += d * d;
        }
        for j in 0..k {
            p.tau[j] = gamma_draw(&mut rng, h.alpha + 0.5 * n[j] as f64, p.beta + 0.5 * ss[j]);
        }

        // Precision-rate hyperparameter.
        if let BetaPrior::Gamma { shape, rate } = h.beta {
            p.beta = gamma_draw(
                &mut rng,
                shape + k as f64 * h.alpha,
                rate + p.tau.iter().sum::<f64>(),
            );
        }

        if step >= cfg.burn_in && keep_step(step - cfg.burn_in, cfg.thin) {
            out.params.push(p.clone());
            out.allocations.push(z.clone());
        }
    }
    out.params.truncate(cfg.draws);
    out.allocations.truncate(cfg.draws);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixtureHyper;
    use crate::numeric::{gamma_log_pdf, ln_gamma, mean, sample_sd, LogAccumulator};

    fn cfg(draws: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            draws,
            burn_in: 200,
            thin: 1.0,
            seed,
        }
    }

    fn batch_se(xs: &[f64]) -> f64 {
        let batches: Vec<f64> = xs.chunks(xs.len() / 50).map(mean).collect();
        sample_sd(&batches) / (batches.len() as f64).sqrt()
    }

    #[test]
    fn r_zero_samples_the_prior() {
        let model = MixtureModel::new(vec![1.0, 2.0, 3.0], 2, MixtureHyper::chib(), 1).unwrap();
        let out = gibbs_mixture(&model, 0, &cfg(10_000, 4)).unwrap();
        let mu: Vec<f64> = out.params.iter().map(|p| p.mu[0]).collect();
        let sd = (1.0f64 / 0.01).sqrt();
        let se = sd / (mu.len() as f64).sqrt();
        assert!((mean(&mu) - 20.0).abs() < 3.0 * se, "{}", mean(&mu));
        assert!((sample_sd(&mu) - sd).abs() < 0.03 * sd);
    }

    #[test]
    fn too_few_observations_is_unidentifiable() {
        let model = MixtureModel::new(vec![1.0, 2.0, 3.0], 3, MixtureHyper::chib(), 1).unwrap();
        assert!(matches!(
            gibbs_mixture(&model, 2, &cfg(10, 1)),
            Err(Error::Identifiability { r: 2, k: 3 })
        ));
    }

    /// `log ∫∫ N(mu | kappa, 1/xi) Gamma(tau | alpha, beta) prod N(y | mu, 1/tau)`
    /// on a dense grid, together with the posterior mean of `mu`.
    fn component_grid(y: &[f64], h: &MixtureHyper, beta: f64) -> (f64, f64) {
        let (nm, nt) = (3201, 801);
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
        let post_mean = (zmu.value() - z.value()).exp() - shift;
        (lz, post_mean)
    }

    /// Posterior mean of the label-invariant `mu_1 + mu_2`, summing exactly over
    /// all allocations with each component's `(mu, tau)` integrated on a grid.
    fn brute_force_sum_of_means(y: &[f64], h: &MixtureHyper, beta: f64) -> f64 {
        let n = y.len();
        let mut weights = Vec::new();
        let mut values = Vec::new();
        for mask in 0u32..(1 << n) {
            let groups: [Vec<f64>; 2] = [
                (0..n)
                    .filter(|i| mask & (1 << i) == 0)
                    .map(|i| y[i])
                    .collect(),
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| y[i])
                    .collect(),
            ];
            // Dirichlet(1, 1)-multinomial allocation probability.
            let (n1, n2) = (groups[0].len() as f64, groups[1].len() as f64);
            let mut lw =
                ln_gamma(2.0) + ln_gamma(1.0 + n1) + ln_gamma(1.0 + n2) - ln_gamma(2.0 + n as f64);
            let mut v = 0.0;
            for g in &groups {
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

    #[test]
    fn five_point_posterior_matches_grid_oracle() {
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
        let out = gibbs_mixture(&model, 5, &cfg(100_000, 21)).unwrap();
        let sums: Vec<f64> = out.params.iter().map(|p| p.mu[0] + p.mu[1]).collect();
        let oracle = brute_force_sum_of_means(&y, &hyper, 1.0);
        let se = batch_se(&sums);
        assert!(
            (mean(&sums) - oracle).abs() < 3.0 * se,
            "{} {oracle} {se}",
            mean(&sums)
        );
    }

    #[test]
    fn single_component_concentrates_on_grid_posterior() {
        let y: Vec<f64> = (0..60)
            .map(|i| 3.0 + ((i * 37) % 11) as f64 / 5.0 - 1.0)
            .collect();
        let hyper = MixtureHyper {
            kappa: 0.0,
            xi: 0.25,
            alpha: 2.0,
            beta: BetaPrior::Fixed { value: 1.0 },
            lambda: 5.0,
            k_min: 1,
            k_max: 1,
        };
        let model = MixtureModel::new(y.clone(), 1, hyper.clone(), 0).unwrap();
        let out = gibbs_mixture(&model, 60, &cfg(40_000, 2)).unwrap();
        let mu: Vec<f64> = out.params.iter().map(|p| p.mu[0]).collect();
        let (_, oracle) = component_grid(&y, &hyper, 1.0);
        let se = batch_se(&mu);
        assert!(
            (mean(&mu) - oracle).abs() < 3.0 * se,
            "{} {oracle} {se}",
            mean(&mu)
        );
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model =
            MixtureModel::new(vec![1.0, 5.0, 2.0, 6.0], 2, MixtureHyper::chib(), 1).unwrap();
        let a = gibbs_mixture(&model, 4, &cfg(50, 9)).unwrap();
        let b = gibbs_mixture(&model, 4, &cfg(50, 9)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.allocations, b.allocations);
        assert_eq!(a.params.len(), 50);
    }
}
