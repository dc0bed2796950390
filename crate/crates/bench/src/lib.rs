//! Shared fixtures for the benchmarks.

use recnorm::bridge::{eval_weight_matrix, BridgeSpec};
use recnorm::model::{GalaxyVariant, MixtureHyper, MixtureModel};
use recnorm::sampler::{gibbs_mixture, mc3_sample, ChainConfig, DrawPool, GibbsConfig};
use recnorm::{derive_seed, BananaModel, LogWeightMatrix};

/// Power-posterior banana pool, `m = 5`, `c = 5`.
pub fn banana_pool(n_tot: usize, seed: u64) -> LogWeightMatrix {
    let spec = BridgeSpec::power_posterior(5, 5.0).unwrap();
    let cfg = ChainConfig {
        steps: 0,
        burn_in: 1000,
        thin: 0.25,
        proposal_scale: vec![0.2, 0.2],
        swap_interval: 10,
        seed,
        adapt: true,
    };
    let pool = mc3_sample(&BananaModel, &spec, n_tot / 5, &cfg).unwrap();
    eval_weight_matrix(&pool, &spec, &BananaModel).unwrap()
}

/// Partial-data pool on the Chib data, `k = 3`, ten rungs.
pub fn chib_pool(per_rung: usize, seed: u64) -> LogWeightMatrix {
    let model = MixtureModel::new(
        GalaxyVariant::Chib78.builtin(),
        3,
        MixtureHyper::chib(),
        seed,
    )
    .unwrap();
    let spec = BridgeSpec::partial_data(82, 10, 2.0, 3).unwrap();
    let mut draws = Vec::new();
    let mut labels = Vec::new();
    for (j, &r) in spec.r.iter().enumerate() {
        let cfg = GibbsConfig {
            draws: per_rung,
            burn_in: 100,
            thin: 0.9,
            seed: derive_seed(seed, "rung", j as u64),
        };
        let out = gibbs_mixture(&model, r, &cfg).unwrap();
        labels.extend(std::iter::repeat_n(j, out.params.len()));
        draws.extend(out.params.iter().map(|p| p.to_vec()));
    }
    let pool = DrawPool::new(draws, labels, spec.m).unwrap();
    eval_weight_matrix(&pool, &spec, &model).unwrap()
}
