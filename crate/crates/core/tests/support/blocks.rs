//! Frozen-block checks: each Gibbs block is applied repeatedly to one fixed
//! toy state and its draws are compared with the full conditional computed
//! from the log joint by quadrature (or by brute-force normalisation for
//! labels).

use recurstrata::gibbs::{ChainState, GibbsSampler, ModelVariant};
use recurstrata::kernel::RngStream;

use super::*;

pub const DRAWS: usize = 100_000;
pub const KS_LIMIT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: &'static str,
    pub ks: f64,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.ks < KS_LIMIT
    }
}

const K: usize = 3;
const L: usize = 2;

fn setup() -> (ModelData, Hyperparameters, ChainState) {
    toy(ModelVariant::Eddpm, K, L)
}

fn scalar_check(
    name: &'static str,
    seed: u64,
    support: (f64, f64),
    step: impl Fn(&mut GibbsSampler, &mut ChainState, &mut RngStream),
    get: impl Fn(&ChainState) -> f64,
    set: impl Fn(&mut ChainState, f64),
) -> BlockCheck {
    let (data, hp, state) = setup();
    let mut sampler = GibbsSampler::new(&data, &hp, ModelVariant::Eddpm).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let draws = frozen_draws(&state, DRAWS, |s| step(&mut sampler, s, &mut rng), &get);
    BlockCheck {
        name,
        ks: conditional_ks(&data, &hp, &state, &draws, support, set),
    }
}

pub fn impute_terminal() -> BlockCheck {
    let (data, _, _) = setup();
    // Subject 1 is the censored one.
    let bound = data.log_followup[1];
    scalar_check(
        "impute_terminal",
        101,
        (bound, f64::INFINITY),
        |sm, s, r| sm.impute_terminal(s, r).unwrap(),
        |s| s.imputed_u[1],
        |s, x| s.imputed_u[1] = x,
    )
}

pub fn impute_open_gap() -> BlockCheck {
    let (data, _, _) = setup();
    let bound = data.y[data.open_gap(0)];
    scalar_check(
        "impute_open_gap",
        102,
        (bound, f64::INFINITY),
        |sm, s, r| sm.impute_open_gap(s, r).unwrap(),
        |s| s.imputed_open_gap[0],
        |s, x| s.imputed_open_gap[0] = x,
    )
}

/// Discrete KS distance between the empirical law of `G_0` after one label
/// update and the brute-force conditional.
pub fn labels() -> BlockCheck {
    let (data, hp, state) = setup();
    let mut sampler = GibbsSampler::new(&data, &hp, ModelVariant::Eddpm).unwrap();
    let mut rng = RngStream::new(103, 0);
    let probs = brute_force_label_probs(&data, &hp, &state, 0);
    let mut counts = [0usize; K];
    let draws = frozen_draws(&state, DRAWS, |s| sampler.update_labels(s, &mut rng).unwrap(), |s| s.g[0] as f64);
    draws.iter().for_each(|&g| counts[g as usize] += 1);
    let mut ks = 0.0f64;
    let (mut emp, mut exact) = (0.0, 0.0);
    for k in 0..K {
        emp += counts[k] as f64 / DRAWS as f64;
        exact += probs[k];
        ks = ks.max((emp - exact).abs());
    }
    BlockCheck {
        name: "update_labels",
        ks,
    }
}

pub fn top_stick() -> BlockCheck {
    scalar_check(
        "update_weights (top)",
        104,
        (0.0, 1.0),
        |sm, s, r| sm.update_weights(s, r).unwrap(),
        |s| s.v_phi[0],
        |s, x| s.v_phi[0] = x,
    )
}

pub fn nested_stick() -> BlockCheck {
    scalar_check(
        "update_weights (nested)",
        105,
        (0.0, 1.0),
        |sm, s, r| sm.update_weights(s, r).unwrap(),
        |s| s.v_theta[0],
        |s, x| s.v_theta[0] = x,
    )
}

pub fn concentration() -> BlockCheck {
    scalar_check(
        "update_concentrations",
        106,
        (0.0, f64::INFINITY),
        |sm, s, r| sm.update_concentrations(s, r).unwrap(),
        |s| s.alpha_phi,
        |s, x| s.alpha_phi = x,
    )
}

pub fn tau2() -> BlockCheck {
    scalar_check(
        "update_tau2",
        107,
        (0.0, f64::INFINITY),
        |sm, s, r| sm.update_tau2(s, r).unwrap(),
        |s| s.tau2[0],
        |s, x| s.tau2[0] = x,
    )
}

fn pair_check(
    name: &'static str,
    seed: u64,
    step: impl Fn(&mut GibbsSampler, &mut ChainState, &mut RngStream),
    get: impl Fn(&ChainState) -> (f64, f64),
    set: impl Fn(&mut ChainState, f64, f64) + Copy,
) -> BlockCheck {
    let (data, hp, state) = setup();
    let mut sampler = GibbsSampler::new(&data, &hp, ModelVariant::Eddpm).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let pairs: Vec<(f64, f64)> = {
        let mut s = state.clone();
        (0..DRAWS)
            .map(|_| {
                s.clone_from(&state);
                step(&mut sampler, &mut s, &mut rng);
                get(&s)
            })
            .collect()
    };
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ks_a = marginal_ks_2d(&data, &hp, &state, &a, &b, set);
    let ks_b = marginal_ks_2d(&data, &hp, &state, &b, &a, move |s, y, x| set(s, x, y));
    BlockCheck { name, ks: ks_a.max(ks_b) }
}

pub fn beta_u() -> BlockCheck {
    pair_check(
        "update_beta_u",
        108,
        |sm, s, r| sm.update_beta_u(s, r).unwrap(),
        |s| (s.beta_u[0], s.beta_u[1]),
        |s, a, b| {
            s.beta_u[0] = a;
            s.beta_u[1] = b;
        },
    )
}

pub fn sigma2() -> BlockCheck {
    scalar_check(
        "update_sigma2",
        109,
        (0.0, f64::INFINITY),
        |sm, s, r| sm.update_sigma2(s, r).unwrap(),
        |s| s.sigma2[0],
        |s, x| s.sigma2[0] = x,
    )
}

pub fn beta_y() -> BlockCheck {
    pair_check(
        "update_beta_y",
        110,
        |sm, s, r| sm.update_beta_y(s, r).unwrap(),
        |s| (s.beta_y[0], s.beta_y[1]),
        |s, a, b| {
            s.beta_y[0] = a;
            s.beta_y[1] = b;
        },
    )
}

/// `gamma^0` of cluster 0 is drawn first, given the frozen `gamma^1`.
pub fn frailty_conditional() -> BlockCheck {
    scalar_check(
        "update_frailties (gamma^0 | gamma^1)",
        111,
        (f64::NEG_INFINITY, f64::INFINITY),
        |sm, s, r| sm.update_frailties(s, r).unwrap(),
        |s| s.gamma[0][0],
        |s, x| s.gamma[0][0] = x,
    )
}

/// Repeated frailty sweeps with everything else frozen form a two-block
/// Gibbs chain on `(gamma^0, gamma^1)`; its thinned marginals must match the
/// two-dimensional grid posterior.
pub fn frailty_joint() -> BlockCheck {
    let (data, hp, state) = setup();
    let sampler = GibbsSampler::new(&data, &hp, ModelVariant::Eddpm).unwrap();
    let mut rng = RngStream::new(112, 0);
    let mut s = state.clone();
    let thin = 10;
    let mut g0 = Vec::with_capacity(DRAWS);
    let mut g1 = Vec::with_capacity(DRAWS);
    for it in 0..(DRAWS + 100) * thin {
        sampler.update_frailties(&mut s, &mut rng).unwrap();
        if it >= 100 * thin && it % thin == 0 {
            g0.push(s.gamma[0][0]);
            g1.push(s.gamma[0][1]);
        }
    }
    let set = |s: &mut ChainState, a: f64, b: f64| s.gamma[0] = [a, b];
    let ks0 = marginal_ks_2d(&data, &hp, &state, &g0, &g1, set);
    let ks1 = marginal_ks_2d(&data, &hp, &state, &g1, &g0, |s, b, a| s.gamma[0] = [a, b]);
    BlockCheck {
        name: "update_frailties (joint Gibbs marginals)",
        ks: ks0.max(ks1),
    }
}

pub fn modulation() -> BlockCheck {
    scalar_check(
        "update_modulation",
        113,
        (f64::NEG_INFINITY, f64::INFINITY),
        |sm, s, r| sm.update_modulation(s, r).unwrap(),
        |s| s.psi[0],
        |s, x| s.psi[0] = x,
    )
}

/// Cluster 2 holds no subjects, so its survival atoms must follow the base
/// measure.
pub fn empty_cluster_tau2() -> BlockCheck {
    scalar_check(
        "empty-cluster tau2",
        114,
        (0.0, f64::INFINITY),
        |sm, s, r| sm.update_tau2(s, r).unwrap(),
        |s| s.tau2[2],
        |s, x| s.tau2[2] = x,
    )
}

pub fn all() -> Vec<BlockCheck> {
    vec![
        impute_terminal(),
        impute_open_gap(),
        labels(),
        top_stick(),
        nested_stick(),
        concentration(),
        tau2(),
        beta_u(),
        sigma2(),
        beta_y(),
        frailty_conditional(),
        frailty_joint(),
        modulation(),
        empty_cluster_tau2(),
    ]
}
