//! Certificates for trained profiles.
//!
//! Exploitability retrains one player's policy against frozen opponents on
//! that player's own objective; the gain is a lower bound on how far the
//! profile is from a Nash equilibrium. The potential checks sample random
//! unilateral deviations and compare objective and potential differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::game_model::{alpha_bound, GameSpec, Integrands};
use crate::policy::{init_params, Architecture, PolicyParams};
use crate::rollout::{
    effective_samples, estimate_objective, simulate_with_noise, DiscreteObjective, NoiseBlock,
    TimeGrid,
};
use crate::trainer::{mix, optimize, TrainConfig};
use crate::{Error, Result};

/// Outcome of one player's best-response retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerExploitability {
    pub player: usize,
    /// `J_i` of the incumbent profile on the held-out noise.
    pub incumbent_j: f64,
    /// Best `J_i` found by the deviator on the same noise.
    pub best_response_j: f64,
    /// `max(0, incumbent − best response)`.
    pub improvement: f64,
    /// `improvement / |incumbent|`.
    pub relative_improvement: f64,
    /// Which start produced the best response: `warm` (incumbent
    /// parameters) or `fresh` (new initialization).
    pub best_start: String,
}

/// Best-response budget recorded alongside a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponseMeta {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NECertificate {
    pub players: Vec<PlayerExploitability>,
    pub max_improvement: f64,
    pub max_relative_improvement: f64,
    pub alpha_bound: f64,
    /// Allowed improvement as a fraction of `|J_i|`.
    pub tolerance_fraction: f64,
    pub passed: bool,
    pub best_response: BestResponseMeta,
}

/// Best-response configuration: same architecture, 1000 Adam iterations,
/// fresh seed.
pub fn default_best_response(train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        iterations: 1000,
        seed: mix(train.seed ^ 0xb357_0e5b),
        checkpoint_every: None,
        ..train.clone()
    }
}

fn held_out(spec: &GameSpec, grid: &TimeGrid, cfg: &TrainConfig) -> NoiseBlock {
    let samples = if spec.dynamics.is_deterministic() {
        1
    } else {
        10 * effective_samples(spec, cfg.samples)
    };
    NoiseBlock::sample(spec, grid, samples, mix(cfg.seed ^ 0x4e1d_0ff5))
}

/// Improvement player `i` obtains by retraining against `params` frozen for
/// everyone else. Two starts are tried: the incumbent's parameters and a
/// fresh initialization; the better one is reported.
pub fn exploitability(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    player: usize,
    br_cfg: &TrainConfig,
) -> Result<PlayerExploitability> {
    br_cfg.validate()?;
    let grid = TimeGrid::uniform(spec.horizon, br_cfg.steps)?;
    let objective =
        DiscreteObjective::new(spec, arch, grid.clone(), Integrands::player(spec, player));
    let range = params.range(player);

    // One fresh draw shared by all players.
    let mut fresh = params.clone();
    fresh
        .player_mut(player)
        .copy_from_slice(init_params(spec, arch, br_cfg.seed).player(0));

    let noise = held_out(spec, &grid, br_cfg);
    let incumbent_j = objective.value(params.flat(), &noise)?;
    let mut best = (incumbent_j, "incumbent");
    for (start, label) in [(params.clone(), "warm"), (fresh, "fresh")] {
        let out = optimize(&objective, start, br_cfg, range.clone(), |_, _, _| Ok(()))?;
        let j = objective.value(out.params.flat(), &noise)?;
        if !j.is_finite() {
            return Err(Error::Diverged {
                iteration: out.history.len(),
                last_finite: out.params.flat().to_vec(),
            });
        }
        if j < best.0 {
            best = (j, label);
        }
    }
    let improvement = (incumbent_j - best.0).max(0.0);
    Ok(PlayerExploitability {
        player,
        incumbent_j,
        best_response_j: best.0,
        improvement,
        relative_improvement: improvement / incumbent_j.abs().max(f64::MIN_POSITIVE),
        best_start: best.1.to_string(),
    })
}

/// Exploitability of every player, with pass/fail at
/// `improvement_i ≤ tolerance_fraction · |J_i|`.
pub fn certify(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    br_cfg: &TrainConfig,
    tolerance_fraction: f64,
) -> Result<NECertificate> {
    let players: Vec<PlayerExploitability> = (0..spec.n_players)
        .into_par_iter()
        .map(|i| exploitability(spec, arch, params, i, br_cfg))
        .collect::<Result<_>>()?;
    let max_improvement = players.iter().map(|p| p.improvement).fold(0.0, f64::max);
    let max_relative_improvement = players
        .iter()
        .map(|p| p.relative_improvement)
        .fold(0.0, f64::max);
    let passed = players
        .iter()
        .all(|p| p.improvement <= tolerance_fraction * p.incumbent_j.abs());
    let grid = TimeGrid::uniform(spec.horizon, br_cfg.steps)?;
    Ok(NECertificate {
        max_improvement,
        max_relative_improvement,
        alpha_bound: alpha_bound(spec),
        tolerance_fraction,
        passed,
        best_response: BestResponseMeta {
            iterations: br_cfg.iterations,
            learning_rate: br_cfg.learning_rate,
            seed: br_cfg.seed,
            eval_samples: held_out(spec, &grid, br_cfg).samples,
        },
        players,
    })
}

/// Settings shared by the deviation-sampling checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationConfig {
    pub trials: usize,
    pub seed: u64,
    pub steps: usize,
    /// Standard deviation of the Gaussian parameter perturbation.
    pub scale: f64,
    /// Sample count for stochastic games (common random numbers).
    pub samples: usize,
}

impl Default for DeviationConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            steps: 50,
            scale: 0.5,
            samples: 256,
        }
    }
}

/// One sampled unilateral deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub player: usize,
    pub delta_j: f64,
    pub delta_phi: f64,
}

/// `player` and perturbed parameters for each trial.
fn sample_deviations(params: &PolicyParams, cfg: &DeviationConfig) -> Vec<(usize, PolicyParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.trials)
        .map(|_| {
            let i = rng.random_range(0..params.n_players());
            let mut p = params.clone();
            for w in p.player_mut(i) {
                let z: f64 = rng.sample(StandardNormal);
                *w += cfg.scale * z;
            }
            (i, p)
        })
        .collect()
}

/// Objective and potential differences for each sampled deviation, using
/// the same noise for incumbent and deviator.
fn deviation_deltas(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    cfg: &DeviationConfig,
    potential: &Integrands,
) -> Result<Vec<Deviation>> {
    let grid = TimeGrid::uniform(spec.horizon, cfg.steps)?;
    let samples = effective_samples(spec, cfg.samples);
    let noise = NoiseBlock::sample(spec, &grid, samples, mix(cfg.seed ^ 0xc0ff_ee00));
    let base = simulate_with_noise(spec, arch, params, &grid, &noise)?;
    let base_phi = estimate_objective(spec, &base, potential);
    let base_j: Vec<f64> = (0..spec.n_players)
        .map(|i| estimate_objective(spec, &base, &Integrands::player(spec, i)))
        .collect();
    sample_deviations(params, cfg)
        .into_par_iter()
        .map(|(i, p)| {
            let b = simulate_with_noise(spec, arch, &p, &grid, &noise)?;
            Ok(Deviation {
                player: i,
                delta_j: estimate_objective(spec, &b, &Integrands::player(spec, i)) - base_j[i],
                delta_phi: estimate_objective(spec, &b, potential) - base_phi,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheck {
    pub trials: usize,
    /// `max |ΔJ_i − ΔΦ|` over the sampled deviations.
    pub max_deviation: f64,
    pub alpha_bound: f64,
    pub passed: bool,
    pub deviations: Vec<Deviation>,
}

/// Samples unilateral deviations and compares `ΔJ_i` with `ΔΦ_M` against
/// the alpha bound.
pub fn check_potential_inequality(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    cfg: &DeviationConfig,
) -> Result<PotentialCheck> {
    let deviations = deviation_deltas(spec, arch, params, cfg, &Integrands::potential(spec))?;
    let max_deviation = deviations
        .iter()
        .map(|d| (d.delta_j - d.delta_phi).abs())
        .fold(0.0, f64::max);
    let bound = alpha_bound(spec);
    Ok(PotentialCheck {
        trials: deviations.len(),
        max_deviation,
        alpha_bound: bound,
        passed: max_deviation <= bound.max(POTENTIAL_IDENTITY_TOL),
        deviations,
    })
}

/// Absolute tolerance for the exact (`α = 0`) potential identity.
pub const POTENTIAL_IDENTITY_TOL: f64 = 1e-8;

/// Relative tolerance for the rescaled identity `ΔΦ̃ = (τ_i/γ_i) ΔJ_i`.
pub const RESCALED_IDENTITY_TOL: f64 = 1e-8;

/// Deviations with `|ΔJ_i|` at or below this are excluded from the sign test.
pub const SIGN_TEST_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledCheck {
    pub trials: usize,
    /// `max |ΔΦ̃ − (τ_i/γ_i) ΔJ_i| / max(|ΔΦ̃|, |(τ_i/γ_i) ΔJ_i|)`.
    pub max_relative_error: f64,
    /// Deviations with `|ΔJ_i| > 1e-10`.
    pub sign_trials: usize,
    pub sign_agreements: usize,
    pub passed: bool,
    pub deviations: Vec<Deviation>,
}

/// Verifies that the rescaled potential tracks each player's scaled
/// objective exactly under unilateral deviations. Requires deterministic
/// dynamics and separable weights.
pub fn check_rescaled_identity(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    cfg: &DeviationConfig,
) -> Result<RescaledCheck> {
    if !spec.dynamics.is_deterministic() {
        return Err(Error::InvalidConfig(
            "rescaled identity check needs deterministic dynamics".into(),
        ));
    }
    let rescaled = Integrands::rescaled(spec)?;
    let (gamma, tau) = spec.weights.tags().ok_or(Error::NotSeparable)?;
    let deviations = deviation_deltas(spec, arch, params, cfg, &rescaled)?;
    let mut max_rel = 0.0f64;
    let (mut sign_trials, mut sign_agreements) = (0, 0);
    for d in &deviations {
        let scaled = tau[d.player] / gamma[d.player] * d.delta_j;
        let denom = d.delta_phi.abs().max(scaled.abs());
        if denom > 0.0 {
            max_rel = max_rel.max((d.delta_phi - scaled).abs() / denom);
        }
        if d.delta_j.abs() > SIGN_TEST_FLOOR {
            sign_trials += 1;
            if d.delta_phi.signum() == d.delta_j.signum() {
                sign_agreements += 1;
            }
        }
    }
    Ok(RescaledCheck {
        trials: deviations.len(),
        max_relative_error: max_rel,
        sign_trials,
        sign_agreements,
        passed: max_rel <= RESCALED_IDENTITY_TOL && sign_agreements == sign_trials,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{DynamicsKind, InteractionWeights, Kernel, PlayerCost};
    use crate::trainer::train;

    fn game(n: usize, weights: InteractionWeights) -> GameSpec {
        GameSpec {
            n_players: n,
            horizon: 1.0,
            dynamics: DynamicsKind::Velocity { dim: 1 },
            weights,
            kernel: Kernel::scaled_radial(1.0, n, 1),
            costs: vec![
                PlayerCost {
                    action_coeff: 0.1,
                    terminal_coeff: 10.0,
                    target: vec![1.0],
                    obstacle: None,
                };
                n
            ],
            initial_states: vec![vec![-1.0]; n],
        }
    }

    fn small_cfg() -> DeviationConfig {
        DeviationConfig {
            trials: 30,
            steps: 20,
            ..DeviationConfig::default()
        }
    }

    #[test]
    fn symmetric_identity_is_exact() {
        let spec = game(3, InteractionWeights::uniform(3, 0.7).unwrap());
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 1);
        let r = check_potential_inequality(&spec, &arch, &p, &small_cfg()).unwrap();
        assert_eq!(r.alpha_bound, 0.0);
        assert!(r.max_deviation <= 1e-8, "{}", r.max_deviation);
        assert!(r.passed);
    }

    #[test]
    fn asymmetric_deviation_within_bound() {
        let w = InteractionWeights::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let spec = game(2, w);
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 2);
        let r = check_potential_inequality(&spec, &arch, &p, &small_cfg()).unwrap();
        assert_eq!(r.alpha_bound, 1.0);
        assert!(r.max_deviation <= 1.0);
        assert!(r.max_deviation > 0.0);
    }

    #[test]
    fn single_player_objective_equals_potential() {
        let spec = game(1, InteractionWeights::uniform(1, 0.0).unwrap());
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 3);
        let r = check_potential_inequality(&spec, &arch, &p, &small_cfg()).unwrap();
        for d in &r.deviations {
            assert_eq!(d.delta_j, d.delta_phi);
        }
    }

    #[test]
    fn unit_tags_reduce_to_exact_potential() {
        let spec = game(
            3,
            InteractionWeights::separable(vec![1.0; 3], vec![1.0; 3]).unwrap(),
        );
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 4);
        let r = check_rescaled_identity(&spec, &arch, &p, &small_cfg()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn rescaled_check_rejects_noise_and_missing_tags() {
        let arch = Architecture::default();
        let spec = game(2, InteractionWeights::uniform(2, 1.0).unwrap());
        let p = init_params(&spec, &arch, 4);
        assert!(matches!(
            check_rescaled_identity(&spec, &arch, &p, &small_cfg()),
            Err(Error::NotSeparable)
        ));
        let mut noisy = game(
            2,
            InteractionWeights::separable(vec![1.0; 2], vec![1.0; 2]).unwrap(),
        );
        noisy.dynamics = DynamicsKind::Acceleration {
            dim: 1,
            sigma: vec![0.1; 2],
        };
        noisy.initial_states = vec![vec![-1.0, 0.0]; 2];
        let p = init_params(&noisy, &arch, 4);
        assert!(check_rescaled_identity(&noisy, &arch, &p, &small_cfg()).is_err());
    }

    #[test]
    fn zero_cost_game_is_unexploitable() {
        let mut spec = game(2, InteractionWeights::uniform(2, 0.0).unwrap());
        for c in &mut spec.costs {
            c.action_coeff = 0.0;
            c.terminal_coeff = 0.0;
        }
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 4);
        let cfg = TrainConfig {
            iterations: 20,
            steps: 10,
            ..TrainConfig::default()
        };
        let c = certify(&spec, &arch, &p, &cfg, 0.05).unwrap();
        assert!(c.players.iter().all(|p| p.improvement == 0.0));
        assert!(c.passed);
    }

    #[test]
    fn trained_single_player_has_small_exploitability() {
        let spec = game(1, InteractionWeights::uniform(1, 0.0).unwrap());
        let arch = Architecture::default();
        let cfg = TrainConfig {
            iterations: 800,
            steps: 20,
            ..TrainConfig::default()
        };
        let r = train(&spec, &arch, &cfg).unwrap();
        let br = TrainConfig {
            iterations: 300,
            ..default_best_response(&cfg)
        };
        let e = exploitability(&spec, &arch, &r.final_params, 0, &br).unwrap();
        assert!(e.improvement >= 0.0);
        assert!(e.relative_improvement < 0.05, "{e:?}");
    }
}
