//! Adam minimization of the discretized potential over all players'
//! parameters jointly.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::game_model::{GameSpec, Integrands};
use crate::policy::{init_params, Architecture, PolicyParams};
use crate::rollout::{
    effective_samples, estimate_potential, simulate, DiscreteObjective, NoiseBlock,
    PotentialEstimate, TimeGrid,
};
use crate::verification::NECertificate;
use crate::{Error, Result};

/// Which potential the trainer minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Symmetrized potential; any minimizer is an α-NE.
    #[default]
    Potential,
    /// Rescaled potential for separable weights; minimizers are exact NE.
    Rescaled,
}

impl Objective {
    pub fn integrands(&self, spec: &GameSpec) -> Result<Integrands> {
        match self {
            Objective::Potential => Ok(Integrands::potential(spec)),
            Objective::Rescaled => Integrands::rescaled(spec),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Monte Carlo sample count `M` (forced to 1 for deterministic games).
    pub samples: usize,
    /// Time steps `P`.
    pub steps: usize,
    pub seed: u64,
    /// Draw fresh noise every iteration instead of reusing one block.
    pub resample_noise: bool,
    pub checkpoint_every: Option<usize>,
    /// Stop once the gradient norm falls to this value.
    pub grad_tol: f64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            samples: 64,
            steps: 50,
            seed: 0,
            resample_noise: true,
            checkpoint_every: None,
            grad_tol: 0.0,
            objective: Objective::Potential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("gradient tolerance must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)");
        }
        if self.samples == 0 || self.steps == 0 {
            return bad("samples and steps must be positive");
        }
        Ok(())
    }

    /// Seed of the noise block used at `iteration`.
    pub fn noise_seed(&self, iteration: usize) -> u64 {
        if self.resample_noise {
            mix(self.seed ^ mix(iteration as u64 + 1))
        } else {
            self.seed
        }
    }

    /// Seed of the fixed evaluation noise.
    pub fn eval_seed(&self) -> u64 {
        mix(self.seed ^ 0x5eed_e7a1)
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, len: usize) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected update restricted to `range`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], range: Range<usize>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in range {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationCap,
    GradientTolerance,
}

/// Parameters plus optimizer state, written at the configured cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: GameSpec,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub iteration: usize,
    pub params: PolicyParams,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.version != Self::VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        c.spec.validate()?;
        let want =
            c.spec.n_players * crate::policy::PolicyNet::new(&c.spec, &c.architecture).param_len();
        if c.params.len() != want || c.params.n_players() != c.spec.n_players {
            return Err(Error::Format(
                "checkpoint parameters do not match the game".into(),
            ));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// `Φ_M` at each completed iteration (before its update).
    pub phi_history: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub iterations_completed: usize,
    pub stop_reason: StopReason,
    pub final_grad_norm: f64,
    /// Potential of the initial parameters on the evaluation noise.
    pub initial_phi: f64,
    pub final_params: PolicyParams,
    /// Evaluated on the fixed evaluation noise.
    pub final_estimate: PotentialEstimate,
    /// Value of the trained objective on the evaluation noise.
    pub final_objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<NECertificate>,
    /// Wall-clock seconds per iteration; kept out of serialized artifacts.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
}

/// Result of a masked Adam run on a discretized objective.
pub(crate) struct Optimized {
    pub params: PolicyParams,
    pub history: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub wall_clock: Vec<f64>,
    pub stop: StopReason,
    pub optimizer: Adam,
}

/// Adam on `objective` over the coordinates in `trainable`.
pub(crate) fn optimize(
    objective: &DiscreteObjective,
    init: PolicyParams,
    cfg: &TrainConfig,
    trainable: Range<usize>,
    mut on_checkpoint: impl FnMut(usize, &PolicyParams, &Adam) -> Result<()>,
) -> Result<Optimized> {
    let spec = objective.spec;
    let samples = effective_samples(spec, cfg.samples);
    let frozen = spec.dynamics.is_deterministic() || !cfg.resample_noise;
    let fixed_noise = frozen.then(|| NoiseBlock::sample(spec, &objective.grid, samples, cfg.seed));

    let mut params = init;
    let mut adam = Adam::new(cfg, params.len());
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut grad_norms = Vec::with_capacity(cfg.iterations);
    let mut wall_clock = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, PolicyParams)> = None;
    let mut stop = StopReason::IterationCap;

    for it in 0..cfg.iterations {
        let start = Instant::now();
        let fresh;
        let noise = match &fixed_noise {
            Some(n) => n,
            None => {
                fresh = NoiseBlock::sample(spec, &objective.grid, samples, cfg.noise_seed(it));
                &fresh
            }
        };
        let diverged = |params: &PolicyParams| Error::Diverged {
            iteration: it,
            last_finite: params.flat().to_vec(),
        };
        let (value, grad) = match objective.value_and_grad(params.flat(), noise) {
            Ok(vg) => vg,
            Err(Error::NonFiniteState { .. }) => return Err(diverged(&params)),
            Err(e) => return Err(e),
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(&params));
        }
        let gnorm = grad[trainable.clone()]
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        history.push(value);
        grad_norms.push(gnorm);
        if frozen && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, params.clone()));
        }
        if gnorm <= cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            wall_clock.push(start.elapsed().as_secs_f64());
            break;
        }
        adam.step(params.flat_mut(), &grad, trainable.clone());
        wall_clock.push(start.elapsed().as_secs_f64());
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && (it + 1) % every == 0 {
                on_checkpoint(it + 1, &params, &adam)?;
            }
        }
    }

    // With frozen noise the objective is a fixed function; the final update
    // is not evaluated, so fall back to the best evaluated iterate.
    if let Some((best_value, best_params)) = best {
        if stop == StopReason::IterationCap {
            let last = objective.value(params.flat(), fixed_noise.as_ref().unwrap())?;
            if !(last <= best_value) {
                params = best_params;
            }
        }
    }

    Ok(Optimized {
        params,
        history,
        grad_norms,
        wall_clock,
        stop,
        optimizer: adam,
    })
}

/// Evaluation noise shared by reports and certificates.
pub(crate) fn eval_samples(spec: &GameSpec, cfg: &TrainConfig) -> usize {
    effective_samples(spec, cfg.samples)
}

/// Minimizes the configured potential from a seeded initialization.
pub fn train(spec: &GameSpec, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainReport> {
    train_in(spec, arch, cfg, None)
}

/// [`train`] writing checkpoints into `checkpoint_dir` at the configured
/// cadence, and the last finite parameters on divergence.
pub fn train_in(
    spec: &GameSpec,
    arch: &Architecture,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    spec.validate()?;
    cfg.validate()?;
    let grid = TimeGrid::uniform(spec.horizon, cfg.steps)?;
    let integrands = cfg.objective.integrands(spec)?;
    let objective = DiscreteObjective::new(spec, arch, grid.clone(), integrands);
    let init = init_params(spec, arch, cfg.seed);

    let checkpoint = |iteration: usize, params: &PolicyParams, adam: Option<&Adam>| Checkpoint {
        version: Checkpoint::VERSION,
        spec: spec.clone(),
        architecture: arch.clone(),
        config: cfg.clone(),
        iteration,
        params: params.clone(),
        optimizer: adam.cloned(),
    };
    let path_for = |dir: &Path, name: String| -> PathBuf { dir.join(name) };

    let outcome = optimize(
        &objective,
        init.clone(),
        cfg,
        0..init.len(),
        |it, p, adam| {
            if let Some(dir) = checkpoint_dir {
                checkpoint(it, p, Some(adam))
                    .save(&path_for(dir, format!("checkpoint_{it:06}.json")))?;
            }
            Ok(())
        },
    );
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::Diverged {
            iteration,
            last_finite,
        }) => {
            if let Some(dir) = checkpoint_dir {
                let p = init.with_flat(last_finite.clone())?;
                checkpoint(iteration, &p, None)
                    .save(&path_for(dir, "checkpoint_diverged.json".into()))?;
            }
            return Err(Error::Diverged {
                iteration,
                last_finite,
            });
        }
        Err(e) => return Err(e),
    };

    let samples = eval_samples(spec, cfg);
    let eval_seed = cfg.eval_seed();
    let eval_noise = NoiseBlock::sample(spec, &grid, samples, eval_seed);
    let initial_phi = objective.value(init.flat(), &eval_noise)?;
    let final_objective = objective.value(outcome.params.flat(), &eval_noise)?;
    let batch = simulate(spec, arch, &outcome.params, &grid, samples, eval_seed)?;
    let final_estimate = estimate_potential(spec, &batch);

    if let Some(dir) = checkpoint_dir {
        checkpoint(
            outcome.history.len(),
            &outcome.params,
            Some(&outcome.optimizer),
        )
        .save(&dir.join("checkpoint_final.json"))?;
    }

    Ok(TrainReport {
        iterations_completed: outcome.history.len(),
        final_grad_norm: outcome.grad_norms.last().copied().unwrap_or(0.0),
        phi_history: outcome.history,
        grad_norms: outcome.grad_norms,
        stop_reason: outcome.stop,
        initial_phi,
        final_params: outcome.params,
        final_estimate,
        final_objective,
        verification: None,
        wall_clock: outcome.wall_clock,
    })
}

impl TrainReport {
    /// `iteration,phi,grad_norm` rows.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,phi,grad_norm\n");
        for (k, (p, g)) in self.phi_history.iter().zip(&self.grad_norms).enumerate() {
            s.push_str(&format!("{k},{p},{g}\n"));
        }
        s
    }
}
