//! Euler–Maruyama simulation of the joint dynamics and Monte Carlo
//! estimates of the potential and of each player's objective.
//!
//! ```text
//! X_{i,ℓ+1} = X_{i,ℓ} + b_i(X_{i,ℓ}, φ_i(t_ℓ, X_{i,ℓ})) Δ_ℓ + σ_i ΔW_{i,ℓ}
//! Φ_M = (1/M) Σ_m [ Σ_ℓ F(X_ℓ^m, a_ℓ^m) Δ_ℓ + G(X_P^m) ]
//! ```
//!
//! Every player is driven by its own Brownian motion. Noise for player `i`
//! in sample `m` comes from ChaCha stream `(i << 32) | m` of the seed.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff_engine::{self, Tape, Var};
use crate::game_model::{dist_sq, GameSpec, Integrands};
use crate::policy::{Architecture, PolicyNet, PolicyParams};
use crate::{Error, Result};

/// Time grid `0 = t_0 < … < t_P = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "time grid needs steps ≥ 1 and T > 0 (got {steps}, {horizon})"
            )));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..steps).map(|l| l as f64 * dt).collect();
        nodes.push(horizon);
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(
                "grid nodes must start at 0 and increase strictly".into(),
            ));
        }
        Ok(Self { nodes })
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn t(&self, l: usize) -> f64 {
        self.nodes[l]
    }

    #[inline]
    pub fn dt(&self, l: usize) -> f64 {
        self.nodes[l + 1] - self.nodes[l]
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Brownian increments `ΔW`, laid out `[m][i][ℓ][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBlock {
    pub samples: usize,
    pub players: usize,
    pub steps: usize,
    pub dim: usize,
    pub seed: u64,
    data: Vec<f64>,
}

impl NoiseBlock {
    /// Increments `ΔW ~ N(0, Δ_ℓ I)` for players with `σ_i > 0`; zeros
    /// otherwise.
    pub fn sample(spec: &GameSpec, grid: &TimeGrid, samples: usize, seed: u64) -> Self {
        let (n, p, d) = (spec.n_players, grid.steps(), spec.dim());
        let block = p * d;
        let mut data = vec![0.0; samples * n * block];
        data.par_chunks_mut(block)
            .enumerate()
            .for_each(|(idx, chunk)| {
                let (m, i) = (idx / n, idx % n);
                if spec.dynamics.sigma(i) == 0.0 {
                    return;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((i as u64) << 32) | m as u64);
                for l in 0..p {
                    let sd = grid.dt(l).sqrt();
                    for k in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        chunk[l * d + k] = sd * z;
                    }
                }
            });
        Self {
            samples,
            players: n,
            steps: p,
            dim: d,
            seed,
            data,
        }
    }

    pub fn zeros(spec: &GameSpec, grid: &TimeGrid, samples: usize) -> Self {
        Self {
            samples,
            players: spec.n_players,
            steps: grid.steps(),
            dim: spec.dim(),
            seed: 0,
            data: vec![0.0; samples * spec.n_players * grid.steps() * spec.dim()],
        }
    }

    #[inline]
    pub fn get(&self, m: usize, i: usize, l: usize) -> &[f64] {
        let off = ((m * self.players + i) * self.steps + l) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Sample count actually used: deterministic games need a single path.
pub fn effective_samples(spec: &GameSpec, samples: usize) -> usize {
    if spec.dynamics.is_deterministic() {
        1
    } else {
        samples.max(1)
    }
}

/// Values recorded for one sample path.
pub struct SamplePath {
    /// `states[ℓ][i]`, `ℓ = 0..=P`.
    pub states: Vec<Vec<Var>>,
    /// `actions[ℓ][i]`, `ℓ = 0..P`.
    pub actions: Vec<Vec<Var>>,
    /// Discretized objective when integrands were supplied.
    pub objective: Option<Var>,
}

/// Policy forward pass on the tape; `theta_off` locates player `i`'s block.
pub(crate) fn record_policy(tape: &mut Tape, net: &PolicyNet, theta_off: usize, input: Var) -> Var {
    let mut x = input;
    let last = net.layers().len() - 1;
    for (k, l) in net.layers().iter().enumerate() {
        x = tape.affine(x, theta_off + l.weight, theta_off + l.bias, l.outputs);
        if k != last {
            x = tape.tanh(x);
        }
    }
    x
}

/// Records sample `m` of the joint dynamics, optionally accumulating the
/// discretized objective defined by `integrands`.
pub fn record_sample(
    tape: &mut Tape,
    spec: &GameSpec,
    net: &PolicyNet,
    offsets: &[usize],
    grid: &TimeGrid,
    noise: &NoiseBlock,
    m: usize,
    integrands: Option<&Integrands>,
) -> Result<SamplePath> {
    let n = spec.n_players;
    let d = spec.dim();
    let accel = spec.dynamics.is_acceleration();
    let p = grid.steps();
    let q = spec.kernel.quadratic_coeff();

    let mut state: Vec<Var> = spec
        .initial_states
        .iter()
        .map(|s| tape.constant(s))
        .collect();
    let mut states = Vec::with_capacity(p + 1);
    let mut actions = Vec::with_capacity(p);
    let mut terms: Vec<(Var, f64)> = Vec::new();

    let zero_action = tape.constant(&vec![0.0; spec.action_dim()]);
    let centers: Vec<Option<Var>> = spec
        .costs
        .iter()
        .map(|c| c.obstacle.as_ref().map(|o| tape.constant(&o.center)))
        .collect();

    let position = |tape: &mut Tape, s: Var| if accel { tape.slice(s, 0, d) } else { s };

    for l in 0..p {
        let dt = grid.dt(l);
        let time = tape.constant(&[grid.t(l) / net.horizon()]);
        let act: Vec<Var> = (0..n)
            .map(|i| {
                let input = tape.concat(&[time, state[i]]);
                record_policy(tape, net, offsets[i], input)
            })
            .collect();

        if let Some(f) = integrands {
            let pos: Vec<Var> = state.iter().map(|&s| position(tape, s)).collect();
            for i in 0..n {
                let r = f.running[i];
                if r == 0.0 {
                    continue;
                }
                let c = &spec.costs[i];
                if c.action_coeff != 0.0 {
                    let a2 = tape.squared_distance(act[i], zero_action);
                    terms.push((a2, r * c.action_coeff * dt));
                }
                if let (Some(o), Some(center)) = (&c.obstacle, centers[i]) {
                    let h = tape.obstacle(pos[i], center, o.amplitude, o.sharpness, o.curvature);
                    terms.push((h, r * dt));
                }
            }
            for &(i, j, w) in &f.pairs {
                let k = tape.kernel(pos[i], pos[j], q);
                terms.push((k, w * dt));
            }
        }

        let next: Vec<Var> = (0..n)
            .map(|i| {
                let sigma = spec.dynamics.sigma(i);
                let w = (sigma != 0.0).then(|| (tape.constant(noise.get(m, i, l)), sigma));
                tape.euler_step(state[i], act[i], w, dt, accel)
            })
            .collect();
        for (i, &v) in next.iter().enumerate() {
            if tape.value(v).iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteState {
                    sample: m,
                    step: l + 1,
                    player: i,
                });
            }
        }
        states.push(std::mem::replace(&mut state, next));
        actions.push(act);
    }

    let objective = integrands.map(|f| {
        for i in 0..n {
            let c = &spec.costs[i];
            let qi = f.terminal[i] * c.terminal_coeff;
            if qi != 0.0 {
                let pos = position(tape, state[i]);
                let z = tape.constant(&c.target);
                let g = tape.squared_distance(pos, z);
                terms.push((g, qi));
            }
        }
        tape.lin_comb(terms)
    });
    states.push(state);

    Ok(SamplePath {
        states,
        actions,
        objective,
    })
}

/// A discretized objective `(1/M) Σ_m [Σ_ℓ F Δ_ℓ + G]` over fixed noise.
#[derive(Clone, Debug)]
pub struct DiscreteObjective<'a> {
    pub spec: &'a GameSpec,
    pub net: PolicyNet,
    pub grid: TimeGrid,
    pub integrands: Integrands,
    offsets: Vec<usize>,
}

impl<'a> DiscreteObjective<'a> {
    pub fn new(
        spec: &'a GameSpec,
        arch: &Architecture,
        grid: TimeGrid,
        integrands: Integrands,
    ) -> Self {
        let net = PolicyNet::new(spec, arch);
        let offsets = (0..spec.n_players).map(|i| i * net.param_len()).collect();
        Self {
            spec,
            net,
            grid,
            integrands,
            offsets,
        }
    }

    pub fn record(&self, tape: &mut Tape, noise: &NoiseBlock, m: usize) -> Result<Var> {
        let path = record_sample(
            tape,
            self.spec,
            &self.net,
            &self.offsets,
            &self.grid,
            noise,
            m,
            Some(&self.integrands),
        )?;
        Ok(path.objective.expect("integrands supplied"))
    }

    pub fn value(&self, params: &[f64], noise: &NoiseBlock) -> Result<f64> {
        diff_engine::evaluate_mean(params, noise.samples, |t, m| self.record(t, noise, m))
    }

    pub fn value_and_grad(&self, params: &[f64], noise: &NoiseBlock) -> Result<(f64, Vec<f64>)> {
        diff_engine::grad_mean(params, noise.samples, |t, m| self.record(t, noise, m))
    }
}

/// `M` sampled joint trajectories with their actions and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub samples: usize,
    pub players: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `[m][i][ℓ][k]`, `ℓ = 0..=P`.
    pub states: Vec<f64>,
    /// `[m][i][ℓ][k]`, `ℓ = 0..P`.
    pub actions: Vec<f64>,
    /// `[m][i][ℓ][k]`, `ℓ = 0..P`.
    pub noise: Vec<f64>,
}

impl RolloutBatch {
    #[inline]
    pub fn state(&self, m: usize, i: usize, l: usize) -> &[f64] {
        let off = ((m * self.players + i) * (self.steps + 1) + l) * self.state_dim;
        &self.states[off..off + self.state_dim]
    }

    #[inline]
    pub fn action(&self, m: usize, i: usize, l: usize) -> &[f64] {
        let off = ((m * self.players + i) * self.steps + l) * self.action_dim;
        &self.actions[off..off + self.action_dim]
    }

    #[inline]
    pub fn noise(&self, m: usize, i: usize, l: usize) -> &[f64] {
        let off = ((m * self.players + i) * self.steps + l) * self.noise_dim;
        &self.noise[off..off + self.noise_dim]
    }

    pub fn dt(&self, l: usize) -> f64 {
        self.times[l + 1] - self.times[l]
    }

    /// One row per `(m, i, ℓ)`: time, state components, action components
    /// (empty at the terminal node).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "sample,player,step,t")?;
        for k in 0..self.state_dim {
            write!(w, ",x{k}")?;
        }
        for k in 0..self.action_dim {
            write!(w, ",a{k}")?;
        }
        writeln!(w)?;
        for m in 0..self.samples {
            for i in 0..self.players {
                for l in 0..=self.steps {
                    write!(w, "{m},{i},{l},{}", self.times[l])?;
                    for v in self.state(m, i, l) {
                        write!(w, ",{v}")?;
                    }
                    if l < self.steps {
                        for v in self.action(m, i, l) {
                            write!(w, ",{v}")?;
                        }
                    } else {
                        for _ in 0..self.action_dim {
                            write!(w, ",")?;
                        }
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"CAVRB\x00\x01\x00";

    /// Little-endian replay format: magic, seven `u64` header fields, then
    /// times, states, actions and noise as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            64 + 8 * (self.times.len() + self.states.len() + self.actions.len() + self.noise.len()),
        );
        out.extend_from_slice(Self::MAGIC);
        for h in [
            self.samples,
            self.players,
            self.steps,
            self.state_dim,
            self.action_dim,
            self.noise_dim,
        ] {
            out.extend_from_slice(&(h as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self
            .times
            .iter()
            .chain(&self.states)
            .chain(&self.actions)
            .chain(&self.noise)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("rollout batch: {m}"));
        if bytes.len() < 64 || &bytes[..8] != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let [samples, players, steps, state_dim, action_dim, noise_dim] =
            [0, 1, 2, 3, 4, 5].map(|k| word(k) as usize);
        let seed = word(6);
        let n_times = steps + 1;
        let n_states = samples * players * (steps + 1) * state_dim;
        let n_actions = samples * players * steps * action_dim;
        let n_noise = samples * players * steps * noise_dim;
        let total = n_times + n_states + n_actions + n_noise;
        let body = &bytes[64..];
        if body.len() != 8 * total {
            return Err(bad("length does not match header"));
        }
        let mut floats = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |k: usize| floats.by_ref().take(k).collect::<Vec<f64>>();
        Ok(Self {
            samples,
            players,
            steps,
            state_dim,
            action_dim,
            noise_dim,
            seed,
            times: take(n_times),
            states: take(n_states),
            actions: take(n_actions),
            noise: take(n_noise),
        })
    }
}

/// Simulates `M` joint trajectories under `params` (forced to one when the
/// game is deterministic).
pub fn simulate(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    grid: &TimeGrid,
    samples: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let samples = effective_samples(spec, samples);
    let noise = NoiseBlock::sample(spec, grid, samples, seed);
    simulate_with_noise(spec, arch, params, grid, &noise)
}

/// Simulation driven by a caller-supplied noise block.
pub fn simulate_with_noise(
    spec: &GameSpec,
    arch: &Architecture,
    params: &PolicyParams,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<RolloutBatch> {
    let net = PolicyNet::new(spec, arch);
    let offsets: Vec<usize> = (0..spec.n_players).map(|i| params.range(i).start).collect();
    let (n, p, sd, ad, d) = (
        spec.n_players,
        grid.steps(),
        spec.state_dim(),
        spec.action_dim(),
        spec.dim(),
    );
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..noise.samples)
        .into_par_iter()
        .map(|m| {
            let mut tape = Tape::new(params.flat());
            let path = record_sample(&mut tape, spec, &net, &offsets, grid, noise, m, None)?;
            let mut st = Vec::with_capacity(n * (p + 1) * sd);
            let mut ac = Vec::with_capacity(n * p * ad);
            for i in 0..n {
                for l in 0..=p {
                    st.extend_from_slice(tape.value(path.states[l][i]));
                }
                for l in 0..p {
                    ac.extend_from_slice(tape.value(path.actions[l][i]));
                }
            }
            Ok((st, ac))
        })
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(noise.samples * n * (p + 1) * sd);
    let mut actions = Vec::with_capacity(noise.samples * n * p * ad);
    for (s, a) in per_sample {
        states.extend(s);
        actions.extend(a);
    }
    Ok(RolloutBatch {
        samples: noise.samples,
        players: n,
        steps: p,
        state_dim: sd,
        action_dim: ad,
        noise_dim: d,
        seed: noise.seed,
        times: grid.nodes().to_vec(),
        states,
        actions,
        noise: noise.data().to_vec(),
    })
}

/// `(1/M) Σ_m [Σ_ℓ F(X_ℓ, a_ℓ) Δ_ℓ + G(X_P)]` for arbitrary integrands,
/// evaluated from stored states and actions (left-endpoint rule).
pub fn estimate_objective(spec: &GameSpec, batch: &RolloutBatch, f: &Integrands) -> f64 {
    let n = batch.players;
    let mut total = 0.0;
    for m in 0..batch.samples {
        let mut path = 0.0;
        for l in 0..batch.steps {
            let xs: Vec<&[f64]> = (0..n).map(|i| batch.state(m, i, l)).collect();
            let us: Vec<&[f64]> = (0..n).map(|i| batch.action(m, i, l)).collect();
            path += f.running_value(spec, &xs, &us) * batch.dt(l);
        }
        let xt: Vec<&[f64]> = (0..n).map(|i| batch.state(m, i, batch.steps)).collect();
        path += f.terminal_value(spec, &xt);
        total += path;
    }
    total / batch.samples as f64
}

/// Discretized `J_i` with the raw weights `λ_ij`.
pub fn estimate_player_objective(spec: &GameSpec, batch: &RolloutBatch, i: usize) -> f64 {
    estimate_objective(spec, batch, &Integrands::player(spec, i))
}

/// `Φ_M` with per-player objectives and batch diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialEstimate {
    pub phi: f64,
    pub per_player_j: Vec<f64>,
    pub min_pair_distance: f64,
    pub max_pair_distance: f64,
    /// Fraction of `(m, i, ℓ)` states where the obstacle cost exceeds half
    /// its amplitude.
    pub obstacle_occupancy: f64,
}

pub fn estimate_potential(spec: &GameSpec, batch: &RolloutBatch) -> PotentialEstimate {
    let phi = estimate_objective(spec, batch, &Integrands::potential(spec));
    let per_player_j = (0..spec.n_players)
        .map(|i| estimate_player_objective(spec, batch, i))
        .collect();

    let n = batch.players;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut inside = 0usize;
    for m in 0..batch.samples {
        for l in 0..=batch.steps {
            for i in 0..n {
                let xi = spec.position(batch.state(m, i, l));
                for j in i + 1..n {
                    let dist = dist_sq(xi, spec.position(batch.state(m, j, l))).sqrt();
                    lo = lo.min(dist);
                    hi = hi.max(dist);
                }
                if let Some(o) = &spec.costs[i].obstacle {
                    if o.eval(xi) > 0.5 * o.amplitude {
                        inside += 1;
                    }
                }
            }
        }
    }
    if n < 2 {
        lo = 0.0;
    }
    let total = batch.samples * n * (batch.steps + 1);
    PotentialEstimate {
        phi,
        per_player_j,
        min_pair_distance: lo,
        max_pair_distance: hi,
        obstacle_occupancy: inside as f64 / total as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{DynamicsKind, InteractionWeights, Kernel, PlayerCost};
    use crate::policy::init_params;

    fn velocity_spec(n: usize, lambda: f64) -> GameSpec {
        GameSpec {
            n_players: n,
            horizon: 1.0,
            dynamics: DynamicsKind::Velocity { dim: 1 },
            weights: InteractionWeights::uniform(n, lambda).unwrap(),
            kernel: Kernel::scaled_radial(0.0, n, 1),
            costs: vec![
                PlayerCost {
                    action_coeff: 0.1,
                    terminal_coeff: 10.0,
                    target: vec![1.0],
                    obstacle: None,
                };
                n
            ],
            initial_states: (0..n).map(|i| vec![-1.0 + 0.1 * i as f64]).collect(),
        }
    }

    /// Affine policy `a = θ_0 (t/T) + θ_1 x + θ_2`.
    fn affine(theta: &[[f64; 3]]) -> PolicyParams {
        PolicyParams::from_players(theta.iter().map(|t| t.to_vec()).collect())
    }

    #[test]
    fn grid_sums_to_horizon() {
        let g = TimeGrid::uniform(1.7, 13).unwrap();
        let s: f64 = (0..g.steps()).map(|l| g.dt(l)).sum();
        assert!((s - 1.7).abs() < 1e-14);
        assert_eq!(g.horizon(), 1.7);
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn zero_policy_stays_put() {
        let spec = velocity_spec(3, 0.1);
        let p = affine(&[[0.0; 3]; 3]);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &Architecture::affine(), &p, &grid, 5, 1).unwrap();
        assert_eq!(b.samples, 1);
        for i in 0..3 {
            for l in 0..=10 {
                assert_eq!(b.state(0, i, l), spec.initial_states[i].as_slice());
            }
        }
    }

    #[test]
    fn constant_velocity_euler_path() {
        let mut spec = velocity_spec(1, 0.0);
        spec.initial_states = vec![vec![-1.0]];
        let p = affine(&[[0.0, 0.0, 1.0]]);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let b = simulate(&spec, &Architecture::affine(), &p, &grid, 1, 0).unwrap();
        let xs: Vec<f64> = (0..=4).map(|l| b.state(0, 0, l)[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.75, -0.5, -0.25, 0.0]);
    }

    #[test]
    fn acceleration_one_step_variance() {
        let sigma = 0.1;
        let spec = GameSpec {
            n_players: 1,
            horizon: 1.0,
            dynamics: DynamicsKind::Acceleration {
                dim: 1,
                sigma: vec![sigma],
            },
            weights: InteractionWeights::uniform(1, 0.0).unwrap(),
            kernel: Kernel::scaled_radial(0.0, 1, 1),
            costs: vec![PlayerCost {
                action_coeff: 0.0,
                terminal_coeff: 0.0,
                target: vec![0.0],
                obstacle: None,
            }],
            initial_states: vec![vec![0.0, 0.0]],
        };
        let grid = TimeGrid::uniform(0.25, 1).unwrap();
        let dt = 0.25;
        let m = 100_000;
        let p = PolicyParams::from_players(vec![vec![0.0; 4]]);
        let b = simulate(&spec, &Architecture::affine(), &p, &grid, m, 42).unwrap();
        let (mut sx, mut sv, mut sv2) = (0.0, 0.0, 0.0);
        for k in 0..m {
            let s = b.state(k, 0, 1);
            sx += s[0] * s[0];
            sv += s[1];
            sv2 += s[1] * s[1];
        }
        let mean = sv / m as f64;
        let var = sv2 / m as f64 - mean * mean;
        let target = sigma * sigma * dt;
        // standard error of the sample variance of a Gaussian: σ² √(2/(m−1))
        let se = target * (2.0 / (m as f64 - 1.0)).sqrt();
        assert_eq!(sx, 0.0);
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target} ± {se}");
    }

    #[test]
    fn rollout_is_deterministic() {
        let mut spec = velocity_spec(3, 0.1);
        spec.dynamics = DynamicsKind::Acceleration {
            dim: 1,
            sigma: vec![0.1; 3],
        };
        spec.initial_states = vec![vec![-1.0, 0.0]; 3];
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 5);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let a = simulate(&spec, &arch, &p, &grid, 8, 9).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 8, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, &arch, &p, &grid, 8, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn states_replay_through_euler_recursion() {
        let mut spec = velocity_spec(2, 0.1);
        spec.dynamics = DynamicsKind::Acceleration {
            dim: 1,
            sigma: vec![0.1, 0.3],
        };
        spec.initial_states = vec![vec![-1.0, 0.0]; 2];
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 5);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 3, 2).unwrap();
        for m in 0..3 {
            for i in 0..2 {
                assert_eq!(b.state(m, i, 0), spec.initial_states[i].as_slice());
                for l in 0..10 {
                    let (s, a, w) = (b.state(m, i, l), b.action(m, i, l), b.noise(m, i, l));
                    let dt = b.dt(l);
                    let x1 = s[0] + dt * s[1];
                    let v1 = s[1] + dt * a[0] + spec.dynamics.sigma(i) * w[0];
                    assert_eq!(b.state(m, i, l + 1), &[x1, v1]);
                }
            }
        }
    }

    #[test]
    fn non_finite_state_names_step_and_player() {
        let spec = velocity_spec(2, 0.0);
        let p = affine(&[[0.0, 0.0, 0.0], [0.0, 0.0, f64::INFINITY]]);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let err = simulate(&spec, &Architecture::affine(), &p, &grid, 1, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteState {
                step: 1,
                player: 1,
                ..
            }
        ));
    }

    #[test]
    fn zero_costs_give_zero_potential() {
        let mut spec = velocity_spec(3, 0.0);
        for c in &mut spec.costs {
            c.action_coeff = 0.0;
            c.terminal_coeff = 0.0;
        }
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 3);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 0).unwrap();
        let est = estimate_potential(&spec, &b);
        assert_eq!(est.phi, 0.0);
        assert_eq!(est.per_player_j, vec![0.0; 3]);
    }

    #[test]
    fn single_step_single_player_by_hand() {
        let mut spec = velocity_spec(1, 0.0);
        spec.horizon = 0.5;
        let p = affine(&[[0.3, -0.5, 0.2]]);
        let grid = TimeGrid::uniform(0.5, 1).unwrap();
        let b = simulate(&spec, &Architecture::affine(), &p, &grid, 1, 0).unwrap();
        let a0: f64 = 0.3 * 0.0 - 0.5 * -1.0 + 0.2;
        let x1 = -1.0 + 0.5 * a0;
        let want = 0.1 * a0 * a0 * 0.5 + 10.0 * (x1 - 1.0) * (x1 - 1.0);
        let est = estimate_potential(&spec, &b);
        assert!((est.phi - want).abs() < 1e-14);
        assert!((est.per_player_j[0] - want).abs() < 1e-14);
    }

    #[test]
    fn coincident_stationary_pair() {
        let mut spec = velocity_spec(2, 0.0);
        spec.weights = InteractionWeights::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        for c in &mut spec.costs {
            c.action_coeff = 0.0;
            c.terminal_coeff = 0.0;
        }
        spec.initial_states = vec![vec![0.0], vec![0.0]];
        let p = affine(&[[0.0; 3]; 2]);
        let grid = TimeGrid::uniform(1.0, 7).unwrap();
        let b = simulate(&spec, &Architecture::affine(), &p, &grid, 1, 0).unwrap();
        assert!((estimate_player_objective(&spec, &b, 0) - 1.0).abs() < 1e-15);
        assert_eq!(estimate_player_objective(&spec, &b, 1), 0.0);
    }

    #[test]
    fn decoupled_objective_ignores_others() {
        let spec = velocity_spec(3, 0.0);
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 1);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 0).unwrap();
        let j0 = estimate_player_objective(&spec, &b, 0);
        let mut solo = spec.clone();
        solo.n_players = 1;
        solo.weights = InteractionWeights::uniform(1, 0.0).unwrap();
        solo.costs.truncate(1);
        solo.initial_states.truncate(1);
        let ps = PolicyParams::from_players(vec![p.player(0).to_vec()]);
        let bs = simulate(&solo, &arch, &ps, &grid, 1, 0).unwrap();
        assert_eq!(j0, estimate_player_objective(&solo, &bs, 0));
    }

    #[test]
    fn pair_terms_double_count_identity() {
        // Σ_i J_i − Φ equals the pair term counted once more, for symmetric λ.
        let spec = velocity_spec(3, 0.4);
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 2);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 0).unwrap();
        let est = estimate_potential(&spec, &b);
        let mut pair = 0.0;
        for l in 0..10 {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let d = b.state(0, i, l)[0] - b.state(0, j, l)[0];
                        pair += 0.5 * 0.4 / (d * d + 1.0) * b.dt(l);
                    }
                }
            }
        }
        let sum_j: f64 = est.per_player_j.iter().sum();
        assert!((sum_j - est.phi - pair).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_pair_sum_matches_symmetrized_potential() {
        let mut spec = velocity_spec(2, 0.0);
        spec.weights =
            InteractionWeights::from_rows(vec![vec![0.0, 1.5], vec![0.25, 0.0]]).unwrap();
        for c in &mut spec.costs {
            c.action_coeff = 0.0;
            c.terminal_coeff = 0.0;
        }
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 4);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 0).unwrap();
        let sum_j =
            estimate_player_objective(&spec, &b, 0) + estimate_player_objective(&spec, &b, 1);
        let phi = estimate_potential(&spec, &b).phi;
        assert!((sum_j - 2.0 * phi).abs() < 1e-12);
    }

    #[test]
    fn tape_objective_matches_stored_batch_estimate() {
        let mut spec = velocity_spec(3, 0.2);
        spec.dynamics = DynamicsKind::Acceleration {
            dim: 1,
            sigma: vec![0.1; 3],
        };
        spec.initial_states = vec![vec![-1.0, 0.0]; 3];
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 5);
        let grid = TimeGrid::uniform(1.0, 12).unwrap();
        let noise = NoiseBlock::sample(&spec, &grid, 4, 77);
        let obj = DiscreteObjective::new(&spec, &arch, grid.clone(), Integrands::potential(&spec));
        let v = obj.value(p.flat(), &noise).unwrap();
        let (vg, _) = obj.value_and_grad(p.flat(), &noise).unwrap();
        assert_eq!(v.to_bits(), vg.to_bits());
        let b = simulate_with_noise(&spec, &arch, &p, &grid, &noise).unwrap();
        let est = estimate_potential(&spec, &b).phi;
        assert!(
            (v - est).abs() <= 1e-12 * est.abs().max(1.0),
            "{v} vs {est}"
        );
    }

    #[test]
    fn binary_round_trip_and_rejects_garbage() {
        let spec = velocity_spec(2, 0.1);
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 5);
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 3).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(RolloutBatch::from_bytes(&bytes).unwrap(), b);
        assert!(RolloutBatch::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(RolloutBatch::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn csv_rows_round_trip_states() {
        let spec = velocity_spec(2, 0.1);
        let arch = Architecture::default();
        let p = init_params(&spec, &arch, 5);
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let b = simulate(&spec, &arch, &p, &grid, 1, 3).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sample,player,step,t,x0,a0");
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let (i, l): (usize, usize) = (f[1].parse().unwrap(), f[2].parse().unwrap());
            assert_eq!(f[4].parse::<f64>().unwrap(), b.state(0, i, l)[0]);
        }
    }
}
