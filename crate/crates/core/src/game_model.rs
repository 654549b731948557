//! Game description and the closed-form potential constructions.
//!
//! Player `i` controls a state `X_i` through a decentralized policy and pays
//!
//! ```text
//! J_i = E[ ∫_0^T ( f_i(X_i, a_i) + Σ_{j≠i} λ_ij K(X_i − X_j) ) dt + g_i(X_i(T)) ]
//! ```
//!
//! The potential replaces `λ_ij` by its symmetric part and sums over players:
//!
//! ```text
//! F(x, a) = Σ_i f_i(x_i, a_i) + Σ_{i<j} ½(λ_ij + λ_ji) K(x_i − x_j),   G(x) = Σ_i g_i(x_i)
//! ```
//!
//! Unilateral deviations change `Φ` and `J_i` by amounts that differ by at
//! most [`alpha_bound`]. Kernels, terminal costs and obstacles act on the
//! position block of the state only.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

// -----------------------------------------------------------------------------
// Dynamics
// -----------------------------------------------------------------------------

/// Controlled dynamics shared by every player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsKind {
    /// `dx = a dt`; state is the position in `R^d`.
    Velocity { dim: usize },
    /// `dx = v dt, dv = a dt + σ_i dW`; state is `(x, v)` in `R^{2d}`.
    Acceleration { dim: usize, sigma: Vec<f64> },
}

impl DynamicsKind {
    pub fn dim(&self) -> usize {
        match self {
            DynamicsKind::Velocity { dim } | DynamicsKind::Acceleration { dim, .. } => *dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsKind::Velocity { dim } => *dim,
            DynamicsKind::Acceleration { dim, .. } => 2 * dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.dim()
    }

    /// Diffusion coefficient of player `i` (zero under velocity control).
    pub fn sigma(&self, i: usize) -> f64 {
        match self {
            DynamicsKind::Velocity { .. } => 0.0,
            DynamicsKind::Acceleration { sigma, .. } => sigma[i],
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            DynamicsKind::Velocity { .. } => true,
            DynamicsKind::Acceleration { sigma, .. } => sigma.iter().all(|&s| s == 0.0),
        }
    }

    pub fn is_acceleration(&self) -> bool {
        matches!(self, DynamicsKind::Acceleration { .. })
    }
}

// -----------------------------------------------------------------------------
// Interaction weights
// -----------------------------------------------------------------------------

/// Pairwise interaction weights `λ_ij`, optionally built from separable tags
/// `λ_ij = γ_i τ_j`. Diagonal entries are stored but never used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsRepr", into = "WeightsRepr")]
pub struct InteractionWeights {
    n: usize,
    lambda: Vec<f64>,
    separable: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightsRepr {
    Separable { gamma: Vec<f64>, tau: Vec<f64> },
    Matrix { lambda: Vec<Vec<f64>> },
}

impl TryFrom<WeightsRepr> for InteractionWeights {
    type Error = Error;

    fn try_from(repr: WeightsRepr) -> Result<Self> {
        match repr {
            WeightsRepr::Separable { gamma, tau } => Self::separable(gamma, tau),
            WeightsRepr::Matrix { lambda } => Self::from_rows(lambda),
        }
    }
}

impl From<InteractionWeights> for WeightsRepr {
    fn from(w: InteractionWeights) -> Self {
        match w.separable {
            Some((gamma, tau)) => WeightsRepr::Separable { gamma, tau },
            None => WeightsRepr::Matrix {
                lambda: w.lambda.chunks(w.n).map(<[f64]>::to_vec).collect(),
            },
        }
    }
}

impl InteractionWeights {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidSpec("weight matrix is empty".into()));
        }
        let mut lambda = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidSpec(format!(
                    "weight row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j && !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "lambda[{i}][{j}] = {v} must be finite and nonnegative"
                    )));
                }
            }
            lambda.extend_from_slice(row);
        }
        Ok(Self {
            n,
            lambda,
            separable: None,
        })
    }

    /// `λ_ij = γ_i τ_j` with strictly positive tags.
    pub fn separable(gamma: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        let n = gamma.len();
        if n == 0 || tau.len() != n {
            return Err(Error::InvalidSpec(format!(
                "gamma has {} entries and tau has {}",
                n,
                tau.len()
            )));
        }
        if gamma
            .iter()
            .chain(&tau)
            .any(|&v| !(v.is_finite() && v > 0.0))
        {
            return Err(Error::InvalidSpec("gamma and tau must be positive".into()));
        }
        let lambda = gamma
            .iter()
            .flat_map(|&g| tau.iter().map(move |&t| g * t))
            .collect();
        Ok(Self {
            n,
            lambda,
            separable: Some((gamma, tau)),
        })
    }

    /// All off-diagonal weights equal to `value`.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { value }).collect())
            .collect();
        Self::from_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lambda[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.lambda.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Separable tags `(γ, τ)` if the weights were built from them.
    pub fn tags(&self) -> Option<(&[f64], &[f64])> {
        self.separable
            .as_ref()
            .map(|(g, t)| (g.as_slice(), t.as_slice()))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Entries `(λ_ij + λ_ji) / 2`. Separable tags are dropped.
    pub fn symmetrized(&self) -> Self {
        let n = self.n;
        let mut lambda = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                lambda[i * n + j] = if i == j {
                    self.get(i, i)
                } else {
                    0.5 * (self.get(i, j) + self.get(j, i))
                };
            }
        }
        Self {
            n,
            lambda,
            separable: None,
        }
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let lambda = (0..n * n).map(|k| self.get(k % n, k / n)).collect();
        Self {
            n,
            lambda,
            separable: self.separable.as_ref().map(|(g, t)| (t.clone(), g.clone())),
        }
    }

    /// `max_i Σ_{j≠i} |λ_ij − λ_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| (self.get(i, j) - self.get(j, i)).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

// -----------------------------------------------------------------------------
// Kernel
// -----------------------------------------------------------------------------

/// Radial profile `ρ` of a scaled kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialProfile {
    /// `ρ(r) = 1 / (r² + 1)`.
    #[default]
    Cauchy,
}

/// Bounded radial interaction kernel.
///
/// Both variants reduce to `1 / (a |z|² + 1)` for a variant-specific
/// `a ≥ 0`, so they are even in `z` and peak at `z = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `K(z) = ρ(N^{β/d} |z|)`.
    ScaledRadial {
        beta: f64,
        n: usize,
        dim: usize,
        #[serde(default)]
        profile: RadialProfile,
    },
    /// `K(z) = 1 / (c² |z|² + 1)`.
    InverseQuadratic { scale: f64 },
}

impl Kernel {
    pub fn scaled_radial(beta: f64, n: usize, dim: usize) -> Self {
        Kernel::ScaledRadial {
            beta,
            n,
            dim,
            profile: RadialProfile::Cauchy,
        }
    }

    /// Coefficient `a` in `K(z) = 1 / (a |z|² + 1)`.
    pub fn quadratic_coeff(&self) -> f64 {
        match self {
            Kernel::ScaledRadial { beta, n, dim, .. } => (*n as f64).powf(2.0 * beta / *dim as f64),
            Kernel::InverseQuadratic { scale } => scale * scale,
        }
    }

    /// `‖K‖_∞`, attained at the origin.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Kernel::ScaledRadial {
                profile: RadialProfile::Cauchy,
                ..
            } => 1.0,
            Kernel::InverseQuadratic { .. } => 1.0,
        }
    }

    /// Kernel value as a function of `|z|²`.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        1.0 / (self.quadratic_coeff() * r2 + 1.0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.eval_sq(norm_sq(z))
    }

    /// `K(a − b)` without allocating the difference.
    #[inline]
    pub fn eval_between(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_sq(dist_sq(a, b))
    }

    fn validate(&self) -> Result<()> {
        match self {
            Kernel::ScaledRadial { beta, n, dim, .. } => {
                if !(0.0..=1.0).contains(beta) {
                    return Err(Error::InvalidSpec(format!("beta = {beta} outside [0, 1]")));
                }
                if *n == 0 || *dim == 0 {
                    return Err(Error::InvalidSpec(
                        "kernel n and dim must be positive".into(),
                    ));
                }
            }
            Kernel::InverseQuadratic { scale } => {
                if !scale.is_finite() {
                    return Err(Error::InvalidSpec("kernel scale must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

// -----------------------------------------------------------------------------
// Costs
// -----------------------------------------------------------------------------

/// Smoothed circular obstacle
/// `h(x) = A (1 − 1 / (1 + exp[s (1 − M |x − c|²)]))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCost {
    pub amplitude: f64,
    pub sharpness: f64,
    pub curvature: f64,
    pub center: Vec<f64>,
}

impl ObstacleCost {
    /// Amplitude 1000 and sharpness 10, centered at the origin.
    pub fn centered(curvature: f64, dim: usize) -> Self {
        Self {
            amplitude: 1000.0,
            sharpness: 10.0,
            curvature,
            center: vec![0.0; dim],
        }
    }

    /// Radius at which the cost crosses `A / 2`.
    pub fn radius(&self) -> f64 {
        1.0 / self.curvature.sqrt()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_sq(dist_sq(x, &self.center))
    }

    /// Cost as a function of `|x − c|²`.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        self.amplitude * sigmoid(self.sharpness * (1.0 - self.curvature * r2))
    }

    /// `dh / d|x − c|²`.
    #[inline]
    pub fn deriv_sq(&self, r2: f64) -> f64 {
        let s = sigmoid(self.sharpness * (1.0 - self.curvature * r2));
        -self.amplitude * self.sharpness * self.curvature * s * (1.0 - s)
    }
}

/// Logistic function `1 / (1 + e^{-y})`, evaluated without overflow.
#[inline]
pub(crate) fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Running and terminal cost of one player:
/// `f_i(x, a) = c |a|² + h(pos x)`, `g_i(x) = w |pos x − z|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerCost {
    pub action_coeff: f64,
    pub terminal_coeff: f64,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleCost>,
}

// -----------------------------------------------------------------------------
// Game
// -----------------------------------------------------------------------------

/// Full description of an N-player game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameSpecRepr")]
pub struct GameSpec {
    pub n_players: usize,
    pub horizon: f64,
    pub dynamics: DynamicsKind,
    pub weights: InteractionWeights,
    pub kernel: Kernel,
    pub costs: Vec<PlayerCost>,
    pub initial_states: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct GameSpecRepr {
    n_players: usize,
    horizon: f64,
    dynamics: DynamicsKind,
    weights: InteractionWeights,
    kernel: Kernel,
    costs: Vec<PlayerCost>,
    initial_states: Vec<Vec<f64>>,
}

impl TryFrom<GameSpecRepr> for GameSpec {
    type Error = Error;

    fn try_from(r: GameSpecRepr) -> Result<Self> {
        let spec = GameSpec {
            n_players: r.n_players,
            horizon: r.horizon,
            dynamics: r.dynamics,
            weights: r.weights,
            kernel: r.kernel,
            costs: r.costs,
            initial_states: r.initial_states,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_players;
        let d = self.dynamics.dim();
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if n == 0 {
            return bad("at least one player is required".into());
        }
        if d == 0 {
            return bad("dimension must be at least 1".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if let DynamicsKind::Acceleration { sigma, .. } = &self.dynamics {
            if sigma.len() != n {
                return bad(format!("sigma has {} entries for {n} players", sigma.len()));
            }
            if sigma.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
                return bad("sigma entries must be nonnegative".into());
            }
        }
        if self.weights.n() != n {
            return bad(format!(
                "weights are {0}x{0} for {n} players",
                self.weights.n()
            ));
        }
        self.kernel.validate()?;
        if self.costs.len() != n {
            return bad(format!("{} cost entries for {n} players", self.costs.len()));
        }
        for (i, c) in self.costs.iter().enumerate() {
            if !(c.action_coeff >= 0.0 && c.terminal_coeff >= 0.0) {
                return bad(format!("player {i}: cost coefficients must be nonnegative"));
            }
            if c.target.len() != d {
                return bad(format!(
                    "player {i}: target has dimension {}",
                    c.target.len()
                ));
            }
            if let Some(o) = &c.obstacle {
                if o.center.len() != d || !(o.curvature > 0.0) || !(o.amplitude >= 0.0) {
                    return bad(format!("player {i}: malformed obstacle"));
                }
            }
        }
        if self.initial_states.len() != n {
            return bad(format!(
                "{} initial states for {n} players",
                self.initial_states.len()
            ));
        }
        let sd = self.dynamics.state_dim();
        for (i, s) in self.initial_states.iter().enumerate() {
            if s.len() != sd || s.iter().any(|v| !v.is_finite()) {
                return bad(format!(
                    "player {i}: initial state must have {sd} finite entries"
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    /// Position block of a player state.
    #[inline]
    pub fn position<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[..self.dim()]
    }

    pub fn obstacle_cost(&self, i: usize, state: &[f64]) -> f64 {
        self.costs[i]
            .obstacle
            .as_ref()
            .map_or(0.0, |o| o.eval(self.position(state)))
    }

    /// `f_i(x_i, a_i) = c_i |a_i|² + h(pos x_i)`.
    pub fn running_cost(&self, i: usize, state: &[f64], action: &[f64]) -> f64 {
        self.costs[i].action_coeff * norm_sq(action) + self.obstacle_cost(i, state)
    }

    /// `g_i(x_i) = w_i |pos x_i − z_i|²`.
    pub fn terminal_cost(&self, i: usize, state: &[f64]) -> f64 {
        let c = &self.costs[i];
        c.terminal_coeff * dist_sq(self.position(state), &c.target)
    }

    /// Kernel between the position blocks of two player states.
    #[inline]
    pub fn interaction(&self, xi: &[f64], xj: &[f64]) -> f64 {
        self.kernel
            .eval_between(self.position(xi), self.position(xj))
    }

    /// Copy of the game with `λ` replaced by its symmetric part.
    pub fn symmetrized(&self) -> Self {
        Self {
            weights: self.weights.symmetrized(),
            ..self.clone()
        }
    }
}

/// `T ‖K‖_∞ max_i Σ_{j≠i} |λ_ij − λ_ji|`.
pub fn alpha_bound(spec: &GameSpec) -> f64 {
    alpha_bound_with(spec.horizon, spec.kernel.sup_norm(), &spec.weights)
}

/// [`alpha_bound`] from its ingredients.
pub fn alpha_bound_with(horizon: f64, sup_norm: f64, weights: &InteractionWeights) -> f64 {
    horizon * sup_norm * weights.max_asymmetry()
}

// -----------------------------------------------------------------------------
// Integrands
// -----------------------------------------------------------------------------

/// Weighted running/terminal integrands of the form
///
/// ```text
/// F(x, a) = Σ_i r_i f_i(x_i, a_i) + Σ_(i,j) w_ij K(x_i − x_j),   G(x) = Σ_i q_i g_i(x_i)
/// ```
///
/// The potential, the rescaled potential and each player's own objective
/// are all instances with different coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Integrands {
    pub running: Vec<f64>,
    pub terminal: Vec<f64>,
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Integrands {
    /// Coefficients of the potential: unit player weights and symmetrized
    /// pair weights over `i < j`.
    pub fn potential(spec: &GameSpec) -> Self {
        let n = spec.n_players;
        let w = &spec.weights;
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let c = 0.5 * (w.get(i, j) + w.get(j, i));
                if c != 0.0 {
                    pairs.push((i, j, c));
                }
            }
        }
        Self {
            running: vec![1.0; n],
            terminal: vec![1.0; n],
            pairs,
        }
    }

    /// Rescaled potential for separable weights: player terms scaled by
    /// `τ_i / γ_i`, pair weights `τ_i τ_j` over `i < j`.
    pub fn rescaled(spec: &GameSpec) -> Result<Self> {
        let (gamma, tau) = spec.weights.tags().ok_or(Error::NotSeparable)?;
        let n = spec.n_players;
        let scale: Vec<f64> = (0..n).map(|i| tau[i] / gamma[i]).collect();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j, tau[i] * tau[j]));
            }
        }
        Ok(Self {
            running: scale.clone(),
            terminal: scale,
            pairs,
        })
    }

    /// Player `i`'s own objective with the raw weights `λ_ij`.
    pub fn player(spec: &GameSpec, i: usize) -> Self {
        let n = spec.n_players;
        let mut running = vec![0.0; n];
        running[i] = 1.0;
        let pairs = (0..n)
            .filter(|&j| j != i)
            .map(|j| (i, j, spec.weights.get(i, j)))
            .filter(|&(_, _, c)| c != 0.0)
            .collect();
        Self {
            terminal: running.clone(),
            running,
            pairs,
        }
    }

    /// The terms that involve player `i`: its own running and terminal
    /// terms and every pair containing it. Under decentralized policies
    /// the dropped terms do not depend on `θ_i`.
    pub fn restricted_to(&self, i: usize) -> Self {
        let keep = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(j, &c)| if j == i { c } else { 0.0 })
                .collect()
        };
        Self {
            running: keep(&self.running),
            terminal: keep(&self.terminal),
            pairs: self
                .pairs
                .iter()
                .copied()
                .filter(|&(a, b, _)| a == i || b == i)
                .collect(),
        }
    }

    /// `F` at the joint state and action.
    pub fn running_value<S: AsRef<[f64]>, A: AsRef<[f64]>>(
        &self,
        spec: &GameSpec,
        states: &[S],
        actions: &[A],
    ) -> f64 {
        let mut total = 0.0;
        for (i, &r) in self.running.iter().enumerate() {
            if r != 0.0 {
                total += r * spec.running_cost(i, states[i].as_ref(), actions[i].as_ref());
            }
        }
        for &(i, j, w) in &self.pairs {
            total += w * spec.interaction(states[i].as_ref(), states[j].as_ref());
        }
        total
    }

    /// `G` at the joint terminal state.
    pub fn terminal_value<S: AsRef<[f64]>>(&self, spec: &GameSpec, states: &[S]) -> f64 {
        self.terminal
            .iter()
            .enumerate()
            .filter(|&(_, &q)| q != 0.0)
            .map(|(i, &q)| q * spec.terminal_cost(i, states[i].as_ref()))
            .sum()
    }
}

/// Integrands `(F, G)` of the alpha-potential.
pub fn potential_integrands(spec: &GameSpec) -> Integrands {
    Integrands::potential(spec)
}

/// Integrands `(F̃, G̃)` of the rescaled potential; requires separable weights.
pub fn rescaled_integrands(spec: &GameSpec) -> Result<Integrands> {
    Integrands::rescaled(spec)
}

#[inline]
pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_player(l12: f64, l21: f64) -> GameSpec {
        GameSpec {
            n_players: 2,
            horizon: 1.0,
            dynamics: DynamicsKind::Velocity { dim: 1 },
            weights: InteractionWeights::from_rows(vec![vec![0.0, l12], vec![l21, 0.0]]).unwrap(),
            kernel: Kernel::scaled_radial(0.0, 2, 1),
            costs: vec![
                PlayerCost {
                    action_coeff: 0.0,
                    terminal_coeff: 0.0,
                    target: vec![0.0],
                    obstacle: None,
                };
                2
            ],
            initial_states: vec![vec![0.0]; 2],
        }
    }

    fn three_by_three() -> InteractionWeights {
        InteractionWeights::from_rows(vec![
            vec![0.0, 2.0, 0.0],
            vec![4.0, 0.0, 1.0],
            vec![0.0, 3.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn symmetrize_two_by_two() {
        let w = InteractionWeights::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = w.symmetrized();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(s.symmetrized(), s);
    }

    #[test]
    fn symmetrize_three_by_three() {
        let s = three_by_three().symmetrized();
        let expect = [[0.0, 3.0, 0.0], [3.0, 0.0, 2.0], [0.0, 2.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(s.get(i, j), expect[i][j], "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn symmetric_weights_are_fixed_points() {
        let w = InteractionWeights::uniform(4, 0.3).unwrap();
        assert_eq!(w.symmetrized(), w);
    }

    #[test]
    fn alpha_bound_examples() {
        let mut g = two_player(1.0, 1.0);
        assert_eq!(alpha_bound(&g), 0.0);

        g = two_player(1.0, 0.0);
        assert_eq!(alpha_bound(&g), 1.0);

        // Row sums of |λ_ij − λ_ji| are {2, 4, 2}.
        let w = three_by_three();
        let rows = w.rows();
        let brute = (0..3)
            .map(|i| (0..3).map(|j| (rows[i][j] - rows[j][i]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert_eq!(brute, 4.0);
        assert_eq!(alpha_bound_with(2.0, 0.5, &w), 4.0);
    }

    #[test]
    fn kernel_examples() {
        let k = Kernel::scaled_radial(0.7, 13, 2);
        assert_eq!(k.eval(&[0.0, 0.0]), 1.0);
        let k = Kernel::scaled_radial(0.0, 10, 1);
        assert_eq!(k.eval(&[1.0]), 0.5);
        let k = Kernel::InverseQuadratic { scale: 9.0 };
        assert!((k.eval(&[1.0 / 9.0]) - 0.5).abs() < 1e-15);
        // β = 1, N = 10, d = 1 is 1 / (100 z² + 1).
        let k = Kernel::scaled_radial(1.0, 10, 1);
        assert_eq!(k.quadratic_coeff(), 100.0);
        assert!((k.eval(&[0.1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn obstacle_examples() {
        let small = ObstacleCost::centered(100.0, 2);
        let at_center = small.eval(&[0.0, 0.0]);
        let e10 = 10f64.exp();
        assert!((at_center - 1000.0 * (1.0 - 1.0 / (1.0 + e10))).abs() < 1e-9);
        assert!((at_center - 999.954_602_131_297_6).abs() < 1e-9);

        let large = ObstacleCost::centered(4.0, 2);
        assert!((large.eval(&[0.5, 0.0]) - 500.0).abs() < 1e-12);
        assert_eq!(small.eval(&[1.0, 0.0]), 0.0);
        assert!((large.radius() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn running_and_terminal_cost_examples() {
        let mut g = two_player(0.0, 0.0);
        g.costs[0].action_coeff = 0.1;
        assert!((g.running_cost(0, &[0.0], &[2.0]) - 0.4).abs() < 1e-15);
        assert_eq!(g.running_cost(0, &[0.3], &[0.0]), 0.0);

        g.costs[0].terminal_coeff = 10.0;
        g.costs[0].target = vec![1.0];
        assert_eq!(g.terminal_cost(0, &[1.0]), 0.0);
        assert_eq!(g.terminal_cost(0, &[-1.0]), 40.0);

        let mut g2 = g.clone();
        g2.dynamics = DynamicsKind::Acceleration {
            dim: 2,
            sigma: vec![0.0; 2],
        };
        g2.costs[0].terminal_coeff = 2.0;
        g2.costs[0].target = vec![1.0, 1.0];
        // velocity block is ignored
        assert_eq!(g2.terminal_cost(0, &[0.0, 0.0, 5.0, -3.0]), 4.0);

        g2.costs[0].action_coeff = 0.02;
        g2.costs[0].obstacle = Some(ObstacleCost::centered(4.0, 2));
        let f = g2.running_cost(0, &[0.5, 0.0, 1.0, 1.0], &[1.0, 0.0]);
        assert!((f - (0.02 + 500.0)).abs() < 1e-12);
    }

    #[test]
    fn integrands_coincident_pair() {
        let g = two_player(1.0, 1.0);
        let f = Integrands::potential(&g);
        let x = [[0.2], [0.2]];
        let a = [[0.0], [0.0]];
        assert_eq!(f.running_value(&g, &x, &a), 1.0);
    }

    #[test]
    fn integrands_single_player() {
        let mut g = two_player(0.0, 0.0);
        g.n_players = 1;
        g.weights = InteractionWeights::uniform(1, 0.0).unwrap();
        g.costs.truncate(1);
        g.initial_states.truncate(1);
        g.costs[0].action_coeff = 0.3;
        g.costs[0].terminal_coeff = 2.0;
        g.costs[0].target = vec![0.5];
        g.validate().unwrap();
        let f = Integrands::potential(&g);
        assert!(f.pairs.is_empty());
        let x = [[1.5]];
        let a = [[2.0]];
        assert_eq!(f.running_value(&g, &x, &a), g.running_cost(0, &x[0], &a[0]));
        assert_eq!(f.terminal_value(&g, &x), g.terminal_cost(0, &x[0]));
    }

    #[test]
    fn integrands_three_player_pair_sum() {
        let mut g = two_player(0.0, 0.0);
        g.n_players = 3;
        g.weights = three_by_three();
        g.costs = vec![g.costs[0].clone(); 3];
        g.initial_states = vec![vec![0.0]; 3];
        g.validate().unwrap();
        let x = [[0.0], [0.5], [-1.25]];
        let a = [[0.0]; 3];
        let got = Integrands::potential(&g).running_value(&g, &x, &a);
        // Brute force over ordered pairs, halving the double count.
        let w = g.weights.symmetrized();
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let d: f64 = x[i][0] - x[j][0];
                    want += 0.5 * w.get(i, j) / (d * d + 1.0);
                }
            }
        }
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn integrands_from_symmetrized_weights_match() {
        let mut g = two_player(0.0, 0.0);
        g.n_players = 3;
        g.weights = three_by_three();
        g.costs = vec![g.costs[0].clone(); 3];
        g.initial_states = vec![vec![0.0]; 3];
        assert_eq!(
            Integrands::potential(&g),
            Integrands::potential(&g.symmetrized())
        );
    }

    #[test]
    fn restriction_keeps_terms_of_one_player() {
        let mut g = two_player(0.0, 0.0);
        g.n_players = 3;
        g.weights = three_by_three();
        g.costs = vec![g.costs[0].clone(); 3];
        g.initial_states = vec![vec![0.0]; 3];
        let r = Integrands::potential(&g).restricted_to(1);
        assert_eq!(r.running, vec![0.0, 1.0, 0.0]);
        assert_eq!(r.terminal, vec![0.0, 1.0, 0.0]);
        assert!(r.pairs.iter().all(|&(a, b, _)| a == 1 || b == 1));
        assert_eq!(r.pairs.len(), 2);
    }

    #[test]
    fn rescaled_requires_tags() {
        let g = two_player(1.0, 1.0);
        assert!(matches!(Integrands::rescaled(&g), Err(Error::NotSeparable)));
    }

    #[test]
    fn rescaled_unit_tags_collapse_to_potential() {
        let mut g = two_player(1.0, 1.0);
        g.weights = InteractionWeights::separable(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let r = Integrands::rescaled(&g).unwrap();
        assert_eq!(r, Integrands::potential(&g));
    }

    #[test]
    fn rescaled_table_pair_coefficient() {
        let mut g = two_player(0.0, 0.0);
        g.weights = InteractionWeights::separable(vec![0.115, 2.353], vec![10.0, 0.5]).unwrap();
        let r = Integrands::rescaled(&g).unwrap();
        assert_eq!(r.pairs, vec![(0, 1, 5.0)]);
        assert!((r.running[0] - 86.956_521_739_130_43).abs() < 1e-12);
    }

    #[test]
    fn separable_weights_are_exact_products() {
        let w = InteractionWeights::separable(vec![0.5, 2.0, 3.0], vec![1.0, 0.25, 4.0]).unwrap();
        let (g, t) = w.tags().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.get(i, j), g[i] * t[j]);
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut g = two_player(1.0, 1.0);
        g.horizon = 0.0;
        assert!(g.validate().is_err());
        let mut g = two_player(1.0, 1.0);
        g.initial_states.pop();
        assert!(g.validate().is_err());
        assert!(InteractionWeights::from_rows(vec![vec![0.0, -1.0], vec![0.0, 0.0]]).is_err());
        assert!(InteractionWeights::separable(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut g = two_player(0.3, 0.1);
        g.kernel = Kernel::InverseQuadratic { scale: 9.0 };
        let s = serde_json::to_string(&g).unwrap();
        let back: GameSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn kernel_is_even(z in prop::collection::vec(-5.0f64..5.0, 1..4), beta in 0.0f64..=1.0) {
            let k = Kernel::scaled_radial(beta, 10, z.len());
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            prop_assert_eq!(k.eval(&z), k.eval(&neg));
            let v = k.eval(&z);
            prop_assert!((0.0..=k.sup_norm()).contains(&v));
            let q = Kernel::InverseQuadratic { scale: 3.0 };
            prop_assert_eq!(q.eval(&z), q.eval(&neg));
        }

        #[test]
        fn alpha_bound_transpose_invariant(
            entries in prop::collection::vec(0.0f64..3.0, 16),
            horizon in 0.1f64..4.0,
        ) {
            let rows: Vec<Vec<f64>> = entries.chunks(4).map(<[f64]>::to_vec).collect();
            let mut g = two_player(0.0, 0.0);
            g.n_players = 4;
            g.horizon = horizon;
            g.weights = InteractionWeights::from_rows(rows).unwrap();
            let a = alpha_bound(&g);
            prop_assert!(a >= 0.0);
            let mut gt = g.clone();
            gt.weights = g.weights.transposed();
            prop_assert_eq!(a, alpha_bound(&gt));
            prop_assert_eq!(alpha_bound(&g.symmetrized()), 0.0);
        }

        #[test]
        fn obstacle_decreases_along_rays(r in 0.0f64..2.0, dr in 1e-3f64..0.5, angle in 0.0f64..6.3) {
            let o = ObstacleCost::centered(4.0, 2);
            let (s, c) = angle.sin_cos();
            let h1 = o.eval(&[r * c, r * s]);
            let h2 = o.eval(&[(r + dr) * c, (r + dr) * s]);
            prop_assert!(h2 <= h1);
            prop_assert!(h1 > 0.0 && h1 < 1000.0);
        }
    }
}
