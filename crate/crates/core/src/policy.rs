//! Decentralized feed-forward policies `φ_i(t, x_i)`.
//!
//! Every player owns an independent network over the input `(t / T, x_i)`.
//! Layer parameters are stored flat, layer by layer, as a row-major weight
//! matrix followed by its bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game_model::GameSpec;
use crate::{Error, Result};

/// Hidden-layer architecture shared by every player's network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    /// No hidden layers: the policy is affine in `(t / T, x)`.
    pub fn affine() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Offsets of one affine layer inside a player's parameter slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

/// Network layout for one player.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    horizon: f64,
}

impl PolicyNet {
    pub fn new(spec: &GameSpec, arch: &Architecture) -> Self {
        let mut widths = Vec::with_capacity(arch.hidden.len() + 2);
        widths.push(1 + spec.state_dim());
        widths.extend_from_slice(&arch.hidden);
        widths.push(spec.action_dim());
        Self::from_widths(widths, spec.horizon)
    }

    pub fn from_widths(widths: Vec<usize>, horizon: f64) -> Self {
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            layers.push(Layer {
                weight: off,
                bias: off + inputs * outputs,
                inputs,
                outputs,
            });
            off += (inputs + 1) * outputs;
        }
        Self {
            widths,
            layers,
            horizon,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `L_i`, the number of parameters.
    pub fn param_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias + l.outputs)
    }

    /// Network input `(t / T, x)`.
    pub fn input(&self, t: f64, state: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + state.len());
        v.push(t / self.horizon);
        v.extend_from_slice(state);
        v
    }

    /// Action `φ(t, x)`.
    pub fn eval(&self, theta: &[f64], t: f64, state: &[f64]) -> Vec<f64> {
        let mut x = self.input(t, state);
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.outputs];
            affine_forward(
                &theta[l.weight..l.bias],
                &theta[l.bias..l.bias + l.outputs],
                &x,
                &mut y,
            );
            if k != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        x
    }

    /// Product of the induced ∞-norms (maximum absolute row sums) of the
    /// layers, restricted to the state columns of the first layer. Bounds
    /// `|φ(t, x) − φ(t, x')|_∞ / |x − x'|_∞`.
    pub fn lipschitz_bound(&self, theta: &[f64]) -> f64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let skip = usize::from(k == 0);
                (0..l.outputs)
                    .map(|r| {
                        let row = &theta[l.weight + r * l.inputs..l.weight + (r + 1) * l.inputs];
                        row[skip..].iter().map(|w| w.abs()).sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .product()
    }

    /// Scaled-uniform fan-in initialization. Hidden weights and biases are
    /// drawn from `U(±1/√fan_in)`; the output layer is shrunk by 0.1 and has
    /// zero bias so initial actions are close to zero.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_len()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            let shrink = if k == last { 0.1 } else { 1.0 };
            for w in &mut theta[l.weight..l.bias] {
                *w = shrink * rng.random_range(-bound..bound);
            }
            if k != last {
                for b in &mut theta[l.bias..l.bias + l.outputs] {
                    *b = rng.random_range(-bound..bound);
                }
            }
        }
        theta
    }
}

/// `y = W x + b` with `W` row-major of shape `y.len() × x.len()`.
#[inline]
pub(crate) fn affine_forward(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *out = acc;
    }
}

/// Stacked parameters `θ = (θ_1, …, θ_N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    offsets: Vec<usize>,
    flat: Vec<f64>,
}

impl PolicyParams {
    pub fn from_players(players: Vec<Vec<f64>>) -> Self {
        let mut offsets = Vec::with_capacity(players.len() + 1);
        offsets.push(0);
        let mut flat = Vec::new();
        for p in players {
            flat.extend(p);
            offsets.push(flat.len());
        }
        Self { offsets, flat }
    }

    /// Rebuilds from a flat vector with the offsets of `like`.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(Error::Format(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                self.flat.len()
            )));
        }
        Ok(Self {
            offsets: self.offsets.clone(),
            flat,
        })
    }

    pub fn n_players(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.flat[self.range(i)]
    }

    pub fn player_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.range(i);
        &mut self.flat[r]
    }

    pub fn split(&self) -> Vec<Vec<f64>> {
        (0..self.n_players())
            .map(|i| self.player(i).to_vec())
            .collect()
    }
}

/// Reproducible initialization of every player's network. Player `i` draws
/// from ChaCha stream `i` of the seed, so adding players leaves existing
/// players' parameters unchanged.
pub fn init_params(spec: &GameSpec, arch: &Architecture, seed: u64) -> PolicyParams {
    let net = PolicyNet::new(spec, arch);
    let players = (0..spec.n_players)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            net.init(&mut rng)
        })
        .collect();
    PolicyParams::from_players(players)
}

/// `φ_i^{θ_i}(t, x_i)`.
pub fn eval_policy(net: &PolicyNet, theta_i: &[f64], t: f64, state: &[f64]) -> Vec<f64> {
    net.eval(theta_i, t, state)
}

/// Versioned parameter file with an architecture header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub version: u32,
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub params: PolicyParams,
}

impl ParamsFile {
    pub const VERSION: u32 = 1;

    pub fn new(net: &PolicyNet, arch: &Architecture, params: &PolicyParams) -> Self {
        Self {
            version: Self::VERSION,
            architecture: arch.clone(),
            widths: net.widths().to_vec(),
            params: params.clone(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        if f.version != Self::VERSION {
            return Err(Error::Format(format!(
                "unsupported params version {}",
                f.version
            )));
        }
        let per_player = PolicyNet::from_widths(f.widths.clone(), 1.0).param_len();
        if (0..f.params.n_players()).any(|i| f.params.range(i).len() != per_player) {
            return Err(Error::Format("parameter blocks do not match widths".into()));
        }
        Ok(f)
    }
}
