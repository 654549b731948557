//! Reverse-mode differentiation over the unrolled dynamics.
//!
//! A [`Tape`] records vector-valued primitives (affine layers, `tanh`,
//! Euler steps, squared distances, kernel and obstacle costs, linear
//! combinations) into a flat value arena. Parameters are read from a
//! borrowed `θ` and receive their adjoints in [`Tape::backward`].
//!
//! Noise increments enter as constant leaves, so the gradient is the
//! pathwise derivative of the fixed-noise discrete objective.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::game_model::sigmoid;
use crate::policy::affine_forward;
use crate::{Error, Result};

/// Handle to a contiguous block of values on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    off: usize,
    len: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len
    }
}

/// Adjoint rule for a custom primitive: given the input values, the output
/// value and the output adjoint, return one adjoint contribution per input.
pub type AdjointRule = Arc<dyn Fn(&[&[f64]], &[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

#[derive(Clone, Debug)]
enum Op {
    /// `y = W x + b` with `W`, `b` read from the parameter vector.
    Affine {
        x: Var,
        y: Var,
        weight: usize,
        bias: usize,
    },
    Tanh {
        x: Var,
        y: Var,
    },
    Concat {
        parts: Vec<Var>,
        y: Var,
    },
    Slice {
        x: Var,
        start: usize,
        y: Var,
    },
    /// One Euler–Maruyama step; `noise` is the constant `ΔW` leaf and its
    /// diffusion coefficient.
    EulerStep {
        state: Var,
        action: Var,
        noise: Option<(Var, f64)>,
        dt: f64,
        accel: bool,
        y: Var,
    },
    /// `y = |x − c|²`.
    SquaredDistance {
        x: Var,
        center: Var,
        y: Var,
    },
    /// `y = 1 / (q |a − b|² + 1)`.
    Kernel {
        a: Var,
        b: Var,
        q: f64,
        y: Var,
    },
    /// `y = A σ(s (1 − M |x − c|²))`.
    Obstacle {
        x: Var,
        center: Var,
        amplitude: f64,
        sharpness: f64,
        curvature: f64,
        y: Var,
    },
    /// `y = Σ c_k x_k` over scalars.
    LinComb {
        terms: Vec<(Var, f64)>,
        y: Var,
    },
    Custom {
        name: String,
        inputs: Vec<Var>,
        y: Var,
    },
}

impl Op {
    fn output(&self) -> Var {
        match self {
            Op::Affine { y, .. }
            | Op::Tanh { y, .. }
            | Op::Concat { y, .. }
            | Op::Slice { y, .. }
            | Op::EulerStep { y, .. }
            | Op::SquaredDistance { y, .. }
            | Op::Kernel { y, .. }
            | Op::Obstacle { y, .. }
            | Op::LinComb { y, .. }
            | Op::Custom { y, .. } => *y,
        }
    }
}

/// Recorded computation with primal values.
pub struct Tape<'p> {
    params: &'p [f64],
    values: Vec<f64>,
    ops: Vec<Op>,
    leaves: Vec<Var>,
    rules: HashMap<String, AdjointRule>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
            leaves: Vec::new(),
            rules: HashMap::new(),
        }
    }

    pub fn params(&self) -> &[f64] {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.range()]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len, 1);
        self.values[v.off]
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    fn alloc(&mut self, len: usize) -> Var {
        let off = self.values.len();
        self.values.resize(off + len, 0.0);
        Var { off, len }
    }

    fn push(&mut self, op: Op) -> Var {
        let y = op.output();
        exec(&op, &mut self.values, self.params);
        self.ops.push(op);
        y
    }

    /// Constant leaf (no adjoint flows out of it).
    pub fn constant(&mut self, data: &[f64]) -> Var {
        let v = self.alloc(data.len());
        self.values[v.range()].copy_from_slice(data);
        self.leaves.push(v);
        v
    }

    /// Affine layer reading `W` (row-major, `out × x.len()`) at `weight` and
    /// `b` at `bias` in the parameter vector.
    pub fn affine(&mut self, x: Var, weight: usize, bias: usize, out: usize) -> Var {
        let y = self.alloc(out);
        self.push(Op::Affine { x, y, weight, bias })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.alloc(x.len);
        self.push(Op::Tanh { x, y })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let y = self.alloc(parts.iter().map(|p| p.len).sum());
        self.push(Op::Concat {
            parts: parts.to_vec(),
            y,
        })
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= x.len, "slice out of range");
        let y = self.alloc(len);
        self.push(Op::Slice { x, start, y })
    }

    /// Euler–Maruyama step. Under velocity control the state advances by
    /// `dt · action`; under acceleration control the state is `(x, v)` and
    /// advances as `x + dt v`, `v + dt a + σ ΔW`.
    pub fn euler_step(
        &mut self,
        state: Var,
        action: Var,
        noise: Option<(Var, f64)>,
        dt: f64,
        accel: bool,
    ) -> Var {
        let y = self.alloc(state.len);
        self.push(Op::EulerStep {
            state,
            action,
            noise,
            dt,
            accel,
            y,
        })
    }

    pub fn squared_distance(&mut self, x: Var, center: Var) -> Var {
        assert_eq!(x.len, center.len);
        let y = self.alloc(1);
        self.push(Op::SquaredDistance { x, center, y })
    }

    /// `1 / (q |a − b|² + 1)`.
    pub fn kernel(&mut self, a: Var, b: Var, q: f64) -> Var {
        assert_eq!(a.len, b.len);
        let y = self.alloc(1);
        self.push(Op::Kernel { a, b, q, y })
    }

    pub fn obstacle(
        &mut self,
        x: Var,
        center: Var,
        amplitude: f64,
        sharpness: f64,
        curvature: f64,
    ) -> Var {
        let y = self.alloc(1);
        self.push(Op::Obstacle {
            x,
            center,
            amplitude,
            sharpness,
            curvature,
            y,
        })
    }

    pub fn lin_comb(&mut self, terms: Vec<(Var, f64)>) -> Var {
        debug_assert!(terms.iter().all(|(v, _)| v.len == 1));
        let y = self.alloc(1);
        self.push(Op::LinComb { terms, y })
    }

    /// Records a primitive computed outside the tape. Its adjoint must be
    /// supplied through [`Tape::register_adjoint`] before
    /// [`Tape::backward`] reaches it.
    pub fn custom(&mut self, name: &str, inputs: &[Var], value: &[f64]) -> Var {
        let y = self.alloc(value.len());
        self.values[y.range()].copy_from_slice(value);
        self.ops.push(Op::Custom {
            name: name.to_string(),
            inputs: inputs.to_vec(),
            y,
        });
        y
    }

    pub fn register_adjoint(&mut self, name: &str, rule: AdjointRule) {
        self.rules.insert(name.to_string(), rule);
    }

    /// Recomputes every non-leaf value from the leaves and parameters.
    /// Custom primitives keep their recorded outputs.
    pub fn replay(&self) -> Vec<f64> {
        let mut vals = vec![0.0; self.values.len()];
        for l in &self.leaves {
            vals[l.range()].copy_from_slice(&self.values[l.range()]);
        }
        for op in &self.ops {
            match op {
                Op::Custom { y, .. } => {
                    vals[y.range()].copy_from_slice(&self.values[y.range()]);
                }
                _ => exec(op, &mut vals, self.params),
            }
        }
        vals
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Gradient of the scalar `output` with respect to the parameters.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>> {
        assert_eq!(output.len, 1, "backward needs a scalar output");
        let mut adj = vec![0.0; self.values.len()];
        let mut pgrad = vec![0.0; self.params.len()];
        adj[output.off] = 1.0;
        let vals = &self.values;
        for op in self.ops.iter().rev() {
            let y = op.output();
            if y.off > output.off {
                continue;
            }
            // inputs always precede outputs in the arena
            let (lo, hi) = adj.split_at_mut(y.off);
            let ybar = &hi[..y.len];
            if ybar.iter().all(|&g| g == 0.0) {
                continue;
            }
            match op {
                Op::Affine {
                    x, weight, bias, ..
                } => {
                    let cols = x.len;
                    let xv = &vals[x.range()];
                    let xbar = &mut lo[x.range()];
                    for (r, &g) in ybar.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let w = &self.params[weight + r * cols..weight + (r + 1) * cols];
                        let wg = &mut pgrad[weight + r * cols..weight + (r + 1) * cols];
                        for c in 0..cols {
                            xbar[c] += w[c] * g;
                            wg[c] += g * xv[c];
                        }
                        pgrad[bias + r] += g;
                    }
                }
                Op::Tanh { x, .. } => {
                    let yv = &vals[y.range()];
                    for (k, xb) in lo[x.range()].iter_mut().enumerate() {
                        *xb += ybar[k] * (1.0 - yv[k] * yv[k]);
                    }
                }
                Op::Concat { parts, .. } => {
                    let mut k = 0;
                    for p in parts {
                        for xb in &mut lo[p.range()] {
                            *xb += ybar[k];
                            k += 1;
                        }
                    }
                }
                Op::Slice { x, start, .. } => {
                    let base = x.off + start;
                    for (k, &g) in ybar.iter().enumerate() {
                        lo[base + k] += g;
                    }
                }
                Op::EulerStep {
                    state,
                    action,
                    dt,
                    accel,
                    ..
                } => {
                    if *accel {
                        let d = action.len;
                        for k in 0..d {
                            let gp = ybar[k];
                            let gv = ybar[d + k];
                            lo[state.off + k] += gp;
                            lo[state.off + d + k] += dt * gp + gv;
                            lo[action.off + k] += dt * gv;
                        }
                    } else {
                        for (k, &g) in ybar.iter().enumerate() {
                            lo[state.off + k] += g;
                            lo[action.off + k] += dt * g;
                        }
                    }
                }
                Op::SquaredDistance { x, center, .. } => {
                    let g = ybar[0];
                    for k in 0..x.len {
                        let diff = 2.0 * (vals[x.off + k] - vals[center.off + k]) * g;
                        lo[x.off + k] += diff;
                        lo[center.off + k] -= diff;
                    }
                }
                Op::Kernel { a, b, q, .. } => {
                    let kv = vals[y.off];
                    let scale = -2.0 * q * kv * kv * ybar[0];
                    for k in 0..a.len {
                        let diff = scale * (vals[a.off + k] - vals[b.off + k]);
                        lo[a.off + k] += diff;
                        lo[b.off + k] -= diff;
                    }
                }
                Op::Obstacle {
                    x,
                    center,
                    amplitude,
                    sharpness,
                    curvature,
                    ..
                } => {
                    let r2 = sq_dist(&vals[x.range()], &vals[center.range()]);
                    let s = sigmoid(sharpness * (1.0 - curvature * r2));
                    let dh = -amplitude * sharpness * curvature * s * (1.0 - s);
                    let scale = 2.0 * dh * ybar[0];
                    for k in 0..x.len {
                        let diff = scale * (vals[x.off + k] - vals[center.off + k]);
                        lo[x.off + k] += diff;
                        lo[center.off + k] -= diff;
                    }
                }
                Op::LinComb { terms, .. } => {
                    let g = ybar[0];
                    for (v, c) in terms {
                        lo[v.off] += c * g;
                    }
                }
                Op::Custom { name, inputs, .. } => {
                    let rule = self
                        .rules
                        .get(name)
                        .ok_or_else(|| Error::UnregisteredPrimitive(name.clone()))?;
                    let ins: Vec<&[f64]> = inputs.iter().map(|v| &vals[v.range()]).collect();
                    let contrib = rule(&ins, &vals[y.range()], ybar);
                    for (v, c) in inputs.iter().zip(contrib) {
                        for (xb, g) in lo[v.range()].iter_mut().zip(c) {
                            *xb += g;
                        }
                    }
                }
            }
        }
        Ok(pgrad)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Primal evaluation of one op into its output slot.
fn exec(op: &Op, vals: &mut [f64], params: &[f64]) {
    let y = op.output();
    let (inp, rest) = vals.split_at_mut(y.off);
    let out = &mut rest[..y.len];
    match op {
        Op::Affine {
            x, weight, bias, ..
        } => {
            let cols = x.len;
            affine_forward(
                &params[*weight..weight + cols * y.len],
                &params[*bias..bias + y.len],
                &inp[x.range()],
                out,
            );
        }
        Op::Tanh { x, .. } => {
            for (o, v) in out.iter_mut().zip(&inp[x.range()]) {
                *o = v.tanh();
            }
        }
        Op::Concat { parts, .. } => {
            let mut k = 0;
            for p in parts {
                out[k..k + p.len].copy_from_slice(&inp[p.range()]);
                k += p.len;
            }
        }
        Op::Slice { x, start, .. } => {
            out.copy_from_slice(&inp[x.off + start..x.off + start + y.len]);
        }
        Op::EulerStep {
            state,
            action,
            noise,
            dt,
            accel,
            ..
        } => {
            let s = &inp[state.range()];
            let a = &inp[action.range()];
            if *accel {
                let d = action.len;
                for k in 0..d {
                    out[k] = s[k] + dt * s[d + k];
                    out[d + k] = s[d + k] + dt * a[k];
                }
                if let Some((w, sigma)) = noise {
                    for k in 0..d {
                        out[d + k] += sigma * inp[w.off + k];
                    }
                }
            } else {
                for k in 0..state.len {
                    out[k] = s[k] + dt * a[k];
                }
                if let Some((w, sigma)) = noise {
                    for k in 0..state.len {
                        out[k] += sigma * inp[w.off + k];
                    }
                }
            }
        }
        Op::SquaredDistance { x, center, .. } => {
            out[0] = sq_dist(&inp[x.range()], &inp[center.range()]);
        }
        Op::Kernel { a, b, q, .. } => {
            out[0] = 1.0 / (q * sq_dist(&inp[a.range()], &inp[b.range()]) + 1.0);
        }
        Op::Obstacle {
            x,
            center,
            amplitude,
            sharpness,
            curvature,
            ..
        } => {
            let r2 = sq_dist(&inp[x.range()], &inp[center.range()]);
            out[0] = amplitude * sigmoid(sharpness * (1.0 - curvature * r2));
        }
        Op::LinComb { terms, .. } => {
            let mut acc = 0.0;
            for (v, c) in terms {
                acc += c * inp[v.off];
            }
            out[0] = acc;
        }
        Op::Custom { .. } => {}
    }
}

/// Value of a recorded objective (no backward pass).
pub fn evaluate<F>(params: &[f64], rollout_fn: F) -> Result<f64>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let out = rollout_fn(&mut tape)?;
    Ok(tape.scalar(out))
}

/// Value and parameter gradient of a recorded objective.
pub fn grad<F>(params: &[f64], rollout_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let out = rollout_fn(&mut tape)?;
    let g = tape.backward(out)?;
    Ok((tape.scalar(out), g))
}

/// Sample mean of `samples` independent recordings. One tape per sample;
/// samples may run on any number of workers and are reduced in index order,
/// so the result does not depend on the worker count.
pub fn grad_mean<F>(params: &[f64], samples: usize, rollout_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, usize) -> Result<Var> + Sync,
{
    let per: Vec<(f64, Vec<f64>)> = (0..samples)
        .into_par_iter()
        .map(|m| grad(params, |t| rollout_fn(t, m)))
        .collect::<Result<_>>()?;
    let scale = 1.0 / samples as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; params.len()];
    for (v, gm) in &per {
        value += v;
        for (a, b) in g.iter_mut().zip(gm) {
            *a += b;
        }
    }
    g.iter_mut().for_each(|v| *v *= scale);
    Ok((value * scale, g))
}

/// Sample mean of the recorded values, same reduction order as [`grad_mean`].
pub fn evaluate_mean<F>(params: &[f64], samples: usize, rollout_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape, usize) -> Result<Var> + Sync,
{
    let per: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|m| evaluate(params, |t| rollout_fn(t, m)))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() * (1.0 / samples as f64))
}

/// Central differences `(f(θ + h e_k) − f(θ − h e_k)) / 2h` on `coords`.
/// The objective must hold its noise fixed across calls.
pub fn finite_diff<F>(params: &[f64], objective: F, coords: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    coords
        .par_iter()
        .map(|&k| {
            let mut p = params.to_vec();
            p[k] = params[k] + step;
            let up = objective(&p)?;
            p[k] = params[k] - step;
            let down = objective(&p)?;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}
