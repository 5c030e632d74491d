//! Parameterized feedback controller: a small fully-connected network with
//! tanh hidden layers and a fixed, non-trainable output squashing stage
//! that maps each raw output into its actuator bounds.
//!
//! Time enters the network as a normalized extra input `t / horizon`
//! appended to the state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smooth::{SmoothParams, WtAvgForm};
use crate::stl::NodeId;
use crate::tape::{Real, Scalar, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquashKind {
    Tanh,
    Sigmoid,
}

/// One output's squashing stage: `u = offset + gain * act(pre_scale * a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Squash {
    pub kind: SquashKind,
    pub pre_scale: f64,
    pub gain: f64,
    pub offset: f64,
}

impl Squash {
    fn apply<R: Real>(&self, a: R, lift: &impl Fn(f64) -> R) -> R {
        let z = lift(self.pre_scale) * a;
        let act = match self.kind {
            SquashKind::Tanh => z.tanh(),
            SquashKind::Sigmoid => z.sigmoid(),
        };
        lift(self.offset) + lift(self.gain) * act
    }

    /// Open interval the squashed output is confined to.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            SquashKind::Tanh => (self.offset - self.gain.abs(), self.offset + self.gain.abs()),
            SquashKind::Sigmoid => {
                let a = self.offset;
                let b = self.offset + self.gain;
                (a.min(b), a.max(b))
            }
        }
    }
}

/// Controller weights plus the fixed squashing stage.
///
/// `layer_dims` lists the width of every layer including input and output,
/// e.g. `[4, 5, 2, 2]`. Weight matrices are stored row-major
/// (`weights[layer][out * in_dim + in]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    pub squash: Vec<Squash>,
    pub horizon: usize,
}

impl Policy {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(layer_dims: &[usize], squash: Vec<Squash>, horizon: usize, seed: u64) -> Policy {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        assert_eq!(
            *layer_dims.last().unwrap(),
            squash.len(),
            "one squash descriptor per output"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Policy {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            squash,
            horizon,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.layer_dims[0] - 1
    }

    pub fn control_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total number of trainable values.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|p| (p[0] + 1) * p[1])
            .sum()
    }

    /// Flattens parameters layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`params`](Self::params).
    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let wn = w.len();
            w.copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = b.len();
            b.copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
    }

    /// Control action for state `x` at step `t`.
    pub fn forward(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        forward_in(
            &self.layer_dims,
            &self.weights,
            &self.biases,
            &self.squash,
            self.horizon,
            x,
            t,
            &|c| c,
        )
    }

    /// Builds the symbolic view over an existing slice of tape scalars in
    /// [`params`](Self::params) order, e.g. for finite-difference checks
    /// over the parameter vector.
    pub fn lift_from_inputs<'t>(&self, inputs: &[Scalar<'t>]) -> PolicyNodes<'t> {
        assert_eq!(inputs.len(), self.param_count(), "parameter vector length");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut at = 0;
        for pair in self.layer_dims.windows(2) {
            let w_len = pair[0] * pair[1];
            weights.push(inputs[at..at + w_len].to_vec());
            at += w_len;
            biases.push(inputs[at..at + pair[1]].to_vec());
            at += pair[1];
        }
        PolicyNodes {
            layer_dims: self.layer_dims.clone(),
            weights,
            biases,
            squash: self.squash.clone(),
            horizon: self.horizon,
            order: inputs.to_vec(),
        }
    }

    /// Records every parameter as a tape input for differentiation.
    pub fn lift<'t>(&self, tape: &'t Tape) -> PolicyNodes<'t> {
        let mut order = Vec::with_capacity(self.param_count());
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let ws: Vec<Scalar<'t>> = w.iter().map(|&v| tape.input(v)).collect();
            let bs: Vec<Scalar<'t>> = b.iter().map(|&v| tape.input(v)).collect();
            order.extend_from_slice(&ws);
            order.extend_from_slice(&bs);
            weights.push(ws);
            biases.push(bs);
        }
        PolicyNodes {
            layer_dims: self.layer_dims.clone(),
            weights,
            biases,
            squash: self.squash.clone(),
            horizon: self.horizon,
            order,
        }
    }
}

/// Policy parameters lifted onto a tape.
pub struct PolicyNodes<'t> {
    pub layer_dims: Vec<usize>,
    weights: Vec<Vec<Scalar<'t>>>,
    biases: Vec<Vec<Scalar<'t>>>,
    squash: Vec<Squash>,
    horizon: usize,
    /// Tape inputs in the same order as [`Policy::params`].
    pub order: Vec<Scalar<'t>>,
}

impl<'t> PolicyNodes<'t> {
    pub fn forward(&self, tape: &'t Tape, x: &[Scalar<'t>], t: usize) -> Result<Vec<Scalar<'t>>> {
        forward_in(
            &self.layer_dims,
            &self.weights,
            &self.biases,
            &self.squash,
            self.horizon,
            x,
            t,
            &|c| tape.constant(c),
        )
    }
}

/// Shared forward pass: affine layers with tanh activations, a linear
/// output layer, then the per-output squash. Written once over [`Real`] so
/// the numeric and symbolic paths are bit-identical.
#[allow(clippy::too_many_arguments)]
fn forward_in<R: Real>(
    dims: &[usize],
    weights: &[Vec<R>],
    biases: &[Vec<R>],
    squash: &[Squash],
    horizon: usize,
    x: &[R],
    t: usize,
    lift: &impl Fn(f64) -> R,
) -> Result<Vec<R>> {
    if x.len() + 1 != dims[0] {
        return Err(Error::Dimension(format!(
            "controller expects {} state inputs, got {}",
            dims[0] - 1,
            x.len()
        )));
    }
    let mut activations: Vec<R> = Vec::with_capacity(dims[0]);
    activations.extend_from_slice(x);
    activations.push(lift(t as f64 / horizon as f64));

    let last = weights.len() - 1;
    for layer in 0..weights.len() {
        let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
        let mut next = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let mut z = biases[layer][o];
            for (i, a) in activations.iter().enumerate() {
                z = z + weights[layer][o * fan_in + i] * *a;
            }
            next.push(if layer < last { z.tanh() } else { z });
        }
        activations = next;
    }

    Ok(activations
        .iter()
        .zip(squash)
        .map(|(a, s)| s.apply(*a, lift))
        .collect())
}

/// Trained-controller snapshot.
///
/// Round-trips bit-exactly: floats are written in shortest round-trip
/// decimal form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub squash: Vec<Squash>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub zeta: ZetaCheckpoint,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaCheckpoint {
    pub lambda: f64,
    pub betas: BTreeMap<NodeId, Vec<f64>>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(policy: &Policy, zeta: &SmoothParams, seed: u64) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            layer_dims: policy.layer_dims.clone(),
            activation: "tanh".to_string(),
            squash: policy.squash.clone(),
            weights: policy.weights.clone(),
            biases: policy.biases.clone(),
            zeta: ZetaCheckpoint {
                lambda: zeta.lambda,
                betas: zeta.betas.clone(),
            },
            horizon: policy.horizon,
            seed,
        }
    }

    /// Reconstructs the policy and smoothing parameters. The weighted
    /// average form is configuration, not part of the snapshot.
    pub fn into_parts(self, form: WtAvgForm) -> Result<(Policy, SmoothParams)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        if self.activation != "tanh" {
            return Err(Error::Config(format!(
                "unsupported activation `{}`",
                self.activation
            )));
        }
        for (pair, w) in self.layer_dims.windows(2).zip(&self.weights) {
            if w.len() != pair[0] * pair[1] {
                return Err(Error::Config("weight matrix shape mismatch".into()));
            }
        }
        if self.biases.len() != self.weights.len()
            || self
                .biases
                .iter()
                .zip(self.layer_dims.windows(2))
                .any(|(b, pair)| b.len() != pair[1])
        {
            return Err(Error::Config("bias vector shape mismatch".into()));
        }
        if self.squash.len() != *self.layer_dims.last().unwrap() {
            return Err(Error::Config("squash descriptor count mismatch".into()));
        }
        let policy = Policy {
            layer_dims: self.layer_dims,
            weights: self.weights,
            biases: self.biases,
            squash: self.squash,
            horizon: self.horizon,
        };
        let zeta = SmoothParams {
            lambda: self.zeta.lambda,
            betas: self.zeta.betas,
            form,
        };
        Ok((policy, zeta))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let json = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// Squash stages used by the built-in plants.
pub mod squashes {
    use super::{Squash, SquashKind};

    /// Speed in (0, 1), turn rate in (-0.5, 0.5).
    pub fn unicycle() -> Vec<Squash> {
        vec![
            Squash {
                kind: SquashKind::Sigmoid,
                pre_scale: 0.5,
                gain: 1.0,
                offset: 0.0,
            },
            Squash {
                kind: SquashKind::Tanh,
                pre_scale: 0.5,
                gain: 0.5,
                offset: 0.0,
            },
        ]
    }

    /// Tilt controls in (-0.1, 0.1), thrust in (7.81, 11.81).
    pub fn quadrotor() -> Vec<Squash> {
        vec![
            Squash {
                kind: SquashKind::Tanh,
                pre_scale: 0.1,
                gain: 0.1,
                offset: 0.0,
            },
            Squash {
                kind: SquashKind::Tanh,
                pre_scale: 0.1,
                gain: 0.1,
                offset: 0.0,
            },
            Squash {
                kind: SquashKind::Tanh,
                pre_scale: 0.1,
                gain: -2.0,
                offset: 9.81,
            },
        ]
    }
}
