//! Smooth surrogates for min/max and the trainable smoothing parameters.
//!
//! Conjunctive structure is approximated by `softmin`, an
//! under-approximation of the minimum controlled by a sharpness parameter
//! `eta > 1`. Disjunctive structure is approximated by a learnable convex
//! combination whose weights come from free parameters `beta`, in one of
//! two forms: normalized squares or softmax.
//!
//! The trainable tuple [`SmoothParams`] holds `lambda` (with
//! `eta = lambda^2 + 1`, so `eta` never drops below 1) and one `beta`
//! vector per disjunctive node of the bound formula.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stl::{NodeId, StlAst};
use crate::tape::{Scalar, Tape};

/// Which convex-combination form the disjunctive weights use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WtAvgForm {
    /// Weights `beta_i^2 / sum_j beta_j^2`.
    Squared,
    /// Weights `exp(beta_i) / sum_j exp(beta_j)`.
    Softmax,
}

/// Smooth under-approximation of the minimum:
/// `-(1/eta) * ln(sum_i exp(-eta * v_i))`.
///
/// Computed with a max-shift so the exponent never overflows; the shifted
/// form is analytically identical. Requires `eta >= 1` (callers construct
/// `eta` via `lambda^2 + 1`, which never drops below 1).
pub fn softmin<'t>(values: &[Scalar<'t>], eta: Scalar<'t>) -> Result<Scalar<'t>> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    debug_assert!(eta.value() >= 1.0, "softmin sharpness must be at least 1");
    let shift = values
        .iter()
        .map(|v| v.value())
        .fold(f64::INFINITY, f64::min);
    let tape = values[0].tape();
    let shift = tape.constant(shift);
    let mut sum = (-(eta * (values[0] - shift))).exp();
    for v in &values[1..] {
        sum = sum + (-(eta * (*v - shift))).exp();
    }
    // each term is exp(-eta*(v - min v)) <= 1 and the minimizer contributes
    // exactly 1, so the sum lies in [1, k] and the log is safe
    Ok(shift - sum.try_ln()? / eta)
}

/// Convex combination of `values` with weights derived from `betas`.
///
/// Both forms produce weights that are non-negative and sum to one, so the
/// result always lies between the minimum and maximum of `values`.
pub fn weighted_average<'t>(
    values: &[Scalar<'t>],
    betas: &[Scalar<'t>],
    form: WtAvgForm,
) -> Result<Scalar<'t>> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    if values.len() != betas.len() {
        return Err(Error::Dimension(format!(
            "weighted average over {} values with {} weights",
            values.len(),
            betas.len()
        )));
    }
    match form {
        WtAvgForm::Squared => {
            let mut squares = Vec::with_capacity(betas.len());
            for b in betas {
                squares.push(*b * *b);
            }
            let mut total = squares[0];
            for s in &squares[1..] {
                total = total + *s;
            }
            if total.value() == 0.0 {
                return Err(Error::DegenerateWeights);
            }
            let mut acc = squares[0] / total * values[0];
            for i in 1..values.len() {
                acc = acc + squares[i] / total * values[i];
            }
            Ok(acc)
        }
        WtAvgForm::Softmax => {
            let shift = betas
                .iter()
                .map(|b| b.value())
                .fold(f64::NEG_INFINITY, f64::max);
            let tape = values[0].tape();
            let shift = tape.constant(shift);
            let mut exps = Vec::with_capacity(betas.len());
            for b in betas {
                exps.push((*b - shift).exp());
            }
            let mut total = exps[0];
            for e in &exps[1..] {
                total = total + *e;
            }
            let mut acc = exps[0] / total * values[0];
            for i in 1..values.len() {
                acc = acc + exps[i] / total * values[i];
            }
            Ok(acc)
        }
    }
}

/// How `init` seeds the smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `lambda = 1` and uniform weights (all betas at the form's neutral
    /// value).
    Uniform,
    /// Uniform weights plus a seeded perturbation of each beta in
    /// `[-amplitude, amplitude]`.
    Jitter { amplitude: f64 },
}

/// Trainable smoothing parameters bound to one formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothParams {
    pub lambda: f64,
    pub betas: BTreeMap<NodeId, Vec<f64>>,
    pub form: WtAvgForm,
}

impl SmoothParams {
    /// Initializes smoothing parameters for every disjunctive node of
    /// `phi`. Deterministic for a given `(scheme, seed)`.
    pub fn init(phi: &StlAst, form: WtAvgForm, scheme: InitScheme, seed: u64) -> SmoothParams {
        let neutral = match form {
            WtAvgForm::Squared => 1.0,
            WtAvgForm::Softmax => 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut betas = BTreeMap::new();
        for node in phi.disjunctive_nodes() {
            let mut vec = vec![neutral; node.beta_len];
            if let InitScheme::Jitter { amplitude } = scheme {
                for v in &mut vec {
                    *v += rng.gen_range(-amplitude..=amplitude);
                }
            }
            betas.insert(node.node_id, vec);
        }
        SmoothParams {
            lambda: 1.0,
            betas,
            form,
        }
    }

    /// Sharpness of the conjunctive softmin, always greater than 1.
    pub fn eta(&self) -> f64 {
        self.lambda * self.lambda + 1.0
    }

    /// Checks that the beta vectors cover exactly the disjunctive nodes of
    /// `phi` with the right lengths.
    pub fn validate(&self, phi: &StlAst) -> Result<()> {
        let nodes = phi.disjunctive_nodes();
        if nodes.len() != self.betas.len() {
            return Err(Error::Config(format!(
                "smoothing parameters cover {} nodes but the formula has {}",
                self.betas.len(),
                nodes.len()
            )));
        }
        for node in nodes {
            match self.betas.get(&node.node_id) {
                None => return Err(Error::UnboundNode(node.node_id)),
                Some(v) if v.len() != node.beta_len => {
                    return Err(Error::BetaLength {
                        node: node.node_id,
                        got: v.len(),
                        expected: node.beta_len,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Number of trainable values (`lambda` plus all betas).
    pub fn param_count(&self) -> usize {
        1 + self.betas.values().map(Vec::len).sum::<usize>()
    }

    /// Flattens to `[lambda, betas in ascending node-id order]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.push(self.lambda);
        for vec in self.betas.values() {
            out.extend_from_slice(vec);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        self.lambda = flat[0];
        let mut at = 1;
        for vec in self.betas.values_mut() {
            let n = vec.len();
            vec.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    /// Records every smoothing parameter as a tape input, in flatten
    /// order, for differentiation.
    pub fn lift<'t>(&self, tape: &'t Tape) -> ZetaNodes<'t> {
        let lambda = tape.input(self.lambda);
        let eta = lambda * lambda + 1.0;
        debug_assert!(eta.value() >= 1.0 && eta.value().is_finite());
        let mut order = vec![lambda];
        let mut betas = BTreeMap::new();
        for (id, vec) in &self.betas {
            let scalars: Vec<Scalar<'t>> = vec.iter().map(|&v| tape.input(v)).collect();
            order.extend_from_slice(&scalars);
            betas.insert(*id, scalars);
        }
        ZetaNodes {
            eta,
            betas,
            form: self.form,
            order,
        }
    }

    /// Builds the symbolic view over an existing slice of tape scalars in
    /// [`flatten`](Self::flatten) order.
    pub fn lift_from_inputs<'t>(&self, inputs: &[Scalar<'t>]) -> ZetaNodes<'t> {
        assert_eq!(inputs.len(), self.param_count(), "flat parameter length");
        let lambda = inputs[0];
        let eta = lambda * lambda + 1.0;
        let mut betas = BTreeMap::new();
        let mut at = 1;
        for (id, vec) in &self.betas {
            betas.insert(*id, inputs[at..at + vec.len()].to_vec());
            at += vec.len();
        }
        ZetaNodes {
            eta,
            betas,
            form: self.form,
            order: inputs.to_vec(),
        }
    }

    /// Records the smoothing parameters as tape constants (no gradient),
    /// for plain evaluation of the smooth robustness.
    pub fn lift_const<'t>(&self, tape: &'t Tape) -> ZetaNodes<'t> {
        let lambda = tape.constant(self.lambda);
        let eta = lambda * lambda + 1.0;
        let mut betas = BTreeMap::new();
        for (id, vec) in &self.betas {
            betas.insert(
                *id,
                vec.iter().map(|&v| tape.constant(v)).collect::<Vec<_>>(),
            );
        }
        ZetaNodes {
            eta,
            betas,
            form: self.form,
            order: Vec::new(),
        }
    }

    /// Normalized weight vector of each disjunctive node, for reporting
    /// which disjuncts/time steps the trained parameters favor.
    pub fn node_weights(&self) -> BTreeMap<NodeId, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (id, vec) in &self.betas {
            let weights = match self.form {
                WtAvgForm::Squared => {
                    let total: f64 = vec.iter().map(|b| b * b).sum();
                    if total == 0.0 {
                        vec![1.0 / vec.len() as f64; vec.len()]
                    } else {
                        vec.iter().map(|b| b * b / total).collect()
                    }
                }
                WtAvgForm::Softmax => {
                    let shift = vec.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = vec.iter().map(|b| (b - shift).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    exps.iter().map(|e| e / total).collect()
                }
            };
            out.insert(*id, weights);
        }
        out
    }
}

/// Smoothing parameters lifted onto a tape.
pub struct ZetaNodes<'t> {
    pub eta: Scalar<'t>,
    pub betas: BTreeMap<NodeId, Vec<Scalar<'t>>>,
    pub form: WtAvgForm,
    /// Tape inputs in flatten order, empty when lifted as constants.
    pub order: Vec<Scalar<'t>>,
}
