//! Uncertain discrete-time dynamics, initial-set sampling, and closed-loop
//! rollout.
//!
//! Two plants are built in, the unicycle and the quadrotor, with their
//! update equations hand-coded; arbitrary plants can be described by one
//! update expression per state dimension. The step function is generic
//! over [`Real`], so the same code produces plain trajectories and tape
//! graphs for backpropagation through time.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{DomainError, Error, Result};
use crate::expr::{Env, Expr};
use crate::policy::{Policy, PolicyNodes};
use crate::tape::{Real, Scalar, Tape};

/// Update rule of the plant.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsKind {
    Unicycle,
    Quadrotor,
    /// One update expression per state dimension, over state, control, and
    /// uncertainty names.
    Custom(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub uncertainty: Vec<UncertaintyParam>,
}

impl DynamicsSpec {
    /// Planar unicycle with multiplicative model uncertainty
    /// `delta` in `[-0.01, 0.01]`.
    pub fn unicycle() -> DynamicsSpec {
        DynamicsSpec {
            kind: DynamicsKind::Unicycle,
            state_names: vec!["x".into(), "y".into(), "alpha".into()],
            control_names: vec!["v".into(), "omega".into()],
            uncertainty: vec![UncertaintyParam {
                name: "delta".into(),
                lo: -0.01,
                hi: 0.01,
            }],
        }
    }

    /// Quadrotor position/velocity model, zero-order-hold discretized at
    /// 0.05 s, with multiplicative uncertainty `delta` in `[-0.01, 0.01]`.
    pub fn quadrotor() -> DynamicsSpec {
        DynamicsSpec {
            kind: DynamicsKind::Quadrotor,
            state_names: vec![
                "x".into(),
                "y".into(),
                "z".into(),
                "vx".into(),
                "vy".into(),
                "vz".into(),
            ],
            control_names: vec!["u1".into(), "u2".into(), "u3".into()],
            uncertainty: vec![UncertaintyParam {
                name: "delta".into(),
                lo: -0.01,
                hi: 0.01,
            }],
        }
    }

    /// Builds a custom plant, checking that every update expression only
    /// references declared names.
    pub fn custom(
        state_names: Vec<String>,
        control_names: Vec<String>,
        uncertainty: Vec<UncertaintyParam>,
        updates: Vec<Expr>,
    ) -> Result<DynamicsSpec> {
        if updates.len() != state_names.len() {
            return Err(Error::Dimension(format!(
                "{} update expressions for {} states",
                updates.len(),
                state_names.len()
            )));
        }
        for update in &updates {
            for var in update.variables() {
                let known = state_names.iter().any(|n| n == var)
                    || control_names.iter().any(|n| n == var)
                    || uncertainty.iter().any(|u| u.name == var);
                if !known {
                    return Err(Error::UnknownVariable {
                        name: var.to_string(),
                        position: 0,
                    });
                }
            }
        }
        Ok(DynamicsSpec {
            kind: DynamicsKind::Custom(updates),
            state_names,
            control_names,
            uncertainty,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_names.len()
    }

    /// One simulation step `x' = f(x, u; delta)`.
    pub fn step<R: Real>(
        &self,
        x: &[R],
        u: &[R],
        delta: &[R],
        lift: &impl Fn(f64) -> R,
    ) -> Result<Vec<R>> {
        if x.len() != self.state_dim() || u.len() != self.control_dim() {
            return Err(Error::Dimension(format!(
                "step called with {} states and {} controls, expected {} and {}",
                x.len(),
                u.len(),
                self.state_dim(),
                self.control_dim()
            )));
        }
        if delta.len() != self.uncertainty.len() {
            return Err(Error::Dimension(
                "uncertainty vector length mismatch".into(),
            ));
        }
        match &self.kind {
            DynamicsKind::Unicycle => Ok(unicycle_step(x, u, delta[0], lift)),
            DynamicsKind::Quadrotor => quadrotor_step(x, u, delta[0], lift),
            DynamicsKind::Custom(updates) => {
                let mut env = Env::with_capacity(x.len() + u.len() + delta.len());
                for (name, value) in self.state_names.iter().zip(x) {
                    env.bind(name, *value);
                }
                for (name, value) in self.control_names.iter().zip(u) {
                    env.bind(name, *value);
                }
                for (param, value) in self.uncertainty.iter().zip(delta) {
                    env.bind(&param.name, *value);
                }
                updates
                    .iter()
                    .map(|e| e.eval_in(&env, lift))
                    .collect::<Result<Vec<R>>>()
            }
        }
    }
}

/// Turn-rate magnitude below which the unicycle update switches to its
/// straight-line limit; the division by `omega` is ill-conditioned there.
const OMEGA_EPS: f64 = 1e-6;

fn unicycle_step<R: Real>(x: &[R], u: &[R], delta: R, lift: &impl Fn(f64) -> R) -> Vec<R> {
    let (px, py, alpha) = (x[0], x[1], x[2]);
    let (v, omega) = (u[0], u[1]);
    let growth = lift(1.0) + delta;
    if omega.value().abs() < OMEGA_EPS {
        // limit omega -> 0: the arc degenerates to a straight segment
        vec![
            growth * px + v * alpha.cos(),
            growth * py + v * alpha.sin(),
            growth * alpha + omega,
        ]
    } else {
        let turned = alpha + omega;
        vec![
            growth * px + v * (turned.sin() - alpha.sin()) / omega,
            growth * py + v * (alpha.cos() - turned.cos()) / omega,
            growth * alpha + omega,
        ]
    }
}

const GRAVITY: f64 = 9.81;
const QUAD_DT: f64 = 0.05;
/// `g * dt`: the tan() gain of the discretized tilt channels.
const QUAD_TAN_GAIN: f64 = 0.4905;

fn quadrotor_step<R: Real>(x: &[R], u: &[R], delta: R, lift: &impl Fn(f64) -> R) -> Result<Vec<R>> {
    // tilt inputs are squashed into (-0.1, 0.1); anything approaching the
    // tan() pole indicates a broken caller
    if u[0].value().abs() >= 1.0 || u[1].value().abs() >= 1.0 {
        return Err(DomainError::TanOutOfRange.into());
    }
    let growth = lift(1.0) + delta;
    let (px, py, pz, vx, vy, vz) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    Ok(vec![
        growth * px + lift(QUAD_DT) * vx,
        growth * py + lift(QUAD_DT) * vy,
        growth * pz + lift(QUAD_DT) * vz,
        growth * vx + lift(QUAD_TAN_GAIN) * u[0].tan(),
        growth * vy - lift(QUAD_TAN_GAIN) * u[1].tan(),
        growth * vz + lift(QUAD_DT) * (lift(GRAVITY) - u[2]),
    ])
}

/// Initial-state set.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl InitSet {
    pub fn dim(&self) -> usize {
        match self {
            InitSet::Box { lo, .. } => lo.len(),
            InitSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::Config("box bounds have different lengths".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Config("box has lo > hi".into()));
                }
                Ok(())
            }
            InitSet::Ball { radius, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::Config("ball radius must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Uniform sample from the initial set. Balls are sampled by rejection
/// from the bounding box.
pub fn sample_init(init: &InitSet, rng: &mut impl Rng) -> Vec<f64> {
    match init {
        InitSet::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| if l == h { l } else { rng.gen_range(l..h) })
            .collect(),
        InitSet::Ball { center, radius } => loop {
            let candidate: Vec<f64> = center
                .iter()
                .map(|&c| rng.gen_range(c - radius..c + radius))
                .collect();
            let dist2: f64 = candidate
                .iter()
                .zip(center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            if dist2 <= radius * radius {
                return candidate;
            }
        },
    }
}

/// Uniform sample of the model-family perturbation, one value per declared
/// uncertainty parameter.
pub fn sample_model(dynamics: &DynamicsSpec, rng: &mut impl Rng) -> Vec<f64> {
    dynamics
        .uncertainty
        .iter()
        .map(|p| {
            if p.lo == p.hi {
                p.lo
            } else {
                rng.gen_range(p.lo..p.hi)
            }
        })
        .collect()
}

/// Closed-loop trajectory: states over `0..=H`, the controls that produced
/// them, and the model perturbation in effect.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn x0(&self) -> &[f64] {
        &self.states[0]
    }

    /// Re-simulates and checks the stored step relation exactly.
    pub fn verify(&self, dynamics: &DynamicsSpec) -> Result<bool> {
        let delta = &self.delta;
        for k in 0..self.controls.len() {
            let next = dynamics.step(&self.states[k], &self.controls[k], delta, &|c| c)?;
            if next != self.states[k + 1] {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Writes `k, x_0.., u_0..` rows with 17-significant-digit decimals
    /// (bit-exact on re-read). Control cells are empty on the final row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.states[0].len();
        let m = self.controls.first().map_or(0, Vec::len);
        let mut header = String::from("k");
        for i in 0..n {
            header.push_str(&format!(",x_{i}"));
        }
        for j in 0..m {
            header.push_str(&format!(",u_{j}"));
        }
        writeln!(file, "{header}")?;
        for (k, state) in self.states.iter().enumerate() {
            let mut row = format!("{k}");
            for v in state {
                row.push_str(&format!(",{v:.16e}"));
            }
            if k < self.controls.len() {
                for v in &self.controls[k] {
                    row.push_str(&format!(",{v:.16e}"));
                }
            } else {
                for _ in 0..m {
                    row.push(',');
                }
            }
            writeln!(file, "{row}")?;
        }
        Ok(())
    }

    /// Reads the states written by [`write_csv`](Self::write_csv); control
    /// columns are ignored.
    pub fn read_states_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty trajectory file".into()))?;
        let n = header.split(',').filter(|c| c.starts_with("x_")).count();
        if n == 0 {
            return Err(Error::Config("trajectory header has no state columns".into()));
        }
        let mut states = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < n + 1 {
                return Err(Error::Config(format!(
                    "trajectory row {} has {} cells, expected at least {}",
                    lineno + 2,
                    cells.len(),
                    n + 1
                )));
            }
            let row: std::result::Result<Vec<f64>, _> =
                cells[1..=n].iter().map(|c| c.trim().parse::<f64>()).collect();
            states.push(row.map_err(|_| {
                Error::Config(format!("bad number in trajectory row {}", lineno + 2))
            })?);
        }
        if states.is_empty() {
            return Err(Error::Config("trajectory file has no data rows".into()));
        }
        Ok(states)
    }
}

/// Rolls the closed loop forward `horizon` steps with plain floats.
pub fn rollout(
    dynamics: &DynamicsSpec,
    policy: &Policy,
    x0: &[f64],
    delta: &[f64],
    horizon: usize,
) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(x0.to_vec());
    for k in 0..horizon {
        let u = policy.forward(&states[k], k)?;
        let next = dynamics.step(&states[k], &u, delta, &|c| c)?;
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls,
        delta: delta.to_vec(),
    })
}

/// Symbolic rollout over tape scalars, for backpropagation through time.
/// Initial state and perturbation enter as constants; gradients flow to
/// the lifted policy parameters.
pub fn rollout_symbolic<'t>(
    tape: &'t Tape,
    dynamics: &DynamicsSpec,
    policy: &PolicyNodes<'t>,
    x0: &[f64],
    delta: &[f64],
    horizon: usize,
) -> Result<Vec<Vec<Scalar<'t>>>> {
    if horizon < 1 {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    let lift = |c: f64| tape.constant(c);
    let mut states: Vec<Vec<Scalar<'t>>> = Vec::with_capacity(horizon + 1);
    states.push(x0.iter().map(|&v| tape.constant(v)).collect());
    let delta: Vec<Scalar<'t>> = delta.iter().map(|&v| tape.constant(v)).collect();
    for k in 0..horizon {
        let u = policy.forward(tape, &states[k], k)?;
        let next = dynamics.step(&states[k], &u, &delta, &lift)?;
        states.push(next);
    }
    Ok(states)
}
