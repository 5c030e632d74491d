//! Objectives and the gradient-switching training loop.
//!
//! Each iteration computes, for every initial state in a fixed training
//! batch, the gradient of the discounted performance reward `J` and the
//! gradient of the smooth STL robustness `Gamma` (the latter with respect
//! to both the controller parameters and the smoothing parameters). The
//! batch member with the largest gradient norm supplies each update
//! direction. Three candidate updates are formed (a performance step, a
//! robustness step, and a performance step slowed by `tau`) and a freshly
//! sampled initial state decides which is kept: below the robustness
//! margin `rho` the loop improves robustness (taking the performance step
//! only when it happens not to hurt robustness), above the margin it takes
//! the slow performance step.
//!
//! A Lagrangian baseline mode optimizes `sum_x0 (J + omega * Gamma)` with
//! plain Adam ascent over the same parameter vector, for comparison
//! against the switching scheme.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::plant::{rollout, rollout_symbolic, sample_init, sample_model, DynamicsSpec, InitSet};
use crate::policy::{Policy, PolicyNodes, Squash};
use crate::semantics::{hard_robustness, smooth_robustness, stl2cbf};
use crate::smooth::{InitScheme, SmoothParams, WtAvgForm, ZetaNodes};
use crate::stl::StlAst;
use crate::tape::{backward, Real, Scalar, Tape};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected first/second moments over one gradient stream.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    params: AdamParams,
}

/// A proposed update: the ascent increment plus the moment state it would
/// commit. Keeping these separate lets the caller evaluate candidates
/// before deciding which optimizer advances.
pub struct PendingStep {
    pub delta: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize, params: AdamParams) -> AdamState {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            params,
        }
    }

    /// Computes the ascent increment for `grad` without advancing the
    /// state.
    pub fn preview(&self, grad: &[f64]) -> PendingStep {
        assert_eq!(grad.len(), self.m.len(), "gradient dimension");
        let p = &self.params;
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - p.beta1.powi(t);
        let bc2 = 1.0 - p.beta2.powi(t);
        let mut m = Vec::with_capacity(grad.len());
        let mut v = Vec::with_capacity(grad.len());
        let mut delta = Vec::with_capacity(grad.len());
        for ((g, m_prev), v_prev) in grad.iter().zip(&self.m).zip(&self.v) {
            let mi = p.beta1 * m_prev + (1.0 - p.beta1) * g;
            let vi = p.beta2 * v_prev + (1.0 - p.beta2) * g * g;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            delta.push(p.alpha * m_hat / (v_hat.sqrt() + p.epsilon));
            m.push(mi);
            v.push(vi);
        }
        PendingStep { delta, m, v }
    }

    /// Adopts the moments of a previewed step.
    pub fn commit(&mut self, pending: PendingStep) {
        self.m = pending.m;
        self.v = pending.v;
        self.step += 1;
    }

    /// Preview-and-commit in one call.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        let pending = self.preview(grad);
        let delta = pending.delta.clone();
        self.commit(pending);
        delta
    }
}

/// Discounted state reward along a trajectory:
/// `sum_{k=0..=H} gamma^k q(x_k)`.
pub fn perf_reward<R: Real>(
    states: &[Vec<R>],
    names: &[String],
    reward: &Expr,
    gamma: f64,
    lift: &impl Fn(f64) -> R,
) -> Result<R> {
    let mut discount = 1.0;
    let mut total: Option<R> = None;
    for (k, state) in states.iter().enumerate() {
        let mut env = crate::expr::Env::with_capacity(names.len() + 1);
        for (name, value) in names.iter().zip(state) {
            env.bind(name, *value);
        }
        env.bind("t", lift(k as f64));
        let q = reward.eval_in(&env, lift)?;
        let term = lift(discount) * q;
        total = Some(match total {
            None => term,
            Some(acc) => acc + term,
        });
        discount *= gamma;
    }
    Ok(total.expect("states never empty"))
}

/// Smooth STL robustness of the closed loop from `x0` under the model
/// perturbation `delta`, built on the tape: the policy rollout composed
/// with the formula's smooth-robustness graph. Differentiable with respect
/// to whatever the policy and smoothing nodes were lifted from.
pub fn stl_objective<'t>(
    tape: &'t Tape,
    cfg: &TrainConfig,
    policy: &PolicyNodes<'t>,
    zeta: &ZetaNodes<'t>,
    x0: &[f64],
    delta: &[f64],
) -> Result<Scalar<'t>> {
    let states = rollout_symbolic(tape, &cfg.dynamics, policy, x0, delta, cfg.horizon)?;
    stl2cbf(&cfg.formula, &cfg.dynamics.state_names, &states, zeta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Switching,
    Lagrangian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rho: f64,
    pub tau: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub adam: AdamParams,
    pub seed: u64,
    pub wtavg_form: WtAvgForm,
    pub init_scheme: InitScheme,
    pub reward: Expr,
    pub formula: StlAst,
    pub dynamics: DynamicsSpec,
    pub init_set: InitSet,
    pub layer_dims: Vec<usize>,
    pub squash: Vec<Squash>,
    pub mode: TrainMode,
    /// Multiplier on the robustness term in the Lagrangian baseline.
    pub lagrange_weight: f64,
    /// Keep per-iteration batch gradient norms in the in-memory log.
    pub log_batch_norms: bool,
}

impl TrainConfig {
    /// Structural checks shared by every entry point. Threshold values
    /// like `rho` are policy of the front end, not enforced here, so
    /// degenerate configurations remain usable in tests.
    pub fn validate_structure(&self) -> Result<()> {
        let n = self.dynamics.state_dim();
        let m = self.dynamics.control_dim();
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("controller needs at least two layers".into()));
        }
        if self.layer_dims[0] != n + 1 {
            return Err(Error::Config(format!(
                "controller input width {} but plant has {} states (+1 for time)",
                self.layer_dims[0], n
            )));
        }
        if *self.layer_dims.last().unwrap() != m {
            return Err(Error::Config(format!(
                "controller output width {} but plant has {} controls",
                self.layer_dims.last().unwrap(),
                m
            )));
        }
        if self.squash.len() != m {
            return Err(Error::Config("one squash descriptor per control".into()));
        }
        if self.init_set.dim() != n {
            return Err(Error::Config("initial set dimension mismatch".into()));
        }
        self.init_set.validate()?;
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.formula.time_depth() > self.horizon {
            return Err(Error::HorizonExceeded {
                required: self.formula.time_depth() + 1,
                available: self.horizon + 1,
            });
        }
        if self.tau <= 1.0 {
            return Err(Error::Config("tau must exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        if self.batch_size < 1 || self.iterations < 1 {
            return Err(Error::Config(
                "batch size and iteration count must be positive".into(),
            ));
        }
        if self.lagrange_weight < 0.0 {
            return Err(Error::Config("lagrange weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainBranch {
    /// Performance step taken under the margin gate (it did not hurt
    /// robustness at the probe state).
    Perf,
    /// Robustness step taken under the margin gate.
    Stl,
    /// Slow performance step: the margin was already met.
    Slow,
    /// Full-batch Lagrangian ascent (baseline mode).
    Lagrangian,
}

impl TrainBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainBranch::Perf => "perf",
            TrainBranch::Stl => "stl",
            TrainBranch::Slow => "slow",
            TrainBranch::Lagrangian => "lagr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub iter: usize,
    pub branch: TrainBranch,
    /// Performance reward at the probe state, at the pre-update
    /// parameters.
    pub j_x0: f64,
    /// Smooth robustness at the probe state, at the pre-update parameters
    /// (the margin-gate test value).
    pub gamma_x0: f64,
    /// Smooth robustness at the probe state under the performance
    /// candidate; present whenever the margin gate was active.
    pub gamma_x0_candidate: Option<f64>,
    pub norm_d1: f64,
    pub norm_d2: f64,
    pub b1: usize,
    pub b2: usize,
    /// Per-batch-member gradient norms, when requested.
    pub batch_norms: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// CSV columns: `iter, branch, J, Gamma, norm_d1, norm_d2, b1, b2`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "iter,branch,J,Gamma,norm_d1,norm_d2,b1,b2")?;
        for r in &self.records {
            writeln!(
                file,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.iter,
                r.branch.as_str(),
                r.j_x0,
                r.gamma_x0,
                r.norm_d1,
                r.norm_d2,
                r.b1,
                r.b2
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub zeta: SmoothParams,
    pub log: TrainLog,
}

/// Gradient of `J` and of `Gamma` at one initial state, both over the
/// concatenated `(theta, zeta)` coordinate space. The `zeta` block of the
/// `J` gradient is identically zero since the reward does not involve the
/// smoothing parameters.
fn gradient_pair(
    cfg: &TrainConfig,
    policy: &Policy,
    zeta: &SmoothParams,
    x0: &[f64],
    delta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::with_capacity(8192);
    let pnodes = policy.lift(&tape);
    let znodes = zeta.lift(&tape);
    let states = rollout_symbolic(&tape, &cfg.dynamics, &pnodes, x0, delta, cfg.horizon)?;
    let names = &cfg.dynamics.state_names;
    let j = perf_reward(&states, names, &cfg.reward, cfg.gamma, &|c| tape.constant(c))?;
    let g = stl2cbf(&cfg.formula, names, &states, &znodes)?;

    let grads_j = backward(j);
    let grads_g = backward(g);
    let mut d1 = Vec::with_capacity(pnodes.order.len() + znodes.order.len());
    let mut d2 = Vec::with_capacity(d1.capacity());
    for s in pnodes.order.iter().chain(znodes.order.iter()) {
        d1.push(grads_j.wrt(*s));
        d2.push(grads_g.wrt(*s));
    }
    Ok((d1, d2))
}

/// Performance reward and smooth robustness at one initial state, without
/// gradients.
fn probe_objectives(
    cfg: &TrainConfig,
    policy: &Policy,
    zeta: &SmoothParams,
    x0: &[f64],
    delta: &[f64],
) -> Result<(f64, f64)> {
    let traj = rollout(&cfg.dynamics, policy, x0, delta, cfg.horizon)?;
    let names = &cfg.dynamics.state_names;
    let j = perf_reward(&traj.states, names, &cfg.reward, cfg.gamma, &|c| c)?;
    let gamma = smooth_robustness(&cfg.formula, names, &traj.states, zeta)?;
    Ok((j, gamma))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn argmax_norm(norms: &[f64]) -> usize {
    let mut best = 0;
    for (i, n) in norms.iter().enumerate().skip(1) {
        if *n > norms[best] {
            best = i;
        }
    }
    best
}

fn ensure_finite(grad: &[f64], iter: usize, objective: &'static str) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { iter, objective });
    }
    Ok(())
}

fn materialize(
    policy: &Policy,
    zeta: &SmoothParams,
    flat: &[f64],
    pdim: usize,
) -> (Policy, SmoothParams) {
    let mut policy = policy.clone();
    let mut zeta = zeta.clone();
    policy.set_params(&flat[..pdim]);
    zeta.set_from_flat(&flat[pdim..]);
    (policy, zeta)
}

/// Trains the controller. Dispatches on the configured mode; fully
/// deterministic for a given configuration.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate_structure()?;
    match cfg.mode {
        TrainMode::Switching => train_switching(cfg),
        TrainMode::Lagrangian => train_lagrangian(cfg),
    }
}

fn init_run(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Policy, SmoothParams, Vec<Vec<f64>>)> {
    let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, rng.gen());
    let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, rng.gen());
    zeta.validate(&cfg.formula)?;
    let batch: Vec<Vec<f64>> = (0..cfg.batch_size)
        .map(|_| sample_init(&cfg.init_set, rng))
        .collect();
    Ok((policy, zeta, batch))
}

fn train_switching(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut policy, mut zeta, batch) = init_run(cfg, &mut rng)?;
    let pdim = policy.param_count();
    let dim = pdim + zeta.param_count();

    let mut adam_perf = AdamState::new(dim, cfg.adam);
    let mut adam_stl = AdamState::new(dim, cfg.adam);
    let mut log = TrainLog::default();

    for iter in 0..cfg.iterations {
        let delta = sample_model(&cfg.dynamics, &mut rng);

        // per-batch-member gradients, computed on independent tapes; the
        // collect preserves batch order so the reduction below is
        // deterministic regardless of thread count
        let grads: Vec<(Vec<f64>, Vec<f64>)> = batch
            .par_iter()
            .map(|x0| gradient_pair(cfg, &policy, &zeta, x0, &delta))
            .collect::<Result<_>>()?;

        let norms1: Vec<f64> = grads.iter().map(|(d1, _)| l2(d1)).collect();
        let norms2: Vec<f64> = grads.iter().map(|(_, d2)| l2(d2)).collect();
        let b1 = argmax_norm(&norms1);
        let b2 = argmax_norm(&norms2);
        let d1 = &grads[b1].0;
        let d2 = &grads[b2].1;
        ensure_finite(d1, iter, "performance objective")?;
        ensure_finite(d2, iter, "stl objective")?;

        let pending_perf = adam_perf.preview(d1);
        let pending_stl = adam_stl.preview(d2);

        let mut current = policy.params();
        current.extend_from_slice(&zeta.flatten());

        let probe_x0 = sample_init(&cfg.init_set, &mut rng);
        let (j_x0, gamma_x0) = probe_objectives(cfg, &policy, &zeta, &probe_x0, &delta)?;

        let (branch, gamma_candidate, next);
        if gamma_x0 <= cfg.rho {
            // margin not met: prefer the performance step when it also
            // improves (or preserves) robustness at the probe state
            let cand: Vec<f64> = current
                .iter()
                .zip(&pending_perf.delta)
                .map(|(p, d)| p + d)
                .collect();
            let (cand_policy, cand_zeta) = materialize(&policy, &zeta, &cand, pdim);
            let (_, gamma_new) = probe_objectives(cfg, &cand_policy, &cand_zeta, &probe_x0, &delta)?;
            if gamma_new >= gamma_x0 {
                adam_perf.commit(pending_perf);
                branch = TrainBranch::Perf;
                gamma_candidate = Some(gamma_new);
                next = cand;
            } else {
                let cand: Vec<f64> = current
                    .iter()
                    .zip(&pending_stl.delta)
                    .map(|(p, d)| p + d)
                    .collect();
                adam_stl.commit(pending_stl);
                branch = TrainBranch::Stl;
                gamma_candidate = Some(gamma_new);
                next = cand;
            }
        } else {
            // margin met: creep on performance, scaled down by tau but
            // with the moments advanced as a full step
            let cand: Vec<f64> = current
                .iter()
                .zip(&pending_perf.delta)
                .map(|(p, d)| p + d / cfg.tau)
                .collect();
            adam_perf.commit(pending_perf);
            branch = TrainBranch::Slow;
            gamma_candidate = None;
            next = cand;
        }

        policy.set_params(&next[..pdim]);
        zeta.set_from_flat(&next[pdim..]);
        debug_assert!(zeta.eta() >= 1.0);

        log.records.push(TrainRecord {
            iter,
            branch,
            j_x0,
            gamma_x0,
            gamma_x0_candidate: gamma_candidate,
            norm_d1: norms1[b1],
            norm_d2: norms2[b2],
            b1,
            b2,
            batch_norms: cfg.log_batch_norms.then_some((norms1, norms2)),
        });
    }

    Ok(TrainOutcome { policy, zeta, log })
}

/// Full-batch Lagrangian objective
/// `sum_x0 (J(x0) + omega_x0 * Gamma(x0))` built on one tape.
pub fn lagrangian_objective<'t>(
    tape: &'t Tape,
    cfg: &TrainConfig,
    pnodes: &PolicyNodes<'t>,
    znodes: &ZetaNodes<'t>,
    batch: &[Vec<f64>],
    delta: &[f64],
    weights: &[f64],
) -> Result<Scalar<'t>> {
    if batch.is_empty() {
        return Err(Error::EmptyList);
    }
    if weights.len() != batch.len() {
        return Err(Error::Dimension("one weight per batch member".into()));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config("lagrange weights must be non-negative".into()));
    }
    let names = &cfg.dynamics.state_names;
    let mut total: Option<Scalar<'t>> = None;
    for (x0, omega) in batch.iter().zip(weights) {
        let states = rollout_symbolic(tape, &cfg.dynamics, pnodes, x0, delta, cfg.horizon)?;
        let j = perf_reward(&states, names, &cfg.reward, cfg.gamma, &|c| tape.constant(c))?;
        let gamma = stl2cbf(&cfg.formula, names, &states, znodes)?;
        let term = j + tape.constant(*omega) * gamma;
        total = Some(match total {
            None => term,
            Some(acc) => acc + term,
        });
    }
    Ok(total.unwrap())
}

fn train_lagrangian(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut policy, mut zeta, batch) = init_run(cfg, &mut rng)?;
    let pdim = policy.param_count();
    let dim = pdim + zeta.param_count();
    let weights = vec![cfg.lagrange_weight; batch.len()];

    let mut adam = AdamState::new(dim, cfg.adam);
    let mut log = TrainLog::default();

    for iter in 0..cfg.iterations {
        let delta = sample_model(&cfg.dynamics, &mut rng);

        let tape = Tape::with_capacity(16384);
        let pnodes = policy.lift(&tape);
        let znodes = zeta.lift(&tape);
        let objective = lagrangian_objective(&tape, cfg, &pnodes, &znodes, &batch, &delta, &weights)?;
        let grads = backward(objective);
        let grad: Vec<f64> = pnodes
            .order
            .iter()
            .chain(znodes.order.iter())
            .map(|s| grads.wrt(*s))
            .collect();
        ensure_finite(&grad, iter, "lagrangian objective")?;

        let step = adam.step(&grad);
        let mut flat = policy.params();
        flat.extend_from_slice(&zeta.flatten());
        for (p, d) in flat.iter_mut().zip(&step) {
            *p += d;
        }
        policy.set_params(&flat[..pdim]);
        zeta.set_from_flat(&flat[pdim..]);

        let probe_x0 = sample_init(&cfg.init_set, &mut rng);
        let (j_x0, gamma_x0) = probe_objectives(cfg, &policy, &zeta, &probe_x0, &delta)?;
        log.records.push(TrainRecord {
            iter,
            branch: TrainBranch::Lagrangian,
            j_x0,
            gamma_x0,
            gamma_x0_candidate: None,
            norm_d1: l2(&grad),
            norm_d2: 0.0,
            b1: 0,
            b2: 0,
            batch_norms: None,
        });
    }

    Ok(TrainOutcome { policy, zeta, log })
}

/// Validation summary over fresh uniform `(x0, delta)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationStats {
    pub samples: usize,
    /// Fraction with positive hard robustness.
    pub satisfaction_rate: f64,
    pub mean_j: f64,
    pub mean_gamma: f64,
    pub mean_rho: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

/// Rolls out `n` fresh uniform samples and summarizes reward and
/// robustness. Per-sample RNG streams split deterministically from the
/// seed, so the result does not depend on the worker count.
pub fn validate_controller(
    cfg: &TrainConfig,
    policy: &Policy,
    zeta: &SmoothParams,
    n: usize,
    seed: u64,
) -> Result<ValidationStats> {
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x0 = sample_init(&cfg.init_set, &mut rng);
            let delta = sample_model(&cfg.dynamics, &mut rng);
            let traj = rollout(&cfg.dynamics, policy, &x0, &delta, cfg.horizon)?;
            let names = &cfg.dynamics.state_names;
            let j = perf_reward(&traj.states, names, &cfg.reward, cfg.gamma, &|c| c)?;
            let gamma = smooth_robustness(&cfg.formula, names, &traj.states, zeta)?;
            let rho = hard_robustness(&cfg.formula, names, &traj.states)?;
            Ok((j, gamma, rho))
        })
        .collect::<Result<_>>()?;

    let n_f = rows.len() as f64;
    let mut stats = ValidationStats {
        samples: rows.len(),
        satisfaction_rate: rows.iter().filter(|r| r.2 > 0.0).count() as f64 / n_f,
        mean_j: rows.iter().map(|r| r.0).sum::<f64>() / n_f,
        mean_gamma: rows.iter().map(|r| r.1).sum::<f64>() / n_f,
        mean_rho: rows.iter().map(|r| r.2).sum::<f64>() / n_f,
        min_rho: f64::INFINITY,
        max_rho: f64::NEG_INFINITY,
    };
    for r in &rows {
        stats.min_rho = stats.min_rho.min(r.2);
        stats.max_rho = stats.max_rho.max(r.2);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::policy::{squashes, SquashKind};
    use crate::stl::parse_stl;
    use crate::tape::check_gradient;

    fn toy_config(rho: f64, iterations: usize) -> TrainConfig {
        // one-dimensional integrator driven toward x = 1
        let updates = vec![parse_expr("x + u", &["x", "u"]).unwrap()];
        let dynamics =
            DynamicsSpec::custom(vec!["x".into()], vec!["u".into()], vec![], updates).unwrap();
        TrainConfig {
            rho,
            tau: 2.0,
            gamma: 1.0,
            horizon: 5,
            batch_size: 4,
            iterations,
            adam: AdamParams {
                alpha: 0.05,
                ..AdamParams::default()
            },
            seed: 7,
            wtavg_form: WtAvgForm::Squared,
            init_scheme: InitScheme::Uniform,
            reward: parse_expr("1 - (x - 1)^2", &["x"]).unwrap(),
            formula: parse_stl("x + 100 >= 0", &["x"], 5).unwrap(),
            dynamics,
            init_set: InitSet::Box {
                lo: vec![-0.1],
                hi: vec![0.1],
            },
            layer_dims: vec![2, 3, 1],
            squash: vec![Squash {
                kind: SquashKind::Tanh,
                pre_scale: 1.0,
                gain: 1.0,
                offset: 0.0,
            }],
            mode: TrainMode::Switching,
            lagrange_weight: 1.0,
            log_batch_norms: false,
        }
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut adam = AdamState::new(3, AdamParams::default());
        let delta = adam.step(&[0.3, -2.0, 0.0]);
        assert!((delta[0] - 1e-3).abs() < 1e-7);
        assert!((delta[1] + 1e-3).abs() < 1e-7);
        assert_eq!(delta[2], 0.0);
    }

    #[test]
    fn adam_zero_gradient_gives_zero_delta() {
        let mut adam = AdamState::new(2, AdamParams::default());
        let delta = adam.step(&[0.0, 0.0]);
        assert_eq!(delta, vec![0.0, 0.0]);
    }

    #[test]
    fn slow_branch_scales_delta_exactly() {
        let adam = AdamState::new(2, AdamParams::default());
        let pending = adam.preview(&[1.0, -0.5]);
        let tau = 100.0;
        for d in &pending.delta {
            assert_eq!(d / tau * tau, *d);
        }
    }

    #[test]
    fn perf_reward_constant_unit_reward() {
        let names = vec!["x".to_string()];
        let states: Vec<Vec<f64>> = (0..=20).map(|_| vec![0.0]).collect();
        let one = parse_expr("1", &["x"]).unwrap();
        let j = perf_reward(&states, &names, &one, 1.0, &|c| c).unwrap();
        assert_eq!(j, 21.0);
        let j = perf_reward(&states, &names, &one, 0.9, &|c| c).unwrap();
        let expected = (1.0 - 0.9f64.powi(21)) / (1.0 - 0.9);
        assert!((j - expected).abs() < 1e-12);
        assert!((j - 8.9058).abs() < 1e-4);
    }

    #[test]
    fn lagrangian_objective_reduces_to_reward_sum_at_zero_weight() {
        let cfg = toy_config(0.0, 1);
        let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, 1);
        let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 1);
        let batch = vec![vec![0.05], vec![-0.02]];
        let delta: Vec<f64> = vec![];

        let tape = Tape::new();
        let pnodes = policy.lift(&tape);
        let znodes = zeta.lift(&tape);
        let zero = lagrangian_objective(&tape, &cfg, &pnodes, &znodes, &batch, &delta, &[0.0, 0.0])
            .unwrap()
            .value();

        let mut expected = 0.0;
        for x0 in &batch {
            let traj = rollout(&cfg.dynamics, &policy, x0, &delta, cfg.horizon).unwrap();
            expected +=
                perf_reward(&traj.states, &cfg.dynamics.state_names, &cfg.reward, cfg.gamma, &|c| c)
                    .unwrap();
        }
        assert!((zero - expected).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_objective_single_state_unit_weight() {
        let cfg = toy_config(0.0, 1);
        let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, 2);
        let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 2);
        let x0 = vec![0.03];
        let delta: Vec<f64> = vec![];

        let tape = Tape::new();
        let pnodes = policy.lift(&tape);
        let znodes = zeta.lift(&tape);
        let got = lagrangian_objective(
            &tape,
            &cfg,
            &pnodes,
            &znodes,
            std::slice::from_ref(&x0),
            &delta,
            &[1.0],
        )
        .unwrap()
        .value();

        let (j, gamma) = probe_objectives(&cfg, &policy, &zeta, &x0, &delta).unwrap();
        assert!((got - (j + gamma)).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_objective_rejects_negative_weight() {
        let cfg = toy_config(0.0, 1);
        let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, 2);
        let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 2);
        let tape = Tape::new();
        let pnodes = policy.lift(&tape);
        let znodes = zeta.lift(&tape);
        assert!(lagrangian_objective(
            &tape,
            &cfg,
            &pnodes,
            &znodes,
            &[vec![0.0]],
            &[],
            &[-1.0]
        )
        .is_err());
    }

    #[test]
    fn lagrangian_gradient_matches_finite_differences() {
        let cfg = toy_config(0.0, 1);
        let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, 3);
        let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 3);
        let batch = vec![vec![0.05], vec![-0.08]];
        let delta: Vec<f64> = vec![];
        let weights = vec![1.0, 0.5];
        let pdim = policy.param_count();

        let mut at = policy.params();
        at.extend_from_slice(&zeta.flatten());
        let err = check_gradient(
            |tape, inputs| {
                let pnodes = policy.lift_from_inputs(&inputs[..pdim]);
                let znodes = zeta.lift_from_inputs(&inputs[pdim..]);
                lagrangian_objective(tape, &cfg, &pnodes, &znodes, &batch, &delta, &weights)
            },
            &at,
            1e-5,
        );
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn degenerate_margin_takes_only_slow_branches_and_improves_reward() {
        let cfg = toy_config(f64::NEG_INFINITY, 600);
        let outcome = train(&cfg).unwrap();
        assert!(outcome
            .log
            .records
            .iter()
            .all(|r| r.branch == TrainBranch::Slow));
        let first: f64 = outcome.log.records[..50].iter().map(|r| r.j_x0).sum::<f64>() / 50.0;
        let last: f64 = outcome.log.records[550..].iter().map(|r| r.j_x0).sum::<f64>() / 50.0;
        assert!(
            last > first + 0.5,
            "reward did not improve: first {first}, last {last}"
        );
    }

    #[test]
    fn trivially_true_formula_reduces_to_slow_ascent() {
        // the constant predicate keeps smooth robustness above any
        // non-negative margin, so the margin gate never fires
        let cfg = toy_config(0.5, 50);
        let outcome = train(&cfg).unwrap();
        assert!(outcome
            .log
            .records
            .iter()
            .all(|r| r.branch == TrainBranch::Slow));
        // smooth robustness of the constant-affine predicate is x0 + 100
        assert!(outcome.log.records.iter().all(|r| r.gamma_x0 > 99.0));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = toy_config(0.2, 40);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.zeta, b.zeta);
        assert_eq!(a.log.records.len(), b.log.records.len());
        for (ra, rb) in a.log.records.iter().zip(&b.log.records) {
            assert_eq!(ra.branch, rb.branch);
            assert_eq!(ra.j_x0.to_bits(), rb.j_x0.to_bits());
            assert_eq!(ra.gamma_x0.to_bits(), rb.gamma_x0.to_bits());
            assert_eq!(ra.norm_d1.to_bits(), rb.norm_d1.to_bits());
            assert_eq!(ra.norm_d2.to_bits(), rb.norm_d2.to_bits());
        }
    }

    #[test]
    fn margin_gate_guard_is_replayable_from_the_log() {
        // a margin the toy problem actually trips: robustness of x + 0.05
        let mut cfg = toy_config(0.12, 150);
        cfg.formula = parse_stl("G[0,5](x + 0.05 >= 0)", &["x"], 5).unwrap();
        cfg.log_batch_norms = true;
        let outcome = train(&cfg).unwrap();
        let mut saw_gate = false;
        for r in &outcome.log.records {
            if r.gamma_x0 <= cfg.rho {
                saw_gate = true;
                let cand = r
                    .gamma_x0_candidate
                    .expect("gate evaluations must be logged");
                match r.branch {
                    TrainBranch::Perf => assert!(cand >= r.gamma_x0),
                    TrainBranch::Stl => assert!(cand < r.gamma_x0),
                    other => panic!("unexpected branch {other:?} under the gate"),
                }
            } else {
                assert_eq!(r.branch, TrainBranch::Slow);
            }
            let (n1, n2) = r.batch_norms.as_ref().unwrap();
            let max1 = n1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let max2 = n2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(r.norm_d1, max1);
            assert_eq!(r.norm_d2, max2);
            assert_eq!(r.norm_d1, n1[r.b1]);
            assert_eq!(r.norm_d2, n2[r.b2]);
        }
        assert!(saw_gate, "margin gate never fired; test setup is broken");
    }

    #[test]
    fn stl_objective_is_a_lower_bound_on_hard_robustness() {
        use crate::semantics::hard_robustness;
        use rand::{Rng, SeedableRng};
        let cfg = crate::presets::unicycle_config(0.3, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(62);
        for trial in 0..100 {
            let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, trial);
            let mut zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 0);
            zeta.lambda = rng.gen_range(-2.0..2.0);
            for betas in zeta.betas.values_mut() {
                for b in betas.iter_mut() {
                    *b = rng.gen_range(0.1..2.0);
                }
            }
            let x0 = vec![
                rng.gen_range(0.6..1.4),
                rng.gen_range(0.6..1.4),
                rng.gen_range(1.26..1.88),
            ];
            let delta = vec![rng.gen_range(-0.01..0.01)];

            let tape = Tape::new();
            let pnodes = policy.lift(&tape);
            let znodes = zeta.lift(&tape);
            let gamma = stl_objective(&tape, &cfg, &pnodes, &znodes, &x0, &delta)
                .unwrap()
                .value();
            let traj = rollout(&cfg.dynamics, &policy, &x0, &delta, cfg.horizon).unwrap();
            let rho = hard_robustness(&cfg.formula, &cfg.dynamics.state_names, &traj.states)
                .unwrap();
            assert!(gamma <= rho + 1e-12, "{gamma} > {rho} in trial {trial}");
        }
    }

    #[test]
    fn diverging_rollout_aborts_with_a_diagnostic() {
        // the quadratic blow-up overflows within a few steps, poisoning
        // the gradients
        let mut cfg = toy_config(0.0, 50);
        let updates = vec![parse_expr("x*x*1e30 + u", &["x", "u"]).unwrap()];
        cfg.dynamics =
            DynamicsSpec::custom(vec!["x".into()], vec!["u".into()], vec![], updates).unwrap();
        cfg.init_set = InitSet::Box {
            lo: vec![2.0],
            hi: vec![3.0],
        };
        match train(&cfg) {
            Err(Error::NonFiniteGradient { .. }) => {}
            other => panic!("expected a non-finite-gradient abort, got {other:?}"),
        }
    }

    #[test]
    fn unicycle_gradient_pair_is_finite_and_nonzero() {
        let e1 = "1 - 2/3*((x-2)^2 + (y-8)^2)";
        let e3 = "1 - exp(1 - 2/3*((x-5)^2 + (y-5)^2))";
        let cfg = TrainConfig {
            rho: 0.3,
            tau: 100.0,
            gamma: 0.9,
            horizon: 20,
            batch_size: 2,
            iterations: 1,
            adam: AdamParams::default(),
            seed: 5,
            wtavg_form: WtAvgForm::Squared,
            init_scheme: InitScheme::Uniform,
            reward: parse_expr("10*exp(-((x-8)^2+(y-8)^2)/36)", &["x", "y", "alpha"]).unwrap(),
            formula: parse_stl(
                &format!("F[1,10]({e1} >= 0) && G[1,20]({e3} >= 0)"),
                &["x", "y", "alpha"],
                20,
            )
            .unwrap(),
            dynamics: DynamicsSpec::unicycle(),
            init_set: InitSet::Box {
                lo: vec![0.6, 0.6, 2.0 * std::f64::consts::PI / 5.0],
                hi: vec![1.4, 1.4, 3.0 * std::f64::consts::PI / 5.0],
            },
            layer_dims: vec![4, 5, 2, 2],
            squash: squashes::unicycle(),
            mode: TrainMode::Switching,
            lagrange_weight: 1.0,
            log_batch_norms: false,
        };
        let policy = Policy::init(&cfg.layer_dims, cfg.squash.clone(), cfg.horizon, 2);
        let zeta = SmoothParams::init(&cfg.formula, cfg.wtavg_form, cfg.init_scheme, 2);
        let (d1, d2) = gradient_pair(&cfg, &policy, &zeta, &[1.0, 1.0, 1.5], &[0.0]).unwrap();
        assert!(d1.iter().all(|g| g.is_finite()));
        assert!(d2.iter().all(|g| g.is_finite()));
        assert!(l2(&d1) > 0.0);
        assert!(l2(&d2) > 0.0);
        // the reward never touches the smoothing parameters
        let pdim = policy.param_count();
        assert!(d1[pdim..].iter().all(|g| *g == 0.0));
    }
}
