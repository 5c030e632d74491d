//! Ready-made reach-avoid training setups for the built-in plants.
//!
//! Both scenarios share the same mission shape: visit one of two circular
//! target regions within steps 1..=10, avoid a third region through steps
//! 1..=20, and collect as much discounted reward as possible near a goal
//! point. The barrier expressions are written directly as predicate
//! bodies.

use std::f64::consts::PI;

use crate::expr::parse_expr;
use crate::plant::{DynamicsSpec, InitSet};
use crate::policy::squashes;
use crate::smooth::{InitScheme, WtAvgForm};
use crate::stl::parse_stl;
use crate::trainer::{AdamParams, TrainConfig, TrainMode};

pub const UNICYCLE_TARGET_A: &str = "1 - 2/3*((x-2)^2 + (y-8)^2)";
pub const UNICYCLE_TARGET_B: &str = "1 - 2/3*((x-8)^2 + (y-2)^2)";
pub const UNICYCLE_AVOID: &str = "1 - exp(1 - 2/3*((x-5)^2 + (y-5)^2))";
pub const UNICYCLE_REWARD: &str = "10*exp(-((x-8)^2 + (y-8)^2)/36)";

pub const QUADROTOR_TARGET_A: &str = "1 - ((x-0.025)^2 + (y-0.1)^2 + z^2)/0.00023438";
pub const QUADROTOR_TARGET_B: &str = "1 - ((x-0.1)^2 + (y-0.025)^2 + z^2)/0.00023438";
pub const QUADROTOR_AVOID: &str = "1 - exp(1 - ((x-0.0625)^2 + (y-0.0625)^2 + z^2)/0.00023438)";
pub const QUADROTOR_REWARD: &str = "10*exp(-((x-0.1)^2 + (y-0.1)^2 + (z+0.0375)^2)/0.0056)";

pub fn reach_avoid_formula(target_a: &str, target_b: &str, avoid: &str) -> String {
    format!("(F[1,10]({target_a} >= 0) || F[1,10]({target_b} >= 0)) && G[1,20]({avoid} >= 0)")
}

pub fn unicycle_formula_text() -> String {
    reach_avoid_formula(UNICYCLE_TARGET_A, UNICYCLE_TARGET_B, UNICYCLE_AVOID)
}

pub fn quadrotor_formula_text() -> String {
    reach_avoid_formula(QUADROTOR_TARGET_A, QUADROTOR_TARGET_B, QUADROTOR_AVOID)
}

pub fn unicycle_init_set() -> InitSet {
    InitSet::Box {
        lo: vec![0.6, 0.6, 2.0 * PI / 5.0],
        hi: vec![1.4, 1.4, 3.0 * PI / 5.0],
    }
}

pub fn quadrotor_init_set() -> InitSet {
    InitSet::Ball {
        center: vec![0.025, 0.025, 0.0, 0.0, 0.0, 0.0],
        radius: 0.0125,
    }
}

/// Unicycle reach-avoid training setup; `rho` is the robustness margin.
pub fn unicycle_config(rho: f64, iterations: usize, seed: u64) -> TrainConfig {
    let dynamics = DynamicsSpec::unicycle();
    let vars: Vec<&str> = dynamics
        .state_names
        .iter()
        .map(String::as_str)
        .chain(std::iter::once("t"))
        .collect();
    TrainConfig {
        rho,
        tau: 1e2,
        gamma: 0.9,
        horizon: 20,
        batch_size: 16,
        iterations,
        adam: AdamParams::default(),
        seed,
        wtavg_form: WtAvgForm::Squared,
        init_scheme: InitScheme::Uniform,
        reward: parse_expr(UNICYCLE_REWARD, &vars).unwrap(),
        formula: parse_stl(&unicycle_formula_text(), &vars, 20).unwrap(),
        dynamics,
        init_set: unicycle_init_set(),
        layer_dims: vec![4, 5, 2, 2],
        squash: squashes::unicycle(),
        mode: TrainMode::Switching,
        lagrange_weight: 1.0,
        log_batch_norms: false,
    }
}

/// Quadrotor reach-avoid training setup; `rho` is the robustness margin.
pub fn quadrotor_config(rho: f64, iterations: usize, seed: u64) -> TrainConfig {
    let dynamics = DynamicsSpec::quadrotor();
    let vars: Vec<&str> = dynamics
        .state_names
        .iter()
        .map(String::as_str)
        .chain(std::iter::once("t"))
        .collect();
    TrainConfig {
        rho,
        tau: 5e4,
        gamma: 0.9,
        horizon: 20,
        batch_size: 16,
        iterations,
        adam: AdamParams::default(),
        seed,
        wtavg_form: WtAvgForm::Softmax,
        init_scheme: InitScheme::Uniform,
        reward: parse_expr(QUADROTOR_REWARD, &vars).unwrap(),
        formula: parse_stl(&quadrotor_formula_text(), &vars, 20).unwrap(),
        dynamics,
        init_set: quadrotor_init_set(),
        layer_dims: vec![7, 10, 3, 3],
        squash: squashes::quadrotor(),
        mode: TrainMode::Switching,
        lagrange_weight: 1.0,
        log_batch_norms: false,
    }
}
