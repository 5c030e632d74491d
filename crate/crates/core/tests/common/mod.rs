//! Shared helpers for the integration suites: a random-formula generator
//! and an independent brute-force robustness oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stlforge_core::expr::{Env, Expr};
use stlforge_core::smooth::{InitScheme, SmoothParams, WtAvgForm};
use stlforge_core::stl::StlAst;

/// Random predicate body over `x` and `y`, drawn from a small family of
/// affine and mildly nonlinear shapes.
pub fn random_pred_text(rng: &mut ChaCha8Rng) -> String {
    let c1: f64 = rng.gen_range(-2.0..2.0);
    let c2: f64 = rng.gen_range(-2.0..2.0);
    match rng.gen_range(0..6) {
        0 => format!("x - ({c1})"),
        1 => format!("y - ({c1})"),
        2 => format!("({c1})*x + ({c2})*y"),
        3 => format!("x + y - ({c1})"),
        4 => format!("(x - ({c1}))^2 - ({})", c2.abs()),
        _ => format!("sin(x) - ({c1})"),
    }
}

/// Random formula text with structural depth at most `depth` and total
/// temporal lookahead at most `time_budget`.
pub fn random_formula_text(rng: &mut ChaCha8Rng, depth: usize, time_budget: usize) -> String {
    let pred = |rng: &mut ChaCha8Rng| {
        let body = random_pred_text(rng);
        let cmp = match rng.gen_range(0..4) {
            0 => ">=",
            1 => ">",
            2 => "<=",
            _ => "<",
        };
        format!("{body} {cmp} 0")
    };
    if depth == 0 {
        return pred(rng);
    }
    match rng.gen_range(0..6) {
        0 => pred(rng),
        1 => format!(
            "({}) && ({})",
            random_formula_text(rng, depth - 1, time_budget),
            random_formula_text(rng, depth - 1, time_budget)
        ),
        2 => format!(
            "({}) || ({})",
            random_formula_text(rng, depth - 1, time_budget),
            random_formula_text(rng, depth - 1, time_budget)
        ),
        3 | 4 => {
            let b = rng.gen_range(0..=time_budget.min(4));
            let a = rng.gen_range(0..=b);
            let op = if rng.gen_bool(0.5) { "G" } else { "F" };
            format!(
                "{op}[{a},{b}]({})",
                random_formula_text(rng, depth - 1, time_budget - b)
            )
        }
        _ => {
            let b = rng.gen_range(0..=time_budget.min(4));
            let a = rng.gen_range(0..=b);
            format!(
                "({}) U[{a},{b}] ({})",
                random_formula_text(rng, depth - 1, time_budget - b),
                random_formula_text(rng, depth - 1, time_budget - b)
            )
        }
    }
}

pub fn random_states(rng: &mut ChaCha8Rng, len: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
        .collect()
}

pub fn random_zeta(phi: &StlAst, rng: &mut ChaCha8Rng) -> SmoothParams {
    let form = if rng.gen_bool(0.5) {
        WtAvgForm::Squared
    } else {
        WtAvgForm::Softmax
    };
    let mut zeta = SmoothParams::init(phi, form, InitScheme::Uniform, 0);
    zeta.lambda = rng.gen_range(-2.0..2.0);
    for betas in zeta.betas.values_mut() {
        for b in betas.iter_mut() {
            *b = rng.gen_range(-2.0..2.0);
        }
        if betas.iter().all(|b| b.abs() < 1e-3) {
            betas[0] = 1.0;
        }
    }
    zeta
}

/// Quantitative robustness written directly from the operator semantics:
/// plain recursion over (subformula, time), with the until window
/// enumerated outright. Deliberately shares no structure with the
/// table-based evaluator it cross-checks.
pub fn brute_robustness(phi: &StlAst, names: &[String], states: &[Vec<f64>], t: usize) -> f64 {
    match phi {
        StlAst::Pred { h } => eval_pred(h, names, states, t),
        StlAst::And { left, right } => brute_robustness(left, names, states, t)
            .min(brute_robustness(right, names, states, t)),
        StlAst::Or { left, right, .. } => brute_robustness(left, names, states, t)
            .max(brute_robustness(right, names, states, t)),
        StlAst::Always { a, b, child } => (*a..=*b)
            .map(|k| brute_robustness(child, names, states, t + k))
            .fold(f64::INFINITY, f64::min),
        StlAst::Eventually { a, b, child, .. } => (*a..=*b)
            .map(|k| brute_robustness(child, names, states, t + k))
            .fold(f64::NEG_INFINITY, f64::max),
        StlAst::Until {
            a, b, left, right, ..
        } => {
            let mut best = f64::NEG_INFINITY;
            for k in *a..=*b {
                let mut value = brute_robustness(right, names, states, t + k);
                for j in 0..k {
                    value = value.min(brute_robustness(left, names, states, t + j));
                }
                best = best.max(value);
            }
            best
        }
    }
}

fn eval_pred(h: &Expr, names: &[String], states: &[Vec<f64>], t: usize) -> f64 {
    let mut env = Env::with_capacity(names.len() + 1);
    for (name, value) in names.iter().zip(&states[t]) {
        env.bind(name, *value);
    }
    env.bind("t", t as f64);
    h.eval(&env).expect("oracle predicates are domain-safe")
}
