//! Three evaluators for an STL formula over a trajectory.
//!
//! * [`bool_sat`]: Boolean satisfaction by direct recursion.
//! * [`hard_robustness`]: quantitative robustness, computed bottom-up as a
//!   per-subformula table over all valid time points. Positive robustness
//!   implies Boolean satisfaction.
//! * [`stl2cbf`]: the differentiable smooth robustness; conjunctive
//!   structure becomes [`softmin`], disjunctive structure becomes a
//!   learnable [`weighted_average`]. Built over tape scalars, it is a
//!   guaranteed lower bound on the hard robustness; a positive value
//!   certifies satisfaction, a negative value proves nothing.
//!
//! All evaluators treat the formula at trajectory level (time 0); `bool_sat`
//! also accepts an explicit start time.

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::smooth::{softmin, weighted_average, SmoothParams, ZetaNodes};
use crate::stl::StlAst;
use crate::tape::{Scalar, Tape};

fn pred_env<'n, R: Copy>(names: &'n [String], state: &[R], t: R) -> Env<'n, R> {
    let mut env = Env::with_capacity(names.len() + 1);
    for (name, value) in names.iter().zip(state) {
        env.bind(name, *value);
    }
    env.bind("t", t);
    env
}

fn eval_pred(h: &Expr, names: &[String], states: &[Vec<f64>], t: usize) -> Result<f64> {
    let env = pred_env(names, &states[t], t as f64);
    h.eval(&env)
}

fn check_depth(phi: &StlAst, t: usize, len: usize) -> Result<()> {
    let required = t + phi.time_depth() + 1;
    if required > len {
        return Err(Error::HorizonExceeded {
            required,
            available: len,
        });
    }
    Ok(())
}

/// Boolean satisfaction of `phi` at time `t`.
pub fn bool_sat(phi: &StlAst, names: &[String], states: &[Vec<f64>], t: usize) -> Result<bool> {
    check_depth(phi, t, states.len())?;
    sat_rec(phi, names, states, t)
}

fn sat_rec(phi: &StlAst, names: &[String], states: &[Vec<f64>], t: usize) -> Result<bool> {
    match phi {
        StlAst::Pred { h } => Ok(eval_pred(h, names, states, t)? >= 0.0),
        StlAst::And { left, right } => {
            Ok(sat_rec(left, names, states, t)? && sat_rec(right, names, states, t)?)
        }
        StlAst::Or { left, right, .. } => {
            Ok(sat_rec(left, names, states, t)? || sat_rec(right, names, states, t)?)
        }
        StlAst::Always { a, b, child } => {
            for k in *a..=*b {
                if !sat_rec(child, names, states, t + k)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        StlAst::Eventually { a, b, child, .. } => {
            for k in *a..=*b {
                if sat_rec(child, names, states, t + k)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        StlAst::Until {
            a, b, left, right, ..
        } => {
            for k in *a..=*b {
                if sat_rec(right, names, states, t + k)? {
                    let mut prefix_holds = true;
                    for j in 0..k {
                        if !sat_rec(left, names, states, t + j)? {
                            prefix_holds = false;
                            break;
                        }
                    }
                    if prefix_holds {
                        return Ok(true);
                    }
                }
            }
            Ok(false)
        }
    }
}

/// Quantitative robustness of `phi` over the trajectory, evaluated at time
/// 0. A positive result implies [`bool_sat`] at time 0.
pub fn hard_robustness(phi: &StlAst, names: &[String], states: &[Vec<f64>]) -> Result<f64> {
    check_depth(phi, 0, states.len())?;
    let table = robustness_table(phi, names, states)?;
    Ok(table[0])
}

/// Robustness of `phi` at every valid start time, bottom-up. The table for
/// a node with lookahead `d` has `states.len() - d` entries.
fn robustness_table(phi: &StlAst, names: &[String], states: &[Vec<f64>]) -> Result<Vec<f64>> {
    match phi {
        StlAst::Pred { h } => (0..states.len())
            .map(|t| eval_pred(h, names, states, t))
            .collect(),
        StlAst::And { left, right } => {
            let l = robustness_table(left, names, states)?;
            let r = robustness_table(right, names, states)?;
            Ok(l.iter().zip(&r).map(|(a, b)| a.min(*b)).collect())
        }
        StlAst::Or { left, right, .. } => {
            let l = robustness_table(left, names, states)?;
            let r = robustness_table(right, names, states)?;
            Ok(l.iter().zip(&r).map(|(a, b)| a.max(*b)).collect())
        }
        StlAst::Always { a, b, child } => {
            let c = robustness_table(child, names, states)?;
            Ok((0..c.len() - b)
                .map(|t| c[t + a..=t + b].iter().copied().fold(f64::INFINITY, f64::min))
                .collect())
        }
        StlAst::Eventually { a, b, child, .. } => {
            let c = robustness_table(child, names, states)?;
            Ok((0..c.len() - b)
                .map(|t| {
                    c[t + a..=t + b]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect())
        }
        StlAst::Until {
            a, b, left, right, ..
        } => {
            let l = robustness_table(left, names, states)?;
            let r = robustness_table(right, names, states)?;
            let len = l.len().min(r.len()) - b;
            let mut out = Vec::with_capacity(len);
            for t in 0..len {
                let mut best = f64::NEG_INFINITY;
                let mut prefix_min = f64::INFINITY;
                for k in 0..=*b {
                    if k > 0 {
                        prefix_min = prefix_min.min(l[t + k - 1]);
                    }
                    if k >= *a {
                        best = best.max(r[t + k].min(prefix_min));
                    }
                }
                out.push(best);
            }
            Ok(out)
        }
    }
}

/// Builds the smooth-robustness graph of `phi` over a symbolic trajectory.
///
/// `states` spans times `0..=H` as tape scalars; `zeta` carries the
/// sharpness `eta` and the per-node disjunctive weights on the same tape.
pub fn stl2cbf<'t>(
    phi: &StlAst,
    names: &[String],
    states: &[Vec<Scalar<'t>>],
    zeta: &ZetaNodes<'t>,
) -> Result<Scalar<'t>> {
    check_depth(phi, 0, states.len())?;
    cbf_rec(phi, names, states, zeta, 0)
}

fn cbf_rec<'t>(
    phi: &StlAst,
    names: &[String],
    states: &[Vec<Scalar<'t>>],
    zeta: &ZetaNodes<'t>,
    t: usize,
) -> Result<Scalar<'t>> {
    let tape = zeta.eta.tape();
    match phi {
        StlAst::Pred { h } => {
            let time = tape.constant(t as f64);
            let env = pred_env(names, &states[t], time);
            h.eval_in(&env, &|c| tape.constant(c))
        }
        StlAst::And { left, right } => {
            let l = cbf_rec(left, names, states, zeta, t)?;
            let r = cbf_rec(right, names, states, zeta, t)?;
            softmin(&[l, r], zeta.eta)
        }
        StlAst::Or {
            left,
            right,
            node_id,
        } => {
            let l = cbf_rec(left, names, states, zeta, t)?;
            let r = cbf_rec(right, names, states, zeta, t)?;
            let betas = node_betas(zeta, *node_id, 2)?;
            weighted_average(&[l, r], betas, zeta.form)
        }
        StlAst::Always { a, b, child } => {
            let mut values = Vec::with_capacity(b - a + 1);
            for k in *a..=*b {
                values.push(cbf_rec(child, names, states, zeta, t + k)?);
            }
            softmin(&values, zeta.eta)
        }
        StlAst::Eventually {
            a,
            b,
            child,
            node_id,
        } => {
            let mut values = Vec::with_capacity(b - a + 1);
            for k in *a..=*b {
                values.push(cbf_rec(child, names, states, zeta, t + k)?);
            }
            let betas = node_betas(zeta, *node_id, values.len())?;
            weighted_average(&values, betas, zeta.form)
        }
        StlAst::Until {
            a,
            b,
            left,
            right,
            node_id,
        } => {
            // term for offset k: softmin of (phi2 at t+k) with phi1 at all
            // of t..t+k-1; for k = 0 the prefix is empty and the term is
            // phi2 alone
            let mut terms = Vec::with_capacity(b - a + 1);
            for k in *a..=*b {
                let mut values = Vec::with_capacity(k + 1);
                values.push(cbf_rec(right, names, states, zeta, t + k)?);
                for j in 0..k {
                    values.push(cbf_rec(left, names, states, zeta, t + j)?);
                }
                terms.push(softmin(&values, zeta.eta)?);
            }
            let betas = node_betas(zeta, *node_id, terms.len())?;
            weighted_average(&terms, betas, zeta.form)
        }
    }
}

fn node_betas<'z, 't>(
    zeta: &'z ZetaNodes<'t>,
    node_id: u32,
    expected: usize,
) -> Result<&'z [Scalar<'t>]> {
    let betas = zeta
        .betas
        .get(&node_id)
        .ok_or(Error::UnboundNode(node_id))?;
    if betas.len() != expected {
        return Err(Error::BetaLength {
            node: node_id,
            got: betas.len(),
            expected,
        });
    }
    Ok(betas)
}

/// Numeric smooth robustness: evaluates [`stl2cbf`] on a throwaway tape,
/// with the smoothing parameters held constant.
pub fn smooth_robustness(
    phi: &StlAst,
    names: &[String],
    states: &[Vec<f64>],
    zeta: &SmoothParams,
) -> Result<f64> {
    let tape = Tape::new();
    let sym: Vec<Vec<Scalar<'_>>> = states
        .iter()
        .map(|row| row.iter().map(|&v| tape.constant(v)).collect())
        .collect();
    let z = zeta.lift_const(&tape);
    Ok(stl2cbf(phi, names, &sym, &z)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::{InitScheme, WtAvgForm};
    use crate::stl::parse_stl;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names1() -> Vec<String> {
        vec!["x".to_string()]
    }

    fn traj1(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn bool_sat_examples() {
        let names = names1();
        let states = traj1(&[1.0, 0.5, 2.0]);
        let g = parse_stl("G[0,2](x >= 0)", &["x"], 2).unwrap();
        assert!(bool_sat(&g, &names, &states, 0).unwrap());
        let f = parse_stl("F[0,2](x - 1.5 >= 0)", &["x"], 2).unwrap();
        assert!(bool_sat(&f, &names, &states, 0).unwrap());
        let u = parse_stl("(x >= 0) U[0,2] (x - 1.9 >= 0)", &["x"], 2).unwrap();
        assert!(bool_sat(&u, &names, &states, 0).unwrap());
        let u_unreachable = parse_stl("(x - 0.7 >= 0) U[0,2] (x - 1.9 >= 0)", &["x"], 2).unwrap();
        // phi2 only holds at k=2 but phi1 fails at j=1
        assert!(!bool_sat(&u_unreachable, &names, &states, 0).unwrap());
    }

    #[test]
    fn bool_sat_checks_horizon() {
        let names = names1();
        let states = traj1(&[1.0, 1.0]);
        let g = parse_stl("G[0,2](x >= 0)", &["x"], 2).unwrap();
        assert!(matches!(
            bool_sat(&g, &names, &states, 0),
            Err(Error::HorizonExceeded { .. })
        ));
        assert!(matches!(
            bool_sat(&parse_stl("x >= 0", &["x"], 2).unwrap(), &names, &states, 2),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn hard_robustness_examples() {
        let names = names1();
        let states = traj1(&[1.0, 0.5, 2.0]);
        let g = parse_stl("G[0,2](x >= 0)", &["x"], 2).unwrap();
        assert_eq!(hard_robustness(&g, &names, &states).unwrap(), 0.5);
        let f = parse_stl("F[0,2](x >= 0)", &["x"], 2).unwrap();
        assert_eq!(hard_robustness(&f, &names, &states).unwrap(), 2.0);
    }

    #[test]
    fn hard_robustness_until_by_enumeration() {
        let names = names1();
        let states = traj1(&[1.0, 0.5, 2.0]);
        let u = parse_stl("(x >= 0) U[0,2] (x - 1.9 >= 0)", &["x"], 2).unwrap();
        // k=0: min(-0.9) ; k=1: min(-1.4, 1.0) ; k=2: min(0.1, 1.0, 0.5)
        let got = hard_robustness(&u, &names, &states).unwrap();
        assert!((got - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reach_avoid_pinned_at_target_region() {
        let e1 = "1 - 2/3*((x-2)^2 + (y-8)^2)";
        let e2 = "1 - 2/3*((x-8)^2 + (y-2)^2)";
        let e3 = "1 - exp(1 - 2/3*((x-5)^2 + (y-5)^2))";
        let text = format!("(F[1,10]({e1} >= 0) || F[1,10]({e2} >= 0)) && G[1,20]({e3} >= 0)");
        let phi = parse_stl(&text, &["x", "y"], 20).unwrap();
        let names = vec!["x".to_string(), "y".to_string()];
        // trajectory parked at the first target's center, far from the
        // avoid region
        let states: Vec<Vec<f64>> = (0..=20).map(|_| vec![2.0, 8.0]).collect();
        let rho = hard_robustness(&phi, &names, &states).unwrap();
        let avoid_margin = 1.0 - (1.0f64 - 2.0 / 3.0 * 18.0).exp();
        assert!(rho > 0.0);
        assert!((rho - 1.0f64.min(avoid_margin)).abs() < 1e-12);
        // the smooth surrogate certifies this trajectory once the
        // disjunctive weights favor the satisfied target and the softmin
        // is sharp enough to beat its ln(window)/eta gap
        let mut zeta = SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
        zeta.lambda = 3.0; // eta = 10
        *zeta.betas.get_mut(&0).unwrap() = vec![1.0, 0.0];
        let gamma = smooth_robustness(&phi, &names, &states, &zeta).unwrap();
        assert!(gamma > 0.0 && gamma <= rho, "gamma {gamma}, rho {rho}");
    }

    #[test]
    fn cbf_of_single_predicate_is_transparent() {
        let phi = parse_stl("x - 0.3 >= 0", &["x"], 2).unwrap();
        let names = names1();
        for lambda in [0.0, 1.0, 3.0] {
            let mut zeta = SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
            zeta.lambda = lambda;
            let got = smooth_robustness(&phi, &names, &traj1(&[1.0, 1.0, 1.0]), &zeta).unwrap();
            assert_eq!(got, 0.7);
        }
    }

    #[test]
    fn cbf_of_always_equal_values() {
        let phi = parse_stl("G[0,1](x >= 0)", &["x"], 1).unwrap();
        let names = names1();
        let mut zeta = SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
        zeta.lambda = 0.0; // eta = 1
        let got = smooth_robustness(&phi, &names, &traj1(&[1.0, 1.0]), &zeta).unwrap();
        assert!((got - (1.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn cbf_matches_table_one_style_gap() {
        // smooth robustness never exceeds the hard robustness
        let phi = parse_stl(
            "(F[1,5](x >= 0) || F[1,5](x - 1 >= 0)) && G[0,6](x + 2 >= 0)",
            &["x"],
            6,
        )
        .unwrap();
        let names = names1();
        let states = traj1(&[0.4, 0.2, 0.9, 1.4, 0.3, -0.1, 0.8]);
        let zeta = SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
        let smooth = smooth_robustness(&phi, &names, &states, &zeta).unwrap();
        let hard = hard_robustness(&phi, &names, &states).unwrap();
        assert!(smooth <= hard + 1e-12);
    }

    fn random_zeta(phi: &StlAst, rng: &mut ChaCha8Rng) -> SmoothParams {
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
        }
        zeta
    }

    #[test]
    fn smooth_is_lower_bound_and_sound_on_random_inputs() {
        let texts = [
            "G[0,3](x >= 0)",
            "F[1,4](x - 0.5 >= 0) || G[0,2](x + 0.5 >= 0)",
            "(x >= 0) U[0,4] (x - 1 >= 0)",
            "F[0,2](G[0,3](x >= 0)) && (x <= 0 || x - 0.2 >= 0)",
        ];
        let names = names1();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for text in texts {
            let phi = parse_stl(text, &["x"], 8).unwrap();
            for _ in 0..250 {
                let states = traj1(&(0..9).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
                let zeta = random_zeta(&phi, &mut rng);
                let smooth = smooth_robustness(&phi, &names, &states, &zeta).unwrap();
                let hard = hard_robustness(&phi, &names, &states).unwrap();
                assert!(
                    smooth <= hard + 1e-12,
                    "lower bound violated: {smooth} > {hard} for `{text}`"
                );
                if smooth > 0.0 {
                    assert!(
                        bool_sat(&phi, &names, &states, 0).unwrap(),
                        "positive smooth robustness without satisfaction for `{text}`"
                    );
                }
            }
        }
    }

    #[test]
    fn normalization_preserves_robustness() {
        // `h <= 0` and `-h >= 0` are the same predicate after parsing
        let names = names1();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let le = parse_stl("G[0,4]((x - 0.5)*(x + 1) <= 0)", &["x"], 4).unwrap();
        let ge = parse_stl("G[0,4](-((x - 0.5)*(x + 1)) >= 0)", &["x"], 4).unwrap();
        assert_eq!(le, ge);
        for _ in 0..200 {
            let states = traj1(&(0..5).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
            let a = hard_robustness(&le, &names, &states).unwrap();
            let b = hard_robustness(&ge, &names, &states).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unbound_smoothing_node_is_reported() {
        let phi = parse_stl("F[0,3](x >= 0)", &["x"], 5).unwrap();
        let mut zeta = SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
        zeta.betas.clear();
        let states = traj1(&[1.0; 6]);
        assert!(matches!(
            smooth_robustness(&phi, &names1(), &states, &zeta),
            Err(Error::UnboundNode(0))
        ));
    }

    #[test]
    fn hard_sign_matches_boolean_semantics() {
        let names = names1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = parse_stl(
            "(F[0,3](x - 0.5 >= 0) && G[0,4](x + 1 >= 0)) || (x <= 0)",
            &["x"],
            6,
        )
        .unwrap();
        for _ in 0..500 {
            let states = traj1(&(0..7).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
            let rho = hard_robustness(&phi, &names, &states).unwrap();
            if rho.abs() > 1e-9 {
                assert_eq!(
                    rho > 0.0,
                    bool_sat(&phi, &names, &states, 0).unwrap(),
                    "sign mismatch at rho = {rho}"
                );
            }
        }
    }

    #[test]
    fn smooth_is_monotone_in_eta_for_conjunctive_formulas() {
        let names = names1();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let texts = ["G[0,4](x >= 0)", "G[0,2](x - 0.1 >= 0) && G[1,5](x + 0.3 >= 0)"];
        for text in texts {
            let phi = parse_stl(text, &["x"], 6).unwrap();
            for _ in 0..100 {
                let states = traj1(&(0..7).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
                let hard = hard_robustness(&phi, &names, &states).unwrap();
                let mut previous = f64::NEG_INFINITY;
                for eta in [2.0, 10.0, 100.0] {
                    let mut zeta =
                        SmoothParams::init(&phi, WtAvgForm::Squared, InitScheme::Uniform, 0);
                    zeta.lambda = (eta - 1.0f64).sqrt();
                    let smooth = smooth_robustness(&phi, &names, &states, &zeta).unwrap();
                    assert!(smooth >= previous - 1e-12, "not monotone in eta");
                    assert!(smooth <= hard + 1e-12);
                    previous = smooth;
                }
                // at eta = 100 the gap is bounded by the softmin chain
                let gap_bound = chain_gap_bound(&phi, 100.0);
                assert!(hard - previous <= gap_bound + 1e-9);
            }
        }
    }

    /// Worst-case softmin gap accumulated along the formula structure.
    fn chain_gap_bound(phi: &StlAst, eta: f64) -> f64 {
        match phi {
            StlAst::Pred { .. } => 0.0,
            StlAst::And { left, right } => {
                chain_gap_bound(left, eta).max(chain_gap_bound(right, eta)) + 2f64.ln() / eta
            }
            StlAst::Or { left, right, .. } => {
                chain_gap_bound(left, eta).max(chain_gap_bound(right, eta))
            }
            StlAst::Always { a, b, child } => {
                chain_gap_bound(child, eta) + ((b - a + 1) as f64).ln() / eta
            }
            StlAst::Eventually { child, .. } => chain_gap_bound(child, eta),
            StlAst::Until { left, right, .. } => {
                chain_gap_bound(left, eta).max(chain_gap_bound(right, eta))
            }
        }
    }
}
