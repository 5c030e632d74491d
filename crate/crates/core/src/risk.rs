//! Monte-Carlo risk-aware verification.
//!
//! Draws `(x0, delta)` uniformly, rolls out the closed loop, and computes
//! the hard robustness `Z` of every trajectory. The Value-at-Risk at
//! confidence `beta` is the nearest-rank `beta`-percentile of `-Z`
//! (rank `ceil(beta * N)` of the ascending sort), and the conditional
//! Value-at-Risk is the mean of the closed upper tail `{-Z : -Z >= VaR}`.
//! Reports carry the negated quantities, which read as probabilistic lower
//! bounds on robustness: with probability at least `beta`, robustness is
//! at least `-VaR`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{rollout, sample_init, sample_model, DynamicsSpec, InitSet};
use crate::policy::Policy;
use crate::semantics::hard_robustness;
use crate::stl::StlAst;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub beta: f64,
    /// `-VaR_beta(-Z)`: probabilistic lower bound on robustness.
    pub neg_var: f64,
    /// `-CVaR_beta(-Z)`; never exceeds `neg_var`.
    pub neg_cvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Fraction of samples with positive robustness.
    pub satisfaction_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfigEcho {
    pub n: usize,
    pub betas: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config: RiskConfigEcho,
    pub entries: Vec<RiskEntry>,
    pub summary: SampleSummary,
}

/// Robustness of `n` independent uniform `(x0, delta)` rollouts.
/// Per-sample RNG streams split deterministically from `seed`; the result
/// does not depend on the worker count.
pub fn robustness_samples(
    phi: &StlAst,
    policy: &Policy,
    dynamics: &DynamicsSpec,
    init: &InitSet,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x0 = sample_init(init, &mut rng);
            let delta = sample_model(dynamics, &mut rng);
            let traj = rollout(dynamics, policy, &x0, &delta, horizon)?;
            hard_robustness(phi, &dynamics.state_names, &traj.states)
        })
        .collect()
}

/// Builds a report from robustness samples `Z`.
pub fn risk_from_samples(samples: &[f64], betas: &[f64], seed: u64) -> Result<RiskReport> {
    if samples.is_empty() {
        return Err(Error::EmptyList);
    }
    for beta in betas {
        if !(*beta > 0.0 && *beta < 1.0) {
            return Err(Error::Config(format!(
                "confidence threshold {beta} must lie in (0, 1)"
            )));
        }
    }
    let n = samples.len();
    let mut negated: Vec<f64> = samples.iter().map(|z| -z).collect();
    negated.sort_unstable_by(f64::total_cmp);

    let mut entries = Vec::with_capacity(betas.len());
    for &beta in betas {
        let rank = (beta * n as f64).ceil() as usize;
        let rank = rank.clamp(1, n);
        let var = negated[rank - 1];
        // closed tail: every sample at or above the VaR, including ties
        // below the rank position
        let tail_start = negated.partition_point(|v| *v < var);
        let tail = &negated[tail_start..];
        // every tail element is >= var, so the exact mean is too; guard
        // the invariant against summation rounding
        let cvar = (tail.iter().sum::<f64>() / tail.len() as f64).max(var);
        entries.push(RiskEntry {
            beta,
            neg_var: -var,
            neg_cvar: -cvar,
        });
    }

    let summary = SampleSummary {
        min: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: samples.iter().sum::<f64>() / n as f64,
        satisfaction_rate: samples.iter().filter(|z| **z > 0.0).count() as f64 / n as f64,
    };

    Ok(RiskReport {
        config: RiskConfigEcho {
            n,
            betas: betas.to_vec(),
            seed,
        },
        entries,
        summary,
    })
}

/// Full Monte-Carlo estimate. `n` below 1000 is rejected: quantile
/// estimates from tiny runs are noise.
#[allow(clippy::too_many_arguments)]
pub fn estimate_risk(
    phi: &StlAst,
    policy: &Policy,
    dynamics: &DynamicsSpec,
    init: &InitSet,
    horizon: usize,
    n: usize,
    betas: &[f64],
    seed: u64,
) -> Result<RiskReport> {
    if n < 1000 {
        return Err(Error::Config(format!(
            "risk estimation needs at least 1000 samples, got {n}"
        )));
    }
    let samples = robustness_samples(phi, policy, dynamics, init, horizon, n, seed)?;
    risk_from_samples(&samples, betas, seed)
}

/// One probabilistic bound read off a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub beta: f64,
    /// Lower bound: robustness is at least this with probability `beta`.
    pub robustness_bound: f64,
}

impl std::fmt::Display for Guarantee {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "robustness >= {} with probability >= {}",
            self.robustness_bound, self.beta
        )
    }
}

pub fn probabilistic_guarantee(report: &RiskReport, beta: f64) -> Result<Guarantee> {
    let entry = report
        .entries
        .iter()
        .find(|e| e.beta == beta)
        .ok_or(Error::BetaNotFound(beta))?;
    Ok(Guarantee {
        beta,
        robustness_bound: entry.neg_var,
    })
}

/// Raw-sample dump, one robustness value per row.
pub fn write_samples_csv(samples: &[f64], path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write as _;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "rho")?;
    for z in samples {
        writeln!(file, "{z:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        // -Z takes the values 1..=100
        let samples: Vec<f64> = (1..=100).map(|k| -(k as f64)).collect();
        let report = risk_from_samples(&samples, &[0.95], 0).unwrap();
        let e = &report.entries[0];
        assert_eq!(e.neg_var, -95.0);
        assert_eq!(e.neg_cvar, -97.5);
    }

    #[test]
    fn constant_samples_collapse_var_and_cvar() {
        let samples = vec![0.37; 500];
        let report = risk_from_samples(&samples, &[0.5, 0.95, 0.999], 0).unwrap();
        for e in &report.entries {
            assert_eq!(e.neg_var, 0.37);
            assert_eq!(e.neg_cvar, 0.37);
        }
    }

    #[test]
    fn cvar_dominates_var_and_var_is_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let betas = [0.5, 0.9, 0.95, 0.98, 0.99, 0.999];
        let report = risk_from_samples(&samples, &betas, 0).unwrap();
        let mut last_neg_var = f64::INFINITY;
        for e in &report.entries {
            assert!(e.neg_cvar <= e.neg_var + 1e-15);
            // VaR of -Z grows with beta, so the negated bound shrinks
            assert!(e.neg_var <= last_neg_var + 1e-15);
            last_neg_var = e.neg_var;
        }
    }

    #[test]
    fn uniform_quantile_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        // -Z ~ U(0,1)
        let samples: Vec<f64> = (0..100_000).map(|_| -rng.gen_range(0.0..1.0)).collect();
        let report = risk_from_samples(&samples, &[0.95, 0.98, 0.99], 0).unwrap();
        for e in &report.entries {
            let var = -e.neg_var;
            assert!(
                (var - e.beta).abs() < 0.01,
                "VaR {} far from beta {}",
                var,
                e.beta
            );
        }
    }

    #[test]
    fn invalid_beta_is_rejected() {
        let samples = vec![1.0; 1000];
        assert!(risk_from_samples(&samples, &[1.0], 0).is_err());
        assert!(risk_from_samples(&samples, &[0.0], 0).is_err());
        assert!(risk_from_samples(&samples, &[-0.5], 0).is_err());
    }

    #[test]
    fn guarantee_lookup() {
        let samples: Vec<f64> = (1..=100).map(|k| -(k as f64)).collect();
        let report = risk_from_samples(&samples, &[0.95], 0).unwrap();
        let g = probabilistic_guarantee(&report, 0.95).unwrap();
        assert_eq!(g.robustness_bound, -95.0);
        assert!(probabilistic_guarantee(&report, 0.5).is_err());
        assert!(g.to_string().contains("probability"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let samples: Vec<f64> = (0..2000).map(|k| (k as f64) / 1999.0 - 0.3).collect();
        let report = risk_from_samples(&samples, &[0.95, 0.99], 7).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: RiskReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
