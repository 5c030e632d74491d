//! Project configuration: one JSON file describing the plant, the mission
//! formula, the reward, the controller shape, training hyperparameters,
//! output paths, and the verification section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stlforge_core::error::{Error, Result};
use stlforge_core::expr::parse_expr;
use stlforge_core::plant::{DynamicsSpec, InitSet, UncertaintyParam};
use stlforge_core::policy::Squash;
use stlforge_core::smooth::{InitScheme, WtAvgForm};
use stlforge_core::stl::parse_stl;
use stlforge_core::trainer::{AdamParams, TrainConfig, TrainMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dynamics: DynamicsConfig,
    pub init_set: InitSetConfig,
    pub horizon: usize,
    pub formula: String,
    pub reward: String,
    pub controller: ControllerConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub paths: PathsSection,
    pub risk: RiskSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsConfig {
    Preset(String),
    Custom(CustomDynamics),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomDynamics {
    pub states: Vec<String>,
    pub controls: Vec<String>,
    #[serde(default)]
    pub uncertainty: Vec<UncertaintyConfig>,
    pub updates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSetConfig {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub layer_dims: Vec<usize>,
    pub squash: Vec<Squash>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub rho: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub wtavg_form: WtAvgForm,
    #[serde(default)]
    pub adam: AdamSection,
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    #[serde(default = "default_lagrange_weight")]
    pub lagrange_weight: f64,
}

fn default_mode() -> TrainMode {
    TrainMode::Switching
}

fn default_lagrange_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamSection {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSection {
    fn default() -> Self {
        let d = AdamParams::default();
        AdamSection {
            alpha: d.alpha,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub checkpoint_out: PathBuf,
    pub log_out: PathBuf,
    pub traj_out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            checkpoint_out: "out/checkpoint.json".into(),
            log_out: "out/train_log.csv".into(),
            traj_out: "out/trajectories".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskSection {
    pub n: usize,
    pub betas: Vec<f64>,
    pub seed: u64,
}

/// A fully parsed and validated project.
pub struct Project {
    pub name: String,
    pub train: TrainConfig,
    pub risk: RiskSection,
    pub paths: PathsSection,
}

impl ProjectConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ProjectConfig> {
        let text = std::fs::read_to_string(&path)?;
        if text.trim().is_empty() {
            return Err(Error::Config(format!(
                "configuration file {} is empty",
                path.as_ref().display()
            )));
        }
        Ok(serde_json::from_str(&text)?)
    }

    /// Validates everything and assembles the core training configuration.
    /// `seed_override` replaces the configured training seed;
    /// `out_base` re-roots relative output paths.
    pub fn build(&self, seed_override: Option<u64>, out_base: Option<&Path>) -> Result<Project> {
        let dynamics = match &self.dynamics {
            DynamicsConfig::Preset(name) => match name.as_str() {
                "unicycle" => DynamicsSpec::unicycle(),
                "quadrotor" => DynamicsSpec::quadrotor(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown dynamics preset `{other}` (available: unicycle, quadrotor)"
                    )))
                }
            },
            DynamicsConfig::Custom(custom) => {
                let mut vars: Vec<&str> = custom.states.iter().map(String::as_str).collect();
                vars.extend(custom.controls.iter().map(String::as_str));
                vars.extend(custom.uncertainty.iter().map(|u| u.name.as_str()));
                let updates = custom
                    .updates
                    .iter()
                    .map(|text| parse_expr(text, &vars))
                    .collect::<Result<Vec<_>>>()?;
                DynamicsSpec::custom(
                    custom.states.clone(),
                    custom.controls.clone(),
                    custom
                        .uncertainty
                        .iter()
                        .map(|u| {
                            if u.lo > u.hi {
                                return Err(Error::Config(format!(
                                    "uncertainty `{}` has lo > hi",
                                    u.name
                                )));
                            }
                            Ok(UncertaintyParam {
                                name: u.name.clone(),
                                lo: u.lo,
                                hi: u.hi,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                    updates,
                )?
            }
        };

        let init_set = match &self.init_set {
            InitSetConfig::Box { lo, hi } => InitSet::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            InitSetConfig::Ball { center, radius } => InitSet::Ball {
                center: center.clone(),
                radius: *radius,
            },
        };

        let vars: Vec<&str> = dynamics
            .state_names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once("t"))
            .collect();
        let formula = parse_stl(&self.formula, &vars, self.horizon)?;
        let reward = parse_expr(&self.reward, &vars)?;

        let t = &self.train;
        if t.rho < 0.0 {
            return Err(Error::Config("robustness margin rho must be >= 0".into()));
        }
        if self.risk.n < 1000 {
            return Err(Error::Config(
                "risk section needs at least 1000 samples".into(),
            ));
        }
        for beta in &self.risk.betas {
            if !(*beta > 0.0 && *beta < 1.0) {
                return Err(Error::Config(format!(
                    "confidence threshold {beta} must lie in (0, 1)"
                )));
            }
        }

        let train = TrainConfig {
            rho: t.rho,
            tau: t.tau,
            gamma: t.gamma,
            horizon: self.horizon,
            batch_size: t.batch_size,
            iterations: t.iterations,
            adam: AdamParams {
                alpha: t.adam.alpha,
                beta1: t.adam.beta1,
                beta2: t.adam.beta2,
                epsilon: t.adam.epsilon,
            },
            seed: seed_override.unwrap_or(t.seed),
            wtavg_form: t.wtavg_form,
            init_scheme: InitScheme::Uniform,
            reward,
            formula,
            dynamics,
            init_set,
            layer_dims: self.controller.layer_dims.clone(),
            squash: self.controller.squash.clone(),
            mode: t.mode,
            lagrange_weight: t.lagrange_weight,
            log_batch_norms: false,
        };
        train.validate_structure()?;

        let mut paths = self.paths.clone();
        if let Some(base) = out_base {
            for p in [
                &mut paths.checkpoint_out,
                &mut paths.log_out,
                &mut paths.traj_out,
            ] {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }

        Ok(Project {
            name: self
                .name
                .clone()
                .unwrap_or_else(|| "unnamed project".to_string()),
            train,
            risk: self.risk.clone(),
            paths,
        })
    }
}
