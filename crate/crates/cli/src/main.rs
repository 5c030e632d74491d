//! `stlforge`: parse/validate a project, train a controller, simulate
//! trajectories, evaluate robustness, and verify risk bounds.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime/domain failure,
//! 3 I/O failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stlforge_core::error::{Error, Result};
use stlforge_core::plant::{rollout, sample_init, sample_model, Trajectory};
use stlforge_core::policy::Checkpoint;
use stlforge_core::risk::{probabilistic_guarantee, risk_from_samples, robustness_samples};
use stlforge_core::semantics::{bool_sat, hard_robustness, smooth_robustness};
use stlforge_core::smooth::{InitScheme, SmoothParams};
use stlforge_core::trainer::{perf_reward, train};

use config::{Project, ProjectConfig};

#[derive(Parser)]
#[command(
    name = "stlforge",
    about = "STL robustness compilation, controller training, and risk verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Project configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker-thread count
    #[arg(long)]
    threads: Option<usize>,
    /// Base directory for relative output paths
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configuration and report the formula structure
    Parse {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a controller and write the checkpoint and training log
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Roll out a trained controller on fresh samples and export CSVs
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trained checkpoint (JSON)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of trajectories
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
    /// Evaluate a stored trajectory against the configured formula
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory CSV (as written by `simulate`)
        #[arg(long)]
        trajectory: PathBuf,
        /// Checkpoint supplying the smoothing parameters; defaults to the
        /// uniform initialization when absent
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte-Carlo risk verification of a trained controller
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Trained checkpoint (JSON)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump the raw robustness samples to this CSV
        #[arg(long)]
        samples_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Domain(_) | Error::NonFiniteGradient { .. } | Error::DegenerateWeights => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .ok();
    }
}

fn load_project(common: &CommonArgs) -> Result<Project> {
    init_threads(common.threads);
    let cfg = ProjectConfig::load(&common.config)?;
    cfg.build(common.seed, common.out.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { common } => cmd_parse(&common),
        Command::Train { common } => cmd_train(&common),
        Command::Simulate {
            common,
            checkpoint,
            count,
        } => cmd_simulate(&common, &checkpoint, count),
        Command::Eval {
            common,
            trajectory,
            checkpoint,
        } => cmd_eval(&common, &trajectory, checkpoint.as_deref()),
        Command::Verify {
            common,
            checkpoint,
            samples_out,
        } => cmd_verify(&common, &checkpoint, samples_out.as_deref()),
    }
}

fn cmd_parse(common: &CommonArgs) -> Result<()> {
    let project = load_project(common)?;
    let train = &project.train;
    println!("configuration OK: {}", project.name);
    println!(
        "dynamics: {} states, {} controls, {} uncertainty parameters",
        train.dynamics.state_dim(),
        train.dynamics.control_dim(),
        train.dynamics.uncertainty.len()
    );
    println!("horizon: {}", train.horizon);
    println!("formula: {}", train.formula.to_text());
    println!("reward: {}", train.reward.to_text());
    println!(
        "controller: {:?} with {} parameters",
        train.layer_dims,
        stlforge_core::Policy::init(&train.layer_dims, train.squash.clone(), train.horizon, 0)
            .param_count()
    );
    println!("disjunctive nodes:");
    let nodes = train.formula.disjunctive_nodes();
    let mut total = 0usize;
    for node in &nodes {
        let window = node
            .window
            .map(|(a, b)| format!("[{a},{b}]"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "  node {:>3}  {:<10}  window {:<8}  beta slots {:>3}  {}",
            node.node_id,
            format!("{:?}", node.kind).to_lowercase(),
            window,
            node.beta_len,
            node.text
        );
        total += node.beta_len;
    }
    println!("total beta slots: {total}");
    Ok(())
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let project = load_project(common)?;
    let cfg = &project.train;
    eprintln!(
        "training {} ({} iterations, margin {}, mode {:?}, seed {})",
        project.name, cfg.iterations, cfg.rho, cfg.mode, cfg.seed
    );
    let start = std::time::Instant::now();
    let outcome = train(cfg)?;
    let secs = start.elapsed().as_secs_f64();

    let mut counts = std::collections::BTreeMap::new();
    for r in &outcome.log.records {
        *counts.entry(r.branch.as_str()).or_insert(0usize) += 1;
    }
    let tail = outcome.log.records.len().saturating_sub(100);
    let recent_gamma: Vec<f64> = outcome.log.records[tail..]
        .iter()
        .map(|r| r.gamma_x0)
        .collect();
    let mean_recent = recent_gamma.iter().sum::<f64>() / recent_gamma.len().max(1) as f64;
    eprintln!(
        "trained in {secs:.1}s; branches {:?}; mean probe robustness over last {} iters: {mean_recent:.4}; eta {:.3}",
        counts,
        recent_gamma.len(),
        outcome.zeta.eta()
    );

    ensure_parent(&project.paths.checkpoint_out)?;
    Checkpoint::new(&outcome.policy, &outcome.zeta, cfg.seed).save(&project.paths.checkpoint_out)?;
    ensure_parent(&project.paths.log_out)?;
    outcome.log.write_csv(&project.paths.log_out)?;
    println!(
        "checkpoint: {}\nlog: {}",
        project.paths.checkpoint_out.display(),
        project.paths.log_out.display()
    );
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Loads a checkpoint and checks it fits the project: plant dimensions,
/// horizon, and the formula's disjunctive nodes (ids and window sizes)
/// must all match.
fn load_checkpoint(path: &Path, project: &Project) -> Result<(stlforge_core::Policy, SmoothParams)> {
    let ck = Checkpoint::load(path)?;
    let train = &project.train;
    if ck.horizon != train.horizon {
        return Err(Error::Config(format!(
            "checkpoint horizon {} does not match configured horizon {}",
            ck.horizon, train.horizon
        )));
    }
    let nodes = train.formula.disjunctive_nodes();
    if nodes.len() != ck.zeta.betas.len() {
        return Err(Error::Config(format!(
            "checkpoint smoothing weights cover {} disjunctive nodes but the formula has {}",
            ck.zeta.betas.len(),
            nodes.len()
        )));
    }
    for node in &nodes {
        match ck.zeta.betas.get(&node.node_id) {
            Some(b) if b.len() == node.beta_len => {}
            _ => {
                return Err(Error::Config(format!(
                    "checkpoint does not match the formula at node {} (was it trained on a different specification?)",
                    node.node_id
                )))
            }
        }
    }
    let (policy, zeta) = ck.into_parts(train.wtavg_form)?;
    if policy.state_dim() != train.dynamics.state_dim()
        || policy.control_dim() != train.dynamics.control_dim()
    {
        return Err(Error::Config(
            "checkpoint controller dimensions do not match the plant".into(),
        ));
    }
    Ok((policy, zeta))
}

fn cmd_simulate(common: &CommonArgs, checkpoint: &Path, count: usize) -> Result<()> {
    let project = load_project(common)?;
    let (policy, zeta) = load_checkpoint(checkpoint, &project)?;
    let cfg = &project.train;
    let seed = common.seed.unwrap_or(0);

    std::fs::create_dir_all(&project.paths.traj_out)?;
    let summary_path = project.paths.traj_out.join("summary.csv");
    let mut summary = String::from("index,J,Gamma,rho,satisfied\n");
    let mut satisfied = 0usize;
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x0 = sample_init(&cfg.init_set, &mut rng);
        let delta = sample_model(&cfg.dynamics, &mut rng);
        let traj = rollout(&cfg.dynamics, &policy, &x0, &delta, cfg.horizon)?;
        let names = &cfg.dynamics.state_names;
        let j = perf_reward(&traj.states, names, &cfg.reward, cfg.gamma, &|c| c)?;
        let gamma = smooth_robustness(&cfg.formula, names, &traj.states, &zeta)?;
        let rho = hard_robustness(&cfg.formula, names, &traj.states)?;
        if rho > 0.0 {
            satisfied += 1;
        }
        traj.write_csv(project.paths.traj_out.join(format!("traj_{i:05}.csv")))?;
        summary.push_str(&format!(
            "{i},{j:.16e},{gamma:.16e},{rho:.16e},{}\n",
            rho > 0.0
        ));
    }
    std::fs::write(&summary_path, summary)?;
    println!(
        "wrote {count} trajectories to {} (satisfied: {satisfied}/{count})",
        project.paths.traj_out.display()
    );
    Ok(())
}

fn cmd_eval(common: &CommonArgs, trajectory: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let project = load_project(common)?;
    let cfg = &project.train;
    let states = Trajectory::read_states_csv(trajectory)?;
    if states[0].len() != cfg.dynamics.state_dim() {
        return Err(Error::Config(format!(
            "trajectory has {} state columns but the plant has {} states",
            states[0].len(),
            cfg.dynamics.state_dim()
        )));
    }
    let zeta = match checkpoint {
        Some(path) => load_checkpoint(path, &project)?.1,
        None => SmoothParams::init(&cfg.formula, cfg.wtavg_form, InitScheme::Uniform, 0),
    };
    let names = &cfg.dynamics.state_names;
    let satisfied = bool_sat(&cfg.formula, names, &states, 0)?;
    let rho = hard_robustness(&cfg.formula, names, &states)?;
    let gamma = smooth_robustness(&cfg.formula, names, &states, &zeta)?;
    println!(
        "{}",
        serde_json::json!({
            "satisfied": satisfied,
            "hard_robustness": rho,
            "smooth_robustness": gamma,
        })
    );
    Ok(())
}

fn cmd_verify(common: &CommonArgs, checkpoint: &Path, samples_out: Option<&Path>) -> Result<()> {
    let project = load_project(common)?;
    let (policy, _zeta) = load_checkpoint(checkpoint, &project)?;
    let cfg = &project.train;
    let seed = common.seed.unwrap_or(project.risk.seed);
    let n = project.risk.n;

    let samples = robustness_samples(
        &cfg.formula,
        &policy,
        &cfg.dynamics,
        &cfg.init_set,
        cfg.horizon,
        n,
        seed,
    )?;
    let report = risk_from_samples(&samples, &project.risk.betas, seed)?;

    if let Some(path) = samples_out {
        ensure_parent(path)?;
        stlforge_core::risk::write_samples_csv(&samples, path)?;
    }
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("risk_report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        eprintln!("report written to {}", path.display());
    }
    for entry in &report.entries {
        let g = probabilistic_guarantee(&report, entry.beta)?;
        eprintln!("beta {:.3}: {}", entry.beta, g);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
