use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use quadbench::catch::{self, CatchLevel};
use quadbench::config::{FileConfig, RunConfig};
use quadbench::env::{Morphology, SeedStream, TaskKind};
use quadbench::gc::{FeedforwardMode, GcGains};
use quadbench::harness::{self, Aggregate, GcAgent, PolicyAgent, ReferenceSource};
use quadbench::io::{self, SummaryRow};
use quadbench::policy::{PolicyNet, BASE_OBS_DIM};
use quadbench::sim::DynamicsFidelity;
use quadbench::{ppo, sweep, tuner, Error, Result};

#[derive(Parser)]
#[command(name = "quadbench", version, about = "Geometric vs learned controller benchmark for quadrotors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the eight GC gains on the task distribution.
    Tune(Common),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a controller on held-out episodes.
    Eval(EvalArgs),
    /// Ball-catching success rates per time-to-catch.
    Catch(EvalArgs),
    /// Evaluate the full ablation grid from an artifact directory.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Hover,
    Lissajous,
    Ballcatch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Morph {
    Quad,
    Am,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ctrl {
    Gc,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ff {
    Ff,
    Pid,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fidelity {
    Simple,
    Realistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Analytic,
    Horizon,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long, value_enum)]
    morphology: Option<Morph>,
    #[arg(long, value_enum)]
    ff: Option<Ff>,
    #[arg(long, value_enum)]
    fidelity: Option<Fidelity>,
    /// Domain randomization in percent.
    #[arg(long, value_parser = ["0", "20", "40"])]
    dr: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat JSON config; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Where the GC takes reference derivatives from.
    #[arg(long, value_enum)]
    source: Option<Source>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    envs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "gc")]
    controller: Ctrl,
    /// GC gains JSON (defaults to the config file or the manual gains).
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Policy checkpoint for `--controller rl`.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Also write `trace_<seed>.csv` for every episode.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding tuned gains and policy checkpoints.
    #[arg(long)]
    artifacts: PathBuf,
}

fn resolve(c: &Common, default_task: TaskKind, default_morph: Morphology) -> Result<RunConfig> {
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut file = file;
    if let Some(t) = c.task {
        file.task = Some(match t {
            Task::Hover => TaskKind::Hover,
            Task::Lissajous => TaskKind::Lissajous,
            Task::Ballcatch => TaskKind::BallCatch,
        });
    }
    if let Some(m) = c.morphology {
        file.morphology = Some(match m {
            Morph::Quad => Morphology::Quadrotor,
            Morph::Am => Morphology::AerialManipulator,
        });
    }
    if let Some(f) = c.fidelity {
        file.fidelity = Some(match f {
            Fidelity::Simple => DynamicsFidelity::Simple,
            Fidelity::Realistic => DynamicsFidelity::Realistic,
        });
    }
    if let Some(ff) = c.ff {
        file.ff = Some(match ff {
            Ff::Ff => FeedforwardMode::Ff,
            Ff::Pid => FeedforwardMode::Pid,
            Ff::None => FeedforwardMode::None,
        });
    }
    if let Some(s) = c.source {
        file.reference_source = Some(match s {
            Source::Analytic => ReferenceSource::Analytic,
            Source::Horizon => ReferenceSource::Horizon,
        });
    }
    if let Some(d) = &c.dr {
        file.dr_pct = Some(d.parse::<f64>().map_err(|e| Error::Config(e.to_string()))? / 100.0);
    }
    if let Some(n) = c.episodes {
        file.episodes = Some(n);
        file.catch_trials = Some(n);
    }
    if let Some(s) = c.seed {
        file.seed = Some(s);
    }
    file.resolve(default_task, default_morph)
}

fn print_aggregate(name: &str, a: &Aggregate) {
    println!(
        "{name}: avg_reward {:.3} ± {:.3} (median {:.3}, IQR {:.3}..{:.3}), gap {:.3}, pos_rmse {:.3}, yaw_rmse {:.3}, failed {}/{}",
        a.avg_reward.mean,
        a.avg_reward.std,
        a.avg_reward.median,
        a.avg_reward.q25,
        a.avg_reward.q75,
        a.gap.mean,
        a.pos_rmse.mean,
        a.yaw_rmse.mean,
        a.failures,
        a.episodes
    );
}

fn cmd_tune(c: &Common) -> Result<()> {
    let cfg = resolve(c, TaskKind::Hover, Morphology::Quadrotor)?;
    std::fs::create_dir_all(&c.out)?;
    let log = c.out.join("study.jsonl");
    let t0 = Instant::now();
    let (gains, study) = tuner::tune(&cfg.task, cfg.ff, cfg.reference_source, &cfg.tune, Some(&log))?;
    io::write_json(&c.out.join("gains.json"), &gains)?;
    let best = study.best().map(|t| t.score()).unwrap_or(f64::NEG_INFINITY);
    println!("best objective {best:.4} after {} trials ({:.1} s)", study.history.len(), t0.elapsed().as_secs_f64());
    println!("{}", serde_json::to_string_pretty(&gains)?);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, TaskKind::Hover, Morphology::Quadrotor)?;
    if let Some(u) = a.updates {
        cfg.train.n_updates = u;
    }
    if let Some(n) = a.envs {
        cfg.train.n_envs = n;
    }
    if a.common.ff.is_some() {
        cfg.train.use_horizon = cfg.ff.uses_feedforward();
    }
    let t0 = Instant::now();
    let out = ppo::train(&cfg.task, &cfg.train, Some(&a.common.out), &mut |row, stats| {
        if let Some(e) = row.eval_avg_reward {
            println!(
                "update {:4} step {:9} batch reward {:7.3} eval {:7.3} kl {:.4} ({:.0} s)",
                row.update,
                row.global_step,
                row.mean_batch_reward,
                e,
                stats.approx_kl,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("best validation avg_reward {:.3}; checkpoint in {}", out.best_eval, a.common.out.join("policy.json").display());
    Ok(())
}

fn load_gains(path: Option<&Path>, cfg: &RunConfig) -> Result<GcGains> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(cfg.gains),
    }
}

fn policy_agent(path: Option<&Path>, cfg: &RunConfig) -> Result<PolicyAgent> {
    let p = path.ok_or_else(|| Error::Config("--policy is required with --controller rl".into()))?;
    let net = PolicyNet::load(p)?;
    let use_horizon = net.input_dim() > BASE_OBS_DIM;
    let mut agent = PolicyAgent::new(net, &cfg.task, use_horizon);
    agent.frame = cfg.train.frame;
    Ok(agent)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common, TaskKind::Hover, Morphology::Quadrotor)?;
    let seeds = harness::seeds(&cfg.task, SeedStream::Eval, cfg.task.episodes);
    let (name, results) = match a.controller {
        Ctrl::Gc => {
            let agent = GcAgent::new(load_gains(a.gains.as_deref(), &cfg)?, cfg.ff, cfg.reference_source, &cfg.task);
            (agent.label.clone(), harness::run_many(&cfg.task, &agent, &seeds)?)
        }
        Ctrl::Rl => {
            let agent = policy_agent(a.policy.as_deref(), &cfg)?;
            (agent.label.clone(), harness::run_many(&cfg.task, &agent, &seeds)?)
        }
    };
    let task = cfg.task.kind.label();
    let rows: Vec<SummaryRow> = results.iter().map(|r| SummaryRow::from_result(r, &name, task)).collect();
    io::write_summary(&a.common.out.join("summary.csv"), &rows)?;
    if a.traces {
        for r in &results {
            io::write_trace(&a.common.out.join(format!("trace_{}.csv", r.seed)), &r.trace)?;
        }
    }
    let agg = harness::aggregate(&results)?;
    io::write_json(&a.common.out.join("aggregate.json"), &agg)?;
    print_aggregate(&name, &agg);
    Ok(())
}

fn write_catch(path: &Path, levels: &[CatchLevel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in levels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_catch(a: &EvalArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, TaskKind::BallCatch, Morphology::AerialManipulator)?;
    cfg.task.kind = TaskKind::BallCatch;
    let (levels, _) = match a.controller {
        Ctrl::Gc => {
            let agent = GcAgent::new(load_gains(a.gains.as_deref(), &cfg)?, cfg.ff, cfg.reference_source, &cfg.task);
            catch::run_ball_catch(&cfg.task, &cfg.catch, &agent)?
        }
        Ctrl::Rl => catch::run_ball_catch(&cfg.task, &cfg.catch, &policy_agent(a.policy.as_deref(), &cfg)?)?,
    };
    std::fs::create_dir_all(&a.common.out)?;
    write_catch(&a.common.out.join("catch.csv"), &levels)?;
    for l in &levels {
        println!("time-to-catch {:.2} s: {}/{} caught ({:.2})", l.time_to_catch, l.catches, l.attempts, l.success_rate);
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = resolve(&a.common, TaskKind::Hover, Morphology::Quadrotor)?;
    let (rows, summary) = sweep::run_sweep(&cfg.task, &a.artifacts, cfg.reference_source, cfg.task.episodes)?;
    sweep::write_sweep(&a.common.out.join("sweep.csv"), &rows)?;
    io::write_summary(&a.common.out.join("summary.csv"), &summary)?;
    for r in &rows {
        match (r.avg_reward_mean, r.gap_median) {
            (Some(m), Some(g)) => println!("{:<24} on {:<9} avg_reward {m:7.3} median gap {g:.3}", r.name, r.eval_task),
            _ => println!("{:<24} on {:<9} absent", r.name, r.eval_task),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Tune(c) => cmd_tune(c),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Catch(a) => cmd_catch(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
