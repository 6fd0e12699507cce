//! Command-line front end: training, evaluation, the chasing game,
//! gradient checks, and score-landscape export.
//!
//! Every artifact-producing command writes into its own directory under
//! the output root (`--out`, else `$CAM_OUT_ROOT`, else `./runs`): the
//! resolved config and its hash, checkpoints, line-delimited telemetry
//! and trajectories, and delimited metric tables. Wall-clock timing goes
//! to a separate file so the deterministic artifacts stay byte-stable
//! across reruns.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cam_core::cam::{CamModel, CamState};
use cam_core::checkpoint::{load_checkpoint, save_model, Checkpoint};
use cam_core::config::{resolve, EvalSection, ResolvedConfig, RunConfig};
use cam_core::diffcore::{collect_grads, finite_diff_grad, max_rel_err, Tape};
use cam_core::error::{CamError, Result};
use cam_core::evaluator::{
    decision_timing, density_sweep, evaluate, export_landscape, invariance_analysis, run_chasing,
    sample_tasks, EvalConfig, EvalOutcome, Metrics,
};
use cam_core::graph::ego_graph;
use cam_core::rng::{rng_for, seed_for};
use cam_core::trainer::{
    cam_loss, cam_loss_tape, synthetic_batch, train, Label, TrainConfig, TrainEvent, Transition,
};
use cam_core::worlds::{sample_task, EnvKind, TaskMode, TaskSpec};

#[derive(Parser)]
#[command(name = "cam", version, about = "Admissibility-scored multi-agent navigation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoints plus telemetry.
    Train(TrainArgs),
    /// Evaluate a checkpoint on seeded navigation tasks.
    Eval(EvalArgs),
    /// Run the zero-shot chasing game on a checkpoint.
    Chase(ChaseArgs),
    /// Compare analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Export the score surface over two action dimensions.
    Landscape(LandscapeArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Run directory name; defaults to one derived from the command.
    #[arg(long)]
    run_name: Option<String>,
    /// Output root; falls back to $CAM_OUT_ROOT, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; per-environment defaults fill unset keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shorthand for --set train.env=<ENV>.
    #[arg(long)]
    env: Option<String>,
    /// Dotted-key override, e.g. train.episodes=500. Repeatable.
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config to evaluate under; its hash must match the checkpoint's.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accept a config whose hash disagrees with the checkpoint's.
    #[arg(long)]
    force: bool,
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[arg(long)]
    map_side: Option<f64>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Score through the subgraph decomposition.
    #[arg(long, overrides_with = "no_decomposition")]
    decomposition: bool,
    /// Score every ego graph directly.
    #[arg(long)]
    no_decomposition: bool,
    #[arg(long)]
    max_agent_edges: Option<usize>,
    #[arg(long)]
    max_obstacle_edges: Option<usize>,
    /// Agent counts for a density sweep, e.g. 4,8,16.
    #[arg(long, value_name = "LIST")]
    sweep_agents: Option<String>,
    /// Obstacle counts for a density sweep.
    #[arg(long, value_name = "LIST")]
    sweep_obstacles: Option<String>,
    /// Classify visited states and report invariance violations.
    #[arg(long)]
    invariance: bool,
    #[arg(long)]
    n_probe: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ChaseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    obstacles: usize,
    #[arg(long)]
    map_side: Option<f64>,
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, overrides_with = "no_decomposition")]
    decomposition: bool,
    #[arg(long)]
    no_decomposition: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    env: String,
    /// Independently initialized models to check.
    #[arg(long, default_value_t = 3)]
    models: usize,
    /// Transitions per random batch.
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    gnn_layers: usize,
    #[arg(long, default_value_t = 3)]
    agents: usize,
    #[arg(long, default_value_t = 3)]
    obstacles: usize,
    #[arg(long, default_value_t = 3.0)]
    map_side: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: corrupt one analytic gradient and expect failure.
    #[arg(long)]
    corrupt: bool,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw state vector for the integrator, e.g. 0.0,-1.7.
    #[arg(long)]
    state: Option<String>,
    /// Graph environments: sample the task with this seed and observe --agent.
    #[arg(long, default_value_t = 0)]
    task_seed: u64,
    #[arg(long, default_value_t = 3)]
    agents: usize,
    #[arg(long, default_value_t = 3)]
    obstacles: usize,
    #[arg(long, default_value_t = 3.0)]
    map_side: f64,
    #[arg(long, default_value_t = 0)]
    agent: usize,
    /// Two action dimensions to scan, e.g. 0,1.
    #[arg(long, default_value = "0,1")]
    dims: String,
    #[arg(long, default_value_t = 25)]
    resolution: usize,
    /// Values for the non-scanned action dimensions; default all zero.
    #[arg(long)]
    fixed: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Chase(a) => cmd_chase(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Landscape(a) => cmd_landscape(a),
    }
}

fn run_dir(out: &OutArgs, default_name: String) -> Result<PathBuf> {
    let root = out
        .out
        .clone()
        .or_else(|| std::env::var_os("CAM_OUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(out.run_name.clone().unwrap_or(default_name));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn resolve_from(path: Option<&Path>, env: Option<&str>, sets: &[String]) -> Result<ResolvedConfig> {
    let text = match path {
        Some(p) => Some(fs::read_to_string(p)?),
        None => None,
    };
    let mut overrides = Vec::with_capacity(sets.len() + 1);
    if let Some(e) = env {
        overrides.push(format!("train.env={e}"));
    }
    overrides.extend(sets.iter().cloned());
    resolve(text.as_deref(), &overrides)
}

fn write_run_files(
    dir: &Path,
    resolved: &ResolvedConfig,
    command: &str,
    config_path: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    fs::write(dir.join("config.toml"), &resolved.canonical)?;
    let provenance = serde_json::json!({
        "command": command,
        "hash": resolved.hash,
        "config": config_path.map(|p| p.display().to_string()),
        "overrides": overrides,
    });
    fs::write(dir.join("run.json"), format!("{provenance}\n"))?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let resolved = resolve_from(a.config.as_deref(), a.env.as_deref(), &a.set)?;
    let cfg = resolved.config.train.clone();
    let dir = run_dir(
        &a.out,
        format!("train-{}-{}", cfg.env.name(), &resolved.hash[..12]),
    )?;
    write_run_files(&dir, &resolved, "train", a.config.as_deref(), &a.set)?;

    let mut telemetry = BufWriter::new(File::create(dir.join("telemetry.jsonl"))?);
    let mut validation = BufWriter::new(File::create(dir.join("validation.jsonl"))?);
    let hash = resolved.hash.clone();
    let mut sink_err: Option<CamError> = None;
    let outcome = train(&cfg, |event| {
        if sink_err.is_some() {
            return;
        }
        let wrote = (|| -> Result<()> {
            match event {
                TrainEvent::Episode(rec) => {
                    let line = serde_json::to_string(rec)
                        .map_err(|e| CamError::Config(format!("telemetry encode: {e}")))?;
                    writeln!(telemetry, "{line}")?;
                }
                TrainEvent::Validation { round, success, model } => {
                    eprintln!("validation round {round}: success {success:.3}");
                    writeln!(validation, "{}", serde_json::json!({"round": round, "success": success}))?;
                    save_model(model, &hash, &dir.join(format!("ck-round-{round}.ckpt.json")))?;
                }
            }
            Ok(())
        })();
        if let Err(e) = wrote {
            sink_err = Some(e);
        }
    })?;
    telemetry.flush()?;
    validation.flush()?;
    if let Some(e) = sink_err {
        return Err(e);
    }

    save_model(&outcome.model, &hash, &dir.join("final.ckpt.json"))?;
    if outcome.diverged {
        return Err(CamError::Numeric(
            "training diverged; the last checkpoint is retained".into(),
        ));
    }
    println!(
        "trained {} episodes; artifacts in {}",
        outcome.telemetry.len(),
        dir.display()
    );
    Ok(())
}

/// Evaluation settings start from the config (given or defaulted for the
/// checkpoint's environment) and individual flags override fields.
fn eval_base(
    ck: &Checkpoint,
    config: Option<&Path>,
    force: bool,
    sets: &[String],
) -> Result<RunConfig> {
    let resolved = match config {
        Some(path) => {
            let r = resolve_from(Some(path), None, sets)?;
            if !force && r.hash != ck.config_hash {
                return Err(CamError::Config(format!(
                    "config hash {} does not match the checkpoint's {}; pass --force to evaluate anyway",
                    &r.hash[..12.min(r.hash.len())],
                    &ck.config_hash[..12.min(ck.config_hash.len())],
                )));
            }
            r
        }
        None => resolve_from(None, Some(ck.env.name()), sets)?,
    };
    if resolved.config.train.env != ck.env {
        return Err(CamError::Contract(format!(
            "checkpoint was trained on {}, config says {}",
            ck.env.name(),
            resolved.config.train.env.name()
        )));
    }
    Ok(resolved.config)
}

fn apply_eval_flags(sec: &mut EvalSection, a: &EvalArgs) {
    let EvalArgs {
        agents,
        obstacles,
        map_side,
        tasks,
        seed,
        candidates,
        horizon,
        max_agent_edges,
        max_obstacle_edges,
        n_probe,
        ..
    } = a;
    if let Some(v) = agents {
        sec.agents = *v;
    }
    if let Some(v) = obstacles {
        sec.obstacles = *v;
    }
    if let Some(v) = map_side {
        sec.map_side = *v;
    }
    if let Some(v) = tasks {
        sec.tasks = *v;
    }
    if let Some(v) = seed {
        sec.seed = *v;
    }
    if let Some(v) = candidates {
        sec.candidates = *v;
    }
    if let Some(v) = horizon {
        sec.horizon = *v;
    }
    if let Some(v) = max_agent_edges {
        sec.max_agent_edges = *v;
    }
    if let Some(v) = max_obstacle_edges {
        sec.max_obstacle_edges = *v;
    }
    if let Some(v) = n_probe {
        sec.n_probe = *v;
    }
    if a.decomposition {
        sec.decomposition = true;
    }
    if a.no_decomposition {
        sec.decomposition = false;
    }
}

fn eval_config(sec: &EvalSection) -> EvalConfig {
    EvalConfig {
        candidates: sec.candidates,
        horizon: sec.horizon,
        use_decomposition: sec.decomposition,
        caps: sec.caps(),
        master_seed: sec.seed,
    }
}

const METRICS_HEADER: &str = "agents,obstacles,tasks,safety_rate,mean_reward,success_rate";

fn metrics_row(agents: usize, obstacles: usize, m: &Metrics) -> String {
    format!(
        "{agents},{obstacles},{},{},{},{}",
        m.tasks, m.safety_rate, m.mean_reward, m.success_rate
    )
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_trajectories(dir: &Path, out: &EvalOutcome) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("trajectories.jsonl"))?);
    for episode in &out.episodes {
        for rec in &episode.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| CamError::Config(format!("trajectory encode: {e}")))?;
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_single_outcome(dir: &Path, sec: &EvalSection, out: &EvalOutcome) -> Result<()> {
    write_lines(
        &dir.join("metrics.csv"),
        &[
            METRICS_HEADER.to_string(),
            metrics_row(sec.agents, sec.obstacles, &out.metrics),
        ],
    )?;
    let t = decision_timing(&out.episodes);
    write_lines(
        &dir.join("timing.csv"),
        &[
            "mean_ms,p95_ms,samples".to_string(),
            format!("{},{},{}", t.mean_ms, t.p95_ms, t.samples),
        ],
    )?;
    write_trajectories(dir, out)
}

fn print_metrics(rows: &[(usize, usize, Metrics)]) {
    println!("{:>7} {:>9} {:>6} {:>12} {:>12} {:>12}", "agents", "obstacles", "tasks", "safety", "reward", "success");
    for (agents, obstacles, m) in rows {
        println!(
            "{agents:>7} {obstacles:>9} {:>6} {:>12.4} {:>12.4} {:>12.4}",
            m.tasks, m.safety_rate, m.mean_reward, m.success_rate
        );
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let mut run_cfg = eval_base(&ck, a.config.as_deref(), a.force, &a.set)?;
    apply_eval_flags(&mut run_cfg.eval, &a);
    run_cfg.eval.check()?;
    let resolved = cam_core::config::identity(run_cfg)?;
    let sec = resolved.config.eval.clone();
    let cfg = eval_config(&sec);
    let dir = run_dir(&a.out, format!("eval-{}-s{}", ck.env.name(), sec.seed))?;
    write_run_files(&dir, &resolved, "eval", a.config.as_deref(), &a.set)?;

    match (&a.sweep_agents, &a.sweep_obstacles) {
        (None, None) => {
            let spec = TaskSpec::navigation(ck.env, sec.agents, sec.obstacles, sec.map_side, sec.seed);
            let tasks = sample_tasks(&spec, sec.tasks)?;
            let out = evaluate(&model, &tasks, &cfg)?;
            write_single_outcome(&dir, &sec, &out)?;
            if a.invariance {
                let report = invariance_analysis(&model, &out.episodes, sec.n_probe, sec.seed)?;
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| CamError::Config(format!("report encode: {e}")))?;
                fs::write(dir.join("invariance.json"), text + "\n")?;
                eprintln!(
                    "invariance: {:.4} admissible, {:.4} boundary, {:.4} inadmissible, violation {:.4}",
                    report.admissible, report.boundary, report.inadmissible, report.violation
                );
            }
            print_metrics(&[(sec.agents, sec.obstacles, out.metrics)]);
        }
        _ => {
            let agent_counts = parse_usize_list(a.sweep_agents.as_deref(), sec.agents)?;
            let obstacle_counts = parse_usize_list(a.sweep_obstacles.as_deref(), sec.obstacles)?;
            let base = TaskSpec::navigation(ck.env, sec.agents, sec.obstacles, sec.map_side, sec.seed);
            let rows = density_sweep(&model, &base, &agent_counts, &obstacle_counts, sec.tasks, &cfg)?;
            let mut metric_lines = vec![METRICS_HEADER.to_string()];
            let mut timing_lines = vec!["agents,obstacles,mean_ms,max_ms".to_string()];
            for row in &rows {
                metric_lines.push(metrics_row(row.agents, row.obstacles, &row.metrics));
                timing_lines.push(format!(
                    "{},{},{},{}",
                    row.agents, row.obstacles, row.metrics.mean_decision_ms, row.metrics.max_decision_ms
                ));
            }
            write_lines(&dir.join("metrics.csv"), &metric_lines)?;
            write_lines(&dir.join("timing.csv"), &timing_lines)?;
            let printable: Vec<_> = rows
                .into_iter()
                .map(|r| (r.agents, r.obstacles, r.metrics))
                .collect();
            print_metrics(&printable);
        }
    }
    eprintln!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_chase(a: ChaseArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let mut run_cfg = RunConfig::for_env(ck.env);
    {
        let sec = &mut run_cfg.eval;
        sec.agents = a.agents;
        sec.obstacles = a.obstacles;
        sec.tasks = a.tasks;
        sec.seed = a.seed;
        if let Some(v) = a.map_side {
            sec.map_side = v;
        }
        if let Some(v) = a.candidates {
            sec.candidates = v;
        }
        if let Some(v) = a.horizon {
            sec.horizon = v;
        }
        if a.no_decomposition {
            sec.decomposition = false;
        } else if a.decomposition {
            sec.decomposition = true;
        }
    }
    let resolved = cam_core::config::identity(run_cfg)?;
    let sec = resolved.config.eval.clone();
    let spec = TaskSpec {
        mode: TaskMode::Chasing,
        ..TaskSpec::navigation(ck.env, sec.agents, sec.obstacles, sec.map_side, sec.seed)
    };
    let dir = run_dir(&a.out, format!("chase-{}-s{}", ck.env.name(), sec.seed))?;
    write_run_files(&dir, &resolved, "chase", None, &[])?;
    let out = run_chasing(&model, &spec, sec.tasks, &eval_config(&sec))?;
    write_single_outcome(&dir, &sec, &out)?;
    print_metrics(&[(sec.agents, sec.obstacles, out.metrics)]);
    eprintln!("artifacts in {}", dir.display());
    Ok(())
}

/// One analytic/numeric comparison: gradients of the loss over `batch`
/// under `margins`, vs central differences at `eps`.
fn grad_gap(
    model: &CamModel,
    batch: &[&Transition],
    margins: &[f64; 3],
    decay: f64,
    eps: f64,
) -> Result<f64> {
    let mut work = model.clone();
    work.store.zero_grads();
    let mut tape = Tape::new();
    let loss = cam_loss_tape(&mut tape, &work, batch, margins, decay)?;
    tape.backward(loss, &mut work.store)?;
    let analytic = collect_grads(&work.store);

    let mut probe = model.clone();
    let mut scratch = model.clone();
    let numeric = finite_diff_grad(&mut probe.store, eps, |store| {
        scratch.store = store.clone();
        cam_loss(&scratch, batch, margins, decay)
    })?;
    Ok(max_rel_err(&analytic, &numeric))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let env: EnvKind = a.env.parse()?;
    let spec = TaskSpec::navigation(env, a.agents, a.obstacles, a.map_side, a.seed);
    let defaults = TrainConfig::for_env(env);
    let margins = defaults.margins;
    let decay = defaults.decay;
    // Disables a hinge term: relu(-1e9 - phi) is zero for any sane score.
    const OFF: f64 = -1e9;

    let mut worst = [0.0f64; 4];
    for m in 0..a.models {
        let mut rng = rng_for(a.seed, "gradcheck-model", &[m as u64]);
        let model = CamModel::init(env, a.hidden, a.gnn_layers, &mut rng)?;
        let batch = synthetic_batch(&spec, a.batch, seed_for(a.seed, "gradcheck-batch", &[m as u64]))?;

        let admissible: Vec<Transition> = batch
            .iter()
            .filter(|t| t.label == Label::Admissible)
            .cloned()
            .map(|mut t| {
                t.next_action = None;
                t
            })
            .collect();
        let inadmissible: Vec<&Transition> =
            batch.iter().filter(|t| t.label == Label::Inadmissible).collect();
        let advancing: Vec<&Transition> = batch
            .iter()
            .filter(|t| t.label == Label::Admissible && t.next_action.is_some())
            .collect();
        let full: Vec<&Transition> = batch.iter().collect();
        let admissible_refs: Vec<&Transition> = admissible.iter().collect();

        let gaps = [
            grad_gap(&model, &admissible_refs, &[margins[0], OFF, OFF], decay, a.eps)?,
            grad_gap(&model, &inadmissible, &[OFF, margins[1], OFF], decay, a.eps)?,
            grad_gap(&model, &advancing, &[OFF, OFF, margins[2]], decay, a.eps)?,
            grad_gap(&model, &full, &margins, decay, a.eps)?,
        ];
        for (w, g) in worst.iter_mut().zip(gaps) {
            *w = w.max(g);
        }
    }
    if a.corrupt {
        // Negative control: an error injected well above tol must be caught.
        worst[3] = worst[3].max(1.0);
    }

    let names = [
        "admissible-margin",
        "inadmissible-margin",
        "invariance-margin",
        "full-loss",
    ];
    println!("term                 max_rel_err");
    for (name, w) in names.iter().zip(worst) {
        println!("{name:<20} {w:.3e}");
    }
    let max = worst.iter().cloned().fold(0.0f64, f64::max);
    if max < a.tol {
        println!(
            "gradcheck: PASS ({} models x {} transitions, env {}, tol {:.0e})",
            a.models,
            a.batch,
            env.name(),
            a.tol
        );
        Ok(())
    } else {
        Err(CamError::Numeric(format!(
            "gradient check failed: max rel err {max:.3e} over tol {:.0e}",
            a.tol
        )))
    }
}

fn cmd_landscape(a: LandscapeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let state = match (ck.env, &a.state) {
        (EnvKind::Integrator2D, Some(raw)) => CamState::Vector(parse_f64_list(raw)?),
        (EnvKind::Integrator2D, None) => {
            return Err(CamError::Config(
                "the integrator landscape needs --state x,y".into(),
            ));
        }
        (env, _) => {
            let spec = TaskSpec::navigation(env, a.agents, a.obstacles, a.map_side, a.task_seed);
            let world = sample_task(&spec, &mut rng_for(a.task_seed, "eval-task", &[0]))?;
            CamState::Graph(ego_graph(&world, a.agent)?)
        }
    };
    let dims = {
        let d = parse_f64_list(&a.dims)?;
        if d.len() != 2 {
            return Err(CamError::Config("--dims wants exactly two indices".into()));
        }
        (d[0] as usize, d[1] as usize)
    };
    let fixed = match &a.fixed {
        Some(raw) => parse_f64_list(raw)?,
        None => vec![0.0; model.action_dim()],
    };
    let table = export_landscape(&model, &state, dims, a.resolution, &fixed)?;
    let dir = run_dir(&a.out, format!("landscape-{}", ck.env.name()))?;
    let provenance = serde_json::json!({
        "command": "landscape",
        "checkpoint": a.checkpoint.display().to_string(),
        "config_hash": ck.config_hash,
        "state": a.state,
        "task_seed": a.task_seed,
        "agent": a.agent,
        "dims": [dims.0, dims.1],
        "resolution": a.resolution,
        "fixed": fixed,
    });
    fs::write(dir.join("run.json"), format!("{provenance}\n"))?;
    let path = dir.join("landscape.csv");
    fs::write(&path, table)?;
    println!(
        "wrote {} ({}x{} grid over action dims {},{})",
        path.display(),
        a.resolution,
        a.resolution,
        dims.0,
        dims.1
    );
    Ok(())
}

fn parse_usize_list(raw: Option<&str>, default: usize) -> Result<Vec<usize>> {
    match raw {
        None => Ok(vec![default]),
        Some(text) => text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| CamError::Config(format!("bad count '{t}' in list '{text}'")))
            })
            .collect(),
    }
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CamError::Config(format!("bad number '{t}' in list '{text}'")))
        })
        .collect()
}
