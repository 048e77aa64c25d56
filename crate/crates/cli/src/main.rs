mod args;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use orca_core::agent::{run_episode, AgentConfig, Policy};
use orca_core::bench::{
    desk_suite, load_annotations, load_suite, load_traces, run_suite, scripted_factory, write_report, CognitionFactory,
    ReportOptions, SuiteRun,
};
use orca_core::cognition::{BackendConfig, Cognition, RemoteCognition, ScriptedCognition};
use orca_core::world::{load_task, spawn_world, NoiseProfile, TaskSpec};
use orca_service::{AppState, ServiceConfig};

use args::{AgentArgs, Backend, BenchArgs, Cli, Command, MetricsArgs, RunArgs, ServeArgs, ValidateArgs};

type CmdResult = Result<(), String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Metrics(a) => metrics(a),
        Command::Serve(a) => serve(a),
        Command::ValidateTask(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// The command line as typed, quoted where a shell would need it.
fn invocation() -> String {
    std::env::args()
        .map(|a| {
            if !a.is_empty() && a.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=,:".contains(c)) {
                a
            } else {
                format!("'{}'", a.replace('\'', r"'\''"))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A task file path, or failing that a built-in task id.
fn resolve_task(name: &str) -> Result<TaskSpec, String> {
    if Path::new(name).exists() {
        return load_task(name).map_err(|e| e.to_string());
    }
    desk_suite()
        .into_iter()
        .find(|t| t.task_id == name)
        .ok_or_else(|| format!("`{name}` is neither a task file nor a built-in task id"))
}

/// Fails before any work when the remote backend cannot be configured.
fn check_backend(backend: Backend) -> CmdResult {
    if backend == Backend::Remote {
        BackendConfig::from_env().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn remote_factory(_task: &TaskSpec, _noise: &NoiseProfile) -> Result<Box<dyn Cognition>, String> {
    Ok(Box::new(RemoteCognition::from_env().map_err(|e| e.to_string())?))
}

fn agent_config(policy: Policy, task: &TaskSpec, a: &AgentArgs) -> Result<AgentConfig, String> {
    let mut cfg = AgentConfig::for_task(policy, task);
    cfg.n_retry = a.n_retry;
    if let Some(m) = a.max_turns {
        cfg.max_turns = m;
    }
    cfg.validate(task).map_err(|e| format!("task {}: {e}", task.task_id))?;
    Ok(cfg)
}

fn run(a: RunArgs) -> CmdResult {
    let task = resolve_task(&a.task)?;
    let noise = NoiseProfile {
        p_wrong: a.p_wrong,
        p_omit: a.p_omit,
        transient_fraction: a.transient_fraction,
        seed: a.seed,
        ..Default::default()
    };
    noise.validate().map_err(|e| e.to_string())?;
    let cfg = agent_config(a.policy, &task, &a.agent)?;
    check_backend(a.agent.backend)?;
    let cognition: Box<dyn Cognition> = match a.agent.backend {
        Backend::Scripted => Box::new(ScriptedCognition::new(&task).with_omission_tolerance(noise.p_omit > 0.0)),
        Backend::Remote => remote_factory(&task, &noise)?,
    };
    let mut world = spawn_world(&task, noise).map_err(|e| e.to_string())?;
    let mut trace = run_episode(&task, &mut world, cognition.as_ref(), &cfg).map_err(|e| e.to_string())?;
    trace.header.invocation = Some(invocation());
    let s = &trace.summary;
    let line = format!(
        "{} {} seed {}: {}/{} subgoals, {} turns, {} generations",
        task.task_id,
        a.policy,
        a.seed,
        s.completed(),
        s.total(),
        s.counters.turns,
        s.counters.generation_calls
    );
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            }
            trace.save(path).map_err(|e| format!("{}: {e}", path.display()))?;
            println!("{line}");
            println!("trace written to {}", path.display());
        }
        None => {
            eprintln!("{line}");
            print!("{}", trace.to_jsonl());
        }
    }
    if let Some(e) = &s.error {
        eprintln!("episode ended early: {e}");
    }
    Ok(())
}

fn noise_grid(a: &BenchArgs, suite: &[orca_core::bench::NoiseSetting]) -> Result<Vec<NoiseProfile>, String> {
    let overridden = !(a.p_wrong.is_empty() && a.p_omit.is_empty() && a.transient_fraction.is_empty());
    let grid: Vec<NoiseProfile> = if overridden || suite.is_empty() {
        let base = NoiseProfile::default();
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &p_wrong in &or(&a.p_wrong, base.p_wrong) {
            for &p_omit in &or(&a.p_omit, base.p_omit) {
                for &transient_fraction in &or(&a.transient_fraction, base.transient_fraction) {
                    out.push(NoiseProfile { p_wrong, p_omit, transient_fraction, ..base });
                }
            }
        }
        out
    } else {
        suite.iter().map(|n| n.profile()).collect()
    };
    for n in &grid {
        n.validate().map_err(|e| e.to_string())?;
    }
    Ok(grid)
}

fn bench(a: BenchArgs) -> CmdResult {
    let loaded = load_suite(&a.suite).map_err(|e| e.to_string())?;
    let policies = match (&a.policy, &loaded.spec.policies) {
        (p, _) if !p.is_empty() => p.clone(),
        (_, s) if !s.is_empty() => s.clone(),
        _ => Policy::ALL.to_vec(),
    };
    let seeds = match (&a.seeds, &loaded.spec.seeds) {
        (Some(s), _) => s.0.clone(),
        (None, s) if !s.is_empty() => s.clone(),
        _ => (0..10).collect(),
    };
    let noise_grid = noise_grid(&a, &loaded.spec.noise)?;
    if a.jobs == Some(0) {
        return Err("--jobs must be at least 1".into());
    }
    for t in &loaded.tasks {
        if let Ok(task) = &t.spec {
            agent_config(Policy::Orca, task, &a.agent)?;
        }
    }
    check_backend(a.agent.backend)?;
    let factory: &CognitionFactory = match a.agent.backend {
        Backend::Scripted => &scripted_factory,
        Backend::Remote => &remote_factory,
    };
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cells = noise_grid.len() * policies.len() * loaded.tasks.len() * seeds.len();
    eprintln!(
        "suite {}: {} tasks x {} policies x {} seeds x {} noise settings = {cells} episodes on {jobs} threads",
        loaded.spec.suite_id,
        loaded.tasks.len(),
        policies.len(),
        seeds.len(),
        noise_grid.len()
    );
    let run = SuiteRun {
        suite_id: loaded.spec.suite_id.clone(),
        tasks: loaded.tasks,
        policies,
        noise_grid,
        seeds,
        trace_dir: a.out.clone(),
        n_retry: a.agent.n_retry,
        max_turns: a.agent.max_turns,
        jobs,
        cognition: factory,
        invocation: Some(invocation()),
    };
    let outcome = run_suite(&run).map_err(|e| e.to_string())?;
    println!(
        "{} written, {} already present, {} failed; traces in {}",
        outcome.written,
        outcome.skipped,
        outcome.errors.len(),
        a.out.display()
    );
    if outcome.errors.is_empty() {
        return Ok(());
    }
    for e in outcome.errors.iter().take(10) {
        eprintln!("  {} {} seed {}: {}", e.policy, e.task, e.seed, e.message);
    }
    Err(format!("{} episodes failed; see {}", outcome.errors.len(), a.out.join(orca_core::bench::run::ERRORS_FILE).display()))
}

fn metrics(a: MetricsArgs) -> CmdResult {
    let traces = load_traces(&a.traces).map_err(|e| e.to_string())?;
    let annotations = match &a.annotations {
        Some(p) => load_annotations(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Vec::new(),
    };
    let report = write_report(&traces, &annotations, ReportOptions { pps_surrogate: a.pps_surrogate })
        .map_err(|e| e.to_string())?;
    let out = a.out.clone().unwrap_or_else(|| a.traces.join("metrics.json"));
    std::fs::write(&out, report.to_json()).map_err(|e| format!("{}: {e}", out.display()))?;
    print!("{}", report.render_table());
    for v in report.bounds_violations() {
        eprintln!("warning: {v}");
    }
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CmdResult {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(|e| format!("bad address: {e}"))?;
    let mut config = ServiceConfig::new(&a.data_dir, a.traces.clone().unwrap_or_else(|| a.data_dir.join("traces")));
    config.static_dir = a.static_dir.clone();
    config.pps_surrogate = a.pps_surrogate;
    let state = AppState::load(&config).map_err(|e| e.to_string())?;
    eprintln!("{} cases loaded from {}; listening on http://{addr}", state.case_count(), config.traces_dir.display());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(orca_service::serve(Arc::new(state), addr)).map_err(|e| e.to_string())
}

fn validate(a: ValidateArgs) -> CmdResult {
    let files: Vec<PathBuf> = a.files.into_iter().chain(a.task).collect();
    let mut failed = 0;
    for f in &files {
        match load_task(f) {
            Ok(t) => println!("{}: ok ({}, {} subgoals)", f.display(), t.task_id, t.subgoals.len()),
            Err(e) => {
                failed += 1;
                println!("{}: {e}", f.display());
            }
        }
    }
    if failed > 0 {
        return Err(format!("{failed} of {} task files are invalid", files.len()));
    }
    Ok(())
}
