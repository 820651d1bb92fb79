//! `torqueloop`: runs validation tasks, benchmarks and the identification
//! experiment, and serves the control endpoint over stdin.
//!
//! Exit status: 0 when every run invariant held, 1 when one was violated,
//! 2 on configuration or I/O errors.

mod alloc;
mod checks;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use torqueloop_core::plant::TaskId;
use torqueloop_core::scenario::{
    default_output, report_from_dir, run_benchmark, run_identification, run_task, simulate, switch_test, task_spec,
    Condition, Endpoint, Reference, RunSetup, ScenarioConfig, ScenarioKind, TimeMode,
};

#[derive(Parser)]
#[command(name = "torqueloop", version, about = "Multi-arm torque control runner")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `virtual` or `wall-clock`.
    #[arg(long, value_name = "MODE")]
    time_mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a validation task on the nominal and the reference plant.
    RunTask {
        /// Task number 1 to 5, when no config file is given.
        #[arg(long)]
        task: Option<u32>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark condition: loop timing, command delay and switch test.
    RunBench {
        /// NF, CA, MA, CA-MA or C-MA, when no config file is given.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long)]
        switch_trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Identify inertial parameters and compare fidelity before and after.
    Identify {
        #[arg(long)]
        task: Option<u32>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the fidelity reports of a task run directory.
    Report { dir: PathBuf },
    /// Alternate between the first two controllets and report latency.
    SwitchTest {
        #[arg(long)]
        condition: Option<String>,
        #[arg(long)]
        switch_trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark scenario and accept endpoint commands on stdin.
    Serve {
        #[arg(long)]
        condition: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.verb) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("invariant violated: {f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(verb: Verb) -> Result<Vec<String>> {
    match verb {
        Verb::RunTask { task, trials, common } => {
            let cfg = task_config(&common, task, trials, 1)?;
            let result = run_task(&cfg)?;
            print!("{}", result.table());
            write_dir(&cfg, &common, |dir| result.write(&cfg, dir))?;
            Ok(checks::task(&result))
        }
        Verb::RunBench { condition, switch_trials, common } => {
            let cfg = bench_config(&common, condition.as_deref(), switch_trials)?;
            let result = run_benchmark(&cfg, Some(alloc::allocations))?;
            print!("{}", result.table());
            write_dir(&cfg, &common, |dir| result.write(&cfg, dir))?;
            Ok(checks::benchmark(&result))
        }
        Verb::Identify { task, trials, common } => {
            let cfg = task_config(&common, task, trials, 4)?;
            let result = run_identification(&cfg)?;
            print!("{}", result.table());
            let mut cfg_out = cfg.clone();
            if common.out.is_none() && cfg.output.is_none() {
                cfg_out.output = Some(PathBuf::from("runs/identify"));
            }
            write_dir(&cfg_out, &common, |dir| result.write(&cfg, dir))?;
            let mut failures = checks::task(&result.before);
            failures.extend(checks::task(&result.after));
            Ok(failures)
        }
        Verb::Report { dir } => {
            print!("{}", report_from_dir(&dir).with_context(|| format!("reading {}", dir.display()))?);
            Ok(Vec::new())
        }
        Verb::SwitchTest { condition, switch_trials, common } => {
            let cfg = bench_config(&common, condition.as_deref(), switch_trials)?;
            let report = switch_test(&cfg)?;
            println!(
                "switches {} accepted {} mean_ms {:.3} std_ms {:.3} max_ticks {}",
                report.records.len(),
                report.accepted,
                report.mean_ms,
                report.std_ms,
                report.max_ticks
            );
            Ok(checks::switches(&report, cfg.bench.switch_trials))
        }
        Verb::Serve { condition, mut common } => {
            common.time_mode.get_or_insert_with(|| TimeMode::WallClock.as_str().to_string());
            let cfg = bench_config(&common, condition.as_deref(), None)?;
            serve(&cfg, &common)
        }
    }
}

fn load(common: &Common) -> Result<Option<ScenarioConfig>> {
    common
        .config
        .as_ref()
        .map(|p| ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn apply(cfg: &mut ScenarioConfig, common: &Common) -> Result<()> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &common.time_mode {
        cfg.time_mode = TimeMode::parse(mode)?;
    }
    if let Some(d) = common.duration {
        cfg.duration = d;
    }
    cfg.validate()?;
    Ok(())
}

fn task_config(common: &Common, task: Option<u32>, trials: Option<usize>, default_task: u32) -> Result<ScenarioConfig> {
    let mut cfg = match (load(common)?, task) {
        (Some(cfg), None) => cfg,
        (Some(cfg), Some(n)) if cfg.kind == ScenarioKind::Task(TaskId::from_number(n)?) => cfg,
        (Some(_), Some(n)) => bail!("--task {n} disagrees with the config file"),
        (None, n) => ScenarioConfig::task(TaskId::from_number(n.unwrap_or(default_task))?),
    };
    if !matches!(cfg.kind, ScenarioKind::Task(_)) {
        bail!("this verb needs a task scenario, the config describes a benchmark");
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    apply(&mut cfg, common)?;
    Ok(cfg)
}

fn bench_config(common: &Common, condition: Option<&str>, switch_trials: Option<usize>) -> Result<ScenarioConfig> {
    let mut cfg = match (load(common)?, condition) {
        (Some(cfg), None) => cfg,
        (Some(cfg), Some(c)) if cfg.kind == ScenarioKind::Benchmark(Condition::parse(c)?) => cfg,
        (Some(_), Some(c)) => bail!("--condition {c} disagrees with the config file"),
        (None, c) => ScenarioConfig::benchmark(Condition::parse(c.unwrap_or("NF"))?),
    };
    if !matches!(cfg.kind, ScenarioKind::Benchmark(_)) {
        bail!("this verb needs a benchmark scenario, the config describes a task");
    }
    if let Some(n) = switch_trials {
        cfg.bench.switch_trials = n;
    }
    apply(&mut cfg, common)?;
    Ok(cfg)
}

fn output_dir(cfg: &ScenarioConfig, common: &Common) -> PathBuf {
    common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| default_output(cfg))
}

fn write_dir(
    cfg: &ScenarioConfig,
    common: &Common,
    write: impl FnOnce(&Path) -> torqueloop_core::Result<()>,
) -> Result<()> {
    let dir = output_dir(cfg, common);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir).with_context(|| format!("writing {}", dir.display()))?;
    log::info!("wrote {}", dir.display());
    Ok(())
}

/// Runs the scenario on a worker thread and forwards stdin lines to the
/// controller until the run ends, `stop` is acknowledged or stdin closes.
fn serve(cfg: &ScenarioConfig, common: &Common) -> Result<Vec<String>> {
    let (handle_tx, handle_rx) = mpsc::channel();
    let worker_cfg = cfg.clone();
    let runner = std::thread::spawn(move || {
        let cfg = worker_cfg;
        let spec = task_spec(&cfg);
        let mut handle_tx = Some(handle_tx);
        let mut hook =
            |_: u64, mc: &torqueloop_core::manager::MultimodeController, _: &torqueloop_core::bus::RobotBus| {
                if let Some(tx) = handle_tx.take() {
                    let _ = tx.send(mc.handle());
                }
            };
        let mut setup = RunSetup::new(&cfg.reference, cfg.seed);
        setup.time_mode = cfg.time_mode;
        setup.allocation_probe = Some(alloc::allocations);
        simulate(&cfg, &spec, Reference::Task(&spec), setup, cfg.ticks(), Some(&mut hook))
    });
    let Ok(handle) = handle_rx.recv() else {
        runner.join().map_err(|_| anyhow::anyhow!("controller thread panicked"))??;
        bail!("the run ended before the controller started");
    };
    let endpoint = Endpoint::new(handle, cfg.nominal.dt);

    let (line_tx, line_rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in std::io::stdin().lock().lines().map_while(std::io::Result::ok) {
            if line_tx.send(line).is_err() {
                break;
            }
        }
    });
    println!("ready {} ticks at {:.0} Hz", cfg.ticks(), 1.0 / cfg.nominal.dt);
    let mut stdout = std::io::stdout();
    loop {
        if runner.is_finished() {
            break;
        }
        match line_rx.recv_timeout(Duration::from_millis(20)) {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => {
                let reply = endpoint.execute(&line);
                writeln!(stdout, "{reply}")?;
                stdout.flush()?;
                if reply.starts_with("ok stop") {
                    break;
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => continue,
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                if !runner.is_finished() {
                    let reply = endpoint.execute("stop");
                    writeln!(stdout, "{reply}")?;
                }
                break;
            }
        }
    }
    let run = runner.join().map_err(|_| anyhow::anyhow!("controller thread panicked"))??;
    println!("done ticks {} overruns {}", run.trace.len(), run.overruns);
    if common.out.is_some() || cfg.output.is_some() {
        let dir = output_dir(cfg, common);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
        run.trace.save(dir.join("trace.csv"))?;
    }
    Ok(checks::run("serve", &run))
}
