//! Scenario runner: validation tasks, benchmark conditions and the
//! identification experiment, plus run-directory output.

mod config;
mod endpoint;
mod run;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{
    default_task_controllet, BenchSettings, Condition, ControlletEntry, IdentificationSettings, PlantSettings,
    ScenarioConfig, ScenarioKind, TimeMode,
};
pub use endpoint::{parse_command, Command, Endpoint};
pub use run::{
    plant_seed, robot_models, simulate, task_descriptors, AllocationProbe, Reference, RunOutput, RunSetup,
    TankEnvelope, TickHook, MAX_ROBOTS,
};

use crate::bus::{RobotBus, Target};
use crate::error::{Error, Result};
use crate::manager::{MultimodeController, SwitchOutcome, SwitchRecord};
use crate::metrics::{
    estimate_delay, fidelity_report, norm_series, timing_key_values, timing_summary, timing_table, DelayEstimate,
    FidelityReport, TimingSummary,
};
use crate::model::RobotModel;
use crate::plant::{TaskId, TaskReference, TaskSpec};
use crate::sysid::{
    apply_identified, identify, report_text, samples_from_trace, torque_rms, Excitation, Identification,
    IdentifyOptions, ParameterVector,
};
use crate::trace::Trace;

/// Seed of trial `t`.
pub fn trial_seed(cfg: &ScenarioConfig, t: usize) -> u64 {
    cfg.seed.wrapping_add(t as u64)
}

pub fn task_spec(cfg: &ScenarioConfig) -> TaskSpec {
    TaskSpec::new(cfg.task_id(), cfg.task, &cfg.model)
}

/// Nominal and reference runs of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub nominal: RunOutput,
    pub reference: RunOutput,
    /// One report per robot.
    pub reports: Vec<FidelityReport>,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub task: TaskId,
    pub robots: Vec<String>,
    pub trials: Vec<TrialResult>,
    /// Cross-trial mean per robot.
    pub average: Vec<FidelityReport>,
    pub valid: bool,
}

/// Models used by the two sides of a fidelity comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelChoice<'a> {
    /// Model integrated by the simulated plant.
    pub simulated: Option<&'a RobotModel>,
    /// Model used by the controller in both runs.
    pub controller: Option<&'a RobotModel>,
}

/// Runs the task on the nominal and on the reference plant with identical
/// targets and seeds, per trial.
pub fn run_task(cfg: &ScenarioConfig) -> Result<TaskResult> {
    run_task_with(cfg, ModelChoice::default())
}

pub fn run_task_with(cfg: &ScenarioConfig, models: ModelChoice<'_>) -> Result<TaskResult> {
    cfg.validate()?;
    let ScenarioKind::Task(id) = cfg.kind else {
        return Err(Error::Config("run_task needs a task scenario".into()));
    };
    let spec = task_spec(cfg);
    let ticks = cfg.ticks();
    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let seed = trial_seed(cfg, t);
        let mut nominal_setup = RunSetup::new(&cfg.nominal, seed);
        nominal_setup.plant_model = models.simulated;
        nominal_setup.controller_model = models.controller;
        nominal_setup.time_mode = cfg.time_mode;
        let nominal = simulate(cfg, &spec, Reference::Task(&spec), nominal_setup, ticks, None)?;
        let mut reference_setup = RunSetup::new(&cfg.reference, seed);
        reference_setup.controller_model = models.controller;
        reference_setup.time_mode = cfg.time_mode;
        let reference = simulate(cfg, &spec, Reference::Task(&spec), reference_setup, ticks, None)?;

        let delay = command_delay(&reference.trace, 0).ok();
        let mut reports = Vec::with_capacity(cfg.robots.len());
        for r in 0..cfg.robots.len() {
            let mut report = fidelity_report(&nominal.trace, &reference.trace, r)?;
            report.delay_ms = delay.map(|d| d.ms);
            reports.push(report);
        }
        let valid = !nominal.plant_fault && !reference.plant_fault;
        if !valid {
            log::warn!("trial {t} of task {}: plant fault, report invalid", id.number());
        }
        trials.push(TrialResult { seed, nominal, reference, reports, valid });
    }
    let average = (0..cfg.robots.len())
        .map(|r| FidelityReport::average(&trials.iter().map(|t| t.reports[r]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let valid = trials.iter().all(|t| t.valid);
    Ok(TaskResult { task: id, robots: cfg.robots.clone(), trials, average, valid })
}

/// Delay between the commanded and the applied torque of robot `r`,
/// using the norm of each joint vector.
pub fn command_delay(trace: &Trace, r: usize) -> Result<DelayEstimate> {
    let times: Vec<f64> = (0..trace.len()).map(|k| trace.time(k)).collect();
    let samples = trace.samples.get(r).ok_or_else(|| Error::TraceFormat(format!("trace has no robot {r}")))?;
    let cmd = norm_series(&samples.iter().map(|s| s.tau_cmd).collect::<Vec<_>>());
    let applied = norm_series(&samples.iter().map(|s| s.tau_applied).collect::<Vec<_>>());
    estimate_delay(&times, &cmd, &times, &applied)
}

impl TaskResult {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task {}{}", self.task.number(), if self.valid { "" } else { " (INVALID: plant fault)" });
        let _ = writeln!(s, "{}", FidelityReport::table_header());
        for (r, name) in self.robots.iter().enumerate() {
            for (t, trial) in self.trials.iter().enumerate() {
                let _ = writeln!(s, "{}", trial.reports[r].table_row(&format!("{name}/trial{}", t + 1)));
            }
            let _ = writeln!(s, "{}", self.average[r].table_row(&format!("{name}/mean")));
        }
        s
    }

    pub fn key_values(&self) -> String {
        let mut s = format!("task = {}\nvalid = {}\n\n", self.task.number(), self.valid);
        for (r, name) in self.robots.iter().enumerate() {
            for (t, trial) in self.trials.iter().enumerate() {
                s += &trial.reports[r].key_values(&format!("{name}.trial{}", t + 1));
            }
            s += &self.average[r].key_values(&format!("{name}.mean"));
        }
        s
    }

    /// Writes the config snapshot, both traces of every trial and the
    /// reports into `dir`.
    pub fn write(&self, cfg: &ScenarioConfig, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_file(&dir.join("config.toml"), &cfg.to_toml_string())?;
        for (t, trial) in self.trials.iter().enumerate() {
            trial.nominal.trace.save(dir.join(format!("trial{}_nominal.csv", t + 1)))?;
            trial.reference.trace.save(dir.join(format!("trial{}_reference.csv", t + 1)))?;
        }
        write_file(&dir.join("report.txt"), &self.table())?;
        write_file(&dir.join("report.toml"), &self.key_values())?;
        for (r, name) in self.robots.iter().enumerate() {
            if let Some(trial) = self.trials.first() {
                write_plot(
                    &dir.join(format!("plot_f_ee_{name}.dat")),
                    &trial.nominal.trace,
                    &trial.reference.trace,
                    r,
                )?;
            }
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `time nominal reference` columns of the end-effector force norm.
fn write_plot(path: &Path, a: &Trace, b: &Trace, r: usize) -> Result<()> {
    let mut s = String::from("# t_s f_nominal_N f_reference_N\n");
    for k in 0..a.len().min(b.len()) {
        let _ = writeln!(s, "{:?} {:?} {:?}", a.time(k), a.samples[r][k].wrench.norm(), b.samples[r][k].wrench.norm());
    }
    write_file(path, &s)
}

/// Recomputes the fidelity reports of a run directory from its traces.
pub fn report_from_dir(dir: &Path) -> Result<String> {
    let mut out = String::new();
    for t in 1.. {
        let (a, b) = (dir.join(format!("trial{t}_nominal.csv")), dir.join(format!("trial{t}_reference.csv")));
        if !a.exists() || !b.exists() {
            if t == 1 {
                return Err(Error::TraceFormat(format!("{} holds no trial traces", dir.display())));
            }
            break;
        }
        let (a, b) = (Trace::load(&a)?, Trace::load(&b)?);
        if t == 1 {
            out += &FidelityReport::table_header();
            out.push('\n');
        }
        for (r, name) in a.names.iter().enumerate() {
            let mut report = fidelity_report(&a, &b, r)?;
            report.delay_ms = command_delay(&b, r).ok().map(|d| d.ms);
            out += &report.table_row(&format!("{name}/trial{t}"));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Switch-test summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchReport {
    pub records: Vec<SwitchRecord>,
    pub accepted: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub max_ticks: u64,
    /// Mean wall-clock latency from submission to first compute (ms).
    pub wall_mean_ms: f64,
    pub unstamped: u64,
}

impl SwitchReport {
    /// Every switch accepted and active within `ticks`, and every tick
    /// stamped.
    pub fn within(&self, ticks: u64) -> bool {
        self.accepted == self.records.len() && self.max_ticks <= ticks && self.unstamped == 0
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub condition: Condition,
    pub time_mode: TimeMode,
    pub timing: TimingSummary,
    pub budget_us: f64,
    pub delay: DelayEstimate,
    pub configured_delay_ms: f64,
    pub switch: SwitchReport,
    pub overrun_rate: f64,
    /// Wall-clock overrun rate above 1%.
    pub flagged: bool,
    pub allocations: Option<u64>,
    pub run: RunOutput,
}

impl BenchmarkResult {
    pub fn table(&self) -> String {
        let mut s = format!("condition {} ({} time)\n", self.condition.label(), self.time_mode.as_str());
        s += &timing_table(std::slice::from_ref(&self.timing));
        let _ = writeln!(
            s,
            "budget_us {:.1}  overrun_rate {:.4}{}",
            self.budget_us,
            self.overrun_rate,
            if self.flagged { "  FLAGGED" } else { "" }
        );
        let _ = writeln!(
            s,
            "command delay {:.3} ms (configured {:.3} ms, {} samples lag)",
            self.delay.ms, self.configured_delay_ms, self.delay.lag_samples
        );
        let w = &self.switch;
        let _ = writeln!(
            s,
            "switch trials {}  accepted {}  latency {:.3} ± {:.3} ms  max {} ticks  wall {:.3} ms  unstamped {}",
            w.records.len(),
            w.accepted,
            w.mean_ms,
            w.std_ms,
            w.max_ticks,
            w.wall_mean_ms,
            w.unstamped
        );
        if let Some(a) = self.allocations {
            let _ = writeln!(s, "allocations in tick {a}");
        }
        s
    }

    pub fn key_values(&self) -> String {
        let mut s =
            format!("condition = \"{}\"\ntime_mode = \"{}\"\n\n", self.condition.label(), self.time_mode.as_str());
        s += &timing_key_values(std::slice::from_ref(&self.timing));
        let _ = writeln!(
            s,
            "[bench]\nbudget_us = {:?}\noverrun_rate = {:?}\nflagged = {}",
            self.budget_us, self.overrun_rate, self.flagged
        );
        if let Some(a) = self.allocations {
            let _ = writeln!(s, "allocations = {a}");
        }
        let _ = writeln!(
            s,
            "\n[delay]\nms = {:?}\nconfigured_ms = {:?}\nlag_samples = {}\npeak_correlation = {:?}",
            self.delay.ms, self.configured_delay_ms, self.delay.lag_samples, self.delay.peak_correlation
        );
        let w = &self.switch;
        let _ = writeln!(
            s,
            "\n[switch]\ntrials = {}\naccepted = {}\nmean_ms = {:?}\nstd_ms = {:?}\nmax_ticks = {}\nwall_mean_ms = {:?}\nunstamped = {}",
            w.records.len(),
            w.accepted,
            w.mean_ms,
            w.std_ms,
            w.max_ticks,
            w.wall_mean_ms,
            w.unstamped
        );
        s
    }

    pub fn write(&self, cfg: &ScenarioConfig, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_file(&dir.join("config.toml"), &cfg.to_toml_string())?;
        self.run.trace.save(dir.join("trace.csv"))?;
        let mut timing = String::from("# tick duration_us\n");
        for t in &self.run.timing {
            let _ = writeln!(timing, "{} {:?}", t.tick, t.duration_us);
        }
        write_file(&dir.join("timing.dat"), &timing)?;
        write_file(&dir.join("report.txt"), &self.table())?;
        write_file(&dir.join("report.toml"), &self.key_values())
    }
}

/// Runs one benchmark condition: per-tick timing, command delay estimate
/// and the switch test.
pub fn run_benchmark(cfg: &ScenarioConfig, probe: Option<AllocationProbe>) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let ScenarioKind::Benchmark(condition) = cfg.kind else {
        return Err(Error::Config("run_benchmark needs a benchmark condition".into()));
    };
    let spec = task_spec(cfg);
    let mut setup = RunSetup::new(&cfg.reference, cfg.seed);
    setup.time_mode = cfg.time_mode;
    setup.allocation_probe = probe;
    let run = simulate(cfg, &spec, Reference::Task(&spec), setup, cfg.ticks(), None)?;
    if run.plant_fault {
        return Err(Error::PlantFault(format!("benchmark {} diverged", condition.label())));
    }
    let period_us = cfg.nominal.dt * 1e6;
    let timing = timing_summary(condition.label(), &run.timing, period_us)?;
    let delay = command_delay(&run.trace, 0)?;
    let switch = switch_test(cfg)?;
    let overrun_rate = run.overruns as f64 / run.timing.len().max(1) as f64;
    let budget_us =
        if condition == Condition::NoFeatures { cfg.bench.budget_nf_us } else { cfg.bench.budget_features_us };
    Ok(BenchmarkResult {
        condition,
        time_mode: cfg.time_mode,
        timing,
        budget_us,
        delay,
        configured_delay_ms: cfg.reference.delay * cfg.reference.dt * 1e3,
        switch,
        overrun_rate,
        flagged: cfg.time_mode == TimeMode::WallClock && overrun_rate > 0.01,
        allocations: run.allocations,
        run,
    })
}

/// Alternates between the scenario's first two controllets every
/// `switch_spacing` ticks, `switch_trials` times, in virtual time.
pub fn switch_test(cfg: &ScenarioConfig) -> Result<SwitchReport> {
    if cfg.controllets.len() < 2 {
        return Err(Error::Config("the switch test needs two controllets".into()));
    }
    let spec = task_spec(cfg);
    let names = [cfg.controllets[0].descriptor.name.clone(), cfg.controllets[1].descriptor.name.clone()];
    let trials = cfg.bench.switch_trials as u64;
    let spacing = cfg.bench.switch_spacing.max(4);
    let ticks = (trials + 1) * spacing;
    let mut handle = None;
    let mut submitted = 0u64;
    let mut records = Vec::new();
    let mut hook = |tick: u64, mc: &MultimodeController, _: &RobotBus| {
        let h = handle.get_or_insert_with(|| mc.handle());
        if tick % spacing == spacing / 2 && submitted < trials {
            let target = &names[((submitted + 1) % 2) as usize];
            if h.request_switch(&[target]).is_ok() {
                submitted += 1;
            }
        }
        while h.poll_response().is_some() {}
        if tick + 1 == ticks {
            records = mc.records().to_vec();
        }
    };
    let mut setup = RunSetup::new(&cfg.nominal, cfg.seed);
    setup.controllets = Some((task_descriptors(cfg, &spec), vec![names[0].clone()]));
    let run = simulate(cfg, &spec, Reference::Task(&spec), setup, ticks, Some(&mut hook))?;
    let dt = cfg.nominal.dt;
    let accepted: Vec<&SwitchRecord> = records.iter().filter(|r| r.outcome == SwitchOutcome::Accepted).collect();
    let lat: Vec<f64> = accepted.iter().filter_map(|r| r.latency_ms(dt)).collect();
    let mean = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
    let std = (lat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / lat.len().max(1) as f64).sqrt();
    let wall: Vec<f64> = accepted.iter().filter_map(|r| r.wall_latency.map(|d| d.as_secs_f64() * 1e3)).collect();
    Ok(SwitchReport {
        accepted: accepted.len(),
        mean_ms: mean,
        std_ms: std,
        max_ticks: records.iter().filter_map(|r| r.latency_ticks).max().unwrap_or(0),
        wall_mean_ms: wall.iter().sum::<f64>() / wall.len().max(1) as f64,
        unstamped: run.unstamped,
        records,
    })
}

/// Outcome of the identification experiment.
#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub identification: Identification,
    pub model: RobotModel,
    pub excitation: RunOutput,
    /// Held-out torque RMS with the prior and the identified parameters.
    pub holdout_prior: f64,
    pub holdout_identified: f64,
    pub before: TaskResult,
    pub after: TaskResult,
}

impl IdentificationResult {
    /// Relative change of a channel from before to after (negative means
    /// reduced), robot 0 cross-trial means.
    pub fn change(&self, channel: fn(&FidelityReport) -> f64) -> f64 {
        let (b, a) = (channel(&self.before.average[0]), channel(&self.after.average[0]));
        (a - b) / b
    }

    pub fn table(&self) -> String {
        let mut s = String::from("identification\n");
        s += &report_text(&self.identification);
        let _ = writeln!(
            s,
            "\nheld-out torque rms: prior {:.4} N·m, identified {:.4} N·m",
            self.holdout_prior, self.holdout_identified
        );
        s += "\nbefore\n";
        s += &self.before.table();
        s += "\nafter\n";
        s += &self.after.table();
        let _ = writeln!(
            s,
            "\nchange: f_ee {:+.1}%  tau {:+.1}%  c_err {:+.1}%",
            100.0 * self.change(|r| r.f_ee),
            100.0 * self.change(|r| r.tau),
            100.0 * self.change(|r| r.c_err)
        );
        s
    }

    pub fn write(&self, cfg: &ScenarioConfig, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_file(&dir.join("config.toml"), &cfg.to_toml_string())?;
        write_file(&dir.join("identified_model.toml"), &self.model.to_toml_string())?;
        write_file(&dir.join("parameters.txt"), &report_text(&self.identification))?;
        self.excitation.trace.save(dir.join("excitation.csv"))?;
        self.before.write(cfg, &dir.join("before"))?;
        self.after.write(cfg, &dir.join("after"))?;
        write_file(&dir.join("report.txt"), &self.table())
    }
}

/// Excitation trajectory for the scenario's arm, clear of the task plane.
pub fn excitation(cfg: &ScenarioConfig) -> Result<Excitation> {
    let s = &cfg.identification;
    let e = Excitation::multisine(&cfg.model, &cfg.task.home, s.amplitude, s.duration);
    if cfg.task_id().has_plane() {
        e.clear_of_plane(&cfg.model, cfg.task.plane_height, 0.02)
    } else {
        Ok(e)
    }
}

/// Drives the reference plant along an excitation trajectory under joint
/// impedance and records the trace.
pub fn record_excitation(cfg: &ScenarioConfig, e: &Excitation) -> Result<RunOutput> {
    let mut single = cfg.clone();
    if single.robots.len() != 1 {
        single.kind = ScenarioKind::Task(TaskId::ForceCircle);
        single.robots = config::default_robots(1);
    }
    single.controllets = vec![default_task_controllet(TaskId::JointMotion)];
    single.initial = vec![single.controllets[0].descriptor.name.clone()];
    let spec = task_spec(&single);
    let source = |t: f64| -> Result<TaskReference> {
        Ok(TaskReference { robot: Target { joints: Some(e.at(t)), ..Target::default() }, group: Target::default() })
    };
    let mut setup = RunSetup::new(&single.reference, single.seed);
    setup.initial = Some(vec![e.at(0.0)]);
    let ticks = (e.duration / single.reference.dt).round() as u64;
    let run = simulate(&single, &spec, Reference::Custom(&source), setup, ticks, None)?;
    if run.plant_fault {
        return Err(Error::Identification("plant faulted during the excitation".into()));
    }
    Ok(run)
}

/// Excites the reference plant, identifies the inertial parameters and
/// re-runs the task with the identified model on the simulated plant and in
/// the controller.
pub fn run_identification(cfg: &ScenarioConfig) -> Result<IdentificationResult> {
    cfg.validate()?;
    let e = excitation(cfg)?;
    let excitation_run = record_excitation(cfg, &e)?;
    let s = &cfg.identification;
    let samples = samples_from_trace(&excitation_run.trace, 0, s.cutoff)?;
    // drop the fade-in and the filter edges
    let skip = (e.ramp / cfg.reference.dt).round() as usize;
    let usable = &samples[skip.min(samples.len())..samples.len().saturating_sub(100)];
    let split = ((1.0 - s.holdout) * usable.len() as f64) as usize;
    let (train, test) = usable.split_at(split);
    let prior = ParameterVector::from_model(&cfg.model);
    let opts = IdentifyOptions { regularization: s.regularization, ..IdentifyOptions::default() };
    let identification = identify(&cfg.model, train, &prior, opts)?;
    let model = apply_identified(&cfg.model, &identification.parameters)?;
    let holdout_prior = torque_rms(&cfg.model, test, &prior)?;
    let holdout_identified = torque_rms(&cfg.model, test, &identification.parameters)?;

    let before = run_task(cfg)?;
    let after = run_task_with(cfg, ModelChoice { simulated: Some(&model), controller: Some(&model) })?;
    Ok(IdentificationResult {
        identification,
        model,
        excitation: excitation_run,
        holdout_prior,
        holdout_identified,
        before,
        after,
    })
}

/// Default output directory for a scenario.
pub fn default_output(cfg: &ScenarioConfig) -> PathBuf {
    match cfg.kind {
        ScenarioKind::Task(id) => PathBuf::from(format!("runs/task{}", id.number())),
        ScenarioKind::Benchmark(c) => PathBuf::from(format!("runs/bench_{}", c.label().to_ascii_lowercase())),
    }
}
