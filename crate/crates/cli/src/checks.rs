//! Run invariants that decide the exit status.

use torqueloop_core::scenario::{BenchmarkResult, RunOutput, SwitchReport, TaskResult};

pub fn run(label: &str, out: &RunOutput) -> Vec<String> {
    let mut failures = Vec::new();
    if out.plant_fault {
        failures.push(format!("{label}: plant diverged"));
    }
    if out.controller_faults > 0 {
        failures.push(format!("{label}: {} controller faults", out.controller_faults));
    }
    if out.unstamped > 0 {
        failures.push(format!("{label}: {} commands not stamped with their tick", out.unstamped));
    }
    if out.ownership_violations > 0 {
        failures.push(format!("{label}: {} resource ownership violations", out.ownership_violations));
    }
    if let Some(n) = out.allocations.filter(|n| *n > 0) {
        failures.push(format!("{label}: {n} allocations inside the control tick"));
    }
    let t = &out.tanks;
    if t.ticks > 0 {
        if !(t.energy_min >= 0.0 && t.energy_max.is_finite()) {
            failures.push(format!("{label}: tank energy left [{}, {}]", t.energy_min, t.energy_max));
        }
        if !(t.gamma_min >= 0.0 && t.gamma_max <= 1.0 && t.alpha_min >= 0.0 && t.alpha_max <= 1.0) {
            failures.push(format!("{label}: tank gates outside [0, 1]"));
        }
    }
    failures
}

pub fn task(result: &TaskResult) -> Vec<String> {
    let mut failures = Vec::new();
    for (t, trial) in result.trials.iter().enumerate() {
        failures.extend(run(&format!("trial {} nominal", t + 1), &trial.nominal));
        failures.extend(run(&format!("trial {} reference", t + 1), &trial.reference));
    }
    failures
}

pub fn switches(report: &SwitchReport, trials: usize) -> Vec<String> {
    let mut failures = Vec::new();
    if report.accepted != trials {
        failures.push(format!("{} of {trials} switches accepted", report.accepted));
    }
    if !report.within(2) {
        failures.push(format!("switch latency reached {} ticks", report.max_ticks));
    }
    if report.unstamped > 0 {
        failures.push(format!("switch test: {} unstamped commands", report.unstamped));
    }
    failures
}

pub fn benchmark(result: &BenchmarkResult) -> Vec<String> {
    let mut failures = run(result.condition.label(), &result.run);
    failures.extend(switches(&result.switch, result.switch.records.len()));
    if result.flagged {
        failures.push(format!("{:.2}% of ticks overran their deadline", result.overrun_rate * 100.0));
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;
    use torqueloop_core::scenario::TankEnvelope;
    use torqueloop_core::trace::Trace;

    fn clean() -> RunOutput {
        RunOutput {
            trace: Trace::with_capacity(vec!["arm".into()], vec![7], 1e-3, 0),
            timing: Vec::new(),
            plant_fault: false,
            controller_faults: 0,
            unstamped: 0,
            ownership_violations: 0,
            tanks: TankEnvelope::default(),
            overruns: 0,
            allocations: Some(0),
            box_height: None,
        }
    }

    #[test]
    fn clean_run_passes() {
        assert!(run("x", &clean()).is_empty());
    }

    #[test]
    fn each_violation_is_reported() {
        let mut out = clean();
        out.plant_fault = true;
        out.unstamped = 2;
        out.ownership_violations = 1;
        out.allocations = Some(3);
        out.tanks = TankEnvelope {
            energy_min: -0.1,
            energy_max: 1.0,
            gamma_min: 0.0,
            gamma_max: 1.5,
            alpha_min: 0.0,
            alpha_max: 1.0,
            ticks: 10,
        };
        assert_eq!(run("x", &out).len(), 6);
    }
}
