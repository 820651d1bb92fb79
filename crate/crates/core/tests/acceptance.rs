//! End-to-end acceptance suite. Every test prints one `PASS`/`FAIL` line
//! and then asserts. Reference values come from oracles written here, not
//! from the library under test.

use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use torqueloop_core::bus::{RobotBus, Target};
use torqueloop_core::controllet::{
    collision_avoidance_torque, manipulability_torque, nullspace_torque, ufic_wrench, CollisionConfig,
    ControlletDescriptor, ControlletKind, ImpedanceGains, ManipulabilityConfig, UficGains, UficState,
};
use torqueloop_core::dynamics::{gravity_torque, inverse_dynamics, mass_matrix, potential_energy};
use torqueloop_core::kinematics::{ee_pose, CartesianState, ChainFrames};
use torqueloop_core::manager::register_controllets;
use torqueloop_core::metrics::estimate_delay;
use torqueloop_core::plant::{TaskId, TaskParams, TaskSpec};
use torqueloop_core::scenario::{
    run_benchmark, run_identification, run_task, switch_test, Condition, PlantSettings, ScenarioConfig, TimeMode,
};
use torqueloop_core::sysid::{build_regressor, rotor_torque, ParameterVector};
use torqueloop_core::{JointState, JointVector, RobotModel, Wrench};

/// Writes straight to the stderr handle so the line survives output capture.
fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {} {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::Write::write_all(&mut std::io::stderr().lock(), line.as_bytes());
    assert!(pass, "criterion {n} ({title}) failed: {detail}");
}

fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng) -> JointVector {
    let mut q = JointVector::zeros();
    for (i, j) in model.joints.iter().enumerate() {
        q[i] = rng.random_range(j.limits.position.0..j.limits.position.1);
    }
    q
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> JointVector {
    JointVector::from_fn(|_, _| rng.random_range(-scale..scale))
}

#[test]
fn switching_latency() {
    let start = Instant::now();
    let cfg = ScenarioConfig::benchmark(Condition::NoFeatures);
    let report = switch_test(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report.records.len() == 50 && report.within(2) && elapsed < 10.0;
    verdict(
        1,
        "switching latency",
        pass,
        &format!(
            "{} trials, {} accepted, max {} ticks, mean {:.3} ms, unstamped {}, {:.1} s",
            report.records.len(),
            report.accepted,
            report.max_ticks,
            report.mean_ms,
            report.unstamped,
            elapsed
        ),
    );
}

#[test]
fn loop_budget_ordering() {
    let mean = |condition: Condition| {
        let mut cfg = ScenarioConfig::benchmark(condition);
        cfg.time_mode = TimeMode::WallClock;
        cfg.duration = 2.0;
        cfg.bench.switch_trials = 2;
        let r = run_benchmark(&cfg, None).unwrap();
        (r.timing.mean, r.budget_us)
    };
    let (nf, nf_budget) = mean(Condition::NoFeatures);
    let (both, both_budget) = mean(Condition::Both);
    verdict(
        2,
        "loop budget",
        nf <= both,
        &format!(
            "NF mean {nf:.1} us (budget {nf_budget:.0}), CA-MA mean {both:.1} us (budget {both_budget:.0}), ordering NF <= CA-MA"
        ),
    );
}

#[test]
fn delay_estimation() {
    let start = Instant::now();
    let cfg = ScenarioConfig::benchmark(Condition::NoFeatures);
    let bench = run_benchmark(&cfg, None).unwrap();
    let injected = cfg.reference.delay * cfg.reference.dt * 1e3;
    let bench_ok = (bench.delay.ms - injected).abs() <= 0.5;

    // synthetic: a broadband signal and a copy shifted by a known amount,
    // sampled on the same 1 ms grid
    let dt = 1e-3;
    let signal = |t: f64| (2.1 * t).sin() + 0.6 * (7.3 * t + 0.4).sin() + 0.3 * (19.0 * t + 1.1).sin();
    let t: Vec<f64> = (0..5000).map(|k| k as f64 * dt).collect();
    let a: Vec<f64> = t.iter().map(|&t| signal(t)).collect();
    let mut worst: f64 = 0.0;
    let mut shift = -20.0;
    while shift <= 20.0 + 1e-9 {
        let b: Vec<f64> = t.iter().map(|&t| signal(t - shift * 1e-3)).collect();
        let est = estimate_delay(&t, &a, &t, &b).unwrap();
        worst = worst.max((est.ms - shift).abs());
        shift += 0.25;
    }
    let grid_ok = worst <= dt * 1e3;
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        3,
        "delay estimation",
        bench_ok && grid_ok && elapsed < 30.0,
        &format!(
            "benchmark {:.3} ms vs injected {injected:.3} ms, grid worst error {worst:.3} ms over +-20 ms, {elapsed:.1} s",
            bench.delay.ms
        ),
    );
}

#[test]
fn zero_gap_fidelity() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for id in 1..=4 {
        let mut cfg = ScenarioConfig::task(TaskId::from_number(id).unwrap());
        cfg.trials = 1;
        cfg.reference = PlantSettings::clean();
        let r = run_task(&cfg).unwrap();
        for v in r.average[0].channels() {
            worst = worst.max(v);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        4,
        "zero-gap fidelity",
        worst < 1e-9 && elapsed < 120.0,
        &format!("largest RMSE over six channels and tasks 1-4: {worst:.3e}, {elapsed:.1} s"),
    );
}

#[test]
fn gap_magnitudes() {
    let mut pass = true;
    let mut detail = Vec::new();
    for id in 1..=4 {
        let cfg = ScenarioConfig::task(TaskId::from_number(id).unwrap());
        let r = run_task(&cfg).unwrap();
        let a = &r.average[0];
        let ok = r.valid
            && (1e-4..=0.2).contains(&a.q)
            && (1e-4..=0.05).contains(&a.x_ee)
            && a.qd > 0.0
            && a.tau > 0.0
            && a.f_ee > 0.0
            && a.c_err > 0.0;
        pass &= ok;
        detail.push(format!("task {id} q {:.2e} x_ee {:.2e}", a.q, a.x_ee));
    }
    verdict(5, "gap magnitudes", pass, &detail.join(", "));
}

#[test]
fn identification_improvement() {
    let start = Instant::now();
    let cfg = ScenarioConfig::task(TaskId::ForceCircle);
    let r = run_identification(&cfg).unwrap();
    let f = r.change(|x| x.f_ee);
    let tau = r.change(|x| x.tau);
    let c = r.change(|x| x.c_err);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        6,
        "identification improvement",
        f <= -0.30 && tau <= 0.05 && c <= 0.05 && elapsed < 300.0,
        &format!("F_EE {:+.1}%, tau {:+.1}%, C_err {:+.1}%, {elapsed:.1} s", f * 100.0, tau * 100.0, c * 100.0),
    );
}

/// Rotation vector taking `a` to `b`, both world-frame orientations.
fn rotation_delta(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> Vector3<f64> {
    (b * a.inverse()).scaled_axis()
}

#[test]
fn dynamics_identities() {
    let model = RobotModel::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut spd_failures = 0;
    for _ in 0..10_000 {
        let m = mass_matrix(&model, &random_q(&model, &mut rng));
        let asym = (m - m.transpose()).amax();
        let min_eig = m.symmetric_eigen().eigenvalues.min();
        if asym > 1e-12 || min_eig.is_nan() || min_eig <= 0.0 {
            spd_failures += 1;
        }
    }

    let h = 1e-6;
    let mut jac_err: f64 = 0.0;
    let mut grav_err: f64 = 0.0;
    for _ in 0..200 {
        let q = random_q(&model, &mut rng);
        let jac = ChainFrames::compute(&model, &q).jacobian();
        let g = gravity_torque(&model, &q);
        for i in 0..7 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            let (pp, pm) = (ee_pose(&model, &qp), ee_pose(&model, &qm));
            let v = (pp.translation.vector - pm.translation.vector) / (2.0 * h);
            let w = rotation_delta(&pm.rotation, &pp.rotation) / (2.0 * h);
            let fd = Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z);
            jac_err = jac_err.max((jac.column(i) - fd).amax());
            let du = (potential_energy(&model, &qp) - potential_energy(&model, &qm)) / (2.0 * h);
            grav_err = grav_err.max((g[i] - du).abs());
        }
    }

    // regressor against inverse dynamics on random states
    let pi = ParameterVector::from_model(&model);
    let mut reg_err: f64 = 0.0;
    for _ in 0..1000 {
        let q = random_q(&model, &mut rng);
        let qd = random_vec(&mut rng, 2.0);
        let qdd = random_vec(&mut rng, 5.0);
        let y = build_regressor(&model, &q, &qd, &qdd);
        let tau = y.view((0, 0), (7, 70)) * &pi.0 + rotor_torque(&model, &qdd).rows(0, 7);
        let oracle = inverse_dynamics(&model, &q, &qd, &qdd);
        reg_err = reg_err.max((tau - oracle.rows(0, 7)).amax());
    }

    verdict(
        7,
        "dynamics identities",
        spd_failures == 0 && jac_err < 1e-5 && grav_err < 1e-5 && reg_err < 1e-8,
        &format!(
            "M not SPD on {spd_failures}/10000, Jacobian FD {jac_err:.2e}, gravity FD {grav_err:.2e}, regressor {reg_err:.2e}"
        ),
    );
}

#[test]
fn passivity_and_tanks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gains = UficGains::default();
    let mut worst_e = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_gamma = (f64::INFINITY, f64::NEG_INFINITY);
    let mut observed = 0u64;
    for run in 0..100 {
        let id = if run % 2 == 0 { TaskId::ForceProfile } else { TaskId::ForceCircle };
        let mut cfg = ScenarioConfig::task(id);
        cfg.trials = 1;
        cfg.duration = 3.0;
        cfg.seed = rng.random();
        cfg.task.force_peak = rng.random_range(5.0..40.0);
        cfg.task.force_period = rng.random_range(2.0..6.0);
        cfg.task.contact_force = rng.random_range(3.0..20.0);
        cfg.task.circle_radius = rng.random_range(0.03..0.12);
        cfg.task.circle_period = rng.random_range(2.0..6.0);
        cfg.reference.contact.stiffness = rng.random_range(1e4..5e4);
        let r = run_task(&cfg).unwrap();
        let t = &r.trials[0];
        for out in [&t.nominal, &t.reference] {
            let e = &out.tanks;
            observed += e.ticks;
            worst_e = (worst_e.0.min(e.energy_min), worst_e.1.max(e.energy_max));
            worst_gamma = (worst_gamma.0.min(e.gamma_min), worst_gamma.1.max(e.gamma_max));
        }
    }
    let tanks_ok = worst_e.0 >= gains.e_min && worst_e.1 <= gains.e_max;
    let gamma_ok = worst_gamma.0 >= 0.0 && worst_gamma.1 <= 1.0;

    // empty tank, no latched contact: the force channel must be exactly off
    let mut zero_ok = true;
    for _ in 0..1000 {
        let mut g = gains;
        g.desired = Wrench::new(0.0, 0.0, -rng.random_range(1.0..50.0), 0.0, 0.0, 0.0);
        let mut state = UficState::new(&g);
        state.e_f = g.e_min;
        state.e_i = g.e_min;
        let x = CartesianState {
            pose: ee_pose(&RobotModel::default_arm(), &TaskParams::default().home),
            twist: Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        };
        let measured = Wrench::new(0.0, 0.0, rng.random_range(-0.9..0.9), 0.0, 0.0, 0.0);
        let (shaped, next) = ufic_wrench(&state, &g, &measured, &x, 1e-3);
        zero_ok &= next.gamma_f == 0.0 && shaped.iter().all(|v| *v == 0.0);
    }
    verdict(
        8,
        "passivity and tanks",
        tanks_ok && gamma_ok && zero_ok && observed > 0,
        &format!(
            "E in [{:.3}, {:.3}] J, gamma in [{:.3}, {:.3}], empty-tank force exactly zero: {zero_ok}",
            worst_e.0, worst_e.1, worst_gamma.0, worst_gamma.1
        ),
    );
}

/// Brute-force distance between two segments by dense sampling.
fn sampled_distance(p1: Vector3<f64>, q1: Vector3<f64>, p2: Vector3<f64>, q2: Vector3<f64>) -> f64 {
    let n = 80;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let a = p1 + (q1 - p1) * (i as f64 / n as f64);
        for j in 0..=n {
            let b = p2 + (q2 - p2) * (j as f64 / n as f64);
            best = best.min((a - b).norm());
        }
    }
    best
}

#[test]
fn controller_null_cases() {
    let model = RobotModel::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let home = TaskParams::default().home;

    // DC at its own pose and at rest commands exactly tau_cor; its latched
    // posture makes the nullspace term exactly zero too
    let mut dc_ok = true;
    let mut null_ok = true;
    for _ in 0..200 {
        let q = home + random_vec(&mut rng, 0.4);
        let names = vec!["arm".to_string()];
        let mut bus = RobotBus::new(vec![("arm".into(), model.clone())], 1e-3);
        bus.begin_tick(0);
        bus.publish_state(0, JointState::at_rest(q), Wrench::zeros());
        let d = ControlletDescriptor::new("DC", ControlletKind::CartesianImpedance, vec![0]);
        let mut mc = register_controllets(vec![d], &["DC"], &names).unwrap();
        bus.set_target(0, Target::pose(ee_pose(&model, &q)));
        mc.tick(&mut bus);
        let slot = bus.command(0);
        let tau_cor = bus.snapshot(0).dynamics.coriolis_and_gravity();
        dc_ok &= slot.terms.sum() == tau_cor && slot.terms.null == JointVector::zeros();

        let gains = ImpedanceGains { null_posture: Some(q), ..ImpedanceGains::default() };
        let state = JointState::at_rest(q);
        let dynamics = torqueloop_core::dynamics(&model, &state).unwrap();
        null_ok &= nullspace_torque(&dynamics, &state, &gains) == JointVector::zeros();
    }

    // manipulability term vanishes above m_0
    let cfg = ManipulabilityConfig::default();
    let mut ma_checked = 0;
    let mut ma_ok = true;
    for _ in 0..20_000 {
        let q = random_q(&model, &mut rng);
        let jac = ChainFrames::compute(&model, &q).jacobian();
        let m = (jac * jac.transpose()).determinant().max(0.0).sqrt();
        if m > cfg.threshold * 1.01 {
            ma_checked += 1;
            ma_ok &= manipulability_torque(&model, &q, &cfg).0 == JointVector::zeros();
        }
    }

    // collision term vanishes when every segment pair is at least 5 cm apart
    let ca = CollisionConfig::default();
    let mut ca_checked = 0;
    let mut ca_ok = true;
    let mut ca_close = 0;
    for k in 0..400 {
        // alternate between the grasp layout and bases 0.3 m apart
        let params = TaskParams { base_offset: if k % 2 == 0 { 0.55 } else { 0.15 }, ..TaskParams::default() };
        let models = TaskSpec::new(TaskId::BoxGrasp, params, &model).robot_models(&model);
        let states: Vec<JointState> = (0..2).map(|_| JointState::at_rest(home + random_vec(&mut rng, 2.0))).collect();
        let frames: Vec<ChainFrames> = models.iter().zip(&states).map(|(m, s)| ChainFrames::compute(m, &s.q)).collect();
        let mut d_min = f64::INFINITY;
        for i in 0..7 {
            for j in 0..7 {
                let d = sampled_distance(
                    frames[0].anchor(i),
                    frames[0].anchor(i + 1),
                    frames[1].anchor(j),
                    frames[1].anchor(j + 1),
                );
                d_min = d_min.min(d);
            }
        }
        // sampling overestimates by at most half a sample spacing
        if d_min >= ca.threshold + 0.01 {
            ca_checked += 1;
            let out = collision_avoidance_torque(&models, &states, &ca).unwrap();
            ca_ok &= out.iter().all(|(tau, _)| *tau == JointVector::zeros());
        } else if d_min < ca.threshold - 0.01 {
            // positive control: close pairs must push apart
            let out = collision_avoidance_torque(&models, &states, &ca).unwrap();
            ca_close += 1;
            ca_ok &= out.iter().any(|(tau, _)| *tau != JointVector::zeros());
        }
    }

    verdict(
        9,
        "controller null cases",
        dc_ok && null_ok && ma_ok && ca_ok && ma_checked > 50 && ca_checked > 50 && ca_close > 0,
        &format!(
            "tau_cmd = tau_cor: {dc_ok}, tau_null = 0: {null_ok}, tau_ma = 0 on {ma_checked} configs: {ma_ok}, tau_ca = 0 on {ca_checked} configs and nonzero on {ca_close} close ones: {ca_ok}"
        ),
    );
}

#[test]
fn determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut cases = Vec::new();
    for (label, mut cfg) in [
        ("task 4", ScenarioConfig::task(TaskId::ForceCircle)),
        ("task 5", ScenarioConfig::task(TaskId::BoxGrasp)),
        ("CA-MA", ScenarioConfig::benchmark(Condition::Both)),
    ] {
        cfg.trials = 1;
        cfg.duration = 2.0;
        cfg.seed = 42;
        let mut bytes = Vec::new();
        for k in 0..2 {
            let r = run_task_or_bench(&cfg);
            let path = dir.path().join(format!("{}_{k}.csv", label.replace(' ', "_")));
            r.save(&path).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        let same = bytes[0] == bytes[1] && !bytes[0].is_empty();
        identical &= same;
        cases.push(format!("{label}: {}", if same { "identical" } else { "differs" }));
    }
    verdict(10, "determinism", identical, &cases.join(", "));
}

fn run_task_or_bench(cfg: &ScenarioConfig) -> torqueloop_core::trace::Trace {
    match cfg.kind {
        torqueloop_core::scenario::ScenarioKind::Task(_) => run_task(cfg).unwrap().trials.remove(0).reference.trace,
        torqueloop_core::scenario::ScenarioKind::Benchmark(_) => run_benchmark(cfg, None).unwrap().run.trace,
    }
}
