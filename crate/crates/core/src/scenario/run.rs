//! Closed-loop execution: controller, plants and recording for one run.

use std::time::{Duration, Instant};

use crossbeam::channel;

use crate::bus::{Flags, RobotBus};
use crate::controllet::{ControlletDescriptor, ControlletKind};
use crate::error::{Error, Result};
use crate::manager::{register_controllets, MultimodeController};
use crate::math::{JointVector, Wrench};
use crate::metrics::TimingSample;
use crate::model::RobotModel;
use crate::plant::{
    step_with_box, BoxBody, Contact, Measurement, Plant, PlantConfig, PlantOutput, TaskId, TaskReference, TaskSpec,
};
use crate::state::JointState;
use crate::trace::{Trace, TraceSample};

use super::config::{ScenarioConfig, ScenarioKind, TimeMode};
use super::PlantSettings;

/// Most robots a single run drives.
pub const MAX_ROBOTS: usize = 2;

/// Reads a global allocation counter; installed by binaries or tests that
/// register a counting allocator.
pub type AllocationProbe = fn() -> u64;

/// Reference stream for a run.
pub enum Reference<'a> {
    Task(&'a TaskSpec),
    /// Free-form per-tick source, e.g. an excitation trajectory.
    Custom(&'a (dyn Fn(f64) -> Result<TaskReference> + Sync)),
}

impl Reference<'_> {
    fn at(&self, t: f64) -> Result<TaskReference> {
        match self {
            Reference::Task(spec) => crate::plant::trajectory_source(spec, t),
            Reference::Custom(f) => f(t),
        }
    }
}

/// Knobs of one closed-loop run.
pub struct RunSetup<'a> {
    pub plant: &'a PlantSettings,
    /// Model integrated by the plant before its perturbation; defaults to
    /// the scenario model.
    pub plant_model: Option<&'a RobotModel>,
    /// Model the controller uses; defaults to the scenario model.
    pub controller_model: Option<&'a RobotModel>,
    pub seed: u64,
    pub time_mode: TimeMode,
    /// Overrides the configured controllets and initial set.
    pub controllets: Option<(Vec<ControlletDescriptor>, Vec<String>)>,
    /// Overrides the initial joint configurations.
    pub initial: Option<Vec<JointVector>>,
    pub allocation_probe: Option<AllocationProbe>,
}

impl<'a> RunSetup<'a> {
    pub fn new(plant: &'a PlantSettings, seed: u64) -> Self {
        Self {
            plant,
            plant_model: None,
            controller_model: None,
            seed,
            time_mode: TimeMode::Virtual,
            controllets: None,
            initial: None,
            allocation_probe: None,
        }
    }
}

/// Range of the force-channel tank quantities seen during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankEnvelope {
    pub energy_min: f64,
    pub energy_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Ticks observed with a force controllet active.
    pub ticks: u64,
}

impl Default for TankEnvelope {
    fn default() -> Self {
        Self {
            energy_min: f64::INFINITY,
            energy_max: f64::NEG_INFINITY,
            gamma_min: f64::INFINITY,
            gamma_max: f64::NEG_INFINITY,
            alpha_min: f64::INFINITY,
            alpha_max: f64::NEG_INFINITY,
            ticks: 0,
        }
    }
}

impl TankEnvelope {
    fn observe(&mut self, mc: &MultimodeController) {
        let mut seen = false;
        for i in mc.active().iter() {
            for s in mc.controllet(i).force_states() {
                seen = true;
                for e in [s.e_f, s.e_i] {
                    self.energy_min = self.energy_min.min(e);
                    self.energy_max = self.energy_max.max(e);
                }
                self.gamma_min = self.gamma_min.min(s.gamma_f);
                self.gamma_max = self.gamma_max.max(s.gamma_f);
                for a in [s.alpha_f, s.alpha_i] {
                    self.alpha_min = self.alpha_min.min(a);
                    self.alpha_max = self.alpha_max.max(a);
                }
            }
        }
        if seen {
            self.ticks += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    /// Controller compute time per tick.
    pub timing: Vec<TimingSample>,
    /// A plant diverged; the trace stops at that tick.
    pub plant_fault: bool,
    /// Ticks on which a controllet faulted, summed over robots.
    pub controller_faults: u64,
    /// Robot-ticks whose command was not stamped with the current tick.
    pub unstamped: u64,
    pub ownership_violations: u64,
    pub tanks: TankEnvelope,
    /// Wall-clock ticks that finished after their deadline.
    pub overruns: u64,
    /// Heap allocations inside the controller tick, when probed.
    pub allocations: Option<u64>,
    pub box_height: Option<Vec<f64>>,
}

/// Observer invoked after every tick.
pub type TickHook<'a> = &'a mut dyn FnMut(u64, &MultimodeController, &RobotBus);

/// Robot models of the scenario with `base` as the arm description.
pub fn robot_models(cfg: &ScenarioConfig, spec: &TaskSpec, base: &RobotModel) -> Vec<RobotModel> {
    let models = spec.robot_models(base);
    if cfg.robots.len() == 1 {
        models.into_iter().take(1).collect()
    } else {
        models
    }
}

/// Controllet descriptors with the task's coupling geometry filled in.
pub fn task_descriptors(cfg: &ScenarioConfig, spec: &TaskSpec) -> Vec<ControlletDescriptor> {
    cfg.controllets
        .iter()
        .map(|c| {
            let mut d = c.descriptor.clone();
            if matches!(d.kind, ControlletKind::CoupledCartesianImpedance | ControlletKind::CoupledUfic) {
                d.params.coupling = spec.coupling();
            }
            // the configured desired wrench sizes the initial tank level;
            // the task's stream overrides it tick by tick
            if d.kind == ControlletKind::Ufic && d.params.ufic.desired == Wrench::zeros() {
                let f = match spec.id {
                    TaskId::ForceProfile => spec.params.force_peak,
                    TaskId::ForceCircle => spec.params.contact_force,
                    _ => 0.0,
                };
                d.params.ufic.desired = Wrench::new(0.0, 0.0, -f, 0.0, 0.0, 0.0);
            }
            d
        })
        .collect()
}

fn contacts(cfg: &ScenarioConfig, settings: &PlantSettings) -> Vec<Contact> {
    match cfg.kind {
        ScenarioKind::Task(id) if id.has_plane() => vec![Contact::plane(cfg.task.plane_height, settings.contact)],
        _ => Vec::new(),
    }
}

/// Plant seed for robot `k` of a run seeded with `seed`.
pub fn plant_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

struct Plants {
    plants: Vec<Plant>,
    body: Option<BoxBody>,
    outputs: [PlantOutput; MAX_ROBOTS],
}

impl Plants {
    fn step(&mut self, torques: &[JointVector; MAX_ROBOTS]) {
        let n = self.plants.len();
        match &mut self.body {
            Some(body) => step_with_box(&mut self.plants, body, &torques[..n], &mut self.outputs[..n]),
            None => {
                for k in 0..n {
                    self.outputs[k] = self.plants[k].step(&torques[k]);
                }
            }
        }
    }
}

fn initial_output(q: JointVector) -> PlantOutput {
    let m = Measurement { state: JointState::at_rest(q), torque: JointVector::zeros(), wrench: Default::default() };
    PlantOutput { tick: 0, measured: m, truth: m, fault: false }
}

/// Runs the scenario's closed loop once. `reference` drives the targets;
/// `hook` observes every completed tick.
pub fn simulate(
    cfg: &ScenarioConfig,
    spec: &TaskSpec,
    reference: Reference<'_>,
    setup: RunSetup<'_>,
    ticks: u64,
    mut hook: Option<TickHook<'_>>,
) -> Result<RunOutput> {
    let base = setup.plant_model.unwrap_or(&cfg.model);
    let controller_base = setup.controller_model.unwrap_or(&cfg.model);
    let plant_models = robot_models(cfg, spec, base);
    let controller_models = robot_models(cfg, spec, controller_base);
    let n = plant_models.len();
    if n > MAX_ROBOTS {
        return Err(Error::Config(format!("at most {MAX_ROBOTS} robots per run")));
    }
    let dt = setup.plant.dt;

    let q0: Vec<JointVector> = match setup.initial {
        Some(q) => q,
        None => (0..n).map(|k| spec.initial_configuration(&plant_models[k], k)).collect::<Result<_>>()?,
    };
    let mut plants = Vec::with_capacity(n);
    for k in 0..n {
        let config = PlantConfig {
            model: plant_models[k].clone(),
            dt,
            contacts: contacts(cfg, setup.plant),
            noise: setup.plant.noise,
            delay: setup.plant.delay,
            perturbation: setup.plant.perturbation.clone(),
            seed: plant_seed(setup.seed, k),
        };
        plants.push(Plant::new(config, q0[k])?);
    }
    let body = match cfg.kind {
        ScenarioKind::Task(crate::plant::TaskId::BoxGrasp) => {
            let p = &cfg.task;
            Some(BoxBody::resting(p.box_center, p.box_half_extents, p.box_mass, setup.plant.contact))
        }
        _ => None,
    };
    let mut outputs = [initial_output(JointVector::zeros()); MAX_ROBOTS];
    for k in 0..n {
        outputs[k] = initial_output(plants[k].state().q);
    }
    let sim = Plants { plants, body, outputs };

    let names: Vec<String> = cfg.robots.clone();
    let mut bus = RobotBus::new(names.iter().cloned().zip(controller_models.iter().cloned()).collect(), dt);
    let configured = setup.controllets.is_none();
    let (descriptors, initial) = match setup.controllets {
        Some(c) => c,
        None => (task_descriptors(cfg, spec), cfg.initial.clone()),
    };
    let initial_refs: Vec<&str> = initial.iter().map(String::as_str).collect();
    let mut mc = register_controllets(descriptors, &initial_refs, &names)?;
    if configured {
        for c in &cfg.controllets {
            for (key, value) in &c.params {
                mc.configure(&c.descriptor.name, key, *value)?;
            }
        }
    }

    let dofs: Vec<usize> = controller_models.iter().map(RobotModel::dof).collect();
    let mut trace = Trace::with_capacity(names.clone(), dofs, dt, ticks as usize);
    let mut timing = Vec::with_capacity(ticks as usize);
    let mut tanks = TankEnvelope::default();
    let mut unstamped = 0u64;
    let mut overruns = 0u64;
    let mut allocations = setup.allocation_probe.map(|_| 0u64);
    let mut box_height = sim.body.as_ref().map(|_| Vec::with_capacity(ticks as usize));
    let mut plant_fault = false;

    // wall-clock mode: the plant steps on its own thread and the two sides
    // exchange one buffer each per tick
    let wall = setup.time_mode == TimeMode::WallClock;
    std::thread::scope(|scope| -> Result<()> {
        let (cmd_tx, cmd_rx) = channel::bounded::<[JointVector; MAX_ROBOTS]>(1);
        let (out_tx, out_rx) = channel::bounded::<[PlantOutput; MAX_ROBOTS]>(1);
        let mut local = if wall {
            let mut sim = sim;
            scope.spawn(move || {
                while let Ok(torques) = cmd_rx.recv() {
                    sim.step(&torques);
                    if out_tx.send(sim.outputs).is_err() {
                        break;
                    }
                }
                sim
            });
            None
        } else {
            Some(sim)
        };

        let period = Duration::from_secs_f64(dt);
        let start = Instant::now();
        let mut current = outputs;
        for tick in 0..ticks {
            if wall {
                let deadline = start + period * tick as u32;
                pace_until(deadline);
            }
            bus.begin_tick(tick);
            let target = reference.at(tick as f64 * dt)?;
            for r in 0..n {
                bus.set_target(r, target.robot);
                let m = &current[r].measured;
                bus.publish_state(r, m.state, m.wrench);
            }
            if n == 2 {
                bus.set_group_target(target.group);
                if target.robot.pose.is_none() && target.group.pose.is_some() {
                    set_split_targets(&mut bus, spec, &target);
                }
            }

            let before = setup.allocation_probe.map(|p| p());
            let t0 = Instant::now();
            mc.tick(&mut bus);
            let elapsed = t0.elapsed();
            if let (Some(p), Some(b), Some(a)) = (setup.allocation_probe, before, allocations.as_mut()) {
                *a += p() - b;
            }
            timing.push(TimingSample { tick, duration_us: elapsed.as_secs_f64() * 1e6 });
            tanks.observe(&mc);

            let mut torques = [JointVector::zeros(); MAX_ROBOTS];
            for (r, t) in torques.iter_mut().enumerate().take(n) {
                let slot = bus.command(r);
                if slot.stamp != Some(tick) {
                    unstamped += 1;
                }
                *t = slot.torque;
            }
            let next = match local.as_mut() {
                Some(sim) => {
                    sim.step(&torques);
                    sim.outputs
                }
                None => {
                    cmd_tx.send(torques).map_err(|_| Error::PlantFault("plant thread stopped".into()))?;
                    out_rx.recv().map_err(|_| Error::PlantFault("plant thread stopped".into()))?
                }
            };
            if wall && Instant::now() > start + period * (tick as u32 + 1) {
                overruns += 1;
            }

            trace.push_tick(tick);
            let mut faulted = false;
            for r in 0..n {
                let snap = bus.snapshot(r);
                let slot = bus.command(r);
                let mut flags = slot.flags;
                if next[r].fault {
                    flags.insert(Flags::PLANT_FAULT);
                    faulted = true;
                }
                trace.push_sample(
                    r,
                    TraceSample {
                        q: snap.state.q,
                        qd: snap.state.qd,
                        tau_cmd: slot.torque,
                        tau_meas: next[r].measured.torque,
                        tau_applied: next[r].truth.torque,
                        wrench: snap.wrench,
                        pose: snap.ee.pose,
                        terms: slot.terms,
                        flags,
                    },
                );
            }
            if let (Some(h), Some(sim)) = (box_height.as_mut(), local.as_ref()) {
                h.push(sim.body.as_ref().map_or(0.0, |b| b.center.z));
            }
            if let Some(h) = hook.as_mut() {
                h(tick, &mc, &bus);
            }
            current = next;
            if faulted {
                plant_fault = true;
                break;
            }
            if mc.stop_requested() {
                break;
            }
        }
        drop(cmd_tx);
        Ok(())
    })?;

    let controller_faults = (0..n).map(|r| mc.fault_count(r)).sum();
    Ok(RunOutput {
        trace,
        timing,
        plant_fault,
        controller_faults,
        unstamped,
        ownership_violations: mc.ownership_violations(),
        tanks,
        overruns,
        allocations,
        box_height,
    })
}

/// Per-arm pose targets derived from a group pose, for independent
/// controllets running on a two-robot scenario.
fn set_split_targets(bus: &mut RobotBus, spec: &TaskSpec, target: &TaskReference) {
    let Some(group) = target.group.pose else { return };
    let lift = group.translation.vector - spec.params.box_center;
    for r in 0..2 {
        let mut pose = spec.start_pose(r);
        pose.translation.vector += lift;
        let mut t = target.robot;
        t.pose = Some(pose);
        bus.set_target(r, t);
    }
}

/// Sleeps most of the way to `deadline`, then spins.
fn pace_until(deadline: Instant) {
    let now = Instant::now();
    if deadline <= now {
        return;
    }
    let remaining = deadline - now;
    if remaining > Duration::from_micros(200) {
        std::thread::sleep(remaining - Duration::from_micros(150));
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}
