//! Fixtures shared by the benchmarks: a controller and bus set up for one
//! benchmark condition, at rest in the condition's start configuration.

use torqueloop_core::bus::RobotBus;
use torqueloop_core::manager::{register_controllets, MultimodeController};
use torqueloop_core::plant::trajectory_source;
use torqueloop_core::scenario::{robot_models, task_descriptors, task_spec, Condition, ScenarioConfig};
use torqueloop_core::{JointState, JointVector, Result, Wrench};

pub struct TickFixture {
    pub controller: MultimodeController,
    pub bus: RobotBus,
    states: Vec<JointState>,
    tick: u64,
}

impl TickFixture {
    pub fn new(condition: Condition) -> Result<Self> {
        let cfg = ScenarioConfig::benchmark(condition);
        let spec = task_spec(&cfg);
        let models = robot_models(&cfg, &spec, &cfg.model);
        let names = cfg.robots.clone();
        let mut bus = RobotBus::new(names.iter().cloned().zip(models.iter().cloned()).collect(), cfg.nominal.dt);
        let initial: Vec<&str> = cfg.initial.iter().map(String::as_str).collect();
        let controller = register_controllets(task_descriptors(&cfg, &spec), &initial, &names)?;
        let target = trajectory_source(&spec, 0.0)?;
        let mut states = Vec::with_capacity(models.len());
        for (k, model) in models.iter().enumerate() {
            let q: JointVector = spec.initial_configuration(model, k)?;
            states.push(JointState::at_rest(q));
            bus.set_target(k, target.robot);
        }
        bus.set_group_target(target.group);
        Ok(Self { controller, bus, states, tick: 0 })
    }

    /// Publishes the fixed measurements for the next tick.
    pub fn publish(&mut self) {
        self.bus.begin_tick(self.tick);
        for (r, s) in self.states.iter().enumerate() {
            self.bus.publish_state(r, *s, Wrench::zeros());
        }
    }

    /// One controller tick on the published snapshot.
    pub fn tick(&mut self) {
        self.controller.tick(&mut self.bus);
        self.tick += 1;
    }

    pub fn command(&self, robot: usize) -> JointVector {
        self.bus.command(robot).torque
    }
}
