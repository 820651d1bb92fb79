//! Per-robot shared state owned by the multimode controller.
//!
//! Each tick the manager publishes one [`RobotSnapshot`] per robot, all
//! stamped with the same tick, and controllets read them through a shared
//! reference. Commands flow back through one [`CommandSlot`] per robot.

use nalgebra::UnitQuaternion;

use crate::controllet::TorqueTerms;
use crate::dynamics::DynamicsTerms;
use crate::kinematics::{CartesianState, ChainFrames};
use crate::math::{JointVector, Pose, Twist, Wrench};
use crate::model::RobotModel;
use crate::state::JointState;

pub type RobotId = usize;

/// Bit flags recorded per robot per tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Flags(pub u32);

impl Flags {
    pub const SATURATED: Flags = Flags(1);
    pub const CONTROLLET_FAULT: Flags = Flags(1 << 1);
    pub const GRAVITY_FALLBACK: Flags = Flags(1 << 2);
    pub const CA_FALLBACK_AXIS: Flags = Flags(1 << 3);
    pub const CA_PREVIOUS_AXIS: Flags = Flags(1 << 4);
    pub const MA_NAN_GUARD: Flags = Flags(1 << 5);
    pub const TANK_UNDERFLOW: Flags = Flags(1 << 6);
    pub const PLANT_FAULT: Flags = Flags(1 << 7);
    pub const CA_ACTIVE: Flags = Flags(1 << 8);
    pub const MA_ACTIVE: Flags = Flags(1 << 9);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Per-joint saturation bitmask stored in the upper half.
    pub fn saturated_joints(mask: u8) -> Flags {
        Flags((mask as u32) << 16)
    }

    pub fn saturation_mask(self) -> u8 {
        (self.0 >> 16) as u8
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

/// Desired values for one robot (or for a coordinated group) at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Target {
    pub pose: Option<Pose>,
    pub joints: Option<JointVector>,
    /// Desired wrench exerted by the end effector, base frame.
    pub wrench: Option<Wrench>,
    /// Desired end-effector acceleration, used by the optional inertial
    /// feedforward.
    pub accel: Option<Twist>,
}

impl Target {
    pub fn pose(pose: Pose) -> Self {
        Self { pose: Some(pose), ..Self::default() }
    }
}

/// Everything a controllet may read about one robot for the current tick.
#[derive(Debug, Clone, Copy)]
pub struct RobotSnapshot {
    pub tick: u64,
    pub state: JointState,
    pub frames: ChainFrames,
    pub dynamics: DynamicsTerms,
    /// End-effector pose and twist `J q̇`.
    pub ee: CartesianState,
    /// External wrench exerted by the end effector, as reported by the robot.
    pub wrench: Wrench,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CommandSlot {
    /// Torque actually sent (after saturation).
    pub torque: JointVector,
    pub terms: TorqueTerms,
    /// Tick at which the slot was last written.
    pub stamp: Option<u64>,
    /// Controllet index that wrote the slot, `None` for the fallback.
    pub owner: Option<usize>,
    pub flags: Flags,
}

pub struct RobotBus {
    names: Vec<String>,
    models: Vec<RobotModel>,
    snapshots: Vec<RobotSnapshot>,
    targets: Vec<Target>,
    group_target: Target,
    commands: Vec<CommandSlot>,
    tick: u64,
    dt: f64,
}

impl RobotBus {
    pub fn new(robots: Vec<(String, RobotModel)>, dt: f64) -> Self {
        let n = robots.len();
        let (names, models): (Vec<_>, Vec<_>) = robots.into_iter().unzip();
        let snapshots = models
            .iter()
            .map(|m| {
                let state = JointState::default();
                let frames = ChainFrames::compute(m, &state.q);
                RobotSnapshot {
                    tick: 0,
                    state,
                    frames,
                    dynamics: DynamicsTerms::compute(m, &frames, &state.qd),
                    ee: CartesianState::at(frames.ee),
                    wrench: Wrench::zeros(),
                }
            })
            .collect();
        Self {
            names,
            models,
            snapshots,
            targets: vec![Target::default(); n],
            group_target: Target::default(),
            commands: vec![CommandSlot::default(); n],
            tick: 0,
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn robot_index(&self, name: &str) -> Option<RobotId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, robot: RobotId) -> &str {
        &self.names[robot]
    }

    pub fn model(&self, robot: RobotId) -> &RobotModel {
        &self.models[robot]
    }

    pub fn set_model(&mut self, robot: RobotId, model: RobotModel) {
        self.models[robot] = model;
    }

    pub fn snapshot(&self, robot: RobotId) -> &RobotSnapshot {
        &self.snapshots[robot]
    }

    pub fn target(&self, robot: RobotId) -> &Target {
        &self.targets[robot]
    }

    pub fn group_target(&self) -> &Target {
        &self.group_target
    }

    pub fn set_target(&mut self, robot: RobotId, target: Target) {
        self.targets[robot] = target;
    }

    pub fn set_group_target(&mut self, target: Target) {
        self.group_target = target;
    }

    pub fn command(&self, robot: RobotId) -> &CommandSlot {
        &self.commands[robot]
    }

    pub(crate) fn command_mut(&mut self, robot: RobotId) -> &mut CommandSlot {
        &mut self.commands[robot]
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn begin_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    /// Publishes a measured state and recomputes kinematics and dynamics
    /// with the robot's model.
    pub fn publish_state(&mut self, robot: RobotId, state: JointState, wrench: Wrench) {
        let model = &self.models[robot];
        let frames = ChainFrames::compute(model, &state.q);
        let dynamics = DynamicsTerms::compute(model, &frames, &state.qd);
        let twist = dynamics.jacobian * state.qd;
        self.snapshots[robot] = RobotSnapshot {
            tick: self.tick,
            state,
            frames,
            dynamics,
            ee: CartesianState { pose: frames.ee, twist },
            wrench,
        };
    }

    /// True when every snapshot carries the current tick.
    pub fn snapshot_consistent(&self) -> bool {
        self.snapshots.iter().all(|s| s.tick == self.tick)
    }

    pub fn ee_orientation(&self, robot: RobotId) -> UnitQuaternion<f64> {
        self.snapshots[robot].ee.pose.rotation
    }
}
