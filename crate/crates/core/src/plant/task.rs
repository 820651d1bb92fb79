//! Parametric reference generators for the five validation tasks.
//!
//! 1. joint-space sinusoid around a ready posture (joint impedance)
//! 2. Cartesian free-space motion around the ready pose
//! 3. fixed pose on a plane with a normal force rising from 0 to a peak and
//!    back over one period
//! 4. constant normal force while tracing a circle on the plane
//! 5. two arms squeezing a box from opposite sides and moving it up and down

use std::f64::consts::PI;

use nalgebra::{Translation3, UnitQuaternion, Vector2, Vector3};

use crate::bus::Target;
use crate::controllet::CouplingConfig;
use crate::error::{Error, Result};
use crate::kinematics::{ee_pose, inverse_kinematics, IkOptions};
use crate::math::{joint_vector, JointVector, Pose, Wrench};
use crate::model::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    JointMotion = 1,
    CartesianMotion = 2,
    ForceProfile = 3,
    ForceCircle = 4,
    BoxGrasp = 5,
}

impl TaskId {
    pub fn from_number(n: u32) -> Result<Self> {
        Ok(match n {
            1 => TaskId::JointMotion,
            2 => TaskId::CartesianMotion,
            3 => TaskId::ForceProfile,
            4 => TaskId::ForceCircle,
            5 => TaskId::BoxGrasp,
            _ => return Err(Error::Config(format!("unknown task id {n}, expected 1..=5"))),
        })
    }

    pub fn number(self) -> u32 {
        self as u32
    }

    pub fn robot_count(self) -> usize {
        if self == TaskId::BoxGrasp {
            2
        } else {
            1
        }
    }

    pub fn has_plane(self) -> bool {
        matches!(self, TaskId::ForceProfile | TaskId::ForceCircle)
    }
}

/// Numeric task definition. Amplitudes and frequencies of the free-space
/// tasks are defaults chosen to stay well inside the joint limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskParams {
    /// Ready posture: center of task 1 and IK seed for the others.
    pub home: JointVector,
    pub joint_amplitude: JointVector,
    pub joint_frequency: f64,
    pub cartesian_amplitude: Vector3<f64>,
    pub cartesian_frequency: f64,
    pub plane_height: f64,
    /// How far below the surface the contact tasks place the pose target.
    pub press_depth: f64,
    pub force_peak: f64,
    pub force_period: f64,
    pub contact_force: f64,
    pub circle_center: Vector2<f64>,
    pub circle_radius: f64,
    pub circle_period: f64,
    pub box_center: Vector3<f64>,
    pub box_half_extents: Vector3<f64>,
    pub box_mass: f64,
    /// Lateral offset of the two robot bases from the box plane.
    pub base_offset: f64,
    /// How far inside the box faces the grasp targets sit.
    pub grasp_depth: f64,
    pub squeeze: f64,
    /// Peak-to-trough height of the vertical box motion.
    pub lift: f64,
    pub lift_period: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            home: joint_vector(&[0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8]),
            joint_amplitude: joint_vector(&[0.3, 0.2, 0.3, 0.25, 0.3, 0.25, 0.3]),
            joint_frequency: 0.2,
            cartesian_amplitude: Vector3::new(0.1, 0.1, 0.05),
            cartesian_frequency: 0.2,
            plane_height: 0.3,
            press_depth: 0.005,
            force_peak: 30.0,
            force_period: 10.0,
            contact_force: 9.81,
            circle_center: Vector2::new(0.45, 0.0),
            circle_radius: 0.1,
            circle_period: 5.0,
            box_center: Vector3::new(0.5, 0.0, 0.35),
            box_half_extents: Vector3::new(0.1, 0.15, 0.1),
            box_mass: 0.5,
            base_offset: 0.55,
            grasp_depth: 0.01,
            squeeze: 20.0,
            lift: 0.2,
            lift_period: 10.0,
        }
    }
}

/// Desired values for the current instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskReference {
    /// Target for each robot of a single-robot task.
    pub robot: Target,
    /// Shared target of a two-robot task.
    pub group: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub params: TaskParams,
    /// End-effector pose at the ready posture.
    pub anchor: Pose,
}

impl TaskSpec {
    pub fn new(id: TaskId, params: TaskParams, model: &RobotModel) -> Self {
        Self { id, params, anchor: ee_pose(model, &params.home) }
    }

    /// Tool orientation used by the Cartesian tasks.
    pub fn tool_orientation(&self) -> UnitQuaternion<f64> {
        self.anchor.rotation
    }

    /// Robot models for this task: the box grasp places two copies of
    /// `model` at `y = ±base_offset`.
    pub fn robot_models(&self, model: &RobotModel) -> Vec<RobotModel> {
        if self.id != TaskId::BoxGrasp {
            return vec![model.clone()];
        }
        [1.0, -1.0]
            .iter()
            .map(|s| {
                let mut m = model.clone();
                m.base = Pose::from_parts(
                    Translation3::new(0.0, s * self.params.base_offset, 0.0),
                    UnitQuaternion::identity(),
                ) * model.base;
                m
            })
            .collect()
    }

    /// Grasp coupling: split along the world y axis, both tools keeping the
    /// task orientation.
    pub fn coupling(&self) -> CouplingConfig {
        let axis = self.tool_orientation().scaled_axis();
        CouplingConfig {
            offset: self.params.box_half_extents.y - self.params.grasp_depth,
            squeeze: self.params.squeeze,
            rotation_offsets: [axis, axis],
        }
    }

    /// End-effector pose at `t = 0` for robot `k`.
    pub fn start_pose(&self, k: usize) -> Pose {
        let p = &self.params;
        let rot = self.tool_orientation();
        let at = |x: f64, y: f64, z: f64| Pose::from_parts(Translation3::new(x, y, z), rot);
        match self.id {
            TaskId::JointMotion | TaskId::CartesianMotion => self.anchor,
            TaskId::ForceProfile => at(p.circle_center.x, p.circle_center.y, p.plane_height),
            TaskId::ForceCircle => at(p.circle_center.x + p.circle_radius, p.circle_center.y, p.plane_height),
            TaskId::BoxGrasp => {
                let side = if k == 0 { 1.0 } else { -1.0 };
                at(p.box_center.x, p.box_center.y + side * p.box_half_extents.y, p.box_center.z)
            }
        }
    }

    /// Joint configuration realizing [`TaskSpec::start_pose`] for a robot
    /// described by `model` (as returned by [`TaskSpec::robot_models`]).
    pub fn initial_configuration(&self, model: &RobotModel, k: usize) -> Result<JointVector> {
        match self.id {
            TaskId::JointMotion | TaskId::CartesianMotion => Ok(self.params.home),
            _ => {
                let opts = IkOptions { tolerance: 1e-10, ..IkOptions::default() };
                inverse_kinematics(model, &self.start_pose(k), &self.params.home, opts)
            }
        }
    }
}

/// Reference of `task` at time `t` seconds.
pub fn trajectory_source(task: &TaskSpec, t: f64) -> Result<TaskReference> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let p = &task.params;
    let rot = task.tool_orientation();
    let mut out = TaskReference::default();
    match task.id {
        TaskId::JointMotion => {
            let w = 2.0 * PI * p.joint_frequency;
            let mut q = p.home;
            for i in 0..q.len() {
                // stagger the phases so the joints do not move in lockstep
                q[i] += p.joint_amplitude[i] * (w * t + 0.4 * i as f64).sin()
                    - p.joint_amplitude[i] * (0.4 * i as f64).sin();
            }
            out.robot.joints = Some(q);
        }
        TaskId::CartesianMotion => {
            let w = 2.0 * PI * p.cartesian_frequency;
            let a = p.cartesian_amplitude;
            let offset =
                Vector3::new(a.x * (w * t).sin(), a.y * (2.0 * w * t).sin() * 0.5, a.z * (1.0 - (w * t).cos()));
            let mut pose = task.anchor;
            pose.translation.vector += offset;
            out.robot.pose = Some(pose);
        }
        TaskId::ForceProfile => {
            let c = p.circle_center;
            out.robot.pose = Some(Pose::from_parts(Translation3::new(c.x, c.y, p.plane_height - p.press_depth), rot));
            let f = 0.5 * p.force_peak * (1.0 - (2.0 * PI * t / p.force_period).cos());
            out.robot.wrench = Some(Wrench::new(0.0, 0.0, -f, 0.0, 0.0, 0.0));
        }
        TaskId::ForceCircle => {
            let c = p.circle_center;
            let phase = 2.0 * PI * t / p.circle_period;
            let (x, y) = (c.x + p.circle_radius * phase.cos(), c.y + p.circle_radius * phase.sin());
            out.robot.pose = Some(Pose::from_parts(Translation3::new(x, y, p.plane_height - p.press_depth), rot));
            out.robot.wrench = Some(Wrench::new(0.0, 0.0, -p.contact_force, 0.0, 0.0, 0.0));
        }
        TaskId::BoxGrasp => {
            let z = 0.5 * p.lift * (1.0 - (2.0 * PI * t / p.lift_period).cos());
            let center = p.box_center + Vector3::new(0.0, 0.0, z);
            out.group.pose = Some(Pose::from_parts(Translation3::from(center), UnitQuaternion::identity()));
        }
    }
    Ok(out)
}
