use nalgebra::{Matrix6, Translation3, UnitQuaternion, Vector3};

use super::{
    set_impedance_param, ControlOutput, Controllet, ControlletDescriptor, FeatureStack, ImpedanceGains, JointGains,
    TorqueTerms,
};
use crate::bus::{RobotBus, RobotId};
use crate::dynamics::{DynamicsTerms, PINV_DAMPING};
use crate::error::{Error, Result};
use crate::kinematics::CartesianState;
use crate::math::{joint_identity, pose_error, JointMatrix, JointVector, Pose, Twist, MAX_DOF};
use crate::state::JointState;

/// Cartesian spring-damper torque `Jᵀ(−K_c x̃ − D_c J q̇)` with
/// `x̃ = x − x_d`, so a positive stiffness pulls `x` toward `x_d`.
pub fn task_torque(
    dynamics: &DynamicsTerms,
    x: &CartesianState,
    x_d: &CartesianState,
    gains: &ImpedanceGains,
    qd: &JointVector,
) -> JointVector {
    let err = pose_error(&x.pose, &x_d.pose);
    let xdot = dynamics.jacobian * qd;
    let force = -gains.stiffness.component_mul(&err) - gains.damping.component_mul(&xdot);
    dynamics.jacobian.transpose() * force
}

/// `I − J†J`.
pub fn nullspace_projector(dynamics: &DynamicsTerms) -> JointMatrix {
    JointMatrix::identity() - dynamics.jacobian_pinv * dynamics.jacobian
}

/// Posture torque projected into the Jacobian nullspace,
/// `(I − J†J)ᵀ (K_N (q_dN − q) − D_N q̇)`. Without a configured posture the
/// spring term vanishes and only damping remains.
pub fn nullspace_torque(dynamics: &DynamicsTerms, state: &JointState, gains: &ImpedanceGains) -> JointVector {
    let posture = gains.null_posture.unwrap_or(state.q);
    let raw = gains.null_stiffness.component_mul(&(posture - state.q)) - gains.null_damping.component_mul(&state.qd);
    nullspace_projector(dynamics).transpose() * raw
}

/// Inertial feedforward `Jᵀ Λ ẍ_d` of the full impedance law, with the
/// task-space inertia `Λ = (J M⁻¹ Jᵀ + λ² I)⁻¹`.
pub fn cartesian_feedforward(dynamics: &DynamicsTerms, accel: &Twist) -> JointVector {
    let jac = &dynamics.jacobian;
    let Some(chol) = dynamics.mass.cholesky() else {
        return JointVector::zeros();
    };
    let minv_jt = chol.solve(&jac.transpose());
    let inv_lambda = jac * minv_jt + Matrix6::identity() * (PINV_DAMPING * PINV_DAMPING);
    match inv_lambda.cholesky() {
        Some(c) => jac.transpose() * c.solve(accel),
        None => JointVector::zeros(),
    }
}

/// Joint spring-damper `K (q_d − q) − D q̇` on the first `n` joints.
pub fn joint_impedance_torque(gains: &JointGains, state: &JointState, q_d: &JointVector, n: usize) -> JointVector {
    let tau = gains.stiffness.component_mul(&(q_d - state.q)) - gains.damping.component_mul(&state.qd);
    joint_identity(n) * tau
}

/// Splits one goal into two goals offset `±offset` along the goal frame's
/// y-axis, orientation unchanged. The first goal takes `+offset`.
pub fn cdc_goal_split(goal: &CartesianState, offset: f64) -> (CartesianState, CartesianState) {
    let shift = |s: f64| {
        let delta = goal.pose.rotation * Vector3::new(0.0, s, 0.0);
        let pose = Pose::from_parts(Translation3::from(goal.pose.translation.vector + delta), goal.pose.rotation);
        CartesianState { pose, twist: goal.twist }
    };
    (shift(offset), shift(-offset))
}

fn impedance_terms(
    bus: &RobotBus,
    robot: RobotId,
    goal: &CartesianState,
    gains: &ImpedanceGains,
    accel: Option<&Twist>,
) -> TorqueTerms {
    let snap = bus.snapshot(robot);
    let dynamics = &snap.dynamics;
    let mut task = task_torque(dynamics, &snap.ee, goal, gains, &snap.state.qd);
    if gains.feedforward {
        if let Some(a) = accel {
            task += cartesian_feedforward(dynamics, a);
        }
    }
    TorqueTerms {
        task,
        null: nullspace_torque(dynamics, &snap.state, gains),
        coriolis: dynamics.coriolis_and_gravity(),
        ..TorqueTerms::default()
    }
}

/// Latched per-robot posture and hold pose, sized for at most two robots.
#[derive(Debug, Clone, Copy, Default)]
struct Hold {
    pose: [Option<Pose>; 2],
    posture: [Option<JointVector>; 2],
}

fn ensure_arity(descriptor: &ControlletDescriptor, max: usize) {
    assert!(descriptor.robots.len() <= max, "controllet `{}` supports at most {max} robots", descriptor.name);
}

/// Joint-space impedance for each owned robot.
pub struct JointImpedance {
    descriptor: ControlletDescriptor,
    hold: [JointVector; 2],
}

impl JointImpedance {
    pub fn new(descriptor: ControlletDescriptor) -> Self {
        ensure_arity(&descriptor, 2);
        Self { descriptor, hold: [JointVector::zeros(); 2] }
    }
}

impl Controllet for JointImpedance {
    fn descriptor(&self) -> &ControlletDescriptor {
        &self.descriptor
    }

    fn activate(&mut self, bus: &RobotBus) {
        for (k, &r) in self.descriptor.robots.iter().enumerate() {
            self.hold[k] = bus.snapshot(r).state.q;
        }
    }

    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]) {
        let gains = self.descriptor.params.joint;
        for (k, &r) in self.descriptor.robots.iter().enumerate() {
            let snap = bus.snapshot(r);
            let q_d = bus.target(r).joints.unwrap_or(self.hold[k]);
            out[r] = ControlOutput {
                terms: TorqueTerms {
                    task: joint_impedance_torque(&gains, &snap.state, &q_d, bus.model(r).dof()),
                    coriolis: snap.dynamics.coriolis_and_gravity(),
                    ..TorqueTerms::default()
                },
                ..ControlOutput::default()
            };
        }
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let value = super::non_negative(key, value)?;
        let joint = |prefix: &str| -> Option<usize> {
            key.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).filter(|&i| i < MAX_DOF)
        };
        if let Some(i) = joint("k.") {
            self.descriptor.params.joint.stiffness[i] = value;
        } else if let Some(i) = joint("d.") {
            self.descriptor.params.joint.damping[i] = value;
        } else {
            return Err(Error::InvalidParameter(format!("unknown parameter `{key}`")));
        }
        Ok(())
    }
}

/// Independent Cartesian impedance per owned robot. With two robots this is
/// the dual-arm "DC" controller.
pub struct CartesianImpedance {
    descriptor: ControlletDescriptor,
    features: FeatureStack,
    hold: Hold,
}

impl CartesianImpedance {
    pub fn new(descriptor: ControlletDescriptor) -> Self {
        ensure_arity(&descriptor, 2);
        Self { features: FeatureStack::new(&descriptor), descriptor, hold: Hold::default() }
    }
}

impl Controllet for CartesianImpedance {
    fn descriptor(&self) -> &ControlletDescriptor {
        &self.descriptor
    }

    fn activate(&mut self, bus: &RobotBus) {
        latch(&mut self.hold, bus, &self.descriptor);
        self.features.reset();
    }

    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]) {
        for (k, &r) in self.descriptor.robots.iter().enumerate() {
            let target = bus.target(r);
            let goal = CartesianState::at(target.pose.or(self.hold.pose[k]).unwrap_or(bus.snapshot(r).ee.pose));
            let mut gains = self.descriptor.params.impedance;
            gains.null_posture = gains.null_posture.or(self.hold.posture[k]);
            out[r] = ControlOutput {
                terms: impedance_terms(bus, r, &goal, &gains, target.accel.as_ref()),
                ..ControlOutput::default()
            };
        }
        self.features.apply(bus, &self.descriptor.robots, out);
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        set_param_impedance(&mut self.descriptor, &mut self.features, key, value)
    }
}

/// Dual-arm impedance tracking a single group goal split along its y-axis
/// ("CDC").
pub struct CoupledCartesianImpedance {
    descriptor: ControlletDescriptor,
    features: FeatureStack,
    hold: Hold,
}

impl CoupledCartesianImpedance {
    pub fn new(descriptor: ControlletDescriptor) -> Self {
        Self { features: FeatureStack::new(&descriptor), descriptor, hold: Hold::default() }
    }
}

/// Per-arm goals for a coupled controllet: the split goal with each arm's
/// rotation offset applied in the goal frame.
pub(crate) fn coupled_goals(descriptor: &ControlletDescriptor, bus: &RobotBus) -> Option<[CartesianState; 2]> {
    let goal = bus.group_target().pose?;
    let coupling = &descriptor.params.coupling;
    let (a, b) = cdc_goal_split(&CartesianState::at(goal), coupling.offset);
    let mut goals = [a, b];
    for (k, g) in goals.iter_mut().enumerate() {
        g.pose.rotation *= UnitQuaternion::from_scaled_axis(coupling.rotation_offsets[k]);
    }
    Some(goals)
}

impl Controllet for CoupledCartesianImpedance {
    fn descriptor(&self) -> &ControlletDescriptor {
        &self.descriptor
    }

    fn activate(&mut self, bus: &RobotBus) {
        latch(&mut self.hold, bus, &self.descriptor);
        self.features.reset();
    }

    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]) {
        let goals = coupled_goals(&self.descriptor, bus);
        for (k, &r) in self.descriptor.robots.iter().enumerate() {
            let goal = match goals {
                Some(g) => g[k],
                None => CartesianState::at(self.hold.pose[k].unwrap_or(bus.snapshot(r).ee.pose)),
            };
            let mut gains = self.descriptor.params.impedance;
            gains.null_posture = gains.null_posture.or(self.hold.posture[k]);
            out[r] = ControlOutput {
                terms: impedance_terms(bus, r, &goal, &gains, bus.group_target().accel.as_ref()),
                ..ControlOutput::default()
            };
        }
        self.features.apply(bus, &self.descriptor.robots, out);
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        if key == "offset" {
            self.descriptor.params.coupling.offset = value;
            return Ok(());
        }
        set_param_impedance(&mut self.descriptor, &mut self.features, key, value)
    }
}

fn latch(hold: &mut Hold, bus: &RobotBus, descriptor: &ControlletDescriptor) {
    for (k, &r) in descriptor.robots.iter().enumerate() {
        let snap = bus.snapshot(r);
        hold.pose[k] = Some(snap.ee.pose);
        hold.posture[k] = Some(snap.state.q);
    }
}

pub(crate) fn set_param_impedance(
    descriptor: &mut ControlletDescriptor,
    features: &mut FeatureStack,
    key: &str,
    value: f64,
) -> Result<()> {
    if set_impedance_param(&mut descriptor.params.impedance, key, value)? || features.set_param(key, value)? {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("unknown parameter `{key}` for `{}`", descriptor.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ChainFrames;
    use crate::math::joint_vector;
    use crate::model::RobotModel;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snapshot(q: &[f64]) -> (RobotModel, JointState, DynamicsTerms, CartesianState) {
        let model = RobotModel::default_arm();
        let state = JointState::at_rest(joint_vector(q));
        let frames = ChainFrames::compute(&model, &state.q);
        let dynamics = DynamicsTerms::compute(&model, &frames, &state.qd);
        (model, state, dynamics, CartesianState::at(frames.ee))
    }

    const Q: [f64; 7] = [0.1, -0.4, 0.2, -2.0, 0.1, 1.7, 0.6];

    #[test]
    fn zero_error_zero_velocity_gives_zero_task_torque() {
        let (_, state, dynamics, x) = snapshot(&Q);
        let tau = task_torque(&dynamics, &x, &x, &ImpedanceGains::default(), &state.qd);
        assert_eq!(tau, JointVector::zeros());
    }

    #[test]
    fn z_offset_maps_through_jacobian_transpose() {
        let (_, state, dynamics, x) = snapshot(&Q);
        let mut x_d = x;
        x_d.pose.translation.vector.z += 0.01;
        let gains = ImpedanceGains::default();
        let tau = task_torque(&dynamics, &x, &x_d, &gains, &state.qd);
        // x is 1 cm below the goal: +0.5 N along z pulls it up
        let force = [0.0, 0.0, 0.5, 0.0, 0.0, 0.0];
        for i in 0..7 {
            let mut oracle = 0.0;
            for (r, f) in force.iter().enumerate() {
                oracle += dynamics.jacobian[(r, i)] * f;
            }
            assert_relative_eq!(tau[i], oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn task_torque_is_linear_in_stiffness() {
        let (_, state, dynamics, x) = snapshot(&Q);
        let mut x_d = x;
        x_d.pose.translation.vector += Vector3::new(0.02, -0.01, 0.03);
        x_d.pose.rotation = UnitQuaternion::from_euler_angles(0.05, 0.0, -0.1) * x_d.pose.rotation;
        let g1 = ImpedanceGains::default();
        let mut g2 = g1;
        g2.stiffness *= 2.0;
        let t1 = task_torque(&dynamics, &x, &x_d, &g1, &state.qd);
        let t2 = task_torque(&dynamics, &x, &x_d, &g2, &state.qd);
        assert_eq!(t2, t1 * 2.0);
    }

    #[test]
    fn posture_at_target_gives_zero_null_torque() {
        let (_, state, dynamics, _) = snapshot(&Q);
        let gains = ImpedanceGains { null_posture: Some(state.q), ..ImpedanceGains::default() };
        assert_eq!(nullspace_torque(&dynamics, &state, &gains), JointVector::zeros());
    }

    #[test]
    fn projector_is_idempotent_and_annihilated_by_jacobian() {
        let model = RobotModel::default_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = JointVector::from_fn(|i, _| {
                let (lo, hi) = model.joints[i].limits.position;
                rng.random_range(lo * 0.8..hi * 0.8)
            });
            let frames = ChainFrames::compute(&model, &q);
            let dynamics = DynamicsTerms::compute(&model, &frames, &JointVector::zeros());
            if crate::dynamics::manipulability(&dynamics.jacobian).value < 0.02 {
                continue;
            }
            // the damped projector deviates from idempotence by at most
            // λ²/σ_min² (its row-space eigenvalues are λ²/(σ² + λ²))
            let p = nullspace_projector(&dynamics);
            let sigma_min = dynamics.jacobian.svd(false, false).singular_values.min();
            let bound = PINV_DAMPING * PINV_DAMPING / (sigma_min * sigma_min);
            let deviation = (p * p - p).svd(false, false).singular_values.max();
            assert!(deviation <= bound * 1.000001 + 1e-12, "{deviation} > {bound}");

            // exact pseudo-inverse projector: idempotent and annihilated by J
            let jac = dynamics.jacobian;
            let exact = jac.transpose() * (jac * jac.transpose()).try_inverse().unwrap();
            let p_exact = JointMatrix::identity() - exact * jac;
            assert!((p_exact * p_exact - p_exact).abs().max() < 1e-9);
            let v = JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let jv = jac * (p_exact * v);
            assert!(jv.norm() <= 1e-6 * v.norm(), "residual {}", jv.norm());
        }
    }

    #[test]
    fn split_of_identity_goal() {
        let (a, b) = cdc_goal_split(&CartesianState::default(), 0.15);
        assert_relative_eq!(a.position(), Vector3::new(0.0, 0.15, 0.0));
        assert_relative_eq!(b.position(), Vector3::new(0.0, -0.15, 0.0));
    }

    #[test]
    fn split_of_rotated_goal_follows_goal_axes() {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let goal = CartesianState::at(Pose::from_parts(Translation3::new(0.4, 0.2, 0.5), rot));
        let (a, b) = cdc_goal_split(&goal, 0.15);
        let oracle = rot * Vector3::new(0.0, 0.15, 0.0);
        assert_relative_eq!(a.position() - goal.position(), oracle, epsilon = 1e-15);
        assert_relative_eq!(oracle, Vector3::new(-0.15, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(b.position() - goal.position(), -oracle, epsilon = 1e-15);
        assert_eq!(a.orientation(), rot);
        let mid = (a.position() + b.position()) / 2.0;
        assert_relative_eq!(mid, goal.position(), epsilon = 1e-12);
    }

    #[test]
    fn feedforward_reproduces_commanded_acceleration() {
        let (_, _, dynamics, _) = snapshot(&Q);
        let accel = Vector6::new(0.1, -0.2, 0.3, 0.0, 0.1, 0.0);
        let tau = cartesian_feedforward(&dynamics, &accel);
        let qdd = dynamics.mass.cholesky().unwrap().solve(&tau);
        let achieved = dynamics.jacobian * qdd;
        assert!((achieved - accel).norm() < 1e-3 * accel.norm());
    }
}
