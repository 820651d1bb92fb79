//! Forward kinematics, geometric Jacobians and a damped least-squares IK.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::math::{joint_identity, pose_error, Jacobian, JointVector, Pose, Twist, MAX_DOF};
use crate::model::RobotModel;

/// End-effector pose and twist in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub pose: Pose,
    pub twist: Twist,
}

impl CartesianState {
    pub fn at(pose: Pose) -> Self {
        Self { pose, twist: Twist::zeros() }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.pose.rotation
    }
}

impl Default for CartesianState {
    fn default() -> Self {
        Self::at(Pose::identity())
    }
}

/// World-frame placement of every joint and link for one configuration.
#[derive(Debug, Clone, Copy)]
pub struct ChainFrames {
    pub dof: usize,
    /// Origin of joint `i` (unchanged by its own rotation).
    pub origins: [Vector3<f64>; MAX_DOF],
    /// Rotation axis of joint `i` in the world frame.
    pub axes: [Vector3<f64>; MAX_DOF],
    /// Frame of link `i`, after the rotation of joint `i`.
    pub links: [Pose; MAX_DOF],
    pub ee: Pose,
}

impl ChainFrames {
    pub fn compute(model: &RobotModel, q: &JointVector) -> Self {
        let n = model.dof();
        let mut origins = [Vector3::zeros(); MAX_DOF];
        let mut axes = [Vector3::zeros(); MAX_DOF];
        let mut links = [Pose::identity(); MAX_DOF];
        let mut current = model.base;
        for (i, joint) in model.joints.iter().enumerate() {
            let pre = current * joint.origin;
            origins[i] = pre.translation.vector;
            axes[i] = pre.rotation * joint.axis.into_inner();
            let rot = UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            current = pre * rot;
            links[i] = current;
        }
        Self { dof: n, origins, axes, links, ee: current * model.end_effector }
    }

    /// Anchor points used for link-segment geometry: each joint origin
    /// followed by the end-effector position (`dof + 1` points).
    pub fn anchor(&self, index: usize) -> Vector3<f64> {
        if index < self.dof {
            self.origins[index]
        } else {
            self.ee.translation.vector
        }
    }

    /// Geometric Jacobian of the end-effector frame.
    pub fn jacobian(&self) -> Jacobian {
        let p = self.ee.translation.vector;
        let mut jac = Jacobian::zeros();
        for i in 0..self.dof {
            let z = self.axes[i];
            let v = z.cross(&(p - self.origins[i]));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// Linear-velocity Jacobian of a world point rigidly attached to link
    /// `link` (joints `0..=link` move it).
    pub fn point_jacobian(&self, point: &Vector3<f64>, link: usize) -> SMatrix<f64, 3, MAX_DOF> {
        let mut jac = SMatrix::<f64, 3, MAX_DOF>::zeros();
        for i in 0..=link.min(self.dof - 1) {
            let v = self.axes[i].cross(&(point - self.origins[i]));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
        }
        jac
    }
}

fn check_dims(model: &RobotModel, q: &[f64]) -> Result<JointVector> {
    if q.len() != model.dof() {
        return Err(Error::Dimension { expected: model.dof(), actual: q.len() });
    }
    if !crate::math::is_finite_slice(q) {
        return Err(Error::NonFinite("joint positions"));
    }
    Ok(crate::math::joint_vector(q))
}

/// End-effector pose for `q` (length must equal the model's joint count).
/// The returned twist is zero.
pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<CartesianState> {
    let q = check_dims(model, q)?;
    Ok(CartesianState::at(ChainFrames::compute(model, &q).ee))
}

pub fn jacobian(model: &RobotModel, q: &[f64]) -> Result<Jacobian> {
    let q = check_dims(model, q)?;
    Ok(ChainFrames::compute(model, &q).jacobian())
}

pub fn ee_pose(model: &RobotModel, q: &JointVector) -> Pose {
    ChainFrames::compute(model, q).ee
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    /// Weight of the pull toward the seed configuration in the nullspace.
    pub posture_gain: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { max_iterations: 500, tolerance: 1e-10, damping: 1e-3, posture_gain: 0.05 }
    }
}

/// Damped least-squares inverse kinematics for a full pose target, starting
/// from `seed` and staying inside the position limits.
pub fn inverse_kinematics(
    model: &RobotModel,
    target: &Pose,
    seed: &JointVector,
    opts: IkOptions,
) -> Result<JointVector> {
    let n = model.dof();
    let mut q = *seed;
    let lambda2 = opts.damping * opts.damping;
    for _ in 0..opts.max_iterations {
        let frames = ChainFrames::compute(model, &q);
        let err: Vector6<f64> = -pose_error(&frames.ee, target);
        if err.norm() < opts.tolerance {
            return Ok(q);
        }
        let jac = frames.jacobian();
        let jjt = jac * jac.transpose() + nalgebra::Matrix6::identity() * lambda2;
        let Some(chol) = jjt.cholesky() else {
            return Err(Error::Invariant("IK normal matrix not positive definite".into()));
        };
        let pinv = jac.transpose() * chol.inverse();
        let mut dq = pinv * err;
        // posture pull fades out near convergence so it cannot bias the
        // final pose through the damped projector
        let fade = (err.norm() / 1e-3).min(1.0);
        let null = joint_identity(n) - pinv * jac;
        dq += null * (seed - q) * (opts.posture_gain * fade);
        let step = dq.amax();
        if step > 0.2 {
            dq *= 0.2 / step;
        }
        q += dq;
        for (i, j) in model.joints.iter().enumerate() {
            q[i] = q[i].clamp(j.limits.position.0, j.limits.position.1);
        }
    }
    let residual = pose_error(&ee_pose(model, &q), target).norm();
    if residual < 1e-6 {
        Ok(q)
    } else {
        Err(Error::InvalidParameter(format!("IK did not converge (residual {residual:e})")))
    }
}

/// Rotation whose z-axis is `z` and whose x-axis is as close to `x_hint` as
/// possible. Used to build tool orientations.
pub fn frame_from_z(z: &Vector3<f64>, x_hint: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = z.normalize();
    let x = (x_hint - z * z.dot(x_hint)).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_matrix(&m)
}
