//! Rigid-body dynamics of a serial chain.
//!
//! Inverse dynamics is the recursive Newton-Euler algorithm written in the
//! world frame; the mass matrix comes from the composite-rigid-body
//! recursion over world-frame spatial inertias. Both operate on the
//! fixed-capacity types from [`crate::math`] and never allocate.

use nalgebra::{
    allocator::Allocator, DefaultAllocator, Dim, DimMin, Matrix, Matrix3, Matrix6, Storage, Vector3, Vector6,
};

use crate::error::{Error, Result};
use crate::kinematics::ChainFrames;
use crate::math::{skew, Jacobian, JacobianPinv, JointMatrix, JointVector, MAX_DOF};
use crate::model::RobotModel;
use crate::state::JointState;

/// Damping of the Jacobian pseudo-inverse.
pub const PINV_DAMPING: f64 = 0.01;

/// Everything the controllers consume for one robot at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsTerms {
    pub mass: JointMatrix,
    /// `C(q, q̇) q̇`.
    pub coriolis: JointVector,
    pub gravity: JointVector,
    pub jacobian: Jacobian,
    pub jacobian_pinv: JacobianPinv,
}

impl Default for DynamicsTerms {
    fn default() -> Self {
        Self {
            mass: JointMatrix::identity(),
            coriolis: JointVector::zeros(),
            gravity: JointVector::zeros(),
            jacobian: Jacobian::zeros(),
            jacobian_pinv: JacobianPinv::zeros(),
        }
    }
}

impl DynamicsTerms {
    pub fn compute(model: &RobotModel, frames: &ChainFrames, qd: &JointVector) -> Self {
        let zero = JointVector::zeros();
        let gravity = rnea_frames(model, frames, &zero, &zero, &model.gravity);
        let coriolis = rnea_frames(model, frames, qd, &zero, &Vector3::zeros());
        let jacobian = frames.jacobian();
        Self {
            mass: mass_matrix_frames(model, frames),
            coriolis,
            gravity,
            jacobian,
            jacobian_pinv: damped_pinv(&jacobian, PINV_DAMPING),
        }
    }

    /// `τ_cor = C(q, q̇) q̇ + g(q)`.
    pub fn coriolis_and_gravity(&self) -> JointVector {
        self.coriolis + self.gravity
    }
}

/// Full dynamics bundle for a joint state.
pub fn dynamics(model: &RobotModel, state: &JointState) -> Result<DynamicsTerms> {
    if !state.is_finite() {
        return Err(Error::NonFinite("joint state"));
    }
    let frames = ChainFrames::compute(model, &state.q);
    let terms = DynamicsTerms::compute(model, &frames, &state.qd);
    if terms.mass.cholesky().is_none() {
        return Err(Error::Invariant("mass matrix is not positive definite".into()));
    }
    Ok(terms)
}

/// Inverse dynamics `τ = M q̈ + C q̇ + g` under the model's gravity.
pub fn inverse_dynamics(model: &RobotModel, q: &JointVector, qd: &JointVector, qdd: &JointVector) -> JointVector {
    let frames = ChainFrames::compute(model, q);
    rnea_frames(model, &frames, qd, qdd, &model.gravity)
}

pub fn gravity_torque(model: &RobotModel, q: &JointVector) -> JointVector {
    let zero = JointVector::zeros();
    inverse_dynamics(model, q, &zero, &zero)
}

/// Recursive Newton-Euler over precomputed frames with an explicit gravity
/// vector (pass zero to get the velocity-product terms alone).
pub fn rnea_frames(
    model: &RobotModel,
    frames: &ChainFrames,
    qd: &JointVector,
    qdd: &JointVector,
    gravity: &Vector3<f64>,
) -> JointVector {
    let n = model.dof();
    let mut force = [Vector3::zeros(); MAX_DOF];
    let mut moment = [Vector3::zeros(); MAX_DOF];

    // joint-origin linear acceleration, with gravity folded in as a base
    // acceleration
    let mut w_prev = Vector3::zeros();
    let mut wd_prev = Vector3::zeros();
    let mut a_prev = -gravity;
    let mut o_prev = model.base.translation.vector;

    for i in 0..n {
        let o = frames.origins[i];
        let z = frames.axes[i];
        let d = o - o_prev;
        let a_o = a_prev + wd_prev.cross(&d) + w_prev.cross(&w_prev.cross(&d));

        let w = w_prev + z * qd[i];
        let wd = wd_prev + z * qdd[i] + w_prev.cross(&z) * qd[i];

        let link = &model.links[i];
        let frame = &frames.links[i];
        let r = frame.rotation * link.com + frame.translation.vector - o;
        let a_c = a_o + wd.cross(&r) + w.cross(&w.cross(&r));
        let rot = frame.rotation.to_rotation_matrix();
        let inertia_w = rot.matrix() * link.inertia * rot.matrix().transpose();

        let f = a_c * link.mass;
        force[i] = f;
        moment[i] = inertia_w * wd + w.cross(&(inertia_w * w)) + r.cross(&f);

        w_prev = w;
        wd_prev = wd;
        a_prev = a_o;
        o_prev = o;
    }

    let mut tau = JointVector::zeros();
    let mut f_next = Vector3::zeros();
    let mut n_next = Vector3::zeros();
    for i in (0..n).rev() {
        let o = frames.origins[i];
        let o_next = if i + 1 < n { frames.origins[i + 1] } else { o };
        let f = force[i] + f_next;
        let m = moment[i] + n_next + (o_next - o).cross(&f_next);
        tau[i] = frames.axes[i].dot(&m) + model.joints[i].armature * qdd[i];
        f_next = f;
        n_next = m;
    }
    tau
}

/// World-frame spatial inertia of one link about the world origin, acting on
/// motion vectors `[ω; v_O]`.
fn spatial_inertia(model: &RobotModel, frames: &ChainFrames, i: usize) -> Matrix6<f64> {
    let link = &model.links[i];
    let frame = &frames.links[i];
    let rot = frame.rotation.to_rotation_matrix();
    let c = frame.rotation * link.com + frame.translation.vector;
    let ic = rot.matrix() * link.inertia * rot.matrix().transpose();
    let cx = skew(&c);
    let m = link.mass;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + cx * cx.transpose() * m));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    out
}

/// Composite-rigid-body mass matrix. Rows and columns beyond the model's
/// joint count hold the identity so the matrix stays invertible.
pub fn mass_matrix_frames(model: &RobotModel, frames: &ChainFrames) -> JointMatrix {
    let n = model.dof();
    let mut motion = [Vector6::zeros(); MAX_DOF];
    for i in 0..n {
        let z = frames.axes[i];
        let v = frames.origins[i].cross(&z);
        motion[i] = Vector6::new(z.x, z.y, z.z, v.x, v.y, v.z);
    }

    let mut mass = JointMatrix::identity();
    let mut composite = Matrix6::zeros();
    for i in (0..n).rev() {
        composite += spatial_inertia(model, frames, i);
        let f = composite * motion[i];
        for j in 0..=i {
            let mij = motion[j].dot(&f);
            mass[(i, j)] = mij;
            mass[(j, i)] = mij;
        }
        mass[(i, i)] += model.joints[i].armature;
    }
    mass
}

pub fn mass_matrix(model: &RobotModel, q: &JointVector) -> JointMatrix {
    mass_matrix_frames(model, &ChainFrames::compute(model, q))
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹`.
pub fn damped_pinv(jac: &Jacobian, lambda: f64) -> JacobianPinv {
    let jjt = jac * jac.transpose() + Matrix6::identity() * (lambda * lambda);
    match jjt.cholesky() {
        Some(chol) => (chol.solve(jac)).transpose(),
        None => JacobianPinv::zeros(),
    }
}

/// Gravitational potential energy `-Σ mᵢ gᵀ cᵢ`.
pub fn potential_energy(model: &RobotModel, q: &JointVector) -> f64 {
    let frames = ChainFrames::compute(model, q);
    model
        .links
        .iter()
        .zip(&frames.links)
        .map(|(link, frame)| -link.mass * model.gravity.dot(&(frame * nalgebra::Point3::from(link.com)).coords))
        .sum()
}

pub fn kinetic_energy(model: &RobotModel, q: &JointVector, qd: &JointVector) -> f64 {
    0.5 * qd.dot(&(mass_matrix(model, q) * qd))
}

/// Result of `√det(J Jᵀ)`; `clamped` is set when the computation produced a
/// non-finite value that was replaced by zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Manipulability {
    pub value: f64,
    pub clamped: bool,
}

/// Kinematic manipulability `√det(J Jᵀ)` of a Jacobian with at most as many
/// rows as columns.
///
/// Evaluated as `Π |R_ii|` from a QR factorisation of `Jᵀ`, which equals
/// `√det(J Jᵀ)` but cannot go negative and vanishes to round-off level at
/// rank-deficient configurations.
pub fn manipulability<R, C, S>(jac: &Matrix<f64, R, C, S>) -> Manipulability
where
    R: Dim,
    C: Dim + DimMin<R>,
    S: Storage<f64, R, C>,
    DefaultAllocator: Allocator<C, R>
        + Allocator<C>
        + Allocator<R>
        + Allocator<<C as DimMin<R>>::Output>
        + Allocator<<C as DimMin<R>>::Output, R>,
{
    let (rows, cols) = jac.shape();
    if rows > cols {
        // J Jᵀ is rank-deficient by construction
        return Manipulability { value: 0.0, clamped: false };
    }
    let qr = jac.transpose().qr();
    let r = qr.r();
    let value: f64 = (0..rows).map(|i| r[(i, i)].abs()).product();
    if value.is_finite() {
        Manipulability { value, clamped: false }
    } else {
        Manipulability { value: 0.0, clamped: true }
    }
}

/// Manipulability of the full 6-row Jacobian at `q`.
pub fn manipulability_at(model: &RobotModel, q: &JointVector) -> f64 {
    manipulability(&ChainFrames::compute(model, q).jacobian()).value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::joint_vector;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Rotation3};
    use std::f64::consts::PI;

    fn ready() -> JointVector {
        joint_vector(&[0.0, -PI / 4.0, 0.0, -3.0 * PI / 4.0, 0.0, PI / 2.0, PI / 4.0])
    }

    #[test]
    fn coriolis_is_exactly_zero_at_rest() {
        let m = RobotModel::default_arm();
        let t = dynamics(&m, &JointState::at_rest(ready())).unwrap();
        assert_eq!(t.coriolis, JointVector::zeros());
    }

    #[test]
    fn mass_matrix_matches_unit_acceleration_columns() {
        // M e_i = RNEA(q, 0, e_i) without gravity
        let m = RobotModel::default_arm();
        let q = joint_vector(&[0.3, -0.4, 0.5, -1.9, 0.2, 1.3, -0.6]);
        let frames = ChainFrames::compute(&m, &q);
        let mass = mass_matrix_frames(&m, &frames);
        for i in 0..7 {
            let mut e = JointVector::zeros();
            e[i] = 1.0;
            let col = rnea_frames(&m, &frames, &JointVector::zeros(), &e, &Vector3::zeros());
            for r in 0..7 {
                assert_relative_eq!(mass[(r, i)], col[r], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn planar_manipulability() {
        let m = RobotModel::planar(&[1.0, 1.0]);
        let j = crate::kinematics::jacobian(&m, &[0.3, PI / 2.0]).unwrap();
        let jp: Matrix2<f64> = j.fixed_view::<2, 2>(0, 0).into_owned();
        assert_relative_eq!(manipulability(&jp).value, 1.0, epsilon = 1e-12);
        let j0 = crate::kinematics::jacobian(&m, &[0.3, 0.0]).unwrap();
        let jp0: Matrix2<f64> = j0.fixed_view::<2, 2>(0, 0).into_owned();
        assert!(manipulability(&jp0).value < 1e-9);
    }

    #[test]
    fn manipulability_rotation_invariant() {
        let m = RobotModel::default_arm();
        let j = ChainFrames::compute(&m, &ready()).jacobian();
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let mut block = Matrix6::zeros();
        block.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        block.fixed_view_mut::<3, 3>(3, 3).copy_from(r.matrix());
        let a = manipulability(&j).value;
        let b = manipulability(&(block * j)).value;
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn pinv_is_right_inverse_at_full_rank() {
        let m = RobotModel::default_arm();
        let j = ChainFrames::compute(&m, &ready()).jacobian();
        let p = damped_pinv(&j, 1e-8);
        assert!((j * p - Matrix6::identity()).amax() < 1e-6);
    }
}
