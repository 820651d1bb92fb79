//! Fixed-capacity linear algebra aliases shared by every module.
//!
//! Joint-space quantities are stored in `MAX_DOF`-sized stack vectors so the
//! 1 kHz path never touches the heap. A model with `n < MAX_DOF` joints uses
//! the leading `n` entries; the trailing entries are kept at exactly zero
//! (identity on the mass-matrix diagonal).

use nalgebra::{Isometry3, Matrix3, SMatrix, SVector, UnitQuaternion, Vector3, Vector6};

/// Largest supported number of joints per robot.
pub const MAX_DOF: usize = 7;

pub type JointVector = SVector<f64, MAX_DOF>;
pub type JointMatrix = SMatrix<f64, MAX_DOF, MAX_DOF>;
/// Geometric Jacobian, rows are `[v; ω]`.
pub type Jacobian = SMatrix<f64, 6, MAX_DOF>;
pub type JacobianPinv = SMatrix<f64, MAX_DOF, 6>;
/// `[force; torque]` in the base frame.
pub type Wrench = Vector6<f64>;
/// `[linear; angular]` velocity in the base frame.
pub type Twist = Vector6<f64>;
pub type Pose = Isometry3<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orientation error as the scaled axis of `R_d · Rᵀ`, in the base frame.
///
/// The returned vector is the rotation that carries the current orientation
/// onto the desired one; its norm lies in `[0, π]`.
pub fn orientation_error(current: &UnitQuaternion<f64>, desired: &UnitQuaternion<f64>) -> Vector3<f64> {
    if current == desired {
        // exact zero rather than round-off from the product
        return Vector3::zeros();
    }
    let mut delta = desired * current.inverse();
    // shortest arc
    if delta.w < 0.0 {
        delta = UnitQuaternion::new_unchecked(-delta.into_inner());
    }
    delta.scaled_axis()
}

/// Pose error `x - x_d` stacked as `[Δp; Δθ]` where `Δθ` is the axis-angle
/// rotation from the desired to the current orientation.
pub fn pose_error(current: &Pose, desired: &Pose) -> Vector6<f64> {
    let dp = current.translation.vector - desired.translation.vector;
    let dth = -orientation_error(&current.rotation, &desired.rotation);
    Vector6::new(dp.x, dp.y, dp.z, dth.x, dth.y, dth.z)
}

pub fn joint_vector(values: &[f64]) -> JointVector {
    assert!(values.len() <= MAX_DOF, "joint vector longer than MAX_DOF");
    let mut v = JointVector::zeros();
    v.as_mut_slice()[..values.len()].copy_from_slice(values);
    v
}

/// Identity on the leading `n` joints, zero elsewhere.
pub fn joint_identity(n: usize) -> JointMatrix {
    let mut m = JointMatrix::zeros();
    for i in 0..n {
        m[(i, i)] = 1.0;
    }
    m
}

pub fn is_finite_slice(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
