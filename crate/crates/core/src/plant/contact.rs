//! Penalty contact between a point and a plane or an oriented box.

use nalgebra::{Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::math::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping, also used as the tangential viscosity (N·s/m).
    pub damping: f64,
    /// Coulomb coefficient capping the tangential force.
    pub friction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 3e4, damping: 300.0, friction: 0.5 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("stiffness", self.stiffness), ("damping", self.damping), ("friction", self.friction)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("contact {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Static contact geometry touched by the end-effector point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contact {
    /// Half-space below the plane through `point` with outward `normal`.
    Plane {
        point: Vector3<f64>,
        normal: Unit<Vector3<f64>>,
        params: ContactParams,
    },
    Box {
        pose: Pose,
        half_extents: Vector3<f64>,
        params: ContactParams,
    },
}

impl Contact {
    pub fn plane(height: f64, params: ContactParams) -> Self {
        Contact::Plane { point: Vector3::new(0.0, 0.0, height), normal: Vector3::z_axis(), params }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Contact::Plane { params, .. } => params.validate(),
            Contact::Box { half_extents, params, .. } => {
                if !half_extents.iter().all(|h| *h > 0.0) {
                    return Err(Error::Config("box half extents must be positive".into()));
                }
                params.validate()
            }
        }
    }

    /// Force on a point at `p` moving with `v`.
    pub fn force(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Contact::Plane { point, normal, params } => plane_force(point, normal, params, p, v),
            Contact::Box { pose, half_extents, params } => {
                box_force(&pose.translation.vector, &pose.rotation, half_extents, params, p, v)
            }
        }
    }
}

/// Spring-damper along `normal` plus viscous tangential friction capped at
/// `μ f_n`. Exactly zero when `depth <= 0`.
pub fn penalty_force(normal: &Vector3<f64>, depth: f64, params: &ContactParams, v: &Vector3<f64>) -> Vector3<f64> {
    if depth <= 0.0 {
        return Vector3::zeros();
    }
    let vn = v.dot(normal);
    let fn_ = (params.stiffness * depth - params.damping * vn).max(0.0);
    let vt = v - normal * vn;
    let speed = vt.norm();
    let mut f = normal * fn_;
    if speed > 0.0 {
        let ft = (params.damping * speed).min(params.friction * fn_);
        f -= vt * (ft / speed);
    }
    f
}

pub fn plane_force(
    point: &Vector3<f64>,
    normal: &Unit<Vector3<f64>>,
    params: &ContactParams,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
) -> Vector3<f64> {
    let depth = -(p - point).dot(normal);
    penalty_force(normal, depth, params, v)
}

/// Penetration of `p` into a box: the outward normal of the nearest face
/// and the depth below it, or `None` when `p` is outside.
pub fn box_penetration(
    center: &Vector3<f64>,
    rotation: &UnitQuaternion<f64>,
    half_extents: &Vector3<f64>,
    p: &Vector3<f64>,
) -> Option<(Vector3<f64>, f64)> {
    let local = rotation.inverse_transform_vector(&(p - center));
    let mut best = (0, f64::INFINITY);
    for i in 0..3 {
        let d = half_extents[i] - local[i].abs();
        if d <= 0.0 {
            return None;
        }
        if d < best.1 {
            best = (i, d);
        }
    }
    let mut n = Vector3::zeros();
    n[best.0] = if local[best.0] >= 0.0 { 1.0 } else { -1.0 };
    Some((rotation * n, best.1))
}

/// Force on a point at `p` with velocity `v` relative to the box.
pub fn box_force(
    center: &Vector3<f64>,
    rotation: &UnitQuaternion<f64>,
    half_extents: &Vector3<f64>,
    params: &ContactParams,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
) -> Vector3<f64> {
    match box_penetration(center, rotation, half_extents, p) {
        Some((n, depth)) => penalty_force(&n, depth, params, v),
        None => Vector3::zeros(),
    }
}

/// A free, non-rotating box carried by end-effector contacts and resting
/// on a horizontal support until lifted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBody {
    pub center: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub half_extents: Vector3<f64>,
    pub mass: f64,
    pub params: ContactParams,
    /// Height of the support surface under the box, if any.
    pub support: Option<f64>,
    pub gravity: Vector3<f64>,
}

impl BoxBody {
    /// Box resting on a support that touches its bottom face.
    pub fn resting(center: Vector3<f64>, half_extents: Vector3<f64>, mass: f64, params: ContactParams) -> Self {
        Self {
            center,
            velocity: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            half_extents,
            mass,
            params,
            support: Some(center.z - half_extents.z),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    /// Force on a contact point at `p` moving with `v`.
    pub fn force_on_point(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        box_force(&self.center, &self.rotation, &self.half_extents, &self.params, p, &(v - self.velocity))
    }

    fn support_force(&self) -> Vector3<f64> {
        match self.support {
            Some(h) => {
                let depth = h - (self.center.z - self.half_extents.z);
                penalty_force(&Vector3::z(), depth, &self.params, &self.velocity)
            }
            None => Vector3::zeros(),
        }
    }

    /// Semi-implicit Euler step under `contact` (sum of the reactions of the
    /// end-effector forces), gravity and the support.
    pub fn step(&mut self, contact: &Vector3<f64>, dt: f64) {
        let f = contact + self.gravity * self.mass + self.support_force();
        self.velocity += f * (dt / self.mass);
        self.center += self.velocity * dt;
    }
}
