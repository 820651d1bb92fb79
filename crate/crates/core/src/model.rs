//! Serial-chain robot description and its plain-text model file.
//!
//! A model file is TOML: top-level `name`, `gravity`, optional `[base]` and
//! `[end_effector]` frames, and one `[[joints]]` entry per revolute joint,
//! each carrying the inertial parameters of the link it drives in a nested
//! `[joints.link]` table. Invariant violations are reported with the line of
//! the offending table.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::math::{Pose, MAX_DOF};

const AXIS_UNIT_TOL: f64 = 1e-12;

/// The bundled 7-DoF arm, the single source of truth for the default model.
pub const DEFAULT_MODEL_TOML: &str = include_str!("../models/generic7.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub position: (f64, f64),
    pub velocity: f64,
    pub torque: f64,
}

/// Revolute joint: the fixed transform from the parent link frame, then a
/// rotation by `q` about `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub origin: Pose,
    pub axis: Unit<Vector3<f64>>,
    pub limits: JointLimits,
    /// Reflected rotor inertia (kg·m²), added to the joint's diagonal mass
    /// entry. Known from the drive, so identification leaves it alone.
    pub armature: f64,
}

/// Inertial parameters of one link, expressed in the link frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
}

impl LinkInertia {
    pub fn new(mass: f64, com: Vector3<f64>, inertia: Matrix3<f64>) -> Self {
        Self { mass, com, inertia }
    }

    /// Checks positive mass, symmetry, positive principal moments and the
    /// triangle inequality on them.
    pub fn check_physical(&self) -> std::result::Result<(), String> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(format!("mass must be > 0, got {}", self.mass));
        }
        if !self.com.iter().all(|c| c.is_finite()) {
            return Err("center of mass is not finite".into());
        }
        let asym = (self.inertia - self.inertia.transpose()).abs().max();
        if !(asym <= 1e-12) {
            return Err("inertia tensor is not symmetric".into());
        }
        let eig = SymmetricEigen::new(self.inertia).eigenvalues;
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(format!("inertia eigenvalues must be > 0, got ({a:e}, {b:e}, {c:e})"));
        }
        let tol = 1e-12 * (a + b + c);
        if a + b < c - tol || a + c < b - tol || b + c < a - tol {
            return Err(format!("principal moments ({a:e}, {b:e}, {c:e}) violate the triangle inequality"));
        }
        Ok(())
    }

    /// Inertia about the link frame origin.
    pub fn inertia_about_origin(&self) -> Matrix3<f64> {
        let c = self.com;
        self.inertia + self.mass * (Matrix3::identity() * c.dot(&c) - c * c.transpose())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub base: Pose,
    pub joints: Vec<Joint>,
    pub links: Vec<LinkInertia>,
    /// Fixed transform from the last link frame to the end-effector frame.
    pub end_effector: Pose,
    pub gravity: Vector3<f64>,
}

impl RobotModel {
    pub fn default_arm() -> Self {
        Self::from_toml_str(DEFAULT_MODEL_TOML).expect("bundled model is valid")
    }

    /// Planar chain rotating about z with links of the given lengths along
    /// x. Each link is a 1 kg rod with its center of mass at mid-length.
    /// Gravity is along -z, i.e. perpendicular to the plane of motion.
    pub fn planar(lengths: &[f64]) -> Self {
        let mut joints = Vec::with_capacity(lengths.len());
        let mut links = Vec::with_capacity(lengths.len());
        for (i, &len) in lengths.iter().enumerate() {
            let offset = if i == 0 { 0.0 } else { lengths[i - 1] };
            joints.push(Joint {
                name: format!("joint{}", i + 1),
                origin: Pose::translation(offset, 0.0, 0.0),
                axis: Vector3::z_axis(),
                limits: JointLimits { position: (-10.0, 10.0), velocity: 10.0, torque: 100.0 },
                armature: 0.0,
            });
            let rod = len * len / 12.0;
            links.push(LinkInertia::new(
                1.0,
                Vector3::new(len / 2.0, 0.0, 0.0),
                Matrix3::from_diagonal(&Vector3::new(1e-4, rod + 1e-4, rod + 1e-4)),
            ));
        }
        RobotModel {
            name: "planar".into(),
            base: Pose::identity(),
            joints,
            links,
            end_effector: Pose::translation(lengths.last().copied().unwrap_or(0.0), 0.0, 0.0),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Model {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        file.into_model(text)
    }

    /// Validates every invariant of the type. Line numbers are 0 because the
    /// model did not come from a file.
    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Model { line: 0, message };
        let n = self.dof();
        if n == 0 || n > MAX_DOF {
            return Err(err(format!("joint count {n} outside 1..={MAX_DOF}")));
        }
        if self.links.len() != n {
            return Err(err(format!("{} links for {n} joints", self.links.len())));
        }
        for (j, link) in self.joints.iter().zip(&self.links) {
            if ((j.axis.norm() - 1.0).abs()) > AXIS_UNIT_TOL {
                return Err(err(format!("joint {} axis is not unit", j.name)));
            }
            check_limits(&j.limits).map_err(|m| err(format!("joint {}: {m}", j.name)))?;
            if !(j.armature >= 0.0) || !j.armature.is_finite() {
                return Err(err(format!("joint {} armature must be >= 0", j.name)));
            }
            link.check_physical().map_err(|m| err(format!("link of {}: {m}", j.name)))?;
        }
        Ok(())
    }

    /// Returns a copy with the inertial parameters replaced.
    pub fn with_links(&self, links: Vec<LinkInertia>) -> Result<Self> {
        let model = RobotModel { links, ..self.clone() };
        model.validate()?;
        Ok(model)
    }

    pub fn torque_limits(&self) -> crate::math::JointVector {
        let mut v = crate::math::JointVector::zeros();
        for (i, j) in self.joints.iter().enumerate() {
            v[i] = j.limits.torque;
        }
        v
    }

    /// Serializes to the model file format. Floats are written in shortest
    /// round-trip form so `from_toml_str(to_toml_string())` is exact.
    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {:?}", self.name);
        let _ = writeln!(s, "gravity = {}", arr(self.gravity.as_slice()));
        let _ = writeln!(s);
        write_frame(&mut s, "base", &self.base);
        write_frame(&mut s, "end_effector", &self.end_effector);
        for (j, l) in self.joints.iter().zip(&self.links) {
            let _ = writeln!(s, "[[joints]]");
            let _ = writeln!(s, "name = {:?}", j.name);
            let (xyz, quat) = frame_parts(&j.origin);
            let _ = writeln!(s, "xyz = {}", arr(&xyz));
            let _ = writeln!(s, "quat = {}", arr(&quat));
            let _ = writeln!(s, "axis = {}", arr(j.axis.as_slice()));
            let _ = writeln!(s, "position_limits = {}", arr(&[j.limits.position.0, j.limits.position.1]));
            let _ = writeln!(s, "velocity_limit = {:?}", j.limits.velocity);
            let _ = writeln!(s, "torque_limit = {:?}", j.limits.torque);
            let _ = writeln!(s, "armature = {:?}", j.armature);
            let _ = writeln!(s, "[joints.link]");
            let _ = writeln!(s, "mass = {:?}", l.mass);
            let _ = writeln!(s, "com = {}", arr(l.com.as_slice()));
            let i = &l.inertia;
            let _ =
                writeln!(s, "inertia = {}", arr(&[i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]]));
            let _ = writeln!(s);
        }
        s
    }
}

fn check_limits(l: &JointLimits) -> std::result::Result<(), String> {
    if !(l.position.0 < l.position.1) {
        return Err("position limits must satisfy lower < upper".into());
    }
    if !(l.velocity > 0.0) || !(l.torque > 0.0) {
        return Err("velocity and torque limits must be > 0".into());
    }
    Ok(())
}

fn arr(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn frame_parts(p: &Pose) -> ([f64; 3], [f64; 4]) {
    let t = p.translation.vector;
    let q = p.rotation.quaternion();
    ([t.x, t.y, t.z], [q.w, q.i, q.j, q.k])
}

fn write_frame(s: &mut String, name: &str, p: &Pose) {
    let (xyz, quat) = frame_parts(p);
    let _ = writeln!(s, "[{name}]");
    let _ = writeln!(s, "xyz = {}", arr(&xyz));
    let _ = writeln!(s, "quat = {}", arr(&quat));
    let _ = writeln!(s);
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    base: Option<Spanned<FrameSpec>>,
    end_effector: Option<Spanned<FrameSpec>>,
    joints: Vec<Spanned<JointSpec>>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

/// A frame is given by a translation and either roll-pitch-yaw (fixed XYZ
/// axes) or a `[w, x, y, z]` quaternion.
#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FrameSpec {
    #[serde(default)]
    xyz: [f64; 3],
    rpy: Option<[f64; 3]>,
    quat: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    name: String,
    #[serde(default)]
    xyz: [f64; 3],
    rpy: Option<[f64; 3]>,
    quat: Option<[f64; 4]>,
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    position_limits: [f64; 2],
    velocity_limit: f64,
    torque_limit: f64,
    #[serde(default)]
    armature: f64,
    link: Spanned<LinkSpec>,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    mass: f64,
    com: [f64; 3],
    /// `[ixx, ixy, ixz, iyy, iyz, izz]` about the center of mass.
    inertia: [f64; 6],
}

fn frame_pose(xyz: [f64; 3], rpy: Option<[f64; 3]>, quat: Option<[f64; 4]>) -> std::result::Result<Pose, String> {
    let rotation = match (rpy, quat) {
        (Some(_), Some(_)) => return Err("give either rpy or quat, not both".into()),
        (Some([r, p, y]), None) => UnitQuaternion::from_euler_angles(r, p, y),
        (None, Some([w, x, y, z])) => {
            let q = nalgebra::Quaternion::new(w, x, y, z);
            if (q.norm() - 1.0).abs() > 1e-9 {
                return Err("quaternion must be unit".into());
            }
            UnitQuaternion::new_unchecked(q)
        }
        (None, None) => UnitQuaternion::identity(),
    };
    Ok(Pose::from_parts(Translation3::new(xyz[0], xyz[1], xyz[2]), rotation))
}

impl ModelFile {
    fn into_model(self, text: &str) -> Result<RobotModel> {
        let at = |span: Range<usize>, message: String| Error::Model { line: line_of(text, span.start), message };

        let frame = |f: Option<Spanned<FrameSpec>>| -> Result<Pose> {
            match f {
                None => Ok(Pose::identity()),
                Some(s) => {
                    let span = s.span();
                    let f = s.into_inner();
                    frame_pose(f.xyz, f.rpy, f.quat).map_err(|m| at(span, m))
                }
            }
        };
        let base = frame(self.base)?;
        let end_effector = frame(self.end_effector)?;

        if self.joints.is_empty() || self.joints.len() > MAX_DOF {
            return Err(Error::Model {
                line: 1,
                message: format!("joint count {} outside 1..={MAX_DOF}", self.joints.len()),
            });
        }

        let mut joints = Vec::with_capacity(self.joints.len());
        let mut links = Vec::with_capacity(self.joints.len());
        for spanned in self.joints {
            let span = spanned.span();
            let js = spanned.into_inner();
            let origin = frame_pose(js.xyz, js.rpy, js.quat).map_err(|m| at(span.clone(), m))?;
            let axis = Vector3::from(js.axis);
            if (axis.norm() - 1.0).abs() > AXIS_UNIT_TOL {
                return Err(at(span, format!("joint {}: axis must be a unit vector", js.name)));
            }
            let limits = JointLimits {
                position: (js.position_limits[0], js.position_limits[1]),
                velocity: js.velocity_limit,
                torque: js.torque_limit,
            };
            check_limits(&limits).map_err(|m| at(span.clone(), format!("joint {}: {m}", js.name)))?;
            if !(js.armature >= 0.0) || !js.armature.is_finite() {
                return Err(at(span, format!("joint {}: armature must be >= 0", js.name)));
            }

            let link_span = js.link.span();
            let ls = js.link.into_inner();
            let [ixx, ixy, ixz, iyy, iyz, izz] = ls.inertia;
            let link = LinkInertia {
                mass: ls.mass,
                com: Vector3::from(ls.com),
                inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
            };
            link.check_physical().map_err(|m| at(link_span, format!("link of joint {}: {m}", js.name)))?;

            joints.push(Joint {
                name: js.name,
                origin,
                axis: Unit::new_unchecked(axis),
                limits,
                armature: js.armature,
            });
            links.push(link);
        }

        Ok(RobotModel { name: self.name, base, joints, links, end_effector, gravity: Vector3::from(self.gravity) })
    }
}
