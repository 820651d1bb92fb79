//! Controllets: pluggable torque laws that own one or more robots.
//!
//! Every controllet produces a [`TorqueTerms`] decomposition per owned
//! robot. The multimode controller sums the terms with
//! [`compose_command`], clamps to the torque limits and publishes the
//! result.

mod collision;
mod impedance;
mod singularity;
mod ufic;

pub use collision::{
    closest_points, collision_avoidance_torque, segment_distance, CollisionAvoidance, CollisionConfig, SegmentContact,
};
pub use impedance::{
    cartesian_feedforward, cdc_goal_split, joint_impedance_torque, nullspace_projector, nullspace_torque, task_torque,
    CartesianImpedance, CoupledCartesianImpedance, JointImpedance,
};
pub use singularity::{manipulability_torque, ManipulabilityConfig, SingularityTorque};
pub use ufic::{shape_target, ufic_wrench, CoupledUfic, Ufic, UficGains, UficState};

use nalgebra::Vector6;

use crate::bus::{Flags, RobotBus, RobotId};
use crate::error::{Error, Result};
use crate::math::JointVector;

/// The five torque contributions of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorqueTerms {
    pub task: JointVector,
    pub null: JointVector,
    /// `C(q, q̇) q̇ + g(q)`.
    pub coriolis: JointVector,
    pub collision: JointVector,
    pub manipulability: JointVector,
}

impl TorqueTerms {
    /// Sum in the fixed order task, null, coriolis, collision,
    /// manipulability. Replaying this order on recorded terms reproduces the
    /// command bit for bit.
    pub fn sum(&self) -> JointVector {
        let mut out = JointVector::zeros();
        for i in 0..out.len() {
            out[i] = self.task[i] + self.null[i] + self.coriolis[i] + self.collision[i] + self.manipulability[i];
        }
        out
    }

    pub fn gravity_only(gravity: JointVector) -> Self {
        Self { coriolis: gravity, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        [self.task, self.null, self.coriolis, self.collision, self.manipulability]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Result of summing and saturating one robot's terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composed {
    /// Unsaturated sum.
    pub raw: JointVector,
    /// Torque to send: `raw` clamped to the limits, zero on fault.
    pub torque: JointVector,
    /// Bit `i` set when joint `i` was clamped.
    pub saturated: u8,
    /// A term was not finite.
    pub fault: bool,
}

/// Sums the terms and clamps each joint to `±limits`.
pub fn compose_command(terms: &TorqueTerms, limits: &JointVector) -> Composed {
    let raw = terms.sum();
    if raw.iter().any(|v| !v.is_finite()) {
        return Composed { raw, torque: JointVector::zeros(), saturated: 0, fault: true };
    }
    let mut torque = raw;
    let mut saturated = 0u8;
    for i in 0..torque.len() {
        let lim = limits[i];
        if torque[i] > lim {
            torque[i] = lim;
            saturated |= 1 << i;
        } else if torque[i] < -lim {
            torque[i] = -lim;
            saturated |= 1 << i;
        }
    }
    Composed { raw, torque, saturated, fault: false }
}

/// Cartesian impedance gains. Diagonal matrices are stored as vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    /// `K_c`, N/m and N·m/rad.
    pub stiffness: Vector6<f64>,
    /// `D_c`.
    pub damping: Vector6<f64>,
    /// `K_N`.
    pub null_stiffness: JointVector,
    /// `D_N`.
    pub null_damping: JointVector,
    /// `q_dN`; `None` latches the posture at activation.
    pub null_posture: Option<JointVector>,
    /// Adds the `Λ ẍ_d` feedforward of the full impedance law.
    pub feedforward: bool,
}

impl ImpedanceGains {
    pub fn new(stiffness: Vector6<f64>) -> Self {
        Self {
            stiffness,
            damping: critical_damping(&stiffness),
            null_stiffness: JointVector::repeat(10.0),
            null_damping: JointVector::repeat(3.0),
            null_posture: None,
            feedforward: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .stiffness
            .iter()
            .chain(self.damping.iter())
            .chain(self.null_stiffness.iter())
            .chain(self.null_damping.iter());
        for v in all {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter("impedance gains must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        Self::new(Vector6::new(100.0, 100.0, 50.0, 10.0, 10.0, 10.0))
    }
}

/// `2 √K` per axis (unit apparent mass).
pub fn critical_damping(stiffness: &Vector6<f64>) -> Vector6<f64> {
    stiffness.map(|k| 2.0 * k.max(0.0).sqrt())
}

/// Joint-space impedance gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointGains {
    pub stiffness: JointVector,
    pub damping: JointVector,
}

impl Default for JointGains {
    fn default() -> Self {
        Self {
            stiffness: JointVector::from_column_slice(&[600.0, 600.0, 600.0, 600.0, 250.0, 150.0, 50.0]),
            damping: JointVector::from_column_slice(&[50.0, 50.0, 50.0, 20.0, 10.0, 8.0, 3.0]),
        }
    }
}

/// Dual-arm coupling geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConfig {
    /// Offset of each arm's goal along the group goal's y-axis (m).
    pub offset: f64,
    /// Magnitude of the squeeze force along the goal y-axis (N), used by
    /// the coupled force controller.
    pub squeeze: f64,
    /// Per-arm rotation applied to the group orientation, as scaled axes.
    pub rotation_offsets: [nalgebra::Vector3<f64>; 2],
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self { offset: 0.15, squeeze: 20.0, rotation_offsets: [nalgebra::Vector3::zeros(); 2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlletKind {
    JointImpedance,
    /// Independent Cartesian impedance per owned robot ("DC" for two arms).
    CartesianImpedance,
    /// Dual-arm Cartesian impedance tracking one shared goal ("CDC").
    CoupledCartesianImpedance,
    Ufic,
    CoupledUfic,
}

impl ControlletKind {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "joint_impedance" => Self::JointImpedance,
            "cartesian_impedance" | "dc" => Self::CartesianImpedance,
            "coupled_cartesian_impedance" | "cdc" => Self::CoupledCartesianImpedance,
            "ufic" => Self::Ufic,
            "coupled_ufic" => Self::CoupledUfic,
            other => return Err(Error::Config(format!("unknown controllet kind `{other}`"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::JointImpedance => "joint_impedance",
            Self::CartesianImpedance => "cartesian_impedance",
            Self::CoupledCartesianImpedance => "coupled_cartesian_impedance",
            Self::Ufic => "ufic",
            Self::CoupledUfic => "coupled_ufic",
        }
    }

    fn robot_count(self) -> Option<usize> {
        match self {
            Self::CoupledCartesianImpedance | Self::CoupledUfic => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Features {
    pub collision_avoidance: bool,
    pub manipulability: bool,
}

/// Every tunable of a controllet; each kind reads the blocks it needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlletParams {
    pub impedance: ImpedanceGains,
    pub joint: JointGains,
    pub ufic: UficGains,
    pub collision: CollisionConfig,
    pub manipulability: ManipulabilityConfig,
    pub coupling: CouplingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlletDescriptor {
    pub name: String,
    pub kind: ControlletKind,
    /// Owned robots, in order.
    pub robots: Vec<RobotId>,
    pub features: Features,
    pub params: ControlletParams,
}

impl ControlletDescriptor {
    pub fn new(name: impl Into<String>, kind: ControlletKind, robots: Vec<RobotId>) -> Self {
        Self { name: name.into(), kind, robots, features: Features::default(), params: ControlletParams::default() }
    }

    pub fn with_features(mut self, collision_avoidance: bool, manipulability: bool) -> Self {
        self.features = Features { collision_avoidance, manipulability };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("controllet name must not be empty".into()));
        }
        if self.robots.is_empty() {
            return Err(Error::Config(format!("controllet `{}` claims no robots", self.name)));
        }
        for (i, r) in self.robots.iter().enumerate() {
            if self.robots[..i].contains(r) {
                return Err(Error::Config(format!("controllet `{}` claims robot {r} twice", self.name)));
            }
        }
        if self.robots.len() > 2 {
            return Err(Error::Config(format!("controllet `{}` claims more than two robots", self.name)));
        }
        if let Some(count) = self.kind.robot_count() {
            if self.robots.len() != count {
                return Err(Error::Config(format!(
                    "controllet `{}` of kind {} needs exactly {count} robots",
                    self.name,
                    self.kind.as_str()
                )));
            }
        }
        self.params.impedance.validate()?;
        self.params.ufic.validate()?;
        self.params.collision.validate()?;
        self.params.manipulability.validate()?;
        Ok(())
    }
}

/// What a controllet hands back for one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    pub terms: TorqueTerms,
    pub flags: Flags,
}

pub trait Controllet: Send {
    fn descriptor(&self) -> &ControlletDescriptor;

    fn name(&self) -> &str {
        &self.descriptor().name
    }

    fn robots(&self) -> &[RobotId] {
        &self.descriptor().robots
    }

    /// Called once at the tick boundary where the controllet becomes
    /// active, before its first compute.
    fn activate(&mut self, bus: &RobotBus);

    /// Writes `out[robot]` for every owned robot. Must not allocate.
    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]);

    /// Runtime parameter update from the control endpoint.
    fn set_param(&mut self, key: &str, value: f64) -> Result<()>;

    /// Force-channel states, one per owned robot, for controllets that
    /// have one.
    fn force_states(&self) -> &[UficState] {
        &[]
    }
}

/// Instantiates the controllet described by `descriptor`.
pub fn build(descriptor: ControlletDescriptor) -> Result<Box<dyn Controllet>> {
    descriptor.validate()?;
    Ok(match descriptor.kind {
        ControlletKind::JointImpedance => Box::new(JointImpedance::new(descriptor)),
        ControlletKind::CartesianImpedance => Box::new(CartesianImpedance::new(descriptor)),
        ControlletKind::CoupledCartesianImpedance => Box::new(CoupledCartesianImpedance::new(descriptor)),
        ControlletKind::Ufic => Box::new(Ufic::new(descriptor)),
        ControlletKind::CoupledUfic => Box::new(CoupledUfic::new(descriptor)),
    })
}

/// Optional feature torques shared by the Cartesian controllets.
#[derive(Debug, Clone)]
pub(crate) struct FeatureStack {
    features: Features,
    collision: CollisionAvoidance,
    singularity: SingularityTorque,
}

impl FeatureStack {
    pub(crate) fn new(descriptor: &ControlletDescriptor) -> Self {
        Self {
            features: descriptor.features,
            collision: CollisionAvoidance::new(descriptor.params.collision.clone(), descriptor.robots.len()),
            singularity: SingularityTorque::new(descriptor.params.manipulability),
        }
    }

    pub(crate) fn reset(&mut self) {
        self.collision.reset();
    }

    /// Adds collision and manipulability torques for `robots`. Disabled
    /// features leave the terms untouched (exact zeros).
    pub(crate) fn apply(&mut self, bus: &RobotBus, robots: &[RobotId], out: &mut [ControlOutput]) {
        if self.features.collision_avoidance {
            self.collision.apply(bus, robots, out);
        }
        if self.features.manipulability {
            for &r in robots {
                let snap = bus.snapshot(r);
                let (tau, flags) = self.singularity.compute(bus.model(r), &snap.frames, &snap.state.q);
                out[r].terms.manipulability = tau;
                out[r].flags.insert(flags);
            }
        }
    }

    pub(crate) fn set_param(&mut self, key: &str, value: f64) -> Result<bool> {
        match key {
            "k_m" => self.singularity.config.gain = non_negative(key, value)?,
            "m_0" => self.singularity.config.threshold = positive(key, value)?,
            "d_thr" => self.collision.config.threshold = positive(key, value)?,
            "ca_gain" => self.collision.config.gain = non_negative(key, value)?,
            "collision_avoidance" => self.features.collision_avoidance = value != 0.0,
            "manipulability" => self.features.manipulability = value != 0.0,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn non_negative(key: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!("`{key}` must be finite and non-negative, got {value}")))
    }
}

pub(crate) fn positive(key: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!("`{key}` must be finite and positive, got {value}")))
    }
}

/// Updates one impedance gain addressed as `k_c.<axis>` / `d_c.<axis>`
/// (axis 0..6) or `k_n` / `d_n` (all joints).
pub(crate) fn set_impedance_param(gains: &mut ImpedanceGains, key: &str, value: f64) -> Result<bool> {
    let value = non_negative(key, value)?;
    if let Some(axis) = key.strip_prefix("k_c.") {
        let i = axis_index(key, axis)?;
        gains.stiffness[i] = value;
        gains.damping[i] = 2.0 * value.sqrt();
    } else if let Some(axis) = key.strip_prefix("d_c.") {
        gains.damping[axis_index(key, axis)?] = value;
    } else if key == "k_n" {
        gains.null_stiffness = JointVector::repeat(value);
    } else if key == "d_n" {
        gains.null_damping = JointVector::repeat(value);
    } else {
        return Ok(false);
    }
    Ok(true)
}

fn axis_index(key: &str, axis: &str) -> Result<usize> {
    match axis.parse::<usize>() {
        Ok(i) if i < 6 => Ok(i),
        _ => Err(Error::InvalidParameter(format!("`{key}`: axis must be 0..6"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn limits() -> JointVector {
        JointVector::from_column_slice(&[87.0, 87.0, 87.0, 87.0, 12.0, 12.0, 12.0])
    }

    #[test]
    fn zero_terms_compose_to_zero() {
        let c = compose_command(&TorqueTerms::default(), &limits());
        assert_eq!(c.torque, JointVector::zeros());
        assert_eq!(c.saturated, 0);
        assert!(!c.fault);
    }

    #[test]
    fn double_limit_is_clamped_and_flagged() {
        let terms = TorqueTerms { task: limits() * 2.0, ..Default::default() };
        let c = compose_command(&terms, &limits());
        assert_eq!(c.torque, limits());
        assert_eq!(c.saturated, 0x7f);

        let terms = TorqueTerms { task: -limits() * 2.0, ..Default::default() };
        assert_eq!(compose_command(&terms, &limits()).torque, -limits());
    }

    #[test]
    fn nan_term_faults() {
        let mut terms = TorqueTerms::default();
        terms.manipulability[3] = f64::NAN;
        let c = compose_command(&terms, &limits());
        assert!(c.fault);
        assert_eq!(c.torque, JointVector::zeros());
    }

    #[test]
    fn descriptor_rejects_duplicates_and_wrong_arity() {
        let d = ControlletDescriptor::new("x", ControlletKind::CartesianImpedance, vec![0, 0]);
        assert!(d.validate().is_err());
        let d = ControlletDescriptor::new("x", ControlletKind::CoupledCartesianImpedance, vec![0]);
        assert!(d.validate().is_err());
        let d = ControlletDescriptor::new("x", ControlletKind::CartesianImpedance, vec![]);
        assert!(d.validate().is_err());
        let d = ControlletDescriptor::new("x", ControlletKind::CoupledCartesianImpedance, vec![0, 1]);
        assert!(d.validate().is_ok());
    }

    proptest! {
        #[test]
        fn sum_matches_elementwise_oracle(v in proptest::collection::vec(-100.0f64..100.0, 35)) {
            let part = |k: usize| JointVector::from_column_slice(&v[7 * k..7 * k + 7]);
            let terms = TorqueTerms {
                task: part(0), null: part(1), coriolis: part(2), collision: part(3), manipulability: part(4),
            };
            let big = JointVector::repeat(1e9);
            let c = compose_command(&terms, &big);
            for i in 0..7 {
                let mut oracle = 0.0;
                for k in 0..5 {
                    oracle += v[7 * k + i];
                }
                prop_assert_eq!(c.raw[i], oracle);
                prop_assert_eq!(c.torque[i], oracle);
            }
        }
    }
}
