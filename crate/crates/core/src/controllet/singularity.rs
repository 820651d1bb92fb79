use crate::bus::Flags;
use crate::dynamics::manipulability;
use crate::error::{Error, Result};
use crate::kinematics::ChainFrames;
use crate::math::JointVector;
use crate::model::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulabilityConfig {
    /// `k_m`.
    pub gain: f64,
    /// `m_0`: the potential is active for `m_kin ≤ m_0`.
    pub threshold: f64,
    /// Central-difference step (rad).
    pub epsilon: f64,
}

impl Default for ManipulabilityConfig {
    fn default() -> Self {
        Self { gain: 10.0, threshold: 0.1, epsilon: 1e-6 }
    }
}

impl ManipulabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParameter("k_m must be non-negative".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter("m_0 must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
        }
        Ok(())
    }

    /// `V_sing = k_m (m − m_0)²` for `m ≤ m_0`, else 0.
    pub fn potential(&self, m: f64) -> f64 {
        if m <= self.threshold {
            let d = m - self.threshold;
            self.gain * d * d
        } else {
            0.0
        }
    }
}

fn potential_at(model: &RobotModel, q: &JointVector, cfg: &ManipulabilityConfig) -> f64 {
    cfg.potential(manipulability(&ChainFrames::compute(model, q).jacobian()).value)
}

/// Stateless evaluator used by the controllets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityTorque {
    pub config: ManipulabilityConfig,
}

impl SingularityTorque {
    pub fn new(config: ManipulabilityConfig) -> Self {
        Self { config }
    }

    /// `τ_ma = −∂V_sing/∂q` by central differences. `frames` must belong
    /// to `q`; they provide the activation test without recomputing FK.
    pub fn compute(&self, model: &RobotModel, frames: &ChainFrames, q: &JointVector) -> (JointVector, Flags) {
        let cfg = &self.config;
        let m = manipulability(&frames.jacobian()).value;
        if m > cfg.threshold {
            return (JointVector::zeros(), Flags::default());
        }
        let mut tau = JointVector::zeros();
        let eps = cfg.epsilon;
        for i in 0..model.dof() {
            let mut plus = *q;
            plus[i] += eps;
            let mut minus = *q;
            minus[i] -= eps;
            tau[i] = -(potential_at(model, &plus, cfg) - potential_at(model, &minus, cfg)) / (2.0 * eps);
        }
        let mut flags = Flags::MA_ACTIVE;
        if tau.iter().any(|v| !v.is_finite()) {
            tau = JointVector::zeros();
            flags.insert(Flags::MA_NAN_GUARD);
        }
        (tau, flags)
    }
}

/// Singularity-avoidance torque at `q`: exactly zero whenever
/// `m_kin(q) > m_0`.
pub fn manipulability_torque(model: &RobotModel, q: &JointVector, cfg: &ManipulabilityConfig) -> (JointVector, Flags) {
    SingularityTorque::new(*cfg).compute(model, &ChainFrames::compute(model, q), q)
}
