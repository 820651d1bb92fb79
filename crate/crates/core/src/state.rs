use crate::math::JointVector;

/// Joint positions and velocities at a tick-aligned timestamp. Plant outputs
/// also carry the acceleration they integrated with.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    /// Seconds since the start of the run.
    pub timestamp: f64,
    pub q: JointVector,
    pub qd: JointVector,
    pub qdd: Option<JointVector>,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self { timestamp: 0.0, q, qd: JointVector::zeros(), qdd: None }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
            && self.qd.iter().all(|v| v.is_finite())
            && self.qdd.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}
