//! Segment-based collision avoidance.
//!
//! Each arm is approximated by the polyline through its joint origins and
//! end effector. Segment `i` runs from anchor `i` to anchor `i + 1` and is
//! rigidly attached to link `i`. Closest points between segments come from
//! the closed-form clamped minimisation for two segments, which is exact for
//! this geometry and needs no iteration.

use nalgebra::Vector3;

use super::ControlOutput;
use crate::bus::{Flags, RobotBus, RobotId};
use crate::error::{Error, Result};
use crate::kinematics::ChainFrames;
use crate::math::{JointVector, MAX_DOF};
use crate::model::RobotModel;
use crate::state::JointState;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionConfig {
    /// Activation distance `d_thr` (m).
    pub threshold: f64,
    /// Repulsion gain (N/m); force magnitude is `gain · (d_thr − d)`.
    pub gain: f64,
    /// Also check non-adjacent segment pairs within one arm.
    pub self_pairs: bool,
    /// Used when two segments touch and no previous direction exists.
    pub fallback_axis: Vector3<f64>,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self { threshold: 0.05, gain: 300.0, self_pairs: false, fallback_axis: Vector3::z() }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter("collision threshold must be positive".into()));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParameter("collision gain must be non-negative".into()));
        }
        if !(self.fallback_axis.norm() > 0.0) {
            return Err(Error::InvalidParameter("collision fallback axis must be non-zero".into()));
        }
        Ok(())
    }
}

/// Closest points between two segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentContact {
    pub distance: f64,
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    /// Parameters along each segment, in `[0, 1]`.
    pub s: f64,
    pub t: f64,
}

/// Closest points of segments `p1–q1` and `p2–q2`.
pub fn closest_points(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> SegmentContact {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let point_a = p1 + d1 * s;
    let point_b = p2 + d2 * t;
    SegmentContact { distance: (point_a - point_b).norm(), point_a, point_b, s, t }
}

pub fn segment_distance(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> f64 {
    closest_points(p1, q1, p2, q2).distance
}

/// Collision avoidance state for one controllet: the configuration plus
/// the last valid separation direction of every segment pair, used when two
/// segments touch.
#[derive(Debug, Clone)]
pub struct CollisionAvoidance {
    pub config: CollisionConfig,
    robots: usize,
    previous: Vec<Option<Vector3<f64>>>,
}

const PAIR_SLOTS: usize = MAX_DOF * MAX_DOF;

impl CollisionAvoidance {
    pub fn new(config: CollisionConfig, robots: usize) -> Self {
        // robot pairs a <= b, the diagonal holding self pairs
        let pairs = robots * (robots + 1) / 2;
        Self { config, robots, previous: vec![None; pairs * PAIR_SLOTS] }
    }

    pub fn reset(&mut self) {
        self.previous.iter_mut().for_each(|p| *p = None);
    }

    fn pair_index(&self, a: usize, b: usize) -> usize {
        // row-major upper triangle including the diagonal
        a * self.robots - a * (a + 1) / 2 + b
    }

    /// Adds the repulsion torques between robots `robots[a]` and
    /// `robots[b]` (or within one robot when `a == b`) into `out`.
    pub fn apply(&mut self, bus: &RobotBus, robots: &[RobotId], out: &mut [ControlOutput]) {
        for a in 0..robots.len() {
            for b in a..robots.len() {
                if a == b && !self.config.self_pairs {
                    continue;
                }
                let fa = &bus.snapshot(robots[a]).frames;
                let fb = &bus.snapshot(robots[b]).frames;
                let slot = self.pair_index(a, b);
                let mut tau_a = JointVector::zeros();
                let mut tau_b = JointVector::zeros();
                let flags = self.pair(slot, fa, fb, a == b, &mut tau_a, &mut tau_b);
                out[robots[a]].terms.collision += tau_a;
                out[robots[b]].terms.collision += tau_b;
                out[robots[a]].flags.insert(flags);
                out[robots[b]].flags.insert(flags);
            }
        }
    }

    /// Repulsion between two chains. For a self pair (`same`) only segments
    /// at least two apart are tested and both torques belong to one arm.
    fn pair(
        &mut self,
        slot: usize,
        fa: &ChainFrames,
        fb: &ChainFrames,
        same: bool,
        tau_a: &mut JointVector,
        tau_b: &mut JointVector,
    ) -> Flags {
        let mut flags = Flags::default();
        let thr = self.config.threshold;
        for i in 0..fa.dof {
            let (pa, qa) = (fa.anchor(i), fa.anchor(i + 1));
            let j_start = if same { i + 2 } else { 0 };
            for j in j_start..fb.dof {
                let contact = closest_points(&pa, &qa, &fb.anchor(j), &fb.anchor(j + 1));
                if contact.distance >= thr {
                    continue;
                }
                flags.insert(Flags::CA_ACTIVE);
                let memory = &mut self.previous[slot * PAIR_SLOTS + i * MAX_DOF + j];
                let dir = if contact.distance > EPS {
                    let d = (contact.point_a - contact.point_b) / contact.distance;
                    *memory = Some(d);
                    d
                } else if let Some(d) = *memory {
                    flags.insert(Flags::CA_PREVIOUS_AXIS);
                    d
                } else {
                    flags.insert(Flags::CA_FALLBACK_AXIS);
                    self.config.fallback_axis.normalize()
                };
                let force = dir * (self.config.gain * (thr - contact.distance));
                *tau_a += fa.point_jacobian(&contact.point_a, i).transpose() * force;
                let on_b = fb.point_jacobian(&contact.point_b, j).transpose() * (-force);
                if same {
                    *tau_a += on_b;
                } else {
                    *tau_b += on_b;
                }
            }
        }
        flags
    }
}

/// Collision-avoidance torque for each robot in `models`, considering every
/// pair of robots (and self pairs when configured).
pub fn collision_avoidance_torque(
    models: &[RobotModel],
    states: &[JointState],
    config: &CollisionConfig,
) -> Result<Vec<(JointVector, Flags)>> {
    if models.len() != states.len() {
        return Err(Error::Dimension { expected: models.len(), actual: states.len() });
    }
    config.validate()?;
    let frames: Vec<ChainFrames> = models.iter().zip(states).map(|(m, s)| ChainFrames::compute(m, &s.q)).collect();
    let mut ca = CollisionAvoidance::new(config.clone(), models.len());
    let mut out = vec![(JointVector::zeros(), Flags::default()); models.len()];
    for a in 0..models.len() {
        for b in a..models.len() {
            if a == b && !config.self_pairs {
                continue;
            }
            let slot = ca.pair_index(a, b);
            let mut tau_a = JointVector::zeros();
            let mut tau_b = JointVector::zeros();
            let flags = ca.pair(slot, &frames[a], &frames[b], a == b, &mut tau_a, &mut tau_b);
            out[a].0 += tau_a;
            out[b].0 += tau_b;
            out[a].1.insert(flags);
            out[b].1.insert(flags);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{joint_vector, Pose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Dense sampling of both segments; an upper bound that converges to
    /// the true distance.
    fn sampled_distance(p1: Vector3<f64>, q1: Vector3<f64>, p2: Vector3<f64>, q2: Vector3<f64>) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let a = p1 + (q1 - p1) * (i as f64 / n as f64);
            for j in 0..=n {
                let b = p2 + (q2 - p2) * (j as f64 / n as f64);
                best = best.min((a - b).norm());
            }
        }
        best
    }

    #[test]
    fn parallel_segments_far_apart_give_zero_torque() {
        let c = closest_points(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0), &v(1.0, 1.0, 0.0));
        assert_relative_eq!(c.distance, 1.0, epsilon = 1e-15);

        // two planar arms a metre apart
        let mut right = RobotModel::planar(&[0.5, 0.5]);
        right.base = Pose::translation(0.0, 1.0, 0.0);
        let left = RobotModel::planar(&[0.5, 0.5]);
        let s = JointState::at_rest(joint_vector(&[0.0, 0.0]));
        let out = collision_avoidance_torque(&[left, right], &[s, s], &CollisionConfig::default()).unwrap();
        assert_eq!(out[0].0, JointVector::zeros());
        assert_eq!(out[1].0, JointVector::zeros());
        assert!(out[0].1.is_empty());
    }

    #[test]
    fn perpendicular_intersecting_segments_touch() {
        let c = closest_points(&v(-1.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(0.0, -1.0, 0.0), &v(0.0, 1.0, 0.0));
        assert_eq!(c.distance, 0.0);
    }

    #[test]
    fn skew_segments_match_sampling_oracle() {
        let (p1, q1, p2, q2) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 0.03, 1.0), v(1.0, 0.03, 1.0));
        let c = closest_points(&p1, &q1, &p2, &q2);
        let sampled = sampled_distance(p1, q1, p2, q2);
        assert!(c.distance <= sampled + 1e-12);
        assert_relative_eq!(c.distance, sampled, epsilon = 1e-6);
        let dir = (c.point_a - c.point_b) / c.distance;
        let oracle = v(0.0, -0.03, -1.0).normalize();
        assert!((dir - oracle).norm() < 1e-6);
    }

    #[test]
    fn degenerate_segments_reduce_to_points() {
        let c = closest_points(&v(0.0, 0.0, 0.0), &v(0.0, 0.0, 0.0), &v(1.0, -1.0, 2.0), &v(1.0, 1.0, 2.0));
        assert_relative_eq!(c.distance, 5f64.sqrt(), epsilon = 1e-15);
        let c = closest_points(&v(0.0, 0.0, 0.0), &v(0.0, 0.0, 0.0), &v(0.0, 3.0, 4.0), &v(0.0, 3.0, 4.0));
        assert_relative_eq!(c.distance, 5.0, epsilon = 1e-15);
    }

    #[test]
    fn close_arms_are_pushed_apart_along_separation() {
        // two single-link planar arms, the right one angled toward the left
        // so their tips end up about 1 cm apart
        let mut right = RobotModel::planar(&[1.0]);
        right.base = Pose::translation(0.0, 0.03, 0.0);
        let left = RobotModel::planar(&[1.0]);
        let s_left = JointState::at_rest(joint_vector(&[0.0]));
        let s_right = JointState::at_rest(joint_vector(&[-0.02]));
        let cfg = CollisionConfig::default();
        let out = collision_avoidance_torque(&[left, right], &[s_left, s_right], &cfg).unwrap();

        // oracle: the right tip against the x axis
        let tip = v((-0.02f64).cos(), 0.03 + (-0.02f64).sin(), 0.0);
        let d = tip.y;
        let magnitude = 300.0 * (0.05 - d);
        // left arm is pushed along −y at x = tip.x: τ_z = x·F_y
        assert_relative_eq!(out[0].0[0], tip.x * -magnitude, epsilon = 1e-9);
        // right arm is pushed along +y at its tip: τ_z = (r × F)_z
        assert_relative_eq!(out[1].0[0], tip.x * magnitude, epsilon = 1e-9);
        assert!(out[0].1.contains(Flags::CA_ACTIVE));
    }

    #[test]
    fn touching_segments_use_fallback_then_memory() {
        let mut ca = CollisionAvoidance::new(CollisionConfig::default(), 2);
        let left = RobotModel::planar(&[1.0]);
        let mut right = RobotModel::planar(&[1.0]);
        right.base = Pose::translation(0.5, 0.0, 0.0);
        let s = JointState::at_rest(joint_vector(&[0.0]));
        let fa = ChainFrames::compute(&left, &s.q);
        let fb = ChainFrames::compute(&right, &s.q);
        let (mut ta, mut tb) = (JointVector::zeros(), JointVector::zeros());
        let flags = ca.pair(1, &fa, &fb, false, &mut ta, &mut tb);
        assert!(flags.contains(Flags::CA_FALLBACK_AXIS));

        // separate slightly, then touch again: the remembered axis is used
        let mut near = right.clone();
        near.base = Pose::translation(0.5, 0.01, 0.0);
        let fb_near = ChainFrames::compute(&near, &s.q);
        ca.pair(1, &fa, &fb_near, false, &mut ta, &mut tb);
        let flags = ca.pair(1, &fa, &fb, false, &mut ta, &mut tb);
        assert!(flags.contains(Flags::CA_PREVIOUS_AXIS));
        assert!(!flags.contains(Flags::CA_FALLBACK_AXIS));
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_bounded_by_samples(
            c in proptest::collection::vec(-1.0f64..1.0, 12)
        ) {
            let p1 = v(c[0], c[1], c[2]);
            let q1 = v(c[3], c[4], c[5]);
            let p2 = v(c[6], c[7], c[8]);
            let q2 = v(c[9], c[10], c[11]);
            let d = segment_distance(&p1, &q1, &p2, &q2);
            let d_rev = segment_distance(&p2, &q2, &p1, &q1);
            prop_assert!((d - d_rev).abs() < 1e-12);
            // endpoints are candidates, so the minimum can never exceed them
            for (a, b) in [(p1, p2), (p1, q2), (q1, p2), (q1, q2)] {
                prop_assert!(d <= (a - b).norm() + 1e-12);
            }
        }
    }
}
