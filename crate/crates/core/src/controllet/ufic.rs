//! Unified force-impedance control with energy tanks.
//!
//! The force channel is a PID on the wrench error whose output `F_f` is
//! gated by `γ_f + α_f (1 − γ_f)`: `γ_f` fades with distance from the
//! contact point `x_c`, `α_f` with the fill level of the force tank. The
//! impedance target is shaped as `x_d' = x_d + α_i (x_d − x)`, where `α_i`
//! follows the impedance tank. Each tank is drained by the positive part of
//! the power its channel injects and never refilled.

use nalgebra::{UnitQuaternion, Vector3, Vector6};

use super::impedance::{coupled_goals, nullspace_torque, set_param_impedance, task_torque};
use super::{non_negative, positive, ControlOutput, Controllet, ControlletDescriptor, FeatureStack, TorqueTerms};
use crate::bus::{Flags, RobotBus, RobotId};
use crate::error::{Error, Result};
use crate::kinematics::CartesianState;
use crate::math::{orientation_error, JointVector, Pose, Wrench};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UficGains {
    /// `K_p`, `K_d`, `K_i` diagonals (N/m, N·s/m, N/(m·s)); scaled by
    /// `compliance` to act on the force error.
    pub kp: Vector6<f64>,
    pub kd: Vector6<f64>,
    pub ki: Vector6<f64>,
    /// Force-error to displacement scale (m/N).
    pub compliance: f64,
    /// `F_d`, wrench the end effector should exert on the environment.
    pub desired: Wrench,
    /// `F_FF`.
    pub feedforward: Wrench,
    pub d_max: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// Axes on which the force channel acts.
    pub force_axes: [bool; 6],
    /// Bound on the integral contribution per axis (N).
    pub integral_limit: f64,
    /// Cutoff of the first-order filter on the error derivative (Hz).
    pub derivative_cutoff: f64,
    /// Force along the force axes that counts as contact (N).
    pub contact_threshold: f64,
}

impl Default for UficGains {
    fn default() -> Self {
        Self {
            kp: Vector6::repeat(200.0),
            kd: Vector6::repeat(10.0),
            ki: Vector6::repeat(50.0),
            compliance: 1e-3,
            desired: Wrench::zeros(),
            feedforward: Wrench::zeros(),
            d_max: 0.05,
            e_min: 0.0,
            e_max: 100.0,
            force_axes: [false, false, true, false, false, false],
            integral_limit: 50.0,
            derivative_cutoff: 10.0,
            contact_threshold: 1.0,
        }
    }
}

impl UficGains {
    pub fn validate(&self) -> Result<()> {
        let finite_non_negative =
            self.kp.iter().chain(self.kd.iter()).chain(self.ki.iter()).all(|v| v.is_finite() && *v >= 0.0);
        if !finite_non_negative {
            return Err(Error::InvalidParameter("force PID gains must be finite and non-negative".into()));
        }
        if !(self.e_min <= self.e_max) || !self.e_min.is_finite() || !self.e_max.is_finite() {
            return Err(Error::InvalidParameter("tank limits need E_min ≤ E_max".into()));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidParameter("d_max must be positive".into()));
        }
        if !(self.compliance >= 0.0) || !(self.integral_limit >= 0.0) || !(self.derivative_cutoff > 0.0) {
            return Err(Error::InvalidParameter(
                "compliance, integral limit and derivative cutoff must be positive".into(),
            ));
        }
        Ok(())
    }

    fn mask(&self, w: &Wrench) -> Wrench {
        Wrench::from_fn(|i, _| if self.force_axes[i] { w[i] } else { 0.0 })
    }

    /// Initial tank level `½ ‖K_p‖ ‖F_d‖²`, clipped to `[E_min, E_max]`.
    pub fn initial_energy(&self) -> f64 {
        let kp_norm = self.kp.amax();
        (0.5 * kp_norm * self.desired.norm_squared()).clamp(self.e_min, self.e_max)
    }

    /// Linear fade of a channel over the bottom tenth of the tank.
    pub fn tank_alpha(&self, energy: f64) -> f64 {
        let span = 0.1 * (self.e_max - self.e_min);
        if span <= 0.0 {
            return if energy > self.e_min { 1.0 } else { 0.0 };
        }
        ((energy - self.e_min) / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UficState {
    /// Integral of the force error (N·s).
    pub integral: Wrench,
    pub previous_error: Wrench,
    /// Filtered error derivative (N/s).
    pub derivative: Wrench,
    pub e_f: f64,
    pub e_i: f64,
    pub gamma_f: f64,
    pub alpha_f: f64,
    pub alpha_i: f64,
    /// Latched contact position `x_c`.
    pub contact: Option<Vector3<f64>>,
    pub in_contact: bool,
    /// Set for the tick on which a tank would have gone below `E_min`.
    pub underflow: bool,
    started: bool,
}

impl UficState {
    pub fn new(gains: &UficGains) -> Self {
        let e0 = gains.initial_energy();
        Self {
            integral: Wrench::zeros(),
            previous_error: Wrench::zeros(),
            derivative: Wrench::zeros(),
            e_f: e0,
            e_i: e0,
            gamma_f: 0.0,
            alpha_f: gains.tank_alpha(e0),
            alpha_i: gains.tank_alpha(e0),
            contact: None,
            in_contact: false,
            underflow: false,
            started: false,
        }
    }

    pub fn tanks_within(&self, gains: &UficGains) -> bool {
        (gains.e_min..=gains.e_max).contains(&self.e_f) && (gains.e_min..=gains.e_max).contains(&self.e_i)
    }
}

/// `(γ_f + α_f (1 − γ_f)) F_f`.
pub fn shaped_force(gamma_f: f64, alpha_f: f64, force: &Wrench) -> Wrench {
    force * (gamma_f + alpha_f * (1.0 - gamma_f))
}

/// One tick of the force channel: PID on `F_d − F_meas`, contact latching,
/// `γ_f` shaping and force-tank drain. Returns the shaped wrench `F_f'`.
pub fn ufic_wrench(
    state: &UficState,
    gains: &UficGains,
    measured: &Wrench,
    x: &CartesianState,
    dt: f64,
) -> (Wrench, UficState) {
    let mut s = *state;
    s.underflow = false;

    let error = gains.mask(&(gains.desired - measured));
    if !s.started {
        s.previous_error = error;
        s.started = true;
    }
    let beta = 1.0 - (-2.0 * std::f64::consts::PI * gains.derivative_cutoff * dt).exp();
    let raw_derivative = (error - s.previous_error) / dt;
    s.derivative += (raw_derivative - s.derivative) * beta;
    s.previous_error = error;

    s.integral += error * dt;
    let c = gains.compliance;
    for i in 0..6 {
        let kic = gains.ki[i] * c;
        if kic > 0.0 {
            let bound = gains.integral_limit / kic;
            s.integral[i] = s.integral[i].clamp(-bound, bound);
        }
    }

    let pid =
        (gains.kp.component_mul(&error) + gains.kd.component_mul(&s.derivative) + gains.ki.component_mul(&s.integral))
            * c;
    let force = gains.mask(&(gains.desired + gains.feedforward + pid));

    // contact latch on the force axes
    let normal = gains.mask(measured).fixed_rows::<3>(0).norm();
    let position = x.position();
    if normal > gains.contact_threshold {
        if !s.in_contact {
            s.contact = Some(position);
            s.in_contact = true;
        }
    } else {
        s.in_contact = false;
    }
    s.gamma_f = match s.contact {
        Some(xc) => (-(position - xc).norm_squared() / (gains.d_max * gains.d_max)).exp(),
        None => 0.0,
    };

    s.alpha_f = gains.tank_alpha(s.e_f);
    let mut shaped = shaped_force(s.gamma_f, s.alpha_f, &force);
    let drain = dt * shaped.dot(&x.twist).max(0.0);
    let available = s.e_f - gains.e_min;
    if drain > available {
        s.underflow = true;
        s.alpha_f = 0.0;
        shaped = shaped_force(s.gamma_f, 0.0, &force);
        let gated_drain = dt * shaped.dot(&x.twist).max(0.0);
        s.e_f = (s.e_f - gated_drain).max(gains.e_min);
    } else {
        s.e_f -= drain;
    }
    s.e_f = s.e_f.clamp(gains.e_min, gains.e_max);
    (shaped, s)
}

/// Shapes the impedance target to `x_d + α_i (x_d − x)` and drains the
/// impedance tank by the power of the extra stiffness wrench
/// `K_c α_i (x_d − x)`.
pub fn shape_target(
    state: &UficState,
    gains: &UficGains,
    stiffness: &Vector6<f64>,
    x: &CartesianState,
    x_d: &Pose,
    dt: f64,
) -> (Pose, UficState) {
    let mut s = *state;
    s.alpha_i = gains.tank_alpha(s.e_i);
    let dp = x_d.translation.vector - x.position();
    let dth = orientation_error(&x.orientation(), &x_d.rotation);
    let mut delta = Vector6::new(dp.x, dp.y, dp.z, dth.x, dth.y, dth.z);

    let extra = stiffness.component_mul(&delta) * s.alpha_i;
    let drain = dt * extra.dot(&x.twist).max(0.0);
    if drain > s.e_i - gains.e_min {
        s.underflow = true;
        s.alpha_i = 0.0;
    } else {
        s.e_i -= drain;
    }
    delta *= s.alpha_i;
    let mut shaped = *x_d;
    shaped.translation.vector += delta.fixed_rows::<3>(0);
    shaped.rotation = UnitQuaternion::from_scaled_axis(delta.fixed_rows::<3>(3).into_owned()) * shaped.rotation;
    s.e_i = s.e_i.clamp(gains.e_min, gains.e_max);
    (shaped, s)
}

/// Full UFIC torque for one robot. The force term `Jᵀ F_f'` is carried in
/// the task slot together with the shaped impedance torque.
fn ufic_terms(
    bus: &RobotBus,
    robot: RobotId,
    descriptor: &ControlletDescriptor,
    state: &mut UficState,
    gains: &UficGains,
    goal: &Pose,
    posture: Option<JointVector>,
) -> ControlOutput {
    let snap = bus.snapshot(robot);
    let dt = bus.dt();
    let (force, next) = ufic_wrench(state, gains, &snap.wrench, &snap.ee, dt);
    let mut impedance = descriptor.params.impedance;
    impedance.null_posture = impedance.null_posture.or(posture);
    let (shaped_goal, next) = shape_target(&next, gains, &impedance.stiffness, &snap.ee, goal, dt);
    *state = next;

    let dynamics = &snap.dynamics;
    let task = task_torque(dynamics, &snap.ee, &CartesianState::at(shaped_goal), &impedance, &snap.state.qd)
        + dynamics.jacobian.transpose() * force;
    let mut flags = Flags::default();
    if state.underflow {
        flags.insert(Flags::TANK_UNDERFLOW);
    }
    ControlOutput {
        terms: TorqueTerms {
            task,
            null: nullspace_torque(dynamics, &snap.state, &impedance),
            coriolis: dynamics.coriolis_and_gravity(),
            ..TorqueTerms::default()
        },
        flags,
    }
}

fn set_ufic_param(gains: &mut UficGains, key: &str, value: f64) -> Result<bool> {
    let axis =
        |prefix: &str| -> Option<usize> { key.strip_prefix(prefix).and_then(|s| s.parse().ok()).filter(|&i| i < 6) };
    if let Some(i) = axis("kp.") {
        gains.kp[i] = non_negative(key, value)?;
    } else if let Some(i) = axis("kd.") {
        gains.kd[i] = non_negative(key, value)?;
    } else if let Some(i) = axis("ki.") {
        gains.ki[i] = non_negative(key, value)?;
    } else if let Some(i) = axis("f_d.") {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("`{key}` must be finite")));
        }
        gains.desired[i] = value;
    } else {
        match key {
            "d_max" => gains.d_max = positive(key, value)?,
            "compliance" => gains.compliance = non_negative(key, value)?,
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Single-arm unified force-impedance controller.
pub struct Ufic {
    descriptor: ControlletDescriptor,
    features: FeatureStack,
    state: UficState,
    hold: Option<Pose>,
    posture: Option<JointVector>,
}

impl Ufic {
    pub fn new(descriptor: ControlletDescriptor) -> Self {
        let state = UficState::new(&descriptor.params.ufic);
        Self { features: FeatureStack::new(&descriptor), descriptor, state, hold: None, posture: None }
    }

    pub fn state(&self) -> &UficState {
        &self.state
    }
}

impl Controllet for Ufic {
    fn descriptor(&self) -> &ControlletDescriptor {
        &self.descriptor
    }

    fn activate(&mut self, bus: &RobotBus) {
        let r = self.descriptor.robots[0];
        self.state = UficState::new(&self.descriptor.params.ufic);
        self.hold = Some(bus.snapshot(r).ee.pose);
        self.posture = Some(bus.snapshot(r).state.q);
        self.features.reset();
    }

    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]) {
        for &r in &self.descriptor.robots {
            let target = bus.target(r);
            let goal = target.pose.or(self.hold).unwrap_or(bus.snapshot(r).ee.pose);
            let mut gains = self.descriptor.params.ufic;
            if let Some(w) = target.wrench {
                gains.desired = w;
            }
            out[r] = ufic_terms(bus, r, &self.descriptor, &mut self.state, &gains, &goal, self.posture);
        }
        self.features.apply(bus, &self.descriptor.robots, out);
    }

    fn force_states(&self) -> &[UficState] {
        std::slice::from_ref(&self.state)
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        if set_ufic_param(&mut self.descriptor.params.ufic, key, value)? {
            return Ok(());
        }
        set_param_impedance(&mut self.descriptor, &mut self.features, key, value)
    }
}

/// Dual-arm UFIC: the group goal is split along its y-axis and each arm
/// squeezes toward the other with the configured force.
pub struct CoupledUfic {
    descriptor: ControlletDescriptor,
    features: FeatureStack,
    states: [UficState; 2],
    hold: [Option<Pose>; 2],
    posture: [Option<JointVector>; 2],
}

impl CoupledUfic {
    pub fn new(descriptor: ControlletDescriptor) -> Self {
        let gains = squeeze_gains(&descriptor, 0, &UnitQuaternion::identity());
        let state = UficState::new(&gains);
        Self {
            features: FeatureStack::new(&descriptor),
            descriptor,
            states: [state; 2],
            hold: [None; 2],
            posture: [None; 2],
        }
    }

    pub fn states(&self) -> &[UficState; 2] {
        &self.states
    }
}

/// Force gains for arm `k`: desired wrench of magnitude `squeeze` along the
/// goal's ∓y axis (arm 0 sits on the +y side and pushes toward −y). The
/// force mask keeps the base axis closest to that direction.
fn squeeze_gains(descriptor: &ControlletDescriptor, k: usize, goal_rotation: &UnitQuaternion<f64>) -> UficGains {
    let mut gains = descriptor.params.ufic;
    let sign = if k == 0 { -1.0 } else { 1.0 };
    let dir = goal_rotation * Vector3::y() * (sign * descriptor.params.coupling.squeeze);
    gains.desired = Wrench::new(dir.x, dir.y, dir.z, 0.0, 0.0, 0.0);
    // regulate only along the squeeze axis; friction carries the load in
    // the other directions
    let axis = dir.iamax();
    gains.force_axes = [false; 6];
    gains.force_axes[axis] = true;
    gains
}

impl Controllet for CoupledUfic {
    fn descriptor(&self) -> &ControlletDescriptor {
        &self.descriptor
    }

    fn activate(&mut self, bus: &RobotBus) {
        let rotation = bus.group_target().pose.map(|p| p.rotation).unwrap_or_else(UnitQuaternion::identity);
        for (k, &r) in self.descriptor.robots.iter().enumerate() {
            self.states[k] = UficState::new(&squeeze_gains(&self.descriptor, k, &rotation));
            self.hold[k] = Some(bus.snapshot(r).ee.pose);
            self.posture[k] = Some(bus.snapshot(r).state.q);
        }
        self.features.reset();
    }

    fn compute(&mut self, bus: &RobotBus, out: &mut [ControlOutput]) {
        let goals = coupled_goals(&self.descriptor, bus);
        let rotation = bus.group_target().pose.map(|p| p.rotation).unwrap_or_else(UnitQuaternion::identity);
        for k in 0..2 {
            let r = self.descriptor.robots[k];
            let goal = match goals {
                Some(g) => g[k].pose,
                None => self.hold[k].unwrap_or(bus.snapshot(r).ee.pose),
            };
            let gains = squeeze_gains(&self.descriptor, k, &rotation);
            out[r] = ufic_terms(bus, r, &self.descriptor, &mut self.states[k], &gains, &goal, self.posture[k]);
        }
        self.features.apply(bus, &self.descriptor.robots, out);
    }

    fn force_states(&self) -> &[UficState] {
        &self.states
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "squeeze" => {
                self.descriptor.params.coupling.squeeze = non_negative(key, value)?;
                return Ok(());
            }
            "offset" => {
                self.descriptor.params.coupling.offset = value;
                return Ok(());
            }
            _ => {}
        }
        if set_ufic_param(&mut self.descriptor.params.ufic, key, value)? {
            return Ok(());
        }
        set_param_impedance(&mut self.descriptor, &mut self.features, key, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Twist;
    use approx::assert_relative_eq;
    use nalgebra::Translation3;
    use proptest::prelude::*;

    fn at(x: f64, y: f64, z: f64) -> CartesianState {
        CartesianState::at(Pose::translation(x, y, z))
    }

    fn pressing_gains() -> UficGains {
        UficGains { desired: Wrench::new(0.0, 0.0, -9.81, 0.0, 0.0, 0.0), ..UficGains::default() }
    }

    #[test]
    fn initial_energy_is_capped_at_tank_limit() {
        let gains = pressing_gains();
        // ½ · 200 · 9.81² = 9623.6 J > E_max
        assert!(0.5 * 200.0 * 9.81f64.powi(2) > gains.e_max);
        assert_eq!(gains.initial_energy(), 100.0);
        let s = UficState::new(&gains);
        assert_eq!((s.e_f, s.e_i), (100.0, 100.0));
    }

    #[test]
    fn gamma_is_one_at_contact_point_whatever_the_tank() {
        let gains = pressing_gains();
        let mut s = UficState::new(&gains);
        s.contact = Some(Vector3::new(0.4, 0.0, 0.3));
        s.in_contact = true;
        let measured = Wrench::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0);
        let x = at(0.4, 0.0, 0.3);
        let (full, a) = ufic_wrench(&s, &gains, &measured, &x, 1e-3);
        s.e_f = gains.e_min;
        let (empty, b) = ufic_wrench(&s, &gains, &measured, &x, 1e-3);
        assert_eq!((a.gamma_f, b.gamma_f), (1.0, 1.0));
        assert_eq!((a.alpha_f, b.alpha_f), (1.0, 0.0));
        assert_eq!(full, empty);
        assert!(full[2] < 0.0);
    }

    #[test]
    fn gamma_at_d_max_is_inverse_e() {
        let gains = pressing_gains();
        let mut s = UficState::new(&gains);
        s.contact = Some(Vector3::zeros());
        s.in_contact = true;
        let measured = Wrench::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0);
        let (_, next) = ufic_wrench(&s, &gains, &measured, &at(0.05, 0.0, 0.0), 1e-3);
        assert_relative_eq!(next.gamma_f, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(next.gamma_f, 0.3679, epsilon = 1e-4);
    }

    #[test]
    fn empty_tank_without_contact_gates_force_to_zero() {
        let gains = pressing_gains();
        let mut s = UficState::new(&gains);
        s.e_f = gains.e_min;
        let (f, next) = ufic_wrench(&s, &gains, &Wrench::zeros(), &at(0.4, 0.0, 0.4), 1e-3);
        assert_eq!(next.gamma_f, 0.0);
        assert_eq!(next.alpha_f, 0.0);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn contact_latches_and_relatches() {
        let gains = pressing_gains();
        let s = UficState::new(&gains);
        let push = Wrench::new(0.0, 0.0, -3.0, 0.0, 0.0, 0.0);
        let (_, s) = ufic_wrench(&s, &gains, &Wrench::zeros(), &at(0.1, 0.0, 0.5), 1e-3);
        assert!(s.contact.is_none());
        let (_, s) = ufic_wrench(&s, &gains, &push, &at(0.2, 0.0, 0.3), 1e-3);
        assert_eq!(s.contact, Some(Vector3::new(0.2, 0.0, 0.3)));
        let (_, s) = ufic_wrench(&s, &gains, &push, &at(0.25, 0.0, 0.3), 1e-3);
        assert_eq!(s.contact, Some(Vector3::new(0.2, 0.0, 0.3)));
        let (_, s) = ufic_wrench(&s, &gains, &Wrench::zeros(), &at(0.3, 0.0, 0.35), 1e-3);
        let (_, s) = ufic_wrench(&s, &gains, &push, &at(0.3, 0.0, 0.3), 1e-3);
        assert_eq!(s.contact, Some(Vector3::new(0.3, 0.0, 0.3)));
    }

    #[test]
    fn drain_follows_injected_power() {
        let gains = pressing_gains();
        let s = UficState::new(&gains);
        // moving down at 0.1 m/s while the channel pushes down
        let mut x = at(0.4, 0.0, 0.4);
        x.twist = Twist::new(0.0, 0.0, -0.1, 0.0, 0.0, 0.0);
        let (f, next) = ufic_wrench(&s, &gains, &Wrench::zeros(), &x, 1e-3);
        let oracle = 100.0 - 1e-3 * f[2] * -0.1;
        assert_relative_eq!(next.e_f, oracle, epsilon = 1e-12);
        // moving up: negative power, no drain
        x.twist[2] = 0.1;
        let (_, next) = ufic_wrench(&s, &gains, &Wrench::zeros(), &x, 1e-3);
        assert_eq!(next.e_f, 100.0);
    }

    #[test]
    fn underflow_disables_tank_gated_part() {
        let gains = UficGains { desired: Wrench::new(0.0, 0.0, -100.0, 0.0, 0.0, 0.0), ..UficGains::default() };
        let mut s = UficState::new(&gains);
        // α_f = 0.05: one tick would drain 1e-3 · 0.05 · 100 · 200 = 1 J
        s.e_f = 0.5;
        let mut x = at(0.4, 0.0, 0.4);
        x.twist = Twist::new(0.0, 0.0, -200.0, 0.0, 0.0, 0.0);
        let (f, next) = ufic_wrench(&s, &gains, &Wrench::zeros(), &x, 1e-3);
        assert!(next.underflow);
        assert_eq!(next.alpha_f, 0.0);
        assert!(f.iter().all(|v| *v == 0.0));
        // the gated channel injects nothing, so nothing is drained
        assert_eq!(next.e_f, 0.5);
    }

    #[test]
    fn shaping_doubles_error_with_full_tank() {
        let gains = pressing_gains();
        let s = UficState::new(&gains);
        let x = at(0.0, 0.0, 0.0);
        let goal = Pose::from_parts(Translation3::new(0.1, 0.0, 0.0), UnitQuaternion::identity());
        let (shaped, next) = shape_target(&s, &gains, &Vector6::repeat(100.0), &x, &goal, 1e-3);
        assert_eq!(next.alpha_i, 1.0);
        assert_relative_eq!(shaped.translation.vector, Vector3::new(0.2, 0.0, 0.0), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn tanks_stay_within_limits(
            steps in proptest::collection::vec((-50.0f64..50.0, -2.0f64..2.0, -0.5f64..0.5), 1..300),
            e0 in 0.0f64..1.0,
        ) {
            let gains = UficGains { e_max: 1.0, ..pressing_gains() };
            let mut s = UficState::new(&gains);
            s.e_f = e0;
            s.e_i = e0;
            let goal = Pose::translation(0.0, 0.0, 0.0);
            for (fz, vz, z) in steps {
                let mut x = at(0.0, 0.0, z);
                x.twist = Twist::new(vz, 0.0, vz, 0.0, 0.0, 0.0);
                let measured = Wrench::new(0.0, 0.0, fz, 0.0, 0.0, 0.0);
                let (_, next) = ufic_wrench(&s, &gains, &measured, &x, 1e-3);
                let (_, next) = shape_target(&next, &gains, &Vector6::repeat(100.0), &x, &goal, 1e-3);
                prop_assert!(next.tanks_within(&gains));
                prop_assert!((0.0..=1.0).contains(&next.gamma_f));
                prop_assert!((0.0..=1.0).contains(&next.alpha_f));
                prop_assert!((0.0..=1.0).contains(&next.alpha_i));
                s = next;
            }
        }

        #[test]
        fn gated_force_is_monotone_in_alpha(a in 0.0f64..1.0, b in 0.0f64..1.0, f in -100.0f64..100.0) {
            let force = Wrench::new(0.0, 0.0, f, 0.0, 0.0, 0.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(shaped_force(0.0, lo, &force).norm() <= shaped_force(0.0, hi, &force).norm());
        }
    }
}
