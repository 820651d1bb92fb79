//! Simulated manipulator: integrates the rigid-body dynamics under the
//! commanded torque, adds penalty contact at the end-effector point and
//! reports noisy measurements together with their ground truth.
//!
//! A plant built with perturbed inertial parameters, noise and a command
//! delay stands in for physical hardware when measuring the gap between a
//! simulation and "the real robot".

pub mod contact;
pub mod task;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::DynamicsTerms;
use crate::error::{Error, Result};
use crate::kinematics::ChainFrames;
use crate::math::{JointVector, Wrench};
use crate::model::{LinkInertia, RobotModel};
use crate::state::JointState;

pub use contact::{BoxBody, Contact, ContactParams};
pub use task::{trajectory_source, TaskId, TaskParams, TaskReference, TaskSpec};

/// Longest supported command delay, in ticks.
pub const MAX_DELAY_TICKS: usize = 63;
/// Joint speed norm above which the integration is declared diverged.
pub const DIVERGENCE_SPEED: f64 = 50.0;

/// Standard deviations of the additive Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub q: f64,
    pub qd: f64,
    pub tau: f64,
    pub force: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { q: 1e-5, qd: 1e-3, tau: 0.05, force: 0.2 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { q: 0.0, qd: 0.0, tau: 0.0, force: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::none()
    }
}

/// Multiplicative factors on one link's mass, center of mass and the
/// diagonal of its inertia about the link frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFactors {
    pub mass: f64,
    pub com: f64,
    pub inertia: Vector3<f64>,
}

impl Default for LinkFactors {
    fn default() -> Self {
        Self { mass: 1.0, com: 1.0, inertia: Vector3::repeat(1.0) }
    }
}

impl LinkFactors {
    pub fn mass(factor: f64) -> Self {
        Self { mass: factor, ..Self::default() }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub model: RobotModel,
    /// Integrator step (s).
    pub dt: f64,
    pub contacts: Vec<Contact>,
    pub noise: NoiseConfig,
    /// Command delay in ticks; fractional values blend two lagged commands.
    pub delay: f64,
    /// Per-link factors applied to `model`; empty means none.
    pub perturbation: Vec<LinkFactors>,
    pub seed: u64,
}

impl PlantConfig {
    /// Noise-free, undelayed, unperturbed plant at 1 kHz.
    pub fn new(model: RobotModel) -> Self {
        Self {
            model,
            dt: 1e-3,
            contacts: Vec::new(),
            noise: NoiseConfig::none(),
            delay: 0.0,
            perturbation: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("integrator step must be > 0, got {}", self.dt)));
        }
        let n = &self.noise;
        if ![n.q, n.qd, n.tau, n.force].iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
        }
        if !(self.delay >= 0.0 && self.delay <= MAX_DELAY_TICKS as f64) {
            return Err(Error::Config(format!("command delay must lie in [0, {MAX_DELAY_TICKS}] ticks")));
        }
        if !self.perturbation.is_empty() && self.perturbation.len() != self.model.dof() {
            return Err(Error::Config(format!(
                "perturbation has {} entries for {} links",
                self.perturbation.len(),
                self.model.dof()
            )));
        }
        for c in &self.contacts {
            c.validate()?;
        }
        self.model.validate()
    }
}

/// Scales inertial parameters as described by [`LinkFactors`]. The mass
/// factor scales the origin inertia too, so a pure mass factor is a uniform
/// density change. Links with identity factors are copied untouched.
pub fn perturb_model(model: &RobotModel, factors: &[LinkFactors]) -> Result<RobotModel> {
    if factors.len() != model.dof() {
        return Err(Error::InvalidParameter(format!("{} factors for {} links", factors.len(), model.dof())));
    }
    let mut links = model.links.clone();
    for (i, (link, f)) in links.iter_mut().zip(factors).enumerate() {
        let all = [f.mass, f.com, f.inertia.x, f.inertia.y, f.inertia.z];
        if !all.iter().all(|v| (0.5..=2.0).contains(v)) {
            return Err(Error::InvalidParameter(format!("link {}: factors must lie in [0.5, 2.0]", i + 1)));
        }
        if f.is_identity() {
            continue;
        }
        let s = Matrix3::from_diagonal(&f.inertia.map(f64::sqrt));
        let origin = s * link.inertia_about_origin() * s * f.mass;
        let mass = link.mass * f.mass;
        let com = link.com * f.com;
        let shift = mass * (Matrix3::identity() * com.dot(&com) - com * com.transpose());
        let mut inertia = origin - shift;
        inertia = (inertia + inertia.transpose()) * 0.5;
        let scaled = LinkInertia::new(mass, com, inertia);
        scaled
            .check_physical()
            .map_err(|m| Error::InvalidParameter(format!("perturbed link {} is not physical: {m}", i + 1)))?;
        *link = scaled;
    }
    model.with_links(links)
}

/// One set of joint-side measurements.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurement {
    pub state: JointState,
    /// Joint torque acting on the links.
    pub torque: JointVector,
    /// Wrench exerted by the end effector, `J⁺ᵀ (τ − τ_model)`.
    pub wrench: Wrench,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantOutput {
    /// Index of the step that produced this output.
    pub tick: u64,
    pub measured: Measurement,
    pub truth: Measurement,
    pub fault: bool,
}

pub struct Plant {
    config: PlantConfig,
    /// Model with the perturbation applied.
    model: RobotModel,
    state: JointState,
    history: [JointVector; MAX_DELAY_TICKS + 2],
    head: usize,
    primed: bool,
    rng: ChaCha8Rng,
    tick: u64,
    fault: bool,
}

impl Plant {
    pub fn new(config: PlantConfig, q0: JointVector) -> Result<Self> {
        config.validate()?;
        let model = if config.perturbation.is_empty() {
            config.model.clone()
        } else {
            perturb_model(&config.model, &config.perturbation)?
        };
        let n = model.dof();
        let mut q = JointVector::zeros();
        for i in 0..n {
            let (lo, hi) = model.joints[i].limits.position;
            q[i] = q0[i].clamp(lo, hi);
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            model,
            state: JointState::at_rest(q),
            history: [JointVector::zeros(); MAX_DELAY_TICKS + 2],
            head: 0,
            primed: false,
            tick: 0,
            fault: false,
        })
    }

    /// A plant with the given factors applied on top of this one's
    /// configuration, starting from this plant's current state.
    pub fn perturb(&self, factors: &[LinkFactors]) -> Result<Plant> {
        let mut config = self.config.clone();
        config.model = perturb_model(&self.model, factors)?;
        config.perturbation.clear();
        let mut plant = Plant::new(config, self.state.q)?;
        plant.state = self.state;
        Ok(plant)
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// The model the plant integrates (perturbation applied).
    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    /// Ground-truth state.
    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn set_state(&mut self, state: JointState) {
        self.state = state;
    }

    pub fn is_faulted(&self) -> bool {
        self.fault
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// End-effector position and linear velocity (ground truth).
    pub fn ee_point(&self) -> (Vector3<f64>, Vector3<f64>) {
        let frames = ChainFrames::compute(&self.model, &self.state.q);
        let v = frames.jacobian().fixed_rows::<3>(0) * self.state.qd;
        (frames.ee.translation.vector, v)
    }

    fn delayed(&mut self, tau: &JointVector) -> JointVector {
        let cap = self.history.len();
        if !self.primed {
            self.history = [*tau; MAX_DELAY_TICKS + 2];
            self.primed = true;
        }
        self.head = (self.head + 1) % cap;
        self.history[self.head] = *tau;
        let whole = self.config.delay.floor() as usize;
        let frac = self.config.delay - whole as f64;
        let lag = |k: usize| self.history[(self.head + cap - k) % cap];
        if frac == 0.0 {
            lag(whole)
        } else {
            lag(whole) * (1.0 - frac) + lag(whole + 1) * frac
        }
    }

    /// Advances one step under `tau_cmd`.
    pub fn step(&mut self, tau_cmd: &JointVector) -> PlantOutput {
        self.step_with(tau_cmd, &Vector3::zeros())
    }

    /// Advances one step with an additional force acting on the
    /// end-effector point (used for contacts shared between robots).
    pub fn step_with(&mut self, tau_cmd: &JointVector, external: &Vector3<f64>) -> PlantOutput {
        let tick = self.tick;
        self.tick += 1;
        let applied = self.delayed(tau_cmd);
        let dt = self.config.dt;
        let n = self.model.dof();

        let state = self.state;
        let frames = ChainFrames::compute(&self.model, &state.q);
        let terms = DynamicsTerms::compute(&self.model, &frames, &state.qd);
        let linear = terms.jacobian.fixed_rows::<3>(0).into_owned();
        let ee = frames.ee.translation.vector;
        let v = linear * state.qd;
        let mut f = *external;
        for c in &self.config.contacts {
            f += c.force(&ee, &v);
        }

        let mut qdd = JointVector::zeros();
        let mut wrench = Wrench::zeros();
        if !self.fault {
            let rhs = applied - terms.coriolis - terms.gravity + linear.transpose() * f;
            match terms.mass.cholesky() {
                Some(chol) if tau_cmd.iter().all(|t| t.is_finite()) => qdd = chol.solve(&rhs),
                _ => self.fault = true,
            }
        }
        if !self.fault {
            let model_torque = terms.mass * qdd + terms.coriolis + terms.gravity;
            wrench = terms.jacobian_pinv.transpose() * (applied - model_torque);
            let mut qd = state.qd + qdd * dt;
            let mut q = state.q + qd * dt;
            for i in 0..n {
                let (lo, hi) = self.model.joints[i].limits.position;
                if q[i] < lo || q[i] > hi {
                    q[i] = q[i].clamp(lo, hi);
                    qd[i] = 0.0;
                }
            }
            if !qd.iter().all(|x| x.is_finite()) || qd.norm() > DIVERGENCE_SPEED {
                self.fault = true;
                log::warn!("plant diverged at step {tick}");
            } else {
                self.state = JointState { timestamp: state.timestamp + dt, q, qd, qdd: Some(qdd) };
            }
        }
        if self.fault {
            qdd = JointVector::zeros();
            wrench = Wrench::zeros();
            self.state =
                JointState { timestamp: state.timestamp + dt, q: state.q, qd: JointVector::zeros(), qdd: Some(qdd) };
        }

        let truth = Measurement { state: self.state, torque: applied, wrench };
        let measured = self.add_noise(truth, n);
        PlantOutput { tick, measured, truth, fault: self.fault }
    }

    fn add_noise(&mut self, truth: Measurement, n: usize) -> Measurement {
        let noise = self.config.noise;
        if noise.is_zero() {
            return truth;
        }
        let mut m = truth;
        let rng = &mut self.rng;
        let mut draw = |sigma: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        };
        for i in 0..n {
            m.state.q[i] += draw(noise.q);
        }
        for i in 0..n {
            m.state.qd[i] += draw(noise.qd);
        }
        for i in 0..n {
            m.torque[i] += draw(noise.tau);
        }
        for i in 0..6 {
            m.wrench[i] += draw(noise.force);
        }
        m
    }
}

/// Steps several plants whose end effectors share one free box. Contact
/// forces come from the states at the start of the step.
pub fn step_with_box(plants: &mut [Plant], body: &mut BoxBody, torques: &[JointVector], out: &mut [PlantOutput]) {
    let mut reaction = Vector3::zeros();
    for ((plant, tau), slot) in plants.iter_mut().zip(torques).zip(out.iter_mut()) {
        let (p, v) = plant.ee_point();
        let f = body.force_on_point(&p, &v);
        reaction -= f;
        *slot = plant.step_with(tau, &f);
    }
    let dt = plants.first().map_or(1e-3, |p| p.config.dt);
    body.step(&reaction, dt);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{gravity_torque, kinetic_energy, potential_energy};
    use crate::math::{joint_vector, Pose};
    use crate::model::{Joint, JointLimits};
    use nalgebra::Vector3;

    fn ready() -> JointVector {
        joint_vector(&[0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8])
    }

    #[test]
    fn gravity_compensation_holds_still() {
        let model = RobotModel::default_arm();
        let mut plant = Plant::new(PlantConfig::new(model.clone()), ready()).unwrap();
        for _ in 0..1000 {
            let g = gravity_torque(&model, &plant.state().q);
            plant.step(&g);
        }
        assert!(plant.state().qd.norm() < 1e-6, "{}", plant.state().qd.norm());
    }

    fn pendulum(length: f64, mass: f64) -> RobotModel {
        let joint = Joint {
            name: "hinge".into(),
            origin: Pose::identity(),
            axis: Vector3::y_axis(),
            limits: JointLimits { position: (-3.0, 3.0), velocity: 10.0, torque: 100.0 },
            armature: 0.0,
        };
        let link = LinkInertia::new(mass, Vector3::new(length, 0.0, 0.0), Matrix3::identity() * 1e-6);
        RobotModel {
            name: "pendulum".into(),
            base: Pose::identity(),
            joints: vec![joint],
            links: vec![link],
            end_effector: Pose::translation(length, 0.0, 0.0),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    #[test]
    fn pendulum_period_matches_small_angle_oracle() {
        let (l, m) = (0.5, 2.0);
        let model = pendulum(l, m);
        // hanging straight down is q = π/2 about +y for a link along +x
        let rest = std::f64::consts::FRAC_PI_2;
        let mut plant = Plant::new(PlantConfig::new(model), joint_vector(&[rest + 0.02])).unwrap();
        let inertia = 1e-6 + m * l * l;
        let oracle = 2.0 * std::f64::consts::PI * (inertia / (m * 9.81 * l)).sqrt();
        let mut crossings = Vec::new();
        let mut prev = plant.state().q[0] - rest;
        for k in 1..=10_000 {
            plant.step(&JointVector::zeros());
            let cur = plant.state().q[0] - rest;
            if prev > 0.0 && cur <= 0.0 {
                crossings.push(k as f64 * 1e-3 - cur / (cur - prev) * 1e-3);
            }
            prev = cur;
        }
        let periods: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = periods.iter().sum::<f64>() / periods.len() as f64;
        assert!(((mean - oracle) / oracle).abs() < 0.01, "{mean} vs {oracle}");
    }

    #[test]
    fn energy_matches_injected_work() {
        // semi-implicit Euler carries an O(dt) energy error, so the 10 s
        // budget is checked at a quarter-millisecond step
        let model = RobotModel::default_arm();
        let mut config = PlantConfig::new(model.clone());
        config.dt = 2.5e-4;
        let mut plant = Plant::new(config, ready()).unwrap();
        let energy = |s: &JointState| kinetic_energy(&model, &s.q, &s.qd) + potential_energy(&model, &s.q);
        let e0 = energy(plant.state());
        let mut work = 0.0;
        for k in 0..40_000 {
            let t = k as f64 * 2.5e-4;
            let s = *plant.state();
            let mut tau = gravity_torque(&model, &s.q) - s.qd * 2.0;
            tau[0] += 2.0 * (0.7 * t).sin();
            tau[3] += 1.5 * (1.1 * t).sin();
            let q_before = s.q;
            plant.step(&tau);
            // work along the step actually taken
            work += tau.dot(&(plant.state().q - q_before));
        }
        let gap = energy(plant.state()) - e0 - work;
        assert!(gap.abs() < 1e-3, "energy gap {gap}");
    }

    #[test]
    fn plane_contact_statics() {
        let model = RobotModel::default_arm();
        let q = ready();
        let ee = ChainFrames::compute(&model, &q).ee.translation.vector;
        let params = ContactParams { stiffness: 1e4, ..Default::default() };
        let mut config = PlantConfig::new(model.clone());
        config.contacts.push(Contact::plane(ee.z + 1e-3, params));
        let mut plant = Plant::new(config, q).unwrap();
        // hold the arm with a joint spring so the end effector settles
        let gains = crate::controllet::JointGains::default();
        let mut out = PlantOutput::default();
        for _ in 0..3000 {
            let s = *plant.state();
            let tau = gravity_torque(&model, &s.q) + gains.stiffness.component_mul(&(q - s.q))
                - gains.damping.component_mul(&s.qd);
            out = plant.step(&tau);
        }
        let depth = ee.z + 1e-3 - plant.ee_point().0.z;
        // exerted force is downward, equal to the spring force k·depth
        assert!((out.truth.wrench[2] + 1e4 * depth).abs() < 0.05, "{} vs {}", out.truth.wrench[2], depth);
        assert!(depth > 0.0 && !out.fault);
    }

    #[test]
    fn fixed_seed_is_deterministic_and_noise_is_additive() {
        let model = RobotModel::default_arm();
        let mut config = PlantConfig::new(model.clone());
        config.noise = NoiseConfig::default();
        config.seed = 7;
        let run = || {
            let mut p = Plant::new(config.clone(), ready()).unwrap();
            (0..50).map(|_| p.step(&gravity_torque(&model, &ready()))).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let quiet = {
            let mut p = Plant::new(PlantConfig::new(model.clone()), ready()).unwrap();
            (0..50).map(|_| p.step(&gravity_torque(&model, &ready()))).collect::<Vec<_>>()
        };
        for (noisy, clean) in a.iter().zip(&quiet) {
            assert_eq!(noisy.truth, clean.truth);
            assert_ne!(noisy.measured, noisy.truth);
        }
    }

    #[test]
    fn integer_delay_shifts_the_command() {
        let mut config = PlantConfig::new(RobotModel::default_arm());
        config.delay = 1.0;
        let mut plant = Plant::new(config, ready()).unwrap();
        let low = JointVector::repeat(1.0);
        let high = JointVector::repeat(3.0);
        let applied: Vec<f64> = [low, low, high, high, high].iter().map(|t| plant.step(t).truth.torque[0]).collect();
        assert_eq!(applied, vec![1.0, 1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn half_tick_delay_blends() {
        let mut config = PlantConfig::new(RobotModel::default_arm());
        config.delay = 0.5;
        let mut plant = Plant::new(config, ready()).unwrap();
        plant.step(&JointVector::repeat(1.0));
        assert_eq!(plant.step(&JointVector::repeat(3.0)).truth.torque[0], 2.0);
    }

    #[test]
    fn identity_perturbation_is_bit_identical() {
        let model = RobotModel::default_arm();
        let base = Plant::new(PlantConfig::new(model.clone()), ready()).unwrap();
        let mut same = base.perturb(&vec![LinkFactors::default(); 7]).unwrap();
        let mut base = base;
        assert_eq!(same.model(), base.model());
        for _ in 0..100 {
            assert_eq!(base.step(&JointVector::zeros()), same.step(&JointVector::zeros()));
        }
    }

    #[test]
    fn last_link_mass_scales_gravity_like_rnea_oracle() {
        let model = RobotModel::default_arm();
        let mut factors = vec![LinkFactors::default(); 7];
        factors[6] = LinkFactors::mass(1.2);
        let perturbed = perturb_model(&model, &factors).unwrap();
        let mut links = model.links.clone();
        links[6].mass *= 1.2;
        let oracle = model.with_links(links).unwrap();
        let q = JointVector::zeros();
        let (a, b) = (gravity_torque(&perturbed, &q), gravity_torque(&oracle, &q));
        assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        assert!((a - gravity_torque(&model, &q)).norm() > 1e-3);
    }

    #[test]
    fn inconsistent_com_shift_is_rejected() {
        let model = RobotModel::default_arm();
        let mut factors = vec![LinkFactors::default(); 7];
        // moving link 4's center of mass outwards without adding origin
        // inertia leaves a non-physical tensor about the new center
        factors[3] = LinkFactors { com: 2.0, ..Default::default() };
        assert!(perturb_model(&model, &factors).is_err());
        factors[3] = LinkFactors { mass: 3.0, ..Default::default() };
        assert!(perturb_model(&model, &factors).is_err());
    }

    #[test]
    fn divergence_faults_and_freezes() {
        let model = RobotModel::default_arm();
        let mut plant = Plant::new(PlantConfig::new(model), ready()).unwrap();
        let mut out = PlantOutput::default();
        for _ in 0..200 {
            out = plant.step(&JointVector::repeat(1e4));
            if out.fault {
                break;
            }
        }
        assert!(out.fault);
        let q = plant.state().q;
        let later = plant.step(&JointVector::zeros());
        assert!(later.fault);
        assert_eq!(later.truth.state.q, q);
        assert_eq!(later.truth.state.qd, JointVector::zeros());
    }
}
