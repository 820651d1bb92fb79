//! Scenario configuration: a TOML document with a strict schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controllet::{ControlletDescriptor, ControlletKind};
use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::plant::{ContactParams, LinkFactors, NoiseConfig, TaskId, TaskParams};

/// Benchmark condition: which features run on the dual-arm controllet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Plain dual-arm Cartesian impedance.
    NoFeatures,
    CollisionAvoidance,
    Manipulability,
    Both,
    /// Coupled dual-arm impedance with manipulability.
    CoupledManipulability,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::NoFeatures,
        Condition::CollisionAvoidance,
        Condition::Manipulability,
        Condition::Both,
        Condition::CoupledManipulability,
    ];

    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text.to_ascii_uppercase().as_str() {
            "NF" => Condition::NoFeatures,
            "CA" => Condition::CollisionAvoidance,
            "MA" => Condition::Manipulability,
            "CA-MA" => Condition::Both,
            "C-MA" => Condition::CoupledManipulability,
            _ => return Err(Error::Config(format!("unknown condition `{text}`, expected NF, CA, MA, CA-MA or C-MA"))),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::NoFeatures => "NF",
            Condition::CollisionAvoidance => "CA",
            Condition::Manipulability => "MA",
            Condition::Both => "CA-MA",
            Condition::CoupledManipulability => "C-MA",
        }
    }

    /// Controllet exercised by this condition on robots 0 and 1.
    pub fn descriptor(self) -> ControlletDescriptor {
        let (kind, ca, ma) = match self {
            Condition::NoFeatures => (ControlletKind::CartesianImpedance, false, false),
            Condition::CollisionAvoidance => (ControlletKind::CartesianImpedance, true, false),
            Condition::Manipulability => (ControlletKind::CartesianImpedance, false, true),
            Condition::Both => (ControlletKind::CartesianImpedance, true, true),
            Condition::CoupledManipulability => (ControlletKind::CoupledCartesianImpedance, false, true),
        };
        ControlletDescriptor::new(self.label(), kind, vec![0, 1]).with_features(ca, ma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    /// Ticks run back to back; time is the tick counter.
    Virtual,
    /// Ticks are paced at the control period and the plant runs on its own
    /// thread.
    WallClock,
}

impl TimeMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "virtual" => Ok(TimeMode::Virtual),
            "wall-clock" | "wall_clock" | "wallclock" => Ok(TimeMode::WallClock),
            _ => Err(Error::Config(format!("unknown time mode `{text}`, expected virtual or wall-clock"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeMode::Virtual => "virtual",
            TimeMode::WallClock => "wall-clock",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Task(TaskId),
    Benchmark(Condition),
}

/// Controllet plus parameter overrides applied before the first tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlletEntry {
    pub descriptor: ControlletDescriptor,
    pub params: Vec<(String, f64)>,
}

/// Everything that distinguishes one plant from another.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSettings {
    pub dt: f64,
    pub contact: ContactParams,
    pub noise: NoiseConfig,
    pub delay: f64,
    /// One entry per link, or empty.
    pub perturbation: Vec<LinkFactors>,
}

impl PlantSettings {
    /// Noise-free, undelayed, unperturbed.
    pub fn clean() -> Self {
        Self {
            dt: 1e-3,
            contact: ContactParams::default(),
            noise: NoiseConfig::none(),
            delay: 0.0,
            perturbation: Vec::new(),
        }
    }

    /// Default stand-in for the physical robot: mass ×1.15 on links 4–7,
    /// default sensor noise and half a tick of command delay.
    pub fn reference(dof: usize) -> Self {
        let perturbation =
            (0..dof).map(|i| if i >= 3 { LinkFactors::mass(1.15) } else { LinkFactors::default() }).collect();
        Self { dt: 1e-3, contact: ContactParams::default(), noise: NoiseConfig::default(), delay: 0.5, perturbation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationSettings {
    pub regularization: f64,
    /// Excitation length (s).
    pub duration: f64,
    /// Low-pass cutoff for the acceleration estimate (Hz).
    pub cutoff: f64,
    /// Peak-to-peak excursion as a fraction of each joint range.
    pub amplitude: f64,
    /// Fraction of the excitation held out for validation.
    pub holdout: f64,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self { regularization: 1e-6, duration: 20.0, cutoff: 30.0, amplitude: 0.5, holdout: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub switch_trials: usize,
    /// Ticks between consecutive switch requests.
    pub switch_spacing: u64,
    /// Loop budgets (µs) recorded next to the measurements.
    pub budget_nf_us: f64,
    pub budget_features_us: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { switch_trials: 50, switch_spacing: 100, budget_nf_us: 100.0, budget_features_us: 250.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub model: RobotModel,
    pub model_path: Option<PathBuf>,
    pub robots: Vec<String>,
    pub controllets: Vec<ControlletEntry>,
    pub initial: Vec<String>,
    /// Simulated plant.
    pub nominal: PlantSettings,
    /// Stand-in for the physical robot.
    pub reference: PlantSettings,
    pub task: TaskParams,
    pub duration: f64,
    pub trials: usize,
    pub seed: u64,
    pub time_mode: TimeMode,
    pub output: Option<PathBuf>,
    pub identification: IdentificationSettings,
    pub bench: BenchSettings,
}

impl ScenarioConfig {
    /// Defaults for a validation task: 10 s, 5 trials.
    pub fn task(id: TaskId) -> Self {
        let model = RobotModel::default_arm();
        let robots = default_robots(id.robot_count());
        let controllets = vec![default_task_controllet(id)];
        let initial = vec![controllets[0].descriptor.name.clone()];
        Self {
            kind: ScenarioKind::Task(id),
            reference: PlantSettings::reference(model.dof()),
            model,
            model_path: None,
            robots,
            controllets,
            initial,
            nominal: PlantSettings::clean(),
            task: TaskParams::default(),
            duration: 10.0,
            trials: 5,
            seed: 1,
            time_mode: TimeMode::Virtual,
            output: None,
            identification: IdentificationSettings::default(),
            bench: BenchSettings::default(),
        }
    }

    /// Defaults for a benchmark condition: 30 s, one trial.
    pub fn benchmark(condition: Condition) -> Self {
        let mut cfg = Self::task(TaskId::BoxGrasp);
        cfg.kind = ScenarioKind::Benchmark(condition);
        cfg.controllets = vec![
            ControlletEntry { descriptor: condition.descriptor(), params: Vec::new() },
            ControlletEntry {
                descriptor: ControlletDescriptor::new("JI", ControlletKind::JointImpedance, vec![0, 1]),
                params: Vec::new(),
            },
        ];
        cfg.initial = vec![condition.label().to_string()];
        cfg.duration = 30.0;
        cfg.trials = 1;
        cfg
    }

    pub fn task_id(&self) -> TaskId {
        match self.kind {
            ScenarioKind::Task(id) => id,
            // benchmarks reuse the dual-arm geometry without the box
            ScenarioKind::Benchmark(_) => TaskId::BoxGrasp,
        }
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.nominal.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be > 0, got {}", self.duration)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let id = self.task_id();
        if self.robots.len() != id.robot_count() {
            return Err(Error::Config(format!(
                "task {} requires exactly {} robot(s), got {}",
                id.number(),
                id.robot_count(),
                self.robots.len()
            )));
        }
        for (i, r) in self.robots.iter().enumerate() {
            if self.robots[..i].contains(r) {
                return Err(Error::Config(format!("robot `{r}` listed twice")));
            }
        }
        for n in &self.initial {
            if !self.controllets.iter().any(|c| &c.descriptor.name == n) {
                return Err(Error::Config(format!("initial controllet `{n}` is not defined")));
            }
        }
        for c in &self.controllets {
            c.descriptor.validate()?;
        }
        for (label, p) in [("plant", &self.nominal), ("reference", &self.reference)] {
            if (p.dt - self.nominal.dt).abs() > 0.0 {
                return Err(Error::Config(format!("{label}.dt must equal plant.dt")));
            }
            if !p.perturbation.is_empty() && p.perturbation.len() != self.model.dof() {
                return Err(Error::Config(format!(
                    "{label}.perturbation covers {} links of {}",
                    p.perturbation.len(),
                    self.model.dof()
                )));
            }
            for f in &p.perturbation {
                for v in [f.mass, f.com, f.inertia.x, f.inertia.y, f.inertia.z] {
                    if !(0.5..=2.0).contains(&v) {
                        return Err(Error::Config(format!("{label}.perturbation factor {v} outside [0.5, 2]")));
                    }
                }
            }
            p.contact.validate()?;
        }
        let s = &self.identification;
        if !(s.regularization >= 0.0 && s.duration > 0.0 && s.cutoff > 0.0 && s.amplitude > 0.0 && s.amplitude <= 1.0) {
            return Err(Error::Config("identification settings out of range".into()));
        }
        if !(s.holdout > 0.0 && s.holdout < 1.0) {
            return Err(Error::Config("identification.holdout must lie in (0, 1)".into()));
        }
        self.model.validate()
    }

    /// Parses a scenario document. Relative model paths resolve against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve(base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Document that parses back to this configuration (model inlined by
    /// path when it came from a file).
    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig::from_config(self);
        toml::to_string_pretty(&raw).unwrap_or_default()
    }
}

pub(crate) fn default_robots(count: usize) -> Vec<String> {
    if count == 2 {
        vec!["left".into(), "right".into()]
    } else {
        vec!["arm".into()]
    }
}

/// Controllet used by each validation task when none is configured.
pub fn default_task_controllet(id: TaskId) -> ControlletEntry {
    let (name, kind, robots) = match id {
        TaskId::JointMotion => ("JI", ControlletKind::JointImpedance, vec![0]),
        TaskId::CartesianMotion => ("DC", ControlletKind::CartesianImpedance, vec![0]),
        TaskId::ForceProfile | TaskId::ForceCircle => ("UFIC", ControlletKind::Ufic, vec![0]),
        TaskId::BoxGrasp => ("CUFIC", ControlletKind::CoupledUfic, vec![0, 1]),
    };
    ControlletEntry { descriptor: ControlletDescriptor::new(name, kind, robots), params: Vec::new() }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    robots: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    controllet: Vec<RawControllet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plant: Option<RawPlant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<RawPlant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_params: Option<RawTaskParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identification: Option<RawIdentification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark: Option<RawBench>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawControllet {
    name: String,
    kind: String,
    robots: Vec<String>,
    #[serde(default)]
    collision_avoidance: bool,
    #[serde(default)]
    manipulability: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<RawNoise>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contact: Option<RawContact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<Vec<RawPerturbation>>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    #[serde(default)]
    q: f64,
    #[serde(default)]
    qd: f64,
    #[serde(default)]
    tau: f64,
    #[serde(default)]
    force: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawContact {
    stiffness: f64,
    damping: f64,
    friction: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    /// 1-based link numbers.
    links: Vec<usize>,
    #[serde(default = "one")]
    mass: f64,
    #[serde(default = "one")]
    com: f64,
    #[serde(default = "ones")]
    inertia: [f64; 3],
}

fn one() -> f64 {
    1.0
}

fn ones() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTaskParams {
    home: Option<Vec<f64>>,
    joint_amplitude: Option<Vec<f64>>,
    joint_frequency: Option<f64>,
    cartesian_amplitude: Option<[f64; 3]>,
    cartesian_frequency: Option<f64>,
    plane_height: Option<f64>,
    press_depth: Option<f64>,
    force_peak: Option<f64>,
    force_period: Option<f64>,
    contact_force: Option<f64>,
    circle_center: Option<[f64; 2]>,
    circle_radius: Option<f64>,
    circle_period: Option<f64>,
    box_center: Option<[f64; 3]>,
    box_half_extents: Option<[f64; 3]>,
    box_mass: Option<f64>,
    base_offset: Option<f64>,
    grasp_depth: Option<f64>,
    squeeze: Option<f64>,
    lift: Option<f64>,
    lift_period: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawIdentification {
    regularization: Option<f64>,
    duration: Option<f64>,
    cutoff: Option<f64>,
    amplitude: Option<f64>,
    holdout: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawBench {
    switch_trials: Option<usize>,
    switch_spacing: Option<u64>,
    budget_nf_us: Option<f64>,
    budget_features_us: Option<f64>,
}

fn joints(name: &str, v: &[f64], dof: usize) -> Result<crate::math::JointVector> {
    if v.len() != dof {
        return Err(Error::Config(format!("task_params.{name} needs {dof} values, got {}", v.len())));
    }
    Ok(crate::math::joint_vector(v))
}

impl RawPlant {
    fn apply(&self, base: &PlantSettings, dof: usize, label: &str) -> Result<PlantSettings> {
        let mut out = base.clone();
        if let Some(dt) = self.dt {
            out.dt = dt;
        }
        if let Some(d) = self.delay {
            out.delay = d;
        }
        if let Some(n) = &self.noise {
            out.noise = NoiseConfig { q: n.q, qd: n.qd, tau: n.tau, force: n.force };
        }
        if let Some(c) = &self.contact {
            out.contact = ContactParams { stiffness: c.stiffness, damping: c.damping, friction: c.friction };
        }
        if let Some(list) = &self.perturbation {
            let mut factors = vec![LinkFactors::default(); dof];
            for p in list {
                for &l in &p.links {
                    if l == 0 || l > dof {
                        return Err(Error::Config(format!("{label}.perturbation: link {l} outside 1..={dof}")));
                    }
                    factors[l - 1] = LinkFactors { mass: p.mass, com: p.com, inertia: Vector3::from(p.inertia) };
                }
            }
            out.perturbation = if factors.iter().all(LinkFactors::is_identity) { Vec::new() } else { factors };
        }
        Ok(out)
    }

    fn from_settings(p: &PlantSettings) -> Self {
        let mut groups: Vec<RawPerturbation> = Vec::new();
        for (i, f) in p.perturbation.iter().enumerate() {
            if f.is_identity() {
                continue;
            }
            let inertia: [f64; 3] = f.inertia.into();
            match groups.iter_mut().find(|g| g.mass == f.mass && g.com == f.com && g.inertia == inertia) {
                Some(g) => g.links.push(i + 1),
                None => groups.push(RawPerturbation { links: vec![i + 1], mass: f.mass, com: f.com, inertia }),
            }
        }
        RawPlant {
            dt: Some(p.dt),
            delay: Some(p.delay),
            noise: Some(RawNoise { q: p.noise.q, qd: p.noise.qd, tau: p.noise.tau, force: p.noise.force }),
            contact: Some(RawContact {
                stiffness: p.contact.stiffness,
                damping: p.contact.damping,
                friction: p.contact.friction,
            }),
            perturbation: Some(groups),
        }
    }
}

impl RawConfig {
    fn resolve(self, base_dir: Option<&Path>) -> Result<ScenarioConfig> {
        let kind = match (self.task, &self.condition) {
            (Some(t), None) => ScenarioKind::Task(TaskId::from_number(t)?),
            (None, Some(c)) => ScenarioKind::Benchmark(Condition::parse(c)?),
            (Some(_), Some(_)) => return Err(Error::Config("set either `task` or `condition`, not both".into())),
            (None, None) => {
                return Err(Error::Config("missing `task` (1-5) or `condition` (NF, CA, MA, CA-MA, C-MA)".into()))
            }
        };
        let mut cfg = match kind {
            ScenarioKind::Task(id) => ScenarioConfig::task(id),
            ScenarioKind::Benchmark(c) => ScenarioConfig::benchmark(c),
        };
        if let Some(path) = self.model {
            let full = match base_dir {
                Some(dir) if path.is_relative() => dir.join(&path),
                _ => path.clone(),
            };
            cfg.model = RobotModel::load(&full)?;
            cfg.model_path = Some(path);
            cfg.reference = PlantSettings::reference(cfg.model.dof());
        }
        let dof = cfg.model.dof();
        if let Some(r) = self.robots {
            cfg.robots = r;
        }
        if !self.controllet.is_empty() {
            cfg.controllets = self
                .controllet
                .into_iter()
                .map(|c| {
                    let kind = ControlletKind::parse(&c.kind)?;
                    let robots = c
                        .robots
                        .iter()
                        .map(|r| {
                            cfg.robots.iter().position(|x| x == r).ok_or_else(|| {
                                Error::Config(format!("controllet `{}` claims unknown robot `{r}`", c.name))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let descriptor = ControlletDescriptor::new(c.name, kind, robots)
                        .with_features(c.collision_avoidance, c.manipulability);
                    Ok(ControlletEntry { descriptor, params: c.params.into_iter().collect() })
                })
                .collect::<Result<Vec<_>>>()?;
            cfg.initial = vec![cfg.controllets[0].descriptor.name.clone()];
        }
        if let Some(i) = self.initial {
            cfg.initial = i;
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.time_mode {
            cfg.time_mode = TimeMode::parse(&m)?;
        }
        cfg.output = self.output;
        if let Some(p) = self.plant {
            cfg.nominal = p.apply(&cfg.nominal, dof, "plant")?;
            if p.dt.is_some() && cfg.reference.dt != cfg.nominal.dt {
                cfg.reference.dt = cfg.nominal.dt;
            }
        }
        if let Some(p) = self.reference {
            cfg.reference = p.apply(&cfg.reference, dof, "reference")?;
        }
        if let Some(t) = self.task_params {
            let p = &mut cfg.task;
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = t.$f { p.$f = v; })* };
            }
            set!(
                joint_frequency,
                cartesian_frequency,
                plane_height,
                press_depth,
                force_peak,
                force_period,
                contact_force,
                circle_radius,
                circle_period,
                box_mass,
                base_offset,
                grasp_depth,
                squeeze,
                lift,
                lift_period
            );
            if let Some(v) = &t.home {
                p.home = joints("home", v, dof)?;
            }
            if let Some(v) = &t.joint_amplitude {
                p.joint_amplitude = joints("joint_amplitude", v, dof)?;
            }
            if let Some(v) = t.cartesian_amplitude {
                p.cartesian_amplitude = v.into();
            }
            if let Some(v) = t.circle_center {
                p.circle_center = v.into();
            }
            if let Some(v) = t.box_center {
                p.box_center = v.into();
            }
            if let Some(v) = t.box_half_extents {
                p.box_half_extents = v.into();
            }
        }
        if let Some(s) = self.identification {
            let d = &mut cfg.identification;
            d.regularization = s.regularization.unwrap_or(d.regularization);
            d.duration = s.duration.unwrap_or(d.duration);
            d.cutoff = s.cutoff.unwrap_or(d.cutoff);
            d.amplitude = s.amplitude.unwrap_or(d.amplitude);
            d.holdout = s.holdout.unwrap_or(d.holdout);
        }
        if let Some(b) = self.benchmark {
            let d = &mut cfg.bench;
            d.switch_trials = b.switch_trials.unwrap_or(d.switch_trials);
            d.switch_spacing = b.switch_spacing.unwrap_or(d.switch_spacing);
            d.budget_nf_us = b.budget_nf_us.unwrap_or(d.budget_nf_us);
            d.budget_features_us = b.budget_features_us.unwrap_or(d.budget_features_us);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_config(cfg: &ScenarioConfig) -> Self {
        let (task, condition) = match cfg.kind {
            ScenarioKind::Task(id) => (Some(id.number()), None),
            ScenarioKind::Benchmark(c) => (None, Some(c.label().to_string())),
        };
        let p = &cfg.task;
        let v = |x: &crate::math::JointVector| x.iter().take(cfg.model.dof()).copied().collect::<Vec<_>>();
        RawConfig {
            task,
            condition,
            model: cfg.model_path.clone(),
            robots: Some(cfg.robots.clone()),
            initial: Some(cfg.initial.clone()),
            duration: Some(cfg.duration),
            trials: Some(cfg.trials),
            seed: Some(cfg.seed),
            time_mode: Some(cfg.time_mode.as_str().into()),
            output: cfg.output.clone(),
            controllet: cfg
                .controllets
                .iter()
                .map(|c| RawControllet {
                    name: c.descriptor.name.clone(),
                    kind: c.descriptor.kind.as_str().into(),
                    robots: c.descriptor.robots.iter().map(|&r| cfg.robots[r].clone()).collect(),
                    collision_avoidance: c.descriptor.features.collision_avoidance,
                    manipulability: c.descriptor.features.manipulability,
                    params: c.params.iter().cloned().collect(),
                })
                .collect(),
            plant: Some(RawPlant::from_settings(&cfg.nominal)),
            reference: Some(RawPlant::from_settings(&cfg.reference)),
            task_params: Some(RawTaskParams {
                home: Some(v(&p.home)),
                joint_amplitude: Some(v(&p.joint_amplitude)),
                joint_frequency: Some(p.joint_frequency),
                cartesian_amplitude: Some(p.cartesian_amplitude.into()),
                cartesian_frequency: Some(p.cartesian_frequency),
                plane_height: Some(p.plane_height),
                press_depth: Some(p.press_depth),
                force_peak: Some(p.force_peak),
                force_period: Some(p.force_period),
                contact_force: Some(p.contact_force),
                circle_center: Some(p.circle_center.into()),
                circle_radius: Some(p.circle_radius),
                circle_period: Some(p.circle_period),
                box_center: Some(p.box_center.into()),
                box_half_extents: Some(p.box_half_extents.into()),
                box_mass: Some(p.box_mass),
                base_offset: Some(p.base_offset),
                grasp_depth: Some(p.grasp_depth),
                squeeze: Some(p.squeeze),
                lift: Some(p.lift),
                lift_period: Some(p.lift_period),
            }),
            identification: Some(RawIdentification {
                regularization: Some(cfg.identification.regularization),
                duration: Some(cfg.identification.duration),
                cutoff: Some(cfg.identification.cutoff),
                amplitude: Some(cfg.identification.amplitude),
                holdout: Some(cfg.identification.holdout),
            }),
            benchmark: Some(RawBench {
                switch_trials: Some(cfg.bench.switch_trials),
                switch_spacing: Some(cfg.bench.switch_spacing),
                budget_nf_us: Some(cfg.bench.budget_nf_us),
                budget_features_us: Some(cfg.bench.budget_features_us),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_task_document() {
        let cfg = ScenarioConfig::from_toml_str("task = 4\nduration = 2.0\n", None).unwrap();
        assert_eq!(cfg.kind, ScenarioKind::Task(TaskId::ForceCircle));
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.ticks(), 2000);
        assert_eq!(cfg.reference.perturbation[4].mass, 1.15);
        assert_eq!(cfg.reference.perturbation[2], LinkFactors::default());
    }

    #[test]
    fn unknown_keys_are_reported_with_location() {
        let err = ScenarioConfig::from_toml_str("task = 1\n[plant]\nstep = 0.001\n", None).unwrap_err().to_string();
        assert!(err.contains("unknown field `step`"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn task_five_needs_two_robots() {
        let err = ScenarioConfig::from_toml_str("task = 5\nrobots = [\"solo\"]\n", None).unwrap_err();
        assert!(err.to_string().contains("exactly 2 robot"), "{err}");
    }

    #[test]
    fn referenced_controllets_must_exist() {
        let doc = "task = 2\ninitial = [\"missing\"]\n";
        assert!(ScenarioConfig::from_toml_str(doc, None).is_err());
        let doc = "task = 2\n[[controllet]]\nname = \"a\"\nkind = \"dc\"\nrobots = [\"nobody\"]\n";
        assert!(ScenarioConfig::from_toml_str(doc, None).unwrap_err().to_string().contains("nobody"));
    }

    #[test]
    fn perturbation_and_noise_sections() {
        let doc = r#"
task = 4
[reference]
delay = 1.0
noise = { q = 0.0, qd = 0.0, tau = 0.1, force = 0.0 }
perturbation = [{ links = [7], mass = 1.2 }]
"#;
        let cfg = ScenarioConfig::from_toml_str(doc, None).unwrap();
        assert_eq!(cfg.reference.delay, 1.0);
        assert_eq!(cfg.reference.noise.tau, 0.1);
        assert_eq!(cfg.reference.perturbation[6].mass, 1.2);
        assert!(cfg.reference.perturbation[3].is_identity());
        let bad = "task = 4\n[reference]\nperturbation = [{ links = [7], mass = 3.0 }]\n";
        assert!(ScenarioConfig::from_toml_str(bad, None).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        for cfg in [ScenarioConfig::task(TaskId::BoxGrasp), ScenarioConfig::benchmark(Condition::Both)] {
            let text = cfg.to_toml_string();
            let back = ScenarioConfig::from_toml_str(&text, None).unwrap();
            assert_eq!(back, cfg, "{text}");
        }
    }

    #[test]
    fn condition_labels() {
        for c in Condition::ALL {
            assert_eq!(Condition::parse(c.label()).unwrap(), c);
        }
        assert!(Condition::parse("XX").is_err());
    }
}
