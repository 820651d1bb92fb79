//! The multimode controller: runs the active controllets once per tick,
//! arbitrates robot ownership and applies switch requests at tick
//! boundaries.
//!
//! A switch is two-phase. Requests that arrive while tick `k` is being
//! served are drained at the boundary of tick `k + 1`, validated, and the
//! incoming controllets are activated (they latch their hold poses) while
//! the outgoing set still computes tick `k + 1`. The new set computes from
//! tick `k + 2` on, so every robot gets exactly one command per tick and the
//! switch latency is two ticks. A request for the set that is already
//! active is a no-op acknowledged after one tick.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam::queue::ArrayQueue;

use crate::bus::{CommandSlot, Flags, RobotBus, RobotId};
use crate::controllet::{build, compose_command, ControlOutput, Controllet, ControlletDescriptor, TorqueTerms};
use crate::error::{Error, Result};

/// Maximum number of registered controllets (one bit each in a `u128`).
pub const MAX_CONTROLLETS: usize = 128;
const MAILBOX_CAPACITY: usize = 256;
const RECORD_CAPACITY: usize = 4096;

/// A set of registered controllets, by registry index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ControlletSet(pub u128);

impl ControlletSet {
    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    pub fn insert(&mut self, index: usize) {
        self.0 |= 1 << index;
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_CONTROLLETS).filter(move |&i| self.contains(i))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwitchOutcome {
    Accepted,
    /// The requested set was already active.
    NoOp,
    /// Claims overlap: `(robot, first controllet, second controllet)`.
    Conflict(Vec<(String, String, String)>),
    /// A newer request arrived before this one took effect.
    Superseded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRecord {
    pub id: u64,
    /// Last completed tick when the request was received.
    pub request_tick: u64,
    pub outcome: SwitchOutcome,
    /// First tick computed by the requested set.
    pub first_compute_tick: Option<u64>,
    pub latency_ticks: Option<u64>,
    /// Wall-clock time from submission to the first compute.
    pub wall_latency: Option<Duration>,
}

impl SwitchRecord {
    pub fn accepted(&self) -> bool {
        matches!(self.outcome, SwitchOutcome::Accepted | SwitchOutcome::NoOp)
    }

    /// Latency in simulated milliseconds for a tick of `dt` seconds.
    pub fn latency_ms(&self, dt: f64) -> Option<f64> {
        self.latency_ticks.map(|t| t as f64 * dt * 1e3)
    }
}

#[derive(Debug)]
enum Request {
    Switch { id: u64, set: ControlletSet, submitted: Instant },
    SetParam { id: u64, controllet: usize, key: String, value: f64 },
    Stop { id: u64 },
}

/// Reply to a mailbox request, delivered once the request took effect.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Switch(SwitchRecord),
    Param { id: u64, result: std::result::Result<(), String> },
    Stopped { id: u64 },
}

/// Thread-safe handle for submitting requests to a running controller.
#[derive(Clone)]
pub struct ControlHandle {
    names: Arc<Vec<String>>,
    inbox: Arc<ArrayQueue<Request>>,
    outbox: Arc<ArrayQueue<Response>>,
    next_id: Arc<AtomicU64>,
}

impl ControlHandle {
    fn resolve(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::SwitchRejected(format!("unknown controllet `{name}`")))
    }

    fn push(&self, request: Request) -> Result<()> {
        self.inbox.push(request).map_err(|_| Error::SwitchRejected("mailbox full".into()))
    }

    /// Queues a switch to exactly the named controllets. Returns the
    /// request id; unknown names are rejected immediately.
    pub fn request_switch<S: AsRef<str>>(&self, names: &[S]) -> Result<u64> {
        let mut set = ControlletSet::default();
        for n in names {
            set.insert(self.resolve(n.as_ref())?);
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.push(Request::Switch { id, set, submitted: Instant::now() })?;
        Ok(id)
    }

    pub fn set_param(&self, controllet: &str, key: &str, value: f64) -> Result<u64> {
        let controllet = self.resolve(controllet)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.push(Request::SetParam { id, controllet, key: key.to_string(), value })?;
        Ok(id)
    }

    pub fn stop(&self) -> Result<u64> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.push(Request::Stop { id })?;
        Ok(id)
    }

    pub fn poll_response(&self) -> Option<Response> {
        self.outbox.pop()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    id: u64,
    set: ControlletSet,
    request_tick: u64,
    submitted: Instant,
}

pub struct MultimodeController {
    controllets: Vec<Box<dyn Controllet>>,
    names: Arc<Vec<String>>,
    robot_names: Vec<String>,
    active: ControlletSet,
    owner: Vec<Option<usize>>,
    /// Scratch for claim checks, sized once so switches stay off the heap.
    claims: Vec<Option<usize>>,
    pending: Option<Pending>,
    inbox: Arc<ArrayQueue<Request>>,
    outbox: Arc<ArrayQueue<Response>>,
    next_id: Arc<AtomicU64>,
    outputs: Vec<ControlOutput>,
    records: Vec<SwitchRecord>,
    started: bool,
    last_tick: Option<u64>,
    stop_requested: bool,
    faults: Vec<u64>,
    ownership_violations: u64,
}

/// Builds the controllets and validates the initial active set.
pub fn register_controllets(
    descriptors: Vec<ControlletDescriptor>,
    initial: &[&str],
    robot_names: &[String],
) -> Result<MultimodeController> {
    if descriptors.len() > MAX_CONTROLLETS {
        return Err(Error::Registry(format!("at most {MAX_CONTROLLETS} controllets are supported")));
    }
    let mut problems = Vec::new();
    for (i, d) in descriptors.iter().enumerate() {
        if descriptors[..i].iter().any(|o| o.name == d.name) {
            problems.push(format!("duplicate controllet name `{}`", d.name));
        }
        if let Some(r) = d.robots.iter().find(|&&r| r >= robot_names.len()) {
            problems.push(format!("controllet `{}` claims unknown robot {r}", d.name));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Registry(problems.join("; ")));
    }
    let names: Vec<String> = descriptors.iter().map(|d| d.name.clone()).collect();
    let controllets = descriptors.into_iter().map(build).collect::<Result<Vec<_>>>()?;

    let mut active = ControlletSet::default();
    for n in initial {
        match names.iter().position(|x| x == n) {
            Some(i) => active.insert(i),
            None => return Err(Error::Registry(format!("initial controllet `{n}` is not registered"))),
        }
    }
    let mut mc = MultimodeController {
        controllets,
        names: Arc::new(names),
        robot_names: robot_names.to_vec(),
        active: ControlletSet::default(),
        owner: vec![None; robot_names.len()],
        claims: vec![None; robot_names.len()],
        pending: None,
        inbox: Arc::new(ArrayQueue::new(MAILBOX_CAPACITY)),
        outbox: Arc::new(ArrayQueue::new(MAILBOX_CAPACITY)),
        next_id: Arc::new(AtomicU64::new(1)),
        outputs: vec![ControlOutput::default(); robot_names.len()],
        records: Vec::with_capacity(RECORD_CAPACITY),
        started: false,
        last_tick: None,
        stop_requested: false,
        faults: vec![0; robot_names.len()],
        ownership_violations: 0,
    };
    let conflicts = mc.conflicts(active);
    if !conflicts.is_empty() {
        let text: Vec<String> = conflicts.iter().map(|(r, a, b)| format!("{r}: {a}/{b}")).collect();
        return Err(Error::Registry(format!("overlapping initial claims ({})", text.join(", "))));
    }
    mc.active = active;
    mc.owner = mc.ownership(active);
    Ok(mc)
}

impl std::fmt::Debug for MultimodeController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultimodeController")
            .field("controllets", &self.names)
            .field("active", &self.active)
            .field("owner", &self.owner)
            .finish()
    }
}

impl MultimodeController {
    pub fn handle(&self) -> ControlHandle {
        ControlHandle {
            names: Arc::clone(&self.names),
            inbox: Arc::clone(&self.inbox),
            outbox: Arc::clone(&self.outbox),
            next_id: Arc::clone(&self.next_id),
        }
    }

    pub fn len(&self) -> usize {
        self.controllets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controllets.is_empty()
    }

    pub fn active(&self) -> ControlletSet {
        self.active
    }

    pub fn active_names(&self) -> Vec<&str> {
        self.active.iter().map(|i| self.names[i].as_str()).collect()
    }

    /// Owning controllet per robot.
    pub fn ownership_table(&self) -> &[Option<usize>] {
        &self.owner
    }

    pub fn controllet_name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn controllet(&self, index: usize) -> &dyn Controllet {
        self.controllets[index].as_ref()
    }

    /// Sets a parameter directly, before the controller starts or between
    /// ticks on the owning thread.
    pub fn configure(&mut self, controllet: &str, key: &str, value: f64) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == controllet)
            .ok_or_else(|| Error::Config(format!("unknown controllet `{controllet}`")))?;
        self.controllets[i].set_param(key, value)
    }

    pub fn records(&self) -> &[SwitchRecord] {
        &self.records
    }

    pub fn stop_requested(&self) -> bool {
        self.stop_requested
    }

    pub fn fault_count(&self, robot: RobotId) -> u64 {
        self.faults[robot]
    }

    pub fn ownership_violations(&self) -> u64 {
        self.ownership_violations
    }

    /// Overlapping claims of `set`; allocates only when there are some.
    fn conflicts(&mut self, set: ControlletSet) -> Vec<(String, String, String)> {
        self.claims.fill(None);
        let mut out = Vec::new();
        for i in set.iter() {
            for &r in self.controllets[i].robots() {
                match self.claims[r] {
                    Some(j) => out.push((self.robot_names[r].clone(), self.names[j].clone(), self.names[i].clone())),
                    None => self.claims[r] = Some(i),
                }
            }
        }
        out
    }

    fn ownership(&self, set: ControlletSet) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.robot_names.len()];
        for i in set.iter() {
            for &r in self.controllets[i].robots() {
                owner[r] = Some(i);
            }
        }
        owner
    }

    fn finish_record(&mut self, record: SwitchRecord) {
        if self.records.len() < RECORD_CAPACITY {
            self.records.push(record.clone());
        }
        let _ = self.outbox.push(Response::Switch(record));
    }

    /// Boundary work before compute: apply a validated switch, then drain
    /// the mailbox.
    fn boundary(&mut self, bus: &RobotBus, tick: u64) {
        if let Some(p) = self.pending.take() {
            self.active = p.set;
            for (r, slot) in self.owner.iter_mut().enumerate() {
                *slot = None;
                for i in p.set.iter() {
                    if self.controllets[i].robots().contains(&r) {
                        *slot = Some(i);
                    }
                }
            }
            let record = SwitchRecord {
                id: p.id,
                request_tick: p.request_tick,
                outcome: SwitchOutcome::Accepted,
                first_compute_tick: Some(tick),
                latency_ticks: Some(tick - p.request_tick),
                wall_latency: Some(p.submitted.elapsed()),
            };
            self.finish_record(record);
        }

        let request_tick = self.last_tick.unwrap_or(tick);
        while let Some(request) = self.inbox.pop() {
            match request {
                Request::Switch { id, set, submitted } => {
                    if set == self.active && self.pending.is_none() {
                        self.finish_record(SwitchRecord {
                            id,
                            request_tick,
                            outcome: SwitchOutcome::NoOp,
                            first_compute_tick: Some(tick),
                            latency_ticks: Some(tick - request_tick),
                            wall_latency: Some(submitted.elapsed()),
                        });
                        continue;
                    }
                    let conflicts = self.conflicts(set);
                    if !conflicts.is_empty() {
                        self.finish_record(SwitchRecord {
                            id,
                            request_tick,
                            outcome: SwitchOutcome::Conflict(conflicts),
                            first_compute_tick: None,
                            latency_ticks: None,
                            wall_latency: None,
                        });
                        continue;
                    }
                    if let Some(old) = self.pending.take() {
                        self.finish_record(SwitchRecord {
                            id: old.id,
                            request_tick: old.request_tick,
                            outcome: SwitchOutcome::Superseded,
                            first_compute_tick: None,
                            latency_ticks: None,
                            wall_latency: None,
                        });
                    }
                    // incoming controllets prepare while the current set
                    // still serves this tick
                    for i in set.iter() {
                        if !self.active.contains(i) {
                            self.controllets[i].activate(bus);
                        }
                    }
                    self.pending = Some(Pending { id, set, request_tick, submitted });
                }
                Request::SetParam { id, controllet, key, value } => {
                    let result = self.controllets[controllet].set_param(&key, value).map_err(|e| e.to_string());
                    let _ = self.outbox.push(Response::Param { id, result });
                }
                Request::Stop { id } => {
                    self.stop_requested = true;
                    let _ = self.outbox.push(Response::Stopped { id });
                }
            }
        }
    }

    /// Serves one tick: boundary work, one compute per active controllet,
    /// then a stamped command for every robot. The bus must already hold
    /// the snapshots for `tick`.
    pub fn tick(&mut self, bus: &mut RobotBus) {
        let tick = bus.tick();
        if !self.started {
            for i in self.active.iter() {
                self.controllets[i].activate(bus);
            }
            self.started = true;
        }
        self.boundary(bus, tick);

        for out in self.outputs.iter_mut() {
            *out = ControlOutput::default();
        }
        let mut faulted: u128 = 0;
        for i in self.active.iter() {
            let controllet = &mut self.controllets[i];
            let outputs = &mut self.outputs;
            let bus_ref: &RobotBus = bus;
            let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| controllet.compute(bus_ref, outputs)));
            if run.is_err() {
                faulted |= 1 << i;
            }
        }

        let mut seen: u64 = 0;
        for r in 0..bus.len() {
            let snap = bus.snapshot(r);
            let gravity = snap.dynamics.gravity;
            let limits = bus.model(r).torque_limits();
            let slot = match self.owner[r] {
                Some(i) => {
                    if r < 64 {
                        if seen >> r & 1 == 1 {
                            self.ownership_violations += 1;
                        }
                        seen |= 1 << r;
                    }
                    let out = self.outputs[r];
                    let composed = compose_command(&out.terms, &limits);
                    if composed.fault || faulted >> i & 1 == 1 {
                        self.faults[r] += 1;
                        fallback_slot(gravity, &limits, tick, Flags::CONTROLLET_FAULT | Flags::GRAVITY_FALLBACK)
                    } else {
                        let mut flags = out.flags;
                        if composed.saturated != 0 {
                            flags.insert(Flags::SATURATED);
                            flags.insert(Flags::saturated_joints(composed.saturated));
                        }
                        CommandSlot {
                            torque: composed.torque,
                            terms: out.terms,
                            stamp: Some(tick),
                            owner: Some(i),
                            flags,
                        }
                    }
                }
                None => fallback_slot(gravity, &limits, tick, Flags::default()),
            };
            *bus.command_mut(r) = slot;
        }
        self.last_tick = Some(tick);
    }
}

/// Gravity compensation `τ = g(q)` for unowned or faulted robots.
fn fallback_slot(
    gravity: crate::math::JointVector,
    limits: &crate::math::JointVector,
    tick: u64,
    flags: Flags,
) -> CommandSlot {
    let terms = TorqueTerms::gravity_only(gravity);
    let composed = compose_command(&terms, limits);
    CommandSlot { torque: composed.torque, terms, stamp: Some(tick), owner: None, flags }
}
