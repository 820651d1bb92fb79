//! Per-tick run traces and their CSV form.
//!
//! Columns are `tick,time` followed, for each robot `r`, by `r.q{i}`,
//! `r.qd{i}`, `r.tau_cmd{i}`, `r.tau_meas{i}`, `r.tau_applied{i}`,
//! `r.f{0..6}`, `r.x{0..7}` (position then quaternion w,x,y,z), the five
//! torque terms `r.task{i}`, `r.null{i}`, `r.cor{i}`, `r.ca{i}`, `r.ma{i}`
//! and `r.flags`. Floats are written in shortest round-trip form so a trace
//! read back is bit-identical.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};

use crate::bus::Flags;
use crate::controllet::TorqueTerms;
use crate::error::{Error, Result};
use crate::math::{JointVector, Pose, Wrench};

/// One robot at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceSample {
    pub q: JointVector,
    pub qd: JointVector,
    pub tau_cmd: JointVector,
    pub tau_meas: JointVector,
    /// Torque the plant actually applied (after the command delay).
    pub tau_applied: JointVector,
    pub wrench: Wrench,
    pub pose: Pose,
    pub terms: TorqueTerms,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub names: Vec<String>,
    pub dofs: Vec<usize>,
    pub ticks: Vec<u64>,
    /// `samples[robot][row]`.
    pub samples: Vec<Vec<TraceSample>>,
}

const JOINT_GROUPS: [&str; 10] = ["q", "qd", "tau_cmd", "tau_meas", "tau_applied", "task", "null", "cor", "ca", "ma"];

impl Trace {
    /// Empty trace with room for `capacity` rows, so recording does not
    /// allocate until that many ticks.
    pub fn with_capacity(names: Vec<String>, dofs: Vec<usize>, dt: f64, capacity: usize) -> Self {
        let samples = names.iter().map(|_| Vec::with_capacity(capacity)).collect();
        Self { dt, names, dofs, ticks: Vec::with_capacity(capacity), samples }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn robot_count(&self) -> usize {
        self.names.len()
    }

    pub fn robot_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn time(&self, row: usize) -> f64 {
        self.ticks[row] as f64 * self.dt
    }

    pub fn push_tick(&mut self, tick: u64) {
        self.ticks.push(tick);
    }

    pub fn push_sample(&mut self, robot: usize, sample: TraceSample) {
        self.samples[robot].push(sample);
    }

    /// True when any sample carries the plant fault flag.
    pub fn has_fault(&self) -> bool {
        self.samples.iter().flatten().any(|s| s.flags.contains(Flags::PLANT_FAULT))
    }

    /// Rows reordered by tick (stable for equal ticks).
    pub fn sorted(&self) -> Trace {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ticks[i]);
        Trace {
            dt: self.dt,
            names: self.names.clone(),
            dofs: self.dofs.clone(),
            ticks: order.iter().map(|&i| self.ticks[i]).collect(),
            samples: self.samples.iter().map(|s| order.iter().map(|&i| s[i]).collect()).collect(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["tick".to_string(), "time".to_string()];
        for (name, &n) in self.names.iter().zip(&self.dofs) {
            for g in &JOINT_GROUPS[..5] {
                h.extend((0..n).map(|i| format!("{name}.{g}{i}")));
            }
            h.extend((0..6).map(|i| format!("{name}.f{i}")));
            h.extend((0..7).map(|i| format!("{name}.x{i}")));
            for g in &JOINT_GROUPS[5..] {
                h.extend((0..n).map(|i| format!("{name}.{g}{i}")));
            }
            h.push(format!("{name}.flags"));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let mut record: Vec<String> = Vec::new();
        for row in 0..self.len() {
            record.clear();
            record.push(self.ticks[row].to_string());
            record.push(float(self.time(row)));
            for (r, &n) in self.dofs.iter().enumerate() {
                let s = &self.samples[r][row];
                for v in [&s.q, &s.qd, &s.tau_cmd, &s.tau_meas, &s.tau_applied] {
                    record.extend(v.iter().take(n).map(|x| float(*x)));
                }
                record.extend(s.wrench.iter().map(|x| float(*x)));
                let t = s.pose.translation.vector;
                let q = s.pose.rotation.quaternion();
                record.extend([t.x, t.y, t.z, q.w, q.i, q.j, q.k].iter().map(|x| float(*x)));
                let terms = &s.terms;
                for v in [&terms.task, &terms.null, &terms.coriolis, &terms.collision, &terms.manipulability] {
                    record.extend(v.iter().take(n).map(|x| float(*x)));
                }
                record.push(s.flags.0.to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("trace", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "tick" || header[1] != "time" {
            return Err(Error::TraceFormat("header must start with tick,time".into()));
        }
        let (names, dofs) = parse_layout(&header[2..])?;
        let mut trace = Trace::with_capacity(names, dofs, 0.0, 0);
        if trace.header() != header {
            return Err(Error::TraceFormat("columns are not in the expected order".into()));
        }
        let mut times = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let mut fields = rec.iter();
            let mut next = |what: &str| -> Result<f64> {
                let text =
                    fields.next().ok_or_else(|| Error::TraceFormat(format!("row {}: missing {what}", line + 1)))?;
                text.parse::<f64>().map_err(|_| Error::TraceFormat(format!("row {}: bad {what} `{text}`", line + 1)))
            };
            let tick = next("tick")?;
            if tick < 0.0 || tick.fract() != 0.0 {
                return Err(Error::TraceFormat(format!("row {}: tick must be a non-negative integer", line + 1)));
            }
            trace.ticks.push(tick as u64);
            times.push(next("time")?);
            for r in 0..trace.names.len() {
                let n = trace.dofs[r];
                let joint = |next: &mut dyn FnMut(&str) -> Result<f64>| -> Result<JointVector> {
                    let mut v = JointVector::zeros();
                    for i in 0..n {
                        v[i] = next("joint value")?;
                    }
                    Ok(v)
                };
                let mut s = TraceSample {
                    q: joint(&mut next)?,
                    qd: joint(&mut next)?,
                    tau_cmd: joint(&mut next)?,
                    tau_meas: joint(&mut next)?,
                    tau_applied: joint(&mut next)?,
                    ..TraceSample::default()
                };
                for i in 0..6 {
                    s.wrench[i] = next("wrench")?;
                }
                let mut x = [0.0; 7];
                for v in x.iter_mut() {
                    *v = next("pose")?;
                }
                let rot = UnitQuaternion::new_unchecked(Quaternion::new(x[3], x[4], x[5], x[6]));
                s.pose = Pose::from_parts(Translation3::new(x[0], x[1], x[2]), rot);
                s.terms = TorqueTerms {
                    task: joint(&mut next)?,
                    null: joint(&mut next)?,
                    coriolis: joint(&mut next)?,
                    collision: joint(&mut next)?,
                    manipulability: joint(&mut next)?,
                };
                let flags = next("flags")?;
                s.flags = Flags(flags as u32);
                trace.samples[r].push(s);
            }
        }
        trace.dt = infer_dt(&trace.ticks, &times);
        Ok(trace)
    }
}

fn float(x: f64) -> String {
    // `{:?}` is the shortest representation that parses back exactly
    format!("{x:?}")
}

fn infer_dt(ticks: &[u64], times: &[f64]) -> f64 {
    ticks.iter().zip(times).find(|(k, _)| **k > 0).map(|(k, t)| t / *k as f64).unwrap_or(1e-3)
}

/// Robot names and joint counts from the per-robot columns.
fn parse_layout(columns: &[String]) -> Result<(Vec<String>, Vec<usize>)> {
    let mut names = Vec::new();
    let mut dofs = Vec::new();
    let mut rest = columns;
    while !rest.is_empty() {
        let (name, _) = rest[0]
            .split_once('.')
            .ok_or_else(|| Error::TraceFormat(format!("column `{}` lacks a robot prefix", rest[0])))?;
        let prefix = format!("{name}.q");
        let n = rest.iter().take_while(|c| c.strip_prefix(&prefix).is_some_and(|i| i.parse::<usize>().is_ok())).count();
        if n == 0 || n > crate::math::MAX_DOF {
            return Err(Error::TraceFormat(format!("robot `{name}` has {n} joint columns")));
        }
        let width = 10 * n + 6 + 7 + 1;
        if rest.len() < width {
            return Err(Error::TraceFormat(format!("robot `{name}`: missing columns")));
        }
        names.push(name.to_string());
        dofs.push(n);
        rest = &rest[width..];
    }
    if names.is_empty() {
        return Err(Error::TraceFormat("no robot columns".into()));
    }
    Ok((names, dofs))
}
