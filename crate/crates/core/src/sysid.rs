//! Inertial parameter identification.
//!
//! Joint torques are linear in ten parameters per link: mass, first moment
//! `m·c` and the six unique entries of the inertia about the link frame
//! origin, all in link coordinates. Stacking the regressor over an
//! excitation trajectory and solving a Tikhonov-regularized least-squares
//! problem around a prior yields parameters that are then projected back to
//! physical consistency.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::ChainFrames;
use crate::math::{skew, JointVector, MAX_DOF};
use crate::model::{LinkInertia, RobotModel};
use crate::state::JointState;
use crate::trace::Trace;

pub const PARAMS_PER_LINK: usize = 10;
/// Lower bound on an identified link mass (kg).
pub const MIN_MASS: f64 = 1e-3;
/// Lower bound on a principal moment about the COM after projection.
pub const MIN_MOMENT: f64 = 1e-6;
/// Condition number above which the identifiable block is reported as
/// poorly conditioned.
pub const CONDITION_WARNING: f64 = 1e8;

pub type RegressorRow = SMatrix<f64, MAX_DOF, { MAX_DOF * PARAMS_PER_LINK }>;

/// `[m, m·cx, m·cy, m·cz, Ixx, Ixy, Ixz, Iyy, Iyz, Izz]` per link, inertia
/// about the link frame origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub DVector<f64>);

impl ParameterVector {
    pub fn from_model(model: &RobotModel) -> Self {
        let mut v = DVector::zeros(model.dof() * PARAMS_PER_LINK);
        for (i, link) in model.links.iter().enumerate() {
            v.rows_mut(i * PARAMS_PER_LINK, PARAMS_PER_LINK).copy_from_slice(&link_params(link));
        }
        Self(v)
    }

    pub fn links(&self) -> usize {
        self.0.len() / PARAMS_PER_LINK
    }

    pub fn link(&self, i: usize) -> [f64; PARAMS_PER_LINK] {
        let mut out = [0.0; PARAMS_PER_LINK];
        out.copy_from_slice(self.0.rows(i * PARAMS_PER_LINK, PARAMS_PER_LINK).as_slice());
        out
    }

    pub fn names(links: usize) -> Vec<String> {
        const FIELDS: [&str; PARAMS_PER_LINK] = ["m", "mcx", "mcy", "mcz", "ixx", "ixy", "ixz", "iyy", "iyz", "izz"];
        (0..links).flat_map(|i| FIELDS.iter().map(move |f| format!("link{}.{f}", i + 1))).collect()
    }
}

fn link_params(link: &LinkInertia) -> [f64; PARAMS_PER_LINK] {
    let h = link.com * link.mass;
    let i = link.inertia_about_origin();
    [link.mass, h.x, h.y, h.z, i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]]
}

fn inertia_from(p: &[f64]) -> Matrix3<f64> {
    Matrix3::new(p[4], p[5], p[6], p[5], p[7], p[8], p[6], p[8], p[9])
}

/// Link inertia from ten parameters, without physical checks.
fn link_from_params(p: &[f64]) -> LinkInertia {
    let m = p[0];
    let com = Vector3::new(p[1], p[2], p[3]) / m;
    let origin = inertia_from(p);
    let inertia = origin - m * (Matrix3::identity() * com.dot(&com) - com * com.transpose());
    LinkInertia::new(m, com, (inertia + inertia.transpose()) * 0.5)
}

/// `I ω` as a linear map of the six unique inertia entries.
fn inertia_map(w: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    SMatrix::<f64, 3, 6>::new(
        w.x, w.y, w.z, 0.0, 0.0, 0.0, //
        0.0, w.x, 0.0, w.y, w.z, 0.0, //
        0.0, 0.0, w.x, 0.0, w.y, w.z,
    )
}

/// Regressor `Y` with `τ = Y π` for the model's kinematics. Rows and
/// parameter columns beyond the model's size are zero.
pub fn build_regressor(model: &RobotModel, q: &JointVector, qd: &JointVector, qdd: &JointVector) -> RegressorRow {
    let n = model.dof();
    let frames = ChainFrames::compute(model, q);
    let mut y = RegressorRow::zeros();
    // per-link force and moment (about the link origin) maps, 3×10 each
    let mut force = [SMatrix::<f64, 3, PARAMS_PER_LINK>::zeros(); MAX_DOF];
    let mut moment = [SMatrix::<f64, 3, PARAMS_PER_LINK>::zeros(); MAX_DOF];

    let mut w_prev = Vector3::zeros();
    let mut wd_prev = Vector3::zeros();
    let mut a_prev = -model.gravity;
    let mut o_prev = model.base.translation.vector;
    for i in 0..n {
        let o = frames.origins[i];
        let z = frames.axes[i];
        let d = o - o_prev;
        let a = a_prev + wd_prev.cross(&d) + w_prev.cross(&w_prev.cross(&d));
        let w = w_prev + z * qd[i];
        let wd = wd_prev + z * qdd[i] + w_prev.cross(&z) * qd[i];

        let rot = *frames.links[i].rotation.to_rotation_matrix().matrix();
        let (wl, wdl) = (rot.transpose() * w, rot.transpose() * wd);
        let (sw, swd) = (skew(&w), skew(&wd));

        let f = &mut force[i];
        f.fixed_view_mut::<3, 1>(0, 0).copy_from(&a);
        f.fixed_view_mut::<3, 3>(0, 1).copy_from(&((swd + sw * sw) * rot));
        let m = &mut moment[i];
        m.fixed_view_mut::<3, 3>(0, 1).copy_from(&(-skew(&a) * rot));
        m.fixed_view_mut::<3, 6>(0, 4).copy_from(&(rot * (inertia_map(&wdl) + skew(&wl) * inertia_map(&wl))));

        w_prev = w;
        wd_prev = wd;
        a_prev = a;
        o_prev = o;
    }

    for j in 0..n {
        let zj = frames.axes[j];
        for i in j..n {
            let lever = skew(&(frames.origins[i] - frames.origins[j]));
            let block = zj.transpose() * (moment[i] + lever * force[i]);
            y.fixed_view_mut::<1, PARAMS_PER_LINK>(j, i * PARAMS_PER_LINK).copy_from(&block);
        }
    }
    y
}

/// One identification sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorSample {
    pub state: JointState,
    pub torque: JointVector,
}

impl RegressorSample {
    pub fn regressor(&self, model: &RobotModel) -> Result<RegressorRow> {
        let qdd = self.state.qdd.ok_or_else(|| Error::Identification("sample lacks accelerations".into()))?;
        Ok(build_regressor(model, &self.state.q, &self.state.qd, &qdd))
    }

    /// Measured torque minus the known rotor term, i.e. the part `Y π`
    /// has to explain.
    pub fn link_torque(&self, model: &RobotModel) -> Result<JointVector> {
        let qdd = self.state.qdd.ok_or_else(|| Error::Identification("sample lacks accelerations".into()))?;
        Ok(self.torque - rotor_torque(model, &qdd))
    }
}

/// Torque spent accelerating the rotors, `armature ∘ q̈`.
pub fn rotor_torque(model: &RobotModel, qdd: &JointVector) -> JointVector {
    let mut tau = JointVector::zeros();
    for (i, j) in model.joints.iter().enumerate() {
        tau[i] = j.armature * qdd[i];
    }
    tau
}

/// Second-order Butterworth low-pass (bilinear transform, pre-warped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 0.5 * sample_rate) {
            return Err(Error::InvalidParameter(format!("cutoff {cutoff} Hz outside (0, Nyquist)")));
        }
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Self { b: [b0, 2.0 * b0, b0], a: [2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm] })
    }

    /// Direct form II transposed, started in steady state for `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }

    /// Zero-phase forward-backward filtering with odd reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (n - 1).min(60);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Accelerations by central differences of `qd`, low-passed with a
/// zero-phase Butterworth filter at `cutoff` Hz.
pub fn filtered_acceleration(qd: &[JointVector], dt: f64, cutoff: f64, n: usize) -> Result<Vec<JointVector>> {
    if qd.len() < 3 {
        return Err(Error::Identification("need at least three samples to differentiate".into()));
    }
    let filter = Biquad::butterworth_lowpass(cutoff, 1.0 / dt)?;
    let len = qd.len();
    let mut out = vec![JointVector::zeros(); len];
    for j in 0..n {
        let raw: Vec<f64> = (0..len)
            .map(|k| {
                let (lo, hi) = (k.saturating_sub(1), (k + 1).min(len - 1));
                (qd[hi][j] - qd[lo][j]) / ((hi - lo) as f64 * dt)
            })
            .collect();
        for (o, v) in out.iter_mut().zip(filter.filtfilt(&raw)) {
            o[j] = v;
        }
    }
    Ok(out)
}

/// Identification samples from one robot of a trace: measured `q`, `q̇`,
/// filtered `q̈` and measured joint torque.
pub fn samples_from_trace(trace: &Trace, robot: usize, cutoff: f64) -> Result<Vec<RegressorSample>> {
    let rows = trace.samples.get(robot).ok_or_else(|| Error::TraceFormat(format!("trace has no robot {robot}")))?;
    let qd: Vec<JointVector> = rows.iter().map(|s| s.qd).collect();
    let qdd = filtered_acceleration(&qd, trace.dt, cutoff, trace.dofs[robot])?;
    Ok(rows
        .iter()
        .zip(qdd)
        .enumerate()
        .map(|(k, (s, a))| RegressorSample {
            state: JointState { timestamp: trace.time(k), q: s.q, qd: s.qd, qdd: Some(a) },
            torque: s.tau_meas,
        })
        .collect())
}

/// Per-parameter outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterReport {
    pub name: String,
    pub value: f64,
    pub prior: f64,
    /// Fraction of the parameter's unit direction inside the identifiable
    /// subspace (0 = prior only, 1 = fully determined by data).
    pub confidence: f64,
    /// Standard error from the residual variance, identifiable part only.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    /// Least-squares solution before projection.
    pub raw: ParameterVector,
    /// Physically consistent parameters.
    pub parameters: ParameterVector,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub condition: f64,
    pub ill_conditioned: bool,
    /// RMS of the training residual (N·m).
    pub residual_rms: f64,
    pub report: Vec<ParameterReport>,
    /// Links changed by the physical projection.
    pub projected_links: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    /// `λ_id` weighting `‖π − π_prior‖²`.
    pub regularization: f64,
    /// Singular values below `rank_tolerance · σ_max` are treated as
    /// unidentifiable.
    pub rank_tolerance: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { regularization: 1e-8, rank_tolerance: 1e-9 }
    }
}

/// Solves `min ‖Y π − τ‖² + λ ‖π − π_prior‖²`. The stacked regressor is
/// reduced block-wise by QR, then the triangular factor is decomposed by
/// SVD; directions with negligible singular values keep the prior.
pub fn identify(
    model: &RobotModel,
    samples: &[RegressorSample],
    prior: &ParameterVector,
    opts: IdentifyOptions,
) -> Result<Identification> {
    let n = model.dof();
    let p = n * PARAMS_PER_LINK;
    if prior.0.len() != p {
        return Err(Error::Identification(format!("prior has {} parameters, model needs {p}", prior.0.len())));
    }
    let needed = p * 5;
    if samples.len() < needed {
        return Err(Error::Identification(format!("{} samples, at least {needed} required", samples.len())));
    }
    if !(opts.regularization >= 0.0) {
        return Err(Error::Identification("regularization must be >= 0".into()));
    }

    // R and Qᵀ r of the stacked system Y δ = τ − Y π_prior
    let chunk = 256;
    let mut r_acc = DMatrix::<f64>::zeros(0, p);
    let mut z_acc = DVector::<f64>::zeros(0);
    let mut rhs_sq = 0.0;
    let mut rows = 0usize;
    for block in samples.chunks(chunk) {
        let m = r_acc.nrows() + block.len() * n;
        let mut a = DMatrix::<f64>::zeros(m, p);
        let mut b = DVector::<f64>::zeros(m);
        a.rows_mut(0, r_acc.nrows()).copy_from(&r_acc);
        b.rows_mut(0, z_acc.len()).copy_from(&z_acc);
        let mut row = r_acc.nrows();
        for s in block {
            let y = s.regressor(model)?;
            let y = y.view((0, 0), (n, p));
            let resid = s.link_torque(model)?.rows(0, n) - y * &prior.0;
            a.rows_mut(row, n).copy_from(&y);
            b.rows_mut(row, n).copy_from(&resid);
            rhs_sq += resid.norm_squared();
            row += n;
        }
        rows += block.len() * n;
        let qr = a.qr();
        let k = m.min(p);
        let qtb = qr.q().transpose() * &b;
        r_acc = qr.r().rows(0, k).into_owned();
        z_acc = qtb.rows(0, k).into_owned();
    }

    let svd = r_acc.clone().svd(true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let tol = opts.rank_tolerance * smax;
    let mut delta = DVector::<f64>::zeros(p);
    let mut rank = 0;
    let mut smin = smax;
    let utz = u.transpose() * &z_acc;
    for k in 0..sigma.len() {
        let s = sigma[k];
        if s > tol {
            rank += 1;
            smin = smin.min(s);
            delta += vt.row(k).transpose() * (utz[k] * s / (s * s + opts.regularization));
        }
    }
    let condition = if rank > 0 { smax / smin } else { f64::INFINITY };
    let ill_conditioned = condition > CONDITION_WARNING;
    if ill_conditioned {
        log::warn!("identifiable block condition number {condition:.3e} exceeds {CONDITION_WARNING:e}");
    }
    let raw = ParameterVector(&prior.0 + &delta);

    // residual: ‖b‖² − ‖Qᵀb‖² + ‖R δ − Qᵀb‖²
    let fit = &r_acc * &delta - &z_acc;
    let residual_sq = (rhs_sq - z_acc.norm_squared()).max(0.0) + fit.norm_squared();
    let residual_rms = (residual_sq / rows as f64).sqrt();
    let dof_resid = rows.saturating_sub(rank).max(1) as f64;
    let noise_var = residual_sq / dof_resid;

    let names = ParameterVector::names(n);
    let (projected, projected_links) = project_physical(&raw);
    let mut report = Vec::with_capacity(p);
    for j in 0..p {
        let mut inside = 0.0;
        let mut var = 0.0;
        for k in 0..sigma.len() {
            if sigma[k] > tol {
                let v = vt[(k, j)];
                inside += v * v;
                var += v * v / (sigma[k] * sigma[k]);
            }
        }
        report.push(ParameterReport {
            name: names[j].clone(),
            value: projected.0[j],
            prior: prior.0[j],
            confidence: inside.sqrt().min(1.0),
            std_error: (noise_var * var).sqrt(),
        });
    }
    Ok(Identification {
        raw,
        parameters: projected,
        singular_values: sigma.iter().copied().collect(),
        rank,
        condition,
        ill_conditioned,
        residual_rms,
        report,
        projected_links,
    })
}

/// Nearest physically consistent parameters: mass clamped to
/// [`MIN_MASS`], COM inertia eigenvalues clamped to [`MIN_MOMENT`] and to
/// the triangle inequality. Returns the indices of links that changed.
pub fn project_physical(params: &ParameterVector) -> (ParameterVector, Vec<usize>) {
    let mut out = params.clone();
    let mut changed = Vec::new();
    for i in 0..params.links() {
        let p = params.link(i);
        if link_from_params(&p).check_physical().is_ok() && p[0] >= MIN_MASS {
            continue;
        }
        let mass = p[0].max(MIN_MASS);
        let com = Vector3::new(p[1], p[2], p[3]) / mass;
        let shift = mass * (Matrix3::identity() * com.dot(&com) - com * com.transpose());
        let ic = inertia_from(&p) - shift;
        let eig = SymmetricEigen::new((ic + ic.transpose()) * 0.5);
        let mut l: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(MIN_MOMENT)).collect();
        // triangle inequality: no moment larger than the sum of the others
        let (imax, _) = l.iter().enumerate().fold((0, f64::MIN), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
        let others: f64 = l.iter().enumerate().filter(|(k, _)| *k != imax).map(|(_, v)| v).sum();
        if l[imax] > others {
            l[imax] = others;
        }
        let fixed =
            eig.eigenvectors * Matrix3::from_diagonal(&Vector3::new(l[0], l[1], l[2])) * eig.eigenvectors.transpose();
        let link = LinkInertia::new(mass, com, (fixed + fixed.transpose()) * 0.5);
        out.0.rows_mut(i * PARAMS_PER_LINK, PARAMS_PER_LINK).copy_from_slice(&link_params(&link));
        changed.push(i);
    }
    (out, changed)
}

/// Model with the inertial parameters replaced. A link whose parameters
/// equal the model's own is kept untouched, so extracting and re-applying
/// is the identity.
pub fn apply_identified(model: &RobotModel, params: &ParameterVector) -> Result<RobotModel> {
    if params.links() != model.dof() || params.0.len() != model.dof() * PARAMS_PER_LINK {
        return Err(Error::Identification("parameter count does not match the model".into()));
    }
    let mut links = model.links.clone();
    for (i, link) in links.iter_mut().enumerate() {
        let p = params.link(i);
        if p == link_params(link) {
            continue;
        }
        let candidate = link_from_params(&p);
        candidate
            .check_physical()
            .map_err(|m| Error::Identification(format!("link {} is not physical: {m}", i + 1)))?;
        *link = candidate;
    }
    model.with_links(links)
}

/// RMS of `τ − Y π` over samples (N·m), element-wise over joints.
pub fn torque_rms(model: &RobotModel, samples: &[RegressorSample], params: &ParameterVector) -> Result<f64> {
    let n = model.dof();
    let p = n * PARAMS_PER_LINK;
    let mut sum = 0.0;
    for s in samples {
        let y = s.regressor(model)?;
        let pred = y.view((0, 0), (n, p)) * &params.0;
        sum += (s.link_torque(model)?.rows(0, n) - pred).norm_squared();
    }
    Ok((sum / (samples.len() * n).max(1) as f64).sqrt())
}

/// Per-joint multi-sine excitation around a center posture.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub center: JointVector,
    pub frequencies: [f64; 3],
    /// `amplitudes[joint][k]` (rad).
    pub amplitudes: Vec<[f64; 3]>,
    pub phases: Vec<[f64; 3]>,
    pub duration: f64,
    /// Smooth fade-in time (s).
    pub ramp: f64,
}

impl Excitation {
    /// Three sines at 0.1/0.3/0.7 Hz per joint whose peak-to-peak excursion
    /// is at most `fraction` of the joint range, centered at `center` and
    /// kept inside the limits.
    pub fn multisine(model: &RobotModel, center: &JointVector, fraction: f64, duration: f64) -> Self {
        let n = model.dof();
        let mut amplitudes = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for (i, j) in model.joints.iter().enumerate() {
            let (lo, hi) = j.limits.position;
            let room = (center[i] - lo).min(hi - center[i]) * 0.9;
            let total = (0.5 * fraction * (hi - lo)).min(room).max(0.0);
            // more amplitude on slow components to bound the speed
            amplitudes.push([total * 0.5, total * 0.3, total * 0.2]);
            phases.push([0.7 * (i + 1) as f64, 1.9 * (i + 1) as f64, 2.3 + 0.5 * i as f64]);
        }
        Self { center: *center, frequencies: [0.1, 0.3, 0.7], amplitudes, phases, duration, ramp: 2.0 }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut e = self.clone();
        for a in e.amplitudes.iter_mut() {
            a.iter_mut().for_each(|v| *v *= factor);
        }
        e
    }

    pub fn at(&self, t: f64) -> JointVector {
        let fade = if self.ramp > 0.0 {
            let s = (t / self.ramp).clamp(0.0, 1.0);
            s * s * (3.0 - 2.0 * s)
        } else {
            1.0
        };
        let mut q = self.center;
        for (i, (amp, ph)) in self.amplitudes.iter().zip(&self.phases).enumerate() {
            let mut v = 0.0;
            for k in 0..3 {
                let w = 2.0 * std::f64::consts::PI * self.frequencies[k];
                v += amp[k] * (w * t + ph[k]).sin();
            }
            q[i] += fade * v;
        }
        q
    }

    /// Lowest point reached by any joint origin or the end effector, sampled
    /// every 10 ms.
    pub fn lowest_point(&self, model: &RobotModel) -> f64 {
        let steps = (self.duration / 0.01).ceil() as usize;
        let mut low = f64::INFINITY;
        for k in 0..=steps {
            let frames = ChainFrames::compute(model, &self.at(k as f64 * 0.01));
            // the first two joints sit on the base column
            for i in 2..=model.dof() {
                low = low.min(frames.anchor(i).z);
            }
        }
        low
    }

    /// Shrinks the amplitudes until every checked point stays `clearance`
    /// above `height`.
    pub fn clear_of_plane(&self, model: &RobotModel, height: f64, clearance: f64) -> Result<Self> {
        let mut e = self.clone();
        for _ in 0..30 {
            if e.lowest_point(model) >= height + clearance {
                return Ok(e);
            }
            e = e.scaled(0.8);
        }
        Err(Error::Identification("no collision-free excitation found".into()))
    }
}

/// Model file comment header plus the per-parameter table.
pub fn report_text(id: &Identification) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rank = {}", id.rank);
    let _ = writeln!(s, "condition = {:e}", id.condition);
    let _ = writeln!(s, "ill_conditioned = {}", id.ill_conditioned);
    let _ = writeln!(s, "residual_rms = {:?}", id.residual_rms);
    let _ = writeln!(s, "projected_links = {:?}", id.projected_links.iter().map(|i| i + 1).collect::<Vec<_>>());
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<12} {:>14} {:>14} {:>10} {:>12}", "parameter", "value", "prior", "confidence", "std_error");
    for r in &id.report {
        let _ = writeln!(
            s,
            "{:<12} {:>14.6e} {:>14.6e} {:>10.4} {:>12.3e}",
            r.name, r.value, r.prior, r.confidence, r.std_error
        );
    }
    s
}
