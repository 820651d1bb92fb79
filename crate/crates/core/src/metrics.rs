//! Fidelity and timing metrics over recorded traces.
//!
//! RMSE reductions: joint channels average the squared element-wise
//! differences over samples and joints; vector channels (`x_EE` position,
//! `F_EE`) take the Euclidean norm of the difference per sample first.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::JointVector;
use crate::trace::Trace;

/// Half-width of the delay search window (s).
pub const DELAY_SEARCH: f64 = 0.05;

/// `√(mean((a − b)²))` over scalar series.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Metric("need at least two aligned samples".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Element-wise RMSE over the first `n` entries of joint vectors.
pub fn rmse_joint(a: &[JointVector], b: &[JointVector], n: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 || n == 0 {
        return Err(Error::Metric("need at least two aligned samples".into()));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        for i in 0..n {
            let d = x[i] - y[i];
            sum += d * d;
        }
    }
    Ok((sum / (a.len() * n) as f64).sqrt())
}

/// RMSE of the per-sample Euclidean norm of `a − b`.
pub fn rmse_norm<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64> {
    let da: Vec<f64> =
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()).collect();
    if a.len() != b.len() {
        return Err(Error::Metric(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    rmse(&da, &vec![0.0; da.len()])
}

/// Result of [`estimate_delay`]; positive values mean `b` lags `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// Delay with parabolic sub-sample refinement (ms).
    pub ms: f64,
    /// Lag of the correlation peak in grid samples.
    pub lag_samples: i64,
    /// Spacing of the interpolation grid (s).
    pub grid_step: f64,
    pub peak_correlation: f64,
}

fn interpolate(t: &[f64], v: &[f64], at: f64) -> f64 {
    match t.binary_search_by(|x| x.total_cmp(&at)) {
        Ok(i) => v[i],
        Err(0) => v[0],
        Err(i) if i >= t.len() => v[t.len() - 1],
        Err(i) => {
            let w = (at - t[i - 1]) / (t[i] - t[i - 1]);
            v[i - 1] + w * (v[i] - v[i - 1])
        }
    }
}

/// Delay of `b` relative to `a`. Both series are linearly interpolated on
/// the union of their timestamps (within the common support); the lag of
/// the maximum mean-removed normalized cross-correlation within
/// ±[`DELAY_SEARCH`] is refined with a parabola through its neighbours.
pub fn estimate_delay(ta: &[f64], a: &[f64], tb: &[f64], b: &[f64]) -> Result<DelayEstimate> {
    if ta.len() != a.len() || tb.len() != b.len() || a.len() < 2 || b.len() < 2 {
        return Err(Error::Metric("delay estimation needs matching time and value series".into()));
    }
    let start = ta[0].max(tb[0]);
    let end = ta[ta.len() - 1].min(tb[tb.len() - 1]);
    if end - start < 0.1 - 1e-12 {
        return Err(Error::Metric(format!("overlap {:.3} s is shorter than 100 ms", (end - start).max(0.0))));
    }
    let mut grid: Vec<f64> = ta.iter().chain(tb).copied().filter(|t| *t >= start && *t <= end).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    let mut gaps: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let step = gaps[gaps.len() / 2];

    let mut xa: Vec<f64> = grid.iter().map(|t| interpolate(ta, a, *t)).collect();
    let mut xb: Vec<f64> = grid.iter().map(|t| interpolate(tb, b, *t)).collect();
    for x in [&mut xa, &mut xb] {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
    let (va, vb) = (xa.iter().map(|v| v * v).sum::<f64>(), xb.iter().map(|v| v * v).sum::<f64>());
    if !(va > 0.0 && vb > 0.0) {
        return Err(Error::Metric("delay is undefined for a flat series".into()));
    }
    let n = grid.len() as i64;
    let max_lag = ((DELAY_SEARCH / step).round() as i64).min(n - 2);
    let corr = |lag: i64| -> f64 {
        // b[k] against a[k − lag]
        let (lo, hi) = (lag.max(0), (n + lag).min(n));
        let mut s = 0.0;
        for k in lo..hi {
            s += xa[(k - lag) as usize] * xb[k as usize];
        }
        let overlap = (hi - lo) as f64;
        s / (va * vb).sqrt() * (n as f64 / overlap)
    };
    let mut best = (0i64, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let c = corr(lag);
        if c > best.1 {
            best = (lag, c);
        }
    }
    let (lag, peak) = best;
    let mut frac = 0.0;
    if lag.abs() < max_lag {
        let (l, r) = (corr(lag - 1), corr(lag + 1));
        let denom = l - 2.0 * peak + r;
        if denom < 0.0 {
            frac = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(DelayEstimate {
        ms: (lag as f64 + frac) * step * 1e3,
        lag_samples: lag,
        grid_step: step,
        peak_correlation: peak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub tick: u64,
    /// Loop duration (µs).
    pub duration_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
    /// Ticks whose duration exceeded the period.
    pub overruns: usize,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Statistics of one condition's loop durations; `period_us` sets the
/// overrun threshold.
pub fn timing_summary(label: &str, samples: &[TimingSample], period_us: f64) -> Result<TimingSummary> {
    if samples.is_empty() {
        return Err(Error::Metric(format!("no timing samples for {label}")));
    }
    let mut d: Vec<f64> = samples.iter().map(|s| s.duration_us).collect();
    if d.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Metric("loop durations must be >= 0".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    d.sort_by(f64::total_cmp);
    Ok(TimingSummary {
        label: label.to_string(),
        count: d.len(),
        mean,
        std,
        p50: percentile(&d, 50.0),
        p99: percentile(&d, 99.0),
        max: d[d.len() - 1],
        overruns: d.iter().filter(|v| **v > period_us).count(),
    })
}

/// Summaries per condition label, in label order.
pub fn timing_report(samples: &[(String, TimingSample)], period_us: f64) -> Result<Vec<TimingSummary>> {
    let mut groups: BTreeMap<&str, Vec<TimingSample>> = BTreeMap::new();
    for (label, s) in samples {
        groups.entry(label).or_default().push(*s);
    }
    groups.iter().map(|(label, s)| timing_summary(label, s, period_us)).collect()
}

pub fn timing_table(summaries: &[TimingSummary]) -> String {
    let mut s = format!(
        "{:<8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "cond", "n", "mean_us", "std_us", "p50_us", "p99_us", "max_us", "overrun"
    );
    for t in summaries {
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>8}",
            t.label, t.count, t.mean, t.std, t.p50, t.p99, t.max, t.overruns
        );
    }
    s
}

pub fn timing_key_values(summaries: &[TimingSummary]) -> String {
    let mut s = String::new();
    for t in summaries {
        let _ = writeln!(s, "[timing.{}]", t.label.replace('-', "_"));
        let _ = writeln!(s, "count = {}", t.count);
        for (k, v) in [("mean_us", t.mean), ("std_us", t.std), ("p50_us", t.p50), ("p99_us", t.p99), ("max_us", t.max)]
        {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "overruns = {}\n", t.overruns);
    }
    s
}

/// Per-tick `τ_cmd − τ_meas` of one robot.
pub fn control_error(trace: &Trace, robot: usize) -> Result<Vec<JointVector>> {
    let samples = trace.samples.get(robot).ok_or_else(|| Error::TraceFormat(format!("trace has no robot {robot}")))?;
    Ok(samples.iter().map(|s| s.tau_cmd - s.tau_meas).collect())
}

/// Six-channel RMSE between two runs of the same robot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FidelityReport {
    pub q: f64,
    pub qd: f64,
    pub tau: f64,
    pub x_ee: f64,
    pub f_ee: f64,
    pub c_err: f64,
    pub samples: usize,
    pub delay_ms: Option<f64>,
}

impl FidelityReport {
    pub const CHANNELS: [&'static str; 6] = ["q", "qd", "tau", "x_ee", "f_ee", "c_err"];

    pub fn channels(&self) -> [f64; 6] {
        [self.q, self.qd, self.tau, self.x_ee, self.f_ee, self.c_err]
    }

    /// Channel-wise mean over trials.
    pub fn average(reports: &[FidelityReport]) -> Result<FidelityReport> {
        if reports.is_empty() {
            return Err(Error::Metric("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&FidelityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let delays: Vec<f64> = reports.iter().filter_map(|r| r.delay_ms).collect();
        Ok(FidelityReport {
            q: mean(|r| r.q),
            qd: mean(|r| r.qd),
            tau: mean(|r| r.tau),
            x_ee: mean(|r| r.x_ee),
            f_ee: mean(|r| r.f_ee),
            c_err: mean(|r| r.c_err),
            samples: reports[0].samples,
            delay_ms: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
        })
    }

    pub fn key_values(&self, section: &str) -> String {
        let mut s = format!("[{section}]\n");
        for (k, v) in Self::CHANNELS.iter().zip(self.channels()) {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "samples = {}", self.samples);
        if let Some(d) = self.delay_ms {
            let _ = writeln!(s, "delay_ms = {d:?}");
        }
        s
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<14} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}",
            self.q, self.qd, self.tau, self.x_ee, self.f_ee, self.c_err
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "run", "q_rad", "qd_rad_s", "tau_Nm", "x_ee_m", "f_ee_N", "c_err_Nm"
        )
    }
}

/// Compares robot `robot` of two traces on their common ticks.
pub fn fidelity_report(a: &Trace, b: &Trace, robot: usize) -> Result<FidelityReport> {
    let (a, b) = (a.sorted(), b.sorted());
    if robot >= a.robot_count() || robot >= b.robot_count() || a.dofs[robot] != b.dofs[robot] {
        return Err(Error::Metric(format!("robot {robot} is not comparable between the traces")));
    }
    let n = a.dofs[robot];
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a.ticks[i].cmp(&b.ticks[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ia.push(i);
                ib.push(j);
                i += 1;
                j += 1;
            }
        }
    }
    if ia.len() < 2 {
        return Err(Error::Metric("traces share fewer than two ticks".into()));
    }
    let (sa, sb) = (&a.samples[robot], &b.samples[robot]);
    let pick = |s: &[crate::trace::TraceSample], idx: &[usize], f: fn(&crate::trace::TraceSample) -> JointVector| {
        idx.iter().map(|&k| f(&s[k])).collect::<Vec<_>>()
    };
    let joint = |f: fn(&crate::trace::TraceSample) -> JointVector| rmse_joint(&pick(sa, &ia, f), &pick(sb, &ib, f), n);
    let pos = |s: &[crate::trace::TraceSample], idx: &[usize]| -> Vec<[f64; 3]> {
        idx.iter().map(|&k| s[k].pose.translation.vector.into()).collect()
    };
    let force = |s: &[crate::trace::TraceSample], idx: &[usize]| -> Vec<[f64; 6]> {
        idx.iter().map(|&k| s[k].wrench.into()).collect()
    };
    Ok(FidelityReport {
        q: joint(|s| s.q)?,
        qd: joint(|s| s.qd)?,
        tau: joint(|s| s.tau_meas)?,
        x_ee: rmse_norm(&pos(sa, &ia), &pos(sb, &ib))?,
        f_ee: rmse_norm(&force(sa, &ia), &force(sb, &ib))?,
        c_err: joint(|s| s.tau_cmd - s.tau_meas)?,
        samples: ia.len(),
        delay_ms: None,
    })
}

/// Norm of a joint vector series, the default scalar for delay estimation.
pub fn norm_series(v: &[JointVector]) -> Vec<f64> {
    v.iter().map(|x| x.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn rmse_basics() {
        let a: Vec<f64> = (0..100).map(|k| (k as f64 * 0.1).sin()).collect();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        assert!((rmse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(rmse(&a, &b[1..]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_oracle_and_is_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
        // oracle: first the squared differences, then their mean
        let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).collect();
        let mut acc = 0.0;
        for v in &sq {
            acc += v;
        }
        let oracle = (acc / sq.len() as f64).sqrt();
        assert!((rmse(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
    }

    #[test]
    fn vector_rmse_uses_per_sample_norm() {
        let a = vec![[0.0, 0.0, 0.0]; 4];
        let b = vec![[3.0, 4.0, 0.0]; 4];
        assert_eq!(rmse_norm(&a, &b).unwrap(), 5.0);
        let ja = vec![JointVector::zeros(); 3];
        let jb = vec![JointVector::from_element(2.0); 3];
        assert_eq!(rmse_joint(&ja, &jb, 7).unwrap(), 2.0);
    }

    fn sine(shift: f64, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-3).collect();
        let v = t
            .iter()
            .map(|t| {
                (2.0 * std::f64::consts::PI * 10.0 * (t - shift)).sin() + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (t, v)
    }

    #[test]
    fn self_delay_is_zero() {
        let (t, v) = sine(0.0, 0.0, 0);
        let d = estimate_delay(&t, &v, &t, &v).unwrap();
        assert_eq!(d.lag_samples, 0);
        assert!(d.ms.abs() < 1e-12);
    }

    #[test]
    fn five_millisecond_shift() {
        let (t, a) = sine(0.0, 0.0, 0);
        let (_, b) = sine(0.005, 0.0, 0);
        let d = estimate_delay(&t, &a, &t, &b).unwrap();
        assert!((d.ms - 5.0).abs() < 0.5, "{}", d.ms);
    }

    #[test]
    fn noisy_shift_over_seeds() {
        let (t, a) = sine(0.0, 0.0, 0);
        let hits = (0..100)
            .filter(|&seed| {
                let (_, b) = sine(0.005, 0.1, seed);
                (estimate_delay(&t, &a, &t, &b).unwrap().ms - 5.0).abs() < 1.0
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn shift_grid_is_recovered_to_one_sample() {
        // broadband signal so every lag in the window is distinguishable
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let base: Vec<f64> = (0..1200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-3).collect();
        for shift in -20i64..=20 {
            let a: Vec<f64> = (0..1000).map(|k| base[k + 100]).collect();
            let b: Vec<f64> = (0..1000).map(|k| base[(k as i64 + 100 - shift) as usize]).collect();
            let d = estimate_delay(&t, &a, &t, &b).unwrap();
            assert!((d.ms - shift as f64).abs() <= 1.0, "{shift}: {}", d.ms);
            assert_eq!(d.lag_samples, shift);
        }
    }

    #[test]
    fn mismatched_grids_use_the_union() {
        let ta: Vec<f64> = (0..500).map(|k| k as f64 * 2e-3).collect();
        let tb: Vec<f64> = (0..500).map(|k| k as f64 * 2e-3 + 1e-3).collect();
        let f = |t: f64| (2.0 * std::f64::consts::PI * 10.0 * t).sin();
        let a: Vec<f64> = ta.iter().map(|t| f(*t)).collect();
        let b: Vec<f64> = tb.iter().map(|t| f(t - 0.004)).collect();
        let d = estimate_delay(&ta, &a, &tb, &b).unwrap();
        assert!((d.grid_step - 1e-3).abs() < 1e-12);
        assert!((d.ms - 4.0).abs() <= 1.0, "{}", d.ms);
    }

    #[test]
    fn flat_and_short_series_are_rejected() {
        let t: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-3).collect();
        let flat = vec![1.0; 1000];
        let (_, v) = sine(0.0, 0.0, 0);
        assert!(estimate_delay(&t, &flat, &t, &v).is_err());
        assert!(estimate_delay(&t[..50], &v[..50], &t[..50], &v[..50]).is_err());
    }

    #[test]
    fn timing_statistics() {
        let constant: Vec<TimingSample> = (0..1000).map(|k| TimingSample { tick: k, duration_us: 10.0 }).collect();
        let s = timing_summary("NF", &constant, 1000.0).unwrap();
        assert_eq!((s.mean, s.std, s.p50, s.max), (10.0, 0.0, 10.0, 10.0));
        let mixed: Vec<TimingSample> =
            (0..1000).map(|k| TimingSample { tick: k, duration_us: if k % 2 == 0 { 10.0 } else { 20.0 } }).collect();
        let m = timing_summary("CA", &mixed, 15.0).unwrap();
        assert_eq!(m.mean, 15.0);
        assert_eq!(m.overruns, 500);
        assert_eq!(m.p99, 20.0);
    }

    #[test]
    fn control_error_spikes_once_for_a_delayed_step() {
        use crate::plant::{Plant, PlantConfig};
        use crate::trace::TraceSample;
        let mut config = PlantConfig::new(crate::RobotModel::default_arm());
        config.delay = 1.0;
        let mut plant = Plant::new(config, JointVector::zeros()).unwrap();
        let mut trace = Trace::with_capacity(vec!["a".into()], vec![7], 1e-3, 10);
        for k in 0..10u64 {
            let cmd = JointVector::from_element(if k < 5 { 0.0 } else { 4.0 });
            let out = plant.step(&cmd);
            trace.push_tick(k);
            trace.push_sample(0, TraceSample { tau_cmd: cmd, tau_meas: out.measured.torque, ..Default::default() });
        }
        let err = control_error(&trace, 0).unwrap();
        let spikes: Vec<usize> = (0..10).filter(|&k| err[k].norm() > 0.0).collect();
        assert_eq!(spikes, vec![5]);
        assert_eq!(err[5], JointVector::from_element(4.0));
    }

    #[test]
    fn noisy_torque_rmse_matches_sigma() {
        use crate::plant::{NoiseConfig, Plant, PlantConfig};
        let model = crate::RobotModel::default_arm();
        let mut config = PlantConfig::new(model.clone());
        config.noise = NoiseConfig { tau: 0.05, ..NoiseConfig::none() };
        let q = crate::math::joint_vector(&[0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8]);
        let mut plant = Plant::new(config, q).unwrap();
        let mut cmd = Vec::new();
        let mut meas = Vec::new();
        for _ in 0..20_000 {
            let tau = crate::dynamics::gravity_torque(&model, &plant.state().q);
            let out = plant.step(&tau);
            cmd.push(tau);
            meas.push(out.measured.torque);
        }
        let r = rmse_joint(&cmd, &meas, 7).unwrap();
        assert!((r - 0.05).abs() < 0.005, "{r}");
    }

    #[test]
    fn fidelity_is_zero_for_identical_traces_and_row_order_invariant() {
        let mut t = Trace::with_capacity(vec!["a".into()], vec![7], 1e-3, 20);
        for k in 0..20u64 {
            t.push_tick(k);
            let v = JointVector::from_element(k as f64);
            t.push_sample(0, crate::trace::TraceSample { q: v, qd: v * 0.5, tau_cmd: v, ..Default::default() });
        }
        let r = fidelity_report(&t, &t, 0).unwrap();
        assert_eq!(r.channels(), [0.0; 6]);
        let mut shuffled = t.clone();
        shuffled.ticks.reverse();
        shuffled.samples[0].reverse();
        let mut other = t.clone();
        other.samples[0].iter_mut().for_each(|s| s.q[0] += 1.0);
        assert_eq!(fidelity_report(&shuffled, &other, 0).unwrap(), fidelity_report(&t, &other, 0).unwrap());
    }
}
