//! Feedback compensation of the Alice–Bob arrival-time difference and of the
//! polarization mismatch at the Bell-state measurement.

use std::io::Write;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{stokes_overlap, DriftTrace, PolarizationTrace};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

/// Clamped, quantized integrator driving the variable delay line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayController {
    pub gain: f64,
    pub update_period_s: f64,
    pub actuator_range_ps: f64,
    pub actuator_resolution_ps: f64,
    pub current_compensation_ps: f64,
    #[serde(skip)]
    pub saturated: bool,
}

impl Default for DelayController {
    fn default() -> Self {
        Self {
            gain: 1.0,
            update_period_s: 60.0,
            actuator_range_ps: 600.0,
            actuator_resolution_ps: 1.0,
            current_compensation_ps: 0.0,
            saturated: false,
        }
    }
}

impl DelayController {
    pub fn validate(&self) -> Result<()> {
        if !(self.actuator_resolution_ps > 0.0) || !(self.actuator_range_ps >= 0.0) {
            return Err(invalid("actuator resolution must be positive and range non-negative"));
        }
        if !(self.update_period_s > 0.0) || !(self.gain >= 0.0) {
            return Err(invalid("update period must be positive and gain non-negative"));
        }
        if self.current_compensation_ps.abs() > self.actuator_range_ps {
            return Err(invalid("compensation outside actuator range"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Bob minus Alice arrival time.
    pub delta_t_ps: f64,
    pub sigma_ps: f64,
    pub n_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Lags beyond ± this are not correlated.
    pub max_lag_ps: f64,
    /// Gaussian kernel width used to smooth the lag distribution.
    pub kernel_ps: f64,
    pub resolution_ps: f64,
    pub jackknife_blocks: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { max_lag_ps: 2000.0, kernel_ps: 50.0, resolution_ps: 4.0, jackknife_blocks: 10 }
    }
}

/// Lags `b − a` within the correlation window, tagged with the index of the
/// `a` event (in sorted order) they came from.
fn collect_lags(a: &[f64], b: &[f64], max_lag: f64) -> Vec<(usize, f64)> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut lags = Vec::new();
    let mut start = 0;
    for (i, &ta) in a.iter().enumerate() {
        while start < b.len() && b[start] < ta - max_lag {
            start += 1;
        }
        for &tb in &b[start..] {
            if tb > ta + max_lag {
                break;
            }
            lags.push((i, tb - ta));
        }
    }
    lags
}

/// Maximum of the kernel-smoothed lag density, found by mean shift from the
/// fullest coarse histogram bin.
fn correlation_peak<'a>(lags: impl Iterator<Item = &'a f64> + Clone, kernel: f64, max_lag: f64) -> Option<f64> {
    let nbins = ((2.0 * max_lag / kernel).ceil() as usize).max(1);
    let mut hist = vec![0usize; nbins];
    let mut any = false;
    for &x in lags.clone() {
        let i = (((x + max_lag) / kernel) as usize).min(nbins - 1);
        hist[i] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = hist.iter().enumerate().max_by_key(|&(i, c)| (c, std::cmp::Reverse(i)))?.0;
    Some(mean_shift(lags, kernel, -max_lag + (best as f64 + 0.5) * kernel))
}

fn mean_shift<'a>(lags: impl Iterator<Item = &'a f64> + Clone, kernel: f64, start: f64) -> f64 {
    let mut m = start;
    let inv = 1.0 / (2.0 * kernel * kernel);
    for _ in 0..200 {
        let (mut sw, mut swx) = (0.0, 0.0);
        for &x in lags.clone() {
            let d = x - m;
            if d.abs() > 5.0 * kernel {
                continue;
            }
            let w = (-d * d * inv).exp();
            sw += w;
            swx += w * x;
        }
        if sw == 0.0 {
            break;
        }
        let next = swx / sw;
        let done = (next - m).abs() < 1e-3;
        m = next;
        if done {
            break;
        }
    }
    m
}

/// Arrival-time offset between two click streams from the peak of their
/// cross-correlation, with a jackknife uncertainty.
pub fn estimate_error(clicks_a: &[f64], clicks_b: &[f64], cfg: &EstimatorConfig) -> Result<ErrorEstimate> {
    if clicks_a.is_empty() || clicks_b.is_empty() {
        return Err(Error::InsufficientData("both click streams must be non-empty".into()));
    }
    let lags = collect_lags(clicks_a, clicks_b, cfg.max_lag_ps);
    if lags.is_empty() {
        return Err(Error::InsufficientData("no click pairs inside the correlation window".into()));
    }
    let all = lags.iter().map(|(_, x)| x);
    let delta = correlation_peak(all, cfg.kernel_ps, cfg.max_lag_ps)
        .ok_or_else(|| Error::InsufficientData("empty correlation".into()))?;

    let n = lags.len();
    let g = cfg.jackknife_blocks.min(n);
    let mut sigma_jk = 0.0;
    if g >= 2 {
        let n_a = lags.last().map(|(i, _)| i + 1).unwrap_or(1);
        let block_of = |i: usize| i * g / n_a;
        let mut estimates = Vec::with_capacity(g);
        for blk in 0..g {
            let kept = lags.iter().filter(|(i, _)| block_of(*i) != blk).map(|(_, x)| x);
            estimates.push(mean_shift(kept, cfg.kernel_ps, delta));
        }
        let m = estimates.len() as f64;
        if m >= 2.0 {
            let mean = estimates.iter().sum::<f64>() / m;
            sigma_jk = ((m - 1.0) / m * estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()).sqrt();
        }
    }
    let floor = cfg.resolution_ps / (n as f64).sqrt();
    Ok(ErrorEstimate { delta_t_ps: delta, sigma_ps: sigma_jk.max(floor), n_events: n })
}

/// One integrator update: `compensation ← compensation − gain·Δt`, clamped to
/// the actuator range and quantized to its resolution.
pub fn control_step(ctrl: &DelayController, err: &ErrorEstimate) -> DelayController {
    let target = ctrl.current_compensation_ps - ctrl.gain * err.delta_t_ps;
    let range = ctrl.actuator_range_ps;
    let clamped = target.clamp(-range, range);
    let res = ctrl.actuator_resolution_ps;
    let mut q = (clamped / res).round() * res;
    if q.abs() > range {
        q -= q.signum() * res;
    }
    DelayController { current_compensation_ps: q, saturated: target.abs() > range, ..ctrl.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayLoopConfig {
    pub enabled: bool,
    pub controller: DelayController,
    pub events_per_estimate: usize,
    /// Arrival-time spread of one photon (σ of the wave packet).
    pub pulse_sigma_ps: f64,
    pub estimator: EstimatorConfig,
}

impl Default for DelayLoopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            controller: DelayController::default(),
            events_per_estimate: 1000,
            // 110 ps FWHM
            pulse_sigma_ps: 110.0 / 2.354_820_045,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRow {
    pub time_s: f64,
    pub raw_delay_ps: f64,
    pub compensation_ps: f64,
    pub residual_ps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopLog {
    pub rows: Vec<LoopRow>,
    pub saturation_events: usize,
}

impl LoopLog {
    pub fn residual_trace(&self) -> DriftTrace {
        DriftTrace {
            samples: self
                .rows
                .iter()
                .map(|r| crate::channel::DriftSample { time_s: r.time_s, delay_ps: r.residual_ps })
                .collect(),
            preset: None,
            seed: None,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W, header_comment: Option<&str>) -> Result<()> {
        crate::io::write_csv(
            w,
            header_comment,
            &["time_s", "raw_delay_ps", "compensation_ps", "residual_ps"],
            self.rows.iter().map(|r| vec![r.time_s, r.raw_delay_ps, r.compensation_ps, r.residual_ps]),
        )
    }
}

/// Run the delay loop against `trace`. Each update correlates
/// `events_per_estimate` synthetic photon pairs collected over the preceding
/// period, TDC-quantized, and feeds the estimate to [`control_step`].
/// Residual delay is `raw + compensation`.
pub fn run_delay_loop(trace: &DriftTrace, cfg: &DelayLoopConfig, seed: u64) -> Result<LoopLog> {
    if trace.is_empty() {
        return Err(Error::InsufficientData("empty drift trace".into()));
    }
    cfg.controller.validate()?;
    let mut rng = rng::stream(seed, &[tag::LOOP]);
    let mut ctrl = cfg.controller.clone();
    let period = ctrl.update_period_s;
    let t0 = trace.samples[0].time_s;
    // first update at t0 acts as the static trim
    let mut next_update = t0;
    let mut log = LoopLog { rows: Vec::with_capacity(trace.len()), saturation_events: 0 };
    let res = cfg.estimator.resolution_ps;
    let spacing_ps = 1e6; // events placed ≥1 µs apart so only true partners correlate

    for s in &trace.samples {
        while cfg.enabled && s.time_s >= next_update {
            let start = (next_update - period).max(t0);
            let span = next_update.max(t0 + 1e-9) - start;
            let n = cfg.events_per_estimate.max(1);
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for j in 0..n {
                let te = start + rng.random::<f64>() * span;
                let delta = trace.delay_at(te) + ctrl.current_compensation_ps;
                let base = j as f64 * spacing_ps;
                let ja: f64 = rng.sample(StandardNormal);
                let jb: f64 = rng.sample(StandardNormal);
                a.push(((base + cfg.pulse_sigma_ps * ja) / res).floor() * res);
                b.push(((base + delta + cfg.pulse_sigma_ps * jb) / res).floor() * res);
            }
            let est = estimate_error(&a, &b, &cfg.estimator)?;
            ctrl = control_step(&ctrl, &est);
            if ctrl.saturated {
                log.saturation_events += 1;
            }
            next_update += period;
        }
        log.rows.push(LoopRow {
            time_s: s.time_s,
            raw_delay_ps: s.delay_ps,
            compensation_ps: ctrl.current_compensation_ps,
            residual_ps: s.delay_ps + ctrl.current_compensation_ps,
        });
    }
    Ok(log)
}

/// Rotates Bob's polarization toward Alice's by a fraction `gain` of the
/// measured misalignment once per update period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarizationController {
    pub enabled: bool,
    pub gain: f64,
    pub update_period_s: f64,
}

impl Default for PolarizationController {
    fn default() -> Self {
        Self { enabled: true, gain: 0.8, update_period_s: 60.0 }
    }
}

/// Overlap trace after polarization compensation.
pub fn polarization_step(trace: &PolarizationTrace, ctrl: &PolarizationController) -> Result<Vec<f64>> {
    if !(ctrl.update_period_s > 0.0) || !(0.0..=1.0).contains(&ctrl.gain) {
        return Err(invalid("polarization controller needs positive period and gain in [0, 1]"));
    }
    if !ctrl.enabled {
        return Ok(trace.overlaps());
    }
    let mut rot = Rotation3::identity();
    let mut next_update = trace.times_s.first().copied().unwrap_or(0.0) + ctrl.update_period_s;
    let mut out = Vec::with_capacity(trace.len());
    for ((&t, a), b) in trace.times_s.iter().zip(&trace.stokes_a).zip(&trace.stokes_b) {
        let va = Vector3::from(*a);
        let mut vb = rot * Vector3::from(*b);
        if t >= next_update {
            while t >= next_update {
                next_update += ctrl.update_period_s;
            }
            let cos = va.dot(&vb).clamp(-1.0, 1.0);
            let angle = cos.acos();
            if angle > 1e-12 {
                let mut axis = vb.cross(&va);
                if axis.norm() < 1e-12 {
                    // antipodal: any axis perpendicular to vb
                    axis = vb.cross(&Vector3::x());
                    if axis.norm() < 1e-12 {
                        axis = vb.cross(&Vector3::y());
                    }
                }
                let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), ctrl.gain * angle);
                rot = r * rot;
                vb = rot * Vector3::from(*b);
            }
        }
        out.push(stokes_overlap(a, &[vb.x, vb.y, vb.z]));
    }
    Ok(out)
}
