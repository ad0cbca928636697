//! Fringe fitting, entanglement verdicts and drift-statistics reduction.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::channel::DriftTrace;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    /// Temperature (°C) or phase (rad).
    pub control: f64,
    pub counts: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FringeData {
    pub points: Vec<FringePoint>,
}

impl FringeData {
    pub fn new(points: Vec<FringePoint>) -> Self {
        Self { points }
    }

    pub fn from_counts(controls: &[f64], counts: &[f64], seconds: f64) -> Self {
        Self {
            points: controls
                .iter()
                .zip(counts)
                .map(|(&control, &counts)| FringePoint { control, counts, seconds })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W, header_comment: Option<&str>) -> Result<()> {
        crate::io::write_csv(
            w,
            header_comment,
            &["control_value", "counts", "seconds"],
            self.points.iter().map(|p| vec![p.control, p.counts, p.seconds]),
        )
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let rows = crate::io::read_csv(r, &["control_value", "counts", "seconds"])?;
        Ok(Self {
            points: rows
                .into_iter()
                .map(|v| FringePoint { control: v[0], counts: v[1], seconds: v[2] })
                .collect(),
        })
    }
}

/// Result of fitting `rate = A (1 + V sin(2π (x − x₀)/P))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub visibility_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub phase0: f64,
    pub phase0_err: f64,
    pub period: f64,
    pub period_err: f64,
    pub chi2_dof: f64,
    /// Set when the raw visibility exceeded 1 and was clamped.
    pub clamped: bool,
    /// Errors come from the weighted-least-squares parameter covariance.
    pub error_method: String,
}

impl FringeFit {
    /// Rate predicted by the fitted curve at `x`.
    pub fn evaluate(&self, x: f64) -> f64 {
        self.amplitude * (1.0 + self.visibility * (TAU * (x - self.phase0) / self.period).sin())
    }
}

struct Prepared {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn prepare(data: &FringeData) -> Result<Prepared> {
    if data.points.len() < 5 {
        return Err(invalid(format!("need at least 5 fringe points, got {}", data.points.len())));
    }
    let mut p = Prepared { x: vec![], y: vec![], w: vec![] };
    for pt in &data.points {
        if !(pt.counts >= 0.0) || !(pt.seconds > 0.0) {
            return Err(invalid("counts must be non-negative and accumulation time positive"));
        }
        p.x.push(pt.control);
        p.y.push(pt.counts / pt.seconds);
        // Poisson variance of a rate: max(count,1)/t²
        p.w.push(pt.seconds * pt.seconds / pt.counts.max(1.0));
    }
    let (lo, hi) = p.x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if !(hi - lo > 0.0) {
        return Err(Error::FitFailure("degenerate sweep: all control values identical".into()));
    }
    Ok(p)
}

/// Weighted linear fit of `(a, b, c)` at fixed angular frequency.
fn linear_at(p: &Prepared, omega: f64) -> Option<(Vector3<f64>, Matrix3<f64>, f64)> {
    let mut m = Matrix3::zeros();
    let mut r = Vector3::zeros();
    for i in 0..p.x.len() {
        let g = Vector3::new(1.0, (omega * p.x[i]).sin(), (omega * p.x[i]).cos());
        m += p.w[i] * g * g.transpose();
        r += p.w[i] * p.y[i] * g;
    }
    let inv = m.try_inverse()?;
    let sol = inv * r;
    let chi2 = chi2_of(p, &Vector4::new(sol[0], sol[1], sol[2], omega));
    Some((sol, inv, chi2))
}

fn model(q: &Vector4<f64>, x: f64) -> f64 {
    q[0] + q[1] * (q[3] * x).sin() + q[2] * (q[3] * x).cos()
}

fn chi2_of(p: &Prepared, q: &Vector4<f64>) -> f64 {
    (0..p.x.len()).map(|i| p.w[i] * (p.y[i] - model(q, p.x[i])).powi(2)).sum()
}

fn normal_matrix(p: &Prepared, q: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for i in 0..p.x.len() {
        let (s, c) = (q[3] * p.x[i]).sin_cos();
        let g = Vector4::new(1.0, s, c, p.x[i] * (q[1] * c - q[2] * s));
        jtj += p.w[i] * g * g.transpose();
        jtr += p.w[i] * (p.y[i] - model(q, p.x[i])) * g;
    }
    (jtj, jtr)
}

/// Poisson-weighted least-squares sinusoid fit with the period free.
///
/// The period is seeded by a scan over `[0.5, 2] × period_hint`, then all four
/// parameters are refined with Levenberg–Marquardt.
pub fn fit_fringe(data: &FringeData, period_hint: f64) -> Result<FringeFit> {
    if !(period_hint > 0.0) {
        return Err(invalid("period hint must be positive"));
    }
    let p = prepare(data)?;
    let omega_hint = TAU / period_hint;

    let mut best: Option<(f64, Vector4<f64>)> = None;
    for i in 0..=240 {
        let omega = omega_hint * 0.5 * 4f64.powf(i as f64 / 240.0);
        if let Some((sol, _, chi2)) = linear_at(&p, omega) {
            if best.as_ref().map_or(true, |(b, _)| chi2 < *b) {
                best = Some((chi2, Vector4::new(sol[0], sol[1], sol[2], omega)));
            }
        }
    }
    let (mut chi2, mut q) = best.ok_or_else(|| Error::FitFailure("no admissible starting point".into()))?;

    let flat = |q: &Vector4<f64>| q[1].hypot(q[2]) <= 1e-12 * q[0].abs().max(1e-300);
    if !flat(&q) {
        let mut lambda = 1e-3;
        for _ in 0..500 {
            let (jtj, jtr) = normal_matrix(&p, &q);
            let mut damped = jtj;
            for d in 0..4 {
                damped[(d, d)] *= 1.0 + lambda;
            }
            let Some(step) = damped.try_inverse().map(|m| m * jtr) else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
                continue;
            };
            let trial = q + step;
            let c2 = chi2_of(&p, &trial);
            if c2 <= chi2 {
                let converged = (chi2 - c2) <= 1e-15 * chi2.max(1e-300)
                    && step.iter().zip(q.iter()).all(|(s, v)| s.abs() <= 1e-13 * v.abs().max(1e-12));
                q = trial;
                chi2 = c2;
                lambda = (lambda * 0.3).max(1e-12);
                if converged {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
    }

    let (a, b, c, omega) = (q[0], q[1], q[2], q[3]);
    if !(a > 0.0) {
        return Err(Error::FitFailure(format!("non-positive fitted mean rate {a}")));
    }
    let s = b.hypot(c);
    let raw_v = s / a;
    let dof = (p.x.len() as f64 - 4.0).max(1.0);

    let (jtj, _) = normal_matrix(&p, &q);
    let (cov4, full) = match jtj.try_inverse() {
        Some(m) if m.diagonal().iter().all(|d| d.is_finite() && *d >= 0.0) && !flat(&q) => (m, true),
        _ => {
            // ω unidentifiable (flat fringe): linear covariance at fixed ω
            let (_, inv3, _) = linear_at(&p, omega).ok_or_else(|| Error::FitFailure("singular normal matrix".into()))?;
            let mut m = Matrix4::zeros();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&inv3);
            (m, false)
        }
    };

    let grad_v = if s > 0.0 {
        Vector4::new(-raw_v / a, b / (a * s), c / (a * s), 0.0)
    } else {
        Vector4::zeros()
    };
    let visibility_err = if s > 0.0 {
        (grad_v.transpose() * cov4 * grad_v)[(0, 0)].max(0.0).sqrt()
    } else {
        (cov4[(1, 1)] + cov4[(2, 2)]).max(0.0).sqrt() / a
    };

    // x₀ from b = S cos(ωx₀), c = −S sin(ωx₀)
    let period = TAU / omega.abs();
    let phi = (-c).atan2(b);
    let phase0 = (phi / omega).rem_euclid(period);
    let (phase0_err, period_err) = if full && s > 0.0 {
        let dphi = Vector4::new(0.0, c / (s * s), -b / (s * s), 0.0);
        let var_phi = (dphi.transpose() * cov4 * dphi)[(0, 0)].max(0.0);
        let var_omega = cov4[(3, 3)].max(0.0);
        let var_x0 = var_phi / (omega * omega) + (phi / (omega * omega)).powi(2) * var_omega;
        (var_x0.sqrt(), TAU / (omega * omega) * var_omega.sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    Ok(FringeFit {
        visibility: raw_v.min(1.0),
        visibility_err,
        amplitude: a,
        amplitude_err: cov4[(0, 0)].max(0.0).sqrt(),
        phase0,
        phase0_err,
        period,
        period_err,
        chi2_dof: chi2 / dof,
        clamped: raw_v > 1.0,
        error_method: "wls-covariance".into(),
    })
}

/// Werner-state separability bound on fringe visibility.
pub const WERNER_BOUND: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Entangled,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntanglementVerdict {
    pub verdict: Verdict,
    /// `V − 1/3`.
    pub margin: f64,
    /// `V − 3σ − 1/3`; positive iff entangled.
    pub margin_3sigma: f64,
}

/// Entangled iff `V − 3·σ_V > 1/3`.
pub fn entanglement_verdict(fit: &FringeFit) -> EntanglementVerdict {
    let lower = fit.visibility - 3.0 * fit.visibility_err;
    EntanglementVerdict {
        verdict: if lower > WERNER_BOUND { Verdict::Entangled } else { Verdict::Inconclusive },
        margin: fit.visibility - WERNER_BOUND,
        margin_3sigma: lower - WERNER_BOUND,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub sigma_ps: f64,
    pub peak_to_peak_ps: f64,
    pub mean_ps: f64,
    pub samples: usize,
}

/// Sample standard deviation and max − min of a delay series.
pub fn drift_statistics(trace: &DriftTrace) -> Result<DriftStats> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::InsufficientData("drift statistics need at least 2 samples".into()));
    }
    let mean = trace.delays().sum::<f64>() / n as f64;
    let var = trace.delays().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok(DriftStats { sigma_ps: var.sqrt(), peak_to_peak_ps: trace.peak_to_peak(), mean_ps: mean, samples: n })
}

/// Affine MZI temperature → phase calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalCalibration {
    pub coefficient_rad_per_c: f64,
    pub offset_rad: f64,
}

impl Default for ThermalCalibration {
    fn default() -> Self {
        Self { coefficient_rad_per_c: TAU / 0.5, offset_rad: 0.0 }
    }
}

impl ThermalCalibration {
    pub fn new(coefficient_rad_per_c: f64, offset_rad: f64) -> Result<Self> {
        if coefficient_rad_per_c == 0.0 || !coefficient_rad_per_c.is_finite() {
            return Err(invalid("thermal coefficient must be finite and non-zero"));
        }
        Ok(Self { coefficient_rad_per_c, offset_rad })
    }

    pub fn phase_to_temperature(&self, theta: f64) -> f64 {
        (theta - self.offset_rad) / self.coefficient_rad_per_c
    }
}

pub fn temperature_to_phase(t_c: f64, cal: &ThermalCalibration) -> f64 {
    cal.coefficient_rad_per_c * t_c + cal.offset_rad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DriftSample;

    fn synth(v: f64, a: f64, p: f64, x0: f64, n: usize) -> FringeData {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 1.3 * p / n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| a * (1.0 + v * (TAU * (x - x0) / p).sin())).collect();
        FringeData::from_counts(&xs, &ys, 1.0)
    }

    #[test]
    fn exact_recovery_noise_free() {
        let f = fit_fringe(&synth(0.9, 1000.0, 0.5, 0.07, 13), 0.45).unwrap();
        assert!((f.visibility - 0.9).abs() < 1e-6);
        assert!((f.period - 0.5).abs() < 1e-6);
        assert!((f.amplitude - 1000.0).abs() < 1e-6);
        assert!((f.phase0 - 0.07).abs() < 1e-6);
        assert!(f.chi2_dof < 1e-12);
    }

    #[test]
    fn flat_fringe_has_zero_visibility() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let f = fit_fringe(&FringeData::from_counts(&xs, &[100.0; 9], 1.0), 0.5).unwrap();
        assert!(f.visibility < 1e-9);
        assert!(f.visibility_err > 0.0);
        assert!(f.visibility_err > 100.0 * f.visibility);
    }

    #[test]
    fn degenerate_sweep_fails() {
        let d = FringeData::from_counts(&[1.0; 6], &[5.0, 6.0, 7.0, 8.0, 9.0, 1.0], 1.0);
        assert!(matches!(fit_fringe(&d, 1.0), Err(Error::FitFailure(_))));
        let few = FringeData::from_counts(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1.0);
        assert!(fit_fringe(&few, 1.0).is_err());
    }

    fn fit_with(v: f64, e: f64) -> FringeFit {
        FringeFit {
            visibility: v,
            visibility_err: e,
            amplitude: 1.0,
            amplitude_err: 0.0,
            phase0: 0.0,
            phase0_err: 0.0,
            period: 1.0,
            period_err: 0.0,
            chi2_dof: 1.0,
            clamped: false,
            error_method: String::new(),
        }
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(entanglement_verdict(&fit_with(0.732, 0.056)).verdict, Verdict::Entangled);
        assert_eq!(entanglement_verdict(&fit_with(0.34, 0.05)).verdict, Verdict::Inconclusive);
        assert_eq!(entanglement_verdict(&fit_with(1.0 / 3.0, 0.0)).verdict, Verdict::Inconclusive);
        assert!((entanglement_verdict(&fit_with(0.5, 0.0)).margin - (0.5 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn drift_stats_of_constant_trace() {
        let t = DriftTrace::from_samples(
            (0..10).map(|i| DriftSample { time_s: i as f64, delay_ps: 3.0 }).collect(),
        )
        .unwrap();
        let s = drift_statistics(&t).unwrap();
        assert_eq!(s.sigma_ps, 0.0);
        assert_eq!(s.peak_to_peak_ps, 0.0);
        let one = DriftTrace::from_samples(vec![DriftSample { time_s: 0.0, delay_ps: 1.0 }]).unwrap();
        assert!(drift_statistics(&one).is_err());
    }

    #[test]
    fn thermal_calibration() {
        let c = ThermalCalibration::default();
        assert!((temperature_to_phase(20.5, &c) - temperature_to_phase(20.0, &c) - TAU).abs() < 1e-9);
        assert_eq!(temperature_to_phase(20.0, &c) - temperature_to_phase(20.0, &c), 0.0);
        let c = ThermalCalibration::new(3.7, 0.2).unwrap();
        for t in [-5.0, 0.0, 20.425, 100.0] {
            assert!((c.phase_to_temperature(temperature_to_phase(t, &c)) - t).abs() < 1e-12);
        }
        assert!(ThermalCalibration::new(0.0, 1.0).is_err());
    }

    #[test]
    fn fringe_csv_round_trip() {
        let d = synth(0.5, 10.0, 1.0, 0.0, 6);
        let mut buf = Vec::new();
        d.write_csv(&mut buf, None).unwrap();
        assert_eq!(FringeData::read_csv(buf.as_slice()).unwrap(), d);
    }
}
