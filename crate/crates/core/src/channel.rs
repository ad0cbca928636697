//! Fiber-link models: loss budgets, weather-driven relative delay drift and
//! polarization wander.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Coiled,
    Underground,
    Aerial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub kind: SegmentKind,
    pub length_km: f64,
    pub loss_db: f64,
}

/// Loss budget of one photon path, as a list of fiber segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    pub segments: Vec<Segment>,
}

impl LinkBudget {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let b = Self { segments };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.loss_db >= 0.0) || !(s.length_km >= 0.0) {
                return Err(invalid(format!("segment {:?} has negative loss or length", s.kind)));
            }
        }
        Ok(())
    }

    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn single(kind: SegmentKind, length_km: f64, loss_db: f64) -> Self {
        Self { segments: vec![Segment { kind, length_km, loss_db }] }
    }

    pub fn loss_db_of(&self, kind: SegmentKind) -> f64 {
        self.segments.iter().filter(|s| s.kind == kind).map(|s| s.loss_db).sum()
    }

    pub fn total_db(&self) -> f64 {
        self.segments.iter().map(|s| s.loss_db).sum()
    }

    pub fn length_km(&self) -> f64 {
        self.segments.iter().map(|s| s.length_km).sum()
    }

    pub fn concat(&self, other: &LinkBudget) -> LinkBudget {
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        LinkBudget { segments }
    }

    /// Same segments with every loss multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> LinkBudget {
        LinkBudget {
            segments: self
                .segments
                .iter()
                .map(|s| Segment { loss_db: s.loss_db * factor, ..s.clone() })
                .collect(),
        }
    }

    /// Alice → Charlie deployed fiber (underground), 6 dB.
    pub fn field_alice_signal() -> Self {
        Self::single(SegmentKind::Underground, 12.5, 6.0)
    }

    /// Bob → Charlie deployed fiber including the suspended kilometre, 7 dB total.
    pub fn field_bob_signal() -> Self {
        Self {
            segments: vec![
                Segment { kind: SegmentKind::Underground, length_km: 11.5, loss_db: 6.7 },
                Segment { kind: SegmentKind::Aerial, length_km: 1.0, loss_db: 0.3 },
            ],
        }
    }

    /// Half of the 77 km, 16 dB coiled spool, held by each node for its idler.
    pub fn field_idler_coil() -> Self {
        Self::single(SegmentKind::Coiled, 38.5, 8.0)
    }
}

pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Probability that a photon survives `budget` plus `extra_db` of insertion loss.
pub fn survival_probability(budget: &LinkBudget, extra_db: f64) -> Result<f64> {
    budget.validate()?;
    if !(extra_db >= 0.0) {
        return Err(invalid("insertion loss must be non-negative"));
    }
    Ok(db_to_transmission(budget.total_db() + extra_db))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Rainy,
    Cloudy,
    Sunny,
    Custom,
}

impl std::str::FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rainy" => Ok(Weather::Rainy),
            "cloudy" => Ok(Weather::Cloudy),
            "sunny" => Ok(Weather::Sunny),
            "custom" => Ok(Weather::Custom),
            other => Err(invalid(format!("unknown weather preset '{other}'"))),
        }
    }
}

/// Drift process parameters. The relative delay is a diurnal sinusoid plus a
/// slow Ornstein–Uhlenbeck wander plus a fast OU term for aerial vibration;
/// all amplitudes are fractions of `peak_to_peak_ps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherPreset {
    pub label: Weather,
    pub peak_to_peak_ps: f64,
    /// Correlation time of the slow wander.
    pub drift_timescale_s: f64,
    pub diurnal_period_s: f64,
    /// Sinusoid amplitude / peak-to-peak.
    pub diurnal_fraction: f64,
    /// Stationary σ of the slow wander / peak-to-peak.
    pub wander_fraction: f64,
    /// Stationary σ of the fast term (ps, not scaled).
    pub fast_sigma_ps: f64,
    pub fast_timescale_s: f64,
}

impl Default for WeatherPreset {
    fn default() -> Self {
        Self::preset(Weather::Cloudy)
    }
}

impl WeatherPreset {
    pub fn preset(label: Weather) -> Self {
        let (ptp, fast) = match label {
            Weather::Rainy => (200.0, 0.5),
            Weather::Cloudy | Weather::Custom => (500.0, 1.0),
            Weather::Sunny => (1000.0, 1.5),
        };
        Self {
            label,
            peak_to_peak_ps: ptp,
            drift_timescale_s: 21_600.0,
            diurnal_period_s: 86_400.0,
            diurnal_fraction: 0.45,
            wander_fraction: 0.05,
            fast_sigma_ps: fast,
            fast_timescale_s: 5.0,
        }
    }

    pub fn rainy() -> Self {
        Self::preset(Weather::Rainy)
    }

    pub fn cloudy() -> Self {
        Self::preset(Weather::Cloudy)
    }

    pub fn sunny() -> Self {
        Self::preset(Weather::Sunny)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_to_peak_ps >= 0.0
            && self.drift_timescale_s > 0.0
            && self.diurnal_period_s > 0.0
            && self.fast_timescale_s > 0.0
            && self.wander_fraction >= 0.0
            && self.fast_sigma_ps >= 0.0
            && self.diurnal_fraction >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid("weather preset has negative or zero parameters"))
        }
    }

    /// Standard deviation of the stationary noise increment over one step of `dt_s`.
    pub fn step_sigma_ps(&self, dt_s: f64) -> f64 {
        let ou = |sigma: f64, tc: f64| sigma * (2.0 * (1.0 - (-dt_s / tc).exp())).sqrt();
        let slow = ou(self.wander_fraction * self.peak_to_peak_ps, self.drift_timescale_s);
        let fast = ou(self.fast_sigma_ps, self.fast_timescale_s);
        (slow * slow + fast * fast).sqrt()
    }

    /// Largest per-step change of the diurnal term.
    pub fn max_diurnal_step_ps(&self, dt_s: f64) -> f64 {
        self.diurnal_fraction * self.peak_to_peak_ps * TAU / self.diurnal_period_s * dt_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSample {
    pub time_s: f64,
    pub delay_ps: f64,
}

/// Relative Alice–Bob optical delay vs wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftTrace {
    pub samples: Vec<DriftSample>,
    pub preset: Option<WeatherPreset>,
    pub seed: Option<u64>,
}

impl DriftTrace {
    pub fn from_samples(samples: Vec<DriftSample>) -> Result<Self> {
        if samples.windows(2).any(|w| !(w[1].time_s > w[0].time_s)) {
            return Err(invalid("drift trace times must be strictly increasing"));
        }
        Ok(Self { samples, preset: None, seed: None })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.delay_ps)
    }

    pub fn peak_to_peak(&self) -> f64 {
        let (lo, hi) = self
            .delays()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    /// Linear interpolation, clamped at the ends.
    pub fn delay_at(&self, t: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() {
            return 0.0;
        }
        let i = s.partition_point(|x| x.time_s <= t);
        if i == 0 {
            return s[0].delay_ps;
        }
        if i == s.len() {
            return s[s.len() - 1].delay_ps;
        }
        let (a, b) = (s[i - 1], s[i]);
        let w = (t - a.time_s) / (b.time_s - a.time_s);
        a.delay_ps + w * (b.delay_ps - a.delay_ps)
    }

    pub fn write_csv<W: Write>(&self, w: W, header_comment: Option<&str>) -> Result<()> {
        crate::io::write_csv(
            w,
            header_comment,
            &["time_s", "delay_ps"],
            self.samples.iter().map(|s| vec![s.time_s, s.delay_ps]),
        )
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let rows = crate::io::read_csv(r, &["time_s", "delay_ps"])?;
        Self::from_samples(rows.into_iter().map(|v| DriftSample { time_s: v[0], delay_ps: v[1] }).collect())
    }
}

/// Generate a drift trace sampled every `dt_s` over `[0, duration_s]`.
pub fn generate_drift(preset: &WeatherPreset, duration_s: f64, dt_s: f64, seed: u64) -> Result<DriftTrace> {
    if !(duration_s > 0.0) || !(dt_s > 0.0) {
        return Err(invalid("duration and time step must be positive"));
    }
    preset.validate()?;
    let mut rng = rng::stream(seed, &[tag::DRIFT, preset.label as u64]);
    let steps = (duration_s / dt_s).floor() as usize;

    let amp = preset.diurnal_fraction * preset.peak_to_peak_ps;
    let phase0: f64 = rng.random::<f64>() * TAU;
    let slow_sigma = preset.wander_fraction * preset.peak_to_peak_ps;
    let fast_sigma = preset.fast_sigma_ps;
    let slow_decay = (-dt_s / preset.drift_timescale_s).exp();
    let fast_decay = (-dt_s / preset.fast_timescale_s).exp();
    let slow_kick = slow_sigma * (1.0 - slow_decay * slow_decay).sqrt();
    let fast_kick = fast_sigma * (1.0 - fast_decay * fast_decay).sqrt();

    let mut slow = slow_sigma * rng.sample::<f64, _>(StandardNormal);
    let mut fast = fast_sigma * rng.sample::<f64, _>(StandardNormal);
    let mut samples = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 * dt_s;
        if i > 0 {
            slow = slow * slow_decay + slow_kick * rng.sample::<f64, _>(StandardNormal);
            fast = fast * fast_decay + fast_kick * rng.sample::<f64, _>(StandardNormal);
        }
        let diurnal = amp * (TAU * t / preset.diurnal_period_s + phase0).sin();
        samples.push(DriftSample { time_s: t, delay_ps: diurnal + slow + fast });
    }
    Ok(DriftTrace { samples, preset: Some(preset.clone()), seed: Some(seed) })
}

/// Stokes-vector random walks of the two signal photons arriving at Charlie.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationTrace {
    pub times_s: Vec<f64>,
    pub stokes_a: Vec<[f64; 3]>,
    pub stokes_b: Vec<[f64; 3]>,
}

impl PolarizationTrace {
    /// Pairwise overlap `|⟨p_A|p_B⟩|² = (1 + s_A·s_B)/2` per sample.
    pub fn overlaps(&self) -> Vec<f64> {
        self.stokes_a.iter().zip(&self.stokes_b).map(|(a, b)| stokes_overlap(a, b)).collect()
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }
}

pub fn stokes_overlap(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0.5 * (1.0 + dot(a, b))).clamp(0.0, 1.0)
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn diffuse<R: Rng>(s: [f64; 3], step: f64, rng: &mut R) -> [f64; 3] {
    let g: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let gs = dot(&g, &s);
    normalize([
        s[0] + step * (g[0] - gs * s[0]),
        s[1] + step * (g[1] - gs * s[1]),
        s[2] + step * (g[2] - gs * s[2]),
    ])
}

/// Brownian motion of both Stokes vectors on the Poincaré sphere with
/// diffusion constant `rate` (rad²/s), starting aligned.
pub fn polarization_drift(duration_s: f64, dt_s: f64, rate: f64, seed: u64) -> Result<PolarizationTrace> {
    if !(duration_s > 0.0) || !(dt_s > 0.0) || !(rate >= 0.0) {
        return Err(invalid("polarization drift needs positive duration/step and non-negative rate"));
    }
    let mut rng = rng::stream(seed, &[tag::POLARIZATION]);
    let steps = (duration_s / dt_s).floor() as usize;
    let step = (2.0 * rate * dt_s).sqrt();
    let mut a = [0.0, 0.0, 1.0];
    let mut b = a;
    let mut out = PolarizationTrace {
        times_s: Vec::with_capacity(steps + 1),
        stokes_a: Vec::with_capacity(steps + 1),
        stokes_b: Vec::with_capacity(steps + 1),
    };
    for i in 0..=steps {
        if i > 0 && step > 0.0 {
            a = diffuse(a, step, &mut rng);
            b = diffuse(b, step, &mut rng);
        }
        out.times_s.push(i as f64 * dt_s);
        out.stokes_a.push(a);
        out.stokes_b.push(b);
    }
    Ok(out)
}
