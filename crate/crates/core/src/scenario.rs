//! Scenario file schema.
//!
//! Scenarios are TOML documents. Unknown keys are rejected and every section
//! except `name`, `experiment` and `sweep.values` has defaults, so a minimal
//! file only states what differs from the field-test configuration.
//!
//! ```toml
//! name = "fig4"
//! experiment = "swapping"          # or "franson_alice" / "franson_bob"
//! seed = 7
//!
//! [alice]
//! mu = 0.023
//! visibility = 0.898
//!
//! [sweep]
//! scan = "alice"                   # analyzer being swept: alice | bob | charlie
//! unit = "phase"                   # or "temperature" (uses sweep.calibration)
//! values = [0.0, 0.785, 1.571]
//! duration_per_point_s = 0.5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{temperature_to_phase, ThermalCalibration};
use crate::channel::{LinkBudget, WeatherPreset};
use crate::detection::{CoincidenceWindow, DetectorConfig, TdcConfig};
use crate::error::{invalid, Error, Result};
use crate::stabilization::{DelayLoopConfig, PolarizationController};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Four-fold swapping run: BSM at Charlie, idler analyzers at Alice and Bob.
    Swapping,
    /// Two-fold Franson check of Alice's source (idler at Alice, signal at Charlie).
    FransonAlice,
    /// Two-fold Franson check of Bob's source.
    FransonBob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Mean pair number per time bin.
    pub mu: f64,
    pub n_bins: usize,
    pub clock_rate_hz: f64,
    pub coherence_time_pump_s: f64,
    pub wavelength_stability_pm: f64,
    pub wavelength_nm: f64,
    /// Franson visibility factor of the source.
    pub visibility: f64,
    /// Pump phase per bin step (rad).
    pub theta: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mu: 0.023,
            n_bins: 8,
            clock_rate_hz: 1e9,
            coherence_time_pump_s: 300e-6,
            wavelength_stability_pm: 0.18,
            wavelength_nm: 1550.0,
            visibility: 1.0,
            theta: 0.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self, who: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{who}: {m}")));
        if !(self.mu >= 0.0) {
            return bad("mu must be non-negative");
        }
        if self.n_bins == 0 {
            return bad("n_bins must be at least 1");
        }
        if !(self.clock_rate_hz > 0.0) {
            return bad("clock_rate_hz must be positive");
        }
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return bad("visibility must lie in (0, 1]");
        }
        if !(self.wavelength_stability_pm >= 0.0) || !(self.wavelength_nm > 0.0) {
            return bad("wavelength stability must be non-negative and wavelength positive");
        }
        if !(self.coherence_time_pump_s > 0.0) {
            return bad("coherence_time_pump_s must be positive");
        }
        Ok(())
    }

    pub fn tau_s(&self) -> f64 {
        1.0 / self.clock_rate_hz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Links {
    pub alice_signal: LinkBudget,
    pub bob_signal: LinkBudget,
    pub alice_idler: LinkBudget,
    pub bob_idler: LinkBudget,
}

impl Default for Links {
    fn default() -> Self {
        Self {
            alice_signal: LinkBudget::field_alice_signal(),
            bob_signal: LinkBudget::field_bob_signal(),
            alice_idler: LinkBudget::field_idler_coil(),
            bob_idler: LinkBudget::field_idler_coil(),
        }
    }
}

impl Links {
    pub fn lossless() -> Self {
        Self {
            alice_signal: LinkBudget::lossless(),
            bob_signal: LinkBudget::lossless(),
            alice_idler: LinkBudget::lossless(),
            bob_idler: LinkBudget::lossless(),
        }
    }

    pub fn total_db(&self) -> f64 {
        self.alice_signal.total_db() + self.bob_signal.total_db() + self.alice_idler.total_db() + self.bob_idler.total_db()
    }

    /// Every segment loss multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alice_signal: self.alice_signal.scaled(factor),
            bob_signal: self.bob_signal.scaled(factor),
            alice_idler: self.alice_idler.scaled(factor),
            bob_idler: self.bob_idler.scaled(factor),
        }
    }
}

/// Lumped per-photon insertion losses not covered by the fiber budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InsertionLosses {
    /// Filters, couplers and other passive optics on every photon path.
    pub filter_db: f64,
    /// Analyzer excess loss beyond its intrinsic port/slot splitting.
    pub mzi_excess_db: f64,
}

impl Default for InsertionLosses {
    fn default() -> Self {
        Self { filter_db: 0.0, mzi_excess_db: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsConfig {
    /// Signal-photon coherence time, intensity FWHM.
    pub coherence_time_ps: f64,
    /// Fixed Alice–Bob arrival offset added to any drift.
    pub static_delay_ps: f64,
    pub static_pol_overlap: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self { coherence_time_ps: 110.0, static_delay_ps: 0.0, static_pol_overlap: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Channels {
    /// Accidental channel from multi-pair emission.
    pub multipair: bool,
    /// Per-frame pump phase noise from wavelength instability.
    pub phase_noise: bool,
    /// Explicit phase-noise scale; when absent the scale is calibrated so the
    /// pump channel alone multiplies the four-fold visibility by `phase_noise_target`.
    pub phase_noise_scale: Option<f64>,
    pub phase_noise_target: f64,
}

impl Default for Channels {
    fn default() -> Self {
        Self { multipair: false, phase_noise: false, phase_noise_scale: None, phase_noise_target: 0.96 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub enabled: bool,
    pub weather: WeatherPreset,
    pub sample_dt_s: f64,
    pub stabilization: DelayLoopConfig,
    /// Polarization diffusion constant (rad²/s); zero keeps overlap static.
    pub polarization_rate: f64,
    pub polarization: PolarizationController,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            weather: WeatherPreset::cloudy(),
            sample_dt_s: 1.0,
            stabilization: DelayLoopConfig::default(),
            polarization_rate: 0.0,
            polarization: PolarizationController::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analyzer {
    Alice,
    Bob,
    Charlie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepUnit {
    Phase,
    Temperature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzerPhases {
    pub alice: f64,
    pub bob: f64,
    pub charlie: f64,
}

impl Default for AnalyzerPhases {
    fn default() -> Self {
        Self { alice: 0.0, bob: 0.0, charlie: 0.0 }
    }
}

impl AnalyzerPhases {
    pub fn get(&self, a: Analyzer) -> f64 {
        match a {
            Analyzer::Alice => self.alice,
            Analyzer::Bob => self.bob,
            Analyzer::Charlie => self.charlie,
        }
    }

    pub fn with(mut self, a: Analyzer, v: f64) -> Self {
        match a {
            Analyzer::Alice => self.alice = v,
            Analyzer::Bob => self.bob = v,
            Analyzer::Charlie => self.charlie = v,
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub scan: Analyzer,
    #[serde(default = "default_unit")]
    pub unit: SweepUnit,
    pub values: Vec<f64>,
    #[serde(default)]
    pub calibration: ThermalCalibration,
    /// Phases of the analyzers that are not swept (rad).
    #[serde(default)]
    pub fixed: AnalyzerPhases,
    pub duration_per_point_s: f64,
}

fn default_unit() -> SweepUnit {
    SweepUnit::Phase
}

impl SweepPlan {
    pub fn phase_of(&self, value: f64) -> f64 {
        match self.unit {
            SweepUnit::Phase => value,
            SweepUnit::Temperature => temperature_to_phase(value, &self.calibration),
        }
    }

    pub fn phases_at(&self, value: f64) -> AnalyzerPhases {
        self.fixed.with(self.scan, self.phase_of(value))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Frames per RNG partition. Results depend on this, not on `workers`.
    pub chunk_frames: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { workers: 0, chunk_frames: 1 << 22 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub alice: SourceConfig,
    #[serde(default)]
    pub bob: SourceConfig,
    #[serde(default)]
    pub links: Links,
    #[serde(default)]
    pub insertion: InsertionLosses,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub tdc: TdcConfig,
    #[serde(default)]
    pub window: CoincidenceWindow,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default)]
    pub channels: Channels,
    #[serde(default)]
    pub drift: DriftConfig,
    pub sweep: SweepPlan,
}

impl ScenarioConfig {
    /// Field configuration with a phase sweep of Alice's analyzer.
    pub fn new(name: impl Into<String>, experiment: Experiment, values: Vec<f64>, duration_per_point_s: f64) -> Self {
        let scan = match experiment {
            Experiment::Swapping => Analyzer::Alice,
            _ => Analyzer::Charlie,
        };
        Self {
            name: name.into(),
            experiment,
            seed: 0,
            engine: EngineConfig::default(),
            alice: SourceConfig::default(),
            bob: SourceConfig::default(),
            links: Links::default(),
            insertion: InsertionLosses::default(),
            detector: DetectorConfig::default(),
            tdc: TdcConfig::default(),
            window: CoincidenceWindow::default(),
            optics: OpticsConfig::default(),
            channels: Channels::default(),
            drift: DriftConfig::default(),
            sweep: SweepPlan {
                scan,
                unit: SweepUnit::Phase,
                values,
                calibration: ThermalCalibration::default(),
                fixed: AnalyzerPhases::default(),
                duration_per_point_s,
            },
        }
    }

    /// Lossless links, no insertion loss, ideal detectors, drift off.
    pub fn ideal(name: impl Into<String>, experiment: Experiment, values: Vec<f64>, duration_per_point_s: f64) -> Self {
        let mut c = Self::new(name, experiment, values, duration_per_point_s);
        c.links = Links::lossless();
        c.insertion = InsertionLosses { filter_db: 0.0, mzi_excess_db: 0.0 };
        c.detector = DetectorConfig::ideal();
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn config_hash(&self) -> String {
        crate::io::content_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.alice.validate("alice")?;
        self.bob.validate("bob")?;
        if self.experiment == Experiment::Swapping {
            if self.alice.n_bins != self.bob.n_bins {
                return Err(Error::Config("alice and bob must use the same n_bins".into()));
            }
            if (self.alice.theta - self.bob.theta).abs() > 1e-12 {
                return Err(Error::Config("alice and bob must share the pump phase theta".into()));
            }
        }
        if self.alice.clock_rate_hz != self.bob.clock_rate_hz {
            return Err(Error::Config("alice and bob clock rates differ".into()));
        }
        for (name, l) in [
            ("alice_signal", &self.links.alice_signal),
            ("bob_signal", &self.links.bob_signal),
            ("alice_idler", &self.links.alice_idler),
            ("bob_idler", &self.links.bob_idler),
        ] {
            l.validate().map_err(|e| Error::Config(format!("links.{name}: {e}")))?;
        }
        if !(self.insertion.filter_db >= 0.0) || !(self.insertion.mzi_excess_db >= 0.0) {
            return Err(Error::Config("insertion losses must be non-negative".into()));
        }
        self.detector.validate().map_err(|e| Error::Config(format!("detector: {e}")))?;
        self.tdc.validate().map_err(|e| Error::Config(format!("tdc: {e}")))?;
        self.window.validate().map_err(|e| Error::Config(format!("window: {e}")))?;
        if !(self.optics.coherence_time_ps > 0.0) || !(0.0..=1.0).contains(&self.optics.static_pol_overlap) {
            return Err(Error::Config("optics: coherence time must be positive, overlap in [0, 1]".into()));
        }
        if !(self.channels.phase_noise_target > 0.0 && self.channels.phase_noise_target <= 1.0) {
            return Err(Error::Config("channels.phase_noise_target must lie in (0, 1]".into()));
        }
        if let Some(s) = self.channels.phase_noise_scale {
            if !(s >= 0.0) {
                return Err(Error::Config("channels.phase_noise_scale must be non-negative".into()));
            }
        }
        if self.drift.enabled {
            self.drift.weather.validate().map_err(|e| Error::Config(format!("drift.weather: {e}")))?;
            if !(self.drift.sample_dt_s > 0.0) || !(self.drift.polarization_rate >= 0.0) {
                return Err(Error::Config("drift: sample_dt_s must be positive, polarization_rate non-negative".into()));
            }
            self.drift.stabilization.controller.validate().map_err(|e| Error::Config(format!("drift.stabilization: {e}")))?;
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        if !(self.sweep.duration_per_point_s > 0.0) {
            return Err(Error::Config("sweep.duration_per_point_s must be positive".into()));
        }
        if self.sweep.unit == SweepUnit::Temperature && self.sweep.calibration.coefficient_rad_per_c == 0.0 {
            return Err(invalid("sweep.calibration coefficient must be non-zero"));
        }
        let valid_scan = match self.experiment {
            Experiment::Swapping => matches!(self.sweep.scan, Analyzer::Alice | Analyzer::Bob),
            Experiment::FransonAlice => matches!(self.sweep.scan, Analyzer::Alice | Analyzer::Charlie),
            Experiment::FransonBob => matches!(self.sweep.scan, Analyzer::Bob | Analyzer::Charlie),
        };
        if !valid_scan {
            return Err(Error::Config(format!(
                "sweep.scan {:?} is not an analyzer of experiment {:?}",
                self.sweep.scan, self.experiment
            )));
        }
        if self.engine.chunk_frames == 0 {
            return Err(Error::Config("engine.chunk_frames must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
experiment = "swapping"
[sweep]
scan = "alice"
values = [0.0, 1.0]
duration_per_point_s = 1.0
"#;

    #[test]
    fn minimal_file_gets_field_defaults() {
        let c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.alice.mu, 0.023);
        assert_eq!(c.detector.dead_time_ps, 40_000.0);
        assert_eq!(c.tdc.resolution_ps, 4.0);
        assert!((c.links.total_db() - 29.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_reports_line() {
        let bad = MINIMAL.replace("[sweep]", "bogus = 3\n[sweep]");
        let err = ScenarioConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.config_hash(), back.config_hash());
    }

    #[test]
    fn inconsistent_sources_rejected() {
        let bad = MINIMAL.replace("[sweep]", "[bob]\nn_bins = 4\n[sweep]");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
        let bad = MINIMAL.replace("[sweep]", "[bob]\nclock_rate_hz = 2e9\n[sweep]");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
    }
}
