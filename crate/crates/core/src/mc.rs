//! Frame-level Monte Carlo of the swapping and Franson experiments, plus the
//! analytic rate budget it is checked against.
//!
//! A frame is one pump train of `n` bins. Frames in which either source emits
//! nothing, or a signal photon is lost, cannot contribute to a herald, so they
//! are counted with binomial draws and only the survivors are simulated photon
//! by photon. Work is partitioned into fixed-size chunks, each with its own
//! counter-derived RNG stream, which keeps results independent of the number
//! of worker threads.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    db_to_transmission, generate_drift, polarization_drift, survival_probability, DriftTrace,
};
use crate::detection::{ClickRecord, DetectorConfig};
use crate::error::{invalid, Error, Result};
use crate::optics::{herald_decision, hom_overlap, mzi_outputs, BellOutcome, BsmDetector, ClickPattern, MziPort};
use crate::rng::{self, tag};
use crate::scenario::{Experiment, ScenarioConfig, SourceConfig};
use crate::stabilization::{polarization_step, run_delay_loop};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Fringe visibility left by multi-pair emission at mean pair number `mu`.
///
/// `mu` must be non-negative.
pub fn visibility_degradation(mu: f64) -> f64 {
    debug_assert!(mu >= 0.0);
    1.0 / (1.0 + 2.0 * mu)
}

/// Probability that a frame's coincidence is accidental, chosen so that
/// mixing in a fully dephased event at this rate scales V by `visibility_degradation`.
pub fn accidental_probability(mu: f64) -> f64 {
    2.0 * mu / (1.0 + 2.0 * mu)
}

/// RMS of the per-bin pump phase step caused by pump wavelength instability.
pub fn phase_noise_sigma(src: &SourceConfig) -> f64 {
    let dl = src.wavelength_stability_pm * 1e-12;
    let l = src.wavelength_nm * 1e-9;
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * dl * src.tau_s() / (l * l)
}

/// Scale on the raw phase-noise σ such that the four-fold visibility penalty
/// `exp(-2 s² (σa² + σb²))` equals `target`.
pub fn calibrate_phase_noise_scale(alice: &SourceConfig, bob: &SourceConfig, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(invalid("phase-noise target must lie in (0, 1]"));
    }
    let var = phase_noise_sigma(alice).powi(2) + phase_noise_sigma(bob).powi(2);
    if var == 0.0 {
        return Ok(0.0);
    }
    Ok((-target.ln() / (2.0 * var)).sqrt())
}

/// One pump-phase offset for `frame` of a source, deterministic in `seed`.
pub fn sample_phase_noise(src: &SourceConfig, scale: f64, seed: u64, frame: u64) -> f64 {
    let mut r = rng::stream(seed, &[tag::PHASE_NOISE, frame]);
    let z: f64 = StandardNormal.sample(&mut r);
    z * scale * phase_noise_sigma(src)
}

/// Phase-noise scale in effect for a scenario (0 when the channel is off).
pub fn effective_phase_noise_scale(cfg: &ScenarioConfig) -> Result<f64> {
    if !cfg.channels.phase_noise {
        return Ok(0.0);
    }
    match cfg.channels.phase_noise_scale {
        Some(s) => Ok(s),
        None => calibrate_phase_noise_scale(&cfg.alice, &cfg.bob, cfg.channels.phase_noise_target),
    }
}

fn emission_probability(src: &SourceConfig) -> f64 {
    1.0 - (-src.mu * src.n_bins as f64).exp()
}

/// Per-photon survival of the four photon paths, detector efficiency included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSurvival {
    pub alice_signal: f64,
    pub bob_signal: f64,
    pub alice_idler: f64,
    pub bob_idler: f64,
}

impl PathSurvival {
    pub fn of(cfg: &ScenarioConfig) -> Result<Self> {
        let eta = cfg.detector.efficiency;
        let f = cfg.insertion.filter_db;
        let m = cfg.insertion.mzi_excess_db;
        // Franson runs put the signal through Charlie's analyzer too.
        let sig_extra = if cfg.experiment == Experiment::Swapping { f } else { f + m };
        Ok(Self {
            alice_signal: survival_probability(&cfg.links.alice_signal, sig_extra)? * eta,
            bob_signal: survival_probability(&cfg.links.bob_signal, sig_extra)? * eta,
            alice_idler: survival_probability(&cfg.links.alice_idler, f + m)? * eta,
            bob_idler: survival_probability(&cfg.links.bob_idler, f + m)? * eta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineItem {
    pub name: String,
    pub factor: f64,
    /// Loss in dB when the item is a transmission.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_db: Option<f64>,
}

fn item(name: &str, factor: f64) -> LineItem {
    LineItem { name: name.into(), factor, loss_db: None }
}

fn loss_item(name: &str, db: f64) -> LineItem {
    LineItem { name: name.into(), factor: db_to_transmission(db), loss_db: Some(db) }
}

/// Expected event rates as a product of line items. For the swapping
/// experiment `heralds_per_s` is the product of the first `herald_items`
/// items and `events_per_s` the product of all of them (central-slot
/// four-folds, all port pairs). For Franson runs `events_per_s` counts
/// central-slot two-folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub experiment: Experiment,
    pub items: Vec<LineItem>,
    pub herald_items: usize,
    pub pairs_per_s: [f64; 2],
    pub heralds_per_s: f64,
    pub events_per_s: f64,
    pub events_per_h: f64,
    /// Share of `events_per_s` landing on one analyzer port pair, fringe-averaged.
    pub per_port_pair_fraction: f64,
    pub total_link_db: f64,
}

pub fn rate_budget(cfg: &ScenarioConfig) -> Result<RateBudget> {
    cfg.validate()?;
    let a = &cfg.alice;
    let n = a.n_bins as f64;
    let eta = cfg.detector.efficiency;
    let f = cfg.insertion.filter_db;
    let m = cfg.insertion.mzi_excess_db;
    let mut items = vec![item("frame_rate_hz", a.clock_rate_hz / n)];
    let herald_items;
    let total_link_db;
    match cfg.experiment {
        Experiment::Swapping => {
            items.push(item("both_sources_emit", emission_probability(a) * emission_probability(&cfg.bob)));
            items.push(item("psi_minus_projection", (n - 1.0) / (n * n)));
            items.push(loss_item("alice_signal_link", cfg.links.alice_signal.total_db()));
            items.push(loss_item("bob_signal_link", cfg.links.bob_signal.total_db()));
            items.push(loss_item("signal_insertion", 2.0 * f));
            items.push(item("bsm_detectors", eta * eta));
            herald_items = items.len();
            items.push(loss_item("alice_idler_link", cfg.links.alice_idler.total_db()));
            items.push(loss_item("bob_idler_link", cfg.links.bob_idler.total_db()));
            items.push(loss_item("idler_insertion", 2.0 * (f + m)));
            items.push(item("idler_detectors", eta * eta));
            items.push(item("central_slot", 0.25));
            total_link_db = cfg.links.total_db();
        }
        Experiment::FransonAlice | Experiment::FransonBob => {
            let (src, sig, idl) = if cfg.experiment == Experiment::FransonAlice {
                (&cfg.alice, &cfg.links.alice_signal, &cfg.links.alice_idler)
            } else {
                (&cfg.bob, &cfg.links.bob_signal, &cfg.links.bob_idler)
            };
            items.push(item("source_emits", emission_probability(src)));
            items.push(loss_item("signal_link", sig.total_db()));
            items.push(loss_item("idler_link", idl.total_db()));
            items.push(loss_item("insertion", 2.0 * (f + m)));
            items.push(item("detectors", eta * eta));
            herald_items = items.len();
            items.push(item("central_slot", (n - 1.0) / (2.0 * n)));
            total_link_db = sig.total_db() + idl.total_db();
        }
    }
    let heralds_per_s: f64 = items[..herald_items].iter().map(|i| i.factor).product();
    let events_per_s: f64 = items.iter().map(|i| i.factor).product();
    Ok(RateBudget {
        experiment: cfg.experiment,
        items,
        herald_items,
        pairs_per_s: [a.clock_rate_hz * a.mu, cfg.bob.clock_rate_hz * cfg.bob.mu],
        heralds_per_s,
        events_per_s,
        events_per_h: events_per_s * 3600.0,
        per_port_pair_fraction: 0.25,
        total_link_db,
    })
}

/// Filter insertion loss that brings the budget's event rate to `target_per_h`.
pub fn calibrate_filter_loss(cfg: &ScenarioConfig, target_per_h: f64) -> Result<f64> {
    if !(target_per_h > 0.0) {
        return Err(invalid("target rate must be positive"));
    }
    let now = rate_budget(cfg)?.events_per_h;
    if !(now > 0.0) {
        return Err(Error::InsufficientData("budget rate is zero at the current configuration".into()));
    }
    let photons = if cfg.experiment == Experiment::Swapping { 4.0 } else { 2.0 };
    let f = cfg.insertion.filter_db + 10.0 / photons * (now / target_per_h).log10();
    if f < 0.0 {
        return Err(invalid(format!("target {target_per_h}/h exceeds the lossless-filter rate {now:.3e}/h")));
    }
    Ok(f)
}

/// Event class of a two-photon analyzer outcome.
pub const CENTRAL: usize = 0;
/// Both photons in the same edge slot (Franson runs only).
pub const SIDE: usize = 1;
pub const OTHER: usize = 2;
const CLASS_LABELS: [&str; 3] = ["central", "side", "other"];

/// Accumulated counts of one chunk, sweep point or run. All fields add.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub frames: u64,
    pub eligible_frames: u64,
    pub simulated_frames: u64,
    pub heralds: u64,
    pub would_be_psi_plus: u64,
    pub unheraldable: u64,
    pub no_herald: u64,
    /// Heralds with exactly one idler detected.
    pub threefold: u64,
    /// `[first port][second port][class]`, ports indexed `+` = 0, `-` = 1.
    /// Swapping: first = Alice, second = Bob. Franson: first = Charlie (signal),
    /// second = the local idler analyzer.
    pub counts: [[[u64; 3]; 2]; 2],
}

impl Tally {
    pub fn add(&mut self, o: &Tally) {
        self.frames += o.frames;
        self.eligible_frames += o.eligible_frames;
        self.simulated_frames += o.simulated_frames;
        self.heralds += o.heralds;
        self.would_be_psi_plus += o.would_be_psi_plus;
        self.unheraldable += o.unheraldable;
        self.no_herald += o.no_herald;
        self.threefold += o.threefold;
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..3 {
                    self.counts[i][j][c] += o.counts[i][j][c];
                }
            }
        }
    }

    pub fn count(&self, first: MziPort, second: MziPort, class: usize) -> u64 {
        self.counts[first.index()][second.index()][class]
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.counts.iter().flatten().map(|c| c[class]).sum()
    }

    /// Counts keyed like `"A+B-:central"`.
    pub fn table(&self, first: &str, second: &str) -> BTreeMap<String, u64> {
        let mut t = BTreeMap::new();
        for p in [MziPort::Plus, MziPort::Minus] {
            for q in [MziPort::Plus, MziPort::Minus] {
                for (c, label) in CLASS_LABELS.iter().enumerate() {
                    let v = self.count(p, q, c);
                    if v > 0 {
                        t.insert(format!("{first}{}{second}{}:{label}", p.label(), q.label()), v);
                    }
                }
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    /// Sweep value as configured (phase or temperature).
    pub control: f64,
    pub phase_alice: f64,
    pub phase_bob: f64,
    pub phase_charlie: f64,
    pub duration_s: f64,
    /// Mean HOM indistinguishability ξ over the point.
    pub mean_indistinguishability: f64,
    pub tally: Tally,
    pub twofold: BTreeMap<String, u64>,
    pub fourfold: BTreeMap<String, u64>,
    pub heralds_per_s: f64,
    pub events_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub config_hash: String,
    pub frames_per_point: u64,
    pub phase_noise_scale: f64,
    /// σ of the residual (or raw, loop open) delay when drift is simulated.
    pub delay_residual_sigma_ps: Option<f64>,
    pub points: Vec<PointSummary>,
    pub totals: Tally,
    pub heralds_per_s: f64,
    pub events_per_s: f64,
}

impl RunSummary {
    /// Central-slot counts per sweep point summed over the given port pairs.
    pub fn fringe(&self, ports: &[(MziPort, MziPort)]) -> crate::analysis::FringeData {
        let pts = self
            .points
            .iter()
            .map(|p| crate::analysis::FringePoint {
                control: p.control,
                counts: ports.iter().map(|&(a, b)| p.tally.count(a, b, CENTRAL)).sum::<u64>() as f64,
                seconds: p.duration_s,
            })
            .collect();
        crate::analysis::FringeData::new(pts)
    }

    /// Same-port fringe (`++` plus `--`), the port pairs in phase with each other.
    pub fn same_port_fringe(&self) -> crate::analysis::FringeData {
        self.fringe(&[(MziPort::Plus, MziPort::Plus), (MziPort::Minus, MziPort::Minus)])
    }

    pub fn total_duration_s(&self) -> f64 {
        self.points.iter().map(|p| p.duration_s).sum()
    }
}

/// Time-dependent HOM indistinguishability of the two signal photons.
struct Timeline {
    static_delay_ps: f64,
    static_pol: f64,
    coherence_time_ps: f64,
    delay: Option<DriftTrace>,
    pol: Option<(Vec<f64>, Vec<f64>)>,
}

impl Timeline {
    fn build(cfg: &ScenarioConfig, total_s: f64) -> Result<Self> {
        let mut tl = Timeline {
            static_delay_ps: cfg.optics.static_delay_ps,
            static_pol: cfg.optics.static_pol_overlap,
            coherence_time_ps: cfg.optics.coherence_time_ps,
            delay: None,
            pol: None,
        };
        if cfg.drift.enabled && cfg.experiment == Experiment::Swapping {
            let d = &cfg.drift;
            let span = total_s.max(d.sample_dt_s);
            let raw = generate_drift(&d.weather, span, d.sample_dt_s, cfg.seed)?;
            let log = run_delay_loop(&raw, &d.stabilization, cfg.seed)?;
            tl.delay = Some(log.residual_trace());
            if d.polarization_rate > 0.0 {
                let pt = polarization_drift(span, d.sample_dt_s, d.polarization_rate, cfg.seed)?;
                let ov = polarization_step(&pt, &d.polarization)?;
                tl.pol = Some((pt.times_s, ov));
            }
        }
        Ok(tl)
    }

    fn xi_at(&self, t: f64) -> f64 {
        let dt = self.static_delay_ps + self.delay.as_ref().map_or(0.0, |d| d.delay_at(t));
        let pol = self.pol.as_ref().map_or(1.0, |(ts, ov)| {
            let i = ts.partition_point(|&x| x <= t).saturating_sub(1);
            ov[i.min(ov.len() - 1)]
        });
        hom_overlap(dt, self.coherence_time_ps) * pol * self.static_pol
    }

    fn residual_sigma(&self) -> Option<f64> {
        let d = self.delay.as_ref()?;
        let n = d.samples.len() as f64;
        let mean = d.samples.iter().map(|s| s.delay_ps).sum::<f64>() / n;
        Some((d.samples.iter().map(|s| (s.delay_ps - mean).powi(2)).sum::<f64>() / n).sqrt())
    }
}

/// Everything a chunk needs, fixed per sweep point.
#[derive(Clone, Debug)]
struct PointCtx {
    experiment: Experiment,
    n: usize,
    tau_ps: f64,
    p_eligible: f64,
    p_signals: f64,
    p_idler: [f64; 2],
    pump_theta: [f64; 2],
    coherence: [f64; 2],
    noise_sigma: [f64; 2],
    accidental: f64,
    phase_first: f64,
    phase_second: f64,
    p_dark: f64,
    dead_time_ps: f64,
    spool: bool,
}

impl PointCtx {
    fn new(cfg: &ScenarioConfig, phases: &crate::scenario::AnalyzerPhases, scale: f64, spool: bool) -> Result<Self> {
        let surv = PathSurvival::of(cfg)?;
        let n = cfg.alice.n_bins;
        let tau_s = cfg.alice.tau_s();
        let frame_s = n as f64 * tau_s;
        let det: &DetectorConfig = &cfg.detector;
        let multipair = |mu: f64| if cfg.channels.multipair { accidental_probability(mu) } else { 0.0 };
        let ctx = match cfg.experiment {
            Experiment::Swapping => PointCtx {
                experiment: cfg.experiment,
                n,
                tau_ps: tau_s * 1e12,
                p_eligible: emission_probability(&cfg.alice) * emission_probability(&cfg.bob),
                p_signals: surv.alice_signal * surv.bob_signal,
                p_idler: [surv.alice_idler, surv.bob_idler],
                pump_theta: [cfg.alice.theta, cfg.bob.theta],
                coherence: [cfg.alice.visibility, cfg.bob.visibility],
                noise_sigma: [scale * phase_noise_sigma(&cfg.alice), scale * phase_noise_sigma(&cfg.bob)],
                accidental: multipair(0.5 * (cfg.alice.mu + cfg.bob.mu)),
                phase_first: phases.alice,
                phase_second: phases.bob,
                p_dark: det.dark_rate_hz * frame_s,
                dead_time_ps: det.dead_time_ps,
                spool,
            },
            Experiment::FransonAlice | Experiment::FransonBob => {
                let alice = cfg.experiment == Experiment::FransonAlice;
                let src = if alice { &cfg.alice } else { &cfg.bob };
                let (s, i, local) = if alice {
                    (surv.alice_signal, surv.alice_idler, phases.alice)
                } else {
                    (surv.bob_signal, surv.bob_idler, phases.bob)
                };
                PointCtx {
                    experiment: cfg.experiment,
                    n: src.n_bins,
                    tau_ps: tau_s * 1e12,
                    p_eligible: emission_probability(src),
                    p_signals: s * i,
                    p_idler: [1.0, 1.0],
                    pump_theta: [src.theta, src.theta],
                    coherence: [src.visibility, src.visibility],
                    noise_sigma: [scale * phase_noise_sigma(src), 0.0],
                    accidental: multipair(src.mu),
                    phase_first: phases.charlie,
                    phase_second: local,
                    p_dark: 0.0,
                    dead_time_ps: det.dead_time_ps,
                    spool,
                }
            }
        };
        Ok(ctx)
    }
}

/// Per-chunk output: counts plus spooled clicks (times relative to the chunk start).
#[derive(Default)]
struct ChunkOut {
    tally: Tally,
    clicks: Vec<(u64, &'static str, f64)>,
}

const ALICE_LABELS: [&str; 2] = ["A+", "A-"];
const BOB_LABELS: [&str; 2] = ["B+", "B-"];
const CHARLIE_LABELS: [&str; 2] = ["C+", "C-"];

/// Source amplitude phases `2k(θ+δ)` for bins `lo..lo+len`, fully randomized
/// when `scramble` is set.
#[inline]
fn bin_phase<R: Rng>(rng: &mut R, k: usize, theta: f64, scramble: bool) -> f64 {
    if scramble {
        rng.random::<f64>() * std::f64::consts::TAU
    } else {
        2.0 * k as f64 * theta
    }
}

/// Draw `(first port, first slot, second port, second slot)` for two photons
/// sent through analyzers at `phi1`/`phi2`. Slots are reported relative to
/// `base1`/`base2`, which must be at most every term's bin and within two of it.
fn sample_analyzers<R: Rng>(
    rng: &mut R,
    terms: &[(usize, usize, Complex64)],
    phi1: f64,
    phi2: f64,
    base1: usize,
    base2: usize,
) -> (usize, usize, usize, usize) {
    let mut amp = [Complex64::new(0.0, 0.0); 36];
    for &(b1, b2, c) in terms {
        for (p1, s1, a1) in mzi_outputs(b1, phi1) {
            for (p2, s2, a2) in mzi_outputs(b2, phi2) {
                let idx = ((p1.index() * 3 + (s1 - base1)) * 2 + p2.index()) * 3 + (s2 - base2);
                amp[idx] += c * a1 * a2;
            }
        }
    }
    let total: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = 35;
    for (i, a) in amp.iter().enumerate() {
        u -= a.norm_sqr();
        if u < 0.0 {
            pick = i;
            break;
        }
    }
    let s2 = pick % 3;
    let p2 = (pick / 3) % 2;
    let s1 = (pick / 6) % 3;
    let p1 = pick / 18;
    (p1, base1 + s1, p2, base2 + s2)
}

fn swap_frame<R: Rng>(rng: &mut R, ctx: &PointCtx, xi: f64, frame: u64, out: &mut ChunkOut) {
    use BsmDetector::*;
    let n = ctx.n;
    let k1 = rng.random_range(0..n);
    let k2 = rng.random_range(0..n);
    let indist = rng.random::<f64>() < xi * xi;
    let det = |r: &mut R| if r.random::<bool>() { D1 } else { D2 };
    let (d1, d2) = if k1 == k2 && indist {
        let d = det(rng);
        (d, d)
    } else {
        (det(rng), det(rng))
    };
    let mut clicks = [(d1, k1), (d2, k2), (D1, 0), (D2, 0)];
    let mut m = 2;
    for d in [D1, D2] {
        if ctx.p_dark > 0.0 && rng.random::<f64>() < ctx.p_dark {
            clicks[m] = (d, rng.random_range(0..n));
            m += 1;
        }
    }
    let pattern = ClickPattern::from_bins(ctx.tau_ps, &clicks[..m]);
    if ctx.spool {
        for c in &pattern.clicks {
            out.clicks.push((frame, if c.detector == D1 { "D1" } else { "D2" }, c.time_ps));
        }
    }
    let k = match herald_decision(&pattern, ctx.dead_time_ps) {
        BellOutcome::HeraldPsiMinus(k) => k,
        BellOutcome::WouldBePsiPlus(_) => {
            out.tally.would_be_psi_plus += 1;
            return;
        }
        BellOutcome::Unheraldable => {
            out.tally.unheraldable += 1;
            return;
        }
        BellOutcome::NoHerald => {
            out.tally.no_herald += 1;
            return;
        }
    };
    out.tally.heralds += 1;
    let ra = rng.random::<f64>() < ctx.p_idler[0];
    let rb = rng.random::<f64>() < ctx.p_idler[1];
    if !(ra && rb) {
        if ra || rb {
            out.tally.threefold += 1;
        }
        return;
    }

    let coherent = indist && k1.abs_diff(k2) == 1 && k1.min(k2) == k;
    let mut terms = [(k1, k2, Complex64::new(1.0, 0.0)), (0, 0, Complex64::new(0.0, 0.0))];
    let mut nt = 1;
    if coherent {
        // Idler state ∝ u2(d_late)·a_k·b_{k+1} |k,k+1⟩ + u2(d_early)·a_{k+1}·b_k |k+1,k⟩
        let (d_early, d_late) = if k1 == k { (d1, d2) } else { (d2, d1) };
        let sign = |d: BsmDetector| if d == D1 { 1.0 } else { -1.0 };
        let da: f64 = rng.sample::<f64, _>(StandardNormal) * ctx.noise_sigma[0];
        let db: f64 = rng.sample::<f64, _>(StandardNormal) * ctx.noise_sigma[1];
        let sa = rng.random::<f64>() >= ctx.coherence[0];
        let sb = rng.random::<f64>() >= ctx.coherence[1];
        let ta = ctx.pump_theta[0] + da;
        let tb = ctx.pump_theta[1] + db;
        let mut ph1 = bin_phase(rng, k, ta, sa) + bin_phase(rng, k + 1, tb, sb);
        let ph2 = bin_phase(rng, k + 1, ta, sa) + bin_phase(rng, k, tb, sb);
        if ctx.accidental > 0.0 && rng.random::<f64>() < ctx.accidental {
            ph1 += rng.random::<f64>() * std::f64::consts::TAU;
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        terms[0] = (k, k + 1, Complex64::from_polar(h * sign(d_late), ph1));
        terms[1] = (k + 1, k, Complex64::from_polar(h * sign(d_early), ph2));
        nt = 2;
    }
    let base1 = terms[..nt].iter().map(|t| t.0).min().unwrap_or(0);
    let base2 = terms[..nt].iter().map(|t| t.1).min().unwrap_or(0);
    let (pa, sa, pb, sb) = sample_analyzers(rng, &terms[..nt], ctx.phase_first, ctx.phase_second, base1, base2);
    let class = if sa == k + 1 && sb == k + 1 { CENTRAL } else { OTHER };
    out.tally.counts[pa][pb][class] += 1;
    if ctx.spool {
        out.clicks.push((frame, ALICE_LABELS[pa], sa as f64 * ctx.tau_ps));
        out.clicks.push((frame, BOB_LABELS[pb], sb as f64 * ctx.tau_ps));
    }
}

fn franson_frame<R: Rng>(rng: &mut R, ctx: &PointCtx, frame: u64, amp: &mut Vec<Complex64>, out: &mut ChunkOut) {
    let n = ctx.n;
    let w = n + 1;
    amp.clear();
    amp.resize(4 * w * w, Complex64::new(0.0, 0.0));
    let delta: f64 = if ctx.noise_sigma[0] > 0.0 {
        rng.sample::<f64, _>(StandardNormal) * ctx.noise_sigma[0]
    } else {
        0.0
    };
    let scramble = rng.random::<f64>() >= ctx.coherence[0]
        || (ctx.accidental > 0.0 && rng.random::<f64>() < ctx.accidental);
    let norm = 1.0 / (n as f64).sqrt();
    for k in 0..n {
        let a = Complex64::from_polar(norm, bin_phase(rng, k, ctx.pump_theta[0] + delta, scramble));
        for (ps, js, cs) in mzi_outputs(k, ctx.phase_first) {
            for (pi, ji, ci) in mzi_outputs(k, ctx.phase_second) {
                amp[((ps.index() * w + js) * 2 + pi.index()) * w + ji] += a * cs * ci;
            }
        }
    }
    let total: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = amp.len() - 1;
    for (i, a) in amp.iter().enumerate() {
        u -= a.norm_sqr();
        if u < 0.0 {
            pick = i;
            break;
        }
    }
    let ji = pick % w;
    let pi = (pick / w) % 2;
    let js = (pick / (2 * w)) % w;
    let ps = pick / (2 * w * w);
    let class = if js != ji {
        OTHER
    } else if js >= 1 && js < n {
        CENTRAL
    } else {
        SIDE
    };
    out.tally.counts[ps][pi][class] += 1;
    if ctx.spool {
        let local = if ctx.experiment == Experiment::FransonAlice { ALICE_LABELS } else { BOB_LABELS };
        out.clicks.push((frame, CHARLIE_LABELS[ps], js as f64 * ctx.tau_ps));
        out.clicks.push((frame, local[pi], ji as f64 * ctx.tau_ps));
    }
}

fn run_chunk(ctx: &PointCtx, seed: u64, point: usize, chunk: u64, frames: u64, xi: f64) -> Result<ChunkOut> {
    let mut rng = rng::stream(seed, &[tag::FRAMES, point as u64, chunk]);
    let mut out = ChunkOut::default();
    out.tally.frames = frames;
    let bin = |n: u64, p: f64| Binomial::new(n, p.clamp(0.0, 1.0)).map_err(|e| invalid(e.to_string()));
    let eligible = bin(frames, ctx.p_eligible)?.sample(&mut rng);
    let survivors = bin(eligible, ctx.p_signals)?.sample(&mut rng);
    out.tally.eligible_frames = eligible;
    out.tally.simulated_frames = survivors;
    // survivors are spread evenly over the chunk when clicks are spooled
    let stride = if survivors > 0 { frames / survivors } else { 0 };
    let mut amp = Vec::new();
    for j in 0..survivors {
        let frame = j * stride;
        match ctx.experiment {
            Experiment::Swapping => swap_frame(&mut rng, ctx, xi, frame, &mut out),
            _ => franson_frame(&mut rng, ctx, frame, &mut amp, &mut out),
        }
    }
    Ok(out)
}

/// Run every sweep point of `cfg`. `workers` overrides `cfg.engine.workers`
/// when given; the result does not depend on it.
pub fn run_scenario(cfg: &ScenarioConfig, workers: Option<usize>) -> Result<RunSummary> {
    run_inner(cfg, workers, false).map(|(s, _)| s)
}

/// As [`run_scenario`], also returning every simulated click. Times are
/// absolute within the run (ps); trial ids are global frame indices.
pub fn run_scenario_spooled(cfg: &ScenarioConfig, workers: Option<usize>) -> Result<(RunSummary, Vec<ClickRecord>)> {
    run_inner(cfg, workers, true)
}

fn run_inner(cfg: &ScenarioConfig, workers: Option<usize>, spool: bool) -> Result<(RunSummary, Vec<ClickRecord>)> {
    cfg.validate()?;
    let scale = effective_phase_noise_scale(cfg)?;
    let n = cfg.alice.n_bins;
    let frame_s = n as f64 / cfg.alice.clock_rate_hz;
    let d = cfg.sweep.duration_per_point_s;
    let frames_per_point = (d / frame_s).round() as u64;
    if frames_per_point == 0 {
        return Err(invalid("sweep.duration_per_point_s is shorter than one frame"));
    }
    let n_points = cfg.sweep.values.len();
    let timeline = Timeline::build(cfg, d * n_points as f64)?;
    let chunk = cfg.engine.chunk_frames;
    let n_chunks = frames_per_point.div_ceil(chunk);

    let ctxs = cfg
        .sweep
        .values
        .iter()
        .map(|&v| PointCtx::new(cfg, &cfg.sweep.phases_at(v), scale, spool))
        .collect::<Result<Vec<_>>>()?;
    let mut tasks = Vec::with_capacity(n_points * n_chunks as usize);
    for p in 0..n_points {
        for c in 0..n_chunks {
            let frames = chunk.min(frames_per_point - c * chunk);
            let t_mid = p as f64 * d + (c as f64 * chunk as f64 + 0.5 * frames as f64) * frame_s;
            tasks.push((p, c, frames, timeline.xi_at(t_mid)));
        }
    }

    let work = || -> Result<Vec<ChunkOut>> {
        tasks
            .par_iter()
            .map(|&(p, c, frames, xi)| run_chunk(&ctxs[p], cfg.seed, p, c, frames, xi))
            .collect()
    };
    let threads = workers.unwrap_or(cfg.engine.workers);
    let outs = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(work)?
    } else {
        work()?
    };

    let (first, second) = match cfg.experiment {
        Experiment::Swapping => ("A", "B"),
        Experiment::FransonAlice => ("C", "A"),
        Experiment::FransonBob => ("C", "B"),
    };
    let frame_ps = frame_s * 1e12;
    let mut points: Vec<PointSummary> = Vec::with_capacity(n_points);
    let mut clicks = Vec::new();
    let mut totals = Tally::default();
    for (p, &v) in cfg.sweep.values.iter().enumerate() {
        let mut t = Tally::default();
        let mut xi_sum = 0.0;
        for (i, (&(_, c, frames, xi), out)) in tasks.iter().zip(&outs).enumerate() {
            if tasks[i].0 != p {
                continue;
            }
            t.add(&out.tally);
            xi_sum += xi * frames as f64;
            for &(f, det, time) in &out.clicks {
                let global = p as u64 * frames_per_point + c * chunk + f;
                clicks.push(ClickRecord {
                    trial_id: global,
                    detector_id: det.to_string(),
                    time_ps: global as f64 * frame_ps + time,
                });
            }
        }
        totals.add(&t);
        let ph = cfg.sweep.phases_at(v);
        let (twofold, fourfold) = match cfg.experiment {
            Experiment::Swapping => (BTreeMap::new(), t.table(first, second)),
            _ => (t.table(first, second), BTreeMap::new()),
        };
        let events = t.class_total(CENTRAL) as f64;
        points.push(PointSummary {
            index: p,
            control: v,
            phase_alice: ph.alice,
            phase_bob: ph.bob,
            phase_charlie: ph.charlie,
            duration_s: d,
            mean_indistinguishability: xi_sum / frames_per_point as f64,
            heralds_per_s: t.heralds as f64 / d,
            events_per_s: events / d,
            tally: t,
            twofold,
            fourfold,
        });
    }
    clicks.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    let total_s = d * n_points as f64;
    let summary = RunSummary {
        name: cfg.name.clone(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        frames_per_point,
        phase_noise_scale: scale,
        delay_residual_sigma_ps: timeline.residual_sigma(),
        heralds_per_s: totals.heralds as f64 / total_s,
        events_per_s: totals.class_total(CENTRAL) as f64 / total_s,
        points,
        totals,
    };
    Ok((summary, clicks))
}
