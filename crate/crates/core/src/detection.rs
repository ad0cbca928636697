//! SNSPD click generation, TDC quantization and coincidence counting.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: f64,
    /// Gaussian timing jitter σ; zero disables it.
    pub jitter_ps: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { efficiency: 0.70, dark_rate_hz: 100.0, dead_time_ps: 40_000.0, jitter_ps: 0.0 }
    }
}

impl DetectorConfig {
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_rate_hz: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid(format!("detector efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.dead_time_ps >= 0.0) || !(self.dark_rate_hz >= 0.0) || !(self.jitter_ps >= 0.0) {
            return Err(invalid("dead time, dark rate and jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdcConfig {
    pub resolution_ps: f64,
    pub sync_source: String,
}

impl Default for TdcConfig {
    fn default() -> Self {
        Self { resolution_ps: 4.0, sync_source: "Charlie 10 MHz".into() }
    }
}

impl TdcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps > 0.0 {
            Ok(())
        } else {
            Err(invalid("TDC resolution must be positive"))
        }
    }
}

/// Largest multiple of the TDC resolution not exceeding `t_ps`.
#[inline]
pub fn tdc_quantize(t_ps: f64, cfg: &TdcConfig) -> f64 {
    (t_ps / cfg.resolution_ps).floor() * cfg.resolution_ps
}

pub const DARK_TRIAL: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub trial_id: u64,
    pub detector_id: String,
    pub time_ps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time_ps: f64,
    pub survived: bool,
    pub trial_id: u64,
}

/// Clicks of one detector fed by `arrivals` over `[0, duration_ps)`.
///
/// Surviving photons click with probability `efficiency`; dark counts are
/// Poisson over the duration and uniform in time; then the TDC quantizes and
/// the dead-time filter runs.
pub fn detect(
    arrivals: &[Arrival],
    detector_id: &str,
    cfg: &DetectorConfig,
    tdc: &TdcConfig,
    duration_ps: f64,
    seed: u64,
) -> Result<Vec<ClickRecord>> {
    cfg.validate()?;
    tdc.validate()?;
    let mut rng = rng::stream(seed, &[tag::DETECT, hash_label(detector_id)]);
    let mut raw: Vec<ClickRecord> = Vec::new();
    for a in arrivals.iter().filter(|a| a.survived) {
        if rng.random::<f64>() < cfg.efficiency {
            let jitter = if cfg.jitter_ps > 0.0 { cfg.jitter_ps * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            raw.push(ClickRecord { trial_id: a.trial_id, detector_id: detector_id.into(), time_ps: a.time_ps + jitter });
        }
    }
    let mean_dark = cfg.dark_rate_hz * duration_ps.max(0.0) * 1e-12;
    if mean_dark > 0.0 {
        let n = Poisson::new(mean_dark).map_err(|e| invalid(e.to_string()))?.sample(&mut rng) as usize;
        for _ in 0..n {
            raw.push(ClickRecord {
                trial_id: DARK_TRIAL,
                detector_id: detector_id.into(),
                time_ps: rng.random::<f64>() * duration_ps,
            });
        }
    }
    for c in &mut raw {
        c.time_ps = tdc_quantize(c.time_ps, tdc);
    }
    raw.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    Ok(apply_dead_time(&raw, cfg.dead_time_ps))
}

fn hash_label(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Drop every click arriving less than `dead_time_ps` after the last
/// registered click on the same detector. Input must be time-sorted.
pub fn apply_dead_time(clicks: &[ClickRecord], dead_time_ps: f64) -> Vec<ClickRecord> {
    let mut last: BTreeMap<&str, f64> = BTreeMap::new();
    let mut out = Vec::with_capacity(clicks.len());
    for c in clicks {
        match last.get(c.detector_id.as_str()) {
            Some(&t) if c.time_ps - t < dead_time_ps => {}
            _ => {
                last.insert(&c.detector_id, c.time_ps);
                out.push(c.clone());
            }
        }
    }
    out
}

pub fn write_clicks_csv<W: Write>(w: W, header_comment: Option<&str>, clicks: &[ClickRecord]) -> Result<()> {
    let mut w = w;
    if let Some(c) = header_comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    for c in clicks {
        wr.serialize(c)?;
    }
    if clicks.is_empty() {
        wr.write_record(["trial_id", "detector_id", "time_ps"])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_clicks_csv<R: Read>(r: R) -> Result<Vec<ClickRecord>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Coincidence acceptance: clicks match when their time difference lies
/// within `±width/2` of `offset · bin_ps` for one of the allowed offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceWindow {
    pub width_ps: f64,
    pub bin_ps: f64,
    pub offsets: Vec<i64>,
}

impl Default for CoincidenceWindow {
    fn default() -> Self {
        Self { width_ps: 500.0, bin_ps: 1000.0, offsets: vec![0] }
    }
}

impl CoincidenceWindow {
    pub fn same_and_adjacent(width_ps: f64, bin_ps: f64) -> Self {
        Self { width_ps, bin_ps, offsets: vec![-1, 0, 1] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_ps > 0.0) || !(self.bin_ps > 0.0) || self.offsets.is_empty() {
            return Err(invalid("coincidence window needs positive width, bin and at least one offset"));
        }
        Ok(())
    }
}

/// Counts keyed `"det1,det2,...@off2,off3,..."`: the detector tuple in id
/// order, then the bin offset of every non-anchor detector relative to the
/// first one.
pub type CoincidenceTable = BTreeMap<String, u64>;

pub fn coincidence_key(detectors: &[&str], offsets: &[i64]) -> String {
    let offs: Vec<String> = offsets.iter().map(|o| format!("{o:+}")).collect();
    format!("{}@{}", detectors.join(","), offs.join(","))
}

/// Count `order`-fold coincidences across all detector combinations.
///
/// Pairing is greedy earliest-match: anchor clicks are visited in time order
/// and each other detector contributes its earliest unused click inside an
/// allowed offset window. A matched tuple must also have de-offset spread
/// at most `width_ps`. A click is used at most once per detector tuple.
pub fn count_coincidences(
    streams: &BTreeMap<String, Vec<f64>>,
    window: &CoincidenceWindow,
    order: usize,
) -> Result<CoincidenceTable> {
    window.validate()?;
    if order < 2 {
        return Err(invalid("coincidence order must be at least 2"));
    }
    let ids: Vec<&String> = streams.keys().collect();
    let mut table = CoincidenceTable::new();
    if ids.len() < order {
        return Ok(table);
    }
    let mut offsets = window.offsets.clone();
    offsets.sort_unstable();
    offsets.dedup();
    let half = window.width_ps / 2.0;
    let lo_off = offsets[0] as f64 * window.bin_ps - half;
    let hi_off = offsets[offsets.len() - 1] as f64 * window.bin_ps + half;

    for combo in combinations(ids.len(), order) {
        let names: Vec<&str> = combo.iter().map(|&i| ids[i].as_str()).collect();
        let sorted: Vec<Vec<f64>> = combo
            .iter()
            .map(|&i| {
                let mut v = streams[ids[i]].clone();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let mut used: Vec<Vec<bool>> = sorted.iter().map(|v| vec![false; v.len()]).collect();
        for ai in 0..sorted[0].len() {
            if used[0][ai] {
                continue;
            }
            let t = sorted[0][ai];
            let mut picks = Vec::with_capacity(order - 1);
            for j in 1..order {
                let s = &sorted[j];
                let start = s.partition_point(|&x| x < t + lo_off);
                let mut found = None;
                for (idx, &u) in s.iter().enumerate().skip(start) {
                    if u > t + hi_off {
                        break;
                    }
                    if used[j][idx] {
                        continue;
                    }
                    if let Some(&off) =
                        offsets.iter().find(|&&o| (u - t - o as f64 * window.bin_ps).abs() <= half)
                    {
                        found = Some((idx, off, u - off as f64 * window.bin_ps));
                        break;
                    }
                }
                match found {
                    Some(p) => picks.push(p),
                    None => break,
                }
            }
            if picks.len() != order - 1 {
                continue;
            }
            let (lo, hi) = picks.iter().fold((t, t), |(lo, hi), &(_, _, d)| (lo.min(d), hi.max(d)));
            if hi - lo > window.width_ps {
                continue;
            }
            used[0][ai] = true;
            for (j, &(idx, _, _)) in picks.iter().enumerate() {
                used[j + 1][idx] = true;
            }
            let offs: Vec<i64> = picks.iter().map(|p| p.1).collect();
            *table.entry(coincidence_key(&names, &offs)).or_default() += 1;
        }
    }
    Ok(table)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Sum of all table entries.
pub fn total(table: &CoincidenceTable) -> u64 {
    table.values().sum()
}

pub fn table_from_json(s: &str) -> Result<CoincidenceTable> {
    serde_json::from_str(s).map_err(Error::from)
}
