//! Beam splitter, unbalanced MZI analyzers and the Bell-state-measurement
//! herald rule.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::timebin::{BellComponent, BellKind, PairState};

/// Output port of an unbalanced analyzer interferometer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MziPort {
    Plus,
    Minus,
}

impl MziPort {
    pub fn sign(self) -> f64 {
        match self {
            MziPort::Plus => 1.0,
            MziPort::Minus => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            MziPort::Plus => 0,
            MziPort::Minus => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MziPort::Plus => "+",
            MziPort::Minus => "-",
        }
    }
}

/// Amplitudes of a photon entering an analyzer in `bin`:
/// short arm → slot `bin`, long arm (one bin longer, phase `phase`) → slot `bin + 1`.
#[inline]
pub fn mzi_outputs(bin: usize, phase: f64) -> [(MziPort, usize, Complex64); 4] {
    let long = Complex64::from_polar(0.5, phase);
    let short = Complex64::new(0.5, 0.0);
    [
        (MziPort::Plus, bin, short),
        (MziPort::Plus, bin + 1, long),
        (MziPort::Minus, bin, short),
        (MziPort::Minus, bin + 1, -long),
    ]
}

/// Where one photon ended up: analyzer port (None when not analyzed) and time slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub port: Option<MziPort>,
    pub slot: usize,
}

pub type AnalyzerTable = BTreeMap<(SlotOutcome, SlotOutcome), f64>;

/// Which photon of a pair the analyzer acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

/// Joint output distribution of a pair state with optional analyzers on each
/// photon. Off-diagonal density terms between distinct bin terms are scaled
/// by the state's coherence.
pub fn analyze_pair(state: &PairState, first: Option<f64>, second: Option<f64>) -> AnalyzerTable {
    let f = state.coherence();
    let mut contrib: BTreeMap<(SlotOutcome, SlotOutcome), BTreeMap<(usize, usize), Complex64>> =
        BTreeMap::new();
    for (term, amp) in state.terms() {
        let outs1 = photon_outputs(term.0, first);
        let outs2 = photon_outputs(term.1, second);
        for &(o1, a1) in &outs1 {
            for &(o2, a2) in &outs2 {
                *contrib.entry((o1, o2)).or_default().entry(term).or_default() += amp * a1 * a2;
            }
        }
    }
    contrib
        .into_iter()
        .map(|(key, per_term)| {
            let coherent = per_term.values().sum::<Complex64>().norm_sqr();
            let incoherent: f64 = per_term.values().map(|a| a.norm_sqr()).sum();
            (key, f * coherent + (1.0 - f) * incoherent)
        })
        .collect()
}

fn photon_outputs(bin: usize, phase: Option<f64>) -> Vec<(SlotOutcome, Complex64)> {
    match phase {
        None => vec![(SlotOutcome { port: None, slot: bin }, Complex64::new(1.0, 0.0))],
        Some(p) => mzi_outputs(bin, p)
            .iter()
            .map(|&(port, slot, a)| (SlotOutcome { port: Some(port), slot }, a))
            .collect(),
    }
}

/// One-sided analyzer table: the chosen photon passes an MZI with phase
/// `theta_phase`, the other is recorded at its bin.
pub fn mzi_analyze(state: &PairState, theta_phase: f64, side: Side) -> AnalyzerTable {
    match side {
        Side::First => analyze_pair(state, Some(theta_phase), None),
        Side::Second => analyze_pair(state, None, Some(theta_phase)),
    }
}

/// Temporal mode overlap of two Gaussian wave packets delayed by `delta_t_ps`;
/// `coherence_time_ps` is the intensity FWHM.
pub fn hom_overlap(delta_t_ps: f64, coherence_time_ps: f64) -> f64 {
    let sigma = coherence_time_ps / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    (-(delta_t_ps * delta_t_ps) / (2.0 * sigma * sigma)).exp()
}

/// BSM output detectors behind the two beam-splitter ports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BsmDetector {
    D1,
    D2,
}

impl BsmDetector {
    pub fn other(self) -> Self {
        match self {
            BsmDetector::D1 => BsmDetector::D2,
            BsmDetector::D2 => BsmDetector::D1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub detector: BsmDetector,
    pub bin: usize,
    pub time_ps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClickPattern {
    pub clicks: Vec<Click>,
}

impl ClickPattern {
    pub fn from_bins(tau_ps: f64, clicks: &[(BsmDetector, usize)]) -> Self {
        let mut clicks: Vec<Click> = clicks
            .iter()
            .map(|&(detector, bin)| Click { detector, bin, time_ps: bin as f64 * tau_ps })
            .collect();
        clicks.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
        Self { clicks }
    }
}

/// Signal-pair click distribution for one Bell component at total
/// indistinguishability `ξ = overlap · pol_overlap`. Probabilities sum to 1.
pub fn bsm_click_distribution(
    component: &BellComponent,
    overlap: f64,
    pol_overlap: f64,
    tau_ps: f64,
) -> Vec<(ClickPattern, f64)> {
    use BsmDetector::*;
    let xi2 = (overlap * pol_overlap).clamp(0.0, 1.0).powi(2);
    let k = component.k;
    let pat = |c: &[(BsmDetector, usize)]| ClickPattern::from_bins(tau_ps, c);
    match component.kind {
        BellKind::PsiMinus | BellKind::PsiPlus => {
            let (diff, same) = if component.kind == BellKind::PsiMinus {
                ((1.0 + xi2) / 4.0, (1.0 - xi2) / 4.0)
            } else {
                ((1.0 - xi2) / 4.0, (1.0 + xi2) / 4.0)
            };
            vec![
                (pat(&[(D1, k), (D2, k + 1)]), diff),
                (pat(&[(D2, k), (D1, k + 1)]), diff),
                (pat(&[(D1, k), (D1, k + 1)]), same),
                (pat(&[(D2, k), (D2, k + 1)]), same),
            ]
        }
        BellKind::PhiPlus | BellKind::PhiMinus => {
            let mut out = Vec::with_capacity(6);
            for bin in [k, k + 1] {
                // half the weight per bin, HOM bunching within the bin
                out.push((pat(&[(D1, bin), (D1, bin)]), (1.0 + xi2) / 8.0));
                out.push((pat(&[(D2, bin), (D2, bin)]), (1.0 + xi2) / 8.0));
                out.push((pat(&[(D1, bin), (D2, bin)]), (1.0 - xi2) / 4.0));
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BellOutcome {
    HeraldPsiMinus(usize),
    WouldBePsiPlus(usize),
    Unheraldable,
    NoHerald,
}

/// Map a click pattern to a Bell outcome.
///
/// Photons on one detector at the same instant register once (no photon
/// number resolution). A detector then ignores clicks arriving less than
/// `dead_time_ps` after its last registered click.
pub fn herald_decision(clicks: &ClickPattern, dead_time_ps: f64) -> BellOutcome {
    let mut sorted = clicks.clicks.clone();
    sorted.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    let mut registered: Vec<Click> = Vec::with_capacity(sorted.len());
    for c in sorted {
        let last = registered.iter().rev().find(|r| r.detector == c.detector);
        match last {
            Some(r) if r.time_ps == c.time_ps => continue,
            Some(r) if c.time_ps - r.time_ps < dead_time_ps => continue,
            _ => registered.push(c),
        }
    }
    match registered.as_slice() {
        [a, b] => {
            let k = a.bin.min(b.bin);
            let adjacent = a.bin.abs_diff(b.bin) == 1;
            match (a.detector == b.detector, adjacent) {
                (false, true) => BellOutcome::HeraldPsiMinus(k),
                (true, true) => BellOutcome::WouldBePsiPlus(k),
                (false, false) if a.bin == b.bin => BellOutcome::Unheraldable,
                _ => BellOutcome::NoHerald,
            }
        }
        [] | [_] => BellOutcome::NoHerald,
        _ => BellOutcome::Unheraldable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebin::*;
    use std::f64::consts::PI;
    use BsmDetector::*;

    const TAU: f64 = 1000.0;

    fn psi(kind: BellKind) -> BellComponent {
        let p = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
        let a = build_pair_state_for(2, &p, 1.0, 1).unwrap();
        let b = build_pair_state_for(2, &p, 1.0, 2).unwrap();
        bell_decompose(&JointState::new(a, b).unwrap())
            .unwrap()
            .components
            .into_iter()
            .find(|c| c.kind == kind)
            .unwrap()
    }

    #[test]
    fn hom_overlap_values() {
        assert_eq!(hom_overlap(0.0, 110.0), 1.0);
        // exp(-4 ln 2) = 1/16
        assert!((hom_overlap(110.0, 110.0) - 0.0625).abs() < 1e-12);
        assert!(hom_overlap(6.0, 110.0) >= 0.99);
        assert!(hom_overlap(-20.0, 110.0) == hom_overlap(20.0, 110.0));
    }

    #[test]
    fn psi_minus_antibunches_when_indistinguishable() {
        let d = bsm_click_distribution(&psi(BellKind::PsiMinus), 1.0, 1.0, TAU);
        let diff: f64 = d
            .iter()
            .filter(|(p, _)| p.clicks[0].detector != p.clicks[1].detector)
            .map(|(_, w)| w)
            .sum();
        assert!((diff - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phi_outputs_share_a_bin() {
        for xi in [0.0, 0.4, 1.0] {
            let d = bsm_click_distribution(&psi(BellKind::PhiPlus), xi, 1.0, TAU);
            assert!((d.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, _) in &d {
                assert_eq!(p.clicks[0].bin, p.clicks[1].bin);
            }
        }
    }

    #[test]
    fn herald_rule_examples() {
        let p = ClickPattern::from_bins(TAU, &[(D1, 0), (D2, 1)]);
        assert_eq!(herald_decision(&p, 40_000.0), BellOutcome::HeraldPsiMinus(0));
        let p = ClickPattern::from_bins(TAU, &[(D1, 0), (D1, 1)]);
        assert_eq!(herald_decision(&p, 40_000.0), BellOutcome::NoHerald);
        assert_eq!(herald_decision(&p, 500.0), BellOutcome::WouldBePsiPlus(0));
        let p = ClickPattern::from_bins(TAU, &[(D1, 3), (D2, 3)]);
        assert_eq!(herald_decision(&p, 40_000.0), BellOutcome::Unheraldable);
        let p = ClickPattern::from_bins(TAU, &[(D2, 5)]);
        assert_eq!(herald_decision(&p, 0.0), BellOutcome::NoHerald);
    }

    #[test]
    fn single_bin_analyzer_splits_without_interference() {
        let p = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
        let s = build_pair_state(1, &p, 1.0).unwrap();
        let t = mzi_analyze(&s, 0.3, Side::First);
        assert_eq!(t.len(), 4);
        let early: f64 = t.iter().filter(|((a, _), _)| a.slot == 0).map(|(_, p)| p).sum();
        assert!((early - 0.5).abs() < 1e-15);
        for p in t.values() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn analyzer_is_two_pi_periodic() {
        let p = PhaseConfig::from_theta(0.4, 1e-9).unwrap();
        let s = build_pair_state(4, &p, 0.9).unwrap();
        let a = mzi_analyze(&s, 0.7, Side::Second);
        let b = mzi_analyze(&s, 0.7 + 2.0 * PI, Side::Second);
        assert_eq!(a.len(), b.len());
        for (k, v) in &a {
            assert!((v - b[k]).abs() < 1e-12);
        }
        assert!((a.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
