//! Amplitude algebra for sequential time-bin photon pairs.
//!
//! A pair emitted by a pump train of `n` mutually coherent pulses is
//! `(1/√n) Σ_k e^{2ikθ} |t_k⟩_s |t_k⟩_i`. Source imperfection is carried as a
//! scalar `coherence` that scales every off-diagonal density element between
//! distinct bin terms, i.e. `ρ = f |ψ⟩⟨ψ| + (1 − f) diag(|a_kl|²)`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optics::{self, MziPort};

const NORM_TOL: f64 = 1e-12;

/// Pump frequency, bin spacing and the derived per-bin phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub nu_hz: f64,
    pub tau_s: f64,
    pub theta: f64,
}

impl PhaseConfig {
    pub fn new(nu_hz: f64, tau_s: f64) -> Result<Self> {
        if !(tau_s > 0.0) || !nu_hz.is_finite() {
            return Err(invalid("tau must be positive and nu finite"));
        }
        // fract() before scaling keeps the phase accurate for optical ν·τ ~ 1e5.
        let cycles = (nu_hz * tau_s).rem_euclid(1.0);
        Ok(Self { nu_hz, tau_s, theta: wrap_phase(TAU * cycles) })
    }

    /// Phase configuration specified directly by θ (ν left at zero).
    pub fn from_theta(theta: f64, tau_s: f64) -> Result<Self> {
        if !(tau_s > 0.0) || !theta.is_finite() {
            return Err(invalid("tau must be positive and theta finite"));
        }
        Ok(Self { nu_hz: 0.0, tau_s, theta: wrap_phase(theta) })
    }
}

pub fn wrap_phase(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Signal,
    Idler,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhotonLabel {
    pub role: Role,
    /// 1 for Alice's source, 2 for Bob's.
    pub source: u8,
}

/// Two-photon state over time bins, stored sparse as `(bin of first, bin of second) → amplitude`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    n: usize,
    theta: f64,
    amps: BTreeMap<(usize, usize), Complex64>,
    coherence: f64,
    labels: [PhotonLabel; 2],
}

impl PairState {
    /// Build from raw amplitudes. The amplitudes are checked for unit norm.
    pub fn from_amplitudes(
        n: usize,
        theta: f64,
        amps: BTreeMap<(usize, usize), Complex64>,
        coherence: f64,
        labels: [PhotonLabel; 2],
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("bin count must be at least 1"));
        }
        if !(coherence > 0.0 && coherence <= 1.0) {
            return Err(invalid(format!("coherence {coherence} outside (0, 1]")));
        }
        if amps.keys().any(|&(k, l)| k >= n + 1 || l >= n + 1) {
            return Err(invalid("amplitude index outside the frame"));
        }
        let norm: f64 = amps.values().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("state norm {norm} is not 1")));
        }
        let amps = amps.into_iter().filter(|(_, a)| a.norm_sqr() > 0.0).collect();
        Ok(Self { n, theta, amps, coherence, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Franson visibility factor of the state (1 for a pure state).
    pub fn coherence(&self) -> f64 {
        self.coherence
    }

    pub fn labels(&self) -> [PhotonLabel; 2] {
        self.labels
    }

    pub fn amplitude(&self, k: usize, l: usize) -> Complex64 {
        self.amps.get(&(k, l)).copied().unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = ((usize, usize), Complex64)> + '_ {
        self.amps.iter().map(|(&k, &a)| (k, a))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.amps.keys().all(|&(k, l)| k == l)
    }
}

/// Sequential time-bin source state with Franson visibility `factor`.
pub fn build_pair_state(n: usize, phase: &PhaseConfig, factor: f64) -> Result<PairState> {
    build_pair_state_for(n, phase, factor, 1)
}

/// As [`build_pair_state`] with an explicit source id for the photon labels.
pub fn build_pair_state_for(n: usize, phase: &PhaseConfig, factor: f64, source: u8) -> Result<PairState> {
    if n == 0 {
        return Err(invalid("bin count must be at least 1"));
    }
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(invalid(format!("source visibility factor {factor} outside (0, 1]")));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let amps = (0..n)
        .map(|k| ((k, k), Complex64::from_polar(scale, 2.0 * k as f64 * phase.theta)))
        .collect();
    let labels = [
        PhotonLabel { role: Role::Signal, source },
        PhotonLabel { role: Role::Idler, source },
    ];
    PairState::from_amplitudes(n, phase.theta, amps, factor, labels)
}

/// Central-slot coincidence probability behind one chosen output port (`+`)
/// of each analyzer, both analyzers unbalanced by one bin.
///
/// For the ideal source this is `(n−1)/(8n) · (1 + V cos(θ_s + θ_i − 2θ))`.
pub fn franson_coincidence_prob(state: &PairState, theta_s: f64, theta_i: f64) -> f64 {
    let table = optics::analyze_pair(state, Some(theta_s), Some(theta_i));
    table
        .iter()
        .filter(|((a, b), _)| {
            a.port == Some(MziPort::Plus)
                && b.port == Some(MziPort::Plus)
                && a.slot == b.slot
                && a.slot >= 1
                && a.slot < state.n
        })
        .map(|(_, p)| p)
        .sum()
}

/// Product of two independent pair states.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    first: PairState,
    second: PairState,
}

impl JointState {
    pub fn new(first: PairState, second: PairState) -> Result<Self> {
        if first.n != second.n {
            return Err(Error::IncompatibleSources(format!(
                "bin counts differ ({} vs {})",
                first.n, second.n
            )));
        }
        if (first.theta - second.theta).abs() > 1e-12 {
            return Err(Error::IncompatibleSources(format!(
                "phases differ ({} vs {})",
                first.theta, second.theta
            )));
        }
        Ok(Self { first, second })
    }

    pub fn first(&self) -> &PairState {
        &self.first
    }

    pub fn second(&self) -> &PairState {
        &self.second
    }

    pub fn n(&self) -> usize {
        self.first.n
    }

    /// Amplitude of `|s1⟩_{1s} |i1⟩_{1i} |s2⟩_{2s} |i2⟩_{2i}`.
    pub fn amplitude(&self, s1: usize, i1: usize, s2: usize, i2: usize) -> Complex64 {
        self.first.amplitude(s1, i1) * self.second.amplitude(s2, i2)
    }

    /// All non-zero amplitudes keyed `(s1, s2, i1, i2)`.
    pub fn expand(&self) -> BTreeMap<(usize, usize, usize, usize), Complex64> {
        let mut out = BTreeMap::new();
        for ((s1, i1), a) in self.first.terms() {
            for ((s2, i2), b) in self.second.terms() {
                out.insert((s1, s2, i1, i2), a * b);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BellKind {
    PsiMinus,
    PsiPlus,
    PhiPlus,
    PhiMinus,
}

impl BellKind {
    /// Signal-pair vector of the Bell state with base bin `k`, keyed `(s1, s2)`.
    pub fn signal_vector(self, k: usize) -> [((usize, usize), Complex64); 2] {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            BellKind::PsiPlus => [((k, k + 1), h), ((k + 1, k), h)],
            BellKind::PsiMinus => [((k, k + 1), h), ((k + 1, k), -h)],
            BellKind::PhiPlus => [((k, k), h), ((k + 1, k + 1), h)],
            BellKind::PhiMinus => [((k, k), h), ((k + 1, k + 1), -h)],
        }
    }

    pub fn heraldable(self) -> bool {
        self == BellKind::PsiMinus
    }
}

/// One Bell-sector term of a decomposed joint state: the signal pair is in
/// `kind` at base bin `k` and the idlers are left in `idler_state`.
#[derive(Clone, Debug, PartialEq)]
pub struct BellComponent {
    pub kind: BellKind,
    pub k: usize,
    pub amplitude: Complex64,
    pub idler_state: PairState,
}

/// Joint-state terms whose signals are more than one bin apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTerm {
    pub s1: usize,
    pub s2: usize,
    pub i1: usize,
    pub i2: usize,
    pub amplitude: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BellDecomposition {
    pub n: usize,
    pub components: Vec<BellComponent>,
    pub residual: Vec<ResidualTerm>,
}

impl BellDecomposition {
    pub fn probability(&self, kind: BellKind) -> f64 {
        self.components.iter().filter(|c| c.kind == kind).map(|c| c.amplitude.norm_sqr()).sum()
    }

    pub fn residual_probability(&self) -> f64 {
        self.residual.iter().map(|r| r.amplitude.norm_sqr()).sum()
    }

    pub fn total_probability(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude.norm_sqr()).sum::<f64>() + self.residual_probability()
    }

    /// Re-expand the components into joint amplitudes keyed `(s1, s2, i1, i2)`.
    pub fn reconstruct(&self) -> BTreeMap<(usize, usize, usize, usize), Complex64> {
        let mut out: BTreeMap<_, Complex64> = BTreeMap::new();
        for c in &self.components {
            for ((s1, s2), sa) in c.kind.signal_vector(c.k) {
                for ((i1, i2), ia) in c.idler_state.terms() {
                    *out.entry((s1, s2, i1, i2)).or_default() += c.amplitude * sa * ia;
                }
            }
        }
        for r in &self.residual {
            *out.entry((r.s1, r.s2, r.i1, r.i2)).or_default() += r.amplitude;
        }
        out.retain(|_, a| a.norm_sqr() > 1e-30);
        out
    }
}

type IdlerVector = BTreeMap<(usize, usize), Complex64>;

fn idler_component(
    vec: IdlerVector,
    kind: BellKind,
    k: usize,
    n: usize,
    theta: f64,
    coherence: f64,
) -> Option<BellComponent> {
    let norm: f64 = vec.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if norm < 1e-15 {
        return None;
    }
    // Global phase taken from the first stored idler term.
    let lead = vec.values().find(|a| a.norm() > 1e-15 * norm).copied()?;
    let amplitude = Complex64::from_polar(norm, lead.arg());
    let amps = vec.into_iter().map(|(key, a)| (key, a / amplitude)).collect::<BTreeMap<_, _>>();
    let labels = [
        PhotonLabel { role: Role::Idler, source: 1 },
        PhotonLabel { role: Role::Idler, source: 2 },
    ];
    let idler_state = renormalized(n, theta, amps, coherence, labels);
    Some(BellComponent { kind, k, amplitude, idler_state })
}

fn renormalized(
    n: usize,
    theta: f64,
    mut amps: IdlerVector,
    coherence: f64,
    labels: [PhotonLabel; 2],
) -> PairState {
    let norm: f64 = amps.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in amps.values_mut() {
        *a /= norm;
    }
    amps.retain(|_, a| a.norm_sqr() > 0.0);
    PairState { n, theta, amps, coherence, labels }
}

/// Decompose a product of two pair states onto signal Bell states.
///
/// Adjacent-bin signal pairs map onto `Ψ±_k`; same-bin pairs onto `Φ±_k` via
/// `|t_k t_k⟩ = (Φ⁺_k + Φ⁻_k)/√2`; everything else is returned as residual.
/// Each component's idler state carries the product of the source coherences.
pub fn bell_decompose(joint: &JointState) -> Result<BellDecomposition> {
    let n = joint.n();
    let theta = joint.first.theta;
    let coherence = joint.first.coherence * joint.second.coherence;

    // Conditional idler vectors per signal pair.
    let mut by_signal: BTreeMap<(usize, usize), IdlerVector> = BTreeMap::new();
    for ((s1, s2, i1, i2), a) in joint.expand() {
        *by_signal.entry((s1, s2)).or_default().entry((i1, i2)).or_default() += a;
    }

    let mut components = Vec::new();
    let mut residual = Vec::new();
    let h = FRAC_1_SQRT_2;
    let max_bin = by_signal.keys().map(|&(a, b)| a.max(b)).max().unwrap_or(0);

    for k in 0..=max_bin {
        if let Some(v) = by_signal.get(&(k, k)) {
            for kind in [BellKind::PhiPlus, BellKind::PhiMinus] {
                let scaled = v.iter().map(|(&key, &a)| (key, a * h)).collect();
                components.extend(idler_component(scaled, kind, k, n, theta, coherence));
            }
        }
        let early = by_signal.get(&(k, k + 1));
        let late = by_signal.get(&(k + 1, k));
        if early.is_none() && late.is_none() {
            continue;
        }
        for (kind, sign) in [(BellKind::PsiMinus, -1.0), (BellKind::PsiPlus, 1.0)] {
            let mut v: IdlerVector = BTreeMap::new();
            for (&key, &a) in early.into_iter().flatten() {
                *v.entry(key).or_default() += a * h;
            }
            for (&key, &a) in late.into_iter().flatten() {
                *v.entry(key).or_default() += a * h * sign;
            }
            components.extend(idler_component(v, kind, k, n, theta, coherence));
        }
    }

    for (&(s1, s2), v) in &by_signal {
        if s1.abs_diff(s2) > 1 {
            for (&(i1, i2), &amplitude) in v {
                residual.push(ResidualTerm { s1, s2, i1, i2, amplitude });
            }
        }
    }

    Ok(BellDecomposition { n, components, residual })
}

/// Idler state left behind by a heralded `Ψ⁻` component.
pub fn swapped_state(component: &BellComponent) -> Result<PairState> {
    if component.kind != BellKind::PsiMinus {
        return Err(Error::NotHeralded(format!("{:?}", component.kind)));
    }
    Ok(component.idler_state.clone())
}

/// Conditioned four-fold probability: both idlers leave their analyzers
/// through port `+` in the same (interfering) slot.
///
/// For `Ψ⁻_k` idlers this is `(1 − V cos(θ_A − θ_B))/16`, `V` the product of the
/// source coherences.
pub fn fourfold_fringe_prob(swapped: &PairState, theta_a: f64, theta_b: f64) -> f64 {
    let table = optics::analyze_pair(swapped, Some(theta_a), Some(theta_b));
    table
        .iter()
        .filter(|((a, b), _)| {
            a.port == Some(MziPort::Plus) && b.port == Some(MziPort::Plus) && a.slot == b.slot
        })
        .map(|(_, p)| p)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ideal(n: usize, theta: f64) -> PairState {
        build_pair_state(n, &PhaseConfig::from_theta(theta, 1e-9).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn single_bin_is_a_product_state() {
        let s = ideal(1, 1.234);
        assert_eq!(s.terms().count(), 1);
        assert!((s.amplitude(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_bins_at_zero_phase() {
        let s = ideal(2, 0.0);
        let h = FRAC_1_SQRT_2;
        assert!((s.amplitude(0, 0).re - h).abs() < 1e-15);
        assert!((s.amplitude(1, 1).re - h).abs() < 1e-15);
        assert_eq!(s.amplitude(0, 1), Complex64::default());
    }

    #[test]
    fn three_bins_quarter_pi() {
        let s = ideal(3, PI / 4.0);
        for k in 0..3 {
            // e^{ikπ/2}/√3 evaluated directly
            let expect = Complex64::new(0.0, k as f64 * PI / 2.0).exp() / 3f64.sqrt();
            assert!((s.amplitude(k, k) - expect).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
        assert!(matches!(build_pair_state(0, &p, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_pair_state(2, &p, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_pair_state(2, &p, 1.5), Err(Error::InvalidArgument(_))));
        assert!(PhaseConfig::new(1e14, 0.0).is_err());
    }

    #[test]
    fn phase_config_derives_theta_mod_two_pi() {
        let p = PhaseConfig::new(193.4e12 + 0.25e9, 1e-9).unwrap();
        assert!((p.theta - PI / 2.0).abs() < 1e-6);
        assert!(p.theta >= 0.0 && p.theta < TAU);
    }

    #[test]
    fn franson_extremes_for_ideal_state() {
        let theta = 0.3;
        let s = ideal(8, theta);
        let max = franson_coincidence_prob(&s, 2.0 * theta, 0.0);
        let min = franson_coincidence_prob(&s, 2.0 * theta + PI, 0.0);
        assert!(min.abs() < 1e-15);
        assert!((max - 2.0 * 7.0 / 64.0).abs() < 1e-14);
    }

    #[test]
    fn franson_visibility_equals_factor() {
        let p = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
        let s = build_pair_state(8, &p, 0.898).unwrap();
        let max = franson_coincidence_prob(&s, 0.0, 0.0);
        let min = franson_coincidence_prob(&s, PI, 0.0);
        let v = (max - min) / (max + min);
        assert!((v - 0.898).abs() < 1e-9);
    }

    #[test]
    fn incompatible_sources_rejected() {
        let a = ideal(2, 0.0);
        let b = ideal(3, 0.0);
        assert!(matches!(JointState::new(a.clone(), b), Err(Error::IncompatibleSources(_))));
        let c = ideal(2, 0.5);
        assert!(matches!(JointState::new(a, c), Err(Error::IncompatibleSources(_))));
    }

    #[test]
    fn n1_has_only_phi_terms() {
        let j = JointState::new(ideal(1, 0.0), ideal(1, 0.0)).unwrap();
        let d = bell_decompose(&j).unwrap();
        assert!(d
            .components
            .iter()
            .all(|c| matches!(c.kind, BellKind::PhiPlus | BellKind::PhiMinus)));
        assert!((d.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_minus_idler_is_antisymmetric() {
        let j = JointState::new(ideal(2, 0.7), ideal(2, 0.7)).unwrap();
        let d = bell_decompose(&j).unwrap();
        let psi: Vec<_> = d.components.iter().filter(|c| c.kind == BellKind::PsiMinus).collect();
        assert_eq!(psi.len(), 1);
        assert!((psi[0].amplitude.norm_sqr() - 0.25).abs() < 1e-14);
        // amplitude phase e^{i(4k+2)θ} at k = 0
        assert!((psi[0].amplitude.arg() - 1.4).abs() < 1e-12);
        let sw = swapped_state(psi[0]).unwrap();
        assert!((sw.amplitude(0, 1).re - FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((sw.amplitude(1, 0).re + FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((sw.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapped_state_rejects_non_herald() {
        let j = JointState::new(ideal(2, 0.0), ideal(2, 0.0)).unwrap();
        let d = bell_decompose(&j).unwrap();
        let plus = d.components.iter().find(|c| c.kind == BellKind::PsiPlus).unwrap();
        assert!(matches!(swapped_state(plus), Err(Error::NotHeralded(_))));
    }

    #[test]
    fn fourfold_visibility_is_product_of_factors() {
        let p = PhaseConfig::from_theta(0.2, 1e-9).unwrap();
        let a = build_pair_state_for(4, &p, 0.898, 1).unwrap();
        let b = build_pair_state_for(4, &p, 0.829, 2).unwrap();
        let d = bell_decompose(&JointState::new(a, b).unwrap()).unwrap();
        let c = d.components.iter().find(|c| c.kind == BellKind::PsiMinus).unwrap();
        let sw = swapped_state(c).unwrap();
        let hi = fourfold_fringe_prob(&sw, PI, 0.0);
        let lo = fourfold_fringe_prob(&sw, 0.0, 0.0);
        let v = (hi - lo) / (hi + lo);
        assert!((v - 0.898 * 0.829).abs() < 1e-9);
    }
}
