use std::f64::consts::PI;

use tbswap_core::analysis::fit_fringe;
use tbswap_core::mc::{rate_budget, run_scenario, run_scenario_spooled, CENTRAL, OTHER};
use tbswap_core::optics::{analyze_pair, MziPort};
use tbswap_core::scenario::{Analyzer, Experiment, ScenarioConfig};
use tbswap_core::timebin::{bell_decompose, build_pair_state_for, swapped_state, BellKind, JointState, PhaseConfig};

fn sweep(points: usize) -> Vec<f64> {
    (0..points).map(|i| 2.0 * PI * i as f64 / points as f64).collect()
}

fn swapping(n: usize, mu: f64, secs: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::ideal("t", Experiment::Swapping, sweep(8), secs);
    c.alice.n_bins = n;
    c.bob.n_bins = n;
    c.alice.mu = mu;
    c.bob.mu = mu;
    c.seed = 11;
    c
}

#[test]
fn ideal_swapping_fringe_is_full() {
    let s = run_scenario(&swapping(8, 0.05, 0.004), None).unwrap();
    let fit = fit_fringe(&s.same_port_fringe(), 2.0 * PI).unwrap();
    assert!((fit.visibility - 1.0).abs() < 0.03, "{fit:?}");
}

#[test]
fn source_factors_multiply_into_swapped_visibility() {
    let mut c = swapping(8, 0.05, 0.006);
    c.alice.visibility = 0.898;
    c.bob.visibility = 0.829;
    let s = run_scenario(&c, None).unwrap();
    let fit = fit_fringe(&s.same_port_fringe(), 2.0 * PI).unwrap();
    assert!((fit.visibility - 0.898 * 0.829).abs() < 0.03, "{fit:?}");
}

#[test]
fn franson_fringe_tracks_source_factor() {
    let mut c = ScenarioConfig::ideal("f", Experiment::FransonBob, sweep(8), 0.002);
    c.bob.visibility = 0.829;
    c.bob.mu = 0.05;
    c.sweep.scan = Analyzer::Charlie;
    let s = run_scenario(&c, None).unwrap();
    let fit = fit_fringe(&s.fringe(&[(MziPort::Plus, MziPort::Plus)]), 2.0 * PI).unwrap();
    assert!((fit.visibility - 0.829).abs() < 0.03, "{fit:?}");
}

/// Conditional four-fold outcome distribution given a Ψ⁻ herald, averaged over k.
fn analytic_fourfold(n: usize, ta: f64, tb: f64) -> [[[f64; 2]; 2]; 2] {
    let p = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
    let a = build_pair_state_for(n, &p, 1.0, 1).unwrap();
    let b = build_pair_state_for(n, &p, 1.0, 2).unwrap();
    let d = bell_decompose(&JointState::new(a, b).unwrap()).unwrap();
    let comps: Vec<_> = d.components.iter().filter(|c| c.kind == BellKind::PsiMinus).collect();
    let mut out = [[[0.0; 2]; 2]; 2];
    for c in &comps {
        let st = swapped_state(c).unwrap();
        for ((x, y), prob) in analyze_pair(&st, Some(ta), Some(tb)) {
            let class = usize::from(!(x.slot == c.k + 1 && y.slot == c.k + 1));
            let (Some(px), Some(py)) = (x.port, y.port) else { continue };
            out[px.index()][py.index()][class] += prob / comps.len() as f64;
        }
    }
    out
}

#[test]
fn mc_matches_analytic_fourfold_distribution() {
    for n in [2usize, 3] {
        let (ta, tb) = (0.4, 1.1);
        let mut c = swapping(n, 0.05, 0.003);
        c.sweep.values = vec![ta];
        c.sweep.fixed.bob = tb;
        let s = run_scenario(&c, None).unwrap();
        let t = &s.totals;
        let want = analytic_fourfold(n, ta, tb);
        let total = t.heralds as f64;
        let mut chi2 = 0.0;
        for pa in 0..2 {
            for pb in 0..2 {
                for (ci, class) in [CENTRAL, OTHER].into_iter().enumerate() {
                    let e = want[pa][pb][ci] * total;
                    let o = t.counts[pa][pb][class] as f64;
                    chi2 += (o - e).powi(2) / e;
                }
            }
        }
        // 7 dof, p = 0.001 at 24.3
        assert!(chi2 < 24.3, "n={n} chi2={chi2}");
    }
}

#[test]
fn herald_fraction_follows_bin_count() {
    for n in [1usize, 2, 3, 4, 8] {
        let mut c = swapping(n, 0.05, 1.0);
        c.sweep.values = vec![0.0];
        // about 1e5 eligible frames
        let elig_per_s = c.alice.clock_rate_hz / n as f64 * (1.0 - (-0.05 * n as f64).exp()).powi(2);
        c.sweep.duration_per_point_s = 1e5 / elig_per_s;
        let s = run_scenario(&c, None).unwrap();
        let t = &s.totals;
        let p = (n as f64 - 1.0) / (n * n) as f64;
        let e = t.eligible_frames as f64 * p;
        let sd = (t.eligible_frames as f64 * p * (1.0 - p)).sqrt().max(1e-9);
        assert!((t.heralds as f64 - e).abs() <= 3.0 * sd + 1e-9, "n={n}: {} vs {e}", t.heralds);
    }
}

#[test]
fn ideal_rate_matches_budget() {
    let c = swapping(4, 0.05, 0.002);
    let s = run_scenario(&c, None).unwrap();
    let b = rate_budget(&c).unwrap();
    let expect = b.events_per_s * s.total_duration_s();
    let got = s.totals.class_total(CENTRAL) as f64;
    assert!((got - expect).abs() < 4.0 * expect.sqrt(), "{got} vs {expect}");
}

#[test]
fn zero_overlap_kills_the_fringe() {
    let mut c = swapping(8, 0.05, 0.004);
    c.optics.static_pol_overlap = 0.0;
    let s = run_scenario(&c, None).unwrap();
    let fit = fit_fringe(&s.same_port_fringe(), 2.0 * PI).unwrap();
    assert!(fit.visibility < 3.0 * fit.visibility_err.max(0.01), "{fit:?}");
}

#[test]
fn short_dead_time_reveals_psi_plus() {
    let mut c = swapping(2, 0.05, 0.003);
    c.sweep.values = vec![0.0];
    let slow = run_scenario(&c, None).unwrap().totals;
    assert_eq!(slow.would_be_psi_plus, 0);
    c.detector.dead_time_ps = 500.0;
    let fast = run_scenario(&c, None).unwrap().totals;
    let (a, b) = (fast.heralds as f64, fast.would_be_psi_plus as f64);
    assert!((a - b).abs() < 4.0 * (a + b).sqrt(), "{a} vs {b}");
}

#[test]
fn spooled_clicks_agree_with_summary() {
    let mut c = swapping(4, 0.05, 2e-4);
    c.sweep.values = vec![0.0];
    let (s, clicks) = run_scenario_spooled(&c, None).unwrap();
    let idler = clicks.iter().filter(|r| r.detector_id.starts_with('A')).count() as u64;
    let t = &s.totals;
    assert_eq!(idler, t.counts.iter().flatten().flatten().sum::<u64>());
    assert!(clicks.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
    assert!(clicks.iter().any(|r| r.detector_id == "D1"));
}

#[test]
fn summary_is_independent_of_worker_count() {
    let mut c = swapping(8, 0.05, 0.001);
    c.engine.chunk_frames = 10_000;
    let a = run_scenario(&c, Some(1)).unwrap();
    let b = run_scenario(&c, Some(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn invalid_config_rejected_before_run() {
    let mut c = swapping(8, 0.05, 0.001);
    c.bob.n_bins = 4;
    assert!(run_scenario(&c, None).is_err());
}
