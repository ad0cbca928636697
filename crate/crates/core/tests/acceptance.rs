//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use tbswap_core::analysis::{drift_statistics, entanglement_verdict, fit_fringe, FringeData, FringeFit, Verdict};
use tbswap_core::channel::{generate_drift, WeatherPreset};
use tbswap_core::mc::{rate_budget, run_scenario, visibility_degradation, RunSummary, CENTRAL};
use tbswap_core::optics::{bsm_click_distribution, herald_decision, BellOutcome, MziPort};
use tbswap_core::scenario::{Experiment, ScenarioConfig};
use tbswap_core::stabilization::{run_delay_loop, DelayLoopConfig};
use tbswap_core::timebin::{bell_decompose, build_pair_state_for, BellKind, JointState, PhaseConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(name: &str) -> ScenarioConfig {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.toml")].iter().collect();
    ScenarioConfig::from_file(&p).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn phase_sweep(points: usize) -> Vec<f64> {
    (0..points).map(|i| 2.0 * PI * i as f64 / points as f64).collect()
}

fn same_port(s: &RunSummary, period: f64) -> FringeFit {
    fit_fringe(&s.same_port_fringe(), period).expect("fit")
}

fn opposite_port(s: &RunSummary, period: f64) -> FringeFit {
    let f: FringeData = s.fringe(&[(MziPort::Plus, MziPort::Minus), (MziPort::Minus, MziPort::Plus)]);
    fit_fringe(&f, period).expect("fit")
}

/// Inverse-variance mean of the in-phase and anti-phase fringe visibilities.
fn combined(s: &RunSummary, period: f64) -> (f64, f64) {
    let (a, b) = (same_port(s, period), opposite_port(s, period));
    let (wa, wb) = (a.visibility_err.powi(-2), b.visibility_err.powi(-2));
    ((a.visibility * wa + b.visibility * wb) / (wa + wb), (wa + wb).powf(-0.5))
}

fn ideal_swapping(n: usize, mu: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::ideal("acceptance", Experiment::Swapping, vec![0.0], 1.0);
    c.alice.n_bins = n;
    c.bob.n_bins = n;
    c.alice.mu = mu;
    c.bob.mu = mu;
    c.seed = 2024;
    c
}

fn eligible_rate(c: &ScenarioConfig) -> f64 {
    let n = c.alice.n_bins as f64;
    let e = |mu: f64| 1.0 - (-mu * n).exp();
    c.alice.clock_rate_hz / n * e(c.alice.mu) * e(c.bob.mu)
}

/// Ψ⁻ probability by projecting the full product state onto each
/// `(|k,k+1⟩ − |k+1,k⟩)/√2` signal vector and summing over idler bins.
fn brute_force_psi_minus(n: usize, theta: f64) -> f64 {
    let norm = 1.0 / n as f64;
    let amp = |k: usize, l: usize| Complex64::from_polar(norm, 2.0 * (k + l) as f64 * theta);
    let mut p = 0.0;
    for k in 0..n.saturating_sub(1) {
        for i1 in 0..n {
            for i2 in 0..n {
                // signal photon of source 1 in s1, source 2 in s2; pair amplitude requires i = s
                let mut c = Complex64::new(0.0, 0.0);
                if i1 == k && i2 == k + 1 {
                    c += amp(k, k + 1);
                }
                if i1 == k + 1 && i2 == k {
                    c -= amp(k + 1, k);
                }
                p += (c / 2f64.sqrt()).norm_sqr();
            }
        }
    }
    p
}

fn herald_law() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let phase = PhaseConfig::from_theta(0.37, 1e-9).unwrap();
    for n in [1usize, 2, 3, 4, 8] {
        let a = build_pair_state_for(n, &phase, 1.0, 1).unwrap();
        let b = build_pair_state_for(n, &phase, 1.0, 2).unwrap();
        let d = bell_decompose(&JointState::new(a, b).unwrap()).unwrap();
        let analytic = d.probability(BellKind::PsiMinus) + 0.0;
        let oracle = brute_force_psi_minus(n, 0.37);
        let law = (n as f64 - 1.0) / (n * n) as f64;
        let exact = (analytic - oracle).abs() < 1e-12 && (analytic - law).abs() < 1e-12;

        let mut c = ideal_swapping(n, 0.05);
        c.sweep.duration_per_point_s = 1e5 / eligible_rate(&c);
        let t = run_scenario(&c, None).unwrap().totals;
        let e = t.eligible_frames as f64 * law;
        let sd = (t.eligible_frames as f64 * law * (1.0 - law)).sqrt();
        let z = if sd > 0.0 { (t.heralds as f64 - e) / sd } else { (t.heralds as f64 - e).abs() };
        let ok = exact && z.abs() <= 3.0;
        pass &= ok;
        lines.push(format!("n={n} analytic={analytic:.6} oracle={oracle:.6} mc={}/{} z={z:+.2}", t.heralds, t.eligible_frames));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn multipair_law() -> Outcome {
    let v = visibility_degradation(0.023);
    let analytic_ok = (v - 1.0 / 1.046).abs() < 1e-9 && format!("{v:.4}") == "0.9560";
    let mut pass = analytic_ok;
    let mut lines = vec![format!("V_d(0.023)={v:.10}")];
    for mu in [0.01, 0.023, 0.05] {
        let mut c = ideal_swapping(8, mu);
        c.channels.multipair = true;
        c.sweep.values = phase_sweep(8);
        c.sweep.duration_per_point_s = 1e6 / eligible_rate(&c);
        let s = run_scenario(&c, None).unwrap();
        let (vis, err) = combined(&s, 2.0 * PI);
        let want = visibility_degradation(mu);
        let ok = (vis - want).abs() <= 0.02;
        pass &= ok;
        lines.push(format!("mu={mu}: V={vis:.4}±{err:.4} expected {want:.4}"));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn source_fringes() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, target) in [("fig3_alice", 0.898), ("fig3_bob", 0.829)] {
        let c = scenario(name);
        let period = 2.0 * PI / c.sweep.calibration.coefficient_rad_per_c;
        let f1 = same_port(&run_scenario(&c, None).unwrap(), period);
        let mut c2 = c.clone();
        c2.sweep.duration_per_point_s *= 2.0;
        let f2 = same_port(&run_scenario(&c2, None).unwrap(), period);
        let ratio = f1.visibility_err / f2.visibility_err;
        let ok = (f1.visibility - target).abs() <= 0.02
            && (ratio / 2f64.sqrt() - 1.0).abs() <= 0.2;
        pass &= ok;
        lines.push(format!(
            "{name}: V={:.4}±{:.4} (target {target}), err ratio at 2x time {ratio:.3}",
            f1.visibility, f1.visibility_err
        ));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn swapped_fringe() -> Outcome {
    let base = scenario("fig4_reduced");
    let mut off = base.clone();
    off.channels.multipair = false;
    off.channels.phase_noise = false;
    off.sweep.duration_per_point_s = 0.5;
    let s_off = run_scenario(&off, None).unwrap();
    let (v_off, e_off) = combined(&s_off, 2.0 * PI);
    let product = base.alice.visibility * base.bob.visibility;
    let ok_off = (v_off - product).abs() <= 0.03;

    let mut on = base.clone();
    on.sweep.duration_per_point_s = 4.0;
    let s_on = run_scenario(&on, None).unwrap();
    let (v_on, e_on) = combined(&s_on, 2.0 * PI);
    let ok_on = (0.68..=0.76).contains(&v_on);
    let fit = same_port(&s_on, 2.0 * PI);
    let verdict = entanglement_verdict(&fit);
    let ok_verdict = verdict.verdict == Verdict::Entangled;
    Outcome {
        pass: ok_off && ok_on && ok_verdict,
        detail: format!(
            "channels off V={v_off:.4}±{e_off:.4} (product {product:.4}); channels on V={v_on:.4}±{e_on:.4} in [0.68,0.76]; verdict {:?} margin_3sigma={:.3}",
            verdict.verdict, verdict.margin_3sigma
        ),
    }
}

fn drift_and_stabilization() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for preset in [WeatherPreset::rainy(), WeatherPreset::cloudy(), WeatherPreset::sunny()] {
        let start = Instant::now();
        let mut ptps = Vec::new();
        let mut worst_sigma: f64 = 0.0;
        for seed in 0..10 {
            let tr = generate_drift(&preset, 86_400.0, 1.0, seed).unwrap();
            ptps.push(tr.peak_to_peak());
            let log = run_delay_loop(&tr, &DelayLoopConfig::default(), seed).unwrap();
            worst_sigma = worst_sigma.max(drift_statistics(&log.residual_trace()).unwrap().sigma_ps);
        }
        let target = preset.peak_to_peak_ps;
        let ptp_ok = ptps.iter().all(|p| (p / target - 1.0).abs() <= 0.2);
        let secs = start.elapsed().as_secs_f64();
        let ok = ptp_ok && worst_sigma <= 7.0 && secs < 60.0;
        pass &= ok;
        let (lo, hi) = ptps.iter().fold((f64::MAX, f64::MIN), |(l, h), &p| (l.min(p), h.max(p)));
        lines.push(format!(
            "{:?}: ptp {lo:.0}..{hi:.0} ps (target {target}), worst closed-loop sigma {worst_sigma:.2} ps, {secs:.1} s",
            preset.label
        ));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn dead_time_discrimination() -> Outcome {
    // brute force over every Bell component and click pattern at n = 2
    let phase = PhaseConfig::from_theta(0.0, 1e-9).unwrap();
    let a = build_pair_state_for(2, &phase, 1.0, 1).unwrap();
    let b = build_pair_state_for(2, &phase, 1.0, 2).unwrap();
    let d = bell_decompose(&JointState::new(a, b).unwrap()).unwrap();
    let outcome_probs = |dead: f64| {
        let mut m: BTreeMap<&'static str, f64> = BTreeMap::new();
        for comp in &d.components {
            let w = comp.amplitude.norm_sqr();
            for (pat, p) in bsm_click_distribution(comp, 1.0, 1.0, 1000.0) {
                let key = match herald_decision(&pat, dead) {
                    BellOutcome::HeraldPsiMinus(_) => "psi_minus",
                    BellOutcome::WouldBePsiPlus(_) => "psi_plus",
                    BellOutcome::Unheraldable => "unheraldable",
                    BellOutcome::NoHerald => "none",
                };
                *m.entry(key).or_default() += w * p;
            }
        }
        m
    };
    let slow = outcome_probs(40_000.0);
    let fast = outcome_probs(500.0);
    let get = |m: &BTreeMap<&str, f64>, k: &str| m.get(k).copied().unwrap_or(0.0);
    let bf_ok = (get(&slow, "psi_minus") - 0.25).abs() < 1e-12
        && get(&slow, "psi_plus") == 0.0
        && (get(&fast, "psi_plus") - get(&fast, "psi_minus")).abs() < 1e-12
        && (d.probability(BellKind::PsiPlus) - d.probability(BellKind::PsiMinus)).abs() < 1e-12;

    let mut c = ideal_swapping(2, 0.05);
    c.sweep.duration_per_point_s = 4e5 / eligible_rate(&c);
    let ts = run_scenario(&c, None).unwrap().totals;
    c.detector.dead_time_ps = 500.0;
    let tf = run_scenario(&c, None).unwrap().totals;
    let e = tf.eligible_frames as f64 * get(&fast, "psi_plus");
    let sd = (e * (1.0 - get(&fast, "psi_plus"))).sqrt();
    let z_plus = (tf.would_be_psi_plus as f64 - e) / sd;
    let z_minus = (tf.heralds as f64 - e) / sd;
    let mc_ok = ts.would_be_psi_plus == 0 && ts.heralds > 0 && z_plus.abs() <= 3.0 && z_minus.abs() <= 3.0;
    Outcome {
        pass: bf_ok && mc_ok,
        detail: format!(
            "brute force n=2: 40 ns psi-={:.4} psi+={:.4}; 0.5 ns psi-={:.4} psi+={:.4}; MC 40 ns psi+={} heralds={}; MC 0.5 ns psi+ z={z_plus:+.2} psi- z={z_minus:+.2}",
            get(&slow, "psi_minus"),
            get(&slow, "psi_plus"),
            get(&fast, "psi_minus"),
            get(&fast, "psi_plus"),
            ts.would_be_psi_plus,
            ts.heralds
        ),
    }
}

fn rate_budget_check() -> Outcome {
    let paper = scenario("paper_rates");
    let full = rate_budget(&paper).unwrap();
    let analytic_ok = full.events_per_h >= 1.0 && full.events_per_h <= 9.0;

    let reduced_db = full.total_link_db - 15.0;
    let mut red = paper.clone();
    red.links = paper.links.scaled(reduced_db / full.total_link_db);
    // scale the full budget path by path: each photon path gains its own ΔdB
    let gain_db = full.total_link_db - red.links.total_db();
    let expected_per_s = full.events_per_s * 10f64.powf(gain_db / 10.0);
    let expected_heralds = full.heralds_per_s
        * 10f64.powf(
            (paper.links.alice_signal.total_db() - red.links.alice_signal.total_db()
                + paper.links.bob_signal.total_db()
                - red.links.bob_signal.total_db())
                / 10.0,
        );
    let red_budget = rate_budget(&red).unwrap();
    let scaling_ok = (red_budget.events_per_s / expected_per_s - 1.0).abs() < 1e-9;

    red.sweep.duration_per_point_s = 6.0 * 3600.0;
    red.engine.chunk_frames = 1 << 28;
    let s = run_scenario(&red, None).unwrap();
    let secs = s.total_duration_s();
    let four = s.totals.class_total(CENTRAL) as f64;
    let e4 = expected_per_s * secs;
    let z4 = (four - e4) / e4.sqrt();
    let eh = expected_heralds * secs;
    let zh = (s.totals.heralds as f64 - eh) / eh.sqrt();
    Outcome {
        pass: analytic_ok && scaling_ok && z4.abs() <= 3.0 && zh.abs() <= 3.0,
        detail: format!(
            "budget {:.2}/h at {:.1} dB links (filter {:.1} dB/photon, eta {}); MC at {:.1} dB: {four} four-folds vs {e4:.1} expected (z={z4:+.2}), {} heralds vs {eh:.0} (z={zh:+.2})",
            full.events_per_h,
            full.total_link_db,
            paper.insertion.filter_db,
            paper.detector.efficiency,
            red.links.total_db(),
            s.totals.heralds
        ),
    }
}

fn determinism() -> Outcome {
    let mut swap = scenario("fig4_reduced");
    swap.sweep.duration_per_point_s = 0.02;
    swap.engine.chunk_frames = 1 << 16;
    let mut franson = scenario("fig3_alice");
    franson.sweep.duration_per_point_s = 0.5;
    franson.engine.chunk_frames = 1 << 20;
    let mut pass = true;
    let mut lines = Vec::new();
    for c in [swap, franson] {
        let runs: Vec<String> = [1usize, 2, 4]
            .iter()
            .map(|&w| serde_json::to_string(&run_scenario(&c, Some(w)).unwrap()).unwrap())
            .collect();
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        pass &= same;
        lines.push(format!("{}: workers 1/2/4 identical={same}", c.name));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("herald law", herald_law),
        ("multi-pair visibility law", multipair_law),
        ("source fringes", source_fringes),
        ("swapped fringe", swapped_fringe),
        ("drift and stabilization", drift_and_stabilization),
        ("dead-time discrimination", dead_time_discrimination),
        ("rate budget", rate_budget_check),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} {name}: {verdict} [{:.1} s] {}", i + 1, start.elapsed().as_secs_f64(), o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
