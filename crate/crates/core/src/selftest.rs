//! Fast invariant checks run by `tbswap selftest`.

use serde::{Deserialize, Serialize};

use crate::mc::{phase_noise_sigma, run_scenario, visibility_degradation};
use crate::optics::{herald_decision, BellOutcome, BsmDetector, ClickPattern};
use crate::scenario::{Experiment, ScenarioConfig, SourceConfig};
use crate::timebin::{bell_decompose, build_pair_state_for, BellKind, JointState, PhaseConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }
}

pub fn run_selftest(seed: u64) -> SelftestReport {
    run_selftest_with(seed, visibility_degradation)
}

/// Selftest with an injectable multi-pair law, so a broken implementation
/// can be shown to fail.
pub fn run_selftest_with(seed: u64, vd: fn(f64) -> f64) -> SelftestReport {
    let mut r = SelftestReport::default();

    let phase = PhaseConfig::from_theta(0.3, 1e-9).expect("valid phase");
    for n in 1..=4 {
        let res = build_pair_state_for(n, &phase, 1.0, 1)
            .and_then(|a| Ok((a, build_pair_state_for(n, &phase, 1.0, 2)?)))
            .and_then(|(a, b)| JointState::new(a, b))
            .and_then(|j| bell_decompose(&j));
        let want = (n as f64 - 1.0) / (n * n) as f64;
        match res {
            Ok(d) => {
                let got = d.probability(BellKind::PsiMinus);
                r.push(
                    &format!("herald_law_analytic_n{n}"),
                    (got - want).abs() < 1e-12 && (d.total_probability() - 1.0).abs() < 1e-12,
                    format!("P(psi-)={got:.12} expected {want:.12}"),
                );
            }
            Err(e) => r.push(&format!("herald_law_analytic_n{n}"), false, e.to_string()),
        }
    }

    let checks = [(0.0, 1.0), (0.023, 0.956_022_944_550_669), (0.5, 0.5)];
    let worst = checks.iter().map(|&(mu, v)| (vd(mu) - v).abs()).fold(0.0, f64::max);
    r.push("multipair_law", worst < 1e-9, format!("max deviation {worst:.3e}"));

    let sigma = phase_noise_sigma(&SourceConfig::default());
    r.push("phase_noise_sigma", (sigma - 0.1412).abs() < 5e-4, format!("sigma={sigma:.5} rad"));

    use BsmDetector::*;
    let slow = herald_decision(&ClickPattern::from_bins(1000.0, &[(D1, 2), (D1, 3)]), 40_000.0);
    let fast = herald_decision(&ClickPattern::from_bins(1000.0, &[(D1, 2), (D1, 3)]), 500.0);
    r.push(
        "dead_time_rule",
        slow == BellOutcome::NoHerald && fast == BellOutcome::WouldBePsiPlus(2),
        format!("40 ns: {slow:?}, 0.5 ns: {fast:?}"),
    );

    let mut cfg = ScenarioConfig::ideal("selftest", Experiment::Swapping, vec![0.0, std::f64::consts::PI], 4e-4);
    cfg.alice.n_bins = 2;
    cfg.bob.n_bins = 2;
    cfg.alice.mu = 0.05;
    cfg.bob.mu = 0.05;
    cfg.seed = seed;
    cfg.engine.chunk_frames = 1 << 15;
    match (run_scenario(&cfg, Some(1)), run_scenario(&cfg, Some(2))) {
        (Ok(a), Ok(b)) => {
            let t = &a.totals;
            let p = 0.25;
            let exp = t.eligible_frames as f64 * p;
            let sd = (exp * (1.0 - p)).sqrt();
            let z = (t.heralds as f64 - exp) / sd.max(1e-12);
            r.push(
                "herald_law_mc_n2",
                z.abs() < 4.0 && t.eligible_frames > 1000,
                format!("{} heralds in {} frames, z={z:.2}", t.heralds, t.eligible_frames),
            );
            r.push("determinism_workers", a == b, format!("1 vs 2 workers identical: {}", a == b));
        }
        (Err(e), _) | (_, Err(e)) => r.push("herald_law_mc_n2", false, e.to_string()),
    }
    r
}
