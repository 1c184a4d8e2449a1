//! Reproduction runner for the built-in example instance: capacity, the
//! three converse bounds, the prior-set exclusion of the published coupling,
//! and the matched-metric sanity check on a BSC.

use mmlab::bounds::{auxiliary_capacity_bound, full_bound, prior_bound};
use mmlab::maximality::is_maximal_prior;
use mmlab::prob::{blahut_arimoto_capacity, Channel, Metric};
use mmlab::search::SearchOptions;
use serde::{Deserialize, Serialize};

use crate::io::Preset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub seed: u64,
    pub checks: Vec<ReproCheck>,
}

impl ReproReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

fn timed<T>(f: impl FnOnce() -> mmlab::Result<T>) -> mmlab::Result<(T, f64)> {
    let t = std::time::Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn check(name: &str, value: f64, expected: f64, tolerance: f64, seconds: f64) -> ReproCheck {
    ReproCheck {
        name: name.into(),
        value,
        expected,
        tolerance,
        passed: (value - expected).abs() <= tolerance,
        seconds,
    }
}

pub fn run(seed: u64, grid_step: f64) -> mmlab::Result<ReproReport> {
    let ex = Preset::Example;
    let (w, q) = (ex.channel(), ex.metric());
    let c = ex.coupling().expect("the example has a coupling");
    let mut checks = Vec::new();

    let (cap, s) = timed(|| Ok(blahut_arimoto_capacity(&w, 1e-9)))?;
    checks.push(check("capacity", cap.bits, 0.7133, 1e-3, s));

    let (aux, s) = timed(|| auxiliary_capacity_bound(&c, &w, &q, grid_step, 1e-2, 1e-8))?;
    checks.push(check("auxiliary-capacity bound", aux.value_bits, 0.4999, 1e-3, s));
    let slack = aux.universal.as_ref().map_or(f64::NEG_INFINITY, |u| u.min_slack);
    let mut uni = check("coupling maximal on the input grid", slack, 0.0, 1e-6, 0.0);
    uni.passed = aux.certified && slack >= -1e-6;
    checks.push(uni);

    let (prior, s) = timed(|| prior_bound(&w, &q, grid_step))?;
    checks.push(check("prior-set bound", prior.value_bits, 0.6182, 5e-3, s));

    let (support, s) = timed(|| is_maximal_prior(&c, &q))?;
    let hit = support
        .violations
        .iter()
        .find(|v| (v.0, v.1, v.2) == (1, 2, 1))
        .map_or(0.0, |v| v.3);
    let mut excl = check("coupling outside the prior set", hit, 0.1133, 1e-9, s);
    excl.passed &= !support.member;
    checks.push(excl);

    let bsc = Channel::bsc(0.1);
    let matched = Metric::matched(&bsc, crate::io::DEFAULT_LOG_FLOOR);
    let opts = SearchOptions {
        seed,
        ..SearchOptions::default()
    };
    let (full, s) = timed(|| full_bound(&bsc, &matched, grid_step, &opts))?;
    checks.push(check(
        "matched-metric full bound on BSC(0.1)",
        full.value_bits,
        1.0 - h2(0.1),
        2e-3,
        s,
    ));
    Ok(ReproReport { seed, checks })
}
