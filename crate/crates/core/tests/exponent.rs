mod common;

use common::exponent_oracle::{grid_oracle, BinaryInstance};
use common::*;
use mmlab::exponent::*;
use mmlab::maximality::{AdditiveTd, MmiMetric};
use mmlab::prob::*;
use mmlab::search::SearchOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick() -> SearchOptions {
    SearchOptions {
        starts: 8,
        max_iter: 200,
        ..SearchOptions::default()
    }
}

/// Binary instances whose metric is the log of a perturbed channel, so the
/// mismatch is moderate and the maximal set is a proper subset.
pub fn battery(seed: u64, count: usize) -> Vec<BinaryInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let w00 = rng.gen_range(0.6..0.95);
            let w10 = rng.gen_range(0.05..0.4);
            let mut perturb = |p: f64| (p + rng.gen_range(-0.15..0.15)).clamp(0.02, 0.98);
            let (v00, v10) = (perturb(w00), perturb(w10));
            let p0 = rng.gen_range(0.3..0.7);
            BinaryInstance {
                px: [p0, 1.0 - p0],
                w: [[w00, 1.0 - w00], [w10, 1.0 - w10]],
                q: [[v00.ln(), (1.0 - v00).ln()], [v10.ln(), (1.0 - v10).ln()]],
            }
        })
        .collect()
}

fn lift(inst: &BinaryInstance) -> (Distribution, Channel, Metric) {
    (
        Distribution::new(inst.px.to_vec()).unwrap(),
        Channel::new(inst.w.iter().map(|r| r.to_vec()).collect()).unwrap(),
        Metric::new(inst.q.iter().map(|r| r.to_vec()).collect()).unwrap(),
    )
}

#[test]
fn optimizer_matches_the_grid_oracle() {
    let opts = quick();
    for inst in battery(2024, 8) {
        let (px, w, q) = lift(&inst);
        let full = mutual_information(&px, &w).unwrap();
        for frac in [0.3, 0.7] {
            let rate = frac * full;
            let r = esp(&px, &w, &q, rate, &opts).unwrap();
            let o = grid_oracle(&inst, rate, 0.02);
            assert!(r.certified);
            assert!(
                (r.value_bits - o.value).abs() <= o.resolution + 1e-6,
                "rate {rate}: esp {} oracle {} (resolution {})",
                r.value_bits,
                o.value,
                o.resolution
            );
        }
    }
}

#[test]
fn exponent_vanishes_above_the_information_rate() {
    let (w, q) = (example_w(), example_q());
    let px = Distribution::uniform(2);
    let full = mutual_information(&px, &w).unwrap();
    for rate in [full, full + 0.1, 1.0] {
        let r = esp(&px, &w, &q, rate, &quick()).unwrap();
        assert_eq!(r.value_bits, 0.0);
        assert!(r.certified);
        assert_eq!(r.witness.unwrap(), Coupling::diagonal(&w));
    }
    assert!(esp(&px, &w, &q, -0.1, &quick()).is_err());
}

#[test]
fn exponent_never_exceeds_the_diagonal_one() {
    // Diagonal couplings are maximal, so the matched sphere-packing value
    // bounds the mismatched exponent from above.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..4 {
        let w = random_channel(&mut rng, 2, 3);
        let q = random_metric(&mut rng, 2, 3);
        let px = random_distribution(&mut rng, 2);
        let rate = 0.5 * mutual_information(&px, &w).unwrap();
        let (diag, ch) = diagonal_sphere_packing(&px, &w, rate).unwrap();
        assert!(mutual_information(&px, &ch).unwrap() <= rate + 1e-12);
        let r = esp(&px, &w, &q, rate, &quick()).unwrap();
        assert!(r.certified);
        assert!(r.value_bits <= diag + 1e-9);
        let c = r.witness.unwrap();
        assert!(mutual_information(&px, &marginal_yhat(&c)).unwrap() <= rate + 1e-12);
        assert!(two_input_slack(&c, &px, &q) >= -1e-7);
        assert!((r.value_bits - conditional_kl(&marginal_y(&c), &w, &px).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn curve_is_monotone_and_reproducible() {
    let (w, q) = (example_w(), example_q());
    let px = Distribution::uniform(2);
    let full = mutual_information(&px, &w).unwrap();
    let opts = quick();
    let c = esp_curve(&px, &w, &q, 0.1, full, 6, &opts).unwrap();
    assert_eq!(c.points.len(), 6);
    for pair in c.points.windows(2) {
        assert!(pair[1].exponent_bits <= pair[0].exponent_bits + 1e-12);
        assert!(pair[1].rate_bits > pair[0].rate_bits);
    }
    assert_eq!(c.points.last().unwrap().exponent_bits, 0.0);
    assert!(c.points.iter().all(|p| p.certified));
    for p in &c.points {
        let wit = &c.witnesses[p.witness];
        assert!((conditional_kl(&marginal_y(wit), &w, &px).unwrap() - p.exponent_bits).abs() < 1e-12);
    }
    let again = esp_curve(&px, &w, &q, 0.1, full, 6, &opts).unwrap();
    assert_eq!(c, again);
    assert!(esp_curve(&px, &w, &q, 0.3, 0.2, 6, &opts).is_err());
}

#[test]
fn finite_length_annotation_shifts_rates() {
    let (w, q) = (example_w(), example_q());
    let px = Distribution::uniform(2);
    let c = esp_curve(&px, &w, &q, 0.4, 0.6, 3, &quick()).unwrap();
    let a = finite_n_annotation(&c, 100, 2, 3).unwrap();
    let info = a.n_display.as_ref().unwrap();
    assert_eq!(info.n, 100);
    assert!((info.zeta_bits - 0.3429).abs() < 1e-4);
    for (p, r) in a.points.iter().zip(&c.points) {
        assert!((r.rate_bits - p.rate_bits - info.zeta_bits).abs() < 1e-15);
        assert_eq!(p.exponent_bits, r.exponent_bits);
    }
    assert!(finite_n_annotation(&c, 0, 2, 3).is_err());
}

#[test]
fn point_mass_input_needs_no_search() {
    // A single used input carries no information, so every rate is above I(px, W).
    let (w, q) = (example_w(), example_q());
    let r = esp(&Distribution::point_mass(2, 1), &w, &q, 0.0, &quick()).unwrap();
    assert_eq!(r.value_bits, 0.0);
}

#[test]
fn additive_type_dependent_exponent_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let opts = quick();
    for _ in 0..2 {
        let w = random_channel(&mut rng, 2, 2);
        let q = random_metric(&mut rng, 2, 2);
        let px = random_distribution(&mut rng, 2);
        let rate = 0.5 * mutual_information(&px, &w).unwrap();
        let a = esp(&px, &w, &q, rate, &opts).unwrap();
        let b = esp_td(&px, &w, &AdditiveTd(q.clone()), rate, &opts).unwrap();
        assert!(b.certified);
        assert!((a.value_bits - b.value_bits).abs() < 1e-4, "{} vs {}", a.value_bits, b.value_bits);
    }
}

#[test]
fn mmi_exponent_is_positive_and_decreasing() {
    let w = Channel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
    let px = Distribution::uniform(2);
    let full = mutual_information(&px, &w).unwrap();
    let opts = quick();
    let mut last = f64::INFINITY;
    for frac in [0.2, 0.5, 0.8] {
        let r = esp_td(&px, &w, &MmiMetric, frac * full, &opts).unwrap();
        assert!(r.certified);
        assert!(r.value_bits > 0.0);
        assert!(r.value_bits <= last + 1e-9);
        last = r.value_bits;
    }
}
