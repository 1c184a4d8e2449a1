mod common;

use common::*;
use mmlab::bounds::*;
use mmlab::maximality::is_maximal;
use mmlab::prob::*;
use mmlab::search::SearchOptions;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick() -> SearchOptions {
    SearchOptions {
        starts: 8,
        max_iter: 150,
        ..SearchOptions::default()
    }
}

/// `I(px, V)` minimized over a grid of couplings whose support respects the
/// prior set; two inputs and two outputs leave one free mass per `(x, y)`.
fn prior_grid_oracle(px: &Distribution, w: &Channel, q: &Metric, steps: usize) -> f64 {
    let t = mmlab::maximality::sq_table(q);
    let free: Vec<bool> = (0..4).map(|i| t.contains(i % 2, 1 - i % 2, i / 2)).collect();
    let mut best = f64::INFINITY;
    let levels = |b: bool| if b { steps } else { 0 };
    for a in 0..=levels(free[0]) {
        for b in 0..=levels(free[1]) {
            for c in 0..=levels(free[2]) {
                for d in 0..=levels(free[3]) {
                    let s = [a, b, c, d].map(|v| v as f64 / steps as f64);
                    let mut tables = vec![vec![vec![0.0; 2]; 2]; 2];
                    for x in 0..2 {
                        for y in 0..2 {
                            let off = s[x * 2 + y];
                            tables[x][y][y] = w.get(x, y) * (1.0 - off);
                            tables[x][y][1 - y] = w.get(x, y) * off;
                        }
                    }
                    let v = marginal_yhat(&Coupling::new(tables).unwrap());
                    best = best.min(mutual_information(px, &v).unwrap());
                }
            }
        }
    }
    best
}

#[test]
fn diagonal_auxiliary_bound_is_the_capacity() {
    let (w, q) = (example_w(), example_q());
    let r = auxiliary_capacity_bound(&Coupling::diagonal(&w), &w, &q, 0.05, 1e-12, 1e-8).unwrap();
    assert!(r.certified);
    assert_eq!(r.mode, BoundMode::AuxiliaryCapacity);
    assert!((r.value_bits - blahut_arimoto_capacity(&w, 1e-12).bits).abs() < 1e-9);
}

#[test]
fn example_coupling_gives_the_auxiliary_capacity() {
    let (w, q) = (example_w(), example_q());
    let r = auxiliary_capacity_bound(&example_coupling(), &w, &q, 0.05, 1e-2, 1e-8).unwrap();
    assert!(r.certified);
    assert!((r.value_bits - 0.4999).abs() < 1e-3);
    // A coupling of a different channel is rejected.
    let other = Coupling::diagonal(&Channel::new(vec![vec![0.5, 0.5, 0.0], vec![0.1, 0.1, 0.8]]).unwrap());
    assert!(auxiliary_capacity_bound(&other, &w, &q, 0.05, 1e-2, 1e-8).is_err());
}

#[test]
fn inner_minimum_is_certified_and_below_the_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..4 {
        let w = random_channel(&mut rng, 2, 3);
        let q = random_metric(&mut rng, 2, 3);
        let px = random_distribution(&mut rng, 2);
        let r = inner_min_mi(&px, &w, &q, &quick()).unwrap();
        assert!(r.value_bits <= mutual_information(&px, &w).unwrap() + 1e-12);
        assert!(marginal_y(&r.coupling).max_abs_diff(&w) < 1e-9);
        assert!(two_input_slack(&r.coupling, &px, &q) >= -1e-7);
        assert!(is_maximal(&r.coupling, &px, &q, 1e-7).unwrap().0);
        let v = mutual_information(&px, &marginal_yhat(&r.coupling)).unwrap();
        assert!((v - r.value_bits).abs() < 1e-12);
        // The prior set is smaller, so its minimum cannot be lower.
        if let Some((prior, c, _)) = prior_inner(&px, &w, &q).unwrap() {
            assert!(r.value_bits <= prior + 1e-9);
            assert!(is_maximal(&c, &px, &q, 1e-8).unwrap().0);
        }
    }
}

#[test]
fn prior_inner_matches_a_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let w = random_channel(&mut rng, 2, 2);
        let q = random_metric(&mut rng, 2, 2);
        let px = random_distribution(&mut rng, 2);
        let (v, _, gap) = prior_inner(&px, &w, &q).unwrap().unwrap();
        let oracle = prior_grid_oracle(&px, &w, &q, 60);
        assert!(gap <= 1e-8);
        assert!(v <= oracle + 1e-9, "{v} > {oracle}");
        assert!(v >= oracle - 2e-3, "{v} << {oracle}");
    }
}

#[test]
fn degenerate_alphabets_give_zero() {
    let w1 = Channel::new(vec![vec![1.0], vec![1.0]]).unwrap();
    let q1 = Metric::new(vec![vec![0.0], vec![-1.0]]).unwrap();
    let r = full_bound(&w1, &q1, 0.25, &quick()).unwrap();
    assert!(r.value_bits.abs() < 1e-12);

    let w2 = Channel::new(vec![vec![0.3, 0.7]]).unwrap();
    let q2 = Metric::new(vec![vec![0.0, -1.0]]).unwrap();
    let r = full_bound(&w2, &q2, 0.25, &quick()).unwrap();
    assert!(r.value_bits.abs() < 1e-12);
    let r = prior_bound(&w2, &q2, 0.25).unwrap();
    assert!(r.value_bits.abs() < 1e-12);
}

#[test]
fn matched_metric_keeps_the_channel() {
    // With the matched metric on a clean channel no maximal coupling can
    // lower the information below that of the channel itself.
    let w = Channel::bsc(0.1);
    let q = Metric::matched(&w, -1e9);
    let px = Distribution::uniform(2);
    let r = inner_min_mi(&px, &w, &q, &quick()).unwrap();
    assert!((r.value_bits - mutual_information(&px, &w).unwrap()).abs() < 1e-6);
}

#[test]
fn prior_bound_on_the_example() {
    let r = prior_bound(&example_w(), &example_q(), 0.01).unwrap();
    assert!((r.value_bits - 0.6182).abs() < 5e-4);
    assert!(r.grid.iter().all(|g| g.gap.unwrap() <= 1e-8));
    let best = r.grid.iter().map(|g| g.value_bits).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, r.value_bits);
}

#[test]
fn full_bound_lies_between_the_prior_bound_and_the_channel() {
    let (w, q) = (example_w(), example_q());
    let opts = quick();
    let full = full_bound(&w, &q, 0.25, &opts).unwrap();
    let prior = prior_bound(&w, &q, 0.25).unwrap();
    assert!(full.value_bits <= prior.value_bits + 1e-9);
    assert!(full.value_bits <= blahut_arimoto_capacity(&w, 1e-12).bits + 1e-9);
    assert!(full.value_bits > 0.3);
    // Same seed, same witness.
    let again = full_bound(&w, &q, 0.25, &opts).unwrap();
    assert_eq!(full.value_bits, again.value_bits);
    assert_eq!(full.witness, again.witness);
}
