mod common;

use common::*;
use mmlab::lp::{Cmp, LpBuilder, Sense};
use mmlab::maximality::*;
use mmlab::prob::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

/// Adversary minimum written out directly: mass `mu(x1, yhat, x2)` leaves row
/// `x1` with total `px(x1) V(yhat|x1)` and arrives at `x2` with total
/// `px(x2) V(yhat|x2)`; each unit costs `E[q(x2, Y) | x1, yhat]`.
fn transport_oracle(c: &Coupling, px: &Distribution, q: &Metric) -> f64 {
    let (j, k) = (c.inputs(), c.outputs());
    let v = marginal_yhat(c);
    let mut lp = LpBuilder::new(Sense::Minimize);
    let mut id = vec![vec![vec![usize::MAX; j]; k]; j];
    for x1 in 0..j {
        for yh in 0..k {
            let m = v.get(x1, yh);
            for x2 in 0..j {
                let cost = if m > 0.0 {
                    (0..k).map(|y| c.get(x1, y, yh) / m * q.get(x2, y)).sum()
                } else {
                    0.0
                };
                id[x1][yh][x2] = lp.add_var(cost);
            }
        }
    }
    for yh in 0..k {
        for x in 0..j {
            let mass = px[x] * v.get(x, yh);
            lp.add_row((0..j).map(|x2| (id[x][yh][x2], 1.0)).collect(), Cmp::Eq, mass);
            lp.add_row((0..j).map(|x1| (id[x1][yh][x], 1.0)).collect(), Cmp::Eq, mass);
        }
    }
    lp.solve().unwrap().objective
}

fn direct_baseline(c: &Coupling, px: &Distribution, q: &Metric) -> f64 {
    let k = c.outputs();
    let mut b = 0.0;
    for x in 0..c.inputs() {
        for y in 0..k {
            for yh in 0..k {
                b += px[x] * c.get(x, y, yh) * q.get(x, y);
            }
        }
    }
    b
}

fn diagonal_of(c: &Coupling) -> Coupling {
    Coupling::diagonal(&marginal_y(c))
}

/// Largest `t` on a bisection grid for which `(1-t) diag + t c` passes `member`.
fn boundary_member(c: &Coupling, member: impl Fn(&Coupling) -> bool) -> Coupling {
    let d = diagonal_of(c);
    if member(c) {
        return c.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if member(&d.mix(c, mid).unwrap()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    d.mix(c, lo).unwrap()
}

/// Keeps only cells allowed by `S_q`, moving the rest onto the diagonal.
fn project_to_prior_set(c: &Coupling, q: &Metric) -> Coupling {
    let t = sq_table(q);
    let (j, k) = (c.inputs(), c.outputs());
    let mut tables = c.tables();
    for x in 0..j {
        for y in 0..k {
            for yh in 0..k {
                if yh != y && !t.contains(y, yh, x) {
                    tables[x][y][y] += tables[x][y][yh];
                    tables[x][y][yh] = 0.0;
                }
            }
        }
    }
    Coupling::new(tables).unwrap()
}

#[test]
fn example_coupling_is_maximal_at_uniform() {
    let (c, q) = (example_coupling(), example_q());
    let px = Distribution::uniform(2);
    let (member, cert) = is_maximal(&c, &px, &q, TOL).unwrap();
    assert!(member);
    assert!(cert.slack.abs() < 1e-9);
    assert!((cert.baseline - direct_baseline(&c, &px, &q)).abs() < 1e-12);
    assert!((cert.slack - two_input_slack(&c, &px, &q)).abs() < 1e-10);
    // The published channel is rounded from the coupling.
    assert!(marginal_yhat(&c).max_abs_diff(&example_v()) < 1e-2);
    // The adversary table is a conditional law for every (x1, yhat).
    for row in cert.worst_adversary.iter().flatten() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sq_table_of_the_example_metric() {
    let t = sq_table(&example_q());
    for k in 0..3 {
        assert_eq!(t.get(k, k), &[0, 1]);
    }
    for (k1, k2, j) in [(0, 1, 0), (0, 2, 1), (1, 0, 1), (1, 2, 1), (2, 0, 0), (2, 1, 0)] {
        assert_eq!(t.get(k1, k2), &[j], "S({k1},{k2})");
    }
    // The example coupling puts mass on (x=1, y=2, yhat=1) where S only allows
    // x=0, so it lies outside the prior set.
    let check = is_maximal_prior(&example_coupling(), &example_q()).unwrap();
    assert!(!check.member);
    assert_eq!(check.violations.len(), 1);
    let (x, y, yh, _) = check.violations[0];
    assert_eq!((x, y, yh), (1, 2, 1));
}

#[test]
fn diagonal_coupling_is_in_every_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let w = random_channel(&mut rng, 3, 3);
        let q = random_metric(&mut rng, 3, 3);
        let px = random_distribution(&mut rng, 3);
        let d = Coupling::diagonal(&w);
        assert!(is_maximal(&d, &px, &q, TOL).unwrap().0);
        assert!(is_maximal_prior(&d, &q).unwrap().member);
        assert!(in_gamma_rho(&d, &q, &q).unwrap().member);
        assert!(in_theta_star(&d, &px, &q, TOL).unwrap().0);
        assert!(in_gamma_star(&d, &px, &q, TOL, GammaStarReading::Support).unwrap().0);
        assert!(in_v_max(&w, &px, &w, &q, TOL).unwrap().member);
        let td = is_maximal_td(&d, &px, &AdditiveTd(q.clone()), TOL, &TdOptions::default()).unwrap();
        assert!(td.verdict.is_member());
        let mmi = is_maximal_td(&d, &px, &MmiMetric, TOL, &TdOptions::default()).unwrap();
        assert!(mmi.verdict.is_member());
    }
}

#[test]
fn universal_check_on_the_example() {
    let q = example_q();
    let report = is_maximal_universal(&example_coupling(), &q, 0.01, TOL).unwrap();
    assert!(report.member);
    assert_eq!(report.points, 101);
    assert!(report.min_slack >= -1e-9);

    // Shifting mass at (x=1, y=2) onto yhat=0 makes swapping inputs at yhat=0
    // profitable. With two inputs the sign of that gain does not depend on
    // px, so every interior point fails and the vertices pass.
    let mut t = example_tables();
    t[1][2][0] += 0.05;
    t[1][2][2] -= 0.05;
    let c = Coupling::new(t).unwrap();
    for p0 in [0.1, 0.5, 0.9] {
        let px = Distribution::new(vec![p0, 1.0 - p0]).unwrap();
        let cert = adversary_value(&c, &px, &q).unwrap();
        assert!(!cert.is_member());
        assert!((cert.slack - two_input_slack(&c, &px, &q)).abs() < 1e-10);
    }
    assert!(is_maximal(&c, &Distribution::point_mass(2, 0), &q, TOL).unwrap().0);
    let report = is_maximal_universal(&c, &q, 0.05, TOL).unwrap();
    assert!(!report.member);
    assert_eq!(report.points, 21);
    let oracle = simplex_grid(2, 0.05)
        .unwrap()
        .iter()
        .map(|px| two_input_slack(&c, px, &q))
        .fold(f64::INFINITY, f64::min);
    assert!((report.min_slack - oracle).abs() < 1e-10);
}

#[test]
fn simplex_grid_counts() {
    assert_eq!(simplex_grid(2, 0.1).unwrap().len(), 11);
    assert_eq!(simplex_grid(3, 0.25).unwrap().len(), 15);
    assert!(simplex_grid(2, 0.0).is_err());
}

#[test]
fn inclusions_hold_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut strict_mmax = 0;
    for _ in 0..40 {
        let q = random_metric(&mut rng, 2, 3);
        let px = random_distribution(&mut rng, 2);
        let c = random_coupling(&mut rng, 2, 3);

        let prior = project_to_prior_set(&c, &q);
        assert!(is_maximal_prior(&prior, &q).unwrap().member);
        assert!(two_input_slack(&prior, &px, &q) >= -1e-12);
        assert!(is_maximal(&prior, &px, &q, TOL).unwrap().0);

        let theta = boundary_member(&c, |m| in_theta_star(m, &px, &q, TOL).unwrap().0);
        assert!(two_input_slack(&theta, &px, &q) >= -1e-7);
        assert!(is_maximal(&theta, &px, &q, TOL).unwrap().0);

        let sup = boundary_member(&c, |m| {
            in_gamma_star(m, &px, &q, TOL, GammaStarReading::Support).unwrap().0
        });
        assert!(in_theta_star(&sup, &px, &q, TOL).unwrap().0);

        let mm = boundary_member(&c, |m| two_input_slack(m, &px, &q) >= 0.0);
        if !in_theta_star(&mm, &px, &q, TOL).unwrap().0 {
            strict_mmax += 1;
        }
    }
    // The maximal set is strictly larger than its jointly-adaptive subset.
    assert!(strict_mmax > 0);
}

#[test]
fn membership_implies_vmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..15 {
        let q = random_metric(&mut rng, 2, 3);
        let px = random_distribution(&mut rng, 2);
        let c = boundary_member(&random_coupling(&mut rng, 2, 3), |m| two_input_slack(m, &px, &q) >= 0.0);
        let (w, v) = (marginal_y(&c), marginal_yhat(&c));
        let r = in_v_max(&v, &px, &w, &q, 1e-7).unwrap();
        assert!(r.member, "slack {}", r.slack);
        assert!(r.saddle_gap < 1e-7);
        assert!(marginal_y(&r.coupling).max_abs_diff(&w) < 1e-8);
        assert!(marginal_yhat(&r.coupling).max_abs_diff(&v) < 1e-8);
    }
}

#[test]
fn additive_type_dependent_check_matches_linear_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let q = random_metric(&mut rng, 3, 3);
        let px = random_distribution(&mut rng, 3);
        let c = random_coupling(&mut rng, 3, 3);
        let lin = adversary_value(&c, &px, &q).unwrap();
        let td = is_maximal_td(&c, &px, &AdditiveTd(q.clone()), TOL, &TdOptions::default()).unwrap();
        assert!((td.slack - lin.slack).abs() < 1e-6, "{} vs {}", td.slack, lin.slack);
        assert!(td.certified);
    }
}

/// Joint law of `(X2, Y)` when the adversary swaps `mu[yhat]` between the two inputs.
fn swapped_joint(c: &Coupling, px: &Distribution, mu: &[f64]) -> Vec<f64> {
    let k = c.outputs();
    let mut joint = vec![0.0; 2 * k];
    for yh in 0..k {
        for x1 in 0..2 {
            let m: f64 = (0..k).map(|y| c.get(x1, y, yh)).sum();
            if m <= 0.0 {
                continue;
            }
            let keep = px[x1] * m - mu[yh];
            for y in 0..k {
                let cond = c.get(x1, y, yh) / m;
                joint[x1 * k + y] += keep * cond;
                joint[(1 - x1) * k + y] += mu[yh] * cond;
            }
        }
    }
    joint
}

#[test]
fn mmi_adversary_matches_a_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let steps = 200;
    for _ in 0..6 {
        let c = random_coupling(&mut rng, 2, 2);
        let px = random_distribution(&mut rng, 2);
        let limit: Vec<f64> = (0..2)
            .map(|yh| {
                let m = |x: usize| (0..2).map(|y| c.get(x, y, yh)).sum::<f64>();
                (px[0] * m(0)).min(px[1] * m(1))
            })
            .collect();
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                let mu = [limit[0] * a as f64 / steps as f64, limit[1] * b as f64 / steps as f64];
                best = best.min(MmiMetric.value(&swapped_joint(&c, &px, &mu), 2, 2));
            }
        }
        let cert = is_maximal_td(&c, &px, &MmiMetric, TOL, &TdOptions::default()).unwrap();
        assert!(cert.best_value <= best + 1e-9, "{} > grid {}", cert.best_value, best);
        assert!(cert.best_value >= best - 2e-3, "{} << grid {}", cert.best_value, best);
        assert!(cert.lower_bound <= cert.best_value + 1e-12);
    }
}

#[test]
fn gamma_star_readings_on_the_example() {
    let (c, q) = (example_coupling(), example_q());
    let px = Distribution::uniform(2);
    let eq = in_gamma_star(&c, &px, &q, TOL, GammaStarReading::Equality).unwrap();
    let th = in_theta_star(&c, &px, &q, TOL).unwrap();
    assert_eq!(eq.1, th.1);
    let sup = in_gamma_star(&c, &px, &q, TOL, GammaStarReading::Support).unwrap();
    assert!(sup.1.slack <= eq.1.slack + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_input_slack_matches_closed_form(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(2..=4);
        let c = random_coupling(&mut rng, 2, k);
        let px = random_distribution(&mut rng, 2);
        let q = random_metric(&mut rng, 2, k);
        let cert = adversary_value(&c, &px, &q).unwrap();
        prop_assert!((cert.slack - two_input_slack(&c, &px, &q)).abs() < 1e-9);
    }

    #[test]
    fn adversary_matches_transport_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (j, k) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
        let c = random_coupling(&mut rng, j, k);
        let px = random_distribution(&mut rng, j);
        let q = random_metric(&mut rng, j, k);
        let cert = adversary_value(&c, &px, &q).unwrap();
        prop_assert!((cert.adversary_value - transport_oracle(&c, &px, &q)).abs() < 1e-9);
        prop_assert!(cert.slack <= 1e-12);
        prop_assert!(cert.adversary_value <= cert.baseline + 1e-12);
        prop_assert!((cert.baseline - direct_baseline(&c, &px, &q)).abs() < 1e-12);
    }

    #[test]
    fn prior_set_is_gamma_rho_at_rho_equal_q(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_metric(&mut rng, 3, 3);
        let c = project_to_prior_set(&random_coupling(&mut rng, 3, 3), &random_metric(&mut rng, 3, 3));
        prop_assert_eq!(is_maximal_prior(&c, &q).unwrap().member, in_gamma_rho(&c, &q, &q).unwrap().member);
    }

    #[test]
    fn theta_star_is_inside_the_maximal_set(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coupling(&mut rng, 3, 2);
        let px = random_distribution(&mut rng, 3);
        let q = random_metric(&mut rng, 3, 2);
        let th = in_theta_star(&c, &px, &q, TOL).unwrap().1;
        let mm = adversary_value(&c, &px, &q).unwrap();
        prop_assert!(th.slack <= mm.slack + 1e-9);
    }

    #[test]
    fn slack_is_invariant_to_a_metric_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coupling(&mut rng, 3, 3);
        let px = random_distribution(&mut rng, 3);
        let q = random_metric(&mut rng, 3, 3);
        // Adding a function of y alone changes nothing the adversary can exploit.
        let bump: Vec<f64> = (0..3).map(|y| shift * (y as f64 - 1.0)).collect();
        let q2 = Metric::new(q.rows().into_iter().map(|r| r.iter().zip(&bump).map(|(a, b)| a + b).collect()).collect()).unwrap();
        let a = adversary_value(&c, &px, &q).unwrap().slack;
        let b = adversary_value(&c, &px, &q2).unwrap().slack;
        prop_assert!((a - b).abs() < 1e-9);
    }
}
