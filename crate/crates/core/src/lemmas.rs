//! Self-check suites that compare the method-of-types utilities and the game
//! solver against exhaustive enumeration on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lp::{solve_bilinear_game, BilinearGame, Polytope};
use crate::maximality::in_v_max;
use crate::prob::{Channel, Distribution, Metric};
use crate::types::{
    anti_concentration_bound, conditional_type_mean, conditional_type_variance,
    decompose_into_types, enumerate_types, likelihood_ratio_band, log2_type_class_size,
    product_target, quantize_joint_to_type, subgaussian_tail, subgaussian_theta, type_class_size,
    JointType,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy (or violation) across cases.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Accumulates the worst discrepancy of one check.
struct Tally {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    cases: usize,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            tolerance,
            worst: 0.0,
            cases: 0,
        }
    }

    fn record(&mut self, discrepancy: f64) {
        self.cases += 1;
        if discrepancy.is_nan() {
            self.worst = f64::INFINITY;
        } else {
            self.worst = self.worst.max(discrepancy);
        }
    }

    fn finish(self) -> Check {
        Check {
            name: self.name.into(),
            passed: self.worst <= self.tolerance,
            worst: self.worst,
            tolerance: self.tolerance,
            cases: self.cases,
        }
    }
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn random_channel(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Channel {
    Channel::new((0..inputs).map(|_| random_simplex(rng, outputs)).collect())
        .expect("random rows are distributions")
}

/// Exact law of `sum_i f(z_i, S_i)` with independent `S_i ~ P(.|z_i)`, as
/// (value, probability) pairs over all output sequences.
fn sum_law(z: &[usize], f: &[Vec<f64>], ch: &Channel) -> Vec<(f64, f64)> {
    let k = ch.outputs();
    let mut law = vec![(0.0, 1.0)];
    for &zi in z {
        let mut next = Vec::with_capacity(law.len() * k);
        for &(v, p) in &law {
            for s in 0..k {
                let ps = ch.get(zi, s);
                if ps > 0.0 {
                    next.push((v + f[zi][s], p * ps));
                }
            }
        }
        law = next;
    }
    law
}

fn moments(law: &[(f64, f64)]) -> (f64, f64) {
    let m: f64 = law.iter().map(|(v, p)| v * p).sum();
    let var: f64 = law.iter().map(|(v, p)| p * (v - m) * (v - m)).sum();
    (m, var)
}

/// Counting, concentration and likelihood-ratio checks.
pub fn counting_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = Tally::new("type-class sizes sum to J^n", 0.0);
    let mut logs = Tally::new("log2 type-class size matches exact count", 1e-9);
    for letters in 1..=3usize {
        for n in 1..=8u32 {
            let types = enumerate_types(n, letters)?;
            let total: u128 = types.iter().map(|t| type_class_size(t).unwrap()).sum();
            sizes.record((total as f64 - (letters as f64).powi(n as i32)).abs());
            for t in &types {
                let exact = (type_class_size(t).unwrap() as f64).log2();
                logs.record((log2_type_class_size(t) - exact).abs());
            }
        }
    }

    // P[Z >= EZ] against the anti-concentration bound, best kappa on a grid.
    let mut anti = Tally::new("anti-concentration bound never exceeds P[Z >= EZ]", 0.0);
    let mut tails = Tally::new("sub-Gaussian tail bounds exact tails", 0.0);
    for _ in 0..50 {
        let n = rng.gen_range(2..=12usize);
        let (zl, sl) = (rng.gen_range(1..=2usize), rng.gen_range(2..=3usize));
        let ch = random_channel(&mut rng, zl, sl);
        let f: Vec<Vec<f64>> = (0..zl)
            .map(|_| (0..sl).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let z: Vec<usize> = (0..n).map(|_| rng.gen_range(0..zl)).collect();
        let law = sum_law(&z, &f, &ch);
        let (mean, var) = moments(&law);
        let scale = law.iter().map(|(v, _)| v.abs()).fold(1.0, f64::max);
        let p_above: f64 = law
            .iter()
            .filter(|(v, _)| *v >= mean - 1e-12 * scale)
            .map(|(_, p)| p)
            .sum();
        let theta = subgaussian_theta(n as u64, -1.0, 1.0);
        let bound = (1..=100)
            .map(|i| anti_concentration_bound(var, theta, i as f64 * 0.1))
            .fold(f64::NEG_INFINITY, f64::max);
        anti.record((bound - p_above).max(0.0));
        for xi in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let tail: f64 = law
                .iter()
                .filter(|(v, _)| (v - mean).abs() >= xi)
                .map(|(_, p)| p)
                .sum();
            tails.record((tail - subgaussian_tail(n as u64, -1.0, 1.0, xi)).max(0.0));
        }
    }

    // Sequence likelihood ratios under a K/n perturbation stay in the band.
    let mut band = Tally::new("likelihood ratios stay inside the band", 0.0);
    let (jx, ky, n) = (2usize, 3usize, 1000usize);
    for _ in 0..5 {
        let p = random_simplex(&mut rng, jx * ky);
        let mut p_bar = p.clone();
        let step = 1.0 / n as f64;
        let (a, b) = (rng.gen_range(0..p.len()), rng.gen_range(0..p.len()));
        if a != b && p_bar[b] > step {
            p_bar[a] += step;
            p_bar[b] -= step;
        }
        let (lo, hi) = likelihood_ratio_band(&p, &p_bar, n as u64, ky)?;
        for _ in 0..200 {
            let mut log_ratio = 0.0;
            for _ in 0..n {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut idx = p.len() - 1;
                for (i, &v) in p.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                log_ratio += (p[idx] / p_bar[idx]).ln();
            }
            let r = log_ratio.exp();
            band.record((lo - r).max(r - hi).max(0.0));
        }
    }
    Ok(SuiteReport {
        suite: "counting".into(),
        seed,
        checks: vec![
            sizes.finish(),
            logs.finish(),
            anti.finish(),
            tails.finish(),
            band.finish(),
        ],
    })
}

/// Conditioning-on-type moments against enumeration of every output sequence.
pub fn conditioning_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = Tally::new("conditional mean equals enumeration", 1e-12);
    let mut var = Tally::new("conditional variance equals enumeration", 1e-12);
    let mut perm = Tally::new("law of the sum depends only on the type", 1e-12);
    for _ in 0..20 {
        for zl in 2..=3usize {
            for sl in 2..=3usize {
                let ch = random_channel(&mut rng, zl, sl);
                let f: Vec<Vec<f64>> = (0..zl)
                    .map(|_| (0..sl).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect();
                for n in 1..=6u32 {
                    for t in enumerate_types(n, zl)? {
                        let z = t.canonical_sequence();
                        let law = sum_law(&z, &f, &ch);
                        let (m, v) = moments(&law);
                        mean.record((conditional_type_mean(&f, &t, &ch)? - m).abs());
                        var.record((conditional_type_variance(&f, &t, &ch)? - v).abs());
                        let mut shuffled = z.clone();
                        shuffled.reverse();
                        let other = sum_law(&shuffled, &f, &ch);
                        perm.record(law_distance(&law, &other));
                    }
                }
            }
        }
    }
    Ok(SuiteReport {
        suite: "conditioning".into(),
        seed,
        checks: vec![mean.finish(), var.finish(), perm.finish()],
    })
}

/// Largest CDF gap between two discrete laws; values closer than 1e-9
/// are treated as the same atom.
fn law_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = a
        .iter()
        .copied()
        .chain(b.iter().map(|&(v, p)| (v, -p)))
        .collect();
    pts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let (mut cum, mut worst) = (0.0f64, 0.0f64);
    for (i, &(v, p)) in pts.iter().enumerate() {
        cum += p;
        if pts.get(i + 1).map_or(true, |next| next.0 - v > 1e-9) {
            worst = worst.max(cum.abs());
        }
    }
    worst
}

fn random_type(rng: &mut impl Rng, n: u32, letters: usize) -> Vec<u32> {
    let mut c = vec![0u32; letters];
    for _ in 0..n {
        c[rng.gen_range(0..letters)] += 1;
    }
    c
}

/// Random pair of joint types `(p_zs, p_su)` sharing their S-marginal.
pub fn random_type_pair(
    rng: &mut impl Rng,
    n: u32,
    zd: usize,
    sd: usize,
    ud: usize,
) -> Result<(JointType, JointType)> {
    let s = random_type(rng, n, sd);
    let mut zs = vec![0u32; zd * sd];
    let mut su = vec![0u32; sd * ud];
    for (si, &c) in s.iter().enumerate() {
        for (zi, v) in random_type_or_empty(rng, c, zd).into_iter().enumerate() {
            zs[zi * sd + si] = v;
        }
        for (ui, v) in random_type_or_empty(rng, c, ud).into_iter().enumerate() {
            su[si * ud + ui] = v;
        }
    }
    Ok((
        JointType::new(vec![zd, sd], zs)?,
        JointType::new(vec![sd, ud], su)?,
    ))
}

fn random_type_or_empty(rng: &mut impl Rng, n: u32, letters: usize) -> Vec<u32> {
    if n == 0 {
        vec![0; letters]
    } else {
        random_type(rng, n, letters)
    }
}

/// Decompositions into nearby types: weights, marginals, distance, recombination.
pub fn decomposition_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Tally::new("weights sum to one", 1e-12);
    let mut margins = Tally::new("components keep both marginals", 0.0);
    let mut dist = Tally::new("components lie within 1/n of the target", 1e-12);
    let mut recomb = Tally::new("recombination reproduces the target", 1e-12);
    let mut quant = Tally::new("quantization recombines within 1e-12 and 1/n", 1e-12);
    for _ in 0..50 {
        let n = rng.gen_range(2..=6u32);
        let (zd, sd, ud) = (
            rng.gen_range(2..=3),
            rng.gen_range(2..=3),
            rng.gen_range(2..=3),
        );
        let (p_zs, p_su) = random_type_pair(&mut rng, n, zd, sd, ud)?;
        let target = product_target(&p_zs, &p_su)?;
        let dec = decompose_into_types(&p_zs, &p_su)?;
        weights.record((dec.weight_sum() - 1.0).abs());
        for (_, t) in &dec.components {
            let ok = t.marginal(&[0, 1]) == p_zs && t.marginal(&[1, 2]) == p_su;
            margins.record(if ok { 0.0 } else { 1.0 });
        }
        dist.record((dec.max_component_distance(&target) - 1.0 / n as f64).max(0.0));
        recomb.record(dec.recombination_error(&target));

        let p = random_simplex(&mut rng, zd * ud);
        let q = quantize_joint_to_type(&p, &[zd, ud], n)?;
        let excess = (q.max_component_distance(&p) - 1.0 / n as f64).max(0.0);
        quant.record(
            q.recombination_error(&p)
                .max(excess)
                .max((q.weight_sum() - 1.0).abs()),
        );
    }
    Ok(SuiteReport {
        suite: "decomposition".into(),
        seed,
        checks: vec![
            weights.finish(),
            margins.finish(),
            dist.finish(),
            recomb.finish(),
            quant.finish(),
        ],
    })
}

/// Max-min against min-max for random simplex games and for the
/// auxiliary-channel game on random binary instances.
pub fn minimax_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generic = Tally::new("simplex games: max-min equals min-max", 1e-8);
    let mut swapped = Tally::new("simplex games: swapping roles negates the value", 1e-8);
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(2..=4usize), rng.gen_range(2..=4usize));
        let g: Vec<Vec<f64>> = (0..a)
            .map(|_| (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let game = BilinearGame::new(g.clone(), Polytope::simplex(a), Polytope::simplex(b))?;
        let sol = solve_bilinear_game(&game)?;
        generic.record((sol.value - sol.min_max_value).abs());
        let neg: Vec<Vec<f64>> = (0..b).map(|j| (0..a).map(|i| -g[i][j]).collect()).collect();
        let dual = solve_bilinear_game(&BilinearGame::new(
            neg,
            Polytope::simplex(b),
            Polytope::simplex(a),
        )?)?;
        swapped.record((dual.value + sol.value).abs());
    }
    let mut channel = Tally::new("auxiliary-channel games: max-min equals min-max", 1e-8);
    for _ in 0..20 {
        let w = random_channel(&mut rng, 2, 2);
        let v = random_channel(&mut rng, 2, 2);
        let px = Distribution::new(random_simplex(&mut rng, 2))?;
        let q = Metric::new(
            (0..2)
                .map(|_| (0..2).map(|_| rng.gen_range(-2.0..0.0)).collect())
                .collect(),
        )?;
        let r = in_v_max(&v, &px, &w, &q, 1e-8)?;
        channel.record((r.value - r.min_max_value).abs());
    }
    Ok(SuiteReport {
        suite: "minimax".into(),
        seed,
        checks: vec![generic.finish(), swapped.finish(), channel.finish()],
    })
}
