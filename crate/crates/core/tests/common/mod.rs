#![allow(dead_code)]

pub mod exponent_oracle;

use mmlab::prob::{Channel, Coupling, Distribution, Metric};
use mmlab::sim::Codebook;
use rand::Rng;

pub fn example_w() -> Channel {
    Channel::new(vec![vec![0.97, 0.03, 0.0], vec![0.1, 0.1, 0.8]]).unwrap()
}

pub fn example_q() -> Metric {
    Metric::new(vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.5f64.ln(), 1.36f64.ln()]]).unwrap()
}

/// The published witness coupling, `[x][y][yhat]`.
pub fn example_tables() -> Vec<Vec<Vec<f64>>> {
    vec![
        vec![vec![0.3778, 0.5922, 0.0], vec![0.0, 0.03, 0.0], vec![0.0, 0.0, 0.0]],
        vec![vec![0.1, 0.0, 0.0], vec![0.0, 0.0911, 0.0], vec![0.0, 0.1133, 0.6956]],
    ]
}

pub fn example_coupling() -> Coupling {
    Coupling::new(example_tables()).unwrap()
}

/// The published auxiliary channel.
pub fn example_v() -> Channel {
    Channel::new(vec![vec![0.3756, 0.6244, 0.0], vec![0.1, 0.2044, 0.6956]]).unwrap()
}

pub fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_channel(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Channel {
    Channel::new((0..inputs).map(|_| simplex(rng, outputs)).collect()).unwrap()
}

pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Distribution {
    Distribution::new(simplex(rng, n)).unwrap()
}

pub fn random_metric(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Metric {
    Metric::new((0..inputs).map(|_| (0..outputs).map(|_| rng.gen_range(-3.0..0.0)).collect()).collect()).unwrap()
}

pub fn random_coupling(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Coupling {
    Coupling::new(
        (0..inputs)
            .map(|_| {
                let flat = simplex(rng, outputs * outputs);
                flat.chunks(outputs).map(|r| r.to_vec()).collect()
            })
            .collect(),
    )
    .unwrap()
}

/// Adversary slack for two inputs in closed form. With two letters the only
/// freedom the adversary has at each `yhat` is to swap an equal mass `mu`
/// between the letters, up to `min(px0 V(yhat|0), px1 V(yhat|1))`, which
/// changes the metric by `mu (D0 - D1)` with `Dx = E[q(1,Y) - q(0,Y) | x, yhat]`.
pub fn two_input_slack(c: &Coupling, px: &Distribution, q: &Metric) -> f64 {
    assert_eq!(c.inputs(), 2);
    let k = c.outputs();
    let mut slack = 0.0;
    for yh in 0..k {
        let mass = |x: usize| (0..k).map(|y| c.get(x, y, yh)).sum::<f64>();
        let (m0, m1) = (mass(0), mass(1));
        let limit = (px[0] * m0).min(px[1] * m1);
        if limit <= 0.0 {
            continue;
        }
        let d = |x: usize, m: f64| (0..k).map(|y| c.get(x, y, yh) / m * (q.get(1, y) - q.get(0, y))).sum::<f64>();
        slack += limit * (d(0, m0) - d(1, m1)).min(0.0);
    }
    slack
}

/// Every sequence over `k` letters of length `n`.
pub fn all_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |b| {
                    let mut t = s.clone();
                    t.push(b);
                    t
                })
            })
            .collect();
    }
    out
}

pub fn likelihood(x: &[usize], y: &[usize], w: &Channel) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| w.get(a, b)).product()
}

/// Maximum-likelihood decoding error by brute force, ties split evenly.
pub fn ml_error(cb: &Codebook, w: &Channel) -> Vec<f64> {
    let n = cb.block_length();
    let ys = all_sequences(n, w.outputs());
    (0..cb.len())
        .map(|m| {
            let mut err = 0.0;
            for y in &ys {
                let p = likelihood(&cb.codewords[m], y, w);
                if p == 0.0 {
                    continue;
                }
                let l: Vec<f64> = cb.codewords.iter().map(|x| likelihood(x, y, w)).collect();
                let best = l.iter().copied().fold(0.0, f64::max);
                let winners = l.iter().filter(|&&v| (v - best).abs() <= 1e-12 * best).count();
                if (l[m] - best).abs() <= 1e-12 * best {
                    err += p * (1.0 - 1.0 / winners as f64);
                } else {
                    err += p;
                }
            }
            err
        })
        .collect()
}
