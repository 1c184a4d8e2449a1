// Grid oracle for the sphere-packing exponent on binary-input, binary-output
// instances. It does not use the LP code: with two inputs the adversary can
// only swap the two letters, so a coupling is maximal iff for every yhat used
// by both inputs, E[d(Y) | x=0, yhat] >= E[d(Y) | x=1, yhat] where
// d = q(1, .) - q(0, .). For a fixed auxiliary channel V the reachable
// (Y'(0|0), Y'(0|1)) pairs then form a polygon, and the divergence is
// minimized over it exactly (convex function on a convex polygon).

#![allow(dead_code)]

pub struct BinaryInstance {
    pub px: [f64; 2],
    /// w[x][y]
    pub w: [[f64; 2]; 2],
    /// q[x][y]
    pub q: [[f64; 2]; 2],
}

fn xlog2(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).log2()
    }
}

pub fn divergence(inst: &BinaryInstance, a: f64, b: f64) -> f64 {
    let row = |p: f64, w: [f64; 2]| xlog2(p, w[0]) + xlog2(1.0 - p, w[1]);
    inst.px[0] * row(a, inst.w[0]) + inst.px[1] * row(b, inst.w[1])
}

/// I(px, V) in bits with v[x] = V(yhat = 0 | x).
pub fn information(px: [f64; 2], v: [f64; 2]) -> f64 {
    let out0 = px[0] * v[0] + px[1] * v[1];
    let mut total = 0.0;
    for x in 0..2 {
        for (p, o) in [(v[x], out0), (1.0 - v[x], 1.0 - out0)] {
            if p > 0.0 {
                total += px[x] * p * (p / o).log2();
            }
        }
    }
    total.max(0.0)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-18 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-18 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn min_on_segment(f: &dyn Fn(f64, f64) -> f64, p: (f64, f64), r: (f64, f64)) -> f64 {
    let g = |t: f64| f(p.0 + t * (r.0 - p.0), p.1 + t * (r.1 - p.1));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) <= g(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    g(0.5 * (lo + hi)).min(g(0.0)).min(g(1.0))
}

/// Smallest divergence over maximal couplings whose auxiliary channel is V,
/// with v[x] = V(yhat = 0 | x).
pub fn exponent_at(inst: &BinaryInstance, v: [f64; 2]) -> f64 {
    let d0 = inst.q[1][0] - inst.q[0][0];
    let d1 = inst.q[1][1] - inst.q[0][1];
    let mut pts = vec![(0.0, 0.0)];
    for yh in 0..2 {
        let m = if yh == 0 { v } else { [1.0 - v[0], 1.0 - v[1]] };
        // r[x] = P(Y = 0 | x, yhat)
        let corners: Vec<(f64, f64)> = if m[0] > 0.0 && m[1] > 0.0 && d0 != d1 {
            if d0 > d1 {
                vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
            } else {
                vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            }
        } else {
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
        };
        let mut next = Vec::new();
        for p in &pts {
            for c in &corners {
                next.push((p.0 + m[0] * c.0, p.1 + m[1] * c.1));
            }
        }
        pts = next;
    }
    let h = hull(pts);
    let f = |a: f64, b: f64| divergence(inst, a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
    let target = (inst.w[0][0], inst.w[1][0]);
    if h.len() >= 3 && (0..h.len()).all(|i| cross(h[i], h[(i + 1) % h.len()], target) >= -1e-15) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    if h.len() == 1 {
        return f(h[0].0, h[0].1);
    }
    for i in 0..h.len() {
        best = best.min(min_on_segment(&f, h[i], h[(i + 1) % h.len()]));
    }
    best
}

pub struct OracleResult {
    pub value: f64,
    pub argmin: [f64; 2],
    /// Largest change of the exponent between the minimizing grid point and
    /// its rate-feasible grid neighbours.
    pub resolution: f64,
}

pub fn grid_oracle(inst: &BinaryInstance, rate: f64, step: f64) -> OracleResult {
    let m = (1.0 / step).round() as i64;
    let at = |i: i64, j: i64| -> Option<f64> {
        if i < 0 || j < 0 || i > m || j > m {
            return None;
        }
        let v = [i as f64 / m as f64, j as f64 / m as f64];
        if information(inst.px, v) > rate {
            return None;
        }
        Some(exponent_at(inst, v))
    };
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..=m {
        for j in 0..=m {
            if let Some(e) = at(i, j) {
                if e < best.0 {
                    best = (e, i, j);
                }
            }
        }
    }
    let mut res: f64 = 0.0;
    for di in -1..=1 {
        for dj in -1..=1 {
            if let Some(e) = at(best.1 + di, best.2 + dj) {
                res = res.max((e - best.0).abs());
            }
        }
    }
    // Points between grid nodes can satisfy the rate constraint and do
    // better; a finer local grid around the minimizer measures how much.
    let fine = 10;
    let (ci, cj) = (best.1 * fine, best.2 * fine);
    let mf = m * fine;
    for i in (ci - fine).max(0)..=(ci + fine).min(mf) {
        for j in (cj - fine).max(0)..=(cj + fine).min(mf) {
            let v = [i as f64 / mf as f64, j as f64 / mf as f64];
            if information(inst.px, v) <= rate {
                res = res.max(best.0 - exponent_at(inst, v));
            }
        }
    }
    OracleResult { value: best.0, argmin: [best.1 as f64 / m as f64, best.2 as f64 / m as f64], resolution: res }
}
