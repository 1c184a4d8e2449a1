//! Coupling search: trust-region sequential linear programming with an exact
//! l1 penalty for the maximality and rate constraints, multistart, and exact
//! re-certification of every returned point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Cmp, LpBuilder, LpError, Sense};
use crate::maximality::{
    is_maximal, is_maximal_td, solve_adversary, td_slack_and_gradient, TdOptions,
    TypeDependentMetric, DEFAULT_TOL,
};
use crate::prob::{Channel, Coupling, Distribution, Metric};

const LN2: f64 = std::f64::consts::LN_2;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Number of starting couplings (the structured starts count toward it).
    pub starts: usize,
    /// Trust-region iterations per start.
    pub max_iter: usize,
    pub seed: u64,
    /// Maximality tolerance used for certification.
    pub tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            starts: 32,
            max_iter: 300,
            seed: 0,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Objective<'a> {
    /// `I(px, P_{Yhat|X})` in bits.
    YhatInformation,
    /// `D(P_{Y|X} || w | px)` in bits.
    DivergenceFrom(&'a Channel),
}

#[derive(Clone, Copy)]
pub(crate) enum Constraint<'a> {
    Additive(&'a Metric),
    TypeDependent(&'a dyn TypeDependentMetric),
}

/// A coupling optimization problem. Couplings are stored flat like
/// `Coupling::as_slice`; only inputs in the support of `px` carry variables.
pub(crate) struct CouplingProblem<'a> {
    pub px: &'a Distribution,
    pub j: usize,
    pub k: usize,
    /// Cells allowed to carry mass.
    pub allowed: Vec<bool>,
    pub y_marginal: Option<&'a Channel>,
    pub yhat_marginal: Option<&'a Channel>,
    pub objective: Objective<'a>,
    pub constraint: Constraint<'a>,
    pub rate: Option<f64>,
    /// Fixed tables for inputs outside the support.
    pub filler: Coupling,
}

#[derive(Debug, Clone)]
pub(crate) struct Found {
    pub value: f64,
    pub coupling: Coupling,
    pub start: usize,
}

/// Smooth constraint `value <= 0` with a sparse gradient over the state vector.
struct Row {
    value: f64,
    grad: Vec<(usize, f64)>,
}

struct Eval {
    f: f64,
    gf: Vec<f64>,
    rows: Vec<Row>,
}

pub(crate) fn yhat_information(
    px: &Distribution,
    c: &[f64],
    j: usize,
    k: usize,
) -> (f64, Vec<f64>) {
    let mut v = vec![0.0; j * k];
    for x in 0..j {
        for y in 0..k {
            for yh in 0..k {
                v[x * k + yh] += c[(x * k + y) * k + yh];
            }
        }
    }
    let mut pv = vec![0.0; k];
    for x in 0..j {
        for yh in 0..k {
            pv[yh] += px[x] * v[x * k + yh];
        }
    }
    let mut val = 0.0;
    let mut grad = vec![0.0; j * k * k];
    for x in 0..j {
        if px[x] <= 0.0 {
            continue;
        }
        for yh in 0..k {
            let a = v[x * k + yh];
            let l = (a.max(LOG_FLOOR) / pv[yh].max(LOG_FLOOR)).log2();
            if a > 0.0 {
                val += px[x] * a * (a / pv[yh]).log2();
            }
            for y in 0..k {
                grad[(x * k + y) * k + yh] = px[x] * l;
            }
        }
    }
    (val.max(0.0), grad)
}

pub(crate) fn divergence(
    px: &Distribution,
    w: &Channel,
    c: &[f64],
    j: usize,
    k: usize,
) -> (f64, Vec<f64>) {
    let mut val = 0.0;
    let mut grad = vec![0.0; j * k * k];
    for x in 0..j {
        if px[x] <= 0.0 {
            continue;
        }
        for y in 0..k {
            let yp: f64 = (0..k).map(|yh| c[(x * k + y) * k + yh]).sum();
            let wv = w.get(x, y);
            let g = if wv > 0.0 {
                if yp > 0.0 {
                    val += px[x] * yp * (yp / wv).log2();
                }
                px[x] * ((yp.max(LOG_FLOOR) / wv).log2() + 1.0 / LN2)
            } else {
                if yp > 0.0 {
                    val = f64::INFINITY;
                }
                0.0
            };
            for yh in 0..k {
                grad[(x * k + y) * k + yh] = g;
            }
        }
    }
    (val.max(0.0), grad)
}

fn metric_spread(q: &Metric) -> f64 {
    let s = q.max_value() - q.min_value();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

impl<'a> CouplingProblem<'a> {
    fn coupling(&self, c: &[f64]) -> Coupling {
        Coupling::from_raw_parts(self.j, self.k, c.to_vec())
    }

    pub(crate) fn objective_value(&self, c: &[f64]) -> f64 {
        match self.objective {
            Objective::YhatInformation => yhat_information(self.px, c, self.j, self.k).0,
            Objective::DivergenceFrom(w) => divergence(self.px, w, c, self.j, self.k).0,
        }
    }

    /// Length of the coupling part of the state vector.
    fn n_c(&self) -> usize {
        self.j * self.k * self.k
    }

    fn alpha_index(&self, yh: usize, x: usize) -> usize {
        self.n_c() + 2 * (yh * self.j + x)
    }

    /// State vector: coupling entries followed, for additive metrics, by the
    /// scaled transport duals `(alpha, beta)` per `(yhat, x)`. With the duals
    /// lifted into the state, "the adversary cannot beat the baseline" becomes
    /// the bilinear system
    /// `V_i (alpha_i + beta_j) <= sum_y c(x_i, y, yhat) q(x_j, y)` and
    /// `sum px_i V_i (alpha_i + beta_i) >= E[q(X, Y)]`.
    fn lift(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut z = c.to_vec();
        if let Constraint::Additive(q) = self.constraint {
            let sc = metric_spread(q);
            let sol = solve_adversary(&self.coupling(c), self.px, &|x, y| q.get(x, y))?;
            z.resize(self.n_c() + 2 * self.j * self.k, 0.0);
            for yh in 0..self.k {
                for (i, &x) in sol.support.iter().enumerate() {
                    let ai = self.alpha_index(yh, x);
                    z[ai] = sol.row_duals[yh][i] / sc;
                    z[ai + 1] = sol.col_duals[yh][i] / sc;
                }
            }
        }
        Ok(z)
    }

    fn eval(&self, z: &[f64]) -> Result<Eval> {
        let (j, k) = (self.j, self.k);
        let c = &z[..self.n_c()];
        let (f, mut gf) = match self.objective {
            Objective::YhatInformation => yhat_information(self.px, c, j, k),
            Objective::DivergenceFrom(w) => divergence(self.px, w, c, j, k),
        };
        gf.resize(z.len(), 0.0);
        let mut rows = Vec::new();
        match self.constraint {
            Constraint::Additive(q) => {
                let sc = metric_spread(q);
                let support = self.px.support();
                let mut base = Row {
                    value: 0.0,
                    grad: Vec::new(),
                };
                for yh in 0..k {
                    let vk: Vec<f64> = (0..j)
                        .map(|x| (0..k).map(|y| c[(x * k + y) * k + yh]).sum())
                        .collect();
                    for &x1 in &support {
                        let a1 = self.alpha_index(yh, x1);
                        let px1 = self.px[x1];
                        // baseline row pieces
                        base.value -= px1 * vk[x1] * (z[a1] + z[a1 + 1]);
                        base.grad.push((a1, -px1 * vk[x1]));
                        base.grad.push((a1 + 1, -px1 * vk[x1]));
                        for y in 0..k {
                            let idx = (x1 * k + y) * k + yh;
                            base.value += px1 * c[idx] * q.get(x1, y) / sc;
                            base.grad
                                .push((idx, px1 * (q.get(x1, y) / sc - z[a1] - z[a1 + 1])));
                        }
                        for &x2 in &support {
                            let b2 = self.alpha_index(yh, x2) + 1;
                            let mut r = Row {
                                value: vk[x1] * (z[a1] + z[b2]),
                                grad: Vec::with_capacity(k + 2),
                            };
                            for y in 0..k {
                                let idx = (x1 * k + y) * k + yh;
                                r.value -= c[idx] * q.get(x2, y) / sc;
                                r.grad.push((idx, z[a1] + z[b2] - q.get(x2, y) / sc));
                            }
                            r.grad.push((a1, vk[x1]));
                            r.grad.push((b2, vk[x1]));
                            rows.push(r);
                        }
                    }
                }
                rows.push(base);
            }
            Constraint::TypeDependent(t) => {
                let opts = TdOptions {
                    restarts: 0,
                    max_iter: 100,
                    ..TdOptions::default()
                };
                let (s, g) = td_slack_and_gradient(&self.coupling(c), self.px, t, &opts)?;
                rows.push(Row {
                    value: -s,
                    grad: g.into_iter().enumerate().map(|(i, v)| (i, -v)).collect(),
                });
            }
        }
        if let Some(r) = self.rate {
            let (info, gi) = yhat_information(self.px, c, j, k);
            rows.push(Row {
                value: info - r,
                grad: gi.into_iter().enumerate().collect(),
            });
        }
        Ok(Eval { f, gf, rows })
    }

    fn violation(&self, e: &Eval) -> f64 {
        e.rows.iter().map(|r| r.value.max(0.0)).sum()
    }

    fn cell_active(&self, idx: usize) -> bool {
        let x = idx / (self.k * self.k);
        self.px[x] > 0.0 && self.allowed[idx]
    }

    /// Restores the linear constraints exactly after an LP step.
    pub(crate) fn restore(&self, c: &mut [f64]) {
        let (j, k) = (self.j, self.k);
        for (i, v) in c.iter_mut().enumerate() {
            if self.px[i / (k * k)] <= 0.0 {
                *v = self.filler.as_slice()[i];
            } else if !self.allowed[i] || *v < 0.0 {
                *v = 0.0;
            }
        }
        let scale_y = |c: &mut [f64], w: &Channel| {
            for x in 0..j {
                if self.px[x] <= 0.0 {
                    continue;
                }
                for y in 0..k {
                    let s: f64 = (0..k).map(|yh| c[(x * k + y) * k + yh]).sum();
                    if s > 0.0 {
                        let f = w.get(x, y) / s;
                        (0..k).for_each(|yh| c[(x * k + y) * k + yh] *= f);
                    }
                }
            }
        };
        let scale_yh = |c: &mut [f64], v: &Channel| {
            for x in 0..j {
                if self.px[x] <= 0.0 {
                    continue;
                }
                for yh in 0..k {
                    let s: f64 = (0..k).map(|y| c[(x * k + y) * k + yh]).sum();
                    if s > 0.0 {
                        let f = v.get(x, yh) / s;
                        (0..k).for_each(|y| c[(x * k + y) * k + yh] *= f);
                    }
                }
            }
        };
        match (self.y_marginal, self.yhat_marginal) {
            (Some(w), Some(v)) => {
                for _ in 0..200 {
                    scale_yh(c, v);
                    scale_y(c, w);
                    let mut err: f64 = 0.0;
                    for x in (0..j).filter(|&x| self.px[x] > 0.0) {
                        for yh in 0..k {
                            let s: f64 = (0..k).map(|y| c[(x * k + y) * k + yh]).sum();
                            err = err.max((s - v.get(x, yh)).abs());
                        }
                    }
                    if err < 1e-14 {
                        break;
                    }
                }
            }
            (Some(w), None) => scale_y(c, w),
            (None, Some(v)) => scale_yh(c, v),
            (None, None) => {
                for x in 0..j {
                    if self.px[x] <= 0.0 {
                        continue;
                    }
                    let s: f64 = c[x * k * k..(x + 1) * k * k].iter().sum();
                    c[x * k * k..(x + 1) * k * k]
                        .iter_mut()
                        .for_each(|v| *v /= s);
                }
            }
        }
    }

    /// One trust-region LP step. Returns the trial point and the model value
    /// of the penalty merit at it.
    /// With `objective` false only the linearized violation is minimized.
    fn lp_step(
        &self,
        z0: &[f64],
        e: &Eval,
        delta: f64,
        rho: f64,
        objective: bool,
    ) -> Result<(Vec<f64>, f64, f64)> {
        let (j, k) = (self.j, self.k);
        let n_c = self.n_c();
        let active: Vec<usize> = (0..z0.len())
            .filter(|&i| i >= n_c || self.cell_active(i))
            .collect();
        let mut slot = vec![usize::MAX; z0.len()];
        let mut lp = LpBuilder::new(Sense::Minimize);
        let lo: Vec<f64> = active
            .iter()
            .map(|&i| {
                if i < n_c {
                    (z0[i] - delta).max(0.0)
                } else {
                    z0[i] - delta
                }
            })
            .collect();
        for (a, &i) in active.iter().enumerate() {
            slot[i] = lp.add_var(if objective { e.gf[i] } else { 0.0 });
            lp.add_row(vec![(slot[i], 1.0)], Cmp::Le, z0[i] + delta - lo[a]);
        }
        let lo_of = |i: usize| lo[active.binary_search(&i).unwrap()];
        let eq_row = |lp: &mut LpBuilder, cells: Vec<usize>, rhs: f64| {
            let mut coeffs = Vec::new();
            let mut r = rhs;
            for i in cells {
                if slot[i] != usize::MAX {
                    coeffs.push((slot[i], 1.0));
                    r -= lo_of(i);
                }
            }
            if !coeffs.is_empty() {
                lp.add_row(coeffs, Cmp::Eq, r);
            }
        };
        for x in (0..j).filter(|&x| self.px[x] > 0.0) {
            match self.y_marginal {
                Some(w) => {
                    for y in 0..k {
                        eq_row(
                            &mut lp,
                            (0..k).map(|yh| (x * k + y) * k + yh).collect(),
                            w.get(x, y),
                        );
                    }
                }
                None => eq_row(&mut lp, (0..k * k).map(|t| x * k * k + t).collect(), 1.0),
            }
            if let Some(v) = self.yhat_marginal {
                for yh in 0..k {
                    eq_row(
                        &mut lp,
                        (0..k).map(|y| (x * k + y) * k + yh).collect(),
                        v.get(x, yh),
                    );
                }
            }
        }
        // value + grad.(z - z0) <= t
        let mut ts = Vec::with_capacity(e.rows.len());
        for r in &e.rows {
            let t = lp.add_var(rho);
            let mut rhs = -r.value;
            let mut coeffs = vec![(t, -1.0)];
            for &(i, g) in &r.grad {
                if slot[i] == usize::MAX || g == 0.0 {
                    continue;
                }
                rhs += g * (z0[i] - lo_of(i));
                coeffs.push((slot[i], g));
            }
            lp.add_row(coeffs, Cmp::Le, rhs);
            ts.push(t);
        }
        let sol = lp.solve()?;
        let mut z = z0.to_vec();
        let mut model = e.f;
        for (a, &i) in active.iter().enumerate() {
            z[i] = lo[a] + sol.x[slot[i]];
            model += e.gf[i] * (z[i] - z0[i]);
        }
        let lin_viol = ts.iter().map(|&t| sol.x[t]).sum::<f64>();
        model += rho * lin_viol;
        Ok((z, model, lin_viol))
    }

    /// Trust-region SLP from `c0`. Returns the final coupling and the best
    /// iterate whose constraints held (if any).
    pub(crate) fn descend(
        &self,
        c0: &[f64],
        max_iter: usize,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let n_c = self.n_c();
        let mut c = c0.to_vec();
        self.restore(&mut c);
        let mut z = self.lift(&c)?;
        let mut e = self.eval(&z)?;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let note = |z: &[f64], e: &Eval, best: &mut Option<(f64, Vec<f64>)>| {
            if self.violation(e) <= 1e-9 && best.as_ref().map_or(true, |b| e.f < b.0) {
                *best = Some((e.f, z[..n_c].to_vec()));
            }
        };
        note(&z, &e, &mut best);
        let mut rho = 1.0;
        let mut delta = 0.2;
        let mut iter = 0;
        while iter < max_iter {
            iter += 1;
            let step = (|| -> Result<(Vec<f64>, f64, f64)> {
                let mut step = self.lp_step(&z, &e, delta, rho, true)?;
                let viol = self.violation(&e);
                if step.2 > 1e-12 && viol > 1e-12 {
                    // steering: demand a fair share of the achievable linearized feasibility gain
                    let best = self.lp_step(&z, &e, delta, rho, false)?.2;
                    let mut tries = 0;
                    while step.2 > best + 0.1 * (viol - best).max(0.0) + 1e-12
                        && rho < 1e8
                        && tries < 8
                    {
                        rho *= 10.0;
                        step = self.lp_step(&z, &e, delta, rho, true)?;
                        tries += 1;
                    }
                }
                Ok(step)
            })();
            let merit = e.f + rho * self.violation(&e);
            let (mut zt, model) = match step {
                Ok((zt, model, _)) => (zt, model),
                Err(Error::Lp(LpError::Numerical(_))) => {
                    delta *= 0.25;
                    if delta < 1e-10 {
                        break;
                    }
                    continue;
                }
                Err(other) => return Err(other),
            };
            let pred = merit - model;
            if pred <= 1e-13 * (1.0 + merit.abs()) {
                if self.violation(&e) > 1e-11 && rho < 1e8 {
                    rho *= 10.0;
                    continue;
                }
                break;
            }
            self.restore(&mut zt[..n_c]);
            let et = self.eval(&zt)?;
            let actual = merit - (et.f + rho * self.violation(&et));
            let ratio = actual / pred;
            if ratio >= 0.1 {
                z = zt;
                e = et;
                note(&z, &e, &mut best);
                if ratio > 0.75 {
                    delta = (2.0 * delta).min(1.0);
                }
            }
            if ratio < 0.25 {
                delta *= 0.25;
            }
            if delta < 1e-10 {
                if self.violation(&e) > 1e-11 && rho < 1e8 {
                    rho *= 10.0;
                    delta = 0.05;
                    continue;
                }
                break;
            }
        }
        Ok((z[..n_c].to_vec(), best.map(|b| b.1)))
    }

    /// Exact feasibility check; returns the slack when `c` is certified.
    pub(crate) fn certify(&self, c: &[f64], tol: f64) -> Result<Option<f64>> {
        if let Some(r) = self.rate {
            if yhat_information(self.px, c, self.j, self.k).0 > r + 1e-12 {
                return Ok(None);
            }
        }
        let cp = self.coupling(c);
        match self.constraint {
            Constraint::Additive(q) => {
                let (m, cert) = is_maximal(&cp, self.px, q, tol)?;
                Ok(if m { Some(cert.slack) } else { None })
            }
            Constraint::TypeDependent(t) => {
                let cert = is_maximal_td(&cp, self.px, t, tol, &TdOptions::default())?;
                Ok(if cert.verdict.is_member() {
                    Some(cert.slack)
                } else {
                    None
                })
            }
        }
    }

    /// Moves `c` toward the feasible `anchor` until it certifies.
    pub(crate) fn repair(
        &self,
        c: &[f64],
        anchor: &[f64],
        tol: f64,
    ) -> Result<Option<(Vec<f64>, f64)>> {
        let mix = |t: f64| -> Vec<f64> {
            c.iter()
                .zip(anchor)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect()
        };
        if let Some(s) = self.certify(c, tol)? {
            return Ok(Some((c.to_vec(), s)));
        }
        let mut hi = None;
        let mut t = 1e-6;
        while t < 1.0 {
            if let Some(s) = self.certify(&mix(t), tol)? {
                hi = Some((t, s));
                break;
            }
            t *= 4.0;
        }
        let (mut t_hi, mut s_hi) = match hi {
            Some(h) => h,
            None => match self.certify(anchor, tol)? {
                Some(s) => (1.0, s),
                None => return Ok(None),
            },
        };
        let mut t_lo = if t_hi >= 1.0 { 0.25 } else { t_hi / 4.0 };
        for _ in 0..30 {
            let mid = 0.5 * (t_lo + t_hi);
            match self.certify(&mix(mid), tol)? {
                Some(s) => {
                    t_hi = mid;
                    s_hi = s;
                }
                None => t_lo = mid,
            }
            if t_hi - t_lo < 1e-9 {
                break;
            }
        }
        Ok(Some((mix(t_hi), s_hi)))
    }

    /// Random feasible-shaped coupling sharing the Y-marginal of `base`.
    pub(crate) fn random_start(&self, base: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (j, k) = (self.j, self.k);
        let mut c = base.to_vec();
        for x in (0..j).filter(|&x| self.px[x] > 0.0) {
            for y in 0..k {
                let mass: f64 = (0..k).map(|yh| base[(x * k + y) * k + yh]).sum();
                let w: Vec<f64> = (0..k)
                    .map(|yh| {
                        if self.allowed[(x * k + y) * k + yh] {
                            rng.sample::<f64, _>(Exp1)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let tot: f64 = w.iter().sum();
                for yh in 0..k {
                    c[(x * k + y) * k + yh] = if tot > 0.0 {
                        mass * w[yh] / tot
                    } else {
                        base[(x * k + y) * k + yh]
                    };
                }
            }
        }
        c
    }

    /// Multistart search. `starts` are used first; random starts derived from
    /// `random_base` fill up to `opts.starts`. Every result is certified
    /// exactly; uncertifiable points are repaired toward `anchor`.
    pub(crate) fn search(
        &self,
        mut starts: Vec<Vec<f64>>,
        random_base: &[f64],
        anchor: &[f64],
        opts: &SearchOptions,
    ) -> Result<Option<Found>> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        while starts.len() < opts.starts.max(1) {
            let mut s = self.random_start(random_base, &mut rng);
            // shrink part of the way toward the anchor so not every start is deep infeasible
            let t: f64 = rng.gen_range(0.0..0.7);
            s.iter_mut()
                .zip(anchor)
                .for_each(|(a, b)| *a = (1.0 - t) * *a + t * b);
            starts.push(s);
        }
        let results: Vec<Option<Found>> = starts
            .par_iter()
            .enumerate()
            .map(|(idx, s)| -> Result<Option<Found>> {
                let (c, best) = self.descend(s, opts.max_iter)?;
                let mut repaired = None;
                if let Some(b) = &best {
                    repaired = self.repair(&c, b, opts.tol)?;
                }
                if repaired.is_none() {
                    repaired = self.repair(&c, anchor, opts.tol)?;
                }
                Ok(repaired.map(|(c, _)| Found {
                    value: self.objective_value(&c),
                    coupling: self.coupling(&c),
                    start: idx,
                }))
            })
            .collect::<Result<_>>()?;
        Ok(results.into_iter().flatten().min_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .unwrap()
                .then(a.start.cmp(&b.start))
        }))
    }
}

/// Diagonal-fill tables for every input (used outside the support of `px`).
pub(crate) fn diagonal_data(w: &Channel) -> Vec<f64> {
    Coupling::diagonal(w).as_slice().to_vec()
}
