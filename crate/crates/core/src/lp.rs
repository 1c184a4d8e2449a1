//! Dense revised simplex (Bland's rule) and a bilinear zero-sum game solver.
//!
//! Problems are in standard form: minimize `c.x` subject to `A x = b`, `x >= 0`.
//! `LpBuilder` adds free variables, inequality rows and maximization on top.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("LP numerical failure: {0}")]
    Numerical(String),
    #[error("LP infeasible: {0}")]
    Infeasible(String),
    #[error("LP unbounded: {0}")]
    Unbounded(String),
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    /// Scaled primal residual and duality-gap tolerance of the final certificate.
    pub feas_tol: f64,
    /// Reduced-cost threshold for entering columns.
    pub opt_tol: f64,
    /// Smallest pivot element accepted in the ratio test.
    pub pivot_tol: f64,
    pub max_iter: usize,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-11,
            pivot_tol: 1e-11,
            max_iter: 200_000,
            refactor_every: 50,
        }
    }
}

/// `min c.x  s.t.  A x = b,  x >= 0`, with `A` stored column-major.
#[derive(Debug, Clone)]
pub struct LpProblem {
    rows: usize,
    cols: usize,
    c: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LpProblem {
    /// `rows[i]` holds the coefficients of constraint `i` over all variables.
    pub fn new(c: Vec<f64>, rows: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self, LpError> {
        let n = c.len();
        let m = rows.len();
        if b.len() != m {
            return Err(LpError::Malformed(format!(
                "{} rows but {} right-hand sides",
                m,
                b.len()
            )));
        }
        let mut a = vec![0.0; m * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LpError::Malformed(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    n
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                a[j * m + i] = v;
            }
        }
        let p = LpProblem {
            rows: m,
            cols: n,
            c,
            a,
            b,
        };
        p.check_finite()?;
        Ok(p)
    }

    fn from_columns(c: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, LpError> {
        let p = LpProblem {
            rows: b.len(),
            cols: c.len(),
            c,
            a,
            b,
        };
        p.check_finite()?;
        Ok(p)
    }

    fn check_finite(&self) -> Result<(), LpError> {
        if self
            .c
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .any(|v| !v.is_finite())
        {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.rows..(j + 1) * self.rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Equality-row duals `y` with `c.x = b.y` at optimality.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn into_optimal(self) -> Result<LpSolution, LpError> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(LpError::Infeasible("no feasible point".into())),
            LpStatus::Unbounded => Err(LpError::Unbounded("objective unbounded below".into())),
        }
    }
}

pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(p, &LpOptions::default())
}

struct Tableau<'a> {
    p: &'a LpProblem,
    opts: &'a LpOptions,
    b: Vec<f64>,
    sign: Vec<f64>,
    /// Basis indices; `>= cols` denotes the artificial of row `idx - cols`.
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn column(&self, j: usize, out: &mut [f64]) {
        let m = self.p.rows;
        if j >= self.p.cols {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j - self.p.cols] = 1.0;
        } else {
            for (i, (o, &a)) in out.iter_mut().zip(self.p.col(j)).enumerate() {
                *o = a * self.sign[i];
            }
        }
        debug_assert_eq!(out.len(), m);
    }

    /// `B^{-1} a_j`.
    fn ftran(&self, j: usize, col: &mut [f64], out: &mut [f64]) {
        let m = self.p.rows;
        self.column(j, col);
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            out[i] = row.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
        }
    }

    fn duals(&self, cost: &dyn Fn(usize) -> f64, y: &mut [f64]) {
        let m = self.p.rows;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let cb = cost(self.basis[i]);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &r) in y.iter_mut().zip(row) {
                    *yk += cb * r;
                }
            }
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.p.rows;
        let mut bm = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..m {
                bm[i * m + k] = col[i];
            }
        }
        self.binv = invert(bm, m).ok_or_else(|| LpError::Numerical("singular basis".into()))?;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, entering: usize, u: &[f64]) -> Result<(), LpError> {
        let m = self.p.rows;
        let piv = u[r];
        {
            let row = &mut self.binv[r * m..(r + 1) * m];
            row.iter_mut().for_each(|v| *v /= piv);
        }
        self.xb[r] /= piv;
        let (pivot_row, xr) = (self.binv[r * m..(r + 1) * m].to_vec(), self.xb[r]);
        for i in 0..m {
            if i != r && u[i] != 0.0 {
                let f = u[i];
                let row = &mut self.binv[i * m..(i + 1) * m];
                for (v, &pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                self.xb[i] -= f * xr;
            }
        }
        let leaving = self.basis[r];
        if leaving < self.p.cols {
            self.is_basic[leaving] = false;
        }
        self.basis[r] = entering;
        self.is_basic[entering] = true;
        self.since_refactor += 1;
        self.iterations += 1;
        if self.since_refactor >= self.opts.refactor_every {
            self.refactor()?;
        }
        Ok(())
    }

    /// Runs simplex iterations with Bland's rule. Artificial columns never enter.
    fn run(&mut self, cost: &dyn Fn(usize) -> f64) -> Result<LpStatus, LpError> {
        let m = self.p.rows;
        let n = self.p.cols;
        let mut y = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut u = vec![0.0; m];
        let cscale = 1.0 + (0..n).map(|j| cost(j).abs()).fold(0.0, f64::max);
        loop {
            if self.iterations >= self.opts.max_iter {
                return Err(LpError::Numerical(format!(
                    "iteration limit {} reached",
                    self.opts.max_iter
                )));
            }
            self.duals(cost, &mut y);
            let mut entering = None;
            for j in 0..n {
                if self.is_basic[j] {
                    continue;
                }
                let colj = self.p.col(j);
                let mut d = cost(j);
                for i in 0..m {
                    d -= y[i] * colj[i] * self.sign[i];
                }
                if d < -self.opts.opt_tol * cscale {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(LpStatus::Optimal);
            };
            self.ftran(j, &mut col, &mut u);
            // Ratio test: among rows within a small tolerance of the minimum
            // ratio, take the largest pivot (smallest basis index on exact ties).
            let umax = u.iter().copied().fold(0.0, f64::max);
            let ptol = self.opts.pivot_tol.max(1e-9 * umax);
            let mut min_ratio = f64::INFINITY;
            for i in 0..m {
                if u[i] > ptol {
                    min_ratio = min_ratio.min(self.xb[i].max(0.0) / u[i]);
                }
            }
            let slack = 1e-12 * (1.0 + min_ratio);
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if u[i] > ptol && self.xb[i].max(0.0) / u[i] <= min_ratio + slack {
                    best = match best {
                        Some((bi, bu))
                            if bu > u[i] || (bu == u[i] && self.basis[bi] < self.basis[i]) =>
                        {
                            Some((bi, bu))
                        }
                        _ => Some((i, u[i])),
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(LpStatus::Unbounded);
            };
            self.pivot(r, j, &u)?;
        }
    }
}

fn invert(mut a: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for k in 0..m {
        let (mut piv, mut best) = (k, a[k * m + k].abs());
        for i in k + 1..m {
            if a[i * m + k].abs() > best {
                piv = i;
                best = a[i * m + k].abs();
            }
        }
        if best < 1e-13 {
            return None;
        }
        if piv != k {
            for c in 0..m {
                a.swap(k * m + c, piv * m + c);
                inv.swap(k * m + c, piv * m + c);
            }
        }
        let d = a[k * m + k];
        for c in 0..m {
            a[k * m + c] /= d;
            inv[k * m + c] /= d;
        }
        for i in 0..m {
            if i != k {
                let f = a[i * m + k];
                if f != 0.0 {
                    for c in 0..m {
                        a[i * m + c] -= f * a[k * m + c];
                        inv[i * m + c] -= f * inv[k * m + c];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn solve_lp_with(p: &LpProblem, opts: &LpOptions) -> Result<LpSolution, LpError> {
    let (m, n) = (p.rows, p.cols);
    let sign: Vec<f64> =
        p.b.iter()
            .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
            .collect();
    let b: Vec<f64> = p.b.iter().zip(&sign).map(|(v, s)| v * s).collect();
    let mut binv = vec![0.0; m * m];
    for i in 0..m {
        binv[i * m + i] = 1.0;
    }
    let mut t = Tableau {
        p,
        opts,
        xb: b.clone(),
        b,
        sign,
        basis: (n..n + m).collect(),
        is_basic: vec![false; n + m],
        binv,
        since_refactor: 0,
        iterations: 0,
    };
    for i in 0..m {
        t.is_basic[n + i] = true;
    }
    let bscale = 1.0 + t.b.iter().copied().fold(0.0, f64::max);

    // Phase 1: minimize the sum of artificials.
    let phase1 = |j: usize| if j >= n { 1.0 } else { 0.0 };
    if m > 0 {
        t.run(&phase1)?;
        t.refactor()?;
        let infeas: f64 = (0..m)
            .filter(|&i| t.basis[i] >= n)
            .map(|i| t.xb[i].max(0.0))
            .sum();
        if infeas > opts.feas_tol * bscale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                y: Vec::new(),
                objective: f64::NAN,
                iterations: t.iterations,
            });
        }
        // Drive zero-level artificials out where a structural column can replace them.
        let mut col = vec![0.0; m];
        let mut u = vec![0.0; m];
        for r in 0..m {
            if t.basis[r] < n {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if t.is_basic[j] {
                    continue;
                }
                t.ftran(j, &mut col, &mut u);
                let mag = u[r].abs();
                if mag > 1e-9 && best.map_or(true, |(_, bm)| mag > bm) {
                    best = Some((j, mag));
                }
            }
            if let Some((j, _)) = best {
                t.ftran(j, &mut col, &mut u);
                t.pivot(r, j, &u)?;
            }
        }
        t.refactor()?;
    }

    let phase2 = |j: usize| if j >= n { 0.0 } else { p.c[j] };
    if t.run(&phase2)? == LpStatus::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            y: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
        });
    }
    t.refactor()?;
    certify(&t, &phase2)
}

fn certify(t: &Tableau, cost: &dyn Fn(usize) -> f64) -> Result<LpSolution, LpError> {
    let p = t.p;
    let (m, n) = (p.rows, p.cols);
    let mut x = vec![0.0; n];
    for (i, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = t.xb[i].max(0.0);
        } else if t.xb[i].abs() > t.opts.feas_tol * 10.0 {
            return Err(LpError::Numerical(format!(
                "artificial left at level {:e}",
                t.xb[i]
            )));
        }
    }
    let mut yf = vec![0.0; m];
    t.duals(cost, &mut yf);
    let y: Vec<f64> = yf.iter().zip(&t.sign).map(|(a, s)| a * s).collect();

    let bscale = 1.0 + p.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut resid = 0.0f64;
    for i in 0..m {
        let mut s = -p.b[i];
        for j in 0..n {
            if x[j] != 0.0 {
                s += p.a[j * m + i] * x[j];
            }
        }
        resid = resid.max(s.abs());
    }
    if resid > t.opts.feas_tol * bscale {
        return Err(LpError::Numerical(format!("primal residual {:e}", resid)));
    }
    let primal: f64 = p.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    let dual: f64 = p.b.iter().zip(&y).map(|(b, y)| b * y).sum();
    let oscale = 1.0 + primal.abs().max(dual.abs());
    if (primal - dual).abs() > t.opts.feas_tol * oscale {
        return Err(LpError::Numerical(format!(
            "duality gap {:e}",
            (primal - dual).abs()
        )));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        y,
        objective: primal,
        iterations: t.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Convenience layer over `LpProblem`: free variables, inequality rows, either sense.
#[derive(Debug, Clone)]
pub struct LpBuilder {
    sense: Sense,
    cost: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

#[derive(Debug, Clone)]
pub struct BuiltSolution {
    pub x: Vec<f64>,
    /// Sensitivity of the optimal objective to each row's right-hand side.
    pub duals: Vec<f64>,
    pub objective: f64,
}

impl LpBuilder {
    pub fn new(sense: Sense) -> Self {
        LpBuilder {
            sense,
            cost: Vec::new(),
            free: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(&mut self, cost: f64) -> usize {
        self.cost.push(cost);
        self.free.push(false);
        self.cost.len() - 1
    }

    pub fn add_free_var(&mut self, cost: f64) -> usize {
        self.cost.push(cost);
        self.free.push(true);
        self.cost.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, cost: f64) -> std::ops::Range<usize> {
        let start = self.cost.len();
        for _ in 0..count {
            self.add_var(cost);
        }
        start..self.cost.len()
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.cost[var] = cost;
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> usize {
        self.rows.push((coeffs, cmp, rhs));
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self) -> Result<BuiltSolution, LpError> {
        self.solve_with(&LpOptions::default())
    }

    pub fn solve_with(&self, opts: &LpOptions) -> Result<BuiltSolution, LpError> {
        let nv = self.cost.len();
        let mut colmap = Vec::with_capacity(nv);
        let mut ncols = 0;
        for &f in &self.free {
            colmap.push(ncols);
            ncols += if f { 2 } else { 1 };
        }
        let slack_start = ncols;
        ncols += self.rows.iter().filter(|r| r.1 != Cmp::Eq).count();
        let m = self.rows.len();
        let flip = if self.sense == Sense::Maximize {
            -1.0
        } else {
            1.0
        };
        let mut c = vec![0.0; ncols];
        for v in 0..nv {
            c[colmap[v]] = flip * self.cost[v];
            if self.free[v] {
                c[colmap[v] + 1] = -flip * self.cost[v];
            }
        }
        let mut a = vec![0.0; m * ncols];
        let mut b = vec![0.0; m];
        let mut slack = slack_start;
        for (i, (coeffs, cmp, rhs)) in self.rows.iter().enumerate() {
            for &(v, coef) in coeffs {
                if v >= nv {
                    return Err(LpError::Malformed(format!(
                        "row {} references variable {}",
                        i, v
                    )));
                }
                a[colmap[v] * m + i] += coef;
                if self.free[v] {
                    a[(colmap[v] + 1) * m + i] -= coef;
                }
            }
            match cmp {
                Cmp::Eq => {}
                Cmp::Le => {
                    a[slack * m + i] = 1.0;
                    slack += 1;
                }
                Cmp::Ge => {
                    a[slack * m + i] = -1.0;
                    slack += 1;
                }
            }
            b[i] = *rhs;
        }
        let p = LpProblem::from_columns(c, a, b)?;
        let sol = solve_lp_with(&p, opts)?.into_optimal()?;
        let x = (0..nv)
            .map(|v| {
                if self.free[v] {
                    sol.x[colmap[v]] - sol.x[colmap[v] + 1]
                } else {
                    sol.x[colmap[v]]
                }
            })
            .collect();
        Ok(BuiltSolution {
            x,
            duals: sol.y.iter().map(|y| flip * y).collect(),
            objective: flip * sol.objective,
        })
    }
}

/// `{ x : A x = b, x >= 0 }` with `A` row-major.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub dim: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Polytope {
    pub fn new(dim: usize, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self, LpError> {
        if a.len() != b.len() || a.iter().any(|r| r.len() != dim) {
            return Err(LpError::Malformed(
                "polytope rows do not match its dimension".into(),
            ));
        }
        Ok(Polytope { dim, a, b })
    }

    /// Probability simplex of the given dimension.
    pub fn simplex(dim: usize) -> Self {
        Polytope {
            dim,
            a: vec![vec![1.0; dim]],
            b: vec![1.0],
        }
    }

    /// Optimizes a linear objective over the polytope.
    pub fn optimize(&self, cost: &[f64], sense: Sense) -> Result<BuiltSolution, LpError> {
        let mut lp = LpBuilder::new(sense);
        for &c in cost {
            lp.add_var(c);
        }
        for (row, &rhs) in self.a.iter().zip(&self.b) {
            lp.add_row(sparse(row), Cmp::Eq, rhs);
        }
        lp.solve()
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect()
}

/// Payoff `x' G z + g.x + h.z`: `x` maximizes over `maximizer`, `z` minimizes over `minimizer`.
#[derive(Debug, Clone)]
pub struct BilinearGame {
    pub payoff: Vec<Vec<f64>>,
    pub linear_max: Vec<f64>,
    pub linear_min: Vec<f64>,
    pub maximizer: Polytope,
    pub minimizer: Polytope,
}

impl BilinearGame {
    pub fn new(
        payoff: Vec<Vec<f64>>,
        maximizer: Polytope,
        minimizer: Polytope,
    ) -> Result<Self, LpError> {
        if payoff.len() != maximizer.dim || payoff.iter().any(|r| r.len() != minimizer.dim) {
            return Err(LpError::Malformed(
                "payoff shape does not match the strategy polytopes".into(),
            ));
        }
        Ok(BilinearGame {
            linear_max: vec![0.0; maximizer.dim],
            linear_min: vec![0.0; minimizer.dim],
            payoff,
            maximizer,
            minimizer,
        })
    }

    pub fn value_at(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut v: f64 = self
            .linear_max
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self
                .linear_min
                .iter()
                .zip(z)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        for (i, row) in self.payoff.iter().enumerate() {
            if x[i] != 0.0 {
                v += x[i] * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        v
    }

    /// `max_x' [x' G z + g.x]` for a fixed `z`.
    pub fn best_response_max(&self, z: &[f64]) -> Result<BuiltSolution, LpError> {
        let cost: Vec<f64> = self
            .payoff
            .iter()
            .zip(&self.linear_max)
            .map(|(row, g)| g + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut s = self.maximizer.optimize(&cost, Sense::Maximize)?;
        s.objective += self
            .linear_min
            .iter()
            .zip(z)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        Ok(s)
    }

    /// `min_z' [x' G z' + h.z']` for a fixed `x`.
    pub fn best_response_min(&self, x: &[f64]) -> Result<BuiltSolution, LpError> {
        let mut cost = self.linear_min.clone();
        for (i, row) in self.payoff.iter().enumerate() {
            if x[i] != 0.0 {
                for (c, &g) in cost.iter_mut().zip(row) {
                    *c += x[i] * g;
                }
            }
        }
        let mut s = self.minimizer.optimize(&cost, Sense::Minimize)?;
        s.objective += self
            .linear_max
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        Ok(s)
    }

    /// `max_x min_z`: the inner minimum is replaced by its LP dual.
    pub fn max_min(&self) -> Result<(f64, Vec<f64>), LpError> {
        let (nx, nz) = (self.maximizer.dim, self.minimizer.dim);
        let mut lp = LpBuilder::new(Sense::Maximize);
        for &g in &self.linear_max {
            lp.add_var(g);
        }
        let lam: Vec<usize> = self
            .minimizer
            .b
            .iter()
            .map(|&d| lp.add_free_var(d))
            .collect();
        for (row, &rhs) in self.maximizer.a.iter().zip(&self.maximizer.b) {
            lp.add_row(sparse(row), Cmp::Eq, rhs);
        }
        // B' lambda - G' x <= h
        for k in 0..nz {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for (r, row) in self.minimizer.a.iter().enumerate() {
                if row[k] != 0.0 {
                    coeffs.push((lam[r], row[k]));
                }
            }
            for i in 0..nx {
                if self.payoff[i][k] != 0.0 {
                    coeffs.push((i, -self.payoff[i][k]));
                }
            }
            lp.add_row(coeffs, Cmp::Le, self.linear_min[k]);
        }
        let s = lp.solve()?;
        Ok((s.objective, s.x[..nx].to_vec()))
    }

    /// `min_z max_x`, dualizing the inner maximum.
    pub fn min_max(&self) -> Result<(f64, Vec<f64>), LpError> {
        let (nx, nz) = (self.maximizer.dim, self.minimizer.dim);
        let mut lp = LpBuilder::new(Sense::Minimize);
        for &h in &self.linear_min {
            lp.add_var(h);
        }
        let mu: Vec<usize> = self
            .maximizer
            .b
            .iter()
            .map(|&d| lp.add_free_var(d))
            .collect();
        for (row, &rhs) in self.minimizer.a.iter().zip(&self.minimizer.b) {
            lp.add_row(sparse(row), Cmp::Eq, rhs);
        }
        // A' mu - G z >= g
        for i in 0..nx {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for (r, row) in self.maximizer.a.iter().enumerate() {
                if row[i] != 0.0 {
                    coeffs.push((mu[r], row[i]));
                }
            }
            for k in 0..nz {
                if self.payoff[i][k] != 0.0 {
                    coeffs.push((k, -self.payoff[i][k]));
                }
            }
            lp.add_row(coeffs, Cmp::Ge, self.linear_max[i]);
        }
        let s = lp.solve()?;
        Ok((s.objective, s.x[..nz].to_vec()))
    }
}

#[derive(Debug, Clone)]
pub struct GameSolution {
    /// Max-min value (what the maximizer can guarantee).
    pub value: f64,
    pub min_max_value: f64,
    pub max_strategy: Vec<f64>,
    pub min_strategy: Vec<f64>,
    /// Largest gain either side obtains by deviating from the returned pair.
    pub saddle_gap: f64,
}

/// Solves both orders of the game and certifies the pair by best responses.
pub fn solve_bilinear_game(game: &BilinearGame) -> Result<GameSolution, LpError> {
    let (v1, x) = game.max_min()?;
    let (v2, z) = game.min_max()?;
    let at = game.value_at(&x, &z);
    let br_min = game.best_response_min(&x)?.objective;
    let br_max = game.best_response_max(&z)?.objective;
    let saddle_gap = (at - br_min).max(br_max - at).max(0.0);
    Ok(GameSolution {
        value: v1,
        min_max_value: v2,
        max_strategy: x,
        min_strategy: z,
        saddle_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_equality() {
        let p = LpProblem::new(vec![1.0], vec![vec![1.0]], vec![1.0]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_equalities() {
        let p = LpProblem::new(vec![1.0], vec![vec![1.0], vec![1.0]], vec![1.0, 2.0]).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn simplex_vertex() {
        let c = vec![0.7, -0.2, 0.4, 0.1];
        let p = LpProblem::new(c, vec![vec![1.0; 4]], vec![1.0]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert!((s.objective + 0.2).abs() < 1e-12);
        assert!((s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ray() {
        let p = LpProblem::new(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![0.0]).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        // x + y = -(-2), duplicated with a sign flip
        let p = LpProblem::new(
            vec![1.0, 2.0],
            vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![2.0, 2.0]],
            vec![2.0, -2.0, 4.0],
        )
        .unwrap();
        let s = solve_lp(&p).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn builder_inequalities_and_free() {
        // max x + y, x + 2y <= 4, 3x + y <= 6, y free but >= -1 via a row
        let mut lp = LpBuilder::new(Sense::Maximize);
        let x = lp.add_var(1.0);
        let y = lp.add_free_var(1.0);
        lp.add_row(vec![(x, 1.0), (y, 2.0)], Cmp::Le, 4.0);
        lp.add_row(vec![(x, 3.0), (y, 1.0)], Cmp::Le, 6.0);
        lp.add_row(vec![(y, 1.0)], Cmp::Ge, -1.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 2.8).abs() < 1e-10);
        // dual = sensitivity: relaxing row 0 by 1 raises the optimum by 0.4
        assert!((s.duals[0] - 0.4).abs() < 1e-10);
    }

    fn two_simplex_game(payoff: Vec<Vec<f64>>) -> BilinearGame {
        let (nx, nz) = (payoff.len(), payoff[0].len());
        BilinearGame::new(payoff, Polytope::simplex(nx), Polytope::simplex(nz)).unwrap()
    }

    #[test]
    fn matching_pennies() {
        let g = two_simplex_game(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let s = solve_bilinear_game(&g).unwrap();
        assert!(s.value.abs() < 1e-12);
        assert!((s.max_strategy[0] - 0.5).abs() < 1e-12);
        assert!((s.min_strategy[0] - 0.5).abs() < 1e-12);
        assert!(s.saddle_gap < 1e-8);
    }

    #[test]
    fn constant_payoff() {
        let g = two_simplex_game(vec![vec![3.0; 3]; 2]);
        let s = solve_bilinear_game(&g).unwrap();
        assert!((s.value - 3.0).abs() < 1e-12);
    }

    /// Independent oracle: brute-force the value of a 2x2 matrix game by
    /// scanning the maximizer's mixed strategy.
    #[test]
    fn two_by_two_value_matches_scan() {
        let g = vec![vec![2.0, -1.0], vec![-0.5, 1.5]];
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100_000 {
            let p = i as f64 / 100_000.0;
            let c0 = p * g[0][0] + (1.0 - p) * g[1][0];
            let c1 = p * g[0][1] + (1.0 - p) * g[1][1];
            best = best.max(c0.min(c1));
        }
        let s = solve_bilinear_game(&two_simplex_game(g)).unwrap();
        assert!((s.value - best).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn strong_duality(c in prop::collection::vec(-1.0f64..1.0, 6),
                          a in prop::collection::vec(0.0f64..1.0, 12)) {
            // two rows over a bounded feasible region (x summing to 1 plus a mixing row)
            let row0 = vec![1.0; 6];
            let row1: Vec<f64> = a[..6].to_vec();
            let target: f64 = row1.iter().sum::<f64>() / 6.0;
            let p = LpProblem::new(c.clone(), vec![row0, row1], vec![1.0, target]).unwrap();
            let s = solve_lp(&p).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            let dual = s.y[0] + s.y[1] * target;
            prop_assert!((s.objective - dual).abs() <= 1e-9 * (1.0 + s.objective.abs()));
        }

        #[test]
        fn game_role_swap(g in prop::collection::vec(-1.0f64..1.0, 9)) {
            let m: Vec<Vec<f64>> = g.chunks(3).map(|r| r.to_vec()).collect();
            let s = solve_bilinear_game(&two_simplex_game(m.clone())).unwrap();
            prop_assert!((s.value - s.min_max_value).abs() < 1e-8);
            prop_assert!(s.saddle_gap < 1e-8);
            // swap roles with negated transposed payoff
            let neg: Vec<Vec<f64>> = (0..3).map(|k| (0..3).map(|i| -m[i][k]).collect()).collect();
            let t = solve_bilinear_game(&two_simplex_game(neg)).unwrap();
            prop_assert!((s.value + t.value).abs() < 1e-8);
        }
    }
}
