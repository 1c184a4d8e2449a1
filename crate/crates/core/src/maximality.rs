//! Membership checkers for the maximal-set family.
//!
//! The adversary problem `min E[q(X2,Y)]` over `P_{X2|X1 Yhat}` with
//! `P_{Yhat X2} = P_{Yhat X1}` splits into one transportation problem per
//! output letter `yhat`: the plan `mu(x1, x2) = px(x1) V(yhat|x1) P(x2|x1,yhat)`
//! has both margins equal to `px(.) V(yhat|.)` and costs
//! `E[q(x2, Y) | X1 = x1, Yhat = yhat]`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::lp::{
    solve_bilinear_game, solve_lp, BilinearGame, Cmp, LpBuilder, LpError, LpProblem, LpStatus,
    Polytope, Sense,
};
use crate::prob::{marginal_y, marginal_yhat, Channel, Coupling, Distribution, Metric};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Member,
    /// `|slack| <= tol`. The identity adversary caps the slack at zero, so
    /// members of the sets checked here land on this verdict.
    Boundary,
    NonMember,
}

impl Verdict {
    pub fn from_slack(slack: f64, tol: f64) -> Self {
        if slack < -tol {
            Verdict::NonMember
        } else if slack > tol {
            Verdict::Member
        } else {
            Verdict::Boundary
        }
    }

    pub fn is_member(self) -> bool {
        self != Verdict::NonMember
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Member => "member",
            Verdict::Boundary => "member (boundary)",
            Verdict::NonMember => "non-member",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalityCertificate {
    pub adversary_value: f64,
    pub baseline: f64,
    pub slack: f64,
    /// `P_{X2|X1 Yhat}` indexed `[x1][yhat][x2]`. Rows the constraints leave
    /// free (zero input mass or zero `V(yhat|x1)`) hold the identity.
    pub worst_adversary: Vec<Vec<Vec<f64>>>,
    pub marginal_residual: f64,
    pub tol: f64,
    pub verdict: Verdict,
}

impl MaximalityCertificate {
    pub fn is_member(&self) -> bool {
        self.verdict.is_member()
    }
}

/// Scale used to turn the absolute tolerance into one relative to the metric.
pub fn metric_scale(q: &Metric) -> f64 {
    q.max_value().abs().max(q.min_value().abs()).max(1.0)
}

fn check_shapes(c: &Coupling, px: &Distribution, q: &Metric) -> Result<()> {
    dim_check(px.len() == c.inputs(), || {
        format!(
            "input distribution has {} letters, coupling has {} inputs",
            px.len(),
            c.inputs()
        )
    })?;
    dim_check(
        q.inputs() == c.inputs() && q.outputs() == c.outputs(),
        || {
            format!(
                "metric is {}x{}, coupling is over {} inputs and {} outputs",
                q.inputs(),
                q.outputs(),
                c.inputs(),
                c.outputs()
            )
        },
    )
}

/// `E[q(X1, Y)]` under `px` and the coupling's Y-marginal.
pub fn baseline(c: &Coupling, px: &Distribution, q: &Metric) -> f64 {
    let w = marginal_y(c);
    baseline_w(&w, px, q)
}

pub(crate) fn baseline_w(w: &Channel, px: &Distribution, q: &Metric) -> f64 {
    let mut b = 0.0;
    for x in 0..w.inputs() {
        if px[x] > 0.0 {
            b += px[x]
                * (0..w.outputs())
                    .map(|y| w.get(x, y) * q.get(x, y))
                    .sum::<f64>();
        }
    }
    b
}

/// Optimal transport plans of the adversary problem, one per output letter.
pub(crate) struct AdversarySolution {
    pub value: f64,
    /// Support of `px`.
    pub support: Vec<usize>,
    /// `plans[yhat][i * s + j]`, indices into `support`.
    pub plans: Vec<Vec<f64>>,
    /// Row duals `alpha[yhat][i]`.
    pub row_duals: Vec<Vec<f64>>,
    /// Column duals `beta[yhat][j]`.
    pub col_duals: Vec<Vec<f64>>,
    pub v: Channel,
}

/// Solves the adversary problem for an arbitrary additive score table `g` (J x K).
pub(crate) fn solve_adversary(
    c: &Coupling,
    px: &Distribution,
    g: &dyn Fn(usize, usize) -> f64,
) -> Result<AdversarySolution> {
    let k = c.outputs();
    let support = px.support();
    let s = support.len();
    let v = marginal_yhat(c);
    let mut plans = Vec::with_capacity(k);
    let mut row_duals = Vec::with_capacity(k);
    let mut col_duals = Vec::with_capacity(k);
    let mut value = 0.0;
    for yh in 0..k {
        let a: Vec<f64> = support.iter().map(|&x| px[x] * v.get(x, yh)).collect();
        if a.iter().all(|&m| m <= 0.0) {
            plans.push(vec![0.0; s * s]);
            row_duals.push(vec![0.0; s]);
            col_duals.push(vec![0.0; s]);
            continue;
        }
        let mut cost = vec![0.0; s * s];
        for (i, &x1) in support.iter().enumerate() {
            let vx = v.get(x1, yh);
            if vx <= 0.0 {
                continue;
            }
            for (j, &x2) in support.iter().enumerate() {
                cost[i * s + j] = (0..k).map(|y| c.get(x1, y, yh) * g(x2, y)).sum::<f64>() / vx;
            }
        }
        let (plan, alpha, beta, val) = transport(&a, &cost, s)?;
        value += val;
        plans.push(plan);
        row_duals.push(alpha);
        col_duals.push(beta);
    }
    Ok(AdversarySolution {
        value,
        support,
        plans,
        row_duals,
        col_duals,
        v,
    })
}

/// Square transportation problem with equal row and column margins `a`.
/// Returns the plan, the row and column duals and the optimal cost.
fn transport(a: &[f64], cost: &[f64], s: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    if s == 1 {
        return Ok((vec![a[0]], vec![0.0], vec![cost[0]], a[0] * cost[0]));
    }
    let n = s * s;
    let mut rows = Vec::with_capacity(2 * s);
    let mut b = Vec::with_capacity(2 * s);
    for i in 0..s {
        let mut r = vec![0.0; n];
        for j in 0..s {
            r[i * s + j] = 1.0;
        }
        rows.push(r);
        b.push(a[i]);
    }
    for j in 0..s {
        let mut r = vec![0.0; n];
        for i in 0..s {
            r[i * s + j] = 1.0;
        }
        rows.push(r);
        b.push(a[j]);
    }
    let sol = solve_lp(&LpProblem::new(cost.to_vec(), rows, b)?)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(LpError::Numerical(
            "adversary transport problem not solved to optimality".into(),
        )));
    }
    Ok((
        sol.x,
        sol.y[..s].to_vec(),
        sol.y[s..].to_vec(),
        sol.objective,
    ))
}

impl AdversarySolution {
    fn certificate(
        &self,
        c: &Coupling,
        px: &Distribution,
        base: f64,
        tol: f64,
    ) -> MaximalityCertificate {
        let (j_n, k) = (c.inputs(), c.outputs());
        let s = self.support.len();
        let mut adv = vec![vec![vec![0.0; j_n]; k]; j_n];
        for (x1, row) in adv.iter_mut().enumerate() {
            for (yh, cell) in row.iter_mut().enumerate() {
                cell[x1] = 1.0;
                let _ = yh;
            }
        }
        let mut resid: f64 = 0.0;
        for yh in 0..k {
            let plan = &self.plans[yh];
            for (i, &x1) in self.support.iter().enumerate() {
                let a = px[x1] * self.v.get(x1, yh);
                if a > 0.0 {
                    let row = &mut adv[x1][yh];
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (j, &x2) in self.support.iter().enumerate() {
                        row[x2] = plan[i * s + j].max(0.0) / a;
                    }
                    let tot: f64 = row.iter().sum();
                    resid = resid.max((tot - 1.0).abs());
                    row.iter_mut().for_each(|v| *v /= tot);
                }
            }
            for (j, &x2) in self.support.iter().enumerate() {
                let inflow: f64 = self
                    .support
                    .iter()
                    .map(|&x1| px[x1] * self.v.get(x1, yh) * adv[x1][yh][x2])
                    .sum();
                resid = resid.max((inflow - px[x2] * self.v.get(x2, yh)).abs());
                let _ = j;
            }
        }
        let slack = self.value - base;
        MaximalityCertificate {
            adversary_value: self.value,
            baseline: base,
            slack,
            worst_adversary: adv,
            marginal_residual: resid,
            tol,
            verdict: Verdict::from_slack(slack, tol),
        }
    }

    /// Gradient of the adversary value with respect to every coupling entry,
    /// laid out like `Coupling::as_slice`, for score table `g`.
    pub(crate) fn gradient(
        &self,
        c: &Coupling,
        px: &Distribution,
        g: &dyn Fn(usize, usize) -> f64,
    ) -> Vec<f64> {
        let (j_n, k) = (c.inputs(), c.outputs());
        let s = self.support.len();
        let mut grad = vec![0.0; j_n * k * k];
        for yh in 0..k {
            let plan = &self.plans[yh];
            let beta = &self.col_duals[yh];
            for (i, &x1) in self.support.iter().enumerate() {
                let vx = self.v.get(x1, yh);
                let a = px[x1] * vx;
                for y in 0..k {
                    let val = if a > 0.0 {
                        // px(x1) [sum_x2 P(x2) (g(x2,y) - beta(x2)) + beta(x1)]
                        let mut acc = 0.0;
                        for (j, &x2) in self.support.iter().enumerate() {
                            acc += plan[i * s + j].max(0.0) / a * (g(x2, y) - beta[j]);
                        }
                        px[x1] * (acc + beta[i])
                    } else {
                        let best = self
                            .support
                            .iter()
                            .enumerate()
                            .map(|(j, &x2)| g(x2, y) - beta[j])
                            .fold(f64::INFINITY, f64::min);
                        px[x1] * (best + beta[i])
                    };
                    grad[(x1 * k + y) * k + yh] = val;
                }
            }
        }
        grad
    }
}

pub fn adversary_value(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
) -> Result<MaximalityCertificate> {
    adversary_value_with_tol(c, px, q, DEFAULT_TOL)
}

/// Solves the adversary problem and reports the slack against `E[q(X1,Y)]`.
/// The tolerance is applied relative to the metric's magnitude (`tol * max(1, |q|_max)`).
pub fn adversary_value_with_tol(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    tol: f64,
) -> Result<MaximalityCertificate> {
    check_shapes(c, px, q)?;
    let sol = solve_adversary(c, px, &|j, k| q.get(j, k))?;
    let base = baseline(c, px, q);
    Ok(sol.certificate(c, px, base, tol * metric_scale(q)))
}

/// Membership in `M_max(q, px)`: slack `>= -tol`.
pub fn is_maximal(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    tol: f64,
) -> Result<(bool, MaximalityCertificate)> {
    let cert = adversary_value_with_tol(c, px, q, tol)?;
    Ok((cert.is_member(), cert))
}

/// Regular lattice on the probability simplex with the given spacing
/// (including the vertices). For two letters this is the sweep `(t, 1-t)`.
pub fn simplex_grid(letters: usize, step: f64) -> Result<Vec<Distribution>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Precondition(format!(
            "grid step {} must lie in (0, 1]",
            step
        )));
    }
    let m = (1.0 / step).round().max(1.0) as u32;
    let types = crate::types::enumerate_types(m, letters)?;
    Ok(types
        .into_iter()
        .map(|t| Distribution::new(t.probs()).expect("lattice points are distributions"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalReport {
    pub member: bool,
    pub worst_px: Distribution,
    pub min_slack: f64,
    pub points: usize,
    /// Membership is only checked on the grid.
    pub grid_step: f64,
}

/// Checks `M_max(q, px)` membership on every grid point and reports the
/// point with the smallest slack. Grid-certified only.
pub fn is_maximal_universal(
    c: &Coupling,
    q: &Metric,
    grid_step: f64,
    tol: f64,
) -> Result<UniversalReport> {
    use rayon::prelude::*;
    let grid = simplex_grid(c.inputs(), grid_step)?;
    let results: Vec<(f64, bool, usize)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, px)| is_maximal(c, px, q, tol).map(|(m, cert)| (cert.slack, m, i)))
        .collect::<Result<_>>()?;
    let member = results.iter().all(|r| r.1);
    let worst = results
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.2.cmp(&b.2)))
        .expect("grid is nonempty");
    Ok(UniversalReport {
        member,
        worst_px: grid[worst.2].clone(),
        min_slack: worst.0,
        points: grid.len(),
        grid_step,
    })
}

/// `S_q(k1, k2) = argmax_j q(j, k2) - q(j, k1)`, ties included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqTable {
    outputs: usize,
    sets: Vec<Vec<usize>>,
}

impl SqTable {
    pub fn get(&self, k1: usize, k2: usize) -> &[usize] {
        &self.sets[k1 * self.outputs + k2]
    }

    pub fn contains(&self, k1: usize, k2: usize, j: usize) -> bool {
        self.get(k1, k2).contains(&j)
    }
}

const TIE_TOL: f64 = 1e-12;

fn argmax_set(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let v: Vec<f64> = values.collect();
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + best.abs());
    (0..v.len()).filter(|&j| v[j] >= best - tol).collect()
}

pub fn sq_table(q: &Metric) -> SqTable {
    let k = q.outputs();
    let mut sets = Vec::with_capacity(k * k);
    for k1 in 0..k {
        for k2 in 0..k {
            sets.push(argmax_set(
                (0..q.inputs()).map(|j| q.get(j, k2) - q.get(j, k1)),
            ));
        }
    }
    SqTable { outputs: k, sets }
}

/// Result of an entrywise support check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportCheck {
    pub member: bool,
    /// `(j, k1, k2, mass)` for every positive entry outside the allowed set.
    pub violations: Vec<(usize, usize, usize, f64)>,
}

fn support_check(c: &Coupling, allowed: impl Fn(usize, usize, usize) -> bool) -> SupportCheck {
    let k = c.outputs();
    let mut violations = Vec::new();
    for j in 0..c.inputs() {
        for k1 in 0..k {
            for k2 in 0..k {
                let m = c.get(j, k1, k2);
                if m > 0.0 && !allowed(j, k1, k2) {
                    violations.push((j, k1, k2, m));
                }
            }
        }
    }
    SupportCheck {
        member: violations.is_empty(),
        violations,
    }
}

/// Membership in the prior maximal set `M_max(q)`.
pub fn is_maximal_prior(c: &Coupling, q: &Metric) -> Result<SupportCheck> {
    dim_check(
        q.inputs() == c.inputs() && q.outputs() == c.outputs(),
        || "metric and coupling shapes differ".into(),
    )?;
    let t = sq_table(q);
    Ok(support_check(c, |j, k1, k2| t.contains(k1, k2, j)))
}

/// `S_{rho,q}(y, yhat) = argmax_x rho(x, yhat) - q(x, y)`.
pub fn s_rho_q(rho: &Metric, q: &Metric, y: usize, yhat: usize) -> Vec<usize> {
    argmax_set((0..q.inputs()).map(|x| rho.get(x, yhat) - q.get(x, y)))
}

/// Membership in `Gamma(rho, q)`: entries vanish outside `S_{rho,q}`.
pub fn in_gamma_rho(c: &Coupling, rho: &Metric, q: &Metric) -> Result<SupportCheck> {
    dim_check(
        rho.inputs() == c.inputs()
            && rho.outputs() == c.outputs()
            && q.inputs() == c.inputs()
            && q.outputs() == c.outputs(),
        || "metric and coupling shapes differ".into(),
    )?;
    let k = c.outputs();
    let mut sets = Vec::with_capacity(k * k);
    for y in 0..k {
        for yh in 0..k {
            sets.push(s_rho_q(rho, q, y, yh));
        }
    }
    Ok(support_check(c, |j, y, yh| sets[y * k + yh].contains(&j)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCheck {
    pub value: f64,
    pub baseline: f64,
    pub slack: f64,
    pub verdict: Verdict,
}

/// Membership in `Theta*(q, px)`: the adversary may pick `X~` depending on
/// `(X, Y, Yhat)` jointly, subject only to `P_{Yhat X~} = P_{Yhat X}`.
pub fn in_theta_star(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    tol: f64,
) -> Result<(bool, SetCheck)> {
    check_shapes(c, px, q)?;
    let k = c.outputs();
    let support = px.support();
    let s = support.len();
    let v = marginal_yhat(c);
    let mut value = 0.0;
    for yh in 0..k {
        // sources (x, y), sinks x~
        let sources: Vec<(usize, usize, f64)> = support
            .iter()
            .flat_map(|&x| (0..k).map(move |y| (x, y)))
            .map(|(x, y)| (x, y, px[x] * c.get(x, y, yh)))
            .filter(|t| t.2 > 0.0)
            .collect();
        if sources.is_empty() {
            continue;
        }
        let mut lp = LpBuilder::new(Sense::Minimize);
        let mut vars = Vec::with_capacity(sources.len() * s);
        for &(_, y, _) in &sources {
            for &xt in &support {
                vars.push(lp.add_var(q.get(xt, y)));
            }
        }
        for (r, &(_, _, mass)) in sources.iter().enumerate() {
            lp.add_row(
                (0..s).map(|j| (vars[r * s + j], 1.0)).collect(),
                Cmp::Eq,
                mass,
            );
        }
        for (j, &xt) in support.iter().enumerate() {
            lp.add_row(
                (0..sources.len()).map(|r| (vars[r * s + j], 1.0)).collect(),
                Cmp::Eq,
                px[xt] * v.get(xt, yh),
            );
        }
        value += lp.solve()?.objective;
    }
    let base = baseline(c, px, q);
    let slack = value - base;
    let verdict = Verdict::from_slack(slack, tol * metric_scale(q));
    Ok((
        verdict.is_member(),
        SetCheck {
            value,
            baseline: base,
            slack,
            verdict,
        },
    ))
}

/// Which reading of the absolute-continuity clause defines `Gamma*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaStarReading {
    /// The `(Y, Yhat, X)` law of the adversary equals `px x P_{Y Yhat|X}`;
    /// the membership test then coincides with `Theta*`.
    #[default]
    Equality,
    /// The adversary law may be any distribution supported inside the support
    /// of `px x P_{Y Yhat|X}`.
    Support,
}

/// Membership in `Gamma*(q, px)` under the chosen reading.
pub fn in_gamma_star(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    tol: f64,
    reading: GammaStarReading,
) -> Result<(bool, SetCheck)> {
    match reading {
        GammaStarReading::Equality => in_theta_star(c, px, q, tol),
        GammaStarReading::Support => gamma_star_support(c, px, q, tol),
    }
}

fn gamma_star_support(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    tol: f64,
) -> Result<(bool, SetCheck)> {
    check_shapes(c, px, q)?;
    let k = c.outputs();
    let support = px.support();
    let cells: Vec<(usize, usize, usize)> = support
        .iter()
        .flat_map(|&x| (0..k).flat_map(move |y| (0..k).map(move |yh| (x, y, yh))))
        .filter(|&(x, y, yh)| c.get(x, y, yh) > 0.0)
        .collect();
    // nu(x, y, yhat, x~) on the support, normalized, with matching (Yhat, X) and (Yhat, X~) laws
    let mut lp = LpBuilder::new(Sense::Minimize);
    let mut vars = Vec::new();
    for &(x, y, yh) in &cells {
        for &xt in &support {
            vars.push((lp.add_var(q.get(xt, y) - q.get(x, y)), x, yh, xt));
        }
    }
    lp.add_row(vars.iter().map(|v| (v.0, 1.0)).collect(), Cmp::Eq, 1.0);
    for yh in 0..k {
        for &a in &support {
            let mut coeffs = Vec::new();
            for &(id, x, vy, xt) in &vars {
                if vy != yh {
                    continue;
                }
                let w = (x == a) as i32 as f64 - (xt == a) as i32 as f64;
                if w != 0.0 {
                    coeffs.push((id, w));
                }
            }
            if !coeffs.is_empty() {
                lp.add_row(coeffs, Cmp::Eq, 0.0);
            }
        }
    }
    let sol = lp.solve()?;
    let slack = sol.objective.min(0.0);
    let verdict = Verdict::from_slack(slack, tol * metric_scale(q));
    Ok((
        verdict.is_member(),
        SetCheck {
            value: slack,
            baseline: 0.0,
            slack,
            verdict,
        },
    ))
}

/// Type-dependent decoding metric evaluated on a joint law `P_{XY}` (J x K, row-major).
pub trait TypeDependentMetric: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, joint: &[f64], inputs: usize, outputs: usize) -> f64;
    /// Gradient with respect to the joint entries, when available.
    fn gradient(&self, _joint: &[f64], _inputs: usize, _outputs: usize) -> Option<Vec<f64>> {
        None
    }
    /// Declared convexity in `P_{Y|X}` for fixed `P_X`.
    fn is_convex(&self) -> bool;
}

/// `E[q(X, Y)]` for an additive table `q`.
#[derive(Debug, Clone)]
pub struct AdditiveTd(pub Metric);

impl TypeDependentMetric for AdditiveTd {
    fn name(&self) -> &str {
        "additive"
    }
    fn value(&self, joint: &[f64], inputs: usize, outputs: usize) -> f64 {
        let mut v = 0.0;
        for x in 0..inputs {
            for y in 0..outputs {
                v += joint[x * outputs + y] * self.0.get(x, y);
            }
        }
        v
    }
    fn gradient(&self, _joint: &[f64], inputs: usize, outputs: usize) -> Option<Vec<f64>> {
        Some(
            (0..inputs * outputs)
                .map(|i| self.0.get(i / outputs, i % outputs))
                .collect(),
        )
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// Maximum-mutual-information metric `I(P_XY)` in bits.
#[derive(Debug, Clone, Copy, Default)]
pub struct MmiMetric;

fn joint_marginals(joint: &[f64], inputs: usize, outputs: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pxm = vec![0.0; inputs];
    let mut pym = vec![0.0; outputs];
    for x in 0..inputs {
        for y in 0..outputs {
            let p = joint[x * outputs + y].max(0.0);
            pxm[x] += p;
            pym[y] += p;
        }
    }
    (pxm, pym)
}

impl TypeDependentMetric for MmiMetric {
    fn name(&self) -> &str {
        "mmi"
    }
    fn value(&self, joint: &[f64], inputs: usize, outputs: usize) -> f64 {
        let (pxm, pym) = joint_marginals(joint, inputs, outputs);
        let mut v = 0.0;
        for x in 0..inputs {
            for y in 0..outputs {
                let p = joint[x * outputs + y];
                if p > 0.0 {
                    v += p * (p / (pxm[x] * pym[y])).ln();
                }
            }
        }
        (v / std::f64::consts::LN_2).max(0.0)
    }
    fn gradient(&self, joint: &[f64], inputs: usize, outputs: usize) -> Option<Vec<f64>> {
        let (pxm, pym) = joint_marginals(joint, inputs, outputs);
        let floor = 1e-300;
        Some(
            (0..inputs * outputs)
                .map(|i| {
                    let (x, y) = (i / outputs, i % outputs);
                    let p = joint[i].max(floor);
                    ((p / (pxm[x].max(floor) * pym[y].max(floor))).ln() - 1.0)
                        / std::f64::consts::LN_2
                })
                .collect(),
        )
    }
    fn is_convex(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TdOptions {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TdOptions {
    fn default() -> Self {
        TdOptions {
            max_iter: 400,
            gap_tol: 1e-10,
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdCertificate {
    /// Smallest `q(P_{X2 Y})` found.
    pub best_value: f64,
    /// Certified lower bound on the minimum (Frank-Wolfe gap); `-inf` when
    /// the metric is not declared convex or has no gradient.
    pub lower_bound: f64,
    pub baseline: f64,
    pub slack: f64,
    pub verdict: Verdict,
    /// A non-member verdict is always certain; a member verdict is
    /// certified only when this is set.
    pub certified: bool,
    pub gradient_free: bool,
    /// `P_{X2 | X1 Yhat}` indexed `[x1][yhat][x2]`.
    pub worst_adversary: Vec<Vec<Vec<f64>>>,
}

/// Adversary polytope as a product of per-letter transport polytopes, with
/// the linear map from plans to `P_{X2 Y}`.
pub(crate) struct TdGeometry {
    j: usize,
    k: usize,
    support: Vec<usize>,
    /// margins per yhat over the support
    margins: Vec<Vec<f64>>,
    /// `cond[yhat][i][y] = P(Y = y | X1 = support[i], Yhat = yhat)`
    cond: Vec<Vec<Vec<f64>>>,
}

impl TdGeometry {
    pub(crate) fn new(c: &Coupling, px: &Distribution) -> Self {
        let (j, k) = (c.inputs(), c.outputs());
        let support = px.support();
        let v = marginal_yhat(c);
        let margins = (0..k)
            .map(|yh| support.iter().map(|&x| px[x] * v.get(x, yh)).collect())
            .collect();
        let cond = (0..k)
            .map(|yh| {
                support
                    .iter()
                    .map(|&x| {
                        let vx = v.get(x, yh);
                        (0..k)
                            .map(|y| if vx > 0.0 { c.get(x, y, yh) / vx } else { 0.0 })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TdGeometry {
            j,
            k,
            support,
            margins,
            cond,
        }
    }

    fn s(&self) -> usize {
        self.support.len()
    }

    /// `P_{X2 Y}` for stacked plans `mu[yhat][i*s+j]`.
    pub(crate) fn joint(&self, mu: &[Vec<f64>]) -> Vec<f64> {
        let s = self.s();
        let mut out = vec![0.0; self.j * self.k];
        for yh in 0..self.k {
            for i in 0..s {
                for jj in 0..s {
                    let m = mu[yh][i * s + jj];
                    if m > 0.0 {
                        let x2 = self.support[jj];
                        for y in 0..self.k {
                            out[x2 * self.k + y] += m * self.cond[yh][i][y];
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn identity(&self) -> Vec<Vec<f64>> {
        let s = self.s();
        (0..self.k)
            .map(|yh| {
                let mut p = vec![0.0; s * s];
                for i in 0..s {
                    p[i * s + i] = self.margins[yh][i];
                }
                p
            })
            .collect()
    }

    /// Linear minimization oracle for score table `g` on `P_{X2 Y}`.
    pub(crate) fn lmo(&self, g: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let s = self.s();
        let mut plans = Vec::with_capacity(self.k);
        let mut duals = Vec::with_capacity(self.k);
        for yh in 0..self.k {
            let a = &self.margins[yh];
            if a.iter().all(|&m| m <= 0.0) {
                plans.push(vec![0.0; s * s]);
                duals.push(vec![0.0; s]);
                continue;
            }
            let mut cost = vec![0.0; s * s];
            for i in 0..s {
                for jj in 0..s {
                    let x2 = self.support[jj];
                    cost[i * s + jj] = (0..self.k)
                        .map(|y| self.cond[yh][i][y] * g[x2 * self.k + y])
                        .sum();
                }
            }
            let (p, _, beta, _) = transport(a, &cost, s)?;
            plans.push(p);
            duals.push(beta);
        }
        Ok((plans, duals))
    }

    pub(crate) fn adversary_table(&self, mu: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        let s = self.s();
        let mut adv = vec![vec![vec![0.0; self.j]; self.k]; self.j];
        for (x1, row) in adv.iter_mut().enumerate() {
            for cell in row.iter_mut() {
                cell[x1] = 1.0;
            }
        }
        for yh in 0..self.k {
            for (i, &x1) in self.support.iter().enumerate() {
                let a = self.margins[yh][i];
                if a > 0.0 {
                    let row = &mut adv[x1][yh];
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (jj, &x2) in self.support.iter().enumerate() {
                        row[x2] = mu[yh][i * s + jj].max(0.0) / a;
                    }
                    let t: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= t);
                }
            }
        }
        adv
    }
}

fn mix(a: &[Vec<f64>], b: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect()
        })
        .collect()
}

/// Golden-section minimization of a unimodal function on `[0, 1]`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mut best = (0.0, f(0.0));
    for t in [0.5 * (a + b), 1.0] {
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

/// Result of minimizing a type-dependent metric over the adversary polytope.
pub(crate) struct TdSolve {
    pub best: f64,
    pub lower: f64,
    pub mu: Vec<Vec<f64>>,
    pub gradient_free: bool,
}

pub(crate) fn minimize_td(
    geo: &TdGeometry,
    q_td: &dyn TypeDependentMetric,
    opts: &TdOptions,
) -> Result<TdSolve> {
    use rand::{Rng, SeedableRng};
    let (j, k) = (geo.j, geo.k);
    let f = |mu: &[Vec<f64>]| q_td.value(&geo.joint(mu), j, k);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![geo.identity()];
    for _ in 0..opts.restarts {
        let g: Vec<f64> = (0..j * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        starts.push(geo.lmo(&g)?.0);
    }
    let has_grad = q_td.gradient(&geo.joint(&starts[0]), j, k).is_some();
    let mut best_mu = starts[0].clone();
    let mut best = f(&best_mu);
    let mut lower = f64::NEG_INFINITY;
    if has_grad {
        for start in starts {
            let mut mu = start;
            let mut val = f(&mu);
            for _ in 0..opts.max_iter {
                let p = geo.joint(&mu);
                let g = q_td.gradient(&p, j, k).expect("gradient available");
                let (s, _) = geo.lmo(&g)?;
                let ps = geo.joint(&s);
                let gap: f64 = g
                    .iter()
                    .zip(p.iter().zip(&ps))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                if q_td.is_convex() {
                    lower = lower.max(val - gap.max(0.0));
                }
                if gap <= opts.gap_tol {
                    break;
                }
                let (t, v) = golden_section(|t| f(&mix(&mu, &s, t)), 1e-10);
                if v >= val - 1e-15 && t == 0.0 {
                    break;
                }
                mu = mix(&mu, &s, t);
                val = v;
            }
            if val < best {
                best = val;
                best_mu = mu;
            }
        }
        if !q_td.is_convex() {
            lower = f64::NEG_INFINITY;
        }
    } else {
        // Gradient-free: line searches between the incumbent and random vertices.
        let mut verts = starts;
        for _ in 0..(opts.restarts * 4).max(8) {
            let g: Vec<f64> = (0..j * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            verts.push(geo.lmo(&g)?.0);
        }
        for v in &verts {
            let val = f(v);
            if val < best {
                best = val;
                best_mu = v.clone();
            }
        }
        for _round in 0..3 {
            for v in &verts {
                let (t, val) = golden_section(|t| f(&mix(&best_mu, v, t)), 1e-8);
                if val < best {
                    best = val;
                    best_mu = mix(&best_mu, v, t);
                }
            }
        }
    }
    Ok(TdSolve {
        best,
        lower,
        mu: best_mu,
        gradient_free: !has_grad,
    })
}

/// `q(P_{X1 Y})` for a coupling and input law.
pub(crate) fn td_baseline(c: &Coupling, px: &Distribution, q_td: &dyn TypeDependentMetric) -> f64 {
    let (j, k) = (c.inputs(), c.outputs());
    let w = marginal_y(c);
    let joint: Vec<f64> = (0..j * k)
        .map(|i| px[i / k] * w.get(i / k, i % k))
        .collect();
    q_td.value(&joint, j, k)
}

/// Membership in `M_max^td(q, px)`. The adversary problem is convex for
/// convex metrics and is solved by Frank-Wolfe with an LP oracle; the gap
/// gives a certified lower bound. A non-member verdict is always certain.
pub fn is_maximal_td(
    c: &Coupling,
    px: &Distribution,
    q_td: &dyn TypeDependentMetric,
    tol: f64,
    opts: &TdOptions,
) -> Result<TdCertificate> {
    dim_check(px.len() == c.inputs(), || {
        "input distribution and coupling differ in size".into()
    })?;
    let geo = TdGeometry::new(c, px);
    let sol = minimize_td(&geo, q_td, opts)?;
    let base = td_baseline(c, px, q_td);
    let scale = base.abs().max(1.0);
    let t = tol * scale;
    let slack = sol.best - base;
    let certified_member = sol.lower - base >= -t;
    let verdict = if slack < -t {
        Verdict::NonMember
    } else {
        Verdict::from_slack(slack, t)
    };
    Ok(TdCertificate {
        best_value: sol.best,
        lower_bound: sol.lower,
        baseline: base,
        slack,
        verdict,
        certified: verdict == Verdict::NonMember || certified_member,
        gradient_free: sol.gradient_free,
        worst_adversary: geo.adversary_table(&sol.mu),
    })
}

/// Slack of the type-dependent condition and its gradient with respect to
/// the coupling entries (envelope argument at the Frank-Wolfe optimum).
pub(crate) fn td_slack_and_gradient(
    c: &Coupling,
    px: &Distribution,
    q_td: &dyn TypeDependentMetric,
    opts: &TdOptions,
) -> Result<(f64, Vec<f64>)> {
    let (j, k) = (c.inputs(), c.outputs());
    let geo = TdGeometry::new(c, px);
    let sol = minimize_td(&geo, q_td, opts)?;
    let p2 = geo.joint(&sol.mu);
    let g2 = q_td.gradient(&p2, j, k).unwrap_or_else(|| vec![0.0; j * k]);
    let gfn = |x: usize, y: usize| g2[x * k + y];
    let lin = solve_adversary(c, px, &gfn)?;
    let mut grad = lin.gradient(c, px, &gfn);
    let w = marginal_y(c);
    let joint1: Vec<f64> = (0..j * k)
        .map(|i| px[i / k] * w.get(i / k, i % k))
        .collect();
    let g1 = q_td
        .gradient(&joint1, j, k)
        .unwrap_or_else(|| vec![0.0; j * k]);
    for x in 0..j {
        for y in 0..k {
            for yh in 0..k {
                grad[(x * k + y) * k + yh] -= px[x] * g1[x * k + y];
            }
        }
    }
    Ok((sol.best - q_td.value(&joint1, j, k), grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmaxReport {
    pub member: bool,
    /// Max-min value of the game (`E[q(X2,Y)]` the coupling player can guarantee).
    pub value: f64,
    pub min_max_value: f64,
    pub baseline: f64,
    pub slack: f64,
    pub saddle_gap: f64,
    /// Coupling attaining the max-min value.
    pub coupling: Coupling,
}

/// Membership of `v` in `V_max(q, px)` for channel `w`, by solving the
/// bilinear game between couplings with marginals `(w, v)` and adversaries
/// matching the `(Yhat, X)` law of `px x v`.
pub fn in_v_max(
    v: &Channel,
    px: &Distribution,
    w: &Channel,
    q: &Metric,
    tol: f64,
) -> Result<VmaxReport> {
    dim_check(v.same_shape(w) && px.len() == w.inputs(), || {
        "channel and input shapes differ".into()
    })?;
    dim_check(
        q.inputs() == w.inputs() && q.outputs() == w.outputs(),
        || "metric shape differs from the channel".into(),
    )?;
    let (j_n, k) = (w.inputs(), w.outputs());
    let support = px.support();

    // Maximizer: c(x, y, yhat) on support letters with both marginals fixed.
    let mut cvars: Vec<(usize, usize, usize)> = Vec::new();
    for &x in &support {
        for y in 0..k {
            for yh in 0..k {
                if w.get(x, y) > 0.0 && v.get(x, yh) > 0.0 {
                    cvars.push((x, y, yh));
                }
            }
        }
    }
    let mut amax = Vec::new();
    let mut bmax = Vec::new();
    for &x in &support {
        for y in 0..k {
            amax.push(
                cvars
                    .iter()
                    .map(|&(a, b, _)| if a == x && b == y { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
            bmax.push(w.get(x, y));
        }
        for yh in 0..k {
            amax.push(
                cvars
                    .iter()
                    .map(|&(a, _, c)| if a == x && c == yh { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
            bmax.push(v.get(x, yh));
        }
    }
    // Minimizer: transport plans per yhat over rows with positive margin.
    let mut zvars: Vec<(usize, usize, usize)> = Vec::new(); // (yhat, x1, x2)
    for yh in 0..k {
        for &x1 in &support {
            if v.get(x1, yh) <= 0.0 {
                continue;
            }
            for &x2 in &support {
                if v.get(x2, yh) > 0.0 {
                    zvars.push((yh, x1, x2));
                }
            }
        }
    }
    let mut amin = Vec::new();
    let mut bmin = Vec::new();
    for yh in 0..k {
        for &x in &support {
            let m = px[x] * v.get(x, yh);
            if m <= 0.0 {
                continue;
            }
            amin.push(
                zvars
                    .iter()
                    .map(|&(h, a, _)| if h == yh && a == x { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
            bmin.push(m);
            amin.push(
                zvars
                    .iter()
                    .map(|&(h, _, b)| if h == yh && b == x { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
            bmin.push(m);
        }
    }
    let mut payoff = vec![vec![0.0; zvars.len()]; cvars.len()];
    for (r, &(x1, y, yh)) in cvars.iter().enumerate() {
        for (col, &(h, a, x2)) in zvars.iter().enumerate() {
            if h == yh && a == x1 {
                payoff[r][col] = q.get(x2, y) / v.get(x1, yh);
            }
        }
    }
    let game = BilinearGame::new(
        payoff,
        Polytope::new(cvars.len(), amax, bmax)?,
        Polytope::new(zvars.len(), amin, bmin)?,
    )?;
    let sol = solve_bilinear_game(&game).map_err(|e| match e {
        LpError::Infeasible(m) => {
            Error::Infeasible(format!("no coupling has the requested marginals: {}", m))
        }
        other => Error::Lp(other),
    })?;
    let base = baseline_w(w, px, q);
    let slack = sol.value - base;
    let mut data = vec![0.0; j_n * k * k];
    for x in 0..j_n {
        if px[x] <= 0.0 {
            for y in 0..k {
                data[(x * k + y) * k + y] = w.get(x, y);
            }
        }
    }
    for (r, &(x, y, yh)) in cvars.iter().enumerate() {
        data[(x * k + y) * k + yh] = sol.max_strategy[r].max(0.0);
    }
    let coupling = Coupling::from_flat(j_n, k, data)?;
    Ok(VmaxReport {
        member: slack >= -tol * metric_scale(q),
        value: sol.value,
        min_max_value: sol.min_max_value,
        baseline: base,
        slack,
        saddle_gap: sol.saddle_gap,
        coupling,
    })
}
