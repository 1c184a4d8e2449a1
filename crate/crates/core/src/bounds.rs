//! Upper bounds on the mismatch capacity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::maximality::{
    adversary_value_with_tol, golden_section, is_maximal_universal, simplex_grid, sq_table,
    MaximalityCertificate, UniversalReport,
};
use crate::prob::{
    blahut_arimoto_capacity, marginal_y, marginal_yhat, mutual_information, Channel, Coupling,
    Distribution, Metric,
};
use crate::search::{
    diagonal_data, yhat_information, Constraint, CouplingProblem, Objective, SearchOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    AuxiliaryCapacity,
    FullGrid,
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValue {
    pub px: Distribution,
    pub value_bits: f64,
    /// Frank-Wolfe duality gap (prior mode only).
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value_bits: f64,
    pub mode: BoundMode,
    pub witness: Option<Coupling>,
    pub witness_px: Option<Distribution>,
    /// The witness passed its membership checker (on the grid, for universal checks).
    pub certified: bool,
    pub maximality: Option<MaximalityCertificate>,
    pub universal: Option<UniversalReport>,
    pub grid: Vec<GridValue>,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct InnerMin {
    pub value_bits: f64,
    pub coupling: Coupling,
    pub certificate: MaximalityCertificate,
}

fn check_instance(px: &Distribution, w: &Channel, q: &Metric) -> Result<()> {
    dim_check(px.len() == w.inputs(), || {
        format!(
            "input distribution has {} letters, channel has {} inputs",
            px.len(),
            w.inputs()
        )
    })?;
    dim_check(
        q.inputs() == w.inputs() && q.outputs() == w.outputs(),
        || {
            format!(
                "metric is {}x{}, channel is {}x{}",
                q.inputs(),
                q.outputs(),
                w.inputs(),
                w.outputs()
            )
        },
    )
}

/// Smallest certified `I(px, P_{Yhat|X})` over maximal couplings with Y-marginal `w`.
pub fn inner_min_mi(
    px: &Distribution,
    w: &Channel,
    q: &Metric,
    opts: &SearchOptions,
) -> Result<InnerMin> {
    check_instance(px, w, q)?;
    let (j, k) = (w.inputs(), w.outputs());
    let diag = diagonal_data(w);
    let allowed: Vec<bool> = (0..j * k * k)
        .map(|i| w.get(i / (k * k), (i / k) % k) > 0.0)
        .collect();
    let problem = CouplingProblem {
        px,
        j,
        k,
        allowed,
        y_marginal: Some(w),
        yhat_marginal: None,
        objective: Objective::YhatInformation,
        constraint: Constraint::Additive(q),
        rate: None,
        filler: Coupling::diagonal(w),
    };
    let mut starts = vec![diag.clone()];
    if let Some((_, c, _)) = prior_inner(px, w, q)? {
        starts.push(c.as_slice().to_vec());
    }
    let found = problem.search(starts, &diag, &diag, opts)?;
    let diag_value = mutual_information(px, w)?;
    let coupling = match found {
        Some(f) if f.value < diag_value => f.coupling,
        _ => Coupling::diagonal(w),
    };
    let certificate = adversary_value_with_tol(&coupling, px, q, opts.tol)?;
    if !certificate.is_member() {
        return Err(Error::Precondition(
            "search returned an uncertified coupling".into(),
        ));
    }
    let value_bits = mutual_information(px, &marginal_yhat(&coupling))?;
    Ok(InnerMin {
        value_bits,
        coupling,
        certificate,
    })
}

/// Certified bound `C(P_{Yhat|X})` from a coupling that is maximal for every
/// input distribution on the grid.
pub fn auxiliary_capacity_bound(
    c: &Coupling,
    w: &Channel,
    q: &Metric,
    grid_step: f64,
    tol_marginal: f64,
    tol: f64,
) -> Result<BoundReport> {
    dim_check(
        c.inputs() == w.inputs() && c.outputs() == w.outputs(),
        || "coupling and channel shapes differ".into(),
    )?;
    let dev = marginal_y(c).max_abs_diff(w);
    if dev > tol_marginal {
        return Err(Error::Precondition(format!(
            "coupling Y-marginal deviates from the channel by {:.3e} (tolerance {:.1e})",
            dev, tol_marginal
        )));
    }
    let universal = is_maximal_universal(c, q, grid_step, tol)?;
    let v = marginal_yhat(c);
    let cap = blahut_arimoto_capacity(&v, 1e-12);
    let mut caveats = vec![format!(
        "maximality checked on a simplex grid of step {}",
        grid_step
    )];
    if dev > 0.0 {
        caveats.push(format!(
            "coupling Y-marginal deviates from the channel by {:.3e}",
            dev
        ));
    }
    if !universal.member {
        caveats.push(format!(
            "not certified: coupling is not maximal at px = {:?} (slack {:.3e})",
            universal.worst_px.probs(),
            universal.min_slack
        ));
    }
    Ok(BoundReport {
        value_bits: cap.bits,
        mode: BoundMode::AuxiliaryCapacity,
        witness: Some(c.clone()),
        witness_px: Some(cap.input.clone()),
        certified: universal.member,
        maximality: None,
        universal: Some(universal),
        grid: Vec::new(),
        caveats,
    })
}

fn grid_max(points: Vec<(Distribution, f64, Option<f64>, Coupling)>) -> (usize, Vec<GridValue>) {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        let b = &points[best];
        if p.1 > b.1 || (p.1 == b.1 && p.0.probs() < b.0.probs()) {
            best = i;
        }
    }
    let grid = points
        .iter()
        .map(|p| GridValue {
            px: p.0.clone(),
            value_bits: p.1,
            gap: p.2,
        })
        .collect();
    (best, grid)
}

/// Grid estimate of the max-min bound: the outer maximum over input
/// distributions runs on a grid and every inner value is a certified upper
/// bound on the true inner minimum.
pub fn full_bound(
    w: &Channel,
    q: &Metric,
    px_grid_step: f64,
    opts: &SearchOptions,
) -> Result<BoundReport> {
    check_instance(&Distribution::uniform(w.inputs()), w, q)?;
    let grid = simplex_grid(w.inputs(), px_grid_step)?;
    let points: Vec<(
        Distribution,
        f64,
        Option<f64>,
        Coupling,
        MaximalityCertificate,
    )> = grid
        .into_par_iter()
        .map(|px| {
            let r = inner_min_mi(&px, w, q, opts)?;
            Ok((px, r.value_bits, None, r.coupling, r.certificate))
        })
        .collect::<Result<_>>()?;
    let certs: Vec<MaximalityCertificate> = points.iter().map(|p| p.4.clone()).collect();
    let witnesses: Vec<Coupling> = points.iter().map(|p| p.3.clone()).collect();
    let (best, grid) = grid_max(points.into_iter().map(|p| (p.0, p.1, p.2, p.3)).collect());
    let g = &grid[best];
    let witness = witnesses[best].clone();
    Ok(BoundReport {
        value_bits: g.value_bits,
        mode: BoundMode::FullGrid,
        witness: Some(witness),
        witness_px: Some(g.px.clone()),
        certified: true,
        maximality: Some(certs[best].clone()),
        universal: None,
        caveats: vec![
            format!("outer maximum restricted to an input grid of step {}", px_grid_step),
            "inner values are certified upper bounds on the inner minimum; the result estimates the bound and is not itself a certified bound on the mismatch capacity".into(),
        ],
        grid,
    })
}

/// Minimizes `I(px, P_{Yhat|X})` over couplings with Y-marginal `w` whose
/// support respects the prior maximal set. The problem is convex; it is
/// solved by block pairwise conditional gradient. Returns the value, the
/// minimizer and the duality gap, or `None` when the support is empty for
/// some `(x, y)` with positive probability.
pub fn prior_inner(
    px: &Distribution,
    w: &Channel,
    q: &Metric,
) -> Result<Option<(f64, Coupling, f64)>> {
    check_instance(px, w, q)?;
    let (j, k) = (w.inputs(), w.outputs());
    let sq = sq_table(q);
    let mut c = diagonal_data(w);
    let allowed = |x: usize, y: usize, yh: usize| sq.contains(y, yh, x);
    for x in 0..j {
        for y in 0..k {
            if px[x] > 0.0 && w.get(x, y) > 0.0 && !(0..k).any(|yh| allowed(x, y, yh)) {
                return Ok(None);
            }
        }
    }
    let blocks: Vec<(usize, usize, Vec<usize>)> = (0..j)
        .filter(|&x| px[x] > 0.0)
        .flat_map(|x| (0..k).map(move |y| (x, y)))
        .filter(|&(x, y)| w.get(x, y) > 0.0)
        .map(|(x, y)| (x, y, (0..k).filter(|&yh| allowed(x, y, yh)).collect()))
        .collect();
    let idx = |x: usize, y: usize, yh: usize| (x * k + y) * k + yh;
    let gap_of = |c: &[f64]| -> (f64, Vec<f64>) {
        let (_, g) = yhat_information(px, c, j, k);
        let mut gap = 0.0;
        for (x, y, a) in &blocks {
            let best = a
                .iter()
                .map(|&yh| g[idx(*x, *y, yh)])
                .fold(f64::INFINITY, f64::min);
            gap += a
                .iter()
                .map(|&yh| c[idx(*x, *y, yh)] * (g[idx(*x, *y, yh)] - best))
                .sum::<f64>();
        }
        (gap, g)
    };
    let mut gap = f64::INFINITY;
    for _sweep in 0..20000 {
        let (gp, _) = gap_of(&c);
        gap = gp;
        if gap <= 1e-8 {
            break;
        }
        for (x, y, a) in &blocks {
            let (_, g) = yhat_information(px, &c, j, k);
            let fw = *a
                .iter()
                .min_by(|&&p, &&r| g[idx(*x, *y, p)].partial_cmp(&g[idx(*x, *y, r)]).unwrap())
                .unwrap();
            let away = a
                .iter()
                .copied()
                .filter(|&yh| c[idx(*x, *y, yh)] > 0.0)
                .max_by(|&p, &r| g[idx(*x, *y, p)].partial_cmp(&g[idx(*x, *y, r)]).unwrap());
            let Some(away) = away else { continue };
            if away == fw || g[idx(*x, *y, away)] - g[idx(*x, *y, fw)] < 1e-15 {
                continue;
            }
            let mass = c[idx(*x, *y, away)];
            let (from, to) = (idx(*x, *y, away), idx(*x, *y, fw));
            let eval = |t: f64| {
                let mut d = c.clone();
                d[from] -= t * mass;
                d[to] += t * mass;
                yhat_information(px, &d, j, k).0
            };
            let (t, _) = golden_section(eval, 1e-12);
            c[from] -= t * mass;
            c[to] += t * mass;
            if c[from] < 0.0 {
                c[from] = 0.0;
            }
        }
    }
    let coupling = Coupling::from_flat(j, k, c)?;
    let value = mutual_information(px, &marginal_yhat(&coupling))?;
    Ok(Some((value, coupling, gap)))
}

/// Grid maximum over input distributions of the prior-set inner minimum.
pub fn prior_bound(w: &Channel, q: &Metric, px_grid_step: f64) -> Result<BoundReport> {
    check_instance(&Distribution::uniform(w.inputs()), w, q)?;
    let grid = simplex_grid(w.inputs(), px_grid_step)?;
    let inner: Vec<Option<(Distribution, f64, f64, Coupling)>> = grid
        .into_par_iter()
        .map(|px| Ok(prior_inner(&px, w, q)?.map(|(v, c, g)| (px, v, g, c))))
        .collect::<Result<_>>()?;
    if inner.iter().any(|r| r.is_none()) {
        return Ok(BoundReport {
            value_bits: f64::INFINITY,
            mode: BoundMode::Prior,
            witness: None,
            witness_px: None,
            certified: false,
            maximality: None,
            universal: None,
            grid: Vec::new(),
            caveats: vec!["prior maximal set admits no coupling with this channel marginal".into()],
        });
    }
    let points: Vec<(Distribution, f64, Option<f64>, Coupling)> = inner
        .into_iter()
        .flatten()
        .map(|(px, v, g, c)| (px, v, Some(g), c))
        .collect();
    let witnesses: Vec<Coupling> = points.iter().map(|p| p.3.clone()).collect();
    let (best, grid) = grid_max(points);
    Ok(BoundReport {
        value_bits: grid[best].value_bits,
        mode: BoundMode::Prior,
        witness: Some(witnesses[best].clone()),
        witness_px: Some(grid[best].px.clone()),
        certified: true,
        maximality: None,
        universal: None,
        caveats: vec![format!(
            "outer maximum restricted to an input grid of step {}",
            px_grid_step
        )],
        grid,
    })
}
