//! Sphere-packing exponents for mismatched decoding.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::maximality::{
    adversary_value_with_tol, is_maximal_td, MaximalityCertificate, TdCertificate, TdOptions,
    TypeDependentMetric,
};
use crate::prob::{
    conditional_kl, marginal_y, marginal_yhat, mutual_information, Channel, Coupling, Distribution,
    Metric,
};
use crate::search::{Constraint, CouplingProblem, Objective, SearchOptions};
use crate::types::zeta_n;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspResult {
    pub value_bits: f64,
    /// `P_{Y' Yhat | X}`; absent when no certified point was found.
    pub witness: Option<Coupling>,
    pub certificate: Option<MaximalityCertificate>,
    pub certified: bool,
}

fn check_instance(px: &Distribution, w: &Channel, qi: usize, qo: usize) -> Result<()> {
    dim_check(px.len() == w.inputs(), || {
        format!(
            "input distribution has {} letters, channel has {} inputs",
            px.len(),
            w.inputs()
        )
    })?;
    dim_check(qi == w.inputs() && qo == w.outputs(), || {
        "metric shape differs from the channel".into()
    })
}

/// `min D(Y' || W | px)` subject to `I(px, Y') <= rate`: the exponent when
/// the auxiliary channel equals `Y'` (diagonal couplings are always maximal).
/// Returns the divergence and the minimizing channel, which always satisfies
/// the rate constraint.
pub fn diagonal_sphere_packing(
    px: &Distribution,
    w: &Channel,
    rate: f64,
) -> Result<(f64, Channel)> {
    dim_check(px.len() == w.inputs(), || {
        "input distribution and channel differ in size".into()
    })?;
    if rate < 0.0 {
        return Err(Error::Precondition(format!("rate {} is negative", rate)));
    }
    if mutual_information(px, w)? <= rate {
        return Ok((0.0, w.clone()));
    }
    let (j, k) = (w.inputs(), w.outputs());
    let support = px.support();
    // Zero-rate point: all rows equal the normalized weighted geometric mean.
    let zero_rate = || -> Result<Channel> {
        let mut g = vec![0.0; k];
        for (y, gy) in g.iter_mut().enumerate() {
            if support.iter().all(|&x| w.get(x, y) > 0.0) {
                *gy = support
                    .iter()
                    .map(|&x| px[x] * w.get(x, y).ln())
                    .sum::<f64>()
                    .exp();
            }
        }
        let t: f64 = g.iter().sum();
        if t <= 0.0 {
            return Err(Error::Infeasible(
                "channel rows have disjoint supports; no zero-rate channel has finite divergence"
                    .into(),
            ));
        }
        let row: Vec<f64> = g.iter().map(|v| v / t).collect();
        let rows = (0..j)
            .map(|x| {
                if px[x] > 0.0 {
                    row.clone()
                } else {
                    w.row(x).to_vec()
                }
            })
            .collect();
        Channel::new(rows)
    };
    // For a multiplier s: Y'(y|x) proportional to W^(1/(1+s)) Q^(s/(1+s)), Q = px Y'.
    let solve_s = |s: f64| -> Result<Channel> {
        let a = 1.0 / (1.0 + s);
        let mut yp = w.rows();
        for _ in 0..5000 {
            let mut qo = vec![0.0; k];
            for &x in &support {
                for y in 0..k {
                    qo[y] += px[x] * yp[x][y];
                }
            }
            let mut change: f64 = 0.0;
            for &x in &support {
                let mut row: Vec<f64> = (0..k)
                    .map(|y| {
                        if w.get(x, y) > 0.0 && qo[y] > 0.0 {
                            w.get(x, y).powf(a) * qo[y].powf(1.0 - a)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let t: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= t);
                for y in 0..k {
                    change = change.max((row[y] - yp[x][y]).abs());
                }
                yp[x] = row;
            }
            if change < 1e-13 {
                break;
            }
        }
        Channel::new(yp)
    };
    let info = |c: &Channel| mutual_information(px, c);
    let z = zero_rate()?;
    if rate <= 0.0 {
        return Ok((conditional_kl(&z, w, px)?, z));
    }
    // I(s) decreases in s; find the smallest s meeting the rate.
    let mut hi = 1.0;
    let mut best = loop {
        let c = solve_s(hi)?;
        if info(&c)? <= rate {
            break c;
        }
        hi *= 4.0;
        if hi > 1e8 {
            break z.clone();
        }
    };
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = solve_s(mid)?;
        if info(&c)? <= rate {
            hi = mid;
            best = c;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-10 * (1.0 + hi) {
            break;
        }
    }
    Ok((conditional_kl(&best, w, px)?, best))
}

fn esp_problem<'a>(
    px: &'a Distribution,
    w: &'a Channel,
    constraint: Constraint<'a>,
    rate: f64,
) -> CouplingProblem<'a> {
    let (j, k) = (w.inputs(), w.outputs());
    CouplingProblem {
        px,
        j,
        k,
        allowed: (0..j * k * k)
            .map(|i| w.get(i / (k * k), (i / k) % k) > 0.0)
            .collect(),
        y_marginal: None,
        yhat_marginal: None,
        objective: Objective::DivergenceFrom(w),
        constraint,
        rate: Some(rate),
        filler: Coupling::diagonal(w),
    }
}

fn esp_search(
    px: &Distribution,
    w: &Channel,
    constraint: Constraint,
    rate: f64,
    opts: &SearchOptions,
    warm: Option<&Coupling>,
) -> Result<(f64, Coupling)> {
    let (ds_value, ds) = diagonal_sphere_packing(px, w, rate)?;
    let anchor = Coupling::diagonal(&ds);
    let problem = esp_problem(px, w, constraint, rate);
    let mut starts = vec![anchor.as_slice().to_vec()];
    if let Some(c) = warm {
        starts.push(c.as_slice().to_vec());
    }
    let found = problem.search(starts, anchor.as_slice(), anchor.as_slice(), opts)?;
    Ok(match found {
        Some(f) if f.value < ds_value => (f.value, f.coupling),
        _ => (ds_value, anchor),
    })
}

/// Sphere-packing exponent `E_sp^q(px, R)`: the smallest certified
/// `D(Y' || W | px)` over maximal couplings `P_{Y' Yhat|X}` with
/// `I(px, P_{Yhat|X}) <= R`.
pub fn esp(
    px: &Distribution,
    w: &Channel,
    q: &Metric,
    rate: f64,
    opts: &SearchOptions,
) -> Result<EspResult> {
    esp_warm(px, w, q, rate, opts, None)
}

fn esp_warm(
    px: &Distribution,
    w: &Channel,
    q: &Metric,
    rate: f64,
    opts: &SearchOptions,
    warm: Option<&Coupling>,
) -> Result<EspResult> {
    check_instance(px, w, q.inputs(), q.outputs())?;
    if rate < 0.0 {
        return Err(Error::Precondition(format!("rate {} is negative", rate)));
    }
    if rate >= mutual_information(px, w)? {
        let c = Coupling::diagonal(w);
        let cert = adversary_value_with_tol(&c, px, q, opts.tol)?;
        return Ok(EspResult {
            value_bits: 0.0,
            witness: Some(c),
            certificate: Some(cert),
            certified: true,
        });
    }
    let (_, coupling) = esp_search(px, w, Constraint::Additive(q), rate, opts, warm)?;
    let cert = adversary_value_with_tol(&coupling, px, q, opts.tol)?;
    let value_bits = conditional_kl(&marginal_y(&coupling), w, px)?;
    let certified =
        cert.is_member() && mutual_information(px, &marginal_yhat(&coupling))? <= rate + 1e-12;
    Ok(EspResult {
        value_bits,
        witness: Some(coupling),
        certificate: Some(cert),
        certified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate_bits: f64,
    pub exponent_bits: f64,
    /// Index into `ExponentCurve::witnesses`.
    pub witness: usize,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteN {
    pub n: u64,
    /// Rate shift applied to every point (bits).
    pub zeta_bits: f64,
    /// The finite-length correction to the exponent has no explicit constant.
    pub delta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCurve {
    pub points: Vec<CurvePoint>,
    pub witnesses: Vec<Coupling>,
    pub px: Distribution,
    pub channel_id: String,
    pub metric_id: String,
    pub n_display: Option<FiniteN>,
}

/// Exponent on `steps` equally spaced rates in `[r_min, r_max]`. Rates are
/// solved in descending order, each warm-started from the previous witness;
/// a final pass reuses lower-rate witnesses at higher rates so the curve is
/// non-increasing.
pub fn esp_curve(
    px: &Distribution,
    w: &Channel,
    q: &Metric,
    r_min: f64,
    r_max: f64,
    steps: usize,
    opts: &SearchOptions,
) -> Result<ExponentCurve> {
    if !(r_min < r_max) || steps < 2 || r_min < 0.0 {
        return Err(Error::Precondition(format!(
            "need 0 <= r_min < r_max and steps >= 2 (got {}, {}, {})",
            r_min, r_max, steps
        )));
    }
    let rates: Vec<f64> = (0..steps)
        .map(|i| r_min + (r_max - r_min) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut results: Vec<Option<EspResult>> = vec![None; steps];
    let mut warm: Option<Coupling> = None;
    for i in (0..steps).rev() {
        let r = esp_warm(px, w, q, rates[i], opts, warm.as_ref())?;
        warm = r.witness.clone();
        results[i] = Some(r);
    }
    let mut witnesses = Vec::with_capacity(steps);
    let mut points = Vec::with_capacity(steps);
    for (i, r) in results.into_iter().enumerate() {
        let r = r.expect("every rate solved");
        witnesses.push(r.witness.expect("esp always returns a witness"));
        points.push(CurvePoint {
            rate_bits: rates[i],
            exponent_bits: r.value_bits,
            witness: i,
            certified: r.certified,
        });
    }
    for i in 1..steps {
        let prev = points[i - 1].clone();
        if prev.certified && (prev.exponent_bits < points[i].exponent_bits || !points[i].certified)
        {
            points[i].exponent_bits = prev.exponent_bits;
            points[i].witness = prev.witness;
            points[i].certified = true;
        }
    }
    Ok(ExponentCurve {
        points,
        witnesses,
        px: px.clone(),
        channel_id: String::new(),
        metric_id: String::new(),
        n_display: None,
    })
}

/// Shifts the rate axis by `zeta_n`: the length-`n` bound at rate `R` is the
/// raw exponent at `R + zeta_n` minus a correction of order `log n / n`
/// that is only reported symbolically. Exponent values are unchanged.
pub fn finite_n_annotation(
    curve: &ExponentCurve,
    n: u64,
    inputs: usize,
    outputs: usize,
) -> Result<ExponentCurve> {
    if n == 0 {
        return Err(Error::Precondition(
            "block length must be at least 1".into(),
        ));
    }
    let z = zeta_n(n, inputs, outputs);
    let mut out = curve.clone();
    for p in &mut out.points {
        p.rate_bits -= z;
    }
    out.n_display = Some(FiniteN {
        n,
        zeta_bits: z,
        delta: "O(log n / n)".into(),
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspTdResult {
    pub value_bits: f64,
    pub witness: Coupling,
    pub certificate: TdCertificate,
    /// The membership verdict of a type-dependent check is search-certified
    /// unless the certificate says otherwise.
    pub certified: bool,
}

/// Exponent for a type-dependent metric: the smallest `D(Y' || W | px)` over
/// couplings in the type-dependent maximal set with `I(px, P_{Yhat|X}) <= R`.
pub fn esp_td(
    px: &Distribution,
    w: &Channel,
    q_td: &dyn TypeDependentMetric,
    rate: f64,
    opts: &SearchOptions,
) -> Result<EspTdResult> {
    check_instance(px, w, w.inputs(), w.outputs())?;
    if rate < 0.0 {
        return Err(Error::Precondition(format!("rate {} is negative", rate)));
    }
    let td_opts = TdOptions {
        seed: opts.seed,
        ..TdOptions::default()
    };
    let coupling = if rate >= mutual_information(px, w)? {
        Coupling::diagonal(w)
    } else {
        esp_search(px, w, Constraint::TypeDependent(q_td), rate, opts, None)?.1
    };
    let certificate = is_maximal_td(&coupling, px, q_td, opts.tol, &td_opts)?;
    let value_bits = conditional_kl(&marginal_y(&coupling), w, px)?;
    let certified = certificate.verdict.is_member()
        && mutual_information(px, &marginal_yhat(&coupling))? <= rate + 1e-12;
    Ok(EspTdResult {
        value_bits,
        witness: coupling,
        certificate,
        certified,
    })
}
