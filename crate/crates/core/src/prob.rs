//! Finite-alphabet probability objects and information measures.
//!
//! Every quantity is reported in bits. `0 log 0` is taken as zero and a
//! divergence against a zero-probability letter is `+inf`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-12;

const LN2: f64 = std::f64::consts::LN_2;

fn check_probs(probs: &[f64], row: Option<usize>) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution {
            row,
            reason: "empty alphabet".into(),
        });
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution {
                row,
                reason: format!("entry {} = {} is outside [0, 1]", i, p),
            });
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution {
            row,
            reason: format!("entries sum to {} (must be 1 within {:e})", total, MASS_TOL),
        });
    }
    Ok(())
}

/// Clamps tiny negatives produced by solvers and rescales to unit mass.
fn normalize(mut probs: Vec<f64>) -> Vec<f64> {
    for p in probs.iter_mut() {
        if *p < 0.0 || !p.is_finite() {
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    } else if !probs.is_empty() {
        let u = 1.0 / probs.len() as f64;
        probs.iter_mut().for_each(|p| *p = u);
    }
    probs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct Distribution {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for Distribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        Distribution::new(raw.probs)
    }
}

impl From<Distribution> for RawDistribution {
    fn from(d: Distribution) -> Self {
        RawDistribution { probs: d.probs }
    }
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs, None)?;
        Ok(Distribution { probs })
    }

    /// Builds a distribution from nonnegative weights, rescaling to unit mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution {
                row: None,
                reason: "empty alphabet".into(),
            });
        }
        Ok(Distribution {
            probs: normalize(weights),
        })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over an empty alphabet");
        Distribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, letter: usize) -> Self {
        assert!(letter < n);
        let mut probs = vec![0.0; n];
        probs[letter] = 1.0;
        Distribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Letters with positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len())
            .filter(|&i| self.probs[i] > 0.0)
            .collect()
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Row-stochastic transition table `W(k|j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannel", into = "RawChannel")]
pub struct Channel {
    inputs: usize,
    outputs: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawChannel {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawChannel> for Channel {
    type Error = Error;
    fn try_from(raw: RawChannel) -> Result<Self> {
        Channel::new(raw.rows)
    }
}

impl From<Channel> for RawChannel {
    fn from(c: Channel) -> Self {
        RawChannel { rows: c.rows() }
    }
}

impl Channel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidDistribution {
                row: None,
                reason: "channel has no rows".into(),
            });
        }
        let outputs = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * outputs);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != outputs {
                return Err(Error::InvalidDistribution {
                    row: Some(j),
                    reason: format!("row has {} entries, expected {}", row.len(), outputs),
                });
            }
            check_probs(row, Some(j))?;
            data.extend_from_slice(row);
        }
        Ok(Channel {
            inputs: rows.len(),
            outputs,
            data,
        })
    }

    /// Builds a channel from nonnegative row weights, normalizing each row.
    pub fn from_weights(inputs: usize, outputs: usize, weights: Vec<f64>) -> Result<Self> {
        dim_check(
            weights.len() == inputs * outputs && inputs > 0 && outputs > 0,
            || {
                format!(
                    "{} weights for a {}x{} channel",
                    weights.len(),
                    inputs,
                    outputs
                )
            },
        )?;
        let mut data = Vec::with_capacity(weights.len());
        for row in weights.chunks(outputs) {
            data.extend(normalize(row.to_vec()));
        }
        Ok(Channel {
            inputs,
            outputs,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for j in 0..n {
            data[j * n + j] = 1.0;
        }
        Channel {
            inputs: n,
            outputs: n,
            data,
        }
    }

    /// Binary symmetric channel with crossover probability `p`.
    pub fn bsc(p: f64) -> Self {
        Channel::new(vec![vec![1.0 - p, p], vec![p, 1.0 - p]]).expect("crossover in [0,1]")
    }

    /// Every input letter maps to the same output distribution.
    pub fn constant(inputs: usize, row: &Distribution) -> Self {
        let mut data = Vec::with_capacity(inputs * row.len());
        for _ in 0..inputs {
            data.extend_from_slice(row.probs());
        }
        Channel {
            inputs,
            outputs: row.len(),
            data,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.outputs..(j + 1) * self.outputs]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.outputs + k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.outputs).map(|r| r.to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Output distribution `sum_j px(j) W(.|j)`.
    pub fn output_distribution(&self, px: &Distribution) -> Result<Vec<f64>> {
        dim_check(px.len() == self.inputs, || {
            format!(
                "input distribution has {} letters, channel has {} inputs",
                px.len(),
                self.inputs
            )
        })?;
        let mut out = vec![0.0; self.outputs];
        for j in 0..self.inputs {
            let w = px[j];
            if w > 0.0 {
                for (o, &v) in out.iter_mut().zip(self.row(j)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entry difference against another channel.
    pub fn max_abs_diff(&self, other: &Channel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Channel) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }
}

/// Joint conditional distribution `P_{Y Yhat | X}`: one `K x K` table per input
/// letter, indexed `(y, yhat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoupling", into = "RawCoupling")]
pub struct Coupling {
    inputs: usize,
    outputs: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCoupling {
    per_input: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawCoupling> for Coupling {
    type Error = Error;
    fn try_from(raw: RawCoupling) -> Result<Self> {
        Coupling::new(raw.per_input)
    }
}

impl From<Coupling> for RawCoupling {
    fn from(c: Coupling) -> Self {
        RawCoupling {
            per_input: c.tables(),
        }
    }
}

impl Coupling {
    pub fn new(per_input: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if per_input.is_empty() {
            return Err(Error::InvalidDistribution {
                row: None,
                reason: "coupling has no input letters".into(),
            });
        }
        let k = per_input[0].len();
        let mut data = Vec::with_capacity(per_input.len() * k * k);
        for (j, table) in per_input.iter().enumerate() {
            if table.len() != k || table.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidDistribution {
                    row: Some(j),
                    reason: format!("table for input {} is not {}x{}", j, k, k),
                });
            }
            let flat: Vec<f64> = table.iter().flatten().copied().collect();
            check_probs(&flat, Some(j))?;
            data.extend(flat);
        }
        Ok(Coupling {
            inputs: per_input.len(),
            outputs: k,
            data,
        })
    }

    /// Builds a coupling from a flat `J*K*K` weight vector, normalizing each table.
    pub fn from_flat(inputs: usize, outputs: usize, weights: Vec<f64>) -> Result<Self> {
        let kk = outputs * outputs;
        dim_check(
            weights.len() == inputs * kk && inputs > 0 && outputs > 0,
            || {
                format!(
                    "{} weights for a coupling with J={}, K={}",
                    weights.len(),
                    inputs,
                    outputs
                )
            },
        )?;
        let mut data = Vec::with_capacity(weights.len());
        for table in weights.chunks(kk) {
            data.extend(normalize(table.to_vec()));
        }
        Ok(Coupling {
            inputs,
            outputs,
            data,
        })
    }

    /// `Yhat = Y`: each table carries the channel row on its diagonal.
    pub fn diagonal(ch: &Channel) -> Self {
        let (j_n, k) = (ch.inputs(), ch.outputs());
        let mut data = vec![0.0; j_n * k * k];
        for j in 0..j_n {
            for y in 0..k {
                data[j * k * k + y * k + y] = ch.get(j, y);
            }
        }
        Coupling {
            inputs: j_n,
            outputs: k,
            data,
        }
    }

    /// Conditionally independent coupling `P_{Y|X} x P_{Yhat|X}`.
    pub fn product(py: &Channel, pyhat: &Channel) -> Result<Self> {
        dim_check(py.same_shape(pyhat) && py.inputs() > 0, || {
            "factor channels differ in shape".into()
        })?;
        let (j_n, k) = (py.inputs(), py.outputs());
        let mut data = vec![0.0; j_n * k * k];
        for j in 0..j_n {
            for y in 0..k {
                for yh in 0..k {
                    data[j * k * k + y * k + yh] = py.get(j, y) * pyhat.get(j, yh);
                }
            }
        }
        Ok(Coupling {
            inputs: j_n,
            outputs: k,
            data,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    #[inline]
    pub fn get(&self, j: usize, y: usize, yhat: usize) -> f64 {
        self.data[(j * self.outputs + y) * self.outputs + yhat]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn table(&self, j: usize) -> &[f64] {
        let kk = self.outputs * self.outputs;
        &self.data[j * kk..(j + 1) * kk]
    }

    pub fn tables(&self) -> Vec<Vec<Vec<f64>>> {
        let k = self.outputs;
        self.data
            .chunks(k * k)
            .map(|t| t.chunks(k).map(|r| r.to_vec()).collect())
            .collect()
    }

    /// `(1 - t) self + t other`.
    pub fn mix(&self, other: &Coupling, t: f64) -> Result<Coupling> {
        dim_check(
            self.inputs == other.inputs && self.outputs == other.outputs,
            || "couplings differ in shape".into(),
        )?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Ok(Coupling {
            inputs: self.inputs,
            outputs: self.outputs,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Coupling) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_raw_parts(inputs: usize, outputs: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), inputs * outputs * outputs);
        Coupling {
            inputs,
            outputs,
            data,
        }
    }
}

/// Y-marginal `P_{Y|X}` of a coupling.
pub fn marginal_y(c: &Coupling) -> Channel {
    let k = c.outputs();
    let mut data = vec![0.0; c.inputs() * k];
    for j in 0..c.inputs() {
        for y in 0..k {
            data[j * k + y] = (0..k).map(|yh| c.get(j, y, yh)).sum();
        }
    }
    Channel {
        inputs: c.inputs(),
        outputs: k,
        data,
    }
}

/// Yhat-marginal `P_{Yhat|X}` of a coupling.
pub fn marginal_yhat(c: &Coupling) -> Channel {
    let k = c.outputs();
    let mut data = vec![0.0; c.inputs() * k];
    for j in 0..c.inputs() {
        for yh in 0..k {
            data[j * k + yh] = (0..k).map(|y| c.get(j, y, yh)).sum();
        }
    }
    Channel {
        inputs: c.inputs(),
        outputs: k,
        data,
    }
}

/// Additive decoding metric `q(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMetric", into = "RawMetric")]
pub struct Metric {
    inputs: usize,
    outputs: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMetric {
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawMetric> for Metric {
    type Error = Error;
    fn try_from(raw: RawMetric) -> Result<Self> {
        Metric::new(raw.values)
    }
}

impl From<Metric> for RawMetric {
    fn from(m: Metric) -> Self {
        RawMetric {
            values: m.data.chunks(m.outputs).map(|r| r.to_vec()).collect(),
        }
    }
}

impl Metric {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || values[0].is_empty() {
            return Err(Error::DimensionMismatch("metric table is empty".into()));
        }
        let outputs = values[0].len();
        let mut data = Vec::with_capacity(values.len() * outputs);
        for (j, row) in values.iter().enumerate() {
            if row.len() != outputs {
                return Err(Error::DimensionMismatch(format!(
                    "metric row {} has {} entries, expected {}",
                    j,
                    row.len(),
                    outputs
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteMetric {
                        row: j,
                        col: k,
                        value: v,
                    });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Metric {
            inputs: values.len(),
            outputs,
            data,
        })
    }

    /// Elementwise natural log of a nonnegative table; zeros map to `floor`.
    pub fn log_of(table: Vec<Vec<f64>>, floor: f64) -> Result<Self> {
        let mut values = table;
        for (j, row) in values.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::Precondition(format!(
                        "log-of table entry ({}, {}) = {} must be a nonnegative number",
                        j, k, v
                    )));
                }
                *v = if *v > 0.0 { v.ln() } else { floor };
            }
        }
        Metric::new(values)
    }

    /// Matched (maximum-likelihood) metric `ln W(k|j)`; zero entries map to `floor`.
    pub fn matched(ch: &Channel, floor: f64) -> Self {
        Metric::log_of(ch.rows(), floor).expect("channel entries are nonnegative")
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.outputs + k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.outputs).map(|r| r.to_vec()).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[inline]
pub(crate) fn xlogx_over(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if q <= 0.0 {
        f64::INFINITY
    } else {
        p * (p / q).ln()
    }
}

/// Shannon entropy in bits.
pub fn entropy(d: &Distribution) -> f64 {
    -d.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
        / LN2
}

/// `I(P_X, P_{Y|X})` in bits.
pub fn mutual_information(px: &Distribution, ch: &Channel) -> Result<f64> {
    let py = ch.output_distribution(px)?;
    Ok(mi_with_output(px.probs(), ch, &py))
}

pub(crate) fn mi_with_output(px: &[f64], ch: &Channel, py: &[f64]) -> f64 {
    let mut total = 0.0;
    for (j, &w) in px.iter().enumerate() {
        if w > 0.0 {
            let row = ch.row(j);
            total += w * row
                .iter()
                .zip(py)
                .map(|(&p, &q)| xlogx_over(p, q))
                .sum::<f64>();
        }
    }
    (total / LN2).max(0.0)
}

/// `D(P_{Y'|X} || P_{Y|X} | P_X)` in bits; `+inf` when absolute continuity fails
/// on a letter with positive input mass.
pub fn conditional_kl(py_prime: &Channel, py: &Channel, px: &Distribution) -> Result<f64> {
    dim_check(py_prime.same_shape(py), || {
        "channels differ in shape".into()
    })?;
    dim_check(px.len() == py.inputs(), || {
        format!(
            "input distribution has {} letters, channels have {} inputs",
            px.len(),
            py.inputs()
        )
    })?;
    let mut total = 0.0;
    for j in 0..py.inputs() {
        if px[j] > 0.0 {
            let d: f64 = py_prime
                .row(j)
                .iter()
                .zip(py.row(j))
                .map(|(&a, &b)| xlogx_over(a, b))
                .sum();
            if d.is_infinite() {
                return Ok(f64::INFINITY);
            }
            total += px[j] * d;
        }
    }
    Ok((total / LN2).max(0.0))
}

/// Result of a Blahut-Arimoto run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    /// Mutual information attained by `input` (certified lower bound).
    pub bits: f64,
    /// `max_j D(W_j || output)`, a certified upper bound on capacity.
    pub upper_bits: f64,
    pub input: Distribution,
    pub iterations: usize,
}

const BA_MAX_ITERS: usize = 1_000_000;

/// Channel capacity by Blahut-Arimoto, stopped once the two-sided gap
/// `max_j D_j - sum_j p_j D_j` is at most `tol`.
pub fn blahut_arimoto_capacity(ch: &Channel, tol: f64) -> Capacity {
    let j_n = ch.inputs();
    let mut p = vec![1.0 / j_n as f64; j_n];
    let mut d = vec![0.0; j_n];
    let mut iterations = 0;
    loop {
        let px = Distribution { probs: p.clone() };
        let py = ch.output_distribution(&px).expect("shapes agree");
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = ch
                .row(j)
                .iter()
                .zip(&py)
                .map(|(&a, &b)| xlogx_over(a, b))
                .sum::<f64>();
        }
        let lower: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
        let upper = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if (upper - lower) / LN2 <= tol || iterations >= BA_MAX_ITERS {
            return Capacity {
                bits: (lower / LN2).max(0.0),
                upper_bits: (upper / LN2).max(0.0),
                input: px,
                iterations,
            };
        }
        let mut z = 0.0;
        for (pj, dj) in p.iter_mut().zip(&d) {
            *pj *= dj.exp();
            z += *pj;
        }
        p.iter_mut().for_each(|pj| *pj /= z);
        iterations += 1;
    }
}
