//! Monte Carlo decoding laboratory: constant-composition codebooks, the
//! additive q-decoder, maximal error and type-conflict estimates, plus exact
//! enumeration counterparts for short block lengths.
//!
//! Every trial draws from its own ChaCha stream keyed by (seed, message,
//! trial), so serial and parallel runs agree bit for bit.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_check, Error, Result};
use crate::prob::{Channel, Coupling, Distribution, Metric};
use crate::types::{type_class_size, JointType, TypeVector};

/// Largest output space the exact enumerators will walk.
pub const ENUMERATION_CAP: u64 = 1 << 24;

/// Relative tolerance under which two decoding scores count as equal.
const TIE_REL: f64 = 1e-12;

const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codewords: Vec<Vec<usize>>,
    pub composition: TypeVector,
    pub seed: u64,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn block_length(&self) -> usize {
        self.composition.n() as usize
    }

    pub fn inputs(&self) -> usize {
        self.composition.alphabet()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieMode {
    /// A competitor scoring at least as high as the sent codeword is an error.
    #[default]
    Error,
    /// Ties are broken uniformly at random.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictMode {
    /// Output drawn uniformly from the conditional type class of the sent
    /// codeword; counts are indexed `[x][yhat]`.
    FixedType(JointType),
    /// Output drawn through the auxiliary channel.
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub per_message: Vec<f64>,
    pub errors: Vec<u64>,
    pub max_estimate: f64,
    pub max_message: usize,
    /// Wilson 95% interval for the worst message.
    pub interval: (f64, f64),
    pub trials: u64,
    pub seed: u64,
    pub ties: u64,
    pub mode: String,
}

pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (
        (center - half).max(0.0).min(p),
        (center + half).min(1.0).max(p),
    )
}

fn report(errors: Vec<u64>, ties: u64, trials: u64, seed: u64, mode: String) -> SimulationReport {
    let per_message: Vec<f64> = errors.iter().map(|&e| e as f64 / trials as f64).collect();
    let mut max_message = 0;
    for (m, &e) in errors.iter().enumerate() {
        if e > errors[max_message] {
            max_message = m;
        }
    }
    SimulationReport {
        max_estimate: per_message[max_message],
        interval: wilson_interval(errors[max_message], trials),
        per_message,
        errors,
        max_message,
        trials,
        seed,
        ties,
        mode,
    }
}

fn trial_rng(seed: u64, message: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((message as u64) << 32) | trial);
    rng
}

fn check_trials(trials: u64, messages: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Precondition(
            "at least one trial per message is required".into(),
        ));
    }
    if trials > u32::MAX as u64 || messages > u32::MAX as usize {
        return Err(Error::TooLarge(
            "trial or message index exceeds 32 bits".into(),
        ));
    }
    Ok(())
}

/// Rearranges `seq` into the next lexicographic permutation; false at the last one.
fn next_permutation(seq: &mut [usize]) -> bool {
    let Some(i) = (1..seq.len()).rev().find(|&i| seq[i - 1] < seq[i]) else {
        return false;
    };
    let j = (i..seq.len()).rev().find(|&j| seq[j] > seq[i - 1]).unwrap();
    seq.swap(i - 1, j);
    seq[i..].reverse();
    true
}

/// `m` distinct codewords drawn uniformly without replacement from the type
/// class of `composition`.
pub fn sample_codebook(
    n: usize,
    m: usize,
    composition: &TypeVector,
    seed: u64,
) -> Result<Codebook> {
    dim_check(composition.n() as usize == n, || {
        format!("composition has length {} but n = {}", composition.n(), n)
    })?;
    if m == 0 {
        return Err(Error::Precondition(
            "a codebook needs at least one codeword".into(),
        ));
    }
    let class = type_class_size(composition);
    if let Some(size) = class {
        if m as u128 > size {
            return Err(Error::TooLarge(format!(
                "{} codewords requested from a type class of size {}",
                m, size
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = composition.canonical_sequence();
    let codewords = match class {
        // Dense requests: list the class and pick a random subset.
        Some(size) if size <= 1 << 20 && 2 * m as u128 > size => {
            let mut all = Vec::with_capacity(size as usize);
            let mut seq = base;
            loop {
                all.push(seq.clone());
                if !next_permutation(&mut seq) {
                    break;
                }
            }
            rand::seq::index::sample(&mut rng, all.len(), m)
                .into_iter()
                .map(|i| all[i].clone())
                .collect()
        }
        Some(size) if 2 * m as u128 > size => {
            return Err(Error::TooLarge(format!(
                "{} codewords is too dense a draw from a class of size {}",
                m, size
            )));
        }
        _ => {
            let mut seen = HashSet::with_capacity(m);
            let mut out = Vec::with_capacity(m);
            while out.len() < m {
                let mut s = base.clone();
                s.shuffle(&mut rng);
                if seen.insert(s.clone()) {
                    out.push(s);
                }
            }
            out
        }
    };
    Ok(Codebook {
        codewords,
        composition: composition.clone(),
        seed,
    })
}

fn joint_counts(x: &[usize], y: &[usize], outputs: usize, counts: &mut [u32]) {
    counts.iter_mut().for_each(|c| *c = 0);
    for (&a, &b) in x.iter().zip(y) {
        counts[a * outputs + b] += 1;
    }
}

/// Score of a joint type, summed in a fixed order so equal types give equal
/// floating-point values; also returns the magnitude used for tie tests.
fn type_score(counts: &[u32], q: &Metric) -> (f64, f64) {
    let k = q.outputs();
    let (mut s, mut mag) = (0.0, 0.0);
    for (idx, &c) in counts.iter().enumerate() {
        if c > 0 {
            let v = q.get(idx / k, idx % k);
            s += c as f64 * v;
            mag += c as f64 * v.abs();
        }
    }
    (s, mag)
}

fn scores(cb: &Codebook, y: &[usize], q: &Metric) -> Vec<(f64, f64)> {
    let k = q.outputs();
    let mut counts = vec![0u32; cb.inputs() * k];
    cb.codewords
        .iter()
        .map(|x| {
            joint_counts(x, y, k, &mut counts);
            type_score(&counts, q)
        })
        .collect()
}

fn ties(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= TIE_REL * (a.1 + b.1)
}

fn check_decoder_shapes(cb: &Codebook, q: &Metric) -> Result<()> {
    dim_check(q.inputs() == cb.inputs(), || {
        format!(
            "metric has {} input letters, codebook {}",
            q.inputs(),
            cb.inputs()
        )
    })
}

/// q-decoder: index of the first codeword with the largest score and whether
/// another codeword attains it too.
pub fn q_decode(cb: &Codebook, y: &[usize], q: &Metric) -> Result<(usize, bool)> {
    check_decoder_shapes(cb, q)?;
    dim_check(y.len() == cb.block_length(), || {
        format!(
            "received sequence has length {}, codewords {}",
            y.len(),
            cb.block_length()
        )
    })?;
    dim_check(y.iter().all(|&b| b < q.outputs()), || {
        "received letter outside the metric's output alphabet".into()
    })?;
    let s = scores(cb, y, q);
    let mut best = 0;
    for (m, v) in s.iter().enumerate() {
        if v.0 > s[best].0 && !ties(*v, s[best]) {
            best = m;
        }
    }
    let tie = s
        .iter()
        .enumerate()
        .any(|(m, v)| m != best && ties(*v, s[best]));
    Ok((best, tie))
}

/// Outcome of decoding with message `m` sent: (error, decided by a tie).
fn decode_outcome(s: &[(f64, f64)], m: usize, mode: TieMode, rng: &mut impl Rng) -> (bool, bool) {
    let mine = s[m];
    let mut beaten = false;
    let mut tied = 0usize;
    for (o, &v) in s.iter().enumerate() {
        if o == m {
            continue;
        }
        if ties(v, mine) {
            tied += 1;
        } else if v.0 > mine.0 {
            beaten = true;
        }
    }
    if beaten {
        return (true, false);
    }
    if tied == 0 {
        return (false, false);
    }
    match mode {
        TieMode::Error => (true, true),
        TieMode::Random => (rng.gen_range(0..=tied) != 0, true),
    }
}

fn row_samplers(ch: &Channel) -> Vec<WeightedIndex<f64>> {
    (0..ch.inputs())
        .map(|j| WeightedIndex::new(ch.row(j).to_vec()).expect("channel rows are distributions"))
        .collect()
}

fn check_channel(cb: &Codebook, ch: &Channel, what: &str) -> Result<()> {
    dim_check(ch.inputs() == cb.inputs(), || {
        format!(
            "{} has {} input letters, codebook {}",
            what,
            ch.inputs(),
            cb.inputs()
        )
    })
}

/// Maximal error probability of the q-decoder over `w`, estimated with
/// `trials` channel draws per message.
pub fn estimate_pe_max(
    cb: &Codebook,
    w: &Channel,
    q: &Metric,
    trials: u64,
    seed: u64,
    mode: TieMode,
) -> Result<SimulationReport> {
    check_decoder_shapes(cb, q)?;
    check_channel(cb, w, "channel")?;
    dim_check(w.outputs() == q.outputs(), || {
        "channel and metric output alphabets differ".into()
    })?;
    check_trials(trials, cb.len())?;
    let samplers = row_samplers(w);
    let n = cb.block_length();
    let per: Vec<(u64, u64)> = (0..cb.len())
        .map(|m| {
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(seed, m, t);
                    let y: Vec<usize> = cb.codewords[m]
                        .iter()
                        .map(|&x| samplers[x].sample(&mut rng))
                        .collect();
                    debug_assert_eq!(y.len(), n);
                    let s = scores(cb, &y, q);
                    let (err, tie) = decode_outcome(&s, m, mode, &mut rng);
                    (err as u64, tie as u64)
                })
                .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
        })
        .collect();
    let tie_total = per.iter().map(|p| p.1).sum();
    let mode = match mode {
        TieMode::Error => "ties-as-errors",
        TieMode::Random => "random-tie",
    };
    Ok(report(
        per.into_iter().map(|p| p.0).collect(),
        tie_total,
        trials,
        seed,
        mode.into(),
    ))
}

/// Calls `f(y, prob)` for every output sequence of length `n` over `outputs`
/// letters with probability `prob(y)` under the given row assignment.
fn for_each_output(x: &[usize], ch: &Channel, mut f: impl FnMut(&[usize], f64)) -> Result<()> {
    let n = x.len();
    let k = ch.outputs();
    let total = (k as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= ENUMERATION_CAP);
    if total.is_none() {
        return Err(Error::TooLarge(format!(
            "{}^{} outputs exceed the enumeration cap",
            k, n
        )));
    }
    let mut y = vec![0usize; n];
    loop {
        let p: f64 = x.iter().zip(&y).map(|(&a, &b)| ch.get(a, b)).product();
        if p > 0.0 {
            f(&y, p);
        }
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            y[i] += 1;
            if y[i] < k {
                break;
            }
            y[i] = 0;
        }
    }
}

/// Exact per-message error probabilities of the q-decoder by enumerating
/// every channel output.
pub fn exact_pe(cb: &Codebook, w: &Channel, q: &Metric, mode: TieMode) -> Result<Vec<f64>> {
    check_decoder_shapes(cb, q)?;
    check_channel(cb, w, "channel")?;
    dim_check(w.outputs() == q.outputs(), || {
        "channel and metric output alphabets differ".into()
    })?;
    cb.codewords
        .iter()
        .enumerate()
        .map(|(m, x)| {
            let mut err = 0.0;
            for_each_output(x, w, |y, p| {
                let s = scores(cb, y, q);
                let mine = s[m];
                let beaten = s
                    .iter()
                    .enumerate()
                    .any(|(o, &v)| o != m && v.0 > mine.0 && !ties(v, mine));
                let tied = s
                    .iter()
                    .enumerate()
                    .filter(|&(o, &v)| o != m && ties(v, mine))
                    .count();
                let loss = if beaten {
                    1.0
                } else {
                    match mode {
                        TieMode::Error => (tied > 0) as u8 as f64,
                        TieMode::Random => tied as f64 / (tied + 1) as f64,
                    }
                };
                err += p * loss;
            })?;
            Ok(err)
        })
        .collect()
}

fn counts_of(x: &[usize], y: &[usize], inputs: usize, outputs: usize) -> Vec<u32> {
    let mut c = vec![0u32; inputs * outputs];
    joint_counts(x, y, outputs, &mut c);
    c
}

fn check_fixed_type(cb: &Codebook, t: &JointType, outputs: usize) -> Result<()> {
    dim_check(t.dims() == [cb.inputs(), outputs], || {
        format!(
            "conditional type has shape {:?}, expected [{}, {}]",
            t.dims(),
            cb.inputs(),
            outputs
        )
    })?;
    let rows: Vec<u32> = t.counts().chunks(outputs).map(|r| r.iter().sum()).collect();
    if rows != cb.composition.counts() {
        return Err(Error::Precondition(format!(
            "conditional type row sums {:?} do not match the composition {:?}",
            rows,
            cb.composition.counts()
        )));
    }
    Ok(())
}

/// Uniform draw from the conditional type class `T_x(t)`.
fn sample_fixed_type(x: &[usize], t: &JointType, outputs: usize, rng: &mut impl Rng) -> Vec<usize> {
    let inputs = t.dims()[0];
    let mut pools: Vec<Vec<usize>> = (0..inputs)
        .map(|j| {
            (0..outputs)
                .flat_map(|k| std::iter::repeat(k).take(t.counts()[j * outputs + k] as usize))
                .collect()
        })
        .collect();
    for p in pools.iter_mut() {
        p.shuffle(rng);
    }
    let mut next = vec![0usize; inputs];
    x.iter()
        .map(|&j| {
            next[j] += 1;
            pools[j][next[j] - 1]
        })
        .collect()
}

fn draw_output(
    x: &[usize],
    mode: &ConflictMode,
    samplers: &[WeightedIndex<f64>],
    outputs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match mode {
        ConflictMode::FixedType(t) => sample_fixed_type(x, t, outputs, rng),
        ConflictMode::Channel => x.iter().map(|&a| samplers[a].sample(rng)).collect(),
    }
}

/// Indices of other codewords sharing the conditional type of `yhat` given `x_m`.
fn conflicts(cb: &Codebook, yhat: &[usize], m: usize, outputs: usize) -> Vec<usize> {
    let j = cb.inputs();
    let mine = counts_of(&cb.codewords[m], yhat, j, outputs);
    (0..cb.len())
        .filter(|&o| o != m && counts_of(&cb.codewords[o], yhat, j, outputs) == mine)
        .collect()
}

fn check_conflict_inputs(cb: &Codebook, v: &Channel, mode: &ConflictMode) -> Result<()> {
    check_channel(cb, v, "auxiliary channel")?;
    if let ConflictMode::FixedType(t) = mode {
        check_fixed_type(cb, t, v.outputs())?;
    }
    Ok(())
}

/// Per-message probability that some other codeword shares the realized
/// conditional type of the auxiliary output.
pub fn estimate_type_conflict(
    cb: &Codebook,
    v: &Channel,
    mode: &ConflictMode,
    trials: u64,
    seed: u64,
) -> Result<SimulationReport> {
    check_conflict_inputs(cb, v, mode)?;
    check_trials(trials, cb.len())?;
    let samplers = row_samplers(v);
    let k = v.outputs();
    let errors: Vec<u64> = (0..cb.len())
        .map(|m| {
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(seed, m, t);
                    let yhat = draw_output(&cb.codewords[m], mode, &samplers, k, &mut rng);
                    !conflicts(cb, &yhat, m, k).is_empty() as u64
                })
                .sum()
        })
        .collect();
    let name = match mode {
        ConflictMode::FixedType(_) => "type-conflict/fixed-type",
        ConflictMode::Channel => "type-conflict/channel",
    };
    Ok(report(errors, 0, trials, seed, name.into()))
}

/// Calls `f(yhat, prob)` over the output law of `mode` given codeword `x`.
fn for_each_conflict_output(
    x: &[usize],
    v: &Channel,
    mode: &ConflictMode,
    mut f: impl FnMut(&[usize], f64),
) -> Result<()> {
    match mode {
        ConflictMode::Channel => for_each_output(x, v, f),
        ConflictMode::FixedType(t) => {
            let k = v.outputs();
            let mut members = Vec::new();
            let flat = Channel::constant(v.inputs(), &Distribution::uniform(k));
            for_each_output(x, &flat, |y, _| {
                if counts_of(x, y, t.dims()[0], k) == t.counts() {
                    members.push(y.to_vec());
                }
            })?;
            let p = 1.0 / members.len() as f64;
            for y in &members {
                f(y, p);
            }
            Ok(())
        }
    }
}

/// Exact per-message type-conflict probabilities by enumeration.
pub fn exact_type_conflict(cb: &Codebook, v: &Channel, mode: &ConflictMode) -> Result<Vec<f64>> {
    check_conflict_inputs(cb, v, mode)?;
    let k = v.outputs();
    (0..cb.len())
        .map(|m| {
            let mut total = 0.0;
            for_each_conflict_output(&cb.codewords[m], v, mode, |y, p| {
                if !conflicts(cb, y, m, k).is_empty() {
                    total += p;
                }
            })?;
            Ok(total)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictStatus {
    Found,
    NoneFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictTypeReport {
    pub status: ConflictStatus,
    /// Joint type over `(yhat, x1, x2)`.
    pub joint_type: Option<JointType>,
    /// Share of conflict events (or conflict mass) with this joint type.
    pub fraction: f64,
    pub observed_types: usize,
    /// `1 / (2 (n+1)^(J^2 K - 1))`, for comparison only.
    pub floor: f64,
}

fn triple_type(
    yhat: &[usize],
    x1: &[usize],
    x2: &[usize],
    outputs: usize,
    inputs: usize,
) -> Vec<u32> {
    let mut c = vec![0u32; outputs * inputs * inputs];
    for i in 0..yhat.len() {
        c[(yhat[i] * inputs + x1[i]) * inputs + x2[i]] += 1;
    }
    c
}

fn conflict_floor(n: usize, inputs: usize, outputs: usize) -> f64 {
    let e = (inputs * inputs * outputs) as f64 - 1.0;
    0.5 * (-(e * ((n + 1) as f64).ln())).exp()
}

fn dominant(
    tally: BTreeMap<Vec<u32>, f64>,
    cb: &Codebook,
    outputs: usize,
) -> Result<ConflictTypeReport> {
    let j = cb.inputs();
    let floor = conflict_floor(cb.block_length(), j, outputs);
    let total: f64 = tally.values().sum();
    let mut best: Option<(&Vec<u32>, f64)> = None;
    for (key, &w) in &tally {
        if best.map_or(true, |(_, b)| w > b) {
            best = Some((key, w));
        }
    }
    match best {
        Some((key, w)) if total > 0.0 => Ok(ConflictTypeReport {
            status: ConflictStatus::Found,
            joint_type: Some(JointType::new(vec![outputs, j, j], key.clone())?),
            fraction: w / total,
            observed_types: tally.len(),
            floor,
        }),
        _ => Ok(ConflictTypeReport {
            status: ConflictStatus::NoneFound,
            joint_type: None,
            fraction: 0.0,
            observed_types: 0,
            floor,
        }),
    }
}

/// Most frequent joint type of `(yhat, x_sent, x_conflicting)` among
/// observed conflict pairs, over all messages.
pub fn dominant_conflict_type(
    cb: &Codebook,
    v: &Channel,
    mode: &ConflictMode,
    trials: u64,
    seed: u64,
) -> Result<ConflictTypeReport> {
    check_conflict_inputs(cb, v, mode)?;
    check_trials(trials, cb.len())?;
    let samplers = row_samplers(v);
    let k = v.outputs();
    let j = cb.inputs();
    let tally = (0..cb.len())
        .flat_map(|m| (0..trials).map(move |t| (m, t)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m, t)| {
            let mut rng = trial_rng(seed, m, t);
            let yhat = draw_output(&cb.codewords[m], mode, &samplers, k, &mut rng);
            let mut local: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
            for o in conflicts(cb, &yhat, m, k) {
                *local
                    .entry(triple_type(&yhat, &cb.codewords[m], &cb.codewords[o], k, j))
                    .or_default() += 1;
            }
            local
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (key, c) in b {
                *a.entry(key).or_default() += c;
            }
            a
        });
    dominant(
        tally.into_iter().map(|(key, c)| (key, c as f64)).collect(),
        cb,
        k,
    )
}

/// Enumeration counterpart of [`dominant_conflict_type`], with messages
/// weighted equally and conflict pairs weighted by output probability.
pub fn exact_dominant_conflict_type(
    cb: &Codebook,
    v: &Channel,
    mode: &ConflictMode,
) -> Result<ConflictTypeReport> {
    check_conflict_inputs(cb, v, mode)?;
    let k = v.outputs();
    let j = cb.inputs();
    let mut tally: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for m in 0..cb.len() {
        for_each_conflict_output(&cb.codewords[m], v, mode, |y, p| {
            for o in conflicts(cb, y, m, k) {
                *tally
                    .entry(triple_type(y, &cb.codewords[m], &cb.codewords[o], k, j))
                    .or_default() += p;
            }
        })?;
    }
    dominant(tally, cb, k)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// For a competitor drawn uniformly from the type class, the probabilities
/// that it scores strictly above and exactly at `mine` against `y`.
fn competitor_tail(
    composition: &[u32],
    y_counts: &[u32],
    q: &Metric,
    mine: (f64, f64),
    cap: u64,
) -> Result<(f64, f64)> {
    let (j, k) = (composition.len(), y_counts.len());
    let n: u32 = composition.iter().sum();
    let ln_fact: Vec<f64> = (0..=n).map(|i| ln_gamma(i as f64 + 1.0)).collect();
    let lf = |c: u32| ln_fact[c as usize];
    let log_class = lf(n) - composition.iter().map(|&c| lf(c)).sum::<f64>();
    let mut above = Vec::new();
    let mut equal = Vec::new();
    let mut counts = vec![0u32; j * k];
    let mut remaining = composition.to_vec();
    let mut visited = 0u64;

    // Fill column by column: distribute y_counts[col] over the input letters.
    #[allow(clippy::too_many_arguments)]
    fn fill(
        col: usize,
        row: usize,
        left: u32,
        counts: &mut [u32],
        remaining: &mut [u32],
        y_counts: &[u32],
        visit: &mut dyn FnMut(&[u32]) -> Result<()>,
    ) -> Result<()> {
        let (j, k) = (remaining.len(), y_counts.len());
        if col == k {
            return visit(counts);
        }
        // Row and column totals agree, so the last column is forced.
        if col == k - 1 {
            for r in 0..j {
                counts[r * k + col] = remaining[r];
            }
            let res = visit(counts);
            for r in 0..j {
                counts[r * k + col] = 0;
            }
            return res;
        }
        if row == j - 1 {
            if left > remaining[row] {
                return Ok(());
            }
            counts[row * k + col] = left;
            remaining[row] -= left;
            let next_left = if col + 1 < k { y_counts[col + 1] } else { 0 };
            let r = fill(col + 1, 0, next_left, counts, remaining, y_counts, visit);
            remaining[row] += left;
            counts[row * k + col] = 0;
            return r;
        }
        for c in 0..=left.min(remaining[row]) {
            counts[row * k + col] = c;
            remaining[row] -= c;
            fill(col, row + 1, left - c, counts, remaining, y_counts, visit)?;
            remaining[row] += c;
        }
        counts[row * k + col] = 0;
        Ok(())
    }

    let log_cols: f64 = y_counts.iter().map(|&c| lf(c)).sum();
    let mut visit = |c: &[u32]| -> Result<()> {
        visited += 1;
        if visited > cap {
            return Err(Error::TooLarge(
                "too many joint types in the competitor enumeration".into(),
            ));
        }
        let s = type_score(c, q);
        let tied = ties(s, mine);
        if tied || s.0 > mine.0 {
            let log_count = log_cols - c.iter().map(|&v| lf(v)).sum::<f64>() - log_class;
            if tied {
                equal.push(log_count)
            } else {
                above.push(log_count)
            }
        }
        Ok(())
    };
    let first = y_counts.first().copied().unwrap_or(0);
    fill(
        0,
        0,
        first,
        &mut counts,
        &mut remaining,
        y_counts,
        &mut visit,
    )?;
    Ok((
        log_sum_exp(&above).exp().min(1.0),
        log_sum_exp(&equal).exp().min(1.0),
    ))
}

/// `1 - (1 - p)^e` for possibly astronomically large `e`.
fn at_least_one(p: f64, e: f64) -> f64 {
    if p <= 0.0 || e <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    -(e * (-p).ln_1p()).exp_m1()
}

/// Random-coding ensemble: each trial draws the sent codeword and the
/// channel output, then averages exactly over `2^log2_m - 1` independent
/// competitors drawn uniformly from the type class. A final uniform draw
/// turns the conditional error probability into a Bernoulli outcome, so the
/// report carries an ordinary binomial interval.
pub fn estimate_pe_ensemble(
    composition: &TypeVector,
    log2_m: f64,
    w: &Channel,
    q: &Metric,
    trials: u64,
    seed: u64,
    mode: TieMode,
) -> Result<SimulationReport> {
    dim_check(
        w.inputs() == composition.alphabet() && q.inputs() == composition.alphabet(),
        || "composition, channel and metric disagree on the input alphabet".into(),
    )?;
    dim_check(w.outputs() == q.outputs(), || {
        "channel and metric output alphabets differ".into()
    })?;
    if !(log2_m >= 0.0) {
        return Err(Error::Precondition(format!(
            "log2 of the codebook size must be nonnegative, got {}",
            log2_m
        )));
    }
    check_trials(trials, 1)?;
    let competitors = log2_m.exp2() - 1.0;
    let samplers = row_samplers(w);
    let base = composition.canonical_sequence();
    let (j, k) = (w.inputs(), w.outputs());
    let outcomes: Vec<(u64, u64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, u64)> {
            let mut rng = trial_rng(seed, 0, t);
            let mut x = base.clone();
            x.shuffle(&mut rng);
            let y: Vec<usize> = x.iter().map(|&a| samplers[a].sample(&mut rng)).collect();
            let mine = type_score(&counts_of(&x, &y, j, k), q);
            let mut y_counts = vec![0u32; k];
            for &b in &y {
                y_counts[b] += 1;
            }
            let (above, equal) =
                competitor_tail(composition.counts(), &y_counts, q, mine, 50_000_000)?;
            let strict = at_least_one(above, competitors);
            let err = match mode {
                TieMode::Error => at_least_one(above + equal, competitors),
                TieMode::Random => {
                    let r = if above < 1.0 {
                        (equal / (1.0 - above)).min(1.0)
                    } else {
                        0.0
                    };
                    // E[1 / (1 + T)] with T ~ Bin(competitors, r).
                    let m = competitors + 1.0;
                    let win = if r * m < 1e-12 {
                        1.0
                    } else {
                        at_least_one(r, m) / (m * r)
                    };
                    1.0 - (1.0 - strict) * win
                }
            };
            let u: f64 = rng.gen();
            Ok(((u < err) as u64, (u >= strict && u < err) as u64))
        })
        .collect::<Result<_>>()?;
    let errors = outcomes.iter().map(|o| o.0).sum();
    let ties = outcomes.iter().map(|o| o.1).sum();
    let name = match mode {
        TieMode::Error => "ensemble/ties-as-errors",
        TieMode::Random => "ensemble/random-tie",
    };
    Ok(report(vec![errors], ties, trials, seed, name.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    /// Positive when a usable constant was found; `None` in the degenerate case.
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma2: f64,
    /// `a - b` with `a = 2 min q` and `b = 2 max q`.
    pub a_minus_b: f64,
    pub degenerate: bool,
}

/// `sigma2 / (2 kappa^2 (a-b)^2) - |a-b| e^{-kappa^2/2} (1 + sqrt 2 + sqrt(2 pi)/kappa + 1/kappa^2)`.
pub fn gamma_formula(sigma2: f64, a_minus_b: f64, kappa: f64) -> f64 {
    let d = a_minus_b.abs();
    let tail =
        1.0 + 2f64.sqrt() + (2.0 * std::f64::consts::PI).sqrt() / kappa + 1.0 / (kappa * kappa);
    sigma2 / (2.0 * kappa * kappa * d * d) - d * (-kappa * kappa / 2.0).exp() * tail
}

/// Smallest conditional variance of `q(j2, Y) - q(j1, Y)` given
/// `(X1 = j1, Yhat = k)` that is not zero, over the letters the coupling uses.
pub fn min_positive_variance(c: &Coupling, px: &Distribution, q: &Metric) -> Result<Option<f64>> {
    dim_check(
        c.inputs() == px.len() && q.inputs() == c.inputs() && q.outputs() == c.outputs(),
        || "coupling, input distribution and metric shapes differ".into(),
    )?;
    let (j, k) = (c.inputs(), c.outputs());
    let mut best: Option<f64> = None;
    for j1 in px.support() {
        for yh in 0..k {
            let mass: f64 = (0..k).map(|y| c.get(j1, y, yh)).sum();
            if mass <= 0.0 {
                continue;
            }
            for j2 in 0..j {
                let (mut m1, mut m2) = (0.0, 0.0);
                for y in 0..k {
                    let p = c.get(j1, y, yh) / mass;
                    let d = q.get(j2, y) - q.get(j1, y);
                    m1 += p * d;
                    m2 += p * d * d;
                }
                let var = m2 - m1 * m1;
                let scale = m2.max(1e-300);
                if var > 1e-12 * scale {
                    best = Some(best.map_or(var, |b: f64| b.min(var)));
                }
            }
        }
    }
    Ok(best)
}

/// The constant that lower-bounds pairwise error probability on shortened
/// sequences; `kappa = None` picks the smallest multiple of 0.1 with a
/// positive value.
pub fn gamma_constant(
    c: &Coupling,
    px: &Distribution,
    q: &Metric,
    kappa: Option<f64>,
) -> Result<GammaReport> {
    let a_minus_b = 2.0 * q.min_value() - 2.0 * q.max_value();
    let Some(sigma2) = min_positive_variance(c, px, q)? else {
        return Ok(GammaReport {
            gamma: None,
            kappa,
            sigma2: 0.0,
            a_minus_b,
            degenerate: true,
        });
    };
    if let Some(kap) = kappa {
        if !(kap > 0.0) {
            return Err(Error::Precondition(format!(
                "kappa must be positive, got {}",
                kap
            )));
        }
        return Ok(GammaReport {
            gamma: Some(gamma_formula(sigma2, a_minus_b, kap)),
            kappa,
            sigma2,
            a_minus_b,
            degenerate: false,
        });
    }
    for i in 1..=1000 {
        let kap = i as f64 / 10.0;
        let g = gamma_formula(sigma2, a_minus_b, kap);
        if g > 0.0 {
            return Ok(GammaReport {
                gamma: Some(g),
                kappa: Some(kap),
                sigma2,
                a_minus_b,
                degenerate: false,
            });
        }
    }
    Err(Error::Infeasible(
        "no kappa up to 100 makes the constant positive".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_type_class_when_m_equals_its_size() {
        let t = TypeVector::new(vec![2, 2]).unwrap();
        let cb = sample_codebook(4, 6, &t, 3).unwrap();
        let mut got = cb.codewords.clone();
        got.sort();
        got.dedup();
        assert_eq!(got.len(), 6);
        assert!(sample_codebook(4, 7, &t, 3).is_err());
    }

    #[test]
    fn decoder_flags_ties() {
        let t = TypeVector::new(vec![1, 1]).unwrap();
        let cb = Codebook {
            codewords: vec![vec![0, 1], vec![1, 0]],
            composition: t,
            seed: 0,
        };
        let flat = Metric::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(q_decode(&cb, &[0, 1], &flat).unwrap(), (0, true));
        let matched = Metric::new(vec![vec![0.0, -5.0], vec![-5.0, 0.0]]).unwrap();
        assert_eq!(q_decode(&cb, &[1, 0], &matched).unwrap(), (1, false));
    }

    #[test]
    fn gamma_formula_value() {
        let g = gamma_formula(1.0, -2.0, 5.0);
        let tail = 1.0 + 2f64.sqrt() + (2.0 * std::f64::consts::PI).sqrt() / 5.0 + 1.0 / 25.0;
        assert!((g - (1.0 / 200.0 - 2.0 * (-12.5f64).exp() * tail)).abs() < 1e-15);
    }

    #[test]
    fn wilson_contains_estimate() {
        for (s, n) in [(0, 10), (10, 10), (3, 17), (500, 1000)] {
            let (lo, hi) = wilson_interval(s, n);
            let p = s as f64 / n as f64;
            assert!(lo <= p && p <= hi);
        }
    }
}
