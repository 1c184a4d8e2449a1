//! Method-of-types toolkit: enumeration and exact counting of types,
//! conditional types, decompositions of distributions into nearby types,
//! conditioning-on-type moments and a few concentration formulas.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_check, Error, Result};
use crate::lp::{solve_lp, Cmp, LpBuilder, LpProblem, LpStatus, Sense};
use crate::prob::{Channel, Coupling};

/// Upper limit on the number of types `enumerate_types` will materialize.
pub const DEFAULT_TYPE_CAP: usize = 1 << 21;

/// Candidate matrices enumerated per conditioning letter before the
/// decomposition switches to the vertex-walk fallback.
const CANDIDATE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeVector {
    counts: Vec<u32>,
}

impl TypeVector {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Precondition("type over an empty alphabet".into()));
        }
        if counts.iter().map(|&c| c as u64).sum::<u64>() == 0 {
            return Err(Error::Precondition("type of length 0".into()));
        }
        Ok(TypeVector { counts })
    }

    pub fn of_sequence(seq: &[usize], alphabet: usize) -> Result<Self> {
        let mut counts = vec![0u32; alphabet];
        for &s in seq {
            dim_check(s < alphabet, || {
                format!("letter {} outside alphabet of size {}", s, alphabet)
            })?;
            counts[s] += 1;
        }
        TypeVector::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// The lexicographically smallest sequence of this type.
    pub fn canonical_sequence(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(i).take(c as usize))
            .collect()
    }
}

fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// Number of types of length `n` over `alphabet` letters, `C(n+J-1, J-1)`.
pub fn count_types(n: u32, alphabet: usize) -> Option<u128> {
    if alphabet == 0 {
        return Some(0);
    }
    binomial_u128(n as u64 + alphabet as u64 - 1, alphabet as u64 - 1)
}

pub fn enumerate_types(n: u32, alphabet: usize) -> Result<Vec<TypeVector>> {
    enumerate_types_capped(n, alphabet, DEFAULT_TYPE_CAP)
}

/// All compositions of `n` into `alphabet` parts, first coordinate descending.
pub fn enumerate_types_capped(n: u32, alphabet: usize, cap: usize) -> Result<Vec<TypeVector>> {
    if n == 0 || alphabet == 0 {
        return Err(Error::Precondition(
            "enumerate_types needs n >= 1 and alphabet >= 1".into(),
        ));
    }
    match count_types(n, alphabet) {
        Some(c) if c <= cap as u128 => {}
        _ => {
            return Err(Error::TooLarge(format!(
                "{} types of length {} over {} letters exceed the cap {}",
                count_types(n, alphabet).map_or("more than 2^128".to_string(), |c| c.to_string()),
                n,
                alphabet,
                cap
            )))
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; alphabet];
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<TypeVector>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(TypeVector {
                counts: cur.clone(),
            });
            return;
        }
        for c in (0..=left).rev() {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, out);
        }
    }
    rec(0, n, &mut cur, &mut out);
    Ok(out)
}

/// `n! / prod counts!`, or `None` when it does not fit in 128 bits.
pub fn type_class_size(t: &TypeVector) -> Option<u128> {
    let mut left = t.n() as u64;
    let mut acc: u128 = 1;
    for &c in t.counts() {
        acc = acc.checked_mul(binomial_u128(left, c as u64)?)?;
        left -= c as u64;
    }
    Some(acc)
}

/// `log2 |T(t)|` through log-gamma, valid far beyond the 128-bit range.
pub fn log2_type_class_size(t: &TypeVector) -> f64 {
    log2_multinomial(t.n() as u64, t.counts().iter().map(|&c| c as u64))
}

pub(crate) fn log2_multinomial(n: u64, parts: impl Iterator<Item = u64>) -> f64 {
    let mut v = ln_gamma(n as f64 + 1.0);
    for c in parts {
        v -= ln_gamma(c as f64 + 1.0);
    }
    (v / std::f64::consts::LN_2).max(0.0)
}

/// Integer counts over a product alphabet, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointType {
    dims: Vec<usize>,
    counts: Vec<u32>,
}

impl JointType {
    pub fn new(dims: Vec<usize>, counts: Vec<u32>) -> Result<Self> {
        dim_check(
            !dims.is_empty() && dims.iter().product::<usize>() == counts.len(),
            || {
                format!(
                    "{} counts for a product alphabet of shape {:?}",
                    counts.len(),
                    dims
                )
            },
        )?;
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Precondition("joint type of length 0".into()));
        }
        Ok(JointType { dims, counts })
    }

    /// Joint type of aligned sequences, one per coordinate.
    pub fn of_sequences(seqs: &[&[usize]], dims: &[usize]) -> Result<Self> {
        dim_check(seqs.len() == dims.len() && !seqs.is_empty(), || {
            "one sequence per coordinate required".into()
        })?;
        let n = seqs[0].len();
        dim_check(seqs.iter().all(|s| s.len() == n), || {
            "sequences differ in length".into()
        })?;
        let mut counts = vec![0u32; dims.iter().product()];
        for i in 0..n {
            let mut idx = 0;
            for (s, &d) in seqs.iter().zip(dims) {
                dim_check(s[i] < d, || {
                    format!("letter {} outside alphabet of size {}", s[i], d)
                })?;
                idx = idx * d + s[i];
            }
            counts[idx] += 1;
        }
        JointType::new(dims.to_vec(), counts)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn probs(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn get(&self, idx: &[usize]) -> u32 {
        self.counts[flat_index(&self.dims, idx)]
    }

    /// Marginal over the coordinates listed in `keep`, in that order.
    pub fn marginal(&self, keep: &[usize]) -> JointType {
        let dims: Vec<usize> = keep.iter().map(|&a| self.dims[a]).collect();
        let mut counts = vec![0u32; dims.iter().product()];
        let mut idx = vec![0usize; self.dims.len()];
        for &c in &self.counts {
            let mut flat = 0;
            for &a in keep {
                flat = flat * self.dims[a] + idx[a];
            }
            counts[flat] += c;
            advance(&mut idx, &self.dims);
        }
        JointType { dims, counts }
    }

    pub fn as_type_vector(&self) -> TypeVector {
        TypeVector {
            counts: self.counts.clone(),
        }
    }
}

fn flat_index(dims: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

fn advance(idx: &mut [usize], dims: &[usize]) {
    for a in (0..dims.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// Conditional type `p_{y|x}`; input letters absent from `x` get the uniform row.
pub fn conditional_type(
    y: &[usize],
    x: &[usize],
    inputs: usize,
    outputs: usize,
) -> Result<Channel> {
    dim_check(y.len() == x.len(), || {
        format!("sequence lengths differ ({} vs {})", y.len(), x.len())
    })?;
    let mut counts = vec![0.0; inputs * outputs];
    for (&yi, &xi) in y.iter().zip(x) {
        dim_check(xi < inputs && yi < outputs, || {
            format!("letter pair ({}, {}) out of range", xi, yi)
        })?;
        counts[xi * outputs + yi] += 1.0;
    }
    for row in counts.chunks_mut(outputs) {
        if row.iter().sum::<f64>() == 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Channel::from_weights(inputs, outputs, counts)
}

/// Joint conditional type `p_{y yhat|x}`; absent input letters get `1{k1=k2}/K`.
pub fn joint_conditional_type(
    y: &[usize],
    yhat: &[usize],
    x: &[usize],
    inputs: usize,
    outputs: usize,
) -> Result<Coupling> {
    dim_check(y.len() == x.len() && yhat.len() == x.len(), || {
        "sequence lengths differ".into()
    })?;
    let k = outputs;
    let mut counts = vec![0.0; inputs * k * k];
    for i in 0..x.len() {
        dim_check(x[i] < inputs && y[i] < k && yhat[i] < k, || {
            format!("letter triple at position {} out of range", i)
        })?;
        counts[(x[i] * k + y[i]) * k + yhat[i]] += 1.0;
    }
    for table in counts.chunks_mut(k * k) {
        if table.iter().sum::<f64>() == 0.0 {
            for d in 0..k {
                table[d * k + d] = 1.0;
            }
        }
    }
    Coupling::from_flat(inputs, k, counts)
}

/// Convex combination of joint types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDecomposition {
    pub components: Vec<(f64, JointType)>,
}

impl TypeDecomposition {
    pub fn recombine(&self) -> Vec<f64> {
        let len = self.components.first().map_or(0, |c| c.1.counts.len());
        let mut out = vec![0.0; len];
        for (w, t) in &self.components {
            let n = t.n() as f64;
            for (o, &c) in out.iter_mut().zip(&t.counts) {
                *o += w * c as f64 / n;
            }
        }
        out
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.0).sum()
    }

    pub fn recombination_error(&self, target: &[f64]) -> f64 {
        self.recombine()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest infinity distance between a component and the target.
    pub fn max_component_distance(&self, target: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|(_, t)| {
                t.probs()
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// `P*(z,s,u) = p_{z|s} p_{su}` built from two types sharing their S-marginal.
pub fn product_target(p_zs: &JointType, p_su: &JointType) -> Result<Vec<f64>> {
    let (zd, sd, ud) = check_pair(p_zs, p_su)?;
    let n = p_zs.n() as f64;
    let s_counts = p_zs.marginal(&[1]);
    let mut out = vec![0.0; zd * sd * ud];
    for z in 0..zd {
        for s in 0..sd {
            let ns = s_counts.counts[s] as f64;
            if ns == 0.0 {
                continue;
            }
            for u in 0..ud {
                out[(z * sd + s) * ud + u] =
                    p_zs.get(&[z, s]) as f64 * p_su.get(&[s, u]) as f64 / (ns * n);
            }
        }
    }
    Ok(out)
}

fn check_pair(p_zs: &JointType, p_su: &JointType) -> Result<(usize, usize, usize)> {
    dim_check(p_zs.dims.len() == 2 && p_su.dims.len() == 2, || {
        "expected two-coordinate joint types".into()
    })?;
    dim_check(p_zs.dims[1] == p_su.dims[0], || "S alphabets differ".into())?;
    if p_zs.n() != p_su.n() {
        return Err(Error::Precondition(format!(
            "types have different lengths ({} vs {})",
            p_zs.n(),
            p_su.n()
        )));
    }
    if p_zs.marginal(&[1]) != p_su.marginal(&[0]) {
        return Err(Error::Precondition(
            "the two types disagree on the S-marginal".into(),
        ));
    }
    Ok((p_zs.dims[0], p_zs.dims[1], p_su.dims[1]))
}

/// Writes `P* = p_{z|s} p_{su}` as a convex combination of n-types with the
/// same ZS and SU marginals, each within `1/n` of the target.
///
/// The marginal constraints decouple over `s`: each slice is a transportation
/// polytope with box bounds `[floor, ceil]`, whose vertices are integral. The
/// slices are decomposed separately and then glued along their cumulative weights.
pub fn decompose_into_types(p_zs: &JointType, p_su: &JointType) -> Result<TypeDecomposition> {
    decompose_with(p_zs, p_su, CANDIDATE_CAP)
}

/// Same as `decompose_into_types`, always using the vertex-walk method.
pub fn decompose_into_types_by_vertices(
    p_zs: &JointType,
    p_su: &JointType,
) -> Result<TypeDecomposition> {
    decompose_with(p_zs, p_su, 0)
}

fn decompose_with(p_zs: &JointType, p_su: &JointType, cap: usize) -> Result<TypeDecomposition> {
    let (zd, sd, ud) = check_pair(p_zs, p_su)?;
    let n = p_zs.n() as f64;
    let target = product_target(p_zs, p_su)?;
    let mut slices = Vec::with_capacity(sd);
    for s in 0..sd {
        let x: Vec<f64> = (0..zd * ud)
            .map(|i| n * target[((i / ud) * sd + s) * ud + i % ud])
            .collect();
        let rows: Vec<i64> = (0..zd).map(|z| p_zs.get(&[z, s]) as i64).collect();
        let cols: Vec<i64> = (0..ud).map(|u| p_su.get(&[s, u]) as i64).collect();
        let slice = TransportSlice::new(x, rows, cols);
        let parts = match slice.enumerate(cap) {
            Some(cands) => slice.weights_by_lp(&cands)?,
            None => slice.vertex_walk()?,
        };
        slices.push(parts);
    }
    let glued = glue(&slices);
    let components = glued
        .into_iter()
        .map(|(w, picks)| {
            let mut counts = vec![0u32; zd * sd * ud];
            for (s, &pick) in picks.iter().enumerate() {
                let m = &slices[s][pick].1;
                for z in 0..zd {
                    for u in 0..ud {
                        counts[(z * sd + s) * ud + u] = m[z * ud + u] as u32;
                    }
                }
            }
            (
                w,
                JointType {
                    dims: vec![zd, sd, ud],
                    counts,
                },
            )
        })
        .collect();
    Ok(TypeDecomposition { components })
}

/// Couples per-slice weight lists along their cumulative sums, giving
/// components `(weight, index chosen in each slice)`.
fn glue(slices: &[Vec<(f64, Vec<i64>)>]) -> Vec<(f64, Vec<usize>)> {
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for parts in slices {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let mut acc = 0.0;
        for p in &parts[..parts.len().saturating_sub(1)] {
            acc += p.0 / total;
            cuts.push(acc);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut out = Vec::new();
    for win in cuts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        if hi - lo <= 0.0 {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let picks = slices
            .iter()
            .map(|parts| {
                let total: f64 = parts.iter().map(|p| p.0).sum();
                let mut acc = 0.0;
                for (i, p) in parts.iter().enumerate() {
                    acc += p.0 / total;
                    if mid < acc {
                        return i;
                    }
                }
                parts.len() - 1
            })
            .collect();
        out.push((hi - lo, picks));
    }
    out
}

/// One conditioning letter: integer matrices with fixed margins inside `[floor(x), ceil(x)]`.
struct TransportSlice {
    x: Vec<f64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    rows: Vec<i64>,
    cols: Vec<i64>,
}

const INT_TOL: f64 = 1e-9;

impl TransportSlice {
    fn new(x: Vec<f64>, rows: Vec<i64>, cols: Vec<i64>) -> Self {
        let mut lo = Vec::with_capacity(x.len());
        let mut hi = Vec::with_capacity(x.len());
        for &v in &x {
            let r = v.round();
            if (v - r).abs() < INT_TOL {
                lo.push(r as i64);
                hi.push(r as i64);
            } else {
                lo.push(v.floor() as i64);
                hi.push(v.ceil() as i64);
            }
        }
        TransportSlice {
            x,
            lo,
            hi,
            rows,
            cols,
        }
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    /// All feasible integer matrices, or `None` if there are more than `cap`.
    fn enumerate(&self, cap: usize) -> Option<Vec<Vec<i64>>> {
        if cap == 0 {
            return None;
        }
        let (zr, uc) = self.shape();
        let mut row_need: Vec<i64> = (0..zr)
            .map(|z| self.rows[z] - (0..uc).map(|u| self.lo[z * uc + u]).sum::<i64>())
            .collect();
        let mut col_need: Vec<i64> = (0..uc)
            .map(|u| self.cols[u] - (0..zr).map(|z| self.lo[z * uc + u]).sum::<i64>())
            .collect();
        let free: Vec<usize> = (0..zr * uc).filter(|&i| self.hi[i] > self.lo[i]).collect();
        // free cells remaining in each row/column after position k
        let mut out = Vec::new();
        let mut cur = self.lo.clone();
        #[allow(clippy::too_many_arguments)]
        fn rec(
            k: usize,
            free: &[usize],
            uc: usize,
            row_need: &mut [i64],
            col_need: &mut [i64],
            cur: &mut Vec<i64>,
            out: &mut Vec<Vec<i64>>,
            cap: usize,
        ) -> bool {
            if out.len() > cap {
                return false;
            }
            if k == free.len() {
                if row_need.iter().all(|&r| r == 0) && col_need.iter().all(|&c| c == 0) {
                    out.push(cur.clone());
                }
                return true;
            }
            let cell = free[k];
            let (z, u) = (cell / uc, cell % uc);
            let rest_row = free[k + 1..].iter().filter(|&&c| c / uc == z).count() as i64;
            let rest_col = free[k + 1..].iter().filter(|&&c| c % uc == u).count() as i64;
            for bit in [1i64, 0] {
                let (nr, nc) = (row_need[z] - bit, col_need[u] - bit);
                if nr < 0 || nc < 0 || nr > rest_row || nc > rest_col {
                    continue;
                }
                row_need[z] = nr;
                col_need[u] = nc;
                cur[cell] += bit;
                let ok = rec(k + 1, free, uc, row_need, col_need, cur, out, cap);
                cur[cell] -= bit;
                row_need[z] += bit;
                col_need[u] += bit;
                if !ok {
                    return false;
                }
            }
            true
        }
        let ok = rec(
            0,
            &free,
            uc,
            &mut row_need,
            &mut col_need,
            &mut cur,
            &mut out,
            cap,
        );
        if ok && out.len() <= cap {
            Some(out)
        } else {
            None
        }
    }

    fn weights_by_lp(&self, cands: &[Vec<i64>]) -> Result<Vec<(f64, Vec<i64>)>> {
        if cands.is_empty() {
            return Err(Error::Infeasible(
                "no integer matrix fits the slice margins".into(),
            ));
        }
        if cands.len() == 1 {
            return Ok(vec![(1.0, cands[0].clone())]);
        }
        let cells = self.x.len();
        let mut rows = vec![vec![1.0; cands.len()]];
        let mut b = vec![1.0];
        for i in 0..cells {
            if self.hi[i] > self.lo[i] {
                rows.push(cands.iter().map(|c| c[i] as f64).collect());
                b.push(self.x[i]);
            }
        }
        let p = LpProblem::new(vec![0.0; cands.len()], rows, b)?;
        let sol = solve_lp(&p)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::Infeasible(
                "target is not in the hull of the enumerated types".into(),
            ));
        }
        Ok(sol
            .x
            .iter()
            .zip(cands)
            .filter(|(w, _)| **w > 1e-15)
            .map(|(w, c)| (*w, c.clone()))
            .collect())
    }

    /// Caratheodory walk: repeatedly pick an integral vertex of the smallest
    /// face containing the current point and push the point away from it.
    fn vertex_walk(&self) -> Result<Vec<(f64, Vec<i64>)>> {
        let (zr, uc) = self.shape();
        let cells = zr * uc;
        let mut x = self.x.clone();
        let mut mass = 1.0;
        let mut out: Vec<(f64, Vec<i64>)> = Vec::new();
        for _ in 0..=cells + 1 {
            let mut lp = LpBuilder::new(Sense::Minimize);
            let mut var = vec![usize::MAX; cells];
            for i in 0..cells {
                let tight = (x[i] - self.lo[i] as f64).abs() < INT_TOL
                    || (x[i] - self.hi[i] as f64).abs() < INT_TOL;
                if !tight {
                    var[i] = lp.add_var((i + 1) as f64);
                    lp.add_row(
                        vec![(var[i], 1.0)],
                        Cmp::Le,
                        (self.hi[i] - self.lo[i]) as f64,
                    );
                }
            }
            let fixed = |i: usize, x: &[f64]| -> f64 { x[i].round() };
            for z in 0..zr {
                let mut rhs = self.rows[z] as f64;
                let mut coeffs = Vec::new();
                for u in 0..uc {
                    let i = z * uc + u;
                    if var[i] == usize::MAX {
                        rhs -= fixed(i, &x);
                    } else {
                        coeffs.push((var[i], 1.0));
                        rhs -= self.lo[i] as f64;
                    }
                }
                lp.add_row(coeffs, Cmp::Eq, rhs);
            }
            for u in 0..uc {
                let mut rhs = self.cols[u] as f64;
                let mut coeffs = Vec::new();
                for z in 0..zr {
                    let i = z * uc + u;
                    if var[i] == usize::MAX {
                        rhs -= fixed(i, &x);
                    } else {
                        coeffs.push((var[i], 1.0));
                        rhs -= self.lo[i] as f64;
                    }
                }
                lp.add_row(coeffs, Cmp::Eq, rhs);
            }
            let sol = lp
                .solve()
                .map_err(|e| Error::Infeasible(format!("vertex walk failed: {}", e)))?;
            let v: Vec<i64> = (0..cells)
                .map(|i| {
                    if var[i] == usize::MAX {
                        fixed(i, &x) as i64
                    } else {
                        self.lo[i] + sol.x[var[i]].round() as i64
                    }
                })
                .collect();
            let dist = (0..cells)
                .map(|i| (x[i] - v[i] as f64).abs())
                .fold(0.0, f64::max);
            if dist < INT_TOL {
                out.push((mass, v));
                return Ok(merge_equal(out));
            }
            // largest t with x + t (x - v) inside the box
            let mut t = f64::INFINITY;
            for i in 0..cells {
                let d = x[i] - v[i] as f64;
                if d > INT_TOL {
                    t = t.min((self.hi[i] as f64 - x[i]) / d);
                } else if d < -INT_TOL {
                    t = t.min((self.lo[i] as f64 - x[i]) / d);
                }
            }
            let lam = t / (1.0 + t);
            out.push((mass * lam, v.clone()));
            mass *= 1.0 - lam;
            for i in 0..cells {
                x[i] += t * (x[i] - v[i] as f64);
            }
        }
        Err(Error::Infeasible("vertex walk did not terminate".into()))
    }
}

fn merge_equal(parts: Vec<(f64, Vec<i64>)>) -> Vec<(f64, Vec<i64>)> {
    let mut out: Vec<(f64, Vec<i64>)> = Vec::new();
    for (w, m) in parts {
        if let Some(e) = out.iter_mut().find(|e| e.1 == m) {
            e.0 += w;
        } else if w > 0.0 {
            out.push((w, m));
        }
    }
    out
}

/// Writes a joint distribution (flattened over `dims`) as a convex
/// combination of n-types within `1/n`, by systematic rounding: for an
/// offset `u` in `[0,1)` letter `i` rounds up iff some `k + u` falls in its
/// slice of the cumulative fractional parts.
pub fn quantize_joint_to_type(p: &[f64], dims: &[usize], n: u32) -> Result<TypeDecomposition> {
    dim_check(
        dims.iter().product::<usize>() == p.len() && !p.is_empty(),
        || format!("{} probabilities for shape {:?}", p.len(), dims),
    )?;
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let nf = n as f64;
    let mut lo = Vec::with_capacity(p.len());
    let mut frac = Vec::with_capacity(p.len());
    for &v in p {
        let x = (nf * v).max(0.0);
        let r = x.round();
        if (x - r).abs() < 1e-12 {
            lo.push(r as i64);
            frac.push(0.0);
        } else {
            lo.push(x.floor() as i64);
            frac.push(x - x.floor());
        }
    }
    let r = n as i64 - lo.iter().sum::<i64>();
    let fsum: f64 = frac.iter().sum();
    if (fsum - r as f64).abs() > 1e-6 || r < 0 {
        return Err(Error::InvalidDistribution {
            row: None,
            reason: format!("entries sum to {}", p.iter().sum::<f64>()),
        });
    }
    // rescale fractional parts so they sum to the integer r exactly
    if fsum > 0.0 {
        let s = r as f64 / fsum;
        frac.iter_mut().for_each(|f| *f *= s);
    }
    let mut cum = Vec::with_capacity(p.len() + 1);
    cum.push(0.0);
    for f in &frac {
        cum.push(cum.last().unwrap() + f);
    }
    let mut cuts: Vec<f64> = cum.iter().map(|c| c - c.floor()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut comps: Vec<(f64, JointType)> = Vec::new();
    for win in cuts.windows(2) {
        let w = win[1] - win[0];
        if w <= 0.0 {
            continue;
        }
        let u = 0.5 * (win[0] + win[1]);
        let counts: Vec<u32> = (0..p.len())
            .map(|i| {
                // number of integers k with cum[i] <= k + u < cum[i+1]
                let up = ((cum[i + 1] - u).ceil() - (cum[i] - u).ceil()).max(0.0) as i64;
                (lo[i] + up.min(1)) as u32
            })
            .collect();
        let t = JointType::new(dims.to_vec(), counts)?;
        if let Some(e) = comps.iter_mut().find(|e| e.1 == t) {
            e.0 += w;
        } else {
            comps.push((w, t));
        }
    }
    Ok(TypeDecomposition { components: comps })
}

fn moments_check(f: &[Vec<f64>], t: &TypeVector, p_sz: &Channel) -> Result<()> {
    dim_check(
        f.len() == t.alphabet() && p_sz.inputs() == t.alphabet(),
        || "function rows, type alphabet and channel inputs must agree".into(),
    )?;
    dim_check(f.iter().all(|r| r.len() == p_sz.outputs()), || {
        "function columns must match channel outputs".into()
    })
}

/// `E[sum_i f(z_i, S_i) | type of z]` with `S_i ~ P_{S|Z}(.|z_i)` independently.
pub fn conditional_type_mean(f: &[Vec<f64>], t: &TypeVector, p_sz: &Channel) -> Result<f64> {
    moments_check(f, t, p_sz)?;
    Ok(t.counts()
        .iter()
        .enumerate()
        .map(|(z, &c)| {
            c as f64
                * f[z]
                    .iter()
                    .zip(p_sz.row(z))
                    .map(|(a, p)| a * p)
                    .sum::<f64>()
        })
        .sum())
}

/// Conditional variance of the same sum: `sum_z N(z) Var[f(z,S) | z]`.
pub fn conditional_type_variance(f: &[Vec<f64>], t: &TypeVector, p_sz: &Channel) -> Result<f64> {
    moments_check(f, t, p_sz)?;
    Ok(t.counts()
        .iter()
        .enumerate()
        .map(|(z, &c)| {
            let row = p_sz.row(z);
            let m: f64 = f[z].iter().zip(row).map(|(a, p)| a * p).sum();
            let v: f64 = f[z]
                .iter()
                .zip(row)
                .map(|(a, p)| p * (a - m) * (a - m))
                .sum();
            c as f64 * v
        })
        .sum())
}

/// Lower bound on `P[Z >= E Z]` for a sub-Gaussian `Z` with parameter `theta`.
/// Vacuous (negative) values are returned unchanged.
pub fn anti_concentration_bound(variance: f64, theta: f64, kappa: f64) -> f64 {
    let tail = 1.0
        + std::f64::consts::SQRT_2
        + (2.0 * std::f64::consts::PI).sqrt() / kappa
        + 1.0 / (kappa * kappa);
    theta * theta * variance / (2.0 * kappa * kappa) - 2.0 * (-kappa * kappa / 2.0).exp() * tail
}

/// Two-sided tail bound `2 exp(-xi^2 / (n (b-a)^2))` for sums of `n`
/// independent terms in `[a, b]`.
pub fn subgaussian_tail(n: u64, a: f64, b: f64, xi: f64) -> f64 {
    2.0 * (-xi * xi / (n as f64 * (b - a) * (b - a))).exp()
}

/// Sub-Gaussian parameter matching `subgaussian_tail`: `theta^2 = 2 / (n (b-a)^2)`.
pub fn subgaussian_theta(n: u64, a: f64, b: f64) -> f64 {
    (2.0 / (n as f64 * (b - a) * (b - a))).sqrt()
}

/// `delta = 2K / min_{p > 0} p`.
pub fn likelihood_ratio_delta(p: &[f64], k: usize) -> f64 {
    let m = p
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    2.0 * k as f64 / m
}

/// Band `(e^-delta, e^delta)` for the likelihood ratio of `n`-sequences under
/// two joint distributions that are `K/n`-close and share their support.
pub fn likelihood_ratio_band(p: &[f64], p_bar: &[f64], n: u64, k: usize) -> Result<(f64, f64)> {
    dim_check(p.len() == p_bar.len(), || {
        "distributions differ in length".into()
    })?;
    let dist = p
        .iter()
        .zip(p_bar)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if dist > k as f64 / n as f64 + 1e-12 {
        return Err(Error::Precondition(format!(
            "|p_bar - p| = {} exceeds K/n = {}",
            dist,
            k as f64 / n as f64
        )));
    }
    if p.iter().zip(p_bar).any(|(&a, &b)| (a > 0.0) != (b > 0.0)) {
        return Err(Error::Precondition(
            "distributions are not mutually absolutely continuous".into(),
        ));
    }
    let d = likelihood_ratio_delta(p, k);
    Ok(((-d).exp(), d.exp()))
}

/// Rate back-off `(JK-1) log2(n+1)/n + 1/n` in bits.
pub fn zeta_n(n: u64, j: usize, k: usize) -> f64 {
    let nf = n as f64;
    (j * k - 1) as f64 * (nf + 1.0).log2() / nf + 1.0 / nf
}

/// Composition of `n` closest to `px`, by largest remainders.
pub fn nearest_type(px: &crate::prob::Distribution, n: u32) -> Result<TypeVector> {
    let raw: Vec<f64> = px.probs().iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<u32> = raw.iter().map(|r| r.floor() as u32).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .partial_cmp(&(raw[a] - raw[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<u32>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    TypeVector::new(counts)
}
