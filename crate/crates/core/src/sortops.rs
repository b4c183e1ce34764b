//! Exact permutations, the SoftSort relaxation and the ranking losses built on it.
//!
//! Indexing is 0-based throughout: a [`Permutation`] lists, for each rank
//! position, the index of the element placed there. Position weights follow
//! the NDCG discount, `w[i] = 1 / log2(i + 2)`.

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};

/// Probability clip used by the cross-entropy style losses.
pub const PROB_EPS: f64 = 1e-12;

/// Default SoftSort temperature.
pub const DEFAULT_TAU: f64 = 1.0;

/// A bijection on `0..n`; `indices()[rank]` is the element placed at `rank`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let n = indices.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("{indices:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(Self(indices))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `out[rank] = values[indices[rank]]`.
    pub fn apply<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| values[i]).collect()
    }
}

/// Stable descending argsort; equal scores keep their original order.
pub fn argsort_desc(s: &[f64]) -> Result<Permutation> {
    if s.is_empty() {
        return Err(Error::invalid("argsort_desc of an empty vector"));
    }
    if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("argsort_desc: non-finite score {bad}")));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    // sort_by is stable
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Ok(Permutation(idx))
}

/// One-hot encoding of a permutation: entry (i, j) is 1 iff `j == indices[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationMatrix {
    perm: Permutation,
}

impl PermutationMatrix {
    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.perm.0[i] == j {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.n();
        Tensor::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// `P · s`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        self.perm.apply(s)
    }
}

pub fn perm_matrix(z: &Permutation) -> PermutationMatrix {
    PermutationMatrix { perm: z.clone() }
}

/// NDCG-style discounts for an `n`-long list.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionWeights(Vec<f64>);

impl PositionWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn ndcg_position_weights(n: usize) -> Result<PositionWeights> {
    if n == 0 {
        return Err(Error::invalid("position weights need n >= 1"));
    }
    Ok(PositionWeights((0..n).map(|i| 1.0 / ((i + 2) as f64).log2()).collect()))
}

/// SoftSort relaxation of `perm_matrix(argsort_desc(s))` for an n × 1 score column.
///
/// Row `r` is the softmax of `-|sorted(s)[r] - s[j]| / tau` over `j`. The hard
/// sort is a row gather by the argsort permutation, held constant for the
/// backward pass, so gradients reach `s` through both sides of the distance.
/// The result is an n × n unimodal row-stochastic matrix.
pub fn soft_sort(g: &mut Graph, s: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("soft_sort temperature must be positive, got {tau}")));
    }
    let (n, cols) = g.shape(s);
    if cols != 1 || n == 0 {
        return Err(Error::shape("soft_sort", format!("expected n x 1 scores, got ({n}, {cols})")));
    }
    let order = argsort_desc(g.value(s).data())?;
    let sorted = g.gather_rows(s, order.0)?;
    let sorted_rows = g.broadcast_col(sorted, n)?;
    let s_row = g.transpose(s)?;
    let s_cols = g.broadcast_row(s_row, n)?;
    let diff = g.sub(sorted_rows, s_cols)?;
    let dist = g.abs(diff)?;
    let logits = g.scale(dist, -1.0 / tau)?;
    g.softmax_rows(logits)
}

/// [`soft_sort`] evaluated on plain values, outside any training graph.
pub fn soft_sort_values(s: &[f64], tau: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(Tensor::column(s));
    let out = soft_sort(&mut g, v, tau)?;
    Ok(g.value(out).clone())
}

/// The three defining conditions of a unimodal row-stochastic matrix, in check order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UrsCondition {
    Square,
    NonNegativity,
    RowAffinity,
    ArgmaxPermutation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UrsVerdict {
    pub ok: bool,
    pub violated: Option<UrsCondition>,
}

impl UrsVerdict {
    fn fail(c: UrsCondition) -> Self {
        Self { ok: false, violated: Some(c) }
    }
}

/// Checks non-negativity, unit row sums and a bijective row-argmax, reporting the first failure.
/// Argmax ties resolve to the first maximal column.
pub fn is_unimodal_row_stochastic(m: &Tensor, tol: f64) -> UrsVerdict {
    let (n, cols) = m.shape();
    if n != cols {
        return UrsVerdict::fail(UrsCondition::Square);
    }
    if m.data().iter().any(|&x| !(x >= -tol)) {
        return UrsVerdict::fail(UrsCondition::NonNegativity);
    }
    for r in 0..n {
        let sum: f64 = m.row_slice(r).iter().sum();
        if !((sum - 1.0).abs() <= tol) {
            return UrsVerdict::fail(UrsCondition::RowAffinity);
        }
    }
    let argmax: Vec<usize> = (0..n).map(|r| row_argmax(m.row_slice(r))).collect();
    if Permutation::new(argmax).is_err() {
        return UrsVerdict::fail(UrsCondition::ArgmaxPermutation);
    }
    UrsVerdict { ok: true, violated: None }
}

pub(crate) fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Position-weighted binary cross-entropy between a relaxed and a hard permutation matrix:
/// `-Σ_i w_i Σ_j [P_ij ln P̂_ij + (1 - P_ij) ln(1 - P̂_ij)]`.
///
/// `p_hat` is clipped to `[1e-12, 1 - 1e-12]` before the logarithms. The sum is not
/// normalised by list length.
pub fn sort_loss(g: &mut Graph, p_hat: Var, p: &PermutationMatrix, w: &PositionWeights) -> Result<Var> {
    let n = p.n();
    if g.shape(p_hat) != (n, n) || w.len() != n {
        return Err(Error::shape(
            "sort_loss",
            format!("P_hat {:?}, P ({n}, {n}), {} weights", g.shape(p_hat), w.len()),
        ));
    }
    let clipped = g.clip(p_hat, PROB_EPS, 1.0 - PROB_EPS)?;
    let log_p = g.log(clipped)?;
    let ones = g.constant(Tensor::ones(n, n));
    let complement = g.sub(ones, clipped)?;
    let log_q = g.log(complement)?;

    let weights = w.as_slice();
    let target = g.constant(Tensor::from_fn(n, n, |i, j| weights[i] * p.get(i, j)));
    let anti_target = g.constant(Tensor::from_fn(n, n, |i, j| weights[i] * (1.0 - p.get(i, j))));
    let a = g.mul_elem(target, log_p)?;
    let b = g.mul_elem(anti_target, log_q)?;
    let ab = g.add(a, b)?;
    let total = g.sum_all(ab)?;
    g.neg(total)
}

/// Mean binary cross-entropy of an n × 1 probability column against binary targets.
pub fn bce_loss(g: &mut Graph, p: Var, y: &[f64]) -> Result<Var> {
    let (n, cols) = g.shape(p);
    if cols != 1 || n != y.len() || n == 0 {
        return Err(Error::shape("bce_loss", format!("p ({n}, {cols}) vs {} labels", y.len())));
    }
    let clipped = g.clip(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let log_p = g.log(clipped)?;
    let ones = g.constant(Tensor::ones(n, 1));
    let complement = g.sub(ones, clipped)?;
    let log_q = g.log(complement)?;
    let pos = g.constant(Tensor::column(y));
    let neg = g.constant(Tensor::column(&y.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
    let a = g.mul_elem(pos, log_p)?;
    let b = g.mul_elem(neg, log_q)?;
    let ab = g.add(a, b)?;
    let total = g.sum_all(ab)?;
    g.scale(total, -1.0 / n as f64)
}

/// RankNet pairwise logistic loss, averaged over ordered pairs with `y[i] > y[j]`.
/// Returns a constant zero when no such pair exists.
pub fn ranknet_loss(g: &mut Graph, s: Var, y: &[f64]) -> Result<Var> {
    let (n, cols) = g.shape(s);
    if cols != 1 || n != y.len() {
        return Err(Error::shape("ranknet_loss", format!("s ({n}, {cols}) vs {} labels", y.len())));
    }
    let mut hi = Vec::new();
    let mut lo = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if y[i] > y[j] {
                hi.push(i);
                lo.push(j);
            }
        }
    }
    if hi.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let pairs = hi.len() as f64;
    let s_hi = g.gather_rows(s, hi)?;
    let s_lo = g.gather_rows(s, lo)?;
    // log(1 + exp(-(s_i - s_j))) = softplus(s_j - s_i)
    let margin = g.sub(s_lo, s_hi)?;
    let losses = g.softplus(margin)?;
    let total = g.sum_all(losses)?;
    g.scale(total, 1.0 / pairs)
}

/// Top-1 ListNet: cross-entropy from `softmax(y)` to `softmax(s)`.
pub fn listnet_loss(g: &mut Graph, s: Var, y: &[f64]) -> Result<Var> {
    let (n, cols) = g.shape(s);
    if cols != 1 || n != y.len() || n == 0 {
        return Err(Error::shape("listnet_loss", format!("s ({n}, {cols}) vs {} labels", y.len())));
    }
    let target = softmax(y);
    let row = g.transpose(s)?;
    let probs = g.softmax_rows(row)?;
    let log_probs = g.log_clipped(probs)?;
    let t = g.constant(Tensor::row(&target));
    let weighted = g.mul_elem(t, log_probs)?;
    let total = g.sum_all(weighted)?;
    g.neg(total)
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}
