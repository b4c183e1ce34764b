//! Aggregation of per-task predictions and labels into one ranking score per item.

use serde::{Deserialize, Serialize};

use crate::data::{validate_labels, LabelCheck};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::sortops::{argsort_desc, perm_matrix, PermutationMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Product of task probabilities.
    Mul,
    /// Largest task probability.
    Max,
    /// Unweighted sum.
    Add,
    /// Weighted sum with learnable per-task weights.
    Linear,
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggregatorKind::Mul => "mul",
            AggregatorKind::Max => "max",
            AggregatorKind::Add => "add",
            AggregatorKind::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// Aggregator kind plus, for `Linear`, one weight per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub weights: Option<Vec<f64>>,
}

impl AggregatorSpec {
    /// Spec for `tasks` tasks; `Linear` weights start at 1.0, which equals `Add`.
    pub fn new(kind: AggregatorKind, tasks: usize) -> Self {
        let weights = (kind == AggregatorKind::Linear).then(|| vec![1.0; tasks]);
        Self { kind, weights }
    }

    pub fn linear(weights: Vec<f64>) -> Self {
        Self { kind: AggregatorKind::Linear, weights: Some(weights) }
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        match (&self.kind, &self.weights) {
            (AggregatorKind::Linear, Some(w)) if w.len() == tasks => Ok(()),
            (AggregatorKind::Linear, Some(w)) => Err(Error::shape(
                "aggregate",
                format!("{} linear weights for {tasks} tasks", w.len()),
            )),
            (AggregatorKind::Linear, None) => Err(Error::invalid("linear aggregator needs weights")),
            (_, Some(_)) => Err(Error::invalid(format!("{} aggregator takes no weights", self.kind))),
            (_, None) => Ok(()),
        }
    }

    /// Aggregated score of one item's task probabilities.
    pub fn score(&self, probs: &[f64]) -> Result<f64> {
        self.validate(probs.len())?;
        Ok(match self.kind {
            AggregatorKind::Mul => probs.iter().product(),
            AggregatorKind::Max => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            AggregatorKind::Add => probs.iter().sum(),
            AggregatorKind::Linear => {
                probs.iter().zip(self.weights.as_deref().unwrap_or_default()).map(|(p, w)| p * w).sum()
            }
        })
    }
}

/// Aggregates an n × T grid of task probabilities (one row per item) into an n × 1 score column.
///
/// `weights` is the T × 1 weight column and must be given exactly when `kind` is `Linear`.
/// Max routes its gradient to the first maximal task.
pub fn aggregate_predictions(
    g: &mut Graph,
    kind: AggregatorKind,
    l_hat: Var,
    weights: Option<Var>,
) -> Result<Var> {
    let (_, tasks) = g.shape(l_hat);
    if tasks == 0 {
        return Err(Error::shape("aggregate", "zero tasks"));
    }
    match (kind, weights) {
        (AggregatorKind::Linear, Some(w)) => {
            if g.shape(w) != (tasks, 1) {
                return Err(Error::shape(
                    "aggregate",
                    format!("weights {:?} for {tasks} tasks", g.shape(w)),
                ));
            }
            g.matmul(l_hat, w)
        }
        (AggregatorKind::Linear, None) => Err(Error::invalid("linear aggregator needs weights")),
        (_, Some(_)) => Err(Error::invalid(format!("{kind} aggregator takes no weights"))),
        (AggregatorKind::Add, None) => {
            let ones = g.constant(Tensor::ones(tasks, 1));
            g.matmul(l_hat, ones)
        }
        (AggregatorKind::Max, None) => g.max_rows(l_hat),
        (AggregatorKind::Mul, None) => {
            let mut acc = select_column(g, l_hat, 0)?;
            for t in 1..tasks {
                let col = select_column(g, l_hat, t)?;
                acc = g.mul_elem(acc, col)?;
            }
            Ok(acc)
        }
    }
}

/// Aggregates with a spec whose `Linear` weights are plain values (not trained).
pub fn aggregate_with_spec(g: &mut Graph, spec: &AggregatorSpec, l_hat: Var) -> Result<Var> {
    spec.validate(g.shape(l_hat).1)?;
    let weights = spec.weights.as_ref().map(|w| g.constant(Tensor::column(w)));
    aggregate_predictions(g, spec.kind, l_hat, weights)
}

pub(crate) fn select_column(g: &mut Graph, x: Var, t: usize) -> Result<Var> {
    let tasks = g.shape(x).1;
    let mut e = Tensor::zeros(tasks, 1);
    e.set(t, 0, 1.0);
    let e = g.constant(e);
    g.matmul(x, e)
}

/// Ordered binary behaviour labels for one sample: index 0 is the click, later
/// indices are successively deeper post-click actions. Always monotone non-increasing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LabelSequence(Vec<u8>);

impl LabelSequence {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not binary")));
        }
        match validate_labels(&labels) {
            LabelCheck::Ok => Ok(Self(labels)),
            LabelCheck::Violation(t) => Err(Error::NonMonotoneLabels { impression: String::new(), index: t }),
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, t: usize) -> u8 {
        self.0[t]
    }

    /// Final (deepest) behaviour.
    pub fn last(&self) -> u8 {
        self.0.last().copied().unwrap_or(0)
    }

    /// Keeps only the listed task positions, in the given order.
    pub fn project(&self, tasks: &[usize]) -> Result<Self> {
        Self::new(tasks.iter().map(|&t| self.0[t]).collect())
    }
}

impl TryFrom<Vec<u8>> for LabelSequence {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelSequence> for Vec<u8> {
    fn from(l: LabelSequence) -> Self {
        l.0
    }
}

/// Number of behaviours the user performed, i.e. the length of the label prefix of ones.
pub fn aggregate_labels(l: &LabelSequence) -> u32 {
    l.0.iter().map(|&v| v as u32).sum()
}

/// Ground-truth permutation matrix for one impression: items ordered by descending
/// aggregated label, ties kept in original order.
pub fn label_permutation(scores: &[u32]) -> Result<PermutationMatrix> {
    if scores.is_empty() {
        return Err(Error::invalid("label_permutation of an empty impression"));
    }
    let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
    Ok(perm_matrix(&argsort_desc(&s)?))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcore::grad_check;

    const TABLE1: [(f64, f64); 4] = [(0.9, 0.1), (0.1, 0.9), (0.3, 0.3), (0.5, 0.5)];

    fn graph_score(spec: &AggregatorSpec, probs: &[f64]) -> f64 {
        let mut g = Graph::new();
        let l = g.constant(Tensor::row(probs));
        let s = aggregate_with_spec(&mut g, spec, l).unwrap();
        g.value(s).item()
    }

    #[test]
    fn table1_rows() {
        let mul = AggregatorSpec::new(AggregatorKind::Mul, 2);
        let max = AggregatorSpec::new(AggregatorKind::Max, 2);
        let add = AggregatorSpec::new(AggregatorKind::Add, 2);
        let lin = AggregatorSpec::linear(vec![3.0, 2.0]);
        let expected = [
            [0.09, 1.0, 2.9, 0.9],
            [0.09, 1.0, 2.1, 0.9],
            [0.09, 0.6, 1.5, 0.3],
            [0.25, 1.0, 2.5, 0.5],
        ];
        for ((a, b), row) in TABLE1.iter().zip(expected) {
            let got = [&mul, &add, &lin, &max].map(|s| graph_score(s, &[*a, *b]));
            for (x, y) in got.iter().zip(row) {
                assert!((x - y).abs() < 1e-12, "{got:?} vs {row:?}");
            }
            let direct = [&mul, &add, &lin, &max].map(|s| s.score(&[*a, *b]).unwrap());
            assert_eq!(got, direct);
        }
    }

    #[test]
    fn table1_discrimination() {
        let mul = AggregatorSpec::new(AggregatorKind::Mul, 2);
        let max = AggregatorSpec::new(AggregatorKind::Max, 2);
        let lin = AggregatorSpec::linear(vec![3.0, 2.0]);
        let round = |v: f64| (v * 1e9).round() as i64;
        let scores = |s: &AggregatorSpec| TABLE1.map(|(a, b)| round(s.score(&[a, b]).unwrap()));
        let m = scores(&mul);
        assert!(m[0] == m[1] && m[1] == m[2]);
        let x = scores(&max);
        assert_eq!(x[0], x[1]);
        let l = scores(&lin);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(l[i], l[j]);
            }
        }
    }

    #[test]
    fn mul_absorbs_zero() {
        let mul = AggregatorSpec::new(AggregatorKind::Mul, 3);
        assert_eq!(graph_score(&mul, &[0.7, 0.0, 0.4]), 0.0);
    }

    #[test]
    fn weight_count_mismatch() {
        let lin = AggregatorSpec::linear(vec![1.0, 2.0, 3.0]);
        assert!(lin.score(&[0.5, 0.5]).is_err());
        let mut g = Graph::new();
        let l = g.constant(Tensor::row(&[0.5, 0.5]));
        assert!(aggregate_with_spec(&mut g, &lin, l).is_err());
        let w = g.constant(Tensor::column(&[1.0]));
        assert!(aggregate_predictions(&mut g, AggregatorKind::Linear, l, Some(w)).is_err());
        assert!(aggregate_predictions(&mut g, AggregatorKind::Linear, l, None).is_err());
    }

    #[test]
    fn gradients_for_all_kinds() {
        let probs = Tensor::from_rows(&[[0.2, 0.7, 0.4], [0.9, 0.3, 0.5]]).unwrap();
        for kind in [AggregatorKind::Mul, AggregatorKind::Max, AggregatorKind::Add] {
            let err = grad_check(
                |g, x| {
                    let s = aggregate_predictions(g, kind, x, None)?;
                    let sq = g.mul_elem(s, s)?;
                    g.sum_all(sq)
                },
                &probs,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{kind}: {err}");
        }
        let report = crate::gradcore::grad_check_many(
            |g, v| {
                let s = aggregate_predictions(g, AggregatorKind::Linear, v[0], Some(v[1]))?;
                let sq = g.mul_elem(s, s)?;
                g.sum_all(sq)
            },
            &[probs, Tensor::column(&[1.5, -0.5, 2.0])],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5);
    }

    #[test]
    fn positive_linear_weights_preserve_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = rng.random_range(2..5);
            let a: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut b: Vec<f64> = a.iter().map(|v| v * rng.random_range(0.5..1.0)).collect();
            b[0] = a[0] * 0.9;
            let w: Vec<f64> = (0..t).map(|_| rng.random_range(0.1..3.0)).collect();
            for spec in [AggregatorSpec::new(AggregatorKind::Add, t), AggregatorSpec::linear(w.clone())] {
                assert!(spec.score(&a).unwrap() > spec.score(&b).unwrap());
            }
        }
    }

    #[test]
    fn label_aggregation() {
        let agg = |v: Vec<u8>| aggregate_labels(&LabelSequence::new(v).unwrap());
        assert_eq!(agg(vec![1, 1]), 2);
        assert_eq!(agg(vec![0, 0]), 0);
        assert_eq!(agg(vec![1, 1, 0]), 2);
        assert!(LabelSequence::new(vec![0, 1]).is_err());
        assert!(LabelSequence::new(vec![1, 2]).is_err());
    }

    #[test]
    fn behavioural_depth_ordering() {
        let purchased = aggregate_labels(&LabelSequence::new(vec![1, 1, 1]).unwrap());
        let carted = aggregate_labels(&LabelSequence::new(vec![1, 1, 0]).unwrap());
        let clicked = aggregate_labels(&LabelSequence::new(vec![1, 0, 0]).unwrap());
        let none = aggregate_labels(&LabelSequence::new(vec![0, 0, 0]).unwrap());
        assert!(purchased > carted && carted > clicked && clicked > none);
        let p = label_permutation(&[clicked, none, purchased, carted]).unwrap();
        assert_eq!(p.permutation().indices(), &[2, 3, 0, 1]);
    }

    #[test]
    fn label_permutation_examples() {
        let p = label_permutation(&[2, 0, 1]).unwrap();
        assert_eq!(p.permutation().indices(), &[0, 2, 1]);
        assert_eq!(label_permutation(&[1, 1, 1]).unwrap().to_tensor(), Tensor::identity(3));
        assert!(label_permutation(&[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let scores: Vec<u32> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let as_f: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let sorted = label_permutation(&scores).unwrap().apply(&as_f);
            assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
