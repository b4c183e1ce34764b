//! AUC and NDCG@k, the ranking metrics reported for final-task prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative; ties count one half.
///
/// Uses the rank-sum formulation with average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC computed within each group and averaged over groups that contain both classes.
pub fn grouped_auc(groups: &[(Vec<f64>, Vec<u8>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, l) in groups {
        match auc(s, l) {
            Ok(v) => {
                total += v;
                count += 1;
            }
            Err(Error::UndefinedMetric { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric { positives: 0, negatives: 0 });
    }
    Ok(total / count as f64)
}

/// `2^g - 1`.
fn gain(g: u32) -> f64 {
    (2f64).powi(g as i32) - 1.0
}

fn dcg(gains_in_rank_order: impl Iterator<Item = u32>, k: usize) -> f64 {
    gains_in_rank_order.take(k).enumerate().map(|(pos, g)| gain(g) / ((pos + 2) as f64).log2()).sum()
}

/// NDCG@k of one list. Items are ranked by descending score (stable on ties); the
/// ideal order sorts gains descending. Returns `None` when every gain is zero.
pub fn ndcg_at_k(scores: &[f64], gains: &[u32], k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::invalid("ndcg cutoff k must be at least 1"));
    }
    if scores.len() != gains.len() {
        return Err(Error::shape("ndcg_at_k", format!("{} scores vs {} gains", scores.len(), gains.len())));
    }
    if gains.iter().all(|&g| g == 0) {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let actual = dcg(order.iter().map(|&i| gains[i]), k);
    let mut ideal_gains = gains.to_vec();
    ideal_gains.sort_unstable_by(|a, b| b.cmp(a));
    let ideal = dcg(ideal_gains.into_iter(), k);
    Ok(Some(actual / ideal))
}

/// NDCG@k averaged over lists with at least one positive gain, in list order.
/// Returns the mean and the number of lists that counted.
pub fn mean_ndcg(lists: &[(Vec<f64>, Vec<u32>)], k: usize) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for (s, g) in lists {
        if let Some(v) = ndcg_at_k(s, g, k)? {
            total += v;
            count += 1;
        }
    }
    Ok((if count == 0 { 0.0 } else { total / count as f64 }, count))
}

/// Which score ranks items at evaluation time.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum RankBy {
    /// The model's aggregated score (its training-time ranking score).
    #[default]
    Aggregate,
    /// A single task head, by task name.
    Task(String),
}

impl std::str::FromStr for RankBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(RankBy::Aggregate),
            _ => match s.strip_prefix("task:") {
                Some(name) if !name.is_empty() => Ok(RankBy::Task(name.to_string())),
                _ => Err(Error::Config(format!("rank-by must be 'aggregate' or 'task:NAME', got '{s}'"))),
            },
        }
    }
}

impl std::fmt::Display for RankBy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankBy::Aggregate => f.write_str("aggregate"),
            RankBy::Task(t) => write!(f, "task:{t}"),
        }
    }
}

impl Serialize for RankBy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankBy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// NDCG gain per item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// Aggregated label, i.e. behavioural depth.
    #[default]
    Depth,
    /// Binary final-task label.
    Final,
}

/// Cutoff used to pick the best epoch on validation data.
pub const SELECTION_CUTOFF: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub rank_by: RankBy,
    pub gain: GainKind,
    /// AUC averaged per user instead of over all samples.
    pub grouped_auc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cutoffs: vec![2, 6, 12], rank_by: RankBy::Aggregate, gain: GainKind::Depth, grouped_auc: false }
    }
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when the evaluated labels contain a single class.
    pub auc: Option<f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    /// Impressions that contributed to NDCG.
    pub impressions: usize,
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl SeedSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std, values }
    }
}

/// Metric reports of several seeds, summarised per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub auc: SeedSummary,
    pub ndcg_at: BTreeMap<usize, SeedSummary>,
}

impl AggregateMetrics {
    pub fn from_reports(reports: &[MetricReport]) -> Self {
        let auc = SeedSummary::from_values(reports.iter().map(|r| r.auc.unwrap_or(f64::NAN)).collect());
        let mut ndcg_at = BTreeMap::new();
        if let Some(first) = reports.first() {
            for &k in first.ndcg_at.keys() {
                let vals = reports.iter().map(|r| r.ndcg_at.get(&k).copied().unwrap_or(f64::NAN)).collect();
                ndcg_at.insert(k, SeedSummary::from_values(vals));
            }
        }
        Self { auc, ndcg_at }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        match auc(&[0.1, 0.2], &[1, 1]) {
            Err(Error::UndefinedMetric { positives: 2, negatives: 0 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..50) as f64) / 10.0).collect();
        let labels: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[3.0, 2.0, 1.0], &[2, 1, 0], 3).unwrap(), Some(1.0));
        let v = ndcg_at_k(&[0.1, 0.9], &[1, 0], 2).unwrap().unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[0.1, 0.9], &[0, 0], 2).unwrap(), None);
        assert!(ndcg_at_k(&[0.1], &[1], 0).is_err());
    }

    #[test]
    fn ndcg_beyond_list_length_is_constant() {
        let s = [0.2, 0.5, 0.1, 0.7];
        let g = [1, 0, 2, 1];
        let at4 = ndcg_at_k(&s, &g, 4).unwrap();
        assert_eq!(at4, ndcg_at_k(&s, &g, 10).unwrap());
        assert_eq!(at4, ndcg_at_k(&s, &g, 100).unwrap());
    }

    #[test]
    fn seed_summary_uses_sample_std() {
        let s = SeedSummary::from_values(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(SeedSummary::from_values(vec![0.4]).std, 0.0);
    }

    #[test]
    fn rank_by_parsing() {
        assert_eq!("aggregate".parse::<RankBy>().unwrap(), RankBy::Aggregate);
        assert_eq!("task:purchase".parse::<RankBy>().unwrap(), RankBy::Task("purchase".into()));
        assert!("task:".parse::<RankBy>().is_err());
        assert!("best".parse::<RankBy>().is_err());
    }

    #[test]
    fn grouped_auc_skips_single_class_groups() {
        let groups = vec![
            (vec![0.9, 0.1], vec![1, 0]),
            (vec![0.2, 0.8], vec![1, 0]),
            (vec![0.5, 0.6], vec![0, 0]),
        ];
        assert_eq!(grouped_auc(&groups).unwrap(), 0.5);
    }
}
