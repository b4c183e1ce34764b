//! Dataset schema, the line-delimited record format, label validation,
//! impression batching and the synthetic behaviour generator.
//!
//! # Record format
//!
//! UTF-8 text, one record per line, columns separated by a single TAB.
//! The first line is the header:
//!
//! ```text
//! #mtlds-dataset v1<TAB>user=user_id:500<TAB>item=item_id:1000|item_cat:20<TAB>dense=4<TAB>tasks=click,purchase
//! ```
//!
//! `user=` and `item=` list the categorical fields as `name:cardinality`,
//! separated by `|` (either list may be empty). `dense=` is the number of
//! real-valued features and `tasks=` the ordered behaviour names. Every
//! following line is one sample:
//!
//! ```text
//! <impression_id><TAB><user ids, |-separated><TAB><item ids, |-separated><TAB><dense values, ,-separated><TAB><labels, ,-separated>
//! ```
//!
//! Dense values are written with Rust's shortest round-trip `f64` formatting.
//! Samples of one impression are grouped in order of first appearance.
//! Unclicked samples carry 0 for every post-click label.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregate::LabelSequence;
use crate::error::{Error, Result};
use crate::gradcore::sigmoid;

pub const FORMAT_TAG: &str = "#mtlds-dataset v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: u32,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, cardinality: u32) -> Self {
        Self { name: name.into(), cardinality }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub user_fields: Vec<FieldSpec>,
    pub item_fields: Vec<FieldSpec>,
    pub dense_dim: usize,
    pub tasks: Vec<String>,
}

impl Schema {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == name)
    }

    /// Names of the fields where `other` differs from `self`.
    pub fn mismatches(&self, other: &Schema) -> Vec<String> {
        let mut out = Vec::new();
        let fields = |a: &[FieldSpec], b: &[FieldSpec], group: &str, out: &mut Vec<String>| {
            for i in 0..a.len().max(b.len()) {
                match (a.get(i), b.get(i)) {
                    (Some(x), Some(y)) if x == y => {}
                    (Some(x), _) => out.push(format!("{group}.{}", x.name)),
                    (None, Some(y)) => out.push(format!("{group}.{}", y.name)),
                    (None, None) => {}
                }
            }
        };
        fields(&self.user_fields, &other.user_fields, "user", &mut out);
        fields(&self.item_fields, &other.item_fields, "item", &mut out);
        if self.dense_dim != other.dense_dim {
            out.push("dense".into());
        }
        if self.tasks != other.tasks {
            out.push("tasks".into());
        }
        out
    }

    fn header(&self) -> String {
        let fields = |f: &[FieldSpec]| {
            f.iter().map(|x| format!("{}:{}", x.name, x.cardinality)).collect::<Vec<_>>().join("|")
        };
        format!(
            "{FORMAT_TAG}\tuser={}\titem={}\tdense={}\ttasks={}",
            fields(&self.user_fields),
            fields(&self.item_fields),
            self.dense_dim,
            self.tasks.join(",")
        )
    }

    fn parse_header(line: &str) -> Result<Self> {
        let err = |msg: String| Error::Parse { line: 1, msg };
        let mut cols = line.split('\t');
        if cols.next() != Some(FORMAT_TAG) {
            return Err(err(format!("expected header starting with '{FORMAT_TAG}'")));
        }
        let mut user = None;
        let mut item = None;
        let mut dense = None;
        let mut tasks = None;
        for col in cols {
            let (key, value) =
                col.split_once('=').ok_or_else(|| err(format!("header entry '{col}' is not key=value")))?;
            match key {
                "user" => user = Some(parse_fields(value).map_err(err)?),
                "item" => item = Some(parse_fields(value).map_err(err)?),
                "dense" => {
                    dense = Some(value.parse().map_err(|_| err(format!("bad dense count '{value}'")))?)
                }
                "tasks" => {
                    let t: Vec<String> =
                        value.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
                    tasks = Some(t);
                }
                other => return Err(err(format!("unknown header key '{other}'"))),
            }
        }
        let tasks = tasks.filter(|t| !t.is_empty()).ok_or_else(|| err("header declares no tasks".into()))?;
        Ok(Self {
            user_fields: user.unwrap_or_default(),
            item_fields: item.unwrap_or_default(),
            dense_dim: dense.unwrap_or(0),
            tasks,
        })
    }
}

fn parse_fields(value: &str) -> std::result::Result<Vec<FieldSpec>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split('|')
        .map(|f| {
            let (name, card) = f.split_once(':').ok_or_else(|| format!("field '{f}' lacks ':cardinality'"))?;
            let cardinality = card.parse().map_err(|_| format!("bad cardinality in '{f}'"))?;
            Ok(FieldSpec::new(name, cardinality))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub impression_id: String,
    pub user: Vec<u32>,
    pub item: Vec<u32>,
    pub dense: Vec<f64>,
    pub labels: LabelSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub id: String,
    pub samples: Vec<Sample>,
}

impl Impression {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Aggregated label (behavioural depth) of every sample.
    pub fn depths(&self) -> Vec<u32> {
        self.samples.iter().map(|s| crate::aggregate::aggregate_labels(&s.labels)).collect()
    }

    pub fn task_labels(&self, t: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.labels.get(t) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub impressions: Vec<Impression>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub impressions: usize,
    pub samples: usize,
    /// Positive count per task, in schema order.
    pub positives: Vec<usize>,
}

impl Dataset {
    pub fn empty(schema: Schema) -> Self {
        Self { schema, impressions: Vec::new() }
    }

    pub fn sample_count(&self) -> usize {
        self.impressions.iter().map(Impression::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.impressions.iter().flat_map(|i| i.samples.iter())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut positives = vec![0; self.schema.task_count()];
        for s in self.samples() {
            for (t, &l) in s.labels.as_slice().iter().enumerate() {
                positives[t] += l as usize;
            }
        }
        DatasetStats { impressions: self.impressions.len(), samples: self.sample_count(), positives }
    }

    /// Keeps only the named tasks, in the given order. The result must still be monotone,
    /// which holds whenever `names` is a subsequence of the schema's task order.
    pub fn project_tasks(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.schema.task_index(n).ok_or_else(|| Error::Config(format!("unknown task '{n}'")))
            })
            .collect::<Result<_>>()?;
        if idx.is_empty() || idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("kept tasks must be a non-empty ordered subsequence".into()));
        }
        let mut out = self.clone();
        out.schema.tasks = names.to_vec();
        for imp in &mut out.impressions {
            for s in &mut imp.samples {
                s.labels = s.labels.project(&idx)?;
            }
        }
        Ok(out)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            impressions: idx.iter().map(|&i| self.impressions[i].clone()).collect(),
        }
    }
}

/// Result of [`validate_labels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelCheck {
    Ok,
    /// First `t` with `labels[t + 1] > labels[t]`.
    Violation(usize),
}

/// A label sequence is valid iff it is monotone non-increasing.
pub fn validate_labels(labels: &[u8]) -> LabelCheck {
    match labels.windows(2).position(|w| w[1] > w[0]) {
        Some(t) => LabelCheck::Violation(t),
        None => LabelCheck::Ok,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Drop samples with non-monotone labels (with a warning) instead of failing.
    pub drop_invalid_labels: bool,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, opts)
}

pub fn read_dataset(reader: impl Read, opts: LoadOptions) -> Result<Dataset> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
    };
    let schema = Schema::parse_header(header.trim_end_matches('\r'))?;

    let mut groups: IndexMap<String, Vec<Sample>> = IndexMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let sample = match parse_sample(line, &schema) {
            Ok(s) => s,
            Err(ParseFailure::Labels(index, id)) if opts.drop_invalid_labels => {
                log::warn!("line {line_no}: dropping impression {id} sample with non-monotone labels at ({index}, {})", index + 1);
                continue;
            }
            Err(ParseFailure::Labels(index, id)) => {
                return Err(Error::NonMonotoneLabels { impression: id, index });
            }
            Err(ParseFailure::Malformed(msg)) => return Err(Error::Parse { line: line_no, msg }),
        };
        groups.entry(sample.impression_id.clone()).or_default().push(sample);
    }
    let impressions = groups.into_iter().map(|(id, samples)| Impression { id, samples }).collect();
    Ok(Dataset { schema, impressions })
}

enum ParseFailure {
    Malformed(String),
    Labels(usize, String),
}

fn parse_sample(line: &str, schema: &Schema) -> std::result::Result<Sample, ParseFailure> {
    let bad = |m: String| ParseFailure::Malformed(m);
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(bad(format!("expected 5 tab-separated columns, found {}", cols.len())));
    }
    let ids = |col: &str, n: usize, what: &str| -> std::result::Result<Vec<u32>, ParseFailure> {
        let v: Vec<u32> = if col.is_empty() {
            Vec::new()
        } else {
            col.split('|')
                .map(|x| x.parse().map_err(|_| bad(format!("bad {what} id '{x}'"))))
                .collect::<std::result::Result<_, _>>()?
        };
        if v.len() != n {
            return Err(bad(format!("expected {n} {what} ids, found {}", v.len())));
        }
        Ok(v)
    };
    let user = ids(cols[1], schema.user_fields.len(), "user")?;
    let item = ids(cols[2], schema.item_fields.len(), "item")?;
    let dense: Vec<f64> = if cols[3].is_empty() {
        Vec::new()
    } else {
        cols[3]
            .split(',')
            .map(|x| x.parse().map_err(|_| bad(format!("bad dense value '{x}'"))))
            .collect::<std::result::Result<_, _>>()?
    };
    if dense.len() != schema.dense_dim {
        return Err(bad(format!("expected {} dense values, found {}", schema.dense_dim, dense.len())));
    }
    let labels: Vec<u8> = cols[4]
        .split(',')
        .map(|x| match x {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(bad(format!("label '{x}' is not 0 or 1"))),
        })
        .collect::<std::result::Result<_, _>>()?;
    if labels.len() != schema.task_count() {
        return Err(bad(format!("expected {} labels, found {}", schema.task_count(), labels.len())));
    }
    if let LabelCheck::Violation(t) = validate_labels(&labels) {
        return Err(ParseFailure::Labels(t, cols[0].to_string()));
    }
    let labels = LabelSequence::new(labels).map_err(|e| bad(e.to_string()))?;
    Ok(Sample { impression_id: cols[0].to_string(), user, item, dense, labels })
}

pub fn write_dataset(ds: &Dataset, mut w: impl Write) -> Result<()> {
    writeln!(w, "{}", ds.schema.header())?;
    let mut line = String::new();
    for imp in &ds.impressions {
        for s in &imp.samples {
            line.clear();
            line.push_str(&s.impression_id);
            line.push('\t');
            join_into(&mut line, &s.user, '|');
            line.push('\t');
            join_into(&mut line, &s.item, '|');
            line.push('\t');
            join_into(&mut line, &s.dense, ',');
            line.push('\t');
            join_into(&mut line, s.labels.as_slice(), ',');
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

fn join_into<T: std::fmt::Display>(out: &mut String, values: &[T], sep: char) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        let _ = write!(out, "{v}");
    }
}

/// Configuration of the latent-factor behaviour generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub impressions: usize,
    pub list_size: usize,
    pub latent_dim: usize,
    pub tasks: usize,
    /// Per-task logit offsets; must strictly decrease.
    pub biases: Vec<f64>,
    /// Standard deviation of the per-sample logit noise.
    pub noise: f64,
    /// Standard deviation of the user-item affinity term.
    pub signal: f64,
    /// Standard deviation of the noise on the observed dense item features.
    pub feature_noise: f64,
    /// Correlation between the item vectors of different tasks, in [0, 1].
    pub task_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::with_tasks(2)
    }
}

impl SynthConfig {
    /// Desk-scale defaults: 4167 impressions of 12 items (50,004 samples).
    pub fn with_tasks(tasks: usize) -> Self {
        Self {
            users: 300,
            items: 600,
            impressions: 4167,
            list_size: 12,
            latent_dim: 8,
            tasks,
            biases: (0..tasks).map(|t| -0.5 - 0.75 * t as f64).collect(),
            noise: 0.5,
            signal: 3.0,
            feature_noise: 0.5,
            task_correlation: 0.5,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks < 2 {
            return fail(format!("synthetic data needs at least 2 tasks, got {}", self.tasks));
        }
        if self.biases.len() != self.tasks {
            return fail(format!("{} biases for {} tasks", self.biases.len(), self.tasks));
        }
        if self.biases.windows(2).any(|w| !(w[1] < w[0])) {
            return fail("task biases must strictly decrease".into());
        }
        if self.users == 0 || self.items == 0 || self.list_size == 0 || self.latent_dim == 0 {
            return fail("users, items, list_size and latent_dim must be positive".into());
        }
        if self.list_size > self.items {
            return fail(format!("list size {} exceeds item count {}", self.list_size, self.items));
        }
        if self.noise < 0.0 || self.feature_noise < 0.0 || self.signal < 0.0 {
            return fail("noise scales must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.task_correlation) {
            return fail(format!("task_correlation must lie in [0, 1], got {}", self.task_correlation));
        }
        Ok(())
    }
}

/// Conventional names for `t` ordered behaviours.
pub fn default_task_names(t: usize) -> Vec<String> {
    match t {
        0 => Vec::new(),
        1 => vec!["purchase".into()],
        2 => vec!["click".into(), "purchase".into()],
        3 => vec!["click".into(), "cart".into(), "purchase".into()],
        _ => {
            let mut v = vec!["click".to_string()];
            v.extend((1..t - 1).map(|i| format!("post{i}")));
            v.push("purchase".into());
            v
        }
    }
}

/// Generates a dataset in which later behaviours are conditioned on earlier ones.
///
/// Users and items get standard-normal latent vectors. For task `t` the item
/// vector is a blend of a shared item vector and a task-specific one whose
/// cross-task correlation is `task_correlation`. The conditional probability of behaviour
/// `t` given behaviour `t - 1` is `sigmoid(signal·<u, v_t> + bias_t + noise)`;
/// a behaviour is only sampled when the previous one happened, so every label
/// sequence is monotone. Dense features are noisy copies of the shared item vector.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let unit = (d as f64).sqrt();

    let users: Vec<Vec<f64>> =
        (0..cfg.users).map(|_| (0..d).map(|_| normal(&mut rng) / unit.sqrt()).collect()).collect();
    let shared: Vec<Vec<f64>> =
        (0..cfg.items).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
    // item_task[i][t] = sqrt(c)·shared + sqrt(1 - c)·specific, scaled to unit-variance affinity
    let (a, b) = (cfg.task_correlation.sqrt(), (1.0 - cfg.task_correlation).sqrt());
    let item_task: Vec<Vec<Vec<f64>>> = shared
        .iter()
        .map(|v| {
            (0..cfg.tasks)
                .map(|_| {
                    v.iter()
                        .map(|&x| (a * x + b * normal(&mut rng)) / unit.sqrt())
                        .collect()
                })
                .collect()
        })
        .collect();

    let schema = Schema {
        user_fields: vec![FieldSpec::new("user_id", cfg.users as u32)],
        item_fields: vec![FieldSpec::new("item_id", cfg.items as u32)],
        dense_dim: d,
        tasks: default_task_names(cfg.tasks),
    };

    let all_items: Vec<usize> = (0..cfg.items).collect();
    let mut impressions = Vec::with_capacity(cfg.impressions);
    for k in 0..cfg.impressions {
        let id = format!("imp{k}");
        let u = rng.random_range(0..cfg.users);
        let chosen: Vec<usize> = all_items.choose_multiple(&mut rng, cfg.list_size).copied().collect();
        let mut samples = Vec::with_capacity(cfg.list_size);
        for &i in &chosen {
            let mut labels = vec![0u8; cfg.tasks];
            for t in 0..cfg.tasks {
                let affinity: f64 = users[u].iter().zip(&item_task[i][t]).map(|(a, b)| a * b).sum();
                let logit = cfg.signal * affinity + cfg.biases[t] + cfg.noise * normal(&mut rng);
                let p = sigmoid(logit);
                let draw: f64 = rng.random();
                if t > 0 && labels[t - 1] == 0 {
                    continue;
                }
                labels[t] = u8::from(draw < p);
            }
            let dense = shared[i].iter().map(|&x| round6(x + cfg.feature_noise * normal(&mut rng))).collect();
            samples.push(Sample {
                impression_id: id.clone(),
                user: vec![u as u32],
                item: vec![i as u32],
                dense,
                labels: LabelSequence::new(labels)?,
            });
        }
        impressions.push(Impression { id, samples });
    }
    Ok(Dataset { schema, impressions })
}

// Keeps generated files compact.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled impression batches for one epoch. Impressions are never split and
/// the order depends only on `(seed, epoch)`.
pub fn batch_impressions(
    impressions: &[Impression],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<&Impression>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..impressions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch + 1));
    order.shuffle(&mut rng);
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(batches.into_iter().map(move |b| b.into_iter().map(|i| &impressions[i]).collect()))
}

/// Splits at impression granularity into (train, valid, test). Each part keeps the
/// original impression order.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let n = ds.impressions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0)));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((ds.subset(&parts[0]), ds.subset(&parts[1]), ds.subset(&parts[2])))
}
