//! Shared-bottom multi-task network, the multi-task sorting objective and the baselines.
//!
//! Every model shares one architecture: categorical embeddings and dense
//! features feed a stack of shared ReLU layers, followed by one tower per task
//! ending in a sigmoid head. Model kinds differ in the number of towers, the
//! training loss and the score used to rank items.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_predictions, label_permutation, select_column, AggregatorKind};
use crate::data::{batch_impressions, Dataset, Impression, Sample, Schema};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, GainKind, MetricReport, RankBy, SELECTION_CUTOFF};
use crate::gradcore::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::sortops::{
    bce_loss, listnet_loss, ndcg_position_weights, ranknet_loss, soft_sort, sort_loss, DEFAULT_TAU,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multi-task towers, task losses plus the sorting loss on aggregated scores.
    Mtlds,
    /// Single tower, BCE on the final-task label.
    DnnPointwise,
    /// Single tower, RankNet on the aggregated label.
    DnnPairwise,
    /// Single tower, sorting loss on the aggregated label.
    DnnDiffsort,
    /// Click and conversion towers supervised through CTR and CTCVR.
    Esmm,
    /// ESMM with RankNet in place of both BCE terms.
    EsmmPairwise,
    /// Multi-task towers with ListNet on aggregated scores in place of the sorting loss.
    MtlListnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mtlds => "mtlds",
            ModelKind::DnnPointwise => "dnn_pointwise",
            ModelKind::DnnPairwise => "dnn_pairwise",
            ModelKind::DnnDiffsort => "dnn_diffsort",
            ModelKind::Esmm => "esmm",
            ModelKind::EsmmPairwise => "esmm_pairwise",
            ModelKind::MtlListnet => "mtl_listnet",
        }
    }

    fn single_task(self) -> bool {
        matches!(self, ModelKind::DnnPointwise | ModelKind::DnnPairwise | ModelKind::DnnDiffsort)
    }

    fn is_esmm(self) -> bool {
        matches!(self, ModelKind::Esmm | ModelKind::EsmmPairwise)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    Bce,
    /// RankNet over the tower logits.
    Ranknet,
}

/// One loss for every task, or one per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskLosses {
    All(TaskLoss),
    Each(Vec<TaskLoss>),
}

impl TaskLosses {
    fn get(&self, t: usize) -> TaskLoss {
        match self {
            TaskLosses::All(l) => *l,
            TaskLosses::Each(v) => v[t],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task_loss: TaskLosses,
    pub aggregator: AggregatorKind,
    pub tau: f64,
    pub shared_layers: Vec<usize>,
    /// Hidden widths of each tower; a 1-wide sigmoid head is always appended.
    pub tower_layers: Vec<usize>,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Impressions per optimisation step.
    pub batch_size: usize,
    pub seed: u64,
    pub sort_loss_weight: f64,
    /// Divide the sorting loss by the list length.
    pub normalize_sort_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mtlds,
            task_loss: TaskLosses::All(TaskLoss::Ranknet),
            aggregator: AggregatorKind::Linear,
            tau: DEFAULT_TAU,
            shared_layers: vec![64, 32],
            tower_layers: vec![16],
            embedding_dim: 8,
            learning_rate: 0.02,
            epochs: 20,
            batch_size: 32,
            seed: 1,
            sort_loss_weight: 1.0,
            normalize_sort_loss: false,
        }
    }
}

impl ModelConfig {
    /// Number of towers this configuration builds for `schema`.
    pub fn tower_count(&self, schema: &Schema) -> usize {
        if self.kind.single_task() {
            1
        } else {
            schema.task_count()
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let t = schema.task_count();
        if t == 0 {
            return fail("schema has no tasks".into());
        }
        if self.kind.is_esmm() && t != 2 {
            return fail(format!("{} needs exactly 2 tasks, schema has {t}", self.kind.name()));
        }
        if let TaskLosses::Each(v) = &self.task_loss {
            if v.len() != self.tower_count(schema) {
                return fail(format!("{} task losses for {} towers", v.len(), self.tower_count(schema)));
            }
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.shared_layers.is_empty() || self.shared_layers.contains(&0) || self.tower_layers.contains(&0) {
            return fail("layer widths must be positive and the shared bottom non-empty".into());
        }
        if self.embedding_dim == 0 || self.batch_size == 0 {
            return fail("embedding_dim and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// Position of every parameter group inside the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embeddings: Vec<usize>,
    first_weights: Vec<usize>,
    dense_weight: Option<usize>,
    first_bias: usize,
    shared: Vec<(usize, usize)>,
    towers: Vec<Vec<(usize, usize)>>,
    aggregator_weights: Option<usize>,
}

/// Parameter names in layout order; the layout is rebuilt from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

/// Shared-bottom multi-task network.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedBottomModel {
    config: ModelConfig,
    schema: Schema,
    task_names: Vec<String>,
    params: Vec<Tensor>,
    names: Vec<String>,
    layout: Layout,
}

/// Categorical ids (already mapped into table rows) and dense features for a stack of samples.
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    rows: usize,
    /// One id column per categorical field, user fields first.
    ids: Vec<Vec<usize>>,
    dense: Tensor,
}

impl FeatureBatch {
    /// Stacks samples in order. Ids at or beyond a field's cardinality go to the
    /// reserved out-of-vocabulary row.
    pub fn from_samples<'a>(schema: &Schema, samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let fields: Vec<u32> =
            schema.user_fields.iter().chain(&schema.item_fields).map(|f| f.cardinality).collect();
        let mut ids: Vec<Vec<usize>> = vec![Vec::new(); fields.len()];
        let mut dense = Vec::new();
        let mut rows = 0;
        for s in samples {
            for (f, &id) in s.user.iter().chain(&s.item).enumerate() {
                ids[f].push(id.min(fields[f]) as usize);
            }
            dense.extend_from_slice(&s.dense);
            rows += 1;
        }
        let dense = Tensor::new(rows, schema.dense_dim, dense).expect("dense width checked on load");
        Self { rows, ids, dense }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl SharedBottomModel {
    /// Builds a freshly initialised model. Weights use Xavier-uniform draws,
    /// embeddings `U(-0.05, 0.05)`, biases zero and linear aggregator weights 1.0.
    pub fn new(config: ModelConfig, schema: Schema) -> Result<Self> {
        config.validate(&schema)?;
        let towers = config.tower_count(&schema);
        let task_names = if config.kind.single_task() {
            vec![schema.tasks.last().cloned().unwrap_or_default()]
        } else {
            schema.tasks.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut metas = Vec::new();
        let mut params = Vec::new();
        let mut push = |name: String, t: Tensor, metas: &mut Vec<ParamMeta>| {
            metas.push(ParamMeta { name, rows: t.rows(), cols: t.cols() });
            params.push(t);
        };

        let dim = config.embedding_dim;
        for f in schema.user_fields.iter().chain(&schema.item_fields) {
            let rows = f.cardinality as usize + 1;
            let t = Tensor::from_fn(rows, dim, |_, _| rng.random_range(-0.05..0.05));
            push(format!("embedding.{}", f.name), t, &mut metas);
        }
        let width0 = config.shared_layers[0];
        let fan_in = dim * (schema.user_fields.len() + schema.item_fields.len()) + schema.dense_dim;
        for f in schema.user_fields.iter().chain(&schema.item_fields) {
            push(format!("shared.0.weight.{}", f.name), xavier(&mut rng, dim, width0, fan_in), &mut metas);
        }
        if schema.dense_dim > 0 {
            push("shared.0.weight.dense".into(), xavier(&mut rng, schema.dense_dim, width0, fan_in), &mut metas);
        }
        push("shared.0.bias".into(), Tensor::zeros(1, width0), &mut metas);
        for (l, w) in config.shared_layers.windows(2).enumerate() {
            push(format!("shared.{}.weight", l + 1), xavier(&mut rng, w[0], w[1], w[0]), &mut metas);
            push(format!("shared.{}.bias", l + 1), Tensor::zeros(1, w[1]), &mut metas);
        }
        let bottom = *config.shared_layers.last().expect("validated non-empty");
        for t in 0..towers {
            let mut widths = vec![bottom];
            widths.extend(&config.tower_layers);
            widths.push(1);
            for (l, w) in widths.windows(2).enumerate() {
                push(format!("tower{t}.{l}.weight"), xavier(&mut rng, w[0], w[1], w[0]), &mut metas);
                push(format!("tower{t}.{l}.bias"), Tensor::zeros(1, w[1]), &mut metas);
            }
        }
        if config.aggregator == AggregatorKind::Linear && !config.kind.single_task() && !config.kind.is_esmm() {
            push("aggregator.weights".into(), Tensor::ones(towers, 1), &mut metas);
        }

        let names: Vec<String> = metas.into_iter().map(|m| m.name).collect();
        let layout = build_layout(&names, &schema, &config)?;
        Ok(Self { config, schema, task_names, params, names, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Task represented by each tower, in output-column order.
    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Linear aggregator weights, when the model has them.
    pub fn aggregator_weights(&self) -> Option<&Tensor> {
        self.layout.aggregator_weights.map(|i| &self.params[i])
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Registers every parameter as a constant of `g` (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Pre-sigmoid tower outputs, one row per sample and one column per tower.
    pub fn forward_logits(&self, g: &mut Graph, p: &[Var], batch: &FeatureBatch) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::shape("forward", format!("{} bound params, model has {}", p.len(), self.params.len())));
        }
        let lay = &self.layout;
        let mut h: Option<Var> = None;
        for (f, ids) in batch.ids.iter().enumerate() {
            let emb = g.gather_rows(p[lay.embeddings[f]], ids.clone())?;
            let part = g.matmul(emb, p[lay.first_weights[f]])?;
            h = Some(match h {
                Some(acc) => g.add(acc, part)?,
                None => part,
            });
        }
        if let Some(w) = lay.dense_weight {
            let x = g.constant(batch.dense.clone());
            let part = g.matmul(x, p[w])?;
            h = Some(match h {
                Some(acc) => g.add(acc, part)?,
                None => part,
            });
        }
        let h = h.ok_or_else(|| Error::Config("schema has no input features".into()))?;
        let h = g.add_row_bias(h, p[lay.first_bias])?;
        let mut h = g.relu(h)?;
        for &(w, b) in &lay.shared {
            let z = g.matmul(h, p[w])?;
            let z = g.add_row_bias(z, p[b])?;
            h = g.relu(z)?;
        }

        let mut out: Option<Var> = None;
        let towers = lay.towers.len();
        for (t, tower) in lay.towers.iter().enumerate() {
            let mut x = h;
            for (l, &(w, b)) in tower.iter().enumerate() {
                let z = g.matmul(x, p[w])?;
                let z = g.add_row_bias(z, p[b])?;
                x = if l + 1 < tower.len() { g.relu(z)? } else { z };
            }
            // place the n × 1 head into column t of the n × T output
            let mut e = Tensor::zeros(1, towers);
            e.set(0, t, 1.0);
            let e = g.constant(e);
            let col = g.matmul(x, e)?;
            out = Some(match out {
                Some(acc) => g.add(acc, col)?,
                None => col,
            });
        }
        out.ok_or_else(|| Error::Config("model has no towers".into()))
    }

    /// Per-task probabilities (n × T).
    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &FeatureBatch) -> Result<Var> {
        let logits = self.forward_logits(g, p, batch)?;
        g.sigmoid(logits)
    }

    /// Per-task probabilities for the given samples, computed outside training.
    pub fn predict(&self, samples: &[Sample]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let batch = FeatureBatch::from_samples(&self.schema, samples);
        let out = self.forward(&mut g, &p, &batch)?;
        Ok(g.value(out).clone())
    }

    /// Mean over the impressions of each impression's training loss.
    pub fn batch_loss(&self, g: &mut Graph, p: &[Var], impressions: &[&Impression]) -> Result<Var> {
        if impressions.is_empty() {
            return Err(Error::invalid("empty impression batch"));
        }
        let batch = FeatureBatch::from_samples(&self.schema, impressions.iter().flat_map(|i| &i.samples));
        let logits = self.forward_logits(g, p, &batch)?;
        let probs = g.sigmoid(logits)?;
        let mut total: Option<Var> = None;
        let mut offset = 0;
        for imp in impressions {
            let n = imp.len();
            if n == 0 {
                return Err(Error::invalid(format!("impression {} is empty", imp.id)));
            }
            let rows: Vec<usize> = (offset..offset + n).collect();
            offset += n;
            let lg = g.gather_rows(logits, rows.clone())?;
            let pr = g.gather_rows(probs, rows)?;
            let parts = self.impression_loss(g, p, lg, pr, imp)?;
            let l = parts.total(g)?;
            total = Some(match total {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        let total = total.expect("non-empty batch");
        g.scale(total, 1.0 / impressions.len() as f64)
    }

    /// Loss terms of one impression, given its n × T logits and probabilities.
    pub fn impression_loss(
        &self,
        g: &mut Graph,
        p: &[Var],
        logits: Var,
        probs: Var,
        imp: &Impression,
    ) -> Result<LossParts> {
        let n = imp.len();
        if n == 0 {
            return Err(Error::invalid(format!("impression {} is empty", imp.id)));
        }
        let cfg = &self.config;
        let depths = imp.depths();
        let depth_f: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
        let last = self.schema.task_count() - 1;
        let mut task_terms = Vec::new();
        let mut list_term = None;

        match cfg.kind {
            ModelKind::Mtlds | ModelKind::MtlListnet => {
                for t in 0..self.task_names.len() {
                    let y = imp.task_labels(t);
                    let term = match cfg.task_loss.get(t) {
                        TaskLoss::Bce => {
                            let col = select_column(g, probs, t)?;
                            bce_loss(g, col, &y)?
                        }
                        TaskLoss::Ranknet => {
                            let col = select_column(g, logits, t)?;
                            ranknet_loss(g, col, &y)?
                        }
                    };
                    task_terms.push(term);
                }
                let weights = self.layout.aggregator_weights.map(|i| p[i]);
                let scores = aggregate_predictions(g, cfg.aggregator, probs, weights)?;
                list_term = Some(if cfg.kind == ModelKind::Mtlds {
                    self.sorting_term(g, scores, &depths)?
                } else {
                    listnet_loss(g, scores, &depth_f)?
                });
            }
            ModelKind::DnnPointwise => {
                let y = imp.task_labels(last);
                task_terms.push(bce_loss(g, probs, &y)?);
            }
            ModelKind::DnnPairwise => task_terms.push(ranknet_loss(g, logits, &depth_f)?),
            ModelKind::DnnDiffsort => list_term = Some(self.sorting_term(g, probs, &depths)?),
            ModelKind::Esmm | ModelKind::EsmmPairwise => {
                let click = imp.task_labels(0);
                let conversion = imp.task_labels(1);
                let (a, b) = esmm_terms(g, cfg.kind == ModelKind::EsmmPairwise, logits, probs, &click, &conversion)?;
                task_terms.push(a);
                task_terms.push(b);
            }
        }
        Ok(LossParts { task_terms, list_term, list_weight: cfg.sort_loss_weight })
    }

    fn sorting_term(&self, g: &mut Graph, scores: Var, depths: &[u32]) -> Result<Var> {
        let n = depths.len();
        let p_hat = soft_sort(g, scores, self.config.tau)?;
        let target = label_permutation(depths)?;
        let w = ndcg_position_weights(n)?;
        let l = sort_loss(g, p_hat, &target, &w)?;
        if self.config.normalize_sort_loss {
            g.scale(l, 1.0 / n as f64)
        } else {
            Ok(l)
        }
    }

    /// Ranking scores for every sample of each impression.
    pub fn rank_scores(&self, impressions: &[Impression], rank_by: &RankBy) -> Result<Vec<Vec<f64>>> {
        let column = match rank_by {
            RankBy::Aggregate => None,
            RankBy::Task(name) => Some(self.task_names.iter().position(|t| t == name).ok_or_else(|| {
                Error::Config(format!("model has no task '{name}' (tasks: {})", self.task_names.join(", ")))
            })?),
        };
        let mut out = Vec::with_capacity(impressions.len());
        for chunk in impressions.chunks(256) {
            let samples: Vec<Sample> = chunk.iter().flat_map(|i| i.samples.iter().cloned()).collect();
            let probs = self.predict(&samples)?;
            let mut row = 0;
            for imp in chunk {
                let mut scores = Vec::with_capacity(imp.len());
                for _ in 0..imp.len() {
                    let l = probs.row_slice(row);
                    scores.push(match column {
                        Some(c) => l[c],
                        None => self.aggregate_score(l),
                    });
                    row += 1;
                }
                out.push(scores);
            }
        }
        Ok(out)
    }

    fn aggregate_score(&self, probs: &[f64]) -> f64 {
        if self.config.kind.single_task() {
            return probs[0];
        }
        if self.config.kind.is_esmm() {
            return probs[0] * probs[1];
        }
        match self.config.aggregator {
            AggregatorKind::Mul => probs.iter().product(),
            AggregatorKind::Max => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            AggregatorKind::Add => probs.iter().sum(),
            AggregatorKind::Linear => {
                let w = self.aggregator_weights().expect("linear model has weights");
                probs.iter().zip(w.data()).map(|(p, w)| p * w).sum()
            }
        }
    }

    /// AUC of the final-task label and NDCG@k for each configured cutoff.
    pub fn evaluate(&self, ds: &Dataset, cfg: &EvalConfig) -> Result<MetricReport> {
        let scores = self.rank_scores(&ds.impressions, &cfg.rank_by)?;
        evaluate_scores(ds, &scores, cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }

    /// Writes `MAGIC`, a little-endian u32 version, a u64-length-prefixed JSON
    /// manifest (config, schema, parameter names and shapes) and then every
    /// parameter as little-endian f64 in manifest order.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let manifest = Manifest {
            config: self.config.clone(),
            schema: self.schema.clone(),
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(n, t)| ParamMeta { name: n.clone(), rows: t.rows(), cols: t.cols() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.params {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut model = Self::new(manifest.config, manifest.schema)?;
        if model.params.len() != manifest.params.len() {
            return Err(Error::Checkpoint("parameter count does not match configuration".into()));
        }
        for (i, meta) in manifest.params.iter().enumerate() {
            if model.names[i] != meta.name || model.params[i].shape() != (meta.rows, meta.cols) {
                return Err(Error::Checkpoint(format!("parameter {} does not match configuration", meta.name)));
            }
            let mut data = Vec::with_capacity(meta.rows * meta.cols);
            let mut buf = [0u8; 8];
            for _ in 0..meta.rows * meta.cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            model.params[i] = Tensor::new(meta.rows, meta.cols, data)?;
        }
        Ok(model)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTLDSCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    schema: Schema,
    params: Vec<ParamMeta>,
}

/// Loss terms of one impression; the total is `Σ task_terms + list_weight · list_term`.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub task_terms: Vec<Var>,
    pub list_term: Option<Var>,
    pub list_weight: f64,
}

impl LossParts {
    pub fn total(&self, g: &mut Graph) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &t in &self.task_terms {
            acc = Some(match acc {
                Some(a) => g.add(a, t)?,
                None => t,
            });
        }
        if let Some(l) = self.list_term {
            let w = g.scale(l, self.list_weight)?;
            acc = Some(match acc {
                Some(a) => g.add(a, w)?,
                None => w,
            });
        }
        acc.ok_or_else(|| Error::invalid("no loss terms"))
    }
}

/// ESMM objective over a whole impression: a CTR term on click labels and a CTCVR
/// term on `pCTR · pCVR` against click-and-convert labels. The conversion tower is
/// supervised only through the product. With `pairwise`, both terms use RankNet,
/// scoring CTCVR by `ln pCTR + ln pCVR`.
pub fn esmm_terms(
    g: &mut Graph,
    pairwise: bool,
    logits: Var,
    probs: Var,
    click: &[f64],
    conversion: &[f64],
) -> Result<(Var, Var)> {
    if g.shape(probs).1 != 2 {
        return Err(Error::shape("esmm", format!("expected 2 task columns, got {:?}", g.shape(probs))));
    }
    let converted: Vec<f64> = click.iter().zip(conversion).map(|(c, v)| c * v).collect();
    if pairwise {
        let z_ctr = select_column(g, logits, 0)?;
        let z_cvr = select_column(g, logits, 1)?;
        let ctr_term = ranknet_loss(g, z_ctr, click)?;
        // ln σ(z) = -softplus(-z)
        let a = g.neg(z_ctr)?;
        let a = g.softplus(a)?;
        let b = g.neg(z_cvr)?;
        let b = g.softplus(b)?;
        let s = g.add(a, b)?;
        let log_ctcvr = g.neg(s)?;
        let ctcvr_term = ranknet_loss(g, log_ctcvr, &converted)?;
        Ok((ctr_term, ctcvr_term))
    } else {
        let p_ctr = select_column(g, probs, 0)?;
        let p_cvr = select_column(g, probs, 1)?;
        let p_ctcvr = g.mul_elem(p_ctr, p_cvr)?;
        Ok((bce_loss(g, p_ctr, click)?, bce_loss(g, p_ctcvr, &converted)?))
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let limit = (6.0 / (fan_in + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

fn build_layout(names: &[String], schema: &Schema, config: &ModelConfig) -> Result<Layout> {
    let idx = |n: &str| {
        names.iter().position(|x| x == n).ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
    };
    let fields: Vec<&str> =
        schema.user_fields.iter().chain(&schema.item_fields).map(|f| f.name.as_str()).collect();
    let embeddings = fields.iter().map(|f| idx(&format!("embedding.{f}"))).collect::<Result<_>>()?;
    let first_weights = fields.iter().map(|f| idx(&format!("shared.0.weight.{f}"))).collect::<Result<_>>()?;
    let dense_weight = (schema.dense_dim > 0).then(|| idx("shared.0.weight.dense")).transpose()?;
    let first_bias = idx("shared.0.bias")?;
    let shared = (1..config.shared_layers.len())
        .map(|l| Ok((idx(&format!("shared.{l}.weight"))?, idx(&format!("shared.{l}.bias"))?)))
        .collect::<Result<_>>()?;
    let towers = (0..config.tower_count(schema))
        .map(|t| {
            (0..=config.tower_layers.len())
                .map(|l| Ok((idx(&format!("tower{t}.{l}.weight"))?, idx(&format!("tower{t}.{l}.bias"))?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let aggregator_weights = names.iter().position(|n| n == "aggregator.weights");
    Ok(Layout { embeddings, first_weights, dense_weight, first_bias, shared, towers, aggregator_weights })
}

/// Scores one dataset given per-impression ranking scores.
pub fn evaluate_scores(ds: &Dataset, scores: &[Vec<f64>], cfg: &EvalConfig) -> Result<MetricReport> {
    let last = ds.schema.task_count().saturating_sub(1);
    let final_label = |s: &Sample| s.labels.get(last);
    let mut lists = Vec::with_capacity(ds.impressions.len());
    for (imp, sc) in ds.impressions.iter().zip(scores) {
        let gains: Vec<u32> = match cfg.gain {
            GainKind::Depth => imp.depths(),
            GainKind::Final => imp.samples.iter().map(|s| final_label(s) as u32).collect(),
        };
        lists.push((sc.clone(), gains));
    }

    let auc = if cfg.grouped_auc {
        let mut groups: indexmap::IndexMap<&[u32], (Vec<f64>, Vec<u8>)> = indexmap::IndexMap::new();
        for (imp, sc) in ds.impressions.iter().zip(scores) {
            for (s, &v) in imp.samples.iter().zip(sc) {
                let e = groups.entry(s.user.as_slice()).or_default();
                e.0.push(v);
                e.1.push(final_label(s));
            }
        }
        let groups: Vec<_> = groups.into_values().collect();
        eval::grouped_auc(&groups)
    } else {
        let flat: Vec<f64> = scores.iter().flatten().copied().collect();
        let labels: Vec<u8> = ds.samples().map(final_label).collect();
        eval::auc(&flat, &labels)
    };
    let auc = match auc {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric { .. }) => None,
        Err(e) => return Err(e),
    };

    let mut ndcg_at = std::collections::BTreeMap::new();
    let mut impressions = 0;
    for &k in &cfg.cutoffs {
        let (v, count) = eval::mean_ndcg(&lists, k)?;
        ndcg_at.insert(k, v);
        impressions = count;
    }
    Ok(MetricReport { auc, ndcg_at, impressions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_kind: ModelKind,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_valid_ndcg: Option<f64>,
}

/// Trains with impression-batched Adam and keeps the parameters with the best
/// validation NDCG@6 (initial parameters included). Deterministic given `config.seed`.
pub fn fit(
    config: &ModelConfig,
    eval_cfg: &EvalConfig,
    train: &Dataset,
    valid: &Dataset,
) -> Result<(SharedBottomModel, TrainReport)> {
    if train.impressions.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut model = SharedBottomModel::new(config.clone(), train.schema.clone())?;
    let mut selection = eval_cfg.clone();
    if !selection.cutoffs.contains(&SELECTION_CUTOFF) {
        selection.cutoffs.push(SELECTION_CUTOFF);
    }
    let score_valid = |m: &SharedBottomModel| -> Result<Option<(MetricReport, f64)>> {
        if valid.impressions.is_empty() {
            return Ok(None);
        }
        let r = m.evaluate(valid, &selection)?;
        let key = r.ndcg_at[&SELECTION_CUTOFF];
        Ok(Some((r, key)))
    };

    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut best_ndcg = if config.epochs > 0 { score_valid(&model)?.map(|(_, k)| k) } else { None };
    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut state = AdamState::new(&model.params);
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in batch_impressions(&train.impressions, config.batch_size, config.seed, epoch as u64)?.enumerate() {
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let loss = model.batch_loss(&mut g, &vars, &batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: value });
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().zip(&model.params).map(|(v, p)| grads.get_or_zeros(*v, p)).collect();
            adam_step(&mut model.params, &grads, &mut state, &adam)?;
            loss_sum += value;
            batches += 1;
        }
        let scored = score_valid(&model)?;
        if let Some((_, key)) = &scored {
            if best_ndcg.map_or(true, |b| *key > b) {
                best_ndcg = Some(*key);
                best_epoch = epoch;
                best_params = model.params.clone();
            }
        } else {
            best_epoch = epoch;
            best_params = model.params.clone();
        }
        log::debug!("{} epoch {epoch}: loss {:.5}", config.kind.name(), loss_sum / batches as f64);
        epochs.push(EpochRecord { epoch, train_loss: loss_sum / batches as f64, valid: scored.map(|(r, _)| r) });
    }
    model.params = best_params;
    let report = TrainReport { model_kind: config.kind, epochs, best_epoch, best_valid_ndcg: best_ndcg };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, FieldSpec, SynthConfig};
    use crate::gradcore::grad_check_many;
    use crate::sortops::{argsort_desc, perm_matrix};

    fn tiny_schema(tasks: usize) -> Schema {
        Schema {
            user_fields: vec![FieldSpec::new("user_id", 4)],
            item_fields: vec![FieldSpec::new("item_id", 6)],
            dense_dim: 2,
            tasks: crate::data::default_task_names(tasks),
        }
    }

    fn tiny_config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            shared_layers: vec![6, 4],
            tower_layers: vec![3],
            embedding_dim: 3,
            ..ModelConfig::default()
        }
    }

    fn impression(labels: &[&[u8]]) -> Impression {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Sample {
                impression_id: "q".into(),
                user: vec![1],
                item: vec![i as u32 % 7],
                dense: vec![0.3 * i as f64 - 0.5, 0.1 * (i * i) as f64],
                labels: crate::aggregate::LabelSequence::new(l.to_vec()).unwrap(),
            })
            .collect();
        Impression { id: "q".into(), samples }
    }

    fn five_item_impression() -> Impression {
        impression(&[&[1, 0], &[0, 0], &[1, 1], &[1, 0], &[0, 0]])
    }

    fn loss_of(model: &SharedBottomModel, imp: &Impression) -> f64 {
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let l = model.batch_loss(&mut g, &p, &[imp]).unwrap();
        g.value(l).item()
    }

    fn zero_heads(model: &mut SharedBottomModel) {
        for (i, name) in model.names.clone().iter().enumerate() {
            if name.starts_with("tower") && name.contains(&format!(".{}.", model.config.tower_layers.len())) {
                let (r, c) = model.params[i].shape();
                model.params[i] = Tensor::zeros(r, c);
            }
        }
    }

    #[test]
    fn zero_heads_give_half() {
        let mut m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        zero_heads(&mut m);
        let probs = m.predict(&five_item_impression().samples).unwrap();
        assert!(probs.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn outputs_are_probabilities_and_deterministic() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(3)).unwrap();
        let mut imp = impression(&[&[1, 1, 0], &[0, 0, 0], &[1, 0, 0]]);
        imp.samples[2] = imp.samples[0].clone();
        imp.samples[1].item = vec![999]; // out of vocabulary
        let probs = m.predict(&imp.samples).unwrap();
        assert_eq!(probs.shape(), (3, 3));
        assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(probs.row_slice(0), probs.row_slice(2));
    }

    #[test]
    fn sort_weight_zero_is_plain_multitask_bce() {
        let cfg = ModelConfig {
            sort_loss_weight: 0.0,
            task_loss: TaskLosses::All(TaskLoss::Bce),
            ..tiny_config(ModelKind::Mtlds)
        };
        let m = SharedBottomModel::new(cfg, tiny_schema(2)).unwrap();
        let imp = five_item_impression();
        let probs = m.predict(&imp.samples).unwrap();
        let bce = |col: usize| -> f64 {
            let y = imp.task_labels(col);
            (0..5)
                .map(|i| {
                    let p = probs.get(i, col);
                    -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / 5.0
        };
        assert!((loss_of(&m, &imp) - (bce(0) + bce(1))).abs() < 1e-12);
    }

    #[test]
    fn single_item_list_has_no_sort_loss() {
        let cfg = tiny_config(ModelKind::Mtlds);
        let m = SharedBottomModel::new(cfg, tiny_schema(2)).unwrap();
        let imp = impression(&[&[1, 0]]);
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let batch = FeatureBatch::from_samples(m.schema(), &imp.samples);
        let lg = m.forward_logits(&mut g, &p, &batch).unwrap();
        let pr = g.sigmoid(lg).unwrap();
        let parts = m.impression_loss(&mut g, &p, lg, pr, &imp).unwrap();
        assert!(g.value(parts.list_term.unwrap()).item() < 1e-9);
    }

    #[test]
    fn total_loss_is_sum_of_parts() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        let imp = five_item_impression();
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let batch = FeatureBatch::from_samples(m.schema(), &imp.samples);
        let lg = m.forward_logits(&mut g, &p, &batch).unwrap();
        let pr = g.sigmoid(lg).unwrap();
        let parts = m.impression_loss(&mut g, &p, lg, pr, &imp).unwrap();
        let total = parts.total(&mut g).unwrap();
        let sum: f64 = parts.task_terms.iter().map(|&t| g.value(t).item()).sum::<f64>()
            + g.value(parts.list_term.unwrap()).item();
        assert!((g.value(total).item() - sum).abs() < 1e-9);

        // independently recomputed sorting loss
        let probs = g.value(pr).clone();
        let w = m.aggregator_weights().unwrap();
        let scores: Vec<f64> = (0..5).map(|i| probs.get(i, 0) * w.data()[0] + probs.get(i, 1) * w.data()[1]).collect();
        let mut h = Graph::new();
        let s = h.constant(Tensor::column(&scores));
        let ph = soft_sort(&mut h, s, 1.0).unwrap();
        let target = label_permutation(&imp.depths()).unwrap();
        let sl = sort_loss(&mut h, ph, &target, &ndcg_position_weights(5).unwrap()).unwrap();
        assert!((h.value(sl).item() - g.value(parts.list_term.unwrap()).item()).abs() < 1e-12);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        let imp = five_item_impression();
        let report = grad_check_many(|g, vars| m.batch_loss(g, vars, &[&imp]), m.params(), 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-3, "{report:?}");
    }

    #[test]
    fn aggregator_weights_receive_gradient() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        let imp = five_item_impression();
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let l = m.batch_loss(&mut g, &p, &[&imp]).unwrap();
        let grads = g.backward(l).unwrap();
        let wi = m.param_index("aggregator.weights").unwrap();
        let gw = grads.get(p[wi]).unwrap();
        assert!(gw.data().iter().all(|&v| v.abs() > 1e-8), "{gw:?}");
    }

    #[test]
    fn hard_parameter_sharing() {
        let base = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(3)).unwrap();
        let imp = impression(&[&[1, 1, 0], &[0, 0, 0], &[1, 0, 0]]);
        let before = base.predict(&imp.samples).unwrap();

        let mut shared = base.clone();
        let i = shared.param_index("shared.1.weight").unwrap();
        shared.params[i].data_mut().iter_mut().for_each(|v| *v += 0.3);
        let after = shared.predict(&imp.samples).unwrap();
        for t in 0..3 {
            assert!((0..3).any(|r| after.get(r, t) != before.get(r, t)), "task {t} unchanged");
        }

        let mut tower = base.clone();
        let i = tower.param_index("tower1.0.weight").unwrap();
        tower.params[i].data_mut().iter_mut().for_each(|v| *v += 0.3);
        let after = tower.predict(&imp.samples).unwrap();
        for t in 0..3 {
            let changed = (0..3).any(|r| after.get(r, t) != before.get(r, t));
            assert_eq!(changed, t == 1, "task {t}");
        }
    }

    #[test]
    fn scales_to_more_tasks_by_config() {
        for t in 2..=4 {
            let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(t)).unwrap();
            let labels: Vec<Vec<u8>> = vec![vec![1; t], vec![0; t], {
                let mut v = vec![0; t];
                v[0] = 1;
                v
            }];
            let refs: Vec<&[u8]> = labels.iter().map(Vec::as_slice).collect();
            let imp = impression(&refs);
            assert!(loss_of(&m, &imp).is_finite());
            assert_eq!(m.aggregator_weights().unwrap().rows(), t);
        }
    }

    #[test]
    fn esmm_requires_two_tasks() {
        assert!(SharedBottomModel::new(tiny_config(ModelKind::Esmm), tiny_schema(3)).is_err());
        assert!(SharedBottomModel::new(tiny_config(ModelKind::EsmmPairwise), tiny_schema(2)).is_ok());
    }

    #[test]
    fn esmm_degenerates_with_certain_clicks() {
        // pCTR = 1 → the CTCVR term is BCE of pCVR on conversions
        let click = [1.0, 1.0, 1.0];
        let conv = [1.0, 0.0, 0.0];
        let pcvr = [0.7, 0.2, 0.4];
        let mut g = Graph::new();
        let probs = g.constant(Tensor::from_fn(3, 2, |r, c| if c == 0 { 1.0 } else { pcvr[r] }));
        let logits = g.constant(Tensor::zeros(3, 2));
        let (_, b) = esmm_terms(&mut g, false, logits, probs, &click, &conv).unwrap();
        let col = g.constant(Tensor::column(&pcvr));
        let direct = bce_loss(&mut g, col, &conv).unwrap();
        assert!((g.value(b).item() - g.value(direct).item()).abs() < 1e-12);

        let mut g = Graph::new();
        let probs = g.constant(Tensor::filled(3, 2, 1e-9));
        let logits = g.constant(Tensor::filled(3, 2, -20.0));
        let (a, b) = esmm_terms(&mut g, false, logits, probs, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(g.value(a).item() + g.value(b).item() < 1e-6);
    }

    #[test]
    fn esmm_gradients() {
        for kind in [ModelKind::Esmm, ModelKind::EsmmPairwise] {
            let m = SharedBottomModel::new(tiny_config(kind), tiny_schema(2)).unwrap();
            let imp = five_item_impression();
            let report = grad_check_many(|g, vars| m.batch_loss(g, vars, &[&imp]), m.params(), 1e-5).unwrap();
            assert!(report.max_relative_error < 1e-4, "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn baseline_degenerate_cases() {
        let schema = tiny_schema(2);
        let same = impression(&[&[1, 0], &[1, 0], &[1, 0]]);
        let pairwise = SharedBottomModel::new(tiny_config(ModelKind::DnnPairwise), schema.clone()).unwrap();
        assert_eq!(loss_of(&pairwise, &same), 0.0);

        let diffsort = SharedBottomModel::new(tiny_config(ModelKind::DnnDiffsort), schema.clone()).unwrap();
        assert!(loss_of(&diffsort, &impression(&[&[1, 1]])) < 1e-9);

        // pointwise: saturate the head so predictions match labels
        let mut pointwise = SharedBottomModel::new(tiny_config(ModelKind::DnnPointwise), schema).unwrap();
        zero_heads(&mut pointwise);
        let b = pointwise.param_index("tower0.1.bias").unwrap();
        pointwise.params[b] = Tensor::scalar(-40.0);
        assert!(loss_of(&pointwise, &impression(&[&[0, 0], &[1, 0]])) < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = SharedBottomModel::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(SharedBottomModel::read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn rank_by_task_and_aggregate() {
        let m = SharedBottomModel::new(tiny_config(ModelKind::Mtlds), tiny_schema(2)).unwrap();
        let imp = five_item_impression();
        let probs = m.predict(&imp.samples).unwrap();
        let by_task = m.rank_scores(std::slice::from_ref(&imp), &RankBy::Task("purchase".into())).unwrap();
        assert_eq!(by_task[0], (0..5).map(|r| probs.get(r, 1)).collect::<Vec<_>>());
        let agg = m.rank_scores(std::slice::from_ref(&imp), &RankBy::Aggregate).unwrap();
        assert_eq!(agg[0], (0..5).map(|r| probs.get(r, 0) + probs.get(r, 1)).collect::<Vec<_>>());
        assert!(m.rank_scores(std::slice::from_ref(&imp), &RankBy::Task("cart".into())).is_err());
    }

    fn synth_small() -> Dataset {
        synthesize(&SynthConfig { users: 30, items: 60, impressions: 60, list_size: 6, ..SynthConfig::default() })
            .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let ds = synth_small();
        let cfg = ModelConfig { epochs: 0, ..tiny_config(ModelKind::Mtlds) };
        let (m, report) = fit(&cfg, &EvalConfig::default(), &ds, &ds).unwrap();
        assert_eq!(m, SharedBottomModel::new(cfg, ds.schema.clone()).unwrap());
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn fit_is_deterministic_and_learns() {
        let ds = synth_small();
        let cfg = ModelConfig { epochs: 3, batch_size: 8, ..tiny_config(ModelKind::Mtlds) };
        let (m1, r1) = fit(&cfg, &EvalConfig::default(), &ds, &ds).unwrap();
        let (m2, r2) = fit(&cfg, &EvalConfig::default(), &ds, &ds).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert!(r1.epochs.last().unwrap().train_loss < r1.epochs[0].train_loss);
    }

    #[test]
    fn oracle_scores_give_perfect_ndcg() {
        let ds = synth_small();
        let scores: Vec<Vec<f64>> =
            ds.impressions.iter().map(|i| i.depths().into_iter().map(f64::from).collect()).collect();
        let r = evaluate_scores(&ds, &scores, &EvalConfig::default()).unwrap();
        for v in r.ndcg_at.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // scores equal to a permutation of the sorted order are consistent with argsort
        let s = &scores[0];
        let z = argsort_desc(s).unwrap();
        assert!(perm_matrix(&z).apply(s).windows(2).all(|w| w[0] >= w[1]));
    }
}
