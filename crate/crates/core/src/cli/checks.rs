use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregate::{aggregate_predictions, label_permutation, AggregatorKind, AggregatorSpec, LabelSequence};
use crate::data::{default_task_names, FieldSpec, Impression, Sample, Schema};
use crate::error::Result;
use crate::gradcore::{grad_check_with, CheckOptions, Graph, OpTag, Tensor, Var};
use crate::model::{ModelConfig, SharedBottomModel};
use crate::sortops::{
    argsort_desc, bce_loss, is_unimodal_row_stochastic, listnet_loss, ndcg_position_weights, ranknet_loss,
    row_argmax, soft_sort, soft_sort_values, sort_loss,
};

/// Finite-difference step used by every suite entry.
pub const GRAD_EPS: f64 = 1e-5;
/// Tolerance for single ops and losses.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the full model objective.
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// One row of the aggregator demonstration table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub index: usize,
    pub p_click: f64,
    pub p_post_click: f64,
    pub mul: f64,
    pub sum_equal: f64,
    pub sum_weighted: f64,
    pub max: f64,
}

const TABLE1_INPUTS: [(f64, f64); 4] = [(0.9, 0.1), (0.1, 0.9), (0.3, 0.3), (0.5, 0.5)];

/// Scores the four example (P(click), P(post-click)) pairs with Mul, Sum 1:1, Sum 3:2 and Max.
pub fn table1() -> Result<Vec<Table1Row>> {
    let mul = AggregatorSpec::new(AggregatorKind::Mul, 2);
    let add = AggregatorSpec::new(AggregatorKind::Add, 2);
    let weighted = AggregatorSpec::linear(vec![3.0, 2.0]);
    let max = AggregatorSpec::new(AggregatorKind::Max, 2);
    TABLE1_INPUTS
        .iter()
        .enumerate()
        .map(|(i, &(c, p))| {
            let l = [c, p];
            Ok(Table1Row {
                index: i + 1,
                p_click: c,
                p_post_click: p,
                mul: mul.score(&l)?,
                sum_equal: add.score(&l)?,
                sum_weighted: weighted.score(&l)?,
                max: max.score(&l)?,
            })
        })
        .collect()
}

/// Rounds to two decimals and drops trailing zeros, keeping at least one decimal.
pub fn format_table_value(x: f64) -> String {
    let s = format!("{:.2}", (x * 100.0).round() / 100.0);
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

pub fn render_table1(rows: &[Table1Row]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8}{:>10}{:>15}{:>8}{:>12}{:>12}{:>8}",
        "sample", "P(Click)", "P(Post-click)", "Mul", "Sum(1:1)", "Sum(3:2)", "Max"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8}{:>10}{:>15}{:>8}{:>12}{:>12}{:>8}",
            r.index,
            format_table_value(r.p_click),
            format_table_value(r.p_post_click),
            format_table_value(r.mul),
            format_table_value(r.sum_equal),
            format_table_value(r.sum_weighted),
            format_table_value(r.max)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UrsSweep {
    pub vectors: usize,
    pub checks: usize,
    /// Human-readable description of each failed check.
    pub failures: Vec<String>,
}

impl UrsSweep {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const URS_TAUS: [f64; 3] = [0.1, 1.0, 10.0];

/// Soft-sorts `vectors` random distinct-valued vectors (n in 2..=10) at every tau in
/// [`URS_TAUS`] and checks the URS conditions and that row argmaxes reproduce the argsort.
pub fn urs_sweep(vectors: usize, seed: u64) -> Result<UrsSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut checks = 0;
    for v in 0..vectors {
        let n = rng.random_range(2..=10);
        let s = distinct_vector(&mut rng, n, 1e-6);
        let order = argsort_desc(&s)?;
        for &tau in &URS_TAUS {
            checks += 1;
            let p = soft_sort_values(&s, tau)?;
            let verdict = is_unimodal_row_stochastic(&p, 1e-6);
            if !verdict.ok {
                failures.push(format!("vector {v} (n={n}, tau={tau}): {:?}", verdict.violated));
                continue;
            }
            let argmax: Vec<usize> = (0..n).map(|r| row_argmax(p.row_slice(r))).collect();
            if argmax != order.indices() {
                failures.push(format!("vector {v} (n={n}, tau={tau}): row argmax {argmax:?} != argsort {:?}", order.indices()));
            }
        }
    }
    Ok(UrsSweep { vectors, checks, failures })
}

/// Uniform draws on [-3, 3] with every pairwise gap at least `min_gap`.
pub fn distinct_vector(rng: &mut ChaCha8Rng, n: usize, min_gap: f64) -> Vec<f64> {
    loop {
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[1] - w[0] >= min_gap) {
            return s;
        }
    }
}

/// Entries with magnitude in [0.2, 1.5] and random sign, away from the kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// `Σ c ⊙ x` for a fixed random `c`, so every entry of `x` gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: Var, c: &Tensor) -> Result<Var> {
    let c = g.constant(c.clone());
    let y = g.mul_elem(x, c)?;
    g.sum_all(y)
}

type Objective = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    inputs: Vec<Tensor>,
    f: Objective,
    tolerance: f64,
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, f: Objective) -> Case {
    Case { name: name.into(), inputs, f, tolerance: OP_TOLERANCE }
}

/// Every op, every loss, every aggregator and the full MTLDS objective, with
/// deterministic inputs. `fault` corrupts the analytic gradient of one op.
pub fn gradcheck_suite(fault: Option<(OpTag, f64)>) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut cases = op_cases(&mut rng);
    cases.extend(loss_cases(&mut rng)?);
    cases.extend(aggregator_cases(&mut rng));
    cases.push(model_case(&mut rng)?);

    let opts = CheckOptions { fault };
    cases
        .into_iter()
        .map(|c| {
            let report = grad_check_with(&c.f, &c.inputs, GRAD_EPS, opts)?;
            let err = report.max_relative_error;
            Ok(CheckRow { name: c.name, max_relative_error: err, tolerance: c.tolerance, passed: err < c.tolerance })
        })
        .collect()
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let a = away_from_zero(rng, 3, 4);
    let b = away_from_zero(rng, 3, 4);
    let c34 = uniform(rng, 3, 4, -1.0, 1.0);
    let c33 = uniform(rng, 3, 3, -1.0, 1.0);
    let c43 = uniform(rng, 4, 3, -1.0, 1.0);
    let c24 = uniform(rng, 2, 4, -1.0, 1.0);
    let c31 = uniform(rng, 3, 1, -1.0, 1.0);
    let m = away_from_zero(rng, 4, 3);
    let pos = uniform(rng, 3, 4, 0.2, 2.0);
    let row = away_from_zero(rng, 1, 4);
    let col = away_from_zero(rng, 3, 1);
    // distinct entries per row keep max_rows away from ties
    let distinct = Tensor::from_fn(3, 4, |r, j| (j as f64 * 0.37 + r as f64 * 0.11) * if (r + j) % 2 == 0 { 1.0 } else { -1.0 });
    // clip bounds sit between entries, never on them
    let clip_in = Tensor::from_fn(3, 4, |r, j| [-0.9, -0.3, 0.25, 0.8][j] + 0.02 * r as f64);

    let unary = |name: &str, x: &Tensor, c: &Tensor, op: fn(&mut Graph, Var) -> Result<Var>| {
        let c = c.clone();
        case(format!("op:{name}"), vec![x.clone()], Box::new(move |g, v| {
            let y = op(g, v[0])?;
            weighted_sum(g, y, &c)
        }))
    };
    let binary = |name: &str, c: &Tensor, op: fn(&mut Graph, Var, Var) -> Result<Var>| {
        let c = c.clone();
        case(format!("op:{name}"), vec![a.clone(), b.clone()], Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted_sum(g, y, &c)
        }))
    };

    let mut cases = vec![
        binary("add", &c34, |g, x, y| g.add(x, y)),
        binary("sub", &c34, |g, x, y| g.sub(x, y)),
        binary("mul_elem", &c34, |g, x, y| g.mul_elem(x, y)),
    ];
    {
        let c = c33.clone();
        cases.push(case("op:matmul", vec![a.clone(), m], Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, &c)
        })));
    }
    cases.extend([
        unary("scale", &a, &c34, |g, x| g.scale(x, -1.7)),
        unary("neg", &a, &c34, |g, x| g.neg(x)),
        unary("abs", &a, &c34, |g, x| g.abs(x)),
        unary("log", &pos, &c34, |g, x| g.log(x)),
        unary("sigmoid", &a, &c34, |g, x| g.sigmoid(x)),
        unary("relu", &a, &c34, |g, x| g.relu(x)),
        unary("softplus", &a, &c34, |g, x| g.softplus(x)),
        unary("softmax_rows", &a, &c34, |g, x| g.softmax_rows(x)),
        unary("sum_all", &a, &Tensor::scalar(0.7), |g, x| g.sum_all(x)),
        unary("max_rows", &distinct, &c31, |g, x| g.max_rows(x)),
        unary("gather_rows", &a, &c34, |g, x| g.gather_rows(x, vec![2, 0, 2])),
        unary("broadcast_row", &row, &c24, |g, x| g.broadcast_row(x, 2)),
        unary("broadcast_col", &col, &c34, |g, x| g.broadcast_col(x, 4)),
        unary("clip", &clip_in, &c34, |g, x| g.clip(x, -0.5, 0.5)),
        unary("transpose", &a, &c43, |g, x| g.transpose(x)),
    ]);
    cases
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    for n in 2..=8 {
        let s = Tensor::column(&distinct_vector(rng, n, 0.05));
        let c = uniform(rng, n, n, -1.0, 1.0);
        cases.push(case(format!("soft_sort(n={n})"), vec![s.clone()], Box::new(move |g, v| {
            let p = soft_sort(g, v[0], 1.0)?;
            weighted_sum(g, p, &c)
        })));

        let depths: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let target = label_permutation(&depths)?;
        let w = ndcg_position_weights(n)?;
        cases.push(case(format!("sort_loss(n={n})"), vec![s], Box::new(move |g, v| {
            let p = soft_sort(g, v[0], 1.0)?;
            sort_loss(g, p, &target, &w)
        })));
    }

    let s = Tensor::column(&distinct_vector(rng, 6, 0.05));
    let depth = vec![2.0, 0.0, 1.0, 0.0, 1.0, 2.0];
    let y = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let p = uniform(rng, 6, 1, 0.05, 0.95);
    let d = depth.clone();
    cases.push(case("listnet", vec![s.clone()], Box::new(move |g, v| listnet_loss(g, v[0], &d))));
    cases.push(case("ranknet", vec![s], Box::new(move |g, v| ranknet_loss(g, v[0], &depth))));
    cases.push(case("bce", vec![p], Box::new(move |g, v| bce_loss(g, v[0], &y))));
    Ok(cases)
}

fn aggregator_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    // distinct columns keep Max away from ties
    let l_hat = Tensor::from_fn(5, 2, |r, t| 0.1 + 0.15 * r as f64 + if t == 0 { 0.04 } else { 0.0 } + 0.01 * ((r * 7 + t * 3) % 5) as f64);
    let c = uniform(rng, 5, 1, -1.0, 1.0);
    let weights = Tensor::column(&[0.8, 1.3]);
    let mut cases = Vec::new();
    for kind in [AggregatorKind::Mul, AggregatorKind::Max, AggregatorKind::Add] {
        let c = c.clone();
        cases.push(case(format!("aggregate:{kind}"), vec![l_hat.clone()], Box::new(move |g, v| {
            let s = aggregate_predictions(g, kind, v[0], None)?;
            weighted_sum(g, s, &c)
        })));
    }
    cases.push(case("aggregate:linear", vec![l_hat, weights], Box::new(move |g, v| {
        let s = aggregate_predictions(g, AggregatorKind::Linear, v[0], Some(v[1]))?;
        weighted_sum(g, s, &c)
    })));
    cases
}

fn model_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let schema = Schema {
        user_fields: vec![FieldSpec::new("user_id", 3)],
        item_fields: vec![FieldSpec::new("item_id", 8)],
        dense_dim: 2,
        tasks: default_task_names(2),
    };
    let cfg = ModelConfig { shared_layers: vec![6, 4], tower_layers: vec![3], embedding_dim: 3, seed: 11, ..ModelConfig::default() };
    let model = SharedBottomModel::new(cfg, schema)?;
    let labels: [[u8; 2]; 5] = [[1, 1], [0, 0], [1, 0], [1, 1], [0, 0]];
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(Sample {
                impression_id: "check".into(),
                user: vec![1],
                item: vec![i as u32],
                dense: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                labels: LabelSequence::new(l.to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let imp = Impression { id: "check".into(), samples };
    let params = model.params().to_vec();
    let mut c = case("total_loss(mtlds, n=5, T=2)", params, Box::new(move |g, v| model.batch_loss(g, v, &[&imp])));
    c.tolerance = MODEL_TOLERANCE;
    Ok(c)
}

pub fn render_checks(rows: &[CheckRow], urs: &UrsSweep) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<32}{:>14}{:>12}  result", "check", "max rel err", "tolerance");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<32}{:>14.3e}{:>12.0e}  {}",
            r.name,
            r.max_relative_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(
        s,
        "{:<32}{:>14}{:>12}  {}",
        format!("urs_sweep({} vectors)", urs.vectors),
        format!("{} bad", urs.failures.len()),
        format!("{} runs", urs.checks),
        if urs.passed() { "PASS" } else { "FAIL" }
    );
    for f in urs.failures.iter().take(10) {
        let _ = writeln!(s, "  {f}");
    }
    s
}
