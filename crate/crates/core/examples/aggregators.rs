//! Scores the four click/post-click probability pairs from the aggregator
//! discussion with every operator, then shows which pairs each one can tell apart.

use mtlds::aggregate::{AggregatorKind, AggregatorSpec};
use mtlds::cli::{render_table1, table1};

fn main() -> mtlds::Result<()> {
    print!("{}", render_table1(&table1()?));

    let pairs = [[0.9, 0.1], [0.1, 0.9], [0.3, 0.3], [0.5, 0.5]];
    let specs = [
        ("mul", AggregatorSpec::new(AggregatorKind::Mul, 2)),
        ("max", AggregatorSpec::new(AggregatorKind::Max, 2)),
        ("add", AggregatorSpec::new(AggregatorKind::Add, 2)),
        ("linear 3:2", AggregatorSpec::linear(vec![3.0, 2.0])),
    ];
    println!();
    for (name, spec) in &specs {
        let scores = pairs.iter().map(|p| spec.score(p)).collect::<mtlds::Result<Vec<_>>>()?;
        let mut distinct = scores.iter().map(|s| (s * 1e9).round() as i64).collect::<Vec<_>>();
        distinct.sort_unstable();
        distinct.dedup();
        println!("{name:<11} separates {} of 4 samples", distinct.len());
    }
    Ok(())
}
