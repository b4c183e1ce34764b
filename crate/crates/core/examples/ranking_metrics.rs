//! AUC and NDCG@k on hand-made impressions.

use mtlds::eval::{auc, mean_ndcg, ndcg_at_k};

fn main() -> mtlds::Result<()> {
    let scores = [0.9, 0.8, 0.3, 0.6, 0.1];
    let purchased = [1, 0, 0, 1, 0];
    println!("AUC {:.4}", auc(&scores, &purchased)?);

    // gains are behavioural depths: 2 = purchase, 1 = click only, 0 = no click
    let depths = [2, 1, 0, 2, 0];
    for k in [2, 3, 5] {
        println!("NDCG@{k} {:.4}", ndcg_at_k(&scores, &depths, k)?.unwrap_or(f64::NAN));
    }

    let lists = vec![
        (scores.to_vec(), depths.to_vec()),
        (vec![0.2, 0.7, 0.5], vec![0, 0, 0]), // no positive gain: skipped
        (vec![0.4, 0.5], vec![1, 0]),
    ];
    let (mean, counted) = mean_ndcg(&lists, 2)?;
    println!("mean NDCG@2 {mean:.4} over {counted} impressions");
    Ok(())
}
