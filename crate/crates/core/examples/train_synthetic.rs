//! Trains MTLDS-Linear and ESMM on a small synthetic dataset, compares their
//! test metrics, and round-trips the MTLDS checkpoint.

use mtlds::data::{split, synthesize};
use mtlds::{fit, EvalConfig, ModelConfig, ModelKind, SharedBottomModel, SynthConfig};

fn main() -> mtlds::Result<()> {
    let data = synthesize(&SynthConfig { impressions: 800, ..SynthConfig::default() })?;
    let (train, valid, test) = split(&data, [0.8, 0.1, 0.1], 1)?;
    println!("train {:?}", train.stats());
    let eval = EvalConfig::default();

    for kind in [ModelKind::Mtlds, ModelKind::Esmm] {
        let cfg = ModelConfig { kind, epochs: 10, normalize_sort_loss: true, ..ModelConfig::default() };
        let (model, report) = fit(&cfg, &eval, &train, &valid)?;
        let m = model.evaluate(&test, &eval)?;
        println!(
            "{:<6} best epoch {:>2}  test AUC {:.4}  NDCG@6 {:.4}",
            kind.name(),
            report.best_epoch,
            m.auc.unwrap_or(f64::NAN),
            m.ndcg_at[&6]
        );
        if let Some(w) = model.aggregator_weights() {
            println!("       learned aggregator weights {:?}", w.data());
        }
        if kind == ModelKind::Mtlds {
            let path = std::env::temp_dir().join("mtlds-example.ckpt");
            model.save(&path)?;
            let reloaded = SharedBottomModel::load(&path)?;
            assert_eq!(reloaded.evaluate(&test, &eval)?, m);
            println!("       checkpoint reloaded from {}", path.display());
        }
    }
    Ok(())
}
