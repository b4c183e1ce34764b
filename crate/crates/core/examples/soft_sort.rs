//! The SoftSort relaxation: how temperature trades smoothness for exactness,
//! and the sorting loss against a label permutation.

use mtlds::aggregate::label_permutation;
use mtlds::sortops::{
    argsort_desc, is_unimodal_row_stochastic, ndcg_position_weights, perm_matrix, soft_sort, soft_sort_values,
    sort_loss,
};
use mtlds::Graph;

fn show(m: &mtlds::Tensor) {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row_slice(r).iter().map(|v| format!("{v:.3}")).collect();
        println!("  [{}]", row.join(", "));
    }
}

fn main() -> mtlds::Result<()> {
    let s = [0.2, 1.4, -0.5, 0.9];
    let hard = perm_matrix(&argsort_desc(&s)?).to_tensor();
    println!("scores {s:?}\nhard permutation:");
    show(&hard);
    for tau in [1.0, 0.3, 0.01] {
        let p = soft_sort_values(&s, tau)?;
        let urs = is_unimodal_row_stochastic(&p, 1e-9);
        println!("tau {tau}: max distance to hard {:.2e}, URS {}", p.max_abs_diff(&hard), urs.ok);
        if tau == 1.0 {
            show(&p);
        }
    }

    // sorting loss of these scores against labels of depth (1, 2, 0, 0)
    let depths = [1, 2, 0, 0];
    let mut g = Graph::new();
    let v = g.param(mtlds::Tensor::column(&s));
    let p_hat = soft_sort(&mut g, v, 1.0)?;
    let target = label_permutation(&depths)?;
    let loss = sort_loss(&mut g, p_hat, &target, &ndcg_position_weights(s.len())?)?;
    let grads = g.backward(loss)?;
    println!("sort loss {:.4}", g.value(loss).item());
    if let Some(d) = grads.get(v) {
        let d: Vec<String> = d.data().iter().map(|x| format!("{x:+.3}")).collect();
        println!("d loss / d s = [{}]", d.join(", "));
    }
    Ok(())
}
