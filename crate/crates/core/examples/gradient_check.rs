//! Verifies the gradient of a small composite function by central differences,
//! then corrupts one op's backward pass to show the checker catching it.

use mtlds::gradcore::{grad_check_many, grad_check_with, CheckOptions, OpTag};
use mtlds::{Graph, Result, Tensor, Var};

/// sum(softplus(x · w) ⊙ sigmoid(x · w))
fn objective(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let z = g.matmul(v[0], v[1])?;
    let a = g.softplus(z)?;
    let b = g.sigmoid(z)?;
    let y = g.mul_elem(a, b)?;
    g.sum_all(y)
}

fn main() -> Result<()> {
    let x = Tensor::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.37).sin());
    let w = Tensor::from_fn(4, 2, |r, c| ((r + 2 * c) as f64 * 0.91).cos());
    let inputs = [x, w];

    let clean = grad_check_many(objective, &inputs, 1e-5)?;
    println!("clean:     max relative error {:.2e} over {} entries", clean.max_relative_error, clean.entries_checked);

    let opts = CheckOptions { fault: Some((OpTag::Sigmoid, 1.1)) };
    let broken = grad_check_with(objective, &inputs, 1e-5, opts)?;
    println!("corrupted: max relative error {:.2e} at {:?}", broken.max_relative_error, broken.worst_entry);
    Ok(())
}
