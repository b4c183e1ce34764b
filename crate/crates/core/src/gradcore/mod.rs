//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records operations as they are applied to [`Var`] handles and
//! differentiates a scalar loss back to every trainable leaf. Batching is
//! expressed by stacking rows; there are no tensors beyond two dimensions.

mod adam;
mod check;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{grad_check, grad_check_many, grad_check_with, CheckOptions, GradCheckReport};
pub use graph::{sigmoid, softplus, Gradients, Graph, OpSpec, OpTag, Var};
pub use tensor::Tensor;

/// Lower clip applied before every logarithm.
pub const LOG_EPS: f64 = 1e-12;

impl Graph {
    /// `ln(clip(x, 1e-12, 1))`.
    pub fn log_clipped(&mut self, x: Var) -> crate::Result<Var> {
        let c = self.clip(x, LOG_EPS, 1.0)?;
        self.log(c)
    }
}
