//! Minimal reverse-mode tensor engine.
//!
//! 64-bit values throughout; parameters are stored in 32-bit precision by the
//! checkpoint layer and widened on entry, which keeps save/load and resumed
//! training bit-exact.

mod attention;
mod flops;
mod gradcheck;
mod graph;
mod nn_ops;
mod tensor;

pub use attention::{
    dot_product_attention, dot_product_attention_labeled, linear_attention,
    linear_attention_labeled,
};
pub use flops::FlopCounter;
pub use gradcheck::grad_check;
pub use graph::{BnBatchStats, Graph, Var};
pub use tensor::Tensor;

#[doc(hidden)]
pub fn test_gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    tensor::gemm(a, ta, b, tb)
}
