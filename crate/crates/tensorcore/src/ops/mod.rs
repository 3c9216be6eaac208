mod basic;
mod conv;
mod loss;
mod norm;
mod pointwise;
mod pool;
mod upsample;

pub use loss::focal_term;
pub use pointwise::Pointwise;
pub use pool::{PoolKind, Region};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub(crate) fn expect_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::Shape(format!(
            "{what}: expected a T x C matrix, got {other:?}"
        ))),
    }
}
