//! Reverse-mode automatic differentiation over dense `f64` sequences.
//!
//! The engine provides only what a one-dimensional temporal detection head
//! needs: temporal convolution, group normalisation, pointwise activations,
//! region pooling, linear upsampling, structural glue and a handful of fused
//! loss kernels. Every kernel has an analytic backward rule that is checked
//! against central finite differences (see [`gradcheck`]).
//!
//! ```
//! use tensorcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]).unwrap());
//! let y = tape.relu(x);
//! let s = tape.sum(y);
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
pub mod suite;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, check_gradients_with, GradCheckOptions, GradCheckReport};
pub use ops::{focal_term, Pointwise, PoolKind, Region};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
