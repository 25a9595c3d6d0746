//! Forward and backward kernels for the five layer primitives. Pure
//! functions over [`crate::tensor::Tensor`]; the autodiff tape in
//! [`crate::tape`] records these same kernels, so there is a single source
//! of truth for the math.

pub mod conv;
pub mod dense;
pub mod dropout;
pub mod norm;
pub mod pool;

pub use conv::{conv3d, Conv3dSpec, Padding};
pub use dense::{dense, matvec, softmax, softmax_crossentropy, Activation};
pub use dropout::dropout;
pub use norm::{batchnorm, Mode, RunningStats};
pub use pool::maxpool3d;
