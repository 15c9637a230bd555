mod conv;
mod elementwise;
mod norm;
mod pool;
mod resize;
mod shape;

pub(crate) use conv::gemm;
pub use conv::Conv2dSpec;
pub(crate) use elementwise::sigmoid_f;
pub use elementwise::{broadcast_shape, broadcast_to, reduce_to};
pub use norm::NORM_EPS;
pub use resize::resize_bilinear_tensor;
