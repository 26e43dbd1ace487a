//! Pure forward kernels and their vector-Jacobian products.

mod conv;
mod elementwise;
mod pool;
mod resample;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use elementwise::{
    activation, add, broadcast_expand, channel_affine, concat_channels, hadamard, pad, scale,
    sigmoid, slice_channels, Activation, Pad2d,
};
pub use pool::{avg_pool, max_pool};
pub use resample::{grid_sample_bilinear, pixel_shuffle, upsample_grid, upsample_nearest};

pub(crate) use elementwise::{
    channel_affine_backward, pad_backward, reduce_to, slice_channels_backward,
};
pub(crate) use pool::{avg_pool_backward, max_pool_backward, max_pool_with_argmax};
pub(crate) use resample::{
    grid_sample_bilinear_backward, pixel_unshuffle, upsample_nearest_backward,
};
