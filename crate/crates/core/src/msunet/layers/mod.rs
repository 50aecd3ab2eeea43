//! Forward and backward kernels for every network operation.
//!
//! Token tensors are `rows × channels` matrices. Backward functions take the cached
//! forward inputs plus the output gradient, accumulate parameter gradients into a
//! [`ModelWeights`](super::ModelWeights) of the same schema, and return the input
//! gradient.

pub mod attention;
pub mod dcm;
pub mod linear;
pub mod norm;
pub mod patch;
pub mod sfb;
pub mod window;

pub use attention::{window_attention, window_attention_backward, AttentionCache, RelativeIndex};
pub use dcm::{dcm_backward, dcm_forward, depthwise_conv, depthwise_conv_backward, DcmCache};
pub use linear::{gelu, gelu_backward, linear_backward, linear_forward};
pub use norm::{layer_norm_backward, layer_norm_forward, LayerNormCache};
pub use patch::{
    patch_embed_backward, patch_embed_forward, patch_expand_backward, patch_expand_forward,
    patch_merge_backward, patch_merge_forward, patchify,
};
pub use sfb::{sfb_backward, sfb_forward};
pub use window::{window_partition, window_reverse, WindowIndex};
