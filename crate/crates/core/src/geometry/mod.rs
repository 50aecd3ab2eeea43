//! Flow maps, warping, flow/mask conversion and the small filters the losses build on.
//!
//! Coordinates follow the pixel-center convention: pixel `(row i, col j)` sits at
//! `(x = j, y = i)`. Flows are backward: the corrected image at `p` samples the
//! distorted image at `p + F(p)`.

mod flow;
mod image;
mod mask;
mod sobel;

pub use flow::{
    flow_to_seg, invert_flow_at_points, sample_flow, warp_image, warp_planes, FlowMap,
    InvertOptions, InvertedPoint, SegMask, DEFAULT_DELTA,
};
pub use image::Image;
pub use mask::{make_weight_mask, WeightMask, DEFAULT_W_BG, DEFAULT_W_FACE};
pub use sobel::{sobel, sobel_adjoint, SOBEL_X};
