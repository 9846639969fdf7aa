//! Contrastive visual-attention cropping.
//!
//! Positive-prompt attention is divided by negative-prompt attention to cancel
//! the generic pattern both share ([`contrast_attention`]). Layers are then
//! fused into one score grid, thresholded at a top-p percentile, split into
//! 8-connected regions, and the best K regions drive a mask-crop-resize of the
//! input image. [`carve`] chains the whole pipeline.

mod carve;
mod components;
mod contrast;
mod grid;
mod refine;
mod threshold;

pub use carve::{carve, CarveOutput, Diagnostics};
pub use components::{connected_components, select_regions, Component, RegionSet};
pub use contrast::{contrast_attention, contrast_attention_with, fuse_layers, FusionSpec};
pub use grid::{AttentionStack, Grid, Mask, PixelBox};
pub use refine::{block_ranges, mask_to_pixels, refine_image, RefineOutput, RefineSpec};
pub use threshold::{normalized_threshold, percentile_threshold, ThresholdMode};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_TOP_P: f64 = 0.3;
pub const DEFAULT_K: usize = 1;
pub const DEFAULT_LAYERS: (usize, usize) = (20, 25);
