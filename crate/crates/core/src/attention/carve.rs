use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::components::{connected_components, select_regions};
use super::contrast::{contrast_attention, fuse_layers, FusionSpec};
use super::grid::{AttentionStack, PixelBox};
use super::refine::{grid_box_to_pixels, refine_image, RefineSpec};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub tau: f64,
    pub retained_frac: f64,
    pub components: usize,
    /// Pixel boxes of the selected components.
    pub boxes: Vec<PixelBox>,
    /// Crop applied to the source image, before resizing.
    pub crop_box: PixelBox,
    pub top_p: f64,
    #[serde(default)]
    pub empty_mask: bool,
}

#[derive(Debug, Clone)]
pub struct CarveOutput {
    pub image: RgbImage,
    pub diagnostics: Diagnostics,
}

/// contrast -> fuse -> threshold -> components -> select -> refine.
pub fn carve(
    pos: &AttentionStack,
    neg: &AttentionStack,
    img: &RgbImage,
    fusion: &FusionSpec,
    spec: &RefineSpec,
) -> Result<CarveOutput> {
    spec.validate()?;
    let contrast = contrast_attention(pos, neg, spec.epsilon)?;
    let fused = fuse_layers(&contrast, fusion)?;
    let (tau, mask) = spec.threshold_mode.apply(&fused, spec.top_p)?;
    let regions = connected_components(&mask, &fused)?;
    let m_star = select_regions(&regions, spec.k_regions)?;
    let refined = refine_image(img, &m_star, spec)?;

    let (gw, gh) = (fused.width, fused.height);
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    let boxes = regions
        .components
        .iter()
        .take(spec.k_regions)
        .map(|c| grid_box_to_pixels(&c.bbox, gw, gh, iw, ih))
        .collect();
    Ok(CarveOutput {
        image: refined.image,
        diagnostics: Diagnostics {
            tau,
            retained_frac: mask.count() as f64 / fused.len() as f64,
            components: regions.components.len(),
            boxes,
            crop_box: refined.crop,
            top_p: spec.top_p,
            empty_mask: refined.empty_mask,
        },
    })
}
