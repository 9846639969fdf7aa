use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::grid::{Mask, PixelBox};
use super::threshold::ThresholdMode;
use super::{DEFAULT_EPSILON, DEFAULT_K, DEFAULT_TOP_P};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSpec {
    pub top_p: f64,
    pub k_regions: usize,
    pub epsilon: f64,
    pub pad: u32,
    pub target_w: u32,
    pub target_h: u32,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
}

impl RefineSpec {
    pub fn new(target_w: u32, target_h: u32) -> Self {
        Self {
            top_p: DEFAULT_TOP_P,
            k_regions: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            pad: 0,
            target_w,
            target_h,
            threshold_mode: ThresholdMode::Proportion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.k_regions == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.target_w == 0 || self.target_h == 0 {
            return Err(Error::invalid("target dimensions must be positive"));
        }
        Ok(())
    }
}

/// Pixel span `[start, end)` of each of `cells` blocks over `pixels` pixels.
/// Blocks are `pixels / cells` wide; the last one absorbs the remainder.
pub fn block_ranges(pixels: usize, cells: usize) -> Vec<(usize, usize)> {
    let bw = pixels / cells;
    (0..cells)
        .map(|c| {
            let end = if c + 1 == cells { pixels } else { (c + 1) * bw };
            (c * bw, end)
        })
        .collect()
}

/// Upscales a token-grid mask to an `img_w x img_h` pixel mask by block
/// replication.
pub fn mask_to_pixels(mask: &Mask, img_w: usize, img_h: usize) -> Result<Mask> {
    if img_w < mask.width || img_h < mask.height {
        return Err(Error::DimensionMismatch(format!(
            "image {img_w}x{img_h} is smaller than the {}x{} token grid",
            mask.width, mask.height
        )));
    }
    let xs = block_ranges(img_w, mask.width);
    let ys = block_ranges(img_h, mask.height);
    let mut out = Mask::empty(img_w, img_h);
    for (gy, &(y0, y1)) in ys.iter().enumerate() {
        for (gx, &(x0, x1)) in xs.iter().enumerate() {
            if mask.get(gx, gy) {
                for y in y0..y1 {
                    out.data[y * img_w + x0..y * img_w + x1].fill(true);
                }
            }
        }
    }
    Ok(out)
}

/// Maps a half-open box in token-grid cells to pixel coordinates.
pub(crate) fn grid_box_to_pixels(b: &PixelBox, grid_w: usize, grid_h: usize, img_w: usize, img_h: usize) -> PixelBox {
    let xs = block_ranges(img_w, grid_w);
    let ys = block_ranges(img_h, grid_h);
    PixelBox {
        x0: xs[b.x0].0,
        y0: ys[b.y0].0,
        x1: xs[b.x1 - 1].1,
        y1: ys[b.y1 - 1].1,
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub image: RgbImage,
    /// Crop in source pixel coordinates, before resizing.
    pub crop: PixelBox,
    /// The mask was empty and the whole image was passed through.
    pub empty_mask: bool,
}

/// Masks everything outside `m_star` to black, crops to the mask's bounding
/// box grown by `pad`, and resizes bilinearly to the target size.
pub fn refine_image(img: &RgbImage, m_star: &Mask, spec: &RefineSpec) -> Result<RefineOutput> {
    spec.validate()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = mask_to_pixels(m_star, w, h)?;
    let Some(bbox) = pixels.bounding_box() else {
        log::warn!("selected region mask is empty; passing the whole image through");
        return Ok(RefineOutput {
            image: imageops::resize(img, spec.target_w, spec.target_h, FilterType::Triangle),
            crop: PixelBox {
                x0: 0,
                y0: 0,
                x1: w,
                y1: h,
            },
            empty_mask: true,
        });
    };
    let pad = spec.pad as usize;
    let crop = PixelBox {
        x0: bbox.x0.saturating_sub(pad),
        y0: bbox.y0.saturating_sub(pad),
        x1: (bbox.x1 + pad).min(w),
        y1: (bbox.y1 + pad).min(h),
    };
    let mut masked = img.clone();
    for (x, y, px) in masked.enumerate_pixels_mut() {
        if !pixels.get(x as usize, y as usize) {
            *px = Rgb([0, 0, 0]);
        }
    }
    let cropped = imageops::crop_imm(
        &masked,
        crop.x0 as u32,
        crop.y0 as u32,
        crop.width() as u32,
        crop.height() as u32,
    )
    .to_image();
    Ok(RefineOutput {
        image: imageops::resize(&cropped, spec.target_w, spec.target_h, FilterType::Triangle),
        crop,
        empty_mask: false,
    })
}
