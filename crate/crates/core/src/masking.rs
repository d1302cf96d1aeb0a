//! Input masks for generative pre-training: an exact-ratio grid of masked
//! patches with large random rectangles superimposed on top.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{check_side_range, BinaryMask};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub large_mask_count: usize,
    /// Inclusive bounds on each large-mask side.
    pub large_side_range: (usize, usize),
    pub fill_value: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            patch_size: 8,
            mask_ratio: 0.8,
            large_mask_count: 1,
            large_side_range: (40, 150),
            fill_value: 0.0,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Number of patches along a side; a trailing partial patch counts whole.
fn patches_along(side: usize, patch: usize) -> usize {
    side.div_ceil(patch)
}

/// `floor(ratio * total)`, robust to the ratio not being exactly representable.
pub fn masked_patch_count(ratio: f64, total: usize) -> usize {
    let exact = ratio * total as f64;
    ((exact + 1e-9 * total.max(1) as f64).floor() as usize).min(total)
}

/// Mask exactly `floor(ratio * P)` of the `P` patches, sampled without
/// replacement.
pub fn grid_mask(height: usize, width: usize, spec: &MaskSpec) -> Result<BinaryMask> {
    let ps = spec.patch_size;
    if ps == 0 || ps > height.min(width) {
        return Err(Error::invalid(
            "patch_size",
            format!("must be in 1..={}, got {ps}", height.min(width)),
        ));
    }
    if !(0.0..=1.0).contains(&spec.mask_ratio) {
        return Err(Error::invalid("mask_ratio", format!("must be in [0, 1], got {}", spec.mask_ratio)));
    }
    let (py, px) = (patches_along(height, ps), patches_along(width, ps));
    let total = py * px;
    let n_masked = masked_patch_count(spec.mask_ratio, total);

    let mut rng = rng_from_seed(derive_seed(spec.seed, 0));
    let mut mask = BinaryMask::zeros(height, width);
    for p in sample(&mut rng, total, n_masked) {
        let (gy, gx) = (p / px, p % px);
        mask.fill_rect(gy * ps, gx * ps, ps, ps);
    }
    Ok(mask)
}

/// Union of `large_mask_count` rectangles, each side uniform in
/// `large_side_range`, position uniform within the image.
pub fn large_mask(height: usize, width: usize, spec: &MaskSpec) -> Result<BinaryMask> {
    let mut mask = BinaryMask::zeros(height, width);
    if spec.large_mask_count == 0 {
        return Ok(mask);
    }
    let range = spec.large_side_range;
    check_side_range("large_side_range", range, height.min(width))?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, 1));
    for _ in 0..spec.large_mask_count {
        let h = rng.gen_range(range.0..=range.1);
        let w = rng.gen_range(range.0..=range.1);
        let top = rng.gen_range(0..=height - h);
        let left = rng.gen_range(0..=width - w);
        mask.fill_rect(top, left, h, w);
    }
    Ok(mask)
}

/// Grid mask with the large masks superimposed (union).
pub fn combined_mask(height: usize, width: usize, spec: &MaskSpec) -> Result<BinaryMask> {
    grid_mask(height, width, spec)?.or(&large_mask(height, width, spec)?)
}

/// Set masked pixels to `fill` in every channel.
pub fn apply_mask<T: Scalar>(img: &Tensor3<T>, mask: &BinaryMask, fill: T) -> Result<Tensor3<T>> {
    if !img.same_spatial(mask.height(), mask.width()) {
        return Err(Error::shape(
            "apply_mask",
            format!("{}x{}", img.height(), img.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            if mask.get(r, c) {
                out.pixel_mut(r, c).iter_mut().for_each(|v| *v = fill);
            }
        }
    }
    Ok(out)
}
