//! Seeded 2D gradient noise, binarization, and the binary mask type used for
//! anomaly regions, patch masks and ground truth.

use std::collections::VecDeque;
use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{mix64, rng_from_seed};

/// Height x width field of gradient noise in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    height: usize,
    width: usize,
    freq_x: f64,
    freq_y: f64,
    seed: u64,
    values: Vec<f64>,
}

impl NoiseField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn freqs(&self) -> (f64, f64) {
        (self.freq_x, self.freq_y)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Eight unit gradients at 45 degree spacing.
const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (0.0, -1.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

#[inline]
fn lattice_gradient(ix: i64, iy: i64, seed: u64) -> (f64, f64) {
    let h = mix64(mix64(seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ (iy as u64));
    GRADIENTS[(h >> 61) as usize]
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Noise value at continuous lattice coordinates `(x, y)`, in `[-1, 1]`.
pub fn perlin_at(x: f64, y: f64, seed: u64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);

    let corner = |dx: i64, dy: i64| {
        let (gx, gy) = lattice_gradient(ix + dx, iy + dy, seed);
        gx * (fx - dx as f64) + gy * (fy - dy as f64)
    };
    let u = fade(fx);
    let v = fade(fy);
    let top = lerp(corner(0, 0), corner(1, 0), u);
    let bottom = lerp(corner(0, 1), corner(1, 1), u);
    // Unit-gradient 2D noise peaks at 1/sqrt(2).
    (lerp(top, bottom, v) * std::f64::consts::SQRT_2).clamp(-1.0, 1.0)
}

/// Sample a `height x width` noise field with `freq_x` lattice cells across
/// the width and `freq_y` down the height.
pub fn perlin2d(height: usize, width: usize, freq_x: f64, freq_y: f64, seed: u64) -> Result<NoiseField> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("dims", format!("got {height}x{width}")));
    }
    for (arg, f) in [("freq_x", freq_x), ("freq_y", freq_y)] {
        if !(f.is_finite() && f >= 1.0) {
            return Err(Error::invalid(arg, format!("must be >= 1, got {f}")));
        }
    }
    let sx = freq_x / width as f64;
    let sy = freq_y / height as f64;
    let mut values = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = r as f64 * sy;
        for c in 0..width {
            values.push(perlin_at(c as f64 * sx, y, seed));
        }
    }
    Ok(NoiseField {
        height,
        width,
        freq_x,
        freq_y,
        seed,
        values,
    })
}

/// `value > threshold` per pixel.
pub fn binarize(field: &NoiseField, threshold: f64) -> BinaryMask {
    BinaryMask {
        height: field.height,
        width: field.width,
        bits: field.values.iter().map(|&v| v > threshold).collect(),
    }
}

/// Threshold at `fraction` of the field's maximum value.
pub fn binarize_relative(field: &NoiseField, fraction: f64) -> BinaryMask {
    binarize(field, fraction * field.max())
}

/// A single seeded axis-aligned rectangle of ones. Side lengths are drawn
/// uniformly from the inclusive ranges.
pub fn rect_noise(
    height: usize,
    width: usize,
    w_range: (usize, usize),
    h_range: (usize, usize),
    seed: u64,
) -> Result<BinaryMask> {
    check_side_range("w_range", w_range, width)?;
    check_side_range("h_range", h_range, height)?;
    let mut rng = rng_from_seed(seed);
    let rw = rng.gen_range(w_range.0..=w_range.1);
    let rh = rng.gen_range(h_range.0..=h_range.1);
    let top = rng.gen_range(0..=height - rh);
    let left = rng.gen_range(0..=width - rw);
    let mut mask = BinaryMask::zeros(height, width);
    mask.fill_rect(top, left, rh, rw);
    Ok(mask)
}

pub(crate) fn check_side_range(arg: &'static str, range: (usize, usize), limit: usize) -> Result<()> {
    if range.0 == 0 || range.0 > range.1 || range.1 > limit {
        return Err(Error::invalid(
            arg,
            format!("need 1 <= min <= max <= {limit}, got ({}, {})", range.0, range.1),
        ));
    }
    Ok(())
}

/// Height x width array of 0/1 flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("dims", format!("got {height}x{width}")));
        }
        if bits.len() != height * width {
            return Err(Error::shape("BinaryMask::new", height * width, bits.len()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        assert!(height > 0 && width > 0, "mask dims must be positive");
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                m.bits[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    pub fn invert(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Elementwise product (logical AND).
    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mask and", |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mask or", |a, b| a || b)
    }

    /// Set the clipped rectangle `[top, top+h) x [left, left+w)` to one.
    pub fn fill_rect(&mut self, top: usize, left: usize, h: usize, w: usize) {
        for r in top..(top + h).min(self.height) {
            for c in left..(left + w).min(self.width) {
                self.bits[r * self.width + c] = true;
            }
        }
    }

    /// Pixel counts of the 4-connected components of ones, in scan order.
    pub fn component_areas(&self) -> Vec<usize> {
        let (h, w) = (self.height, self.width);
        let mut seen = vec![false; h * w];
        let mut areas = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if !self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut area = 0;
            while let Some(i) = queue.pop_front() {
                area += 1;
                let (r, c) = (i / w, i % w);
                let mut visit = |j: usize| {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if r > 0 {
                    visit(i - w);
                }
                if r + 1 < h {
                    visit(i + w);
                }
                if c > 0 {
                    visit(i - 1);
                }
                if c + 1 < w {
                    visit(i + 1);
                }
            }
            areas.push(area);
        }
        areas
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vanishes_on_lattice_points() {
        // 64 px with freq 8: every 8th pixel is a lattice point
        let f = perlin2d(64, 64, 8.0, 8.0, 42).unwrap();
        for r in (0..64).step_by(8) {
            for c in (0..64).step_by(8) {
                assert_eq!(f.get(r, c), 0.0);
            }
        }
        assert!(f.values().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = perlin2d(40, 30, 4.0, 3.0, 9).unwrap();
        let b = perlin2d(40, 30, 4.0, 3.0, 9).unwrap();
        assert_eq!(a, b);
        let c = perlin2d(40, 30, 4.0, 3.0, 10).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_mean_on_large_field() {
        let f = perlin2d(256, 256, 8.0, 8.0, 3).unwrap();
        let mean: f64 = f.values().iter().sum::<f64>() / f.values().len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(perlin2d(0, 4, 1.0, 1.0, 0).is_err());
        assert!(perlin2d(4, 4, 0.5, 1.0, 0).is_err());
        assert!(perlin2d(4, 4, 1.0, f64::NAN, 0).is_err());
    }

    #[test]
    fn binarize_extremes() {
        let f = perlin2d(32, 32, 4.0, 4.0, 1).unwrap();
        assert_eq!(binarize(&f, 1.1).count_ones(), 0);
        assert_eq!(binarize(&f, -1.1).count_ones(), 32 * 32);
    }

    #[test]
    fn binarize_at_zero_is_roughly_half() {
        for seed in 0..20 {
            let f = perlin2d(256, 256, 4.0, 4.0, seed).unwrap();
            let frac = binarize(&f, 0.0).fraction();
            assert!((0.35..=0.65).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn rect_noise_full_cover_and_area() {
        let full = rect_noise(20, 30, (30, 30), (20, 20), 5).unwrap();
        assert_eq!(full.count_ones(), 600);

        let m = rect_noise(64, 64, (5, 9), (3, 7), 11).unwrap();
        let areas = m.component_areas();
        assert_eq!(areas.len(), 1);
        // a filled rectangle has area equal to its bounding box
        let rows: Vec<_> = (0..64).filter(|&r| (0..64).any(|c| m.get(r, c))).collect();
        let cols: Vec<_> = (0..64).filter(|&c| (0..64).any(|r| m.get(r, c))).collect();
        assert_eq!(m.count_ones(), rows.len() * cols.len());
        assert!((5..=9).contains(&cols.len()) && (3..=7).contains(&rows.len()));

        assert_eq!(m, rect_noise(64, 64, (5, 9), (3, 7), 11).unwrap());
    }

    #[test]
    fn rect_noise_rejects_oversized_range() {
        assert!(rect_noise(10, 10, (1, 11), (1, 5), 0).is_err());
        assert!(rect_noise(10, 10, (4, 3), (1, 5), 0).is_err());
    }

    #[test]
    fn component_areas_counts_blobs() {
        let mut m = BinaryMask::zeros(6, 6);
        m.fill_rect(0, 0, 2, 2);
        m.fill_rect(4, 3, 2, 3);
        m.set(3, 0, true);
        assert_eq!(m.component_areas(), vec![4, 1, 6]);
    }

    #[test]
    fn and_rejects_mismatch() {
        assert!(BinaryMask::zeros(2, 3).and(&BinaryMask::zeros(3, 2)).is_err());
    }

    proptest! {
        #[test]
        fn values_in_unit_range(seed in any::<u64>(), fx in 1.0f64..20.0, fy in 1.0f64..20.0) {
            let f = perlin2d(24, 17, fx, fy, seed).unwrap();
            prop_assert!(f.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn raising_threshold_shrinks_mask(seed in any::<u64>(), t in -1.0f64..1.0, dt in 0.0f64..1.0) {
            let f = perlin2d(32, 32, 4.0, 4.0, seed).unwrap();
            let lo = binarize(&f, t);
            let hi = binarize(&f, t + dt);
            prop_assert_eq!(hi.and(&lo).unwrap(), hi.clone());
            prop_assert_eq!(hi.invert().invert(), hi);
        }
    }
}
