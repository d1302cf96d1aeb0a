//! Anomaly simulation: a noise-derived mask restricted to the object
//! foreground selects where a noise source image is blended into a normal
//! image with transparency `delta`:
//!
//! `I_A = !M * I + M * (delta * I_N + (1 - delta) * I)`
//!
//! Structural anomalies draw `I_N` from a texture directory or a block
//! shuffle of the image itself; logical anomalies draw a different normal
//! image from the corpus, rotated, with larger and more concentrated masks.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::noise::{binarize_relative, perlin2d, rect_noise, BinaryMask};
use crate::rng::{derive_seed, rng_from_seed, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

pub const VALUE_MIN: f64 = 0.0;
pub const VALUE_MAX: f64 = 1.0;

/// Side of the square blocks shuffled for homologous structural anomalies.
pub const PERMUTE_BLOCK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Structural,
    Logical,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Structural => "structural",
            Branch::Logical => "logical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructuralSource {
    TextureDir,
    SelfPermute,
}

/// Shape of the anomaly region before foreground restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    Perlin,
    /// One rectangle with sides between 1/8 and 1/2 of the image sides.
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub branch: Branch,
    /// Transparency range; `delta` is drawn uniformly per sample.
    pub delta_range: (f64, f64),
    pub structural_source: StructuralSource,
    pub texture_dir: Option<PathBuf>,
    pub mask_shape: MaskShape,
    /// Lattice cells per image side.
    pub perlin_freq: f64,
    /// Binarization threshold as a fraction of the noise field's maximum.
    pub binarize_threshold: f64,
    /// Additive offset range.
    pub brightness_range: (f64, f64),
    /// Multiplicative gain range.
    pub contrast_range: (f64, f64),
    /// Clockwise rotations in degrees; multiples of 90.
    pub rotation_choices: Vec<u32>,
    pub seed: u64,
}

impl SimConfig {
    pub fn structural(seed: u64) -> Self {
        Self {
            branch: Branch::Structural,
            delta_range: (0.3, 1.0),
            structural_source: StructuralSource::SelfPermute,
            texture_dir: None,
            mask_shape: MaskShape::Perlin,
            perlin_freq: 8.0,
            binarize_threshold: 0.3,
            brightness_range: (-0.1, 0.1),
            contrast_range: (0.8, 1.2),
            rotation_choices: vec![0, 90, 180, 270],
            seed,
        }
    }

    /// Halved noise frequency and a higher threshold give fewer, larger
    /// regions.
    pub fn logical(seed: u64) -> Self {
        Self {
            branch: Branch::Logical,
            perlin_freq: 4.0,
            binarize_threshold: 0.5,
            ..Self::structural(seed)
        }
    }

    pub fn for_branch(branch: Branch, seed: u64) -> Self {
        match branch {
            Branch::Structural => Self::structural(seed),
            Branch::Logical => Self::logical(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.delta_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(
                "delta_range",
                format!("need 0 <= low <= high <= 1, got ({lo}, {hi})"),
            ));
        }
        if self.branch == Branch::Structural
            && self.structural_source == StructuralSource::TextureDir
            && self.texture_dir.is_none()
        {
            return Err(Error::invalid("texture_dir", "required for the texture source"));
        }
        if !(self.perlin_freq.is_finite() && self.perlin_freq >= 1.0) {
            return Err(Error::invalid("perlin_freq", format!("must be >= 1, got {}", self.perlin_freq)));
        }
        if !self.binarize_threshold.is_finite() {
            return Err(Error::invalid("binarize_threshold", "must be finite"));
        }
        for (arg, (a, b)) in [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::invalid(arg, format!("need low <= high, got ({a}, {b})")));
            }
        }
        if self.rotation_choices.is_empty() || self.rotation_choices.iter().any(|d| d % 90 != 0) {
            return Err(Error::invalid(
                "rotation_choices",
                format!("need a non-empty list of multiples of 90, got {:?}", self.rotation_choices),
            ));
        }
        Ok(())
    }
}

/// A normal training image available as a logical noise source.
#[derive(Debug, Clone)]
pub struct CorpusEntry<T> {
    pub id: String,
    pub image: Tensor3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource<T> {
    pub image: Tensor3<T>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample<T> {
    pub anomalous_image: Tensor3<T>,
    pub mask: BinaryMask,
    pub delta_used: f64,
    pub source_id: String,
    pub branch: Branch,
}

/// Restrict the noise mask to the foreground (Hadamard product).
pub fn build_anomaly_mask(noise_mask: &BinaryMask, foreground: &BinaryMask) -> Result<BinaryMask> {
    noise_mask.and(foreground)
}

/// Blend `noise_src` into `normal` on the mask. Off-mask pixels are copied
/// bit-for-bit.
pub fn composite<T: Scalar>(
    normal: &Tensor3<T>,
    noise_src: &Tensor3<T>,
    mask: &BinaryMask,
    delta: f64,
) -> Result<Tensor3<T>> {
    if normal.shape() != noise_src.shape() {
        return Err(Error::shape("composite", format!("{:?}", normal.shape()), format!("{:?}", noise_src.shape())));
    }
    if !normal.same_spatial(mask.height(), mask.width()) {
        return Err(Error::shape(
            "composite",
            format!("{}x{}", normal.height(), normal.width()),
            format!("mask {}x{}", mask.height(), mask.width()),
        ));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid("delta", format!("must be in [0, 1], got {delta}")));
    }
    let d = T::narrow(delta);
    let keep = T::one() - d;
    let mut out = normal.clone();
    for r in 0..normal.height() {
        for c in 0..normal.width() {
            if !mask.get(r, c) {
                continue;
            }
            for ((o, &i), &n) in out.pixel_mut(r, c).iter_mut().zip(normal.pixel(r, c)).zip(noise_src.pixel(r, c)) {
                *o = d * n + keep * i;
            }
        }
    }
    Ok(out)
}

/// `clamp(gain * img + offset)` to the normalized value range.
pub fn augment<T: Scalar>(img: &Tensor3<T>, gain: f64, offset: f64) -> Tensor3<T> {
    let (g, o) = (T::narrow(gain), T::narrow(offset));
    let (lo, hi) = (T::narrow(VALUE_MIN), T::narrow(VALUE_MAX));
    img.map(|v| (g * v + o).max(lo).min(hi))
}

/// Shuffle non-overlapping square blocks. Pixels outside the full-block grid
/// stay in place, so the pixel multiset is preserved.
pub fn block_shuffle<T: Scalar>(img: &Tensor3<T>, rng: &mut SeededRng) -> Tensor3<T> {
    let (h, w, _) = img.shape();
    let side = PERMUTE_BLOCK.min((h.min(w) / 2).max(1));
    let (by, bx) = (h / side, w / side);
    let mut order: Vec<usize> = (0..by * bx).collect();
    order.shuffle(rng);
    let mut out = img.clone();
    for (dst, &src) in order.iter().enumerate() {
        let (dy, dx) = ((dst / bx) * side, (dst % bx) * side);
        let (sy, sx) = ((src / bx) * side, (src % bx) * side);
        for r in 0..side {
            for c in 0..side {
                out.pixel_mut(dy + r, dx + c).copy_from_slice(img.pixel(sy + r, sx + c));
            }
        }
    }
    out
}

fn conform<T: Scalar>(src: Tensor3<T>, like: &Tensor3<T>) -> Result<Tensor3<T>> {
    src.resize_bilinear(like.height(), like.width()).with_channels(like.channels())
}

/// Pick the image blended into the anomaly region.
pub fn select_noise_source<T: Scalar>(
    cfg: &SimConfig,
    normal: &Tensor3<T>,
    current_id: &str,
    corpus: &[CorpusEntry<T>],
    rng_seed: u64,
) -> Result<NoiseSource<T>> {
    let mut rng = rng_from_seed(rng_seed);
    match (cfg.branch, cfg.structural_source) {
        (Branch::Structural, StructuralSource::SelfPermute) => Ok(NoiseSource {
            image: block_shuffle(normal, &mut rng),
            source_id: "self-permute".into(),
        }),
        (Branch::Structural, StructuralSource::TextureDir) => {
            let dir = cfg
                .texture_dir
                .as_ref()
                .ok_or_else(|| Error::invalid("texture_dir", "required for the texture source"))?;
            let files = imageio::list_pngs(dir)?;
            let path = files
                .choose(&mut rng)
                .ok_or_else(|| Error::invalid("texture_dir", format!("{} holds no PNG files", dir.display())))?;
            let texture = imageio::load_tensor::<T>(path)?;
            Ok(NoiseSource {
                image: conform(texture, normal)?,
                source_id: format!("texture:{}", imageio::stem(path)),
            })
        }
        (Branch::Logical, _) => {
            let candidates: Vec<&CorpusEntry<T>> = corpus.iter().filter(|e| e.id != current_id).collect();
            let pick = candidates
                .choose(&mut rng)
                .ok_or_else(|| Error::invalid("corpus", "logical branch needs >= 2 images"))?;
            let degrees = *cfg
                .rotation_choices
                .choose(&mut rng)
                .ok_or_else(|| Error::invalid("rotation_choices", "empty"))?;
            let rotated = pick.image.rotate_quarter_turns(degrees / 90);
            Ok(NoiseSource {
                image: conform(rotated, normal)?,
                source_id: format!("{}@{}", pick.id, degrees % 360),
            })
        }
    }
}

/// Noise-derived region mask before foreground restriction.
pub fn region_mask(height: usize, width: usize, cfg: &SimConfig, seed: u64) -> Result<BinaryMask> {
    match cfg.mask_shape {
        MaskShape::Perlin => {
            let field = perlin2d(height, width, cfg.perlin_freq, cfg.perlin_freq, seed)?;
            Ok(binarize_relative(&field, cfg.binarize_threshold))
        }
        MaskShape::Rect => {
            let span = |side: usize| ((side / 8).max(1), (side / 2).max(1));
            rect_noise(height, width, span(width), span(height), seed)
        }
    }
}

fn uniform(rng: &mut SeededRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Run the whole pipeline for one normal image. A missing foreground means
/// the whole image is foreground.
pub fn simulate_sample<T: Scalar>(
    normal: &Tensor3<T>,
    foreground: Option<&BinaryMask>,
    cfg: &SimConfig,
    current_id: &str,
    corpus: &[CorpusEntry<T>],
) -> Result<SimSample<T>> {
    cfg.validate()?;
    let (h, w) = (normal.height(), normal.width());
    let full;
    let foreground = match foreground {
        Some(fg) => fg,
        None => {
            full = BinaryMask::ones(h, w);
            &full
        }
    };
    if (foreground.height(), foreground.width()) != (h, w) {
        return Err(Error::shape(
            "simulate_sample",
            format!("foreground {h}x{w}"),
            format!("{}x{}", foreground.height(), foreground.width()),
        ));
    }

    let noise_mask = region_mask(h, w, cfg, derive_seed(cfg.seed, 0))?;
    let mask = build_anomaly_mask(&noise_mask, foreground)?;
    let source = select_noise_source(cfg, normal, current_id, corpus, derive_seed(cfg.seed, 1))?;

    let mut rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let gain = uniform(&mut rng, cfg.contrast_range);
    let offset = uniform(&mut rng, cfg.brightness_range);
    let delta = uniform(&mut rng, cfg.delta_range);
    let noise_img = augment(&source.image, gain, offset);

    Ok(SimSample {
        anomalous_image: composite(normal, &noise_img, &mask, delta)?,
        mask,
        delta_used: delta,
        source_id: source.source_id,
        branch: cfg.branch,
    })
}
