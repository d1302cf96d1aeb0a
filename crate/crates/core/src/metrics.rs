//! Detection and localization metrics: top-N image scoring, ROC-AUC, and the
//! saturated per-region overlap (sPRO) curve integrated up to an FPR limit.
//!
//! A pixel is flagged at threshold `t` when its score is strictly greater
//! than `t`. False-positive rates pool anomaly-free pixels over the whole
//! dataset.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::BinaryMask;
use crate::scalar::Scalar;

pub const DEFAULT_TOP_N: usize = 100;
pub const DEFAULT_FPR_LIMIT: f64 = 0.05;
pub const DEFAULT_THRESHOLDS: usize = 200;

/// Per-pixel anomaly scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T> {
    height: usize,
    width: usize,
    scores: Vec<T>,
}

impl<T: Scalar> ScoreMap<T> {
    pub fn new(height: usize, width: usize, scores: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("dims", format!("got {height}x{width}")));
        }
        if scores.len() != height * width {
            return Err(Error::shape("ScoreMap::new", height * width, scores.len()));
        }
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "ScoreMap::new", index });
        }
        Ok(Self { height, width, scores })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let scores = (0..height * width).map(|i| f(i / width.max(1), i % width.max(1))).collect();
        Self::new(height, width, scores)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.scores[row * self.width + col]
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }
}

/// One ground-truth defect region.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRegion {
    pub pixels: Vec<(usize, usize)>,
    /// Overlap (in pixels) at which the region counts as fully detected.
    pub saturation_area: f64,
}

impl GtRegion {
    /// Saturation equal to the region size, which reduces sPRO to PRO.
    pub fn unsaturated(pixels: Vec<(usize, usize)>) -> Self {
        let saturation_area = pixels.len() as f64;
        Self { pixels, saturation_area }
    }
}

/// Regions of one image plus the mask of its anomaly-free pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub regions: Vec<GtRegion>,
    pub normal_mask: BinaryMask,
}

impl GroundTruth {
    /// Build from a label image: `0` is anomaly-free, every other distinct
    /// value is one region. `saturation` maps label values to saturation
    /// areas; unlisted labels saturate at their full size.
    pub fn from_labels(height: usize, width: usize, labels: &[u16], saturation: &BTreeMap<u16, f64>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("GroundTruth::from_labels", height * width, labels.len()));
        }
        let mut groups: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                groups.entry(l).or_default().push((i / width, i % width));
            }
        }
        let regions = groups
            .into_iter()
            .map(|(id, pixels)| {
                let area = saturation.get(&id).copied().unwrap_or(pixels.len() as f64);
                if !(area.is_finite() && area > 0.0) {
                    return Err(Error::invalid("saturation_area", format!("label {id}: must be > 0, got {area}")));
                }
                Ok(GtRegion { pixels, saturation_area: area })
            })
            .collect::<Result<Vec<_>>>()?;
        let normal_mask = BinaryMask::new(height, width, labels.iter().map(|&l| l == 0).collect())?;
        Ok(Self { regions, normal_mask })
    }

    /// Single region covering every set pixel of `anomaly`.
    pub fn from_mask(anomaly: &BinaryMask) -> Self {
        let mut pixels = Vec::new();
        for r in 0..anomaly.height() {
            for c in 0..anomaly.width() {
                if anomaly.get(r, c) {
                    pixels.push((r, c));
                }
            }
        }
        let regions = if pixels.is_empty() { vec![] } else { vec![GtRegion::unsaturated(pixels)] };
        Self {
            regions,
            normal_mask: anomaly.invert(),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        !self.regions.is_empty()
    }

    /// Pixel labels: one on any region pixel.
    pub fn anomaly_mask(&self) -> BinaryMask {
        let mut m = BinaryMask::zeros(self.normal_mask.height(), self.normal_mask.width());
        for (r, c) in self.regions.iter().flat_map(|g| g.pixels.iter().copied()) {
            m.set(r, c, true);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub spro: f64,
}

/// Points ordered by ascending threshold (so `fpr` is non-increasing).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCurve {
    pub points: Vec<CurvePoint>,
}

/// Mean of the `top_n` largest scores, or of all scores if there are fewer.
pub fn image_score<T: Scalar>(map: &ScoreMap<T>, top_n: usize) -> Result<f64> {
    if top_n == 0 {
        return Err(Error::invalid("top_n", "must be >= 1"));
    }
    let mut v: Vec<f64> = map.scores.iter().map(|s| s.wide()).collect();
    let take = top_n.min(v.len());
    if take < v.len() {
        v.select_nth_unstable_by(take - 1, |a, b| b.total_cmp(a));
    }
    Ok(v[..take].iter().sum::<f64>() / take as f64)
}

/// Area under the ROC curve with tie-grouped thresholds; equals
/// `P(pos > neg) + P(pos == neg) / 2`.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc_auc", scores.len(), labels.len()));
    }
    if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "roc_auc", index });
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "labels",
            format!("ROC-AUC needs both classes, got {n_pos} positive and {n_neg} negative"),
        ));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().map(|s| s.wide()).zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    // twice the trapezoid area, in units of 1/(P*N)
    let mut twice_area: u128 = 0;
    let mut tp: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let (mut dtp, mut dfp) = (0u128, 0u128);
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        twice_area += dfp * (2 * tp + dtp);
        tp += dtp;
    }
    Ok(twice_area as f64 / (2 * n_pos * n_neg) as f64)
}

fn check_aligned<T: Scalar>(maps: &[ScoreMap<T>], gts: &[GroundTruth]) -> Result<()> {
    if maps.len() != gts.len() {
        return Err(Error::shape("sPRO", format!("{} ground truths", maps.len()), gts.len()));
    }
    for (i, (m, g)) in maps.iter().zip(gts).enumerate() {
        let (gh, gw) = (g.normal_mask.height(), g.normal_mask.width());
        if (m.height, m.width) != (gh, gw) {
            return Err(Error::shape(
                "sPRO",
                format!("image {i}: {}x{}", m.height, m.width),
                format!("ground truth {gh}x{gw}"),
            ));
        }
        for region in &g.regions {
            if region.pixels.is_empty() {
                return Err(Error::invalid("regions", format!("image {i} has an empty region")));
            }
            if let Some(&(r, c)) = region.pixels.iter().find(|&&(r, c)| r >= gh || c >= gw) {
                return Err(Error::invalid("regions", format!("image {i}: pixel ({r}, {c}) out of bounds")));
            }
        }
    }
    if gts.iter().all(|g| g.regions.is_empty()) {
        return Err(Error::invalid("ground truth", "sPRO needs at least one anomalous region"));
    }
    if gts.iter().all(|g| g.normal_mask.is_empty()) {
        return Err(Error::invalid("ground truth", "sPRO needs at least one anomaly-free pixel"));
    }
    Ok(())
}

/// `(fpr, spro)` at a single threshold, by direct counting.
pub fn spro_at_threshold<T: Scalar>(maps: &[ScoreMap<T>], gts: &[GroundTruth], t: f64) -> Result<(f64, f64)> {
    check_aligned(maps, gts)?;
    let (mut fp, mut negatives) = (0usize, 0usize);
    let (mut overlap_sum, mut n_regions) = (0.0, 0usize);
    for (m, g) in maps.iter().zip(gts) {
        for (s, &normal) in m.scores.iter().zip(g.normal_mask.bits()) {
            if normal {
                negatives += 1;
                fp += (s.wide() > t) as usize;
            }
        }
        for region in &g.regions {
            let hit = region.pixels.iter().filter(|&&(r, c)| m.get(r, c).wide() > t).count();
            overlap_sum += (hit as f64 / region.saturation_area).min(1.0);
            n_regions += 1;
        }
    }
    Ok((fp as f64 / negatives as f64, overlap_sum / n_regions as f64))
}

/// Number of entries of ascending `sorted` strictly greater than `t`.
fn count_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

/// Thresholds for the sweep, ascending: one value below every score, then
/// every unique score, or `n_thresholds` evenly spaced quantiles of them.
fn sweep_thresholds(unique: &[f64], n_thresholds: usize) -> Vec<f64> {
    let lowest = unique[0];
    let below = lowest - lowest.abs().max(1.0);
    let mut out = vec![below];
    if unique.len() <= n_thresholds {
        out.extend_from_slice(unique);
    } else {
        let last = unique.len() - 1;
        let steps = n_thresholds.max(2) - 1;
        let mut prev = usize::MAX;
        for i in 0..=steps {
            let idx = ((i as f64 * last as f64) / steps as f64).round() as usize;
            if idx != prev {
                out.push(unique[idx]);
                prev = idx;
            }
        }
    }
    out
}

/// FPR-sPRO curve over a threshold sweep.
pub fn spro_curve<T: Scalar>(maps: &[ScoreMap<T>], gts: &[GroundTruth], n_thresholds: usize) -> Result<ScoredCurve> {
    check_aligned(maps, gts)?;
    if n_thresholds == 0 {
        return Err(Error::invalid("n_thresholds", "must be >= 1"));
    }
    let mut negatives: Vec<f64> = Vec::new();
    let mut regions: Vec<(Vec<f64>, f64)> = Vec::new();
    for (m, g) in maps.iter().zip(gts) {
        negatives.extend(
            m.scores
                .iter()
                .zip(g.normal_mask.bits())
                .filter(|(_, &n)| n)
                .map(|(s, _)| s.wide()),
        );
        for region in &g.regions {
            let mut s: Vec<f64> = region.pixels.iter().map(|&(r, c)| m.get(r, c).wide()).collect();
            s.sort_by(f64::total_cmp);
            regions.push((s, region.saturation_area));
        }
    }
    negatives.sort_by(f64::total_cmp);

    let mut unique: Vec<f64> = maps.iter().flat_map(|m| m.scores.iter().map(|s| s.wide())).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();

    let n_neg = negatives.len() as f64;
    let n_reg = regions.len() as f64;
    let points = sweep_thresholds(&unique, n_thresholds)
        .into_iter()
        .map(|t| {
            let fpr = count_above(&negatives, t) as f64 / n_neg;
            let spro = regions
                .iter()
                .map(|(s, sat)| (count_above(s, t) as f64 / sat).min(1.0))
                .sum::<f64>()
                / n_reg;
            CurvePoint { threshold: t, fpr, spro }
        })
        .collect();
    Ok(ScoredCurve { points })
}

/// Trapezoidal area under `spro(fpr)` on `[0, fpr_limit]`, divided by
/// `fpr_limit`. The curve is linearly interpolated at the limit.
pub fn normalized_area(curve: &ScoredCurve, fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::invalid("fpr_limit", format!("must be in (0, 1], got {fpr_limit}")));
    }
    // walk from the highest threshold: fpr and spro both non-decreasing
    let mut pts: Vec<(f64, f64)> = curve.points.iter().rev().map(|p| (p.fpr, p.spro)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.first().is_none_or(|p| p.0 > 0.0) {
        pts.insert(0, (0.0, 0.0));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= fpr_limit {
            break;
        }
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_at = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            area += (fpr_limit - x0) * (y0 + y_at) / 2.0;
            break;
        }
    }
    Ok((area / fpr_limit).clamp(0.0, 1.0))
}

/// Normalized area under the FPR-sPRO curve up to `fpr_limit`.
pub fn spro_auc<T: Scalar>(
    maps: &[ScoreMap<T>],
    gts: &[GroundTruth],
    fpr_limit: f64,
    n_thresholds: usize,
) -> Result<f64> {
    normalized_area(&spro_curve(maps, gts, n_thresholds)?, fpr_limit)
}

/// ROC-AUC over all pixels of all images pooled together.
pub fn pixel_roc_auc<T: Scalar>(maps: &[ScoreMap<T>], gt_pixel_labels: &[BinaryMask]) -> Result<f64> {
    if maps.len() != gt_pixel_labels.len() {
        return Err(Error::shape("pixel_roc_auc", maps.len(), gt_pixel_labels.len()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, g) in maps.iter().zip(gt_pixel_labels) {
        if (m.height, m.width) != (g.height(), g.width()) {
            return Err(Error::shape(
                "pixel_roc_auc",
                format!("{}x{}", m.height, m.width),
                format!("{}x{}", g.height(), g.width()),
            ));
        }
        scores.extend(m.scores.iter().map(|s| s.wide()));
        labels.extend_from_slice(g.bits());
    }
    roc_auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOptions {
    pub top_n: usize,
    pub fpr_limit: f64,
    pub n_thresholds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            fpr_limit: DEFAULT_FPR_LIMIT,
            n_thresholds: DEFAULT_THRESHOLDS,
        }
    }
}

/// Metrics that are undefined for the data (e.g. a single class) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub image_roc_auc: Option<f64>,
    pub pixel_roc_auc: Option<f64>,
    pub spro_auc: Option<f64>,
    pub image_scores: Vec<f64>,
    pub curve: Option<ScoredCurve>,
}

/// All metrics for aligned score maps and ground truths.
pub fn evaluate<T: Scalar>(maps: &[ScoreMap<T>], gts: &[GroundTruth], opts: &EvalOptions) -> Result<EvalReport> {
    check_shapes(maps, gts)?;
    let image_scores = maps
        .iter()
        .map(|m| image_score(m, opts.top_n))
        .collect::<Result<Vec<_>>>()?;
    let image_labels: Vec<bool> = gts.iter().map(GroundTruth::is_anomalous).collect();
    let image_roc_auc = roc_auc(&image_scores, &image_labels).ok();

    let pixel_labels: Vec<BinaryMask> = gts.iter().map(GroundTruth::anomaly_mask).collect();
    let pixel_roc_auc = pixel_roc_auc(maps, &pixel_labels).ok();

    let curve = spro_curve(maps, gts, opts.n_thresholds).ok();
    let spro_auc = match &curve {
        Some(c) => Some(normalized_area(c, opts.fpr_limit)?),
        None => None,
    };
    Ok(EvalReport {
        image_roc_auc,
        pixel_roc_auc,
        spro_auc,
        image_scores,
        curve,
    })
}

fn check_shapes<T: Scalar>(maps: &[ScoreMap<T>], gts: &[GroundTruth]) -> Result<()> {
    if maps.len() != gts.len() {
        return Err(Error::shape("evaluate", maps.len(), gts.len()));
    }
    for (m, g) in maps.iter().zip(gts) {
        if (m.height, m.width) != (g.normal_mask.height(), g.normal_mask.width()) {
            return Err(Error::shape(
                "evaluate",
                format!("{}x{}", m.height, m.width),
                format!("{}x{}", g.normal_mask.height(), g.normal_mask.width()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut p, mut n) = (0u128, 0u128, 0u128);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                p += 1;
            } else {
                n += 1;
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    Ordering::Greater => 2,
                    Ordering::Equal => 1,
                    Ordering::Less => 0,
                };
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn image_score_cases() {
        let c = ScoreMap::new(4, 5, vec![0.3f64; 20]).unwrap();
        assert!((image_score(&c, 100).unwrap() - 0.3).abs() < 1e-15);
        let m = ScoreMap::from_fn(20, 20, |r, _| if r < 5 { 1.0f64 } else { 0.0 }).unwrap();
        assert_eq!(image_score(&m, 100).unwrap(), 1.0);
        let ten = ScoreMap::new(1, 10, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(image_score(&ten, 3).unwrap(), 8.0);
        assert!(image_score(&ten, 0).is_err());
        assert!(ScoreMap::<f64>::new(0, 0, vec![]).is_err());
    }

    #[test]
    fn roc_auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[false, true, false, true, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        let err = roc_auc(&[0.1, 0.2], &[true, true]).unwrap_err();
        assert!(err.to_string().contains("both classes"));
        assert!(roc_auc(&[0.1, f64::NAN], &[true, false]).is_err());
    }

    fn one_region_fixture() -> (Vec<ScoreMap<f64>>, Vec<GroundTruth>) {
        // 4x4 image, region = top-left 2x2, saturation 2
        let region = GtRegion { pixels: vec![(0, 0), (0, 1), (1, 0), (1, 1)], saturation_area: 2.0 };
        let normal = BinaryMask::from_fn(4, 4, |r, c| !(r < 2 && c < 2));
        let map = ScoreMap::from_fn(4, 4, |r, c| if (r, c) == (0, 0) { 0.9 } else { 0.1 * (r + c) as f64 / 6.0 }).unwrap();
        (vec![map], vec![GroundTruth { regions: vec![region], normal_mask: normal }])
    }

    #[test]
    fn spro_threshold_limits() {
        let (maps, gts) = one_region_fixture();
        assert_eq!(spro_at_threshold(&maps, &gts, -1.0).unwrap(), (1.0, 1.0));
        assert_eq!(spro_at_threshold(&maps, &gts, 1.0).unwrap(), (0.0, 0.0));
        let (fpr, spro) = spro_at_threshold(&maps, &gts, 0.5).unwrap();
        assert_eq!((fpr, spro), (0.0, 0.5));
    }

    #[test]
    fn spro_rejects_bad_inputs() {
        let (maps, gts) = one_region_fixture();
        assert!(spro_at_threshold(&maps, &[], 0.0).is_err());
        let clean = vec![GroundTruth::from_mask(&BinaryMask::zeros(4, 4))];
        assert!(spro_at_threshold(&maps, &clean, 0.0).is_err());
        let full = vec![GroundTruth::from_mask(&BinaryMask::ones(4, 4))];
        assert!(spro_at_threshold(&maps, &full, 0.0).is_err());
        assert!(spro_auc(&maps, &gts, 0.0, 10).is_err());
        assert!(spro_auc(&maps, &gts, 1.5, 10).is_err());
    }

    #[test]
    fn ideal_detector_scores_one() {
        let anomaly = BinaryMask::from_fn(8, 8, |r, c| r > 4 && c > 3);
        let map = ScoreMap::from_fn(8, 8, |r, c| if anomaly.get(r, c) { 1.0f64 } else { 0.0 }).unwrap();
        let gts = vec![GroundTruth::from_mask(&anomaly)];
        assert_eq!(spro_auc(std::slice::from_ref(&map), &gts, 0.05, 200).unwrap(), 1.0);
        assert_eq!(spro_auc(&[map], &gts, 1.0, 200).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_follow_the_diagonal() {
        // curve is (0,0) -> (1,1); area up to 0.05 is 0.05^2 / 2
        let anomaly = BinaryMask::from_fn(4, 4, |r, _| r == 0);
        let map = ScoreMap::new(4, 4, vec![0.5f64; 16]).unwrap();
        let gts = vec![GroundTruth::from_mask(&anomaly)];
        let got = spro_auc(&[map], &gts, 0.05, 200).unwrap();
        assert!((got - 0.025).abs() < 1e-15, "{got}");
    }

    #[test]
    fn curve_thresholds_are_subsampled() {
        let mut rng = rng_from_seed(1);
        let anomaly = BinaryMask::from_fn(32, 32, |r, c| r < 8 && c < 8);
        let map = ScoreMap::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0f64)).unwrap();
        let curve = spro_curve(&[map], &[GroundTruth::from_mask(&anomaly)], 50).unwrap();
        assert_eq!(curve.points.len(), 51);
        assert!(curve.points.windows(2).all(|w| w[0].fpr >= w[1].fpr && w[0].spro >= w[1].spro));
        assert_eq!((curve.points[0].fpr, curve.points[0].spro), (1.0, 1.0));
        let last = curve.points.last().unwrap();
        assert_eq!((last.fpr, last.spro), (0.0, 0.0));
    }

    #[test]
    fn labels_define_regions() {
        let labels = [0u16, 3, 3, 0, 0, 7, 0, 0, 0];
        let sat = BTreeMap::from([(7u16, 0.5)]);
        let gt = GroundTruth::from_labels(3, 3, &labels, &sat).unwrap();
        assert_eq!(gt.regions.len(), 2);
        assert_eq!(gt.regions[0].saturation_area, 2.0);
        assert_eq!(gt.regions[1].saturation_area, 0.5);
        assert_eq!(gt.normal_mask.count_ones(), 6);
        let bad = BTreeMap::from([(3u16, 0.0)]);
        assert!(GroundTruth::from_labels(3, 3, &labels, &bad).is_err());
    }

    #[test]
    fn evaluate_oracle_detector() {
        let masks = [
            BinaryMask::from_fn(8, 8, |r, c| r < 3 && c < 3),
            BinaryMask::zeros(8, 8),
            BinaryMask::from_fn(8, 8, |r, c| r > 5 && c > 2),
        ];
        let maps: Vec<ScoreMap<f32>> = masks
            .iter()
            .map(|m| ScoreMap::from_fn(8, 8, |r, c| m.get(r, c) as u8 as f32).unwrap())
            .collect();
        let gts: Vec<GroundTruth> = masks.iter().map(GroundTruth::from_mask).collect();
        let rep = evaluate(&maps, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(rep.image_roc_auc, Some(1.0));
        assert_eq!(rep.pixel_roc_auc, Some(1.0));
        assert_eq!(rep.spro_auc, Some(1.0));
    }

    proptest! {
        #[test]
        fn roc_matches_pair_counting(seed in any::<u64>(), n in 2usize..120) {
            let mut rng = rng_from_seed(seed);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
        }

        #[test]
        fn roc_invariant_under_monotone_map(seed in any::<u64>(), n in 2usize..80) {
            let mut rng = rng_from_seed(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let base = roc_auc(&scores, &labels).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 2.0 + 1.0).collect();
            prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), base);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&neg, &labels).unwrap() + base - 1.0).abs() < 1e-12);
        }

        #[test]
        fn spro_monotone_in_threshold(seed in any::<u64>(), t in 0.0f64..1.0, dt in 0.0f64..0.5) {
            let mut rng = rng_from_seed(seed);
            let anomaly = BinaryMask::from_fn(6, 6, |r, c| r < 3 && c < 2);
            let map = ScoreMap::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0f64)).unwrap();
            let gts = [GroundTruth::from_mask(&anomaly)];
            let maps = [map];
            let (f0, s0) = spro_at_threshold(&maps, &gts, t).unwrap();
            let (f1, s1) = spro_at_threshold(&maps, &gts, t + dt).unwrap();
            prop_assert!(f1 <= f0 && s1 <= s0);
            let auc = spro_auc(&maps, &gts, 0.05, 200).unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
        }

        #[test]
        fn image_score_monotone(seed in any::<u64>(), bump in 0.0f64..1.0) {
            let mut rng = rng_from_seed(seed);
            let base: Vec<f64> = (0..150).map(|_| rng.gen_range(0.0..1.0)).collect();
            let raised: Vec<f64> = base.iter().map(|v| v + bump * rng.gen_range(0.0..1.0)).collect();
            let a = image_score(&ScoreMap::new(10, 15, base).unwrap(), 100).unwrap();
            let b = image_score(&ScoreMap::new(10, 15, raised).unwrap(), 100).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
