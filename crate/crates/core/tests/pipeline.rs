use std::collections::BTreeMap;

use anomaly_forge::masking::{combined_mask, grid_mask, masked_patch_count, MaskSpec};
use anomaly_forge::metrics::{spro_at_threshold, spro_auc, spro_curve, GroundTruth, ScoreMap};
use anomaly_forge::rng::rng_from_seed;
use anomaly_forge::sgblock::{sg_backward, sg_forward, SgParams};
use anomaly_forge::simulate::{simulate_sample, Branch, CorpusEntry, SimConfig};
use anomaly_forge::{imageio, BinaryMask, ScoreMapd, SgParamsd, SgParamsf, Tensor3d, Tensor3f};
use proptest::prelude::*;
use rand::Rng;

fn corpus(n: usize, h: usize, w: usize) -> Vec<CorpusEntry<f32>> {
    (0..n)
        .map(|i| CorpusEntry {
            id: format!("img{i}"),
            image: Tensor3f::from_fn(h, w, 3, |r, c, k| ((r * 7 + c * 3 + k * 11 + i * 17) % 64) as f32 / 63.0),
        })
        .collect()
}

#[test]
fn simulated_samples_survive_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let images = corpus(3, 40, 56);
    for (i, branch) in [Branch::Structural, Branch::Logical].into_iter().enumerate() {
        let cfg = SimConfig::for_branch(branch, 11 + i as u64);
        let s = simulate_sample(&images[0].image, None, &cfg, "img0", &images).unwrap();
        let again = simulate_sample(&images[0].image, None, &cfg, "img0", &images).unwrap();
        assert_eq!(s, again);

        let path = dir.path().join(format!("s{i}.png"));
        imageio::save_tensor(&s.anomalous_image, &path).unwrap();
        let back: Tensor3f = imageio::load_tensor(&path).unwrap();
        assert_eq!(back.shape(), s.anomalous_image.shape());
        let err = back
            .as_slice()
            .iter()
            .zip(s.anomalous_image.as_slice())
            .fold(0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 0.5 / 255.0 + 1e-6, "{err}");

        let mpath = dir.path().join(format!("m{i}.png"));
        imageio::save_mask(&s.mask, &mpath).unwrap();
        assert_eq!(imageio::load_mask(&mpath).unwrap(), s.mask);
    }
}

#[test]
fn single_and_double_precision_agree() {
    let pd = SgParamsd::random(16, 8, 4, 5, 3).unwrap();
    let pf: SgParamsf = SgParams {
        wf: pd.wf.cast(),
        bf: pd.bf.iter().map(|&v| v as f32).collect(),
        wg: pd.wg.cast(),
        bg: pd.bg.iter().map(|&v| v as f32).collect(),
        wh: pd.wh.cast(),
        bh: pd.bh.iter().map(|&v| v as f32).collect(),
        wu: pd.wu.cast(),
        bu: pd.bu.iter().map(|&v| v as f32).collect(),
        c_in: pd.c_in,
        c_out: pd.c_out,
        reduction: pd.reduction,
        k: pd.k,
        pos_dim: pd.pos_dim,
        eliminate_positional: pd.eliminate_positional,
    };
    let mut rng = rng_from_seed(8);
    let xd = Tensor3d::from_fn(6, 5, 16, |_, _, _| rng.gen_range(-1.0..1.0));
    let xf = xd.cast::<f32>();
    let (od, cd) = sg_forward(&xd, &pd).unwrap();
    let (of, cf) = sg_forward(&xf, &pf).unwrap();
    assert_eq!(cd.graph(), cf.graph());
    let err = od.as_slice().iter().zip(of.as_slice()).fold(0f64, |m, (a, b)| m.max((a - *b as f64).abs()));
    assert!(err < 1e-5, "{err}");

    let gd = od.map(|_| 1.0);
    let gf = of.map(|_| 1.0f32);
    let (dxd, _) = sg_backward(&gd, &cd, &pd).unwrap();
    let (dxf, _) = sg_backward(&gf, &cf, &pf).unwrap();
    let err = dxd.as_slice().iter().zip(dxf.as_slice()).fold(0f64, |m, (a, b)| m.max((a - *b as f64).abs()));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn label_image_ground_truth_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gt.png");
    let img = image::GrayImage::from_fn(6, 4, |x, y| image::Luma([if y == 0 { 3 } else if x == 5 { 9 } else { 0 }]));
    img.save(&path).unwrap();
    let labels = imageio::load_labels(&path).unwrap();
    let gt = GroundTruth::from_labels(4, 6, labels.as_raw(), &BTreeMap::new()).unwrap();
    assert_eq!(gt.regions.len(), 2);
    assert_eq!(gt.regions[0].pixels.len(), 6);
    assert_eq!(gt.regions[1].pixels.len(), 3);
    assert_eq!(gt.normal_mask.count_ones(), 15);
}

/// Direct-count PRO-AUC over the full FPR range.
fn pro_oracle(maps: &[ScoreMapd], gts: &[GroundTruth]) -> f64 {
    let mut ts: Vec<f64> = maps.iter().flat_map(|m| m.scores().to_vec()).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.insert(0, ts[0] - 1.0);
    let mut pts: Vec<(f64, f64)> = ts.iter().map(|&t| spro_at_threshold(maps, gts, t).unwrap()).collect();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_masks_hit_the_exact_count(h in 1usize..80, w in 1usize..80, patch in 1usize..12, ratio in 0.0f64..=1.0, seed: u64) {
        let spec = MaskSpec { patch_size: patch, mask_ratio: ratio, large_mask_count: 0, seed, ..MaskSpec::default() };
        if patch > h.min(w) {
            prop_assert!(grid_mask(h, w, &spec).is_err());
            return Ok(());
        }
        let grid = grid_mask(h, w, &spec).unwrap();
        let (ph, pw) = (h.div_ceil(patch), w.div_ceil(patch));
        let mut count = 0;
        for pr in 0..ph {
            for pc in 0..pw {
                let (r0, c0) = (pr * patch, pc * patch);
                let cells: Vec<bool> = (r0..(r0 + patch).min(h))
                    .flat_map(|r| (c0..(c0 + patch).min(w)).map(move |c| (r, c)))
                    .map(|(r, c)| grid.get(r, c))
                    .collect();
                prop_assert!(cells.iter().all(|&b| b) || cells.iter().all(|&b| !b));
                count += cells[0] as usize;
            }
        }
        prop_assert_eq!(count, masked_patch_count(ratio, ph * pw));
        let small = MaskSpec { large_side_range: (1, h.min(w)), ..spec };
        let both = combined_mask(h, w, &small).unwrap();
        prop_assert!(grid.bits().iter().zip(both.bits()).all(|(g, b)| !g || *b));
    }

    #[test]
    fn spro_at_full_range_matches_direct_count(seed: u64, levels in 2u32..20) {
        let mut rng = rng_from_seed(seed);
        let masks: Vec<BinaryMask> = (0..3).map(|_| {
            let (r0, c0) = (rng.gen_range(0..5), rng.gen_range(0..5));
            let (rh, cw) = (rng.gen_range(1..4), rng.gen_range(1..4));
            BinaryMask::from_fn(8, 8, |r, c| (r0..r0 + rh).contains(&r) && (c0..c0 + cw).contains(&c))
        }).collect();
        let gts: Vec<GroundTruth> = masks.iter().map(GroundTruth::from_mask).collect();
        let maps: Vec<ScoreMapd> = masks.iter().map(|m| {
            ScoreMap::from_fn(8, 8, |r, c| {
                let bump = if m.get(r, c) { 0.4 } else { 0.0 };
                ((bump + rng.gen_range(0.0..1.0)) * levels as f64).floor() / levels as f64
            }).unwrap()
        }).collect();
        let got = spro_auc(&maps, &gts, 1.0, 1000).unwrap();
        prop_assert!((got - pro_oracle(&maps, &gts)).abs() < 1e-12);

        let curve = spro_curve(&maps, &gts, 1000).unwrap();
        for p in &curve.points {
            let (f, s) = spro_at_threshold(&maps, &gts, p.threshold).unwrap();
            prop_assert_eq!((f, s), (p.fpr, p.spro));
        }
    }
}
