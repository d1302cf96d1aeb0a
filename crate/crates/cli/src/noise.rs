use anomaly_forge::imageio::save_mask;
use anomaly_forge::noise::{binarize_relative, perlin2d};
use anomaly_forge::rng::derive_seed;
use anyhow::{Context, Result};
use image::{GrayImage, Luma};

use crate::NoiseArgs;

pub fn run(args: &NoiseArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for k in 0..args.count {
        let field = perlin2d(args.height, args.width, args.freq, args.freq, derive_seed(args.seed, k as u64))?;
        let (lo, hi) = (field.min(), field.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = GrayImage::from_fn(args.width as u32, args.height as u32, |x, y| {
            let v = (field.get(y as usize, x as usize) - lo) / span;
            Luma([(v * 255.0).round() as u8])
        });
        let path = args.out.join(format!("field_{k}.png"));
        img.save(&path).with_context(|| format!("writing {}", path.display()))?;
        save_mask(&binarize_relative(&field, args.threshold), &args.out.join(format!("mask_{k}.png")))?;
    }
    println!("wrote {} fields to {}", args.count, args.out.display());
    Ok(())
}
