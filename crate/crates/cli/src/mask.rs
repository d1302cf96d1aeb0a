use std::path::PathBuf;

use anomaly_forge::imageio::{list_pngs, load_tensor, save_mask, save_tensor, stem};
use anomaly_forge::masking::{apply_mask, combined_mask, MaskSpec};
use anomaly_forge::rng::derive_seed;
use anomaly_forge::Tensor3f;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::MaskArgs;

#[derive(Debug, Serialize)]
struct Manifest {
    schema: u32,
    seed: u64,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize)]
struct Entry {
    input: String,
    masked: String,
    mask: String,
    spec: MaskSpec,
    masked_fraction: f64,
}

pub fn run(args: &MaskArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.fill) {
        bail!("--fill must be in [0, 1], got {}", args.fill);
    }
    let inputs: Vec<PathBuf> = if args.input.is_dir() {
        list_pngs(&args.input)?
    } else {
        vec![args.input.clone()]
    };
    if inputs.is_empty() {
        bail!("{} holds no PNG images", args.input.display());
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let entries = inputs
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let img: Tensor3f = load_tensor(path).with_context(|| format!("reading {}", path.display()))?;
            let spec = MaskSpec {
                patch_size: args.patch,
                mask_ratio: args.ratio,
                large_mask_count: args.large_count,
                large_side_range: (args.large_min, args.large_max),
                fill_value: args.fill,
                seed: derive_seed(args.seed, i as u64),
            };
            let mask = combined_mask(img.height(), img.width(), &spec)
                .with_context(|| format!("masking {}", path.display()))?;
            let masked = apply_mask(&img, &mask, args.fill as f32)?;
            let s = stem(path);
            let (masked_name, mask_name) = (format!("{s}_masked.png"), format!("{s}_mask.png"));
            save_tensor(&masked, &args.out.join(&masked_name))?;
            save_mask(&mask, &args.out.join(&mask_name))?;
            Ok(Entry {
                input: path.display().to_string(),
                masked: masked_name,
                mask: mask_name,
                masked_fraction: mask.fraction(),
                spec,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest { schema: 1, seed: args.seed, entries };
    let path = args.out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("masked {} images into {}", inputs.len(), args.out.display());
    Ok(())
}
