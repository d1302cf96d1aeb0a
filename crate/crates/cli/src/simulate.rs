use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anomaly_forge::imageio::{list_pngs, load_mask, load_tensor, save_mask, save_tensor, stem};
use anomaly_forge::rng::{derive_seed, rng_from_seed};
use anomaly_forge::simulate::{simulate_sample, Branch, CorpusEntry, MaskShape, SimConfig, StructuralSource};
use anomaly_forge::{BinaryMask, Tensor3f};
use anyhow::{bail, Context, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{BranchArg, ShapeArg, SimulateArgs};

const FG_SUFFIX: &str = "_fg";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema: u32,
    seed: u64,
    branch: &'a str,
    delta_range: (f64, f64),
    texture_dir: Option<String>,
    mask_shape: &'a str,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize)]
struct SampleRecord {
    image: String,
    mask: String,
    normal: String,
    branch: Branch,
    delta: f64,
    seed: u64,
    source_id: String,
    anomalous_pixels: usize,
}

struct Normal {
    id: String,
    foreground: Option<BinaryMask>,
}

fn load_inputs(dir: &Path) -> Result<(Vec<Normal>, Vec<CorpusEntry<f32>>)> {
    let files = list_pngs(dir).with_context(|| format!("listing {}", dir.display()))?;
    let fg_paths: BTreeMap<String, PathBuf> = files
        .iter()
        .filter_map(|p| stem(p).strip_suffix(FG_SUFFIX).map(|s| (s.to_string(), p.clone())))
        .collect();
    let mut normals = Vec::new();
    let mut corpus = Vec::new();
    for path in files.iter().filter(|p| !stem(p).ends_with(FG_SUFFIX)) {
        let id = stem(path);
        let image: Tensor3f = load_tensor(path).with_context(|| format!("reading {}", path.display()))?;
        let foreground = match fg_paths.get(&id) {
            Some(fg) => {
                let m = load_mask(fg).with_context(|| format!("reading {}", fg.display()))?;
                if (m.height(), m.width()) != (image.height(), image.width()) {
                    bail!(
                        "{}: foreground is {}x{} but the image is {}x{}",
                        fg.display(),
                        m.height(),
                        m.width(),
                        image.height(),
                        image.width()
                    );
                }
                Some(m)
            }
            None => None,
        };
        normals.push(Normal { id: id.clone(), foreground });
        corpus.push(CorpusEntry { id, image });
    }
    Ok((normals, corpus))
}

/// Per-sample configuration. Branch and source coin flips use their own
/// stream so they never shift the pipeline's draws.
fn sample_config(args: &SimulateArgs, sample_seed: u64) -> SimConfig {
    let mut coin = rng_from_seed(derive_seed(sample_seed, 0));
    let branch = match args.branch {
        BranchArg::Structural => Branch::Structural,
        BranchArg::Logical => Branch::Logical,
        BranchArg::Mixed if coin.gen_bool(0.5) => Branch::Logical,
        BranchArg::Mixed => Branch::Structural,
    };
    let use_texture = args.texture_dir.is_some() && coin.gen_bool(0.5);
    SimConfig {
        delta_range: (args.delta_min, args.delta_max),
        structural_source: if use_texture {
            StructuralSource::TextureDir
        } else {
            StructuralSource::SelfPermute
        },
        texture_dir: args.texture_dir.clone(),
        mask_shape: match args.mask_shape {
            ShapeArg::Perlin => MaskShape::Perlin,
            ShapeArg::Rect => MaskShape::Rect,
        },
        ..SimConfig::for_branch(branch, derive_seed(sample_seed, 1))
    }
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let (normals, corpus) = load_inputs(&args.input)?;
    if normals.is_empty() {
        bail!("{} holds no PNG images", args.input.display());
    }
    if args.branch != BranchArg::Structural && normals.len() < 2 {
        bail!("logical branch needs ≥ 2 images (found {} in {})", normals.len(), args.input.display());
    }
    SimConfig {
        delta_range: (args.delta_min, args.delta_max),
        ..SimConfig::structural(0)
    }
    .validate()?;
    let count = args.count.unwrap_or(normals.len());
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let idx = i % normals.len();
            let k = i / normals.len();
            let normal = &normals[idx];
            let sample_seed = derive_seed(args.seed, i as u64);
            let cfg = sample_config(args, sample_seed);
            let sample = simulate_sample(&corpus[idx].image, normal.foreground.as_ref(), &cfg, &normal.id, &corpus)
                .with_context(|| format!("simulating sample {i} from {}", normal.id))?;
            let image = format!("{}_anom_{k}.png", normal.id);
            let mask = format!("{}_mask_{k}.png", normal.id);
            save_tensor(&sample.anomalous_image, &args.out.join(&image))?;
            save_mask(&sample.mask, &args.out.join(&mask))?;
            Ok(SampleRecord {
                image,
                mask,
                normal: normal.id.clone(),
                branch: sample.branch,
                delta: sample.delta_used,
                seed: cfg.seed,
                source_id: sample.source_id,
                anomalous_pixels: sample.mask.count_ones(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        schema: 1,
        seed: args.seed,
        branch: match args.branch {
            BranchArg::Structural => "structural",
            BranchArg::Logical => "logical",
            BranchArg::Mixed => "mixed",
        },
        delta_range: (args.delta_min, args.delta_max),
        texture_dir: args.texture_dir.as_ref().map(|p| p.display().to_string()),
        mask_shape: match args.mask_shape {
            ShapeArg::Perlin => "perlin",
            ShapeArg::Rect => "rect",
        },
        samples: records,
    };
    let path = args.out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {count} samples to {}", args.out.display());
    Ok(())
}
