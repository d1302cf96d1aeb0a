use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anomaly_forge::imageio::{load_dynamic, load_labels, stem};
use anomaly_forge::metrics::{evaluate, EvalOptions, EvalReport, GroundTruth};
use anomaly_forge::ScoreMapf;
use anyhow::{bail, ensure, Context, Result};
use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::EvalArgs;

/// Sidecar describing a raw `.bin` score map.
#[derive(Debug, Deserialize)]
struct Sidecar {
    height: usize,
    width: usize,
    #[serde(default = "float32")]
    dtype: String,
}

fn float32() -> String {
    "float32".into()
}

#[derive(Debug, Serialize)]
struct ImageRow<'a> {
    stem: &'a str,
    score: f64,
    anomalous: bool,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    schema: u32,
    options: &'a EvalOptions,
    image_roc_auc: Option<f64>,
    pixel_roc_auc: Option<f64>,
    spro_auc: Option<f64>,
    images: Vec<ImageRow<'a>>,
    curve: Option<&'a anomaly_forge::metrics::ScoredCurve>,
}

fn read_bin(path: &Path) -> Result<ScoreMapf> {
    let side = path.with_extension("json");
    let meta: Sidecar = serde_json::from_str(
        &std::fs::read_to_string(&side).with_context(|| format!("reading sidecar {}", side.display()))?,
    )
    .with_context(|| format!("parsing {}", side.display()))?;
    ensure!(meta.dtype == "float32", "{}: unsupported dtype {:?}", side.display(), meta.dtype);
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        bytes.len() == meta.height * meta.width * 4,
        "{}: expected {} bytes for {}x{} float32, found {}",
        path.display(),
        meta.height * meta.width * 4,
        meta.height,
        meta.width,
        bytes.len()
    );
    let scores = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    ScoreMapf::new(meta.height, meta.width, scores).with_context(|| format!("loading {}", path.display()))
}

/// 16-bit maps scale by 65535, 8-bit by 255.
fn read_png(path: &Path) -> Result<ScoreMapf> {
    let img = load_dynamic(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scores: Vec<f32> = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p[0] as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p[0] as f32 / 65535.0).collect(),
        other => bail!("{}: score maps must be single-channel, got {:?}", path.display(), other.color()),
    };
    ScoreMapf::new(h, w, scores).with_context(|| format!("loading {}", path.display()))
}

fn score_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "bin")) && path.is_file() {
            if let Some(prev) = out.insert(stem(&path), path.clone()) {
                bail!("two score maps share a stem: {} and {}", prev.display(), path.display());
            }
        }
    }
    Ok(out)
}

fn load_saturation(path: Option<&Path>) -> Result<BTreeMap<u16, f64>> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let raw: BTreeMap<String, f64> = serde_json::from_str(
        &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
    )
    .with_context(|| format!("parsing {}", path.display()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse::<u16>()
                .with_context(|| format!("{}: region id {k:?} is not a 16-bit label", path.display()))?;
            Ok((id, v))
        })
        .collect()
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let scores = score_files(&args.input)?;
    let gts: BTreeMap<String, PathBuf> = anomaly_forge::imageio::list_pngs(&args.gt)?
        .into_iter()
        .map(|p| (stem(&p), p))
        .collect();
    let orphans: Vec<String> = scores
        .keys()
        .filter(|s| !gts.contains_key(*s))
        .map(|s| format!("score map {s} has no ground truth"))
        .chain(gts.keys().filter(|s| !scores.contains_key(*s)).map(|s| format!("ground truth {s} has no score map")))
        .collect();
    if !orphans.is_empty() {
        bail!("unmatched stems:\n  {}", orphans.join("\n  "));
    }
    if scores.is_empty() {
        bail!("{} holds no score maps", args.input.display());
    }
    let saturation = load_saturation(args.regions.as_deref())?;

    let pairs = scores
        .par_iter()
        .map(|(s, path)| {
            let map = match path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("bin") => read_bin(path)?,
                _ => read_png(path)?,
            };
            let gt_path = &gts[s];
            let labels = load_labels(gt_path)?;
            let (h, w) = (labels.height() as usize, labels.width() as usize);
            ensure!(
                (h, w) == (map.height(), map.width()),
                "{}: ground truth is {h}x{w} but the score map is {}x{}",
                s,
                map.height(),
                map.width()
            );
            let gt = GroundTruth::from_labels(h, w, labels.as_raw(), &saturation)
                .with_context(|| format!("reading {}", gt_path.display()))?;
            Ok((map, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let (maps, gts_loaded): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();

    let opts = EvalOptions {
        top_n: args.top_n,
        fpr_limit: args.fpr_limit,
        n_thresholds: args.thresholds,
    };
    let report: EvalReport = evaluate(&maps, &gts_loaded, &opts)?;
    let stems: Vec<&String> = scores.keys().collect();
    let out = Report {
        schema: 1,
        options: &opts,
        image_roc_auc: report.image_roc_auc,
        pixel_roc_auc: report.pixel_roc_auc,
        spro_auc: report.spro_auc,
        images: stems
            .iter()
            .zip(&report.image_scores)
            .zip(&gts_loaded)
            .map(|((s, &score), gt)| ImageRow { stem: s, score, anomalous: gt.is_anomalous() })
            .collect(),
        curve: report.curve.as_ref(),
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&out)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    let curve_path = args.out.join("curve.csv");
    let mut csv = BufWriter::new(File::create(&curve_path).with_context(|| format!("writing {}", curve_path.display()))?);
    writeln!(csv, "threshold,fpr,spro")?;
    for p in report.curve.iter().flat_map(|c| &c.points) {
        writeln!(csv, "{},{},{}", p.threshold, p.fpr, p.spro)?;
    }
    csv.flush()?;

    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!("image ROC-AUC  {}", show(report.image_roc_auc));
    println!("pixel ROC-AUC  {}", show(report.pixel_roc_auc));
    println!("sPRO-AUC@{}  {}", args.fpr_limit, show(report.spro_auc));
    Ok(())
}
