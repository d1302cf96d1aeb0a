use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_anomaly-forge");

fn forge(args: &[&str]) -> Command {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("ANOMALY_FORGE_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_normals(dir: &Path, n: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        RgbImage::from_fn(48, 40, |x, y| Rgb([(x * 5 + i * 30) as u8, (y * 6) as u8, ((x + y) * 3 + i) as u8]))
            .save(dir.join(format!("n{i}.png")))
            .unwrap();
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--input", p(input), "--out", p(out)];
    args.extend_from_slice(extra);
    run(&mut forge(&args))
}

#[test]
fn logical_branch_needs_two_images() {
    let tmp = TempDir::new().unwrap();
    write_normals(&tmp.path().join("in"), 1);
    let o = simulate(&tmp.path().join("in"), &tmp.path().join("out"), &["--branch", "logical"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("logical branch needs ≥ 2 images"), "{}", stderr(&o));
}

#[test]
fn zero_delta_reproduces_inputs() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 3);
    let out = tmp.path().join("out");
    let o = simulate(&input, &out, &["--delta-min", "0", "--delta-max", "0", "--count", "6", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 0..2 {
        for i in 0..3 {
            let want = image::open(input.join(format!("n{i}.png"))).unwrap().to_rgb8();
            let got = image::open(out.join(format!("n{i}_anom_{k}.png"))).unwrap().to_rgb8();
            assert_eq!(want, got, "n{i}_anom_{k}");
        }
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert!(manifest["samples"].as_array().unwrap().iter().all(|s| s["delta"] == 0.0));
}

#[test]
fn same_seed_same_bytes_different_seed_differs() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 3);
    let go = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        assert!(simulate(&input, &out, &["--seed", seed, "--count", "5"]).status.success());
        std::fs::read(out.join("manifest.json")).unwrap()
    };
    let (a, b, c) = (go("a", "7"), go("b", "7"), go("c", "8"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    for f in ["n0_anom_0.png", "n1_mask_0.png", "n2_anom_0.png"] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 3);
    let mut one = forge(&["simulate", "--seed", "3", "--count", "9", "--input", p(&input), "--out"]);
    one.arg(tmp.path().join("one")).env("ANOMALY_FORGE_THREADS", "1");
    assert!(run(&mut one).status.success());
    assert!(simulate(&input, &tmp.path().join("many"), &["--seed", "3", "--count", "9"]).status.success());
    for entry in std::fs::read_dir(tmp.path().join("one")).unwrap() {
        let path = entry.unwrap().path();
        let other = tmp.path().join("many").join(path.file_name().unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(other).unwrap(), "{}", path.display());
    }

    let mut bad = forge(&["simulate", "--input", p(&input), "--out"]);
    bad.arg(tmp.path().join("bad")).env("ANOMALY_FORGE_THREADS", "0");
    let o = run(&mut bad);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ANOMALY_FORGE_THREADS"));
}

#[test]
fn foreground_masks_confine_anomalies() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 2);
    GrayImage::from_fn(48, 40, |x, _| Luma([if x >= 24 { 255 } else { 0 }]))
        .save(input.join("n0_fg.png"))
        .unwrap();
    let out = tmp.path().join("out");
    let o = simulate(&input, &out, &["--count", "8", "--branch", "structural", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_json(&out.join("manifest.json"));
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 8);
    assert!(samples.iter().all(|s| s["normal"] != "n0_fg"));
    for k in 0..4 {
        let mask = image::open(out.join(format!("n0_mask_{k}.png"))).unwrap().to_luma8();
        assert!(mask.enumerate_pixels().all(|(x, _, px)| x >= 24 || px[0] == 0));
    }
}

#[test]
fn unreadable_input_is_named() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 2);
    std::fs::write(input.join("broken.png"), b"not a png").unwrap();
    let o = simulate(&input, &tmp.path().join("out"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("broken.png"), "{}", stderr(&o));
}

#[test]
fn texture_dir_sources_appear_in_manifest() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_normals(&input, 2);
    let tex = tmp.path().join("tex");
    std::fs::create_dir_all(&tex).unwrap();
    RgbImage::from_fn(30, 30, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, 0])).save(tex.join("weave.png")).unwrap();
    let out = tmp.path().join("out");
    let o = simulate(&input, &out, &["--branch", "structural", "--texture-dir", p(&tex), "--count", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_json(&out.join("manifest.json"));
    let sources: Vec<&str> = manifest["samples"].as_array().unwrap().iter().map(|s| s["source_id"].as_str().unwrap()).collect();
    assert!(sources.contains(&"texture:weave"));
    assert!(sources.contains(&"self-permute"));
}

#[test]
fn mask_command_writes_pairs() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    RgbImage::from_pixel(256, 256, Rgb([200, 100, 50])).save(input.join("big.png")).unwrap();
    let out = tmp.path().join("out");
    let o = run(&mut forge(&["mask", "--input", p(&input.join("big.png")), "--out", p(&out), "--seed", "5"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = image::open(out.join("big_mask.png")).unwrap().to_luma8();
    let masked = image::open(out.join("big_masked.png")).unwrap().to_rgb8();
    let on = mask.pixels().filter(|p| p[0] == 255).count();
    assert!(on >= 819 * 64, "{on}");
    for (m, px) in mask.pixels().zip(masked.pixels()) {
        let want = if m[0] == 255 { [0, 0, 0] } else { [200, 100, 50] };
        assert_eq!(px.0, want);
    }

    let o = run(&mut forge(&["mask", "--input", p(&input), "--out", p(&out), "--large-min", "300", "--large-max", "400"]));
    assert!(!o.status.success());
}

#[test]
fn sg_check_passes_and_catches_faults() {
    let tmp = TempDir::new().unwrap();
    let graph = tmp.path().join("graph.json");
    let o = run(&mut forge(&["sg-check", "--seeds", "50", "--dump-graph", p(&graph)]));
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("grad_params") && text.contains("all 10 checks passed"), "{text}");
    let g = read_json(&graph);
    let n = g["n"].as_u64().unwrap() as usize;
    let lists = g["neighbors"].as_array().unwrap();
    assert_eq!(lists.len(), n);
    for (i, l) in lists.iter().enumerate() {
        let l = l.as_array().unwrap();
        assert_eq!(l.len(), 9);
        assert!(l.iter().all(|j| j.as_u64().unwrap() as usize != i));
    }

    assert!(!run(&mut forge(&["sg-check", "--seeds", "3", "--inject-fault"])).status.success());
    assert!(run(&mut forge(&["sg-check", "--seeds", "5", "--topk", "2", "--no-eliminate-ps"])).status.success());
    assert!(!run(&mut forge(&["sg-check", "--seeds", "2", "--topk", "40"])).status.success());
}

fn labels_png(path: &Path, h: u32, w: u32, f: impl Fn(u32, u32) -> u8) {
    GrayImage::from_fn(w, h, |x, y| Luma([f(y, x)])).save(path).unwrap();
}

/// Three 8x8 images: two anomalous, one normal.
fn eval_fixture(root: &Path) -> (PathBuf, PathBuf) {
    let gt = root.join("gt");
    std::fs::create_dir_all(&gt).unwrap();
    labels_png(&gt.join("a.png"), 8, 8, |r, c| if r < 3 && c < 2 { 255 } else { 0 });
    labels_png(&gt.join("b.png"), 8, 8, |_, _| 0);
    labels_png(&gt.join("c.png"), 8, 8, |r, c| if r == 6 { 1 } else if c == 7 && r < 4 { 2 } else { 0 });
    (gt, root.join("scores"))
}

fn eval(scores: &Path, gt: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["eval", "--input", p(scores), "--gt", p(gt), "--out", p(out)];
    args.extend_from_slice(extra);
    run(&mut forge(&args))
}

#[test]
fn eval_ground_truth_as_score_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let (gt, scores) = eval_fixture(tmp.path());
    std::fs::create_dir_all(&scores).unwrap();
    for s in ["a", "b", "c"] {
        let labels = image::open(gt.join(format!("{s}.png"))).unwrap().to_luma8();
        let map: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(8, 8, |x, y| Luma([if labels.get_pixel(x, y)[0] > 0 { 65535 } else { 0 }]));
        map.save(scores.join(format!("{s}.png"))).unwrap();
    }
    let out = tmp.path().join("out");
    let o = eval(&scores, &gt, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["image_roc_auc"], 1.0);
    assert_eq!(report["pixel_roc_auc"], 1.0);
    assert_eq!(report["spro_auc"], 1.0);
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(csv.starts_with("threshold,fpr,spro\n"));
    assert!(csv.lines().count() >= 3);
}

#[test]
fn eval_constant_scores_give_half() {
    let tmp = TempDir::new().unwrap();
    let (gt, scores) = eval_fixture(tmp.path());
    std::fs::create_dir_all(&scores).unwrap();
    for s in ["a", "b", "c"] {
        labels_png(&scores.join(format!("{s}.png")), 8, 8, |_, _| 128);
    }
    let out = tmp.path().join("out");
    assert!(eval(&scores, &gt, &out, &[]).status.success());
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["image_roc_auc"], 0.5);
    assert_eq!(report["pixel_roc_auc"], 0.5);
}

fn write_bin(dir: &Path, stem: &str, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.join(format!("{stem}.bin")), bytes).unwrap();
    std::fs::write(dir.join(format!("{stem}.json")), r#"{"height": 8, "width": 8, "dtype": "float32"}"#).unwrap();
}

fn pair_auc(scores: &[f32], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

#[test]
fn eval_binary_maps_match_pair_counting() {
    let tmp = TempDir::new().unwrap();
    let (gt, scores) = eval_fixture(tmp.path());
    std::fs::create_dir_all(&scores).unwrap();
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut tops = BTreeMap::new();
    for (k, s) in ["a", "b", "c"].iter().enumerate() {
        let labels = image::open(gt.join(format!("{s}.png"))).unwrap().to_luma8();
        let vals: Vec<f32> = (0..64u32).map(|i| ((i * 7 + k as u32 * 13) % 11) as f32 / 10.0).collect();
        write_bin(&scores, s, &vals);
        all_labels.extend(labels.pixels().map(|p| p[0] > 0));
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        tops.insert(*s, sorted[..5].iter().map(|&v| v as f64).sum::<f64>() / 5.0);
        all_scores.extend(vals);
    }
    let out = tmp.path().join("out");
    let o = eval(&scores, &gt, &out, &["--top-n", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    let pixel = report["pixel_roc_auc"].as_f64().unwrap();
    assert!((pixel - pair_auc(&all_scores, &all_labels)).abs() < 1e-12);
    for row in report["images"].as_array().unwrap() {
        let want = tops[row["stem"].as_str().unwrap()];
        assert!((row["score"].as_f64().unwrap() - want).abs() < 1e-12);
    }
    let img_scores: Vec<f32> = ["a", "b", "c"].iter().map(|s| tops[s] as f32).collect();
    let img_auc = report["image_roc_auc"].as_f64().unwrap();
    assert!((img_auc - pair_auc(&img_scores, &[true, false, true])).abs() < 1e-12);
}

#[test]
fn eval_regions_file_caps_overlap() {
    let tmp = TempDir::new().unwrap();
    let (gt, scores) = eval_fixture(tmp.path());
    std::fs::create_dir_all(&scores).unwrap();
    // flags one pixel of every region and nothing else
    labels_png(&scores.join("a.png"), 8, 8, |r, c| if (r, c) == (0, 0) { 255 } else { 0 });
    labels_png(&scores.join("b.png"), 8, 8, |_, _| 0);
    labels_png(&scores.join("c.png"), 8, 8, |r, c| if (r, c) == (6, 0) || (r, c) == (0, 7) { 255 } else { 0 });
    let regions = tmp.path().join("regions.json");
    std::fs::write(&regions, r#"{"1": 1.0, "2": 1.0, "255": 1.0}"#).unwrap();
    let out = tmp.path().join("out");
    assert!(eval(&scores, &gt, &out, &["--regions", p(&regions)]).status.success());
    // every region saturates at one pixel, so sPRO is 1 at zero FPR
    assert_eq!(read_json(&out.join("report.json"))["spro_auc"], 1.0);

    std::fs::write(&regions, r#"{"one": 1.0}"#).unwrap();
    assert!(!eval(&scores, &gt, &tmp.path().join("bad"), &["--regions", p(&regions)]).status.success());
}

#[test]
fn eval_lists_orphans() {
    let tmp = TempDir::new().unwrap();
    let (gt, scores) = eval_fixture(tmp.path());
    std::fs::create_dir_all(&scores).unwrap();
    for s in ["a", "b", "zzz"] {
        labels_png(&scores.join(format!("{s}.png")), 8, 8, |_, _| 1);
    }
    let o = eval(&scores, &gt, &tmp.path().join("out"), &[]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("zzz") && err.contains("ground truth c"), "{err}");
}

#[test]
fn noise_command_dumps_fields() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("noise");
    let o = run(&mut forge(&["noise", "--out", p(&out), "--count", "2", "--height", "32", "--width", "48"]));
    assert!(o.status.success());
    for f in ["field_0.png", "field_1.png", "mask_0.png", "mask_1.png"] {
        let img = image::open(out.join(f)).unwrap();
        assert_eq!((img.width(), img.height()), (48, 32));
    }
}
