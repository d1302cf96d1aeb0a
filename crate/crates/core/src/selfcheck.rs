//! Seeded self-check suite for the SG block and the loss kernels: shapes,
//! attention invariants, a brute-force neighbor oracle, and finite-difference
//! gradient checks. Backs the `sg-check` command.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, max_scaled_error, Tolerance};
use crate::losses::{focal_loss, l1_loss, l2_aux_loss, lsgan_discriminator, lsgan_generator};
use crate::noise::BinaryMask;
use crate::rng::{derive_seed, rng_from_seed, SeededRng};
use crate::sgblock::{
    dense_attention, positional_similarity, sg_backward, sg_forward, sg_forward_with_graph, sincos_pos_encoding,
    sparse_similarity, topk_neighbors, SgParams, SparseGraph,
};
use crate::tensor::{Matrix, Tensor3};

/// Step for central differences.
pub const FD_EPS: f64 = 1e-5;
/// Gradient agreement required of every partial.
pub const GRAD_TOLERANCE: Tolerance = Tolerance::new(1e-4, 1e-6);
pub const INVARIANT_TOLERANCE: f64 = 1e-12;

/// Smallest gap allowed between the winning and runner-up neighbor in the
/// max-relative step. Closer races sit on a kink of the max, where a finite
/// difference does not measure the derivative.
const ARGMAX_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub base_seed: u64,
    /// Fixed neighbor count; random in `1..=5` when `None`.
    pub k: Option<usize>,
    pub eliminate_positional: bool,
    /// Corrupt analytic gradients so the gradient checks must fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: 0,
            k: None,
            eliminate_positional: true,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn measured(name: &'static str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name,
            cases,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            detail: None,
        }
    }

    fn failed(name: &'static str, err: Error) -> Self {
        Self {
            name,
            cases: 0,
            max_error: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
            detail: Some(err.to_string()),
        }
    }
}

fn run(name: &'static str, f: impl FnOnce() -> Result<CheckOutcome>) -> CheckOutcome {
    f().unwrap_or_else(|e| CheckOutcome::failed(name, e))
}

/// Every check, in a fixed order.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    vec![
        run("forward_shapes", || check_shapes(opts)),
        run("attention_row_sums", || check_attention_rows(opts)),
        run("uniform_attention", || check_uniform_attention(opts)),
        run("positional_similarity", || check_positional(opts)),
        run("sparse_similarity_range", || check_sparse_range(opts)),
        run("topk_brute_force", || check_topk(opts.seeds.max(1) * 10, 16, opts.base_seed)),
        run("stale_cache", || check_stale_cache(opts)),
        run("grad_input", || check_gradients(opts, GradTarget::Input)),
        run("grad_params", || check_gradients(opts, GradTarget::Params)),
        run("loss_gradients", || check_loss_gradients(opts)),
    ]
}

fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize, span: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-span..span))
}

fn uniform_tensor(rng: &mut SeededRng, h: usize, w: usize, c: usize) -> Tensor3<f64> {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// A random block configuration small enough for finite differences.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub x: Tensor3<f64>,
    pub params: SgParams<f64>,
    /// Random weights `R` of the probe loss `sum(out * R)`.
    pub probe: Tensor3<f64>,
}

/// Draw an instance with `H, W <= 4`, `C_in <= 8`, `K <= 5` (or `k`).
pub fn small_instance(seed: u64, k: Option<usize>, eliminate_positional: bool) -> Result<SmallInstance> {
    if let Some(k) = k {
        if k == 0 || k >= 16 {
            return Err(Error::invalid("k", format!("need 1 <= k <= 15 on 4x4 instances, got {k}")));
        }
    }
    let mut rng = rng_from_seed(seed);
    let (h, w) = loop {
        let (h, w) = (rng.gen_range(1..=4usize), rng.gen_range(1..=4usize));
        if h * w > k.unwrap_or(1).max(1) {
            break (h, w);
        }
    };
    let n = h * w;
    let k = k.unwrap_or_else(|| rng.gen_range(1..=5usize.min(n - 1)));
    let c_in = rng.gen_range(1..=8usize);
    let divisors: Vec<usize> = (1..=c_in).filter(|r| c_in % r == 0).collect();
    let reduction = *divisors.choose(&mut rng).expect("1 divides everything");
    let c_out = rng.gen_range(1..=6usize);
    let mut params = SgParams::random(c_in, c_out, reduction, k, rng.gen())?;
    params.eliminate_positional = eliminate_positional;
    let x = uniform_tensor(&mut rng, h, w, c_in);
    let probe = uniform_tensor(&mut rng, h, w, c_out);
    Ok(SmallInstance { x, params, probe })
}

/// Smallest winner/runner-up gap over all max-relative races in `x`.
fn argmax_margin(x: &Tensor3<f64>, graph: &SparseGraph) -> f64 {
    let xm = x.flatten();
    let mut margin = f64::INFINITY;
    for list in &graph.neighbors {
        if list.len() < 2 {
            continue;
        }
        for c in 0..xm.cols() {
            let mut vals: Vec<f64> = list.iter().map(|&j| xm.get(j, c)).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(vals[0] - vals[1]);
        }
    }
    margin
}

/// Like [`small_instance`], redrawing until every max-relative race is
/// decided by at least [`ARGMAX_MARGIN`].
pub fn smooth_instance(seed: u64, k: Option<usize>, eliminate_positional: bool) -> Result<(SmallInstance, SparseGraph)> {
    for attempt in 0..1000 {
        let inst = small_instance(derive_seed(seed, attempt), k, eliminate_positional)?;
        let (_, cache) = sg_forward(&inst.x, &inst.params)?;
        if argmax_margin(&inst.x, cache.graph()) >= ARGMAX_MARGIN {
            let graph = cache.graph().clone();
            return Ok((inst, graph));
        }
    }
    Err(Error::invalid("seed", format!("no instance clear of max ties near seed {seed}")))
}

fn probe_loss(out: &Tensor3<f64>, probe: &Tensor3<f64>) -> f64 {
    out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Input,
    Params,
}

/// Largest scaled error between analytic and central-difference gradients
/// of `sum(out * R)` on one instance, with the neighbor graph held fixed.
pub fn gradient_error(inst: &SmallInstance, graph: &SparseGraph, target: GradTarget, inject_fault: bool) -> Result<f64> {
    let (_, cache) = sg_forward_with_graph(&inst.x, &inst.params, graph)?;
    let (dx, grads) = sg_backward(&inst.probe, &cache, &inst.params)?;
    let (mut analytic, numeric) = match target {
        GradTarget::Input => {
            let (h, w, c) = inst.x.shape();
            let numeric = central_difference(
                |v| {
                    let x = Tensor3::new(h, w, c, v.to_vec()).expect("same shape");
                    let (o, _) = sg_forward_with_graph(&x, &inst.params, graph).expect("valid instance");
                    probe_loss(&o, &inst.probe)
                },
                inst.x.as_slice(),
                FD_EPS,
            );
            (dx.as_slice().to_vec(), numeric)
        }
        GradTarget::Params => {
            let mut p = inst.params.clone();
            let numeric = central_difference(
                |v| {
                    p.set_from_slice(v).expect("same length");
                    let (o, _) = sg_forward_with_graph(&inst.x, &p, graph).expect("valid instance");
                    probe_loss(&o, &inst.probe)
                },
                &inst.params.to_vec(),
                FD_EPS,
            );
            (grads.to_vec(), numeric)
        }
    };
    if inject_fault {
        for a in analytic.iter_mut() {
            *a = *a * 1.01 + 1e-3;
        }
    }
    Ok(max_scaled_error(GRAD_TOLERANCE, &analytic, &numeric))
}

fn check_gradients(opts: &SuiteOptions, target: GradTarget) -> Result<CheckOutcome> {
    let name = match target {
        GradTarget::Input => "grad_input",
        GradTarget::Params => "grad_params",
    };
    let mut worst: f64 = 0.0;
    for s in 0..opts.seeds {
        let (inst, graph) = smooth_instance(derive_seed(opts.base_seed, s as u64), opts.k, opts.eliminate_positional)?;
        worst = worst.max(gradient_error(&inst, &graph, target, opts.inject_fault)?);
    }
    Ok(CheckOutcome::measured(name, opts.seeds, worst, GRAD_TOLERANCE.relative))
}

/// Random `(f, g, h)` projections on an `h x w` grid.
fn random_projections(rng: &mut SeededRng) -> (usize, usize, Matrix<f64>, Matrix<f64>, Matrix<f64>) {
    let (h, w) = (rng.gen_range(1..=8usize), rng.gen_range(1..=8usize));
    let d = rng.gen_range(1..=8usize);
    let n = h * w;
    let span = rng.gen_range(0.1..5.0);
    let f = uniform_matrix(rng, n, d, span);
    let g = uniform_matrix(rng, n, d, span);
    let cols = rng.gen_range(1..=4usize);
    let v = uniform_matrix(rng, n, cols, 1.0);
    (h, w, f, g, v)
}

fn check_shapes(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut bad = 0usize;
    for s in 0..opts.seeds {
        let inst = small_instance(derive_seed(opts.base_seed ^ 0x5a, s as u64), opts.k, opts.eliminate_positional)?;
        let p = &inst.params;
        let (out, cache) = sg_forward(&inst.x, p)?;
        let (h, w, _) = inst.x.shape();
        let (dx, grads) = sg_backward(&inst.probe, &cache, p)?;
        let ok = out.shape() == (h, w, p.c_out)
            && cache.graph().is_well_formed(p.k)
            && dx.shape() == inst.x.shape()
            && cache.concat().cols() == p.c_out + p.c_in
            && grads.to_vec().len() == p.to_vec().len()
            && out.as_slice().iter().all(|v| v.is_finite());
        bad += !ok as usize;
    }
    Ok(CheckOutcome::measured("forward_shapes", opts.seeds, bad as f64, 0.0))
}

fn check_attention_rows(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for s in 0..opts.seeds {
        let mut rng = rng_from_seed(derive_seed(opts.base_seed ^ 0xa1, s as u64));
        let (_, _, f, g, v) = random_projections(&mut rng);
        let (wd, _) = dense_attention(&f, &g, &v)?;
        for i in 0..wd.rows() {
            let sum: f64 = wd.row(i).iter().sum();
            worst = worst.max((sum - 1.0).abs());
            if wd.row(i).iter().any(|&p| p < 0.0) {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(CheckOutcome::measured("attention_row_sums", opts.seeds, worst, INVARIANT_TOLERANCE))
}

fn check_uniform_attention(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for s in 0..opts.seeds {
        let mut rng = rng_from_seed(derive_seed(opts.base_seed ^ 0xb2, s as u64));
        let (h, w, _, _, v) = random_projections(&mut rng);
        let n = h * w;
        let d = rng.gen_range(1..=8usize);
        let frow: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let grow: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = Matrix::from_fn(n, d, |_, j| frow[j]);
        let g = Matrix::from_fn(n, d, |_, j| grow[j]);
        let (wd, _) = dense_attention(&f, &g, &v)?;
        let target = 1.0 / n as f64;
        worst = wd.as_slice().iter().fold(worst, |m, &p| m.max((p - target).abs()));
    }
    Ok(CheckOutcome::measured("uniform_attention", opts.seeds, worst, INVARIANT_TOLERANCE))
}

fn check_positional(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for s in 0..opts.seeds {
        let mut rng = rng_from_seed(derive_seed(opts.base_seed ^ 0xc3, s as u64));
        let (h, w) = (rng.gen_range(1..=16usize), rng.gen_range(1..=16usize));
        let pos_dim = 4 * rng.gen_range(1..=8usize);
        let wp = positional_similarity(&sincos_pos_encoding::<f64>(h, w, pos_dim)?)?;
        for i in 0..wp.rows() {
            worst = worst.max((wp.get(i, i) - 1.0).abs());
            for j in 0..i {
                worst = worst.max((wp.get(i, j) - wp.get(j, i)).abs());
            }
        }
    }
    Ok(CheckOutcome::measured("positional_similarity", opts.seeds, worst, INVARIANT_TOLERANCE))
}

fn check_sparse_range(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut excess: f64 = 0.0;
    for s in 0..opts.seeds {
        let mut rng = rng_from_seed(derive_seed(opts.base_seed ^ 0xd4, s as u64));
        let (h, w, f, g, _) = random_projections(&mut rng);
        let wp = positional_similarity(&sincos_pos_encoding::<f64>(h, w, 4 * rng.gen_range(1..=4usize))?)?;
        let ws = sparse_similarity(&f, &g, &wp)?;
        excess = ws.as_slice().iter().fold(excess, |m, &v| m.max(v.abs() - 2.0));
    }
    Ok(CheckOutcome::measured("sparse_similarity_range", opts.seeds, excess.max(0.0), 0.0))
}

/// Neighbors by sorting every row in full: value descending, index ascending.
pub fn brute_force_topk(ws: &Matrix<f64>, k: usize) -> Vec<Vec<usize>> {
    (0..ws.rows())
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..ws.cols()).filter(|&j| j != i).map(|j| (ws.get(i, j), j)).collect();
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Random similarity matrix with frequent exact ties.
pub fn tied_similarity(rng: &mut SeededRng, n: usize) -> Matrix<f64> {
    let levels = rng.gen_range(2..=8i32);
    Matrix::from_fn(n, n, |_, _| {
        if rng.gen_bool(0.5) {
            rng.gen_range(0..levels) as f64 / levels as f64
        } else {
            rng.gen_range(-2.0..2.0)
        }
    })
}

/// Compare [`topk_neighbors`] with [`brute_force_topk`] on `instances`
/// random `n`-node matrices. The error is the number of mismatching graphs.
pub fn check_topk(instances: usize, n: usize, base_seed: u64) -> Result<CheckOutcome> {
    let mut bad = 0usize;
    for s in 0..instances {
        let mut rng = rng_from_seed(derive_seed(base_seed ^ 0xe5, s as u64));
        let ws = tied_similarity(&mut rng, n);
        let k = rng.gen_range(1..n);
        let graph = topk_neighbors(&ws, k)?;
        if graph.neighbors != brute_force_topk(&ws, k) || !graph.is_well_formed(k) {
            bad += 1;
        }
    }
    Ok(CheckOutcome::measured("topk_brute_force", instances, bad as f64, 0.0))
}

fn check_stale_cache(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let inst = small_instance(opts.base_seed, opts.k, opts.eliminate_positional)?;
    let (_, cache) = sg_forward(&inst.x, &inst.params)?;
    let mut changed = inst.params.clone();
    changed.bu[0] += 1.0;
    let detected = matches!(sg_backward(&inst.probe, &cache, &changed), Err(Error::StaleCache));
    Ok(CheckOutcome::measured("stale_cache", 1, (!detected) as u8 as f64, 0.0))
}

fn check_loss_gradients(opts: &SuiteOptions) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let fault = |mut g: Vec<f64>| {
        if opts.inject_fault {
            g.iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
        }
        g
    };
    for s in 0..opts.seeds {
        let mut rng = rng_from_seed(derive_seed(opts.base_seed ^ 0xf6, s as u64));
        let (h, w, c) = (rng.gen_range(1..=4usize), rng.gen_range(1..=4usize), rng.gen_range(1..=3usize));
        let shape = move |v: &[f64]| Tensor3::new(h, w, c, v.to_vec()).expect("same shape");
        let pred = uniform_tensor(&mut rng, h, w, c);
        // keep |pred - target| away from the kink of |.|
        let offsets: Vec<f64> = (0..h * w * c)
            .map(|_| rng.gen_range(0.01..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let target = shape(&pred.as_slice().iter().zip(&offsets).map(|(p, o)| p + o).collect::<Vec<_>>());

        let l1 = l1_loss(&pred, &target)?;
        let num = central_difference(|v| l1_loss(&shape(v), &target).expect("shape").value, pred.as_slice(), FD_EPS);
        worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(l1.grad.as_slice().to_vec()), &num));

        let l2 = l2_aux_loss(&pred, &target)?;
        let num = central_difference(|v| l2_aux_loss(&shape(v), &target).expect("shape").value, pred.as_slice(), FD_EPS);
        worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(l2.grad.as_slice().to_vec()), &num));

        let prob = Tensor3::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.05..0.95));
        let label = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(0.5));
        let one = move |v: &[f64]| Tensor3::new(h, w, 1, v.to_vec()).expect("same shape");
        for gamma in [0.0, 2.0, 4.0] {
            let fl = focal_loss(&prob, &label, gamma)?;
            let num = central_difference(
                |v| focal_loss(&one(v), &label, gamma).expect("shape").value,
                prob.as_slice(),
                FD_EPS,
            );
            worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(fl.grad.as_slice().to_vec()), &num));
        }

        let fake = uniform_matrix(&mut rng, h, w, 2.0);
        let real = uniform_matrix(&mut rng, h, w, 2.0);
        let as_m = move |v: &[f64]| Matrix::new(h, w, v.to_vec()).expect("same shape");
        let gen = lsgan_generator(&fake);
        let num = central_difference(|v| lsgan_generator(&as_m(v)).value, fake.as_slice(), FD_EPS);
        worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(gen.grad.as_slice().to_vec()), &num));

        let disc = lsgan_discriminator(&fake, &real)?;
        let num = central_difference(
            |v| lsgan_discriminator(&as_m(v), &real).expect("shape").value,
            fake.as_slice(),
            FD_EPS,
        );
        worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(disc.grad.d_fake.as_slice().to_vec()), &num));
        let num = central_difference(
            |v| lsgan_discriminator(&fake, &as_m(v)).expect("shape").value,
            real.as_slice(),
            FD_EPS,
        );
        worst = worst.max(max_scaled_error(GRAD_TOLERANCE, &fault(disc.grad.d_real.as_slice().to_vec()), &num));
    }
    Ok(CheckOutcome::measured("loss_gradients", opts.seeds, worst, GRAD_TOLERANCE.relative))
}
