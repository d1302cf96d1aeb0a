//! Self-attention graph-convolution (SG) block.
//!
//! Node features `X` (one node per spatial position) feed two paths:
//!
//! * dense attention: `Wd = softmax(f(X) g(X)^T / sqrt(d))`, `Z = Wd h(X)`;
//! * sparse graph: `Ws = CosSim(f(X), g(X)) - CosSim(P, P)` where `P` is a
//!   2D sine-cosine position encoding; each node links to its top-K rows of
//!   `Ws` (self excluded) and aggregates `V''_i = max_j (x_j - x_i)`
//!   channelwise over those neighbors.
//!
//! The output is `u([Z, V''])`. `f`, `g`, `h` and `u` are 1x1 convolutions,
//! i.e. per-node affine maps. Graph selection is treated as a constant in
//! the backward pass.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{mix64, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_nt, softmax_rows, Matrix, Tensor3};

/// Learnable state of one SG block.
#[derive(Debug, Clone, PartialEq)]
pub struct SgParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    /// Query/key width is `c_in / reduction`.
    pub reduction: usize,
    /// Neighbors per node.
    pub k: usize,
    /// Position-encoding width; a positive multiple of 4.
    pub pos_dim: usize,
    /// Subtract positional similarity before neighbor selection.
    pub eliminate_positional: bool,
    pub wf: Matrix<T>,
    pub bf: Vec<T>,
    pub wg: Matrix<T>,
    pub bg: Vec<T>,
    pub wh: Matrix<T>,
    pub bh: Vec<T>,
    pub wu: Matrix<T>,
    pub bu: Vec<T>,
}

/// Gradients with the same layout as [`SgParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgGrads<T> {
    pub wf: Matrix<T>,
    pub bf: Vec<T>,
    pub wg: Matrix<T>,
    pub bg: Vec<T>,
    pub wh: Matrix<T>,
    pub bh: Vec<T>,
    pub wu: Matrix<T>,
    pub bu: Vec<T>,
}

pub const DEFAULT_REDUCTION: usize = 8;
pub const DEFAULT_K: usize = 9;

/// Smallest multiple of 4 that is at least `d`.
pub fn default_pos_dim(d: usize) -> usize {
    d.max(1).div_ceil(4) * 4
}

impl<T: Scalar> SgParams<T> {
    /// Glorot-uniform weights and small uniform biases.
    pub fn random(c_in: usize, c_out: usize, reduction: usize, k: usize, seed: u64) -> Result<Self> {
        if reduction == 0 || c_in == 0 || c_out == 0 || !c_in.is_multiple_of(reduction) {
            return Err(Error::invalid(
                "reduction",
                format!("must divide c_in = {c_in}, got {reduction}"),
            ));
        }
        let d = c_in / reduction;
        let mut rng = rng_from_seed(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| T::narrow(rng.gen_range(-a..a)))
        };
        let wf = glorot(c_in, d);
        let wg = glorot(c_in, d);
        let wh = glorot(c_in, c_out);
        let wu = glorot(c_out + c_in, c_out);
        let mut bias = |n: usize| (0..n).map(|_| T::narrow(rng.gen_range(-0.1..0.1))).collect::<Vec<T>>();
        let params = Self {
            c_in,
            c_out,
            reduction,
            k,
            pos_dim: default_pos_dim(d),
            eliminate_positional: true,
            bf: bias(d),
            bg: bias(d),
            bh: bias(c_out),
            bu: bias(c_out),
            wf,
            wg,
            wh,
            wu,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn query_width(&self) -> usize {
        self.c_in / self.reduction.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || !self.c_in.is_multiple_of(self.reduction) || self.c_in / self.reduction == 0 {
            return Err(Error::invalid(
                "reduction",
                format!("must divide c_in = {}, got {}", self.c_in, self.reduction),
            ));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        if self.pos_dim == 0 || !self.pos_dim.is_multiple_of(4) {
            return Err(Error::invalid("pos_dim", format!("must be a positive multiple of 4, got {}", self.pos_dim)));
        }
        let d = self.query_width();
        let checks: [(&'static str, (usize, usize), (usize, usize)); 4] = [
            ("wf", (self.wf.rows(), self.wf.cols()), (self.c_in, d)),
            ("wg", (self.wg.rows(), self.wg.cols()), (self.c_in, d)),
            ("wh", (self.wh.rows(), self.wh.cols()), (self.c_in, self.c_out)),
            ("wu", (self.wu.rows(), self.wu.cols()), (self.c_out + self.c_in, self.c_out)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape(name, format!("{}x{}", want.0, want.1), format!("{}x{}", got.0, got.1)));
            }
        }
        for (name, got, want) in [
            ("bf", self.bf.len(), d),
            ("bg", self.bg.len(), d),
            ("bh", self.bh.len(), self.c_out),
            ("bu", self.bu.len(), self.c_out),
        ] {
            if got != want {
                return Err(Error::shape(name, want, got));
            }
        }
        Ok(())
    }

    /// `(name, slice)` for every parameter tensor, in a fixed order.
    pub fn blocks(&self) -> [(&'static str, &[T]); 8] {
        [
            ("wf", self.wf.as_slice()),
            ("bf", &self.bf),
            ("wg", self.wg.as_slice()),
            ("bg", &self.bg),
            ("wh", self.wh.as_slice()),
            ("bh", &self.bh),
            ("wu", self.wu.as_slice()),
            ("bu", &self.bu),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [T]; 8] {
        [
            self.wf.as_mut_slice(),
            &mut self.bf,
            self.wg.as_mut_slice(),
            &mut self.bg,
            self.wh.as_mut_slice(),
            &mut self.bh,
            self.wu.as_mut_slice(),
            &mut self.bu,
        ]
    }

    /// All parameters concatenated in [`SgParams::blocks`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|(_, b)| b.iter().map(|v| v.wide())).collect()
    }

    /// Overwrite parameters from a vector laid out as [`SgParams::to_vec`].
    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.blocks().iter().map(|(_, b)| b.len()).sum();
        if values.len() != total {
            return Err(Error::shape("set_from_slice", total, values.len()));
        }
        let mut it = values.iter();
        for block in self.blocks_mut() {
            for (dst, src) in block.iter_mut().zip(&mut it) {
                *dst = T::narrow(*src);
            }
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = mix64((self.c_in as u64) << 32 | self.c_out as u64);
        h = mix64(h ^ (self.k as u64) ^ ((self.pos_dim as u64) << 20) ^ ((self.eliminate_positional as u64) << 40));
        for (_, block) in self.blocks() {
            for v in block {
                h = mix64(h ^ v.wide().to_bits());
            }
        }
        h
    }
}

impl<T: Scalar> SgGrads<T> {
    pub fn blocks(&self) -> [(&'static str, &[T]); 8] {
        [
            ("wf", self.wf.as_slice()),
            ("bf", &self.bf),
            ("wg", self.wg.as_slice()),
            ("bg", &self.bg),
            ("wh", self.wh.as_slice()),
            ("bh", &self.bh),
            ("wu", self.wu.as_slice()),
            ("bu", &self.bu),
        ]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|(_, b)| b.iter().map(|v| v.wide())).collect()
    }
}

/// For each node, `K` distinct neighbor indices ordered by descending
/// similarity. Never contains the node itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SparseGraph {
    pub n: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl SparseGraph {
    pub fn k(&self) -> usize {
        self.neighbors.first().map_or(0, Vec::len)
    }

    /// No self-loops, exactly `k` distinct in-range neighbors per node.
    pub fn is_well_formed(&self, k: usize) -> bool {
        self.neighbors.len() == self.n
            && self.neighbors.iter().enumerate().all(|(i, list)| {
                let mut seen = list.clone();
                seen.sort_unstable();
                seen.dedup();
                list.len() == k && seen.len() == k && list.iter().all(|&j| j != i && j < self.n)
            })
    }
}

/// Per-row affine map `x w + bias` (a 1x1 convolution on flattened nodes).
pub fn project<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    let mut out = matmul(x, w)?;
    out.add_row_vector(bias)?;
    Ok(out)
}

/// `Wd = softmax(f g^T / sqrt(d))` and `Z = Wd h`.
pub fn dense_attention<T: Scalar>(f: &Matrix<T>, g: &Matrix<T>, h: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    if f.cols() != g.cols() || f.rows() != g.rows() {
        return Err(Error::shape(
            "dense_attention",
            format!("f {}x{}", f.rows(), f.cols()),
            format!("g {}x{}", g.rows(), g.cols()),
        ));
    }
    if h.rows() != f.rows() {
        return Err(Error::shape("dense_attention", format!("h with {} rows", f.rows()), h.rows()));
    }
    let scale = T::narrow(1.0 / (f.cols() as f64).sqrt());
    let logits = matmul_nt(f, g)?.scale(scale);
    let wd = softmax_rows(&logits);
    let z = matmul(&wd, h)?;
    Ok((wd, z))
}

/// Parameter-free 2D sine-cosine encoding of an `height x width` grid.
///
/// The first half of each row encodes the row index, the second half the
/// column index; each half is `[sin(p w_0..), cos(p w_0..)]` with
/// `w_k = 10000^(-k / (pos_dim / 4))`.
pub fn sincos_pos_encoding<T: Scalar>(height: usize, width: usize, pos_dim: usize) -> Result<Matrix<T>> {
    if pos_dim == 0 || !pos_dim.is_multiple_of(4) {
        return Err(Error::invalid("pos_dim", format!("must be a positive multiple of 4, got {pos_dim}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("dims", format!("got {height}x{width}")));
    }
    let quarter = pos_dim / 4;
    let omegas: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10000f64.powf(k as f64 / quarter as f64))
        .collect();
    let mut out = Matrix::zeros(height * width, pos_dim);
    for r in 0..height {
        for c in 0..width {
            let row = out.row_mut(r * width + c);
            for (half, pos) in [(0, r as f64), (1, c as f64)] {
                let base = half * 2 * quarter;
                for (k, w) in omegas.iter().enumerate() {
                    row[base + k] = T::narrow((pos * w).sin());
                    row[base + quarter + k] = T::narrow((pos * w).cos());
                }
            }
        }
    }
    Ok(out)
}

fn row_norms<T: Scalar>(m: &Matrix<T>) -> Result<Vec<f64>> {
    (0..m.rows())
        .map(|i| {
            let n = m.row(i).iter().map(|v| v.wide() * v.wide()).sum::<f64>().sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm { row: i })
            }
        })
        .collect()
}

/// `out[i][j] = cos(a_i, b_j)`.
pub fn cosine_similarity<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("cosine_similarity", a.cols(), b.cols()));
    }
    let na = row_norms(a)?;
    let nb = row_norms(b)?;
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            let dot: f64 = ai.iter().zip(b.row(j)).map(|(x, y)| x.wide() * y.wide()).sum();
            out.set(i, j, T::narrow((dot / (na[i] * nb[j])).clamp(-1.0, 1.0)));
        }
    }
    Ok(out)
}

/// Cosine similarity between all pairs of position encodings. Exactly
/// symmetric.
pub fn positional_similarity<T: Scalar>(p: &Matrix<T>) -> Result<Matrix<T>> {
    let norms = row_norms(p)?;
    let n = p.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.set(i, i, T::one());
        for j in i + 1..n {
            let dot: f64 = p.row(i).iter().zip(p.row(j)).map(|(x, y)| x.wide() * y.wide()).sum();
            let v = T::narrow((dot / (norms[i] * norms[j])).clamp(-1.0, 1.0));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// `Ws = CosSim(f, g) - wp`.
pub fn sparse_similarity<T: Scalar>(f: &Matrix<T>, g: &Matrix<T>, wp: &Matrix<T>) -> Result<Matrix<T>> {
    let mut ws = cosine_similarity(f, g)?;
    if (wp.rows(), wp.cols()) != (ws.rows(), ws.cols()) {
        return Err(Error::shape(
            "sparse_similarity",
            format!("{}x{}", ws.rows(), ws.cols()),
            format!("{}x{}", wp.rows(), wp.cols()),
        ));
    }
    for (s, &p) in ws.as_mut_slice().iter_mut().zip(wp.as_slice()) {
        *s = *s - p;
    }
    Ok(ws)
}

/// `a` ranks before `b`: larger value, then smaller index.
#[inline]
fn ranks_before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Top-`k` entries of each row of `ws`, excluding the diagonal.
pub fn topk_neighbors<T: Scalar>(ws: &Matrix<T>, k: usize) -> Result<SparseGraph> {
    let n = ws.rows();
    if ws.cols() != n {
        return Err(Error::shape("topk_neighbors", format!("{n}x{n}"), format!("{}x{}", n, ws.cols())));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid("k", format!("need 1 <= k <= {}, got {k}", n.saturating_sub(1))));
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        for (j, v) in ws.row(i).iter().enumerate() {
            if j == i {
                continue;
            }
            let cand = (v.wide(), j);
            if best.len() == k && !ranks_before(cand, best[k - 1]) {
                continue;
            }
            let pos = best.iter().position(|&b| ranks_before(cand, b)).unwrap_or(best.len());
            best.insert(pos, cand);
            best.truncate(k);
        }
        neighbors.push(best.iter().map(|&(_, j)| j).collect());
    }
    Ok(SparseGraph { n, neighbors })
}

fn check_graph<T>(v: &Matrix<T>, graph: &SparseGraph) -> Result<()>
where
    T: Scalar,
{
    if graph.n != v.rows() || graph.neighbors.len() != graph.n {
        return Err(Error::shape("max_relative_aggregate", format!("graph over {} nodes", v.rows()), graph.n));
    }
    if let Some(j) = graph.neighbors.iter().flatten().find(|&&j| j >= graph.n) {
        return Err(Error::invalid("graph", format!("neighbor index {j} out of range")));
    }
    Ok(())
}

/// Channelwise `max_j (v_j - v_i)` with the winning neighbor per entry.
/// Ties go to the smallest node index.
fn max_relative_with_argmax<T: Scalar>(v: &Matrix<T>, graph: &SparseGraph) -> Result<(Matrix<T>, Vec<usize>)> {
    check_graph(v, graph)?;
    let c = v.cols();
    let mut out = Matrix::zeros(v.rows(), c);
    let mut arg = vec![0usize; v.rows() * c];
    for (i, list) in graph.neighbors.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::invalid("graph", format!("node {i} has no neighbors")));
        }
        let vi = v.row(i);
        for ch in 0..c {
            let mut bj = list[0];
            for &j in &list[1..] {
                let (cur, best) = (v.get(j, ch), v.get(bj, ch));
                if cur > best || (cur == best && j < bj) {
                    bj = j;
                }
            }
            out.set(i, ch, v.get(bj, ch) - vi[ch]);
            arg[i * c + ch] = bj;
        }
    }
    Ok((out, arg))
}

/// Max-relative graph aggregation over `graph`.
pub fn max_relative_aggregate<T: Scalar>(v: &Matrix<T>, graph: &SparseGraph) -> Result<Matrix<T>> {
    Ok(max_relative_with_argmax(v, graph)?.0)
}

/// Intermediates retained by [`sg_forward`] for [`sg_backward`].
#[derive(Debug, Clone)]
pub struct SgCache<T> {
    height: usize,
    width: usize,
    fingerprint: u64,
    x: Matrix<T>,
    f: Matrix<T>,
    g: Matrix<T>,
    h: Matrix<T>,
    wd: Matrix<T>,
    concat: Matrix<T>,
    argmax: Vec<usize>,
    graph: SparseGraph,
}

impl<T: Scalar> SgCache<T> {
    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    pub fn dense_weights(&self) -> &Matrix<T> {
        &self.wd
    }

    /// `[Z, V'']`, `N x (c_out + c_in)`.
    pub fn concat(&self) -> &Matrix<T> {
        &self.concat
    }
}

/// The neighbor graph the block would build for `x`.
pub fn build_graph<T: Scalar>(x: &Tensor3<T>, params: &SgParams<T>) -> Result<SparseGraph> {
    let xm = x.flatten();
    let f = project(&xm, &params.wf, &params.bf)?;
    let g = project(&xm, &params.wg, &params.bg)?;
    graph_from_projections(&f, &g, x.height(), x.width(), params)
}

fn graph_from_projections<T: Scalar>(
    f: &Matrix<T>,
    g: &Matrix<T>,
    height: usize,
    width: usize,
    params: &SgParams<T>,
) -> Result<SparseGraph> {
    let ws = if params.eliminate_positional {
        let p = sincos_pos_encoding::<T>(height, width, params.pos_dim)?;
        sparse_similarity(f, g, &positional_similarity(&p)?)?
    } else {
        cosine_similarity(f, g)?
    };
    topk_neighbors(&ws, params.k)
}

fn check_input<T: Scalar>(x: &Tensor3<T>, params: &SgParams<T>) -> Result<()> {
    params.validate()?;
    if x.channels() != params.c_in {
        return Err(Error::shape("sg_forward", format!("{} input channels", params.c_in), x.channels()));
    }
    Ok(())
}

/// Forward pass. Returns the `H x W x c_out` output and the cache.
pub fn sg_forward<T: Scalar>(x: &Tensor3<T>, params: &SgParams<T>) -> Result<(Tensor3<T>, SgCache<T>)> {
    check_input(x, params)?;
    forward_impl(x, params, None)
}

/// Forward pass with a caller-supplied neighbor graph.
pub fn sg_forward_with_graph<T: Scalar>(
    x: &Tensor3<T>,
    params: &SgParams<T>,
    graph: &SparseGraph,
) -> Result<(Tensor3<T>, SgCache<T>)> {
    check_input(x, params)?;
    forward_impl(x, params, Some(graph))
}

fn forward_impl<T: Scalar>(
    x: &Tensor3<T>,
    params: &SgParams<T>,
    graph: Option<&SparseGraph>,
) -> Result<(Tensor3<T>, SgCache<T>)> {
    let (height, width) = (x.height(), x.width());
    let xm = x.flatten();
    let f = project(&xm, &params.wf, &params.bf)?;
    let g = project(&xm, &params.wg, &params.bg)?;
    let h = project(&xm, &params.wh, &params.bh)?;
    let (wd, z) = dense_attention(&f, &g, &h)?;

    let graph = match graph {
        Some(gr) => gr.clone(),
        None => graph_from_projections(&f, &g, height, width, params)?,
    };
    let (v2, argmax) = max_relative_with_argmax(&xm, &graph)?;
    let concat = z.hcat(&v2)?;
    let out = project(&concat, &params.wu, &params.bu)?;

    let cache = SgCache {
        height,
        width,
        fingerprint: params.fingerprint(),
        x: xm,
        f,
        g,
        h,
        wd,
        concat,
        argmax,
        graph,
    };
    Ok((Tensor3::unflatten(&out, height, width)?, cache))
}

/// Backward pass: gradients of a scalar loss w.r.t. the input and every
/// parameter, given `grad_out = dL/d(output)`.
pub fn sg_backward<T: Scalar>(
    grad_out: &Tensor3<T>,
    cache: &SgCache<T>,
    params: &SgParams<T>,
) -> Result<(Tensor3<T>, SgGrads<T>)> {
    if cache.fingerprint != params.fingerprint()
        || grad_out.shape() != (cache.height, cache.width, params.c_out)
    {
        return Err(Error::StaleCache);
    }
    let (c_in, c_out) = (params.c_in, params.c_out);
    let n = cache.x.rows();
    let go = grad_out.flatten();

    // output = concat * wu + bu
    let d_wu = matmul(&cache.concat.transpose(), &go)?;
    let d_bu = go.col_sums();
    let d_concat = matmul_nt(&go, &params.wu)?;
    let d_z = d_concat.col_slice(0, c_out);
    let d_v2 = d_concat.col_slice(c_out, c_out + c_in);

    // z = wd * h
    let d_wd = matmul_nt(&d_z, &cache.h)?;
    let d_h = matmul(&cache.wd.transpose(), &d_z)?;

    // wd = softmax(s), s = f g^T / sqrt(d)
    let scale = 1.0 / (params.query_width() as f64).sqrt();
    let mut d_s = Matrix::<T>::zeros(n, n);
    for i in 0..n {
        let (p, dp) = (cache.wd.row(i), d_wd.row(i));
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a.wide() * b.wide()).sum();
        for (o, (a, b)) in d_s.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *o = T::narrow(a.wide() * (b.wide() - dot) * scale);
        }
    }
    let d_f = matmul(&d_s, &cache.g)?;
    let d_g = matmul(&d_s.transpose(), &cache.f)?;

    // v2[i][c] = x[argmax][c] - x[i][c]
    let mut d_x = vec![0.0f64; n * c_in];
    for i in 0..n {
        for c in 0..c_in {
            let gv = d_v2.get(i, c).wide();
            d_x[cache.argmax[i * c_in + c] * c_in + c] += gv;
            d_x[i * c_in + c] -= gv;
        }
    }

    // the three 1x1 projections of x
    let xt = cache.x.transpose();
    let grads = SgGrads {
        wf: matmul(&xt, &d_f)?,
        bf: d_f.col_sums(),
        wg: matmul(&xt, &d_g)?,
        bg: d_g.col_sums(),
        wh: matmul(&xt, &d_h)?,
        bh: d_h.col_sums(),
        wu: d_wu,
        bu: d_bu,
    };
    for (dy, w) in [(&d_f, &params.wf), (&d_g, &params.wg), (&d_h, &params.wh)] {
        let part = matmul_nt(dy, w)?;
        for (acc, v) in d_x.iter_mut().zip(part.as_slice()) {
            *acc += v.wide();
        }
    }
    let d_x = Matrix::new(n, c_in, d_x.into_iter().map(T::narrow).collect())?;
    Ok((Tensor3::unflatten(&d_x, cache.height, cache.width)?, grads))
}
