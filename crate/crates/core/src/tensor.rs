//! Dense rank-3 tensors (height x width x channels) and row-major matrices.
//!
//! Tensor layout is fixed as (row, column, channel) row-major. Flattening a
//! tensor yields an `(H*W) x C` matrix whose row `r*W + c` is pixel `(r, c)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

/// Dense `height x width x channels` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(
                "dims",
                format!("tensor dims must be positive, got {height}x{width}x{channels}"),
            ));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape("Tensor3::new", expected, data.len()));
        }
        check_finite("Tensor3::new", &data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "tensor dims must be positive");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    /// Build from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    t.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        t
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_spatial(&self, other_h: usize, other_w: usize) -> bool {
        self.height == other_h && self.width == other_w
    }

    #[inline]
    fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && ch < self.channels);
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.offset(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.offset(row, col, ch);
        self.data[i] = value;
    }

    /// All channels of pixel `(row, col)`.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let i = self.offset(row, col, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let i = self.offset(row, col, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cast storage type.
    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::narrow(v.wide())).collect(),
        }
    }

    /// `(H*W) x C` matrix, row `r*W + c` holding pixel `(r, c)`.
    pub fn flatten(&self) -> Matrix<T> {
        Matrix {
            rows: self.height * self.width,
            cols: self.channels,
            data: self.data.clone(),
        }
    }

    /// Inverse of [`Tensor3::flatten`].
    pub fn unflatten(m: &Matrix<T>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height * width != m.rows {
            return Err(Error::shape(
                "unflatten",
                format!("{} rows", height * width),
                format!("{} rows", m.rows),
            ));
        }
        Ok(Self {
            height,
            width,
            channels: m.cols,
            data: m.data.clone(),
        })
    }

    /// Rotate by a quarter turn clockwise. Output is `width x height`.
    pub fn rotate90_cw(&self) -> Self {
        let (h, w, ch) = self.shape();
        let mut out = Self::zeros(w, h, ch);
        for r in 0..w {
            for c in 0..h {
                out.pixel_mut(r, c).copy_from_slice(self.pixel(h - 1 - c, r));
            }
        }
        out
    }

    /// Rotate clockwise by `quarter_turns * 90` degrees.
    pub fn rotate_quarter_turns(&self, quarter_turns: u32) -> Self {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            out = out.rotate90_cw();
        }
        out
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let (sh, sw, ch) = self.shape();
        let scale_y = sh as f64 / height as f64;
        let scale_x = sw as f64 / width as f64;
        let mut out = Self::zeros(height, width, ch);
        for r in 0..height {
            let fy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let ty = fy - y0 as f64;
            for c in 0..width {
                let fx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let tx = fx - x0 as f64;
                for k in 0..ch {
                    let top = self.get(y0, x0, k).wide() * (1.0 - tx) + self.get(y0, x1, k).wide() * tx;
                    let bot = self.get(y1, x0, k).wide() * (1.0 - tx) + self.get(y1, x1, k).wide() * tx;
                    out.set(r, c, k, T::narrow(top * (1.0 - ty) + bot * ty));
                }
            }
        }
        out
    }

    /// Convert channel count: gray to RGB replicates, RGB to gray averages.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        match (self.channels, channels) {
            (1, n) => Ok(Self::from_fn(self.height, self.width, n, |r, c, _| self.get(r, c, 0))),
            (n, 1) => Ok(Self::from_fn(self.height, self.width, 1, |r, c, _| {
                let s: f64 = self.pixel(r, c).iter().map(|v| v.wide()).sum();
                T::narrow(s / n as f64)
            })),
            (from, to) => Err(Error::invalid(
                "channels",
                format!("cannot convert {from} channels to {to}"),
            )),
        }
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(
                "dims",
                format!("matrix dims must be positive, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", rows * cols, data.len()));
        }
        check_finite("Matrix::new", &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
            .expect("literal matrix")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::narrow(v.wide())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * rhs`, accumulated in `f64`.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        matmul(self, rhs)
    }

    /// Append the columns of `rhs` to the right of `self`.
    pub fn hcat(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::shape("hcat", format!("{} rows", self.rows), format!("{} rows", rhs.rows)));
        }
        let cols = self.cols + rhs.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(rhs.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `[start, end)`.
    pub fn col_slice(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.cols, "column range out of bounds");
        Self::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    /// Add `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape("add_row_vector", self.cols, bias.len()));
        }
        for i in 0..self.rows {
            for (v, &b) in self.row_mut(i).iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated in `f64`.
    pub fn col_sums(&self) -> Vec<T> {
        let mut acc = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v.wide();
            }
        }
        acc.into_iter().map(T::narrow).collect()
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.wide() - b.wide()).abs())
            .fold(0.0, f64::max)
    }
}

/// Matrix product with `f64` accumulation.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("lhs {}x{} times rhs with {} rows", a.rows, a.cols, a.cols),
            format!("rhs {}x{}", b.rows, b.cols),
        ));
    }
    let bw: Vec<f64> = b.data.iter().map(|v| v.wide()).collect();
    let n = b.cols;
    let mut out = Vec::with_capacity(a.rows * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..a.rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (k, aik) in a.row(i).iter().enumerate() {
            let aik = aik.wide();
            if aik == 0.0 {
                continue;
            }
            let brow = &bw[k * n..(k + 1) * n];
            for (o, &bkj) in acc.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
        out.extend(acc.iter().map(|&v| T::narrow(v)));
    }
    Ok(Matrix {
        rows: a.rows,
        cols: n,
        data: out,
    })
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{} columns", a.cols),
            format!("{} columns", b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let s: f64 = ar.iter().zip(b.row(j)).map(|(x, y)| x.wide() * y.wide()).sum();
            out.data[i * b.rows + j] = T::narrow(s);
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    let mut buf = vec![0.0f64; m.cols];
    for i in 0..m.rows {
        let row = m.row(i);
        let max = row.iter().map(|v| v.wide()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (b, v) in buf.iter_mut().zip(row) {
            *b = (v.wide() - max).exp();
            sum += *b;
        }
        for (o, b) in out.row_mut(i).iter_mut().zip(&buf) {
            *o = T::narrow(b / sum);
        }
    }
    out
}
