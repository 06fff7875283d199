//! Dense real matrices in row-major storage and the handful of kernels the
//! exponential code needs: products, LU with partial pivoting, the 1-norm and
//! a relative Frobenius distance.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Relative pivot size below which an LU factorization is flagged as
/// ill-conditioned (relative to the 1-norm of the factored matrix).
pub const PIVOT_WARN_RATIO: f64 = 1e-14;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting NaN and infinities.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: (nrows, ncols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(nrows, ncols, data)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix entry by entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &DenseMatrix) -> Result<()> {
        self.check_same_shape("add_scaled", other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += factor * y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape("sub", other)?;
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&other.data) {
            *x -= y;
        }
        Ok(out)
    }

    /// Copy of the `nrows x ncols` submatrix whose top-left entry is `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> DenseMatrix {
        assert!(r0 + nrows <= self.rows && c0 + ncols <= self.cols);
        let mut out = DenseMatrix::zeros(nrows, ncols);
        for i in 0..nrows {
            let src = (r0 + i) * self.cols + c0;
            out.data[i * ncols..(i + 1) * ncols].copy_from_slice(&self.data[src..src + ncols]);
        }
        out
    }

    /// Overwrites the region starting at `(r0, c0)` with `block`.
    pub fn set_submatrix(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn view(&self) -> MatView<'_> {
        MatView {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            stride: self.cols,
        }
    }

    /// Borrowed view of a rectangular region.
    pub fn subview(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> MatView<'_> {
        assert!(r0 + nrows <= self.rows && c0 + ncols <= self.cols);
        let start = r0 * self.cols + c0;
        let end = if nrows == 0 || ncols == 0 {
            start
        } else {
            (r0 + nrows - 1) * self.cols + c0 + ncols
        };
        MatView {
            data: &self.data[start..end],
            rows: nrows,
            cols: ncols,
            stride: self.cols,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, op: &'static str, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Serializes in the plain text format: a `rows cols` header followed by
    /// one line of whitespace-separated entries per row. Entries use the
    /// shortest representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses a matrix from an iterator over `(line number, line)` pairs,
    /// consuming exactly the header plus `rows` data lines. Blank lines are
    /// skipped.
    pub(crate) fn parse_lines<'a, I>(lines: &mut I) -> Result<DenseMatrix>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let mut next_line = || lines.find(|(_, l)| !l.trim().is_empty());
        let (hline, header) = next_line().ok_or(Error::Parse {
            line: 0,
            msg: "missing matrix header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: hline + 1,
                msg: format!("bad header: {e}"),
            })?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse {
                line: hline + 1,
                msg: "header must be `rows cols`".into(),
            });
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, line) = next_line().ok_or(Error::Parse {
                line: hline + 1,
                msg: format!("expected {rows} rows"),
            })?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| Error::Parse {
                    line: ln + 1,
                    msg: format!("bad entry `{tok}`: {e}"),
                })?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected {cols} entries, found {}", data.len() - before),
                });
            }
        }
        DenseMatrix::from_vec(rows, cols, data)
    }
}

impl FromStr for DenseMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().enumerate();
        let m = DenseMatrix::parse_lines(&mut lines)?;
        if let Some((ln, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "trailing content after matrix".into(),
            });
        }
        Ok(m)
    }
}

/// Borrowed row-major region of a [`DenseMatrix`].
#[derive(Clone, Copy, Debug)]
pub struct MatView<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> MatView<'a> {
    /// Rows `r0..r1` of this view.
    pub fn rows_range(self, r0: usize, r1: usize) -> MatView<'a> {
        assert!(r0 <= r1 && r1 <= self.rows);
        let (start, end) = if r0 == r1 || self.cols == 0 {
            (0, 0)
        } else {
            (r0 * self.stride, (r1 - 1) * self.stride + self.cols)
        };
        MatView {
            data: &self.data[start..end],
            rows: r1 - r0,
            cols: self.cols,
            stride: self.stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// `c[r0.., c0..] = alpha * a * b + beta * c[r0.., c0..]` on the region of
/// `c` starting at `(r0, c0)` with the shape of the product.
pub(crate) fn gemm_into(
    alpha: f64,
    a: MatView<'_>,
    b: MatView<'_>,
    beta: f64,
    c: &mut DenseMatrix,
    r0: usize,
    c0: usize,
) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(r0 + m <= c.rows && c0 + n <= c.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            let row = &mut c.row_mut(r0 + i)[c0..c0 + n];
            row.iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    let ldc = c.cols;
    let c_off = r0 * ldc + c0;
    debug_assert!(a.data.len() >= (m - 1) * a.stride + k);
    debug_assert!(b.data.len() >= (k - 1) * b.stride + n);
    // SAFETY: the assertions above bound every index touched by dgemm:
    // a spans (m-1)*stride+k entries, b spans (k-1)*stride+n entries and the
    // destination region lies inside c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.stride as isize,
            1,
            b.data.as_ptr(),
            b.stride as isize,
            1,
            beta,
            c.data.as_mut_ptr().add(c_off),
            ldc as isize,
            1,
        );
    }
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(matmul_views(a.view(), b.view()))
}

pub(crate) fn matmul_views(a: MatView<'_>, b: MatView<'_>) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    gemm_into(1.0, a, b, 0.0, &mut out, 0, 0);
    out
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DenseMatrix) -> f64 {
    let mut sums = vec![0.0; a.cols];
    for i in 0..a.rows {
        for (s, x) in sums.iter_mut().zip(a.row(i)) {
            *s += x.abs();
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}

/// `||a - b||_F / ||a||_F`, defined as 0 when both are zero.
pub fn rel_error_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    a.check_same_shape("rel_error_frobenius", b)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}

/// Packed LU factors with row pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
    min_pivot: f64,
    ill_conditioned: bool,
}

impl LuFactors {
    pub fn dimension(&self) -> usize {
        self.lu.rows
    }

    /// Unit lower and upper triangle packed into one matrix.
    pub fn packed(&self) -> &DenseMatrix {
        &self.lu
    }

    /// Row `i` of `P A` is row `perm[i]` of `A`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Set when the smallest pivot fell below `PIVOT_WARN_RATIO * ||A||_1`.
    pub fn ill_conditioned(&self) -> bool {
        self.ill_conditioned
    }

    pub fn lower(&self) -> DenseMatrix {
        let n = self.dimension();
        DenseMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lu.get(i, j),
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    pub fn upper(&self) -> DenseMatrix {
        let n = self.dimension();
        DenseMatrix::from_fn(n, n, |i, j| if i <= j { self.lu.get(i, j) } else { 0.0 })
    }
}

pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactors> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "lu_factor",
            left: a.shape(),
            right: (a.cols, a.rows),
        });
    }
    let n = a.rows;
    let norm = one_norm(a);
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut min_pivot = f64::INFINITY;

    for k in 0..n {
        let (p, pivot_abs) =
            (k..n)
                .map(|i| (i, lu.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs == 0.0 {
            return Err(Error::Singular { column: k });
        }
        min_pivot = min_pivot.min(pivot_abs);
        if p != k {
            perm.swap(p, k);
            for j in 0..n {
                lu.data.swap(p * n + j, k * n + j);
            }
        }
        let pivot = lu.get(k, k);
        let (head, tail) = lu.data.split_at_mut((k + 1) * n);
        let pivot_row = &head[k * n + k + 1..k * n + n];
        for row in tail.chunks_exact_mut(n) {
            let l = row[k] / pivot;
            row[k] = l;
            if l != 0.0 {
                for (x, u) in row[k + 1..].iter_mut().zip(pivot_row) {
                    *x -= l * u;
                }
            }
        }
    }
    if n == 0 {
        min_pivot = 0.0;
    }
    let ill_conditioned = n > 0 && min_pivot < PIVOT_WARN_RATIO * norm;
    Ok(LuFactors {
        lu,
        perm,
        min_pivot,
        ill_conditioned,
    })
}

/// Solves `A X = B` with the factors of `A`.
pub fn lu_solve(f: &LuFactors, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = f.dimension();
    if b.rows != n {
        return Err(Error::DimensionMismatch {
            op: "lu_solve",
            left: (n, n),
            right: b.shape(),
        });
    }
    let m = b.cols;
    let mut x = DenseMatrix::zeros(n, m);
    for (i, &p) in f.perm.iter().enumerate() {
        x.row_mut(i).copy_from_slice(b.row(p));
    }
    // forward: L has unit diagonal
    for i in 1..n {
        let (done, rest) = x.data.split_at_mut(i * m);
        let xi = &mut rest[..m];
        for k in 0..i {
            let l = f.lu.get(i, k);
            if l != 0.0 {
                for (a, b) in xi.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                    *a -= l * b;
                }
            }
        }
    }
    for i in (0..n).rev() {
        let (head, rest) = x.data.split_at_mut((i + 1) * m);
        let xi = &mut head[i * m..];
        for k in i + 1..n {
            let u = f.lu.get(i, k);
            if u != 0.0 {
                for (a, b) in xi.iter_mut().zip(&rest[(k - i - 1) * m..(k - i) * m]) {
                    *a -= u * b;
                }
            }
        }
        let d = f.lu.get(i, i);
        xi.iter_mut().for_each(|a| *a /= d);
    }
    Ok(x)
}
