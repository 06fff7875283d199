//! Block upper triangular matrices that grow one block column at a time.

use std::fmt::Write as _;

use crate::dense::{gemm_into, DenseMatrix, MatView};
use crate::error::{Error, Result};

/// Sizes of the diagonal blocks together with their starting offsets.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Partition {
    sizes: Vec<usize>,
    // offsets[l] is the first row of block l; offsets[n+1] is the dimension
    offsets: Vec<usize>,
}

impl Partition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if let Some(l) = sizes.iter().position(|&b| b == 0) {
            return Err(Error::Partition(format!("block {l} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &b in &sizes {
            acc += b;
            offsets.push(acc);
        }
        Ok(Partition { sizes, offsets })
    }

    pub fn empty() -> Self {
        Partition {
            sizes: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    /// First row/column of block `l`.
    pub fn start(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// One past the last row/column of block `l`.
    pub fn end(&self, l: usize) -> usize {
        self.offsets[l + 1]
    }

    /// Index of the block containing row `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.offsets.partition_point(|&o| o <= i) - 1
    }

    pub fn push(&mut self, size: usize) -> Result<()> {
        if size == 0 {
            return Err(Error::Partition("appended block has size 0".into()));
        }
        self.sizes.push(size);
        self.offsets.push(self.dim() + size);
        Ok(())
    }

    /// Blocks `0..=l`.
    pub fn leading(&self, l: usize) -> Partition {
        Partition {
            sizes: self.sizes[..=l].to_vec(),
            offsets: self.offsets[..=l + 1].to_vec(),
        }
    }

    /// Fuses blocks `0..=l` into one leading block.
    pub fn merged(&self, l: usize) -> Partition {
        let mut sizes = vec![self.offsets[l + 1]];
        sizes.extend_from_slice(&self.sizes[l + 1..]);
        Partition::new(sizes).expect("merged sizes stay positive")
    }
}

/// A new block column: the part `top` above the diagonal and the diagonal
/// block `diag`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockColumn {
    top: DenseMatrix,
    diag: DenseMatrix,
}

impl BlockColumn {
    pub fn new(top: DenseMatrix, diag: DenseMatrix) -> Result<Self> {
        if !diag.is_square() || top.cols() != diag.rows() {
            return Err(Error::DimensionMismatch {
                op: "block column",
                left: top.shape(),
                right: diag.shape(),
            });
        }
        if diag.rows() == 0 {
            return Err(Error::Partition("block column of width 0".into()));
        }
        Ok(BlockColumn { top, diag })
    }

    /// First block column: no rows above the diagonal.
    pub fn first(diag: DenseMatrix) -> Result<Self> {
        let b = diag.cols();
        BlockColumn::new(DenseMatrix::zeros(0, b), diag)
    }

    /// Splits a stacked `(d + b) x b` column into its two parts.
    pub fn from_stacked(column: &DenseMatrix) -> Result<Self> {
        let b = column.cols();
        if column.rows() < b {
            return Err(Error::DimensionMismatch {
                op: "stacked block column",
                left: column.shape(),
                right: (b, b),
            });
        }
        let d = column.rows() - b;
        BlockColumn::new(column.submatrix(0, 0, d, b), column.submatrix(d, 0, b, b))
    }

    pub fn top(&self) -> &DenseMatrix {
        &self.top
    }

    pub fn diag(&self) -> &DenseMatrix {
        &self.diag
    }

    pub fn width(&self) -> usize {
        self.diag.cols()
    }

    /// Rows above the diagonal block, i.e. the dimension being extended.
    pub fn height_above(&self) -> usize {
        self.top.rows()
    }

    pub fn stacked(&self) -> DenseMatrix {
        let b = self.width();
        let d = self.height_above();
        let mut out = DenseMatrix::zeros(d + b, b);
        out.set_submatrix(0, 0, &self.top);
        out.set_submatrix(d, 0, &self.diag);
        out
    }

    /// Largest absolute column sum over the stacked column.
    pub fn column_abs_sum_max(&self) -> f64 {
        let b = self.width();
        let mut sums = vec![0.0; b];
        for m in [&self.top, &self.diag] {
            for i in 0..m.rows() {
                for (s, x) in sums.iter_mut().zip(m.row(i)) {
                    *s += x.abs();
                }
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> BlockColumn {
        BlockColumn {
            top: self.top.scaled(factor),
            diag: self.diag.scaled(factor),
        }
    }
}

/// Dense storage of a square matrix that is zero strictly below its block
/// diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTriangularMatrix {
    data: DenseMatrix,
    partition: Partition,
}

impl BlockTriangularMatrix {
    pub fn new(data: DenseMatrix, partition: Partition) -> Result<Self> {
        if !data.is_square() || data.rows() != partition.dim() {
            return Err(Error::DimensionMismatch {
                op: "block triangular matrix",
                left: data.shape(),
                right: (partition.dim(), partition.dim()),
            });
        }
        let m = BlockTriangularMatrix { data, partition };
        if let Some((i, j)) = m.first_below_block_diagonal() {
            return Err(Error::Partition(format!(
                "nonzero entry ({i}, {j}) below the block diagonal"
            )));
        }
        Ok(m)
    }

    pub(crate) fn from_parts_unchecked(data: DenseMatrix, partition: Partition) -> Self {
        debug_assert_eq!(data.rows(), partition.dim());
        BlockTriangularMatrix { data, partition }
    }

    pub fn empty() -> Self {
        BlockTriangularMatrix {
            data: DenseMatrix::zeros(0, 0),
            partition: Partition::empty(),
        }
    }

    /// Builds a matrix by appending the given columns to an empty one.
    pub fn from_columns<'a>(columns: impl IntoIterator<Item = &'a BlockColumn>) -> Result<Self> {
        let mut m = BlockTriangularMatrix::empty();
        for c in columns {
            m = m.append_block_column(c)?;
        }
        Ok(m)
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn into_data(self) -> DenseMatrix {
        self.data
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn num_blocks(&self) -> usize {
        self.partition.num_blocks()
    }

    /// Position of the first nonzero strictly below the block diagonal.
    pub fn first_below_block_diagonal(&self) -> Option<(usize, usize)> {
        for l in 1..self.num_blocks() {
            for i in self.partition.start(l)..self.partition.end(l) {
                let row = &self.data.row(i)[..self.partition.start(l)];
                if let Some(j) = row.iter().position(|&x| x != 0.0) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn is_block_upper_triangular(&self) -> bool {
        self.first_below_block_diagonal().is_none()
    }

    pub fn append_block_column(&self, c: &BlockColumn) -> Result<Self> {
        let mut out = self.clone();
        out.push_block_column(c.top(), c.diag())?;
        Ok(out)
    }

    /// In-place append into freshly allocated storage of the new size.
    pub(crate) fn push_block_column(&mut self, top: &DenseMatrix, diag: &DenseMatrix) -> Result<()> {
        let d = self.dim();
        if top.rows() != d || top.cols() != diag.cols() || !diag.is_square() {
            return Err(Error::DimensionMismatch {
                op: "append_block_column",
                left: (d, d),
                right: top.shape(),
            });
        }
        let b = diag.rows();
        let n = d + b;
        let mut data = DenseMatrix::zeros(n, n);
        for i in 0..d {
            let row = data.row_mut(i);
            row[..d].copy_from_slice(self.data.row(i));
            row[d..].copy_from_slice(top.row(i));
        }
        for i in 0..b {
            data.row_mut(d + i)[d..].copy_from_slice(diag.row(i));
        }
        self.partition.push(b)?;
        self.data = data;
        Ok(())
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        let n = self.num_blocks();
        if i >= n || j >= n {
            return Err(Error::BlockIndex {
                i,
                j,
                reason: "out of range",
            });
        }
        if i > j {
            return Err(Error::BlockIndex {
                i,
                j,
                reason: "below the block diagonal",
            });
        }
        Ok(())
    }

    /// Copy of block `(i, j)`, `i <= j`.
    pub fn block(&self, i: usize, j: usize) -> Result<DenseMatrix> {
        self.check_index(i, j)?;
        let p = &self.partition;
        Ok(self.data.submatrix(p.start(i), p.start(j), p.size(i), p.size(j)))
    }

    /// Leading principal submatrix made of blocks `0..=l`.
    pub fn leading(&self, l: usize) -> Result<Self> {
        if l >= self.num_blocks() {
            return Err(Error::BlockIndex {
                i: l,
                j: l,
                reason: "out of range",
            });
        }
        let d = self.partition.end(l);
        Ok(BlockTriangularMatrix {
            data: self.data.submatrix(0, 0, d, d),
            partition: self.partition.leading(l),
        })
    }

    /// Same data with blocks `0..=l` fused into one diagonal block.
    pub fn merge_leading_blocks(&self, l: usize) -> Result<Self> {
        if l >= self.num_blocks() {
            return Err(Error::BlockIndex {
                i: l,
                j: l,
                reason: "out of range",
            });
        }
        Ok(BlockTriangularMatrix {
            data: self.data.clone(),
            partition: self.partition.merged(l),
        })
    }

    /// Last block column split into its top part and diagonal block.
    pub fn last_block_column(&self) -> Option<BlockColumn> {
        let n = self.num_blocks().checked_sub(1)?;
        let p = &self.partition;
        let (d, b) = (p.start(n), p.size(n));
        Some(BlockColumn {
            top: self.data.submatrix(0, d, d, b),
            diag: self.data.submatrix(d, d, b, b),
        })
    }

    /// Block column `l` as it was appended.
    pub fn block_column(&self, l: usize) -> Result<BlockColumn> {
        self.leading(l)
            .map(|m| m.last_block_column().expect("at least one block"))
    }

    /// `self * x` for a `dim x k` right-hand side, skipping the zero blocks
    /// below the diagonal.
    #[cfg(test)]
    pub(crate) fn mul_tall(&self, x: MatView<'_>) -> DenseMatrix {
        let d = self.dim();
        assert_eq!(x.rows(), d);
        let k = x.cols();
        let mut out = DenseMatrix::zeros(d, k);
        let _ = self.mul_tall_into(x, &mut out, 0.0);
        out
    }

    /// `out = self * x + beta * out`, block row by block row.
    pub(crate) fn mul_tall_into(&self, x: MatView<'_>, out: &mut DenseMatrix, beta: f64) -> Result<()> {
        let d = self.dim();
        if x.rows() != d || out.rows() != d || out.cols() != x.cols() {
            return Err(Error::DimensionMismatch {
                op: "block product",
                left: (d, d),
                right: (x.rows(), x.cols()),
            });
        }
        let p = &self.partition;
        for l in 0..self.num_blocks() {
            let (r0, r1) = (p.start(l), p.end(l));
            let a = self.data.subview(r0, r0, r1 - r0, d - r0);
            let xs = x.rows_range(r0, d);
            gemm_into(1.0, a, xs, beta, out, r0, 0);
        }
        Ok(())
    }
}

/// Reads the block-column stream format: a line with the number of block
/// columns, then for each column a line with its width `b` followed by the
/// stacked `(d + b) x b` column in the dense matrix text format.
pub fn read_column_stream(text: &str) -> Result<Vec<BlockColumn>> {
    let mut lines = text.lines().enumerate();
    let (ln, header) = next_nonblank(&mut lines).ok_or(Error::Parse {
        line: 0,
        msg: "empty column stream".into(),
    })?;
    let count: usize = header.trim().parse().map_err(|e| Error::Parse {
        line: ln + 1,
        msg: format!("bad block count: {e}"),
    })?;
    let mut columns = Vec::with_capacity(count);
    let mut dim = 0;
    for _ in 0..count {
        let (ln, size_line) = next_nonblank(&mut lines).ok_or(Error::Parse {
            line: ln + 1,
            msg: format!("expected {count} block columns, found {}", columns.len()),
        })?;
        let b: usize = size_line.trim().parse().map_err(|e| Error::Parse {
            line: ln + 1,
            msg: format!("bad block size: {e}"),
        })?;
        let stacked = DenseMatrix::parse_lines(&mut lines)?;
        if stacked.shape() != (dim + b, b) {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!(
                    "block column {} should be {}x{b}, found {}x{}",
                    columns.len(),
                    dim + b,
                    stacked.rows(),
                    stacked.cols()
                ),
            });
        }
        columns.push(BlockColumn::from_stacked(&stacked)?);
        dim += b;
    }
    Ok(columns)
}

fn next_nonblank<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Option<(usize, &'a str)> {
    lines.find(|(_, l)| !l.trim().is_empty())
}

pub fn write_column_stream(columns: &[BlockColumn]) -> String {
    let mut out = format!("{}\n", columns.len());
    for c in columns {
        let _ = writeln!(out, "{}", c.width());
        out.push_str(&c.stacked().to_text());
    }
    out
}

/// Partition file: one line of space-separated block sizes.
pub fn partition_to_text(p: &Partition) -> String {
    let sizes: Vec<String> = p.sizes().iter().map(|b| b.to_string()).collect();
    format!("{}\n", sizes.join(" "))
}

pub fn partition_from_text(text: &str) -> Result<Partition> {
    let sizes = text
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad block size: {e}"),
        })?;
    Partition::new(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn append_to_empty() {
        let c = BlockColumn::first(m(&[&[5.0]])).unwrap();
        let a = BlockTriangularMatrix::empty().append_block_column(&c).unwrap();
        assert_eq!(a.data(), &m(&[&[5.0]]));
        assert_eq!(a.partition().sizes(), &[1]);
    }

    #[test]
    fn append_direct_construction() {
        let base =
            BlockTriangularMatrix::new(m(&[&[1.0, 7.0], &[0.0, 1.5]]), Partition::new(vec![1, 1]).unwrap()).unwrap();
        let c = BlockColumn::new(m(&[&[2.0], &[3.0]]), m(&[&[4.0]])).unwrap();
        let a = base.append_block_column(&c).unwrap();
        let want = m(&[&[1.0, 7.0, 2.0], &[0.0, 1.5, 3.0], &[0.0, 0.0, 4.0]]);
        assert_eq!(a.data(), &want);
        assert_eq!(a.leading(1).unwrap(), base);

        let bad = BlockColumn::new(m(&[&[2.0]]), m(&[&[4.0]])).unwrap();
        assert!(base.append_block_column(&bad).is_err());
    }

    #[test]
    fn rejects_entries_below_block_diagonal() {
        let data = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(BlockTriangularMatrix::new(data.clone(), Partition::new(vec![1, 1]).unwrap()).is_err());
        assert!(BlockTriangularMatrix::new(data, Partition::new(vec![2]).unwrap()).is_ok());
    }

    #[test]
    fn block_access() {
        let data = DenseMatrix::from_fn(6, 6, |i, j| if i <= j { (10 * i + j) as f64 } else { 0.0 });
        let a = BlockTriangularMatrix::new(data, Partition::new(vec![1, 2, 3]).unwrap()).unwrap();
        assert_eq!(a.block(1, 1).unwrap(), m(&[&[11.0, 12.0], &[0.0, 22.0]]));
        assert_eq!(a.block(0, 1).unwrap().shape(), (1, 2));
        assert!(matches!(a.block(2, 1), Err(Error::BlockIndex { .. })));
        assert!(a.block(0, 3).is_err());

        // reassemble row by row
        let mut back = DenseMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in i..3 {
                let p = a.partition();
                back.set_submatrix(p.start(i), p.start(j), &a.block(i, j).unwrap());
            }
        }
        assert_eq!(&back, a.data());
    }

    #[test]
    fn leading_and_merge() {
        let data = DenseMatrix::from_fn(6, 6, |i, j| if i <= j { 1.0 + (i * j) as f64 } else { 0.0 });
        let a = BlockTriangularMatrix::new(data, Partition::new(vec![1, 2, 3]).unwrap()).unwrap();
        assert_eq!(a.leading(2).unwrap(), a);
        assert_eq!(a.leading(1).unwrap().dim(), 3);
        assert!(a.leading(3).is_err());

        assert_eq!(a.merge_leading_blocks(0).unwrap(), a);
        let merged = a.merge_leading_blocks(1).unwrap();
        assert_eq!(merged.partition().sizes(), &[3, 3]);
        assert_eq!(merged.data(), a.data());
    }

    #[test]
    fn column_stream_round_trip() {
        let cols = vec![
            BlockColumn::first(m(&[&[-1.0, 0.5], &[0.0, -2.0]])).unwrap(),
            BlockColumn::new(m(&[&[0.25], &[1e-3]]), m(&[&[-3.0]])).unwrap(),
        ];
        let text = write_column_stream(&cols);
        assert_eq!(read_column_stream(&text).unwrap(), cols);
        assert!(read_column_stream("2\n1\n1 1\n0\n").is_err());
        let bad = "1\n2\n3 2\n1 2\n3 4\n5 6\n";
        assert!(read_column_stream(bad).is_err());
    }

    #[test]
    fn partition_text() {
        let p = Partition::new(vec![1, 2, 3]).unwrap();
        assert_eq!(partition_from_text(&partition_to_text(&p)).unwrap(), p);
        assert!(partition_from_text("1 0").is_err());
        assert_eq!(p.block_of(0), 0);
        assert_eq!(p.block_of(2), 1);
        assert_eq!(p.block_of(5), 2);
    }

    #[test]
    fn mul_tall_matches_dense() {
        let data = DenseMatrix::from_fn(7, 7, |i, j| if i <= j { (i as f64 - j as f64).sin() } else { 0.0 });
        let a = BlockTriangularMatrix::new(data, Partition::new(vec![2, 1, 4]).unwrap()).unwrap();
        let x = DenseMatrix::from_fn(7, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let got = a.mul_tall(x.view());
        let want = crate::dense::matmul(a.data(), &x).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    fn arb_columns() -> impl Strategy<Value = Vec<BlockColumn>> {
        prop::collection::vec((1usize..4, any::<u64>()), 1..6).prop_map(|spec| {
            let mut d = 0;
            spec.into_iter()
                .map(|(b, seed)| {
                    let f = |i: usize, j: usize| ((seed as f64) * 1e-19 + (i * 7 + j * 3) as f64).sin();
                    let c = BlockColumn::new(DenseMatrix::from_fn(d, b, f), DenseMatrix::from_fn(b, b, f)).unwrap();
                    d += b;
                    c
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn appends_nest_exactly(cols in arb_columns()) {
            let mut prev = BlockTriangularMatrix::empty();
            for c in &cols {
                let next = prev.append_block_column(c).unwrap();
                prop_assert!(next.is_block_upper_triangular());
                if prev.num_blocks() > 0 {
                    prop_assert_eq!(next.leading(prev.num_blocks() - 1).unwrap(), prev.clone());
                }
                prop_assert_eq!(&next.last_block_column().unwrap(), c);
                prev = next;
            }
        }
    }
}
