//! Incremental scaling and squaring for nested block upper triangular
//! matrices.
//!
//! For `G_n = [G_{n-1} g_n; 0 G_nn]` only the last block column of
//! `exp(G_n)` is new. The state keeps everything needed to produce it
//! without touching `O(d^3)` work:
//!
//! * `G̃ = 2^-s G`, the Padé numerator `P = p(G̃)` and denominator `Q = q(G̃)`;
//! * LU factors of every diagonal block `Q_ll`;
//! * every intermediate square `F̃^(2^l)`, `l = 0..=s`, where `F̃ = Q⁻¹P`.
//!
//! One step extends `P` and `Q` through the recurrence
//! `X_l = G̃_{n-1} X_{l-1} + g̃_n G̃_nn^(l-1)`, solves for the new column of
//! `F̃` by block back substitution, and pushes the column through the
//! squaring phase with `Z_l = F̃_{n-1}^(2^(l-1)) Z_{l-1} + Z_{l-1} F̃_nn^(2^(l-1))`.

use web_time::Instant;

use crate::block::{BlockColumn, BlockTriangularMatrix, Partition};
use crate::dense::{gemm_into, lu_factor, lu_solve, matmul, one_norm, DenseMatrix, LuFactors};
use crate::error::{Error, Result};
use crate::pade::{pow2_neg, scaled_pade_parts, scaling_for_norm, PadeCoefficients};

/// New last block columns of `P` and `Q`, together with the scaled input
/// column they were computed from.
#[derive(Clone, Debug)]
pub struct PqColumn {
    pub scaled: BlockColumn,
    pub p_top: DenseMatrix,
    pub p_diag: DenseMatrix,
    pub q_top: DenseMatrix,
    pub q_diag: DenseMatrix,
}

/// New last block column of `F̃ = Q⁻¹P` and the factors of `Q_nn`.
#[derive(Clone, Debug)]
pub struct RationalColumn {
    pub top: DenseMatrix,
    pub diag: DenseMatrix,
    pub lu: LuFactors,
}

/// New last block columns of `F̃^(2^l)`; entry `l` is `(Z_l, F̃_nn^(2^l))`.
#[derive(Clone, Debug)]
pub struct SquaredColumns {
    pub columns: Vec<(DenseMatrix, DenseMatrix)>,
}

#[derive(Clone, Debug)]
pub struct IncrementalExpState {
    scaled: BlockTriangularMatrix,
    s: u32,
    pade: PadeCoefficients,
    p: BlockTriangularMatrix,
    q: BlockTriangularMatrix,
    lu: Vec<LuFactors>,
    // squares[l] = F̃^(2^l); the last entry is the current exponential
    squares: Vec<BlockTriangularMatrix>,
}

fn ill_conditioned(block: usize, lu: &LuFactors, q: &DenseMatrix) -> Error {
    Error::IllConditioned {
        block,
        pivot: lu.min_pivot(),
        threshold: crate::dense::PIVOT_WARN_RATIO * one_norm(q),
    }
}

impl IncrementalExpState {
    /// Scaling and squaring of the first diagonal block with a fixed `s`,
    /// keeping every intermediate.
    pub fn init(g0: &DenseMatrix, s: u32, pade: &PadeCoefficients) -> Result<Self> {
        let parts = scaled_pade_parts(g0, s, pade)?;
        if parts.lu.ill_conditioned() {
            return Err(ill_conditioned(0, &parts.lu, &parts.q));
        }
        let single = Partition::new(vec![g0.rows()]).map_err(|_| Error::Partition("initial block is empty".into()))?;
        let wrap = |m: DenseMatrix| BlockTriangularMatrix::from_parts_unchecked(m, single.clone());
        Ok(IncrementalExpState {
            scaled: wrap(parts.scaled),
            s,
            pade: pade.clone(),
            p: wrap(parts.p),
            q: wrap(parts.q),
            lu: vec![parts.lu],
            squares: parts.squares.into_iter().map(wrap).collect(),
        })
    }

    pub fn scaling_power(&self) -> u32 {
        self.s
    }

    pub fn pade(&self) -> &PadeCoefficients {
        &self.pade
    }

    pub fn scaled_matrix(&self) -> &BlockTriangularMatrix {
        &self.scaled
    }

    pub fn numerator(&self) -> &BlockTriangularMatrix {
        &self.p
    }

    pub fn denominator(&self) -> &BlockTriangularMatrix {
        &self.q
    }

    pub fn lu_cache(&self) -> &[LuFactors] {
        &self.lu
    }

    pub fn squares(&self) -> &[BlockTriangularMatrix] {
        &self.squares
    }

    /// Current approximation of `exp(G_n)`.
    pub fn exponential(&self) -> &BlockTriangularMatrix {
        self.squares.last().expect("squaring cache holds s+1 entries")
    }

    pub fn partition(&self) -> &Partition {
        self.scaled.partition()
    }

    pub fn dim(&self) -> usize {
        self.scaled.dim()
    }

    /// Last block columns of `P_n` and `Q_n` from the cached `G̃_{n-1}`.
    pub fn extend_pq(&self, c: &BlockColumn) -> Result<PqColumn> {
        let d = self.dim();
        if c.height_above() != d {
            return Err(Error::DimensionMismatch {
                op: "extend_pq",
                left: (d, d),
                right: c.top().shape(),
            });
        }
        let b = c.width();
        let scaled = c.scaled(pow2_neg(self.s));
        let g = scaled.top();
        let dg = scaled.diag();
        let alpha = self.pade.numerator();
        let beta = self.pade.denominator();

        let mut p_top = DenseMatrix::zeros(d, b);
        let mut q_top = DenseMatrix::zeros(d, b);
        let mut p_diag = DenseMatrix::identity(b).scaled(alpha[0]);
        let mut q_diag = DenseMatrix::identity(b).scaled(beta[0]);

        // diag_pow = G̃_nn^(l-1) at the top of iteration l
        let mut diag_pow = DenseMatrix::identity(b);
        let mut x = g.clone();
        for l in 1..=self.pade.degree() {
            if l > 1 {
                // X_l = G̃_{n-1} X_{l-1} + g̃ G̃_nn^(l-1)
                let mut next = DenseMatrix::zeros(d, b);
                self.scaled.mul_tall_into(x.view(), &mut next, 0.0)?;
                gemm_into(1.0, g.view(), diag_pow.view(), 1.0, &mut next, 0, 0);
                x = next;
            }
            diag_pow = if l == 1 { dg.clone() } else { matmul(dg, &diag_pow)? };
            p_top.add_scaled(alpha[l], &x)?;
            q_top.add_scaled(beta[l], &x)?;
            p_diag.add_scaled(alpha[l], &diag_pow)?;
            q_diag.add_scaled(beta[l], &diag_pow)?;
        }
        Ok(PqColumn {
            scaled,
            p_top,
            p_diag,
            q_top,
            q_diag,
        })
    }

    /// Last block column of `F̃_n = Q_n⁻¹ P_n` by block back substitution
    /// with the cached diagonal factors.
    pub fn solve_rational_column(&self, pq: &PqColumn) -> Result<RationalColumn> {
        let d = self.dim();
        let n = self.lu.len();
        if pq.p_top.rows() != d || pq.q_top.rows() != d {
            return Err(Error::DimensionMismatch {
                op: "solve_rational_column",
                left: (d, d),
                right: pq.p_top.shape(),
            });
        }
        let lu = lu_factor(&pq.q_diag)?;
        if lu.ill_conditioned() {
            return Err(ill_conditioned(n, &lu, &pq.q_diag));
        }
        let diag = lu_solve(&lu, &pq.p_diag)?;
        let b = diag.cols();

        // Y = p_n - q_n F̃_nn
        let mut y = pq.p_top.clone();
        gemm_into(-1.0, pq.q_top.view(), diag.view(), 1.0, &mut y, 0, 0);

        let part = self.partition();
        let qd = self.q.data();
        let mut top = DenseMatrix::zeros(d, b);
        for l in (0..n).rev() {
            let (r0, r1) = (part.start(l), part.end(l));
            let mut rhs = y.submatrix(r0, 0, r1 - r0, b);
            if r1 < d {
                gemm_into(
                    -1.0,
                    qd.subview(r0, r1, r1 - r0, d - r1),
                    top.subview(r1, 0, d - r1, b),
                    1.0,
                    &mut rhs,
                    0,
                    0,
                );
            }
            let block = lu_solve(&self.lu[l], &rhs)?;
            top.set_submatrix(r0, 0, &block);
        }
        Ok(RationalColumn { top, diag, lu })
    }

    /// Pushes the new column of `F̃` through the `s` squarings using the
    /// cached powers of `F̃_{n-1}`.
    pub fn squaring_column(&self, f: &RationalColumn) -> Result<SquaredColumns> {
        let s = self.s as usize;
        if self.squares.len() != s + 1 {
            return Err(Error::Invariant(format!(
                "squaring cache holds {} matrices, expected s+1 = {}",
                self.squares.len(),
                s + 1
            )));
        }
        let d = self.dim();
        if f.top.rows() != d {
            return Err(Error::DimensionMismatch {
                op: "squaring_column",
                left: (d, d),
                right: f.top.shape(),
            });
        }
        let mut columns = Vec::with_capacity(s + 1);
        columns.push((f.top.clone(), f.diag.clone()));
        for l in 1..=s {
            let (z, dpow) = columns.last().expect("non-empty");
            let mut next_z = DenseMatrix::zeros(d, z.cols());
            self.squares[l - 1].mul_tall_into(z.view(), &mut next_z, 0.0)?;
            gemm_into(1.0, z.view(), dpow.view(), 1.0, &mut next_z, 0, 0);
            let next_d = matmul(dpow, dpow)?;
            columns.push((next_z, next_d));
        }
        Ok(SquaredColumns { columns })
    }

    /// Appends one block column: `F_{n-1}` becomes `F_n`.
    pub fn step(&mut self, c: &BlockColumn) -> Result<()> {
        let pq = self.extend_pq(c)?;
        let f = self.solve_rational_column(&pq)?;
        let sq = self.squaring_column(&f)?;

        self.scaled.push_block_column(pq.scaled.top(), pq.scaled.diag())?;
        self.p.push_block_column(&pq.p_top, &pq.p_diag)?;
        self.q.push_block_column(&pq.q_top, &pq.q_diag)?;
        self.lu.push(f.lu);
        for (cached, (z, dpow)) in self.squares.iter_mut().zip(&sq.columns) {
            cached.push_block_column(z, dpow)?;
        }
        Ok(())
    }
}

/// How the scaling power is chosen along the sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scaling {
    /// One `s` for every stage.
    Fixed(u32),
    /// Keep `2^-s ||G_l||_1 <= theta`, restarting with a larger `s` and a
    /// repartitioned matrix when a new column breaks the bound.
    Adaptive { theta: f64 },
}

impl std::str::FromStr for Scaling {
    type Err = Error;

    /// `fixed:<s>` or `adaptive:<theta>`; a bare `adaptive` uses the
    /// degree-13 threshold.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("bad scaling `{text}` (use fixed:<s> or adaptive[:<theta>])"));
        match text.split_once(':') {
            Some(("fixed", s)) => s.parse().map(Scaling::Fixed).map_err(|_| bad()),
            Some(("adaptive", t)) => {
                let theta: f64 = t.parse().map_err(|_| bad())?;
                if theta > 0.0 {
                    Ok(Scaling::Adaptive { theta })
                } else {
                    Err(bad())
                }
            }
            None if text == "adaptive" => Ok(Scaling::Adaptive {
                theta: crate::pade::THETA_13,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub dim: usize,
    pub restart: bool,
    pub s: u32,
    pub seconds: f64,
}

/// Drives an [`IncrementalExpState`] along a sequence of block columns,
/// handling restarts in adaptive mode. The exponential is always reported in
/// the partition the caller supplied, whatever repartitioning happened
/// internally.
#[derive(Clone, Debug)]
pub struct IncrementalExp {
    state: IncrementalExpState,
    scaling: Scaling,
    partition: Partition,
    // unscaled input, kept for restarts in adaptive mode
    input: Option<BlockTriangularMatrix>,
    norm: f64,
    step: usize,
    restarts: usize,
}

impl IncrementalExp {
    /// Computes `F_0` for the first diagonal block.
    pub fn start(g0: &DenseMatrix, scaling: Scaling, pade: &PadeCoefficients) -> Result<(Self, StepReport)> {
        let t = Instant::now();
        let norm = one_norm(g0);
        let (s, input) = match scaling {
            Scaling::Fixed(s) => (s, None),
            Scaling::Adaptive { theta } => {
                if !(theta > 0.0) {
                    return Err(Error::InvalidParams(format!("theta must be positive, got {theta}")));
                }
                let first = BlockTriangularMatrix::from_columns([&BlockColumn::first(g0.clone())?])?;
                (scaling_for_norm(norm, theta), Some(first))
            }
        };
        let state = IncrementalExpState::init(g0, s, pade)?;
        let partition = state.partition().clone();
        let report = StepReport {
            step: 0,
            dim: g0.rows(),
            restart: false,
            s,
            seconds: t.elapsed().as_secs_f64(),
        };
        let me = IncrementalExp {
            state,
            scaling,
            partition,
            input,
            norm,
            step: 0,
            restarts: 0,
        };
        Ok((me, report))
    }

    /// Appends one block column and updates the exponential.
    pub fn push(&mut self, c: &BlockColumn) -> Result<StepReport> {
        let t = Instant::now();
        let mut restart = false;
        match self.scaling {
            Scaling::Fixed(_) => self.state.step(c)?,
            Scaling::Adaptive { theta } => {
                let input = self.input.as_mut().expect("adaptive mode keeps its input");
                if c.height_above() != input.dim() {
                    return Err(Error::DimensionMismatch {
                        op: "push",
                        left: (input.dim(), input.dim()),
                        right: c.top().shape(),
                    });
                }
                let norm = self.norm.max(c.column_abs_sum_max());
                input.push_block_column(c.top(), c.diag())?;
                self.norm = norm;
                if norm * pow2_neg(self.state.s) > theta {
                    // Fuse every block seen so far, current one included,
                    // and start over with the larger scaling power.
                    let s = scaling_for_norm(norm, theta);
                    let merged = input.merge_leading_blocks(input.num_blocks() - 1)?;
                    self.state = IncrementalExpState::init(merged.data(), s, self.state.pade())?;
                    self.restarts += 1;
                    restart = true;
                } else {
                    self.state.step(c)?;
                }
            }
        }
        self.partition.push(c.width())?;
        if let Scaling::Fixed(_) = self.scaling {
            self.norm = self.norm.max(c.column_abs_sum_max());
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            dim: self.partition.dim(),
            restart,
            s: self.state.s,
            seconds: t.elapsed().as_secs_f64(),
        })
    }

    /// Current `F_n` as dense data.
    pub fn exponential_data(&self) -> &DenseMatrix {
        self.state.exponential().data()
    }

    /// Current `F_n` in the caller's partition.
    pub fn exponential(&self) -> BlockTriangularMatrix {
        BlockTriangularMatrix::from_parts_unchecked(self.exponential_data().clone(), self.partition.clone())
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn state(&self) -> &IncrementalExpState {
        &self.state
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn scaling_power(&self) -> u32 {
        self.state.s
    }

    /// Running `||G_n||_1`.
    pub fn input_norm(&self) -> f64 {
        self.norm
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }
}

/// Runs the incremental exponential over `g0` followed by `columns`, calling
/// `visit` after every stage. `visit` returns `true` to stop.
pub fn run<I>(
    g0: &DenseMatrix,
    columns: I,
    scaling: Scaling,
    pade: &PadeCoefficients,
    mut visit: impl FnMut(&IncrementalExp, &StepReport) -> bool,
) -> Result<Vec<StepReport>>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<BlockColumn>,
{
    use std::borrow::Borrow;
    let (mut engine, report) = IncrementalExp::start(g0, scaling, pade)?;
    let stop = visit(&engine, &report);
    let mut reports = vec![report];
    if stop {
        return Ok(reports);
    }
    for c in columns {
        let report = engine.push(c.borrow())?;
        let stop = visit(&engine, &report);
        reports.push(report);
        if stop {
            break;
        }
    }
    Ok(reports)
}

/// Fixed scaling power for the whole sequence.
pub fn run_fixed<I>(
    g0: &DenseMatrix,
    columns: I,
    s: u32,
    pade: &PadeCoefficients,
    visit: impl FnMut(&IncrementalExp, &StepReport) -> bool,
) -> Result<Vec<StepReport>>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<BlockColumn>,
{
    run(g0, columns, Scaling::Fixed(s), pade, visit)
}

/// Scaling power kept at the smallest value satisfying the norm test.
pub fn run_adaptive<I>(
    g0: &DenseMatrix,
    columns: I,
    pade: &PadeCoefficients,
    theta: f64,
    visit: impl FnMut(&IncrementalExp, &StepReport) -> bool,
) -> Result<Vec<StepReport>>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<BlockColumn>,
{
    run(g0, columns, Scaling::Adaptive { theta }, pade, visit)
}
