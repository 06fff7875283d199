//! Diagonal Padé scaling and squaring for dense matrices.
//!
//! This is the non-incremental reference: it evaluates `p` and `q` from
//! explicit powers of the scaled matrix, solves `q⁻¹ p` through one LU
//! factorization and squares `s` times. The incremental engine starts from
//! exactly the same kernel, so a fresh start and this routine agree bit for
//! bit when they use the same `s`.

use crate::dense::{gemm_into, lu_factor, lu_solve, matmul, one_norm, DenseMatrix, LuFactors};
use crate::error::{Error, Result};

/// Norm threshold paired with the degree-13 approximant.
pub const THETA_13: f64 = 5.371920351148152;

pub const DEFAULT_DEGREE: usize = 13;

pub const SUPPORTED_DEGREES: [usize; 5] = [3, 5, 7, 9, 13];

/// Coefficients of the `[m/m]` Padé approximant to `exp`, with
/// `q(z) = p(-z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PadeCoefficients {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl PadeCoefficients {
    /// Any degree `m >= 1`. Use [`pade_coefficients`] for the degrees the
    /// scaling thresholds are tuned for.
    pub fn diagonal(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::UnsupportedDegree(m));
        }
        let mut numerator = Vec::with_capacity(m + 1);
        let mut a = 1.0;
        numerator.push(a);
        for l in 0..m {
            a *= (m - l) as f64 / (((2 * m - l) * (l + 1)) as f64);
            numerator.push(a);
        }
        let denominator = numerator
            .iter()
            .enumerate()
            .map(|(l, &a)| if l % 2 == 0 { a } else { -a })
            .collect();
        Ok(PadeCoefficients { numerator, denominator })
    }

    pub fn degree(&self) -> usize {
        self.numerator.len() - 1
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }
}

impl Default for PadeCoefficients {
    fn default() -> Self {
        PadeCoefficients::diagonal(DEFAULT_DEGREE).expect("degree 13 is valid")
    }
}

pub fn pade_coefficients(m: usize) -> Result<PadeCoefficients> {
    if !SUPPORTED_DEGREES.contains(&m) {
        return Err(Error::UnsupportedDegree(m));
    }
    PadeCoefficients::diagonal(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingChoice {
    pub s: u32,
    pub theta: f64,
}

/// Smallest `s >= 0` with `2^-s * norm <= theta`.
pub fn scaling_for_norm(norm: f64, theta: f64) -> u32 {
    assert!(theta > 0.0, "theta must be positive");
    let mut s = 0u32;
    let mut scaled = norm;
    while scaled > theta {
        scaled *= 0.5;
        s += 1;
    }
    s
}

pub fn select_scaling(g: &DenseMatrix, theta: f64) -> ScalingChoice {
    ScalingChoice {
        s: scaling_for_norm(one_norm(g), theta),
        theta,
    }
}

/// `2^-s`, exact for the exponent range used here.
pub(crate) fn pow2_neg(s: u32) -> f64 {
    (0..s).fold(1.0, |acc, _| acc * 0.5)
}

/// Everything the scaled Padé evaluation produces for a dense matrix.
pub(crate) struct PadeParts {
    pub scaled: DenseMatrix,
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    pub lu: LuFactors,
    /// `squares[l]` is `(q⁻¹p)^(2^l)` for `l = 0..=s`.
    pub squares: Vec<DenseMatrix>,
}

pub(crate) fn scaled_pade_parts(g: &DenseMatrix, s: u32, pade: &PadeCoefficients) -> Result<PadeParts> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch {
            op: "expm",
            left: g.shape(),
            right: (g.cols(), g.rows()),
        });
    }
    let n = g.rows();
    let scaled = g.scaled(pow2_neg(s));

    let alpha = pade.numerator();
    let beta = pade.denominator();
    let mut p = DenseMatrix::identity(n).scaled(alpha[0]);
    let mut q = DenseMatrix::identity(n).scaled(beta[0]);
    let mut power = DenseMatrix::identity(n);
    for l in 1..=pade.degree() {
        power = if l == 1 {
            scaled.clone()
        } else {
            let mut next = DenseMatrix::zeros(n, n);
            gemm_into(1.0, scaled.view(), power.view(), 0.0, &mut next, 0, 0);
            next
        };
        p.add_scaled(alpha[l], &power)?;
        q.add_scaled(beta[l], &power)?;
    }

    let lu = lu_factor(&q)?;
    let rational = lu_solve(&lu, &p)?;
    let mut squares = Vec::with_capacity(s as usize + 1);
    squares.push(rational);
    for _ in 0..s {
        let last = squares.last().expect("non-empty");
        let sq = matmul(last, last)?;
        squares.push(sq);
    }
    Ok(PadeParts {
        scaled,
        p,
        q,
        lu,
        squares,
    })
}

/// `exp(g)` with a caller-chosen scaling power.
pub fn expm_with_scaling(g: &DenseMatrix, s: u32, pade: &PadeCoefficients) -> Result<DenseMatrix> {
    let mut parts = scaled_pade_parts(g, s, pade)?;
    Ok(parts.squares.pop().expect("s+1 squares"))
}

/// `exp(g)` with `s` chosen by the 1-norm test against `theta`.
pub fn expm_baseline(g: &DenseMatrix, degree: usize, theta: f64) -> Result<DenseMatrix> {
    let pade = pade_coefficients(degree)?;
    let s = select_scaling(g, theta).s;
    expm_with_scaling(g, s, &pade)
}

/// Degree 13 with the matching threshold.
pub fn expm(g: &DenseMatrix) -> Result<DenseMatrix> {
    expm_baseline(g, DEFAULT_DEGREE, THETA_13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::rel_error_frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coefficients_low_degrees() {
        let p1 = PadeCoefficients::diagonal(1).unwrap();
        assert_eq!(p1.numerator(), &[1.0, 0.5]);
        assert_eq!(p1.denominator(), &[1.0, -0.5]);

        let p3 = pade_coefficients(3).unwrap();
        let want = [1.0, 0.5, 0.1, 1.0 / 120.0];
        for (a, b) in p3.numerator().iter().zip(want) {
            assert!((a - b).abs() <= 1e-16 * b);
        }
        assert!(pade_coefficients(4).is_err());
        assert!(PadeCoefficients::diagonal(0).is_err());
    }

    #[test]
    fn coefficients_positive_decreasing_alternating() {
        for m in SUPPORTED_DEGREES {
            let c = pade_coefficients(m).unwrap();
            assert_eq!(c.degree(), m);
            assert_eq!(c.numerator()[0], 1.0);
            assert_eq!(c.denominator()[0], 1.0);
            for w in c.numerator().windows(2) {
                assert!(w[0] > w[1] && w[1] > 0.0);
            }
            for (l, (a, b)) in c.numerator().iter().zip(c.denominator()).enumerate() {
                assert_eq!(*b, if l % 2 == 0 { *a } else { -*a });
            }
        }
    }

    #[test]
    fn coefficients_match_factorial_formula() {
        fn fact(n: u128) -> u128 {
            (1..=n).product::<u128>()
        }
        let m = 13u128;
        let c = pade_coefficients(13).unwrap();
        for l in 0..=m {
            let num = fact(m) * fact(2 * m - l);
            let den = fact(2 * m) * fact(l) * fact(m - l);
            let exact = num as f64 / den as f64;
            let rel = (c.numerator()[l as usize] - exact).abs() / exact;
            assert!(rel < 1e-14, "l={l} rel={rel}");
        }
    }

    #[test]
    fn scaling_selection() {
        let with_norm = |x: f64| DenseMatrix::from_diagonal(&[x]);
        assert_eq!(select_scaling(&with_norm(1.0), 5.37).s, 0);
        assert_eq!(select_scaling(&with_norm(100.0), 5.37).s, 5);
        assert_eq!(select_scaling(&with_norm(5.37), 5.37).s, 0);
        assert_eq!(select_scaling(&DenseMatrix::zeros(3, 3), THETA_13).s, 0);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = expm(&DenseMatrix::zeros(4, 4)).unwrap();
        assert_eq!(e, DenseMatrix::identity(4));
    }

    #[test]
    fn exp_of_diagonal() {
        let e = expm(&DenseMatrix::from_diagonal(&[1.0, 2.0])).unwrap();
        let want = DenseMatrix::from_diagonal(&[1f64.exp(), 2f64.exp()]);
        assert!(rel_error_frobenius(&want, &e).unwrap() <= 1e-14);
        assert_eq!(e.get(0, 1), 0.0);
    }

    #[test]
    fn exp_of_triangular_two_by_two() {
        let (a, b, c) = (-1.0f64, -2.0f64, 3.0f64);
        let g = DenseMatrix::from_rows(&[[a, c], [0.0, b]]).unwrap();
        let e = expm(&g).unwrap();
        let off = c * (a.exp() - b.exp()) / (a - b);
        assert!((e.get(0, 1) - off).abs() <= 1e-13 * off.abs());
        assert!((e.get(0, 0) - a.exp()).abs() <= 1e-15);
        assert_eq!(e.get(1, 0), 0.0);
    }

    #[test]
    fn exp_inverse_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let g = DenseMatrix::from_fn(9, 9, |_, _| rng.gen_range(-1.0..1.0));
            let g = g.scaled(15.0 / one_norm(&g));
            let e = expm(&g).unwrap();
            let einv = expm(&g.scaled(-1.0)).unwrap();
            let prod = matmul(&e, &einv).unwrap();
            assert!(rel_error_frobenius(&DenseMatrix::identity(9), &prod).unwrap() <= 1e-10);
            let et = expm(&g.transpose()).unwrap();
            assert!(rel_error_frobenius(&e.transpose(), &et).unwrap() <= 1e-13);
        }
    }

    #[test]
    fn rejects_rectangular() {
        assert!(expm(&DenseMatrix::zeros(2, 3)).is_err());
    }
}
