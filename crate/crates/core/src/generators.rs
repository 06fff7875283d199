//! Generators of polynomial diffusions on the monomial basis.
//!
//! A polynomial diffusion has generator `Gf = ½ tr(A ∇²f) + bᵀ∇f` with
//! `A_ij` of degree at most 2 and `b_i` of degree at most 1, so `G` maps
//! polynomials of degree `n` to polynomials of degree at most `n`. On a
//! degree-graded basis this makes the matrix of `G` restricted to degree
//! `<= n` block upper triangular with one diagonal block per degree, and
//! raising `n` appends one block column.
//!
//! Basis order: by total degree, then by the exponent of `x_1` descending,
//! then `x_2` descending, and so on. For `d = 2` with variables `(y, v)`
//! this is `1, y, v, y², yv, v², ...`.

use std::collections::BTreeMap;
use std::fmt;

use crate::block::{BlockColumn, BlockTriangularMatrix, Partition};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// `binomial(n, k)`, exact for the sizes used by the basis.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// `x_i` in `d` variables.
    pub fn unit(d: usize, i: usize) -> Self {
        let mut e = vec![0; d];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&k| k == 0) {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &k) in self.0.iter().enumerate() {
            if k == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if k > 1 {
                write!(f, "^{k}")?;
            }
        }
        Ok(())
    }
}

/// Sparse polynomial with real coefficients. Exact zeros are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial::monomial(MultiIndex::zero(dim), c)
    }

    pub fn monomial(k: MultiIndex, c: f64) -> Self {
        let mut p = Polynomial::zero(k.dim());
        p.add_term(k, c);
        p
    }

    /// The coordinate `x_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        Polynomial::monomial(MultiIndex::unit(dim, i), 1.0)
    }

    /// Builds from `(exponents, coefficient)` pairs, summing repeats.
    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Result<Self> {
        let mut p = Polynomial::zero(dim);
        for (e, c) in terms {
            if e.len() != dim {
                return Err(Error::InvalidParams(format!(
                    "monomial has {} exponents, polynomial has dimension {dim}",
                    e.len()
                )));
            }
            p.add_term(MultiIndex(e), c);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, &c)| (k, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, k: &MultiIndex) -> f64 {
        self.terms.get(k).copied().unwrap_or(0.0)
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(MultiIndex::degree).max()
    }

    pub fn add_term(&mut self, k: MultiIndex, c: f64) {
        debug_assert_eq!(k.dim(), self.dim);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(k);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + c;
                if sum == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn check_dim(&self, other: &Polynomial) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::InvalidParams(format!(
                "polynomials in {} and {} variables",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (k, c) in other.terms() {
            out.add_term(k.clone(), c);
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (k, c) in self.terms() {
            out.add_term(k.clone(), factor * c);
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dim(other)?;
        let mut out = Polynomial::zero(self.dim);
        for (ka, ca) in self.terms() {
            for (kb, cb) in other.terms() {
                out.add_term(ka.add(kb), ca * cb);
            }
        }
        Ok(out)
    }

    /// `∂p/∂x_i`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (k, c) in self.terms() {
            let e = k.0[i];
            if e == 0 {
                continue;
            }
            let mut lowered = k.clone();
            lowered.0[i] -= 1;
            out.add_term(lowered, c * e as f64);
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        self.terms()
            .map(|(k, c)| c * k.0.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>())
            .sum()
    }
}

/// Number of monomials of degree exactly `j` in `d` variables.
pub fn block_size(j: usize, d: usize) -> usize {
    binomial(j + d - 1, j)
}

/// `dim Pol_n(R^d)`.
pub fn basis_dim(n: usize, d: usize) -> usize {
    binomial(n + d, n)
}

// Position of `e` among monomials of the same degree in `e.len()` variables.
fn rank_within_degree(e: &[u32]) -> usize {
    let mut rank = 0;
    let mut rest: usize = e.iter().map(|&k| k as usize).sum();
    for (i, &k) in e.iter().enumerate() {
        let vars_left = e.len() - i - 1;
        if vars_left == 0 {
            break;
        }
        // monomials with a larger exponent here come first
        for a in (k as usize + 1)..=rest {
            rank += block_size(rest - a, vars_left);
        }
        rest -= k as usize;
    }
    rank
}

/// Position of `k` in the graded basis.
pub fn basis_index(k: &MultiIndex) -> usize {
    let j = k.degree();
    let below = if j == 0 { 0 } else { basis_dim(j - 1, k.dim()) };
    below + rank_within_degree(&k.0)
}

/// Inverse of [`basis_index`].
pub fn basis_multi_index(i: usize, d: usize) -> MultiIndex {
    assert!(d >= 1, "at least one variable");
    let mut j = 0;
    while basis_dim(j, d) <= i {
        j += 1;
    }
    let mut rank = i - if j == 0 { 0 } else { basis_dim(j - 1, d) };
    let mut e = vec![0u32; d];
    let mut rest = j;
    for pos in 0..d {
        let vars_left = d - pos - 1;
        if vars_left == 0 {
            e[pos] = rest as u32;
            break;
        }
        let mut a = rest;
        loop {
            let count = block_size(rest - a, vars_left);
            if rank < count {
                break;
            }
            rank -= count;
            a -= 1;
        }
        e[pos] = a as u32;
        rest -= a;
    }
    MultiIndex(e)
}

/// All monomials of degree `<= n` in basis order.
pub fn graded_basis(n: usize, d: usize) -> Vec<MultiIndex> {
    (0..basis_dim(n, d)).map(|i| basis_multi_index(i, d)).collect()
}

/// Block partition of the generator matrix up to degree `n`.
pub fn degree_partition(n: usize, d: usize) -> Partition {
    Partition::new((0..=n).map(|j| block_size(j, d)).collect()).expect("block sizes are positive")
}

/// Coefficients `A` (symmetric, entries of degree `<= 2`) and `b` (entries of
/// degree `<= 1`) of a polynomial diffusion generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialOperatorSpec {
    dim: usize,
    a: Vec<Vec<Polynomial>>,
    b: Vec<Polynomial>,
}

impl PolynomialOperatorSpec {
    pub fn new(a: Vec<Vec<Polynomial>>, b: Vec<Polynomial>) -> Result<Self> {
        let d = b.len();
        if d == 0 {
            return Err(Error::InvalidParams("generator needs at least one variable".into()));
        }
        if a.len() != d || a.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidParams(format!("A must be {d} x {d}")));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.dim() != d {
                return Err(Error::InvalidParams(format!("b[{i}] has dimension {}", bi.dim())));
            }
            if bi.degree().unwrap_or(0) > 1 {
                return Err(Error::InvalidParams(format!("b[{i}] has degree above 1")));
            }
        }
        for i in 0..d {
            for j in 0..d {
                let aij = &a[i][j];
                if aij.dim() != d {
                    return Err(Error::InvalidParams(format!("A[{i}][{j}] has dimension {}", aij.dim())));
                }
                if aij.degree().unwrap_or(0) > 2 {
                    return Err(Error::InvalidParams(format!("A[{i}][{j}] has degree above 2")));
                }
                if aij != &a[j][i] {
                    return Err(Error::InvalidParams(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(PolynomialOperatorSpec { dim: d, a, b })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, i: usize, j: usize) -> &Polynomial {
        &self.a[i][j]
    }

    pub fn b(&self, i: usize) -> &Polynomial {
        &self.b[i]
    }
}

/// `Gp = ½ Σ_ij A_ij ∂_i∂_j p + Σ_i b_i ∂_i p`, computed symbolically.
pub fn apply_generator(spec: &PolynomialOperatorSpec, p: &Polynomial) -> Result<Polynomial> {
    let d = spec.dim;
    if p.dim() != d {
        return Err(Error::InvalidParams(format!(
            "polynomial in {} variables, generator in {d}",
            p.dim()
        )));
    }
    let mut out = Polynomial::zero(d);
    for i in 0..d {
        let di = p.derivative(i);
        if di.is_zero() {
            continue;
        }
        out = out.add(&spec.b[i].mul(&di)?)?;
        for j in 0..d {
            let dij = di.derivative(j);
            if dij.is_zero() {
                continue;
            }
            out = out.add(&spec.a[i][j].mul(&dij)?.scaled(0.5))?;
        }
    }
    Ok(out)
}

fn generator_column(
    spec: &PolynomialOperatorSpec,
    k: &MultiIndex,
    rows: usize,
    out: &mut DenseMatrix,
    col: usize,
) -> Result<()> {
    let image = apply_generator(spec, &Polynomial::monomial(k.clone(), 1.0))?;
    let from = k.degree();
    for (t, c) in image.terms() {
        if t.degree() > from {
            return Err(Error::DegreeRaised {
                monomial: k.to_string(),
                from,
                to: t.degree(),
            });
        }
        let row = basis_index(t);
        debug_assert!(row < rows);
        out.set(row, col, c);
    }
    Ok(())
}

/// Matrix of `G` on polynomials of degree `<= n`. Column `j` holds the
/// coordinates of the image of basis monomial `j`.
pub fn build_generator_matrix(spec: &PolynomialOperatorSpec, n: usize) -> Result<BlockTriangularMatrix> {
    let d = spec.dim;
    let dim = basis_dim(n, d);
    let mut g = DenseMatrix::zeros(dim, dim);
    for (col, k) in graded_basis(n, d).iter().enumerate() {
        generator_column(spec, k, dim, &mut g, col)?;
    }
    BlockTriangularMatrix::new(g, degree_partition(n, d))
}

/// Block column of `G_n` for the degree-`n` monomials: the image of each
/// degree-`n` monomial split into its lower-degree part and its degree-`n`
/// part.
pub fn generator_block_column(spec: &PolynomialOperatorSpec, n: usize) -> Result<BlockColumn> {
    let d = spec.dim;
    let rows = basis_dim(n, d);
    let above = rows - block_size(n, d);
    let width = block_size(n, d);
    let mut col = DenseMatrix::zeros(rows, width);
    for c in 0..width {
        generator_column(spec, &basis_multi_index(above + c, d), rows, &mut col, c)?;
    }
    BlockColumn::from_stacked(&col)
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("constraint violated: {what}")))
    }
}

/// Parses `key=value,key=value`. Only the model keys are accepted.
pub fn parse_param_list(text: &str) -> Result<BTreeMap<String, f64>> {
    const KEYS: [&str; 8] = ["kappa", "theta", "sigma", "r", "rho", "vmin", "vmax", "tau"];
    let mut out = BTreeMap::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidParams(format!("expected key=value, got `{item}`")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::InvalidParams(format!("unknown parameter `{k}`")));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParams(format!("bad value for {k}: `{v}`")))?;
        if out.insert(k.to_string(), v).is_some() {
            return Err(Error::InvalidParams(format!("parameter `{k}` given twice")));
        }
    }
    Ok(out)
}

fn required(map: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    map.get(key)
        .copied()
        .ok_or_else(|| Error::InvalidParams(format!("missing parameter `{key}`")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobiParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub r: f64,
    pub rho: f64,
    pub vmin: f64,
    pub vmax: f64,
}

impl JacobiParams {
    pub fn validate(&self) -> Result<()> {
        let p = self;
        check(
            [p.kappa, p.theta, p.sigma, p.r, p.rho, p.vmin, p.vmax]
                .iter()
                .all(|x| x.is_finite()),
            "all parameters finite",
        )?;
        check(p.kappa >= 0.0, "kappa >= 0")?;
        check(p.sigma > 0.0, "sigma > 0")?;
        check(p.r >= 0.0, "r >= 0")?;
        check((-1.0..=1.0).contains(&p.rho), "rho in [-1, 1]")?;
        check(p.vmin >= 0.0 && p.vmin < p.vmax, "0 <= vmin < vmax")?;
        check(p.theta >= p.vmin && p.theta <= p.vmax, "theta in [vmin, vmax]")?;
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let p = JacobiParams {
            kappa: required(map, "kappa")?,
            theta: required(map, "theta")?,
            sigma: required(map, "sigma")?,
            r: required(map, "r")?,
            rho: required(map, "rho")?,
            vmin: required(map, "vmin")?,
            vmax: required(map, "vmax")?,
        };
        p.validate()?;
        Ok(p)
    }

    /// `(√vmax − √vmin)²`.
    pub fn s_factor(&self) -> f64 {
        let w = self.vmax.sqrt() - self.vmin.sqrt();
        w * w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub r: f64,
    pub rho: f64,
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        let p = self;
        check(
            [p.kappa, p.theta, p.sigma, p.r, p.rho].iter().all(|x| x.is_finite()),
            "all parameters finite",
        )?;
        check(p.kappa >= 0.0, "kappa >= 0")?;
        check(p.theta >= 0.0, "theta >= 0")?;
        check(p.sigma > 0.0, "sigma > 0")?;
        check(p.r >= 0.0, "r >= 0")?;
        check((-1.0..=1.0).contains(&p.rho), "rho in [-1, 1]")?;
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let p = HestonParams {
            kappa: required(map, "kappa")?,
            theta: required(map, "theta")?,
            sigma: required(map, "sigma")?,
            r: required(map, "r")?,
            rho: required(map, "rho")?,
        };
        p.validate()?;
        Ok(p)
    }
}

// Drift shared by both models in (y, v): (r − v/2, κθ − κv).
fn log_price_drift(r: f64, kappa: f64, theta: f64) -> Result<Vec<Polynomial>> {
    Ok(vec![
        Polynomial::from_terms(2, [(vec![0, 0], r), (vec![0, 1], -0.5)])?,
        Polynomial::from_terms(2, [(vec![0, 0], kappa * theta), (vec![0, 1], -kappa)])?,
    ])
}

/// Jacobi stochastic volatility model in `(y, v)`.
pub fn jacobi_spec(p: &JacobiParams) -> Result<PolynomialOperatorSpec> {
    p.validate()?;
    let s = p.s_factor();
    // Q(v) = (v − vmin)(vmax − v) / S
    let q = Polynomial::from_terms(
        2,
        [
            (vec![0, 0], -(p.vmax * p.vmin) / s),
            (vec![0, 1], (p.vmax + p.vmin) / s),
            (vec![0, 2], -1.0 / s),
        ],
    )?;
    let a11 = Polynomial::variable(2, 1);
    let a12 = q.scaled(p.rho * p.sigma);
    let a22 = q.scaled(p.sigma * p.sigma);
    PolynomialOperatorSpec::new(
        vec![vec![a11, a12.clone()], vec![a12, a22]],
        log_price_drift(p.r, p.kappa, p.theta)?,
    )
}

/// Heston model in `(y, v)`.
pub fn heston_spec(p: &HestonParams) -> Result<PolynomialOperatorSpec> {
    p.validate()?;
    let v = Polynomial::variable(2, 1);
    let a12 = v.scaled(p.rho * p.sigma);
    let a22 = v.scaled(p.sigma * p.sigma);
    PolynomialOperatorSpec::new(
        vec![vec![v, a12.clone()], vec![a12, a22]],
        log_price_drift(p.r, p.kappa, p.theta)?,
    )
}

/// Closed-form upper bound on `||G_n||_1` for the Jacobi model.
pub fn jacobi_norm_bound(p: &JacobiParams, n: usize) -> f64 {
    let n = n as f64;
    let alpha = p.sigma * (1.0 + p.vmin * p.vmax + p.vmax + p.vmin) / (2.0 * p.s_factor());
    n * (p.r + p.kappa + p.kappa * p.theta - p.sigma * alpha)
        + 0.5 * n * n * (1.0 + p.rho.abs() * alpha + 2.0 * p.sigma * alpha)
}

/// Closed-form upper bound on `||G_n||_1` for the Heston model.
pub fn heston_norm_bound(p: &HestonParams, n: usize) -> f64 {
    let n = n as f64;
    let s2 = p.sigma * p.sigma;
    n * (p.r + p.kappa + p.kappa * p.theta - s2 / 2.0) + 0.5 * n * n * (1.0 + p.rho.abs() * p.sigma / 2.0 + s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::one_norm;
    use proptest::prelude::*;

    pub(crate) fn paper_jacobi() -> JacobiParams {
        JacobiParams {
            kappa: 0.5,
            theta: 0.04,
            sigma: 0.15,
            r: 0.0,
            rho: -0.5,
            vmin: 0.01,
            vmax: 1.0,
        }
    }

    fn mi(e: &[u32]) -> MultiIndex {
        MultiIndex::new(e.to_vec())
    }

    #[test]
    fn basis_order_two_variables() {
        let want = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
        for (i, e) in want.iter().enumerate() {
            assert_eq!(basis_index(&mi(e)), i);
            assert_eq!(basis_multi_index(i, 2), mi(e));
        }
        assert_eq!(basis_index(&mi(&[0, 3])), 9);
        assert_eq!(basis_index(&mi(&[3, 0])), 6);
    }

    #[test]
    fn basis_round_trip_and_counts() {
        for d in 1..=3 {
            for n in 0..=6 {
                let basis = graded_basis(n, d);
                assert_eq!(basis.len(), basis_dim(n, d));
                for (i, k) in basis.iter().enumerate() {
                    assert_eq!(basis_index(k), i);
                    assert_eq!(basis_multi_index(basis_index(k), d), *k);
                }
                // graded, and inside a degree the exponents are in descending lex order
                for w in basis.windows(2) {
                    let (a, b) = (&w[0], &w[1]);
                    assert!(a.degree() < b.degree() || (a.degree() == b.degree() && a.exponents() > b.exponents()));
                }
                let count = basis.iter().filter(|k| k.degree() == n).count();
                assert_eq!(count, block_size(n, d));
            }
        }
        assert_eq!(basis_dim(100, 2), 5151);
        assert_eq!(binomial(26, 13), 10_400_600);
    }

    #[test]
    fn polynomial_arithmetic_prunes_zeros() {
        let y = Polynomial::variable(2, 0);
        let v = Polynomial::variable(2, 1);
        let s = y.add(&v).unwrap();
        let d = s.add(&y.scaled(-1.0)).unwrap();
        assert_eq!(d, v);
        assert!(y.add(&y.scaled(-1.0)).unwrap().is_zero());
        let sq = s.mul(&s).unwrap();
        assert_eq!(sq.coefficient(&mi(&[1, 1])), 2.0);
        assert_eq!(sq.degree(), Some(2));
        assert_eq!(sq.derivative(0).coefficient(&mi(&[1, 0])), 2.0);
        assert_eq!(sq.evaluate(&[1.0, 2.0]), 9.0);
        assert!(Polynomial::zero(2).degree().is_none());
        assert!(y.mul(&Polynomial::variable(3, 0)).is_err());
    }

    #[test]
    fn spec_validation() {
        let z = Polynomial::zero(2);
        let y = Polynomial::variable(2, 0);
        let asym = vec![vec![z.clone(), y.clone()], vec![z.clone(), z.clone()]];
        assert!(PolynomialOperatorSpec::new(asym, vec![z.clone(), z.clone()]).is_err());
        let cubic = y.mul(&y).unwrap().mul(&y).unwrap();
        let a = vec![vec![cubic, z.clone()], vec![z.clone(), z.clone()]];
        assert!(PolynomialOperatorSpec::new(a, vec![z.clone(), z.clone()]).is_err());
        let quad_drift = y.mul(&y).unwrap();
        let a = vec![vec![z.clone(), z.clone()], vec![z.clone(), z.clone()]];
        assert!(PolynomialOperatorSpec::new(a, vec![quad_drift, z]).is_err());
    }

    #[test]
    fn generator_on_simple_polynomials() {
        let spec = jacobi_spec(&paper_jacobi()).unwrap();
        assert!(apply_generator(&spec, &Polynomial::constant(2, 1.0)).unwrap().is_zero());
        let gy = apply_generator(&spec, &Polynomial::variable(2, 0)).unwrap();
        assert_eq!(gy, spec.b(0).clone());
        assert!(apply_generator(&spec, &Polynomial::variable(3, 0)).is_err());
    }

    // Seven-term expansion of G y^p v^q for the Jacobi model, written out
    // term by term.
    fn jacobi_monomial_image(prm: &JacobiParams, p: u32, q: u32) -> BTreeMap<(i64, i64), f64> {
        let (pf, qf) = (p as f64, q as f64);
        let s = prm.s_factor();
        let (rho, sig) = (prm.rho, prm.sigma);
        let (vmax, vmin) = (prm.vmax, prm.vmin);
        let (p, q) = (p as i64, q as i64);
        let raw = [
            ((p - 2, q + 1), pf * (pf - 1.0) / 2.0),
            ((p - 1, q + 1), -pf * (0.5 + qf * rho * sig / s)),
            ((p - 1, q), pf * (prm.r + qf * rho * sig * (vmax + vmin) / s)),
            ((p - 1, q - 1), -pf * qf * rho * sig * vmax * vmin / s),
            ((p, q), -qf * (prm.kappa + (qf - 1.0) / 2.0 * sig * sig / s)),
            ((p, q - 2), -qf * (qf - 1.0) / 2.0 * sig * sig * vmax * vmin / s),
            (
                (p, q - 1),
                qf * (prm.kappa * prm.theta + (qf - 1.0) / 2.0 * sig * sig * (vmax + vmin) / s),
            ),
        ];
        let mut out = BTreeMap::new();
        for (k, c) in raw {
            if k.0 >= 0 && k.1 >= 0 && c != 0.0 {
                *out.entry(k).or_insert(0.0) += c;
            }
        }
        out
    }

    #[test]
    fn jacobi_matches_seven_term_expansion() {
        let prm = paper_jacobi();
        let spec = jacobi_spec(&prm).unwrap();
        for p in 0..6u32 {
            for q in 0..6u32 {
                let got = apply_generator(&spec, &Polynomial::monomial(mi(&[p, q]), 1.0)).unwrap();
                let want = jacobi_monomial_image(&prm, p, q);
                for (k, c) in got.terms() {
                    let key = (k.exponents()[0] as i64, k.exponents()[1] as i64);
                    let w = want.get(&key).copied().unwrap_or(0.0);
                    assert!((c - w).abs() <= 1e-14 * w.abs().max(1.0), "p={p} q={q} {k}: {c} vs {w}");
                }
                for (key, w) in want {
                    let k = mi(&[key.0 as u32, key.1 as u32]);
                    assert!((got.coefficient(&k) - w).abs() <= 1e-14 * w.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn jacobi_coefficient_maps() {
        let prm = paper_jacobi();
        let spec = jacobi_spec(&prm).unwrap();
        assert_eq!(spec.a(0, 0), &Polynomial::variable(2, 1));
        let s = prm.s_factor();
        let s2 = prm.sigma * prm.sigma;
        let a22 = spec.a(1, 1);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs();
        assert!(close(a22.coefficient(&mi(&[0, 1])), s2 / s * (prm.vmax + prm.vmin)));
        assert!(close(a22.coefficient(&mi(&[0, 2])), -s2 / s));
        assert!(close(a22.coefficient(&mi(&[0, 0])), -s2 / s * prm.vmax * prm.vmin));
        let uncorrelated = jacobi_spec(&JacobiParams { rho: 0.0, ..prm }).unwrap();
        assert!(uncorrelated.a(0, 1).is_zero() && uncorrelated.a(1, 0).is_zero());
    }

    #[test]
    fn heston_coefficient_maps() {
        let base = HestonParams {
            kappa: 1.2,
            theta: 0.05,
            sigma: 1.0,
            r: 0.01,
            rho: 1.0,
        };
        let spec = heston_spec(&base).unwrap();
        let v = Polynomial::variable(2, 1);
        assert_eq!(spec.a(0, 0), &v);
        assert_eq!(spec.a(1, 1), &v);
        assert_eq!(spec.a(0, 1), &v);
        let jac = jacobi_spec(&JacobiParams {
            kappa: 1.2,
            theta: 0.05,
            sigma: 0.3,
            r: 0.01,
            rho: 0.0,
            vmin: 0.0,
            vmax: 1.0,
        })
        .unwrap();
        assert_eq!(jac.b(0), spec.b(0));
        assert_eq!(jac.b(1), spec.b(1));
    }

    #[test]
    fn params_validation_and_parsing() {
        let good = paper_jacobi();
        assert!(good.validate().is_ok());
        assert!(JacobiParams { theta: 2.0, ..good }.validate().is_err());
        assert!(JacobiParams { sigma: 0.0, ..good }.validate().is_err());
        assert!(JacobiParams { vmin: 1.0, ..good }.validate().is_err());
        let err = jacobi_spec(&JacobiParams { rho: 1.5, ..good }).unwrap_err().to_string();
        assert!(err.contains("rho"), "{err}");

        let map = parse_param_list("kappa=0.5,theta=0.04,sigma=0.15,r=0,rho=-0.5,vmin=0.01,vmax=1,tau=0.25").unwrap();
        assert_eq!(JacobiParams::from_map(&map).unwrap(), good);
        assert!(HestonParams::from_map(&map).is_ok());
        assert!(parse_param_list("kappa=1,foo=2").is_err());
        assert!(parse_param_list("kappa=1,kappa=2").is_err());
        assert!(parse_param_list("kappa").is_err());
        assert!(JacobiParams::from_map(&parse_param_list("kappa=1").unwrap()).is_err());
    }

    #[test]
    fn degree_zero_matrix_and_nesting() {
        let spec = jacobi_spec(&paper_jacobi()).unwrap();
        let g0 = build_generator_matrix(&spec, 0).unwrap();
        assert_eq!(g0.data(), &DenseMatrix::zeros(1, 1));
        let g5 = build_generator_matrix(&spec, 5).unwrap();
        let g4 = build_generator_matrix(&spec, 4).unwrap();
        assert_eq!(g5.leading(4).unwrap(), g4);
        assert_eq!(g5.partition().sizes(), &[1, 2, 3, 4, 5, 6]);
        for n in 0..=5 {
            assert_eq!(g5.block_column(n).unwrap(), generator_block_column(&spec, n).unwrap());
        }
    }

    #[test]
    fn columns_recomputed_independently() {
        let spec = jacobi_spec(&paper_jacobi()).unwrap();
        let n = 4;
        let g = build_generator_matrix(&spec, n).unwrap();
        let basis = graded_basis(n, 2);
        for (j, k) in basis.iter().enumerate() {
            // image evaluated at a few points must match the column contracted with the basis
            let image = apply_generator(&spec, &Polynomial::monomial(k.clone(), 1.0)).unwrap();
            for x in [[0.3, 0.2], [-1.1, 0.7], [2.0, 0.05]] {
                let from_col: f64 = basis
                    .iter()
                    .enumerate()
                    .map(|(i, b)| g.data().get(i, j) * Polynomial::monomial(b.clone(), 1.0).evaluate(&x))
                    .sum();
                assert!((from_col - image.evaluate(&x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degree_raising_spec_is_rejected() {
        // A drift of degree 1 in a different variable never raises degree, so
        // build one with a bypassed constructor.
        let y = Polynomial::variable(1, 0);
        let bad = PolynomialOperatorSpec {
            dim: 1,
            a: vec![vec![Polynomial::zero(1)]],
            b: vec![y.mul(&y).unwrap()],
        };
        let err = build_generator_matrix(&bad, 2).unwrap_err();
        assert!(matches!(err, Error::DegreeRaised { from: 1, to: 2, .. }), "{err}");
    }

    #[test]
    fn bounds_at_zero_and_limit() {
        assert_eq!(jacobi_norm_bound(&paper_jacobi(), 0), 0.0);
        let h = HestonParams {
            kappa: 0.3,
            theta: 0.1,
            sigma: 1e-9,
            r: 0.02,
            rho: 0.0,
        };
        assert_eq!(heston_norm_bound(&h, 0), 0.0);
        let n = 7.0;
        let limit = n * (h.r + h.kappa + h.kappa * h.theta) + n * n / 2.0;
        assert!((heston_norm_bound(&h, 7) - limit).abs() <= 1e-12);
    }

    #[test]
    fn jacobi_bound_dominates_paper_params() {
        let prm = paper_jacobi();
        let spec = jacobi_spec(&prm).unwrap();
        let g = build_generator_matrix(&spec, 60).unwrap();
        for n in 0..=60 {
            let norm = one_norm(g.leading(n).unwrap().data());
            assert!(norm <= jacobi_norm_bound(&prm, n) * (1.0 + 1e-14), "n={n}");
        }
    }

    #[test]
    fn norm_grows_quadratically() {
        let spec = jacobi_spec(&paper_jacobi()).unwrap();
        let g = build_generator_matrix(&spec, 60).unwrap();
        let ratio = |n: usize| one_norm(g.leading(n).unwrap().data()) / (n * n) as f64;
        let (lo, hi) = (ratio(50), ratio(60));
        assert!((lo - hi).abs() <= 0.2 * hi, "{lo} vs {hi}");
        assert!((ratio(40) - hi).abs() <= 0.2 * hi);
    }

    fn jacobi_strategy() -> impl Strategy<Value = JacobiParams> {
        (
            0.0..3.0f64,
            0.01..1.5f64,
            0.0..0.1f64,
            -1.0..=1.0f64,
            0.0..0.5f64,
            0.1..2.0f64,
            0.0..=1.0f64,
        )
            .prop_map(|(kappa, sigma, r, rho, vmin, width, t)| {
                let vmax = vmin + width;
                JacobiParams {
                    kappa,
                    theta: vmin + t * width,
                    sigma,
                    r,
                    rho,
                    vmin,
                    vmax,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generator_never_raises_degree(prm in jacobi_strategy(), p in 0u32..8, q in 0u32..8, heston in any::<bool>()) {
            let spec = if heston {
                heston_spec(&HestonParams { kappa: prm.kappa, theta: prm.theta, sigma: prm.sigma, r: prm.r, rho: prm.rho }).unwrap()
            } else {
                jacobi_spec(&prm).unwrap()
            };
            let image = apply_generator(&spec, &Polynomial::monomial(mi(&[p, q]), 1.0)).unwrap();
            prop_assert!(image.degree().unwrap_or(0) <= (p + q) as usize);
        }

        #[test]
        fn generator_is_linear(prm in jacobi_strategy(), a in -2.0..2.0f64, p in 0u32..5, q in 0u32..5) {
            let spec = jacobi_spec(&prm).unwrap();
            let f = Polynomial::from_terms(2, [(vec![p, q], a), (vec![q, p], 1.0)]).unwrap();
            let whole = apply_generator(&spec, &f).unwrap();
            let parts = apply_generator(&spec, &Polynomial::monomial(mi(&[p, q]), a)).unwrap()
                .add(&apply_generator(&spec, &Polynomial::monomial(mi(&[q, p]), 1.0)).unwrap()).unwrap();
            for x in [[0.4, 0.3], [-1.2, 0.9]] {
                prop_assert!((whole.evaluate(&x) - parts.evaluate(&x)).abs() <= 1e-9);
            }
        }
    }
}
