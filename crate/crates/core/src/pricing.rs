//! European call pricing in the Jacobi stochastic volatility model by a
//! Hermite series.
//!
//! The price is `Σ_n f_n l_n` where `f_n` are the Fourier coefficients of the
//! discounted payoff in the orthonormal Hermite system of the Gaussian
//! weight `N(μ_w, σ_w²)` and `l_n` are the matching Hermite moments of the
//! log price at maturity. Each `l_n` is a polynomial moment,
//! `H_n(Y_0, V_0)ᵀ exp(τ G_n) h_n`, so raising `n` by one appends one block
//! column to `τ G_n` and the exponential is updated incrementally.

use std::io::Write;

use web_time::Instant;

use crate::block::{BlockColumn, BlockTriangularMatrix};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::generators::{basis_dim, generator_block_column, graded_basis, jacobi_spec, JacobiParams, Polynomial};
use crate::incremental::{IncrementalExp, Scaling};
use crate::pade::{expm, PadeCoefficients};
use crate::quadrature::{composite, gauss_legendre};

/// Denominator floor in the stop rule, for prices near zero.
pub const PRICE_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PricingConfig {
    pub params: JacobiParams,
    pub y0: f64,
    pub v0: f64,
    pub tau: f64,
    pub log_strike: f64,
    pub mu_w: f64,
    pub sigma_w: f64,
    pub eps: f64,
    pub n_max: usize,
}

impl PricingConfig {
    /// Three-month call 10% out of the money with a moderately
    /// mean-reverting variance, stopping at relative term size `1e-3`.
    pub fn example() -> Self {
        PricingConfig {
            params: JacobiParams {
                kappa: 0.5,
                theta: 0.04,
                sigma: 0.15,
                r: 0.0,
                rho: -0.5,
                vmin: 0.01,
                vmax: 1.0,
            },
            y0: 0.0,
            v0: 0.04,
            tau: 0.25,
            log_strike: 1.1f64.ln(),
            mu_w: 0.0,
            sigma_w: 0.5,
            eps: 1e-3,
            n_max: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let bad = |what: &str| Err(Error::InvalidParams(format!("constraint violated: {what}")));
        if !(self.sigma_w > 0.0) {
            return bad("sigma_w > 0");
        }
        if !(self.tau > 0.0) {
            return bad("tau > 0");
        }
        if !(self.eps > 0.0) {
            return bad("eps > 0");
        }
        if !(self.v0 >= self.params.vmin && self.v0 <= self.params.vmax) {
            return bad("v0 in [vmin, vmax]");
        }
        if self.n_max == 0 {
            return bad("n_max >= 1");
        }
        if !(self.y0.is_finite() && self.log_strike.is_finite() && self.mu_w.is_finite()) {
            return bad("y0, log strike and mu_w finite");
        }
        Ok(())
    }
}

/// Where the exponentials `exp(τ G_n)` come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExpSource {
    Incremental(Scaling),
    /// A from-scratch exponential at every degree.
    Baseline,
}

impl std::str::FromStr for ExpSource {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        if text == "baseline" {
            Ok(ExpSource::Baseline)
        } else {
            text.parse().map(ExpSource::Incremental)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub n: usize,
    pub l_n: f64,
    pub f_n: f64,
    pub term: f64,
    pub partial_price: f64,
    pub cum_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceResult {
    pub price: f64,
    /// Last degree included in the price.
    pub n: usize,
    pub ledger: Vec<LedgerRow>,
    /// `false` when `n_max` was reached before the stop rule held.
    pub converged: bool,
    pub restarts: usize,
}

impl PriceResult {
    pub fn write_ledger_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "l_n", "f_n", "term", "partial_price", "cum_seconds"])?;
        for row in &self.ledger {
            w.write_record([
                row.n.to_string(),
                format!("{:e}", row.l_n),
                format!("{:e}", row.f_n),
                format!("{:e}", row.term),
                format!("{:e}", row.partial_price),
                format!("{:e}", row.cum_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coefficients of `ĥ_n(x) = h_n(x)/√n!` in powers of `x`, from the
/// normalized three-term recurrence.
pub fn normalized_hermite_coefficients(n: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..n {
        let sj = (j as f64).sqrt();
        let inv = 1.0 / ((j + 1) as f64).sqrt();
        let mut next = vec![0.0; j + 2];
        for (k, &c) in cur.iter().enumerate() {
            next[k + 1] += c;
        }
        for (k, &c) in prev.iter().enumerate() {
            next[k] -= sj * c;
        }
        next.iter_mut().for_each(|c| *c *= inv);
        prev = cur;
        cur = next;
    }
    cur
}

/// `ĥ_0(x), ..., ĥ_n(x)`.
pub fn normalized_hermite_values(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for j in 1..n {
        let next = (x * out[j] - (j as f64).sqrt() * out[j - 1]) / ((j + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Coordinates of `ĥ_n((y − μ_w)/σ_w)` in the graded basis of polynomials
/// of degree `<= n` in `(y, v)`.
pub fn hermite_vector(n: usize, mu_w: f64, sigma_w: f64) -> Vec<f64> {
    let c = normalized_hermite_coefficients(n);
    // Horner in y with x = (y − μ)/σ
    let mut poly = vec![0.0; n + 1];
    let (a, b) = (1.0 / sigma_w, -mu_w / sigma_w);
    let mut deg = 0;
    for k in (0..=n).rev() {
        // poly <- poly * (a y + b) + c_k
        let mut next = vec![0.0; n + 1];
        for i in 0..=deg {
            next[i] += b * poly[i];
            if i < n {
                next[i + 1] += a * poly[i];
            }
        }
        next[0] += c[k];
        poly = next;
        if k < n {
            deg += 1;
        }
    }
    let mut out = vec![0.0; basis_dim(n, 2)];
    for (i, &coef) in poly.iter().enumerate() {
        // y^i sits first in its degree
        out[i * (i + 1) / 2] = coef;
    }
    out
}

/// `H_n(x)`: every basis monomial of degree `<= n` evaluated at `x`.
pub fn monomial_vector(n: usize, x: &[f64]) -> Vec<f64> {
    graded_basis(n, x.len())
        .into_iter()
        .map(|k| Polynomial::monomial(k, 1.0).evaluate(x))
        .collect()
}

/// `E[p(X_τ) | X_0 = x0] = H_n(x0)ᵀ exp(τG_n) p` for a given `exp(τG_n)`.
pub fn conditional_moment(exp_tau_g: &DenseMatrix, x0: &[f64], p: &[f64]) -> Result<f64> {
    let dim = exp_tau_g.rows();
    if !exp_tau_g.is_square() || p.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "conditional_moment",
            left: exp_tau_g.shape(),
            right: (p.len(), 1),
        });
    }
    if x0.is_empty() {
        return Err(Error::InvalidParams("empty state point".into()));
    }
    let d = x0.len();
    let mut n = 0;
    while basis_dim(n, d) < dim {
        n += 1;
    }
    if basis_dim(n, d) != dim {
        return Err(Error::InvalidParams(format!(
            "dimension {dim} is not a full polynomial basis in {d} variables"
        )));
    }
    let h = monomial_vector(n, x0);
    // w = E p over the nonzero coordinates of p only
    let mut w = vec![0.0; dim];
    for (j, &pj) in p.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        for (i, wi) in w.iter_mut().enumerate() {
            *wi += exp_tau_g.get(i, j) * pj;
        }
    }
    Ok(h.iter().zip(&w).map(|(a, b)| a * b).sum())
}

/// Same moment with `exp(τG)` computed from scratch.
pub fn conditional_moment_of_generator(g: &BlockTriangularMatrix, x0: &[f64], tau: f64, p: &[f64]) -> Result<f64> {
    let e = expm(&g.data().scaled(tau))?;
    conditional_moment(&e, x0, p)
}

/// `l_n` from `exp(τG_n)`.
pub fn hermite_moment(exp_tau_g: &DenseMatrix, config: &PricingConfig, n: usize) -> Result<f64> {
    let h = hermite_vector(n, config.mu_w, config.sigma_w);
    conditional_moment(exp_tau_g, &[config.y0, config.v0], &h)
}

const PANEL_NODES: usize = 64;
const MIN_NODES: usize = 64;
const MAX_NODES: usize = 512;
const QUAD_TOL: f64 = 1e-12;

/// `f_n = e^{-rτ} ∫ (e^y − e^k)⁺ ĥ_n((y − μ_w)/σ_w) w(y) dy` with `w` the
/// `N(μ_w, σ_w²)` density.
///
/// In `x = (y − μ_w)/σ_w` the integrand is supported on `x >= x_k` and is
/// smooth there, so a composite Gauss–Legendre rule on `[x_k, U]` converges
/// fast. `U` lies past the region where `ĥ_n` oscillates and the Gaussian
/// factor has made the integrand negligible. The node count doubles from
/// 64 until two successive values agree to `1e-12`.
pub fn fourier_coefficient(n: usize, config: &PricingConfig) -> Result<f64> {
    let (mu, sig) = (config.mu_w, config.sigma_w);
    let k = config.log_strike;
    let disc = (-config.params.r * config.tau).exp();
    let spread = 2.0 * ((n + 1) as f64).sqrt() + 10.0;
    let xk = (k - mu) / sig;
    let lo = xk.max(-spread);
    let hi = lo.max(0.0) + 2.0 * sig + spread;
    let ek = k.exp();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let integrand = |x: f64| {
        let payoff = ((mu + sig * x).exp() - ek).max(0.0);
        if payoff == 0.0 {
            return 0.0;
        }
        let h = *normalized_hermite_values(n, x).last().expect("n+1 values");
        payoff * h * norm * (-0.5 * x * x).exp()
    };
    let rule = gauss_legendre(PANEL_NODES);
    let mut nodes = MIN_NODES;
    let mut prev = composite(&rule, lo, hi, nodes / PANEL_NODES, integrand);
    let mut change = f64::INFINITY;
    while nodes < MAX_NODES {
        nodes *= 2;
        let next = composite(&rule, lo, hi, nodes / PANEL_NODES, integrand);
        change = (next - prev).abs();
        prev = next;
        if change <= QUAD_TOL * prev.abs().max(1.0) {
            return Ok(disc * prev);
        }
    }
    Err(Error::Quadrature {
        n,
        nodes,
        residual: change,
    })
}

enum Exponentials {
    Incremental(Box<IncrementalExp>),
    Baseline { g: BlockTriangularMatrix, e: DenseMatrix },
}

impl Exponentials {
    fn start(source: ExpSource) -> Result<Self> {
        let g0 = DenseMatrix::zeros(1, 1);
        match source {
            ExpSource::Incremental(scaling) => {
                let (engine, _) = IncrementalExp::start(&g0, scaling, &PadeCoefficients::default())?;
                Ok(Exponentials::Incremental(Box::new(engine)))
            }
            ExpSource::Baseline => {
                let g = BlockTriangularMatrix::from_columns([&BlockColumn::first(g0.clone())?])?;
                let e = expm(&g0)?;
                Ok(Exponentials::Baseline { g, e })
            }
        }
    }

    fn push(&mut self, c: &BlockColumn) -> Result<()> {
        match self {
            Exponentials::Incremental(engine) => engine.push(c).map(|_| ()),
            Exponentials::Baseline { g, e } => {
                *g = g.append_block_column(c)?;
                *e = expm(g.data())?;
                Ok(())
            }
        }
    }

    fn current(&self) -> &DenseMatrix {
        match self {
            Exponentials::Incremental(engine) => engine.exponential_data(),
            Exponentials::Baseline { e, .. } => e,
        }
    }

    fn restarts(&self) -> usize {
        match self {
            Exponentials::Incremental(engine) => engine.restarts(),
            Exponentials::Baseline { .. } => 0,
        }
    }
}

fn price_series(config: &PricingConfig, source: ExpSource, apply_stop_rule: bool) -> Result<PriceResult> {
    config.validate()?;
    let t = Instant::now();
    let spec = jacobi_spec(&config.params)?;
    let mut exps = Exponentials::start(source)?;
    let mut ledger = Vec::new();
    let mut price = 0.0;
    let mut converged = false;
    for n in 0..=config.n_max {
        if n > 0 {
            let column = generator_block_column(&spec, n)?.scaled(config.tau);
            exps.push(&column)?;
        }
        let l_n = hermite_moment(exps.current(), config, n)?;
        let f_n = fourier_coefficient(n, config)?;
        let term = l_n * f_n;
        price += term;
        ledger.push(LedgerRow {
            n,
            l_n,
            f_n,
            term,
            partial_price: price,
            cum_seconds: t.elapsed().as_secs_f64(),
        });
        if apply_stop_rule && term.abs() <= config.eps * price.abs().max(PRICE_FLOOR) {
            converged = true;
            break;
        }
    }
    Ok(PriceResult {
        price,
        n: ledger.len() - 1,
        ledger,
        converged,
        restarts: exps.restarts(),
    })
}

/// Sums terms until `|l_n f_n| <= ε |Price|` or `n_max` is reached.
pub fn price_call(config: &PricingConfig, source: ExpSource) -> Result<PriceResult> {
    price_series(config, source, true)
}

/// All terms up to `n_max`, ignoring the stop rule.
pub fn reference_price(config: &PricingConfig, source: ExpSource) -> Result<PriceResult> {
    let mut r = price_series(config, source, false)?;
    r.converged = true;
    Ok(r)
}
