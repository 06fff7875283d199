//! Random nested block triangular instances and the timing/error harness
//! comparing the incremental exponential with from-scratch recomputation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use web_time::Instant;

use crate::block::{BlockTriangularMatrix, Partition};
use crate::dense::{one_norm, rel_error_frobenius, DenseMatrix};
use crate::error::{Error, Result};
use crate::incremental::{IncrementalExp, Scaling};
use crate::pade::{expm, PadeCoefficients, THETA_13};

/// `2^-53`. Relative errors below it are reported as this value.
pub const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

const MAX_RESCALES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct RandomInstanceSpec {
    pub seed: u64,
    pub block_sizes: Vec<usize>,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Target for the 1-norm condition number of the unit-norm eigenvector
    /// basis.
    pub cond_target: f64,
}

impl RandomInstanceSpec {
    /// Block sizes drawn uniformly from `bmin..=bmax` with the same seed.
    pub fn with_random_sizes(
        seed: u64,
        blocks: usize,
        bmin: usize,
        bmax: usize,
        lambda: (f64, f64),
        cond_target: f64,
    ) -> Result<Self> {
        if blocks == 0 || bmin == 0 || bmin > bmax {
            return Err(Error::InvalidParams(format!(
                "need blocks >= 1 and 1 <= bmin <= bmax, got {blocks}, {bmin}, {bmax}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let block_sizes = (0..blocks).map(|_| rng.gen_range(bmin..=bmax)).collect();
        Ok(RandomInstanceSpec {
            seed,
            block_sizes,
            lambda_lo: lambda.0,
            lambda_hi: lambda.1,
            cond_target,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return bad("block sizes must be positive and non-empty");
        }
        if !(self.lambda_lo.is_finite() && self.lambda_hi.is_finite() && self.lambda_lo <= self.lambda_hi) {
            return bad("spectrum interval must satisfy lo <= hi");
        }
        if !(self.cond_target >= 1.0) {
            return bad("condition target must be >= 1");
        }
        Ok(())
    }
}

/// Unit 2-norm eigenvectors of an upper triangular matrix, by back
/// substitution per eigenvalue. `None` if two eigenvalues coincide where a
/// division by zero would occur.
fn triangular_eigenvectors(t: &DenseMatrix) -> Option<DenseMatrix> {
    let n = t.rows();
    let mut x = DenseMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        let lambda = t.get(j, j);
        col[..=j].iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        for i in (0..j).rev() {
            let row = t.row(i);
            let mut s = 0.0;
            for k in i + 1..=j {
                s += row[k] * col[k];
            }
            let gap = row[i] - lambda;
            if gap == 0.0 {
                if s == 0.0 {
                    col[i] = 0.0;
                    continue;
                }
                return None;
            }
            col[i] = -s / gap;
        }
        let norm = col[..=j].iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return None;
        }
        for i in 0..=j {
            x.set(i, j, col[i] / norm);
        }
    }
    Some(x)
}

// Solves `x y = b` (or `xᵀ y = b`) for upper triangular `x`.
fn triangular_solve(x: &DenseMatrix, b: &[f64], transpose: bool) -> Vec<f64> {
    let n = x.rows();
    let mut y = b.to_vec();
    if transpose {
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= x.get(k, i) * y[k];
            }
            y[i] = s / x.get(i, i);
        }
    } else {
        for i in (0..n).rev() {
            let row = x.row(i);
            let mut s = y[i];
            for k in i + 1..n {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
    }
    y
}

/// Lower estimate of `||X⁻¹||_1` for upper triangular `X` (Hager's method).
fn inverse_one_norm_estimate(x: &DenseMatrix) -> f64 {
    let n = x.rows();
    let mut v = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    for _ in 0..5 {
        let y = triangular_solve(x, &v, false);
        let new_est: f64 = y.iter().map(|a| a.abs()).sum();
        let sign: Vec<f64> = y.iter().map(|&a| if a >= 0.0 { 1.0 } else { -1.0 }).collect();
        let z = triangular_solve(x, &sign, true);
        let (j, zmax) = z.iter().enumerate().fold(
            (0, 0.0f64),
            |acc, (i, &a)| if a.abs() > acc.1 { (i, a.abs()) } else { acc },
        );
        let zv: f64 = z.iter().zip(&v).map(|(a, b)| a * b).sum();
        if new_est <= est || zmax <= zv {
            est = est.max(new_est);
            break;
        }
        est = new_est;
        v.iter_mut().for_each(|a| *a = 0.0);
        v[j] = 1.0;
    }
    est
}

/// 1-norm condition estimate of the eigenvector basis of an upper
/// triangular matrix; infinite when the basis is numerically singular.
pub fn eigenbasis_condition(t: &DenseMatrix) -> f64 {
    match triangular_eigenvectors(t) {
        Some(x) => {
            let c = one_norm(&x) * inverse_one_norm_estimate(&x);
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Upper triangular instance: eigenvalues uniform in the interval on the
/// diagonal, `c · U(-1, 1)` above it, with `c` searched on a log scale until
/// the eigenbasis condition estimate is within a factor 2 of the target.
pub fn generate_instance(spec: &RandomInstanceSpec) -> Result<BlockTriangularMatrix> {
    spec.validate()?;
    let partition = Partition::new(spec.block_sizes.clone())?;
    let n = partition.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let diag: Vec<f64> = (0..n)
        .map(|_| {
            if spec.lambda_lo == spec.lambda_hi {
                spec.lambda_lo
            } else {
                rng.gen_range(spec.lambda_lo..=spec.lambda_hi)
            }
        })
        .collect();
    let noise = DenseMatrix::from_fn(n, n, |i, j| if j > i { rng.gen_range(-1.0..1.0) } else { 0.0 });
    let build = |c: f64| {
        let mut t = noise.scaled(c);
        for (i, &d) in diag.iter().enumerate() {
            t.set(i, i, d);
        }
        t
    };

    let target = spec.cond_target;
    let within = |k: f64| k <= 2.0 * target && k >= target / 2.0;
    let mut attempts = 0;
    let mut last = eigenbasis_condition(&build(0.0));
    if within(last) || n == 1 {
        return BlockTriangularMatrix::new(build(0.0), partition);
    }
    // bracket on a log scale, then bisect
    let (mut lo, mut hi) = (f64::NAN, 1.0);
    loop {
        attempts += 1;
        last = eigenbasis_condition(&build(hi));
        if within(last) {
            return BlockTriangularMatrix::new(build(hi), partition);
        }
        if last > target {
            break;
        }
        lo = hi;
        hi *= 16.0;
        if attempts >= MAX_RESCALES {
            return Err(Error::ConditionTarget { target, attempts, last });
        }
    }
    if lo.is_nan() {
        lo = hi;
        loop {
            attempts += 1;
            lo /= 16.0;
            last = eigenbasis_condition(&build(lo));
            if within(last) {
                return BlockTriangularMatrix::new(build(lo), partition);
            }
            if last < target {
                break;
            }
            if attempts >= MAX_RESCALES {
                return Err(Error::ConditionTarget { target, attempts, last });
            }
        }
    }
    while attempts < MAX_RESCALES {
        attempts += 1;
        let mid = (lo * hi).sqrt();
        last = eigenbasis_condition(&build(mid));
        if within(last) {
            return BlockTriangularMatrix::new(build(mid), partition);
        }
        if last > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::ConditionTarget { target, attempts, last })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Naive,
    Incremental(Scaling),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Naive => "naive".into(),
            Method::Incremental(Scaling::Fixed(s)) => format!("fixed:{s}"),
            Method::Incremental(Scaling::Adaptive { theta }) if *theta == THETA_13 => "adaptive".into(),
            Method::Incremental(Scaling::Adaptive { theta }) => format!("adaptive:{theta}"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        if text == "naive" {
            Ok(Method::Naive)
        } else {
            text.parse().map(Method::Incremental)
        }
    }
}

/// Comma-separated list such as `naive,fixed:6,adaptive`.
pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub method: String,
    pub step: usize,
    pub dim: usize,
    pub cum_seconds: f64,
    /// Relative Frobenius error against the from-scratch exponential, when
    /// checking is on.
    pub rel_err: Option<f64>,
    pub restart: bool,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub check: bool,
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            check: true,
            repeats: 3,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Runs every method over the stages of `instance` in lockstep. The naive
/// method recomputes `exp(G_l)` from scratch at stage `l`; incremental
/// methods take one step. Per-stage times are medians over the repeats and
/// are accumulated per method.
pub fn run_benchmark(
    instance: &BlockTriangularMatrix,
    methods: &[Method],
    options: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    let stages = instance.num_blocks();
    if stages == 0 {
        return Ok(Vec::new());
    }
    let repeats = options.repeats.max(1);
    let pade = PadeCoefficients::default();
    let columns: Vec<_> = (0..stages).map(|l| instance.block_column(l)).collect::<Result<_>>()?;

    // seconds[method][stage][repeat]
    let mut seconds = vec![vec![Vec::with_capacity(repeats); stages]; methods.len()];
    let mut errors = vec![vec![None; stages]; methods.len()];
    let mut restarts = vec![vec![false; stages]; methods.len()];
    for rep in 0..repeats {
        let record = rep == 0;
        let mut engines: Vec<Option<IncrementalExp>> = methods.iter().map(|_| None).collect();
        for l in 0..stages {
            let g_l = instance.leading(l)?;
            let mut reference: Option<DenseMatrix> = None;
            for (mi, m) in methods.iter().enumerate() {
                match m {
                    Method::Naive => {
                        let t = Instant::now();
                        let e = expm(g_l.data())?;
                        seconds[mi][l].push(t.elapsed().as_secs_f64());
                        if record && options.check {
                            errors[mi][l] = Some(UNIT_ROUNDOFF);
                            reference = Some(e);
                        }
                    }
                    Method::Incremental(scaling) => {
                        let t = Instant::now();
                        let report = match &mut engines[mi] {
                            None => {
                                let (e, r) = IncrementalExp::start(columns[0].diag(), *scaling, &pade)?;
                                engines[mi] = Some(e);
                                r
                            }
                            Some(e) => e.push(&columns[l])?,
                        };
                        seconds[mi][l].push(t.elapsed().as_secs_f64());
                        if record {
                            restarts[mi][l] = report.restart;
                            if options.check {
                                if reference.is_none() {
                                    reference = Some(expm(g_l.data())?);
                                }
                                let got = engines[mi].as_ref().expect("started").exponential_data();
                                let err = rel_error_frobenius(reference.as_ref().expect("set"), got)?;
                                errors[mi][l] = Some(err.max(UNIT_ROUNDOFF));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut records = Vec::with_capacity(methods.len() * stages);
    for (mi, m) in methods.iter().enumerate() {
        let mut cum = 0.0;
        for l in 0..stages {
            cum += median(&mut seconds[mi][l]);
            records.push(BenchRecord {
                method: m.label(),
                step: l,
                dim: instance.partition().end(l),
                cum_seconds: cum,
                rel_err: errors[mi][l],
                restart: restarts[mi][l],
            });
        }
    }
    Ok(records)
}

pub fn write_bench_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "step", "dim", "cum_seconds", "rel_err", "restart"])?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.step.to_string(),
            r.dim.to_string(),
            format!("{:e}", r.cum_seconds),
            r.rel_err.map(|e| format!("{e:e}")).unwrap_or_default(),
            r.restart.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> RandomInstanceSpec {
        RandomInstanceSpec::with_random_sizes(seed, 6, 2, 6, (-80.0, -0.5), 100.0).unwrap()
    }

    #[test]
    fn single_scalar_instance() {
        let spec = RandomInstanceSpec {
            seed: 1,
            block_sizes: vec![1],
            lambda_lo: -1.0,
            lambda_hi: -1.0,
            cond_target: 100.0,
        };
        let g = generate_instance(&spec).unwrap();
        assert_eq!(g.data(), &DenseMatrix::from_rows(&[[-1.0]]).unwrap());
    }

    #[test]
    fn instances_are_deterministic() {
        let a = generate_instance(&small_spec(5)).unwrap();
        let b = generate_instance(&small_spec(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_instance(&small_spec(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn instance_properties() {
        let spec = small_spec(9);
        let g = generate_instance(&spec).unwrap();
        assert_eq!(g.partition().sizes(), spec.block_sizes.as_slice());
        let d = g.data();
        for i in 0..g.dim() {
            assert!((spec.lambda_lo..=spec.lambda_hi).contains(&d.get(i, i)));
            for j in 0..i {
                assert_eq!(d.get(i, j), 0.0);
            }
        }
        let k = eigenbasis_condition(d);
        assert!((50.0..=200.0).contains(&k), "{k}");
    }

    #[test]
    fn eigenvectors_of_known_triangular() {
        // [[a, c], [0, b]] has eigenvector (c/(b − a), 1) for b
        let t = DenseMatrix::from_rows(&[[-1.0, 2.0], [0.0, -3.0]]).unwrap();
        let x = triangular_eigenvectors(&t).unwrap();
        let (u, v) = (-1.0f64, 1.0f64);
        let n = (u * u + v * v).sqrt();
        assert!((x.get(0, 1) - u / n).abs() <= 1e-15);
        assert!((x.get(1, 1) - v / n).abs() <= 1e-15);
        assert_eq!(eigenbasis_condition(&DenseMatrix::from_diagonal(&[-1.0, -2.0])), 1.0);
        // exact inverse norm for a small triangular matrix
        let xinv_norm = {
            let inv0 = triangular_solve(&x, &[1.0, 0.0], false);
            let inv1 = triangular_solve(&x, &[0.0, 1.0], false);
            let c0: f64 = inv0.iter().map(|a| a.abs()).sum();
            let c1: f64 = inv1.iter().map(|a| a.abs()).sum();
            c0.max(c1)
        };
        assert!((inverse_one_norm_estimate(&x) - xinv_norm).abs() <= 1e-12 * xinv_norm);
    }

    #[test]
    fn unreachable_condition_target() {
        let spec = RandomInstanceSpec {
            seed: 3,
            block_sizes: vec![2, 2],
            lambda_lo: -1.0,
            lambda_hi: -1.0,
            cond_target: 1e6,
        };
        // equal eigenvalues make every nonzero coupling defective
        assert!(matches!(generate_instance(&spec), Err(Error::ConditionTarget { .. })));
    }

    #[test]
    fn one_block_reports_unit_roundoff() {
        let spec = RandomInstanceSpec {
            seed: 2,
            block_sizes: vec![4],
            lambda_lo: -3.0,
            lambda_hi: -0.5,
            cond_target: 10.0,
        };
        let g = generate_instance(&spec).unwrap();
        let s = crate::pade::select_scaling(g.data(), THETA_13).s;
        let methods = parse_methods(&format!("naive,fixed:{s},adaptive")).unwrap();
        let options = BenchOptions {
            check: true,
            repeats: 1,
        };
        let records = run_benchmark(&g, &methods, &options).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!(r.rel_err, Some(UNIT_ROUNDOFF), "{}", r.method);
        }
    }

    #[test]
    fn benchmark_records_and_csv() {
        let g = generate_instance(&small_spec(11)).unwrap();
        let methods = parse_methods("naive, fixed:2,adaptive").unwrap();
        let records = run_benchmark(
            &g,
            &methods,
            &BenchOptions {
                check: true,
                repeats: 2,
            },
        )
        .unwrap();
        assert_eq!(records.len(), 3 * g.num_blocks());
        for m in ["naive", "fixed:2", "adaptive"] {
            let rows: Vec<_> = records.iter().filter(|r| r.method == m).collect();
            assert!(rows.windows(2).all(|w| w[0].cum_seconds <= w[1].cum_seconds));
            assert!(rows.iter().all(|r| r.rel_err.unwrap() <= 1e-10));
            assert_eq!(rows.last().unwrap().dim, g.dim());
        }
        let mut buf = Vec::new();
        write_bench_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,step,dim,cum_seconds,rel_err,restart\n"));
        assert!(parse_methods("naive,bogus").is_err());

        let unchecked = run_benchmark(
            &g,
            &methods,
            &BenchOptions {
                check: false,
                repeats: 1,
            },
        )
        .unwrap();
        assert!(unchecked.iter().all(|r| r.rel_err.is_none()));
    }

    #[test]
    fn growing_norms_trigger_restarts() {
        // later blocks carry larger eigenvalues in magnitude
        let mut data = DenseMatrix::zeros(8, 8);
        for i in 0..8 {
            data.set(i, i, -(2f64.powi(i as i32)));
            for j in i + 1..8 {
                data.set(i, j, 0.1);
            }
        }
        let g = BlockTriangularMatrix::new(data, Partition::new(vec![2; 4]).unwrap()).unwrap();
        let methods = [Method::Incremental(Scaling::Adaptive { theta: THETA_13 })];
        let records = run_benchmark(
            &g,
            &methods,
            &BenchOptions {
                check: true,
                repeats: 1,
            },
        )
        .unwrap();
        assert!(records.iter().any(|r| r.restart));
        for r in records.iter().filter(|r| r.restart) {
            assert_eq!(r.rel_err, Some(UNIT_ROUNDOFF));
        }
    }
}
