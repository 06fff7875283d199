//! WebAssembly entry points for the browser demo in `www/`.
//!
//! Each export returns a flat `Float64Array` of fixed-width rows; the page
//! slices it apart. The plain functions underneath are what the tests call.

use incexpm::bench::{generate_instance, run_benchmark, BenchOptions, Method, RandomInstanceSpec};
use incexpm::generators::{
    build_generator_matrix, heston_norm_bound, heston_spec, jacobi_norm_bound, jacobi_spec, parse_param_list,
    HestonParams, JacobiParams,
};
use incexpm::pricing::{reference_price, ExpSource, PricingConfig};
use incexpm::{one_norm, Error, Result};
use wasm_bindgen::prelude::*;

/// Rows of `[n, l_n, f_n, partial_price, cum_seconds]` for every degree up
/// to `n_max`, ignoring the stop rule so the page can show where it fires.
#[allow(clippy::too_many_arguments)]
pub fn price_rows(
    params: &str,
    v0: f64,
    tau: f64,
    log_strike: f64,
    sigma_w: f64,
    n_max: usize,
    scaling: &str,
) -> Result<Vec<f64>> {
    let map = parse_param_list(params)?;
    let config = PricingConfig {
        params: JacobiParams::from_map(&map)?,
        y0: 0.0,
        v0,
        tau,
        log_strike,
        mu_w: 0.0,
        sigma_w,
        eps: 1e-3,
        n_max,
    };
    let source: ExpSource = scaling.parse()?;
    let result = reference_price(&config, source)?;
    Ok(result
        .ledger
        .iter()
        .flat_map(|r| [r.n as f64, r.l_n, r.f_n, r.partial_price, r.cum_seconds])
        .collect())
}

/// Rows of `[n, ‖G_n‖₁, bound(n)]` for `n = 1..=n_max`.
pub fn norm_rows(model: &str, params: &str, n_max: usize) -> Result<Vec<f64>> {
    let map = parse_param_list(params)?;
    let (spec, bound): (_, Box<dyn Fn(usize) -> f64>) = match model {
        "jacobi" => {
            let p = JacobiParams::from_map(&map)?;
            (jacobi_spec(&p)?, Box::new(move |n| jacobi_norm_bound(&p, n)))
        }
        "heston" => {
            let p = HestonParams::from_map(&map)?;
            (heston_spec(&p)?, Box::new(move |n| heston_norm_bound(&p, n)))
        }
        other => return Err(Error::InvalidParams(format!("unknown model `{other}`"))),
    };
    let g = build_generator_matrix(&spec, n_max)?;
    let mut out = Vec::with_capacity(3 * n_max);
    for n in 1..=n_max {
        out.extend([n as f64, one_norm(g.leading(n)?.data()), bound(n)]);
    }
    Ok(out)
}

/// Rows of `[step, dim, naive_seconds, adaptive_seconds, adaptive_rel_err, restart]`
/// with cumulative times over a random block triangular sequence.
pub fn bench_rows(seed: u64, blocks: usize, bmin: usize, bmax: usize, cond: f64) -> Result<Vec<f64>> {
    let spec = RandomInstanceSpec::with_random_sizes(seed, blocks, bmin, bmax, (-80.0, -0.5), cond)?;
    let g = generate_instance(&spec)?;
    let adaptive = Method::Incremental("adaptive".parse()?);
    let records = run_benchmark(
        &g,
        &[Method::Naive, adaptive],
        &BenchOptions {
            check: true,
            repeats: 1,
        },
    )?;
    let (naive, inc): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.method == "naive");
    Ok(naive
        .iter()
        .zip(&inc)
        .flat_map(|(a, b)| {
            [
                b.step as f64,
                b.dim as f64,
                a.cum_seconds,
                b.cum_seconds,
                b.rel_err.unwrap_or(f64::NAN),
                if b.restart { 1.0 } else { 0.0 },
            ]
        })
        .collect())
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn price_curve(
    params: &str,
    v0: f64,
    tau: f64,
    log_strike: f64,
    sigma_w: f64,
    n_max: usize,
    scaling: &str,
) -> std::result::Result<Vec<f64>, JsError> {
    js(price_rows(params, v0, tau, log_strike, sigma_w, n_max, scaling))
}

#[wasm_bindgen]
pub fn norm_curve(model: &str, params: &str, n_max: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(norm_rows(model, params, n_max))
}

#[wasm_bindgen]
pub fn bench_curve(
    seed: u32,
    blocks: usize,
    bmin: usize,
    bmax: usize,
    cond: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    js(bench_rows(seed as u64, blocks, bmin, bmax, cond))
}

#[cfg(test)]
mod tests {
    use super::*;

    const JACOBI: &str = "kappa=0.5,theta=0.04,sigma=1,r=0,rho=-0.5,vmin=1e-4,vmax=0.08";

    #[test]
    fn price_rows_are_cumulative() {
        let rows = price_rows(JACOBI, 0.04, 0.25, 1.1f64.ln(), 0.5, 6, "adaptive").unwrap();
        assert_eq!(rows.len(), 7 * 5);
        let mut sum = 0.0;
        for r in rows.chunks(5) {
            sum += r[1] * r[2];
            assert!((r[3] - sum).abs() <= 1e-15 * sum.abs().max(1e-3));
        }
        // l_0 is the total mass
        assert!((rows[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norm_rows_stay_below_bound() {
        for (model, params) in [
            ("jacobi", JACOBI),
            ("heston", "kappa=1,theta=0.05,sigma=0.5,r=0.01,rho=0.3"),
        ] {
            let rows = norm_rows(model, params, 12).unwrap();
            assert_eq!(rows.len(), 36);
            for r in rows.chunks(3) {
                assert!(r[1] <= r[2], "{model} n={}", r[0]);
            }
        }
        assert!(norm_rows("cir", JACOBI, 3).is_err());
    }

    #[test]
    fn bench_rows_pair_the_methods() {
        let rows = bench_rows(5, 5, 3, 6, 10.0).unwrap();
        assert_eq!(rows.len(), 5 * 6);
        for (i, r) in rows.chunks(6).enumerate() {
            assert_eq!(r[0], i as f64);
            assert!(r[4] < 1e-12);
        }
    }
}
