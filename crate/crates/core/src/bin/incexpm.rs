use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use incexpm::bench::{
    generate_instance, parse_methods, run_benchmark, write_bench_csv, BenchOptions, RandomInstanceSpec,
};
use incexpm::block::{partition_to_text, read_column_stream, BlockTriangularMatrix};
use incexpm::generators::{
    build_generator_matrix, heston_spec, jacobi_spec, parse_param_list, HestonParams, JacobiParams,
};
use incexpm::pade::{expm_baseline, pade_coefficients, DEFAULT_DEGREE, THETA_13};
use incexpm::pricing::{price_call, ExpSource, PricingConfig};
use incexpm::{rel_error_frobenius, DenseMatrix, Error, IncrementalExp, Result, Scaling};

#[derive(Parser)]
#[command(
    name = "incexpm",
    version,
    about = "Incremental exponentials of nested block triangular matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exponential of a dense matrix by Padé scaling and squaring.
    Expm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEGREE)]
        degree: usize,
        #[arg(long, default_value_t = THETA_13)]
        theta: f64,
    },
    /// Exponentials of a growing sequence given as a block-column stream.
    Incremental {
        #[arg(long)]
        columns: PathBuf,
        /// fixed:<s> or adaptive[:<theta>]
        #[arg(long, default_value = "adaptive")]
        scaling: Scaling,
        /// Directory receiving F_0.txt, F_1.txt, ... and reports.csv.
        #[arg(long)]
        emit: PathBuf,
        /// Also compare every stage with a from-scratch exponential.
        #[arg(long)]
        check: bool,
    },
    /// Generator matrix of a polynomial diffusion on monomials of degree <= n.
    Generator {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        params: String,
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
    /// European call in the Jacobi model by a Hermite series.
    Price {
        #[arg(long, value_enum, default_value = "jacobi")]
        model: PriceModel,
        #[arg(long)]
        params: String,
        #[arg(long, default_value_t = 0.0)]
        y0: f64,
        #[arg(long, default_value_t = 0.04)]
        v0: f64,
        /// Maturity; falls back to `tau` in --params.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1.1f64.ln())]
        logstrike: f64,
        #[arg(long, default_value_t = 0.0)]
        muw: f64,
        #[arg(long, default_value_t = 0.5)]
        sigmaw: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        nmax: usize,
        /// adaptive[:<theta>], fixed:<s> or baseline
        #[arg(long, default_value = "adaptive")]
        scaling: ExpSource,
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Timing and accuracy of incremental versus from-scratch exponentials.
    Bench {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 46)]
        blocks: usize,
        #[arg(long, default_value_t = 20)]
        bmin: usize,
        #[arg(long, default_value_t = 80)]
        bmax: usize,
        /// lo:hi
        #[arg(long, default_value = "-80:-0.5", allow_hyphen_values = true)]
        spectrum: String,
        #[arg(long, default_value_t = 100.0)]
        cond: f64,
        #[arg(long, default_value = "naive,fixed:6,fixed:12,adaptive")]
        methods: String,
        #[arg(long)]
        check: bool,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Jacobi,
    Heston,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriceModel {
    Jacobi,
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    fs::read_to_string(path)?.parse()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Expm {
            input,
            out,
            degree,
            theta,
        } => {
            pade_coefficients(degree)?;
            let g = read_matrix(&input)?;
            let f = expm_baseline(&g, degree, theta)?;
            fs::write(out, f.to_text())?;
        }
        Command::Incremental {
            columns,
            scaling,
            emit,
            check,
        } => {
            let stream = read_column_stream(&fs::read_to_string(columns)?)?;
            let first = stream
                .first()
                .ok_or_else(|| Error::Partition("column stream is empty".into()))?;
            fs::create_dir_all(&emit)?;
            let mut assembled = if check {
                Some(BlockTriangularMatrix::from_columns([first])?)
            } else {
                None
            };
            let mut csv = csv::Writer::from_path(emit.join("reports.csv"))?;
            let mut header = vec!["step", "dim", "s", "restart", "seconds"];
            if check {
                header.push("relerr");
            }
            csv.write_record(&header)?;
            let pade = incexpm::PadeCoefficients::default();
            let (mut engine, mut report) = IncrementalExp::start(first.diag(), scaling, &pade)?;
            let mut rest = stream.iter().skip(1);
            loop {
                let f = engine.exponential_data();
                fs::write(emit.join(format!("F_{}.txt", report.step)), f.to_text())?;
                let mut row = vec![
                    report.step.to_string(),
                    report.dim.to_string(),
                    report.s.to_string(),
                    report.restart.to_string(),
                    format!("{:e}", report.seconds),
                ];
                if let Some(g) = &assembled {
                    let base = expm_baseline(g.data(), DEFAULT_DEGREE, THETA_13)?;
                    row.push(format!("{:e}", rel_error_frobenius(&base, f)?));
                }
                csv.write_record(&row)?;
                let Some(c) = rest.next() else { break };
                if let Some(g) = &mut assembled {
                    *g = g.append_block_column(c)?;
                }
                report = engine.push(c)?;
            }
            csv.flush()?;
            eprintln!(
                "{} stages, final dimension {}, {} restarts",
                report.step + 1,
                report.dim,
                engine.restarts()
            );
        }
        Command::Generator {
            model,
            params,
            degree,
            out,
            partition_out,
        } => {
            let map = parse_param_list(&params)?;
            let spec = match model {
                Model::Jacobi => jacobi_spec(&JacobiParams::from_map(&map)?)?,
                Model::Heston => heston_spec(&HestonParams::from_map(&map)?)?,
            };
            let g = build_generator_matrix(&spec, degree)?;
            fs::write(out, g.data().to_text())?;
            if let Some(p) = partition_out {
                fs::write(p, partition_to_text(g.partition()))?;
            }
        }
        Command::Price {
            model: PriceModel::Jacobi,
            params,
            y0,
            v0,
            tau,
            logstrike,
            muw,
            sigmaw,
            eps,
            nmax,
            scaling,
            ledger,
        } => {
            let map = parse_param_list(&params)?;
            let tau = tau
                .or_else(|| map.get("tau").copied())
                .ok_or_else(|| Error::InvalidParams("maturity missing: pass --tau or tau=... in --params".into()))?;
            let config = PricingConfig {
                params: JacobiParams::from_map(&map)?,
                y0,
                v0,
                tau,
                log_strike: logstrike,
                mu_w: muw,
                sigma_w: sigmaw,
                eps,
                n_max: nmax,
            };
            let result = price_call(&config, scaling)?;
            if let Some(path) = ledger {
                result.write_ledger_csv(fs::File::create(path)?)?;
            }
            println!("price {:.12e}", result.price);
            println!("degree {}", result.n);
            println!("converged {}", result.converged);
            println!("restarts {}", result.restarts);
        }
        Command::Bench {
            seed,
            blocks,
            bmin,
            bmax,
            spectrum,
            cond,
            methods,
            check,
            repeats,
            out,
        } => {
            let (lo, hi) = spectrum
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| Error::InvalidParams(format!("bad spectrum `{spectrum}`, expected lo:hi")))?;
            let spec = RandomInstanceSpec::with_random_sizes(seed, blocks, bmin, bmax, (lo, hi), cond)?;
            let instance = generate_instance(&spec)?;
            let methods = parse_methods(&methods)?;
            let records = run_benchmark(&instance, &methods, &BenchOptions { check, repeats })?;
            write_bench_csv(&records, fs::File::create(out)?)?;
            for m in &methods {
                let label = m.label();
                if let Some(last) = records.iter().rfind(|r| r.method == label) {
                    eprintln!("{label:>12}: dim {} cumulative {:.3} s", last.dim, last.cum_seconds);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
