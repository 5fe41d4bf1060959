use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpaccess::harness::{self, ExperimentConfig, GridPoint};
use mpaccess::{dump, selftest, solver};

#[derive(Parser)]
#[command(version, about = "Grant-free access simulator for multi-panel arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep described by a TOML config.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run one trial and write the per-iteration trace.
    Single {
        /// Optional TOML config; the first grid point is used unless overridden.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        active: Option<usize>,
        #[arg(long)]
        symbols: Option<usize>,
        #[arg(long)]
        pilots: Option<usize>,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Trace CSV destination (stdout if omitted).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write F (dense) and Y in the binary dump format.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(config: Option<&PathBuf>) -> mpaccess::Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> mpaccess::Result<ExitCode> {
    match cli.command {
        Command::Sweep { config, out, seed, threads } => {
            let mut cfg = load(Some(&config))?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.threads = threads.or(cfg.threads);
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("results.csv"));
            let sweep = harness::run_sweep_to_path(&cfg, &out)?;
            for row in sweep.rows.iter().filter(|r| r.row != "trial") {
                match row.row.as_str() {
                    "skipped" => eprintln!("skipped G={} > K={}", row.g, row.k),
                    "mean" => eprintln!(
                        "K={} Ka={} P={} SNR={} G={} {:>12} {:>6}  aud={:.3e}  nmse={:.2} dB",
                        row.k,
                        row.k_a,
                        row.p,
                        row.snr_db,
                        row.g,
                        row.algorithm,
                        row.detector,
                        row.aud_error.unwrap_or(f64::NAN),
                        row.nmse_db.unwrap_or(f64::NAN)
                    ),
                    _ => {}
                }
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Single { config, seed, users, active, symbols, pilots, snr_db, iterations, trace, dump: dump_path } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(t) = iterations {
                cfg.solver.iterations = t;
            }
            let first = cfg.grid()[0];
            let point = GridPoint {
                k: users.unwrap_or(first.k),
                k_a: active.unwrap_or(first.k_a),
                g: symbols.unwrap_or(first.g),
                p: pilots.unwrap_or(first.p),
                snr_db: snr_db.unwrap_or(first.snr_db),
            };
            cfg.sweep.users = point.k;
            cfg.sweep.active = vec![point.k_a];
            cfg.sweep.pilots = vec![point.p];
            cfg.validate()?;
            let seed = seed.unwrap_or_else(|| harness::trial_seed(cfg.seed, 0));
            let start = std::time::Instant::now();
            let (inst, results, rows) = harness::run_single(&cfg, point, seed)?;
            let elapsed = start.elapsed().as_secs_f64();
            match trace {
                Some(p) => solver::write_trace_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => solver::write_trace_csv(&rows, std::io::stdout().lock())?,
            }
            if let Some(p) = dump_path {
                let (j, q) = (inst.operator.j(), inst.operator.q());
                if j * q > harness::DENSE_LIMIT {
                    return Err(mpaccess::Error::Config(format!(
                        "J*Q = {} exceeds the dense limit {}; not dumping",
                        j * q,
                        harness::DENSE_LIMIT
                    )));
                }
                dump::dump_problem(&p, &inst.operator.to_dense(), &inst.measurements.y)?;
            }
            eprintln!(
                "K={} Ka={} G={} P={} SNR={} dB seed={seed}  J={} Q={}  {:.2} s",
                point.k,
                point.k_a,
                point.g,
                point.p,
                point.snr_db,
                inst.operator.j(),
                inst.operator.q(),
                elapsed
            );
            for r in &results {
                eprintln!(
                    "{:>6}  aud={:.4e}  nmse={:.2} dB  sigma2={:.3e} (true {:.3e})",
                    r.detector.name(),
                    r.aud_error,
                    r.nmse_db,
                    r.summary.final_sigma2,
                    r.summary.true_sigma2
                );
            }
        }
        Command::Selftest => {
            let report = selftest::run_all();
            for check in &report {
                println!("{} {:<28} {}", if check.passed { "ok  " } else { "FAIL" }, check.name, check.detail);
            }
            if report.iter().any(|c| !c.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
