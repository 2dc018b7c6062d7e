//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures while running.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::datacube::{read_msd, write_msd, Dims};
use crate::denoisers::{denoise, DenoiserSpec};
use crate::error::Error;
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentResult};
use crate::operators;
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::solver::Mode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "msred",
    version,
    about = "RED reconstruction of multispectral datacubes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more experiments; several configs run concurrently.
    Run {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
    },
    /// Generate a synthetic phantom and save it as MSD.
    Phantom {
        #[arg(long)]
        seed: u64,
        /// Dimensions as HxWxB.
        #[arg(long)]
        dims: Dims,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        blobs: usize,
        #[arg(long, default_value_t = 0.1)]
        background: f64,
    },
    /// Apply a single denoiser to an MSD cube.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Denoiser JSON, e.g. '{"variant":"tv3d","lambda":0.02,"inner_iters":50}'.
        #[arg(long)]
        denoiser: String,
    },
    /// Run GM on a config and write the full convergence report.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the estimated operator norm and L_g for a config.
    Norm {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Phantom {
            seed,
            dims,
            out,
            blobs,
            background,
        } => {
            let spec = PhantomSpec {
                seed,
                dims,
                n_blobs: blobs,
                background,
            };
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
            runtime(generate_phantom(&spec).and_then(|cube| save(&out, |w| write_msd(&cube, w))))
        }
        Command::Denoise { input, out, denoiser } => {
            let spec: DenoiserSpec = match serde_json::from_str(&denoiser) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: bad --denoiser JSON: {e}");
                    return EXIT_USAGE;
                }
            };
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
            runtime((|| {
                let cube = read_msd(BufReader::new(File::open(&input)?))?;
                let clean = denoise(&spec, &cube)?;
                save(&out, |w| write_msd(&clean, w))
            })())
        }
        Command::Check { config } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if cfg.solver.mode != Mode::Gm {
                eprintln!("note: check runs GM; overriding mode {:?}", cfg.solver.mode);
                cfg.solver.mode = Mode::Gm;
            }
            match run_experiment(&cfg) {
                Ok(res) => {
                    print_summary(&res);
                    match &res.report.convergence {
                        Some(rep) => {
                            println!(
                                "R0 = {:e}; bound violations: {}; worst relative margin {:e}",
                                rep.r0, rep.violations, rep.worst_violation
                            );
                            println!(
                                "monotone: {}; averaged bound: {}; descent: {}",
                                rep.monotone_ok,
                                rep.averaged_ok,
                                rep.descent_ok.map_or("n/a".into(), |b| b.to_string())
                            );
                            for w in &rep.warnings {
                                println!("warning: {w}");
                            }
                            println!(
                                "{}",
                                if rep.all_ok() {
                                    "all checks passed"
                                } else {
                                    "checks failed"
                                }
                            );
                        }
                        None => println!("convergence checks unavailable"),
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Norm { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            runtime((|| {
                let dims = cfg.truth_dims()?;
                let model = cfg.measurement_model(dims)?;
                let est = operators::operator_norm(
                    &model,
                    crate::fidelity::LIPSCHITZ_MAX_ITERS,
                    crate::fidelity::LIPSCHITZ_TOL,
                    cfg.lipschitz_seed,
                )?;
                println!("operator_norm = {:e}", est.sigma_max);
                println!("lipschitz_g = {:e}", est.sigma_max * est.sigma_max);
                println!(
                    "power_iterations = {} (converged: {})",
                    est.iterations, est.converged
                );
                Ok(())
            })())
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, i32> {
    ExperimentConfig::load(path).map_err(|e| {
        match e {
            Error::Io(io) => eprintln!("error: cannot read config {}: {io}", path.display()),
            other => eprintln!("error: {}: {other}", path.display()),
        }
        EXIT_USAGE
    })
}

fn cmd_run(paths: &[PathBuf]) -> i32 {
    let mut configs = Vec::with_capacity(paths.len());
    for p in paths {
        match load_config(p) {
            Ok(c) => configs.push(c),
            Err(code) => return code,
        }
    }
    let mut seen = HashSet::new();
    for c in &configs {
        if !seen.insert(c.output_dir.clone()) {
            eprintln!(
                "error: output_dir {} is used by more than one config",
                c.output_dir.display()
            );
            return EXIT_USAGE;
        }
    }
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_experiment(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Degenerate("experiment thread panicked".into())))
            })
            .collect()
    });
    let mut code = EXIT_OK;
    let mut snrs = Vec::new();
    for (path, res) in paths.iter().zip(results) {
        match res {
            Ok(r) => {
                print_summary(&r);
                let s = &r.report.summary;
                if let Some(recon) = s.recon_snr_db {
                    snrs.push((s.baseline_snr_db, recon));
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                code = EXIT_RUNTIME;
            }
        }
    }
    if snrs.len() > 1 {
        let (base, recon) = mean_snr_db(&snrs);
        println!(
            "mean over {} runs (in dB): baseline {base:.3} dB, reconstruction {recon:.3} dB",
            snrs.len()
        );
    }
    code
}

/// Averages `(baseline, reconstruction)` SNR pairs in the dB domain.
fn mean_snr_db(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let (b, r) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    (b / n, r / n)
}

fn print_summary(res: &ExperimentResult) {
    let s = &res.report.summary;
    println!(
        "{}: {} iterations, baseline {:.3} dB, reconstruction {} dB (L_g = {:e}, step = {:e})",
        res.output_dir.display(),
        s.iterations,
        s.baseline_snr_db,
        s.recon_snr_db.map_or("n/a".into(), |v| format!("{v:.3}")),
        s.lipschitz_g,
        s.step_size
    );
    for w in &res.report.warnings {
        println!("warning: {w}");
    }
}

fn save(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> crate::Result<usize>) -> crate::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn runtime(r: crate::Result<()>) -> i32 {
    match r {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
