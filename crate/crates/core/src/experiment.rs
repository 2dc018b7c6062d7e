//! End-to-end experiment pipeline: degrade a ground truth, reconstruct it,
//! audit the run and write every artifact to one directory.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datacube::{read_msd, snr_db, write_msd, DataCube, Dims};
use crate::denoisers::DenoiserSpec;
use crate::diagnostics::{self, ConvergenceReport};
use crate::error::{Error, Result};
use crate::fidelity::FidelityProblem;
use crate::operators::{self, Kernel2D, MeasurementModel};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::solver::{self, IterationRecord, Mode, SolverConfig};

pub const METRICS_HEADER: &str = "iter,residual_norm,data_fidelity,red_penalty,snr_db,q,elapsed_ms";

/// Ground truth: either generated from a spec or loaded from an MSD file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSource {
    Phantom(PhantomSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { size: usize, sigma: f64 },
    Motion { length: usize, angle: f64, size: usize },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel2D> {
        match *self {
            KernelSpec::Gaussian { size, sigma } => Kernel2D::gaussian(size, sigma),
            KernelSpec::Motion { length, angle, size } => Kernel2D::motion(length, angle, size),
        }
    }
}

fn default_lipschitz_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: TruthSource,
    pub kernel: KernelSpec,
    pub scale: usize,
    pub input_snr_db: f64,
    pub noise_seed: u64,
    pub denoiser: DenoiserSpec,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    /// Wall-clock column in metrics.csv. Off by default so that reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    /// Seed of the power iteration that estimates `‖A‖`.
    #[serde(default = "default_lipschitz_seed")]
    pub lipschitz_seed: u64,
}

impl ExperimentConfig {
    /// Parses and validates a JSON config. Parse errors carry the path of
    /// the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching the
    /// filesystem.
    pub fn validate(&self) -> Result<()> {
        let at = |path: &str, e: Error| Error::Config {
            path: path.to_string(),
            message: e.to_string(),
        };
        if let TruthSource::Phantom(spec) = &self.phantom {
            spec.validate().map_err(|e| at("phantom", e))?;
            check_divisible(spec.dims, self.scale)?;
        }
        if self.scale == 0 {
            return Err(at("scale", Error::param("scale must be at least 1")));
        }
        self.kernel.build().map_err(|e| at("kernel", e))?;
        if !self.input_snr_db.is_finite() {
            return Err(at("input_snr_db", Error::param("input SNR must be finite")));
        }
        self.denoiser.validate().map_err(|e| at("denoiser", e))?;
        self.solver.validate().map_err(|e| at("solver", e))?;
        Ok(())
    }

    /// Dimensions of the ground truth. File sources are loaded to find out.
    pub fn truth_dims(&self) -> Result<Dims> {
        match &self.phantom {
            TruthSource::Phantom(spec) => Ok(spec.dims),
            TruthSource::File(path) => Ok(load_cube(path)?.dims()),
        }
    }

    pub fn measurement_model(&self, dims: Dims) -> Result<MeasurementModel> {
        check_divisible(dims, self.scale)?;
        MeasurementModel::new(self.kernel.build()?, self.scale, dims)
    }

    pub fn truth(&self) -> Result<DataCube> {
        match &self.phantom {
            TruthSource::Phantom(spec) => generate_phantom(spec),
            TruthSource::File(path) => load_cube(path),
        }
    }
}

fn check_divisible(dims: Dims, scale: usize) -> Result<()> {
    if scale == 0 || !dims.height.is_multiple_of(scale) || !dims.width.is_multiple_of(scale) {
        return Err(Error::Config {
            path: "scale".into(),
            message: format!("{dims} is not divisible by scale {scale}"),
        });
    }
    Ok(())
}

fn load_cube(path: &Path) -> Result<DataCube> {
    read_msd(BufReader::new(File::open(path)?))
}

fn save_cube(path: &Path, cube: &DataCube) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_msd(cube, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: String,
    pub mode: Mode,
    pub input_snr_db: f64,
    pub noise_sigma: f64,
    pub operator_norm: f64,
    pub lipschitz_g: f64,
    pub step_size: f64,
    pub tau: f64,
    pub iterations: usize,
    pub baseline_snr_db: f64,
    pub recon_snr_db: Option<f64>,
    /// True when `red_penalty` is the symmetric-case formula evaluated for a
    /// denoiser where it is not an exact potential.
    pub surrogate: bool,
    pub r0_iterations: Option<usize>,
    pub r0_relative_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Summary,
    pub convergence: Option<ConvergenceReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub output_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub report: Report,
    pub trace: Vec<IterationRecord>,
}

/// Formats the trace as CSV. Floats use the shortest round-trip form, so
/// the text is a pure function of the values.
pub fn metrics_csv(trace: &[IterationRecord], record_timing: bool) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in trace {
        let elapsed = if record_timing {
            format!("{:e}", r.elapsed_ms)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{},{:e},{}",
            r.k,
            r.residual_norm,
            r.data_fidelity,
            opt(r.red_penalty),
            opt(r.snr_db),
            r.q,
            elapsed
        );
    }
    out
}

/// Runs the whole pipeline and writes recon.msd, baseline.msd, truth.msd,
/// metrics.csv, report.json and config.json into `output_dir`.
///
/// On divergence the artifacts written so far (including the partial
/// metrics) are kept and the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    let put = |name: &str, bytes: &[u8], artifacts: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        artifacts.push(path);
        Ok(())
    };
    put("config.json", config.to_json().as_bytes(), &mut artifacts)?;

    let truth = config.truth()?;
    let model = config.measurement_model(truth.dims())?;
    let clean = model.apply(&truth)?;
    let (y, noise_sigma) = operators::add_awgn(&clean, config.input_snr_db, config.noise_seed)?;
    let s2 = (config.scale * config.scale) as f64;
    let baseline = model.adjoint(&y)?.scaled(s2);
    let mut p = FidelityProblem::new(model, y)?;
    let lipschitz = p.lipschitz_g(config.lipschitz_seed)?;

    for (name, cube) in [("truth.msd", &truth), ("baseline.msd", &baseline)] {
        let path = dir.join(name);
        save_cube(&path, cube)?;
        artifacts.push(path);
    }

    let mut warnings = Vec::new();
    let mut convergence = None;
    let mut r0_info = None;
    let solved = if config.solver.mode == Mode::Gm {
        match diagnostics::audit_gm_run(&config.solver, &p, &config.denoiser, &baseline, Some(&truth)) {
            Ok(audit) => {
                r0_info = Some((audit.r0.iterations, audit.r0.relative_residual));
                convergence = Some(audit.report);
                Ok(audit.output)
            }
            Err(Error::EstimationFailed {
                iterations, residual, ..
            }) => {
                warnings.push(format!(
                    "R0 estimate did not converge ({iterations} iterations, relative residual \
                     {residual:e}); convergence checks skipped"
                ));
                solver::run(&config.solver, &p, &config.denoiser, &baseline, Some(&truth))
            }
            Err(e) => Err(e),
        }
    } else {
        solver::run(&config.solver, &p, &config.denoiser, &baseline, Some(&truth))
    };

    let baseline_snr = snr_db(&truth, &baseline)?;
    let mut summary = Summary {
        status: "ok".into(),
        mode: config.solver.mode,
        input_snr_db: config.input_snr_db,
        noise_sigma,
        operator_norm: lipschitz.sqrt(),
        lipschitz_g: lipschitz,
        step_size: config
            .solver
            .step_size
            .unwrap_or_else(|| solver::default_step_size(lipschitz, config.solver.tau)),
        tau: config.solver.tau,
        iterations: 0,
        baseline_snr_db: baseline_snr,
        recon_snr_db: None,
        surrogate: !config.denoiser.is_linear_symmetric(),
        r0_iterations: r0_info.map(|r| r.0),
        r0_relative_residual: r0_info.map(|r| r.1),
    };

    let output = match solved {
        Ok(o) => o,
        Err(Error::Divergence { iteration, trace }) => {
            summary.status = format!("diverged at iteration {iteration}");
            summary.iterations = trace.len();
            put(
                "metrics.csv",
                metrics_csv(&trace, config.record_timing).as_bytes(),
                &mut artifacts,
            )?;
            let report = Report {
                summary,
                convergence: None,
                warnings,
            };
            put("report.json", report_json(&report).as_bytes(), &mut artifacts)?;
            return Err(Error::Divergence { iteration, trace });
        }
        Err(e) => return Err(e),
    };

    warnings.extend(output.warnings.iter().cloned());
    summary.step_size = output.step_size;
    summary.iterations = output.trace.len();
    summary.recon_snr_db = Some(snr_db(&truth, &output.x)?);

    let path = dir.join("recon.msd");
    save_cube(&path, &output.x)?;
    artifacts.push(path);
    put(
        "metrics.csv",
        metrics_csv(&output.trace, config.record_timing).as_bytes(),
        &mut artifacts,
    )?;
    let report = Report {
        summary,
        convergence,
        warnings,
    };
    put("report.json", report_json(&report).as_bytes(), &mut artifacts)?;

    log::info!(
        "{}: baseline {:.3} dB, reconstruction {:.3} dB after {} iterations",
        dir.display(),
        report.summary.baseline_snr_db,
        report.summary.recon_snr_db.unwrap_or(f64::NAN),
        report.summary.iterations
    );
    Ok(ExperimentResult {
        output_dir: dir,
        artifacts,
        report,
        trace: output.trace,
    })
}

fn report_json(report: &Report) -> String {
    // Non-finite values (an exact reconstruction has infinite SNR) are
    // written as null.
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}
