use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use conebeam::config::Config;
use conebeam::experiments::{sweep, ExperimentParams};
use conebeam::geometry::ScanGeometry;
use conebeam::io::{load_matrix, load_tensor, save_matrix, save_tensor, Tensor};
use conebeam::phantoms::{make_phantom, noisy_projection, PhantomKind, PhantomSpec};
use conebeam::projector::{build_system_matrix, spectral_norm, Mode, SparseSystemMatrix};
use conebeam::solver::{nag_tikhonov, ReconConfig, StopReason};
use conebeam::validation::{run_suite, write_report, Suite};
use conebeam::CtError;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

const EXIT_ERROR: u8 = 1;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// Exact area/volume system matrices for fan-beam and cone-beam CT.
#[derive(Parser)]
#[command(name = "conebeam", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a system matrix and write it as CSM1.
    BuildSm {
        #[arg(long)]
        config: PathBuf,
        /// consistent, line or multiline:K
        #[arg(long, default_value = "consistent")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a phantom as CTT1: checkerboard2d:N[:B], checkerboard3d:N[:B], shepp-logan:N.
    Phantom {
        #[arg(long)]
        spec: PhantomSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-project an image, optionally adding Gaussian noise.
    Project {
        #[arg(long)]
        sm: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tikhonov reconstruction; exits with 2 if the iteration limit is hit first.
    Reconstruct {
        #[arg(long)]
        sm: PathBuf,
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Stop once the squared gradient norm drops below this.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// CSV of objective and squared gradient norm per iteration.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check the weights and operators of a geometry against independent oracles.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// weights2d, weights3d, adjoint or identities
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        /// CSV report (default: stdout).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Error against time for every (mode, lambda) pair.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "consistent,line")]
        modes: Vec<Mode>,
        /// Defaults to the config's lambda.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Defaults to Shepp-Logan in 2D and a checkerboard in 3D at the grid resolution.
        #[arg(long)]
        phantom: Option<PhantomSpec>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grayscale PNG of a 2D tensor or of one slice along the last axis of a 3D one.
    ExportPng {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long, default_value_t = 0)]
        slice: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error[E_THREADS]: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_code(&e));
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(ct) = cause.downcast_ref::<CtError>() {
            return ct.code();
        }
        if cause.is::<std::io::Error>() || cause.is::<image::ImageError>() {
            return "E_IO";
        }
    }
    "E_INVALID_ARGUMENT"
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::BuildSm { config, mode, out } => build_sm(&Config::load(&config)?, mode, &out),
        Command::Phantom { spec, out } => {
            let t = Tensor::new(spec.dims(), make_phantom(&spec)?)?;
            save_tensor(&out, &t)?;
            println!("dims {:?}", t.dims);
            Ok(0)
        }
        Command::Project {
            sm,
            image,
            sigma,
            seed,
            out,
        } => {
            let w = load_matrix(&sm)?;
            let u = load_tensor(&image)?;
            let p = noisy_projection(&w, &u.data, sigma, seed)?;
            let dims = sinogram_dims(&w);
            save_tensor(&out, &Tensor::new(dims.clone(), p)?)?;
            println!("dims {dims:?} sigma {sigma:e} seed {seed}");
            Ok(0)
        }
        Command::Reconstruct {
            sm,
            sino,
            lambda,
            max_iter,
            tol,
            out,
            trace,
        } => {
            let w = load_matrix(&sm)?;
            let p = load_tensor(&sino)?;
            let cfg = ReconConfig {
                lambda,
                max_iter,
                grad_tol_sq: tol,
                normalization: w.normalization,
            };
            let t0 = Instant::now();
            let rec = nag_tikhonov(&w, &p.data, &cfg)?;
            save_tensor(&out, &Tensor::new(image_dims(&w), rec.u.clone())?)?;
            if let Some(path) = trace {
                let mut f = BufWriter::new(
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                );
                rec.write_trace(&mut f)?;
                f.flush()?;
            }
            let last = rec.trace.last().expect("trace holds the initial iterate");
            let converged = rec.stop == StopReason::Converged;
            println!(
                "iterations {} objective {:e} grad_norm_sq {:e} {} in {:.3}s",
                last.iteration,
                last.objective,
                last.grad_norm_sq,
                if converged {
                    "converged"
                } else {
                    "stopped at max_iter"
                },
                t0.elapsed().as_secs_f64()
            );
            Ok(if converged { 0 } else { EXIT_MAX_ITER })
        }
        Command::Validate {
            config,
            suite,
            samples,
            seed,
            report,
        } => {
            let geom = Config::load(&config)?.geometry()?;
            let checks = run_suite(suite, &geom, samples, seed)?;
            match report {
                Some(path) => {
                    let mut f = BufWriter::new(
                        File::create(&path)
                            .with_context(|| format!("creating {}", path.display()))?,
                    );
                    write_report(&mut f, &checks)?;
                    f.flush()?;
                }
                None => write_report(&mut std::io::stdout().lock(), &checks)?,
            }
            let failed = checks.iter().filter(|c| !c.pass()).count();
            let worst = checks
                .iter()
                .map(|c| c.value / c.tolerance)
                .fold(0.0, f64::max);
            eprintln!(
                "{suite}: {} checks, {failed} failed, worst value/tolerance {worst:.3e}",
                checks.len()
            );
            Ok(if failed == 0 { 0 } else { EXIT_VALIDATION })
        }
        Command::Bench {
            config,
            modes,
            lambdas,
            phantom,
            seed,
            out,
        } => bench(
            &Config::load(&config)?,
            &modes,
            lambdas,
            phantom,
            seed,
            &out,
        ),
        Command::ExportPng { tensor, slice, out } => {
            export_png(&load_tensor(&tensor)?, slice, &out)
        }
    }
}

fn build_sm(cfg: &Config, mode: Mode, out: &std::path::Path) -> anyhow::Result<u8> {
    let geom = cfg.geometry()?;
    let t0 = Instant::now();
    let mut w = build_system_matrix(&geom, mode)?;
    let build_secs = t0.elapsed().as_secs_f64();
    w.normalization = spectral_norm(&w, 100, cfg.seed.unwrap_or(0))?;
    save_matrix(out, &w)?;
    println!(
        "rows {} cols {} nnz {} norm {:.6e} build {:.3}s",
        w.n_rows,
        w.n_cols,
        w.nnz(),
        w.normalization,
        build_secs
    );
    Ok(0)
}

fn sinogram_dims(w: &SparseSystemMatrix) -> Vec<usize> {
    match &w.geometry {
        Some(g) if g.is_3d() => vec![g.n_det_y, g.n_det_z(), g.angles.len()],
        Some(g) => vec![g.n_det_y, g.angles.len()],
        None => vec![w.n_rows],
    }
}

fn image_dims(w: &SparseSystemMatrix) -> Vec<usize> {
    match &w.geometry {
        Some(g) if g.is_3d() => vec![g.nx, g.ny, g.nz()],
        Some(g) => vec![g.nx, g.ny],
        None => vec![w.n_cols],
    }
}

fn default_phantom(geom: &ScanGeometry) -> PhantomSpec {
    let kind = if geom.is_3d() {
        PhantomKind::Checkerboard3d
    } else {
        PhantomKind::SheppLogan2d
    };
    PhantomSpec {
        kind,
        resolution: geom.nx,
        blocks: 4,
    }
}

fn bench(
    cfg: &Config,
    modes: &[Mode],
    lambdas: Vec<f64>,
    phantom: Option<PhantomSpec>,
    seed: u64,
    out: &std::path::Path,
) -> anyhow::Result<u8> {
    let geom = cfg.geometry()?;
    let spec = phantom.unwrap_or_else(|| default_phantom(&geom));
    let truth = make_phantom(&spec)?;
    let want: Vec<usize> = if geom.is_3d() {
        vec![geom.nx, geom.ny, geom.nz()]
    } else {
        vec![geom.nx, geom.ny]
    };
    if spec.dims() != want {
        bail!(CtError::DimensionMismatch {
            expected: want.iter().product(),
            got: truth.len()
        });
    }
    let lambdas = if lambdas.is_empty() {
        vec![cfg.lambda_or_default()]
    } else {
        lambdas
    };
    let params = ExperimentParams {
        sigma: cfg.sigma.unwrap_or(1e-4),
        max_iter: cfg.max_iter_or_default(),
        grad_tol_sq: cfg.tol_or_default(),
        seed,
        ..ExperimentParams::checkerboard_2d()
    };
    let runs = sweep(&geom, &truth, modes, &lambdas, &params)?;
    let mut f =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(
        f,
        "mode,lambda,mse,build_secs,solve_secs,total_secs,iterations,converged"
    )?;
    for r in &runs {
        writeln!(
            f,
            "{},{:e},{:e},{:.6},{:.6},{:.6},{},{}",
            r.mode,
            r.lambda,
            r.mse,
            r.build_secs,
            r.solve_secs,
            r.total_secs(),
            r.iterations,
            r.converged
        )?;
        println!(
            "{:<14} lambda {:<8e} mse {:.6e} time {:.3}s",
            r.mode.to_string(),
            r.lambda,
            r.mse,
            r.total_secs()
        );
    }
    f.flush()?;
    Ok(0)
}

fn export_png(t: &Tensor, slice: usize, out: &std::path::Path) -> anyhow::Result<u8> {
    let (w, h, depth) = match t.dims[..] {
        [w, h] => (w, h, 1),
        [w, h, d] => (w, h, d),
        _ => bail!(CtError::InvalidSpec(format!(
            "need a 2D or 3D tensor, got dims {:?}",
            t.dims
        ))),
    };
    if slice >= depth {
        bail!(CtError::InvalidSpec(format!(
            "slice {slice} out of range 0..{depth}"
        )));
    }
    let plane = &t.data[slice * w * h..(slice + 1) * w * h];
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    // Row index grows with y, so the last row goes to the top of the image.
    let pixels: Vec<u8> = (0..h)
        .rev()
        .flat_map(|j| {
            plane[j * w..(j + 1) * w]
                .iter()
                .map(|&v| ((v - lo) * scale).round() as u8)
        })
        .collect();
    let img =
        image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches image size");
    img.save_with_format(out, image::ImageFormat::Png)?;
    println!("mapping [{lo:e}, {hi:e}] -> [0, 255]");
    Ok(0)
}
