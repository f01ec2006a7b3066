//! Reconstruction experiments: checkerboard resolution sweeps and the
//! time/accuracy sweep over multi-line baselines.

use crate::error::Result;
use crate::geometry::{AxialGeometry, ScanGeometry};
use crate::phantoms::{checkerboard, noisy_projection, shepp_logan};
use crate::projector::{build_system_matrix, spectral_norm, Mode};
use crate::solver::{nag_tikhonov, ReconConfig, StopReason};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentParams {
    pub s: f64,
    pub d: f64,
    pub dy: f64,
    pub n_det_y: usize,
    pub n_angles: usize,
    /// Side length of the (square or cubic) reconstruction region.
    pub extent: f64,
    /// `(dz, n_det_z)` for cone-beam runs.
    pub axial: Option<(f64, usize)>,
    pub sigma: f64,
    pub lambda: f64,
    pub max_iter: usize,
    pub grad_tol_sq: f64,
    pub seed: u64,
}

impl ExperimentParams {
    /// Fan-beam checkerboard protocol: 60 angles, 60 cells of 0.75, s = d = 250.
    pub fn checkerboard_2d() -> Self {
        ExperimentParams {
            s: 250.0,
            d: 250.0,
            dy: 0.75,
            n_det_y: 60,
            n_angles: 60,
            extent: 16.0,
            axial: None,
            sigma: 1e-4,
            lambda: 1e-4,
            max_iter: 1000,
            grad_tol_sq: 1e-9,
            seed: 2024,
        }
    }

    /// Cone-beam checkerboard protocol: 20 detector rows of 1.75, 500 iterations.
    pub fn checkerboard_3d() -> Self {
        ExperimentParams {
            axial: Some((1.75, 20)),
            max_iter: 500,
            ..Self::checkerboard_2d()
        }
    }

    pub fn geometry(&self, n: usize) -> Result<ScanGeometry> {
        let a = self.extent / n as f64;
        let angles = (0..self.n_angles)
            .map(|k| k as f64 * std::f64::consts::TAU / self.n_angles as f64)
            .collect();
        let g = ScanGeometry::new_2d(self.s, self.d, self.dy, self.n_det_y, a, a, n, n, angles)?;
        match self.axial {
            Some((dz, n_det_z)) => g.with_axial(AxialGeometry {
                dz,
                n_det_z,
                c: a,
                nz: n,
            }),
            None => Ok(g),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    pub lambda: f64,
    pub mse: f64,
    pub build_secs: f64,
    pub solve_secs: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RunResult {
    pub fn total_secs(&self) -> f64 {
        self.build_secs + self.solve_secs
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Reconstruct `truth` from data `p` with a matrix of the given mode.
pub fn reconstruct(
    geom: &ScanGeometry,
    mode: Mode,
    p: &[f64],
    truth: &[f64],
    params: &ExperimentParams,
    lambda: f64,
) -> Result<RunResult> {
    let t0 = Instant::now();
    let w = build_system_matrix(geom, mode)?;
    let build_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let norm = spectral_norm(&w, 100, params.seed)?;
    let cfg = ReconConfig {
        lambda,
        max_iter: params.max_iter,
        grad_tol_sq: params.grad_tol_sq,
        normalization: norm,
    };
    let rec = nag_tikhonov(&w, p, &cfg)?;
    let solve_secs = t1.elapsed().as_secs_f64();
    Ok(RunResult {
        mode,
        lambda,
        mse: mse(&rec.u, truth),
        build_secs,
        solve_secs,
        iterations: rec.trace.len() - 1,
        converged: rec.stop == StopReason::Converged,
    })
}

/// Checkerboard (4 blocks per axis) at resolution `n`: data from the
/// consistent matrix plus noise, reconstructed with each mode.
pub fn checkerboard_run(
    n: usize,
    modes: &[Mode],
    params: &ExperimentParams,
) -> Result<Vec<RunResult>> {
    let geom = params.geometry(n)?;
    let truth = checkerboard(n, 4, if geom.is_3d() { 3 } else { 2 })?;
    let w = build_system_matrix(&geom, Mode::Consistent)?;
    let p = noisy_projection(&w, &truth, params.sigma, params.seed)?;
    drop(w);
    modes
        .iter()
        .map(|&m| reconstruct(&geom, m, &p, &truth, params, params.lambda))
        .collect()
}

/// Time/accuracy sweep on a Shepp-Logan phantom of resolution `n` for every
/// `(mode, lambda)` pair.
pub fn bench_sweep(
    n: usize,
    modes: &[Mode],
    lambdas: &[f64],
    params: &ExperimentParams,
) -> Result<Vec<RunResult>> {
    sweep(
        &params.geometry(n)?,
        &shepp_logan(n)?,
        modes,
        lambdas,
        params,
    )
}

/// Sweep over `(mode, lambda)` for an arbitrary geometry and phantom. Only the
/// noise level, solver limits and seed of `params` are used.
pub fn sweep(
    geom: &ScanGeometry,
    truth: &[f64],
    modes: &[Mode],
    lambdas: &[f64],
    params: &ExperimentParams,
) -> Result<Vec<RunResult>> {
    let w = build_system_matrix(geom, Mode::Consistent)?;
    let p = noisy_projection(&w, truth, params.sigma, params.seed)?;
    drop(w);
    let mut out = Vec::new();
    for &lambda in lambdas {
        for &m in modes {
            out.push(reconstruct(geom, m, &p, truth, params, lambda)?);
        }
    }
    Ok(out)
}

/// Points of `runs` with the given lambda that beat `reference` in both time and error.
pub fn dominating<'a>(runs: &'a [RunResult], reference: &RunResult) -> Vec<&'a RunResult> {
    runs.iter()
        .filter(|r| r.lambda == reference.lambda && r.mode != reference.mode)
        .filter(|r| r.total_secs() < reference.total_secs() && r.mse < reference.mse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_geometry_shapes() {
        let p = ExperimentParams::checkerboard_2d();
        let g = p.geometry(32).unwrap();
        assert_eq!((g.nx, g.ny, g.n_measurements()), (32, 32, 3600));
        assert!((g.a - 0.5).abs() < 1e-15);
        let g3 = ExperimentParams::checkerboard_3d().geometry(16).unwrap();
        assert_eq!(g3.n_voxels(), 4096);
        assert_eq!(g3.n_measurements(), 60 * 1200);
    }

    #[test]
    fn small_checkerboard_prefers_consistent() {
        let p = ExperimentParams {
            n_angles: 20,
            ..ExperimentParams::checkerboard_2d()
        };
        let r = checkerboard_run(8, &[Mode::Consistent, Mode::Line], &p).unwrap();
        assert!(r[0].mse < r[1].mse, "{r:?}");
    }

    #[test]
    fn dominance_filter() {
        let mk = |mode, mse, t| RunResult {
            mode,
            lambda: 1.0,
            mse,
            build_secs: t,
            solve_secs: 0.0,
            iterations: 1,
            converged: true,
        };
        let reference = mk(Mode::Consistent, 0.1, 1.0);
        let runs = vec![
            reference.clone(),
            mk(Mode::Line, 0.2, 0.5),
            mk(Mode::Multiline(4), 0.05, 0.5),
            mk(Mode::Multiline(8), 0.05, 2.0),
        ];
        let d = dominating(&runs, &reference);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].mode, Mode::Multiline(4));
    }
}
