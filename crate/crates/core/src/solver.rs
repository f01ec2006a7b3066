//! Tikhonov-regularized least squares by Nesterov's accelerated gradient.
//!
//! The operator is scaled by `1 / normalization` (its spectral norm) and so is
//! the data, so the iterate stays in the units of the image:
//! `F(u) = 1/2 ||A u - q||^2 + lambda/2 ||u||^2` with `A = W / sigma`, `q = p / sigma`.
//! The step is `1 / (1 + lambda)` and the momentum follows the usual
//! `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2` sequence, starting from `u_0 = 0`.

use crate::error::{CtError, Result};
use crate::projector::LinearOperator;
use std::io::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub grad_tol_sq: f64,
    pub normalization: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda: 1e-4,
            max_iter: 1000,
            grad_tol_sq: 1e-9,
            normalization: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub u: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

impl Reconstruction {
    pub fn write_trace<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,grad_norm_sq")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e}", r.iteration, r.objective, r.grad_norm_sq)?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn nag_tikhonov(
    w: &dyn LinearOperator,
    p: &[f64],
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    let (m, n) = (w.n_rows(), w.n_cols());
    if p.len() != m {
        return Err(CtError::DimensionMismatch {
            expected: m,
            got: p.len(),
        });
    }
    if !(cfg.lambda >= 0.0 && cfg.max_iter >= 1 && cfg.grad_tol_sq > 0.0 && cfg.normalization > 0.0)
    {
        return Err(CtError::InvalidConfig(
            "need lambda >= 0, max_iter >= 1, tol > 0, normalization > 0".into(),
        ));
    }
    let inv = 1.0 / cfg.normalization;
    let lam = cfg.lambda;
    let step = 1.0 / (1.0 + lam);
    let q: Vec<f64> = p.iter().map(|v| v * inv).collect();

    // State at x_k: x, A x - q (residual) and A^T (A x - q) (data gradient).
    let mut x = vec![0.0; n];
    let mut res: Vec<f64> = q.iter().map(|v| -v).collect();
    let mut g = vec![0.0; n];
    w.apply_t(&res, &mut g);
    g.iter_mut().for_each(|v| *v *= inv);
    let (mut x_prev, mut g_prev) = (x.clone(), g.clone());
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut ax = vec![0.0; m];
    let mut y = vec![0.0; n];

    for k in 0..=cfg.max_iter {
        let grad_sq: f64 = g
            .iter()
            .zip(&x)
            .map(|(gi, xi)| (gi + lam * xi).powi(2))
            .sum();
        let objective = 0.5 * dot(&res, &res) + 0.5 * lam * dot(&x, &x);
        if !objective.is_finite() || !grad_sq.is_finite() {
            return Err(CtError::NonFinite(k));
        }
        trace.push(TraceRow {
            iteration: k,
            objective,
            grad_norm_sq: grad_sq,
        });
        if grad_sq < cfg.grad_tol_sq {
            return Ok(Reconstruction {
                u: x,
                trace,
                stop: StopReason::Converged,
            });
        }
        if k == cfg.max_iter {
            break;
        }
        // The data gradient is affine in x, so its value at the extrapolated
        // point is the same combination of the stored gradients.
        let beta = if k == 0 {
            0.0
        } else {
            (t - 1.0) / (0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()))
        };
        if k > 0 {
            t = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        }
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
            let gy = g[i] + beta * (g[i] - g_prev[i]) + lam * y[i];
            x_prev[i] = x[i];
            x[i] = y[i] - step * gy;
        }
        std::mem::swap(&mut g, &mut g_prev);
        w.apply(&x, &mut ax);
        for i in 0..m {
            res[i] = ax[i] * inv - q[i];
        }
        w.apply_t(&res, &mut g);
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(Reconstruction {
        u: x,
        trace,
        stop: StopReason::MaxIter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::normal_equations_solve;
    use crate::projector::spectral_norm;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(lambda: f64, sigma: f64) -> ReconConfig {
        ReconConfig {
            lambda,
            max_iter: 5000,
            grad_tol_sq: 1e-24,
            normalization: sigma,
        }
    }

    #[test]
    fn identity_gives_shrunk_data() {
        let a = DMatrix::<f64>::identity(5, 5);
        let p = [1.0, -2.0, 0.5, 3.0, 0.0];
        let r = nag_tikhonov(&a, &p, &cfg(0.1, 1.0)).unwrap();
        assert_eq!(r.stop, StopReason::Converged);
        for (u, v) in r.u.iter().zip(p) {
            assert!((u - v / 1.1).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let a = DMatrix::<f64>::from_fn(4, 3, |i, j| (i + 2 * j) as f64);
        let r = nag_tikhonov(&a, &[0.0; 4], &ReconConfig::default()).unwrap();
        assert!(r.u.iter().all(|&v| v == 0.0));
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::<f64>::from_fn(30, 20, |_, _| rng.gen::<f64>() - 0.5);
        let p: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let sigma = spectral_norm(&a, 200, 1).unwrap();
        let r = nag_tikhonov(&a, &p, &cfg(1e-2, sigma)).unwrap();
        // Same problem in unnormalized units: (A^T A + lambda sigma^2 I) u = A^T p.
        let exact = normal_equations_solve(&a, &p, 1e-2 * sigma * sigma).unwrap();
        let err =
            r.u.iter()
                .zip(exact.iter())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
        assert!(err <= 1e-6 * exact.norm(), "{err}");
    }

    #[test]
    fn objective_decreases_overall_and_trace_is_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::<f64>::from_fn(25, 25, |_, _| rng.gen::<f64>());
        let p: Vec<f64> = (0..25).map(|_| rng.gen()).collect();
        let sigma = spectral_norm(&a, 100, 1).unwrap();
        let r = nag_tikhonov(
            &a,
            &p,
            &ReconConfig {
                max_iter: 50,
                normalization: sigma,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.stop, StopReason::MaxIter);
        assert_eq!(r.trace.len(), 51);
        assert!(r.trace.last().unwrap().objective <= r.trace[0].objective);
        let mut out = Vec::new();
        r.write_trace(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 52);
        assert!(text.starts_with("iteration,objective,grad_norm_sq\n0,"));
    }

    #[test]
    fn larger_lambda_gives_smaller_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::<f64>::from_fn(20, 15, |_, _| rng.gen::<f64>() - 0.3);
        let p: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let sigma = spectral_norm(&a, 200, 2).unwrap();
        let norms: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|&l| {
                nag_tikhonov(&a, &p, &cfg(l, sigma))
                    .unwrap()
                    .u
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[0] >= w[1] - 1e-8), "{norms:?}");
    }

    #[test]
    fn bad_inputs() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            nag_tikhonov(&a, &[1.0], &ReconConfig::default()),
            Err(CtError::DimensionMismatch { .. })
        ));
        assert!(nag_tikhonov(
            &a,
            &[1.0, 1.0],
            &ReconConfig {
                max_iter: 0,
                ..Default::default()
            }
        )
        .is_err());
        let r = nag_tikhonov(&a, &[f64::NAN, 1.0], &ReconConfig::default());
        assert_eq!(r.unwrap_err(), CtError::NonFinite(0));
        // A badly underestimated norm makes the iteration blow up.
        let big = DMatrix::<f64>::identity(2, 2) * 1e3;
        let r = nag_tikhonov(
            &big,
            &[1.0, 1.0],
            &ReconConfig {
                max_iter: 100000,
                normalization: 1.0,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(CtError::NonFinite(_))));
    }
}
