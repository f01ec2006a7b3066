//! Brute-force ground truth used to check the closed-form weights.
//!
//! Nothing in here shares code with the trigonometric path: areas come from
//! polygon clipping, volumes from sampling or per-line exact intervals.

use crate::error::{CtError, Result};
use crate::geometry::PixelBox;
use crate::projector::{LinearOperator, SparseSystemMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Source pose and detector distance for one projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub s: f64,
    pub d: f64,
    pub phi: f64,
}

/// A detector cell in physical detector coordinates: `[u0, u1]` across and
/// `[v0, v1]` along z. Infinite bounds are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorCell {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl DetectorCell {
    pub fn strip(u0: f64, u1: f64) -> Self {
        DetectorCell {
            u0,
            u1,
            v0: f64::NEG_INFINITY,
            v1: f64::INFINITY,
        }
    }
    pub fn whole() -> Self {
        Self::strip(f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Axis-aligned voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cuboid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub z0: f64,
    pub z1: f64,
}

impl Cuboid {
    pub fn volume(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0) * (self.z1 - self.z0)
    }
}

/// Half-plane `ax + by + c >= 0`.
#[derive(Clone, Copy, Debug)]
struct HalfPlane {
    a: f64,
    b: f64,
    c: f64,
}

impl HalfPlane {
    fn eval(&self, p: (f64, f64)) -> f64 {
        self.a * p.0 + self.b * p.1 + self.c
    }
}

// Projected detector coordinate u = (s+d)(y cos - x sin) / t, t = s - x cos - y sin.
// With t > 0, u >= u0 becomes (s+d)(y cos - x sin) - u0 t >= 0.
fn u_halfplane(pose: &Pose, u0: f64, upper: bool) -> HalfPlane {
    let (sp, cp) = pose.phi.sin_cos();
    let k = pose.s + pose.d;
    let h = HalfPlane {
        a: -k * sp + u0 * cp,
        b: k * cp + u0 * sp,
        c: -u0 * pose.s,
    };
    if upper {
        HalfPlane {
            a: -h.a,
            b: -h.b,
            c: -h.c,
        }
    } else {
        h
    }
}

fn clip(poly: &[(f64, f64)], h: HalfPlane) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let fp = h.eval(p);
        let fq = h.eval(q);
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp >= 0.0) != (fq >= 0.0) {
            let t = fp / (fp - fq);
            out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    out
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p.0 * q.1 - q.0 * p.1;
    }
    0.5 * acc.abs()
}

/// Fraction of the pixel whose source rays land in detector strip `[u0, u1]`.
pub fn clip_area_2d(pixel: &PixelBox, pose: &Pose, u0: f64, u1: f64) -> f64 {
    let mut poly = vec![
        (pixel.x0, pixel.y0),
        (pixel.x1, pixel.y0),
        (pixel.x1, pixel.y1),
        (pixel.x0, pixel.y1),
    ];
    if u0.is_finite() {
        poly = clip(&poly, u_halfplane(pose, u0, false));
    }
    if u1.is_finite() && poly.len() >= 3 {
        poly = clip(&poly, u_halfplane(pose, u1, true));
    }
    if poly.len() < 3 {
        return 0.0;
    }
    shoelace(&poly) / (pixel.width() * pixel.height())
}

/// Detector coordinates `(u, v)` of the source ray through a point.
pub fn project_point(pose: &Pose, x: f64, y: f64, z: f64) -> (f64, f64) {
    let (sp, cp) = pose.phi.sin_cos();
    let t = pose.s - x * cp - y * sp;
    let k = (pose.s + pose.d) / t;
    (k * (y * cp - x * sp), k * z)
}

fn inside(cell: &DetectorCell, uv: (f64, f64)) -> bool {
    uv.0 >= cell.u0 && uv.0 < cell.u1 && uv.1 >= cell.v0 && uv.1 < cell.v1
}

const MC_SHARDS: u64 = 16;

/// Monte Carlo fraction of the voxel seen by `cell`, with its binomial
/// standard error. Deterministic for a given seed.
pub fn mc_volume_3d(
    vox: &Cuboid,
    pose: &Pose,
    cell: &DetectorCell,
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    let per = (n_samples as u64).div_ceil(MC_SHARDS);
    let hits: u64 = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let mut h = 0u64;
            for _ in 0..per {
                let x = vox.x0 + rng.gen::<f64>() * (vox.x1 - vox.x0);
                let y = vox.y0 + rng.gen::<f64>() * (vox.y1 - vox.y0);
                let z = vox.z0 + rng.gen::<f64>() * (vox.z1 - vox.z0);
                if inside(cell, project_point(pose, x, y, z)) {
                    h += 1;
                }
            }
            h
        })
        .sum();
    let n = (per * MC_SHARDS) as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Monte Carlo area fraction in 2D; used to cross-check [`clip_area_2d`].
pub fn mc_area_2d(
    pixel: &PixelBox,
    pose: &Pose,
    u0: f64,
    u1: f64,
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    let vox = Cuboid {
        x0: pixel.x0,
        x1: pixel.x1,
        y0: pixel.y0,
        y1: pixel.y1,
        z0: 0.0,
        z1: 0.0,
    };
    mc_volume_3d(&vox, pose, &DetectorCell::strip(u0, u1), n_samples, seed)
}

/// Monte Carlo fractions of a voxel landing in each cell of a regular
/// detector grid with pitches `(du, dv)`; cell `(iu, iv)` spans
/// `[iu du, (iu + 1) du) x [iv dv, (iv + 1) dv)`. Returns `(iu, iv, fraction)`
/// sorted by cell, together with the sample count.
pub fn mc_cell_histogram(
    vox: &Cuboid,
    pose: &Pose,
    du: f64,
    dv: f64,
    n_samples: usize,
    seed: u64,
) -> (Vec<(i64, i64, f64)>, usize) {
    let per = (n_samples as u64).div_ceil(MC_SHARDS);
    let mut all: Vec<(i64, i64)> = (0..MC_SHARDS)
        .into_par_iter()
        .flat_map_iter(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let mut v = Vec::with_capacity(per as usize);
            for _ in 0..per {
                let x = vox.x0 + rng.gen::<f64>() * (vox.x1 - vox.x0);
                let y = vox.y0 + rng.gen::<f64>() * (vox.y1 - vox.y0);
                let z = vox.z0 + rng.gen::<f64>() * (vox.z1 - vox.z0);
                let (u, w) = project_point(pose, x, y, z);
                v.push(((u / du).floor() as i64, (w / dv).floor() as i64));
            }
            v
        })
        .collect();
    all.sort_unstable();
    let n = all.len();
    let mut out: Vec<(i64, i64, f64)> = Vec::new();
    for c in all {
        match out.last_mut() {
            Some(last) if (last.0, last.1) == c => last.2 += 1.0,
            _ => out.push((c.0, c.1, 1.0)),
        }
    }
    for e in &mut out {
        e.2 /= n as f64;
    }
    (out, n)
}

// Intersect [lo, hi] with { y : alpha y + beta >= 0 }.
fn restrict(lo: &mut f64, hi: &mut f64, alpha: f64, beta: f64) {
    if alpha > 0.0 {
        *lo = lo.max(-beta / alpha);
    } else if alpha < 0.0 {
        *hi = hi.min(-beta / alpha);
    } else if beta < 0.0 {
        *hi = *lo;
    }
}

/// Volume fraction by exact integration along `n x n` lines placed at
/// midpoints of a grid across the voxel. The lines run along whichever of x
/// and y is closer to perpendicular to the source direction.
pub fn multiline_volume_3d(vox: &Cuboid, pose: &Pose, cell: &DetectorCell, n: usize) -> f64 {
    multiline_volume_3d_grid(vox, pose, cell, n, n)
}

/// As [`multiline_volume_3d`] with `nh` lines across the horizontal and `nz`
/// across z. Row boundaries are nearly parallel to the lines when the source
/// is close to a grid axis, so a finer `nz` helps there.
pub fn multiline_volume_3d_grid(
    vox: &Cuboid,
    pose: &Pose,
    cell: &DetectorCell,
    nh: usize,
    nz: usize,
) -> f64 {
    let (sp, cp) = pose.phi.sin_cos();
    if sp.abs() > cp.abs() {
        // Rotate the whole setup by -pi/2: (x, y) -> (y, -x).
        let rot = Cuboid {
            x0: vox.y0,
            x1: vox.y1,
            y0: -vox.x1,
            y1: -vox.x0,
            z0: vox.z0,
            z1: vox.z1,
        };
        return multiline_volume_3d_grid(
            &rot,
            &Pose {
                phi: pose.phi - std::f64::consts::FRAC_PI_2,
                ..*pose
            },
            cell,
            nh,
            nz,
        );
    }
    let k = pose.s + pose.d;
    let hx = (vox.x1 - vox.x0) / nh as f64;
    let hz = (vox.z1 - vox.z0) / nz as f64;
    let total: f64 = (0..nh)
        .into_par_iter()
        .map(|i| {
            let x = vox.x0 + (i as f64 + 0.5) * hx;
            let mut acc = 0.0;
            for j in 0..nz {
                let z = vox.z0 + (j as f64 + 0.5) * hz;
                let (mut lo, mut hi) = (vox.y0, vox.y1);
                // t(y) = (s - x cp) - y sp; u t = k (y cp - x sp); v t = k z.
                let t0 = pose.s - x * cp;
                if cell.u0.is_finite() {
                    restrict(
                        &mut lo,
                        &mut hi,
                        k * cp + cell.u0 * sp,
                        -k * x * sp - cell.u0 * t0,
                    );
                }
                if cell.u1.is_finite() {
                    restrict(
                        &mut lo,
                        &mut hi,
                        -(k * cp + cell.u1 * sp),
                        k * x * sp + cell.u1 * t0,
                    );
                }
                if cell.v0.is_finite() {
                    restrict(&mut lo, &mut hi, cell.v0 * sp, k * z - cell.v0 * t0);
                }
                if cell.v1.is_finite() {
                    restrict(&mut lo, &mut hi, -cell.v1 * sp, cell.v1 * t0 - k * z);
                }
                acc += (hi - lo).max(0.0);
            }
            acc
        })
        .sum();
    total / (nh * nz) as f64 / (vox.y1 - vox.y0)
}

/// Largest size accepted by the dense references.
pub const DENSE_LIMIT: usize = 10_000;

/// Explicit dense copy of a sparse matrix.
pub fn dense_reference(w: &SparseSystemMatrix) -> Result<DMatrix<f64>> {
    if w.n_rows > DENSE_LIMIT || w.n_cols > DENSE_LIMIT {
        return Err(CtError::TooLarge {
            rows: w.n_rows,
            cols: w.n_cols,
        });
    }
    let mut m = DMatrix::zeros(w.n_rows, w.n_cols);
    for r in 0..w.n_rows {
        let (c, v) = w.row(r);
        for (&j, &x) in c.iter().zip(v) {
            m[(r, j as usize)] += x;
        }
    }
    Ok(m)
}

/// Sparse copy of the nonzero entries of a dense matrix.
pub fn sparsify(m: &DMatrix<f64>) -> SparseSystemMatrix {
    let mut t = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if m[(r, c)] != 0.0 {
                t.push((r, c, m[(r, c)]));
            }
        }
    }
    SparseSystemMatrix::from_triplets(m.nrows(), m.ncols(), t).expect("indices are in range")
}

/// Largest singular value from a full SVD.
pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Solution of `(A^T A + lambda I) u = A^T p` by a dense Cholesky (LU fallback) factorization.
pub fn normal_equations_solve(a: &DMatrix<f64>, p: &[f64], lambda: f64) -> Option<DVector<f64>> {
    let mut n = a.transpose() * a;
    for i in 0..n.nrows() {
        n[(i, i)] += lambda;
    }
    let rhs = a.transpose() * DVector::from_column_slice(p);
    match n.clone().cholesky() {
        Some(ch) => Some(ch.solve(&rhs)),
        None => n.lu().solve(&rhs),
    }
}

impl LinearOperator for DMatrix<f64> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }
    fn n_cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let r = self * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    }
    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        let r = self.tr_mul(&DVector::from_column_slice(y));
        x.copy_from_slice(r.as_slice());
    }
}
