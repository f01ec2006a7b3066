//! System matrix assembly and application.
//!
//! Rows are ordered angle-major, then by detector raster (`iy + n_det_y * iz`);
//! columns follow the flat voxel order (x fastest). Assembly runs one task per
//! gantry angle and concatenates the blocks in angle order, so the result does
//! not depend on the number of threads.

use crate::baseline::{area_equivalent_scale, multiline_weights, Grid};
use crate::error::{CtError, Result};
use crate::geometry::ScanGeometry;
use crate::weights2d::pixel_area_factors;
use crate::weights3d::{validate_z_restriction, voxel_volume_factors_into, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// How the matrix entries are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Exact area (2D) or volume (3D) fractions.
    Consistent,
    /// One ray through each detector cell centre.
    Line,
    /// Average of `K` rays per detector cell (`K x K` in 3D).
    Multiline(usize),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Consistent => write!(f, "consistent"),
            Mode::Line => write!(f, "line"),
            Mode::Multiline(k) => write!(f, "multiline:{k}"),
        }
    }
}

impl FromStr for Mode {
    type Err = CtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(Mode::Consistent),
            "line" => Ok(Mode::Line),
            _ => match s.strip_prefix("multiline:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Mode::Multiline(k)),
                _ => Err(CtError::InvalidConfig(format!("unknown mode '{s}'"))),
            },
        }
    }
}

/// Anything that can apply `A` and `A^T`.
pub trait LinearOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = A^T y`
    fn apply_t(&self, y: &[f64], x: &mut [f64]);
}

/// Compressed-row system matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystemMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
    pub geometry: Option<ScanGeometry>,
    pub mode: Option<Mode>,
    /// Spectral norm used by the solver; 1 until estimated.
    pub normalization: f64,
}

// Blocks of rows reduced in a fixed order by the adjoint.
const ADJOINT_BLOCKS: usize = 16;
// Refuse assemblies whose estimated storage exceeds this many bytes.
const MEMORY_LIMIT: f64 = 3.0e9;

impl SparseSystemMatrix {
    /// Build from triplets; duplicate `(row, col)` pairs are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut t: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = t.iter().find(|e| e.0 >= n_rows || e.1 >= n_cols) {
            return Err(CtError::DimensionMismatch {
                expected: n_rows.max(n_cols),
                got: r.max(c),
            });
        }
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c as u32);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseSystemMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
            geometry: None,
            mode: None,
            normalization: 1.0,
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// Stable 64-bit FNV-1a hash of the geometry description.
    pub fn geometry_hash(&self) -> u64 {
        self.geometry.as_ref().map_or(0, geometry_hash)
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_cols, u.len())?;
        let mut p = vec![0.0; self.n_rows];
        self.apply(u, &mut p);
        Ok(p)
    }

    pub fn adjoint(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_rows, p.len())?;
        let mut u = vec![0.0; self.n_cols];
        self.apply_t(p, &mut u);
        Ok(u)
    }
}

impl LinearOperator for SparseSystemMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }
    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .with_min_len(256)
            .enumerate()
            .for_each(|(r, yr)| {
                let (c, v) = self.row(r);
                *yr = c.iter().zip(v).map(|(&j, &w)| w * x[j as usize]).sum();
            });
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        let per = self.n_rows.div_ceil(ADJOINT_BLOCKS).max(1);
        let parts: Vec<Vec<f64>> = (0..ADJOINT_BLOCKS)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; self.n_cols];
                let rows = (b * per).min(self.n_rows)..((b + 1) * per).min(self.n_rows);
                for (r, &yr) in rows.clone().zip(&y[rows]) {
                    if yr == 0.0 {
                        continue;
                    }
                    let (c, v) = self.row(r);
                    for (&j, &w) in c.iter().zip(v) {
                        acc[j as usize] += w * yr;
                    }
                }
                acc
            })
            .collect();
        x.iter_mut().for_each(|v| *v = 0.0);
        for part in parts {
            for (xi, pi) in x.iter_mut().zip(part) {
                *xi += pi;
            }
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CtError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn geometry_hash(g: &ScanGeometry) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in crate::io::geometry_to_text(g).bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One angle's rows in compressed form (row offsets relative to the block).
struct Block {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

/// Rough number of nonzeros of a consistent or line assembly.
pub fn estimate_nnz(geom: &ScanGeometry, mode: Mode) -> f64 {
    let mag = (geom.s + geom.d) / geom.s;
    let foot_y = geom.a.hypot(geom.b) * mag / geom.dy + 1.0;
    let foot_z = geom
        .axial
        .as_ref()
        .map_or(1.0, |ax| ax.c * mag / ax.dz + 1.0);
    match mode {
        Mode::Consistent => geom.angles.len() as f64 * geom.n_voxels() as f64 * foot_y * foot_z,
        Mode::Line | Mode::Multiline(_) => {
            let (x0, x1) = geom.grid_extent_x();
            let (y0, y1) = geom.grid_extent_y();
            let (z0, z1) = geom.grid_extent_z();
            let span = (x1 - x0) / geom.a
                + (y1 - y0) / geom.b
                + geom.axial.as_ref().map_or(0.0, |ax| (z1 - z0) / ax.c);
            let k = if let Mode::Multiline(k) = mode {
                (k as f64).min(span)
            } else {
                1.0
            };
            geom.n_measurements() as f64 * span * k.max(1.0)
        }
    }
}

fn angle_block(geom: &ScanGeometry, mode: Mode, phi: f64, grid: &Grid) -> Result<Block> {
    let n_det = geom.n_detectors();
    match mode {
        Mode::Consistent => {
            let mut entries: Vec<(u32, u32, f64)> = Vec::new();
            let mut buf = Vec::new();
            let mut ws = Workspace::default();
            for j in 0..geom.n_voxels() {
                let n = geom.voxel_index(j);
                if geom.is_3d() {
                    voxel_volume_factors_into(n, phi, geom, &mut buf, &mut ws)?;
                } else {
                    buf = pixel_area_factors(n, phi, geom)?;
                }
                for &(m, w) in &buf {
                    if let Some(r) = geom.detector_raster(m) {
                        entries.push((r as u32, j as u32, w));
                    }
                }
            }
            // Counting sort by row keeps each row's columns in voxel order.
            let mut row_ptr = vec![0usize; n_det + 1];
            for e in &entries {
                row_ptr[e.0 as usize + 1] += 1;
            }
            for r in 0..n_det {
                row_ptr[r + 1] += row_ptr[r];
            }
            let mut fill = row_ptr.clone();
            let mut cols = vec![0u32; entries.len()];
            let mut vals = vec![0.0; entries.len()];
            for (r, c, w) in entries {
                let at = &mut fill[r as usize];
                cols[*at] = c;
                vals[*at] = w;
                *at += 1;
            }
            Ok(Block {
                row_ptr,
                cols,
                vals,
            })
        }
        Mode::Line | Mode::Multiline(_) => {
            let k = if let Mode::Multiline(k) = mode { k } else { 1 };
            let scale = area_equivalent_scale(geom);
            let (ylo, _) = geom.edge_range_y();
            let (zlo, _) = geom.edge_range_z();
            let mut row_ptr = Vec::with_capacity(n_det + 1);
            row_ptr.push(0);
            let (mut cols, mut vals) = (Vec::new(), Vec::new());
            let mut buf = Vec::new();
            for r in 0..n_det {
                let m = crate::geometry::DetectorIndex {
                    my: ylo + (r % geom.n_det_y) as i64,
                    mz: zlo + (r / geom.n_det_y) as i64,
                };
                multiline_weights(m, k, phi, grid, geom, &mut buf);
                for &(j, w) in &buf {
                    cols.push(j as u32);
                    vals.push(w * scale);
                }
                row_ptr.push(cols.len());
            }
            Ok(Block {
                row_ptr,
                cols,
                vals,
            })
        }
    }
}

fn check_buildable(geom: &ScanGeometry, mode: Mode) -> Result<()> {
    geom.validate()?;
    if geom.n_voxels() > u32::MAX as usize {
        return Err(CtError::InvalidGeometry(
            "too many voxels for 32-bit column indices".into(),
        ));
    }
    let nnz = estimate_nnz(geom, mode);
    if nnz * 12.0 > MEMORY_LIMIT {
        return Err(CtError::OutOfMemory {
            rows: geom.n_measurements(),
            nnz_estimate: nnz as usize,
        });
    }
    if geom.is_3d() && mode == Mode::Consistent {
        validate_z_restriction(geom)?;
    }
    Ok(())
}

/// Assemble the system matrix of `geom`.
pub fn build_system_matrix(geom: &ScanGeometry, mode: Mode) -> Result<SparseSystemMatrix> {
    check_buildable(geom, mode)?;
    let grid = Grid::from_geometry(geom);
    let blocks: Vec<Block> = geom
        .angles
        .par_iter()
        .map(|&phi| angle_block(geom, mode, phi, &grid))
        .collect::<Result<_>>()?;
    let nnz: usize = blocks.iter().map(|b| b.vals.len()).sum();
    let mut row_ptr = Vec::with_capacity(geom.n_measurements() + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for b in blocks {
        let base = cols.len();
        row_ptr.extend(b.row_ptr[1..].iter().map(|&o| base + o));
        cols.extend_from_slice(&b.cols);
        vals.extend_from_slice(&b.vals);
    }
    Ok(SparseSystemMatrix {
        n_rows: geom.n_measurements(),
        n_cols: geom.n_voxels(),
        row_ptr,
        cols,
        vals,
        geometry: Some(geom.clone()),
        mode: Some(mode),
        normalization: 1.0,
    })
}

/// Forward projection recomputing the weights angle by angle instead of storing the matrix.
pub fn forward_matrix_free(geom: &ScanGeometry, mode: Mode, u: &[f64]) -> Result<Vec<f64>> {
    check_len(geom.n_voxels(), u.len())?;
    geom.validate()?;
    let grid = Grid::from_geometry(geom);
    let parts: Vec<Vec<f64>> = geom
        .angles
        .par_iter()
        .map(|&phi| {
            let b = angle_block(geom, mode, phi, &grid)?;
            Ok((0..b.row_ptr.len() - 1)
                .map(|r| {
                    (b.row_ptr[r]..b.row_ptr[r + 1])
                        .map(|e| b.vals[e] * u[b.cols[e] as usize])
                        .sum()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Back projection recomputing the weights angle by angle.
pub fn adjoint_matrix_free(geom: &ScanGeometry, mode: Mode, p: &[f64]) -> Result<Vec<f64>> {
    check_len(geom.n_measurements(), p.len())?;
    geom.validate()?;
    let grid = Grid::from_geometry(geom);
    let n_det = geom.n_detectors();
    let parts: Vec<Vec<f64>> = geom
        .angles
        .par_iter()
        .enumerate()
        .map(|(ia, &phi)| {
            let b = angle_block(geom, mode, phi, &grid)?;
            let mut acc = vec![0.0; geom.n_voxels()];
            for r in 0..n_det {
                let y = p[ia * n_det + r];
                for e in b.row_ptr[r]..b.row_ptr[r + 1] {
                    acc[b.cols[e] as usize] += b.vals[e] * y;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut u = vec![0.0; geom.n_voxels()];
    for part in parts {
        for (a, b) in u.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(u)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Power iteration on `A^T A`. Returns the estimate of `||A||_2` after each iteration.
pub fn spectral_norm_history(a: &dyn LinearOperator, iters: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..a.n_cols()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut y = vec![0.0; a.n_rows()];
    let mut hist = Vec::with_capacity(iters);
    let nx = norm(&x);
    if nx == 0.0 {
        return Err(CtError::ZeroMatrix);
    }
    x.iter_mut().for_each(|v| *v /= nx);
    for _ in 0..iters.max(1) {
        a.apply(&x, &mut y);
        let ny = norm(&y);
        if ny == 0.0 || !ny.is_finite() {
            return Err(CtError::ZeroMatrix);
        }
        hist.push(ny);
        a.apply_t(&y, &mut x);
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
    }
    Ok(hist)
}

/// Power-iteration estimate of the spectral norm.
pub fn spectral_norm(a: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    Ok(*spectral_norm_history(a, iters, seed)?.last().unwrap())
}

/// Relative adjoint mismatch `|<Au, p> - <u, A^T p>| / (||A|| ||u|| ||p||)`.
pub fn adjoint_mismatch(a: &dyn LinearOperator, u: &[f64], p: &[f64], op_norm: f64) -> f64 {
    let mut au = vec![0.0; a.n_rows()];
    let mut atp = vec![0.0; a.n_cols()];
    a.apply(u, &mut au);
    a.apply_t(p, &mut atp);
    let lhs: f64 = au.iter().zip(p).map(|(x, y)| x * y).sum();
    let rhs: f64 = u.iter().zip(&atp).map(|(x, y)| x * y).sum();
    (lhs - rhs).abs() / (op_norm * norm(u) * norm(p))
}
