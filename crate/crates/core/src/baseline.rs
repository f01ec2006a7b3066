//! Line-based weights: path lengths of rays through the voxel grid, and
//! uniform averages of several rays per detector cell.

use crate::geometry::{DetectorIndex, ScanGeometry};

/// Axis-aligned voxel grid used by the ray marcher. In 2D the z axis is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub lo: [f64; 3],
    pub pitch: [f64; 3],
    pub n: [usize; 3],
    pub dims: usize,
}

impl Grid {
    pub fn from_geometry(geom: &ScanGeometry) -> Self {
        let (x0, _) = geom.grid_extent_x();
        let (y0, _) = geom.grid_extent_y();
        match &geom.axial {
            Some(ax) => {
                let (z0, _) = geom.grid_extent_z();
                Grid {
                    lo: [x0, y0, z0],
                    pitch: [geom.a, geom.b, ax.c],
                    n: [geom.nx, geom.ny, ax.nz],
                    dims: 3,
                }
            }
            None => Grid {
                lo: [x0, y0, 0.0],
                pitch: [geom.a, geom.b, 1.0],
                n: [geom.nx, geom.ny, 1],
                dims: 2,
            },
        }
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.n[0] * (idx[1] + self.n[1] * idx[2])
    }
}

/// Path lengths of the segment `p0 -> p1` in every voxel it crosses, in
/// traversal order. Appends to `out`.
pub fn line_weights(p0: [f64; 3], p1: [f64; 3], grid: &Grid, out: &mut Vec<(usize, f64)>) {
    let dims = grid.dims;
    let dir = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let len = dir[..dims].iter().map(|v| v * v).sum::<f64>().sqrt();
    if len == 0.0 {
        return;
    }
    let (mut t_in, mut t_out) = (0.0f64, 1.0f64);
    for ax in 0..dims {
        let lo = grid.lo[ax];
        let hi = lo + grid.n[ax] as f64 * grid.pitch[ax];
        if dir[ax] == 0.0 {
            if p0[ax] < lo || p0[ax] > hi {
                return;
            }
            continue;
        }
        let (a, b) = ((lo - p0[ax]) / dir[ax], (hi - p0[ax]) / dir[ax]);
        t_in = t_in.max(a.min(b));
        t_out = t_out.min(a.max(b));
    }
    if t_in >= t_out {
        return;
    }
    // Locate the entry voxel slightly inside the grid so corner hits resolve.
    let min_pitch = grid.pitch[..dims]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let t_probe = (t_in + 1e-12 * min_pitch / len).min(0.5 * (t_in + t_out));
    let mut idx = [0usize; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..dims {
        let p = p0[ax] + t_probe * dir[ax];
        let i = ((p - grid.lo[ax]) / grid.pitch[ax]).floor();
        idx[ax] = (i.max(0.0) as usize).min(grid.n[ax] - 1);
        if dir[ax] != 0.0 {
            step[ax] = if dir[ax] > 0.0 { 1 } else { -1 };
            let edge = idx[ax] + (dir[ax] > 0.0) as usize;
            t_next[ax] = (grid.lo[ax] + edge as f64 * grid.pitch[ax] - p0[ax]) / dir[ax];
            t_delta[ax] = grid.pitch[ax] / dir[ax].abs();
        }
    }
    let mut t = t_in;
    loop {
        let ax = (0..dims)
            .min_by(|&i, &j| t_next[i].total_cmp(&t_next[j]))
            .unwrap();
        let tn = t_next[ax].min(t_out);
        if tn > t {
            out.push((grid.flat(idx), (tn - t) * len));
            t = tn;
        }
        if t_next[ax] >= t_out {
            break;
        }
        let ni = idx[ax] as i64 + step[ax];
        if ni < 0 || ni >= grid.n[ax] as i64 {
            break;
        }
        idx[ax] = ni as usize;
        t_next[ax] += t_delta[ax];
    }
}

/// Source position and the detector point at detector coordinates `(u, v)`.
pub fn ray_endpoints(geom: &ScanGeometry, phi: f64, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
    let (sp, cp) = phi.sin_cos();
    let src = [geom.s * cp, geom.s * sp, 0.0];
    let det = [-geom.d * cp - u * sp, -geom.d * sp + u * cp, v];
    (src, det)
}

/// Uniform average of the path lengths of `k` equally spaced rays across
/// detector cell `m` (a `k x k` lattice in 3D). `k = 1` is the central ray.
/// Output is sorted by voxel and free of duplicates.
pub fn multiline_weights(
    m: DetectorIndex,
    k: usize,
    phi: f64,
    grid: &Grid,
    geom: &ScanGeometry,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    let k = k.max(1);
    let kz = if geom.is_3d() { k } else { 1 };
    let dz = geom.axial.as_ref().map_or(0.0, |a| a.dz);
    for iy in 0..k {
        let u = (m.my as f64 + (iy as f64 + 0.5) / k as f64) * geom.dy;
        for iz in 0..kz {
            let v = if geom.is_3d() {
                (m.mz as f64 + (iz as f64 + 0.5) / kz as f64) * dz
            } else {
                0.0
            };
            let (p0, p1) = ray_endpoints(geom, phi, u, v);
            line_weights(p0, p1, grid, out);
        }
    }
    merge_sorted(out, 1.0 / (k * kz) as f64);
}

fn merge_sorted(out: &mut Vec<(usize, f64)>, scale: f64) {
    out.sort_by_key(|e| e.0);
    let mut w = 0;
    for r in 0..out.len() {
        if w > 0 && out[w - 1].0 == out[r].0 {
            out[w - 1].1 += out[r].1;
        } else {
            out[w] = out[r];
            w += 1;
        }
    }
    out.truncate(w);
    for e in out.iter_mut() {
        e.1 *= scale;
    }
}

/// Factor turning a path length into a fraction comparable with the area or
/// volume weights: the beam cross-section at the rotation centre divided by the
/// voxel measure.
pub fn area_equivalent_scale(geom: &ScanGeometry) -> f64 {
    let mag = geom.s / (geom.s + geom.d);
    match &geom.axial {
        Some(ax) => geom.dy * ax.dz * mag * mag / (geom.a * geom.b * ax.c),
        None => geom.dy * mag / (geom.a * geom.b),
    }
}
