//! Exact volume fractions of a voxel seen by each detector cell of a cone beam.
//!
//! Two layers live here. The closed forms (`factors`, `tetra_volume`,
//! `vol_rel_*`) are written exactly as the factor expressions are printed,
//! in the frame where the source faces the voxel's `x = (n_x + 1) a` face.
//! The composition (`voxel_volume_factors`) uses an equivalent vertex form:
//! for a planar top-view region `R` and the depth `t = s - x cos(phi) - y sin(phi)`,
//!
//! `integral over R of (T - t)_+ dA = sum_v J_v E_v^2 / 2 + kappa_v E_v^3 / 6`,  `E_v = (T - t_v)_+`,
//!
//! where the vertex coefficients reproduce the printed `g^3`, `f^3`, `h^3`
//! and `g_g^3` terms. The volume of a voxel column above the ray plane
//! `z = tan(alpha) t` follows from it, and differences between neighbouring
//! rows give the detector weights.

use crate::error::{CtError, Result};
use crate::geometry::{
    detector_edge_angle, edge_span, DetectorIndex, Point2, ScanGeometry, VoxelIndex, EPS_ANG,
};
use crate::weights2d::PixelSweep;

/// Threshold on `|sin(phi)|` below which the `phi = 0` forms are used.
pub const EPS_SING: f64 = 1e-8;

/// Factors `g`, `f`, `h`, `g_g` of one ray (top-view angle `beta`) and one
/// ray plane (slope `tan_alpha`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorTriple {
    pub beta: f64,
    pub tan_alpha: f64,
    pub g: f64,
    pub f: f64,
    pub h: f64,
    pub g_g: f64,
}

/// Intersection flags of the top-view trapezoid case, for the rays `m_y` and `m_y + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TrapezoidFlags {
    pub g_lo: bool,
    pub f_lo: bool,
    pub g_hi: bool,
    pub f_hi: bool,
}

/// Intersection flags of the top-view triangle case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TriangleFlags {
    pub y: bool,
    pub x: bool,
    pub g: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Front,
    Rear,
}

fn flag(v: f64) -> bool {
    v > 0.0
}

fn c_of(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl FactorTriple {
    pub fn trapezoid_flags(lo: &FactorTriple, hi: &FactorTriple) -> TrapezoidFlags {
        TrapezoidFlags {
            g_lo: flag(lo.g),
            f_lo: flag(lo.f),
            g_hi: flag(hi.g),
            f_hi: flag(hi.f),
        }
    }
    pub fn triangle_flags(&self) -> TriangleFlags {
        TriangleFlags {
            y: flag(self.g),
            x: flag(self.h),
            g: flag(self.g_g),
        }
    }
}

fn axial(geom: &ScanGeometry) -> Result<&crate::geometry::AxialGeometry> {
    geom.axial
        .as_ref()
        .ok_or_else(|| CtError::InvalidGeometry("volume factors need a 3D geometry".into()))
}

/// Factors for detector edges `(m_y, m_z)`.
pub fn factors(
    m_y: i64,
    m_z: i64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<FactorTriple> {
    if m_z == 0 {
        return Err(CtError::CentralRow);
    }
    factors_at(
        detector_edge_angle(m_y, geom),
        geom.tan_alpha(m_z),
        n,
        phi,
        geom,
    )
}

/// Raw-coordinate form of the factors for an arbitrary ray angle and plane slope.
pub fn factors_at(
    beta: f64,
    tan_alpha: f64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<FactorTriple> {
    let ax = axial(geom)?;
    let (a, b, s) = (geom.a, geom.b, geom.s);
    let (sp, cp) = phi.sin_cos();
    let cpb = (phi - beta).cos();
    if cpb.abs() < EPS_ANG {
        return Err(CtError::DegenerateGeometry(
            "cos(phi - beta) vanishes".into(),
        ));
    }
    let k = ax.c / a * (n.nz + 1) as f64 / tan_alpha;
    let r = beta.cos() / cpb;
    let g = k - r * (s * cp - (n.nx + 1) as f64 * a) / a;
    let f = k - r * (s * cp - n.nx as f64 * a) / a;
    let h = k - beta.cos() / (phi - beta).sin() * (s * sp - n.ny as f64 * b) / a;
    let g_g = k - (s - (n.nx + 1) as f64 * a * cp - n.ny as f64 * b * sp) / a;
    Ok(FactorTriple {
        beta,
        tan_alpha,
        g,
        f,
        h,
        g_g,
    })
}

/// The same factors written through the vertex angles of `V1 = (n_x a, n_y b)`
/// and `V2 = ((n_x + 1) a, n_y b)`.
pub fn factors_gamma_form(
    beta: f64,
    tan_alpha: f64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<FactorTriple> {
    let ax = axial(geom)?;
    let gam = crate::geometry::vertex_angles(n, phi, geom)?;
    let (g1, g2) = (gam[0], gam[1]);
    let den = (g1 - g2).sin();
    if den.abs() < EPS_ANG {
        return Err(CtError::DegenerateGeometry(
            "bottom edge seen edge-on".into(),
        ));
    }
    let k = ax.c / geom.a * (n.nz + 1) as f64 / tan_alpha;
    let cb = beta.cos();
    let cpb = (phi - beta).cos();
    let g = k - cb * (phi - g2).cos() * (phi - g1).sin() / (cpb * den);
    let f = k - cb * (phi - g1).cos() * (phi - g2).sin() / (cpb * den);
    let h = k - cb * (phi - g2).sin() * (phi - g1).sin() / ((phi - beta).sin() * den);
    let g_g = k - g2.cos() * (phi - g1).sin() / den;
    Ok(FactorTriple {
        beta,
        tan_alpha,
        g,
        f,
        h,
        g_g,
    })
}

/// Absolute volume of the corner tetrahedron cut by one ray at the front
/// (`g`) or rear (`f`) face.
pub fn tetra_volume(t: &FactorTriple, phi: f64, geom: &ScanGeometry, face: Face) -> Result<f64> {
    if phi.sin().abs() <= EPS_SING {
        return Err(CtError::SingularPhi(phi.sin().abs()));
    }
    let x = match face {
        Face::Front => t.g,
        Face::Rear => t.f,
    };
    let r = (phi - t.beta).cos() / t.beta.cos();
    Ok(geom.a.powi(3) / 6.0 * (t.tan_alpha / phi.sin() * r * x.powi(3)).abs())
}

fn prefactor(geom: &ScanGeometry) -> Result<f64> {
    let ax = axial(geom)?;
    Ok(geom.a * geom.a / (6.0 * geom.b * ax.c))
}

/// Relative volume above the ray plane `m_z` between two rays, top-view trapezoid case.
pub fn vol_rel_trapezoid(
    m_z: i64,
    beta_lo: f64,
    beta_hi: f64,
    c: TrapezoidFlags,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    if phi.sin().abs() <= EPS_SING {
        return Err(CtError::SingularPhi(phi.sin().abs()));
    }
    let ta = geom.tan_alpha(m_z);
    let lo = factors_at(beta_lo, ta, n, phi, geom)?;
    let hi = factors_at(beta_hi, ta, n, phi, geom)?;
    let r = |b: f64| (phi - b).cos() / b.cos();
    let bracket = r(beta_lo) * (c_of(c.g_lo) * lo.g.powi(3) - c_of(c.f_lo) * lo.f.powi(3))
        - r(beta_hi) * (c_of(c.g_hi) * hi.g.powi(3) - c_of(c.f_hi) * hi.f.powi(3));
    Ok(prefactor(geom)? * (ta / phi.sin() * bracket).abs())
}

/// The trapezoid case at `phi = 0`, where both rays share `g` and `f`.
pub fn vol_rel_trapezoid_singular(
    m_z: i64,
    beta_lo: f64,
    beta_hi: f64,
    c: TrapezoidFlags,
    n: VoxelIndex,
    geom: &ScanGeometry,
) -> Result<f64> {
    let ta = geom.tan_alpha(m_z);
    let t = factors_at(beta_lo, ta, n, 0.0, geom)?;
    let sa = geom.s / geom.a;
    let nx = n.nx as f64;
    let bracket = c_of(c.g_lo) * t.g.powi(2) * (t.g + 3.0 * sa - 3.0 * nx - 3.0)
        - c_of(c.f_lo) * t.f.powi(2) * (t.f + 3.0 * sa - 3.0 * nx);
    Ok(prefactor(geom)? * (ta * bracket * (beta_lo.tan() - beta_hi.tan())).abs())
}

/// Relative volume above the ray plane `m_z` on the near side of one ray,
/// top-view triangle case at the corner `((n_x + 1) a, n_y b)`.
pub fn vol_rel_triangle(
    m_z: i64,
    beta: f64,
    c: TriangleFlags,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    let (sp, cp) = phi.sin_cos();
    if sp.abs() <= EPS_SING || cp.abs() <= EPS_SING {
        return Err(CtError::SingularPhi(sp.abs().min(cp.abs())));
    }
    let ta = geom.tan_alpha(m_z);
    let t = factors_at(beta, ta, n, phi, geom)?;
    let cb = beta.cos();
    let bracket = c_of(c.y) * (phi - beta).cos() / cb * t.g.powi(3)
        + c_of(c.x) * phi.tan() * (phi - beta).sin() / cb * t.h.powi(3)
        - c_of(c.g) / cp * t.g_g.powi(3);
    Ok(prefactor(geom)? * (ta / sp * bracket).abs())
}

/// The triangle case at `phi = 0`.
pub fn vol_rel_triangle_singular(
    m_z: i64,
    beta: f64,
    c: TriangleFlags,
    n: VoxelIndex,
    geom: &ScanGeometry,
) -> Result<f64> {
    let ta = geom.tan_alpha(m_z);
    let t = factors_at(beta, ta, n, 0.0, geom)?;
    let gam = crate::geometry::vertex_angles(n, 0.0, geom)?;
    let (g1, g2) = (gam[0], gam[1]);
    let q = g1.sin() * (beta - g2).sin() / ((g1 - g2).sin() * beta.cos());
    let tb = beta.tan();
    let bracket = c_of(c.y) * t.g.powi(2) * (tb * t.g - 3.0 * q) - c_of(c.x) * tb * t.h.powi(3);
    Ok(prefactor(geom)? * (ta * bracket).abs())
}

/// Volume between the ray planes `m_z - 1` and `m_z`, trapezoid case, with
/// flags recomputed for each plane.
pub fn vol_res_trapezoid(
    m_z: i64,
    beta_lo: f64,
    beta_hi: f64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    let rel = |mz: i64| -> Result<f64> {
        let ta = geom.tan_alpha(mz);
        let lo = factors_at(beta_lo, ta, n, phi, geom)?;
        let hi = factors_at(beta_hi, ta, n, phi, geom)?;
        let c = FactorTriple::trapezoid_flags(&lo, &hi);
        if phi.sin().abs() <= EPS_SING {
            vol_rel_trapezoid_singular(mz, beta_lo, beta_hi, c, n, geom)
        } else {
            vol_rel_trapezoid(mz, beta_lo, beta_hi, c, n, phi, geom)
        }
    };
    Ok((rel(m_z - 1)? - rel(m_z)?).max(0.0))
}

/// Volume between the ray planes `m_z - 1` and `m_z`, triangle case.
pub fn vol_res_triangle(
    m_z: i64,
    beta: f64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    let rel = |mz: i64| -> Result<f64> {
        let t = factors_at(beta, geom.tan_alpha(mz), n, phi, geom)?;
        let c = t.triangle_flags();
        if phi.sin().abs() <= EPS_SING {
            vol_rel_triangle_singular(mz, beta, c, n, geom)
        } else {
            vol_rel_triangle(mz, beta, c, n, phi, geom)
        }
    };
    Ok((rel(m_z - 1)? - rel(m_z)?).max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Term {
    t: f64,
    j: f64,
    kappa: f64,
}

/// A signed top-view region with its exact area, depth moment and vertex terms.
#[derive(Clone, Copy, Debug)]
struct Piece {
    sign: f64,
    area: f64,
    moment: f64,
    t_min: f64,
    t_max: f64,
    terms: [Term; 4],
    len: usize,
}

impl Piece {
    fn new(sign: f64, area: f64, moment: f64, ts: &[f64], terms: &[Term]) -> Self {
        let mut arr = [Term::default(); 4];
        arr[..terms.len()].copy_from_slice(terms);
        let t_min = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Piece {
            sign,
            area,
            moment,
            t_min,
            t_max,
            terms: arr,
            len: terms.len(),
        }
    }

    // integral of (big_t - t)_+ over the piece
    fn cap(&self, big_t: f64) -> f64 {
        let mut acc = 0.0;
        for term in &self.terms[..self.len] {
            let e = big_t - term.t;
            if e > 0.0 {
                acc += e * e * (0.5 * term.j + term.kappa * e / 6.0);
            }
        }
        acc.abs()
    }

    // integral of min(z, k t) over the piece, for z >= 0 and k > 0
    fn below(&self, z: f64, k: f64) -> f64 {
        if k * self.t_max <= z {
            k * self.moment
        } else if k * self.t_min >= z {
            z * self.area
        } else {
            (z * self.area - k * self.cap(z / k)).clamp(0.0, (z * self.area).min(k * self.moment))
        }
    }
}

/// Top-view geometry of one voxel at one angle, in the canonical frame.
struct Column {
    sweep: PixelSweep,
    phi: f64,
    s: f64,
    singular: bool,
    low_corner: Point2,
    high_corner: Point2,
}

impl Column {
    fn new(sweep: PixelSweep, geom: &ScanGeometry) -> Result<Self> {
        let phi = sweep.frame.phi;
        if phi.cos().abs() < EPS_SING {
            return Err(CtError::SingularPhi(phi.cos().abs()));
        }
        let v = sweep.frame.pixel.vertices();
        let ga = crate::geometry::box_vertex_angles(&sweep.frame.pixel, phi, geom)?;
        let low_corner = if ga[0] <= ga[1] { v[0] } else { v[1] };
        let high_corner = if ga[3] >= ga[2] { v[3] } else { v[2] };
        Ok(Column {
            phi,
            s: geom.s,
            singular: phi.sin().abs() <= EPS_SING,
            low_corner,
            high_corner,
            sweep,
        })
    }

    fn depth(&self, p: Point2) -> f64 {
        self.s - p.x * self.phi.cos() - p.y * self.phi.sin()
    }

    // depth where ray beta meets the vertical line x
    fn t_on_x(&self, beta: f64, x: f64) -> f64 {
        beta.cos() / (self.phi - beta).cos() * (self.s * self.phi.cos() - x)
    }

    // depth where ray beta meets the horizontal line y
    fn t_on_y(&self, beta: f64, y: f64) -> f64 {
        beta.cos() / (self.phi - beta).sin() * (self.s * self.phi.sin() - y)
    }

    fn wh(&self) -> f64 {
        let p = &self.sweep.frame.pixel;
        p.width() * p.height()
    }

    fn triangle(
        &self,
        sign: f64,
        corner: Point2,
        gamma_corner: f64,
        beta: f64,
        rel_area: f64,
    ) -> Option<Piece> {
        if (beta - gamma_corner).abs() < EPS_ANG || rel_area <= 0.0 {
            return None;
        }
        let area = rel_area * self.wh();
        let tc = self.depth(corner);
        let tx = self.t_on_x(beta, corner.x);
        let ty = self.t_on_y(beta, corner.y);
        let moment = area * (tc + tx + ty) / 3.0;
        let (sp, cp) = self.phi.sin_cos();
        if self.singular {
            let tb = beta.tan().abs();
            let t_x = self.s - corner.x;
            let t_y = corner.y / beta.tan();
            let terms = if t_x <= t_y {
                [
                    Term {
                        t: t_x,
                        j: tb * (t_y - t_x),
                        kappa: -tb,
                    },
                    Term {
                        t: t_y,
                        j: 0.0,
                        kappa: tb,
                    },
                ]
            } else {
                [
                    Term {
                        t: t_y,
                        j: 0.0,
                        kappa: tb,
                    },
                    Term {
                        t: t_x,
                        j: -tb * (t_x - t_y),
                        kappa: -tb,
                    },
                ]
            };
            Some(Piece::new(sign, area, moment, &[tc, tx, ty], &terms))
        } else {
            let cb = beta.cos();
            let terms = [
                Term {
                    t: tx,
                    j: 0.0,
                    kappa: (self.phi - beta).cos() / (cb * sp),
                },
                Term {
                    t: ty,
                    j: 0.0,
                    kappa: (self.phi - beta).sin() / (cb * cp),
                },
                Term {
                    t: tc,
                    j: 0.0,
                    kappa: -1.0 / (sp * cp),
                },
            ];
            Some(Piece::new(sign, area, moment, &[tc, tx, ty], &terms))
        }
    }

    fn trapezoid(&self, lo: f64, hi: f64, rel_area: f64) -> Option<Piece> {
        if rel_area <= 0.0 {
            return None;
        }
        let area = rel_area * self.wh();
        let p = &self.sweep.frame.pixel;
        let (x0, x1) = (p.x0, p.x1);
        let d = ((self.phi - lo).tan() - (self.phi - hi).tan()).abs();
        let cp = self.phi.cos();
        let f = |x: f64| (self.s * cp - x) * d * 0.5 * (self.t_on_x(lo, x) + self.t_on_x(hi, x));
        let moment = (x1 - x0) / 6.0 * (f(x0) + 4.0 * f(0.5 * (x0 + x1)) + f(x1));
        let ts = [
            self.t_on_x(lo, x1),
            self.t_on_x(lo, x0),
            self.t_on_x(hi, x0),
            self.t_on_x(hi, x1),
        ];
        if self.singular {
            let delta = (hi.tan() - lo.tan()).abs();
            let (tf, tr) = (self.s - x1, self.s - x0);
            let terms = [
                Term {
                    t: tf,
                    j: delta * tf,
                    kappa: delta,
                },
                Term {
                    t: tr,
                    j: -delta * tr,
                    kappa: -delta,
                },
            ];
            Some(Piece::new(1.0, area, moment, &ts, &terms))
        } else {
            let sp = self.phi.sin();
            let c = |b: f64| (self.phi - b).cos() / (b.cos() * sp);
            let terms = [
                Term {
                    t: ts[0],
                    j: 0.0,
                    kappa: c(lo),
                },
                Term {
                    t: ts[1],
                    j: 0.0,
                    kappa: -c(lo),
                },
                Term {
                    t: ts[2],
                    j: 0.0,
                    kappa: c(hi),
                },
                Term {
                    t: ts[3],
                    j: 0.0,
                    kappa: -c(hi),
                },
            ];
            Some(Piece::new(1.0, area, moment, &ts, &terms))
        }
    }

    /// Signed pieces covering the part of the pixel between rays `lo` and `hi`.
    fn cell_pieces(&self, lo: f64, hi: f64, out: &mut Vec<Piece>) -> Result<()> {
        out.clear();
        let [g1, g2, g3, g4] = self.sweep.big_gamma;
        if hi > g1 && lo < g2 {
            let (bh, bl) = (hi.min(g2), lo.max(g1));
            out.extend(self.triangle(1.0, self.low_corner, g1, bh, self.sweep.a3_low(bh)?));
            out.extend(self.triangle(-1.0, self.low_corner, g1, bl, self.sweep.a3_low(bl)?));
        }
        let (l, h) = (lo.max(g2), hi.min(g3));
        if h > l {
            out.extend(self.trapezoid(l, h, self.sweep.a4(l, h)?));
        }
        if hi > g3 && lo < g4 {
            let (bl, bh) = (lo.max(g3), hi.min(g4));
            out.extend(self.triangle(1.0, self.high_corner, g4, bl, self.sweep.a3_high(bl)?));
            out.extend(self.triangle(-1.0, self.high_corner, g4, bh, self.sweep.a3_high(bh)?));
        }
        Ok(())
    }
}

/// Volume of `{ (x, y) in R, z in [z0, z1], z < k t }` for the signed region `R`.
fn volume_below(pieces: &[Piece], area: f64, z0: f64, z1: f64, k: f64) -> f64 {
    // Slab [zl, zh] with 0 <= zl, kk > 0: integral of clamp(kk t, zl, zh) - zl.
    let upper = |zl: f64, zh: f64, kk: f64| -> f64 {
        if kk <= 0.0 || zh <= zl {
            return 0.0;
        }
        pieces
            .iter()
            .map(|p| p.sign * (p.below(zh, kk) - p.below(zl, kk)))
            .sum()
    };
    let mut v = 0.0;
    if z1 > 0.0 {
        v += upper(z0.max(0.0), z1, k);
    }
    if z0 < 0.0 {
        let zu = z1.min(0.0);
        let full = (zu - z0) * area;
        // Mirror z -> -z for the part below the central plane.
        v += if k >= 0.0 {
            full
        } else {
            full - upper(-zu, -z0, -k)
        };
    }
    v
}

/// Volume fractions `w_{m,n}` of voxel `n` at angle `phi` for every detector
/// cell `(m_y, m_z)` that sees it, ordered by `(m_y, m_z)`.
pub fn voxel_volume_factors(
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<Vec<(DetectorIndex, f64)>> {
    let mut out = Vec::new();
    voxel_volume_factors_into(n, phi, geom, &mut out, &mut Workspace::default())?;
    Ok(out)
}

/// Reusable buffers for [`voxel_volume_factors_into`].
#[derive(Default)]
pub struct Workspace {
    pieces: Vec<Piece>,
}

/// [`voxel_volume_factors`] writing into caller-owned buffers.
pub fn voxel_volume_factors_into(
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
    out: &mut Vec<(DetectorIndex, f64)>,
    ws: &mut Workspace,
) -> Result<()> {
    out.clear();
    let scratch = &mut ws.pieces;
    let ax = axial(geom)?;
    let vb = geom.voxel_box(n);
    let sweep = PixelSweep::new(&vb.xy, phi, geom)?;
    let Some((lo, hi)) = edge_span(sweep.gamma_min(), sweep.gamma_max(), geom) else {
        return Ok(());
    };
    let col = Column::new(sweep, geom)?;
    let vol = col.wh() * ax.c;
    let verts = col.sweep.frame.pixel.vertices();
    let t_min = verts
        .iter()
        .map(|&p| col.depth(p))
        .fold(f64::INFINITY, f64::min);
    let t_max = verts
        .iter()
        .map(|&p| col.depth(p))
        .fold(f64::NEG_INFINITY, f64::max);
    let kz = ax.dz / (geom.s + geom.d);
    let (v_lo, v_hi) = (
        vb.z0 / if vb.z0 >= 0.0 { t_max } else { t_min },
        vb.z1 / if vb.z1 >= 0.0 { t_min } else { t_max },
    );
    let (ez_lo, ez_hi) = geom.edge_range_z();
    let mz_lo = ((v_lo / kz).floor() as i64).max(ez_lo);
    let mz_hi = ((v_hi / kz).ceil() as i64).min(ez_hi);
    let mut beta_lo = detector_edge_angle(lo, geom);
    for my in lo..hi {
        let beta_hi = detector_edge_angle(my + 1, geom);
        col.cell_pieces(beta_lo, beta_hi, scratch)?;
        let area: f64 = scratch.iter().map(|p| p.sign * p.area).sum();
        if area > 0.0 {
            let mut prev = volume_below(scratch, area, vb.z0, vb.z1, kz * mz_lo as f64);
            for mz in mz_lo..mz_hi {
                let next = volume_below(scratch, area, vb.z0, vb.z1, kz * (mz + 1) as f64);
                let w = ((next - prev) / vol).max(0.0);
                if w > 0.0 {
                    out.push((DetectorIndex { my, mz }, w));
                }
                prev = next;
            }
        }
        beta_lo = beta_hi;
    }
    Ok(())
}

/// Number of detector rows whose cone meets voxel `n` at angle `phi`.
pub fn rows_touched(n: VoxelIndex, phi: f64, geom: &ScanGeometry) -> Result<usize> {
    let ax = axial(geom)?;
    let vb = geom.voxel_box(n);
    let kz = ax.dz / (geom.s + geom.d);
    let mut v_lo = f64::INFINITY;
    let mut v_hi = f64::NEG_INFINITY;
    for p in vb.xy.vertices() {
        let t = crate::geometry::depth(p.x, p.y, phi, geom.s);
        for z in [vb.z0, vb.z1] {
            v_lo = v_lo.min(z / t / kz);
            v_hi = v_hi.max(z / t / kz);
        }
    }
    let (ez_lo, ez_hi) = geom.edge_range_z();
    let lo = (v_lo.floor() as i64).max(ez_lo);
    let hi = (v_hi.ceil() as i64).min(ez_hi);
    Ok((hi - lo).max(0) as usize)
}

/// Check that no voxel meets more than three detector rows at any angle.
pub fn validate_z_restriction(geom: &ScanGeometry) -> Result<()> {
    for (ia, &phi) in geom.angles.iter().enumerate() {
        for flat in 0..geom.n_voxels() {
            let rows = rows_touched(geom.voxel_index(flat), phi, geom)?;
            if rows > 3 {
                return Err(CtError::ZRestrictionViolation {
                    voxel: flat,
                    angle: ia,
                    rows,
                });
            }
        }
    }
    Ok(())
}
