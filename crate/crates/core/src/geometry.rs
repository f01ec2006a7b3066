//! Scan geometry, index conventions and the angle/intersection relations
//! shared by the 2D and 3D weight computations.
//!
//! Coordinates: the source starts at `(s, 0, 0)` and rotates about the z axis
//! by the gantry angle `phi`. The flat detector sits at distance `d` behind the
//! origin, perpendicular to the central ray. Detector edges are indexed by
//! signed integers `m`; edge `m` lies at `m * dy` on the detector. The voxel
//! with signed index `n` spans `[n_x a, (n_x + 1) a] x [n_y b, (n_y + 1) b]`
//! (and `[n_z c, (n_z + 1) c]` in 3D).
//!
//! Array layouts map to signed indices by subtracting `count / 2`, so an even
//! count is centred on the origin.

use crate::error::{CtError, Result};
use std::f64::consts::{FRAC_PI_2, PI};

/// Relative threshold for vanishing denominators, scaled by `s`.
pub const EPS_DEN_REL: f64 = 1e-12;
/// Absolute threshold for coinciding angles.
pub const EPS_ANG: f64 = 1e-12;

/// Axial (z) part of a cone-beam geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct AxialGeometry {
    pub dz: f64,
    pub n_det_z: usize,
    pub c: f64,
    pub nz: usize,
}

/// Full acquisition description. `axial == None` means a 2D fan-beam scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub s: f64,
    pub d: f64,
    pub dy: f64,
    pub n_det_y: usize,
    pub a: f64,
    pub b: f64,
    pub nx: usize,
    pub ny: usize,
    pub angles: Vec<f64>,
    pub axial: Option<AxialGeometry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub nx: i64,
    pub ny: i64,
    pub nz: i64,
}

impl VoxelIndex {
    pub fn new2(nx: i64, ny: i64) -> Self {
        VoxelIndex { nx, ny, nz: 0 }
    }
    pub fn new3(nx: i64, ny: i64, nz: i64) -> Self {
        VoxelIndex { nx, ny, nz }
    }
}

/// Lower/left edge of a detector cell; the cell spans edges `m` and `m + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetectorIndex {
    pub my: i64,
    pub mz: i64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned pixel footprint in the x-y plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn center(&self) -> Point2 {
        Point2 {
            x: 0.5 * (self.x0 + self.x1),
            y: 0.5 * (self.y0 + self.y1),
        }
    }
    /// Rotate the box by -pi/2 about the origin: (x, y) -> (y, -x).
    pub fn rotate_quarter(&self) -> PixelBox {
        PixelBox {
            x0: self.y0,
            x1: self.y1,
            y0: -self.x1,
            y1: -self.x0,
        }
    }
    /// Vertices in the order V1..V4 = (x0,y0), (x1,y0), (x1,y1), (x0,y1).
    pub fn vertices(&self) -> [Point2; 4] {
        [
            Point2 {
                x: self.x0,
                y: self.y0,
            },
            Point2 {
                x: self.x1,
                y: self.y0,
            },
            Point2 {
                x: self.x1,
                y: self.y1,
            },
            Point2 {
                x: self.x0,
                y: self.y1,
            },
        ]
    }
}

/// Full voxel footprint; `z` is `[0, 0]` for 2D pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelBox {
    pub xy: PixelBox,
    pub z0: f64,
    pub z1: f64,
}

impl ScanGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new_2d(
        s: f64,
        d: f64,
        dy: f64,
        n_det_y: usize,
        a: f64,
        b: f64,
        nx: usize,
        ny: usize,
        angles: Vec<f64>,
    ) -> Result<Self> {
        let g = ScanGeometry {
            s,
            d,
            dy,
            n_det_y,
            a,
            b,
            nx,
            ny,
            angles,
            axial: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Turn a 2D geometry into a cone-beam one.
    pub fn with_axial(mut self, axial: AxialGeometry) -> Result<Self> {
        self.axial = Some(axial);
        self.validate()?;
        Ok(self)
    }

    pub fn is_3d(&self) -> bool {
        self.axial.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CtError::InvalidGeometry(msg.to_string()));
        if !(self.s > 0.0 && self.s.is_finite()) {
            return bad("s must be positive");
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return bad("d must be non-negative");
        }
        if !(self.dy > 0.0 && self.a > 0.0 && self.b > 0.0) {
            return bad("pitches must be positive");
        }
        if self.n_det_y == 0 || self.nx == 0 || self.ny == 0 {
            return bad("counts must be at least 1");
        }
        if self.angles.iter().any(|p| !p.is_finite()) {
            return bad("angles must be finite");
        }
        if let Some(ax) = &self.axial {
            if !(ax.dz > 0.0 && ax.c > 0.0) {
                return bad("axial pitches must be positive");
            }
            if ax.n_det_z == 0 || ax.nz == 0 {
                return bad("axial counts must be at least 1");
            }
        }
        // Every voxel vertex must stay strictly in front of the source for all
        // gantry angles, i.e. inside the source orbit.
        let (xlo, xhi) = self.grid_extent_x();
        let (ylo, yhi) = self.grid_extent_y();
        let r = xlo.abs().max(xhi.abs()).hypot(ylo.abs().max(yhi.abs()));
        if r >= self.s * (1.0 - 1e-9) {
            return bad("voxel grid must lie strictly inside the source orbit");
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.axial.as_ref().map_or(1, |a| a.nz)
    }
    pub fn n_det_z(&self) -> usize {
        self.axial.as_ref().map_or(1, |a| a.n_det_z)
    }
    pub fn n_detectors(&self) -> usize {
        self.n_det_y * self.n_det_z()
    }
    pub fn n_measurements(&self) -> usize {
        self.angles.len() * self.n_detectors()
    }
    pub fn nz(&self) -> usize {
        self.axial.as_ref().map_or(1, |a| a.nz)
    }

    pub fn grid_extent_x(&self) -> (f64, f64) {
        let lo = -((self.nx / 2) as f64) * self.a;
        (lo, lo + self.nx as f64 * self.a)
    }
    pub fn grid_extent_y(&self) -> (f64, f64) {
        let lo = -((self.ny / 2) as f64) * self.b;
        (lo, lo + self.ny as f64 * self.b)
    }
    pub fn grid_extent_z(&self) -> (f64, f64) {
        match &self.axial {
            Some(ax) => {
                let lo = -((ax.nz / 2) as f64) * ax.c;
                (lo, lo + ax.nz as f64 * ax.c)
            }
            None => (0.0, 0.0),
        }
    }

    /// Flat voxel index (x fastest) to signed voxel index.
    pub fn voxel_index(&self, flat: usize) -> VoxelIndex {
        let i = flat % self.nx;
        let j = (flat / self.nx) % self.ny;
        let k = flat / (self.nx * self.ny);
        let nz = if self.is_3d() {
            k as i64 - (self.nz() / 2) as i64
        } else {
            0
        };
        VoxelIndex {
            nx: i as i64 - (self.nx / 2) as i64,
            ny: j as i64 - (self.ny / 2) as i64,
            nz,
        }
    }

    pub fn flat_voxel(&self, n: VoxelIndex) -> Option<usize> {
        let i = n.nx + (self.nx / 2) as i64;
        let j = n.ny + (self.ny / 2) as i64;
        let k = if self.is_3d() {
            n.nz + (self.nz() / 2) as i64
        } else {
            0
        };
        if i < 0
            || j < 0
            || k < 0
            || i >= self.nx as i64
            || j >= self.ny as i64
            || k >= self.nz() as i64
        {
            return None;
        }
        Some(i as usize + self.nx * (j as usize + self.ny * k as usize))
    }

    pub fn voxel_box(&self, n: VoxelIndex) -> VoxelBox {
        let xy = PixelBox {
            x0: n.nx as f64 * self.a,
            x1: (n.nx + 1) as f64 * self.a,
            y0: n.ny as f64 * self.b,
            y1: (n.ny + 1) as f64 * self.b,
        };
        match &self.axial {
            Some(ax) => VoxelBox {
                xy,
                z0: n.nz as f64 * ax.c,
                z1: (n.nz + 1) as f64 * ax.c,
            },
            None => VoxelBox {
                xy,
                z0: 0.0,
                z1: 0.0,
            },
        }
    }

    /// Inclusive range of detector edge indices along y.
    pub fn edge_range_y(&self) -> (i64, i64) {
        let lo = -((self.n_det_y / 2) as i64);
        (lo, lo + self.n_det_y as i64)
    }
    /// Inclusive range of detector edge indices along z (`(0, 1)` in 2D).
    pub fn edge_range_z(&self) -> (i64, i64) {
        let n = self.n_det_z() as i64;
        let lo = -(n / 2);
        (lo, lo + n)
    }

    /// Detector raster position of the cell whose lower edges are `m`, if on the detector.
    pub fn detector_raster(&self, m: DetectorIndex) -> Option<usize> {
        let (ylo, yhi) = self.edge_range_y();
        let iy = m.my - ylo;
        if m.my < ylo || m.my >= yhi {
            return None;
        }
        let iz = if self.is_3d() {
            let (zlo, zhi) = self.edge_range_z();
            if m.mz < zlo || m.mz >= zhi {
                return None;
            }
            m.mz - zlo
        } else {
            0
        };
        Some(iy as usize + self.n_det_y * iz as usize)
    }

    pub fn eps_den(&self) -> f64 {
        EPS_DEN_REL * self.s
    }

    /// `tan(alpha)` of the z edge `m_z`: slope of its ray plane, `m_z dz / (s + d)`.
    pub fn tan_alpha(&self, m_z: i64) -> f64 {
        let dz = self.axial.as_ref().map_or(1.0, |a| a.dz);
        m_z as f64 * dz / (self.s + self.d)
    }
}

/// Angle `beta_m` between the central ray and the ray through detector edge `m_y`.
pub fn detector_edge_angle(m_y: i64, geom: &ScanGeometry) -> f64 {
    (m_y as f64 * geom.dy / (geom.s + geom.d)).atan()
}

/// Depth of a point along the central ray, measured from the source.
#[inline]
pub fn depth(x: f64, y: f64, phi: f64, s: f64) -> f64 {
    s - x * phi.cos() - y * phi.sin()
}

/// Top-view angle of the ray from the source through `(x, y)`.
pub fn point_angle(x: f64, y: f64, phi: f64, geom: &ScanGeometry) -> Result<f64> {
    let (sp, cp) = phi.sin_cos();
    let den = geom.s - y * sp - x * cp;
    if den < geom.eps_den() {
        return Err(CtError::DegenerateGeometry(format!(
            "point ({x}, {y}) not in front of the source at phi = {phi}"
        )));
    }
    Ok(((y * cp - x * sp) / den).atan())
}

/// Angles gamma_1..gamma_4 of the rays through the pixel vertices V1..V4.
pub fn vertex_angles(n: VoxelIndex, phi: f64, geom: &ScanGeometry) -> Result<[f64; 4]> {
    box_vertex_angles(&geom.voxel_box(n).xy, phi, geom)
}

pub fn box_vertex_angles(bx: &PixelBox, phi: f64, geom: &ScanGeometry) -> Result<[f64; 4]> {
    let v = bx.vertices();
    Ok([
        point_angle(v[0].x, v[0].y, phi, geom)?,
        point_angle(v[1].x, v[1].y, phi, geom)?,
        point_angle(v[2].x, v[2].y, phi, geom)?,
        point_angle(v[3].x, v[3].y, phi, geom)?,
    ])
}

/// Cached per-(voxel, angle) trigonometry.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleSet {
    pub phi: f64,
    pub gamma: [f64; 4],
    pub gamma_sorted: [f64; 4],
}

impl AngleSet {
    pub fn new(phi: f64, gamma: [f64; 4]) -> Self {
        let mut gamma_sorted = gamma;
        gamma_sorted.sort_by(|a, b| a.total_cmp(b));
        AngleSet {
            phi,
            gamma,
            gamma_sorted,
        }
    }
}

pub fn wrap_angle(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// A pixel rotated by whole quarter turns so that the source sees its
/// bottom edge first and its top edge last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalFrame {
    pub pixel: PixelBox,
    pub phi: f64,
    pub turns: u8,
}

fn in_front_wedge(bx: &PixelBox, phi: f64, s: f64) -> bool {
    let c = bx.center();
    let sx = s * phi.cos() - c.x;
    let sy = s * phi.sin() - c.y;
    sx > 0.0 && sx * bx.height() >= sy.abs() * bx.width()
}

/// Rotate `(pixel, phi)` until `max(gamma_1, gamma_2) <= min(gamma_3, gamma_4)`.
///
/// The condition holds exactly when the source lies in the wedge bounded by
/// the two diagonal lines of the pixel on its +x side.
pub fn canonical_frame(bx: &PixelBox, phi: f64, s: f64) -> CanonicalFrame {
    let mut pixel = *bx;
    let mut p = wrap_angle(phi);
    for turns in 0..4u8 {
        if in_front_wedge(&pixel, p, s) {
            return CanonicalFrame {
                pixel,
                phi: p,
                turns,
            };
        }
        pixel = pixel.rotate_quarter();
        p = wrap_angle(p - FRAC_PI_2);
    }
    // Unreachable for a source outside the pixel: the four wedges cover the plane.
    CanonicalFrame {
        pixel: *bx,
        phi: wrap_angle(phi),
        turns: 0,
    }
}

/// Index form of [`canonical_frame`]; needs square in-plane pixels so that a
/// rotated pixel is again a grid pixel.
pub fn canonical_orientation(
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<(VoxelIndex, f64, u8)> {
    if (geom.a - geom.b).abs() > 1e-12 * geom.a {
        return Err(CtError::InvalidGeometry(
            "index-form canonical orientation needs a == b".into(),
        ));
    }
    let frame = canonical_frame(&geom.voxel_box(n).xy, phi, geom.s);
    let mut m = n;
    for _ in 0..frame.turns {
        m = VoxelIndex {
            nx: m.ny,
            ny: -m.nx - 1,
            nz: m.nz,
        };
    }
    Ok((m, frame.phi, frame.turns))
}

/// Angles of the canonical pixel: (bottom pair sorted, top pair sorted).
pub fn canonical_gammas(frame: &CanonicalFrame, geom: &ScanGeometry) -> Result<AngleSet> {
    let g = box_vertex_angles(&frame.pixel, frame.phi, geom)?;
    Ok(AngleSet::new(frame.phi, g))
}

/// Edge range `[m_lo, m_hi]` of detector edges whose cells can see the pixel,
/// clipped to the physical detector. Cells are `m_lo .. m_hi`.
pub fn relevant_detectors_2d(
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<Option<(i64, i64)>> {
    let frame = canonical_frame(&geom.voxel_box(n).xy, phi, geom.s);
    let set = canonical_gammas(&frame, geom)?;
    Ok(edge_span(
        set.gamma[0].min(set.gamma[1]),
        set.gamma[2].max(set.gamma[3]),
        geom,
    ))
}

pub(crate) fn edge_span(gamma_min: f64, gamma_max: f64, geom: &ScanGeometry) -> Option<(i64, i64)> {
    let scale = (geom.s + geom.d) / geom.dy;
    let lo = (gamma_min.tan() * scale).floor() as i64;
    let hi = (gamma_max.tan() * scale).ceil() as i64;
    let (elo, ehi) = geom.edge_range_y();
    let lo = lo.max(elo);
    let hi = hi.min(ehi);
    if lo >= hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// A voxel vertex seen from the source: its top-view angle, height and x coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexSight {
    pub gamma: f64,
    pub z: f64,
    pub x: f64,
}

/// Range of z edges `[mz_lo, mz_hi]` between the lowest and highest ray
/// planes touching the voxel, clipped to the detector.
pub fn relevant_detectors_z(
    phi: f64,
    lower: VertexSight,
    upper: VertexSight,
    geom: &ScanGeometry,
) -> Result<Option<(i64, i64)>> {
    let ax = geom
        .axial
        .as_ref()
        .ok_or_else(|| CtError::InvalidGeometry("z range needs a 3D geometry".into()))?;
    let (lo, hi) = z_edge_bounds(phi, lower, upper, ax.dz, geom)?;
    if lower.z >= upper.z {
        return Ok(None);
    }
    let (elo, ehi) = geom.edge_range_z();
    let lo = (lo.floor() as i64).max(elo);
    let hi = (hi.ceil() as i64).min(ehi);
    Ok(if lo >= hi { None } else { Some((lo, hi)) })
}

fn z_edge_bounds(
    phi: f64,
    lower: VertexSight,
    upper: VertexSight,
    dz: f64,
    geom: &ScanGeometry,
) -> Result<(f64, f64)> {
    let cp = phi.cos();
    let eval = |v: VertexSight| -> Result<f64> {
        let den = geom.s * cp - v.x;
        if den.abs() < geom.eps_den() {
            return Err(CtError::DegenerateGeometry(
                "vertex in the source x plane".into(),
            ));
        }
        Ok((geom.s + geom.d) / dz * (phi - v.gamma).cos() / v.gamma.cos() * v.z / den)
    };
    Ok((eval(lower)?, eval(upper)?))
}

/// Intersections of the ray through edge `m_y` with the planes
/// `x = (n_x + 1) a` and `y = n_y b`.
pub fn intersection_points_2d(
    m_y: i64,
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<(Point2, Point2)> {
    let beta = detector_edge_angle(m_y, geom);
    let (sp, cp) = phi.sin_cos();
    let lim = 1.0 / geom.eps_den();
    let tan = (phi - beta).tan();
    if !tan.is_finite() || tan.abs() > lim {
        return Err(CtError::RayParallelToFace(format!(
            "ray {m_y} parallel to x face"
        )));
    }
    let cot = 1.0 / tan;
    if !cot.is_finite() || cot.abs() > lim {
        return Err(CtError::RayParallelToFace(format!(
            "ray {m_y} parallel to y face"
        )));
    }
    let xf = (n.nx + 1) as f64 * geom.a;
    let yb = n.ny as f64 * geom.b;
    let px = Point2 {
        x: xf,
        y: geom.s * sp - (geom.s * cp - xf) * tan,
    };
    let py = Point2 {
        x: geom.s * cp - (geom.s * sp - yb) * cot,
        y: yb,
    };
    Ok((px, py))
}

/// Closed-form relations between the coordinates of a point on the ray with
/// top-view angle `beta` towards the z edge with slope `tan_alpha`.
///
/// Each relation has two printed forms; both are provided so callers can pick
/// the numerically safe one.
#[derive(Clone, Copy, Debug)]
pub struct RayRelations {
    pub s: f64,
    pub phi: f64,
    pub beta: f64,
    pub tan_alpha: f64,
}

impl RayRelations {
    pub fn new(geom: &ScanGeometry, phi: f64, beta: f64, m_z: i64) -> Self {
        RayRelations {
            s: geom.s,
            phi,
            beta,
            tan_alpha: geom.tan_alpha(m_z),
        }
    }

    fn check(v: f64, what: &str) -> Result<f64> {
        if v.abs() < 1e-300 || !v.is_finite() {
            Err(CtError::DegenerateGeometry(format!("vanishing {what}")))
        } else {
            Ok(v)
        }
    }

    pub fn z_from_x(&self, x: f64) -> Result<f64> {
        let c = Self::check((self.phi - self.beta).cos(), "cos(phi - beta)")?;
        Ok(self.tan_alpha * self.beta.cos() / c * (self.s * self.phi.cos() - x))
    }
    pub fn z_from_y(&self, y: f64) -> Result<f64> {
        let sn = Self::check((self.phi - self.beta).sin(), "sin(phi - beta)")?;
        Ok(self.tan_alpha * self.beta.cos() / sn * (self.s * self.phi.sin() - y))
    }
    /// Depth form of the z relation, valid for any point `(x, y)` on the ray.
    pub fn z_from_xy(&self, x: f64, y: f64) -> f64 {
        let (sp, cp) = self.phi.sin_cos();
        ((self.s * cp - x) * cp + (self.s * sp - y) * sp) * self.tan_alpha
    }
    pub fn z_from_xy_depth(&self, x: f64, y: f64) -> f64 {
        depth(x, y, self.phi, self.s) * self.tan_alpha
    }
    pub fn x_from_z(&self, z: f64) -> Result<f64> {
        let ta = Self::check(self.tan_alpha, "tan(alpha)")?;
        Ok(self.s * self.phi.cos() - (self.phi - self.beta).cos() / self.beta.cos() * z / ta)
    }
    pub fn x_from_yz(&self, y: f64, z: f64) -> Result<f64> {
        let ta = Self::check(self.tan_alpha, "tan(alpha)")?;
        let (sp, cp) = self.phi.sin_cos();
        let cp = Self::check(cp, "cos(phi)")?;
        Ok(self.s * cp + ((self.s * sp - y) * sp - z / ta) / cp)
    }
    pub fn y_from_z(&self, z: f64) -> Result<f64> {
        let ta = Self::check(self.tan_alpha, "tan(alpha)")?;
        Ok(self.s * self.phi.sin() - (self.phi - self.beta).sin() / self.beta.cos() * z / ta)
    }
    pub fn y_from_xz(&self, x: f64, z: f64) -> Result<f64> {
        let ta = Self::check(self.tan_alpha, "tan(alpha)")?;
        let (sp, cp) = self.phi.sin_cos();
        let sp = Self::check(sp, "sin(phi)")?;
        Ok(self.s * sp + ((self.s * cp - x) * cp - z / ta) / sp)
    }
    pub fn x_from_y(&self, y: f64) -> Result<f64> {
        let sn = Self::check((self.phi - self.beta).sin(), "sin(phi - beta)")?;
        Ok(-self.s * self.beta.sin() / sn + y * (self.phi - self.beta).cos() / sn)
    }
    pub fn x_from_y_alt(&self, y: f64) -> Result<f64> {
        let t = Self::check((self.phi - self.beta).tan(), "tan(phi - beta)")?;
        Ok(self.s * self.phi.cos() - (self.s * self.phi.sin() - y) / t)
    }
    pub fn y_from_x(&self, x: f64) -> Result<f64> {
        let c = Self::check((self.phi - self.beta).cos(), "cos(phi - beta)")?;
        Ok(self.s * self.beta.sin() / c + x * (self.phi - self.beta).tan())
    }
    pub fn y_from_x_alt(&self, x: f64) -> Result<f64> {
        Self::check((self.phi - self.beta).cos(), "cos(phi - beta)")?;
        Ok(self.s * self.phi.sin() - (self.s * self.phi.cos() - x) * (self.phi - self.beta).tan())
    }
}

/// `tan(beta)` of the ray through `(x, y)`, from the point coordinates.
pub fn tan_beta_of_point(x: f64, y: f64, phi: f64, s: f64) -> f64 {
    let (sp, cp) = phi.sin_cos();
    (y * cp - x * sp) / (s - y * sp - x * cp)
}
