//! Exact area fractions of a pixel seen by each detector cell of a fan beam.
//!
//! In the canonical frame (see [`crate::geometry::canonical_frame`]) the two
//! rays through the middle vertex angles split the pixel into a triangle, a
//! trapezoid and a second triangle. Each detector cell is an angular interval
//! `[beta_m, beta_{m+1}]`; its area is a sum of differences of the triangle
//! factor `A3` and the trapezoid factor `A4` over the zones it overlaps.

use crate::error::{CtError, Result};
use crate::geometry::{
    box_vertex_angles, canonical_frame, detector_edge_angle, edge_span, CanonicalFrame,
    DetectorIndex, PixelBox, ScanGeometry, VoxelIndex, EPS_ANG,
};

/// Triangle factor: area between the ray through the corner vertex and the
/// ray `beta`, relative to the pixel area. `a` is the length of the pixel
/// edge joining the corner and the adjacent vertex, `b` the other side.
pub fn triangle_factor(
    phi: f64,
    gamma_corner: f64,
    gamma_adjacent: f64,
    beta: f64,
    a: f64,
    b: f64,
) -> Result<f64> {
    if (gamma_corner - gamma_adjacent).abs() < EPS_ANG || (beta - phi).abs() < EPS_ANG {
        return Ok(0.0);
    }
    let num = ((phi - gamma_adjacent).sin() * (beta - gamma_corner).sin()
        / (gamma_adjacent - gamma_corner).sin())
    .powi(2);
    let den = (2.0 * phi - 2.0 * beta).sin().abs();
    if den < EPS_ANG {
        if num < EPS_ANG {
            return Ok(0.0);
        }
        return Err(CtError::DegenerateGeometry(format!(
            "ray beta = {beta} parallel to a pixel edge"
        )));
    }
    Ok(a / (b * den) * num)
}

/// [`triangle_factor`] with the pixel sides taken from the geometry.
pub fn triangle_area_factor(
    phi: f64,
    gamma_corner: f64,
    gamma_adjacent: f64,
    beta: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    triangle_factor(phi, gamma_corner, gamma_adjacent, beta, geom.a, geom.b)
}

/// Trapezoid factor for two rays crossing the pixel through its x faces;
/// `x_center` is the pixel centre and `b` its height.
pub fn trapezoid_factor(
    phi: f64,
    x_center: f64,
    beta_lo: f64,
    beta_hi: f64,
    s: f64,
    b: f64,
) -> Result<f64> {
    if (phi - beta_lo).cos().abs() < EPS_ANG || (phi - beta_hi).cos().abs() < EPS_ANG {
        return Err(CtError::DegenerateGeometry(
            "ray parallel to the x faces".into(),
        ));
    }
    Ok(
        (s * phi.cos() - x_center).abs() * ((phi - beta_lo).tan() - (phi - beta_hi).tan()).abs()
            / b,
    )
}

pub fn trapezoid_area_factor(
    phi: f64,
    n_x: i64,
    beta_lo: f64,
    beta_hi: f64,
    geom: &ScanGeometry,
) -> Result<f64> {
    trapezoid_factor(
        phi,
        (n_x as f64 + 0.5) * geom.a,
        beta_lo,
        beta_hi,
        geom.s,
        geom.b,
    )
}

/// Per (pixel, angle) data for evaluating cell areas.
#[derive(Clone, Debug)]
pub struct PixelSweep {
    pub frame: CanonicalFrame,
    /// Sorted vertex angles; `big_gamma[0..2]` belong to the bottom edge,
    /// `big_gamma[2..4]` to the top edge of the canonical pixel.
    pub big_gamma: [f64; 4],
    s: f64,
}

impl PixelSweep {
    pub fn new(pixel: &PixelBox, phi: f64, geom: &ScanGeometry) -> Result<Self> {
        let frame = canonical_frame(pixel, phi, geom.s);
        let g = box_vertex_angles(&frame.pixel, frame.phi, geom)?;
        let (b0, b1) = (g[0].min(g[1]), g[0].max(g[1]));
        let (t0, t1) = (g[2].min(g[3]), g[2].max(g[3]));
        Ok(PixelSweep {
            frame,
            big_gamma: [b0, b1, t0, t1],
            s: geom.s,
        })
    }

    pub fn gamma_min(&self) -> f64 {
        self.big_gamma[0]
    }
    pub fn gamma_max(&self) -> f64 {
        self.big_gamma[3]
    }

    pub(crate) fn a3_low(&self, beta: f64) -> Result<f64> {
        let p = &self.frame.pixel;
        triangle_factor(
            self.frame.phi,
            self.big_gamma[0],
            self.big_gamma[1],
            beta,
            p.width(),
            p.height(),
        )
    }
    pub(crate) fn a3_high(&self, beta: f64) -> Result<f64> {
        let p = &self.frame.pixel;
        triangle_factor(
            self.frame.phi,
            self.big_gamma[3],
            self.big_gamma[2],
            beta,
            p.width(),
            p.height(),
        )
    }
    pub(crate) fn a4(&self, lo: f64, hi: f64) -> Result<f64> {
        let p = &self.frame.pixel;
        trapezoid_factor(self.frame.phi, p.center().x, lo, hi, self.s, p.height())
    }

    /// Area fraction of the pixel between rays `beta_lo <= beta_hi`.
    pub fn cell(&self, beta_lo: f64, beta_hi: f64) -> Result<f64> {
        let [g1, g2, g3, g4] = self.big_gamma;
        let mut w = 0.0;
        if beta_hi > g1 && beta_lo < g2 {
            w += self.a3_low(beta_hi.min(g2))? - self.a3_low(beta_lo.max(g1))?;
        }
        let (lo, hi) = (beta_lo.max(g2), beta_hi.min(g3));
        if hi > lo {
            w += self.a4(lo, hi)?;
        }
        if beta_hi > g3 && beta_lo < g4 {
            w += self.a3_high(beta_lo.max(g3))? - self.a3_high(beta_hi.min(g4))?;
        }
        Ok(w.max(0.0))
    }
}

/// Area fractions `w_{m,n}` of pixel `n` at angle `phi` for every detector
/// cell that sees it, ordered by cell index.
pub fn pixel_area_factors(
    n: VoxelIndex,
    phi: f64,
    geom: &ScanGeometry,
) -> Result<Vec<(DetectorIndex, f64)>> {
    let sweep = PixelSweep::new(&geom.voxel_box(n).xy, phi, geom)?;
    let mut out = Vec::new();
    let Some((lo, hi)) = edge_span(sweep.gamma_min(), sweep.gamma_max(), geom) else {
        return Ok(out);
    };
    let mut beta_lo = detector_edge_angle(lo, geom);
    for m in lo..hi {
        let beta_hi = detector_edge_angle(m + 1, geom);
        let w = sweep.cell(beta_lo, beta_hi)?;
        if w > 0.0 {
            out.push((DetectorIndex { my: m, mz: 0 }, w));
        }
        beta_lo = beta_hi;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point_angle, Point2};
    use crate::oracle::{clip_area_2d, Pose};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(n_det: usize, dy: f64) -> ScanGeometry {
        ScanGeometry::new_2d(250.0, 250.0, dy, n_det, 1.0, 1.0, 64, 64, vec![0.0]).unwrap()
    }

    fn pose(g: &ScanGeometry, phi: f64) -> Pose {
        Pose {
            s: g.s,
            d: g.d,
            phi,
        }
    }

    fn u_of(beta: f64, g: &ScanGeometry) -> f64 {
        beta.tan() * (g.s + g.d)
    }

    #[test]
    fn triangle_edge_cases_are_zero() {
        assert_eq!(
            triangle_factor(0.3, 0.01, 0.01, 0.02, 1.0, 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            triangle_factor(0.3, 0.01, 0.02, 0.3, 1.0, 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn trapezoid_reference_value() {
        let g = geom(60, 0.75);
        let beta = 0.001f64.atan();
        // Pixel centre at x = +0.5 gives 249.5 * 0.001, at x = -0.5 gives 250.5 * 0.001.
        for (nx, expected) in [(0, 0.2495), (-1, 0.2505)] {
            let w = trapezoid_area_factor(0.0, nx, 0.0, beta, &g).unwrap();
            assert!((w - expected).abs() < 1e-14, "{w}");
            let x0 = nx as f64;
            let px = PixelBox {
                x0,
                x1: x0 + 1.0,
                y0: -10.0,
                y1: 10.0,
            };
            // The same strip clipped from a tall pixel, rescaled to height 1.
            let oracle = clip_area_2d(&px, &pose(&g, 0.0), 0.0, u_of(beta, &g)) * 20.0;
            assert!((w - oracle).abs() < 1e-12);
        }
        assert_eq!(trapezoid_area_factor(0.4, 2, 0.01, 0.01, &g).unwrap(), 0.0);
    }

    fn trapezoid_intersection_oracle(
        phi: f64,
        n: VoxelIndex,
        b_lo: f64,
        b_hi: f64,
        g: &ScanGeometry,
    ) -> f64 {
        // y of the ray with angle beta at x, from the source position and direction.
        let y_at = |beta: f64, x: f64| {
            let (sx, sy) = (g.s * phi.cos(), g.s * phi.sin());
            let dir = (-(phi - beta).cos(), -(phi - beta).sin());
            sy + (x - sx) / dir.0 * dir.1
        };
        let x0 = n.nx as f64 * g.a;
        let x1 = x0 + g.a;
        let p = (y_at(b_lo, x1) - y_at(b_hi, x1)).abs();
        let q = (y_at(b_lo, x0) - y_at(b_hi, x0)).abs();
        0.5 * g.a * (p + q) / (g.a * g.b)
    }

    #[test]
    fn trapezoid_matches_intersection_points() {
        let g = geom(60, 0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let phi = rng.gen_range(-0.7..0.7);
            let n = VoxelIndex::new2(rng.gen_range(-20..20), rng.gen_range(-20..20));
            let b1 = rng.gen_range(-0.05..0.05);
            let b2 = rng.gen_range(-0.05..0.05);
            let w = trapezoid_area_factor(phi, n.nx, b1, b2, &g).unwrap();
            let o = trapezoid_intersection_oracle(phi, n, b1, b2, &g);
            assert!((w - o).abs() <= 1e-9 * o.max(1.0), "{w} vs {o}");
            assert!((w - trapezoid_area_factor(phi, n.nx, b2, b1, &g).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn triangle_matches_clipping_oracle() {
        let g = geom(60, 0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 1000 {
            let phi = rng.gen_range(-3.1..3.1);
            let n = VoxelIndex::new2(rng.gen_range(-30..30), rng.gen_range(-30..30));
            let sw = PixelSweep::new(&g.voxel_box(n).xy, phi, &g).unwrap();
            let [g1, g2, g3, g4] = sw.big_gamma;
            let f = &sw.frame;
            let p = pose(&g, f.phi);
            let t: f64 = rng.gen();
            // Lower triangle: everything below the ray beta.
            let beta = g1 + t * (g2 - g1);
            let w =
                triangle_factor(f.phi, g1, g2, beta, f.pixel.width(), f.pixel.height()).unwrap();
            let o = clip_area_2d(&f.pixel, &p, f64::NEG_INFINITY, u_of(beta, &g));
            assert!((w - o).abs() <= 1e-9 * o.max(1.0), "low {w} vs {o}");
            // Upper triangle: everything above the ray beta.
            let beta = g3 + t * (g4 - g3);
            let w =
                triangle_factor(f.phi, g4, g3, beta, f.pixel.width(), f.pixel.height()).unwrap();
            let o = clip_area_2d(&f.pixel, &p, u_of(beta, &g), f64::INFINITY);
            assert!((w - o).abs() <= 1e-9 * o.max(1.0), "high {w} vs {o}");
            checked += 1;
        }
    }

    #[test]
    fn non_square_pixels_match_oracle() {
        let g = ScanGeometry::new_2d(250.0, 250.0, 0.3, 400, 1.3, 0.6, 40, 40, vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let phi = rng.gen_range(-3.1..3.1);
            let n = VoxelIndex::new2(rng.gen_range(-20..20), rng.gen_range(-20..20));
            check_against_oracle(n, phi, &g);
        }
    }

    fn check_against_oracle(n: VoxelIndex, phi: f64, g: &ScanGeometry) {
        let px = g.voxel_box(n).xy;
        let p = pose(g, phi);
        let ws = pixel_area_factors(n, phi, g).unwrap();
        let mut total = 0.0;
        for (m, w) in &ws {
            let o = clip_area_2d(&px, &p, m.my as f64 * g.dy, (m.my + 1) as f64 * g.dy);
            assert!(
                (w - o).abs() <= 1e-9 * o.max(1.0),
                "cell {} {w} vs {o}",
                m.my
            );
            total += w;
        }
        let (elo, ehi) = g.edge_range_y();
        let covered = clip_area_2d(&px, &p, elo as f64 * g.dy, ehi as f64 * g.dy);
        assert!((total - covered).abs() < 1e-10, "{total} vs {covered}");
    }

    #[test]
    fn pixel_factors_match_oracle_on_random_inputs() {
        let g = geom(300, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let phi = rng.gen_range(-7.0..7.0);
            let n = VoxelIndex::new2(rng.gen_range(-32..32), rng.gen_range(-32..32));
            check_against_oracle(n, phi, &g);
        }
    }

    #[test]
    fn partial_detector_coverage() {
        let g = geom(8, 0.75);
        check_against_oracle(VoxelIndex::new2(0, 1), 0.2, &g);
        check_against_oracle(VoxelIndex::new2(3, 2), 1.0, &g);
    }

    #[test]
    fn pixel_inside_single_cell() {
        // Cells much wider than the pixel footprint.
        let g = ScanGeometry::new_2d(250.0, 250.0, 50.0, 4, 1.0, 1.0, 4, 4, vec![0.0]).unwrap();
        let ws = pixel_area_factors(VoxelIndex::new2(1, 1), 0.3, &g).unwrap();
        assert_eq!(ws.len(), 1);
        assert!((ws[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reproduces_printed_sweep_instance() {
        // Find a configuration where one edge lies in the first triangle, one
        // in the trapezoid and two in the second triangle, then rebuild the
        // weights from the atoms with the printed 7x7 matrix.
        let mut found = None;
        let mut g = geom(200, 1.0);
        'search: for dy in [0.6, 0.8, 1.0, 1.3] {
            g = geom(200, dy);
            for i in 0..1600 {
                let phi = i as f64 * 5e-4;
                for ny in -8..8 {
                    let n = VoxelIndex::new2(1, ny);
                    let sw = PixelSweep::new(&g.voxel_box(n).xy, phi, &g).unwrap();
                    let [g1, g2, g3, g4] = sw.big_gamma;
                    let (lo, hi) = edge_span(g1, g4, &g).unwrap();
                    let zone = |b: f64| {
                        if b <= g2 {
                            1
                        } else if b <= g3 {
                            2
                        } else {
                            3
                        }
                    };
                    let z: Vec<i32> = (lo + 1..hi)
                        .map(|m| zone(detector_edge_angle(m, &g)))
                        .collect();
                    if z == [1, 2, 3, 3] {
                        found = Some((n, phi, sw, lo));
                        break 'search;
                    }
                }
            }
        }
        let (n, phi, sw, lo) = found.expect("no configuration with the printed zone pattern");
        let [g1, g2, g3, _] = sw.big_gamma;
        let g4 = sw.big_gamma[3];
        let (fp, px) = (sw.frame.phi, sw.frame.pixel);
        let b = |k: i64| detector_edge_angle(lo + k, &g);
        let a3l = |beta: f64| triangle_factor(fp, g1, g2, beta, px.width(), px.height()).unwrap();
        let a3h = |beta: f64| triangle_factor(fp, g4, g3, beta, px.width(), px.height()).unwrap();
        let a4 =
            |x: f64, y: f64| trapezoid_factor(fp, px.center().x, x, y, g.s, px.height()).unwrap();
        let atoms = [
            a3l(b(1)),
            a3l(g2),
            a4(g2, b(2)),
            a4(b(2), g3),
            a3h(g3),
            a3h(b(3)),
            a3h(b(4)),
        ];
        let mat: [[f64; 7]; 7] = [
            [1., 0., 0., 0., 0., 0., 0.],
            [-1., 1., 0., 0., 0., 0., 0.],
            [0., 0., 1., 0., 0., 0., 0.],
            [0., 0., 0., 1., 0., 0., 0.],
            [0., 0., 0., 0., 1., -1., 0.],
            [0., 0., 0., 0., 0., 1., -1.],
            [0., 0., 0., 0., 0., 0., 1.],
        ];
        let f: Vec<f64> = mat
            .iter()
            .map(|r| r.iter().zip(&atoms).map(|(x, y)| x * y).sum())
            .collect();
        let expected = [f[0], f[1] + f[2], f[3] + f[4], f[5], f[6]];
        let ws = pixel_area_factors(n, phi, &g).unwrap();
        assert_eq!(ws.len(), 5);
        for (k, (m, w)) in ws.iter().enumerate() {
            assert_eq!(m.my, lo + k as i64);
            assert!(
                (w - expected[k]).abs() < 1e-13,
                "{k}: {w} vs {}",
                expected[k]
            );
        }
        // Sign pattern: the straddling cells are genuine differences.
        assert!(atoms[1] > atoms[0] && atoms[4] > atoms[5] && atoms[5] > atoms[6]);
    }

    #[test]
    fn continuity_across_zone_boundaries() {
        let g = geom(300, 0.3);
        let n = VoxelIndex::new2(3, -5);
        let phi = 0.4;
        let sw = PixelSweep::new(&g.voxel_box(n).xy, phi, &g).unwrap();
        let d = 1e-8;
        for &gk in &sw.big_gamma {
            let lo = gk - 0.002;
            let w = |b: f64| sw.cell(lo, b).unwrap();
            let jump = (w(gk + d) - w(gk)) - (w(gk) - w(gk - d));
            assert!(jump.abs() < 1e-6, "jump {jump}");
        }
        // Lipschitz in phi.
        let get = |ws: &[(DetectorIndex, f64)], m: i64| {
            ws.iter().find(|x| x.0.my == m).map_or(0.0, |x| x.1)
        };
        for i in 0..200 {
            let p = -3.0 + i as f64 * 0.03;
            let w0 = pixel_area_factors(n, p, &g).unwrap();
            let w1 = pixel_area_factors(n, p + d, &g).unwrap();
            for (m, w) in &w0 {
                assert!((w - get(&w1, m.my)).abs() < 1e3 * d);
            }
        }
    }

    #[test]
    fn quadrant_invariance() {
        let g = geom(300, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let phi = rng.gen_range(-3.0..3.0);
            let n = VoxelIndex::new2(rng.gen_range(-20..20), rng.gen_range(-20..20));
            let m = VoxelIndex::new2(n.ny, -n.nx - 1);
            let a = pixel_area_factors(n, phi, &g).unwrap();
            let b = pixel_area_factors(m, phi - std::f64::consts::FRAC_PI_2, &g).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_of_corner_is_sweep_start() {
        let g = geom(60, 0.75);
        let n = VoxelIndex::new2(2, -3);
        let sw = PixelSweep::new(&g.voxel_box(n).xy, 0.0, &g).unwrap();
        let Point2 { x, y } = g.voxel_box(n).xy.vertices()[1];
        assert!((sw.gamma_min() - point_angle(x, y, 0.0, &g).unwrap()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn partition_of_unity(phi in -7.0f64..7.0, nx in -32i64..32, ny in -32i64..32) {
            let g = geom(1200, 0.3);
            let ws = pixel_area_factors(VoxelIndex::new2(nx, ny), phi, &g).unwrap();
            let total: f64 = ws.iter().map(|x| x.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            prop_assert!(ws.iter().all(|x| x.1 >= 0.0 && x.1 <= 1.0 + 1e-12));
        }
    }
}
