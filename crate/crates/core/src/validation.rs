//! Oracle suites runnable against a user geometry, reported one row per check.

use crate::error::{CtError, Result};
use crate::geometry::{point_angle, AxialGeometry, ScanGeometry, VoxelIndex};
use crate::oracle::{clip_area_2d, multiline_volume_3d_grid, Cuboid, DetectorCell, Pose};
use crate::projector::{adjoint_mismatch, build_system_matrix, spectral_norm, Mode};
use crate::weights2d::pixel_area_factors;
use crate::weights3d::{factors_at, voxel_volume_factors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Weights2d,
    Weights3d,
    Adjoint,
    Identities,
}

impl FromStr for Suite {
    type Err = CtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights2d" => Ok(Suite::Weights2d),
            "weights3d" => Ok(Suite::Weights3d),
            "adjoint" => Ok(Suite::Adjoint),
            "identities" => Ok(Suite::Identities),
            _ => Err(CtError::InvalidSpec(format!(
                "unknown suite {s:?} (weights2d, weights3d, adjoint, identities)"
            ))),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::Weights2d => "weights2d",
            Suite::Weights3d => "weights3d",
            Suite::Adjoint => "adjoint",
            Suite::Identities => "identities",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub case: usize,
    pub quantity: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.value <= self.tolerance
    }
}

pub fn write_report<W: Write>(w: &mut W, checks: &[Check]) -> std::io::Result<()> {
    writeln!(w, "suite,case,quantity,value,tolerance,pass")?;
    for c in checks {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{}",
            c.suite,
            c.case,
            c.quantity,
            c.value,
            c.tolerance,
            c.pass()
        )?;
    }
    Ok(())
}

pub fn run_suite(
    suite: Suite,
    geom: &ScanGeometry,
    samples: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match suite {
        Suite::Weights2d => weights2d(geom, samples, &mut rng),
        Suite::Weights3d => weights3d(geom, samples, &mut rng),
        Suite::Adjoint => adjoint(geom, samples, &mut rng, seed),
        Suite::Identities => identities(geom, samples, &mut rng),
    }
}

fn random_view(geom: &ScanGeometry, rng: &mut ChaCha8Rng) -> (VoxelIndex, f64) {
    let n = geom.voxel_index(rng.gen_range(0..geom.n_voxels()));
    (n, geom.angles[rng.gen_range(0..geom.angles.len())])
}

fn cuboid(geom: &ScanGeometry, n: VoxelIndex) -> Cuboid {
    let b = geom.voxel_box(n);
    Cuboid {
        x0: b.xy.x0,
        x1: b.xy.x1,
        y0: b.xy.y0,
        y1: b.xy.y1,
        z0: b.z0,
        z1: b.z1,
    }
}

fn weights2d(geom: &ScanGeometry, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let g = ScanGeometry {
        axial: None,
        ..geom.clone()
    };
    let (ey0, ey1) = g.edge_range_y();
    let mut out = Vec::new();
    for case in 0..samples {
        let (n, phi) = random_view(&g, rng);
        let n = VoxelIndex { nz: 0, ..n };
        let pose = Pose {
            s: g.s,
            d: g.d,
            phi,
        };
        let ws = pixel_area_factors(n, phi, &g)?;
        let (mut worst, mut sum) = (0.0f64, 0.0);
        for my in ey0..ey1 {
            let w = ws.iter().find(|e| e.0.my == my).map_or(0.0, |e| e.1);
            let o = clip_area_2d(
                &g.voxel_box(n).xy,
                &pose,
                my as f64 * g.dy,
                (my + 1) as f64 * g.dy,
            );
            worst = worst.max((w - o).abs() / w.max(1.0));
            sum += w;
        }
        out.push(Check {
            suite: Suite::Weights2d,
            case,
            quantity: "clip_error",
            value: worst,
            tolerance: 1e-9,
        });
        out.push(Check {
            suite: Suite::Weights2d,
            case,
            quantity: "sum_excess",
            value: sum - 1.0,
            tolerance: 1e-9,
        });
    }
    Ok(out)
}

fn weights3d(geom: &ScanGeometry, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let ax = geom
        .axial
        .as_ref()
        .ok_or_else(|| CtError::InvalidConfig("the weights3d suite needs a 3D geometry".into()))?;
    let mut out = Vec::new();
    for case in 0..samples {
        let (n, phi) = random_view(geom, rng);
        let pose = Pose {
            s: geom.s,
            d: geom.d,
            phi,
        };
        let (mut worst, mut sum) = (0.0f64, 0.0);
        for (m, w) in voxel_volume_factors(n, phi, geom)? {
            let cell = DetectorCell {
                u0: m.my as f64 * geom.dy,
                u1: (m.my + 1) as f64 * geom.dy,
                v0: m.mz as f64 * ax.dz,
                v1: (m.mz + 1) as f64 * ax.dz,
            };
            worst = worst.max(
                (w - multiline_volume_3d_grid(&cuboid(geom, n), &pose, &cell, 200, 2000)).abs(),
            );
            sum += w;
        }
        out.push(Check {
            suite: Suite::Weights3d,
            case,
            quantity: "multiline_error",
            value: worst,
            tolerance: 1e-4,
        });
        out.push(Check {
            suite: Suite::Weights3d,
            case,
            quantity: "sum_excess",
            value: sum - 1.0,
            tolerance: 1e-8,
        });
    }
    Ok(out)
}

fn unit_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn adjoint(
    geom: &ScanGeometry,
    samples: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Vec<Check>> {
    let w = build_system_matrix(geom, Mode::Consistent)?;
    let norm = spectral_norm(&w, 100, seed)?;
    let tolerance = if geom.is_3d() { 1e-13 } else { 1e-14 };
    Ok((0..samples)
        .map(|case| {
            let (u, p) = (unit_vector(w.n_cols, rng), unit_vector(w.n_rows, rng));
            Check {
                suite: Suite::Adjoint,
                case,
                quantity: "relative_mismatch",
                value: adjoint_mismatch(&w, &u, &p, norm),
                tolerance,
            }
        })
        .collect())
}

fn rel(l: f64, r: f64, scale: f64) -> f64 {
    (l - r).abs() / scale.max(l.abs()).max(r.abs()).max(f64::MIN_POSITIVE)
}

fn identities(geom: &ScanGeometry, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    // The factors only need an axial pitch; 2D configs get a nominal one.
    let g = match geom.axial {
        Some(_) => geom.clone(),
        None => geom.clone().with_axial(AxialGeometry {
            dz: geom.dy,
            n_det_z: 2,
            c: geom.a,
            nz: 1,
        })?,
    };
    let (a, b, s) = (g.a, g.b, g.s);
    let mut out = Vec::new();
    let mut case = 0;
    while case < samples {
        let n = g.voxel_index(rng.gen_range(0..g.n_voxels()));
        let phi: f64 = rng.gen_range(-3.1..3.1);
        let beta: f64 = rng.gen_range(-0.08..0.08);
        let ta = rng.gen_range(0.002..0.05) * if rng.gen() { 1.0 } else { -1.0 };
        let (sp, cp) = phi.sin_cos();
        let (x0, x1, y0) = (n.nx as f64 * a, (n.nx + 1) as f64 * a, n.ny as f64 * b);
        let degenerate = [sp, cp, (phi - beta).sin(), (phi - beta).cos()]
            .iter()
            .any(|v| v.abs() < 1e-2)
            || (s * sp - y0).abs() < 1e-2 * s;
        if degenerate {
            continue;
        }
        let t = factors_at(beta, ta, n, phi, &g)?;
        let g1 = point_angle(x0, y0, phi, &g)?;
        let g2 = point_angle(x1, y0, phi, &g)?;
        let (r, q, sg) = (
            (phi - beta).cos() / beta.cos(),
            (phi - beta).sin() / beta.cos(),
            (g1 - g2).sin(),
        );
        let cot = |x: f64| 1.0 / x.tan();
        let values = [
            (
                "f_minus_g",
                rel(
                    t.g - t.f,
                    beta.cos() / (phi - beta).cos(),
                    t.g.abs().max(t.f.abs()),
                ),
            ),
            (
                "gi_gg",
                rel(
                    cp * r * t.g + sp * q * t.h,
                    t.g_g,
                    (cp * r * t.g).abs().max((sp * q * t.h).abs()),
                ),
            ),
            (
                "cot_diff",
                rel(
                    cot(phi - g1) - cot(phi - g2),
                    a / (s * sp - y0),
                    cot(phi - g1).abs().max(cot(phi - g2).abs()),
                ),
            ),
            (
                "sin_phi_ny_b",
                rel(
                    s * sp - y0,
                    a * (phi - g2).sin() * (phi - g1).sin() / sg,
                    0.0,
                ),
            ),
            (
                "cos_phi_nx_a",
                rel(
                    s * cp - x0,
                    a * (phi - g2).sin() * (phi - g1).cos() / sg,
                    0.0,
                ),
            ),
            (
                "cos_phi_nx1_a",
                rel(
                    s * cp - x1,
                    a * (phi - g2).cos() * (phi - g1).sin() / sg,
                    0.0,
                ),
            ),
        ];
        for (quantity, value) in values {
            out.push(Check {
                suite: Suite::Identities,
                case,
                quantity,
                value,
                tolerance: 1e-11,
            });
        }
        case += 1;
    }
    Ok(out)
}
