//! Test images and noisy sinograms.

use crate::error::{CtError, Result};
use crate::geometry::ScanGeometry;
use crate::projector::{build_system_matrix, Mode, SparseSystemMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    Checkerboard2d,
    Checkerboard3d,
    SheppLogan2d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub resolution: usize,
    pub blocks: usize,
}

/// Checkerboard with `blocks` blocks per axis, 1 in the block at the lowest indices.
pub fn checkerboard(resolution: usize, blocks: usize, dims: usize) -> Result<Vec<f64>> {
    if resolution == 0 || blocks == 0 || !resolution.is_multiple_of(blocks) {
        return Err(CtError::InvalidSpec(format!(
            "resolution {resolution} is not a multiple of {blocks} blocks"
        )));
    }
    let side = resolution / blocks;
    let nz = if dims == 3 { resolution } else { 1 };
    let mut out = Vec::with_capacity(resolution * resolution * nz);
    for k in 0..nz {
        for j in 0..resolution {
            for i in 0..resolution {
                let parity = (i / side + j / side + k / side) % 2;
                out.push((1 - parity) as f64);
            }
        }
    }
    Ok(out)
}

/// Ellipses `(value, a, b, x0, y0, theta in degrees)` of the modified
/// Shepp-Logan phantom on `[-1, 1]^2`.
pub const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Modified Shepp-Logan value at `(x, y)` in `[-1, 1]^2`.
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|&&(_, a, b, x0, y0, th)| {
            let (s, c) = th.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .map(|e| e.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Shepp-Logan sampled at pixel centres, y increasing with the row index.
pub fn shepp_logan(resolution: usize) -> Result<Vec<f64>> {
    if resolution == 0 {
        return Err(CtError::InvalidSpec("resolution must be positive".into()));
    }
    let c = |i: usize| 2.0 * (i as f64 + 0.5) / resolution as f64 - 1.0;
    Ok((0..resolution * resolution)
        .map(|f| shepp_logan_value(c(f % resolution), c(f / resolution)))
        .collect())
}

impl PhantomSpec {
    /// Tensor shape of the phantom, x fastest.
    pub fn dims(&self) -> Vec<usize> {
        let n = self.resolution;
        match self.kind {
            PhantomKind::Checkerboard3d => vec![n, n, n],
            _ => vec![n, n],
        }
    }
}

/// `checkerboard2d:N[:BLOCKS]`, `checkerboard3d:N[:BLOCKS]` or `shepp-logan:N`;
/// checkerboards default to 4 blocks per axis.
impl std::str::FromStr for PhantomSpec {
    type Err = CtError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CtError::InvalidSpec(format!("bad phantom spec {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| {
            parts
                .get(i)
                .map(|v| v.parse::<usize>().map_err(|_| bad()))
                .transpose()
        };
        let kind = match parts[0] {
            "checkerboard2d" => PhantomKind::Checkerboard2d,
            "checkerboard3d" => PhantomKind::Checkerboard3d,
            "shepp-logan" if parts.len() == 2 => PhantomKind::SheppLogan2d,
            _ => return Err(bad()),
        };
        if parts.len() > 3 {
            return Err(bad());
        }
        let resolution = num(1)?.ok_or_else(bad)?;
        Ok(PhantomSpec {
            kind,
            resolution,
            blocks: num(2)?.unwrap_or(4),
        })
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Vec<f64>> {
    match spec.kind {
        PhantomKind::Checkerboard2d => checkerboard(spec.resolution, spec.blocks, 2),
        PhantomKind::Checkerboard3d => checkerboard(spec.resolution, spec.blocks, 3),
        PhantomKind::SheppLogan2d => shepp_logan(spec.resolution),
    }
}

/// Standard normal samples by the Box-Muller transform on ChaCha8 uniforms:
/// `u1, u2` in `[0, 1)`, `r = sqrt(-2 ln(1 - u1))`, emitting `r cos(2 pi u2)`
/// then `r sin(2 pi u2)`.
pub fn gaussian_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out.push(sigma * r * c);
        out.push(sigma * r * s);
    }
    out.truncate(n);
    out
}

/// `W u + e` with `e ~ N(0, sigma^2 I)` drawn from `seed`.
pub fn noisy_projection(
    w: &SparseSystemMatrix,
    u: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut p = w.forward(u)?;
    if sigma > 0.0 {
        let noise = gaussian_noise(p.len(), sigma, seed);
        for (v, e) in p.iter_mut().zip(noise) {
            *v += e;
        }
    }
    Ok(p)
}

/// Sinogram from the consistent system matrix of `geom`.
pub fn make_sinogram(geom: &ScanGeometry, u: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    noisy_projection(
        &build_system_matrix(geom, Mode::Consistent)?,
        u,
        sigma,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_2d_pattern() {
        let c = checkerboard(4, 4, 2).unwrap();
        assert_eq!(
            c,
            vec![1., 0., 1., 0., 0., 1., 0., 1., 1., 0., 1., 0., 0., 1., 0., 1.]
        );
        let big = checkerboard(64, 4, 2).unwrap();
        assert_eq!(big.iter().sum::<f64>() / big.len() as f64, 0.5);
        assert!(checkerboard(10, 4, 2).is_err());
    }

    #[test]
    fn checkerboard_3d_parity() {
        let n = 8;
        let c = checkerboard(n, 4, 3).unwrap();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let want = if (i / 2 + j / 2 + k / 2) % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(c[i + n * (j + n * k)], want);
                }
            }
        }
        assert_eq!(c.iter().sum::<f64>() / c.len() as f64, 0.5);
    }

    #[test]
    fn shepp_logan_centre_and_range() {
        let img = shepp_logan(40).unwrap();
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Pixel centres at +-0.025 around the origin: the four central pixels
        // see the same ellipses as the origin (outer two plus none of the small ones).
        let direct: f64 = SHEPP_LOGAN
            .iter()
            .filter(|e| (e.3 / e.1).powi(2) + (e.4 / e.2).powi(2) <= 1.0)
            .map(|e| e.0)
            .sum();
        assert!((img[20 + 40 * 20] - direct).abs() < 1e-15);
        assert!((direct - 0.2).abs() < 1e-12);
    }

    #[test]
    fn spec_parsing() {
        let s: PhantomSpec = "checkerboard3d:32".parse().unwrap();
        assert_eq!(
            s,
            PhantomSpec {
                kind: PhantomKind::Checkerboard3d,
                resolution: 32,
                blocks: 4
            }
        );
        assert_eq!(s.dims(), vec![32, 32, 32]);
        let s: PhantomSpec = "checkerboard2d:12:3".parse().unwrap();
        assert_eq!((s.resolution, s.blocks, s.dims()), (12, 3, vec![12, 12]));
        assert_eq!(
            "shepp-logan:40".parse::<PhantomSpec>().unwrap().kind,
            PhantomKind::SheppLogan2d
        );
        for bad in [
            "",
            "disk:4",
            "shepp-logan",
            "checkerboard2d:x",
            "checkerboard2d:8:2:1",
            "shepp-logan:4:2",
        ] {
            assert!(bad.parse::<PhantomSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let e = gaussian_noise(3600, 1e-4, 11);
        assert_eq!(e, gaussian_noise(3600, 1e-4, 11));
        assert_ne!(e, gaussian_noise(3600, 1e-4, 12));
        let mean = e.iter().sum::<f64>() / 3600.0;
        let std = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3599.0).sqrt();
        assert!((std - 1e-4).abs() < 1e-5, "{std}");
        assert_eq!(gaussian_noise(5, 1.0, 3).len(), 5);
    }

    #[test]
    fn sinogram_without_noise_is_forward() {
        let g = ScanGeometry::new_2d(250.0, 250.0, 0.75, 30, 1.0, 1.0, 8, 8, vec![0.0, 1.0, 2.0])
            .unwrap();
        let u = checkerboard(8, 4, 2).unwrap();
        let w = build_system_matrix(&g, Mode::Consistent).unwrap();
        assert_eq!(
            make_sinogram(&g, &u, 0.0, 1).unwrap(),
            w.forward(&u).unwrap()
        );
        assert!(make_sinogram(&g, &vec![0.0; 64], 0.0, 1)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(
            make_sinogram(&g, &u, 1e-4, 5).unwrap(),
            make_sinogram(&g, &u, 1e-4, 5).unwrap()
        );
    }
}
