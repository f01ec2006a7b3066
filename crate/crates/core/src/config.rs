//! Flat `key=value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Unknown or repeated keys are errors. Serialization writes the
//! present keys in a fixed order and uses the shortest round-tripping float
//! representation, so parse -> write -> parse is lossless.

use crate::error::{CtError, Result};
use crate::geometry::{AxialGeometry, ScanGeometry};
use std::f64::consts::TAU;
use std::fmt::Write as _;

macro_rules! config_struct {
    ($($key:ident: $ty:ty),* $(,)?) => {
        /// Parsed configuration. Absent keys are `None`.
        #[derive(Clone, Debug, Default, PartialEq)]
        pub struct Config {
            $(pub $key: Option<$ty>,)*
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        if self.$key.is_some() {
                            return Err(CtError::InvalidConfig(format!("duplicate key '{key}'")));
                        }
                        let v = value.parse::<$ty>().map_err(|_| CtError::InvalidConfig(format!("bad value '{value}' for '{key}'")))?;
                        self.$key = Some(v);
                    })*
                    _ => return Err(CtError::InvalidConfig(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(if let Some(v) = &self.$key {
                    let _ = writeln!(out, "{}={}", stringify!($key), v);
                })*
                out
            }
        }
    };
}

config_struct! {
    s: f64, d: f64, dy: f64, dz: f64,
    ndy: usize, ndz: usize, np: usize,
    angle_start: f64, angle_end: f64,
    a: f64, b: f64, c: f64,
    nx: usize, ny: usize, nz: usize,
    lambda: f64, max_iter: usize, tol: f64, sigma: f64, seed: u64,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CtError::InvalidConfig(format!("line {}: expected key=value", no + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Gantry angles `start + k (end - start) / np`, defaulting to a full turn.
    pub fn angles(&self) -> Result<Vec<f64>> {
        let np = need(self.np, "np")?;
        let start = self.angle_start.unwrap_or(0.0);
        let end = self.angle_end.unwrap_or(TAU);
        Ok((0..np)
            .map(|k| start + k as f64 * (end - start) / np as f64)
            .collect())
    }

    /// Scan geometry; 3D exactly when any of `dz`, `ndz`, `c`, `nz` is given.
    pub fn geometry(&self) -> Result<ScanGeometry> {
        let g = ScanGeometry::new_2d(
            need(self.s, "s")?,
            need(self.d, "d")?,
            need(self.dy, "dy")?,
            need(self.ndy, "ndy")?,
            need(self.a, "a")?,
            need(self.b, "b")?,
            need(self.nx, "nx")?,
            need(self.ny, "ny")?,
            self.angles()?,
        )?;
        if self.dz.is_none() && self.ndz.is_none() && self.c.is_none() && self.nz.is_none() {
            return Ok(g);
        }
        g.with_axial(AxialGeometry {
            dz: need(self.dz, "dz")?,
            n_det_z: need(self.ndz, "ndz")?,
            c: need(self.c, "c")?,
            nz: need(self.nz, "nz")?,
        })
    }

    pub fn lambda_or_default(&self) -> f64 {
        self.lambda.unwrap_or(1e-4)
    }
    pub fn max_iter_or_default(&self) -> usize {
        self.max_iter.unwrap_or(1000)
    }
    pub fn tol_or_default(&self) -> f64 {
        self.tol.unwrap_or(1e-9)
    }
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| CtError::InvalidConfig(format!("missing key '{key}'")))
}
