//! Binary containers.
//!
//! Tensor (`CTT1`): magic, `u32` rank, `rank` x `u64` dims (x fastest), then
//! `f64` values. Matrix (`CSM1`): magic, `u64` rows, cols, nnz, then `rows + 1`
//! `u64` row offsets, `nnz` `u64` column indices, `nnz` `f64` values, then a
//! `u64` byte length and a UTF-8 `key=value` text block holding the geometry,
//! assembly mode and normalization. All integers and floats are little-endian.

use crate::error::{CtError, Result};
use crate::geometry::{AxialGeometry, ScanGeometry};
use crate::projector::{Mode, SparseSystemMatrix};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"CTT1";
const MATRIX_MAGIC: &[u8; 4] = b"CSM1";

/// N-dimensional array of `f64`, first dimension fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(CtError::DimensionMismatch {
                expected: n,
                got: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }
}

fn fmt_err(msg: &str) -> CtError {
    CtError::Format(msg.to_string())
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| fmt_err("truncated file"))?;
        Ok(b)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| fmt_err("size does not fit in memory"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.bytes()?)))
            .collect()
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
    for &d in &t.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: R) -> Result<Tensor> {
    let mut r = Reader(r);
    if &r.bytes::<4>()? != TENSOR_MAGIC {
        return Err(fmt_err("not a CTT1 tensor"));
    }
    let rank = u32::from_le_bytes(r.bytes()?) as usize;
    let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fmt_err("tensor too large"))?;
    let data = r.f64s(n)?;
    Tensor::new(dims, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)?;
    f.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_tensor(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// `key=value` description of a geometry with an explicit angle list.
pub fn geometry_to_text(g: &ScanGeometry) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "s={}\nd={}\ndy={}\nndy={}\na={}\nb={}\nnx={}\nny={}",
        g.s, g.d, g.dy, g.n_det_y, g.a, g.b, g.nx, g.ny
    );
    if let Some(ax) = &g.axial {
        let _ = writeln!(
            out,
            "dz={}\nndz={}\nc={}\nnz={}",
            ax.dz, ax.n_det_z, ax.c, ax.nz
        );
    }
    let angles: Vec<String> = g.angles.iter().map(|a| a.to_string()).collect();
    let _ = writeln!(out, "angles={}", angles.join(","));
    out
}

fn parse_kv(text: &str) -> Result<std::collections::BTreeMap<&str, &str>> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| fmt_err("metadata line without '='"))?;
        if map.insert(k, v).is_some() {
            return Err(fmt_err("duplicate metadata key"));
        }
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &std::collections::BTreeMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| fmt_err(&format!("missing metadata '{key}'")))?
        .parse()
        .map_err(|_| fmt_err(&format!("bad metadata '{key}'")))
}

pub fn geometry_from_text(text: &str) -> Result<ScanGeometry> {
    let m = parse_kv(text)?;
    let angles_raw: &str = m.get("angles").copied().unwrap_or("");
    let angles = if angles_raw.is_empty() {
        Vec::new()
    } else {
        angles_raw
            .split(',')
            .map(|a| a.parse::<f64>().map_err(|_| fmt_err("bad angle")))
            .collect::<Result<_>>()?
    };
    let g = ScanGeometry::new_2d(
        get(&m, "s")?,
        get(&m, "d")?,
        get(&m, "dy")?,
        get(&m, "ndy")?,
        get(&m, "a")?,
        get(&m, "b")?,
        get(&m, "nx")?,
        get(&m, "ny")?,
        angles,
    )?;
    if !m.contains_key("nz") {
        return Ok(g);
    }
    g.with_axial(AxialGeometry {
        dz: get(&m, "dz")?,
        n_det_z: get(&m, "ndz")?,
        c: get(&m, "c")?,
        nz: get(&m, "nz")?,
    })
}

pub fn write_matrix<W: Write>(w: &mut W, m: &SparseSystemMatrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    for v in [m.n_rows, m.n_cols, m.nnz()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for &o in &m.row_ptr {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &c in &m.cols {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for v in &m.vals {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut meta = m
        .geometry
        .as_ref()
        .map(geometry_to_text)
        .unwrap_or_default();
    if let Some(mode) = m.mode {
        let _ = writeln!(meta, "mode={mode}");
    }
    let _ = writeln!(meta, "normalization={}", m.normalization);
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<SparseSystemMatrix> {
    let mut r = Reader(r);
    if &r.bytes::<4>()? != MATRIX_MAGIC {
        return Err(fmt_err("not a CSM1 matrix"));
    }
    let (n_rows, n_cols, nnz) = (r.usize()?, r.usize()?, r.usize()?);
    let row_ptr = (0..=n_rows)
        .map(|_| r.usize())
        .collect::<Result<Vec<_>>>()?;
    let cols = (0..nnz)
        .map(|_| {
            let c = r.u64()?;
            if c >= n_cols as u64 {
                return Err(fmt_err("column index out of range"));
            }
            Ok(c as u32)
        })
        .collect::<Result<Vec<_>>>()?;
    let vals = r.f64s(nnz)?;
    if row_ptr[0] != 0 || row_ptr[n_rows] != nnz || row_ptr.windows(2).any(|p| p[0] > p[1]) {
        return Err(fmt_err("inconsistent row offsets"));
    }
    let len = r.usize()?;
    let mut meta = vec![0u8; len];
    r.0.read_exact(&mut meta)
        .map_err(|_| fmt_err("truncated metadata"))?;
    let meta = String::from_utf8(meta).map_err(|_| fmt_err("metadata is not UTF-8"))?;
    let map = parse_kv(&meta)?;
    let geometry = if map.contains_key("s") {
        Some(geometry_from_text(&meta_without(
            &meta,
            &["mode", "normalization"],
        ))?)
    } else {
        None
    };
    let mode = match map.get("mode") {
        Some(s) => Some(s.parse::<Mode>()?),
        None => None,
    };
    let normalization = get(&map, "normalization")?;
    Ok(SparseSystemMatrix {
        n_rows,
        n_cols,
        row_ptr,
        cols,
        vals,
        geometry,
        mode,
        normalization,
    })
}

fn meta_without(meta: &str, keys: &[&str]) -> String {
    meta.lines()
        .filter(|l| {
            !keys
                .iter()
                .any(|k| l.split_once('=').is_some_and(|(lk, _)| lk == *k))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn save_matrix(path: &Path, m: &SparseSystemMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<SparseSystemMatrix> {
    read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))
}
