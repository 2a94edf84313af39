//! Binary container and JSON mirror for velocity fields.
//!
//! Binary layout, all little endian:
//!
//! | offset | type      | content                                              |
//! |--------|-----------|------------------------------------------------------|
//! | 0      | [u8; 4]   | magic `DCSV`                                         |
//! | 4      | u32       | format version (1)                                   |
//! | 8      | u32       | field family: 0 divergence-conforming, 1 classical   |
//! | 12     | u32       | order (divergence order, or basis order)             |
//! | 16     | 3 x 24 B  | per axis x, y, z: spacing f64, origin f64, cells u64 |
//! | 88     |           | per component x, y, z: length u64, then f64 values   |
//!
//! Coefficient arrays are stored x-fastest, in the flat-vector order of
//! [`SplineVelocity::coefficient_vector`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::bspline1d::{KnotAxis, SplineOrder};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{ClassicalSvf, ControlGrid, DivConformingSvf, SplineVelocity};

pub const SVF_MAGIC: [u8; 4] = *b"DCSV";
pub const SVF_VERSION: u32 = 1;

/// A field of either family, as read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySvf<T> {
    DivConforming(DivConformingSvf<T>),
    Classical(ClassicalSvf<T>),
}

impl<T: Real> AnySvf<T> {
    pub fn into_conforming(self) -> Result<DivConformingSvf<T>> {
        match self {
            AnySvf::DivConforming(s) => Ok(s),
            AnySvf::Classical(_) => Err(Error::Unsupported(
                "expected a divergence-conforming field, found a classical one".into(),
            )),
        }
    }
}

fn family_code(family: &str) -> u32 {
    match family {
        "classical" => 1,
        _ => 0,
    }
}

pub fn write_svf<T: Real, F: SplineVelocity<T>, W: Write>(svf: &F, mut w: W) -> Result<()> {
    w.write_all(&SVF_MAGIC)?;
    w.write_u32::<LittleEndian>(SVF_VERSION)?;
    w.write_u32::<LittleEndian>(family_code(svf.family()))?;
    let grid = svf.grid();
    w.write_u32::<LittleEndian>(grid.order.get() as u32)?;
    for ax in &grid.axes {
        w.write_f64::<LittleEndian>(ax.spacing().as_f64())?;
        w.write_f64::<LittleEndian>(ax.origin().as_f64())?;
        w.write_u64::<LittleEndian>(ax.knot_count() as u64)?;
    }
    for comp in svf.components() {
        w.write_u64::<LittleEndian>(comp.len() as u64)?;
        for &c in comp.coeffs() {
            w.write_f64::<LittleEndian>(c.as_f64())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truncated(field: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::parse(field, format!("truncated container ({e})"))
}

pub fn read_svf<T: Real, R: Read>(mut r: R) -> Result<AnySvf<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != SVF_MAGIC {
        return Err(Error::parse("magic", format!("expected {SVF_MAGIC:?}, found {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != SVF_VERSION {
        return Err(Error::parse("version", format!("unsupported version {version}")));
    }
    let kind = r.read_u32::<LittleEndian>().map_err(truncated("kind"))?;
    let order = r.read_u32::<LittleEndian>().map_err(truncated("order"))?;
    let order = SplineOrder::new(order as usize)
        .map_err(|e| Error::parse("order", e.to_string()))?;
    let mut axes = Vec::with_capacity(3);
    for _ in 0..3 {
        let spacing = r.read_f64::<LittleEndian>().map_err(truncated("axis spacing"))?;
        let origin = r.read_f64::<LittleEndian>().map_err(truncated("axis origin"))?;
        let count = r.read_u64::<LittleEndian>().map_err(truncated("axis count"))?;
        axes.push(
            KnotAxis::new(T::lit(spacing), count as usize, T::lit(origin))
                .map_err(|e| Error::parse("axis", e.to_string()))?,
        );
    }
    let grid = ControlGrid::new([axes[0], axes[1], axes[2]], order);
    let mut comps: [Vec<T>; 3] = Default::default();
    for comp in comps.iter_mut() {
        let n = r.read_u64::<LittleEndian>().map_err(truncated("component length"))? as usize;
        let mut data = Vec::with_capacity(n.min(1 << 26));
        for _ in 0..n {
            data.push(T::lit(r.read_f64::<LittleEndian>().map_err(truncated("coefficients"))?));
        }
        *comp = data;
    }
    assemble(kind, grid, comps)
}

fn assemble<T: Real>(kind: u32, grid: ControlGrid<T>, comps: [Vec<T>; 3]) -> Result<AnySvf<T>> {
    let theta: Vec<T> = comps.concat();
    match kind {
        0 => Ok(AnySvf::DivConforming(DivConformingSvf::from_coefficient_vector(grid, &theta)?)),
        1 => {
            let svf = ClassicalSvf::from_coefficient_vector(grid, &theta)?;
            let lens: Vec<usize> = svf.components().iter().map(|c| c.len()).collect();
            if lens != comps.iter().map(Vec::len).collect::<Vec<_>>() {
                return Err(Error::parse("component length", "per-component sizes mismatch"));
            }
            Ok(AnySvf::Classical(svf))
        }
        other => Err(Error::parse("kind", format!("unknown field family {other}"))),
    }
}

pub fn save_svf<T: Real, F: SplineVelocity<T>>(svf: &F, path: impl AsRef<Path>) -> Result<()> {
    write_svf(svf, BufWriter::new(File::create(path)?))
}

pub fn load_svf<T: Real>(path: impl AsRef<Path>) -> Result<AnySvf<T>> {
    read_svf(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AxisDoc {
    pub spacing: f64,
    pub origin: f64,
    pub knot_count: usize,
}

/// JSON mirror of the binary container.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SvfDocument {
    pub format: String,
    pub version: u32,
    pub family: String,
    pub order: usize,
    pub axes: [AxisDoc; 3],
    pub components: [Vec<f64>; 3],
}

pub fn to_document<T: Real, F: SplineVelocity<T>>(svf: &F) -> SvfDocument {
    let g = svf.grid();
    let axis = |a: usize| AxisDoc {
        spacing: g.axes[a].spacing().as_f64(),
        origin: g.axes[a].origin().as_f64(),
        knot_count: g.axes[a].knot_count(),
    };
    let comp = |c: usize| svf.components()[c].coeffs().iter().map(|v| v.as_f64()).collect();
    SvfDocument {
        format: "divreg-svf".into(),
        version: SVF_VERSION,
        family: svf.family().into(),
        order: g.order.get(),
        axes: [axis(0), axis(1), axis(2)],
        components: [comp(0), comp(1), comp(2)],
    }
}

pub fn from_document<T: Real>(doc: &SvfDocument) -> Result<AnySvf<T>> {
    if doc.version != SVF_VERSION {
        return Err(Error::parse("version", format!("unsupported version {}", doc.version)));
    }
    let order = SplineOrder::new(doc.order)?;
    let mut axes = Vec::with_capacity(3);
    for a in &doc.axes {
        axes.push(KnotAxis::new(T::lit(a.spacing), a.knot_count, T::lit(a.origin))?);
    }
    let grid = ControlGrid::new([axes[0], axes[1], axes[2]], order);
    let kind = match doc.family.as_str() {
        "div-conforming" => 0,
        "classical" => 1,
        other => return Err(Error::parse("family", format!("unknown field family {other}"))),
    };
    let comps = doc.components.clone().map(|c| c.into_iter().map(T::lit).collect());
    assemble(kind, grid, comps)
}

pub fn save_svf_json<T: Real, F: SplineVelocity<T>>(svf: &F, path: impl AsRef<Path>) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, &to_document(svf))?;
    Ok(())
}

pub fn load_svf_json<T: Real>(path: impl AsRef<Path>) -> Result<AnySvf<T>> {
    let doc: SvfDocument = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    from_document(&doc)
}
