//! Single-file NIfTI-1 subset: uint8 / float32 / float64, no compression,
//! axis-aligned sform geometry.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::constraint::MaskRegion;
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::scalar::{Real, Vec3};

use super::Image3D;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
pub const NIFTI_INTENT_DISPVECT: i16 = 1006;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Float32,
    Float64,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Float32 => 16,
            NiftiDatatype::Float64 => 64,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            16 => Ok(NiftiDatatype::Float32),
            64 => Ok(NiftiDatatype::Float64),
            other => Err(Error::parse("datatype", format!("unsupported datatype code {other}"))),
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Float32 => 4,
            NiftiDatatype::Float64 => 8,
        }
    }

    fn native<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            NiftiDatatype::Float32
        } else {
            NiftiDatatype::Float64
        }
    }
}

struct Header {
    dims: [usize; 3],
    components: usize,
    datatype: NiftiDatatype,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    spacing: [f64; 3],
    origin: [f64; 3],
}

fn build_header(grid_spacing: [f64; 3], origin: [f64; 3], dims: [usize; 3], components: usize, dt: NiftiDatatype, intent: i16) -> Vec<u8> {
    type E = LittleEndian;
    let mut h = vec![0u8; VOX_OFFSET];
    E::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    let mut dim = [1i16; 8];
    if components == 1 {
        dim[0] = 3;
    } else {
        dim[0] = 5;
        dim[5] = components as i16;
    }
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
    }
    E::write_i16(&mut h[68..70], intent);
    E::write_i16(&mut h[70..72], dt.code());
    E::write_i16(&mut h[72..74], (dt.bytes() * 8) as i16);
    let mut pixdim = [1.0f32; 8];
    for a in 0..3 {
        pixdim[a + 1] = grid_spacing[a] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p);
    }
    E::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    E::write_f32(&mut h[112..116], 1.0);
    h[123] = 2; // mm
    E::write_i16(&mut h[252..254], 0);
    E::write_i16(&mut h[254..256], 2); // aligned
    for row in 0..3 {
        let off = 280 + 16 * row;
        for col in 0..3 {
            let v = if row == col { grid_spacing[row] } else { 0.0 };
            E::write_f32(&mut h[off + 4 * col..off + 4 * col + 4], v as f32);
        }
        E::write_f32(&mut h[off + 12..off + 16], origin[row] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn parse_header(bytes: &[u8]) -> Result<(Header, bool)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::parse("sizeof_hdr", format!("file has {} bytes, header needs 348", bytes.len())));
    }
    let le = LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    if !le && BigEndian::read_i32(&bytes[0..4]) != HEADER_SIZE as i32 {
        return Err(Error::parse("sizeof_hdr", "expected 348 in either byte order"));
    }
    let i16_at = |o: usize| if le { LittleEndian::read_i16(&bytes[o..o + 2]) } else { BigEndian::read_i16(&bytes[o..o + 2]) };
    let f32_at = |o: usize| if le { LittleEndian::read_f32(&bytes[o..o + 4]) } else { BigEndian::read_f32(&bytes[o..o + 4]) } as f64;
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::parse("magic", format!("expected \"n+1\\0\", found {:?}", &bytes[344..348])));
    }
    let dim: Vec<i16> = (0..8).map(|i| i16_at(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::parse("dim", format!("dim[0] = {ndim}")));
    }
    let get = |i: usize| if (i as i16) <= ndim { dim[i].max(1) as usize } else { 1 };
    if get(4) != 1 || get(6) != 1 || get(7) != 1 {
        return Err(Error::parse("dim", "time series and higher dimensions are not supported"));
    }
    if dim[1..=3.min(ndim as usize)].iter().any(|&d| d < 1) {
        return Err(Error::parse("dim", "nonpositive spatial size"));
    }
    let dims = [get(1), get(2), get(3)];
    let components = get(5);
    let datatype = NiftiDatatype::from_code(i16_at(70))?;
    let vox = f32_at(108);
    if !(vox >= HEADER_SIZE as f64) || vox.fract() != 0.0 {
        return Err(Error::parse("vox_offset", format!("invalid offset {vox}")));
    }
    let mut slope = f32_at(112);
    let mut inter = f32_at(116);
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
        inter = 0.0;
    }
    let sform = i16_at(254);
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    if sform > 0 {
        for row in 0..3 {
            let off = 280 + 16 * row;
            let r: Vec<f64> = (0..4).map(|c| f32_at(off + 4 * c)).collect();
            let scale = r[..3].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (col, v) in r[..3].iter().enumerate() {
                if col != row && v.abs() > 1e-6 * scale {
                    return Err(Error::parse("srow", "rotated or sheared sform is not supported"));
                }
            }
            if !(r[row] > 0.0) {
                return Err(Error::parse("srow", "flipped or degenerate axis is not supported"));
            }
            spacing[row] = r[row];
            origin[row] = r[3];
        }
    } else {
        for a in 0..3 {
            spacing[a] = f32_at(80 + 4 * a).abs();
            if !(spacing[a] > 0.0) {
                return Err(Error::parse("pixdim", "nonpositive voxel size"));
            }
        }
    }
    Ok((
        Header {
            dims,
            components,
            datatype,
            vox_offset: vox as usize,
            slope,
            inter,
            spacing,
            origin,
        },
        le,
    ))
}

fn decode(bytes: &[u8], h: &Header, le: bool) -> Result<Vec<f64>> {
    let n = h.dims[0] * h.dims[1] * h.dims[2] * h.components;
    let need = h.vox_offset + n * h.datatype.bytes();
    if bytes.len() < need {
        return Err(Error::parse("data", format!("truncated: need {need} bytes, found {}", bytes.len())));
    }
    let raw = &bytes[h.vox_offset..need];
    let mut out = Vec::with_capacity(n);
    match h.datatype {
        NiftiDatatype::Uint8 => out.extend(raw.iter().map(|&b| b as f64)),
        NiftiDatatype::Float32 => {
            for c in raw.chunks_exact(4) {
                out.push(if le { LittleEndian::read_f32(c) } else { BigEndian::read_f32(c) } as f64);
            }
        }
        NiftiDatatype::Float64 => {
            for c in raw.chunks_exact(8) {
                out.push(if le { LittleEndian::read_f64(c) } else { BigEndian::read_f64(c) });
            }
        }
    }
    if h.slope != 1.0 || h.inter != 0.0 {
        for v in out.iter_mut() {
            *v = *v * h.slope + h.inter;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse("data", "non-finite voxel value"));
    }
    Ok(out)
}

fn encode(values: impl Iterator<Item = f64>, dt: NiftiDatatype, out: &mut Vec<u8>) -> Result<()> {
    for v in values {
        match dt {
            NiftiDatatype::Uint8 => {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Config(format!("value {v} does not fit uint8")));
                }
                out.push(v as u8);
            }
            NiftiDatatype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            NiftiDatatype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(())
}

fn grid_from<T: Real>(h: &Header) -> Result<VoxelGrid<T>> {
    VoxelGrid::new(h.dims, h.spacing.map(T::lit), h.origin.map(T::lit))
        .map_err(|e| Error::parse("geometry", e.to_string()))
}

fn f64s<T: Real>(v: Vec3<T>) -> [f64; 3] {
    v.map(|x| x.as_f64())
}

/// Writes a scalar volume in the native float type of `T`.
pub fn write_nifti<T: Real>(img: &Image3D<T>, path: impl AsRef<Path>) -> Result<()> {
    write_nifti_as(img, path, NiftiDatatype::native::<T>())
}

pub fn write_nifti_as<T: Real>(img: &Image3D<T>, path: impl AsRef<Path>, dt: NiftiDatatype) -> Result<()> {
    let g = &img.grid;
    let mut buf = build_header(f64s(g.spacing), f64s(g.origin), g.dims, 1, dt, 0);
    encode(img.data().iter().map(|v| v.as_f64()), dt, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_nifti<T: Real>(path: impl AsRef<Path>) -> Result<Image3D<T>> {
    let bytes = fs::read(path)?;
    let (h, le) = parse_header(&bytes)?;
    if h.components != 1 {
        return Err(Error::parse("dim", format!("expected a scalar volume, found {} components", h.components)));
    }
    let data = decode(&bytes, &h, le)?;
    Image3D::new(grid_from(&h)?, data.into_iter().map(T::lit).collect())
}

/// Vector volume (`dim[5] = 3`, displacement intent), component-major.
pub fn write_nifti_vector<T: Real>(grid: &VoxelGrid<T>, comps: [&[T]; 3], path: impl AsRef<Path>) -> Result<()> {
    for c in comps {
        if c.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: c.len(),
            });
        }
    }
    let dt = NiftiDatatype::native::<T>();
    let mut buf = build_header(f64s(grid.spacing), f64s(grid.origin), grid.dims, 3, dt, NIFTI_INTENT_DISPVECT);
    encode(comps.iter().flat_map(|c| c.iter().map(|v| v.as_f64())), dt, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_nifti_vector<T: Real>(path: impl AsRef<Path>) -> Result<(VoxelGrid<T>, [Vec<T>; 3])> {
    let bytes = fs::read(path)?;
    let (h, le) = parse_header(&bytes)?;
    if h.components != 3 {
        return Err(Error::parse("dim", format!("expected 3 components, found {}", h.components)));
    }
    let data = decode(&bytes, &h, le)?;
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let comp = |c: usize| data[c * n..(c + 1) * n].iter().map(|&v| T::lit(v)).collect();
    Ok((grid_from(&h)?, [comp(0), comp(1), comp(2)]))
}

/// Any nonzero voxel is inside.
pub fn read_mask<T: Real>(path: impl AsRef<Path>) -> Result<MaskRegion<T>> {
    let img = read_nifti::<f64>(path)?;
    let occupied = img.data().iter().map(|&v| v != 0.0).collect();
    MaskRegion::new(img.grid.cast(), occupied)
}

pub fn write_mask<T: Real>(mask: &MaskRegion<T>, path: impl AsRef<Path>) -> Result<()> {
    let data = mask.occupied().iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    write_nifti_as(&Image3D::new(mask.grid, data)?, path, NiftiDatatype::Uint8)
}
