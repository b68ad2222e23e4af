//! Middlebury `.flo` dense flow files.
//!
//! Layout, all little-endian: the float magic 202021.25, `i32` width,
//! `i32` height, then `height * width` interleaved `(u, v)` `f32` pairs in
//! row-major order. Write∘read and read∘write are bit-exact on finite data.

use super::{DatasetError, FlowField};
use crate::grid::Grid;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

const FLO_MAGIC: f32 = 202021.25;
const MAX_DIMENSION: i32 = 1 << 20;

pub fn write_flow_file(field: &FlowField, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_f32::<LittleEndian>(FLO_MAGIC).map_err(io_err)?;
    w.write_i32::<LittleEndian>(field.width() as i32).map_err(io_err)?;
    w.write_i32::<LittleEndian>(field.height() as i32).map_err(io_err)?;
    for i in 0..field.u.len() {
        w.write_f32::<LittleEndian>(field.u.as_slice()[i] as f32).map_err(io_err)?;
        w.write_f32::<LittleEndian>(field.v.as_slice()[i] as f32).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_flow_file(path: &Path) -> Result<FlowField, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let magic = r.read_f32::<LittleEndian>().map_err(io_err)?;
    if magic != FLO_MAGIC {
        return Err(DatasetError::FlowMagic { got: magic });
    }
    let width = r.read_i32::<LittleEndian>().map_err(io_err)?;
    let height = r.read_i32::<LittleEndian>().map_err(io_err)?;
    if width <= 0 || height <= 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(DatasetError::FlowDimensions {
            got_w: width,
            got_h: height,
        });
    }
    let (width, height) = (width as usize, height as usize);
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    let mut validity = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let fu = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        let fv = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        let ok = fu.is_finite() && fv.is_finite();
        u.push(fu);
        v.push(fv);
        validity.push(ok);
    }
    Ok(FlowField::new(
        Grid::from_vec(width, height, u),
        Grid::from_vec(width, height, v),
        Grid::from_vec(width, height, validity),
    ))
}
