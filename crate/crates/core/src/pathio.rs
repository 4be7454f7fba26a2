//! `SPDE1` binary path format.
//!
//! Layout (little-endian): magic `b"SPDE1"`, `u32` version, `f64` lambda,
//! `f64` T, `f64` dt, `u64` n, `u64` n_steps, `u8` has_noise_record, the frames
//! row-major as `f64`, then the noise record row-major as `f64` if flagged.
//!
//! The format does not carry `Λ̄`; paths are read back on the default
//! reference interval `(-1/2, 1/2)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{SpaceTimePath, SpatialGrid, DEFAULT_UNIT_INTERVAL};

pub const MAGIC: &[u8; 5] = b"SPDE1";
pub const VERSION: u32 = 1;

pub fn write_path<W: Write>(path: &SpaceTimePath, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&path.lambda().to_le_bytes())?;
    w.write_all(&path.horizon().to_le_bytes())?;
    w.write_all(&path.dt().to_le_bytes())?;
    w.write_all(&(path.grid().n() as u64).to_le_bytes())?;
    w.write_all(&(path.n_steps() as u64).to_le_bytes())?;
    let noise = path.noise_record();
    w.write_all(&[noise.is_some() as u8])?;
    write_f64s(&mut w, path.frames())?;
    if let Some(xi) = noise {
        write_f64s(&mut w, xi)?;
    }
    w.flush()?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_path<R: Read>(mut r: R) -> Result<SpaceTimePath> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("missing SPDE1 magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SPDE1 version {version}")));
    }
    let lambda = f64::from_le_bytes(read_array(&mut r)?);
    let horizon = f64::from_le_bytes(read_array(&mut r)?);
    let dt = f64::from_le_bytes(read_array(&mut r)?);
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let n_steps = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let [flag] = read_array::<1, _>(&mut r)?;
    if flag > 1 {
        return Err(Error::Format(format!("invalid noise flag {flag}")));
    }
    let grid = SpatialGrid::with_cells(lambda, DEFAULT_UNIT_INTERVAL, n)?;
    let frames = read_f64s(&mut r, (n_steps + 1) * n)?;
    let noise = if flag == 1 { Some(read_f64s(&mut r, n_steps * n)?) } else { None };
    SpaceTimePath::new(grid, horizon, dt, frames, noise)
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(b)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_path(path: &SpaceTimePath, file: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(file)?);
    write_path(path, f)
}

pub fn load_path(file: &Path) -> Result<SpaceTimePath> {
    let f = std::io::BufReader::new(std::fs::File::open(file)?);
    read_path(f)
}
