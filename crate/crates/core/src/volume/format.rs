//! The `LAYERVOL` container: a small text header followed by raw samples.
//!
//! ```text
//! LAYERVOL 1
//! dims=512 496 19
//! axial_um=3.87
//! lateral_x_um=11.72
//! lateral_z_um=315.79
//! dtype=u16
//!
//! <little-endian samples, y-fastest, then x, then z>
//! ```
//!
//! Volumes use `dtype=u16`. The same container carries 2-D `f64` grids
//! (thickness maps) as a single axial slice with `dims=nx 1 nz`.

use std::fs;
use std::path::Path;

use super::{Dims, Volume, VolumeError};

const MAGIC: &str = "LAYERVOL";
const VERSION: &str = "1";

/// A 2-D `f64` grid over lateral positions, stored in the volume container
/// as a single axial slice (`dims = nx 1 nz`, `dtype=f64`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSlice {
    pub nx: usize,
    pub nz: usize,
    pub lateral_x_um: f64,
    pub lateral_z_um: f64,
    /// Values in x-fastest order: `values[z * nx + x]`.
    pub values: Vec<f64>,
}

struct Header {
    dims: Dims,
    axial_um: f64,
    lateral_x_um: f64,
    lateral_z_um: f64,
    dtype: String,
}

fn format_header(h: &Header) -> String {
    format!(
        "{MAGIC} {VERSION}\ndims={} {} {}\naxial_um={}\nlateral_x_um={}\nlateral_z_um={}\ndtype={}\n\n",
        h.dims.nx, h.dims.ny, h.dims.nz, h.axial_um, h.lateral_x_um, h.lateral_z_um, h.dtype
    )
}

/// Splits raw file bytes into a parsed header and the payload slice.
fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8]), VolumeError> {
    // The header is ASCII up to the first blank line.
    let sep = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| VolumeError::Header("missing blank line after header".into()))?;
    let text = std::str::from_utf8(&bytes[..sep])
        .map_err(|_| VolumeError::Header("header is not valid UTF-8".into()))?;
    let payload = &bytes[sep + 2..];

    let mut lines = text.lines();
    let magic = lines
        .next()
        .ok_or_else(|| VolumeError::Header("empty header".into()))?;
    let mut magic_parts = magic.split_ascii_whitespace();
    if magic_parts.next() != Some(MAGIC) {
        return Err(VolumeError::Header(format!("bad magic line `{magic}`")));
    }
    let version = magic_parts.next().unwrap_or("");
    if version != VERSION {
        return Err(VolumeError::UnsupportedVersion(version.to_string()));
    }

    let mut dims = None;
    let mut axial_um = None;
    let mut lateral_x_um = None;
    let mut lateral_z_um = None;
    let mut dtype = None;
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| VolumeError::Header(format!("expected key=value, got `{line}`")))?;
        match key {
            "dims" => {
                let parts: Vec<usize> = value
                    .split_ascii_whitespace()
                    .map(|p| p.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| VolumeError::Header(format!("bad dims `{value}`")))?;
                if parts.len() != 3 {
                    return Err(VolumeError::Header(format!("dims needs 3 values, got `{value}`")));
                }
                dims = Some(Dims::new(parts[0], parts[1], parts[2]));
            }
            "axial_um" => axial_um = Some(parse_scale(key, value)?),
            "lateral_x_um" => lateral_x_um = Some(parse_scale(key, value)?),
            "lateral_z_um" => lateral_z_um = Some(parse_scale(key, value)?),
            "dtype" => dtype = Some(value.to_string()),
            other => return Err(VolumeError::Header(format!("unknown header key `{other}`"))),
        }
    }

    let missing = |k: &str| VolumeError::Header(format!("missing header key `{k}`"));
    let header = Header {
        dims: dims.ok_or_else(|| missing("dims"))?,
        axial_um: axial_um.ok_or_else(|| missing("axial_um"))?,
        lateral_x_um: lateral_x_um.ok_or_else(|| missing("lateral_x_um"))?,
        lateral_z_um: lateral_z_um.ok_or_else(|| missing("lateral_z_um"))?,
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
    };
    Ok((header, payload))
}

fn parse_scale(key: &str, value: &str) -> Result<f64, VolumeError> {
    value
        .parse::<f64>()
        .map_err(|_| VolumeError::Header(format!("bad float for `{key}`: `{value}`")))
}

/// Writes a volume to `path` in the `LAYERVOL` container (dtype `u16`).
pub fn write_volume<P: AsRef<Path>>(volume: &Volume, path: P) -> Result<(), VolumeError> {
    let header = Header {
        dims: volume.dims(),
        axial_um: volume.axial_um(),
        lateral_x_um: volume.lateral_x_um(),
        lateral_z_um: volume.lateral_z_um(),
        dtype: "u16".into(),
    };
    let mut bytes = format_header(&header).into_bytes();
    bytes.reserve(volume.data().len() * 2);
    for &sample in volume.data() {
        bytes.extend_from_slice(&sample.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a `dtype=u16` volume from `path`.
pub fn read_volume<P: AsRef<Path>>(path: P) -> Result<Volume, VolumeError> {
    let bytes = fs::read(path)?;
    let (header, payload) = parse_header(&bytes)?;
    if header.dtype != "u16" {
        return Err(VolumeError::Header(format!(
            "expected dtype=u16 for a volume, got `{}`",
            header.dtype
        )));
    }
    let expected = header.dims.len() * 2;
    if payload.len() != expected {
        return Err(VolumeError::PayloadLength {
            expected,
            got: payload.len(),
        });
    }
    let data: Vec<u16> = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(
        header.dims,
        header.axial_um,
        header.lateral_x_um,
        header.lateral_z_um,
        data,
    )
}

/// Writes a 2-D `f64` grid (e.g. a thickness map) in the volume container.
///
/// `axial_um` is carried in the header so that a grid written next to its
/// source volume keeps the full scan geometry; pass the volume's value.
pub fn write_grid<P: AsRef<Path>>(grid: &GridSlice, axial_um: f64, path: P) -> Result<(), VolumeError> {
    if grid.values.len() != grid.nx * grid.nz {
        return Err(VolumeError::DataLength {
            expected: grid.nx * grid.nz,
            got: grid.values.len(),
        });
    }
    let header = Header {
        dims: Dims::new(grid.nx, 1, grid.nz),
        axial_um,
        lateral_x_um: grid.lateral_x_um,
        lateral_z_um: grid.lateral_z_um,
        dtype: "f64".into(),
    };
    let mut bytes = format_header(&header).into_bytes();
    bytes.reserve(grid.values.len() * 8);
    for &v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a `dtype=f64` single-slice grid from `path`.
pub fn read_grid<P: AsRef<Path>>(path: P) -> Result<GridSlice, VolumeError> {
    let bytes = fs::read(path)?;
    let (header, payload) = parse_header(&bytes)?;
    if header.dtype != "f64" {
        return Err(VolumeError::Header(format!(
            "expected dtype=f64 for a grid, got `{}`",
            header.dtype
        )));
    }
    if header.dims.ny != 1 {
        return Err(VolumeError::Header(format!(
            "grid must be a single axial slice, got dims {}",
            header.dims
        )));
    }
    let expected = header.dims.len() * 8;
    if payload.len() != expected {
        return Err(VolumeError::PayloadLength {
            expected,
            got: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GridSlice {
        nx: header.dims.nx,
        nz: header.dims.nz,
        lateral_x_um: header.lateral_x_um,
        lateral_z_um: header.lateral_z_um,
        values,
    })
}
