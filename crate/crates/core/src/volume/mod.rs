//! Scan volume container, on-disk format, and synthetic phantoms.
//!
//! A [`Volume`] stores 16-bit intensity samples on an `nx × ny × nz` grid
//! together with the physical voxel pitch. `y` is the axial (depth)
//! direction, `x` the fast lateral direction within a B-scan, and `z` the
//! slow direction across B-scans. Samples are laid out y-fastest, then x,
//! then z — the same order the file format uses.

mod format;
mod phantom;

pub use format::{read_grid, read_volume, write_grid, write_volume, GridSlice};
pub use phantom::{generate_phantom, PhantomSpec};

use thiserror::Error;

/// Errors raised by volume validation, I/O, and phantom generation.
#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dims must all be >= 1, got {0}x{1}x{2}")]
    EmptyDims(usize, usize, usize),
    #[error("voxel scale `{name}` must be finite and > 0, got {value}")]
    BadScale { name: &'static str, value: f64 },
    #[error("data length {got} does not match dims ({expected} samples)")]
    DataLength { expected: usize, got: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("unsupported container version `{0}` (expected 1)")]
    UnsupportedVersion(String),
    #[error("payload holds {got} bytes, header implies {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("invalid phantom spec: {0}")]
    BadPhantom(String),
}

/// Grid extent of a volume: `nx` lateral, `ny` axial (depth), `nz` B-scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of lateral columns (`nx * nz`), each a full depth profile.
    pub fn columns(&self) -> usize {
        self.nx * self.nz
    }

    /// Linear index of voxel `(x, y, z)` in the y-fastest layout.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        y + self.ny * (x + self.nx * z)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// A dense 3-D scan with 16-bit intensities and physical voxel pitch in µm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    /// Axial (y) voxel pitch in µm.
    axial_um: f64,
    /// Lateral (x) voxel pitch in µm.
    lateral_x_um: f64,
    /// Inter-B-scan (z) pitch in µm.
    lateral_z_um: f64,
    /// Samples, y-fastest, then x, then z.
    data: Vec<u16>,
}

impl Volume {
    /// Builds a volume after validating dims, scales, and data length.
    pub fn new(
        dims: Dims,
        axial_um: f64,
        lateral_x_um: f64,
        lateral_z_um: f64,
        data: Vec<u16>,
    ) -> Result<Self, VolumeError> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(VolumeError::EmptyDims(dims.nx, dims.ny, dims.nz));
        }
        for (name, value) in [
            ("axial_um", axial_um),
            ("lateral_x_um", lateral_x_um),
            ("lateral_z_um", lateral_z_um),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(VolumeError::BadScale { name, value });
            }
        }
        if data.len() != dims.len() {
            return Err(VolumeError::DataLength {
                expected: dims.len(),
                got: data.len(),
            });
        }
        Ok(Volume {
            dims,
            axial_um,
            lateral_x_um,
            lateral_z_um,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn axial_um(&self) -> f64 {
        self.axial_um
    }

    pub fn lateral_x_um(&self) -> f64 {
        self.lateral_x_um
    }

    pub fn lateral_z_um(&self) -> f64 {
        self.lateral_z_um
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Linear index of voxel `(x, y, z)` in the y-fastest layout.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        self.dims.index(x, y, z)
    }

    /// Intensity at voxel `(x, y, z)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.index(x, y, z)]
    }

    /// The full depth profile under lateral position `(x, z)`.
    #[inline]
    pub fn column(&self, x: usize, z: usize) -> &[u16] {
        let start = self.index(x, 0, z);
        &self.data[start..start + self.dims.ny]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_empty_dims() {
        let err = Volume::new(Dims::new(0, 4, 4), 1.0, 1.0, 1.0, vec![]).unwrap_err();
        assert!(matches!(err, VolumeError::EmptyDims(0, 4, 4)));
    }

    #[test]
    fn new_rejects_bad_scales() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let err = Volume::new(Dims::new(1, 1, 1), bad, 1.0, 1.0, vec![0]).unwrap_err();
            assert!(matches!(err, VolumeError::BadScale { name: "axial_um", .. }));
        }
    }

    #[test]
    fn new_rejects_wrong_data_length() {
        let err = Volume::new(Dims::new(2, 2, 2), 1.0, 1.0, 1.0, vec![0; 7]).unwrap_err();
        assert!(matches!(err, VolumeError::DataLength { expected: 8, got: 7 }));
    }

    #[test]
    fn indexing_is_y_fastest() {
        let dims = Dims::new(2, 3, 2);
        let data: Vec<u16> = (0..12).collect();
        let v = Volume::new(dims, 1.0, 1.0, 1.0, data).unwrap();
        // idx = y + ny*(x + nx*z)
        assert_eq!(v.at(0, 0, 0), 0);
        assert_eq!(v.at(0, 2, 0), 2);
        assert_eq!(v.at(1, 0, 0), 3);
        assert_eq!(v.at(0, 0, 1), 6);
        assert_eq!(v.at(1, 2, 1), 11);
        assert_eq!(v.column(1, 1), &[9, 10, 11]);
    }
}
