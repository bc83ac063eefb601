//! Boundary surfaces: twelve fractional axial depths per lateral column.
//!
//! Eleven retinal layers are bounded by twelve surfaces; surface `k` is the
//! top of layer `k` and surface 12 is the outer boundary of layer 11. Depths
//! are fractional voxel coordinates in `y` (a surface at depth `d` passes
//! between voxel rows `floor(d - 0.5)` and `ceil(d - 0.5)`), and must be
//! non-decreasing in `k` within every column.
//!
//! The CSV interchange format has the header `x,z,s1,...,s12` and one row
//! per lateral column, `z`-major with `x` fastest.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Number of anatomical layers segmented by the pipeline.
pub const LAYER_COUNT: usize = 11;
/// Number of boundary surfaces delimiting [`LAYER_COUNT`] layers.
pub const SURFACE_COUNT: usize = LAYER_COUNT + 1;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("bad surfaces CSV: {0}")]
    Format(String),
}

/// Twelve boundary surfaces over an `nx × nz` lateral grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    nx: usize,
    nz: usize,
    /// Depths, surface-major: `depths[s * nx*nz + z*nx + x]`.
    depths: Vec<f64>,
}

impl SurfaceSet {
    /// An all-zero surface set over an `nx × nz` grid.
    pub fn zeros(nx: usize, nz: usize) -> Self {
        SurfaceSet {
            nx,
            nz,
            depths: vec![0.0; SURFACE_COUNT * nx * nz],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn columns(&self) -> usize {
        self.nx * self.nz
    }

    #[inline]
    fn col(&self, x: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && z < self.nz);
        z * self.nx + x
    }

    /// Depth of surface `s` (0-based, `0..SURFACE_COUNT`) at column `(x, z)`.
    #[inline]
    pub fn get(&self, s: usize, x: usize, z: usize) -> f64 {
        self.depths[s * self.columns() + self.col(x, z)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, x: usize, z: usize, depth: f64) {
        let c = s * self.columns() + self.col(x, z);
        self.depths[c] = depth;
    }

    /// All depths of surface `s` as one lateral plane (`z`-major, x fastest).
    pub fn plane(&self, s: usize) -> &[f64] {
        let n = self.columns();
        &self.depths[s * n..(s + 1) * n]
    }

    pub fn plane_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.columns();
        &mut self.depths[s * n..(s + 1) * n]
    }

    /// The twelve depths under one column, in surface order.
    pub fn column_depths(&self, x: usize, z: usize) -> [f64; SURFACE_COUNT] {
        let mut out = [0.0; SURFACE_COUNT];
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = self.get(s, x, z);
        }
        out
    }

    /// True when every column's depths are non-decreasing in surface index.
    pub fn is_monotone(&self) -> bool {
        self.max_monotonicity_violation() <= 0.0
    }

    /// Largest `surface[k] - surface[k+1]` over all columns (≤ 0 when monotone).
    pub fn max_monotonicity_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for z in 0..self.nz {
            for x in 0..self.nx {
                for s in 0..SURFACE_COUNT - 1 {
                    worst = worst.max(self.get(s, x, z) - self.get(s + 1, x, z));
                }
            }
        }
        worst
    }

    /// Writes the `x,z,s1..s12` CSV. Depth values print in shortest
    /// round-trip form, so re-reading reproduces them bit-for-bit.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), SurfaceError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["x".to_string(), "z".to_string()];
        header.extend((1..=SURFACE_COUNT).map(|s| format!("s{s}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(SURFACE_COUNT + 2);
        for z in 0..self.nz {
            for x in 0..self.nx {
                record.clear();
                record.push(x.to_string());
                record.push(z.to_string());
                for s in 0..SURFACE_COUNT {
                    record.push(self.get(s, x, z).to_string());
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a surfaces CSV, inferring the grid from the row indices. Every
    /// column must appear exactly once.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, SurfaceError> {
        let text = fs::read_to_string(path)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        {
            let header = reader.headers()?;
            if header.len() != SURFACE_COUNT + 2 || &header[0] != "x" || &header[1] != "z" {
                return Err(SurfaceError::Format(format!(
                    "expected header x,z,s1..s{SURFACE_COUNT}, got {header:?}"
                )));
            }
        }
        let mut rows: Vec<(usize, usize, [f64; SURFACE_COUNT])> = Vec::new();
        let mut max_x = 0usize;
        let mut max_z = 0usize;
        for record in reader.records() {
            let record = record?;
            let x: usize = record[0]
                .parse()
                .map_err(|_| SurfaceError::Format(format!("bad x `{}`", &record[0])))?;
            let z: usize = record[1]
                .parse()
                .map_err(|_| SurfaceError::Format(format!("bad z `{}`", &record[1])))?;
            let mut depths = [0.0; SURFACE_COUNT];
            for (s, slot) in depths.iter_mut().enumerate() {
                *slot = record[s + 2]
                    .parse()
                    .map_err(|_| SurfaceError::Format(format!("bad depth `{}`", &record[s + 2])))?;
            }
            max_x = max_x.max(x);
            max_z = max_z.max(z);
            rows.push((x, z, depths));
        }
        if rows.is_empty() {
            return Err(SurfaceError::Format("no data rows".into()));
        }
        let (nx, nz) = (max_x + 1, max_z + 1);
        if rows.len() != nx * nz {
            return Err(SurfaceError::Format(format!(
                "grid {nx}x{nz} needs {} rows, got {}",
                nx * nz,
                rows.len()
            )));
        }
        let mut set = SurfaceSet::zeros(nx, nz);
        let mut seen = vec![false; nx * nz];
        for (x, z, depths) in rows {
            let c = z * nx + x;
            if seen[c] {
                return Err(SurfaceError::Format(format!("duplicate column ({x}, {z})")));
            }
            seen[c] = true;
            for (s, d) in depths.iter().enumerate() {
                set.set(s, x, z, *d);
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set(nx: usize, nz: usize) -> SurfaceSet {
        let mut set = SurfaceSet::zeros(nx, nz);
        for z in 0..nz {
            for x in 0..nx {
                for s in 0..SURFACE_COUNT {
                    let d = 10.0 + s as f64 * 7.25 + (x as f64) * 0.125 + (z as f64) * 0.5;
                    set.set(s, x, z, d);
                }
            }
        }
        set
    }

    #[test]
    fn csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut set = sample_set(3, 2);
        // Exercise a value that does not print in short decimal form.
        set.set(0, 1, 1, 19.33333333333333333);
        set.write_csv(&path).unwrap();
        let back = SurfaceSet::read_csv(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn monotonicity_check() {
        let mut set = sample_set(2, 2);
        assert!(set.is_monotone());
        set.set(3, 1, 0, 0.0);
        assert!(!set.is_monotone());
        assert!(set.max_monotonicity_violation() > 0.0);
    }

    #[test]
    fn read_rejects_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let set = sample_set(2, 2);
        set.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(4).collect();
        fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(
            SurfaceSet::read_csv(&path),
            Err(SurfaceError::Format(_))
        ));
    }
}
