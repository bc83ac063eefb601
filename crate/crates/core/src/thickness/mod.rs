//! Per-layer thickness maps, fovea detection, the ETDRS sector grid,
//! sector statistics, and pseudo-color rendering.
//!
//! Thickness is measured in µm on the lateral `(x, z)` grid of the scan.
//! The nine ETDRS sectors are a central disk (sector 1) plus an inner
//! (parafoveal, sectors 2–5) and an outer (perifoveal, sectors 6–9) ring,
//! each ring split into superior/nasal/inferior/temporal quadrants at the
//! ±45° diagonals through the fovea.
//!
//! En-face geometry conventions used throughout:
//!
//! * `+x` is nasal for right eyes, temporal for left eyes; the eye side
//!   mirrors the lateral sector labels (3, 5, 7, 9) about the vertical axis
//!   through the fovea while superior/inferior stay put.
//! * `−z` is superior, `+z` is inferior.
//! * Pixels exactly on a diagonal (`|dz| = |dx|`) belong to the
//!   superior/inferior sector; ring boundaries are half-open, so a pixel at
//!   exactly one circle's radius falls in the ring outside it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::Error as _;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::surfaces::{SurfaceSet, LAYER_COUNT};
use crate::volume::{read_grid, write_grid, GridSlice, VolumeError};

/// Number of ETDRS sectors (central disk + two rings of four quadrants).
pub const SECTOR_COUNT: usize = 9;

/// Standard ETDRS circle diameters in µm: 1 mm, 3 mm, 6 mm.
pub const ETDRS_DIAMETERS_UM: [f64; 3] = [1000.0, 3000.0, 6000.0];

#[derive(Debug, Error)]
pub enum ThicknessError {
    #[error("bad thickness map: {0}")]
    BadMap(String),
    #[error("maps disagree on grid or scales: {0}")]
    GridMismatch(String),
    #[error("expected {expected} layer maps in layer order, got {got}")]
    BadMapSet { expected: usize, got: String },
    #[error("sector diameters must satisfy 0 < d1 < d2 < d3, got {0:?}")]
    BadDiameters([f64; 3]),
    #[error("fovea center ({0}, {1}) lies outside the lateral grid")]
    CenterOutsideGrid(f64, f64),
    #[error("pseudo-color range must satisfy min < max, got [{0}, {1}]")]
    DegenerateRange(f64, f64),
    #[error("palette must hold at least two colors, got {0}")]
    PaletteTooSmall(usize),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("bad thickness CSV: {0}")]
    Format(String),
    #[error("{0}")]
    Volume(#[from] VolumeError),
    #[error("bad sector table JSON: {0}")]
    Json(String),
}

// ---------------------------------------------------------------------------
// Layer keys

/// Identifies a thickness map: one of the eleven layers or their total.
///
/// Orders numerically with [`LayerKey::Total`] last, and serializes as the
/// strings `"1"`…`"11"` and `"total"` (the JSON object keys of exported
/// tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerKey {
    /// Anatomical layer, 1-based: 1 = NFL through 11 = RPE/BM.
    Layer(u8),
    /// Sum of all eleven layers.
    Total,
}

impl LayerKey {
    /// The eleven layer keys followed by [`LayerKey::Total`].
    pub fn all() -> impl Iterator<Item = LayerKey> {
        (1..=LAYER_COUNT as u8)
            .map(LayerKey::Layer)
            .chain(std::iter::once(LayerKey::Total))
    }
}

impl fmt::Display for LayerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKey::Layer(k) => write!(f, "{k}"),
            LayerKey::Total => write!(f, "total"),
        }
    }
}

impl FromStr for LayerKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "total" {
            return Ok(LayerKey::Total);
        }
        match s.parse::<u8>() {
            Ok(k) if (1..=LAYER_COUNT as u8).contains(&k) => Ok(LayerKey::Layer(k)),
            _ => Err(format!("layer key must be 1..{LAYER_COUNT} or `total`, got `{s}`")),
        }
    }
}

impl Serialize for LayerKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Thickness maps

/// A per-pixel thickness map in µm over the lateral `(x, z)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessMap {
    layer: LayerKey,
    nx: usize,
    nz: usize,
    lateral_x_um: f64,
    lateral_z_um: f64,
    /// Thickness in µm, x-fastest: `values[z * nx + x]`.
    values: Vec<f64>,
}

impl ThicknessMap {
    /// Builds a map after validating the grid, scales, and values
    /// (finite and ≥ 0).
    pub fn new(
        layer: LayerKey,
        nx: usize,
        nz: usize,
        lateral_x_um: f64,
        lateral_z_um: f64,
        values: Vec<f64>,
    ) -> Result<Self, ThicknessError> {
        if nx == 0 || nz == 0 {
            return Err(ThicknessError::BadMap(format!("empty grid {nx}x{nz}")));
        }
        for (name, v) in [("lateral_x_um", lateral_x_um), ("lateral_z_um", lateral_z_um)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ThicknessError::BadMap(format!("{name} must be > 0, got {v}")));
            }
        }
        if values.len() != nx * nz {
            return Err(ThicknessError::BadMap(format!(
                "grid {nx}x{nz} needs {} values, got {}",
                nx * nz,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ThicknessError::BadMap(format!(
                "thickness must be finite and >= 0, got {bad}"
            )));
        }
        Ok(ThicknessMap {
            layer,
            nx,
            nz,
            lateral_x_um,
            lateral_z_um,
            values,
        })
    }

    pub fn layer(&self) -> LayerKey {
        self.layer
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn lateral_x_um(&self) -> f64 {
        self.lateral_x_um
    }

    pub fn lateral_z_um(&self) -> f64 {
        self.lateral_z_um
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Thickness at pixel `(x, z)` in µm.
    #[inline]
    pub fn get(&self, x: usize, z: usize) -> f64 {
        debug_assert!(x < self.nx && z < self.nz);
        self.values[z * self.nx + x]
    }

    fn same_grid(&self, other: &ThicknessMap) -> bool {
        self.nx == other.nx
            && self.nz == other.nz
            && self.lateral_x_um == other.lateral_x_um
            && self.lateral_z_um == other.lateral_z_um
    }

    /// Writes the map as `x,z,value` CSV (z-major rows, x fastest). Values
    /// print in shortest round-trip form, so re-reading is bit-exact.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), ThicknessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "z", "value"])?;
        for z in 0..self.nz {
            for x in 0..self.nx {
                w.write_record([x.to_string(), z.to_string(), self.get(x, z).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an `x,z,value` CSV written by [`ThicknessMap::write_csv`]. The
    /// CSV carries only values, so the layer id and lateral scales are the
    /// caller's to supply.
    pub fn read_csv<P: AsRef<Path>>(
        layer: LayerKey,
        lateral_x_um: f64,
        lateral_z_um: f64,
        path: P,
    ) -> Result<Self, ThicknessError> {
        let text = fs::read_to_string(path)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        {
            let header = reader.headers()?;
            if header.len() != 3 || &header[0] != "x" || &header[1] != "z" || &header[2] != "value" {
                return Err(ThicknessError::Format(format!(
                    "expected header x,z,value, got {header:?}"
                )));
            }
        }
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        let (mut max_x, mut max_z) = (0usize, 0usize);
        for record in reader.records() {
            let record = record?;
            let x: usize = record[0]
                .parse()
                .map_err(|_| ThicknessError::Format(format!("bad x `{}`", &record[0])))?;
            let z: usize = record[1]
                .parse()
                .map_err(|_| ThicknessError::Format(format!("bad z `{}`", &record[1])))?;
            let v: f64 = record[2]
                .parse()
                .map_err(|_| ThicknessError::Format(format!("bad value `{}`", &record[2])))?;
            max_x = max_x.max(x);
            max_z = max_z.max(z);
            rows.push((x, z, v));
        }
        if rows.is_empty() {
            return Err(ThicknessError::Format("no data rows".into()));
        }
        let (nx, nz) = (max_x + 1, max_z + 1);
        if rows.len() != nx * nz {
            return Err(ThicknessError::Format(format!(
                "grid {nx}x{nz} needs {} rows, got {}",
                nx * nz,
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; nx * nz];
        for (x, z, v) in rows {
            let c = z * nx + x;
            if !values[c].is_nan() {
                return Err(ThicknessError::Format(format!("duplicate pixel ({x}, {z})")));
            }
            values[c] = v;
        }
        ThicknessMap::new(layer, nx, nz, lateral_x_um, lateral_z_um, values)
    }

    /// Writes the map in the single-slice binary grid container; `axial_um`
    /// is carried in the header for provenance (pass the source volume's).
    pub fn write_grid<P: AsRef<Path>>(&self, axial_um: f64, path: P) -> Result<(), ThicknessError> {
        let grid = GridSlice {
            nx: self.nx,
            nz: self.nz,
            lateral_x_um: self.lateral_x_um,
            lateral_z_um: self.lateral_z_um,
            values: self.values.clone(),
        };
        write_grid(&grid, axial_um, path)?;
        Ok(())
    }

    /// Reads a map from the binary grid container (the container does not
    /// carry a layer id, so the caller supplies it).
    pub fn read_grid<P: AsRef<Path>>(layer: LayerKey, path: P) -> Result<Self, ThicknessError> {
        let grid = read_grid(path)?;
        ThicknessMap::new(
            layer,
            grid.nx,
            grid.nz,
            grid.lateral_x_um,
            grid.lateral_z_um,
            grid.values,
        )
    }
}

/// Builds the eleven per-layer thickness maps from boundary surfaces: layer
/// `k`'s thickness at a column is `(surface_{k+1} − surface_k) · axial_um`.
///
/// Surfaces must be monotone per column (pipeline output always is); a
/// non-monotone input surfaces as a [`ThicknessError::BadMap`] because it
/// would produce a negative thickness.
pub fn layer_thickness(
    surfaces: &SurfaceSet,
    axial_um: f64,
    lateral_x_um: f64,
    lateral_z_um: f64,
) -> Result<Vec<ThicknessMap>, ThicknessError> {
    let (nx, nz) = (surfaces.nx(), surfaces.nz());
    let mut maps = Vec::with_capacity(LAYER_COUNT);
    for k in 0..LAYER_COUNT {
        let mut values = Vec::with_capacity(nx * nz);
        for z in 0..nz {
            for x in 0..nx {
                values.push((surfaces.get(k + 1, x, z) - surfaces.get(k, x, z)) * axial_um);
            }
        }
        maps.push(ThicknessMap::new(
            LayerKey::Layer(k as u8 + 1),
            nx,
            nz,
            lateral_x_um,
            lateral_z_um,
            values,
        )?);
    }
    Ok(maps)
}

/// Sums the eleven layer maps into the total-thickness map.
///
/// Expects exactly the maps of layers 1–11 in order on one grid; each
/// pixel's sum accumulates in that order, so `total = Σ layers` holds
/// bit-exactly against any recount in the same order.
pub fn total_thickness(maps: &[ThicknessMap]) -> Result<ThicknessMap, ThicknessError> {
    let keys: Vec<String> = maps.iter().map(|m| m.layer.to_string()).collect();
    let expected_keys: Vec<String> = (1..=LAYER_COUNT).map(|k| k.to_string()).collect();
    if keys != expected_keys {
        return Err(ThicknessError::BadMapSet {
            expected: LAYER_COUNT,
            got: format!("[{}]", keys.join(", ")),
        });
    }
    let first = &maps[0];
    for m in &maps[1..] {
        if !first.same_grid(m) {
            return Err(ThicknessError::GridMismatch(format!(
                "layer {} is {}x{} at ({}, {}) µm, layer 1 is {}x{} at ({}, {}) µm",
                m.layer, m.nx, m.nz, m.lateral_x_um, m.lateral_z_um,
                first.nx, first.nz, first.lateral_x_um, first.lateral_z_um
            )));
        }
    }
    let n = first.nx * first.nz;
    let mut values = vec![0.0f64; n];
    for m in maps {
        for (slot, v) in values.iter_mut().zip(&m.values) {
            *slot += v;
        }
    }
    ThicknessMap::new(
        LayerKey::Total,
        first.nx,
        first.nz,
        first.lateral_x_um,
        first.lateral_z_um,
        values,
    )
}

// ---------------------------------------------------------------------------
// Fovea detection

/// Locates the fovea as the minimum of the box-smoothed map (callers pass
/// the layer-1 map, whose thickness bottoms out at the foveal pit).
///
/// Smoothing averages a `(2·radius+1)²` window truncated at the borders.
/// Ties break toward the pixel nearest the grid center (squared pixel
/// distance), then to the lexicographically smaller `(x, z)`.
pub fn find_fovea(map: &ThicknessMap, smooth_radius: usize) -> (usize, usize) {
    let (nx, nz) = (map.nx, map.nz);
    let r = smooth_radius;
    let smoothed: Vec<f64> = (0..nx * nz)
        .map(|c| {
            let (x, z) = (c % nx, c / nx);
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(nx - 1);
            let z0 = z.saturating_sub(r);
            let z1 = (z + r).min(nz - 1);
            let mut sum = 0.0;
            for zz in z0..=z1 {
                for xx in x0..=x1 {
                    sum += map.values[zz * nx + xx];
                }
            }
            sum / ((x1 - x0 + 1) * (z1 - z0 + 1)) as f64
        })
        .collect();

    let cx = (nx - 1) as f64 / 2.0;
    let cz = (nz - 1) as f64 / 2.0;
    let mut best = (0usize, 0usize);
    let mut best_val = f64::INFINITY;
    let mut best_dist = f64::INFINITY;
    for z in 0..nz {
        for x in 0..nx {
            let v = smoothed[z * nx + x];
            let d = (x as f64 - cx).powi(2) + (z as f64 - cz).powi(2);
            let better = v < best_val
                || (v == best_val && d < best_dist)
                || (v == best_val && d == best_dist && (x, z) < best);
            if better {
                best = (x, z);
                best_val = v;
                best_dist = d;
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// ETDRS sector grid

/// Which eye the scan is of; decides whether nasal is `+x` (right) or `−x`
/// (left).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EyeSide {
    Right,
    Left,
}

impl EyeSide {
    pub fn toggled(self) -> EyeSide {
        match self {
            EyeSide::Right => EyeSide::Left,
            EyeSide::Left => EyeSide::Right,
        }
    }
}

/// Per-pixel ETDRS sector labels around a fovea center.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorAssignment {
    nx: usize,
    nz: usize,
    center_px: (f64, f64),
    diameters_um: [f64; 3],
    eye: EyeSide,
    /// Sector of each pixel (`0` = outside the outer circle), x-fastest.
    labels: Vec<u8>,
}

impl SectorAssignment {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn center_px(&self) -> (f64, f64) {
        self.center_px
    }

    pub fn diameters_um(&self) -> [f64; 3] {
        self.diameters_um
    }

    pub fn eye(&self) -> EyeSide {
        self.eye
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Sector label of pixel `(x, z)`; 0 when outside the outer circle.
    #[inline]
    pub fn label(&self, x: usize, z: usize) -> u8 {
        debug_assert!(x < self.nx && z < self.nz);
        self.labels[z * self.nx + x]
    }
}

/// Classifies every pixel of an `nx × nz` grid into ETDRS sectors around
/// `center_px` (fractional pixel coordinates of the fovea).
///
/// `diameters_um` are the three circle diameters (`d1 < d2 < d3`); pixel
/// distances are physical, via the lateral scales. See the module docs for
/// the orientation conventions and boundary rules.
pub fn sector_grid(
    nx: usize,
    nz: usize,
    lateral_x_um: f64,
    lateral_z_um: f64,
    center_px: (f64, f64),
    diameters_um: [f64; 3],
    eye: EyeSide,
) -> Result<SectorAssignment, ThicknessError> {
    if nx == 0 || nz == 0 {
        return Err(ThicknessError::BadMap(format!("empty grid {nx}x{nz}")));
    }
    for (name, v) in [("lateral_x_um", lateral_x_um), ("lateral_z_um", lateral_z_um)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(ThicknessError::BadMap(format!("{name} must be > 0, got {v}")));
        }
    }
    let [d1, d2, d3] = diameters_um;
    if !(d1.is_finite() && d2.is_finite() && d3.is_finite() && 0.0 < d1 && d1 < d2 && d2 < d3) {
        return Err(ThicknessError::BadDiameters(diameters_um));
    }
    let (cx, cz) = center_px;
    if !(cx.is_finite() && cz.is_finite())
        || cx < 0.0
        || cx > (nx - 1) as f64
        || cz < 0.0
        || cz > (nz - 1) as f64
    {
        return Err(ThicknessError::CenterOutsideGrid(cx, cz));
    }

    let (r1, r2, r3) = (d1 / 2.0, d2 / 2.0, d3 / 2.0);
    let nasal_positive = eye == EyeSide::Right;
    let mut labels = Vec::with_capacity(nx * nz);
    for z in 0..nz {
        for x in 0..nx {
            let dx = (x as f64 - cx) * lateral_x_um;
            let dz = (z as f64 - cz) * lateral_z_um;
            let r = (dx * dx + dz * dz).sqrt();
            let label = if r < r1 {
                1
            } else if r >= r3 {
                0
            } else {
                let ring = if r < r2 { 0 } else { 4 };
                // |dz| ≥ |dx| covers the diagonals, putting boundary pixels
                // in the superior/inferior sector.
                let quadrant = if dz.abs() >= dx.abs() {
                    if dz <= 0.0 {
                        0 // superior
                    } else {
                        2 // inferior
                    }
                } else if (dx > 0.0) == nasal_positive {
                    1 // nasal
                } else {
                    3 // temporal
                };
                2 + ring + quadrant
            };
            labels.push(label);
        }
    }
    Ok(SectorAssignment {
        nx,
        nz,
        center_px,
        diameters_um,
        eye,
        labels,
    })
}

// ---------------------------------------------------------------------------
// Sector statistics

/// One (layer, sector) aggregation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorCell {
    /// Number of member pixels.
    pub count: usize,
    /// Mean thickness in µm; `None` when the sector holds no pixels.
    pub mean: Option<f64>,
    /// Population SD (divisor N) in µm; `None` when the sector holds no
    /// pixels.
    pub sd: Option<f64>,
}

impl SectorCell {
    const EMPTY: SectorCell = SectorCell {
        count: 0,
        mean: None,
        sd: None,
    };
}

/// Mean/SD per sector for one thickness map.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorStats {
    pub layer: LayerKey,
    /// Index 0 holds sector 1 … index 8 holds sector 9.
    pub sectors: [SectorCell; SECTOR_COUNT],
}

impl SectorStats {
    /// The cell of 1-based `sector`.
    pub fn sector(&self, sector: usize) -> &SectorCell {
        &self.sectors[sector - 1]
    }
}

/// Aggregates one map over a sector assignment: per-sector pixel count,
/// mean, and population SD (divisor N).
///
/// Each sector's values are summed in ascending value order (ties keep grid
/// order), which makes the sums — and therefore mean and SD — bit-exactly
/// invariant under any pixel re-ordering that preserves the per-sector
/// multiset, in particular the horizontal mirror between left- and
/// right-eye layouts.
pub fn sector_stats(
    map: &ThicknessMap,
    assignment: &SectorAssignment,
) -> Result<SectorStats, ThicknessError> {
    if map.nx != assignment.nx || map.nz != assignment.nz {
        return Err(ThicknessError::GridMismatch(format!(
            "map is {}x{}, assignment is {}x{}",
            map.nx, map.nz, assignment.nx, assignment.nz
        )));
    }
    let mut buckets: [Vec<f64>; SECTOR_COUNT + 1] = Default::default();
    for (&label, &v) in assignment.labels.iter().zip(&map.values) {
        buckets[label as usize].push(v);
    }
    let mut sectors = [SectorCell::EMPTY; SECTOR_COUNT];
    for (slot, bucket) in sectors.iter_mut().zip(&mut buckets[1..]) {
        let count = bucket.len();
        if count == 0 {
            continue;
        }
        bucket.sort_by(f64::total_cmp);
        let sum: f64 = bucket.iter().sum();
        let mean = sum / count as f64;
        let ssd: f64 = bucket
            .iter()
            .map(|v| {
                let d = v - mean;
                d * d
            })
            .sum();
        *slot = SectorCell {
            count,
            mean: Some(mean),
            sd: Some((ssd / count as f64).sqrt()),
        };
    }
    Ok(SectorStats {
        layer: map.layer,
        sectors,
    })
}

// ---------------------------------------------------------------------------
// Sector table (JSON export)

/// Sector statistics for a set of maps (typically layers 1–11 plus total),
/// exported as a JSON object keyed layer → sector → cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorTable {
    /// Rows in layer order (1..11, then total).
    pub rows: Vec<SectorStats>,
}

impl SectorTable {
    /// Collects rows and orders them canonically (layers ascending, total
    /// last). Duplicate layers are rejected.
    pub fn new(mut rows: Vec<SectorStats>) -> Result<Self, ThicknessError> {
        rows.sort_by_key(|r| r.layer);
        for pair in rows.windows(2) {
            if pair[0].layer == pair[1].layer {
                return Err(ThicknessError::Json(format!(
                    "duplicate layer `{}`",
                    pair[0].layer
                )));
            }
        }
        Ok(SectorTable { rows })
    }

    pub fn get(&self, layer: LayerKey) -> Option<&SectorStats> {
        self.rows.iter().find(|r| r.layer == layer)
    }

    /// Serializes to pretty JSON with deterministic key order (layers
    /// ascending then `total`; sectors `1`..`9`).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sector table serializes") + "\n"
    }

    /// Parses and validates a table produced by [`SectorTable::to_json`].
    pub fn from_json(text: &str) -> Result<Self, ThicknessError> {
        serde_json::from_str(text).map_err(|e| ThicknessError::Json(e.to_string()))
    }
}

impl Serialize for SectorTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Cell<'a>(&'a SectorCell);
        impl Serialize for Cell<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let n = 1 + self.0.mean.is_some() as usize + self.0.sd.is_some() as usize;
                let mut m = serializer.serialize_map(Some(n))?;
                m.serialize_entry("count", &self.0.count)?;
                if let Some(mean) = self.0.mean {
                    m.serialize_entry("mean", &mean)?;
                }
                if let Some(sd) = self.0.sd {
                    m.serialize_entry("sd", &sd)?;
                }
                m.end()
            }
        }
        struct Sectors<'a>(&'a [SectorCell; SECTOR_COUNT]);
        impl Serialize for Sectors<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut m = serializer.serialize_map(Some(SECTOR_COUNT))?;
                for (i, cell) in self.0.iter().enumerate() {
                    m.serialize_entry(&(i + 1).to_string(), &Cell(cell))?;
                }
                m.end()
            }
        }
        let mut m = serializer.serialize_map(Some(self.rows.len()))?;
        for row in &self.rows {
            m.serialize_entry(&row.layer, &Sectors(&row.sectors))?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for SectorTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawCell {
            count: usize,
            #[serde(default)]
            mean: Option<f64>,
            #[serde(default)]
            sd: Option<f64>,
        }

        let raw: BTreeMap<LayerKey, BTreeMap<String, RawCell>> =
            BTreeMap::deserialize(deserializer)?;
        let mut rows = Vec::with_capacity(raw.len());
        for (layer, sectors_raw) in raw {
            let mut sectors = [SectorCell::EMPTY; SECTOR_COUNT];
            if sectors_raw.len() != SECTOR_COUNT {
                return Err(D::Error::custom(format!(
                    "layer `{layer}` must list exactly {SECTOR_COUNT} sectors, got {}",
                    sectors_raw.len()
                )));
            }
            for (key, cell) in sectors_raw {
                let s: usize = key
                    .parse()
                    .ok()
                    .filter(|s| (1..=SECTOR_COUNT).contains(s))
                    .ok_or_else(|| {
                        D::Error::custom(format!("sector key must be 1..{SECTOR_COUNT}, got `{key}`"))
                    })?;
                let filled = cell.mean.is_some() && cell.sd.is_some();
                let empty = cell.mean.is_none() && cell.sd.is_none();
                if (cell.count > 0 && !filled) || (cell.count == 0 && !empty) {
                    return Err(D::Error::custom(format!(
                        "layer `{layer}` sector {s}: mean/sd must be present exactly when count > 0"
                    )));
                }
                for (name, v) in [("mean", cell.mean), ("sd", cell.sd)] {
                    if let Some(v) = v {
                        if !v.is_finite() || (name == "sd" && v < 0.0) {
                            return Err(D::Error::custom(format!(
                                "layer `{layer}` sector {s}: bad {name} {v}"
                            )));
                        }
                    }
                }
                sectors[s - 1] = SectorCell {
                    count: cell.count,
                    mean: cell.mean,
                    sd: cell.sd,
                };
            }
            rows.push(SectorStats { layer, sectors });
        }
        // BTreeMap iteration already yields canonical LayerKey order.
        Ok(SectorTable { rows })
    }
}

// ---------------------------------------------------------------------------
// Pseudo-color rendering

/// The fixed 256-entry blue→cyan→yellow→red palette used by the CLI.
///
/// Channel ramps follow the classic piecewise-linear jet layout: with
/// `t = i/255`, each of `(r, g, b)` is `clamp(1.5 − |4t − c|, 0, 1)` for
/// `c = (3, 2, 1)` respectively, scaled to 0–255 and rounded.
pub fn jet_palette() -> Vec<[u8; 3]> {
    (0..256)
        .map(|i| {
            let t = i as f64 / 255.0;
            let channel = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
            [channel(3.0), channel(2.0), channel(1.0)]
        })
        .collect()
}

/// Renders a map as a binary PPM (P6) image: `range.0` maps to the first
/// palette color, `range.1` to the last, linearly with out-of-range values
/// clamped. Image rows are `z`, columns are `x`. Output bytes are a pure
/// function of the inputs.
pub fn render_pseudocolor(
    map: &ThicknessMap,
    palette: &[[u8; 3]],
    range: (f64, f64),
) -> Result<Vec<u8>, ThicknessError> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ThicknessError::DegenerateRange(lo, hi));
    }
    if palette.len() < 2 {
        return Err(ThicknessError::PaletteTooSmall(palette.len()));
    }
    let mut out = format!("P6\n{} {}\n255\n", map.nx, map.nz).into_bytes();
    out.reserve(map.values.len() * 3);
    let top = (palette.len() - 1) as f64;
    for &v in &map.values {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let idx = (t * top).round() as usize;
        out.extend_from_slice(&palette[idx]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{generate_phantom, Dims, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A flat (no pit, no undulation) phantom spec for exact-thickness tests.
    fn flat_spec(dims: Dims, seed: u64) -> PhantomSpec {
        let mut spec = PhantomSpec::new(dims, seed);
        spec.pit_depth_um = 0.0;
        spec.undulation_um = 0.0;
        spec
    }

    fn constant_map(layer: LayerKey, nx: usize, nz: usize, v: f64) -> ThicknessMap {
        ThicknessMap::new(layer, nx, nz, 50.0, 50.0, vec![v; nx * nz]).unwrap()
    }

    fn random_map(layer: LayerKey, nx: usize, nz: usize, rng: &mut ChaCha8Rng) -> ThicknessMap {
        let values: Vec<f64> = (0..nx * nz).map(|_| rng.gen_range(0.0..500.0)).collect();
        ThicknessMap::new(layer, nx, nz, 47.0, 47.0, values).unwrap()
    }

    // -- layer keys ---------------------------------------------------------

    #[test]
    fn layer_key_string_round_trip() {
        for key in LayerKey::all() {
            let s = key.to_string();
            assert_eq!(s.parse::<LayerKey>().unwrap(), key);
        }
        assert!("0".parse::<LayerKey>().is_err());
        assert!("12".parse::<LayerKey>().is_err());
        assert!("TOTAL".parse::<LayerKey>().is_err());
        assert!(LayerKey::Layer(2) < LayerKey::Layer(10));
        assert!(LayerKey::Layer(11) < LayerKey::Total);
    }

    // -- layer_thickness ----------------------------------------------------

    #[test]
    fn flat_phantom_yields_nominal_thicknesses() {
        let spec = flat_spec(Dims::new(16, 160, 4), 5);
        let (_, truth) = generate_phantom(&spec).unwrap();
        let maps = layer_thickness(&truth, spec.axial_um, spec.lateral_x_um, spec.lateral_z_um)
            .unwrap();
        assert_eq!(maps.len(), LAYER_COUNT);
        // Reference surfaces are exact fractional depths, so thickness
        // matches the nominal value to rounding, far inside the half-voxel
        // quantization bound.
        for (k, map) in maps.iter().enumerate() {
            assert_eq!(map.layer(), LayerKey::Layer(k as u8 + 1));
            for &v in map.values() {
                assert!(
                    (v - spec.layer_thicknesses_um[k]).abs() < 1e-9,
                    "layer {} thickness {v}, nominal {}",
                    k + 1,
                    spec.layer_thicknesses_um[k]
                );
            }
        }
    }

    #[test]
    fn coincident_surfaces_give_zero_thickness() {
        let mut s = SurfaceSet::zeros(2, 2);
        for k in 0..=LAYER_COUNT {
            for z in 0..2 {
                for x in 0..2 {
                    // Surfaces 4 and 5 coincide: layer 4 has zero thickness.
                    let depth = 10.0 + k.min(3) as f64 * 5.0 + k.max(4) as f64 - 4.0;
                    s.set(k, x, z, depth);
                }
            }
        }
        let maps = layer_thickness(&s, 3.87, 50.0, 50.0).unwrap();
        assert!(maps[3].values().iter().all(|&v| v == 0.0));
        assert!(maps[0].values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn doubling_axial_scale_doubles_thickness() {
        let spec = PhantomSpec::new(Dims::new(8, 160, 3), 2);
        let (_, truth) = generate_phantom(&spec).unwrap();
        let single = layer_thickness(&truth, 3.87, 50.0, 50.0).unwrap();
        let double = layer_thickness(&truth, 7.74, 50.0, 50.0).unwrap();
        for (a, b) in single.iter().zip(&double) {
            for (&va, &vb) in a.values().iter().zip(b.values()) {
                // ×2 is exact in binary floating point.
                assert_eq!(vb, 2.0 * va);
            }
        }
    }

    #[test]
    fn non_monotone_surfaces_are_rejected() {
        let mut s = SurfaceSet::zeros(2, 2);
        for k in 0..=LAYER_COUNT {
            for z in 0..2 {
                for x in 0..2 {
                    s.set(k, x, z, 10.0 + k as f64 * 4.0);
                }
            }
        }
        s.set(5, 1, 1, 0.0); // dips above surface 4
        assert!(matches!(
            layer_thickness(&s, 3.87, 50.0, 50.0),
            Err(ThicknessError::BadMap(_))
        ));
    }

    // -- total_thickness ----------------------------------------------------

    #[test]
    fn zero_maps_sum_to_zero() {
        let maps: Vec<ThicknessMap> = (1..=LAYER_COUNT as u8)
            .map(|k| constant_map(LayerKey::Layer(k), 4, 3, 0.0))
            .collect();
        let total = total_thickness(&maps).unwrap();
        assert_eq!(total.layer(), LayerKey::Total);
        assert!(total.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_telescopes_to_outer_surfaces() {
        let spec = PhantomSpec::new(Dims::new(12, 160, 4), 9);
        let (_, truth) = generate_phantom(&spec).unwrap();
        let maps = layer_thickness(&truth, spec.axial_um, spec.lateral_x_um, spec.lateral_z_um)
            .unwrap();
        let total = total_thickness(&maps).unwrap();
        for z in 0..truth.nz() {
            for x in 0..truth.nx() {
                // The layer sum telescopes to the outer surface separation;
                // exact up to one rounding per addition.
                let span = (truth.get(LAYER_COUNT, x, z) - truth.get(0, x, z)) * spec.axial_um;
                assert!((total.get(x, z) - span).abs() < 1e-9);
                // Against a recount in the same order the identity is exact.
                let mut sum = 0.0;
                for m in &maps {
                    sum += m.get(x, z);
                }
                assert_eq!(total.get(x, z).to_bits(), sum.to_bits());
            }
        }
    }

    #[test]
    fn total_rejects_bad_sets() {
        let maps: Vec<ThicknessMap> = (1..=LAYER_COUNT as u8)
            .map(|k| constant_map(LayerKey::Layer(k), 4, 3, 10.0))
            .collect();

        let short = &maps[..10];
        assert!(matches!(
            total_thickness(short),
            Err(ThicknessError::BadMapSet { .. })
        ));

        let mut shuffled = maps.clone();
        shuffled.swap(0, 5);
        assert!(matches!(
            total_thickness(&shuffled),
            Err(ThicknessError::BadMapSet { .. })
        ));

        let mut mismatched = maps;
        mismatched[3] = constant_map(LayerKey::Layer(4), 5, 3, 10.0);
        assert!(matches!(
            total_thickness(&mismatched),
            Err(ThicknessError::GridMismatch(_))
        ));
    }

    // -- find_fovea ---------------------------------------------------------

    #[test]
    fn unique_minimum_is_found() {
        let (nx, nz) = (128, 64);
        let mut values = vec![300.0; nx * nz];
        // A smooth dip centered on (64, 32).
        for z in 0..nz {
            for x in 0..nx {
                let d2 = (x as f64 - 64.0).powi(2) + (z as f64 - 32.0).powi(2);
                values[z * nx + x] -= 80.0 * (-d2 / 50.0).exp();
            }
        }
        let map = ThicknessMap::new(LayerKey::Layer(1), nx, nz, 47.0, 94.0, values).unwrap();
        assert_eq!(find_fovea(&map, 0), (64, 32));
        assert_eq!(find_fovea(&map, 2), (64, 32));
    }

    #[test]
    fn ties_prefer_grid_center_then_lexicographic() {
        let (nx, nz) = (9, 9);
        let mut values = vec![100.0; nx * nz];
        values[nx + 1] = 5.0; // (1, 1)
        values[4 * nx + 4] = 5.0; // exact grid center
        let map = ThicknessMap::new(LayerKey::Layer(1), nx, nz, 50.0, 50.0, values).unwrap();
        assert_eq!(find_fovea(&map, 0), (4, 4));

        let mut values = vec![100.0; nx * nz];
        values[4 * nx + 2] = 5.0;
        values[4 * nx + 6] = 5.0; // same distance to center; (2, 4) is smaller
        let map = ThicknessMap::new(LayerKey::Layer(1), nx, nz, 50.0, 50.0, values).unwrap();
        assert_eq!(find_fovea(&map, 0), (2, 4));
    }

    #[test]
    fn pit_phantom_fovea_lands_on_pit_center() {
        let spec = PhantomSpec::new(Dims::new(64, 160, 32), 11);
        let (_, truth) = generate_phantom(&spec).unwrap();
        let maps = layer_thickness(&truth, spec.axial_um, spec.lateral_x_um, spec.lateral_z_um)
            .unwrap();
        let (fx, fz) = find_fovea(&maps[0], 2);
        let (cx, cz) = spec.pit_center_px;
        assert!(
            (fx as f64 - cx).abs() <= 2.0 && (fz as f64 - cz).abs() <= 2.0,
            "fovea ({fx}, {fz}) vs pit center ({cx}, {cz})"
        );
    }

    // -- sector_grid --------------------------------------------------------

    /// 61×61 grid at 100 µm pitch, centered fovea: spans ±3 mm, so all nine
    /// sectors are populated and the outer circle's edge lies on the grid.
    fn default_grid(eye: EyeSide) -> SectorAssignment {
        sector_grid(61, 61, 100.0, 100.0, (30.0, 30.0), ETDRS_DIAMETERS_UM, eye).unwrap()
    }

    #[test]
    fn center_pixel_is_fovea_sector() {
        let g = default_grid(EyeSide::Right);
        assert_eq!(g.label(30, 30), 1);
    }

    #[test]
    fn nasal_pixel_in_inner_ring() {
        // 1.0 mm nasal of center with d1 = 1 mm, d2 = 3 mm: radius falls
        // between the circles, +x is nasal for a right eye → sector 3.
        let g = default_grid(EyeSide::Right);
        assert_eq!(g.label(40, 30), 3);
        // The same pixel is temporal (5) for a left eye.
        let g = default_grid(EyeSide::Left);
        assert_eq!(g.label(40, 30), 5);
    }

    #[test]
    fn quadrants_and_rings_classify_as_documented() {
        let g = default_grid(EyeSide::Right);
        // Inner ring, four quadrants (1 mm from center).
        assert_eq!(g.label(30, 20), 2, "superior is -z");
        assert_eq!(g.label(30, 40), 4, "inferior is +z");
        assert_eq!(g.label(20, 30), 5, "temporal is -x on a right eye");
        // Outer ring (2 mm from center).
        assert_eq!(g.label(30, 10), 6);
        assert_eq!(g.label(50, 30), 7);
        assert_eq!(g.label(30, 50), 8);
        assert_eq!(g.label(10, 30), 9);
        // Diagonal pixels belong to the vertical pair.
        assert_eq!(g.label(38, 22), 2, "45° superior-nasal diagonal");
        assert_eq!(g.label(38, 38), 4, "45° inferior-nasal diagonal");
        // Ring boundaries are half-open: r = r1 is parafoveal, r = r3 is
        // outside.
        assert_eq!(g.label(35, 30), 3, "exactly on the inner circle");
        assert_eq!(g.label(60, 30), 0, "exactly on the outer circle");
    }

    #[test]
    fn every_inside_pixel_gets_exactly_one_sector() {
        let g = default_grid(EyeSide::Right);
        for z in 0..61 {
            for x in 0..61 {
                let r = ((x as f64 - 30.0) * 100.0).hypot((z as f64 - 30.0) * 100.0);
                let label = g.label(x, z);
                if r < 3000.0 {
                    assert!((1..=9).contains(&label), "({x}, {z}) → {label}");
                } else {
                    assert_eq!(label, 0, "({x}, {z}) at r = {r}");
                }
            }
        }
    }

    #[test]
    fn mirroring_toggles_eye_side_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let nx = rng.gen_range(20..60);
            let nz = rng.gen_range(20..60);
            // Half-integer centers keep the reflected center exact.
            let cx = rng.gen_range(5..nx - 5) as f64 + 0.5 * rng.gen_range(0..2) as f64;
            let cz = rng.gen_range(5..nz - 5) as f64;
            let sx = rng.gen_range(40.0..160.0);
            let sz = rng.gen_range(40.0..160.0);
            let right =
                sector_grid(nx, nz, sx, sz, (cx, cz), ETDRS_DIAMETERS_UM, EyeSide::Right).unwrap();
            let left = sector_grid(
                nx,
                nz,
                sx,
                sz,
                ((nx - 1) as f64 - cx, cz),
                ETDRS_DIAMETERS_UM,
                EyeSide::Left,
            )
            .unwrap();
            for z in 0..nz {
                for x in 0..nx {
                    assert_eq!(
                        right.label(x, z),
                        left.label(nx - 1 - x, z),
                        "mirror mismatch at ({x}, {z})"
                    );
                }
            }
        }
    }

    #[test]
    fn sector_grid_rejects_bad_inputs() {
        assert!(matches!(
            sector_grid(10, 10, 50.0, 50.0, (12.0, 5.0), ETDRS_DIAMETERS_UM, EyeSide::Right),
            Err(ThicknessError::CenterOutsideGrid(..))
        ));
        assert!(matches!(
            sector_grid(10, 10, 50.0, 50.0, (5.0, 5.0), [3000.0, 1000.0, 6000.0], EyeSide::Right),
            Err(ThicknessError::BadDiameters(_))
        ));
        assert!(matches!(
            sector_grid(10, 10, 0.0, 50.0, (5.0, 5.0), ETDRS_DIAMETERS_UM, EyeSide::Right),
            Err(ThicknessError::BadMap(_))
        ));
    }

    // -- sector_stats -------------------------------------------------------

    #[test]
    fn constant_map_has_exact_mean_and_zero_sd() {
        let g = default_grid(EyeSide::Right);
        let map = constant_map(LayerKey::Total, 61, 61, 300.0);
        let map = ThicknessMap::new(LayerKey::Total, 61, 61, 100.0, 100.0, map.values).unwrap();
        let stats = sector_stats(&map, &g).unwrap();
        for s in 1..=SECTOR_COUNT {
            let cell = stats.sector(s);
            assert!(cell.count > 0);
            assert_eq!(cell.mean, Some(300.0));
            assert_eq!(cell.sd, Some(0.0));
        }
    }

    /// Independent accumulation: bucket values per sector in grid order,
    /// sort ascending, sum sequentially — the documented canonical order.
    fn brute_force_stats(
        map: &ThicknessMap,
        assignment: &SectorAssignment,
    ) -> Vec<(usize, Option<f64>, Option<f64>)> {
        (1..=SECTOR_COUNT)
            .map(|s| {
                let mut vals: Vec<f64> = Vec::new();
                for z in 0..map.nz() {
                    for x in 0..map.nx() {
                        if assignment.label(x, z) == s as u8 {
                            vals.push(map.get(x, z));
                        }
                    }
                }
                if vals.is_empty() {
                    return (0, None, None);
                }
                vals.sort_by(f64::total_cmp);
                let mut sum = 0.0;
                for &v in &vals {
                    sum += v;
                }
                let mean = sum / vals.len() as f64;
                let mut ssd = 0.0;
                for &v in &vals {
                    ssd += (v - mean) * (v - mean);
                }
                (vals.len(), Some(mean), Some((ssd / vals.len() as f64).sqrt()))
            })
            .collect()
    }

    #[test]
    fn stats_match_brute_force_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let nx = rng.gen_range(10..80);
            let nz = rng.gen_range(10..80);
            let cx = rng.gen_range(2..nx - 2) as f64;
            let cz = rng.gen_range(2..nz - 2) as f64;
            let sx = rng.gen_range(30.0..200.0);
            let sz = rng.gen_range(30.0..200.0);
            let eye = if rng.gen_bool(0.5) { EyeSide::Right } else { EyeSide::Left };
            let g = sector_grid(nx, nz, sx, sz, (cx, cz), ETDRS_DIAMETERS_UM, eye).unwrap();
            let values: Vec<f64> = (0..nx * nz).map(|_| rng.gen_range(0.0..400.0)).collect();
            let map = ThicknessMap::new(LayerKey::Layer(3), nx, nz, sx, sz, values).unwrap();
            let stats = sector_stats(&map, &g).unwrap();
            for (s, (count, mean, sd)) in brute_force_stats(&map, &g).into_iter().enumerate() {
                let cell = stats.sector(s + 1);
                assert_eq!(cell.count, count);
                assert_eq!(cell.mean.map(f64::to_bits), mean.map(f64::to_bits));
                assert_eq!(cell.sd.map(f64::to_bits), sd.map(f64::to_bits));
            }
        }
    }

    #[test]
    fn mirror_invariance_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let nx = rng.gen_range(20..70);
            let nz = rng.gen_range(20..70);
            let cx = rng.gen_range(3..nx - 3) as f64;
            let cz = rng.gen_range(3..nz - 3) as f64;
            let map = random_map(LayerKey::Layer(6), nx, nz, &mut rng);
            let grid = sector_grid(
                nx, nz, 47.0, 47.0, (cx, cz), ETDRS_DIAMETERS_UM, EyeSide::Right,
            )
            .unwrap();
            let stats = sector_stats(&map, &grid).unwrap();

            // Reflect the map about the vertical axis through the fovea and
            // toggle the eye side.
            let mut mirrored = vec![0.0; nx * nz];
            for z in 0..nz {
                for x in 0..nx {
                    mirrored[z * nx + (nx - 1 - x)] = map.get(x, z);
                }
            }
            let map_m =
                ThicknessMap::new(LayerKey::Layer(6), nx, nz, 47.0, 47.0, mirrored).unwrap();
            let grid_m = sector_grid(
                nx,
                nz,
                47.0,
                47.0,
                ((nx - 1) as f64 - cx, cz),
                ETDRS_DIAMETERS_UM,
                EyeSide::Left,
            )
            .unwrap();
            let stats_m = sector_stats(&map_m, &grid_m).unwrap();

            for s in 1..=SECTOR_COUNT {
                let (a, b) = (stats.sector(s), stats_m.sector(s));
                assert_eq!(a.count, b.count, "sector {s} count");
                assert_eq!(
                    a.mean.map(f64::to_bits),
                    b.mean.map(f64::to_bits),
                    "sector {s} mean"
                );
                assert_eq!(
                    a.sd.map(f64::to_bits),
                    b.sd.map(f64::to_bits),
                    "sector {s} sd"
                );
            }
        }
    }

    #[test]
    fn small_grid_reports_empty_sectors() {
        // A 5×5 grid at 50 µm pitch spans ±100 µm: everything is inside the
        // central disk, so the rings hold no pixels.
        let g = sector_grid(5, 5, 50.0, 50.0, (2.0, 2.0), ETDRS_DIAMETERS_UM, EyeSide::Right)
            .unwrap();
        let map = constant_map(LayerKey::Layer(1), 5, 5, 120.0);
        let map = ThicknessMap::new(LayerKey::Layer(1), 5, 5, 50.0, 50.0, map.values).unwrap();
        let stats = sector_stats(&map, &g).unwrap();
        assert_eq!(stats.sector(1).count, 25);
        for s in 2..=SECTOR_COUNT {
            let cell = stats.sector(s);
            assert_eq!((cell.count, cell.mean, cell.sd), (0, None, None));
        }
    }

    #[test]
    fn stats_reject_grid_mismatch() {
        let g = default_grid(EyeSide::Right);
        let map = constant_map(LayerKey::Layer(1), 60, 61, 120.0);
        assert!(matches!(
            sector_stats(&map, &g),
            Err(ThicknessError::GridMismatch(_))
        ));
    }

    #[test]
    fn fovea_sector_mean_matches_calibrated_total() {
        // A flat stack calibrated so the total is the normative foveal mean
        // (264 µm): the sector-1 mean must reproduce the calibration value.
        let mut spec = flat_spec(Dims::new(64, 160, 64), 3);
        let nominal: f64 = spec.layer_thicknesses_um.iter().sum();
        for t in &mut spec.layer_thicknesses_um {
            *t *= 264.0 / nominal;
        }
        let (_, truth) = generate_phantom(&spec).unwrap();
        let maps = layer_thickness(&truth, spec.axial_um, spec.lateral_x_um, spec.lateral_z_um)
            .unwrap();
        let total = total_thickness(&maps).unwrap();
        let grid = sector_grid(
            64,
            64,
            spec.lateral_x_um,
            spec.lateral_z_um,
            (31.5, 31.5),
            ETDRS_DIAMETERS_UM,
            EyeSide::Right,
        )
        .unwrap();
        let stats = sector_stats(&total, &grid).unwrap();
        let mean = stats.sector(1).mean.unwrap();
        assert!((mean - 264.0).abs() < 1e-6, "fovea mean {mean}");
    }

    // -- sector table JSON --------------------------------------------------

    fn sample_table() -> SectorTable {
        let g = default_grid(EyeSide::Right);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        for layer in LayerKey::all() {
            let map = random_map(layer, 61, 61, &mut rng);
            let map = ThicknessMap::new(layer, 61, 61, 100.0, 100.0, map.values().to_vec())
                .unwrap();
            rows.push(sector_stats(&map, &g).unwrap());
        }
        SectorTable::new(rows).unwrap()
    }

    #[test]
    fn sector_table_json_round_trips() {
        let table = sample_table();
        let json = table.to_json();
        let back = SectorTable::from_json(&json).unwrap();
        assert_eq!(table, back);
        // Re-serialization is byte-identical (canonical form).
        assert_eq!(json, back.to_json());
        // Keys appear in layer order, with sectors 1..9 inside.
        let pos = |needle: &str| json.find(needle).unwrap();
        assert!(pos("\"1\"") < pos("\"2\""));
        assert!(pos("\"9\"") < pos("\"10\""));
        assert!(pos("\"11\"") < pos("\"total\""));
    }

    #[test]
    fn sector_table_preserves_empty_cells() {
        let g = sector_grid(5, 5, 50.0, 50.0, (2.0, 2.0), ETDRS_DIAMETERS_UM, EyeSide::Right)
            .unwrap();
        let map = constant_map(LayerKey::Layer(2), 5, 5, 88.0);
        let map = ThicknessMap::new(LayerKey::Layer(2), 5, 5, 50.0, 50.0, map.values).unwrap();
        let table = SectorTable::new(vec![sector_stats(&map, &g).unwrap()]).unwrap();
        let back = SectorTable::from_json(&table.to_json()).unwrap();
        let row = back.get(LayerKey::Layer(2)).unwrap();
        assert_eq!(row.sector(9).count, 0);
        assert_eq!(row.sector(9).mean, None);
    }

    #[test]
    fn sector_table_rejects_malformed_json() {
        // Missing sectors.
        let err = SectorTable::from_json(r#"{"1": {"1": {"count": 0}}}"#);
        assert!(matches!(err, Err(ThicknessError::Json(_))));
        // Bad layer key.
        let cells: String = (1..=9)
            .map(|s| format!(r#""{s}": {{"count": 0}}"#))
            .collect::<Vec<_>>()
            .join(", ");
        let err = SectorTable::from_json(&format!(r#"{{"12": {{{cells}}}}}"#));
        assert!(matches!(err, Err(ThicknessError::Json(_))));
        // count > 0 without a mean.
        let bad = format!(
            r#"{{"3": {{"1": {{"count": 4}}, {}}}}}"#,
            (2..=9)
                .map(|s| format!(r#""{s}": {{"count": 0}}"#))
                .collect::<Vec<_>>()
                .join(", ")
        );
        assert!(matches!(
            SectorTable::from_json(&bad),
            Err(ThicknessError::Json(_))
        ));
        // Duplicate layers at construction.
        let g = default_grid(EyeSide::Right);
        let map = constant_map(LayerKey::Layer(4), 61, 61, 100.0);
        let map = ThicknessMap::new(LayerKey::Layer(4), 61, 61, 100.0, 100.0, map.values).unwrap();
        let row = sector_stats(&map, &g).unwrap();
        assert!(matches!(
            SectorTable::new(vec![row.clone(), row]),
            Err(ThicknessError::Json(_))
        ));
    }

    // -- rendering ----------------------------------------------------------

    #[test]
    fn render_maps_range_to_palette_ends() {
        let palette = jet_palette();
        assert_eq!(palette.len(), 256);
        let mut values = vec![150.0; 6];
        values[0] = 100.0; // range min
        values[1] = 200.0; // range max
        values[2] = 50.0; // below range: clamps to first color
        values[3] = 900.0; // above range: clamps to last color
        let map = ThicknessMap::new(LayerKey::Total, 3, 2, 50.0, 50.0, values).unwrap();
        let ppm = render_pseudocolor(&map, &palette, (100.0, 200.0)).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        let px = |i: usize| &ppm[header.len() + 3 * i..header.len() + 3 * i + 3];
        assert_eq!(px(0), palette[0]);
        assert_eq!(px(1), palette[255]);
        assert_eq!(px(2), palette[0]);
        assert_eq!(px(3), palette[255]);
        // Interior value lands mid-palette.
        assert_eq!(px(4), palette[128]);
    }

    #[test]
    fn render_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let map = random_map(LayerKey::Total, 17, 9, &mut rng);
        let palette = jet_palette();
        let a = render_pseudocolor(&map, &palette, (0.0, 500.0)).unwrap();
        let b = render_pseudocolor(&map, &palette, (0.0, 500.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_rejects_degenerate_inputs() {
        let map = constant_map(LayerKey::Total, 2, 2, 1.0);
        let palette = jet_palette();
        assert!(matches!(
            render_pseudocolor(&map, &palette, (5.0, 5.0)),
            Err(ThicknessError::DegenerateRange(..))
        ));
        assert!(matches!(
            render_pseudocolor(&map, &palette[..1], (0.0, 1.0)),
            Err(ThicknessError::PaletteTooSmall(1))
        ));
    }

    // -- file I/O -----------------------------------------------------------

    #[test]
    fn csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = random_map(LayerKey::Layer(7), 5, 4, &mut rng);
        map.values[7] = 19.333333333333333; // not short-decimal
        let map = ThicknessMap::new(LayerKey::Layer(7), 5, 4, 47.0, 47.0, map.values).unwrap();
        map.write_csv(&path).unwrap();
        let back = ThicknessMap::read_csv(LayerKey::Layer(7), 47.0, 47.0, &path).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn csv_read_rejects_damage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let map = constant_map(LayerKey::Layer(1), 3, 2, 10.0);
        map.write_csv(&path).unwrap();
        // Drop rows mid-grid: the surviving rows no longer tile a rectangle.
        let text = fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(5).collect();
        fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(
            ThicknessMap::read_csv(LayerKey::Layer(1), 50.0, 50.0, &path),
            Err(ThicknessError::Format(_))
        ));
    }

    #[test]
    fn grid_container_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grid");
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let map = random_map(LayerKey::Total, 6, 5, &mut rng);
        map.write_grid(3.87, &path).unwrap();
        let back = ThicknessMap::read_grid(LayerKey::Total, &path).unwrap();
        assert_eq!(map, back);
    }
}
