//! Normative thickness database: per-(layer, sector) population mean and SD
//! tables, JSON (de)serialization, subject-versus-norm z-score comparison,
//! and aggregation of per-subject sector statistics into new tables.
//!
//! A [`NormativeTable`] covers either the eleven anatomical layers, the
//! total retina, or both, always with all nine ETDRS sectors per covered
//! layer. Several published instrument reference series ship as built-ins
//! (see [`builtin_names`]); `spectralis-current` is the bundled default. The
//! built-ins also exist as JSON files under `fixtures/normative/` so the
//! on-disk format is pinned byte-for-byte by tests.

use std::fmt::Write as _;
use std::path::Path;

use crate::thickness::{LayerKey, SectorTable, SECTOR_COUNT};

use super::StatsError;

/// Name of the built-in table used when no explicit table is given.
pub const DEFAULT_NORMATIVE: &str = "spectralis-current";

/// One (layer, sector) entry of a normative table, in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormCell {
    pub layer: LayerKey,
    /// ETDRS sector, 1..=9.
    pub sector: u8,
    /// Population mean (µm). For the variability table this is the mean of
    /// per-subject intra-sector SDs.
    pub mean: f64,
    /// Population SD (µm), divisor N−1 at aggregation time.
    pub sd: f64,
}

/// A population mean/SD table keyed by (layer, sector).
///
/// Serialized as `{source, units, notes?, cells:[{layer, sector, mean, sd}]}`
/// with cells sorted by layer then sector; [`NormativeTable::to_json`] and
/// [`NormativeTable::from_json`] round-trip byte-exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormativeTable {
    /// Human-readable provenance label (instrument / series).
    pub source: String,
    /// Unit tag; always `"um"`.
    pub units: String,
    /// Optional free-text remarks carried with the file (sector layout,
    /// interpretation of the cells).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub cells: Vec<NormCell>,
}

fn sort_cells(cells: &mut [NormCell]) {
    cells.sort_by(|a, b| a.layer.cmp(&b.layer).then(a.sector.cmp(&b.sector)));
}

impl NormativeTable {
    /// Builds a table from unordered cells, sorting them canonically and
    /// validating the result.
    pub fn new(
        source: impl Into<String>,
        notes: Option<String>,
        mut cells: Vec<NormCell>,
    ) -> Result<Self, StatsError> {
        sort_cells(&mut cells);
        let table = NormativeTable {
            source: source.into(),
            units: "um".to_string(),
            notes,
            cells,
        };
        table.validate()?;
        Ok(table)
    }

    /// Checks the structural invariants: µm units, finite means, finite
    /// non-negative SDs, sectors 1..=9 without duplicates, every covered
    /// layer complete with all nine sectors, and the covered layer set being
    /// the eleven layers, the total, or both.
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.units != "um" {
            return Err(StatsError::Norm(format!(
                "units must be \"um\", got {:?}",
                self.units
            )));
        }
        let mut per_layer: Vec<(LayerKey, u16)> = Vec::new();
        let mut prev: Option<(LayerKey, u8)> = None;
        for cell in &self.cells {
            if !(1..=SECTOR_COUNT as u8).contains(&cell.sector) {
                return Err(StatsError::Norm(format!(
                    "layer {} has sector {} outside 1..=9",
                    cell.layer, cell.sector
                )));
            }
            if !cell.mean.is_finite() || !cell.sd.is_finite() || cell.sd < 0.0 {
                return Err(StatsError::Norm(format!(
                    "layer {} sector {} has invalid mean/sd ({}, {})",
                    cell.layer, cell.sector, cell.mean, cell.sd
                )));
            }
            let key = (cell.layer, cell.sector);
            if prev.map_or(false, |p| p >= key) {
                return Err(StatsError::Norm(format!(
                    "cells not in strict (layer, sector) order at layer {} sector {}",
                    cell.layer, cell.sector
                )));
            }
            prev = Some(key);
            match per_layer.last_mut() {
                Some((layer, mask)) if *layer == cell.layer => *mask |= 1 << cell.sector,
                _ => per_layer.push((cell.layer, 1 << cell.sector)),
            }
        }
        for (layer, mask) in &per_layer {
            if *mask != 0b11_1111_1110 {
                return Err(StatsError::Norm(format!(
                    "layer {layer} does not cover all 9 sectors"
                )));
            }
        }
        let layers: Vec<LayerKey> = per_layer.iter().map(|(l, _)| *l).collect();
        let all_layers: Vec<LayerKey> = (1..=11).map(LayerKey::Layer).collect();
        let mut with_total = all_layers.clone();
        with_total.push(LayerKey::Total);
        if layers != all_layers && layers != [LayerKey::Total] && layers != with_total {
            return Err(StatsError::Norm(
                "table must cover layers 1-11, the total, or both".to_string(),
            ));
        }
        Ok(())
    }

    /// The cell for `(layer, sector)` if the table covers it.
    pub fn get(&self, layer: LayerKey, sector: u8) -> Option<&NormCell> {
        self.cells
            .binary_search_by(|c| c.layer.cmp(&layer).then(c.sector.cmp(&sector)))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// The covered layers, in order.
    pub fn layers(&self) -> Vec<LayerKey> {
        let mut layers: Vec<LayerKey> = Vec::new();
        for cell in &self.cells {
            if layers.last() != Some(&cell.layer) {
                layers.push(cell.layer);
            }
        }
        layers
    }

    /// Canonical JSON rendering (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("normative table serializes");
        text.push('\n');
        text
    }

    /// Parses and validates a table from JSON text.
    pub fn from_json(text: &str) -> Result<Self, StatsError> {
        let table: NormativeTable =
            serde_json::from_str(text).map_err(|e| StatsError::Json(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    /// Reads and validates a table from a JSON file.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, StatsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes the canonical JSON rendering to a file.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), StatsError> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}

const TOTAL_NOTES: &str = "Cells hold total retinal thickness in micrometers. Sector 1 is the \
                           foveal disk; sectors 2-5 are the parafoveal superior, nasal, inferior \
                           and temporal quadrants; sectors 6-9 the perifoveal ones.";

const VARIABILITY_NOTES: &str = "Cells hold the across-subject mean and SD of each subject's \
                                 intra-sector thickness SD, per layer, in micrometers. Sector \
                                 order matches the total-thickness tables.";

/// Total-retina reference series: (name, source label, per-sector (mean, sd)
/// for sectors 1..9).
const TOTAL_SERIES: [(&str, &str, [(f64, f64); 9]); 7] = [
    (
        "spectralis-current",
        "Spectralis (Heidelberg Engineering), bundled reference series",
        [
            (264.0, 13.0),
            (311.0, 14.0),
            (325.0, 15.0),
            (314.0, 13.0),
            (306.0, 14.0),
            (271.0, 18.0),
            (298.0, 19.0),
            (274.0, 17.0),
            (256.0, 14.0),
        ],
    ),
    (
        "spectralis-hra",
        "Spectralis HRA (Heidelberg Engineering), published reference series",
        [
            (265.0, 15.0),
            (312.0, 13.0),
            (325.0, 16.0),
            (316.0, 14.0),
            (307.0, 15.0),
            (273.0, 17.0),
            (272.0, 17.0),
            (265.0, 16.0),
            (255.0, 11.0),
        ],
    ),
    (
        "cirrus-hd",
        "Cirrus HD-OCT (Carl Zeiss Meditec), published reference series",
        [
            (262.0, 16.0),
            (320.0, 12.0),
            (323.0, 12.0),
            (316.0, 11.0),
            (306.0, 10.0),
            (274.0, 13.0),
            (293.0, 13.0),
            (264.0, 11.0),
            (255.0, 9.0),
        ],
    ),
    (
        "rtvue-100",
        "RTVue-100 (Optovue), published reference series",
        [
            (256.0, 15.0),
            (324.0, 11.0),
            (324.0, 11.0),
            (318.0, 10.0),
            (308.0, 13.0),
            (278.0, 13.0),
            (291.0, 14.0),
            (267.0, 12.0),
            (265.0, 10.0),
        ],
    ),
    (
        "topcon-3d-a",
        "3D OCT-1000 (Topcon), published reference series A",
        [
            (231.0, 16.0),
            (293.0, 12.0),
            (296.0, 12.0),
            (288.0, 10.0),
            (280.0, 10.0),
            (249.0, 13.0),
            (266.0, 13.0),
            (240.0, 12.0),
            (234.0, 16.0),
        ],
    ),
    (
        "topcon-3d-b",
        "3D OCT-1000 (Topcon), published reference series B",
        [
            (222.0, 18.0),
            (297.0, 15.0),
            (299.0, 15.0),
            (294.0, 15.0),
            (285.0, 14.0),
            (257.0, 13.0),
            (273.0, 14.0),
            (247.0, 13.0),
            (244.0, 12.0),
        ],
    ),
    (
        "stratus",
        "Stratus OCT (Carl Zeiss Meditec, time domain), published reference series",
        [
            (212.0, 20.0),
            (255.0, 17.0),
            (267.0, 16.0),
            (260.0, 15.0),
            (251.0, 13.0),
            (239.0, 16.0),
            (246.0, 14.0),
            (210.0, 13.0),
            (210.0, 14.0),
        ],
    ),
];

/// Intra-sector variability reference: rows are layers 1..11, columns
/// sectors 1..9, each (mean of per-subject SDs, SD of per-subject SDs).
#[rustfmt::skip]
const VARIABILITY_SERIES: [[(f64, f64); 9]; 11] = [
    [(8.0, 2.0), (10.0, 3.0), (9.0, 2.0), (11.0, 3.0), (9.0, 2.0), (16.0, 4.0), (13.0, 4.0), (12.0, 3.0), (6.0, 2.0)],
    [(23.0, 4.0), (13.0, 3.0), (12.0, 2.0), (14.0, 2.0), (15.0, 3.0), (16.0, 3.0), (18.0, 3.0), (14.0, 3.0), (14.0, 2.0)],
    [(3.0, 1.0), (4.0, 1.0), (3.0, 1.0), (8.0, 2.0), (7.0, 1.0), (6.0, 1.0), (6.0, 1.0), (6.0, 1.0), (6.0, 1.0)],
    [(12.0, 2.0), (4.0, 1.0), (4.0, 1.0), (5.0, 1.0), (4.0, 1.0), (8.0, 2.0), (6.0, 1.0), (6.0, 1.0), (5.0, 1.0)],
    [(12.0, 3.0), (8.0, 1.0), (6.0, 1.0), (9.0, 1.0), (6.0, 1.0), (7.0, 1.0), (8.0, 2.0), (6.0, 1.0), (7.0, 1.0)],
    [(17.0, 3.0), (9.0, 1.0), (9.0, 2.0), (7.0, 1.0), (7.0, 1.0), (10.0, 2.0), (15.0, 3.0), (10.0, 1.0), (10.0, 2.0)],
    [(7.0, 1.0), (3.0, 1.0), (4.0, 1.0), (4.0, 1.0), (5.0, 1.0), (5.0, 1.0), (5.0, 1.0), (4.0, 1.0), (4.0, 1.0)],
    [(5.0, 1.0), (4.0, 1.0), (5.0, 1.0), (2.0, 0.0), (1.0, 0.0), (4.0, 1.0), (4.0, 1.0), (2.0, 0.0), (3.0, 1.0)],
    [(3.0, 1.0), (2.0, 1.0), (1.0, 0.0), (3.0, 1.0), (1.0, 0.0), (3.0, 1.0), (4.0, 1.0), (2.0, 0.0), (3.0, 1.0)],
    [(3.0, 1.0), (2.0, 0.0), (1.0, 0.0), (2.0, 0.0), (1.0, 0.0), (4.0, 1.0), (2.0, 0.0), (3.0, 1.0), (3.0, 1.0)],
    [(5.0, 1.0), (4.0, 1.0), (4.0, 1.0), (3.0, 1.0), (5.0, 1.0), (6.0, 1.0), (7.0, 1.0), (5.0, 1.0), (7.0, 1.0)],
];

/// Name of the built-in intra-sector variability table.
pub const VARIABILITY_NORMATIVE: &str = "intra-sector-variability";

/// Names of all built-in tables, default first.
pub fn builtin_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = TOTAL_SERIES.iter().map(|(n, _, _)| *n).collect();
    names.push(VARIABILITY_NORMATIVE);
    names
}

/// The built-in table called `name`, or `None` for an unknown name.
pub fn builtin(name: &str) -> Option<NormativeTable> {
    if name == VARIABILITY_NORMATIVE {
        let cells = VARIABILITY_SERIES
            .iter()
            .enumerate()
            .flat_map(|(li, row)| {
                row.iter().enumerate().map(move |(si, &(mean, sd))| NormCell {
                    layer: LayerKey::Layer(li as u8 + 1),
                    sector: si as u8 + 1,
                    mean,
                    sd,
                })
            })
            .collect();
        let table = NormativeTable::new(
            "Intra-sector thickness variability, bundled reference series",
            Some(VARIABILITY_NOTES.to_string()),
            cells,
        )
        .expect("built-in variability table is valid");
        return Some(table);
    }
    let (_, source, values) = TOTAL_SERIES.iter().find(|(n, _, _)| *n == name)?;
    let cells = values
        .iter()
        .enumerate()
        .map(|(si, &(mean, sd))| NormCell {
            layer: LayerKey::Total,
            sector: si as u8 + 1,
            mean,
            sd,
        })
        .collect();
    let table = NormativeTable::new(*source, Some(TOTAL_NOTES.to_string()), cells)
        .expect("built-in total table is valid");
    Some(table)
}

/// |z| cutoffs for the three-way normal / borderline / outside call.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZThresholds {
    /// |z| at or above this is at least borderline.
    pub borderline: f64,
    /// |z| at or above this is outside normal limits.
    pub outside: f64,
}

impl Default for ZThresholds {
    fn default() -> Self {
        ZThresholds { borderline: 2.0, outside: 3.0 }
    }
}

impl ZThresholds {
    fn validate(&self) -> Result<(), StatsError> {
        if !(self.borderline.is_finite()
            && self.outside.is_finite()
            && self.borderline > 0.0
            && self.borderline <= self.outside)
        {
            return Err(StatsError::Norm(format!(
                "z thresholds must satisfy 0 < borderline <= outside, got ({}, {})",
                self.borderline, self.outside
            )));
        }
        Ok(())
    }
}

/// Classification of one subject cell against the norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    /// |z| below the borderline threshold.
    Normal,
    /// |z| at or above borderline but below the outside threshold.
    Borderline,
    /// |z| at or above the outside threshold.
    Outside,
    /// No z-score: the norm SD is zero or the subject sector is empty.
    NotComputable,
}

/// One (layer, sector) of a subject-versus-norm comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonCell {
    pub layer: LayerKey,
    pub sector: u8,
    /// Subject sector mean (µm); `None` for an empty sector.
    pub subject_mean: Option<f64>,
    pub norm_mean: f64,
    pub norm_sd: f64,
    /// (subject − norm mean) / norm SD, when computable.
    pub z: Option<f64>,
    pub class: CellClass,
}

/// Full comparison of a subject's sector table against a normative table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    /// Source label of the normative table used.
    pub source: String,
    pub thresholds: ZThresholds,
    /// One cell per (layer, sector) covered by the norm, in norm order.
    pub cells: Vec<ComparisonCell>,
}

impl ComparisonReport {
    /// Number of cells with the given classification.
    pub fn count(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|c| c.class == class).count()
    }

    /// Pretty JSON rendering with trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("comparison report serializes");
        text.push('\n');
        text
    }

    /// Human-readable fixed-width table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "normative comparison vs {}", self.source);
        let _ = writeln!(
            out,
            "thresholds: |z| >= {} borderline, |z| >= {} outside",
            self.thresholds.borderline, self.thresholds.outside
        );
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>10} {:>10} {:>8} {:>8}  {}",
            "layer", "sector", "subject", "norm", "sd", "z", "class"
        );
        for cell in &self.cells {
            let subject = cell
                .subject_mean
                .map_or("-".to_string(), |v| format!("{v:.2}"));
            let z = cell.z.map_or("-".to_string(), |v| format!("{v:+.2}"));
            let class = match cell.class {
                CellClass::Normal => "normal",
                CellClass::Borderline => "borderline",
                CellClass::Outside => "OUTSIDE",
                CellClass::NotComputable => "not computable",
            };
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>10} {:>10.2} {:>8.2} {:>8}  {}",
                cell.layer.to_string(),
                cell.sector,
                subject,
                cell.norm_mean,
                cell.norm_sd,
                z,
                class
            );
        }
        let _ = writeln!(
            out,
            "summary: {} normal, {} borderline, {} outside, {} not computable",
            self.count(CellClass::Normal),
            self.count(CellClass::Borderline),
            self.count(CellClass::Outside),
            self.count(CellClass::NotComputable)
        );
        out
    }
}

/// Z-scores a subject's sector means against a normative table.
///
/// Every (layer, sector) covered by the norm must exist in the subject
/// table; a missing layer is a [`StatsError::KeyMismatch`]. Cells whose norm
/// SD is zero, or whose subject sector is empty, are reported as
/// [`CellClass::NotComputable`] rather than failing the whole comparison. A
/// |z| exactly at a threshold lands in the stricter class, so z = borderline
/// is already borderline.
pub fn compare_to_normative(
    subject: &SectorTable,
    norm: &NormativeTable,
    thresholds: ZThresholds,
) -> Result<ComparisonReport, StatsError> {
    norm.validate()?;
    thresholds.validate()?;
    let mut cells = Vec::with_capacity(norm.cells.len());
    for nc in &norm.cells {
        let row = subject.get(nc.layer).ok_or_else(|| {
            StatsError::KeyMismatch(format!("subject table has no layer {}", nc.layer))
        })?;
        let subject_cell = row.sector(nc.sector as usize);
        let (z, class) = match (subject_cell.mean, nc.sd > 0.0) {
            (Some(mean), true) => {
                let z = (mean - nc.mean) / nc.sd;
                let class = if z.abs() >= thresholds.outside {
                    CellClass::Outside
                } else if z.abs() >= thresholds.borderline {
                    CellClass::Borderline
                } else {
                    CellClass::Normal
                };
                (Some(z), class)
            }
            _ => (None, CellClass::NotComputable),
        };
        cells.push(ComparisonCell {
            layer: nc.layer,
            sector: nc.sector,
            subject_mean: subject_cell.mean,
            norm_mean: nc.mean,
            norm_sd: nc.sd,
            z,
            class,
        });
    }
    Ok(ComparisonReport {
        source: norm.source.clone(),
        thresholds,
        cells,
    })
}

/// Which per-subject quantity to aggregate across a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateStatistic {
    /// Mean and SD of per-subject sector means (total-thickness style).
    SectorMean,
    /// Mean and SD of per-subject intra-sector SDs (variability style).
    IntraSectorSd,
}

/// Aggregates per-subject sector tables into a normative table: per
/// (layer, sector), the across-subject mean and sample SD (divisor N−1) of
/// the chosen statistic.
///
/// Requires at least two subjects with identical layer sets and no empty
/// sectors, and the shared layer set must form a valid normative coverage
/// (layers 1-11, total, or both).
pub fn population_aggregate(
    subjects: &[SectorTable],
    statistic: AggregateStatistic,
    source: impl Into<String>,
) -> Result<NormativeTable, StatsError> {
    if subjects.len() < 2 {
        return Err(StatsError::TooFew {
            what: "subjects to aggregate",
            needed: 2,
            got: subjects.len(),
        });
    }
    let layers: Vec<LayerKey> = subjects[0].rows.iter().map(|r| r.layer).collect();
    for (i, table) in subjects.iter().enumerate().skip(1) {
        let theirs: Vec<LayerKey> = table.rows.iter().map(|r| r.layer).collect();
        if theirs != layers {
            return Err(StatsError::KeyMismatch(format!(
                "subject {i} covers different layers than subject 0"
            )));
        }
    }
    let n = subjects.len() as f64;
    let mut cells = Vec::with_capacity(layers.len() * SECTOR_COUNT);
    for &layer in &layers {
        for sector in 1..=SECTOR_COUNT as u8 {
            let mut values = Vec::with_capacity(subjects.len());
            for table in subjects {
                let cell = table.get(layer).expect("layer checked above").sector(sector as usize);
                let value = match statistic {
                    AggregateStatistic::SectorMean => cell.mean,
                    AggregateStatistic::IntraSectorSd => cell.sd,
                };
                match value {
                    Some(v) => values.push(v),
                    None => {
                        return Err(StatsError::EmptySector { layer, sector });
                    }
                }
            }
            let mean = values.iter().sum::<f64>() / n;
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            cells.push(NormCell { layer, sector, mean, sd });
        }
    }
    NormativeTable::new(source, None, cells)
}
