//! Volumetric retinal layer segmentation from OCT scans.
//!
//! The crate implements a two-stage segmentation pipeline built on
//! coarse-grained diffusion maps:
//!
//! 1. [`volume`] — the raw scan container, file format, and synthetic
//!    phantoms with known ground-truth surfaces.
//! 2. [`graph`] — block coarse-graining of a volume into graph nodes with a
//!    sparse Gaussian affinity kernel over intensity and position.
//! 3. [`diffusion`] — Markov normalization, spectral decomposition, the
//!    diffusion-map embedding, and k-means in embedding space.
//! 4. [`segmentation`] — stage 1 localizes the retina as the middle of three
//!    coarse clusters; stage 2 re-clusters the band into the eleven retinal
//!    layers and extracts twelve boundary surfaces.
//! 5. [`thickness`] — per-layer thickness maps, fovea detection, the
//!    nine-sector ETDRS grid, and sector statistics.
//! 6. [`stats`] — hypothesis tests (ANOVA, t, regression slope), normative
//!    tables, and synthetic population checks.
//!
//! All randomized steps take explicit seeds; a fixed seed reproduces output
//! byte-for-byte regardless of thread count.

pub mod diffusion;
pub mod graph;
pub mod segmentation;
pub mod stats;
pub mod surfaces;
pub mod thickness;
pub mod volume;

pub use surfaces::SurfaceSet;
pub use volume::{Dims, Volume};
