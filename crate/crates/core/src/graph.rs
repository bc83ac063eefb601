//! Coarse-graining a volume into graph nodes and building the sparse
//! affinity kernel.
//!
//! Voxels are grouped into rectangular blocks (ceil division tiles the
//! region; edge blocks may be smaller). Each non-empty block becomes one
//! node carrying the mean coordinate of its member voxels and, via
//! [`node_features`], their mean intensity. Nodes within geometric radius
//! `r` of each other are joined by the weight
//!
//! ```text
//! k(i, j) = exp(-|F_i - F_j|² / 2σ_f²) · exp(-‖X_i - X_j‖² / 2σ_g²)
//! ```
//!
//! and pairs at distance ≥ r are absent from the matrix entirely. Both
//! scale factors come from [`estimate_sigma`]: 0.15 times the range of the
//! observed pairwise distances, sampled from a bounded random subset of
//! nodes when the graph is large.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

use crate::volume::{Dims, Volume};

/// Fraction of the pairwise-distance range used as a Gaussian scale.
pub const SIGMA_RANGE_FRACTION: f64 = 0.15;
/// Nodes sampled for σ estimation on large graphs.
pub const SIGMA_SAMPLE_NODES: usize = 2_000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("block dims must all be >= 1, got {0}x{1}x{2}")]
    BadBlockDims(usize, usize, usize),
    #[error("region contains no voxels")]
    EmptyRegion,
    #[error("band has {got} column intervals, dims imply {expected}")]
    BandLength { expected: usize, got: usize },
    #[error("feature table has {got} entries for {expected} nodes")]
    FeatureLength { expected: usize, got: usize },
    #[error("pairwise distances have zero range (all equal to {0}); cannot scale the kernel")]
    DegenerateRange(f64),
    #[error("kernel config: {0}")]
    BadKernel(String),
    #[error("affinity entry ({i}, {j}) has invalid weight {w}")]
    BadWeight { i: usize, j: usize, w: f64 },
    #[error("affinity entries for ({i}, {j}) and ({j}, {i}) disagree")]
    Asymmetric { i: usize, j: usize },
    #[error("affinity entry ({i}, {j}) outside matrix of size {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
}

/// Block size used for coarse-graining, in voxels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub bx: usize,
    pub by: usize,
    pub bz: usize,
}

impl BlockDims {
    pub fn new(bx: usize, by: usize, bz: usize) -> Self {
        BlockDims { bx, by, bz }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.bx == 0 || self.by == 0 || self.bz == 0 {
            return Err(GraphError::BadBlockDims(self.bx, self.by, self.bz));
        }
        Ok(())
    }
}

impl std::fmt::Display for BlockDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.bx, self.by, self.bz)
    }
}

/// One coarse-grained block: its voxel bounds, member count, and centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Half-open voxel bounds of the block.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
    /// Number of member voxels (equals the block volume unless a band mask
    /// clips it).
    pub count: usize,
    /// Mean voxel coordinate `(x, y, z)` of the members.
    pub centroid: [f64; 3],
}

/// The node decomposition of a volume region. Blocks tile the region without
/// overlap; every selected voxel belongs to exactly one node.
#[derive(Debug, Clone)]
pub struct NodeSet {
    dims: Dims,
    block: BlockDims,
    /// Per-column `[y_top, y_bottom)` when the region is a masked band.
    band: Option<Vec<(u32, u32)>>,
    nodes: Vec<Node>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn block_dims(&self) -> BlockDims {
        self.block
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Calls `f(x, y, z)` for every member voxel of node `idx`, in a fixed
    /// (z, x, y) order.
    pub fn for_each_voxel<F: FnMut(usize, usize, usize)>(&self, idx: usize, mut f: F) {
        let node = &self.nodes[idx];
        for z in node.z0..node.z1 {
            for x in node.x0..node.x1 {
                let (y0, y1) = self.clip_y(node, x, z);
                for y in y0..y1 {
                    f(x, y, z);
                }
            }
        }
    }

    /// The member y-range of `node` under column `(x, z)`.
    fn clip_y(&self, node: &Node, x: usize, z: usize) -> (usize, usize) {
        match &self.band {
            None => (node.y0, node.y1),
            Some(band) => {
                let (top, bottom) = band[z * self.dims.nx + x];
                (node.y0.max(top as usize), node.y1.min(bottom as usize))
            }
        }
    }
}

/// Tiles the whole volume grid into blocks (ceil division per axis).
pub fn build_nodes(dims: Dims, block: BlockDims) -> Result<NodeSet, GraphError> {
    block.validate()?;
    if dims.is_empty() {
        return Err(GraphError::EmptyRegion);
    }
    build_nodes_impl(dims, block, None)
}

/// Tiles a per-column axial band. `band` holds one `[y_top, y_bottom)`
/// interval per lateral column (`z`-major, x fastest); empty intervals
/// (`top >= bottom`) contribute no voxels.
pub fn build_nodes_in_band(
    dims: Dims,
    block: BlockDims,
    band: &[(u32, u32)],
) -> Result<NodeSet, GraphError> {
    block.validate()?;
    if band.len() != dims.columns() {
        return Err(GraphError::BandLength {
            expected: dims.columns(),
            got: band.len(),
        });
    }
    build_nodes_impl(dims, block, Some(band.to_vec()))
}

fn build_nodes_impl(
    dims: Dims,
    block: BlockDims,
    band: Option<Vec<(u32, u32)>>,
) -> Result<NodeSet, GraphError> {
    let xb = dims.nx.div_ceil(block.bx);
    let yb = dims.ny.div_ceil(block.by);
    let zb = dims.nz.div_ceil(block.bz);
    let mut nodes = Vec::new();
    for bk in 0..zb {
        for bi in 0..xb {
            for bj in 0..yb {
                let x0 = bi * block.bx;
                let x1 = (x0 + block.bx).min(dims.nx);
                let y0 = bj * block.by;
                let y1 = (y0 + block.by).min(dims.ny);
                let z0 = bk * block.bz;
                let z1 = (z0 + block.bz).min(dims.nz);

                let mut count = 0usize;
                let mut sum = [0.0f64; 3];
                for z in z0..z1 {
                    for x in x0..x1 {
                        let (cy0, cy1) = match &band {
                            None => (y0, y1),
                            Some(b) => {
                                let (top, bottom) = b[z * dims.nx + x];
                                (y0.max(top as usize), y1.min(bottom as usize))
                            }
                        };
                        if cy1 <= cy0 {
                            continue;
                        }
                        let rows = cy1 - cy0;
                        count += rows;
                        sum[0] += (x * rows) as f64;
                        // Sum of the arithmetic series cy0..cy1.
                        sum[1] += (rows * (cy0 + cy1 - 1)) as f64 / 2.0;
                        sum[2] += (z * rows) as f64;
                    }
                }
                if count == 0 {
                    continue;
                }
                nodes.push(Node {
                    x0,
                    x1,
                    y0,
                    y1,
                    z0,
                    z1,
                    count,
                    centroid: [
                        sum[0] / count as f64,
                        sum[1] / count as f64,
                        sum[2] / count as f64,
                    ],
                });
            }
        }
    }
    if nodes.is_empty() {
        return Err(GraphError::EmptyRegion);
    }
    Ok(NodeSet { dims, block, band, nodes })
}

/// Per-node scalar features; entry `i` belongs to node `i` of the
/// originating [`NodeSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub values: Vec<f64>,
}

/// Mean intensity of each node's member voxels.
pub fn node_features(volume: &Volume, nodes: &NodeSet) -> Result<FeatureTable, GraphError> {
    assert_eq!(volume.dims(), nodes.dims(), "volume/node grid mismatch");
    let values: Vec<f64> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0f64;
            nodes.for_each_voxel(i, |x, y, z| {
                sum += volume.at(x, y, z) as f64;
            });
            sum / nodes.nodes()[i].count as f64
        })
        .collect();
    Ok(FeatureTable { values })
}

/// Gaussian scale from a population of pairwise distances: 0.15 × range.
/// A zero range (all distances equal) cannot scale a kernel and is an error.
pub fn estimate_sigma(distances: &[f64]) -> Result<f64, GraphError> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &d in distances {
        min = min.min(d);
        max = max.max(d);
    }
    if distances.is_empty() || min == max {
        return Err(GraphError::DegenerateRange(if distances.is_empty() {
            0.0
        } else {
            min
        }));
    }
    Ok(SIGMA_RANGE_FRACTION * (max - min))
}

/// Selects the node subset used for σ estimation: all nodes when there are
/// at most `max_sample`, otherwise a seeded sample without replacement.
fn sigma_sample(n: usize, max_sample: usize, seed: u64) -> Vec<usize> {
    if n <= max_sample {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, max_sample).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// σ for the feature term, from sampled pairwise |F_i − F_j|.
pub fn feature_sigma(features: &FeatureTable, seed: u64) -> Result<f64, GraphError> {
    let idx = sigma_sample(features.values.len(), SIGMA_SAMPLE_NODES, seed);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = (features.values[i] - features.values[j]).abs();
            min = min.min(d);
            max = max.max(d);
        }
    }
    if !(min < max) {
        return Err(GraphError::DegenerateRange(if min.is_finite() { min } else { 0.0 }));
    }
    Ok(SIGMA_RANGE_FRACTION * (max - min))
}

/// σ for the geometric term, from sampled pairwise ‖X_i − X_j‖ measured
/// under the per-axis `geo_scale`.
pub fn geometry_sigma(nodes: &NodeSet, geo_scale: [f64; 3], seed: u64) -> Result<f64, GraphError> {
    let idx = sigma_sample(nodes.len(), SIGMA_SAMPLE_NODES, seed);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        let ci = scale_point(nodes.nodes()[i].centroid, geo_scale);
        for &j in &idx[a + 1..] {
            let cj = scale_point(nodes.nodes()[j].centroid, geo_scale);
            let d = centroid_distance2(ci, cj).sqrt();
            min = min.min(d);
            max = max.max(d);
        }
    }
    if !(min < max) {
        return Err(GraphError::DegenerateRange(if min.is_finite() { min } else { 0.0 }));
    }
    Ok(SIGMA_RANGE_FRACTION * (max - min))
}

#[inline]
fn scale_point(p: [f64; 3], s: [f64; 3]) -> [f64; 3] {
    [p[0] * s[0], p[1] * s[1], p[2] * s[2]]
}

#[inline]
fn centroid_distance2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Parameters of the affinity kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub sigma_geo: f64,
    pub sigma_feature: f64,
    /// Sparsification radius; pairs at geometric distance ≥ `radius` (after
    /// `geo_scale`) are absent.
    pub radius: f64,
    pub block_dims: BlockDims,
    /// Per-axis factors applied to centroid coordinates before geometric
    /// distances. `[1.0; 3]` measures in voxels; `1/block pitch` per axis
    /// measures in node-grid steps, which keeps the neighborhood isotropic
    /// for anisotropic blocks.
    pub geo_scale: [f64; 3],
}

impl KernelConfig {
    /// A kernel over plain voxel-unit geometry.
    pub fn voxel_units(sigma_geo: f64, sigma_feature: f64, radius: f64, block_dims: BlockDims) -> Self {
        KernelConfig {
            sigma_geo,
            sigma_feature,
            radius,
            block_dims,
            geo_scale: [1.0; 3],
        }
    }

    /// Scale factors measuring geometry in node-grid steps for `block`.
    pub fn node_grid_scale(block: BlockDims) -> [f64; 3] {
        [
            1.0 / block.bx as f64,
            1.0 / block.by as f64,
            1.0 / block.bz as f64,
        ]
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for (name, v) in [
            ("sigma_geo", self.sigma_geo),
            ("sigma_feature", self.sigma_feature),
            ("radius", self.radius),
            ("geo_scale[0]", self.geo_scale[0]),
            ("geo_scale[1]", self.geo_scale[1]),
            ("geo_scale[2]", self.geo_scale[2]),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(GraphError::BadKernel(format!("{name} must be > 0, got {v}")));
            }
        }
        self.block_dims.validate()
    }
}

/// Symmetric sparse affinity matrix in CSR form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseAffinity {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    /// Stored value at `(i, j)`, if present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).ok().map(|k| vals[k])
    }

    /// Row sums (node degrees).
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Builds a matrix from an explicit entry list. Entries may be given
    /// once per unordered pair or in both directions (values must agree
    /// exactly). Weights must be finite and > 0. Intended for tests and
    /// interchange; [`build_affinity`] additionally guarantees the kernel
    /// invariants (unit diagonal, weights ≤ 1, radius cutoff).
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        for &(i, j, w) in entries {
            if i >= n || j >= n {
                return Err(GraphError::IndexOutOfRange { i, j, n });
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(GraphError::BadWeight { i, j, w });
            }
            for key in [(i, j), (j, i)] {
                match map.insert(key, w) {
                    Some(prev) if prev != w => {
                        return Err(GraphError::Asymmetric { i, j });
                    }
                    _ => {}
                }
            }
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (&(i, j), &w) in &map {
            rows[i].push((j as u32, w));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(map.len());
        let mut vals = Vec::with_capacity(map.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            for (j, w) in row {
                cols.push(j);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseAffinity { n, row_ptr, cols, vals })
    }

    /// Dumps the matrix as `i j value` coordinate-list lines.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {j} {v}")?;
            }
        }
        Ok(())
    }
}

/// Builds the sparse Gaussian affinity over the node set.
///
/// Every node keeps a unit diagonal entry; off-diagonal entries exist only
/// for pairs closer than `cfg.radius` and carry
/// `exp(-ΔF²/2σ_f²  - ‖ΔX‖²/2σ_g²)`. The construction is symmetric
/// bit-for-bit because both directions evaluate the same expression.
pub fn build_affinity(
    nodes: &NodeSet,
    features: &FeatureTable,
    cfg: &KernelConfig,
) -> Result<SparseAffinity, GraphError> {
    cfg.validate()?;
    let n = nodes.len();
    if features.values.len() != n {
        return Err(GraphError::FeatureLength {
            expected: n,
            got: features.values.len(),
        });
    }

    // Geometry is measured on scaled centroids throughout.
    let scaled: Vec<[f64; 3]> = nodes
        .nodes()
        .iter()
        .map(|node| scale_point(node.centroid, cfg.geo_scale))
        .collect();

    // Hash nodes into cells of side `radius`; all neighbors of a node then
    // live in its 3×3×3 cell neighborhood.
    let cell_of = |c: [f64; 3]| -> (i64, i64, i64) {
        (
            (c[0] / cfg.radius).floor() as i64,
            (c[1] / cfg.radius).floor() as i64,
            (c[2] / cfg.radius).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, c) in scaled.iter().enumerate() {
        buckets.entry(cell_of(*c)).or_default().push(i as u32);
    }

    let r2 = cfg.radius * cfg.radius;
    let two_sf2 = 2.0 * cfg.sigma_feature * cfg.sigma_feature;
    let two_sg2 = 2.0 * cfg.sigma_geo * cfg.sigma_geo;
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = scaled[i];
            let fi = features.values[i];
            let (cx, cy, cz) = cell_of(ci);
            let mut row: Vec<(u32, f64)> = Vec::new();
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let Some(cell) = buckets.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &j in cell {
                            let j = j as usize;
                            if j == i {
                                row.push((j as u32, 1.0));
                                continue;
                            }
                            let d2 = centroid_distance2(ci, scaled[j]);
                            if d2 >= r2 {
                                continue;
                            }
                            let df = fi - features.values[j];
                            let w = (-(df * df) / two_sf2 - d2 / two_sg2).exp();
                            if w > 0.0 {
                                row.push((j as u32, w));
                            }
                        }
                    }
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            row
        })
        .collect();

    let nnz: usize = rows.iter().map(|r| r.len()).sum();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for row in rows {
        for (j, w) in row {
            cols.push(j);
            vals.push(w);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseAffinity { n, row_ptr, cols, vals })
}
