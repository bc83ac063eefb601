//! Two-stage volumetric segmentation.
//!
//! Stage 1 clusters coarse blocks of the whole volume into three depth bands
//! (above the retina, the retina itself, below it) and keeps the middle band
//! as a per-column [`RegionMask`]. Stage 2 re-clusters fine blocks inside the
//! band into eleven layers, orders the clusters by mean axial depth, and
//! turns the resulting label field into twelve fractional surfaces.
//!
//! Every stochastic step (σ sampling, k-means seeding) derives its generator
//! from the pipeline seed, so a fixed seed reproduces the output bit for bit
//! regardless of thread count.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::{
    embed, kmeans_restarts, kmeans_seeded, markov_normalize, spectral_decompose, ClusterLabels,
    KMEANS_RESTARTS,
    DiffusionError, Embedding,
};
use crate::graph::{
    build_affinity, build_nodes, build_nodes_in_band, feature_sigma, geometry_sigma,
    node_features, BlockDims, FeatureTable, GraphError, KernelConfig, NodeSet,
};
use crate::surfaces::{SurfaceSet, LAYER_COUNT, SURFACE_COUNT};
use crate::volume::Volume;

/// Fraction of lateral columns allowed to miss the retina cluster before
/// localization is declared failed.
pub const MAX_EMPTY_COLUMN_FRACTION: f64 = 0.05;
/// Voxel run length required to accept a refined band edge.
const EDGE_RUN: usize = 3;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("retina localization failed: {0}")]
    LocalizationFailure(String),
    #[error("masked band holds {voxels} voxels, fewer than the {k} clusters requested")]
    MaskedTooSmall { voxels: usize, k: usize },
    #[error("stage 2 produced only {nonempty} non-empty clusters of {k}")]
    CollapsedClusters { nonempty: usize, k: usize },
    #[error("label field contains no labeled voxels")]
    EmptyLabelField,
    #[error("surface grids differ: {0}x{1} vs {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),
    #[error("invalid pipeline config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Graph granularity and clustering arity for one pipeline stage.
#[derive(Debug, Clone, Copy)]
pub struct StageParams {
    pub block: BlockDims,
    /// Sparsification radius in node-grid steps (adjacent blocks along one
    /// axis are one step apart, whatever the block shape).
    pub radius: f64,
    /// Divides lateral (x, z) geometric distance: values above 1 widen the
    /// neighborhood laterally, which speeds up lateral mixing so that slow
    /// within-layer harmonics do not crowd the depth-separating modes out
    /// of the leading spectrum. Axial connectivity is unaffected.
    pub lateral_compression: f64,
    /// Embedding dimension (non-trivial eigenpairs).
    pub omega: usize,
    /// k-means cluster count.
    pub clusters: usize,
}

/// Full pipeline configuration. Stage 1 must use 3 clusters and stage 2 must
/// use 11: the downstream mask and layer semantics depend on those arities.
#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub stage1: StageParams,
    pub stage2: StageParams,
    /// Diffusion time, shared by both stages.
    pub tau: u32,
    /// Median window (columns) for surface smoothing; odd.
    pub smooth_window: usize,
    /// Master seed; all internal generators derive from it.
    pub seed: u64,
    /// Run stage 2 independently per B-scan instead of over the whole band.
    pub per_slice_stage2: bool,
}

impl PipelineConfig {
    /// Defaults: coarse 8×8×1 blocks for localization, fine 4×2×1 blocks
    /// for layer clustering.
    pub fn new(seed: u64) -> Self {
        PipelineConfig {
            stage1: StageParams {
                block: BlockDims::new(8, 8, 1),
                radius: 3.0,
                // Lateral mixing must outrun the volume's lateral extent:
                // the tissue bands span the whole en-face plane, and without
                // compression the slowest diffusion modes on a laterally
                // long node grid encode lateral position, which pulls the
                // K-way cut toward splitting the volume in half instead of
                // separating the bands.
                lateral_compression: 3.0,
                // K−1 coordinates for a K-way cut: a third coordinate would
                // carry intra-retina variation that can outweigh the
                // retina/background separation and destabilize k-means.
                omega: 2,
                clusters: 3,
            },
            stage2: StageParams {
                block: BlockDims::new(4, 2, 1),
                // Below 2.0 so no edge can skip across a one-block-thick
                // layer along the axial grid direction.
                radius: 1.8,
                lateral_compression: 3.0,
                omega: 12,
                clusters: 11,
            },
            tau: 1,
            smooth_window: 5,
            seed,
            per_slice_stage2: false,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.stage1.clusters != 3 {
            return Err(SegmentationError::BadConfig(format!(
                "stage 1 must cluster into 3 bands, got {}",
                self.stage1.clusters
            )));
        }
        if self.stage2.clusters != LAYER_COUNT {
            return Err(SegmentationError::BadConfig(format!(
                "stage 2 must cluster into {LAYER_COUNT} layers, got {}",
                self.stage2.clusters
            )));
        }
        if self.tau == 0 {
            return Err(SegmentationError::BadConfig("tau must be >= 1".into()));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(SegmentationError::BadConfig(format!(
                "smooth_window must be odd and >= 1, got {}",
                self.smooth_window
            )));
        }
        for (name, stage) in [("stage 1", &self.stage1), ("stage 2", &self.stage2)] {
            if !(stage.radius > 0.0) || !stage.radius.is_finite() {
                return Err(SegmentationError::BadConfig(format!(
                    "{name} radius must be > 0, got {}",
                    stage.radius
                )));
            }
            if !(stage.lateral_compression >= 1.0) || !stage.lateral_compression.is_finite() {
                return Err(SegmentationError::BadConfig(format!(
                    "{name} lateral_compression must be >= 1, got {}",
                    stage.lateral_compression
                )));
            }
            if stage.omega == 0 {
                return Err(SegmentationError::BadConfig(format!(
                    "{name} omega must be >= 1"
                )));
            }
            stage.block.validate()?;
        }
        Ok(())
    }
}

/// Distinct generator streams derived from the master seed.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const SALT_STAGE1_FEATURE: u64 = 1;
const SALT_STAGE1_GEO: u64 = 2;
const SALT_STAGE1_KMEANS: u64 = 3;
const SALT_STAGE2_FEATURE: u64 = 4;
const SALT_STAGE2_GEO: u64 = 5;
const SALT_STAGE2_KMEANS: u64 = 6;
const SALT_SLICE: u64 = 0x100;

/// Per-column axial interval of retained voxels, `z`-major and x-fastest
/// like the en-face grids elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    nx: usize,
    nz: usize,
    intervals: Vec<(u32, u32)>,
}

impl RegionMask {
    pub fn new(nx: usize, nz: usize, intervals: Vec<(u32, u32)>) -> Self {
        assert_eq!(intervals.len(), nx * nz);
        RegionMask { nx, nz, intervals }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    /// `[y_top, y_bottom)` for column `(x, z)`.
    pub fn interval(&self, x: usize, z: usize) -> (u32, u32) {
        self.intervals[z * self.nx + x]
    }

    pub fn intervals(&self) -> &[(u32, u32)] {
        &self.intervals
    }

    /// Total voxels retained.
    pub fn voxel_count(&self) -> usize {
        self.intervals
            .iter()
            .map(|&(t, b)| (b.saturating_sub(t)) as usize)
            .sum()
    }

    /// Checks `0 ≤ y_top < y_bottom ≤ ny` on every column.
    pub fn validate(&self, ny: usize) -> bool {
        self.intervals
            .iter()
            .all(|&(t, b)| t < b && (b as usize) <= ny)
    }
}

/// Per-voxel layer labels; 0 marks voxels outside the band, 1–11 are
/// depth-ordered layers.
#[derive(Debug, Clone)]
pub struct LabelField {
    dims: crate::volume::Dims,
    labels: Vec<u8>,
}

impl LabelField {
    pub fn dims(&self) -> crate::volume::Dims {
        self.dims
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Diagnostics for one graph stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub nodes: usize,
    pub edges: usize,
    pub sigma_feature: f64,
    pub sigma_geo: f64,
}

/// Diagnostics accumulated across the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentationReport {
    pub stage1: StageReport,
    /// One entry for the whole band, or one per B-scan in per-slice mode.
    pub stage2: Vec<StageReport>,
    /// Columns whose mask interval was copied from a neighbor.
    pub mask_filled_columns: usize,
    /// Columns whose surfaces were copied from a neighbor.
    pub surface_filled_columns: usize,
    /// Layers that collapsed to zero thickness somewhere and were split.
    pub split_layers: Vec<u8>,
    /// Columns affected by collapsed-layer splitting.
    pub split_columns: usize,
}

/// Everything the pipeline produces for one volume.
#[derive(Debug)]
pub struct SegmentationResult {
    pub mask: RegionMask,
    pub labels: LabelField,
    pub surfaces: SurfaceSet,
    pub report: SegmentationReport,
}

/// Shared stage machinery: blocks → features → kernel → embedding → k-means.
struct StageOutput {
    nodes: NodeSet,
    labels: ClusterLabels,
    report: StageReport,
}

/// How a stage's k-means is initialized.
enum StageSeeding<'a> {
    /// k-means++ from the stage's derived seed.
    PlusPlus,
    /// Depth-profile-guided centroids (see [`depth_profile_centroids`]).
    DepthProfile { band: &'a [(u32, u32)], nx: usize },
}

fn run_stage(
    volume: &Volume,
    nodes: NodeSet,
    stage: &StageParams,
    tau: u32,
    seeding: StageSeeding,
    feature_seed: u64,
    geo_seed: u64,
    kmeans_seed: u64,
) -> Result<StageOutput, SegmentationError> {
    let features = node_features(volume, &nodes)?;
    let sigma_feature = feature_sigma(&features, feature_seed)?;
    let mut geo_scale = KernelConfig::node_grid_scale(stage.block);
    geo_scale[0] /= stage.lateral_compression;
    geo_scale[2] /= stage.lateral_compression;
    let sigma_geo = geometry_sigma(&nodes, geo_scale, geo_seed)?;
    let kernel = KernelConfig {
        sigma_geo,
        sigma_feature,
        radius: stage.radius,
        block_dims: stage.block,
        geo_scale,
    };
    let affinity = build_affinity(&nodes, &features, &kernel)?;
    let edges = affinity.nnz();
    let p = markov_normalize(&affinity)?;
    let spectrum = spectral_decompose(&p, stage.omega + 1)?;
    let embedding = embed(&spectrum, tau)?;
    let labels = match seeding {
        StageSeeding::PlusPlus => {
            kmeans_restarts(&embedding, stage.clusters, kmeans_seed, KMEANS_RESTARTS)?
        }
        StageSeeding::DepthProfile { band, nx } => {
            let init =
                depth_profile_centroids(&embedding, &nodes, &features, band, nx, stage.clusters);
            kmeans_seeded(&embedding, stage.clusters, init)?
        }
    };
    let report = StageReport {
        nodes: nodes.len(),
        edges,
        sigma_feature,
        sigma_geo,
    };
    Ok(StageOutput { nodes, labels, report })
}

/// Bins used for the depth profile in [`depth_profile_centroids`].
const PROFILE_BINS: usize = 64;

/// Initial k-means centroids for layer clustering, derived from the band's
/// own depth structure. Nodes are binned by relative depth within their
/// column's band interval; the per-bin mean feature forms a 1-D intensity
/// profile, which an exact dynamic program partitions into `k` contiguous
/// segments of minimal within-segment variance. Each segment's nodes
/// contribute their mean embedding point as one starting centroid. Layers
/// are contiguous in depth and distinct in intensity, so this lands the
/// initialization near the basin where Lloyd separates layers instead of
/// subdividing thick ones.
fn depth_profile_centroids(
    embedding: &Embedding,
    nodes: &NodeSet,
    features: &FeatureTable,
    band: &[(u32, u32)],
    nx: usize,
    k: usize,
) -> Vec<f64> {
    let dim = embedding.omega();
    let nz = band.len() / nx;

    // Relative depth per node, binned.
    let bins: Vec<usize> = nodes
        .nodes()
        .iter()
        .map(|node| {
            let cx = (node.centroid[0].round().max(0.0) as usize).min(nx.saturating_sub(1));
            let cz = (node.centroid[2].round().max(0.0) as usize).min(nz.saturating_sub(1));
            let (t, b) = band[cz * nx + cx];
            let (t, b) = (t as f64, b as f64);
            let rel = if b > t {
                ((node.centroid[1] + 0.5 - t) / (b - t)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            ((rel * PROFILE_BINS as f64) as usize).min(PROFILE_BINS - 1)
        })
        .collect();

    let mut bin_count = vec![0usize; PROFILE_BINS];
    let mut bin_sum = vec![0.0f64; PROFILE_BINS];
    for (&bin, &f) in bins.iter().zip(&features.values) {
        bin_count[bin] += 1;
        bin_sum[bin] += f;
    }
    let occupied: Vec<usize> = (0..PROFILE_BINS).filter(|&b| bin_count[b] > 0).collect();

    // Map each occupied bin to a segment 0..k.
    let seg_of_occupied = if occupied.len() >= k {
        segment_profile(
            &occupied.iter().map(|&b| bin_sum[b] / bin_count[b] as f64).collect::<Vec<_>>(),
            &occupied.iter().map(|&b| bin_count[b] as f64).collect::<Vec<_>>(),
            k,
        )
    } else {
        // Too few distinct depths to segment; spread what exists evenly.
        (0..occupied.len()).map(|i| i * k / occupied.len().max(1)).collect()
    };
    let mut seg_of_bin = vec![0usize; PROFILE_BINS];
    for (i, &b) in occupied.iter().enumerate() {
        seg_of_bin[b] = seg_of_occupied[i];
    }
    // Empty bins inherit the segment of the nearest occupied bin below/above.
    let mut last = 0usize;
    for b in 0..PROFILE_BINS {
        if bin_count[b] > 0 {
            last = seg_of_bin[b];
        } else {
            seg_of_bin[b] = last;
        }
    }

    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &bin) in bins.iter().enumerate() {
        let seg = seg_of_bin[bin];
        counts[seg] += 1;
        for (s, v) in sums[seg * dim..(seg + 1) * dim].iter_mut().zip(embedding.point(i)) {
            *s += v;
        }
    }
    let mut centroids = vec![0.0f64; k * dim];
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                *dst = s / counts[c] as f64;
            }
        } else {
            // Duplicate the nearest non-empty segment's mean; Lloyd's
            // empty-cluster repair re-spreads duplicates deterministically.
            let src = (0..k)
                .filter(|&o| counts[o] > 0)
                .min_by_key(|&o| ((o as i64 - c as i64).unsigned_abs(), o))
                .expect("band holds at least one node");
            let row: Vec<f64> = sums[src * dim..(src + 1) * dim]
                .iter()
                .map(|s| s / counts[src] as f64)
                .collect();
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&row);
        }
    }
    centroids
}

/// Exact 1-D k-segmentation: splits the weighted sequence `values` into `k`
/// contiguous segments minimizing the total within-segment weighted sum of
/// squares (classic dynamic program). Returns the segment index of each
/// element, non-decreasing from 0 to k−1.
fn segment_profile(values: &[f64], weights: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    debug_assert!(k >= 1 && k <= n && weights.len() == n);
    // Prefix sums for O(1) segment cost: sse(i..=j) = Q − S²/W.
    let mut pw = vec![0.0f64; n + 1];
    let mut ps = vec![0.0f64; n + 1];
    let mut pq = vec![0.0f64; n + 1];
    for i in 0..n {
        pw[i + 1] = pw[i] + weights[i];
        ps[i + 1] = ps[i] + weights[i] * values[i];
        pq[i + 1] = pq[i] + weights[i] * values[i] * values[i];
    }
    let cost = |i: usize, j: usize| -> f64 {
        // Inclusive i..=j.
        let w = pw[j + 1] - pw[i];
        if w <= 0.0 {
            return 0.0;
        }
        let s = ps[j + 1] - ps[i];
        let q = pq[j + 1] - pq[i];
        (q - s * s / w).max(0.0)
    };

    // dp[s][j]: best cost covering 0..=j with s+1 segments; cut[s][j]: start
    // of the last segment in that optimum.
    let mut dp = vec![vec![f64::INFINITY; n]; k];
    let mut cut = vec![vec![0usize; n]; k];
    for j in 0..n {
        dp[0][j] = cost(0, j);
    }
    for s in 1..k {
        for j in s..n {
            for i in s..=j {
                let c = dp[s - 1][i - 1] + cost(i, j);
                if c < dp[s][j] {
                    dp[s][j] = c;
                    cut[s][j] = i;
                }
            }
        }
    }

    let mut seg = vec![0usize; n];
    let mut end = n - 1;
    for s in (1..k).rev() {
        let start = cut[s][end];
        for e in seg.iter_mut().take(end + 1).skip(start) {
            *e = s;
        }
        end = start - 1;
    }
    seg
}

/// Ranks clusters by mean member-voxel depth (ascending), breaking ties by
/// voxel count descending, then original index. Returns `perm[old] = rank`.
fn depth_order(nodes: &NodeSet, labels: &ClusterLabels) -> Vec<u32> {
    let k = labels.k();
    let mut depth_sum = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (node, &label) in nodes.nodes().iter().zip(labels.labels()) {
        let c = label as usize;
        depth_sum[c] += node.centroid[1] * node.count as f64;
        counts[c] += node.count;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let da = if counts[a] > 0 { depth_sum[a] / counts[a] as f64 } else { f64::INFINITY };
        let db = if counts[b] > 0 { depth_sum[b] / counts[b] as f64 } else { f64::INFINITY };
        da.total_cmp(&db)
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    let mut perm = vec![0u32; k];
    for (rank, &old) in order.iter().enumerate() {
        perm[old] = rank as u32;
    }
    perm
}

/// Mean member-voxel intensity per cluster.
fn cluster_means(volume: &Volume, nodes: &NodeSet, labels: &ClusterLabels) -> Vec<f64> {
    let k = labels.k();
    let mut sum = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for (idx, &label) in labels.labels().iter().enumerate() {
        let c = label as usize;
        let mut s = 0.0;
        nodes.for_each_voxel(idx, |x, y, z| s += volume.at(x, y, z) as f64);
        sum[c] += s;
        count[c] += nodes.nodes()[idx].count;
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

/// Locates the retina band: coarse 3-way clustering, middle-depth cluster
/// kept, per-column interval hull, voxel-level edge refinement against the
/// cluster mean intensities, and neighbor fill for the few columns the
/// middle cluster missed.
pub fn stage1_localize(
    volume: &Volume,
    cfg: &PipelineConfig,
) -> Result<RegionMask, SegmentationError> {
    cfg.validate()?;
    let dims = volume.dims();
    let nodes = build_nodes(dims, cfg.stage1.block)?;
    let stage = run_stage(
        volume,
        nodes,
        &cfg.stage1,
        cfg.tau,
        StageSeeding::PlusPlus,
        derive_seed(cfg.seed, SALT_STAGE1_FEATURE),
        derive_seed(cfg.seed, SALT_STAGE1_GEO),
        derive_seed(cfg.seed, SALT_STAGE1_KMEANS),
    )
    .map_err(|e| match e {
        // A volume without intensity contrast cannot be localized; surface
        // the degenerate kernel range as a localization failure.
        SegmentationError::Graph(GraphError::DegenerateRange(v)) => {
            SegmentationError::LocalizationFailure(format!(
                "no intensity contrast (all block features equal {v})"
            ))
        }
        other => other,
    })?;
    stage1_mask_from_labels(volume, &stage).map(|(mask, _filled)| mask)
}

/// Mask construction shared by [`stage1_localize`] and [`segment_volume`]
/// (the latter also wants the filled-column count).
fn stage1_mask_from_labels(
    volume: &Volume,
    stage: &StageOutput,
) -> Result<(RegionMask, usize), SegmentationError> {
    let dims = volume.dims();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let perm = depth_order(&stage.nodes, &stage.labels);
    let means = cluster_means(volume, &stage.nodes, &stage.labels);
    // Depth-ordered means: rank 0 = above, 1 = retina, 2 = below.
    let mut ranked_means = [0.0f64; 3];
    for (old, &rank) in perm.iter().enumerate() {
        ranked_means[rank as usize] = means[old];
    }

    // Interval hull of middle-cluster voxels per column.
    let mut intervals: Vec<(u32, u32)> = vec![(u32::MAX, 0); nx * nz];
    for (idx, &label) in stage.labels.labels().iter().enumerate() {
        if perm[label as usize] != 1 {
            continue;
        }
        let node = &stage.nodes.nodes()[idx];
        for z in node.z0..node.z1 {
            for x in node.x0..node.x1 {
                let cell = &mut intervals[z * nx + x];
                cell.0 = cell.0.min(node.y0 as u32);
                cell.1 = cell.1.max(node.y1 as u32);
            }
        }
    }

    let empty: usize = intervals.iter().filter(|&&(t, b)| t >= b).count();
    let total = nx * nz;
    if empty as f64 > MAX_EMPTY_COLUMN_FRACTION * total as f64 {
        return Err(SegmentationError::LocalizationFailure(format!(
            "retina cluster empty in {empty} of {total} columns"
        )));
    }
    let filled = fill_empty_columns(&mut intervals, nx, nz, |&(t, b)| t < b);

    // Voxel-level edge refinement: snap each column's band edges to the
    // first/last run of voxels closer to the retina mean than to the
    // adjacent background mean. Blocks quantize the hull to the block
    // height; this recovers voxel accuracy.
    let reach = 2 * stage.nodes.block_dims().by;
    let refined: Vec<(u32, u32)> = intervals
        .par_iter()
        .enumerate()
        .map(|(ci, &(t, b))| {
            let (x, z) = (ci % nx, ci / nx);
            let column = volume.column(x, z);
            refine_interval(column, t as usize, b as usize, ny, reach, &ranked_means)
        })
        .collect();

    let mask = RegionMask::new(nx, nz, refined);
    debug_assert!(mask.validate(ny));
    Ok((mask, filled))
}

/// Snaps `[t, b)` to voxel-level band edges inside a window of `reach`
/// voxels around each block-quantized edge. Falls back to the input
/// interval when no clean edge run exists.
fn refine_interval(
    column: &[u16],
    t: usize,
    b: usize,
    ny: usize,
    reach: usize,
    ranked_means: &[f64; 3],
) -> (u32, u32) {
    let [mean_above, mean_band, mean_below] = *ranked_means;
    let prefers_band = |v: f64, background: f64| (v - mean_band).abs() <= (v - background).abs();

    let mut top = t;
    let lo = t.saturating_sub(reach);
    let hi = (t + reach).min(b.saturating_sub(1)).min(ny - 1);
    'top: for y in lo..=hi {
        if y + EDGE_RUN > ny {
            break;
        }
        for dy in 0..EDGE_RUN {
            if !prefers_band(column[y + dy] as f64, mean_above) {
                continue 'top;
            }
        }
        top = y;
        break;
    }

    let mut bottom = b;
    let hi = (b - 1 + reach).min(ny - 1);
    let lo = b.saturating_sub(1 + reach).max(top);
    'bottom: for y in (lo..=hi).rev() {
        if y < EDGE_RUN - 1 || y + 1 <= top {
            break;
        }
        for dy in 0..EDGE_RUN {
            if !prefers_band(column[y - dy] as f64, mean_below) {
                continue 'bottom;
            }
        }
        bottom = y + 1;
        break;
    }

    if top < bottom && bottom <= ny {
        (top as u32, bottom as u32)
    } else {
        (t as u32, b as u32)
    }
}

/// Copies a value into every column failing `valid` from its nearest valid
/// column (Manhattan distance, ties to smaller z then smaller x). Returns
/// the number of columns filled.
fn fill_empty_columns<T: Copy, F: Fn(&T) -> bool>(
    cells: &mut [T],
    nx: usize,
    _nz: usize,
    valid: F,
) -> usize {
    let invalid: Vec<usize> = (0..cells.len()).filter(|&i| !valid(&cells[i])).collect();
    if invalid.is_empty() {
        return 0;
    }
    let valid_cells: Vec<usize> = (0..cells.len()).filter(|&i| valid(&cells[i])).collect();
    assert!(!valid_cells.is_empty(), "caller guarantees at least one valid column");
    for &ci in &invalid {
        let (x, z) = ((ci % nx) as i64, (ci / nx) as i64);
        let mut best = valid_cells[0];
        let mut best_key = (i64::MAX, i64::MAX, i64::MAX);
        for &vi in &valid_cells {
            let (vx, vz) = ((vi % nx) as i64, (vi / nx) as i64);
            let key = ((vx - x).abs() + (vz - z).abs(), vz, vx);
            if key < best_key {
                best_key = key;
                best = vi;
            }
        }
        cells[ci] = cells[best];
    }
    invalid.len()
}

/// Clusters the masked band into eleven depth-ordered layers. The returned
/// labels are already canonical: label value = layer rank (0 = innermost).
pub fn stage2_layers(
    volume: &Volume,
    mask: &RegionMask,
    cfg: &PipelineConfig,
) -> Result<(NodeSet, ClusterLabels), SegmentationError> {
    cfg.validate()?;
    stage2_on_band(
        volume,
        mask.intervals(),
        cfg,
        derive_seed(cfg.seed, SALT_STAGE2_FEATURE),
        derive_seed(cfg.seed, SALT_STAGE2_GEO),
        derive_seed(cfg.seed, SALT_STAGE2_KMEANS),
    )
    .map(|(nodes, labels, _)| (nodes, labels))
}

fn stage2_on_band(
    volume: &Volume,
    band: &[(u32, u32)],
    cfg: &PipelineConfig,
    feature_seed: u64,
    geo_seed: u64,
    kmeans_seed: u64,
) -> Result<(NodeSet, ClusterLabels, StageReport), SegmentationError> {
    let voxels: usize = band.iter().map(|&(t, b)| (b.saturating_sub(t)) as usize).sum();
    if voxels < cfg.stage2.clusters {
        return Err(SegmentationError::MaskedTooSmall {
            voxels,
            k: cfg.stage2.clusters,
        });
    }
    let nodes = build_nodes_in_band(volume.dims(), cfg.stage2.block, band)?;
    if nodes.len() < cfg.stage2.clusters {
        return Err(SegmentationError::MaskedTooSmall {
            voxels,
            k: cfg.stage2.clusters,
        });
    }
    let seeding = StageSeeding::DepthProfile { band, nx: volume.dims().nx };
    let stage = run_stage(volume, nodes, &cfg.stage2, cfg.tau, seeding, feature_seed, geo_seed, kmeans_seed)?;
    let nonempty = (0..stage.labels.k())
        .filter(|&c| stage.labels.cluster_size(c) > 0)
        .count();
    if nonempty < cfg.stage2.clusters {
        return Err(SegmentationError::CollapsedClusters {
            nonempty,
            k: cfg.stage2.clusters,
        });
    }
    let perm = depth_order(&stage.nodes, &stage.labels);
    let labels = stage.labels.remap(&perm);
    Ok((stage.nodes, labels, stage.report))
}

/// Broadcasts node cluster labels to member voxels; layer rank `c` becomes
/// voxel label `c + 1`, leaving 0 for everything outside the band.
pub fn label_field(nodes: &NodeSet, labels: &ClusterLabels) -> LabelField {
    let dims = nodes.dims();
    let mut field = vec![0u8; dims.len()];
    for (idx, &label) in labels.labels().iter().enumerate() {
        nodes.for_each_voxel(idx, |x, y, z| {
            field[dims.index(x, y, z)] = label as u8 + 1;
        });
    }
    LabelField { dims, labels: field }
}

/// Surface-extraction diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractReport {
    pub filled_columns: usize,
    pub split_layers: Vec<u8>,
    pub split_columns: usize,
}

/// Converts a depth-ordered label field into twelve monotone fractional
/// surfaces: per column, surface k sits at the first voxel boundary where
/// labels reach k; missing labels fall to the band bottom; a median filter
/// smooths each surface laterally; collapsed layers are re-spaced by equal
/// subdivision of the enclosing band.
pub fn extract_surfaces(
    field: &LabelField,
    smooth_window: usize,
) -> Result<(SurfaceSet, ExtractReport), SegmentationError> {
    if smooth_window == 0 || smooth_window % 2 == 0 {
        return Err(SegmentationError::BadConfig(format!(
            "smooth_window must be odd and >= 1, got {smooth_window}"
        )));
    }
    let dims = field.dims;
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let ncols = nx * nz;

    // Raw per-column surfaces; invalid columns marked by NaN in s1.
    let mut raw = vec![f64::NAN; SURFACE_COUNT * ncols];
    let mut spans: Vec<(f64, f64)> = vec![(f64::NAN, f64::NAN); ncols];
    for ci in 0..ncols {
        let (x, z) = (ci % nx, ci / nx);
        let base = dims.index(x, 0, z);
        let column = &field.labels[base..base + ny];
        let first = column.iter().position(|&l| l > 0);
        let last = column.iter().rposition(|&l| l > 0);
        let (Some(t), Some(b)) = (first, last) else {
            continue;
        };
        let b = b + 1;
        spans[ci] = (t as f64, b as f64);
        let mut prev = t as f64;
        for k in 1..=SURFACE_COUNT {
            let depth = if k == 1 {
                t as f64
            } else if k == SURFACE_COUNT {
                b as f64
            } else {
                column[t..b]
                    .iter()
                    .position(|&l| l as usize >= k)
                    .map(|off| (t + off) as f64)
                    .unwrap_or(b as f64)
            };
            // Cumulative max keeps the column monotone.
            let depth = depth.max(prev);
            prev = depth;
            raw[(k - 1) * ncols + ci] = depth;
        }
    }

    // Neighbor-fill columns with no labels at all.
    let mut validity: Vec<bool> = (0..ncols).map(|ci| !raw[ci].is_nan()).collect();
    if validity.iter().all(|&v| !v) {
        return Err(SegmentationError::EmptyLabelField);
    }
    let filled_columns = {
        let mut cells: Vec<usize> = (0..ncols).collect();
        let n = fill_empty_columns(&mut cells, nx, nz, |&ci| validity[ci]);
        // `cells[ci]` now names the donor column for each position.
        for ci in 0..ncols {
            let donor = cells[ci];
            if donor != ci {
                for k in 0..SURFACE_COUNT {
                    raw[k * ncols + ci] = raw[k * ncols + donor];
                }
                spans[ci] = spans[donor];
            }
        }
        validity.iter_mut().for_each(|v| *v = true);
        n
    };

    // Lateral median smoothing per surface, then re-assert monotonicity.
    let half = smooth_window / 2;
    let mut smoothed = vec![0.0f64; SURFACE_COUNT * ncols];
    smoothed
        .par_chunks_mut(ncols)
        .enumerate()
        .for_each(|(k, plane)| {
            let src = &raw[k * ncols..(k + 1) * ncols];
            let mut window = Vec::with_capacity(smooth_window * smooth_window);
            for ci in 0..ncols {
                let (x, z) = (ci % nx, ci / nx);
                window.clear();
                for wz in z.saturating_sub(half)..=(z + half).min(nz - 1) {
                    for wx in x.saturating_sub(half)..=(x + half).min(nx - 1) {
                        window.push(src[wz * nx + wx]);
                    }
                }
                window.sort_unstable_by(f64::total_cmp);
                let m = window.len();
                plane[ci] = if m % 2 == 1 {
                    window[m / 2]
                } else {
                    0.5 * (window[m / 2 - 1] + window[m / 2])
                };
            }
        });

    let mut surfaces = SurfaceSet::zeros(nx, nz);
    let mut split_columns = 0usize;
    let mut split_layers_mask = [false; LAYER_COUNT];
    for ci in 0..ncols {
        let (x, z) = (ci % nx, ci / nx);
        let (span_t, span_b) = spans[ci];
        let mut col = [0.0f64; SURFACE_COUNT];
        let mut prev = f64::NEG_INFINITY;
        for (k, c) in col.iter_mut().enumerate() {
            let v = smoothed[k * ncols + ci].max(prev).clamp(span_t, span_b);
            *c = v;
            prev = v;
        }
        if split_collapsed(&mut col, span_t, span_b, &mut split_layers_mask) {
            split_columns += 1;
        }
        for (k, &v) in col.iter().enumerate() {
            surfaces.set(k, x, z, v);
        }
    }

    let split_layers: Vec<u8> = split_layers_mask
        .iter()
        .enumerate()
        .filter(|(_, &hit)| hit)
        .map(|(i, _)| i as u8 + 1)
        .collect();
    Ok((
        surfaces,
        ExtractReport {
            filled_columns,
            split_layers,
            split_columns,
        },
    ))
}

/// Re-spaces any run of coincident surfaces evenly across the band enclosed
/// by its distinct neighbors. Marks which layers collapsed; returns whether
/// the column was touched.
fn split_collapsed(
    col: &mut [f64; SURFACE_COUNT],
    span_t: f64,
    span_b: f64,
    split_layers: &mut [bool; LAYER_COUNT],
) -> bool {
    let mut touched = false;
    let mut k = 0;
    while k + 1 < SURFACE_COUNT {
        if col[k] < col[k + 1] {
            k += 1;
            continue;
        }
        // Maximal run col[k] == col[k+1] == … == col[run_end].
        let mut run_end = k + 1;
        while run_end + 1 < SURFACE_COUNT && col[run_end + 1] <= col[k] {
            run_end += 1;
        }
        let low = if k == 0 { span_t } else { col[k - 1] };
        let high = if run_end == SURFACE_COUNT - 1 { span_b } else { col[run_end + 1] };
        if high > low {
            // Layers k-1 .. run_end (0-based k) share the enclosing band
            // equally; interior surfaces k..run_end move.
            let pieces = (run_end - k + 2) as f64;
            for (j, c) in col[k..=run_end].iter_mut().enumerate() {
                *c = low + (j + 1) as f64 * (high - low) / pieces;
            }
            for layer in k..=run_end {
                if layer >= 1 {
                    split_layers[layer - 1] = true;
                }
                if layer < LAYER_COUNT {
                    split_layers[layer] = true;
                }
            }
            touched = true;
        }
        k = run_end + 1;
    }
    touched
}

/// Per-surface and overall signed/unsigned border positioning errors, µm.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub axial_um: f64,
    pub per_surface: Vec<SurfaceError>,
    pub overall: ErrorStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceError {
    pub surface: usize,
    #[serde(flatten)]
    pub stats: ErrorStats,
}

/// Mean ± population SD of signed and unsigned differences.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorStats {
    pub signed_mean: f64,
    pub signed_sd: f64,
    pub unsigned_mean: f64,
    pub unsigned_sd: f64,
}

fn error_stats(diffs: &[f64]) -> ErrorStats {
    let n = diffs.len() as f64;
    let signed_mean = diffs.iter().sum::<f64>() / n;
    let unsigned_mean = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let signed_var = diffs.iter().map(|d| (d - signed_mean).powi(2)).sum::<f64>() / n;
    let unsigned_var = diffs
        .iter()
        .map(|d| (d.abs() - unsigned_mean).powi(2))
        .sum::<f64>()
        / n;
    ErrorStats {
        signed_mean,
        signed_sd: signed_var.sqrt(),
        unsigned_mean,
        unsigned_sd: unsigned_var.sqrt(),
    }
}

/// Compares candidate surfaces against a reference on the same grid.
/// Signed error is `(candidate − reference) · axial_um` per column; the
/// overall block pools every surface sample.
pub fn border_errors(
    candidate: &SurfaceSet,
    reference: &SurfaceSet,
    axial_um: f64,
) -> Result<ErrorReport, SegmentationError> {
    if candidate.nx() != reference.nx() || candidate.nz() != reference.nz() {
        return Err(SegmentationError::GridMismatch(
            candidate.nx(),
            candidate.nz(),
            reference.nx(),
            reference.nz(),
        ));
    }
    let ncols = candidate.nx() * candidate.nz();
    let mut all = Vec::with_capacity(SURFACE_COUNT * ncols);
    let mut per_surface = Vec::with_capacity(SURFACE_COUNT);
    for k in 0..SURFACE_COUNT {
        let diffs: Vec<f64> = candidate
            .plane(k)
            .iter()
            .zip(reference.plane(k))
            .map(|(&c, &r)| (c - r) * axial_um)
            .collect();
        per_surface.push(SurfaceError {
            surface: k + 1,
            stats: error_stats(&diffs),
        });
        all.extend_from_slice(&diffs);
    }
    Ok(ErrorReport {
        axial_um,
        per_surface,
        overall: error_stats(&all),
    })
}

/// Runs the full pipeline: localization, layer clustering, surface
/// extraction, and diagnostics.
pub fn segment_volume(
    volume: &Volume,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult, SegmentationError> {
    cfg.validate()?;
    let dims = volume.dims();
    let nodes = build_nodes(dims, cfg.stage1.block)?;
    let stage1 = run_stage(
        volume,
        nodes,
        &cfg.stage1,
        cfg.tau,
        StageSeeding::PlusPlus,
        derive_seed(cfg.seed, SALT_STAGE1_FEATURE),
        derive_seed(cfg.seed, SALT_STAGE1_GEO),
        derive_seed(cfg.seed, SALT_STAGE1_KMEANS),
    )
    .map_err(|e| match e {
        SegmentationError::Graph(GraphError::DegenerateRange(v)) => {
            SegmentationError::LocalizationFailure(format!(
                "no intensity contrast (all block features equal {v})"
            ))
        }
        other => other,
    })?;
    let stage1_report = stage1.report.clone();
    let (mask, mask_filled_columns) = stage1_mask_from_labels(volume, &stage1)?;

    let mut stage2_reports = Vec::new();
    let labels = if cfg.per_slice_stage2 {
        let mut field = vec![0u8; dims.len()];
        for z in 0..dims.nz {
            let mut band = vec![(0u32, 0u32); dims.columns()];
            let row = &mask.intervals()[z * dims.nx..(z + 1) * dims.nx];
            band[z * dims.nx..(z + 1) * dims.nx].copy_from_slice(row);
            let slice_salt = SALT_SLICE + z as u64;
            let (nodes, labels, report) = stage2_on_band(
                volume,
                &band,
                cfg,
                derive_seed(cfg.seed, SALT_STAGE2_FEATURE ^ slice_salt),
                derive_seed(cfg.seed, SALT_STAGE2_GEO ^ slice_salt),
                derive_seed(cfg.seed, SALT_STAGE2_KMEANS ^ slice_salt),
            )?;
            stage2_reports.push(report);
            let part = label_field(&nodes, &labels);
            for (dst, &src) in field.iter_mut().zip(part.labels()) {
                if src > 0 {
                    *dst = src;
                }
            }
        }
        LabelField { dims, labels: field }
    } else {
        let (nodes, labels, report) = stage2_on_band(
            volume,
            mask.intervals(),
            cfg,
            derive_seed(cfg.seed, SALT_STAGE2_FEATURE),
            derive_seed(cfg.seed, SALT_STAGE2_GEO),
            derive_seed(cfg.seed, SALT_STAGE2_KMEANS),
        )?;
        stage2_reports.push(report);
        label_field(&nodes, &labels)
    };

    let (surfaces, extract) = extract_surfaces(&labels, cfg.smooth_window)?;
    Ok(SegmentationResult {
        mask,
        labels,
        surfaces,
        report: SegmentationReport {
            stage1: stage1_report,
            stage2: stage2_reports,
            mask_filled_columns,
            surface_filled_columns: extract.filled_columns,
            split_layers: extract.split_layers,
            split_columns: extract.split_columns,
        },
    })
}
