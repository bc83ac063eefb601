//! End-to-end recovery check on a synthetic population.
//!
//! The real statistical findings a tool like this produces (age slopes, sex
//! differences) can only be validated against data we do not ship. What can
//! be validated is the machinery: this module generates a cohort of phantom
//! volumes with *known* covariate effects injected into the layer
//! geometry, pushes every subject through the full pipeline — segmentation,
//! thickness maps, fovea-centered ETDRS sectors — and then asks whether the
//! statistical battery recovers exactly the effects that were injected and
//! nothing else.
//!
//! Injectable effects:
//! - an age slope (default −0.5 µm/year) on layer 6, the outer nuclear
//!   complex, whose thickness dwarfs the others and leaves room to shrink;
//! - a male-minus-female offset (default 0: sex ships as a pure null
//!   covariate) on layer 5, the outer plexiform layer. Layer 5 is the
//!   cleanest carrier when an offset is requested: the foveal pit model
//!   redistributes thinning across layers 1/3/4 (an offset there would
//!   bleed into those neighbours through the shared pit budget), and at the
//!   pit core the squeezed layer-1/2 band can collapse below block
//!   resolution, where the extractor re-spaces it evenly and would split an
//!   injected offset between the two.
//!
//! Each (layer, sector) cell plays one of three roles per covariate. The
//! target layer of a nonzero injection is *injected*: every one of its nine
//! cells must reach significance. The TOTAL row of a nonzero injection is
//! *affected*: the effect is genuinely present in the sum, but a per-layer
//! effect of a few µm competes there against the jitter of all eleven
//! layers (≈ √11 × jitter SD), so TOTAL is excluded from the null
//! accounting instead of being promised at either end. Everything else is
//! *null* and must stay quiet. With an injection of zero the covariate has
//! no injected or affected cells at all — its entire grid is nulls, which
//! is how the sex covariate runs by default.
//!
//! Design notes. Ages are spaced evenly and sexes are assigned in an ABBA
//! pattern over consecutive age pairs, which makes the male and female age
//! sums exactly equal — a plain alternation would leave the sexes ~3 years
//! apart in mean age and smuggle the age slope into the sex nulls. Each
//! subject's retina is also randomly shifted axially by about two
//! block-quantization periods: the phantom otherwise centers the stack, so
//! a covariate that changes total thickness would drag every surface's
//! absolute depth with it and the block-quantized extraction would turn
//! that into coherent sawtooth biases on unrelated layers.
//!
//! Subjects are independent and the per-subject seeds are fixed up front,
//! so the rayon-parallel run is schedule-independent and the report is
//! byte-deterministic. The segmentation itself runs with one fixed pipeline
//! seed for the whole cohort — exactly how a real tool processes a study —
//! so clustering quality cannot vary subject-to-subject through seeding
//! alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::segmentation::{segment_volume, PipelineConfig};
use crate::thickness::{
    find_fovea, layer_thickness, sector_grid, sector_stats, total_thickness, EyeSide, LayerKey,
    SectorTable, ETDRS_DIAMETERS_UM, SECTOR_COUNT,
};
use crate::volume::{generate_phantom, Dims, PhantomSpec};

use super::hypothesis::{slope_test, ttest_unpaired, TVariance};
use super::normative::{population_aggregate, AggregateStatistic, NormativeTable};
use super::StatsError;

/// p-value below which an injected effect counts as detected.
pub const DETECTION_P: f64 = 0.005;
/// p-value above which a null cell counts as quiet.
pub const NULL_P: f64 = 0.05;
/// Minimum fraction of null cells that must stay quiet.
pub const NULL_PASS_FRACTION: f64 = 0.9;

/// Layer carrying the injected age slope (when nonzero).
pub const AGE_LAYER: LayerKey = LayerKey::Layer(6);
/// Layer carrying the injected sex offset (when nonzero).
pub const SEX_LAYER: LayerKey = LayerKey::Layer(5);

/// Thinnest a jittered layer is allowed to get, µm.
const MIN_LAYER_UM: f64 = 6.0;

/// Subject sex; the cohort alternates deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

/// Configuration of the synthetic cohort.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PopulationConfig {
    /// Cohort size; at least 20.
    pub subjects: usize,
    /// Master seed; everything downstream derives from it.
    pub seed: u64,
    /// Volume dimensions per subject.
    pub dims: Dims,
    /// Ages are spaced evenly across this closed range.
    pub age_range: (f64, f64),
    /// Injected slope on [`AGE_LAYER`], µm per year (applied centered, so
    /// the mid-age subject keeps the nominal thickness). Zero turns age
    /// into a pure null covariate.
    pub age_slope_um_per_year: f64,
    /// Injected male-minus-female offset on [`SEX_LAYER`], µm, applied as
    /// ±offset/2. Zero (the default) makes sex a pure null covariate.
    pub sex_offset_um: f64,
    /// SD of the independent per-layer thickness jitter, µm.
    pub thickness_jitter_um: f64,
    /// SD of the additive intensity noise in the phantom volumes.
    pub intensity_noise_sd: f64,
    /// Run stage 2 independently per B-scan. On for cohorts: volumes that
    /// are long in z otherwise spend embedding coordinates on slow
    /// z-position modes instead of depth structure.
    pub per_slice_stage2: bool,
}

impl PopulationConfig {
    /// Cohort defaults: 50 subjects, 32×128×32 volumes, ages 20–80,
    /// −0.5 µm/year on layer 6, no sex offset (sex is the null covariate),
    /// 2 µm jitter, mild intensity noise, per-slice stage 2. The jitter is
    /// kept below the per-sector measurement noise so that the cells of a
    /// layer — which all share one per-subject thickness draw — do not
    /// swing in or out of significance as a block.
    pub fn new(seed: u64) -> Self {
        PopulationConfig {
            subjects: 50,
            seed,
            dims: Dims { nx: 32, ny: 128, nz: 32 },
            age_range: (20.0, 80.0),
            age_slope_um_per_year: -0.5,
            sex_offset_um: 0.0,
            thickness_jitter_um: 2.0,
            intensity_noise_sd: 8.0,
            per_slice_stage2: true,
        }
    }

    fn validate(&self) -> Result<(), StatsError> {
        if self.subjects < 20 {
            return Err(StatsError::Population(format!(
                "cohort needs at least 20 subjects, got {}",
                self.subjects
            )));
        }
        let (lo, hi) = self.age_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(StatsError::Population(format!(
                "age range must be finite with lo < hi, got ({lo}, {hi})"
            )));
        }
        for (name, v) in [
            ("age_slope_um_per_year", self.age_slope_um_per_year),
            ("sex_offset_um", self.sex_offset_um),
        ] {
            if !v.is_finite() {
                return Err(StatsError::Population(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("thickness_jitter_um", self.thickness_jitter_um),
            ("intensity_noise_sd", self.intensity_noise_sd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(StatsError::Population(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How a (layer, sector) cell relates to a covariate's injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    /// Target layer of a nonzero injection; must reach significance.
    Injected,
    /// Carries the effect indirectly (the TOTAL row above an injected
    /// layer); excluded from the null accounting, detection not required.
    Affected,
    /// No injected effect; must stay quiet.
    Null,
}

/// One (layer, sector) outcome for one covariate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CellOutcome {
    pub layer: LayerKey,
    pub sector: u8,
    /// Slope (µm/year) for age; male-minus-female mean difference (µm) for
    /// sex.
    pub estimate: f64,
    /// t statistic of the test.
    pub statistic: f64,
    pub p_value: f64,
    pub role: CellRole,
}

/// Recovery summary for one covariate across all 108 cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovariateRecovery {
    /// "age" or "sex".
    pub covariate: String,
    /// Target layer of the injection; `None` when nothing was injected and
    /// every cell is a null.
    pub injected_layer: Option<LayerKey>,
    pub cells: Vec<CellOutcome>,
    /// Largest p-value among injected cells (0 when there are none).
    pub worst_injected_p: f64,
    /// True when every injected cell has p < [`DETECTION_P`]; vacuously
    /// true for a null covariate.
    pub injected_detected: bool,
    /// Fraction of null cells with p > [`NULL_P`].
    pub null_pass_fraction: f64,
}

impl CovariateRecovery {
    fn from_cells(
        covariate: &str,
        injected_layer: Option<LayerKey>,
        cells: Vec<CellOutcome>,
    ) -> Self {
        let worst_injected_p = cells
            .iter()
            .filter(|c| c.role == CellRole::Injected)
            .map(|c| c.p_value)
            .fold(0.0, f64::max);
        let injected_detected = cells
            .iter()
            .filter(|c| c.role == CellRole::Injected)
            .all(|c| c.p_value < DETECTION_P);
        let null_total = cells.iter().filter(|c| c.role == CellRole::Null).count();
        let null_quiet = cells
            .iter()
            .filter(|c| c.role == CellRole::Null && c.p_value > NULL_P)
            .count();
        CovariateRecovery {
            covariate: covariate.to_string(),
            injected_layer,
            cells,
            worst_injected_p,
            injected_detected,
            null_pass_fraction: null_quiet as f64 / null_total as f64,
        }
    }
}

/// Full result of a synthetic-population run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PopulationReport {
    pub config: PopulationConfig,
    pub ages: Vec<f64>,
    pub sexes: Vec<Sex>,
    pub age: CovariateRecovery,
    pub sex: CovariateRecovery,
    /// Across-subject mean/SD of sector means (total-thickness style table).
    pub sector_means: NormativeTable,
    /// Across-subject mean/SD of intra-sector SDs (variability style table).
    pub sector_variability: NormativeTable,
    /// Fraction of null cells quiet pooled across both covariates. Cells of
    /// one layer share a thickness draw and can swing together, so the
    /// pooled fraction is the stable figure the pass verdict uses; the
    /// per-covariate fractions remain visible on each recovery.
    pub null_pass_fraction: f64,
    /// Every injected cell detected and the pooled null fraction at or
    /// above [`NULL_PASS_FRACTION`].
    pub passed: bool,
}

impl PopulationReport {
    /// Pretty JSON rendering with trailing newline; contains no clocks or
    /// paths, so identical configurations yield identical bytes.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("population report serializes");
        text.push('\n');
        text
    }
}

/// Builds one subject's phantom with the injected effects, runs the full
/// segmentation and sector pipeline, and returns its 12-row sector table.
fn synthesize_subject(
    cfg: &PopulationConfig,
    age: f64,
    sex: Sex,
    subject_seed: u64,
) -> Result<SectorTable, StatsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let mut spec = PhantomSpec::new(cfg.dims, 0);

    let mid_age = 0.5 * (cfg.age_range.0 + cfg.age_range.1);
    let t = &mut spec.layer_thicknesses_um;
    t[5] += cfg.age_slope_um_per_year * (age - mid_age);
    t[4] += match sex {
        Sex::Male => 0.5 * cfg.sex_offset_um,
        Sex::Female => -0.5 * cfg.sex_offset_um,
    };
    if cfg.thickness_jitter_um > 0.0 {
        let jitter = Normal::new(0.0, cfg.thickness_jitter_um).expect("validated jitter sd");
        for tk in t.iter_mut() {
            *tk = (*tk + jitter.sample(&mut rng)).max(MIN_LAYER_UM);
        }
    } else {
        for tk in t.iter_mut() {
            *tk = tk.max(MIN_LAYER_UM);
        }
    }
    // The pit budget comes out of layers 1/3/4; keep the pit comfortably
    // inside that budget even for strongly jittered subjects (the clamp
    // binds only in astronomically rare draws, so pit depth is effectively
    // uniform across the cohort).
    let thinned: f64 = t[0] + t[2] + t[3];
    spec.pit_depth_um = 40.0f64.min(0.85 * thinned);
    // Dither the stack position by two axial-block periods. The stack is
    // otherwise centered, which ties every surface's absolute depth to the
    // subject's total thickness; combined with block-quantized surface
    // extraction that correlation turns covariate-driven total changes
    // into coherent sawtooth biases on *other* layers. A random offset
    // wider than both the quantization period and the covariate-driven
    // drift decorrelates position from the covariates.
    spec.axial_offset_um = rng.gen_range(-8.0..8.0);
    spec.noise_sd = cfg.intensity_noise_sd;
    spec.rng_seed = rng.gen();

    let (volume, _reference) = generate_phantom(&spec)?;
    let mut pipeline = PipelineConfig::new(cfg.seed);
    pipeline.per_slice_stage2 = cfg.per_slice_stage2;
    let result = segment_volume(&volume, &pipeline)?;

    let mut maps = layer_thickness(
        &result.surfaces,
        volume.axial_um(),
        volume.lateral_x_um(),
        volume.lateral_z_um(),
    )?;
    let total = total_thickness(&maps)?;
    let (fx, fz) = find_fovea(&total, 2);
    let assignment = sector_grid(
        total.nx(),
        total.nz(),
        volume.lateral_x_um(),
        volume.lateral_z_um(),
        (fx as f64, fz as f64),
        ETDRS_DIAMETERS_UM,
        EyeSide::Right,
    )?;
    maps.push(total);
    let rows = maps
        .iter()
        .map(|map| sector_stats(map, &assignment))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SectorTable::new(rows)?)
}

/// Extracts the per-subject mean of one (layer, sector) cell across the
/// cohort. Every cell must be populated; a volume small enough to leave
/// sectors empty is a configuration error.
fn cell_series(
    tables: &[SectorTable],
    layer: LayerKey,
    sector: u8,
) -> Result<Vec<f64>, StatsError> {
    tables
        .iter()
        .map(|t| {
            t.get(layer)
                .and_then(|row| row.sector(sector as usize).mean)
                .ok_or(StatsError::EmptySector { layer, sector })
        })
        .collect()
}

/// Runs the full synthetic-population recovery check.
///
/// Generates `cfg.subjects` phantoms with evenly spaced ages and alternating
/// sexes, segments each, reduces them to sector tables, then tests every
/// (layer, sector) cell: a regression slope on age and a pooled t-test
/// between sexes. The report states whether all injected cells reach
/// p < [`DETECTION_P`] and whether at least [`NULL_PASS_FRACTION`] of the
/// null cells stay above [`NULL_P`].
pub fn synthetic_population_check(cfg: &PopulationConfig) -> Result<PopulationReport, StatsError> {
    cfg.validate()?;
    let n = cfg.subjects;

    let (lo, hi) = cfg.age_range;
    let ages: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    // ABBA over consecutive age pairs (FM MF FM ...), so the sexes have
    // exactly equal age sums and the injected age slope cannot masquerade
    // as a sex difference.
    let sexes: Vec<Sex> = (0..n)
        .map(|i| if (i / 2 + i % 2) % 2 == 1 { Sex::Male } else { Sex::Female })
        .collect();
    // Seeds are fixed before the parallel loop, so scheduling cannot change
    // any subject's stream.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..n).map(|_| master.gen()).collect();

    let tables: Vec<SectorTable> = (0..n)
        .into_par_iter()
        .map(|i| synthesize_subject(cfg, ages[i], sexes[i], seeds[i]))
        .collect::<Result<_, _>>()?;

    let male_idx: Vec<usize> = (0..n).filter(|&i| sexes[i] == Sex::Male).collect();
    let female_idx: Vec<usize> = (0..n).filter(|&i| sexes[i] == Sex::Female).collect();

    let age_target = (cfg.age_slope_um_per_year != 0.0).then_some(AGE_LAYER);
    let sex_target = (cfg.sex_offset_um != 0.0).then_some(SEX_LAYER);
    let role_of = |layer: LayerKey, target: Option<LayerKey>| match target {
        Some(t) if layer == t => CellRole::Injected,
        Some(_) if layer == LayerKey::Total => CellRole::Affected,
        _ => CellRole::Null,
    };

    let mut age_cells = Vec::with_capacity(12 * SECTOR_COUNT);
    let mut sex_cells = Vec::with_capacity(12 * SECTOR_COUNT);
    for layer in LayerKey::all() {
        for sector in 1..=SECTOR_COUNT as u8 {
            let series = cell_series(&tables, layer, sector)?;

            let fit = slope_test(&ages, &series)?;
            age_cells.push(CellOutcome {
                layer,
                sector,
                estimate: fit.slope,
                statistic: fit.test.statistic,
                p_value: fit.test.p_value,
                role: role_of(layer, age_target),
            });

            let males: Vec<f64> = male_idx.iter().map(|&i| series[i]).collect();
            let females: Vec<f64> = female_idx.iter().map(|&i| series[i]).collect();
            let test = ttest_unpaired(&males, &females, TVariance::Pooled)?;
            let estimate = males.iter().sum::<f64>() / males.len() as f64
                - females.iter().sum::<f64>() / females.len() as f64;
            sex_cells.push(CellOutcome {
                layer,
                sector,
                estimate,
                statistic: test.statistic,
                p_value: test.p_value,
                role: role_of(layer, sex_target),
            });
        }
    }

    let age = CovariateRecovery::from_cells("age", age_target, age_cells);
    let sex = CovariateRecovery::from_cells("sex", sex_target, sex_cells);
    let sector_means = population_aggregate(
        &tables,
        AggregateStatistic::SectorMean,
        "synthetic cohort, sector means",
    )?;
    let sector_variability = population_aggregate(
        &tables,
        AggregateStatistic::IntraSectorSd,
        "synthetic cohort, intra-sector variability",
    )?;
    let null_total: usize = [&age, &sex]
        .iter()
        .map(|r| r.cells.iter().filter(|c| c.role == CellRole::Null).count())
        .sum();
    let null_quiet: usize = [&age, &sex]
        .iter()
        .map(|r| {
            r.cells
                .iter()
                .filter(|c| c.role == CellRole::Null && c.p_value > NULL_P)
                .count()
        })
        .sum();
    let null_pass_fraction = null_quiet as f64 / null_total as f64;
    let passed = age.injected_detected
        && sex.injected_detected
        && null_pass_fraction >= NULL_PASS_FRACTION;

    Ok(PopulationReport {
        config: cfg.clone(),
        ages,
        sexes,
        age,
        sex,
        sector_means,
        sector_variability,
        null_pass_fraction,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undersized_or_malformed_cohorts_are_rejected() {
        let mut cfg = PopulationConfig::new(7);
        cfg.subjects = 19;
        assert!(matches!(
            synthetic_population_check(&cfg),
            Err(StatsError::Population(_))
        ));
        let mut cfg = PopulationConfig::new(7);
        cfg.age_range = (80.0, 20.0);
        assert!(matches!(
            synthetic_population_check(&cfg),
            Err(StatsError::Population(_))
        ));
        let mut cfg = PopulationConfig::new(7);
        cfg.thickness_jitter_um = -1.0;
        assert!(matches!(
            synthetic_population_check(&cfg),
            Err(StatsError::Population(_))
        ));
    }

    /// A reduced cohort (20 subjects, small volumes) with the default
    /// injections — age slope on layer 6, sex a pure null — must recover
    /// the slope in every sector, keep the null grids quiet, and produce a
    /// byte-identical report when rerun. The full-size criteria run in the
    /// acceptance suite.
    #[test]
    fn small_cohort_recovers_age_slope_and_reruns_identically() {
        let mut cfg = PopulationConfig::new(11);
        cfg.subjects = 20;
        cfg.dims = Dims { nx: 32, ny: 128, nz: 16 };

        let report = synthetic_population_check(&cfg).unwrap();

        // Injected layer: every sector detected, right direction.
        assert_eq!(report.age.injected_layer, Some(AGE_LAYER));
        for cell in report.age.cells.iter().filter(|c| c.role == CellRole::Injected) {
            assert_eq!(cell.layer, AGE_LAYER);
            assert!(
                cell.p_value < DETECTION_P,
                "age layer sector {} p = {}",
                cell.sector,
                cell.p_value
            );
            assert!(cell.estimate < 0.0, "age slope should be negative");
        }
        assert!(report.age.injected_detected);

        // Null grids stay mostly quiet even at this reduced size.
        assert!(
            report.age.null_pass_fraction >= NULL_PASS_FRACTION,
            "age null fraction {}",
            report.age.null_pass_fraction
        );
        assert!(
            report.sex.null_pass_fraction >= NULL_PASS_FRACTION,
            "sex null fraction {}",
            report.sex.null_pass_fraction
        );
        assert!(report.passed);

        // Structure: 12 layers × 9 sectors per covariate; age marks its
        // layer injected and TOTAL affected; the sex grid is all nulls.
        assert_eq!(report.age.cells.len(), 108);
        let count = |cells: &[CellOutcome], role: CellRole| {
            cells.iter().filter(|c| c.role == role).count()
        };
        assert_eq!(count(&report.age.cells, CellRole::Injected), 9);
        assert_eq!(count(&report.age.cells, CellRole::Affected), 9);
        assert_eq!(count(&report.sex.cells, CellRole::Null), 108);
        assert_eq!(report.sex.injected_layer, None);
        assert!(report.sex.injected_detected, "vacuous for a null covariate");
        assert_eq!(report.sexes.iter().filter(|&&s| s == Sex::Male).count(), 10);

        // Aggregated tables are valid normative tables with plausible
        // magnitudes (nominal stack is 345 µm).
        report.sector_means.validate().unwrap();
        report.sector_variability.validate().unwrap();
        let fovea = report
            .sector_means
            .get(LayerKey::Total, 1)
            .expect("total row aggregated");
        assert!(
            (250.0..=450.0).contains(&fovea.mean),
            "total fovea mean {}",
            fovea.mean
        );

        // Determinism: a second run from the same config is byte-identical.
        let again = synthetic_population_check(&cfg).unwrap();
        assert_eq!(again.to_json(), report.to_json());
    }

    /// With a sex offset actually injected and the jitter turned down so
    /// the offset dominates, the t-test battery must find it in every
    /// sector of the target layer and the TOTAL row must be classified as
    /// affected, not null. Jitter is kept small here deliberately: a ±8 µm
    /// shift against the default 4 µm per-layer jitter would leave the thin
    /// side of layer 5 near the axial block size, where measurement becomes
    /// nonlinear, and the TOTAL row would drown in √11 × jitter.
    #[test]
    fn injected_sex_offset_is_recovered_when_it_dominates_jitter() {
        let mut cfg = PopulationConfig::new(29);
        cfg.subjects = 20;
        cfg.dims = Dims { nx: 32, ny: 128, nz: 16 };
        cfg.sex_offset_um = 16.0;
        cfg.thickness_jitter_um = 1.0;

        let report = synthetic_population_check(&cfg).unwrap();

        assert_eq!(report.sex.injected_layer, Some(SEX_LAYER));
        for cell in report.sex.cells.iter().filter(|c| c.role == CellRole::Injected) {
            assert_eq!(cell.layer, SEX_LAYER);
            assert!(
                cell.p_value < DETECTION_P,
                "sex layer sector {} p = {}",
                cell.sector,
                cell.p_value
            );
            assert!(
                cell.estimate > 0.0,
                "male-minus-female offset should be positive, got {} in sector {}",
                cell.estimate,
                cell.sector
            );
        }
        assert!(report.sex.injected_detected);
        // TOTAL is affected for both covariates here (age slope is still
        // the default −0.5), so each null grid is the 90 remaining cells.
        for cells in [&report.age.cells, &report.sex.cells] {
            for cell in cells.iter().filter(|c| c.layer == LayerKey::Total) {
                assert_eq!(cell.role, CellRole::Affected);
            }
            assert_eq!(cells.iter().filter(|c| c.role == CellRole::Null).count(), 90);
        }
        assert!(
            report.sex.null_pass_fraction >= NULL_PASS_FRACTION,
            "sex null fraction {}",
            report.sex.null_pass_fraction
        );
        assert!(report.passed);
    }
}
