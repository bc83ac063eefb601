//! Classical hypothesis tests used by the group-comparison reports:
//! one-way ANOVA, the unpaired two-sample t-test (pooled or Welch), and a
//! t-test on the slope of a simple linear regression.
//!
//! All three return a [`TestResult`] carrying the statistic, its degrees of
//! freedom, a p-value, and the direction of the effect where one is defined.
//! Degenerate inputs are handled explicitly rather than left to produce
//! NaNs: zero within-group variance with a real between-group difference is
//! reported as an infinite statistic with p = 0, while inputs that carry no
//! information at all (every observation identical) are rejected as errors.

use super::dist::{f_tail, t_two_sided_p};
use super::StatsError;

/// Sign of the estimated effect for tests that have a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDirection {
    /// The first sample (or the slope) is below the second.
    Negative,
    /// No direction: the statistic is zero or the test is omnibus.
    None,
    /// The first sample (or the slope) is above the second.
    Positive,
}

/// Outcome of a single hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestResult {
    /// The test statistic (t or F). May be ±∞ for zero-variance contrasts.
    pub statistic: f64,
    /// Degrees of freedom; single-df tests put 0.0 in the second slot.
    pub df: (f64, f64),
    /// Two-sided p-value (upper-tail for F).
    pub p_value: f64,
    /// Direction of the effect (always `None` for ANOVA).
    pub direction: EffectDirection,
}

fn direction_of(stat: f64) -> EffectDirection {
    if stat > 0.0 {
        EffectDirection::Positive
    } else if stat < 0.0 {
        EffectDirection::Negative
    } else {
        EffectDirection::None
    }
}

fn check_finite(label: &str, values: &[f64]) -> Result<(), StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(label.to_string()));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sum_sq_dev(values: &[f64], center: f64) -> f64 {
    values.iter().map(|v| (v - center) * (v - center)).sum()
}

/// One-way analysis of variance across `groups`.
///
/// Requires at least two groups with at least two observations each. Returns
/// the F statistic on `(k − 1, N − k)` degrees of freedom and its upper-tail
/// p-value. If the within-group variance is exactly zero but the group means
/// differ, the statistic is `+∞` with p = 0; if every observation in every
/// group is identical the test carries no information and
/// [`StatsError::UndefinedF`] is returned.
pub fn anova_oneway(groups: &[&[f64]]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            what: "ANOVA groups",
            needed: 2,
            got: groups.len(),
        });
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::TooFew {
                what: "observations per ANOVA group",
                needed: 2,
                got: g.len(),
            });
        }
        check_finite(&format!("ANOVA group {}", i + 1), g)?;
    }
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n_total as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += sum_sq_dev(g, m);
    }
    let df1 = (k - 1) as f64;
    let df2 = (n_total - k) as f64;
    let ms_between = ss_between / df1;
    let ms_within = ss_within / df2;

    if ms_within == 0.0 {
        if ms_between == 0.0 {
            return Err(StatsError::UndefinedF);
        }
        return Ok(TestResult {
            statistic: f64::INFINITY,
            df: (df1, df2),
            p_value: 0.0,
            direction: EffectDirection::None,
        });
    }
    let f = ms_between / ms_within;
    Ok(TestResult {
        statistic: f,
        df: (df1, df2),
        p_value: f_tail(f, df1, df2),
        direction: EffectDirection::None,
    })
}

/// Variance assumption for the unpaired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TVariance {
    /// Equal group variances; pooled estimate, df = n₁ + n₂ − 2.
    #[default]
    Pooled,
    /// Unequal variances; Welch–Satterthwaite degrees of freedom.
    Welch,
}

/// Unpaired two-sample t-test of `a` versus `b`.
///
/// The statistic is positive when `mean(a) > mean(b)`. Both samples need at
/// least two observations. If both samples are constant and equal the test
/// is undefined ([`StatsError::UndefinedT`]); constant but different samples
/// give `±∞` with p = 0.
pub fn ttest_unpaired(a: &[f64], b: &[f64], variance: TVariance) -> Result<TestResult, StatsError> {
    for (label, s) in [("first t-test sample", a), ("second t-test sample", b)] {
        if s.len() < 2 {
            return Err(StatsError::TooFew {
                what: "observations per t-test sample",
                needed: 2,
                got: s.len(),
            });
        }
        check_finite(label, s)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (ssa, ssb) = (sum_sq_dev(a, ma), sum_sq_dev(b, mb));
    let delta = ma - mb;

    let (se_sq, df) = match variance {
        TVariance::Pooled => {
            let df = na + nb - 2.0;
            let pooled = (ssa + ssb) / df;
            (pooled * (1.0 / na + 1.0 / nb), df)
        }
        TVariance::Welch => {
            let va = ssa / (na - 1.0) / na;
            let vb = ssb / (nb - 1.0) / nb;
            let se_sq = va + vb;
            // Welch–Satterthwaite; leave df = 0 for the degenerate case and
            // let the zero-variance branch below decide the outcome.
            let denom = va * va / (na - 1.0) + vb * vb / (nb - 1.0);
            let df = if denom > 0.0 { se_sq * se_sq / denom } else { 0.0 };
            (se_sq, df)
        }
    };

    if se_sq == 0.0 {
        if delta == 0.0 {
            return Err(StatsError::UndefinedT);
        }
        let statistic = if delta > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(TestResult {
            statistic,
            df: (df, 0.0),
            p_value: 0.0,
            direction: direction_of(delta),
        });
    }
    let t = delta / se_sq.sqrt();
    Ok(TestResult {
        statistic: t,
        df: (df, 0.0),
        p_value: t_two_sided_p(t, df),
        direction: direction_of(t),
    })
}

/// Least-squares line fit plus the t-test of `slope = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlopeFit {
    /// Estimated slope of y on x.
    pub slope: f64,
    /// Estimated intercept.
    pub intercept: f64,
    /// True when the residual sum of squares is exactly zero, i.e. the line
    /// passes through every point and the t statistic is degenerate (0 for a
    /// flat fit, ±∞ otherwise).
    pub perfect_fit: bool,
    /// The slope-is-zero test (df = n − 2).
    pub test: TestResult,
}

/// Simple linear regression of `y` on `x` with a two-sided test of zero
/// slope.
///
/// Needs `n ≥ 3` points and non-constant `x`. A perfect fit (zero residual
/// variance) is flagged rather than treated as an error: a flat perfect fit
/// gives t = 0, p = 1, and a sloped perfect fit gives t = ±∞, p = 0.
pub fn slope_test(x: &[f64], y: &[f64]) -> Result<SlopeFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew {
            what: "regression points",
            needed: 3,
            got: x.len(),
        });
    }
    check_finite("regression x", x)?;
    check_finite("regression y", y)?;
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum_sq_dev(x, mx);
    if sxx == 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(&xi, &yi)| (xi - mx) * (yi - my)).sum();
    let syy = sum_sq_dev(y, my);
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // SSE = Syy − b·Sxy analytically; clamp the tiny negative values that
    // rounding can produce.
    let sse = (syy - slope * sxy).max(0.0);
    let df = n - 2.0;

    if sse == 0.0 {
        let (statistic, p_value) = if slope == 0.0 {
            (0.0, 1.0)
        } else if slope > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        return Ok(SlopeFit {
            slope,
            intercept,
            perfect_fit: true,
            test: TestResult {
                statistic,
                df: (df, 0.0),
                p_value,
                direction: direction_of(slope),
            },
        });
    }
    let se = (sse / df / sxx).sqrt();
    let t = slope / se;
    Ok(SlopeFit {
        slope,
        intercept,
        perfect_fit: false,
        test: TestResult {
            statistic: t,
            df: (df, 0.0),
            p_value: t_two_sided_p(t, df),
            direction: direction_of(t),
        },
    })
}
