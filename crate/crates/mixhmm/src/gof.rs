//! Likelihood-ratio goodness-of-fit testing of a Gaussian HMM null against
//! richer mixture alternatives, calibrated by the parametric bootstrap.

use crate::estimation::{self, em_fit, FitConfig, FitResult};
use crate::model::{simulate, HmmModel, ObservationSeries, ThetaBox};
use crate::{rng, Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Test levels reported throughout.
pub const GOF_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Slack allowed below zero before a likelihood-ratio statistic is treated
/// as an optimization failure.
pub const LRT_SLACK: f64 = 1e-6;

/// Alternative hypothesis family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    /// Two Gaussian components per state.
    TwoComp,
    /// Adaptive nonparametric mixture per state.
    Nonpar,
}

impl Alternative {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-comp" | "twocomp" | "2-comp" => Ok(Self::TwoComp),
            "nonpar" | "nonparametric" => Ok(Self::Nonpar),
            other => Err(Error::Invalid(format!(
                "unknown alternative '{other}' (expected two-comp or nonpar)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoComp => "two-comp",
            Self::Nonpar => "nonpar",
        }
    }
}

/// One critical value with its decision for the observed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub level: f64,
    pub critical_value: f64,
    pub reject: bool,
}

/// Full test report; serializes to structured text (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GofReport {
    pub schema_version: u32,
    pub k: usize,
    pub n: usize,
    pub b: usize,
    pub alternative: String,
    pub seed: u64,
    /// 2 (L_alt - L_null), clamped at zero within the optimization slack.
    pub statistic: f64,
    pub decisions: Vec<LevelDecision>,
    pub bootstrap_failures: usize,
    pub null_loglik: f64,
    pub alt_loglik: f64,
}

impl GofReport {
    /// Invariants the type promises: nonnegative statistic, critical values
    /// nondecreasing in the level.
    pub fn check(&self) -> Result<()> {
        if self.statistic < -LRT_SLACK {
            return Err(Error::NegativeLrt(self.statistic));
        }
        for w in self.decisions.windows(2) {
            if w[1].critical_value < w[0].critical_value - 1e-12 {
                return Err(Error::Invalid(
                    "critical values must be nondecreasing in the level".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Likelihood-ratio statistic 2 (L_alt - L_null). The fits must come from
/// the same series; values within the slack below zero clamp to zero and
/// anything lower is an optimization failure demanding a refit.
pub fn lrt_statistic(
    series: &ObservationSeries,
    null_fit: &FitResult,
    alt_fit: &FitResult,
) -> Result<f64> {
    let hash = series.content_hash();
    if null_fit.series_hash != hash || alt_fit.series_hash != hash {
        return Err(Error::SeriesMismatch);
    }
    if null_fit.model.k() != alt_fit.model.k() {
        return Err(Error::Invalid("fits have different state counts".into()));
    }
    let stat = 2.0 * (alt_fit.loglik - null_fit.loglik);
    if stat < -LRT_SLACK {
        return Err(Error::NegativeLrt(stat));
    }
    Ok(stat.max(0.0))
}

/// Gaussian (single-component) null fit.
pub fn fit_null(series: &ObservationSeries, k: usize, config: &FitConfig) -> Result<FitResult> {
    em_fit(series, k, &vec![1; k], config)
}

/// Alternative fit, warm-started from the null fit only (the statistic then
/// measures the improvement the richer family offers over the fitted null,
/// and nonnegativity is guaranteed by construction). Two EM runs seed the
/// two-component stage: an exact-duplicate embedding of the null, whose
/// likelihood can only rise, and a symmetry-breaking split. The
/// nonparametric alternative continues from the better of the two via the
/// same support-growth loop the nonparametric estimator uses, so for every
/// series nonpar loglik >= two-comp loglik >= null loglik.
pub fn fit_alternative(
    series: &ObservationSeries,
    alternative: Alternative,
    null_fit: &FitResult,
    config: &FitConfig,
) -> Result<FitResult> {
    let theta_box = match config.theta_box {
        Some(b) => b,
        None => ThetaBox::from_data(&series.obs)?,
    };
    let mut candidates: Vec<FitResult> = Vec::new();

    let warm_starts = {
        let dup = estimation::exact_duplicate(&null_fit.model)?;
        let mut r = rng::stream(config.seed, 0xa17);
        let split = estimation::split_heaviest(&null_fit.model, &theta_box, &mut r)?;
        [dup, split]
    };
    for start in warm_starts {
        let (model, trace, converged) = estimation::run_em(start, series, &theta_box, config)?;
        let loglik = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        if loglik.is_finite() {
            let (model, permutation) = estimation::canonical_relabel(&model)?;
            candidates.push(FitResult {
                model,
                loglik,
                loglik_trace: trace,
                m_schedule: vec![1, 2],
                permutation,
                converged,
                series_hash: series.content_hash(),
            });
        }
    }

    let two_comp = candidates
        .into_iter()
        .max_by(|a, b| a.loglik.partial_cmp(&b.loglik).unwrap())
        .ok_or_else(|| Error::FitFailure("alternative fit failed from every start".into()))?;

    match alternative {
        Alternative::TwoComp => Ok(two_comp),
        Alternative::Nonpar => estimation::grow_support(two_comp, series, config),
    }
}

/// Bootstrap critical values plus the raw replication statistics.
#[derive(Debug, Clone)]
pub struct CriticalValues {
    /// (level, value) pairs at the standard levels.
    pub values: Vec<(f64, f64)>,
    /// Sorted replication statistics.
    pub statistics: Vec<f64>,
    /// Replications dropped and replaced for fit failures.
    pub failures: usize,
}

impl CriticalValues {
    pub fn at(&self, level: f64) -> Option<f64> {
        self.values
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-12)
            .map(|&(_, v)| v)
    }
}

fn replication_statistic(
    null_model: &HmmModel,
    n: usize,
    alternative: Alternative,
    config: &FitConfig,
    rep_index: u64,
) -> Result<f64> {
    let mut rs = rng::stream(config.seed, rep_index);
    let sim_seed: u64 = rs.gen();
    let fit_seed: u64 = rs.gen();
    let series = simulate(null_model, n, sim_seed)?;
    let rep_config = FitConfig {
        seed: fit_seed,
        ..*config
    };
    let k = null_model.k();
    let null_fit = fit_null(&series, k, &rep_config)?;
    let alt_fit = fit_alternative(&series, alternative, &null_fit, &rep_config)?;
    lrt_statistic(&series, &null_fit, &alt_fit)
}

/// Parametric-bootstrap critical values: B series from the fitted null,
/// null and alternative refit on each, empirical quantiles of the statistic.
/// Replications are independent RNG streams, so the result is reproducible
/// and independent of scheduling. Up to 5% failed replications are replaced
/// by fresh draws; beyond that the calibration aborts.
pub fn bootstrap_critical_values(
    null_model: &HmmModel,
    n: usize,
    b: usize,
    alternative: Alternative,
    config: &FitConfig,
) -> Result<CriticalValues> {
    if b < 100 {
        return Err(Error::Invalid(format!("need B >= 100 bootstrap replications, got {b}")));
    }
    let results: Vec<Result<f64>> = (0..b as u64)
        .into_par_iter()
        .map(|rep| replication_statistic(null_model, n, alternative, config, rep))
        .collect();

    let mut stats: Vec<f64> = Vec::with_capacity(b);
    let mut failure_msgs: Vec<String> = Vec::new();
    for r in results {
        match r {
            Ok(s) => stats.push(s),
            Err(e) => failure_msgs.push(e.to_string()),
        }
    }
    let max_failures = b / 20;
    if failure_msgs.len() > max_failures {
        return Err(Error::FitFailure(format!(
            "{} of {} bootstrap replications failed (limit {}): first failure: {}",
            failure_msgs.len(),
            b,
            max_failures,
            failure_msgs[0]
        )));
    }
    // Replacement draws from fresh streams beyond the primary index range.
    let mut next = b as u64;
    while stats.len() < b {
        match replication_statistic(null_model, n, alternative, config, next) {
            Ok(s) => stats.push(s),
            Err(e) => {
                failure_msgs.push(e.to_string());
                if failure_msgs.len() > max_failures {
                    return Err(Error::FitFailure(format!(
                        "bootstrap replacement draws kept failing: {e}"
                    )));
                }
            }
        }
        next += 1;
    }

    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let values = GOF_LEVELS
        .iter()
        .map(|&l| (l, crate::numeric::quantile_sorted(&stats, l)))
        .collect();
    Ok(CriticalValues {
        values,
        statistics: stats,
        failures: failure_msgs.len(),
    })
}

/// Rejection frequencies of the test across R series simulated from
/// `true_model`, judged against precomputed critical values (the one-shot
/// calibration reused across replications).
pub fn power_simulation(
    true_model: &HmmModel,
    null_family_k: usize,
    critical_values: &CriticalValues,
    r: usize,
    n: usize,
    alternative: Alternative,
    config: &FitConfig,
) -> Result<Vec<(f64, f64)>> {
    if r == 0 {
        return Err(Error::Invalid("need at least one power replication".into()));
    }
    let results: Vec<Result<f64>> = (0..r as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rs = rng::stream(config.seed, 0x9000 + rep);
            let sim_seed: u64 = rs.gen();
            let fit_seed: u64 = rs.gen();
            let series = simulate(true_model, n, sim_seed)?;
            let rep_config = FitConfig {
                seed: fit_seed,
                ..*config
            };
            let null_fit = fit_null(&series, null_family_k, &rep_config)?;
            let alt_fit = fit_alternative(&series, alternative, &null_fit, &rep_config)?;
            lrt_statistic(&series, &null_fit, &alt_fit)
        })
        .collect();

    let mut stats = Vec::with_capacity(r);
    let mut failures = 0usize;
    for res in results {
        match res {
            Ok(s) => stats.push(s),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > r {
        return Err(Error::FitFailure(format!(
            "{failures} of {r} power replications failed"
        )));
    }
    if stats.is_empty() {
        return Err(Error::FitFailure("every power replication failed".into()));
    }
    Ok(critical_values
        .values
        .iter()
        .map(|&(level, cv)| {
            let rejections = stats.iter().filter(|&&s| s > cv).count();
            (level, rejections as f64 / stats.len() as f64)
        })
        .collect())
}

/// End-to-end test on observed data: fit null and alternative, calibrate
/// critical values from the fitted null by parametric bootstrap, decide.
pub fn run_gof(
    series: &ObservationSeries,
    k: usize,
    alternative: Alternative,
    b: usize,
    config: &FitConfig,
) -> Result<GofReport> {
    let null_fit = fit_null(series, k, config)?;
    let alt_fit = fit_alternative(series, alternative, &null_fit, config)?;
    let statistic = lrt_statistic(series, &null_fit, &alt_fit)?;
    let cv = bootstrap_critical_values(&null_fit.model, series.n(), b, alternative, config)?;
    let decisions = cv
        .values
        .iter()
        .map(|&(level, critical_value)| LevelDecision {
            level,
            critical_value,
            reject: statistic > critical_value,
        })
        .collect();
    let report = GofReport {
        schema_version: 1,
        k,
        n: series.n(),
        b,
        alternative: alternative.name().to_string(),
        seed: config.seed,
        statistic,
        decisions,
        bootstrap_failures: cv.failures,
        null_loglik: null_fit.loglik,
        alt_loglik: alt_fit.loglik,
    };
    report.check()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Emission, FiniteMixtureDensity, GaussianComponent, HmmModel, TransitionMatrix,
    };

    fn null_truth() -> HmmModel {
        HmmModel::stationary(
            TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.15, 0.85]]).unwrap(),
            vec![
                Emission::Finite(FiniteMixtureDensity::single(-2.0, 1.0).unwrap()),
                Emission::Finite(FiniteMixtureDensity::single(2.0, 1.0).unwrap()),
            ],
        )
        .unwrap()
    }

    fn bimodal_truth() -> HmmModel {
        HmmModel::stationary(
            TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.15, 0.85]]).unwrap(),
            vec![
                Emission::Finite(
                    FiniteMixtureDensity::new(
                        vec![0.5, 0.5],
                        vec![
                            GaussianComponent::new(-5.0, 0.8).unwrap(),
                            GaussianComponent::new(-1.0, 0.8).unwrap(),
                        ],
                    )
                    .unwrap(),
                ),
                Emission::Finite(FiniteMixtureDensity::single(4.0, 1.0).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn statistic_is_zero_against_itself_and_guards_series_identity() {
        let series = simulate(&null_truth(), 200, 1).unwrap();
        let config = FitConfig::with_seed(2);
        let null_fit = fit_null(&series, 2, &config).unwrap();
        assert_eq!(lrt_statistic(&series, &null_fit, &null_fit).unwrap(), 0.0);

        let other = simulate(&null_truth(), 200, 99).unwrap();
        let other_fit = fit_null(&other, 2, &config).unwrap();
        assert!(matches!(
            lrt_statistic(&series, &null_fit, &other_fit),
            Err(Error::SeriesMismatch)
        ));
    }

    #[test]
    fn alternatives_nest_in_likelihood() {
        let series = simulate(&bimodal_truth(), 600, 8).unwrap();
        let config = FitConfig::with_seed(5);
        let null_fit = fit_null(&series, 2, &config).unwrap();
        let two = fit_alternative(&series, Alternative::TwoComp, &null_fit, &config).unwrap();
        let non = fit_alternative(&series, Alternative::Nonpar, &null_fit, &config).unwrap();
        assert!(two.loglik >= null_fit.loglik - 1e-9);
        assert!(non.loglik >= two.loglik - 1e-9);
        // Genuinely bimodal state: the statistic is decisively positive.
        let stat = lrt_statistic(&series, &null_fit, &two).unwrap();
        assert!(stat > 10.0, "statistic {stat}");
    }

    #[test]
    fn bootstrap_requires_enough_replications() {
        let config = FitConfig::with_seed(1);
        assert!(matches!(
            bootstrap_critical_values(&null_truth(), 100, 99, Alternative::TwoComp, &config),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn run_gof_is_deterministic_and_consistent() {
        let series = simulate(&null_truth(), 150, 3).unwrap();
        let config = FitConfig {
            restarts: 2,
            max_iter: 200,
            ..FitConfig::with_seed(4)
        };
        let a = run_gof(&series, 2, Alternative::TwoComp, 100, &config).unwrap();
        let b = run_gof(&series, 2, Alternative::TwoComp, 100, &config).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(
            a.decisions.iter().map(|d| d.critical_value).collect::<Vec<_>>(),
            b.decisions.iter().map(|d| d.critical_value).collect::<Vec<_>>()
        );
        a.check().unwrap();
        assert_eq!(a.decisions.len(), GOF_LEVELS.len());
        assert!(a.statistic >= 0.0);
        for (d, level) in a.decisions.iter().zip(GOF_LEVELS) {
            assert_eq!(d.level, level);
            assert_eq!(d.reject, a.statistic > d.critical_value);
        }
        assert_eq!(a.alternative, "two-comp");
        assert!(a.alt_loglik >= a.null_loglik - 1e-9);
    }

    #[test]
    fn alternative_parsing() {
        assert_eq!(Alternative::parse("nonpar").unwrap(), Alternative::Nonpar);
        assert_eq!(Alternative::parse("two-comp").unwrap(), Alternative::TwoComp);
        assert!(Alternative::parse("cubic").is_err());
    }
}
