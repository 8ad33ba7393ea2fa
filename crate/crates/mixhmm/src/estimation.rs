//! EM for HMMs with finite-mixture emissions, the adaptive nonparametric
//! maximum likelihood procedure, initialization and canonical relabeling.
//!
//! The initial distribution of the chain is held fixed at uniform throughout
//! estimation: the asymptotic contrast is the same for every strictly
//! positive starting vector, so estimating it buys nothing.

use crate::likelihood::{forward_backward, log_likelihood};
use crate::model::{
    Emission, FiniteMixtureDensity, GaussianComponent, HmmModel, ObservationSeries,
    ProbabilityVector, ThetaBox, TransitionMatrix,
};
use crate::numeric::{mean_sd, quantile_sorted};
use crate::{rng, Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

/// Minimum mixture weight kept alive when a component loses all
/// responsibility mass.
const WEIGHT_FLOOR: f64 = 1e-8;

/// Fitting configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change declaring convergence.
    pub rel_tol: f64,
    pub restarts: usize,
    /// Minimum log-likelihood gain (nats) to accept one more mixture
    /// component per state in the adaptive procedure.
    pub component_gain_tol: f64,
    pub max_components: usize,
    pub theta_box: Option<ThetaBox>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            restarts: 5,
            component_gain_tol: 2.0,
            max_components: 16,
            theta_box: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self, k: usize, n: usize) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Invalid("rel_tol must be positive".into()));
        }
        if self.max_components > k * n + 1 {
            return Err(Error::Invalid(format!(
                "max_components {} exceeds the support bound K*n+1 = {}",
                self.max_components,
                k * n + 1
            )));
        }
        Ok(())
    }

    fn resolve_box(&self, obs: &[f64]) -> Result<ThetaBox> {
        match self.theta_box {
            Some(b) => Ok(b),
            None => ThetaBox::from_data(obs),
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: HmmModel,
    pub loglik: f64,
    /// Per-iteration log-likelihoods of the winning run (nondecreasing).
    pub loglik_trace: Vec<f64>,
    /// Accepted per-state support sizes, in acceptance order.
    pub m_schedule: Vec<usize>,
    /// Relabeling applied to reach canonical order: new state i is
    /// pre-relabel state permutation[i].
    pub permutation: Vec<usize>,
    pub converged: bool,
    /// Content hash of the series this fit was computed on.
    pub series_hash: u64,
}

/// One EM update of all free parameters (transition matrix, mixture weights,
/// means and sds), with the component index folded into the latent state.
/// The log-likelihood never decreases beyond numerical slack.
pub fn em_step(model: &HmmModel, series: &ObservationSeries, theta_box: &ThetaBox) -> Result<HmmModel> {
    Ok(em_update(model, series, theta_box)?.0)
}

/// Internal EM update returning the updated model and the log-likelihood of
/// the *input* model (a byproduct of the E-step).
fn em_update(
    model: &HmmModel,
    series: &ObservationSeries,
    theta_box: &ThetaBox,
) -> Result<(HmmModel, f64)> {
    let k = model.k();
    let n = series.n();
    let densities = model
        .finite_densities()
        .ok_or_else(|| Error::Invalid("EM requires finite-mixture emissions".into()))?;
    let post = forward_backward(model, series)?;

    // Transition matrix from smoothed transition counts.
    let mut gamma_new = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut denom = 0.0;
        for t in 0..n - 1 {
            denom += post.gamma_at(t, j);
        }
        if denom <= 0.0 {
            // Unvisited state: keep its old row.
            for s in 0..k {
                gamma_new[(j, s)] = model.gamma.get(j, s);
            }
            continue;
        }
        for s in 0..k {
            let mut num = 0.0;
            for t in 0..n - 1 {
                num += post.xi_at(t, j, s);
            }
            gamma_new[(j, s)] = num / denom;
        }
        let row_sum: f64 = (0..k).map(|s| gamma_new[(j, s)]).sum();
        for s in 0..k {
            gamma_new[(j, s)] /= row_sum;
        }
    }

    // Emission updates from component responsibilities.
    let mut new_emissions = Vec::with_capacity(k);
    for (s, f) in densities.iter().enumerate() {
        let m = f.m();
        let mut mass = vec![0.0; m];
        let mut sum_y = vec![0.0; m];
        for (t, &y) in series.obs.iter().enumerate() {
            let fy = f.density(y);
            if fy <= 0.0 {
                continue;
            }
            let g = post.gamma_at(t, s);
            for j in 0..m {
                let r = g * f.weights()[j] * f.components()[j].pdf(y) / fy;
                mass[j] += r;
                sum_y[j] += r * y;
            }
        }
        let mut means = vec![0.0; m];
        let mut sds = vec![0.0; m];
        for j in 0..m {
            if mass[j] > 0.0 {
                means[j] = theta_box.clamp_mean(sum_y[j] / mass[j]);
            } else {
                means[j] = f.components()[j].mean;
            }
        }
        // Second pass for spreads around the clamped means.
        let mut sum_sq = vec![0.0; m];
        for (t, &y) in series.obs.iter().enumerate() {
            let fy = f.density(y);
            if fy <= 0.0 {
                continue;
            }
            let g = post.gamma_at(t, s);
            for j in 0..m {
                let r = g * f.weights()[j] * f.components()[j].pdf(y) / fy;
                sum_sq[j] += r * (y - means[j]) * (y - means[j]);
            }
        }
        for j in 0..m {
            sds[j] = if mass[j] > 0.0 {
                theta_box.clamp_sd((sum_sq[j] / mass[j]).sqrt())
            } else {
                f.components()[j].sd
            };
        }
        let total: f64 = mass.iter().sum();
        let mut weights: Vec<f64> = if total > 0.0 {
            mass.iter().map(|&w| (w / total).max(WEIGHT_FLOOR)).collect()
        } else {
            vec![1.0 / m as f64; m]
        };
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        let comps: Result<Vec<GaussianComponent>> = means
            .iter()
            .zip(&sds)
            .map(|(&mu, &sd)| GaussianComponent::new(mu, sd))
            .collect();
        new_emissions.push(Emission::Finite(FiniteMixtureDensity::new(weights, comps?)?));
    }

    let updated = HmmModel::new(
        TransitionMatrix::from_rows_renormalized(gamma_new, 1e-9)?,
        model.initial.clone(),
        new_emissions,
    )?;
    Ok((updated, post.loglik))
}

/// Shape of a restart's starting point. `Location` separates states along
/// the observation axis; `Scale` gives every state the overall mean and a
/// geometric ladder of spreads, which is the basin EM needs when states
/// differ in scale rather than location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStyle {
    Location,
    Scale,
}

/// Deterministic seeded initialization: uniform weights and a uniform-plus-
/// diagonal transition matrix with 0.5 self-transition. `Location` starts
/// take per-state quantile slices of the sorted data for the means with the
/// sample sd for every spread; `Scale` starts share the overall mean and
/// spread the sds across states instead.
pub fn initialize(
    series: &ObservationSeries,
    k: usize,
    m_per_state: &[usize],
    seed: u64,
    style: InitStyle,
) -> Result<HmmModel> {
    if m_per_state.len() != k || m_per_state.iter().any(|&m| m == 0) {
        return Err(Error::Invalid("need a positive component count per state".into()));
    }
    let n = series.n();
    let mut sorted = series.obs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (_, sd_all) = mean_sd(&series.obs);
    let sd0 = sd_all.max(crate::model::SIGMA_FLOOR);
    let mut r = rng::master(seed);

    let overall_mean = quantile_sorted(&sorted, 0.5);
    let mut emissions = Vec::with_capacity(k);
    for (s, &m) in m_per_state.iter().enumerate() {
        // Per-state sd: the sample sd for location starts, a geometric
        // ladder over [0.4, 1.6] x sd for scale starts.
        let sd_s = match style {
            InitStyle::Location => sd0,
            InitStyle::Scale if k == 1 => sd0,
            InitStyle::Scale => sd0 * 0.4 * 4f64.powf(s as f64 / (k - 1) as f64),
        };
        let mut comps = Vec::with_capacity(m);
        for j in 0..m {
            let mut mean = match style {
                InitStyle::Location => {
                    let lo = s * n / k;
                    let hi = ((s + 1) * n / k).max(lo + 1).min(n);
                    quantile_sorted(&sorted[lo..hi], (j as f64 + 0.5) / m as f64)
                }
                // All states centered; components fan out within the state.
                InitStyle::Scale => overall_mean + sd_s * (j as f64 - (m as f64 - 1.0) / 2.0) * 0.5,
            };
            // Seeded jitter diversifies restarts; the degenerate single-
            // component single-state case stays at the exact median.
            if k > 1 || m > 1 {
                mean += 0.1 * sd0 * (r.gen::<f64>() - 0.5);
            }
            comps.push(GaussianComponent::new(mean, sd_s.max(crate::model::SIGMA_FLOOR))?);
        }
        emissions.push(Emission::Finite(FiniteMixtureDensity::new(
            vec![1.0 / m as f64; m],
            comps,
        )?));
    }

    let mut rows = vec![vec![0.0; k]; k];
    for (j, row) in rows.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            *v = if k == 1 {
                1.0
            } else if l == j {
                0.5
            } else {
                0.5 / (k - 1) as f64
            };
        }
    }
    HmmModel::new(
        TransitionMatrix::new(rows)?,
        ProbabilityVector::uniform(k),
        emissions,
    )
}

/// Runs EM from `start` to convergence, returning the final model, the
/// per-iteration trace and whether the stopping rule fired.
pub(crate) fn run_em(
    start: HmmModel,
    series: &ObservationSeries,
    theta_box: &ThetaBox,
    config: &FitConfig,
) -> Result<(HmmModel, Vec<f64>, bool)> {
    let mut model = start;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let (next, ll) = em_update(&model, series, theta_box)?;
        if let Some(&prev) = trace.last() {
            let rel = (ll - prev).abs() / (1.0 + prev.abs());
            if rel < config.rel_tol {
                trace.push(ll);
                converged = true;
                model = next;
                break;
            }
        }
        trace.push(ll);
        model = next;
    }
    // Record the likelihood of the final parameters.
    let final_ll = log_likelihood(&model, series);
    if final_ll.is_finite() {
        trace.push(final_ll.value);
    }
    Ok((model, trace, converged))
}

/// Best-of-restarts EM fit with fixed per-state support sizes; the result is
/// canonically relabeled. Restarts use the conventional location-quantile
/// starting points.
pub fn em_fit(
    series: &ObservationSeries,
    k: usize,
    m_per_state: &[usize],
    config: &FitConfig,
) -> Result<FitResult> {
    let style = InitStyle::Location;
    if series.n() < k {
        return Err(Error::Invalid("need n >= K observations".into()));
    }
    config.validate(k, series.n())?;
    let theta_box = config.resolve_box(&series.obs)?;

    let runs: Vec<Result<(HmmModel, Vec<f64>, bool)>> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rs = rng::stream(config.seed, r as u64);
            let init_seed: u64 = rs.gen();
            let start = initialize(series, k, m_per_state, init_seed, style)?;
            run_em(start, series, &theta_box, config)
        })
        .collect();

    let mut best: Option<(HmmModel, Vec<f64>, bool)> = None;
    for run in runs {
        let (model, trace, converged) = run?;
        let ll = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        if ll.is_finite() {
            let better = match &best {
                None => true,
                Some((_, t, _)) => ll > t.last().copied().unwrap_or(f64::NEG_INFINITY),
            };
            if better {
                best = Some((model, trace, converged));
            }
        }
    }
    let (model, trace, converged) =
        best.ok_or_else(|| Error::FitFailure("every restart diverged to -inf".into()))?;
    let loglik = *trace.last().expect("nonempty trace");
    let (model, permutation) = canonical_relabel(&model)?;
    Ok(FitResult {
        model,
        loglik,
        loglik_trace: trace,
        m_schedule: m_per_state.to_vec(),
        permutation,
        converged,
        series_hash: series.content_hash(),
    })
}

/// Adaptive nonparametric maximum likelihood fit: grow the common per-state
/// support size while the likelihood gain exceeds the acceptance threshold.
/// The final support sizes respect the K*n+1 bound.
pub fn npmle_fit(series: &ObservationSeries, k: usize, config: &FitConfig) -> Result<FitResult> {
    let start = em_fit(series, k, &vec![1; k], config)?;
    grow_support(start, series, config)
}

/// Support-growth loop shared by the nonparametric fit and the warm-started
/// goodness-of-fit alternatives: repeatedly split the heaviest component in
/// every state, refit, and accept while the gain exceeds the threshold.
pub(crate) fn grow_support(
    start: FitResult,
    series: &ObservationSeries,
    config: &FitConfig,
) -> Result<FitResult> {
    let k = start.model.k();
    config.validate(k, series.n())?;
    let theta_box = config.resolve_box(&series.obs)?;
    let support_cap = config.max_components.min(k * series.n() + 1);

    let mut current = start;
    let mut m = current
        .model
        .emissions
        .iter()
        .map(|e| match e {
            crate::model::Emission::Finite(f) => f.m(),
            _ => 1,
        })
        .max()
        .unwrap_or(1);
    let mut schedule = vec![m];
    let mut split_rng = rng::stream(config.seed, 0x5eed);

    while m < support_cap {
        let warm = split_heaviest(&current.model, &theta_box, &mut split_rng)?;
        let (cand_model, cand_trace, cand_conv) = run_em(warm, series, &theta_box, config)?;
        let cand_ll = cand_trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        if !cand_ll.is_finite() || cand_ll - current.loglik <= config.component_gain_tol {
            break;
        }
        m += 1;
        schedule.push(m);
        let (model, permutation) = canonical_relabel(&cand_model)?;
        let mut trace = current.loglik_trace;
        trace.extend_from_slice(&cand_trace);
        current = FitResult {
            model,
            loglik: cand_ll,
            loglik_trace: trace,
            m_schedule: schedule.clone(),
            permutation,
            converged: cand_conv,
            series_hash: series.content_hash(),
        };
    }
    current.m_schedule = schedule;
    Ok(current)
}

/// Warm start for one more component per state: duplicate the heaviest
/// component, shift the copies by half a standard deviation in opposite
/// directions and split its weight.
pub(crate) fn split_heaviest<R: Rng>(
    model: &HmmModel,
    theta_box: &ThetaBox,
    rng: &mut R,
) -> Result<HmmModel> {
    let mut emissions = Vec::with_capacity(model.k());
    for e in &model.emissions {
        let f = match e {
            Emission::Finite(f) => f,
            _ => return Err(Error::Invalid("EM requires finite-mixture emissions".into())),
        };
        let heavy = f
            .weights()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .expect("nonempty mixture");
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut weights = f.weights().to_vec();
        let mut comps = f.components().to_vec();
        let base = comps[heavy];
        weights[heavy] /= 2.0;
        weights.push(weights[heavy]);
        comps[heavy] = GaussianComponent::new(
            theta_box.clamp_mean(base.mean - sign * 0.5 * base.sd),
            base.sd,
        )?;
        comps.push(GaussianComponent::new(
            theta_box.clamp_mean(base.mean + sign * 0.5 * base.sd),
            base.sd,
        )?);
        emissions.push(Emission::Finite(FiniteMixtureDensity::new(weights, comps)?));
    }
    HmmModel::new(model.gamma.clone(), model.initial.clone(), emissions)
}

/// Adds one exact copy of each state's heaviest component with the weight
/// split evenly: the density (and hence the likelihood) is unchanged, which
/// anchors warm-started alternative fits at the null fit's likelihood.
pub(crate) fn exact_duplicate(model: &HmmModel) -> Result<HmmModel> {
    let mut emissions = Vec::with_capacity(model.k());
    for e in &model.emissions {
        let f = match e {
            Emission::Finite(f) => f,
            _ => return Err(Error::Invalid("EM requires finite-mixture emissions".into())),
        };
        let heavy = f
            .weights()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .expect("nonempty mixture");
        let mut weights = f.weights().to_vec();
        let mut comps = f.components().to_vec();
        weights[heavy] /= 2.0;
        weights.push(weights[heavy]);
        comps.push(comps[heavy]);
        emissions.push(Emission::Finite(FiniteMixtureDensity::new(weights, comps)?));
    }
    HmmModel::new(model.gamma.clone(), model.initial.clone(), emissions)
}

/// Canonical state order: ascending emission mean, ties broken by ascending
/// emission sd, then original index. Returns the relabeled model and the
/// permutation applied (new state i was old state perm[i]).
pub fn canonical_relabel(model: &HmmModel) -> Result<(HmmModel, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..model.k()).collect();
    let keys: Vec<(f64, f64)> = model
        .emissions
        .iter()
        .map(|e| {
            let sd = match e {
                Emission::Finite(f) => f.sd(),
                _ => 0.0,
            };
            (e.mean(), sd)
        })
        .collect();
    idx.sort_by(|&a, &b| {
        let (ma, sa) = keys[a];
        let (mb, sb) = keys[b];
        if (ma - mb).abs() > 1e-9 {
            ma.partial_cmp(&mb).unwrap()
        } else if (sa - sb).abs() > 1e-9 {
            sa.partial_cmp(&sb).unwrap()
        } else {
            a.cmp(&b)
        }
    });
    Ok((model.permuted(&idx)?, idx))
}
