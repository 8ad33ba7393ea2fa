//! Exact HMM likelihood machinery: scaled forward recursion, forward-backward
//! smoothing, the path-enumeration oracle, and the Monte-Carlo
//! Kullback-Leibler contrast.

use crate::model::{simulate, HmmModel, ObservationSeries};
use crate::numeric::log_sum_exp;
use crate::{Error, Result};

/// Result of the scaled forward recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    /// log g_n, or -inf when some step has an all-zero emission row.
    pub value: f64,
    /// Index (0-based) of the first all-zero emission step, if any.
    pub zero_row: Option<usize>,
}

impl LogLik {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Per-state emission densities at every time step (n x K, row-major).
pub(crate) fn emission_matrix(model: &HmmModel, obs: &[f64]) -> Vec<f64> {
    let k = model.k();
    let mut dens = vec![0.0; obs.len() * k];
    for (t, &y) in obs.iter().enumerate() {
        for (s, e) in model.emissions.iter().enumerate() {
            dens[t * k + s] = e.density(y);
        }
    }
    dens
}

/// Log-likelihood by the forward recursion with per-step normalization.
pub fn log_likelihood(model: &HmmModel, series: &ObservationSeries) -> LogLik {
    let dens = emission_matrix(model, &series.obs);
    forward(model, &dens, series.n()).0
}

/// Scaled forward pass. Returns the log-likelihood, the normalized forward
/// variables (n x K), and the per-step normalizers.
fn forward(model: &HmmModel, dens: &[f64], n: usize) -> (LogLik, Vec<f64>, Vec<f64>) {
    let k = model.k();
    let mut alpha = vec![0.0; n * k];
    let mut norms = vec![0.0; n];
    let mut loglik = 0.0;

    for s in 0..k {
        alpha[s] = model.initial.get(s) * dens[s];
    }
    for t in 0..n {
        if t > 0 {
            for s in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += alpha[(t - 1) * k + j] * model.gamma.get(j, s);
                }
                alpha[t * k + s] = acc * dens[t * k + s];
            }
        }
        let c: f64 = alpha[t * k..(t + 1) * k].iter().sum();
        if c <= 0.0 || !c.is_finite() {
            return (
                LogLik {
                    value: f64::NEG_INFINITY,
                    zero_row: Some(t),
                },
                alpha,
                norms,
            );
        }
        for s in 0..k {
            alpha[t * k + s] /= c;
        }
        norms[t] = c;
        loglik += c.ln();
    }
    (
        LogLik {
            value: loglik,
            zero_row: None,
        },
        alpha,
        norms,
    )
}

/// Smoothed state and transition posteriors.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// n x K smoothed state probabilities, row-major.
    pub gamma: Vec<f64>,
    /// (n-1) x K x K smoothed transition probabilities, row-major.
    pub xi: Vec<f64>,
    pub k: usize,
    pub loglik: f64,
}

impl Posteriors {
    pub fn gamma_at(&self, t: usize, s: usize) -> f64 {
        self.gamma[t * self.k + s]
    }

    pub fn xi_at(&self, t: usize, j: usize, s: usize) -> f64 {
        self.xi[(t * self.k + j) * self.k + s]
    }
}

/// Forward-backward smoothing; posteriors satisfy the marginalization
/// identity sum_s xi_t(j, s) = gamma_t(j).
pub fn forward_backward(model: &HmmModel, series: &ObservationSeries) -> Result<Posteriors> {
    let k = model.k();
    let n = series.n();
    let dens = emission_matrix(model, &series.obs);
    let (ll, alpha, norms) = forward(model, &dens, n);
    if !ll.is_finite() {
        return Err(Error::FitFailure(format!(
            "all-zero emission row at t={}",
            ll.zero_row.unwrap_or(0)
        )));
    }

    let mut beta = vec![0.0; n * k];
    for s in 0..k {
        beta[(n - 1) * k + s] = 1.0;
    }
    for t in (0..n - 1).rev() {
        for j in 0..k {
            let mut acc = 0.0;
            for s in 0..k {
                acc += model.gamma.get(j, s) * dens[(t + 1) * k + s] * beta[(t + 1) * k + s];
            }
            beta[t * k + j] = acc / norms[t + 1];
        }
    }

    let mut gamma = vec![0.0; n * k];
    for t in 0..n {
        let mut sum = 0.0;
        for s in 0..k {
            gamma[t * k + s] = alpha[t * k + s] * beta[t * k + s];
            sum += gamma[t * k + s];
        }
        for s in 0..k {
            gamma[t * k + s] /= sum;
        }
    }

    let mut xi = vec![0.0; (n - 1) * k * k];
    for t in 0..n - 1 {
        let mut sum = 0.0;
        for j in 0..k {
            for s in 0..k {
                let v = alpha[t * k + j]
                    * model.gamma.get(j, s)
                    * dens[(t + 1) * k + s]
                    * beta[(t + 1) * k + s]
                    / norms[t + 1];
                xi[(t * k + j) * k + s] = v;
                sum += v;
            }
        }
        for v in &mut xi[t * k * k..(t + 1) * k * k] {
            *v /= sum;
        }
    }

    Ok(Posteriors {
        gamma,
        xi,
        k,
        loglik: ll.value,
    })
}

/// Joint log-density by explicit summation over all K^n state paths in
/// log-sum-exp form. Test oracle only; guarded at K^n <= 1e7.
pub fn brute_force_log_density(model: &HmmModel, series: &ObservationSeries) -> Result<f64> {
    let k = model.k();
    let n = series.n();
    let paths = (k as f64).powi(n as i32);
    if paths > 1e7 {
        return Err(Error::Guard(format!(
            "K^n = {k}^{n} = {paths:.3e} exceeds 1e7"
        )));
    }
    let dens = emission_matrix(model, &series.obs);
    let mut terms = Vec::with_capacity(paths as usize);
    let mut path = vec![0usize; n];
    loop {
        let mut log_term = model.initial.get(path[0]).ln() + dens[path[0]].ln();
        for t in 1..n {
            log_term += model.gamma.get(path[t - 1], path[t]).ln() + dens[t * k + path[t]].ln();
        }
        terms.push(log_term);
        // Odometer increment over state paths.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(log_sum_exp(&terms));
            }
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Monte-Carlo estimate of the Kullback-Leibler contrast K{theta0, theta}:
/// one simulated series of length n from `model0`, normalized log-likelihood
/// difference of the two parameter sets on that series.
pub fn kl_divergence_estimate(
    model0: &HmmModel,
    model: &HmmModel,
    n: usize,
    seed: u64,
) -> Result<f64> {
    for (name, m) in [("model0", model0), ("model", model)] {
        if m.initial.as_slice().iter().any(|&p| p <= 0.0) {
            return Err(Error::Invalid(format!(
                "{name} must have a strictly positive initial distribution"
            )));
        }
    }
    let series = simulate(model0, n, seed)?;
    let l0 = log_likelihood(model0, &series);
    let l = log_likelihood(model, &series);
    if !l0.is_finite() {
        return Err(Error::FitFailure(
            "reference model assigns zero density to its own sample".into(),
        ));
    }
    if !l.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok((l0.value - l.value) / n as f64)
}
