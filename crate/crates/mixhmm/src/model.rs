//! Model representation, validation, density evaluation and exact simulation.

use crate::numeric::{beta_pdf, gauss_legendre, normal_cdf, normal_pdf, scale_rule};
use crate::{rng, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};

/// Tolerance for probability normalization invariants.
pub const PROB_TOL: f64 = 1e-12;

/// Variance floor baked into the compact parameter box: mixture likelihoods
/// are unbounded as sd -> 0, so the box never admits smaller scales.
pub const SIGMA_FLOOR: f64 = 0.05;

/// Row-stochastic K x K transition probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Invalid("state count must be at least 1".into()));
        }
        let mut m = DMatrix::zeros(k, k);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Invalid(format!(
                    "row {} has {} entries, expected {}",
                    j + 1,
                    row.len(),
                    k
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::Invalid(format!(
                    "row {} sums to {} (must be 1 within {:e})",
                    j + 1,
                    sum,
                    PROB_TOL
                )));
            }
            for (l, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!(
                        "entry ({},{}) = {} outside [0,1]",
                        j + 1,
                        l + 1,
                        v
                    )));
                }
                m[(j, l)] = v;
            }
        }
        Ok(Self { entries: m })
    }

    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..entries.nrows())
            .map(|j| entries.row(j).iter().cloned().collect())
            .collect();
        Self::new(rows)
    }

    /// Builds from near-stochastic rows: clamps tiny negatives and
    /// renormalizes, refusing if the adjustment exceeds `slack`.
    pub fn from_rows_renormalized(entries: DMatrix<f64>, slack: f64) -> Result<Self> {
        let mut m = entries;
        for j in 0..m.nrows() {
            let mut adj: f64 = 0.0;
            for l in 0..m.ncols() {
                if m[(j, l)] < 0.0 {
                    adj = adj.max(-m[(j, l)]);
                    m[(j, l)] = 0.0;
                }
            }
            let sum: f64 = m.row(j).iter().sum();
            adj = adj.max((sum - 1.0).abs());
            if adj > slack {
                return Err(Error::Invalid(format!(
                    "row {} deviates from stochasticity by {adj:e} (> {slack:e})",
                    j + 1
                )));
            }
            for l in 0..m.ncols() {
                m[(j, l)] /= sum;
            }
        }
        Self::from_matrix(m)
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.entries[(j, l)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn smallest_singular_value(&self) -> f64 {
        self.entries
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Ergodicity is structural: the directed graph on edges with strictly
    /// positive entries must be irreducible and aperiodic.
    pub fn is_ergodic(&self) -> bool {
        let k = self.k();
        let adj: Vec<Vec<usize>> = (0..k)
            .map(|j| (0..k).filter(|&l| self.entries[(j, l)] > 0.0).collect())
            .collect();
        // Irreducibility: every state reaches every other.
        for start in 0..k {
            let mut seen = vec![false; k];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if seen.iter().any(|&s| !s) {
                return false;
            }
        }
        // Aperiodicity: gcd of all cycle lengths through state 0 equals 1,
        // computed from BFS levels.
        let mut level = vec![usize::MAX; k];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        let mut g = 0u64;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                } else {
                    let diff = (level[v] + 1).abs_diff(level[w]) as u64;
                    g = gcd(g, diff);
                }
            }
        }
        g == 1
    }

    /// Boolean zero-pattern of Gamma^t (exact, no floating thresholds).
    pub fn bool_power(&self, t: usize) -> Vec<Vec<bool>> {
        let k = self.k();
        let base: Vec<Vec<bool>> = (0..k)
            .map(|j| (0..k).map(|l| self.entries[(j, l)] > 0.0).collect())
            .collect();
        let mut acc: Vec<Vec<bool>> = (0..k).map(|j| (0..k).map(|l| j == l).collect()).collect();
        for _ in 0..t {
            let mut next = vec![vec![false; k]; k];
            for (j, row) in acc.iter().enumerate() {
                for (mid, &reach) in row.iter().enumerate() {
                    if reach {
                        for l in 0..k {
                            if base[mid][l] {
                                next[j][l] = true;
                            }
                        }
                    }
                }
            }
            acc = next;
        }
        acc
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Probability vector over the K states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    entries: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("probability vector must be nonempty".into()));
        }
        if entries.iter().any(|&p| p < 0.0) {
            return Err(Error::Invalid("negative probability entry".into()));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Invalid(format!(
                "probabilities sum to {sum} (must be 1 within {PROB_TOL:e})"
            )));
        }
        Ok(Self { entries })
    }

    pub fn uniform(k: usize) -> Self {
        // Renormalize so the sum is exactly representable-close to 1.
        let mut entries = vec![1.0 / k as f64; k];
        let sum: f64 = entries.iter().sum();
        entries.iter_mut().for_each(|p| *p /= sum);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.entries[k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

/// Unique stationary distribution of an ergodic transition matrix, obtained
/// by solving pi Gamma = pi, sum(pi) = 1 as a linear system.
pub fn stationary_distribution(gamma: &TransitionMatrix) -> Result<ProbabilityVector> {
    if !gamma.is_ergodic() {
        return Err(Error::NonErgodic);
    }
    let k = gamma.k();
    // (Gamma' - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = gamma.matrix().transpose() - DMatrix::<f64>::identity(k, k);
    for l in 0..k {
        a[(k - 1, l)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary-distribution system".into()))?;
    // One step of iterative refinement sharpens the residual to ~1e-16.
    let refined = gamma.matrix().transpose() * &pi;
    let sum: f64 = refined.iter().sum();
    ProbabilityVector::new(refined.iter().map(|&p| p / sum).collect())
}

/// Single Gaussian component of a state-dependent mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianComponent {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::Invalid(format!("sd must be positive, got {sd}")));
        }
        Ok(Self { mean, sd })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        normal_pdf(y, self.mean, self.sd)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        normal_cdf(y, self.mean, self.sd)
    }
}

/// Compact parameter box for component parameters (means and sds). The
/// defaults derive from the data because the underlying theory requires a
/// compact box but prescribes no bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBox {
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub sd_lo: f64,
    pub sd_hi: f64,
}

impl ThetaBox {
    pub fn new(mean_lo: f64, mean_hi: f64, sd_lo: f64, sd_hi: f64) -> Result<Self> {
        if mean_lo >= mean_hi || sd_lo >= sd_hi || sd_lo < SIGMA_FLOOR {
            return Err(Error::Invalid(format!(
                "invalid parameter box [{mean_lo},{mean_hi}] x [{sd_lo},{sd_hi}]"
            )));
        }
        Ok(Self {
            mean_lo,
            mean_hi,
            sd_lo,
            sd_hi,
        })
    }

    /// Default box: means within the data range plus one unit, sds between
    /// the variance floor and twice the sample sd.
    pub fn from_data(obs: &[f64]) -> Result<Self> {
        let lo = obs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (_, sd) = crate::numeric::mean_sd(obs);
        // The lower sd bound adapts to the data scale: with the absolute
        // floor alone, EM can park a component on a near-singleton cluster
        // whose likelihood gain defeats any support-size test.
        let sd_lo = SIGMA_FLOOR.max(0.15 * sd);
        Self::new(lo - 1.0, hi + 1.0, sd_lo, (2.0 * sd).max(2.0 * sd_lo))
    }

    pub fn clamp_mean(&self, m: f64) -> f64 {
        m.clamp(self.mean_lo, self.mean_hi)
    }

    pub fn clamp_sd(&self, s: f64) -> f64 {
        s.clamp(self.sd_lo, self.sd_hi)
    }
}

/// Finite Gaussian mixture: the state-dependent density of a discrete
/// mixing measure with `m` support points.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMixtureDensity {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl FiniteMixtureDensity {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::Invalid(
                "weights and components must have equal positive length".into(),
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Invalid(format!(
                "mixture weights sum to {sum} (must be 1 within {PROB_TOL:e})"
            )));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn single(mean: f64, sd: f64) -> Result<Self> {
        Ok(Self {
            weights: vec![1.0],
            components: vec![GaussianComponent::new(mean, sd)?],
        })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn density(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.pdf(y))
            .sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.cdf(y))
            .sum()
    }

    /// Mean of the mixture (used for canonical state ordering).
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.mean)
            .sum()
    }

    /// Standard deviation of the mixture.
    pub fn sd(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * (c.sd * c.sd + c.mean * c.mean))
            .sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    /// Convex combination of finite mixtures is again a finite mixture.
    pub fn blend(parts: &[(f64, &FiniteMixtureDensity)]) -> Result<Self> {
        let mut weights = Vec::new();
        let mut components = Vec::new();
        for (coef, f) in parts {
            for (w, c) in f.weights.iter().zip(&f.components) {
                weights.push(coef * w);
                components.push(*c);
            }
        }
        Self::new(weights, components)
    }
}

/// Exact MLE-style evaluation of a finite Gaussian mixture density.
pub fn density_eval(f: &FiniteMixtureDensity, y: f64) -> f64 {
    f.density(y)
}

/// Ground-truth continuous Gaussian mixture: mean drawn from a translated
/// and scaled Beta law, sd drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousMixtureTruth {
    pub beta_a: f64,
    pub beta_b: f64,
    pub loc: f64,
    pub scale: f64,
    pub sd_lo: f64,
    pub sd_hi: f64,
    pub quadrature_nodes: usize,
}

impl ContinuousMixtureTruth {
    pub fn new(
        beta_a: f64,
        beta_b: f64,
        loc: f64,
        scale: f64,
        sd_lo: f64,
        sd_hi: f64,
        quadrature_nodes: usize,
    ) -> Result<Self> {
        if beta_a <= 0.0 || beta_b <= 0.0 {
            return Err(Error::Invalid("Beta parameters must be positive".into()));
        }
        if scale <= 0.0 {
            return Err(Error::Invalid("scale must be positive".into()));
        }
        if !(0.0 < sd_lo && sd_lo < sd_hi) {
            return Err(Error::Invalid(format!(
                "sd law requires 0 < lo < hi, got ({sd_lo},{sd_hi})"
            )));
        }
        if quadrature_nodes < 16 {
            return Err(Error::Invalid("quadrature_nodes must be at least 16".into()));
        }
        Ok(Self {
            beta_a,
            beta_b,
            loc,
            scale,
            sd_lo,
            sd_hi,
            quadrature_nodes,
        })
    }

    fn rules(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nodes, weights) = gauss_legendre(self.quadrature_nodes);
        // Mean integral in Beta coordinates on (0,1); the sd integral carries
        // the uniform density 1/(hi-lo).
        let (mu_x, mu_w) = scale_rule(&nodes, &weights, 0.0, 1.0);
        let (sd_x, sd_w) = scale_rule(&nodes, &weights, self.sd_lo, self.sd_hi);
        (mu_x, mu_w, sd_x, sd_w)
    }

    pub fn density(&self, y: f64) -> f64 {
        let (mu_x, mu_w, sd_x, sd_w) = self.rules();
        let unif = 1.0 / (self.sd_hi - self.sd_lo);
        let mut acc = 0.0;
        for (&x, &wx) in mu_x.iter().zip(&mu_w) {
            let dens_mu = beta_pdf(x, self.beta_a, self.beta_b);
            if dens_mu == 0.0 {
                continue;
            }
            let mu = self.loc + self.scale * x;
            for (&s, &ws) in sd_x.iter().zip(&sd_w) {
                acc += wx * ws * dens_mu * unif * normal_pdf(y, mu, s);
            }
        }
        acc
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let (mu_x, mu_w, sd_x, sd_w) = self.rules();
        let unif = 1.0 / (self.sd_hi - self.sd_lo);
        let mut acc = 0.0;
        for (&x, &wx) in mu_x.iter().zip(&mu_w) {
            let dens_mu = beta_pdf(x, self.beta_a, self.beta_b);
            if dens_mu == 0.0 {
                continue;
            }
            let mu = self.loc + self.scale * x;
            for (&s, &ws) in sd_x.iter().zip(&sd_w) {
                acc += wx * ws * dens_mu * unif * normal_cdf(y, mu, s);
            }
        }
        acc.clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.loc + self.scale * self.beta_a / (self.beta_a + self.beta_b)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let beta = BetaDist::new(self.beta_a, self.beta_b).expect("validated parameters");
        let mu = self.loc + self.scale * beta.sample(rng);
        let sd = rng.gen_range(self.sd_lo..self.sd_hi);
        mu + sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Mixing-law density evaluation by tensor-product Gauss-Legendre quadrature.
pub fn truth_density_eval(t: &ContinuousMixtureTruth, y: f64) -> f64 {
    t.density(y)
}

/// State-dependent emission law: a finite Gaussian mixture, a continuous
/// ground-truth mixture, or a convex blend of continuous truths (used for
/// linearly dependent state densities).
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Finite(FiniteMixtureDensity),
    Truth(ContinuousMixtureTruth),
    Blend(Vec<(f64, ContinuousMixtureTruth)>),
}

impl Emission {
    pub fn density(&self, y: f64) -> f64 {
        match self {
            Emission::Finite(f) => f.density(y),
            Emission::Truth(t) => t.density(y),
            Emission::Blend(parts) => parts.iter().map(|(w, t)| w * t.density(y)).sum(),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Emission::Finite(f) => f.cdf(y),
            Emission::Truth(t) => t.cdf(y),
            Emission::Blend(parts) => parts.iter().map(|(w, t)| w * t.cdf(y)).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Emission::Finite(f) => f.mean(),
            Emission::Truth(t) => t.mean(),
            Emission::Blend(parts) => parts.iter().map(|(w, t)| w * t.mean()).sum(),
        }
    }

    /// Rough support interval for grid construction.
    pub fn support_hint(&self) -> (f64, f64) {
        match self {
            Emission::Finite(f) => {
                let lo = f
                    .components()
                    .iter()
                    .map(|c| c.mean - 4.0 * c.sd)
                    .fold(f64::INFINITY, f64::min);
                let hi = f
                    .components()
                    .iter()
                    .map(|c| c.mean + 4.0 * c.sd)
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            Emission::Truth(t) => (t.loc - 4.0 * t.sd_hi, t.loc + t.scale + 4.0 * t.sd_hi),
            Emission::Blend(parts) => parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, (_, t)| {
                let (lo, hi) = Emission::Truth(*t).support_hint();
                (acc.0.min(lo), acc.1.max(hi))
            }),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Emission::Finite(f) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut idx = f.m() - 1;
                for (j, w) in f.weights().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = j;
                        break;
                    }
                }
                let c = f.components()[idx];
                c.mean + c.sd * rng.sample::<f64, _>(StandardNormal)
            }
            Emission::Truth(t) => t.sample(rng),
            Emission::Blend(parts) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (w, t) in parts {
                    acc += w;
                    if u < acc {
                        return t.sample(rng);
                    }
                }
                parts.last().expect("nonempty blend").1.sample(rng)
            }
        }
    }
}

/// A complete K-state hidden Markov model: transition matrix, initial
/// distribution and per-state emission laws.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub gamma: TransitionMatrix,
    pub initial: ProbabilityVector,
    pub emissions: Vec<Emission>,
}

impl HmmModel {
    pub fn new(
        gamma: TransitionMatrix,
        initial: ProbabilityVector,
        emissions: Vec<Emission>,
    ) -> Result<Self> {
        if initial.len() != gamma.k() || emissions.len() != gamma.k() {
            return Err(Error::Invalid(format!(
                "dimension mismatch: K={}, initial={}, emissions={}",
                gamma.k(),
                initial.len(),
                emissions.len()
            )));
        }
        Ok(Self {
            gamma,
            initial,
            emissions,
        })
    }

    /// Stationary model: the initial distribution is the stationary
    /// distribution of the transition matrix.
    pub fn stationary(gamma: TransitionMatrix, emissions: Vec<Emission>) -> Result<Self> {
        let pi = stationary_distribution(&gamma)?;
        Self::new(gamma, pi, emissions)
    }

    pub fn k(&self) -> usize {
        self.gamma.k()
    }

    /// Per-state finite mixtures, if every state carries one.
    pub fn finite_densities(&self) -> Option<Vec<&FiniteMixtureDensity>> {
        self.emissions
            .iter()
            .map(|e| match e {
                Emission::Finite(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    /// Relabels states by `perm`: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        if perm.len() != k {
            return Err(Error::Invalid("permutation length mismatch".into()));
        }
        let mut gamma = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                gamma[(i, j)] = self.gamma.get(perm[i], perm[j]);
            }
        }
        let initial = ProbabilityVector::new(perm.iter().map(|&p| self.initial.get(p)).collect())?;
        let emissions = perm.iter().map(|&p| self.emissions[p].clone()).collect();
        Self::new(TransitionMatrix::from_matrix(gamma)?, initial, emissions)
    }
}

/// Observed series with optional latent-state record (0-based labels).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub obs: Vec<f64>,
    pub true_states: Option<Vec<usize>>,
    pub seed: u64,
}

impl ObservationSeries {
    pub fn from_obs(obs: Vec<f64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Invalid("series must have length >= 1".into()));
        }
        Ok(Self {
            obs,
            true_states: None,
            seed: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.obs.len()
    }

    /// FNV-1a over the raw observation bits; used to detect fits computed
    /// on different data.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &y in &self.obs {
            for b in y.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Exact simulation of (X_t, Y_t): states from the initial distribution and
/// transition matrix, observations from the state's emission law. Identical
/// (model, n, seed) gives bit-identical output.
pub fn simulate(model: &HmmModel, n: usize, seed: u64) -> Result<ObservationSeries> {
    if n == 0 {
        return Err(Error::Invalid("series length must be >= 1".into()));
    }
    let k = model.k();
    let mut rng = rng::master(seed);
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut state = sample_categorical(model.initial.as_slice(), &mut rng);
    for _ in 0..n {
        states.push(state);
        obs.push(model.emissions[state].sample(&mut rng));
        let row: Vec<f64> = (0..k).map(|l| model.gamma.get(state, l)).collect();
        state = sample_categorical(&row, &mut rng);
    }
    Ok(ObservationSeries {
        obs,
        true_states: Some(states),
        seed,
    })
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Validation report against the model assumptions: full-rank transition
/// matrix, ergodicity, and pairwise-distinct state densities.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub full_rank: bool,
    pub smallest_singular_value: f64,
    pub ergodic: bool,
    pub densities_distinct: bool,
    /// Witness pair of indistinguishable states, if any (0-based).
    pub indistinct_pair: Option<(usize, usize)>,
}

impl ValidationReport {
    pub fn all_satisfied(&self) -> bool {
        self.full_rank && self.ergodic && self.densities_distinct
    }
}

/// Checks the model assumptions. Rank is decided by the smallest singular
/// value against `tol`; distinctness by a 401-point grid over the model's
/// support hull; ergodicity exactly from the zero pattern.
pub fn validate_model(model: &HmmModel, tol: f64) -> ValidationReport {
    let smin = model.gamma.smallest_singular_value();
    let ergodic = model.gamma.is_ergodic();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in &model.emissions {
        let (l, h) = e.support_hint();
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let grid: Vec<f64> = (0..401)
        .map(|i| lo + (hi - lo) * i as f64 / 400.0)
        .collect();
    let mut indistinct_pair = None;
    'outer: for i in 0..model.k() {
        for j in (i + 1)..model.k() {
            let sep = grid
                .iter()
                .map(|&y| (model.emissions[i].density(y) - model.emissions[j].density(y)).abs())
                .fold(0.0, f64::max);
            if sep <= tol {
                indistinct_pair = Some((i, j));
                break 'outer;
            }
        }
    }
    ValidationReport {
        full_rank: smin > tol,
        smallest_singular_value: smin,
        ergodic,
        densities_distinct: indistinct_pair.is_none(),
        indistinct_pair,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gamma3() -> TransitionMatrix {
        TransitionMatrix::new(vec![
            vec![0.5, 0.25, 0.25],
            vec![0.4, 0.4, 0.2],
            vec![0.2, 0.2, 0.6],
        ])
        .unwrap()
    }

    fn simple_model() -> HmmModel {
        HmmModel::stationary(
            gamma3(),
            vec![
                Emission::Finite(FiniteMixtureDensity::single(-7.0, 2.0).unwrap()),
                Emission::Finite(FiniteMixtureDensity::single(0.5, 2.5).unwrap()),
                Emission::Finite(FiniteMixtureDensity::single(10.0, 1.5).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn transition_matrix_rejects_bad_rows() {
        assert!(TransitionMatrix::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![]).is_err());
    }

    #[test]
    fn renormalization_tolerates_tiny_negatives() {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0 + 1e-13, -1e-13, 0.3, 0.7]);
        let g = TransitionMatrix::from_rows_renormalized(m, 1e-9).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        assert_abs_diff_eq!(g.get(0, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_distribution_closed_forms() {
        // [[0.5, 0.5], [1, 0]] has stationary (2/3, 1/3).
        let g = TransitionMatrix::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let pi = stationary_distribution(&g).unwrap();
        assert_abs_diff_eq!(pi.get(0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi.get(1), 1.0 / 3.0, epsilon = 1e-12);

        // The three-state matrix above has stationary (4/11, 3/11, 4/11).
        let pi = stationary_distribution(&gamma3()).unwrap();
        for (got, want) in pi.as_slice().iter().zip([4.0 / 11.0, 3.0 / 11.0, 4.0 / 11.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn ergodicity_detection() {
        assert!(gamma3().is_ergodic());
        // Reducible: no path from state 2 back to state 1.
        let absorbing =
            TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(!absorbing.is_ergodic());
        // Irreducible but periodic with period 2.
        let periodic = TransitionMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!periodic.is_ergodic());
        // Irreducible and aperiodic despite two deterministic rows.
        let cyclic_ish = TransitionMatrix::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        assert!(cyclic_ish.is_ergodic());
        assert!(stationary_distribution(&periodic).is_err());
    }

    #[test]
    fn bool_power_tracks_reachability() {
        let g = TransitionMatrix::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        let p1 = g.bool_power(1);
        assert!(p1[0][1] && !p1[0][0] && !p1[0][2]);
        // t = K^2 - 2K + 2 = 5 makes every entry positive for this matrix.
        let p5 = g.bool_power(5);
        assert!(p5.iter().all(|row| row.iter().all(|&b| b)));
    }

    #[test]
    fn gaussian_component_pdf_cdf() {
        let c = GaussianComponent::new(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(c.pdf(0.0), 0.3989422804014327, epsilon = 1e-15);
        assert_abs_diff_eq!(c.cdf(0.0), 0.5, epsilon = 1e-15);
        assert!(GaussianComponent::new(0.0, 0.0).is_err());
        assert!(GaussianComponent::new(0.0, -1.0).is_err());
    }

    #[test]
    fn mixture_density_and_moments() {
        let f = FiniteMixtureDensity::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::new(-1.0, 1.0).unwrap(),
                GaussianComponent::new(1.0, 2.0).unwrap(),
            ],
        )
        .unwrap();
        let want = 0.5 * crate::numeric::normal_pdf(0.3, -1.0, 1.0)
            + 0.5 * crate::numeric::normal_pdf(0.3, 1.0, 2.0);
        assert_abs_diff_eq!(f.density(0.3), want, epsilon = 1e-15);
        assert_abs_diff_eq!(f.mean(), 0.0, epsilon = 1e-15);
        // Var = E[sd^2 + mu^2] - mean^2 = 0.5(1+1) + 0.5(4+1) = 3.5.
        assert_abs_diff_eq!(f.sd(), 3.5f64.sqrt(), epsilon = 1e-12);
        assert!(FiniteMixtureDensity::new(vec![0.6, 0.6], f.components().to_vec()).is_err());
        assert!(FiniteMixtureDensity::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn scenario_truth_density_oracles() {
        // Independent numerical integration (scipy dblquad at 1e-12):
        // Beta(2,2) mean law on (0,1), sd ~ U(1,4).
        let t = ContinuousMixtureTruth::new(2.0, 2.0, 0.0, 1.0, 1.0, 4.0, 48).unwrap();
        assert_abs_diff_eq!(t.density(-0.68), 0.147509705355, epsilon = 1e-9);
        assert_abs_diff_eq!(t.density(0.5), 0.182813946652, epsilon = 1e-9);
        assert_abs_diff_eq!(t.density(2.0), 0.130859848706, epsilon = 1e-9);
        assert_abs_diff_eq!(t.mean(), 0.5, epsilon = 1e-12);

        let t = ContinuousMixtureTruth::new(2.0, 11.0, 5.0, 33.0, 1.4, 1.6, 48).unwrap();
        assert_abs_diff_eq!(t.density(2.27), 0.001825938792, epsilon = 1e-9);
        assert_abs_diff_eq!(t.density(6.0), 0.074651907145, epsilon = 1e-9);
        assert_abs_diff_eq!(t.density(9.66), 0.116271376442, epsilon = 1e-9);
        assert_abs_diff_eq!(t.mean(), 10.076923076923, epsilon = 1e-9);
    }

    #[test]
    fn truth_density_normalizes_and_cdf_is_consistent() {
        let t = ContinuousMixtureTruth::new(2.0, 2.0, 0.0, 1.0, 1.0, 4.0, 48).unwrap();
        // Total mass via the trapezoid rule over a wide interval.
        let (lo, hi, steps) = (-25.0, 25.0, 4000);
        let h = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..=steps {
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * h * t.density(lo + i as f64 * h);
        }
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.cdf(25.0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.cdf(-25.0), 0.0, epsilon = 1e-9);
        assert!(t.cdf(0.0) < t.cdf(1.0));
    }

    #[test]
    fn blend_is_the_convex_combination() {
        let a = FiniteMixtureDensity::single(-2.0, 1.0).unwrap();
        let b = FiniteMixtureDensity::single(3.0, 2.0).unwrap();
        let blend = FiniteMixtureDensity::blend(&[(0.4, &a), (0.6, &b)]).unwrap();
        for y in [-3.0, 0.0, 2.5] {
            assert_abs_diff_eq!(
                blend.density(y),
                0.4 * a.density(y) + 0.6 * b.density(y),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn theta_box_clamps() {
        let b = ThetaBox::new(-1.0, 1.0, 0.1, 2.0).unwrap();
        assert_eq!(b.clamp_mean(5.0), 1.0);
        assert_eq!(b.clamp_mean(-5.0), -1.0);
        assert_eq!(b.clamp_mean(0.3), 0.3);
        assert_eq!(b.clamp_sd(0.01), 0.1);
        assert_eq!(b.clamp_sd(9.0), 2.0);
        assert!(ThetaBox::new(1.0, -1.0, 0.1, 2.0).is_err());
        assert!(ThetaBox::new(-1.0, 1.0, 2.0, 0.1).is_err());
    }

    #[test]
    fn theta_box_from_data_covers_the_sample() {
        let obs = vec![-3.0, -1.0, 0.0, 2.0, 4.0];
        let b = ThetaBox::from_data(&obs).unwrap();
        assert_eq!(b.mean_lo, -4.0);
        assert_eq!(b.mean_hi, 5.0);
        assert!(b.sd_lo >= 0.05);
        let (_, sd) = crate::numeric::mean_sd(&obs);
        assert!(b.sd_hi >= 2.0 * sd - 1e-12);
    }

    #[test]
    fn simulate_is_deterministic_and_visits_states_at_stationary_rates() {
        let model = simple_model();
        let n = 20_000;
        let a = simulate(&model, n, 9).unwrap();
        let b = simulate(&model, n, 9).unwrap();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.true_states, b.true_states);
        assert_ne!(a.obs, simulate(&model, n, 10).unwrap().obs);

        let states = a.true_states.as_ref().unwrap();
        let mut counts = [0usize; 3];
        for &s in states {
            counts[s] += 1;
        }
        for (k, want) in [4.0 / 11.0, 3.0 / 11.0, 4.0 / 11.0].into_iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - want).abs() < 0.02, "state {k}: {freq} vs {want}");
        }
        assert!(simulate(&model, 0, 1).is_err());
    }

    #[test]
    fn permuted_round_trip() {
        let model = simple_model();
        let perm = [2usize, 0, 1];
        let p = model.permuted(&perm).unwrap();
        // Inverse of (2,0,1) is (1,2,0).
        let back = p.permuted(&[1, 2, 0]).unwrap();
        assert_eq!(back, model);
        assert_abs_diff_eq!(p.gamma.get(0, 1), model.gamma.get(2, 0), epsilon = 1e-15);
        assert!(model.permuted(&[0, 1]).is_err());
    }

    #[test]
    fn validation_report_flags_each_assumption() {
        let good = validate_model(&simple_model(), 1e-8);
        assert!(good.all_satisfied());
        assert!(good.smallest_singular_value > 0.1);

        // Rank-1 transition matrix.
        let flat = TransitionMatrix::new(vec![
            vec![0.5, 0.25, 0.25],
            vec![0.5, 0.25, 0.25],
            vec![0.5, 0.25, 0.25],
        ])
        .unwrap();
        let model = HmmModel::stationary(flat, simple_model().emissions).unwrap();
        let rep = validate_model(&model, 1e-8);
        assert!(!rep.full_rank && rep.ergodic && rep.densities_distinct);

        // Two states with the same emission law.
        let dup = HmmModel::stationary(
            gamma3(),
            vec![
                Emission::Finite(FiniteMixtureDensity::single(0.0, 1.0).unwrap()),
                Emission::Finite(FiniteMixtureDensity::single(0.0, 1.0).unwrap()),
                Emission::Finite(FiniteMixtureDensity::single(5.0, 1.0).unwrap()),
            ],
        )
        .unwrap();
        let rep = validate_model(&dup, 1e-8);
        assert!(!rep.densities_distinct);
        assert_eq!(rep.indistinct_pair, Some((0, 1)));
    }

    #[test]
    fn content_hash_is_order_sensitive() {
        let a = ObservationSeries::from_obs(vec![1.0, 2.0, 3.0]).unwrap();
        let b = ObservationSeries::from_obs(vec![3.0, 2.0, 1.0]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert!(ObservationSeries::from_obs(vec![]).is_err());
    }
}
