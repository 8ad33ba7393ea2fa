//! Identification machinery made executable: Kruskal ranks, conditional
//! block CDFs, the three-way CDF array and its factorization, blind spectral
//! recovery of the transition matrix, window-length formulas, and the two
//! classical counterexamples (rank deficiency and lumpability).

use crate::model::{
    stationary_distribution, Emission, FiniteMixtureDensity, HmmModel, TransitionMatrix,
};
use crate::{rng, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Relative singular-value tolerance used for all rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Which side of the conditioning state a block CDF covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// G_T: the T observations emitted after leaving the conditioning state.
    Forward,
    /// H_T: the T observations emitted before reaching the conditioning
    /// state, computed through the time-reversed chain.
    Backward,
}

/// Evaluation points for the three-way array. Block points live in S^T,
/// singleton points in S. The probe points are the "arbitrary" evaluation
/// points whose CDF values the factorization identifies.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    /// K blocks for the backward factor (the z-tilde points).
    pub block_points_left: Vec<Vec<f64>>,
    /// K blocks for the forward factor (the z points).
    pub block_points_right: Vec<Vec<f64>>,
    /// Probe block for the backward factor.
    pub probe_left: Vec<f64>,
    /// Probe block for the forward factor.
    pub probe_right: Vec<f64>,
    /// m singleton points followed by the probe singleton y (m+1 in total,
    /// m = K(K-1)/2).
    pub singleton_points: Vec<f64>,
    /// Block length.
    pub t: usize,
}

impl EvaluationGrid {
    pub fn new(
        block_points_left: Vec<Vec<f64>>,
        block_points_right: Vec<Vec<f64>>,
        probe_left: Vec<f64>,
        probe_right: Vec<f64>,
        singleton_points: Vec<f64>,
        t: usize,
    ) -> Result<Self> {
        let k = block_points_left.len();
        if block_points_right.len() != k || k == 0 {
            return Err(Error::Invalid("need K blocks on each side".into()));
        }
        if k >= 2 && t < k - 1 {
            return Err(Error::Invalid(format!("block length T={t} below K-1={}", k - 1)));
        }
        let m = k * (k - 1) / 2;
        if singleton_points.len() != m + 1 {
            return Err(Error::Invalid(format!(
                "expected {} singleton points (K(K-1)/2 plus the probe), got {}",
                m + 1,
                singleton_points.len()
            )));
        }
        for b in block_points_left
            .iter()
            .chain(block_points_right.iter())
            .chain([&probe_left, &probe_right])
        {
            if b.len() != t {
                return Err(Error::Invalid("every block must have length T".into()));
            }
        }
        Ok(Self {
            block_points_left,
            block_points_right,
            probe_left,
            probe_right,
            singleton_points,
            t,
        })
    }

    pub fn k(&self) -> usize {
        self.block_points_left.len()
    }

    pub fn m(&self) -> usize {
        self.singleton_points.len() - 1
    }

    /// The probe singleton y.
    pub fn probe_singleton(&self) -> f64 {
        *self.singleton_points.last().expect("nonempty")
    }
}

/// The three-way array M(i,j,r) of joint CDF values over a window of 2T+1
/// observations, plus the extension slab over a window of 2T+2 observations
/// needed for blind transition-matrix recovery. When built from a model the
/// generating factor matrices are stored as well.
#[derive(Debug, Clone)]
pub struct ThreeWayArray {
    k: usize,
    m: usize,
    /// (K+2) x (m+2) x (K+2), row-major in (i, j, r).
    values: Vec<f64>,
    /// (K+2) x K joint-CDF slab tying the probe singleton to the forward
    /// blocks extended by one step; N(i,t) = sum_k pi_k H_T(z~_i;k)
    /// G_{T+1}((y, z_t); k).
    ext: DMatrix<f64>,
    pub factors: Option<Factors>,
}

/// Generating factors of the array: M~1 = diag(pi) [A_2, H(z~), 1],
/// M2 = [F(y_j), F(y), 1], M3 = [A_1, G(z), 1].
#[derive(Debug, Clone)]
pub struct Factors {
    pub m1_tilde: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: DMatrix<f64>,
}

impl ThreeWayArray {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Entry M(i,j,r), 0-based; the last index on each axis is the
    /// all-marginal (+infinity) cell.
    pub fn get(&self, i: usize, j: usize, r: usize) -> f64 {
        self.values[(i * (self.m + 2) + j) * (self.k + 2) + r]
    }

    /// The j-th slice S_j(i,r) = M(i,j,r) as a (K+2) x (K+2) matrix.
    pub fn slice(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.k + 2, self.k + 2, |i, r| self.get(i, j, r))
    }

    pub fn ext(&self) -> &DMatrix<f64> {
        &self.ext
    }
}

/// Kruskal rank: the largest j such that every j-subset of rows has smallest
/// singular value above `tol` (relative to the largest singular value of the
/// full matrix); 0 if some row is numerically zero.
pub fn kruskal_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let rows = m.nrows();
    let scale = m
        .iter()
        .cloned()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let mut best = 0;
    for j in 1..=rows {
        let mut all_ok = true;
        // Enumerate all j-subsets of rows by bitmask.
        for mask in 0u32..(1 << rows) {
            if mask.count_ones() as usize != j {
                continue;
            }
            let idx: Vec<usize> = (0..rows).filter(|&r| mask >> r & 1 == 1).collect();
            let sub = DMatrix::from_fn(j, m.ncols(), |a, b| m[(idx[a], b)]);
            let smin = smallest_singular_value(&sub);
            if smin <= tol * scale {
                all_ok = false;
                break;
            }
        }
        if !all_ok {
            break;
        }
        best = j;
    }
    best
}

fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Time reversal of an ergodic chain: alpha~_{j,k} = pi_k alpha_{k,j} / pi_j.
/// The stationary distribution is preserved.
pub fn time_reversal(gamma: &TransitionMatrix) -> Result<TransitionMatrix> {
    let pi = stationary_distribution(gamma)?;
    let k = gamma.k();
    let m = DMatrix::from_fn(k, k, |j, l| pi.get(l) * gamma.get(l, j) / pi.get(j));
    TransitionMatrix::from_rows_renormalized(m, 1e-9)
}

/// Per-state emission CDF values at a scalar point.
fn cdf_vec(model: &HmmModel, y: f64) -> Vec<f64> {
    model.emissions.iter().map(|e| e.cdf(y)).collect()
}

fn block_guard(k: usize, t: usize) -> Result<()> {
    if t > 6 || (k as f64).powi(t as i32) > 1e5 {
        return Err(Error::Guard(format!(
            "block CDF guard: T={t} (max 6), K^T={} (max 1e5)",
            (k as f64).powi(t as i32)
        )));
    }
    Ok(())
}

/// Conditional CDF of a T-block given the hidden state adjacent to it.
/// `block` carries thresholds in the natural time order of the observations
/// it covers. Forward evaluates G_T(block; k); backward evaluates
/// H_T(block; k) through the time-reversed chain. The sums over state paths
/// are computed exactly via matrix products.
pub fn conditional_block_cdf(
    model: &HmmModel,
    direction: Direction,
    block: &[f64],
    k: usize,
) -> Result<f64> {
    let t = block.len();
    if t == 0 {
        return Err(Error::Invalid("block must be nonempty".into()));
    }
    if k >= model.k() {
        return Err(Error::Invalid(format!("state index {k} out of range")));
    }
    block_guard(model.k(), t)?;
    match direction {
        Direction::Forward => Ok(chain_block_cdf(model, model.gamma.matrix().clone(), block, k)),
        Direction::Backward => {
            let rev = time_reversal(&model.gamma)?;
            let reversed: Vec<f64> = block.iter().rev().cloned().collect();
            Ok(chain_block_cdf(model, rev.matrix().clone(), &reversed, k))
        }
    }
}

/// e_k' (Gamma D_{b_1}) (Gamma D_{b_2}) ... (Gamma D_{b_T}) 1 for the given
/// chain matrix: the exact path sum of the conditional block CDF.
fn chain_block_cdf(model: &HmmModel, chain: DMatrix<f64>, block: &[f64], k: usize) -> f64 {
    let kk = model.k();
    let mut row = DVector::zeros(kk);
    row[k] = 1.0;
    for &b in block {
        let f = cdf_vec(model, b);
        let mut next = DVector::zeros(kk);
        for l in 0..kk {
            let mut acc = 0.0;
            for j in 0..kk {
                acc += row[j] * chain[(j, l)];
            }
            next[l] = acc * f[l];
        }
        row = next;
    }
    row.sum().clamp(0.0, 1.0)
}

/// All-states column of a block CDF: (G_T(block; k))_k or (H_T(block; k))_k.
fn block_cdf_all(model: &HmmModel, direction: Direction, block: &[f64]) -> Result<Vec<f64>> {
    (0..model.k())
        .map(|k| conditional_block_cdf(model, direction, block, k))
        .collect()
}

/// Marginal CDF of one stationary observation.
fn marginal_cdf(model: &HmmModel, pi: &[f64], y: f64) -> f64 {
    model
        .emissions
        .iter()
        .zip(pi)
        .map(|(e, &p)| p * e.cdf(y))
        .sum()
}

/// Quantile of the stationary marginal law by bisection.
fn marginal_quantile(model: &HmmModel, pi: &[f64], p: f64) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in &model.emissions {
        let (l, h) = e.support_hint();
        lo = lo.min(l);
        hi = hi.max(h);
    }
    // Widen until the target probability is bracketed.
    while marginal_cdf(model, pi, lo) > p {
        lo -= (hi - lo).abs().max(1.0);
    }
    while marginal_cdf(model, pi, hi) < p {
        hi += (hi - lo).abs().max(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal_cdf(model, pi, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Default candidate pool: blocks on the tensor lattice over the
/// 0.1%-99.9% quantile box of the model's stationary marginal law.
pub fn default_candidate_pool(
    model: &HmmModel,
    t: usize,
    points_per_axis: usize,
) -> Result<Vec<Vec<f64>>> {
    if points_per_axis < 2 {
        return Err(Error::Invalid("need at least 2 lattice points per axis".into()));
    }
    let total = (points_per_axis as f64).powi(t as i32);
    if total > 1e5 {
        return Err(Error::Guard(format!(
            "lattice of {total:.3e} blocks exceeds 1e5; coarsen the pool"
        )));
    }
    let pi = stationary_distribution(&model.gamma)?;
    let lo = marginal_quantile(model, pi.as_slice(), 0.001);
    let hi = marginal_quantile(model, pi.as_slice(), 0.999);
    let axis: Vec<f64> = (0..points_per_axis)
        .map(|i| lo + (hi - lo) * i as f64 / (points_per_axis - 1) as f64)
        .collect();
    let mut pool = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; t];
    loop {
        pool.push(idx.iter().map(|&i| axis[i]).collect());
        let mut pos = 0;
        loop {
            if pos == t {
                return Ok(pool);
            }
            idx[pos] += 1;
            if idx[pos] < points_per_axis {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Greedy selection of K blocks maximizing the smallest singular value of
/// the growing K x c factor matrix, plus one probe block.
fn greedy_blocks(
    model: &HmmModel,
    direction: Direction,
    pool: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    let k = model.k();
    let cols: Vec<Vec<f64>> = pool
        .iter()
        .map(|b| block_cdf_all(model, direction, b))
        .collect::<Result<_>>()?;
    let mut chosen: Vec<usize> = Vec::new();
    let mut smin_final = 0.0;
    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (c, col) in cols.iter().enumerate() {
            if chosen.contains(&c) {
                continue;
            }
            let mat = DMatrix::from_fn(k, step + 1, |row, ci| {
                if ci < step {
                    cols[chosen[ci]][row]
                } else {
                    col[row]
                }
            });
            let s = smallest_singular_value(&mat);
            if best.map_or(true, |(_, bs)| s > bs) {
                best = Some((c, s));
            }
        }
        let (c, s) = best.ok_or_else(|| Error::Invalid("empty candidate pool".into()))?;
        chosen.push(c);
        smin_final = s;
    }
    // Probe: the unused block keeping the extended matrix best conditioned.
    let mut probe: Option<(usize, f64)> = None;
    for (c, col) in cols.iter().enumerate() {
        if chosen.contains(&c) {
            continue;
        }
        let mat = DMatrix::from_fn(k, k + 1, |row, ci| {
            if ci < k {
                cols[chosen[ci]][row]
            } else {
                col[row]
            }
        });
        let s = smallest_singular_value(&mat);
        if probe.map_or(true, |(_, bs)| s > bs) {
            probe = Some((c, s));
        }
    }
    let probe_idx = probe
        .ok_or_else(|| Error::Invalid("pool too small: no probe block left".into()))?
        .0;
    Ok((
        chosen.iter().map(|&c| pool[c].clone()).collect(),
        pool[probe_idx].clone(),
        smin_final,
    ))
}

/// Constructs an evaluation grid whose factor matrices A_1 (forward) and A_2
/// (backward) have smallest singular value above 1e-6, by greedy search over
/// the candidate pool. Singleton points maximize pairwise |F_i - F_j|
/// separation. Fails with the best-achieved singular values.
pub fn find_full_rank_grid(
    model: &HmmModel,
    t: usize,
    pool: &[Vec<f64>],
) -> Result<EvaluationGrid> {
    let k = model.k();
    if k >= 2 && t < k - 1 {
        return Err(Error::Invalid(format!("need T >= K-1 = {}", k - 1)));
    }
    if pool.iter().any(|b| b.len() != t) {
        return Err(Error::Invalid("pool blocks must have length T".into()));
    }
    block_guard(k, t)?;
    let (right, probe_right, smin_a1) = greedy_blocks(model, Direction::Forward, pool)?;
    let (left, probe_left, smin_a2) = greedy_blocks(model, Direction::Backward, pool)?;
    if smin_a1 <= 1e-6 || smin_a2 <= 1e-6 {
        return Err(Error::GridSearch(vec![smin_a1, smin_a2]));
    }

    // Scalar pool: the distinct coordinates appearing in the blocks.
    let mut scalars: Vec<f64> = pool.iter().flatten().cloned().collect();
    scalars.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scalars.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut singletons = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let best = scalars
                .iter()
                .cloned()
                .max_by(|&a, &b| {
                    let sa = (model.emissions[i].cdf(a) - model.emissions[j].cdf(a)).abs();
                    let sb = (model.emissions[i].cdf(b) - model.emissions[j].cdf(b)).abs();
                    sa.partial_cmp(&sb).unwrap()
                })
                .expect("nonempty scalar pool");
            singletons.push(best);
        }
    }
    // Probe singleton: every F_k(y) must be nonzero for transition-matrix
    // recovery, so maximize the smallest CDF value, preferring points that
    // remain informative (max CDF below 1).
    let probe_y = scalars
        .iter()
        .cloned()
        .filter(|&y| cdf_vec(model, y).iter().cloned().fold(1.0_f64, f64::min) > 0.0)
        .max_by(|&a, &b| probe_score(model, a).partial_cmp(&probe_score(model, b)).unwrap())
        .ok_or_else(|| Error::GridSearch(vec![smin_a1, smin_a2]))?;
    singletons.push(probe_y);

    EvaluationGrid::new(left, right, probe_left, probe_right, singletons, t)
}

fn probe_score(model: &HmmModel, y: f64) -> f64 {
    let f = cdf_vec(model, y);
    let min = f.iter().cloned().fold(1.0_f64, f64::min);
    let max = f.iter().cloned().fold(0.0_f64, f64::max);
    if max >= 0.999 {
        // Usable but uninformative; rank below any interior point.
        min - 1.0
    } else {
        min
    }
}

/// Builds the three-way array M(i,j,r) = sum_k pi_k H_T(z~_i;k) F_k(y_j)
/// G_T(z_r;k) at the grid, including the marginal (+infinity) cells, together
/// with the extension slab used for blind transition recovery. Factors are
/// stored.
pub fn build_threeway(model: &HmmModel, grid: &EvaluationGrid) -> Result<ThreeWayArray> {
    let k = model.k();
    if grid.k() != k {
        return Err(Error::Invalid("grid state count mismatch".into()));
    }
    block_guard(k, grid.t + 1)?;
    let m = grid.m();
    let pi = stationary_distribution(&model.gamma)?;

    // Backward factor columns: K blocks, probe, +infinity.
    let mut h_cols: Vec<Vec<f64>> = Vec::with_capacity(k + 2);
    for b in &grid.block_points_left {
        h_cols.push(block_cdf_all(model, Direction::Backward, b)?);
    }
    h_cols.push(block_cdf_all(model, Direction::Backward, &grid.probe_left)?);
    h_cols.push(vec![1.0; k]);

    // Singleton factor columns: m points, probe y, +infinity.
    let mut f_cols: Vec<Vec<f64>> = grid
        .singleton_points
        .iter()
        .map(|&y| cdf_vec(model, y))
        .collect();
    f_cols.push(vec![1.0; k]);

    // Forward factor columns: K blocks, probe, +infinity.
    let mut g_cols: Vec<Vec<f64>> = Vec::with_capacity(k + 2);
    for b in &grid.block_points_right {
        g_cols.push(block_cdf_all(model, Direction::Forward, b)?);
    }
    g_cols.push(block_cdf_all(model, Direction::Forward, &grid.probe_right)?);
    g_cols.push(vec![1.0; k]);

    let mut values = vec![0.0; (k + 2) * (m + 2) * (k + 2)];
    for i in 0..k + 2 {
        for j in 0..m + 2 {
            for r in 0..k + 2 {
                let mut acc = 0.0;
                for s in 0..k {
                    acc += pi.get(s) * h_cols[i][s] * f_cols[j][s] * g_cols[r][s];
                }
                values[(i * (m + 2) + j) * (k + 2) + r] = acc;
            }
        }
    }

    // Extension slab: forward blocks prefixed by the probe singleton, one
    // step longer, tied to the backward factor.
    let probe_y = grid.probe_singleton();
    let mut ext = DMatrix::zeros(k + 2, k);
    for (tcol, z) in grid.block_points_right.iter().enumerate() {
        let mut extended = Vec::with_capacity(grid.t + 1);
        extended.push(probe_y);
        extended.extend_from_slice(z);
        let gplus = block_cdf_all(model, Direction::Forward, &extended)?;
        for i in 0..k + 2 {
            let mut acc = 0.0;
            for s in 0..k {
                acc += pi.get(s) * h_cols[i][s] * gplus[s];
            }
            ext[(i, tcol)] = acc;
        }
    }

    let m1_tilde = DMatrix::from_fn(k, k + 2, |s, i| pi.get(s) * h_cols[i][s]);
    let m2 = DMatrix::from_fn(k, m + 2, |s, j| f_cols[j][s]);
    let m3 = DMatrix::from_fn(k, k + 2, |s, r| g_cols[r][s]);

    Ok(ThreeWayArray {
        k,
        m,
        values,
        ext,
        factors: Some(Factors { m1_tilde, m2, m3 }),
    })
}

/// Kruskal-condition report for a model at a grid.
#[derive(Debug, Clone)]
pub struct KruskalReport {
    pub rank_m1_tilde: usize,
    pub rank_m2: usize,
    pub rank_m3: usize,
    pub required: usize,
    pub satisfied: bool,
    /// Name of the first factor falling short of its full rank, if any.
    pub failing: Option<&'static str>,
    pub note: Option<String>,
}

impl KruskalReport {
    pub fn sum(&self) -> usize {
        self.rank_m1_tilde + self.rank_m2 + self.rank_m3
    }
}

/// Builds the factor matrices at the grid and checks the Kruskal condition
/// rank_Kr(M~1) + rank_Kr(M2) + rank_Kr(M3) >= 2K+2.
pub fn verify_kruskal_condition(model: &HmmModel, grid: &EvaluationGrid) -> Result<KruskalReport> {
    let array = build_threeway(model, grid)?;
    let f = array.factors.as_ref().expect("factors stored by build_threeway");
    let k = model.k();
    let r1 = kruskal_rank(&f.m1_tilde, RANK_TOL);
    let r2 = kruskal_rank(&f.m2, RANK_TOL);
    let r3 = kruskal_rank(&f.m3, RANK_TOL);
    let required = 2 * k + 2;
    let satisfied = r1 + r2 + r3 >= required;
    let failing = if satisfied {
        None
    } else if r1 < k {
        Some("M1_tilde")
    } else if r2 < 2 {
        Some("M2")
    } else if r3 < k {
        Some("M3")
    } else {
        Some("M2")
    };
    let note = (k == 1).then(|| {
        "K=1 is identification-trivial: the Kruskal bound 2K+2 = 4 cannot be met by 1-row factors"
            .to_string()
    });
    Ok(KruskalReport {
        rank_m1_tilde: r1,
        rank_m2: r2,
        rank_m3: r3,
        required,
        satisfied,
        failing,
        note,
    })
}

/// Transition-matrix recovery Gamma = A A_1^{-1} diag(1/F_1(y),...,1/F_K(y)).
pub fn recover_transition_matrix(
    a: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    f_at_y: &[f64],
) -> Result<TransitionMatrix> {
    let k = a1.nrows();
    if a.nrows() != k || a.ncols() != k || a1.ncols() != k || f_at_y.len() != k {
        return Err(Error::Invalid("recover_transition_matrix: dimension mismatch".into()));
    }
    for (idx, &f) in f_at_y.iter().enumerate() {
        if f.abs() < 1e-300 {
            return Err(Error::Invalid(format!(
                "F_{}(y) = 0: pick a larger probe point y",
                idx + 1
            )));
        }
    }
    let a1_inv = a1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("A_1 is not invertible".into()))?;
    let mut prod = a * a1_inv;
    for row in 0..k {
        for col in 0..k {
            prod[(row, col)] /= f_at_y[col];
        }
    }
    TransitionMatrix::from_rows_renormalized(prod, 1e-6)
}

/// Result of blind spectral recovery from a three-way array.
#[derive(Debug, Clone)]
pub struct SpectralRecovery {
    pub gamma: TransitionMatrix,
    /// Recovered emission CDF values: K x (m+2), columns matching the
    /// singleton grid (last column is all ones).
    pub f_values: DMatrix<f64>,
    pub pi: Vec<f64>,
    /// Always true: states are recovered up to one global permutation.
    pub permutation_ambiguous: bool,
}

/// Blind recovery of the factor matrices and then the transition matrix from
/// the three-way array alone, via the generalized eigenstructure of two
/// random slice combinations. Retries up to five weight draws (fixed seed)
/// when the eigenvalue gap is too small.
pub fn spectral_recover(array: &ThreeWayArray, k: usize) -> Result<SpectralRecovery> {
    if k != array.k() {
        return Err(Error::Invalid("state count disagrees with the array".into()));
    }
    let m = array.m();
    let mut worst_gap: f64 = f64::INFINITY;
    for attempt in 0..5u64 {
        let mut r = rng::stream(SLICE_WEIGHT_SEED, attempt);
        let aw: Vec<f64> = (0..m + 2).map(|_| r.gen_range(0.5..1.5)).collect();
        let bw: Vec<f64> = (0..m + 2).map(|_| r.gen_range(0.5..1.5)).collect();
        match spectral_attempt(array, k, &aw, &bw) {
            Ok(rec) => return Ok(rec),
            Err(Error::EigenGap { gap }) => worst_gap = worst_gap.min(gap),
            Err(e) => return Err(e),
        }
    }
    Err(Error::EigenGap { gap: worst_gap })
}

/// Fixed seed for the random slice-weight draws: recovery is deterministic.
const SLICE_WEIGHT_SEED: u64 = 0x7e115_1ab;

fn spectral_attempt(
    array: &ThreeWayArray,
    k: usize,
    aw: &[f64],
    bw: &[f64],
) -> Result<SpectralRecovery> {
    let m = array.m();
    let dim = k + 2;
    let mut x = DMatrix::zeros(dim, dim);
    let mut y = DMatrix::zeros(dim, dim);
    for j in 0..m + 2 {
        let s = array.slice(j);
        x += &s * aw[j];
        y += &s * bw[j];
    }

    // Column/row spaces of X coincide with those of the rank-K factors.
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let rank_gap = sv[k - 1] / sv[0];
    if rank_gap < 1e-10 {
        return Err(Error::EigenGap { gap: rank_gap });
    }
    let u = svd.u.as_ref().expect("u requested").columns(0, k).into_owned();
    let vt = svd.v_t.as_ref().expect("v_t requested").rows(0, k).into_owned();
    let v = vt.transpose(); // (K+2) x K, orthonormal columns

    let xc = u.transpose() * &x * &v;
    let yc = u.transpose() * &y * &v;
    let z = xc
        .clone()
        .lu()
        .solve(&yc)
        .ok_or_else(|| Error::Singular("compressed slice pencil".into()))?;

    // Eigenvalues of Z are the per-state weight ratios; they must be real
    // and well separated for the rows to be resolvable.
    let eig = z.complex_eigenvalues();
    let mut lambdas: Vec<f64> = Vec::with_capacity(k);
    for e in eig.iter() {
        if e.im.abs() > 1e-6 * (1.0 + e.re.abs()) {
            return Err(Error::EigenGap { gap: e.im.abs() });
        }
        lambdas.push(e.re);
    }
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gap = f64::INFINITY;
    for w in lambdas.windows(2) {
        gap = gap.min((w[1] - w[0]).abs() / (1.0 + w[0].abs()));
    }
    if k > 1 && gap < 1e-8 {
        return Err(Error::EigenGap { gap });
    }

    // Left eigenvectors of Z are the rows of M3 compressed by V; expand and
    // normalize by the known all-ones last column.
    let mut m3 = DMatrix::zeros(k, k + 2);
    for (row, &lambda) in lambdas.iter().enumerate() {
        let b = z.transpose() - DMatrix::identity(k, k) * lambda;
        let bsvd = b.svd(false, true);
        let null = bsvd.v_t.as_ref().expect("v_t requested").row(k - 1).into_owned();
        let expanded = null * v.transpose(); // 1 x (K+2)
        let last = expanded[(0, k + 1)];
        if last.abs() < 1e-12 {
            return Err(Error::EigenGap { gap });
        }
        for c in 0..k + 2 {
            m3[(row, c)] = expanded[(0, c)] / last;
        }
    }

    // M~1 from the all-ones slice (D_{m+2} = I): S_{m+2} = M~1' M3.
    let m3_pinv = m3.transpose()
        * (&m3 * m3.transpose())
            .try_inverse()
            .ok_or_else(|| Error::Singular("recovered M3 is rank deficient".into()))?;
    let m1t = array.slice(m + 1) * &m3_pinv; // (K+2) x K
    let m1_tilde = m1t.transpose();

    // M2 entries by per-state projection of the remaining slices.
    let col_norms: Vec<f64> = (0..k).map(|s| m1t.column(s).norm_squared()).collect();
    if col_norms.iter().any(|&n| n < 1e-20) {
        return Err(Error::Singular("recovered M1 has a zero column".into()));
    }
    let mut m2 = DMatrix::zeros(k, m + 2);
    for j in 0..m + 2 {
        let c = array.slice(j) * &m3_pinv;
        for s in 0..k {
            m2[(s, j)] = c.column(s).dot(&m1t.column(s)) / col_norms[s];
        }
    }

    // Consistency: the last column of M2 must be all ones.
    for s in 0..k {
        if (m2[(s, m + 1)] - 1.0).abs() > 1e-6 {
            return Err(Error::EigenGap { gap });
        }
    }

    let pi: Vec<f64> = (0..k).map(|s| m1_tilde[(s, k + 1)]).collect();
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::EigenGap { gap });
    }

    // Blind Gamma: solve M~1' A = N for the extended forward values, then
    // apply the recovery formula with the embedded A_1 and F(y).
    let gram = (&m1_tilde * m1_tilde.transpose())
        .try_inverse()
        .ok_or_else(|| Error::Singular("recovered M1 is rank deficient".into()))?;
    let a = gram * &m1_tilde * array.ext(); // K x K
    let a1 = m3.columns(0, k).into_owned();
    let f_at_y: Vec<f64> = (0..k).map(|s| m2[(s, m)]).collect();
    let gamma = recover_transition_matrix(&a, &a1, &f_at_y)?;

    Ok(SpectralRecovery {
        gamma,
        f_values: m2,
        pi,
        permutation_ambiguous: true,
    })
}

/// Exact joint CDF pr(Y_1 <= a_1, ..., Y_L <= a_L) under the model's own
/// initial distribution, by a forward recursion over CDF-weighted rows.
pub fn joint_cdf(model: &HmmModel, thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::Invalid("need at least one threshold".into()));
    }
    let k = model.k();
    let mut row: Vec<f64> = {
        let f = cdf_vec(model, thresholds[0]);
        (0..k).map(|s| model.initial.get(s) * f[s]).collect()
    };
    for &a in &thresholds[1..] {
        let f = cdf_vec(model, a);
        let mut next = vec![0.0; k];
        for (l, nl) in next.iter_mut().enumerate() {
            for j in 0..k {
                *nl += row[j] * model.gamma.get(j, l);
            }
            *nl *= f[l];
        }
        row = next;
    }
    Ok(row.iter().sum::<f64>().clamp(0.0, 1.0))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(k - 1) {
        for pos in 0..k {
            let mut p = sub.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// Max-abs discrepancy between a blind recovery and the generating model at
/// the grid, minimized over the global state permutation (the only ambiguity
/// the theory leaves). Compares both the transition matrix and the emission
/// CDF values.
pub fn recovery_error(
    model: &HmmModel,
    grid: &EvaluationGrid,
    rec: &SpectralRecovery,
) -> Result<f64> {
    let k = model.k();
    let mut best = f64::INFINITY;
    for perm in permutations(k) {
        // Recovered state i plays truth state perm[i].
        let mut err: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                err = err.max(
                    (rec.gamma.get(i, j) - model.gamma.get(perm[i], perm[j])).abs(),
                );
            }
            for (jj, &y) in grid.singleton_points.iter().enumerate() {
                err = err.max((rec.f_values[(i, jj)] - model.emissions[perm[i]].cdf(y)).abs());
            }
        }
        best = best.min(err);
    }
    Ok(best)
}

/// Window length sufficient for identification with a general starting
/// distribution: (2K+1)(K^2-2K+2)+1.
pub fn required_window(k: usize) -> usize {
    (2 * k + 1) * (k * k + 2 - 2 * k) + 1
}

/// Checks that Gamma^{t0} with t0 = K^2-2K+2 has strictly positive entries,
/// using exact boolean zero-pattern propagation.
pub fn primitivity_exponent_check(gamma: &TransitionMatrix) -> Result<bool> {
    if !gamma.is_ergodic() {
        return Err(Error::NonErgodic);
    }
    let k = gamma.k();
    let t0 = k * k + 2 - 2 * k;
    let power = gamma.bool_power(t0);
    Ok(power.iter().all(|row| row.iter().all(|&b| b)))
}

/// Example-1 counterexample: a (K+1)-state rank-K transition matrix and two
/// genuinely different emission sets inducing identical observation laws.
/// Returns (model_A, model_B), both stationary.
pub fn rank_deficient_counterexample(
    base_gamma: &TransitionMatrix,
    delta: f64,
    beta: f64,
    base_densities: &[FiniteMixtureDensity],
) -> Result<(HmmModel, HmmModel)> {
    let k = base_gamma.k();
    if base_densities.len() != k + 1 {
        return Err(Error::Invalid(format!(
            "need K+1 = {} linearly independent densities, got {}",
            k + 1,
            base_densities.len()
        )));
    }
    for &v in &[delta, beta] {
        if !(0.0 < v && v < 1.0) {
            return Err(Error::Invalid("delta and beta must lie in (0,1)".into()));
        }
    }
    if (delta - beta).abs() < 1e-12 {
        return Err(Error::Invalid("delta = beta makes the two models coincide".into()));
    }
    if !base_gamma.is_ergodic() {
        return Err(Error::NonErgodic);
    }
    if base_gamma.smallest_singular_value() <= RANK_TOL {
        return Err(Error::Invalid("base transition matrix must have full rank".into()));
    }

    let p = beta / (1.0 + beta - delta);
    let mut rows = DMatrix::zeros(k + 1, k + 1);
    for j in 0..k + 1 {
        let src = j.min(k - 1);
        for c in 0..k - 1 {
            rows[(j, c)] = base_gamma.get(src, c);
        }
        rows[(j, k - 1)] = p * base_gamma.get(src, k - 1);
        rows[(j, k)] = (1.0 - p) * base_gamma.get(src, k - 1);
    }
    let gamma1 = TransitionMatrix::from_rows_renormalized(rows, 1e-9)?;

    let emissions_a: Vec<Emission> = base_densities
        .iter()
        .map(|f| Emission::Finite(f.clone()))
        .collect();
    let mut emissions_b: Vec<Emission> = base_densities[..k - 1]
        .iter()
        .map(|f| Emission::Finite(f.clone()))
        .collect();
    emissions_b.push(Emission::Finite(FiniteMixtureDensity::blend(&[
        (delta, &base_densities[k - 1]),
        (1.0 - delta, &base_densities[k]),
    ])?));
    emissions_b.push(Emission::Finite(FiniteMixtureDensity::blend(&[
        (beta, &base_densities[k - 1]),
        (1.0 - beta, &base_densities[k]),
    ])?));

    let model_a = HmmModel::stationary(gamma1.clone(), emissions_a)?;
    let model_b = HmmModel::stationary(gamma1, emissions_b)?;
    Ok((model_a, model_b))
}

/// Lumpability with respect to a partition: the aggregated process is Markov
/// iff within every block the outgoing mass into each block is constant.
pub fn lumpability_check(gamma: &TransitionMatrix, partition: &[Vec<usize>]) -> Result<bool> {
    let k = gamma.k();
    let mut seen = vec![false; k];
    for block in partition {
        for &s in block {
            if s >= k {
                return Err(Error::Invalid(format!("state {s} out of range")));
            }
            if seen[s] {
                return Err(Error::Invalid(format!("state {s} appears twice in the partition")));
            }
            seen[s] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::Invalid("partition does not cover all states".into()));
    }
    for gi in partition {
        for gj in partition {
            let mut reference: Option<f64> = None;
            for &state in gi {
                let mass: f64 = gj.iter().map(|&l| gamma.get(state, l)).sum();
                match reference {
                    None => reference = Some(mass),
                    Some(refm) => {
                        if (mass - refm).abs() > 1e-12 {
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}
