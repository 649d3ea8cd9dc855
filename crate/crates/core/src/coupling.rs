//! Coupling strategies: turning two independent batches into weighted
//! training pairs.
//!
//! - `pair_independent`: the i.i.d. coupling, all weights 1.
//! - `pair_gibbs`: i.i.d. pairs weighted by `exp(-c(x, y) / eps)`.
//! - `pair_minibatch_ot`: pairs from a per-batch optimal transport plan,
//!   either the exact minimum-cost assignment or a log-domain Sinkhorn
//!   entropic plan.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::toydata::SampleBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Euclidean,
    SquaredEuclidean,
}

/// Ground cost plus the entropic temperature `epsilon` (same units as the
/// cost).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: CostKind,
    pub epsilon: f64,
}

impl CostSpec {
    pub fn euclidean(epsilon: f64) -> Self {
        Self { kind: CostKind::Euclidean, epsilon }
    }

    pub fn squared_euclidean(epsilon: f64) -> Self {
        Self { kind: CostKind::SquaredEuclidean, epsilon }
    }

    pub fn cost(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        match self.kind {
            CostKind::Euclidean => sq.sqrt(),
            CostKind::SquaredEuclidean => sq,
        }
    }
}

/// `w_eps(x, y) = exp(-c(x, y) / eps)`, in `(0, 1]` for nonnegative costs.
pub fn gibbs_weight(x: ArrayView1<f64>, y: ArrayView1<f64>, cost: &CostSpec) -> f64 {
    (-cost.cost(x, y) / cost.epsilon).exp()
}

/// Dense cost matrix `C[i, j] = c(x_i, y_j)`.
pub fn cost_matrix(xs: &SampleBatch, ys: &SampleBatch, cost: &CostSpec) -> Array2<f64> {
    let (n, m) = (xs.n(), ys.n());
    let mut c = Array2::zeros((n, m));
    for i in 0..n {
        let xi = xs.row(i);
        for j in 0..m {
            c[[i, j]] = cost.cost(xi, ys.row(j));
        }
    }
    c
}

/// How the weights of a dense plan are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanNormalization {
    /// All weights sum to 1 (transport plan mass).
    Probability,
    /// Raw per-pair weights, no global constraint.
    PerPairRaw,
}

/// A discrete coupling over batch pairs.
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    /// Dense `n x n` weights.
    pub weights: Array2<f64>,
    pub normalization: PlanNormalization,
    /// Sinkhorn iterations taken (0 for exact plans).
    pub iterations: usize,
    /// Final max L1 marginal violation.
    pub marginal_violation: f64,
}

impl CouplingPlan {
    /// `sum_ij C_ij pi_ij` for a probability-normalized plan.
    pub fn transport_cost(&self, costs: &Array2<f64>) -> f64 {
        self.weights
            .iter()
            .zip(costs.iter())
            .map(|(w, c)| w * c)
            .sum()
    }
}

/// One training tuple: interpolation time, endpoints, loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPair {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
}

pub type WeightedPairBatch = Vec<WeightedPair>;

fn check_equal_sizes(xs: &SampleBatch, ys: &SampleBatch) -> Result<usize> {
    if xs.n() != ys.n() {
        return Err(Error::Contract(format!(
            "batch size mismatch: {} vs {}",
            xs.n(),
            ys.n()
        )));
    }
    if xs.dim() != ys.dim() {
        return Err(Error::Contract(format!(
            "dimension mismatch: {} vs {}",
            xs.dim(),
            ys.dim()
        )));
    }
    Ok(xs.n())
}

/// Pair `x_i` with `y_i`, all weights 1, fresh `t_i ~ U(0, 1)`.
pub fn pair_independent(
    xs: &SampleBatch,
    ys: &SampleBatch,
    rng: &mut Rng,
) -> Result<WeightedPairBatch> {
    let n = check_equal_sizes(xs, ys)?;
    Ok((0..n)
        .map(|i| WeightedPair {
            t: rng::uniform(rng),
            x: xs.row(i).to_vec(),
            y: ys.row(i).to_vec(),
            w: 1.0,
        })
        .collect())
}

/// Independent pairing with Gibbs-kernel loss weights; no resampling.
///
/// Consumes the RNG exactly like [`pair_independent`], so runs with the
/// same seed differ only in the weights.
pub fn pair_gibbs(
    xs: &SampleBatch,
    ys: &SampleBatch,
    cost: &CostSpec,
    rng: &mut Rng,
) -> Result<WeightedPairBatch> {
    if !(cost.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {}", cost.epsilon)));
    }
    let mut pairs = pair_independent(xs, ys, rng)?;
    for (i, p) in pairs.iter_mut().enumerate() {
        p.w = gibbs_weight(xs.row(i), ys.row(i), cost);
    }
    Ok(pairs)
}

/// Exact minimum-cost assignment (Jonker-Volgenant style shortest
/// augmenting paths with dual potentials, O(n^3)).
///
/// Returns the permutation `sigma` (pairing `x_i` with `y_sigma(i)`) and
/// the total cost. Among cost-equal permutations a pairwise-swap pass
/// prefers the lexicographically smaller `sigma`.
pub fn solve_assignment(
    xs: &SampleBatch,
    ys: &SampleBatch,
    cost: &CostSpec,
) -> Result<(Vec<usize>, f64)> {
    let n = check_equal_sizes(xs, ys)?;
    if n > 4096 {
        return Err(Error::Contract(format!("assignment limited to n <= 4096, got {n}")));
    }
    let costs = cost_matrix(xs, ys, cost);
    solve_assignment_matrix(&costs)
}

/// Assignment on a precomputed square cost matrix.
pub fn solve_assignment_matrix(costs: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = costs.nrows();
    if costs.ncols() != n || n == 0 {
        return Err(Error::Contract("cost matrix must be square and nonempty".into()));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite entry in cost matrix".into()));
    }
    // Shortest augmenting path with potentials, 1-indexed with a virtual
    // column 0 (the classic O(n^3) formulation).
    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row (1-based) assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            let row = costs.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[p[j] - 1] = j - 1;
    }
    lexicographic_tie_pass(costs, &mut sigma);
    let total = sigma.iter().enumerate().map(|(i, &j)| costs[[i, j]]).sum();
    Ok((sigma, total))
}

/// Swap cost-neutral pairs toward the lexicographically smaller sigma.
/// Resolves ties from duplicate points; bounded passes keep it O(n^2).
fn lexicographic_tie_pass(costs: &Array2<f64>, sigma: &mut [usize]) {
    let n = sigma.len();
    for _ in 0..4 {
        let mut changed = false;
        for i in 0..n {
            for k in (i + 1)..n {
                if sigma[k] < sigma[i] {
                    let before = costs[[i, sigma[i]]] + costs[[k, sigma[k]]];
                    let after = costs[[i, sigma[k]]] + costs[[k, sigma[i]]];
                    if after == before {
                        sigma.swap(i, k);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Log-domain Sinkhorn between uniform empirical measures.
///
/// Returns a dense probability plan whose row and column sums are within
/// `tol` (max L1 violation) of `1/n`.
pub fn sinkhorn(
    xs: &SampleBatch,
    ys: &SampleBatch,
    cost: &CostSpec,
    tol: f64,
    max_iters: usize,
) -> Result<CouplingPlan> {
    let n = check_equal_sizes(xs, ys)?;
    let costs = cost_matrix(xs, ys, cost);
    sinkhorn_matrix(&costs, cost.epsilon, tol, max_iters, n)
}

/// Sinkhorn on a precomputed cost matrix (uniform `1/n` marginals).
pub fn sinkhorn_matrix(
    costs: &Array2<f64>,
    epsilon: f64,
    tol: f64,
    max_iters: usize,
    n: usize,
) -> Result<CouplingPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let marginal = 1.0 / n as f64;
    let log_marginal = marginal.ln();
    // Potentials scaled by 1/eps: plan entry is exp(f_i + g_j - C_ij/eps + 2 log(1/n)).
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let scaled = costs.mapv(|c| -c / epsilon);
    while iterations < max_iters {
        iterations += 1;
        // f_i <- -LSE_j(g_j + scaled_ij + log_marginal)
        for i in 0..n {
            let row = scaled.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                let v = g[j] + row[j];
                if v > max {
                    max = v;
                }
            }
            let sum: f64 = (0..n).map(|j| (g[j] + row[j] - max).exp()).sum();
            f[i] = -(max + sum.ln() + log_marginal);
        }
        for j in 0..n {
            let col = scaled.column(j);
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                let v = f[i] + col[i];
                if v > max {
                    max = v;
                }
            }
            let sum: f64 = (0..n).map(|i| (f[i] + col[i] - max).exp()).sum();
            g[j] = -(max + sum.ln() + log_marginal);
        }
        // After a column update the column marginals are exact; the row
        // violation measures convergence.
        violation = 0.0;
        for i in 0..n {
            let row = scaled.row(i);
            let row_sum: f64 = (0..n)
                .map(|j| (f[i] + g[j] + row[j] + 2.0 * log_marginal).exp())
                .sum();
            violation += (row_sum - marginal).abs();
        }
        if violation <= tol {
            let mut weights = Array2::zeros((n, n));
            for i in 0..n {
                let row = scaled.row(i);
                for j in 0..n {
                    weights[[i, j]] = (f[i] + g[j] + row[j] + 2.0 * log_marginal).exp();
                }
            }
            return Ok(CouplingPlan {
                weights,
                normalization: PlanNormalization::Probability,
                iterations,
                marginal_violation: violation,
            });
        }
    }
    Err(Error::Convergence {
        what: "sinkhorn".into(),
        violation,
        iters: iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMode {
    Exact,
    Sinkhorn,
}

/// Minibatch OT pairing. Exact mode pairs `x_i` with `y_sigma(i)` at
/// weight 1; Sinkhorn mode draws `n` index pairs from the entropic plan
/// (categorical over the n^2 entries). Fresh `t_i ~ U(0, 1)` either way.
pub fn pair_minibatch_ot(
    xs: &SampleBatch,
    ys: &SampleBatch,
    mode: OtMode,
    cost: &CostSpec,
    rng: &mut Rng,
) -> Result<WeightedPairBatch> {
    let n = check_equal_sizes(xs, ys)?;
    match mode {
        OtMode::Exact => {
            let (sigma, _) = solve_assignment(xs, ys, cost)?;
            Ok((0..n)
                .map(|i| WeightedPair {
                    t: rng::uniform(rng),
                    x: xs.row(i).to_vec(),
                    y: ys.row(sigma[i]).to_vec(),
                    w: 1.0,
                })
                .collect())
        }
        OtMode::Sinkhorn => {
            let plan = sinkhorn(xs, ys, cost, 1e-6, 10_000)?;
            let flat: Vec<f64> = plan.weights.iter().copied().collect();
            Ok((0..n)
                .map(|_| {
                    let k = rng::categorical(rng, &flat);
                    let (i, j) = (k / n, k % n);
                    WeightedPair {
                        t: rng::uniform(rng),
                        x: xs.row(i).to_vec(),
                        y: ys.row(j).to_vec(),
                        w: 1.0,
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::toydata::{sample, Distribution2DSpec, SampleBatch};
    use ndarray::array;

    fn batch(points: Array2<f64>) -> SampleBatch {
        SampleBatch::new(points, 0)
    }

    #[test]
    fn gibbs_weight_basics() {
        let x = array![1.0, 2.0];
        let cost = CostSpec::euclidean(3.0);
        assert_eq!(gibbs_weight(x.view(), x.view(), &cost), 1.0);

        let y = array![3.0, 2.0]; // distance 2
        let cost = CostSpec::euclidean(2.0);
        let w = gibbs_weight(x.view(), y.view(), &cost);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);

        let cost = CostSpec::euclidean(1e9);
        let w = gibbs_weight(x.view(), y.view(), &cost);
        assert!((w - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gibbs_weight_symmetric_and_decreasing() {
        let cost = CostSpec::euclidean(1.5);
        let a = array![0.0, 0.0];
        let b = array![1.0, 1.0];
        assert_eq!(
            gibbs_weight(a.view(), b.view(), &cost),
            gibbs_weight(b.view(), a.view(), &cost)
        );
        let c = array![2.0, 2.0];
        assert!(gibbs_weight(a.view(), b.view(), &cost) > gibbs_weight(a.view(), c.view(), &cost));
    }

    #[test]
    fn independent_pairing_unit_weights() {
        let xs = batch(array![[0.0, 0.0]]);
        let ys = batch(array![[1.0, 1.0]]);
        let pairs = pair_independent(&xs, &ys, &mut stream(0, "t")).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].w, 1.0);
        assert!((0.0..1.0).contains(&pairs[0].t));
    }

    #[test]
    fn pairing_t_is_uniform_ks() {
        let spec = Distribution2DSpec::IsotropicGaussian { mean: vec![0.0, 0.0], std: 1.0 };
        let n = 100_000;
        let mut rng = stream(5, "data");
        let xs = sample(&spec, n, &mut rng).unwrap();
        let ys = sample(&spec, n, &mut rng).unwrap();
        let pairs = pair_independent(&xs, &ys, &mut stream(5, "t")).unwrap();
        let mut ts: Vec<f64> = pairs.iter().map(|p| p.t).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, t) in ts.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((t - lo).abs()).max((t - hi).abs());
        }
        // 1% critical value for the one-sample KS statistic.
        let crit = 1.63 / (n as f64).sqrt();
        assert!(ks < crit, "KS = {ks}, crit = {crit}");
    }

    #[test]
    fn gibbs_pairing_matches_independent_at_large_eps() {
        let spec = Distribution2DSpec::CircularMog { count: 4, radius: 2.0, std: 0.3 };
        let mut rng = stream(6, "data");
        let xs = sample(&spec, 32, &mut rng).unwrap();
        let ys = sample(&spec, 32, &mut rng).unwrap();
        let a = pair_independent(&xs, &ys, &mut stream(6, "t")).unwrap();
        let b = pair_gibbs(&xs, &ys, &CostSpec::euclidean(1e9), &mut stream(6, "t")).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p.t, q.t);
            assert!((p.w - q.w).abs() < 1e-6);
        }
    }

    #[test]
    fn gibbs_pair_weight_ratio_identity() {
        let cost = CostSpec::euclidean(0.7);
        let x = array![0.0, 0.0];
        let near = array![0.5, 0.0];
        let far = array![3.0, 0.0];
        let w_near = gibbs_weight(x.view(), near.view(), &cost);
        let w_far = gibbs_weight(x.view(), far.view(), &cost);
        let expected = ((3.0 - 0.5) / 0.7f64).exp();
        assert!((w_near / w_far - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn mean_gibbs_weight_matches_streaming_z_estimate() {
        // Mean pair weight is a MC estimate of Z_eps; compare against an
        // independent streaming estimator on its own RNG streams.
        let spec = Distribution2DSpec::IsotropicGaussian { mean: vec![0.0, 0.0], std: 1.0 };
        let cost = CostSpec::euclidean(1.0);
        let n = 100_000;
        let mut rng = stream(7, "data");
        let xs = sample(&spec, n, &mut rng).unwrap();
        let ys = sample(&spec, n, &mut rng).unwrap();
        let pairs = pair_gibbs(&xs, &ys, &cost, &mut stream(7, "t")).unwrap();
        let mean_a: f64 = pairs.iter().map(|p| p.w).sum::<f64>() / n as f64;
        let var_a: f64 =
            pairs.iter().map(|p| (p.w - mean_a).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se_a = (var_a / n as f64).sqrt();

        let mut rng_b = stream(8_888, "z-oracle");
        let m = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let x = array![crate::rng::normal(&mut rng_b), crate::rng::normal(&mut rng_b)];
            let y = array![crate::rng::normal(&mut rng_b), crate::rng::normal(&mut rng_b)];
            let w = gibbs_weight(x.view(), y.view(), &cost);
            s += w;
            s2 += w * w;
        }
        let mean_b = s / m as f64;
        let se_b = ((s2 / m as f64 - mean_b * mean_b) / m as f64).sqrt();
        let tol = 2.0 * (se_a * se_a + se_b * se_b).sqrt();
        assert!(
            (mean_a - mean_b).abs() <= tol,
            "{mean_a} vs {mean_b}, tol {tol}"
        );
    }

    #[test]
    fn assignment_recovers_permutation() {
        let xs = batch(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let ys = batch(array![[2.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        let (sigma, total) =
            solve_assignment(&xs, &ys, &CostSpec::squared_euclidean(1.0)).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(sigma, vec![1, 2, 0]);
    }

    #[test]
    fn assignment_uncrosses_the_line() {
        let xs = batch(array![[0.0], [1.0]]);
        let ys = batch(array![[1.0], [0.0]]);
        let (sigma, total) =
            solve_assignment(&xs, &ys, &CostSpec::squared_euclidean(1.0)).unwrap();
        assert_eq!(total, 0.0);
        // x = 0 goes to the y valued 0 (index 1), x = 1 to the y valued 1.
        assert_eq!(sigma, vec![1, 0]);
    }

    fn brute_force_assignment(costs: &Array2<f64>) -> f64 {
        fn rec(costs: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = costs.nrows();
            if row == n {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(costs, row + 1, used, acc + costs[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(costs, 0, &mut vec![false; costs.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let spec = Distribution2DSpec::IsotropicGaussian { mean: vec![0.0, 0.0], std: 1.0 };
        for trial in 0..50u64 {
            let mut rng = stream(trial, "assign");
            let xs = sample(&spec, 6, &mut rng).unwrap();
            let ys = sample(&spec, 6, &mut rng).unwrap();
            for kind in [CostKind::Euclidean, CostKind::SquaredEuclidean] {
                let cost = CostSpec { kind, epsilon: 1.0 };
                let costs = cost_matrix(&xs, &ys, &cost);
                let (_, total) = solve_assignment(&xs, &ys, &cost).unwrap();
                let brute = brute_force_assignment(&costs);
                assert_eq!(total, brute, "trial {trial}");
            }
        }
    }

    #[test]
    fn sinkhorn_constant_cost_gives_uniform_plan() {
        let xs = batch(array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let ys = batch(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let plan = sinkhorn(&xs, &ys, &CostSpec::euclidean(0.5), 1e-10, 1000).unwrap();
        for w in plan.weights.iter() {
            assert!((w - 1.0 / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_2x2_closed_form() {
        // Cost [[0, 1], [1, 0]]: diagonal mass is 1 / (2 (1 + e^{-1/eps})).
        let xs = batch(array![[0.0], [1.0]]);
        let ys = batch(array![[0.0], [1.0]]);
        let eps = 0.05;
        let cost = CostSpec::euclidean(eps);
        let plan = sinkhorn(&xs, &ys, &cost, 1e-10, 10_000).unwrap();
        let diag = 1.0 / (2.0 * (1.0 + (-1.0 / eps).exp()));
        let off = 0.5 - diag;
        assert!((plan.weights[[0, 0]] - diag).abs() < 1e-6);
        assert!((plan.weights[[1, 1]] - diag).abs() < 1e-6);
        assert!((plan.weights[[0, 1]] - off).abs() < 1e-6);
        assert!((plan.weights[[1, 0]] - off).abs() < 1e-6);
    }

    #[test]
    fn sinkhorn_marginals_within_tol() {
        let spec = Distribution2DSpec::CircularMog { count: 3, radius: 2.0, std: 0.5 };
        let mut rng = stream(9, "data");
        let xs = sample(&spec, 24, &mut rng).unwrap();
        let ys = sample(&spec, 24, &mut rng).unwrap();
        let tol = 1e-8;
        let plan = sinkhorn(&xs, &ys, &CostSpec::euclidean(0.3), tol, 10_000).unwrap();
        let n = 24;
        for i in 0..n {
            let row: f64 = plan.weights.row(i).sum();
            assert!((row - 1.0 / n as f64).abs() <= tol);
        }
        for j in 0..n {
            let col: f64 = plan.weights.column(j).sum();
            assert!((col - 1.0 / n as f64).abs() <= tol);
        }
    }

    #[test]
    fn sinkhorn_cost_dominates_exact_and_tightens_as_eps_shrinks() {
        let spec = Distribution2DSpec::CircularMog { count: 4, radius: 2.0, std: 0.4 };
        let mut rng = stream(10, "data");
        let xs = sample(&spec, 12, &mut rng).unwrap();
        let ys = sample(&spec, 12, &mut rng).unwrap();
        let cost = CostSpec::squared_euclidean(1.0);
        let costs = cost_matrix(&xs, &ys, &cost);
        let (_, exact) = solve_assignment(&xs, &ys, &cost).unwrap();
        let exact_mean = exact / 12.0;
        let mut last = f64::INFINITY;
        for eps in [1.0, 0.5, 0.2] {
            let plan = sinkhorn_matrix(&costs, eps, 1e-9, 400_000, 12).unwrap();
            let c = plan.transport_cost(&costs);
            assert!(c >= exact_mean - 1e-9, "eps {eps}: {c} < {exact_mean}");
            assert!(c <= last + 1e-12);
            last = c;
        }
    }

    #[test]
    fn sinkhorn_reaches_exact_cost_at_small_eps() {
        // Well-separated matching: as eps shrinks the entropic plan snaps
        // onto the unique optimal permutation.
        let xs = batch(array![
            [0.0, 0.0],
            [4.0, 0.0],
            [0.0, 4.0],
            [4.0, 4.0],
            [2.0, 8.0],
            [8.0, 2.0]
        ]);
        let ys = batch(array![
            [0.1, 0.05],
            [4.1, -0.1],
            [-0.1, 4.05],
            [3.9, 4.1],
            [2.1, 7.9],
            [8.05, 2.1]
        ]);
        let cost = CostSpec::squared_euclidean(1.0);
        let costs = cost_matrix(&xs, &ys, &cost);
        let (_, exact) = solve_assignment(&xs, &ys, &cost).unwrap();
        let exact_mean = exact / 6.0;
        let plan = sinkhorn_matrix(&costs, 0.2, 1e-9, 100_000, 6).unwrap();
        let c = plan.transport_cost(&costs);
        assert!(c >= exact_mean - 1e-12);
        assert!((c - exact_mean).abs() / exact_mean < 1e-3);
    }

    #[test]
    fn sinkhorn_nonconvergence_is_reported() {
        let xs = batch(array![[0.0], [10.0]]);
        let ys = batch(array![[5.0], [15.0]]);
        let err = sinkhorn(&xs, &ys, &CostSpec::euclidean(0.01), 1e-12, 1).unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }));
    }

    #[test]
    fn ot_pairing_identity_batches() {
        let xs = batch(array![[0.5, 0.5], [2.0, -1.0], [-3.0, 0.2]]);
        let pairs = pair_minibatch_ot(
            &xs,
            &xs,
            OtMode::Exact,
            &CostSpec::squared_euclidean(1.0),
            &mut stream(11, "t"),
        )
        .unwrap();
        for p in &pairs {
            assert_eq!(p.x, p.y);
        }
    }

    #[test]
    fn exact_ot_cost_never_exceeds_independent() {
        let spec = Distribution2DSpec::CircularMog { count: 5, radius: 3.0, std: 0.4 };
        for trial in 0..10u64 {
            let mut rng = stream(trial, "otvsind");
            let xs = sample(&spec, 16, &mut rng).unwrap();
            let ys = sample(&spec, 16, &mut rng).unwrap();
            let cost = CostSpec::squared_euclidean(1.0);
            let (_, ot_total) = solve_assignment(&xs, &ys, &cost).unwrap();
            let ind_total: f64 = (0..16).map(|i| cost.cost(xs.row(i), ys.row(i))).sum();
            assert!(ot_total <= ind_total + 1e-12);
        }
    }

    #[test]
    fn sinkhorn_pairing_cost_decreases_with_eps() {
        let spec = Distribution2DSpec::CircularMog { count: 5, radius: 3.0, std: 0.4 };
        let mut rng = stream(13, "data");
        let xs = sample(&spec, 32, &mut rng).unwrap();
        let ys = sample(&spec, 32, &mut rng).unwrap();
        let exact_cost = {
            let cost = CostSpec::euclidean(1.0);
            let (_, total) = solve_assignment(&xs, &ys, &cost).unwrap();
            total / 32.0
        };
        let mut costs = Vec::new();
        for eps in [10.0, 1.0, 0.1] {
            let cost = CostSpec::euclidean(eps);
            // Expected pair cost under the dense plan (deterministic, no
            // sampling noise).
            let plan = sinkhorn(&xs, &ys, &cost, 1e-8, 100_000).unwrap();
            let cm = cost_matrix(&xs, &ys, &cost);
            costs.push(plan.transport_cost(&cm));
        }
        assert!(costs[0] >= costs[1] && costs[1] >= costs[2]);
        assert!(costs[2] >= exact_cost - 1e-9);
    }
}
