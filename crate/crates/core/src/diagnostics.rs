//! Epsilon-selection machinery and numerical verification of the
//! marginal-tilting and large-batch-equivalence claims: Monte Carlo tilt
//! densities, relative-variance elbow scans, pushforward checks, and the
//! entropic-batch-loss convergence table.

use serde::{Deserialize, Serialize};

use crate::coupling::{gibbs_weight, CostSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, SolverConfig};
use crate::ode::VectorField;
use crate::rng::{self, Rng};
use crate::toydata::{sample, Distribution2DSpec, SampleBatch};
use crate::trainer::{batch_eot_cfm_loss, interpolate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltSide {
    /// `f_eps` on the source side.
    SourceF,
    /// `g_eps` on the target side.
    TargetG,
}

/// Unnormalized Monte Carlo estimate of a tilt density at a set of
/// evaluation points: `value(z) = (1/n_mc) sum_m exp(-c(z, s_m)/eps)` over
/// samples `s_m` from the opposite marginal.
#[derive(Debug, Clone)]
pub struct TiltDensityEstimate {
    pub side: TiltSide,
    pub eval_points: SampleBatch,
    pub values: Vec<f64>,
    pub n_mc: usize,
    pub epsilon: f64,
    /// `Var / Mean^2` of `values` across evaluation points.
    pub rel_variance: f64,
}

/// `Var(v) / Mean(v)^2` (population variance); exactly invariant to
/// positive rescaling of all values.
pub fn rel_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var / (mean * mean)
}

pub fn estimate_tilt(
    side: TiltSide,
    eval_points: &SampleBatch,
    opposite: &Distribution2DSpec,
    cost: &CostSpec,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<TiltDensityEstimate> {
    if n_mc < 100 {
        return Err(Error::Contract(format!("n_mc must be >= 100, got {n_mc}")));
    }
    if !(cost.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {}", cost.epsilon)));
    }
    // One shared opposite-side sample set across all evaluation points:
    // the relative variance then measures point-to-point variation of the
    // density, not MC noise differences.
    let opp = sample(opposite, n_mc, rng)?;
    let mut values = Vec::with_capacity(eval_points.n());
    for i in 0..eval_points.n() {
        let z = eval_points.row(i);
        let mut acc = 0.0;
        for m in 0..n_mc {
            acc += gibbs_weight(z, opp.row(m), cost);
        }
        values.push(acc / n_mc as f64);
    }
    if values.iter().all(|&v| v < 1e-300) {
        return Err(Error::Underflow(format!(
            "all tilt-density values underflowed at epsilon = {}; increase epsilon",
            cost.epsilon
        )));
    }
    let rv = rel_variance(&values);
    Ok(TiltDensityEstimate {
        side,
        eval_points: eval_points.clone(),
        values,
        n_mc,
        epsilon: cost.epsilon,
        rel_variance: rv,
    })
}

/// Relative-variance curve over a kappa grid (`eps = kappa sqrt(d)`) and
/// the elbow-selected value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonScan {
    pub kappa_grid: Vec<f64>,
    pub d: usize,
    pub rel_variance_f: Vec<f64>,
    pub rel_variance_g: Vec<f64>,
    /// `rel_variance_f + rel_variance_g`, the curve the elbow rule reads.
    pub combined: Vec<f64>,
    pub selected_kappa: f64,
    pub selected_epsilon: f64,
    /// Set when no elbow was found and the largest kappa was returned.
    pub no_elbow_warning: bool,
}

/// Raw elbow rule on a curve: the first index `i >= 1` whose successive
/// relative decrease `(c[i-1] - c[i]) / c[i-1]` lies in `[0, rho)`.
/// A uniformly (near-)zero curve is flat from the start: index 0.
/// Returns `None` when the curve never flattens (rises or keeps dropping
/// by at least `rho`).
pub fn elbow_select(curve: &[f64], rho: f64) -> Option<usize> {
    if curve.iter().all(|&c| c.abs() < 1e-12) {
        return Some(0);
    }
    for i in 1..curve.len() {
        let prev = curve[i - 1];
        if prev <= 0.0 {
            continue;
        }
        let decrease = (prev - curve[i]) / prev;
        if (0.0..rho).contains(&decrease) {
            return Some(i);
        }
    }
    None
}

/// The elbow rule as applied to a measured scan curve: same successive
/// relative decrease test as [`elbow_select`], but a candidate must also
/// sit in the curve's lower half (below the geometric mean of its extreme
/// values). Relative-variance curves often saturate at tiny kappa; without
/// the guard that top plateau reads as a false elbow.
pub fn guarded_elbow(curve: &[f64], rho: f64) -> Option<usize> {
    if curve.iter().all(|&c| c.abs() < 1e-12) {
        return Some(0);
    }
    let max = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-300);
    let midpoint = (max * min).sqrt();
    for i in 1..curve.len() {
        let prev = curve[i - 1];
        if prev <= 0.0 || curve[i] > midpoint {
            continue;
        }
        let decrease = (prev - curve[i]) / prev;
        if (0.0..rho).contains(&decrease) {
            return Some(i);
        }
    }
    None
}

/// Centered 3-point moving average (endpoints average the two available
/// neighbors).
fn smooth3(curve: &[f64]) -> Vec<f64> {
    let n = curve.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(n);
            curve[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub const ELBOW_RHO: f64 = 0.15;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonScanConfig {
    pub kappa_grid: Vec<f64>,
    pub n_mc: usize,
    pub n_eval: usize,
    /// Elbow threshold on the successive relative decrease.
    pub rho: f64,
}

impl Default for EpsilonScanConfig {
    fn default() -> Self {
        Self {
            // log-spaced over two decades around kappa ~ 0.1.
            kappa_grid: log_spaced(0.02, 2.0, 10),
            n_mc: 10_000,
            n_eval: 256,
            rho: ELBOW_RHO,
        }
    }
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let step = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (step * i as f64).exp()).collect()
}

/// Scan the kappa grid, estimating `rel_var(f) + rel_var(g)` per grid
/// point, then select the elbow of the 3-point-smoothed curve. Each grid
/// point uses its own derived RNG stream, so the scan is deterministic
/// given the seed and independent of grid order.
pub fn select_epsilon(
    source: &Distribution2DSpec,
    target: &Distribution2DSpec,
    config: &EpsilonScanConfig,
    seed: u64,
) -> Result<EpsilonScan> {
    if config.kappa_grid.len() < 4 {
        return Err(Error::Config("kappa grid must have at least 4 points".into()));
    }
    if config.kappa_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("kappa grid must be strictly increasing".into()));
    }
    let d = source.dim();
    if d != target.dim() {
        return Err(Error::Config("source and target dimension mismatch".into()));
    }
    let sqrt_d = (d as f64).sqrt();
    let mut rv_f = Vec::with_capacity(config.kappa_grid.len());
    let mut rv_g = Vec::with_capacity(config.kappa_grid.len());
    for (i, &kappa) in config.kappa_grid.iter().enumerate() {
        let cost = CostSpec::euclidean(kappa * sqrt_d);
        let mut grid_rng = rng::stream(seed, &format!("eps-scan-{i}"));
        let eval_f = sample(source, config.n_eval, &mut grid_rng)?;
        let eval_g = sample(target, config.n_eval, &mut grid_rng)?;
        let f = estimate_tilt(TiltSide::SourceF, &eval_f, target, &cost, config.n_mc, &mut grid_rng);
        let g = estimate_tilt(TiltSide::TargetG, &eval_g, source, &cost, config.n_mc, &mut grid_rng);
        match (f, g) {
            (Ok(f), Ok(g)) => {
                rv_f.push(f.rel_variance);
                rv_g.push(g.rel_variance);
            }
            // Catastrophic underflow at a tiny kappa: the point is
            // unusable, which the curve records as +inf (never an elbow).
            (Err(Error::Underflow(_)), _) | (_, Err(Error::Underflow(_))) => {
                rv_f.push(f64::INFINITY);
                rv_g.push(f64::INFINITY);
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let combined: Vec<f64> = rv_f.iter().zip(&rv_g).map(|(a, b)| a + b).collect();
    let finite: Vec<f64> = combined
        .iter()
        .map(|&v| if v.is_finite() { v } else { f64::MAX })
        .collect();
    let smoothed = smooth3(&finite);
    let (idx, warning) = match guarded_elbow(&smoothed, config.rho) {
        Some(i) => (i, false),
        None => (config.kappa_grid.len() - 1, true),
    };
    let selected_kappa = config.kappa_grid[idx];
    Ok(EpsilonScan {
        kappa_grid: config.kappa_grid.clone(),
        d,
        rel_variance_f: rv_f,
        rel_variance_g: rv_g,
        combined,
        selected_kappa,
        selected_epsilon: selected_kappa * sqrt_d,
        no_elbow_warning: warning,
    })
}

/// Integrate `n` source samples through the learned flow and return the
/// empirical squared W2 to `n` fresh target samples — the observable
/// consequence of the pushforward claim when the tilt is negligible, and
/// a measure of tilt-induced bias when it is not.
pub fn verify_pushforward<F: VectorField>(
    field: &F,
    source: &Distribution2DSpec,
    target: &Distribution2DSpec,
    n: usize,
    solver: SolverConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let x0 = sample(source, n, rng)?;
    let endpoints = match solver {
        SolverConfig::Euler { steps } => {
            crate::ode::integrate_euler_batch(field, x0.points.view(), steps)?.0
        }
        SolverConfig::Dopri5 { rtol, atol } => {
            let mut out = ndarray::Array2::zeros((n, x0.dim()));
            for (i, row) in x0.points.rows().into_iter().enumerate() {
                let traj = crate::ode::integrate_dopri5(field, row, rtol, atol)?;
                out.row_mut(i).assign(traj.endpoint());
            }
            out
        }
    };
    let generated = SampleBatch::new(endpoints, x0.seed_tag);
    let real = sample(target, n, rng)?;
    metrics::w2_squared_empirical(&generated, &real, rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop3Config {
    /// No-tilt test bed: by rotation invariance, concentric uniform
    /// circles make both tilt densities constant.
    pub source: Distribution2DSpec,
    pub target: Distribution2DSpec,
    pub batch_sizes: Vec<usize>,
    /// Random batches averaged per batch size.
    pub reps: usize,
    /// Independent pairs for the streaming Z_eps estimate.
    pub z_mc_pairs: usize,
    /// Pairs for the weighted-loss limit estimate (needs field evals).
    pub loss_mc_pairs: usize,
}

impl Default for Prop3Config {
    fn default() -> Self {
        Self {
            source: Distribution2DSpec::CircleUniform { radius: 1.0 },
            target: Distribution2DSpec::CircleUniform { radius: 2.0 },
            batch_sizes: vec![8, 32, 128, 512],
            reps: 6,
            z_mc_pairs: 1_000_000,
            loss_mc_pairs: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Prop3Row {
    pub n: usize,
    pub mean_eot_loss: f64,
    /// `mean_eot_loss / limit`.
    pub mean_ratio: f64,
    /// Standard error of the ratio over repetitions.
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop3Report {
    pub rows: Vec<Prop3Row>,
    /// The weighted-loss limit `L_wcfm / Z_eps = E[w r] / E[w]`.
    pub limit: f64,
    pub z_epsilon: f64,
    pub z_stderr: f64,
    /// Both sides vanished; ratios are meaningless and skipped (NaN).
    pub degenerate_skipped: bool,
}

impl Prop3Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mean_ratio,stderr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.n, r.mean_ratio, r.stderr));
        }
        out
    }
}

/// Convergence of the dense entropic batch loss to the weighted loss:
/// for each batch size `n`, average the batch loss over random batches
/// and report the ratio to the Monte Carlo limit `E[w r] / E[w]`.
pub fn verify_prop3<F: VectorField>(
    field: &F,
    cost: &CostSpec,
    config: &Prop3Config,
    seed: u64,
) -> Result<Prop3Report> {
    if config.batch_sizes.is_empty() || config.reps < 2 {
        return Err(Error::Config("need batch sizes and reps >= 2".into()));
    }
    let d = config.source.dim();

    // Streaming MC for the limit and Z_eps.
    let mut mc_rng = rng::stream(seed, "prop3-mc");
    let mut sum_w = 0.0;
    let mut sum_wr = 0.0;
    const CHUNK: usize = 1024;
    let mut remaining = config.loss_mc_pairs;
    let mut x_t = ndarray::Array2::zeros((CHUNK, d));
    let mut targets = ndarray::Array2::zeros((CHUNK, d));
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let xs = sample(&config.source, m, &mut mc_rng)?;
        let ys = sample(&config.target, m, &mut mc_rng)?;
        let t = rng::uniform(&mut mc_rng);
        let mut ws = Vec::with_capacity(m);
        for i in 0..m {
            ws.push(gibbs_weight(xs.row(i), ys.row(i), cost));
            for k in 0..d {
                let tgt = ys.points[[i, k]] - xs.points[[i, k]];
                targets[[i, k]] = tgt;
                x_t[[i, k]] = xs.points[[i, k]] + t * tgt;
            }
        }
        let v = field.eval_batch(t, x_t.slice(ndarray::s![..m, ..]))?;
        for i in 0..m {
            let r: f64 = (0..d).map(|k| (v[[i, k]] - targets[[i, k]]).powi(2)).sum();
            sum_w += ws[i];
            sum_wr += ws[i] * r;
        }
        remaining -= m;
    }
    if sum_w <= 0.0 {
        return Err(Error::Underflow(
            "all Gibbs weights underflowed in the limit estimate; increase epsilon".into(),
        ));
    }
    let limit = sum_wr / sum_w;

    // Independent streaming Z_eps with standard error (weights only).
    let mut z_rng = rng::stream(seed, "prop3-z");
    let mut zs = 0.0;
    let mut zs2 = 0.0;
    let mut left = config.z_mc_pairs;
    while left > 0 {
        let m = left.min(CHUNK);
        let xs = sample(&config.source, m, &mut z_rng)?;
        let ys = sample(&config.target, m, &mut z_rng)?;
        for i in 0..m {
            let w = gibbs_weight(xs.row(i), ys.row(i), cost);
            zs += w;
            zs2 += w * w;
        }
        left -= m;
    }
    let nz = config.z_mc_pairs as f64;
    let z_eps = zs / nz;
    let z_var = (zs2 / nz - z_eps * z_eps).max(0.0);
    let z_stderr = (z_var / nz).sqrt();

    let degenerate = limit.abs() < 1e-12;
    let mut rows = Vec::with_capacity(config.batch_sizes.len());
    for (bi, &n) in config.batch_sizes.iter().enumerate() {
        let mut rng = rng::stream(seed, &format!("prop3-batch-{bi}"));
        let mut losses = Vec::with_capacity(config.reps);
        for _ in 0..config.reps {
            let xs = sample(&config.source, n, &mut rng)?;
            let ys = sample(&config.target, n, &mut rng)?;
            let ts: Vec<f64> = (0..n).map(|_| rng::uniform(&mut rng)).collect();
            losses.push(batch_eot_cfm_loss(field, &xs, &ys, &ts, cost)?);
        }
        let mean = losses.iter().sum::<f64>() / config.reps as f64;
        let (ratio, stderr) = if degenerate {
            (f64::NAN, f64::NAN)
        } else {
            let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
                / (config.reps as f64 - 1.0);
            (mean / limit, (var / config.reps as f64).sqrt() / limit)
        };
        rows.push(Prop3Row { n, mean_eot_loss: mean, mean_ratio: ratio, stderr });
    }
    Ok(Prop3Report {
        rows,
        limit,
        z_epsilon: z_eps,
        z_stderr,
        degenerate_skipped: degenerate,
    })
}

/// The same convergence table but with exact-assignment plans in place of
/// entropic ones; its limit is the unregularized one, so the ratios stay
/// away from 1. Used as a contrast in the verification suite.
pub fn prop3_exact_plan_ratio<F: VectorField>(
    field: &F,
    cost: &CostSpec,
    config: &Prop3Config,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = rng::stream(seed, "prop3-exact");
    let mut losses = Vec::with_capacity(config.reps);
    for _ in 0..config.reps {
        let xs = sample(&config.source, n, &mut rng)?;
        let ys = sample(&config.target, n, &mut rng)?;
        let (sigma, _) = crate::coupling::solve_assignment(&xs, &ys, cost)?;
        let mut loss = 0.0;
        for i in 0..n {
            let t = rng::uniform(&mut rng);
            let (x_t, target) = interpolate(xs.row(i), ys.row(sigma[i]), t);
            let v = field.eval(t, x_t.view())?;
            let r: f64 = v.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            loss += r / n as f64;
        }
        losses.push(loss);
    }
    let mean = losses.iter().sum::<f64>() / config.reps as f64;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
        / (config.reps as f64 - 1.0);
    Ok((mean, (var / config.reps as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array1, ArrayView1};

    fn point_mass(coords: &[f64]) -> Distribution2DSpec {
        Distribution2DSpec::PointMass { center: coords.to_vec() }
    }

    #[test]
    fn tilt_against_point_mass_is_exact() {
        let eval = SampleBatch::new(array![[0.0, 0.0], [1.0, 1.0], [-2.0, 0.5]], 0);
        let y0 = [3.0, -1.0];
        let cost = CostSpec::euclidean(0.8);
        let est = estimate_tilt(
            TiltSide::SourceF,
            &eval,
            &point_mass(&y0),
            &cost,
            500,
            &mut stream(0, "tilt"),
        )
        .unwrap();
        for (i, &v) in est.values.iter().enumerate() {
            let expected = gibbs_weight(eval.row(i), ArrayView1::from(&y0), &cost);
            assert!((v - expected).abs() < 1e-14, "point {i}: {v} vs {expected}");
        }
    }

    #[test]
    fn tilt_identical_point_masses_has_zero_rel_variance() {
        let eval = SampleBatch::new(array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], 0);
        let est = estimate_tilt(
            TiltSide::TargetG,
            &eval,
            &point_mass(&[0.5, 0.5]),
            &CostSpec::euclidean(1.0),
            200,
            &mut stream(1, "tilt"),
        )
        .unwrap();
        assert_eq!(est.rel_variance, 0.0);
        assert!(est.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tilt_constant_on_circle_against_gaussian() {
        // Rotation invariance: with a rotation-invariant opposite marginal,
        // g is constant on any origin-centered circle.
        let n_eval = 64;
        let mut pts = ndarray::Array2::zeros((n_eval, 2));
        for i in 0..n_eval {
            let a = std::f64::consts::TAU * i as f64 / n_eval as f64;
            pts[[i, 0]] = 2.0 * a.cos();
            pts[[i, 1]] = 2.0 * a.sin();
        }
        let eval = SampleBatch::new(pts, 0);
        let gauss = Distribution2DSpec::IsotropicGaussian { mean: vec![0.0, 0.0], std: 1.0 };
        let est = estimate_tilt(
            TiltSide::TargetG,
            &eval,
            &gauss,
            &CostSpec::euclidean(1.0),
            10_000,
            &mut stream(2, "tilt"),
        )
        .unwrap();
        assert!(est.rel_variance < 1e-2, "rel variance {}", est.rel_variance);
    }

    #[test]
    fn tilt_underflow_at_tiny_epsilon() {
        let eval = SampleBatch::new(array![[0.0, 0.0]], 0);
        let err = estimate_tilt(
            TiltSide::SourceF,
            &eval,
            &point_mass(&[10.0, 0.0]),
            &CostSpec::euclidean(1e-3),
            100,
            &mut stream(3, "tilt"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Underflow(_)));
    }

    #[test]
    fn tilt_stable_under_doubling_n_mc() {
        let gauss = Distribution2DSpec::IsotropicGaussian { mean: vec![0.0, 0.0], std: 1.0 };
        let eval = sample(&gauss, 16, &mut stream(4, "e")).unwrap();
        let cost = CostSpec::euclidean(0.5);
        let a = estimate_tilt(TiltSide::SourceF, &eval, &gauss, &cost, 20_000, &mut stream(5, "a"))
            .unwrap();
        let b = estimate_tilt(TiltSide::SourceF, &eval, &gauss, &cost, 40_000, &mut stream(6, "b"))
            .unwrap();
        // Crude per-point MC standard error bound: values are means of
        // [0,1] terms, so se <= 0.5/sqrt(n_mc).
        let se = 0.5 / (20_000f64).sqrt() + 0.5 / (40_000f64).sqrt();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 2.0 * se, "{x} vs {y}");
        }
    }

    #[test]
    fn rel_variance_scale_invariant() {
        let vals = [0.3, 1.7, 0.9, 2.2, 0.05];
        let scaled: Vec<f64> = vals.iter().map(|v| v * 7.5).collect();
        let a = rel_variance(&vals);
        let b = rel_variance(&scaled);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn elbow_rule_on_synthetic_curve() {
        // Drops steeply twice, then flattens: first successive decrease
        // below 15% happens at index 3 (0.1 -> 0.09 is a 10% drop).
        let curve = [10.0, 1.0, 0.1, 0.09, 0.088];
        assert_eq!(elbow_select(&curve, 0.15), Some(3));
    }

    #[test]
    fn elbow_rule_zero_curve_selects_first() {
        assert_eq!(elbow_select(&[0.0, 0.0, 0.0, 0.0], 0.15), Some(0));
    }

    #[test]
    fn elbow_rule_no_elbow() {
        // Keeps dropping by more than rho everywhere.
        assert_eq!(elbow_select(&[16.0, 8.0, 4.0, 2.0, 1.0], 0.15), None);
        // Rising segments never count as flattening.
        assert_eq!(elbow_select(&[4.0, 2.0, 3.0, 1.0], 0.15), None);
    }

    #[test]
    fn select_epsilon_point_masses_selects_smallest_kappa() {
        let p = point_mass(&[0.0, 0.0]);
        let config = EpsilonScanConfig {
            kappa_grid: vec![0.5, 1.0, 2.0, 4.0],
            n_mc: 200,
            n_eval: 8,
            rho: 0.15,
        };
        let scan = select_epsilon(&p, &p, &config, 0).unwrap();
        assert_eq!(scan.selected_kappa, 0.5);
        assert!(!scan.no_elbow_warning);
        assert!(scan.combined.iter().all(|&c| c == 0.0));
        assert_eq!(scan.selected_epsilon, 0.5 * 2f64.sqrt());
    }

    #[test]
    fn select_epsilon_deterministic() {
        let mog = Distribution2DSpec::CircularMog { count: 4, radius: 2.0, std: 0.2 };
        let g = Distribution2DSpec::GaussiansK { count: 3, radius: 2.0, std: 0.3 };
        let config = EpsilonScanConfig {
            kappa_grid: log_spaced(0.05, 1.0, 6),
            n_mc: 2_000,
            n_eval: 64,
            rho: 0.15,
        };
        let a = select_epsilon(&mog, &g, &config, 9).unwrap();
        let b = select_epsilon(&mog, &g, &config, 9).unwrap();
        assert_eq!(a.combined, b.combined);
        assert_eq!(a.selected_kappa, b.selected_kappa);
    }

    #[test]
    fn log_spaced_grid_is_log_uniform() {
        let g = log_spaced(0.01, 1.0, 5);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.01).abs() < 1e-12);
        assert!((g[4] - 1.0).abs() < 1e-12);
        for w in g.windows(3) {
            assert!((w[1] / w[0] - w[2] / w[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn pushforward_zero_field_identity() {
        let p = point_mass(&[1.0, 2.0]);
        let zero = |_t: f64, _x: ArrayView1<f64>| Array1::from(vec![0.0, 0.0]);
        let w2 = verify_pushforward(
            &zero,
            &p,
            &p,
            32,
            SolverConfig::Euler { steps: 50 },
            &mut stream(7, "pf"),
        )
        .unwrap();
        assert!(w2 < 1e-12, "w2 = {w2}");
    }

    #[test]
    fn pushforward_trained_identity_task() {
        use crate::trainer::{train, Strategy, TrainConfig};
        let p = point_mass(&[0.25, -0.75]);
        let config = TrainConfig {
            strategy: Strategy::Icfm,
            cost: CostSpec::euclidean(1.0),
            batch_size: 8,
            iterations: 100,
            lr: 1e-3,
            seed: 3,
            source: p.clone(),
            target: p.clone(),
            checkpoint_every: 0,
            log_every: 100,
            normalize_weights: false,
            hidden_dims: Some(vec![16]),
            zero_final_init: true,
        };
        let (net, _) = train(&config, None).unwrap();
        let w2 = verify_pushforward(
            &net,
            &p,
            &p,
            16,
            SolverConfig::Euler { steps: 100 },
            &mut stream(8, "pf"),
        )
        .unwrap();
        assert!(w2 < 1e-6, "w2 = {w2}");
    }

    fn small_net(seed: u64) -> crate::net::VectorFieldNet {
        let arch = crate::net::NetArch {
            input_dim: 3,
            hidden_dims: vec![16],
            activation: crate::net::Activation::Elu,
        };
        crate::net::VectorFieldNet::init(arch, false, &mut stream(seed, "net"))
    }

    #[test]
    fn prop3_degenerate_guard() {
        let p = point_mass(&[1.0, 1.0]);
        let zero = |_t: f64, _x: ArrayView1<f64>| Array1::from(vec![0.0, 0.0]);
        let config = Prop3Config {
            source: p.clone(),
            target: p,
            batch_sizes: vec![4, 8],
            reps: 2,
            z_mc_pairs: 1_000,
            loss_mc_pairs: 1_000,
        };
        let report = verify_prop3(&zero, &CostSpec::euclidean(1.0), &config, 0).unwrap();
        assert!(report.degenerate_skipped);
        assert!(report.rows.iter().all(|r| r.mean_ratio.is_nan()));
    }

    #[test]
    fn prop3_constant_cost_exact_equality() {
        // Single-point marginals make every plan the product coupling, and
        // a constant field makes the residual t-independent, so batch loss
        // and limit agree exactly at every n.
        let config = Prop3Config {
            source: point_mass(&[0.0, 0.0]),
            target: point_mass(&[2.0, 1.0]),
            batch_sizes: vec![2, 4, 8],
            reps: 2,
            z_mc_pairs: 1_000,
            loss_mc_pairs: 1_000,
        };
        let field = |_t: f64, _x: ArrayView1<f64>| Array1::from(vec![1.0, -1.0]);
        let report = verify_prop3(&field, &CostSpec::euclidean(1.0), &config, 1).unwrap();
        assert!(!report.degenerate_skipped);
        for row in &report.rows {
            assert!(
                (row.mean_ratio - 1.0).abs() < 1e-10,
                "n = {}: ratio {}",
                row.n,
                row.mean_ratio
            );
        }
    }

    #[test]
    fn prop3_ratio_approaches_one_on_circles() {
        // Scaled-down version of the full convergence check (the full
        // n=512 table runs in the acceptance suite).
        let net = small_net(13);
        let config = Prop3Config {
            batch_sizes: vec![8, 64],
            reps: 8,
            z_mc_pairs: 50_000,
            loss_mc_pairs: 100_000,
            ..Default::default()
        };
        let report = verify_prop3(&net, &CostSpec::euclidean(1.0), &config, 5).unwrap();
        let r8 = (report.rows[0].mean_ratio - 1.0).abs();
        let r64 = (report.rows[1].mean_ratio - 1.0).abs();
        assert!(r64 < r8 + 2.0 * report.rows[1].stderr, "r8 {r8}, r64 {r64}");
        assert!(r64 < 0.25, "r64 = {r64}");
    }

    #[test]
    fn prop3_z_estimate_matches_closed_form_point_masses() {
        // Point masses at distance 3: Z_eps = exp(-3/eps) exactly.
        let config = Prop3Config {
            source: point_mass(&[0.0, 0.0]),
            target: point_mass(&[3.0, 0.0]),
            batch_sizes: vec![2],
            reps: 2,
            z_mc_pairs: 1_000,
            loss_mc_pairs: 1_000,
        };
        let field = |_t: f64, _x: ArrayView1<f64>| Array1::from(vec![1.0, 0.0]);
        let eps = 1.5;
        let report = verify_prop3(&field, &CostSpec::euclidean(eps), &config, 2).unwrap();
        assert!((report.z_epsilon - (-3.0 / eps).exp()).abs() < 1e-14);
        assert_eq!(report.z_stderr, 0.0);
    }
}
