//! Evaluation metrics: empirical squared Wasserstein-2 distance,
//! normalized path energy (NPE), the PRDC suite, and KDE grids for
//! contour output.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::coupling::{cost_matrix, solve_assignment_matrix, CostSpec};
use crate::error::{Error, Result};
use crate::ode::{self, VectorField};
use crate::rng::{self, Rng};
use crate::toydata::{sample, Distribution2DSpec, SampleBatch};

/// Empirical squared W2 between uniform empirical measures: the exact
/// squared-Euclidean assignment cost divided by n. If the batches differ
/// in size the larger one is subsampled (seeded).
pub fn w2_squared_empirical(a: &SampleBatch, b: &SampleBatch, rng: &mut Rng) -> Result<f64> {
    if a.n() == 0 || b.n() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Contract("dimension mismatch".into()));
    }
    let n = a.n().min(b.n());
    let a_sub = subsample(a, n, rng);
    let b_sub = subsample(b, n, rng);
    let costs = cost_matrix(&a_sub, &b_sub, &CostSpec::squared_euclidean(1.0));
    let (_, total) = solve_assignment_matrix(&costs)?;
    Ok(total / n as f64)
}

fn subsample(batch: &SampleBatch, n: usize, rng: &mut Rng) -> SampleBatch {
    if batch.n() == n {
        return batch.clone();
    }
    // Partial Fisher-Yates over indices.
    let mut idx: Vec<usize> = (0..batch.n()).collect();
    for i in 0..n {
        let j = i + rng::index(rng, idx.len() - i);
        idx.swap(i, j);
    }
    let mut points = Array2::zeros((n, batch.dim()));
    for (row, &i) in idx[..n].iter().enumerate() {
        points.row_mut(row).assign(&batch.row(i));
    }
    SampleBatch::new(points, batch.seed_tag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum SolverConfig {
    Euler { steps: usize },
    Dopri5 { rtol: f64, atol: f64 },
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Euler { steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpeConfig {
    /// Source samples integrated for the energy estimate.
    pub n_mc: usize,
    pub solver: SolverConfig,
    /// Paired sample size for the reference W2^2(mu, nu).
    pub n_ref: usize,
    pub ref_replicates: usize,
    /// Return the absolute (unnormalized) deviation when the reference is
    /// below 1e-9 instead of erroring; for degenerate source = target
    /// checks only.
    pub allow_degenerate_reference: bool,
}

impl Default for NpeConfig {
    fn default() -> Self {
        Self {
            n_mc: 512,
            solver: SolverConfig::default(),
            n_ref: 2048,
            ref_replicates: 3,
            allow_degenerate_reference: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpeResult {
    pub npe: f64,
    pub mean_energy: f64,
    /// Standard error of the mean energy over integrated samples.
    pub se_energy: f64,
    pub w2_reference: f64,
    pub w2_reference_replicates: Vec<f64>,
    pub n_mc: usize,
}

/// Average path energy of `n_mc` integrated source samples.
pub fn mean_path_energy<F: VectorField>(
    field: &F,
    source: &Distribution2DSpec,
    n_mc: usize,
    solver: SolverConfig,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let x0 = sample(source, n_mc, rng)?;
    let energies: Vec<f64> = match solver {
        SolverConfig::Euler { steps } => {
            let (_, e) = ode::integrate_euler_batch(field, x0.points.view(), steps)?;
            e
        }
        SolverConfig::Dopri5 { rtol, atol } => {
            let mut e = Vec::with_capacity(n_mc);
            for row in x0.points.rows() {
                e.push(ode::integrate_dopri5(field, row, rtol, atol)?.path_energy);
            }
            e
        }
    };
    let mean = energies.iter().sum::<f64>() / n_mc as f64;
    let var = energies.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
        / (n_mc as f64 - 1.0).max(1.0);
    Ok((mean, (var / n_mc as f64).sqrt()))
}

/// Reference W2^2(mu, nu): empirical assignment on `n_ref` fresh paired
/// samples, averaged over replicates.
pub fn reference_w2_squared(
    source: &Distribution2DSpec,
    target: &Distribution2DSpec,
    n_ref: usize,
    replicates: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let a = sample(source, n_ref, rng)?;
        let b = sample(target, n_ref, rng)?;
        out.push(w2_squared_empirical(&a, &b, rng)?);
    }
    Ok(out)
}

/// `NPE = |mean_energy - w2_ref| / w2_ref`, guarded against an
/// ill-conditioned (near-zero) reference.
pub fn npe_value(mean_energy: f64, w2_ref: f64, allow_degenerate: bool) -> Result<f64> {
    if w2_ref < 1e-9 {
        if !allow_degenerate {
            return Err(Error::DegenerateData(format!(
                "reference W2^2 = {w2_ref:.3e} is below 1e-9; NPE is ill-conditioned"
            )));
        }
        // Degenerate bypass: report the raw deviation.
        return Ok((mean_energy - w2_ref).abs());
    }
    Ok((mean_energy - w2_ref).abs() / w2_ref)
}

/// Normalized path energy:
/// `NPE = |E[integral ||v||^2] - W2^2(mu, nu)| / W2^2(mu, nu)`.
pub fn npe<F: VectorField>(
    field: &F,
    source: &Distribution2DSpec,
    target: &Distribution2DSpec,
    config: &NpeConfig,
    rng: &mut Rng,
) -> Result<NpeResult> {
    if config.n_mc < 100 {
        return Err(Error::Contract(format!("n_mc must be >= 100, got {}", config.n_mc)));
    }
    let (mean_energy, se_energy) =
        mean_path_energy(field, source, config.n_mc, config.solver, rng)?;
    let replicates =
        reference_w2_squared(source, target, config.n_ref, config.ref_replicates, rng)?;
    let w2_ref = replicates.iter().sum::<f64>() / replicates.len() as f64;
    let npe = npe_value(mean_energy, w2_ref, config.allow_degenerate_reference)?;
    Ok(NpeResult {
        npe,
        mean_energy,
        se_energy,
        w2_reference: w2_ref,
        w2_reference_replicates: replicates,
        n_mc: config.n_mc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prdc {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

impl Prdc {
    /// Harmonic mean of precision and recall (0 if either is 0).
    pub fn f1(&self) -> f64 {
        if self.precision <= 0.0 || self.recall <= 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

/// kNN-manifold fidelity/diversity metrics over raw coordinates.
///
/// Radii are distances to the k-th nearest neighbor within each set
/// (self excluded). Duplicate points give radius 0; a radius-0 ball
/// contains only exact matches.
pub fn prdc(real: &SampleBatch, fake: &SampleBatch, k: usize) -> Result<Prdc> {
    let (n, m) = (real.n(), fake.n());
    if k < 1 || k >= n.min(m) {
        return Err(Error::Contract(format!(
            "k must satisfy 1 <= k < min(n_real, n_fake) = {}, got {k}",
            n.min(m)
        )));
    }
    if real.dim() != fake.dim() {
        return Err(Error::Contract("dimension mismatch".into()));
    }
    let real_radii = knn_radii(real, k);
    let fake_radii = knn_radii(fake, k);

    let mut precision_hits = 0usize;
    let mut membership_total = 0usize;
    for j in 0..m {
        let fj = fake.row(j);
        let mut inside_any = false;
        for i in 0..n {
            if dist(fj, real.row(i)) <= real_radii[i] {
                inside_any = true;
                membership_total += 1;
            }
        }
        if inside_any {
            precision_hits += 1;
        }
    }
    let mut recall_hits = 0usize;
    let mut coverage_hits = 0usize;
    for i in 0..n {
        let ri = real.row(i);
        if (0..m).any(|j| dist(ri, fake.row(j)) <= fake_radii[j]) {
            recall_hits += 1;
        }
        if (0..m).any(|j| dist(ri, fake.row(j)) <= real_radii[i]) {
            coverage_hits += 1;
        }
    }
    Ok(Prdc {
        precision: precision_hits as f64 / m as f64,
        recall: recall_hits as f64 / n as f64,
        density: membership_total as f64 / (k * m) as f64,
        coverage: coverage_hits as f64 / n as f64,
    })
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance to the k-th nearest neighbor within the batch, self excluded.
fn knn_radii(batch: &SampleBatch, k: usize) -> Vec<f64> {
    let n = batch.n();
    let mut radii = vec![0.0; n];
    let mut d = Vec::with_capacity(n - 1);
    for i in 0..n {
        d.clear();
        for j in 0..n {
            if j != i {
                d.push(dist(batch.row(i), batch.row(j)));
            }
        }
        let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        radii[i] = *kth;
    }
    radii
}

/// Bounds and resolution of a regular 2D evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn cell_area(&self) -> f64 {
        ((self.x_max - self.x_min) / self.nx as f64) * ((self.y_max - self.y_min) / self.ny as f64)
    }

    /// Center of cell `(ix, iy)`.
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let dx = (self.x_max - self.x_min) / self.nx as f64;
        let dy = (self.y_max - self.y_min) / self.ny as f64;
        (
            self.x_min + (ix as f64 + 0.5) * dx,
            self.y_min + (iy as f64 + 0.5) * dy,
        )
    }
}

/// Gaussian kernel density on a regular grid (2D batches), evaluated at
/// cell centers. The values integrate (cell-sum times cell-area) to the
/// Gaussian mass inside the bounds.
pub fn kde_grid(batch: &SampleBatch, bandwidth: f64, grid: &GridSpec) -> Result<Array2<f64>> {
    if batch.n() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if batch.dim() != 2 {
        return Err(Error::Contract("kde_grid supports 2D batches".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Contract(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if grid.nx == 0 || grid.ny == 0 || !(grid.x_max > grid.x_min && grid.y_max > grid.y_min) {
        return Err(Error::Contract("invalid grid spec".into()));
    }
    let n = batch.n() as f64;
    let norm = 1.0 / (n * std::f64::consts::TAU * bandwidth * bandwidth);
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut out = Array2::zeros((grid.nx, grid.ny));
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let (cx, cy) = grid.center(ix, iy);
            let mut s = 0.0;
            for p in batch.points.rows() {
                let dx = cx - p[0];
                let dy = cy - p[1];
                s += (-(dx * dx + dy * dy) * inv2h2).exp();
            }
            out[[ix, iy]] = norm * s;
        }
    }
    Ok(out)
}

/// Full metrics bundle for a generated-vs-real comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub w2_squared: f64,
    pub npe: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
    pub f1: f64,
    pub n_generated: usize,
    pub n_real: usize,
    pub prdc_k: usize,
}

impl MetricsReport {
    pub fn from_batches(
        real: &SampleBatch,
        fake: &SampleBatch,
        npe: Option<f64>,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w2 = w2_squared_empirical(real, fake, rng)?;
        let p = prdc(real, fake, k)?;
        Ok(Self {
            w2_squared: w2,
            npe,
            precision: p.precision,
            recall: p.recall,
            density: p.density,
            coverage: p.coverage,
            f1: p.f1(),
            n_generated: fake.n(),
            n_real: real.n(),
            prdc_k: k,
        })
    }
}
