//! Generators for the 2D source/target distributions used by the
//! benchmarks, plus dataset standardization.

use ndarray::Array2;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Specification of a sampleable distribution.
///
/// The circle-based kinds are 2D; `point_mass` and `isotropic_gaussian`
/// support arbitrary dimension through their parameter vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution2DSpec {
    /// `count` equal-weight Gaussians equally spaced on a circle of radius
    /// `radius`, each with isotropic std `std`. Support concentrates on an
    /// annulus when `std << radius`.
    CircularMog { count: usize, radius: f64, std: f64 },
    /// Same construction as `CircularMog`; kept as a separate kind so
    /// benchmark configs name the classic "k Gaussians" sources directly.
    GaussiansK { count: usize, radius: f64, std: f64 },
    /// Two interleaved half circles (unit construction), optionally
    /// recentered and scaled: `scale * (p - center)`.
    Moons {
        noise_std: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "moons_center")]
        center: [f64; 2],
    },
    /// Uniform on the annulus `r_inner <= ||x|| <= r_outer` (by area).
    AnnulusUniform { r_inner: f64, r_outer: f64 },
    /// Uniform on the circle `||x|| = radius`.
    CircleUniform { radius: f64 },
    /// Degenerate distribution at a fixed point (any dimension).
    PointMass { center: Vec<f64> },
    /// `N(mean, std^2 I)` (any dimension).
    IsotropicGaussian { mean: Vec<f64>, std: f64 },
}

fn one() -> f64 {
    1.0
}

/// Midpoint of the unit moons construction; subtracting it centers the
/// dataset at the origin.
fn moons_center() -> [f64; 2] {
    [0.5, 0.25]
}

impl Distribution2DSpec {
    pub fn dim(&self) -> usize {
        match self {
            Distribution2DSpec::PointMass { center } => center.len(),
            Distribution2DSpec::IsotropicGaussian { mean, .. } => mean.len(),
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            Distribution2DSpec::CircularMog { count, radius, std }
            | Distribution2DSpec::GaussiansK { count, radius, std } => {
                if *count < 1 {
                    return bad(format!("component count must be >= 1, got {count}"));
                }
                if !(*radius > 0.0) {
                    return bad(format!("radius must be > 0, got {radius}"));
                }
                if !(*std > 0.0) {
                    return bad(format!("component std must be > 0, got {std}"));
                }
            }
            Distribution2DSpec::Moons { noise_std, scale, .. } => {
                if !(*noise_std >= 0.0) {
                    return bad(format!("noise std must be >= 0, got {noise_std}"));
                }
                if !(*scale > 0.0) {
                    return bad(format!("scale must be > 0, got {scale}"));
                }
            }
            Distribution2DSpec::AnnulusUniform { r_inner, r_outer } => {
                if !(*r_inner >= 0.0 && *r_outer > *r_inner) {
                    return bad(format!(
                        "annulus needs 0 <= r_inner < r_outer, got [{r_inner}, {r_outer}]"
                    ));
                }
            }
            Distribution2DSpec::CircleUniform { radius } => {
                if !(*radius > 0.0) {
                    return bad(format!("radius must be > 0, got {radius}"));
                }
            }
            Distribution2DSpec::PointMass { center } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return bad("point mass center must be finite and non-empty".into());
                }
            }
            Distribution2DSpec::IsotropicGaussian { mean, std } => {
                if mean.is_empty() || mean.iter().any(|c| !c.is_finite()) {
                    return bad("gaussian mean must be finite and non-empty".into());
                }
                if !(*std >= 0.0) {
                    return bad(format!("gaussian std must be >= 0, got {std}"));
                }
            }
        }
        Ok(())
    }
}

/// An `n x d` batch of points with RNG provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Array2<f64>,
    pub seed_tag: u64,
}

impl SampleBatch {
    pub fn new(points: Array2<f64>, seed_tag: u64) -> Self {
        Self { points, seed_tag }
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.points.row(i)
    }
}

/// Draw `n` i.i.d. samples from `spec`. Identical `(spec, n, rng state)`
/// yields bit-identical output.
pub fn sample(spec: &Distribution2DSpec, n: usize, rng: &mut Rng) -> Result<SampleBatch> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::Contract("sample count must be >= 1".into()));
    }
    let d = spec.dim();
    let mut points = Array2::zeros((n, d));
    for i in 0..n {
        match spec {
            Distribution2DSpec::CircularMog { count, radius, std }
            | Distribution2DSpec::GaussiansK { count, radius, std } => {
                let k = rng::index(rng, *count);
                let angle = std::f64::consts::TAU * k as f64 / *count as f64;
                points[[i, 0]] = radius * angle.cos() + std * rng::normal(rng);
                points[[i, 1]] = radius * angle.sin() + std * rng::normal(rng);
            }
            Distribution2DSpec::Moons { noise_std, scale, center } => {
                let (x, y) = moons_point(rng, *noise_std);
                points[[i, 0]] = scale * (x - center[0]);
                points[[i, 1]] = scale * (y - center[1]);
            }
            Distribution2DSpec::AnnulusUniform { r_inner, r_outer } => {
                let u = rng::uniform(rng);
                let r = (u * (r_outer * r_outer - r_inner * r_inner) + r_inner * r_inner).sqrt();
                let angle = std::f64::consts::TAU * rng::uniform(rng);
                points[[i, 0]] = r * angle.cos();
                points[[i, 1]] = r * angle.sin();
            }
            Distribution2DSpec::CircleUniform { radius } => {
                let angle = std::f64::consts::TAU * rng::uniform(rng);
                points[[i, 0]] = radius * angle.cos();
                points[[i, 1]] = radius * angle.sin();
            }
            Distribution2DSpec::PointMass { center } => {
                for (j, &c) in center.iter().enumerate() {
                    points[[i, j]] = c;
                }
            }
            Distribution2DSpec::IsotropicGaussian { mean, std } => {
                for (j, &m) in mean.iter().enumerate() {
                    points[[i, j]] = m + std * rng::normal(rng);
                }
            }
        }
    }
    Ok(SampleBatch::new(points, 0))
}

/// One point of the unit two-moons construction: the upper arc is the unit
/// half circle, the lower arc is its reflection shifted by (1, -0.5).
fn moons_point(rng: &mut Rng, noise_std: f64) -> (f64, f64) {
    let lower = rng.next_u64() & 1 == 1;
    let theta = std::f64::consts::PI * rng::uniform(rng);
    let (mut x, mut y) = if lower {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    } else {
        (theta.cos(), theta.sin())
    };
    x += noise_std * rng::normal(rng);
    y += noise_std * rng::normal(rng);
    (x, y)
}

/// Sample the unit two-moons dataset directly.
pub fn two_moons(n: usize, noise_std: f64, rng: &mut Rng) -> Result<SampleBatch> {
    sample(
        &Distribution2DSpec::Moons { noise_std, scale: 1.0, center: [0.0, 0.0] },
        n,
        rng,
    )
}

/// Per-coordinate affine transform estimated by [`standardize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population (1/n) standard deviation per coordinate.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn apply(&self, batch: &SampleBatch) -> SampleBatch {
        let mut points = batch.points.clone();
        for mut row in points.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        SampleBatch::new(points, batch.seed_tag)
    }

    pub fn invert(&self, batch: &SampleBatch) -> SampleBatch {
        let mut points = batch.points.clone();
        for mut row in points.rows_mut() {
            for j in 0..row.len() {
                row[j] = row[j] * self.std[j] + self.mean[j];
            }
        }
        SampleBatch::new(points, batch.seed_tag)
    }
}

/// Shift/scale a batch to per-coordinate mean 0 and population std 1.
pub fn standardize(batch: &SampleBatch) -> Result<(SampleBatch, Standardizer)> {
    let n = batch.n();
    if n < 2 {
        return Err(Error::Contract("standardize needs n >= 2".into()));
    }
    let d = batch.dim();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = batch.points.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        if var.sqrt() <= 1e-14 {
            return Err(Error::DegenerateData(format!(
                "coordinate {j} has zero variance"
            )));
        }
        mean[j] = m;
        std[j] = var.sqrt();
    }
    let tf = Standardizer { mean, std };
    Ok((tf.apply(batch), tf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn point_mass_rows_all_equal() {
        let spec = Distribution2DSpec::PointMass { center: vec![1.0, 2.0] };
        let b = sample(&spec, 3, &mut stream(0, "t")).unwrap();
        for i in 0..3 {
            assert_eq!(b.points[[i, 0]], 1.0);
            assert_eq!(b.points[[i, 1]], 2.0);
        }
    }

    #[test]
    fn circle_uniform_on_circle() {
        let spec = Distribution2DSpec::CircleUniform { radius: 2.0 };
        let n = 10_000;
        let b = sample(&spec, n, &mut stream(1, "t")).unwrap();
        let mut mean = [0.0, 0.0];
        for i in 0..n {
            let r = (b.points[[i, 0]].powi(2) + b.points[[i, 1]].powi(2)).sqrt();
            assert!((r - 2.0).abs() <= 1e-12 * 2.0);
            mean[0] += b.points[[i, 0]];
            mean[1] += b.points[[i, 1]];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        // O(n^{-1/2}) with a generous constant.
        let bound = 8.0 * 2.0 / (n as f64).sqrt();
        assert!(mean[0].abs() < bound && mean[1].abs() < bound);
    }

    #[test]
    fn gaussians_k_second_moment_matches_closed_form() {
        // E||X||^2 = R^2 + d sigma^2 for components centered on a circle.
        let spec = Distribution2DSpec::GaussiansK { count: 8, radius: 8.0, std: 0.1 };
        let n = 100_000;
        let b = sample(&spec, n, &mut stream(2, "t")).unwrap();
        let m2: f64 = (0..n)
            .map(|i| b.points[[i, 0]].powi(2) + b.points[[i, 1]].powi(2))
            .sum::<f64>()
            / n as f64;
        let expected = 64.0 + 2.0 * 0.01;
        assert!((m2 - expected).abs() / expected < 0.01, "m2 = {m2}");
    }

    #[test]
    fn moons_zero_noise_on_arcs() {
        let b = two_moons(2, 0.0, &mut stream(3, "t")).unwrap();
        for i in 0..2 {
            let (x, y) = (b.points[[i, 0]], b.points[[i, 1]]);
            let on_upper = (x * x + y * y - 1.0).abs() < 1e-12 && y >= -1e-12;
            let dxl = x - 1.0;
            let dyl = y - 0.5;
            let on_lower = (dxl * dxl + dyl * dyl - 1.0).abs() < 1e-12 && y <= 0.5 + 1e-12;
            assert!(on_upper || on_lower, "({x}, {y}) off both arcs");
        }
    }

    #[test]
    fn moons_noise_stays_near_arcs() {
        let noise = 0.05;
        let n = 10_000;
        let b = two_moons(n, noise, &mut stream(4, "t")).unwrap();
        let bound = 3.0 * noise * 2f64.sqrt();
        let mut ok = 0usize;
        for i in 0..n {
            let (x, y) = (b.points[[i, 0]], b.points[[i, 1]]);
            let d_upper = ((x * x + y * y).sqrt() - 1.0).abs();
            let r_lower = (((x - 1.0).powi(2) + (y - 0.5).powi(2))).sqrt();
            let d_lower = (r_lower - 1.0).abs();
            if d_upper.min(d_lower) <= bound {
                ok += 1;
            }
        }
        assert!(ok as f64 / n as f64 >= 0.99, "only {ok}/{n} near arcs");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = Distribution2DSpec::CircularMog { count: 16, radius: 4.0, std: 0.2 };
        let a = sample(&spec, 64, &mut stream(9, "data")).unwrap();
        let b = sample(&spec, 64, &mut stream(9, "data")).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn mixture_component_frequencies() {
        let k = 5;
        let spec = Distribution2DSpec::GaussiansK { count: k, radius: 4.0, std: 0.01 };
        let n = 50_000;
        let b = sample(&spec, n, &mut stream(5, "t")).unwrap();
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let angle = b.points[[i, 1]].atan2(b.points[[i, 0]]);
            let idx = ((angle / std::f64::consts::TAU * k as f64).round() as i64)
                .rem_euclid(k as i64) as usize;
            counts[idx] += 1;
        }
        let p = 1.0 / k as f64;
        let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() <= bound);
        }
    }

    #[test]
    fn standardize_two_point_case() {
        let pts = ndarray::array![[0.0, 0.0], [2.0, 2.0]];
        let (out, tf) = standardize(&SampleBatch::new(pts, 0)).unwrap();
        assert_eq!(tf.mean, vec![1.0, 1.0]);
        assert_eq!(tf.std, vec![1.0, 1.0]);
        assert_eq!(out.points, ndarray::array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn standardize_idempotent_and_invertible() {
        let spec = Distribution2DSpec::IsotropicGaussian { mean: vec![3.0, -1.0], std: 2.0 };
        let b = sample(&spec, 500, &mut stream(6, "t")).unwrap();
        let (s1, tf) = standardize(&b).unwrap();
        let (s2, _) = standardize(&s1).unwrap();
        for (a, b) in s1.points.iter().zip(s2.points.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let back = tf.invert(&s1);
        for (a, b) in back.points.iter().zip(b.points.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_rejects_zero_variance() {
        let pts = ndarray::array![[1.0, 0.0], [1.0, 1.0]];
        let err = standardize(&SampleBatch::new(pts, 0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }

    #[test]
    fn invalid_spec_is_config_error() {
        let spec = Distribution2DSpec::CircleUniform { radius: -1.0 };
        let err = sample(&spec, 1, &mut stream(0, "t")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
