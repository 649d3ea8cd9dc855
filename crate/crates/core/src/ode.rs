//! ODE integration of a learned field over t in [0, 1]: fixed-step Euler
//! and an adaptive Dormand-Prince 5(4) pair, with path-energy accounting
//! that reuses the integrator's own field evaluations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::net::VectorFieldNet;

/// A time-dependent vector field `v(t, x)`.
pub trait VectorField {
    fn eval(&self, t: f64, x: ArrayView1<f64>) -> Result<Array1<f64>>;

    /// Row-wise evaluation at a shared time. The default loops `eval`;
    /// implementations may batch as long as rows match exactly.
    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(xs.raw_dim());
        for (i, row) in xs.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.eval(t, row)?);
        }
        Ok(out)
    }
}

impl VectorField for VectorFieldNet {
    fn eval(&self, t: f64, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.forward(t, x)
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ts = vec![t; xs.nrows()];
        self.forward_batch(&ts, xs.view())
    }
}

impl<F> VectorField for F
where
    F: Fn(f64, ArrayView1<f64>) -> Array1<f64>,
{
    fn eval(&self, t: f64, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self(t, x))
    }
}

/// Statistics specific to the adaptive solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptiveStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Field evaluations spent on the initial derivative and the
    /// step-size heuristic (not counted in `Trajectory::nfe`).
    pub nfe_init: usize,
    /// Normalized error estimate of each accepted step (<= 1 by
    /// construction of the acceptance test).
    pub error_norms: Vec<f64>,
}

/// A time-indexed solution path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Strictly increasing, `times[0] = 0`, last = 1.
    pub times: Vec<f64>,
    pub states: Vec<Array1<f64>>,
    /// `(t, ||v(t, x_t)||^2)` at recorded field evaluations.
    pub energy_nodes: Vec<(f64, f64)>,
    /// Accumulated estimate of the path energy integral.
    pub path_energy: f64,
    /// Stage evaluations: `steps` for Euler, `6 * (accepted + rejected)`
    /// for Dopri5 (FSAL: the first stage of a step reuses the previous
    /// step's last evaluation).
    pub nfe: usize,
    pub adaptive: Option<AdaptiveStats>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &Array1<f64> {
        self.states.last().unwrap()
    }
}

/// Trapezoidal quadrature of `||v||^2` over the recorded evaluation
/// times. For left-endpoint node sets (Euler) the final subinterval
/// `[t_last, 1]` uses the last recorded value, so constant fields are
/// integrated exactly.
pub fn path_energy(nodes: &[(f64, f64)]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let mut e = 0.0;
    for w in nodes.windows(2) {
        e += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    let (t_last, v_last) = *nodes.last().unwrap();
    if t_last < 1.0 {
        e += (1.0 - t_last) * v_last;
    }
    e
}

/// Fixed-step forward Euler from t = 0 to 1.
pub fn integrate_euler<F: VectorField>(field: &F, x0: ArrayView1<f64>, steps: usize) -> Result<Trajectory> {
    if steps < 1 {
        return Err(Error::Contract("steps must be >= 1".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.to_owned();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energy_nodes = Vec::with_capacity(steps);
    times.push(0.0);
    states.push(x.clone());
    for k in 0..steps {
        let t = k as f64 * h;
        let v = field.eval(t, x.view())?;
        energy_nodes.push((t, v.dot(&v)));
        x.scaled_add(h, &v);
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite state after Euler step {k}"
            )));
        }
        let t_next = if k + 1 == steps { 1.0 } else { (k + 1) as f64 * h };
        times.push(t_next);
        states.push(x.clone());
    }
    let path_energy = path_energy(&energy_nodes);
    Ok(Trajectory { times, states, energy_nodes, path_energy, nfe: steps, adaptive: None })
}

/// Integrate a whole batch with Euler; row `i` of the result equals an
/// independent integration of `xs.row(i)` (eval_batch must preserve
/// row-wise equality). Returns endpoints and per-row path energies.
pub fn integrate_euler_batch<F: VectorField>(
    field: &F,
    xs: ArrayView2<f64>,
    steps: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if steps < 1 {
        return Err(Error::Contract("steps must be >= 1".into()));
    }
    let h = 1.0 / steps as f64;
    let n = xs.nrows();
    let mut x = xs.to_owned();
    let mut energy = vec![0.0; n];
    let mut prev_sq: Option<Vec<f64>> = None;
    let mut prev_t = 0.0;
    for k in 0..steps {
        let t = k as f64 * h;
        let v = field.eval_batch(t, x.view())?;
        let sq: Vec<f64> = v.rows().into_iter().map(|r| r.dot(&r)).collect();
        if let Some(p) = &prev_sq {
            for i in 0..n {
                energy[i] += 0.5 * (p[i] + sq[i]) * (t - prev_t);
            }
        }
        x.scaled_add(h, &v);
        prev_t = t;
        prev_sq = Some(sq);
    }
    if let Some(p) = &prev_sq {
        for i in 0..n {
            energy[i] += (1.0 - prev_t) * p[i];
        }
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite state in batched Euler".into()));
    }
    Ok((x, energy))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// 5th-order weights (row 7 of A; FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Error coefficients `b5 - b4`.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 10.0;
/// PI controller exponents (Hairer's dopri5 defaults).
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - PI_BETA * 0.75;
const H_MIN: f64 = 1e-14;

/// Adaptive Dormand-Prince 5(4) from t = 0 to 1 with PI step control.
pub fn integrate_dopri5<F: VectorField>(
    field: &F,
    x0: ArrayView1<f64>,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory> {
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::Contract(format!("tolerances must be > 0, got rtol={rtol} atol={atol}")));
    }
    let d = x0.len();
    let mut t = 0.0;
    let mut x = x0.to_owned();
    let mut k1 = field.eval(t, x.view())?;

    // Hairer's initial step heuristic (one extra evaluation).
    let sc = |xa: &Array1<f64>, xb: &Array1<f64>| -> Vec<f64> {
        (0..d).map(|i| atol + rtol * xa[i].abs().max(xb[i].abs())).collect()
    };
    let scale = sc(&x, &x);
    let d0 = rms(&x, &scale);
    let d1 = rms(&k1, &scale);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x_probe = &x + &(&k1 * h);
    let f_probe = field.eval(t + h, x_probe.view())?;
    let d2 = rms(&(&f_probe - &k1), &scale) / h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    h = (100.0 * h).min(h1).min(1.0);
    let nfe_init = 2;

    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut energy_nodes = vec![(0.0, k1.dot(&k1))];
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut error_norms = Vec::new();
    let mut err_old: f64 = 1e-4;

    while t < 1.0 {
        if h < H_MIN {
            return Err(Error::Stiffness(format!(
                "step size underflow at t = {t} (h = {h:.3e})"
            )));
        }
        h = h.min(1.0 - t);
        let mut k = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s - 1][j];
                if a != 0.0 {
                    xs.scaled_add(h * a, kj);
                }
            }
            k.push(field.eval(t + C[s] * h, xs.view())?);
        }
        // Stage 7 input is the 5th-order solution itself.
        let x_new = {
            let mut xn = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if B5[j] != 0.0 {
                    xn.scaled_add(h * B5[j], kj);
                }
            }
            xn
        };
        if x_new.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite state during Dopri5 step at t = {t}"
            )));
        }
        let mut err_sq = 0.0;
        for i in 0..d {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += E[j] * kj[i];
                }
            }
            e *= h;
            let s = atol + rtol * x[i].abs().max(x_new[i].abs());
            err_sq += (e / s) * (e / s);
        }
        let err = (err_sq / d as f64).sqrt();

        if err <= 1.0 {
            accepted += 1;
            error_norms.push(err);
            t += h;
            // Snap the final node exactly onto 1.
            if 1.0 - t < H_MIN {
                t = 1.0;
            }
            x = x_new;
            k1 = k.pop().unwrap(); // FSAL: k7 = v(t + h, x_new)
            times.push(t);
            states.push(x.clone());
            energy_nodes.push((t, k1.dot(&k1)));
            let factor = (SAFETY * err.max(1e-10).powf(-PI_ALPHA) * err_old.powf(PI_BETA))
                .clamp(FACTOR_MIN, FACTOR_MAX);
            err_old = err.max(1e-4);
            h *= factor;
        } else {
            rejected += 1;
            let factor = (SAFETY * err.powf(-0.2)).clamp(FACTOR_MIN, 1.0);
            h *= factor;
        }
    }

    let path_energy = path_energy(&energy_nodes);
    Ok(Trajectory {
        times,
        states,
        energy_nodes,
        path_energy,
        nfe: 6 * (accepted + rejected),
        adaptive: Some(AdaptiveStats { accepted, rejected, nfe_init, error_norms }),
    })
}

fn rms(v: &Array1<f64>, scale: &[f64]) -> f64 {
    let n = v.len() as f64;
    (v.iter()
        .zip(scale.iter())
        .map(|(a, s)| (a / s) * (a / s))
        .sum::<f64>()
        / n)
        .sqrt()
}
