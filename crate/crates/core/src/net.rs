//! Time-conditioned velocity network `v(t, x)`: an ELU MLP over the
//! concatenated input `[x, t]`, with hand-written reverse-mode gradients
//! and a bias-corrected Adam optimizer. Everything is f64.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetArch {
    /// `d + 1`: the state vector with the scalar time appended.
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl NetArch {
    /// Two hidden ELU layers of 64 units for `d`-dimensional states.
    pub fn default_for_dim(d: usize) -> Self {
        Self { input_dim: d + 1, hidden_dims: vec![64, 64], activation: Activation::Elu }
    }

    pub fn state_dim(&self) -> usize {
        self.input_dim - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldNet {
    pub arch: NetArch,
    /// Per-layer weight matrices, shape `(fan_out, fan_in)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter-shaped container, used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl VectorFieldNet {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `m` is drawn from `U(-1/sqrt(m), 1/sqrt(m))`. With
    /// `zero_final` the last layer starts at zero so the initial field is
    /// identically zero.
    pub fn init(arch: NetArch, zero_final: bool, rng: &mut Rng) -> Self {
        let dims = layer_dims(&arch);
        let n_layers = dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            let mut b = Array1::zeros(fan_out);
            if !(zero_final && l == n_layers - 1) {
                for v in w.iter_mut() {
                    *v = rng::uniform_in(rng, -bound, bound);
                }
                for v in b.iter_mut() {
                    *v = rng::uniform_in(rng, -bound, bound);
                }
            }
            weights.push(w);
            biases.push(b);
        }
        Self { arch, weights, biases }
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim()
    }

    /// Evaluate `v(t, x)` for a single point.
    pub fn forward(&self, t: f64, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let xs = x.insert_axis(Axis(0));
        let out = self.forward_batch(&[t], xs.view())?;
        Ok(out.row(0).to_owned())
    }

    /// Evaluate `v(t_i, x_i)` for a batch; row `i` of the result matches a
    /// single-point evaluation at `(ts[i], xs.row(i))` exactly.
    pub fn forward_batch(&self, ts: &[f64], xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let acts = self.forward_cached(ts, xs)?;
        Ok(acts.into_iter().last().unwrap())
    }

    /// Forward pass keeping post-activation values of every layer
    /// (index 0 is the network input).
    fn forward_cached(&self, ts: &[f64], xs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let n = xs.nrows();
        let d = self.state_dim();
        if xs.ncols() != d {
            return Err(Error::Contract(format!(
                "state dim mismatch: net expects {d}, got {}",
                xs.ncols()
            )));
        }
        if ts.len() != n {
            return Err(Error::Contract(format!(
                "batch size mismatch: {} times vs {} states",
                ts.len(),
                n
            )));
        }
        let mut input = Array2::zeros((n, d + 1));
        input.slice_mut(ndarray::s![.., ..d]).assign(&xs);
        for i in 0..n {
            input[[i, d]] = ts[i];
        }
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input);
        for l in 0..n_layers {
            let mut z = acts[l].dot(&self.weights[l].t());
            for mut row in z.rows_mut() {
                row += &self.biases[l];
            }
            if l + 1 < n_layers {
                z.mapv_inplace(elu);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Weighted squared-residual loss and its exact gradients:
    ///
    /// `loss = (1/n) sum_i w_i * ||v(t_i, x_i) - target_i||^2`
    pub fn loss_and_grad(
        &self,
        ts: &[f64],
        xs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        weights: &[f64],
    ) -> Result<(f64, ParamGrads)> {
        let n = xs.nrows();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if targets.dim() != (n, self.state_dim()) || weights.len() != n {
            return Err(Error::Contract("target/weight shape mismatch".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0)) {
            return Err(Error::Contract(format!(
                "weight {i} is negative or non-finite: {}",
                weights[i]
            )));
        }
        let acts = self.forward_cached(ts, xs)?;
        let out = acts.last().unwrap();

        let mut loss = 0.0;
        // dL/d out
        let mut delta = Array2::zeros(out.raw_dim());
        for i in 0..n {
            let mut sq = 0.0;
            for j in 0..out.ncols() {
                let r = out[[i, j]] - targets[[i, j]];
                sq += r * r;
                delta[[i, j]] = 2.0 * weights[i] * r / n as f64;
            }
            let term = weights[i] * sq / n as f64;
            if !term.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss term at batch index {i}"
                )));
            }
            loss += term;
        }

        let n_layers = self.weights.len();
        let mut grads = ParamGrads {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        for l in (0..n_layers).rev() {
            // delta is dL/dz_l (post-activation grad already folded in).
            grads.weights[l] = delta.t().dot(&acts[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l]);
                // acts[l] holds elu(z); elu'(z) = 1 for z > 0, elu(z) + 1 otherwise.
                prev.zip_mut_with(&acts[l], |g, &a| {
                    if a <= 0.0 {
                        *g *= a + 1.0;
                    }
                });
                delta = prev;
            }
        }
        Ok((loss, grads))
    }

    /// Flat parameter vector (layer order, weights row-major then bias).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend(self.weights[l].iter());
            out.extend(self.biases[l].iter());
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in self.biases[l].iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        assert_eq!(k, flat.len());
    }
}

fn layer_dims(arch: &NetArch) -> Vec<usize> {
    let mut dims = vec![arch.input_dim];
    dims.extend(&arch.hidden_dims);
    dims.push(arch.state_dim());
    dims
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamGrads,
    pub v: ParamGrads,
}

impl AdamState {
    pub fn new(config: AdamConfig, net: &VectorFieldNet) -> Self {
        let zeros = ParamGrads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(net: &mut VectorFieldNet, grads: &ParamGrads, state: &mut AdamState) {
    state.step += 1;
    let c = &state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
    };
    for l in 0..net.weights.len() {
        for ((p, &g), (m, v)) in net.weights[l]
            .iter_mut()
            .zip(grads.weights[l].iter())
            .zip(state.m.weights[l].iter_mut().zip(state.v.weights[l].iter_mut()))
        {
            update(p, g, m, v);
        }
        for ((p, &g), (m, v)) in net.biases[l]
            .iter_mut()
            .zip(grads.biases[l].iter())
            .zip(state.m.biases[l].iter_mut().zip(state.v.biases[l].iter_mut()))
        {
            update(p, g, m, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    fn tiny_net() -> VectorFieldNet {
        // 1D state, one hidden unit: v(t, x) = w2 * elu(w1x * x + w1t * t + b1) + b2
        let arch = NetArch { input_dim: 2, hidden_dims: vec![1], activation: Activation::Elu };
        VectorFieldNet {
            arch,
            weights: vec![array![[0.5, 0.25]], array![[2.0]]],
            biases: vec![array![0.1], array![-0.3]],
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_field() {
        let mut rng = stream(1, "init");
        let net = VectorFieldNet::init(NetArch::default_for_dim(2), true, &mut rng);
        let out = net.forward(0.3, array![1.5, -2.0].view()).unwrap();
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward() {
        let net = tiny_net();
        // Positive pre-activation: elu is the identity there.
        let x = array![1.0];
        let t = 0.4;
        let z = 0.5 * 1.0 + 0.25 * 0.4 + 0.1; // 0.7
        let expected = 2.0 * z - 0.3;
        let out = net.forward(t, x.view()).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
        // Negative pre-activation exercises the elu branch.
        let x = array![-2.0];
        let z: f64 = 0.5 * -2.0 + 0.25 * 0.4 + 0.1; // -0.8
        let expected = 2.0 * (z.exp() - 1.0) - 0.3;
        let out = net.forward(0.4, x.view()).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn batch_matches_single_evaluations() {
        let mut rng = stream(2, "init");
        let net = VectorFieldNet::init(NetArch::default_for_dim(2), false, &mut rng);
        let mut data = stream(2, "data");
        let n = 17;
        let mut xs = Array2::zeros((n, 2));
        let mut ts = vec![0.0; n];
        for i in 0..n {
            xs[[i, 0]] = crate::rng::normal(&mut data);
            xs[[i, 1]] = crate::rng::normal(&mut data);
            ts[i] = crate::rng::uniform(&mut data);
        }
        let batch = net.forward_batch(&ts, xs.view()).unwrap();
        for i in 0..n {
            let single = net.forward(ts[i], xs.row(i)).unwrap();
            for j in 0..2 {
                assert_eq!(batch[[i, j]], single[j]);
            }
        }
    }

    #[test]
    fn zero_weights_zero_loss_and_grads() {
        let mut rng = stream(3, "init");
        let net = VectorFieldNet::init(NetArch::default_for_dim(2), false, &mut rng);
        let xs = array![[1.0, 2.0], [0.5, -1.0]];
        let targets = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, grads) = net
            .loss_and_grad(&[0.1, 0.9], xs.view(), targets.view(), &[0.0, 0.0])
            .unwrap();
        assert_eq!(loss, 0.0);
        for g in grads.weights.iter().flat_map(|w| w.iter()) {
            assert_eq!(*g, 0.0);
        }
        for g in grads.biases.iter().flat_map(|b| b.iter()) {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn zero_net_hand_gradient() {
        // Single pair, weight 1, all parameters zero: loss = ||target||^2.
        // With z = 0 everywhere only the output bias receives gradient:
        // dL/db2_j = -2 target_j (elu(0) = 0 kills weight grads into layer 2,
        // and the zero second-layer weights kill everything upstream).
        let arch = NetArch { input_dim: 2, hidden_dims: vec![1], activation: Activation::Elu };
        let net = VectorFieldNet {
            arch,
            weights: vec![Array2::zeros((1, 2)), Array2::zeros((1, 1))],
            biases: vec![Array1::zeros(1), Array1::zeros(1)],
        };
        let xs = array![[3.0]];
        let targets = array![[1.5]];
        let (loss, grads) = net
            .loss_and_grad(&[0.2], xs.view(), targets.view(), &[1.0])
            .unwrap();
        assert!((loss - 2.25).abs() < 1e-15);
        assert!((grads.biases[1][0] - (-3.0)).abs() < 1e-15);
        assert_eq!(grads.weights[0], Array2::<f64>::zeros((1, 2)));
        assert_eq!(grads.biases[0], Array1::<f64>::zeros(1));
    }

    /// Central finite differences, the independent oracle for gradients.
    fn fd_grad(
        net: &VectorFieldNet,
        ts: &[f64],
        xs: &Array2<f64>,
        targets: &Array2<f64>,
        ws: &[f64],
        k: usize,
        h: f64,
    ) -> f64 {
        let mut flat = net.flatten_params();
        let mut probe = net.clone();
        flat[k] += h;
        probe.assign_from_flat(&flat);
        let (lp, _) = probe.loss_and_grad(ts, xs.view(), targets.view(), ws).unwrap();
        flat[k] -= 2.0 * h;
        probe.assign_from_flat(&flat);
        let (lm, _) = probe.loss_and_grad(ts, xs.view(), targets.view(), ws).unwrap();
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for trial in 0..20u64 {
            let mut init = stream(100 + trial, "init");
            let arch = NetArch { input_dim: 3, hidden_dims: vec![8, 8], activation: Activation::Elu };
            let net = VectorFieldNet::init(arch, false, &mut init);
            let mut data = stream(200 + trial, "data");
            let n = 6;
            let mut xs = Array2::zeros((n, 2));
            let mut targets = Array2::zeros((n, 2));
            let mut ts = vec![0.0; n];
            let mut ws = vec![0.0; n];
            for i in 0..n {
                for j in 0..2 {
                    xs[[i, j]] = crate::rng::normal(&mut data);
                    targets[[i, j]] = crate::rng::normal(&mut data);
                }
                ts[i] = crate::rng::uniform(&mut data);
                ws[i] = crate::rng::uniform(&mut data) + 0.1;
            }
            let (_, grads) = net
                .loss_and_grad(&ts, xs.view(), targets.view(), &ws)
                .unwrap();
            let mut flat_grads: Vec<f64> = Vec::new();
            for l in 0..grads.weights.len() {
                flat_grads.extend(grads.weights[l].iter());
                flat_grads.extend(grads.biases[l].iter());
            }
            let n_params = flat_grads.len();
            let mut pick = stream(300 + trial, "pick");
            for _ in 0..64 {
                let k = crate::rng::index(&mut pick, n_params);
                let fd = fd_grad(&net, &ts, &xs, &targets, &ws, k, 1e-5);
                let an = flat_grads[k];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "trial {trial} param {k}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn weight_scaling_scales_loss_and_grads_exactly() {
        let mut init = stream(11, "init");
        let net = VectorFieldNet::init(NetArch::default_for_dim(2), false, &mut init);
        let xs = array![[0.3, -0.8], [1.2, 0.1], [-0.4, 0.9]];
        let targets = array![[1.0, 0.5], [-0.2, 0.0], [0.3, -1.0]];
        let ts = [0.25, 0.5, 0.75];
        let ws = [0.7, 1.3, 0.2];
        let k = 3.5;
        let ws_scaled: Vec<f64> = ws.iter().map(|w| w * k).collect();
        let (l1, g1) = net.loss_and_grad(&ts, xs.view(), targets.view(), &ws).unwrap();
        let (l2, g2) = net
            .loss_and_grad(&ts, xs.view(), targets.view(), &ws_scaled)
            .unwrap();
        assert!((l2 - k * l1).abs() / (k * l1).abs() < 1e-12);
        for l in 0..g1.weights.len() {
            for (a, b) in g1.weights[l].iter().zip(g2.weights[l].iter()) {
                assert!((b - k * a).abs() <= 1e-12 * a.abs().max(1e-300) * k.max(1.0));
            }
        }
    }

    #[test]
    fn adam_zero_grad_is_fixed_point() {
        let mut init = stream(12, "init");
        let mut net = VectorFieldNet::init(NetArch::default_for_dim(2), false, &mut init);
        let before = net.flatten_params();
        let zeros = ParamGrads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3), &net);
        adam_step(&mut net, &zeros, &mut state);
        assert_eq!(state.step, 1);
        assert_eq!(net.flatten_params(), before);
    }

    #[test]
    fn adam_first_step_scalar_closed_form() {
        // From zero moments, one step with gradient g moves the parameter by
        // -lr * g / (|g| * sqrt(bc2)/bc2... ) — after bias correction the
        // update is exactly -lr * g / (|g| + eps') with eps' = eps).
        // Derivation: mhat = g, vhat = g^2, so dp = -lr * g / (|g| + eps).
        let arch = NetArch { input_dim: 2, hidden_dims: vec![], activation: Activation::Elu };
        let mut net = VectorFieldNet {
            arch,
            weights: vec![Array2::zeros((1, 2))],
            biases: vec![Array1::zeros(1)],
        };
        let g = 0.37;
        let grads = ParamGrads {
            weights: vec![array![[g, 0.0]]],
            biases: vec![Array1::zeros(1)],
        };
        let cfg = AdamConfig::with_lr(1e-3);
        let mut state = AdamState::new(cfg.clone(), &net);
        adam_step(&mut net, &grads, &mut state);
        let expected = -cfg.lr * g / (g.abs() + cfg.eps);
        assert!((net.weights[0][[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_identical_grads_move_identically() {
        let arch = NetArch { input_dim: 2, hidden_dims: vec![], activation: Activation::Elu };
        let mut net = VectorFieldNet {
            arch,
            weights: vec![array![[0.5, 0.5]]],
            biases: vec![Array1::zeros(1)],
        };
        let grads = ParamGrads {
            weights: vec![array![[0.2, 0.2]]],
            biases: vec![Array1::zeros(1)],
        };
        let mut state = AdamState::new(AdamConfig::with_lr(1e-2), &net);
        for _ in 0..5 {
            adam_step(&mut net, &grads, &mut state);
        }
        assert_eq!(net.weights[0][[0, 0]], net.weights[0][[0, 1]]);
    }
}
