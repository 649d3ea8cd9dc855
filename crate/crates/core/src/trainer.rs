//! The CFM training loop: draw endpoint batches, pair them under a
//! strategy, interpolate along the straight path, and take Adam steps on
//! the weighted squared-residual loss.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    self, sinkhorn, CostSpec, OtMode, WeightedPairBatch,
};
use crate::error::{Error, Result};
use crate::net::{adam_step, AdamConfig, AdamState, NetArch, ParamGrads, VectorFieldNet};
use crate::rng::{self, Rng};
use crate::toydata::{sample, Distribution2DSpec, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Independent pairing, unit weights.
    Icfm,
    /// Independent pairing, Gibbs-kernel weights `exp(-c(x,y)/eps)`.
    Wcfm,
    /// Exact minibatch OT pairing.
    OtcfmExact,
    /// Entropic minibatch OT: pairs drawn from the Sinkhorn plan.
    OtcfmSinkhorn,
}

impl Strategy {
    pub fn needs_epsilon(&self) -> bool {
        matches!(self, Strategy::Wcfm | Strategy::OtcfmSinkhorn)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Icfm => "icfm",
            Strategy::Wcfm => "wcfm",
            Strategy::OtcfmExact => "otcfm_exact",
            Strategy::OtcfmSinkhorn => "otcfm_sinkhorn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub cost: CostSpec,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub seed: u64,
    pub source: Distribution2DSpec,
    pub target: Distribution2DSpec,
    /// Checkpoint every this many steps; 0 disables scheduled checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Log a CSV row every this many steps.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Divide batch weights by their mean (optimizer-stability aid at
    /// small epsilon; changes effective step size only).
    #[serde(default)]
    pub normalize_weights: bool,
    /// Hidden layer widths; defaults to two layers of 64.
    #[serde(default)]
    pub hidden_dims: Option<Vec<usize>>,
    /// Zero-initialize the final layer so the initial field is zero.
    #[serde(default)]
    pub zero_final_init: bool,
}

fn default_log_every() -> u64 {
    100
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.strategy.needs_epsilon() && !(self.cost.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "strategy {} requires epsilon > 0, got {}",
                self.strategy.as_str(),
                self.cost.epsilon
            )));
        }
        self.source.validate()?;
        self.target.validate()?;
        if self.source.dim() != self.target.dim() {
            return Err(Error::Config(format!(
                "source dim {} != target dim {}",
                self.source.dim(),
                self.target.dim()
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> NetArch {
        let d = self.source.dim();
        match &self.hidden_dims {
            Some(h) => NetArch {
                input_dim: d + 1,
                hidden_dims: h.clone(),
                activation: crate::net::Activation::Elu,
            },
            None => NetArch::default_for_dim(d),
        }
    }
}

/// `x_t = (1-t)x + t y` and the conditional target `y - x`.
///
/// Computed as `x + t (y - x)` so a degenerate pair (`x = y`) interpolates
/// to exactly `x` at every `t`.
pub fn interpolate(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    t: f64,
) -> (Array1<f64>, Array1<f64>) {
    let target = &y - &x;
    let x_t = &x + &(&target * t);
    (x_t, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    /// Rows at the configured logging cadence (plus the final step).
    pub entries: Vec<LogEntry>,
    /// Every per-step loss, in order.
    pub losses: Vec<f64>,
    /// Checkpoints written during the run.
    pub checkpoint_paths: Vec<PathBuf>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,wallclock_ms\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.step, e.loss, e.wallclock_ms);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Live training state; lets runs be checkpointed and resumed
/// bit-identically.
pub struct TrainState {
    pub net: VectorFieldNet,
    pub adam: AdamState,
    pub rng: Rng,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = rng::stream(config.seed, "init");
        let net = VectorFieldNet::init(config.arch(), config.zero_final_init, &mut init_rng);
        let adam = AdamState::new(AdamConfig::with_lr(config.lr), &net);
        Ok(Self {
            net,
            adam,
            rng: rng::stream(config.seed, "train"),
            step: 0,
        })
    }

    /// Run steps `step+1 ..= until`, appending to `log`. `out_dir`, when
    /// given, receives scheduled checkpoints under `checkpoints/`.
    pub fn run(
        &mut self,
        config: &TrainConfig,
        until: u64,
        log: &mut TrainingLog,
        out_dir: Option<&Path>,
    ) -> Result<()> {
        let started = Instant::now();
        while self.step < until {
            self.step += 1;
            let loss = self.train_step(config)?;
            log.losses.push(loss);
            if !loss.is_finite() {
                let last = log
                    .checkpoint_paths
                    .last()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into());
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at step {}; last good checkpoint: {last}",
                    self.step
                )));
            }
            if self.step % config.log_every == 0 || self.step == until {
                log.entries.push(LogEntry {
                    step: self.step,
                    loss,
                    wallclock_ms: started.elapsed().as_millis() as u64,
                });
            }
            if config.checkpoint_every > 0 && self.step % config.checkpoint_every == 0 {
                if let Some(dir) = out_dir {
                    let ckpt_dir = dir.join("checkpoints");
                    std::fs::create_dir_all(&ckpt_dir)?;
                    let path = ckpt_dir.join(format!("step_{:07}.json", self.step));
                    save_checkpoint(&path, self, config)?;
                    log.checkpoint_paths.push(path);
                }
            }
        }
        Ok(())
    }

    fn train_step(&mut self, config: &TrainConfig) -> Result<f64> {
        let xs = sample(&config.source, config.batch_size, &mut self.rng)?;
        let ys = sample(&config.target, config.batch_size, &mut self.rng)?;
        let pairs = build_pairs(config, &xs, &ys, &mut self.rng)?;
        let (loss, grads) = pair_loss_and_grad(&self.net, &pairs, config.normalize_weights)?;
        if loss.is_finite() {
            adam_step(&mut self.net, &grads, &mut self.adam);
        }
        Ok(loss)
    }
}

fn build_pairs(
    config: &TrainConfig,
    xs: &SampleBatch,
    ys: &SampleBatch,
    rng: &mut Rng,
) -> Result<WeightedPairBatch> {
    match config.strategy {
        Strategy::Icfm => coupling::pair_independent(xs, ys, rng),
        Strategy::Wcfm => coupling::pair_gibbs(xs, ys, &config.cost, rng),
        Strategy::OtcfmExact => {
            coupling::pair_minibatch_ot(xs, ys, OtMode::Exact, &config.cost, rng)
        }
        Strategy::OtcfmSinkhorn => {
            coupling::pair_minibatch_ot(xs, ys, OtMode::Sinkhorn, &config.cost, rng)
        }
    }
}

/// Interpolate a weighted pair batch and evaluate the weighted loss and
/// its gradients.
pub fn pair_loss_and_grad(
    net: &VectorFieldNet,
    pairs: &WeightedPairBatch,
    normalize_weights: bool,
) -> Result<(f64, ParamGrads)> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::Contract("empty pair batch".into()));
    }
    let d = pairs[0].x.len();
    let mut ts = Vec::with_capacity(n);
    let mut x_t = Array2::zeros((n, d));
    let mut targets = Array2::zeros((n, d));
    let mut weights = Vec::with_capacity(n);
    for (i, p) in pairs.iter().enumerate() {
        ts.push(p.t);
        for k in 0..d {
            let target = p.y[k] - p.x[k];
            x_t[[i, k]] = p.x[k] + p.t * target;
            targets[[i, k]] = target;
        }
        weights.push(p.w);
    }
    if normalize_weights {
        let mean = weights.iter().sum::<f64>() / n as f64;
        if !(mean > 0.0) {
            return Err(Error::Underflow(format!(
                "batch weight mean {mean} is not positive; cannot normalize (epsilon too small?)"
            )));
        }
        for w in &mut weights {
            *w /= mean;
        }
    }
    net.loss_and_grad(&ts, x_t.view(), targets.view(), &weights)
}

/// Train from scratch. Writes scheduled checkpoints under
/// `out_dir/checkpoints/` when a directory is given.
pub fn train(
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(VectorFieldNet, TrainingLog)> {
    let mut state = TrainState::new(config)?;
    let mut log = TrainingLog::default();
    state.run(config, config.iterations, &mut log, out_dir)?;
    Ok((state.net, log))
}

/// The dense empirical entropic-OT batch loss
/// `(1/n) sum_ij pi_ij ||v(t_i, (1-t_i)x_i + t_i y_j) - (y_j - x_i)||^2`
/// where `pi` has uniform `1/n` marginals (so each entry is `n` times the
/// probability-plan mass). Diagnostics only; not used for training.
pub fn batch_eot_cfm_loss<F: crate::ode::VectorField>(
    field: &F,
    xs: &SampleBatch,
    ys: &SampleBatch,
    ts: &[f64],
    cost: &CostSpec,
) -> Result<f64> {
    let n = xs.n();
    if n == 0 || ys.n() != n || ts.len() != n {
        return Err(Error::Contract("batch_eot_cfm_loss needs equal nonempty sizes".into()));
    }
    let plan = sinkhorn(xs, ys, cost, 1e-9, 200_000)?;
    let d = xs.dim();
    let mut loss = 0.0;
    // Row i shares t_i and x_i across all j, so the n interpolants can be
    // evaluated in one batched forward pass.
    let mut x_t = Array2::zeros((n, d));
    let mut targets = Array2::zeros((n, d));
    for i in 0..n {
        let t = ts[i];
        let xi = xs.row(i);
        for j in 0..n {
            for k in 0..d {
                let tgt = ys.points[[j, k]] - xi[k];
                targets[[j, k]] = tgt;
                x_t[[j, k]] = xi[k] + t * tgt;
            }
        }
        let v = field.eval_batch(t, x_t.view())?;
        for j in 0..n {
            // Probability mass p = pi_ij / n, so p * r already carries the
            // 1/n prefactor.
            let p = plan.weights[[i, j]];
            let r: f64 = (0..d)
                .map(|k| (v[[j, k]] - targets[[j, k]]).powi(2))
                .sum();
            loss += p * r;
        }
    }
    Ok(loss)
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerParams {
    /// Row-major `(fan_out, fan_in)` weight entries.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointAdam {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
}

/// On-disk checkpoint; JSON with full-precision (shortest round-trip)
/// decimal floats, so save/load is bit-exact.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    arch: NetArch,
    params: Vec<LayerParams>,
    adam_state: CheckpointAdam,
    rng_seed: u64,
    /// ChaCha stream position of the training RNG, for exact resume.
    rng_word_pos: String,
    pub training_config: TrainConfig,
    pub step: u64,
}

fn layers_of(weights: &[Array2<f64>], biases: &[Array1<f64>]) -> Vec<LayerParams> {
    weights
        .iter()
        .zip(biases)
        .map(|(w, b)| LayerParams {
            weights: w.iter().copied().collect(),
            bias: b.to_vec(),
        })
        .collect()
}

fn layers_into(
    layers: &[LayerParams],
    weights: &mut [Array2<f64>],
    biases: &mut [Array1<f64>],
) -> Result<()> {
    if layers.len() != weights.len() {
        return Err(Error::Contract("checkpoint layer count mismatch".into()));
    }
    for (l, layer) in layers.iter().enumerate() {
        if layer.weights.len() != weights[l].len() || layer.bias.len() != biases[l].len() {
            return Err(Error::Contract(format!("checkpoint layer {l} shape mismatch")));
        }
        for (dst, &src) in weights[l].iter_mut().zip(&layer.weights) {
            *dst = src;
        }
        for (dst, &src) in biases[l].iter_mut().zip(&layer.bias) {
            *dst = src;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        arch: state.net.arch.clone(),
        params: layers_of(&state.net.weights, &state.net.biases),
        adam_state: CheckpointAdam {
            step: state.adam.step,
            lr: state.adam.config.lr,
            beta1: state.adam.config.beta1,
            beta2: state.adam.config.beta2,
            eps: state.adam.config.eps,
            m: layers_of(&state.adam.m.weights, &state.adam.m.biases),
            v: layers_of(&state.adam.v.weights, &state.adam.v.biases),
        },
        rng_seed: config.seed,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        training_config: config.clone(),
        step: state.step,
    };
    let json = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let json = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&json)?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
            ckpt.format_version
        )));
    }
    let config = ckpt.training_config.clone();
    config.validate()?;
    if ckpt.arch != config.arch() {
        return Err(Error::Contract("checkpoint arch disagrees with its training config".into()));
    }
    // Rebuild shapes via a throwaway init, then overwrite every value.
    let mut scratch_rng = Rng::seed_from_u64(0);
    let mut net = VectorFieldNet::init(ckpt.arch.clone(), true, &mut scratch_rng);
    layers_into(&ckpt.params, &mut net.weights, &mut net.biases)?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: ckpt.adam_state.lr,
            beta1: ckpt.adam_state.beta1,
            beta2: ckpt.adam_state.beta2,
            eps: ckpt.adam_state.eps,
        },
        &net,
    );
    adam.step = ckpt.adam_state.step;
    layers_into(&ckpt.adam_state.m, &mut adam.m.weights, &mut adam.m.biases)?;
    layers_into(&ckpt.adam_state.v, &mut adam.v.weights, &mut adam.v.biases)?;
    let word_pos: u128 = ckpt
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Contract("invalid rng_word_pos in checkpoint".into()))?;
    let mut rng = rng::stream(ckpt.rng_seed, "train");
    rng.set_word_pos(word_pos);
    Ok((TrainState { net, adam, rng, step: ckpt.step }, config))
}
