//! `flowmatch`: seeded, reproducible 2D flow-matching experiments.
//!
//! Every subcommand writes its artifacts under `runs/<run_id>/` together
//! with a `manifest.json` inventory of hashed output files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use flowmatch::bench::{self, MethodSpec};
use flowmatch::coupling::{CostKind, CostSpec};
use flowmatch::diagnostics::{self, EpsilonScanConfig, Prop3Config};
use flowmatch::manifest::{RunDirs, RunManifest};
use flowmatch::metrics::{self, SolverConfig};
use flowmatch::rng;
use flowmatch::toydata::{sample, Distribution2DSpec, SampleBatch};
use flowmatch::trainer::{self, Strategy, TrainConfig};
use flowmatch::{Error, Result};

#[derive(Parser)]
#[command(name = "flowmatch", version, about = "2D flow-matching workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Master seed; all randomness derives from it via tagged streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output root; runs are written under `<out>/<run_id>/`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Fixed reduction order and zeroed wallclock columns, for
    /// byte-identical reruns.
    #[arg(long, default_value_t = true)]
    deterministic: bool,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Integrator for sampling/evaluation.
    #[arg(long, default_value = "euler", value_parser = ["euler", "dopri5"])]
    solver: String,
    /// Euler step count.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Dopri5 relative tolerance.
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    /// Dopri5 absolute tolerance.
    #[arg(long, default_value_t = 1e-6)]
    atol: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        match self.solver.as_str() {
            "dopri5" => SolverConfig::Dopri5 { rtol: self.rtol, atol: self.atol },
            _ => SolverConfig::Euler { steps: self.steps },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a distribution to CSV.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Distribution spec as JSON (e.g. '{"kind":"moons","noise_std":0.05}').
        #[arg(long)]
        dist: String,
        /// Number of points.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Train a vector field on a source -> target task.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Key-value config file (see docs); flags override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["icfm", "wcfm", "otcfm_exact", "otcfm_sinkhorn"])]
        strategy: Option<String>,
        /// Gibbs/Sinkhorn epsilon.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        /// Source distribution JSON (defaults from config file).
        #[arg(long)]
        source: Option<String>,
        /// Target distribution JSON.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        checkpoint_every: u64,
    },
    /// Integrate source samples through a trained field.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Also dump the first N full trajectories to CSV.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
    },
    /// Metrics between two sample CSVs (or a checkpoint and fresh data).
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// "Real" samples CSV.
        #[arg(long)]
        real: PathBuf,
        /// "Generated" samples CSV.
        #[arg(long)]
        fake: PathBuf,
        /// kNN size for PRDC.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Also emit a KDE density grid of the generated samples
        /// (fixed bounds from the real data, this many cells per axis).
        #[arg(long, default_value_t = 0)]
        kde: usize,
        /// KDE bandwidth.
        #[arg(long, default_value_t = 0.2)]
        bandwidth: f64,
    },
    /// Relative-variance epsilon scan with the elbow rule.
    DiagnoseEps {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Smallest kappa on the log grid.
        #[arg(long, default_value_t = 0.02)]
        kappa_min: f64,
        /// Largest kappa on the log grid.
        #[arg(long, default_value_t = 2.0)]
        kappa_max: f64,
        #[arg(long, default_value_t = 12)]
        grid: usize,
        #[arg(long, default_value_t = 10_000)]
        n_mc: usize,
    },
    /// Convergence of the dense entropic batch loss to the weighted loss.
    VerifyProp3 {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        /// Comma-separated batch sizes.
        #[arg(long, default_value = "8,32,128,512", value_delimiter = ',')]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 6)]
        reps: usize,
    },
    /// Train and evaluate a method grid on a named benchmark.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        /// Benchmark name: circular-mog or moons.
        #[arg(long)]
        name: String,
        /// Comma-separated seed list (defaults to 1..=seeds).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Restrict to comma-separated method labels
        /// (icfm, otcfm, otcfm_b16, wcfm).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// W-CFM epsilon sweep (with --methods wcfm), comma-separated.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Override training iterations (full tables use 60000).
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn parse_dist(json: &str) -> Result<Distribution2DSpec> {
    let spec: Distribution2DSpec = serde_json::from_str(json)?;
    spec.validate()?;
    Ok(spec)
}

fn points_csv(batch: &SampleBatch) -> String {
    let d = batch.dim();
    let mut out: String = (0..d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in batch.points.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn read_points_csv(path: &Path) -> Result<SampleBatch> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Contract(format!("{}: line {}: {e}", path.display(), i + 1)))?);
    }
    if rows.is_empty() {
        return Err(Error::Contract(format!("{}: no data rows", path.display())));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract(format!("{}: ragged rows", path.display())));
    }
    let mut points = ndarray::Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        for (k, &v) in r.iter().enumerate() {
            points[[i, k]] = v;
        }
    }
    Ok(SampleBatch::new(points, 0))
}

/// `<command>-<seed>` keeps rerun paths stable for reproduction.
fn run_id(command: &str, seed: u64) -> String {
    format!("{command}-seed{seed}")
}

struct Run {
    dirs: RunDirs,
    manifest: RunManifest,
    started: Instant,
    deterministic: bool,
}

impl Run {
    fn start(common: &CommonArgs, command: &str, config: serde_json::Value) -> Result<Self> {
        let id = run_id(command, common.seed);
        let dirs = RunDirs::create(&common.out, &id)?;
        let manifest = RunManifest::new(&id, command, common.seed, config.clone());
        std::fs::write(dirs.config_path(), serde_json::to_string_pretty(&config)?)?;
        Ok(Self { dirs, manifest, started: Instant::now(), deterministic: common.deterministic })
    }

    fn emit(&mut self, rel: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dirs.root.join(rel), contents)?;
        self.manifest.record_file(&self.dirs.root, rel)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.record_file(&self.dirs.root, "config")?;
        self.manifest.wallclock_ms =
            if self.deterministic { 0 } else { self.started.elapsed().as_millis() as u64 };
        self.manifest.write(&self.dirs.root)?;
        println!("run written to {}", self.dirs.root.display());
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, dist, n } => {
            let spec = parse_dist(&dist)?;
            let config = serde_json::json!({ "dist": spec, "n": n, "seed": common.seed });
            let mut run = Run::start(&common, "gen-data", config)?;
            let batch = sample(&spec, n, &mut rng::stream(common.seed, "data"))?;
            run.emit("csv/samples.csv", &points_csv(&batch))?;
            run.finish()
        }
        Command::Train {
            common,
            config,
            strategy,
            eps,
            batch_size,
            iters,
            lr,
            source,
            target,
            checkpoint_every,
        } => {
            let mut cfg = match &config {
                Some(path) => load_train_config(path)?,
                None => default_train_config(),
            };
            cfg.seed = common.seed;
            if let Some(s) = strategy {
                cfg.strategy = parse_strategy(&s)?;
            }
            if let Some(e) = eps {
                cfg.cost.epsilon = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(i) = iters {
                cfg.iterations = i;
            }
            if let Some(l) = lr {
                cfg.lr = l;
            }
            if let Some(s) = &source {
                cfg.source = parse_dist(s)?;
            }
            if let Some(t) = &target {
                cfg.target = parse_dist(t)?;
            }
            cfg.checkpoint_every = checkpoint_every;
            cfg.validate()?;
            let mut run = Run::start(&common, "train", serde_json::to_value(&cfg)?)?;
            let mut state = trainer::TrainState::new(&cfg)?;
            let mut log = trainer::TrainingLog::default();
            state.run(&cfg, cfg.iterations, &mut log, Some(&run.dirs.root))?;
            let final_ckpt = run.dirs.checkpoints().join("final.json");
            trainer::save_checkpoint(&final_ckpt, &state, &cfg)?;
            run.manifest.record_file(&run.dirs.root, "checkpoints/final.json")?;
            for p in &log.checkpoint_paths {
                let rel = p.strip_prefix(&run.dirs.root).unwrap().to_string_lossy().into_owned();
                run.manifest.record_file(&run.dirs.root, &rel)?;
            }
            let csv = if common.deterministic {
                // Zero the wallclock column for byte-identical reruns.
                let mut out = String::from("step,loss,wallclock_ms\n");
                for e in &log.entries {
                    out.push_str(&format!("{},{},0\n", e.step, e.loss));
                }
                out
            } else {
                log.to_csv()
            };
            run.emit("csv/training_log.csv", &csv)?;
            run.finish()
        }
        Command::Sample { common, solver, checkpoint, n, trajectories } => {
            let (state, cfg) = trainer::load_checkpoint(&checkpoint)?;
            let config = serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "n": n,
                "seed": common.seed,
                "solver": solver.config(),
                "trajectories": trajectories,
            });
            let mut run = Run::start(&common, "sample", config)?;
            let x0 = sample(&cfg.source, n, &mut rng::stream(common.seed, "sample"))?;
            let endpoints = integrate(&state.net, &x0, solver.config())?;
            run.emit("csv/source.csv", &points_csv(&x0))?;
            run.emit("csv/generated.csv", &points_csv(&endpoints))?;
            if trajectories > 0 {
                let m = trajectories.min(n);
                let d = x0.dim();
                let mut csv = format!(
                    "traj_id,step,t,{}\n",
                    (0..d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
                );
                for i in 0..m {
                    let traj = match solver.config() {
                        SolverConfig::Euler { steps } => {
                            flowmatch::ode::integrate_euler(&state.net, x0.points.row(i), steps)?
                        }
                        SolverConfig::Dopri5 { rtol, atol } => flowmatch::ode::integrate_dopri5(
                            &state.net,
                            x0.points.row(i),
                            rtol,
                            atol,
                        )?,
                    };
                    for (step, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
                        let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                        csv.push_str(&format!("{i},{step},{t},{}\n", coords.join(",")));
                    }
                }
                run.emit("csv/trajectories.csv", &csv)?;
            }
            run.finish()
        }
        Command::Eval { common, real, fake, k, kde, bandwidth } => {
            let config = serde_json::json!({
                "real": real.display().to_string(),
                "fake": fake.display().to_string(),
                "k": k,
                "seed": common.seed,
            });
            let mut run = Run::start(&common, "eval", config)?;
            let real_b = read_points_csv(&real)?;
            let fake_b = read_points_csv(&fake)?;
            let report = metrics::MetricsReport::from_batches(
                &real_b,
                &fake_b,
                None,
                k,
                &mut rng::stream(common.seed, "eval"),
            )?;
            run.emit("reports/metrics.json", &serde_json::to_string_pretty(&report)?)?;
            if kde > 0 {
                let pad = 3.0 * bandwidth;
                let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
                let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in real_b.points.rows() {
                    x_min = x_min.min(p[0]);
                    x_max = x_max.max(p[0]);
                    y_min = y_min.min(p[1]);
                    y_max = y_max.max(p[1]);
                }
                let grid = metrics::GridSpec {
                    x_min: x_min - pad,
                    x_max: x_max + pad,
                    y_min: y_min - pad,
                    y_max: y_max + pad,
                    nx: kde,
                    ny: kde,
                };
                let density = metrics::kde_grid(&fake_b, bandwidth, &grid)?;
                let mut csv = String::from("x,y,density\n");
                for ix in 0..grid.nx {
                    for iy in 0..grid.ny {
                        let (cx, cy) = grid.center(ix, iy);
                        csv.push_str(&format!("{cx},{cy},{}\n", density[[ix, iy]]));
                    }
                }
                run.emit("csv/kde.csv", &csv)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            run.finish()
        }
        Command::DiagnoseEps { common, source, target, kappa_min, kappa_max, grid, n_mc } => {
            let src = parse_dist(&source)?;
            let tgt = parse_dist(&target)?;
            let scan_cfg = EpsilonScanConfig {
                kappa_grid: diagnostics::log_spaced(kappa_min, kappa_max, grid),
                n_mc,
                ..Default::default()
            };
            let config = serde_json::json!({
                "source": src, "target": tgt, "seed": common.seed,
                "kappa_min": kappa_min, "kappa_max": kappa_max,
                "grid": grid, "n_mc": n_mc,
            });
            let mut run = Run::start(&common, "diagnose-eps", config)?;
            let scan = diagnostics::select_epsilon(&src, &tgt, &scan_cfg, common.seed)?;
            run.emit("reports/epsilon_scan.json", &serde_json::to_string_pretty(&scan)?)?;
            let mut csv = String::from("kappa,epsilon,rel_variance_f,rel_variance_g,combined\n");
            for (i, &k) in scan.kappa_grid.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    k,
                    k * (scan.d as f64).sqrt(),
                    scan.rel_variance_f[i],
                    scan.rel_variance_g[i],
                    scan.combined[i]
                ));
            }
            run.emit("csv/epsilon_scan.csv", &csv)?;
            println!(
                "selected epsilon {} (kappa {}){}",
                scan.selected_epsilon,
                scan.selected_kappa,
                if scan.no_elbow_warning { " [warning: no elbow; largest grid value]" } else { "" }
            );
            run.finish()
        }
        Command::VerifyProp3 { common, eps, batch_sizes, reps } => {
            let p3 = Prop3Config { batch_sizes, reps, ..Default::default() };
            let config = serde_json::json!({ "eps": eps, "config": p3, "seed": common.seed });
            let mut run = Run::start(&common, "verify-prop3", config)?;
            let net = flowmatch::net::VectorFieldNet::init(
                flowmatch::net::NetArch::default_for_dim(2),
                false,
                &mut rng::stream(common.seed, "prop3-net"),
            );
            let report =
                diagnostics::verify_prop3(&net, &CostSpec::euclidean(eps), &p3, common.seed)?;
            run.emit("csv/prop3_convergence.csv", &report.to_csv())?;
            run.emit("reports/prop3.json", &serde_json::to_string_pretty(&report)?)?;
            print!("{}", report.to_csv());
            run.finish()
        }
        Command::Benchmark { common, name, seeds, methods, eps, iters, batch_size } => {
            let mut bench_spec = bench::preset(&name)?;
            if let Some(i) = iters {
                bench_spec.iterations = i;
            }
            if let Some(b) = batch_size {
                bench_spec.batch_size = b;
            }
            let grid = method_grid(&bench_spec, methods.as_deref(), eps.as_deref())?;
            let seed_list: Vec<u64> = (1..=seeds).collect();
            let config = serde_json::json!({
                "benchmark": bench_spec, "methods": grid, "seeds": seed_list,
            });
            let mut run = Run::start(&common, &format!("benchmark-{name}"), config)?;
            let report = bench::run_benchmark(&bench_spec, &grid, &seed_list)?;
            run.emit("csv/results.csv", &report.to_csv())?;
            run.emit("csv/runs.csv", &report.runs_csv())?;
            run.emit("reports/results.txt", &report.to_text())?;
            run.emit("reports/results.json", &serde_json::to_string_pretty(&report)?)?;
            print!("{}", report.to_text());
            run.finish()
        }
    }
}

fn integrate(
    net: &flowmatch::net::VectorFieldNet,
    x0: &SampleBatch,
    solver: SolverConfig,
) -> Result<SampleBatch> {
    let endpoints = match solver {
        SolverConfig::Euler { steps } => {
            flowmatch::ode::integrate_euler_batch(net, x0.points.view(), steps)?.0
        }
        SolverConfig::Dopri5 { rtol, atol } => {
            let mut out = ndarray::Array2::zeros((x0.n(), x0.dim()));
            for (i, row) in x0.points.rows().into_iter().enumerate() {
                let traj = flowmatch::ode::integrate_dopri5(net, row, rtol, atol)?;
                out.row_mut(i).assign(traj.endpoint());
            }
            out
        }
    };
    Ok(SampleBatch::new(endpoints, x0.seed_tag))
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    match s {
        "icfm" => Ok(Strategy::Icfm),
        "wcfm" => Ok(Strategy::Wcfm),
        "otcfm_exact" => Ok(Strategy::OtcfmExact),
        "otcfm_sinkhorn" => Ok(Strategy::OtcfmSinkhorn),
        other => Err(Error::Config(format!("unknown strategy '{other}'"))),
    }
}

fn default_train_config() -> TrainConfig {
    let b = bench::preset("circular-mog").expect("builtin preset");
    TrainConfig {
        strategy: Strategy::Icfm,
        cost: CostSpec { kind: CostKind::Euclidean, epsilon: 0.4 },
        batch_size: b.batch_size,
        iterations: b.iterations,
        lr: b.lr,
        seed: 0,
        source: b.source,
        target: b.target,
        checkpoint_every: 10_000,
        log_every: 100,
        normalize_weights: false,
        hidden_dims: None,
        zero_final_init: false,
    }
}

/// Plain-text key-value config: one `key = value` per line, `#` comments.
/// Distribution values are the same JSON used by the flags.
fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = default_train_config();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}: line {}: expected key = value", path.display(), lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: String| Error::Config(format!("{}: {key}: {e}", path.display()));
        match key {
            "strategy" => cfg.strategy = parse_strategy(value)?,
            "cost" => {
                cfg.cost.kind = match value {
                    "euclidean" => CostKind::Euclidean,
                    "squared_euclidean" => CostKind::SquaredEuclidean,
                    other => return Err(bad(format!("unknown cost '{other}'"))),
                }
            }
            "eps" => cfg.cost.epsilon = value.parse().map_err(|e| bad(format!("{e}")))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(format!("{e}")))?,
            "iterations" => cfg.iterations = value.parse().map_err(|e| bad(format!("{e}")))?,
            "lr" => cfg.lr = value.parse().map_err(|e| bad(format!("{e}")))?,
            "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "checkpoint_every" => {
                cfg.checkpoint_every = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "log_every" => cfg.log_every = value.parse().map_err(|e| bad(format!("{e}")))?,
            "normalize_weights" => {
                cfg.normalize_weights = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "source" => cfg.source = parse_dist(value)?,
            "target" => cfg.target = parse_dist(value)?,
            other => return Err(Error::Config(format!("{}: unknown key '{other}'", path.display()))),
        }
    }
    Ok(cfg)
}

fn method_grid(
    bench_spec: &bench::BenchmarkSpec,
    methods: Option<&[String]>,
    eps: Option<&[f64]>,
) -> Result<Vec<MethodSpec>> {
    let Some(methods) = methods else {
        return Ok(bench::default_methods(bench_spec));
    };
    let mut grid = Vec::new();
    for m in methods {
        match m.as_str() {
            "icfm" => grid.push(MethodSpec::icfm()),
            "otcfm" => grid.push(MethodSpec::otcfm()),
            "otcfm_b16" => grid.push(MethodSpec::otcfm_small_batch(
                16,
                bench_spec.batch_size,
                bench_spec.iterations,
            )),
            "wcfm" => match eps {
                Some(list) if !list.is_empty() => {
                    grid.extend(list.iter().map(|&e| MethodSpec::wcfm(e)));
                }
                _ => {
                    grid.push(MethodSpec::wcfm(bench_spec.eps_small));
                    grid.push(MethodSpec::wcfm(bench_spec.eps_large));
                }
            },
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
    Ok(grid)
}
