use flowmatch::bench::{self, MethodSpec};
use flowmatch::coupling::{CostKind, CostSpec};
use flowmatch::metrics::{mean_path_energy, npe_value, SolverConfig};
use flowmatch::diagnostics::verify_pushforward;
use flowmatch::rng;
use flowmatch::toydata::Distribution2DSpec;
use flowmatch::trainer::{train, Strategy, TrainConfig};

fn run(label: &str, cfg: &TrainConfig, b: &bench::BenchmarkSpec, w2_ref: f64) {
    let t0 = std::time::Instant::now();
    let (net, _) = train(cfg, None).unwrap();
    let solver = SolverConfig::Euler { steps: 100 };
    let mut eval_rng = rng::stream(cfg.seed, &format!("bench-eval-{label}"));
    let w2 =
        verify_pushforward(&net, &b.source, &b.target, b.eval_n, solver, &mut eval_rng).unwrap();
    let mut npe_rng = rng::stream(cfg.seed, &format!("bench-npe-{label}"));
    let (energy, _) = mean_path_energy(&net, &b.source, 512, solver, &mut npe_rng).unwrap();
    let npe = npe_value(energy, w2_ref, false).unwrap();
    println!(
        "{label:<16} seed {} w2 {:.4} npe {:.3} ({}s)",
        cfg.seed,
        w2,
        npe,
        t0.elapsed().as_secs()
    );
}

fn main() {
    let mut b = bench::preset("circular-mog").unwrap();
    b.name = "mog-half-norm".into();
    b.source = Distribution2DSpec::CircularMog { count: 16, radius: 0.5, std: 0.05 };
    b.target = Distribution2DSpec::GaussiansK { count: 5, radius: 1.0, std: 0.05 };
    let w2_ref = bench::benchmark_reference_w2(&b).unwrap();
    println!("-- {} (w2_ref {w2_ref:.4})", b.name);
    for seed in [1, 2] {
        let cfg = TrainConfig {
            strategy: Strategy::Wcfm,
            cost: CostSpec { kind: CostKind::Euclidean, epsilon: 0.2 },
            batch_size: 48,
            iterations: 60_000,
            lr: 1e-3,
            seed,
            source: b.source.clone(),
            target: b.target.clone(),
            checkpoint_every: 0,
            log_every: 10_000,
            normalize_weights: true,
            hidden_dims: None,
            zero_final_init: false,
        };
        run("wcfm0.2-norm", &cfg, &b, w2_ref);
    }

    let mut b32 = b.clone();
    b32.name = "mog32-half".into();
    b32.source = Distribution2DSpec::CircularMog { count: 32, radius: 0.5, std: 0.05 };
    let w2_ref32 = bench::benchmark_reference_w2(&b32).unwrap();
    println!("-- {} (w2_ref {w2_ref32:.4})", b32.name);
    for m in [MethodSpec::otcfm(), MethodSpec::wcfm(0.2), MethodSpec::icfm()] {
        for seed in [1, 2] {
            let cell = bench::run_cell(&b32, &m, seed, w2_ref32).unwrap();
            println!("{:<16} seed {seed} w2 {:.4} npe {:.3}", m.label, cell.w2_squared, cell.npe);
        }
    }
}
