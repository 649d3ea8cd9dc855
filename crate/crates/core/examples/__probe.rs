use flowmatch::bench::{self, MethodSpec};
use flowmatch::diagnostics::{self, EpsilonScanConfig};
use flowmatch::toydata::Distribution2DSpec;

fn cells(b: &flowmatch::bench::BenchmarkSpec, methods: &[MethodSpec], seeds: &[u64]) {
    let w2_ref = bench::benchmark_reference_w2(b).unwrap();
    println!("-- {} iters {} (w2_ref {w2_ref:.4})", b.name, b.iterations);
    for m in methods {
        for &s in seeds {
            let t0 = std::time::Instant::now();
            let cell = bench::run_cell(b, m, s, w2_ref).unwrap();
            println!(
                "{:<14} seed {s} w2 {:.4} npe {:.3} ({}s)",
                m.label,
                cell.w2_squared,
                cell.npe,
                t0.elapsed().as_secs()
            );
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "mog" {
        let mut b = bench::preset("circular-mog").unwrap();
        b.name = "mog-half".into();
        b.source = Distribution2DSpec::CircularMog { count: 16, radius: 0.5, std: 0.05 };
        b.target = Distribution2DSpec::GaussiansK { count: 5, radius: 1.0, std: 0.05 };
        cells(
            &b,
            &[
                MethodSpec::wcfm(0.2),
                MethodSpec::wcfm(0.4),
                MethodSpec::icfm(),
                MethodSpec::otcfm(),
            ],
            &[1, 2],
        );
        cells(&b, &[MethodSpec::otcfm_small_batch(16, b.batch_size, b.iterations)], &[1]);
        let cfg = EpsilonScanConfig {
            kappa_grid: diagnostics::log_spaced(0.02, 0.25, 12),
            ..Default::default()
        };
        for seed in 1..=3u64 {
            let scan = diagnostics::select_epsilon(&b.source, &b.target, &cfg, seed).unwrap();
            println!(
                "eps-scan seed {seed}: eps {:.4} warn {}",
                scan.selected_epsilon, scan.no_elbow_warning
            );
        }
    } else {
        let mut b = bench::preset("moons").unwrap();
        b.name = "moons-x2.5".into();
        b.source = Distribution2DSpec::GaussiansK { count: 8, radius: 12.5, std: 0.75 };
        b.target = Distribution2DSpec::Moons {
            noise_std: 0.05,
            scale: 7.5,
            center: [1.0 / 3.0, 1.0 / 3.0],
        };
        cells(
            &b,
            &[
                MethodSpec::icfm(),
                MethodSpec::wcfm(2.0),
                MethodSpec::wcfm(10.0),
                MethodSpec::wcfm(4.0),
                MethodSpec::wcfm(6.0),
                MethodSpec::wcfm(8.0),
            ],
            &[1, 2],
        );
    }
}
