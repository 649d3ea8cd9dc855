//! Generate samples from a trained field and score them: integrate source
//! points through the learned flow (fixed-step Euler and adaptive
//! Dormand-Prince), then compute transport and fidelity/diversity metrics
//! against fresh target samples.

use flowmatch::bench;
use flowmatch::coupling::CostSpec;
use flowmatch::metrics::{self, NpeConfig, SolverConfig};
use flowmatch::ode;
use flowmatch::rng;
use flowmatch::toydata::{sample, SampleBatch};
use flowmatch::trainer::{self, Strategy, TrainConfig};

fn main() -> flowmatch::Result<()> {
    let task = bench::preset("circular-mog")?;
    let config = TrainConfig {
        strategy: Strategy::OtcfmExact,
        cost: CostSpec::squared_euclidean(0.4),
        batch_size: 48,
        iterations: 8000,
        lr: 1e-3,
        seed: 5,
        source: task.source.clone(),
        target: task.target.clone(),
        checkpoint_every: 0,
        log_every: 2000,
        normalize_weights: false,
        hidden_dims: None,
        zero_final_init: false,
    };
    let (net, _) = trainer::train(&config, None)?;

    let n = 1024;
    let mut rng = rng::stream(99, "eval");
    let x0 = sample(&task.source, n, &mut rng)?;
    let real = sample(&task.target, n, &mut rng)?;

    // Euler endpoints come from one batched integration.
    let (euler_end, _) = ode::integrate_euler_batch(&net, x0.points.view(), 100)?;
    let fake = SampleBatch::new(euler_end, 0);

    // Dormand-Prince adapts its steps per trajectory; compare one point.
    let dp = ode::integrate_dopri5(&net, x0.points.row(0), 1e-8, 1e-8)?;
    let adaptive = dp.adaptive.as_ref().expect("dopri5 records step stats");
    println!(
        "trajectory 0: euler ends at {:?}, dopri5 at {:?} ({} accepted / {} rejected steps)",
        fake.row(0).to_vec(),
        dp.endpoint().to_vec(),
        adaptive.accepted,
        adaptive.rejected,
    );

    let report = metrics::MetricsReport::from_batches(&real, &fake, None, 5, &mut rng)?;
    println!("\nW2^2(generated, target) = {:.4}", report.w2_squared);
    println!(
        "precision {:.3}  recall {:.3}  density {:.3}  coverage {:.3}",
        report.precision, report.recall, report.density, report.coverage
    );

    // Path straightness: mean path energy normalized by the true
    // source-to-target transport cost.
    let npe = metrics::npe(
        &net,
        &task.source,
        &task.target,
        &NpeConfig { solver: SolverConfig::Euler { steps: 100 }, ..Default::default() },
        &mut rng,
    )?;
    println!("NPE = {:.4} (mean path energy {:.4})", npe.npe, npe.mean_energy);
    Ok(())
}
