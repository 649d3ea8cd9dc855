//! A miniature version of the 2D benchmark table: train every method on
//! the circular mixture task for a reduced iteration budget and print
//! mean +- std of W2^2 and NPE over seeds.
//!
//! The full-budget table (60k iterations, 5 seeds) is produced by the
//! `flowmatch benchmark` subcommand; this example trades accuracy for a
//! few minutes of runtime.

use flowmatch::bench;

fn main() -> flowmatch::Result<()> {
    let mut task = bench::preset("circular-mog")?;
    task.iterations = 6000;
    let methods = bench::default_methods(&task);
    let report = bench::run_benchmark(&task, &methods, &[1, 2])?;
    print!("{}", report.to_text());
    Ok(())
}
