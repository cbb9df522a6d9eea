//! Blocked batch scoring against the per-pair loop.
//!
//!     cargo run --release --example batch_scoring

use vidrel::bench::{bench_csv, run_bench, BenchConfig};

fn main() -> vidrel::Result<()> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = [200, 500]
        .into_iter()
        .map(|m| {
            run_bench(&BenchConfig {
                queries: m,
                candidates: m,
                support: 2 * m,
                threads,
                naive_rows: 20,
                ..BenchConfig::default()
            })
        })
        .collect::<vidrel::Result<Vec<_>>>()?;
    print!("{}", bench_csv(&rows));
    Ok(())
}
