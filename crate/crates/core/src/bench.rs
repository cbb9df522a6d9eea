//! Timing of the blocked batch scorer against the per-pair loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::omks::{batch_score, naive_batch_score, KernelModel};
use crate::simkernel::{KernelKind, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub queries: usize,
    pub candidates: usize,
    pub support: usize,
    pub dim: usize,
    pub kernel: KernelKind,
    pub block: usize,
    pub threads: usize,
    /// Query rows timed with the naive loop; its time is scaled up linearly
    /// to all queries. 0 means all rows.
    pub naive_rows: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            queries: 1000,
            candidates: 1000,
            support: 2000,
            dim: 64,
            kernel: KernelKind::Rbf,
            block: 64,
            threads: 1,
            naive_rows: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub queries: usize,
    pub candidates: usize,
    pub support: usize,
    pub dim: usize,
    pub kernel: KernelKind,
    pub block: usize,
    pub threads: usize,
    pub naive_rows: usize,
    pub naive_seconds: f64,
    pub blocked_seconds: f64,
    pub naive_gflops: f64,
    pub blocked_gflops: f64,
    pub speedup: f64,
    /// Largest difference between the two scorers on the timed rows.
    pub max_abs_diff: f64,
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).expect("shape matches data")
}

/// A model whose support vectors are uniform in `[-1, 1]^dim` with taus in
/// `[0, 1)`.
pub fn random_model(kernel: KernelSpec, support: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<KernelModel> {
    let mut model = KernelModel::new(kernel, 1.0, dim, "random")?;
    for _ in 0..support {
        let t = random_matrix(3, dim, rng);
        model.insert_support(t.row(0), t.row(1), t.row(2), rng.random_range(0.0..1.0))?;
    }
    Ok(model)
}

/// Times both scorers on one random instance. GFLOP/s counts the
/// `2 * m * n * |S|` multiply-adds of the support contraction for both.
pub fn run_bench(config: &BenchConfig) -> Result<BenchRow> {
    if config.queries == 0 || config.candidates == 0 {
        return Err(Error::config("sizes", "query and candidate counts must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kernel = match config.kernel {
        KernelKind::Rbf => KernelSpec::rbf(1.0, (config.dim as f64).sqrt()),
        k => KernelSpec::of_kind(k),
    };
    let model = random_model(kernel, config.support, config.dim, &mut rng)?;
    let queries = random_matrix(config.queries, config.dim, &mut rng);
    let candidates = random_matrix(config.candidates, config.dim, &mut rng);

    let start = Instant::now();
    let blocked = batch_score(&model, &queries, &candidates, config.block, config.threads)?;
    let blocked_seconds = start.elapsed().as_secs_f64();

    let naive_rows = match config.naive_rows {
        0 => config.queries,
        r => r.min(config.queries),
    };
    let sub: Vec<usize> = (0..naive_rows).collect();
    let sub_q = queries.select_rows(&sub);
    let start = Instant::now();
    let naive = naive_batch_score(&model, &sub_q, &candidates)?;
    let naive_seconds = start.elapsed().as_secs_f64() * config.queries as f64 / naive_rows as f64;

    let mut max_abs_diff = 0.0f64;
    for i in 0..naive_rows {
        for (a, b) in naive.row(i).iter().zip(blocked.row(i)) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }
    let flops = 2.0 * config.queries as f64 * config.candidates as f64 * config.support as f64;
    Ok(BenchRow {
        queries: config.queries,
        candidates: config.candidates,
        support: config.support,
        dim: config.dim,
        kernel: config.kernel,
        block: config.block,
        threads: config.threads,
        naive_rows,
        naive_seconds,
        blocked_seconds,
        naive_gflops: flops / naive_seconds / 1e9,
        blocked_gflops: flops / blocked_seconds / 1e9,
        speedup: naive_seconds / blocked_seconds,
        max_abs_diff,
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "queries,candidates,support,dim,kernel,block,threads,naive_rows,naive_seconds,blocked_seconds,naive_gflops,blocked_gflops,speedup,max_abs_diff\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.4},{:.4},{:.3},{:.3e}",
            r.queries,
            r.candidates,
            r.support,
            r.dim,
            r.kernel,
            r.block,
            r.threads,
            r.naive_rows,
            r.naive_seconds,
            r.blocked_seconds,
            r.naive_gflops,
            r.blocked_gflops,
            r.speedup,
            r.max_abs_diff
        );
    }
    out
}

/// Parses `MxNxS` size triples such as `1000x1000x2000`.
pub fn parse_size(spec: &str) -> Result<(usize, usize, usize)> {
    let bad = || Error::config("sizes", format!("`{spec}` is not of the form MxNxS"));
    let parts: Vec<usize> = spec
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [m, n, s] if m > 0 && n > 0 => Ok((m, n, s)),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("1000x1000x2000").unwrap(), (1000, 1000, 2000));
        assert!(parse_size("10x10").is_err());
        assert!(parse_size("0x1x1").is_err());
    }

    #[test]
    fn tiny_bench_agrees() {
        let row = run_bench(&BenchConfig {
            queries: 6,
            candidates: 7,
            support: 9,
            dim: 3,
            naive_rows: 0,
            block: 2,
            ..BenchConfig::default()
        })
        .unwrap();
        assert_eq!(row.max_abs_diff, 0.0);
        assert_eq!(row.naive_rows, 6);
        assert!(bench_csv(&[row]).lines().count() == 2);
    }
}
