//! Batch scoring of many (query, candidate) pairs.
//!
//! The support expansion factors into three kernel matrices: the candidate
//! side `k(c_j, p_s)` scaled by `tau_s` (`n x |S|`), and the query side
//! `k(q_i, pos_s) - k(q_i, neg_s)` (`m x |S|`). Their product over `|S|` plus
//! the base kernel matrix gives every score. Kernel values are computed once
//! per distinct support vector rather than once per pair.
//!
//! The product is tiled over rows, columns and the support axis. Each output
//! entry accumulates support terms in increasing index order, so results do
//! not depend on tile size or thread count and agree bit for bit with the
//! per-pair loop.

use rayon::prelude::*;

use super::{support_term, KernelModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::simkernel::KernelSpec;

fn check_batch(model: &KernelModel, queries: &Matrix, candidates: &Matrix) -> Result<()> {
    for (what, m) in [("queries", queries), ("candidates", candidates)] {
        if m.cols() != model.dim() {
            return Err(Error::dims(format!("{what} width"), model.dim(), m.cols()));
        }
        for r in m.iter_rows() {
            model.kernel().check_vector(r)?;
        }
    }
    Ok(())
}

/// Per-pair reference scorer: `score(query_i, candidate_j)` for every pair.
pub fn naive_batch_score(model: &KernelModel, queries: &Matrix, candidates: &Matrix) -> Result<Matrix> {
    check_batch(model, queries, candidates)?;
    let mut out = Matrix::zeros(queries.rows(), candidates.rows());
    for i in 0..queries.rows() {
        for j in 0..candidates.rows() {
            out.set(i, j, model.score_unchecked(queries.row(i), candidates.row(j)));
        }
    }
    Ok(out)
}

/// `out[i][j] = k(a_i, b_j)`, parallel over rows of `a`.
fn kernel_matrix<B: AsRef<[f64]> + Sync>(kernel: &KernelSpec, a: &Matrix, b: &[B]) -> Matrix {
    let n = b.len();
    let mut out = Matrix::zeros(a.rows(), n);
    if n == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let x = a.row(i);
            for (slot, y) in row.iter_mut().zip(b) {
                *slot = kernel.eval(x, y.as_ref());
            }
        });
    out
}

/// Blocked, multithreaded equivalent of [`naive_batch_score`].
///
/// `block` is the tile edge; `threads` sizes a dedicated worker pool.
pub fn batch_score(
    model: &KernelModel,
    queries: &Matrix,
    candidates: &Matrix,
    block: usize,
    threads: usize,
) -> Result<Matrix> {
    if block == 0 {
        return Err(Error::config("block", "must be at least 1"));
    }
    if threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    check_batch(model, queries, candidates)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    Ok(pool.install(|| blocked(model, queries, candidates, block)))
}

fn blocked(model: &KernelModel, queries: &Matrix, candidates: &Matrix, block: usize) -> Matrix {
    let kernel = model.kernel();
    let support = model.support();
    let (m, n, s) = (queries.rows(), candidates.rows(), support.len());

    let mut out = kernel_matrix(kernel, queries, candidates.iter_rows().collect::<Vec<_>>().as_slice());
    if s == 0 || m == 0 || n == 0 {
        return out;
    }
    let q_pool = kernel_matrix(kernel, queries, model.vectors());
    let c_pool = kernel_matrix(kernel, candidates, model.vectors());

    // query side: k(q_i, pos_s) - k(q_i, neg_s)
    let mut qd = Matrix::zeros(m, s);
    qd.as_mut_slice()
        .par_chunks_mut(s)
        .enumerate()
        .for_each(|(i, row)| {
            let kq = q_pool.row(i);
            for (slot, e) in row.iter_mut().zip(support) {
                *slot = kq[e.pos] - kq[e.neg];
            }
        });
    // candidate side: tau_s * k(c_j, p_s)
    let mut cb = Matrix::zeros(n, s);
    cb.as_mut_slice()
        .par_chunks_mut(s)
        .enumerate()
        .for_each(|(j, row)| {
            let kc = c_pool.row(j);
            for (slot, e) in row.iter_mut().zip(support) {
                *slot = support_term(e.tau, kc[e.p], 1.0);
            }
        });

    out.as_mut_slice()
        .par_chunks_mut(block * n)
        .enumerate()
        .for_each(|(tile, out_rows)| {
            let i0 = tile * block;
            let rows = out_rows.len() / n;
            for j0 in (0..n).step_by(block) {
                let j1 = (j0 + block).min(n);
                for k0 in (0..s).step_by(block) {
                    let k1 = (k0 + block).min(s);
                    for r in 0..rows {
                        let d = &qd.row(i0 + r)[k0..k1];
                        let o = &mut out_rows[r * n..(r + 1) * n];
                        accumulate_tile(o, d, &cb, j0, j1, k0, k1);
                    }
                }
            }
        });
    out
}

/// `o[j] += sum_{k in k0..k1} cb[j][k] * d[k - k0]` for `j in j0..j1`,
/// four columns at a time, each column summed in `k` order.
#[inline]
fn accumulate_tile(o: &mut [f64], d: &[f64], cb: &Matrix, j0: usize, j1: usize, k0: usize, k1: usize) {
    let mut j = j0;
    while j + 4 <= j1 {
        let b0 = &cb.row(j)[k0..k1];
        let b1 = &cb.row(j + 1)[k0..k1];
        let b2 = &cb.row(j + 2)[k0..k1];
        let b3 = &cb.row(j + 3)[k0..k1];
        let (mut a0, mut a1, mut a2, mut a3) = (o[j], o[j + 1], o[j + 2], o[j + 3]);
        for k in 0..d.len() {
            let x = d[k];
            a0 += b0[k] * x;
            a1 += b1[k] * x;
            a2 += b2[k] * x;
            a3 += b3[k] * x;
        }
        o[j] = a0;
        o[j + 1] = a1;
        o[j + 2] = a2;
        o[j + 3] = a3;
        j += 4;
    }
    while j < j1 {
        let b = &cb.row(j)[k0..k1];
        let mut a = o[j];
        for (bk, x) in b.iter().zip(d) {
            a += bk * x;
        }
        o[j] = a;
        j += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(kernel: KernelSpec, dim: usize, support: usize, seed: u64) -> KernelModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = KernelModel::new(kernel, 1.0, dim, "t").unwrap();
        let mut v = || (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        for _ in 0..support {
            let (a, b, c) = (v(), v(), v());
            m.push_support(&a, &b, &c, 0.5);
        }
        m
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn degenerate_blocking_matches_naive() {
        let m = random_model(KernelSpec::rbf(1.0, 1.3), 5, 17, 1);
        let (q, c) = (random_matrix(7, 5, 2), random_matrix(9, 5, 3));
        let naive = naive_batch_score(&m, &q, &c).unwrap();
        assert_eq!(batch_score(&m, &q, &c, 1, 1).unwrap(), naive);
        assert_eq!(batch_score(&m, &q, &c, 3, 2).unwrap(), naive);
    }

    #[test]
    fn empty_support_is_kernel_matrix() {
        let m = KernelModel::new(KernelSpec::shifted_cosine(), 1.0, 4, "t").unwrap();
        let (q, c) = (random_matrix(3, 4, 4), random_matrix(5, 4, 5));
        let out = batch_score(&m, &q, &c, 2, 1).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(out.get(i, j), m.kernel().pairwise(q.row(i), c.row(j)).unwrap());
            }
        }
    }

    #[test]
    fn zero_block_is_config_error() {
        let m = KernelModel::new(KernelSpec::linear(), 1.0, 2, "t").unwrap();
        let q = random_matrix(1, 2, 0);
        assert!(matches!(batch_score(&m, &q, &q, 0, 1), Err(Error::Config { .. })));
        assert!(batch_score(&m, &q, &random_matrix(1, 3, 0), 4, 1).is_err());
    }
}
