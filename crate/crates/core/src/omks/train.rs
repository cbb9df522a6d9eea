use serde::Serialize;

use super::{pa_step, support_term, BilinearModel, KernelModel, UpdateStatus};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::triplets::Triplet;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainStats {
    pub seen: usize,
    pub updates: usize,
    pub satisfied: usize,
    pub skipped: usize,
    /// Mean step size over updates that changed the model.
    pub mean_tau: f64,
    /// Mean of the update denominators over violating triplets.
    pub mean_denominator: f64,
    /// Mean of `(k(p,pos) - k(p,neg))^2` over violating triplets.
    pub mean_gain_coefficient: f64,
    pub support_size: usize,
}

impl TrainStats {
    fn record(&mut self, loss: f64, denominator: f64, gain: f64, tau: f64, updated: bool, skipped: bool) {
        self.seen += 1;
        if updated {
            self.updates += 1;
            self.mean_tau += tau;
        } else if skipped {
            self.skipped += 1;
        } else {
            self.satisfied += 1;
        }
        if loss > 0.0 {
            self.mean_denominator += denominator;
            self.mean_gain_coefficient += gain;
        }
    }

    fn finish(&mut self) {
        if self.updates > 0 {
            self.mean_tau /= self.updates as f64;
        }
        let violating = self.updates + self.skipped;
        if violating > 0 {
            self.mean_denominator /= violating as f64;
            self.mean_gain_coefficient /= violating as f64;
        }
    }
}

fn check_triplets(features: &Matrix, triplets: &[Triplet]) -> Result<()> {
    let n = features.rows();
    if let Some(t) = triplets.iter().find(|t| t.p.max(t.p_pos).max(t.p_neg) >= n) {
        return Err(Error::Data(format!(
            "triplet ({}, {}, {}) indexes past {n} feature rows",
            t.p, t.p_pos, t.p_neg
        )));
    }
    Ok(())
}

/// Single online pass of kernel updates over `triplets`, in order.
///
/// Rows of `features` are the fused vectors addressed by triplet indices.
/// Equivalent to calling [`KernelModel::update`] on each triplet, but keeps
/// the kernel matrix and the current learned-similarity matrix over the
/// videos the stream touches, so each step costs `O(u^2)` in the number of
/// distinct videos instead of `O(|support| * dim)`. Memory is `2 u^2` floats.
pub fn train_omks(model: &mut KernelModel, features: &Matrix, triplets: &[Triplet], margin: f64) -> Result<TrainStats> {
    check_triplets(features, triplets)?;
    if features.cols() != model.dim() {
        return Err(Error::dims("feature width", model.dim(), features.cols()));
    }
    let mut stats = TrainStats::default();
    if triplets.is_empty() {
        stats.support_size = model.support().len();
        return Ok(stats);
    }

    let mut local = vec![usize::MAX; features.rows()];
    let mut members = Vec::new();
    for t in triplets {
        for v in [t.p, t.p_pos, t.p_neg] {
            if local[v] == usize::MAX {
                local[v] = members.len();
                members.push(v);
            }
        }
    }
    let sub = features.select_rows(&members);
    for r in sub.iter_rows() {
        model.check_input(r)?;
    }
    let u = members.len();
    let kernel = *model.kernel();

    let mut gram = Matrix::zeros(u, u);
    for a in 0..u {
        for b in a..u {
            let v = kernel.eval(sub.row(a), sub.row(b));
            gram.set(a, b, v);
            gram.set(b, a, v);
        }
    }
    let mut learned = if model.support().is_empty() {
        gram.clone()
    } else {
        super::naive_batch_score(model, &sub, &sub)?
    };
    let mut pool_index = vec![usize::MAX; u];

    for t in triplets {
        let (a, b, c) = (local[t.p], local[t.p_pos], local[t.p_neg]);
        let s_pos = learned.get(a, b);
        let s_neg = learned.get(a, c);
        let denominator = gram.get(a, a) * (gram.get(b, b) - 2.0 * gram.get(b, c) + gram.get(c, c));
        let out = pa_step(s_pos, s_neg, margin, denominator, gram.get(a, b) - gram.get(a, c), model.aggressiveness());
        let updated = out.status == UpdateStatus::Updated;
        stats.record(
            out.loss,
            out.denominator,
            out.gain_coefficient,
            out.tau,
            updated,
            out.status == UpdateStatus::SkippedDegenerate,
        );
        if !updated {
            continue;
        }
        let mut idx = [0usize; 3];
        for (slot, l) in idx.iter_mut().zip([a, b, c]) {
            if pool_index[l] == usize::MAX {
                pool_index[l] = model.intern(sub.row(l));
            }
            *slot = pool_index[l];
        }
        model.push_support_indices(idx, out.tau);

        let tau = out.tau;
        for x in 0..u {
            let diff = gram.get(x, b) - gram.get(x, c);
            let row = learned.row_mut(x);
            for (y, slot) in row.iter_mut().enumerate() {
                *slot += support_term(tau, gram.get(y, a), diff);
            }
        }
    }
    stats.finish();
    stats.support_size = model.support().len();
    Ok(stats)
}

/// Single online pass of bilinear updates over `triplets`, in order.
pub fn train_oasis(model: &mut BilinearModel, features: &Matrix, triplets: &[Triplet], margin: f64) -> Result<TrainStats> {
    check_triplets(features, triplets)?;
    let mut stats = TrainStats::default();
    for t in triplets {
        let out = model.update(features.row(t.p), features.row(t.p_pos), features.row(t.p_neg), margin)?;
        stats.record(out.loss, 0.0, 0.0, out.tau, out.updated, out.skipped);
    }
    stats.finish();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Matrix, Vec<Triplet>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let features = Matrix::new(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let triplets = (0..80)
            .map(|_| {
                let p = rng.random_range(0..n);
                let pos = (p + 1 + rng.random_range(0..n - 1)) % n;
                let mut neg = rng.random_range(0..n);
                while neg == p || neg == pos {
                    neg = rng.random_range(0..n);
                }
                Triplet {
                    anchor: p,
                    p,
                    p_pos: pos,
                    p_neg: neg,
                    mirrored: false,
                }
            })
            .collect();
        (features, triplets)
    }

    #[test]
    fn cached_trainer_matches_sequential_updates() {
        for kernel in [KernelSpec::rbf(1.0, 0.8), KernelSpec::linear(), KernelSpec::shifted_cosine(), KernelSpec::softmax()] {
            let (features, triplets) = setup(3);
            let mut fast = KernelModel::new(kernel, 0.7, 3, "t").unwrap();
            let mut slow = fast.clone();
            let stats = train_omks(&mut fast, &features, &triplets, 0.2).unwrap();
            for t in &triplets {
                slow.update(features.row(t.p), features.row(t.p_pos), features.row(t.p_neg), 0.2)
                    .unwrap();
            }
            assert_eq!(fast, slow, "{kernel:?}");
            assert!(stats.updates > 0);
            assert_eq!(stats.seen, triplets.len());
            // a second pass starts from a non-empty support set
            train_omks(&mut fast, &features, &triplets[..20], 0.2).unwrap();
            for t in &triplets[..20] {
                slow.update(features.row(t.p), features.row(t.p_pos), features.row(t.p_neg), 0.2)
                    .unwrap();
            }
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn empty_stream_is_a_no_op() {
        let (features, _) = setup(1);
        let mut m = KernelModel::new(KernelSpec::linear(), 1.0, 3, "t").unwrap();
        let before = m.clone();
        let stats = train_omks(&mut m, &features, &[], 0.2).unwrap();
        assert_eq!(m, before);
        assert_eq!(stats.seen, 0);
    }

    #[test]
    fn satisfied_stream_makes_no_updates() {
        let features = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let t = Triplet {
            anchor: 0,
            p: 0,
            p_pos: 1,
            p_neg: 2,
            mirrored: false,
        };
        let mut m = KernelModel::new(KernelSpec::linear(), 1.0, 2, "t").unwrap();
        let stats = train_omks(&mut m, &features, &[t; 10], 0.5).unwrap();
        assert_eq!(stats.updates, 0);
        assert_eq!(stats.satisfied, 10);
        let mut b = BilinearModel::new(2, 1.0, "t").unwrap();
        assert_eq!(train_oasis(&mut b, &features, &[t; 10], 0.5).unwrap().updates, 0);
    }
}
