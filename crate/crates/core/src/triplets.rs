//! Training triplets from relevance lists with anchor-point mirroring.
//!
//! For a train anchor `a` with relevance list `L`, the candidate-pair pool is
//! `{a} ∪ L` (restricted to train videos). Any ordered pair of distinct pool
//! members is a valid `(p, p_pos)`; the negative is drawn uniformly from
//! train videos outside the pool.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};

/// Ordered `(p, p_pos, p_neg)` of corpus indices.
///
/// `mirrored` is false when `p` is the source anchor itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub p: usize,
    pub p_pos: usize,
    pub p_neg: usize,
    pub mirrored: bool,
}

impl Triplet {
    pub fn ids<'a>(&self, corpus: &'a Corpus) -> (&'a str, &'a str, &'a str) {
        (corpus.id(self.p), corpus.id(self.p_pos), corpus.id(self.p_neg))
    }
}

/// Swaps `p` and `p_pos` and toggles the provenance flag.
pub fn mirror(t: Triplet) -> Triplet {
    Triplet {
        p: t.p_pos,
        p_pos: t.p,
        mirrored: !t.mirrored,
        ..t
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StreamStats {
    pub anchors: usize,
    pub skipped_anchors: usize,
    pub emitted: usize,
    pub mirrored: usize,
    /// Distinct (anchor, p, p_pos) combinations emitted.
    pub distinct_pairs: usize,
    /// Sum over anchors of the ordered pairs in their pools.
    pub total_pairs: usize,
    /// Fraction of emitted triplets whose anchor and ordered pair had been
    /// emitted before.
    pub repeat_rate: f64,
}

impl StreamStats {
    pub fn pair_coverage(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            self.distinct_pairs as f64 / self.total_pairs as f64
        }
    }
}

struct AnchorPool {
    anchor: usize,
    /// Anchor first, then train members of its list.
    pool: Vec<usize>,
    /// Anchor plus its full list; negatives must avoid all of these.
    excluded: HashSet<usize>,
}

/// Deterministic triplet stream over the train split.
pub struct TripletStream {
    rng: ChaCha8Rng,
    anchors: Vec<AnchorPool>,
    order: Vec<usize>,
    cursor: usize,
    train: Vec<usize>,
    remaining: usize,
    seen_pairs: HashSet<(usize, usize, usize)>,
    repeats: usize,
    stats: StreamStats,
}

impl TripletStream {
    pub fn new(corpus: &Corpus, seed: u64, max_triplets: usize) -> Result<Self> {
        let train = corpus.indices_in(Split::Train);
        if train.is_empty() {
            return Err(Error::Data("train split is empty".into()));
        }
        let is_train = |i: usize| corpus.split(i) == Split::Train;
        let mut anchors = Vec::new();
        let mut stats = StreamStats::default();
        for &a in &train {
            let list = corpus.relevant(a);
            let mut pool = vec![a];
            pool.extend(list.iter().copied().filter(|&r| is_train(r)));
            if pool.len() < 2 {
                stats.skipped_anchors += 1;
                continue;
            }
            let excluded: HashSet<usize> = std::iter::once(a).chain(list.iter().copied()).collect();
            let negatives = train.iter().filter(|i| !excluded.contains(i)).count();
            if negatives == 0 {
                return Err(Error::Data(format!(
                    "anchor `{}` has no train videos outside its relevance list",
                    corpus.id(a)
                )));
            }
            stats.total_pairs += pool.len() * (pool.len() - 1);
            anchors.push(AnchorPool {
                anchor: a,
                pool,
                excluded,
            });
        }
        if anchors.is_empty() && max_triplets > 0 {
            return Err(Error::Data("no train anchor has a usable relevance list".into()));
        }
        stats.anchors = anchors.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        order.shuffle(&mut rng);
        Ok(TripletStream {
            rng,
            anchors,
            order,
            cursor: 0,
            train,
            remaining: max_triplets,
            seen_pairs: HashSet::new(),
            repeats: 0,
            stats,
        })
    }

    pub fn stats(&self) -> StreamStats {
        let mut s = self.stats.clone();
        s.distinct_pairs = self.seen_pairs.len();
        s.repeat_rate = if s.emitted == 0 {
            0.0
        } else {
            self.repeats as f64 / s.emitted as f64
        };
        s
    }

    fn next_anchor(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let a = self.order[self.cursor];
        self.cursor += 1;
        a
    }
}

impl Iterator for TripletStream {
    type Item = Triplet;

    fn next(&mut self) -> Option<Triplet> {
        if self.remaining == 0 || self.anchors.is_empty() {
            return None;
        }
        self.remaining -= 1;
        let slot = self.next_anchor();
        let entry = &self.anchors[slot];
        let n = entry.pool.len();
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (p, p_pos) = (entry.pool[i], entry.pool[j]);
        let p_neg = loop {
            let cand = self.train[self.rng.random_range(0..self.train.len())];
            if !entry.excluded.contains(&cand) {
                break cand;
            }
        };
        let t = Triplet {
            anchor: entry.anchor,
            p,
            p_pos,
            p_neg,
            mirrored: p != entry.anchor,
        };
        if !self.seen_pairs.insert((entry.anchor, p, p_pos)) {
            self.repeats += 1;
        }
        self.stats.emitted += 1;
        self.stats.mirrored += usize::from(t.mirrored);
        Some(t)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = if self.anchors.is_empty() { 0 } else { self.remaining };
        (n, Some(n))
    }
}

/// Collects the first `max_triplets` triplets together with stream stats.
pub fn triplet_stream(corpus: &Corpus, seed: u64, max_triplets: usize) -> Result<(Vec<Triplet>, StreamStats)> {
    let mut stream = TripletStream::new(corpus, seed, max_triplets)?;
    let triplets: Vec<Triplet> = stream.by_ref().collect();
    Ok((triplets, stream.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelevanceList, VideoRecord};
    use crate::matrix::Matrix;

    fn toy(ids: &[&str], lists: &[(&str, &[&str])]) -> Corpus {
        let videos = ids
            .iter()
            .map(|id| VideoRecord {
                id: id.to_string(),
                frame_features: Matrix::zeros(1, 1),
                video_feature: vec![0.0],
            })
            .collect();
        let rel = lists
            .iter()
            .map(|(a, l)| RelevanceList {
                anchor_id: a.to_string(),
                relevant_ids: l.iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        Corpus::new(1, 1, videos, vec![Split::Train; ids.len()], rel).unwrap()
    }

    #[test]
    fn pair_pool_and_forced_negative() {
        let c = toy(&["A", "B", "C", "D"], &[("A", &["B", "C"])]);
        let (ts, stats) = triplet_stream(&c, 9, 200).unwrap();
        assert_eq!(stats.total_pairs, 6);
        assert_eq!(stats.skipped_anchors, 3);
        assert_eq!(ts.len(), 200);
        assert!(ts.iter().all(|t| t.p_neg == 3));
        let pairs: HashSet<_> = ts.iter().map(|t| (t.p, t.p_pos)).collect();
        assert_eq!(pairs.len(), 6);
        assert_eq!(stats.distinct_pairs, 6);
        assert!(stats.repeat_rate > 0.9);
    }

    #[test]
    fn same_seed_same_stream() {
        let c = toy(&["A", "B", "C", "D", "E"], &[("A", &["B"]), ("C", &["D", "E"])]);
        assert_eq!(triplet_stream(&c, 4, 50).unwrap().0, triplet_stream(&c, 4, 50).unwrap().0);
        assert_ne!(triplet_stream(&c, 4, 50).unwrap().0, triplet_stream(&c, 5, 50).unwrap().0);
    }

    #[test]
    fn mirror_is_an_involution() {
        let t = Triplet {
            anchor: 0,
            p: 0,
            p_pos: 1,
            p_neg: 3,
            mirrored: false,
        };
        let m = mirror(t);
        assert_eq!((m.p, m.p_pos, m.p_neg, m.mirrored), (1, 0, 3, true));
        assert_eq!(mirror(m), t);
    }

    #[test]
    fn mirrored_flag_tracks_anchor() {
        let c = toy(&["A", "B", "C", "D"], &[("A", &["B", "C"])]);
        let (ts, stats) = triplet_stream(&c, 1, 100).unwrap();
        for t in &ts {
            assert_eq!(t.mirrored, t.p != 0);
        }
        assert_eq!(stats.mirrored, ts.iter().filter(|t| t.mirrored).count());
    }

    #[test]
    fn no_negatives_is_an_error() {
        let c = toy(&["A", "B"], &[("A", &["B"])]);
        assert!(TripletStream::new(&c, 0, 10).is_err());
    }

    #[test]
    fn round_robin_balances_anchors() {
        let c = toy(
            &["A", "B", "C", "D", "E", "F"],
            &[("A", &["B"]), ("C", &["D"]), ("E", &["F"])],
        );
        let (ts, _) = triplet_stream(&c, 2, 30).unwrap();
        for a in [0, 2, 4] {
            assert_eq!(ts.iter().filter(|t| t.anchor == a).count(), 10);
        }
    }
}
