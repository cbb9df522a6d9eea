//! Candidate ranking and hit@k / recall@k.
//!
//! Relevance is membership only: an anchor's ground truth is the set of ids
//! in its relevance list that fall inside its candidate pool. Anchors whose
//! ground truth is empty are left out of both metrics and counted.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::omks::{batch_score, BilinearModel, KernelModel};
use crate::simkernel::{KernelKind, KernelSpec};

pub const HIT_GRID: [usize; 6] = [5, 10, 20, 30, 40, 50];
pub const RECALL_GRID: [usize; 6] = [50, 100, 200, 300, 400, 500];

pub const HIT_DEFINITION: &str = "fraction of anchors whose top-k contains at least one relevant id";
pub const RECALL_DEFINITION: &str = "mean over anchors of |top-k ∩ relevant| / |relevant|";

/// Orders candidates by descending score, ties by ascending id. Returns
/// positions into `ids`.
pub fn rank_anchor(ids: &[&str], scores: &[f64]) -> Result<Vec<usize>> {
    if ids.len() != scores.len() {
        return Err(Error::dims("candidate scores", ids.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(ids[i].to_string()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnchor {
    pub anchor_id: String,
    pub ranked_ids: Vec<String>,
    pub relevant_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

fn per_anchor<F: Fn(&RankedAnchor, &HashSet<&str>, usize) -> f64>(rankings: &[RankedAnchor], k: usize, f: F) -> MetricValue {
    let mut sum = 0.0;
    let mut evaluated = 0;
    for r in rankings {
        if r.relevant_ids.is_empty() {
            continue;
        }
        let relevant: HashSet<&str> = r.relevant_ids.iter().map(String::as_str).collect();
        sum += f(r, &relevant, k);
        evaluated += 1;
    }
    MetricValue {
        value: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        evaluated,
        excluded: rankings.len() - evaluated,
    }
}

fn hits_in_top(r: &RankedAnchor, relevant: &HashSet<&str>, k: usize) -> usize {
    r.ranked_ids
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_str()))
        .count()
}

pub fn hit_at_k(rankings: &[RankedAnchor], k: usize) -> Result<MetricValue> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    Ok(per_anchor(rankings, k, |r, rel, k| {
        if hits_in_top(r, rel, k) > 0 {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn recall_at_k(rankings: &[RankedAnchor], k: usize) -> Result<MetricValue> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    Ok(per_anchor(rankings, k, |r, rel, k| hits_in_top(r, rel, k) as f64 / rel.len() as f64))
}

/// Probability that a uniformly random ranking of `n` candidates puts at
/// least one of `r` relevant items in its top `k`: `1 - C(n-r, k) / C(n, k)`.
pub fn random_hit_probability(n: usize, r: usize, k: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    if k + r > n {
        return 1.0;
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n - r - i) as f64 / (n - i) as f64;
    }
    1.0 - miss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePool {
    /// Train split plus the anchor's own split.
    TrainPlusSplit,
    All,
}

impl CandidatePool {
    fn describe(self) -> &'static str {
        match self {
            CandidatePool::TrainPlusSplit => "videos in the train split and the anchor's split, minus the anchor",
            CandidatePool::All => "all videos minus the anchor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub method: String,
    pub kernel: Option<String>,
    pub feature_config_hash: Option<String>,
    pub support_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub notes: Vec<String>,
}

/// Scores every (anchor, candidate) pair by corpus index.
pub trait Scorer {
    fn info(&self) -> ScorerInfo;
    fn score(&self, anchors: &[usize], candidates: &[usize]) -> Result<Matrix>;
}

fn kernel_notes(kernel: &KernelSpec) -> Vec<String> {
    let mut notes = Vec::new();
    match kernel.kind {
        KernelKind::Rbf => notes.push(format!(
            "rbf exponent uses the {} distance (gamma {}, sigma {})",
            if kernel.squared { "squared" } else { "plain" },
            kernel.gamma,
            kernel.sigma
        )),
        KernelKind::ShiftedCosine => notes.push(format!("cosine inputs l2-normalized: {}", kernel.normalize_inputs)),
        KernelKind::Softmax => notes.push("softmax kernel ranks by exp(-distance)".into()),
        KernelKind::Linear => {}
    }
    notes
}

pub struct OmksScorer<'a> {
    pub model: &'a KernelModel,
    pub features: &'a Matrix,
    pub block: usize,
    pub threads: usize,
}

impl Scorer for OmksScorer<'_> {
    fn info(&self) -> ScorerInfo {
        let mut notes = kernel_notes(self.model.kernel());
        notes.push("anchor is the first argument of the learned similarity".into());
        ScorerInfo {
            method: "omks".into(),
            kernel: Some(self.model.kernel().kind.to_string()),
            feature_config_hash: Some(self.model.feature_config_hash().to_string()),
            support_size: Some(self.model.support().len()),
            embed_dim: None,
            notes,
        }
    }

    fn score(&self, anchors: &[usize], candidates: &[usize]) -> Result<Matrix> {
        batch_score(
            self.model,
            &self.features.select_rows(anchors),
            &self.features.select_rows(candidates),
            self.block,
            self.threads,
        )
    }
}

pub struct BilinearScorer<'a> {
    pub model: &'a BilinearModel,
    pub features: &'a Matrix,
}

impl Scorer for BilinearScorer<'_> {
    fn info(&self) -> ScorerInfo {
        ScorerInfo {
            method: "oasis".into(),
            kernel: Some("bilinear".into()),
            feature_config_hash: Some(self.model.feature_config_hash().to_string()),
            support_size: None,
            embed_dim: None,
            notes: vec!["anchor is the left argument of the bilinear form".into()],
        }
    }

    fn score(&self, anchors: &[usize], candidates: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(anchors.len(), candidates.len());
        for (i, &a) in anchors.iter().enumerate() {
            for (j, &c) in candidates.iter().enumerate() {
                out.set(i, j, self.model.score(self.features.row(a), self.features.row(c))?);
            }
        }
        Ok(out)
    }
}

/// Precomputed embeddings compared with a pairwise kernel.
pub struct EmbeddingScorer<'a> {
    pub embeddings: &'a Matrix,
    pub kernel: KernelSpec,
}

impl Scorer for EmbeddingScorer<'_> {
    fn info(&self) -> ScorerInfo {
        ScorerInfo {
            method: "lstm".into(),
            kernel: Some(self.kernel.kind.to_string()),
            feature_config_hash: None,
            support_size: None,
            embed_dim: Some(self.embeddings.cols()),
            notes: kernel_notes(&self.kernel),
        }
    }

    fn score(&self, anchors: &[usize], candidates: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(anchors.len(), candidates.len());
        for (i, &a) in anchors.iter().enumerate() {
            for (j, &c) in candidates.iter().enumerate() {
                out.set(i, j, self.kernel.pairwise(self.embeddings.row(a), self.embeddings.row(c))?);
            }
        }
        Ok(out)
    }
}

/// Rankings for every anchor of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    pub anchor_split: Split,
    pub candidate_pool: CandidatePool,
    pub scorer: ScorerInfo,
    /// Anchors in the split without a relevance list.
    pub anchors_without_list: usize,
    pub anchors: Vec<RankedAnchor>,
}

pub fn rank_split(corpus: &Corpus, scorer: &dyn Scorer, split: Split, pool: CandidatePool) -> Result<Rankings> {
    let in_pool = |i: usize| match pool {
        CandidatePool::All => true,
        CandidatePool::TrainPlusSplit => corpus.split(i) == Split::Train || corpus.split(i) == split,
    };
    let members: Vec<usize> = (0..corpus.len()).filter(|&i| in_pool(i)).collect();
    let split_ids = corpus.indices_in(split);
    let anchors: Vec<usize> = split_ids.iter().copied().filter(|&a| !corpus.relevant(a).is_empty()).collect();
    let scores = scorer.score(&anchors, &members)?;

    let mut ranked = Vec::with_capacity(anchors.len());
    for (row, &a) in anchors.iter().enumerate() {
        let cands: Vec<usize> = (0..members.len()).filter(|&j| members[j] != a).collect();
        let ids: Vec<&str> = cands.iter().map(|&j| corpus.id(members[j])).collect();
        let s: Vec<f64> = cands.iter().map(|&j| scores.get(row, j)).collect();
        let order = rank_anchor(&ids, &s)?;
        ranked.push(RankedAnchor {
            anchor_id: corpus.id(a).to_string(),
            ranked_ids: order.iter().map(|&k| ids[k].to_string()).collect(),
            relevant_ids: corpus
                .relevant(a)
                .iter()
                .filter(|&&r| in_pool(r))
                .map(|&r| corpus.id(r).to_string())
                .collect(),
        });
    }
    Ok(Rankings {
        anchor_split: split,
        candidate_pool: pool,
        scorer: scorer.info(),
        anchors_without_list: split_ids.len() - anchors.len(),
        anchors: ranked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub hit_definition: String,
    pub recall_definition: String,
    pub relevance: String,
    pub candidate_pool: String,
    pub anchor_split: Split,
    pub scorer: ScorerInfo,
    pub anchors_evaluated: usize,
    /// Anchors without ground truth in their candidate pool.
    pub anchors_excluded: usize,
    pub anchors_without_list: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub header: ReportHeader,
    pub hit_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    /// Expected hit@k of a uniformly random ranking, averaged over anchors.
    pub random_hit_at: BTreeMap<usize, f64>,
    pub rankings: Vec<RankedAnchor>,
}

pub fn evaluate(rankings: &Rankings, hit_grid: &[usize], recall_grid: &[usize]) -> Result<RankingReport> {
    let mut hit_at = BTreeMap::new();
    let mut random_hit_at = BTreeMap::new();
    let mut evaluated = 0;
    let mut excluded = 0;
    for &k in hit_grid {
        let m = hit_at_k(&rankings.anchors, k)?;
        hit_at.insert(k, m.value);
        evaluated = m.evaluated;
        excluded = m.excluded;
        let scored: Vec<&RankedAnchor> = rankings.anchors.iter().filter(|r| !r.relevant_ids.is_empty()).collect();
        let expected = if scored.is_empty() {
            0.0
        } else {
            scored
                .iter()
                .map(|r| random_hit_probability(r.ranked_ids.len(), r.relevant_ids.len(), k))
                .sum::<f64>()
                / scored.len() as f64
        };
        random_hit_at.insert(k, expected);
    }
    let mut recall_at = BTreeMap::new();
    for &k in recall_grid {
        let m = recall_at_k(&rankings.anchors, k)?;
        recall_at.insert(k, m.value);
        evaluated = m.evaluated;
        excluded = m.excluded;
    }
    Ok(RankingReport {
        header: ReportHeader {
            hit_definition: HIT_DEFINITION.into(),
            recall_definition: RECALL_DEFINITION.into(),
            relevance: "membership in the anchor's relevance list (rank order ignored)".into(),
            candidate_pool: rankings.candidate_pool.describe().into(),
            anchor_split: rankings.anchor_split,
            scorer: rankings.scorer.clone(),
            anchors_evaluated: evaluated,
            anchors_excluded: excluded,
            anchors_without_list: rankings.anchors_without_list,
        },
        hit_at,
        recall_at,
        random_hit_at,
        rankings: rankings.anchors.clone(),
    })
}

/// One-row table in the layout method, kernel, hit@k..., recall@k....
pub fn report_csv(report: &RankingReport) -> String {
    let mut out = String::from("method,kernel");
    for k in report.hit_at.keys() {
        let _ = write!(out, ",hit@{k}");
    }
    for k in report.recall_at.keys() {
        let _ = write!(out, ",recall@{k}");
    }
    out.push('\n');
    let s = &report.header.scorer;
    let _ = write!(out, "{},{}", s.method, s.kernel.as_deref().unwrap_or("-"));
    for v in report.hit_at.values().chain(report.recall_at.values()) {
        let _ = write!(out, ",{v:.6}");
    }
    out.push('\n');
    out
}
