//! The bilinear OASIS baseline trained on the same triplets.
//!
//!     cargo run --release --example oasis_baseline

use vidrel::corpus::{generate_synthetic, Split, SynthConfig};
use vidrel::evalrank::{evaluate, rank_split, BilinearScorer, CandidatePool, HIT_GRID, RECALL_GRID};
use vidrel::featurize::{featurize_corpus, FeatureConfig};
use vidrel::omks::{train_oasis, BilinearModel};
use vidrel::triplets::triplet_stream;

fn main() -> vidrel::Result<()> {
    let corpus = generate_synthetic(&SynthConfig::default())?;
    let fcfg = FeatureConfig::default();
    let features = featurize_corpus(&corpus, &fcfg)?;
    let (triplets, _) = triplet_stream(&corpus, 7, 10_000)?;

    let mut model = BilinearModel::new(features.cols(), 0.1, fcfg.config_hash())?;
    let stats = train_oasis(&mut model, &features, &triplets, 1.0)?;
    println!("{} of {} triplets changed W", stats.updates, stats.seen);

    let scorer = BilinearScorer { model: &model, features: &features };
    let rankings = rank_split(&corpus, &scorer, Split::Val, CandidatePool::TrainPlusSplit)?;
    let report = evaluate(&rankings, &HIT_GRID, &RECALL_GRID)?;
    println!("hit@30 {:.3}  recall@100 {:.3}", report.hit_at[&30], report.recall_at[&100]);
    Ok(())
}
