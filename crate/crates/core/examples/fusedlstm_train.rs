//! Train the fused LSTM embedder as a triplet network and rank with it.
//!
//!     cargo run --release --example fusedlstm_train

use vidrel::corpus::{generate_synthetic, Split, SynthConfig};
use vidrel::evalrank::{evaluate, rank_split, CandidatePool, EmbeddingScorer, HIT_GRID, RECALL_GRID};
use vidrel::fusednet::{train, FusedConfig, FusedEmbedder, TrainConfig};
use vidrel::simkernel::KernelSpec;
use vidrel::triplets::triplet_stream;

fn main() -> vidrel::Result<()> {
    let corpus = generate_synthetic(&SynthConfig::default())?;
    let config = FusedConfig {
        hidden_dim: 32,
        embed_dim: 32,
        ..FusedConfig::new(corpus.frame_dim(), corpus.video_dim(), KernelSpec::softmax())
    };
    let mut model = FusedEmbedder::new(&config, 7)?;
    let (triplets, _) = triplet_stream(&corpus, 7, 5_000)?;
    let report = train(&mut model, &corpus, &triplets, &TrainConfig { log_every: 1000, ..TrainConfig::default() })?;
    for point in &report.loss_curve {
        println!("step {:>5}: loss {:.5}", point.step, point.mean_loss);
    }

    let embeddings = model.embed_corpus(&corpus)?;
    let scorer = EmbeddingScorer { embeddings: &embeddings, kernel: model.kernel };
    let rankings = rank_split(&corpus, &scorer, Split::Val, CandidatePool::TrainPlusSplit)?;
    let eval = evaluate(&rankings, &HIT_GRID, &RECALL_GRID)?;
    println!("hit@30 {:.3}  recall@100 {:.3}", eval.hit_at[&30], eval.recall_at[&100]);
    Ok(())
}
