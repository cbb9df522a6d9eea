//! Turn variable-length frame sequences into fixed-length fused vectors.
//!
//!     cargo run --example featurize

use vidrel::corpus::{generate_synthetic, SynthConfig};
use vidrel::featurize::{featurize_corpus, fuse, temporal_stats, FeatureConfig, STAT_NAMES};

fn main() -> vidrel::Result<()> {
    let corpus = generate_synthetic(&SynthConfig::default())?;
    let video = corpus.video(0);
    let stats = temporal_stats(&video.frame_features)?;
    for (name, row) in STAT_NAMES.iter().zip(stats.iter_rows()) {
        println!("{name:>6}: {:+.3} {:+.3} {:+.3} ...", row[0], row[1], row[2]);
    }

    for config in [FeatureConfig::default(), FeatureConfig { pool_k: 2, delta: true }] {
        let fused = fuse(video, &config)?;
        println!("{}: {} values", fused.config_hash, fused.values.len());
    }
    let all = featurize_corpus(&corpus, &FeatureConfig::default())?;
    println!("corpus matrix {} x {}", all.rows(), all.cols());
    Ok(())
}
