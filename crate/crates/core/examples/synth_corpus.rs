//! Generate a planted-cluster corpus, write it to disk and read it back.
//!
//!     cargo run --example synth_corpus

use vidrel::corpus::{generate_synthetic, load_corpus, save_corpus, Split, SynthConfig};

fn main() -> vidrel::Result<()> {
    let config = SynthConfig::default();
    let corpus = generate_synthetic(&config)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{:>5}: {} videos", split.as_str(), corpus.indices_in(split).len());
    }
    let first = corpus.relevance_list(0);
    println!("{} -> {:?}", first.anchor_id, first.relevant_ids);

    let dir = std::env::temp_dir().join("vidrel-synth-example");
    let manifest = save_corpus(&corpus, &dir)?;
    assert_eq!(load_corpus(&manifest)?, corpus);
    println!("round-tripped through {}", manifest.display());
    Ok(())
}
