//! Online kernel similarity learning on a synthetic corpus.
//!
//!     cargo run --release --example omks_train

use vidrel::corpus::{generate_synthetic, Split, SynthConfig};
use vidrel::featurize::{featurize_corpus, FeatureConfig};
use vidrel::omks::{train_omks, KernelModel};
use vidrel::simkernel::{estimate_sigma, KernelKind, KernelSpec};
use vidrel::triplets::triplet_stream;

fn main() -> vidrel::Result<()> {
    let corpus = generate_synthetic(&SynthConfig::default())?;
    let fcfg = FeatureConfig::default();
    let features = featurize_corpus(&corpus, &fcfg)?;

    let train: Vec<&[f64]> = corpus.indices_in(Split::Train).iter().map(|&i| features.row(i)).collect();
    let sigma = estimate_sigma(&train, 0)?;
    let mut model = KernelModel::new(KernelSpec::rbf(1.0, sigma), 1.0, features.cols(), fcfg.config_hash())?;

    let (triplets, stream) = triplet_stream(&corpus, 7, 20_000)?;
    println!("stream: {stream:?}");
    let stats = train_omks(&mut model, &features, &triplets, KernelKind::Rbf.default_margin())?;
    println!("sigma {sigma:.3}, {} updates, support {}", stats.updates, stats.support_size);

    let t = triplets[0];
    let (a, p, n) = (features.row(t.p), features.row(t.p_pos), features.row(t.p_neg));
    println!("S(p, p+) = {:.4}  S(p, p-) = {:.4}", model.score(a, p)?, model.score(a, n)?);

    let path = std::env::temp_dir().join("vidrel-omks-example.bin");
    model.save(&path)?;
    assert_eq!(KernelModel::load(&path)?, model);
    Ok(())
}
