//! The LSTM and the fused embedder against a scalar reference written gate by
//! gate, plus a value frozen from an independent numpy run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidrel::corpus::VideoRecord;
use vidrel::fusednet::{lstm_forward, FusedConfig, FusedEmbedder, LstmParams};
use vidrel::simkernel::KernelSpec;
use vidrel::Matrix;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight transcription of the cell equations with scalar loops.
fn reference_lstm(p: &LstmParams, frames: &[Vec<f64>]) -> Vec<f64> {
    let (n_in, n_h) = (p.input_dim, p.hidden_dim);
    let pre = |gate: usize, k: usize, x: &[f64], h: &[f64]| {
        let row = gate * n_h + k;
        let mut z = p.b[row];
        for j in 0..n_in {
            z += p.w[row * n_in + j] * x[j];
        }
        for j in 0..n_h {
            z += p.u[row * n_h + j] * h[j];
        }
        z
    };
    let mut h = vec![0.0; n_h];
    let mut c = vec![0.0; n_h];
    for x in frames {
        let mut h_next = vec![0.0; n_h];
        for k in 0..n_h {
            let i = sigmoid(pre(0, k, x, &h));
            let f = sigmoid(pre(1, k, x, &h));
            let o = sigmoid(pre(2, k, x, &h));
            let g = pre(3, k, x, &h).tanh();
            c[k] = f * c[k] + i * g;
            h_next[k] = o * c[k].tanh();
        }
        h = h_next;
    }
    h
}

#[test]
fn frozen_numpy_value() {
    let (i, h) = (3, 2);
    let mut p = LstmParams::zeros(i, h);
    for (k, w) in p.w.iter_mut().enumerate() {
        *w = 0.3 * ((k + 1) as f64).sin();
    }
    for (k, u) in p.u.iter_mut().enumerate() {
        *u = 0.2 * ((k + 1) as f64).cos();
    }
    for (k, b) in p.b.iter_mut().enumerate() {
        *b = 0.1 * (k as f64 - 3.0);
    }
    let frames = Matrix::new(3, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.75, -0.2, 0.4, 0.9]).unwrap();
    let (out, _) = lstm_forward(&p, &frames).unwrap();
    let expected = [0.17783536394831545, 0.06903815188199204];
    for (a, b) in out.iter().zip(expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..25 {
        let (n_in, n_h) = (rng.random_range(1..6), rng.random_range(1..7));
        let p = LstmParams::init(n_in, n_h, &mut rng);
        let t = rng.random_range(1..9);
        let frames: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let m = Matrix::from_rows(&frames).unwrap();
        let (h, cache) = lstm_forward(&p, &m).unwrap();
        assert_eq!(cache.len(), t);
        let r = reference_lstm(&p, &frames);
        for (a, b) in h.iter().zip(&r) {
            assert!((a - b).abs() < 1e-13, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn embedding_is_dense_layer_over_fused_state() {
    let config = FusedConfig {
        hidden_dim: 5,
        embed_dim: 4,
        ..FusedConfig::new(3, 2, KernelSpec::softmax())
    };
    let model = FusedEmbedder::new(&config, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let record = VideoRecord {
        id: "v".into(),
        frame_features: Matrix::from_rows(&frames).unwrap(),
        video_feature: vec![0.4, -0.9],
    };
    let mut fused = reference_lstm(&model.lstm, &frames);
    fused.extend_from_slice(&record.video_feature);
    let d = &model.dense;
    let expected: Vec<f64> = (0..d.out_dim)
        .map(|r| d.b[r] + (0..d.in_dim).map(|j| d.w[r * d.in_dim + j] * fused[j]).sum::<f64>())
        .collect();
    let got = model.embed(&record).unwrap();
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn save_load_round_trip() {
    let config = FusedConfig {
        hidden_dim: 3,
        embed_dim: 2,
        ..FusedConfig::new(2, 2, KernelSpec::rbf(1.0, 0.7))
    };
    let model = FusedEmbedder::new(&config, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    assert_eq!(FusedEmbedder::load(&path).unwrap(), model);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(FusedEmbedder::load(&path).is_err());
}
