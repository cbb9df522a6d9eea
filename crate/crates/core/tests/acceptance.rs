//! End-to-end acceptance checks, one result line per criterion.
//!
//! Runs without the libtest harness so every line is printed whether it
//! passes or not. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidrel::bench::{bench_csv, random_matrix, random_model, run_bench, BenchConfig};
use vidrel::corpus::VideoRecord;
use vidrel::evalrank::{hit_at_k, rank_anchor, recall_at_k, RankedAnchor};
use vidrel::fusednet::{FusedConfig, FusedEmbedder};
use vidrel::omks::{batch_score, naive_batch_score, KernelModel, UpdateStatus};
use vidrel::simkernel::{
    rbf_similarity, shifted_cosine, softmax_triplet_similarity, triplet_hinge, KernelSpec, TripletLossSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn all_kernels() -> [KernelSpec; 4] {
    [
        KernelSpec::rbf(1.0, 1.5),
        KernelSpec::shifted_cosine(),
        KernelSpec::softmax(),
        KernelSpec::linear(),
    ]
}

fn random_record(rng: &mut ChaCha8Rng, frame_dim: usize, video_dim: usize) -> VideoRecord {
    let frames = rng.random_range(1..=5);
    VideoRecord {
        id: String::new(),
        frame_features: random_matrix(frames, frame_dim, rng),
        video_feature: (0..video_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    const INSTANCES: usize = 20;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut resampled = 0;
    for kernel in [KernelSpec::rbf(1.0, 1.0), KernelSpec::shifted_cosine(), KernelSpec::softmax()] {
        let config = FusedConfig {
            hidden_dim: 4,
            embed_dim: 3,
            loss: TripletLossSpec {
                lambda: 1e-2,
                ..TripletLossSpec::for_kernel(kernel.kind)
            },
            ..FusedConfig::new(3, 2, kernel)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut done = 0;
        let mut seed = 0;
        while done < INSTANCES {
            seed += 1;
            let mut model = FusedEmbedder::new(&config, seed).unwrap();
            let recs: Vec<VideoRecord> = (0..3).map(|_| random_record(&mut rng, 3, 2)).collect();
            let records = [&recs[0], &recs[1], &recs[2]];
            let (grads, eval) = model.triplet_backward(records).unwrap();
            // inactive or near the hinge kink: the check would be vacuous or ill-posed
            if eval.hinge < 1e-3 {
                resampled += 1;
                continue;
            }
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            for (t, grad) in analytic.iter().enumerate() {
                for (j, &a) in grad.iter().enumerate() {
                    let orig = model.tensors_mut()[t][j];
                    model.tensors_mut()[t][j] = orig + STEP;
                    let up = model.triplet_loss(records).unwrap().loss;
                    model.tensors_mut()[t][j] = orig - STEP;
                    let down = model.triplet_loss(records).unwrap().loss;
                    model.tensors_mut()[t][j] = orig;
                    let n = (up - down) / (2.0 * STEP);
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
            done += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {checked} parameters, 3 kernels x 20 instances ({resampled} resampled)"),
    )
}

fn omks_invariants() -> Outcome {
    const UPDATES: usize = 10_000;
    const PER_MODEL: usize = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_gain = 0.0f64;
    let mut tau_violations = 0;
    let mut changed_when_satisfied = 0;
    let mut updated = 0;
    let mut satisfied = 0;
    let mut done = 0;
    let mut round = 0;
    while done < UPDATES {
        let kernel = all_kernels()[round % 4];
        round += 1;
        let c = rng.random_range(0.05..2.0);
        let dim = 4;
        let mut model = KernelModel::new(kernel, c, dim, "t").unwrap();
        let pool = random_matrix(12, dim, &mut rng);
        let margin = kernel.kind.default_margin();
        for _ in 0..PER_MODEL {
            let pick = |rng: &mut ChaCha8Rng| pool.row(rng.random_range(0..pool.rows())).to_vec();
            let (p, pos, neg) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let before_gap = model.score(&p, &pos).unwrap() - model.score(&p, &neg).unwrap();
            let snapshot = model.clone();
            let out = model.update(&p, &pos, &neg, margin).unwrap();
            if !(0.0..=c).contains(&out.tau) {
                tau_violations += 1;
            }
            match out.status {
                UpdateStatus::Satisfied => {
                    satisfied += 1;
                    if model != snapshot || out.loss != 0.0 {
                        changed_when_satisfied += 1;
                    }
                }
                UpdateStatus::Updated => {
                    updated += 1;
                    let after_gap = model.score(&p, &pos).unwrap() - model.score(&p, &neg).unwrap();
                    let err = ((after_gap - before_gap) - out.tau * out.gain_coefficient).abs();
                    worst_gain = worst_gain.max(err);
                }
                UpdateStatus::SkippedDegenerate => {
                    if model != snapshot {
                        changed_when_satisfied += 1;
                    }
                }
            }
            done += 1;
        }
    }
    outcome(
        tau_violations == 0 && changed_when_satisfied == 0 && worst_gain < 1e-10 && updated > 0 && satisfied > 0,
        format!(
            "{done} updates ({updated} updated, {satisfied} satisfied): tau out of range {tau_violations}, \
             max margin-gain error {worst_gain:.2e}, model changed at zero loss {changed_when_satisfied}"
        ),
    )
}

fn batch_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    let mut runs = 0;
    for (i, kernel) in all_kernels().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(31 + i as u64);
        let model = random_model(kernel, 200, 8, &mut rng).unwrap();
        let q = random_matrix(50, 8, &mut rng);
        let c = random_matrix(60, 8, &mut rng);
        let naive = naive_batch_score(&model, &q, &c).unwrap();
        let reference = batch_score(&model, &q, &c, 64, 1).unwrap();
        for (a, b) in naive.as_slice().iter().zip(reference.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        for threads in 1..=8 {
            for block in [1, 16, 64] {
                let out = batch_score(&model, &q, &c, block, threads).unwrap();
                let same = out
                    .as_slice()
                    .iter()
                    .zip(reference.as_slice())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                mismatched += usize::from(!same);
                runs += 1;
            }
        }
    }
    outcome(
        worst < 1e-10 && mismatched == 0,
        format!("4 kernels, max |blocked - naive| {worst:.2e}; {mismatched}/{runs} thread/block runs not bit-identical"),
    )
}

/// Position of each candidate found by counting the candidates that beat it.
fn brute_rank(ids: &[String], scores: &[f64]) -> Vec<String> {
    let mut slots = vec![String::new(); ids.len()];
    for i in 0..ids.len() {
        let ahead = (0..ids.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i]))
            .count();
        slots[ahead] = ids[i].clone();
    }
    slots
}

fn brute_metrics(rankings: &[(Vec<String>, Vec<String>)], k: usize) -> (f64, f64) {
    let mut hits = 0.0;
    let mut recall = 0.0;
    let mut evaluated = 0usize;
    for (ranked, relevant) in rankings {
        if relevant.is_empty() {
            continue;
        }
        evaluated += 1;
        let mut found = 0usize;
        for pos in 0..k.min(ranked.len()) {
            for r in relevant {
                if *r == ranked[pos] {
                    found += 1;
                }
            }
        }
        if found > 0 {
            hits += 1.0;
        }
        recall += found as f64 / relevant.len() as f64;
    }
    if evaluated == 0 {
        return (0.0, 0.0);
    }
    (hits / evaluated as f64, recall / evaluated as f64)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mismatches = 0;
    let mut comparisons = 0;
    for _ in 0..50 {
        let n_anchors = rng.random_range(1..=10);
        let n_cands = rng.random_range(1..=20);
        let ids: Vec<String> = (0..n_cands).map(|i| format!("c{i:02}")).collect();
        let mut ours = Vec::new();
        let mut brute = Vec::new();
        for a in 0..n_anchors {
            // coarse integer scores force plenty of ties
            let scores: Vec<f64> = (0..n_cands).map(|_| rng.random_range(0..4) as f64).collect();
            let relevant: Vec<String> = ids.iter().filter(|_| rng.random_bool(0.25)).cloned().collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let order = rank_anchor(&id_refs, &scores).unwrap();
            let ranked: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
            let expected = brute_rank(&ids, &scores);
            comparisons += 1;
            mismatches += usize::from(ranked != expected);
            ours.push(RankedAnchor {
                anchor_id: format!("a{a}"),
                ranked_ids: ranked,
                relevant_ids: relevant.clone(),
            });
            brute.push((expected, relevant));
        }
        for k in 1..=n_cands + 2 {
            let (h, r) = brute_metrics(&brute, k);
            comparisons += 1;
            let same = hit_at_k(&ours, k).unwrap().value == h && recall_at_k(&ours, k).unwrap().value == r;
            mismatches += usize::from(!same);
        }
    }
    outcome(mismatches == 0, format!("50 instances, {mismatches}/{comparisons} rankings or metric values differ"))
}

fn kernel_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut sum_err = 0.0f64;
    let mut hinge_err = 0.0f64;
    let mut rbf_self_err = 0.0f64;
    let mut cos_out = 0;
    let dim = 6;
    let v = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    for _ in 0..100_000 {
        let (p, pos, neg) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let (s_pos, s_neg) = softmax_triplet_similarity(&p, &pos, &neg).unwrap();
        sum_err = sum_err.max((s_pos + s_neg - 1.0).abs());
        let m = rng.random_range(0.0..1.0);
        hinge_err = hinge_err.max((triplet_hinge(s_pos, s_neg, m) - (m + 1.0 - 2.0 * s_pos).max(0.0)).abs());
    }
    for _ in 0..10_000 {
        let (p, q) = (v(&mut rng), v(&mut rng));
        let spec = KernelSpec::rbf(rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        rbf_self_err = rbf_self_err.max((rbf_similarity(&p, &p, &spec).unwrap() - 1.0).abs());
        let s = shifted_cosine(&p, &q, true).unwrap();
        if !(0.0..=1.0).contains(&s) {
            cos_out += 1;
        }
    }
    outcome(
        sum_err < 1e-12 && hinge_err < 1e-12 && rbf_self_err == 0.0 && cos_out == 0,
        format!(
            "softmax sum error {sum_err:.1e}, hinge identity error {hinge_err:.1e}, \
             rbf(p,p) error {rbf_self_err:.1e}, shifted cosine outside [0,1] {cos_out}"
        ),
    )
}

fn performance() -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let config = BenchConfig {
        threads: cores,
        ..BenchConfig::default()
    };
    let row = run_bench(&config).unwrap();
    let csv = bench_csv(std::slice::from_ref(&row));
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("bench.csv");
    std::fs::write(&path, &csv).unwrap();
    for line in csv.lines() {
        println!("    {line}");
    }
    let note = if cores < 4 {
        format!(", only {cores} core(s) available so the speedup is from blocking alone")
    } else {
        String::new()
    };
    outcome(
        row.speedup >= 4.0 && row.max_abs_diff < 1e-10,
        format!(
            "m=n={} |S|={}: blocked {:.2}s vs naive {:.1}s ({} of {} rows timed), speedup {:.1}x on {} thread(s){note}; csv at {}",
            row.queries,
            row.support,
            row.blocked_seconds,
            row.naive_seconds,
            row.naive_rows,
            row.queries,
            row.speedup,
            row.threads,
            path.display()
        ),
    )
}

fn cli(args: &[&str]) {
    let mut argv = vec!["vidrel"];
    argv.extend_from_slice(args);
    let code = vidrel::cli::run(&argv);
    assert_eq!(code, 0, "vidrel {} exited with {code}", args.join(" "));
}

/// Runs synth, featurize, train, rank and eval for omks and lstm under
/// `dir`; returns the eval report bytes per method.
fn pipeline(dir: &Path) -> BTreeMap<&'static str, Vec<u8>> {
    let p = |s: &str| dir.join(s).to_str().unwrap().to_string();
    let manifest = p("corpus/manifest.json");
    cli(&["synth", "--out", &p("corpus"), "--n-videos", "200", "--clusters", "10", "--relevance-size", "5", "--seed", "7"]);
    cli(&["featurize", "--manifest", &manifest, "--out", &p("features")]);
    cli(&[
        "train", "--method", "omks", "--kernel", "rbf", "--manifest", &manifest, "--features", &p("features"), "--out",
        &p("omks"), "--max-triplets", "50000", "--seed", "7",
    ]);
    cli(&[
        "rank", "--manifest", &manifest, "--model", &p("omks/model.bin"), "--features", &p("features"), "--split", "val",
        "--out", &p("omks_rank"),
    ]);
    cli(&["eval", "--rankings", &p("omks_rank/rankings.json"), "--out", &p("omks_eval")]);
    cli(&[
        "train", "--method", "lstm", "--kernel", "softmax", "--hidden", "64", "--embed-dim", "64", "--manifest", &manifest,
        "--out", &p("lstm"), "--max-triplets", "50000", "--seed", "7",
    ]);
    cli(&["embed", "--manifest", &manifest, "--model", &p("lstm/model.bin"), "--out", &p("embeddings")]);
    cli(&[
        "rank", "--manifest", &manifest, "--model", &p("lstm/model.bin"), "--embeddings", &p("embeddings"), "--split",
        "val", "--out", &p("lstm_rank"),
    ]);
    cli(&["eval", "--rankings", &p("lstm_rank/rankings.json"), "--out", &p("lstm_eval")]);
    let mut out = BTreeMap::new();
    for method in ["omks", "lstm"] {
        out.insert(method, std::fs::read(dir.join(format!("{method}_eval/report.json"))).unwrap());
    }
    out
}

/// `1 - C(n - r, k) / C(n, k)`.
fn random_hit(n: u64, r: u64, k: u64) -> f64 {
    1.0 - (0..k).fold(1.0, |miss, i| miss * (n - r - i) as f64 / (n - i) as f64)
}

fn synthetic_recovery(reports: &BTreeMap<&'static str, Vec<u8>>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (method, bytes) in reports {
        let report: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        let hit = report["hit_at"]["30"].as_f64().unwrap();
        let recall = report["recall_at"]["100"].as_f64().unwrap();
        let random = report["random_hit_at"]["30"].as_f64().unwrap();
        let anchors = report["header"]["anchors_evaluated"].as_u64().unwrap();
        pass &= hit >= 0.9 && recall >= 0.8;
        parts.push(format!(
            "{method}: hit@30 {hit:.3} recall@100 {recall:.3} over {anchors} val anchors (random hit@30 {random:.3} for the actual pools)"
        ));
    }
    parts.push(format!("random hit@30 with 199 candidates and 5 relevant: {:.3}", random_hit(199, 5, 30)));
    outcome(pass, parts.join("; "))
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {name}: {status} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    report(1, "gradient-check", &mut gradient_check);
    report(2, "omks-update-invariants", &mut omks_invariants);
    report(3, "batch-score-oracle", &mut batch_oracle);
    report(4, "metric-oracle", &mut metric_oracle);

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let mut reports_a = BTreeMap::new();
    report(5, "synthetic-recovery", &mut || {
        reports_a = pipeline(first.path());
        synthetic_recovery(&reports_a)
    });
    report(6, "kernel-identities", &mut kernel_identities);
    report(7, "batch-score-speedup", &mut performance);
    report(8, "pipeline-determinism", &mut || {
        let reports_b = pipeline(second.path());
        let same: Vec<&str> = reports_a
            .iter()
            .filter(|(m, bytes)| reports_b.get(*m) == Some(bytes))
            .map(|(m, _)| *m)
            .collect();
        outcome(
            same.len() == 2,
            format!("eval report.json byte-identical across two seeded runs for {}/2 methods ({})", same.len(), same.join(", ")),
        )
    });

    if failed.is_empty() {
        println!("acceptance: all 8 criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
