//! Ranking and hit@k / recall@k on hand-made scores.
//!
//!     cargo run --example evaluate

use vidrel::evalrank::{hit_at_k, random_hit_probability, rank_anchor, recall_at_k, RankedAnchor};

fn main() -> vidrel::Result<()> {
    let ids = ["a", "b", "c", "d", "e"];
    let anchors = [
        ("x", [0.1, 0.9, 0.5, 0.5, 0.0], vec!["c", "e"]),
        ("y", [0.3, 0.2, 0.8, 0.1, 0.7], vec!["d"]),
        ("z", [0.0; 5], vec![]),
    ];
    let mut rankings = Vec::new();
    for (anchor, scores, relevant) in anchors {
        let order = rank_anchor(&ids, &scores)?;
        let ranked: Vec<String> = order.iter().map(|&i| ids[i].to_string()).collect();
        println!("{anchor}: {ranked:?} relevant {relevant:?}");
        rankings.push(RankedAnchor {
            anchor_id: anchor.into(),
            ranked_ids: ranked,
            relevant_ids: relevant.iter().map(|s| s.to_string()).collect(),
        });
    }
    for k in 1..=5 {
        let hit = hit_at_k(&rankings, k)?;
        let recall = recall_at_k(&rankings, k)?;
        println!(
            "k={k}: hit {:.3} recall {:.3} ({} anchors, {} excluded), random hit for one relevant {:.3}",
            hit.value,
            recall.value,
            hit.evaluated,
            hit.excluded,
            random_hit_probability(ids.len(), 1, k)
        );
    }
    Ok(())
}
