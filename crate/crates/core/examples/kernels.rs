//! The similarity kernels and the triplet loss they feed.
//!
//!     cargo run --example kernels

use vidrel::simkernel::{
    softmax_triplet_similarity, triplet_hinge, triplet_loss, KernelKind, KernelSpec, TripletLossSpec,
};

fn main() -> vidrel::Result<()> {
    let anchor = [0.2, 0.9, -0.1];
    let pos = [0.3, 0.8, 0.0];
    let neg = [-0.7, 0.1, 0.6];

    for kind in [KernelKind::Rbf, KernelKind::ShiftedCosine, KernelKind::Softmax, KernelKind::Linear] {
        let k = KernelSpec::of_kind(kind);
        let spec = TripletLossSpec::for_kernel(kind);
        let (s_pos, s_neg) = match kind {
            KernelKind::Softmax => softmax_triplet_similarity(&anchor, &pos, &neg)?,
            _ => (k.pairwise(&anchor, &pos)?, k.pairwise(&anchor, &neg)?),
        };
        println!(
            "{kind:>14}: s+ {s_pos:.4}  s- {s_neg:.4}  hinge {:.4}  loss {:.6}  (margin {}, lambda {})",
            triplet_hinge(s_pos, s_neg, spec.margin),
            triplet_loss(s_pos, s_neg, [&anchor, &pos, &neg], &spec),
            spec.margin,
            spec.lambda,
        );
    }
    Ok(())
}
