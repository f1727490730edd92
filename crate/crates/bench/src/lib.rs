//! Shared fixtures for the benchmarks: Cora-shaped synthetic graphs at a
//! chosen node count.

use gcl_core::model::{init_params, EncoderMode, ModelParams};
use gcl_core::synthetic::ContextualSbm;
use gcl_core::SparseGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seven classes, mean degree near 4 and 1433 sparse binary features, the
/// shape of the Cora citation graph.
pub fn cora_like(n: usize) -> SparseGraph {
    let per_class = n.div_ceil(7);
    let total = (7 * per_class) as f64;
    // Expected degree: p_in·(per_class − 1) + p_out·(total − per_class) ≈ 4.
    let p_in = 3.6 / per_class as f64;
    let p_out = 0.4 / (total - per_class as f64);
    ContextualSbm {
        classes: 7,
        nodes_per_class: per_class,
        p_in: p_in.min(1.0),
        p_out,
        features: 1433,
        q_in: 0.03,
        q_out: 0.01,
    }
    .sample(&mut ChaCha8Rng::seed_from_u64(n as u64))
    .expect("valid block model")
}

pub fn params_for(graph: &SparseGraph, hidden: usize, output: usize) -> ModelParams {
    init_params(
        EncoderMode::Gcn,
        graph.num_features(),
        hidden,
        output,
        output,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .expect("positive dimensions")
}
