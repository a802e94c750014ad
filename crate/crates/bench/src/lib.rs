//! Shared fixtures for the benchmarks.

use prodnet::{generate_synthetic, ProductionNetwork, SyntheticConfig};

/// Seeded synthetic network with `n` firms and the given mean out-degree.
pub fn network(n: usize, mean_out_degree: f64, seed: u64) -> ProductionNetwork {
    let config = SyntheticConfig {
        n_firms: n,
        mean_out_degree,
        ..Default::default()
    };
    let (firms, edges) = generate_synthetic(&config, seed).expect("valid synthetic config");
    ProductionNetwork::build(firms, &edges).expect("synthetic network builds")
}

/// Index of the firm with the largest out-strength.
pub fn largest_supplier(net: &ProductionNetwork) -> usize {
    let s = net.s_out();
    (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0)
}
