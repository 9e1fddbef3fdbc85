//! Writes the default generated grid network as JSON.
//!
//! `cargo run --example gen_network -- scenarios/network.json`

use twinroute::network::{generate_grid_network, GridSpec};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "network.json".into());
    let net = generate_grid_network(&GridSpec::default()).expect("default grid is valid");
    std::fs::write(&path, net.to_json_string()).expect("write network");
    eprintln!("{} nodes, {} links -> {path}", net.node_count(), net.link_count());
}
