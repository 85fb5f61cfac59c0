//! Moving states from R to S or S*: what each ZeRO stage saves and what it
//! pays, across device counts.

use shardcalc::cost::tradeoff_table;
use shardcalc::profile::{ClusterProfile, ModelProfile};
use shardcalc::units::{Bytes, GB};

fn main() {
    let model = ModelProfile::mixed_precision(7_000_000_000, 32, 4096).unwrap();
    for n in [1, 2, 8, 64] {
        let t = tradeoff_table(&model, &ClusterProfile::single_node(n, Bytes::new(80 * GB)));
        println!("N = {n}");
        for r in &t.rows {
            println!(
                "  {:<12} {:<16} memory {:>9}  comm {:>9}",
                r.strategy,
                r.spec.to_string(),
                r.memory_bytes.human(false),
                r.comm_bytes.human(false)
            );
        }
        if n == 1 {
            println!("  claims hold: {} (one device: nothing to shard, no traffic)", t.claims.all_hold());
        } else {
            println!("  claims hold: {}", t.claims.all_hold());
        }
    }
}
