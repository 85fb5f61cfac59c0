//! The strategy planner on three clusters: one where everything fits, one
//! where sharding suffices, one where nothing does.

use shardcalc::planner::{select, PlannerConfig};
use shardcalc::profile::{ClusterProfile, ModelProfile};
use shardcalc::units::{Bytes, GB};

fn main() {
    let cases = [
        ("1B on 8 × 80 GB", ModelProfile::mixed_precision(1_000_000_000, 24, 2048).unwrap(), 8),
        ("70B on 128 × 80 GB", ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap(), 128),
        ("70B on 8 × 80 GB", ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap(), 8),
    ];
    for (name, model, n) in cases {
        let cluster = ClusterProfile::single_node(n, Bytes::new(80 * GB)).with_devices_per_node(8);
        let plan = select(&model, &cluster, &PlannerConfig::default());
        println!("{name}: {:?}, feasible {}", plan.branch, plan.feasible);
        for r in &plan.rationale {
            println!("    {r}");
        }
        if let Some(b) = plan.binding_constraint {
            println!("    binding: {b}");
        }
    }
}
