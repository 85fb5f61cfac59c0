//! Builds TP × PP × DP grids, checks the composition conditions, and shows
//! what a tensor group spanning two nodes costs in latency.

use shardcalc::composition::{compose, composed_costs, validate, CompositionOptions, Factor};
use shardcalc::profile::{ClusterProfile, LinkClass, ModelProfile, Scope, Tier};
use shardcalc::units::{Bytes, GB};

fn main() {
    let model = ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap();
    let cluster = ClusterProfile::new(
        16,
        Bytes::new(80 * GB),
        vec![
            Tier { scope: Scope::IntraNode, latency_s: 1e-6, class: LinkClass::Fast },
            Tier { scope: Scope::InterNode, latency_s: 5e-6, class: LinkClass::Slow },
        ],
    )
    .unwrap()
    .with_devices_per_node(8);

    for factors in [
        vec![Factor::tp(8), Factor::dp(2)],
        vec![Factor::tp(4), Factor::pp(2), Factor::dp(2)],
        vec![Factor::tp(16)],
    ] {
        let comp = compose(&factors, &cluster).unwrap();
        let verdict = validate(&comp, &cluster, &model);
        let cost = composed_costs(&comp, &model, &cluster, &CompositionOptions::default());
        println!("{comp}");
        println!("  tensor groups {:?}", comp.tp_groups);
        println!("  data groups   {:?}", comp.dp_groups);
        println!(
            "  valid {}, model state {} per device, gradient sync {} per step",
            verdict.valid,
            cost.memory.model_state_bytes.human(false),
            cost.comm.total_bytes_per_device_per_step.human(false)
        );
        if let Some(w) = verdict.latency_warning {
            println!("  warning: {} = {:.1e} s per step", w.detail, w.overhead_s);
        }
    }

    // a hand-built grid that syncs gradients inside a tensor group
    let mut bad = compose(&[Factor::tp(2), Factor::dp(8)], &cluster).unwrap();
    std::mem::swap(&mut bad.tp_groups, &mut bad.dp_groups);
    for v in validate(&bad, &cluster, &model).violated_conditions {
        println!("violation: {} condition {}: {}", v.rule, v.condition, v.explanation);
    }
}
