//! Column/row-split layer pairs with data parallelism across replicas.

use shardcalc::cost::CommLabel;
use shardcalc::sim::{verify, Layout, SimConfig, TinyModel};

fn main() {
    let model = TinyModel::mlp(8, 16, 8, 4);
    for (tp, dp) in [(1, 1), (2, 1), (4, 1), (2, 2), (4, 2)] {
        let cfg = SimConfig::new(Layout::TensorData { tp, dp }, tp * dp).with_batch(32);
        let (r, run) = verify(&model, &cfg).unwrap();
        println!(
            "TP({tp}) × DP({dp}): grad err {:.1e}, loss diff {:.1e}, {}; activation all-reduce {} B, gradient all-reduce {} B per device per step",
            r.grad_rel_err,
            r.loss_diff,
            if r.passed { "PASS" } else { "FAIL" },
            run.mean_bytes(CommLabel::TpActivationAllreduce),
            run.mean_bytes(CommLabel::SyncAllreduce)
        );
    }
}
