//! Contiguous layer stages, one micro-batch, data parallelism inside each
//! stage.

use shardcalc::cost::CommLabel;
use shardcalc::sim::{verify, Layout, SimConfig, TinyModel};

fn main() {
    let model = TinyModel::mlp(8, 16, 8, 4);
    for (stages, dp) in [(1, 1), (2, 1), (4, 1), (2, 2), (4, 2)] {
        let cfg = SimConfig::new(Layout::PipelineData { stages, dp }, stages * dp).with_batch(32);
        let (r, run) = verify(&model, &cfg).unwrap();
        let transfers: u64 = run
            .measured(CommLabel::PpActivationTransfer)
            .map_or(0, |m| m.per_device_total.iter().sum());
        println!(
            "PP({stages}) × DP({dp}): grad err {:.1e}, loss diff {:.1e}, {}; {transfers} B of activations crossed stage boundaries",
            r.grad_rel_err,
            r.loss_diff,
            if r.passed { "PASS" } else { "FAIL" },
        );
    }
}
