//! Each ZeRO stage on 1, 2, 4 and 8 simulated devices, checked against the
//! single-device run: first gradient, replica checksums, final loss.

use shardcalc::placement::Strategy;
use shardcalc::sim::{verify, Layout, SimConfig, TinyModel};

fn main() {
    let model = TinyModel::mlp(8, 16, 8, 4);
    for s in [Strategy::DataParallel, Strategy::Zero1, Strategy::Zero2, Strategy::Zero3] {
        for n in [1, 2, 4, 8] {
            let cfg = SimConfig::new(Layout::placement(s.spec()), n).with_batch(32);
            let (r, run) = verify(&model, &cfg).unwrap();
            println!(
                "{:<12} N={n}  grad err {:.1e}  checksums {}/{}  loss diff {:.1e}  {}  ({} B/step/device)",
                s.name(),
                r.grad_rel_err,
                r.checksum_checks - r.checksum_mismatches,
                r.checksum_checks,
                r.loss_diff,
                if r.passed { "PASS" } else { "FAIL" },
                run.total_mean_bytes()
            );
        }
    }
}
