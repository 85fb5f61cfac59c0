//! Breaks data-parallel training in six ways and shows which check notices.

use shardcalc::placement::Strategy;
use shardcalc::sim::{verify, Fault, Layout, SimConfig, TinyModel};

fn main() {
    let model = TinyModel::mlp(8, 16, 8, 4);
    for s in [Strategy::DataParallel, Strategy::Zero3] {
        for f in Fault::ALL {
            let cfg = SimConfig::new(Layout::placement(s.spec()), 4)
                .with_batch(32)
                .with_fault(Some(f));
            match verify(&model, &cfg) {
                Ok((r, _)) => println!(
                    "{:<12} {:<20} grad {:<4} checksums {:<4} trajectory {:<4}",
                    s.name(),
                    f.name(),
                    if r.grad_ok { "ok" } else { "FAIL" },
                    if r.checksums_ok { "ok" } else { "FAIL" },
                    if r.trajectory_ok { "ok" } else { "FAIL" },
                ),
                Err(e) => println!("{:<12} {:<20} not applicable: {e}", s.name(), f.name()),
            }
        }
    }
}
