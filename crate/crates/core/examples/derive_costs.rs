//! Memory and communication of DP against ZeRO-3 for a 70B model on eight
//! 80 GB devices.

use shardcalc::cost::{derive_communication, derive_memory, CommOptions, MemoryOptions};
use shardcalc::placement::Strategy;
use shardcalc::profile::{ClusterProfile, ModelProfile};
use shardcalc::report::{comm_table, memory_table, Units};
use shardcalc::units::{Bytes, GB};

fn main() {
    let model = ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap();
    let cluster = ClusterProfile::single_node(8, Bytes::new(80 * GB));
    let mut totals = Vec::new();
    for s in [Strategy::DataParallel, Strategy::Zero3] {
        let mem = derive_memory(&model, &cluster, &s.spec(), &MemoryOptions::default());
        let comm = derive_communication(&model, &cluster, &s.spec(), &CommOptions::default());
        println!("== {s}");
        print!("{}", memory_table(&mem, Units::default()));
        print!("{}", comm_table(&comm, Units::default()));
        totals.push((mem.model_state_bytes, comm.total_bytes_per_device_per_step));
    }
    let (dp, z3) = (totals[0], totals[1]);
    println!(
        "memory {}× smaller, communication {}× larger",
        dp.0.ratio() / z3.0.ratio(),
        z3.1.ratio() / dp.1.ratio()
    );
}
