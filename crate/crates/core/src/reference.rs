//! The fixed 70B-parameter reference numbers, recomputed through the cost
//! engine and compared exactly.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::cost::{derive_communication, derive_memory, CommOptions, MemoryOptions};
use crate::placement::Strategy;
use crate::profile::{ClusterProfile, ModelProfile};
use crate::units::{Bytes, GB};

pub const REFERENCE_PARAMS: u64 = 70_000_000_000;
pub const REFERENCE_LAYERS: u64 = 80;
pub const REFERENCE_HIDDEN: u64 = 8192;
pub const REFERENCE_DEVICE_MEMORY: i128 = 80 * GB;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub got: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub devices: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn check(name: &str, expected: impl ToString, got: impl ToString, pass: bool) -> Check {
    Check {
        name: name.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
        pass,
    }
}

fn bytes_check(name: &str, expected: Bytes, got: Bytes) -> Check {
    check(
        name,
        format!("{} ({expected} B)", expected.human(false)),
        format!("{} ({got} B)", got.human(false)),
        expected == got,
    )
}

pub fn reference_model() -> ModelProfile {
    ModelProfile::mixed_precision(REFERENCE_PARAMS, REFERENCE_LAYERS, REFERENCE_HIDDEN)
        .expect("reference profile is valid")
}

/// DP against ZeRO-3 for the reference model on `n` devices.
///
/// Expected values are the closed forms `16P`, `16P/N`, `N`,
/// `2·(N−1)/N·2P`, `(N−1)/N·2P + 2·(N−1)/N·2P` and their ratio `3/2`; at
/// `N = 8` they are 1120 GB, 140 GB, 8×, 3.5P, 5.25P and 1.5×.
pub fn suite(n: u64) -> Suite {
    let model = reference_model();
    let cluster = ClusterProfile::single_node(n, Bytes::new(REFERENCE_DEVICE_MEMORY));
    let mem_opts = MemoryOptions::default();
    let comm_opts = CommOptions::default();
    let dp = Strategy::DataParallel.spec();
    let z3 = Strategy::Zero3.spec();
    let p = REFERENCE_PARAMS as i128;
    let n_i = n as i128;
    let frac = Ratio::new(n_i - 1, n_i);

    let dp_mem = derive_memory(&model, &cluster, &dp, &mem_opts);
    let z3_mem = derive_memory(&model, &cluster, &z3, &mem_opts);
    let dp_comm = derive_communication(&model, &cluster, &dp, &comm_opts);
    let z3_comm = derive_communication(&model, &cluster, &z3, &comm_opts);

    let mut checks = vec![
        bytes_check("DP model state per device", Bytes::new(16 * p), dp_mem.model_state_bytes),
        bytes_check(
            "ZeRO-3 persistent model state per device",
            Bytes::new(16 * p) / n_i,
            z3_mem.model_state_bytes,
        ),
    ];
    let mem_ratio = dp_mem.model_state_bytes.ratio_to(z3_mem.model_state_bytes);
    checks.push(check(
        "memory reduction DP / ZeRO-3",
        format!("{n}×"),
        mem_ratio.map_or("undefined".into(), |r| format!("{r}×")),
        mem_ratio == Some(Ratio::from_integer(n_i)),
    ));
    let dp_expected = Bytes::new(2 * p) * frac * 2;
    let z3_expected = Bytes::new(2 * p) * frac + Bytes::new(2 * p) * frac * 2;
    let per_p = |b: Bytes| b.ratio() / Ratio::from_integer(p);
    checks.push(check(
        "DP communication per device per step",
        format!("{}·P = {}", per_p(dp_expected), dp_expected.human(false)),
        format!(
            "{}·P = {}",
            per_p(dp_comm.total_bytes_per_device_per_step),
            dp_comm.total_bytes_per_device_per_step.human(false)
        ),
        dp_comm.total_bytes_per_device_per_step == dp_expected,
    ));
    checks.push(check(
        "ZeRO-3 communication per device per step",
        format!("{}·P = {}", per_p(z3_expected), z3_expected.human(false)),
        format!(
            "{}·P = {}",
            per_p(z3_comm.total_bytes_per_device_per_step),
            z3_comm.total_bytes_per_device_per_step.human(false)
        ),
        z3_comm.total_bytes_per_device_per_step == z3_expected,
    ));
    let comm_ratio = z3_comm
        .total_bytes_per_device_per_step
        .ratio_to(dp_comm.total_bytes_per_device_per_step);
    checks.push(if n == 1 {
        check(
            "communication overhead ZeRO-3 / DP",
            "0 B and 0 B (one device)",
            format!(
                "{} B and {} B",
                z3_comm.total_bytes_per_device_per_step, dp_comm.total_bytes_per_device_per_step
            ),
            z3_comm.total_bytes_per_device_per_step.is_zero()
                && dp_comm.total_bytes_per_device_per_step.is_zero(),
        )
    } else {
        check(
            "communication overhead ZeRO-3 / DP",
            "3/2",
            comm_ratio.map_or("undefined".into(), |r| r.to_string()),
            comm_ratio == Some(Ratio::new(3, 2)),
        )
    });
    let passed = checks.iter().all(|c| c.pass);
    Suite {
        devices: n,
        checks,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_devices_match_published_numbers() {
        let s = suite(8);
        assert!(s.passed, "{s:#?}");
        assert!(s.checks[0].got.starts_with("1120 GB"));
        assert!(s.checks[1].got.starts_with("140 GB"));
        assert_eq!(s.checks[2].got, "8×");
        assert!(s.checks[3].got.starts_with("7/2·P = 245 GB"));
        assert!(s.checks[4].got.starts_with("21/4·P = 368 GB"));
        assert_eq!(s.checks[5].got, "3/2");
    }

    #[test]
    fn one_device_has_no_traffic() {
        let s = suite(1);
        assert!(s.passed, "{s:#?}");
    }

    #[test]
    fn other_sizes_keep_three_halves() {
        for n in [2, 4, 16, 128] {
            assert!(suite(n).passed);
        }
    }
}
