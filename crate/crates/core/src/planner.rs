//! Threshold-based strategy selection from model size, device memory,
//! device count and interconnect.
//!
//! The rules run in a fixed order: replicate everything if the model state
//! fits, else shard it ZeRO-3 style, else consider tensor parallelism inside
//! a node. Every plan is re-derived through the cost engine and marked
//! infeasible when the persistent model state per device still breaks the
//! memory threshold.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::composition::{compose, composed_costs, CompositionOptions, CompositionSpec, Factor};
use crate::cost::{derive_communication, derive_memory, CommOptions, CommReport, MemoryOptions, MemoryReport};
use crate::error::ConfigError;
use crate::placement::{PlacementSpec, Strategy};
use crate::profile::{ClusterProfile, ModelProfile};
use crate::units::Bytes;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Fraction of device memory the persistent model state may use.
    pub model_state_threshold: f64,
    /// Fraction of device memory above which one layer is "too big".
    pub layer_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            model_state_threshold: 0.7,
            layer_threshold: 0.3,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("planner.model_state_threshold", self.model_state_threshold),
            ("planner.layer_threshold", self.layer_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::invalid(field, format!("must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Decimal fraction as an exact ratio (0.7 → 7/10, not the nearest double).
fn fraction(x: f64) -> Ratio<i128> {
    Ratio::approximate_float(x).expect("threshold validated to lie in (0, 1]")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    DataParallel,
    Zero3,
    TensorParallel,
    NoFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanSpec {
    Placement { spec: PlacementSpec },
    Composition { composition: CompositionSpec },
}

/// The inequality a plan must satisfy, evaluated on the predicted report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub description: String,
    /// Persistent model state per device from the cost engine.
    pub predicted_bytes: Bytes,
    pub limit_bytes: Bytes,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub branch: Branch,
    pub spec: PlanSpec,
    pub feasible: bool,
    /// Named when the plan is infeasible.
    pub binding_constraint: Option<String>,
    /// Rules evaluated, in order.
    pub rationale: Vec<String>,
    pub guard: Guard,
    pub predicted_memory: MemoryReport,
    pub predicted_comm: CommReport,
}

fn guard(memory: &MemoryReport, limit: Bytes, threshold: f64) -> Guard {
    let predicted = memory.model_state_bytes;
    Guard {
        description: format!("persistent model state per device < {threshold}·M_d"),
        predicted_bytes: predicted,
        limit_bytes: limit,
        holds: predicted < limit,
    }
}

pub fn select(model: &ModelProfile, cluster: &ClusterProfile, cfg: &PlannerConfig) -> Plan {
    let t = fraction(cfg.model_state_threshold);
    let lt = fraction(cfg.layer_threshold);
    let md = cluster.device_memory;
    let limit = md * t;
    let layer_limit = md * lt;
    let n = cluster.device_count;
    let m_model = model.model_state_bytes();
    let mut why = vec![format!(
        "M_model = |Θ|+|Ω|+|G| = {} ({}); limit {}·M_d = {}",
        m_model,
        m_model.human(false),
        cfg.model_state_threshold,
        limit.human(false)
    )];

    let placement_plan = |branch: Branch, spec: PlacementSpec, why: Vec<String>| {
        let memory = derive_memory(model, cluster, &spec, &MemoryOptions::default());
        let comm = derive_communication(model, cluster, &spec, &CommOptions::default());
        let g = guard(&memory, limit, cfg.model_state_threshold);
        Plan {
            branch,
            spec: PlanSpec::Placement { spec },
            feasible: g.holds && branch != Branch::NoFit,
            binding_constraint: None,
            rationale: why,
            guard: g,
            predicted_memory: memory,
            predicted_comm: comm,
        }
    };

    if m_model < limit {
        why.push("M_model fits: replicate every state (data parallelism)".into());
        return placement_plan(Branch::DataParallel, Strategy::DataParallel.spec(), why);
    }
    why.push("M_model does not fit on one device".into());
    let per_device = m_model / n as i128;
    if per_device < limit {
        why.push(format!(
            "M_model/N = {} fits: shard states, gather parameters per layer (ZeRO-3)",
            per_device.human(false)
        ));
        return placement_plan(Branch::Zero3, Strategy::Zero3.spec(), why);
    }
    why.push(format!("M_model/N = {} does not fit", per_device.human(false)));

    let layer = model.layer_bytes();
    let big_layer = layer > layer_limit;
    let fast = cluster.has_fast_intra_node();
    if big_layer && fast {
        let tp = tp_degree(layer, layer_limit, cluster);
        why.push(format!(
            "one layer is {} > {}·M_d and a fast intra-node link exists: add tensor parallelism of degree {tp} within a node",
            layer.human(false),
            cfg.layer_threshold
        ));
        why.push(format!(
            "pair TP({tp}) with ZeRO-3 across the remaining {} devices",
            n / tp
        ));
        let comp = compose(&[Factor::tp(tp), Factor::dp(n / tp)], cluster)
            .expect("degree divides the device count")
            .with_data_placement(Strategy::Zero3.spec());
        let report = composed_costs(&comp, model, cluster, &CompositionOptions::default());
        let g = guard(&report.memory, limit, cfg.model_state_threshold);
        let binding = (!g.holds).then(|| {
            format!(
                "persistent model state per device {} ≥ {}·M_d = {} (TP×ZeRO-3 leaves M_model/N per device)",
                g.predicted_bytes.human(false),
                cfg.model_state_threshold,
                limit.human(false)
            )
        });
        if binding.is_some() {
            why.push("composed plan still exceeds the memory threshold: infeasible".into());
        }
        return Plan {
            branch: Branch::TensorParallel,
            spec: PlanSpec::Composition { composition: comp },
            feasible: g.holds,
            binding_constraint: binding,
            rationale: why,
            guard: g,
            predicted_memory: report.memory,
            predicted_comm: report.comm,
        };
    }

    if !big_layer {
        why.push(format!(
            "one layer is {} ≤ {}·M_d: tensor parallelism not indicated",
            layer.human(false),
            cfg.layer_threshold
        ));
    } else {
        why.push("no fast intra-node link: tensor parallelism not indicated".into());
    }
    let mut plan = placement_plan(Branch::NoFit, Strategy::Zero3.spec(), why);
    plan.binding_constraint = Some(format!(
        "M_model/N = {} ≥ {}·M_d = {}",
        per_device.human(false),
        cfg.model_state_threshold,
        limit.human(false)
    ));
    plan.rationale.push("nothing fits: infeasible".into());
    plan
}

/// Smallest power of two that brings one layer under the limit, capped at
/// the node size and reduced until it divides the device count.
fn tp_degree(layer: Bytes, limit: Bytes, cluster: &ClusterProfile) -> u64 {
    let cap = cluster.devices_per_node.min(cluster.device_count).max(1);
    let mut t = 1u64;
    while layer / t as i128 > limit && t < cap {
        t *= 2;
    }
    t = t.min(cap);
    while cluster.device_count % t != 0 {
        t /= 2;
    }
    t.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GB;
    use proptest::{prop_assert, proptest};

    const P70: u64 = 70_000_000_000;

    fn model(p: u64, layers: u64, hidden: u64) -> ModelProfile {
        ModelProfile::mixed_precision(p, layers, hidden).unwrap()
    }

    #[test]
    fn small_model_is_dp() {
        // 16P = 0.5·M_d
        let m = model(2_500_000_000, 32, 2560);
        let c = ClusterProfile::single_node(8, Bytes::new(80 * GB));
        let plan = select(&m, &c, &PlannerConfig::default());
        assert_eq!(plan.branch, Branch::DataParallel);
        assert!(plan.feasible);
    }

    #[test]
    fn seventy_b_on_128_is_zero3() {
        let c = ClusterProfile::single_node(128, Bytes::new(80 * GB)).with_devices_per_node(8);
        let plan = select(&model(P70, 80, 8192), &c, &PlannerConfig::default());
        assert_eq!(plan.branch, Branch::Zero3);
        assert!(plan.feasible);
        assert_eq!(plan.guard.predicted_bytes, Bytes::new(8_750_000_000));
    }

    #[test]
    fn seventy_b_on_8_does_not_fit() {
        let c = ClusterProfile::single_node(8, Bytes::new(80 * GB));
        let plan = select(&model(P70, 80, 8192), &c, &PlannerConfig::default());
        assert_eq!(plan.branch, Branch::NoFit);
        assert!(!plan.feasible);
        assert!(plan.binding_constraint.unwrap().contains("140 GB"));
    }

    #[test]
    fn huge_layer_triggers_tensor_parallelism() {
        // one 40k-wide layer: 2·12·40000² = 38.4 GB of parameters, and
        // 16P/4 = 76.8 GB of state per device
        let h = 40_000;
        let m = model(12 * h * h, 1, h);
        let c = ClusterProfile::single_node(4, Bytes::new(80 * GB));
        let plan = select(&m, &c, &PlannerConfig::default());
        assert_eq!(plan.branch, Branch::TensorParallel);
        let PlanSpec::Composition { composition } = &plan.spec else { panic!() };
        assert_eq!(composition.tp, 2);
        assert_eq!(composition.data_placement, Strategy::Zero3.spec());
        assert!(!plan.feasible);
        assert!(plan.binding_constraint.is_some());
    }

    #[test]
    fn threshold_is_exact_decimal() {
        assert_eq!(fraction(0.7), Ratio::new(7, 10));
        assert_eq!(fraction(0.3), Ratio::new(3, 10));
    }

    proptest! {
        #[test]
        fn more_memory_never_leaves_dp(p in 1u64..200, gb in 1i128..200, extra in 0i128..200, n in 1u64..64) {
            let m = model(p * 1_000_000_000, 32, 4096);
            let lo = ClusterProfile::single_node(n, Bytes::new(gb * GB));
            let hi = ClusterProfile::single_node(n, Bytes::new((gb + extra) * GB));
            let cfg = PlannerConfig::default();
            let a = select(&m, &lo, &cfg);
            let b = select(&m, &hi, &cfg);
            if a.branch == Branch::DataParallel {
                prop_assert!(b.branch == Branch::DataParallel);
            }
            for plan in [a, b] {
                if plan.feasible {
                    prop_assert!(plan.predicted_memory.model_state_bytes < plan.guard.limit_bytes);
                }
            }
        }
    }
}
