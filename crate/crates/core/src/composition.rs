//! Device grids that combine tensor, pipeline and data parallelism, the
//! structural conditions under which such a grid trains correctly, and the
//! per-device costs of a composed layout.
//!
//! Device `id = t + T·d + T·D·k` for tensor rank `t`, data replica `d` and
//! pipeline stage `k`. Tensor groups are therefore contiguous blocks of `T`
//! devices, and every stage occupies a contiguous block of `T·D` devices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{
    derive_communication, derive_memory, CommLabel, CommOptions, CommReport, CommTerm, Dimension,
    MemoryOptions, MemoryReport,
};
use crate::error::CompositionError;
use crate::placement::{PlacementSpec, Strategy};
use crate::profile::{ClusterProfile, LinkClass, ModelProfile, Scope};
use crate::units::{ring_fraction, Bytes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorKind {
    #[serde(rename = "TP", alias = "tp")]
    Tensor,
    #[serde(rename = "PP", alias = "pp")]
    Pipeline,
    #[serde(rename = "DP", alias = "dp")]
    Data,
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorKind::Tensor => "TP",
            FactorKind::Pipeline => "PP",
            FactorKind::Data => "DP",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    pub degree: u64,
}

impl Factor {
    pub fn tp(degree: u64) -> Self {
        Factor {
            kind: FactorKind::Tensor,
            degree,
        }
    }

    pub fn pp(degree: u64) -> Self {
        Factor {
            kind: FactorKind::Pipeline,
            degree,
        }
    }

    pub fn dp(degree: u64) -> Self {
        Factor {
            kind: FactorKind::Data,
            degree,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind, self.degree)
    }
}

/// Grid coordinates of one device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub t: u64,
    pub k: u64,
    pub d: u64,
}

/// Declared execution order; checked behaviourally by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Every tensor-parallel collective of a step finishes before the
    /// data-parallel gradient sync starts.
    pub tp_before_dp_sync: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            tp_before_dp_sync: true,
        }
    }
}

/// A materialized device grid. Fields are public so hand-built (possibly
/// wrong) grids can be fed to [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpec {
    /// Canonical order: TP, PP, DP.
    pub factors: Vec<Factor>,
    pub tp: u64,
    pub pp: u64,
    pub dp: u64,
    pub devices: u64,
    /// `coords[id]`.
    pub coords: Vec<GridCoord>,
    /// Devices that split each layer (same `k`, `d`).
    pub tp_groups: Vec<Vec<u64>>,
    /// Devices that sync gradients (same `t`, `k`).
    pub dp_groups: Vec<Vec<u64>>,
    /// One pipeline per `(t, d)`, ordered by stage.
    pub pipelines: Vec<Vec<u64>>,
    /// Placement applied across the data-parallel dimension.
    pub data_placement: PlacementSpec,
    pub schedule: Schedule,
}

impl CompositionSpec {
    pub fn id(&self, c: GridCoord) -> u64 {
        c.t + self.tp * c.d + self.tp * self.dp * c.k
    }

    pub fn with_data_placement(mut self, spec: PlacementSpec) -> Self {
        self.data_placement = spec;
        self
    }

    /// Devices holding stage `k`.
    pub fn stage_devices(&self, k: u64) -> Vec<u64> {
        (0..self.devices).filter(|&i| self.coords[i as usize].k == k).collect()
    }
}

impl fmt::Display for CompositionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(Factor::to_string).collect();
        write!(f, "{}", parts.join(" × "))
    }
}

/// Builds the canonical grid (TP innermost) for `factors` on `cluster`.
///
/// Missing kinds get degree 1; each kind may appear at most once.
pub fn compose(factors: &[Factor], cluster: &ClusterProfile) -> Result<CompositionSpec, CompositionError> {
    let degree = |kind: FactorKind| -> Result<u64, CompositionError> {
        let found: Vec<&Factor> = factors.iter().filter(|f| f.kind == kind).collect();
        match found.as_slice() {
            [] => Ok(1),
            [f] if f.degree >= 1 => Ok(f.degree),
            [f] => Err(CompositionError::Unsupported(format!("{f}: degree must be at least 1"))),
            _ => Err(CompositionError::Unsupported(format!(
                "{kind} appears {} times; only TP ⊗ DP, PP ⊗ DP and TP ⊗ PP ⊗ DP are defined",
                found.len()
            ))),
        }
    };
    let (tp, pp, dp) = (
        degree(FactorKind::Tensor)?,
        degree(FactorKind::Pipeline)?,
        degree(FactorKind::Data)?,
    );
    let product = tp * pp * dp;
    if product != cluster.device_count {
        return Err(CompositionError::DegreeMismatch {
            product,
            devices: cluster.device_count,
        });
    }

    let coords: Vec<GridCoord> = (0..product)
        .map(|id| GridCoord {
            t: id % tp,
            d: (id / tp) % dp,
            k: id / (tp * dp),
        })
        .collect();
    let id = |t: u64, k: u64, d: u64| t + tp * d + tp * dp * k;
    let mut tp_groups = Vec::new();
    let mut pipelines = Vec::new();
    let mut dp_groups = Vec::new();
    for k in 0..pp {
        for d in 0..dp {
            tp_groups.push((0..tp).map(|t| id(t, k, d)).collect());
        }
    }
    for k in 0..pp {
        for t in 0..tp {
            dp_groups.push((0..dp).map(|d| id(t, k, d)).collect());
        }
    }
    for d in 0..dp {
        for t in 0..tp {
            pipelines.push((0..pp).map(|k| id(t, k, d)).collect());
        }
    }
    Ok(CompositionSpec {
        factors: vec![Factor::tp(tp), Factor::pp(pp), Factor::dp(dp)],
        tp,
        pp,
        dp,
        devices: product,
        coords,
        tp_groups,
        dp_groups,
        pipelines,
        data_placement: Strategy::DataParallel.spec(),
        schedule: Schedule::default(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `tensor-data`, `pipeline-data` or `grid`.
    pub rule: String,
    /// 1-based condition index within the rule (0 for grid shape checks).
    pub condition: u8,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyWarning {
    pub layers: u64,
    pub alpha_s: f64,
    /// `L·α` seconds of latency added to every step.
    pub overhead_s: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub valid: bool,
    pub violated_conditions: Vec<Violation>,
    pub latency_warning: Option<LatencyWarning>,
}

fn is_partition(groups: &[Vec<u64>], n: u64) -> bool {
    let mut seen = BTreeSet::new();
    for g in groups {
        for &x in g {
            if x >= n || !seen.insert(x) {
                return false;
            }
        }
    }
    seen.len() as u64 == n
}

/// Checks the grid against the tensor-data and pipeline-data composition
/// conditions and warns when a tensor group crosses a slow link.
pub fn validate(comp: &CompositionSpec, cluster: &ClusterProfile, model: &ModelProfile) -> ValidationVerdict {
    let mut v = Vec::new();
    macro_rules! flag {
        ($rule:expr, $condition:expr, $explanation:expr $(,)?) => {
            v.push(Violation {
                rule: $rule.to_string(),
                condition: $condition,
                explanation: $explanation,
            })
        };
    }
    let n = comp.devices;
    let (tp, pp, dp) = (comp.tp, comp.pp, comp.dp);

    if tp * pp * dp != n || comp.coords.len() as u64 != n {
        flag!("grid", 0, format!("degrees {tp}·{pp}·{dp} do not cover {n} devices"));
    }
    for (name, groups) in [
        ("tensor groups", &comp.tp_groups),
        ("data groups", &comp.dp_groups),
        ("pipelines", &comp.pipelines),
    ] {
        if !is_partition(groups, n) {
            flag!("grid", 0, format!("{name} do not partition the {n} devices"));
        }
    }
    if !v.is_empty() {
        return ValidationVerdict {
            valid: false,
            violated_conditions: v,
            latency_warning: None,
        };
    }
    let coord = |i: u64| comp.coords[i as usize];

    if tp > 1 {
        let expected: BTreeSet<Vec<u64>> = (0..n / tp)
            .map(|i| (i * tp..(i + 1) * tp).collect())
            .collect();
        let got: BTreeSet<Vec<u64>> = comp
            .tp_groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.sort_unstable();
                g
            })
            .collect();
        if got != expected {
            flag!(
                "tensor-data",
                1,
                format!("tensor groups must be the contiguous blocks {{iT..(i+1)T−1}} with T = {tp}"),
            );
        }
        if !comp.schedule.tp_before_dp_sync {
            flag!(
                "tensor-data",
                2,
                "tensor-parallel communication must finish before the gradient sync".into(),
            );
        }
        let group_of = |x: u64| comp.tp_groups.iter().position(|g| g.contains(&x));
        for g in &comp.dp_groups {
            let owners: BTreeSet<_> = g.iter().map(|&x| group_of(x)).collect();
            if owners.len() != g.len() {
                flag!(
                    "tensor-data",
                    3,
                    format!("gradient sync group {g:?} aggregates within a tensor group instead of across tensor groups"),
                );
                break;
            }
        }
    }

    if pp > 1 {
        let block = n / pp;
        for k in 0..pp {
            let got = comp.stage_devices(k);
            let expected: Vec<u64> = (k * block..(k + 1) * block).collect();
            if got != expected {
                flag!(
                    "pipeline-data",
                    1,
                    format!("stage {k} must occupy devices {}..{}", k * block, (k + 1) * block - 1),
                );
                break;
            }
        }
        if comp
            .dp_groups
            .iter()
            .any(|g| g.iter().map(|&x| coord(x).k).collect::<BTreeSet<_>>().len() > 1)
        {
            flag!(
                "pipeline-data",
                2,
                "gradient sync must stay among replicas of one stage".into(),
            );
        }
        let bad_pipeline = comp.pipelines.iter().any(|p| {
            p.len() as u64 != pp
                || p.iter().enumerate().any(|(k, &x)| {
                    let c = coord(x);
                    c.k != k as u64 || c.t != coord(p[0]).t || c.d != coord(p[0]).d
                })
        });
        if bad_pipeline {
            flag!(
                "pipeline-data",
                3,
                "activations must flow between consecutive stages of the same pipeline".into(),
            );
        }
    }

    let latency_warning = if tp > 1 {
        tp_latency(comp, cluster, model)
    } else {
        None
    };
    ValidationVerdict {
        valid: v.is_empty(),
        violated_conditions: v,
        latency_warning,
    }
}

/// One synchronous collective per layer on whatever link the widest tensor
/// group uses.
fn tp_latency(comp: &CompositionSpec, cluster: &ClusterProfile, model: &ModelProfile) -> Option<LatencyWarning> {
    let spans_nodes = comp.tp_groups.iter().any(|g| {
        g.iter()
            .map(|&x| cluster.node_of(x))
            .collect::<BTreeSet<_>>()
            .len()
            > 1
    });
    let scope = if spans_nodes {
        Scope::InterNode
    } else {
        Scope::IntraNode
    };
    let tier = cluster.tier(scope)?;
    if tier.class != LinkClass::Slow {
        return None;
    }
    let where_ = if spans_nodes { "spans nodes over" } else { "runs on" };
    Some(LatencyWarning {
        layers: model.layers,
        alpha_s: tier.latency_s,
        overhead_s: model.layers as f64 * tier.latency_s,
        detail: format!(
            "tensor group {where_} a slow link: {} layers × {} s latency per step",
            model.layers, tier.latency_s
        ),
    })
}

/// Inputs for the composed terms the placement rules cannot derive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionOptions {
    /// Payload of one tensor-parallel activation all-reduce.
    pub tp_activation_bytes: Option<Bytes>,
    /// Tensor all-reduces per step; defaults to `2·L` (one forward, one
    /// backward per layer).
    pub tp_allreduces_per_step: Option<u64>,
    /// Activation bytes crossing one stage boundary per step.
    pub pp_boundary_activation_bytes: Option<Bytes>,
    pub comm: CommOptions,
    pub memory: MemoryOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedReport {
    pub composition: String,
    pub memory: MemoryReport,
    pub comm: CommReport,
}

/// Tensor and pipeline degrees divide every state; the data-parallel
/// placement is then applied over the `D` replicas.
pub fn composed_costs(
    comp: &CompositionSpec,
    model: &ModelProfile,
    cluster: &ClusterProfile,
    opts: &CompositionOptions,
) -> ComposedReport {
    let mut local = model.split(comp.tp * comp.pp);
    local.s_unit = model.s_unit / comp.tp as i128;
    let dp_cluster = cluster.with_devices(comp.dp);
    let mut memory = derive_memory(&local, &dp_cluster, &comp.data_placement, &opts.memory);
    memory.devices = comp.devices;
    let dp_comm = derive_communication(&local, &dp_cluster, &comp.data_placement, &opts.comm);

    let mut terms: Vec<CommTerm> = dp_comm.terms;
    if comp.tp > 1 {
        if let Some(a) = opts.tp_activation_bytes {
            let count = opts.tp_allreduces_per_step.unwrap_or(2 * model.layers);
            let t = comp.tp;
            terms.push(CommTerm {
                label: CommLabel::TpActivationAllreduce,
                dimension: Dimension::Tensor,
                bytes: a * ring_fraction(t) * 2 * count as i128,
                amortized: false,
                formula: format!("{count}·2·(T−1)/T·a = {count}·2·{}/{t}·{a}", t - 1),
            });
        }
    }
    if comp.pp > 1 {
        if let Some(a) = opts.pp_boundary_activation_bytes {
            let k = comp.pp;
            terms.push(CommTerm {
                label: CommLabel::PpActivationTransfer,
                dimension: Dimension::Pipeline,
                bytes: a * (k - 1) as i128,
                amortized: false,
                formula: format!("(K−1)·a = {}·{a}", k - 1),
            });
        }
    }
    let mut comm = CommReport::from_terms(comp.devices, comp.data_placement, terms, opts.comm.accumulation_steps);
    comm.devices = comp.devices;
    ComposedReport {
        composition: comp.to_string(),
        memory,
        comm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Tier;
    use crate::units::GB;

    fn cluster(n: u64) -> ClusterProfile {
        ClusterProfile::single_node(n, Bytes::new(80 * GB))
    }

    fn seventy_b() -> ModelProfile {
        ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap()
    }

    #[test]
    fn tp4_dp2_groups() {
        let c = compose(&[Factor::tp(4), Factor::dp(2)], &cluster(8)).unwrap();
        assert_eq!(c.tp_groups, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(c.dp_groups, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
        let v = validate(&c, &cluster(8), &seventy_b());
        assert!(v.valid && v.latency_warning.is_none(), "{v:?}");
    }

    #[test]
    fn factor_order_does_not_matter() {
        let a = compose(&[Factor::dp(2), Factor::tp(4)], &cluster(8)).unwrap();
        let b = compose(&[Factor::tp(4), Factor::dp(2)], &cluster(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert_eq!(
            compose(&[Factor::tp(4), Factor::dp(4)], &cluster(8)),
            Err(CompositionError::DegreeMismatch { product: 16, devices: 8 })
        );
        assert!(matches!(
            compose(&[Factor::tp(2), Factor::tp(4)], &cluster(8)),
            Err(CompositionError::Unsupported(_))
        ));
    }

    #[test]
    fn three_way_grid() {
        let c = compose(&[Factor::tp(2), Factor::pp(2), Factor::dp(2)], &cluster(8)).unwrap();
        let distinct: BTreeSet<_> = c.coords.iter().collect();
        assert_eq!(distinct.len(), 8);
        for i in 0..8 {
            assert_eq!(c.id(c.coords[i as usize]), i);
        }
        assert_eq!(c.stage_devices(1), vec![4, 5, 6, 7]);
        assert!(validate(&c, &cluster(8), &seventy_b()).valid);
    }

    #[test]
    fn pp_dp_stage_blocks() {
        let c = compose(&[Factor::pp(2), Factor::dp(2)], &cluster(4)).unwrap();
        assert_eq!(c.dp_groups, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(c.pipelines, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn every_factorization_partitions_and_validates() {
        for n in 1..=16u64 {
            for tp in (1..=n).filter(|t| n % t == 0) {
                for pp in (1..=n / tp).filter(|p| (n / tp) % p == 0) {
                    let dp = n / tp / pp;
                    let c = compose(&[Factor::tp(tp), Factor::pp(pp), Factor::dp(dp)], &cluster(n)).unwrap();
                    assert!(is_partition(&c.tp_groups, n));
                    assert!(is_partition(&c.dp_groups, n));
                    assert!(is_partition(&c.pipelines, n));
                    let v = validate(&c, &cluster(n), &seventy_b());
                    assert!(v.valid, "TP{tp} PP{pp} DP{dp}: {v:?}");
                }
            }
        }
    }

    #[test]
    fn sync_within_tensor_groups_is_flagged() {
        let mut c = compose(&[Factor::tp(4), Factor::dp(2)], &cluster(8)).unwrap();
        c.dp_groups = c.tp_groups.clone();
        let v = validate(&c, &cluster(8), &seventy_b());
        assert!(!v.valid);
        assert!(v
            .violated_conditions
            .iter()
            .any(|x| x.rule == "tensor-data" && x.condition == 3));
    }

    #[test]
    fn schedule_order_is_a_condition() {
        let mut c = compose(&[Factor::tp(2), Factor::dp(2)], &cluster(4)).unwrap();
        c.schedule.tp_before_dp_sync = false;
        let v = validate(&c, &cluster(4), &seventy_b());
        assert_eq!(v.violated_conditions[0].condition, 2);
    }

    #[test]
    fn slow_tier_latency_warning() {
        let cl = ClusterProfile::new(
            8,
            Bytes::new(80 * GB),
            vec![
                Tier { scope: Scope::IntraNode, latency_s: 1e-6, class: LinkClass::Fast },
                Tier { scope: Scope::InterNode, latency_s: 5e-6, class: LinkClass::Slow },
            ],
        )
        .unwrap()
        .with_devices_per_node(2);
        let c = compose(&[Factor::tp(4), Factor::dp(2)], &cl).unwrap();
        let w = validate(&c, &cl, &seventy_b()).latency_warning.unwrap();
        assert_eq!(w.layers, 80);
        assert!((w.overhead_s - 4e-4).abs() < 1e-15);
    }

    #[test]
    fn tp1_is_plain_dp() {
        let m = seventy_b();
        let cl = cluster(8);
        let c = compose(&[Factor::tp(1), Factor::dp(8)], &cl).unwrap();
        let r = composed_costs(&c, &m, &cl, &CompositionOptions::default());
        let spec = Strategy::DataParallel.spec();
        assert_eq!(r.memory, derive_memory(&m, &cl, &spec, &MemoryOptions::default()));
        assert_eq!(r.comm, derive_communication(&m, &cl, &spec, &CommOptions::default()));
    }

    #[test]
    fn tp4_dp2_is_280_gb() {
        let m = seventy_b();
        let cl = cluster(8);
        let c = compose(&[Factor::tp(4), Factor::dp(2)], &cl).unwrap();
        let r = composed_costs(&c, &m, &cl, &CompositionOptions::default());
        assert_eq!(r.memory.model_state_bytes, Bytes::new(280 * GB));
    }

    #[test]
    fn pure_pipeline_only_moves_activations() {
        let m = seventy_b();
        let cl = cluster(4);
        let c = compose(&[Factor::pp(4)], &cl).unwrap();
        let a = Bytes::new(1_000_000);
        let opts = CompositionOptions {
            pp_boundary_activation_bytes: Some(a),
            ..Default::default()
        };
        let r = composed_costs(&c, &m, &cl, &opts);
        assert_eq!(r.memory.model_state_bytes, Bytes::new(16 * 70_000_000_000 / 4));
        assert_eq!(r.comm.total_bytes_per_device_per_step, a * 3);
        assert_eq!(r.comm.bytes_for(CommLabel::PpActivationTransfer), a * 3);
    }
}
