//! Per-device memory and per-step communication derived from a placement.
//!
//! All arithmetic is exact (see [`Bytes`]); reports carry the formula used
//! for every term so a reader can audit each number.

use serde::{Deserialize, Serialize};

use crate::placement::{PlacementMode, PlacementSpec, Strategy, TrainingState};
use crate::profile::{ClusterProfile, ModelProfile};
use crate::units::{ring_fraction, Bytes};

/// Device bytes for one state under one mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub persistent: Bytes,
    pub transient: Bytes,
}

impl Footprint {
    pub fn total(&self) -> Bytes {
        self.persistent + self.transient
    }
}

/// Per-device GPU bytes of a state of `size` bytes placed with `mode` over
/// `n` devices, gathering one `s_unit` at a time.
pub fn mu(mode: PlacementMode, size: Bytes, n: u64, s_unit: Bytes) -> Footprint {
    mu_with_prefetch(mode, size, n, s_unit, 1)
}

/// Like [`mu`], but S* keeps `prefetch_depth` gathered units alive at once.
pub fn mu_with_prefetch(
    mode: PlacementMode,
    size: Bytes,
    n: u64,
    s_unit: Bytes,
    prefetch_depth: u32,
) -> Footprint {
    let n = n.max(1) as i128;
    let (persistent, transient) = match mode {
        PlacementMode::Replicated => (size, Bytes::ZERO),
        PlacementMode::Sharded => (size / n, Bytes::ZERO),
        PlacementMode::ShardedWithGather => (size / n, s_unit * prefetch_depth as i128),
        PlacementMode::Materialized => (Bytes::ZERO, s_unit),
        PlacementMode::Offloaded => (Bytes::ZERO, Bytes::ZERO),
    };
    Footprint {
        persistent,
        transient,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryOptions {
    /// Divide `|A|` by `N` before placing it (each device holds activations
    /// of its own data shard only).
    pub data_parallel_act_split: bool,
    /// Gathered units alive at once for S*; 2 models gather/compute overlap.
    pub prefetch_depth: u32,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        MemoryOptions {
            data_parallel_act_split: true,
            prefetch_depth: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMemory {
    pub state: TrainingState,
    pub mode: PlacementMode,
    /// Size fed into the placement rule (after any data split).
    pub size_bytes: Bytes,
    pub persistent_bytes: Bytes,
    pub transient_bytes: Bytes,
    /// Host-side bytes for offloaded states; never counted on the device.
    pub offloaded_bytes: Bytes,
    pub formula: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub devices: u64,
    pub spec: PlacementSpec,
    pub per_state: Vec<StateMemory>,
    pub total_gpu_bytes: Bytes,
    pub persistent_bytes: Bytes,
    pub transient_bytes: Bytes,
    /// Persistent bytes of Θ, Ω and G: the "model state" figure.
    pub model_state_bytes: Bytes,
    pub offloaded_bytes: Bytes,
    /// False when the model profile carries no activation size.
    pub activations_modelled: bool,
}

impl MemoryReport {
    pub fn state(&self, state: TrainingState) -> &StateMemory {
        self.per_state
            .iter()
            .find(|s| s.state == state)
            .expect("every report carries all four states")
    }

    /// Θ, Ω and G including transient gather buffers, activations excluded.
    pub fn model_state_total_bytes(&self) -> Bytes {
        self.per_state
            .iter()
            .filter(|s| s.state != TrainingState::Activations)
            .map(|s| s.persistent_bytes + s.transient_bytes)
            .sum()
    }
}

fn mu_formula(mode: PlacementMode, size: Bytes, n: u64, s_unit: Bytes, prefetch: u32) -> String {
    match mode {
        PlacementMode::Replicated => format!("s = {size}"),
        PlacementMode::Sharded => format!("s/N = {size}/{n}"),
        PlacementMode::ShardedWithGather if prefetch == 1 => {
            format!("s/N + s_unit = {size}/{n} + {s_unit}")
        }
        PlacementMode::ShardedWithGather => {
            format!("s/N + {prefetch}·s_unit = {size}/{n} + {prefetch}·{s_unit}")
        }
        PlacementMode::Materialized => format!("s_unit = {s_unit}"),
        PlacementMode::Offloaded => "0 (host-resident)".to_string(),
    }
}

/// Sum of the placement rule over the four states.
pub fn derive_memory(
    model: &ModelProfile,
    cluster: &ClusterProfile,
    spec: &PlacementSpec,
    opts: &MemoryOptions,
) -> MemoryReport {
    let n = cluster.device_count.max(1);
    let mut per_state = Vec::with_capacity(4);
    for state in TrainingState::ALL {
        let mode = spec.mode(state);
        let size = match state {
            TrainingState::Params => model.bytes_theta,
            TrainingState::Optimizer => model.bytes_omega,
            TrainingState::Grads => model.bytes_grad,
            TrainingState::Activations if opts.data_parallel_act_split => {
                model.activation_bytes() / n as i128
            }
            TrainingState::Activations => model.activation_bytes(),
        };
        let fp = mu_with_prefetch(mode, size, n, model.s_unit, opts.prefetch_depth);
        // an unmodelled activation size contributes nothing, not an s_unit
        let fp = if state == TrainingState::Activations && model.bytes_act.is_none() {
            Footprint {
                persistent: Bytes::ZERO,
                transient: Bytes::ZERO,
            }
        } else {
            fp
        };
        per_state.push(StateMemory {
            state,
            mode,
            size_bytes: size,
            persistent_bytes: fp.persistent,
            transient_bytes: fp.transient,
            offloaded_bytes: if mode == PlacementMode::Offloaded {
                size
            } else {
                Bytes::ZERO
            },
            formula: mu_formula(mode, size, n, model.s_unit, opts.prefetch_depth),
        });
    }
    let persistent_bytes: Bytes = per_state.iter().map(|s| s.persistent_bytes).sum();
    let transient_bytes: Bytes = per_state.iter().map(|s| s.transient_bytes).sum();
    let model_state_bytes = per_state
        .iter()
        .filter(|s| s.state != TrainingState::Activations)
        .map(|s| s.persistent_bytes)
        .sum();
    MemoryReport {
        devices: n,
        spec: *spec,
        offloaded_bytes: per_state.iter().map(|s| s.offloaded_bytes).sum(),
        per_state,
        total_gpu_bytes: persistent_bytes + transient_bytes,
        persistent_bytes,
        transient_bytes,
        model_state_bytes,
        activations_modelled: model.bytes_act.is_some(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommLabel {
    SyncAllreduce,
    SyncReducescatter,
    ParamGather,
    ConsistencyRepair,
    OffloadTraffic,
    TpActivationAllreduce,
    PpActivationTransfer,
}

impl CommLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CommLabel::SyncAllreduce => "sync_allreduce",
            CommLabel::SyncReducescatter => "sync_reducescatter",
            CommLabel::ParamGather => "param_gather",
            CommLabel::ConsistencyRepair => "consistency_repair",
            CommLabel::OffloadTraffic => "offload_traffic",
            CommLabel::TpActivationAllreduce => "tp_activation_allreduce",
            CommLabel::PpActivationTransfer => "pp_activation_transfer",
        }
    }

    /// Terms that happen once per optimizer update and so amortize over
    /// gradient-accumulation micro-batches.
    pub fn amortizes(self) -> bool {
        matches!(
            self,
            CommLabel::SyncAllreduce | CommLabel::SyncReducescatter | CommLabel::ConsistencyRepair
        )
    }

    /// Host transfers are not collectives and are kept out of the total.
    pub fn is_collective(self) -> bool {
        self != CommLabel::OffloadTraffic
    }
}

impl std::fmt::Display for CommLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which parallel dimension a term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Data,
    Tensor,
    Pipeline,
    Host,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommTerm {
    pub label: CommLabel,
    pub dimension: Dimension,
    /// Bytes sent per device each time the term occurs.
    pub bytes: Bytes,
    pub amortized: bool,
    pub formula: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommOptions {
    /// Add the parameter all-gather that keeps replicated params consistent
    /// after a sharded optimizer update. Off by default.
    pub consistency_repair: bool,
    pub accumulation_steps: u64,
}

impl Default for CommOptions {
    fn default() -> Self {
        CommOptions {
            consistency_repair: false,
            accumulation_steps: 1,
        }
    }
}

impl CommOptions {
    pub fn with_repair(mut self, on: bool) -> Self {
        self.consistency_repair = on;
        self
    }

    pub fn with_accumulation(mut self, steps: u64) -> Self {
        self.accumulation_steps = steps.max(1);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub devices: u64,
    pub spec: PlacementSpec,
    pub terms: Vec<CommTerm>,
    pub accumulation_steps: u64,
    /// Collective bytes per device per micro-batch step.
    pub total_bytes_per_device_per_step: Bytes,
    /// Host transfer estimate, excluded from the collective total.
    pub offload_bytes_per_step: Bytes,
}

impl CommReport {
    pub fn term(&self, label: CommLabel) -> Option<&CommTerm> {
        self.terms.iter().find(|t| t.label == label)
    }

    pub fn bytes_for(&self, label: CommLabel) -> Bytes {
        self.terms
            .iter()
            .filter(|t| t.label == label)
            .map(|t| t.bytes)
            .sum()
    }

    pub(crate) fn from_terms(devices: u64, spec: PlacementSpec, terms: Vec<CommTerm>, acc: u64) -> Self {
        let acc = acc.max(1);
        let total = terms
            .iter()
            .filter(|t| t.label.is_collective())
            .map(|t| if t.amortized { t.bytes / acc as i128 } else { t.bytes })
            .sum();
        let offload = terms
            .iter()
            .filter(|t| !t.label.is_collective())
            .map(|t| t.bytes)
            .sum();
        CommReport {
            devices,
            spec,
            terms,
            accumulation_steps: acc,
            total_bytes_per_device_per_step: total,
            offload_bytes_per_step: offload,
        }
    }
}

/// Collective volume implied by the state transitions of one step.
pub fn derive_communication(
    model: &ModelProfile,
    cluster: &ClusterProfile,
    spec: &PlacementSpec,
    opts: &CommOptions,
) -> CommReport {
    use PlacementMode::*;
    let n = cluster.device_count.max(1);
    let frac = ring_fraction(n);
    let nm1 = n - 1;
    let mut terms = Vec::new();
    let mut push = |label: CommLabel, dimension: Dimension, bytes: Bytes, formula: String| {
        terms.push(CommTerm {
            label,
            dimension,
            bytes,
            amortized: label.amortizes(),
            formula,
        })
    };

    match spec.grad {
        Replicated => push(
            CommLabel::SyncAllreduce,
            Dimension::Data,
            model.bytes_grad * frac * 2,
            format!("2·(N−1)/N·|G| = 2·{nm1}/{n}·{}", model.bytes_grad),
        ),
        Sharded | ShardedWithGather => push(
            CommLabel::SyncReducescatter,
            Dimension::Data,
            model.bytes_grad * frac,
            format!("(N−1)/N·|G| = {nm1}/{n}·{}", model.bytes_grad),
        ),
        Materialized | Offloaded => {}
    }

    if spec.theta == ShardedWithGather {
        push(
            CommLabel::ParamGather,
            Dimension::Data,
            model.bytes_theta * frac * 2,
            format!("2·(N−1)/N·|Θ| = 2·{nm1}/{n}·{}", model.bytes_theta),
        );
    }

    if opts.consistency_repair && spec.omega == Sharded && spec.theta == Replicated {
        push(
            CommLabel::ConsistencyRepair,
            Dimension::Data,
            model.bytes_theta * frac,
            format!("(N−1)/N·|Θ| = {nm1}/{n}·{}", model.bytes_theta),
        );
    }

    for state in TrainingState::ALL {
        if spec.mode(state) != Offloaded {
            continue;
        }
        let size = match state {
            TrainingState::Params => model.bytes_theta,
            TrainingState::Optimizer => model.bytes_omega,
            TrainingState::Grads => model.bytes_grad,
            TrainingState::Activations => model.activation_bytes(),
        };
        push(
            CommLabel::OffloadTraffic,
            Dimension::Host,
            size * 2,
            format!("estimate 2·|{}| (load + store) = 2·{size}", state.symbol()),
        );
    }

    CommReport::from_terms(n, *spec, terms, opts.accumulation_steps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub strategy: String,
    pub spec: PlacementSpec,
    /// Θ + Ω + G per device, transient gather buffers included.
    pub memory_bytes: Bytes,
    pub comm_bytes: Bytes,
}

/// The three memory/communication claims for R→S and R→S* moves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffClaims {
    pub zero1_less_memory_than_dp: bool,
    pub zero1_comm_equals_dp: bool,
    pub zero2_comm_below_zero1: bool,
    /// comm(ZeRO-3) − comm(ZeRO-2) = 2·(N−1)/N·|Θ| exactly.
    pub zero3_extra_is_two_gathers: bool,
}

impl TradeoffClaims {
    /// With one device every strict inequality degenerates to equality.
    pub fn all_hold(&self) -> bool {
        self.zero1_less_memory_than_dp
            && self.zero1_comm_equals_dp
            && self.zero2_comm_below_zero1
            && self.zero3_extra_is_two_gathers
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub devices: u64,
    pub rows: Vec<TradeoffRow>,
    pub claims: TradeoffClaims,
}

/// DP and ZeRO-1/2/3 side by side with the default accounting
/// (no consistency repair).
pub fn tradeoff_table(model: &ModelProfile, cluster: &ClusterProfile) -> TradeoffTable {
    let strategies = [
        Strategy::DataParallel,
        Strategy::Zero1,
        Strategy::Zero2,
        Strategy::Zero3,
    ];
    let rows: Vec<TradeoffRow> = strategies
        .iter()
        .map(|s| {
            let spec = s.spec();
            let mem = derive_memory(model, cluster, &spec, &MemoryOptions::default());
            let comm = derive_communication(model, cluster, &spec, &CommOptions::default());
            TradeoffRow {
                strategy: s.name().to_string(),
                spec,
                memory_bytes: mem.model_state_total_bytes(),
                comm_bytes: comm.total_bytes_per_device_per_step,
            }
        })
        .collect();
    let gather = model.bytes_theta * ring_fraction(cluster.device_count) * 2;
    let claims = TradeoffClaims {
        zero1_less_memory_than_dp: rows[1].memory_bytes < rows[0].memory_bytes,
        zero1_comm_equals_dp: rows[1].comm_bytes == rows[0].comm_bytes,
        zero2_comm_below_zero1: rows[2].comm_bytes < rows[1].comm_bytes,
        zero3_extra_is_two_gathers: rows[3].comm_bytes - rows[2].comm_bytes == gather,
    };
    TradeoffTable {
        devices: cluster.device_count,
        rows,
        claims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GB;
    use num_rational::Ratio;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use PlacementMode::*;

    const P: u64 = 70_000_000_000;

    fn fixture(n: u64) -> (ModelProfile, ClusterProfile) {
        (
            ModelProfile::mixed_precision(P, 80, 8192).unwrap(),
            ClusterProfile::single_node(n, Bytes::new(80 * GB)),
        )
    }

    #[test]
    fn mu_cases() {
        let s = Bytes::new(140 * GB);
        let unit = Bytes::new(1_610_000_000);
        assert_eq!(mu(Replicated, s, 8, unit).total(), s);
        assert_eq!(mu(Sharded, s, 1, unit).persistent, s);
        let fp = mu(ShardedWithGather, s, 8, unit);
        assert_eq!(fp.persistent, Bytes::new(17_500_000_000));
        assert_eq!(fp.transient, unit);
        assert_eq!(mu(Materialized, s, 8, unit), Footprint { persistent: Bytes::ZERO, transient: unit });
        assert_eq!(mu(Offloaded, s, 8, unit).total(), Bytes::ZERO);
        assert_eq!(mu_with_prefetch(ShardedWithGather, s, 8, unit, 2).transient, unit * 2);
    }

    #[test]
    fn memory_dp_zero1_zero3() {
        let (m, c) = fixture(8);
        let opts = MemoryOptions::default();
        let dp = derive_memory(&m, &c, &Strategy::DataParallel.spec(), &opts);
        assert_eq!(dp.model_state_bytes, Bytes::new(1120 * GB));
        assert_eq!(dp.total_gpu_bytes, Bytes::new(1120 * GB));
        let z1 = derive_memory(&m, &c, &Strategy::Zero1.spec(), &opts);
        // 2P + 2P + 12P/8 = 5.5P
        assert_eq!(z1.model_state_bytes, Bytes::new(385 * GB));
        let z3 = derive_memory(&m, &c, &Strategy::Zero3.spec(), &opts);
        assert_eq!(z3.model_state_bytes, Bytes::new(140 * GB));
        assert_eq!(z3.transient_bytes, m.s_unit);
        assert_eq!(dp.model_state_bytes.ratio_to(z3.model_state_bytes), Some(Ratio::from_integer(8)));
    }

    #[test]
    fn activations_split_and_offload() {
        let (m, c) = fixture(8);
        let m = m.with_activations(Bytes::new(80 * GB));
        let split = derive_memory(&m, &c, &Strategy::DataParallel.spec(), &MemoryOptions::default());
        assert_eq!(split.state(TrainingState::Activations).persistent_bytes, Bytes::new(10 * GB));
        let whole = derive_memory(
            &m,
            &c,
            &Strategy::DataParallel.spec(),
            &MemoryOptions { data_parallel_act_split: false, prefetch_depth: 1 },
        );
        assert_eq!(whole.state(TrainingState::Activations).persistent_bytes, Bytes::new(80 * GB));

        let off = derive_memory(&m, &c, &Strategy::ZeroOffload.spec(), &MemoryOptions::default());
        assert_eq!(off.offloaded_bytes, m.bytes_theta + m.bytes_omega);
        assert_eq!(off.model_state_bytes, m.bytes_grad / 8);
        assert_eq!(off.total_gpu_bytes, off.persistent_bytes + off.transient_bytes);
    }

    #[test]
    fn communication_dp_and_zero3() {
        let (m, c) = fixture(8);
        let o = CommOptions::default();
        let dp = derive_communication(&m, &c, &Strategy::DataParallel.spec(), &o);
        // 3.5P
        assert_eq!(dp.total_bytes_per_device_per_step, Bytes::new(245 * GB));
        let z3 = derive_communication(&m, &c, &Strategy::Zero3.spec(), &o);
        // 5.25P
        assert_eq!(z3.total_bytes_per_device_per_step, Bytes::new(367_500_000_000));
        assert_eq!(
            z3.total_bytes_per_device_per_step.ratio_to(dp.total_bytes_per_device_per_step),
            Some(Ratio::new(3, 2))
        );
    }

    #[test]
    fn single_device_has_no_collectives() {
        let (m, c) = fixture(1);
        for spec in PlacementSpec::enumerate() {
            let r = derive_communication(&m, &c, &spec, &CommOptions::default().with_repair(true));
            assert!(r.total_bytes_per_device_per_step.is_zero(), "{spec}");
        }
    }

    #[test]
    fn consistency_repair_only_when_flagged() {
        let (m, c) = fixture(8);
        let z1 = Strategy::Zero1.spec();
        let off = derive_communication(&m, &c, &z1, &CommOptions::default());
        assert!(off.term(CommLabel::ConsistencyRepair).is_none());
        let on = derive_communication(&m, &c, &z1, &CommOptions::default().with_repair(true));
        assert_eq!(on.bytes_for(CommLabel::ConsistencyRepair), m.bytes_theta * Ratio::new(7, 8));
        // never for ZeRO-3: params are already sharded
        let z3 = derive_communication(&m, &c, &Strategy::Zero3.spec(), &CommOptions::default().with_repair(true));
        assert!(z3.term(CommLabel::ConsistencyRepair).is_none());
    }

    #[test]
    fn accumulation_amortizes_sync_only() {
        let (m, c) = fixture(8);
        let z3 = Strategy::Zero3.spec();
        let one = derive_communication(&m, &c, &z3, &CommOptions::default());
        let four = derive_communication(&m, &c, &z3, &CommOptions::default().with_accumulation(4));
        let rs = one.bytes_for(CommLabel::SyncReducescatter);
        let ag = one.bytes_for(CommLabel::ParamGather);
        assert_eq!(four.total_bytes_per_device_per_step, rs / 4 + ag);
    }

    #[test]
    fn offload_traffic_is_separate() {
        let (m, c) = fixture(8);
        let r = derive_communication(&m, &c, &Strategy::ZeroOffload.spec(), &CommOptions::default());
        assert_eq!(r.offload_bytes_per_step, (m.bytes_theta + m.bytes_omega) * 2);
        assert_eq!(r.total_bytes_per_device_per_step, m.bytes_grad * Ratio::new(7, 8));
    }

    #[test]
    fn tradeoff_claims_hold_for_several_n() {
        let (m, _) = fixture(8);
        for n in [2, 3, 8, 64, 1024] {
            let c = ClusterProfile::single_node(n, Bytes::new(80 * GB));
            let t = tradeoff_table(&m, &c);
            assert!(t.claims.all_hold(), "N={n}: {:?}", t.claims);
            // RS is exactly half of AR
            assert_eq!(t.rows[2].comm_bytes, t.rows[0].comm_bytes / 2);
            // Θ and G are both 2P, so the ZeRO-3/DP ratio is 3/2 for every N ≥ 2
            let ratio = t.rows[3].comm_bytes.ratio_to(t.rows[0].comm_bytes).unwrap();
            assert!((ratio.to_f64_lossy() - 1.5).abs() < 1e-3);
        }
    }

    trait Lossy {
        fn to_f64_lossy(&self) -> f64;
    }
    impl Lossy for Ratio<i128> {
        fn to_f64_lossy(&self) -> f64 {
            *self.numer() as f64 / *self.denom() as f64
        }
    }

    proptest! {
        #[test]
        fn sharding_never_increases_memory(size in 1i128..1_000_000_000, n in 1u64..2048, unit in 0i128..1_000_000) {
            let s = Bytes::new(size);
            let u = Bytes::new(unit);
            let r = mu(Replicated, s, n, u).total();
            prop_assert!(mu(Sharded, s, n, u).total() <= r);
            if u <= s * ring_fraction(n) {
                prop_assert!(mu(ShardedWithGather, s, n, u).total() <= r);
            }
        }

        #[test]
        fn memory_total_is_sum_of_states(idx in 0usize..625, n in 1u64..64, act in proptest::option::of(1i128..1_000_000_000_000)) {
            let spec = PlacementSpec::enumerate().nth(idx).unwrap();
            let mut m = ModelProfile::mixed_precision(P, 80, 8192).unwrap();
            m.bytes_act = act.map(Bytes::new);
            let c = ClusterProfile::single_node(n, Bytes::new(80 * GB));
            let r = derive_memory(&m, &c, &spec, &MemoryOptions::default());
            let sum: Bytes = r.per_state.iter().map(|s| s.persistent_bytes + s.transient_bytes).sum();
            prop_assert_eq!(r.total_gpu_bytes, sum);
            for s in &r.per_state {
                if s.mode != Offloaded {
                    prop_assert!(s.offloaded_bytes.is_zero());
                } else {
                    prop_assert!((s.persistent_bytes + s.transient_bytes).is_zero());
                }
            }
        }
    }
}
