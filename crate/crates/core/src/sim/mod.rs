//! Desk-scale distributed training simulator.
//!
//! `N` virtual devices live in one address space and exchange data only
//! through the metered ring collectives of [`crate::collectives`]. Every run
//! can be replayed on a single device ([`run_oracle`]) and compared with the
//! three-step check in [`verify`].

mod data_parallel;
pub mod model;
pub mod optim;
mod oracle;
mod pipeline;
mod tensor_parallel;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::collectives::DeviceGroup;
use crate::cost::CommLabel;
use crate::error::SimError;
use crate::placement::{PlacementMode, PlacementSpec, TrainingState};
use crate::units::Bytes;

pub use data_parallel::run_distributed;
pub use model::{Batch, Dataset, TinyModel};
pub use optim::{OptState, Optimizer};
pub use oracle::run_oracle;
pub use pipeline::run_pipeline_parallel;
pub use tensor_parallel::run_tensor_parallel;
pub use verify::{compare_bytes, cost_profile, rel_err, verify, ByteRow, CheckReport, GRAD_REL_TOL, TRAJECTORY_LOSS_TOL};
pub use data_parallel::check_supported;

/// How the virtual devices split the work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Data parallel with the given state placement (DP, ZeRO-1/2/3).
    Placement { spec: PlacementSpec },
    /// Tensor parallel groups of `tp` contiguous devices, `dp` replicas.
    TensorData { tp: usize, dp: usize },
    /// `stages` pipeline stages, each replicated `dp` times.
    PipelineData { stages: usize, dp: usize },
}

impl Layout {
    pub fn placement(spec: PlacementSpec) -> Self {
        Layout::Placement { spec }
    }

    pub fn devices(&self, fallback: usize) -> usize {
        match *self {
            Layout::Placement { .. } => fallback,
            Layout::TensorData { tp, dp } => tp * dp,
            Layout::PipelineData { stages, dp } => stages * dp,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Placement { spec } => write!(f, "placement {spec}"),
            Layout::TensorData { tp, dp } => write!(f, "TP({tp}) × DP({dp})"),
            Layout::PipelineData { stages, dp } => write!(f, "PP({stages}) × DP({dp})"),
        }
    }
}

impl TryFrom<&crate::composition::CompositionSpec> for Layout {
    type Error = SimError;

    /// TP × DP and PP × DP grids with a replicated data dimension run; a
    /// three-way grid does not.
    fn try_from(c: &crate::composition::CompositionSpec) -> Result<Self, SimError> {
        let (tp, pp, dp) = (c.tp as usize, c.pp as usize, c.dp as usize);
        if tp > 1 && pp > 1 {
            return Err(SimError::SpecUnsupported(format!(
                "{c} (three-way grids are analysed, not simulated)"
            )));
        }
        if tp == 1 && pp == 1 {
            return Ok(Layout::placement(c.data_placement));
        }
        if c.data_placement != crate::placement::Strategy::DataParallel.spec() {
            return Err(SimError::SpecUnsupported(format!(
                "{c} with data placement {} (composed runs replicate across replicas)",
                c.data_placement
            )));
        }
        Ok(if tp > 1 {
            Layout::TensorData { tp, dp }
        } else {
            Layout::PipelineData { stages: pp, dp }
        })
    }
}

/// Deliberate correctness violations, for checking that the verification
/// protocol notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// The last device never contributes its gradient.
    MissingSample,
    /// Device 1 trains on device 0's shard instead of its own.
    DuplicateSample,
    /// The summed gradient is not divided by the device count.
    WrongNormalization,
    /// Replicated parameters are not refreshed after a sharded update.
    StaleParams,
    /// Device 1 computes with half-precision parameters and gradients.
    PrecisionMismatch,
    /// Each device sums the gradient contributions in its own order.
    ReductionOrder,
}

impl Fault {
    pub const ALL: [Fault; 6] = [
        Fault::MissingSample,
        Fault::DuplicateSample,
        Fault::WrongNormalization,
        Fault::StaleParams,
        Fault::PrecisionMismatch,
        Fault::ReductionOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fault::MissingSample => "missing-sample",
            Fault::DuplicateSample => "duplicate-sample",
            Fault::WrongNormalization => "wrong-normalization",
            Fault::StaleParams => "stale-params",
            Fault::PrecisionMismatch => "precision-mismatch",
            Fault::ReductionOrder => "reduction-order",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Fault::ALL.iter().map(|f| f.name()).collect();
                format!("unknown fault `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub devices: usize,
    /// Global batch; each data-parallel replica gets a contiguous slice.
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub layout: Layout,
    /// Bytes per element for the meters (2 models FP16 traffic).
    pub element_bytes: u64,
    pub fault: Option<Fault>,
}

impl SimConfig {
    pub fn new(layout: Layout, devices: usize) -> Self {
        SimConfig {
            devices: layout.devices(devices),
            batch: 16,
            steps: 100,
            seed: 0,
            optimizer: Optimizer::adam(0.01),
            layout,
            element_bytes: 2,
            fault: None,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_element_bytes(mut self, bytes: u64) -> Self {
        self.element_bytes = bytes;
        self
    }

    /// The same run on one device with no faults.
    pub fn single_device(&self) -> SimConfig {
        SimConfig {
            devices: 1,
            layout: Layout::placement(crate::placement::Strategy::DataParallel.spec()),
            fault: None,
            ..self.clone()
        }
    }

    pub(crate) fn check_batch(&self, parts: usize) -> Result<usize, SimError> {
        if parts == 0 || self.batch == 0 || self.batch % parts != 0 {
            return Err(SimError::BatchNotDivisible {
                batch: self.batch,
                parts,
            });
        }
        Ok(self.batch / parts)
    }

    pub(crate) fn check_common(&self) -> Result<(), SimError> {
        if self.devices == 0 {
            return Err(SimError::Invalid("at least one device is required".into()));
        }
        if self.steps == 0 {
            return Err(SimError::Invalid("at least one step is required".into()));
        }
        if self.element_bytes == 0 {
            return Err(SimError::Invalid("element_bytes must be positive".into()));
        }
        let expected = self.layout.devices(self.devices);
        if expected != self.devices {
            return Err(SimError::DeviceMismatch {
                devices: self.devices,
                detail: format!("layout needing {expected} devices"),
            });
        }
        Ok(())
    }
}

/// Loss, synchronized gradient and final parameters of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Global mean loss before each update.
    pub losses: Vec<f64>,
    /// Global gradient used for each update, in the flat parameter layout.
    pub grads: Vec<Vec<f64>>,
    pub final_params: Vec<f64>,
}

/// Collective bytes actually sent, by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredBytes {
    pub label: CommLabel,
    /// Total over the whole run for each device.
    pub per_device_total: Vec<u64>,
    pub mean_per_device_per_step: Bytes,
}

/// Peak element counts of one state on one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateShape {
    pub state: TrainingState,
    pub mode: PlacementMode,
    pub peak_persistent: Vec<usize>,
    pub peak_total: Vec<usize>,
}

/// Result of checking replicated values after collectives and at access.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChecksumLog {
    pub checks: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<String>,
}

impl ChecksumLog {
    pub fn consistent(&self) -> bool {
        self.mismatches == 0
    }

    /// All `values` should be bitwise identical.
    pub(crate) fn compare<'a, I>(&mut self, values: I, what: impl FnOnce() -> String)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        self.checks += 1;
        let sums: Vec<u64> = values.into_iter().map(checksum).collect();
        if sums.windows(2).any(|w| w[0] != w[1]) {
            self.mismatches += 1;
            if self.first_mismatch.is_none() {
                self.first_mismatch = Some(what());
            }
        }
    }
}

/// Hash of the exact bit patterns.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    values.len().hash(&mut h);
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Everything one distributed (or single-device) run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub devices: usize,
    pub steps: usize,
    pub trajectory: Trajectory,
    pub checksums: ChecksumLog,
    pub measured: Vec<MeasuredBytes>,
    pub memory: Vec<StateShape>,
    /// Collective labels of the first step, in execution order.
    pub schedule: Vec<CommLabel>,
}

impl SimRun {
    pub fn measured(&self, label: CommLabel) -> Option<&MeasuredBytes> {
        self.measured.iter().find(|m| m.label == label)
    }

    pub fn mean_bytes(&self, label: CommLabel) -> Bytes {
        self.measured(label)
            .map(|m| m.mean_per_device_per_step)
            .unwrap_or(Bytes::ZERO)
    }

    /// Mean collective bytes per device per step over all labels.
    pub fn total_mean_bytes(&self) -> Bytes {
        self.measured.iter().map(|m| m.mean_per_device_per_step).sum()
    }

    pub fn memory_of(&self, state: TrainingState) -> Option<&StateShape> {
        self.memory.iter().find(|m| m.state == state)
    }
}

/// Per-device byte meters keyed by label.
pub(crate) struct Meter {
    devices: usize,
    sent: BTreeMap<CommLabel, Vec<u64>>,
    schedule: Vec<CommLabel>,
    recording: bool,
}

impl Meter {
    pub(crate) fn new(devices: usize) -> Self {
        Meter {
            devices,
            sent: BTreeMap::new(),
            schedule: Vec::new(),
            recording: true,
        }
    }

    /// Moves the group's counters into the meter under `label`.
    pub(crate) fn absorb(&mut self, label: CommLabel, group: &mut DeviceGroup) {
        let row = self
            .sent
            .entry(label)
            .or_insert_with(|| vec![0; self.devices]);
        for (member, c) in group.members().iter().zip(group.counters()) {
            row[*member] += c.sent_bytes;
        }
        group.reset_counters();
        self.note(label);
    }

    pub(crate) fn point_to_point(&mut self, label: CommLabel, from: usize, bytes: u64) {
        let row = self
            .sent
            .entry(label)
            .or_insert_with(|| vec![0; self.devices]);
        row[from] += bytes;
        self.note(label);
    }

    fn note(&mut self, label: CommLabel) {
        if self.recording && self.schedule.last() != Some(&label) {
            self.schedule.push(label);
        }
    }

    pub(crate) fn end_step(&mut self) {
        self.recording = false;
    }

    pub(crate) fn finish(self, steps: usize) -> (Vec<MeasuredBytes>, Vec<CommLabel>) {
        let denom = (self.devices * steps) as i128;
        let measured = self
            .sent
            .into_iter()
            .map(|(label, per_device_total)| {
                let total: u64 = per_device_total.iter().sum();
                MeasuredBytes {
                    label,
                    mean_per_device_per_step: Bytes::new(total as i128) / denom,
                    per_device_total,
                }
            })
            .collect();
        (measured, self.schedule)
    }
}

/// Current and peak element counts per state for one device.
#[derive(Clone, Debug, Default)]
pub(crate) struct MemTracker {
    persistent: [usize; 4],
    transient: [usize; 4],
    peak_persistent: [usize; 4],
    peak_total: [usize; 4],
}

fn state_index(s: TrainingState) -> usize {
    match s {
        TrainingState::Params => 0,
        TrainingState::Optimizer => 1,
        TrainingState::Grads => 2,
        TrainingState::Activations => 3,
    }
}

impl MemTracker {
    fn bump(&mut self, k: usize) {
        self.peak_persistent[k] = self.peak_persistent[k].max(self.persistent[k]);
        self.peak_total[k] = self.peak_total[k].max(self.persistent[k] + self.transient[k]);
    }

    pub(crate) fn hold(&mut self, s: TrainingState, n: usize) {
        let k = state_index(s);
        self.persistent[k] += n;
        self.bump(k);
    }

    pub(crate) fn release(&mut self, s: TrainingState, n: usize) {
        let k = state_index(s);
        self.persistent[k] -= n;
    }

    pub(crate) fn borrow(&mut self, s: TrainingState, n: usize) {
        let k = state_index(s);
        self.transient[k] += n;
        self.bump(k);
    }

    pub(crate) fn current(&self, s: TrainingState) -> usize {
        self.persistent[state_index(s)]
    }

    pub(crate) fn give_back(&mut self, s: TrainingState, n: usize) {
        let k = state_index(s);
        self.transient[k] -= n;
    }
}

pub(crate) fn memory_shapes(spec: &PlacementSpec, trackers: &[MemTracker]) -> Vec<StateShape> {
    TrainingState::ALL
        .into_iter()
        .map(|s| {
            let k = state_index(s);
            StateShape {
                state: s,
                mode: spec.mode(s),
                peak_persistent: trackers.iter().map(|t| t.peak_persistent[k]).collect(),
                peak_total: trackers.iter().map(|t| t.peak_total[k]).collect(),
            }
        })
        .collect()
}

/// Rounds to the 11 significant bits of IEEE binary16 (exponent range is
/// not modelled).
pub(crate) fn to_half_precision(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    const DROP: u32 = 52 - 10;
    let bits = x.to_bits();
    let rounded = (bits + (1u64 << (DROP - 1))) & !((1u64 << DROP) - 1);
    f64::from_bits(rounded)
}

/// Dispatch on the layout.
pub fn simulate(model: &TinyModel, cfg: &SimConfig) -> Result<SimRun, SimError> {
    match cfg.layout {
        Layout::Placement { .. } => run_distributed(model, cfg),
        Layout::TensorData { .. } => run_tensor_parallel(model, cfg),
        Layout::PipelineData { .. } => run_pipeline_parallel(model, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_precision_rounding() {
        assert_eq!(to_half_precision(1.0), 1.0);
        let x = 1.0 + 1.0 / 4096.0;
        assert_eq!(to_half_precision(x), 1.0);
        let y = 0.1f64;
        let r = to_half_precision(y);
        assert!((r - y).abs() / y < 1.0 / 2048.0);
        assert_ne!(r, y);
        assert_eq!(to_half_precision(-y), -r);
    }

    #[test]
    fn fault_names_round_trip() {
        for f in Fault::ALL {
            assert_eq!(f.name().parse::<Fault>().unwrap(), f);
        }
        assert!("bogus".parse::<Fault>().is_err());
    }

    #[test]
    fn checksum_log_flags_first_mismatch() {
        let mut log = ChecksumLog::default();
        let a = [1.0, 2.0];
        let b = [1.0, 2.0 + f64::EPSILON * 2.0];
        log.compare([&a[..], &a[..]], || "same".into());
        log.compare([&a[..], &b[..]], || "differs".into());
        log.compare([&b[..], &a[..]], || "later".into());
        assert_eq!(log.checks, 3);
        assert_eq!(log.mismatches, 2);
        assert_eq!(log.first_mismatch.as_deref(), Some("differs"));
    }
}
