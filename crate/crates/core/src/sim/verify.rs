//! Three-part check of a distributed run against the single-device oracle:
//! the first synchronized gradient, checksums of replicated values, and the
//! loss at the end of the run.

use serde::{Deserialize, Serialize};

use super::model::TinyModel;
use super::optim::OptState;
use super::{run_oracle, simulate, Fault, MeasuredBytes, SimConfig, SimRun};
use crate::cost::{CommLabel, CommReport};
use crate::error::SimError;
use crate::profile::ModelProfile;
use crate::units::Bytes;

pub const GRAD_REL_TOL: f64 = 1e-5;
pub const TRAJECTORY_LOSS_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub devices: usize,
    pub steps: usize,
    pub fault: Option<Fault>,
    /// `‖g − g_ref‖ / ‖g_ref‖` for the first step's synchronized gradient.
    pub grad_rel_err: f64,
    pub grad_ok: bool,
    pub checksum_checks: usize,
    pub checksum_mismatches: usize,
    pub first_mismatch: Option<String>,
    pub checksums_ok: bool,
    pub final_loss_reference: f64,
    pub final_loss: f64,
    pub loss_diff: f64,
    pub trajectory_ok: bool,
    pub passed: bool,
    pub measured: Vec<MeasuredBytes>,
}

/// Relative L2 distance; 0 when both are zero.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        num / den
    }
}

/// Runs `cfg` and its single-device reference and compares them.
pub fn verify(model: &TinyModel, cfg: &SimConfig) -> Result<(CheckReport, SimRun), SimError> {
    let run = simulate(model, cfg)?;
    let reference = run_oracle(model, cfg)?;
    let grad_rel_err = rel_err(&run.trajectory.grads[0], &reference.trajectory.grads[0]);
    let final_loss = *run.trajectory.losses.last().expect("at least one step");
    let final_loss_reference = *reference.trajectory.losses.last().expect("at least one step");
    let loss_diff = (final_loss - final_loss_reference).abs();
    // NaN compares false, so a diverged run fails both checks
    let grad_ok = grad_rel_err < GRAD_REL_TOL;
    let trajectory_ok = loss_diff < TRAJECTORY_LOSS_TOL;
    let checksums_ok = run.checksums.consistent();
    let report = CheckReport {
        devices: run.devices,
        steps: run.steps,
        fault: cfg.fault,
        grad_rel_err,
        grad_ok,
        checksum_checks: run.checksums.checks,
        checksum_mismatches: run.checksums.mismatches,
        first_mismatch: run.checksums.first_mismatch.clone(),
        checksums_ok,
        final_loss_reference,
        final_loss,
        loss_diff,
        trajectory_ok,
        passed: grad_ok && checksums_ok && trajectory_ok,
        measured: run.measured.clone(),
    };
    Ok((report, run))
}

/// The simulated model in the cost engine's terms: every state is stored at
/// `element_bytes` per element and one layer is the gather unit.
pub fn cost_profile(model: &TinyModel, cfg: &SimConfig) -> ModelProfile {
    let p = model.param_count() as i128;
    let es = cfg.element_bytes as i128;
    let per_param = OptState::zeros(&cfg.optimizer, 1).elements() as i128;
    ModelProfile {
        param_count: p as u64,
        layers: model.layers() as u64,
        hidden: (0..model.layers()).map(|l| model.layer_out(l)).max().unwrap_or(1) as u64,
        bytes_theta: Bytes::new(p * es),
        bytes_omega: Bytes::new(p * per_param * es),
        bytes_grad: Bytes::new(p * es),
        bytes_act: None,
        s_unit: Bytes::new(model.max_layer_param_count() as i128 * es),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByteRow {
    pub label: CommLabel,
    /// Mean per device per step; zero when the term never ran.
    pub measured: Bytes,
    /// `None` for activation traffic the report was given no sizes for.
    pub predicted: Option<Bytes>,
    pub equal: Option<bool>,
}

/// Pairs each measured collective with the predicted term of the same
/// label. A label present on one side only shows up with zero on the other.
pub fn compare_bytes(run: &SimRun, predicted: &CommReport) -> Vec<ByteRow> {
    let mut labels: Vec<CommLabel> = run.measured.iter().map(|m| m.label).collect();
    for t in &predicted.terms {
        if t.label.is_collective() && !labels.contains(&t.label) {
            labels.push(t.label);
        }
    }
    labels.sort();
    labels
        .into_iter()
        .map(|label| {
            let measured = run.mean_bytes(label);
            let activation = matches!(
                label,
                CommLabel::TpActivationAllreduce | CommLabel::PpActivationTransfer
            );
            let want = (predicted.term(label).is_some() || !activation)
                .then(|| predicted.bytes_for(label));
            ByteRow {
                label,
                measured,
                predicted: want,
                equal: want.map(|w| w == measured),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_edges() {
        assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
        assert!(rel_err(&[1.0], &[0.0]).is_infinite());
        assert!((rel_err(&[1.1, 0.0], &[1.0, 0.0]) - 0.1).abs() < 1e-12);
    }
}
