//! The JSON envelope every command emits, and the human-readable tables
//! derived from the same data.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::{CommReport, MemoryReport};
use crate::units::Bytes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    /// Options after defaults and flags were applied.
    pub options: Value,
    pub tool_version: String,
    pub timestamp_unix_s: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<String>, options: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path,
            options,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// `{"manifest": ..., "status": ..., "result": ...}` for every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub manifest: RunManifest,
    /// `ok`, `input_error` or `verification_failed`.
    pub status: String,
    pub result: Value,
}

/// Formats byte counts for tables.
#[derive(Clone, Copy, Debug, Default)]
pub struct Units {
    pub binary: bool,
}

impl Units {
    pub fn show(&self, b: Bytes) -> String {
        b.human(self.binary)
    }
}

pub fn memory_table(m: &MemoryReport, u: Units) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Memory per device ({} devices, spec {})", m.devices, m.spec);
    let _ = writeln!(
        out,
        "  {:<6} {:<4} {:>12} {:>12} {:>12}  formula",
        "state", "mode", "persistent", "transient", "host"
    );
    for s in &m.per_state {
        let _ = writeln!(
            out,
            "  {:<6} {:<4} {:>12} {:>12} {:>12}  {}",
            s.state.symbol(),
            s.mode.token(),
            u.show(s.persistent_bytes),
            u.show(s.transient_bytes),
            u.show(s.offloaded_bytes),
            s.formula
        );
    }
    let _ = writeln!(out, "  model state (persistent Θ+Ω+G): {}", u.show(m.model_state_bytes));
    let _ = writeln!(out, "  model state incl. transient:     {}", u.show(m.model_state_total_bytes()));
    let _ = writeln!(out, "  total GPU bytes:                 {}", u.show(m.total_gpu_bytes));
    if !m.offloaded_bytes.is_zero() {
        let _ = writeln!(out, "  offloaded to host:               {}", u.show(m.offloaded_bytes));
    }
    if !m.activations_modelled {
        let _ = writeln!(out, "  (activations not modelled: set model.bytes_act)");
    }
    out
}

pub fn comm_table(c: &CommReport, u: Units) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Communication per device per step (accumulation {})",
        c.accumulation_steps
    );
    for t in &c.terms {
        let note = if t.amortized && c.accumulation_steps > 1 {
            format!(" (÷{})", c.accumulation_steps)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "  {:<24} {:>12}{note}  {}",
            t.label.as_str(),
            u.show(t.bytes),
            t.formula
        );
    }
    let _ = writeln!(
        out,
        "  total collective:        {:>12}  ({} B)",
        u.show(c.total_bytes_per_device_per_step),
        c.total_bytes_per_device_per_step
    );
    if !c.offload_bytes_per_step.is_zero() {
        let _ = writeln!(out, "  host transfer (separate): {:>11}", u.show(c.offload_bytes_per_step));
    }
    out
}
