//! What each CLI subcommand computes. The binary only parses flags and
//! prints; every command returns an [`Outcome`] whose JSON envelope is the
//! source of truth and whose text is rendered from the same values.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::composition::{compose, composed_costs, validate, CompositionOptions, CompositionSpec, Factor};
use crate::config::{Config, Selection};
use crate::cost::{derive_communication, derive_memory, CommOptions};
use crate::error::{CompositionError, ConfigError, SimError};
use crate::placement::{catalog, PlacementMode, Strategy, TrainingState};
use crate::planner::{select, PlanSpec, PlannerConfig};
use crate::reference;
use crate::report::{comm_table, memory_table, Envelope, RunManifest, Units};
use crate::sim::{compare_bytes, cost_profile, verify, Fault, Layout, SimConfig, GRAD_REL_TOL, TRAJECTORY_LOSS_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub envelope: Envelope,
    pub text: String,
    pub exit_code: i32,
}

/// A refusal before any result exists.
#[derive(Clone, Debug, PartialEq)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<ConfigError> for InputError {
    fn from(e: ConfigError) -> Self {
        InputError(format!("config error: {e}"))
    }
}

impl From<CompositionError> for InputError {
    fn from(e: CompositionError) -> Self {
        InputError(e.to_string())
    }
}

impl From<SimError> for InputError {
    fn from(e: SimError) -> Self {
        InputError(e.to_string())
    }
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub config: Option<std::path::PathBuf>,
    pub seed: Option<u64>,
    pub units: Units,
}

impl Globals {
    fn config_path(&self) -> Option<String> {
        self.config.as_ref().map(|p| p.display().to_string())
    }

    fn load(&self) -> Result<Config, InputError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| InputError("--config <path> is required for this command".into()))?;
        Ok(Config::load(path)?)
    }

    fn manifest(&self, command: &str, options: Value) -> RunManifest {
        RunManifest::new(command, self.config_path(), options)
    }
}

/// The envelope for a refusal, so `--json` callers always get one shape.
pub fn input_error(command: &str, globals: &Globals, err: &InputError) -> Outcome {
    Outcome {
        envelope: Envelope {
            manifest: globals.manifest(command, Value::Null),
            status: "input_error".into(),
            result: json!({ "error": err.0 }),
        },
        text: format!("error: {err}\n"),
        exit_code: EXIT_INPUT,
    }
}

fn ok(manifest: RunManifest, result: impl Serialize, text: String) -> Outcome {
    Outcome {
        envelope: Envelope {
            manifest,
            status: "ok".into(),
            result: serde_json::to_value(result).expect("reports serialize"),
        },
        text,
        exit_code: EXIT_OK,
    }
}

fn composition_options(cfg: &Config) -> CompositionOptions {
    CompositionOptions {
        tp_activation_bytes: cfg.options.tp_activation_bytes,
        tp_allreduces_per_step: None,
        pp_boundary_activation_bytes: cfg.options.pp_boundary_activation_bytes,
        comm: cfg.options.comm(),
        memory: cfg.options.memory(),
    }
}

fn build_composition(cfg: &Config, factors: &[Factor]) -> Result<CompositionSpec, InputError> {
    let mut comp = compose(factors, &cfg.cluster)?;
    if let Some(p) = cfg.options.data_placement {
        comp = comp.with_data_placement(p);
    }
    Ok(comp)
}

pub fn derive(globals: &Globals) -> Result<Outcome, InputError> {
    let cfg = globals.load()?;
    let manifest = globals.manifest("derive", cfg.to_value());
    let u = globals.units;
    let mut text = String::new();
    for w in &cfg.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    match &cfg.selection {
        None => Err(InputError(
            "derive needs one of `placement`, `strategy` or `composition` in the config".into(),
        )),
        Some(Selection::Composition(factors)) => {
            let comp = build_composition(&cfg, factors)?;
            let verdict = validate(&comp, &cfg.cluster, &cfg.model);
            let report = composed_costs(&comp, &cfg.model, &cfg.cluster, &composition_options(&cfg));
            let _ = writeln!(text, "Composition {comp}, data placement {}", comp.data_placement);
            text.push_str(&memory_table(&report.memory, u));
            text.push_str(&comm_table(&report.comm, u));
            text.push_str(&verdict_text(&verdict));
            let result = json!({
                "composition": comp,
                "memory": report.memory,
                "comm": report.comm,
                "validation": verdict,
                "warnings": cfg.warnings,
            });
            Ok(ok(manifest, result, text))
        }
        Some(_) => {
            let spec = cfg.placement().expect("placement or strategy selection");
            let memory = derive_memory(&cfg.model, &cfg.cluster, &spec, &cfg.options.memory());
            let comm = derive_communication(&cfg.model, &cfg.cluster, &spec, &cfg.options.comm());
            let _ = writeln!(
                text,
                "Placement {spec} on {} devices, {} parameters",
                cfg.cluster.device_count, cfg.model.param_count
            );
            text.push_str(&memory_table(&memory, u));
            text.push_str(&comm_table(&comm, u));
            let result = json!({
                "spec": spec,
                "memory": memory,
                "comm": comm,
                "warnings": cfg.warnings,
            });
            Ok(ok(manifest, result, text))
        }
    }
}

/// Threshold overrides from the command line.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlanFlags {
    pub model_state_threshold: Option<f64>,
    pub layer_threshold: Option<f64>,
}

pub fn plan(globals: &Globals, flags: PlanFlags) -> Result<Outcome, InputError> {
    let cfg = globals.load()?;
    let planner = PlannerConfig {
        model_state_threshold: flags
            .model_state_threshold
            .unwrap_or(cfg.planner.model_state_threshold),
        layer_threshold: flags.layer_threshold.unwrap_or(cfg.planner.layer_threshold),
    };
    planner.validate()?;
    let plan = select(&cfg.model, &cfg.cluster, &planner);
    let u = globals.units;
    let mut text = String::new();
    let chosen = match &plan.spec {
        PlanSpec::Placement { spec } => format!("placement {spec}"),
        PlanSpec::Composition { composition } => format!(
            "composition {composition} with data placement {}",
            composition.data_placement
        ),
    };
    let _ = writeln!(text, "Plan: {:?} branch, {chosen}", plan.branch);
    for (i, r) in plan.rationale.iter().enumerate() {
        let _ = writeln!(text, "  {}. {r}", i + 1);
    }
    let _ = writeln!(
        text,
        "Guard: {}: {} vs limit {} -> {}",
        plan.guard.description,
        u.show(plan.guard.predicted_bytes),
        u.show(plan.guard.limit_bytes),
        if plan.guard.holds { "holds" } else { "violated" }
    );
    let _ = writeln!(text, "Feasible: {}", if plan.feasible { "yes" } else { "no" });
    if let Some(b) = &plan.binding_constraint {
        let _ = writeln!(text, "Binding constraint: {b}");
    }
    text.push_str(&memory_table(&plan.predicted_memory, u));
    text.push_str(&comm_table(&plan.predicted_comm, u));
    let mut options = cfg.to_value();
    options["planner"] = serde_json::to_value(planner).expect("planner config serializes");
    Ok(ok(globals.manifest("plan", options), plan, text))
}

/// Grid degrees from the command line; any given one replaces the config's
/// composition.
#[derive(Clone, Copy, Debug, Default)]
pub struct ComposeFlags {
    pub tp: Option<u64>,
    pub pp: Option<u64>,
    pub dp: Option<u64>,
}

fn verdict_text(v: &crate::composition::ValidationVerdict) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Validation: {}", if v.valid { "valid" } else { "INVALID" });
    for c in &v.violated_conditions {
        let _ = writeln!(out, "  violated {} condition {}: {}", c.rule, c.condition, c.explanation);
    }
    if let Some(w) = &v.latency_warning {
        let _ = writeln!(out, "  latency warning: {} ({:.3e} s per step)", w.detail, w.overhead_s);
    }
    out
}

pub fn compose_cmd(globals: &Globals, flags: ComposeFlags) -> Result<Outcome, InputError> {
    let cfg = globals.load()?;
    let factors: Vec<Factor> = if flags.tp.is_some() || flags.pp.is_some() || flags.dp.is_some() {
        let n = cfg.cluster.device_count;
        let tp = flags.tp.unwrap_or(1);
        let pp = flags.pp.unwrap_or(1);
        let dp = match flags.dp {
            Some(d) => d,
            None if tp * pp > 0 && n % (tp * pp) == 0 => n / (tp * pp),
            None => {
                return Err(InputError(format!(
                    "TP({tp}) × PP({pp}) does not divide {n} devices"
                )))
            }
        };
        vec![Factor::tp(tp), Factor::pp(pp), Factor::dp(dp)]
    } else {
        match &cfg.selection {
            Some(Selection::Composition(f)) => f.clone(),
            _ => {
                return Err(InputError(
                    "compose needs `composition` in the config or --tp/--pp/--dp".into(),
                ))
            }
        }
    };
    let comp = build_composition(&cfg, &factors)?;
    let verdict = validate(&comp, &cfg.cluster, &cfg.model);
    let report = composed_costs(&comp, &cfg.model, &cfg.cluster, &composition_options(&cfg));
    let mut text = String::new();
    let _ = writeln!(text, "Grid {comp} on {} devices", comp.devices);
    let groups = |name: &str, gs: &[Vec<u64>], out: &mut String| {
        let shown: Vec<String> = gs
            .iter()
            .map(|g| format!("{{{}}}", g.iter().map(u64::to_string).collect::<Vec<_>>().join(",")))
            .collect();
        let _ = writeln!(out, "  {name}: {}", shown.join(" "));
    };
    groups("tensor groups", &comp.tp_groups, &mut text);
    groups("data groups", &comp.dp_groups, &mut text);
    groups("pipelines", &comp.pipelines, &mut text);
    text.push_str(&verdict_text(&verdict));
    text.push_str(&memory_table(&report.memory, globals.units));
    text.push_str(&comm_table(&report.comm, globals.units));
    let result = json!({
        "composition": comp,
        "validation": verdict,
        "memory": report.memory,
        "comm": report.comm,
    });
    let mut options = cfg.to_value();
    options["factors"] = serde_json::to_value(&factors).expect("factors serialize");
    Ok(ok(globals.manifest("compose", options), result, text))
}

#[derive(Clone, Debug, Default)]
pub struct SimulateFlags {
    pub steps: Option<usize>,
    pub inject: Option<Fault>,
}

/// The simulated layout for a configuration: catalogue TP and PP rows run
/// as pure tensor or pipeline grids, compositions as their grid.
fn sim_layout(cfg: &Config) -> Result<(Layout, Option<CompositionSpec>), InputError> {
    let n = cfg.cluster.device_count as usize;
    match &cfg.selection {
        None => Err(InputError(
            "simulate needs one of `placement`, `strategy` or `composition` in the config".into(),
        )),
        Some(Selection::Strategy(Strategy::TensorParallel)) => {
            Ok((Layout::TensorData { tp: n, dp: 1 }, None))
        }
        Some(Selection::Strategy(Strategy::PipelineParallel)) => {
            Ok((Layout::PipelineData { stages: n, dp: 1 }, None))
        }
        Some(Selection::Composition(factors)) => {
            let comp = build_composition(cfg, factors)?;
            Ok((Layout::try_from(&comp)?, Some(comp)))
        }
        Some(_) => Ok((Layout::placement(cfg.placement().expect("placement")), None)),
    }
}

pub fn simulate(globals: &Globals, flags: &SimulateFlags) -> Result<Outcome, InputError> {
    let cfg = globals.load()?;
    let s = &cfg.simulation;
    let (layout, comp) = sim_layout(&cfg)?;
    if let Layout::Placement { spec } = layout {
        let offloaded = TrainingState::ALL
            .into_iter()
            .any(|st| spec.mode(st) == PlacementMode::Offloaded);
        if offloaded {
            return Err(InputError(format!(
                "analytical-only mode: {spec} keeps states on the host; derive its costs instead"
            )));
        }
    }
    let sim = SimConfig::new(layout, cfg.cluster.device_count as usize)
        .with_batch(s.batch)
        .with_steps(flags.steps.unwrap_or(s.steps))
        .with_seed(globals.seed.unwrap_or(s.seed))
        .with_optimizer(s.optimizer)
        .with_element_bytes(s.element_bytes)
        .with_fault(flags.inject);
    let model = s.model();
    let (report, run) = verify(&model, &sim)?;

    // the simulator always repairs sharded-optimizer replicas, so predictions do too
    let profile = cost_profile(&model, &sim);
    let predicted = match (&layout, &comp) {
        (Layout::Placement { spec }, _) => derive_communication(
            &profile,
            &cfg.cluster,
            spec,
            &CommOptions::default().with_repair(true),
        ),
        (_, Some(c)) => composed_costs(c, &profile, &cfg.cluster, &CompositionOptions::default()).comm,
        (Layout::TensorData { tp, dp }, None) => {
            let c = compose(&[Factor::tp(*tp as u64), Factor::dp(*dp as u64)], &cfg.cluster)?;
            composed_costs(&c, &profile, &cfg.cluster, &CompositionOptions::default()).comm
        }
        (Layout::PipelineData { stages, dp }, None) => {
            let c = compose(&[Factor::pp(*stages as u64), Factor::dp(*dp as u64)], &cfg.cluster)?;
            composed_costs(&c, &profile, &cfg.cluster, &CompositionOptions::default()).comm
        }
    };
    let bytes = compare_bytes(&run, &predicted);

    let mut text = String::new();
    let fault = flags.inject.map_or("none".to_string(), |f| f.to_string());
    let _ = writeln!(
        text,
        "Simulated {layout} on {} devices, {} steps, seed {}, injected fault: {fault}",
        report.devices,
        report.steps,
        sim.seed
    );
    let mark = |b: bool| if b { "PASS" } else { "FAIL" };
    let _ = writeln!(
        text,
        "  step 1 gradient equivalence: grad_rel_err = {:.3e} (< {GRAD_REL_TOL:e}) {}",
        report.grad_rel_err,
        mark(report.grad_ok)
    );
    let _ = writeln!(
        text,
        "  step 2 replica checksums:    {} mismatches in {} checks {}",
        report.checksum_mismatches,
        report.checksum_checks,
        mark(report.checksums_ok)
    );
    if let Some(m) = &report.first_mismatch {
        let _ = writeln!(text, "      first: {m}");
    }
    let _ = writeln!(
        text,
        "  step 3 loss trajectory:      |{:.6} − {:.6}| = {:.3e} (< {TRAJECTORY_LOSS_TOL:e}) {}",
        report.final_loss,
        report.final_loss_reference,
        report.loss_diff,
        mark(report.trajectory_ok)
    );
    let _ = writeln!(text, "Bytes per device per step, measured vs predicted");
    for row in &bytes {
        let predicted = row.predicted.map_or("n/a".to_string(), |b| b.to_string());
        let agree = match row.equal {
            Some(true) => "equal",
            Some(false) => "DIFFERENT",
            None => "",
        };
        let _ = writeln!(
            text,
            "  {:<24} {:>12} {:>12}  {agree}",
            row.label.as_str(),
            row.measured.to_string(),
            predicted
        );
    }
    let _ = writeln!(
        text,
        "Verification: {}",
        if report.passed { "PASS" } else { "FAIL" }
    );

    let mut options = cfg.to_value();
    options["simulation"]["steps"] = json!(sim.steps);
    options["simulation"]["seed"] = json!(sim.seed);
    options["inject"] = json!(flags.inject);
    let result = json!({
        "layout": layout,
        "check": report,
        "bytes": bytes,
        "memory": run.memory,
        "schedule": run.schedule,
    });
    let mut out = ok(globals.manifest("simulate", options), result, text);
    if !report.passed {
        out.envelope.status = "verification_failed".into();
        out.exit_code = EXIT_VERIFY;
    }
    Ok(out)
}

pub fn validate_paper(globals: &Globals, devices: u64) -> Result<Outcome, InputError> {
    if devices == 0 {
        return Err(InputError("--devices must be positive".into()));
    }
    let suite = reference::suite(devices);
    let mut text = format!(
        "Reference fixtures: 70B parameters, {devices} devices, mixed-precision Adam\n"
    );
    for c in &suite.checks {
        let _ = writeln!(
            text,
            "  {} {:<44} expected {:<28} got {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.expected,
            c.got
        );
    }
    let _ = writeln!(text, "{}", if suite.passed { "all checks pass" } else { "MISMATCH" });
    let passed = suite.passed;
    let mut out = ok(
        globals.manifest("validate-paper", json!({ "devices": devices })),
        suite,
        text,
    );
    if !passed {
        out.envelope.status = "verification_failed".into();
        out.exit_code = EXIT_VERIFY;
    }
    Ok(out)
}

pub fn catalog_cmd(globals: &Globals) -> Outcome {
    let rows: Vec<Value> = catalog()
        .into_iter()
        .map(|(s, spec)| json!({ "strategy": s.name(), "spec": spec, "tuple": spec.to_string() }))
        .collect();
    let mut text = format!("{:<14} {:<6} {:<6} {:<6} {:<6}\n", "strategy", "Θ", "Ω", "G", "A");
    for (s, spec) in catalog() {
        let _ = writeln!(
            text,
            "{:<14} {:<6} {:<6} {:<6} {:<6}",
            s.name(),
            spec.theta.token(),
            spec.omega.token(),
            spec.grad.token(),
            spec.act.token()
        );
    }
    text.push_str("TP rows are per layer, PP rows per stage.\n");
    ok(globals.manifest("catalog", Value::Null), rows, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_lists_seven_rows() {
        let out = catalog_cmd(&Globals::default());
        assert_eq!(out.envelope.result.as_array().unwrap().len(), 7);
        assert!(out.text.contains("ZeRO-Offload"));
    }

    #[test]
    fn missing_config_is_an_input_error() {
        assert!(derive(&Globals::default()).is_err());
    }

    #[test]
    fn reference_suite_exit_codes() {
        assert_eq!(validate_paper(&Globals::default(), 8).unwrap().exit_code, EXIT_OK);
        assert!(validate_paper(&Globals::default(), 0).is_err());
    }
}
