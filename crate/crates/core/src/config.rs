//! JSON configuration documents.
//!
//! ```json
//! {
//!   "model":   { "params": 70e9, "layers": 80, "hidden": 8192 },
//!   "cluster": { "devices": 8, "device_memory_bytes": 80e9,
//!                "interconnect": [{ "scope": "intra_node", "latency_s": 1e-6, "class": "fast" }] },
//!   "strategy": "ZeRO-3"
//! }
//! ```
//!
//! Exactly one of `placement`, `strategy` or `composition` selects what to
//! analyse (`plan` accepts none). `options`, `planner` and `simulation` are
//! optional. Every error names the offending field path.

use serde_json::{json, Map, Value};

use crate::composition::{Factor, FactorKind};
use crate::cost::{CommOptions, MemoryOptions};
use crate::error::ConfigError;
use crate::placement::{PlacementMode, PlacementSpec, Strategy};
use crate::planner::PlannerConfig;
use crate::profile::{approx_param_count, ClusterProfile, LinkClass, ModelProfile, Scope, Tier};
use crate::sim::{Optimizer, TinyModel};
use crate::units::Bytes;

#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    Placement(PlacementSpec),
    Strategy(Strategy),
    Composition(Vec<Factor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub consistency_repair: bool,
    pub accumulation_steps: u64,
    pub prefetch_depth: u32,
    pub data_parallel_act_split: bool,
    /// Placement across the data-parallel dimension of a composition.
    pub data_placement: Option<PlacementSpec>,
    pub tp_activation_bytes: Option<Bytes>,
    pub pp_boundary_activation_bytes: Option<Bytes>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            consistency_repair: false,
            accumulation_steps: 1,
            prefetch_depth: 1,
            data_parallel_act_split: true,
            data_placement: None,
            tp_activation_bytes: None,
            pp_boundary_activation_bytes: None,
        }
    }
}

impl Options {
    pub fn comm(&self) -> CommOptions {
        CommOptions::default()
            .with_repair(self.consistency_repair)
            .with_accumulation(self.accumulation_steps)
    }

    pub fn memory(&self) -> MemoryOptions {
        MemoryOptions {
            data_parallel_act_split: self.data_parallel_act_split,
            prefetch_depth: self.prefetch_depth,
        }
    }
}

/// The desk-scale run behind `simulate`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub element_bytes: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            input: 8,
            hidden: 16,
            output: 8,
            layers: 4,
            batch: 32,
            steps: 100,
            seed: 0,
            optimizer: Optimizer::adam(0.01),
            element_bytes: 2,
        }
    }
}

impl SimSettings {
    pub fn model(&self) -> TinyModel {
        TinyModel::mlp(self.input, self.hidden, self.output, self.layers)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelProfile,
    pub cluster: ClusterProfile,
    pub selection: Option<Selection>,
    pub options: Options,
    pub planner: PlannerConfig,
    pub simulation: SimSettings,
    /// Non-fatal findings, such as a gather over a replicated optimizer.
    pub warnings: Vec<String>,
}

impl Config {
    pub fn new(model: ModelProfile, cluster: ClusterProfile, selection: Option<Selection>) -> Self {
        let mut c = Config {
            model,
            cluster,
            selection,
            options: Options::default(),
            planner: PlannerConfig::default(),
            simulation: SimSettings::default(),
            warnings: Vec::new(),
        };
        c.refresh_warnings();
        c
    }

    fn refresh_warnings(&mut self) {
        self.warnings = match self.placement() {
            Some(spec) => spec.warnings(),
            None => Vec::new(),
        };
    }

    /// The placement tuple, when the selection is one.
    pub fn placement(&self) -> Option<PlacementSpec> {
        match &self.selection {
            Some(Selection::Placement(p)) => Some(*p),
            Some(Selection::Strategy(s)) => Some(s.spec()),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let root: Value = serde_json::from_str(text)?;
        from_value(&root)
    }

    pub fn load(path: &std::path::Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Config::parse(&text)
    }

    pub fn to_value(&self) -> Value {
        let m = &self.model;
        let mut model = json!({
            "params": m.param_count,
            "layers": m.layers,
            "hidden": m.hidden,
            "bytes_theta": m.bytes_theta,
            "bytes_omega": m.bytes_omega,
            "bytes_grad": m.bytes_grad,
            "s_unit": m.s_unit,
        });
        if let Some(a) = m.bytes_act {
            model["bytes_act"] = json!(a);
        }
        let c = &self.cluster;
        let mut root = json!({
            "model": model,
            "cluster": {
                "devices": c.device_count,
                "device_memory_bytes": c.device_memory,
                "devices_per_node": c.devices_per_node,
                "interconnect": c.interconnect,
            },
            "options": {
                "consistency_repair": self.options.consistency_repair,
                "accumulation_steps": self.options.accumulation_steps,
                "prefetch_depth": self.options.prefetch_depth,
                "data_parallel_act_split": self.options.data_parallel_act_split,
            },
            "planner": {
                "model_state_threshold": self.planner.model_state_threshold,
                "layer_threshold": self.planner.layer_threshold,
            },
            "simulation": {
                "input": self.simulation.input,
                "hidden": self.simulation.hidden,
                "output": self.simulation.output,
                "layers": self.simulation.layers,
                "batch": self.simulation.batch,
                "steps": self.simulation.steps,
                "seed": self.simulation.seed,
                "optimizer": self.simulation.optimizer,
                "element_bytes": self.simulation.element_bytes,
            },
        });
        let o = &self.options;
        if let Some(p) = o.data_placement {
            root["options"]["data_placement"] = json!(p);
        }
        if let Some(b) = o.tp_activation_bytes {
            root["options"]["tp_activation_bytes"] = json!(b);
        }
        if let Some(b) = o.pp_boundary_activation_bytes {
            root["options"]["pp_boundary_activation_bytes"] = json!(b);
        }
        match &self.selection {
            Some(Selection::Placement(p)) => root["placement"] = json!(p),
            Some(Selection::Strategy(s)) => root["strategy"] = json!(s.name()),
            Some(Selection::Composition(f)) => root["composition"] = json!(f),
            None => {}
        }
        root
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("values serialize")
    }
}

/// Field-path aware view of one JSON object.
struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn new(path: &str, v: &'a Value) -> Result<Self, ConfigError> {
        match v.as_object() {
            Some(map) => Ok(Obj {
                path: path.to_string(),
                map,
            }),
            None => Err(ConfigError::invalid(display_path(path), "expected an object")),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn only(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::invalid(
                    self.field(k),
                    format!("unknown field (expected one of {})", allowed.join(", ")),
                ));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn req(&self, key: &str) -> Result<&'a Value, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingField(self.field(key)))
    }

    fn count(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key).map(|v| count(&self.field(key), v)).transpose()
    }

    fn req_count(&self, key: &str) -> Result<u64, ConfigError> {
        count(&self.field(key), self.req(key)?)
    }

    fn bytes(&self, key: &str) -> Result<Option<Bytes>, ConfigError> {
        self.get(key).map(|v| bytes(&self.field(key), v)).transpose()
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ConfigError::invalid(self.field(key), "expected a number"))
            })
            .transpose()
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.as_bool()
                    .ok_or_else(|| ConfigError::invalid(self.field(key), "expected true or false"))
            })
            .transpose()
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| ConfigError::invalid(self.field(key), "expected a string"))
            })
            .transpose()
    }
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "<root>".into()
    } else {
        path.into()
    }
}

/// Positive integer; JSON floats such as `70e9` are accepted when integral.
fn count(field: &str, v: &Value) -> Result<u64, ConfigError> {
    let n = if let Some(n) = v.as_u64() {
        n
    } else if let Some(x) = v.as_f64() {
        if x <= 0.0 {
            return Err(ConfigError::non_positive(field, x));
        }
        if x.fract() != 0.0 || x > 9.007_199_254_740_992e15 {
            return Err(ConfigError::invalid(field, format!("expected a whole number, got {x}")));
        }
        x as u64
    } else {
        return Err(ConfigError::invalid(field, "expected a positive whole number"));
    };
    if n == 0 {
        return Err(ConfigError::non_positive(field, 0));
    }
    Ok(n)
}

/// Positive byte size: an integral number or an exact `"n"` / `"n/d"` string.
fn bytes(field: &str, v: &Value) -> Result<Bytes, ConfigError> {
    let b = match v {
        Value::String(s) => s
            .parse::<Bytes>()
            .map_err(|e| ConfigError::invalid(field, e.to_string()))?,
        Value::Number(num) => {
            if let Some(i) = num.as_i64() {
                Bytes::new(i as i128)
            } else if let Some(x) = num.as_f64() {
                if x.fract() != 0.0 || x.abs() > 9.007_199_254_740_992e15 {
                    return Err(ConfigError::invalid(
                        field,
                        format!("expected whole bytes, got {x} (use a \"n/d\" string for fractions)"),
                    ));
                }
                Bytes::new(x as i128)
            } else {
                Bytes::new(num.as_u64().unwrap_or(u64::MAX) as i128)
            }
        }
        _ => return Err(ConfigError::invalid(field, "expected a byte count")),
    };
    if b <= Bytes::ZERO {
        return Err(ConfigError::non_positive(field, b));
    }
    Ok(b)
}

fn mode(field: &str, v: &Value) -> Result<PlacementMode, ConfigError> {
    let token = v
        .as_str()
        .ok_or_else(|| ConfigError::invalid(field, "expected a placement token string"))?;
    token.parse().map_err(|_| ConfigError::UnknownMode {
        field: field.to_string(),
        token: token.to_string(),
    })
}

fn placement(path: &str, v: &Value) -> Result<PlacementSpec, ConfigError> {
    if let Some(s) = v.as_str() {
        return s
            .parse()
            .map_err(|e: crate::placement::UnknownMode| ConfigError::invalid(path, e.to_string()));
    }
    let o = Obj::new(path, v)?;
    o.only(&["theta", "omega", "grad", "act"])?;
    Ok(PlacementSpec::new(
        mode(&o.field("theta"), o.req("theta")?)?,
        mode(&o.field("omega"), o.req("omega")?)?,
        mode(&o.field("grad"), o.req("grad")?)?,
        mode(&o.field("act"), o.req("act")?)?,
    ))
}

fn model(v: &Value) -> Result<ModelProfile, ConfigError> {
    let o = Obj::new("model", v)?;
    o.only(&[
        "params",
        "layers",
        "hidden",
        "bytes_theta",
        "bytes_omega",
        "bytes_grad",
        "bytes_act",
        "s_unit",
    ])?;
    let params = o.req_count("params")?;
    let layers = o.req_count("layers")?;
    let hidden = match o.count("hidden")? {
        Some(h) => h,
        None => infer_hidden(params, layers),
    };
    let mut m = ModelProfile::mixed_precision(params, layers, hidden)?;
    if let Some(b) = o.bytes("bytes_theta")? {
        m.bytes_theta = b;
        // keep the default unit at 12·H² parameters of this precision
        m.s_unit = m.layer_bytes();
    }
    if let Some(b) = o.bytes("bytes_omega")? {
        m.bytes_omega = b;
    }
    if let Some(b) = o.bytes("bytes_grad")? {
        m.bytes_grad = b;
    }
    m.bytes_act = o.bytes("bytes_act")?;
    if let Some(b) = o.bytes("s_unit")? {
        m.s_unit = b;
    }
    m.validate()?;
    Ok(m)
}

/// `H` from `P ≈ 12·L·H²`, nearest whole number.
pub fn infer_hidden(params: u64, layers: u64) -> u64 {
    let h = ((params as f64) / (12.0 * layers as f64)).sqrt().round() as u64;
    let h = h.max(1);
    // round() on the float can be off by one for huge values
    [h - 1, h, h + 1]
        .into_iter()
        .filter(|&x| x > 0)
        .min_by_key(|&x| approx_param_count(layers, x).abs_diff(params))
        .unwrap_or(1)
}

fn tier(path: &str, v: &Value) -> Result<Tier, ConfigError> {
    let o = Obj::new(path, v)?;
    o.only(&["scope", "latency_s", "class"])?;
    let scope = match o.string("scope")?.ok_or_else(|| ConfigError::MissingField(o.field("scope")))? {
        "intra_node" => Scope::IntraNode,
        "inter_node" => Scope::InterNode,
        other => {
            return Err(ConfigError::invalid(
                o.field("scope"),
                format!("unknown scope `{other}` (expected intra_node or inter_node)"),
            ))
        }
    };
    let class = match o.string("class")?.ok_or_else(|| ConfigError::MissingField(o.field("class")))? {
        "fast" => LinkClass::Fast,
        "slow" => LinkClass::Slow,
        other => {
            return Err(ConfigError::invalid(
                o.field("class"),
                format!("unknown class `{other}` (expected fast or slow)"),
            ))
        }
    };
    let latency_s = o
        .real("latency_s")?
        .ok_or_else(|| ConfigError::MissingField(o.field("latency_s")))?;
    Ok(Tier {
        scope,
        latency_s,
        class,
    })
}

fn cluster(v: &Value) -> Result<ClusterProfile, ConfigError> {
    let o = Obj::new("cluster", v)?;
    o.only(&["devices", "device_memory_bytes", "devices_per_node", "interconnect"])?;
    let devices = o.req_count("devices")?;
    let memory = bytes(&o.field("device_memory_bytes"), o.req("device_memory_bytes")?)?;
    let tiers = o
        .req("interconnect")?
        .as_array()
        .ok_or_else(|| ConfigError::invalid(o.field("interconnect"), "expected a list of tiers"))?;
    let interconnect = tiers
        .iter()
        .enumerate()
        .map(|(i, t)| tier(&format!("cluster.interconnect[{i}]"), t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut c = ClusterProfile::new(devices, memory, interconnect)?;
    if let Some(per) = o.count("devices_per_node")? {
        c = c.with_devices_per_node(per);
    }
    c.validate()?;
    Ok(c)
}

fn composition(v: &Value) -> Result<Vec<Factor>, ConfigError> {
    let list = v
        .as_array()
        .ok_or_else(|| ConfigError::invalid("composition", "expected a list of {kind, degree}"))?;
    list.iter()
        .enumerate()
        .map(|(i, f)| {
            let o = Obj::new(&format!("composition[{i}]"), f)?;
            o.only(&["kind", "degree"])?;
            let kind_s = o.string("kind")?.ok_or_else(|| ConfigError::MissingField(o.field("kind")))?;
            let kind = match kind_s.to_ascii_uppercase().as_str() {
                "TP" => FactorKind::Tensor,
                "PP" => FactorKind::Pipeline,
                "DP" => FactorKind::Data,
                _ => {
                    return Err(ConfigError::invalid(
                        o.field("kind"),
                        format!("unknown factor `{kind_s}` (expected TP, PP or DP)"),
                    ))
                }
            };
            Ok(Factor {
                kind,
                degree: o.req_count("degree")?,
            })
        })
        .collect()
}

fn options(v: &Value) -> Result<Options, ConfigError> {
    let o = Obj::new("options", v)?;
    o.only(&[
        "consistency_repair",
        "accumulation_steps",
        "prefetch_depth",
        "data_parallel_act_split",
        "data_placement",
        "tp_activation_bytes",
        "pp_boundary_activation_bytes",
    ])?;
    let d = Options::default();
    Ok(Options {
        consistency_repair: o.boolean("consistency_repair")?.unwrap_or(d.consistency_repair),
        accumulation_steps: o.count("accumulation_steps")?.unwrap_or(d.accumulation_steps),
        prefetch_depth: match o.count("prefetch_depth")? {
            Some(p) => u32::try_from(p)
                .map_err(|_| ConfigError::invalid(o.field("prefetch_depth"), "too large"))?,
            None => d.prefetch_depth,
        },
        data_parallel_act_split: o
            .boolean("data_parallel_act_split")?
            .unwrap_or(d.data_parallel_act_split),
        data_placement: o
            .get("data_placement")
            .map(|v| placement("options.data_placement", v))
            .transpose()?,
        tp_activation_bytes: o.bytes("tp_activation_bytes")?,
        pp_boundary_activation_bytes: o.bytes("pp_boundary_activation_bytes")?,
    })
}

fn planner(v: &Value) -> Result<PlannerConfig, ConfigError> {
    let o = Obj::new("planner", v)?;
    o.only(&["model_state_threshold", "layer_threshold"])?;
    let d = PlannerConfig::default();
    let p = PlannerConfig {
        model_state_threshold: o.real("model_state_threshold")?.unwrap_or(d.model_state_threshold),
        layer_threshold: o.real("layer_threshold")?.unwrap_or(d.layer_threshold),
    };
    p.validate()?;
    Ok(p)
}

fn simulation(v: &Value) -> Result<SimSettings, ConfigError> {
    let o = Obj::new("simulation", v)?;
    o.only(&[
        "input",
        "hidden",
        "output",
        "layers",
        "batch",
        "steps",
        "seed",
        "optimizer",
        "element_bytes",
    ])?;
    let d = SimSettings::default();
    let size = |k: &str, dflt: usize| -> Result<usize, ConfigError> {
        Ok(o.count(k)?.map(|x| x as usize).unwrap_or(dflt))
    };
    let seed = match o.get("seed") {
        None => d.seed,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ConfigError::invalid(o.field("seed"), "expected a non-negative integer"))?,
    };
    let optimizer = match o.get("optimizer") {
        None => d.optimizer,
        Some(v) => serde_json::from_value::<Optimizer>(v.clone()).map_err(|e| {
            ConfigError::invalid(o.field("optimizer"), format!("{e} (e.g. {{\"kind\": \"adam\", \"lr\": 0.01, \"beta1\": 0.9, \"beta2\": 0.999, \"eps\": 1e-8}} or {{\"kind\": \"sgd\", \"lr\": 0.1}})"))
        })?,
    };
    Ok(SimSettings {
        input: size("input", d.input)?,
        hidden: size("hidden", d.hidden)?,
        output: size("output", d.output)?,
        layers: size("layers", d.layers)?,
        batch: size("batch", d.batch)?,
        steps: size("steps", d.steps)?,
        seed,
        optimizer,
        element_bytes: o.count("element_bytes")?.unwrap_or(d.element_bytes),
    })
}

fn from_value(root: &Value) -> Result<Config, ConfigError> {
    let o = Obj::new("", root)?;
    o.only(&[
        "model",
        "cluster",
        "placement",
        "strategy",
        "composition",
        "options",
        "planner",
        "simulation",
    ])?;
    let model = model(o.req("model")?)?;
    let cluster = cluster(o.req("cluster")?)?;
    let present: Vec<&str> = ["placement", "strategy", "composition"]
        .into_iter()
        .filter(|k| o.get(k).is_some())
        .collect();
    let selection = match present.as_slice() {
        [] => None,
        ["placement"] => Some(Selection::Placement(placement("placement", o.req("placement")?)?)),
        ["strategy"] => {
            let name = o
                .string("strategy")?
                .expect("present");
            Some(Selection::Strategy(
                name.parse()
                    .map_err(|_| ConfigError::UnknownStrategy(name.to_string()))?,
            ))
        }
        ["composition"] => Some(Selection::Composition(composition(o.req("composition")?)?)),
        many => return Err(ConfigError::SpecSelector(many.join(" and "))),
    };
    let mut cfg = Config::new(model, cluster, selection);
    if let Some(v) = o.get("options") {
        cfg.options = options(v)?;
    }
    if let Some(v) = o.get("planner") {
        cfg.planner = planner(v)?;
    }
    if let Some(v) = o.get("simulation") {
        cfg.simulation = simulation(v)?;
    }
    cfg.refresh_warnings();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::PlacementMode::*;

    const DP70: &str = r#"{
        "model": {"params": 70e9, "layers": 80, "hidden": 8192},
        "cluster": {"devices": 8, "device_memory_bytes": 80e9,
                    "interconnect": [{"scope": "intra_node", "latency_s": 1e-6, "class": "fast"}]},
        "placement": {"theta": "R", "omega": "R", "grad": "R", "act": "R"}
    }"#;

    #[test]
    fn mixed_precision_defaults() {
        let c = Config::parse(DP70).unwrap();
        assert_eq!(c.model.bytes_omega, Bytes::new(840_000_000_000));
        assert_eq!(c.model.s_unit, Bytes::new(1_610_612_736));
        assert_eq!(c.placement(), Some(PlacementSpec::new(Replicated, Replicated, Replicated, Replicated)));
    }

    #[test]
    fn unknown_token_names_the_field() {
        let bad = DP70.replace(r#""theta": "R""#, r#""theta": "X""#);
        let e = Config::parse(&bad).unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownMode {
                field: "placement.theta".into(),
                token: "X".into()
            }
        );
        assert!(e.to_string().contains("placement.theta"));
    }

    #[test]
    fn missing_and_non_positive() {
        let no_params = DP70.replace(r#""params": 70e9, "#, "");
        assert_eq!(
            Config::parse(&no_params).unwrap_err(),
            ConfigError::MissingField("model.params".into())
        );
        let zero = DP70.replace("80e9", "0");
        assert!(matches!(
            Config::parse(&zero).unwrap_err(),
            ConfigError::NonPositiveSize { field, .. } if field == "cluster.device_memory_bytes"
        ));
        let two = DP70.replace(r#""placement""#, r#""strategy": "DP", "placement""#);
        assert!(matches!(Config::parse(&two).unwrap_err(), ConfigError::SpecSelector(_)));
    }

    #[test]
    fn syntax_error_has_position() {
        let e = Config::parse("{\n  \"model\": ,\n}").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = DP70.replace(r#""layers""#, r#""layer""#);
        let e = Config::parse(&typo).unwrap_err();
        assert!(e.to_string().starts_with("model.layer:"), "{e}");
    }

    #[test]
    fn hidden_is_inferred() {
        assert_eq!(infer_hidden(70_000_000_000, 80), 8539);
        assert_eq!(infer_hidden(12 * 80 * 8192 * 8192, 80), 8192);
    }

    #[test]
    fn round_trip_every_spec() {
        let base = Config::parse(DP70).unwrap();
        for spec in PlacementSpec::enumerate() {
            let mut c = base.clone();
            c.selection = Some(Selection::Placement(spec));
            c.refresh_warnings();
            let back = Config::parse(&c.to_json_string()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn round_trip_with_everything() {
        let text = r#"{
            "model": {"params": 1000000, "layers": 4, "bytes_act": "7/3", "s_unit": 4096},
            "cluster": {"devices": 4, "device_memory_bytes": 1000000000, "devices_per_node": 2,
                        "interconnect": [{"scope": "intra_node", "latency_s": 1e-6, "class": "fast"},
                                         {"scope": "inter_node", "latency_s": 5e-6, "class": "slow"}]},
            "composition": [{"kind": "tp", "degree": 2}, {"kind": "DP", "degree": 2}],
            "options": {"consistency_repair": true, "accumulation_steps": 4, "data_placement": "(S*, S, S, R)",
                        "pp_boundary_activation_bytes": 1024},
            "planner": {"model_state_threshold": 0.6},
            "simulation": {"steps": 10, "seed": 3, "optimizer": {"kind": "sgd", "lr": 0.1}}
        }"#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.model.bytes_act, Some(Bytes::from_ratio(num_rational::Ratio::new(7, 3))));
        assert_eq!(c.options.data_placement, Some(Strategy::Zero3.spec()));
        assert_eq!(Config::parse(&c.to_json_string()).unwrap(), c);
    }
}
