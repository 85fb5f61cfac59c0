//! Placement modes, placement specifications and the strategy catalog.
//!
//! A strategy is nothing more than a choice of [`PlacementMode`] for each of
//! the four training states. Everything else in the crate (memory,
//! communication, simulation) is computed from that tuple.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Where the bytes of one training state live across `N` devices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlacementMode {
    /// Every device stores the full tensor.
    Replicated,
    /// Device `i` stores contiguous shard `i` and only ever uses it.
    Sharded,
    /// Shard `i` is stored; the full tensor is all-gathered before each use
    /// and the non-local part is dropped afterwards.
    ShardedWithGather,
    /// Nothing stored; rebuilt one unit at a time when needed.
    Materialized,
    /// Lives in host memory or NVMe, zero device bytes.
    Offloaded,
}

impl PlacementMode {
    pub const ALL: [PlacementMode; 5] = [
        PlacementMode::Replicated,
        PlacementMode::Sharded,
        PlacementMode::ShardedWithGather,
        PlacementMode::Materialized,
        PlacementMode::Offloaded,
    ];

    pub fn token(self) -> &'static str {
        match self {
            PlacementMode::Replicated => "R",
            PlacementMode::Sharded => "S",
            PlacementMode::ShardedWithGather => "S*",
            PlacementMode::Materialized => "M",
            PlacementMode::Offloaded => "O",
        }
    }
}

impl fmt::Display for PlacementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown placement mode `{0}` (expected one of R, S, S*, M, O)")]
pub struct UnknownMode(pub String);

impl FromStr for PlacementMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R" => Ok(PlacementMode::Replicated),
            "S" => Ok(PlacementMode::Sharded),
            "S*" => Ok(PlacementMode::ShardedWithGather),
            "M" => Ok(PlacementMode::Materialized),
            "O" => Ok(PlacementMode::Offloaded),
            other => Err(UnknownMode(other.to_string())),
        }
    }
}

impl Serialize for PlacementMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for PlacementMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four training states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingState {
    Params,
    Optimizer,
    Grads,
    Activations,
}

impl TrainingState {
    pub const ALL: [TrainingState; 4] = [
        TrainingState::Params,
        TrainingState::Optimizer,
        TrainingState::Grads,
        TrainingState::Activations,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            TrainingState::Params => "Θ",
            TrainingState::Optimizer => "Ω",
            TrainingState::Grads => "G",
            TrainingState::Activations => "A",
        }
    }
}

impl fmt::Display for TrainingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TrainingState::Params => "params",
            TrainingState::Optimizer => "optimizer",
            TrainingState::Grads => "grads",
            TrainingState::Activations => "activations",
        };
        f.write_str(name)
    }
}

/// One placement mode per training state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub theta: PlacementMode,
    pub omega: PlacementMode,
    pub grad: PlacementMode,
    pub act: PlacementMode,
}

impl PlacementSpec {
    pub const fn new(
        theta: PlacementMode,
        omega: PlacementMode,
        grad: PlacementMode,
        act: PlacementMode,
    ) -> Self {
        PlacementSpec {
            theta,
            omega,
            grad,
            act,
        }
    }

    pub fn mode(&self, state: TrainingState) -> PlacementMode {
        match state {
            TrainingState::Params => self.theta,
            TrainingState::Optimizer => self.omega,
            TrainingState::Grads => self.grad,
            TrainingState::Activations => self.act,
        }
    }

    /// States whose modes differ between `self` and `other`.
    pub fn diff(&self, other: &PlacementSpec) -> Vec<TrainingState> {
        TrainingState::ALL
            .into_iter()
            .filter(|s| self.mode(*s) != other.mode(*s))
            .collect()
    }

    /// Non-fatal observations about unusual specs.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.theta == PlacementMode::ShardedWithGather && self.omega == PlacementMode::Replicated
        {
            out.push(
                "params are S* while optimizer state is R; no catalogued strategy uses this \
                 combination (still computable)"
                    .to_string(),
            );
        }
        out
    }

    /// Every one of the 5^4 possible specs.
    pub fn enumerate() -> impl Iterator<Item = PlacementSpec> {
        PlacementMode::ALL.into_iter().flat_map(|t| {
            PlacementMode::ALL.into_iter().flat_map(move |o| {
                PlacementMode::ALL.into_iter().flat_map(move |g| {
                    PlacementMode::ALL
                        .into_iter()
                        .map(move |a| PlacementSpec::new(t, o, g, a))
                })
            })
        })
    }
}

impl fmt::Display for PlacementSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.theta, self.omega, self.grad, self.act)
    }
}

impl FromStr for PlacementSpec {
    type Err = UnknownMode;

    /// Parses the `Display` form, `(R, S, S, R)`; parentheses are optional.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(UnknownMode(s.to_string()));
        }
        Ok(PlacementSpec::new(
            parts[0].parse()?,
            parts[1].parse()?,
            parts[2].parse()?,
            parts[3].parse()?,
        ))
    }
}

use PlacementMode::{Offloaded as O, Replicated as R, Sharded as S, ShardedWithGather as SG};

/// Named strategies with a fixed placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    DataParallel,
    Zero1,
    Zero2,
    Zero3,
    ZeroOffload,
    TensorParallel,
    PipelineParallel,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::DataParallel,
        Strategy::Zero1,
        Strategy::Zero2,
        Strategy::Zero3,
        Strategy::ZeroOffload,
        Strategy::TensorParallel,
        Strategy::PipelineParallel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::DataParallel => "DP",
            Strategy::Zero1 => "ZeRO-1",
            Strategy::Zero2 => "ZeRO-2",
            Strategy::Zero3 => "ZeRO-3/FSDP",
            Strategy::ZeroOffload => "ZeRO-Offload",
            Strategy::TensorParallel => "TP",
            Strategy::PipelineParallel => "PP",
        }
    }

    /// Per-layer (TP) or per-stage (PP) for the last two rows.
    pub fn spec(self) -> PlacementSpec {
        match self {
            Strategy::DataParallel => PlacementSpec::new(R, R, R, R),
            Strategy::Zero1 => PlacementSpec::new(R, S, R, R),
            Strategy::Zero2 => PlacementSpec::new(R, S, S, R),
            Strategy::Zero3 => PlacementSpec::new(SG, S, S, R),
            Strategy::ZeroOffload => PlacementSpec::new(O, O, S, R),
            Strategy::TensorParallel => PlacementSpec::new(S, S, S, S),
            Strategy::PipelineParallel => PlacementSpec::new(S, S, S, R),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy `{0}` (expected one of DP, ZeRO-1, ZeRO-2, ZeRO-3, FSDP, ZeRO-Offload, TP, PP)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '/')
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "dp" | "ddp" | "dataparallel" => Ok(Strategy::DataParallel),
            "zero1" => Ok(Strategy::Zero1),
            "zero2" => Ok(Strategy::Zero2),
            "zero3" | "fsdp" | "zero3/fsdp" => Ok(Strategy::Zero3),
            "zerooffload" => Ok(Strategy::ZeroOffload),
            "tp" | "tensorparallel" => Ok(Strategy::TensorParallel),
            "pp" | "pipelineparallel" => Ok(Strategy::PipelineParallel),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

/// Look up a catalogued strategy by name.
pub fn catalog_lookup(name: &str) -> Result<PlacementSpec, UnknownStrategy> {
    name.parse::<Strategy>().map(Strategy::spec)
}

/// All catalogue rows in their canonical order.
pub fn catalog() -> Vec<(Strategy, PlacementSpec)> {
    Strategy::ALL.into_iter().map(|s| (s, s.spec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse_exactly_five_tokens() {
        for m in PlacementMode::ALL {
            assert_eq!(m.token().parse::<PlacementMode>().unwrap(), m);
        }
        for bad in ["X", "", "r", "S**", "SG"] {
            assert_eq!(bad.parse::<PlacementMode>(), Err(UnknownMode(bad.to_string())));
        }
    }

    #[test]
    fn catalog_rows() {
        assert_eq!(catalog_lookup("ZeRO-2").unwrap(), PlacementSpec::new(R, S, S, R));
        assert_eq!(catalog_lookup("ZeRO-3").unwrap(), PlacementSpec::new(SG, S, S, R));
        assert_eq!(catalog_lookup("FSDP").unwrap(), PlacementSpec::new(SG, S, S, R));
        assert_eq!(catalog_lookup("DP").unwrap(), PlacementSpec::new(R, R, R, R));
        assert_eq!(catalog_lookup("ZeRO-1").unwrap(), PlacementSpec::new(R, S, R, R));
        assert_eq!(catalog_lookup("ZeRO-Offload").unwrap(), PlacementSpec::new(O, O, S, R));
        assert_eq!(catalog_lookup("TP").unwrap(), PlacementSpec::new(S, S, S, S));
        assert_eq!(catalog_lookup("PP").unwrap(), PlacementSpec::new(S, S, S, R));
        assert!(catalog_lookup("ZeRO-4").is_err());
    }

    #[test]
    fn zero2_and_zero3_differ_only_in_params() {
        let z2 = Strategy::Zero2.spec();
        let z3 = Strategy::Zero3.spec();
        assert_eq!(z2.diff(&z3), vec![TrainingState::Params]);
    }

    #[test]
    fn spec_text_round_trip_is_exhaustive() {
        let mut n = 0;
        for spec in PlacementSpec::enumerate() {
            assert_eq!(spec.to_string().parse::<PlacementSpec>().unwrap(), spec);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<PlacementSpec>(&json).unwrap(), spec);
            n += 1;
        }
        assert_eq!(n, 625);
    }

    #[test]
    fn gather_with_replicated_optimizer_warns() {
        assert!(!PlacementSpec::new(SG, R, R, R).warnings().is_empty());
        for (_, spec) in catalog() {
            assert!(spec.warnings().is_empty());
        }
    }
}
