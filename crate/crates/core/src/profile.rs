//! Model and cluster descriptions consumed by every cost rule.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::units::Bytes;

/// Byte sizes of the four training states plus the shape numbers the
/// reconstruction unit and planner need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub param_count: u64,
    pub layers: u64,
    pub hidden: u64,
    pub bytes_theta: Bytes,
    pub bytes_omega: Bytes,
    pub bytes_grad: Bytes,
    /// Activation bytes for one full replica, before any data split.
    /// `None` means "not modelled": activation terms are reported as zero.
    pub bytes_act: Option<Bytes>,
    /// Smallest independently gatherable unit (one layer by default).
    pub s_unit: Bytes,
}

impl ModelProfile {
    /// Mixed-precision Adam accounting: 2 bytes of FP16 params, 2 bytes of
    /// FP16 grads and 12 bytes of FP32 master weights plus moments per
    /// parameter. `s_unit` is one layer of FP16 parameters.
    pub fn mixed_precision(param_count: u64, layers: u64, hidden: u64) -> Result<Self, ConfigError> {
        let p = param_count as i128;
        let profile = ModelProfile {
            param_count,
            layers,
            hidden,
            bytes_theta: Bytes::new(2 * p),
            bytes_omega: Bytes::new(12 * p),
            bytes_grad: Bytes::new(2 * p),
            bytes_act: None,
            s_unit: Bytes::new(layer_param_count(hidden) as i128 * 2),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_activations(mut self, bytes: Bytes) -> Self {
        self.bytes_act = Some(bytes);
        self
    }

    pub fn with_s_unit(mut self, bytes: Bytes) -> Self {
        self.s_unit = bytes;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.param_count == 0 {
            return Err(ConfigError::non_positive("model.params", 0));
        }
        if self.layers == 0 {
            return Err(ConfigError::non_positive("model.layers", 0));
        }
        if self.hidden == 0 {
            return Err(ConfigError::non_positive("model.hidden", 0));
        }
        let sizes = [
            ("model.bytes_theta", Some(self.bytes_theta)),
            ("model.bytes_omega", Some(self.bytes_omega)),
            ("model.bytes_grad", Some(self.bytes_grad)),
            ("model.bytes_act", self.bytes_act),
            ("model.s_unit", Some(self.s_unit)),
        ];
        for (field, size) in sizes {
            if let Some(b) = size {
                if b <= Bytes::ZERO {
                    return Err(ConfigError::non_positive(field, b));
                }
            }
        }
        Ok(())
    }

    /// Parameters, optimizer state and gradients together.
    pub fn model_state_bytes(&self) -> Bytes {
        self.bytes_theta + self.bytes_omega + self.bytes_grad
    }

    pub fn activation_bytes(&self) -> Bytes {
        self.bytes_act.unwrap_or(Bytes::ZERO)
    }

    /// Parameter bytes of one transformer layer: `12 H^2` parameters at the
    /// same bytes-per-parameter as `bytes_theta`.
    pub fn layer_bytes(&self) -> Bytes {
        self.bytes_theta
            .scaled(layer_param_count(self.hidden) as i128, self.param_count as i128)
    }

    /// Same sizes divided by `parts` (tensor- or pipeline-parallel split).
    pub fn split(&self, parts: u64) -> ModelProfile {
        let d = parts as i128;
        ModelProfile {
            bytes_theta: self.bytes_theta / d,
            bytes_omega: self.bytes_omega / d,
            bytes_grad: self.bytes_grad / d,
            bytes_act: self.bytes_act.map(|a| a / d),
            ..self.clone()
        }
    }
}

/// `12 H^2`: four attention projections plus a 4x feed-forward pair.
pub fn layer_param_count(hidden: u64) -> u64 {
    12 * hidden * hidden
}

/// `P ≈ 12 L H^2`, ignoring embeddings. Advisory only.
pub fn approx_param_count(layers: u64, hidden: u64) -> u64 {
    layers * layer_param_count(hidden)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    IntraNode,
    InterNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    Fast,
    Slow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub scope: Scope,
    /// Per-message latency in seconds.
    pub latency_s: f64,
    pub class: LinkClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub device_count: u64,
    pub device_memory: Bytes,
    /// Devices sharing one intra-node tier. Defaults to `device_count`
    /// (a single node).
    pub devices_per_node: u64,
    pub interconnect: Vec<Tier>,
}

impl ClusterProfile {
    pub fn new(device_count: u64, device_memory: Bytes, interconnect: Vec<Tier>) -> Result<Self, ConfigError> {
        let c = ClusterProfile {
            device_count,
            device_memory,
            devices_per_node: device_count,
            interconnect,
        };
        c.validate()?;
        Ok(c)
    }

    /// `n` devices of 80 GB on one node with a fast link.
    pub fn single_node(device_count: u64, device_memory: Bytes) -> Self {
        ClusterProfile {
            device_count,
            device_memory,
            devices_per_node: device_count.max(1),
            interconnect: vec![Tier {
                scope: Scope::IntraNode,
                latency_s: 1e-6,
                class: LinkClass::Fast,
            }],
        }
    }

    pub fn with_devices_per_node(mut self, n: u64) -> Self {
        self.devices_per_node = n;
        self
    }

    pub fn with_devices(&self, device_count: u64) -> Self {
        ClusterProfile {
            device_count,
            devices_per_node: self.devices_per_node.min(device_count.max(1)),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.device_count == 0 {
            return Err(ConfigError::non_positive("cluster.devices", 0));
        }
        if self.device_memory <= Bytes::ZERO {
            return Err(ConfigError::non_positive("cluster.device_memory_bytes", self.device_memory));
        }
        if self.devices_per_node == 0 {
            return Err(ConfigError::non_positive("cluster.devices_per_node", 0));
        }
        if self.interconnect.is_empty() {
            return Err(ConfigError::MissingField("cluster.interconnect".into()));
        }
        for (i, t) in self.interconnect.iter().enumerate() {
            if !(t.latency_s >= 0.0 && t.latency_s.is_finite()) {
                return Err(ConfigError::invalid(
                    format!("cluster.interconnect[{i}].latency_s"),
                    "must be a finite non-negative number",
                ));
            }
        }
        Ok(())
    }

    pub fn tier(&self, scope: Scope) -> Option<&Tier> {
        self.interconnect.iter().find(|t| t.scope == scope)
    }

    pub fn node_of(&self, device: u64) -> u64 {
        device / self.devices_per_node
    }

    /// At least one intra-node tier classed fast.
    pub fn has_fast_intra_node(&self) -> bool {
        self.interconnect
            .iter()
            .any(|t| t.scope == Scope::IntraNode && t.class == LinkClass::Fast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_precision_is_sixteen_bytes_per_param() {
        let m = ModelProfile::mixed_precision(70_000_000_000, 80, 8192).unwrap();
        assert_eq!(m.bytes_omega, Bytes::new(840_000_000_000));
        assert_eq!(m.model_state_bytes(), Bytes::new(16 * 70_000_000_000));
        // 12 * 8192^2 * 2
        assert_eq!(m.s_unit, Bytes::new(1_610_612_736));
        assert_eq!(m.layer_bytes(), m.s_unit);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(matches!(
            ModelProfile::mixed_precision(0, 1, 1),
            Err(ConfigError::NonPositiveSize { .. })
        ));
        let m = ModelProfile::mixed_precision(10, 1, 1).unwrap().with_activations(Bytes::ZERO);
        assert!(m.validate().is_err());
        assert!(ClusterProfile::new(0, Bytes::new(1), vec![]).is_err());
        assert!(matches!(
            ClusterProfile::new(1, Bytes::new(1), vec![]),
            Err(ConfigError::MissingField(_))
        ));
    }

    #[test]
    fn approx_params_for_llama_like_shape() {
        assert_eq!(approx_param_count(80, 8192), 64_424_509_440);
    }
}
