//! Named architectures and how they are sized from a configuration.

use std::fmt;
use std::str::FromStr;

use gcrnn::model::{Activation, FeaturePooling, GnnSpec, ModelSpec, ReadoutMode, ReadoutSpec, RecurrentSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Generator};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    GnnBaseline,
    GcrnnGnn,
    GgcrnnGnn,
    GcrnnLocalmlp,
    GgcrnnLocalmlp,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::GnnBaseline,
        Architecture::GcrnnGnn,
        Architecture::GgcrnnGnn,
        Architecture::GcrnnLocalmlp,
        Architecture::GgcrnnLocalmlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::GnnBaseline => "gnn_baseline",
            Architecture::GcrnnGnn => "gcrnn_gnn",
            Architecture::GgcrnnGnn => "ggcrnn_gnn",
            Architecture::GcrnnLocalmlp => "gcrnn_localmlp",
            Architecture::GgcrnnLocalmlp => "ggcrnn_localmlp",
        }
    }

    /// Stable index used to derive per-architecture seeds.
    pub fn stream(self) -> u64 {
        Self::ALL.iter().position(|&a| a == self).expect("listed") as u64
    }

    pub fn is_recurrent(self) -> bool {
        self != Architecture::GnnBaseline
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Architecture::GgcrnnGnn | Architecture::GgcrnnLocalmlp)
    }

    pub fn has_local_mlp(self) -> bool {
        matches!(self, Architecture::GcrnnLocalmlp | Architecture::GgcrnnLocalmlp)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown architecture `{s}`")))
    }
}

/// Model for `arch` sized to the configured task.
///
/// Recurrent models carry a `D`-wide state and, when gated, two gate units
/// of the same width; their readout maps the state to one feature per node.
/// The baseline sees the `T_in` input signals stacked as features.
pub fn model_spec(config: &ExperimentConfig, arch: Architecture) -> ModelSpec {
    let m = &config.model;
    let n = config.graph.nodes;
    let in_features = 1;
    let out_features = 1;
    match arch {
        Architecture::GnnBaseline => {
            let mut features = vec![config.data.t_in * in_features];
            features.extend_from_slice(&m.baseline_features);
            ModelSpec::Gnn(GnnSpec {
                features,
                taps: m.taps,
                dense_out: None,
                pooling: m.baseline_pooling,
            })
        }
        _ => {
            let readout = if arch.has_local_mlp() {
                ReadoutSpec::LocalMlp {
                    out_features,
                    activation: Activation::Identity,
                }
            } else {
                ReadoutSpec::Gnn {
                    gnn: GnnSpec {
                        features: vec![m.state_features, out_features],
                        taps: m.taps,
                        dense_out: None,
                        pooling: FeaturePooling::None,
                    },
                }
            };
            let mode = match config.data.generator {
                Generator::Epicenter => ReadoutMode::FinalStep,
                Generator::Diffusion => m.readout,
            };
            ModelSpec::Recurrent(RecurrentSpec {
                n_nodes: n,
                in_features,
                state_features: m.state_features,
                taps: m.taps,
                gate_features: arch.is_gated().then_some(m.state_features),
                readout,
                mode,
            })
        }
    }
}
