use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise output nonlinearity `ρ` of a readout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

/// Whether a recurrent model emits an estimate at every step or only after
/// the last one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    PerStep,
    FinalStep,
}

/// Reduction applied after the last layer of a graph network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePooling {
    /// Output features are returned as they are.
    #[default]
    None,
    /// Every layer (the last included) is rectified and the output features
    /// are averaged into one score per node. Adds no parameters.
    Mean,
}

/// Layer widths of a stack of filter banks with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnSpec {
    /// `[input, hidden…, output]` feature counts; at least two entries.
    pub features: Vec<usize>,
    pub taps: usize,
    /// Optional per-node dense map from the last layer to this many features.
    #[serde(default)]
    pub dense_out: Option<usize>,
    #[serde(default)]
    pub pooling: FeaturePooling,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ReadoutSpec {
    /// One filter bank `D → G`.
    Lsigf {
        out_features: usize,
        taps: usize,
        #[serde(default)]
        activation: Activation,
    },
    /// Graph network whose input width is the state width.
    Gnn { gnn: GnnSpec },
    /// Shared `G × D` matrix applied at every node.
    LocalMlp {
        out_features: usize,
        #[serde(default)]
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub n_nodes: usize,
    pub in_features: usize,
    pub state_features: usize,
    pub taps: usize,
    /// State width `U = V` of both gate units; `None` for an ungated model.
    pub gate_features: Option<usize>,
    pub readout: ReadoutSpec,
    pub mode: ReadoutMode,
}

/// Architecture description from which a model can be rebuilt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Recurrent(RecurrentSpec),
    /// Non-recurrent graph network; a length-`T` sequence of `F`-feature
    /// signals enters as one signal with `T·F` features.
    Gnn(GnnSpec),
}

impl GnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() < 2 {
            return Err(Error::invalid("a graph network needs at least one layer"));
        }
        if self.features.iter().any(|&f| f == 0) || self.taps == 0 || self.dense_out == Some(0) {
            return Err(Error::invalid("feature counts and taps must be positive"));
        }
        if self.dense_out.is_some() && self.pooling != FeaturePooling::None {
            return Err(Error::invalid("a dense output map cannot be combined with pooling"));
        }
        Ok(())
    }

    pub fn in_features(&self) -> usize {
        self.features[0]
    }

    /// Output features per node after the optional dense map and pooling.
    pub fn out_features(&self) -> usize {
        match (self.pooling, self.dense_out) {
            (FeaturePooling::Mean, _) => 1,
            (_, Some(d)) => d,
            _ => *self.features.last().expect("validated"),
        }
    }
}

impl ReadoutSpec {
    pub fn out_features(&self) -> usize {
        match self {
            ReadoutSpec::Lsigf { out_features, .. } | ReadoutSpec::LocalMlp { out_features, .. } => *out_features,
            ReadoutSpec::Gnn { gnn } => gnn.out_features(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Gnn(g) => g.validate(),
            ModelSpec::Recurrent(r) => {
                if r.n_nodes == 0 || r.in_features == 0 || r.state_features == 0 || r.taps == 0 {
                    return Err(Error::invalid("recurrent model dimensions must be positive"));
                }
                if r.gate_features == Some(0) {
                    return Err(Error::invalid("gate width must be positive"));
                }
                match &r.readout {
                    ReadoutSpec::Lsigf { out_features, taps, .. } if *out_features == 0 || *taps == 0 => {
                        Err(Error::invalid("readout dimensions must be positive"))
                    }
                    ReadoutSpec::LocalMlp { out_features, .. } if *out_features == 0 => {
                        Err(Error::invalid("readout dimensions must be positive"))
                    }
                    ReadoutSpec::Gnn { gnn } => {
                        gnn.validate()?;
                        if gnn.in_features() != r.state_features {
                            return Err(Error::invalid(format!(
                                "readout network takes {} features but the state has {}",
                                gnn.in_features(),
                                r.state_features
                            )));
                        }
                        Ok(())
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    pub fn is_gated(&self) -> bool {
        matches!(self, ModelSpec::Recurrent(r) if r.gate_features.is_some())
    }
}
