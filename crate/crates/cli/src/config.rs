//! Experiment configuration: a sectioned TOML file.

use std::path::{Path, PathBuf};

use gcrnn::model::{FeaturePooling, ReadoutMode};
use gcrnn::train::{LossKind, Metric, TrainConfig};
use gcrnn::{GsoKind, NoiseSpec, SplitSizes};
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent graph and dataset realizations.
    #[serde(default = "one")]
    pub rounds: usize,
    pub graph: GraphSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub training: TrainingSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Sbm,
    Knn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub kind: GraphKind,
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communities: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_intra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_inter: Option<f64>,
    /// `x,y` CSV of sensor positions; drawn uniformly on the unit square
    /// per round when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "normalized")]
    pub gso: GsoKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architectures: Vec<Architecture>,
    /// State width `D` of the recurrent cell (and of each gate).
    pub state_features: usize,
    pub taps: usize,
    pub readout: ReadoutMode,
    /// Layer widths of the baseline after its stacked input.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_features: Vec<usize>,
    #[serde(default)]
    pub baseline_pooling: FeaturePooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Diffusion,
    Epicenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generator: Generator,
    pub t_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_out: Option<usize>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<WaveSection>,
}

/// Event model of the epicenter generator; noise comes from `data.noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    pub sample_rate_hz: f64,
    pub speed: f64,
    pub damping: f64,
    pub frequency_hz: f64,
    pub max_origin_s: f64,
}

impl Default for WaveSection {
    fn default() -> Self {
        let w = gcrnn::process::WaveSpec::default();
        Self {
            sample_rate_hz: w.sample_rate_hz,
            speed: w.speed,
            damping: w.damping,
            frequency_hz: w.frequency_hz,
            max_origin_s: w.max_origin_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Rate for models with a localized perceptron readout; `learning_rate`
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_mlp_learning_rate: Option<f64>,
    pub loss: LossKind,
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

fn normalized() -> GsoKind {
    GsoKind::NormalizedAdjacency
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    /// Parses and validates; syntax errors carry line and column.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is representable as TOML")
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.data.train,
            val: self.data.val,
            test: self.data.test,
        }
    }

    pub fn metric(&self) -> Metric {
        match self.training.loss {
            LossKind::L1 => Metric::Mae,
            LossKind::CrossEntropy => Metric::Accuracy,
        }
    }

    pub fn train_config(&self, arch: Architecture, seed: u64) -> TrainConfig {
        let learning_rate = match self.training.local_mlp_learning_rate {
            Some(lr) if arch.has_local_mlp() => lr,
            _ => self.training.learning_rate,
        };
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate,
            loss: self.training.loss,
            eval_every: self.training.eval_every,
            seed,
        }
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.data.noise
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        let g = &self.graph;
        if g.nodes < 2 {
            return Err(invalid("graph.nodes", "needs at least two nodes"));
        }
        match g.kind {
            GraphKind::Sbm => {
                let c = g.communities.ok_or_else(|| invalid("graph.communities", "required for sbm graphs"))?;
                if c == 0 || g.nodes % c != 0 {
                    return Err(invalid("graph.communities", format!("{c} does not divide {} nodes", g.nodes)));
                }
                for (key, p) in [("graph.p_intra", g.p_intra), ("graph.p_inter", g.p_inter)] {
                    let p = p.ok_or_else(|| invalid(key, "required for sbm graphs"))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(invalid(key, format!("{p} is not a probability")));
                    }
                }
                if g.p_inter > g.p_intra {
                    return Err(invalid("graph.p_inter", "exceeds graph.p_intra"));
                }
                if g.k.is_some() || g.coordinates.is_some() {
                    return Err(invalid("graph", "k and coordinates apply to knn graphs only"));
                }
            }
            GraphKind::Knn => {
                let k = g.k.ok_or_else(|| invalid("graph.k", "required for knn graphs"))?;
                if k == 0 || k >= g.nodes {
                    return Err(invalid("graph.k", format!("must lie in 1..{}", g.nodes)));
                }
                if g.communities.is_some() || g.p_intra.is_some() || g.p_inter.is_some() {
                    return Err(invalid("graph", "communities and probabilities apply to sbm graphs only"));
                }
            }
        }

        let m = &self.model;
        if m.architectures.is_empty() {
            return Err(invalid("model.architectures", "list at least one architecture"));
        }
        if m.state_features == 0 || m.taps == 0 {
            return Err(invalid("model", "state_features and taps must be positive"));
        }
        if m.baseline_features.contains(&0) {
            return Err(invalid("model.baseline_features", "widths must be positive"));
        }
        if m.architectures.contains(&Architecture::GnnBaseline) && m.baseline_features.is_empty() {
            return Err(invalid("model.baseline_features", "required for gnn_baseline"));
        }

        let d = &self.data;
        if d.t_in == 0 {
            return Err(invalid("data.t_in", "must be positive"));
        }
        if d.train == 0 || d.val == 0 || d.test == 0 {
            return Err(invalid("data", "train, val and test sizes must be positive"));
        }
        d.noise.validate().map_err(|e| invalid("data.noise", e))?;

        let t = &self.training;
        if t.batch_size == 0 || t.eval_every == 0 {
            return Err(invalid("training", "batch_size and eval_every must be positive"));
        }
        for (key, lr) in [
            ("training.learning_rate", Some(t.learning_rate)),
            ("training.local_mlp_learning_rate", t.local_mlp_learning_rate),
        ] {
            if lr.is_some_and(|lr| !(lr.is_finite() && lr > 0.0)) {
                return Err(invalid(key, "must be positive"));
            }
        }

        match d.generator {
            Generator::Diffusion => {
                let t_out = d.t_out.ok_or_else(|| invalid("data.t_out", "required for diffusion data"))?;
                if t_out == 0 {
                    return Err(invalid("data.t_out", "must be positive"));
                }
                if d.wave.is_some() {
                    return Err(invalid("data.wave", "applies to epicenter data only"));
                }
                if t.loss != LossKind::L1 {
                    return Err(invalid("training.loss", "diffusion prediction trains with l1"));
                }
                let recurrent = m.architectures.iter().any(|a| a.is_recurrent());
                match m.readout {
                    ReadoutMode::PerStep if recurrent && t_out != d.t_in => {
                        return Err(invalid("data.t_out", "per_step readout needs t_out equal to t_in"));
                    }
                    ReadoutMode::FinalStep if recurrent && t_out != 1 => {
                        return Err(invalid("model.readout", "final_step readout predicts a single step"));
                    }
                    _ => {}
                }
                if m.architectures.contains(&Architecture::GnnBaseline) {
                    if m.baseline_pooling != FeaturePooling::None {
                        return Err(invalid("model.baseline_pooling", "regression baselines are not pooled"));
                    }
                    if m.baseline_features.last() != Some(&t_out) {
                        return Err(invalid(
                            "model.baseline_features",
                            format!("last width must equal data.t_out = {t_out}"),
                        ));
                    }
                }
            }
            Generator::Epicenter => {
                if g.kind != GraphKind::Knn {
                    return Err(invalid("graph.kind", "epicenter data needs sensor coordinates (knn)"));
                }
                if d.t_out.is_some() {
                    return Err(invalid("data.t_out", "epicenter samples carry labels, not target sequences"));
                }
                if t.loss != LossKind::CrossEntropy {
                    return Err(invalid("training.loss", "epicenter placement trains with cross_entropy"));
                }
                if m.readout != ReadoutMode::FinalStep {
                    return Err(invalid("model.readout", "classification reads out the final step"));
                }
                if m.architectures.contains(&Architecture::GnnBaseline)
                    && m.baseline_pooling == FeaturePooling::None
                    && m.baseline_features.last() != Some(&1)
                {
                    return Err(invalid("model.baseline_features", "classification needs one score per node"));
                }
                if let Some(w) = &d.wave {
                    self.wave_spec_from(w).validate().map_err(|e| invalid("data.wave", e))?;
                }
            }
        }
        Ok(())
    }

    fn wave_spec_from(&self, w: &WaveSection) -> gcrnn::process::WaveSpec {
        gcrnn::process::WaveSpec {
            sample_rate_hz: w.sample_rate_hz,
            speed: w.speed,
            damping: w.damping,
            frequency_hz: w.frequency_hz,
            max_origin_s: w.max_origin_s,
            region: [0.0, 1.0, 0.0, 1.0],
            noise: self.data.noise,
        }
    }

    /// Wave model for the epicenter generator.
    pub fn wave_spec(&self) -> gcrnn::process::WaveSpec {
        self.wave_spec_from(&self.data.wave.clone().unwrap_or_default())
    }
}
