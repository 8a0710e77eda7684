//! Graph convolutional recurrent neural networks over graph processes.
//!
//! The crate is generic over the scalar type through [`Scalar`]; the
//! aliases at the bottom fix it to `f64`, which is what the training and
//! experiment code uses.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod model;
pub mod process;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use graph::{
    build_gso, graph_shift, k_hop_neighborhood, knn_graph, sbm_generate, Graph, GraphSignal, Gso, GsoKind,
};
pub use model::{
    apply_filterbank, apply_readout, count_parameters, gate_step, gcrnn_step, ggcrnn_step, run_sequence,
    FilterBank, GateClamp, GateUnit, GcrnnCell, GcrnnModel, Model, ModelSpec, ParamCount, Prediction,
    ReadoutHead,
};
pub use process::{NoiseSpec, ProcessDataset, Sample, Split, SplitSizes, Target};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{evaluate, train, AdamState, LossKind, Metric, TrainConfig, TrainOutcome};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Gso64 = Gso<f64>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Tape64 = Tape<f64>;
