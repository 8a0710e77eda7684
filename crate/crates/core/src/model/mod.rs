//! Graph convolutional recurrent architectures.
//!
//! A [`GcrnnModel`] holds one recurrent cell whose input and state
//! transforms are filter banks, an optional pair of scalar time gates, and
//! a readout head. The same cell is reused at every time step, so the
//! parameter count does not depend on the sequence length or, except for
//! the gate projections, on the graph size. [`Model`] also covers the plain
//! (non-recurrent) graph network used as a baseline.

mod bank;
mod serialize;
mod spec;

pub use bank::{apply_filterbank, FilterBank};
pub use serialize::{load_model, save_model, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use spec::{Activation, FeaturePooling, GnnSpec, ModelSpec, ReadoutMode, ReadoutSpec, RecurrentSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Gso;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Recurrent cell `H_t = tanh(A(S) X_t + B(S) H_{t−1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcrnnCell<T> {
    pub input: FilterBank<T>,
    pub state: FilterBank<T>,
}

/// Scalar time gate: a recurrent cell over the model input followed by a
/// linear projection of its flattened state and a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct GateUnit<T> {
    pub cell: GcrnnCell<T>,
    /// Length `N·U`; entry `u·N + i` weights state feature `u` at node `i`.
    pub projection: Tensor<T>,
}

/// Stack of filter banks with ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnStack<T> {
    pub layers: Vec<FilterBank<T>>,
    /// `out × last` per-node dense map.
    pub dense: Option<Tensor<T>>,
    pub pooling: FeaturePooling,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReadoutHead<T> {
    Lsigf { bank: FilterBank<T>, activation: Activation },
    Gnn(GnnStack<T>),
    /// `G × D` matrix shared by all nodes.
    LocalMlp { weights: Tensor<T>, activation: Activation },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcrnnModel<T> {
    spec: RecurrentSpec,
    pub cell: GcrnnCell<T>,
    /// `(input gate, forget gate)`.
    pub gates: Option<(GateUnit<T>, GateUnit<T>)>,
    pub readout: ReadoutHead<T>,
}

/// Any trainable architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Recurrent(GcrnnModel<T>),
    Gnn(GnnModel<T>),
}

/// Non-recurrent graph network over a stacked input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel<T> {
    spec: GnnSpec,
    pub net: GnnStack<T>,
}

/// Forward result recorded on a tape.
#[derive(Clone, Debug)]
pub enum Output {
    /// One `N × G` estimate per input step.
    Steps(Vec<Var>),
    /// A single `N × G` estimate (or `N × 1` class scores).
    Final(Var),
}

/// Forces gate values, bypassing the gate units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GateClamp<T> {
    pub input: Option<T>,
    pub forget: Option<T>,
}

/// One trainable tensor of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamItem {
    pub name: String,
    pub count: usize,
    /// Filter taps, as opposed to dense projections.
    pub convolutional: bool,
}

/// Itemized trainable parameter count.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub items: Vec<ParamItem>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.items.iter().map(|i| i.count).sum()
    }

    /// Sum over tensors whose name starts with `prefix`.
    pub fn component(&self, prefix: &str) -> usize {
        self.items
            .iter()
            .filter(|i| i.name == prefix || i.name.starts_with(&format!("{prefix}.")))
            .map(|i| i.count)
            .sum()
    }

    pub fn convolutional(&self) -> usize {
        self.items.iter().filter(|i| i.convolutional).map(|i| i.count).sum()
    }

    /// Totals per top-level component (`cell`, `input_gate`, `forget_gate`,
    /// `readout`, or the layer names of a plain graph network).
    pub fn by_component(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for item in &self.items {
            let head = item.name.split('.').next().unwrap_or(&item.name).to_string();
            match out.iter_mut().find(|(n, _)| *n == head) {
                Some((_, c)) => *c += item.count,
                None => out.push((head, item.count)),
            }
        }
        out
    }
}

/// Parameter visit callback: `(name, fan_in, convolutional, tensor)`.
type Visitor<'a, 'b, T> = &'b mut dyn FnMut(&str, usize, bool, &'a Tensor<T>);
type VisitorMut<'a, 'b, T> = &'b mut dyn FnMut(&str, usize, bool, &'a mut Tensor<T>);

impl<T: Scalar> GcrnnCell<T> {
    pub fn zeros(k: usize, in_features: usize, state_features: usize) -> Self {
        Self {
            input: FilterBank::zeros(k, state_features, in_features),
            state: FilterBank::zeros(k, state_features, state_features),
        }
    }

    pub fn state_features(&self) -> usize {
        self.state.out_features()
    }

    pub fn param_count(&self) -> usize {
        self.input.param_count() + self.state.param_count()
    }

    fn visit<'a>(&'a self, prefix: &str, f: Visitor<'a, '_, T>) {
        f(&format!("{prefix}.input"), self.input.fan_in(), true, self.input.taps());
        f(&format!("{prefix}.state"), self.state.fan_in(), true, self.state.taps());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitorMut<'a, '_, T>) {
        let (fi, fs) = (self.input.fan_in(), self.state.fan_in());
        f(&format!("{prefix}.input"), fi, true, self.input.taps_mut());
        f(&format!("{prefix}.state"), fs, true, self.state.taps_mut());
    }

    /// Pre-activation `A(S) X + B(S) H` on the tape.
    fn preactivations(
        &self,
        tape: &mut Tape<T>,
        vars: &CellVars,
        gso: Var,
        x: Var,
        h: Var,
    ) -> Result<(Var, Var)> {
        let ax = self.input.forward(tape, gso, x, vars.input)?;
        let bh = self.state.forward(tape, gso, h, vars.state)?;
        Ok((ax, bh))
    }

    /// Records one step of the cell.
    pub fn step(&self, tape: &mut Tape<T>, vars: &CellVars, gso: Var, x: Var, h: Var) -> Result<Var> {
        let (ax, bh) = self.preactivations(tape, vars, gso, x, h)?;
        let z = tape.add(ax, bh)?;
        tape.tanh(z)
    }
}

impl<T: Scalar> GateUnit<T> {
    pub fn zeros(k: usize, in_features: usize, gate_features: usize, n_nodes: usize) -> Self {
        Self {
            cell: GcrnnCell::zeros(k, in_features, gate_features),
            projection: Tensor::zeros(&[n_nodes * gate_features]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.cell.param_count() + self.projection.len()
    }

    fn visit<'a>(&'a self, prefix: &str, f: Visitor<'a, '_, T>) {
        self.cell.visit(prefix, f);
        f(&format!("{prefix}.projection"), self.projection.len(), false, &self.projection);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitorMut<'a, '_, T>) {
        self.cell.visit_mut(prefix, f);
        let fan = self.projection.len();
        f(&format!("{prefix}.projection"), fan, false, &mut self.projection);
    }

    /// Records the gate state update and returns `(M_t, gate value)`.
    pub fn step(&self, tape: &mut Tape<T>, vars: &GateVars, gso: Var, x: Var, m: Var) -> Result<(Var, Var)> {
        let m_next = self.cell.step(tape, &vars.cell, gso, x, m)?;
        let (n, u) = {
            let mv = tape.value(m_next);
            (mv.rows(), mv.cols())
        };
        if self.projection.len() != n * u {
            return Err(Error::shape(
                "gate_step",
                format!("projection of length {} for a {n} × {u} gate state", self.projection.len()),
            ));
        }
        // ωᵀ vec(M) with vec stacking the U columns
        let w = tape.reshape(vars.projection, &[u, n])?;
        let w = tape.transpose(w)?;
        let prod = tape.hadamard(w, m_next)?;
        let score = tape.sum(prod)?;
        let value = tape.sigmoid(score)?;
        Ok((m_next, value))
    }
}

impl<T: Scalar> GnnStack<T> {
    fn from_spec(spec: &GnnSpec) -> Self {
        let layers = spec
            .features
            .windows(2)
            .map(|w| FilterBank::zeros(spec.taps, w[1], w[0]))
            .collect();
        let last = *spec.features.last().expect("validated");
        Self {
            layers,
            dense: spec.dense_out.map(|d| Tensor::zeros(&[d, last])),
            pooling: spec.pooling,
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: Visitor<'a, '_, T>) {
        for (l, bank) in self.layers.iter().enumerate() {
            f(&join(prefix, &format!("layer{l}")), bank.fan_in(), true, bank.taps());
        }
        if let Some(d) = &self.dense {
            f(&join(prefix, "dense"), d.cols(), false, d);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitorMut<'a, '_, T>) {
        for (l, bank) in self.layers.iter_mut().enumerate() {
            let fan = bank.fan_in();
            f(&join(prefix, &format!("layer{l}")), fan, true, bank.taps_mut());
        }
        if let Some(d) = &mut self.dense {
            let fan = d.cols();
            f(&join(prefix, "dense"), fan, false, d);
        }
    }

    fn bind(&self, vars: &mut std::slice::Iter<'_, Var>) -> GnnVars {
        GnnVars {
            layers: self.layers.iter().map(|_| next(vars)).collect(),
            dense: self.dense.as_ref().map(|_| next(vars)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &GnnVars, gso: Var, x: Var) -> Result<Var> {
        let mut z = x;
        let last = self.layers.len() - 1;
        for (l, bank) in self.layers.iter().enumerate() {
            z = bank.forward(tape, gso, z, vars.layers[l])?;
            if l < last || self.pooling == FeaturePooling::Mean {
                z = tape.relu(z)?;
            }
        }
        if let Some(w) = vars.dense {
            let wt = tape.transpose(w)?;
            z = tape.matmul(z, wt)?;
        }
        if self.pooling == FeaturePooling::Mean {
            let width = tape.value(z).cols();
            let avg = tape.constant(Tensor::filled(&[width, 1], T::one() / T::from_count(width)));
            z = tape.matmul(z, avg)?;
        }
        Ok(z)
    }
}

impl<T: Scalar> ReadoutHead<T> {
    fn from_spec(spec: &ReadoutSpec, state_features: usize) -> Self {
        match spec {
            ReadoutSpec::Lsigf {
                out_features,
                taps,
                activation,
            } => ReadoutHead::Lsigf {
                bank: FilterBank::zeros(*taps, *out_features, state_features),
                activation: *activation,
            },
            ReadoutSpec::Gnn { gnn } => ReadoutHead::Gnn(GnnStack::from_spec(gnn)),
            ReadoutSpec::LocalMlp {
                out_features,
                activation,
            } => ReadoutHead::LocalMlp {
                weights: Tensor::zeros(&[*out_features, state_features]),
                activation: *activation,
            },
        }
    }

    fn visit<'a>(&'a self, f: Visitor<'a, '_, T>) {
        match self {
            ReadoutHead::Lsigf { bank, .. } => f("readout.bank", bank.fan_in(), true, bank.taps()),
            ReadoutHead::Gnn(g) => g.visit("readout", f),
            ReadoutHead::LocalMlp { weights, .. } => f("readout.weights", weights.cols(), false, weights),
        }
    }

    fn visit_mut<'a>(&'a mut self, f: VisitorMut<'a, '_, T>) {
        match self {
            ReadoutHead::Lsigf { bank, .. } => {
                let fan = bank.fan_in();
                f("readout.bank", fan, true, bank.taps_mut())
            }
            ReadoutHead::Gnn(g) => g.visit_mut("readout", f),
            ReadoutHead::LocalMlp { weights, .. } => {
                let fan = weights.cols();
                f("readout.weights", fan, false, weights)
            }
        }
    }

    fn bind(&self, vars: &mut std::slice::Iter<'_, Var>) -> ReadoutVars {
        match self {
            ReadoutHead::Lsigf { .. } => ReadoutVars::Single(next(vars)),
            ReadoutHead::Gnn(g) => ReadoutVars::Gnn(g.bind(vars)),
            ReadoutHead::LocalMlp { .. } => ReadoutVars::Single(next(vars)),
        }
    }

    /// Records the readout of an `N × D` state.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &ReadoutVars, gso: Var, h: Var) -> Result<Var> {
        match (self, vars) {
            (ReadoutHead::Lsigf { bank, activation }, ReadoutVars::Single(c)) => {
                let y = bank.forward(tape, gso, h, *c)?;
                activate(tape, y, *activation)
            }
            (ReadoutHead::LocalMlp { weights, activation }, ReadoutVars::Single(c)) => {
                let d = tape.value(h).cols();
                if weights.cols() != d {
                    return Err(Error::shape(
                        "apply_readout",
                        format!("readout expects {} state features, got {d}", weights.cols()),
                    ));
                }
                let ct = tape.transpose(*c)?;
                let y = tape.matmul(h, ct)?;
                activate(tape, y, *activation)
            }
            (ReadoutHead::Gnn(g), ReadoutVars::Gnn(v)) => g.forward(tape, v, gso, h),
            _ => Err(Error::invalid("readout variables do not match the head")),
        }
    }
}

fn activate<T: Scalar>(tape: &mut Tape<T>, y: Var, activation: Activation) -> Result<Var> {
    match activation {
        Activation::Identity => Ok(y),
        Activation::Relu => tape.relu(y),
        Activation::Tanh => tape.tanh(y),
    }
}

/// Tape handles of a cell's two banks.
#[derive(Clone, Debug)]
pub struct CellVars {
    pub input: Var,
    pub state: Var,
}

#[derive(Clone, Debug)]
pub struct GateVars {
    pub cell: CellVars,
    pub projection: Var,
}

#[derive(Clone, Debug)]
pub struct GnnVars {
    pub layers: Vec<Var>,
    pub dense: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum ReadoutVars {
    Single(Var),
    Gnn(GnnVars),
}

/// Tape handles for every parameter of a model, in canonical order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: Vec<Var>,
    structure: VarStructure,
}

#[derive(Clone, Debug)]
enum VarStructure {
    Recurrent {
        cell: CellVars,
        gates: Option<(GateVars, GateVars)>,
        readout: ReadoutVars,
    },
    Gnn(GnnVars),
}

fn next(vars: &mut std::slice::Iter<'_, Var>) -> Var {
    *vars.next().expect("one variable per parameter")
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn bind_cell(vars: &mut std::slice::Iter<'_, Var>) -> CellVars {
    CellVars {
        input: next(vars),
        state: next(vars),
    }
}

fn bind_gate(vars: &mut std::slice::Iter<'_, Var>) -> GateVars {
    GateVars {
        cell: bind_cell(vars),
        projection: next(vars),
    }
}

/// Splits a `T × N × F` sequence into its `N × F` step matrices.
fn sequence_steps<T: Scalar>(seq: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    if seq.shape().len() != 3 {
        return Err(Error::shape(
            "run_sequence",
            format!("sequence must be T × N × F, got {:?}", seq.shape()),
        ));
    }
    Ok((0..seq.shape()[0]).map(|t| seq.slab(t)).collect())
}

impl<T: Scalar> GcrnnModel<T> {
    pub fn from_spec(spec: RecurrentSpec) -> Result<Self> {
        ModelSpec::Recurrent(spec.clone()).validate()?;
        let k = spec.taps;
        let gates = spec.gate_features.map(|u| {
            (
                GateUnit::zeros(k, spec.in_features, u, spec.n_nodes),
                GateUnit::zeros(k, spec.in_features, u, spec.n_nodes),
            )
        });
        Ok(Self {
            cell: GcrnnCell::zeros(k, spec.in_features, spec.state_features),
            gates,
            readout: ReadoutHead::from_spec(&spec.readout, spec.state_features),
            spec,
        })
    }

    pub fn spec(&self) -> &RecurrentSpec {
        &self.spec
    }

    pub fn is_gated(&self) -> bool {
        self.gates.is_some()
    }

    fn visit<'a>(&'a self, f: Visitor<'a, '_, T>) {
        self.cell.visit("cell", f);
        if let Some((input, forget)) = &self.gates {
            input.visit("input_gate", f);
            forget.visit("forget_gate", f);
        }
        self.readout.visit(f);
    }

    fn visit_mut<'a>(&'a mut self, f: VisitorMut<'a, '_, T>) {
        self.cell.visit_mut("cell", f);
        if let Some((input, forget)) = &mut self.gates {
            input.visit_mut("input_gate", f);
            forget.visit_mut("forget_gate", f);
        }
        self.readout.visit_mut(f);
    }

    /// One gated step; returns `(H_t, M_in, M_forget, α_t, β_t)` handles.
    #[allow(clippy::too_many_arguments)]
    pub fn gated_step(
        &self,
        tape: &mut Tape<T>,
        cell: &CellVars,
        gate_vars: &(GateVars, GateVars),
        gso: Var,
        x: Var,
        h: Var,
        m_in: Var,
        m_forget: Var,
        clamp: GateClamp<T>,
    ) -> Result<GatedVars> {
        let (input_gate, forget_gate) = self
            .gates
            .as_ref()
            .ok_or_else(|| Error::invalid("gated step requested on an ungated model"))?;
        let (m_in, alpha) = input_gate.step(tape, &gate_vars.0, gso, x, m_in)?;
        let (m_forget, beta) = forget_gate.step(tape, &gate_vars.1, gso, x, m_forget)?;
        let alpha = match clamp.input {
            Some(v) => tape.constant(Tensor::scalar(v)),
            None => alpha,
        };
        let beta = match clamp.forget {
            Some(v) => tape.constant(Tensor::scalar(v)),
            None => beta,
        };
        let (ax, bh) = self.cell.preactivations(tape, cell, gso, x, h)?;
        let ax = tape.scale_by(ax, alpha)?;
        let bh = tape.scale_by(bh, beta)?;
        let z = tape.add(ax, bh)?;
        let h = tape.tanh(z)?;
        Ok(GatedVars {
            h,
            m_in,
            m_forget,
            alpha,
            beta,
        })
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        gso: Var,
        seq: &Tensor<T>,
        clamp: GateClamp<T>,
    ) -> Result<Output> {
        let VarStructure::Recurrent { cell, gates, readout } = &vars.structure else {
            return Err(Error::invalid("variables were bound for a different model"));
        };
        let steps = sequence_steps(seq)?;
        if steps.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        let n = self.spec.n_nodes;
        if steps[0].rows() != n || steps[0].cols() != self.spec.in_features {
            return Err(Error::shape(
                "run_sequence",
                format!(
                    "model expects {n} nodes × {} features, sequence is {:?}",
                    self.spec.in_features,
                    seq.shape()
                ),
            ));
        }
        let d = self.spec.state_features;
        let mut h = tape.constant(Tensor::zeros(&[n, d]));
        let mut gate_states = self.spec.gate_features.map(|u| {
            (
                tape.constant(Tensor::zeros(&[n, u])),
                tape.constant(Tensor::zeros(&[n, u])),
            )
        });
        let mut outputs = Vec::new();
        let last = steps.len() - 1;
        for (t, x_t) in steps.into_iter().enumerate() {
            let x = tape.constant(x_t);
            h = match (gates, gate_states.as_mut()) {
                (Some(gv), Some((m_in, m_forget))) => {
                    let g = self.gated_step(tape, cell, gv, gso, x, h, *m_in, *m_forget, clamp)?;
                    *m_in = g.m_in;
                    *m_forget = g.m_forget;
                    g.h
                }
                _ => self.cell.step(tape, cell, gso, x, h)?,
            };
            if self.spec.mode == ReadoutMode::PerStep || t == last {
                outputs.push(self.readout.forward(tape, readout, gso, h)?);
            }
        }
        Ok(match self.spec.mode {
            ReadoutMode::PerStep => Output::Steps(outputs),
            ReadoutMode::FinalStep => Output::Final(outputs.pop().expect("one output")),
        })
    }
}

/// Handles produced by [`GcrnnModel::gated_step`].
#[derive(Clone, Copy, Debug)]
pub struct GatedVars {
    pub h: Var,
    pub m_in: Var,
    pub m_forget: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl<T: Scalar> GnnModel<T> {
    pub fn from_spec(spec: GnnSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            net: GnnStack::from_spec(&spec),
            spec,
        })
    }

    pub fn spec(&self) -> &GnnSpec {
        &self.spec
    }

    fn run(&self, tape: &mut Tape<T>, vars: &ModelVars, gso: Var, seq: &Tensor<T>) -> Result<Output> {
        let VarStructure::Gnn(gv) = &vars.structure else {
            return Err(Error::invalid("variables were bound for a different model"));
        };
        let stacked = stack_sequence(seq)?;
        if stacked.cols() != self.spec.in_features() {
            return Err(Error::shape(
                "run_sequence",
                format!(
                    "network takes {} stacked features, sequence {:?} provides {}",
                    self.spec.in_features(),
                    seq.shape(),
                    stacked.cols()
                ),
            ));
        }
        let x = tape.constant(stacked);
        Ok(Output::Final(self.net.forward(tape, gv, gso, x)?))
    }
}

/// `T × N × F` sequence as one `N × (T·F)` signal, column `t·F + f`.
pub fn stack_sequence<T: Scalar>(seq: &Tensor<T>) -> Result<Tensor<T>> {
    if seq.shape().len() != 3 {
        return Err(Error::shape("stack_sequence", format!("{:?} is not T × N × F", seq.shape())));
    }
    let (t_len, n, f) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
    let mut out = Tensor::zeros(&[n, t_len * f]);
    for t in 0..t_len {
        for i in 0..n {
            for ff in 0..f {
                out.set(i, t * f + ff, seq.at3(t, i, ff));
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> Model<T> {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Recurrent(r) => Ok(Model::Recurrent(GcrnnModel::from_spec(r.clone())?)),
            ModelSpec::Gnn(g) => Ok(Model::Gnn(GnnModel::from_spec(g.clone())?)),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Recurrent(m) => ModelSpec::Recurrent(m.spec.clone()),
            Model::Gnn(m) => ModelSpec::Gnn(m.spec.clone()),
        }
    }

    /// Nodes the model is tied to (gate projections); `None` if size-agnostic.
    pub fn n_nodes(&self) -> Option<usize> {
        match self {
            Model::Recurrent(m) => Some(m.spec.n_nodes),
            Model::Gnn(_) => None,
        }
    }

    fn visit<'a>(&'a self, f: Visitor<'a, '_, T>) {
        match self {
            Model::Recurrent(m) => m.visit(f),
            Model::Gnn(m) => m.net.visit("", f),
        }
    }

    fn visit_mut<'a>(&'a mut self, f: VisitorMut<'a, '_, T>) {
        match self {
            Model::Recurrent(m) => m.visit_mut(f),
            Model::Gnn(m) => m.net.visit_mut("", f),
        }
    }

    /// `(name, tensor)` for every trainable tensor, in canonical order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, _, _, t| out.push((name.to_string(), t)));
        out
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, _, _, t| out.push(t));
        out
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut items = Vec::new();
        self.visit(&mut |name, _, conv, t| {
            items.push(ParamItem {
                name: name.to_string(),
                count: t.len(),
                convolutional: conv,
            })
        });
        ParamCount { items }
    }

    /// Redraws every parameter i.i.d. uniform on `±1/√fan_in`, where
    /// `fan_in` is `K·F_in` for filter banks, `N·U` for gate projections and
    /// the input width for dense maps.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.visit_mut(&mut |_, fan_in, _, t| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = T::lit(rng.random_range(-bound..=bound));
            }
        });
    }

    pub fn with_init(mut self, seed: u64) -> Self {
        self.init_parameters(seed);
        self
    }

    /// Records every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        let all: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let mut it = all.iter();
        let structure = match self {
            Model::Recurrent(m) => VarStructure::Recurrent {
                cell: bind_cell(&mut it),
                gates: m.gates.as_ref().map(|_| (bind_gate(&mut it), bind_gate(&mut it))),
                readout: m.readout.bind(&mut it),
            },
            Model::Gnn(m) => VarStructure::Gnn(m.net.bind(&mut it)),
        };
        debug_assert!(it.next().is_none());
        ModelVars { all, structure }
    }

    /// Records a full forward pass over a `T × N × F` sequence.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &ModelVars, gso: Var, seq: &Tensor<T>) -> Result<Output> {
        self.forward_clamped(tape, vars, gso, seq, GateClamp::default())
    }

    pub fn forward_clamped(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        gso: Var,
        seq: &Tensor<T>,
        clamp: GateClamp<T>,
    ) -> Result<Output> {
        match self {
            Model::Recurrent(m) => m.run(tape, vars, gso, seq, clamp),
            Model::Gnn(m) => m.run(tape, vars, gso, seq),
        }
    }

    /// Runs the model without recording gradients and returns output values.
    pub fn predict(&self, gso: &Gso<T>, seq: &Tensor<T>) -> Result<Prediction<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let s = tape.constant(gso.matrix().clone());
        Ok(match self.forward(&mut tape, &vars, s, seq)? {
            Output::Steps(v) => Prediction::Steps(v.into_iter().map(|o| tape.value(o).clone()).collect()),
            Output::Final(o) => Prediction::Final(tape.value(o).clone()),
        })
    }
}

/// Output values of [`Model::predict`].
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction<T> {
    Steps(Vec<Tensor<T>>),
    Final(Tensor<T>),
}

fn cell_vars_on<T: Scalar>(tape: &mut Tape<T>, cell: &GcrnnCell<T>) -> CellVars {
    CellVars {
        input: tape.constant(cell.input.taps().clone()),
        state: tape.constant(cell.state.taps().clone()),
    }
}

/// `H_t = tanh(A(S) X_t + B(S) H_{t−1})` evaluated directly.
pub fn gcrnn_step<T: Scalar>(cell: &GcrnnCell<T>, gso: &Gso<T>, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = cell_vars_on(&mut tape, cell);
    let s = tape.constant(gso.matrix().clone());
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let h = cell.step(&mut tape, &vars, s, xv, hv)?;
    Ok(tape.value(h).clone())
}

/// Advances a gate unit; returns `(M_t, gate value)`.
pub fn gate_step<T: Scalar>(gate: &GateUnit<T>, gso: &Gso<T>, x: &Tensor<T>, m_prev: &Tensor<T>) -> Result<(Tensor<T>, T)> {
    let mut tape = Tape::new();
    let vars = GateVars {
        cell: cell_vars_on(&mut tape, &gate.cell),
        projection: tape.constant(gate.projection.clone()),
    };
    let s = tape.constant(gso.matrix().clone());
    let xv = tape.constant(x.clone());
    let mv = tape.constant(m_prev.clone());
    let (m, value) = gate.step(&mut tape, &vars, s, xv, mv)?;
    Ok((tape.value(m).clone(), tape.value(value).item()))
}

/// Values of one gated step.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedStep<T> {
    pub h: Tensor<T>,
    pub m_in: Tensor<T>,
    pub m_forget: Tensor<T>,
    pub alpha: T,
    pub beta: T,
}

/// `H_t = tanh(α_t A(S) X_t + β_t B(S) H_{t−1})` with both gates advanced.
pub fn ggcrnn_step<T: Scalar>(
    model: &GcrnnModel<T>,
    gso: &Gso<T>,
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    m_in_prev: &Tensor<T>,
    m_forget_prev: &Tensor<T>,
    clamp: GateClamp<T>,
) -> Result<GatedStep<T>> {
    let (input_gate, forget_gate) = model
        .gates
        .as_ref()
        .ok_or_else(|| Error::invalid("gated step requested on an ungated model"))?;
    let mut tape = Tape::new();
    let cell = cell_vars_on(&mut tape, &model.cell);
    let gate_vars = (
        GateVars {
            cell: cell_vars_on(&mut tape, &input_gate.cell),
            projection: tape.constant(input_gate.projection.clone()),
        },
        GateVars {
            cell: cell_vars_on(&mut tape, &forget_gate.cell),
            projection: tape.constant(forget_gate.projection.clone()),
        },
    );
    let s = tape.constant(gso.matrix().clone());
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let mi = tape.constant(m_in_prev.clone());
    let mf = tape.constant(m_forget_prev.clone());
    let g = model.gated_step(&mut tape, &cell, &gate_vars, s, xv, hv, mi, mf, clamp)?;
    Ok(GatedStep {
        h: tape.value(g.h).clone(),
        m_in: tape.value(g.m_in).clone(),
        m_forget: tape.value(g.m_forget).clone(),
        alpha: tape.value(g.alpha).item(),
        beta: tape.value(g.beta).item(),
    })
}

/// Applies a readout head to an `N × D` state.
pub fn apply_readout<T: Scalar>(head: &ReadoutHead<T>, gso: &Gso<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = match head {
        ReadoutHead::Lsigf { bank, .. } => ReadoutVars::Single(tape.constant(bank.taps().clone())),
        ReadoutHead::LocalMlp { weights, .. } => ReadoutVars::Single(tape.constant(weights.clone())),
        ReadoutHead::Gnn(g) => ReadoutVars::Gnn(GnnVars {
            layers: g.layers.iter().map(|b| tape.constant(b.taps().clone())).collect(),
            dense: g.dense.as_ref().map(|d| tape.constant(d.clone())),
        }),
    };
    let s = tape.constant(gso.matrix().clone());
    let hv = tape.constant(h.clone());
    let y = head.forward(&mut tape, &vars, s, hv)?;
    Ok(tape.value(y).clone())
}

/// Runs a model over a sequence without recording gradients.
pub fn run_sequence<T: Scalar>(model: &Model<T>, gso: &Gso<T>, seq: &Tensor<T>) -> Result<Prediction<T>> {
    model.predict(gso, seq)
}

pub fn count_parameters<T: Scalar>(model: &Model<T>) -> ParamCount {
    model.count_parameters()
}

/// Parameter count of the model a spec describes.
pub fn count_spec_parameters(spec: &ModelSpec) -> Result<ParamCount> {
    Ok(Model::<f64>::from_spec(spec)?.count_parameters())
}
