use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Gso;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bank of polynomial graph filters mapping `F` input features to `G`
/// output features with `K` taps each.
///
/// Taps are stored `K × G × F`: entry `(k, g, f)` weights `S^k x^f` in
/// output feature `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T> {
    taps: Tensor<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(taps: Tensor<T>) -> Result<Self> {
        if taps.shape().len() != 3 {
            return Err(Error::shape(
                "filter_bank",
                format!("taps must be K × G × F, got {:?}", taps.shape()),
            ));
        }
        Ok(Self { taps })
    }

    pub fn zeros(k: usize, out_features: usize, in_features: usize) -> Self {
        Self {
            taps: Tensor::zeros(&[k, out_features, in_features]),
        }
    }

    pub fn taps(&self) -> &Tensor<T> {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut Tensor<T> {
        &mut self.taps
    }

    pub fn n_taps(&self) -> usize {
        self.taps.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.taps.shape()[1]
    }

    pub fn in_features(&self) -> usize {
        self.taps.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.taps.len()
    }

    pub fn fan_in(&self) -> usize {
        self.n_taps() * self.in_features()
    }

    /// Records `Σ_k S^k X A_kᵀ` on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, gso: Var, signal: Var, taps: Var) -> Result<Var> {
        let x = tape.value(signal);
        if x.cols() != self.in_features() {
            return Err(Error::shape(
                "apply_filterbank",
                format!(
                    "bank expects {} input features, signal is {:?}",
                    self.in_features(),
                    x.shape()
                ),
            ));
        }
        tape.graph_filter(gso, signal, taps)
    }
}

/// Applies `bank` to the `N × F` signal `x`, returning `N × G`.
pub fn apply_filterbank<T: Scalar>(bank: &FilterBank<T>, gso: &Gso<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let s = tape.constant(gso.matrix().clone());
    let xv = tape.constant(x.clone());
    let a = tape.constant(bank.taps().clone());
    let y = bank.forward(&mut tape, s, xv, a)?;
    Ok(tape.value(y).clone())
}
