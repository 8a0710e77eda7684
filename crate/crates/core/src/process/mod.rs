//! Synthetic graph processes and sequence datasets.

mod epicenter;
mod io;
mod noise;

pub use epicenter::{epicenter_label, epicenter_readings, make_epicenter_dataset, WaveSpec};
pub use io::{ingest_csv_sequences, load_dataset, read_sequences_csv, save_dataset, write_sequences_csv, SequenceRecord};
pub use noise::{correlated_noise, psd_factor, NoiseSpec};

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphSignal, Gso, GsoKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Absolute value beyond which a diffusion trajectory is treated as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// What a sample should be mapped to.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    /// `T' × N × G` sequence of graph signals.
    Sequence(Tensor<T>),
    /// Class index (a node, for epicenter placement).
    Label(usize),
    /// Ingested sequence without a target; usable for inference only.
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `T × N × F`.
    pub input: Tensor<T>,
    pub target: Target<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Index sets into [`ProcessDataset::samples`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Consecutive blocks: train first, then validation, then test.
    pub fn contiguous(sizes: SplitSizes) -> Self {
        let (a, b) = (sizes.train, sizes.train + sizes.val);
        Self {
            train: (0..a).collect(),
            val: (a..b).collect(),
            test: (b..sizes.total()).collect(),
        }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Provenance of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub generator: String,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub gso_kind: GsoKind,
    #[serde(default)]
    pub wave: Option<WaveSpec>,
}

/// Sequence samples over one graph with train/validation/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessDataset<T> {
    pub samples: Vec<Sample<T>>,
    pub splits: Splits,
    pub graph: Graph<T>,
    pub gso: Gso<T>,
    pub metadata: DatasetMetadata,
}

impl<T: Scalar> ProcessDataset<T> {
    /// Checks split coverage and that all samples share their dimensions.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.samples.len()];
        for split in Split::ALL {
            for &i in self.splits.get(split) {
                if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("sample {i} is out of range or in two splits")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("splits do not cover every sample"));
        }
        if let Some(first) = self.samples.first() {
            let shape = first.input.shape();
            if shape.len() != 3 || shape[1] != self.gso.n_nodes() {
                return Err(Error::shape(
                    "dataset",
                    format!("inputs {:?} on a {}-node graph", shape, self.gso.n_nodes()),
                ));
            }
            for (i, s) in self.samples.iter().enumerate() {
                if s.input.shape() != shape {
                    return Err(Error::shape(
                        "dataset",
                        format!("sample {i} has input {:?}, expected {:?}", s.input.shape(), shape),
                    ));
                }
                let consistent = match (&first.target, &s.target) {
                    (Target::Sequence(a), Target::Sequence(b)) => a.shape() == b.shape(),
                    (Target::Label(_), Target::Label(l)) => *l < self.gso.n_nodes(),
                    (Target::Unlabeled, Target::Unlabeled) => true,
                    _ => false,
                };
                if !consistent {
                    return Err(Error::shape("dataset", format!("sample {i} has an inconsistent target")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample<T>> {
        self.splits.get(split).iter().map(move |&i| &self.samples[i])
    }

    pub fn n_nodes(&self) -> usize {
        self.gso.n_nodes()
    }

    /// `(T, N, F)` of the inputs.
    pub fn input_dims(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| {
            let d = s.input.shape();
            (d[0], d[1], d[2])
        })
    }

    /// `(T', N, G)` of sequence targets.
    pub fn target_dims(&self) -> Option<(usize, usize, usize)> {
        match self.samples.first().map(|s| &s.target) {
            Some(Target::Sequence(t)) => {
                let d = t.shape();
                Some((d[0], d[1], d[2]))
            }
            _ => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.samples.first().map(|s| &s.target), Some(Target::Label(_)))
    }

    /// Hash over the bit patterns of the samples of one split.
    pub fn split_checksum(&self, split: Split) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in self.split(split) {
            for v in s.input.data() {
                v.to_f64_lossy().to_bits().hash(&mut h);
            }
            match &s.target {
                Target::Sequence(t) => t.data().iter().for_each(|v| v.to_f64_lossy().to_bits().hash(&mut h)),
                Target::Label(l) => l.hash(&mut h),
                Target::Unlabeled => {}
            }
        }
        h.finish()
    }
}

/// SplitMix64 mix of a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `x_t = S x_{t−1} + w_t` for `t = 1..=T`, returning `x_1 … x_T` as `T × N`.
pub fn diffusion_sequence<T: Scalar>(
    gso: &Gso<T>,
    x0: &GraphSignal<T>,
    t_len: usize,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<Tensor<T>> {
    let n = gso.n_nodes();
    if x0.len() != n {
        return Err(Error::shape(
            "diffusion_sequence",
            format!("initial signal of length {} on {n} nodes", x0.len()),
        ));
    }
    if t_len == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let noise: Tensor<T> = correlated_noise(t_len, n, spec, seed)?;
    let s = gso.matrix();
    let mut out = Vec::with_capacity(t_len * n);
    let mut prev: Vec<T> = x0.to_vec();
    let limit = T::lit(DIVERGENCE_LIMIT);
    for t in 0..t_len {
        let next: Vec<T> = (0..n)
            .map(|i| {
                let row = &s.data()[i * n..(i + 1) * n];
                row.iter().zip(&prev).map(|(&a, &b)| a * b).sum::<T>() + noise.at(t, i)
            })
            .collect();
        if next.iter().any(|v| !(v.abs() <= limit)) {
            return Err(Error::numerical(format!(
                "diffusion diverged at step {} (|x| > {DIVERGENCE_LIMIT}); is the shift operator normalized?",
                t + 1
            )));
        }
        out.extend_from_slice(&next);
        prev = next;
    }
    Tensor::from_vec(&[t_len, n], out)
}

/// Diffusion prediction samples: `x_0` uniform on `[0,1]^N`, then
/// `T_in + T_out − 1` diffusion steps; the first `T_in` signals
/// (`x_0 … x_{T_in−1}`) form the input and the remaining `T_out` the target.
#[allow(clippy::too_many_arguments)]
pub fn make_prediction_dataset<T: Scalar>(
    graph: &Graph<T>,
    gso: &Gso<T>,
    sizes: SplitSizes,
    t_in: usize,
    t_out: usize,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<ProcessDataset<T>> {
    if t_in == 0 || t_out == 0 {
        return Err(Error::invalid("input and output lengths must be positive"));
    }
    spec.validate()?;
    let n = gso.n_nodes();
    let mut samples = Vec::with_capacity(sizes.total());
    for index in 0..sizes.total() as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * index));
        let x0: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(0.0..=1.0))).collect();
        let steps = t_in + t_out - 1;
        let traj = diffusion_sequence(gso, &GraphSignal::new(x0.clone()), steps, spec, derive_seed(seed, 2 * index + 1))?;
        let mut all = x0;
        all.extend_from_slice(traj.data());
        let input = Tensor::from_vec(&[t_in, n, 1], all[..t_in * n].to_vec())?;
        let target = Tensor::from_vec(&[t_out, n, 1], all[t_in * n..].to_vec())?;
        samples.push(Sample {
            input,
            target: Target::Sequence(target),
        });
    }
    let ds = ProcessDataset {
        samples,
        splits: Splits::contiguous(sizes),
        graph: graph.clone(),
        gso: gso.clone(),
        metadata: DatasetMetadata {
            generator: "diffusion".into(),
            seed,
            noise: *spec,
            gso_kind: gso.kind(),
            wave: None,
        },
    };
    ds.validate()?;
    Ok(ds)
}
