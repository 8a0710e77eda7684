//! Naive dense oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use gcrnn::graph::{build_gso, Graph, Gso, GsoKind};
use gcrnn::model::{Model, Output};
use gcrnn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.at(i, j)).collect()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i][l] * b[l][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn mat_add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn scale(a: &Mat, c: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x * c).collect()).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

pub fn mat_pow(s: &Mat, k: usize) -> Mat {
    (0..k).fold(identity(s.len()), |acc, _| mat_mul(&acc, s))
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.len(), a[0].len()), (b.len(), b[0].len()));
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Tap `k` of a `K × G × F` tensor as a `G × F` matrix.
pub fn tap(taps: &Tensor<f64>, k: usize) -> Mat {
    let (g, f) = (taps.shape()[1], taps.shape()[2]);
    (0..g).map(|i| (0..f).map(|j| taps.at3(k, i, j)).collect()).collect()
}

/// `Σ_k S^k X A_kᵀ` with explicit matrix powers.
pub fn filter_oracle(s: &Mat, x: &Mat, taps: &Tensor<f64>) -> Mat {
    let k_taps = taps.shape()[0];
    let mut out = zeros(x.len(), taps.shape()[1]);
    for k in 0..k_taps {
        let term = mat_mul(&mat_mul(&mat_pow(s, k), x), &transpose(&tap(taps, k)));
        out = mat_add(&out, &term);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

/// Undirected Erdős–Rényi graph with edge probability `p` and at least one edge.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Graph<f64> {
    let mut g = Graph::empty(n).unwrap();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                g.insert_undirected(a, b, 1.0).unwrap();
            }
        }
    }
    if g.n_directed_edges() == 0 {
        g.insert_undirected(0, n - 1, 1.0).unwrap();
    }
    g
}

pub fn random_gso(rng: &mut impl Rng, n: usize) -> (Graph<f64>, Gso<f64>) {
    let g = random_graph(rng, n, 0.3);
    let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
    (g, s)
}

/// Random perturbation `x ↦ p(x)` as a permutation vector.
pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Rows of `m` relabeled so that old row `i` becomes row `perm[i]`.
pub fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    let mut out = m.clone();
    for (i, &p) in perm.iter().enumerate() {
        out[p] = m[i].clone();
    }
    out
}

/// Smooth scalar `Σ w ⊙ y` over every model output, recorded on `tape`.
pub fn weighted_output_loss(tape: &mut Tape<f64>, out: &Output, weights: &[Tensor<f64>]) -> gcrnn::Var {
    let outs: Vec<gcrnn::Var> = match out {
        Output::Steps(v) => v.clone(),
        Output::Final(v) => vec![*v],
    };
    let mut total = None;
    for (o, w) in outs.iter().zip(weights) {
        let wv = tape.constant(w.clone());
        let p = tape.hadamard(*o, wv).unwrap();
        let s = tape.sum(p).unwrap();
        total = Some(match total {
            Some(t) => tape.add(t, s).unwrap(),
            None => s,
        });
    }
    total.unwrap()
}

pub fn weighted_value(model: &Model<f64>, gso: &Gso<f64>, seq: &Tensor<f64>, weights: &[Tensor<f64>]) -> f64 {
    let outs = match model.predict(gso, seq).unwrap() {
        gcrnn::Prediction::Steps(v) => v,
        gcrnn::Prediction::Final(v) => vec![v],
    };
    outs.iter()
        .zip(weights)
        .map(|(o, w)| o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Largest relative error between tape gradients and central differences
/// over every parameter entry, using `max(|a|, |b|, floor)` as the scale.
pub fn gradient_check(model: &Model<f64>, gso: &Gso<f64>, seq: &Tensor<f64>, rng: &mut impl Rng) -> f64 {
    let shapes: Vec<Vec<usize>> = match model.predict(gso, seq).unwrap() {
        gcrnn::Prediction::Steps(v) => v.iter().map(|t| t.shape().to_vec()).collect(),
        gcrnn::Prediction::Final(t) => vec![t.shape().to_vec()],
    };
    let weights: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(rng, s, 1.0)).collect();

    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let s = tape.constant(gso.matrix().clone());
    let out = model.forward(&mut tape, &vars, s, seq).unwrap();
    let loss = weighted_output_loss(&mut tape, &out, &weights);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n_params = model.parameters().len();
    for p in 0..n_params {
        let len = model.parameters()[p].len();
        for e in 0..len {
            let mut plus = model.clone();
            plus.parameters_mut()[p].data_mut()[e] += h;
            let mut minus = model.clone();
            minus.parameters_mut()[p].data_mut()[e] -= h;
            let numeric =
                (weighted_value(&plus, gso, seq, &weights) - weighted_value(&minus, gso, seq, &weights)) / (2.0 * h);
            let analytic = grads.get(vars.all[p]).unwrap().data()[e];
            let denom = numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max((numeric - analytic).abs() / denom);
        }
    }
    worst
}
