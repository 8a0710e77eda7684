mod common;

use common::*;
use gcrnn::graph::{build_gso, knn_graph, sbm_generate, GraphSignal, Gso, GsoKind};
use gcrnn::process::{
    correlated_noise, diffusion_sequence, epicenter_label, load_dataset, make_epicenter_dataset,
    make_prediction_dataset, save_dataset, NoiseSpec, Split, SplitSizes, Target, WaveSpec,
};
use gcrnn::Tensor;
use rand::Rng;

#[test]
fn noise_second_moments() {
    let spec = NoiseSpec::new(0.01, 0.02, 0.3, 0.2).unwrap();
    let (t_len, n, draws) = (4, 5, 20_000);
    let (mut var, mut lag, mut cross) = (0.0, 0.0, 0.0);
    let (mut nv, mut nl, mut nc) = (0usize, 0usize, 0usize);
    for seed in 0..draws {
        let w: Tensor<f64> = correlated_noise(t_len, n, &spec, seed).unwrap();
        for t in 0..t_len {
            for i in 0..n {
                let v = w.at(t, i);
                var += v * v;
                nv += 1;
                if t + 1 < t_len {
                    lag += v * w.at(t + 1, i);
                    nl += 1;
                }
                if i + 1 < n {
                    cross += v * w.at(t, i + 1);
                    nc += 1;
                }
            }
        }
    }
    let entry = spec.var_time * spec.var_nodes;
    let var = var / nv as f64;
    assert!((var / entry - 1.0).abs() < 0.02, "variance {var} vs {entry}");
    let lag = lag / nl as f64 / entry;
    assert!((lag - spec.rho_time).abs() < 0.02, "lag-1 correlation {lag}");
    let cross = cross / nc as f64 / entry;
    assert!((cross - spec.rho_nodes).abs() < 0.02, "node correlation {cross}");
}

#[test]
fn zero_noise_and_bad_specs() {
    let w: Tensor<f64> = correlated_noise(3, 4, &NoiseSpec::zero(), 1).unwrap();
    assert!(w.data().iter().all(|&v| v == 0.0));
    assert!(NoiseSpec::new(-0.1, 0.01, 0.1, 0.1).is_err());
    assert!(NoiseSpec::new(0.01, 0.01, 1.0, 0.1).is_err());
    assert!(NoiseSpec::new(0.01, 0.01, 0.1, f64::NAN).is_err());
}

#[test]
fn diffusion_replays_with_its_seed_and_follows_the_recursion() {
    let mut r = rng(2);
    let (_, s) = random_gso(&mut r, 10);
    let x0: Vec<f64> = (0..10).map(|_| r.random()).collect();
    let spec = NoiseSpec::synthetic_default();
    let a = diffusion_sequence(&s, &GraphSignal::new(x0.clone()), 8, &spec, 77).unwrap();
    assert_eq!(a, diffusion_sequence(&s, &GraphSignal::new(x0.clone()), 8, &spec, 77).unwrap());
    assert_ne!(a, diffusion_sequence(&s, &GraphSignal::new(x0.clone()), 8, &spec, 78).unwrap());

    // the noise is the residual x_t − S x_{t−1}, and it matches the generator's draw
    let w: Tensor<f64> = correlated_noise(8, 10, &spec, 77).unwrap();
    let sm = to_mat(s.matrix());
    let mut prev = x0;
    for t in 0..8 {
        for i in 0..10 {
            let shifted: f64 = (0..10).map(|j| sm[i][j] * prev[j]).sum();
            assert!((a.at(t, i) - shifted - w.at(t, i)).abs() < 1e-12);
        }
        prev = (0..10).map(|i| a.at(t, i)).collect();
    }
}

#[test]
fn prediction_dataset_sizes_and_contiguity() {
    let g = sbm_generate::<f64>(20, 4, 0.8, 0.2, 1).unwrap();
    let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
    let sizes = SplitSizes { train: 40, val: 12, test: 5 };
    let ds = make_prediction_dataset(&g, &s, sizes, 10, 10, &NoiseSpec::synthetic_default(), 5).unwrap();
    assert_eq!(ds.samples.len(), 57);
    assert_eq!(ds.split(Split::Val).count(), 12);
    for sample in &ds.samples {
        let Target::Sequence(y) = &sample.target else { panic!() };
        assert_eq!(sample.input.shape(), &[10, 20, 1]);
        assert_eq!(y.shape(), &[10, 20, 1]);
        assert!((0..20).all(|i| (0.0..=1.0).contains(&sample.input.at3(0, i, 0))));
    }
    let other = make_prediction_dataset(&g, &s, sizes, 10, 10, &NoiseSpec::synthetic_default(), 6).unwrap();
    assert_ne!(ds.samples[0], other.samples[0]);

    // without noise the target continues the input by powers of S
    let clean = make_prediction_dataset(&g, &s, sizes, 3, 2, &NoiseSpec::zero(), 5).unwrap();
    let sm = to_mat(s.matrix());
    for sample in &clean.samples {
        let x2: Mat = (0..20).map(|i| vec![sample.input.at3(2, i, 0)]).collect();
        let Target::Sequence(y) = &sample.target else { panic!() };
        for h in 0..2 {
            let expected = mat_mul(&mat_pow(&sm, h + 1), &x2);
            for i in 0..20 {
                assert!((y.at3(h, i, 0) - expected[i][0]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn datasets_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let g = sbm_generate::<f64>(8, 2, 0.8, 0.2, 2).unwrap();
    let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
    let ds = make_prediction_dataset(&g, &s, SplitSizes { train: 6, val: 3, test: 2 }, 4, 4, &NoiseSpec::synthetic_default(), 3)
        .unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset::<f64>(dir.path()).unwrap(), ds);

    let coords: Vec<[f64; 2]> = {
        let mut r = rng(4);
        (0..8).map(|_| [r.random(), r.random()]).collect()
    };
    let kg = knn_graph::<f64>(&coords, 3).unwrap();
    let ks = build_gso(&kg, GsoKind::NormalizedAdjacency).unwrap();
    let eq = make_epicenter_dataset(&kg, &ks, SplitSizes { train: 5, val: 2, test: 3 }, 12, &WaveSpec::default(), 1).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&eq, dir2.path()).unwrap();
    assert_eq!(load_dataset::<f64>(dir2.path()).unwrap(), eq);
}

#[test]
fn epicenter_labels_cover_voronoi_cells_in_proportion() {
    let coords = vec![[0.1, 0.1], [0.9, 0.1], [0.5, 0.9], [0.5, 0.45]];
    let g = knn_graph::<f64>(&coords, 2).unwrap();
    let s: Gso<f64> = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
    let total = 6000;
    let ds = make_epicenter_dataset(&g, &s, SplitSizes { train: total, val: 0, test: 0 }, 1, &WaveSpec::default(), 8).unwrap();
    let mut counts = [0usize; 4];
    for sample in &ds.samples {
        let Target::Label(l) = sample.target else { panic!() };
        counts[l] += 1;
    }
    // cell areas by a fine grid
    let grid = 400;
    let mut area = [0usize; 4];
    for a in 0..grid {
        for b in 0..grid {
            let p = [(a as f64 + 0.5) / grid as f64, (b as f64 + 0.5) / grid as f64];
            area[epicenter_label(&coords, p)] += 1;
        }
    }
    for c in 0..4 {
        let observed = counts[c] as f64 / total as f64;
        let expected = area[c] as f64 / (grid * grid) as f64;
        assert!((observed - expected).abs() < 0.03, "cell {c}: {observed} vs {expected}");
    }
}
