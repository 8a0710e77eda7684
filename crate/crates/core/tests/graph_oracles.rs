mod common;

use std::collections::BTreeSet;

use common::*;
use gcrnn::graph::{
    build_gso, graph_shift, k_hop_neighborhood, knn_graph, sbm_community, sbm_generate, Graph, GraphSignal, Gso,
    GsoKind,
};
use gcrnn::Tensor;
use rand::Rng;

#[test]
fn sbm_edge_densities_over_many_seeds() {
    let (n, c) = (20, 4);
    let (mut intra, mut intra_pairs, mut inter, mut inter_pairs) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..1000 {
        let g: Graph<f64> = sbm_generate(n, c, 0.8, 0.2, seed).unwrap();
        assert!(g.is_symmetric());
        for a in 0..n {
            assert!(!g.has_edge(a, a));
            for b in a + 1..n {
                let same = sbm_community(a, n, c) == sbm_community(b, n, c);
                let e = g.has_edge(a, b) as usize;
                if same {
                    intra += e;
                    intra_pairs += 1;
                } else {
                    inter += e;
                    inter_pairs += 1;
                }
            }
        }
    }
    let p_intra = intra as f64 / intra_pairs as f64;
    let p_inter = inter as f64 / inter_pairs as f64;
    assert!((p_intra - 0.8).abs() < 0.02, "intra density {p_intra}");
    assert!((p_inter - 0.2).abs() < 0.02, "inter density {p_inter}");
}

#[test]
fn sbm_is_reproducible_and_rejects_bad_blocks() {
    let a: Graph<f64> = sbm_generate(20, 4, 0.8, 0.2, 11).unwrap();
    assert_eq!(a, sbm_generate(20, 4, 0.8, 0.2, 11).unwrap());
    assert!(sbm_generate::<f64>(20, 3, 0.8, 0.2, 0).is_err());
    assert!(sbm_generate::<f64>(20, 4, 0.2, 0.8, 0).is_err());
    assert!(sbm_generate::<f64>(20, 4, 1.2, 0.2, 0).is_err());
    let full: Graph<f64> = sbm_generate(8, 2, 1.0, 1.0, 0).unwrap();
    assert_eq!(full.n_undirected_edges(), 28);
    let blocks: Graph<f64> = sbm_generate(8, 2, 1.0, 0.0, 0).unwrap();
    assert_eq!(blocks.n_undirected_edges(), 12);
}

#[test]
fn knn_matches_brute_force_selection() {
    let mut r = rng(3);
    for _ in 0..20 {
        let n = r.random_range(5..30);
        let k = r.random_range(1..4.min(n - 1) + 1);
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [r.random(), r.random()]).collect();
        let g: Graph<f64> = knn_graph(&coords, k).unwrap();
        let d = |a: usize, b: usize| ((coords[a][0] - coords[b][0]).powi(2) + (coords[a][1] - coords[b][1]).powi(2)).sqrt();
        let chosen: Vec<BTreeSet<usize>> = (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| d(i, a).total_cmp(&d(i, b)).then(a.cmp(&b)));
                others.into_iter().take(k).collect()
            })
            .collect();
        for i in 0..n {
            assert!(g.in_degree(i) >= k);
            for j in 0..n {
                let expected = i != j && (chosen[i].contains(&j) || chosen[j].contains(&i));
                assert_eq!(g.has_edge(i, j), expected, "pair ({i}, {j})");
                if expected {
                    assert_eq!(g.weight(i, j), Some(1.0));
                }
            }
        }
        assert_eq!(g.coordinates().unwrap(), &coords[..]);
    }
}

#[test]
fn k_hop_sets_match_matrix_power_support() {
    let mut r = rng(5);
    for _ in 0..30 {
        let n = r.random_range(3..15);
        let g = random_graph(&mut r, n, 0.25);
        let a = to_mat(build_gso(&g, GsoKind::Adjacency).unwrap().matrix());
        for k in 0..4 {
            let reach = (0..=k).fold(zeros(n, n), |acc, p| mat_add(&acc, &mat_pow(&a, p)));
            for i in 0..n {
                let oracle: BTreeSet<usize> = (0..n).filter(|&j| reach[i][j] != 0.0).collect();
                assert_eq!(k_hop_neighborhood(&g, i, k).unwrap(), oracle);
            }
        }
    }
}

#[test]
fn shift_matches_dense_mat_vec_and_is_local() {
    let mut r = rng(8);
    for _ in 0..50 {
        let n = r.random_range(2..20);
        let (g, s) = random_gso(&mut r, n);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = graph_shift(&s, &GraphSignal::new(x.clone())).unwrap();
        let m = to_mat(s.matrix());
        for i in 0..n {
            let oracle: f64 = (0..n).map(|j| m[i][j] * x[j]).sum();
            assert!((y[i] - oracle).abs() < 1e-12);
        }
        let mut far = x.clone();
        let i = r.random_range(0..n);
        let near = k_hop_neighborhood(&g, i, 1).unwrap();
        for (j, v) in far.iter_mut().enumerate() {
            if !near.contains(&j) {
                *v += 10.0;
            }
        }
        let y2 = graph_shift(&s, &GraphSignal::new(far)).unwrap();
        assert_eq!(y[i], y2[i]);
    }
}

#[test]
fn normalized_adjacency_has_unit_spectral_radius() {
    // cycle graphs have adjacency spectral radius exactly 2
    for n in [3usize, 6, 11] {
        let g: Graph<f64> = Graph::from_edges(n, (0..n).flat_map(|i| [(i, (i + 1) % n, 1.0), ((i + 1) % n, i, 1.0)])).unwrap();
        let a = build_gso(&g, GsoKind::Adjacency).unwrap();
        assert!((a.spectral_radius() - 2.0).abs() < 1e-8);
        let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
        assert!(s.matrix().max_abs_diff(&a.matrix().map(|v| v / 2.0)).unwrap() < 1e-8);
    }
    let mut r = rng(13);
    for _ in 0..20 {
        let n = r.random_range(2..25);
        let (_, s) = random_gso(&mut r, n);
        assert!((gcrnn::graph::spectral_radius(s.matrix()) - 1.0).abs() < 1e-8);
    }
}

#[test]
fn edge_weights_land_in_row_of_the_receiver() {
    let g: Graph<f64> = Graph::from_edges(3, [(0, 2, 0.5), (1, 0, 2.0)]).unwrap();
    let a = build_gso(&g, GsoKind::Adjacency).unwrap();
    assert_eq!(a.matrix().at(2, 0), 0.5);
    assert_eq!(a.matrix().at(0, 1), 2.0);
    assert_eq!(a.matrix().at(0, 2), 0.0);
    assert!(Graph::<f64>::from_edges(3, [(0, 2, 1.0), (0, 2, 1.0)]).is_err());
    assert!(Graph::<f64>::from_edges(3, [(0, 3, 1.0)]).is_err());
    assert!(build_gso(&Graph::<f64>::empty(4).unwrap(), GsoKind::NormalizedAdjacency).is_err());
}

#[test]
fn edge_list_round_trip_is_exact() {
    let mut r = rng(21);
    for _ in 0..10 {
        let n = r.random_range(2..12);
        let mut g = Graph::empty(n).unwrap();
        for a in 0..n {
            for b in 0..n {
                if a != b && r.random_bool(0.3) {
                    g.insert_edge(a, b, r.random_range(0.1..3.0)).unwrap();
                }
            }
        }
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(Graph::<f64>::read_edge_list(buf.as_slice()).unwrap(), g);
    }
    match Graph::<f64>::read_edge_list("3\n0 1 1.0\n1 x 1.0\n".as_bytes()) {
        Err(gcrnn::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn relabeled_graph_gives_conjugated_shift() {
    let mut r = rng(34);
    for _ in 0..20 {
        let n = r.random_range(2..12);
        let (g, s) = random_gso(&mut r, n);
        let perm = random_permutation(&mut r, n);
        let gp = build_gso(&g.permuted(&perm).unwrap(), GsoKind::NormalizedAdjacency).unwrap();
        let m = to_mat(s.matrix());
        let mp = to_mat(gp.matrix());
        // both sides renormalize by an iterative radius estimate
        for i in 0..n {
            for j in 0..n {
                assert!((mp[perm[i]][perm[j]] - m[i][j]).abs() < 1e-9);
            }
        }
        let sp: Gso<f64> = s.permuted(&perm).unwrap();
        assert!(sp.matrix().max_abs_diff(gp.matrix()).unwrap() < 1e-9);
    }
    let _ = Tensor::<f64>::eye(2);
}
