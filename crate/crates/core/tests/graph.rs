mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{brute_force_top_k, gaussian};
use lineage_core::graph::{build_graph, normalize_adjacency, train_gcn, Gcn, GcnSpec, GraphConfig};
use lineage_core::nn::{ForwardCtx, GradientTape};
use lineage_core::sparse::CsrMatrix;
use lineage_core::train::TrainConfig;
use lineage_core::{Error, Matrix};

fn cfg(threshold: f64, max_edges: usize) -> GraphConfig {
    GraphConfig {
        threshold,
        max_edges,
        per_node_cap: None,
    }
}

#[test]
fn top_k_matches_brute_force_over_twenty_seeds() {
    for seed in 0..20 {
        let z = gaussian::<f32>(50, 6, 1000 + seed);
        let g = build_graph(&z, &cfg(0.4, 10)).unwrap();
        let want = brute_force_top_k(&z, 0.4, 10);
        assert_eq!(want.len(), 10, "seed {seed} has too few candidate pairs");
        let got: BTreeSet<_> = g.edge_pairs().into_iter().collect();
        assert_eq!(got, want.into_iter().collect::<BTreeSet<_>>(), "seed {seed}");
        assert!(g.edges.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }
}

#[test]
fn threshold_binds_before_the_edge_cap() {
    let z = gaussian::<f32>(30, 4, 5);
    let g = build_graph(&z, &cfg(0.9, 10_000)).unwrap();
    let want = brute_force_top_k(&z, 0.9, usize::MAX);
    assert_eq!(g.edges.len(), want.len());
    assert!(g.edges.iter().all(|e| e.similarity >= 0.9));
}

#[test]
fn per_node_cap_limits_degrees() {
    let z = gaussian::<f32>(40, 3, 6);
    let capped = GraphConfig {
        per_node_cap: Some(2),
        ..cfg(0.0, 1000)
    };
    let g = build_graph(&z, &capped).unwrap();
    let mut degree = [0; 40];
    for (i, j) in g.edge_pairs() {
        degree[i] += 1;
        degree[j] += 1;
    }
    assert!(degree.iter().all(|&d| d <= 2));
    assert!(!g.edges.is_empty());
}

fn dense(m: &CsrMatrix<f64>) -> Matrix<f64> {
    m.to_dense()
}

#[test]
fn normalized_single_node() {
    let a = normalize_adjacency::<f64>(&[], 1).unwrap();
    assert_eq!(dense(&a), Matrix::from_rows(&[vec![1.0]]).unwrap());
}

#[test]
fn normalized_path() {
    // 0 - 1 - 2; self-loop degrees 2, 3, 2.
    let a = dense(&normalize_adjacency::<f64>(&[(0, 1), (1, 2)], 3).unwrap());
    let r6 = 1.0 / 6f64.sqrt();
    let want = Matrix::from_rows(&[vec![0.5, r6, 0.0], vec![r6, 1.0 / 3.0, r6], vec![0.0, r6, 0.5]]).unwrap();
    assert_eq!(a, want);
}

#[test]
fn normalized_complete_graphs() {
    for n in 2..=5usize {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        let a = dense(&normalize_adjacency::<f64>(&edges, n).unwrap());
        let v = 1.0 / n as f64;
        assert_eq!(a, Matrix::filled(n, n, v), "K{n}");
    }
}

#[test]
fn normalization_ignores_duplicates_and_self_pairs() {
    let a = normalize_adjacency::<f64>(&[(0, 1), (1, 0), (0, 1), (2, 2)], 3).unwrap();
    let b = normalize_adjacency::<f64>(&[(0, 1)], 3).unwrap();
    assert_eq!(dense(&a), dense(&b));
    assert!(normalize_adjacency::<f64>(&[(0, 3)], 3).is_err());
}

#[test]
fn normalized_adjacency_spectrum_in_unit_interval() {
    for seed in 0..5 {
        let z = gaussian::<f32>(25, 3, 40 + seed);
        let g = build_graph(&z, &cfg(0.2, 60)).unwrap();
        assert!(g.norm_adj.is_symmetric(0.0));
        // The stored f32 operator and its exact f64 counterpart.
        for (a, tol) in [
            (normalize_adjacency::<f64>(&g.edge_pairs(), 25).unwrap(), 1e-9),
            (g.norm_adj.cast::<f64>(), 1e-6),
        ] {
            let m = nalgebra::DMatrix::from_fn(25, 25, |i, j| a.get(i, j));
            let eig = m.symmetric_eigen().eigenvalues;
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((max - 1.0).abs() < tol, "largest eigenvalue {max}");
            assert!(eig.iter().all(|&l| l > -1.0 - tol));
        }
    }
}

#[test]
fn node_relabelling_relabels_edges() {
    let z = gaussian::<f32>(30, 5, 77);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 30).collect();
    let zp = z.select_rows(&perm);
    let g = build_graph(&z, &cfg(0.3, 25)).unwrap();
    let gp = build_graph(&zp, &cfg(0.3, 25)).unwrap();
    let mapped: BTreeSet<(usize, usize)> = gp
        .edge_pairs()
        .into_iter()
        .map(|(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
        .collect();
    assert_eq!(mapped, g.edge_pairs().into_iter().collect());
}

fn gcn_spec(input_width: usize) -> GcnSpec {
    GcnSpec {
        input_width,
        hidden: 6,
        dropout: 0.0,
        num_classes: 3,
    }
}

fn gcn_logits(gcn: &Gcn, adj: CsrMatrix<f64>, x: &Matrix<f64>) -> Matrix<f64> {
    let p = gcn.params.cast::<f64>();
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let out = gcn.forward(&mut tape, &p, &Arc::new(adj), xv, &mut ForwardCtx::eval()).unwrap();
    tape.take_value(out)
}

fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out[(i, j)] = (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum();
        }
    }
    out
}

#[test]
fn gcn_matches_dense_propagation() {
    let x = gaussian::<f64>(8, 4, 3);
    let edges = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 4), (7, 0)];
    let gcn = Gcn::new(gcn_spec(4), 1).unwrap();
    let w = |n: &str| gcn.params.get(gcn.params.find(n).unwrap()).cast::<f64>().transpose();
    let a = dense(&normalize_adjacency::<f64>(&edges, 8).unwrap());
    let h = naive_matmul(&a, &naive_matmul(&x, &w("gcn.0.weight"))).map(|v| v.max(0.0));
    let want = naive_matmul(&a, &naive_matmul(&h, &w("gcn.1.weight")));
    let got = gcn_logits(&gcn, normalize_adjacency(&edges, 8).unwrap(), &x);
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn gcn_without_edges_is_a_two_layer_mlp() {
    let x = gaussian::<f64>(5, 4, 9);
    let gcn = Gcn::new(gcn_spec(4), 2).unwrap();
    let w = |n: &str| gcn.params.get(gcn.params.find(n).unwrap()).cast::<f64>().transpose();
    let want = naive_matmul(&naive_matmul(&x, &w("gcn.0.weight")).map(|v| v.max(0.0)), &w("gcn.1.weight"));
    let got = gcn_logits(&gcn, normalize_adjacency(&[], 5).unwrap(), &x);
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn disconnected_component_does_not_leak() {
    let x = gaussian::<f64>(9, 4, 11);
    let a_edges = [(0, 1), (1, 2), (2, 3)];
    let mut union = a_edges.to_vec();
    union.extend([(4, 5), (5, 6), (6, 7), (7, 8), (4, 8)]);
    let gcn = Gcn::new(gcn_spec(4), 3).unwrap();
    let alone = gcn_logits(&gcn, normalize_adjacency(&a_edges, 4).unwrap(), &x.row_range(0, 4));
    let mut other = x.clone();
    for v in other.as_mut_slice()[16..].iter_mut() {
        *v = -3.0 * *v + 1.0;
    }
    for feats in [&x, &other] {
        let joint = gcn_logits(&gcn, normalize_adjacency(&union, 9).unwrap(), feats);
        assert!(joint.row_range(0, 4).max_abs_diff(&alone) < 1e-12);
    }
}

#[test]
fn gcn_train_masks_are_validated() {
    let z = gaussian::<f32>(6, 3, 1);
    let g = build_graph(&z, &cfg(0.0, 10)).unwrap();
    let labels = [0, 1, 2, 0, 1, 2];
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        seed: 0,
    };
    let spec = gcn_spec(3);
    assert!(matches!(train_gcn(&g, &labels, &[], &[1], spec.clone(), &tc), Err(Error::Config(_))));
    assert!(matches!(train_gcn(&g, &labels, &[0, 1], &[1, 2], spec.clone(), &tc), Err(Error::Config(_))));
    assert!(matches!(train_gcn(&g, &labels, &[0, 1], &[9], spec.clone(), &tc), Err(Error::Config(_))));
    let t = train_gcn(&g, &labels, &[0, 1, 2, 3], &[4, 5], spec, &tc).unwrap();
    assert_eq!(t.history.losses("train").len(), 2);
}

#[test]
fn gcn_separates_two_clusters() {
    // Two tight clusters in different directions; labels follow the cluster.
    let mut rows = Vec::new();
    let noise = gaussian::<f32>(40, 4, 8);
    for i in 0..40 {
        let base = if i < 20 { [1.0, 1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0, 1.0] };
        rows.push((0..4).map(|c| base[c] + 0.1 * noise[(i, c)]).collect::<Vec<f32>>());
    }
    let z = Matrix::from_rows(&rows).unwrap();
    let labels: Vec<usize> = (0..40).map(|i| (i >= 20) as usize).collect();
    let g = build_graph(&z, &cfg(0.8, 1000)).unwrap();
    let train: Vec<usize> = (0..40).filter(|i| i % 4 != 0).collect();
    let test: Vec<usize> = (0..40).filter(|i| i % 4 == 0).collect();
    let spec = GcnSpec {
        input_width: 4,
        hidden: 8,
        dropout: 0.0,
        num_classes: 2,
    };
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 40,
        lr: 1e-2,
        seed: 1,
    };
    let t = train_gcn(&g, &labels, &train, &test, spec, &tc).unwrap();
    assert_eq!(t.history.last("test").unwrap().accuracy, Some(1.0));
}

#[test]
fn export_lists_every_edge() {
    let z = gaussian::<f32>(12, 3, 2);
    let g = build_graph(&z, &cfg(0.5, 7)).unwrap();
    let text = g.export();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# nodes=12 edges="), "{header}");
    assert!(header.contains(&g.fingerprint()));
    assert_eq!(lines.next(), Some("i,j,similarity"));
    assert_eq!(lines.count(), g.edges.len());
}
