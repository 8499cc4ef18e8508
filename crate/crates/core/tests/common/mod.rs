#![allow(dead_code)]

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use lineage_core::classifiers::{AttentionSpec, Classifier, ClassifierSpec, FfnSpec};
use lineage_core::embedding::{Autoencoder, AutoencoderSpec};
use lineage_core::graph::{build_graph, Gcn, GcnSpec, GraphConfig};
use lineage_core::nn::{finite_difference_check, BnStats, FdOptions, FdReport, ForwardCtx, GradientTape, ParamSet, Var};
use lineage_core::{rng, Matrix, Result};

pub const FD_EPS: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-3;

pub fn gaussian<T: lineage_core::Scalar>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    let mut s = rng::stream(seed, "test/gaussian");
    let data = (0..rows * cols)
        .map(|_| T::from_f64(StandardNormal.sample(&mut s)))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| (i * 5 + 3) % classes).collect()
}

/// Runs `build` once for analytic gradients and again for every finite
/// difference probe. `build` must be deterministic, so any dropout context
/// it creates has to use a fixed seed and stream.
pub fn fd_check(
    params: &ParamSet<f32>,
    build: impl Fn(&mut GradientTape<f64>, &ParamSet<f64>) -> Result<Var>,
) -> FdReport {
    let p = params.cast::<f64>();
    let mut tape = GradientTape::new();
    let loss = build(&mut tape, &p).unwrap();
    let grads = tape.backward(loss, &p).unwrap();
    let opts = FdOptions {
        eps: FD_EPS,
        per_tensor: 24,
        seed: 7,
        ..Default::default()
    };
    finite_difference_check(
        &p,
        &grads,
        |q| {
            let mut t = GradientTape::new();
            let l = build(&mut t, q)?;
            Ok(t.value(l)[(0, 0)])
        },
        &opts,
    )
    .unwrap()
}

fn cast_stats(stats: &[BnStats<f32>]) -> Vec<BnStats<f64>> {
    stats.iter().map(|s| s.cast()).collect()
}

pub fn autoencoder_report() -> FdReport {
    let spec = AutoencoderSpec {
        input_width: 12,
        latent_width: 4,
        encoder_widths: vec![10, 6],
        ..Default::default()
    };
    let ae = Autoencoder::new(spec, 3).unwrap();
    let x = gaussian::<f64>(8, 12, 1);
    let stats = cast_stats(&ae.bn_stats);
    fd_check(&ae.params, |tape, p| {
        let xv = tape.constant(x.clone());
        let (_, xhat) = ae.forward(tape, p, &stats, xv, &mut ForwardCtx::train(0, "fd"))?;
        tape.mse(xhat, x.clone())
    })
}

fn classifier_report(spec: ClassifierSpec, rows: usize) -> FdReport {
    let c = Classifier::new(spec, 5).unwrap();
    let x = gaussian::<f64>(rows, c.input_width(), 2);
    let y = labels(rows, c.num_classes());
    let stats = cast_stats(&c.bn_stats);
    fd_check(&c.params, |tape, p| {
        let xv = tape.constant(x.clone());
        // Same seed and stream on every call: the dropout masks are frozen.
        let logits = c.forward(tape, p, &stats, xv, &mut ForwardCtx::train(11, "fd/dropout"))?;
        tape.cross_entropy(logits, y.clone())
    })
}

pub fn ffn_report(dropout: f64) -> FdReport {
    let spec = FfnSpec {
        input_width: 6,
        hidden1: 10,
        hidden2: 8,
        dropout,
        ..Default::default()
    };
    classifier_report(ClassifierSpec::Ffn(spec), 9)
}

pub fn attention_report(dropout: f64) -> FdReport {
    let spec = AttentionSpec {
        token_count: 5,
        model_width: 8,
        heads: 2,
        ff_widths: vec![6],
        dropout,
        num_classes: 7,
    };
    classifier_report(ClassifierSpec::Attention(spec), 4)
}

pub fn gcn_report(dropout: f64) -> FdReport {
    let feats = gaussian::<f32>(10, 5, 4);
    let g = build_graph(
        &feats,
        &GraphConfig {
            threshold: 0.0,
            max_edges: 20,
            per_node_cap: None,
        },
    )
    .unwrap();
    let adj = Arc::new(g.norm_adj.cast::<f64>());
    let spec = GcnSpec {
        input_width: 5,
        hidden: 6,
        dropout,
        num_classes: 7,
    };
    let gcn = Gcn::new(spec, 9).unwrap();
    let x = feats.cast::<f64>();
    let y = labels(10, 7);
    fd_check(&gcn.params, |tape, p| {
        let xv = tape.constant(x.clone());
        let logits = gcn.forward(tape, p, &adj, xv, &mut ForwardCtx::train(13, "fd/gcn"))?;
        tape.cross_entropy(logits, y.clone())
    })
}

/// Every model's forward path, in a fixed order.
pub fn all_gradient_reports() -> Vec<(&'static str, FdReport)> {
    vec![
        ("autoencoder", autoencoder_report()),
        ("ffn dropout 0", ffn_report(0.0)),
        ("ffn dropout 0.3 frozen masks", ffn_report(0.3)),
        ("attention", attention_report(0.0)),
        ("attention dropout 0.2 frozen masks", attention_report(0.2)),
        ("gcn dropout 0", gcn_report(0.0)),
        ("gcn dropout 0.3 frozen masks", gcn_report(0.3)),
    ]
}

/// Every pair scored independently, filtered, fully sorted, cut at `k`.
pub fn brute_force_top_k(z: &Matrix<f32>, threshold: f64, k: usize) -> Vec<(usize, usize)> {
    let n = z.rows();
    let v: Vec<Vec<f64>> = z.iter_rows().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let mut all = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i < j {
                let dot: f64 = (0..v[i].len()).map(|c| v[i][c] * v[j][c]).sum();
                let ni: f64 = v[i].iter().map(|x| x * x).sum::<f64>().sqrt();
                let nj: f64 = v[j].iter().map(|x| x * x).sum::<f64>().sqrt();
                all.push((dot / (ni * nj), i, j));
            }
        }
    }
    all.retain(|e| e.0 >= threshold);
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    all.into_iter().take(k).map(|(_, i, j)| (i, j)).collect()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lineage")
}
