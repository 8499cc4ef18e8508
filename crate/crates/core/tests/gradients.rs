mod common;

use common::*;

fn assert_passes(name: &str, r: lineage_core::nn::FdReport) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.passed(FD_TOL), "{name}: max rel error {:.3e} at {:?}", r.max_rel_error, r.worst);
}

#[test]
fn autoencoder_gradients() {
    assert_passes("autoencoder", autoencoder_report());
}

#[test]
fn ffn_gradients_without_dropout() {
    assert_passes("ffn", ffn_report(0.0));
}

#[test]
fn ffn_gradients_with_frozen_dropout_masks() {
    assert_passes("ffn dropout", ffn_report(0.3));
}

#[test]
fn attention_gradients() {
    assert_passes("attention", attention_report(0.0));
    assert_passes("attention dropout", attention_report(0.2));
}

#[test]
fn gcn_gradients() {
    assert_passes("gcn", gcn_report(0.0));
    assert_passes("gcn dropout", gcn_report(0.3));
}

#[test]
fn perturbed_gradient_is_caught() {
    use lineage_core::nn::{finite_difference_check, FdOptions, GradientTape, ParamSet};
    use lineage_core::Matrix;
    let mut p = ParamSet::<f64>::new();
    let w = p.add("w", Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap());
    let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]).unwrap();
    let build = |tape: &mut GradientTape<f64>, q: &ParamSet<f64>| {
        let xv = tape.constant(x.clone());
        let wv = tape.param(q, w);
        let y = tape.matmul_nt(xv, wv).unwrap();
        tape.mse(y, Matrix::zeros(2, 1)).unwrap()
    };
    let mut tape = GradientTape::new();
    let loss = build(&mut tape, &p);
    let mut g = tape.backward(loss, &p).unwrap();
    g.get_mut(w).as_mut_slice()[1] *= 1.01;
    let r = finite_difference_check(
        &p,
        &g,
        |q| {
            let mut t = GradientTape::new();
            let l = build(&mut t, q);
            Ok(t.value(l)[(0, 0)])
        },
        &FdOptions { eps: FD_EPS, ..Default::default() },
    )
    .unwrap();
    assert!(!r.passed(FD_TOL));
}
