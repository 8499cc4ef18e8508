use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamSet};
use crate::tensor::{Matrix, Scalar};

/// Adam moment buffers, aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            context: "adam step".into(),
            expected: format!("{} tensors", params.len()),
            actual: format!("{} gradients, {} moment buffers", grads.len(), state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads.iter()).zip(&state.m) {
        if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
            return Err(Error::shape(format!("adam step for {}", p.name), p.value.shape(), g.shape()));
        }
    }

    state.t += 1;
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let c1 = T::from_f64(1.0 - state.beta1.powi(state.t as i32));
    let c2 = T::from_f64(1.0 - state.beta2.powi(state.t as i32));
    let eps = T::from_f64(state.eps);
    let lr = T::from_f64(lr);
    let one = T::one();
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.iter().nth(i).expect("aligned").as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (((w, &gi), mi), vi) in p.value.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamId;

    fn single(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", Matrix::filled(1, 1, value));
        p
    }

    #[test]
    fn one_step_matches_hand_value() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p);
        let g = Gradients::from_vec(vec![Matrix::filled(1, 1, 1.0)]);
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        // m̂ = v̂ = 1 ⇒ step = 0.1 / (1 + 1e-8)
        let want = -0.1 / (1.0 + 1e-8);
        assert!((p.get(ParamId(0))[(0, 0)] - want).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.25);
        let mut st = AdamState::new(&p);
        let g = Gradients::zeros_like(&p);
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        assert_eq!(p.get(ParamId(0))[(0, 0)], 0.25);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p);
        let g = Gradients::from_vec(vec![Matrix::zeros(2, 1)]);
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.1), Err(Error::Dimension { .. })));
    }
}
