use crate::error::{ensure, Result};
use crate::tensor::RealTensor;

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments for tensors of the given lengths; β₁ = 0.9, β₂ = 0.999,
    /// ε = 1e-8.
    pub fn new(lr: f64, lens: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_tensors(lr: f64, params: &[&RealTensor]) -> Self {
        let lens: Vec<usize> = params.iter().map(|t| t.len()).collect();
        Self::new(lr, &lens)
    }
}

pub fn adam_step(
    params: &mut [&mut RealTensor],
    grads: &[RealTensor],
    state: &mut AdamState,
) -> Result<()> {
    ensure(
        params.len() == grads.len() && params.len() == state.m.len(),
        || {
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )
        },
    )?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        ensure(p.shape() == g.shape() && p.len() == m.len(), || {
            format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())
        })?;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mh = *mi / c1;
            let vh = *vi / c2;
            *pi -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(g: f64) -> f64 {
        let mut p = RealTensor::full(&[3], 0.5);
        let mut st = AdamState::new(1e-3, &[3]);
        adam_step(&mut [&mut p], &[RealTensor::full(&[3], g)], &mut st).unwrap();
        assert_eq!(st.step, 1);
        0.5 - p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        assert_eq!(step_once(0.0), 0.0);
    }

    #[test]
    fn first_step_has_magnitude_lr_regardless_of_scale() {
        // |update| = lr |g| / (|g| + eps)
        let a = step_once(0.3);
        let b = step_once(30.0);
        assert!((a - 1e-3).abs() < 1e-6);
        assert!((a - b).abs() < 1e-6);
        assert!((step_once(-2.0) + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = RealTensor::zeros(&[2]);
        let mut st = AdamState::new(0.1, &[2]);
        assert!(adam_step(&mut [&mut p], &[RealTensor::zeros(&[3])], &mut st).is_err());
    }
}
