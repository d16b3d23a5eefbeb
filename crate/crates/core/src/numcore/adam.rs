use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Bias-corrected Adam moments for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(contract(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(contract(format!(
                "adam shape mismatch {:?} / {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm does not exceed `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::zeros(&[2])], &mut state, 0.001).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, 0.001).unwrap();
        assert!((params[0].item() + 0.001).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params);
        for _ in 0..2000 {
            let x = params[0].item();
            adam_step(
                &mut params,
                &[Tensor::scalar(2.0 * (x - 2.0))],
                &mut state,
                0.01,
            )
            .unwrap();
        }
        assert!((params[0].item() - 2.0).abs() < 0.01);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state, 0.1).is_err());
        assert_eq!(state.step, 0);
    }
}
