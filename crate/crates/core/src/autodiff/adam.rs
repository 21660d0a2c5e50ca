use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. Moments are allocated on the first call.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "adam: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some((i, _)) = params.iter().zip(grads).enumerate().find(|(_, (p, g))| p.shape() != g.shape()) {
        return Err(AutodiffError::ShapeMismatch(format!(
            "adam: parameter {i} is {:?}, gradient is {:?}",
            params[i].shape(),
            grads[i].shape()
        )));
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
        return Err(AutodiffError::ShapeMismatch("adam: optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = *config;
    let bias1 = 1.0 - beta1.powi(state.step as i32);
    let bias2 = 1.0 - beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
        for ((w, &gv), (mv, vv)) in it {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = Tensor::new(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new();
        adam_step(&mut [&mut p], &[Tensor::zeros(1, 3)], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert!(state.m[0].as_slice().iter().all(|&v| v == 0.0));
        assert!(state.v[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        let mut p = Tensor::new(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::new(1, 3, vec![0.5, -3.0, 1e-3]).unwrap();
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut AdamState::new(), &cfg).unwrap();
        // m_hat = g, v_hat = g², so the step is lr·g/(|g| + eps).
        for (w, gv) in p.as_slice().iter().zip(g.as_slice()) {
            let expected = -cfg.learning_rate * gv / (gv.abs() + cfg.epsilon);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
            assert!((w.abs() - cfg.learning_rate).abs() < 1e-7);
        }
    }

    #[test]
    fn second_moment_accumulates() {
        let mut p = Tensor::zeros(1, 1);
        let g = Tensor::scalar(2.0);
        let mut state = AdamState::new();
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg).unwrap();
        adam_step(&mut [&mut p], &[g], &mut state, &cfg).unwrap();
        // v1 = 0.001·4, v2 = 0.999·v1 + 0.001·4
        let v2 = 0.999 * (0.001 * 4.0) + 0.001 * 4.0;
        let m2 = 0.9 * (0.1 * 2.0) + 0.1 * 2.0;
        assert!((state.v[0].item() - v2).abs() < 1e-12 * v2);
        assert!((state.m[0].item() - m2).abs() < 1e-15);
        assert_eq!(state.step, 2);
        // Constant gradient: both bias-corrected steps equal lr·g/(|g|+eps).
        let one = 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((p.item() + 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Tensor::zeros(2, 2);
        let err = adam_step(&mut [&mut p], &[Tensor::zeros(1, 2)], &mut AdamState::new(), &AdamConfig::default());
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch(_))));
        assert!(adam_step(&mut [&mut p], &[], &mut AdamState::new(), &AdamConfig::default()).is_err());
    }
}
