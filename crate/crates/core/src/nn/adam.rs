use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    pub fn new(params: &[Tensor], cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], st: &mut AdamState) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != st.m.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape != g.shape || p.shape != st.m[i].shape {
            return Err(NnError::ShapeMismatch(format!("parameter {i}: {:?} vs grad {:?}", p.shape, g.shape)));
        }
    }
    st.t += 1;
    let bc1 = 1.0 - st.beta1.powi(st.t as i32);
    let bc2 = 1.0 - st.beta2.powi(st.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(st.m.iter_mut().zip(st.v.iter_mut())) {
        for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *mi = st.beta1 * *mi + (1.0 - st.beta1) * gi;
            *vi = st.beta2 * *vi + (1.0 - st.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= st.lr * m_hat / (v_hat.sqrt() + st.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![scalar(1.5), Tensor::filled(&[2, 2], -0.5)];
        let g: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let before = p.clone();
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * |g| / (|g| + eps)
        for g in [0.3, -2.0, 1e-3] {
            let mut p = vec![scalar(0.0)];
            let mut st = AdamState::new(&p, AdamConfig { lr: 1e-3, ..AdamConfig::default() });
            adam_step(&mut p, &[scalar(g)], &mut st).unwrap();
            let expected = 1e-3 * g.abs() / (g.abs() + 1e-8);
            assert!((p[0].data[0].abs() - expected).abs() < 1e-15);
            assert!((p[0].data[0].abs() - 1e-3).abs() < 1e-6);
            assert_eq!(p[0].data[0].signum(), -g.signum());
        }
    }

    #[test]
    fn minimises_a_parabola() {
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        for _ in 0..100 {
            let g = scalar(2.0 * p[0].data[0]);
            adam_step(&mut p, &[g], &mut st).unwrap();
        }
        assert!(p[0].data[0].abs() < 0.1, "x = {}", p[0].data[0]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![scalar(0.7)];
        let mut st = AdamState::new(&p, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        for _ in 0..5 {
            adam_step(&mut p, &[scalar(3.0)], &mut st).unwrap();
        }
        assert_eq!(p[0].data[0], 0.7);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![scalar(0.0)];
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut st).is_err());
        assert!(adam_step(&mut p, &[], &mut st).is_err());
    }
}
