use super::{NnError, Tensor};

/// Per-sample class activation map over the final conv layer's spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl CamMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }
}

/// `ReLU(sum_k alpha_k * A_k)` with `alpha_k` the spatial mean of the
/// gradient map `k`, then min-max scaled into [0, 1]. An all-zero map stays
/// zero; a constant positive map becomes all ones.
pub fn cam_from(activations: &Tensor, grads: &Tensor) -> Result<CamMap, NnError> {
    let (k, h, w) = match activations.shape[..] {
        [k, h, w] => (k, h, w),
        _ => return Err(NnError::ShapeMismatch(format!("Grad-CAM needs [K,H,W] maps, got {:?}", activations.shape))),
    };
    if grads.shape != activations.shape {
        return Err(NnError::ShapeMismatch(format!("gradients {:?} vs maps {:?}", grads.shape, activations.shape)));
    }
    let n = h * w;
    let mut cam = vec![0.0; n];
    for ch in 0..k {
        let alpha = grads.data[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64;
        if alpha == 0.0 {
            continue;
        }
        for (c, &a) in cam.iter_mut().zip(&activations.data[ch * n..(ch + 1) * n]) {
            *c += alpha * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let lo = cam.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cam.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        cam.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else if hi > 0.0 {
        cam.fill(1.0);
    }
    Ok(CamMap { height: h, width: w, values: cam })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_map_positive_gradient() {
        let a = Tensor::new(vec![1, 2, 2], vec![-1.0, 0.0, 2.0, 4.0]).unwrap();
        let g = Tensor::filled(&[1, 2, 2], 0.5);
        let cam = cam_from(&a, &g).unwrap();
        // ReLU gives [0, 0, 2, 4]; normalised by 4
        assert_eq!(cam.values, vec![0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn negative_sum_is_all_zero() {
        let a = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Tensor::filled(&[1, 1, 3], -1.0);
        assert_eq!(cam_from(&a, &g).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn two_map_hand_example() {
        // A1 = [[1,2],[3,4]], A2 = [[4,0],[0,4]]
        // grads: map 1 mean 0.5, map 2 mean -0.25
        // weighted: [[0.5-1, 1-0], [1.5-0, 2-1]] = [[-0.5, 1], [1.5, 1]]
        // ReLU: [[0, 1], [1.5, 1]] -> / 1.5
        let a = Tensor::new(vec![2, 2, 2], vec![1., 2., 3., 4., 4., 0., 0., 4.]).unwrap();
        let g = Tensor::new(vec![2, 2, 2], vec![0.5, 0.5, 0.5, 0.5, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let cam = cam_from(&a, &g).unwrap();
        let expect = [0.0, 1.0 / 1.5, 1.0, 1.0 / 1.5];
        for (v, e) in cam.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        assert_eq!((cam.height, cam.width), (2, 2));
    }

    #[test]
    fn shape_checks() {
        let a = Tensor::zeros(&[2, 2, 2]);
        assert!(cam_from(&a, &Tensor::zeros(&[2, 2, 1])).is_err());
        assert!(cam_from(&Tensor::zeros(&[4]), &Tensor::zeros(&[4])).is_err());
    }
}
