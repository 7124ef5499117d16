use super::{NnError, Tensor};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss `-sum(y * log softmax(z))` and gradient `softmax(z) - y` for one row.
pub(crate) fn sample_loss_grad(logits: &[f64], target: &[f64], row: usize) -> Result<(f64, Vec<f64>), NnError> {
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || target.iter().any(|&t| t < 0.0) {
        return Err(NnError::InvalidTarget { row, sum });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = target.iter().zip(logits).map(|(&y, &z)| if y == 0.0 { 0.0 } else { -y * (z - log_z) }).sum();
    let grad = logits.iter().zip(target).map(|(&z, &y)| (z - log_z).exp() - y).collect();
    Ok((loss, grad))
}

/// Batch-mean soft-target cross-entropy; gradient is `(softmax - y) / B`.
pub fn cross_entropy_soft(logits: &Tensor, soft_targets: &Tensor) -> Result<(f64, Tensor), NnError> {
    let (b, c) = match logits.shape[..] {
        [b, c] if b > 0 => (b, c),
        _ => return Err(NnError::ShapeMismatch(format!("logits must be [B, C], got {:?}", logits.shape))),
    };
    if soft_targets.shape != logits.shape {
        return Err(NnError::ShapeMismatch(format!(
            "targets {:?} vs logits {:?}",
            soft_targets.shape, logits.shape
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * c);
    for r in 0..b {
        let (l, g) = sample_loss_grad(&logits.data[r * c..(r + 1) * c], &soft_targets.data[r * c..(r + 1) * c], r)?;
        loss += l;
        grad.extend(g.into_iter().map(|v| v / b as f64));
    }
    Ok((loss / b as f64, Tensor { shape: vec![b, c], data: grad }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::filled(&[2, 4], 0.3);
        let targets = Tensor::new(vec![2, 4], vec![0., 1., 0., 0., 0., 0., 0., 1.]).unwrap();
        let (loss, _) = cross_entropy_soft(&logits, &targets).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn stationary_at_softmax() {
        let z = vec![0.5, -1.0, 2.0];
        let p = softmax(&z);
        let logits = Tensor::new(vec![1, 3], z).unwrap();
        let targets = Tensor::new(vec![1, 3], p).unwrap();
        let (_, g) = cross_entropy_soft(&logits, &targets).unwrap();
        assert!(g.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn invalid_target_rows() {
        let logits = Tensor::zeros(&[2, 2]);
        let targets = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.3, 0.3]).unwrap();
        assert_eq!(cross_entropy_soft(&logits, &targets).unwrap_err(), NnError::InvalidTarget { row: 1, sum: 0.6 });
    }

    #[test]
    fn finite_differences() {
        let logits = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect()).unwrap();
        let targets =
            Tensor::new(vec![3, 4], vec![0.2, 0.3, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]).unwrap();
        let (_, g) = cross_entropy_soft(&logits, &targets).unwrap();
        let h = 1e-6;
        for i in 0..12 {
            let mut plus = logits.clone();
            plus.data[i] += h;
            let mut minus = logits.clone();
            minus.data[i] -= h;
            let fd = (cross_entropy_soft(&plus, &targets).unwrap().0 - cross_entropy_soft(&minus, &targets).unwrap().0)
                / (2.0 * h);
            let rel = (fd - g.data[i]).abs() / fd.abs().max(g.data[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "entry {i}: fd {fd} analytic {}", g.data[i]);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::new(vec![1, 3], vec![1000.0, -1000.0, 0.0]).unwrap();
        let targets = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let (loss, g) = cross_entropy_soft(&logits, &targets).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(g.is_finite());
    }
}
