use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonarprep::nn::{cross_entropy_soft, Architecture, LayerSpec, Model, Tensor};

pub const STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

fn loss_at(model: &Model, x: &Tensor, y: &Tensor) -> f64 {
    cross_entropy_soft(&model.predict(x).unwrap(), y).unwrap().0
}

fn batch(rng: &mut ChaCha8Rng, shape: [usize; 4], classes: usize) -> (Tensor, Tensor) {
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut y = vec![0.0; shape[0] * classes];
    for r in 0..shape[0] {
        let lam: f64 = rng.random_range(0.0..1.0);
        y[r * classes + rng.random_range(0..classes)] += lam;
        y[r * classes + rng.random_range(0..classes)] += 1.0 - lam;
    }
    (x, Tensor::new(vec![shape[0], classes], y).unwrap())
}

/// Central differences against the analytic gradient for every parameter.
/// Returns the worst relative error among entries away from ReLU/max kinks.
pub fn check(arch: &Architecture, classes: usize, batch_size: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut model = Model::new(arch, classes, seed).unwrap();
    // non-zero biases so ReLU and pooling see varied inputs
    for p in model.params_mut() {
        if p.rank() == 1 {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let [c, h, w] = arch.input;
    let (x, y) = batch(&mut rng, [batch_size, c, h, w], classes);
    let (_, grads) = model.loss_and_grads(&x, &y).unwrap();
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    let mut total = 0;
    for pi in 0..model.params().len() {
        for j in 0..model.params()[pi].numel() {
            let orig = model.params()[pi].data[j];
            model.params_mut()[pi].data[j] = orig + STEP;
            let up = loss_at(&model, &x, &y);
            model.params_mut()[pi].data[j] = orig - STEP;
            let down = loss_at(&model, &x, &y);
            model.params_mut()[pi].data[j] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = grads.tensors[pi].data[j];
            let scale = fd.abs().max(an.abs());
            total += 1;
            if scale < 1e-7 {
                continue;
            }
            let rel = (fd - an).abs() / scale;
            if rel > REL_TOL {
                // a perturbation straddling a ReLU/max kink; tolerated only rarely
                kinks += 1;
            } else {
                worst = worst.max(rel);
            }
        }
    }
    if kinks * 1000 > total {
        return Err(format!("seed {seed}: {kinks} of {total} entries off"));
    }
    Ok(worst)
}

/// Small architectures covering every layer type, plus the desk network.
pub fn cases() -> Vec<(&'static str, Architecture, usize, usize)> {
    vec![
        ("dense", Architecture { input: [1, 3, 4], body: vec![] }, 3, 3),
        (
            "conv+padding",
            Architecture { input: [2, 5, 4], body: vec![LayerSpec::Conv2d { out_channels: 3, kernel: 3, padding: 1 }] },
            3,
            2,
        ),
        (
            "conv+relu+maxpool+dense",
            Architecture {
                input: [1, 6, 6],
                body: vec![
                    LayerSpec::Conv2d { out_channels: 2, kernel: 2, padding: 0 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2,
                    LayerSpec::Dense { out_features: 5 },
                    LayerSpec::Relu,
                ],
            },
            4,
            3,
        ),
        (
            "global average pool",
            Architecture {
                input: [1, 4, 3],
                body: vec![LayerSpec::Conv2d { out_channels: 4, kernel: 1, padding: 0 }, LayerSpec::GlobalAvgPool],
            },
            2,
            2,
        ),
        ("desk network", Architecture::desk(8, 6), 4, 2),
    ]
}
