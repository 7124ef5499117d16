use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, Layer, LayerSpec};
use super::loss::{cross_entropy_soft, sample_loss_grad};
use super::{CamMap, NnError, Tensor};

/// Body layers plus the nominal input shape used to check that shapes compose.
/// A dense head with one output per class is appended by [`Model::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[channels, height, width]`; height is the frame axis, width the mel axis.
    pub input: [usize; 3],
    pub body: Vec<LayerSpec>,
}

impl Architecture {
    /// conv(16, 3x3) -> ReLU -> maxpool 2 -> conv(32, 3x3) -> ReLU -> global average pool.
    pub fn desk(n_frames: usize, n_mels: usize) -> Self {
        Self {
            input: [1, n_frames, n_mels],
            body: vec![
                LayerSpec::Conv2d { out_channels: 16, kernel: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv2d { out_channels: 32, kernel: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
        }
    }
}

/// Per-sample activations of the last forward pass; `acts[i]` feeds layer `i`.
#[derive(Debug, Clone)]
struct ForwardCache {
    acts: Vec<Vec<Tensor>>,
}

/// Network parameters and the caches Grad-CAM reads.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub n_classes: usize,
    layers: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor>,
    /// Index into the activation list of the final conv block's output.
    cam_act: Option<usize>,
    cache: Option<ForwardCache>,
    last_conv_activations: Option<Vec<Tensor>>,
    last_conv_grads: Option<Vec<Tensor>>,
}

/// Gradients aligned with [`Model::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.random_range(-bound..bound)).collect() }
}

impl Model {
    /// Xavier-uniform weights, zero biases; deterministic in `seed`.
    pub fn new(arch: &Architecture, n_classes: usize, seed: u64) -> Result<Self, NnError> {
        if n_classes == 0 {
            return Err(NnError::ShapeComposeError("need at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut shape: Vec<usize> = arch.input.to_vec();
        if arch.input.contains(&0) {
            return Err(NnError::ShapeComposeError(format!("input shape {:?}", arch.input)));
        }
        let specs = arch.body.iter().copied().chain(std::iter::once(LayerSpec::Dense { out_features: n_classes }));
        let mut cam_act = None;
        for (i, spec) in specs.enumerate() {
            let layer = match spec {
                LayerSpec::Conv2d { out_channels, kernel, padding } => {
                    let [c, h, w] = spatial(&shape, i, "conv")?;
                    if out_channels == 0 || kernel == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(NnError::ShapeComposeError(format!(
                            "layer {i}: conv {out_channels}x{kernel}x{kernel} (pad {padding}) on {c}x{h}x{w}"
                        )));
                    }
                    let weight = params.len();
                    params.push(xavier(&mut rng, &[out_channels, c, kernel, kernel], c * kernel * kernel, out_channels * kernel * kernel));
                    names.push(format!("layer{i}.weight"));
                    params.push(Tensor::zeros(&[out_channels]));
                    names.push(format!("layer{i}.bias"));
                    shape = vec![out_channels, h + 2 * padding + 1 - kernel, w + 2 * padding + 1 - kernel];
                    cam_act = Some(i + 1);
                    Layer::Conv { in_c: c, out_c: out_channels, k: kernel, pad: padding, weight, bias: weight + 1 }
                }
                LayerSpec::Relu => {
                    if cam_act == Some(i) {
                        cam_act = Some(i + 1);
                    }
                    Layer::Relu
                }
                LayerSpec::MaxPool2 => {
                    let [c, h, w] = spatial(&shape, i, "maxpool")?;
                    if h < 2 || w < 2 {
                        return Err(NnError::ShapeComposeError(format!("layer {i}: maxpool on {h}x{w}")));
                    }
                    shape = vec![c, h / 2, w / 2];
                    Layer::MaxPool2
                }
                LayerSpec::GlobalAvgPool => {
                    let [c, _, _] = spatial(&shape, i, "global pool")?;
                    shape = vec![c];
                    Layer::GlobalAvgPool
                }
                LayerSpec::Dense { out_features } => {
                    let in_f: usize = shape.iter().product();
                    if out_features == 0 {
                        return Err(NnError::ShapeComposeError(format!("layer {i}: dense with zero outputs")));
                    }
                    let weight = params.len();
                    params.push(xavier(&mut rng, &[in_f, out_features], in_f, out_features));
                    names.push(format!("layer{i}.weight"));
                    params.push(Tensor::zeros(&[out_features]));
                    names.push(format!("layer{i}.bias"));
                    shape = vec![out_features];
                    Layer::Dense { in_f, out_f: out_features, weight, bias: weight + 1 }
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            arch: arch.clone(),
            n_classes,
            layers,
            names,
            params,
            cam_act,
            cache: None,
            last_conv_activations: None,
            last_conv_grads: None,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access; invalidates cached activations.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.cache = None;
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        if self.params[i].shape != value.shape {
            return Err(NnError::ShapeMismatch(format!(
                "{name}: expected {:?}, got {:?}",
                self.params[i].shape, value.shape
            )));
        }
        self.params[i] = value;
        self.cache = None;
        Ok(())
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients { names: self.names.clone(), tensors: self.params.iter().map(|p| Tensor::zeros(&p.shape)).collect() }
    }

    /// Name of the first convolution's weight, if the body starts with one.
    pub fn first_conv_weight(&self) -> Option<&str> {
        self.layers.iter().find_map(|l| match l {
            Layer::Conv { weight, .. } => Some(self.names[*weight].as_str()),
            _ => None,
        })
    }

    fn split_batch(&self, batch: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let in_c = self.arch.input[0];
        match batch.shape[..] {
            [b, c, _, _] if c == in_c && b > 0 => Ok((0..b).map(|i| batch.index_first(i)).collect()),
            _ => Err(NnError::ShapeMismatch(format!("expected [B, {in_c}, F, M] batch, got {:?}", batch.shape))),
        }
    }

    fn forward_sample(&self, x: Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let next = layers::forward(layer, &self.params, acts.last().expect("input"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Returns parameter gradients and, when available, the gradient at the Grad-CAM layer.
    fn backward_sample(&self, acts: &[Tensor], grad_logits: &Tensor) -> (Vec<Tensor>, Option<Tensor>) {
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        let mut g = grad_logits.clone();
        let mut cam_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.cam_act == Some(i + 1) {
                cam_grad = Some(g.clone());
            }
            g = layers::backward(layer, &self.params, &acts[i], &acts[i + 1], &g, &mut grads, i > 0);
        }
        (grads, cam_grad)
    }

    fn cam_activation(&self, acts: &[Tensor]) -> Option<Tensor> {
        self.cam_act.map(|i| acts[i].clone())
    }

    /// Logits for a `[B, C, F, M]` batch, caching activations for [`Model::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor, NnError> {
        let samples = self.split_batch(batch)?;
        let acts: Vec<Vec<Tensor>> =
            samples.into_par_iter().map(|x| self.forward_sample(x)).collect::<Result<_, _>>()?;
        let logits = Tensor::stack(&acts.iter().map(|a| a.last().expect("output").clone()).collect::<Vec<_>>())?;
        self.last_conv_activations =
            self.cam_act.map(|_| acts.iter().map(|a| self.cam_activation(a).expect("cam layer")).collect());
        self.last_conv_grads = None;
        self.cache = Some(ForwardCache { acts });
        Ok(logits)
    }

    /// Logits without touching any cache.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let samples = self.split_batch(batch)?;
        let outs: Vec<Tensor> = samples
            .into_par_iter()
            .map(|x| self.forward_sample(x).map(|mut a| a.pop().expect("output")))
            .collect::<Result<_, _>>()?;
        Tensor::stack(&outs)
    }

    /// Exact gradients of `sum(grad_logits * logits)` with respect to every parameter.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Gradients, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::StaleCache)?;
        let b = cache.acts.len();
        if grad_logits.shape != [b, self.n_classes] {
            return Err(NnError::StaleCache);
        }
        let per_sample: Vec<(Vec<Tensor>, Option<Tensor>)> = cache
            .acts
            .par_iter()
            .enumerate()
            .map(|(i, acts)| self.backward_sample(acts, &grad_logits.index_first(i)))
            .collect();
        let mut total = self.zero_grads();
        let mut cam_grads = Vec::with_capacity(b);
        for (grads, cam) in per_sample {
            for (t, g) in total.tensors.iter_mut().zip(&grads) {
                t.add_assign(g);
            }
            if let Some(c) = cam {
                cam_grads.push(c);
            }
        }
        self.last_conv_grads = if cam_grads.is_empty() { None } else { Some(cam_grads) };
        Ok(total)
    }

    /// Mean soft-target cross-entropy and its parameter gradients in one pass,
    /// without keeping batch activations alive.
    pub fn loss_and_grads(&self, batch: &Tensor, targets: &Tensor) -> Result<(f64, Gradients), NnError> {
        let samples = self.split_batch(batch)?;
        let b = samples.len();
        if targets.shape != [b, self.n_classes] {
            return Err(NnError::ShapeMismatch(format!("targets {:?} for batch of {b}", targets.shape)));
        }
        let per_sample: Vec<(f64, Vec<Tensor>)> = samples
            .into_par_iter()
            .enumerate()
            .map(|(i, x)| -> Result<_, NnError> {
                let acts = self.forward_sample(x)?;
                let (loss, g) = sample_loss_grad(&acts[acts.len() - 1].data, &targets.index_first(i).data, i)?;
                let scaled = Tensor { shape: vec![self.n_classes], data: g.into_iter().map(|v| v / b as f64).collect() };
                Ok((loss, self.backward_sample(&acts, &scaled).0))
            })
            .collect::<Result<_, _>>()?;
        let mut total = self.zero_grads();
        let mut loss = 0.0;
        for (l, grads) in per_sample {
            loss += l;
            for (t, g) in total.tensors.iter_mut().zip(&grads) {
                t.add_assign(g);
            }
        }
        Ok((loss / b as f64, total))
    }

    /// Grad-CAM for one `[1, C, F, M]` input with respect to `class_index`.
    pub fn grad_cam(&mut self, input: &Tensor, class_index: usize) -> Result<CamMap, NnError> {
        if class_index >= self.n_classes {
            return Err(NnError::ShapeMismatch(format!("class {class_index} of {}", self.n_classes)));
        }
        if input.shape.first() != Some(&1) {
            return Err(NnError::ShapeMismatch(format!("grad_cam takes one sample, got {:?}", input.shape)));
        }
        self.forward(input)?;
        let mut upstream = Tensor::zeros(&[1, self.n_classes]);
        upstream.data[class_index] = 1.0;
        self.backward(&upstream)?;
        self.cached_cam(0)
    }

    /// Grad-CAM map from the activations and gradients cached by the last forward/backward.
    pub fn cached_cam(&self, sample: usize) -> Result<CamMap, NnError> {
        let acts = self.last_conv_activations.as_ref().ok_or(NnError::NoCache)?;
        let grads = self.last_conv_grads.as_ref().ok_or(NnError::NoCache)?;
        match (acts.get(sample), grads.get(sample)) {
            (Some(a), Some(g)) => super::gradcam::cam_from(a, g),
            _ => Err(NnError::NoCache),
        }
    }

    /// Loss on a batch using the standard (cached) path; handy for checks.
    pub fn loss(&mut self, batch: &Tensor, targets: &Tensor) -> Result<f64, NnError> {
        let logits = self.forward(batch)?;
        Ok(cross_entropy_soft(&logits, targets)?.0)
    }
}

fn spatial(shape: &[usize], i: usize, what: &str) -> Result<[usize; 3], NnError> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(NnError::ShapeComposeError(format!("layer {i}: {what} needs a [C,H,W] input, got {shape:?}"))),
    }
}
