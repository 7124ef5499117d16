//! Per-sample layer kernels. Activations are `[channels, height, width]`
//! until global pooling, vectors after it.

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel: usize, padding: usize },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense { out_features: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv { in_c: usize, out_c: usize, k: usize, pad: usize, weight: usize, bias: usize },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense { in_f: usize, out_f: usize, weight: usize, bias: usize },
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize), NnError> {
    match t.shape[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(NnError::ShapeMismatch(format!("{what} expects [C,H,W], got {:?}", t.shape))),
    }
}

pub(crate) fn forward(layer: &Layer, params: &[Tensor], x: &Tensor) -> Result<Tensor, NnError> {
    match *layer {
        Layer::Conv { in_c, out_c, k, pad, weight, bias } => {
            let (c, h, w) = chw(x, "conv")?;
            if c != in_c {
                return Err(NnError::ShapeMismatch(format!("conv expects {in_c} channels, got {c}")));
            }
            if h + 2 * pad < k || w + 2 * pad < k {
                return Err(NnError::ShapeMismatch(format!("conv kernel {k} exceeds padded input {h}x{w}")));
            }
            let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
            let wt = &params[weight].data;
            let b = &params[bias].data;
            let mut out = vec![0.0; out_c * oh * ow];
            for o in 0..out_c {
                let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                plane.fill(b[o]);
                for ci in 0..in_c {
                    let src = &x.data[ci * h * w..(ci + 1) * h * w];
                    for i in 0..k {
                        for j in 0..k {
                            let wv = wt[((o * in_c + ci) * k + i) * k + j];
                            if wv == 0.0 {
                                continue;
                            }
                            // output x range whose input column x + j - pad is in bounds
                            let x_lo = pad.saturating_sub(j);
                            let x_hi = (w + pad).saturating_sub(j).min(ow);
                            if x_lo >= x_hi {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = y + i;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let row_in = &src[(iy - pad) * w..(iy - pad + 1) * w];
                                let row_out = &mut plane[y * ow..(y + 1) * ow];
                                let off = x_lo + j - pad;
                                for (dst, &s) in row_out[x_lo..x_hi].iter_mut().zip(&row_in[off..off + x_hi - x_lo]) {
                                    *dst += wv * s;
                                }
                            }
                        }
                    }
                }
            }
            Ok(Tensor { shape: vec![out_c, oh, ow], data: out })
        }
        Layer::Relu => Ok(Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| v.max(0.0)).collect() }),
        Layer::MaxPool2 => {
            let (c, h, w) = chw(x, "maxpool")?;
            let (oh, ow) = (h / 2, w / 2);
            if oh == 0 || ow == 0 {
                return Err(NnError::ShapeMismatch(format!("maxpool needs at least 2x2, got {h}x{w}")));
            }
            let mut out = Vec::with_capacity(c * oh * ow);
            for ci in 0..c {
                let src = &x.data[ci * h * w..];
                for y in 0..oh {
                    for xx in 0..ow {
                        let (a, b) = (src[2 * y * w + 2 * xx], src[2 * y * w + 2 * xx + 1]);
                        let (d, e) = (src[(2 * y + 1) * w + 2 * xx], src[(2 * y + 1) * w + 2 * xx + 1]);
                        out.push(a.max(b).max(d).max(e));
                    }
                }
            }
            Ok(Tensor { shape: vec![c, oh, ow], data: out })
        }
        Layer::GlobalAvgPool => {
            let (c, h, w) = chw(x, "global pool")?;
            let n = (h * w) as f64;
            let data = (0..c).map(|ci| x.data[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / n).collect();
            Ok(Tensor { shape: vec![c], data })
        }
        Layer::Dense { in_f, out_f, weight, bias } => {
            if x.numel() != in_f {
                return Err(NnError::ShapeMismatch(format!("dense expects {in_f} inputs, got {}", x.numel())));
            }
            let wt = &params[weight].data;
            let mut out = params[bias].data.clone();
            for (i, &xi) in x.data.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (o, dst) in out.iter_mut().enumerate() {
                    *dst += xi * wt[i * out_f + o];
                }
            }
            Ok(Tensor { shape: vec![out_f], data: out })
        }
    }
}

/// Accumulate parameter gradients into `grads` and return the input gradient.
pub(crate) fn backward(
    layer: &Layer,
    params: &[Tensor],
    x: &Tensor,
    y: &Tensor,
    gy: &Tensor,
    grads: &mut [Tensor],
    need_input_grad: bool,
) -> Tensor {
    match *layer {
        Layer::Conv { in_c, out_c, k, pad, weight, bias } => {
            let (_, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let (oh, ow) = (y.shape[1], y.shape[2]);
            let wt = &params[weight].data;
            let mut gx = if need_input_grad { vec![0.0; x.numel()] } else { Vec::new() };
            for o in 0..out_c {
                let g_plane = &gy.data[o * oh * ow..(o + 1) * oh * ow];
                grads[bias].data[o] += g_plane.iter().sum::<f64>();
                for ci in 0..in_c {
                    let src = &x.data[ci * h * w..(ci + 1) * h * w];
                    for i in 0..k {
                        for j in 0..k {
                            let widx = ((o * in_c + ci) * k + i) * k + j;
                            let wv = wt[widx];
                            let x_lo = pad.saturating_sub(j);
                            let x_hi = (w + pad).saturating_sub(j).min(ow);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let off = x_lo + j - pad;
                            let len = x_hi - x_lo;
                            let mut gw = 0.0;
                            for yy in 0..oh {
                                let iy = yy + i;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let row_in = (iy - pad) * w + off;
                                let g_row = &g_plane[yy * ow + x_lo..yy * ow + x_hi];
                                gw += g_row.iter().zip(&src[row_in..row_in + len]).map(|(a, b)| a * b).sum::<f64>();
                                if need_input_grad && wv != 0.0 {
                                    let dst = &mut gx[ci * h * w + row_in..ci * h * w + row_in + len];
                                    for (d, &g) in dst.iter_mut().zip(g_row) {
                                        *d += wv * g;
                                    }
                                }
                            }
                            grads[weight].data[widx] += gw;
                        }
                    }
                }
            }
            Tensor { shape: x.shape.clone(), data: gx }
        }
        Layer::Relu => Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&gy.data).map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 }).collect(),
        },
        Layer::MaxPool2 => {
            let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let mut gx = vec![0.0; x.numel()];
            for ci in 0..c {
                let base = ci * h * w;
                for yy in 0..oh {
                    for xx in 0..ow {
                        let cands = [
                            base + 2 * yy * w + 2 * xx,
                            base + 2 * yy * w + 2 * xx + 1,
                            base + (2 * yy + 1) * w + 2 * xx,
                            base + (2 * yy + 1) * w + 2 * xx + 1,
                        ];
                        // first maximal position receives the gradient
                        let mut best = cands[0];
                        for &p in &cands[1..] {
                            if x.data[p] > x.data[best] {
                                best = p;
                            }
                        }
                        gx[best] += gy.data[(ci * oh + yy) * ow + xx];
                    }
                }
            }
            Tensor { shape: x.shape.clone(), data: gx }
        }
        Layer::GlobalAvgPool => {
            let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let n = (h * w) as f64;
            let mut gx = Vec::with_capacity(x.numel());
            for ci in 0..c {
                gx.extend(std::iter::repeat_n(gy.data[ci] / n, h * w));
            }
            Tensor { shape: x.shape.clone(), data: gx }
        }
        Layer::Dense { in_f, out_f, weight, bias } => {
            for (db, &g) in grads[bias].data.iter_mut().zip(&gy.data) {
                *db += g;
            }
            for i in 0..in_f {
                let xi = x.data[i];
                if xi != 0.0 {
                    let row = &mut grads[weight].data[i * out_f..(i + 1) * out_f];
                    for (d, &g) in row.iter_mut().zip(&gy.data) {
                        *d += xi * g;
                    }
                }
            }
            let data = if need_input_grad {
                let wt = &params[weight].data;
                (0..in_f).map(|i| wt[i * out_f..(i + 1) * out_f].iter().zip(&gy.data).map(|(a, b)| a * b).sum()).collect()
            } else {
                Vec::new()
            };
            Tensor { shape: x.shape.clone(), data }
        }
    }
}
