//! Weight checkpoints and adaptation of three-channel first-layer kernels.
//!
//! Checkpoint layout, little-endian:
//!
//! ```text
//! magic "SPNN1" | u32 n_tensors | per tensor: u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data
//! ```

use super::{Model, NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SPNN1";

/// Sum `[out, 3, k, k]` kernels over the input-channel axis into `[out, 1, k, k]`.
pub fn aggregate_input_channels(weights3: &Tensor) -> Result<Tensor, NnError> {
    let (out, k1, k2) = match weights3.shape[..] {
        [o, 3, a, b] => (o, a, b),
        [_, c, _, _] => return Err(NnError::WrongChannelCount(c)),
        _ => return Err(NnError::ShapeMismatch(format!("expected [out, 3, k, k], got {:?}", weights3.shape))),
    };
    let plane = k1 * k2;
    let mut data = vec![0.0; out * plane];
    for o in 0..out {
        for c in 0..3 {
            let src = &weights3.data[(o * 3 + c) * plane..(o * 3 + c + 1) * plane];
            for (d, s) in data[o * plane..(o + 1) * plane].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Tensor::new(vec![out, 1, k1, k2], data)
}

pub fn write_checkpoint(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NnError> {
    if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut pos = 5;
    let mut take = |n: usize| -> Result<&[u8], NnError> {
        let end = pos + n;
        if end > bytes.len() {
            return Err(NnError::Checkpoint(format!("truncated at byte {pos}")));
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let u32_of = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let n = u32_of(take(4)?);
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = u32_of(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let rank = u32_of(take(4)?);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_of(take(4)?));
        }
        let count: usize = shape.iter().product();
        let raw = take(count * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

pub fn save_model(model: &Model) -> Vec<u8> {
    let named: Vec<(String, Tensor)> =
        model.param_names().iter().cloned().zip(model.params().iter().cloned()).collect();
    write_checkpoint(&named)
}

/// Load named tensors into `model`. A three-channel first conv kernel is summed
/// down to one channel when the model takes single-channel input.
pub fn load_into(model: &mut Model, tensors: Vec<(String, Tensor)>) -> Result<(), NnError> {
    let first_conv = model.first_conv_weight().map(str::to_string);
    for (name, t) in tensors {
        let expected = model.param(&name).ok_or_else(|| NnError::UnknownParameter(name.clone()))?;
        let t = if Some(&name) == first_conv.as_ref()
            && expected.shape.get(1) == Some(&1)
            && t.shape.get(1) == Some(&3)
        {
            aggregate_input_channels(&t)?
        } else {
            t
        };
        model.set_param(&name, t)?;
    }
    Ok(())
}
