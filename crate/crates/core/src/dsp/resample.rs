//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use super::DspError;
use crate::wavio::Waveform;

pub const KAISER_BETA: f64 = 8.555;
/// Zero crossings of the sinc kernel on each side of its centre.
pub const ZERO_CROSSINGS: usize = 64;

// Above this many phases the kernel is evaluated on the fly instead of tabulated.
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn resampled_len(len: usize, from: u32, to: u32) -> usize {
    ((len as u128 * to as u128 + from as u128 / 2) / from as u128) as usize
}

/// Resampler for a fixed rate pair.
#[derive(Debug, Clone)]
pub struct Resampler {
    from: u32,
    to: u32,
    up: u64,
    down: u64,
    cutoff: f64,
    half_taps: usize,
    i0_beta: f64,
    table: Option<Vec<f64>>,
}

impl Resampler {
    pub fn new(from: u32, to: u32) -> Result<Self, DspError> {
        if from == 0 || to == 0 {
            return Err(DspError::InvalidRate(format!("cannot resample {from} Hz -> {to} Hz")));
        }
        let g = gcd(from as u64, to as u64);
        let up = to as u64 / g;
        let down = from as u64 / g;
        // anti-alias: cut at the lower of the two Nyquist frequencies
        let cutoff = (to as f64 / from as f64).min(1.0);
        let half_taps = (ZERO_CROSSINGS as f64 / cutoff).ceil() as usize;
        let mut r = Self { from, to, up, down, cutoff, half_taps, i0_beta: bessel_i0(KAISER_BETA), table: None };
        if (up as usize) <= MAX_TABLE_PHASES {
            let mut table = Vec::with_capacity(up as usize * 2 * half_taps);
            for phase in 0..up {
                table.extend(r.phase_weights(phase));
            }
            r.table = Some(table);
        }
        Ok(r)
    }

    fn kernel(&self, x: f64) -> f64 {
        let half_width = ZERO_CROSSINGS as f64 / self.cutoff;
        let u = x / half_width;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * x) * window
    }

    /// Weights for taps `base - half_taps + 1 ..= base + half_taps`, normalised to unit DC gain.
    fn phase_weights(&self, phase: u64) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let k = self.half_taps as f64;
        let mut w: Vec<f64> = (0..2 * self.half_taps).map(|j| self.kernel(frac + k - 1.0 - j as f64)).collect();
        let sum: f64 = w.iter().sum();
        if sum.abs() > 1e-12 {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        w
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.from == self.to {
            return input.to_vec();
        }
        let out_len = resampled_len(input.len(), self.from, self.to);
        let taps = 2 * self.half_taps;
        let mut out = Vec::with_capacity(out_len);
        let mut scratch;
        for n in 0..out_len as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let weights: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * taps..(phase as usize + 1) * taps],
                None => {
                    scratch = self.phase_weights(phase);
                    &scratch
                }
            };
            let first = base - self.half_taps as i64 + 1;
            let lo = (-first).max(0) as usize;
            let hi = ((input.len() as i64 - first).min(taps as i64)).max(0) as usize;
            let mut acc = 0.0f64;
            for j in lo..hi {
                acc += weights[j] * input[(first + j as i64) as usize] as f64;
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Resample a waveform; equal rates return an exact copy.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, DspError> {
    if target_rate == 0 {
        return Err(DspError::InvalidRate("target rate must be positive".into()));
    }
    if target_rate == w.rate {
        return Ok(w.clone());
    }
    let r = Resampler::new(w.rate, target_rate)?;
    Ok(Waveform { samples: r.process(&w.samples), rate: target_rate, source_id: w.source_id.clone() })
}
