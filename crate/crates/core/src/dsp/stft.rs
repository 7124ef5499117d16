use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_count, DspError, FeatureConfig, Matrix, Segment};

/// Symmetric Hann window, `0.5 * (1 - cos(2 pi n / (N - 1)))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / denom).cos()))
        .collect()
}

/// Centred power STFT with reflect padding of `win / 2` on both sides.
pub struct Stft {
    win_length: usize,
    hop_length: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(win_length: usize, hop_length: usize) -> Result<Self, DspError> {
        if win_length < 2 || win_length % 2 != 0 {
            return Err(DspError::ConfigMismatch(format!("window length {win_length} must be even and >= 2")));
        }
        if hop_length == 0 {
            return Err(DspError::ConfigMismatch("hop length must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(win_length);
        Ok(Self { win_length, hop_length, window: hann_window(win_length), fft })
    }

    pub fn n_bins(&self) -> usize {
        self.win_length / 2 + 1
    }

    /// Power spectrogram, `frame_count(len, hop)` rows by `win / 2 + 1` columns.
    pub fn power(&self, samples: &[f32]) -> Result<Matrix, DspError> {
        let pad = self.win_length / 2;
        let n = samples.len();
        if n <= pad {
            return Err(DspError::ConfigMismatch(format!(
                "{n} samples cannot be reflect-padded by {pad} for window {}",
                self.win_length
            )));
        }
        let padded: Vec<f64> = (0..n + 2 * pad)
            .map(|i| {
                let idx = i as isize - pad as isize;
                let r = if idx < 0 {
                    -idx
                } else if idx >= n as isize {
                    2 * (n as isize - 1) - idx
                } else {
                    idx
                };
                samples[r as usize] as f64
            })
            .collect();

        let frames = frame_count(n, self.hop_length);
        let bins = self.n_bins();
        let mut out = Matrix::zeros(frames, bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.win_length];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.hop_length;
            for (b, (&x, &w)) in buf.iter_mut().zip(padded[start..start + self.win_length].iter().zip(&self.window)) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let row = &mut out.data[f * bins..(f + 1) * bins];
            for (dst, c) in row.iter_mut().zip(&buf) {
                *dst = c.norm_sqr();
            }
        }
        Ok(out)
    }
}

pub fn stft_power(seg: &Segment, cfg: &FeatureConfig) -> Result<Matrix, DspError> {
    Stft::new(cfg.win_length, cfg.hop_length)?.power(&seg.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn seg(samples: Vec<f32>) -> Segment {
        Segment { samples, rate: 8000, recording_id: "t".into(), index: 0 }
    }

    fn cfg(win: usize, hop: usize) -> FeatureConfig {
        FeatureConfig { model_rate: 8000, win_length: win, hop_length: hop, n_mels: 8, f_min: 0.0, f_max: 4000.0 }
    }

    #[test]
    fn zeros_in_zeros_out() {
        let p = stft_power(&seg(vec![0.0; 1000]), &cfg(64, 16)).unwrap();
        assert_eq!((p.rows, p.cols), (frame_count(1000, 16), 33));
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_shape() {
        let w = hann_window(5);
        let expect = [0.0, 0.5, 1.0, 0.5, 0.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn on_bin_tone_concentrates_in_main_lobe() {
        let (win, k) = (256usize, 20usize);
        let x: Vec<f32> = (0..4096).map(|n| (2.0 * PI * k as f64 * n as f64 / win as f64).sin() as f32).collect();
        let p = stft_power(&seg(x), &cfg(win, 64)).unwrap();
        for f in 8..p.rows - 8 {
            let row = p.row(f);
            let total: f64 = row.iter().sum();
            let lobe = row[k - 1] + row[k] + row[k + 1];
            assert!(lobe / total >= 0.99, "frame {f}: {}", lobe / total);
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, row[k]);
        }
    }

    #[test]
    fn scales_quadratically() {
        let x: Vec<f32> = (0..500).map(|i| ((i * 7919) % 113) as f32 / 113.0 - 0.5).collect();
        let a = 2.0f32;
        let p1 = stft_power(&seg(x.clone()), &cfg(32, 8)).unwrap();
        let p2 = stft_power(&seg(x.iter().map(|v| v * a).collect()), &cfg(32, 8)).unwrap();
        for (u, v) in p1.data.iter().zip(&p2.data) {
            assert!((v - 4.0 * u).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn parseval_on_interior_frames() {
        let win = 64;
        let x: Vec<f32> = (0..600).map(|i| ((i * 104_729) % 997) as f32 / 997.0 - 0.5).collect();
        let p = stft_power(&seg(x.clone()), &cfg(win, 16)).unwrap();
        let w = hann_window(win);
        for f in 2..p.rows - 2 {
            let start = f * 16 - win / 2;
            let energy: f64 = (0..win).map(|n| (x[start + n] as f64 * w[n]).powi(2)).sum();
            let row = p.row(f);
            let one_sided: f64 = row[0] + row[win / 2] + 2.0 * row[1..win / 2].iter().sum::<f64>();
            assert!((one_sided / win as f64 - energy).abs() <= 1e-6 * energy);
        }
    }

    #[test]
    fn too_short_or_odd() {
        assert!(matches!(stft_power(&seg(vec![0.0; 32]), &cfg(64, 16)), Err(DspError::ConfigMismatch(_))));
        assert!(matches!(Stft::new(63, 16), Err(DspError::ConfigMismatch(_))));
    }
}
