use super::{DspError, FeatureConfig, Matrix};

/// Floor applied to mel energies before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filterbank for bins of a `win_length`-point DFT at the config's model rate.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Matrix, DspError> {
    mel_filterbank_at(cfg, cfg.model_rate)
}

/// Triangular HTK-mel filters evaluated at the DFT bin frequencies of
/// `sample_rate`, each scaled so its largest weight is exactly 1.
/// The upper edge is clamped to `sample_rate / 2`.
pub fn mel_filterbank_at(cfg: &FeatureConfig, sample_rate: u32) -> Result<Matrix, DspError> {
    let f_max = cfg.effective_f_max(sample_rate);
    if !(f_max > cfg.f_min) {
        return Err(DspError::DegenerateBand(format!(
            "upper edge {f_max} Hz is not above lower edge {} Hz",
            cfg.f_min
        )));
    }
    let n_bins = cfg.n_bins();
    let n_mels = cfg.n_mels;
    let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(f_max));
    let mut edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    // pin the band edges against mel round-trip error
    edges[0] = cfg.f_min;
    edges[n_mels + 1] = f_max;
    let bin_hz = sample_rate as f64 / cfg.win_length as f64;

    let mut fb = Matrix::zeros(n_bins, n_mels);
    for m in 0..n_mels {
        let (lower, centre, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        if !(centre > lower && upper > centre) {
            return Err(DspError::DegenerateBand(format!("filter {m} has zero width")));
        }
        let mut peak = 0.0f64;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lower && f <= centre {
                (f - lower) / (centre - lower)
            } else if f > centre && f < upper {
                (upper - f) / (upper - centre)
            } else {
                0.0
            };
            fb.set(k, m, w);
            peak = peak.max(w);
        }
        if peak <= 0.0 {
            return Err(DspError::DegenerateBand(format!(
                "filter {m} ({lower:.1}-{upper:.1} Hz) covers no DFT bin at {bin_hz:.2} Hz spacing"
            )));
        }
        for k in 0..n_bins {
            let v = fb.get(k, m);
            if v > 0.0 {
                fb.set(k, m, v / peak);
            }
        }
    }
    Ok(fb)
}

/// `10 * log10(max(power x filterbank, LOG_FLOOR))`.
pub fn log_mel(power: &Matrix, fb: &Matrix) -> Result<Matrix, DspError> {
    if power.cols != fb.rows {
        return Err(DspError::DimensionMismatch(format!(
            "power has {} bins, filterbank expects {}",
            power.cols, fb.rows
        )));
    }
    // non-zero bin range of each filter
    let spans: Vec<(usize, usize)> = (0..fb.cols)
        .map(|m| {
            let col = fb.column(m);
            let lo = col.iter().position(|&v| v != 0.0).unwrap_or(0);
            let hi = col.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1);
            (lo, hi)
        })
        .collect();
    let mut out = Matrix::zeros(power.rows, fb.cols);
    for f in 0..power.rows {
        let row = power.row(f);
        for (m, &(lo, hi)) in spans.iter().enumerate() {
            let e: f64 = (lo..hi).map(|k| row[k] * fb.get(k, m)).sum();
            out.set(f, m, 10.0 * e.max(LOG_FLOOR).log10());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_mels: usize, f_min: f64, f_max: f64) -> FeatureConfig {
        FeatureConfig { model_rate: 8000, win_length: 256, hop_length: 64, n_mels, f_min, f_max }
    }

    #[test]
    fn mel_formula_anchors() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn single_filter_peaks_mid_band() {
        let fb = mel_filterbank(&cfg(1, 0.0, 4000.0)).unwrap();
        assert_eq!((fb.rows, fb.cols), (129, 1));
        let col = fb.column(0);
        let peak_bin = col.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let mid_hz = mel_to_hz(hz_to_mel(4000.0) / 2.0);
        assert!((peak_bin as f64 * 8000.0 / 256.0 - mid_hz).abs() <= 8000.0 / 256.0);
        assert_eq!(col[peak_bin], 1.0);
    }

    #[test]
    fn filters_are_unimodal_peaked_and_in_band() {
        let c = FeatureConfig::default();
        let fb = mel_filterbank(&c).unwrap();
        let bin_hz = 32_000.0 / 1024.0;
        for m in 0..fb.cols {
            let col = fb.column(m);
            assert_eq!(col.iter().cloned().fold(f64::MIN, f64::max), 1.0);
            assert!(col.iter().all(|&v| v >= 0.0));
            let peak = col.iter().position(|&v| v == 1.0).unwrap();
            assert!(col[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(col[peak..].windows(2).all(|w| w[0] >= w[1]));
            for (k, &v) in col.iter().enumerate() {
                if v > 0.0 {
                    let f = k as f64 * bin_hz;
                    assert!(f >= c.f_min && f <= c.f_max, "filter {m} bin {k}");
                }
            }
        }
    }

    #[test]
    fn nyquist_clamp_at_lower_data_rate() {
        let c = FeatureConfig::default();
        let fb = mel_filterbank_at(&c, 16_000).unwrap();
        let last = fb.column(63);
        let top = last.iter().rposition(|&v| v > 0.0).unwrap();
        assert!(top as f64 * 16_000.0 / 1024.0 < 8_000.0);
    }

    #[test]
    fn degenerate_bands() {
        assert!(matches!(mel_filterbank(&cfg(64, 100.0, 110.0)), Err(DspError::DegenerateBand(_))));
        let c = FeatureConfig { f_min: 5000.0, ..FeatureConfig::default() };
        assert!(matches!(mel_filterbank_at(&c, 8000), Err(DspError::DegenerateBand(_))));
    }

    #[test]
    fn log_floor_and_decade_shift() {
        let fb = mel_filterbank(&cfg(4, 0.0, 4000.0)).unwrap();
        let zero = Matrix::zeros(3, fb.rows);
        let lm = log_mel(&zero, &fb).unwrap();
        assert!(lm.data.iter().all(|&v| v == -100.0));

        let p = Matrix::from_vec(1, fb.rows, (0..fb.rows).map(|k| 1.0 + k as f64).collect());
        let p10 = Matrix::from_vec(1, fb.rows, p.data.iter().map(|v| v * 10.0).collect());
        let a = log_mel(&p, &fb).unwrap();
        let b = log_mel(&p10, &fb).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((y - x - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let fb = mel_filterbank(&cfg(4, 0.0, 4000.0)).unwrap();
        assert!(matches!(log_mel(&Matrix::zeros(2, 10), &fb), Err(DspError::DimensionMismatch(_))));
    }
}
