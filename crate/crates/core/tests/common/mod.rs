#![allow(dead_code)]

pub mod gradcheck;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sonarprep::wavio::{write_wav_pcm16, Waveform};

pub const CLASSES: [&str; 4] = ["cargo", "passenger", "tanker", "tug"];

/// Per-class signature: noise std, harmonic fundamental and count, and the
/// rate of on/off gating applied to the noise (0 for none).
struct Signature {
    noise: f64,
    f0: f64,
    harmonics: usize,
    gate_hz: f64,
}

const SIGNATURES: [Signature; 4] = [
    Signature { noise: 0.2, f0: 0.0, harmonics: 0, gate_hz: 0.0 },
    Signature { noise: 0.002, f0: 110.0, harmonics: 30, gate_hz: 0.0 },
    Signature { noise: 0.1, f0: 0.0, harmonics: 0, gate_hz: 1.5 },
    Signature { noise: 0.002, f0: 0.0, harmonics: 0, gate_hz: 0.0 },
];

/// One synthetic recording: harmonic tones over white noise with optional gating.
pub fn synth_recording(class: usize, seconds: f64, rate: u32, seed: u64) -> Vec<f32> {
    use std::f64::consts::TAU;
    let sig = &SIGNATURES[class];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate as f64).round() as usize;
    let nyquist = rate as f64 / 2.0;
    let f0 = sig.f0 * rng.random_range(0.97..1.03);
    let amp = rng.random_range(0.01..0.02);
    let noise = Normal::new(0.0, sig.noise * rng.random_range(0.8..1.25)).unwrap();
    let partials: Vec<(f64, f64)> = (1..=sig.harmonics)
        .map(|h| (f0 * h as f64, rng.random_range(0.0..TAU)))
        .filter(|&(f, _)| f < nyquist * 0.95)
        .collect();
    let gate_hz = sig.gate_hz * rng.random_range(0.9..1.1);
    let gate_phase = rng.random_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let tone: f64 = partials.iter().map(|&(f, ph)| amp * (TAU * f * t + ph).sin()).sum();
            let gate = if gate_hz > 0.0 && (gate_hz * t + gate_phase).fract() >= 0.5 { 0.02 } else { 1.0 };
            (tone + gate * noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Write `per_class` recordings per class under `root/<class>/`.
pub fn write_corpus(root: &Path, per_class: usize, seconds: f64, rate: u32) {
    for (c, name) in CLASSES.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for r in 0..per_class {
            let id = format!("{name}_{r:02}");
            let samples = synth_recording(c, seconds, rate, (c * 1000 + r) as u64);
            let w = Waveform::new(samples, rate, id.clone()).unwrap();
            std::fs::write(dir.join(format!("{id}.wav")), write_wav_pcm16(&w)).unwrap();
        }
    }
}

/// Run the CLI in-process, panicking on a non-zero exit code.
pub fn cli(args: &[&str]) {
    let mut full = vec!["sonarprep"];
    full.extend_from_slice(args);
    let code = sonarprep::cli::run(full);
    assert_eq!(code, 0, "sonarprep {}", args.join(" "));
}
