use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Analysis window in samples (25 ms at 8 kHz).
    pub win_length: usize,
    /// Frame shift in samples (10 ms at 8 kHz).
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    /// Added to mel energies before the logarithm.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            win_length: 200,
            hop_length: 80,
            n_fft: 256,
            n_mels: 40,
            log_floor: 1e-6,
        }
    }
}

impl MelConfig {
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        if len < self.win_length {
            return Err(Error::TooShort {
                needed: self.win_length,
                got: len,
            });
        }
        Ok(1 + (len - self.win_length) / self.hop_length)
    }
}

/// Log-mel energies, `n_frames x n_mels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelFrames {
    frames: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
}

impl LogMelFrames {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.n_mels..(i + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Differentiable log-mel frontend: framing, Hann window, DFT power and a
/// triangular mel filterbank, all expressed as graph operations.
#[derive(Clone, Debug)]
pub struct MelFrontend<T: Scalar> {
    cfg: MelConfig,
    window: Tensor<T>,
    /// `[win, 2 * bins]`: cosine columns then negated sine columns.
    dft: Tensor<T>,
    /// `[2 * bins, n_mels]`: the filterbank stacked twice so `[re^2, im^2] @ fb` is the mel power.
    filterbank: Tensor<T>,
}

impl<T: Scalar> MelFrontend<T> {
    pub fn new(cfg: MelConfig) -> Self {
        let win = cfg.win_length;
        let bins = cfg.n_fft / 2 + 1;
        let window = Tensor::from_fn(&[win], |n| {
            lit(0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
        });
        let mut dft = Tensor::zeros(&[win, 2 * bins]);
        for n in 0..win {
            for k in 0..bins {
                let ang = 2.0 * PI * (k * n) as f64 / cfg.n_fft as f64;
                dft.data_mut()[n * 2 * bins + k] = lit(ang.cos());
                dft.data_mut()[n * 2 * bins + bins + k] = lit(-ang.sin());
            }
        }
        let sr = cfg.sample_rate as f64;
        let mel_max = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filterbank = Tensor::zeros(&[2 * bins, cfg.n_mels]);
        for k in 0..bins {
            let f = k as f64 * sr / cfg.n_fft as f64;
            for m in 0..cfg.n_mels {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                filterbank.data_mut()[k * cfg.n_mels + m] = lit(w);
                filterbank.data_mut()[(bins + k) * cfg.n_mels + m] = lit(w);
            }
        }
        Self {
            cfg,
            window,
            dft,
            filterbank,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// `x: [B, L]` -> `[B, n_frames, n_mels]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "mel input must be [B, L], got {shape:?}"
            )));
        }
        let (b, len) = (shape[0], shape[1]);
        let n_frames = self.cfg.n_frames(len)?;
        let win = self.cfg.win_length;
        let mut index = Vec::with_capacity(b * n_frames * win);
        for bi in 0..b {
            for f in 0..n_frames {
                let start = bi * len + f * self.cfg.hop_length;
                index.extend((start..start + win).map(|i| i as u32));
            }
        }
        let frames = g.gather(x, Rc::from(index), &[b, n_frames, win]);
        let window = g.constant(self.window.clone());
        let windowed = g.mul_bcast(frames, window);
        let dft = g.constant(self.dft.clone());
        let spec = g.matmul(windowed, dft, false, false);
        let power = g.square(spec);
        let fb = g.constant(self.filterbank.clone());
        let mel = g.matmul(power, fb, false, false);
        let floored = g.add_scalar(mel, lit(self.cfg.log_floor));
        Ok(g.ln(floored))
    }
}

/// Log-mel spectrogram with the default 40-band, 25 ms / 10 ms configuration.
pub fn mel_spectrogram(w: &Waveform) -> Result<LogMelFrames> {
    let cfg = MelConfig {
        sample_rate: w.sample_rate(),
        ..MelConfig::default()
    };
    let frontend = MelFrontend::<f32>::new(cfg);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, w.len()], w.samples().to_vec()));
    let out = frontend.forward(&mut g, x)?;
    let shape = g.shape(out).to_vec();
    Ok(LogMelFrames {
        frames: g.value(out).data().to_vec(),
        n_frames: shape[1],
        n_mels: shape[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_seconds_gives_298_frames() {
        let w = Waveform::zeros(24000, 8000).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        assert_eq!((m.n_frames(), m.n_mels()), (298, 40));
    }

    #[test]
    fn single_window() {
        let w = Waveform::new(vec![0.1; 200], 8000).unwrap();
        assert_eq!(mel_spectrogram(&w).unwrap().n_frames(), 1);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let m = mel_spectrogram(&Waveform::zeros(1000, 8000).unwrap()).unwrap();
        let floor = (1e-6f32).ln();
        assert!(m.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_an_error() {
        let w = Waveform::zeros(199, 8000).unwrap();
        assert!(matches!(
            mel_spectrogram(&w),
            Err(Error::TooShort {
                needed: 200,
                got: 199
            })
        ));
    }

    #[test]
    fn tone_energy_lands_in_matching_band() {
        let samples: Vec<f32> = (0..800)
            .map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 8000.0).sin())
            .collect();
        let m = mel_spectrogram(&Waveform::new(samples, 8000).unwrap()).unwrap();
        let frame = m.frame(3);
        let argmax = (0..40)
            .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
            .unwrap();
        let centre = mel_to_hz(hz_to_mel(4000.0) * (argmax + 1) as f64 / 41.0);
        assert!((centre - 1000.0).abs() < 120.0, "peak band centre {centre}");
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 200usize..3000) {
            let m = mel_spectrogram(&Waveform::zeros(len, 8000).unwrap()).unwrap();
            prop_assert_eq!(m.n_frames(), 1 + (len - 200) / 80);
        }
    }
}
