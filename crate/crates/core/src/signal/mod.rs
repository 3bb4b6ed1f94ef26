//! Audio containers, corpus synthesis, the mel frontend, augmentation and the SI-SDR metric.

mod augment;
mod corpus;
mod mel;
mod metric;
mod synth;
mod wav;

pub use augment::{dynamic_mix, speed_perturb, MixSpec, TrainItem, SPEED_PERTURB_MAX};
pub use corpus::{
    read_manifest, synth_corpus, write_manifest, Corpus, CorpusSpec, ManifestRecord, Utterance,
};
pub use mel::{mel_spectrogram, LogMelFrames, MelConfig, MelFrontend};
pub use metric::{si_sdr, SiSdr, SI_SDR_EPS};
pub use synth::{speaker_profile, synth_speaker_utterance, SpeakerProfile};
pub use wav::{load_wav, load_wav_expecting, save_wav};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}
