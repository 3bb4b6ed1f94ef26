//! Synthetic "speakers": harmonic stacks shaped by a speaker-specific formant
//! envelope, plus formant-filtered breath noise and a syllable-like amplitude
//! envelope. Speaker identity lives in the pitch range and formant layout;
//! utterance seeds only vary prosody, timing and noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

const PEAK: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    /// (centre Hz, bandwidth Hz, gain)
    pub formants: [(f64, f64, f64); 3],
    pub spectral_tilt: f64,
    pub breathiness: f64,
    pub vibrato_hz: f64,
    pub vibrato_depth: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn speaker_profile(speaker_id: u64) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(speaker_id ^ 0x5EED_5EED));
    let f0_hz = (85f64.ln() + rng.random::<f64>() * (255f64.ln() - 85f64.ln())).exp();
    let formants = [
        (
            rng.random_range(300.0..900.0),
            rng.random_range(60.0..160.0),
            1.0,
        ),
        (
            rng.random_range(950.0..2200.0),
            rng.random_range(80.0..200.0),
            rng.random_range(0.4..0.9),
        ),
        (
            rng.random_range(2300.0..3500.0),
            rng.random_range(100.0..260.0),
            rng.random_range(0.15..0.5),
        ),
    ];
    SpeakerProfile {
        f0_hz,
        formants,
        spectral_tilt: rng.random_range(0.6..1.4),
        breathiness: rng.random_range(0.02..0.12),
        vibrato_hz: rng.random_range(4.0..7.0),
        vibrato_depth: rng.random_range(0.005..0.02),
    }
}

impl SpeakerProfile {
    fn envelope(&self, f: f64) -> f64 {
        let resonances: f64 = self
            .formants
            .iter()
            .map(|&(c, bw, g)| g * (-0.5 * ((f - c) / bw).powi(2)).exp())
            .sum();
        let tilt = (1.0 + f / 500.0).powf(-self.spectral_tilt);
        (0.05 + resonances) * tilt
    }
}

/// Two-pole resonator used to colour the breath noise.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(centre: f64, bandwidth: f64, sr: f64) -> Self {
        let r = (-PI * bandwidth / sr).exp();
        let theta = 2.0 * PI * centre / sr;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Syllable-like gain curve: raised-cosine bursts separated by short pauses.
fn syllable_envelope(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let mut pos = (rng.random_range(0.0..0.08) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.32) * sr) as usize;
        let level = rng.random_range(0.55..1.0);
        for i in 0..len.min(n - pos) {
            let phase = i as f64 / len as f64;
            env[pos + i] = level * (0.5 - 0.5 * (2.0 * PI * phase).cos()).sqrt();
        }
        pos += len + (rng.random_range(0.02..0.09) * sr) as usize;
    }
    env
}

/// Deterministic utterance of `duration_s` seconds at 8 kHz for a synthetic speaker.
pub fn synth_speaker_utterance(speaker_id: u64, duration_s: f64, seed: u64) -> Result<Waveform> {
    if !duration_s.is_finite() || duration_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let n = ((duration_s * sr).round() as usize).max(1);
    let profile = speaker_profile(speaker_id);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(splitmix(speaker_id) ^ seed));

    let drift_hz = [rng.random_range(0.3..1.2), rng.random_range(1.5..3.0)];
    let drift_phase = [
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    ];
    let drift_depth = [rng.random_range(0.03..0.08), rng.random_range(0.01..0.03)];
    let register = rng.random_range(0.93..1.07);
    let env = syllable_envelope(&mut rng, n, sr);
    let mut res = [
        Resonator::new(profile.formants[0].0, profile.formants[0].1, sr),
        Resonator::new(profile.formants[1].0, profile.formants[1].1, sr),
    ];

    let max_harmonics = 40;
    let mut phases: Vec<f64> = (0..max_harmonics)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let inton = 1.0
            + drift_depth[0] * (2.0 * PI * drift_hz[0] * t + drift_phase[0]).sin()
            + drift_depth[1] * (2.0 * PI * drift_hz[1] * t + drift_phase[1]).sin()
            + profile.vibrato_depth * (2.0 * PI * profile.vibrato_hz * t).sin();
        let f0 = profile.f0_hz * register * inton;
        let mut voiced = 0.0;
        for (k, ph) in phases.iter_mut().enumerate() {
            let fk = f0 * (k + 1) as f64;
            if fk >= 0.47 * sr {
                break;
            }
            *ph += 2.0 * PI * fk / sr;
            voiced += profile.envelope(fk) * ph.sin();
        }
        let white: f64 = StandardNormal.sample(&mut rng);
        let breath = res[0].step(white) + 0.6 * res[1].step(white);
        *o = env[i] * (voiced + profile.breathiness * 8.0 * breath);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    Waveform::new(
        out.iter().map(|&v| (v * gain) as f32).collect(),
        DEFAULT_SAMPLE_RATE,
    )
}
