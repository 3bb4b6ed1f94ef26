use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{power, Waveform};
use crate::error::{Error, Result};

/// Largest relative speed change accepted by [`speed_perturb`].
pub const SPEED_PERTURB_MAX: f64 = 0.05;

/// Mixtures are assembled on a 2^-20 grid so that `target + residual` is exact in f32.
const MIX_GRID: f32 = 1_048_576.0;
const MIX_LIMIT: f32 = 8.0;
const CROP_RETRIES: usize = 16;

/// Resamples by `factor` with linear interpolation; output length `round(L / factor)`.
pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(1.0 - SPEED_PERTURB_MAX - 1e-12..=1.0 + SPEED_PERTURB_MAX + 1e-12).contains(&factor) {
        return Err(Error::InvalidArgument(format!(
            "speed factor {factor} outside [{}, {}]",
            1.0 - SPEED_PERTURB_MAX,
            1.0 + SPEED_PERTURB_MAX
        )));
    }
    let x = w.samples();
    let out_len = ((x.len() as f64 / factor).round() as usize).max(1);
    let last = x.len() - 1;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            if frac == 0.0 || j == last {
                x[j]
            } else {
                (x[j] as f64 * (1.0 - frac) + x[j + 1] as f64 * frac) as f32
            }
        })
        .collect();
    Waveform::new(out, w.sample_rate())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// Target-to-interference power ratio in dB.
    pub snr_db: f64,
    pub segment_seconds: f64,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            snr_db: 0.0,
            segment_seconds: 3.0,
            seed: 0,
        }
    }
}

/// One training or evaluation example.
///
/// Labeled items carry both references; unlabeled items carry only the mixture
/// and the enrollment utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    mixture: Waveform,
    enrollment: Waveform,
    references: Option<(Waveform, Waveform)>,
}

impl TrainItem {
    pub fn labeled(
        mixture: Waveform,
        enrollment: Waveform,
        target: Waveform,
        residual: Waveform,
    ) -> Result<Self> {
        for r in [&target, &residual] {
            if r.len() != mixture.len() {
                return Err(Error::LengthMismatch(mixture.len(), r.len()));
            }
        }
        Ok(Self {
            mixture,
            enrollment,
            references: Some((target, residual)),
        })
    }

    pub fn unlabeled(mixture: Waveform, enrollment: Waveform) -> Self {
        Self {
            mixture,
            enrollment,
            references: None,
        }
    }

    pub fn mixture(&self) -> &Waveform {
        &self.mixture
    }

    pub fn enrollment(&self) -> &Waveform {
        &self.enrollment
    }

    pub fn target(&self) -> Option<&Waveform> {
        self.references.as_ref().map(|r| &r.0)
    }

    pub fn residual(&self) -> Option<&Waveform> {
        self.references.as_ref().map(|r| &r.1)
    }

    pub fn is_labeled(&self) -> bool {
        self.references.is_some()
    }

    /// Drops the reference signals.
    pub fn into_unlabeled(self) -> Self {
        Self {
            references: None,
            ..self
        }
    }
}

fn crop_or_pad(x: &[f32], seg: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    if x.len() <= seg {
        let left = (seg - x.len()) / 2;
        let mut out = vec![0.0; seg];
        out[left..left + x.len()].copy_from_slice(x);
        if power(&out) == 0.0 {
            return Err(Error::ZeroPowerSource(1));
        }
        return Ok(out);
    }
    for _ in 0..CROP_RETRIES {
        let start = rng.random_range(0..=x.len() - seg);
        let out = &x[start..start + seg];
        if power(out) > 0.0 {
            return Ok(out.to_vec());
        }
    }
    Err(Error::ZeroPowerSource(CROP_RETRIES))
}

fn to_grid(v: f64) -> Result<f32> {
    let q = ((v * MIX_GRID as f64).round() / MIX_GRID as f64) as f32;
    if q.abs() >= MIX_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "mixed sample {q} exceeds ±{MIX_LIMIT}"
        )));
    }
    Ok(q)
}

/// Crops (or centre-pads) a segment from each source, scales `interferer` to the
/// requested SNR and sums. The returned item is labeled; its residual is the
/// scaled interference and `mixture == target + residual` holds bit-for-bit.
pub fn dynamic_mix(
    target_src: &Waveform,
    interferer_src: &Waveform,
    enrollment: Waveform,
    spec: &MixSpec,
) -> Result<TrainItem> {
    let sr = target_src.sample_rate();
    if interferer_src.sample_rate() != sr {
        return Err(Error::SampleRateMismatch {
            expected: sr,
            found: interferer_src.sample_rate(),
        });
    }
    let seg = (spec.segment_seconds * sr as f64).round() as usize;
    if seg == 0 {
        return Err(Error::InvalidArgument("segment length is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target_raw = crop_or_pad(target_src.samples(), seg, &mut rng)?;
    let interf_raw = crop_or_pad(interferer_src.samples(), seg, &mut rng)?;

    let target: Vec<f32> = target_raw
        .iter()
        .map(|&v| to_grid(v as f64))
        .collect::<Result<_>>()?;
    let p_target = power(&target);
    let p_interf = power(&interf_raw);
    if p_target == 0.0 {
        return Err(Error::ZeroPowerSource(1));
    }
    let gain = (p_target / (p_interf * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let residual: Vec<f32> = interf_raw
        .iter()
        .map(|&v| to_grid(v as f64 * gain))
        .collect::<Result<_>>()?;
    let mixture: Vec<f32> = target.iter().zip(&residual).map(|(a, b)| a + b).collect();
    TrainItem::labeled(
        Waveform::new(mixture, sr)?,
        enrollment,
        Waveform::new(target, sr)?,
        Waveform::new(residual, sr)?,
    )
}
