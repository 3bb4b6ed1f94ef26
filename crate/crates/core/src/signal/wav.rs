use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32768.0;

/// Reads a 16-bit PCM mono WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Like [`load_wav`] but rejects files whose rate differs from `expected` instead of resampling.
pub fn load_wav_expecting(path: impl AsRef<Path>, expected: u32) -> Result<Waveform> {
    let w = load_wav(path)?;
    if w.sample_rate() != expected {
        return Err(Error::SampleRateMismatch {
            expected,
            found: w.sample_rate(),
        });
    }
    Ok(w)
}

pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        let q = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let samples: Vec<f32> = (0..24000)
            .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 8000.0).sin())
            .collect();
        let w = Waveform::new(samples, 8000).unwrap();
        save_wav(&path, &w).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 24000);
        assert_eq!(back.sample_rate(), 8000);
        let max_err = w
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 32768.0, "max error {max_err}");
    }

    #[test]
    fn zeros_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        save_wav(&path, &Waveform::zeros(8000, 8000).unwrap()).unwrap();
        let back = load_wav(&path).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
        assert_eq!(back.len(), 8000);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_wav("/nonexistent/definitely/missing.wav").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(
            load_wav(&path).unwrap_err(),
            Error::UnsupportedFormat { .. }
        ));
    }

    #[test]
    fn rate_mismatch_is_reported_not_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        save_wav(&path, &Waveform::zeros(160, 16000).unwrap()).unwrap();
        assert!(matches!(
            load_wav_expecting(&path, 8000).unwrap_err(),
            Error::SampleRateMismatch {
                expected: 8000,
                found: 16000
            }
        ));
    }
}
