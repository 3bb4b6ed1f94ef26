use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stabilizer for the projection and distortion denominators.
pub const SI_SDR_EPS: f64 = 1e-8;

/// Scale-invariant signal-to-distortion ratio.
///
/// With `alpha = <est, ref> / max(|ref|^2, eps)` and `e = alpha ref - est`,
/// `SI-SDR = 10 log10(max(|alpha ref|^2 / max(|e|^2, eps), eps))`.
/// The floors only engage at (near-)perfect or (near-)silent estimates, so the
/// value is the exact projection ratio everywhere else. A perfect estimate of a
/// unit-power reference scores at least 80 dB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiSdr {
    pub eps: f64,
    /// Remove the mean of both signals before projecting.
    pub zero_mean: bool,
}

impl Default for SiSdr {
    fn default() -> Self {
        Self {
            eps: SI_SDR_EPS,
            zero_mean: false,
        }
    }
}

impl SiSdr {
    pub fn compute<T: Scalar>(&self, reference: &[T], estimate: &[T]) -> Result<f64> {
        if reference.len() != estimate.len() {
            return Err(Error::LengthMismatch(reference.len(), estimate.len()));
        }
        let to64 = |x: &[T]| -> Vec<f64> {
            let mut v: Vec<f64> = x.iter().map(|s| s.to_f64().unwrap_or(f64::NAN)).collect();
            if self.zero_mean && !v.is_empty() {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter_mut().for_each(|s| *s -= m);
            }
            v
        };
        let (s, e) = (to64(reference), to64(estimate));
        if s.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroReference);
        }
        let ref_energy: f64 = s.iter().map(|v| v * v).sum();
        let dot: f64 = s.iter().zip(&e).map(|(a, b)| a * b).sum();
        let alpha = dot / ref_energy.max(self.eps);
        let mut target = 0.0;
        let mut noise = 0.0;
        for (&sv, &ev) in s.iter().zip(&e) {
            let t = alpha * sv;
            target += t * t;
            noise += (t - ev) * (t - ev);
        }
        let ratio = (target / noise.max(self.eps)).max(self.eps);
        if !ratio.is_finite() {
            return Err(Error::NonFinite("si-sdr".into()));
        }
        Ok(10.0 * ratio.log10())
    }
}

/// SI-SDR in dB with the default settings.
pub fn si_sdr<T: Scalar>(reference: &[T], estimate: &[T]) -> Result<f64> {
    SiSdr::default().compute(reference, estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example_is_zero_db() {
        // alpha = 0.5, projection [0.5, -0.5], error [-0.5, -0.5]: equal energies.
        let v = si_sdr(&[1.0f64, -1.0], &[1.0, 0.0]).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn perfect_estimate_is_capped_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.7..1.7)).collect();
        assert!(si_sdr(&s, &s).unwrap() >= 60.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            si_sdr(&[1.0f32], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            si_sdr(&[0.0f32, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroReference)
        ));
    }

    #[test]
    fn zero_mean_variant_ignores_offsets() {
        let m = SiSdr {
            zero_mean: true,
            ..SiSdr::default()
        };
        let s = [1.0f64, -1.0, 0.5, -0.5];
        let shifted: Vec<f64> = s.iter().map(|v| v + 3.0).collect();
        assert!(m.compute(&s, &shifted).unwrap() >= 60.0);
    }

    #[test]
    fn correct_source_beats_interference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(si_sdr(&s, &s).unwrap() > si_sdr(&s, &n).unwrap());
    }

    proptest! {
        #[test]
        fn scale_invariance(
            seed in 0u64..1000,
            len in 8usize..200,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e: Vec<f64> = s.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            let a = si_sdr(&s, &e).unwrap();
            let b = si_sdr(&s, &scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
