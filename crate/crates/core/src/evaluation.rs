//! Frequency-domain similarity of acceleration signals and orientation
//! error statistics.

use nalgebra::{Rotation3, Vector3};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::geodesic_angle;

/// Shortest signal accepted by [`spectral_cosine_similarity`].
pub const MIN_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBands {
    pub cutoff_hz: f64,
    pub sample_rate: f64,
}

impl SpectrumBands {
    pub fn new(cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        let b = SpectrumBands { cutoff_hz, sample_rate };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate / 2.0) {
            return Err(Error::InvalidInput(format!(
                "cutoff {} Hz must lie in (0, {} Hz)",
                self.cutoff_hz,
                self.sample_rate / 2.0
            )));
        }
        Ok(())
    }

    /// Whether one-sided bin `k` of an `n`-point transform is in the low band.
    /// DC is always low.
    pub fn is_low(&self, k: usize, n: usize) -> bool {
        (k as f64) * self.sample_rate / (n as f64) < self.cutoff_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Taper {
    #[default]
    Hann,
    /// Raw periodogram.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub low_band: f64,
    pub high_band: f64,
    pub full_band: f64,
}

/// One-sided magnitude spectrum (bins `0..=n/2`).
pub fn magnitude_spectrum(signal: &[f64], taper: Taper) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = match taper {
                Taper::Hann if n > 1 => {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
                }
                _ => 1.0,
            };
            Complex::new(x * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf.iter().map(|c| c.norm()).collect()
}

/// Cosine of the angle between two magnitude vectors; 0 when either is zero.
fn cosine(a: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Per-channel cosine similarity of magnitude spectra, split at the cutoff
/// and averaged over the three channels with equal weight. A band with no
/// energy in either signal scores 0.
pub fn spectral_cosine_similarity(
    a: &[Vector3<f64>],
    b: &[Vector3<f64>],
    bands: &SpectrumBands,
    taper: Taper,
) -> Result<SimilarityReport> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < MIN_SAMPLES {
        return Err(Error::TooShort { needed: MIN_SAMPLES, got: a.len() });
    }
    bands.validate()?;
    let n = a.len();
    let mut report = SimilarityReport { low_band: 0.0, high_band: 0.0, full_band: 0.0 };
    for c in 0..3 {
        let sa = magnitude_spectrum(&a.iter().map(|v| v[c]).collect::<Vec<_>>(), taper);
        let sb = magnitude_spectrum(&b.iter().map(|v| v[c]).collect::<Vec<_>>(), taper);
        let pairs = || sa.iter().copied().zip(sb.iter().copied()).enumerate();
        report.low_band += cosine(pairs().filter(|(k, _)| bands.is_low(*k, n)).map(|(_, p)| p));
        report.high_band += cosine(pairs().filter(|(k, _)| !bands.is_low(*k, n)).map(|(_, p)| p));
        report.full_band += cosine(pairs().map(|(_, p)| p));
    }
    report.low_band /= 3.0;
    report.high_band /= 3.0;
    report.full_band /= 3.0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationErrors {
    pub degrees: Vec<f64>,
    pub mean: f64,
}

pub fn orientation_error_series(
    estimated: &[Rotation3<f64>],
    truth: &[Rotation3<f64>],
) -> Result<OrientationErrors> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimated.len(), right: truth.len() });
    }
    if estimated.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let degrees: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| geodesic_angle(e, t).to_degrees())
        .collect();
    let mean = degrees.iter().sum::<f64>() / degrees.len() as f64;
    Ok(OrientationErrors { degrees, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, yaw_rotation};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: f64 = 180.0;

    fn bands() -> SpectrumBands {
        SpectrumBands::new(10.0, FS).unwrap()
    }

    fn tone(f: f64, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                Vector3::new((2.0 * PI * f * t).sin(), (2.0 * PI * f * t).cos(), (2.0 * PI * f * t + 1.0).sin())
            })
            .collect()
    }

    fn naive_dft_magnitudes(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    fn mixed(n: usize, noise_amp: f64, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                let base = Vector3::new(
                    (2.0 * PI * 1.5 * t).sin() + 0.2 * (2.0 * PI * 25.0 * t).sin(),
                    (2.0 * PI * 3.0 * t).cos() + 0.1 * (2.0 * PI * 40.0 * t).cos(),
                    0.5 * (2.0 * PI * 0.7 * t).sin() + 0.1 * (2.0 * PI * 30.0 * t).sin(),
                );
                let noise = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                base + noise * noise_amp
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let x: Vec<f64> = mixed(200, 0.3, 1).iter().map(|v| v.x).collect();
        let fast = magnitude_spectrum(&x, Taper::None);
        let slow = naive_dft_magnitudes(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let s = mixed(540, 0.0, 0);
        for taper in [Taper::Hann, Taper::None] {
            let r = spectral_cosine_similarity(&s, &s, &bands(), taper).unwrap();
            for v in [r.low_band, r.high_band, r.full_band] {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disjoint_tones_are_orthogonal() {
        // 2 Hz and 20 Hz fall on exact bins of a 180-sample transform.
        let r = spectral_cosine_similarity(&tone(2.0, 180), &tone(20.0, 180), &bands(), Taper::None).unwrap();
        assert!(r.full_band.abs() < 1e-9);
        let r = spectral_cosine_similarity(&tone(2.0, 900), &tone(20.0, 900), &bands(), Taper::Hann).unwrap();
        assert!(r.full_band < 0.01);
    }

    #[test]
    fn high_band_degrades_first_under_noise() {
        let clean = mixed(1800, 0.0, 0);
        let noisy = mixed(1800, 0.3, 5);
        let r = spectral_cosine_similarity(&clean, &noisy, &bands(), Taper::Hann).unwrap();
        assert!(r.low_band > r.high_band);
    }

    #[test]
    fn band_split_is_a_partition() {
        for n in [64, 65, 180, 1001] {
            let b = bands();
            let low = (0..=n / 2).filter(|&k| b.is_low(k, n)).count();
            let high = (0..=n / 2).filter(|&k| !b.is_low(k, n)).count();
            assert_eq!(low + high, n / 2 + 1);
            assert!(b.is_low(0, n));
        }
    }

    #[test]
    fn zero_band_scores_zero() {
        let low_only = tone(2.0, 180);
        let r = spectral_cosine_similarity(&low_only, &low_only, &bands(), Taper::None).unwrap();
        assert!((r.low_band - 1.0).abs() < 1e-9);
        let zeros = vec![Vector3::zeros(); 128];
        let r = spectral_cosine_similarity(&zeros, &zeros, &bands(), Taper::Hann).unwrap();
        assert_eq!((r.low_band, r.high_band, r.full_band), (0.0, 0.0, 0.0));
    }

    #[test]
    fn input_checks() {
        assert!(spectral_cosine_similarity(&tone(2.0, 100), &tone(2.0, 99), &bands(), Taper::Hann).is_err());
        assert!(spectral_cosine_similarity(&tone(2.0, 63), &tone(2.0, 63), &bands(), Taper::Hann).is_err());
        assert!(SpectrumBands::new(90.0, 180.0).is_err());
    }

    #[test]
    fn orientation_error_examples() {
        let seq: Vec<_> = (0..20).map(|i| exp_so3(&Vector3::new(0.1 * i as f64, 0.2, -0.3))).collect();
        let same = orientation_error_series(&seq, &seq).unwrap();
        assert!(same.mean < 1e-6 && same.degrees.iter().all(|d| *d < 1e-6));
        let off = yaw_rotation(2f64.to_radians());
        let shifted: Vec<_> = seq.iter().map(|r| r * off).collect();
        let e = orientation_error_series(&shifted, &seq).unwrap();
        assert!((e.mean - 2.0).abs() < 1e-9);
        assert!(orientation_error_series(&seq[..3], &seq).is_err());
    }

    proptest! {
        #[test]
        fn error_matches_quaternion_oracle(
            a in prop::array::uniform3(-3.0..3.0f64), b in prop::array::uniform3(-3.0..3.0f64),
            c in prop::array::uniform3(-3.0..3.0f64),
        ) {
            let (ra, rb) = (exp_so3(&Vector3::from(a)), exp_so3(&Vector3::from(b)));
            let (qa, qb) = (UnitQuaternion::from_rotation_matrix(&ra), UnitQuaternion::from_rotation_matrix(&rb));
            let oracle = 2.0 * qa.coords.dot(&qb.coords).abs().min(1.0).acos();
            let e = orientation_error_series(&[ra], &[rb]).unwrap();
            prop_assert!((e.mean - oracle.to_degrees()).abs() < 1e-6);
            let g = exp_so3(&Vector3::from(c));
            let e2 = orientation_error_series(&[g * ra], &[g * rb]).unwrap();
            prop_assert!((e2.mean - e.mean).abs() < 1e-6);
        }

        #[test]
        fn similarity_symmetric_and_scale_invariant(seed in 0u64..1000, scale in 0.1..10.0f64) {
            let a = mixed(128, 0.5, seed);
            let b = mixed(128, 0.5, seed + 1);
            let ab = spectral_cosine_similarity(&a, &b, &bands(), Taper::Hann).unwrap();
            let ba = spectral_cosine_similarity(&b, &a, &bands(), Taper::Hann).unwrap();
            let scaled: Vec<_> = a.iter().map(|v| v * scale).collect();
            let sb = spectral_cosine_similarity(&scaled, &b, &bands(), Taper::Hann).unwrap();
            for (x, y) in [(ab.low_band, ba.low_band), (ab.high_band, ba.high_band), (ab.full_band, sb.full_band), (ab.high_band, sb.high_band)] {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
