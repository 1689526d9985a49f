//! Robustness corruptions of modality features.

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use super::ModalityFeatures;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum CorruptionSpec {
    /// Adds i.i.d. `N(0, variance)` to every entry.
    GaussianNoise { variance: f64, seed: u64 },
    /// Zeroes `floor(missing_rate * |I|)` uniformly chosen item rows.
    ModalityMask { missing_rate: f64, seed: u64 },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::GaussianNoise { variance, .. } => {
                if !variance.is_finite() || variance < 0.0 {
                    return Err(Error::Config(format!("noise variance must be >= 0, got {variance}")));
                }
            }
            CorruptionSpec::ModalityMask { missing_rate, .. } => {
                if !(0.0..=1.0).contains(&missing_rate) {
                    return Err(Error::Config(format!(
                        "missing rate must lie in [0, 1], got {missing_rate}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pure function of `(features, spec)`; each modality draws from its own stream.
pub fn corrupt(features: &ModalityFeatures, spec: &CorruptionSpec) -> Result<ModalityFeatures> {
    spec.validate()?;
    let stream_name = format!("corrupt/{}", features.modality);
    match *spec {
        CorruptionSpec::GaussianNoise { variance, seed } => {
            if variance == 0.0 {
                return Ok(features.clone());
            }
            let mut r = rng::stream(seed, &stream_name);
            let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
            let mut m = features.matrix().clone();
            for v in m.data_mut() {
                *v += normal.sample(&mut r);
            }
            // Noise is applied to masked rows too; they stay flagged.
            Ok(ModalityFeatures::with_missing(
                features.modality,
                m,
                features.missing().to_vec(),
            ))
        }
        CorruptionSpec::ModalityMask { missing_rate, seed } => {
            let n = features.num_items();
            let count = ((missing_rate * n as f64).floor() as usize).min(n);
            let mut r = rng::stream(seed, &stream_name);
            let mut m = features.matrix().clone();
            let mut missing = features.missing().to_vec();
            let mut chosen = sample(&mut r, n, count).into_vec();
            chosen.sort_unstable();
            for i in chosen {
                m.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                missing[i] = true;
            }
            Ok(ModalityFeatures::with_missing(features.modality, m, missing))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::Modality;
    use crate::numerics::Matrix;

    fn feats(rows: usize, cols: usize) -> ModalityFeatures {
        let m = Matrix::from_fn(rows, cols, |r, c| 1.0 + (r * cols + c) as f64 * 0.01);
        ModalityFeatures::new(Modality::Visual, m).unwrap()
    }

    #[test]
    fn zero_variance_is_identity() {
        let f = feats(4, 3);
        assert_eq!(
            corrupt(&f, &CorruptionSpec::GaussianNoise { variance: 0.0, seed: 1 }).unwrap(),
            f
        );
    }

    #[test]
    fn full_mask_zeroes_everything() {
        let f = feats(5, 2);
        let out = corrupt(
            &f,
            &CorruptionSpec::ModalityMask {
                missing_rate: 1.0,
                seed: 3,
            },
        )
        .unwrap();
        assert!(out.matrix().data().iter().all(|&v| v == 0.0));
        assert_eq!(out.missing_count(), 5);
    }

    #[test]
    fn mask_count_is_floor() {
        let f = feats(10, 2);
        let out = corrupt(
            &f,
            &CorruptionSpec::ModalityMask {
                missing_rate: 0.55,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(out.missing_count(), 5);
    }

    #[test]
    fn invalid_rate_is_config_error() {
        let f = feats(2, 2);
        let e = corrupt(
            &f,
            &CorruptionSpec::ModalityMask {
                missing_rate: 1.5,
                seed: 0,
            },
        );
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn noise_sample_variance_within_five_percent() {
        let f = ModalityFeatures::new(Modality::Textual, Matrix::zeros(1000, 1000)).unwrap();
        let out = corrupt(
            &f,
            &CorruptionSpec::GaussianNoise {
                variance: 1e-4,
                seed: 9,
            },
        )
        .unwrap();
        let d = out.matrix().data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1e-4).abs() / 1e-4 < 0.05, "{var}");
    }

    #[test]
    fn corruption_is_pure() {
        let f = feats(20, 4);
        for spec in [
            CorruptionSpec::GaussianNoise { variance: 0.5, seed: 4 },
            CorruptionSpec::ModalityMask {
                missing_rate: 0.6,
                seed: 4,
            },
        ] {
            assert_eq!(corrupt(&f, &spec).unwrap(), corrupt(&f, &spec).unwrap());
        }
    }
}
