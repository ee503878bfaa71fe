//! Deterministic synthetic digit dataset in the IDX layout.
//!
//! Each class gets a fixed random prototype image; samples are the prototype
//! plus Gaussian pixel noise, quantized back to bytes. The files use the
//! standard split names, so everything downstream reads them exactly like
//! the real dataset.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{
    write_idx_images, write_idx_labels, DatasetError, PIXELS_PER_IMAGE, TEST_IMAGES_FILE,
    TEST_LABELS_FILE, TRAIN_IMAGES_FILE, TRAIN_LABELS_FILE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub train_per_digit: usize,
    pub test_per_digit: usize,
    /// Standard deviation of per-pixel Gaussian noise around the prototype.
    pub noise: f64,
    /// Fraction of training samples whose label is flipped to another digit.
    /// A linear model cannot fit flipped samples, so class-specific gradient
    /// pulls persist across the whole run instead of decaying to zero once
    /// the clean part of the data is fitted. Test labels stay clean.
    pub label_noise: f64,
    /// Brightness factor for odd-digit prototypes. Below 1.0 the odd classes
    /// contribute weaker gradient pulls, so client groups that mix an even
    /// and an odd digit sit closer together than groups built from a single
    /// bright digit.
    pub odd_digit_scale: f64,
    /// Blend of the next even digit's pattern into each odd prototype
    /// (digit 2k+1 leans toward digit 2k+2, wrapping at 9). Nonzero values
    /// correlate neighbouring digit groups, which only the two-digit
    /// partition scheme ever sees.
    pub odd_blend: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train_per_digit: 256,
            test_per_digit: 64,
            noise: 0.15,
            label_noise: 0.1,
            odd_digit_scale: 1.0,
            odd_blend: 0.6,
            seed: 42,
        }
    }
}

/// Writes the four split files into `dir`.
///
/// Prototypes are sparse: around 15% of pixels are lit per class, which keeps
/// per-sample energy close to real handwriting scans and well inside the
/// stability region of the default learning rate.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<(), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bases: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            (0..PIXELS_PER_IMAGE)
                .map(|_| {
                    if rng.random::<f64>() < 0.15 {
                        0.5 + 0.5 * rng.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let prototypes: Vec<Vec<f64>> = (0..10)
        .map(|digit| {
            if digit % 2 == 0 {
                return bases[digit].clone();
            }
            let neighbour = &bases[(digit + 1) % 10];
            bases[digit]
                .iter()
                .zip(neighbour)
                .map(|(&own, &next)| {
                    spec.odd_digit_scale * ((1.0 - spec.odd_blend) * own + spec.odd_blend * next)
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| DatasetError::Format(format!("bad noise level: {e}")))?;

    let emit = |count: usize,
                    label_noise: f64,
                    images_file: &str,
                    labels_file: &str,
                    rng: &mut ChaCha8Rng|
     -> Result<(), DatasetError> {
        let mut samples = Vec::with_capacity(count * 10);
        for _ in 0..count {
            for (digit, prototype) in prototypes.iter().enumerate() {
                let pixels: Vec<f32> = prototype
                    .iter()
                    .map(|&mean| {
                        let value = (mean + noise.sample(rng)).clamp(0.0, 1.0);
                        (value * 255.0).round() as u8
                    })
                    .map(|byte| f32::from(byte) / 255.0)
                    .collect();
                let label = if label_noise > 0.0 && rng.random::<f64>() < label_noise {
                    (digit as u8 + rng.random_range(1..10)) % 10
                } else {
                    digit as u8
                };
                samples.push((pixels, label));
            }
        }
        // File order must not be digit-periodic, or the alternating split
        // would hand each client of a pair a single digit.
        use rand::seq::SliceRandom;
        samples.shuffle(rng);
        let images: Vec<Vec<f32>> = samples.iter().map(|(p, _)| p.clone()).collect();
        let labels: Vec<u8> = samples.iter().map(|(_, l)| *l).collect();
        write_idx_images(&dir.join(images_file), &images)?;
        write_idx_labels(&dir.join(labels_file), &labels)?;
        Ok(())
    };

    emit(
        spec.train_per_digit,
        spec.label_noise,
        TRAIN_IMAGES_FILE,
        TRAIN_LABELS_FILE,
        &mut rng,
    )?;
    emit(spec.test_per_digit, 0.0, TEST_IMAGES_FILE, TEST_LABELS_FILE, &mut rng)?;
    Ok(())
}
