use serde::{Deserialize, Serialize};

use crate::image::{Image, IMAGE_PIXELS};
use crate::nn::{softmax, Activation, Mlp, SeededRng};
use crate::phantom::ClassLabel;

pub const CLASSIFIER_DIMS: [usize; 4] = [IMAGE_PIXELS, 128, 64, 2];

/// Probabilities for (Healthy, Positive) and the argmax label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub probabilities: [f32; 2],
    pub predicted: ClassLabel,
}

impl Classification {
    pub fn prob(&self, label: ClassLabel) -> f32 {
        self.probabilities[label.index()]
    }
}

/// Argmax with ties going to Healthy.
pub fn predicted_label(probabilities: &[f32; 2]) -> ClassLabel {
    if probabilities[1] > probabilities[0] {
        ClassLabel::Positive
    } else {
        ClassLabel::Healthy
    }
}

/// Binary image classifier, the frozen model being explained.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Mlp,
}

impl Classifier {
    pub fn init(rng: &mut SeededRng) -> Self {
        Self::with_dims(&CLASSIFIER_DIMS, rng)
    }

    /// Arbitrary hidden sizes; input must be 4096 and output 2.
    pub fn with_dims(dims: &[usize], rng: &mut SeededRng) -> Self {
        assert_eq!(dims[0], IMAGE_PIXELS);
        assert_eq!(dims[dims.len() - 1], 2);
        Self {
            net: Mlp::init(dims, Activation::Identity, rng),
        }
    }

    /// All-zero weights: every image gets logits (0, 0).
    pub fn zeros() -> Self {
        let mut c = Self::init(&mut SeededRng::new(0));
        for p in c.net.params_mut() {
            p.fill(0.0);
        }
        c
    }

    pub fn logits(&self, x: &Image) -> [f32; 2] {
        let out = self.net.infer(x.pixels());
        [out[0], out[1]]
    }

    /// Logits for many images at once; identical to calling [`Classifier::logits`] per image.
    pub fn logits_batch(&self, images: &[Image]) -> Vec<[f32; 2]> {
        let input: Vec<f32> = images.iter().flat_map(|im| im.pixels().iter().copied()).collect();
        self.net
            .infer_batch(&input, images.len())
            .chunks(2)
            .map(|r| [r[0], r[1]])
            .collect()
    }

    pub fn classify(&self, x: &Image) -> Classification {
        let p = softmax(&self.logits(x));
        let probabilities = [p[0], p[1]];
        Classification {
            probabilities,
            predicted: predicted_label(&probabilities),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_logits_are_bit_identical() {
        let c = Classifier::init(&mut SeededRng::new(3));
        let images: Vec<Image> = (0..37).map(|i| Image::filled(i as f32 / 40.0)).collect();
        let batched = c.logits_batch(&images);
        for (im, l) in images.iter().zip(&batched) {
            assert_eq!(&c.logits(im), l);
        }
    }

    #[test]
    fn zero_classifier_is_uniform_and_picks_healthy() {
        let c = Classifier::zeros();
        let out = c.classify(&Image::filled(0.3));
        assert_eq!(out.probabilities, [0.5, 0.5]);
        assert_eq!(out.predicted, ClassLabel::Healthy);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = SeededRng::new(10);
        let c = Classifier::init(&mut rng);
        for _ in 0..1000 {
            let px = (0..IMAGE_PIXELS).map(|_| rng.uniform_f32(0.0, 1.0)).collect();
            let out = c.classify(&Image::from_pixels(px).unwrap());
            let total = out.probabilities[0] + out.probabilities[1];
            assert!((total - 1.0).abs() <= 1e-6);
            assert!(out.probabilities.iter().all(|&p| p > 0.0));
            assert_eq!(out.predicted, predicted_label(&out.probabilities));
        }
    }
}
