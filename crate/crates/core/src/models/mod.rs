//! The frozen classifier, the conditional style generator and the encoder.

mod bundle;
mod classifier;
mod encoder;
mod generator;

pub use bundle::{sha256_hex, ModelBundle};
pub use classifier::{predicted_label, Classification, Classifier, CLASSIFIER_DIMS};
pub use encoder::{Encoder, ENCODER_DIMS};
pub use generator::{Generator, GeneratorConfig, Latent, StyleVector, SynthesisTape};
