//! Desk-scale training: the frozen classifier first, then the generator and
//! encoder jointly with reconstruction and classifier-consistency losses.
//!
//! Each generator iteration processes one half-batch of encoded images and
//! one half-batch of mapped noise, so both entry points into W-space are
//! trained together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, IMAGE_PIXELS};
use crate::models::{Classifier, Encoder, Generator, GeneratorConfig, ModelBundle};
use crate::nn::{flatten_grads, softmax, AdamState, NnError, SeededRng, Tensor};
use crate::phantom::ClassLabel;

/// Probability floor used when evaluating the KL term.
pub const KL_EPSILON: f32 = 1e-7;
const LOG_EVERY: usize = 100;
const EARLY_STOP_ACCURACY: f64 = 0.99;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub classifier_lr: f32,
    pub generator_lr: f32,
    pub encoder_lr: f32,
    pub iterations: usize,
    pub lambda_rec: f32,
    pub lambda_cls: f32,
    /// Decoupled weight decay on the style affines, per unit learning rate.
    #[serde(default)]
    pub affine_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            classifier_lr: 1e-3,
            generator_lr: 0.0016,
            encoder_lr: 0.002,
            iterations: 5000,
            lambda_rec: 1.0,
            lambda_cls: 0.001,
            affine_decay: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = self.classifier_lr > 0.0
            && self.generator_lr > 0.0
            && self.encoder_lr > 0.0
            && self.iterations > 0
            && self.lambda_rec >= 0.0
            && self.lambda_cls >= 0.0
            && self.affine_decay >= 0.0;
        if !positive {
            return Err(TrainError::Config(
                "learning rates and iterations must be positive, loss weights non-negative".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// One entry of the JSON training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: String,
    pub iteration: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub iterations: usize,
    pub train_accuracy: f64,
}

/// Yields indices in seed-determined epoch order.
struct BatchOrder {
    order: Vec<usize>,
    cursor: usize,
    rng: SeededRng,
}

impl BatchOrder {
    fn new(n: usize, rng: SeededRng) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.reshuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn stack_images<'a>(images: impl Iterator<Item = &'a Image>) -> Tensor {
    let data: Vec<f32> = images.flat_map(|im| im.pixels().iter().copied()).collect();
    let rows = data.len() / IMAGE_PIXELS;
    Tensor::from_vec(&[rows, IMAGE_PIXELS], data).expect("whole images")
}

pub fn accuracy(classifier: &Classifier, data: &[(Image, ClassLabel)]) -> f64 {
    let correct = data
        .iter()
        .filter(|(x, y)| classifier.classify(x).predicted == *y)
        .count();
    correct as f64 / data.len().max(1) as f64
}

/// Trains the binary classifier with cross-entropy and Adam.
///
/// Stops at the iteration cap or as soon as a periodic full pass reaches
/// 0.99 training accuracy.
pub fn train_classifier(
    data: &[(Image, ClassLabel)],
    config: &TrainConfig,
) -> Result<(Classifier, ClassifierMetrics, Vec<LogRecord>), TrainError> {
    config.validate()?;
    let has = |l: ClassLabel| data.iter().any(|(_, y)| *y == l);
    if !has(ClassLabel::Healthy) || !has(ClassLabel::Positive) {
        return Err(TrainError::Config(
            "classifier training needs both Healthy and Positive examples".into(),
        ));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut classifier = Classifier::init(&mut rng.fork(1));
    let mut order = BatchOrder::new(data.len(), rng.fork(2));
    let mut adam = AdamState::new(config.classifier_lr, &classifier.net.params());
    let mut log = Vec::new();
    let mut train_accuracy = 0.0;
    let mut iterations = 0;

    for it in 1..=config.iterations {
        iterations = it;
        let idx = order.next_batch(config.batch_size);
        let x = stack_images(idx.iter().map(|&i| &data[i].0));
        let (logits, cache) = classifier.net.forward(&x)?;
        let b = idx.len() as f32;
        let mut dlogits = Tensor::zeros(logits.shape());
        let mut loss = 0.0f64;
        for (row, (&i, g)) in logits
            .data()
            .chunks(2)
            .zip(idx.iter().zip(dlogits.data_mut().chunks_mut(2)))
        {
            let p = softmax(row);
            let y = data[i].1.index();
            loss -= f64::from(p[y].max(KL_EPSILON)).ln();
            for k in 0..2 {
                g[k] = (p[k] - if k == y { 1.0 } else { 0.0 }) / b;
            }
        }
        let (grads, _) = classifier.net.backward(&cache, &dlogits, true)?;
        adam.step(&mut classifier.net.params_mut(), &flatten_grads(grads))?;

        if it % LOG_EVERY == 0 || it == config.iterations {
            train_accuracy = accuracy(&classifier, data);
            log.push(LogRecord {
                phase: "classifier".into(),
                iteration: it,
                loss: loss / f64::from(b),
                reconstruction_l1: None,
                kl: None,
                noise_ce: None,
                train_accuracy: Some(train_accuracy),
            });
            if train_accuracy >= EARLY_STOP_ACCURACY {
                break;
            }
        }
    }
    Ok((
        classifier,
        ClassifierMetrics {
            iterations,
            train_accuracy,
        },
        log,
    ))
}

/// Trains generator and encoder against a frozen classifier.
pub fn train_generator_encoder(
    data: &[Image],
    classifier: &Classifier,
    generator_config: GeneratorConfig,
    config: &TrainConfig,
) -> Result<(Generator, Encoder, Vec<LogRecord>), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("generator training needs at least one image".into()));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut generator = Generator::init(generator_config, &mut rng.fork(11));
    let mut encoder = Encoder::init(&mut rng.fork(12));
    if encoder.latent_dim() != generator_config.w_dim {
        return Err(TrainError::Config("encoder output must match the generator's w size".into()));
    }
    let mut order = BatchOrder::new(data.len(), rng.fork(13));
    let mut noise_rng = rng.fork(14);

    // the classifier is frozen, so its view of the real images is fixed
    let targets: Vec<[f32; 2]> = data.iter().map(|x| classifier.classify(x).probabilities).collect();

    let mut gen_adam = AdamState::new(config.generator_lr, &generator.params());
    let mut enc_adam = AdamState::new(config.encoder_lr, &encoder.net.params());
    let half = config.batch_size / 2;
    let other_half = config.batch_size - half;
    let mut log = Vec::new();

    for it in 1..=config.iterations {
        let mut gen_grads = generator.zero_grads();

        // encoded half-batch: reconstruction + KL(C(x) || C(G(E(x), y)))
        let idx = order.next_batch(half);
        let x = stack_images(idx.iter().map(|&i| &data[i]));
        let labels: Vec<ClassLabel> = idx
            .iter()
            .map(|&i| crate::models::predicted_label(&targets[i]))
            .collect();
        let (w, enc_cache) = encoder.net.forward(&x)?;
        let (x_hat, tape) = generator.forward_batch(&w, &labels)?;
        let n_pix = (half * IMAGE_PIXELS) as f32;
        let mut d_img = Tensor::zeros(x_hat.shape());
        let mut rec = 0.0f64;
        for ((d, &a), &b) in d_img.data_mut().iter_mut().zip(x_hat.data()).zip(x.data()) {
            let diff = a - b;
            rec += f64::from(diff.abs());
            *d = config.lambda_rec * diff.signum() * f32::from(diff != 0.0) / n_pix;
        }
        rec /= f64::from(n_pix);
        let (logits, cls_cache) = classifier.net.forward(&x_hat)?;
        let mut dlogits = Tensor::zeros(logits.shape());
        let mut kl = 0.0f64;
        for ((row, g), &i) in logits.data().chunks(2).zip(dlogits.data_mut().chunks_mut(2)).zip(&idx) {
            let q = softmax(row);
            let p = targets[i];
            for k in 0..2 {
                let pk = p[k].max(KL_EPSILON);
                let qk = q[k].max(KL_EPSILON);
                kl += f64::from(p[k]) * (f64::from(pk) / f64::from(qk)).ln();
                g[k] = config.lambda_cls * (q[k] - p[k]) / half as f32;
            }
        }
        kl /= half as f64;
        let (_, d_from_cls) = classifier.net.backward(&cls_cache, &dlogits, false)?;
        d_img.add_assign(&d_from_cls)?;
        let dw = generator.backward_batch(&tape, &d_img, &mut gen_grads)?;
        let (enc_grads, _) = encoder.net.backward(&enc_cache, &dw, true)?;

        // noise half-batch: CE(C(G(mapping(z, y), y)), y)
        let z = Tensor::from_vec(
            &[other_half, generator_config.z_dim],
            (0..other_half * generator_config.z_dim)
                .map(|_| noise_rng.normal_f32())
                .collect(),
        )?;
        let noise_labels: Vec<ClassLabel> = (0..other_half)
            .map(|_| {
                if noise_rng.bernoulli(0.5) {
                    ClassLabel::Positive
                } else {
                    ClassLabel::Healthy
                }
            })
            .collect();
        let (w_noise, map_cache) = generator.map_batch(&z, &noise_labels)?;
        let (x_noise, tape_noise) = generator.forward_batch(&w_noise, &noise_labels)?;
        let (logits_n, cls_cache_n) = classifier.net.forward(&x_noise)?;
        let mut dlogits_n = Tensor::zeros(logits_n.shape());
        let mut ce = 0.0f64;
        for ((row, g), y) in logits_n
            .data()
            .chunks(2)
            .zip(dlogits_n.data_mut().chunks_mut(2))
            .zip(&noise_labels)
        {
            let q = softmax(row);
            ce -= f64::from(q[y.index()].max(KL_EPSILON)).ln();
            for k in 0..2 {
                let onehot = if k == y.index() { 1.0 } else { 0.0 };
                g[k] = config.lambda_cls * (q[k] - onehot) / other_half as f32;
            }
        }
        ce /= other_half as f64;
        let (_, d_noise_img) = classifier.net.backward(&cls_cache_n, &dlogits_n, false)?;
        let dw_noise = generator.backward_batch(&tape_noise, &d_noise_img, &mut gen_grads)?;
        generator.map_backward(&map_cache, &noise_labels, &dw_noise, &mut gen_grads)?;

        gen_adam.step(&mut generator.params_mut(), &gen_grads)?;
        if config.affine_decay > 0.0 {
            let keep = 1.0 - config.generator_lr * config.affine_decay;
            for a in &mut generator.affines {
                a.weights.scale(keep);
            }
        }
        enc_adam.step(&mut encoder.net.params_mut(), &flatten_grads(enc_grads))?;

        if it % LOG_EVERY == 0 || it == config.iterations {
            let lr = f64::from(config.lambda_rec);
            let lc = f64::from(config.lambda_cls);
            log.push(LogRecord {
                phase: "generator".into(),
                iteration: it,
                loss: lr * rec + lc * kl + lc * ce,
                reconstruction_l1: Some(rec),
                kl: Some(kl),
                noise_ce: Some(ce),
                train_accuracy: None,
            });
        }
    }
    Ok((generator, encoder, log))
}

/// Held-out reconstruction quality of a trained bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    /// Mean per-pixel L1 between `x` and `G(E(x), y)`.
    pub mean_l1: f64,
    /// Fraction of images where the classifier keeps its label on the reconstruction.
    pub label_consistency: f64,
}

pub fn reconstruction_metrics(bundle: &ModelBundle, images: &[Image]) -> ReconstructionMetrics {
    let mut l1 = 0.0;
    let mut consistent = 0usize;
    for x in images {
        let y = bundle.classifier.classify(x).predicted;
        let w = bundle.encoder.encode(x);
        let x_hat = bundle.generator.generate_from_w(&w, y);
        l1 += x.mean_abs_diff(&x_hat);
        if bundle.classifier.classify(&x_hat).predicted == y {
            consistent += 1;
        }
    }
    let n = images.len().max(1) as f64;
    ReconstructionMetrics {
        mean_l1: l1 / n,
        label_consistency: consistent as f64 / n,
    }
}
