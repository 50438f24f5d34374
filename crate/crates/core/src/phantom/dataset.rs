use serde::{Deserialize, Serialize};

use super::{label, ClassLabel, Pathology, PhantomError, PhantomParams, MIN_LATERAL_MARGIN};
use crate::image::Image;
use crate::nn::SeededRng;

const MAX_ATTEMPTS: usize = 10_000;
const PACEMAKER_RATE: f64 = 0.2;

/// Sampling box for phantom parameters. Defaults cover the full valid ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub thorax_width: (u32, u32),
    pub heart_width: (u32, u32),
    pub heart_height: (u32, u32),
    pub fluid_level: (f32, f32),
    pub lung_opacity: (f32, f32),
    pub pacemaker_rate: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            thorax_width: super::THORAX_WIDTH_RANGE,
            heart_width: super::HEART_WIDTH_RANGE,
            heart_height: super::HEART_HEIGHT_RANGE,
            fluid_level: (0.0, 1.0),
            lung_opacity: (0.0, super::LUNG_OPACITY_MAX),
            pacemaker_rate: PACEMAKER_RATE,
        }
    }
}

impl ParamRanges {
    fn sample(&self, rng: &mut SeededRng) -> Option<PhantomParams> {
        let thorax_width = rng.uniform_u32(self.thorax_width.0, self.thorax_width.1);
        let hw_hi = self.heart_width.1.min(thorax_width.saturating_sub(MIN_LATERAL_MARGIN));
        if hw_hi < self.heart_width.0 {
            return None;
        }
        let heart_width = rng.uniform_u32(self.heart_width.0, hw_hi);
        let heart_height = rng.uniform_u32(self.heart_height.0, self.heart_height.1);
        // closed upper bound so fluid_level = hi is reachable
        let fluid_level = (f64::from(self.fluid_level.0)
            + rng.unit_f64() * f64::from(self.fluid_level.1 - self.fluid_level.0))
            as f32;
        let lung_opacity = rng.uniform_f32(self.lung_opacity.0, self.lung_opacity.1);
        let pacemaker = rng.bernoulli(self.pacemaker_rate);
        Some(PhantomParams {
            thorax_width,
            heart_width,
            heart_height,
            fluid_level: fluid_level.clamp(self.fluid_level.0, self.fluid_level.1),
            lung_opacity,
            pacemaker,
            noise_seed: rng.next_u64(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: usize,
    pub image: Image,
    pub label: ClassLabel,
    pub params: PhantomParams,
}

/// One line of the dataset manifest (`manifest.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub label: ClassLabel,
    pub params: PhantomParams,
}

pub fn generate_dataset(
    n: usize,
    pathology: Pathology,
    seed: u64,
    class_balance: f64,
) -> Result<Vec<DatasetItem>, PhantomError> {
    generate_dataset_with(&ParamRanges::default(), n, pathology, seed, class_balance, true)
}

/// Generates `n` labelled phantoms with exactly `round(n * class_balance)` positives.
///
/// Labels are assigned to positions by a seeded shuffle; each item's parameters
/// are then drawn uniformly from `ranges` by rejection until the label rule
/// agrees with the assigned label.
pub fn generate_dataset_with(
    ranges: &ParamRanges,
    n: usize,
    pathology: Pathology,
    seed: u64,
    class_balance: f64,
    noise: bool,
) -> Result<Vec<DatasetItem>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::Generation("dataset size must be at least 1".into()));
    }
    if !(class_balance > 0.0 && class_balance < 1.0) {
        return Err(PhantomError::Generation(format!(
            "class balance {class_balance} must lie strictly between 0 and 1"
        )));
    }
    let n_positive = (n as f64 * class_balance).round() as usize;
    let mut labels: Vec<ClassLabel> = (0..n)
        .map(|i| if i < n_positive { ClassLabel::Positive } else { ClassLabel::Healthy })
        .collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut labels);

    labels
        .into_iter()
        .enumerate()
        .map(|(id, target)| {
            let params = (0..MAX_ATTEMPTS)
                .filter_map(|_| ranges.sample(&mut rng))
                .find(|p| label(p, pathology) == target)
                .ok_or_else(|| {
                    PhantomError::Generation(format!(
                        "no {target:?} phantom found in the parameter ranges after {MAX_ATTEMPTS} draws"
                    ))
                })?;
            let image = super::render_with(&params, noise)?;
            Ok(DatasetItem {
                id,
                image,
                label: target,
                params,
            })
        })
        .collect()
}
