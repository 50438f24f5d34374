//! Procedural chest-like phantoms with exactly known disease-analog features.
//!
//! A phantom is a dark lung field inside a thorax outline, an elliptical
//! heart, an optional bright fluid band at the lung bases and an optional
//! pacemaker motif in the upper-left corner. Labels are pure functions of the
//! scene parameters and every feature can be measured back from pixels with
//! [`measure_features`].

mod dataset;
mod measure;

pub use dataset::{generate_dataset, generate_dataset_with, DatasetItem, ManifestRecord, ParamRanges};
pub use measure::{measure_features, FeatureProbe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, IMAGE_SIDE};
use crate::nn::SeededRng;

pub const BACKGROUND: f32 = 0.0;
pub const TISSUE: f32 = 0.5;
pub const LUNG_BASE: f32 = 0.15;
pub const HEART: f32 = 0.75;
pub const FLUID: f32 = 0.95;
pub const PACEMAKER: f32 = 1.0;
pub const NOISE_AMPLITUDE: f32 = 0.05;

pub const THORAX_WIDTH_RANGE: (u32, u32) = (40, 60);
pub const HEART_WIDTH_RANGE: (u32, u32) = (12, 40);
pub const HEART_HEIGHT_RANGE: (u32, u32) = (14, 24);
pub const LUNG_OPACITY_MAX: f32 = 0.3;
/// Minimum thorax-minus-heart width, keeps lung tissue visible beside the heart.
pub const MIN_LATERAL_MARGIN: u32 = 10;

pub(crate) const CENTER_COL: f32 = 32.0;
pub(crate) const THORAX_CENTER_ROW: f32 = 34.0;
pub(crate) const THORAX_SEMI_HEIGHT: f32 = 28.0;
pub(crate) const LUNG_INSET: f32 = 2.0;
pub(crate) const LUNG_SEMI_HEIGHT: f32 = 22.0;
pub(crate) const HEART_CENTER_ROW: f32 = 38.5;
/// Lung rows are `[LUNG_TOP, LUNG_BOTTOM)`.
pub(crate) const LUNG_TOP: usize = 12;
pub(crate) const LUNG_BOTTOM: usize = 56;
pub(crate) const LUNG_ROWS: usize = LUNG_BOTTOM - LUNG_TOP;
/// Pacemaker region is rows `[0, PM_ROWS)` × cols `[0, PM_COLS)`, always outside the thorax.
pub(crate) const PM_ROWS: usize = 12;
pub(crate) const PM_COLS: usize = 13;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("dataset generation failed: {0}")]
    Generation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Healthy = 0,
    Positive = 1,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Healthy),
            1 => Some(Self::Positive),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Self::Healthy => Self::Positive,
            Self::Positive => Self::Healthy,
        }
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Self::from_index(usize::from(v))
            .ok_or_else(|| serde::de::Error::custom(format!("class label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathology {
    #[serde(rename = "cardio")]
    CardioAnalog,
    #[serde(rename = "effusion")]
    EffusionAnalog,
}

impl Pathology {
    pub fn name(self) -> &'static str {
        match self {
            Self::CardioAnalog => "cardio",
            Self::EffusionAnalog => "effusion",
        }
    }
}

impl std::str::FromStr for Pathology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cardio" => Ok(Self::CardioAnalog),
            "effusion" => Ok(Self::EffusionAnalog),
            other => Err(format!("unknown pathology {other:?} (expected cardio or effusion)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub thorax_width: u32,
    pub heart_width: u32,
    pub heart_height: u32,
    pub fluid_level: f32,
    pub lung_opacity: f32,
    pub pacemaker: bool,
    pub noise_seed: u64,
}

fn invalid(field: &'static str, reason: String) -> PhantomError {
    PhantomError::InvalidParameter { field, reason }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let in_range = |v: u32, (lo, hi): (u32, u32)| (lo..=hi).contains(&v);
        if !in_range(self.thorax_width, THORAX_WIDTH_RANGE) {
            return Err(invalid("thorax_width", format!("{} not in [40, 60]", self.thorax_width)));
        }
        if !in_range(self.heart_width, HEART_WIDTH_RANGE) {
            return Err(invalid("heart_width", format!("{} not in [12, 40]", self.heart_width)));
        }
        if self.heart_width + MIN_LATERAL_MARGIN > self.thorax_width {
            return Err(invalid(
                "heart_width",
                format!(
                    "{} leaves less than {MIN_LATERAL_MARGIN} px of lung beside the heart in a thorax of {}",
                    self.heart_width, self.thorax_width
                ),
            ));
        }
        if !in_range(self.heart_height, HEART_HEIGHT_RANGE) {
            return Err(invalid("heart_height", format!("{} not in [14, 24]", self.heart_height)));
        }
        if !(0.0..=1.0).contains(&self.fluid_level) {
            return Err(invalid("fluid_level", format!("{} not in [0, 1]", self.fluid_level)));
        }
        if !(0.0..=LUNG_OPACITY_MAX).contains(&self.lung_opacity) {
            return Err(invalid("lung_opacity", format!("{} not in [0, 0.3]", self.lung_opacity)));
        }
        Ok(())
    }

    /// Number of lung rows, counted from the bottom, covered by fluid.
    pub fn fluid_rows(&self) -> usize {
        (f64::from(self.fluid_level) * LUNG_ROWS as f64).round() as usize
    }
}

/// Ground-truth label rule.
pub fn label(params: &PhantomParams, pathology: Pathology) -> ClassLabel {
    let positive = match pathology {
        // heart_width / thorax_width > 0.5, in integers
        Pathology::CardioAnalog => 2 * params.heart_width > params.thorax_width,
        Pathology::EffusionAnalog => params.fluid_level > 0.15,
    };
    if positive {
        ClassLabel::Positive
    } else {
        ClassLabel::Healthy
    }
}

#[inline]
fn in_ellipse(row: usize, col: usize, center_row: f32, center_col: f32, semi_h: f32, semi_w: f32) -> bool {
    let dy = (row as f32 + 0.5 - center_row) / semi_h;
    let dx = (col as f32 + 0.5 - center_col) / semi_w;
    dx * dx + dy * dy <= 1.0
}

/// Pixels of the pacemaker motif: a small disk with a lead running toward the chest.
pub(crate) fn pacemaker_mask() -> [[bool; PM_COLS]; PM_ROWS] {
    let mut mask = [[false; PM_COLS]; PM_ROWS];
    for (r, row) in mask.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let dy = r as f32 + 0.5 - 5.0;
            let dx = c as f32 + 0.5 - 6.0;
            if dx * dx + dy * dy <= 2.6 * 2.6 {
                *cell = true;
            }
        }
    }
    for r in 7..PM_ROWS {
        mask[r][r + 1] = true;
    }
    mask
}

/// Renders a phantom with its seeded additive noise.
pub fn render(params: &PhantomParams) -> Result<Image, PhantomError> {
    render_with(params, true)
}

/// Renders a phantom without noise; used by the measurement oracles.
pub fn render_clean(params: &PhantomParams) -> Result<Image, PhantomError> {
    render_with(params, false)
}

pub fn render_with(params: &PhantomParams, noise: bool) -> Result<Image, PhantomError> {
    params.validate()?;
    let thorax_semi_w = params.thorax_width as f32 / 2.0;
    let lung_semi_w = thorax_semi_w - LUNG_INSET;
    let heart_semi_w = params.heart_width as f32 / 2.0;
    let heart_semi_h = params.heart_height as f32 / 2.0;
    let lung_value = LUNG_BASE + params.lung_opacity;
    let fluid_top = LUNG_BOTTOM - params.fluid_rows();

    let mut pixels = vec![BACKGROUND; IMAGE_SIDE * IMAGE_SIDE];
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let mut v = BACKGROUND;
            if in_ellipse(row, col, THORAX_CENTER_ROW, CENTER_COL, THORAX_SEMI_HEIGHT, thorax_semi_w) {
                v = TISSUE;
                if in_ellipse(row, col, THORAX_CENTER_ROW, CENTER_COL, LUNG_SEMI_HEIGHT, lung_semi_w) {
                    v = if row >= fluid_top { FLUID } else { lung_value };
                }
                if in_ellipse(row, col, HEART_CENTER_ROW, CENTER_COL, heart_semi_h, heart_semi_w) {
                    v = HEART;
                }
            }
            pixels[row * IMAGE_SIDE + col] = v;
        }
    }
    if params.pacemaker {
        let mask = pacemaker_mask();
        for (r, mrow) in mask.iter().enumerate() {
            for (c, &on) in mrow.iter().enumerate() {
                if on {
                    pixels[r * IMAGE_SIDE + c] = PACEMAKER;
                }
            }
        }
    }
    if noise {
        let mut rng = SeededRng::new(params.noise_seed);
        for p in &mut pixels {
            *p = (*p + rng.uniform_f32(-NOISE_AMPLITUDE, NOISE_AMPLITUDE)).clamp(0.0, 1.0);
        }
    }
    Ok(Image::from_pixels(pixels).expect("fixed size"))
}
