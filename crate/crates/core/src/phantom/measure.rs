use serde::{Deserialize, Serialize};

use super::{pacemaker_mask, HEART_CENTER_ROW, LUNG_BOTTOM, LUNG_ROWS, LUNG_TOP, PM_COLS, PM_ROWS};
use crate::image::{Image, IMAGE_SIDE};

const HEART_LO: f32 = 0.62;
const HEART_HI: f32 = 0.88;
const FLUID_THRESHOLD: f32 = 0.875;
const FLUID_MIN_PIXELS: usize = 2;
const PACEMAKER_CORRELATION: f64 = 0.7;
const PACEMAKER_CONTRAST: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureProbe {
    pub measured_heart_width: f32,
    pub measured_fluid_level: f32,
    pub pacemaker_detected: bool,
}

/// Rows scanned for the heart silhouette, centered on the widest heart row.
fn heart_band() -> std::ops::RangeInclusive<usize> {
    let center = HEART_CENTER_ROW.floor() as usize;
    center - 2..=center + 3
}

/// Longest run of heart-intensity pixels in `row` that covers the midline.
fn midline_heart_run(row: &[f32]) -> usize {
    let is_heart = |v: f32| (HEART_LO..=HEART_HI).contains(&v);
    let mid = IMAGE_SIDE / 2;
    let mut best = 0;
    for seed in [mid - 1, mid] {
        if !is_heart(row[seed]) {
            continue;
        }
        let mut left = seed;
        while left > 0 && is_heart(row[left - 1]) {
            left -= 1;
        }
        let mut right = seed;
        while right + 1 < IMAGE_SIDE && is_heart(row[right + 1]) {
            right += 1;
        }
        best = best.max(right - left + 1);
    }
    best
}

fn fluid_rows(image: &Image) -> usize {
    let mut rows = 0;
    for r in (LUNG_TOP..LUNG_BOTTOM).rev() {
        let bright = image.row(r).iter().filter(|&&v| v > FLUID_THRESHOLD).count();
        if bright < FLUID_MIN_PIXELS {
            break;
        }
        rows += 1;
    }
    rows
}

fn pacemaker_present(image: &Image) -> bool {
    let mask = pacemaker_mask();
    let n = (PM_ROWS * PM_COLS) as f64;
    let (mut sum_x, mut sum_t, mut sum_xx, mut sum_tt, mut sum_xt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut on_sum, mut on_n, mut off_sum, mut off_n) = (0.0, 0.0, 0.0, 0.0);
    for (r, mrow) in mask.iter().enumerate() {
        for (c, &on) in mrow.iter().enumerate() {
            let x = f64::from(image.get(r, c));
            let t = if on { 1.0 } else { 0.0 };
            sum_x += x;
            sum_t += t;
            sum_xx += x * x;
            sum_tt += t * t;
            sum_xt += x * t;
            if on {
                on_sum += x;
                on_n += 1.0;
            } else {
                off_sum += x;
                off_n += 1.0;
            }
        }
    }
    let cov = sum_xt - sum_x * sum_t / n;
    let var_x = sum_xx - sum_x * sum_x / n;
    let var_t = sum_tt - sum_t * sum_t / n;
    if var_x <= 1e-12 || var_t <= 1e-12 {
        return false;
    }
    let corr = cov / (var_x * var_t).sqrt();
    let contrast = on_sum / on_n - off_sum / off_n;
    corr > PACEMAKER_CORRELATION && contrast > PACEMAKER_CONTRAST
}

/// Measures the heart width, fluid fraction and pacemaker presence of any image.
///
/// Runs in a single pass over a bounded set of rows, so O(width·height).
pub fn measure_features(image: &Image) -> FeatureProbe {
    let heart = heart_band()
        .map(|r| midline_heart_run(image.row(r)))
        .max()
        .unwrap_or(0);
    FeatureProbe {
        measured_heart_width: heart as f32,
        measured_fluid_level: fluid_rows(image) as f32 / LUNG_ROWS as f32,
        pacemaker_detected: pacemaker_present(image),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeededRng;
    use crate::phantom::{render, render_clean, PhantomParams};

    fn random_params(rng: &mut SeededRng) -> PhantomParams {
        let tw = rng.uniform_u32(40, 60);
        PhantomParams {
            thorax_width: tw,
            heart_width: rng.uniform_u32(12, 40.min(tw - 10)),
            heart_height: rng.uniform_u32(14, 24),
            fluid_level: rng.uniform_f32(0.0, 1.0),
            lung_opacity: rng.uniform_f32(0.0, 0.3),
            pacemaker: rng.bernoulli(0.5),
            noise_seed: rng.next_u64(),
        }
    }

    #[test]
    fn all_zero_image_has_no_structure() {
        let probe = measure_features(&Image::zeros());
        assert_eq!(probe.measured_heart_width, 0.0);
        assert_eq!(probe.measured_fluid_level, 0.0);
        assert!(!probe.pacemaker_detected);
    }

    #[test]
    fn noise_free_sweep_inverts_parameters() {
        let mut rng = SeededRng::new(2024);
        for i in 0..1000 {
            let p = random_params(&mut rng);
            let probe = measure_features(&render_clean(&p).unwrap());
            assert!(
                (probe.measured_heart_width - p.heart_width as f32).abs() <= 1.0,
                "sample {i}: heart {} vs {:?}",
                probe.measured_heart_width,
                p
            );
            assert!(
                (probe.measured_fluid_level - p.fluid_level).abs() <= 0.05,
                "sample {i}: fluid {} vs {:?}",
                probe.measured_fluid_level,
                p
            );
            assert_eq!(probe.pacemaker_detected, p.pacemaker, "sample {i}: {p:?}");
        }
    }

    #[test]
    fn noisy_renders_are_still_measurable() {
        let mut rng = SeededRng::new(77);
        for _ in 0..200 {
            let p = random_params(&mut rng);
            let probe = measure_features(&render(&p).unwrap());
            assert!((probe.measured_heart_width - p.heart_width as f32).abs() <= 1.0);
            assert!((probe.measured_fluid_level - p.fluid_level).abs() <= 0.05);
            assert_eq!(probe.pacemaker_detected, p.pacemaker);
        }
    }
}
