//! Factorization of the generator's StyleSpace.
//!
//! The default basis is the closed-form one: eigenvectors of `ĀᵀĀ`, where
//! `Ā` stacks the W-columns of every style affine. Directions therefore live
//! in W-space and can be added to an encoded latent directly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Generator;
use crate::nn::SeededRng;
use crate::phantom::ClassLabel;

/// Off-diagonal Frobenius norm at which Jacobi iteration stops.
pub const JACOBI_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
/// Eigenvalues closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StyleSpaceError {
    #[error("k = {k} is out of range 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("matrix rows have inconsistent lengths")]
    Ragged,
}

/// Top-k unit directions in W-space with their eigenvalues, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleBasis {
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl StyleBasis {
    /// Direction `index` (1-based, matching the eigenvalue rank).
    pub fn direction(&self, index: usize) -> Option<&[f64]> {
        index.checked_sub(1).and_then(|i| self.directions.get(i)).map(Vec::as_slice)
    }
}

/// How the basis is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorizationMode {
    /// Eigenvectors of the stacked affine weights.
    ClosedForm,
    /// Principal components of mapped latents `mapping(z, y)`.
    EmpiricalPca { samples: usize, seed: u64 },
}

/// Per-channel statistics of the style vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues and the matching unit eigenvectors, unsorted.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let off = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for (i, row) in a.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                if i != j {
                    s += x * x;
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| v.iter().map(|row| row[j]).collect()).collect();
    (values, vectors)
}

/// Flips `v` so its largest-magnitude component (first on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Sorted, sign-normalized top-k eigenpairs of a symmetric matrix.
fn top_k(gram: &[Vec<f64>], k: usize) -> Result<StyleBasis, StyleSpaceError> {
    let n = gram.len();
    if k == 0 || k > n {
        return Err(StyleSpaceError::InvalidK { k, max: n });
    }
    let (values, vectors) = symmetric_eigen(gram);
    let mut pairs: Vec<(f64, Vec<f64>)> = values
        .into_iter()
        .zip(vectors)
        .map(|(l, mut v)| {
            normalize(&mut v);
            canonical_sign(&mut v);
            (l, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // tied runs are ordered by their components
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end - 1].0 - pairs[end].0 <= TIE_TOLERANCE {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lexicographic_desc(&a.1, &b.1));
        start = end;
    }
    pairs.truncate(k);
    let (eigenvalues, directions) = pairs.into_iter().map(|(l, v)| (l.max(0.0), v)).unzip();
    Ok(StyleBasis {
        k,
        eigenvalues,
        directions,
    })
}

/// `AᵀA` for a row-major matrix given as rows.
pub fn gram(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StyleSpaceError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(StyleSpaceError::Ragged);
    }
    let mut g = vec![vec![0.0; cols]; cols];
    for row in rows {
        for i in 0..cols {
            for j in i..cols {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            g[i][j] = g[j][i];
        }
    }
    Ok(g)
}

/// Top-k right singular directions of `a` with eigenvalues of `aᵀa`.
pub fn factorize_matrix(a: &[Vec<f64>], k: usize) -> Result<StyleBasis, StyleSpaceError> {
    top_k(&gram(a)?, k)
}

/// Closed-form factorization of the generator's style affines.
pub fn sefa_factorize(g: &Generator, k: usize) -> Result<StyleBasis, StyleSpaceError> {
    if k == 0 || k > g.config.w_dim {
        return Err(StyleSpaceError::InvalidK { k, max: g.config.w_dim });
    }
    factorize_matrix(&g.stacked_w_weights(), k)
}

fn uniform_label(rng: &mut SeededRng) -> ClassLabel {
    if rng.bernoulli(0.5) {
        ClassLabel::Positive
    } else {
        ClassLabel::Healthy
    }
}

/// Principal components of `mapping(z, y)` over sampled noise and labels.
pub fn empirical_pca(g: &Generator, k: usize, samples: usize, seed: u64) -> Result<StyleBasis, StyleSpaceError> {
    if samples < 2 {
        return Err(StyleSpaceError::TooFewSamples(samples));
    }
    let d = g.config.w_dim;
    if k == 0 || k > d {
        return Err(StyleSpaceError::InvalidK { k, max: d });
    }
    let mut rng = SeededRng::new(seed);
    let latents: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let z: Vec<f32> = (0..g.config.z_dim).map(|_| rng.normal_f32()).collect();
            let y = uniform_label(&mut rng);
            g.map(&z, y).iter().map(|&v| f64::from(v)).collect()
        })
        .collect();
    let mut mean = vec![0.0; d];
    for w in &latents {
        for (m, v) in mean.iter_mut().zip(w) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= samples as f64;
    }
    let centered: Vec<Vec<f64>> = latents
        .iter()
        .map(|w| w.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = gram(&centered)?;
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= (samples - 1) as f64;
        }
    }
    top_k(&cov, k)
}

pub fn factorize(g: &Generator, k: usize, mode: FactorizationMode) -> Result<StyleBasis, StyleSpaceError> {
    match mode {
        FactorizationMode::ClosedForm => sefa_factorize(g, k),
        FactorizationMode::EmpiricalPca { samples, seed } => empirical_pca(g, k, samples, seed),
    }
}

/// Per-channel mean and sample standard deviation of `s` over standard-normal
/// `w` with uniformly drawn labels.
pub fn channel_stats(g: &Generator, samples: usize, seed: u64) -> Result<ChannelStats, StyleSpaceError> {
    if samples < 2 {
        return Err(StyleSpaceError::TooFewSamples(samples));
    }
    let m = g.style_dim();
    let mut rng = SeededRng::new(seed);
    // Welford accumulation in sample order
    let mut mean = vec![0.0f64; m];
    let mut m2 = vec![0.0f64; m];
    for i in 0..samples {
        let w: Vec<f32> = (0..g.config.w_dim).map(|_| rng.normal_f32()).collect();
        let y = uniform_label(&mut rng);
        let s = g.style_of(&w, y);
        let n = (i + 1) as f64;
        for ((mu, acc), &x) in mean.iter_mut().zip(&mut m2).zip(s.iter()) {
            let x = f64::from(x);
            let delta = x - *mu;
            *mu += delta / n;
            *acc += delta * (x - *mu);
        }
    }
    let std = m2.iter().map(|v| (v / (samples - 1) as f64).max(0.0).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}

/// Converts a basis direction to the f32 latent layout.
pub fn direction_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
