//! Power iteration with deflation as a reference for the Jacobi solver.

use eigenfind::nn::SeededRng;
use eigenfind::stylespace::factorize_matrix;

pub const ROWS: usize = 192;
pub const COLS: usize = 16;
pub const TOP: usize = 8;
pub const VALUE_TOLERANCE: f64 = 1e-6;
pub const COS_TOLERANCE: f64 = 1e-6;
pub const TRACE_TOLERANCE: f64 = 1e-4;
const MAX_ITERATIONS: usize = 200_000;

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Top `count` eigenpairs of a symmetric positive semi-definite matrix.
pub fn power_deflation(matrix: &[Vec<f64>], count: usize, rng: &mut SeededRng) -> Vec<(f64, Vec<f64>)> {
    let mut b: Vec<Vec<f64>> = matrix.to_vec();
    let n = b.len();
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v: Vec<f64> = (0..n).map(|_| rng.unit_f64() - 0.5).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITERATIONS {
            let mut next = mat_vec(&b, &v);
            let rayleigh: f64 = next.iter().zip(&v).map(|(a, c)| a * c).sum();
            normalize(&mut next);
            let moved = next.iter().zip(&v).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            v = next;
            lambda = rayleigh;
            if moved < 1e-15 {
                break;
            }
        }
        for (i, row) in b.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x -= lambda * v[i] * v[j];
            }
        }
        pairs.push((lambda, v));
    }
    pairs
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EigenCheck {
    pub worst_value_err: f64,
    pub worst_cos_gap: f64,
    pub worst_trace_err: f64,
}

/// Compares the production solver against the oracle on 50 random matrices.
pub fn check_random_matrices(seed: u64, count: usize) -> EigenCheck {
    let mut rng = SeededRng::new(seed);
    let mut out = EigenCheck::default();
    for _ in 0..count {
        // uneven column scales give a spread-out spectrum like trained affines
        let scales: Vec<f64> = (0..COLS).map(|_| 0.1 + 2.0 * rng.unit_f64()).collect();
        let a: Vec<Vec<f64>> = (0..ROWS)
            .map(|_| scales.iter().map(|s| s * f64::from(rng.normal_f32())).collect())
            .collect();
        let gram: Vec<Vec<f64>> = (0..COLS)
            .map(|i| (0..COLS).map(|j| a.iter().map(|r| r[i] * r[j]).sum()).collect())
            .collect();
        let oracle = power_deflation(&gram, TOP, &mut rng);
        let basis = factorize_matrix(&a, TOP).expect("valid matrix");
        for (i, (lambda, v)) in oracle.iter().enumerate() {
            let got = basis.eigenvalues[i];
            out.worst_value_err = out.worst_value_err.max((got - lambda).abs() / lambda.abs());
            let cos: f64 = basis.directions[i].iter().zip(v).map(|(p, q)| p * q).sum();
            out.worst_cos_gap = out.worst_cos_gap.max(1.0 - cos.abs());
        }
        let full = factorize_matrix(&a, COLS).expect("valid matrix");
        let frob: f64 = a.iter().flatten().map(|x| x * x).sum();
        let trace: f64 = full.eigenvalues.iter().sum();
        out.worst_trace_err = out.worst_trace_err.max((trace - frob).abs());
    }
    out
}

impl EigenCheck {
    pub fn passes(&self) -> bool {
        self.worst_value_err <= VALUE_TOLERANCE
            && self.worst_cos_gap <= COS_TOLERANCE
            && self.worst_trace_err <= TRACE_TOLERANCE
    }
}
