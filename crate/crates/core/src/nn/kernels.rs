//! Row-major matrix kernels for dense layers.
//!
//! Every output element is produced by exactly one fixed-order reduction, so
//! results do not depend on how rows are split across threads.

use rayon::prelude::*;

const LANES: usize = 8;
/// Below this many multiply-adds the kernels stay on the calling thread.
const PARALLEL_WORK: usize = 1 << 18;

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rows processed together so each weight row is reused from cache.
const ROW_BLOCK: usize = 16;

/// `y[b, o] = dot(x[b, :], w[o, :]) + bias[o]`.
pub fn linear_forward(x: &[f32], in_dim: usize, w: &[f32], bias: &[f32], y: &mut [f32]) {
    let out_dim = bias.len();
    let batch = x.len() / in_dim;
    let block = |(xs, ys): (&[f32], &mut [f32])| {
        let rows = xs.len() / in_dim;
        for (o, wo) in w.chunks_exact(in_dim).enumerate() {
            for b in 0..rows {
                ys[b * out_dim + o] = dot(&xs[b * in_dim..(b + 1) * in_dim], wo) + bias[o];
            }
        }
    };
    if batch * in_dim * out_dim >= PARALLEL_WORK && batch > ROW_BLOCK {
        x.par_chunks(in_dim * ROW_BLOCK)
            .zip(y.par_chunks_mut(out_dim * ROW_BLOCK))
            .for_each(block);
    } else {
        x.chunks(in_dim * ROW_BLOCK)
            .zip(y.chunks_mut(out_dim * ROW_BLOCK))
            .for_each(block);
    }
}

/// `dx[b, :] = Σ_o dy[b, o] · w[o, :]`.
pub fn linear_backward_input(dy: &[f32], out_dim: usize, w: &[f32], dx: &mut [f32]) {
    let in_dim = w.len() / out_dim;
    let batch = dy.len() / out_dim;
    let row = |(dyb, dxb): (&[f32], &mut [f32])| {
        dxb.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dyb.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxb);
            }
        }
    };
    if batch * in_dim * out_dim >= PARALLEL_WORK && batch > 1 {
        dy.par_chunks(out_dim).zip(dx.par_chunks_mut(in_dim)).for_each(row);
    } else {
        dy.chunks(out_dim).zip(dx.chunks_mut(in_dim)).for_each(row);
    }
}

/// `dw[o, :] = Σ_b dy[b, o] · x[b, :]` and `db[o] = Σ_b dy[b, o]`, overwriting both.
pub fn linear_backward_params(dy: &[f32], x: &[f32], in_dim: usize, dw: &mut [f32], db: &mut [f32]) {
    let out_dim = db.len();
    let batch = dy.len() / out_dim;
    let unit = |(o, (dwo, dbo)): (usize, (&mut [f32], &mut f32))| {
        dwo.iter_mut().for_each(|v| *v = 0.0);
        let mut bsum = 0.0f32;
        for b in 0..batch {
            let g = dy[b * out_dim + o];
            bsum += g;
            if g != 0.0 {
                axpy(g, &x[b * in_dim..(b + 1) * in_dim], dwo);
            }
        }
        *dbo = bsum;
    };
    if batch * in_dim * out_dim >= PARALLEL_WORK {
        dw.par_chunks_mut(in_dim)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(unit);
    } else {
        dw.chunks_mut(in_dim).zip(db.iter_mut()).enumerate().for_each(unit);
    }
}
