//! Central finite-difference checks of every handwritten backward pass.
//!
//! The numeric side runs an independent f64 forward pass so that f32
//! rounding in the production kernels does not swamp the difference quotient.

use eigenfind::models::{Generator, GeneratorConfig};
use eigenfind::nn::{flatten_grads, Activation, Mlp, SeededRng, Tensor};
use eigenfind::phantom::ClassLabel;
use eigenfind::IMAGE_PIXELS;

const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-4;
const KINK_MARGIN: f64 = 0.01;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn central_difference(params: &mut [Vec<f64>], pi: usize, k: usize, loss: impl Fn(&[Vec<f64>]) -> f64) -> f64 {
    let orig = params[pi][k];
    params[pi][k] = orig + STEP;
    let lp = loss(params);
    params[pi][k] = orig - STEP;
    let lm = loss(params);
    params[pi][k] = orig;
    (lp - lm) / (2.0 * STEP)
}

fn to_f64(tensors: &[&Tensor]) -> Vec<Vec<f64>> {
    tensors
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                0.2 * x
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

/// `y = act(W x + b)` for a row-major `[out, in]` weight; also tracks the
/// smallest LeakyReLU pre-activation magnitude seen.
fn dense64(w: &[f64], b: &[f64], a: Activation, x: &[f64], min_pre: &mut f64) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let pre = bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            if a == Activation::LeakyRelu {
                *min_pre = min_pre.min(pre.abs());
            }
            act(a, pre)
        })
        .collect()
}

fn mlp64(net: &Mlp, p: &[Vec<f64>], x: &[f64], min_pre: &mut f64) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in net.layers.iter().enumerate() {
        h = dense64(&p[2 * i], &p[2 * i + 1], layer.activation, &h, min_pre);
    }
    h
}

fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_f32(-1.0, 1.0)).collect()
}

fn dot64(a: &[f64], r: &[f32]) -> f64 {
    a.iter().zip(r).map(|(x, &w)| x * f64::from(w)).sum()
}

/// Worst relative error over 20 random dense stacks, weights and inputs included.
pub fn dense_worst_error() -> f64 {
    let mut rng = SeededRng::new(2024);
    let activations = [Activation::LeakyRelu, Activation::Sigmoid, Activation::Identity];
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 20 {
        let last = activations[checked % 3];
        let dims = [
            rng.uniform_u32(2, 6) as usize,
            rng.uniform_u32(2, 6) as usize,
            rng.uniform_u32(1, 4) as usize,
        ];
        let batch = rng.uniform_u32(1, 3) as usize;
        let mut net = Mlp::init(&dims, last, &mut rng);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = rng.uniform_f32(-1.0, 1.0);
            }
        }
        let x = random_vec(&mut rng, batch * dims[0]);
        let r = random_vec(&mut rng, batch * dims[2]);
        let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let loss = |p: &[Vec<f64>], x: &[f64], min_pre: &mut f64| -> f64 {
            let out: Vec<f64> = x.chunks(dims[0]).flat_map(|row| mlp64(&net, p, row, min_pre)).collect();
            dot64(&out, &r)
        };
        let mut params = to_f64(&net.params());
        let mut min_pre = f64::INFINITY;
        loss(&params, &x64, &mut min_pre);
        if min_pre < KINK_MARGIN {
            continue;
        }

        let input = Tensor::from_vec(&[batch, dims[0]], x.clone()).unwrap();
        let (out, cache) = net.forward(&input).unwrap();
        let upstream = Tensor::from_vec(out.shape(), r.clone()).unwrap();
        let (grads, dx) = net.backward(&cache, &upstream, true).unwrap();
        let grads = flatten_grads(grads);

        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let numeric = central_difference(&mut params, pi, k, |p| loss(p, &x64, &mut { f64::INFINITY }));
                worst = worst.max(rel_err(f64::from(g.data()[k]), numeric));
            }
        }
        let mut xs = vec![x64.clone()];
        for k in 0..x64.len() {
            let numeric = central_difference(&mut xs, 0, k, |xv| loss(&params, &xv[0], &mut { f64::INFINITY }));
            worst = worst.max(rel_err(f64::from(dx.data()[k]), numeric));
        }
        checked += 1;
    }
    worst
}

fn tiny_generator(rng: &mut SeededRng) -> Generator {
    let config = GeneratorConfig {
        z_dim: 3,
        w_dim: 3,
        embed_dim: 2,
        mapping_hidden: 4,
        channels: 3,
        stages: 3,
    };
    let mut g = Generator::init(config, rng);
    for p in g.params_mut() {
        for v in p.data_mut() {
            *v = rng.uniform_f32(-1.0, 1.0);
        }
    }
    g
}

/// Reference forward of the whole generator (mapping included) in f64,
/// evaluated only at the requested output pixels.
fn generator64(
    cfg: &GeneratorConfig,
    p: &[Vec<f64>],
    z: &[f64],
    y: ClassLabel,
    pixels: &[usize],
    min_pre: &mut f64,
) -> Vec<f64> {
    let e = cfg.embed_dim;
    let emb = &p[0][y.index() * e..(y.index() + 1) * e];
    let mut input: Vec<f64> = z.to_vec();
    input.extend_from_slice(emb);
    let h = dense64(&p[1], &p[2], Activation::LeakyRelu, &input, min_pre);
    let w = dense64(&p[3], &p[4], Activation::Identity, &h, min_pre);
    let mut a = w;
    a.extend_from_slice(emb);
    let affines = 5;
    let stages = affines + 2 * cfg.stages;
    let constant = stages + 2 * cfg.stages;
    let mut h = p[constant].clone();
    for l in 0..cfg.stages {
        let s = dense64(&p[affines + 2 * l], &p[affines + 2 * l + 1], Activation::Identity, &a, min_pre);
        let u: Vec<f64> = h.iter().zip(&s).map(|(x, s)| x * s).collect();
        h = dense64(&p[stages + 2 * l], &p[stages + 2 * l + 1], Activation::LeakyRelu, &u, min_pre);
    }
    let c = cfg.channels;
    let (ow, ob) = (&p[constant + 1], &p[constant + 2]);
    pixels
        .iter()
        .map(|&px| {
            let pre = ob[px] + ow[px * c..(px + 1) * c].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            act(Activation::Sigmoid, pre)
        })
        .collect()
}

/// Worst relative error over 20 tiny generators, mapping network included.
pub fn generator_worst_error() -> f64 {
    let mut rng = SeededRng::new(77);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let labels = [ClassLabel::Healthy, ClassLabel::Positive];
    while checked < 20 {
        let g = tiny_generator(&mut rng);
        let cfg = g.config;
        let z = random_vec(&mut rng, labels.len() * cfg.z_dim);
        let z64: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
        // a handful of weighted pixels per sample
        let picks: Vec<Vec<(usize, f32)>> = labels
            .iter()
            .map(|_| (0..6).map(|_| (rng.index(IMAGE_PIXELS), rng.uniform_f32(-1.0, 1.0))).collect())
            .collect();
        let loss = |p: &[Vec<f64>], min_pre: &mut f64| -> f64 {
            let mut total = 0.0;
            for (b, &y) in labels.iter().enumerate() {
                let px: Vec<usize> = picks[b].iter().map(|&(i, _)| i).collect();
                let out = generator64(&cfg, p, &z64[b * cfg.z_dim..(b + 1) * cfg.z_dim], y, &px, min_pre);
                total += out.iter().zip(&picks[b]).map(|(o, &(_, r))| o * f64::from(r)).sum::<f64>();
            }
            total
        };
        let mut params = to_f64(&g.params());
        let mut min_pre = f64::INFINITY;
        loss(&params, &mut min_pre);
        if min_pre < KINK_MARGIN {
            continue;
        }

        let zt = Tensor::from_vec(&[labels.len(), cfg.z_dim], z.clone()).unwrap();
        let (w, map_cache) = g.map_batch(&zt, &labels).unwrap();
        let (img, tape) = g.forward_batch(&w, &labels).unwrap();
        let mut r = vec![0.0f32; img.len()];
        for (b, sample) in picks.iter().enumerate() {
            for &(i, weight) in sample {
                r[b * IMAGE_PIXELS + i] += weight;
            }
        }
        let upstream = Tensor::from_vec(img.shape(), r).unwrap();
        let mut grads = g.zero_grads();
        let dw = g.backward_batch(&tape, &upstream, &mut grads).unwrap();
        g.map_backward(&map_cache, &labels, &dw, &mut grads).unwrap();

        for (pi, grad) in grads.iter().enumerate() {
            let len = grad.len();
            // the output projection is large; sample it
            let ks: Vec<usize> = if len > 64 {
                (0..32).map(|_| rng.index(len)).collect()
            } else {
                (0..len).collect()
            };
            for k in ks {
                let numeric = central_difference(&mut params, pi, k, |p| loss(p, &mut { f64::INFINITY }));
                worst = worst.max(rel_err(f64::from(grad.data()[k]), numeric));
            }
        }
        checked += 1;
    }
    worst
}
