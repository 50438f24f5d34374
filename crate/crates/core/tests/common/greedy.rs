//! Straight-line reference execution of the greedy direction search on tiny
//! models, written against the per-sample model API only.

use std::collections::BTreeMap;

use eigenfind::models::{Classifier, Encoder, Generator, GeneratorConfig, ModelBundle};
use eigenfind::nn::SeededRng;
use eigenfind::phantom::ClassLabel;
use eigenfind::search::{
    att_find, eigen_find, CandidateKind, DirectionCandidate, SearchConfig, SearchImage, SearchResult, Sign,
};
use eigenfind::stylespace::{channel_stats, sefa_factorize, ChannelStats, StyleBasis};
use eigenfind::{Image, IMAGE_PIXELS};

pub const TINY: GeneratorConfig = GeneratorConfig {
    z_dim: 4,
    w_dim: 6,
    embed_dim: 2,
    mapping_hidden: 8,
    channels: 4,
    stages: 3,
};

pub struct Instance {
    pub bundle: ModelBundle,
    pub basis: StyleBasis,
    pub stats: ChannelStats,
    pub images: Vec<SearchImage>,
    pub y: ClassLabel,
    pub k: usize,
    pub d: f32,
}

/// Random tiny models plus up to 10 images all classified alike.
pub fn instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed);
    let generator = Generator::init(TINY, &mut rng.fork(1));
    let encoder = Encoder::with_dims(&[IMAGE_PIXELS, 8, TINY.w_dim], &mut rng.fork(2));
    let classifier = Classifier::with_dims(&[IMAGE_PIXELS, 8, 2], &mut rng.fork(3));
    let mut bundle = ModelBundle {
        classifier,
        generator,
        encoder,
    };
    let n = 2 + rng.index(9);
    // noise images of varying brightness spread out the encoded latents
    let mut images_and_labels: Vec<(Image, ClassLabel)> = (0..4 * n)
        .map(|_| {
            let level = rng.uniform_f32(0.1, 1.0);
            let px: Vec<f32> = (0..IMAGE_PIXELS).map(|_| level * rng.uniform_f32(0.0, 1.0)).collect();
            (Image::from_pixels(px).expect("full image"), ClassLabel::Healthy)
        })
        .collect();
    // put the decision boundary through the middle of the reconstructions,
    // which is where the flip tests happen
    let mut margins: Vec<f32> = images_and_labels
        .iter()
        .map(|(x, _)| {
            let w = bundle.encoder.encode(x);
            let l = bundle.classifier.logits(&bundle.generator.generate_from_w(&w, ClassLabel::Healthy));
            l[1] - l[0]
        })
        .collect();
    margins.sort_by(f32::total_cmp);
    let last = bundle.classifier.net.layers.last_mut().expect("two layers");
    last.bias.data_mut()[1] -= margins[margins.len() / 2];
    for (x, l) in &mut images_and_labels {
        *l = bundle.classifier.classify(x).predicted;
    }
    let pool = images_and_labels;
    let healthy = pool.iter().filter(|(_, l)| *l == ClassLabel::Healthy).count();
    let y = if 2 * healthy >= pool.len() { ClassLabel::Healthy } else { ClassLabel::Positive };
    // shuffled, gappy ids so ordering by id is exercised
    let mut ids: Vec<u64> = (0..pool.len() as u64).map(|i| 3 * i + 1).collect();
    rng.shuffle(&mut ids);
    let images: Vec<SearchImage> = pool
        .into_iter()
        .zip(ids)
        .filter(|((_, l), _)| *l == y)
        .take(n)
        .map(|((image, _), id)| SearchImage { id, image })
        .collect();
    let k = 1 + rng.index(TINY.w_dim);
    let d = [0.25f32, 0.5, 1.0, 2.0][rng.index(4)];
    let basis = sefa_factorize(&bundle.generator, TINY.w_dim).expect("tiny basis");
    let stats = channel_stats(&bundle.generator, 64, seed).expect("tiny stats");
    Instance {
        bundle,
        basis,
        stats,
        images,
        y,
        k,
        d,
    }
}

/// What both implementations must agree on.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub explained: BTreeMap<u64, DirectionCandidate>,
    pub unexplained: Vec<u64>,
    pub chosen: Vec<(DirectionCandidate, usize)>,
    pub means: Vec<f64>,
    pub queries: (u64, u64, u64),
}

pub fn outcome_of(result: &SearchResult) -> Outcome {
    Outcome {
        explained: result.explained.iter().map(|e| (e.image_id, e.direction)).collect(),
        unexplained: result.unexplained.clone(),
        chosen: result.chosen_directions.iter().map(|c| (c.candidate, c.n_flipped)).collect(),
        means: result.delta_table.mean.clone(),
        queries: (result.queries.ranking, result.queries.baseline, result.queries.greedy),
    }
}

fn p_target(bundle: &ModelBundle, x: &Image, target: ClassLabel) -> f32 {
    bundle.classifier.classify(x).prob(target)
}

/// `G(E(x) + d·v, y)` for an eigen candidate, or the encoded style vector
/// with one channel moved by `d` standard deviations.
pub fn counterfactual(
    bundle: &ModelBundle,
    basis: &StyleBasis,
    stats: &ChannelStats,
    x: &Image,
    y: ClassLabel,
    c: &DirectionCandidate,
    d: f32,
) -> Image {
    let g = &bundle.generator;
    let sign = if c.sign == Sign::Plus { 1.0f32 } else { -1.0 };
    let w = bundle.encoder.encode(x).0;
    let s = match c.kind {
        CandidateKind::Eigen => {
            let v = &basis.directions[c.index - 1];
            let moved: Vec<f32> = w.iter().zip(v).map(|(a, b)| a + d * sign * *b as f32).collect();
            g.style_of(&moved, y).0
        }
        CandidateKind::Channel => {
            let mut s = g.style_of(&w, y).0;
            s[c.index] += d * sign * stats.std[c.index] as f32;
            s
        }
    };
    g.generate_from_styles(&s, y).expect("full style vector")
}

/// Literal greedy search: rank every candidate by the mean probability gain over
/// all images, then repeatedly take the best remaining candidate and explain
/// every remaining image it flips.
pub fn reference(inst: &Instance, kind: CandidateKind) -> Outcome {
    let (g, y, target, d) = (&inst.bundle.generator, inst.y, inst.y.opposite(), inst.d);
    let mut candidates = Vec::new();
    let count = match kind {
        CandidateKind::Eigen => inst.k,
        CandidateKind::Channel => TINY.style_dim(),
    };
    for i in 0..count {
        let index = if kind == CandidateKind::Eigen { i + 1 } else { i };
        for sign in [Sign::Plus, Sign::Minus] {
            candidates.push(DirectionCandidate { kind, index, sign });
        }
    }
    let mut images: Vec<&SearchImage> = inst.images.iter().collect();
    images.sort_by_key(|im| im.id);

    let mut queries = (0u64, 0u64, 0u64);
    let perturbed = |x: &Image, c: &DirectionCandidate| counterfactual(&inst.bundle, &inst.basis, &inst.stats, x, y, c, d);

    let mut sums = vec![0.0f64; candidates.len()];
    for im in &images {
        let w = inst.bundle.encoder.encode(&im.image).0;
        let reconstruction = g.generate_from_styles(&g.style_of(&w, y).0, y).expect("full style vector");
        let base = f64::from(p_target(&inst.bundle, &reconstruction, target));
        queries.1 += 1;
        for (ci, c) in candidates.iter().enumerate() {
            sums[ci] += f64::from(p_target(&inst.bundle, &perturbed(&im.image, c), target)) - base;
            queries.0 += 1;
        }
    }
    let n = images.len() as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();

    let mut remaining: Vec<&SearchImage> = images.clone();
    let mut pool: Vec<usize> = (0..candidates.len()).collect();
    let mut explained = BTreeMap::new();
    let mut chosen = Vec::new();
    while !remaining.is_empty() && !pool.is_empty() {
        // first maximum in candidate order wins ties
        let mut best_at = 0;
        for (at, &ci) in pool.iter().enumerate() {
            if means[ci] > means[pool[best_at]] {
                best_at = at;
            }
        }
        let ci = pool.remove(best_at);
        let c = candidates[ci];
        let mut kept = Vec::new();
        let mut flipped = 0;
        for im in remaining {
            queries.2 += 1;
            if inst.bundle.classifier.classify(&perturbed(&im.image, &c)).predicted == target {
                explained.insert(im.id, c);
                flipped += 1;
            } else {
                kept.push(im);
            }
        }
        remaining = kept;
        chosen.push((c, flipped));
    }
    Outcome {
        explained,
        unexplained: remaining.iter().map(|im| im.id).collect(),
        chosen,
        means,
        queries,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceCheck {
    pub instances: usize,
    pub mismatches: usize,
    /// Runs whose explanation needed two or more directions or left images
    /// unexplained; single-pick runs barely exercise the greedy loop.
    pub informative: usize,
}

/// Runs both algorithms against the reference on `count` instances.
pub fn check_instances(count: usize) -> ReferenceCheck {
    let mut out = ReferenceCheck::default();
    for seed in 0..count as u64 {
        let inst = instance(1000 + seed);
        let config = SearchConfig {
            k: inst.k,
            d: inst.d,
            ..SearchConfig::default()
        };
        let eigen = eigen_find(&inst.bundle, &inst.images, inst.y, &config, &inst.basis).expect("eigen search");
        let att = att_find(&inst.bundle, &inst.images, inst.y, &config, &inst.stats).expect("channel search");
        for (result, kind) in [(&eigen, CandidateKind::Eigen), (&att, CandidateKind::Channel)] {
            let got = outcome_of(result);
            let want = reference(&inst, kind);
            out.instances += 1;
            if got != want {
                out.mismatches += 1;
            }
            let flipping = want.chosen.iter().filter(|(_, f)| *f > 0).count();
            if flipping >= 2 || (flipping == 1 && !want.unexplained.is_empty()) {
                out.informative += 1;
            }
        }
    }
    out
}
