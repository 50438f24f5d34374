//! Greedy counterfactual search over latent directions.
//!
//! Both searches share one core: rank every candidate direction by the mean
//! change it causes in the counter-class score, then greedily apply the best
//! remaining direction to every unexplained image until all images flip or
//! the candidates run out. EigenFind ranks `±v_1..±v_k` from the factorized
//! style space; AttFind ranks `±` every individual style channel.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::models::{predicted_label, ModelBundle};
use crate::nn::softmax;
use crate::phantom::ClassLabel;
use crate::stylespace::{ChannelStats, StyleBasis};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("image {id} is classified {found:?}, search expects {expected:?}")]
    Precondition { id: u64, found: ClassLabel, expected: ClassLabel },
    #[error("duplicate image id {0}")]
    DuplicateId(u64),
    #[error("candidate {0} is not backed by the basis or channel statistics")]
    Candidate(DirectionCandidate),
    #[error("invalid search configuration: {0}")]
    Config(String),
}

/// The frozen models a search queries.
///
/// Implemented by [`ModelBundle`]; tests plug in closed-form stand-ins.
pub trait SearchModels: Sync {
    fn latent_dim(&self) -> usize;
    fn style_dim(&self) -> usize;
    fn encode(&self, x: &Image) -> Vec<f32>;
    fn style_of(&self, w: &[f32], y: ClassLabel) -> Vec<f32>;
    fn generate_from_styles(&self, s: &[f32], y: ClassLabel) -> Image;
    fn logits(&self, x: &Image) -> [f32; 2];

    fn generate_from_w(&self, w: &[f32], y: ClassLabel) -> Image {
        self.generate_from_styles(&self.style_of(w, y), y)
    }

    /// Must agree exactly with per-row [`SearchModels::generate_from_styles`].
    fn generate_batch(&self, styles: &[Vec<f32>], y: ClassLabel) -> Vec<Image> {
        styles.iter().map(|s| self.generate_from_styles(s, y)).collect()
    }

    /// Must agree exactly with per-image [`SearchModels::logits`].
    fn logits_batch(&self, images: &[Image]) -> Vec<[f32; 2]> {
        images.iter().map(|x| self.logits(x)).collect()
    }

    fn probabilities(&self, x: &Image) -> [f32; 2] {
        let p = softmax(&self.logits(x));
        [p[0], p[1]]
    }

    fn predict(&self, x: &Image) -> ClassLabel {
        predicted_label(&self.probabilities(x))
    }
}

impl SearchModels for ModelBundle {
    fn latent_dim(&self) -> usize {
        self.generator.config.w_dim
    }

    fn style_dim(&self) -> usize {
        self.generator.style_dim()
    }

    fn encode(&self, x: &Image) -> Vec<f32> {
        self.encoder.encode(x).0
    }

    fn style_of(&self, w: &[f32], y: ClassLabel) -> Vec<f32> {
        self.generator.style_of(w, y).0
    }

    fn generate_from_styles(&self, s: &[f32], y: ClassLabel) -> Image {
        self.generator
            .generate_from_styles(s, y)
            .expect("search only passes full-length style vectors")
    }

    fn logits(&self, x: &Image) -> [f32; 2] {
        self.classifier.logits(x)
    }

    fn generate_batch(&self, styles: &[Vec<f32>], _y: ClassLabel) -> Vec<Image> {
        let flat: Vec<f32> = styles.iter().flatten().copied().collect();
        self.generator
            .generate_batch_from_styles(&flat, styles.len())
            .expect("search only passes full-length style vectors")
    }

    fn logits_batch(&self, images: &[Image]) -> Vec<[f32; 2]> {
        self.classifier.logits_batch(images)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Eigen,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f32 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(format!("sign must be +1 or -1, got {other}")),
        }
    }
}

/// A signed eigen-direction (`index` 1-based) or a signed style channel
/// (`index` 0-based).
///
/// Ordering is the greedy tie-break order: eigen before channel, lower index
/// first, plus before minus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectionCandidate {
    pub kind: CandidateKind,
    pub index: usize,
    pub sign: Sign,
}

impl DirectionCandidate {
    pub fn eigen(index: usize, sign: Sign) -> Self {
        Self {
            kind: CandidateKind::Eigen,
            index,
            sign,
        }
    }

    pub fn channel(index: usize, sign: Sign) -> Self {
        Self {
            kind: CandidateKind::Channel,
            index,
            sign,
        }
    }
}

impl Ord for DirectionCandidate {
    fn cmp(&self, other: &Self) -> Ordering {
        let key = |c: &Self| (c.kind, c.index, c.sign == Sign::Minus);
        key(self).cmp(&key(other))
    }
}

impl PartialOrd for DirectionCandidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for DirectionCandidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = if self.sign == Sign::Plus { '+' } else { '-' };
        match self.kind {
            CandidateKind::Eigen => write!(f, "{s}v{}", self.index),
            CandidateKind::Channel => write!(f, "{s}s{}", self.index),
        }
    }
}

/// `±v_1, ..., ±v_k` in tie-break order.
pub fn eigen_candidates(k: usize) -> Vec<DirectionCandidate> {
    (1..=k)
        .flat_map(|i| [DirectionCandidate::eigen(i, Sign::Plus), DirectionCandidate::eigen(i, Sign::Minus)])
        .collect()
}

/// `±` every style channel in tie-break order.
pub fn channel_candidates(m: usize) -> Vec<DirectionCandidate> {
    (0..m)
        .flat_map(|c| [DirectionCandidate::channel(c, Sign::Plus), DirectionCandidate::channel(c, Sign::Minus)])
        .collect()
}

/// Scalar the ranking averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaScale {
    /// `P(ȳ | x)`.
    #[default]
    Probability,
    /// Logit margin `ℓ_ȳ − ℓ_y`.
    Logit,
}

impl DeltaScale {
    /// Score and `P(target)` from a logit pair.
    fn score(self, logits: [f32; 2], target: ClassLabel) -> (f64, f32) {
        let p = softmax(&logits)[target.index()];
        let s = match self {
            DeltaScale::Probability => f64::from(p),
            DeltaScale::Logit => f64::from(logits[target.index()]) - f64::from(logits[target.opposite().index()]),
        };
        (s, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub d: f32,
    /// Upper bound on greedy picks; `None` runs until exhaustion.
    pub max_directions: Option<usize>,
    /// Threads for the ranking grid and flip tests; 1 runs on the caller.
    pub parallel_workers: usize,
    pub delta_scale: DeltaScale,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 8,
            d: 10.0,
            max_directions: None,
            parallel_workers: 1,
            delta_scale: DeltaScale::Probability,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k == 0 {
            return Err(SearchError::Config("k must be at least 1".into()));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(SearchError::Config(format!("d must be finite and non-negative, got {}", self.d)));
        }
        Ok(())
    }
}

/// An input image with its stable identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchImage {
    pub id: u64,
    pub image: Image,
}

/// What the candidate perturbations are expressed against.
#[derive(Debug, Clone, Copy)]
pub struct DirectionSpace<'a> {
    pub basis: Option<&'a StyleBasis>,
    pub stats: Option<&'a ChannelStats>,
}

impl DirectionSpace<'_> {
    fn check(&self, c: &DirectionCandidate, latent_dim: usize, style_dim: usize) -> Result<(), SearchError> {
        let ok = match c.kind {
            CandidateKind::Eigen => self
                .basis
                .and_then(|b| b.direction(c.index))
                .is_some_and(|v| v.len() == latent_dim),
            CandidateKind::Channel => c.index < style_dim && self.stats.is_some_and(|s| s.std.len() == style_dim),
        };
        if ok {
            Ok(())
        } else {
            Err(SearchError::Candidate(*c))
        }
    }
}

/// Per-image quantities computed once: `E(x)`, its styles and the baseline score.
struct Encoded {
    w: Vec<f32>,
    s: Vec<f32>,
    baseline: f64,
    baseline_prob: f32,
}

/// Style vector of the encoded image moved along one candidate.
fn perturbed_styles(
    models: &dyn SearchModels,
    w: &[f32],
    s: &[f32],
    y: ClassLabel,
    c: &DirectionCandidate,
    d: f32,
    space: &DirectionSpace<'_>,
) -> Vec<f32> {
    match c.kind {
        CandidateKind::Eigen => {
            let v = space.basis.and_then(|b| b.direction(c.index)).expect("checked candidate");
            let shifted: Vec<f32> = w
                .iter()
                .zip(v)
                .map(|(&wi, &vi)| wi + d * c.sign.value() * vi as f32)
                .collect();
            models.style_of(&shifted, y)
        }
        CandidateKind::Channel => {
            let std = space.stats.expect("checked candidate").std[c.index] as f32;
            let mut shifted = s.to_vec();
            shifted[c.index] += d * c.sign.value() * std;
            shifted
        }
    }
}

/// Rows evaluated per generator/classifier call.
const EVAL_BLOCK: usize = 16;

/// Generates and classifies a block of style vectors, returning images and
/// their logits.
fn evaluate(models: &dyn SearchModels, styles: &[Vec<f32>], y: ClassLabel) -> Vec<(Image, [f32; 2])> {
    let mut out = Vec::with_capacity(styles.len());
    for block in styles.chunks(EVAL_BLOCK) {
        let images = models.generate_batch(block, y);
        let logits = models.logits_batch(&images);
        out.extend(images.into_iter().zip(logits));
    }
    out
}

/// `x̃` for one candidate: the encoded image moved by `d` along the candidate,
/// regenerated under the original label.
pub fn apply_direction(
    models: &dyn SearchModels,
    x: &Image,
    y: ClassLabel,
    candidate: &DirectionCandidate,
    d: f32,
    space: &DirectionSpace<'_>,
) -> Result<Image, SearchError> {
    space.check(candidate, models.latent_dim(), models.style_dim())?;
    let w = models.encode(x);
    let s = models.style_of(&w, y);
    Ok(models.generate_from_styles(&perturbed_styles(models, &w, &s, y, candidate, d, space), y))
}

/// Mean score change per candidate plus the full per-image grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub candidates: Vec<DirectionCandidate>,
    /// Ascending.
    pub image_ids: Vec<u64>,
    /// `delta[i][c]` for image `image_ids[i]` and candidate `candidates[c]`.
    pub delta: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Generator+classifier evaluations, by phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryCounts {
    pub ranking: u64,
    pub baseline: u64,
    pub greedy: u64,
}

impl QueryCounts {
    pub fn total(&self) -> u64 {
        self.ranking + self.baseline + self.greedy
    }
}

#[derive(Default)]
struct Counters {
    ranking: AtomicU64,
    baseline: AtomicU64,
    greedy: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> QueryCounts {
        QueryCounts {
            ranking: self.ranking.load(AtomicOrdering::Relaxed),
            baseline: self.baseline.load(AtomicOrdering::Relaxed),
            greedy: self.greedy.load(AtomicOrdering::Relaxed),
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, AtomicOrdering::Relaxed);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub image_id: u64,
    #[serde(skip)]
    pub counterfactual: Option<Image>,
    pub direction: DirectionCandidate,
    /// `P(ȳ)` on the reconstruction `G(E(x), y)`.
    pub prob_before: f32,
    /// `P(ȳ)` on the counterfactual.
    pub prob_after: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenDirection {
    pub candidate: DirectionCandidate,
    pub mean_delta: f64,
    pub n_flipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Ascending image id.
    pub explained: Vec<Explanation>,
    /// Ascending.
    pub unexplained: Vec<u64>,
    pub delta_table: DeltaTable,
    /// Greedy picks in order.
    pub chosen_directions: Vec<ChosenDirection>,
    pub queries: QueryCounts,
    pub query_count: u64,
    pub wall_ms: f64,
}

impl SearchResult {
    pub fn explained_fraction(&self) -> f64 {
        let n = self.explained.len() + self.unexplained.len();
        if n == 0 {
            0.0
        } else {
            self.explained.len() as f64 / n as f64
        }
    }
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn map_images<T: Send, U: Sync>(parallel: bool, items: &[U], f: impl Fn(&U) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn sorted_images(images: &[SearchImage]) -> Result<Vec<&SearchImage>, SearchError> {
    let mut sorted: Vec<&SearchImage> = images.iter().collect();
    sorted.sort_by_key(|im| im.id);
    for pair in sorted.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(SearchError::DuplicateId(pair[0].id));
        }
    }
    Ok(sorted)
}

fn check_labels(models: &dyn SearchModels, images: &[&SearchImage], y: ClassLabel) -> Result<(), SearchError> {
    for im in images {
        let found = models.predict(&im.image);
        if found != y {
            return Err(SearchError::Precondition {
                id: im.id,
                found,
                expected: y,
            });
        }
    }
    Ok(())
}

struct Ranked {
    table: DeltaTable,
    encoded: Vec<Encoded>,
}

fn encode_all(
    models: &dyn SearchModels,
    images: &[&SearchImage],
    y: ClassLabel,
    scale: DeltaScale,
    parallel: bool,
    counters: &Counters,
) -> Vec<Encoded> {
    let target = y.opposite();
    let prepared: Vec<(Vec<f32>, Vec<f32>)> = map_images(parallel, images, |im| {
        let w = models.encode(&im.image);
        let s = models.style_of(&w, y);
        (w, s)
    });
    let blocks: Vec<&[(Vec<f32>, Vec<f32>)]> = prepared.chunks(EVAL_BLOCK).collect();
    let scored: Vec<Vec<(f64, f32)>> = map_images(parallel, &blocks, |block| {
        let styles: Vec<Vec<f32>> = block.iter().map(|(_, s)| s.clone()).collect();
        evaluate(models, &styles, y)
            .into_iter()
            .map(|(_, logits)| {
                bump(&counters.baseline);
                scale.score(logits, target)
            })
            .collect()
    });
    prepared
        .into_iter()
        .zip(scored.into_iter().flatten())
        .map(|((w, s), (baseline, baseline_prob))| Encoded {
            w,
            s,
            baseline,
            baseline_prob,
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn rank_inner(
    models: &dyn SearchModels,
    images: &[&SearchImage],
    y: ClassLabel,
    candidates: &[DirectionCandidate],
    d: f32,
    space: &DirectionSpace<'_>,
    scale: DeltaScale,
    parallel: bool,
    counters: &Counters,
) -> Ranked {
    let target = y.opposite();
    let encoded = encode_all(models, images, y, scale, parallel, counters);
    let delta: Vec<Vec<f64>> = map_images(parallel, &encoded, |e| {
        let styles: Vec<Vec<f32>> = candidates
            .iter()
            .map(|c| perturbed_styles(models, &e.w, &e.s, y, c, d, space))
            .collect();
        evaluate(models, &styles, y)
            .into_iter()
            .map(|(_, logits)| {
                bump(&counters.ranking);
                scale.score(logits, target).0 - e.baseline
            })
            .collect()
    });
    // ascending-id accumulation keeps the means independent of thread count
    let mut mean = vec![0.0f64; candidates.len()];
    for row in &delta {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = images.len().max(1) as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ranked {
        table: DeltaTable {
            candidates: candidates.to_vec(),
            image_ids: images.iter().map(|im| im.id).collect(),
            delta,
            mean,
        },
        encoded,
    }
}

/// Scores every (image, candidate) pair against the image's reconstruction.
///
/// Performs exactly `|candidates|·|X| + |X|` model evaluations.
pub fn rank_directions(
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    candidates: &[DirectionCandidate],
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
) -> Result<(DeltaTable, QueryCounts), SearchError> {
    config.validate()?;
    let sorted = sorted_images(images)?;
    check_labels(models, &sorted, y)?;
    for c in candidates {
        space.check(c, models.latent_dim(), models.style_dim())?;
    }
    let counters = Counters::default();
    let parallel = config.parallel_workers > 1;
    let ranked = with_pool(config.parallel_workers, || {
        rank_inner(models, &sorted, y, candidates, config.d, space, config.delta_scale, parallel, &counters)
    });
    Ok((ranked.table, counters.snapshot()))
}

/// Index of the best remaining candidate: highest mean, ties to the
/// smallest candidate in tie-break order.
fn argmax(table: &DeltaTable, remaining: &BTreeSet<usize>) -> Option<usize> {
    remaining.iter().copied().reduce(|best, c| {
        match table.mean[c].total_cmp(&table.mean[best]) {
            Ordering::Greater => c,
            Ordering::Less => best,
            Ordering::Equal => {
                if table.candidates[c] < table.candidates[best] {
                    c
                } else {
                    best
                }
            }
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn greedy_inner(
    models: &dyn SearchModels,
    images: &[&SearchImage],
    encoded: &[Encoded],
    y: ClassLabel,
    table: &DeltaTable,
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
    counters: &Counters,
) -> (Vec<Explanation>, Vec<u64>, Vec<ChosenDirection>) {
    let target = y.opposite();
    let parallel = config.parallel_workers > 1;
    let mut remaining_images: Vec<usize> = (0..images.len()).collect();
    let mut remaining: BTreeSet<usize> = (0..table.candidates.len()).collect();
    let mut explained = Vec::new();
    let mut chosen = Vec::new();
    let cap = config.max_directions.unwrap_or(usize::MAX);
    while !remaining_images.is_empty() && chosen.len() < cap {
        let Some(best) = argmax(table, &remaining) else {
            break;
        };
        remaining.remove(&best);
        let candidate = table.candidates[best];
        let blocks: Vec<&[usize]> = remaining_images.chunks(EVAL_BLOCK).collect();
        let trials: Vec<(Image, f32)> = map_images(parallel, &blocks, |block| {
            let styles: Vec<Vec<f32>> = block
                .iter()
                .map(|&i| perturbed_styles(models, &encoded[i].w, &encoded[i].s, y, &candidate, config.d, space))
                .collect();
            evaluate(models, &styles, y)
                .into_iter()
                .map(|(x_tilde, logits)| {
                    bump(&counters.greedy);
                    (x_tilde, softmax(&logits)[target.index()])
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let mut still = Vec::with_capacity(remaining_images.len());
        let mut flipped = 0;
        for (&i, (x_tilde, p)) in remaining_images.iter().zip(trials) {
            if p > 0.5 {
                flipped += 1;
                explained.push(Explanation {
                    image_id: images[i].id,
                    counterfactual: Some(x_tilde),
                    direction: candidate,
                    prob_before: encoded[i].baseline_prob,
                    prob_after: p,
                });
            } else {
                still.push(i);
            }
        }
        remaining_images = still;
        chosen.push(ChosenDirection {
            candidate,
            mean_delta: table.mean[best],
            n_flipped: flipped,
        });
    }
    explained.sort_by_key(|e| e.image_id);
    let unexplained = remaining_images.iter().map(|&i| images[i].id).collect();
    (explained, unexplained, chosen)
}

/// Greedy phase on an existing ranking.
pub fn greedy_explain(
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    table: &DeltaTable,
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let start = Instant::now();
    let sorted = sorted_images(images)?;
    let ids: Vec<u64> = sorted.iter().map(|im| im.id).collect();
    if ids != table.image_ids {
        return Err(SearchError::Config("delta table was ranked on a different image set".into()));
    }
    for c in &table.candidates {
        space.check(c, models.latent_dim(), models.style_dim())?;
    }
    let counters = Counters::default();
    let parallel = config.parallel_workers > 1;
    let (explained, unexplained, chosen) = with_pool(config.parallel_workers, || {
        let encoded = encode_all(models, &sorted, y, config.delta_scale, parallel, &counters);
        greedy_inner(models, &sorted, &encoded, y, table, config, space, &counters)
    });
    let queries = counters.snapshot();
    Ok(SearchResult {
        explained,
        unexplained,
        delta_table: table.clone(),
        chosen_directions: chosen,
        queries,
        query_count: queries.total(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn search(
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    candidates: &[DirectionCandidate],
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let start = Instant::now();
    let sorted = sorted_images(images)?;
    check_labels(models, &sorted, y)?;
    for c in candidates {
        space.check(c, models.latent_dim(), models.style_dim())?;
    }
    let counters = Counters::default();
    let parallel = config.parallel_workers > 1;
    let (table, explained, unexplained, chosen) = with_pool(config.parallel_workers, || {
        let ranked = rank_inner(models, &sorted, y, candidates, config.d, space, config.delta_scale, parallel, &counters);
        let (e, u, c) = greedy_inner(models, &sorted, &ranked.encoded, y, &ranked.table, config, space, &counters);
        (ranked.table, e, u, c)
    });
    let queries = counters.snapshot();
    Ok(SearchResult {
        explained,
        unexplained,
        delta_table: table,
        chosen_directions: chosen,
        queries,
        query_count: queries.total(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Greedy search over `±v_1..±v_k` of `basis`.
pub fn eigen_find(
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    config: &SearchConfig,
    basis: &StyleBasis,
) -> Result<SearchResult, SearchError> {
    if config.k > basis.directions.len() {
        return Err(SearchError::Config(format!(
            "k = {} but the basis holds {} directions",
            config.k,
            basis.directions.len()
        )));
    }
    let space = DirectionSpace {
        basis: Some(basis),
        stats: None,
    };
    search(models, images, y, &eigen_candidates(config.k), config, &space)
}

/// Greedy search over `±` every style channel, scaled by its spread.
pub fn att_find(
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    config: &SearchConfig,
    stats: &ChannelStats,
) -> Result<SearchResult, SearchError> {
    let space = DirectionSpace {
        basis: None,
        stats: Some(stats),
    };
    search(models, images, y, &channel_candidates(models.style_dim()), config, &space)
}

/// Runs `algorithm` with the directions it needs from `space`.
pub fn run(
    algorithm: Algorithm,
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
) -> Result<SearchResult, SearchError> {
    let missing = |what: &str| SearchError::Config(format!("{} needs {what}", algorithm.name()));
    match algorithm {
        Algorithm::EigenFind => eigen_find(models, images, y, config, space.basis.ok_or_else(|| missing("a style basis"))?),
        Algorithm::AttFind => att_find(models, images, y, config, space.stats.ok_or_else(|| missing("channel statistics"))?),
    }
}

/// Explained fraction at one degree of change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: f32,
    pub explained_fraction: f64,
}

/// Explained fraction for every `d` in `grid`, in grid order.
pub fn sweep_d(
    algorithm: Algorithm,
    models: &dyn SearchModels,
    images: &[SearchImage],
    y: ClassLabel,
    config: &SearchConfig,
    space: &DirectionSpace<'_>,
    grid: &[f32],
) -> Result<Vec<SweepPoint>, SearchError> {
    grid.iter()
        .map(|&d| {
            let config = SearchConfig { d, ..config.clone() };
            let result = run(algorithm, models, images, y, &config, space)?;
            Ok(SweepPoint {
                d,
                explained_fraction: result.explained_fraction(),
            })
        })
        .collect()
}

/// Smallest `d` whose explained fraction is within `slack` of the best point.
///
/// Larger moves leave the data manifold sooner, so the cheapest near-best `d`
/// is preferred over the argmax.
pub fn choose_d(points: &[SweepPoint], slack: f64) -> Option<f32> {
    let best = points.iter().map(|p| p.explained_fraction).fold(f64::NEG_INFINITY, f64::max);
    points
        .iter()
        .filter(|p| p.explained_fraction >= best - slack)
        .map(|p| p.d)
        .min_by(f32::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    EigenFind,
    AttFind,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::EigenFind => "eigenfind",
            Algorithm::AttFind => "attfind",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub kind: CandidateKind,
    pub index: usize,
    pub sign: Sign,
    pub mean_delta: f64,
    pub n_flipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub direction: DirectionCandidate,
    pub prob_before: f32,
    pub prob_after: f32,
}

/// On-disk summary of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub pathology: String,
    pub algorithm: String,
    pub n: usize,
    pub n_explained: usize,
    pub explained_pct: f64,
    pub k: usize,
    pub d: f32,
    pub delta_scale: DeltaScale,
    pub query_count: u64,
    pub ranking_queries: u64,
    pub baseline_queries: u64,
    pub greedy_queries: u64,
    pub wall_ms: f64,
    pub chosen_directions: Vec<DirectionRecord>,
    pub per_image: Vec<ImageRecord>,
    pub unexplained: Vec<u64>,
}

/// `100·explained/n` rounded to one decimal.
pub fn explained_pct(n_explained: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (1000.0 * n_explained as f64 / n as f64).round() / 10.0
}

impl SearchReport {
    pub fn new(pathology: &str, algorithm: Algorithm, config: &SearchConfig, result: &SearchResult) -> Self {
        let n = result.explained.len() + result.unexplained.len();
        Self {
            pathology: pathology.to_owned(),
            algorithm: algorithm.name().to_owned(),
            n,
            n_explained: result.explained.len(),
            explained_pct: explained_pct(result.explained.len(), n),
            k: config.k,
            d: config.d,
            delta_scale: config.delta_scale,
            query_count: result.query_count,
            ranking_queries: result.queries.ranking,
            baseline_queries: result.queries.baseline,
            greedy_queries: result.queries.greedy,
            wall_ms: result.wall_ms,
            chosen_directions: result
                .chosen_directions
                .iter()
                .map(|c| DirectionRecord {
                    kind: c.candidate.kind,
                    index: c.candidate.index,
                    sign: c.candidate.sign,
                    mean_delta: c.mean_delta,
                    n_flipped: c.n_flipped,
                })
                .collect(),
            per_image: result
                .explained
                .iter()
                .map(|e| ImageRecord {
                    id: e.image_id,
                    direction: e.direction,
                    prob_before: e.prob_before,
                    prob_after: e.prob_after,
                })
                .collect(),
            unexplained: result.unexplained.clone(),
        }
    }
}
