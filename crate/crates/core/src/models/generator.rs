//! Conditional style generator.
//!
//! ```text
//! z ⊕ emb(y) ──mapping──▶ w
//! w ⊕ emb(y) ──affine_l──▶ s_l                       (StyleSpace, m = stages × channels)
//! h_0 = const;  h_{l+1} = LeakyReLU(W_l (h_l ⊙ s_l) + c_l)
//! image = Sigmoid(P h_L + c)                            (output projection, not in StyleSpace)
//! ```

use std::ops::Deref;

use crate::image::{Image, IMAGE_PIXELS};
use crate::nn::{
    flatten_grads, Activation, DenseCache, DenseGrads, DenseLayer, Mlp, MlpCache, NnError, SeededRng,
    Tensor,
};
use crate::phantom::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub embed_dim: usize,
    pub mapping_hidden: usize,
    pub channels: usize,
    pub stages: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: 16,
            w_dim: 16,
            embed_dim: 8,
            mapping_hidden: 64,
            channels: 64,
            stages: 3,
        }
    }
}

impl GeneratorConfig {
    /// Number of StyleSpace channels `m`.
    pub fn style_dim(&self) -> usize {
        self.channels * self.stages
    }
}

/// Point in W-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent(pub Vec<f32>);

impl Deref for Latent {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Concatenated per-stage styles `(s_1, …, s_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector(pub Vec<f32>);

impl Deref for StyleVector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    /// `[2, embed_dim]` label embedding table.
    pub embedding: Tensor,
    pub mapping: Mlp,
    pub affines: Vec<DenseLayer>,
    pub stages: Vec<DenseLayer>,
    /// Learned synthesis input `h_0`.
    pub constant: Tensor,
    pub output: DenseLayer,
}

impl Generator {
    pub fn init(config: GeneratorConfig, rng: &mut SeededRng) -> Self {
        let GeneratorConfig {
            z_dim,
            w_dim,
            embed_dim,
            mapping_hidden,
            channels,
            stages,
        } = config;
        let embedding = Tensor::from_vec(
            &[2, embed_dim],
            (0..2 * embed_dim).map(|_| rng.normal_f32()).collect(),
        )
        .expect("consistent shape");
        let mapping = Mlp::init(&[z_dim + embed_dim, mapping_hidden, w_dim], Activation::Identity, rng);
        let affines = (0..stages)
            .map(|_| {
                let mut a = DenseLayer::init(w_dim + embed_dim, channels, Activation::Identity, rng);
                // styles start around one so the synthesis path is not annihilated
                a.bias.fill(1.0);
                a
            })
            .collect();
        let stage_layers = (0..stages)
            .map(|_| DenseLayer::init(channels, channels, Activation::LeakyRelu, rng))
            .collect();
        let constant = Tensor::from_vec(&[channels], (0..channels).map(|_| rng.normal_f32()).collect())
            .expect("consistent shape");
        let output = DenseLayer::init(channels, IMAGE_PIXELS, Activation::Sigmoid, rng);
        Self {
            config,
            embedding,
            mapping,
            affines,
            stages: stage_layers,
            constant,
            output,
        }
    }

    pub fn style_dim(&self) -> usize {
        self.config.style_dim()
    }

    fn embed(&self, y: ClassLabel) -> &[f32] {
        let e = self.config.embed_dim;
        &self.embedding.data()[y.index() * e..(y.index() + 1) * e]
    }

    fn concat_embed(&self, v: &[f32], y: ClassLabel) -> Vec<f32> {
        let mut a = Vec::with_capacity(v.len() + self.config.embed_dim);
        a.extend_from_slice(v);
        a.extend_from_slice(self.embed(y));
        a
    }

    /// Mapping network: noise plus label embedding to W-space.
    pub fn map(&self, z: &[f32], y: ClassLabel) -> Latent {
        Latent(self.mapping.infer(&self.concat_embed(z, y)))
    }

    /// `s_l = A_l [w ⊕ emb(y)] + b_l`, concatenated over stages.
    pub fn style_of(&self, w: &[f32], y: ClassLabel) -> StyleVector {
        let a = self.concat_embed(w, y);
        let c = self.config.channels;
        let mut s = vec![0.0; self.style_dim()];
        for (affine, chunk) in self.affines.iter().zip(s.chunks_mut(c)) {
            affine.infer(&a, chunk);
        }
        StyleVector(s)
    }

    /// Synthesis from explicit styles, bypassing the affines.
    ///
    /// The label is accepted for interface symmetry; conditioning already
    /// entered through the styles.
    pub fn generate_from_styles(&self, s: &[f32], _y: ClassLabel) -> Result<Image, NnError> {
        if s.len() != self.style_dim() {
            return Err(NnError::Shape(format!(
                "style vector has {} entries, generator expects {}",
                s.len(),
                self.style_dim()
            )));
        }
        let c = self.config.channels;
        let mut h = self.constant.data().to_vec();
        let mut u = vec![0.0; c];
        for (stage, s_l) in self.stages.iter().zip(s.chunks(c)) {
            for ((ui, hi), si) in u.iter_mut().zip(&h).zip(s_l) {
                *ui = hi * si;
            }
            stage.infer(&u, &mut h);
        }
        let mut px = vec![0.0; IMAGE_PIXELS];
        self.output.infer(&h, &mut px);
        Ok(Image::from_pixels(px).expect("fixed size"))
    }

    /// Synthesis for `rows` stacked style vectors; identical to calling
    /// [`Generator::generate_from_styles`] per row.
    pub fn generate_batch_from_styles(&self, styles: &[f32], rows: usize) -> Result<Vec<Image>, NnError> {
        if styles.len() != rows * self.style_dim() {
            return Err(NnError::Shape(format!(
                "{} style entries for {rows} rows of {}",
                styles.len(),
                self.style_dim()
            )));
        }
        let c = self.config.channels;
        let m = self.style_dim();
        let mut h: Vec<f32> = (0..rows).flat_map(|_| self.constant.data().iter().copied()).collect();
        let mut u = vec![0.0; rows * c];
        for (l, stage) in self.stages.iter().enumerate() {
            for r in 0..rows {
                let s_l = &styles[r * m + l * c..r * m + (l + 1) * c];
                for ((ui, hi), si) in u[r * c..(r + 1) * c].iter_mut().zip(&h[r * c..(r + 1) * c]).zip(s_l) {
                    *ui = hi * si;
                }
            }
            stage.infer(&u, &mut h);
        }
        let mut px = vec![0.0; rows * IMAGE_PIXELS];
        self.output.infer(&h, &mut px);
        Ok(px
            .chunks(IMAGE_PIXELS)
            .map(|p| Image::from_pixels(p.to_vec()).expect("fixed size"))
            .collect())
    }

    pub fn generate_from_w(&self, w: &[f32], y: ClassLabel) -> Image {
        let s = self.style_of(w, y);
        self.generate_from_styles(&s, y).expect("style_of yields full-length styles")
    }

    /// The `[m, w_dim]` block of affine weights acting on `w`, stacked over stages.
    ///
    /// Label-embedding columns and biases are excluded.
    pub fn stacked_w_weights(&self) -> Vec<Vec<f64>> {
        let w_dim = self.config.w_dim;
        let in_dim = w_dim + self.config.embed_dim;
        let mut rows = Vec::with_capacity(self.style_dim());
        for affine in &self.affines {
            for r in 0..self.config.channels {
                let row = &affine.weights.data()[r * in_dim..r * in_dim + w_dim];
                rows.push(row.iter().map(|&v| f64::from(v)).collect());
            }
        }
        rows
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.embedding];
        p.extend(self.mapping.params());
        for l in self.affines.iter().chain(&self.stages) {
            p.push(&l.weights);
            p.push(&l.bias);
        }
        p.push(&self.constant);
        p.push(&self.output.weights);
        p.push(&self.output.bias);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.embedding];
        p.extend(self.mapping.params_mut());
        for l in self.affines.iter_mut().chain(self.stages.iter_mut()) {
            p.push(&mut l.weights);
            p.push(&mut l.bias);
        }
        p.push(&mut self.constant);
        p.push(&mut self.output.weights);
        p.push(&mut self.output.bias);
        p
    }

    /// Zeroed gradient buffers in [`Generator::params`] order.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    /// Batched synthesis from W-space that keeps what the backward pass needs.
    pub fn forward_batch(&self, w: &Tensor, labels: &[ClassLabel]) -> Result<(Tensor, SynthesisTape), NnError> {
        let (batch, w_dim) = w.dims2()?;
        if w_dim != self.config.w_dim || labels.len() != batch {
            return Err(NnError::Shape(format!(
                "expected [{batch}, {}] latents with {batch} labels, got {:?} and {} labels",
                self.config.w_dim,
                w.shape(),
                labels.len()
            )));
        }
        let in_dim = w_dim + self.config.embed_dim;
        let mut a = Vec::with_capacity(batch * in_dim);
        for (row, &y) in w.data().chunks(w_dim).zip(labels) {
            a.extend_from_slice(row);
            a.extend_from_slice(self.embed(y));
        }
        let a = Tensor::from_vec(&[batch, in_dim], a)?;
        let c = self.config.channels;
        let mut styles = Vec::with_capacity(self.config.stages);
        let mut affine_caches = Vec::with_capacity(self.config.stages);
        for affine in &self.affines {
            let (s, cache) = affine.forward(&a)?;
            styles.push(s);
            affine_caches.push(cache);
        }
        let mut h = Tensor::from_vec(
            &[batch, c],
            (0..batch).flat_map(|_| self.constant.data().iter().copied()).collect(),
        )?;
        let mut hiddens = Vec::with_capacity(self.config.stages);
        let mut stage_caches = Vec::with_capacity(self.config.stages);
        for (stage, s) in self.stages.iter().zip(&styles) {
            let mut u = h.clone();
            for (ui, si) in u.data_mut().iter_mut().zip(s.data()) {
                *ui *= si;
            }
            let (next, cache) = stage.forward(&u)?;
            hiddens.push(h);
            stage_caches.push(cache);
            h = next;
        }
        let (image, output_cache) = self.output.forward(&h)?;
        Ok((
            image,
            SynthesisTape {
                labels: labels.to_vec(),
                styles,
                hiddens,
                affine_caches,
                stage_caches,
                output_cache,
            },
        ))
    }

    /// Reverse pass of [`Generator::forward_batch`].
    ///
    /// Accumulates parameter gradients into `grads` (in [`Generator::params`]
    /// order) and returns the gradient with respect to `w`.
    pub fn backward_batch(
        &self,
        tape: &SynthesisTape,
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor, NnError> {
        let layout = GradLayout::of(self);
        if grads.len() != layout.total {
            return Err(NnError::Shape("gradient buffer does not match generator".into()));
        }
        let batch = tape.labels.len();
        let c = self.config.channels;
        let (out_grads, mut dh) = self.output.backward(&tape.output_cache, upstream, true)?;
        accumulate(grads, layout.output, out_grads.expect("requested"))?;
        let in_dim = self.config.w_dim + self.config.embed_dim;
        let mut da = Tensor::zeros(&[batch, in_dim]);
        for l in (0..self.config.stages).rev() {
            let (stage_grads, du) = self.stages[l].backward(&tape.stage_caches[l], &dh, true)?;
            accumulate(grads, layout.stages + 2 * l, stage_grads.expect("requested"))?;
            let s = &tape.styles[l];
            let h = &tape.hiddens[l];
            let mut dh_prev = Tensor::zeros(&[batch, c]);
            let mut ds = Tensor::zeros(&[batch, c]);
            for i in 0..batch * c {
                dh_prev.data_mut()[i] = du.data()[i] * s.data()[i];
                ds.data_mut()[i] = du.data()[i] * h.data()[i];
            }
            let (aff_grads, da_l) = self.affines[l].backward(&tape.affine_caches[l], &ds, true)?;
            accumulate(grads, layout.affines + 2 * l, aff_grads.expect("requested"))?;
            da.add_assign(&da_l)?;
            dh = dh_prev;
        }
        // h_0 is shared by every sample
        {
            let g = grads[layout.constant].data_mut();
            for row in dh.data().chunks(c) {
                for (gi, v) in g.iter_mut().zip(row) {
                    *gi += v;
                }
            }
        }
        let w_dim = self.config.w_dim;
        let mut dw = Tensor::zeros(&[batch, w_dim]);
        for (b, row) in da.data().chunks(in_dim).enumerate() {
            dw.data_mut()[b * w_dim..(b + 1) * w_dim].copy_from_slice(&row[..w_dim]);
            self.accumulate_embedding(grads, tape.labels[b], &row[w_dim..]);
        }
        Ok(dw)
    }

    fn accumulate_embedding(&self, grads: &mut [Tensor], y: ClassLabel, g: &[f32]) {
        let e = self.config.embed_dim;
        let dst = &mut grads[0].data_mut()[y.index() * e..(y.index() + 1) * e];
        for (d, v) in dst.iter_mut().zip(g) {
            *d += v;
        }
    }

    /// Batched mapping network forward.
    pub fn map_batch(&self, z: &Tensor, labels: &[ClassLabel]) -> Result<(Tensor, MlpCache), NnError> {
        let (batch, z_dim) = z.dims2()?;
        if z_dim != self.config.z_dim || labels.len() != batch {
            return Err(NnError::Shape("mapping input does not match generator".into()));
        }
        let mut input = Vec::with_capacity(batch * (z_dim + self.config.embed_dim));
        for (row, &y) in z.data().chunks(z_dim).zip(labels) {
            input.extend_from_slice(row);
            input.extend_from_slice(self.embed(y));
        }
        let input = Tensor::from_vec(&[batch, z_dim + self.config.embed_dim], input)?;
        self.mapping.forward(&input)
    }

    /// Reverse pass of [`Generator::map_batch`], accumulating into `grads`.
    pub fn map_backward(
        &self,
        cache: &MlpCache,
        labels: &[ClassLabel],
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<(), NnError> {
        let layout = GradLayout::of(self);
        let (mgrads, dinput) = self.mapping.backward(cache, upstream, true)?;
        for (offset, g) in flatten_grads(mgrads).into_iter().enumerate() {
            grads[layout.mapping + offset].add_assign(&g)?;
        }
        let z_dim = self.config.z_dim;
        let width = z_dim + self.config.embed_dim;
        for (row, &y) in dinput.data().chunks(width).zip(labels) {
            self.accumulate_embedding(grads, y, &row[z_dim..]);
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Tensor], at: usize, g: DenseGrads) -> Result<(), NnError> {
    grads[at].add_assign(&g.weights)?;
    grads[at + 1].add_assign(&g.bias)
}

/// Index of each parameter group inside [`Generator::params`].
struct GradLayout {
    mapping: usize,
    affines: usize,
    stages: usize,
    constant: usize,
    output: usize,
    total: usize,
}

impl GradLayout {
    fn of(g: &Generator) -> Self {
        let mapping = 1;
        let affines = mapping + 2 * g.mapping.layers.len();
        let stages = affines + 2 * g.config.stages;
        let constant = stages + 2 * g.config.stages;
        let output = constant + 1;
        Self {
            mapping,
            affines,
            stages,
            constant,
            output,
            total: output + 2,
        }
    }
}

/// Intermediates of one batched synthesis pass.
#[derive(Debug, Clone)]
pub struct SynthesisTape {
    labels: Vec<ClassLabel>,
    styles: Vec<Tensor>,
    hiddens: Vec<Tensor>,
    affine_caches: Vec<DenseCache>,
    stage_caches: Vec<DenseCache>,
    output_cache: DenseCache,
}
