//! Style/content generation module: content and style encoders, a
//! generator that recombines the two codes, a patch discriminator, their
//! losses and the alternating training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::features::{FeatureBank, FeatureMaps};
use crate::gradcheck::{grad_check_report, GradCheckReport};
use crate::mlp::{sigmoid, Activation, MlpParams, MlpTrace};
use crate::optim::AdamState;
use crate::synth::{derive_seed, Dataset};
use crate::tensor::{Parameters, Tensor};

/// Probabilities from the discriminator are clamped to `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-7;
/// Any loss component above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub content_dim: usize,
    pub style_dim: usize,
    pub content_hidden: usize,
    pub style_hidden: usize,
    pub generator_hidden: usize,
    /// Number of hidden layers in the generator.
    pub generator_depth: usize,
    pub discriminator_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 16,
            content_dim: 16,
            style_dim: 8,
            content_hidden: 64,
            style_hidden: 64,
            generator_hidden: 128,
            generator_depth: 1,
            discriminator_hidden: 32,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used for gradient checks: 4x4 patches, 2-unit latents.
    pub fn micro() -> Self {
        ModelConfig {
            patch_size: 4,
            content_dim: 2,
            style_dim: 2,
            content_hidden: 5,
            style_hidden: 4,
            generator_hidden: 5,
            generator_depth: 2,
            discriminator_hidden: 4,
        }
    }

    pub fn pixel_len(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationModel {
    pub config: ModelConfig,
    pub content_encoder: MlpParams,
    pub style_encoder: MlpParams,
    pub generator: MlpParams,
    pub discriminator: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub content: Vec<f64>,
    pub style: Vec<f64>,
}

impl GenerationModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = config.pixel_len();
        let t = Activation::Tanh;
        let content_encoder = MlpParams::init(
            &[px, config.content_hidden, config.content_dim],
            &[t, Activation::Identity],
            &mut rng,
        )?;
        let style_encoder = MlpParams::init(
            &[STYLE_STATS, config.style_hidden, config.style_dim],
            &[t, Activation::Identity],
            &mut rng,
        )?;
        if config.generator_depth < 1 {
            return Err(Error::InvalidArgument("generator needs at least one hidden layer".into()));
        }
        let mut gen_sizes = vec![config.content_dim + config.style_dim];
        gen_sizes.extend(core::iter::repeat_n(config.generator_hidden, config.generator_depth));
        gen_sizes.push(px);
        let mut gen_acts = vec![t; config.generator_depth];
        gen_acts.push(Activation::Sigmoid);
        let generator = MlpParams::init(&gen_sizes, &gen_acts, &mut rng)?;
        let discriminator = MlpParams::init(
            &[px, config.discriminator_hidden, 1],
            &[t, Activation::Identity],
            &mut rng,
        )?;
        Self::from_parts(config, content_encoder, style_encoder, generator, discriminator)
    }

    /// Assembles a model from explicit networks, checking that their extents chain.
    pub fn from_parts(
        config: ModelConfig,
        content_encoder: MlpParams,
        style_encoder: MlpParams,
        generator: MlpParams,
        discriminator: MlpParams,
    ) -> Result<Self> {
        let px = config.pixel_len();
        let checks = [
            ("content encoder input", content_encoder.input_dim(), px),
            ("content encoder output", content_encoder.output_dim(), config.content_dim),
            ("style encoder input", style_encoder.input_dim(), STYLE_STATS),
            ("style encoder output", style_encoder.output_dim(), config.style_dim),
            ("generator input", generator.input_dim(), config.content_dim + config.style_dim),
            ("generator output", generator.output_dim(), px),
            ("discriminator input", discriminator.input_dim(), px),
            ("discriminator output", discriminator.output_dim(), 1),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape_err(name, &[want], &[got]));
            }
        }
        Ok(GenerationModel {
            config,
            content_encoder,
            style_encoder,
            generator,
            discriminator,
        })
    }

    pub fn zeros_like(&self) -> Self {
        GenerationModel {
            config: self.config,
            content_encoder: self.content_encoder.zeros_like(),
            style_encoder: self.style_encoder.zeros_like(),
            generator: self.generator.zeros_like(),
            discriminator: self.discriminator.zeros_like(),
        }
    }

    pub fn networks(&self) -> [(&'static str, &MlpParams); 4] {
        [
            ("content_encoder", &self.content_encoder),
            ("style_encoder", &self.style_encoder),
            ("generator", &self.generator),
            ("discriminator", &self.discriminator),
        ]
    }

    fn check_patch(&self, pixels: &[f64]) -> Result<()> {
        if pixels.len() != self.config.pixel_len() {
            return Err(shape_err("patch", &[self.config.pixel_len()], &[pixels.len()]));
        }
        Ok(())
    }

    pub fn encode_content(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.check_patch(pixels)?;
        self.content_encoder.forward(&channel_normalize(pixels).output)
    }

    pub fn encode_style(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.check_patch(pixels)?;
        self.style_encoder.forward(&style_stats(pixels))
    }

    /// Raw generator output before clamping.
    fn decode(&self, content: &[f64], style: &[f64]) -> Result<Vec<f64>> {
        if content.len() != self.config.content_dim {
            return Err(shape_err("content vector", &[self.config.content_dim], &[content.len()]));
        }
        if style.len() != self.config.style_dim {
            return Err(shape_err("style vector", &[self.config.style_dim], &[style.len()]));
        }
        self.generator.forward(&concat(content, style))
    }

    pub fn discriminate(&self, pixels: &[f64]) -> Result<f64> {
        self.check_patch(pixels)?;
        Ok(self.discriminator.forward(pixels)?[0])
    }
}

impl Parameters for GenerationModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.content_encoder.tensors();
        v.extend(self.style_encoder.tensors());
        v.extend(self.generator.tensors());
        v.extend(self.discriminator.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.content_encoder.tensors_mut();
        v.extend(self.style_encoder.tensors_mut());
        v.extend(self.generator.tensors_mut());
        v.extend(self.discriminator.tensors_mut());
        v
    }
}

/// A borrowed subset of networks optimized together.
pub struct ParamGroup<'a>(pub Vec<&'a mut MlpParams>);

impl Parameters for ParamGroup<'_> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.0.iter().flat_map(|m| m.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.0.iter_mut().flat_map(|m| m.tensors_mut()).collect()
    }
}

fn generator_side(m: &mut GenerationModel) -> ParamGroup<'_> {
    ParamGroup(vec![&mut m.content_encoder, &mut m.style_encoder, &mut m.generator])
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

const NORM_EPS: f64 = 1e-4;

/// Patch with every colour channel shifted and scaled to zero mean, unit
/// variance; the content encoder sees only this.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub output: Vec<f64>,
    inv_std: [f64; 3],
}

pub fn channel_normalize(pixels: &[f64]) -> ChannelNorm {
    let count = (pixels.len() / 3) as f64;
    let mut output = pixels.to_vec();
    let mut inv_std = [0.0; 3];
    for ch in 0..3 {
        let mean = pixels.iter().skip(ch).step_by(3).sum::<f64>() / count;
        let var = pixels.iter().skip(ch).step_by(3).map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        inv_std[ch] = 1.0 / libm::sqrt(var + NORM_EPS);
        for v in output.iter_mut().skip(ch).step_by(3) {
            *v = (*v - mean) * inv_std[ch];
        }
    }
    ChannelNorm { output, inv_std }
}

impl ChannelNorm {
    fn backward(&self, d_out: &[f64]) -> Vec<f64> {
        let count = (d_out.len() / 3) as f64;
        let mut d_in = vec![0.0; d_out.len()];
        for ch in 0..3 {
            let (mut sum_d, mut sum_dy) = (0.0, 0.0);
            for (d, y) in d_out.iter().zip(&self.output).skip(ch).step_by(3) {
                sum_d += d;
                sum_dy += d * y;
            }
            let (mean_d, mean_dy) = (sum_d / count, sum_dy / count);
            for ((di, d), y) in d_in.iter_mut().zip(d_out).zip(&self.output).skip(ch).step_by(3) {
                *di = self.inv_std[ch] * (d - mean_d - y * mean_dy);
            }
        }
        d_in
    }
}

/// Length of [`style_stats`].
pub const STYLE_STATS: usize = 9;

/// Colour moments pooled over all pixel positions: the three channel means
/// followed by the six second moments `E[p_i p_j]`, `i <= j`. The style
/// encoder sees only this, so it cannot read the spatial layout.
pub fn style_stats(pixels: &[f64]) -> Vec<f64> {
    let count = (pixels.len() / 3) as f64;
    let mut out = vec![0.0; STYLE_STATS];
    for p in pixels.chunks_exact(3) {
        let mut k = 3;
        for i in 0..3 {
            out[i] += p[i];
            for j in i..3 {
                out[k] += p[i] * p[j];
                k += 1;
            }
        }
    }
    for v in &mut out {
        *v /= count;
    }
    out
}

fn style_stats_backward(pixels: &[f64], d_stats: &[f64]) -> Vec<f64> {
    let count = (pixels.len() / 3) as f64;
    let mut d_in = vec![0.0; pixels.len()];
    for (p, d) in pixels.chunks_exact(3).zip(d_in.chunks_exact_mut(3)) {
        let mut k = 3;
        for i in 0..3 {
            d[i] += d_stats[i] / count;
            for j in i..3 {
                d[i] += d_stats[k] * p[j] / count;
                d[j] += d_stats[k] * p[i] / count;
                k += 1;
            }
        }
    }
    d_in
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(c, s) = (E^c(x), E^s(x))`.
pub fn encode(model: &GenerationModel, pixels: &[f64]) -> Result<LatentPair> {
    Ok(LatentPair {
        content: model.encode_content(pixels)?,
        style: model.encode_style(pixels)?,
    })
}

/// Synthesizes a patch from a content and a style code; output clamped to `[0, 1]`.
pub fn generate(model: &GenerationModel, content: &[f64], style: &[f64]) -> Result<Vec<f64>> {
    let mut out = model.decode(content, style)?;
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `(1 - lambda) * a + lambda * b`.
pub fn interpolate(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if a.len() != b.len() {
        return Err(shape_err("interpolate", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 0.002,
            w2: 1.0,
            w3: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// The three weighted terms of the generator-side objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub style: f64,
    pub gan: f64,
    pub recon: f64,
}

/// `w1 * style + w2 * gan + w3 * recon`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("style", parts.style), ("gan", parts.gan), ("recon", parts.recon)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss component {name}")));
        }
    }
    Ok(weights.w1 * parts.style + weights.w2 * parts.gan + weights.w3 * parts.recon)
}

/// Interpolation-enforcing style matching loss for one pair.
pub fn style_matching_loss(
    model: &GenerationModel,
    x_a: &[f64],
    x_b: &[f64],
    lambda: f64,
    bank: &FeatureBank,
) -> Result<f64> {
    let a = encode(model, x_a)?;
    let s_b = model.encode_style(x_b)?;
    let s_mix = interpolate(&a.style, &s_b, lambda)?;
    let x_g2 = model.decode(&a.content, &s_mix)?;
    let size = model.config.patch_size;
    let g = bank.grams_of(&x_g2, size)?;
    let ga = bank.grams_of(x_a, size)?;
    let gb = bank.grams_of(x_b, size)?;
    let inner = (1.0 - lambda) * bank.gram_distance(&g, &ga) - lambda * bank.gram_distance(&g, &gb);
    Ok(inner.abs())
}

/// Image, content and style reconstruction losses (mean absolute error each).
pub fn reconstruction_losses(
    model: &GenerationModel,
    x: &[f64],
    content: &[f64],
    style: &[f64],
) -> Result<(f64, f64, f64)> {
    let own = encode(model, x)?;
    let x_rec = model.decode(&own.content, &own.style)?;
    let lx = mean_abs_diff(x, &x_rec);
    let x_cs = model.decode(content, style)?;
    let lc = mean_abs_diff(content, &model.encode_content(&x_cs)?);
    let ls = mean_abs_diff(style, &model.style_encoder.forward(&style_stats(&x_cs))?);
    Ok((lx, lc, ls))
}

fn clamped_prob(logit: f64) -> (f64, bool) {
    let p = sigmoid(logit);
    if p < P_CLAMP {
        (P_CLAMP, true)
    } else if p > 1.0 - P_CLAMP {
        (1.0 - P_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Discriminator and (non-saturating) generator losses from raw logits.
pub fn adversarial_from_logits(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let n_real = real.len() as f64;
    let n_fake = fake.len() as f64;
    let d_real: f64 = real.iter().map(|&z| -libm::log(clamped_prob(z).0)).sum::<f64>() / n_real;
    let d_fake: f64 = fake.iter().map(|&z| -libm::log(1.0 - clamped_prob(z).0)).sum::<f64>() / n_fake;
    let g: f64 = fake.iter().map(|&z| -libm::log(clamped_prob(z).0)).sum::<f64>() / n_fake;
    (d_real + d_fake, g)
}

/// `(L_D, L_G)` for real patches and latent codes whose styles were already interpolated.
pub fn adversarial_losses(
    model: &GenerationModel,
    real: &[&[f64]],
    latents: &[LatentPair],
) -> Result<(f64, f64)> {
    if real.len() < 2 || latents.len() < 2 {
        return Err(Error::InvalidArgument("adversarial batch needs at least 2 samples".into()));
    }
    let real_logits = real.iter().map(|x| model.discriminate(x)).collect::<Result<Vec<_>>>()?;
    let fake_logits = latents
        .iter()
        .map(|l| model.discriminate(&model.decode(&l.content, &l.style)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(adversarial_from_logits(&real_logits, &fake_logits))
}

/// One training pair: content source, style source and interpolation weight.
#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub lambda: f64,
}

/// Per-component losses of one step, batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub style: f64,
    pub disc: f64,
    pub gen: f64,
    pub recon_x: f64,
    pub recon_c: f64,
    pub recon_s: f64,
}

impl StepLosses {
    pub fn recon(&self) -> f64 {
        self.recon_x + self.recon_c + self.recon_s
    }

    pub fn parts(&self) -> LossParts {
        LossParts {
            style: self.style,
            gan: self.gen,
            recon: self.recon(),
        }
    }

    fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("style", self.style),
            ("disc", self.disc),
            ("gen", self.gen),
            ("recon_x", self.recon_x),
            ("recon_c", self.recon_c),
            ("recon_s", self.recon_s),
        ]
    }
}

/// Forward traces shared by the discriminator and generator updates.
struct PairPass {
    lambda: f64,
    content: MlpTrace,
    style_a: MlpTrace,
    style_b: MlpTrace,
    s_mix: Vec<f64>,
    mixed: MlpTrace,
    recon: MlpTrace,
}

impl PairPass {
    fn new(model: &GenerationModel, pair: &PairSample<'_>) -> Result<Self> {
        model.check_patch(pair.a)?;
        model.check_patch(pair.b)?;
        if !(0.0..=1.0).contains(&pair.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", pair.lambda)));
        }
        let content = model.content_encoder.forward_trace(&channel_normalize(pair.a).output)?;
        let style_a = model.style_encoder.forward_trace(&style_stats(pair.a))?;
        let style_b = model.style_encoder.forward_trace(&style_stats(pair.b))?;
        let s_mix = interpolate(style_a.output(), style_b.output(), pair.lambda)?;
        let mixed = model.generator.forward_trace(&concat(content.output(), &s_mix))?;
        let recon = model.generator.forward_trace(&concat(content.output(), style_a.output()))?;
        Ok(PairPass {
            lambda: pair.lambda,
            content,
            style_a,
            style_b,
            s_mix,
            mixed,
            recon,
        })
    }

    fn fake(&self) -> &[f64] {
        self.mixed.output()
    }
}

/// Discriminator loss over real `a` patches and interpolated-style fakes.
/// With `through_generator` the gradient also covers the encoders and the
/// generator; otherwise only discriminator entries are filled.
pub fn discriminator_loss_and_grad(
    model: &GenerationModel,
    pairs: &[PairSample<'_>],
    through_generator: bool,
) -> Result<(f64, GenerationModel)> {
    let passes = pairs.iter().map(|p| PairPass::new(model, p)).collect::<Result<Vec<_>>>()?;
    let mut grads = model.zeros_like();
    let loss = discriminator_backward(model, pairs, &passes, through_generator, &mut grads)?;
    Ok((loss, grads))
}

fn discriminator_backward(
    model: &GenerationModel,
    pairs: &[PairSample<'_>],
    passes: &[PairPass],
    through_generator: bool,
    grads: &mut GenerationModel,
) -> Result<f64> {
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    for (pair, pass) in pairs.iter().zip(passes) {
        let real = model.discriminator.forward_trace(pair.a)?;
        let (p_real, clamp_real) = clamped_prob(real.output()[0]);
        loss -= libm::log(p_real) / n;
        let d_real = if clamp_real { 0.0 } else { -(1.0 - p_real) / n };
        model.discriminator.backward(&real, &[d_real], &mut grads.discriminator);

        let fake = model.discriminator.forward_trace(pass.fake())?;
        let (p_fake, clamp_fake) = clamped_prob(fake.output()[0]);
        loss -= libm::log(1.0 - p_fake) / n;
        let d_fake = if clamp_fake { 0.0 } else { p_fake / n };
        let d_x = model.discriminator.backward(&fake, &[d_fake], &mut grads.discriminator);
        if through_generator {
            backprop_mixed(model, pass, &d_x, grads);
        }
    }
    Ok(loss)
}

/// Routes a gradient on the mixed-style output back through G and both encoders.
fn backprop_mixed(model: &GenerationModel, pass: &PairPass, d_out: &[f64], grads: &mut GenerationModel) {
    let cd = model.config.content_dim;
    let d_in = model.generator.backward(&pass.mixed, d_out, &mut grads.generator);
    let (d_c, d_s) = d_in.split_at(cd);
    model.content_encoder.backward(&pass.content, d_c, &mut grads.content_encoder);
    let d_sa: Vec<f64> = d_s.iter().map(|d| (1.0 - pass.lambda) * d).collect();
    let d_sb: Vec<f64> = d_s.iter().map(|d| pass.lambda * d).collect();
    model.style_encoder.backward(&pass.style_a, &d_sa, &mut grads.style_encoder);
    model.style_encoder.backward(&pass.style_b, &d_sb, &mut grads.style_encoder);
}

/// Generator-side objective `w1 L_style + w2 L_G + w3 L_recon` and its gradient.
///
/// Gradients reach all four networks (the discriminator entries come from
/// `L_G`); training applies only the encoder and generator parts. The
/// re-encoding of the mixed output inside `L_c` / `L_s` uses the current
/// encoders as fixed functions: their weights receive no gradient from
/// those two terms, the generator does.
pub fn generator_loss_and_grad(
    model: &GenerationModel,
    bank: &FeatureBank,
    pairs: &[PairSample<'_>],
    weights: &LossWeights,
) -> Result<(StepLosses, GenerationModel)> {
    generator_loss_and_grad_with(model, model, bank, pairs, weights)
}

/// As [`generator_loss_and_grad`], with the re-encoding done by the encoders
/// of `reencoder` (treated as constants).
pub fn generator_loss_and_grad_with(
    model: &GenerationModel,
    reencoder: &GenerationModel,
    bank: &FeatureBank,
    pairs: &[PairSample<'_>],
    weights: &LossWeights,
) -> Result<(StepLosses, GenerationModel)> {
    if reencoder.config != model.config {
        return Err(Error::InvalidArgument("re-encoder config differs from model".into()));
    }
    let passes = pairs.iter().map(|p| PairPass::new(model, p)).collect::<Result<Vec<_>>>()?;
    let mut grads = model.zeros_like();
    let losses = generator_backward(model, reencoder, bank, pairs, &passes, weights, &mut grads)?;
    Ok((losses, grads))
}

fn generator_backward(
    model: &GenerationModel,
    reencoder: &GenerationModel,
    bank: &FeatureBank,
    pairs: &[PairSample<'_>],
    passes: &[PairPass],
    weights: &LossWeights,
    grads: &mut GenerationModel,
) -> Result<StepLosses> {
    let n = pairs.len() as f64;
    let size = model.config.patch_size;
    let cd = model.config.content_dim;
    let mut losses = StepLosses::default();
    let mut scratch = reencoder.zeros_like();
    for (pair, pass) in pairs.iter().zip(passes) {
        let lambda = pass.lambda;
        let x_g2 = pass.fake();
        let mut d_xg2 = vec![0.0; x_g2.len()];
        // Latent targets come from the re-encoder; in training it is `model`
        // itself and the pass already holds them.
        let same = core::ptr::eq(model, reencoder);
        let (c_target, s_target) = if same {
            (pass.content.output().to_vec(), pass.s_mix.clone())
        } else {
            let s_a = reencoder.encode_style(pair.a)?;
            let s_b = reencoder.encode_style(pair.b)?;
            (reencoder.encode_content(pair.a)?, interpolate(&s_a, &s_b, lambda)?)
        };
        let c_a = c_target.as_slice();

        // Style matching.
        let feats: FeatureMaps = bank.forward(x_g2, size)?;
        let g = bank.grams(&feats);
        let ga = bank.grams_of(pair.a, size)?;
        let gb = bank.grams_of(pair.b, size)?;
        let inner = (1.0 - lambda) * bank.gram_distance(&g, &ga) - lambda * bank.gram_distance(&g, &gb);
        losses.style += inner.abs() / n;
        let scale = weights.w1 * sign(inner) / n;
        if scale != 0.0 {
            let da = bank.gram_distance_grad(&g, &ga);
            let db = bank.gram_distance_grad(&g, &gb);
            let dj: Vec<Vec<f64>> = da
                .iter()
                .zip(&db)
                .map(|(la, lb)| {
                    la.iter()
                        .zip(lb)
                        .map(|(x, y)| scale * ((1.0 - lambda) * x - lambda * y))
                        .collect()
                })
                .collect();
            for (d, v) in d_xg2.iter_mut().zip(bank.backward(&feats, &dj)) {
                *d += v;
            }
        }

        // Non-saturating generator loss.
        let disc = model.discriminator.forward_trace(x_g2)?;
        let (p, clamped) = clamped_prob(disc.output()[0]);
        losses.gen -= libm::log(p) / n;
        let dz = if clamped { 0.0 } else { -(1.0 - p) * weights.w2 / n };
        let d_x = model.discriminator.backward(&disc, &[dz], &mut grads.discriminator);
        for (d, v) in d_xg2.iter_mut().zip(d_x) {
            *d += v;
        }

        // Image reconstruction through G(E^c(a), E^s(a)).
        let x_rec = pass.recon.output();
        losses.recon_x += mean_abs_diff(pair.a, x_rec) / n;
        let px = x_rec.len() as f64;
        let d_rec: Vec<f64> = x_rec
            .iter()
            .zip(pair.a)
            .map(|(r, x)| sign(r - x) * weights.w3 / (px * n))
            .collect();
        let d_in = model.generator.backward(&pass.recon, &d_rec, &mut grads.generator);
        model.content_encoder.backward(&pass.content, &d_in[..cd], &mut grads.content_encoder);
        model.style_encoder.backward(&pass.style_a, &d_in[cd..], &mut grads.style_encoder);

        // Latent reconstruction: re-encode the mixed-style output. Targets
        // and re-encoders are constants here.
        let x_norm = channel_normalize(x_g2);
        let c_back = reencoder.content_encoder.forward_trace(&x_norm.output)?;
        losses.recon_c += mean_abs_diff(c_a, c_back.output()) / n;
        let dc_len = c_a.len() as f64;
        let d_cb: Vec<f64> = c_back
            .output()
            .iter()
            .zip(c_a)
            .map(|(o, c)| sign(o - c) * weights.w3 / (dc_len * n))
            .collect();
        let d_norm = reencoder.content_encoder.backward(&c_back, &d_cb, &mut scratch.content_encoder);
        for (d, v) in d_xg2.iter_mut().zip(x_norm.backward(&d_norm)) {
            *d += v;
        }

        let s_back = reencoder.style_encoder.forward_trace(&style_stats(x_g2))?;
        losses.recon_s += mean_abs_diff(&s_target, s_back.output()) / n;
        let ds_len = s_target.len() as f64;
        let d_sb: Vec<f64> = s_back
            .output()
            .iter()
            .zip(&s_target)
            .map(|(o, s)| sign(o - s) * weights.w3 / (ds_len * n))
            .collect();
        let d_stats = reencoder.style_encoder.backward(&s_back, &d_sb, &mut scratch.style_encoder);
        for (d, v) in d_xg2.iter_mut().zip(style_stats_backward(x_g2, &d_stats)) {
            *d += v;
        }

        backprop_mixed(model, pass, &d_xg2, grads);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Learning rates decay linearly to this fraction of their start value.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr_generator: 3e-3,
            lr_discriminator: 5e-4,
            final_lr_fraction: 0.03,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        for lr in [self.lr_generator, self.lr_discriminator] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::InvalidArgument("learning rates must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidArgument("final_lr_fraction must be in [0, 1]".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub losses: StepLosses,
    /// Generator-side weighted objective.
    pub total: f64,
}

/// Alternating discriminator / generator training on every patch of `dataset`.
///
/// Each step draws `batch_size` pairs `(a, b)` with `a != b` and a fresh
/// `lambda ~ U[0, 1]` per pair, updates the discriminator on real `a`
/// patches versus interpolated-style fakes, then updates the encoders and
/// the generator on the weighted objective.
pub fn train(
    model: &GenerationModel,
    bank: &FeatureBank,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(GenerationModel, Vec<StepRecord>)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::Empty("training dataset needs at least 2 patches"));
    }
    for p in &dataset.patches {
        model.check_patch(&p.pixels)?;
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gen_opt = AdamState::with_betas(&generator_side(&mut model), config.lr_generator, 0.5, 0.999, 1e-8);
    let mut disc_opt = AdamState::with_betas(&model.discriminator, config.lr_discriminator, 0.5, 0.999, 1e-8);
    let n = dataset.len();
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let pairs: Vec<PairSample<'_>> = (0..config.batch_size)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                PairSample {
                    a: &dataset.patches[a].pixels,
                    b: &dataset.patches[b].pixels,
                    lambda: rng.random::<f64>(),
                }
            })
            .collect();
        let passes = pairs.iter().map(|p| PairPass::new(&model, p)).collect::<Result<Vec<_>>>()?;
        let progress = step as f64 / config.steps as f64;
        let decay = 1.0 - (1.0 - config.final_lr_fraction) * progress;
        disc_opt.lr = config.lr_discriminator * decay;
        gen_opt.lr = config.lr_generator * decay;

        let mut d_grads = model.zeros_like();
        let disc_loss = discriminator_backward(&model, &pairs, &passes, false, &mut d_grads)?;
        disc_opt.update(&mut model.discriminator, &d_grads.discriminator)?;

        let mut g_grads = model.zeros_like();
        let mut losses = generator_backward(&model, &model, bank, &pairs, &passes, &config.weights, &mut g_grads)?;
        losses.disc = disc_loss;
        for (name, v) in losses.components() {
            if !v.is_finite() || v > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    step,
                    component: name,
                    value: v,
                });
            }
        }
        gen_opt.update(&mut generator_side(&mut model), &generator_side(&mut g_grads))?;
        history.push(StepRecord {
            step,
            losses,
            total: total_loss(&losses.parts(), &config.weights)?,
        });
    }
    Ok((model, history))
}

/// Gradient check of one loss on a micro model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradCheck {
    pub loss: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn micro_batch(seed: u64, pixels: usize) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|_| {
            let a = (0..pixels).map(|_| rng.random::<f64>()).collect();
            let b = (0..pixels).map(|_| rng.random::<f64>()).collect();
            (a, b, rng.random::<f64>())
        })
        .collect()
}

/// Finite-difference checks of every training loss on a [`ModelConfig::micro`]
/// model built from `seed`, with three random pairs. The re-encoding inside
/// the latent reconstruction terms is held at the unperturbed model.
pub fn micro_gradient_checks(seed: u64, eps: f64) -> Result<Vec<LossGradCheck>> {
    let model = GenerationModel::new(ModelConfig::micro(), seed)?;
    let bank = FeatureBank::new(derive_seed(seed, 1));
    let data = micro_batch(derive_seed(seed, 2), model.config.pixel_len());
    let pairs: Vec<PairSample<'_>> = data.iter().map(|(a, b, l)| PairSample { a, b, lambda: *l }).collect();
    let cases = [
        ("style", LossWeights { w1: 1.0, w2: 0.0, w3: 0.0 }),
        ("adversarial_generator", LossWeights { w1: 0.0, w2: 1.0, w3: 0.0 }),
        ("reconstruction", LossWeights { w1: 0.0, w2: 0.0, w3: 1.0 }),
        ("total", LossWeights::default()),
    ];
    let mut out = Vec::with_capacity(cases.len() + 1);
    for (name, weights) in cases {
        let report = grad_check_report(
            |m: &GenerationModel| {
                let (l, g) = generator_loss_and_grad_with(m, &model, &bank, &pairs, &weights)?;
                Ok((weights.w1 * l.style + weights.w2 * l.gen + weights.w3 * l.recon(), g))
            },
            &model,
            eps,
        )?;
        out.push(LossGradCheck { loss: name, seed, report });
    }
    let report = grad_check_report(|m: &GenerationModel| discriminator_loss_and_grad(m, &pairs, true), &model, eps)?;
    out.push(LossGradCheck {
        loss: "discriminator",
        seed,
        report,
    });
    Ok(out)
}
