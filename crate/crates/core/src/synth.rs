//! Synthetic patch corpus with known content and style factors.
//!
//! Content factors are blob layouts (factor `k` has `k + 1` blobs of
//! decreasing radius). Style factors map the binary blob template through a
//! per-channel affine color transform followed by a gamma curve, then add
//! Gaussian noise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub patch_size: usize,
    pub n_content_factors: usize,
    pub n_style_factors: usize,
    pub images_per_combination: usize,
    pub noise_sigma: f64,
    /// Scales the random shift, size and rotation of the blob layout; 0 renders
    /// every patch of a content factor with the same geometry.
    pub placement_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            patch_size: 16,
            n_content_factors: 3,
            n_style_factors: 4,
            images_per_combination: 50,
            noise_sigma: 0.02,
            placement_jitter: 0.4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 {
            return Err(Error::InvalidArgument(format!(
                "patch_size must be >= 8, got {}",
                self.patch_size
            )));
        }
        if self.n_content_factors < 2 || self.n_style_factors < 2 {
            return Err(Error::InvalidArgument("factor counts must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.placement_jitter) {
            return Err(Error::InvalidArgument("placement_jitter must be in [0, 1]".into()));
        }
        if self.images_per_combination == 0 {
            return Err(Error::InvalidArgument("images_per_combination must be >= 1".into()));
        }
        Ok(())
    }
}

/// A square RGB patch. Pixels are `size * size * 3` values in `[0, 1]`,
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub source_id: usize,
    pub offset: (usize, usize),
    pub labeled: bool,
    /// Segmentation mask, present iff `labeled`.
    pub mask: Option<Vec<u8>>,
    /// Ground truth kept for evaluation of unlabeled patches; policies never read it.
    pub reference_mask: Option<Vec<u8>>,
    pub true_content: Option<usize>,
    pub true_style: Option<usize>,
}

impl Patch {
    pub fn pixel_len(&self) -> usize {
        self.size * self.size * 3
    }

    /// Mask if labeled, otherwise the hidden reference mask.
    pub fn any_mask(&self) -> Option<&[u8]> {
        self.mask.as_deref().or(self.reference_mask.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patches: Vec<Patch>,
    pub labeled_ids: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset, deriving the labeled/unlabeled index sets from the patch flags.
    pub fn from_patches(patches: Vec<Patch>) -> Result<Self> {
        let size = patches.first().map(|p| p.size);
        for (i, p) in patches.iter().enumerate() {
            if Some(p.size) != size || p.pixels.len() != p.pixel_len() {
                return Err(Error::InvalidArgument(format!("patch {i} has inconsistent extent")));
            }
            if p.labeled != p.mask.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "patch {i}: mask must be present iff labeled"
                )));
            }
        }
        let labeled_ids = (0..patches.len()).filter(|&i| patches[i].labeled).collect();
        let unlabeled_ids = (0..patches.len()).filter(|&i| !patches[i].labeled).collect();
        Ok(Dataset {
            patches,
            labeled_ids,
            unlabeled_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.patches.first().map(|p| p.size)
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.patches[id].labeled
    }
}

/// Target colors for one style factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleTransform {
    pub background: [f64; 3],
    pub foreground: [f64; 3],
    pub gamma: f64,
}

impl StyleTransform {
    /// Noise-free color of a pixel with template value `t` (0 background, 1 foreground).
    pub fn color(&self, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let lin = self.background[ch] + (self.foreground[ch] - self.background[ch]) * t;
            out[ch] = libm::pow(lin.clamp(0.0, 1.0), self.gamma);
        }
        out
    }
}

const PALETTE: [StyleTransform; 8] = [
    StyleTransform { background: [0.93, 0.78, 0.87], foreground: [0.50, 0.18, 0.52], gamma: 1.0 },
    StyleTransform { background: [0.80, 0.84, 0.96], foreground: [0.12, 0.22, 0.60], gamma: 0.8 },
    StyleTransform { background: [0.96, 0.90, 0.70], foreground: [0.62, 0.36, 0.12], gamma: 1.25 },
    StyleTransform { background: [0.68, 0.90, 0.74], foreground: [0.08, 0.42, 0.20], gamma: 1.0 },
    StyleTransform { background: [0.98, 0.98, 0.98], foreground: [0.35, 0.35, 0.35], gamma: 1.5 },
    StyleTransform { background: [0.70, 0.60, 0.85], foreground: [0.25, 0.05, 0.30], gamma: 0.9 },
    StyleTransform { background: [0.88, 0.70, 0.60], foreground: [0.40, 0.20, 0.15], gamma: 1.1 },
    StyleTransform { background: [0.75, 0.95, 0.95], foreground: [0.05, 0.30, 0.45], gamma: 0.7 },
];

pub fn style_transform(style: usize) -> StyleTransform {
    if style < PALETTE.len() {
        return PALETTE[style];
    }
    // Procedural styles beyond the palette: rotate hues of a base stain.
    let phase = style as f64 * 2.399_963;
    let bg = [
        0.8 + 0.15 * libm::sin(phase),
        0.8 + 0.15 * libm::sin(phase + 2.1),
        0.8 + 0.15 * libm::sin(phase + 4.2),
    ];
    let fg = [bg[0] * 0.4, bg[1] * 0.35, bg[2] * 0.45];
    StyleTransform {
        background: bg,
        foreground: fg,
        gamma: 0.8 + 0.1 * (style % 6) as f64,
    }
}

/// Rec. 601 luma.
pub fn luminance(rgb: &[f64]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Random geometry of one rendered patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub shift: (f64, f64),
    pub radius_scale: f64,
    pub rotation: f64,
}

impl Placement {
    fn draw<R: Rng + ?Sized>(rng: &mut R, jitter: f64) -> Self {
        let mut u = || rng.random_range(-1.0..1.0) * jitter;
        Placement {
            shift: (u(), u()),
            radius_scale: 1.0 + 0.08 * u(),
            rotation: 0.25 * u(),
        }
    }
}

/// Binary blob template for a content factor.
pub fn content_template(size: usize, content: usize, placement: &Placement) -> Vec<u8> {
    let scale = size as f64 / 16.0;
    let count = content + 1;
    let radius = (5.5 / libm::sqrt(count as f64) + 0.3) * scale * placement.radius_scale;
    let ring = if count == 1 { 0.0 } else { 4.5 * scale };
    let centre = size as f64 / 2.0;
    let offset_angle = core::f64::consts::FRAC_PI_4 * (content % 2) as f64 + placement.rotation;
    let blobs: Vec<(f64, f64)> = (0..count)
        .map(|q| {
            let a = offset_angle + core::f64::consts::TAU * q as f64 / count as f64;
            (
                centre + placement.shift.0 * scale + ring * libm::sin(a),
                centre + placement.shift.1 * scale + ring * libm::cos(a),
            )
        })
        .collect();
    let mut mask = vec![0u8; size * size];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            if blobs
                .iter()
                .any(|&(by, bx)| (y - by) * (y - by) + (x - bx) * (x - bx) <= radius * radius)
            {
                mask[r * size + c] = 1;
            }
        }
    }
    mask
}

/// Renders one patch deterministically from its factors and per-image seed.
/// Returns `(pixels, mask)`.
pub fn render_patch(
    spec: &SynthSpec,
    content: usize,
    style: usize,
    image_seed: u64,
) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
    let placement = Placement::draw(&mut rng, spec.placement_jitter);
    let mask = content_template(spec.patch_size, content, &placement);
    let transform = style_transform(style);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("sigma >= 0");
    let mut pixels = Vec::with_capacity(mask.len() * 3);
    for &m in &mask {
        let rgb = transform.color(m as f64);
        for v in rgb {
            let n = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            pixels.push((v + n).clamp(0.0, 1.0));
        }
    }
    (pixels, mask)
}

/// SplitMix64 finalizer used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates every (content, style) combination `images_per_combination`
/// times. All patches start labeled; see [`split_labeled`].
pub fn make_synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut patches = Vec::new();
    for content in 0..spec.n_content_factors {
        for style in 0..spec.n_style_factors {
            for _ in 0..spec.images_per_combination {
                let id = patches.len();
                let (pixels, mask) = render_patch(spec, content, style, derive_seed(spec.seed, id as u64));
                patches.push(Patch {
                    size: spec.patch_size,
                    pixels,
                    source_id: id,
                    offset: (0, 0),
                    labeled: true,
                    mask: Some(mask.clone()),
                    reference_mask: Some(mask),
                    true_content: Some(content),
                    true_style: Some(style),
                });
            }
        }
    }
    Dataset::from_patches(patches)
}

/// A full image to be tiled into patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub mask: Option<Vec<u8>>,
}

/// Tiles `image` with `size`-square windows at offsets `0, step, 2*step, ...`
/// along both axes, keeping only windows that fit. Row-major order.
pub fn crop_patches(image: &Image, size: usize, step: usize, source_id: usize) -> Result<Vec<Patch>> {
    if step == 0 || size == 0 {
        return Err(Error::InvalidArgument("size and step must be >= 1".into()));
    }
    if image.pixels.len() != image.height * image.width * 3 {
        return Err(Error::InvalidArgument("image pixel buffer has wrong length".into()));
    }
    if image.height < size || image.width < size {
        return Err(Error::Empty("image smaller than patch size"));
    }
    let mut out = Vec::new();
    for r0 in (0..=image.height - size).step_by(step) {
        for c0 in (0..=image.width - size).step_by(step) {
            let mut pixels = Vec::with_capacity(size * size * 3);
            for r in r0..r0 + size {
                let start = (r * image.width + c0) * 3;
                pixels.extend_from_slice(&image.pixels[start..start + size * 3]);
            }
            let mask = image.mask.as_ref().map(|m| {
                let mut out = Vec::with_capacity(size * size);
                for r in r0..r0 + size {
                    let start = r * image.width + c0;
                    out.extend_from_slice(&m[start..start + size]);
                }
                out
            });
            out.push(Patch {
                size,
                pixels,
                source_id,
                offset: (r0, c0),
                labeled: mask.is_some(),
                mask,
                reference_mask: None,
                true_content: None,
                true_style: None,
            });
        }
    }
    Ok(out)
}

/// Marks a uniform random subset of `floor(fraction * len)` patches (at
/// least one) as labeled. Masks of the remaining patches are moved to
/// `reference_mask`.
pub fn split_labeled(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let n = dataset.len();
    let count = ((fraction * n as f64) as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    for i in sample(&mut rng, n, count).iter() {
        chosen[i] = true;
    }
    let mut patches = dataset.patches.clone();
    for (p, &lab) in patches.iter_mut().zip(&chosen) {
        let mask = p.mask.take().or_else(|| p.reference_mask.clone());
        if p.reference_mask.is_none() {
            p.reference_mask = mask.clone();
        }
        p.labeled = lab && mask.is_some();
        p.mask = if p.labeled { mask } else { None };
    }
    Dataset::from_patches(patches)
}
