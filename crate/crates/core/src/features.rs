//! Fixed random convolutional feature bank and Gram-matrix style distance.
//!
//! Each layer is a bank of seeded 3x3 filters applied with stride 2, zero
//! padding 1 and a relu. Filters never change after construction.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

const KERNEL: usize = 3;
pub const DEFAULT_INPUT_GAIN: f64 = 4.0;
/// Seed of the bank used by the pipeline. The bank plays the role of a fixed
/// pretrained extractor, so it does not follow the run seed.
pub const STANDARD_BANK_SEED: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub in_channels: usize,
    pub filters: usize,
    /// `[filters][in_channels][3][3]`
    pub weights: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub layers: Vec<FeatureLayer>,
    pub seed: u64,
    /// Pixels are multiplied by this before the first layer.
    pub input_gain: f64,
}

/// Post-relu activations of every layer, channel-major.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    size: usize,
    input: Vec<f64>,
    maps: Vec<Vec<f64>>,
    extents: Vec<usize>,
}

impl FeatureMaps {
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.maps[l]
    }
}

fn conv_extent(size: usize) -> usize {
    (size - 1) / 2 + 1
}

impl FeatureBank {
    /// Two layers with 8 then 16 filters and equal weights `1/L`.
    pub fn new(seed: u64) -> Self {
        Self::with_filters(&[8, 16], seed)
    }

    pub fn standard() -> Self {
        Self::new(STANDARD_BANK_SEED)
    }

    pub fn with_filters(filters: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = 1.0 / filters.len() as f64;
        let mut in_channels = 3;
        let layers = filters
            .iter()
            .map(|&n| {
                let fan_in = (in_channels * KERNEL * KERNEL) as f64;
                let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in)).expect("finite std");
                let weights = (0..n * in_channels * KERNEL * KERNEL)
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                let layer = FeatureLayer {
                    in_channels,
                    filters: n,
                    weights,
                    alpha,
                };
                in_channels = n;
                layer
            })
            .collect();
        FeatureBank {
            layers,
            seed,
            input_gain: DEFAULT_INPUT_GAIN,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs the bank on an interleaved-RGB patch of side `size`.
    pub fn forward(&self, pixels: &[f64], size: usize) -> Result<FeatureMaps> {
        if pixels.len() != size * size * 3 {
            return Err(shape_err("feature bank input", &[size * size * 3], &[pixels.len()]));
        }
        let mut input = vec![0.0; pixels.len()];
        for p in 0..size * size {
            for ch in 0..3 {
                input[ch * size * size + p] = self.input_gain * pixels[p * 3 + ch];
            }
        }
        let mut maps: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut extents = Vec::with_capacity(self.layers.len());
        let mut extent = size;
        for (l, layer) in self.layers.iter().enumerate() {
            let src: &[f64] = if l == 0 { &input } else { &maps[l - 1] };
            let out_extent = conv_extent(extent);
            let out = conv_forward(layer, src, extent, out_extent);
            maps.push(out);
            extents.push(out_extent);
            extent = out_extent;
        }
        Ok(FeatureMaps {
            size,
            input,
            maps,
            extents,
        })
    }

    /// Gram matrix `F F^T` of every layer, each `filters x filters`.
    pub fn grams(&self, features: &FeatureMaps) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| gram(&features.maps[l], layer.filters, features.extents[l] * features.extents[l]))
            .collect()
    }

    pub fn grams_of(&self, pixels: &[f64], size: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.grams(&self.forward(pixels, size)?))
    }

    /// `sum_l alpha_l / (2 N_l^2) * ||a_l - b_l||^2` over two sets of Gram matrices.
    pub fn gram_distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        self.layers
            .iter()
            .zip(a.iter().zip(b))
            .map(|(layer, (ga, gb))| {
                let n = layer.filters as f64;
                let sq: f64 = ga.iter().zip(gb).map(|(x, y)| (x - y) * (x - y)).sum();
                layer.alpha / (2.0 * n * n) * sq
            })
            .sum()
    }

    /// Gradient of [`Self::gram_distance`] with respect to its first argument.
    pub fn gram_distance_grad(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .zip(a.iter().zip(b))
            .map(|(layer, (ga, gb))| {
                let n = layer.filters as f64;
                let k = layer.alpha / (n * n);
                ga.iter().zip(gb).map(|(x, y)| k * (x - y)).collect()
            })
            .collect()
    }

    /// Back-propagates gradients on the Gram matrices to the input pixels
    /// (interleaved RGB layout).
    pub fn backward(&self, features: &FeatureMaps, d_grams: &[Vec<f64>]) -> Vec<f64> {
        let n_layers = self.layers.len();
        let mut d_maps: Vec<Vec<f64>> = features.maps.iter().map(|m| vec![0.0; m.len()]).collect();
        for l in 0..n_layers {
            let layer = &self.layers[l];
            let m = features.extents[l] * features.extents[l];
            let f = &features.maps[l];
            let dj = &d_grams[l];
            // dL/dF = (dJ + dJ^T) F
            for i in 0..layer.filters {
                for j in 0..layer.filters {
                    let coeff = dj[i * layer.filters + j] + dj[j * layer.filters + i];
                    if coeff == 0.0 {
                        continue;
                    }
                    let (fj, di) = (&f[j * m..(j + 1) * m], &mut d_maps[l][i * m..(i + 1) * m]);
                    for (d, &v) in di.iter_mut().zip(fj) {
                        *d += coeff * v;
                    }
                }
            }
        }
        let mut d_input = vec![0.0; features.input.len()];
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let in_extent = if l == 0 { features.size } else { features.extents[l - 1] };
            let mut d_pre = core::mem::take(&mut d_maps[l]);
            for (d, &v) in d_pre.iter_mut().zip(&features.maps[l]) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
            let d_src = conv_backward_input(layer, &d_pre, in_extent, features.extents[l]);
            if l == 0 {
                d_input = d_src;
            } else {
                for (d, s) in d_maps[l - 1].iter_mut().zip(d_src) {
                    *d += s;
                }
            }
        }
        let size = features.size;
        let mut out = vec![0.0; d_input.len()];
        for p in 0..size * size {
            for ch in 0..3 {
                out[p * 3 + ch] = self.input_gain * d_input[ch * size * size + p];
            }
        }
        out
    }
}

fn gram(map: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = map[i * m..(i + 1) * m]
                .iter()
                .zip(&map[j * m..(j + 1) * m])
                .map(|(a, b)| a * b)
                .sum();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

fn conv_forward(layer: &FeatureLayer, src: &[f64], extent: usize, out_extent: usize) -> Vec<f64> {
    let mut out = vec![0.0; layer.filters * out_extent * out_extent];
    let plane = extent * extent;
    for o in 0..layer.filters {
        for r in 0..out_extent {
            for c in 0..out_extent {
                let mut acc = 0.0;
                for i in 0..layer.in_channels {
                    let w = &layer.weights[(o * layer.in_channels + i) * 9..][..9];
                    for kr in 0..KERNEL {
                        let y = (2 * r + kr) as isize - 1;
                        if y < 0 || y >= extent as isize {
                            continue;
                        }
                        for kc in 0..KERNEL {
                            let x = (2 * c + kc) as isize - 1;
                            if x < 0 || x >= extent as isize {
                                continue;
                            }
                            acc += w[kr * KERNEL + kc] * src[i * plane + y as usize * extent + x as usize];
                        }
                    }
                }
                out[(o * out_extent + r) * out_extent + c] = if acc > 0.0 { acc } else { 0.0 };
            }
        }
    }
    out
}

fn conv_backward_input(layer: &FeatureLayer, d_pre: &[f64], extent: usize, out_extent: usize) -> Vec<f64> {
    let plane = extent * extent;
    let mut d_src = vec![0.0; layer.in_channels * plane];
    for o in 0..layer.filters {
        for r in 0..out_extent {
            for c in 0..out_extent {
                let d = d_pre[(o * out_extent + r) * out_extent + c];
                if d == 0.0 {
                    continue;
                }
                for i in 0..layer.in_channels {
                    let w = &layer.weights[(o * layer.in_channels + i) * 9..][..9];
                    for kr in 0..KERNEL {
                        let y = (2 * r + kr) as isize - 1;
                        if y < 0 || y >= extent as isize {
                            continue;
                        }
                        for kc in 0..KERNEL {
                            let x = (2 * c + kc) as isize - 1;
                            if x < 0 || x >= extent as isize {
                                continue;
                            }
                            d_src[i * plane + y as usize * extent + x as usize] += d * w[kr * KERNEL + kc];
                        }
                    }
                }
            }
        }
    }
    d_src
}

/// Gram-matrix style distance between two patches of side `size`.
pub fn style_distance(x: &[f64], y: &[f64], size: usize, bank: &FeatureBank) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err("style_distance", &[x.len()], &[y.len()]));
    }
    let gx = bank.grams_of(x, size)?;
    let gy = bank.grams_of(y, size)?;
    let d = bank.gram_distance(&gx, &gy);
    if !d.is_finite() {
        return Err(Error::NonFinite("style distance".into()));
    }
    Ok(d)
}
