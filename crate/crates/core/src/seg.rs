//! Segmenter interface, a toy per-pixel segmenter and the style-transfer
//! prediction-variance table that drives hard-case sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::genmodule::{generate, GenerationModel};
use crate::latent::{representative_styles, LatentTable, PatchSpace, PatchSpaceCell};
use crate::mlp::{sigmoid, Activation, MlpParams};
use crate::optim::AdamState;
use crate::synth::Dataset;

/// Maps an interleaved-RGB patch of side `size` to row-major per-pixel
/// foreground probabilities in `[0, 1]`.
pub trait Segmenter {
    fn segment(&self, pixels: &[f64], size: usize) -> Result<Vec<f64>>;
}

/// Ignores its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSegmenter {
    pub value: f64,
}

impl Segmenter for ConstantSegmenter {
    fn segment(&self, pixels: &[f64], size: usize) -> Result<Vec<f64>> {
        check_patch(pixels, size)?;
        Ok(vec![self.value.clamp(0.0, 1.0); size * size])
    }
}

fn check_patch(pixels: &[f64], size: usize) -> Result<()> {
    if pixels.len() != size * size * 3 {
        return Err(shape_err("segmenter input", &[size * size * 3], &[pixels.len()]));
    }
    Ok(())
}

/// Per-pixel classifier over a `(2r+1) x (2r+1)` RGB window, edges replicated.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySegmenter {
    pub radius: usize,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainConfig {
    pub radius: usize,
    pub hidden: usize,
    pub steps: usize,
    /// Pixels per step.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            radius: 1,
            hidden: 12,
            steps: 3000,
            batch_size: 64,
            lr: 0.01,
            seed: 0,
        }
    }
}

fn window(pixels: &[f64], size: usize, radius: usize, row: usize, col: usize, out: &mut Vec<f64>) {
    out.clear();
    let r = radius as isize;
    let last = size as isize - 1;
    for dr in -r..=r {
        let y = (row as isize + dr).clamp(0, last) as usize;
        for dc in -r..=r {
            let x = (col as isize + dc).clamp(0, last) as usize;
            let p = (y * size + x) * 3;
            out.extend(pixels[p..p + 3].iter().map(|v| v - 0.5));
        }
    }
}

impl ToySegmenter {
    pub fn window_len(&self) -> usize {
        (2 * self.radius + 1) * (2 * self.radius + 1) * 3
    }
}

impl Segmenter for ToySegmenter {
    fn segment(&self, pixels: &[f64], size: usize) -> Result<Vec<f64>> {
        check_patch(pixels, size)?;
        let mut buf = Vec::with_capacity(self.window_len());
        let mut out = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                window(pixels, size, self.radius, row, col, &mut buf);
                out.push(sigmoid(self.mlp.forward(&buf)?[0]));
            }
        }
        Ok(out)
    }
}

/// Trains a [`ToySegmenter`] with binary cross-entropy on randomly drawn
/// pixels of `(pixels, mask)` pairs.
pub fn train_toy_segmenter(examples: &[(&[f64], &[u8])], size: usize, config: &ToyTrainConfig) -> Result<ToySegmenter> {
    if examples.is_empty() {
        return Err(Error::Empty("segmenter training set"));
    }
    if config.steps == 0 || config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::InvalidArgument("segmenter steps, batch size and width must be >= 1".into()));
    }
    for (pixels, mask) in examples {
        check_patch(pixels, size)?;
        if mask.len() != size * size {
            return Err(shape_err("segmenter mask", &[size * size], &[mask.len()]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inputs = (2 * config.radius + 1) * (2 * config.radius + 1) * 3;
    let mlp = MlpParams::init(
        &[inputs, config.hidden, 1],
        &[Activation::Tanh, Activation::Identity],
        &mut rng,
    )?;
    let mut seg = ToySegmenter {
        radius: config.radius,
        mlp,
    };
    let mut opt = AdamState::new(&seg.mlp, config.lr);
    let mut buf = Vec::with_capacity(inputs);
    let scale = 1.0 / config.batch_size as f64;
    for _ in 0..config.steps {
        let mut grads = seg.mlp.zeros_like();
        for _ in 0..config.batch_size {
            let (pixels, mask) = examples[rng.random_range(0..examples.len())];
            let p = rng.random_range(0..size * size);
            window(pixels, size, seg.radius, p / size, p % size, &mut buf);
            let trace = seg.mlp.forward_trace(&buf)?;
            let prob = sigmoid(trace.output()[0]);
            let target = if mask[p] > 0 { 1.0 } else { 0.0 };
            seg.mlp.backward(&trace, &[(prob - target) * scale], &mut grads);
        }
        opt.update(&mut seg.mlp, &grads)?;
    }
    Ok(seg)
}

/// Fraction of pixels whose thresholded prediction matches the mask.
pub fn pixel_accuracy<S: Segmenter + ?Sized>(seg: &S, examples: &[(&[f64], &[u8])], size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("accuracy evaluation set"));
    }
    let mut hits = 0usize;
    for (pixels, mask) in examples {
        let probs = seg.segment(pixels, size)?;
        if mask.len() != probs.len() {
            return Err(shape_err("accuracy mask", &[probs.len()], &[mask.len()]));
        }
        hits += probs.iter().zip(mask.iter()).filter(|(p, m)| (**p >= 0.5) == (**m > 0)).count();
    }
    Ok(hits as f64 / (examples.len() * examples[0].1.len()) as f64)
}

/// Population variance across predictions, per pixel, averaged over pixels.
pub fn mean_pixel_variance(predictions: &[Vec<f64>]) -> f64 {
    let n = predictions.len();
    if n < 2 {
        return 0.0;
    }
    let len = predictions[0].len();
    if len == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in 0..len {
        let mean = predictions.iter().map(|v| v[p]).sum::<f64>() / n as f64;
        total += predictions.iter().map(|v| (v[p] - mean) * (v[p] - mean)).sum::<f64>() / n as f64;
    }
    total / len as f64
}

/// Prediction variance of the cell's unlabeled members when each is
/// re-rendered with every representative style, averaged over members.
/// Zero for cells without unlabeled members and for a single style.
pub fn cell_uncertainty<S: Segmenter + ?Sized>(
    model: &GenerationModel,
    seg: &S,
    dataset: &Dataset,
    cell: &PatchSpaceCell,
    reps: &[Vec<f64>],
) -> Result<f64> {
    if reps.is_empty() {
        return Err(Error::Empty("representative styles"));
    }
    let size = model.config.patch_size;
    let members: Vec<usize> = cell.unlabeled_members(dataset).collect();
    if members.is_empty() {
        log::debug!("cell without unlabeled members: uncertainty set to 0");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &id in &members {
        let content = model.encode_content(&dataset.patches[id].pixels)?;
        let predictions = reps
            .iter()
            .map(|s| seg.segment(&generate(model, &content, s)?, size))
            .collect::<Result<Vec<_>>>()?;
        total += mean_pixel_variance(&predictions);
    }
    Ok(total / members.len() as f64)
}

/// `m x n` grid of cell uncertainties with the unlabeled count of each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTable {
    pub m: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub n_unlabel: Vec<usize>,
}

impl UncertaintyTable {
    pub fn new(m: usize, n: usize, values: Vec<f64>, n_unlabel: Vec<usize>) -> Result<Self> {
        if values.len() != m * n || n_unlabel.len() != m * n {
            return Err(shape_err("uncertainty table", &[m * n, m * n], &[values.len(), n_unlabel.len()]));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("uncertainty {v} is not a finite non-negative value")));
        }
        Ok(UncertaintyTable {
            m,
            n,
            values,
            n_unlabel,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Writes the values into the matching cells of `space`.
    pub fn apply(&self, space: &mut PatchSpace) -> Result<()> {
        if (space.m, space.n) != (self.m, self.n) {
            return Err(shape_err("uncertainty table vs patch space", &[space.m, space.n], &[self.m, self.n]));
        }
        for (cell, &u) in space.cells.iter_mut().zip(&self.values) {
            cell.uncertainty = Some(u);
        }
        Ok(())
    }

    /// Cell coordinates ordered by decreasing uncertainty, ties by index.
    pub fn ranked(&self) -> Vec<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx.into_iter().map(|k| (k / self.n, k % self.n)).collect()
    }
}

/// Uncertainty of every cell. Representative styles are computed once from
/// `latents` and shared by all cells.
pub fn uncertainty_table<S: Segmenter + ?Sized>(
    model: &GenerationModel,
    seg: &S,
    space: &PatchSpace,
    dataset: &Dataset,
    latents: &LatentTable,
) -> Result<UncertaintyTable> {
    if latents.len() != dataset.len() {
        return Err(shape_err("latent table", &[dataset.len()], &[latents.len()]));
    }
    let reps = representative_styles(space, latents)?;
    let values = space
        .cells
        .iter()
        .map(|cell| cell_uncertainty(model, seg, dataset, cell, &reps))
        .collect::<Result<Vec<_>>>()?;
    let n_unlabel = space.cells.iter().map(|c| c.n_unlabel).collect();
    UncertaintyTable::new(space.m, space.n, values, n_unlabel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodule::ModelConfig;
    use crate::latent::{build_patch_space, embed_all, ClusterAssignment};
    use crate::synth::{make_synth_dataset, split_labeled, SynthSpec};

    fn labeled_pairs(ds: &Dataset) -> Vec<(&[f64], &[u8])> {
        ds.labeled_ids
            .iter()
            .map(|&i| (ds.patches[i].pixels.as_slice(), ds.patches[i].mask.as_deref().unwrap()))
            .collect()
    }

    #[test]
    fn variance_matches_hand_computation() {
        let preds = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, 1.0]];
        // pixel 0: mean 0.5, var (0.25 + 0.25 + 0) / 3; pixel 1: 0
        assert!((mean_pixel_variance(&preds) - (0.5 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(mean_pixel_variance(&preds[..1]), 0.0);
        assert_eq!(mean_pixel_variance(&[]), 0.0);
    }

    #[test]
    fn table_validation_and_ranking() {
        assert!(UncertaintyTable::new(1, 2, vec![0.1, -0.1], vec![1, 1]).is_err());
        assert!(UncertaintyTable::new(1, 2, vec![0.1, f64::NAN], vec![1, 1]).is_err());
        assert!(UncertaintyTable::new(1, 2, vec![0.1], vec![1, 1]).is_err());
        let t = UncertaintyTable::new(2, 2, vec![0.2, 0.5, 0.2, 0.1], vec![0; 4]).unwrap();
        assert_eq!(t.ranked(), vec![(0, 1), (0, 0), (1, 0), (1, 1)]);
    }

    #[test]
    fn constant_segmenter_clamps_and_checks_shape() {
        let s = ConstantSegmenter { value: 2.0 };
        assert_eq!(s.segment(&[0.0; 12], 2).unwrap(), vec![1.0; 4]);
        assert!(s.segment(&[0.0; 11], 2).is_err());
    }

    #[test]
    fn toy_segmenter_learns_the_synthetic_masks() {
        let spec = SynthSpec {
            images_per_combination: 10,
            seed: 2,
            ..SynthSpec::default()
        };
        let ds = split_labeled(&make_synth_dataset(&spec).unwrap(), 0.5, 3).unwrap();
        let train = labeled_pairs(&ds);
        let seg = train_toy_segmenter(&train, 16, &ToyTrainConfig::default()).unwrap();
        let held: Vec<(&[f64], &[u8])> = ds
            .unlabeled_ids
            .iter()
            .map(|&i| (ds.patches[i].pixels.as_slice(), ds.patches[i].reference_mask.as_deref().unwrap()))
            .collect();
        let acc = pixel_accuracy(&seg, &held, 16).unwrap();
        assert!(acc >= 0.85, "held-out pixel accuracy {acc}");
        let again = train_toy_segmenter(&train, 16, &ToyTrainConfig::default()).unwrap();
        assert_eq!(seg, again);
    }

    #[test]
    fn constant_segmenter_gives_a_zero_table() {
        let spec = SynthSpec {
            images_per_combination: 4,
            seed: 6,
            ..SynthSpec::default()
        };
        let ds = split_labeled(&make_synth_dataset(&spec).unwrap(), 0.5, 1).unwrap();
        let content = ClusterAssignment::new(3, ds.patches.iter().map(|p| p.true_content.unwrap()).collect()).unwrap();
        let style = ClusterAssignment::new(4, ds.patches.iter().map(|p| p.true_style.unwrap()).collect()).unwrap();
        let mut space = build_patch_space(&content, &style, &ds).unwrap();
        let model = GenerationModel::new(ModelConfig::default(), 4).unwrap();
        let latents = embed_all(&model, &ds).unwrap();
        let table = uncertainty_table(&model, &ConstantSegmenter { value: 0.3 }, &space, &ds, &latents).unwrap();
        assert!(table.values.iter().all(|&v| v == 0.0));
        assert_eq!(table.n_unlabel, space.cells.iter().map(|c| c.n_unlabel).collect::<Vec<_>>());
        table.apply(&mut space).unwrap();
        assert!(space.cells.iter().all(|c| c.uncertainty == Some(0.0)));
    }

    #[test]
    fn cells_without_unlabeled_members_score_zero() {
        let spec = SynthSpec {
            images_per_combination: 2,
            seed: 6,
            ..SynthSpec::default()
        };
        let ds = split_labeled(&make_synth_dataset(&spec).unwrap(), 1.0, 1).unwrap();
        let model = GenerationModel::new(ModelConfig::default(), 4).unwrap();
        let cell = PatchSpaceCell {
            members: vec![0, 1],
            n_label: 2,
            n_unlabel: 0,
            uncertainty: None,
        };
        let seg = ConstantSegmenter { value: 0.5 };
        let reps = vec![vec![0.0; 8], vec![1.0; 8]];
        assert_eq!(cell_uncertainty(&model, &seg, &ds, &cell, &reps).unwrap(), 0.0);
        assert!(cell_uncertainty(&model, &seg, &ds, &cell, &[]).is_err());
    }
}
