//! Generation policies: content-matched candidate pairs, per-cell sampling
//! probabilities and the stream of original / generated training examples.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::genmodule::{generate, GenerationModel};
use crate::latent::PatchSpace;
use crate::seg::UncertaintyTable;
use crate::synth::Dataset;

pub const DEFAULT_GENERATED_RATE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    RandomCm,
    DistributionMatching,
    HardCase,
    Mixed,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::RandomCm,
        PolicyKind::DistributionMatching,
        PolicyKind::HardCase,
        PolicyKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RandomCm => "random_cm",
            PolicyKind::DistributionMatching => "distribution_matching",
            PolicyKind::HardCase => "hard_case",
            PolicyKind::Mixed => "mixed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn needs_uncertainty(self) -> bool {
        matches!(self, PolicyKind::HardCase | PolicyKind::Mixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Probability of emitting a generated example (`R_a`).
    pub generated_rate: f64,
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, seed: u64) -> Self {
        PolicySpec {
            kind,
            generated_rate: DEFAULT_GENERATED_RATE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.generated_rate) {
            return Err(Error::InvalidArgument(format!(
                "generated rate {} outside [0, 1]",
                self.generated_rate
            )));
        }
        Ok(())
    }
}

/// A generated example in waiting: content of `content_source`, style of
/// `style_source`, landing in `cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenerationCandidate {
    pub content_source: usize,
    pub style_source: usize,
    pub cell: (usize, usize),
}

fn check_space(space: &PatchSpace, dataset: &Dataset) -> Result<()> {
    if space.content.labels.len() != dataset.len() || space.style.labels.len() != dataset.len() {
        return Err(shape_err(
            "patch space vs dataset",
            &[dataset.len()],
            &[space.content.labels.len()],
        ));
    }
    Ok(())
}

/// Labeled patch ids per content cluster, ascending.
fn labeled_by_content(space: &PatchSpace, dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); space.m];
    for id in 0..dataset.len() {
        if dataset.is_labeled(id) {
            rows[space.content.labels[id]].push(id);
        }
    }
    rows
}

/// Every pair with a labeled content source and any other patch of the same
/// content cluster as style source, ordered by content source then style source.
pub fn content_matched_pairs(space: &PatchSpace, dataset: &Dataset) -> Result<Vec<GenerationCandidate>> {
    check_space(space, dataset)?;
    let mut by_content = vec![Vec::new(); space.m];
    for id in 0..dataset.len() {
        by_content[space.content.labels[id]].push(id);
    }
    let mut out = Vec::new();
    for a in 0..dataset.len() {
        if !dataset.is_labeled(a) {
            continue;
        }
        let i = space.content.labels[a];
        for &b in &by_content[i] {
            if b != a {
                out.push(GenerationCandidate {
                    content_source: a,
                    style_source: b,
                    cell: (i, space.style.labels[b]),
                });
            }
        }
    }
    Ok(out)
}

/// Number of candidates landing in each cell, row-major, without enumerating them.
pub fn candidate_counts(space: &PatchSpace) -> Vec<usize> {
    let mut counts = Vec::with_capacity(space.m * space.n);
    for i in 0..space.m {
        let row_labeled: usize = (0..space.n).map(|j| space.cell(i, j).n_label).sum();
        for j in 0..space.n {
            let cell = space.cell(i, j);
            counts.push(row_labeled * cell.members.len() - cell.n_label);
        }
    }
    counts
}

/// Row-major `m x n` sampling probabilities over patch-space cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbTable {
    pub m: usize,
    pub n: usize,
    pub probs: Vec<f64>,
}

impl CellProbTable {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n + j]
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Cell whose cumulative interval contains `u` in `[0, 1)`; never a
    /// zero-probability cell.
    pub fn locate(&self, u: f64) -> (usize, usize) {
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = k;
            if u < acc {
                break;
            }
        }
        (last / self.n, last % self.n)
    }
}

fn normalized_masked(weights: &[f64], counts: &[usize], what: &str) -> Result<Vec<f64>> {
    let masked: Vec<f64> = weights
        .iter()
        .zip(counts)
        .map(|(&w, &c)| if c == 0 { 0.0 } else { w })
        .collect();
    let total: f64 = masked.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegeneratePolicy(format!(
            "{what}: no cell with both positive weight and generation candidates"
        )));
    }
    Ok(masked.into_iter().map(|w| w / total).collect())
}

/// Sampling law over cells for a policy. Cells without generation
/// candidates get probability 0 and the rest are renormalized.
pub fn cell_probs(space: &PatchSpace, kind: PolicyKind, uncertainties: Option<&UncertaintyTable>) -> Result<CellProbTable> {
    let counts = candidate_counts(space);
    let dm = || {
        let w: Vec<f64> = space.cells.iter().map(|c| c.n_unlabel as f64).collect();
        normalized_masked(&w, &counts, "distribution_matching")
    };
    let hc = || {
        let table = uncertainties.ok_or_else(|| {
            Error::InvalidArgument(format!("policy {} requires an uncertainty table", kind.name()))
        })?;
        if (table.m, table.n) != (space.m, space.n) {
            return Err(shape_err("uncertainty table", &[space.m, space.n], &[table.m, table.n]));
        }
        normalized_masked(&table.values, &counts, "hard_case")
    };
    let probs = match kind {
        PolicyKind::RandomCm => normalized_masked(&vec![1.0; counts.len()], &counts, "random_cm")?,
        PolicyKind::DistributionMatching => dm()?,
        PolicyKind::HardCase => hc()?,
        PolicyKind::Mixed => {
            let (d, h) = (dm()?, hc()?);
            d.iter().zip(&h).map(|(a, b)| 0.5 * a + 0.5 * b).collect()
        }
    };
    Ok(CellProbTable {
        m: space.m,
        n: space.n,
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original { patch: usize },
    Generated { content_source: usize, style_source: usize },
}

impl Provenance {
    pub fn is_generated(&self) -> bool {
        matches!(self, Provenance::Generated { .. })
    }

    /// Patch whose mask the example carries.
    pub fn mask_source(&self) -> usize {
        match *self {
            Provenance::Original { patch } => patch,
            Provenance::Generated { content_source, .. } => content_source,
        }
    }
}

/// Outcome of one policy draw before any pixels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub cell: (usize, usize),
    pub provenance: Provenance,
    /// Generated only because the cell had no labeled patch to return.
    pub forced_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub pixels: Vec<f64>,
    pub mask: Vec<u8>,
    pub provenance: Provenance,
    pub cell: (usize, usize),
    pub forced_fallback: bool,
}

/// Random stream `stream` of a policy seed. Streams of one seed are
/// independent ChaCha8 streams over the same key.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws selections and materializes them. Latent codes of every patch are
/// computed once; generated pixels are produced only on demand.
pub struct PolicySampler<'a> {
    model: &'a GenerationModel,
    space: &'a PatchSpace,
    dataset: &'a Dataset,
    probs: CellProbTable,
    spec: PolicySpec,
    labeled_rows: Vec<Vec<usize>>,
    labeled_cells: Vec<Vec<usize>>,
    contents: Vec<Option<Vec<f64>>>,
    styles: Vec<Vec<f64>>,
}

impl<'a> PolicySampler<'a> {
    pub fn new(
        model: &'a GenerationModel,
        space: &'a PatchSpace,
        dataset: &'a Dataset,
        probs: CellProbTable,
        spec: PolicySpec,
    ) -> Result<Self> {
        spec.validate()?;
        check_space(space, dataset)?;
        if (probs.m, probs.n) != (space.m, space.n) {
            return Err(shape_err("probability table", &[space.m, space.n], &[probs.m, probs.n]));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > 1e-9 || probs.probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("probability table sums to {total}")));
        }
        let counts = candidate_counts(space);
        if let Some(k) = (0..counts.len()).find(|&k| probs.probs[k] > 0.0 && counts[k] == 0) {
            return Err(Error::DegeneratePolicy(format!(
                "cell ({}, {}) has probability but no generation candidates",
                k / space.n,
                k % space.n
            )));
        }
        let labeled_rows = labeled_by_content(space, dataset);
        let labeled_cells = space
            .cells
            .iter()
            .map(|c| c.labeled_members(dataset).collect())
            .collect();
        let mut contents = vec![None; dataset.len()];
        for &id in &dataset.labeled_ids {
            contents[id] = Some(model.encode_content(&dataset.patches[id].pixels)?);
        }
        let styles = dataset
            .patches
            .iter()
            .map(|p| model.encode_style(&p.pixels))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicySampler {
            model,
            space,
            dataset,
            probs,
            spec,
            labeled_rows,
            labeled_cells,
            contents,
            styles,
        })
    }

    pub fn probs(&self) -> &CellProbTable {
        &self.probs
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    /// Uniform candidate of cell `(i, j)`: a labeled source of row `i` and a
    /// different member of the cell, by rejection.
    fn draw_candidate<R: Rng + ?Sized>(&self, i: usize, j: usize, rng: &mut R) -> Provenance {
        let sources = &self.labeled_rows[i];
        let members = &self.space.cell(i, j).members;
        loop {
            let a = sources[rng.random_range(0..sources.len())];
            let b = members[rng.random_range(0..members.len())];
            if a != b {
                return Provenance::Generated {
                    content_source: a,
                    style_source: b,
                };
            }
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Selection {
        let (i, j) = self.probs.locate(rng.random::<f64>());
        let generated = rng.random::<f64>() < self.spec.generated_rate;
        if generated {
            return Selection {
                cell: (i, j),
                provenance: self.draw_candidate(i, j, rng),
                forced_fallback: false,
            };
        }
        let labeled = &self.labeled_cells[i * self.space.n + j];
        if labeled.is_empty() {
            log::debug!("cell ({i}, {j}) has no labeled patch; emitting a generated example");
            return Selection {
                cell: (i, j),
                provenance: self.draw_candidate(i, j, rng),
                forced_fallback: true,
            };
        }
        Selection {
            cell: (i, j),
            provenance: Provenance::Original {
                patch: labeled[rng.random_range(0..labeled.len())],
            },
            forced_fallback: false,
        }
    }

    pub fn materialize(&self, selection: &Selection) -> Result<TrainingExample> {
        let pixels = match selection.provenance {
            Provenance::Original { patch } => self.dataset.patches[patch].pixels.clone(),
            Provenance::Generated {
                content_source,
                style_source,
            } => {
                let content = self.contents[content_source]
                    .as_ref()
                    .ok_or_else(|| Error::Internal(format!("content source {content_source} is not labeled")))?;
                generate(self.model, content, &self.styles[style_source])?
            }
        };
        let source = selection.provenance.mask_source();
        let mask = self.dataset.patches[source]
            .mask
            .clone()
            .ok_or_else(|| Error::Internal(format!("patch {source} has no mask")))?;
        Ok(TrainingExample {
            pixels,
            mask,
            provenance: selection.provenance,
            cell: selection.cell,
            forced_fallback: selection.forced_fallback,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingExample> {
        let s = self.select(rng);
        self.materialize(&s)
    }

    /// `count` selections from stream 0 of the spec seed.
    pub fn select_many(&self, count: usize) -> Vec<Selection> {
        let mut rng = substream(self.spec.seed, 0);
        (0..count).map(|_| self.select(&mut rng)).collect()
    }
}

/// One example from an ad-hoc sampler. Prefer [`PolicySampler`] for repeated draws.
pub fn draw_example<R: Rng + ?Sized>(
    model: &GenerationModel,
    space: &PatchSpace,
    dataset: &Dataset,
    probs: &CellProbTable,
    spec: &PolicySpec,
    rng: &mut R,
) -> Result<TrainingExample> {
    PolicySampler::new(model, space, dataset, probs.clone(), *spec)?.draw(rng)
}

/// `count` examples, deterministic in `spec.seed`.
pub fn sample_batch(
    model: &GenerationModel,
    space: &PatchSpace,
    dataset: &Dataset,
    probs: &CellProbTable,
    spec: &PolicySpec,
    count: usize,
) -> Result<Vec<TrainingExample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let sampler = PolicySampler::new(model, space, dataset, probs.clone(), *spec)?;
    sampler
        .select_many(count)
        .iter()
        .map(|s| sampler.materialize(s))
        .collect()
}

/// Tallies of a run of selections.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSummary {
    pub m: usize,
    pub n: usize,
    pub draws: usize,
    pub generated: usize,
    pub original: usize,
    pub forced_fallbacks: usize,
    pub cell_counts: Vec<usize>,
}

impl DrawSummary {
    pub fn new(m: usize, n: usize) -> Self {
        DrawSummary {
            m,
            n,
            draws: 0,
            generated: 0,
            original: 0,
            forced_fallbacks: 0,
            cell_counts: vec![0; m * n],
        }
    }

    pub fn record(&mut self, cell: (usize, usize), provenance: &Provenance, forced: bool) {
        self.draws += 1;
        self.cell_counts[cell.0 * self.n + cell.1] += 1;
        if provenance.is_generated() {
            self.generated += 1;
        } else {
            self.original += 1;
        }
        if forced {
            self.forced_fallbacks += 1;
        }
    }

    pub fn from_selections(m: usize, n: usize, selections: &[Selection]) -> Self {
        let mut s = Self::new(m, n);
        for sel in selections {
            s.record(sel.cell, &sel.provenance, sel.forced_fallback);
        }
        s
    }

    pub fn frequencies(&self) -> Vec<f64> {
        if self.draws == 0 {
            return vec![0.0; self.cell_counts.len()];
        }
        self.cell_counts.iter().map(|&c| c as f64 / self.draws as f64).collect()
    }

    /// Generated share among draws where the rate decided, i.e. excluding
    /// forced fallbacks. `None` when no such draw exists.
    pub fn generated_fraction(&self) -> Option<f64> {
        let free = self.draws - self.forced_fallbacks;
        (free > 0).then(|| (self.generated - self.forced_fallbacks) as f64 / free as f64)
    }
}
