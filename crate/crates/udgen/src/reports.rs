//! JSON and text reports: patch space, sampled batches and policy runs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use udgen_core::latent::PatchSpace;
use udgen_core::policy::{CellProbTable, DrawSummary, PolicySpec, Provenance};
use udgen_core::stats::total_variation;

use crate::error::{read_json, write_file, write_json, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    pub n_label: usize,
    pub n_unlabel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpaceReport {
    pub root_seed: u64,
    pub linkage: String,
    pub m: usize,
    pub n: usize,
    pub cells: Vec<CellRecord>,
}

impl PatchSpaceReport {
    pub fn new(space: &PatchSpace, root_seed: u64, linkage: &str) -> Self {
        let cells = (0..space.m)
            .flat_map(|i| (0..space.n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let c = space.cell(i, j);
                CellRecord {
                    i,
                    j,
                    n_label: c.n_label,
                    n_unlabel: c.n_unlabel,
                    uncertainty: c.uncertainty,
                }
            })
            .collect();
        PatchSpaceReport {
            root_seed,
            linkage: linkage.to_string(),
            m: space.m,
            n: space.n,
            cells,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpecRecord {
    pub kind: String,
    pub generated_rate: f64,
    pub seed: u64,
}

impl PolicySpecRecord {
    pub fn new(spec: &PolicySpec) -> Self {
        PolicySpecRecord {
            kind: spec.kind.name().to_string(),
            generated_rate: spec.generated_rate,
            seed: spec.seed,
        }
    }
}

/// One emitted example of a sampled batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub file: String,
    pub mask: String,
    pub cell: [usize; 2],
    pub provenance: String,
    /// Patch id of the original, or of the content source when generated.
    pub source: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_source: Option<usize>,
    pub forced_fallback: bool,
}

impl ExampleRecord {
    pub fn new(index: usize, cell: (usize, usize), provenance: &Provenance, forced_fallback: bool) -> Self {
        let (kind, source, style_source) = match *provenance {
            Provenance::Original { patch } => ("original", patch, None),
            Provenance::Generated {
                content_source,
                style_source,
            } => ("generated", content_source, Some(style_source)),
        };
        ExampleRecord {
            file: format!("example_{index:06}.ppm"),
            mask: format!("example_{index:06}.pgm"),
            cell: [cell.0, cell.1],
            provenance: kind.to_string(),
            source,
            style_source,
            forced_fallback,
        }
    }

    pub fn provenance(&self) -> Option<Provenance> {
        match (self.provenance.as_str(), self.style_source) {
            ("original", None) => Some(Provenance::Original { patch: self.source }),
            ("generated", Some(style_source)) => Some(Provenance::Generated {
                content_source: self.source,
                style_source,
            }),
            _ => None,
        }
    }
}

/// Manifest of a sampled batch directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub root_seed: u64,
    pub policy: PolicySpecRecord,
    pub m: usize,
    pub n: usize,
    /// Row-major cell probabilities used for sampling.
    pub probs: Vec<f64>,
    pub examples: Vec<ExampleRecord>,
}

impl BatchManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(Self::FILE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCellRecord {
    pub i: usize,
    pub j: usize,
    pub prob: f64,
    pub count: usize,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub root_seed: u64,
    pub policy: PolicySpecRecord,
    pub m: usize,
    pub n: usize,
    pub draws: usize,
    pub zero_draws: bool,
    pub generated: usize,
    pub original: usize,
    pub forced_fallbacks: usize,
    /// Generated share among draws not forced by a missing labeled patch.
    pub generated_fraction: Option<f64>,
    /// Total variation between empirical cell frequencies and the table.
    pub tv_distance: Option<f64>,
    pub cells: Vec<PolicyCellRecord>,
}

/// Summarizes a run of draws against the table it was sampled from.
pub fn policy_report(root_seed: u64, spec: &PolicySpecRecord, probs: &CellProbTable, summary: &DrawSummary) -> PolicyReport {
    let freqs = summary.frequencies();
    let zero = summary.draws == 0;
    let cells = (0..probs.m * probs.n)
        .map(|k| PolicyCellRecord {
            i: k / probs.n,
            j: k % probs.n,
            prob: probs.probs[k],
            count: summary.cell_counts[k],
            empirical: freqs[k],
        })
        .collect();
    PolicyReport {
        root_seed,
        policy: spec.clone(),
        m: probs.m,
        n: probs.n,
        draws: summary.draws,
        zero_draws: zero,
        generated: summary.generated,
        original: summary.original,
        forced_fallbacks: summary.forced_fallbacks,
        generated_fraction: summary.generated_fraction(),
        tv_distance: (!zero).then(|| total_variation(&freqs, &probs.probs)),
        cells,
    }
}

impl PolicyReport {
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "root seed: {}", self.root_seed);
        let _ = writeln!(
            t,
            "policy: {} (generated rate {}, seed {})",
            self.policy.kind, self.policy.generated_rate, self.policy.seed
        );
        if self.zero_draws {
            let _ = writeln!(t, "WARNING: zero draws; frequencies and distances are undefined");
        }
        let _ = writeln!(t, "draws: {}", self.draws);
        let _ = writeln!(
            t,
            "generated: {}  original: {}  forced fallbacks: {}",
            self.generated, self.original, self.forced_fallbacks
        );
        match self.generated_fraction {
            Some(f) => {
                let _ = writeln!(t, "generated fraction (excluding fallbacks): {f:.4}");
            }
            None => {
                let _ = writeln!(t, "generated fraction (excluding fallbacks): n/a");
            }
        }
        match self.tv_distance {
            Some(d) => {
                let _ = writeln!(t, "total variation vs table: {d:.4}");
            }
            None => {
                let _ = writeln!(t, "total variation vs table: n/a");
            }
        }
        let _ = writeln!(t);
        let _ = writeln!(t, "{:>4} {:>4} {:>10} {:>10} {:>8}", "i", "j", "prob", "empirical", "count");
        for c in &self.cells {
            let _ = writeln!(t, "{:>4} {:>4} {:>10.4} {:>10.4} {:>8}", c.i, c.j, c.prob, c.empirical, c.count);
        }
        t
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_file(&dir.join("report.txt"), self.to_text().as_bytes())
    }
}
