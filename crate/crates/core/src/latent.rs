//! Latent tables, agglomerative clustering and the content x style patch space.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::genmodule::{encode, GenerationModel, LatentPair};
use crate::synth::Dataset;
use crate::tensor::l2_distance;

/// One latent pair per dataset patch, indexed by patch id.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub entries: Vec<LatentPair>,
}

impl LatentTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contents(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|e| e.content.as_slice()).collect()
    }

    pub fn styles(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|e| e.style.as_slice()).collect()
    }
}

/// Encodes every patch, labeled and unlabeled alike.
pub fn embed_all(model: &GenerationModel, dataset: &Dataset) -> Result<LatentTable> {
    let entries = dataset
        .patches
        .iter()
        .map(|p| encode(model, &p.pixels))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentTable { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
    Complete,
    Single,
}

impl Linkage {
    pub fn name(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "average" => Some(Linkage::Average),
            "complete" => Some(Linkage::Complete),
            "single" => Some(Linkage::Single),
            _ => None,
        }
    }

    /// Lance-Williams update for the distance from `k` to the union of `i` and `j`.
    fn merge(self, d_ik: f64, d_jk: f64, n_i: usize, n_j: usize) -> f64 {
        match self {
            Linkage::Average => (n_i as f64 * d_ik + n_j as f64 * d_jk) / (n_i + n_j) as f64,
            Linkage::Complete => d_ik.max(d_jk),
            Linkage::Single => d_ik.min(d_jk),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(k: usize, labels: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("cluster id {bad} out of range for k={k}")));
        }
        Ok(ClusterAssignment { k, labels })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    /// The partition as sorted member lists, sorted by first member.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut parts: Vec<Vec<usize>> = (0..self.k).map(|c| self.members(c)).filter(|m| !m.is_empty()).collect();
        parts.sort();
        parts
    }
}

/// Bottom-up agglomerative clustering with Euclidean distances.
///
/// Clusters live in the slot of their smallest member index. At each step
/// the closest pair merges; among equal distances the lexicographically
/// smallest slot pair wins. Final cluster ids are assigned in order of
/// smallest member.
pub fn agglomerative_cluster(vectors: &[&[f64]], k: usize, linkage: Linkage) -> Result<ClusterAssignment> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} vectors")));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(shape_err("cluster vectors", &[dim], &[v.len()]));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = l2_distance(vectors[i], vectors[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    // Nearest active slot above each row, with the lowest index on ties.
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];
    let rescan = |i: usize, active: &[bool], dist: &[f64], nn: &mut [usize], nn_dist: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_dist[i] = f64::INFINITY;
        for j in i + 1..n {
            if active[j] && dist[i * n + j] < nn_dist[i] {
                nn_dist[i] = dist[i * n + j];
                nn[i] = j;
            }
        }
    };
    for i in 0..n {
        rescan(i, &active, &dist, &mut nn, &mut nn_dist);
    }
    let mut remaining = n;
    while remaining > k {
        let mut best = usize::MAX;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (best == usize::MAX || nn_dist[i] < nn_dist[best]) {
                best = i;
            }
        }
        let (i, j) = (best, nn[best]);
        for kk in 0..n {
            if active[kk] && kk != i && kk != j {
                let d = linkage.merge(dist[i * n + kk], dist[j * n + kk], size[i], size[j]);
                dist[i * n + kk] = d;
                dist[kk * n + i] = d;
            }
        }
        active[j] = false;
        size[i] += size[j];
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
        remaining -= 1;
        for r in 0..n {
            if !active[r] {
                continue;
            }
            if r == i || nn[r] == i || nn[r] == j {
                rescan(r, &active, &dist, &mut nn, &mut nn_dist);
            } else if r < i {
                let d = dist[r * n + i];
                if d < nn_dist[r] || (d == nn_dist[r] && i < nn[r]) {
                    nn_dist[r] = d;
                    nn[r] = i;
                }
            }
        }
    }
    let mut slot_id = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if active[s] {
            slot_id[s] = next;
            next += 1;
        }
    }
    ClusterAssignment::new(k, owner.iter().map(|&o| slot_id[o]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpaceCell {
    pub members: Vec<usize>,
    pub n_label: usize,
    pub n_unlabel: usize,
    pub uncertainty: Option<f64>,
}

impl PatchSpaceCell {
    pub fn unlabeled_members<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = usize> + 'a {
        self.members.iter().copied().filter(move |&i| !dataset.is_labeled(i))
    }

    pub fn labeled_members<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = usize> + 'a {
        self.members.iter().copied().filter(move |&i| dataset.is_labeled(i))
    }
}

/// `m x n` grid of cells, row `i` = content cluster, column `j` = style cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpace {
    pub m: usize,
    pub n: usize,
    pub cells: Vec<PatchSpaceCell>,
    pub content: ClusterAssignment,
    pub style: ClusterAssignment,
}

impl PatchSpace {
    pub fn cell(&self, i: usize, j: usize) -> &PatchSpaceCell {
        &self.cells[i * self.n + j]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut PatchSpaceCell {
        &mut self.cells[i * self.n + j]
    }

    pub fn cell_of(&self, patch: usize) -> (usize, usize) {
        (self.content.labels[patch], self.style.labels[patch])
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.members.len()).sum()
    }
}

pub fn build_patch_space(
    content: &ClusterAssignment,
    style: &ClusterAssignment,
    dataset: &Dataset,
) -> Result<PatchSpace> {
    if content.labels.len() != dataset.len() || style.labels.len() != dataset.len() {
        return Err(shape_err(
            "patch space assignments",
            &[dataset.len(), dataset.len()],
            &[content.labels.len(), style.labels.len()],
        ));
    }
    let (m, n) = (content.k, style.k);
    let mut cells = vec![
        PatchSpaceCell {
            members: Vec::new(),
            n_label: 0,
            n_unlabel: 0,
            uncertainty: None,
        };
        m * n
    ];
    for id in 0..dataset.len() {
        let cell = &mut cells[content.labels[id] * n + style.labels[id]];
        cell.members.push(id);
        if dataset.is_labeled(id) {
            cell.n_label += 1;
        } else {
            cell.n_unlabel += 1;
        }
    }
    Ok(PatchSpace {
        m,
        n,
        cells,
        content: content.clone(),
        style: style.clone(),
    })
}

/// Medoid of a style cluster: the member minimizing the summed Euclidean
/// distance to all members. Returns the position within `members` of the
/// winner; ties go to the earliest position.
pub fn representative_index(members: &[&[f64]]) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::Empty("style cluster"));
    }
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, a) in members.iter().enumerate() {
        let cost: f64 = members.iter().map(|b| l2_distance(a, b)).sum();
        if cost < best_cost {
            best_cost = cost;
            best = i;
        }
    }
    Ok(best)
}

pub fn representative_style(members: &[&[f64]]) -> Result<Vec<f64>> {
    representative_index(members).map(|i| members[i].to_vec())
}

/// Representative style of each of the `n` style clusters, from the latent table.
pub fn representative_styles(space: &PatchSpace, latents: &LatentTable) -> Result<Vec<Vec<f64>>> {
    (0..space.n)
        .map(|j| {
            let ids = space.style.members(j);
            let vs: Vec<&[f64]> = ids.iter().map(|&i| latents.entries[i].style.as_slice()).collect();
            representative_style(&vs)
        })
        .collect()
}

pub fn interpolate_style(s_a: &[f64], s_b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    crate::genmodule::interpolate(s_a, s_b, lambda)
}
