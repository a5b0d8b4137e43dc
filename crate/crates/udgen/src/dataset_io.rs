//! Dataset directories: one PPM per patch, one PGM per labeled mask and a
//! JSON manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use udgen_core::synth::{Dataset, Patch};

use crate::error::{malformed, read_json, write_json, Result};
use crate::pnm::{read_pgm, read_ppm, write_pgm, write_ppm};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub source_id: usize,
    pub offset: [usize; 2],
    pub labeled: bool,
    pub true_content: Option<usize>,
    pub true_style: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_seed: Option<u64>,
    pub patches: Vec<PatchRecord>,
}

/// Writes `dataset` under `dir`. Pixel values are stored with 8 bits.
pub fn save_dataset(dir: &Path, dataset: &Dataset, root_seed: Option<u64>) -> Result<DatasetManifest> {
    let size = dataset
        .patch_size()
        .ok_or_else(|| malformed(dir, "cannot save an empty dataset"))?;
    let mut records = Vec::with_capacity(dataset.len());
    for (id, patch) in dataset.patches.iter().enumerate() {
        let file = format!("patch_{id:05}.ppm");
        write_ppm(&dir.join(&file), size, size, &patch.pixels)?;
        let mask = match &patch.mask {
            Some(m) => {
                let name = format!("mask_{id:05}.pgm");
                write_pgm(&dir.join(&name), size, size, m)?;
                Some(name)
            }
            None => None,
        };
        records.push(PatchRecord {
            file,
            mask,
            source_id: patch.source_id,
            offset: [patch.offset.0, patch.offset.1],
            labeled: patch.labeled,
            true_content: patch.true_content,
            true_style: patch.true_style,
        });
    }
    let manifest = DatasetManifest {
        patch_size: size,
        root_seed,
        patches: records,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let size = manifest.patch_size;
    let mut patches = Vec::with_capacity(manifest.patches.len());
    for rec in &manifest.patches {
        let path = dir.join(&rec.file);
        let (w, h, pixels) = read_ppm(&path)?;
        if (w, h) != (size, size) {
            return Err(malformed(&path, format!("patch is {w}x{h}, manifest says {size}x{size}")));
        }
        let mask = match &rec.mask {
            Some(name) => {
                let mpath = dir.join(name);
                let (mw, mh, m) = read_pgm(&mpath)?;
                if (mw, mh) != (size, size) {
                    return Err(malformed(&mpath, format!("mask is {mw}x{mh}, manifest says {size}x{size}")));
                }
                Some(m)
            }
            None => None,
        };
        if mask.is_some() != rec.labeled {
            return Err(malformed(&manifest_path, format!("{}: mask must be present iff labeled", rec.file)));
        }
        patches.push(Patch {
            size,
            pixels,
            source_id: rec.source_id,
            offset: (rec.offset[0], rec.offset[1]),
            labeled: rec.labeled,
            mask,
            reference_mask: None,
            true_content: rec.true_content,
            true_style: rec.true_style,
        });
    }
    Ok(Dataset::from_patches(patches)?)
}
