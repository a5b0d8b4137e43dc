//! CSV tables: latent codes, cluster assignments, uncertainty and training history.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a table back yields bit-identical values.

use std::path::Path;

use udgen_core::genmodule::{LatentPair, StepRecord};
use udgen_core::latent::{ClusterAssignment, LatentTable};
use udgen_core::seg::UncertaintyTable;

use crate::error::{io_err, malformed, write_file, Result};

fn to_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| malformed(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| malformed(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| malformed(path, e))?;
    write_file(path, &bytes)
}

fn from_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r
        .headers()
        .map_err(|e| malformed(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| malformed(path, e))?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| malformed(path, format!("row {}: cannot parse `{field}`", row + 1)))
}

/// Rows must list patch ids 0, 1, 2, ... in order.
fn check_ids(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        let id: usize = parse(path, i, &row[0])?;
        if id != i {
            return Err(malformed(path, format!("row {}: expected patch_id {i}, got {id}", i + 1)));
        }
    }
    Ok(())
}

pub fn write_latents(path: &Path, table: &LatentTable) -> Result<()> {
    let (cd, sd) = table
        .entries
        .first()
        .map(|e| (e.content.len(), e.style.len()))
        .unwrap_or((0, 0));
    let mut header = vec!["patch_id".to_string()];
    header.extend((0..cd).map(|k| format!("c{k}")));
    header.extend((0..sd).map(|k| format!("s{k}")));
    let rows = table.entries.iter().enumerate().map(|(i, e)| {
        let mut row = vec![i.to_string()];
        row.extend(e.content.iter().chain(&e.style).map(|v| v.to_string()));
        row
    });
    to_csv(path, &header, rows)
}

pub fn read_latents(path: &Path) -> Result<LatentTable> {
    let (header, rows) = from_csv(path)?;
    if header.first().map(String::as_str) != Some("patch_id") {
        return Err(malformed(path, "first column must be patch_id"));
    }
    let cd = header.iter().filter(|h| h.starts_with('c')).count();
    let sd = header.iter().filter(|h| h.starts_with('s')).count();
    if cd + sd + 1 != header.len() {
        return Err(malformed(path, "columns must be patch_id, c0.., s0.."));
    }
    check_ids(path, &rows)?;
    let entries = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let vals = row[1..].iter().map(|f| parse::<f64>(path, i, f)).collect::<Result<Vec<_>>>()?;
            Ok(LatentPair {
                content: vals[..cd].to_vec(),
                style: vals[cd..].to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentTable { entries })
}

pub fn write_clusters(path: &Path, assignment: &ClusterAssignment) -> Result<()> {
    let header = ["patch_id".to_string(), "cluster".to_string()];
    let rows = assignment
        .labels
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i.to_string(), c.to_string()]);
    to_csv(path, &header, rows)
}

/// The cluster count is one more than the largest id.
pub fn read_clusters(path: &Path) -> Result<ClusterAssignment> {
    let (header, rows) = from_csv(path)?;
    if header != ["patch_id", "cluster"] {
        return Err(malformed(path, "columns must be patch_id, cluster"));
    }
    check_ids(path, &rows)?;
    let labels = rows
        .iter()
        .enumerate()
        .map(|(i, r)| parse::<usize>(path, i, &r[1]))
        .collect::<Result<Vec<_>>>()?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    ClusterAssignment::new(k, labels).map_err(|e| malformed(path, e))
}

pub fn write_uncertainty(path: &Path, table: &UncertaintyTable) -> Result<()> {
    let header = ["i", "j", "U_ij", "n_unlabel"].map(String::from);
    let rows = (0..table.m).flat_map(|i| {
        (0..table.n).map(move |j| {
            vec![
                i.to_string(),
                j.to_string(),
                table.get(i, j).to_string(),
                table.n_unlabel[i * table.n + j].to_string(),
            ]
        })
    });
    to_csv(path, &header, rows)
}

/// Expects every `(i, j)` of the grid exactly once, row-major.
pub fn read_uncertainty(path: &Path) -> Result<UncertaintyTable> {
    let (header, rows) = from_csv(path)?;
    if header != ["i", "j", "U_ij", "n_unlabel"] {
        return Err(malformed(path, "columns must be i, j, U_ij, n_unlabel"));
    }
    let mut cells = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let i: usize = parse(path, r, &row[0])?;
        let j: usize = parse(path, r, &row[1])?;
        let u: f64 = parse(path, r, &row[2])?;
        let n: usize = parse(path, r, &row[3])?;
        cells.push((i, j, u, n));
    }
    let m = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let n = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != m * n || cells.iter().enumerate().any(|(k, c)| (c.0, c.1) != (k / n, k % n)) {
        return Err(malformed(path, "cells must cover the grid once in row-major order"));
    }
    UncertaintyTable::new(
        m,
        n,
        cells.iter().map(|c| c.2).collect(),
        cells.iter().map(|c| c.3).collect(),
    )
    .map_err(|e| malformed(path, e))
}

pub fn write_history(path: &Path, history: &[StepRecord]) -> Result<()> {
    let header = ["step", "style", "disc", "gen", "recon_x", "recon_c", "recon_s", "total"].map(String::from);
    let rows = history.iter().map(|r| {
        let l = &r.losses;
        [r.step as f64, l.style, l.disc, l.gen, l.recon_x, l.recon_c, l.recon_s, r.total]
            .iter()
            .enumerate()
            .map(|(k, v)| if k == 0 { r.step.to_string() } else { v.to_string() })
            .collect()
    });
    to_csv(path, &header, rows)
}
