//! Dataset manifests, class filtering and splits.
//!
//! A manifest is a flat list of (path, label, byte size) entries with a
//! dense class index derived from the sorted distinct labels. Directory
//! scans, filters and splits are all deterministic: entries stay sorted by
//! path and any randomness comes from an explicit seed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub bytes: u64,
}

/// Dataset listing with class ids `0..K-1` assigned in sorted label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

impl Manifest {
    pub fn from_entries(mut entries: Vec<ManifestEntry>) -> Result<Manifest> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        if entries.iter().any(|e| e.label.is_empty()) {
            return Err(Error::format("manifest entry with empty label"));
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        for pair in entries.windows(2) {
            if pair[0].path == pair[1].path {
                return Err(Error::format(format!(
                    "duplicate manifest path {}",
                    pair[0].path.display()
                )));
            }
        }
        let mut classes: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
        classes.sort();
        classes.dedup();
        Ok(Manifest { entries, classes })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
    }

    /// Dense class id per entry, aligned with `entries`.
    pub fn labels(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| {
                self.class_id(&e.label)
                    .expect("label indexed at construction")
            })
            .collect()
    }

    fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// Scan a directory laid out as one subdirectory per class. Files nested
/// deeper keep the top-level class label; files directly in the root are
/// ignored.
pub fn scan_dir(root: &Path) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    for item in walkdir::WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| Error::format(format!("scan failed: {e}")))?;
        if !item.file_type().is_file() {
            continue;
        }
        let rel = item
            .path()
            .strip_prefix(root)
            .expect("walk stays under root");
        let Some(first) = rel.components().next() else {
            continue;
        };
        if rel.components().count() < 2 {
            continue; // file directly in the root: no class directory
        }
        let label = first.as_os_str().to_string_lossy().into_owned();
        let bytes = item
            .metadata()
            .map_err(|e| Error::format(format!("stat failed: {e}")))?
            .len();
        entries.push(ManifestEntry {
            path: item.path().to_path_buf(),
            label,
            bytes,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Manifest::from_entries(entries)
}

/// Keep classes with strictly more than `min_count` samples and re-densify
/// the class index.
pub fn filter_min_samples(m: &Manifest, min_count: usize) -> Result<Manifest> {
    let counts = m.class_counts();
    let keep: Vec<ManifestEntry> = m
        .entries
        .iter()
        .filter(|e| counts[e.label.as_str()] > min_count)
        .cloned()
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset(PathBuf::from("<filtered manifest>")));
    }
    Manifest::from_entries(keep)
}

/// Keep the `k` most populous classes; ties go to the lexicographically
/// smaller label.
pub fn top_k_classes(m: &Manifest, k: usize) -> Result<Manifest> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k needs k >= 1".into()));
    }
    let counts = m.class_counts();
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let keep: std::collections::BTreeSet<&str> =
        ranked.into_iter().take(k).map(|(label, _)| label).collect();
    let kept: Vec<ManifestEntry> = m
        .entries
        .iter()
        .filter(|e| keep.contains(e.label.as_str()))
        .cloned()
        .collect();
    Manifest::from_entries(kept)
}

/// Deterministic train/eval split; per-class proportions stay within one
/// sample of `train_fraction` when stratified.
pub fn stratified_split(m: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut shuffled_split = |indices: &mut Vec<usize>| -> (Vec<usize>, Vec<usize>) {
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let n = indices.len();
        let take = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        (indices[..take].to_vec(), indices[take..].to_vec())
    };
    let (mut train_idx, mut eval_idx) = (Vec::new(), Vec::new());
    if spec.stratified {
        for class in &m.classes {
            let mut indices: Vec<usize> = (0..m.entries.len())
                .filter(|&i| &m.entries[i].label == class)
                .collect();
            if indices.len() < 2 {
                return Err(Error::Stratification(format!(
                    "class {class} has {} sample(s); need at least 2 (or disable stratification)",
                    indices.len()
                )));
            }
            let (tr, ev) = shuffled_split(&mut indices);
            train_idx.extend(tr);
            eval_idx.extend(ev);
        }
    } else {
        if m.entries.len() < 2 {
            return Err(Error::Stratification(
                "need at least 2 samples to split".into(),
            ));
        }
        let mut indices: Vec<usize> = (0..m.entries.len()).collect();
        let (tr, ev) = shuffled_split(&mut indices);
        train_idx.extend(tr);
        eval_idx.extend(ev);
    }
    let pick = |idx: &[usize]| -> Result<Manifest> {
        Manifest::from_entries(idx.iter().map(|&i| m.entries[i].clone()).collect())
    };
    Ok((pick(&train_idx)?, pick(&eval_idx)?))
}

/// Manifest CSV: header `path,label,bytes`, UTF-8, LF line endings.
pub fn write_manifest_csv<W: Write>(m: &Manifest, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(["path", "label", "bytes"])?;
    for e in &m.entries {
        wtr.write_record([
            e.path.to_string_lossy().as_ref(),
            e.label.as_str(),
            &e.bytes.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest_csv<R: Read>(r: R) -> Result<Manifest> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3
        || &headers[0] != "path"
        || &headers[1] != "label"
        || &headers[2] != "bytes"
    {
        return Err(Error::format(
            "manifest csv must start with path,label,bytes",
        ));
    }
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        entries.push(ManifestEntry {
            path: PathBuf::from(&record[0]),
            label: record[1].to_string(),
            bytes: record[2]
                .parse()
                .map_err(|e| Error::format(format!("bad byte count: {e}")))?,
        });
    }
    Manifest::from_entries(entries)
}
