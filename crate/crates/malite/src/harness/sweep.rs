//! Feature-parameter sweep: train and score one forest per grid point.

use std::io::Write;

use crate::byteplot::ByteImage;
use crate::data::Manifest;
use crate::featurizer::{featurize, HistogramConfig, PatchSpec};
use crate::forest::{self, FeatureMatrix, ForestConfig};
use crate::harness::metrics::compute_metrics;
use crate::harness::{label_ids, load_images};
use crate::parallel::parallel_map;
use crate::{Error, Result};

/// Grid axes: histogram bins, patch heights, and forest sizes. Patch
/// widths are either the patch height or the full 256-pixel image width,
/// always with `ph <= pw`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepGrid {
    pub bins: Vec<u32>,
    pub patch_heights: Vec<u32>,
    pub estimators: Vec<usize>,
    pub overlap: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            bins: vec![16, 32, 64, 128, 256],
            patch_heights: vec![8, 16, 32, 64, 128, 256],
            estimators: vec![11, 31, 51, 101],
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub bins: u32,
    pub ph: u32,
    pub pw: u32,
    pub estimators: usize,
}

impl SweepPoint {
    /// Fig-style label `bin-ph-pw`.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.bins, self.ph, self.pw)
    }
}

impl SweepGrid {
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &bins in &self.bins {
            for &ph in &self.patch_heights {
                let mut widths = vec![ph];
                if ph != 256 {
                    widths.push(256);
                }
                for pw in widths {
                    for &estimators in &self.estimators {
                        out.push(SweepPoint {
                            bins,
                            ph,
                            pw,
                            estimators,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub estimators: usize,
    /// None = evaluated; Some(reason) = infeasible point, recorded not fatal.
    pub skipped: Option<String>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub micro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn point_seed(seed: u64, index: usize) -> u64 {
    // splitmix-style mix keeps per-point streams independent of ordering
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 27)
}

#[allow(clippy::too_many_arguments)]
fn run_point(
    point: &SweepPoint,
    index: usize,
    train_images: &[ByteImage],
    train_labels: &[usize],
    eval_images: &[ByteImage],
    eval_labels: &[usize],
    depth: usize,
    seed: u64,
) -> Result<SweepRow> {
    let spec = PatchSpec::new(point.ph, point.pw, 0.5)?;
    let hist = HistogramConfig::new(point.bins)?;
    let feats = |images: &[ByteImage]| -> Result<Vec<Vec<u32>>> {
        images
            .iter()
            .map(|img| Ok(featurize(img, &spec, &hist)?.values))
            .collect()
    };
    let train_x = FeatureMatrix::from_counts(&feats(train_images)?)?;
    let eval_rows = feats(eval_images)?;
    let cfg = ForestConfig {
        n_estimators: point.estimators,
        max_depth: depth,
        seed: point_seed(seed, index),
        ..ForestConfig::default()
    };
    let model = forest::train(&train_x, train_labels, &cfg)?;
    let predictions: Result<Vec<usize>> = eval_rows
        .iter()
        .map(|row| {
            let row: Vec<f32> = row.iter().map(|&v| v as f32).collect();
            model.predict(&row)
        })
        .collect();
    let metrics = compute_metrics(&predictions?, eval_labels, model.n_classes)?;
    Ok(SweepRow {
        label: point.label(),
        estimators: point.estimators,
        skipped: None,
        accuracy: metrics.accuracy,
        macro_precision: metrics.macro_precision,
        micro_precision: metrics.accuracy,
        macro_recall: metrics.macro_recall,
        macro_f1: metrics.macro_f1,
    })
}

/// Evaluate the whole grid on an 80/20-style pre-split dataset. Rows come
/// back sorted by macro F1 (best first) with skipped points at the end.
pub fn sweep_hrf(
    train: &Manifest,
    eval: &Manifest,
    grid: &SweepGrid,
    depth: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let train_images = load_images(train, 256, false, workers)?;
    let eval_images = load_images(eval, 256, false, workers)?;
    let train_labels = train.labels();
    let eval_labels = label_ids(eval, &train.classes)?;
    let points = grid.points();
    let rows = parallel_map(points.len(), workers, |i| {
        let point = &points[i];
        match run_point(
            point,
            i,
            &train_images,
            &train_labels,
            &eval_images,
            &eval_labels,
            depth,
            seed,
        ) {
            Ok(row) => Ok(row),
            Err(Error::InvalidPatchSpec(reason)) => Ok(SweepRow {
                label: point.label(),
                estimators: point.estimators,
                skipped: Some(reason),
                accuracy: 0.0,
                macro_precision: 0.0,
                micro_precision: 0.0,
                macro_recall: 0.0,
                macro_f1: 0.0,
            }),
            Err(other) => Err(other),
        }
    });
    let mut rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        a.skipped
            .is_some()
            .cmp(&b.skipped.is_some())
            .then(b.macro_f1.total_cmp(&a.macro_f1))
            .then(a.label.cmp(&b.label))
            .then(a.estimators.cmp(&b.estimators))
    });
    Ok(rows)
}

/// CSV mirror of the sweep table.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "label",
        "estimators",
        "status",
        "accuracy",
        "macro_precision",
        "micro_precision",
        "macro_recall",
        "macro_f1",
    ])?;
    for row in rows {
        let status = match &row.skipped {
            None => "ok".to_string(),
            Some(reason) => format!("skipped: {reason}"),
        };
        if row.skipped.is_some() {
            wtr.write_record([
                &row.label,
                &row.estimators.to_string(),
                &status,
                "",
                "",
                "",
                "",
                "",
            ])?;
        } else {
            wtr.write_record([
                &row.label,
                &row.estimators.to_string(),
                &status,
                &format!("{:.6}", row.accuracy),
                &format!("{:.6}", row.macro_precision),
                &format!("{:.6}", row.micro_precision),
                &format!("{:.6}", row.macro_recall),
                &format!("{:.6}", row.macro_f1),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
