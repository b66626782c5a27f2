//! Pipelines, metrics, model container and the parameter sweep.

pub mod container;
pub mod metrics;
pub mod sweep;

use std::path::Path;

pub use container::{load_model, save_model, HrfModel, MnModel, TrainedModel};
pub use metrics::{compute_metrics, ClassMetrics, Metrics};
pub use sweep::{sweep_hrf, write_sweep_csv, SweepGrid, SweepPoint, SweepRow};

use crate::byteplot::{resize_square, to_gray_image, to_rgb_image, ByteImage};
use crate::costmodel::{self, CostReport};
use crate::data::Manifest;
use crate::featurizer::{featurize, FeatureTable, HistogramConfig, PatchSpec};
use crate::forest::{self, FeatureMatrix, ForestConfig};
use crate::net::{self, build_malite_mn, image_to_tensor, NetConfig, Tensor, TrainConfig};
use crate::parallel::parallel_map;
use crate::{Error, Result};

/// File bytes to a square byteplot: gray or RGB, resized when `side` is
/// given, native width/padded height otherwise.
pub fn byteplot_from_bytes(data: &[u8], rgb: bool, side: Option<u32>) -> Result<ByteImage> {
    let img = if rgb {
        to_rgb_image(data)?
    } else {
        to_gray_image(data)?
    };
    match side {
        Some(side) => resize_square(&img, side),
        None => Ok(img),
    }
}

pub fn byteplot_from_file(path: &Path, rgb: bool, side: Option<u32>) -> Result<ByteImage> {
    byteplot_from_bytes(&std::fs::read(path)?, rgb, side)
}

/// Convert every manifest entry to a `side` x `side` byteplot.
pub fn load_images(
    manifest: &Manifest,
    side: u32,
    rgb: bool,
    workers: usize,
) -> Result<Vec<ByteImage>> {
    parallel_map(manifest.len(), workers, |i| {
        byteplot_from_file(&manifest.entries[i].path, rgb, Some(side))
    })
    .into_iter()
    .collect()
}

/// Featurize a manifest into a labeled feature table (gray 256 pipeline).
pub fn featurize_manifest(
    manifest: &Manifest,
    patch: &PatchSpec,
    hist: &HistogramConfig,
    workers: usize,
) -> Result<FeatureTable> {
    let rows: Result<Vec<Vec<u32>>> = parallel_map(manifest.len(), workers, |i| {
        let img = byteplot_from_file(&manifest.entries[i].path, false, Some(256))?;
        Ok(featurize(&img, patch, hist)?.values)
    })
    .into_iter()
    .collect();
    Ok(FeatureTable {
        paths: manifest
            .entries
            .iter()
            .map(|e| e.path.to_string_lossy().into_owned())
            .collect(),
        labels: manifest.entries.iter().map(|e| e.label.clone()).collect(),
        features: rows?,
    })
}

/// Dense ids for a manifest against an external label list.
pub fn label_ids(manifest: &Manifest, classes: &[String]) -> Result<Vec<usize>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            classes
                .iter()
                .position(|c| c == &e.label)
                .ok_or_else(|| Error::format(format!("label {} unknown to the model", e.label)))
        })
        .collect()
}

fn table_label_ids(labels: &[String], classes: &[String]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::format(format!("label {l} unknown to the model")))
        })
        .collect()
}

/// Train the histogram+forest model from a labeled feature table.
pub fn train_hrf(
    table: &FeatureTable,
    patch: PatchSpec,
    hist: HistogramConfig,
    cfg: &ForestConfig,
    workers: usize,
) -> Result<HrfModel> {
    let mut classes: Vec<String> = table.labels.clone();
    classes.sort();
    classes.dedup();
    let labels = table_label_ids(&table.labels, &classes)?;
    let x = FeatureMatrix::from_counts(&table.features)?;
    let forest = forest::train_with_workers(&x, &labels, cfg, workers)?;
    Ok(HrfModel {
        forest,
        patch,
        hist,
        labels: classes,
    })
}

/// Train the network pipeline straight from a manifest.
pub fn train_mn(
    manifest: &Manifest,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    workers: usize,
) -> Result<(MnModel, Vec<f64>)> {
    let mut cfg = net_cfg.clone();
    cfg.classes = manifest.classes.len();
    cfg.validate()?;
    let images = load_images(
        manifest,
        cfg.input_side as u32,
        cfg.input_channels == 3,
        workers,
    )?;
    let tensors: Vec<Tensor> = images.iter().map(image_to_tensor).collect();
    let stacked = net::stack(&tensors.iter().collect::<Vec<_>>())?;
    let labels = manifest.labels();
    let mut model = build_malite_mn(&cfg, seed)?;
    let history = net::fit(&mut model, &stacked, &labels, train_cfg)?;
    Ok((
        MnModel {
            net: model,
            labels: manifest.classes.clone(),
        },
        history,
    ))
}

/// Evaluation summary: what was scored, how, and the resulting metrics.
/// Serializes deterministically (no timestamps, fixed field order).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub model: String,
    pub data: String,
    pub samples: usize,
    pub classes: Vec<String>,
    pub protocol: String,
    pub metrics: Metrics,
}

impl EvalReport {
    /// Aligned text rendering for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model: {}   data: {}   samples: {}\nprotocol: {}\n",
            self.model, self.data, self.samples, self.protocol
        ));
        out.push_str(&format!(
            "accuracy {:.4}  macro_precision {:.4}  macro_recall {:.4}  macro_f1 {:.4}\n",
            self.metrics.accuracy,
            self.metrics.macro_precision,
            self.metrics.macro_recall,
            self.metrics.macro_f1
        ));
        let width = self
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for (label, m) in self.classes.iter().zip(&self.metrics.per_class) {
            out.push_str(&format!(
                "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out
    }
}

/// Score an HRF model on a feature table.
pub fn evaluate_hrf(model: &HrfModel, table: &FeatureTable, data_name: &str) -> Result<EvalReport> {
    let truths = table_label_ids(&table.labels, &model.labels)?;
    let predictions: Result<Vec<usize>> = table
        .features
        .iter()
        .map(|row| {
            let row: Vec<f32> = row.iter().map(|&v| v as f32).collect();
            model.forest.predict(&row)
        })
        .collect();
    let metrics = compute_metrics(&predictions?, &truths, model.labels.len())?;
    Ok(EvalReport {
        model: "hrf".into(),
        data: data_name.into(),
        samples: table.features.len(),
        classes: model.labels.clone(),
        protocol: format!(
            "holdout; patch {}x{} overlap {}, {} bins; {} estimators, depth <= {}",
            model.patch.height,
            model.patch.width,
            model.patch.overlap,
            model.hist.bins,
            model.forest.config.n_estimators,
            model.forest.config.max_depth
        ),
        metrics,
    })
}

/// Score the network pipeline on a manifest, batching inference.
pub fn evaluate_mn(model: &mut MnModel, manifest: &Manifest, workers: usize) -> Result<EvalReport> {
    let cfg = model.net.config.clone();
    let truths = label_ids(manifest, &model.labels)?;
    let images = load_images(
        manifest,
        cfg.input_side as u32,
        cfg.input_channels == 3,
        workers,
    )?;
    let mut predictions = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let tensors: Vec<Tensor> = chunk.iter().map(image_to_tensor).collect();
        let batch = net::stack(&tensors.iter().collect::<Vec<_>>())?;
        let (ids, _) = model.net.predict(&batch)?;
        predictions.extend(ids);
    }
    let metrics = compute_metrics(&predictions, &truths, model.labels.len())?;
    Ok(EvalReport {
        model: "mn".into(),
        data: manifest
            .entries
            .first()
            .and_then(|e| e.path.parent().and_then(|p| p.parent()))
            .map_or_else(|| "<manifest>".into(), |p| p.to_string_lossy().into_owned()),
        samples: manifest.len(),
        classes: model.labels.clone(),
        protocol: format!(
            "holdout; {0}x{0} gray byteplots, infer-mode batch norm",
            cfg.input_side
        ),
        metrics,
    })
}

/// Cost report for any trained model: analytic counts plus the measured
/// container size.
pub fn cost_report(model: &TrainedModel) -> Result<CostReport> {
    let size = save_model(model)?.len() as u64;
    match model {
        TrainedModel::Hrf(m) => {
            let img = ByteImage::new(256, 256, 1, vec![0; 256 * 256])?;
            let patches = crate::featurizer::extract_patches(&img, &m.patch)?.len() as u64;
            Ok(costmodel::report_trained_forest(
                &m.forest,
                patches,
                m.patch.height as u64,
                m.patch.width as u64,
                size,
            ))
        }
        TrainedModel::Mn(m) => Ok(costmodel::report_net(&m.net.config, size)),
    }
}
