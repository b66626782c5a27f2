//! Patch-histogram features.
//!
//! A byteplot image is cut into overlapping windows; each window is
//! summarized by a binned intensity histogram and the per-patch histograms
//! are concatenated into one feature vector. With the default spec
//! (32x256 patches, 50% overlap, 64 bins) a 256x256 gray image becomes 16
//! patches and a 1024-dimensional vector of raw counts.

use std::io::{Read, Write};

use crate::byteplot::ByteImage;
use crate::{Error, Result};

/// Sliding-window geometry. Patch sides are multiples of 8 and the stride
/// `side * (1 - overlap)` must come out to a whole number of pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatchSpec {
    pub height: u32,
    pub width: u32,
    pub overlap: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            height: 32,
            width: 256,
            overlap: 0.5,
        }
    }
}

impl PatchSpec {
    pub fn new(height: u32, width: u32, overlap: f64) -> Result<Self> {
        let spec = PatchSpec {
            height,
            width,
            overlap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(8)
            || !self.width.is_multiple_of(8)
        {
            return Err(Error::InvalidPatchSpec(format!(
                "patch sides must be positive multiples of 8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidPatchSpec(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        self.stride(self.height)?;
        self.stride(self.width)?;
        Ok(())
    }

    fn stride(&self, side: u32) -> Result<u32> {
        let s = side as f64 * (1.0 - self.overlap);
        if (s - s.round()).abs() > 1e-9 || s.round() < 1.0 {
            return Err(Error::InvalidPatchSpec(format!(
                "stride {side} * (1 - {}) is not a positive integer",
                self.overlap
            )));
        }
        Ok(s.round() as u32)
    }

    pub fn vertical_stride(&self) -> u32 {
        self.stride(self.height).expect("validated spec")
    }

    pub fn horizontal_stride(&self) -> u32 {
        self.stride(self.width).expect("validated spec")
    }
}

/// Histogram binning: 256 intensity values folded into `bins` equal-width
/// buckets, `bin(v) = v * bins / 256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HistogramConfig {
    pub bins: u32,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { bins: 64 }
    }
}

impl HistogramConfig {
    pub fn new(bins: u32) -> Result<Self> {
        if bins == 0 || 256 % bins != 0 {
            return Err(Error::InvalidConfig(format!(
                "bins must divide 256, got {bins}"
            )));
        }
        Ok(HistogramConfig { bins })
    }

    #[inline]
    pub fn bin_of(&self, value: u8) -> usize {
        (value as usize * self.bins as usize) / 256
    }
}

/// Concatenated per-patch histogram counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub values: Vec<u32>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One extracted window; RGB images contribute their raw interleaved bytes,
/// so a patch holds `height * width * channels` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub samples: Vec<u8>,
}

fn window_count(extent: u32, stride: u32) -> u32 {
    extent.div_ceil(stride)
}

/// Slide `spec`-sized windows over the image, top-to-bottom then
/// left-to-right within a band. The image is zero-padded past its bottom
/// (and, for narrow windows, right) edge so the window count per axis is
/// `ceil(extent / stride)`. A full-width window has nowhere to slide, so
/// `pw == image width` always yields a single column of windows.
pub fn extract_patches(img: &ByteImage, spec: &PatchSpec) -> Result<Vec<Patch>> {
    img.validate()?;
    spec.validate()?;
    if spec.height > img.height || spec.width > img.width {
        return Err(Error::InvalidPatchSpec(format!(
            "{}x{} patch exceeds {}x{} image",
            spec.height, spec.width, img.width, img.height
        )));
    }
    let (sy, sx) = (spec.vertical_stride(), spec.horizontal_stride());
    let ny = window_count(img.height, sy);
    let nx = if spec.width == img.width {
        1
    } else {
        window_count(img.width, sx)
    };
    let ch = img.channels as usize;
    let row_samples = spec.width as usize * ch;
    let mut patches = Vec::with_capacity((ny * nx) as usize);
    for wy in 0..ny {
        for wx in 0..nx {
            let (y0, x0) = (wy * sy, wx * sx);
            let mut samples = vec![0u8; spec.height as usize * row_samples];
            for dy in 0..spec.height {
                let y = y0 + dy;
                if y >= img.height {
                    break; // rows below the image stay zero
                }
                let cols = (spec.width).min(img.width - x0) as usize;
                let src = (y as usize * img.width as usize + x0 as usize) * ch;
                let dst = dy as usize * row_samples;
                samples[dst..dst + cols * ch].copy_from_slice(&img.pixels[src..src + cols * ch]);
            }
            patches.push(Patch { samples });
        }
    }
    Ok(patches)
}

/// Binned intensity counts over one patch.
pub fn histogram(patch: &Patch, cfg: &HistogramConfig) -> Vec<u32> {
    let mut counts = vec![0u32; cfg.bins as usize];
    for &v in &patch.samples {
        counts[cfg.bin_of(v)] += 1;
    }
    counts
}

/// Full feature vector: per-patch histograms concatenated in window order.
pub fn featurize(
    img: &ByteImage,
    spec: &PatchSpec,
    cfg: &HistogramConfig,
) -> Result<FeatureVector> {
    let patches = extract_patches(img, spec)?;
    let mut values = Vec::with_capacity(patches.len() * cfg.bins as usize);
    for patch in &patches {
        values.extend(histogram(patch, cfg));
    }
    Ok(FeatureVector { values })
}

/// Rows of features with their source paths and labels, as written by the
/// `featurize` command and consumed by `train-hrf` / `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub paths: Vec<String>,
    pub labels: Vec<String>,
    pub features: Vec<Vec<u32>>,
}

impl FeatureTable {
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// CSV form: header `path,label,f0..f{n-1}`, one row per sample.
pub fn write_features_csv<W: Write>(table: &FeatureTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = table.feature_dim();
    let mut header = vec!["path".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header)?;
    for i in 0..table.paths.len() {
        let mut record = vec![table.paths[i].clone(), table.labels[i].clone()];
        record.extend(table.features[i].iter().map(u32::to_string));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(r: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let dim = rdr.headers()?.len().saturating_sub(2);
    let mut table = FeatureTable {
        paths: Vec::new(),
        labels: Vec::new(),
        features: Vec::new(),
    };
    for record in rdr.records() {
        let record = record?;
        if record.len() != dim + 2 {
            return Err(Error::format(format!(
                "feature row has {} fields, expected {}",
                record.len(),
                dim + 2
            )));
        }
        table.paths.push(record[0].to_string());
        table.labels.push(record[1].to_string());
        let row: std::result::Result<Vec<u32>, _> = record.iter().skip(2).map(str::parse).collect();
        table
            .features
            .push(row.map_err(|e| Error::format(format!("bad count: {e}")))?);
    }
    if table.features.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(table)
}

const MLFV_MAGIC: &[u8; 4] = b"MLFV";

/// Packed binary form: magic "MLFV", u32 rows, u32 cols, then row-major u32
/// counts, all little-endian. Carries no paths or labels.
pub fn write_features_packed<W: Write>(rows: &[Vec<u32>], mut w: W) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::shape("ragged feature rows"));
    }
    w.write_all(MLFV_MAGIC)?;
    w.write_all(&(rows.len() as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for row in rows {
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features_packed<R: Read>(mut r: R) -> Result<Vec<Vec<u32>>> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("packed features truncated before header end"))?;
    if &header[..4] != MLFV_MAGIC {
        return Err(Error::format("bad packed feature magic"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut data = vec![0u8; rows * cols * 4];
    r.read_exact(&mut data)
        .map_err(|_| Error::format("packed features truncated before payload end"))?;
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = (0..cols)
            .map(|j| {
                let at = (i * cols + j) * 4;
                u32::from_le_bytes(data[at..at + 4].try_into().unwrap())
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}
