//! Versioned model container.
//!
//! Layout: magic "MLTE", u8 version, u8 kind (0 = histogram+forest,
//! 1 = network), u32 metadata length, metadata JSON, u32 payload length,
//! payload, u32 CRC32 over everything before the checksum. All integers
//! little-endian. The payload holds the forest node arrays or the named
//! weight tensors; the metadata JSON carries class labels and configs.

use crate::featurizer::{HistogramConfig, PatchSpec};
use crate::forest::{Forest, ForestConfig};
use crate::net::{build_malite_mn, MaliteMn, NetConfig, TensorMap};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MLTE";
const VERSION: u8 = 1;
const KIND_HRF: u8 = 0;
const KIND_MN: u8 = 1;

/// Histogram + random-forest pipeline model.
#[derive(Debug, Clone)]
pub struct HrfModel {
    pub forest: Forest,
    pub patch: PatchSpec,
    pub hist: HistogramConfig,
    pub labels: Vec<String>,
}

/// Network model with its class labels.
#[derive(Debug, Clone)]
pub struct MnModel {
    pub net: MaliteMn,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    Hrf(HrfModel),
    Mn(MnModel),
}

impl TrainedModel {
    pub fn labels(&self) -> &[String] {
        match self {
            TrainedModel::Hrf(m) => &m.labels,
            TrainedModel::Mn(m) => &m.labels,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TrainedModel::Hrf(_) => "hrf",
            TrainedModel::Mn(_) => "mn",
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct HrfMeta {
    labels: Vec<String>,
    forest: ForestConfig,
    n_classes: usize,
    feature_dim: usize,
    patch: PatchSpec,
    hist: HistogramConfig,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MnMeta {
    labels: Vec<String>,
    net: NetConfig,
}

fn encode_tensors(net: &MaliteMn) -> Vec<u8> {
    let mut out = Vec::new();
    net.for_each_tensor(|name, shape, data| {
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in data {
            out.extend(v.to_le_bytes());
        }
    });
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::format("tensor payload truncated"))?;
        self.at += n;
        Ok(slice)
    }

    fn done(&self) -> bool {
        self.at >= self.bytes.len()
    }
}

fn decode_tensors(bytes: &[u8]) -> Result<TensorMap> {
    let mut cur = Cursor { bytes, at: 0 };
    let mut tensors = TensorMap::new();
    while !cur.done() {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let ndim = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::format(format!("duplicate tensor {name}")));
        }
    }
    Ok(tensors)
}

pub fn save_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let (kind, meta, payload) = match model {
        TrainedModel::Hrf(m) => {
            let meta = serde_json::to_vec(&HrfMeta {
                labels: m.labels.clone(),
                forest: m.forest.config.clone(),
                n_classes: m.forest.n_classes,
                feature_dim: m.forest.feature_dim,
                patch: m.patch,
                hist: m.hist,
            })?;
            (KIND_HRF, meta, m.forest.encode_nodes())
        }
        TrainedModel::Mn(m) => {
            let meta = serde_json::to_vec(&MnMeta {
                labels: m.labels.clone(),
                net: m.net.config.clone(),
            })?;
            (KIND_MN, meta, encode_tensors(&m.net))
        }
    };
    let mut out = Vec::with_capacity(14 + meta.len() + payload.len());
    out.extend(MAGIC);
    out.push(VERSION);
    out.push(kind);
    out.extend((meta.len() as u32).to_le_bytes());
    out.extend(&meta);
    out.extend((payload.len() as u32).to_le_bytes());
    out.extend(&payload);
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 14 + 4 {
        return Err(Error::format("container shorter than its fixed header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad container magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!(
            "unsupported container version {}",
            bytes[4]
        )));
    }
    let kind = bytes[5];
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::format(format!(
            "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let meta_len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
    let meta_end = 10 + meta_len;
    if body.len() < meta_end + 4 {
        return Err(Error::format("container truncated inside metadata"));
    }
    let meta = &body[10..meta_end];
    let payload_len =
        u32::from_le_bytes(body[meta_end..meta_end + 4].try_into().expect("4 bytes")) as usize;
    let payload_end = meta_end + 4 + payload_len;
    if body.len() != payload_end {
        return Err(Error::format(
            "payload length disagrees with container size",
        ));
    }
    let payload = &body[meta_end + 4..payload_end];
    match kind {
        KIND_HRF => {
            let meta: HrfMeta = serde_json::from_slice(meta)?;
            let forest =
                Forest::decode_nodes(payload, meta.n_classes, meta.feature_dim, meta.forest)?;
            if forest.trees.len() != forest.config.n_estimators {
                return Err(Error::format(format!(
                    "{} trees stored for {} configured estimators",
                    forest.trees.len(),
                    forest.config.n_estimators
                )));
            }
            Ok(TrainedModel::Hrf(HrfModel {
                forest,
                patch: meta.patch,
                hist: meta.hist,
                labels: meta.labels,
            }))
        }
        KIND_MN => {
            let meta: MnMeta = serde_json::from_slice(meta)?;
            let mut net = build_malite_mn(&meta.net, 0)?;
            net.load_tensors(&decode_tensors(payload)?)?;
            Ok(TrainedModel::Mn(MnModel {
                net,
                labels: meta.labels,
            }))
        }
        other => Err(Error::format(format!("unknown model kind {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train, FeatureMatrix};
    use crate::net::{NetConfig, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_hrf() -> HrfModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f32>> = (0..30)
            .map(|_| (0..12).map(|_| rng.gen_range(0..50) as f32).collect())
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let forest = train(
            &FeatureMatrix::from_rows(rows).unwrap(),
            &labels,
            &Default::default(),
        )
        .unwrap();
        HrfModel {
            forest,
            patch: PatchSpec::default(),
            hist: HistogramConfig::default(),
            labels: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn hrf_round_trip_preserves_predictions() {
        let model = small_hrf();
        let bytes = save_model(&TrainedModel::Hrf(model.clone())).unwrap();
        let TrainedModel::Hrf(back) = load_model(&bytes).unwrap() else {
            panic!("kind flipped");
        };
        assert_eq!(back.labels, model.labels);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let probe: Vec<f32> = (0..12).map(|_| rng.gen_range(0..60) as f32).collect();
            assert_eq!(
                back.forest.predict(&probe).unwrap(),
                model.forest.predict(&probe).unwrap()
            );
        }
        // identical bytes on re-save
        assert_eq!(save_model(&TrainedModel::Hrf(back)).unwrap(), bytes);
    }

    #[test]
    fn mn_round_trip_preserves_predictions() {
        let net = build_malite_mn(&NetConfig::tiny(16, 3), 5).unwrap();
        let model = MnModel {
            net,
            labels: vec!["x".into(), "y".into(), "z".into()],
        };
        let bytes = save_model(&TrainedModel::Mn(model.clone())).unwrap();
        let TrainedModel::Mn(mut back) = load_model(&bytes).unwrap() else {
            panic!("kind flipped");
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..2 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = Tensor::from_vec([2, 16, 16, 1], data).unwrap();
        let mut original = model;
        assert_eq!(
            original.net.predict(&x).unwrap(),
            back.net.predict(&x).unwrap()
        );
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let bytes = save_model(&TrainedModel::Hrf(small_hrf())).unwrap();
        let mut corrupt = bytes.clone();
        let at = corrupt.len() / 2;
        corrupt[at] ^= 0x40;
        match load_model(&corrupt) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum"), "got: {msg}"),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_magic_are_format_errors() {
        let bytes = save_model(&TrainedModel::Hrf(small_hrf())).unwrap();
        assert!(matches!(
            load_model(&bytes[..bytes.len() - 9]),
            Err(Error::Format(_))
        ));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(load_model(&wrong), Err(Error::Format(_))));
        let mut newer = bytes.clone();
        newer[4] = 9;
        assert!(matches!(load_model(&newer), Err(Error::Format(_))));
    }
}
