//! Browser bindings for the interactive demo page (`web/index.html`).
//!
//! Three operations: render a dropped file as a byteplot PNG, extract its
//! patch-histogram feature vector, and explore the analytic cost model.
//! Everything works on byte slices and JSON strings so the page needs no
//! framework, just `wasm-bindgen --target web` output.

use wasm_bindgen::prelude::*;

use malite::byteplot::{resize_square, to_gray_image, to_png_bytes, to_rgb_image};
use malite::costmodel;
use malite::featurizer::{featurize, HistogramConfig, PatchSpec};
use malite::net::{build_malite_mn, NetConfig};

fn js_err(e: malite::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Byteplot of `data` as PNG bytes. `side = 0` keeps the native geometry
/// (width from the file-size band, height padded to a multiple of 32).
#[wasm_bindgen]
pub fn byteplot_png(data: &[u8], rgb: bool, side: u32) -> Result<Vec<u8>, JsValue> {
    let img = if rgb {
        to_rgb_image(data)
    } else {
        to_gray_image(data)
    }
    .map_err(js_err)?;
    let img = if side > 0 {
        resize_square(&img, side).map_err(js_err)?
    } else {
        img
    };
    to_png_bytes(&img).map_err(js_err)
}

/// Native byteplot geometry for a file size, as `{width, height}` JSON
/// (lets the page caption the plot without converting twice).
#[wasm_bindgen]
pub fn byteplot_geometry(len: u32, rgb: bool) -> Result<String, JsValue> {
    let width = malite::byteplot::width_for_size(len as u64).map_err(js_err)?;
    let samples = if rgb {
        (len as u64).div_ceil(3)
    } else {
        len as u64
    };
    let rows = samples.div_ceil(width as u64);
    let height = rows.div_ceil(32) * 32;
    Ok(format!("{{\"width\":{width},\"height\":{height}}}"))
}

/// Patch-histogram features of the 256x256 gray byteplot of `data`, as
/// JSON: `{bins, n_patches, dims, values}`.
#[wasm_bindgen]
pub fn feature_vector(
    data: &[u8],
    bins: u32,
    ph: u32,
    pw: u32,
    overlap: f64,
) -> Result<String, JsValue> {
    let spec = PatchSpec::new(ph, pw, overlap).map_err(js_err)?;
    let hist = HistogramConfig::new(bins).map_err(js_err)?;
    let img = to_gray_image(data).map_err(js_err)?;
    let img = resize_square(&img, 256).map_err(js_err)?;
    let fv = featurize(&img, &spec, &hist).map_err(js_err)?;
    let n_patches = fv.len() / bins as usize;
    Ok(format!(
        "{{\"bins\":{bins},\"n_patches\":{n_patches},\"dims\":{},\"values\":{}}}",
        fv.len(),
        serde_json::to_string(&fv.values).expect("counts serialize")
    ))
}

/// Cost report for a network config JSON (`"default"` for the shipped
/// 256x256 architecture. Size is measured by serializing a seeded build.
#[wasm_bindgen]
pub fn net_cost(config_json: &str) -> Result<String, JsValue> {
    let cfg: NetConfig = if config_json.trim() == "default" {
        NetConfig::default_256(10)
    } else {
        serde_json::from_str(config_json).map_err(|e| JsValue::from_str(&e.to_string()))?
    };
    cfg.validate().map_err(js_err)?;
    let net = build_malite_mn(&cfg, 0).map_err(js_err)?;
    let labels = (0..cfg.classes).map(|i| format!("class{i}")).collect();
    let model = malite::harness::TrainedModel::Mn(malite::harness::MnModel { net, labels });
    let report = malite::harness::cost_report(&model).map_err(js_err)?;
    serde_json::to_string(&report).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Cost report for a histogram+forest pipeline at the given settings.
#[wasm_bindgen]
pub fn hrf_cost(
    bins: u32,
    ph: u32,
    pw: u32,
    estimators: u32,
    depth: u32,
) -> Result<String, JsValue> {
    let spec = PatchSpec::new(ph, pw, 0.5).map_err(js_err)?;
    let stride = spec.vertical_stride();
    let rows = 256u32.div_ceil(stride);
    let cols = if pw == 256 {
        1
    } else {
        256u32.div_ceil(spec.horizontal_stride())
    };
    let _ = bins;
    let report = costmodel::report_hrf(
        (rows * cols) as u64,
        ph as u64,
        pw as u64,
        estimators as u64,
        depth as u64,
        0,
        0,
    );
    serde_json::to_string(&report).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_export_works_for_both_modes() {
        let data = vec![7u8; 4096];
        let gray = byteplot_png(&data, false, 0).unwrap();
        assert_eq!(&gray[..8], b"\x89PNG\r\n\x1a\n");
        let rgb = byteplot_png(&data, true, 128).unwrap();
        assert_eq!(&rgb[..8], b"\x89PNG\r\n\x1a\n");
    }

    #[test]
    fn geometry_matches_conversion() {
        let geom = byteplot_geometry(5 * 1024, false).unwrap();
        assert_eq!(geom, "{\"width\":32,\"height\":160}");
    }

    #[test]
    fn feature_json_has_default_dims() {
        let data: Vec<u8> = (0..5000).map(|i| (i % 256) as u8).collect();
        let json = feature_vector(&data, 64, 32, 256, 0.5).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["dims"], 1024);
        assert_eq!(parsed["n_patches"], 16);
        assert_eq!(parsed["values"].as_array().unwrap().len(), 1024);
    }

    #[test]
    fn default_net_cost_is_in_budget() {
        let json = net_cost("default").unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["params"], 181546);
        assert_eq!(parsed["mult_adds"], 304254368u64);
    }

    #[test]
    fn hrf_cost_matches_default_pipeline() {
        let json = hrf_cost(64, 32, 256, 51, 15).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["mult_adds"], 131072 + 765);
    }
}
