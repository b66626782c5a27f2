//! Analytic accounting of parameters, multiply-add operations and
//! serialized size.
//!
//! Multiply-adds are fused multiply-accumulate pairs, one per scalar
//! multiply in the convolution and dense kernels; biases and batch norm
//! contribute no mult-adds, while batch-norm scale/shift parameters do
//! count toward the parameter total. Histogram extraction costs
//! `n_patches * ph * pw` operations and a forest lookup is bounded by
//! `estimators * tree_height` comparisons.

use crate::forest;
use crate::net::{BottleneckSpec, NetConfig};

/// Published budgets of this family of models and the four baselines they
/// are compared against, as (name, million params, million mult-adds, MB).
/// The baselines are reference constants only; their architectures are not
/// modeled here.
pub const REFERENCE_BUDGETS: [(&str, f64, f64, f64); 6] = [
    ("MALITE-HRF", 0.01, 0.13, 0.03),
    ("MALITE-MN", 0.18, 303.54, 0.81),
    ("3C2D", 67.61, 727.85, 276.46),
    ("DTMIC", 17.92, 15353.06, 71.74),
    ("SDN-LSVM", 23.27, 18724.06, 82.96),
    ("MalConv2", 1.07, 68719.51, 4.30),
];

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub mult_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CostReport {
    pub params: u64,
    pub mult_adds: u64,
    pub size_bytes: u64,
    pub breakdown: Vec<LayerCost>,
}

impl CostReport {
    pub fn from_breakdown(breakdown: Vec<LayerCost>, size_bytes: u64) -> CostReport {
        let params = breakdown.iter().map(|l| l.params).sum();
        let mult_adds = breakdown.iter().map(|l| l.mult_adds).sum();
        CostReport {
            params,
            mult_adds,
            size_bytes,
            breakdown,
        }
    }

    /// Aligned text table for terminal output.
    pub fn render_table(&self) -> String {
        let name_width = self
            .breakdown
            .iter()
            .map(|l| l.name.len())
            .chain(["layer".len(), "total".len()])
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<name_width$}  {:>12}  {:>14}\n",
            "layer", "params", "mult_adds"
        );
        for layer in &self.breakdown {
            out.push_str(&format!(
                "{:<name_width$}  {:>12}  {:>14}\n",
                layer.name, layer.params, layer.mult_adds
            ));
        }
        out.push_str(&format!(
            "{:<name_width$}  {:>12}  {:>14}\n",
            "total", self.params, self.mult_adds
        ));
        out.push_str(&format!(
            "size: {} bytes ({:.2} MB); {:.2}M params, {:.2}M mult-adds\n",
            self.size_bytes,
            self.size_bytes as f64 / (1024.0 * 1024.0),
            self.params as f64 / 1e6,
            self.mult_adds as f64 / 1e6,
        ));
        out
    }
}

/// Full convolution: `params = k^2 cin cout (+cout bias)`,
/// `mult_adds = h_out w_out k^2 cin cout`.
pub fn conv_cost(h_out: u64, w_out: u64, cin: u64, cout: u64, k: u64, bias: bool) -> (u64, u64) {
    let params = k * k * cin * cout + if bias { cout } else { 0 };
    let mult_adds = h_out * w_out * k * k * cin * cout;
    (params, mult_adds)
}

/// Depthwise convolution: one k x k filter per channel.
pub fn depthwise_cost(h_out: u64, w_out: u64, channels: u64, k: u64) -> (u64, u64) {
    (k * k * channels, h_out * w_out * k * k * channels)
}

/// Fully connected layer with bias.
pub fn dense_cost(in_dim: u64, out_dim: u64) -> (u64, u64) {
    (in_dim * out_dim + out_dim, in_dim * out_dim)
}

/// Batch norm holds a scale and shift per channel; no mult-adds counted.
pub fn bn_params(channels: u64) -> u64 {
    2 * channels
}

/// Whole bottleneck block at input resolution `h` x `w`:
/// expansion 1x1 at full resolution, then depthwise and projection at the
/// strided resolution. Batch-norm parameters for all three layers are
/// included; their runtime cost is not.
pub fn bottleneck_cost(h: u64, w: u64, spec: &BottleneckSpec) -> (u64, u64) {
    let (x, xh) = (spec.in_channels as u64, spec.out_channels as u64);
    let (t, k, s) = (
        spec.expansion as u64,
        spec.kernel as u64,
        spec.stride as u64,
    );
    let tx = t * x;
    let (ho, wo) = (h.div_ceil(s), w.div_ceil(s));
    let (expand_p, expand_ma) = conv_cost(h, w, x, tx, 1, false);
    let (dw_p, dw_ma) = depthwise_cost(ho, wo, tx, k);
    let (proj_p, proj_ma) = conv_cost(ho, wo, tx, xh, 1, false);
    let params = expand_p + dw_p + proj_p + bn_params(tx) + bn_params(tx) + bn_params(xh);
    (params, expand_ma + dw_ma + proj_ma)
}

/// Histogram feature extraction over `n` patches of `ph` x `pw` samples.
pub fn hist_cost(n_patches: u64, ph: u64, pw: u64) -> u64 {
    n_patches * ph * pw
}

/// Upper bound on forest inference: one comparison per level per tree.
pub fn forest_cost(estimators: u64, tree_height: u64) -> u64 {
    estimators * tree_height
}

/// Mult-add ratio of a dense k x k convolution over its depthwise +
/// pointwise separable counterpart at equal channel width; approaches k^2
/// as the width grows. Derived entirely from [`conv_cost`] and
/// [`depthwise_cost`], the map size cancels.
pub fn separable_reduction_ratio(channels: u64, k: u64) -> f64 {
    let (_, dense) = conv_cost(16, 16, channels, channels, k, false);
    let (_, dw) = depthwise_cost(16, 16, channels, k);
    let (_, pointwise) = conv_cost(16, 16, channels, channels, 1, false);
    dense as f64 / (dw + pointwise) as f64
}

/// Per-layer walk of a network config. `size_bytes` is the measured
/// container length (0 when no serialized artifact exists yet).
pub fn report_net(cfg: &NetConfig, size_bytes: u64) -> CostReport {
    let mut breakdown = Vec::new();
    let mut side = cfg.input_side as u64;
    let stem_out = side.div_ceil(cfg.stem.stride as u64);
    let (p, ma) = conv_cost(
        stem_out,
        stem_out,
        cfg.input_channels as u64,
        cfg.stem.out_channels as u64,
        cfg.stem.kernel as u64,
        false,
    );
    breakdown.push(LayerCost {
        name: "stem.conv".into(),
        params: p,
        mult_adds: ma,
    });
    breakdown.push(LayerCost {
        name: "stem.bn".into(),
        params: bn_params(cfg.stem.out_channels as u64),
        mult_adds: 0,
    });
    side = stem_out;
    for (i, block) in cfg.blocks.iter().enumerate() {
        let (p, ma) = bottleneck_cost(side, side, block);
        breakdown.push(LayerCost {
            name: format!("block{i}"),
            params: p,
            mult_adds: ma,
        });
        side = side.div_ceil(block.stride as u64);
    }
    let last = cfg
        .blocks
        .last()
        .map_or(cfg.stem.out_channels, |b| b.out_channels) as u64;
    let head_out = side.div_ceil(cfg.head.stride as u64);
    let (p, ma) = conv_cost(
        head_out,
        head_out,
        last,
        cfg.head.out_channels as u64,
        cfg.head.kernel as u64,
        false,
    );
    breakdown.push(LayerCost {
        name: "head.conv".into(),
        params: p,
        mult_adds: ma,
    });
    breakdown.push(LayerCost {
        name: "head.bn".into(),
        params: bn_params(cfg.head.out_channels as u64),
        mult_adds: 0,
    });
    breakdown.push(LayerCost {
        name: "gap".into(),
        params: 0,
        mult_adds: 0,
    });
    let (p, ma) = dense_cost(cfg.head.out_channels as u64, cfg.classes as u64);
    breakdown.push(LayerCost {
        name: "fc".into(),
        params: p,
        mult_adds: ma,
    });
    CostReport::from_breakdown(breakdown, size_bytes)
}

/// Histogram-plus-forest pipeline. `params` counts tree nodes, the only
/// meaningful parameter notion for a forest; `tree_height` should be the
/// observed maximum depth for a trained model or the configured cap for a
/// planned one.
pub fn report_hrf(
    n_patches: u64,
    ph: u64,
    pw: u64,
    estimators: u64,
    tree_height: u64,
    total_nodes: u64,
    size_bytes: u64,
) -> CostReport {
    let breakdown = vec![
        LayerCost {
            name: "patch_histograms".into(),
            params: 0,
            mult_adds: hist_cost(n_patches, ph, pw),
        },
        LayerCost {
            name: "forest".into(),
            params: total_nodes,
            mult_adds: forest_cost(estimators, tree_height),
        },
    ];
    CostReport::from_breakdown(breakdown, size_bytes)
}

/// Convenience wrapper for a trained forest.
pub fn report_trained_forest(
    f: &forest::Forest,
    n_patches: u64,
    ph: u64,
    pw: u64,
    size_bytes: u64,
) -> CostReport {
    let stats = f.tree_stats();
    report_hrf(
        n_patches,
        ph,
        pw,
        f.trees.len() as u64,
        stats.max_depth_observed as u64,
        stats.total_nodes as u64,
        size_bytes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_malite_mn, NoTally, Tensor};

    #[test]
    fn conv_cost_formula_values() {
        assert_eq!(conv_cost(8, 8, 96, 160, 1, false).1, 983_040);
        assert_eq!(conv_cost(1, 1, 1, 1, 1, false), (1, 1));
        assert_eq!(conv_cost(128, 128, 1, 16, 3, false).1, 2_359_296);
        assert_eq!(conv_cost(4, 4, 2, 3, 3, true).0, 9 * 2 * 3 + 3);
    }

    #[test]
    fn bottleneck_reduces_to_separable_form_at_t1() {
        let c = 12u64;
        let (h, w) = (32u64, 32);
        let spec = BottleneckSpec {
            in_channels: c as usize,
            out_channels: c as usize,
            stride: 1,
            expansion: 1,
            kernel: 3,
        };
        let (_, ma) = bottleneck_cost(h, w, &spec);
        assert_eq!(ma, c * (h * w * c) + h * w * c * 9 + h * w * c * c);
    }

    #[test]
    fn bottleneck_16_to_24_strided_at_128() {
        let spec = BottleneckSpec {
            in_channels: 16,
            out_channels: 24,
            stride: 2,
            expansion: 6,
            kernel: 3,
        };
        let (_, ma) = bottleneck_cost(128, 128, &spec);
        // 128^2*16*96 + 64^2*96*9 + 64^2*96*24
        assert_eq!(ma, 38_141_952);
    }

    #[test]
    fn bottleneck_mult_adds_linear_in_expansion() {
        let base = BottleneckSpec {
            in_channels: 8,
            out_channels: 16,
            stride: 2,
            expansion: 3,
            kernel: 3,
        };
        let double = BottleneckSpec {
            expansion: 6,
            ..base
        };
        let (_, ma1) = bottleneck_cost(64, 64, &base);
        let (_, ma2) = bottleneck_cost(64, 64, &double);
        assert_eq!(ma2, 2 * ma1);
    }

    #[test]
    fn hist_cost_formula_values() {
        assert_eq!(hist_cost(16, 32, 256), 131_072);
        assert_eq!(hist_cost(1, 1, 1), 1);
        assert_eq!(hist_cost(8, 64, 256), 131_072);
    }

    #[test]
    fn forest_cost_formula_values() {
        assert_eq!(forest_cost(51, 15), 765);
        assert_eq!(forest_cost(1, 0), 0);
        assert_eq!(forest_cost(101, 15), 1_515);
    }

    #[test]
    fn separable_ratio_tends_to_k_squared() {
        let at64 = separable_reduction_ratio(64, 3);
        assert!((at64 - 576.0 / 73.0).abs() < 1e-9);
        let at1024 = separable_reduction_ratio(1024, 3);
        assert!((at1024 - 9.0).abs() / 9.0 < 0.10);
        assert!(at1024 > at64);
    }

    #[test]
    fn default_net_lands_on_published_budget() {
        let report = report_net(&NetConfig::default_256(10), 0);
        // frozen values of the shipped architecture
        assert_eq!(report.params, 181_546);
        assert_eq!(report.mult_adds, 304_254_368);
        let param_target = 0.18e6;
        let ma_target = 303.54e6;
        assert!((report.params as f64 - param_target).abs() / param_target < 0.05);
        assert!((report.mult_adds as f64 - ma_target).abs() / ma_target < 0.05);
    }

    #[test]
    fn breakdown_sums_to_totals() {
        let report = report_net(&NetConfig::default_256(10), 123);
        assert_eq!(
            report.params,
            report.breakdown.iter().map(|l| l.params).sum::<u64>()
        );
        assert_eq!(
            report.mult_adds,
            report.breakdown.iter().map(|l| l.mult_adds).sum::<u64>()
        );
        assert_eq!(report.size_bytes, 123);
    }

    #[test]
    fn empty_breakdown_is_all_zero() {
        let report = CostReport::from_breakdown(Vec::new(), 0);
        assert_eq!(
            (report.params, report.mult_adds, report.size_bytes),
            (0, 0, 0)
        );
    }

    #[test]
    fn analytic_params_match_actual_parameter_count() {
        let cfg = NetConfig::default_256(10);
        let mut model = build_malite_mn(&cfg, 0).unwrap();
        assert_eq!(report_net(&cfg, 0).params, model.param_count());
    }

    #[test]
    fn instrumented_forward_matches_report_exactly() {
        for cfg in [
            NetConfig {
                input_side: 16,
                ..NetConfig::default_256(10)
            },
            NetConfig::tiny(16, 3),
            NetConfig {
                input_side: 20,
                ..NetConfig::tiny(20, 2)
            },
        ] {
            let mut model = build_malite_mn(&cfg, 3).unwrap();
            let x = Tensor::zeros([1, cfg.input_side, cfg.input_side, cfg.input_channels]);
            let (_, macs) = model.forward_counted(&x).unwrap();
            let report = report_net(&cfg, 0);
            assert_eq!(macs, report.mult_adds, "config side {}", cfg.input_side);
        }
    }

    #[test]
    fn hrf_report_matches_published_scale() {
        let report = report_hrf(16, 32, 256, 51, 15, 0, 0);
        assert_eq!(report.mult_adds, 131_072 + 765);
        let in_millions = (report.mult_adds as f64 / 1e6 * 100.0).round() / 100.0;
        assert_eq!(in_millions, 0.13);
    }

    #[test]
    fn table_renders_every_layer() {
        let report = report_net(&NetConfig::default_256(10), 10);
        let table = report.render_table();
        for layer in &report.breakdown {
            assert!(table.contains(&layer.name));
        }
        assert!(table.contains("total"));
    }

    #[test]
    fn full_counted_forward_sanity() {
        // tiny end-to-end double check that NoTally and u64 tallies agree
        let cfg = NetConfig::tiny(16, 2);
        let mut model = build_malite_mn(&cfg, 1).unwrap();
        let x = Tensor::zeros([1, 16, 16, 1]);
        let quiet = model.forward(&x, false, &mut NoTally).unwrap();
        let (counted, macs) = model.forward_counted(&x).unwrap();
        assert_eq!(quiet, counted);
        assert!(macs > 0);
    }
}
