//! Network assembly: bottleneck residual blocks between a stem and head
//! convolution, global average pooling and a softmax classification head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::tensor::{NoTally, Tally, Tensor};
use crate::byteplot::ByteImage;
use crate::{Error, Result};

/// Named tensor payload: name -> (dims, values).
pub type TensorMap = std::collections::BTreeMap<String, (Vec<usize>, Vec<f32>)>;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// One inverted bottleneck: 1x1 expansion by `expansion`, depthwise
/// `kernel` conv at `stride`, linear 1x1 projection; residual skip when
/// the stride is 1 and channel counts match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BottleneckSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub kernel: usize,
}

impl BottleneckSpec {
    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub stem: ConvSpec,
    pub blocks: Vec<BottleneckSpec>,
    pub head: ConvSpec,
}

impl NetConfig {
    /// Shipped default: eight blocks tuned so the analytic budget lands on
    /// ~0.18M parameters and ~304M multiply-adds at 256x256, 10 classes.
    pub fn default_256(classes: usize) -> NetConfig {
        let widths = [
            (8, 8, 1, 1),
            (8, 16, 2, 6),
            (16, 16, 1, 6),
            (16, 28, 2, 6),
            (28, 28, 1, 6),
            (28, 44, 2, 6),
            (44, 44, 1, 6),
            (44, 64, 2, 6),
        ];
        NetConfig {
            input_side: 256,
            input_channels: 1,
            classes,
            stem: ConvSpec {
                out_channels: 8,
                kernel: 3,
                stride: 1,
            },
            blocks: widths
                .iter()
                .map(|&(cin, cout, stride, expansion)| BottleneckSpec {
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                    expansion,
                    kernel: 3,
                })
                .collect(),
            head: ConvSpec {
                out_channels: 144,
                kernel: 3,
                stride: 1,
            },
        }
    }

    /// Proportionally shrunk variant for small inputs and quick training.
    pub fn tiny(input_side: usize, classes: usize) -> NetConfig {
        let widths = [
            (4, 4, 1, 1),
            (4, 8, 2, 6),
            (8, 8, 1, 6),
            (8, 12, 2, 6),
            (12, 12, 1, 6),
            (12, 16, 2, 6),
            (16, 16, 1, 6),
            (16, 24, 2, 6),
        ];
        NetConfig {
            input_side,
            input_channels: 1,
            classes,
            stem: ConvSpec {
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
            blocks: widths
                .iter()
                .map(|&(cin, cout, stride, expansion)| BottleneckSpec {
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                    expansion,
                    kernel: 3,
                })
                .collect(),
            head: ConvSpec {
                out_channels: 48,
                kernel: 3,
                stride: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 {
            return Err(Error::InvalidConfig("input side must be positive".into()));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::InvalidConfig("input channels must be 1 or 3".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if self.blocks.len() != 8 {
            return Err(Error::InvalidConfig(format!(
                "expected exactly 8 bottleneck blocks, got {}",
                self.blocks.len()
            )));
        }
        if self.stem.kernel != 3 || self.head.kernel != 3 {
            return Err(Error::InvalidConfig("stem and head kernels are 3x3".into()));
        }
        let mut channels = self.stem.out_channels;
        for (i, block) in self.blocks.iter().enumerate() {
            if block.kernel != 3 {
                return Err(Error::InvalidConfig(format!("block {i} kernel must be 3")));
            }
            if i > 0 && block.expansion != 6 {
                return Err(Error::InvalidConfig(format!(
                    "block {i} expansion must be 6 (only the first block may differ)"
                )));
            }
            if block.expansion == 0 || !(block.stride == 1 || block.stride == 2) {
                return Err(Error::InvalidConfig(format!(
                    "block {i} stride/expansion invalid"
                )));
            }
            if block.in_channels != channels {
                return Err(Error::InvalidConfig(format!(
                    "block {i} expects {} input channels, previous layer emits {channels}",
                    block.in_channels
                )));
            }
            channels = block.out_channels;
        }
        Ok(())
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    fn new(shape: Vec<usize>, data: Vec<f32>) -> Param {
        let grad = vec![0.0; data.len()];
        Param { data, grad, shape }
    }

    fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Param {
        let limit = (6.0 / fan_in as f32).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
        Param::new(shape, data)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    kernel: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    cache: Option<(Tensor, [usize; 4])>,
}

impl Conv2d {
    fn new(rng: &mut ChaCha8Rng, kernel: usize, cin: usize, cout: usize, stride: usize) -> Conv2d {
        let weight = Param::he_uniform(rng, vec![kernel, kernel, cin, cout], kernel * kernel * cin);
        Conv2d {
            weight,
            kernel,
            cin,
            cout,
            stride,
            cache: None,
        }
    }

    fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        let (out, padded) = ops::conv2d_forward(
            x,
            &self.weight.data,
            self.kernel,
            self.cin,
            self.cout,
            self.stride,
            tally,
        );
        self.cache = train.then_some((padded, x.shape));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (padded, x_shape) = self.cache.take().expect("conv backward without forward");
        let (grad_x, grad_w) = ops::conv2d_backward(
            x_shape,
            &padded,
            &self.weight.data,
            self.kernel,
            self.cin,
            self.cout,
            self.stride,
            grad_out,
        );
        for (g, d) in self.weight.grad.iter_mut().zip(&grad_w) {
            *g += d;
        }
        grad_x
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: Param,
    kernel: usize,
    channels: usize,
    stride: usize,
    cache: Option<(Tensor, [usize; 4])>,
}

impl DepthwiseConv {
    fn new(rng: &mut ChaCha8Rng, kernel: usize, channels: usize, stride: usize) -> DepthwiseConv {
        let weight = Param::he_uniform(rng, vec![kernel, kernel, channels], kernel * kernel);
        DepthwiseConv {
            weight,
            kernel,
            channels,
            stride,
            cache: None,
        }
    }

    fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        debug_assert_eq!(x.c(), self.channels);
        let (out, padded) =
            ops::depthwise_forward(x, &self.weight.data, self.kernel, self.stride, tally);
        self.cache = train.then_some((padded, x.shape));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (padded, x_shape) = self
            .cache
            .take()
            .expect("depthwise backward without forward");
        let (grad_x, grad_w) = ops::depthwise_backward(
            x_shape,
            &padded,
            &self.weight.data,
            self.kernel,
            self.stride,
            grad_out,
        );
        for (g, d) in self.weight.grad.iter_mut().zip(&grad_w) {
            *g += d;
        }
        grad_x
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    cache: Option<ops::BnCache>,
}

impl BatchNorm {
    fn new(channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::new(vec![channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        if train {
            let (out, cache) = ops::batch_norm_train(
                x,
                &self.gamma.data,
                &self.beta.data,
                &mut self.running_mean,
                &mut self.running_var,
                BN_MOMENTUM,
                BN_EPS,
            );
            self.cache = Some(cache);
            out
        } else {
            ops::batch_norm_infer(
                x,
                &self.gamma.data,
                &self.beta.data,
                &self.running_mean,
                &self.running_var,
                BN_EPS,
            )
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("bn backward without forward");
        let (grad_x, grad_gamma, grad_beta) =
            ops::batch_norm_backward(&cache, &self.gamma.data, grad_out);
        for (g, d) in self.gamma.grad.iter_mut().zip(&grad_gamma) {
            *g += d;
        }
        for (g, d) in self.beta.grad.iter_mut().zip(&grad_beta) {
            *g += d;
        }
        grad_x
    }
}

/// Convolution + batch norm + optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    relu: bool,
    relu_cache: Option<Tensor>,
}

impl ConvBnAct {
    fn new(
        rng: &mut ChaCha8Rng,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        relu: bool,
    ) -> Self {
        ConvBnAct {
            conv: Conv2d::new(rng, kernel, cin, cout, stride),
            bn: BatchNorm::new(cout),
            relu,
            relu_cache: None,
        }
    }

    fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        let y = self.conv.forward(x, train, tally);
        let y = self.bn.forward(&y, train);
        if self.relu {
            let out = ops::relu_forward(&y);
            self.relu_cache = train.then(|| out.clone());
            out
        } else {
            y
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let grad = if self.relu {
            let mask = self
                .relu_cache
                .take()
                .expect("relu backward without forward");
            ops::relu_backward(&mask, grad_out)
        } else {
            grad_out.clone()
        };
        let grad = self.bn.backward(&grad);
        self.conv.backward(&grad)
    }
}

/// Depthwise convolution + batch norm + ReLU.
#[derive(Debug, Clone)]
pub struct DwBnAct {
    pub conv: DepthwiseConv,
    pub bn: BatchNorm,
    relu_cache: Option<Tensor>,
}

impl DwBnAct {
    fn new(rng: &mut ChaCha8Rng, kernel: usize, channels: usize, stride: usize) -> Self {
        DwBnAct {
            conv: DepthwiseConv::new(rng, kernel, channels, stride),
            bn: BatchNorm::new(channels),
            relu_cache: None,
        }
    }

    fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        let y = self.conv.forward(x, train, tally);
        let y = self.bn.forward(&y, train);
        let out = ops::relu_forward(&y);
        self.relu_cache = train.then(|| out.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mask = self
            .relu_cache
            .take()
            .expect("relu backward without forward");
        let grad = ops::relu_backward(&mask, grad_out);
        let grad = self.bn.backward(&grad);
        self.conv.backward(&grad)
    }
}

/// Inverted bottleneck residual block (expand, depthwise, linear project).
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub spec: BottleneckSpec,
    pub expand: ConvBnAct,
    pub depthwise: DwBnAct,
    pub project: ConvBnAct,
}

impl Bottleneck {
    pub fn new(rng: &mut ChaCha8Rng, spec: BottleneckSpec) -> Bottleneck {
        let expanded = spec.expanded();
        Bottleneck {
            spec,
            expand: ConvBnAct::new(rng, 1, spec.in_channels, expanded, 1, true),
            depthwise: DwBnAct::new(rng, spec.kernel, expanded, spec.stride),
            project: ConvBnAct::new(rng, 1, expanded, spec.out_channels, 1, false),
        }
    }

    pub fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        let y = self.expand.forward(x, train, tally);
        let y = self.depthwise.forward(&y, train, tally);
        let mut y = self.project.forward(&y, train, tally);
        if self.spec.has_skip() {
            for (o, &xi) in y.data.iter_mut().zip(&x.data) {
                *o += xi;
            }
        }
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let grad = self.project.backward(grad_out);
        let grad = self.depthwise.backward(&grad);
        let mut grad = self.expand.backward(&grad);
        if self.spec.has_skip() {
            for (g, &go) in grad.data.iter_mut().zip(&grad_out.data) {
                *g += go;
            }
        }
        grad
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
    cache: Option<Tensor>,
}

impl Dense {
    fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Dense {
        Dense {
            weight: Param::he_uniform(rng, vec![in_dim, out_dim], in_dim),
            bias: Param::new(vec![out_dim], vec![0.0; out_dim]),
            in_dim,
            out_dim,
            cache: None,
        }
    }

    fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Tensor {
        let out = ops::dense_forward(
            x,
            &self.weight.data,
            &self.bias.data,
            self.in_dim,
            self.out_dim,
            tally,
        );
        self.cache = train.then(|| x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.cache.take().expect("dense backward without forward");
        let (grad_x, grad_w, grad_b) =
            ops::dense_backward(&x, &self.weight.data, self.in_dim, self.out_dim, grad_out);
        for (g, d) in self.weight.grad.iter_mut().zip(&grad_w) {
            *g += d;
        }
        for (g, d) in self.bias.grad.iter_mut().zip(&grad_b) {
            *g += d;
        }
        grad_x
    }
}

/// The full classifier: stem conv, eight bottlenecks, head conv, global
/// average pooling and a fully connected softmax head.
#[derive(Debug, Clone)]
pub struct MaliteMn {
    pub config: NetConfig,
    pub stem: ConvBnAct,
    pub blocks: Vec<Bottleneck>,
    pub head: ConvBnAct,
    pub fc: Dense,
    gap_shape: Option<[usize; 4]>,
}

/// Build the network with seeded He-uniform weights.
pub fn build_malite_mn(config: &NetConfig, seed: u64) -> Result<MaliteMn> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = ConvBnAct::new(
        &mut rng,
        config.stem.kernel,
        config.input_channels,
        config.stem.out_channels,
        config.stem.stride,
        true,
    );
    let blocks: Vec<Bottleneck> = config
        .blocks
        .iter()
        .map(|&spec| Bottleneck::new(&mut rng, spec))
        .collect();
    let last = config
        .blocks
        .last()
        .expect("validated: 8 blocks")
        .out_channels;
    let head = ConvBnAct::new(
        &mut rng,
        config.head.kernel,
        last,
        config.head.out_channels,
        config.head.stride,
        true,
    );
    let fc = Dense::new(&mut rng, config.head.out_channels, config.classes);
    Ok(MaliteMn {
        config: config.clone(),
        stem,
        blocks,
        head,
        fc,
        gap_shape: None,
    })
}

impl MaliteMn {
    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [
            self.config.input_side,
            self.config.input_side,
            self.config.input_channels,
        ];
        if [x.h(), x.w(), x.c()] != want {
            return Err(Error::shape(format!(
                "input {:?} does not match configured {}x{}x{}",
                x.shape, want[0], want[1], want[2]
            )));
        }
        Ok(())
    }

    /// Forward pass to pre-softmax logits.
    pub fn forward<T: Tally>(&mut self, x: &Tensor, train: bool, tally: &mut T) -> Result<Tensor> {
        self.check_input(x)?;
        let mut y = self.stem.forward(x, train, tally);
        for block in &mut self.blocks {
            y = block.forward(&y, train, tally);
        }
        let y = self.head.forward(&y, train, tally);
        self.gap_shape = Some(y.shape);
        let pooled = ops::global_avg_pool(&y);
        Ok(self.fc.forward(&pooled, train, tally))
    }

    /// Backprop from logit gradients; parameter gradients accumulate.
    pub fn backward(&mut self, grad_logits: &Tensor) {
        let grad = self.fc.backward(grad_logits);
        let shape = self.gap_shape.take().expect("backward without forward");
        let mut grad = ops::global_avg_pool_backward(shape, &grad);
        grad = self.head.backward(&grad);
        for block in self.blocks.iter_mut().rev() {
            grad = block.backward(&grad);
        }
        self.stem.backward(&grad);
    }

    /// Class ids and softmax probabilities, inference mode.
    pub fn predict(&mut self, x: &Tensor) -> Result<(Vec<usize>, Vec<Vec<f32>>)> {
        let logits = self.forward(x, false, &mut NoTally)?;
        let probs = ops::softmax(&logits);
        let k = self.config.classes;
        let mut ids = Vec::with_capacity(x.n());
        let mut rows = Vec::with_capacity(x.n());
        for row in probs.data.chunks(k) {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            ids.push(best);
            rows.push(row.to_vec());
        }
        Ok((ids, rows))
    }

    /// Forward with an exact multiply-accumulate count.
    pub fn forward_counted(&mut self, x: &Tensor) -> Result<(Tensor, u64)> {
        let mut macs = 0u64;
        let logits = self.forward(x, false, &mut macs)?;
        Ok((logits, macs))
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    /// Visit every trainable parameter in a fixed order.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        fn cba(l: &mut ConvBnAct, f: &mut dyn FnMut(&mut Param)) {
            f(&mut l.conv.weight);
            f(&mut l.bn.gamma);
            f(&mut l.bn.beta);
        }
        cba(&mut self.stem, f);
        for block in &mut self.blocks {
            cba(&mut block.expand, f);
            f(&mut block.depthwise.conv.weight);
            f(&mut block.depthwise.bn.gamma);
            f(&mut block.depthwise.bn.beta);
            cba(&mut block.project, f);
        }
        cba(&mut self.head, f);
        f(&mut self.fc.weight);
        f(&mut self.fc.bias);
    }

    pub fn param_count(&mut self) -> u64 {
        let mut count = 0u64;
        self.for_each_param(&mut |p| count += p.data.len() as u64);
        count
    }

    /// Visit every serialized tensor (parameters and running statistics)
    /// as (name, dims, values), in a fixed order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &[usize], &[f32])) {
        type Visitor<'v> = dyn FnMut(&str, &[usize], &[f32]) + 'v;
        let bn = |prefix: &str, bn: &BatchNorm, f: &mut Visitor| {
            let c = bn.gamma.data.len();
            f(&format!("{prefix}.gamma"), &[c], &bn.gamma.data);
            f(&format!("{prefix}.beta"), &[c], &bn.beta.data);
            f(&format!("{prefix}.running_mean"), &[c], &bn.running_mean);
            f(&format!("{prefix}.running_var"), &[c], &bn.running_var);
        };
        let cba = |prefix: &str, l: &ConvBnAct, f: &mut Visitor| {
            f(
                &format!("{prefix}.conv.weight"),
                &l.conv.weight.shape,
                &l.conv.weight.data,
            );
            bn(&format!("{prefix}.bn"), &l.bn, f);
        };
        cba("stem", &self.stem, &mut f);
        for (i, block) in self.blocks.iter().enumerate() {
            cba(&format!("block{i}.expand"), &block.expand, &mut f);
            f(
                &format!("block{i}.depthwise.conv.weight"),
                &block.depthwise.conv.weight.shape,
                &block.depthwise.conv.weight.data,
            );
            bn(
                &format!("block{i}.depthwise.bn"),
                &block.depthwise.bn,
                &mut f,
            );
            cba(&format!("block{i}.project"), &block.project, &mut f);
        }
        cba("head", &self.head, &mut f);
        f("fc.weight", &self.fc.weight.shape, &self.fc.weight.data);
        f("fc.bias", &self.fc.bias.shape, &self.fc.bias.data);
    }

    /// Load tensors by name; every serialized tensor must be present with
    /// the exact shape the architecture defines.
    pub fn load_tensors(&mut self, tensors: &TensorMap) -> Result<()> {
        let mut missing = Vec::new();
        let mut wanted = std::collections::BTreeSet::new();
        // collect the expected names first so shape errors are precise
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        self.for_each_tensor(|name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        for (name, shape) in &expected {
            wanted.insert(name.clone());
            match tensors.get(name) {
                None => missing.push(name.clone()),
                Some((got_shape, _)) if got_shape != shape => {
                    return Err(Error::format(format!(
                        "tensor {name} has shape {got_shape:?}, expected {shape:?}"
                    )));
                }
                Some(_) => {}
            }
        }
        if !missing.is_empty() {
            return Err(Error::format(format!(
                "missing tensors: {}",
                missing.join(", ")
            )));
        }
        if let Some(extra) = tensors.keys().find(|k| !wanted.contains(*k)) {
            return Err(Error::format(format!("unknown tensor {extra}")));
        }
        let get = |name: &str| tensors[name].1.clone();
        let bn = |prefix: &str, bn: &mut BatchNorm| {
            bn.gamma.data = get(&format!("{prefix}.gamma"));
            bn.beta.data = get(&format!("{prefix}.beta"));
            bn.running_mean = get(&format!("{prefix}.running_mean"));
            bn.running_var = get(&format!("{prefix}.running_var"));
        };
        let cba = |prefix: &str, l: &mut ConvBnAct| {
            l.conv.weight.data = get(&format!("{prefix}.conv.weight"));
            bn(&format!("{prefix}.bn"), &mut l.bn);
        };
        cba("stem", &mut self.stem);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            cba(&format!("block{i}.expand"), &mut block.expand);
            block.depthwise.conv.weight.data = get(&format!("block{i}.depthwise.conv.weight"));
            bn(&format!("block{i}.depthwise.bn"), &mut block.depthwise.bn);
            cba(&format!("block{i}.project"), &mut block.project);
        }
        cba("head", &mut self.head);
        self.fc.weight.data = get("fc.weight");
        self.fc.bias.data = get("fc.bias");
        Ok(())
    }
}

/// Byteplot image to an input tensor, intensities scaled to [0, 1].
pub fn image_to_tensor(img: &ByteImage) -> Tensor {
    let data = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor {
        shape: [
            1,
            img.height as usize,
            img.width as usize,
            img.channels as usize,
        ],
        data,
    }
}

/// Stack single-image tensors into one batch.
pub fn stack(batch: &[&Tensor]) -> Result<Tensor> {
    let first = batch.first().ok_or(Error::EmptyInput)?;
    let mut out = Tensor::zeros([batch.len(), first.h(), first.w(), first.c()]);
    let per = first.data.len();
    for (i, t) in batch.iter().enumerate() {
        if t.shape != first.shape {
            return Err(Error::shape("mixed shapes in batch"));
        }
        out.data[i * per..(i + 1) * per].copy_from_slice(&t.data);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::testref as reference;
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn default_config_validates_and_produces_logits() {
        let cfg = NetConfig::default_256(10);
        cfg.validate().unwrap();
        let mut model = build_malite_mn(&cfg, 7).unwrap();
        let x = Tensor::zeros([1, 256, 256, 1]);
        let logits = model.forward(&x, false, &mut NoTally).unwrap();
        assert_eq!(logits.shape, [1, 1, 1, 10]);
        let probs = ops::softmax(&logits);
        assert!((probs.data.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut cfg = NetConfig::default_256(10);
        cfg.blocks[3].expansion = 4;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = NetConfig::default_256(10);
        cfg.blocks.pop();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = NetConfig::default_256(10);
        cfg.blocks[2].in_channels = 99;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bottleneck_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let same = BottleneckSpec {
            in_channels: 24,
            out_channels: 24,
            stride: 1,
            expansion: 6,
            kernel: 3,
        };
        assert!(same.has_skip());
        let mut block = Bottleneck::new(&mut rng, same);
        let x = random_tensor(&mut rng, [1, 64, 64, 24]);
        let y = block.forward(&x, false, &mut NoTally);
        assert_eq!(y.shape, [1, 64, 64, 24]);

        let down = BottleneckSpec {
            in_channels: 24,
            out_channels: 32,
            stride: 2,
            expansion: 6,
            kernel: 3,
        };
        assert!(!down.has_skip());
        let mut block = Bottleneck::new(&mut rng, down);
        let y = block.forward(&x, false, &mut NoTally);
        assert_eq!(y.shape, [1, 32, 32, 32]);
    }

    #[test]
    fn zeroed_projection_makes_skip_block_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = BottleneckSpec {
            in_channels: 6,
            out_channels: 6,
            stride: 1,
            expansion: 6,
            kernel: 3,
        };
        let mut block = Bottleneck::new(&mut rng, spec);
        block
            .project
            .bn
            .gamma
            .data
            .iter_mut()
            .for_each(|g| *g = 0.0);
        block.project.bn.beta.data.iter_mut().for_each(|b| *b = 0.0);
        let x = random_tensor(&mut rng, [2, 8, 8, 6]);
        let y = block.forward(&x, false, &mut NoTally);
        assert_eq!(y, x);
    }

    /// Composed double-precision forward of one bottleneck block, train
    /// mode, matching the layer semantics (biased batch stats, eps 1e-5).
    fn block_reference(
        block: &Bottleneck,
        x: &[f64],
        shape: [usize; 4],
        params: &BlockParams,
    ) -> Vec<f64> {
        let spec = block.spec;
        let expanded = spec.expanded();
        let y = reference::conv2d(x, shape, &params.expand_w, 1, expanded, 1);
        let y = reference::batch_norm_train(
            &y,
            expanded,
            &params.expand_gamma,
            &params.expand_beta,
            1e-5,
        );
        let y = reference::relu(&y);
        let eshape = [shape[0], shape[1], shape[2], expanded];
        let y = reference::depthwise(&y, eshape, &params.dw_w, spec.kernel, spec.stride);
        let y = reference::batch_norm_train(&y, expanded, &params.dw_gamma, &params.dw_beta, 1e-5);
        let y = reference::relu(&y);
        let oh = shape[1].div_ceil(spec.stride);
        let ow = shape[2].div_ceil(spec.stride);
        let y = reference::conv2d(
            &y,
            [shape[0], oh, ow, expanded],
            &params.project_w,
            1,
            spec.out_channels,
            1,
        );
        let mut y = reference::batch_norm_train(
            &y,
            spec.out_channels,
            &params.project_gamma,
            &params.project_beta,
            1e-5,
        );
        if spec.has_skip() {
            for (o, &xi) in y.iter_mut().zip(x) {
                *o += xi;
            }
        }
        y
    }

    struct BlockParams {
        expand_w: Vec<f64>,
        expand_gamma: Vec<f64>,
        expand_beta: Vec<f64>,
        dw_w: Vec<f64>,
        dw_gamma: Vec<f64>,
        dw_beta: Vec<f64>,
        project_w: Vec<f64>,
        project_gamma: Vec<f64>,
        project_beta: Vec<f64>,
    }

    fn block_params(block: &Bottleneck) -> BlockParams {
        let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        BlockParams {
            expand_w: f64s(&block.expand.conv.weight.data),
            expand_gamma: f64s(&block.expand.bn.gamma.data),
            expand_beta: f64s(&block.expand.bn.beta.data),
            dw_w: f64s(&block.depthwise.conv.weight.data),
            dw_gamma: f64s(&block.depthwise.bn.gamma.data),
            dw_beta: f64s(&block.depthwise.bn.beta.data),
            project_w: f64s(&block.project.conv.weight.data),
            project_gamma: f64s(&block.project.bn.gamma.data),
            project_beta: f64s(&block.project.bn.beta.data),
        }
    }

    #[test]
    fn bottleneck_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, cout) in &[(1usize, 4usize), (2, 6)] {
            let spec = BottleneckSpec {
                in_channels: 4,
                out_channels: cout,
                stride,
                expansion: 6,
                kernel: 3,
            };
            let mut block = Bottleneck::new(&mut rng, spec);
            let x = random_tensor(&mut rng, [2, 6, 6, 4]);
            let y = block.forward(&x, true, &mut NoTally);
            let co: Vec<f32> = (0..y.data.len())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            let mut grad_out = Tensor::zeros(y.shape);
            grad_out.data.copy_from_slice(&co);
            let gx = block.backward(&grad_out);

            let params = block_params(&block);
            let x64: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
            let loss = |xd: &[f64]| -> f64 {
                block_reference(&block, xd, x.shape, &params)
                    .iter()
                    .zip(&co)
                    .map(|(&o, &c)| o * c as f64)
                    .sum()
            };
            let hstep = 1e-5;
            let picks = [0usize, x64.len() / 3, x64.len() / 2, x64.len() - 1];
            for &i in &picks {
                let mut lo = x64.clone();
                let mut hi = x64.clone();
                lo[i] -= hstep;
                hi[i] += hstep;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * hstep);
                let a = gx.data[i];
                let denom = a.abs().max(fd.abs() as f32).max(1e-4);
                let rel = (a as f64 - fd).abs() / denom as f64;
                assert!(
                    rel < 1e-3,
                    "block s={stride} dx[{i}]: {a} vs {fd} (rel {rel:.2e})"
                );
            }

            // weight gradient spot-check through the composed reference
            let a = block.expand.conv.weight.grad[1];
            let mut params_hi = block_params(&block);
            let mut params_lo = block_params(&block);
            params_hi.expand_w[1] += hstep;
            params_lo.expand_w[1] -= hstep;
            let hi = block_reference(&block, &x64, x.shape, &params_hi)
                .iter()
                .zip(&co)
                .map(|(&o, &c)| o * c as f64)
                .sum::<f64>();
            let lo = block_reference(&block, &x64, x.shape, &params_lo)
                .iter()
                .zip(&co)
                .map(|(&o, &c)| o * c as f64)
                .sum::<f64>();
            let fd = (hi - lo) / (2.0 * hstep);
            let denom = a.abs().max(fd.abs() as f32).max(1e-4);
            assert!(
                ((a as f64 - fd).abs() / denom as f64) < 1e-3,
                "block s={stride} expand dw: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let cfg = NetConfig::tiny(32, 3);
        let a = build_malite_mn(&cfg, 11).unwrap();
        let b = build_malite_mn(&cfg, 11).unwrap();
        let mut va = Vec::new();
        a.for_each_tensor(|_, _, d| va.extend_from_slice(d));
        let mut vb = Vec::new();
        b.for_each_tensor(|_, _, d| vb.extend_from_slice(d));
        assert_eq!(va, vb);
        let c = build_malite_mn(&cfg, 12).unwrap();
        let mut vc = Vec::new();
        c.for_each_tensor(|_, _, d| vc.extend_from_slice(d));
        assert_ne!(va, vc);
    }

    #[test]
    fn predictions_are_batch_partition_invariant() {
        let cfg = NetConfig::tiny(32, 3);
        let mut model = build_malite_mn(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let singles: Vec<Tensor> = (0..8)
            .map(|_| random_tensor(&mut rng, [1, 32, 32, 1]))
            .collect();
        let batch = stack(&singles.iter().collect::<Vec<_>>()).unwrap();
        let (batch_ids, batch_probs) = model.predict(&batch).unwrap();
        for (i, single) in singles.iter().enumerate() {
            let (ids, probs) = model.predict(single).unwrap();
            assert_eq!(ids[0], batch_ids[i]);
            assert_eq!(probs[0], batch_probs[i], "probabilities differ at {i}");
        }
        // duplicated image in one batch: identical rows
        let dup = stack(&[&singles[0], &singles[0]]).unwrap();
        let (ids, probs) = model.predict(&dup).unwrap();
        assert_eq!(ids[0], ids[1]);
        assert_eq!(probs[0], probs[1]);
    }

    #[test]
    fn tensor_round_trip_preserves_predictions() {
        let cfg = NetConfig::tiny(32, 3);
        let mut model = build_malite_mn(&cfg, 9).unwrap();
        let mut map = std::collections::BTreeMap::new();
        model.for_each_tensor(|name, shape, data| {
            map.insert(name.to_string(), (shape.to_vec(), data.to_vec()));
        });
        let mut fresh = build_malite_mn(&cfg, 999).unwrap();
        fresh.load_tensors(&map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&mut rng, [2, 32, 32, 1]);
        assert_eq!(model.predict(&x).unwrap(), fresh.predict(&x).unwrap());

        let mut broken = map.clone();
        broken.remove("fc.bias");
        assert!(matches!(fresh.load_tensors(&broken), Err(Error::Format(_))));
    }

    #[test]
    fn image_to_tensor_scales_to_unit_range() {
        let img = crate::byteplot::to_gray_image(&[0u8, 51, 255]).unwrap();
        let t = image_to_tensor(&img);
        assert_eq!(t.shape, [1, 32, 32, 1]);
        assert_eq!(t.data[0], 0.0);
        assert!((t.data[1] - 0.2).abs() < 1e-6);
        assert_eq!(t.data[2], 1.0);
    }
}
