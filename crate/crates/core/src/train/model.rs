//! Small feed-forward classifier: an optional stack of valid, stride-1
//! convolutions followed by fully-connected layers and softmax cross-entropy.
//! Forward and backward passes are written out by hand.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainError;
use crate::weight_store::{LayerTensor, WeightSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Normal with std `sqrt(2 / fan_in)`.
    #[default]
    KaimingNormal,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Hidden widths of the dense stack; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub conv: Vec<ConvBlock>,
    /// `(channels, height, width)` of each example; required with a conv stem.
    pub input_shape: Option<(usize, usize, usize)>,
    pub init: InitScheme,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: vec![64, 64, 32],
            activation: Activation::Relu,
            conv: Vec::new(),
            input_shape: None,
            init: InitScheme::KaimingNormal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub kind: ParamKind,
}

impl Param {
    fn zeros(name: String, dims: Vec<usize>, kind: ParamKind) -> Self {
        let len = dims.iter().product();
        Param {
            name,
            dims,
            values: vec![0.0; len],
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    block: ConvBlock,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.block.in_channels * self.block.kh * self.block.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.block.in_channels * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.block.out_channels * self.positions()
    }

    /// Patch matrix (positions × k) for one example laid out as (c, h, w).
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let b = self.block;
        let mut p = Vec::with_capacity(self.positions() * self.k());
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                for c in 0..b.in_channels {
                    for dy in 0..b.kh {
                        let row = c * self.h * self.w + (oy + dy) * self.w + ox;
                        p.extend_from_slice(&x[row..row + b.kw]);
                    }
                }
            }
        }
        p
    }

    fn col2im_add(&self, dp: &[f64], dx: &mut [f64]) {
        let b = self.block;
        let k = self.k();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let patch = &dp[(oy * self.ow + ox) * k..][..k];
                let mut idx = 0;
                for c in 0..b.in_channels {
                    for dy in 0..b.kh {
                        let row = c * self.h * self.w + (oy + dy) * self.w + ox;
                        for (d, g) in dx[row..row + b.kw].iter_mut().zip(&patch[idx..idx + b.kw]) {
                            *d += g;
                        }
                        idx += b.kw;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv(ConvGeom),
    Dense { inputs: usize, outputs: usize },
}

/// Parameters plus the layer plan that interprets them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: Vec<Param>,
    plan: Vec<LayerPlan>,
    pub activation: Activation,
    pub inputs: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerPlan {
    weight: usize,
    bias: usize,
    conv: Option<(ConvBlock, usize, usize)>,
    inputs: usize,
    outputs: usize,
}

impl LayerPlan {
    fn layer(&self) -> Layer {
        match self.conv {
            Some((block, h, w)) => Layer::Conv(ConvGeom {
                block,
                h,
                w,
                oh: h - block.kh + 1,
                ow: w - block.kw + 1,
            }),
            None => Layer::Dense {
                inputs: self.inputs,
                outputs: self.outputs,
            },
        }
    }
}

/// Row-major `a (r × k) · bᵀ` where `b` is `c × k`; result `r × c`.
fn matmul_bt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let ar = &a[i * k..][..k];
        for j in 0..c {
            let br = &b[j * k..][..k];
            out[i * c + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `acc (c × k) += dᵀ · a` for `d` (r × c) and `a` (r × k).
fn add_at_b(acc: &mut [f64], d: &[f64], a: &[f64], r: usize, c: usize, k: usize) {
    for i in 0..r {
        let ar = &a[i * k..][..k];
        for j in 0..c {
            let g = d[i * c + j];
            if g == 0.0 {
                continue;
            }
            for (o, x) in acc[j * k..][..k].iter_mut().zip(ar) {
                *o += g * x;
            }
        }
    }
}

/// `d (r × c) · b (c × k)`.
fn matmul(d: &[f64], b: &[f64], r: usize, c: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        let o = &mut out[i * k..][..k];
        for j in 0..c {
            let g = d[i * c + j];
            if g == 0.0 {
                continue;
            }
            for (x, y) in o.iter_mut().zip(&b[j * k..][..k]) {
                *x += g * y;
            }
        }
    }
    out
}

impl Network {
    pub fn new(
        spec: &ModelSpec,
        inputs: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        if spec.hidden.is_empty() {
            return Err(TrainError::Model(
                "at least one hidden layer is required (two dense layers)".into(),
            ));
        }
        if spec.hidden.contains(&0) || inputs == 0 || classes < 2 {
            return Err(TrainError::Model(format!(
                "widths must be positive with at least 2 classes (inputs {inputs}, classes {classes})"
            )));
        }
        let mut params = Vec::new();
        let mut plan = Vec::new();
        let mut features = inputs;

        if !spec.conv.is_empty() {
            let (mut c, mut h, mut w) = spec.input_shape.ok_or_else(|| {
                TrainError::Model("a conv stem needs input_shape".into())
            })?;
            if c * h * w != inputs {
                return Err(TrainError::Model(format!(
                    "input_shape {c}x{h}x{w} does not match {inputs} features"
                )));
            }
            for (i, block) in spec.conv.iter().enumerate() {
                if block.in_channels != c
                    || block.out_channels == 0
                    || block.kh == 0
                    || block.kw == 0
                    || block.kh > h
                    || block.kw > w
                {
                    return Err(TrainError::Model(format!(
                        "conv block {i} ({}x{}x{}x{}) does not fit input {c}x{h}x{w}",
                        block.out_channels, block.in_channels, block.kh, block.kw
                    )));
                }
                let weight = params.len();
                params.push(Param::zeros(
                    format!("conv{i}.weight"),
                    vec![block.out_channels, block.in_channels, block.kh, block.kw],
                    ParamKind::Weight,
                ));
                params.push(Param::zeros(
                    format!("conv{i}.bias"),
                    vec![block.out_channels],
                    ParamKind::Bias,
                ));
                let oh = h - block.kh + 1;
                let ow = w - block.kw + 1;
                plan.push(LayerPlan {
                    weight,
                    bias: weight + 1,
                    conv: Some((*block, h, w)),
                    inputs: c * h * w,
                    outputs: block.out_channels * oh * ow,
                });
                (c, h, w) = (block.out_channels, oh, ow);
            }
            features = c * h * w;
        }

        let widths: Vec<usize> = std::iter::once(features)
            .chain(spec.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        for (i, pair) in widths.windows(2).enumerate() {
            let weight = params.len();
            params.push(Param::zeros(
                format!("fc{i}.weight"),
                vec![pair[1], pair[0]],
                ParamKind::Weight,
            ));
            params.push(Param::zeros(
                format!("fc{i}.bias"),
                vec![pair[1]],
                ParamKind::Bias,
            ));
            plan.push(LayerPlan {
                weight,
                bias: weight + 1,
                conv: None,
                inputs: pair[0],
                outputs: pair[1],
            });
        }

        let mut net = Network {
            params,
            plan,
            activation: spec.activation,
            inputs,
            classes,
        };
        net.initialize(spec.init, rng);
        Ok(net)
    }

    fn initialize(&mut self, scheme: InitScheme, rng: &mut ChaCha8Rng) {
        for lp in &self.plan {
            let p = &mut self.params[lp.weight];
            let fan_out = p.dims[0];
            let fan_in: usize = p.dims[1..].iter().product();
            match scheme {
                InitScheme::KaimingNormal => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in &mut p.values {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = std * z;
                    }
                }
                InitScheme::XavierUniform => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in &mut p.values {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Names of the weight tensors, in layer order.
    pub fn weight_names(&self) -> Vec<String> {
        self.plan
            .iter()
            .map(|lp| self.params[lp.weight].name.clone())
            .collect()
    }

    pub fn weight_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.plan.iter().map(|lp| lp.weight)
    }

    pub fn snapshot(&self, epoch: u32) -> WeightSnapshot {
        let layers = self
            .plan
            .iter()
            .map(|lp| {
                let p = &self.params[lp.weight];
                LayerTensor {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    values: p.values.clone(),
                }
            })
            .collect();
        WeightSnapshot { epoch, layers }
    }

    /// Logits for a batch of `x.len() / inputs` examples.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().expect("at least one layer")
    }

    /// Activations per layer, starting with the input; the last entry is the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let batch = x.len() / self.inputs;
        let mut acts = Vec::with_capacity(self.plan.len() + 1);
        acts.push(x.to_vec());
        let last = self.plan.len() - 1;
        for (li, lp) in self.plan.iter().enumerate() {
            let input = acts.last().expect("input present");
            let w = &self.params[lp.weight].values;
            let b = &self.params[lp.bias].values;
            let mut out = match lp.layer() {
                Layer::Dense { inputs, outputs } => {
                    let mut z = matmul_bt(input, w, batch, inputs, outputs);
                    for row in z.chunks_exact_mut(outputs) {
                        for (v, bias) in row.iter_mut().zip(b) {
                            *v += bias;
                        }
                    }
                    z
                }
                Layer::Conv(g) => {
                    let mut z = vec![0.0; batch * g.out_len()];
                    for (s, xs) in input.chunks_exact(g.in_len()).enumerate() {
                        let patches = g.im2col(xs);
                        // (positions × out), transposed into channel-major (out, oh, ow)
                        let y = matmul_bt(&patches, w, g.positions(), g.k(), g.block.out_channels);
                        let zs = &mut z[s * g.out_len()..][..g.out_len()];
                        for pos in 0..g.positions() {
                            for o in 0..g.block.out_channels {
                                zs[o * g.positions() + pos] =
                                    y[pos * g.block.out_channels + o] + b[o];
                            }
                        }
                    }
                    z
                }
            };
            if li != last {
                let act = self.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(out);
        }
        acts
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, x: &[f64], y: &[usize]) -> f64 {
        let logits = self.logits(x);
        softmax_xent(&logits, y, self.classes).0
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, x: &[f64], y: &[usize]) -> (f64, Vec<Vec<f64>>) {
        let batch = y.len();
        let acts = self.forward(x);
        let (loss, mut delta) = softmax_xent(acts.last().expect("logits"), y, self.classes);
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.values.len()]).collect();

        for (li, lp) in self.plan.iter().enumerate().rev() {
            let input = &acts[li];
            let w = &self.params[lp.weight].values;
            match lp.layer() {
                Layer::Dense { inputs, outputs } => {
                    add_at_b(&mut grads[lp.weight], &delta, input, batch, outputs, inputs);
                    let gb = &mut grads[lp.bias];
                    for row in delta.chunks_exact(outputs) {
                        for (g, d) in gb.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                    if li > 0 {
                        delta = matmul(&delta, w, batch, outputs, inputs);
                    }
                }
                Layer::Conv(g) => {
                    let oc = g.block.out_channels;
                    let mut dx = if li > 0 {
                        vec![0.0; batch * g.in_len()]
                    } else {
                        Vec::new()
                    };
                    for s in 0..batch {
                        let ds = &delta[s * g.out_len()..][..g.out_len()];
                        // back to (positions × out)
                        let mut dy = vec![0.0; g.positions() * oc];
                        for o in 0..oc {
                            for pos in 0..g.positions() {
                                dy[pos * oc + o] = ds[o * g.positions() + pos];
                            }
                        }
                        let patches = g.im2col(&input[s * g.in_len()..][..g.in_len()]);
                        add_at_b(&mut grads[lp.weight], &dy, &patches, g.positions(), oc, g.k());
                        for o in 0..oc {
                            grads[lp.bias][o] +=
                                ds[o * g.positions()..][..g.positions()].iter().sum::<f64>();
                        }
                        if li > 0 {
                            let dp = matmul(&dy, w, g.positions(), oc, g.k());
                            g.col2im_add(&dp, &mut dx[s * g.in_len()..][..g.in_len()]);
                        }
                    }
                    delta = dx;
                }
            }
            if li > 0 {
                let act = self.activation;
                for (d, a) in delta.iter_mut().zip(&acts[li]) {
                    *d *= act.grad_from_output(*a);
                }
            }
        }
        (loss, grads)
    }

    /// Fraction of examples whose argmax logit equals the label.
    pub fn accuracy(&self, x: &[f64], y: &[usize]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let logits = self.logits(x);
        let hits = logits
            .chunks_exact(self.classes)
            .zip(y)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        hits as f64 / y.len() as f64
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Returns mean loss and `∂loss/∂logits`.
fn softmax_xent(logits: &[f64], y: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = y.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &label) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(y)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() / batch;
        }
        g[label] -= 1.0 / batch;
    }
    (loss / batch, grad)
}
