//! VGG-style architecture, parameter store and the transfer-learning surgery
//! (head replacement and block freezing).
//!
//! Parameter names encode their position: `block{b}.conv{l}.{w,b}` for the
//! convolution stack, `head.fc{i}.{w,b}` for optional hidden FC layers and
//! `head.out.{w,b}` for the classifier.

use std::fmt;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn;
use crate::nn::PoolMask;
use crate::rng::stream_seed;
use crate::tensor::{Shape4, Tensor};

pub type ParamMap = IndexMap<String, Tensor>;

/// Square kernel size used by every convolution in the stack.
pub const KERNEL: usize = 3;
pub const IN_CHANNELS: usize = 3;

/// Class vocabulary in index order.
pub const LABELS: [&str; 4] = ["deterioration", "mould", "normal", "stain"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub convs: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSpec {
    /// Global average pooling followed by a single dense classifier.
    Gap,
    /// Flatten followed by hidden dense+ReLU layers of the given widths.
    Fc(Vec<usize>),
}

impl HeadSpec {
    pub fn name(&self) -> &'static str {
        match self {
            HeadSpec::Gap => "gap",
            HeadSpec::Fc(_) => "fc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
    pub num_classes: usize,
    /// Side length of the square RGB input.
    pub input_size: usize,
}

impl ArchSpec {
    pub const PRESETS: [&'static str; 2] = ["paper-vgg16", "canonical-vgg16"];

    pub fn new(blocks: Vec<BlockSpec>, head: HeadSpec, num_classes: usize, input_size: usize) -> Result<Self> {
        let spec = Self {
            blocks,
            head,
            num_classes,
            input_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `paper-vgg16` uses the 32/64/128/256/256 widths from the defect
    /// model description; `canonical-vgg16` the standard 64/.../512.
    pub fn preset(name: &str, head: HeadSpec, num_classes: usize) -> Result<Self> {
        let pairs: &[(usize, usize)] = match name {
            "paper-vgg16" => &[(2, 32), (2, 64), (3, 128), (3, 256), (3, 256)],
            "canonical-vgg16" => &[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            other => {
                return Err(Error::InvalidArch(format!(
                    "unknown preset {other:?}; expected one of {:?}",
                    Self::PRESETS
                )))
            }
        };
        let blocks = pairs
            .iter()
            .map(|&(convs, filters)| BlockSpec { convs, filters })
            .collect();
        Self::new(blocks, head, num_classes, Shape4::IMAGE_SIDE)
    }

    /// Parses a block list such as `2x32,2x64` (conv count × filters).
    pub fn parse_blocks(text: &str) -> Result<Vec<BlockSpec>> {
        text.split(',')
            .map(|part| {
                let part = part.trim();
                let (c, f) = part
                    .split_once('x')
                    .ok_or_else(|| Error::InvalidArch(format!("block {part:?} is not <convs>x<filters>")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidArch(format!("block {part:?} is not <convs>x<filters>")))
                };
                Ok(BlockSpec {
                    convs: parse(c)?,
                    filters: parse(f)?,
                })
            })
            .collect()
    }

    pub fn format_blocks(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("{}x{}", b.convs, b.filters))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArch("block list is empty".into()));
        }
        if self.blocks.iter().any(|b| b.convs == 0 || b.filters == 0) {
            return Err(Error::InvalidArch("every block needs at least one conv and one filter".into()));
        }
        if self.blocks.windows(2).any(|w| w[1].filters < w[0].filters) {
            return Err(Error::InvalidArch("filter counts must be non-decreasing across blocks".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let div = 1usize << self.blocks.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::InvalidArch(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size,
                self.blocks.len()
            )));
        }
        if let HeadSpec::Fc(widths) = &self.head {
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::InvalidArch("FC head widths must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn final_filters(&self) -> usize {
        self.blocks.last().map(|b| b.filters).unwrap_or(0)
    }

    /// Side of the feature maps after the last block's pooling.
    pub fn final_side(&self) -> usize {
        self.input_size >> self.blocks.len()
    }

    /// Reconstructs an architecture from parameter names and shapes. The
    /// input size cannot be recovered for a GAP head, so it is supplied.
    pub fn infer(params: &ParamMap, input_size: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        for b in 1.. {
            let mut convs = 0;
            let mut filters = 0;
            while let Some(w) = params.get(&conv_name(b, convs + 1, "w")) {
                filters = w.shape()[0];
                convs += 1;
            }
            if convs == 0 {
                break;
            }
            blocks.push(BlockSpec { convs, filters });
        }
        let out = params
            .get("head.out.w")
            .ok_or_else(|| Error::InvalidArch("parameters have no head.out.w classifier".into()))?;
        let num_classes = *out
            .shape()
            .get(1)
            .ok_or_else(|| shape_err("head.out.w must be rank 2"))?;
        let mut widths = Vec::new();
        while let Some(w) = params.get(&format!("head.fc{}.w", widths.len() + 1)) {
            widths.push(w.shape()[1]);
        }
        let (head, input_size) = if widths.is_empty() {
            (HeadSpec::Gap, input_size)
        } else {
            let fan_in = params[&"head.fc1.w".to_string()].shape()[0];
            let filters = blocks.last().map(|b| b.filters).unwrap_or(1);
            let side = ((fan_in / filters) as f64).sqrt().round() as usize;
            if side * side * filters != fan_in {
                return Err(Error::InvalidArch(format!(
                    "head.fc1.w fan-in {fan_in} is not filters x side^2"
                )));
            }
            (HeadSpec::Fc(widths), side << blocks.len())
        };
        Self::new(blocks, head, num_classes, input_size)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "blocks={} head={} classes={} input={}",
            self.format_blocks(),
            self.head.name(),
            self.num_classes,
            self.input_size
        )
    }
}

pub fn conv_name(block: usize, conv: usize, role: &str) -> String {
    format!("block{block}.conv{conv}.{role}")
}

/// Block number (1-based) a parameter belongs to, `None` for head params.
pub fn param_block(name: &str) -> Option<usize> {
    name.strip_prefix("block")?
        .split('.')
        .next()?
        .parse()
        .ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layer {
    Conv { w: String, b: String },
    Relu,
    MaxPool,
    Gap,
    Flatten,
    Dense { w: String, b: String },
}

impl Layer {
    fn params(&self) -> Option<(&str, &str)> {
        match self {
            Layer::Conv { w, b } | Layer::Dense { w, b } => Some((w, b)),
            _ => None,
        }
    }
}

/// Freezing rule applied by [`Model::set_trainable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainRule {
    /// Blocks `1..=k` frozen, everything after (and the head) trainable.
    FreezeUpToBlock(usize),
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Tensor,
    pub probs: Tensor,
    /// Output of the last convolution block (after its pooling), pre-GAP.
    pub final_conv_maps: Tensor,
    /// `(H, W)` of the input images.
    pub input_hw: (usize, usize),
}

enum Cache {
    Input(Tensor),
    Mask(PoolMask),
    Shape(Shape4),
}

/// Per-layer state kept by [`Model::forward_train`] for the backward pass.
pub struct Activations {
    caches: Vec<Option<Cache>>,
    first_trainable: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ArchSpec,
    layers: Vec<Layer>,
    /// Index of the first head layer; the maps entering it are the final
    /// convolutional maps.
    head_start: usize,
    params: ParamMap,
    trainable: IndexMap<String, bool>,
}

fn init_param(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, name.as_bytes()));
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound))
}

fn head_layers(spec: &ArchSpec) -> Vec<(Layer, Option<[usize; 2]>)> {
    let c = spec.final_filters();
    match &spec.head {
        HeadSpec::Gap => vec![
            (Layer::Gap, None),
            (
                Layer::Dense {
                    w: "head.out.w".into(),
                    b: "head.out.b".into(),
                },
                Some([c, spec.num_classes]),
            ),
        ],
        HeadSpec::Fc(widths) => {
            let side = spec.final_side();
            let mut fan_in = c * side * side;
            let mut out = vec![(Layer::Flatten, None)];
            for (i, &wd) in widths.iter().enumerate() {
                out.push((
                    Layer::Dense {
                        w: format!("head.fc{}.w", i + 1),
                        b: format!("head.fc{}.b", i + 1),
                    },
                    Some([fan_in, wd]),
                ));
                out.push((Layer::Relu, None));
                fan_in = wd;
            }
            out.push((
                Layer::Dense {
                    w: "head.out.w".into(),
                    b: "head.out.b".into(),
                },
                Some([fan_in, spec.num_classes]),
            ));
            out
        }
    }
}

impl Model {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero. Each parameter
    /// draws from its own stream keyed by `(seed, name)`.
    pub fn build(spec: &ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut params = ParamMap::new();
        let mut in_ch = IN_CHANNELS;
        for (bi, block) in spec.blocks.iter().enumerate() {
            for ci in 0..block.convs {
                let w = conv_name(bi + 1, ci + 1, "w");
                let b = conv_name(bi + 1, ci + 1, "b");
                let fan_in = in_ch * KERNEL * KERNEL;
                params.insert(w.clone(), init_param(seed, &w, &[block.filters, in_ch, KERNEL, KERNEL], fan_in));
                params.insert(b.clone(), Tensor::zeros([block.filters]));
                layers.push(Layer::Conv { w, b });
                layers.push(Layer::Relu);
                in_ch = block.filters;
            }
            layers.push(Layer::MaxPool);
        }
        let head_start = layers.len();
        let mut model = Self {
            spec: spec.clone(),
            layers,
            head_start,
            params,
            trainable: IndexMap::new(),
        };
        model.install_head(seed);
        model.trainable = model.params.keys().map(|k| (k.clone(), true)).collect();
        Ok(model)
    }

    fn install_head(&mut self, seed: u64) {
        self.layers.truncate(self.head_start);
        self.params.retain(|name, _| param_block(name).is_some());
        for (layer, shape) in head_layers(&self.spec) {
            if let (Some((w, b)), Some([fan_in, out])) = (layer.params(), shape) {
                self.params.insert(w.to_string(), init_param(seed, w, &[fan_in, out], fan_in));
                self.params.insert(b.to_string(), Tensor::zeros([out]));
            }
            self.layers.push(layer);
        }
    }

    /// Swaps the classifier for a freshly initialised one with
    /// `num_classes` outputs. Convolution parameters are untouched.
    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.num_classes = num_classes;
        spec.validate()?;
        self.spec = spec;
        self.install_head(seed);
        self.trainable.retain(|name, _| param_block(name).is_some());
        for name in self.params.keys() {
            if param_block(name).is_none() {
                self.trainable.insert(name.clone(), true);
            }
        }
        // Keep trainable in parameter order.
        let order: IndexMap<String, bool> = self
            .params
            .keys()
            .map(|k| (k.clone(), self.trainable[k]))
            .collect();
        self.trainable = order;
        Ok(())
    }

    pub fn set_trainable(&mut self, rule: TrainRule) -> Result<()> {
        let TrainRule::FreezeUpToBlock(k) = rule;
        if k > self.spec.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot freeze up to block {k}: model has {} blocks",
                self.spec.blocks.len()
            )));
        }
        for (name, flag) in self.trainable.iter_mut() {
            *flag = match param_block(name) {
                Some(b) => b > k,
                None => true,
            };
        }
        Ok(())
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap {
        &mut self.params
    }

    pub fn trainable(&self) -> &IndexMap<String, bool> {
        &self.trainable
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.get(name).copied().unwrap_or(false)
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.trainable
            .iter()
            .filter(|(_, &t)| t)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn head_kind(&self) -> &HeadSpec {
        &self.spec.head
    }

    /// `[C × num_classes]` classifier weights behind the GAP; only GAP-head
    /// models have a direct channel-to-class projection.
    pub fn cam_weights(&self) -> Result<&Tensor> {
        match self.spec.head {
            HeadSpec::Gap => Ok(&self.params["head.out.w"]),
            HeadSpec::Fc(_) => Err(Error::Capability(
                "class activation maps need a GAP head; this model has an FC head".into(),
            )),
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<Shape4> {
        let s = Shape4::of(batch)?;
        let side = self.spec.input_size;
        if s.c != IN_CHANNELS || s.h != side || s.w != side {
            return Err(shape_err(format!(
                "model expects [N, {IN_CHANNELS}, {side}, {side}] input, got {:?}",
                batch.shape()
            )));
        }
        Ok(s)
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ForwardTrace> {
        self.run(batch, false).map(|(trace, _)| trace)
    }

    /// Forward pass that also keeps what [`Model::backward`] needs. Layers
    /// before the earliest trainable one cache nothing.
    pub fn forward_train(&self, batch: &Tensor) -> Result<(ForwardTrace, Activations)> {
        self.run(batch, true)
    }

    fn first_trainable_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            l.params()
                .is_some_and(|(w, b)| self.is_trainable(w) || self.is_trainable(b))
        })
    }

    fn run(&self, batch: &Tensor, keep: bool) -> Result<(ForwardTrace, Activations)> {
        let shape = self.check_batch(batch)?;
        let first_trainable = if keep { self.first_trainable_layer() } else { None };
        let mut caches: Vec<Option<Cache>> = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        let mut final_maps = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == self.head_start {
                final_maps = Some(x.clone());
            }
            let store = first_trainable.is_some_and(|f| i >= f);
            let (y, cache) = match layer {
                Layer::Conv { w, b } => {
                    let y = nn::conv2d(&x, &self.params[w], &self.params[b], 1, KERNEL / 2)?;
                    (y, Cache::Input(x))
                }
                Layer::Relu => (nn::relu(&x), Cache::Input(x)),
                Layer::MaxPool => {
                    let (y, mask) = nn::maxpool2d_forward(&x)?;
                    (y, Cache::Mask(mask))
                }
                Layer::Gap => {
                    let s = Shape4::of(&x)?;
                    (nn::global_avg_pool(&x)?, Cache::Shape(s))
                }
                Layer::Flatten => {
                    let s = Shape4::of(&x)?;
                    (x.reshape([s.n, s.c * s.plane()])?, Cache::Shape(s))
                }
                Layer::Dense { w, b } => {
                    let y = nn::dense_forward(&x, &self.params[w], &self.params[b])?;
                    (y, Cache::Input(x))
                }
            };
            caches.push(store.then_some(cache));
            x = y;
        }
        let probs = nn::softmax(&x)?;
        Ok((
            ForwardTrace {
                logits: x,
                probs,
                final_conv_maps: final_maps.expect("model has a head"),
                input_hw: (shape.h, shape.w),
            },
            Activations {
                caches,
                first_trainable,
            },
        ))
    }

    /// Backpropagates `d_logits`, returning gradients for trainable
    /// parameters only.
    pub fn backward(&self, acts: Activations, d_logits: &Tensor) -> Result<ParamMap> {
        let mut grads = ParamMap::new();
        let Some(first) = acts.first_trainable else {
            return Ok(grads);
        };
        let mut d = d_logits.clone();
        let mut caches = acts.caches;
        for i in (first..self.layers.len()).rev() {
            let cache = caches[i].take().expect("activation cached for trainable range");
            let need_input = i > first;
            d = match (&self.layers[i], cache) {
                (Layer::Conv { w, b }, Cache::Input(x)) => {
                    let g = nn::conv2d_grads(&x, &self.params[w], &self.params[b], 1, KERNEL / 2, &d, need_input)?;
                    if self.is_trainable(w) {
                        grads.insert(w.clone(), g.d_weights);
                    }
                    if self.is_trainable(b) {
                        grads.insert(b.clone(), g.d_bias);
                    }
                    match g.d_input {
                        Some(di) => di,
                        None => break,
                    }
                }
                (Layer::Dense { w, b }, Cache::Input(x)) => {
                    let mut g = nn::dense_backward(&x, &self.params[w], &self.params[b], &d)?;
                    if self.is_trainable(w) {
                        grads.insert(w.clone(), g.d_params.swap_remove("weights").unwrap());
                    }
                    if self.is_trainable(b) {
                        grads.insert(b.clone(), g.d_params.swap_remove("bias").unwrap());
                    }
                    g.d_input
                }
                (Layer::Relu, Cache::Input(x)) => nn::relu_backward(&x, &d)?,
                (Layer::MaxPool, Cache::Mask(mask)) => nn::maxpool2d_backward(&mask, &d)?,
                (Layer::Gap, Cache::Shape(s)) => nn::global_avg_pool_backward(s, &d)?,
                (Layer::Flatten, Cache::Shape(s)) => d.reshape(s.dims())?,
                _ => unreachable!("cache kind matches its layer"),
            };
        }
        // Report in parameter order regardless of traversal order.
        let ordered = self
            .params
            .keys()
            .filter_map(|k| grads.swap_remove(k).map(|g| (k.clone(), g)))
            .collect();
        Ok(ordered)
    }

    /// Label index and class probabilities for one `[3, H, W]` image.
    pub fn predict(&self, image: &Tensor) -> Result<(usize, Vec<f32>)> {
        let batch = match *image.shape() {
            [c, h, w] => image.clone().reshape([1, c, h, w])?,
            _ => return Err(shape_err(format!("predict expects a [3, H, W] image, got {:?}", image.shape()))),
        };
        let trace = self.forward(&batch)?;
        let probs = trace.probs.into_data();
        Ok((argmax(&probs), probs))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
