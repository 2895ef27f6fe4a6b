//! Layer-level network representation expanded from a genome.
//!
//! Block expansion:
//!
//! * `VGG`: conv3x3(k), conv3x3(k), ReLU, maxpool 2x2
//! * `MVGG`: conv3x3(k), conv3x3(k), ReLU
//! * `RES`: conv3x3(k), BN, ReLU, conv3x3(k), BN, conv1x1(k) shortcut, add, ReLU
//!
//! followed by the fixed head: flatten, FC(hidden), ReLU, dropout, FC(classes), softmax.
//!
//! All 3x3 convs use stride 1 and padding 1, so only pooling changes the
//! spatial size. The residual shortcut conv reads the block input rather than
//! the previous layer; it records the block's first conv in `shortcut_of` and is linked to its
//! add layer by an entry in [`NetworkIR::skip_edges`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ArchGenome, BlockType, InputShape, SearchSpace};

/// Activation tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorShape {
    Spatial { c: u64, h: u64, w: u64 },
    Flat { len: u64 },
}

impl TensorShape {
    pub fn elements(&self) -> u64 {
        match *self {
            TensorShape::Spatial { c, h, w } => c * h * w,
            TensorShape::Flat { len } => len,
        }
    }
}

impl From<InputShape> for TensorShape {
    fn from(s: InputShape) -> Self {
        TensorShape::Spatial {
            c: s.channels.into(),
            h: s.height.into(),
            w: s.width.into(),
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorShape::Spatial { c, h, w } => write!(f, "{c}x{h}x{w}"),
            TensorShape::Flat { len } => write!(f, "{len}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Conv {
        kh: u64,
        kw: u64,
        cin: u64,
        cout: u64,
        stride: u64,
        padding: u64,
        bias: bool,
    },
    BatchNorm {
        channels: u64,
    },
    ReLU,
    MaxPool {
        size: u64,
    },
    ResidualAdd {
        elements: u64,
    },
    Flatten,
    FullyConnected {
        inputs: u64,
        outputs: u64,
        bias: bool,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::BatchNorm { .. } => "BatchNorm",
            LayerKind::ReLU => "ReLU",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::ResidualAdd { .. } => "ResidualAdd",
            LayerKind::Flatten => "Flatten",
            LayerKind::FullyConnected { .. } => "FullyConnected",
            LayerKind::Dropout { .. } => "Dropout",
            LayerKind::Softmax => "Softmax",
        }
    }

    /// Conv and FC layers are the ones mapped onto crossbars.
    pub fn is_matrix(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::FullyConnected { .. })
    }

    /// Output shape for a given input, or a description of the mismatch.
    pub fn infer_shape(&self, input: TensorShape) -> std::result::Result<TensorShape, String> {
        use TensorShape::*;
        match (*self, input) {
            (
                LayerKind::Conv {
                    kh,
                    kw,
                    cin,
                    cout,
                    stride,
                    padding,
                    ..
                },
                Spatial { c, h, w },
            ) => {
                if c != cin {
                    return Err(format!("conv expects {cin} input channels, got {c}"));
                }
                if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err(format!("conv {kh}x{kw} does not fit a {h}x{w} input"));
                }
                Ok(Spatial {
                    c: cout,
                    h: (h + 2 * padding - kh) / stride + 1,
                    w: (w + 2 * padding - kw) / stride + 1,
                })
            }
            (LayerKind::BatchNorm { channels }, s @ Spatial { c, .. }) => {
                if c == channels {
                    Ok(s)
                } else {
                    Err(format!("batch norm over {channels} channels, got {c}"))
                }
            }
            (LayerKind::MaxPool { size }, Spatial { c, h, w }) => {
                if size == 0 || h / size == 0 || w / size == 0 {
                    return Err(format!("{size}x{size} pooling collapses {h}x{w}"));
                }
                Ok(Spatial {
                    c,
                    h: h / size,
                    w: w / size,
                })
            }
            (LayerKind::ResidualAdd { elements }, s) => {
                if s.elements() == elements {
                    Ok(s)
                } else {
                    Err(format!("residual add of {elements} elements, got {s}"))
                }
            }
            (LayerKind::Flatten, s) => Ok(Flat { len: s.elements() }),
            (
                LayerKind::FullyConnected {
                    inputs, outputs, ..
                },
                Flat { len },
            ) => {
                if len == inputs {
                    Ok(Flat { len: outputs })
                } else {
                    Err(format!("fully connected expects {inputs} inputs, got {len}"))
                }
            }
            (LayerKind::ReLU | LayerKind::Dropout { .. } | LayerKind::Softmax, s) => Ok(s),
            (kind, s) => Err(format!("{} cannot consume a {s} tensor", kind.name())),
        }
    }

    pub fn params(&self) -> u64 {
        match *self {
            LayerKind::Conv {
                kh,
                kw,
                cin,
                cout,
                bias,
                ..
            } => cin * kh * kw * cout + if bias { cout } else { 0 },
            // Affine scale and shift; running statistics are not parameters.
            LayerKind::BatchNorm { channels } => 2 * channels,
            LayerKind::FullyConnected {
                inputs,
                outputs,
                bias,
            } => inputs * outputs + if bias { outputs } else { 0 },
            _ => 0,
        }
    }

    pub fn macs(&self, out_shape: TensorShape) -> u64 {
        match (*self, out_shape) {
            (
                LayerKind::Conv {
                    kh, kw, cin, cout, ..
                },
                TensorShape::Spatial { h, w, .. },
            ) => cout * h * w * cin * kh * kw,
            (LayerKind::FullyConnected { inputs, outputs, .. }, _) => inputs * outputs,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerIR {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub params: u64,
    pub macs: u64,
    /// For a residual shortcut conv: index of the layer whose input it shares
    /// (the first conv of the block). Such layers do not consume the previous
    /// layer's output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut_of: Option<usize>,
}

impl LayerIR {
    pub fn new(kind: LayerKind, in_shape: TensorShape) -> Result<Self> {
        let out_shape = kind
            .infer_shape(in_shape)
            .map_err(|m| Error::Config(format!("layer {}: {m}", kind.name())))?;
        Ok(Self {
            kind,
            in_shape,
            out_shape,
            params: kind.params(),
            macs: kind.macs(out_shape),
            shortcut_of: None,
        })
    }
}

/// Fixed classifier head appended after the searched blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden_units: u64,
    pub dropout_rate: f64,
    pub num_classes: u64,
}

impl HeadSpec {
    pub fn new(num_classes: u64) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.hidden_units < 1 || self.num_classes < 1 {
            return Err(Error::Config("head: hidden_units and num_classes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("head: dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            dropout_rate: 0.5,
            num_classes: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpandOptions {
    /// Insert a ReLU after each conv of VGG/MVGG blocks instead of one after the pair.
    pub relu_per_conv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkIR {
    /// Canonical genome text; empty for hand-built networks.
    #[serde(default)]
    pub genome: String,
    pub input_shape: TensorShape,
    pub layers: Vec<LayerIR>,
    /// `(shortcut conv index, residual add index)` pairs.
    pub skip_edges: Vec<(usize, usize)>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl NetworkIR {
    /// Builds a plain chain of layers with inferred shapes.
    pub fn sequential(input: TensorShape, kinds: &[LayerKind]) -> Result<Self> {
        let mut builder = Builder::new(input);
        for &kind in kinds {
            builder.push(kind)?;
        }
        Ok(builder.finish(String::new()))
    }

    pub fn count_params(&self) -> u64 {
        count_params(&self.layers)
    }

    pub fn count_macs(&self) -> u64 {
        count_macs(&self.layers)
    }

    pub fn count_kind(&self, name: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.name() == name).count()
    }

    /// Verifies shape chaining, skip edges and totals. Used on IR read from JSON.
    pub fn check(&self) -> Result<()> {
        let fail = |i: usize, m: String| Err(Error::Config(format!("IR layer {i}: {m}")));
        let mut current = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            let expected_in = match layer.shortcut_of {
                Some(j) if j < i => self.layers[j].in_shape,
                Some(j) => return fail(i, format!("shortcut refers to later layer {j}")),
                None => current,
            };
            if layer.in_shape != expected_in {
                return fail(i, format!("in_shape {} != {}", layer.in_shape, expected_in));
            }
            match layer.kind.infer_shape(layer.in_shape) {
                Ok(out) if out == layer.out_shape => {}
                Ok(out) => return fail(i, format!("out_shape {} != {}", layer.out_shape, out)),
                Err(m) => return fail(i, m),
            }
            if layer.params != layer.kind.params() || layer.macs != layer.kind.macs(layer.out_shape)
            {
                return fail(i, "params/macs disagree with the layer kind".into());
            }
            if layer.shortcut_of.is_none() {
                current = layer.out_shape;
            }
        }
        for &(src, add) in &self.skip_edges {
            let (Some(s), Some(a)) = (self.layers.get(src), self.layers.get(add)) else {
                return Err(Error::Config(format!("skip edge ({src}, {add}) out of range")));
            };
            if !matches!(a.kind, LayerKind::ResidualAdd { .. }) || s.shortcut_of.is_none() {
                return Err(Error::Config(format!(
                    "skip edge ({src}, {add}) must join a shortcut conv to a residual add"
                )));
            }
            if s.out_shape != a.in_shape {
                return Err(Error::Config(format!(
                    "skip edge ({src}, {add}) joins {} to {}",
                    s.out_shape, a.in_shape
                )));
            }
        }
        if self.total_params != self.count_params() || self.total_macs != self.count_macs() {
            return Err(Error::Config("IR totals disagree with layer sums".into()));
        }
        Ok(())
    }
}

pub fn count_params(layers: &[LayerIR]) -> u64 {
    layers.iter().map(|l| l.params).sum()
}

pub fn count_macs(layers: &[LayerIR]) -> u64 {
    layers.iter().map(|l| l.macs).sum()
}

struct Builder {
    input: TensorShape,
    current: TensorShape,
    layers: Vec<LayerIR>,
    skip_edges: Vec<(usize, usize)>,
}

impl Builder {
    fn new(input: TensorShape) -> Self {
        Self {
            input,
            current: input,
            layers: Vec::new(),
            skip_edges: Vec::new(),
        }
    }

    fn channels(&self) -> u64 {
        match self.current {
            TensorShape::Spatial { c, .. } => c,
            TensorShape::Flat { len } => len,
        }
    }

    fn push(&mut self, kind: LayerKind) -> Result<usize> {
        let layer = LayerIR::new(kind, self.current)?;
        self.current = layer.out_shape;
        self.layers.push(layer);
        Ok(self.layers.len() - 1)
    }

    fn conv(&mut self, k: u64, cout: u64) -> Result<usize> {
        let cin = self.channels();
        self.push(conv_kind(k, cin, cout))
    }

    fn finish(self, genome: String) -> NetworkIR {
        NetworkIR {
            genome,
            input_shape: self.input,
            total_params: count_params(&self.layers),
            total_macs: count_macs(&self.layers),
            layers: self.layers,
            skip_edges: self.skip_edges,
        }
    }
}

fn conv_kind(k: u64, cin: u64, cout: u64) -> LayerKind {
    LayerKind::Conv {
        kh: k,
        kw: k,
        cin,
        cout,
        stride: 1,
        padding: k / 2,
        bias: true,
    }
}

/// Expands a genome into its layer-level network.
pub fn expand(genome: &ArchGenome, input: InputShape, head: &HeadSpec) -> Result<NetworkIR> {
    expand_with(genome, input, head, &ExpandOptions::default())
}

pub fn expand_with(
    genome: &ArchGenome,
    input: InputShape,
    head: &HeadSpec,
    opts: &ExpandOptions,
) -> Result<NetworkIR> {
    crate::space::check_spatial(genome, input)?;
    if genome.blocks.is_empty() || genome.blocks.iter().any(|b| b.kernels == 0) {
        return Err(Error::Config("genome must have at least one block with k >= 1".into()));
    }
    head.check()?;

    let mut b = Builder::new(input.into());
    for block in &genome.blocks {
        let k = u64::from(block.kernels);
        match block.block_type {
            BlockType::Vgg | BlockType::Mvgg => {
                b.conv(3, k)?;
                if opts.relu_per_conv {
                    b.push(LayerKind::ReLU)?;
                }
                b.conv(3, k)?;
                b.push(LayerKind::ReLU)?;
                if block.block_type == BlockType::Vgg {
                    b.push(LayerKind::MaxPool { size: 2 })?;
                }
            }
            BlockType::Res => {
                let block_in = b.current;
                let cin = b.channels();
                let first = b.conv(3, k)?;
                b.push(LayerKind::BatchNorm { channels: k })?;
                b.push(LayerKind::ReLU)?;
                b.conv(3, k)?;
                b.push(LayerKind::BatchNorm { channels: k })?;
                let main_out = b.current;

                let mut shortcut = LayerIR::new(conv_kind(1, cin, k), block_in)?;
                shortcut.shortcut_of = Some(first);
                b.layers.push(shortcut);
                let src = b.layers.len() - 1;

                let add = b.push(LayerKind::ResidualAdd {
                    elements: main_out.elements(),
                })?;
                b.skip_edges.push((src, add));
                b.push(LayerKind::ReLU)?;
            }
        }
    }

    b.push(LayerKind::Flatten)?;
    let flat = b.current.elements();
    b.push(LayerKind::FullyConnected {
        inputs: flat,
        outputs: head.hidden_units,
        bias: true,
    })?;
    b.push(LayerKind::ReLU)?;
    b.push(LayerKind::Dropout {
        rate: head.dropout_rate,
    })?;
    b.push(LayerKind::FullyConnected {
        inputs: head.hidden_units,
        outputs: head.num_classes,
        bias: true,
    })?;
    b.push(LayerKind::Softmax)?;
    Ok(b.finish(genome.encode()))
}

/// Like [`expand`] but first checks membership in `space`.
pub fn expand_in(
    space: &SearchSpace,
    genome: &ArchGenome,
    input: InputShape,
    head: &HeadSpec,
    opts: &ExpandOptions,
) -> Result<NetworkIR> {
    space.validate(genome, input)?;
    expand_with(genome, input, head, opts)
}
