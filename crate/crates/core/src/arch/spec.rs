//! Serializable network descriptions and symbolic shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvParams, LrnParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        weight_std: f64,
        bias_init: f64,
    },
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool { size: usize, stride: usize },
    Lrn {
        size: usize,
        alpha: f64,
        beta: f64,
        k: f64,
    },
    FullyConnected {
        outputs: usize,
        weight_std: f64,
        bias_init: f64,
    },
    Dropout { ratio: f64 },
    Flatten,
    Softmax,
    /// Joins tower outputs by concatenating feature vectors.
    Concat,
    /// Joins tower outputs by elementwise sum; with a shared linear classifier
    /// this is the logit sum of the towers.
    Sum,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Lrn { .. } => "lrn",
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
            LayerKind::Concat => "concat",
            LayerKind::Sum => "sum",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::FullyConnected { .. })
    }

    pub fn conv_params(&self) -> Option<ConvParams> {
        match *self {
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                pad,
                groups,
                ..
            } => Some(ConvParams::square(filters, kernel, stride, pad).with_groups(groups)),
            _ => None,
        }
    }

    pub fn lrn_params(&self) -> Option<LrnParams> {
        match *self {
            LayerKind::Lrn { size, alpha, beta, k } => Some(LrnParams { size, alpha, beta, k }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// Filter stage this layer belongs to; 0 marks the classifier head.
    pub stage: usize,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, stage: usize, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            stage,
            kind,
        }
    }
}

/// One input branch of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    /// Which image representation feeds this tower (`rgb`, `reflectance`, `shading`).
    pub input: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub towers: Vec<Tower>,
    /// Layers after the towers are fused; empty for single-tower networks.
    #[serde(default)]
    pub head: Vec<LayerSpec>,
}

/// Per-sample shape after a layer: `[C, H, W]` or `[D]`.
pub type Shape = Vec<usize>;

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrace {
    pub layer: String,
    pub kind: &'static str,
    pub output: Shape,
}

impl NetworkSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_branched(&self) -> bool {
        self.towers.len() > 1
    }

    pub fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.towers
            .iter()
            .flat_map(|t| t.layers.iter())
            .chain(self.head.iter())
    }

    /// Highest filter-stage index in any tower.
    pub fn num_stages(&self) -> usize {
        self.all_layers().map(|l| l.stage).max().unwrap_or(0)
    }

    /// Layer kinds of the first tower followed by the head.
    pub fn kind_sequence(&self) -> Vec<&'static str> {
        self.towers
            .first()
            .into_iter()
            .flat_map(|t| t.layers.iter())
            .chain(self.head.iter())
            .map(|l| l.kind.name())
            .collect()
    }

    /// Structural checks plus a full shape-inference pass.
    pub fn validate(&self) -> Result<()> {
        if self.towers.is_empty() {
            return Err(Error::config("network has no towers"));
        }
        let softmaxes: Vec<_> = self
            .all_layers()
            .filter(|l| matches!(l.kind, LayerKind::Softmax))
            .collect();
        if softmaxes.len() != 1 {
            return Err(Error::config(format!(
                "network must have exactly one softmax layer, found {}",
                softmaxes.len()
            )));
        }
        let terminal = if self.is_branched() {
            self.head.last()
        } else {
            self.towers[0].layers.last()
        };
        if !matches!(terminal.map(|l| &l.kind), Some(LayerKind::Softmax)) {
            return Err(Error::config("softmax must be the terminal layer"));
        }
        if self.is_branched() {
            if !matches!(
                self.head.first().map(|l| &l.kind),
                Some(LayerKind::Concat | LayerKind::Sum)
            ) {
                return Err(Error::config("branched head must start with a fusion layer"));
            }
        } else if !self.head.is_empty() {
            return Err(Error::config("single-tower networks carry no head"));
        }
        for tower in &self.towers {
            check_stage_order(&tower.layers)?;
        }
        if self.head.iter().any(|l| l.stage != 0) {
            return Err(Error::config("head layers must belong to stage 0"));
        }
        let mut names: Vec<&str> = self.all_layers().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate layer name `{}`", w[0])));
        }
        self.infer_shapes().map(|_| ())
    }

    /// Output shape of every layer (towers in order, then head).
    pub fn infer_shapes(&self) -> Result<Vec<ShapeTrace>> {
        let mut trace = Vec::new();
        let mut tower_outputs = Vec::new();
        for tower in &self.towers {
            let mut shape = vec![self.input_channels, self.input_size, self.input_size];
            for layer in &tower.layers {
                shape = layer_output(layer, &shape)?;
                trace.push(ShapeTrace {
                    layer: layer.name.clone(),
                    kind: layer.kind.name(),
                    output: shape.clone(),
                });
            }
            tower_outputs.push(shape);
        }
        let mut shape = Vec::new();
        for (i, layer) in self.head.iter().enumerate() {
            shape = if i == 0 {
                fuse_shape(&layer.kind, &tower_outputs)?
            } else {
                layer_output(layer, &shape)?
            };
            trace.push(ShapeTrace {
                layer: layer.name.clone(),
                kind: layer.kind.name(),
                output: shape.clone(),
            });
        }
        let last = trace.last().map(|t| t.output.clone()).unwrap_or_default();
        if last != [self.num_classes] {
            return Err(Error::config(format!(
                "network ends with shape {:?}, expected [{}]",
                last, self.num_classes
            )));
        }
        Ok(trace)
    }
}

/// Filter stages must be nondecreasing; once the head (stage 0) starts no
/// filter stage may follow.
fn check_stage_order(layers: &[LayerSpec]) -> Result<()> {
    let mut last = 0usize;
    let mut in_head = false;
    for l in layers {
        if l.stage == 0 {
            in_head = true;
            continue;
        }
        if in_head || l.stage < last {
            return Err(Error::config(format!(
                "layer `{}` (stage {}) breaks stage ordering",
                l.name, l.stage
            )));
        }
        last = l.stage;
    }
    Ok(())
}

pub(crate) fn fuse_shape(kind: &LayerKind, outputs: &[Shape]) -> Result<Shape> {
    let widths: Vec<usize> = outputs
        .iter()
        .map(|s| match s.as_slice() {
            [d] => Ok(*d),
            other => Err(Error::config(format!(
                "fusion expects flat tower outputs, got {other:?}"
            ))),
        })
        .collect::<Result<_>>()?;
    match kind {
        LayerKind::Concat => Ok(vec![widths.iter().sum()]),
        LayerKind::Sum => {
            if widths.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::config(format!("sum fusion needs equal widths, got {widths:?}")));
            }
            Ok(vec![widths[0]])
        }
        other => Err(Error::config(format!("`{}` cannot fuse towers", other.name()))),
    }
}

pub(crate) fn layer_output(layer: &LayerSpec, input: &[usize]) -> Result<Shape> {
    let spatial = |what: &str| match *input {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::config(format!(
            "`{}` ({what}) needs a [C, H, W] input, got {:?}",
            layer.name, input
        ))),
    };
    let ctx = |e: Error| match e {
        Error::Config(msg) => Error::Config(format!("layer `{}`: {msg}", layer.name)),
        other => other,
    };
    match &layer.kind {
        LayerKind::Conv { .. } => {
            let (c, h, w) = spatial("conv")?;
            let p = layer.kind.conv_params().expect("conv kind");
            p.validate(c).map_err(ctx)?;
            let (oh, ow) = p.output_hw(h, w).map_err(ctx)?;
            Ok(vec![p.out_channels, oh, ow])
        }
        LayerKind::MaxPool { size, stride } => {
            let (c, h, w) = spatial("maxpool")?;
            let (oh, ow) = crate::nn::MaxPool::new(*size, *stride)
                .output_hw(h, w)
                .map_err(ctx)?;
            Ok(vec![c, oh, ow])
        }
        LayerKind::Lrn { .. } => {
            spatial("lrn")?;
            layer.kind.lrn_params().expect("lrn kind").validate().map_err(ctx)?;
            Ok(input.to_vec())
        }
        LayerKind::Relu | LayerKind::Dropout { .. } => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::FullyConnected { outputs, .. } => match input {
            [_] => Ok(vec![*outputs]),
            _ => Err(Error::config(format!(
                "fully connected layer `{}` needs a flattened input, got {:?}",
                layer.name, input
            ))),
        },
        LayerKind::Softmax => match input {
            [_] => Ok(input.to_vec()),
            _ => Err(Error::config("softmax needs a flat input")),
        },
        LayerKind::Concat | LayerKind::Sum => Err(Error::config(format!(
            "fusion layer `{}` may only start the head",
            layer.name
        ))),
    }
}
