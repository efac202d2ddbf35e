//! Builders for the vanilla, deep transfer and branched layouts.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::LrnParams;

use super::spec::{LayerKind, LayerSpec, NetworkSpec, Tower};

pub const NUM_CLASSES: usize = 10;

/// Shallow single-stage network:
/// `conv 96x11x11 - relu - maxpool 6x6 - dropout 0.5 - fc 4096 - relu - fc 10 - softmax`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub conv_stride: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub num_classes: usize,
    pub conv_std: f64,
    pub fc_std: f64,
}

impl Default for VanillaConfig {
    fn default() -> Self {
        Self {
            input_size: 227,
            input_channels: 3,
            filters: 96,
            kernel: 11,
            conv_stride: 4,
            pool_size: 6,
            pool_stride: 6,
            dropout: 0.5,
            hidden: 4096,
            num_classes: NUM_CLASSES,
            conv_std: 0.01,
            fc_std: 0.005,
        }
    }
}

/// Five filter stages plus a three-layer MLP head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Filter counts of stages 1..=5.
    pub filters: [usize; 5],
    /// Channel groups of stages 1..=5.
    pub groups: [usize; 5],
    pub mlp_width: usize,
    pub dropout: f64,
    pub lrn: LrnParams,
    pub num_classes: usize,
    pub conv_std: f64,
    pub fc_std: f64,
    /// Initialize conv2, conv4, conv5, fc6 and fc7 biases to 1 instead of 0.
    pub unit_biases: bool,
}

impl Default for DeepConfig {
    fn default() -> Self {
        Self {
            input_size: 227,
            input_channels: 3,
            filters: [96, 256, 384, 384, 384],
            groups: [1, 2, 1, 2, 2],
            mlp_width: 4096,
            dropout: 0.5,
            lrn: LrnParams::default(),
            num_classes: NUM_CLASSES,
            conv_std: 0.01,
            fc_std: 0.005,
            unit_biases: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Concatenate the penultimate features into one shared classifier.
    #[default]
    Concat,
    /// Sum the penultimate features before the shared classifier.
    LogitSum,
}

fn conv(name: &str, stage: usize, filters: usize, kernel: usize, stride: usize, pad: usize, groups: usize, std: f64, bias: f64) -> LayerSpec {
    LayerSpec::new(
        name,
        stage,
        LayerKind::Conv {
            filters,
            kernel,
            stride,
            pad,
            groups,
            weight_std: std,
            bias_init: bias,
        },
    )
}

fn fc(name: &str, outputs: usize, std: f64, bias: f64) -> LayerSpec {
    LayerSpec::new(
        name,
        0,
        LayerKind::FullyConnected {
            outputs,
            weight_std: std,
            bias_init: bias,
        },
    )
}

fn simple(name: &str, stage: usize, kind: LayerKind) -> LayerSpec {
    LayerSpec::new(name, stage, kind)
}

pub fn build_vanilla(input_size: usize) -> Result<NetworkSpec> {
    build_vanilla_with(&VanillaConfig {
        input_size,
        ..Default::default()
    })
}

pub fn build_vanilla_with(cfg: &VanillaConfig) -> Result<NetworkSpec> {
    let layers = vec![
        conv("conv1", 1, cfg.filters, cfg.kernel, cfg.conv_stride, 0, 1, cfg.conv_std, 0.0),
        simple("relu1", 1, LayerKind::Relu),
        simple(
            "pool1",
            1,
            LayerKind::MaxPool {
                size: cfg.pool_size,
                stride: cfg.pool_stride,
            },
        ),
        simple("drop1", 0, LayerKind::Dropout { ratio: cfg.dropout }),
        simple("flatten", 0, LayerKind::Flatten),
        fc("fc2", cfg.hidden, cfg.fc_std, 0.0),
        simple("relu2", 0, LayerKind::Relu),
        fc("fc3", cfg.num_classes, cfg.fc_std, 0.0),
        simple("prob", 0, LayerKind::Softmax),
    ];
    let spec = NetworkSpec {
        name: "vanilla".into(),
        input_channels: cfg.input_channels,
        input_size: cfg.input_size,
        num_classes: cfg.num_classes,
        towers: vec![Tower {
            input: "rgb".into(),
            layers,
        }],
        head: Vec::new(),
    };
    spec.validate()?;
    Ok(spec)
}

fn filter_stages(cfg: &DeepConfig, prefix: &str) -> Vec<LayerSpec> {
    let n = |s: &str| format!("{prefix}{s}");
    let lrn = LayerKind::Lrn {
        size: cfg.lrn.size,
        alpha: cfg.lrn.alpha,
        beta: cfg.lrn.beta,
        k: cfg.lrn.k,
    };
    let pool = LayerKind::MaxPool { size: 3, stride: 2 };
    let unit = if cfg.unit_biases { 1.0 } else { 0.0 };
    let [f1, f2, f3, f4, f5] = cfg.filters;
    let [g1, g2, g3, g4, g5] = cfg.groups;
    let std = cfg.conv_std;
    vec![
        conv(&n("conv1"), 1, f1, 11, 4, 0, g1, std, 0.0),
        simple(&n("relu1"), 1, LayerKind::Relu),
        simple(&n("pool1"), 1, pool.clone()),
        simple(&n("norm1"), 1, lrn.clone()),
        conv(&n("conv2"), 2, f2, 5, 1, 2, g2, std, unit),
        simple(&n("relu2"), 2, LayerKind::Relu),
        simple(&n("pool2"), 2, pool.clone()),
        simple(&n("norm2"), 2, lrn),
        conv(&n("conv3"), 3, f3, 3, 1, 1, g3, std, 0.0),
        simple(&n("relu3"), 3, LayerKind::Relu),
        conv(&n("conv4"), 4, f4, 3, 1, 1, g4, std, unit),
        simple(&n("relu4"), 4, LayerKind::Relu),
        conv(&n("conv5"), 5, f5, 3, 1, 1, g5, std, unit),
        simple(&n("relu5"), 5, LayerKind::Relu),
        simple(&n("pool5"), 5, pool),
    ]
}

/// `fc6 - relu - dropout - fc7 - relu - dropout`, shared by deep and branched nets.
fn mlp_trunk(cfg: &DeepConfig, prefix: &str) -> Vec<LayerSpec> {
    let n = |s: &str| format!("{prefix}{s}");
    let unit = if cfg.unit_biases { 1.0 } else { 0.0 };
    vec![
        simple(&n("flatten"), 0, LayerKind::Flatten),
        fc(&n("fc6"), cfg.mlp_width, cfg.fc_std, unit),
        simple(&n("relu6"), 0, LayerKind::Relu),
        simple(&n("drop6"), 0, LayerKind::Dropout { ratio: cfg.dropout }),
        fc(&n("fc7"), cfg.mlp_width, cfg.fc_std, unit),
        simple(&n("relu7"), 0, LayerKind::Relu),
        simple(&n("drop7"), 0, LayerKind::Dropout { ratio: cfg.dropout }),
    ]
}

pub fn build_deep(input_channels: usize) -> Result<NetworkSpec> {
    build_deep_with(&DeepConfig {
        input_channels,
        ..Default::default()
    })
}

pub fn build_deep_with(cfg: &DeepConfig) -> Result<NetworkSpec> {
    let mut layers = filter_stages(cfg, "");
    layers.extend(mlp_trunk(cfg, ""));
    layers.push(fc("fc8", cfg.num_classes, cfg.fc_std, 0.0));
    layers.push(simple("prob", 0, LayerKind::Softmax));
    let spec = NetworkSpec {
        name: "deep".into(),
        input_channels: cfg.input_channels,
        input_size: cfg.input_size,
        num_classes: cfg.num_classes,
        towers: vec![Tower {
            input: "rgb".into(),
            layers,
        }],
        head: Vec::new(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Reflectance and shading towers with a shared classifier. Shading enters
/// as three replicated channels so both towers share the first-layer shape.
/// Train it with all filter stages frozen (`freeze_stages(&net, 5)`).
pub fn build_branched(fusion: Fusion) -> Result<NetworkSpec> {
    build_branched_with(&DeepConfig::default(), fusion)
}

pub fn build_branched_with(cfg: &DeepConfig, fusion: Fusion) -> Result<NetworkSpec> {
    let tower = |input: &str| {
        let prefix = format!("{input}.");
        let mut layers = filter_stages(cfg, &prefix);
        layers.extend(mlp_trunk(cfg, &prefix));
        Tower {
            input: input.into(),
            layers,
        }
    };
    let fuse = match fusion {
        Fusion::Concat => LayerKind::Concat,
        Fusion::LogitSum => LayerKind::Sum,
    };
    let spec = NetworkSpec {
        name: "branched".into(),
        input_channels: cfg.input_channels,
        input_size: cfg.input_size,
        num_classes: cfg.num_classes,
        towers: vec![tower("reflectance"), tower("shading")],
        head: vec![
            simple("fuse", 0, fuse),
            fc("fc8", cfg.num_classes, cfg.fc_std, 0.0),
            simple("prob", 0, LayerKind::Softmax),
        ],
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spatial_after(spec: &NetworkSpec, kinds: &[&str]) -> Vec<usize> {
        spec.infer_shapes()
            .unwrap()
            .iter()
            .filter(|t| kinds.contains(&t.kind))
            .map(|t| t.output[1])
            .collect()
    }

    #[test]
    fn vanilla_layout_and_shapes() {
        let net = build_vanilla(227).unwrap();
        assert_eq!(
            net.kind_sequence(),
            ["conv", "relu", "maxpool", "dropout", "flatten", "fully_connected", "relu", "fully_connected", "softmax"]
        );
        let shapes = net.infer_shapes().unwrap();
        assert_eq!(shapes[0].output, [96, 55, 55]);
        assert_eq!(shapes[2].output, [96, 9, 9]);
        assert_eq!(shapes[4].output, [7776]);
        assert_eq!(shapes[5].output, [4096]);
        assert_eq!(shapes[7].output, [10]);
        assert_eq!(net.num_classes, 10);
    }

    #[test]
    fn vanilla_too_small_input() {
        assert!(build_vanilla(20).is_err());
    }

    #[test]
    fn deep_layout_and_shapes() {
        let net = build_deep(3).unwrap();
        let filters: Vec<usize> = net
            .all_layers()
            .filter_map(|l| l.kind.conv_params().map(|p| p.out_channels))
            .collect();
        assert_eq!(filters, [96, 256, 384, 384, 384]);
        let mut sizes = vec![227];
        sizes.extend(spatial_after(&net, &["conv", "maxpool"]));
        // conv1 55, pool1 27, conv2 27, pool2 13, conv3-5 13, pool5 6
        assert_eq!(sizes, [227, 55, 27, 27, 13, 13, 13, 13, 6]);
        let stage5: Vec<&str> = net.all_layers().filter(|l| l.stage == 5).map(|l| l.kind.name()).collect();
        assert_eq!(stage5, ["conv", "relu", "maxpool"]);
        assert_eq!(net.num_stages(), 5);
    }

    #[test]
    fn branched_fused_width() {
        let net = build_branched(Fusion::Concat).unwrap();
        let shapes = net.infer_shapes().unwrap();
        let fuse = shapes.iter().find(|t| t.layer == "fuse").unwrap();
        assert_eq!(fuse.output, [8192]);
        assert_eq!(shapes.last().unwrap().output, [10]);
        let sum = build_branched(Fusion::LogitSum).unwrap();
        let fuse = sum.infer_shapes().unwrap().into_iter().find(|t| t.layer == "fuse").unwrap();
        assert_eq!(fuse.output, [4096]);
    }

    #[test]
    fn json_round_trip() {
        for net in [
            build_vanilla(227).unwrap(),
            build_deep(3).unwrap(),
            build_branched(Fusion::Concat).unwrap(),
        ] {
            let text = net.to_json().unwrap();
            assert_eq!(NetworkSpec::from_json(&text).unwrap(), net);
        }
    }

    #[test]
    fn stage_order_enforced() {
        let mut net = build_deep(3).unwrap();
        net.towers[0].layers.swap(0, 4);
        assert!(net.validate().is_err());
    }

    #[test]
    fn exactly_one_softmax() {
        let mut net = build_vanilla(227).unwrap();
        net.towers[0].layers.pop();
        assert!(net.validate().is_err());
    }
}
