//! Runtime network instantiated from a [`NetworkSpec`].

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{
    self, seeded_rng, Conv2d, Dropout, Flatten, Layer, Linear, Lrn, MaxPool, Mode, NnRng, Param,
    Relu,
};
use crate::tensor::{Scalar, Tensor};

use super::freeze::FreezeMask;
use super::spec::{layer_output, LayerKind, LayerSpec, NetworkSpec};

struct Node<T: Scalar> {
    spec: LayerSpec,
    /// `None` for the softmax and fusion markers, which the network applies itself.
    layer: Option<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Node<T> {
    fn trainable(&self, mask: &FreezeMask) -> bool {
        self.spec.kind.has_params() && !mask.is_frozen(self.spec.stage)
    }
}

pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    towers: Vec<Vec<Node<T>>>,
    head: Vec<Node<T>>,
    tower_widths: Vec<usize>,
    freeze: FreezeMask,
}

fn gaussian<T: Scalar>(shape: &[usize], std: f64, rng: &mut NnRng) -> Tensor<T> {
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(rng)))
}

fn instantiate<T: Scalar>(spec: &LayerSpec, input: &[usize], rng: &mut NnRng) -> Result<Option<Box<dyn Layer<T>>>> {
    let layer: Box<dyn Layer<T>> = match &spec.kind {
        LayerKind::Conv {
            weight_std,
            bias_init,
            ..
        } => {
            let p = spec.kind.conv_params().expect("conv kind");
            let weight = gaussian(&p.weight_shape(input[0]), *weight_std, rng);
            let bias = Tensor::full(&[p.out_channels], T::from_f64_lossy(*bias_init));
            Box::new(Conv2d::new(
                p,
                Param::new(format!("{}.weight", spec.name), weight),
                Param::new(format!("{}.bias", spec.name), bias),
            ))
        }
        LayerKind::FullyConnected {
            outputs,
            weight_std,
            bias_init,
        } => {
            let weight = gaussian(&[input[0], *outputs], *weight_std, rng);
            let bias = Tensor::full(&[*outputs], T::from_f64_lossy(*bias_init));
            Box::new(Linear::new(
                Param::new(format!("{}.weight", spec.name), weight),
                Param::new(format!("{}.bias", spec.name), bias),
            ))
        }
        LayerKind::Relu => Box::new(Relu::new()),
        LayerKind::MaxPool { size, stride } => Box::new(MaxPool::new(*size, *stride)),
        LayerKind::Lrn { .. } => Box::new(Lrn::new(spec.kind.lrn_params().expect("lrn kind"))),
        LayerKind::Dropout { ratio } => Box::new(Dropout::new(*ratio)),
        LayerKind::Flatten => Box::new(Flatten::default()),
        LayerKind::Softmax | LayerKind::Concat | LayerKind::Sum => return Ok(None),
    };
    Ok(Some(layer))
}

impl<T: Scalar> Network<T> {
    /// Builds the network with weights drawn from each layer's init settings.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(seed);
        let mut towers = Vec::new();
        let mut tower_widths = Vec::new();
        for tower in &spec.towers {
            let mut shape = vec![spec.input_channels, spec.input_size, spec.input_size];
            let mut nodes = Vec::new();
            for l in &tower.layers {
                let layer = instantiate(l, &shape, &mut rng)?;
                shape = layer_output(l, &shape)?;
                nodes.push(Node {
                    spec: l.clone(),
                    layer,
                });
            }
            tower_widths.push(shape.iter().product());
            towers.push(nodes);
        }
        let mut head = Vec::new();
        let mut shape = Vec::new();
        for (i, l) in spec.head.iter().enumerate() {
            if i == 0 {
                let outputs: Vec<Vec<usize>> = tower_widths.iter().map(|&w| vec![w]).collect();
                shape = super::spec::fuse_shape(&l.kind, &outputs)?;
                head.push(Node {
                    spec: l.clone(),
                    layer: None,
                });
                continue;
            }
            let layer = instantiate(l, &shape, &mut rng)?;
            shape = layer_output(l, &shape)?;
            head.push(Node {
                spec: l.clone(),
                layer,
            });
        }
        Ok(Self {
            spec,
            towers,
            head,
            tower_widths,
            freeze: FreezeMask::none(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn freeze_mask(&self) -> &FreezeMask {
        &self.freeze
    }

    pub fn set_freeze(&mut self, mask: &FreezeMask) {
        self.freeze = mask.clone();
        for node in self.nodes_mut() {
            let trainable = node.trainable(mask);
            if let Some(layer) = node.layer.as_mut() {
                layer.set_trainable(trainable);
            }
        }
    }

    fn nodes(&self) -> impl Iterator<Item = &Node<T>> {
        self.towers.iter().flatten().chain(self.head.iter())
    }

    fn nodes_mut(&mut self) -> impl Iterator<Item = &mut Node<T>> {
        self.towers.iter_mut().flatten().chain(self.head.iter_mut())
    }

    /// All parameters with their stage index, in construction order.
    pub fn params(&self) -> Vec<(usize, &Param<T>)> {
        self.nodes()
            .filter_map(|n| n.layer.as_ref().map(|l| (n.spec.stage, l)))
            .flat_map(|(stage, l)| l.params().into_iter().map(move |p| (stage, p)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(usize, &mut Param<T>)> {
        self.nodes_mut()
            .filter_map(|n| {
                let stage = n.spec.stage;
                n.layer.as_mut().map(|l| (stage, l))
            })
            .flat_map(|(stage, l)| l.params_mut().into_iter().map(move |p| (stage, p)))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().map(|(_, p)| p).find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().map(|(_, p)| p).find(|p| p.name == name)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .param_mut(name)
            .ok_or_else(|| Error::config(format!("network has no parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::config(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    fn check_inputs(&self, inputs: &[Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.towers.len() {
            return Err(Error::config(format!(
                "network has {} towers but got {} inputs",
                self.towers.len(),
                inputs.len()
            )));
        }
        let n = inputs[0].shape().first().copied().unwrap_or(0);
        let s = self.spec.input_size;
        for x in inputs {
            if x.shape() != [n, self.spec.input_channels, s, s] {
                return Err(Error::config(format!(
                    "expected input [{n}, {}, {s}, {s}], got {:?}",
                    self.spec.input_channels,
                    x.shape()
                )));
            }
        }
        Ok(n)
    }

    /// Runs every tower and the head; returns `(N, num_classes)` logits.
    pub fn forward(&mut self, inputs: &[Tensor<T>], mode: Mode, rng: &mut NnRng) -> Result<Tensor<T>> {
        self.check_inputs(inputs)?;
        let mut outs = Vec::with_capacity(inputs.len());
        for (nodes, x) in self.towers.iter_mut().zip(inputs) {
            let mut act = x.clone();
            for node in nodes.iter_mut() {
                if let Some(layer) = node.layer.as_mut() {
                    act = layer.forward(&act, mode, rng)?;
                    act.ensure_finite(&node.spec.name)?;
                }
            }
            outs.push(act);
        }
        if self.head.is_empty() {
            return Ok(outs.pop().expect("one tower"));
        }
        let mut act = fuse(&self.head[0].spec.kind, &outs)?;
        for node in self.head.iter_mut().skip(1) {
            if let Some(layer) = node.layer.as_mut() {
                act = layer.forward(&act, mode, rng)?;
                act.ensure_finite(&node.spec.name)?;
            }
        }
        Ok(act)
    }

    /// Test-mode class probabilities; rows sum to one.
    pub fn predict(&mut self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut rng = seeded_rng(0);
        let logits = self.forward(inputs, Mode::Test, &mut rng)?;
        nn::softmax(&logits)
    }

    /// Backpropagates logit gradients into every trainable parameter.
    ///
    /// Propagation stops below the lowest trainable layer of each tower.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let mask = self.freeze.clone();
        let lowest: Vec<Option<usize>> = self
            .towers
            .iter()
            .map(|nodes| nodes.iter().position(|n| n.trainable(&mask)))
            .collect();
        let towers_need_grad = lowest.iter().any(Option::is_some);

        let tower_grads: Vec<Option<Tensor<T>>> = if self.head.is_empty() {
            vec![Some(grad_logits.clone())]
        } else {
            let mut g = grad_logits.clone();
            let mut reached_fusion = true;
            for (i, node) in self.head.iter_mut().enumerate().skip(1).rev() {
                if let Some(layer) = node.layer.as_mut() {
                    let need = i > 1 || towers_need_grad;
                    match layer.backward(&g, need)? {
                        Some(next) => g = next,
                        None => {
                            reached_fusion = false;
                            break;
                        }
                    }
                }
            }
            if !reached_fusion {
                return Ok(());
            }
            unfuse(&self.head[0].spec.kind, &g, &self.tower_widths)?
                .into_iter()
                .map(Some)
                .collect()
        };

        for ((nodes, grad), low) in self.towers.iter_mut().zip(tower_grads).zip(lowest) {
            let (Some(mut g), Some(low)) = (grad, low) else {
                continue;
            };
            for (i, node) in nodes.iter_mut().enumerate().rev() {
                if i < low {
                    break;
                }
                if let Some(layer) = node.layer.as_mut() {
                    match layer.backward(&g, i > low)? {
                        Some(next) => g = next,
                        None => break,
                    }
                }
            }
        }
        Ok(())
    }
}

fn fuse<T: Scalar>(kind: &LayerKind, outs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let n = outs[0].dims2()?.0;
    match kind {
        LayerKind::Concat => {
            let widths: Vec<usize> = outs.iter().map(|t| t.len() / n.max(1)).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(n * total);
            for row in 0..n {
                for (t, &w) in outs.iter().zip(&widths) {
                    data.extend_from_slice(&t.data()[row * w..(row + 1) * w]);
                }
            }
            Tensor::from_vec(&[n, total], data)
        }
        LayerKind::Sum => {
            let mut acc = outs[0].clone();
            for t in &outs[1..] {
                for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a = *a + b;
                }
            }
            Ok(acc)
        }
        other => Err(Error::config(format!("`{}` is not a fusion layer", other.name()))),
    }
}

fn unfuse<T: Scalar>(kind: &LayerKind, grad: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, total) = grad.dims2()?;
    match kind {
        LayerKind::Concat => {
            let mut parts: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(n * w)).collect();
            for row in grad.data().chunks(total) {
                let mut off = 0;
                for (part, &w) in parts.iter_mut().zip(widths) {
                    part.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            parts
                .into_iter()
                .zip(widths)
                .map(|(d, &w)| Tensor::from_vec(&[n, w], d))
                .collect()
        }
        LayerKind::Sum => Ok(widths.iter().map(|_| grad.clone()).collect()),
        other => Err(Error::config(format!("`{}` is not a fusion layer", other.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_branched_with, build_deep_with, freeze_stages, DeepConfig, Fusion};
    use crate::nn::softmax_loss;
    use rand::Rng;

    pub(crate) fn tiny_deep() -> DeepConfig {
        DeepConfig {
            input_size: 67,
            filters: [4, 6, 6, 6, 4],
            groups: [1, 2, 1, 2, 2],
            mlp_width: 8,
            ..Default::default()
        }
    }

    fn random_batch(n: usize, size: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(&[n, 3, size, size], |_| rng.random())
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut net = Network::<f32>::new(build_deep_with(&tiny_deep()).unwrap(), 1).unwrap();
        let x = random_batch(2, 67, 3).cast::<f32>();
        let p = net.predict(&[x]).unwrap();
        for row in p.data().chunks(10) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn batch_equals_stacked_singles() {
        let mut net = Network::<f64>::new(build_deep_with(&tiny_deep()).unwrap(), 2).unwrap();
        let batch = random_batch(3, 67, 5);
        let together = net.predict(&[batch.clone()]).unwrap();
        for i in 0..3 {
            let single = Tensor::from_vec(&[1, 3, 67, 67], batch.outer(i).to_vec()).unwrap();
            let p = net.predict(&[single]).unwrap();
            for (a, b) in p.data().iter().zip(together.outer(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // identical rows for identical inputs
        let dup = Tensor::stack(&[
            Tensor::from_vec(&[3, 67, 67], batch.outer(0).to_vec()).unwrap(),
            Tensor::from_vec(&[3, 67, 67], batch.outer(0).to_vec()).unwrap(),
        ])
        .unwrap();
        let p = net.predict(&[dup]).unwrap();
        assert_eq!(p.outer(0), p.outer(1));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let mut net = Network::<f32>::new(build_deep_with(&tiny_deep()).unwrap(), 1).unwrap();
        assert!(matches!(
            net.predict(&[Tensor::zeros(&[1, 3, 60, 60])]),
            Err(Error::Config(_))
        ));
        assert!(net.predict(&[]).is_err());
    }

    #[test]
    fn frozen_stages_get_no_gradients() {
        let spec = build_deep_with(&tiny_deep()).unwrap();
        let mut net = Network::<f64>::new(spec.clone(), 4).unwrap();
        net.set_freeze(&freeze_stages(&spec, 3).unwrap());
        let logits = net.forward(&[random_batch(1, 67, 1)], Mode::Train, &mut seeded_rng(0)).unwrap();
        let loss = softmax_loss(&logits, &[2]).unwrap();
        net.backward(&loss.grad_logits).unwrap();
        for (stage, p) in net.params() {
            let nonzero = p.grad.data().iter().any(|&g| g != 0.0);
            if (1..=3).contains(&stage) {
                assert!(!nonzero, "{} should be frozen", p.name);
            }
        }
        assert!(net.param("conv4.weight").unwrap().grad.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn branched_matches_single_tower_with_halved_classifier() {
        let cfg = tiny_deep();
        let deep = build_deep_with(&cfg).unwrap();
        let branched = build_branched_with(&cfg, Fusion::Concat).unwrap();
        let mut single = Network::<f64>::new(deep, 10).unwrap();
        let mut joint = Network::<f64>::new(branched, 11).unwrap();

        let names: Vec<String> = single.params().iter().map(|(_, p)| p.name.clone()).collect();
        for name in names.iter().filter(|n| !n.starts_with("fc8")) {
            let v = single.param(name).unwrap().value.clone();
            joint.set_param(&format!("reflectance.{name}"), v.clone()).unwrap();
            joint.set_param(&format!("shading.{name}"), v).unwrap();
        }
        let w = single.param("fc8.weight").unwrap().value.clone();
        let (d, m) = w.dims2().unwrap();
        let halved: Vec<f64> = w.data().iter().map(|v| v / 2.0).collect();
        let mut stacked = halved.clone();
        stacked.extend_from_slice(&halved);
        joint.set_param("fc8.weight", Tensor::from_vec(&[2 * d, m], stacked).unwrap()).unwrap();
        joint.set_param("fc8.bias", single.param("fc8.bias").unwrap().value.clone()).unwrap();

        let x = random_batch(2, 67, 12);
        let a = single.predict(&[x.clone()]).unwrap();
        let b = joint.predict(&[x.clone(), x]).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn branched_backward_reaches_both_towers() {
        let cfg = tiny_deep();
        for fusion in [Fusion::Concat, Fusion::LogitSum] {
            let spec = build_branched_with(&cfg, fusion).unwrap();
            let mut net = Network::<f64>::new(spec.clone(), 3).unwrap();
            net.set_freeze(&freeze_stages(&spec, 5).unwrap());
            let logits = net
                .forward(&[random_batch(1, 67, 1), random_batch(1, 67, 2)], Mode::Train, &mut seeded_rng(0))
                .unwrap();
            let loss = softmax_loss(&logits, &[1]).unwrap();
            net.backward(&loss.grad_logits).unwrap();
            for tower in ["reflectance", "shading"] {
                let g = &net.param(&format!("{tower}.fc6.weight")).unwrap().grad;
                assert!(g.data().iter().any(|&v| v != 0.0), "{tower} fc6 got no gradient");
                let g = &net.param(&format!("{tower}.conv1.weight")).unwrap().grad;
                assert!(g.data().iter().all(|&v| v == 0.0));
            }
        }
    }
}
