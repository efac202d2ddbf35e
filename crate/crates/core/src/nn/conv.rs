//! Grouped 2-D cross-correlation via im2col and GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, MatRef, Scalar, Tensor};

use super::{Layer, Mode, NnRng, Param};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn square(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            groups: 1,
        }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        Self { groups, ..self }
    }

    pub fn validate(&self, in_channels: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::config("convolution stride must be >= 1"));
        }
        if self.groups == 0 || in_channels % self.groups != 0 || self.out_channels % self.groups != 0
        {
            return Err(Error::config(format!(
                "groups={} must divide in_channels={} and out_channels={}",
                self.groups, in_channels, self.out_channels
            )));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.out_channels == 0 {
            return Err(Error::config("convolution needs nonzero kernel and filters"));
        }
        Ok(())
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::config(format!(
                "{}x{} kernel does not fit padded input {}x{}",
                self.kernel_h, self.kernel_w, ph, pw
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    pub fn weight_shape(&self, in_channels: usize) -> [usize; 4] {
        [
            self.out_channels,
            in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }
}

struct Geometry {
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, p: &ConvParams, weight: &Tensor<T>) -> Result<Geometry> {
    let (_, cin, h, w) = input.dims4()?;
    p.validate(cin)?;
    let expected = p.weight_shape(cin);
    if weight.shape() != expected {
        return Err(Error::config(format!(
            "input has {} channels so weights must be {:?}, got {:?}",
            cin,
            expected,
            weight.shape()
        )));
    }
    let (oh, ow) = p.output_hw(h, w)?;
    let cin_g = cin / p.groups;
    Ok(Geometry {
        cin_g,
        cout_g: p.out_channels / p.groups,
        h,
        w,
        oh,
        ow,
        k: cin_g * p.kernel_h * p.kernel_w,
    })
}

/// Unfold channels `[c0, c0 + g.cin_g)` of one image into a `k x (oh*ow)` matrix.
fn im2col<T: Scalar>(image: &[T], c0: usize, p: &ConvParams, g: &Geometry, cols: &mut [T]) {
    let plane = g.h * g.w;
    let ncols = g.oh * g.ow;
    for c in 0..g.cin_g {
        let src = &image[(c0 + c) * plane..(c0 + c + 1) * plane];
        for ki in 0..p.kernel_h {
            for kj in 0..p.kernel_w {
                let row = (c * p.kernel_h + ki) * p.kernel_w + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * p.stride + ki) as isize - p.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let x = (ox * p.stride + kj) as isize - p.pad as isize;
                        *v = if x < 0 || x >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: scatter-add columns back into the image gradient.
fn col2im<T: Scalar>(cols: &[T], c0: usize, p: &ConvParams, g: &Geometry, image: &mut [T]) {
    let plane = g.h * g.w;
    let ncols = g.oh * g.ow;
    for c in 0..g.cin_g {
        let dst = &mut image[(c0 + c) * plane..(c0 + c + 1) * plane];
        for ki in 0..p.kernel_h {
            for kj in 0..p.kernel_w {
                let row = (c * p.kernel_h + ki) * p.kernel_w + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * p.stride + ki) as isize - p.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[y as usize * g.w..(y as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let x = (ox * p.stride + kj) as isize - p.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            dst_row[x as usize] = dst_row[x as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    p: &ConvParams,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = geometry(input, p, weight)?;
    if bias.len() != p.out_channels {
        return Err(Error::config(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            p.out_channels
        )));
    }
    let n = input.shape()[0];
    let ncols = g.oh * g.ow;
    let mut out = Tensor::zeros(&[n, p.out_channels, g.oh, g.ow]);
    let mut cols = vec![T::zero(); g.k * ncols];
    for img in 0..n {
        let src = input.outer(img);
        let dst = out.outer_mut(img);
        for grp in 0..p.groups {
            im2col(src, grp * g.cin_g, p, &g, &mut cols);
            let w = &weight.data()[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            let o = &mut dst[grp * g.cout_g * ncols..(grp + 1) * g.cout_g * ncols];
            matmul(
                MatRef::new(w, g.cout_g, g.k),
                MatRef::new(&cols, g.k, ncols),
                o,
                false,
            );
        }
        for (co, plane) in dst.chunks_mut(ncols).enumerate() {
            let b = bias.data()[co];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub grad_in: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the forward input.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    p: &ConvParams,
    weight: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, p, weight)?;
    let n = input.shape()[0];
    let expected = [n, p.out_channels, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::config(format!(
            "conv grad_out shape {:?} differs from forward output {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let ncols = g.oh * g.ow;
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[p.out_channels]);
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![T::zero(); g.k * ncols];
    let mut grad_cols = vec![T::zero(); g.k * ncols];
    for img in 0..n {
        let go = grad_out.outer(img);
        for (co, plane) in go.chunks(ncols).enumerate() {
            let s: T = plane.iter().copied().sum();
            grad_b.data_mut()[co] = grad_b.data()[co] + s;
        }
        for grp in 0..p.groups {
            let go_g = &go[grp * g.cout_g * ncols..(grp + 1) * g.cout_g * ncols];
            im2col(input.outer(img), grp * g.cin_g, p, &g, &mut cols);
            let gw = &mut grad_w.data_mut()[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            matmul(
                MatRef::new(go_g, g.cout_g, ncols),
                MatRef::new(&cols, g.k, ncols).t(),
                gw,
                true,
            );
            if let Some(gi) = grad_in.as_mut() {
                let w = &weight.data()[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
                matmul(
                    MatRef::new(w, g.cout_g, g.k).t(),
                    MatRef::new(go_g, g.cout_g, ncols),
                    &mut grad_cols,
                    false,
                );
                col2im(&grad_cols, grp * g.cin_g, p, &g, gi.outer_mut(img));
            }
        }
    }
    Ok(ConvGrads {
        grad_in,
        grad_w,
        grad_b,
    })
}

pub struct Conv2d<T> {
    pub params: ConvParams,
    pub weight: Param<T>,
    pub bias: Param<T>,
    trainable: bool,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(params: ConvParams, weight: Param<T>, bias: Param<T>) -> Self {
        Self {
            params,
            weight,
            bias,
            trainable: true,
            cached_input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        let out = conv2d_forward(input, &self.params, &self.weight.value, &self.bias.value)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::State("conv backward called before forward".into()))?;
        if !self.trainable && !need_input_grad {
            return Ok(None);
        }
        let grads = conv2d_backward(
            grad_out,
            input,
            &self.params,
            &self.weight.value,
            need_input_grad,
        )?;
        if self.trainable {
            self.weight.grad = grads.grad_w;
            self.bias.grad = grads.grad_b;
        }
        Ok(grads.grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::nn::test_rng;
    use rand::Rng;

    /// Direct nested-loop cross-correlation used as an independent oracle.
    fn conv_naive(input: &Tensor<f64>, p: &ConvParams, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, cin, h, wd) = input.dims4().unwrap();
        let (oh, ow) = p.output_hw(h, wd).unwrap();
        let cin_g = cin / p.groups;
        let cout_g = p.out_channels / p.groups;
        let mut out = Tensor::zeros(&[n, p.out_channels, oh, ow]);
        for img in 0..n {
            for co in 0..p.out_channels {
                let grp = co / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for c in 0..cin_g {
                            for i in 0..p.kernel_h {
                                for j in 0..p.kernel_w {
                                    let y = (oy * p.stride + i) as isize - p.pad as isize;
                                    let x = (ox * p.stride + j) as isize - p.pad as isize;
                                    if y < 0 || x < 0 || y >= h as isize || x >= wd as isize {
                                        continue;
                                    }
                                    let ci = grp * cin_g + c;
                                    let iv = input.data()[((img * cin + ci) * h + y as usize) * wd + x as usize];
                                    let wv = w.data()[((co * cin_g + c) * p.kernel_h + i) * p.kernel_w + j];
                                    acc += iv * wv;
                                }
                            }
                        }
                        out.data_mut()[((img * p.out_channels + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let input = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let p = ConvParams::square(1, 1, 1, 0);
        let out = conv2d_forward(&input, &p, &Tensor::ones(&[1, 1, 1, 1]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn identity_kernel_backward() {
        let input = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let p = ConvParams::square(1, 1, 1, 0);
        let g = conv2d_backward(&Tensor::ones(&[1, 1, 3, 3]), &input, &p, &Tensor::ones(&[1, 1, 1, 1]), true).unwrap();
        assert_eq!(g.grad_in.unwrap(), Tensor::ones(&[1, 1, 3, 3]));
        assert_eq!(g.grad_w.data(), &[36.0]);
        assert_eq!(g.grad_b.data(), &[9.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = test_rng(1);
        let input = random(&[1, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let p = ConvParams::square(3, 3, 1, 1);
        let g = conv2d_backward(&Tensor::zeros(&[1, 3, 5, 5]), &input, &p, &w, true).unwrap();
        assert!(g.grad_in.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alexnet_first_layer_shape() {
        let p = ConvParams::square(96, 11, 4, 0);
        assert_eq!(p.output_hw(227, 227).unwrap(), (55, 55));
        let input = Tensor::<f32>::zeros(&[1, 3, 227, 227]);
        let out = conv2d_forward(&input, &p, &Tensor::zeros(&[96, 3, 11, 11]), &Tensor::zeros(&[96])).unwrap();
        assert_eq!(out.shape(), &[1, 96, 55, 55]);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let input = Tensor::<f64>::ones(&[1, 1, 6, 6]);
        let p = ConvParams::square(1, 3, 1, 0);
        let out = conv2d_forward(&input, &p, &Tensor::ones(&[1, 1, 3, 3]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let p = ConvParams::square(4, 3, 1, 0);
        let err = conv2d_forward(
            &Tensor::<f32>::zeros(&[1, 2, 5, 5]),
            &p,
            &Tensor::zeros(&[4, 3, 3, 3]),
            &Tensor::zeros(&[4]),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let p = ConvParams::square(1, 1, 1, 0);
        let mut layer = Conv2d::new(p, Param::new("w", Tensor::<f64>::ones(&[1, 1, 1, 1])), Param::new("b", Tensor::zeros(&[1])));
        assert!(matches!(layer.backward(&Tensor::ones(&[1, 1, 1, 1]), true), Err(Error::State(_))));
    }

    #[test]
    fn matches_naive_oracle_with_stride_pad_groups() {
        let mut rng = test_rng(7);
        for (cin, cout, k, s, pad, groups, hw) in [
            (2, 4, 3, 1, 1, 2, 6),
            (4, 6, 5, 2, 2, 2, 9),
            (3, 5, 2, 3, 0, 1, 8),
            (6, 6, 3, 1, 0, 3, 5),
        ] {
            let p = ConvParams::square(cout, k, s, pad).with_groups(groups);
            let input = random(&[2, cin, hw, hw + 1], &mut rng);
            let w = random(&p.weight_shape(cin), &mut rng);
            let b = random(&[cout], &mut rng);
            let fast = conv2d_forward(&input, &p, &w, &b).unwrap();
            let slow = conv_naive(&input, &p, &w, &b);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn grouped_equals_concatenated_slices() {
        let mut rng = test_rng(11);
        let p = ConvParams::square(4, 3, 1, 1).with_groups(2);
        let input = random(&[1, 4, 5, 5], &mut rng);
        let w = random(&p.weight_shape(4), &mut rng);
        let b = random(&[4], &mut rng);
        let grouped = conv2d_forward(&input, &p, &w, &b).unwrap();

        let single = ConvParams::square(2, 3, 1, 1);
        for grp in 0..2 {
            let slice = Tensor::from_vec(&[1, 2, 5, 5], input.data()[grp * 50..(grp + 1) * 50].to_vec()).unwrap();
            let wg = Tensor::from_vec(&[2, 2, 3, 3], w.data()[grp * 36..(grp + 1) * 36].to_vec()).unwrap();
            let bg = Tensor::from_vec(&[2], b.data()[grp * 2..(grp + 1) * 2].to_vec()).unwrap();
            let part = conv2d_forward(&slice, &single, &wg, &bg).unwrap();
            assert_eq!(part.data(), &grouped.data()[grp * 50..(grp + 1) * 50]);
        }
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = test_rng(3);
        let p = ConvParams::square(3, 3, 1, 0);
        let mut layer = Conv2d::new(
            p,
            Param::new("w", random(&p.weight_shape(2), &mut rng)),
            Param::new("b", random(&[3], &mut rng)),
        );
        let input = random(&[1, 2, 5, 5], &mut rng);
        let err = gradient_check(&mut layer, &input, 1e-5, 17).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }
}
