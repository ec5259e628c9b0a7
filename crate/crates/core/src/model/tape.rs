use super::act::{gelu, gelu_prime, sigmoid};
use super::loss::{loss_grad, loss_parts, LossWeights};
use super::tensor::{bilinear_axis, Tensor};
use super::ModelError;
use crate::data::BinaryMask;
use crate::float::Float;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T: Float> {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: usize, kernel: usize },
    Add { a: usize, b: usize },
    Gelu { input: usize },
    Sigmoid { input: usize },
    Resize { input: usize },
    BceDice { pred: usize, gt: BinaryMask, weights: LossWeights<T> },
}

struct Node<T: Float> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record-and-replay reverse-mode differentiation over an append-only arena.
/// Values are computed eagerly on insertion; `backward` walks the arena in
/// reverse insertion order, so gradient accumulation order is deterministic.
pub struct Tape<T: Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Input that gradients are not tracked through.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input; `grad` is available after `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Same-size convolution, stride 1, padding kernel/2. Input (Cin,H,W),
    /// weight (Cout,Cin,k,k), bias (Cout) -> (Cout,H,W).
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, kernel: usize) -> NodeId {
        let (cin, h, w) = self.nodes[input.0].value.dims3();
        let wshape = self.nodes[weight.0].value.shape().to_vec();
        assert_eq!(wshape[1], cin, "weight in-channels {} vs input {}", wshape[1], cin);
        assert_eq!(wshape[2], kernel);
        assert_eq!(wshape[3], kernel);
        let cout = wshape[0];
        assert_eq!(self.nodes[bias.0].value.numel(), cout);
        let mut out = Tensor::zeros(&[cout, h, w]);
        conv2d_forward(
            self.nodes[input.0].value.data(),
            cin,
            h,
            w,
            self.nodes[weight.0].value.data(),
            cout,
            kernel,
            self.nodes[bias.0].value.data(),
            out.data_mut(),
        );
        let needs = self.needs(&[input.0, weight.0, bias.0]);
        self.push(out, Op::Conv2d { input: input.0, weight: weight.0, bias: bias.0, kernel }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let mut out = self.nodes[a.0].value.clone();
        out.add_assign(&self.nodes[b.0].value);
        let needs = self.needs(&[a.0, b.0]);
        self.push(out, Op::Add { a: a.0, b: b.0 }, needs)
    }

    pub fn gelu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v = gelu(*v);
        }
        let needs = self.needs(&[input.0]);
        self.push(out, Op::Gelu { input: input.0 }, needs)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        let needs = self.needs(&[input.0]);
        self.push(out, Op::Sigmoid { input: input.0 }, needs)
    }

    /// Bilinear resize of a (C,H,W) node to (C,out_h,out_w), half-pixel
    /// coordinate convention.
    pub fn resize_bilinear(&mut self, input: NodeId, out_h: usize, out_w: usize) -> NodeId {
        let out = super::tensor::resize_chw(&self.nodes[input.0].value, out_h, out_w);
        let needs = self.needs(&[input.0]);
        self.push(out, Op::Resize { input: input.0 }, needs)
    }

    /// Scalar loss node: probabilities are clamped into (0,1) inside the
    /// node, and gradients are exactly zero where the clamp is active.
    pub fn bce_dice_loss(
        &mut self,
        pred: NodeId,
        gt: &BinaryMask,
        weights: LossWeights<T>,
    ) -> Result<NodeId, ModelError> {
        let n = self.nodes[pred.0].value.numel();
        if n != gt.bits().len() {
            return Err(ModelError::DimensionMismatch(format!(
                "prediction has {n} pixels, mask has {}",
                gt.bits().len()
            )));
        }
        let (bce, dice) = loss_parts(self.nodes[pred.0].value.data(), gt.bits(), &weights);
        let total = weights.lambda_bce * bce + weights.lambda_dice * dice;
        let needs = self.needs(&[pred.0]);
        Ok(self.push(
            Tensor::scalar_value(total),
            Op::BceDice { pred: pred.0, gt: gt.clone(), weights },
            needs,
        ))
    }

    fn grad_buf(&mut self, idx: usize) -> &mut Tensor<T> {
        if self.nodes[idx].grad.is_none() {
            let shape = self.nodes[idx].value.shape().to_vec();
            self.nodes[idx].grad = Some(Tensor::zeros(&shape));
        }
        self.nodes[idx].grad.as_mut().expect("just filled")
    }

    /// Reverse pass from a scalar node, seeding d(loss)/d(loss) = 1.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward needs a scalar root");
        self.grad_buf(loss.0).data_mut()[0] = T::one();
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.take().expect("checked above");
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, kernel } => {
                    let (input, weight, bias, kernel) = (*input, *weight, *bias, *kernel);
                    let (cin, h, w) = self.nodes[input].value.dims3();
                    let cout = self.nodes[weight].value.shape()[0];
                    if self.nodes[input].needs_grad {
                        let wdata = self.nodes[weight].value.data().to_vec();
                        let din = self.grad_buf(input);
                        conv2d_backward_input(
                            g.data(),
                            cout,
                            h,
                            w,
                            &wdata,
                            cin,
                            kernel,
                            din.data_mut(),
                        );
                    }
                    if self.nodes[weight].needs_grad {
                        let in_data = self.nodes[input].value.data().to_vec();
                        let dw = self.grad_buf(weight);
                        conv2d_backward_weight(
                            g.data(),
                            cout,
                            h,
                            w,
                            &in_data,
                            cin,
                            kernel,
                            dw.data_mut(),
                        );
                    }
                    if self.nodes[bias].needs_grad {
                        let db = self.grad_buf(bias);
                        for co in 0..cout {
                            let mut s = T::zero();
                            for &gv in &g.data()[co * h * w..(co + 1) * h * w] {
                                s += gv;
                            }
                            db.data_mut()[co] += s;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        self.grad_buf(a).add_assign(&g);
                    }
                    if self.nodes[b].needs_grad {
                        self.grad_buf(b).add_assign(&g);
                    }
                }
                Op::Gelu { input } => {
                    let input = *input;
                    if self.nodes[input].needs_grad {
                        let x = self.nodes[input].value.data().to_vec();
                        let din = self.grad_buf(input);
                        for ((d, &xv), &gv) in din.data_mut().iter_mut().zip(&x).zip(g.data()) {
                            *d += gv * gelu_prime(xv);
                        }
                    }
                }
                Op::Sigmoid { input } => {
                    let input = *input;
                    if self.nodes[input].needs_grad {
                        let y = self.nodes[idx].value.data().to_vec();
                        let din = self.grad_buf(input);
                        for ((d, &yv), &gv) in din.data_mut().iter_mut().zip(&y).zip(g.data()) {
                            *d += gv * yv * (T::one() - yv);
                        }
                    }
                }
                Op::Resize { input } => {
                    let input = *input;
                    if self.nodes[input].needs_grad {
                        let (c, oh, ow) = self.nodes[idx].value.dims3();
                        let (_, ih, iw) = self.nodes[input].value.dims3();
                        let ys = bilinear_axis::<T>(ih, oh);
                        let xs = bilinear_axis::<T>(iw, ow);
                        let din = self.grad_buf(input);
                        let dd = din.data_mut();
                        for ch in 0..c {
                            let gp = &g.data()[ch * oh * ow..(ch + 1) * oh * ow];
                            let dp = &mut dd[ch * ih * iw..(ch + 1) * ih * iw];
                            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                                    let gv = gp[oy * ow + ox];
                                    let one = T::one();
                                    dp[y0 * iw + x0] += gv * (one - wy) * (one - wx);
                                    dp[y0 * iw + x1] += gv * (one - wy) * wx;
                                    dp[y1 * iw + x0] += gv * wy * (one - wx);
                                    dp[y1 * iw + x1] += gv * wy * wx;
                                }
                            }
                        }
                    }
                }
                Op::BceDice { pred, gt, weights } => {
                    let pred = *pred;
                    let gt = gt.clone();
                    let weights = *weights;
                    if self.nodes[pred].needs_grad {
                        let p = self.nodes[pred].value.data().to_vec();
                        let scale = g.data()[0];
                        let din = self.grad_buf(pred);
                        loss_grad(&p, gt.bits(), &weights, din.data_mut(), scale);
                    }
                }
            }
            self.nodes[idx].grad = Some(g);
        }
    }
}

/// out[co] = bias[co] + Σ_ci Σ_ky Σ_kx w[co,ci,ky,kx] · shifted(in[ci]).
/// Loops are arranged so the innermost traversal is a contiguous row
/// accumulate, which the optimizer vectorizes.
#[allow(clippy::too_many_arguments)]
fn conv2d_forward<T: Float>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    kernel: usize,
    bias: &[T],
    out: &mut [T],
) {
    let pad = kernel / 2;
    for co in 0..cout {
        let out_plane = &mut out[co * h * w..(co + 1) * h * w];
        out_plane.fill(bias[co]);
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weight[((co * cin + ci) * kernel + ky) * kernel + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    accumulate_shifted(in_plane, h, w, ky, kx, pad, wv, out_plane);
                }
            }
        }
    }
}

/// dIn[ci] += Σ_co w[co,ci,ky,kx] · shifted-back(dOut[co]): the transpose of
/// the forward stencil.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input<T: Float>(
    dout: &[T],
    cout: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cin: usize,
    kernel: usize,
    din: &mut [T],
) {
    let pad = kernel / 2;
    for ci in 0..cin {
        let din_plane = &mut din[ci * h * w..(ci + 1) * h * w];
        for co in 0..cout {
            let dout_plane = &dout[co * h * w..(co + 1) * h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weight[((co * cin + ci) * kernel + ky) * kernel + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    // Forward reads in(y+ky-p, x+kx-p) into out(y,x); the
                    // transpose scatters dout(y,x) into din with the inverse
                    // shift, which equals a shift by (p-ky, p-kx).
                    accumulate_shifted(
                        dout_plane,
                        h,
                        w,
                        2 * pad - ky,
                        2 * pad - kx,
                        pad,
                        wv,
                        din_plane,
                    );
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_weight<T: Float>(
    dout: &[T],
    cout: usize,
    h: usize,
    w: usize,
    input: &[T],
    cin: usize,
    kernel: usize,
    dweight: &mut [T],
) {
    let pad = kernel / 2;
    for co in 0..cout {
        let dout_plane = &dout[co * h * w..(co + 1) * h * w];
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let mut acc = T::zero();
                    let (oy_lo, oy_hi) = shift_range(h, ky, pad);
                    let (ox_lo, ox_hi) = shift_range(w, kx, pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad;
                        let d_row = &dout_plane[oy * w + ox_lo..oy * w + ox_hi];
                        let i_row = &in_plane[iy * w + ox_lo + kx - pad..iy * w + ox_hi + kx - pad];
                        for (&dv, &iv) in d_row.iter().zip(i_row) {
                            acc += dv * iv;
                        }
                    }
                    dweight[((co * cin + ci) * kernel + ky) * kernel + kx] += acc;
                }
            }
        }
    }
}

/// Output rows for which the input row iy = oy + k - pad is in bounds.
#[inline]
fn shift_range(len: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(len);
    (lo, hi.max(lo))
}

/// out(y,x) += wv · in(y+ky-pad, x+kx-pad) over the in-bounds window.
#[inline]
#[allow(clippy::too_many_arguments)]
fn accumulate_shifted<T: Float>(
    input: &[T],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    pad: usize,
    wv: T,
    out: &mut [T],
) {
    let (oy_lo, oy_hi) = shift_range(h, ky, pad);
    let (ox_lo, ox_hi) = shift_range(w, kx, pad);
    for oy in oy_lo..oy_hi {
        let iy = oy + ky - pad;
        let out_row = &mut out[oy * w + ox_lo..oy * w + ox_hi];
        let in_row = &input[iy * w + ox_lo + kx - pad..iy * w + ox_hi + kx - pad];
        for (o, &iv) in out_row.iter_mut().zip(in_row) {
            *o += wv * iv;
        }
    }
}
