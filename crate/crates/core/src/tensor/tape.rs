use super::conv::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst {
        x: Var,
        c: Tensor<T>,
    },
    Scale {
        x: Var,
        s: T,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Sum {
        x: Var,
    },
    MaskedMse {
        pred: Var,
        target: Tensor<T>,
        /// Supervised sites (1) per element of `pred`; `None` supervises all.
        mask: Option<Vec<u8>>,
        counts: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive operations in execution order so that gradients can be
/// pulled back with [`Tape::backward`].
///
/// Ops are appended as they run, so the node list is always in topological
/// order.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    col: Vec<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that was created with `requires_grad`.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            col: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-d convolution with zero padding; `weight` is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(Error::Contract(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be positive".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Contract(format!(
                "conv2d: kernel {kh}x{kw} must have odd extents"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Contract(format!(
                "conv2d: {h}x{w} input with pad {pad} is smaller than the {kh}x{kw} kernel"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(Error::Contract(format!(
                    "conv2d: bias shape {:?} does not match {cout} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let g = ConvGeometry {
            in_channels: cin,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![T::zero(); n * cout * oh * ow];
        {
            let x = self.nodes[input.0].value.data();
            let wt = self.nodes[weight.0].value.data();
            let b = bias.map(|b| self.nodes[b.0].value.data());
            let in_sz = cin * h * w;
            let out_sz = cout * oh * ow;
            for i in 0..n {
                conv::forward_sample(
                    &g,
                    &x[i * in_sz..(i + 1) * in_sz],
                    wt,
                    b,
                    cout,
                    &mut self.col,
                    &mut out[i * out_sz..(i + 1) * out_sz],
                );
            }
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        let value = Tensor::from_vec(&[n, cout, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Elementwise `max(x, slope·x)`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(Error::Contract(format!(
                "leaky_relu slope {slope:?} outside [0, 1)"
            )));
        }
        let value = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { v * slope });
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::LeakyRelu { x, slope }, rg))
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Contract("upsample factor must be >= 1".into()));
        }
        let [n, c, h, w] = self.value(x).dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for (ox, o) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                    *o = row[ox / factor];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let [n, _, h, w] = self.value(parts[0]).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs {:?}",
                    self.value(parts[0]).shape(),
                    self.value(p).shape()
                )));
            }
            total_c += pc;
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let sz = t.shape()[1] * h * w;
                out.extend_from_slice(&t.data()[i * sz..(i + 1) * sz]);
            }
        }
        let value = Tensor::from_vec(&[n, total_c, h, w], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant tensor (for example a mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::Shape(format!(
                "mul_const on {:?} and {:?}",
                self.value(x).shape(),
                c.shape()
            )));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let v = Tensor::from_vec(self.value(x).shape(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::MulConst { x, c }, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        let rg = self.any_grad(&[x]);
        self.push(v, Op::Scale { x, s }, rg)
    }

    /// Spatial window `[top..top+h, left..left+w]` of a 4-d tensor.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.value(x).dims4()?;
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(Error::Contract(format!(
                "crop {h}x{w} at ({top},{left}) outside {ih}x{iw}"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            let plane = &src[p * ih * iw..(p + 1) * ih * iw];
            for y in top..top + h {
                out.extend_from_slice(&plane[y * iw + left..y * iw + left + w]);
            }
        }
        let v = Tensor::from_vec(&[n, c, h, w], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::Crop { x, top, left }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean squared error restricted to supervised sites, averaged over the
    /// leading (batch) axis.
    ///
    /// `mask` marks supervised sites with 1 and must be congruent to `pred`;
    /// `None` supervises every site. A sample with no supervised site
    /// contributes zero.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&[u8]>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "loss between {:?} and {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if let Some(m) = mask {
            if m.len() != p.len() {
                return Err(Error::Shape(format!(
                    "mask of {} sites for prediction of {}",
                    m.len(),
                    p.len()
                )));
            }
        }
        let batch = p.shape()[0];
        let per = p.len() / batch;
        let mut counts = Vec::with_capacity(batch);
        let mut total = 0.0f64;
        for b in 0..batch {
            let range = b * per..(b + 1) * per;
            let (pv, tv) = (&p.data()[range.clone()], &target.data()[range.clone()]);
            let mut acc = 0.0f64;
            let mut count = 0usize;
            match mask {
                Some(m) => {
                    for ((&a, &t), &keep) in pv.iter().zip(tv).zip(&m[range]) {
                        if keep != 0 {
                            let d = (a - t).as_f64();
                            acc += d * d;
                            count += 1;
                        }
                    }
                }
                None => {
                    for (&a, &t) in pv.iter().zip(tv) {
                        let d = (a - t).as_f64();
                        acc += d * d;
                    }
                    count = per;
                }
            }
            if count > 0 {
                total += acc / count as f64;
            }
            counts.push(count);
        }
        let loss = T::of(total / batch as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                target: target.clone(),
                mask: mask.map(|m| m.to_vec()),
                counts,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every leaf created with `requires_grad` gets an entry; leaves that do
    /// not influence the loss get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let g = match &self.nodes[id].op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(id, &g, &mut grads)?;
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&mut self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let x = &nodes[input.0].value;
                let wt = &nodes[weight.0].value;
                let [n, cin, h, w] = x.dims4()?;
                let [cout, _, kh, kw] = wt.dims4()?;
                let geom = ConvGeometry {
                    in_channels: cin,
                    height: h,
                    width: w,
                    kernel_h: kh,
                    kernel_w: kw,
                    stride: *stride,
                    pad: *pad,
                };
                let mut wg = wants(*weight).then(|| Tensor::zeros(wt.shape()));
                let mut bg = bias
                    .filter(|b| wants(*b))
                    .map(|b| Tensor::zeros(nodes[b.0].value.shape()));
                let mut ig = wants(*input).then(|| Tensor::zeros(x.shape()));
                let in_sz = cin * h * w;
                let out_sz = cout * geom.out_h() * geom.out_w();
                for i in 0..n {
                    conv::backward_sample(
                        &geom,
                        &x.data()[i * in_sz..(i + 1) * in_sz],
                        wt.data(),
                        cout,
                        &g.data()[i * out_sz..(i + 1) * out_sz],
                        wg.as_mut().map(|t| t.data_mut()),
                        bg.as_mut().map(|t| t.data_mut()),
                        ig.as_mut().map(|t| &mut t.data_mut()[i * in_sz..(i + 1) * in_sz]),
                        &mut self.col,
                    );
                }
                if let Some(t) = wg {
                    accumulate(grads, *weight, t);
                }
                if let (Some(b), Some(t)) = (bias, bg) {
                    accumulate(grads, *b, t);
                }
                if let Some(t) = ig {
                    accumulate(grads, *input, t);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &nodes[x.0].value;
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v >= T::zero() { gv } else { gv * *slope })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?);
            }
            Op::Upsample { x, factor } => {
                let xv = &nodes[x.0].value;
                let [n, c, h, w] = xv.dims4()?;
                let (oh, ow) = (h * factor, w * factor);
                let mut out = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut out[p * h * w..(p + 1) * h * w];
                    for oy in 0..oh {
                        let row = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            row[ox / factor] = row[ox / factor] + v;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), out)?);
            }
            Op::Concat { parts } => {
                let [n, total_c, h, w] = g.dims4()?;
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.shape()[1];
                    if wants(p) {
                        let mut out = Vec::with_capacity(n * pc * h * w);
                        for i in 0..n {
                            let start = (i * total_c + offset) * h * w;
                            out.extend_from_slice(&g.data()[start..start + pc * h * w]);
                        }
                        accumulate(grads, p, Tensor::from_vec(&[n, pc, h, w], out)?);
                    }
                    offset += pc;
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&gv, &y)| gv * y).collect();
                    accumulate(grads, *a, Tensor::from_vec(av.shape(), d)?);
                }
                if wants(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                    accumulate(grads, *b, Tensor::from_vec(bv.shape(), d)?);
                }
            }
            Op::MulConst { x, c } => {
                let d = g.data().iter().zip(c.data()).map(|(&gv, &cv)| gv * cv).collect();
                accumulate(grads, *x, Tensor::from_vec(c.shape(), d)?);
            }
            Op::Scale { x, s } => {
                accumulate(grads, *x, g.map(|v| v * *s));
            }
            Op::Crop { x, top, left } => {
                let xv = &nodes[x.0].value;
                let [n, c, ih, iw] = xv.dims4()?;
                let [_, _, h, w] = g.dims4()?;
                let mut out = vec![T::zero(); n * c * ih * iw];
                for p in 0..n * c {
                    let src = &g.data()[p * h * w..(p + 1) * h * w];
                    let dst = &mut out[p * ih * iw..(p + 1) * ih * iw];
                    for y in 0..h {
                        let at = (top + y) * iw + left;
                        dst[at..at + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), out)?);
            }
            Op::Sum { x } => {
                let gv = g.item()?;
                accumulate(grads, *x, Tensor::full(nodes[x.0].value.shape(), gv));
            }
            Op::MaskedMse {
                pred,
                target,
                mask,
                counts,
            } => {
                let pv = &nodes[pred.0].value;
                let gv = g.item()?;
                let batch = counts.len();
                let per = pv.len() / batch;
                let mut out = vec![T::zero(); pv.len()];
                for (b, &count) in counts.iter().enumerate() {
                    if count == 0 {
                        continue;
                    }
                    let k = gv * T::of(2.0 / (count as f64 * batch as f64));
                    for i in b * per..(b + 1) * per {
                        if !matches!(mask, Some(m) if m[i] == 0) {
                            out[i] = k * (pv.data()[i] - target.data()[i]);
                        }
                    }
                }
                accumulate(grads, *pred, Tensor::from_vec(pv.shape(), out)?);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_returns_input() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = tape.constant(t(&[1, 1, 3, 3], &data));
        let w = tape.param(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.param(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn all_ones_conv_center_and_corner() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.param(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn strided_conv_output_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 8, 16, 16]));
        let w = tape.param(Tensor::zeros(&[16, 8, 3, 3]));
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 16, 8, 8]);
    }

    #[test]
    fn conv_channel_mismatch_is_contract_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = tape.param(Tensor::zeros(&[4, 2, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, None, 1, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn leaky_relu_values_and_slope_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[2.0, -2.0, -1.0]));
        let y = tape.leaky_relu(x, 0.1).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, -0.2, -0.1]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.1, 0.1]);
    }

    #[test]
    fn leaky_relu_at_zero_takes_positive_branch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[0.0]));
        let y = tape.leaky_relu(x, 0.1).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn upsample_replicates_blocks_and_sums_back() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1, 1, 1, 2], &[3.0, 5.0]));
        let same = tape.upsample_nearest(x, 1).unwrap();
        assert_eq!(tape.value(same).data(), &[3.0, 5.0]);
        let y = tape.upsample_nearest(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 4]);
        assert_eq!(tape.value(y).data(), &[3.0, 3.0, 5.0, 5.0, 3.0, 3.0, 5.0, 5.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn linear_loss_gradient_is_the_constant() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[4], &[0.3, -1.0, 2.0, 7.0]));
        let c = t(&[4], &[1.5, -2.0, 0.25, 3.0]);
        let prod = tape.mul_const(w, c.clone()).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &c);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let used = tape.param(Tensor::full(&[2], 1.0));
        let unused = tape.param(Tensor::full(&[3], 1.0));
        let loss = tape.sum(used);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn masked_mse_ignores_unsupervised_sites() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(t(&[1, 1, 1, 3], &[0.6, 9.0, -4.0]));
        let target = t(&[1, 1, 1, 3], &[0.5, 0.0, 0.0]);
        let l = tape.masked_mse(p, &target, Some(&[1, 0, 0])).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.01).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        let gp = g.get(p).unwrap().data();
        assert!((gp[0] - 0.2).abs() < 1e-12);
        assert_eq!(&gp[1..], &[0.0, 0.0]);
    }

    #[test]
    fn masked_mse_empty_support_is_zero() {
        let mut tape = Tape::<f32>::new();
        let p = tape.param(Tensor::full(&[1, 1, 2, 2], 3.0));
        let l = tape
            .masked_mse(p, &Tensor::zeros(&[1, 1, 2, 2]), Some(&[0; 4]))
            .unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
        let g = tape.backward(l).unwrap();
        assert!(g.get(p).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
