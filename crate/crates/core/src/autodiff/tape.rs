use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::Kernel3;
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// One input sample contributing to a resampled output cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    /// Cell index `y * width + x` in the source grid.
    pub cell: u32,
    pub weight: f64,
}

/// Linear resampling of a (height, width) grid onto an (out_height, out_width)
/// lattice. Every output cell is a weighted sum of at most four source cells,
/// applied per channel and per batch entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    pub src_height: usize,
    pub src_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// `out_height * out_width` groups of four taps; unused taps carry weight 0.
    pub taps: Vec<[Tap; 4]>,
}

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Conv3x3 {
        input: Var,
        kernel: Kernel3,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: Option<Arc<Vec<bool>>>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Sin(Var),
    Cos(Var),
    Scale(Var, T),
    Clip {
        input: Var,
        lo: T,
        hi: T,
    },
    Pointwise {
        input: Var,
        df: fn(T) -> T,
    },
    CellMul {
        input: Var,
        cell: Var,
    },
    Select {
        input: Var,
        channels: Vec<usize>,
    },
    Concat(Vec<Var>),
    ClippedNorm {
        gx: Var,
        gy: Var,
    },
    SumPerSample(Var),
    Sum(Var),
    Resample {
        input: Var,
        plan: Arc<ResamplePlan>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of operations for one forward pass.
///
/// Values are immutable once recorded. Leaves created with [`Tape::leaf`]
/// receive gradients; leaves created with [`Tape::constant`] do not, and
/// neither does anything computed purely from constants.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a, b)));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input (a parameter or a state being optimized).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Per-channel 3x3 cross-correlation with zero padding.
    pub fn conv3x3(&mut self, x: Var, kernel: Kernel3) -> Result<Var> {
        let input = self.value(x);
        let s = input.shape();
        if s.height < 3 || s.width < 3 {
            return Err(Error::dim(
                "conv3x3",
                format!("grid {}x{} is smaller than the 3x3 stencil", s.height, s.width),
            ));
        }
        let mut out = Tensor::zeros(s);
        correlate3x3(input.data(), out.data_mut(), s, &kernel);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Conv3x3 { input: x, kernel }, rg))
    }

    /// Per-cell affine map `x W + b` over the channel axis. `weight` holds a
    /// (c_in, c_out) matrix stored with shape `(1, 1, c_in, c_out)`; `bias`
    /// has shape `(1, 1, 1, c_out)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.dense_impl(x, weight, bias, None)
    }

    /// Like [`Tape::dense`] but evaluated only on cells whose entry in `rows`
    /// is set; every other output cell is exactly zero (bias included).
    pub fn dense_rows(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        rows: Arc<Vec<bool>>,
    ) -> Result<Var> {
        self.dense_impl(x, weight, bias, Some(rows))
    }

    fn dense_impl(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        rows: Option<Arc<Vec<bool>>>,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (c_in, c_out) = (ws.width, ws.channels);
        if ws.batch != 1 || ws.height != 1 || xs.channels != c_in {
            return Err(Error::dim(
                "dense",
                format!("input {:?} against weight {:?}", xs, ws),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, 1, 1, c_out) {
                return Err(Error::dim("dense", format!("bias {:?} for {} outputs", bs, c_out)));
            }
        }
        if let Some(r) = &rows {
            if r.len() != xs.cells() {
                return Err(Error::dim(
                    "dense",
                    format!("row mask of {} entries for {} cells", r.len(), xs.cells()),
                ));
            }
        }
        let out_shape = xs.with_channels(c_out);
        let mut out = Tensor::zeros(out_shape);
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = bias.map(|b| self.value(b).data());
            let od = out.data_mut();
            for cell in 0..xs.cells() {
                if let Some(r) = &rows {
                    if !r[cell] {
                        continue;
                    }
                }
                let xr = &xv[cell * c_in..(cell + 1) * c_in];
                let or = &mut od[cell * c_out..(cell + 1) * c_out];
                if let Some(bv) = bv {
                    or.copy_from_slice(bv);
                }
                for (k, &a) in xr.iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    let wr = &wv[k * c_out..(k + 1) * c_out];
                    for (o, &w) in or.iter_mut().zip(wr) {
                        *o += a * w;
                    }
                }
            }
        }
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Dense {
                input: x,
                weight,
                bias,
                rows,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sin(x), |v| v.sin())
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, Op::Cos(x), |v| v.cos())
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clip(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clip { input: x, lo, hi }, |v| v.max(lo).min(hi))
    }

    /// Arbitrary elementwise function with a caller-supplied derivative.
    pub fn pointwise(&mut self, x: Var, f: fn(T) -> T, df: fn(T) -> T) -> Var {
        self.unary(x, Op::Pointwise { input: x, df }, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Multiplies every channel of `x` by the single-channel per-cell value in `cell`.
    pub fn cell_mul(&mut self, x: Var, cell: Var) -> Result<Var> {
        let xs = self.shape(x);
        let cs = self.shape(cell);
        if cs != xs.with_channels(1) {
            return Err(Error::dim("cell_mul", format!("{:?} against {:?}", xs, cs)));
        }
        let c = xs.channels;
        let xv = self.value(x).data();
        let mv = self.value(cell).data();
        let mut data = Vec::with_capacity(xs.len());
        for (i, &m) in mv.iter().enumerate() {
            data.extend(xv[i * c..(i + 1) * c].iter().map(|&v| v * m));
        }
        let value = Tensor::from_vec(xs, data)?;
        let rg = self.rg(&[x, cell]);
        Ok(self.push(value, Op::CellMul { input: x, cell }, rg))
    }

    /// Gathers the listed channels, in order.
    pub fn select(&mut self, x: Var, channels: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if let Some(&bad) = channels.iter().find(|&&c| c >= xs.channels) {
            return Err(Error::dim(
                "select",
                format!("channel {} of {}", bad, xs.channels),
            ));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(xs.cells() * channels.len());
        for cell in 0..xs.cells() {
            let row = &xv[cell * xs.channels..(cell + 1) * xs.channels];
            data.extend(channels.iter().map(|&c| row[c]));
        }
        let value = Tensor::from_vec(xs.with_channels(channels.len()), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Select {
                input: x,
                channels: channels.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.with_channels(0) != base.with_channels(0) {
                return Err(Error::dim("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s.channels;
        }
        let mut data = Vec::with_capacity(base.cells() * total);
        for cell in 0..base.cells() {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape().channels;
                data.extend_from_slice(&v.data()[cell * c..(cell + 1) * c]);
            }
        }
        let value = Tensor::from_vec(base.with_channels(total), data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// `max(sqrt(gx^2 + gy^2), 1)` elementwise.
    pub fn clipped_norm(&mut self, gx: Var, gy: Var) -> Result<Var> {
        self.binary(
            "clipped_norm",
            gx,
            gy,
            Op::ClippedNorm { gx, gy },
            |a, b| (a * a + b * b).sqrt().max(T::one()),
        )
    }

    /// Normalizes the vector `(gx, gy)` by its length, with the length
    /// clamped from below at 1 so near-zero vectors shrink to zero instead of
    /// blowing up.
    pub fn clipped_normalize_pair(&mut self, gx: Var, gy: Var) -> Result<(Var, Var)> {
        let d = self.clipped_norm(gx, gy)?;
        Ok((self.div(gx, d)?, self.div(gy, d)?))
    }

    /// Sum over everything except the batch axis, giving shape `(batch, 1, 1, 1)`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let per = xs.len() / xs.batch.max(1);
        let data = self
            .value(x)
            .data()
            .chunks(per.max(1))
            .map(|c| c.iter().copied().sum())
            .collect();
        let value = Tensor::from_vec(Shape::new(xs.batch, 1, 1, 1), data).expect("batch sums");
        let rg = self.rg(&[x]);
        self.push(value, Op::SumPerSample(x), rg)
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Applies a linear resampling plan to every batch entry and channel.
    pub fn resample(&mut self, x: Var, plan: Arc<ResamplePlan>) -> Result<Var> {
        let xs = self.shape(x);
        if xs.height != plan.src_height || xs.width != plan.src_width {
            return Err(Error::dim(
                "resample",
                format!(
                    "input {}x{} against plan for {}x{}",
                    xs.height, xs.width, plan.src_height, plan.src_width
                ),
            ));
        }
        let c = xs.channels;
        let out_shape = Shape::new(xs.batch, plan.out_height, plan.out_width, c);
        let mut out = Tensor::zeros(out_shape);
        {
            let xv = self.value(x).data();
            let od = out.data_mut();
            let src_cells = xs.height * xs.width;
            let out_cells = plan.out_height * plan.out_width;
            for b in 0..xs.batch {
                for (o, taps) in plan.taps.iter().enumerate() {
                    let dst = &mut od[(b * out_cells + o) * c..(b * out_cells + o + 1) * c];
                    for tap in taps.iter().filter(|t| t.weight != 0.0) {
                        let w = T::from_f64(tap.weight);
                        let s0 = (b * src_cells + tap.cell as usize) * c;
                        for (d, &v) in dst.iter_mut().zip(&xv[s0..s0 + c]) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Resample { input: x, plan }, rg))
    }

    /// Gradients of the single-element `loss` with respect to every recorded
    /// variable. The tape is not modified, so repeated calls return identical
    /// results.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a single-element loss, got shape {:?}",
                ls
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = &mut grads[v.0];
            let buf = slot.get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.shape().len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv3x3 { input, kernel } => {
                let s = node.value.shape();
                acc(*input, &mut |buf| correlate3x3(g, buf, s, &kernel.flipped()));
            }
            Op::Dense {
                input,
                weight,
                bias,
                rows,
            } => {
                let xs = self.shape(*input);
                let ws = self.shape(*weight);
                let (c_in, c_out) = (ws.width, ws.channels);
                let active = |cell: usize| rows.as_ref().map_or(true, |r| r[cell]);
                let xv = val(*input);
                let wv = val(*weight);
                if wants(*input) {
                    // W transposed, so each output gradient scatters a contiguous row.
                    let mut wt = vec![T::zero(); c_in * c_out];
                    for k in 0..c_in {
                        for o in 0..c_out {
                            wt[o * c_in + k] = wv[k * c_out + o];
                        }
                    }
                    acc(*input, &mut |buf| {
                        for cell in (0..xs.cells()).filter(|&c| active(c)) {
                            let gr = &g[cell * c_out..(cell + 1) * c_out];
                            let dst = &mut buf[cell * c_in..(cell + 1) * c_in];
                            for (o, &gv) in gr.iter().enumerate() {
                                if gv == T::zero() {
                                    continue;
                                }
                                for (d, &w) in dst.iter_mut().zip(&wt[o * c_in..(o + 1) * c_in]) {
                                    *d += w * gv;
                                }
                            }
                        }
                    });
                }
                acc(*weight, &mut |buf| {
                    for cell in (0..xs.cells()).filter(|&c| active(c)) {
                        let gr = &g[cell * c_out..(cell + 1) * c_out];
                        let xr = &xv[cell * c_in..(cell + 1) * c_in];
                        for (k, &a) in xr.iter().enumerate() {
                            if a == T::zero() {
                                continue;
                            }
                            let dst = &mut buf[k * c_out..(k + 1) * c_out];
                            for (d, &gv) in dst.iter_mut().zip(gr) {
                                *d += a * gv;
                            }
                        }
                    }
                });
                if let Some(b) = bias {
                    acc(*b, &mut |buf| {
                        for cell in (0..xs.cells()).filter(|&c| active(c)) {
                            let gr = &g[cell * c_out..(cell + 1) * c_out];
                            for (d, &gv) in buf.iter_mut().zip(gr) {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| {
                    for ((d, &gv), &v) in buf.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| {
                    for (d, &gv) in buf.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |buf| zip_accumulate(buf, g, bv, |gv, y| gv * y));
                acc(*b, &mut |buf| zip_accumulate(buf, g, av, |gv, x| gv * x));
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |buf| zip_accumulate(buf, g, bv, |gv, y| gv / y));
                acc(*b, &mut |buf| {
                    for (((d, &gv), &x), &y) in buf.iter_mut().zip(g).zip(av).zip(bv) {
                        *d -= gv * x / (y * y);
                    }
                });
            }
            Op::Sin(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| zip_accumulate(buf, g, xv, |gv, v| gv * v.cos()));
            }
            Op::Cos(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| zip_accumulate(buf, g, xv, |gv, v| -gv * v.sin()));
            }
            Op::Scale(x, k) => {
                let k = *k;
                acc(*x, &mut |buf| {
                    for (d, &gv) in buf.iter_mut().zip(g) {
                        *d += gv * k;
                    }
                });
            }
            Op::Clip { input, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let xv = val(*input);
                acc(*input, &mut |buf| {
                    zip_accumulate(buf, g, xv, |gv, v| {
                        if v > lo && v < hi {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                });
            }
            Op::Pointwise { input, df } => {
                let xv = val(*input);
                let df = *df;
                acc(*input, &mut |buf| zip_accumulate(buf, g, xv, |gv, v| gv * df(v)));
            }
            Op::CellMul { input, cell } => {
                let c = self.shape(*input).channels;
                let (xv, mv) = (val(*input), val(*cell));
                acc(*input, &mut |buf| {
                    for (i, &m) in mv.iter().enumerate() {
                        for j in i * c..(i + 1) * c {
                            buf[j] += g[j] * m;
                        }
                    }
                });
                acc(*cell, &mut |buf| {
                    for (i, d) in buf.iter_mut().enumerate() {
                        let r = i * c..(i + 1) * c;
                        *d += g[r.clone()].iter().zip(&xv[r]).map(|(&a, &b)| a * b).sum::<T>();
                    }
                });
            }
            Op::Select { input, channels } => {
                let c_in = self.shape(*input).channels;
                let k = channels.len();
                acc(*input, &mut |buf| {
                    for (cell, gr) in g.chunks(k).enumerate() {
                        for (&ch, &gv) in channels.iter().zip(gr) {
                            buf[cell * c_in + ch] += gv;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = node.value.shape().channels;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).channels;
                    acc(p, &mut |buf| {
                        for (cell, gr) in g.chunks(total).enumerate() {
                            add_into(&mut buf[cell * c..(cell + 1) * c], &gr[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::ClippedNorm { gx, gy } => {
                let (xv, yv) = (val(*gx), val(*gy));
                let d = node.value.data();
                let grad_of = |own: &[T], buf: &mut [T]| {
                    for i in 0..buf.len() {
                        if d[i] > T::one() {
                            buf[i] += g[i] * own[i] / d[i];
                        }
                    }
                };
                acc(*gx, &mut |buf| grad_of(xv, buf));
                acc(*gy, &mut |buf| grad_of(yv, buf));
            }
            Op::SumPerSample(x) => {
                let xs = self.shape(*x);
                let per = xs.len() / xs.batch.max(1);
                acc(*x, &mut |buf| {
                    for (chunk, &gv) in buf.chunks_mut(per.max(1)).zip(g) {
                        for d in chunk {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                acc(*x, &mut |buf| {
                    for d in buf {
                        *d += gv;
                    }
                });
            }
            Op::Resample { input, plan } => {
                let xs = self.shape(*input);
                let c = xs.channels;
                let src_cells = xs.height * xs.width;
                let out_cells = plan.out_height * plan.out_width;
                acc(*input, &mut |buf| {
                    for b in 0..xs.batch {
                        for (o, taps) in plan.taps.iter().enumerate() {
                            let gr = &g[(b * out_cells + o) * c..(b * out_cells + o + 1) * c];
                            for tap in taps.iter().filter(|t| t.weight != 0.0) {
                                let w = T::from_f64(tap.weight);
                                let s0 = (b * src_cells + tap.cell as usize) * c;
                                for (d, &gv) in buf[s0..s0 + c].iter_mut().zip(gr) {
                                    *d += w * gv;
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(buf: &mut [T], g: &[T]) {
    for (d, &gv) in buf.iter_mut().zip(g) {
        *d += gv;
    }
}

fn zip_accumulate<T: Scalar>(buf: &mut [T], g: &[T], other: &[T], f: impl Fn(T, T) -> T) {
    for ((d, &gv), &o) in buf.iter_mut().zip(g).zip(other) {
        *d += f(gv, o);
    }
}

/// `dst += correlate(src, kernel)` per channel with zero padding.
///
/// Each kernel tap adds a shifted copy of a source row segment, so the
/// inner loop is a contiguous multiply-add over `width * channels` values.
fn correlate3x3<T: Scalar>(src: &[T], dst: &mut [T], s: Shape, kernel: &Kernel3) {
    let (h, w, c) = (s.height, s.width, s.channels);
    let row = w * c;
    for b in 0..s.batch {
        let base = b * h * row;
        for y in 0..h {
            let out = &mut dst[base + y * row..base + (y + 1) * row];
            for (ky, krow) in kernel.0.iter().enumerate() {
                let Some(yy) = (y + ky).checked_sub(1).filter(|&v| v < h) else { continue };
                let inp = &src[base + yy * row..base + (yy + 1) * row];
                for (kx, &k) in krow.iter().enumerate() {
                    if k == 0.0 {
                        continue;
                    }
                    let k = T::from_f64(k);
                    // Output column x reads input column x + kx - 1.
                    let (o, i) = match kx {
                        0 => (&mut out[c..], &inp[..row - c]),
                        1 => (&mut out[..], &inp[..]),
                        _ => (&mut out[..row - c], &inp[c..]),
                    };
                    for (d, &v) in o.iter_mut().zip(i) {
                        *d += k * v;
                    }
                }
            }
        }
    }
}

/// Gradient buffers produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    shapes: Vec<Shape>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; all zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
