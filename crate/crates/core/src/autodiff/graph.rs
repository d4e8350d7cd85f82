use std::fmt::Write as _;

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    SoftmaxRows(Var),
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    ScaleChannels(Var, Var),
    MulSpatial(Var, Var),
    Concat(Vec<Var>),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Aln {
        input: Var,
        eps: T,
        deltas: Vec<T>,
    },
    ChannelNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    L1Loss(Var, Var),
    FrobeniusLoss(Var, Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(_) => "upsample2x",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::ScaleChannels(..) => "scale_channels",
            Op::MulSpatial(..) => "mul_spatial",
            Op::Concat(_) => "concat",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Aln { .. } => "aln",
            Op::ChannelNorm { .. } => "channel_norm",
            Op::L1Loss(..) => "l1_loss",
            Op::FrobeniusLoss(..) => "frobenius_loss",
            Op::Sum(_) => "sum",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::Linear {
                input, weight, bias, ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Upsample2x(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::GlobalAvgPool(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Aln { input: a, .. }
            | Op::ChannelNorm { input: a, .. } => vec![*a],
            Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::ScaleChannels(a, b)
            | Op::MulSpatial(a, b)
            | Op::Matmul(a, b)
            | Op::L1Loss(a, b)
            | Op::FrobeniusLoss(a, b) => vec![*a, *b],
            Op::Concat(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    learnable: bool,
    // some learnable leaf is an ancestor (or the node itself)
    tracked: bool,
}

/// Reverse-mode differentiation tape over dense tensors.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] walks it once in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    differentiated: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Learnable leaf; receives a gradient on [`Graph::backward`].
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Non-learnable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.differentiated = false;
    }

    /// One line per node: index, operation, shape, parents.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parents: Vec<usize> = n.op.parents().iter().map(|p| p.0).collect();
            let _ = writeln!(
                s,
                "#{i:<5} {:<16} {:?}{} <- {:?}",
                n.op.name(),
                n.value.shape(),
                if n.learnable { " [param]" } else { "" },
                parents
            );
        }
        s
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, learnable: bool, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            learnable,
            tracked,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let tracked = op.parents().iter().any(|p| self.nodes[p.0].tracked);
        self.push_node(value, op, false, tracked)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn same_shape(&self, a: Var, b: Var, ctx: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(ctx, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn chw(&self, v: Var, ctx: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::shape(ctx, "[C, H, W]", s)),
        }
    }

    fn matrix_dims(&self, v: Var, ctx: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(ctx, "[rows, cols]", s)),
        }
    }

    /// Zero-padded "same" cross-correlation with optional bias; `stride` 1
    /// or 2, any dilation.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, dilation: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride, dilation)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape("conv2d bias", [geom.cout], self.shape(b)));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.data(input),
            self.data(weight),
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new(&[geom.cout, geom.out_height, geom.out_width], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Bilinear ×2 upsampling with half-pixel centers.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.chw(input, "upsample2x")?;
        let out = kernels::upsample2x_forward(self.data(input), c, h, w);
        Ok(self.push(Tensor::new(&[c, 2 * h, 2 * w], out)?, Op::Upsample2x(input)))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| if x >= T::zero() { x } else { slope * x }).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        self.push(value, Op::LeakyRelu(input, slope))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| T::one() / (T::one() + (-x).exp())).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid(input))
    }

    /// Softmax applied independently to each row of a matrix.
    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(input, "softmax_rows")?;
        let out = kernels::softmax_rows_forward(self.data(input), r, c);
        Ok(self.push(Tensor::new(&[r, c], out)?, Op::SoftmaxRows(input)))
    }

    /// `C x H x W -> C` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.chw(input, "global_avg_pool")?;
        let n = T::from_usize(h * w).expect("plane size");
        let out = self.data(input).chunks(h * w).map(|p| p.iter().copied().sum::<T>() / n).collect();
        Ok(self.push(Tensor::new(&[c], out)?, Op::GlobalAvgPool(input)))
    }

    /// Fully connected layer `W x + b` on a vector.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (out_dim, in_dim) = self.matrix_dims(weight, "linear weight")?;
        if self.shape(input) != [in_dim] {
            return Err(Error::shape("linear input", [in_dim], self.shape(input)));
        }
        if let Some(b) = bias {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape("linear bias", [out_dim], self.shape(b)));
            }
        }
        let mut out = kernels::matmul(self.data(weight), self.data(input), out_dim, in_dim, 1);
        if let Some(b) = bias {
            for (o, &bv) in out.iter_mut().zip(self.data(b)) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::new(&[out_dim], out)?, Op::Linear { input, weight, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplies slice `i` along the leading axis of `input` by `scale[i]`.
    pub fn scale_channels(&mut self, input: Var, scale: Var) -> Result<Var> {
        let c = *self.shape(input).first().unwrap_or(&0);
        if self.shape(scale) != [c] || c == 0 {
            return Err(Error::shape("scale_channels", [c], self.shape(scale)));
        }
        let inner = self.value(input).len() / c;
        let s = self.data(scale);
        let data = self
            .data(input)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * s[i / inner])
            .collect();
        let value = Tensor::new(self.shape(input), data)?;
        Ok(self.push(value, Op::ScaleChannels(input, scale)))
    }

    /// Multiplies every channel of a `C x H x W` tensor by a `1 x H x W` map.
    pub fn mul_spatial(&mut self, input: Var, map: Var) -> Result<Var> {
        let (_, h, w) = self.chw(input, "mul_spatial")?;
        if self.shape(map) != [1, h, w] {
            return Err(Error::shape("mul_spatial map", [1, h, w], self.shape(map)));
        }
        let m = self.data(map);
        let data = self
            .data(input)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * m[i % (h * w)])
            .collect();
        let value = Tensor::new(self.shape(input), data)?;
        Ok(self.push(value, Op::MulSpatial(input, map)))
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(first).is_empty() {
            return Err(Error::shape("concat", "rank >= 1", self.shape(first)));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::shape("concat", &tail, &s[1..]));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape("matmul inner", k, k2));
        }
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let out = kernels::transpose(self.data(a), r, c);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Adaptive layer normalization: each spatial position of a `C x H x W`
    /// tensor is normalized across its channels.
    pub fn aln(&mut self, input: Var, eps: T) -> Result<Var> {
        let (c, h, w) = self.chw(input, "aln")?;
        let (out, deltas) = kernels::aln_forward(self.data(input), c, h * w, eps);
        Ok(self.push(Tensor::new(&[c, h, w], out)?, Op::Aln { input, eps, deltas }))
    }

    /// Batch-of-one batch normalization: each channel normalized over its
    /// spatial positions.
    pub fn channel_norm(&mut self, input: Var, eps: T) -> Result<Var> {
        let (c, h, w) = self.chw(input, "channel_norm")?;
        let (out, inv_std) = kernels::channel_norm_forward(self.data(input), c, h * w, eps);
        Ok(self.push(Tensor::new(&[c, h, w], out)?, Op::ChannelNorm { input, inv_std }))
    }

    /// `Σ |pred − target|`.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let s = self.data(pred).iter().zip(self.data(target)).map(|(&p, &t)| (p - t).abs()).sum();
        Ok(self.push(Tensor::scalar(s), Op::L1Loss(pred, target)))
    }

    /// `‖pred − target‖_F`.
    pub fn frobenius_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "frobenius_loss")?;
        let s: T = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(s.sqrt()), Op::FrobeniusLoss(pred, target)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Back-propagates from a scalar node, accumulating gradients over all
    /// paths into every tracked node. Non-learnable leaves receive none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(Error::Graph("backward already ran; call reset_grads first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.differentiated = true;
        if !self.tracked(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.grads[i] = Some(g);
            for (parent, pg) in contributions {
                if !self.nodes[parent.0].tracked {
                    continue;
                }
                match &mut self.grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = (self.tracked(*input), self.tracked(*weight), bias.is_some_and(|b| self.tracked(b)));
                let grads = kernels::conv2d_backward(geom, self.data(*input), self.data(*weight), g, want);
                if let Some(d) = grads.input {
                    out.push((*input, d));
                }
                if let Some(d) = grads.weight {
                    out.push((*weight, d));
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    out.push((*b, d));
                }
            }
            Op::Upsample2x(a) => {
                let s = self.shape(*a);
                out.push((*a, kernels::upsample2x_backward(g, s[0], s[1], s[2])));
            }
            Op::LeakyRelu(a, slope) => {
                let d = self
                    .data(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x >= T::zero() { gi } else { *slope * gi })
                    .collect();
                out.push((*a, d));
            }
            Op::Sigmoid(a) => {
                let d = y.iter().zip(g).map(|(&s, &gi)| gi * s * (T::one() - s)).collect();
                out.push((*a, d));
            }
            Op::SoftmaxRows(a) => {
                let s = node.value.shape();
                out.push((*a, kernels::softmax_rows_backward(y, g, s[0], s[1])));
            }
            Op::GlobalAvgPool(a) => {
                let s = self.shape(*a);
                let hw = s[1] * s[2];
                let n = T::from_usize(hw).expect("plane size");
                let d = (0..s[0] * hw).map(|j| g[j / hw] / n).collect();
                out.push((*a, d));
            }
            Op::Linear { input, weight, bias } => {
                let (o, n) = (self.shape(*weight)[0], self.shape(*weight)[1]);
                if self.tracked(*input) {
                    out.push((*input, kernels::matmul_tn(self.data(*weight), g, o, n, 1)));
                }
                if self.tracked(*weight) {
                    out.push((*weight, kernels::matmul(g, self.data(*input), o, 1, n)));
                }
                if let Some(b) = bias {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                out.push((*a, g.iter().zip(db).map(|(&gi, &v)| gi * v).collect()));
                out.push((*b, g.iter().zip(da).map(|(&gi, &v)| gi * v).collect()));
            }
            Op::ScaleChannels(a, s) => {
                let sv = self.data(*s);
                let inner = g.len() / sv.len();
                let dx = g.iter().enumerate().map(|(j, &gi)| gi * sv[j / inner]).collect();
                let ds = g
                    .chunks(inner)
                    .zip(self.data(*a).chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&p, &q)| p * q).sum())
                    .collect();
                out.push((*a, dx));
                out.push((*s, ds));
            }
            Op::MulSpatial(a, m) => {
                let mv = self.data(*m);
                let hw = mv.len();
                let dx = g.iter().enumerate().map(|(j, &gi)| gi * mv[j % hw]).collect();
                let mut dm = vec![T::zero(); hw];
                for (j, (&gi, &x)) in g.iter().zip(self.data(*a)).enumerate() {
                    dm[j % hw] += gi * x;
                }
                out.push((*a, dx));
                out.push((*m, dm));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    out.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.tracked(*a) {
                    out.push((*a, kernels::matmul_nt(g, self.data(*b), m, n, k)));
                }
                if self.tracked(*b) {
                    out.push((*b, kernels::matmul_tn(self.data(*a), g, m, k, n)));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                out.push((*a, kernels::transpose(g, s[0], s[1])));
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Aln { input, eps, deltas } => {
                let s = node.value.shape();
                out.push((*input, kernels::aln_backward(y, deltas, g, s[0], s[1] * s[2], *eps)));
            }
            Op::ChannelNorm { input, inv_std } => {
                let s = node.value.shape();
                out.push((*input, kernels::channel_norm_backward(y, inv_std, g, s[0], s[1] * s[2])));
            }
            Op::L1Loss(p, t) => {
                let sign = |d: T| {
                    if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                let dp: Vec<T> = self
                    .data(*p)
                    .iter()
                    .zip(self.data(*t))
                    .map(|(&a, &b)| g[0] * sign(a - b))
                    .collect();
                let dt = dp.iter().map(|&v| -v).collect();
                out.push((*p, dp));
                out.push((*t, dt));
            }
            Op::FrobeniusLoss(p, t) => {
                let norm = y[0];
                let scale = if norm > T::zero() { g[0] / norm } else { T::zero() };
                let dp: Vec<T> = self
                    .data(*p)
                    .iter()
                    .zip(self.data(*t))
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                let dt = dp.iter().map(|&v| -v).collect();
                out.push((*p, dp));
                out.push((*t, dt));
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).len()])),
        }
        out
    }

    /// True when `v` is a learnable leaf.
    pub fn is_learnable(&self, v: Var) -> bool {
        self.nodes[v.0].learnable
    }
}
