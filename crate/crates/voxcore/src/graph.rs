use crate::element::Element;
use crate::error::{Result, VoxError};
use crate::kernels::{self, ConvGeom, NormSaved};
use crate::spec::{Activation, ConvSpec, PaddingMode};
use crate::tensor::{as_5d, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `x + s` with `s` a one-element node.
    AddScalar(Var, Var),
    /// `x * s` with `s` a one-element node.
    MulScalar(Var, Var),
    /// `scale * x + shift` with constant coefficients; only the scale matters for backward.
    Affine(Var, f64),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    PadZero {
        x: Var,
        pads: [(isize, isize); 3],
    },
    PadReflect {
        x: Var,
        pad: [usize; 3],
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// Adjoint of `Conv` with geometry `geom`; its output has `geom.input` extents.
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved<T>,
    },
    AvgPool2 {
        x: Var,
        ext: [usize; 3],
    },
    Channel {
        x: Var,
        channel: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Affine(..) => "affine",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Sqrt(..) => "sqrt",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::PadZero { .. } => "pad_zero",
            Op::PadReflect { .. } => "pad_reflect",
            Op::Conv { .. } => "conv3d",
            Op::ConvTranspose { .. } => "conv_transpose3d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Channel { .. } => "channel",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Arena recording a forward computation for reverse-mode differentiation.
///
/// Nodes are only ever appended and an op can only reference existing
/// nodes, so the arena order is a topological order and cycles cannot be
/// expressed. Build a fresh graph (or [`Graph::reset`]) per training step.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(VoxError::Rank {
            op,
            expected: a.len(),
            found: b.to_vec(),
        });
    }
    if let Some(axis) = a.iter().zip(b).position(|(x, y)| x != y) {
        return Err(VoxError::Dimension {
            op,
            axis,
            expected: a[axis],
            found: b[axis],
        });
    }
    Ok(())
}

fn spatial(shape: &[usize; 5]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value as a new constant; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    pub fn grad_data(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Name of the first op whose output contains a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes.iter().find(|n| !n.value.is_finite()).map(|n| n.op.name())
    }

    /// Hash of the sign pattern at every piecewise-linear kink site
    /// (relu, leaky relu, abs). Two evaluations with equal signatures took
    /// the same linear branch everywhere.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for node in &self.nodes {
            let x = match node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) | Op::Abs(x) => x,
                _ => continue,
            };
            for v in self.nodes[x.0].value.data() {
                let bit = if *v > T::zero() { 1u64 } else { 2 };
                h = (h ^ bit).wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        mk: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, mk(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn scalar_of(&self, op: &'static str, s: Var) -> Result<T> {
        self.value(s).item().ok_or_else(|| VoxError::Rank {
            op,
            expected: 1,
            found: self.shape(s).to_vec(),
        })
    }

    /// `x + s` where `s` holds a single element.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self.scalar_of("add_scalar", s)?;
        let t = self.value(x).map(|v| v + k);
        let rg = self.rg(&[x, s]);
        Ok(self.push(t, Op::AddScalar(x, s), rg))
    }

    /// `x * s` where `s` holds a single element.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self.scalar_of("mul_scalar", s)?;
        let t = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x, s]);
        Ok(self.push(t, Op::MulScalar(x, s), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, b) = (T::from_f64(scale), T::from_f64(shift));
        let t = self.value(x).map(|v| a * v + b);
        let rg = self.rg(&[x]);
        self.push(t, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, 1.0, c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    /// Square root; its subgradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        Ok(match kind {
            Activation::Relu => self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x)),
            Activation::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(VoxError::config("leaky_relu", format!("slope {slope} outside (0, 1)")));
                }
                let s = T::from_f64(slope);
                self.unary(x, |v| if v > T::zero() { v } else { s * v }, Op::LeakyRelu(x, slope))
            }
            Activation::Tanh => self.unary(x, |v| v.tanh(), Op::Tanh(x)),
        })
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|v| v.as_f64()).sum();
        let m = s / t.numel().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::from_f64(m)), Op::Mean(x), rg)
    }

    // ---- spatial ops ------------------------------------------------------

    /// Zero-pad (positive) or crop (negative) each spatial side of a 5-d tensor.
    pub fn pad_zero(&mut self, x: Var, pads: [(isize, isize); 3]) -> Result<Var> {
        let s = as_5d("pad_zero", self.shape(x))?;
        let ext = spatial(&s);
        for (axis, &(a, b)) in pads.iter().enumerate() {
            if ext[axis] as isize + a + b <= 0 {
                return Err(VoxError::config("pad_zero", format!("axis {axis} would become empty")));
            }
        }
        let (data, out) = kernels::pad_zero(self.value(x).data(), s[0] * s[1], ext, pads);
        let t = Tensor::new(vec![s[0], s[1], out[0], out[1], out[2]], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::PadZero { x, pads }, rg))
    }

    /// Mirror-pad each spatial axis by `pad` voxels.
    pub fn pad_reflect(&mut self, x: Var, pad: [usize; 3]) -> Result<Var> {
        let s = as_5d("pad_reflect", self.shape(x))?;
        let (data, out) = kernels::pad_reflect(self.value(x).data(), s[0] * s[1], spatial(&s), pad);
        let t = Tensor::new(vec![s[0], s[1], out[0], out[1], out[2]], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::PadReflect { x, pad }, rg))
    }

    fn check_weight(&self, op: &'static str, w: Var, expected: [usize; 5]) -> Result<()> {
        let ws = self.shape(w);
        if ws.len() != 5 {
            return Err(VoxError::Rank {
                op,
                expected: 5,
                found: ws.to_vec(),
            });
        }
        same_shape(op, &expected, ws)
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        match b {
            Some(b) => same_shape(op, &[channels], self.shape(b)),
            None => Ok(()),
        }
    }

    /// 3D cross-correlation. `weight` is `[Co, Ci, kd, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        const OP: &str = "conv3d";
        spec.validate()?;
        let s = as_5d(OP, self.shape(x))?;
        if s[1] != spec.in_channels {
            return Err(VoxError::Dimension {
                op: OP,
                axis: 1,
                expected: spec.in_channels,
                found: s[1],
            });
        }
        let [kd, kh, kw] = spec.kernel;
        self.check_weight(OP, weight, [spec.out_channels, spec.in_channels, kd, kh, kw])?;
        self.check_bias(OP, bias, spec.out_channels)?;
        spec.conv_output(spatial(&s))?;

        let padded = if spec.padding == [0; 3] {
            x
        } else {
            match spec.padding_mode {
                PaddingMode::Zero => {
                    let p = spec.padding.map(|p| (p as isize, p as isize));
                    self.pad_zero(x, p)?
                }
                PaddingMode::Reflect => self.pad_reflect(x, spec.padding)?,
            }
        };
        let ps = as_5d(OP, self.shape(padded))?;
        let geom = ConvGeom::new(
            s[0],
            spec.in_channels,
            spec.out_channels,
            spatial(&ps),
            spec.kernel,
            spec.stride,
        );
        let data = kernels::conv_forward(
            &geom,
            self.value(padded).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let [od, oh, ow] = geom.output;
        let t = Tensor::new(vec![s[0], spec.out_channels, od, oh, ow], data)?;
        let mut deps = vec![padded, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            t,
            Op::Conv {
                x: padded,
                w: weight,
                b: bias,
                geom,
            },
            rg,
        ))
    }

    /// Fractionally-strided convolution, the adjoint of `conv3d` with the same
    /// kernel geometry. `weight` is `[Ci, Co, kd, kh, kw]`; padding crops the
    /// output and `output_padding` extends its trailing side.
    pub fn conv_transpose3d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        const OP: &str = "conv_transpose3d";
        spec.validate()?;
        let s = as_5d(OP, self.shape(x))?;
        if s[1] != spec.in_channels {
            return Err(VoxError::Dimension {
                op: OP,
                axis: 1,
                expected: spec.in_channels,
                found: s[1],
            });
        }
        let [kd, kh, kw] = spec.kernel;
        self.check_weight(OP, weight, [spec.in_channels, spec.out_channels, kd, kh, kw])?;
        self.check_bias(OP, bias, spec.out_channels)?;
        spec.transpose_output(spatial(&s))?;

        let ext = spatial(&s);
        let full = [0, 1, 2].map(|a| (ext[a] - 1) * spec.stride[a] + spec.kernel[a]);
        let geom = ConvGeom::new(
            s[0],
            spec.out_channels,
            spec.in_channels,
            full,
            spec.kernel,
            spec.stride,
        );
        debug_assert_eq!(geom.output, ext);
        let mut data = kernels::conv_backward_input(&geom, self.value(weight).data(), self.value(x).data());
        if let Some(b) = bias {
            let vol: usize = full.iter().product();
            let bv = self.value(b).data();
            for (i, chunk) in data.chunks_mut(vol).enumerate() {
                let bc = bv[i % spec.out_channels];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        let t = Tensor::new(vec![s[0], spec.out_channels, full[0], full[1], full[2]], data)?;
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let y = self.push(
            t,
            Op::ConvTranspose {
                x,
                w: weight,
                b: bias,
                geom,
            },
            rg,
        );
        let crop = [0, 1, 2].map(|a| {
            let p = spec.padding[a] as isize;
            (-p, spec.output_padding[a] as isize - p)
        });
        if crop == [(0, 0); 3] {
            Ok(y)
        } else {
            self.pad_zero(y, crop)
        }
    }

    /// Per-(sample, channel) normalization over spatial voxels with biased
    /// variance, followed by a learnable per-channel affine map.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "instance_norm";
        let s = as_5d(OP, self.shape(x))?;
        let vol = s[2] * s[3] * s[4];
        if vol < 2 {
            return Err(VoxError::Degenerate {
                op: OP,
                reason: "spatial volume of 1 voxel has no variance to normalize".into(),
            });
        }
        same_shape(OP, &[s[1]], self.shape(gamma))?;
        same_shape(OP, &[s[1]], self.shape(beta))?;
        let (data, saved) = kernels::instance_norm(
            self.value(x).data(),
            s[0],
            s[1],
            vol,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::from_f64(eps),
        );
        let t = Tensor::new(s.to_vec(), data)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(t, Op::InstanceNorm { x, gamma, beta, saved }, rg))
    }

    /// 2x2x2 mean pooling; trailing odd voxels are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = as_5d("avg_pool2", self.shape(x))?;
        let ext = spatial(&s);
        let out = kernels::avg_pool2_shape(ext);
        if out.contains(&0) {
            return Err(VoxError::config("avg_pool2", "every spatial extent must be >= 2"));
        }
        let data = kernels::avg_pool2_forward(self.value(x).data(), s[0] * s[1], ext);
        let t = Tensor::new(vec![s[0], s[1], out[0], out[1], out[2]], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::AvgPool2 { x, ext }, rg))
    }

    /// Select one channel of an `[N, C, ...]` tensor, keeping a unit channel axis.
    pub fn channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || channel >= shape[1] {
            return Err(VoxError::config(
                "channel",
                format!("channel {channel} out of range for {shape:?}"),
            ));
        }
        let vol: usize = shape[2..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(shape[0] * vol);
        for n in 0..shape[0] {
            let base = (n * shape[1] + channel) * vol;
            data.extend_from_slice(&src[base..base + vol]);
        }
        let mut out_shape = shape.clone();
        out_shape[1] = 1;
        let t = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Channel { x, channel }, rg))
    }

    // ---- backward ---------------------------------------------------------

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagate from a scalar `root`, accumulating into every ancestor
    /// that requires a gradient. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(VoxError::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gy) = self.grads[i].take() else { continue };
            for (v, g) in self.node_vjp(i, &gy) {
                self.accumulate(v, g);
            }
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each parent needing a gradient.
    fn node_vjp(&self, i: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        let mut emit = |v: Var, f: &dyn Fn() -> Vec<T>| {
            if need(v) {
                out.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| gy.to_vec());
                emit(*b, &|| gy.to_vec());
            }
            Op::Sub(a, b) => {
                emit(*a, &|| gy.to_vec());
                emit(*b, &|| gy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                emit(*a, &|| gy.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect());
                emit(*b, &|| gy.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect());
            }
            Op::Div(a, b) => {
                emit(*a, &|| gy.iter().zip(val(*b)).map(|(&g, &y)| g / y).collect());
                emit(*b, &|| {
                    gy.iter()
                        .zip(val(*a).iter().zip(val(*b)))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect()
                });
            }
            Op::AddScalar(x, s) => {
                emit(*x, &|| gy.to_vec());
                emit(*s, &|| vec![gy.iter().copied().sum()]);
            }
            Op::MulScalar(x, s) => {
                let k = val(*s)[0];
                emit(*x, &|| gy.iter().map(|&g| g * k).collect());
                emit(*s, &|| vec![gy.iter().zip(val(*x)).map(|(&g, &v)| g * v).sum()]);
            }
            Op::Affine(x, scale) => {
                let a = T::from_f64(*scale);
                emit(*x, &|| gy.iter().map(|&g| g * a).collect());
            }
            Op::Sum(x) => {
                emit(*x, &|| vec![gy[0]; val(*x).len()]);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                emit(*x, &|| vec![gy[0] / T::from_f64(n as f64); n]);
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                emit(*x, &|| gy.iter().zip(val(*x)).map(|(&g, &v)| two * g * v).collect());
            }
            Op::Abs(x) => {
                emit(*x, &|| {
                    gy.iter()
                        .zip(val(*x))
                        .map(|(&g, &v)| {
                            if v > T::zero() {
                                g
                            } else if v < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                });
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                let half = T::from_f64(0.5);
                emit(*x, &|| {
                    gy.iter()
                        .zip(y)
                        .map(|(&g, &r)| if r > T::zero() { half * g / r } else { T::zero() })
                        .collect()
                });
            }
            Op::Relu(x) => {
                emit(*x, &|| {
                    gy.iter()
                        .zip(val(*x))
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect()
                });
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                emit(*x, &|| {
                    gy.iter()
                        .zip(val(*x))
                        .map(|(&g, &v)| if v > T::zero() { g } else { s * g })
                        .collect()
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                emit(*x, &|| {
                    gy.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)).collect()
                });
            }
            Op::PadZero { x, pads } => {
                let s = self.nodes[x.0].value.shape();
                emit(*x, &|| {
                    kernels::pad_zero_backward(gy, s[0] * s[1], [s[2], s[3], s[4]], *pads)
                });
            }
            Op::PadReflect { x, pad } => {
                let s = self.nodes[x.0].value.shape();
                emit(*x, &|| {
                    kernels::pad_reflect_backward(gy, s[0] * s[1], [s[2], s[3], s[4]], *pad)
                });
            }
            Op::Conv { x, w, b, geom } => {
                emit(*x, &|| kernels::conv_backward_input(geom, val(*w), gy));
                emit(*w, &|| kernels::conv_backward_weight(geom, val(*x), gy));
                if let Some(b) = b {
                    let vol: usize = geom.output.iter().product();
                    emit(*b, &|| kernels::channel_sum(gy, geom.n, geom.co, vol));
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                // Roles swap: our input is the conv's output, gy is conv-input shaped.
                emit(*x, &|| kernels::conv_forward(geom, gy, val(*w), None));
                emit(*w, &|| kernels::conv_backward_weight(geom, gy, val(*x)));
                if let Some(b) = b {
                    let vol: usize = geom.input.iter().product();
                    emit(*b, &|| kernels::channel_sum(gy, geom.n, geom.ci, vol));
                }
            }
            Op::InstanceNorm { x, gamma, beta, saved } => {
                let s = self.nodes[x.0].value.shape();
                let vol = s[2] * s[3] * s[4];
                if need(*x) || need(*gamma) || need(*beta) {
                    let (dx, dg, db) = kernels::instance_norm_backward(gy, saved, s[0], s[1], vol, val(*gamma));
                    for (v, g) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                        if need(v) {
                            out.push((v, g));
                        }
                    }
                }
            }
            Op::AvgPool2 { x, ext } => {
                let s = self.nodes[x.0].value.shape();
                emit(*x, &|| kernels::avg_pool2_backward(gy, s[0] * s[1], *ext));
            }
            Op::Channel { x, channel } => {
                let s = self.nodes[x.0].value.shape();
                let vol: usize = s[2..].iter().product();
                emit(*x, &|| {
                    let mut g = vec![T::zero(); s.iter().product()];
                    for n in 0..s[0] {
                        let base = (n * s[1] + channel) * vol;
                        g[base..base + vol].copy_from_slice(&gy[n * vol..(n + 1) * vol]);
                    }
                    g
                });
            }
        }
        out
    }
}
