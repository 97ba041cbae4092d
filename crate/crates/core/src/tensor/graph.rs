use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeom, ResampleMode, ResamplePlan};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv { x: Var, k: Var, geom: ConvGeom },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    AvgPoolChannels { x: Var, group: usize },
    Resample { x: Var, plan: ResamplePlan },
    SpatialMean { x: Var, hw: usize },
    IndexAxis0 { x: Var, index: usize },
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MatVec { x: Var, w: Var },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients keyed by parameter name, one entry per parameter reached from
/// the loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap<T> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.grads.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Grad-enabled leaf. Registering the same name twice returns the
    /// original node, so shared weights accumulate into one gradient.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        self.params.insert(name.to_string(), v);
        v
    }

    fn conv(&mut self, x: Var, k: Var, stride: usize, pad_t: usize, pad_s: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(k);
        let (xs4, ks5) = match (xs.len(), ks.len()) {
            (4, 5) => ([xs[0], xs[1], xs[2], xs[3]], [ks[0], ks[1], ks[2], ks[3], ks[4]]),
            (3, 4) => ([1, xs[0], xs[1], xs[2]], [1, ks[0], ks[1], ks[2], ks[3]]),
            _ => {
                return Err(Error::config(format!(
                    "convolution rank mismatch: input {xs:?}, kernel {ks:?}"
                )))
            }
        };
        let geom = ConvGeom::new(xs4, ks5, stride, pad_t, pad_s)?;
        let out = kernels::conv_forward(&geom, self.value(x).data(), self.value(k).data());
        let shape = if xs.len() == 3 {
            vec![geom.oh, geom.ow, geom.co]
        } else {
            geom.out_shape().to_vec()
        };
        let needs = self.needs(&[x, k]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv { x, k, geom }, needs))
    }

    /// `H×W×Cin` input, `k×k×Cin×Cout` kernel.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        if self.shape(x).len() != 3 || self.shape(k).len() != 4 {
            return Err(Error::config(format!(
                "conv2d expects H×W×C input and k×k×Cin×Cout kernel, got {:?} and {:?}",
                self.shape(x),
                self.shape(k)
            )));
        }
        self.conv(x, k, stride, 0, pad)
    }

    /// `T×H×W×Cin` input, `w_t×k×k×Cin×Cout` kernel; temporal stride 1 and
    /// temporal zero padding `(w_t-1)/2`, so `T` is preserved.
    pub fn conv3d(&mut self, x: Var, k: Var, spatial_stride: usize, spatial_pad: usize) -> Result<Var> {
        if self.shape(x).len() != 4 || self.shape(k).len() != 5 {
            return Err(Error::config(format!(
                "conv3d expects T×H×W×C input and w_t×k×k×Cin×Cout kernel, got {:?} and {:?}",
                self.shape(x),
                self.shape(k)
            )));
        }
        let wt = self.shape(k)[0];
        if wt.is_multiple_of(2) {
            return Err(Error::config(format!(
                "temporal kernel size must be odd, got {wt}"
            )));
        }
        self.conv(x, k, spatial_stride, (wt - 1) / 2, spatial_pad)
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.shape(x).last().expect("non-empty shape");
        if self.value(b).numel() != c {
            return Err(Error::config(format!(
                "bias of {} elements for {c} channels",
                self.value(b).numel()
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let needs = self.needs(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, needs))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let needs = self.needs(&[a]);
        self.push(out, op, needs)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    /// Output channel `m` is the mean of input channels `[m·g, (m+1)·g)`.
    pub fn avg_pool_channels(&mut self, x: Var, group: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().expect("non-empty shape");
        if group == 0 || !c.is_multiple_of(group) {
            return Err(Error::config(format!(
                "channel group {group} does not divide {c} channels"
            )));
        }
        let inv = T::from_f64(1.0 / group as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(group)
            .map(|g| g.iter().copied().sum::<T>() * inv)
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = c / group;
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::AvgPoolChannels { x, group },
            needs,
        ))
    }

    /// Channel-independent spatial interpolation over the `h×w` axes.
    pub fn resample(&mut self, x: Var, target: (usize, usize), mode: ResampleMode) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let plan = ResamplePlan::new(&shape, target, mode)?;
        let data = plan.forward(self.value(x).data());
        let n = shape.len();
        let mut out_shape = shape;
        out_shape[n - 3] = target.0;
        out_shape[n - 2] = target.1;
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Resample { x, plan }, needs))
    }

    /// Mean over the two axes preceding the channel axis: `[.., h, w, c] -> [.., c]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = shape.len();
        if n < 3 {
            return Err(Error::config(format!("spatial_mean needs rank ≥ 3, got {shape:?}")));
        }
        let (hw, c) = (shape[n - 3] * shape[n - 2], shape[n - 1]);
        let inv = T::from_f64(1.0 / hw as f64);
        let mut data = Vec::with_capacity(self.value(x).numel() / hw);
        for block in self.value(x).data().chunks_exact(hw * c) {
            let mut acc = vec![T::zero(); c];
            for px in block.chunks_exact(c) {
                for (a, &v) in acc.iter_mut().zip(px) {
                    *a += v;
                }
            }
            data.extend(acc.into_iter().map(|a| a * inv));
        }
        let mut out_shape = shape[..n - 3].to_vec();
        out_shape.push(c);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::SpatialMean { x, hw }, needs))
    }

    /// Slice along the leading axis (e.g. one frame of a clip).
    pub fn index_axis0(&mut self, x: Var, index: usize) -> Result<Var> {
        let out = self.value(x).index_axis0(index)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::IndexAxis0 { x, index }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::usage("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        let needs = self.needs(parts);
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Concat(parts.to_vec()), needs))
    }

    /// Contiguous range of the flattened input.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x).data();
        if len == 0 || start + len > src.len() {
            return Err(Error::config(format!(
                "slice [{start}, {}) out of range for {} elements",
                start + len,
                src.len()
            )));
        }
        let data = src[start..start + len].to_vec();
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(vec![len], data), Op::Slice { x, start }, needs))
    }

    /// `x` (any shape with `n` elements) times `w` (`n×m`) gives an `m`-vector.
    pub fn matvec(&mut self, x: Var, w: Var) -> Result<Var> {
        let ws = self.shape(w);
        let n = self.value(x).numel();
        if ws.len() != 2 || ws[0] != n {
            return Err(Error::config(format!(
                "matvec: {n}-vector against weight {ws:?}"
            )));
        }
        let m = ws[1];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); m];
        for (i, &xi) in xv.iter().enumerate() {
            kernels::axpy(&mut out, xi, &wv[i * m..(i + 1) * m]);
        }
        let needs = self.needs(&[x, w]);
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::MatVec { x, w }, needs))
    }

    /// `x·W + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matvec(x, w)?;
        if self.shape(b) != self.shape(y) {
            return Err(Error::config(format!(
                "dense bias shape {:?} for output {:?}",
                self.shape(b),
                self.shape(y)
            )));
        }
        self.add(y, b)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let s: T = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = s / T::from_f64(va.len() as f64);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(out), Op::Mse(a, b), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(name) = &node.param {
                out.insert(name.clone(), g);
                continue;
            }
            self.backprop_node(node, g, &mut grads);
        }
        Ok(GradientMap { grads: out })
    }

    fn backprop_node(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let shaped = |v: Var, data: Vec<T>| Tensor::from_parts(val(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, k, geom } => {
                let want_x = self.nodes[x.0].needs_grad;
                let want_k = self.nodes[k.0].needs_grad;
                let (gx, gk) = kernels::conv_backward(
                    geom,
                    val(*x).data(),
                    val(*k).data(),
                    g.data(),
                    want_x,
                    want_k,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, shaped(*x, gx));
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, *k, shaped(*k, gk));
                }
            }
            Op::AddBias { x, b } => {
                let c = val(*b).numel();
                let mut gb = vec![T::zero(); c];
                for row in g.data().chunks_exact(c) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                self.accumulate(grads, *b, shaped(*b, gb));
                self.accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, g.map(|v| -v));
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = g.data().iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *a, shaped(*a, ga));
                self.accumulate(grads, *b, shaped(*b, gb));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, shaped(*a, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, shaped(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *a, shaped(*a, d));
            }
            Op::AvgPoolChannels { x, group } => {
                let inv = T::from_f64(1.0 / *group as f64);
                let d = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, *group))
                    .collect();
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::Resample { x, plan } => {
                let d = plan.backward(g.data());
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::SpatialMean { x, hw } => {
                let c = *node.value.shape().last().unwrap();
                let inv = T::from_f64(1.0 / *hw as f64);
                let mut d = Vec::with_capacity(val(*x).numel());
                for gc in g.data().chunks_exact(c) {
                    for _ in 0..*hw {
                        d.extend(gc.iter().map(|&v| v * inv));
                    }
                }
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::IndexAxis0 { x, index } => {
                let inner = g.numel();
                let mut d = vec![T::zero(); val(*x).numel()];
                d[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::Reshape(x) => {
                let d = g.into_data();
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).numel();
                    let d = g.data()[off..off + n].to_vec();
                    off += n;
                    self.accumulate(grads, p, shaped(p, d));
                }
            }
            Op::Slice { x, start } => {
                let mut d = vec![T::zero(); val(*x).numel()];
                d[*start..*start + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *x, shaped(*x, d));
            }
            Op::MatVec { x, w } => {
                let xv = val(*x).data();
                let wv = val(*w).data();
                let m = g.numel();
                if self.nodes[x.0].needs_grad {
                    let gx = (0..xv.len())
                        .map(|i| kernels::dot(&wv[i * m..(i + 1) * m], g.data()))
                        .collect();
                    self.accumulate(grads, *x, shaped(*x, gx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut gw = vec![T::zero(); wv.len()];
                    for (i, &xi) in xv.iter().enumerate() {
                        kernels::axpy(&mut gw[i * m..(i + 1) * m], xi, g.data());
                    }
                    self.accumulate(grads, *w, shaped(*w, gw));
                }
            }
            Op::Mse(a, b) => {
                let va = val(*a).data();
                let vb = val(*b).data();
                let k = g.data()[0] * T::from_f64(2.0 / va.len() as f64);
                let diff: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| (x - y) * k).collect();
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, shaped(*b, diff.iter().map(|&v| -v).collect()));
                }
                self.accumulate(grads, *a, shaped(*a, diff));
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                let n = val(*a).numel();
                self.accumulate(grads, *a, shaped(*a, vec![gv; n]));
            }
        }
    }
}
