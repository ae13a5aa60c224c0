use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    MaxPool { input: Var, argmax: Vec<usize> },
    Relu { input: Var },
    Linear { input: Var, weight: Var, bias: Var, dims: (usize, usize, usize) },
    Reshape { input: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Orthogonality { a: Var, residual: Vec<T>, d: usize },
    Sum { input: Var },
    Scale { input: Var, factor: T },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    GatherCols { input: Var, cols: Vec<usize> },
    ConcatCols { a: Var, b: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward pass so that [`Tape::backward`] can replay it in
/// reverse. Values are stored without their gradient slot; gradients live
/// in the tape and are read back with [`Tape::grad`].
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut value = value;
        value.zero_grad();
        value.set_requires_grad(needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) call's loss w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grad(v)?;
        Tensor::new(self.shape(v), g.to_vec()).ok()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::Shape(format!("conv2d expects 4-D input and weight, got {xs:?} and {ws:?}")));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d stride must be positive".into()));
        }
        if xs[1] != ws[1] {
            return Err(TensorError::Shape(format!(
                "conv2d input has {} channels but weight {ws:?} expects {}",
                xs[1], ws[1]
            )));
        }
        if bs != [ws[0]] {
            return Err(TensorError::Shape(format!("conv2d bias shape {bs:?} does not match {} output channels", ws[0])));
        }
        let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            h,
            w,
            cout: ws[0],
            kh,
            kw,
            stride,
            padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), &geom);
        let value = Tensor::new(&[geom.n, geom.cout, geom.ho, geom.wo], out)?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, ng))
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize) -> Result<Var, TensorError> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::Shape(format!("maxpool2d expects 4-D input, got {xs:?}")));
        }
        if k == 0 || !xs[2].is_multiple_of(k) || !xs[3].is_multiple_of(k) {
            return Err(TensorError::Shape(format!("maxpool2d window {k} does not divide spatial extents {}x{}", xs[2], xs[3])));
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), xs[0] * xs[1], xs[2], xs[3], k);
        let value = Tensor::new(&[xs[0], xs[1], xs[2] / k, xs[3] / k], out)?;
        let ng = self.needs(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, ng))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let ng = self.needs(input);
        self.push(value, Op::Relu { input }, ng)
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || ws.len() != 2 {
            return Err(TensorError::Shape(format!("linear expects 2-D input and weight, got {xs:?} and {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(TensorError::Shape(format!("linear input width {} does not match weight {ws:?}", xs[1])));
        }
        if bs != [ws[0]] {
            return Err(TensorError::Shape(format!("linear bias shape {bs:?} does not match {} outputs", ws[0])));
        }
        let dims = (xs[0], xs[1], ws[0]);
        let out = kernels::linear_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), dims.0, dims.1, dims.2);
        let value = Tensor::new(&[dims.0, dims.2], out)?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias, dims }, ng))
    }

    /// `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, input: Var) -> Var {
        let xs = self.shape(input);
        let n = xs[0];
        let d: usize = xs[1..].iter().product();
        self.reshape(input, &[n, d]).expect("flatten preserves element count")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(input).reshape(shape)?;
        let ng = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, ng))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 {
            return Err(TensorError::Shape(format!("cross-entropy expects [N,K] logits, got {ls:?}")));
        }
        if labels.len() != ls[0] {
            return Err(TensorError::Shape(format!("{} labels for {} logit rows", labels.len(), ls[0])));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= ls[1]) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: ls[1] });
        }
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits).data(), labels, ls[1]);
        let ng = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }, ng))
    }

    /// `‖I − A·Aᵀ‖²_F` for square `A`.
    pub fn orthogonality_penalty(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(TensorError::Shape(format!("orthogonality penalty needs a square matrix, got {s:?}")));
        }
        let d = s[0];
        let residual = kernels::identity_minus_gram(self.value(a).data(), d);
        let loss = residual.iter().map(|&r| r * r).sum::<T>();
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(loss), Op::Orthogonality { a, residual, d }, ng))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum::<T>();
        let ng = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, ng)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.shape(), x.data().iter().map(|&v| v * factor).collect()).expect("same shape");
        let ng = self.needs(input);
        self.push(value, Op::Scale { input, factor }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, ng))
    }

    fn zip(&self, a: Var, b: Var, op: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::Shape(format!("{op}: {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    /// Selects columns `cols` (in order) of a `[N,K]` matrix.
    pub fn gather_cols(&mut self, input: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("gather_cols expects [N,K], got {s:?}")));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= s[1]) {
            return Err(TensorError::InvalidArgument(format!("column {c} out of range for width {}", s[1])));
        }
        if cols.is_empty() {
            return Err(TensorError::InvalidArgument("gather_cols needs at least one column".into()));
        }
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(s[0] * cols.len());
        for row in x.chunks(s[1]) {
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let value = Tensor::new(&[s[0], cols.len()], data)?;
        let ng = self.needs(input);
        Ok(self.push(value, Op::GatherCols { input, cols: cols.to_vec() }, ng))
    }

    /// `[N,A] ++ [N,B] -> [N,A+B]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(TensorError::Shape(format!("concat_cols: {sa:?} vs {sb:?}")));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(sa[0] * (sa[1] + sb[1]));
        for (ra, rb) in xa.chunks(sa[1]).zip(xb.chunks(sb[1])) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let value = Tensor::new(&[sa[0], sa[1] + sb[1]], data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols { a, b }, ng))
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar `loss`. Gradients of earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else { continue };
            let contributions = self.node_backward(i, &gout);
            self.grads[i] = Some(gout);
            for (v, g) in contributions {
                self.accumulate(v, g);
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, gout: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        let data = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    data(*input),
                    data(*weight),
                    gout,
                    geom,
                    self.needs(*input),
                    self.needs(*weight),
                    self.needs(*bias),
                );
                out.extend(dx.map(|g| (*input, g)));
                out.extend(dw.map(|g| (*weight, g)));
                out.extend(db.map(|g| (*bias, g)));
            }
            Op::MaxPool { input, argmax } => {
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); data(*input).len()];
                    for (&idx, &g) in argmax.iter().zip(gout) {
                        dx[idx] += g;
                    }
                    out.push((*input, dx));
                }
            }
            Op::Relu { input } => {
                if self.needs(*input) {
                    let dx = data(*input).iter().zip(gout).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect();
                    out.push((*input, dx));
                }
            }
            Op::Linear { input, weight, bias, dims } => {
                let (dx, dw, db) = kernels::linear_backward(
                    data(*input),
                    data(*weight),
                    gout,
                    *dims,
                    self.needs(*input),
                    self.needs(*weight),
                    self.needs(*bias),
                );
                out.extend(dx.map(|g| (*input, g)));
                out.extend(dw.map(|g| (*weight, g)));
                out.extend(db.map(|g| (*bias, g)));
            }
            Op::Reshape { input } => {
                if self.needs(*input) {
                    out.push((*input, gout.to_vec()));
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                if self.needs(*logits) {
                    let k = probs.len() / labels.len();
                    let scale = gout[0] / T::of(labels.len() as f64);
                    let mut d = probs.clone();
                    for (row, &l) in d.chunks_mut(k).zip(labels) {
                        row[l] -= T::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    out.push((*logits, d));
                }
            }
            Op::Orthogonality { a, residual, d } => {
                if self.needs(*a) {
                    // dL/dA = -4 (I - AAᵀ) A, residual is symmetric.
                    let mut g = vec![T::zero(); d * d];
                    super::scalar::gemm(
                        super::scalar::MatRef::new(residual, *d, *d),
                        super::scalar::MatRef::new(data(*a), *d, *d),
                        &mut g,
                        false,
                    );
                    let f = T::of(-4.0) * gout[0];
                    g.iter_mut().for_each(|v| *v *= f);
                    out.push((*a, g));
                }
            }
            Op::Sum { input } => {
                if self.needs(*input) {
                    out.push((*input, vec![gout[0]; data(*input).len()]));
                }
            }
            Op::Scale { input, factor } => {
                if self.needs(*input) {
                    out.push((*input, gout.iter().map(|&g| g * *factor).collect()));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((*a, gout.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, gout.to_vec()));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    out.push((*a, gout.iter().zip(data(*b)).map(|(&g, &y)| g * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, gout.iter().zip(data(*a)).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::GatherCols { input, cols } => {
                if self.needs(*input) {
                    let k = self.shape(*input)[1];
                    let mut dx = vec![T::zero(); data(*input).len()];
                    for (drow, grow) in dx.chunks_mut(k).zip(gout.chunks(cols.len())) {
                        for (&c, &g) in cols.iter().zip(grow) {
                            drow[c] += g;
                        }
                    }
                    out.push((*input, dx));
                }
            }
            Op::ConcatCols { a, b } => {
                let (wa, wb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let rows = gout.chunks(wa + wb);
                if self.needs(*a) {
                    out.push((*a, rows.clone().flat_map(|r| r[..wa].iter().copied()).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, rows.flat_map(|r| r[wa..].iter().copied()).collect()));
                }
            }
        }
        out
    }
}
