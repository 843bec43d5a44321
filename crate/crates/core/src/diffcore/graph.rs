use super::{DiffError, Param, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// [m,n] + row [n], broadcast over rows.
    AddRow(NodeId, NodeId),
    /// [m,n] * row [n], broadcast over rows.
    MulRow(NodeId, NodeId),
    /// [m,n] - col [m], broadcast over columns.
    SubCol(NodeId, NodeId),
    /// x - s where s is a single-element node, broadcast everywhere.
    SubScalarNode(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    /// [n,c,h,w] + bias [c], broadcast over channels.
    AddChan(NodeId, NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Row sums of a [m,n] matrix -> [m].
    SumRows(NodeId),
    /// Pick one column per row -> [m].
    GatherCols(NodeId, Vec<usize>),
    Reshape(NodeId),
    Clamp(NodeId, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager Wengert tape: every operation computes its value immediately and
/// records itself, so nodes are already in topological order and a single
/// reverse sweep visits each exactly once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    tangents: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        self.tangents.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn tangent(&self, id: NodeId) -> Option<&[f64]> {
        self.tangents[id.0].as_deref()
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf initialized from a parameter's current value.
    pub fn param(&mut self, p: &Param) -> NodeId {
        self.push(p.value.clone(), Op::Leaf, true)
    }

    /// Trainable leaf from a raw tensor (used by tests and optimizers).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::ShapeMismatch {
                op: name,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), req))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), req))
    }

    fn check_row_broadcast(
        &self,
        name: &'static str,
        mat: NodeId,
        row: NodeId,
    ) -> Result<(usize, usize), DiffError> {
        let ms = self.value(mat).shape();
        let rs = self.value(row).shape();
        if ms.len() != 2 || rs.len() != 1 || ms[1] != rs[0] {
            return Err(DiffError::ShapeMismatch {
                op: name,
                lhs: ms.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        Ok((ms[0], ms[1]))
    }

    pub fn add_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.check_row_broadcast("add_row", mat, row)?;
        let mut data = self.value(mat).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        let req = self.requires(mat) || self.requires(row);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(mat, row), req))
    }

    pub fn mul_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.check_row_broadcast("mul_row", mat, row)?;
        let mut data = self.value(mat).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= r[j];
            }
        }
        let req = self.requires(mat) || self.requires(row);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MulRow(mat, row), req))
    }

    pub fn sub_col(&mut self, mat: NodeId, col: NodeId) -> Result<NodeId, DiffError> {
        let ms = self.value(mat).shape().to_vec();
        let cs = self.value(col).shape();
        if ms.len() != 2 || cs.len() != 1 || ms[0] != cs[0] {
            return Err(DiffError::ShapeMismatch {
                op: "sub_col",
                lhs: ms,
                rhs: cs.to_vec(),
            });
        }
        let (m, n) = (ms[0], ms[1]);
        let mut data = self.value(mat).data().to_vec();
        let c = self.value(col).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] -= c[i];
            }
        }
        let req = self.requires(mat) || self.requires(col);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SubCol(mat, col), req))
    }

    pub fn sub_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        if self.value(s).numel() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "sub_scalar_node",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).item();
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v - sv).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x) || self.requires(s);
        Ok(self.push(Tensor::new(shape, data)?, Op::SubScalarNode(x, s), req))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale(x, c), req)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v + c).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::AddScalar(x), req)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let asx = self.value(a).shape().to_vec();
        let bsx = self.value(b).shape().to_vec();
        if asx.len() != 2 || bsx.len() != 2 || asx[1] != bsx[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: asx,
                rhs: bsx,
            });
        }
        let (m, k, n) = (asx[0], asx[1], bsx[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), req))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, DiffError> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || stride == 0 {
            return Err(DiffError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, _, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(DiffError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let out = conv2d_raw(
            self.value(input).data(),
            self.value(kernel).data(),
            (n, c, h, w),
            (oc, kh, kw),
            stride,
            pad,
        );
        let req = self.requires(input) || self.requires(kernel);
        Ok(self.push(
            Tensor::new(vec![n, oc, oh, ow], out)?,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
            req,
        ))
    }

    pub fn add_chan(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, DiffError> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape();
        if xs.len() != 4 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(DiffError::ShapeMismatch {
                op: "add_chan",
                lhs: xs,
                rhs: bs.to_vec(),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        let plane = h * w;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for p in 0..plane {
                    data[base + p] += b[ci];
                }
            }
        }
        let req = self.requires(x) || self.requires(bias);
        Ok(self.push(Tensor::new(xs, data)?, Op::AddChan(x, bias), req))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| f(*v)).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data).unwrap(), op, req)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(
            x,
            Op::LeakyRelu(x, slope),
            |v| if v > 0.0 { v } else { slope * v },
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Natural log. Errors on non-positive input so missing clamps surface
    /// immediately instead of producing NaN downstream.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        if let Some(&bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return Err(DiffError::LogNonPositive(bad));
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(total), Op::Sum(x), req)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let total: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(total / n), Op::Mean(x), req)
    }

    pub fn sum_rows(&mut self, mat: NodeId) -> Result<NodeId, DiffError> {
        let ms = self.value(mat).shape().to_vec();
        if ms.len() != 2 {
            return Err(DiffError::ShapeMismatch {
                op: "sum_rows",
                lhs: ms,
                rhs: vec![],
            });
        }
        let (m, n) = (ms[0], ms[1]);
        let d = self.value(mat).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = d[i * n..(i + 1) * n].iter().sum();
        }
        let req = self.requires(mat);
        Ok(self.push(Tensor::vector(out), Op::SumRows(mat), req))
    }

    pub fn gather_cols(&mut self, mat: NodeId, idx: &[usize]) -> Result<NodeId, DiffError> {
        let ms = self.value(mat).shape().to_vec();
        if ms.len() != 2 || idx.len() != ms[0] || idx.iter().any(|&j| j >= ms[1]) {
            return Err(DiffError::ShapeMismatch {
                op: "gather_cols",
                lhs: ms,
                rhs: vec![idx.len()],
            });
        }
        let n = ms[1];
        let d = self.value(mat).data();
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| d[i * n + j]).collect();
        let req = self.requires(mat);
        Ok(self.push(Tensor::vector(out), Op::GatherCols(mat, idx.to_vec()), req))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, DiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).data().to_vec();
        let req = self.requires(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(x), req))
    }

    /// Reverse sweep from a scalar loss; gradients of earlier backward calls
    /// on this graph are discarded first.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), DiffError> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Vector-Jacobian product: seeds `d(seed · node)/d(leaves)`.
    pub fn backward_seeded(&mut self, node: NodeId, seed: &[f64]) -> Result<(), DiffError> {
        if seed.len() != self.value(node).numel() {
            return Err(DiffError::ShapeMismatch {
                op: "backward_seeded",
                lhs: self.value(node).shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.ensure_grad(node);
        self.grads[node.0].as_mut().unwrap().copy_from_slice(seed);

        for i in (0..=node.0).rev() {
            if !self.nodes[i].requires_grad || self.grads[i].is_none() {
                continue;
            }
            let gout = self.grads[i].take().unwrap();
            self.propagate(i, &gout)?;
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: NodeId) {
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(vec![0.0; self.nodes[id.0].value.numel()]);
        }
    }

    fn add_grad(&mut self, id: NodeId, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        self.ensure_grad(id);
        contrib(self.grads[id.0].as_mut().unwrap());
    }

    fn propagate(&mut self, i: usize, gout: &[f64]) -> Result<(), DiffError> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(a, |g| axpy(g, 1.0, gout));
                self.add_grad(b, |g| axpy(g, 1.0, gout));
            }
            Op::Sub(a, b) => {
                self.add_grad(a, |g| axpy(g, 1.0, gout));
                self.add_grad(b, |g| axpy(g, -1.0, gout));
            }
            Op::Mul(a, b) => {
                let bd = self.nodes[b.0].value.data().to_vec();
                self.add_grad(a, |g| {
                    for (gi, (go, bv)) in g.iter_mut().zip(gout.iter().zip(&bd)) {
                        *gi += go * bv;
                    }
                });
                let ad = self.nodes[a.0].value.data().to_vec();
                self.add_grad(b, |g| {
                    for (gi, (go, av)) in g.iter_mut().zip(gout.iter().zip(&ad)) {
                        *gi += go * av;
                    }
                });
            }
            Op::AddRow(mat, row) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                self.add_grad(mat, |g| axpy(g, 1.0, gout));
                self.add_grad(row, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j] += gout[i * n + j];
                        }
                    }
                });
            }
            Op::MulRow(mat, row) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                let rd = self.nodes[row.0].value.data().to_vec();
                self.add_grad(mat, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[i * n + j] * rd[j];
                        }
                    }
                });
                let md = self.nodes[mat.0].value.data().to_vec();
                self.add_grad(row, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j] += gout[i * n + j] * md[i * n + j];
                        }
                    }
                });
            }
            Op::SubCol(mat, col) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                self.add_grad(mat, |g| axpy(g, 1.0, gout));
                self.add_grad(col, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i] -= gout[i * n + j];
                        }
                    }
                });
            }
            Op::SubScalarNode(x, s) => {
                self.add_grad(x, |g| axpy(g, 1.0, gout));
                let total: f64 = gout.iter().sum();
                self.add_grad(s, |g| g[0] -= total);
            }
            Op::Scale(x, c) => self.add_grad(x, |g| axpy(g, c, gout)),
            Op::AddScalar(x) => self.add_grad(x, |g| axpy(g, 1.0, gout)),
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (_, n) = self.nodes[b.0].value.dims2();
                let bd = self.nodes[b.0].value.data().to_vec();
                self.add_grad(a, |g| {
                    // dA[i,kk] += sum_j gout[i,j] * B[kk,j]
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i * n + j] * bd[kk * n + j];
                            }
                            g[i * k + kk] += acc;
                        }
                    }
                });
                let ad = self.nodes[a.0].value.data().to_vec();
                self.add_grad(b, |g| {
                    // dB[kk,j] += sum_i A[i,kk] * gout[i,j]
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av != 0.0 {
                                for j in 0..n {
                                    g[kk * n + j] += av * gout[i * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let xs = self.nodes[input.0].value.shape().to_vec();
                let ks = self.nodes[kernel.0].value.shape().to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oc, kh, kw) = (ks[0], ks[2], ks[3]);
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (w + 2 * pad - kw) / stride + 1;
                let kd = self.nodes[kernel.0].value.data().to_vec();
                self.add_grad(input, |g| {
                    conv2d_input_grad(g, gout, &kd, (n, c, h, w), (oc, kh, kw, oh, ow), stride, pad);
                });
                let xd = self.nodes[input.0].value.data().to_vec();
                self.add_grad(kernel, |g| {
                    conv2d_kernel_grad(g, gout, &xd, (n, c, h, w), (oc, kh, kw, oh, ow), stride, pad);
                });
            }
            Op::AddChan(x, bias) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                self.add_grad(x, |g| axpy(g, 1.0, gout));
                self.add_grad(bias, |g| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let mut acc = 0.0;
                            for p in 0..plane {
                                acc += gout[base + p];
                            }
                            g[ci] += acc;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, xv)) in g.iter_mut().zip(gout.iter().zip(&xd)) {
                        if *xv > 0.0 {
                            *gi += go;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, xv)) in g.iter_mut().zip(gout.iter().zip(&xd)) {
                        *gi += go * if *xv > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::Tanh(x) => {
                let yd = self.nodes[i].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, yv)) in g.iter_mut().zip(gout.iter().zip(&yd)) {
                        *gi += go * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = self.nodes[i].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, yv)) in g.iter_mut().zip(gout.iter().zip(&yd)) {
                        *gi += go * yv * (1.0 - yv);
                    }
                });
            }
            Op::Exp(x) => {
                let yd = self.nodes[i].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, yv)) in g.iter_mut().zip(gout.iter().zip(&yd)) {
                        *gi += go * yv;
                    }
                });
            }
            Op::Log(x) => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, xv)) in g.iter_mut().zip(gout.iter().zip(&xd)) {
                        *gi += go / xv;
                    }
                });
            }
            Op::Sum(x) => {
                let s = gout[0];
                self.add_grad(x, |g| {
                    for gi in g.iter_mut() {
                        *gi += s;
                    }
                });
            }
            Op::Mean(x) => {
                let nel = self.nodes[x.0].value.numel() as f64;
                let s = gout[0] / nel;
                self.add_grad(x, |g| {
                    for gi in g.iter_mut() {
                        *gi += s;
                    }
                });
            }
            Op::SumRows(mat) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                self.add_grad(mat, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[i];
                        }
                    }
                });
            }
            Op::GatherCols(mat, idx) => {
                let (_, n) = self.nodes[mat.0].value.dims2();
                self.add_grad(mat, |g| {
                    for (i, &j) in idx.iter().enumerate() {
                        g[i * n + j] += gout[i];
                    }
                });
            }
            Op::Reshape(x) => self.add_grad(x, |g| axpy(g, 1.0, gout)),
            Op::Clamp(x, lo, hi) => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.add_grad(x, |g| {
                    for (gi, (go, xv)) in g.iter_mut().zip(gout.iter().zip(&xd)) {
                        if *xv > lo && *xv < hi {
                            *gi += go;
                        }
                    }
                });
            }
        }
        Ok(())
    }

    /// Forward-mode sweep: seeds tangents on leaves and pushes directional
    /// derivatives through every recorded op (the R-operator).
    pub fn jvp(&mut self, seeds: &[(NodeId, &[f64])]) -> Result<(), DiffError> {
        for t in self.tangents.iter_mut() {
            *t = None;
        }
        for (id, seed) in seeds {
            if seed.len() != self.nodes[id.0].value.numel() {
                return Err(DiffError::ShapeMismatch {
                    op: "jvp",
                    lhs: self.nodes[id.0].value.shape().to_vec(),
                    rhs: vec![seed.len()],
                });
            }
            self.tangents[id.0] = Some(seed.to_vec());
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.tangents[i].is_none() {
                    self.tangents[i] = Some(vec![0.0; self.nodes[i].value.numel()]);
                }
                continue;
            }
            let t = self.tangent_of(i);
            self.tangents[i] = Some(t);
        }
        Ok(())
    }

    fn tin(&self, id: NodeId) -> &[f64] {
        self.tangents[id.0].as_deref().unwrap()
    }

    fn tangent_of(&self, i: usize) -> Vec<f64> {
        let numel = self.nodes[i].value.numel();
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => zip_map(self.tin(*a), self.tin(*b), |x, y| x + y),
            Op::Sub(a, b) => zip_map(self.tin(*a), self.tin(*b), |x, y| x - y),
            Op::Mul(a, b) => {
                let (ad, bd) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let (ta, tb) = (self.tin(*a), self.tin(*b));
                (0..numel).map(|p| ta[p] * bd[p] + ad[p] * tb[p]).collect()
            }
            Op::AddRow(mat, row) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                let (tm, tr) = (self.tin(*mat), self.tin(*row));
                let mut out = tm.to_vec();
                for i2 in 0..m {
                    for j in 0..n {
                        out[i2 * n + j] += tr[j];
                    }
                }
                out
            }
            Op::MulRow(mat, row) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                let (md, rd) = (self.nodes[mat.0].value.data(), self.nodes[row.0].value.data());
                let (tm, tr) = (self.tin(*mat), self.tin(*row));
                let mut out = vec![0.0; numel];
                for i2 in 0..m {
                    for j in 0..n {
                        out[i2 * n + j] = tm[i2 * n + j] * rd[j] + md[i2 * n + j] * tr[j];
                    }
                }
                out
            }
            Op::SubCol(mat, col) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                let (tm, tc) = (self.tin(*mat), self.tin(*col));
                let mut out = tm.to_vec();
                for i2 in 0..m {
                    for j in 0..n {
                        out[i2 * n + j] -= tc[i2];
                    }
                }
                out
            }
            Op::SubScalarNode(x, s) => {
                let ts = self.tin(*s)[0];
                self.tin(*x).iter().map(|v| v - ts).collect()
            }
            Op::Scale(x, c) => self.tin(*x).iter().map(|v| v * c).collect(),
            Op::AddScalar(x) => self.tin(*x).to_vec(),
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (_, n) = self.nodes[b.0].value.dims2();
                let mut out = matmul_raw(self.tin(*a), self.nodes[b.0].value.data(), m, k, n);
                let xb = matmul_raw(self.nodes[a.0].value.data(), self.tin(*b), m, k, n);
                for (o, v) in out.iter_mut().zip(xb) {
                    *o += v;
                }
                out
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let xs = self.nodes[input.0].value.shape();
                let ks = self.nodes[kernel.0].value.shape();
                let dims_x = (xs[0], xs[1], xs[2], xs[3]);
                let dims_k = (ks[0], ks[2], ks[3]);
                let mut out = conv2d_raw(
                    self.tin(*input),
                    self.nodes[kernel.0].value.data(),
                    dims_x,
                    dims_k,
                    *stride,
                    *pad,
                );
                let xk = conv2d_raw(
                    self.nodes[input.0].value.data(),
                    self.tin(*kernel),
                    dims_x,
                    dims_k,
                    *stride,
                    *pad,
                );
                for (o, v) in out.iter_mut().zip(xk) {
                    *o += v;
                }
                out
            }
            Op::AddChan(x, bias) => {
                let xs = self.nodes[x.0].value.shape();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let (tx, tb) = (self.tin(*x), self.tin(*bias));
                let mut out = tx.to_vec();
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for p in 0..plane {
                            out[base + p] += tb[ci];
                        }
                    }
                }
                out
            }
            Op::Relu(x) => {
                let xd = self.nodes[x.0].value.data();
                zip_map(self.tin(*x), xd, |t, v| if v > 0.0 { t } else { 0.0 })
            }
            Op::LeakyRelu(x, slope) => {
                let xd = self.nodes[x.0].value.data();
                let s = *slope;
                zip_map(self.tin(*x), xd, move |t, v| if v > 0.0 { t } else { s * t })
            }
            Op::Tanh(x) => {
                let yd = self.nodes[i].value.data();
                zip_map(self.tin(*x), yd, |t, y| t * (1.0 - y * y))
            }
            Op::Sigmoid(x) => {
                let yd = self.nodes[i].value.data();
                zip_map(self.tin(*x), yd, |t, y| t * y * (1.0 - y))
            }
            Op::Exp(x) => {
                let yd = self.nodes[i].value.data();
                zip_map(self.tin(*x), yd, |t, y| t * y)
            }
            Op::Log(x) => {
                let xd = self.nodes[x.0].value.data();
                zip_map(self.tin(*x), xd, |t, v| t / v)
            }
            Op::Sum(x) => vec![self.tin(*x).iter().sum()],
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                vec![self.tin(*x).iter().sum::<f64>() / n]
            }
            Op::SumRows(mat) => {
                let (m, n) = self.nodes[mat.0].value.dims2();
                let tm = self.tin(*mat);
                (0..m).map(|r| tm[r * n..(r + 1) * n].iter().sum()).collect()
            }
            Op::GatherCols(mat, idx) => {
                let (_, n) = self.nodes[mat.0].value.dims2();
                let tm = self.tin(*mat);
                idx.iter().enumerate().map(|(r, &j)| tm[r * n + j]).collect()
            }
            Op::Reshape(x) => self.tin(*x).to_vec(),
            Op::Clamp(x, lo, hi) => {
                let xd = self.nodes[x.0].value.data();
                let (lo, hi) = (*lo, *hi);
                zip_map(self.tin(*x), xd, move |t, v| {
                    if v > lo && v < hi {
                        t
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    x: &[f64],
    k: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (oc, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for khi in 0..kh {
                            let ih = (ohi * stride + khi) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = ((ni * c + ci) * h + ih as usize) * w;
                            let krow = ((oci * c + ci) * kh + khi) * kw;
                            for kwi in 0..kw {
                                let iw = (owi * stride + kwi) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += x[xrow + iw as usize] * k[krow + kwi];
                            }
                        }
                    }
                    out[((ni * oc + oci) * oh + ohi) * ow + owi] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_input_grad(
    gx: &mut [f64],
    gout: &[f64],
    k: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (oc, kh, kw, oh, ow): (usize, usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) {
    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let go = gout[((ni * oc + oci) * oh + ohi) * ow + owi];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        for khi in 0..kh {
                            let ih = (ohi * stride + khi) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = ((ni * c + ci) * h + ih as usize) * w;
                            let krow = ((oci * c + ci) * kh + khi) * kw;
                            for kwi in 0..kw {
                                let iw = (owi * stride + kwi) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                gx[xrow + iw as usize] += go * k[krow + kwi];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_kernel_grad(
    gk: &mut [f64],
    gout: &[f64],
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (oc, kh, kw, oh, ow): (usize, usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) {
    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let go = gout[((ni * oc + oci) * oh + ohi) * ow + owi];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        for khi in 0..kh {
                            let ih = (ohi * stride + khi) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = ((ni * c + ci) * h + ih as usize) * w;
                            let krow = ((oci * c + ci) * kh + khi) * kw;
                            for kwi in 0..kw {
                                let iw = (owi * stride + kwi) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                gk[krow + kwi] += go * x[xrow + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
