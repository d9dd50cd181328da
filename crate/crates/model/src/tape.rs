//! Reverse-mode autodiff over a per-step tape.
//!
//! The graph is rebuilt every training step: leaves are inputs or snapshots
//! of named parameters, ops append nodes, and `backward` walks the tape in
//! reverse accumulating exact gradients. Gradients land back in the
//! [`crate::params::ParamStore`] via [`Tape::harvest`].

use crate::params::ParamStore;
use crate::tensor::{accumulate, Tensor};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose2(usize),
    Relu(usize),
    Gelu(usize),
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    MaxPool2(usize),
    AdaptiveAvgPool { x: usize, oh: usize, ow: usize },
    GlobalAvgPool(usize),
    ChannelNorm { x: usize, gain: usize, bias: usize },
    LayerNorm { x: usize, gain: usize, bias: usize },
    Concat(Vec<usize>),
    Rows { table: usize, indices: Vec<usize> },
    RepeatRow { x: usize, n: usize },
    Dropout(usize),
    Reshape(usize),
    ActiveSlotMse { pred: usize, target: Tensor, mask: Tensor },
    RoleWeighted { pred: usize, target: Tensor, mask: Tensor, s: usize, roles: [usize; 3] },
}

struct Node {
    op: Op,
    value: Tensor,
    /// cached forward quantities some backward passes need
    aux: Vec<f64>,
    aux_idx: Vec<usize>,
    param: Option<String>,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.push_full(op, value, Vec::new(), Vec::new(), None)
    }

    fn push_full(
        &mut self,
        op: Op,
        value: Tensor,
        aux: Vec<f64>,
        aux_idx: Vec<usize>,
        param: Option<String>,
    ) -> Var {
        self.nodes.push(Node { op, value, aux, aux_idx, param });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Constant or input leaf; receives a gradient but feeds nothing back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Leaf bound to a named parameter: snapshots its current value and
    /// routes gradients back to it on [`Tape::harvest`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let value = store.get(name).value.clone();
        self.push_full(Op::Leaf, value, Vec::new(), Vec::new(), Some(name.to_string()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "add shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(Op::Add(a.0, b.0), value)
    }

    /// `x [N,D] + bias [D]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (n, d) = self.nodes[x.0].value.dims2();
        assert_eq!(self.nodes[bias.0].value.len(), d, "bias length mismatch");
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..n {
            for j in 0..d {
                out.data[i * d + j] += self.nodes[bias.0].value.data[j];
            }
        }
        self.push(Op::AddBias(x.0, bias.0), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(Op::Sub(a.0, b.0), value)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(Op::MulElem(a.0, b.0), value)
    }

    /// `x [N,D] * v [D]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Var {
        let (n, d) = self.nodes[x.0].value.dims2();
        assert_eq!(self.nodes[v.0].value.len(), d, "row factor length mismatch");
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..n {
            for j in 0..d {
                out.data[i * d + j] *= self.nodes[v.0].value.data[j];
            }
        }
        self.push(Op::MulRow(x.0, v.0), out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = Tensor::new(vx.shape.clone(), vx.data.iter().map(|v| v * c).collect());
        self.push(Op::Scale(x.0, c), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.nodes[a.0].value.dims2();
        let (k2, m) = self.nodes[b.0].value.dims2();
        assert_eq!(k, k2, "matmul inner dims mismatch");
        let va = &self.nodes[a.0].value.data;
        let vb = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = va[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let row = &vb[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, bv) in orow.iter_mut().zip(row) {
                    *o += aip * bv;
                }
            }
        }
        self.push(Op::Matmul(a.0, b.0), Tensor::new(vec![n, m], out))
    }

    pub fn transpose2(&mut self, x: Var) -> Var {
        let (a, b) = self.nodes[x.0].value.dims2();
        let vx = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; a * b];
        for i in 0..a {
            for j in 0..b {
                out[j * a + i] = vx[i * b + j];
            }
        }
        self.push(Op::Transpose2(x.0), Tensor::new(vec![b, a], out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = Tensor::new(vx.shape.clone(), vx.data.iter().map(|v| v.max(0.0)).collect());
        self.push(Op::Relu(x.0), value)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = Tensor::new(vx.shape.clone(), vx.data.iter().map(|&v| gelu(v)).collect());
        self.push(Op::Gelu(x.0), value)
    }

    /// 2-D convolution with replicate padding, NCHW layout.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.nodes[x.0].value.dims4();
        let wt = &self.nodes[w.0].value;
        assert_eq!(wt.shape.len(), 4, "conv weight must be 4-D");
        let (oc, ic, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
        assert_eq!(ic, c, "conv input channels mismatch");
        assert_eq!(self.nodes[b.0].value.len(), oc, "conv bias length mismatch");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let vx = &self.nodes[x.0].value.data;
        let vw = &wt.data;
        let vb = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; n * oc * oh * ow];
        for ni in 0..n {
            for o in 0..oc {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = vb[o];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = clamp_pad(i * stride + ki, pad, h);
                                    let jj = clamp_pad(j * stride + kj, pad, wd);
                                    acc += vx[((ni * c + ci) * h + ii) * wd + jj]
                                        * vw[((o * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((ni * oc + o) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        self.push(
            Op::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad },
            Tensor::new(vec![n, oc, oh, ow], out),
        )
    }

    /// 2×2 max pooling with stride 2 (floor semantics).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.nodes[x.0].value.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let vx = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let idx = base + (2 * i + di) * w + (2 * j + dj);
                                if vx[idx] > best {
                                    best = vx[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = ((ni * c + ci) * oh + i) * ow + j;
                        out[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
        }
        self.push_full(
            Op::MaxPool2(x.0),
            Tensor::new(vec![n, c, oh, ow], out),
            Vec::new(),
            argmax,
            None,
        )
    }

    /// Adaptive average pooling to a fixed output size.
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (n, c, h, w) = self.nodes[x.0].value.dims4();
        let vx = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for i in 0..oh {
                    let (i0, i1) = pool_window(i, oh, h);
                    for j in 0..ow {
                        let (j0, j1) = pool_window(j, ow, w);
                        let mut acc = 0.0;
                        for ii in i0..i1 {
                            for jj in j0..j1 {
                                acc += vx[base + ii * w + jj];
                            }
                        }
                        out[((ni * c + ci) * oh + i) * ow + j] =
                            acc / ((i1 - i0) * (j1 - j0)) as f64;
                    }
                }
            }
        }
        self.push(
            Op::AdaptiveAvgPool { x: x.0, oh, ow },
            Tensor::new(vec![n, c, oh, ow], out),
        )
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.nodes[x.0].value.dims4();
        let vx = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                out[ni * c + ci] = vx[base..base + h * w].iter().sum::<f64>() / (h * w) as f64;
            }
        }
        self.push(Op::GlobalAvgPool(x.0), Tensor::new(vec![n, c], out))
    }

    /// Per-sample, per-channel normalization over the spatial extent with a
    /// learnable per-channel affine.
    pub fn channel_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (n, c, h, w) = self.nodes[x.0].value.dims4();
        let m = h * w;
        assert_eq!(self.nodes[gain.0].value.len(), c);
        assert_eq!(self.nodes[bias.0].value.len(), c);
        let vx = &self.nodes[x.0].value.data;
        let vg = &self.nodes[gain.0].value.data;
        let vb = &self.nodes[bias.0].value.data;
        let mut out = vec![0.0; n * c * m];
        // aux: normalized values followed by per-(n,c) istd
        let mut aux = vec![0.0; n * c * m + n * c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * m;
                let mean = vx[base..base + m].iter().sum::<f64>() / m as f64;
                let var = vx[base..base + m]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / m as f64;
                let istd = 1.0 / (var + NORM_EPS).sqrt();
                aux[n * c * m + ni * c + ci] = istd;
                for k in 0..m {
                    let xn = (vx[base + k] - mean) * istd;
                    aux[base + k] = xn;
                    out[base + k] = vg[ci] * xn + vb[ci];
                }
            }
        }
        self.push_full(
            Op::ChannelNorm { x: x.0, gain: gain.0, bias: bias.0 },
            Tensor::new(vec![n, c, h, w], out),
            aux,
            Vec::new(),
            None,
        )
    }

    /// Per-row normalization over the feature dimension with a learnable
    /// affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (n, d) = self.nodes[x.0].value.dims2();
        assert_eq!(self.nodes[gain.0].value.len(), d);
        assert_eq!(self.nodes[bias.0].value.len(), d);
        let vx = &self.nodes[x.0].value.data;
        let vg = &self.nodes[gain.0].value.data;
        let vb = &self.nodes[bias.0].value.data;
        let mut out = vec![0.0; n * d];
        let mut aux = vec![0.0; n * d + n];
        for i in 0..n {
            let row = &vx[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            aux[n * d + i] = istd;
            for j in 0..d {
                let xn = (row[j] - mean) * istd;
                aux[i * d + j] = xn;
                out[i * d + j] = vg[j] * xn + vb[j];
            }
        }
        self.push_full(
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0 },
            Tensor::new(vec![n, d], out),
            aux,
            Vec::new(),
            None,
        )
    }

    /// Concatenate `[N, D_i]` tensors along the feature dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0].0].value.dims2().0;
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.dims2().1).sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for p in parts {
            let (pn, d) = self.nodes[p.0].value.dims2();
            assert_eq!(pn, n, "concat row mismatch");
            let vp = &self.nodes[p.0].value.data;
            for i in 0..n {
                out[i * total + offset..i * total + offset + d]
                    .copy_from_slice(&vp[i * d..(i + 1) * d]);
            }
            offset += d;
        }
        self.push(
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            Tensor::new(vec![n, total], out),
        )
    }

    /// Gather rows of an embedding table by fixed indices.
    pub fn rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let (v, d) = self.nodes[table.0].value.dims2();
        for &i in indices {
            assert!(i < v, "row index {i} out of range {v}");
        }
        let vt = &self.nodes[table.0].value.data;
        let mut out = vec![0.0; indices.len() * d];
        for (k, &i) in indices.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(&vt[i * d..(i + 1) * d]);
        }
        self.push(
            Op::Rows { table: table.0, indices: indices.to_vec() },
            Tensor::new(vec![indices.len(), d], out),
        )
    }

    /// Broadcast a `[1,D]` row to `[N,D]`.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Var {
        let (one, d) = self.nodes[x.0].value.dims2();
        assert_eq!(one, 1, "repeat_row expects a single row");
        let vx = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            out[i * d..(i + 1) * d].copy_from_slice(vx);
        }
        self.push(Op::RepeatRow { x: x.0, n }, Tensor::new(vec![n, d], out))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// `1/(1-p)`; deterministic given the caller's stream.
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(mask.len(), vx.len(), "dropout mask length mismatch");
        let data = vx.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(vx.shape.clone(), data);
        self.push_full(Op::Dropout(x.0), value, mask, Vec::new(), None)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(shape.iter().product::<usize>(), vx.len(), "reshape size mismatch");
        let value = Tensor::new(shape, vx.data.clone());
        self.push(Op::Reshape(x.0), value)
    }

    /// Active-slot mean squared error: squared error summed over active
    /// slots, divided by the total active-slot count in the batch.
    pub fn active_slot_mse(
        &mut self,
        pred: Var,
        target: Tensor,
        mask: Tensor,
    ) -> Result<Var, String> {
        let vp = &self.nodes[pred.0].value;
        assert!(vp.same_shape(&target) && vp.same_shape(&mask), "loss shape mismatch");
        let z: f64 = mask.data.iter().sum();
        if z == 0.0 {
            return Err("active-slot loss: no active slots in batch".into());
        }
        let mut acc = 0.0;
        for k in 0..vp.len() {
            let e = vp.data[k] - target.data[k];
            acc += mask.data[k] * e * e;
        }
        let value = Tensor::scalar(acc / z);
        Ok(self.push(Op::ActiveSlotMse { pred: pred.0, target, mask }, value))
    }

    /// Homoscedastic role-weighted loss
    /// `(1/Z) sum[ 0.5*exp(-s_role)*err^2 + 0.5*s_role ]` over active slots;
    /// `s` is the trainable per-role log-variance vector and `roles[j]`
    /// indexes it for slot `j`.
    pub fn role_weighted_loss(
        &mut self,
        pred: Var,
        target: Tensor,
        mask: Tensor,
        s: Var,
        roles: [usize; 3],
    ) -> Result<Var, String> {
        let vp = &self.nodes[pred.0].value;
        assert!(vp.same_shape(&target) && vp.same_shape(&mask), "loss shape mismatch");
        let (n, d) = vp.dims2();
        assert_eq!(d, 3, "role-weighted loss expects 3 slots");
        let z: f64 = mask.data.iter().sum();
        if z == 0.0 {
            return Err("role-weighted loss: no active slots in batch".into());
        }
        let vs = &self.nodes[s.0].value.data;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..3 {
                let k = i * 3 + j;
                if mask.data[k] == 0.0 {
                    continue;
                }
                let e = vp.data[k] - target.data[k];
                let sr = vs[roles[j]];
                acc += mask.data[k] * (0.5 * (-sr).exp() * e * e + 0.5 * sr);
            }
        }
        let value = Tensor::scalar(acc / z);
        Ok(self.push(Op::RoleWeighted { pred: pred.0, target, mask, s: s.0, roles }, value))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward needs a scalar root");
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &Tensor) {
        // borrow discipline: values immutably via self.nodes, grads mutably
        // via a local split
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(&mut self.grads[a], g.clone());
                accumulate(&mut self.grads[b], g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut self.grads[a], g.clone());
                let neg = Tensor::new(g.shape.clone(), g.data.iter().map(|v| -v).collect());
                accumulate(&mut self.grads[b], neg);
            }
            Op::AddBias(x, b) => {
                accumulate(&mut self.grads[x], g.clone());
                let (n, d) = self.nodes[x].value.dims2();
                let mut gb = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        gb[j] += g.data[i * d + j];
                    }
                }
                accumulate(&mut self.grads[b], Tensor::new(vec![d], gb));
            }
            Op::MulElem(a, b) => {
                let va = &self.nodes[a].value.data;
                let vb = &self.nodes[b].value.data;
                let ga: Vec<f64> = g.data.iter().zip(vb).map(|(gv, bv)| gv * bv).collect();
                let gb: Vec<f64> = g.data.iter().zip(va).map(|(gv, av)| gv * av).collect();
                let shape = self.nodes[a].value.shape.clone();
                accumulate(&mut self.grads[a], Tensor::new(shape.clone(), ga));
                accumulate(&mut self.grads[b], Tensor::new(shape, gb));
            }
            Op::MulRow(x, v) => {
                let (n, d) = self.nodes[x].value.dims2();
                let vx = &self.nodes[x].value.data;
                let vv = &self.nodes[v].value.data;
                let mut gx = vec![0.0; n * d];
                let mut gv = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        gx[i * d + j] = g.data[i * d + j] * vv[j];
                        gv[j] += g.data[i * d + j] * vx[i * d + j];
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, d], gx));
                accumulate(&mut self.grads[v], Tensor::new(vec![d], gv));
            }
            Op::Scale(x, c) => {
                let gx = Tensor::new(g.shape.clone(), g.data.iter().map(|v| v * c).collect());
                accumulate(&mut self.grads[x], gx);
            }
            Op::Matmul(a, b) => {
                let (n, k) = self.nodes[a].value.dims2();
                let (_, m) = self.nodes[b].value.dims2();
                let va = &self.nodes[a].value.data;
                let vb = &self.nodes[b].value.data;
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += g.data[i * m + j] * vb[p * m + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                for p in 0..k {
                    for j in 0..m {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += va[i * k + p] * g.data[i * m + j];
                        }
                        gb[p * m + j] = acc;
                    }
                }
                accumulate(&mut self.grads[a], Tensor::new(vec![n, k], ga));
                accumulate(&mut self.grads[b], Tensor::new(vec![k, m], gb));
            }
            Op::Transpose2(x) => {
                let (a, b) = self.nodes[x].value.dims2();
                // g has shape [b, a]
                let mut gx = vec![0.0; a * b];
                for i in 0..b {
                    for j in 0..a {
                        gx[j * b + i] = g.data[i * a + j];
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![a, b], gx));
            }
            Op::Relu(x) => {
                let vx = &self.nodes[x].value.data;
                let gx: Vec<f64> = g
                    .data
                    .iter()
                    .zip(vx)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                let shape = self.nodes[x].value.shape.clone();
                accumulate(&mut self.grads[x], Tensor::new(shape, gx));
            }
            Op::Gelu(x) => {
                let vx = &self.nodes[x].value.data;
                let gx: Vec<f64> = g
                    .data
                    .iter()
                    .zip(vx)
                    .map(|(gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                let shape = self.nodes[x].value.shape.clone();
                accumulate(&mut self.grads[x], Tensor::new(shape, gx));
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (n, c, h, wd) = self.nodes[x].value.dims4();
                let wt_shape = self.nodes[w].value.shape.clone();
                let (oc, _, kh, kw) = (wt_shape[0], wt_shape[1], wt_shape[2], wt_shape[3]);
                let (_, _, oh, ow) = self.nodes[idx].value.dims4();
                let vx = &self.nodes[x].value.data;
                let vw = &self.nodes[w].value.data;
                let mut gx = vec![0.0; n * c * h * wd];
                let mut gw = vec![0.0; vw.len()];
                let mut gb = vec![0.0; oc];
                for ni in 0..n {
                    for o in 0..oc {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = g.data[((ni * oc + o) * oh + i) * ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[o] += go;
                                for ci in 0..c {
                                    for ki in 0..kh {
                                        for kj in 0..kw {
                                            let ii = clamp_pad(i * stride + ki, pad, h);
                                            let jj = clamp_pad(j * stride + kj, pad, wd);
                                            let xi = ((ni * c + ci) * h + ii) * wd + jj;
                                            let wi = ((o * c + ci) * kh + ki) * kw + kj;
                                            gw[wi] += go * vx[xi];
                                            gx[xi] += go * vw[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, c, h, wd], gx));
                accumulate(&mut self.grads[w], Tensor::new(wt_shape, gw));
                accumulate(&mut self.grads[b], Tensor::new(vec![oc], gb));
            }
            Op::MaxPool2(x) => {
                let shape = self.nodes[x].value.shape.clone();
                let mut gx = vec![0.0; self.nodes[x].value.len()];
                for (k, &src) in self.nodes[idx].aux_idx.iter().enumerate() {
                    gx[src] += g.data[k];
                }
                accumulate(&mut self.grads[x], Tensor::new(shape, gx));
            }
            Op::AdaptiveAvgPool { x, oh, ow } => {
                let (n, c, h, w) = self.nodes[x].value.dims4();
                let mut gx = vec![0.0; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        for i in 0..oh {
                            let (i0, i1) = pool_window(i, oh, h);
                            for j in 0..ow {
                                let (j0, j1) = pool_window(j, ow, w);
                                let go = g.data[((ni * c + ci) * oh + i) * ow + j]
                                    / ((i1 - i0) * (j1 - j0)) as f64;
                                for ii in i0..i1 {
                                    for jj in j0..j1 {
                                        gx[base + ii * w + jj] += go;
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, c, h, w], gx));
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.nodes[x].value.dims4();
                let m = (h * w) as f64;
                let mut gx = vec![0.0; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        let go = g.data[ni * c + ci] / m;
                        let base = (ni * c + ci) * h * w;
                        for k in 0..h * w {
                            gx[base + k] = go;
                        }
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, c, h, w], gx));
            }
            Op::ChannelNorm { x, gain, bias } => {
                let (n, c, h, w) = self.nodes[x].value.dims4();
                let m = h * w;
                let aux = &self.nodes[idx].aux;
                let vg = &self.nodes[gain].value.data;
                let mut gx = vec![0.0; n * c * m];
                let mut ggain = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * m;
                        let istd = aux[n * c * m + ni * c + ci];
                        let mut sum_gxh = 0.0;
                        let mut sum_gxh_xn = 0.0;
                        for k in 0..m {
                            let go = g.data[base + k];
                            let xn = aux[base + k];
                            ggain[ci] += go * xn;
                            gbias[ci] += go;
                            let gxh = go * vg[ci];
                            sum_gxh += gxh;
                            sum_gxh_xn += gxh * xn;
                        }
                        for k in 0..m {
                            let go = g.data[base + k];
                            let xn = aux[base + k];
                            let gxh = go * vg[ci];
                            gx[base + k] = istd
                                * (gxh - sum_gxh / m as f64 - xn * sum_gxh_xn / m as f64);
                        }
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, c, h, w], gx));
                accumulate(&mut self.grads[gain], Tensor::new(vec![c], ggain));
                accumulate(&mut self.grads[bias], Tensor::new(vec![c], gbias));
            }
            Op::LayerNorm { x, gain, bias } => {
                let (n, d) = self.nodes[x].value.dims2();
                let aux = &self.nodes[idx].aux;
                let vg = &self.nodes[gain].value.data;
                let mut gx = vec![0.0; n * d];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for i in 0..n {
                    let istd = aux[n * d + i];
                    let mut sum_gxh = 0.0;
                    let mut sum_gxh_xn = 0.0;
                    for j in 0..d {
                        let go = g.data[i * d + j];
                        let xn = aux[i * d + j];
                        ggain[j] += go * xn;
                        gbias[j] += go;
                        let gxh = go * vg[j];
                        sum_gxh += gxh;
                        sum_gxh_xn += gxh * xn;
                    }
                    for j in 0..d {
                        let go = g.data[i * d + j];
                        let xn = aux[i * d + j];
                        let gxh = go * vg[j];
                        gx[i * d + j] =
                            istd * (gxh - sum_gxh / d as f64 - xn * sum_gxh_xn / d as f64);
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![n, d], gx));
                accumulate(&mut self.grads[gain], Tensor::new(vec![d], ggain));
                accumulate(&mut self.grads[bias], Tensor::new(vec![d], gbias));
            }
            Op::Concat(parts) => {
                let n = self.nodes[idx].value.dims2().0;
                let total = self.nodes[idx].value.dims2().1;
                let mut offset = 0;
                for p in parts {
                    let (_, d) = self.nodes[p].value.dims2();
                    let mut gp = vec![0.0; n * d];
                    for i in 0..n {
                        gp[i * d..(i + 1) * d]
                            .copy_from_slice(&g.data[i * total + offset..i * total + offset + d]);
                    }
                    accumulate(&mut self.grads[p], Tensor::new(vec![n, d], gp));
                    offset += d;
                }
            }
            Op::Rows { table, indices } => {
                let (v, d) = self.nodes[table].value.dims2();
                let mut gt = vec![0.0; v * d];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g.data[k * d + j];
                    }
                }
                accumulate(&mut self.grads[table], Tensor::new(vec![v, d], gt));
            }
            Op::RepeatRow { x, n } => {
                let d = self.nodes[x].value.dims2().1;
                let mut gx = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        gx[j] += g.data[i * d + j];
                    }
                }
                accumulate(&mut self.grads[x], Tensor::new(vec![1, d], gx));
            }
            Op::Dropout(x) => {
                let mask = &self.nodes[idx].aux;
                let gx: Vec<f64> = g.data.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                let shape = self.nodes[x].value.shape.clone();
                accumulate(&mut self.grads[x], Tensor::new(shape, gx));
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x].value.shape.clone();
                accumulate(&mut self.grads[x], Tensor::new(shape, g.data.clone()));
            }
            Op::ActiveSlotMse { pred, target, mask } => {
                let z: f64 = mask.data.iter().sum();
                let vp = &self.nodes[pred].value;
                let g0 = g.data[0];
                let gp: Vec<f64> = (0..vp.len())
                    .map(|k| g0 * 2.0 * mask.data[k] * (vp.data[k] - target.data[k]) / z)
                    .collect();
                accumulate(&mut self.grads[pred], Tensor::new(vp.shape.clone(), gp));
            }
            Op::RoleWeighted { pred, target, mask, s, roles } => {
                let z: f64 = mask.data.iter().sum();
                let vp = &self.nodes[pred].value;
                let vs = &self.nodes[s].value.data;
                let (n, _) = vp.dims2();
                let g0 = g.data[0];
                let mut gp = vec![0.0; vp.len()];
                let mut gs = vec![0.0; vs.len()];
                for i in 0..n {
                    for j in 0..3 {
                        let k = i * 3 + j;
                        if mask.data[k] == 0.0 {
                            continue;
                        }
                        let e = vp.data[k] - target.data[k];
                        let sr = vs[roles[j]];
                        gp[k] = g0 * (-sr).exp() * e / z;
                        gs[roles[j]] += g0 * (0.5 - 0.5 * (-sr).exp() * e * e) / z;
                    }
                }
                accumulate(&mut self.grads[pred], Tensor::new(vp.shape.clone(), gp));
                accumulate(&mut self.grads[s], Tensor::new(vec![vs.len()], gs));
            }
        }
    }

    /// Add every param-bound leaf gradient into the store's grad buffers.
    pub fn harvest(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some(name), Some(g)) = (&node.param, grad) {
                let p = store.get_mut(name);
                assert!(p.grad.same_shape(g), "harvest shape mismatch for {name}");
                for (a, b) in p.grad.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
        }
    }
}

#[inline]
fn clamp_pad(pos: usize, pad: usize, extent: usize) -> usize {
    // replicate padding: clamp the padded coordinate into the valid range
    (pos.saturating_sub(pad)).min(extent - 1)
}

#[inline]
fn pool_window(i: usize, out: usize, extent: usize) -> (usize, usize) {
    let lo = i * extent / out;
    let hi = ((i + 1) * extent).div_ceil(out);
    (lo, hi.max(lo + 1).min(extent))
}

#[inline]
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}
