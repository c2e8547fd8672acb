//! The computation tape. Every op records its inputs; `backward` walks the
//! tape in reverse and accumulates gradients.

use std::collections::HashMap;

use ndarray::{s, Axis, Zip};

use super::{Mat, ParamStore};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous block of rows belonging to one sequence or set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    /// Back-to-back segments with the given lengths.
    pub fn packed(lens: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lens.into_iter()
            .map(|len| {
                let seg = Segment::new(start, len);
                start += len;
                seg
            })
            .collect()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// x * w^T (+ b), w stored as (out, in)
    Linear(Var, Var, Option<Var>),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    LogSoftmax(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        q_segs: Vec<Segment>,
        kv_segs: Vec<Segment>,
        heads: usize,
        probs: Vec<Mat>,
    },
    SegmentSum {
        x: Var,
        segs: Vec<Segment>,
        weights: Option<Vec<f64>>,
        mean: bool,
    },
    GroupMax {
        x: Var,
        argmax: Mat,
    },
    Gather(Var, Vec<usize>),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    ChannelConv(Var, Var),
    Sum(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// A single forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Mat>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A constant input; receives no gradient that anyone reads.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The named parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(store.value(name).clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut value = self.value(x).dot(&self.value(w).t());
        if let Some(b) = b {
            value += &self.value(b).row(0);
        }
        self.push(value, Op::Linear(x, w, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// `a` plus the single-row `row` broadcast down the rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + &self.value(row).row(0);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmax(a))
    }

    /// Row-wise RMS normalization with a learned `1 x n` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let inv_rms: Vec<f64> = xv
            .rows()
            .into_iter()
            .map(|r| 1.0 / (r.iter().map(|v| v * v).sum::<f64>() / n + eps).sqrt())
            .collect();
        let g = self.value(gain).row(0).to_owned();
        let mut value = xv.clone();
        for (mut row, &r) in value.rows_mut().into_iter().zip(&inv_rms) {
            Zip::from(&mut row).and(&g).for_each(|v, &gi| *v *= r * gi);
        }
        self.push(value, Op::RmsNorm { x, gain, inv_rms })
    }

    /// Scaled dot-product attention, independently per segment and head.
    ///
    /// `q_segs[i]` attends over `kv_segs[i]`. With `causal`, query row `t`
    /// of a segment sees key rows `0..=t` (segments must then match in length).
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_segs: &[Segment],
        kv_segs: &[Segment],
        heads: usize,
        causal: bool,
    ) -> Var {
        assert_eq!(q_segs.len(), kv_segs.len());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((qv.nrows(), vv.ncols()));
        let mut probs = Vec::with_capacity(q_segs.len() * heads);
        for (qs, ks) in q_segs.iter().zip(kv_segs) {
            if causal {
                assert_eq!(qs.len, ks.len, "causal attention needs square segments");
            }
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![qs.start..qs.start + qs.len, cols.clone()]);
                let kh = kv.slice(s![ks.start..ks.start + ks.len, cols.clone()]);
                let vh = vv.slice(s![ks.start..ks.start + ks.len, cols.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    if causal {
                        row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
                    }
                    let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
                    row.mapv_inplace(|x| (x - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                out.slice_mut(s![qs.start..qs.start + qs.len, cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                q_segs: q_segs.to_vec(),
                kv_segs: kv_segs.to_vec(),
                heads,
                probs,
            },
        )
    }

    /// One output row per segment: the (optionally weighted) sum of its rows.
    pub fn segment_sum(&mut self, x: Var, segs: &[Segment], weights: Option<Vec<f64>>) -> Var {
        self.segment_reduce(x, segs, weights, false)
    }

    /// Per-segment mean of rows (sum divided by the length).
    pub fn segment_mean(&mut self, x: Var, segs: &[Segment]) -> Var {
        self.segment_reduce(x, segs, None, true)
    }

    fn segment_reduce(&mut self, x: Var, segs: &[Segment], weights: Option<Vec<f64>>, mean: bool) -> Var {
        let xv = self.value(x);
        let mut value = Mat::zeros((segs.len(), xv.ncols()));
        for (i, seg) in segs.iter().enumerate() {
            let mut acc = value.row_mut(i);
            for r in seg.start..seg.start + seg.len {
                let w = weights.as_ref().map_or(1.0, |w| w[r]);
                acc.scaled_add(w, &xv.row(r));
            }
            if mean && seg.len > 0 {
                acc /= seg.len as f64;
            }
        }
        self.push(
            value,
            Op::SegmentSum {
                x,
                segs: segs.to_vec(),
                weights,
                mean,
            },
        )
    }

    /// Column-wise max over each group of row indices. Groups must be non-empty.
    /// Ties go to the earliest index in the group.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols();
        let mut value = Mat::zeros((groups.len(), cols));
        let mut argmax = Mat::zeros((groups.len(), cols));
        for (g, members) in groups.iter().enumerate() {
            assert!(!members.is_empty(), "empty max-pool group");
            for c in 0..cols {
                let mut best = members[0];
                for &m in &members[1..] {
                    if xv[[m, c]] > xv[[best, c]] {
                        best = m;
                    }
                }
                value[[g, c]] = xv[[best, c]];
                argmax[[g, c]] = best as f64;
            }
        }
        self.push(value, Op::GroupMax { x, argmax })
    }

    /// Rows of `x` in the order given by `index` (repeats allowed).
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), index);
        self.push(value, Op::Gather(x, index.to_vec()))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("hcat rows must match");
        self.push(value, Op::HCat(parts.to_vec()))
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("vcat cols must match");
        self.push(value, Op::VCat(parts.to_vec()))
    }

    /// 1-D convolution along the columns of each row with a `1 x k` kernel
    /// (k odd), zero padded so the width is preserved.
    pub fn channel_conv(&mut self, x: Var, kernel: Var) -> Var {
        let xv = self.value(x);
        let w = self.value(kernel).row(0).to_owned();
        let k = w.len();
        assert!(k % 2 == 1, "kernel size must be odd");
        let half = (k / 2) as isize;
        let cols = xv.ncols() as isize;
        let mut value = Mat::zeros(xv.dim());
        for (r, row) in xv.rows().into_iter().enumerate() {
            for c in 0..cols {
                let mut acc = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    let src = c + t as isize - half;
                    if (0..cols).contains(&src) {
                        acc += wt * row[src as usize];
                    }
                }
                value[[r, c as usize]] = acc;
            }
        }
        self.push(value, Op::ChannelConv(x, kernel))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, mask: Mat) -> Var {
        let m = self.constant(mask);
        self.mul(x, m)
    }

    fn accumulate(&mut self, v: Var, g: Mat) {
        match &mut self.grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&mut self, output: Var) {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(Mat::ones((1, 1)));
        for i in (0..=output.0).rev() {
            let Some(dy) = self.grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut updates: Vec<(Var, Mat)> = Vec::new();
            match &node.op {
                Op::Leaf => {
                    self.grads[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    updates.push((*a, dy.dot(&bv.t())));
                    updates.push((*b, av.t().dot(&dy)));
                }
                Op::Linear(x, w, b) => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    updates.push((*x, dy.dot(wv)));
                    updates.push((*w, dy.t().dot(xv)));
                    if let Some(b) = b {
                        updates.push((*b, dy.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    }
                }
                Op::Add(a, b) => {
                    updates.push((*a, dy.clone()));
                    updates.push((*b, dy));
                }
                Op::AddRow(a, row) => {
                    updates.push((*row, dy.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    updates.push((*a, dy));
                }
                Op::Sub(a, b) => {
                    updates.push((*b, -&dy));
                    updates.push((*a, dy));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    updates.push((*a, &dy * bv));
                    updates.push((*b, &dy * av));
                }
                Op::Scale(a, k) => updates.push((*a, dy * *k)),
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let mut g = dy;
                    Zip::from(&mut g).and(av).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    updates.push((*a, g));
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[a.0].value;
                    let mut g = dy;
                    Zip::from(&mut g).and(av).for_each(|g, &x| *g *= gelu_grad(x));
                    updates.push((*a, g));
                }
                Op::Sigmoid(a) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    updates.push((*a, g));
                }
                Op::LogSoftmax(a) => {
                    let mut g = dy;
                    for (mut grow, yrow) in g.rows_mut().into_iter().zip(node.value.rows()) {
                        let total = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g -= y.exp() * total);
                    }
                    updates.push((*a, g));
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xv = &self.nodes[x.0].value;
                    let g = self.nodes[gain.0].value.row(0);
                    let n = xv.ncols() as f64;
                    let mut dx = Mat::zeros(xv.dim());
                    let mut dg = Mat::zeros((1, xv.ncols()));
                    for r in 0..xv.nrows() {
                        let inv = inv_rms[r];
                        let xr = xv.row(r);
                        let dyr = dy.row(r);
                        let mut dot = 0.0;
                        for c in 0..xr.len() {
                            dot += g[c] * dyr[c] * xr[c];
                            dg[[0, c]] += dyr[c] * xr[c] * inv;
                        }
                        let coef = inv * inv * inv * dot / n;
                        for c in 0..xr.len() {
                            dx[[r, c]] = inv * g[c] * dyr[c] - coef * xr[c];
                        }
                    }
                    updates.push((*x, dx));
                    updates.push((*gain, dg));
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    q_segs,
                    kv_segs,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
                    let dh = qv.ncols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.dim());
                    let mut dk = Mat::zeros(kv.dim());
                    let mut dv = Mat::zeros(vv.dim());
                    let mut pi = 0;
                    for (qs, ks) in q_segs.iter().zip(kv_segs) {
                        let qr = qs.start..qs.start + qs.len;
                        let kr = ks.start..ks.start + ks.len;
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            let dout = dy.slice(s![qr.clone(), cols.clone()]);
                            let vh = vv.slice(s![kr.clone(), cols.clone()]);
                            dv.slice_mut(s![kr.clone(), cols.clone()])
                                .scaled_add(1.0, &p.t().dot(&dout));
                            let dp = dout.dot(&vh.t());
                            let mut ds = &dp * p;
                            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                                let total = row.sum();
                                Zip::from(&mut row).and(&prow).for_each(|d, &pv| *d -= pv * total);
                            }
                            let qh = qv.slice(s![qr.clone(), cols.clone()]);
                            let kh = kv.slice(s![kr.clone(), cols.clone()]);
                            dq.slice_mut(s![qr.clone(), cols.clone()])
                                .scaled_add(scale, &ds.dot(&kh));
                            dk.slice_mut(s![kr.clone(), cols.clone()])
                                .scaled_add(scale, &ds.t().dot(&qh));
                        }
                    }
                    updates.push((*q, dq));
                    updates.push((*k, dk));
                    updates.push((*v, dv));
                }
                Op::SegmentSum { x, segs, weights, mean } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Mat::zeros(xv.dim());
                    for (i, seg) in segs.iter().enumerate() {
                        let div = if *mean { seg.len as f64 } else { 1.0 };
                        for r in seg.start..seg.start + seg.len {
                            let w = weights.as_ref().map_or(1.0, |w| w[r]) / div;
                            dx.row_mut(r).scaled_add(w, &dy.row(i));
                        }
                    }
                    updates.push((*x, dx));
                }
                Op::GroupMax { x, argmax } => {
                    let mut dx = Mat::zeros(self.nodes[x.0].value.dim());
                    for ((g, c), &src) in argmax.indexed_iter() {
                        dx[[src as usize, c]] += dy[[g, c]];
                    }
                    updates.push((*x, dx));
                }
                Op::Gather(x, index) => {
                    let mut dx = Mat::zeros(self.nodes[x.0].value.dim());
                    for (row, &src) in index.iter().enumerate() {
                        dx.row_mut(src).scaled_add(1.0, &dy.row(row));
                    }
                    updates.push((*x, dx));
                }
                Op::HCat(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        updates.push((*p, dy.slice(s![.., c0..c0 + w]).to_owned()));
                        c0 += w;
                    }
                }
                Op::VCat(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        updates.push((*p, dy.slice(s![r0..r0 + h, ..]).to_owned()));
                        r0 += h;
                    }
                }
                Op::ChannelConv(x, kernel) => {
                    let xv = &self.nodes[x.0].value;
                    let w = self.nodes[kernel.0].value.row(0);
                    let k = w.len();
                    let half = (k / 2) as isize;
                    let cols = xv.ncols() as isize;
                    let mut dx = Mat::zeros(xv.dim());
                    let mut dw = Mat::zeros((1, k));
                    for r in 0..xv.nrows() {
                        for c in 0..cols {
                            let g = dy[[r, c as usize]];
                            for t in 0..k {
                                let src = c + t as isize - half;
                                if (0..cols).contains(&src) {
                                    dx[[r, src as usize]] += w[t] * g;
                                    dw[[0, t]] += xv[[r, src as usize]] * g;
                                }
                            }
                        }
                    }
                    updates.push((*x, dx));
                    updates.push((*kernel, dw));
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    updates.push((*a, Mat::from_elem(shape, dy[[0, 0]])));
                }
            }
            for (v, g) in updates {
                self.accumulate(v, g);
            }
        }
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter leaf touched by this graph.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.params
            .iter()
            .filter_map(|(name, &v)| self.grad(v).map(|g| (name.as_str(), g)))
    }
}
