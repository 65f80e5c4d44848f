//! Reverse-mode differentiation over dense 2-D `f64` arrays.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! parameters (gradients requested) or constants (frozen weights, inputs).
//! Gradients never flow into constants, so anything registered through
//! [`Graph::constant`] is structurally frozen.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddMaskedRow {
        x: Var,
        row: Var,
        mask: Rc<[bool]>,
    },
    Scale(Var, f64),
    Relu(Var),
    RmsNorm {
        x: Var,
        inv_rms: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    CausalSoftmax(Var),
    ConvTranspose {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2<f64>,
    },
    BceWithLogits {
        scores: Var,
        target: Rc<Array2<f64>>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.dim(), (1, 1), "scalar() on non-scalar node");
        value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// `a[n×m] + row[1×m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, m), "add_row shape mismatch");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Adds `row` to exactly the rows of `x` whose mask entry is set. Other
    /// rows are copied bit-for-bit.
    pub fn add_masked_row(&mut self, x: Var, row: Var, mask: Rc<[bool]>) -> Var {
        let (n, m) = self.value(x).dim();
        assert_eq!(mask.len(), n, "mask length");
        assert_eq!(self.value(row).dim(), (1, m), "masked row shape");
        let mut value = self.value(x).clone();
        let r = self.value(row).row(0).to_owned();
        for (i, mut out) in value.axis_iter_mut(Axis(0)).enumerate() {
            if mask[i] {
                out += &r;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(value, Op::AddMaskedRow { x, row, mask }, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise RMS normalization without a gain.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Var {
        let input = self.value(x);
        let m = input.ncols() as f64;
        let inv_rms: Vec<f64> = input
            .axis_iter(Axis(0))
            .map(|r| 1.0 / (r.dot(&r) / m + eps).sqrt())
            .collect();
        let mut value = input.clone();
        for (mut r, inv) in value.axis_iter_mut(Axis(0)).zip(&inv_rms) {
            r *= *inv;
        }
        let rg = self.rg(x);
        self.push(value, Op::RmsNorm { x, inv_rms }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceRows { x, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let input = self.value(x);
        assert_eq!(input.len(), rows * cols, "reshape size");
        let flat: Vec<f64> = input.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Row softmax where row `i` may only attend to columns `j <= i + offset`.
    pub fn causal_softmax(&mut self, x: Var, offset: usize) -> Var {
        let input = self.value(x);
        let (n, m) = input.dim();
        let mut value = Array2::zeros((n, m));
        for i in 0..n {
            let visible = (i + offset + 1).min(m);
            let row = input.slice(s![i, ..visible]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..visible {
                let e = (row[j] - max).exp();
                value[[i, j]] = e;
                total += e;
            }
            for j in 0..visible {
                value[[i, j]] /= total;
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::CausalSoftmax(x), rg)
    }

    /// Single-channel 2-D transposed convolution with a scalar bias.
    pub fn conv_transpose(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Var {
        let input = self.value(x);
        let k = self.value(kernel);
        assert_eq!(self.value(bias).dim(), (1, 1), "conv bias must be 1x1");
        let (kh, kw) = k.dim();
        let (h, w) = input.dim();
        let out_h = (h - 1) * stride + kh - 2 * padding;
        let out_w = (w - 1) * stride + kw - 2 * padding;
        let b = self.value(bias)[[0, 0]];
        let mut value = Array2::from_elem((out_h, out_w), b);
        for iy in 0..h {
            for ix in 0..w {
                let v = input[[iy, ix]];
                for ky in 0..kh {
                    let Some(oy) = (iy * stride + ky).checked_sub(padding) else {
                        continue;
                    };
                    if oy >= out_h {
                        continue;
                    }
                    for kx in 0..kw {
                        let Some(ox) = (ix * stride + kx).checked_sub(padding) else {
                            continue;
                        };
                        if ox < out_w {
                            value[[oy, ox]] += v * k[[ky, kx]];
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        self.push(
            value,
            Op::ConvTranspose {
                x,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        )
    }

    /// Mean token cross-entropy of `logits[n×V]` against one target id per row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let input = self.value(logits);
        let (n, v) = input.dim();
        assert_eq!(targets.len(), n, "one target per logit row");
        assert!(n > 0, "cross entropy over zero rows");
        let mut probs = Array2::zeros((n, v));
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < v, "target id out of vocabulary");
            let row = input.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for j in 0..v {
                probs[[i, j]] = (row[j] - lse).exp();
            }
        }
        let value = Array2::from_elem((1, 1), loss / n as f64);
        let rg = self.rg(logits);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean pixel-wise binary cross-entropy of `sigmoid(scores)` against soft targets.
    pub fn bce_with_logits(&mut self, scores: Var, target: Rc<Array2<f64>>) -> Var {
        let input = self.value(scores);
        assert_eq!(input.dim(), target.dim(), "bce shape mismatch");
        let mut total = 0.0;
        Zip::from(input).and(&*target).for_each(|&s, &t| {
            total += s.max(0.0) - s * t + (-s.abs()).exp().ln_1p();
        });
        let value = Array2::from_elem((1, 1), total / input.len() as f64);
        let rg = self.rg(scores);
        self.push(value, Op::BceWithLogits { scores, target }, rg)
    }

    /// Back-propagates from the scalar `loss`. Only parameter leaves keep
    /// their gradient in the result.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let d = g.dot(&self.value(*b).t());
                        self.accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = self.value(*a).t().dot(&g);
                        self.accumulate(&mut grads, *b, d);
                    }
                }
                Op::Transpose(a) => {
                    let d = g.t().to_owned();
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(&mut grads, *row, d);
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::AddMaskedRow { x, row, mask } => {
                    if self.rg(*row) {
                        let mut d = Array2::zeros((1, g.ncols()));
                        for (r, &on) in g.axis_iter(Axis(0)).zip(mask.iter()) {
                            if on {
                                d.row_mut(0).scaled_add(1.0, &r);
                            }
                        }
                        self.accumulate(&mut grads, *row, d);
                    }
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Scale(a, factor) => {
                    self.accumulate(&mut grads, *a, g * *factor);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    self.accumulate(&mut grads, *a, d);
                }
                Op::RmsNorm { x, inv_rms } => {
                    let y = &node.value;
                    let m = y.ncols() as f64;
                    let mut d = Array2::zeros(y.dim());
                    for (i, &r) in inv_rms.iter().enumerate() {
                        let gy = g.row(i);
                        let yr = y.row(i);
                        let proj = gy.dot(&yr) / m;
                        let mut out = d.row_mut(i);
                        Zip::from(&mut out)
                            .and(&gy)
                            .and(&yr)
                            .for_each(|o, &gv, &yv| *o = r * (gv - yv * proj));
                    }
                    self.accumulate(&mut grads, *x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        if self.rg(*p) {
                            let d = g.slice(s![start..start + rows, ..]).to_owned();
                            self.accumulate(&mut grads, *p, d);
                        }
                        start += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Reshape(x) => {
                    let dim = self.value(*x).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let d = Array2::from_shape_vec(dim, flat).expect("reshape grad");
                    self.accumulate(&mut grads, *x, d);
                }
                Op::CausalSoftmax(x) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot = g.row(i).dot(&y.row(i));
                        let mut out = d.row_mut(i);
                        Zip::from(&mut out)
                            .and(g.row(i))
                            .and(y.row(i))
                            .for_each(|o, &gv, &yv| *o = yv * (gv - dot));
                    }
                    self.accumulate(&mut grads, *x, d);
                }
                Op::ConvTranspose {
                    x,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let input = self.value(*x);
                    let k = self.value(*kernel);
                    let (kh, kw) = k.dim();
                    let (h, w) = input.dim();
                    let (out_h, out_w) = g.dim();
                    let mut dx = Array2::zeros((h, w));
                    let mut dk = Array2::zeros((kh, kw));
                    for iy in 0..h {
                        for ix in 0..w {
                            for ky in 0..kh {
                                let Some(oy) = (iy * stride + ky).checked_sub(*padding) else {
                                    continue;
                                };
                                if oy >= out_h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let Some(ox) = (ix * stride + kx).checked_sub(*padding) else {
                                        continue;
                                    };
                                    if ox < out_w {
                                        let go = g[[oy, ox]];
                                        dx[[iy, ix]] += go * k[[ky, kx]];
                                        dk[[ky, kx]] += go * input[[iy, ix]];
                                    }
                                }
                            }
                        }
                    }
                    if self.rg(*bias) {
                        self.accumulate(&mut grads, *bias, Array2::from_elem((1, 1), g.sum()));
                    }
                    if self.rg(*kernel) {
                        self.accumulate(&mut grads, *kernel, dk);
                    }
                    if self.rg(*x) {
                        self.accumulate(&mut grads, *x, dx);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        d[[i, t]] -= 1.0;
                    }
                    d *= scale;
                    self.accumulate(&mut grads, *logits, d);
                }
                Op::BceWithLogits { scores, target } => {
                    let input = self.value(*scores);
                    let scale = g[[0, 0]] / input.len() as f64;
                    let mut d = Array2::zeros(input.dim());
                    Zip::from(&mut d)
                        .and(input)
                        .and(&**target)
                        .for_each(|d, &s, &t| *d = scale * (sigmoid(s) - t));
                    self.accumulate(&mut grads, *scores, d);
                }
            }
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(build: &dyn Fn(&mut Graph, Var) -> Var, x: &Array2<f64>, step: f64) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = x.clone();
            plus[[r, c]] += step;
            let mut minus = x.clone();
            minus[[r, c]] -= step;
            let f = |v: Array2<f64>| {
                let mut g = Graph::new();
                let p = g.constant(v);
                let l = build(&mut g, p);
                g.scalar(l)
            };
            out[[r, c]] = (f(plus) - f(minus)) / (2.0 * step);
        }
        out
    }

    fn check(build: &dyn Fn(&mut Graph, Var) -> Var, x: Array2<f64>) {
        let mut g = Graph::new();
        let p = g.param(x.clone());
        let l = build(&mut g, p);
        let grads = g.backward(l);
        let analytic = grads.get(p).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        let numeric = numeric_grad(build, &x, 1e-5);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / denom < 1e-5, "analytic {a} numeric {n}");
        }
    }

    fn scalarize(g: &mut Graph, v: Var) -> Var {
        // weighted sum so every entry has a distinct gradient
        let (r, c) = g.value(v).dim();
        let w = Array2::from_shape_fn((c, 1), |(i, _)| 0.3 + 0.1 * i as f64);
        let wv = g.constant(w);
        let col = g.matmul(v, wv);
        let ones = g.constant(Array2::from_shape_fn((1, r), |(_, j)| 1.0 - 0.05 * j as f64));
        g.matmul(ones, col)
    }

    #[test]
    fn matmul_transpose_relu_grads() {
        check(
            &|g, p| {
                let b = g.constant(array![[0.5, -1.0], [2.0, 0.3], [-0.7, 1.1]]);
                let m = g.matmul(p, b);
                let r = g.relu(m);
                let t = g.transpose(r);
                scalarize(g, t)
            },
            array![[0.4, -0.2, 1.0], [-0.3, 0.8, 0.1]],
        );
    }

    #[test]
    fn rms_norm_and_softmax_grads() {
        check(
            &|g, p| {
                let n = g.rms_norm(p, 1e-6);
                let t = g.transpose(n);
                let scores = g.matmul(n, t);
                let sm = g.causal_softmax(scores, 0);
                scalarize(g, sm)
            },
            array![[0.4, -0.2, 1.0], [-0.3, 0.8, 0.1], [0.9, 0.2, -0.5]],
        );
    }

    #[test]
    fn conv_transpose_grads() {
        let x = array![[0.3, -0.1], [0.7, 0.2]];
        check(
            &|g, k| {
                let xv = g.constant(array![[0.3, -0.1], [0.7, 0.2]]);
                let b = g.constant(array![[0.1]]);
                let y = g.conv_transpose(xv, k, b, 2, 1);
                scalarize(g, y)
            },
            Array2::from_shape_fn((4, 4), |(i, j)| 0.1 * i as f64 - 0.05 * j as f64),
        );
        check(
            &|g, xp| {
                let k = g.constant(Array2::from_shape_fn((4, 4), |(i, j)| 0.2 + 0.1 * (i * j) as f64));
                let b = g.constant(array![[0.1]]);
                let y = g.conv_transpose(xp, k, b, 2, 1);
                scalarize(g, y)
            },
            x,
        );
    }

    #[test]
    fn loss_grads() {
        check(
            &|g, p| g.cross_entropy(p, &[2, 0]),
            array![[0.4, -0.2, 1.0], [-0.3, 0.8, 0.1]],
        );
        let target = Rc::new(array![[0.2, 1.0], [0.0, 0.6]]);
        check(
            &move |g, p| g.bce_with_logits(p, target.clone()),
            array![[0.4, -2.2], [3.0, 0.1]],
        );
    }

    #[test]
    fn masked_row_leaves_unmasked_rows_bit_identical() {
        let mut g = Graph::new();
        let x = g.constant(array![[-0.0, 1.5], [2.0, 3.0]]);
        let r = g.param(array![[0.0, 0.0]]);
        let y = g.add_masked_row(x, r, Rc::from(vec![false, true]));
        assert_eq!(g.value(y)[[0, 0]].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn conv_transpose_doubles_size() {
        let mut g = Graph::new();
        let x = g.constant(Array2::ones((24, 24)));
        let k = g.constant(Array2::ones((4, 4)));
        let b = g.constant(Array2::zeros((1, 1)));
        let y = g.conv_transpose(x, k, b, 2, 1);
        assert_eq!(g.value(y).dim(), (48, 48));
    }
}
