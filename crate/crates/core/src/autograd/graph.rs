//! Tape of tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Parameters enter the tape by reference (each id at most once), so a weight
//! used by several operations accumulates all of its gradient contributions.
//! Nodes are appended in evaluation order, which is already a topological
//! order; [`Graph::backward`] walks it once in reverse.

use std::collections::HashMap;

use crate::autograd::conv::{self, ConvGeometry};
use crate::autograd::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::wavelet;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cout: usize,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cin: usize,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Idwt([Var; 4]),
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Mae {
        pred: Var,
        target: Tensor<T>,
    },
    Dot {
        x: Var,
        weights: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::ConvTranspose { .. } => "conv_transpose2d",
            Op::PRelu { .. } => "prelu",
            Op::Concat(_) => "concat",
            Op::Add(..) => "add",
            Op::Idwt(_) => "idwt2",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Mae { .. } => "mae_loss",
            Op::Dot { .. } => "dot",
        }
    }
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Tape that records operations for a later [`Graph::backward`].
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only tape: parameters are not tracked and backward is refused.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Graph {
            grad_enabled: false,
            ..Graph::new(store)
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    /// Scalar value of a (1, 1, 1, 1) node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf referencing a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn check_conv_weight(&self, x: Shape, w: Shape, b: Option<Var>, op: &'static str, cin_axis: usize) -> Result<()> {
        if w.h() != w.w() {
            return Err(Error::dim(op, "kernel", w.h(), w.w()));
        }
        let cin = w.0[cin_axis];
        if x.c() != cin {
            return Err(Error::dim(op, "C", cin, x.c()));
        }
        if let Some(b) = b {
            let out = w.0[1 - cin_axis];
            let bn = self.shape(b).numel();
            if bn != out {
                return Err(Error::dim(op, "bias", out, bn));
            }
        }
        Ok(())
    }

    /// Cross-correlation with weight (cout, cin, k, k) and optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        self.check_conv_weight(xs, ws, b, "conv2d", 1)?;
        let geom = ConvGeometry::new(xs, ws.h(), stride, pad)?;
        let cout = ws.n();
        let out = conv::conv2d_forward(
            self.value(x).data(),
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            cout,
        );
        let t = Tensor::from_vec(Shape::new(xs.n(), cout, geom.oh, geom.ow), out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(t, Op::Conv { x, w, b, geom, cout }, &parents))
    }

    /// Transposed convolution with weight (cin, cout, k, k).
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        self.check_conv_weight(xs, ws, b, "conv_transpose2d", 0)?;
        let cout = ws.c();
        let geom = conv::transpose_geometry(xs, cout, ws.h(), stride, pad)?;
        let out = conv::conv_transpose_forward(
            self.value(x).data(),
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            xs.c(),
        );
        let t = Tensor::from_vec(Shape::new(xs.n(), cout, geom.h, geom.w), out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            t,
            Op::ConvTranspose {
                x,
                w,
                b,
                geom,
                cin: xs.c(),
            },
            &parents,
        ))
    }

    /// `x` where non-negative, `slope[c]·x` otherwise.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let xs = self.shape(x);
        let sn = self.shape(slope).numel();
        if sn != xs.c() {
            return Err(Error::dim("prelu", "C", xs.c(), sn));
        }
        let plane = xs.plane();
        let a = self.value(slope).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let ac = a[i % xs.c()];
            for v in chunk {
                if *v < T::zero() {
                    *v *= ac;
                }
            }
        }
        let t = Tensor::from_vec(xs, out)?;
        Ok(self.push(t, Op::PRelu { x, slope }, &[x, slope]))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let t = Tensor::concat_channels(&tensors)?;
        Ok(self.push(t, Op::Concat(inputs.to_vec()), inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).add(self.value(b))?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Left fold of [`Graph::add`] over a non-empty list.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::usage("sum of zero terms"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Inverse Haar transform of four (N, C, H, W) bands into (N, C, 2H, 2W).
    pub fn idwt2(&mut self, ll: Var, hl: Var, lh: Var, hh: Var) -> Result<Var> {
        let s = self.shape(ll);
        for b in [hl, lh, hh] {
            s.expect_eq(&self.shape(b), "idwt2")?;
        }
        let data = wavelet::idwt2_raw(
            self.value(ll).data(),
            self.value(hl).data(),
            self.value(lh).data(),
            self.value(hh).data(),
            s,
        );
        let t = Tensor::from_vec(s.with_hw(2 * s.h(), 2 * s.w()), data)?;
        Ok(self.push(t, Op::Idwt([ll, hl, lh, hh]), &[ll, hl, lh, hh]))
    }

    /// Periodic shuffle (N, C·r², H, W) -> (N, C, H·r, W·r).
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x);
        if r == 0 || xs.c() % (r * r) != 0 {
            return Err(Error::dim("pixel_shuffle", "C", (xs.c() / (r * r).max(1)) * r * r, xs.c()));
        }
        let out_shape = Shape::new(xs.n(), xs.c() / (r * r), xs.h() * r, xs.w() * r);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); xs.numel()];
        for_each_shuffle(xs, r, |si, di| out[di] = src[si]);
        let t = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(t, Op::PixelShuffle { x, r }, &[x]))
    }

    /// Mean absolute error against a constant target.
    pub fn mae_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        p.shape().expect_eq(&target.shape(), "mae_loss")?;
        let n = T::from_usize(p.len().max(1)).unwrap();
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        let t = Tensor::full(Shape::new(1, 1, 1, 1), total / n);
        Ok(self.push(
            t,
            Op::Mae {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }

    /// `Σ x·weights`, a smooth scalar readout used for probing gradients.
    pub fn dot(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        xv.shape().expect_eq(&weights.shape(), "dot")?;
        let s: T = xv.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let t = Tensor::full(Shape::new(1, 1, 1, 1), s);
        Ok(self.push(
            t,
            Op::Dot {
                x,
                weights: weights.clone(),
            },
            &[x],
        ))
    }

    /// Label of the first node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            let finite = match &n.value {
                Value::Owned(t) => t.all_finite(),
                Value::Param(id) => self.store.value(*id).all_finite(),
            };
            (!finite).then(|| match &n.value {
                Value::Param(id) => self.store.name(*id).to_string(),
                Value::Owned(_) => format!("{}#{}", n.op.name(), i),
            })
        })
    }

    /// Reverse pass from a scalar node; returns gradients for every parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(Error::usage("backward on an inference graph"));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::usage(format!("backward needs a scalar loss, got shape {ls}")));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        out.set(id, Tensor::from_vec(self.store.value(id).shape(), g)?);
                    }
                }
                Op::Conv { x, w, b, geom, cout } => {
                    let mut gx = self.grad_slot(*x, &mut grads);
                    let mut gw = self.grad_slot(*w, &mut grads);
                    let mut gb = b.and_then(|b| self.grad_slot(b, &mut grads));
                    conv::conv2d_backward(
                        self.value(*x).data(),
                        geom,
                        self.value(*w).data(),
                        *cout,
                        &g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    self.restore(*x, gx, &mut grads);
                    self.restore(*w, gw, &mut grads);
                    if let Some(b) = b {
                        self.restore(*b, gb, &mut grads);
                    }
                }
                Op::ConvTranspose { x, w, b, geom, cin } => {
                    let mut gx = self.grad_slot(*x, &mut grads);
                    let mut gw = self.grad_slot(*w, &mut grads);
                    let mut gb = b.and_then(|b| self.grad_slot(b, &mut grads));
                    conv::conv_transpose_backward(
                        self.value(*x).data(),
                        geom,
                        self.value(*w).data(),
                        *cin,
                        &g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    self.restore(*x, gx, &mut grads);
                    self.restore(*w, gw, &mut grads);
                    if let Some(b) = b {
                        self.restore(*b, gb, &mut grads);
                    }
                }
                Op::PRelu { x, slope } => {
                    let xv = self.value(*x);
                    let xs = xv.shape();
                    let a = self.value(*slope).data();
                    let plane = xs.plane();
                    let mut gx = self.grad_slot(*x, &mut grads);
                    let mut ga = self.grad_slot(*slope, &mut grads);
                    for (ci, (xc, gc)) in xv.data().chunks(plane).zip(g.chunks(plane)).enumerate() {
                        let c = ci % xs.c();
                        if let Some(gx) = gx.as_deref_mut() {
                            let dst = &mut gx[ci * plane..(ci + 1) * plane];
                            for ((d, &xi), &gi) in dst.iter_mut().zip(xc).zip(gc) {
                                *d += if xi < T::zero() { a[c] * gi } else { gi };
                            }
                        }
                        if let Some(ga) = ga.as_deref_mut() {
                            let mut acc = T::zero();
                            for (&xi, &gi) in xc.iter().zip(gc) {
                                if xi < T::zero() {
                                    acc += xi * gi;
                                }
                            }
                            ga[c] += acc;
                        }
                    }
                    self.restore(*x, gx, &mut grads);
                    self.restore(*slope, ga, &mut grads);
                }
                Op::Concat(inputs) => {
                    let out_s = node_shape(node, self);
                    let out_len = out_s.sample_len();
                    let mut offset = 0;
                    for &inp in inputs {
                        let s = self.shape(inp);
                        let len = s.sample_len();
                        if let Some(mut gi) = self.grad_slot(inp, &mut grads) {
                            for n in 0..s.n() {
                                let src = &g[n * out_len + offset..n * out_len + offset + len];
                                for (d, &v) in gi[n * len..(n + 1) * len].iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                            self.restore(inp, Some(gi), &mut grads);
                        }
                        offset += len;
                    }
                }
                Op::Add(a, b) => {
                    for p in [*a, *b] {
                        if let Some(mut gp) = self.grad_slot(p, &mut grads) {
                            for (d, &v) in gp.iter_mut().zip(&g) {
                                *d += v;
                            }
                            self.restore(p, Some(gp), &mut grads);
                        }
                    }
                }
                Op::Idwt(bands) => {
                    let s = self.shape(bands[0]);
                    let [ll, hl, lh, hh] = wavelet::dwt2_raw(&g, s.with_hw(2 * s.h(), 2 * s.w()));
                    for (p, gb) in bands.iter().zip([ll, hl, lh, hh]) {
                        if let Some(mut gp) = self.grad_slot(*p, &mut grads) {
                            for (d, v) in gp.iter_mut().zip(gb) {
                                *d += v;
                            }
                            self.restore(*p, Some(gp), &mut grads);
                        }
                    }
                }
                Op::PixelShuffle { x, r } => {
                    if let Some(mut gx) = self.grad_slot(*x, &mut grads) {
                        for_each_shuffle(self.shape(*x), *r, |si, di| gx[si] += g[di]);
                        self.restore(*x, Some(gx), &mut grads);
                    }
                }
                Op::Mae { pred, target } => {
                    if let Some(mut gp) = self.grad_slot(*pred, &mut grads) {
                        let n = T::from_usize(target.len().max(1)).unwrap();
                        let k = g[0] / n;
                        for ((d, &p), &t) in gp.iter_mut().zip(self.value(*pred).data()).zip(target.data()) {
                            let diff = p - t;
                            if diff > T::zero() {
                                *d += k;
                            } else if diff < T::zero() {
                                *d -= k;
                            }
                        }
                        self.restore(*pred, Some(gp), &mut grads);
                    }
                }
                Op::Dot { x, weights } => {
                    if let Some(mut gx) = self.grad_slot(*x, &mut grads) {
                        for (d, &w) in gx.iter_mut().zip(weights.data()) {
                            *d += g[0] * w;
                        }
                        self.restore(*x, Some(gx), &mut grads);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Takes (or creates) the gradient buffer of `v` if it needs one.
    fn grad_slot(&self, v: Var, grads: &mut [Option<Vec<T>>]) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.shape(v).numel()]),
        )
    }

    fn restore(&self, v: Var, g: Option<Vec<T>>, grads: &mut [Option<Vec<T>>]) {
        if let Some(g) = g {
            grads[v.0] = Some(g);
        }
    }
}

fn node_shape<T: Scalar>(node: &Node<T>, g: &Graph<'_, T>) -> Shape {
    match &node.value {
        Value::Owned(t) => t.shape(),
        Value::Param(id) => g.store.value(*id).shape(),
    }
}

/// Calls `f(source_index, dest_index)` for every element of a pixel shuffle.
fn for_each_shuffle(xs: Shape, r: usize, mut f: impl FnMut(usize, usize)) {
    let c_out = xs.c() / (r * r);
    let (h, w) = (xs.h(), xs.w());
    let (oh, ow) = (h * r, w * r);
    for n in 0..xs.n() {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    for y in 0..h {
                        for x in 0..w {
                            let si = ((n * xs.c() + ci) * h + y) * w + x;
                            let di = ((n * c_out + c) * oh + y * r + i) * ow + x * r + j;
                            f(si, di);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::gradcheck::{grad_check, GradCheckOptions};

    fn rand_t(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, rng)
    }

    fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w)
    }

    /// Registers `inputs` as parameters, then checks `Σ r·op(inputs)` for a random `r`.
    fn check_op(inputs: Vec<Tensor<f64>>, op: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("in{i}"), t).unwrap())
            .collect();
        let out_shape = {
            let mut g = Graph::inference(&store);
            let vars: Vec<_> = ids.iter().map(|&id| g.param(id)).collect();
            let y = op(&mut g, &vars).unwrap();
            g.shape(y)
        };
        let readout = rand_t(out_shape, &mut rng);
        let report = grad_check(
            &mut store,
            |g| {
                let vars: Vec<_> = ids.iter().map(|&id| g.param(id)).collect();
                let y = op(g, &vars)?;
                g.dot(y, &readout)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        report.max_rel_err()
    }

    fn forward(inputs: Vec<Tensor<f64>>, op: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>) -> Result<Tensor<f64>> {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let vars: Vec<_> = inputs.into_iter().map(|t| g.constant(t)).collect();
        let y = op(&mut g, &vars)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn box_sum_centre_and_corner() {
        let y = forward(vec![Tensor::full(s(1, 1, 3, 3), 1.0), Tensor::full(s(1, 1, 3, 3), 1.0)], |g, v| {
            g.conv2d(v[0], v[1], None, 1, 1)
        })
        .unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_t(s(2, 3, 6, 5), &mut rng);
        for k in [3usize, 5] {
            let w = Tensor::from_fn(s(3, 3, k, k), |[o, i, y, xx]| {
                if o == i && y == k / 2 && xx == k / 2 {
                    1.0
                } else {
                    0.0
                }
            });
            let y = forward(vec![x.clone(), w], |g, v| g.conv2d(v[0], v[1], None, 1, (k - 1) / 2)).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let err = forward(vec![Tensor::zeros(s(1, 2, 4, 4)), Tensor::zeros(s(1, 3, 3, 3))], |g, v| {
            g.conv2d(v[0], v[1], None, 1, 1)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "C", expected: 3, got: 2, .. }));
    }

    #[test]
    fn prelu_examples() {
        let x = Tensor::from_vec(s(1, 1, 1, 2), vec![2.0, -2.0]).unwrap();
        let a = Tensor::full(s(1, 1, 1, 1), 0.25);
        let y = forward(vec![x.clone(), a.clone()], |g, v| g.prelu(v[0], v[1])).unwrap();
        assert_eq!(y.data(), &[2.0, -0.5]);

        // d/da at x = -2 is -2
        let mut store = ParamStore::new();
        let ida = store.add("a", a).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.constant(Tensor::full(s(1, 1, 1, 1), -2.0));
        let av = g.param(ida);
        let y = g.prelu(xv, av).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(ida).unwrap().data(), &[-2.0]);

        let err = forward(vec![Tensor::zeros(s(1, 3, 2, 2)), Tensor::zeros(s(2, 1, 1, 1))], |g, v| g.prelu(v[0], v[1]));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn concat_and_add_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_t(s(2, 3, 8, 8), &mut rng);
        let b = rand_t(s(2, 5, 8, 8), &mut rng);
        let y = forward(vec![a.clone(), b], |g, v| g.concat(v)).unwrap();
        assert_eq!(y.shape(), s(2, 8, 8, 8));
        let one = forward(vec![a.clone()], |g, v| g.concat(v)).unwrap();
        assert_eq!(one, a);
        let bad = forward(vec![a.clone(), Tensor::zeros(s(2, 1, 4, 8))], |g, v| g.concat(v));
        assert!(matches!(bad, Err(Error::Dimension { .. })));

        let plus_zero = forward(vec![a.clone(), Tensor::zeros(a.shape())], |g, v| g.add(v[0], v[1])).unwrap();
        assert_eq!(plus_zero, a);
        let cancel = forward(vec![a.clone(), a.scale(-1.0)], |g, v| g.add(v[0], v[1])).unwrap();
        assert_eq!(cancel.max_abs(), 0.0);
        let bad = forward(vec![a, Tensor::zeros(s(2, 3, 8, 7))], |g, v| g.add(v[0], v[1]));
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    #[test]
    fn mae_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_t(s(1, 2, 3, 3), &mut rng);
        let same = forward(vec![t.clone()], |g, v| g.mae_loss(v[0], &t)).unwrap();
        assert_eq!(same.data(), &[0.0]);
        let shifted = t.map(|v| v + 0.5);
        let half = forward(vec![shifted], |g, v| g.mae_loss(v[0], &t)).unwrap();
        assert!((half.data()[0] - 0.5).abs() < 1e-15);

        // gradient is sign(pred - target) / count
        let mut store = ParamStore::new();
        let pred = rand_t(t.shape(), &mut rng);
        let id = store.add("p", pred.clone()).unwrap();
        let mut g = Graph::new(&store);
        let pv = g.param(id);
        let l = g.mae_loss(pv, &t).unwrap();
        let grads = g.backward(l).unwrap();
        for ((gv, p), q) in grads.get(id).unwrap().data().iter().zip(pred.data()).zip(t.data()) {
            assert_eq!(*gv, (p - q).signum() / 18.0);
        }
    }

    #[test]
    fn mae_subgradient_at_ties_is_zero() {
        let t = Tensor::full(s(1, 1, 1, 2), 1.0);
        let mut store = ParamStore::new();
        let id = store.add("p", t.clone()).unwrap();
        let mut g = Graph::new(&store);
        let pv = g.param(id);
        let l = g.mae_loss(pv, &t).unwrap();
        assert_eq!(g.backward(l).unwrap().get(id).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn pixel_shuffle_hand_enumerated() {
        // channel c at (y, x) goes to output (2y + c/2, 2x + c%2)
        let x = Tensor::from_fn(s(1, 4, 2, 2), |[_, c, y, xx]| (c * 10 + y * 2 + xx) as f64);
        let y = forward(vec![x], |g, v| g.pixel_shuffle(v[0], 2)).unwrap();
        assert_eq!(y.shape(), s(1, 1, 4, 4));
        let want = [
            [0.0, 10.0, 1.0, 11.0],
            [20.0, 30.0, 21.0, 31.0],
            [2.0, 12.0, 3.0, 13.0],
            [22.0, 32.0, 23.0, 33.0],
        ];
        for (r, row) in want.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(y.at(0, 0, r, c), v, "({r},{c})");
            }
        }
    }

    #[test]
    fn deconv_k4_s2_p1_doubles_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = forward(vec![rand_t(s(1, 3, 5, 4), &mut rng), rand_t(s(3, 2, 4, 4), &mut rng)], |g, v| {
            g.conv_transpose2d(v[0], v[1], None, 2, 1)
        })
        .unwrap();
        assert_eq!(y.shape(), s(1, 2, 10, 8));
    }

    #[test]
    fn every_op_passes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |sh: Shape| rand_t(sh, &mut rng);
        let cases: Vec<(&str, f64)> = vec![
            (
                "conv2d",
                check_op(vec![r(s(2, 3, 5, 5)), r(s(4, 3, 3, 3)), r(s(4, 1, 1, 1))], |g, v| {
                    g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
                }),
            ),
            (
                "conv2d narrow",
                check_op(vec![r(s(2, 5, 4, 4)), r(s(2, 5, 3, 3))], |g, v| g.conv2d(v[0], v[1], None, 1, 1)),
            ),
            (
                "conv2d strided",
                check_op(vec![r(s(1, 2, 5, 6)), r(s(3, 2, 3, 3))], |g, v| g.conv2d(v[0], v[1], None, 2, 1)),
            ),
            (
                "conv_transpose2d",
                check_op(vec![r(s(1, 3, 3, 3)), r(s(3, 2, 4, 4)), r(s(2, 1, 1, 1))], |g, v| {
                    g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
                }),
            ),
            (
                "prelu",
                check_op(vec![r(s(2, 3, 3, 3)), r(s(3, 1, 1, 1))], |g, v| g.prelu(v[0], v[1])),
            ),
            (
                "concat",
                check_op(vec![r(s(2, 1, 3, 3)), r(s(2, 2, 3, 3)), r(s(2, 1, 3, 3))], |g, v| g.concat(v)),
            ),
            ("add", check_op(vec![r(s(1, 2, 4, 4)), r(s(1, 2, 4, 4))], |g, v| g.add(v[0], v[1]))),
            (
                "idwt2",
                check_op(
                    vec![r(s(1, 2, 2, 3)), r(s(1, 2, 2, 3)), r(s(1, 2, 2, 3)), r(s(1, 2, 2, 3))],
                    |g, v| g.idwt2(v[0], v[1], v[2], v[3]),
                ),
            ),
            ("pixel_shuffle", check_op(vec![r(s(1, 8, 2, 3))], |g, v| g.pixel_shuffle(v[0], 2))),
        ];
        for (name, err) in cases {
            assert!(err < 1e-6, "{name}: {err}");
        }
        let target = r(s(1, 2, 3, 3));
        let mae = check_op(vec![r(s(1, 2, 3, 3))], move |g, v| g.mae_loss(v[0], &target));
        assert!(mae < 1e-4, "mae: {mae}");
    }

    #[test]
    fn linear_map_is_exact_under_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let err = check_op(vec![rand_t(s(1, 3, 1, 1), &mut rng), rand_t(s(2, 3, 1, 1), &mut rng)], |g, v| {
            g.conv2d(v[0], v[1], None, 1, 0)
        });
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn backward_needs_a_scalar() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::full(s(1, 1, 2, 2), 1.0)).unwrap();
        let mut g = Graph::new(&store);
        let x = g.param(id);
        let y = g.add(x, x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
        let inf = Graph::inference(&store);
        assert!(matches!(inf.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn reused_parameter_sums_contributions_and_accumulation_adds() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::full(s(1, 1, 1, 1), 3.0)).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(id);
            let y = g.add(x, x).unwrap();
            let y = g.add(y, x).unwrap();
            g.backward(y).unwrap()
        };
        assert_eq!(grads.get(id).unwrap().data(), &[3.0]);
        store.zero_grad();
        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.grad(id).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_is_bit_identical_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let w = store.add("w", rand_t(s(4, 3, 3, 3), &mut rng)).unwrap();
        let x = rand_t(s(2, 3, 6, 6), &mut rng);
        let t = rand_t(s(2, 4, 6, 6), &mut rng);
        let run = || {
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let wv = g.param(w);
            let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
            let l = g.mae_loss(y, &t).unwrap();
            g.backward(l).unwrap().get(w).unwrap().clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
