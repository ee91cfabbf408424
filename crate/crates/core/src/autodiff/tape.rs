use std::collections::{BTreeMap, HashMap};

use crate::autodiff::store::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, S),
    Shift(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    Abs(Var),
    Mask(Var, Vec<bool>),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "multiply",
            Op::Div(..) => "divide",
            Op::Neg(..) => "negate",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Mask(..) => "mask",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
}

/// Index map for right-aligned broadcasting of two operands.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut p = vec![1; rank - s.len()];
            p.extend_from_slice(s);
            p
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::shape(op, a, b));
            }
            out_shape.push(x.max(y));
        }
        Ok(Broadcast {
            a_strides: Self::strides(&pa),
            b_strides: Self::strides(&pb),
            out_shape,
        })
    }

    /// Row-major strides with zero stride on broadcast (extent 1) axes.
    fn strides(shape: &[usize]) -> Vec<usize> {
        let mut strides = vec![0; shape.len()];
        let mut acc = 1;
        for d in (0..shape.len()).rev() {
            strides[d] = if shape[d] == 1 { 0 } else { acc };
            acc *= shape[d];
        }
        strides
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let numel: usize = self.out_shape.iter().product();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..numel {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * idx[d];
                ib -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

fn matmul_into<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Records operations on dense tensors for reverse-mode differentiation.
///
/// Parameters are pulled from an optional [`ParameterStore`]; pulling the same
/// name twice returns the same node so gradient contributions accumulate.
/// Every forward op fails immediately on a non-finite result.
pub struct Tape<'s, S: Scalar> {
    store: Option<&'s ParameterStore<S>>,
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    // values of stop-gradient nodes in creation order, and optional values to substitute
    stopped: Vec<Vec<S>>,
    replay: Option<Vec<Vec<S>>>,
}

impl<'s, S: Scalar> Tape<'s, S> {
    pub fn new(store: &'s ParameterStore<S>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
            stopped: Vec::new(),
            replay: None,
        }
    }

    /// A tape without parameters, for plain tensor computations.
    pub fn detached() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            params: HashMap::new(),
            stopped: Vec::new(),
            replay: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { shape, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        self.constant(Tensor::new(shape.to_vec(), data)?)
    }

    pub fn scalar(&mut self, x: S) -> Result<Var> {
        self.constant(Tensor::scalar(x))
    }

    /// Trainable leaf bound to a store entry.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = self
            .store
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .get(name)?
            .clone();
        let v = self.constant(t)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Current value of a store entry as a constant; gradients do not reach the store.
    pub fn frozen(&mut self, name: &str) -> Result<Var> {
        let t = self
            .store
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .get(name)?
            .clone();
        let shape = t.shape().to_vec();
        self.stop(shape, t.into_data())
    }

    /// Copy of `v` with no path back to its inputs.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.stop(shape, value)
    }

    fn stop(&mut self, shape: Vec<usize>, mut value: Vec<S>) -> Result<Var> {
        if let Some(replay) = &self.replay {
            let k = self.stopped.len();
            match replay.get(k) {
                Some(r) if r.len() == value.len() => value = r.clone(),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "stop-gradient node {k} does not match the recorded evaluation"
                    )))
                }
            }
        }
        self.stopped.push(value.clone());
        self.push(shape, value, Op::Leaf)
    }

    /// Substitutes recorded values for the stop-gradient nodes (`frozen`,
    /// `detach`) created on this tape, in creation order.
    pub fn replay_stopped(&mut self, values: Vec<Vec<S>>) {
        self.replay = Some(values);
    }

    /// Values of the stop-gradient nodes created so far.
    pub fn stopped_values(&self) -> &[Vec<S>] {
        &self.stopped
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node invariant")
    }

    /// First element; intended for single-element nodes.
    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].value[0]
    }

    /// Operation tag of the node that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Affine(x, w, b) => vec![*x, *w, *b],
            Op::Concat(vs) => vs.clone(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Slice(a, ..)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Mask(a, _) => vec![*a],
        }
    }

    // ----- elementwise binary -----

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<S>,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (shape, value) = if na.shape == nb.shape {
            let v = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
            (na.shape.clone(), v)
        } else {
            let bc = Broadcast::new(op.name(), &na.shape, &nb.shape)?;
            let mut v = vec![S::zero(); bc.out_shape.iter().product()];
            bc.for_each(|o, ia, ib| v[o] = f(na.value[ia], nb.value[ib]));
            (bc.out_shape, v)
        };
        self.push(shape, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[b.0].value.iter().any(|&y| y == S::zero()) {
            return Err(Error::Domain {
                op: "divide",
                detail: "division by zero".into(),
            });
        }
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    // ----- elementwise unary -----

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        self.push(shape, value, op)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn shift(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), S::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.nodes[a.0].value.iter().find(|&&x| x <= S::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {x}"),
            });
        }
        self.unary(a, Op::Log(a), S::ln)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), S::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(S::zero()))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), S::abs)
    }

    /// Moves entries closer than `eps` to `center` out to `center ± eps`.
    ///
    /// Returns the new node and the number of clamped entries. Clamped entries
    /// pass no gradient.
    pub fn clamp_away(&mut self, a: Var, center: S, eps: S) -> Result<(Var, usize)> {
        let n = &self.nodes[a.0];
        let mut keep = Vec::with_capacity(n.value.len());
        let mut value = Vec::with_capacity(n.value.len());
        for &x in &n.value {
            let d = x - center;
            if d.abs() < eps {
                keep.push(false);
                value.push(if d < S::zero() { center - eps } else { center + eps });
            } else {
                keep.push(true);
                value.push(x);
            }
        }
        let clamped = keep.iter().filter(|k| !**k).count();
        let shape = n.shape.clone();
        let v = self.push(shape, value, Op::Mask(a, keep))?;
        Ok((v, clamped))
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        matmul_into(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n, &mut out);
        self.push(vec![m, n], out, Op::MatMul(a, b))
    }

    /// `x · w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]` or `[1, n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            &self.nodes[b.0].shape,
        );
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("affine", sx, sw));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        if self.nodes[b.0].value.len() != n || sb.len() > 2 || (sb.len() == 2 && sb[0] != 1) {
            return Err(Error::shape("affine", sw, sb));
        }
        let bias = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        matmul_into(&self.nodes[x.0].value, &self.nodes[w.0].value, m, k, n, &mut out);
        self.push(vec![m, n], out, Op::Affine(x, w, b))
    }

    // ----- shape manipulation -----

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let lead = self.nodes[first.0].shape[..self.nodes[first.0].shape.len() - 1].to_vec();
        let mut total = 0;
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", &self.nodes[first.0].shape, s));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let n = &self.nodes[p.0];
                let w = *n.shape.last().unwrap();
                out.extend_from_slice(&n.value[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(shape, out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let n = &self.nodes[a.0];
        let w = *n.shape.last().unwrap();
        if start >= end || end > w {
            return Err(Error::shape("slice", &n.shape, &[start, end]));
        }
        let rows = n.value.len() / w;
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&n.value[r * w + start..r * w + end]);
        }
        let mut shape = n.shape.clone();
        *shape.last_mut().unwrap() = end - start;
        self.push(shape, out, Op::Slice(a, start, end))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = &self.nodes[a.0];
        if shape.iter().product::<usize>() != n.value.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &n.shape, shape));
        }
        let value = n.value.clone();
        self.push(shape.to_vec(), value, Op::Reshape(a))
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = &self.nodes[a.0].value;
        let s = n.iter().copied().sum::<S>() / S::lit(n.len() as f64);
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Sums over the last axis: `[m, n] -> [m]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let n = &self.nodes[a.0];
        let w = *n.shape.last().unwrap();
        let out: Vec<S> = n.value.chunks(w).map(|c| c.iter().copied().sum()).collect();
        let mut shape = n.shape[..n.shape.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(shape, out, Op::SumLast(a))
    }

    // ----- backward -----

    /// Reverse accumulation from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let rn = &self.nodes[root.0];
        if rn.value.len() != 1 {
            return Err(Error::NonScalarRoot(rn.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    let (da, db): (Box<dyn Fn(S, S) -> S>, Box<dyn Fn(S, S) -> S>) = match node.op
                    {
                        Op::Add(..) => (Box::new(|_, _| S::one()), Box::new(|_, _| S::one())),
                        Op::Sub(..) => (Box::new(|_, _| S::one()), Box::new(|_, _| -S::one())),
                        Op::Mul(..) => (Box::new(|_, y| y), Box::new(|x, _| x)),
                        _ => (
                            Box::new(|_, y| S::one() / y),
                            Box::new(|x, y| -x / (y * y)),
                        ),
                    };
                    // a and b may be the same node; accumulate sequentially.
                    let mut ga = vec![S::zero(); va.len()];
                    let mut gb = vec![S::zero(); vb.len()];
                    if sa == sb {
                        for k in 0..g.len() {
                            ga[k] += g[k] * da(va[k], vb[k]);
                            gb[k] += g[k] * db(va[k], vb[k]);
                        }
                    } else {
                        let bc = Broadcast::new(node.op.name(), sa, sb)?;
                        bc.for_each(|o, ia, ib| {
                            ga[ia] += g[o] * da(va[ia], vb[ib]);
                            gb[ib] += g[o] * db(va[ia], vb[ib]);
                        });
                    }
                    add_into(slot(lo, &self.nodes, *a), &ga);
                    add_into(slot(lo, &self.nodes, *b), &gb);
                }
                Op::Neg(a) => {
                    let t = slot(lo, &self.nodes, *a);
                    for (t, &g) in t.iter_mut().zip(g) {
                        *t -= g;
                    }
                }
                Op::Scale(a, c) => {
                    let t = slot(lo, &self.nodes, *a);
                    for (t, &g) in t.iter_mut().zip(g) {
                        *t += g * *c;
                    }
                }
                Op::Shift(a) | Op::Reshape(a) => add_into(slot(lo, &self.nodes, *a), g),
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let (ga, gb) = matmul_grads(
                        g,
                        &self.nodes[a.0].value,
                        &self.nodes[b.0].value,
                        m,
                        k,
                        n,
                    );
                    add_into(slot(lo, &self.nodes, *a), &ga);
                    add_into(slot(lo, &self.nodes, *b), &gb);
                }
                Op::Affine(x, w, b) => {
                    let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
                    let (m, k, n) = (sx[0], sx[1], sw[1]);
                    let (gx, gw) = matmul_grads(
                        g,
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        m,
                        k,
                        n,
                    );
                    let mut gbias = vec![S::zero(); n];
                    for row in g.chunks(n) {
                        add_into(&mut gbias, row);
                    }
                    add_into(slot(lo, &self.nodes, *x), &gx);
                    add_into(slot(lo, &self.nodes, *w), &gw);
                    add_into(slot(lo, &self.nodes, *b), &gbias);
                }
                Op::Concat(parts) => {
                    let total = *node.shape.last().unwrap();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for p in parts {
                        let w = *self.nodes[p.0].shape.last().unwrap();
                        let t = slot(lo, &self.nodes, *p);
                        for r in 0..rows {
                            for c in 0..w {
                                t[r * w + c] += g[r * total + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice(a, start, end) => {
                    let w = *self.nodes[a.0].shape.last().unwrap();
                    let sw = end - start;
                    let t = slot(lo, &self.nodes, *a);
                    for (r, row) in g.chunks(sw).enumerate() {
                        for (c, &gv) in row.iter().enumerate() {
                            t[r * w + start + c] += gv;
                        }
                    }
                }
                Op::Sum(a) => {
                    let t = slot(lo, &self.nodes, *a);
                    for t in t.iter_mut() {
                        *t += g[0];
                    }
                }
                Op::Mean(a) => {
                    let t = slot(lo, &self.nodes, *a);
                    let share = g[0] / S::lit(t.len() as f64);
                    for t in t.iter_mut() {
                        *t += share;
                    }
                }
                Op::SumLast(a) => {
                    let w = *self.nodes[a.0].shape.last().unwrap();
                    let t = slot(lo, &self.nodes, *a);
                    for (k, t) in t.iter_mut().enumerate() {
                        *t += g[k / w];
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] * y[k];
                    }
                }
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] / x[k];
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] * y[k] * (S::one() - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] * (S::one() - y[k] * y[k]);
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        if x[k] > S::zero() {
                            t[k] += g[k];
                        }
                    }
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] * sigmoid(x[k]);
                    }
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        t[k] += g[k] * (x[k] + x[k]);
                    }
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        if x[k] > S::zero() {
                            t[k] += g[k];
                        } else if x[k] < S::zero() {
                            t[k] -= g[k];
                        }
                    }
                }
                Op::Mask(a, keep) => {
                    let t = slot(lo, &self.nodes, *a);
                    for k in 0..t.len() {
                        if keep[k] {
                            t[k] += g[k];
                        }
                    }
                }
            }
        }

        let mut params = BTreeMap::new();
        if let Some(store) = self.store {
            for (name, value) in store.iter() {
                let data = match self.params.get(name).and_then(|v| grads.get(v.0)) {
                    Some(Some(g)) => g.clone(),
                    _ => vec![S::zero(); value.numel()],
                };
                params.insert(
                    name.to_string(),
                    Tensor::new(value.shape().to_vec(), data).expect("store shape"),
                );
            }
        }
        Ok(Gradients { per_node: grads, params })
    }
}

fn slot<'a, S: Scalar>(lo: &'a mut [Option<Vec<S>>], nodes: &[Node<S>], v: Var) -> &'a mut Vec<S> {
    lo[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.len()])
}

fn add_into<S: Scalar>(target: &mut [S], src: &[S]) {
    for (t, &s) in target.iter_mut().zip(src) {
        *t += s;
    }
}

/// Gradients of `a[m,k] · b[k,n]` given the upstream `g[m,n]`.
fn matmul_grads<S: Scalar>(
    g: &[S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<S>, Vec<S>) {
    let mut ga = vec![S::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    let mut gb = vec![S::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            for (t, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *t += aip * gv;
            }
        }
    }
    (ga, gb)
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    per_node: Vec<Option<Vec<S>>>,
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to any recorded node; `None` if the node does not reach the root.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every store entry, zero for entries the root does not depend on.
    pub fn params(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<S>> {
        self.params
    }
}
