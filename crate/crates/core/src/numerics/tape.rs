//! Reverse-mode differentiation over a flat tape of dense tensors.
//!
//! Every node stores its forward value and the operation that produced it.
//! `backward` walks the tape from the last node to the first and accumulates
//! gradients additively. Primitives with structure worth exploiting (the gated
//! recursion, MoChA scans, fused additive scores) plug in through
//! [`CustomOp`] with their own backward rule.

use std::fmt;
use std::sync::Arc;

use super::mat::{axpy, dot, logistic, Mat64};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Read-only view of a node handed to custom operations.
#[derive(Clone, Copy, Debug)]
pub struct NodeRef<'a> {
    pub value: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl NodeRef<'_> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.value[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

/// A primitive with a hand-written backward rule.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns `(value, rows, cols)`.
    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize);

    /// Accumulates into `grad_inputs`, which arrive zeroed and sized like the inputs.
    fn backward(
        &self,
        inputs: &[NodeRef<'_>],
        output: &[f64],
        grad_output: &[f64],
        grad_inputs: &mut [Vec<f64>],
    );
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScalarMul(Var, Var),
    AddScalar(Var, Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    MatMulT(Var, Var),
    Dot(Var, Var),
    Sum(Var),
    Tanh(Var),
    Logistic(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Row(Var, usize),
    Slice(Var, usize),
    Pad(Var, usize),
    Reshape(Var),
    Softmax(Var),
    NegLogSoftmax(Var, usize),
    Clamp(Var, f64, f64),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(op, args) => write!(f, "Custom({}, {args:?})", op.name()),
            Op::Leaf => write!(f, "Leaf"),
            _ => write!(f, "Op"),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Recording of a computation. Single-threaded per example; build one tape
/// per training example and drop it after `backward`.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `v`, zeros if nothing flowed into it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(value, rows, cols, Op::Leaf)
    }

    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.leaf(value, n, 1)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(vec![x], 1, 1)
    }

    pub fn matrix(&mut self, m: &Mat64) -> Var {
        self.leaf(m.as_slice().to_vec(), m.rows(), m.cols())
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn node_ref(&self, v: Var) -> NodeRef<'_> {
        let n = &self.nodes[v.0];
        NodeRef {
            value: &n.value,
            rows: n.rows,
            cols: n.cols,
        }
    }

    fn vec_len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.vec_len(a), self.vec_len(b), "elementwise shape");
        let (rows, cols) = self.shape(a);
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(value, rows, cols, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(value, rows, cols, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| k * x, Op::Scale(a, k))
    }

    /// `s · v` with `s` a 1x1 node.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        let k = self.scalar_value(s);
        self.map(v, |x| k * x, Op::ScalarMul(s, v))
    }

    /// `v + s` broadcast, `s` a 1x1 node.
    pub fn add_scalar(&mut self, v: Var, s: Var) -> Var {
        let k = self.scalar_value(s);
        self.map(v, |x| x + k, Op::AddScalar(v, s))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let mr = self.node_ref(m);
        assert_eq!(mr.cols, self.vec_len(v), "matvec shape");
        let vv = self.value(v);
        let value: Vec<f64> = (0..mr.rows).map(|i| dot(mr.row(i), vv)).collect();
        let rows = mr.rows;
        self.push(value, rows, 1, Op::MatVec(m, v))
    }

    /// `mᵀ · v`.
    pub fn matvec_t(&mut self, m: Var, v: Var) -> Var {
        let mr = self.node_ref(m);
        assert_eq!(mr.rows, self.vec_len(v), "matvec_t shape");
        let vv = self.value(v);
        let mut out = vec![0.0; mr.cols];
        for (i, &vi) in vv.iter().enumerate() {
            axpy(vi, mr.row(i), &mut out);
        }
        let cols = mr.cols;
        self.push(out, cols, 1, Op::MatTVec(m, v))
    }

    /// `a · bᵀ` for `a: n x k`, `b: m x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let ar = self.node_ref(a);
        let br = self.node_ref(b);
        assert_eq!(ar.cols, br.cols, "matmul_t shape");
        let mut out = Vec::with_capacity(ar.rows * br.rows);
        for i in 0..ar.rows {
            for j in 0..br.rows {
                out.push(dot(ar.row(i), br.row(j)));
            }
        }
        let (n, m) = (ar.rows, br.rows);
        self.push(out, n, m, Op::MatMulT(a, b))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.vec_len(a), self.vec_len(b), "dot shape");
        let x = dot(self.value(a), self.value(b));
        self.push(vec![x], 1, 1, Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a).iter().fold(0.0, |acc, v| acc + v);
        self.push(vec![x], 1, 1, Op::Sum(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        self.map(a, logistic, Op::Logistic(a))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        self.push(value, n, 1, Op::Concat(parts.to_vec()))
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let cols = self.vec_len(rows[0]);
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            assert_eq!(self.vec_len(r), cols, "stack shape");
            value.extend_from_slice(self.value(r));
        }
        self.push(value, rows.len(), cols, Op::Stack(rows.to_vec()))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let mr = self.node_ref(m);
        assert!(i < mr.rows, "row index");
        let value = mr.row(i).to_vec();
        let cols = mr.cols;
        self.push(value, cols, 1, Op::Row(m, i))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let value = self.value(v)[start..start + len].to_vec();
        self.push(value, len, 1, Op::Slice(v, start))
    }

    /// Places `v` at `offset` inside a zero vector of length `total`.
    pub fn pad(&mut self, v: Var, offset: usize, total: usize) -> Var {
        let n = self.vec_len(v);
        assert!(offset + n <= total, "pad range");
        let mut value = vec![0.0; total];
        value[offset..offset + n].copy_from_slice(self.value(v));
        self.push(value, total, 1, Op::Pad(v, offset))
    }

    pub fn reshape(&mut self, v: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.vec_len(v), rows * cols, "reshape size");
        let value = self.value(v).to_vec();
        self.push(value, rows, cols, Op::Reshape(v))
    }

    pub fn softmax(&mut self, v: Var) -> Var {
        let value = softmax(self.value(v));
        let n = value.len();
        self.push(value, n, 1, Op::Softmax(v))
    }

    /// `-log softmax(logits)[target]`.
    pub fn neg_log_softmax(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        assert!(target < l.len(), "target out of range");
        let lse = super::lse::logsumexp(l);
        let x = lse - l[target];
        self.push(vec![x], 1, 1, Op::NegLogSoftmax(logits, target))
    }

    /// Elementwise clamp; gradient passes only where the input is inside `[lo, hi]`.
    pub fn clamp(&mut self, v: Var, lo: f64, hi: f64) -> Var {
        self.map(v, |x| x.clamp(lo, hi), Op::Clamp(v, lo, hi))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Var {
        let refs: Vec<NodeRef<'_>> = inputs.iter().map(|&v| self.node_ref(v)).collect();
        let (value, rows, cols) = op.forward(&refs);
        self.push(value, rows, cols, Op::Custom(op, inputs.to_vec()))
    }

    /// Reverse sweep seeded with `d output / d output = 1`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.vec_len(output), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, self, *a, |ga| axpy(1.0, g, ga));
                accumulate(grads, self, *b, |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                accumulate(grads, self, *a, |ga| axpy(1.0, g, ga));
                accumulate(grads, self, *b, |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, self, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                accumulate(grads, self, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, k) => accumulate(grads, self, *a, |ga| axpy(*k, g, ga)),
            Op::ScalarMul(s, v) => {
                let k = self.scalar_value(*s);
                let vv = self.value(*v);
                accumulate(grads, self, *s, |gs| gs[0] += dot(g, vv));
                accumulate(grads, self, *v, |gv| axpy(k, g, gv));
            }
            Op::AddScalar(v, s) => {
                accumulate(grads, self, *v, |gv| axpy(1.0, g, gv));
                accumulate(grads, self, *s, |gs| gs[0] += g.iter().sum::<f64>());
            }
            Op::MatVec(m, v) => {
                let mr = self.node_ref(*m);
                let vv = self.value(*v);
                accumulate(grads, self, *m, |gm| {
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(gi, vv, &mut gm[i * mr.cols..(i + 1) * mr.cols]);
                    }
                });
                accumulate(grads, self, *v, |gv| {
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(gi, mr.row(i), gv);
                    }
                });
            }
            Op::MatTVec(m, v) => {
                let mr = self.node_ref(*m);
                let vv = self.value(*v);
                accumulate(grads, self, *m, |gm| {
                    for (i, &vi) in vv.iter().enumerate() {
                        axpy(vi, g, &mut gm[i * mr.cols..(i + 1) * mr.cols]);
                    }
                });
                accumulate(grads, self, *v, |gv| {
                    for (i, gvi) in gv.iter_mut().enumerate() {
                        *gvi += dot(mr.row(i), g);
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let ar = self.node_ref(*a);
                let br = self.node_ref(*b);
                let k = ar.cols;
                accumulate(grads, self, *a, |ga| {
                    for i in 0..ar.rows {
                        for j in 0..br.rows {
                            axpy(g[i * br.rows + j], br.row(j), &mut ga[i * k..(i + 1) * k]);
                        }
                    }
                });
                accumulate(grads, self, *b, |gb| {
                    for i in 0..ar.rows {
                        for j in 0..br.rows {
                            axpy(g[i * br.rows + j], ar.row(i), &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, self, *a, |ga| axpy(g[0], bv, ga));
                accumulate(grads, self, *b, |gb| axpy(g[0], av, gb));
            }
            Op::Sum(a) => accumulate(grads, self, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Tanh(a) => accumulate(grads, self, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Logistic(a) => accumulate(grads, self, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.vec_len(p);
                    let seg = &g[off..off + n];
                    accumulate(grads, self, p, |gp| axpy(1.0, seg, gp));
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let cols = node.cols;
                for (i, &r) in rows.iter().enumerate() {
                    let seg = &g[i * cols..(i + 1) * cols];
                    accumulate(grads, self, r, |gr| axpy(1.0, seg, gr));
                }
            }
            Op::Row(m, i) => {
                let cols = node.rows;
                accumulate(grads, self, *m, |gm| {
                    axpy(1.0, g, &mut gm[i * cols..(i + 1) * cols])
                });
            }
            Op::Slice(v, start) => accumulate(grads, self, *v, |gv| {
                axpy(1.0, g, &mut gv[*start..*start + g.len()])
            }),
            Op::Pad(v, offset) => accumulate(grads, self, *v, |gv| {
                let n = gv.len();
                axpy(1.0, &g[*offset..*offset + n], gv)
            }),
            Op::Reshape(v) => accumulate(grads, self, *v, |gv| axpy(1.0, g, gv)),
            Op::Softmax(v) => {
                let yg = dot(out, g);
                accumulate(grads, self, *v, |gv| {
                    for i in 0..gv.len() {
                        gv[i] += out[i] * (g[i] - yg);
                    }
                });
            }
            Op::NegLogSoftmax(logits, target) => {
                let p = softmax(self.value(*logits));
                accumulate(grads, self, *logits, |gl| {
                    for i in 0..gl.len() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        gl[i] += g[0] * (p[i] - onehot);
                    }
                });
            }
            Op::Clamp(v, lo, hi) => {
                let vv = self.value(*v);
                accumulate(grads, self, *v, |gv| {
                    for i in 0..gv.len() {
                        if vv[i] >= *lo && vv[i] <= *hi {
                            gv[i] += g[i];
                        }
                    }
                });
            }
            Op::Custom(op, inputs) => {
                let refs: Vec<NodeRef<'_>> = inputs.iter().map(|&v| self.node_ref(v)).collect();
                let mut local: Vec<Vec<f64>> = refs.iter().map(|r| vec![0.0; r.len()]).collect();
                op.backward(&refs, out, g, &mut local);
                for (&v, gl) in inputs.iter().zip(&local) {
                    accumulate(grads, self, v, |gv| axpy(1.0, gl, gv));
                }
            }
        }
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    tape: &Tape,
    v: Var,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; tape.vec_len(v)]);
    f(slot);
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    /// Runs `build` as a scalar function of a random parameter vector and
    /// checks the tape gradient against central differences.
    fn check(n: usize, seeds: u64, build: impl Fn(&mut Tape, Var) -> Var) {
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rand_vec(&mut rng, n);
            let err = grad_check(|t, x| Ok(build(t, x)), &p, 1e-5).unwrap();
            assert!(err < 1e-6, "seed {seed}: relative error {err}");
        }
    }

    // Contracting every output with a fixed probe turns any op into a scalar.
    fn probe(t: &mut Tape, v: Var) -> Var {
        let n = t.value(v).len();
        let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * (i as f64).sin()).collect();
        let w = t.vector(w);
        t.dot(v, w)
    }

    #[test]
    fn elementwise_ops() {
        check(6, 8, |t, x| {
            let a = t.slice(x, 0, 3);
            let b = t.slice(x, 3, 3);
            let s = t.add(a, b);
            let d = t.sub(s, b);
            let m = t.mul(d, b);
            let th = t.tanh(m);
            let lg = t.logistic(th);
            let sc = t.scale(lg, -1.7);
            probe(t, sc)
        });
    }

    #[test]
    fn scalar_broadcast_ops() {
        check(5, 8, |t, x| {
            let s = t.slice(x, 0, 1);
            let v = t.slice(x, 1, 4);
            let a = t.scalar_mul(s, v);
            let b = t.add_scalar(a, s);
            probe(t, b)
        });
    }

    #[test]
    fn linear_ops() {
        check(6 + 3 + 2, 8, |t, x| {
            let mflat = t.slice(x, 0, 6);
            let m = t.reshape(mflat, 2, 3);
            let v3 = t.slice(x, 6, 3);
            let v2 = t.slice(x, 9, 2);
            let a = t.matvec(m, v3);
            let b = t.matvec_t(m, v2);
            let mm = t.matmul_t(m, m);
            let r = t.row(mm, 1);
            let ab = t.dot(a, v2);
            let bs = t.sum(b);
            let c = t.concat(&[a, r, ab, bs]);
            probe(t, c)
        });
    }

    #[test]
    fn structural_ops() {
        check(6, 8, |t, x| {
            let a = t.slice(x, 0, 2);
            let b = t.slice(x, 2, 2);
            let c = t.slice(x, 4, 2);
            let st = t.stack(&[a, b, c]);
            let r = t.row(st, 2);
            let p = t.pad(r, 1, 5);
            let sm = t.softmax(x);
            let all = t.concat(&[p, sm]);
            probe(t, all)
        });
    }

    #[test]
    fn cross_entropy_and_clamp() {
        check(5, 8, |t, x| {
            let ce = t.neg_log_softmax(x, 3);
            let cl = t.clamp(x, -1.5, 1.5);
            let s = t.sum(cl);
            t.add(ce, s)
        });
    }

    #[test]
    fn neg_log_softmax_value() {
        let mut t = Tape::new();
        let l = t.vector(vec![3f64.ln(), 0.0]);
        let ce = t.neg_log_softmax(l, 0);
        assert!((t.scalar_value(ce) - (-(0.75f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn backward_accumulates_shared_inputs() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.mul(x, x);
        let z = t.add(y, x);
        let g = t.backward(z);
        assert_eq!(g.get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        let y = t.scalar(2.0);
        let z = t.scale(x, 2.0);
        let g = t.backward(z);
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(&t, y), vec![0.0]);
    }
}
