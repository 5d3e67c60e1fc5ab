//! Matrix-valued Wengert tape for reverse-mode differentiation.
//!
//! Every node holds a dense `rows × cols` matrix. Batched evaluations put one
//! sample per column, so dense layers become GEMMs. Backward passes of a
//! network (input gradients, Jacobian actions) are themselves recorded as tape
//! operations, which makes them differentiable with respect to the network
//! parameters in a single reverse sweep.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::net::Activation;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `aᵀ · b`
    MatMulTn(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// `a + c·1ᵀ` with `c` a column.
    AddCol(Var, Var),
    /// `a ⊙ (1·r)` with `r` a row.
    MulRow(Var, Var),
    Act(Var, Activation),
    ActDeriv(Var, Activation),
    SumSq(Var),
    Sum(Var),
    ColSum(Var),
    Rows(Var, usize),
    VConcat(Vec<Var>),
    /// Per-column product with a `k × k` triangular matrix whose packed
    /// upper entries are the rows of `entries`.
    Tri {
        entries: Var,
        x: Var,
        k: usize,
        diag: bool,
        transpose: bool,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Packed upper-triangular index pairs `(row, col)`, row-major.
pub fn tri_pairs(k: usize, diag: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for r in 0..k {
        let start = if diag { r } else { r + 1 };
        for c in start..k {
            out.push((r, c));
        }
    }
    out
}

/// Number of packed entries of a `k × k` upper triangle.
pub fn tri_len(k: usize, diag: bool) -> usize {
    if diag {
        k * (k + 1) / 2
    } else {
        k * k.saturating_sub(1) / 2
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    adj: Vec<Option<Array2<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Grads<T> {
    /// Adjoint of `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Array2<T> {
        match &self.adj[v.0] {
            Some(a) => a.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array2<T>> {
        self.adj[v.0].as_ref()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Whether gradients flow through `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param_slice(&mut self, data: &[T], rows: usize, cols: usize) -> Var {
        let a = ArrayView2::from_shape((rows, cols), data)
            .expect("slice length matches shape")
            .to_owned();
        self.param(a)
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::from_elem((rows, cols), T::one()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).t().dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulTn(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        assert_eq!(c.ncols(), 1, "add_col expects a column");
        let v = self.value(a) + c;
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::AddCol(a, col), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "mul_row expects a row");
        let v = self.value(a) * r;
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn act(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).mapv(|x| kind.apply(x));
        let ng = self.ng(a);
        self.push(v, Op::Act(a, kind), ng)
    }

    /// Elementwise derivative of the activation, itself differentiable.
    pub fn act_deriv(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).mapv(|x| kind.deriv(x));
        let ng = self.ng(a) && kind.has_curvature();
        self.push(v, Op::ActDeriv(a, kind), ng)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|&x| x * x).sum::<T>();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), s), Op::SumSq(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), ng)
    }

    /// Sums each column, producing a row.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(v, Op::ColSum(a), ng)
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::Rows(a, start), ng)
    }

    pub fn vconcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("vconcat column counts agree");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::VConcat(parts.to_vec()), ng)
    }

    /// Per-column `T x` (or `Tᵀ x`), where column `s` of `entries` packs the
    /// upper triangle of sample `s`'s `k × k` matrix `T`.
    pub fn tri(&mut self, entries: Var, x: Var, k: usize, diag: bool, transpose: bool) -> Var {
        let e = self.value(entries);
        let xv = self.value(x);
        assert_eq!(e.nrows(), tri_len(k, diag));
        assert_eq!(xv.nrows(), k);
        let v = tri_apply(e.view(), xv.view(), k, diag, transpose);
        let ng = self.ng(entries) || self.ng(x);
        self.push(
            v,
            Op::Tri {
                entries,
                x,
                k,
                diag,
                transpose,
            },
            ng,
        )
    }

    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Reverse sweep from a `1 × 1` output. Adjoints are retained for leaf
    /// nodes only.
    pub fn backward(&self, out: Var) -> Grads<T> {
        let n = self.nodes.len();
        let mut adj: Vec<Option<Array2<T>>> = vec![None; n];
        let shapes = self.nodes.iter().map(|nd| nd.value.dim()).collect();
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        adj[out.0] = Some(Array2::from_elem((1, 1), T::one()));

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::MatMulTn(a, b) => {
                    if self.ng(*a) {
                        let ga = self.value(*b).dot(&g.t());
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).dot(&g);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut adj, *a, g.t().to_owned());
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut adj, *b, g.mapv(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut adj, *a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        accumulate(&mut adj, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj, *a, g.mapv(|x| x * c));
                }
                Op::AddCol(a, c) => {
                    if self.ng(*c) {
                        let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut adj, *c, gc);
                    }
                    if self.ng(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::MulRow(a, r) => {
                    if self.ng(*r) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut adj, *r, gr);
                    }
                    if self.ng(*a) {
                        accumulate(&mut adj, *a, &g * self.value(*r));
                    }
                }
                Op::Act(a, kind) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi = *gi * kind.deriv(x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::ActDeriv(a, kind) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi = *gi * kind.second_deriv(x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::SumSq(a) => {
                    let s = g[[0, 0]] + g[[0, 0]];
                    accumulate(&mut adj, *a, self.value(*a).mapv(|x| x * s));
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    accumulate(&mut adj, *a, Array2::from_elem(self.shape(*a), s));
                }
                Op::ColSum(a) => {
                    let (r, _) = self.shape(*a);
                    let ga = g
                        .broadcast((r, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    accumulate(&mut adj, *a, ga);
                }
                Op::Rows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut adj, *a, ga);
                }
                Op::VConcat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.shape(*p).0;
                        if self.ng(*p) {
                            let gp = g.slice(s![off..off + r, ..]).to_owned();
                            accumulate(&mut adj, *p, gp);
                        }
                        off += r;
                    }
                }
                Op::Tri {
                    entries,
                    x,
                    k,
                    diag,
                    transpose,
                } => {
                    let pairs = tri_pairs(*k, *diag);
                    let e = self.value(*entries);
                    let xv = self.value(*x);
                    if self.ng(*entries) {
                        let mut ge = Array2::zeros(e.dim());
                        for (p, &(r, c)) in pairs.iter().enumerate() {
                            // forward: out_r += e_p x_c  (or out_c += e_p x_r)
                            let (o, xi) = if *transpose { (c, r) } else { (r, c) };
                            let row = &g.row(o) * &xv.row(xi);
                            ge.row_mut(p).assign(&row);
                        }
                        accumulate(&mut adj, *entries, ge);
                    }
                    if self.ng(*x) {
                        let gx = tri_apply(e.view(), g.view(), *k, *diag, !*transpose);
                        accumulate(&mut adj, *x, gx);
                    }
                }
            }
        }
        Grads { adj, shapes }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut adj[v.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Per-column triangular product used by [`Tape::tri`].
pub fn tri_apply<T: Scalar>(
    entries: ArrayView2<T>,
    x: ArrayView2<T>,
    k: usize,
    diag: bool,
    transpose: bool,
) -> Array2<T> {
    let cols = x.ncols();
    let mut out = Array2::zeros((k, cols));
    for (p, (r, c)) in tri_pairs(k, diag).into_iter().enumerate() {
        let (o, xi) = if transpose { (c, r) } else { (r, c) };
        let ep = entries.row(p);
        let xr = x.row(xi);
        let mut orow = out.row_mut(o);
        Zip::from(&mut orow)
            .and(&ep)
            .and(&xr)
            .for_each(|o, &e, &xv| *o += e * xv);
    }
    out
}
