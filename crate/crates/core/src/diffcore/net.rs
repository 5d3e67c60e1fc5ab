//! Fully connected networks with exact first-order derivatives.
//!
//! Parameters live in one flat vector. Canonical order is layer-major; within
//! a layer the `out × in` weight matrix comes first in row-major order,
//! followed by the `out` biases. Hidden layers apply the activation, the
//! output layer is affine.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Grads, Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Linear => x,
        }
    }

    /// First derivative. ReLU uses the subgradient 0 at the kink.
    pub fn deriv<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }

    /// First derivative expressed through the activation's output `a = σ(x)`.
    pub fn deriv_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }

    pub fn second_deriv<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                let two = T::one() + T::one();
                -two * t * (T::one() - t * t)
            }
            Activation::Relu | Activation::Linear => T::zero(),
        }
    }

    pub fn has_curvature(self) -> bool {
        matches!(self, Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// Activation slope `σ'(pre)` of every layer, output layer last.
    pub slope: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> DenseNet<T> {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn new(layer_sizes: Vec<usize>, activation: Activation, params: Vec<T>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must hold at least two positive entries, got {layer_sizes:?}"
            )));
        }
        check_dim("network parameters", Self::param_count(&layer_sizes), params.len())?;
        Ok(DenseNet {
            layer_sizes,
            activation,
            params,
        })
    }

    pub fn zeros(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let n = Self::param_count(&layer_sizes);
        Self::new(layer_sizes, activation, vec![T::zero(); n])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        layer_sizes: Vec<usize>,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut off = 0;
        for w in net.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = T::lit(rng.random_range(-limit..limit));
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Standard-normal-ish random parameters including biases; used by tests
    /// and property checks that need generic (non-zero bias) networks.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: Vec<usize>,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = Self::param_count(&layer_sizes);
        let params = (0..n).map(|_| T::lit(rng.random_range(-scale..scale))).collect();
        Self::new(layer_sizes, activation, params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        check_dim("network parameters", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for w in self.layer_sizes.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        (off, n_in, n_out)
    }

    /// Weight matrix (`out × in`) and bias of one layer.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, T>, ArrayView1<'_, T>) {
        let (off, n_in, n_out) = self.offsets(layer);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + n_in * n_out..off + n_in * n_out + n_out]);
        (w, b)
    }

    fn act_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            Activation::Linear
        } else {
            self.activation
        }
    }

    pub fn trace(&self, x: &[T]) -> Result<Trace<T>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut slope = Vec::with_capacity(self.n_layers());
        let mut a = ndarray::Array1::from(x.to_vec());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut y = w.dot(&a);
            y += &b;
            let kind = self.act_for(l);
            if kind != Activation::Linear {
                y.mapv_inplace(|v| kind.apply(v));
            }
            slope.push(y.iter().map(|&v| kind.deriv_from_output(v)).collect());
            a = y;
        }
        Ok(Trace {
            slope,
            output: a.to_vec(),
        })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.trace(x)?.output)
    }

    /// Forward pass over a batch stored column-wise (`in × batch`).
    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("network input", self.input_dim(), x.nrows())?;
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut y = w.dot(&a);
            y += &b.insert_axis(Axis(1));
            let kind = self.act_for(l);
            if kind != Activation::Linear {
                y.mapv_inplace(|v| kind.apply(v));
            }
            a = y;
        }
        Ok(a)
    }

    /// Vector-Jacobian product `wᵀ J(x)`.
    pub fn vjp(&self, x: &[T], w: &[T]) -> Result<Vec<T>> {
        check_dim("vjp cotangent", self.output_dim(), w.len())?;
        let tr = self.trace(x)?;
        Ok(self.vjp_traced(&tr, w))
    }

    pub fn vjp_traced(&self, tr: &Trace<T>, w: &[T]) -> Vec<T> {
        let mut delta = ndarray::Array1::from(w.to_vec());
        for l in (0..self.n_layers()).rev() {
            for (d, &s) in delta.iter_mut().zip(&tr.slope[l]) {
                *d *= s;
            }
            let (wm, _) = self.layer(l);
            delta = wm.t().dot(&delta);
        }
        delta.to_vec()
    }

    /// Jacobian-vector product `J(x) v`.
    pub fn jvp(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        check_dim("jvp tangent", self.input_dim(), v.len())?;
        let tr = self.trace(x)?;
        Ok(self.jvp_traced(&tr, v))
    }

    pub fn jvp_traced(&self, tr: &Trace<T>, v: &[T]) -> Vec<T> {
        let mut t = ndarray::Array1::from(v.to_vec());
        for l in 0..self.n_layers() {
            let (wm, _) = self.layer(l);
            t = wm.dot(&t);
            for (ti, &s) in t.iter_mut().zip(&tr.slope[l]) {
                *ti *= s;
            }
        }
        t.to_vec()
    }

    /// Gradient of a scalar-output network with respect to its input.
    pub fn grad_input(&self, x: &[T]) -> Result<Vec<T>> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "grad_input needs a scalar output, network has {} outputs",
                self.output_dim()
            )));
        }
        self.vjp(x, &[T::one()])
    }

    /// Full Jacobian (`out × in`), assembled column by column.
    pub fn jacobian(&self, x: &[T]) -> Result<Array2<T>> {
        let tr = self.trace(x)?;
        let n = self.input_dim();
        let mut jac = Array2::zeros((self.output_dim(), n));
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.jvp_traced(&tr, &e);
            jac.column_mut(j).assign(&ndarray::Array1::from(col));
            e[j] = T::zero();
        }
        Ok(jac)
    }

    /// Registers the parameters on a tape.
    pub fn on_tape(&self, tape: &mut Tape<T>) -> NetVars {
        let mut weights = Vec::with_capacity(self.n_layers());
        let mut biases = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            weights.push(tape.param(w.to_owned()));
            biases.push(tape.param(b.to_owned().insert_axis(Axis(1))));
        }
        NetVars {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights,
            biases,
        }
    }
}

/// Tape handles for the parameters of one [`DenseNet`].
#[derive(Clone, Debug)]
pub struct NetVars {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

/// Tape handles for one recorded forward pass.
#[derive(Clone, Debug)]
pub struct TapeTrace {
    pub pre: Vec<Var>,
    pub output: Var,
}

impl NetVars {
    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn act_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            Activation::Linear
        } else {
            self.activation
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    /// Batched forward pass; `x` is `in × batch`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> TapeTrace {
        let mut a = x;
        let mut pre = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let y = tape.matmul(self.weights[l], a);
            let y = tape.add_col(y, self.biases[l]);
            pre.push(y);
            let kind = self.act_for(l);
            a = if kind == Activation::Linear {
                y
            } else {
                tape.act(y, kind)
            };
        }
        TapeTrace { pre, output: a }
    }

    /// Batched `J(x) v` along a recorded trace; `v` is `in × batch`.
    pub fn jvp<T: Scalar>(&self, tape: &mut Tape<T>, tr: &TapeTrace, v: Var) -> Var {
        let mut t = v;
        for l in 0..self.n_layers() {
            t = tape.matmul(self.weights[l], t);
            let kind = self.act_for(l);
            if kind != Activation::Linear {
                let d = tape.act_deriv(tr.pre[l], kind);
                t = tape.mul(t, d);
            }
        }
        t
    }

    /// Batched `wᵀ J(x)` (returned as `in × batch`) along a recorded trace.
    pub fn vjp<T: Scalar>(&self, tape: &mut Tape<T>, tr: &TapeTrace, w: Var) -> Var {
        let mut delta = w;
        for l in (0..self.n_layers()).rev() {
            let kind = self.act_for(l);
            if kind != Activation::Linear {
                let d = tape.act_deriv(tr.pre[l], kind);
                delta = tape.mul(delta, d);
            }
            delta = tape.matmul_tn(self.weights[l], delta);
        }
        delta
    }

    /// Input gradient of a scalar-output network for every column.
    pub fn grad_input<T: Scalar>(&self, tape: &mut Tape<T>, tr: &TapeTrace) -> Var {
        assert_eq!(self.output_dim(), 1, "grad_input needs a scalar output");
        let cols = tape.shape(tr.output).1;
        let seed = tape.ones(1, cols);
        self.vjp(tape, tr, seed)
    }

    /// Gradient with respect to the flat parameter vector, canonical order.
    pub fn flat_grad<T: Scalar>(&self, grads: &Grads<T>, out: &mut Vec<T>) {
        for l in 0..self.n_layers() {
            let gw = grads.get(self.weights[l]);
            out.extend(gw.iter().copied());
            let gb = grads.get(self.biases[l]);
            out.extend(gb.iter().copied());
        }
    }
}
