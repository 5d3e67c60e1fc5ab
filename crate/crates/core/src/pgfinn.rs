//! Parametric GENERIC network.
//!
//! The latent field is `ż = L(z,μ) ∇E(z,μ) + M(z,μ) ∇S(z,μ)` with
//!
//! * `L = Q_Sᵀ (T_Lᵀ − T_L) Q_S`, row `j` of `Q_S` equal to `(S_j ∇S)ᵀ`,
//! * `M = Q_Eᵀ (T_Mᵀ T_M) Q_E`, row `j` of `Q_E` equal to `(S'_j ∇E)ᵀ`,
//!
//! where `S_j = W_j − W_jᵀ` are constant skew matrices and `T_L` (strictly
//! upper) and `T_M` (upper with diagonal) are produced by networks of
//! `(z, μ)`. Skewness of every `S_j` gives `Q_S ∇S = 0` and `Q_E ∇E = 0`,
//! hence both degeneracy conditions hold for any parameter values.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::tape::{tri_len, tri_pairs};
use crate::diffcore::{Activation, Checkpoint, DenseNet, Grads, NetVars, Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, dot, Scalar};
use crate::systems::System;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Energy,
    Entropy,
}

/// Closed-form energy or entropy of a reference system, used in place of a
/// learned scalar network when the latent state is the physical state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownPotential {
    pub system: System,
    pub quantity: Quantity,
}

impl KnownPotential {
    pub fn value<T: Scalar>(&self, z: &[T], mu: &[T]) -> Result<T> {
        let (e, s) = self.system.energy_entropy(z, mu)?;
        Ok(match self.quantity {
            Quantity::Energy => e,
            Quantity::Entropy => s,
        })
    }

    pub fn grad<T: Scalar>(&self, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        match self.quantity {
            Quantity::Energy => self.system.energy_grad(z, mu),
            Quantity::Entropy => self.system.entropy_grad(z, mu),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Potential<T> {
    Net(DenseNet<T>),
    Known(KnownPotential),
}

impl<T: Scalar> Potential<T> {
    fn n_params(&self) -> usize {
        match self {
            Potential::Net(n) => n.params().len(),
            Potential::Known(_) => 0,
        }
    }
}

/// Which operator a `Q` matrix feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    /// Reversible part; rows built from `∇S`.
    L,
    /// Irreversible part; rows built from `∇E`.
    M,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PGFinnConfig {
    pub latent_dim: usize,
    pub param_dim: usize,
    /// Number of skew basis matrices per operator; `None` means `latent_dim`.
    pub k: Option<usize>,
    /// Affine layers per network.
    pub layers: usize,
    pub width: usize,
    pub activation: Activation,
    /// Parameter box mapped onto `[-1, 1]` before entering the networks.
    /// Empty means μ is fed as is.
    pub param_lower: Vec<f64>,
    pub param_upper: Vec<f64>,
}

impl Default for PGFinnConfig {
    fn default() -> Self {
        PGFinnConfig {
            latent_dim: 5,
            param_dim: 2,
            k: None,
            layers: 5,
            width: 40,
            activation: Activation::Tanh,
            param_lower: vec![],
            param_upper: vec![],
        }
    }
}

impl PGFinnConfig {
    pub fn k(&self) -> usize {
        self.k.unwrap_or(self.latent_dim)
    }

    fn sizes(&self, out: usize) -> Vec<usize> {
        let mut s = vec![self.latent_dim + self.param_dim];
        s.extend(std::iter::repeat_n(self.width, self.layers.saturating_sub(1)));
        s.push(out);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.k() == 0 || self.layers == 0 || (self.layers > 1 && self.width == 0) {
            return Err(Error::InvalidArgument(format!("invalid pGFINN configuration {self:?}")));
        }
        check_param_range(self.param_dim, &self.param_lower, &self.param_upper)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PGFinn<T> {
    latent_dim: usize,
    param_dim: usize,
    k: usize,
    param_lower: Vec<f64>,
    param_upper: Vec<f64>,
    pub energy: Potential<T>,
    pub entropy: Potential<T>,
    /// Absent when `k = 1` (a 1 × 1 skew matrix vanishes).
    pub tri_l: Option<DenseNet<T>>,
    pub tri_m: DenseNet<T>,
    /// Raw `W_j`, `k` row-major `d × d` blocks.
    pub basis_l: Vec<T>,
    pub basis_m: Vec<T>,
}

/// Everything a single field evaluation produces.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval<T> {
    pub grad_e: Vec<T>,
    pub grad_s: Vec<T>,
    pub zdot: Vec<T>,
    /// `∇Sᵀ M ∇S`, computed as a sum of squares.
    pub entropy_rate: T,
}

/// Structural diagnostics at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport<T> {
    /// `‖L + Lᵀ‖∞` (max-abs entry).
    pub skew_l: T,
    /// `‖M − Mᵀ‖∞`.
    pub sym_m: T,
    /// `‖L ∇S‖∞`.
    pub degen_l: T,
    /// `‖M ∇E‖∞`.
    pub degen_m: T,
    /// Round-off scale `‖|Q_S|ᵀ|B_L||Q_S||∇S|‖∞`.
    pub scale_l: T,
    pub scale_m: T,
    /// Smallest `vᵀMv / ‖v‖²` over coordinate and pairwise probe vectors.
    pub min_quadratic: T,
    /// `max|M|`, for relating `min_quadratic` to round-off.
    pub scale_quadratic: T,
}

impl<T: Scalar> StructureReport<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.skew_l <= tol
            && self.sym_m <= tol
            && self.degen_l <= tol * (T::one() + self.scale_l)
            && self.degen_m <= tol * (T::one() + self.scale_m)
            && self.min_quadratic >= -tol * (T::one() + self.scale_quadratic)
    }
}

fn check_param_range(param_dim: usize, lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() && upper.is_empty() {
        return Ok(());
    }
    check_dim("parameter range lower bounds", param_dim, lower.len())?;
    check_dim("parameter range upper bounds", param_dim, upper.len())?;
    if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && u > l)) {
        return Err(Error::InvalidArgument(format!("invalid parameter range {lower:?}..{upper:?}")));
    }
    Ok(())
}

fn skew_from_raw<T: Scalar>(raw: &[T], d: usize) -> Array2<T> {
    let w = ArrayView2::from_shape((d, d), raw).expect("d × d block");
    &w - &w.t()
}

fn max_abs<'a, T: Scalar + 'a>(it: impl IntoIterator<Item = &'a T>) -> T {
    it.into_iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

impl<T: Scalar> PGFinn<T> {
    /// Learned energy and entropy networks, Glorot-initialized.
    pub fn new<R: Rng + ?Sized>(cfg: &PGFinnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let energy = Potential::Net(DenseNet::glorot(cfg.sizes(1), cfg.activation, rng)?);
        let entropy = Potential::Net(DenseNet::glorot(cfg.sizes(1), cfg.activation, rng)?);
        Self::build(cfg, energy, entropy, rng)
    }

    /// Known energy and entropy; only the operator parts are trainable.
    pub fn with_known<R: Rng + ?Sized>(cfg: &PGFinnConfig, system: &System, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if !system.has_closed_form_thermo() {
            return Err(Error::InvalidArgument(format!(
                "system {} has no closed-form energy and entropy",
                system.tag()
            )));
        }
        check_dim("latent dimension of known-function model", system.state_dim(), cfg.latent_dim)?;
        check_dim("parameter dimension of known-function model", system.param_dim(), cfg.param_dim)?;
        let known = |quantity| {
            Potential::Known(KnownPotential {
                system: system.clone(),
                quantity,
            })
        };
        Self::build(cfg, known(Quantity::Energy), known(Quantity::Entropy), rng)
    }

    fn build<R: Rng + ?Sized>(cfg: &PGFinnConfig, energy: Potential<T>, entropy: Potential<T>, rng: &mut R) -> Result<Self> {
        let (d, k) = (cfg.latent_dim, cfg.k());
        let tri_l = match tri_len(k, false) {
            0 => None,
            n => Some(DenseNet::glorot(cfg.sizes(n), cfg.activation, rng)?),
        };
        let tri_m = DenseNet::glorot(cfg.sizes(tri_len(k, true)), cfg.activation, rng)?;
        let limit = (3.0 / d as f64).sqrt();
        let mut basis = || (0..k * d * d).map(|_| T::lit(rng.random_range(-limit..limit))).collect::<Vec<T>>();
        let basis_l = basis();
        let basis_m = basis();
        Ok(PGFinn {
            latent_dim: d,
            param_dim: cfg.param_dim,
            k,
            param_lower: cfg.param_lower.clone(),
            param_upper: cfg.param_upper.clone(),
            energy,
            entropy,
            tri_l,
            tri_m,
            basis_l,
            basis_m,
        })
    }

    /// Assembles a model from explicit parts.
    pub fn from_parts(
        latent_dim: usize,
        param_dim: usize,
        k: usize,
        energy: Potential<T>,
        entropy: Potential<T>,
        tri_l: Option<DenseNet<T>>,
        tri_m: DenseNet<T>,
        basis_l: Vec<T>,
        basis_m: Vec<T>,
    ) -> Result<Self> {
        let m = PGFinn {
            latent_dim,
            param_dim,
            k,
            param_lower: vec![],
            param_upper: vec![],
            energy,
            entropy,
            tri_l,
            tri_m,
            basis_l,
            basis_m,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.latent_dim, self.k);
        if d == 0 || k == 0 {
            return Err(Error::InvalidArgument("pGFINN needs d > 0 and K > 0".into()));
        }
        let input = d + self.param_dim;
        for pot in [&self.energy, &self.entropy] {
            if let Potential::Net(n) = pot {
                check_dim("scalar network input", input, n.input_dim())?;
                check_dim("scalar network output", 1, n.output_dim())?;
            }
        }
        match (&self.tri_l, tri_len(k, false)) {
            (None, 0) => {}
            (Some(n), len) if len > 0 => {
                check_dim("T_L network input", input, n.input_dim())?;
                check_dim("T_L network output", len, n.output_dim())?;
            }
            _ => return Err(Error::InvalidArgument("T_L network presence does not match K".into())),
        }
        check_dim("T_M network input", input, self.tri_m.input_dim())?;
        check_dim("T_M network output", tri_len(k, true), self.tri_m.output_dim())?;
        check_dim("L skew basis", k * d * d, self.basis_l.len())?;
        check_dim("M skew basis", k * d * d, self.basis_m.len())?;
        check_param_range(self.param_dim, &self.param_lower, &self.param_upper)
    }

    /// Sets the parameter box that is mapped onto `[-1, 1]`; empty slices
    /// switch the map off.
    pub fn with_param_range(mut self, lower: &[f64], upper: &[f64]) -> Result<Self> {
        check_param_range(self.param_dim, lower, upper)?;
        self.param_lower = lower.to_vec();
        self.param_upper = upper.to_vec();
        Ok(self)
    }

    pub fn param_range(&self) -> Option<(&[f64], &[f64])> {
        (!self.param_lower.is_empty()).then_some((&self.param_lower, &self.param_upper))
    }

    fn scale_param(&self, i: usize, m: T) -> T {
        if self.param_lower.is_empty() {
            return m;
        }
        let (lo, hi) = (T::lit(self.param_lower[i]), T::lit(self.param_upper[i]));
        T::lit(2.0) * (m - lo) / (hi - lo) - T::one()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn has_known_potentials(&self) -> bool {
        matches!(self.energy, Potential::Known(_)) || matches!(self.entropy, Potential::Known(_))
    }

    fn input(&self, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        check_dim("latent state", self.latent_dim, z.len())?;
        check_dim("parameter vector", self.param_dim, mu.len())?;
        let mut x = Vec::with_capacity(z.len() + mu.len());
        x.extend_from_slice(z);
        x.extend(mu.iter().enumerate().map(|(i, &m)| self.scale_param(i, m)));
        Ok(x)
    }

    fn potential_value(&self, pot: &Potential<T>, z: &[T], mu: &[T]) -> Result<T> {
        let x = self.input(z, mu)?;
        match pot {
            Potential::Net(n) => Ok(n.forward(&x)?[0]),
            Potential::Known(k) => k.value(z, mu),
        }
    }

    fn potential_grad(&self, pot: &Potential<T>, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        let x = self.input(z, mu)?;
        match pot {
            Potential::Net(n) => {
                let mut g = n.grad_input(&x)?;
                g.truncate(self.latent_dim);
                Ok(g)
            }
            Potential::Known(k) => k.grad(z, mu),
        }
    }

    pub fn energy(&self, z: &[T], mu: &[T]) -> Result<T> {
        self.potential_value(&self.energy, z, mu)
    }

    pub fn entropy(&self, z: &[T], mu: &[T]) -> Result<T> {
        self.potential_value(&self.entropy, z, mu)
    }

    pub fn grad_energy(&self, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        self.potential_grad(&self.energy, z, mu)
    }

    pub fn grad_entropy(&self, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        self.potential_grad(&self.entropy, z, mu)
    }

    /// The realized skew matrices `S_j` of one operator.
    pub fn skew_basis(&self, which: Operator) -> Vec<Array2<T>> {
        let d = self.latent_dim;
        let raw = match which {
            Operator::L => &self.basis_l,
            Operator::M => &self.basis_m,
        };
        raw.chunks_exact(d * d).map(|c| skew_from_raw(c, d)).collect()
    }

    /// Dense `K × K` triangular factor `T_L` (strictly upper) or `T_M`
    /// (upper including the diagonal).
    pub fn tri_matrix(&self, which: Operator, z: &[T], mu: &[T]) -> Result<Array2<T>> {
        let x = self.input(z, mu)?;
        let k = self.k;
        let mut t = Array2::zeros((k, k));
        let (net, diag) = match which {
            Operator::L => (self.tri_l.as_ref(), false),
            Operator::M => (Some(&self.tri_m), true),
        };
        if let Some(net) = net {
            let e = net.forward(&x)?;
            for (p, (r, c)) in tri_pairs(k, diag).into_iter().enumerate() {
                t[[r, c]] = e[p];
            }
        }
        Ok(t)
    }

    /// `B_L = T_Lᵀ − T_L` or `B_M = T_Mᵀ T_M`.
    pub fn b_matrix(&self, which: Operator, z: &[T], mu: &[T]) -> Result<Array2<T>> {
        let t = self.tri_matrix(which, z, mu)?;
        Ok(match which {
            Operator::L => &t.t() - &t,
            Operator::M => t.t().dot(&t),
        })
    }

    /// `K × d` matrix with rows `(S_j ∇G)ᵀ`; `G = S` for `L`, `G = E` for `M`.
    pub fn assemble_q(&self, which: Operator, z: &[T], mu: &[T]) -> Result<Array2<T>> {
        let g = match which {
            Operator::L => self.grad_entropy(z, mu)?,
            Operator::M => self.grad_energy(z, mu)?,
        };
        Ok(self.q_from_grad(which, &g))
    }

    fn q_from_grad(&self, which: Operator, g: &[T]) -> Array2<T> {
        let gv = ndarray::ArrayView1::from(g);
        let basis = self.skew_basis(which);
        let mut q = Array2::zeros((self.k, self.latent_dim));
        for (j, s) in basis.iter().enumerate() {
            q.row_mut(j).assign(&s.dot(&gv));
        }
        q
    }

    /// `L = Q_Sᵀ B_L Q_S`, formed as `Pᵀ − P` with `P = Q_Sᵀ T_L Q_S` so the
    /// result is exactly skew in floating point.
    pub fn operator_l(&self, z: &[T], mu: &[T]) -> Result<Array2<T>> {
        let q = self.assemble_q(Operator::L, z, mu)?;
        let t = self.tri_matrix(Operator::L, z, mu)?;
        let p = q.t().dot(&t.dot(&q));
        Ok(&p.t() - &p)
    }

    /// `M = Q_Eᵀ T_Mᵀ T_M Q_E`, formed as `YᵀY` with `Y = T_M Q_E`.
    pub fn operator_m(&self, z: &[T], mu: &[T]) -> Result<Array2<T>> {
        let q = self.assemble_q(Operator::M, z, mu)?;
        let t = self.tri_matrix(Operator::M, z, mu)?;
        let y = t.dot(&q);
        Ok(y.t().dot(&y))
    }

    /// Field evaluation contracted through `K`-vectors, never forming `L`
    /// or `M`.
    pub fn eval(&self, z: &[T], mu: &[T]) -> Result<FieldEval<T>> {
        let grad_e = self.grad_energy(z, mu)?;
        let grad_s = self.grad_entropy(z, mu)?;
        let (d, k) = (self.latent_dim, self.k);
        let x = self.input(z, mu)?;
        let mut zdot = vec![T::zero(); d];

        // L ∇E = Q_Sᵀ (T_Lᵀ − T_L) (Q_S ∇E)
        let q_l = self.q_from_grad(Operator::L, &grad_s);
        if let Some(net) = &self.tri_l {
            let e = net.forward(&x)?;
            let c: Vec<T> = (0..k).map(|j| dot(q_l.row(j).as_slice().expect("row"), &grad_e)).collect();
            let mut b = vec![T::zero(); k];
            for (p, (r, col)) in tri_pairs(k, false).into_iter().enumerate() {
                b[col] += e[p] * c[r];
                b[r] -= e[p] * c[col];
            }
            for j in 0..k {
                for i in 0..d {
                    zdot[i] += q_l[[j, i]] * b[j];
                }
            }
        }

        // M ∇S = Q_Eᵀ T_Mᵀ T_M (Q_E ∇S)
        let q_m = self.q_from_grad(Operator::M, &grad_e);
        let e = self.tri_m.forward(&x)?;
        let c: Vec<T> = (0..k).map(|j| dot(q_m.row(j).as_slice().expect("row"), &grad_s)).collect();
        let pairs = tri_pairs(k, true);
        let mut y = vec![T::zero(); k];
        for (p, &(r, col)) in pairs.iter().enumerate() {
            y[r] += e[p] * c[col];
        }
        let mut w = vec![T::zero(); k];
        for (p, &(r, col)) in pairs.iter().enumerate() {
            w[col] += e[p] * y[r];
        }
        for j in 0..k {
            for i in 0..d {
                zdot[i] += q_m[[j, i]] * w[j];
            }
        }
        let entropy_rate = y.iter().map(|&v| v * v).sum();
        if !all_finite(&zdot) {
            return Err(Error::NonFinite(format!("pGFINN field at z={z:?}")));
        }
        Ok(FieldEval {
            grad_e,
            grad_s,
            zdot,
            entropy_rate,
        })
    }

    /// `ż = L ∇E + M ∇S`.
    pub fn vector_field(&self, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        Ok(self.eval(z, mu)?.zdot)
    }

    /// Time-dependent signature; the GENERIC field is autonomous, so `t` is
    /// ignored.
    pub fn vector_field_at(&self, _t: T, z: &[T], mu: &[T]) -> Result<Vec<T>> {
        self.vector_field(z, mu)
    }

    /// Skewness, symmetry, degeneracy and semi-definiteness at one point.
    pub fn check_structure(&self, z: &[T], mu: &[T]) -> Result<StructureReport<T>> {
        let ge = self.grad_energy(z, mu)?;
        let gs = self.grad_entropy(z, mu)?;
        let l = self.operator_l(z, mu)?;
        let m = self.operator_m(z, mu)?;
        let d = self.latent_dim;
        let gsv = ndarray::ArrayView1::from(&gs);
        let gev = ndarray::ArrayView1::from(&ge);
        let skew_l = max_abs((&l + &l.t()).iter());
        let sym_m = max_abs((&m - &m.t()).iter());
        let degen_l = max_abs(l.dot(&gsv).iter());
        let degen_m = max_abs(m.dot(&gev).iter());

        let abs_scale = |q: &Array2<T>, b: &Array2<T>, g: &[T]| {
            let qa = q.mapv(|v| v.abs());
            let ba = b.mapv(|v| v.abs());
            let ga = ndarray::Array1::from_iter(g.iter().map(|v| v.abs()));
            max_abs(qa.t().dot(&ba.dot(&qa.dot(&ga))).iter())
        };
        let q_l = self.q_from_grad(Operator::L, &gs);
        let q_m = self.q_from_grad(Operator::M, &ge);
        let t_l = self.tri_matrix(Operator::L, z, mu)?;
        let t_m = self.tri_matrix(Operator::M, z, mu)?;
        let b_l = t_l.t().mapv(|v| v.abs()) + t_l.mapv(|v| v.abs());
        let b_m = t_m.t().mapv(|v| v.abs()).dot(&t_m.mapv(|v| v.abs()));
        let scale_l = abs_scale(&q_l, &b_l, &gs);
        let scale_m = abs_scale(&q_m, &b_m, &ge);

        let mut min_q = T::infinity();
        let quad = |v: &ndarray::Array1<T>| {
            let n2 = v.dot(v);
            v.dot(&m.dot(v)) / n2
        };
        for i in 0..d {
            let mut v = ndarray::Array1::zeros(d);
            v[i] = T::one();
            min_q = min_q.min(quad(&v));
            for j in i + 1..d {
                for sgn in [T::one(), -T::one()] {
                    let mut w = v.clone();
                    w[j] = sgn;
                    min_q = min_q.min(quad(&w));
                }
            }
        }
        Ok(StructureReport {
            skew_l,
            sym_m,
            degen_l,
            degen_m,
            scale_l,
            scale_m,
            min_quadratic: min_q,
            scale_quadratic: max_abs(m.iter()),
        })
    }

    pub fn n_params(&self) -> usize {
        self.energy.n_params()
            + self.entropy.n_params()
            + self.tri_l.as_ref().map_or(0, |n| n.params().len())
            + self.tri_m.params().len()
            + self.basis_l.len()
            + self.basis_m.len()
    }

    /// Trainable parameters in canonical order: energy net, entropy net,
    /// `T_L` net, `T_M` net, raw `L` basis, raw `M` basis. Known potentials
    /// contribute nothing.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for pot in [&self.energy, &self.entropy] {
            if let Potential::Net(n) = pot {
                out.extend_from_slice(n.params());
            }
        }
        if let Some(n) = &self.tri_l {
            out.extend_from_slice(n.params());
        }
        out.extend_from_slice(self.tri_m.params());
        out.extend_from_slice(&self.basis_l);
        out.extend_from_slice(&self.basis_m);
        out
    }

    pub fn set_flat_params(&mut self, p: &[T]) -> Result<()> {
        check_dim("pGFINN parameters", self.n_params(), p.len())?;
        let mut off = 0;
        let mut take = |dst: &mut [T]| {
            dst.copy_from_slice(&p[off..off + dst.len()]);
            off += dst.len();
        };
        for pot in [&mut self.energy, &mut self.entropy] {
            if let Potential::Net(n) = pot {
                take(n.params_mut());
            }
        }
        if let Some(n) = &mut self.tri_l {
            take(n.params_mut());
        }
        take(self.tri_m.params_mut());
        take(&mut self.basis_l);
        take(&mut self.basis_m);
        Ok(())
    }

    /// Registers every trainable block on a tape.
    pub fn on_tape(&self, tape: &mut Tape<T>) -> PGFinnVars {
        let d = self.latent_dim;
        let pot = |p: &Potential<T>, tape: &mut Tape<T>| match p {
            Potential::Net(n) => Some(n.on_tape(tape)),
            Potential::Known(_) => None,
        };
        let energy = pot(&self.energy, tape);
        let entropy = pot(&self.entropy, tape);
        let tri_l = self.tri_l.as_ref().map(|n| n.on_tape(tape));
        let tri_m = self.tri_m.on_tape(tape);
        let basis = |raw: &[T], tape: &mut Tape<T>| {
            let raw_vars: Vec<Var> = raw.chunks_exact(d * d).map(|c| tape.param_slice(c, d, d)).collect();
            let skew = raw_vars
                .iter()
                .map(|&w| {
                    let wt = tape.transpose(w);
                    tape.sub(w, wt)
                })
                .collect();
            (raw_vars, skew)
        };
        let (raw_l, skew_l) = basis(&self.basis_l, tape);
        let (raw_m, skew_m) = basis(&self.basis_m, tape);
        PGFinnVars {
            d,
            k: self.k,
            energy,
            entropy,
            tri_l,
            tri_m,
            raw_l,
            raw_m,
            skew_l,
            skew_m,
        }
    }

    /// Loss value and gradient over all trainables, for a loss built from the
    /// batched field. `z` is `d × B`, `mu` is `N_μ × B`.
    pub fn field_param_grad<F>(&self, z: ArrayView2<T>, mu: ArrayView2<T>, loss: F) -> Result<(T, Vec<T>)>
    where
        F: FnOnce(&mut Tape<T>, &FieldVars) -> Var,
    {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape);
        let zv = tape.constant(z.to_owned());
        let mv = tape.constant(mu.to_owned());
        let field = vars.field(self, &mut tape, zv, mv)?;
        let out = loss(&mut tape, &field);
        let value = tape.scalar(out);
        if !value.is_finite() {
            return Err(Error::NonFinite("pGFINN loss".into()));
        }
        let grads = tape.backward(out);
        let mut g = Vec::with_capacity(self.n_params());
        vars.flat_grad(&grads, &mut g);
        Ok((value, g))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.latent_dim;
        let pot = |p: &Potential<T>, name: &str| -> Result<PotentialEntry> {
            Ok(match p {
                Potential::Net(n) => {
                    let file = format!("{name}.ckpt");
                    Checkpoint::from_net(name, n, 0, 0, 0).save(&dir.join(&file))?;
                    PotentialEntry::Net { file }
                }
                Potential::Known(k) => PotentialEntry::Known(k.clone()),
            })
        };
        let energy = pot(&self.energy, "energy")?;
        let entropy = pot(&self.entropy, "entropy")?;
        let tri_l = match &self.tri_l {
            Some(n) => {
                Checkpoint::from_net("tri_l", n, 0, 0, 0).save(&dir.join("tri_l.ckpt"))?;
                Some("tri_l.ckpt".to_string())
            }
            None => None,
        };
        Checkpoint::from_net("tri_m", &self.tri_m, 0, 0, 0).save(&dir.join("tri_m.ckpt"))?;
        let shape = vec![self.k, d, d];
        Checkpoint::from_tensor("basis_l", shape.clone(), &self.basis_l, 0, 0, 0).save(&dir.join("basis_l.ckpt"))?;
        Checkpoint::from_tensor("basis_m", shape, &self.basis_m, 0, 0, 0).save(&dir.join("basis_m.ckpt"))?;
        let manifest = PGFinnManifest {
            latent_dim: d,
            param_dim: self.param_dim,
            k: self.k,
            param_lower: self.param_lower.clone(),
            param_upper: self.param_upper.clone(),
            energy,
            entropy,
            tri_l,
            tri_m: "tri_m.ckpt".into(),
            basis_l: "basis_l.ckpt".into(),
            basis_m: "basis_m.ckpt".into(),
        };
        let path = dir.join("pgfinn.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("pgfinn.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: PGFinnManifest = serde_json::from_str(&text).map_err(|e| Error::parse("pgfinn manifest", e.to_string()))?;
        let pot = |e: &PotentialEntry| -> Result<Potential<T>> {
            Ok(match e {
                PotentialEntry::Net { file } => Potential::Net(Checkpoint::load(&dir.join(file))?.to_net()?),
                PotentialEntry::Known(k) => Potential::Known(k.clone()),
            })
        };
        let tri_l = match &m.tri_l {
            Some(f) => Some(Checkpoint::load(&dir.join(f))?.to_net()?),
            None => None,
        };
        Self::from_parts(
            m.latent_dim,
            m.param_dim,
            m.k,
            pot(&m.energy)?,
            pot(&m.entropy)?,
            tri_l,
            Checkpoint::load(&dir.join(&m.tri_m))?.to_net()?,
            Checkpoint::load(&dir.join(&m.basis_l))?.values(),
            Checkpoint::load(&dir.join(&m.basis_m))?.values(),
        )?
        .with_param_range(&m.param_lower, &m.param_upper)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PotentialEntry {
    Net { file: String },
    Known(KnownPotential),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PGFinnManifest {
    latent_dim: usize,
    param_dim: usize,
    k: usize,
    #[serde(default)]
    param_lower: Vec<f64>,
    #[serde(default)]
    param_upper: Vec<f64>,
    energy: PotentialEntry,
    entropy: PotentialEntry,
    tri_l: Option<String>,
    tri_m: String,
    basis_l: String,
    basis_m: String,
}

/// Tape handles for a [`PGFinn`].
#[derive(Clone, Debug)]
pub struct PGFinnVars {
    d: usize,
    k: usize,
    energy: Option<NetVars>,
    entropy: Option<NetVars>,
    tri_l: Option<NetVars>,
    tri_m: NetVars,
    raw_l: Vec<Var>,
    raw_m: Vec<Var>,
    skew_l: Vec<Var>,
    skew_m: Vec<Var>,
}

/// Tape handles produced by one batched field evaluation.
#[derive(Clone, Copy, Debug)]
pub struct FieldVars {
    /// `d × B` field values.
    pub zdot: Var,
    pub grad_e: Var,
    pub grad_s: Var,
}

impl PGFinnVars {
    fn potential_grad<T: Scalar>(
        &self,
        model: &PGFinn<T>,
        tape: &mut Tape<T>,
        net: Option<&NetVars>,
        quantity: Quantity,
        x: Var,
        z: Var,
        mu: Var,
    ) -> Result<Var> {
        match net {
            Some(n) => {
                let tr = n.forward(tape, x);
                let g = n.grad_input(tape, &tr);
                Ok(if model.param_dim > 0 { tape.rows(g, 0, self.d) } else { g })
            }
            None => {
                if tape.requires_grad(z) {
                    return Err(Error::InvalidArgument(
                        "known-function potentials need a constant latent input".into(),
                    ));
                }
                let pot = match quantity {
                    Quantity::Energy => &model.energy,
                    Quantity::Entropy => &model.entropy,
                };
                let zval = tape.value(z).clone();
                let muval = tape.value(mu).clone();
                let mut g = Array2::zeros(zval.dim());
                for (s, (zc, mc)) in zval.axis_iter(Axis(1)).zip(muval.axis_iter(Axis(1))).enumerate() {
                    let gc = model.potential_grad(pot, &zc.to_vec(), &mc.to_vec())?;
                    g.column_mut(s).assign(&ndarray::Array1::from(gc));
                }
                Ok(tape.constant(g))
            }
        }
    }

    /// Batched field `L∇E + M∇S`; `z` is `d × B`, `mu` is `N_μ × B`.
    pub fn field<T: Scalar>(&self, model: &PGFinn<T>, tape: &mut Tape<T>, z: Var, mu: Var) -> Result<FieldVars> {
        check_dim("latent batch rows", self.d, tape.shape(z).0)?;
        check_dim("parameter batch rows", model.param_dim, tape.shape(mu).0)?;
        check_dim("parameter batch columns", tape.shape(z).1, tape.shape(mu).1)?;
        let x = if model.param_dim > 0 {
            let scaled = if model.param_lower.is_empty() {
                mu
            } else {
                let mut v = tape.value(mu).clone();
                for (i, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
                    row.mapv_inplace(|m| model.scale_param(i, m));
                }
                tape.constant(v)
            };
            tape.vconcat(&[z, scaled])
        } else {
            z
        };
        let ge = self.potential_grad(model, tape, self.energy.as_ref(), Quantity::Energy, x, z, mu)?;
        let gs = self.potential_grad(model, tape, self.entropy.as_ref(), Quantity::Entropy, x, z, mu)?;
        let k = self.k;
        let mut terms = Vec::with_capacity(2 * k);

        if let Some(tl) = &self.tri_l {
            let e = tl.forward(tape, x).output;
            let mut p = Vec::with_capacity(k);
            let mut c = Vec::with_capacity(k);
            for &s in &self.skew_l {
                let pj = tape.matmul(s, gs);
                let prod = tape.mul(pj, ge);
                c.push(tape.col_sum(prod));
                p.push(pj);
            }
            let c = tape.vconcat(&c);
            let tt = tape.tri(e, c, k, false, true);
            let t = tape.tri(e, c, k, false, false);
            let b = tape.sub(tt, t);
            for (j, &pj) in p.iter().enumerate() {
                let bj = tape.rows(b, j, 1);
                terms.push(tape.mul_row(pj, bj));
            }
        }

        let e = self.tri_m.forward(tape, x).output;
        let mut r = Vec::with_capacity(k);
        let mut c = Vec::with_capacity(k);
        for &s in &self.skew_m {
            let rj = tape.matmul(s, ge);
            let prod = tape.mul(rj, gs);
            c.push(tape.col_sum(prod));
            r.push(rj);
        }
        let c = tape.vconcat(&c);
        let y = tape.tri(e, c, k, true, false);
        let w = tape.tri(e, y, k, true, true);
        for (j, &rj) in r.iter().enumerate() {
            let wj = tape.rows(w, j, 1);
            terms.push(tape.mul_row(rj, wj));
        }
        let zdot = tape.add_all(&terms);
        Ok(FieldVars {
            zdot,
            grad_e: ge,
            grad_s: gs,
        })
    }

    /// Gradient over the model's flat parameters, same order as
    /// [`PGFinn::flat_params`].
    pub fn flat_grad<T: Scalar>(&self, grads: &Grads<T>, out: &mut Vec<T>) {
        for n in [&self.energy, &self.entropy, &self.tri_l].into_iter().flatten() {
            n.flat_grad(grads, out);
        }
        self.tri_m.flat_grad(grads, out);
        for &w in self.raw_l.iter().chain(&self.raw_m) {
            out.extend(grads.get(w).iter().copied());
        }
    }
}
