//! Training losses: integration, reconstruction, Jacobian and model terms.
//!
//! Every term is a sum over the batch. The tape builder in [`total_loss`] is
//! what training differentiates; the `loss_*` functions evaluate the same
//! quantities sample by sample without a tape.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeVars, Autoencoder};
use crate::diffcore::{Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::integrate::{rk4_step, Scheme};
use crate::pgfinn::{PGFinn, PGFinnVars};
use crate::scalar::{norm2, Scalar};
use crate::systems::TrajectoryDataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacMode {
    /// `‖(I − J) u̇‖²`.
    #[default]
    WithDerivatives,
    /// `‖I − J‖²_F`, for data without derivatives.
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rec: f64,
    pub jac: f64,
    pub model: f64,
    pub jac_mode: JacMode,
    /// Discretization of the latent integral in the integration loss.
    pub scheme: Scheme,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 1e-1,
            jac: 1e-9,
            model: 1e-7,
            jac_mode: JacMode::WithDerivatives,
            scheme: Scheme::ForwardEuler,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("rec", self.rec), ("jac", self.jac), ("model", self.model)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Consecutive snapshot pairs, one sample per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `N_u × B` states `u_n`.
    pub u: Array2<T>,
    /// `N_u × B` states `u_{n+1}`.
    pub u_next: Option<Array2<T>>,
    /// `N_u × B` derivatives `u̇_n`.
    pub udot: Option<Array2<T>>,
    /// `N_μ × B`.
    pub mu: Array2<T>,
    pub dt: T,
}

impl<T: Scalar> Batch<T> {
    /// Gathers `(trajectory, n)` pairs from a dataset.
    pub fn from_dataset(ds: &TrajectoryDataset<T>, pairs: &[(usize, usize)]) -> Result<Self> {
        let (nu, nm, b) = (ds.state_dim(), ds.param_dim(), pairs.len());
        let mut u = Array2::zeros((nu, b));
        let mut u_next = Array2::zeros((nu, b));
        let mut udot = Array2::zeros((nu, b));
        let mut mu = Array2::zeros((nm, b));
        for (c, &(k, n)) in pairs.iter().enumerate() {
            let t = ds
                .trajectories
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory {k} out of range")))?;
            if n + 1 >= t.n_times() {
                return Err(Error::InvalidArgument(format!("pair ({k}, {n}) has no successor")));
            }
            u.column_mut(c).assign(&t.states.row(n));
            u_next.column_mut(c).assign(&t.states.row(n + 1));
            udot.column_mut(c).assign(&t.derivs.row(n));
            mu.column_mut(c).assign(&Array1::from(t.mu.clone()));
        }
        Ok(Batch {
            u,
            u_next: Some(u_next),
            udot: Some(udot),
            mu,
            dt: ds.dt,
        })
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn col(a: &Array2<T>, c: usize) -> Vec<T> {
        a.column(c).to_vec()
    }

    fn need_next(&self) -> Result<&Array2<T>> {
        self.u_next
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("integration loss needs consecutive pairs".into()))
    }

    fn need_udot(&self, what: &str) -> Result<&Array2<T>> {
        self.udot
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{what} needs snapshot derivatives")))
    }

    pub fn validate(&self) -> Result<()> {
        let (nu, b) = self.u.dim();
        check_dim("parameter batch columns", b, self.mu.ncols())?;
        for a in [&self.u_next, &self.udot].into_iter().flatten() {
            check_dim("batch rows", nu, a.nrows())?;
            check_dim("batch columns", b, a.ncols())?;
        }
        Ok(())
    }
}

/// Values of the individual terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<T> {
    pub int: T,
    pub rec: T,
    pub jac: T,
    pub model: T,
    pub total: T,
}

impl<T: Scalar> LossTerms<T> {
    pub fn weighted(int: T, rec: T, jac: T, model: T, w: &LossWeights) -> Self {
        LossTerms {
            int,
            rec,
            jac,
            model,
            total: int + T::lit(w.rec) * rec + T::lit(w.jac) * jac + T::lit(w.model) * model,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        LossTerms {
            int: self.int + o.int,
            rec: self.rec + o.rec,
            jac: self.jac + o.jac,
            model: self.model + o.model,
            total: self.total + o.total,
        }
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One latent step of the configured scheme.
pub fn latent_step<T: Scalar>(model: &PGFinn<T>, scheme: Scheme, z: &[T], mu: &[T], dt: T) -> Result<Vec<T>> {
    let mut f = |z: &[T], mu: &[T]| model.vector_field(z, mu);
    match scheme {
        Scheme::ForwardEuler => {
            let g = f(z, mu)?;
            Ok(z.iter().zip(&g).map(|(&a, &b)| a + dt * b).collect())
        }
        Scheme::Rk4 => rk4_step(&mut f, z, mu, dt),
    }
}

/// `Σ ‖φ_e(u_{n+1}) − step(φ_e(u_n))‖²`.
pub fn loss_int<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>, model: &PGFinn<T>, scheme: Scheme) -> Result<T> {
    let next = batch.need_next()?;
    let mut s = T::zero();
    for c in 0..batch.len() {
        let mu = Batch::col(&batch.mu, c);
        let z = ae.encode(&Batch::col(&batch.u, c))?;
        let zn = ae.encode(&Batch::col(next, c))?;
        s += sq_dist(&zn, &latent_step(model, scheme, &z, &mu, batch.dt)?);
    }
    Ok(s)
}

/// `Σ ‖u_n − φ_d(φ_e(u_n))‖²`.
pub fn loss_rec<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>) -> Result<T> {
    let mut s = T::zero();
    for c in 0..batch.len() {
        let u = Batch::col(&batch.u, c);
        s += sq_dist(&u, &ae.reconstruct(&u)?);
    }
    Ok(s)
}

pub fn loss_jac<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>, mode: JacMode) -> Result<T> {
    let mut s = T::zero();
    match mode {
        JacMode::WithDerivatives => {
            let udot = batch.need_udot("Jacobian loss")?;
            for c in 0..batch.len() {
                let v = Batch::col(udot, c);
                s += sq_dist(&v, &ae.ae_jvp(&Batch::col(&batch.u, c), &v)?);
            }
        }
        JacMode::Frobenius => {
            let (n, d) = (ae.full_dim(), ae.latent_dim());
            for c in 0..batch.len() {
                let u = Batch::col(&batch.u, c);
                let z = ae.encode(&u)?;
                // Columns of J_d and rows of J_e through unit tangents.
                let mut jd = Array2::zeros((n, d));
                let mut e = vec![T::zero(); d];
                for k in 0..d {
                    e[k] = T::one();
                    jd.column_mut(k).assign(&Array1::from(ae.decoder_jvp(&z, &e)?));
                    e[k] = T::zero();
                }
                let mut je = Array2::zeros((d, n));
                let mut e = vec![T::zero(); n];
                for j in 0..n {
                    e[j] = T::one();
                    je.column_mut(j).assign(&Array1::from(ae.encoder_jvp(&u, &e)?));
                    e[j] = T::zero();
                }
                let small = je.dot(&jd);
                let tr: T = (0..d).map(|k| small[[k, k]]).sum();
                let gd = jd.t().dot(&jd);
                let ge = je.dot(&je.t());
                let fro: T = gd.iter().zip(ge.t().iter()).map(|(&a, &b)| a * b).sum();
                s += T::from_usize_lossy(n) - T::lit(2.0) * tr + fro;
            }
        }
    }
    Ok(s)
}

/// `Σ ‖u̇ − J_d ψ‖² + ‖J_e u̇ − ψ‖²` with `ψ = ψ(φ_e(u), μ)`.
pub fn loss_model<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>, model: &PGFinn<T>) -> Result<T> {
    let udot = batch.need_udot("model loss")?;
    let mut s = T::zero();
    for c in 0..batch.len() {
        let u = Batch::col(&batch.u, c);
        let v = Batch::col(udot, c);
        let z = ae.encode(&u)?;
        let psi = model.vector_field(&z, &Batch::col(&batch.mu, c))?;
        s += sq_dist(&v, &ae.decoder_jvp(&z, &psi)?);
        s += sq_dist(&ae.encoder_jvp(&u, &v)?, &psi);
    }
    Ok(s)
}

/// All terms without gradients.
pub fn evaluate_terms<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>, model: &PGFinn<T>, w: &LossWeights) -> Result<LossTerms<T>> {
    let int = loss_int(batch, ae, model, w.scheme)?;
    let rec = loss_rec(batch, ae)?;
    let jac = optional(w.jac, batch.udot.is_some() || w.jac_mode == JacMode::Frobenius, || loss_jac(batch, ae, w.jac_mode))?;
    let model_term = optional(w.model, batch.udot.is_some(), || loss_model(batch, ae, model))?;
    Ok(LossTerms::weighted(int, rec, jac, model_term, w))
}

/// A term that may be skipped when its weight is zero and its data absent.
fn optional<T: Scalar>(weight: f64, available: bool, f: impl FnOnce() -> Result<T>) -> Result<T> {
    if available || weight > 0.0 {
        f()
    } else {
        Ok(T::zero())
    }
}

/// Tape handles of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub int: Var,
    pub rec: Var,
    pub jac: Option<Var>,
    pub model: Option<Var>,
    pub total: Var,
}

fn latent_step_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pv: &PGFinnVars,
    model: &PGFinn<T>,
    scheme: Scheme,
    z: Var,
    mu: Var,
    dt: T,
    first: Var,
) -> Result<Var> {
    match scheme {
        Scheme::ForwardEuler => {
            let s = tape.scale(first, dt);
            Ok(tape.add(z, s))
        }
        Scheme::Rk4 => {
            let half = T::lit(0.5) * dt;
            let k1 = first;
            let s = tape.scale(k1, half);
            let z2 = tape.add(z, s);
            let k2 = pv.field(model, tape, z2, mu)?.zdot;
            let s = tape.scale(k2, half);
            let z3 = tape.add(z, s);
            let k3 = pv.field(model, tape, z3, mu)?.zdot;
            let s = tape.scale(k3, dt);
            let z4 = tape.add(z, s);
            let k4 = pv.field(model, tape, z4, mu)?.zdot;
            let k23 = tape.add(k2, k3);
            let k23 = tape.scale(k23, T::lit(2.0));
            let sum = tape.add_all(&[k1, k23, k4]);
            let s = tape.scale(sum, dt / T::lit(6.0));
            Ok(tape.add(z, s))
        }
    }
}

fn unit_rows<T: Scalar>(tape: &mut Tape<T>, rows: usize, k: usize, cols: usize) -> Var {
    let mut e = Array2::zeros((rows, cols));
    e.row_mut(k).fill(T::one());
    tape.constant(e)
}

/// Records every term on `tape`.
pub fn build_losses<T: Scalar>(
    tape: &mut Tape<T>,
    av: &AeVars,
    pv: &PGFinnVars,
    ae: &Autoencoder<T>,
    model: &PGFinn<T>,
    batch: &Batch<T>,
    w: &LossWeights,
) -> Result<LossVars> {
    w.validate()?;
    batch.validate()?;
    check_dim("batch state rows", ae.full_dim(), batch.u.nrows())?;
    check_dim("latent dimension", model.latent_dim(), ae.latent_dim())?;
    let b = batch.len();
    let u = tape.constant(batch.u.clone());
    let mu = tape.constant(batch.mu.clone());
    let enc = av.encode(tape, u);
    let z = enc.output;
    let field = pv.field(model, tape, z, mu)?;
    let psi = field.zdot;

    let next = tape.constant(batch.need_next()?.clone());
    let z_next = av.encode(tape, next).output;
    let pred = latent_step_tape(tape, pv, model, w.scheme, z, mu, batch.dt, psi)?;
    let r = tape.sub(z_next, pred);
    let int = tape.sum_sq(r);

    let dec = av.decode(tape, z);
    let r = tape.sub(u, dec.output);
    let rec = tape.sum_sq(r);

    let udot = batch.udot.as_ref().map(|a| tape.constant(a.clone()));
    let je_udot = udot.map(|v| av.encoder_jvp(tape, &enc, v));

    let jac = match w.jac_mode {
        JacMode::WithDerivatives => match (udot, je_udot) {
            (Some(v), Some(jv)) => {
                let j = av.decoder_jvp(tape, &dec, jv);
                let r = tape.sub(v, j);
                Some(tape.sum_sq(r))
            }
            _ if w.jac > 0.0 => return Err(Error::InvalidArgument("Jacobian loss needs snapshot derivatives".into())),
            _ => None,
        },
        JacMode::Frobenius => {
            let (n, d) = (ae.full_dim(), ae.latent_dim());
            let mut cols = Vec::with_capacity(d);
            let mut rows = Vec::with_capacity(d);
            for k in 0..d {
                let e = unit_rows(tape, d, k, b);
                cols.push(av.decoder_jvp(tape, &dec, e));
                rows.push(av.encoder_vjp(tape, &enc, e));
            }
            let mut terms = Vec::with_capacity(d * d + d);
            for k in 0..d {
                let p = tape.mul(rows[k], cols[k]);
                let t = tape.sum(p);
                terms.push(tape.scale(t, T::lit(-2.0)));
                for l in 0..d {
                    let a = tape.mul(cols[k], cols[l]);
                    let a = tape.col_sum(a);
                    let c = tape.mul(rows[l], rows[k]);
                    let c = tape.col_sum(c);
                    let p = tape.mul(a, c);
                    terms.push(tape.sum(p));
                }
            }
            let mut base = Array2::zeros((1, 1));
            base[[0, 0]] = T::from_usize_lossy(n * b);
            terms.push(tape.constant(base));
            Some(tape.add_all(&terms))
        }
    };

    let model_term = match (udot, je_udot) {
        (Some(v), Some(jv)) => {
            let jd_psi = av.decoder_jvp(tape, &dec, psi);
            let r1 = tape.sub(v, jd_psi);
            let r2 = tape.sub(jv, psi);
            let a = tape.sum_sq(r1);
            let c = tape.sum_sq(r2);
            Some(tape.add(a, c))
        }
        _ if w.model > 0.0 => return Err(Error::InvalidArgument("model loss needs snapshot derivatives".into())),
        _ => None,
    };

    let mut parts = vec![int];
    let mut weighted = |v: Option<Var>, wt: f64, tape: &mut Tape<T>| {
        if let Some(v) = v {
            if wt > 0.0 {
                parts.push(tape.scale(v, T::lit(wt)));
            }
        }
    };
    weighted(Some(rec), w.rec, tape);
    weighted(jac, w.jac, tape);
    weighted(model_term, w.model, tape);
    let total = tape.add_all(&parts);
    Ok(LossVars {
        int,
        rec,
        jac,
        model: model_term,
        total,
    })
}

/// Term values and the gradient of the total over all trainables:
/// autoencoder parameters first, then the pGFINN parameters.
pub fn total_loss<T: Scalar>(batch: &Batch<T>, ae: &Autoencoder<T>, model: &PGFinn<T>, w: &LossWeights) -> Result<(LossTerms<T>, Vec<T>)> {
    let mut tape = Tape::new();
    let av = ae.on_tape(&mut tape);
    let pv = model.on_tape(&mut tape);
    let lv = build_losses(&mut tape, &av, &pv, ae, model, batch, w)?;
    let val = |v: Option<Var>| v.map_or(T::zero(), |v| tape.scalar(v));
    let terms = LossTerms {
        int: tape.scalar(lv.int),
        rec: tape.scalar(lv.rec),
        jac: val(lv.jac),
        model: val(lv.model),
        total: tape.scalar(lv.total),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss {terms:?}")));
    }
    let grads = tape.backward(lv.total);
    let mut g = Vec::with_capacity(ae.n_params() + model.n_params());
    av.flat_grad(&grads, &mut g);
    pv.flat_grad(&grads, &mut g);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training gradient".into()));
    }
    Ok((terms, g))
}

/// Autoencoder parameters followed by pGFINN parameters.
pub fn joint_params<T: Scalar>(ae: &Autoencoder<T>, model: &PGFinn<T>) -> Vec<T> {
    let mut p = ae.flat_params();
    p.extend(model.flat_params());
    p
}

pub fn set_joint_params<T: Scalar>(ae: &mut Autoencoder<T>, model: &mut PGFinn<T>, p: &[T]) -> Result<()> {
    check_dim("joint parameters", ae.n_params() + model.n_params(), p.len())?;
    let na = ae.n_params();
    ae.set_flat_params(&p[..na])?;
    model.set_flat_params(&p[na..])
}

/// Relative reconstruction error `‖u − û‖ / ‖u‖` of one state.
pub fn relative_reconstruction_error<T: Scalar>(ae: &Autoencoder<T>, u: &[T]) -> Result<T> {
    let r = ae.reconstruct(u)?;
    let diff: Vec<T> = u.iter().zip(&r).map(|(&a, &b)| a - b).collect();
    Ok(norm2(&diff) / norm2(u))
}
