//! Two masses coupled by a spring, with damping and heat exchange.
//!
//! State `(q₁, q₂, p₁, p₂, S₁, S₂)`, thermal energies `E_i = c_i S_i` so that
//! `T_i = c_i`.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

pub const THERMO_INITIAL: [f64; 6] = [4.98, 0.04, 0.0, 9.96, 1.93, 1.92];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermoMassParams<T> {
    /// Damping coefficient.
    pub alpha: T,
    /// Spring constant.
    pub k: T,
    /// Heat conductivity.
    pub beta: T,
    pub m1: T,
    pub m2: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Scalar> ThermoMassParams<T> {
    pub fn new(alpha: T, k: T, beta: T) -> Self {
        ThermoMassParams {
            alpha,
            k,
            beta,
            m1: T::one(),
            m2: T::one(),
            c1: T::one(),
            c2: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= T::zero()
            && self.k > T::zero()
            && self.beta >= T::zero()
            && self.m1 > T::zero()
            && self.m2 > T::zero()
            && self.c1 > T::zero()
            && self.c2 > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid thermo-mass parameters {self:?}")))
        }
    }
}

pub fn thermo_mass_rhs<T: Scalar>(state: &[T], p: &ThermoMassParams<T>) -> Result<Vec<T>> {
    check_dim("thermo-mass state", 6, state.len())?;
    let (q1, q2, p1, p2) = (state[0], state[1], state[2], state[3]);
    let v1 = p1 / p.m1;
    let v2 = p2 / p.m2;
    let dv = v1 - v2;
    let (t1, t2) = (p.c1, p.c2);
    let two = T::lit(2.0);
    let heat = p.beta * (t2.recip() - t1.recip());
    Ok(vec![
        v1,
        v2,
        -p.k * (q1 - q2) - p.alpha * dv,
        -p.k * (q2 - q1) + p.alpha * dv,
        p.alpha / (two * t1) * dv * dv + heat,
        p.alpha / (two * t2) * dv * dv - heat,
    ])
}

/// Total energy and entropy. The spring stores `k/2 (q₁ − q₂)²`, the
/// potential consistent with the force `−k (q₁ − q₂)`.
pub fn thermo_mass_energy_entropy<T: Scalar>(state: &[T], p: &ThermoMassParams<T>) -> Result<(T, T)> {
    check_dim("thermo-mass state", 6, state.len())?;
    let two = T::lit(2.0);
    let dq = state[0] - state[1];
    let e = state[2] * state[2] / (two * p.m1)
        + state[3] * state[3] / (two * p.m2)
        + p.k / two * dq * dq
        + p.c1 * state[4]
        + p.c2 * state[5];
    Ok((e, state[4] + state[5]))
}

pub fn thermo_mass_energy_grad<T: Scalar>(state: &[T], p: &ThermoMassParams<T>) -> Result<Vec<T>> {
    check_dim("thermo-mass state", 6, state.len())?;
    let dq = state[0] - state[1];
    Ok(vec![p.k * dq, -p.k * dq, state[2] / p.m1, state[3] / p.m2, p.c1, p.c2])
}

pub fn thermo_mass_entropy_grad<T: Scalar>() -> Vec<T> {
    let mut g = vec![T::zero(); 6];
    g[4] = T::one();
    g[5] = T::one();
    g
}
