//! Two ideal-gas containers separated by a movable, heat-conducting wall.
//!
//! State `(q, p, S₁, S₂)`. With `N k_B = ĉ = 1` the Sackur–Tetrode relation
//! `S_i = ln(V_i E_i^{3/2})` inverts to `E_i = (e^{S_i} / V_i)^{2/3}` and
//! `T_i = ∂E_i/∂S_i = (2/3) E_i`, with `V₁ = q`, `V₂ = 2 − q`.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

pub const GAS_INITIAL: [f64; 4] = [0.87, 0.44, 1.00, 1.60];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GasContainersParams<T> {
    /// Heat-exchange coefficient.
    pub alpha: T,
    /// Wall mass.
    pub mass: T,
}

impl<T: Scalar> GasContainersParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.mass > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "gas containers need alpha > 0 and m > 0, got alpha={}, m={}",
                self.alpha, self.mass
            )));
        }
        Ok(())
    }
}

fn two_thirds<T: Scalar>() -> T {
    T::lit(2.0 / 3.0)
}

/// Internal energies `(E₁, E₂)`; requires `0 < q < 2`.
pub fn gas_energies<T: Scalar>(state: &[T]) -> Result<(T, T)> {
    check_dim("gas containers state", 4, state.len())?;
    let two = T::lit(2.0);
    let q = state[0];
    if !(q > T::zero() && q < two) {
        return Err(Error::Domain(format!("wall position q={q} outside (0, 2)")));
    }
    let e1 = (state[2].exp() / q).powf(two_thirds());
    let e2 = (state[3].exp() / (two - q)).powf(two_thirds());
    Ok((e1, e2))
}

pub fn gas_temperatures<T: Scalar>(state: &[T]) -> Result<(T, T)> {
    let (e1, e2) = gas_energies(state)?;
    Ok((two_thirds::<T>() * e1, two_thirds::<T>() * e2))
}

pub fn gas_rhs<T: Scalar>(state: &[T], params: &GasContainersParams<T>) -> Result<Vec<T>> {
    let (e1, e2) = gas_energies(state)?;
    let two = T::lit(2.0);
    let q = state[0];
    let p = state[1];
    let t1 = two_thirds::<T>() * e1;
    let t2 = two_thirds::<T>() * e2;
    let a = params.alpha;
    Ok(vec![
        p / params.mass,
        two_thirds::<T>() * (e1 / q - e2 / (two - q)),
        a / t1 * (t1.recip() - t2.recip()),
        a / t2 * (t2.recip() - t1.recip()),
    ])
}

/// Total energy `p²/(2m) + E₁ + E₂` and entropy `S₁ + S₂`.
pub fn gas_energy_entropy<T: Scalar>(state: &[T], params: &GasContainersParams<T>) -> Result<(T, T)> {
    let (e1, e2) = gas_energies(state)?;
    let p = state[1];
    Ok((p * p / (T::lit(2.0) * params.mass) + e1 + e2, state[2] + state[3]))
}

pub fn gas_energy_grad<T: Scalar>(state: &[T], params: &GasContainersParams<T>) -> Result<Vec<T>> {
    let (e1, e2) = gas_energies(state)?;
    let q = state[0];
    let tt = two_thirds::<T>();
    Ok(vec![
        -tt * e1 / q + tt * e2 / (T::lit(2.0) - q),
        state[1] / params.mass,
        tt * e1,
        tt * e2,
    ])
}

pub fn gas_entropy_grad<T: Scalar>() -> Vec<T> {
    vec![T::zero(), T::zero(), T::one(), T::one()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64) -> GasContainersParams<f64> {
        GasContainersParams { alpha, mass: 1.0 }
    }

    #[test]
    fn symmetric_equilibrium_is_stationary() {
        let s = [1.0, 0.0, 0.7, 0.7];
        let r = gas_rhs(&s, &params(5.0)).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn paper_initial_state_rhs_matches_independent_evaluation() {
        // Independent route: temperatures from the entropy derivative of the
        // Sackur-Tetrode energy, forces from the energy derivative in q,
        // both by central differences of E(q, S1, S2).
        let s = GAS_INITIAL;
        let energy = |q: f64, s1: f64, s2: f64| {
            let e1 = (s1.exp() / q).powf(2.0 / 3.0);
            let e2 = (s2.exp() / (2.0 - q)).powf(2.0 / 3.0);
            e1 + e2
        };
        let h = 1e-6;
        let de_dq = (energy(s[0] + h, s[2], s[3]) - energy(s[0] - h, s[2], s[3])) / (2.0 * h);
        let t1 = (energy(s[0], s[2] + h, s[3]) - energy(s[0], s[2] - h, s[3])) / (2.0 * h);
        let t2 = (energy(s[0], s[2], s[3] + h) - energy(s[0], s[2], s[3] - h)) / (2.0 * h);
        let alpha = 10.0;
        let want = [
            s[1],
            -de_dq,
            alpha / t1 * (1.0 / t1 - 1.0 / t2),
            alpha / t2 * (1.0 / t2 - 1.0 / t1),
        ];
        let got = gas_rhs(&s, &params(alpha)).unwrap();
        for i in 0..4 {
            assert!((got[i] - want[i]).abs() <= 1e-7 * (1.0 + want[i].abs()), "{i}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn entropy_production_identity_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let s = [
                rng.random_range(0.1..1.9),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..3.0),
                rng.random_range(-1.0..3.0),
            ];
            let alpha = rng.random_range(0.5..50.0);
            let r = gas_rhs(&s, &params(alpha)).unwrap();
            let (t1, t2) = gas_temperatures(&s).unwrap();
            let want = alpha * (1.0 / t1 - 1.0 / t2).powi(2);
            assert!((r[2] + r[3] - want).abs() <= 1e-10 * (1.0 + want));
            assert!(r[2] + r[3] >= 0.0);
        }
    }

    #[test]
    fn energy_is_conserved_along_the_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s = [
                rng.random_range(0.1..1.9),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..3.0),
                rng.random_range(-1.0..3.0),
            ];
            let p = params(rng.random_range(1.0..50.0));
            let g = gas_energy_grad(&s, &p).unwrap();
            let r = gas_rhs(&s, &p).unwrap();
            let de: f64 = g.iter().zip(&r).map(|(a, b)| a * b).sum();
            let scale: f64 = g.iter().zip(&r).map(|(a, b)| (a * b).abs()).sum();
            assert!(de.abs() <= 1e-12 * (1.0 + scale), "dE/dt = {de}");
        }
    }

    #[test]
    fn symmetric_state_energy_doubles() {
        let s = [1.0, 0.0, 0.4, 0.4];
        let (e, ent) = gas_energy_entropy(&s, &params(1.0)).unwrap();
        let (e1, _) = gas_energies(&s).unwrap();
        assert!((e - 2.0 * e1).abs() < 1e-15);
        assert!((ent - 0.8).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_wall_is_rejected() {
        assert!(matches!(gas_rhs(&[2.5, 0.0, 1.0, 1.0], &params(1.0)), Err(Error::Domain(_))));
        assert!(gas_rhs(&[0.0, 0.0, 1.0, 1.0], &params(1.0)).is_err());
    }

    #[test]
    fn initial_entropy_is_sum_of_parts() {
        let (_, s) = gas_energy_entropy(&GAS_INITIAL, &params(10.0)).unwrap();
        assert!((s - 2.60).abs() < 1e-15);
    }
}
