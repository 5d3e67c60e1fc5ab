//! Explicit time integrators and the full-order residual.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, norm2, Scalar};
use crate::systems::System;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ForwardEuler,
    Rk4,
}

/// Why a rollout stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutFailure {
    /// Index of the first step that could not be produced.
    pub step: usize,
    pub reason: String,
}

/// Trajectory with one state per row. When `failure` is set the matrix
/// holds only the rows computed before the failing step.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    pub states: Array2<T>,
    pub failure: Option<RolloutFailure>,
}

impl<T: Scalar> Rollout<T> {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<Array2<T>> {
        match self.failure {
            None => Ok(self.states),
            Some(f) => Err(Error::NonFinite(format!("rollout stopped at step {}: {}", f.step, f.reason))),
        }
    }
}

fn run<T, F, S>(mut field: F, z0: &[T], mu: &[T], dt: T, n: usize, mut step: S) -> Rollout<T>
where
    T: Scalar,
    F: FnMut(&[T], &[T]) -> Result<Vec<T>>,
    S: FnMut(&mut F, &[T], &[T], T) -> Result<Vec<T>>,
{
    let d = z0.len();
    let mut data = Vec::with_capacity((n + 1) * d);
    data.extend_from_slice(z0);
    let mut failure = None;
    if !all_finite(z0) {
        failure = Some(RolloutFailure {
            step: 0,
            reason: "non-finite initial state".into(),
        });
    } else {
        let mut z = z0.to_vec();
        for k in 1..=n {
            match step(&mut field, &z, mu, dt) {
                Ok(next) if next.len() == d && all_finite(&next) => {
                    data.extend_from_slice(&next);
                    z = next;
                }
                Ok(next) if next.len() != d => {
                    failure = Some(RolloutFailure {
                        step: k,
                        reason: format!("field returned {} components, expected {d}", next.len()),
                    });
                    break;
                }
                Ok(_) => {
                    failure = Some(RolloutFailure {
                        step: k,
                        reason: "non-finite state".into(),
                    });
                    break;
                }
                Err(e) => {
                    failure = Some(RolloutFailure {
                        step: k,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
    }
    let rows = data.len() / d.max(1);
    let states = if d == 0 {
        Array2::zeros((n + 1, 0))
    } else {
        Array2::from_shape_vec((rows, d), data).expect("rows × d")
    };
    Rollout { states, failure }
}

fn axpy<T: Scalar>(z: &[T], h: T, k: &[T]) -> Vec<T> {
    z.iter().zip(k).map(|(&a, &b)| a + h * b).collect()
}

/// `z_{n+1} = z_n + Δt field(z_n, μ)`.
pub fn forward_euler<T, F>(field: F, z0: &[T], mu: &[T], dt: T, n: usize) -> Rollout<T>
where
    T: Scalar,
    F: FnMut(&[T], &[T]) -> Result<Vec<T>>,
{
    run(field, z0, mu, dt, n, |f, z, mu, dt| Ok(axpy(z, dt, &f(z, mu)?)))
}

pub fn rk4_step<T, F>(field: &mut F, z: &[T], mu: &[T], dt: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T], &[T]) -> Result<Vec<T>>,
{
    let half = T::lit(0.5) * dt;
    let k1 = field(z, mu)?;
    let k2 = field(&axpy(z, half, &k1), mu)?;
    let k3 = field(&axpy(z, half, &k2), mu)?;
    let k4 = field(&axpy(z, dt, &k3), mu)?;
    let two = T::lit(2.0);
    let sixth = dt / T::lit(6.0);
    Ok((0..z.len())
        .map(|i| z[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect())
}

/// Classical four-stage Runge-Kutta.
pub fn rk4<T, F>(field: F, z0: &[T], mu: &[T], dt: T, n: usize) -> Rollout<T>
where
    T: Scalar,
    F: FnMut(&[T], &[T]) -> Result<Vec<T>>,
{
    run(field, z0, mu, dt, n, |f, z, mu, dt| rk4_step(f, z, mu, dt))
}

pub fn integrate<T, F>(scheme: Scheme, field: F, z0: &[T], mu: &[T], dt: T, n: usize) -> Rollout<T>
where
    T: Scalar,
    F: FnMut(&[T], &[T]) -> Result<Vec<T>>,
{
    match scheme {
        Scheme::ForwardEuler => forward_euler(field, z0, mu, dt, n),
        Scheme::Rk4 => rk4(field, z0, mu, dt, n),
    }
}

/// `‖u_n − u_{n−1} − Δt f(u_n; μ)‖₂` with `f` the system's right-hand side.
pub fn fom_residual<T: Scalar>(u_n: &[T], u_prev: &[T], dt: T, system: &System, mu: &[T]) -> Result<T> {
    check_dim("residual state", system.state_dim(), u_n.len())?;
    check_dim("residual previous state", u_n.len(), u_prev.len())?;
    let f = system.rhs(u_n, mu)?;
    let r: Vec<T> = (0..u_n.len()).map(|i| u_n[i] - u_prev[i] - dt * f[i]).collect();
    Ok(norm2(&r))
}

/// Residual norms of consecutive rows `(n−1, n)` for every `n` in `steps`.
pub fn fom_residuals<T: Scalar>(states: &Array2<T>, steps: &[usize], dt: T, system: &System, mu: &[T]) -> Result<Vec<T>> {
    steps
        .iter()
        .map(|&n| {
            if n == 0 || n >= states.nrows() {
                return Err(Error::InvalidArgument(format!("residual step {n} outside 1..{}", states.nrows())));
            }
            let cur = row_vec(states.row(n));
            let prev = row_vec(states.row(n - 1));
            fom_residual(&cur, &prev, dt, system, mu)
        })
        .collect()
}

pub(crate) fn row_vec<T: Scalar>(r: ArrayView1<T>) -> Vec<T> {
    r.iter().cloned().collect()
}
