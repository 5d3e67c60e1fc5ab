//! Periodic 1D inviscid Burgers equation, first-order upwind in space and
//! backward Euler in time.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm2, Scalar};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersConfig {
    /// Number of nodes of the full-order grid on `[x_min, x_max)`.
    pub nx: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Full-order time step.
    pub dt: f64,
    pub t_final: f64,
    /// Keep every `sub_x`-th node in the stored snapshots.
    pub sub_x: usize,
    /// Keep every `sub_t`-th step in the stored snapshots.
    pub sub_t: usize,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            nx: 1000,
            x_min: -3.0,
            x_max: 3.0,
            dt: 1e-3,
            t_final: 1.0,
            sub_x: 5,
            sub_t: 5,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 {
            return Err(Error::InvalidArgument(format!("Burgers grid needs nx >= 3, got {}", self.nx)));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.x_max > self.x_min) {
            return Err(Error::InvalidArgument("Burgers needs dt > 0, t_final > 0, x_max > x_min".into()));
        }
        if self.sub_x == 0 || self.sub_t == 0 || self.nx % self.sub_x != 0 {
            return Err(Error::InvalidArgument(format!(
                "subsampling factors must be positive and divide the grid (nx={}, sub_x={}, sub_t={})",
                self.nx, self.sub_x, self.sub_t
            )));
        }
        if self.fine_steps() % self.sub_t != 0 || self.nx / self.sub_x < 3 {
            return Err(Error::InvalidArgument(format!(
                "{} fine steps do not subsample evenly by {}",
                self.fine_steps(),
                self.sub_t
            )));
        }
        Ok(())
    }

    pub fn fine_dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn fine_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn data_nx(&self) -> usize {
        self.nx / self.sub_x
    }

    pub fn data_dx(&self) -> f64 {
        self.fine_dx() * self.sub_x as f64
    }

    pub fn data_dt(&self) -> f64 {
        self.dt * self.sub_t as f64
    }

    pub fn data_steps(&self) -> usize {
        self.fine_steps() / self.sub_t
    }

    /// Configuration describing the stored (subsampled) grid as its own full-order model.
    pub fn coarse(&self) -> BurgersConfig {
        BurgersConfig {
            nx: self.data_nx(),
            dt: self.data_dt(),
            sub_x: 1,
            sub_t: 1,
            ..self.clone()
        }
    }
}

/// Uniform periodic grid `x_i = x_min + i (x_max − x_min)/n`.
pub fn grid<T: Scalar>(n: usize, x_min: f64, x_max: f64) -> Vec<T> {
    let dx = (x_max - x_min) / n as f64;
    (0..n).map(|i| T::lit(x_min + i as f64 * dx)).collect()
}

pub fn burgers_initial<T: Scalar>(a: T, w: T, grid: &[T]) -> Result<Vec<T>> {
    if !(w > T::zero()) {
        return Err(Error::InvalidArgument(format!("pulse width must be positive, got {w}")));
    }
    if !(a >= T::zero()) {
        return Err(Error::InvalidArgument(format!("pulse amplitude must be non-negative, got {a}")));
    }
    let two = T::lit(2.0);
    Ok(grid.iter().map(|&x| a * (-(x * x) / (two * w * w)).exp()).collect())
}

/// `f_i = −u_i (u_i − u_{i−1}) / Δx`, periodic.
pub fn burgers_rhs<T: Scalar>(u: &[T], dx: T) -> Vec<T> {
    let mut f = vec![T::zero(); u.len()];
    burgers_rhs_into(u, dx, &mut f);
    f
}

pub fn burgers_rhs_into<T: Scalar>(u: &[T], dx: T, out: &mut [T]) {
    let n = u.len();
    if n == 0 {
        return;
    }
    let inv = dx.recip();
    out[0] = -u[0] * (u[0] - u[n - 1]) * inv;
    for i in 1..n {
        out[i] = -u[i] * (u[i] - u[i - 1]) * inv;
    }
}

/// Backward-Euler residual `u − u_prev − Δt f(u)` written into `r`.
pub fn burgers_residual_into<T: Scalar>(u: &[T], u_prev: &[T], dt: T, dx: T, r: &mut [T]) {
    burgers_rhs_into(u, dx, r);
    for i in 0..u.len() {
        r[i] = u[i] - u_prev[i] - dt * r[i];
    }
}

/// Solves `J x = r` for the cyclic lower-bidiagonal Jacobian with diagonal
/// `d` and sub-diagonal `l` (`l[0]` couples row 0 to the last column).
fn cyclic_bidiagonal_solve<T: Scalar>(d: &[T], l: &[T], r: &[T], x: &mut [T], beta: &mut [T]) -> Result<()> {
    let n = d.len();
    // x_i = x[i] + beta[i] * x_{n-1}
    for i in 0..n {
        if d[i] == T::zero() || !d[i].is_finite() {
            return Err(Error::NonFinite(format!("singular Newton Jacobian at row {i}")));
        }
    }
    x[0] = r[0] / d[0];
    beta[0] = -l[0] / d[0];
    for i in 1..n {
        x[i] = (r[i] - l[i] * x[i - 1]) / d[i];
        beta[i] = -l[i] * beta[i - 1] / d[i];
    }
    let denom = T::one() - beta[n - 1];
    if denom == T::zero() {
        return Err(Error::NonFinite("singular cyclic Newton system".into()));
    }
    let last = x[n - 1] / denom;
    for i in 0..n - 1 {
        x[i] += beta[i] * last;
    }
    x[n - 1] = last;
    Ok(())
}

fn newton_tol<T: Scalar>(n: usize, scale: T) -> T {
    let floor = T::lit(10.0) * T::epsilon() * T::from_usize_lossy(n).sqrt() * (T::one() + scale);
    T::lit(NEWTON_TOL).max(floor)
}

/// One backward-Euler step by Newton iteration, starting from `u_prev`.
pub fn backward_euler_solve<T: Scalar>(u_prev: &[T], dt: T, dx: T) -> Result<Vec<T>> {
    let n = u_prev.len();
    if n < 2 {
        return Err(Error::InvalidArgument("Burgers state needs at least 2 nodes".into()));
    }
    if !u_prev.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("previous Burgers state".into()));
    }
    let scale = u_prev.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = newton_tol(n, scale);
    let c = dt / dx;
    let mut u = u_prev.to_vec();
    let mut r = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut l = vec![T::zero(); n];
    let mut dx_ = vec![T::zero(); n];
    let mut beta = vec![T::zero(); n];
    let mut res = T::infinity();
    for _ in 0..=NEWTON_MAX_ITER {
        burgers_residual_into(&u, u_prev, dt, dx, &mut r);
        res = norm2(&r);
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            return Ok(u);
        }
        for i in 0..n {
            let left = if i == 0 { u[n - 1] } else { u[i - 1] };
            d[i] = T::one() + c * (T::lit(2.0) * u[i] - left);
            l[i] = -c * u[i];
        }
        cyclic_bidiagonal_solve(&d, &l, &r, &mut dx_, &mut beta)?;
        for i in 0..n {
            u[i] -= dx_[i];
        }
    }
    Err(Error::NewtonDiverged {
        iterations: NEWTON_MAX_ITER,
        residual: res.as_f64(),
    })
}

/// Full-order trajectory on the fine grid, `(steps + 1) × nx`.
pub fn burgers_fom<T: Scalar>(config: &BurgersConfig, a: T, w: T) -> Result<Array2<T>> {
    config.validate()?;
    let x = grid::<T>(config.nx, config.x_min, config.x_max);
    let u0 = burgers_initial(a, w, &x)?;
    let steps = config.fine_steps();
    let dt = T::lit(config.dt);
    let dx = T::lit(config.fine_dx());
    let mut out = Array2::zeros((steps + 1, config.nx));
    out.row_mut(0).assign(&ndarray::ArrayView1::from(&u0));
    let mut u = u0;
    for n in 1..=steps {
        u = backward_euler_solve(&u, dt, dx)?;
        out.row_mut(n).assign(&ndarray::ArrayView1::from(&u));
    }
    Ok(out)
}

/// Full-order trajectory restricted to the stored grid, `(data_steps + 1) × data_nx`.
pub fn burgers_snapshots<T: Scalar>(config: &BurgersConfig, a: T, w: T) -> Result<Array2<T>> {
    config.validate()?;
    let x = grid::<T>(config.nx, config.x_min, config.x_max);
    let mut u = burgers_initial(a, w, &x)?;
    let dt = T::lit(config.dt);
    let dx = T::lit(config.fine_dx());
    let (nt, nx) = (config.data_steps() + 1, config.data_nx());
    let mut out = Array2::zeros((nt, nx));
    let keep = |u: &[T], row: &mut ndarray::ArrayViewMut1<T>| {
        for j in 0..nx {
            row[j] = u[j * config.sub_x];
        }
    };
    keep(&u, &mut out.row_mut(0));
    for n in 1..=config.fine_steps() {
        u = backward_euler_solve(&u, dt, dx)?;
        if n % config.sub_t == 0 {
            keep(&u, &mut out.row_mut(n / config.sub_t));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_state_has_zero_rhs() {
        assert_eq!(burgers_rhs(&[0.4; 7], 0.1), vec![0.0; 7]);
    }

    #[test]
    fn two_cell_hand_computation() {
        assert_eq!(burgers_rhs(&[1.0, 2.0], 1.0), vec![1.0, -2.0]);
    }

    #[test]
    fn rhs_matches_modular_index_stencil() {
        let u: Vec<f64> = (0..11).map(|i| ((i * 7 % 11) as f64 * 0.37).sin().abs()).collect();
        let dx = 0.05;
        let f = burgers_rhs(&u, dx);
        let n = u.len();
        for i in 0..n {
            let left = u[(i + n - 1) % n];
            let want = -u[i] * (u[i] - left) / dx;
            assert!((f[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_condition_peak_and_symmetry() {
        let x = grid::<f64>(200, -3.0, 3.0);
        let u = burgers_initial(0.7, 0.9, &x).unwrap();
        assert_eq!(u[100], 0.7);
        for i in 1..100 {
            assert!((u[100 - i] - u[100 + i]).abs() < 1e-15);
        }
        for (xi, ui) in x.iter().zip(&u) {
            assert!((ui - 0.7 * (-(xi * xi) / (2.0 * 0.81)).exp()).abs() < 1e-15);
        }
        assert!(burgers_initial(0.7, 0.0, &x).is_err());
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let u = backward_euler_solve(&[0.0; 9], 1e-3, 0.1).unwrap();
        assert_eq!(u, vec![0.0; 9]);
    }

    #[test]
    fn newton_meets_residual_contract() {
        let x = grid::<f64>(1000, -3.0, 3.0);
        let u0 = burgers_initial(0.9, 0.9, &x).unwrap();
        let u1 = backward_euler_solve(&u0, 1e-3, 0.006).unwrap();
        let mut r = vec![0.0; u0.len()];
        burgers_residual_into(&u1, &u0, 1e-3, 0.006, &mut r);
        assert!(norm2(&r) <= 1e-10);
    }

    #[test]
    fn cyclic_solver_matches_dense_solve() {
        let n = 6;
        let d: Vec<f64> = (0..n).map(|i| 2.0 + i as f64 * 0.3).collect();
        let l: Vec<f64> = (0..n).map(|i| -0.4 - 0.1 * i as f64).collect();
        let r: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let mut b = vec![0.0; n];
        cyclic_bidiagonal_solve(&d, &l, &r, &mut x, &mut b).unwrap();
        for i in 0..n {
            let prev = x[(i + n - 1) % n];
            assert!((d[i] * x[i] + l[i] * prev - r[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn one_step_error_is_second_order() {
        // Fine-step RK4 reference for one step of size dt, compared with
        // backward Euler at dt and dt/2.
        let n = 200;
        let dx = 6.0 / n as f64;
        let x = grid::<f64>(n, -3.0, 3.0);
        let u0 = burgers_initial(0.9, 1.0, &x).unwrap();
        let reference = |h: f64| {
            let m = 2000;
            let k = h / m as f64;
            let mut u = u0.clone();
            for _ in 0..m {
                let k1 = burgers_rhs(&u, dx);
                let a: Vec<f64> = u.iter().zip(&k1).map(|(u, k1)| u + 0.5 * k * k1).collect();
                let k2 = burgers_rhs(&a, dx);
                let b: Vec<f64> = u.iter().zip(&k2).map(|(u, k2)| u + 0.5 * k * k2).collect();
                let k3 = burgers_rhs(&b, dx);
                let c: Vec<f64> = u.iter().zip(&k3).map(|(u, k3)| u + k * k3).collect();
                let k4 = burgers_rhs(&c, dx);
                for i in 0..n {
                    u[i] += k / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            u
        };
        let err = |h: f64| {
            let be = backward_euler_solve(&u0, h, dx).unwrap();
            let rf = reference(h);
            let d: Vec<f64> = be.iter().zip(&rf).map(|(a, b)| a - b).collect();
            norm2(&d)
        };
        let ratio = err(4e-3) / err(2e-3);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn trajectory_stays_within_initial_bounds() {
        let cfg = BurgersConfig {
            nx: 200,
            dt: 5e-3,
            sub_x: 1,
            sub_t: 1,
            ..Default::default()
        };
        let u = burgers_fom(&cfg, 0.9f64, 1.1).unwrap();
        assert_eq!(u.dim(), (201, 200));
        let max0 = u.row(0).iter().cloned().fold(0.0, f64::max);
        for v in u.iter() {
            assert!(*v >= -1e-12 && *v <= max0 + 1e-8);
        }
    }

    #[test]
    fn snapshots_are_subsampled_fom() {
        let cfg = BurgersConfig {
            nx: 100,
            dt: 1e-2,
            t_final: 0.2,
            sub_x: 5,
            sub_t: 4,
            ..Default::default()
        };
        let full = burgers_fom(&cfg, 0.8f64, 1.0).unwrap();
        let sub = burgers_snapshots(&cfg, 0.8f64, 1.0).unwrap();
        assert_eq!(sub.dim(), (6, 20));
        for n in 0..6 {
            for j in 0..20 {
                assert_eq!(sub[[n, j]], full[[4 * n, 5 * j]]);
            }
        }
    }

    #[test]
    fn default_config_data_shape() {
        let c = BurgersConfig::default();
        c.validate().unwrap();
        assert_eq!((c.data_steps() + 1, c.data_nx()), (201, 200));
        assert!((c.data_dx() - 0.03).abs() < 1e-15);
        assert!((c.data_dt() - 5e-3).abs() < 1e-15);
    }
}
