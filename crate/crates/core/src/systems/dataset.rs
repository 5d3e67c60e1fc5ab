use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use super::System;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// One parameter point's snapshots `states` (time × state) and their time
/// derivatives `derivs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub mu: Vec<T>,
    pub t0: T,
    pub states: Array2<T>,
    pub derivs: Array2<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// Builds a trajectory with backward-difference derivatives.
    pub fn from_states(mu: Vec<T>, t0: T, states: Array2<T>, dt: T) -> Result<Self> {
        let derivs = backward_difference(&states, dt)?;
        Ok(Trajectory { mu, t0, states, derivs })
    }

    pub fn n_times(&self) -> usize {
        self.states.nrows()
    }

    pub fn times(&self, dt: T) -> Vec<T> {
        (0..self.n_times()).map(|n| self.t0 + dt * T::from_usize_lossy(n)).collect()
    }

    pub fn state(&self, n: usize) -> ArrayView1<'_, T> {
        self.states.row(n)
    }

    pub fn deriv(&self, n: usize) -> ArrayView1<'_, T> {
        self.derivs.row(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.dim() != self.derivs.dim() {
            return Err(Error::Dimension {
                context: "trajectory derivatives".into(),
                expected: self.states.len(),
                got: self.derivs.len(),
            });
        }
        if self.states.nrows() == 0 {
            return Err(Error::Empty("trajectory"));
        }
        let finite = self.states.iter().chain(self.derivs.iter()).chain(self.mu.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("trajectory at mu={:?}", self.mu)));
        }
        Ok(())
    }
}

/// Row `n ≥ 1` is `(U_n − U_{n−1})/Δt`; row 0 repeats the first difference.
pub fn backward_difference<T: Scalar>(states: &Array2<T>, dt: T) -> Result<Array2<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let (nt, nu) = states.dim();
    let mut d = Array2::zeros((nt, nu));
    if nt < 2 {
        return Ok(d);
    }
    for n in 1..nt {
        for j in 0..nu {
            d[[n, j]] = (states[[n, j]] - states[[n - 1, j]]) / dt;
        }
    }
    let first = d.row(1).to_owned();
    d.row_mut(0).assign(&first);
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset<T> {
    pub system: String,
    pub dt: T,
    pub provenance: String,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Scalar> TrajectoryDataset<T> {
    pub fn new(system: &str, dt: T, provenance: &str) -> Self {
        TrajectoryDataset {
            system: system.to_string(),
            dt,
            provenance: provenance.to_string(),
            trajectories: vec![],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.ncols())
    }

    pub fn param_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.mu.len())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn push(&mut self, traj: Trajectory<T>) -> Result<()> {
        traj.validate()?;
        if let Some(first) = self.trajectories.first() {
            check_dim("trajectory state dimension", first.states.ncols(), traj.states.ncols())?;
            check_dim("trajectory parameter dimension", first.mu.len(), traj.mu.len())?;
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn mus(&self) -> Vec<Vec<T>> {
        self.trajectories.iter().map(|t| t.mu.clone()).collect()
    }

    pub fn contains_mu(&self, mu: &[T]) -> bool {
        self.trajectories.iter().any(|t| t.mu == mu)
    }

    /// All consecutive-pair indices `(trajectory, n)` meaning `(u_n, u_{n+1})`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(k, t)| (0..t.n_times().saturating_sub(1)).map(move |n| (k, n)))
            .collect()
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(|t| t.n_times().saturating_sub(1)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dataset time step {}", self.dt)));
        }
        let (nu, nm) = (self.state_dim(), self.param_dim());
        for t in &self.trajectories {
            t.validate()?;
            check_dim("trajectory state dimension", nu, t.states.ncols())?;
            check_dim("trajectory parameter dimension", nm, t.mu.len())?;
        }
        Ok(())
    }
}

/// Integrates the full-order model at every μ and stores the subsampled
/// snapshots with backward-difference derivatives.
pub fn generate_dataset<T: Scalar>(system: &System, mus: &[Vec<T>]) -> Result<TrajectoryDataset<T>> {
    system.validate()?;
    let dt = T::lit(system.data_dt());
    let trajs: Vec<Result<Trajectory<T>>> = mus
        .par_iter()
        .map(|mu| {
            let states = system.snapshots(mu)?;
            Trajectory::from_states(mu.clone(), T::zero(), states, dt)
        })
        .collect();
    let mut ds = TrajectoryDataset::new(system.tag(), dt, &format!("generated:{}", system.tag()));
    for t in trajs {
        ds.push(t?)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{BurgersConfig, GasSetup};

    #[test]
    fn derivative_rows_are_exact_backward_differences() {
        let sys = System::GasContainers(GasSetup::default());
        let ds = generate_dataset::<f64>(&sys, &[vec![10.0], vec![25.0]]).unwrap();
        assert_eq!(ds.len(), 2);
        for t in &ds.trajectories {
            for n in 1..t.n_times() {
                for j in 0..4 {
                    assert_eq!(t.derivs[[n, j]], (t.states[[n, j]] - t.states[[n - 1, j]]) / ds.dt);
                }
            }
            assert_eq!(t.derivs.row(0), t.derivs.row(1));
        }
        assert_eq!(ds.n_pairs(), 2 * 400);
        assert_eq!(ds.pairs()[400], (1, 0));
    }

    #[test]
    fn small_burgers_dataset_shape() {
        let sys = System::Burgers(BurgersConfig {
            nx: 100,
            t_final: 0.1,
            dt: 1e-2,
            sub_x: 5,
            sub_t: 1,
            ..Default::default()
        });
        let ds = generate_dataset::<f64>(&sys, &[vec![0.7, 0.9], vec![0.9, 1.1]]).unwrap();
        assert_eq!(ds.trajectories[1].states.dim(), (11, 20));
        assert_eq!(ds.state_dim(), 20);
        assert_eq!(ds.param_dim(), 2);
    }

    #[test]
    fn push_rejects_mismatched_shapes() {
        let mut ds = TrajectoryDataset::<f64>::new("x", 0.1, "test");
        ds.push(Trajectory::from_states(vec![1.0], 0.0, Array2::zeros((3, 2)), 0.1).unwrap()).unwrap();
        let bad = Trajectory::from_states(vec![1.0], 0.0, Array2::zeros((3, 4)), 0.1).unwrap();
        assert!(ds.push(bad).is_err());
    }
}
