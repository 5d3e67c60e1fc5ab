//! Full-order reference models and trajectory datasets.

pub mod archive;
pub mod burgers;
pub mod dataset;
pub mod gas;
pub mod thermo;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use archive::{load_snapshots, save_snapshots, write_csv};
pub use burgers::{backward_euler_solve, burgers_initial, burgers_rhs, BurgersConfig};
pub use dataset::{backward_difference, generate_dataset, Trajectory, TrajectoryDataset};
pub use gas::{gas_rhs, GasContainersParams, GAS_INITIAL};
pub use thermo::{thermo_mass_rhs, ThermoMassParams, THERMO_INITIAL};

use crate::error::{check_dim, Error, Result};
use crate::integrate::rk4;
use crate::scalar::Scalar;

/// Time grid for the ODE benchmarks: reference RK4 at `dt`, every
/// `sub_t`-th step stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSampling {
    pub dt: f64,
    pub horizon: f64,
    pub sub_t: usize,
}

impl OdeSampling {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0) || self.sub_t == 0 {
            return Err(Error::InvalidArgument(format!("invalid ODE sampling {self:?}")));
        }
        if self.fine_steps() % self.sub_t != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} reference steps do not subsample evenly by {}",
                self.fine_steps(),
                self.sub_t
            )));
        }
        Ok(())
    }

    pub fn fine_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

fn default_gas_params() -> Vec<String> {
    vec!["alpha".into()]
}

fn default_thermo_params() -> Vec<String> {
    vec!["alpha".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSetup {
    #[serde(default = "ten")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "gas_initial")]
    pub initial: [f64; 4],
    /// Which of `alpha`, `mass` the parameter vector μ overrides, in order.
    #[serde(default = "default_gas_params")]
    pub params: Vec<String>,
    #[serde(default = "gas_sampling")]
    pub sampling: OdeSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoSetup {
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "ten")]
    pub k: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "thermo_initial")]
    pub initial: [f64; 6],
    /// Which of `alpha`, `k`, `beta` the parameter vector μ overrides.
    #[serde(default = "default_thermo_params")]
    pub params: Vec<String>,
    #[serde(default = "thermo_sampling")]
    pub sampling: OdeSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSetup {
    pub state_dim: usize,
    pub dt: f64,
    #[serde(default)]
    pub params: Vec<String>,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> f64 {
    10.0
}
fn gas_initial() -> [f64; 4] {
    GAS_INITIAL
}
fn thermo_initial() -> [f64; 6] {
    THERMO_INITIAL
}
fn gas_sampling() -> OdeSampling {
    OdeSampling {
        dt: 1e-3,
        horizon: 8.0,
        sub_t: 20,
    }
}
fn thermo_sampling() -> OdeSampling {
    OdeSampling {
        dt: 1e-3,
        horizon: 10.0,
        sub_t: 20,
    }
}

impl Default for GasSetup {
    fn default() -> Self {
        GasSetup {
            alpha: 10.0,
            mass: 1.0,
            initial: GAS_INITIAL,
            params: default_gas_params(),
            sampling: gas_sampling(),
        }
    }
}

impl Default for ThermoSetup {
    fn default() -> Self {
        ThermoSetup {
            alpha: 0.5,
            k: 10.0,
            beta: 1.0,
            initial: THERMO_INITIAL,
            params: default_thermo_params(),
            sampling: thermo_sampling(),
        }
    }
}

/// A full-order model together with its parameterization and time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    GasContainers(GasSetup),
    ThermoMass(ThermoSetup),
    Burgers(BurgersConfig),
    /// Snapshot data produced elsewhere; no right-hand side available.
    External(ExternalSetup),
}

impl System {
    pub fn tag(&self) -> &'static str {
        match self {
            System::GasContainers(_) => "gas_containers",
            System::ThermoMass(_) => "thermo_mass",
            System::Burgers(_) => "burgers",
            System::External(_) => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            System::GasContainers(g) => {
                g.sampling.validate()?;
                for p in &g.params {
                    if !matches!(p.as_str(), "alpha" | "mass") {
                        return Err(Error::InvalidArgument(format!("unknown gas-containers parameter '{p}'")));
                    }
                }
                self.gas_params::<f64>(&self.base_mu())?.validate()
            }
            System::ThermoMass(t) => {
                t.sampling.validate()?;
                for p in &t.params {
                    if !matches!(p.as_str(), "alpha" | "k" | "beta") {
                        return Err(Error::InvalidArgument(format!("unknown thermo-mass parameter '{p}'")));
                    }
                }
                self.thermo_params::<f64>(&self.base_mu())?.validate()
            }
            System::Burgers(b) => b.validate(),
            System::External(e) => {
                if e.state_dim == 0 || !(e.dt > 0.0) {
                    return Err(Error::InvalidArgument("external system needs state_dim > 0 and dt > 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            System::GasContainers(g) => g.params.clone(),
            System::ThermoMass(t) => t.params.clone(),
            System::Burgers(_) => vec!["a".into(), "w".into()],
            System::External(e) => e.params.clone(),
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_names().len()
    }

    /// μ assembled from the configured base values.
    pub fn base_mu(&self) -> Vec<f64> {
        match self {
            System::GasContainers(g) => g
                .params
                .iter()
                .map(|p| if p == "alpha" { g.alpha } else { g.mass })
                .collect(),
            System::ThermoMass(t) => t
                .params
                .iter()
                .map(|p| match p.as_str() {
                    "alpha" => t.alpha,
                    "k" => t.k,
                    _ => t.beta,
                })
                .collect(),
            System::Burgers(_) => vec![0.8, 1.0],
            System::External(e) => vec![0.0; e.params.len()],
        }
    }

    /// Dimension of a stored snapshot.
    pub fn state_dim(&self) -> usize {
        match self {
            System::GasContainers(_) => 4,
            System::ThermoMass(_) => 6,
            System::Burgers(b) => b.data_nx(),
            System::External(e) => e.state_dim,
        }
    }

    /// Time step between stored snapshots.
    pub fn data_dt(&self) -> f64 {
        match self {
            System::GasContainers(g) => g.sampling.dt * g.sampling.sub_t as f64,
            System::ThermoMass(t) => t.sampling.dt * t.sampling.sub_t as f64,
            System::Burgers(b) => b.data_dt(),
            System::External(e) => e.dt,
        }
    }

    /// Number of stored intervals (snapshots minus one).
    pub fn data_steps(&self) -> usize {
        match self {
            System::GasContainers(g) => g.sampling.fine_steps() / g.sampling.sub_t,
            System::ThermoMass(t) => t.sampling.fine_steps() / t.sampling.sub_t,
            System::Burgers(b) => b.data_steps(),
            System::External(_) => 0,
        }
    }

    fn check_mu(&self, mu_len: usize) -> Result<()> {
        check_dim("parameter vector", self.param_dim(), mu_len)
    }

    pub fn gas_params<T: Scalar>(&self, mu: &[T]) -> Result<GasContainersParams<T>> {
        let System::GasContainers(g) = self else {
            return Err(Error::InvalidArgument(format!("{} is not the gas-containers system", self.tag())));
        };
        self.check_mu(mu.len())?;
        let mut p = GasContainersParams {
            alpha: T::lit(g.alpha),
            mass: T::lit(g.mass),
        };
        for (name, &v) in g.params.iter().zip(mu) {
            match name.as_str() {
                "alpha" => p.alpha = v,
                _ => p.mass = v,
            }
        }
        Ok(p)
    }

    pub fn thermo_params<T: Scalar>(&self, mu: &[T]) -> Result<ThermoMassParams<T>> {
        let System::ThermoMass(t) = self else {
            return Err(Error::InvalidArgument(format!("{} is not the thermo-mass system", self.tag())));
        };
        self.check_mu(mu.len())?;
        let mut p = ThermoMassParams::new(T::lit(t.alpha), T::lit(t.k), T::lit(t.beta));
        for (name, &v) in t.params.iter().zip(mu) {
            match name.as_str() {
                "alpha" => p.alpha = v,
                "k" => p.k = v,
                _ => p.beta = v,
            }
        }
        Ok(p)
    }

    pub fn initial_state<T: Scalar>(&self, mu: &[T]) -> Result<Vec<T>> {
        self.check_mu(mu.len())?;
        match self {
            System::GasContainers(g) => Ok(g.initial.iter().map(|&v| T::lit(v)).collect()),
            System::ThermoMass(t) => Ok(t.initial.iter().map(|&v| T::lit(v)).collect()),
            System::Burgers(b) => {
                let x = burgers::grid::<T>(b.data_nx(), b.x_min, b.x_max);
                burgers_initial(mu[0], mu[1], &x)
            }
            System::External(_) => Err(Error::InvalidArgument(
                "external snapshot data has no initial-condition generator".into(),
            )),
        }
    }

    /// Right-hand side on the stored grid.
    pub fn rhs<T: Scalar>(&self, u: &[T], mu: &[T]) -> Result<Vec<T>> {
        check_dim("state", self.state_dim(), u.len())?;
        match self {
            System::GasContainers(_) => gas_rhs(u, &self.gas_params(mu)?),
            System::ThermoMass(_) => thermo_mass_rhs(u, &self.thermo_params(mu)?),
            System::Burgers(b) => {
                self.check_mu(mu.len())?;
                Ok(burgers_rhs(u, T::lit(b.data_dx())))
            }
            System::External(_) => Err(Error::InvalidArgument("external data has no right-hand side".into())),
        }
    }

    /// Total energy and entropy, for the closed-form thermodynamic benchmarks.
    pub fn energy_entropy<T: Scalar>(&self, u: &[T], mu: &[T]) -> Result<(T, T)> {
        match self {
            System::GasContainers(_) => gas::gas_energy_entropy(u, &self.gas_params(mu)?),
            System::ThermoMass(_) => thermo::thermo_mass_energy_entropy(u, &self.thermo_params(mu)?),
            _ => Err(Error::InvalidArgument(format!("no closed-form energy/entropy for {}", self.tag()))),
        }
    }

    pub fn energy_grad<T: Scalar>(&self, u: &[T], mu: &[T]) -> Result<Vec<T>> {
        match self {
            System::GasContainers(_) => gas::gas_energy_grad(u, &self.gas_params(mu)?),
            System::ThermoMass(_) => thermo::thermo_mass_energy_grad(u, &self.thermo_params(mu)?),
            _ => Err(Error::InvalidArgument(format!("no closed-form energy for {}", self.tag()))),
        }
    }

    pub fn entropy_grad<T: Scalar>(&self, u: &[T], mu: &[T]) -> Result<Vec<T>> {
        check_dim("state", self.state_dim(), u.len())?;
        self.check_mu(mu.len())?;
        match self {
            System::GasContainers(_) => Ok(gas::gas_entropy_grad()),
            System::ThermoMass(_) => Ok(thermo::thermo_mass_entropy_grad()),
            _ => Err(Error::InvalidArgument(format!("no closed-form entropy for {}", self.tag()))),
        }
    }

    pub fn has_closed_form_thermo(&self) -> bool {
        matches!(self, System::GasContainers(_) | System::ThermoMass(_))
    }

    /// Reference trajectory on the stored grid, `(data_steps + 1) × state_dim`.
    pub fn snapshots<T: Scalar>(&self, mu: &[T]) -> Result<Array2<T>> {
        self.validate()?;
        self.check_mu(mu.len())?;
        match self {
            System::GasContainers(GasSetup { sampling, .. }) | System::ThermoMass(ThermoSetup { sampling, .. }) => {
                let u0 = self.initial_state(mu)?;
                let n = sampling.fine_steps();
                let roll = rk4(|u: &[T], m: &[T]| self.rhs(u, m), &u0, mu, T::lit(sampling.dt), n);
                let full = roll.into_result()?;
                let keep: Vec<usize> = (0..=n).step_by(sampling.sub_t).collect();
                Ok(full.select(ndarray::Axis(0), &keep))
            }
            System::Burgers(b) => burgers::burgers_snapshots(b, mu[0], mu[1]),
            System::External(_) => Err(Error::InvalidArgument("external data cannot be regenerated".into())),
        }
    }
}

/// Parameter domain: a box in `R^{N_μ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = ParamDomain { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("parameter domain bounds", self.lower.len(), self.upper.len())?;
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(format!("empty parameter box {self:?}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// The `2^{N_μ}` corners, first coordinate varying slowest.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> (n - 1 - i) & 1 == 1 { self.upper[i] } else { self.lower[i] })
                    .collect()
            })
            .collect()
    }

    /// Tensor grid with `counts[i]` uniform points along axis `i`, first
    /// coordinate varying slowest.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        check_dim("grid counts", self.dim(), counts.len())?;
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| linspace(self.lower[i], self.upper[i], c))
            .collect();
        let mut out = vec![vec![]];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(out)
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..=u) })
            .collect()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim() && mu.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}
