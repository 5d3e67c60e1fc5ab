//! Greedy active learning driven by the full-order residual of ROM
//! predictions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::evalkit::rom_predict;
use crate::integrate::{fom_residuals, Scheme};
use crate::pgfinn::PGFinn;
use crate::scalar::Scalar;
use crate::systems::{ParamDomain, System, Trajectory, TrajectoryDataset};
use crate::training::Trainer;

/// Indicator value; `diverged` marks the `+∞` sentinel of a failed rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Indicator<T> {
    pub value: T,
    pub diverged: bool,
}

/// Steps `stride, 2·stride, …` up to `steps` (at least one step).
pub fn strided_steps(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut v: Vec<usize> = (stride..=steps).step_by(stride).collect();
    if v.is_empty() && steps > 0 {
        v.push(steps);
    }
    v
}

/// `Σ_n ‖r(ũ_n; ũ_{n−1}, μ)‖` over the strided steps of a decoded rollout
/// whose rows are `dt` apart.
pub fn indicator_from_states<T: Scalar>(states: &ndarray::Array2<T>, stride: usize, dt: T, system: &System, mu: &[T]) -> Result<T> {
    let steps = strided_steps(states.nrows().saturating_sub(1), stride);
    Ok(fom_residuals(states, &steps, dt, system, mu)?.into_iter().sum())
}

/// Rolls the ROM out from `u₀(μ)` over the system's stored horizon and sums
/// the strided residual norms. The rollout step is the data step divided by
/// `refine`; `stride` counts rollout steps.
pub fn error_indicator<T: Scalar>(
    ae: &Autoencoder<T>,
    model: &PGFinn<T>,
    mu: &[T],
    system: &System,
    stride: usize,
    refine: usize,
    scheme: Scheme,
) -> Result<Indicator<T>> {
    if refine == 0 {
        return Err(Error::InvalidArgument("indicator refinement must be positive".into()));
    }
    let u0 = system.initial_state(mu)?;
    let dt = T::lit(system.data_dt() / refine as f64);
    let pred = rom_predict(ae, model, &u0, mu, dt, system.data_steps() * refine, scheme)?;
    if let Some(f) = &pred.failure {
        warn!("ROM rollout at mu={mu:?} failed at step {}: {}", f.step, f.reason);
        return Ok(Indicator {
            value: T::infinity(),
            diverged: true,
        });
    }
    match indicator_from_states(&pred.states, stride, dt, system, mu) {
        Ok(v) if v.is_finite() => Ok(Indicator { value: v, diverged: false }),
        Ok(_) | Err(Error::Domain(_)) | Err(Error::NonFinite(_)) => Ok(Indicator {
            value: T::infinity(),
            diverged: true,
        }),
        Err(e) => Err(e),
    }
}

/// Index of the largest value; ties go to the lowest index. `NaN` never wins.
pub fn argmax_first<T: Scalar>(values: &[T]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    Ok(best)
}

/// Indicators over all candidates and the index of the worst one.
pub fn greedy_select<T: Scalar>(
    ae: &Autoencoder<T>,
    model: &PGFinn<T>,
    candidates: &[Vec<T>],
    system: &System,
    stride: usize,
    refine: usize,
    scheme: Scheme,
) -> Result<(usize, Vec<Indicator<T>>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let ind: Vec<Indicator<T>> = candidates
        .par_iter()
        .map(|mu| error_indicator(ae, model, mu, system, stride, refine, scheme))
        .collect::<Result<_>>()?;
    let values: Vec<T> = ind.iter().map(|i| i.value).collect();
    Ok((argmax_first(&values)?, ind))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    /// Epochs between greedy updates.
    pub n_up: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Number of parameter points to add.
    pub budget: usize,
    pub pool_size: usize,
    /// Residual sparsification, in indicator rollout steps.
    pub stride: usize,
    /// Indicator rollouts step at the data step divided by this.
    pub refine: usize,
    /// Stop adding once the worst pool indicator falls below this.
    pub target_indicator: Option<f64>,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            n_up: 3000,
            total_epochs: 15_000,
            batch_size: 50,
            budget: 4,
            pool_size: 16,
            stride: 10,
            refine: 1,
            target_indicator: None,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_up == 0 || self.batch_size == 0 || self.pool_size == 0 || self.refine == 0 {
            return Err(Error::InvalidArgument(format!("invalid active-learning configuration {self:?}")));
        }
        Ok(())
    }
}

/// One pool evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingRecord {
    pub update: usize,
    pub epoch: usize,
    pub pool: Vec<Vec<f64>>,
    pub indicators: Vec<f64>,
    /// Pool index that was added, if any.
    pub selected: Option<usize>,
}

pub fn sampling_log_csv(records: &[SamplingRecord]) -> String {
    let mut s = String::from("update,epoch,candidate,mu,indicator,selected\n");
    for r in records {
        for (i, (mu, v)) in r.pool.iter().zip(&r.indicators).enumerate() {
            let mu: Vec<String> = mu.iter().map(|m| format!("{m}")).collect();
            let _ = writeln!(s, "{},{},{},{},{:e},{}", r.update, r.epoch, i, mu.join(";"), v, u8::from(r.selected == Some(i)));
        }
    }
    s
}

fn draw_pool(domain: &ParamDomain, size: usize, seed: u64, update: usize, ds: &TrajectoryDataset<f64>) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_acf1);
    rng.set_stream(update as u64);
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let mu = domain.sample(&mut rng);
        if !ds.contains_mu(&mu) {
            pool.push(mu);
        }
    }
    pool
}

pub struct ActiveOutcome {
    pub log: Vec<SamplingRecord>,
    /// Parameter points in insertion order, initial ones first.
    pub history: Vec<Vec<f64>>,
}

/// Trains while greedily adding parameter points. `ds` is extended in place.
pub fn active_train(
    trainer: &mut Trainer<f64>,
    ds: &mut TrajectoryDataset<f64>,
    system: &System,
    domain: &ParamDomain,
    cfg: &ActiveConfig,
    scheme: Scheme,
    run_dir: Option<&Path>,
) -> Result<ActiveOutcome> {
    cfg.validate()?;
    domain.validate()?;
    let mut log = vec![];
    let mut history = ds.mus();
    let mut added = 0;
    let mut update = 0;
    while trainer.epoch < cfg.total_epochs {
        let next_boundary = ((trainer.epoch / cfg.n_up) + 1) * cfg.n_up;
        let run = next_boundary.min(cfg.total_epochs) - trainer.epoch;
        trainer.run_epochs(ds, run, cfg.batch_size)?;
        if trainer.epoch >= cfg.total_epochs || added >= cfg.budget {
            continue;
        }
        let pool = draw_pool(domain, cfg.pool_size, trainer.seed, update, ds);
        let (mut pick, ind) = greedy_select(&trainer.ae, &trainer.model, &pool, system, cfg.stride, cfg.refine, scheme)?;
        let values: Vec<f64> = ind.iter().map(|i| i.value).collect();
        let mut record = SamplingRecord {
            update,
            epoch: trainer.epoch,
            pool: pool.clone(),
            indicators: values.clone(),
            selected: None,
        };
        update += 1;
        if let Some(t) = cfg.target_indicator {
            if values[pick] < t {
                info!("worst indicator {:e} below target; no more points added", values[pick]);
                log.push(record);
                added = cfg.budget;
                continue;
            }
        }
        // Fall back to the next-worst candidate if the FOM fails.
        let mut tried = vec![false; pool.len()];
        loop {
            tried[pick] = true;
            let mu = &pool[pick];
            match system
                .snapshots::<f64>(mu)
                .and_then(|s| Trajectory::from_states(mu.clone(), 0.0, s, system.data_dt()))
            {
                Ok(traj) => {
                    info!("epoch {}: adding mu={mu:?} (indicator {:e})", trainer.epoch, values[pick]);
                    ds.push(traj)?;
                    history.push(mu.clone());
                    record.selected = Some(pick);
                    added += 1;
                    break;
                }
                Err(e) => {
                    warn!("FOM failed at mu={mu:?}: {e}; trying the next candidate");
                    let rest: Vec<f64> = values.iter().zip(&tried).map(|(&v, &t)| if t { f64::NAN } else { v }).collect();
                    if tried.iter().all(|&t| t) {
                        break;
                    }
                    pick = argmax_first(&rest)?;
                }
            }
        }
        log.push(record);
        if let Some(dir) = run_dir {
            let p = dir.join("sampling_log.csv");
            fs::write(&p, sampling_log_csv(&log)).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(ActiveOutcome { log, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{burgers_initial, backward_euler_solve, BurgersConfig};

    fn coarse_burgers() -> (System, BurgersConfig) {
        let cfg = BurgersConfig {
            nx: 60,
            dt: 1e-2,
            t_final: 0.3,
            sub_x: 1,
            sub_t: 1,
            ..Default::default()
        };
        (System::Burgers(cfg.clone()), cfg)
    }

    fn fom_states(cfg: &BurgersConfig, mu: &[f64]) -> ndarray::Array2<f64> {
        let x = crate::systems::burgers::grid::<f64>(cfg.nx, cfg.x_min, cfg.x_max);
        let mut u = burgers_initial(mu[0], mu[1], &x).unwrap();
        let n = cfg.fine_steps();
        let mut out = ndarray::Array2::zeros((n + 1, cfg.nx));
        out.row_mut(0).assign(&ndarray::Array1::from(u.clone()));
        for k in 1..=n {
            u = backward_euler_solve(&u, cfg.dt, cfg.fine_dx()).unwrap();
            out.row_mut(k).assign(&ndarray::Array1::from(u.clone()));
        }
        out
    }

    #[test]
    fn exact_fom_trajectory_has_tiny_indicator() {
        let (sys, cfg) = coarse_burgers();
        let states = fom_states(&cfg, &[0.8, 1.0]);
        let kept = strided_steps(states.nrows() - 1, 10).len() as f64;
        let v = indicator_from_states(&states, 10, cfg.dt, &sys, &[0.8, 1.0]).unwrap();
        assert!(v <= kept * 1e-10, "{v}");
    }

    #[test]
    fn stride_selects_a_subset() {
        let (sys, cfg) = coarse_burgers();
        let mut states = fom_states(&cfg, &[0.8, 1.0]);
        states.mapv_inplace(|v| v * 1.01);
        let full = indicator_from_states(&states, 1, cfg.dt, &sys, &[0.8, 1.0]).unwrap();
        let one = indicator_from_states(&states, 30, cfg.dt, &sys, &[0.8, 1.0]).unwrap();
        assert!(one <= full);
        assert_eq!(strided_steps(30, 30), vec![30]);
        assert_eq!(strided_steps(30, 100), vec![30]);
        assert_eq!(strided_steps(25, 10), vec![10, 20]);
    }

    #[test]
    fn corrupted_rollout_raises_indicator() {
        let (sys, cfg) = coarse_burgers();
        let states = fom_states(&cfg, &[0.8, 1.0]);
        let base = indicator_from_states(&states, 10, cfg.dt, &sys, &[0.8, 1.0]).unwrap();
        let mut bad = states.clone();
        for (i, mut r) in bad.rows_mut().into_iter().enumerate() {
            r.mapv_inplace(|v| v + 0.1 * ((i * 7) % 3) as f64);
        }
        assert!(indicator_from_states(&bad, 10, cfg.dt, &sys, &[0.8, 1.0]).unwrap() > base);
    }

    #[test]
    fn tie_rule_picks_first_maximum() {
        assert_eq!(argmax_first(&[3.0, 7.1, 7.1]).unwrap(), 1);
        assert_eq!(argmax_first(&[2.0]).unwrap(), 0);
        assert_eq!(argmax_first(&[f64::NAN, 1.0, f64::INFINITY]).unwrap(), 2);
        assert!(argmax_first::<f64>(&[]).is_err());
    }

    #[test]
    fn selection_matches_brute_force() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..9).map(|_| (rng.random_range(0..5) as f64) * 0.5).collect();
            let max = v.iter().cloned().fold(f64::MIN, f64::max);
            let want = v.iter().position(|&x| x == max).unwrap();
            assert_eq!(argmax_first(&v).unwrap(), want);
        }
    }

    #[test]
    fn sampling_log_lists_every_candidate() {
        let r = SamplingRecord {
            update: 0,
            epoch: 30,
            pool: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            indicators: vec![0.5, 0.7],
            selected: Some(1),
        };
        let csv = sampling_log_csv(&[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "0,30,1,3;4,7e-1,1");
    }
}
