//! Joint training loop over consecutive snapshot pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::diffcore::{Adam, Checkpoint, LrSchedule};
use crate::error::{check_dim, Error, Result};
use crate::losses::{joint_params, set_joint_params, total_loss, Batch, LossTerms, LossWeights};
use crate::pgfinn::PGFinn;
use crate::scalar::Scalar;
use crate::systems::TrajectoryDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub lr: LrSchedule,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phases: vec![Phase {
                epochs: 15_000,
                batch_size: 50,
            }],
            lr: LrSchedule::default(),
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

impl TrainSchedule {
    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Batch size in force at a global epoch.
    pub fn batch_size_at(&self, epoch: usize) -> Option<usize> {
        let mut end = 0;
        for p in &self.phases {
            end += p.epochs;
            if epoch < end {
                return Some(p.batch_size);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.iter().any(|p| p.batch_size == 0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr.base > 0.0 && self.lr.factor > 0.0) {
            return Err(Error::InvalidArgument("learning rate and decay factor must be positive".into()));
        }
        Ok(())
    }
}

/// Shuffled partition of `0..n_pairs` for one epoch. The permutation depends
/// only on `(seed, epoch)`.
pub fn make_batches(n_pairs: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..n_pairs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    idx.shuffle(&mut rng);
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub int: f64,
    pub rec: f64,
    pub jac: f64,
    pub model: f64,
    pub total: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,L_int,L_rec,L_Jac,L_mod,total,lr";

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e},{:e},{:e}", r.epoch, r.int, r.rec, r.jac, r.model, r.total, r.lr);
    }
    s
}

/// Inverse of [`history_csv`]. `{:e}` output round-trips exactly.
pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
        return Err(Error::parse("history", "missing or unexpected header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: String| Error::parse("history", format!("line {}: {m}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(EpochRecord {
                epoch: f[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                int: num(1)?,
                rec: num(2)?,
                jac: num(3)?,
                model: num(4)?,
                total: num(5)?,
                lr: num(6)?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    epoch: usize,
    seed: u64,
    adam_step: u64,
    lr: LrSchedule,
    weights: LossWeights,
}

/// Autoencoder, latent model and optimizer state advanced epoch by epoch.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub ae: Autoencoder<T>,
    pub model: PGFinn<T>,
    pub adam: Adam<T>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Epochs completed so far.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub run_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub log_every: usize,
    last_good: Option<(Vec<T>, Adam<T>, usize)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(ae: Autoencoder<T>, model: PGFinn<T>, weights: LossWeights, lr: LrSchedule, seed: u64) -> Result<Self> {
        weights.validate()?;
        check_dim("latent dimension", model.latent_dim(), ae.latent_dim())?;
        let n = ae.n_params() + model.n_params();
        Ok(Trainer {
            ae,
            model,
            adam: Adam::new(n, lr),
            weights,
            seed,
            epoch: 0,
            history: vec![],
            run_dir: None,
            checkpoint_every: 0,
            log_every: 0,
            last_good: None,
        })
    }

    pub fn with_run_dir(mut self, dir: &Path, checkpoint_every: usize) -> Self {
        self.run_dir = Some(dir.to_path_buf());
        self.checkpoint_every = checkpoint_every;
        self
    }

    /// Loss terms summed over every pair of the dataset, without gradients.
    pub fn full_loss(&self, ds: &TrajectoryDataset<T>) -> Result<LossTerms<T>> {
        let pairs = ds.pairs();
        let mut acc = LossTerms::default();
        for chunk in pairs.chunks(256) {
            let b = Batch::from_dataset(ds, chunk)?;
            acc = acc.add(&crate::losses::evaluate_terms(&b, &self.ae, &self.model, &self.weights)?);
        }
        Ok(acc)
    }

    fn remember_good(&mut self) {
        self.last_good = Some((joint_params(&self.ae, &self.model), self.adam.clone(), self.epoch));
    }

    fn restore_good(&mut self) -> Result<()> {
        if let Some((p, adam, epoch)) = self.last_good.clone() {
            set_joint_params(&mut self.ae, &mut self.model, &p)?;
            self.adam = adam;
            self.epoch = epoch;
            self.history.retain(|r| r.epoch < epoch);
        }
        Ok(())
    }

    /// One epoch over all pairs; one optimizer step per batch.
    pub fn step_epoch(&mut self, ds: &TrajectoryDataset<T>, pairs: &[(usize, usize)], batch_size: usize) -> Result<EpochRecord> {
        let batches = make_batches(pairs.len(), batch_size, self.seed, self.epoch)?;
        let mut acc = LossTerms::<T>::default();
        let mut params = joint_params(&self.ae, &self.model);
        for idx in batches {
            let sel: Vec<(usize, usize)> = idx.iter().map(|&i| pairs[i]).collect();
            let batch = Batch::from_dataset(ds, &sel)?;
            let (terms, grad) = total_loss(&batch, &self.ae, &self.model, &self.weights)?;
            acc = acc.add(&terms);
            self.adam.step(&mut params, &grad, self.epoch)?;
            set_joint_params(&mut self.ae, &mut self.model, &params)?;
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            int: acc.int.as_f64(),
            rec: acc.rec.as_f64(),
            jac: acc.jac.as_f64(),
            model: acc.model.as_f64(),
            total: acc.total.as_f64(),
            lr: self.adam.schedule.rate(self.epoch),
        };
        self.epoch += 1;
        Ok(rec)
    }

    /// Runs `epochs` epochs. On a non-finite loss the last good state is
    /// restored and the error returned.
    pub fn run_epochs(&mut self, ds: &TrajectoryDataset<T>, epochs: usize, batch_size: usize) -> Result<()> {
        ds.validate()?;
        if ds.n_pairs() == 0 {
            return Err(Error::Empty("training pairs"));
        }
        let pairs = ds.pairs();
        if self.last_good.is_none() {
            self.remember_good();
        }
        for _ in 0..epochs {
            match self.step_epoch(ds, &pairs, batch_size) {
                Ok(rec) => {
                    if self.log_every > 0 && rec.epoch % self.log_every == 0 {
                        info!("epoch {} total {:.4e} int {:.4e} rec {:.4e}", rec.epoch, rec.total, rec.int, rec.rec);
                    }
                    self.history.push(rec);
                }
                Err(Error::NonFinite(msg)) => {
                    warn!("non-finite value at epoch {}: {msg}; restoring last good state", self.epoch);
                    self.restore_good()?;
                    return Err(Error::NonFinite(msg));
                }
                Err(e) => return Err(e),
            }
            if self.checkpoint_every > 0 && self.epoch % self.checkpoint_every == 0 {
                self.checkpoint(ds)?;
            }
        }
        Ok(())
    }

    /// Asserts the structural properties on a few encoded training states.
    pub fn check_structure(&self, ds: &TrajectoryDataset<T>) -> Result<()> {
        for t in ds.trajectories.iter().take(3) {
            let n = t.n_times() / 2;
            let z = self.ae.encode(&t.states.row(n).to_vec())?;
            let rep = self.model.check_structure(&z, &t.mu)?;
            if !rep.holds(T::lit(1e-9)) {
                return Err(Error::Structure(format!("epoch {}: {rep:?}", self.epoch)));
            }
        }
        Ok(())
    }

    pub fn checkpoint(&mut self, ds: &TrajectoryDataset<T>) -> Result<()> {
        self.check_structure(ds)?;
        self.remember_good();
        if let Some(dir) = self.run_dir.clone() {
            self.save(&dir.join("checkpoints").join(format!("epoch_{:06}", self.epoch)))?;
            self.save(&dir.join("checkpoints").join("latest"))?;
            write_history(&dir.join("history.csv"), &self.history)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.ae.save(&dir.join("autoencoder"))?;
        self.model.save(&dir.join("pgfinn"))?;
        let n = self.adam.len();
        let mut mv = self.adam.m.clone();
        mv.extend_from_slice(&self.adam.v);
        Checkpoint::from_tensor("adam", vec![2, n], &mv, self.seed, self.adam.step, self.epoch as u64)
            .save(&dir.join("adam.ckpt"))?;
        let state = TrainerState {
            epoch: self.epoch,
            seed: self.seed,
            adam_step: self.adam.step,
            lr: self.adam.schedule,
            weights: self.weights,
        };
        let p = dir.join("state.json");
        fs::write(&p, serde_json::to_string_pretty(&state)?).map_err(|e| Error::io(&p, e))
    }

    /// Restores a trainer written by [`Trainer::save`]; history is not part
    /// of a checkpoint.
    pub fn resume(dir: &Path) -> Result<Self> {
        let p = dir.join("state.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let st: TrainerState = serde_json::from_str(&text).map_err(|e| Error::parse("trainer state", e.to_string()))?;
        let ae = Autoencoder::load(&dir.join("autoencoder"))?;
        let model = PGFinn::load(&dir.join("pgfinn"))?;
        let mut t = Trainer::new(ae, model, st.weights, st.lr, st.seed)?;
        let mv: Vec<T> = Checkpoint::load(&dir.join("adam.ckpt"))?.values();
        let n = t.adam.len();
        check_dim("optimizer state", 2 * n, mv.len())?;
        t.adam.m = mv[..n].to_vec();
        t.adam.v = mv[n..].to_vec();
        t.adam.step = st.adam_step;
        t.epoch = st.epoch;
        Ok(t)
    }

    /// Runs whatever part of `schedule` lies beyond the current epoch.
    pub fn run_schedule(&mut self, ds: &TrajectoryDataset<T>, schedule: &TrainSchedule) -> Result<()> {
        schedule.validate()?;
        let mut start = 0;
        for p in &schedule.phases {
            let end = start + p.epochs;
            if self.epoch < end {
                let todo = end - self.epoch.max(start);
                self.run_epochs(ds, todo, p.batch_size)?;
            }
            start = end;
        }
        Ok(())
    }

    /// Writes the final model and history into the run directory.
    pub fn finish(&self) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            self.save(&dir.join("final"))?;
            write_history(&dir.join("history.csv"), &self.history)?;
        }
        Ok(())
    }
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(records)).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome<T> {
    pub ae: Autoencoder<T>,
    pub model: PGFinn<T>,
    pub history: Vec<EpochRecord>,
}

/// Trains from scratch on a fixed dataset.
pub fn train<T: Scalar>(
    ds: &TrajectoryDataset<T>,
    ae: Autoencoder<T>,
    model: PGFinn<T>,
    weights: LossWeights,
    schedule: &TrainSchedule,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(ae, model, weights, schedule.lr, seed)?;
    t.log_every = schedule.log_every;
    if let Some(d) = run_dir {
        t = t.with_run_dir(d, schedule.checkpoint_every);
    }
    t.run_schedule(ds, schedule)?;
    t.finish()?;
    Ok(TrainOutcome {
        ae: t.ae,
        model: t.model,
        history: t.history,
    })
}
