//! Subcommand implementations. Each one writes its artifacts into a run
//! directory next to a config snapshot and a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tlasdi::active::{active_train, error_indicator, sampling_log_csv, ActiveOutcome};
use tlasdi::autoencoder::Autoencoder;
use tlasdi::evalkit::{
    bound_terms, correlate, error_map, latent_spectrum, rom_predict, thermo_rollout, timing_report, trajectory_error,
    BoundTerms, Correlation, ErrorMap, Spectrum, ThermoSeries, TimingReport,
};
use tlasdi::pgfinn::PGFinn;
use tlasdi::systems::{generate_dataset, load_snapshots, save_snapshots, write_csv, Trajectory, TrajectoryDataset};
use tlasdi::training::{parse_history_csv, Trainer};
use tlasdi::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
const TRAINING_POINTS: &str = "training_points.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub status: String,
    pub artifacts: Vec<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

/// A run directory being filled by one subcommand.
pub struct Run {
    pub dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    /// Creates `<out>/<command>` and writes the config snapshot and an
    /// in-progress manifest.
    pub fn start(out: &Path, command: &str, cfg: &RunConfig) -> Result<Run> {
        let dir = out.join(command);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        write(&dir.join(CONFIG_SNAPSHOT), cfg.to_toml())?;
        let run = Run {
            dir,
            manifest: Manifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: cfg.seed,
                config: CONFIG_SNAPSHOT.into(),
                status: "running".into(),
                artifacts: vec![],
            },
        };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<()> {
        write(&self.dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest)?)
    }

    pub fn artifact(&mut self, name: &str, text: impl AsRef<[u8]>) -> Result<()> {
        write(&self.dir.join(name), text)?;
        self.record(name);
        Ok(())
    }

    /// Notes a file or directory written by someone else.
    pub fn record(&mut self, name: &str) {
        if !self.manifest.artifacts.iter().any(|a| a == name) {
            self.manifest.artifacts.push(name.into());
        }
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.status = "complete".into();
        self.write_manifest()?;
        Ok(self.dir)
    }
}

fn mu_label(mu: &[f64]) -> String {
    mu.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

fn mu_columns(cfg: &RunConfig) -> String {
    cfg.system.param_names().join(",")
}

fn mu_fields(mu: &[f64]) -> String {
    mu.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

/// Training data: loaded from `data.path` when set, otherwise generated.
pub fn training_data(cfg: &RunConfig, points: &[Vec<f64>]) -> Result<TrajectoryDataset<f64>> {
    match &cfg.data.path {
        Some(p) => {
            let ds = load_snapshots::<f64>(p)?;
            if ds.system != cfg.system.tag() {
                return Err(Error::InvalidArgument(format!(
                    "dataset {} holds system `{}`, config expects `{}`",
                    p.display(),
                    ds.system,
                    cfg.system.tag()
                )));
            }
            Ok(ds)
        }
        None => generate_dataset(&cfg.system, points),
    }
}

/// Fresh autoencoder and pGFINN drawn from the configured seed.
pub fn init_models(cfg: &RunConfig) -> Result<(Autoencoder<f64>, PGFinn<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let ae = Autoencoder::new(&cfg.autoencoder, &mut rng)?;
    rng.set_stream(2);
    let pc = cfg.pgfinn_config();
    let model = if cfg.model.known_potentials {
        PGFinn::with_known(&pc, &cfg.system, &mut rng)?
    } else {
        PGFinn::new(&pc, &mut rng)?
    };
    Ok((ae, model))
}

/// Autoencoder, model and training points saved under `dir`.
pub fn load_models(dir: &Path) -> Result<(Autoencoder<f64>, PGFinn<f64>, Vec<Vec<f64>>)> {
    let ae = Autoencoder::load(&dir.join("autoencoder"))?;
    let model = PGFinn::load(&dir.join("pgfinn"))?;
    let p = dir.join(TRAINING_POINTS);
    let points = if p.exists() {
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        serde_json::from_str(&text)?
    } else {
        vec![]
    };
    Ok((ae, model, points))
}

fn save_points(dir: &Path, points: &[Vec<f64>]) -> Result<()> {
    write(&dir.join(TRAINING_POINTS), serde_json::to_string_pretty(points)?)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<TrajectoryDataset<f64>> {
    let mut run = Run::start(out, "gen-data", cfg)?;
    let points = cfg.data.train.resolve(&cfg.domain)?;
    let ds = generate_dataset::<f64>(&cfg.system, &points)?;
    save_snapshots(&ds, &run.dir.join("dataset.json"))?;
    for (k, t) in ds.trajectories.iter().enumerate() {
        write_csv(t, ds.dt, &run.dir.join(format!("traj_{k:03}.csv")))?;
    }
    let mut names = vec![];
    for entry in fs::read_dir(&run.dir).map_err(io(&run.dir))? {
        let name = entry.map_err(io(&run.dir))?.file_name().to_string_lossy().into_owned();
        if name != MANIFEST && name != CONFIG_SNAPSHOT {
            names.push(name);
        }
    }
    names.sort();
    for n in &names {
        run.record(n);
    }
    info!("wrote {} trajectories to {}", ds.len(), run.dir.display());
    run.finish()?;
    Ok(ds)
}

pub struct Trained {
    pub ae: Autoencoder<f64>,
    pub model: PGFinn<f64>,
    pub points: Vec<Vec<f64>>,
    /// Errors at the training points.
    pub errors: ErrorMap,
    pub dir: PathBuf,
}

fn training_errors(cfg: &RunConfig, ae: &Autoencoder<f64>, model: &PGFinn<f64>, ds: &TrajectoryDataset<f64>) -> Result<ErrorMap> {
    let points = ds.mus();
    error_map(ae, model, &cfg.system, &points, Some(ds), &points, cfg.eval.scheme)
}

/// Trains on the configured points. With `resume`, continues from the last
/// checkpoint of a previous run in the same directory.
pub fn train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Trained> {
    let mut run = Run::start(out, "train", cfg)?;
    let points = cfg.data.train.resolve(&cfg.domain)?;
    let ds = training_data(cfg, &points)?;
    let latest = run.dir.join("checkpoints").join("latest");
    let mut trainer = if resume && latest.join("state.json").exists() {
        let mut t = Trainer::resume(&latest)?;
        let hist = run.dir.join("history.csv");
        if hist.exists() {
            let text = fs::read_to_string(&hist).map_err(io(&hist))?;
            t.history = parse_history_csv(&text)?.into_iter().filter(|r| r.epoch <= t.epoch).collect();
        }
        info!("resuming from epoch {}", t.epoch);
        t
    } else {
        let (ae, model) = init_models(cfg)?;
        Trainer::new(ae, model, cfg.loss, cfg.schedule.lr, cfg.seed)?
    };
    trainer.log_every = cfg.schedule.log_every;
    trainer = trainer.with_run_dir(&run.dir, cfg.schedule.checkpoint_every);
    trainer.run_schedule(&ds, &cfg.schedule)?;
    trainer.finish()?;
    let final_dir = run.dir.join("final");
    let points = ds.mus();
    save_points(&final_dir, &points)?;
    run.record("final");
    run.record("history.csv");
    if cfg.schedule.checkpoint_every > 0 {
        run.record("checkpoints");
    }
    let errors = training_errors(cfg, &trainer.ae, &trainer.model, &ds)?;
    run.artifact("training_errors.csv", errors.to_csv())?;
    info!("training points: max relative error {:.4e}", errors.max());
    let dir = run.finish()?;
    Ok(Trained {
        ae: trainer.ae,
        model: trainer.model,
        points,
        errors,
        dir,
    })
}

pub struct ActiveTrained {
    pub trained: Trained,
    pub outcome: ActiveOutcome,
}

pub fn active(cfg: &RunConfig, out: &Path) -> Result<ActiveTrained> {
    let section = cfg
        .active
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no [active] section".into()))?;
    let mut run = Run::start(out, "active-train", cfg)?;
    let initial = section.initial.resolve(&cfg.domain)?;
    let mut ds = generate_dataset::<f64>(&cfg.system, &initial)?;
    let (ae, model) = init_models(cfg)?;
    let mut trainer = Trainer::new(ae, model, cfg.loss, cfg.schedule.lr, cfg.seed)?;
    trainer.log_every = cfg.schedule.log_every;
    trainer = trainer.with_run_dir(&run.dir, cfg.schedule.checkpoint_every);
    let outcome = active_train(
        &mut trainer,
        &mut ds,
        &cfg.system,
        &cfg.domain,
        &section.options,
        cfg.eval.scheme,
        Some(&run.dir),
    )?;
    trainer.finish()?;
    let final_dir = run.dir.join("final");
    save_points(&final_dir, &outcome.history)?;
    run.record("final");
    run.record("history.csv");
    run.artifact("sampling_log.csv", sampling_log_csv(&outcome.log))?;
    let mut pts = format!("order,{}\n", mu_columns(cfg));
    for (i, mu) in outcome.history.iter().enumerate() {
        let _ = writeln!(pts, "{i},{}", mu_fields(mu));
    }
    run.artifact("training_points.csv", pts)?;
    let errors = training_errors(cfg, &trainer.ae, &trainer.model, &ds)?;
    run.artifact("training_errors.csv", errors.to_csv())?;
    let dir = run.finish()?;
    Ok(ActiveTrained {
        trained: Trained {
            ae: trainer.ae,
            model: trainer.model,
            points: outcome.history.clone(),
            errors,
            dir,
        },
        outcome,
    })
}

pub fn eval_map(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<ErrorMap> {
    let mut run = Run::start(out, "eval-map", cfg)?;
    let (ae, model, training) = load_models(model_dir)?;
    let mus = cfg.eval.test.resolve(&cfg.domain)?;
    let map = error_map(&ae, &model, &cfg.system, &mus, None, &training, cfg.eval.scheme)?;
    run.artifact("error_map.csv", map.to_csv())?;
    run.artifact(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::json!({ "max": map.max(), "mean": map.mean(), "points": mus.len() }))?,
    )?;
    run.finish()?;
    Ok(map)
}

pub fn thermo(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<Vec<(Vec<f64>, ThermoSeries<f64>)>> {
    let mut run = Run::start(out, "thermo", cfg)?;
    let (ae, model, _) = load_models(model_dir)?;
    let dt = cfg.eval.thermo_dt.unwrap_or(cfg.system.data_dt());
    let steps = cfg.eval.thermo_steps.unwrap_or(cfg.system.data_steps());
    let mut summary = format!("{},energy_drift,min_entropy_rate,steps\n", mu_columns(cfg));
    let mut all = vec![];
    for (i, mu) in cfg.eval.probe.resolve(&cfg.domain)?.into_iter().enumerate() {
        let z0 = ae.encode(&cfg.system.initial_state(&mu)?)?;
        let series = thermo_rollout(&model, &z0, &mu, dt, steps, cfg.eval.scheme)?;
        run.artifact(&format!("thermo_{i:03}.csv"), series.to_csv())?;
        let min_rate = series.entropy_rate.iter().cloned().fold(f64::INFINITY, f64::min);
        let _ = writeln!(summary, "{},{:e},{:e},{}", mu_fields(&mu), series.energy_drift(), min_rate, series.times.len() - 1);
        all.push((mu, series));
    }
    run.artifact("summary.csv", summary)?;
    run.finish()?;
    Ok(all)
}

pub fn spectrum(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<Vec<(Vec<f64>, Spectrum)>> {
    let mut run = Run::start(out, "spectrum", cfg)?;
    let (ae, model, _) = load_models(model_dir)?;
    let dt = cfg.system.data_dt();
    let mut summary = format!("{},mean_centroid\n", mu_columns(cfg));
    let mut all = vec![];
    for (i, mu) in cfg.eval.probe.resolve(&cfg.domain)?.into_iter().enumerate() {
        let pred = rom_predict(&ae, &model, &cfg.system.initial_state(&mu)?, &mu, dt, cfg.system.data_steps(), cfg.eval.scheme)?;
        if let Some(f) = pred.failure {
            return Err(Error::NonFinite(format!("latent rollout at mu={} failed at step {}: {}", mu_label(&mu), f.step, f.reason)));
        }
        let spec = latent_spectrum(pred.latent.view(), dt)?;
        run.artifact(&format!("spectrum_{i:03}.csv"), spec.to_csv())?;
        let _ = writeln!(summary, "{},{:e}", mu_fields(&mu), spec.mean_centroid());
        all.push((mu, spec));
    }
    run.artifact("summary.csv", summary)?;
    run.finish()?;
    Ok(all)
}

fn truth(cfg: &RunConfig, mu: &[f64]) -> Result<Trajectory<f64>> {
    Trajectory::from_states(mu.to_vec(), 0.0, cfg.system.snapshots(mu)?, cfg.system.data_dt())
}

pub fn bound(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<Vec<(Vec<f64>, BoundTerms<f64>)>> {
    let mut run = Run::start(out, "bound", cfg)?;
    let (ae, model, _) = load_models(model_dir)?;
    let dt = cfg.system.data_dt();
    let mut summary = format!("{},final_error,final_bound,final_ratio\n", mu_columns(cfg));
    let mut all = vec![];
    for (i, mu) in cfg.eval.probe.resolve(&cfg.domain)?.into_iter().enumerate() {
        let tr = truth(cfg, &mu)?;
        let pred = rom_predict(&ae, &model, &tr.states.row(0).to_vec(), &mu, dt, tr.n_times() - 1, cfg.eval.scheme)?;
        if let Some(f) = pred.failure {
            return Err(Error::NonFinite(format!("latent rollout at mu={} failed at step {}: {}", mu_label(&mu), f.step, f.reason)));
        }
        let terms = bound_terms(&ae, &model, &tr, pred.latent.view(), dt)?;
        run.artifact(&format!("bound_{i:03}.csv"), terms.to_csv())?;
        let n = terms.times.len() - 1;
        let _ = writeln!(summary, "{},{:e},{:e},{:e}", mu_fields(&mu), terms.error[n], terms.total(n), terms.final_ratio());
        all.push((mu, terms));
    }
    run.artifact("summary.csv", summary)?;
    run.finish()?;
    Ok(all)
}

pub struct IndicatorStudy {
    pub mus: Vec<Vec<f64>>,
    pub indicators: Vec<f64>,
    pub errors: Vec<f64>,
    pub correlation: Correlation,
}

pub fn indicator_corr(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<IndicatorStudy> {
    let mut run = Run::start(out, "indicator-corr", cfg)?;
    let (ae, model, _) = load_models(model_dir)?;
    let mus = cfg.eval.held_out.resolve(&cfg.domain)?;
    let dt = cfg.system.data_dt();
    let mut indicators = vec![];
    let mut errors = vec![];
    let mut csv = format!("{},indicator,error,diverged\n", mu_columns(cfg));
    for mu in &mus {
        let ind = error_indicator(&ae, &model, mu, &cfg.system, cfg.eval.stride, cfg.eval.refine, cfg.eval.scheme)?;
        let err = trajectory_error(&ae, &model, &truth(cfg, mu)?, dt, cfg.eval.scheme)?;
        let _ = writeln!(csv, "{},{:e},{:e},{}", mu_fields(mu), ind.value, err, u8::from(ind.diverged));
        indicators.push(ind.value);
        errors.push(err);
    }
    run.artifact("indicator_vs_error.csv", csv)?;
    let correlation = correlate(&indicators, &errors)?;
    run.artifact(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "pearson": correlation.pearson,
            "spearman": correlation.spearman,
            "points": mus.len(),
        }))?,
    )?;
    run.finish()?;
    Ok(IndicatorStudy {
        mus,
        indicators,
        errors,
        correlation,
    })
}

pub fn timing(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<Vec<(Vec<f64>, TimingReport)>> {
    let mut run = Run::start(out, "timing", cfg)?;
    let (ae, model, _) = load_models(model_dir)?;
    let mut raw = format!("{},repeat,fom_seconds,rom_seconds\n", mu_columns(cfg));
    let mut summary = format!("{},fom_median,rom_median,speedup\n", mu_columns(cfg));
    let mut all = vec![];
    for mu in cfg.eval.probe.resolve(&cfg.domain)? {
        let rep = timing_report(&ae, &model, &cfg.system, &mu, cfg.eval.scheme, cfg.eval.timing_repeats)?;
        for (k, (f, r)) in rep.fom_runs.iter().zip(&rep.rom_runs).enumerate() {
            let _ = writeln!(raw, "{},{k},{f:e},{r:e}", mu_fields(&mu));
        }
        let _ = writeln!(summary, "{},{:e},{:e},{:.3}", mu_fields(&mu), rep.fom_seconds, rep.rom_seconds, rep.speedup);
        all.push((mu, rep));
    }
    run.artifact("timing_raw.csv", raw)?;
    run.artifact("summary.csv", summary)?;
    run.finish()?;
    Ok(all)
}
