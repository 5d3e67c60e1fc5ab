//! Acceptance criteria, one PASS/FAIL line each. Failing criteria are
//! reported rather than aborting the run; a panic or setup error exits
//! non-zero.
//!
//! `TLASDI_FULL=1` additionally runs the full-length Burgers schedule.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlasdi::autoencoder::Autoencoder;
use tlasdi::diffcore::{Activation, DenseNet};
use tlasdi::evalkit::{error_map, thermo_rollout};
use tlasdi::integrate::Scheme;
use tlasdi::losses::{
    joint_params, loss_int, loss_jac, loss_model, loss_rec, set_joint_params, total_loss, Batch, JacMode, LossWeights,
};
use tlasdi::pgfinn::{PGFinn, PGFinnConfig};
use tlasdi::systems::gas::{gas_energy_entropy, gas_temperatures};
use tlasdi::systems::{GasSetup, OdeSampling, System, ThermoSetup};
use tlasdi_cli::commands::{self, Trained};
use tlasdi_cli::config::{PointSet, RunConfig};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Report {
    passed: usize,
    total: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, secs: f64, detail: String) {
        self.total += 1;
        self.passed += usize::from(pass);
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:<3} {tag}  {name} [{secs:.1}s]: {detail}");
    }
}

fn config(name: &str, overrides: &[&str]) -> Res<RunConfig> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Ok(RunConfig::load(&path, &o)?)
}

fn structure(report: &mut Report) -> Res<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_skew, mut worst_sym, mut worst_l, mut worst_m, mut worst_q) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let mut draws = 0;
    for d in [3usize, 5, 10] {
        let cfg = PGFinnConfig {
            latent_dim: d,
            param_dim: 2,
            ..Default::default()
        };
        let mut model = PGFinn::<f64>::new(&cfg, &mut rng)?;
        let n = if d == 10 { 334 } else { 333 };
        for _ in 0..n {
            let theta: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            model.set_flat_params(&theta)?;
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = model.check_structure(&z, &mu)?;
            worst_skew = worst_skew.max(r.skew_l);
            worst_sym = worst_sym.max(r.sym_m);
            worst_l = worst_l.max(r.degen_l / r.scale_l.max(f64::MIN_POSITIVE));
            worst_m = worst_m.max(r.degen_m / r.scale_m.max(f64::MIN_POSITIVE));
            let m = model.operator_m(&z, &mu)?;
            let mut q = r.min_quadratic;
            for _ in 0..8 {
                let v = ndarray::Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0)));
                q = q.min(v.dot(&m.dot(&v)) / v.dot(&v));
            }
            worst_q = worst_q.min(q);
            draws += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_skew <= 1e-12 && worst_sym <= 1e-12 && worst_l <= 1e-10 && worst_m <= 1e-10 && worst_q >= -1e-12 && secs < 10.0;
    report.line(
        "1",
        "structural guarantees",
        pass,
        secs,
        format!(
            "{draws} draws; |L+L^T| {worst_skew:.1e}, |M-M^T| {worst_sym:.1e}, |L dS|/scale {worst_l:.1e}, |M dE|/scale {worst_m:.1e}, min v^T M v/|v|^2 {worst_q:.1e}"
        ),
    );
    Ok(())
}

fn toy(rng: &mut ChaCha8Rng) -> Res<(Autoencoder<f64>, PGFinn<f64>, Batch<f64>)> {
    let (nu, d, b) = (6, 2, 4);
    let enc = DenseNet::random(vec![nu, 5, d], Activation::Tanh, 0.6, rng)?;
    let dec = DenseNet::random(vec![d, 5, nu], Activation::Tanh, 0.6, rng)?;
    let ae = Autoencoder::from_nets(enc, dec)?;
    let cfg = PGFinnConfig {
        latent_dim: d,
        param_dim: 1,
        k: Some(2),
        layers: 3,
        width: 6,
        ..Default::default()
    };
    let mut model = PGFinn::new(&cfg, rng)?;
    let p: Vec<f64> = model.flat_params().iter().map(|_| rng.random_range(-0.7..0.7)).collect();
    model.set_flat_params(&p)?;
    let mut m = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let batch = Batch {
        u: m(nu, b),
        u_next: Some(m(nu, b)),
        udot: Some(m(nu, b)),
        mu: m(1, b),
        dt: 0.1,
    };
    Ok((ae, model, batch))
}

/// Reverse-mode gradient of one term: the total is linear in the weights, so
/// the term's gradient is the difference of two tape gradients.
fn tape_term_grad(batch: &Batch<f64>, ae: &Autoencoder<f64>, model: &PGFinn<f64>, base: LossWeights, term: &str) -> Res<Vec<f64>> {
    let zero = LossWeights {
        rec: 0.0,
        jac: 0.0,
        model: 0.0,
        ..base
    };
    let (_, g0) = total_loss(batch, ae, model, &zero)?;
    if term == "int" {
        return Ok(g0);
    }
    let one = match term {
        "rec" => LossWeights { rec: 1.0, ..zero },
        "jac" => LossWeights { jac: 1.0, ..zero },
        _ => LossWeights { model: 1.0, ..zero },
    };
    let (_, g1) = total_loss(batch, ae, model, &one)?;
    Ok(g1.iter().zip(&g0).map(|(a, b)| a - b).collect())
}

/// Term value through the direct (non-tape) evaluation.
fn direct_term(batch: &Batch<f64>, ae: &Autoencoder<f64>, model: &PGFinn<f64>, w: &LossWeights, term: &str) -> Res<f64> {
    Ok(match term {
        "int" => loss_int(batch, ae, model, w.scheme)?,
        "rec" => loss_rec(batch, ae)?,
        "jac" => loss_jac(batch, ae, w.jac_mode)?,
        _ => loss_model(batch, ae, model)?,
    })
}

fn gradients(report: &mut Report) -> Res<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut ae, mut model, batch) = toy(&mut rng)?;
    let p0 = joint_params(&ae, &model);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let cases = [
        ("int", Scheme::ForwardEuler, JacMode::WithDerivatives),
        ("int", Scheme::Rk4, JacMode::WithDerivatives),
        ("rec", Scheme::ForwardEuler, JacMode::WithDerivatives),
        ("jac", Scheme::ForwardEuler, JacMode::WithDerivatives),
        ("jac", Scheme::ForwardEuler, JacMode::Frobenius),
        ("model", Scheme::ForwardEuler, JacMode::WithDerivatives),
    ];
    for (term, scheme, jac_mode) in cases {
        let w = LossWeights {
            scheme,
            jac_mode,
            ..Default::default()
        };
        set_joint_params(&mut ae, &mut model, &p0)?;
        let g = tape_term_grad(&batch, &ae, &model, w, term)?;
        let h = 1e-6;
        let mut fd = vec![0.0; p0.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut p = p0.clone();
            p[i] += h;
            set_joint_params(&mut ae, &mut model, &p)?;
            let fp = direct_term(&batch, &ae, &model, &w, term)?;
            p[i] -= 2.0 * h;
            set_joint_params(&mut ae, &mut model, &p)?;
            let fm = direct_term(&batch, &ae, &model, &w, term)?;
            *slot = (fp - fm) / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        if err >= worst {
            worst = err;
            worst_at = format!("{term} ({scheme:?}, {jac_mode:?})");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "2",
        "loss gradients vs central differences",
        worst <= 1e-4 && secs < 60.0,
        secs,
        format!("{} parameters, {} term variants; worst relative error {worst:.2e} in {worst_at}", p0.len(), cases.len()),
    );
    Ok(())
}

fn physics(report: &mut Report) -> Res<()> {
    let start = Instant::now();
    let fine = OdeSampling {
        dt: 1e-3,
        horizon: 8.0,
        sub_t: 1,
    };
    let gas = System::GasContainers(GasSetup {
        sampling: fine,
        ..Default::default()
    });
    let mu = [10.0];
    let u = gas.snapshots::<f64>(&mu)?;
    let params = gas.gas_params(&mu)?;
    let mut e0 = 0.0;
    let mut drift = 0.0f64;
    let mut s_prev = f64::NEG_INFINITY;
    let mut monotone = true;
    for (k, row) in u.rows().into_iter().enumerate() {
        let (e, s) = gas_energy_entropy(&row.to_vec(), &params)?;
        if k == 0 {
            e0 = e;
        }
        drift = drift.max((e - e0).abs() / e0.abs());
        monotone &= s >= s_prev;
        s_prev = s;
    }
    let gap = |row: ndarray::ArrayView1<f64>| -> Res<f64> {
        let (t1, t2) = gas_temperatures(&row.to_vec())?;
        Ok((t1 - t2).abs())
    };
    let reduction = 1.0 - gap(u.row(u.nrows() - 1))? / gap(u.row(0))?;

    let thermo = System::ThermoMass(ThermoSetup::default());
    let v = thermo.snapshots::<f64>(&thermo.base_mu())?;
    let p0 = v[[0, 2]] + v[[0, 3]];
    let p_err = v.rows().into_iter().fold(0.0f64, |m, r| m.max((r[2] + r[3] - p0).abs()));
    let p_scale = v.rows().into_iter().fold(0.0f64, |m, r| m.max(r[2].abs() + r[3].abs()));
    let secs = start.elapsed().as_secs_f64();
    let pass = drift <= 1e-8 && monotone && reduction >= 0.9 && p_err <= 1e-12 * p_scale && secs < 5.0;
    report.line(
        "3",
        "reference physics",
        pass,
        secs,
        format!(
            "gas: energy drift {drift:.1e}, entropy monotone {monotone}, |T1-T2| reduced {:.1}%; thermo-mass: |p1+p2 drift| {p_err:.1e} (scale {p_scale:.1e})",
            100.0 * reduction
        ),
    );
    Ok(())
}

struct GasRuns {
    uniform: Trained,
}

fn gas(report: &mut Report, out: &Path) -> Res<GasRuns> {
    let start = Instant::now();
    let cfg = config("gas.toml", &[])?;
    let test = cfg.eval.test.resolve(&cfg.domain)?;
    let uniform = commands::train(&cfg, &out.join("uniform"), false)?;
    let u_map = error_map(&uniform.ae, &uniform.model, &cfg.system, &test, None, &uniform.points, cfg.eval.scheme)?;
    let active = commands::active(&cfg, &out.join("active"))?;
    let a = &active.trained;
    let a_map = error_map(&a.ae, &a.model, &cfg.system, &test, None, &a.points, cfg.eval.scheme)?;
    let secs = start.elapsed().as_secs_f64();
    let added: Vec<String> = a.points[2..].iter().map(|m| format!("{:.2}", m[0])).collect();
    report.line(
        "4",
        "gas containers: uniform and active training",
        u_map.max() <= 0.08 && a_map.max() <= u_map.max() && secs <= 1200.0,
        secs,
        format!(
            "uniform ({} points) max {:.2}%; active ({} points, added alpha = {}) max {:.2}%; {} test points",
            uniform.points.len(),
            100.0 * u_map.max(),
            a.points.len(),
            added.join(", "),
            100.0 * a_map.max(),
            test.len()
        ),
    );
    Ok(GasRuns { uniform })
}

fn burgers_config(epochs: usize) -> Res<RunConfig> {
    let phases = format!("schedule.phases=[{{epochs={epochs},batch_size=50}}]");
    let total = format!("active.options.total_epochs={epochs}");
    let n_up = format!("active.options.n_up={}", epochs / 5);
    config("burgers.toml", &[&phases, &total, &n_up])
}

fn burgers(report: &mut Report, out: &Path) -> Res<(RunConfig, Trained)> {
    let cfg = burgers_config(3000)?;
    let start = Instant::now();
    let uniform = commands::train(&cfg, &out.join("uniform"), false)?;
    let train_secs = start.elapsed().as_secs_f64();
    report.line(
        "5a",
        "Burgers, 3000 epochs, uniform 3x3 grid",
        uniform.errors.max() <= 0.10,
        train_secs,
        format!(
            "max relative error over training grid {:.2}% (mean {:.2}%)",
            100.0 * uniform.errors.max(),
            100.0 * uniform.errors.mean()
        ),
    );

    let start = Instant::now();
    let test = cfg.eval.test.resolve(&cfg.domain)?;
    let u_map = error_map(&uniform.ae, &uniform.model, &cfg.system, &test, None, &uniform.points, cfg.eval.scheme)?;
    let active = commands::active(&cfg, &out.join("active"))?;
    let a = &active.trained;
    let a_map = error_map(&a.ae, &a.model, &cfg.system, &test, None, &a.points, cfg.eval.scheme)?;
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "5b",
        "Burgers, adaptive vs uniform at equal epochs",
        a_map.max() <= u_map.max(),
        secs,
        format!(
            "max over {} test points: adaptive ({} points) {:.2}%, uniform ({} points) {:.2}%",
            test.len(),
            a.points.len(),
            100.0 * a_map.max(),
            uniform.points.len(),
            100.0 * u_map.max()
        ),
    );

    if std::env::var("TLASDI_FULL").is_ok_and(|v| v == "1") {
        let full = config("burgers.toml", &[])?;
        let start = Instant::now();
        let t = commands::train(&full, &out.join("full"), false)?;
        let secs = start.elapsed().as_secs_f64();
        report.line(
            "5c",
            "Burgers, full schedule",
            t.errors.max() <= 0.05 && secs <= 7200.0,
            secs,
            format!("{} epochs: max relative error {:.2}%", full.schedule.total_epochs(), 100.0 * t.errors.max()),
        );
    } else {
        println!("criterion 5c SKIP  Burgers, full schedule: set TLASDI_FULL=1 to run");
    }
    Ok((cfg, uniform))
}

fn indicator(report: &mut Report, cfg: &RunConfig, model: &Trained, out: &Path) -> Res<()> {
    let start = Instant::now();
    let study = commands::indicator_corr(cfg, out, &model.dir.join("final"))?;
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "6",
        "indicator vs true error",
        study.correlation.pearson >= 0.5 && secs < 120.0,
        secs,
        format!(
            "{} held-out points: Pearson {:.3}, Spearman {:.3}",
            study.mus.len(),
            study.correlation.pearson,
            study.correlation.spearman
        ),
    );
    Ok(())
}

fn nondecreasing(v: &[f64]) -> bool {
    v.iter().all(|x| *x >= 0.0) && v.windows(2).all(|w| w[1] >= w[0])
}

fn bound(report: &mut Report, cfg: &RunConfig, model: &Trained, out: &Path) -> Res<()> {
    let start = Instant::now();
    let mut c = cfg.clone();
    c.eval.probe = PointSet::Points {
        values: model.points.clone(),
    };
    let all = commands::bound(&c, out, &model.dir.join("final"))?;
    let mut ok = true;
    let mut ratios = vec![];
    for (_, t) in &all {
        ok &= nondecreasing(&t.eps_int) && nondecreasing(&t.eps_rec) && nondecreasing(&t.eps_jac) && nondecreasing(&t.eps_mod);
        ratios.push(t.final_ratio());
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    let spread = ratios[ratios.len() - 1] / median;
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "7",
        "error-bound terms",
        ok && spread < 50.0 && secs < 120.0,
        secs,
        format!(
            "{} training trajectories; terms non-negative and non-decreasing: {ok}; |e|/sum(eps) at T in [{:.3}, {:.3}], max/median {spread:.2}",
            all.len(),
            ratios[0],
            ratios[ratios.len() - 1]
        ),
    );
    Ok(())
}

/// RK4 energy drift at `dt` over a fixed horizon, or why the rollout stopped.
fn drift(model: &PGFinn<f64>, z0: &[f64], mu: &[f64], horizon: f64, dt: f64) -> Res<Result<f64, String>> {
    let n = (horizon / dt).round() as usize;
    let s = thermo_rollout(model, z0, mu, dt, n, Scheme::Rk4)?;
    Ok(match s.failure {
        Some(f) => Err(format!("dt {dt:.2e}, mu {mu:?}: step {}: {}", f.step, f.reason)),
        None => Ok(s.energy_drift()),
    })
}

fn thermo(report: &mut Report, burgers: (&RunConfig, &Trained), gas: (&RunConfig, &Trained)) -> Res<()> {
    let start = Instant::now();
    let mut min_rate = f64::INFINITY;
    let mut steps = 0;
    let mut ratios = vec![];
    let mut failures = vec![];
    for (cfg, t) in [burgers, gas] {
        let horizon = cfg.system.data_dt() * cfg.system.data_steps() as f64;
        for mu in &t.points {
            let z0 = t.ae.encode(&cfg.system.initial_state(mu)?)?;
            for scheme in [Scheme::ForwardEuler, Scheme::Rk4] {
                let s = thermo_rollout(&t.model, &z0, mu, cfg.system.data_dt(), cfg.system.data_steps(), scheme)?;
                steps += s.entropy_rate.len();
                min_rate = s.entropy_rate.iter().fold(min_rate, |m, &r| m.min(r));
            }
            // The stored snapshot step, which the model was trained on, against half of it.
            let dt = cfg.system.data_dt();
            match (drift(&t.model, &z0, mu, horizon, dt)?, drift(&t.model, &z0, mu, horizon, dt / 2.0)?) {
                (Ok(coarse), Ok(fine)) => ratios.push(coarse / fine),
                (Err(e), _) | (_, Err(e)) => failures.push(e),
            }
        }
    }
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "8",
        "thermodynamic rollouts",
        min_rate >= -1e-12 && failures.is_empty() && worst >= 8.0 && secs < 60.0,
        secs,
        format!(
            "min entropy production {min_rate:.2e} over {steps} steps; RK4 energy drift shrinks by at least {worst:.1}x when dt halves from the data step ({} rollouts){}",
            ratios.len(),
            failures.first().map(|e| format!("; {} rollouts failed, first: {e}", failures.len())).unwrap_or_default()
        ),
    );
    Ok(())
}

fn speedup(report: &mut Report, cfg: &RunConfig, model: &Trained, out: &Path) -> Res<()> {
    let start = Instant::now();
    let all = commands::timing(cfg, out, &model.dir.join("final"))?;
    let (_, r) = &all[0];
    let recomputed = r.fom_seconds / r.rom_seconds;
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "9",
        "ROM vs backward-Euler FOM speed-up",
        r.speedup >= 10.0 && (recomputed - r.speedup).abs() <= 1e-12 * r.speedup && secs < 60.0,
        secs,
        format!(
            "median of {}: FOM {:.2} ms, ROM {:.2} ms, speed-up {:.1}x (N_u = {}, {} steps)",
            r.fom_runs.len(),
            1e3 * r.fom_seconds,
            1e3 * r.rom_seconds,
            r.speedup,
            cfg.system.state_dim(),
            cfg.system.data_steps() + 1
        ),
    );
    Ok(())
}

fn run() -> Res<Report> {
    let tmp = tempfile::tempdir()?;
    let out = tmp.path();
    let mut report = Report { passed: 0, total: 0 };
    structure(&mut report)?;
    gradients(&mut report)?;
    physics(&mut report)?;
    let gas_runs = gas(&mut report, &out.join("gas"))?;
    let gas_cfg = config("gas.toml", &[])?;
    let (bcfg, burgers_model) = burgers(&mut report, &out.join("burgers"))?;
    indicator(&mut report, &bcfg, &burgers_model, out)?;
    bound(&mut report, &bcfg, &burgers_model, out)?;
    thermo(&mut report, (&bcfg, &burgers_model), (&gas_cfg, &gas_runs.uniform))?;
    speedup(&mut report, &bcfg, &burgers_model, out)?;
    Ok(report)
}

fn main() {
    // The library logs training progress at info level; keep the report readable.
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    // `cargo test -- --list` and filters apply to libtest targets only.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    match run() {
        Ok(r) => println!("acceptance: {}/{} criteria passed", r.passed, r.total),
        Err(e) => {
            eprintln!("acceptance run aborted: {e}");
            std::process::exit(1);
        }
    }
}
