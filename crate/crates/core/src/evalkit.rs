//! Post-hoc evaluation of trained models.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autoencoder::Autoencoder;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, RolloutFailure, Scheme};
use crate::pgfinn::PGFinn;
use crate::scalar::{norm2, Scalar};
use crate::systems::{System, Trajectory, TrajectoryDataset};

/// Decoded ROM trajectory and the latent rollout behind it.
#[derive(Clone, Debug)]
pub struct RomPrediction<T> {
    /// `(steps + 1) × d`, truncated on failure.
    pub latent: Array2<T>,
    /// `(steps + 1) × N_u`, truncated on failure.
    pub states: Array2<T>,
    pub failure: Option<RolloutFailure>,
}

/// Encode `u₀`, integrate the latent field, decode every step.
pub fn rom_predict<T: Scalar>(
    ae: &Autoencoder<T>,
    model: &PGFinn<T>,
    u0: &[T],
    mu: &[T],
    dt: T,
    steps: usize,
    scheme: Scheme,
) -> Result<RomPrediction<T>> {
    let z0 = ae.encode(u0)?;
    let roll = integrate(scheme, |z: &[T], m: &[T]| model.vector_field(z, m), &z0, mu, dt, steps);
    let states = ae.decode_rows(roll.states.view())?;
    Ok(RomPrediction {
        latent: roll.states,
        states,
        failure: roll.failure,
    })
}

/// `max_n ‖ũ_n − u_n‖ / ‖u_n‖`; rows with zero truth norm are skipped.
pub fn max_relative_error<T: Scalar>(rom: ArrayView2<T>, truth: ArrayView2<T>) -> Result<T> {
    if rom.dim() != truth.dim() {
        return Err(Error::Dimension {
            context: "prediction vs truth".into(),
            expected: truth.len(),
            got: rom.len(),
        });
    }
    let mut worst = T::zero();
    for (n, (a, b)) in rom.rows().into_iter().zip(truth.rows()).enumerate() {
        let den = b.dot(&b).sqrt();
        if den == T::zero() {
            warn!("truth row {n} has zero norm; skipped");
            continue;
        }
        let diff = &a - &b;
        worst = worst.max(diff.dot(&diff).sqrt() / den);
    }
    Ok(worst)
}

/// Max relative error of the ROM against one truth trajectory, `+∞` if the
/// rollout diverges.
pub fn trajectory_error<T: Scalar>(ae: &Autoencoder<T>, model: &PGFinn<T>, truth: &Trajectory<T>, dt: T, scheme: Scheme) -> Result<T> {
    let u0 = truth.states.row(0).to_vec();
    let pred = rom_predict(ae, model, &u0, &truth.mu, dt, truth.n_times() - 1, scheme)?;
    if pred.failure.is_some() {
        return Ok(T::infinity());
    }
    max_relative_error(pred.states.view(), truth.states.view())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMapEntry {
    pub mu: Vec<f64>,
    pub error: f64,
    pub training: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub entries: Vec<ErrorMapEntry>,
}

impl ErrorMap {
    pub fn mean(&self) -> f64 {
        self.entries.iter().map(|e| e.error).sum::<f64>() / self.entries.len().max(1) as f64
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.error).fold(0.0, f64::max)
    }

    /// `μ_1, …, μ_k, error, training` rows.
    pub fn to_csv(&self) -> String {
        let k = self.entries.first().map_or(0, |e| e.mu.len());
        let mut s = String::new();
        for i in 0..k {
            let _ = write!(s, "mu{i},");
        }
        s.push_str("error,training\n");
        for e in &self.entries {
            for m in &e.mu {
                let _ = write!(s, "{m},");
            }
            let _ = writeln!(s, "{:e},{}", e.error, u8::from(e.training));
        }
        s
    }
}

/// Errors over a list of parameter points. Truth comes from `truth` when it
/// holds the point, otherwise the full-order model is run.
pub fn error_map(
    ae: &Autoencoder<f64>,
    model: &PGFinn<f64>,
    system: &System,
    mus: &[Vec<f64>],
    truth: Option<&TrajectoryDataset<f64>>,
    training: &[Vec<f64>],
    scheme: Scheme,
) -> Result<ErrorMap> {
    let dt = system.data_dt();
    let entries = mus
        .par_iter()
        .map(|mu| {
            let stored = truth.and_then(|ds| ds.trajectories.iter().find(|t| &t.mu == mu));
            let traj = match stored {
                Some(t) => t.clone(),
                None => match system {
                    System::External(_) => return Err(Error::InvalidArgument(format!("no truth for mu={mu:?}"))),
                    _ => Trajectory::from_states(mu.clone(), 0.0, system.snapshots(mu)?, dt)?,
                },
            };
            Ok(ErrorMapEntry {
                mu: mu.clone(),
                error: trajectory_error(ae, model, &traj, dt, scheme)?,
                training: training.contains(mu),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorMap { entries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermoSeries<T> {
    pub times: Vec<T>,
    pub energy: Vec<T>,
    pub entropy: Vec<T>,
    /// `∇Sᵀ M ∇S` at every step.
    pub entropy_rate: Vec<T>,
    pub latent: Array2<T>,
    pub failure: Option<RolloutFailure>,
}

impl<T: Scalar> ThermoSeries<T> {
    /// `max_n |E_n − E_0|`.
    pub fn energy_drift(&self) -> T {
        let e0 = self.energy[0];
        self.energy.iter().fold(T::zero(), |m, &e| m.max((e - e0).abs()))
    }

    /// `S_0 + ∫ Ṡ dt` by the trapezoid rule.
    pub fn integrated_entropy(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.entropy.len());
        let mut s = self.entropy[0];
        out.push(s);
        for n in 1..self.entropy_rate.len() {
            let h = self.times[n] - self.times[n - 1];
            s += T::lit(0.5) * h * (self.entropy_rate[n] + self.entropy_rate[n - 1]);
            out.push(s);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,E,S,Sdot\n");
        for n in 0..self.energy.len() {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e}",
                self.times[n].as_f64(),
                self.energy[n].as_f64(),
                self.entropy[n].as_f64(),
                self.entropy_rate[n].as_f64()
            );
        }
        s
    }
}

/// Latent rollout with energy, entropy and entropy production per step.
pub fn thermo_rollout<T: Scalar>(model: &PGFinn<T>, z0: &[T], mu: &[T], dt: T, n: usize, scheme: Scheme) -> Result<ThermoSeries<T>> {
    let roll = integrate(scheme, |z: &[T], m: &[T]| model.vector_field(z, m), z0, mu, dt, n);
    let rows = roll.states.nrows();
    let mut s = ThermoSeries {
        times: (0..rows).map(|k| dt * T::from_usize_lossy(k)).collect(),
        energy: Vec::with_capacity(rows),
        entropy: Vec::with_capacity(rows),
        entropy_rate: Vec::with_capacity(rows),
        latent: Array2::zeros((0, 0)),
        failure: roll.failure.clone(),
    };
    for z in roll.states.rows() {
        let z = z.to_vec();
        s.energy.push(model.energy(&z, mu)?);
        s.entropy.push(model.entropy(&z, mu)?);
        s.entropy_rate.push(model.eval(&z, mu)?.entropy_rate);
    }
    s.latent = roll.states;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// Frequencies in Hz, bins `0..=N/2`.
    pub freqs: Vec<f64>,
    /// `bins × d` magnitudes.
    pub magnitudes: Array2<f64>,
    /// `Σ f |X| / Σ |X|` per dimension.
    pub centroid: Vec<f64>,
}

impl Spectrum {
    /// Mean of the per-dimension centroids.
    pub fn mean_centroid(&self) -> f64 {
        self.centroid.iter().sum::<f64>() / self.centroid.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq");
        for j in 0..self.magnitudes.ncols() {
            let _ = write!(s, ",z{j}");
        }
        s.push('\n');
        for (k, f) in self.freqs.iter().enumerate() {
            let _ = write!(s, "{f}");
            for v in self.magnitudes.row(k) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// One-sided DFT magnitudes of each column of `latent` (time × d).
pub fn latent_spectrum<T: Scalar>(latent: ArrayView2<T>, dt: f64) -> Result<Spectrum> {
    let (n, d) = latent.dim();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("spectrum needs at least 4 samples, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sample spacing must be positive, got {dt}")));
    }
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 / (n as f64 * dt)).collect();
    let mut magnitudes = Array2::zeros((bins, d));
    let mut centroid = Vec::with_capacity(d);
    for (j, col) in latent.axis_iter(Axis(1)).enumerate() {
        let mut buf: Vec<Complex<f64>> = col.iter().map(|v| Complex::new(v.as_f64(), 0.0)).collect();
        fft.process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..bins {
            let m = buf[k].norm();
            magnitudes[[k, j]] = m;
            num += freqs[k] * m;
            den += m;
        }
        centroid.push(if den > 0.0 { num / den } else { 0.0 });
    }
    Ok(Spectrum {
        freqs,
        magnitudes,
        centroid,
    })
}

/// Cumulative error-bound terms along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundTerms<T> {
    pub times: Vec<T>,
    /// `∫ ‖φ_e(u) − z‖`.
    pub eps_int: Vec<T>,
    /// Running max of `‖e_AE(t₀)‖ + ‖e_AE(s)‖` over `s ≤ t`.
    pub eps_rec: Vec<T>,
    /// `∫ ‖(I − J(u)) u̇‖`.
    pub eps_jac: Vec<T>,
    /// `∫ ‖J_e u̇ − ψ(z)‖ + ‖u̇ − J_d(z) ψ(z)‖`.
    pub eps_mod: Vec<T>,
    /// `‖u(t) − φ_d(z(t))‖`.
    pub error: Vec<T>,
}

impl<T: Scalar> BoundTerms<T> {
    pub fn total(&self, n: usize) -> T {
        self.eps_int[n] + self.eps_rec[n] + self.eps_jac[n] + self.eps_mod[n]
    }

    /// `‖e(t_n)‖ / Σε(t_n)` at the final time.
    pub fn final_ratio(&self) -> T {
        let n = self.times.len() - 1;
        self.error[n] / self.total(n)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,eps_int,eps_rec,eps_jac,eps_mod,error\n");
        for n in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e}",
                self.times[n].as_f64(),
                self.eps_int[n].as_f64(),
                self.eps_rec[n].as_f64(),
                self.eps_jac[n].as_f64(),
                self.eps_mod[n].as_f64(),
                self.error[n].as_f64()
            );
        }
        s
    }
}

fn diff_norm<T: Scalar>(a: &[T], b: &[T]) -> T {
    let d: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    norm2(&d)
}

fn cumulative_trapezoid<T: Scalar>(g: &[T], dt: T) -> Vec<T> {
    let mut out = Vec::with_capacity(g.len());
    let mut acc = T::zero();
    out.push(acc);
    for n in 1..g.len() {
        acc += T::lit(0.5) * dt * (g[n] + g[n - 1]);
        out.push(acc);
    }
    out
}

/// Evaluates the bound terms against a truth trajectory with derivatives and
/// a latent rollout on the same time grid.
pub fn bound_terms<T: Scalar>(ae: &Autoencoder<T>, model: &PGFinn<T>, truth: &Trajectory<T>, latent: ArrayView2<T>, dt: T) -> Result<BoundTerms<T>> {
    let n = truth.n_times();
    if latent.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "latent rollout has {} steps, truth has {n}",
            latent.nrows()
        )));
    }
    check_dim("latent width", ae.latent_dim(), latent.ncols())?;
    let mu = &truth.mu;
    let (mut g_int, mut e_ae, mut g_jac, mut g_mod, mut err) = (vec![], vec![], vec![], vec![], vec![]);
    for k in 0..n {
        let u = truth.states.row(k).to_vec();
        let udot = truth.derivs.row(k).to_vec();
        let z = latent.row(k).to_vec();
        let enc = ae.encode(&u)?;
        g_int.push(diff_norm(&enc, &z));
        e_ae.push(diff_norm(&u, &ae.decode(&enc)?));
        g_jac.push(diff_norm(&udot, &ae.decoder_jvp(&enc, &ae.encoder_jvp(&u, &udot)?)?));
        let psi = model.vector_field(&z, mu)?;
        g_mod.push(diff_norm(&ae.encoder_jvp(&u, &udot)?, &psi) + diff_norm(&udot, &ae.decoder_jvp(&z, &psi)?));
        err.push(diff_norm(&u, &ae.decode(&z)?));
    }
    let mut eps_rec = Vec::with_capacity(n);
    let mut run = T::zero();
    for &e in &e_ae {
        run = run.max(e_ae[0] + e);
        eps_rec.push(run);
    }
    Ok(BoundTerms {
        times: (0..n).map(|k| dt * T::from_usize_lossy(k)).collect(),
        eps_int: cumulative_trapezoid(&g_int, dt),
        eps_rec,
        eps_jac: cumulative_trapezoid(&g_jac, dt),
        eps_mod: cumulative_trapezoid(&g_mod, dt),
        error: err,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("correlation input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson and Spearman coefficients.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_dim("correlation series", x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::InvalidArgument("correlation needs at least 3 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(Correlation {
        pearson: pearson(x, y)?,
        spearman: pearson(&ranks(x), &ranks(y))?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub fom_runs: Vec<f64>,
    pub rom_runs: Vec<f64>,
    pub fom_seconds: f64,
    pub rom_seconds: f64,
    pub speedup: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-of-`repeats` wall times of the full-order solve and of the ROM
/// prediction (encode, latent rollout, decode), both on the calling thread.
pub fn timing_report(ae: &Autoencoder<f64>, model: &PGFinn<f64>, system: &System, mu: &[f64], scheme: Scheme, repeats: usize) -> Result<TimingReport> {
    let repeats = repeats.max(1);
    let u0 = system.initial_state(mu)?;
    let (dt, steps) = (system.data_dt(), system.data_steps());
    let mut fom_runs = Vec::with_capacity(repeats);
    let mut rom_runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(system.snapshots::<f64>(mu)?);
        fom_runs.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(rom_predict(ae, model, &u0, mu, dt, steps, scheme)?);
        rom_runs.push(t.elapsed().as_secs_f64());
    }
    let fom_seconds = median(&mut fom_runs.clone());
    let rom_seconds = median(&mut rom_runs.clone());
    Ok(TimingReport {
        fom_runs,
        rom_runs,
        fom_seconds,
        rom_seconds,
        speedup: fom_seconds / rom_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Activation;
    use crate::pgfinn::PGFinnConfig;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_error_examples() {
        let u = arr2(&[[3.0, 4.0]]);
        assert_eq!(max_relative_error(u.view(), u.view()).unwrap(), 0.0);
        let r = arr2(&[[3.0, 4.5]]);
        assert!((max_relative_error::<f64>(r.view(), u.view()).unwrap() - 0.1).abs() < 1e-15);
        let z = arr2(&[[0.0, 0.0], [3.0, 4.0]]);
        let zr = arr2(&[[1.0, 0.0], [3.0, 4.5]]);
        assert!((max_relative_error::<f64>(zr.view(), z.view()).unwrap() - 0.1).abs() < 1e-15);
        assert!(max_relative_error(u.view(), z.view()).is_err());
    }

    #[test]
    fn relative_error_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
        let mut want: f64 = 0.0;
        for i in 0..7 {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..5 {
                num += (a[[i, j]] - b[[i, j]]) * (a[[i, j]] - b[[i, j]]);
                den += b[[i, j]] * b[[i, j]];
            }
            want = want.max((num / den as f64).sqrt());
        }
        assert!((max_relative_error(a.view(), b.view()).unwrap() - want).abs() < 1e-14);
    }

    fn naive_dft(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn cosine_peaks_at_its_frequency() {
        let dt = 0.01;
        let x = Array2::from_shape_fn((100, 1), |(t, _)| (2.0 * std::f64::consts::PI * 2.0 * t as f64 * dt).cos());
        let s = latent_spectrum(x.view(), dt).unwrap();
        let col = s.magnitudes.column(0);
        let peak = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        assert!((s.freqs[peak] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_signal_lives_in_zero_bin() {
        let x = Array2::from_elem((16, 2), 3.0);
        let s = latent_spectrum(x.view(), 0.1).unwrap();
        assert!((s.magnitudes[[0, 0]] - 48.0).abs() < 1e-12);
        assert!(s.magnitudes.slice(ndarray::s![1.., ..]).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(s.centroid, vec![0.0, 0.0]);
        assert!(latent_spectrum(Array2::<f64>::zeros((3, 1)).view(), 0.1).is_err());
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [17, 64, 201] {
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let s = latent_spectrum(x.view(), 0.05).unwrap();
            for j in 0..3 {
                let want = naive_dft(&x.column(j).to_vec());
                for k in 0..want.len() {
                    assert!((s.magnitudes[[k, j]] - want[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = correlate(&x, &y).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlate(&x, &y).unwrap().pearson + 1.0).abs() < 1e-12);
        assert!(correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + rng.random_range(-1.0..1.0)).collect();
        let n = 25.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let want = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((correlate(&x, &y).unwrap().pearson - want).abs() < 1e-12);
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    fn tiny_model(d: usize, seed: u64) -> PGFinn<f64> {
        let cfg = PGFinnConfig {
            latent_dim: d,
            param_dim: 1,
            k: Some(2),
            layers: 2,
            width: 6,
            activation: Activation::Tanh,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = PGFinn::new(&cfg, &mut rng).unwrap();
        let p: Vec<f64> = m.flat_params().iter().map(|_| rng.random_range(-0.6..0.6)).collect();
        m.set_flat_params(&p).unwrap();
        m
    }

    #[test]
    fn entropy_rate_is_non_negative_and_consistent() {
        let m = tiny_model(3, 4);
        let s = thermo_rollout(&m, &[0.2, -0.1, 0.4], &[0.5], 1e-2, 300, Scheme::Rk4).unwrap();
        assert!(s.failure.is_none());
        assert!(s.entropy_rate.iter().all(|&v| v >= -1e-12));
        let integ = s.integrated_entropy();
        let dev = integ.iter().zip(&s.entropy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let s2 = thermo_rollout(&m, &[0.2, -0.1, 0.4], &[0.5], 5e-3, 600, Scheme::Rk4).unwrap();
        let integ2 = s2.integrated_entropy();
        let dev2 = integ2.iter().zip(&s2.entropy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev2 < dev || dev < 1e-10, "{dev} {dev2}");
    }

    #[test]
    fn energy_drift_converges_under_rk4() {
        let mut m = tiny_model(4, 5);
        // Amplify the skew bases so the field is O(1) and the drift sits well
        // above round-off.
        m.basis_l.iter_mut().chain(m.basis_m.iter_mut()).for_each(|w| *w *= 4.0);
        let z0 = [0.3, -0.2, 0.1, 0.5];
        let d1 = thermo_rollout(&m, &z0, &[0.1], 0.1, 40, Scheme::Rk4).unwrap().energy_drift();
        let d2 = thermo_rollout(&m, &z0, &[0.1], 0.05, 80, Scheme::Rk4).unwrap().energy_drift();
        assert!(d1 > 1e-12, "drift {d1} too small to measure");
        assert!(d1 / d2 >= 8.0, "{d1} {d2}");
    }

    #[test]
    fn exact_configuration_has_zero_bound_terms() {
        // Identity encoder and latent rollout equal to the truth.
        let ae = Autoencoder::<f64>::identity(2);
        let m = tiny_model(2, 6);
        let states = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 * 0.1 + j as f64).sin());
        let traj = Trajectory::from_states(vec![0.0], 0.0, states.clone(), 0.1).unwrap();
        let b = bound_terms(&ae, &m, &traj, states.view(), 0.1).unwrap();
        for n in 0..6 {
            assert!(b.eps_int[n] <= 1e-8 && b.eps_rec[n] <= 1e-8 && b.eps_jac[n] <= 1e-8 && b.error[n] <= 1e-8);
        }
    }

    #[test]
    fn one_interval_integration_term() {
        let ae = Autoencoder::<f64>::identity(2);
        let m = tiny_model(2, 7);
        let truth = arr2(&[[1.0, 2.0], [1.5, 2.5]]);
        let latent = arr2(&[[1.0, 2.0], [1.2, 2.9]]);
        let traj = Trajectory::from_states(vec![0.0], 0.0, truth, 0.1).unwrap();
        let b = bound_terms(&ae, &m, &traj, latent.view(), 0.1).unwrap();
        let want = 0.05 * (0.3f64 * 0.3 + 0.4 * 0.4).sqrt();
        assert!((b.eps_int[1] - want).abs() < 1e-15);
        assert!(bound_terms(&ae, &m, &traj, latent.slice(ndarray::s![..1, ..]), 0.1).is_err());
    }

    #[test]
    fn bound_terms_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ae = Autoencoder::from_nets(
            crate::diffcore::DenseNet::random(vec![4, 5, 2], Activation::Tanh, 0.7, &mut rng).unwrap(),
            crate::diffcore::DenseNet::random(vec![2, 5, 4], Activation::Tanh, 0.7, &mut rng).unwrap(),
        )
        .unwrap();
        let m = tiny_model(2, 9);
        let states = Array2::from_shape_fn((20, 4), |(i, j)| (0.1 * i as f64 + j as f64).cos());
        let traj = Trajectory::from_states(vec![0.2], 0.0, states.clone(), 0.05).unwrap();
        let pred = rom_predict(&ae, &m, &states.row(0).to_vec(), &[0.2], 0.05, 19, Scheme::ForwardEuler).unwrap();
        let b = bound_terms(&ae, &m, &traj, pred.latent.view(), 0.05).unwrap();
        for v in [&b.eps_int, &b.eps_rec, &b.eps_jac, &b.eps_mod] {
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!(v.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
