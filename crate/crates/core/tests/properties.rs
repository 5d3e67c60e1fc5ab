use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlasdi::autoencoder::Autoencoder;
use tlasdi::diffcore::{Activation, Checkpoint, DenseNet, LrSchedule};
use tlasdi::evalkit::correlate;
use tlasdi::integrate::{integrate, Scheme};
use tlasdi::losses::{evaluate_terms, Batch, JacMode, LossWeights};
use tlasdi::pgfinn::{PGFinn, PGFinnConfig};
use tlasdi::systems::{backward_euler_solve, burgers_initial, GasSetup, System, ThermoSetup};
use tlasdi::training::make_batches;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn random_model(seed: u64, d: usize, param_dim: usize) -> PGFinn<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PGFinnConfig {
        latent_dim: d,
        param_dim,
        layers: 3,
        width: 12,
        ..Default::default()
    };
    let mut m = PGFinn::new(&cfg, &mut rng).unwrap();
    let theta = random_vec(&mut rng, m.n_params(), 1.0);
    m.set_flat_params(&theta).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vjp_is_the_transpose_of_jvp(seed in any::<u64>(), n_in in 1usize..6, n_hidden in 1usize..8, n_out in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for act in [Activation::Tanh, Activation::Relu, Activation::Linear] {
            let net = DenseNet::<f64>::random(vec![n_in, n_hidden, n_out], act, 1.0, &mut rng).unwrap();
            let x = random_vec(&mut rng, n_in, 1.0);
            let v = random_vec(&mut rng, n_in, 1.0);
            let w = random_vec(&mut rng, n_out, 1.0);
            let lhs = dot(&w, &net.jvp(&x, &v).unwrap());
            let rhs = dot(&net.vjp(&x, &w).unwrap(), &v);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{act:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn input_gradient_matches_central_differences(seed in any::<u64>(), n_in in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::<f64>::random(vec![n_in, 5, 1], Activation::Tanh, 1.0, &mut rng).unwrap();
        let x = random_vec(&mut rng, n_in, 1.0);
        let g = net.grad_input(&x).unwrap();
        let h = 1e-6;
        let scale = g.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
        for i in 0..n_in {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (net.forward(&xp).unwrap()[0] - net.forward(&xm).unwrap()[0]) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * scale, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), width in 1usize..10, step in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::<f64>::random(vec![3, width, 2], Activation::Tanh, 2.0, &mut rng).unwrap();
        let ck = Checkpoint::from_net("net", &net, seed, step, 7);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.to_net::<f64>().unwrap(), net);
    }

    #[test]
    fn pgfinn_structure_holds_for_any_parameters(seed in any::<u64>(), d in 2usize..7) {
        let model = random_model(seed, d, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let z = random_vec(&mut rng, d, 2.0);
        let mu = random_vec(&mut rng, 2, 1.0);
        let r = model.check_structure(&z, &mu).unwrap();
        prop_assert!(r.holds(1e-10), "{r:?}");
        // dE/dt = ∇E·ż vanishes and dS/dt = ∇S·ż is the production rate.
        let f = model.eval(&z, &mu).unwrap();
        let scale = 1.0 + r.scale_l + r.scale_m + f.entropy_rate.abs();
        prop_assert!(dot(&f.grad_e, &f.zdot).abs() <= 1e-10 * scale);
        prop_assert!(f.entropy_rate >= 0.0);
        prop_assert!((dot(&f.grad_s, &f.zdot) - f.entropy_rate).abs() <= 1e-10 * scale);
    }

    #[test]
    fn reference_fields_conserve_energy_and_produce_entropy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gas = System::GasContainers(GasSetup::default());
        let u = vec![rng.random_range(0.2..1.8), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
        let thermo = System::ThermoMass(ThermoSetup::default());
        let v = random_vec(&mut rng, 6, 3.0);
        for (sys, x) in [(&gas, u), (&thermo, v)] {
            let mu = sys.base_mu();
            let f = sys.rhs(&x, &mu).unwrap();
            let ge = sys.energy_grad(&x, &mu).unwrap();
            let gs = sys.entropy_grad(&x, &mu).unwrap();
            let scale = ge.iter().zip(&f).map(|(a, b)| (a * b).abs()).sum::<f64>();
            prop_assert!(dot(&ge, &f).abs() <= 1e-12 * (1.0 + scale), "{}", sys.tag());
            prop_assert!(dot(&gs, &f) >= -1e-12 * (1.0 + scale), "{}", sys.tag());
        }
    }

    #[test]
    fn burgers_step_stays_within_initial_bounds(a in 0.7..0.9f64, w in 0.9..1.1f64, steps in 1usize..20) {
        let nx = 200;
        let dx = 6.0 / nx as f64;
        let x: Vec<f64> = (0..nx).map(|i| -3.0 + dx * i as f64).collect();
        let mut u = burgers_initial(a, w, &x).unwrap();
        let top = u.iter().cloned().fold(0.0, f64::max);
        for _ in 0..steps {
            u = backward_euler_solve(&u, 5e-3, dx).unwrap();
            prop_assert!(u.iter().all(|&v| v >= -1e-8 && v <= top + 1e-8));
        }
    }

    #[test]
    fn loss_terms_are_nonnegative_and_order_free(seed in any::<u64>(), b in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = DenseNet::random(vec![4, 5, 2], Activation::Tanh, 0.6, &mut rng).unwrap();
        let dec = DenseNet::random(vec![2, 5, 4], Activation::Tanh, 0.6, &mut rng).unwrap();
        let ae = Autoencoder::from_nets(enc, dec).unwrap();
        let model = random_model(seed, 2, 1);
        let mut m = |r: usize| Array2::from_shape_fn((r, b), |_| rng.random_range(-1.0..1.0));
        let batch = Batch { u: m(4), u_next: Some(m(4)), udot: Some(m(4)), mu: m(1), dt: 0.1 };
        let mut order: Vec<usize> = (0..b).collect();
        order.reverse();
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(1), &order);
        let flipped = Batch {
            u: pick(&batch.u),
            u_next: batch.u_next.as_ref().map(pick),
            udot: batch.udot.as_ref().map(pick),
            mu: pick(&batch.mu),
            dt: 0.1,
        };
        for jac_mode in [JacMode::WithDerivatives, JacMode::Frobenius] {
            let w = LossWeights { rec: 0.5, jac: 0.5, model: 0.5, jac_mode, scheme: Scheme::Rk4 };
            let t = evaluate_terms(&batch, &ae, &model, &w).unwrap();
            let f = evaluate_terms(&flipped, &ae, &model, &w).unwrap();
            for (x, y) in [(t.int, f.int), (t.rec, f.rec), (t.jac, f.jac), (t.model, f.model)] {
                prop_assert!(x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
            }
        }
    }

    #[test]
    fn an_epoch_visits_every_pair_once(n in 1usize..500, bs in 1usize..64, seed in any::<u64>(), epoch in 0usize..100) {
        let batches = make_batches(n, bs, seed, epoch).unwrap();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(batches, make_batches(n, bs, seed, epoch).unwrap());
    }

    #[test]
    fn integrators_are_pure(seed in any::<u64>(), n in 1usize..40) {
        let model = random_model(seed, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = random_vec(&mut rng, 3, 1.0);
        for scheme in [Scheme::ForwardEuler, Scheme::Rk4] {
            let run = || integrate(scheme, |z: &[f64], m: &[f64]| model.vector_field(z, m), &z0, &[0.3], 0.01, n);
            let (a, b) = (run(), run());
            prop_assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn correlation_ignores_increasing_affine_maps(seed in any::<u64>(), s in 0.1..10.0f64, c in -5.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(&mut rng, 12, 1.0);
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let a = correlate(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| s * v + c).collect();
        let b = correlate(&xs, &y).unwrap();
        prop_assert!((a.pearson - b.pearson).abs() <= 1e-12);
        prop_assert!((a.spearman - b.spearman).abs() <= 1e-12);
        prop_assert!(a.pearson.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn step_decay_never_increases(base in 1e-6..1.0f64, factor in 0.01..1.0f64, period in 1usize..1000, e in 0usize..10_000) {
        let s = LrSchedule { base, factor, period };
        prop_assert!(s.rate(e + 1) <= s.rate(e));
        prop_assert_eq!(s.rate(e % period), base);
    }
}
