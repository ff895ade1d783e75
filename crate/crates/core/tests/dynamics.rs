use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochwave_core::criteria::check_conditions;
use stochwave_core::diagnostics::energy_residual;
use stochwave_core::grid::{build_grid, Grid, GridSpec};
use stochwave_core::integrator::{run_path, PathIntegrator, PathState, Scheme, TimeSpec};
use stochwave_core::model::{InitialData, ModelSpec, NoiseAmplitude, Nonlinearity};
use stochwave_core::noise::{Kernel, NoiseField, NoiseSpec};

fn line(n: usize) -> Grid {
    build_grid(GridSpec::interval(0.0, 1.0, n)).unwrap()
}

fn silent(g: &Grid) -> NoiseField {
    NoiseField::new(NoiseSpec::new(Kernel::Zero), g).unwrap()
}

fn linear(alpha: f64) -> ModelSpec {
    ModelSpec {
        c: 1.0,
        alpha,
        nonlinearity: Nonlinearity::Zero,
        sigma: NoiseAmplitude::Zero,
        initial: InitialData::SineMode { beta: 1.0 },
    }
}

fn cubic(amplitude: f64) -> ModelSpec {
    ModelSpec {
        c: 1.0,
        alpha: 1.0,
        nonlinearity: Nonlinearity::Monomial { amplitude, p: 2 },
        sigma: NoiseAmplitude::Zero,
        initial: InitialData::SineMode { beta: 1.0 },
    }
}

#[test]
fn linear_energy_drift_at_two_resolutions() {
    for n in [127, 255] {
        let g = line(n);
        let m = linear(0.0);
        let rec = run_path(&m, &g, &silent(&g), &TimeSpec::with_cfl(0.5, 5.0), 0).unwrap();
        let e0 = rec.initial_energy;
        let drift = rec.rows.iter().map(|r| (r.energy - e0).abs() / e0).fold(0.0, f64::max);
        assert!(drift <= 1e-4, "n = {n}: drift {drift}");
        let res = energy_residual(&rec).into_iter().map(f64::abs).fold(0.0, f64::max);
        assert!(res <= 1e-4, "n = {n}: residual {res}");
        assert!((rec.last().t - 5.0).abs() < 1e-12);
    }
}

/// Max node error against `u(t) = [β cos ωt + sin(ωt)/ω] sin(πx)` at `t_end`.
fn eigenmode_error(n: usize, cfl: f64, t_end: f64) -> f64 {
    let g = line(n);
    let m = linear(0.0);
    let noise = silent(&g);
    let dt = TimeSpec::with_cfl(cfl, t_end).dt(&g, &m).unwrap();
    let (u0, v0) = m.initial_fields(&g).unwrap();
    let mut state = PathState::new(u0, v0, dt);
    let mut integ = PathIntegrator::new(&m, &g, &noise, Scheme::PositionVerlet);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let steps = (t_end / dt).round() as u64;
    for _ in 0..steps {
        integ.step(&mut state, &mut rng).unwrap();
    }
    let h = g.spacing()[0];
    let omega = ((2.0 / (h * h)) * (1.0 - (PI * h).cos())).sqrt();
    let t = state.t();
    let amp = (omega * t).cos() + (omega * t).sin() / omega;
    g.coords()
        .iter()
        .zip(state.u.iter())
        .map(|(x, u)| (u - amp * (PI * x[0]).sin()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn halving_dt_cuts_solution_error() {
    let coarse = eigenmode_error(127, 0.5, 5.0);
    let fine = eigenmode_error(127, 0.25, 5.0);
    assert!(coarse / fine >= 3.0, "ratio {}", coarse / fine);
}

/// `Ä = −ω²A + ¾ a A³`, the projection of the cubic equation onto sin(πx).
fn single_mode_blowup(amplitude: f64, alpha: f64, ratio: f64) -> f64 {
    let omega_sq = PI * PI + alpha;
    let rhs = |a: f64| -omega_sq * a + 0.75 * amplitude * a * a * a;
    let (mut a, mut b, mut t) = (1.0f64, 1.0f64, 0.0);
    let dt = 1e-6;
    while a * a < ratio {
        let (k1a, k1b) = (b, rhs(a));
        let (k2a, k2b) = (b + 0.5 * dt * k1b, rhs(a + 0.5 * dt * k1a));
        let (k3a, k3b) = (b + 0.5 * dt * k2b, rhs(a + 0.5 * dt * k2a));
        let (k4a, k4b) = (b + dt * k3b, rhs(a + dt * k3a));
        a += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        b += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        t += dt;
    }
    t
}

/// Odd sine modes `k = 1, 3, …` under Galerkin projection, with `f(u)`
/// projected by midpoint quadrature and an RK4 step shrinking with amplitude.
fn galerkin_blowup(amplitude: f64, alpha: f64, modes: usize, ratio: f64) -> f64 {
    let q = 256;
    let ks: Vec<f64> = (0..modes).map(|j| (2 * j + 1) as f64).collect();
    let basis: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| (0..q).map(|i| (k * PI * (i as f64 + 0.5) / q as f64).sin()).collect())
        .collect();
    let rhs = |a: &[f64]| -> Vec<f64> {
        let u: Vec<f64> = (0..q).map(|i| (0..modes).map(|j| a[j] * basis[j][i]).sum()).collect();
        (0..modes)
            .map(|j| {
                let proj: f64 = (0..q).map(|i| amplitude * u[i].powi(3) * basis[j][i]).sum::<f64>() * 2.0 / q as f64;
                -(ks[j] * ks[j] * PI * PI + alpha) * a[j] + proj
            })
            .collect()
    };
    let mut a = vec![0.0; modes];
    let mut b = vec![0.0; modes];
    a[0] = 1.0;
    b[0] = 1.0;
    let mut t = 0.0;
    let l2 = |a: &[f64]| 0.5 * a.iter().map(|x| x * x).sum::<f64>();
    let l2_0 = l2(&a);
    while l2(&a) < ratio * l2_0 {
        let peak: f64 = a.iter().map(|x| x.abs()).sum();
        let stiff = (ks[modes - 1].powi(2) * PI * PI + 3.0 * amplitude * peak * peak).sqrt();
        let dt = (0.02 / stiff).min(1e-4);
        let shift = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + s * k).collect() };
        let (k1a, k1b) = (b.clone(), rhs(&a));
        let (k2a, k2b) = (shift(&b, &k1b, 0.5 * dt), rhs(&shift(&a, &k1a, 0.5 * dt)));
        let (k3a, k3b) = (shift(&b, &k2b, 0.5 * dt), rhs(&shift(&a, &k2a, 0.5 * dt)));
        let (k4a, k4b) = (shift(&b, &k3b, dt), rhs(&shift(&a, &k3a, dt)));
        for j in 0..modes {
            a[j] += dt / 6.0 * (k1a[j] + 2.0 * k2a[j] + 2.0 * k3a[j] + k4a[j]);
            b[j] += dt / 6.0 * (k1b[j] + 2.0 * k2b[j] + 2.0 * k3b[j] + k4b[j]);
        }
        t += dt;
    }
    t
}

#[test]
fn cubic_blowup_tracks_mode_oracles() {
    let g = line(63);
    let m = cubic(60.0);
    let ts = TimeSpec::with_cfl(0.25, 2.0);
    let rec = run_path(&m, &g, &silent(&g), &ts, 0).unwrap();
    assert!(rec.blown_up);
    let l2 = rec.l2_sq();
    assert!(l2.windows(2).all(|w| w[1] >= w[0]));
    let t_pde = rec.t_blow.unwrap();
    let t_galerkin = galerkin_blowup(60.0, 1.0, 8, 1e6);
    assert!((t_pde / t_galerkin - 1.0).abs() < 0.03, "pde {t_pde} vs galerkin {t_galerkin}");
    // Energy leaking into higher modes focuses the profile, so one mode blows up later.
    let t_one = single_mode_blowup(60.0, 1.0, 1e6);
    assert!(t_pde < t_one && t_one < 1.2 * t_pde, "pde {t_pde} vs single mode {t_one}");
}

#[test]
fn detection_threshold_barely_moves_blowup_time() {
    let g = line(63);
    let m = cubic(60.0);
    let noise = silent(&g);
    let at = |ratio| {
        let mut ts = TimeSpec::with_cfl(0.25, 2.0);
        ts.blowup_ratio = ratio;
        run_path(&m, &g, &noise, &ts, 0).unwrap().t_blow.unwrap()
    };
    let (t6, t8) = (at(1e6), at(1e8));
    assert!(t8 >= t6);
    assert!((t8 - t6) / t6 < 0.05, "{t6} vs {t8}");
}

#[test]
fn deterministic_blowup_precedes_t0() {
    let g = line(63);
    let m = cubic(60.0);
    let ns = NoiseSpec::new(Kernel::SquaredExponential { r0: 1.0, rho: 1.0 });
    let report = check_conditions(&m, &g, &ns, None).unwrap();
    assert!(report.all_pass());
    let t0 = report.t0.unwrap();
    let noise = NoiseField::new(ns, &g).unwrap();
    let rec = run_path(&m, &g, &noise, &TimeSpec::with_cfl(0.5, 1.1 * t0), 3).unwrap();
    assert!(rec.blown_up);
    assert!(rec.t_blow.unwrap() <= t0);
    let last = rec.last();
    assert!(last.blown_up && last.t < 1.1 * t0);
}

#[test]
fn phi_second_derivative_matches_finite_differences() {
    let g = line(63);
    let m = cubic(60.0);
    let noise = silent(&g);
    let rec = run_path(&m, &g, &noise, &TimeSpec::with_cfl(0.1, 2.0), 0).unwrap();
    let t_blow = rec.t_blow.unwrap();
    let rows: Vec<_> = rec.rows.iter().filter(|r| r.t <= 0.6 * t_blow).collect();
    let dt = rec.dt;
    let phi_prime = |k: usize| 0.25 * (rows[k + 1].l2_sq - rows[k - 1].l2_sq) / dt;
    let (a, b) = (1, rows.len() - 2);
    let integral: f64 = (a..b).map(|k| 0.5 * dt * (rows[k].phi_dd + rows[k + 1].phi_dd)).sum();
    let fd = phi_prime(b) - phi_prime(a);
    assert!((integral - fd).abs() <= 0.02 * fd.abs(), "{integral} vs {fd}");
}

#[test]
fn cauchy_schwarz_holds_on_every_row() {
    let g = line(31);
    let mut m = cubic(1.0);
    m.sigma = NoiseAmplitude::ArctanDecay { sigma0: 1.0, nu: 1.0 };
    let noise = NoiseField::new(NoiseSpec::new(Kernel::SquaredExponential { r0: 1.0, rho: 1.0 }), &g).unwrap();
    for seed in 0..8 {
        let rec = run_path(&m, &g, &noise, &TimeSpec::with_cfl(0.5, 2.0), seed).unwrap();
        for r in &rec.rows {
            assert!(r.uv * r.uv <= r.l2_sq * r.v_sq * (1.0 + 1e-12));
        }
    }
}

#[test]
fn deterministic_residual_is_second_order() {
    let g = line(63);
    let m = cubic(1.0);
    let noise = silent(&g);
    let worst = |cfl| {
        let rec = run_path(&m, &g, &noise, &TimeSpec::with_cfl(cfl, 1.0), 0).unwrap();
        energy_residual(&rec).into_iter().map(f64::abs).fold(0.0, f64::max)
    };
    let ratio = worst(0.5) / worst(0.25);
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn same_seed_same_record() {
    let g = line(31);
    let mut m = cubic(1.0);
    m.sigma = NoiseAmplitude::ArctanDecay { sigma0: 1.0, nu: 1.0 };
    let noise = NoiseField::new(NoiseSpec::new(Kernel::SquaredExponential { r0: 1.0, rho: 1.0 }), &g).unwrap();
    let ts = TimeSpec::with_cfl(0.5, 1.0);
    assert_eq!(run_path(&m, &g, &noise, &ts, 42).unwrap(), run_path(&m, &g, &noise, &ts, 42).unwrap());
}

