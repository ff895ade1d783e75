//! Time stepping of single sample paths.
//!
//! The default scheme is a stochastic position-Verlet split:
//!
//! ```text
//! u* = u + (dt/2)·v
//! v⁺ = v + dt·(c²∇²u* − αu* + f(u*)) + σ(u*, Du*, x, t)·ΔW
//! u⁺ = u* + (dt/2)·v⁺
//! ```
//!
//! The noise coefficient is evaluated before ΔW is drawn (Itô, left point).
//! Alongside the state, each path accumulates the three integrals of the
//! energy balance: nonlinear work `Σ (v_mid, f(u*))·dt`, the trace term
//! `Σ Tr Q(u*)·dt`, and the martingale `Σ (v, σ·ΔW)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::energy_unchecked;
use crate::error::{Error, Result};
use crate::grid::{Field, Gradient, Grid};
use crate::model::ModelSpec;
use crate::noise::{NoiseField, NoiseScratch};

pub const DEFAULT_CFL: f64 = 0.5;
pub const DEFAULT_BLOWUP_RATIO: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    PositionVerlet,
    /// Explicit Euler–Maruyama on `(u, v)`; first order, kept as a reference.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// `dt = factor · h_min / (c·√dim)`.
    Cfl(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    pub step: StepSize,
    pub t_max: f64,
    pub record_every: usize,
    pub blowup_ratio: f64,
    pub scheme: Scheme,
}

impl TimeSpec {
    pub fn with_cfl(cfl: f64, t_max: f64) -> Self {
        Self {
            step: StepSize::Cfl(cfl),
            t_max,
            record_every: 1,
            blowup_ratio: DEFAULT_BLOWUP_RATIO,
            scheme: Scheme::PositionVerlet,
        }
    }

    pub fn with_dt(dt: f64, t_max: f64) -> Self {
        Self {
            step: StepSize::Fixed(dt),
            ..Self::with_cfl(DEFAULT_CFL, t_max)
        }
    }

    /// Largest step the explicit scheme is stable for on this grid.
    pub fn cfl_limit(grid: &Grid, model: &ModelSpec) -> f64 {
        grid.min_spacing() / (model.c * (grid.dim() as f64).sqrt())
    }

    pub fn dt(&self, grid: &Grid, model: &ModelSpec) -> Result<f64> {
        let limit = Self::cfl_limit(grid, model);
        let dt = match self.step {
            StepSize::Cfl(factor) => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::InvalidTime(format!("cfl factor must lie in (0, 1], got {factor}")));
                }
                factor * limit
            }
            StepSize::Fixed(dt) => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::InvalidTime(format!("dt must be positive, got {dt}")));
                }
                if dt > limit * (1.0 + 1e-12) {
                    return Err(Error::InvalidTime(format!(
                        "dt = {dt} exceeds the stability limit {limit} for this grid"
                    )));
                }
                dt
            }
        };
        Ok(dt)
    }

    pub fn total_steps(&self, dt: f64) -> u64 {
        (self.t_max / dt - 1e-9).ceil().max(1.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::InvalidTime(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidTime("record_every must be at least 1".into()));
        }
        if !(self.blowup_ratio > 1.0) {
            return Err(Error::InvalidTime(format!(
                "blow-up threshold ratio must exceed 1, got {}",
                self.blowup_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub u: Field,
    pub v: Field,
    pub step_index: u64,
    pub dt: f64,
    pub acc_f_work: f64,
    pub acc_trace: f64,
    pub acc_mart: f64,
    pub blown_up: bool,
    pub t_blow: Option<f64>,
}

impl PathState {
    pub fn new(u: Field, v: Field, dt: f64) -> Self {
        Self {
            u,
            v,
            step_index: 0,
            dt,
            acc_f_work: 0.0,
            acc_trace: 0.0,
            acc_mart: 0.0,
            blown_up: false,
            t_blow: None,
        }
    }

    pub fn t(&self) -> f64 {
        self.step_index as f64 * self.dt
    }
}

/// Flags the state once `‖u‖² ≥ ratio·‖u₀‖²` or any value is non-finite.
///
/// With `‖u₀‖² = 0` only non-finite values trigger detection.
pub fn detect_blowup(state: &mut PathState, grid: &Grid, initial_l2_sq: f64, ratio: f64) -> bool {
    if state.blown_up {
        return true;
    }
    let finite = state.u.is_finite() && state.v.is_finite();
    let l2 = grid.inner_product_unchecked(&state.u, &state.u);
    let over = initial_l2_sq > 0.0 && !(l2 < ratio * initial_l2_sq);
    if !finite || over {
        state.blown_up = true;
        state.t_blow = Some(state.t());
    }
    state.blown_up
}

/// One step of the chosen scheme; owns the scratch buffers a path needs.
pub struct PathIntegrator<'a> {
    model: &'a ModelSpec,
    grid: &'a Grid,
    noise: &'a NoiseField,
    scheme: Scheme,
    stage: Vec<f64>,
    accel: Vec<f64>,
    force: Vec<f64>,
    grads: Vec<Gradient>,
    sigma: Vec<f64>,
    kick: Vec<f64>,
    scratch: NoiseScratch,
}

impl<'a> PathIntegrator<'a> {
    pub fn new(model: &'a ModelSpec, grid: &'a Grid, noise: &'a NoiseField, scheme: Scheme) -> Self {
        let n = grid.node_count();
        Self {
            model,
            grid,
            noise,
            scheme,
            stage: vec![0.0; n],
            accel: vec![0.0; n],
            force: vec![0.0; n],
            grads: vec![[0.0; 2]; n],
            sigma: vec![0.0; n],
            kick: vec![0.0; n],
            scratch: noise.scratch(),
        }
    }

    /// `σ` at the stage state and the trace term it implies.
    fn noise_coefficient(&mut self, t: f64) -> f64 {
        if self.noise.is_silent() || self.model.sigma_is_zero() {
            self.sigma.iter_mut().for_each(|s| *s = 0.0);
            return 0.0;
        }
        self.grid.pointwise_gradient_into(&self.stage, &mut self.grads);
        for (((s, &x), &ui), &gi) in self
            .sigma
            .iter_mut()
            .zip(self.grid.coords())
            .zip(&self.stage)
            .zip(&self.grads)
        {
            *s = self.model.sigma_eval(ui, gi, x, t);
        }
        self.noise.trace_with_sigma(self.grid, &self.sigma)
    }

    /// `c²∇²w − αw + f(w)` for the stage state `w`, with `f(w)` kept in `force`.
    fn acceleration(&mut self) {
        let (c2, alpha) = (self.model.c * self.model.c, self.model.alpha);
        self.grid.laplacian_into(&self.stage, &mut self.accel);
        for ((a, f), &w) in self.accel.iter_mut().zip(self.force.iter_mut()).zip(&self.stage) {
            *f = self.model.f_eval(w);
            *a = c2 * *a - alpha * w + *f;
        }
    }

    pub fn step(&mut self, state: &mut PathState, rng: &mut ChaCha8Rng) -> Result<()> {
        if state.blown_up {
            return Err(Error::SteppingBlownUp(state.t()));
        }
        let dt = state.dt;
        let t = state.t();
        let weight = self.grid.quad_weight();

        match self.scheme {
            Scheme::PositionVerlet => {
                for ((w, &u), &v) in self.stage.iter_mut().zip(state.u.iter()).zip(state.v.iter()) {
                    *w = u + 0.5 * dt * v;
                }
            }
            Scheme::EulerMaruyama => self.stage.copy_from_slice(&state.u),
        }

        let trace = self.noise_coefficient(t);
        self.noise.sample_into(dt, rng, &mut self.scratch, &mut self.kick);
        for (k, s) in self.kick.iter_mut().zip(&self.sigma) {
            *k *= s;
        }
        self.acceleration();

        let mut mart = 0.0;
        let mut work = 0.0;
        for i in 0..state.v.len() {
            let v_old = state.v[i];
            let v_new = v_old + dt * self.accel[i] + self.kick[i];
            mart += v_old * self.kick[i];
            work += match self.scheme {
                Scheme::PositionVerlet => 0.5 * (v_old + v_new),
                Scheme::EulerMaruyama => v_old,
            } * self.force[i];
            state.v[i] = v_new;
            state.u[i] = match self.scheme {
                Scheme::PositionVerlet => self.stage[i] + 0.5 * dt * v_new,
                Scheme::EulerMaruyama => self.stage[i] + dt * v_old,
            };
        }
        state.acc_mart += weight * mart;
        state.acc_f_work += weight * work * dt;
        state.acc_trace += trace * dt;
        state.step_index += 1;
        Ok(())
    }
}

/// One recorded row of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub t: f64,
    pub l2_sq: f64,
    pub v_sq: f64,
    pub grad_sq: f64,
    /// `(u, v)`, whose ensemble mean is φ′.
    pub uv: f64,
    pub energy: f64,
    /// `e(t) − e(0) − 2·work − trace − 2·martingale`, unnormalized.
    pub energy_residual: f64,
    pub max_abs_u: f64,
    pub acc_f_work: f64,
    pub acc_trace: f64,
    pub acc_mart: f64,
    /// `‖v‖² − c²‖Du‖² − α‖u‖² + (u, f(u))`, whose ensemble mean is φ″.
    pub phi_dd: f64,
    pub blown_up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub seed: u64,
    pub dt: f64,
    pub record_every: usize,
    pub total_steps: u64,
    pub initial_energy: f64,
    pub initial_l2_sq: f64,
    pub rows: Vec<Checkpoint>,
    pub blown_up: bool,
    pub t_blow: Option<f64>,
}

impl PathRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn l2_sq(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2_sq).collect()
    }

    pub fn energy(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }

    pub fn last(&self) -> &Checkpoint {
        self.rows.last().expect("a path record always holds its initial row")
    }
}

pub(crate) fn checkpoint(model: &ModelSpec, grid: &Grid, state: &PathState, initial_energy: f64) -> Checkpoint {
    let l2_sq = grid.inner_product_unchecked(&state.u, &state.u);
    let v_sq = grid.inner_product_unchecked(&state.v, &state.v);
    let grad_sq = grid.gradient_sq_norm_unchecked(&state.u);
    let energy = energy_unchecked(model, l2_sq, v_sq, grad_sq);
    let work: f64 = grid.quad_weight() * state.u.iter().map(|&x| x * model.f_eval(x)).sum::<f64>();
    Checkpoint {
        step: state.step_index,
        t: state.t(),
        l2_sq,
        v_sq,
        grad_sq,
        uv: grid.inner_product_unchecked(&state.u, &state.v),
        energy,
        energy_residual: energy
            - initial_energy
            - 2.0 * state.acc_f_work
            - state.acc_trace
            - 2.0 * state.acc_mart,
        max_abs_u: state.u.max_abs(),
        acc_f_work: state.acc_f_work,
        acc_trace: state.acc_trace,
        acc_mart: state.acc_mart,
        phi_dd: v_sq - model.c * model.c * grad_sq - model.alpha * l2_sq + work,
        blown_up: state.blown_up,
    }
}

/// Integrates one path to `t_max` or blow-up. A deterministic function of its inputs and `seed`.
pub fn run_path(model: &ModelSpec, grid: &Grid, noise: &NoiseField, ts: &TimeSpec, seed: u64) -> Result<PathRecord> {
    model.validate()?;
    ts.validate()?;
    let dt = ts.dt(grid, model)?;
    let total_steps = ts.total_steps(dt);
    let (u0, v0) = model.initial_fields(grid)?;
    let mut state = PathState::new(u0, v0, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let first = checkpoint(model, grid, &state, 0.0);
    let initial_energy = first.energy;
    let initial_l2_sq = first.l2_sq;
    let mut rows = vec![Checkpoint {
        energy_residual: 0.0,
        ..first
    }];

    let mut integrator = PathIntegrator::new(model, grid, noise, ts.scheme);
    let stride = ts.record_every as u64;
    for k in 1..=total_steps {
        integrator.step(&mut state, &mut rng)?;
        let blown = detect_blowup(&mut state, grid, initial_l2_sq, ts.blowup_ratio);
        if blown || k % stride == 0 || k == total_steps {
            rows.push(checkpoint(model, grid, &state, initial_energy));
        }
        if blown {
            break;
        }
    }

    Ok(PathRecord {
        seed,
        dt,
        record_every: ts.record_every,
        total_steps,
        initial_energy,
        initial_l2_sq,
        rows,
        blown_up: state.blown_up,
        t_blow: state.t_blow,
    })
}
