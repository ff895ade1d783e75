//! Sufficient conditions for mean-square blow-up, the tangent-line bound
//! `T₀ = ‖u₀‖²/(u₀, v₀)`, and the closed forms of the half-plane example.
//!
//! The conditions checked are
//!
//! * B1: `(u₀, v₀) > 0`;
//! * B2: `(F(u₀), 1) > ½{e(u₀; v₀) + ∫₀^∞∫_D r(x,x) q(x,t) dx dt}` (strict);
//! * B3: `(u, f(u)) ≥ 2(F(u), 1)` for bounded continuous `u`. The concavity
//!   argument consumes the factor 2; the weaker factor ½ is also evaluated and
//!   reported.
//!
//! Half-plane example data do not vanish on `x₁ = 0`, so the grid's Dirichlet
//! operators see a boundary jump that the continuum integrals do not contain.
//! For that initial data the conditions are evaluated on the continuum
//! integrands with [`Grid::integrate_closed`]; the Dirichlet-grid energy is
//! reported alongside.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::energy;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{InitialData, ModelSpec, NoiseAmplitude, Nonlinearity};
use crate::noise::{half_plane_noise_budget, noise_budget, Kernel, NoiseBudget, NoiseField, NoiseSpec};

/// Factor required of B3 by the concavity argument.
pub const B3_REQUIRED_FACTOR: f64 = 2.0;
/// Factor appearing in the printed statement of B3.
pub const B3_PRINTED_FACTOR: f64 = 0.5;

pub const B3_PROBES: usize = 100;
const B3_PROBE_SEED: u64 = 0x00B3_F00D;

/// Relative band inside which `lhs > rhs` is treated as a tie, hence false.
const STRICT_TIE: f64 = 1e-12;

pub fn strictly_greater(lhs: f64, rhs: f64) -> bool {
    lhs > rhs && lhs - rhs > STRICT_TIE * lhs.abs().max(rhs.abs())
}

/// Constants of the half-plane example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleParams {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: u32,
    pub r0: f64,
    pub sigma0: f64,
    pub rho: f64,
    pub nu: f64,
    /// Nonlinearity amplitude `a_f`.
    pub amplitude: f64,
}

impl ExampleParams {
    pub fn unit() -> Self {
        Self {
            c: 1.0,
            alpha: 1.0,
            beta: 1.0,
            p: 2,
            r0: 1.0,
            sigma0: 1.0,
            rho: 1.0,
            nu: 1.0,
            amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("r0", self.r0),
            ("rho", self.rho),
            ("nu", self.nu),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::InvalidParams(format!("sigma0 must be non-negative, got {}", self.sigma0)));
        }
        if self.p < 2 {
            return Err(Error::InvalidParams(format!("p must be at least 2, got {}", self.p)));
        }
        Ok(())
    }

    /// Reads the constants off a half-plane model with a dot-product (or silent) noise.
    pub fn from_model(m: &ModelSpec, ns: &NoiseSpec) -> Option<Self> {
        let InitialData::HalfPlaneExample { beta } = m.initial else {
            return None;
        };
        let Nonlinearity::Monomial { amplitude, p } = m.nonlinearity else {
            return None;
        };
        let (sigma0, nu) = match m.sigma {
            NoiseAmplitude::Zero => (0.0, 1.0),
            NoiseAmplitude::ArctanDecay { sigma0, nu } => (sigma0, nu),
        };
        let (r0, rho, sigma0) = match ns.kernel {
            Kernel::DotProduct { r0, rho } => (r0, rho, sigma0),
            Kernel::Zero => (1.0, 1.0, 0.0),
            Kernel::SquaredExponential { .. } if sigma0 == 0.0 => (1.0, 1.0, 0.0),
            Kernel::SquaredExponential { .. } => return None,
        };
        Some(Self {
            c: m.c,
            alpha: m.alpha,
            beta,
            p,
            r0,
            sigma0,
            rho,
            nu,
            amplitude,
        })
    }
}

/// The integrals entering B1–B2 for the half-plane example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleIntegrals {
    pub u0v0: f64,
    pub f_u0: f64,
    pub noise_budget: f64,
    pub v0_sq: f64,
    pub u0_sq: f64,
    pub grad_u0_sq: f64,
    pub energy: f64,
}

impl ExampleIntegrals {
    /// Exact values on the untruncated half-plane.
    pub fn closed_form(p: &ExampleParams) -> Self {
        let (beta, pf) = (p.beta, p.p as f64);
        let v0_sq = PI / 2.0;
        let u0_sq = beta * beta * v0_sq;
        let grad_u0_sq = PI / 3.0 * beta * beta;
        Self {
            u0v0: 0.5 * beta * PI,
            f_u0: p.amplitude * PI * beta.powi(2 * p.p as i32) / (4.0 * pf * (2.0 * pf - 1.0)),
            noise_budget: half_plane_noise_budget(p.r0, p.sigma0, p.rho, p.nu),
            v0_sq,
            u0_sq,
            grad_u0_sq,
            energy: PI / 2.0 * (1.0 + (p.alpha + 2.0 * p.c * p.c / 3.0) * beta * beta),
        }
    }

    /// Trapezoid rule on the grid's closed box applied to the same integrands.
    pub fn quadrature(p: &ExampleParams, grid: &Grid) -> Self {
        let w = |x: [f64; 2]| 1.0 / (1.0 + x[0] * x[0] + x[1] * x[1]);
        let beta = p.beta;
        let two_p = 2 * p.p as i32;
        let v0_sq = grid.integrate_closed(|x| w(x).powi(2));
        let u0_sq = grid.integrate_closed(|x| (beta * w(x)).powi(2));
        // |Du₀|² = 4β²|x|²/(1+|x|²)⁴
        let grad_u0_sq = grid.integrate_closed(|x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            4.0 * beta * beta * r2 * w(x).powi(4)
        });
        let kernel = Kernel::DotProduct { r0: p.r0, rho: p.rho };
        let time_factor = (p.sigma0 * PI / 2.0).powi(2) / (2.0 * p.nu);
        Self {
            u0v0: grid.integrate_closed(|x| beta * w(x) * w(x)),
            f_u0: p.amplitude / two_p as f64 * grid.integrate_closed(|x| (beta * w(x)).powi(two_p)),
            noise_budget: time_factor * grid.integrate_closed(|x| kernel.diagonal(x)),
            v0_sq,
            u0_sq,
            grad_u0_sq,
            energy: p.c * p.c * grad_u0_sq + p.alpha * u0_sq + v0_sq,
        }
    }

    /// The amplitude at which B2 becomes an equality for these integrals.
    pub fn amplitude_threshold(&self, amplitude: f64) -> f64 {
        0.5 * (self.energy + self.noise_budget) / (self.f_u0 / amplitude)
    }

    pub fn b2(&self) -> (f64, f64, bool) {
        let rhs = 0.5 * (self.energy + self.noise_budget);
        (self.f_u0, rhs, strictly_greater(self.f_u0, rhs))
    }
}

/// Smallest amplitude for which B2 holds in the half-plane example:
/// `p(2p−1)/β^{2p} · {1 + (α + 2c²/3)β² + r0σ0²π²/(8ρν)}`.
pub fn example_threshold(p: &ExampleParams) -> Result<f64> {
    p.validate()?;
    let pf = p.p as f64;
    let noise = p.r0 * p.sigma0 * p.sigma0 * PI * PI / (8.0 * p.rho * p.nu);
    Ok(pf * (2.0 * pf - 1.0) / p.beta.powi(2 * p.p as i32)
        * (1.0 + (p.alpha + 2.0 * p.c * p.c / 3.0) * p.beta * p.beta + noise))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub quantity: &'static str,
    pub closed_form: f64,
    pub quadrature: f64,
    pub rel_err: f64,
}

impl TableRow {
    fn new(quantity: &'static str, closed_form: f64, quadrature: f64) -> Self {
        let rel_err = if closed_form == 0.0 {
            quadrature.abs()
        } else {
            ((quadrature - closed_form) / closed_form).abs()
        };
        Self {
            quantity,
            closed_form,
            quadrature,
            rel_err,
        }
    }
}

pub fn closed_form_table(p: &ExampleParams, grid: &Grid) -> Result<Vec<TableRow>> {
    p.validate()?;
    let exact = ExampleIntegrals::closed_form(p);
    let quad = ExampleIntegrals::quadrature(p, grid);
    Ok(vec![
        TableRow::new("u0_v0", exact.u0v0, quad.u0v0),
        TableRow::new("F_u0", exact.f_u0, quad.f_u0),
        TableRow::new("noise_budget", exact.noise_budget, quad.noise_budget),
        TableRow::new("v0_sq", exact.v0_sq, quad.v0_sq),
        TableRow::new("u0_sq", exact.u0_sq, quad.u0_sq),
        TableRow::new("grad_u0_sq", exact.grad_u0_sq, quad.grad_u0_sq),
        TableRow::new("energy", exact.energy, quad.energy),
        TableRow::new(
            "lambda_min",
            example_threshold(p)?,
            quad.amplitude_threshold(p.amplitude),
        ),
        TableRow::new("T0", exact.u0_sq / exact.u0v0, quad.u0_sq / quad.u0v0),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub factor: f64,
    pub amplitude: f64,
    pub b2_pass: bool,
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub lambda_min: f64,
    pub entries: Vec<SweepEntry>,
}

impl ThresholdSweep {
    pub fn consistent(&self) -> bool {
        self.entries.iter().all(|e| e.b2_pass == e.above_threshold)
    }
}

pub const SWEEP_FACTORS: [f64; 9] = [0.5, 0.9, 0.99, 0.999, 1.0, 1.001, 1.01, 1.1, 2.0];

/// Evaluates B2 from the closed forms across amplitudes bracketing `λ_min`
/// and compares with `amplitude > λ_min`.
pub fn consistency_check_b2_vs_threshold(p: &ExampleParams, factors: &[f64]) -> Result<ThresholdSweep> {
    let lambda_min = example_threshold(p)?;
    let entries = factors
        .iter()
        .map(|&factor| {
            let amplitude = factor * lambda_min;
            let at = ExampleParams { amplitude, ..*p };
            let (_, _, b2_pass) = ExampleIntegrals::closed_form(&at).b2();
            SweepEntry {
                factor,
                amplitude,
                b2_pass,
                above_threshold: factor > 1.0,
            }
        })
        .collect();
    Ok(ThresholdSweep { lambda_min, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// Grid operators on the sampled initial fields.
    Discrete,
    /// Closed-box quadrature of the continuum integrands.
    Continuum,
}

impl Evaluation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Evaluation::Discrete => "discrete",
            Evaluation::Continuum => "continuum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub evaluation: Evaluation,
    pub b1_lhs: f64,
    pub b1_pass: bool,
    pub b2_lhs: f64,
    pub b2_rhs: f64,
    pub b2_pass: bool,
    pub initial_energy: f64,
    /// `e(u₀; v₀)` from the Dirichlet-grid operators on the sampled fields.
    pub grid_energy: f64,
    pub initial_l2_sq: f64,
    pub noise_budget: NoiseBudget,
    /// `min (u, f(u))/(F(u), 1)`; `2p` for the monomial family.
    pub b3_factor: Option<f64>,
    pub b3_probe_min: Option<f64>,
    pub b3_pass: bool,
    pub b3_printed_pass: bool,
    pub t0: Option<f64>,
    pub lambda_min: Option<f64>,
    pub clipped_mass: Option<f64>,
    pub node_count: usize,
    pub noise_node_count: Option<usize>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.b1_pass && self.b2_pass && self.b3_pass
    }
}

/// Randomized smooth probes: sums of a few separable sine modes with random
/// amplitudes, scaled up to `amplitude_scale`.
fn b3_probes(grid: &Grid, amplitude_scale: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(B3_PROBE_SEED);
    let spec = grid.spec().clone();
    let norm = move |x: [f64; 2], axis: usize| (x[axis] - spec.lower[axis]) / (spec.upper[axis] - spec.lower[axis]);
    (0..B3_PROBES)
        .map(|_| {
            let modes: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0) * amplitude_scale,
                        rng.random_range(1..5) as f64,
                        rng.random_range(1..5) as f64,
                    )
                })
                .collect();
            let dim = grid.dim();
            grid.sample(|x| {
                modes
                    .iter()
                    .map(|&(a, k0, k1)| {
                        let s0 = (k0 * PI * norm(x, 0)).sin();
                        let s1 = if dim == 2 { (k1 * PI * norm(x, 1)).sin() } else { 1.0 };
                        a * s0 * s1
                    })
                    .sum()
            })
            .into_vec()
        })
        .collect()
}

struct B3Outcome {
    factor: Option<f64>,
    probe_min: Option<f64>,
    pass: bool,
    printed_pass: bool,
}

fn check_b3(m: &ModelSpec, grid: &Grid, scale: f64) -> Result<B3Outcome> {
    let mut probe_min: Option<f64> = None;
    let mut pass = true;
    let mut printed_pass = true;
    for probe in b3_probes(grid, scale.max(1.0)) {
        let work = m.work_integral(&probe, grid)?;
        let potential = m.F_integral(&probe, grid)?;
        pass &= work >= B3_REQUIRED_FACTOR * potential * (1.0 - STRICT_TIE);
        printed_pass &= work >= B3_PRINTED_FACTOR * potential * (1.0 - STRICT_TIE);
        if potential > 0.0 {
            let ratio = work / potential;
            probe_min = Some(probe_min.map_or(ratio, |r: f64| r.min(ratio)));
        }
    }
    let factor = match (m.monomial_ratio(), probe_min) {
        // The identity (u, f(u)) = 2p (F(u), 1) is exact; report it when the probes agree.
        (Some(exact), Some(seen)) if (seen - exact).abs() <= 1e-10 * exact => Some(exact),
        (Some(exact), None) => Some(exact),
        (_, seen) => seen,
    };
    let pass = pass && factor.is_none_or(|f| f >= B3_REQUIRED_FACTOR);
    Ok(B3Outcome {
        factor,
        probe_min,
        pass,
        printed_pass,
    })
}

/// Evaluates B1–B3 and `T₀` for a model on a grid.
pub fn check_conditions(
    m: &ModelSpec,
    grid: &Grid,
    ns: &NoiseSpec,
    noise: Option<&NoiseField>,
) -> Result<ConditionReport> {
    m.validate()?;
    ns.validate()?;
    let (u0, v0) = m.initial_fields(grid)?;
    let grid_energy = energy(m, &u0, &v0, grid)?;
    let budget = noise_budget(m, ns, grid)?;

    let (evaluation, u0v0, u0_sq, e0, f_u0) = match (&m.initial, ExampleParams::from_model(m, ns)) {
        (InitialData::HalfPlaneExample { .. }, Some(params)) => {
            let q = ExampleIntegrals::quadrature(&params, grid);
            (Evaluation::Continuum, q.u0v0, q.u0_sq, q.energy, q.f_u0)
        }
        _ => (
            Evaluation::Discrete,
            grid.inner_product(&u0, &v0)?,
            grid.norm_sq(&u0)?,
            grid_energy,
            m.F_integral(&u0, grid)?,
        ),
    };

    let b1_pass = u0v0 > 0.0;
    let b2_rhs = 0.5 * (e0 + budget.value());
    let b3 = check_b3(m, grid, u0.iter().fold(0.0f64, |a, x| a.max(x.abs())))?;
    let lambda_min = ExampleParams::from_model(m, ns)
        .map(|p| example_threshold(&p))
        .transpose()?;

    Ok(ConditionReport {
        evaluation,
        b1_lhs: u0v0,
        b1_pass,
        b2_lhs: f_u0,
        b2_rhs,
        b2_pass: strictly_greater(f_u0, b2_rhs),
        initial_energy: e0,
        grid_energy,
        initial_l2_sq: u0_sq,
        noise_budget: budget,
        b3_factor: b3.factor,
        b3_probe_min: b3.probe_min,
        b3_pass: b3.pass,
        b3_printed_pass: b3.printed_pass,
        t0: b1_pass.then(|| u0_sq / u0v0),
        lambda_min,
        clipped_mass: noise.map(|n| n.factor().clipped_mass()),
        node_count: grid.node_count(),
        noise_node_count: noise.map(|n| n.noise_node_count()),
    })
}
