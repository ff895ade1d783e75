//! Coefficients, nonlinearity, noise amplitude and initial data of the wave problem
//!
//! ```text
//! ∂²u/∂t² = (c²∇² − α)u + f(u) + σ(u, Du, x, t) ∂W/∂t,   u = 0 on ∂D
//! ```
//!
//! The built-in families keep `f`, its antiderivative `F` and the noise
//! envelope `q = sup σ²` consistent with each other by construction.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::grid::{Field, Gradient, Grid, Position};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Zero,
    /// `f(μ) = amplitude · μ^(2p−1)`.
    Monomial { amplitude: f64, p: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseAmplitude {
    Zero,
    /// `σ = sigma0 · arctan(1 + |ξ|²) · exp(−nu·t)`.
    ArctanDecay { sigma0: f64, nu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `u₀ = β/(1+|x|²)`, `v₀ = 1/(1+|x|²)` on the (truncated) half-plane.
    HalfPlaneExample { beta: f64 },
    /// `u₀ = β·sin(πs)`, `v₀ = sin(πs)` with `s` the normalized position on an interval.
    SineMode { beta: f64 },
    Custom { u0: Field, v0: Field },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub c: f64,
    pub alpha: f64,
    pub nonlinearity: Nonlinearity,
    pub sigma: NoiseAmplitude,
    pub initial: InitialData,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("wave speed c must be positive, got {}", self.c));
        }
        // α = 0 is admitted for the undamped conservation runs.
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if let Nonlinearity::Monomial { amplitude, p } = self.nonlinearity {
            if !(amplitude.is_finite() && amplitude > 0.0) {
                return bad(format!("nonlinearity amplitude must be positive, got {amplitude}"));
            }
            if p < 2 {
                return bad(format!("monomial exponent p must be at least 2, got {p}"));
            }
        }
        if let NoiseAmplitude::ArctanDecay { sigma0, nu } = self.sigma {
            if !(sigma0.is_finite() && sigma0 >= 0.0) {
                return bad(format!("sigma0 must be non-negative, got {sigma0}"));
            }
            if !(nu.is_finite() && nu > 0.0) {
                return bad(format!("nu must be positive, got {nu}"));
            }
        }
        match &self.initial {
            InitialData::HalfPlaneExample { beta } | InitialData::SineMode { beta } => {
                if !(beta.is_finite() && *beta > 0.0) {
                    return bad(format!("beta must be positive, got {beta}"));
                }
            }
            InitialData::Custom { u0, v0 } => {
                if u0.len() != v0.len() {
                    return bad("custom u0 and v0 differ in length".into());
                }
                if !u0.is_finite() || !v0.is_finite() {
                    return Err(Error::NonFinite("custom initial data"));
                }
            }
        }
        Ok(())
    }

    pub fn f_eval(&self, mu: f64) -> f64 {
        match self.nonlinearity {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Monomial { amplitude, p } => amplitude * mu.powi(2 * p as i32 - 1),
        }
    }

    /// Antiderivative of `f` with `F(0) = 0`.
    #[allow(non_snake_case)]
    pub fn F_eval(&self, mu: f64) -> f64 {
        match self.nonlinearity {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Monomial { amplitude, p } => {
                let two_p = 2 * p;
                amplitude / two_p as f64 * mu.powi(two_p as i32)
            }
        }
    }

    pub fn sigma_eval(&self, _mu: f64, xi: Gradient, _x: Position, t: f64) -> f64 {
        match self.sigma {
            NoiseAmplitude::Zero => 0.0,
            NoiseAmplitude::ArctanDecay { sigma0, nu } => {
                let xi_sq = xi[0] * xi[0] + xi[1] * xi[1];
                sigma0 * (1.0 + xi_sq).atan() * (-nu * t).exp()
            }
        }
    }

    /// `q(x, t) = sup over (μ, ξ) of σ²`.
    pub fn q_envelope(&self, _x: Position, t: f64) -> f64 {
        match self.sigma {
            NoiseAmplitude::Zero => 0.0,
            NoiseAmplitude::ArctanDecay { sigma0, nu } => {
                (sigma0 * FRAC_PI_2).powi(2) * (-2.0 * nu * t).exp()
            }
        }
    }

    /// `2p` for the monomial family: the exact ratio `(u, f(u)) / (F(u), 1)`.
    pub fn monomial_ratio(&self) -> Option<f64> {
        match self.nonlinearity {
            Nonlinearity::Zero => None,
            Nonlinearity::Monomial { p, .. } => Some(2.0 * p as f64),
        }
    }

    pub fn sigma_is_zero(&self) -> bool {
        match self.sigma {
            NoiseAmplitude::Zero => true,
            NoiseAmplitude::ArctanDecay { sigma0, .. } => sigma0 == 0.0,
        }
    }

    /// Samples `(u₀, v₀)` at the grid's interior nodes.
    pub fn initial_fields(&self, grid: &Grid) -> Result<(Field, Field)> {
        match &self.initial {
            InitialData::HalfPlaneExample { beta } => {
                if grid.dim() != 2 {
                    return Err(Error::InvalidModel(format!(
                        "half-plane initial data needs a 2-D grid, got dim = {}",
                        grid.dim()
                    )));
                }
                let weight = |x: Position| 1.0 / (1.0 + x[0] * x[0] + x[1] * x[1]);
                Ok((grid.sample(|x| beta * weight(x)), grid.sample(weight)))
            }
            InitialData::SineMode { beta } => {
                if grid.dim() != 1 {
                    return Err(Error::InvalidModel(format!(
                        "sine-mode initial data needs a 1-D grid, got dim = {}",
                        grid.dim()
                    )));
                }
                let (lo, hi) = (grid.spec().lower[0], grid.spec().upper[0]);
                let mode = move |x: Position| (PI * (x[0] - lo) / (hi - lo)).sin();
                Ok((grid.sample(|x| beta * mode(x)), grid.sample(mode)))
            }
            InitialData::Custom { u0, v0 } => {
                grid.check_len(u0)?;
                grid.check_len(v0)?;
                Ok((u0.clone(), v0.clone()))
            }
        }
    }

    /// `(F(u), 1) = ΔA · Σ F(u_i)`.
    #[allow(non_snake_case)]
    pub fn F_integral(&self, u: &[f64], grid: &Grid) -> Result<f64> {
        grid.check_len(u)?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("F integral input"));
        }
        Ok(grid.quad_weight() * u.iter().map(|&x| self.F_eval(x)).sum::<f64>())
    }

    /// `(u, f(u))`.
    pub fn work_integral(&self, u: &[f64], grid: &Grid) -> Result<f64> {
        grid.check_len(u)?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("nonlinear work input"));
        }
        Ok(grid.quad_weight() * u.iter().map(|&x| x * self.f_eval(x)).sum::<f64>())
    }
}
