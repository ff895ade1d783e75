//! Scalar functionals of states and ensembles: energy, `(F(u), 1)`, the
//! φ″ integrand, and the Monte Carlo estimates of `φ(t) = ½E‖u_t‖²` and
//! `ψ(t) = φ(t)^{−λ}`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::integrator::PathRecord;
use crate::model::ModelSpec;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

pub const DEFAULT_PSI_EXPONENT: f64 = 0.5;

pub(crate) fn energy_unchecked(m: &ModelSpec, l2_sq: f64, v_sq: f64, grad_sq: f64) -> f64 {
    m.c * m.c * grad_sq + m.alpha * l2_sq + v_sq
}

fn check_finite(u: &[f64], what: &'static str) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `e(u; v) = c²‖Du‖² + α‖u‖² + ‖v‖²`.
pub fn energy(m: &ModelSpec, u: &[f64], v: &[f64], grid: &Grid) -> Result<f64> {
    check_finite(v, "energy input")?;
    let grad_sq = grid.gradient_sq_norm(u)?;
    Ok(energy_unchecked(m, grid.norm_sq(u)?, grid.norm_sq(v)?, grad_sq))
}

#[allow(non_snake_case)]
pub fn F_integral(m: &ModelSpec, u: &[f64], grid: &Grid) -> Result<f64> {
    m.F_integral(u, grid)
}

/// `‖v‖² − c²‖Du‖² − α‖u‖² + (u, f(u))` for one state.
pub fn phi_second_derivative_integrand(m: &ModelSpec, u: &[f64], v: &[f64], grid: &Grid) -> Result<f64> {
    check_finite(v, "phi'' input")?;
    let grad_sq = grid.gradient_sq_norm(u)?;
    Ok(grid.norm_sq(v)? - m.c * m.c * grad_sq - m.alpha * grid.norm_sq(u)? + m.work_integral(u, grid)?)
}

/// The energy-balance residual of a path, divided by `e(u₀; v₀)` when that is positive.
pub fn energy_residual(rec: &PathRecord) -> Vec<f64> {
    let scale = if rec.initial_energy > 0.0 { rec.initial_energy } else { 1.0 };
    rec.rows.iter().map(|r| r.energy_residual / scale).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    /// `½ · mean ‖u_t‖²` over paths still alive; absent once none are.
    pub phi: Vec<Option<f64>>,
    pub phi_ci: Vec<Option<f64>>,
    /// `φ^{−λ}`, defined where φ > 0.
    pub psi: Vec<Option<f64>>,
    /// `λ φ^{−λ−1} · phi_ci`, the delta-method halfwidth of ψ.
    pub psi_ci: Vec<Option<f64>>,
    pub frac_blown: Vec<f64>,
    pub n_alive: Vec<usize>,
    pub mean_energy: Vec<Option<f64>>,
    /// Ensemble mean of `(u, v)`, an estimate of φ′.
    pub mean_uv: Vec<Option<f64>>,
    /// Ensemble mean of the φ″ integrand.
    pub mean_phi_dd: Vec<Option<f64>>,
    pub mean_residual: Vec<Option<f64>>,
    pub n_paths: usize,
    pub lambda: f64,
    pub t_blow: Vec<Option<f64>>,
    pub initial_l2_sq: f64,
}

struct Moments {
    n: usize,
    mean: f64,
    var: f64,
}

fn moments(values: &[f64]) -> Option<Moments> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    if values.iter().all(|&x| x == values[0]) {
        return Some(Moments { n, mean: values[0], var: 0.0 });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    Some(Moments { n, mean, var })
}

/// Reduces path records to per-checkpoint ensemble statistics.
///
/// Checkpoints are the recording steps `0, k, 2k, …` plus the final step. A
/// path contributes to a checkpoint only while it has not blown up; from its
/// detection step on it is counted in `frac_blown` instead, so `phi` becomes
/// a lower bound once `frac_blown > 0`.
pub fn ensemble_stats(records: &[PathRecord], lambda: f64) -> Result<EnsembleStats> {
    let first = records.first().ok_or(Error::EmptyEnsemble)?;
    for (i, rec) in records.iter().enumerate() {
        if rec.dt.to_bits() != first.dt.to_bits()
            || rec.record_every != first.record_every
            || rec.total_steps != first.total_steps
        {
            return Err(Error::MismatchedRecords(format!(
                "path {i} has dt = {}, stride = {}, steps = {}; path 0 has {}, {}, {}",
                rec.dt, rec.record_every, rec.total_steps, first.dt, first.record_every, first.total_steps
            )));
        }
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("psi exponent must be positive, got {lambda}")));
    }

    let stride = first.record_every as u64;
    let mut steps: Vec<u64> = (0..=first.total_steps).step_by(stride as usize).collect();
    if *steps.last().unwrap() != first.total_steps {
        steps.push(first.total_steps);
    }
    let n_cp = steps.len();
    let blow_step: Vec<Option<u64>> = records
        .iter()
        .map(|r| r.blown_up.then(|| r.last().step))
        .collect();

    // Alive rows per checkpoint, in path order.
    let mut l2: Vec<Vec<f64>> = vec![Vec::new(); n_cp];
    let mut en: Vec<Vec<f64>> = vec![Vec::new(); n_cp];
    let mut uv: Vec<Vec<f64>> = vec![Vec::new(); n_cp];
    let mut dd: Vec<Vec<f64>> = vec![Vec::new(); n_cp];
    let mut res: Vec<Vec<f64>> = vec![Vec::new(); n_cp];
    for rec in records {
        for row in rec.rows.iter().filter(|r| !r.blown_up) {
            if let Ok(k) = steps.binary_search(&row.step) {
                l2[k].push(row.l2_sq);
                en[k].push(row.energy);
                uv[k].push(row.uv);
                dd[k].push(row.phi_dd);
                res[k].push(row.energy_residual);
            }
        }
    }

    let n_paths = records.len();
    let mean_of = |v: &Vec<f64>| moments(v).map(|m| m.mean);
    let mut stats = EnsembleStats {
        steps: steps.clone(),
        times: steps.iter().map(|&s| s as f64 * first.dt).collect(),
        phi: Vec::with_capacity(n_cp),
        phi_ci: Vec::with_capacity(n_cp),
        psi: Vec::with_capacity(n_cp),
        psi_ci: Vec::with_capacity(n_cp),
        frac_blown: Vec::with_capacity(n_cp),
        n_alive: Vec::with_capacity(n_cp),
        mean_energy: en.iter().map(mean_of).collect(),
        mean_uv: uv.iter().map(mean_of).collect(),
        mean_phi_dd: dd.iter().map(mean_of).collect(),
        mean_residual: res.iter().map(mean_of).collect(),
        n_paths,
        lambda,
        t_blow: records.iter().map(|r| r.t_blow).collect(),
        initial_l2_sq: first.initial_l2_sq,
    };

    for (k, &step) in steps.iter().enumerate() {
        let blown = blow_step.iter().filter(|b| b.is_some_and(|s| s <= step)).count();
        stats.frac_blown.push(blown as f64 / n_paths as f64);
        stats.n_alive.push(l2[k].len());
        match moments(&l2[k]) {
            Some(Moments { n, mean, var }) => {
                let phi = 0.5 * mean;
                let ci = 0.5 * Z_95 * (var / n as f64).sqrt();
                stats.phi.push(Some(phi));
                stats.phi_ci.push(Some(ci));
                if phi > 0.0 {
                    stats.psi.push(Some(phi.powf(-lambda)));
                    stats.psi_ci.push(Some(lambda * phi.powf(-lambda - 1.0) * ci));
                } else {
                    stats.psi.push(None);
                    stats.psi_ci.push(None);
                }
            }
            None => {
                stats.phi.push(None);
                stats.phi_ci.push(None);
                stats.psi.push(None);
                stats.psi_ci.push(None);
            }
        }
    }
    Ok(stats)
}

impl EnsembleStats {
    /// Index of the last checkpoint before any path has blown up.
    pub fn last_clean_index(&self) -> Option<usize> {
        self.frac_blown.iter().rposition(|&f| f == 0.0)
    }

    /// Advisory blow-up time: where the line through the last two ψ values hits zero.
    pub fn extrapolated_blowup_time(&self) -> Option<f64> {
        let defined: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.psi)
            .filter_map(|(&t, p)| p.map(|p| (t, p)))
            .collect();
        let [.., (t1, p1), (t2, p2)] = defined.as_slice() else {
            return None;
        };
        let slope = (p2 - p1) / (t2 - t1);
        (slope < 0.0).then(|| t2 - p2 / slope)
    }
}

/// One interior checkpoint of the ψ concavity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureCheck {
    pub index: usize,
    pub t: f64,
    pub second_difference: f64,
    pub tolerance: f64,
}

impl CurvatureCheck {
    pub fn holds(&self) -> bool {
        self.second_difference <= self.tolerance
    }
}

/// Second central differences of ψ at interior checkpoints whose neighbours
/// all precede the first blow-up, each with tolerance
/// `ci_factor · (ci₋ + 2ci₀ + ci₊)` propagated from the ψ halfwidths.
pub fn psi_curvature(stats: &EnsembleStats, ci_factor: f64) -> Vec<CurvatureCheck> {
    let Some(last) = stats.last_clean_index() else {
        return Vec::new();
    };
    (1..last)
        .filter_map(|k| {
            let (a, b, c) = (stats.psi[k - 1]?, stats.psi[k]?, stats.psi[k + 1]?);
            let ci = stats.psi_ci[k - 1]? + 2.0 * stats.psi_ci[k]? + stats.psi_ci[k + 1]?;
            Some(CurvatureCheck {
                index: k,
                t: stats.times[k],
                second_difference: a - 2.0 * b + c,
                tolerance: ci_factor * ci,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Field, GridSpec};
    use crate::integrator::Checkpoint;
    use crate::model::{InitialData, NoiseAmplitude, Nonlinearity};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn model() -> ModelSpec {
        ModelSpec {
            c: 1.0,
            alpha: 1.0,
            nonlinearity: Nonlinearity::Monomial { amplitude: 1.0, p: 2 },
            sigma: NoiseAmplitude::Zero,
            initial: InitialData::SineMode { beta: 1.0 },
        }
    }

    fn row(step: u64, dt: f64, l2_sq: f64, blown_up: bool) -> Checkpoint {
        Checkpoint {
            step,
            t: step as f64 * dt,
            l2_sq,
            v_sq: 0.0,
            grad_sq: 0.0,
            uv: 0.0,
            energy: l2_sq,
            energy_residual: 0.0,
            max_abs_u: l2_sq.sqrt(),
            acc_f_work: 0.0,
            acc_trace: 0.0,
            acc_mart: 0.0,
            phi_dd: 0.0,
            blown_up,
        }
    }

    fn record(l2: &[f64], blow_at: Option<usize>) -> PathRecord {
        let dt = 0.1;
        let mut rows: Vec<Checkpoint> = l2.iter().enumerate().map(|(k, &x)| row(k as u64, dt, x, false)).collect();
        if let Some(b) = blow_at {
            rows.truncate(b);
            rows.push(row(b as u64, dt, 1e30, true));
        }
        let blown_up = blow_at.is_some();
        PathRecord {
            seed: 0,
            dt,
            record_every: 1,
            total_steps: (l2.len() - 1) as u64,
            initial_energy: l2[0],
            initial_l2_sq: l2[0],
            rows,
            blown_up,
            t_blow: blow_at.map(|b| b as f64 * dt),
        }
    }

    #[test]
    fn energy_examples() {
        let g = build_grid(GridSpec::interval(0.0, 1.0, 9)).unwrap();
        let m = model();
        assert_eq!(energy(&m, &g.zeros(), &g.zeros(), &g).unwrap(), 0.0);
        let v = g.sample(|x| x[0] + 1.0);
        assert_relative_eq!(
            energy(&m, &g.zeros(), &v, &g).unwrap(),
            g.norm_sq(&v).unwrap(),
            max_relative = 1e-15
        );
        let bad = Field::from_vec(vec![f64::INFINITY; 9]);
        assert!(energy(&m, &bad, &v, &g).is_err());
    }

    #[test]
    fn phi_dd_examples() {
        let g = build_grid(GridSpec::interval(0.0, 1.0, 9)).unwrap();
        let m = model();
        assert_eq!(phi_second_derivative_integrand(&m, &g.zeros(), &g.zeros(), &g).unwrap(), 0.0);
        let v = g.sample(|x| (PI * x[0]).sin());
        let value = phi_second_derivative_integrand(&m, &g.zeros(), &v, &g).unwrap();
        assert!(value > 0.0);
        assert_relative_eq!(value, g.norm_sq(&v).unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn f_integral_matches_work_identity() {
        let g = build_grid(GridSpec::interval(0.0, 1.0, 9)).unwrap();
        let m = model();
        assert_eq!(F_integral(&m, &g.zeros(), &g).unwrap(), 0.0);
        let u = g.sample(|x| 2.0 * x[0] - 0.7);
        let lhs = F_integral(&m, &u, &g).unwrap();
        let rhs = m.work_integral(&u, &g).unwrap() / 4.0;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn stats_of_zero_paths() {
        let recs = vec![record(&[0.0; 5], None), record(&[0.0; 5], None)];
        let s = ensemble_stats(&recs, 0.5).unwrap();
        assert!(s.phi.iter().all(|p| *p == Some(0.0)));
        assert!(s.psi.iter().all(Option::is_none));
        assert!(s.frac_blown.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn stats_of_single_path() {
        let l2 = [2.0, 3.0, 5.0];
        let s = ensemble_stats(&[record(&l2, None)], 0.5).unwrap();
        for (k, &x) in l2.iter().enumerate() {
            assert_eq!(s.phi[k], Some(0.5 * x));
            assert_eq!(s.phi_ci[k], Some(0.0));
        }
        // ψ(0) = (½‖u₀‖²)^{−1/2} = √2/‖u₀‖.
        assert_relative_eq!(s.psi[0].unwrap(), 2f64.sqrt() / 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn blown_paths_leave_the_average() {
        let recs = vec![record(&[1.0, 2.0, 4.0, 8.0], Some(2)), record(&[1.0, 1.0, 1.0, 1.0], None)];
        let s = ensemble_stats(&recs, 0.5).unwrap();
        assert_eq!(s.n_alive, vec![2, 2, 1, 1]);
        assert_eq!(s.frac_blown, vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(s.phi[2], Some(0.5));
        assert_eq!(s.last_clean_index(), Some(1));
        assert!(s.frac_blown.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn all_blown_leaves_phi_absent() {
        let recs = vec![record(&[1.0, 2.0, 4.0, 8.0], Some(2)), record(&[1.0, 3.0, 9.0, 27.0], Some(3))];
        let s = ensemble_stats(&recs, 0.5).unwrap();
        assert_eq!(s.frac_blown.last(), Some(&1.0));
        assert_eq!(s.phi.last(), Some(&None));
        assert_eq!(s.n_alive.last(), Some(&0));
    }

    #[test]
    fn ensemble_errors() {
        assert!(matches!(ensemble_stats(&[], 0.5), Err(Error::EmptyEnsemble)));
        let a = record(&[1.0, 2.0], None);
        let mut b = record(&[1.0, 2.0], None);
        b.dt = 0.2;
        assert!(matches!(ensemble_stats(&[a, b], 0.5), Err(Error::MismatchedRecords(_))));
    }

    #[test]
    fn residual_is_normalized_by_initial_energy() {
        let mut rec = record(&[2.0, 2.0], None);
        rec.rows[1].energy_residual = 0.5;
        assert_eq!(energy_residual(&rec), vec![0.0, 0.25]);
    }

    #[test]
    fn curvature_and_extrapolation() {
        // φ = 1/(1 − t)² gives ψ = 1 − t exactly (λ = ½): zero curvature, T_e = 1.
        let l2: Vec<f64> = (0..6).map(|k| 2.0 / (1.0 - 0.1 * k as f64).powi(2)).collect();
        let s = ensemble_stats(&[record(&l2, None)], 0.5).unwrap();
        let checks = psi_curvature(&s, 2.0);
        assert_eq!(checks.len(), 4);
        assert!(checks.iter().all(|c| c.second_difference.abs() < 1e-12));
        assert_relative_eq!(s.extrapolated_blowup_time().unwrap(), 1.0, max_relative = 1e-12);
    }
}
