//! Independent sample paths run in parallel with counter-based seeding.
//!
//! Path `i` is seeded with `mix64(master ⊕ (i+1)·0x9E3779B97F4A7C15)`, so any
//! subset of paths can be recomputed alone and the output never depends on
//! how many workers ran it.

use rayon::prelude::*;

use crate::diagnostics::{ensemble_stats, EnsembleStats, DEFAULT_PSI_EXPONENT};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::integrator::{run_path, PathRecord, TimeSpec};
use crate::model::ModelSpec;
use crate::noise::NoiseField;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub const DEFAULT_BOUND_MARGIN: f64 = 0.1;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed ^ (index + 1).wrapping_mul(GOLDEN_GAMMA))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub master_seed: u64,
    /// 0 picks the rayon default.
    pub max_workers: usize,
}

pub fn run_ensemble(
    model: &ModelSpec,
    grid: &Grid,
    noise: &NoiseField,
    ts: &TimeSpec,
    es: &EnsembleSpec,
) -> Result<(Vec<PathRecord>, EnsembleStats)> {
    if es.n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(es.max_workers)
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| {
        (0..es.n_paths as u64)
            .into_par_iter()
            .map(|i| run_path(model, grid, noise, ts, path_seed(es.master_seed, i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let stats = ensemble_stats(&records, DEFAULT_PSI_EXPONENT)?;
    Ok((records, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplosionSummary {
    pub n_paths: usize,
    pub n_blown: usize,
    pub t_blow_min: Option<f64>,
    pub t_blow_median: Option<f64>,
    pub t_blow_max: Option<f64>,
    pub frac_blown_final: f64,
    pub t0: Option<f64>,
    pub margin: f64,
    /// Every detected blow-up happened by `T₀·(1 + margin)`; vacuous when none did.
    pub within_bound: bool,
}

pub fn explosion_summary(stats: &EnsembleStats, t0: Option<f64>, margin: f64) -> ExplosionSummary {
    let mut blown: Vec<f64> = stats.t_blow.iter().flatten().copied().collect();
    blown.sort_by(f64::total_cmp);
    let median = match blown.len() {
        0 => None,
        n if n % 2 == 1 => Some(blown[n / 2]),
        n => Some(0.5 * (blown[n / 2 - 1] + blown[n / 2])),
    };
    let t_blow_max = blown.last().copied();
    let within_bound = match (t_blow_max, t0) {
        (None, _) => true,
        (Some(t), Some(t0)) => t <= t0 * (1.0 + margin),
        (Some(_), None) => false,
    };
    ExplosionSummary {
        n_paths: stats.n_paths,
        n_blown: blown.len(),
        t_blow_min: blown.first().copied(),
        t_blow_median: median,
        t_blow_max,
        frac_blown_final: stats.frac_blown.last().copied().unwrap_or(0.0),
        t0,
        margin,
        within_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::model::{InitialData, NoiseAmplitude, Nonlinearity};
    use crate::noise::{Kernel, NoiseSpec};

    #[test]
    fn mix64_reference_values() {
        // SplitMix64 seeded with 0: first output is mix64(γ).
        assert_eq!(mix64(GOLDEN_GAMMA), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(0), 0);
        assert_eq!(path_seed(0, 0), 0xE220_A839_7B1D_CDAF);
    }

    fn setup(sigma0: f64) -> (ModelSpec, Grid, NoiseField, TimeSpec) {
        let grid = build_grid(GridSpec::interval(0.0, 1.0, 15)).unwrap();
        let model = ModelSpec {
            c: 1.0,
            alpha: 1.0,
            nonlinearity: Nonlinearity::Monomial { amplitude: 1.0, p: 2 },
            sigma: NoiseAmplitude::ArctanDecay { sigma0, nu: 1.0 },
            initial: InitialData::SineMode { beta: 1.0 },
        };
        let noise = NoiseField::new(NoiseSpec::new(Kernel::SquaredExponential { r0: 1.0, rho: 1.0 }), &grid).unwrap();
        let mut ts = TimeSpec::with_cfl(0.5, 0.5);
        ts.record_every = 4;
        (model, grid, noise, ts)
    }

    #[test]
    fn single_path_ensemble_has_zero_ci() {
        let (m, g, n, ts) = setup(0.5);
        let es = EnsembleSpec { n_paths: 1, master_seed: 11, max_workers: 1 };
        let (records, stats) = run_ensemble(&m, &g, &n, &ts, &es).unwrap();
        for (k, row) in records[0].rows.iter().enumerate() {
            assert_eq!(stats.phi[k], Some(0.5 * row.l2_sq));
            assert_eq!(stats.phi_ci[k], Some(0.0));
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let (m, g, n, ts) = setup(0.5);
        let run = |workers| {
            let es = EnsembleSpec { n_paths: 12, master_seed: 5, max_workers: workers };
            run_ensemble(&m, &g, &n, &ts, &es).unwrap()
        };
        let (r1, s1) = run(1);
        let (r8, s8) = run(8);
        assert_eq!(r1, r8);
        assert_eq!(s1, s8);
        assert_ne!(r1[0], r1[1]);
    }

    #[test]
    fn paths_can_be_recomputed_in_isolation() {
        let (m, g, n, ts) = setup(0.5);
        let es = EnsembleSpec { n_paths: 6, master_seed: 99, max_workers: 3 };
        let (records, _) = run_ensemble(&m, &g, &n, &ts, &es).unwrap();
        let alone = run_path(&m, &g, &n, &ts, path_seed(99, 4)).unwrap();
        assert_eq!(records[4], alone);
    }

    #[test]
    fn noiseless_paths_coincide() {
        let (m, g, n, ts) = setup(0.0);
        let es = EnsembleSpec { n_paths: 4, master_seed: 1, max_workers: 0 };
        let (records, stats) = run_ensemble(&m, &g, &n, &ts, &es).unwrap();
        assert!(records.windows(2).all(|w| w[0].rows == w[1].rows));
        assert!(stats.phi_ci.iter().all(|c| *c == Some(0.0)));
    }

    #[test]
    fn zero_paths_is_an_error() {
        let (m, g, n, ts) = setup(0.0);
        let es = EnsembleSpec { n_paths: 0, master_seed: 1, max_workers: 0 };
        assert!(matches!(run_ensemble(&m, &g, &n, &ts, &es), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn summary_without_blow_up_is_vacuous() {
        let (m, g, n, ts) = setup(0.0);
        let es = EnsembleSpec { n_paths: 2, master_seed: 1, max_workers: 0 };
        let (_, stats) = run_ensemble(&m, &g, &n, &ts, &es).unwrap();
        let summary = explosion_summary(&stats, Some(1.0), DEFAULT_BOUND_MARGIN);
        assert_eq!(summary.n_blown, 0);
        assert!(summary.t_blow_median.is_none());
        assert!(summary.within_bound);
    }

    #[test]
    fn summary_median_of_even_count() {
        let (m, g, n, ts) = setup(0.0);
        let es = EnsembleSpec { n_paths: 2, master_seed: 1, max_workers: 0 };
        let (_, mut stats) = run_ensemble(&m, &g, &n, &ts, &es).unwrap();
        stats.t_blow = vec![Some(0.4), None, Some(0.2), Some(0.9), Some(0.6)];
        let s = explosion_summary(&stats, Some(0.8), 0.1);
        assert_eq!(s.n_blown, 4);
        assert_eq!(s.t_blow_min, Some(0.2));
        assert_eq!(s.t_blow_median, Some(0.5));
        assert_eq!(s.t_blow_max, Some(0.9));
        assert!(!s.within_bound);
    }
}
