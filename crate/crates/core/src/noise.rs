//! Spatially correlated Wiener noise.
//!
//! The node covariance `R_ij = r(x_i, x_j)` is projected onto the PSD cone by
//! eigenvalue clipping and factored as `B = V·√Λ⁺`, so that increments
//! `ΔW = √dt · B z` have covariance `dt · R⁺`. The distortion introduced by
//! clipping is reported as `clipped_mass` rather than hidden.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Field, Gradient, Grid, Position};
use crate::model::{ModelSpec, NoiseAmplitude};

pub const DEFAULT_PSD_CLIP_TOL: f64 = 1e-8;

/// Clipped mass above which a factor is flagged as materially distorted.
pub const CLIPPED_MASS_FLAG: f64 = 0.05;

/// Largest noise grid the dense eigendecomposition is attempted on.
pub const MAX_DENSE_NOISE_NODES: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Zero,
    /// `r(x, y) = r0 · exp(−rho · x·y)`.
    DotProduct { r0: f64, rho: f64 },
    /// `r(x, y) = r0 · exp(−rho · |x − y|²)`.
    SquaredExponential { r0: f64, rho: f64 },
}

impl Kernel {
    pub fn eval(&self, x: Position, y: Position) -> f64 {
        match *self {
            Kernel::Zero => 0.0,
            Kernel::DotProduct { r0, rho } => r0 * (-rho * (x[0] * y[0] + x[1] * y[1])).exp(),
            Kernel::SquaredExponential { r0, rho } => {
                let (d0, d1) = (x[0] - y[0], x[1] - y[1]);
                r0 * (-rho * (d0 * d0 + d1 * d1)).exp()
            }
        }
    }

    pub fn diagonal(&self, x: Position) -> f64 {
        self.eval(x, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kernel: Kernel,
    pub psd_clip_tol: f64,
    /// Noise is sampled on every `coarse_stride`-th node per axis; 1 means the solution grid.
    pub coarse_stride: usize,
}

impl NoiseSpec {
    pub fn new(kernel: Kernel) -> Self {
        Self {
            kernel,
            psd_clip_tol: DEFAULT_PSD_CLIP_TOL,
            coarse_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kernel {
            Kernel::Zero => {}
            Kernel::DotProduct { r0, rho } | Kernel::SquaredExponential { r0, rho } => {
                if !(r0.is_finite() && r0 > 0.0 && rho.is_finite() && rho > 0.0) {
                    return Err(Error::InvalidNoise(format!(
                        "kernel needs r0 > 0 and rho > 0, got r0 = {r0}, rho = {rho}"
                    )));
                }
            }
        }
        if !(self.psd_clip_tol.is_finite() && self.psd_clip_tol >= 0.0) {
            return Err(Error::InvalidNoise(format!(
                "psd_clip_tol must be non-negative, got {}",
                self.psd_clip_tol
            )));
        }
        if self.coarse_stride == 0 {
            return Err(Error::InvalidNoise("coarse stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// `R_ij = r(x_i, x_j)` over the grid's interior nodes in row-major order.
pub fn covariance_matrix(spec: &NoiseSpec, grid: &Grid) -> DMatrix<f64> {
    covariance_at(&spec.kernel, grid.coords())
}

fn covariance_at(kernel: &Kernel, points: &[Position]) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let value = kernel.eval(points[i], points[j]);
            r[(i, j)] = value;
            r[(j, i)] = value;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFactor {
    /// `n × rank` with `B·Bᵀ = R⁺`.
    factor: DMatrix<f64>,
    clipped_mass: f64,
    node_count: usize,
}

impl NoiseFactor {
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    pub fn flagged(&self) -> bool {
        self.clipped_mass > CLIPPED_MASS_FLAG
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// The repaired covariance `R⁺ = B·Bᵀ`.
    pub fn repaired(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Eigenvalue clipping followed by a spectral square root.
///
/// Negative eigenvalues no larger than `tol · Σ|λ|` in magnitude are treated
/// as round-off: they are zeroed but not counted in `clipped_mass`.
pub fn psd_repair_and_factor(r: &DMatrix<f64>, tol: f64) -> Result<NoiseFactor> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::InvalidNoise(format!("covariance is {}×{}", n, r.ncols())));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("covariance matrix"));
    }
    let scale = r.amax();
    if scale == 0.0 {
        return Ok(NoiseFactor {
            factor: DMatrix::zeros(n, 0),
            clipped_mass: 0.0,
            node_count: n,
        });
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let gap = (r[(i, j)] - r[(j, i)]).abs();
            if gap > 1e-12 * scale {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
    }

    // Work on R / max|R| so that kernels with huge entries stay in range.
    let scaled = r / scale;
    let eigen = scaled.symmetric_eigen();
    let abs_sum: f64 = eigen.eigenvalues.iter().map(|l| l.abs()).sum();
    let trace: f64 = eigen.eigenvalues.iter().sum();
    let noise_floor = tol * abs_sum;
    let clipped: f64 = eigen
        .eigenvalues
        .iter()
        .filter(|&&l| l < -noise_floor)
        .fold(0.0, |acc, l| acc - l);
    let denom = if trace > 0.0 { trace } else { abs_sum };
    let clipped_mass = clipped / denom;

    let kept: Vec<usize> = (0..n).filter(|&k| eigen.eigenvalues[k] > 0.0).collect();
    let mut factor = DMatrix::zeros(n, kept.len());
    for (col, &k) in kept.iter().enumerate() {
        let s = (eigen.eigenvalues[k] * scale).sqrt();
        for i in 0..n {
            factor[(i, col)] = eigen.eigenvectors[(i, k)] * s;
        }
    }
    Ok(NoiseFactor {
        factor,
        clipped_mass,
        node_count: n,
    })
}

/// `√dt · B z` with `z` standard normal; `dt = 0` yields zeros and consumes no draws.
pub fn sample_increment<R: Rng + ?Sized>(nf: &NoiseFactor, dt: f64, rng: &mut R) -> Field {
    let mut z = vec![0.0; nf.rank()];
    let mut out = Field::zeros(nf.node_count());
    sample_into(nf, dt, rng, &mut z, &mut out);
    out
}

fn sample_into<R: Rng + ?Sized>(nf: &NoiseFactor, dt: f64, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if dt == 0.0 || nf.rank() == 0 {
        return;
    }
    let root_dt = dt.sqrt();
    for zk in z.iter_mut() {
        *zk = rng.sample::<f64, _>(StandardNormal) * root_dt;
    }
    for (col, &zk) in nf.factor.column_iter().zip(z.iter()) {
        for (o, b) in out.iter_mut().zip(col.iter()) {
            *o += b * zk;
        }
    }
}

/// A factored noise source attached to a solution grid, possibly sampled on a
/// coarser sub-lattice and injected block-wise.
#[derive(Debug, Clone)]
pub struct NoiseField {
    spec: NoiseSpec,
    factor: NoiseFactor,
    /// Solution node → noise node.
    injection: Vec<usize>,
    /// `r(x_i, x_i)` at the solution nodes.
    diagonal: Vec<f64>,
}

impl NoiseField {
    pub fn new(spec: NoiseSpec, grid: &Grid) -> Result<Self> {
        spec.validate()?;
        let (points, injection) = coarse_lattice(grid, spec.coarse_stride);
        if points.len() > MAX_DENSE_NOISE_NODES && spec.kernel != Kernel::Zero {
            return Err(Error::InvalidNoise(format!(
                "noise grid has {} nodes, above the dense limit of {MAX_DENSE_NOISE_NODES}; \
                 increase the coarse stride",
                points.len()
            )));
        }
        let factor = if spec.kernel == Kernel::Zero {
            NoiseFactor {
                factor: DMatrix::zeros(points.len(), 0),
                clipped_mass: 0.0,
                node_count: points.len(),
            }
        } else {
            psd_repair_and_factor(&covariance_at(&spec.kernel, &points), spec.psd_clip_tol)?
        };
        let diagonal = grid.coords().iter().map(|&x| spec.kernel.diagonal(x)).collect();
        Ok(Self {
            spec,
            factor,
            injection,
            diagonal,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn factor(&self) -> &NoiseFactor {
        &self.factor
    }

    pub fn noise_node_count(&self) -> usize {
        self.factor.node_count()
    }

    pub fn is_coarse(&self) -> bool {
        self.spec.coarse_stride > 1
    }

    pub fn is_silent(&self) -> bool {
        self.factor.rank() == 0
    }

    pub fn scratch(&self) -> NoiseScratch {
        NoiseScratch {
            z: vec![0.0; self.factor.rank()],
            coarse: vec![0.0; self.factor.node_count()],
        }
    }

    /// Draws ΔW on the solution grid.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        dt: f64,
        rng: &mut R,
        scratch: &mut NoiseScratch,
        out: &mut [f64],
    ) {
        sample_into(&self.factor, dt, rng, &mut scratch.z, &mut scratch.coarse);
        for (o, &k) in out.iter_mut().zip(&self.injection) {
            *o = scratch.coarse[k];
        }
    }

    pub(crate) fn trace_with_sigma(&self, grid: &Grid, sigma: &[f64]) -> f64 {
        grid.quad_weight()
            * self
                .diagonal
                .iter()
                .zip(sigma)
                .map(|(r, s)| r * s * s)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct NoiseScratch {
    z: Vec<f64>,
    coarse: Vec<f64>,
}

/// Every `stride`-th node per axis, grouped in blocks; each solution node is
/// assigned to the centre node of its block.
fn coarse_lattice(grid: &Grid, stride: usize) -> (Vec<Position>, Vec<usize>) {
    if stride <= 1 {
        return (grid.coords().to_vec(), (0..grid.node_count()).collect());
    }
    let counts = &grid.spec().nodes_per_axis;
    let blocks = |n: usize| -> Vec<usize> {
        // Representative interior index of each block of `stride` nodes.
        (0..n.div_ceil(stride))
            .map(|b| {
                let start = b * stride;
                let end = (start + stride).min(n);
                start + (end - start - 1) / 2
            })
            .collect()
    };
    match grid.dim() {
        1 => {
            let reps = blocks(counts[0]);
            let points = reps.iter().map(|&k| grid.coords()[k]).collect();
            let injection = (0..counts[0]).map(|k| k / stride).collect();
            (points, injection)
        }
        _ => {
            let (n0, n1) = (counts[0], counts[1]);
            let (r0, r1) = (blocks(n0), blocks(n1));
            let mut points = Vec::with_capacity(r0.len() * r1.len());
            for &i in &r0 {
                for &j in &r1 {
                    points.push(grid.coords()[i * n1 + j]);
                }
            }
            let mut injection = Vec::with_capacity(n0 * n1);
            for i in 0..n0 {
                for j in 0..n1 {
                    injection.push((i / stride) * r1.len() + j / stride);
                }
            }
            (points, injection)
        }
    }
}

/// `Tr Q_t(u) = ΔA · Σ r(x_i, x_i) σ²(u_i, Du_i, x_i, t)`.
pub fn trace_q(
    m: &ModelSpec,
    u: &[f64],
    grads: &[Gradient],
    t: f64,
    grid: &Grid,
    ns: &NoiseSpec,
) -> Result<f64> {
    grid.check_len(u)?;
    if grads.len() != u.len() {
        return Err(Error::FieldLength {
            expected: u.len(),
            found: grads.len(),
        });
    }
    if u.iter().any(|x| !x.is_finite()) || grads.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("trace term input"));
    }
    let sum: f64 = grid
        .coords()
        .iter()
        .zip(u)
        .zip(grads)
        .map(|((&x, &ui), &gi)| {
            let s = m.sigma_eval(ui, gi, x, t);
            ns.kernel.diagonal(x) * s * s
        })
        .sum();
    Ok(grid.quad_weight() * sum)
}

/// The (A3) integral `∫₀^∞ ∫_D r(x, x) q(x, t) dx dt`, by both available routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    /// Exact value on the untruncated half-plane, when the kernel admits one.
    pub closed_form: Option<f64>,
    /// Trapezoid rule over the closed computational box.
    pub quadrature: f64,
}

impl NoiseBudget {
    pub fn value(&self) -> f64 {
        self.closed_form.unwrap_or(self.quadrature)
    }
}

/// `r0 σ0² π³ / (16 ρ ν)`: the dot-product kernel on the half-plane.
pub fn half_plane_noise_budget(r0: f64, sigma0: f64, rho: f64, nu: f64) -> f64 {
    r0 * sigma0 * sigma0 * PI.powi(3) / (16.0 * rho * nu)
}

fn is_half_plane_box(grid: &Grid) -> bool {
    let spec = grid.spec();
    grid.dim() == 2 && spec.lower[0] == 0.0 && spec.lower[1] == -spec.upper[1]
}

pub fn noise_budget(m: &ModelSpec, ns: &NoiseSpec, grid: &Grid) -> Result<NoiseBudget> {
    let (sigma0, nu) = match m.sigma {
        NoiseAmplitude::Zero => {
            return Ok(NoiseBudget {
                closed_form: Some(0.0),
                quadrature: 0.0,
            })
        }
        NoiseAmplitude::ArctanDecay { sigma0, nu } => (sigma0, nu),
    };
    if !(nu > 0.0) {
        return Err(Error::NonDecayingNoise);
    }
    // The envelope is (σ0π/2)² e^{−2νt}; its time integral is exact.
    let time_factor = (sigma0 * FRAC_PI_2).powi(2) / (2.0 * nu);
    let quadrature = time_factor * grid.integrate_closed(|x| ns.kernel.diagonal(x));
    let closed_form = match ns.kernel {
        Kernel::Zero => Some(0.0),
        Kernel::DotProduct { r0, rho } if is_half_plane_box(grid) => {
            Some(half_plane_noise_budget(r0, sigma0, rho, nu))
        }
        _ if sigma0 == 0.0 => Some(0.0),
        _ => None,
    };
    Ok(NoiseBudget {
        closed_form,
        quadrature,
    })
}
