//! Uniform finite-difference grids on boxes in one or two dimensions.
//!
//! Only interior nodes carry unknowns; every face of the box is a homogeneous
//! Dirichlet boundary, represented by implicit zero ghost values. Nodes are
//! enumerated in row-major order (the last axis varies fastest), and that
//! ordering is what the noise covariance matrices are indexed by.
//!
//! The discrete inner product is `ΔA · Σ a_i b_i`. For functions vanishing on
//! the boundary this is exactly the trapezoid rule on the closed box, which
//! is what [`Grid::integrate_closed`] computes for arbitrary integrands.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A point in the domain. One-dimensional grids leave the second coordinate at zero.
pub type Position = [f64; 2];

/// A per-node gradient. One-dimensional grids leave the second component at zero.
pub type Gradient = [f64; 2];

pub const MIN_NODES_PER_AXIS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn interval(lower: f64, upper: f64, nodes: usize) -> Self {
        Self {
            lower: vec![lower],
            upper: vec![upper],
            nodes_per_axis: vec![nodes],
        }
    }

    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], nodes: [usize; 2]) -> Self {
        Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            nodes_per_axis: nodes.to_vec(),
        }
    }

    /// The half-plane `{x₁ > 0}` truncated to `[0, L] × [−L, L]`.
    pub fn truncated_half_plane(length: f64, nodes: [usize; 2]) -> Self {
        Self::rectangle([0.0, -length], [length, length], nodes)
    }

    pub fn dim(&self) -> usize {
        self.nodes_per_axis.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} lower/upper bounds, got {}/{}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for axis in 0..dim {
            let (lo, hi, n) = (self.lower[axis], self.upper[axis], self.nodes_per_axis[axis]);
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has non-positive extent [{lo}, {hi}]"
                )));
            }
            if n < MIN_NODES_PER_AXIS {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {n} interior nodes, need at least {MIN_NODES_PER_AXIS}"
                )));
            }
        }
        Ok(())
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Field(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    coords: Vec<Position>,
    spacing: Vec<f64>,
    quad_weight: f64,
}

/// Enumerates interior nodes and precomputes spacings and the quadrature weight.
pub fn build_grid(spec: GridSpec) -> Result<Grid> {
    spec.validate()?;
    let spacing: Vec<f64> = (0..spec.dim())
        .map(|a| (spec.upper[a] - spec.lower[a]) / (spec.nodes_per_axis[a] + 1) as f64)
        .collect();
    let quad_weight = spacing.iter().product();

    let coords = match spec.dim() {
        1 => (1..=spec.nodes_per_axis[0])
            .map(|i| [spec.lower[0] + i as f64 * spacing[0], 0.0])
            .collect(),
        _ => {
            let (n0, n1) = (spec.nodes_per_axis[0], spec.nodes_per_axis[1]);
            let mut coords = Vec::with_capacity(n0 * n1);
            for i in 1..=n0 {
                let x0 = spec.lower[0] + i as f64 * spacing[0];
                for j in 1..=n1 {
                    coords.push([x0, spec.lower[1] + j as f64 * spacing[1]]);
                }
            }
            coords
        }
    };

    Ok(Grid {
        spec,
        coords,
        spacing,
        quad_weight,
    })
}

impl Grid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Position] {
        &self.coords
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cell length (1-D) or area (2-D).
    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.node_count())
    }

    pub fn sample(&self, f: impl Fn(Position) -> f64) -> Field {
        Field(self.coords.iter().map(|&x| f(x)).collect())
    }

    pub(crate) fn check_len(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.node_count() {
            return Err(Error::FieldLength {
                expected: self.node_count(),
                found: field.len(),
            });
        }
        Ok(())
    }

    fn check_finite(&self, field: &[f64], what: &'static str) -> Result<()> {
        self.check_len(field)?;
        if field.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Axis strides in the flat node index and per-axis node counts.
    fn layout(&self) -> ([usize; 2], [usize; 2]) {
        match self.dim() {
            1 => ([1, 0], [self.spec.nodes_per_axis[0], 0]),
            _ => {
                let (n0, n1) = (self.spec.nodes_per_axis[0], self.spec.nodes_per_axis[1]);
                ([n1, 1], [n0, n1])
            }
        }
    }

    /// Position of node `idx` along `axis` (0-based interior index).
    fn axis_index(&self, idx: usize, axis: usize) -> usize {
        let (strides, counts) = self.layout();
        (idx / strides[axis]) % counts[axis]
    }

    pub fn inner_product(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_len(a)?;
        self.check_len(b)?;
        Ok(self.inner_product_unchecked(a, b))
    }

    pub(crate) fn inner_product_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.quad_weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm_sq(&self, a: &[f64]) -> Result<f64> {
        self.inner_product(a, a)
    }

    /// ∇²u with the 3-point (1-D) or 5-point (2-D) stencil and zero ghosts.
    pub fn laplacian(&self, u: &[f64]) -> Result<Field> {
        self.check_finite(u, "laplacian input")?;
        let mut out = self.zeros();
        self.laplacian_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let (strides, counts) = self.layout();
        out.iter_mut().for_each(|x| *x = 0.0);
        for axis in 0..self.dim() {
            let (stride, n) = (strides[axis], counts[axis]);
            let inv_h2 = 1.0 / (self.spacing[axis] * self.spacing[axis]);
            for (idx, o) in out.iter_mut().enumerate() {
                let k = (idx / stride) % n;
                let left = if k > 0 { u[idx - stride] } else { 0.0 };
                let right = if k + 1 < n { u[idx + stride] } else { 0.0 };
                *o += (left - 2.0 * u[idx] + right) * inv_h2;
            }
        }
    }

    /// ‖Du‖² summed over every grid edge, including the edges that touch the
    /// ghost nodes on both ends of each grid line. With that edge set the
    /// discrete Green identity `(−∇²u, u) = ‖Du‖²` holds exactly.
    pub fn gradient_sq_norm(&self, u: &[f64]) -> Result<f64> {
        self.check_finite(u, "gradient input")?;
        Ok(self.gradient_sq_norm_unchecked(u))
    }

    pub(crate) fn gradient_sq_norm_unchecked(&self, u: &[f64]) -> f64 {
        let (strides, counts) = self.layout();
        let mut total = 0.0;
        for axis in 0..self.dim() {
            let (stride, n) = (strides[axis], counts[axis]);
            let h = self.spacing[axis];
            let mut sum = 0.0;
            for (idx, &ui) in u.iter().enumerate() {
                let k = (idx / stride) % n;
                let right = if k + 1 < n { u[idx + stride] } else { 0.0 };
                sum += (right - ui) * (right - ui);
                if k == 0 {
                    sum += ui * ui;
                }
            }
            total += sum / (h * h);
        }
        self.quad_weight * total
    }

    /// Forward-difference gradient at every node, with zero ghosts past the upper faces.
    ///
    /// `ΔA·Σ|grad_i|²` misses only the lower-face edges, so
    /// `gradient_sq_norm(u) = ΔA·Σ|grad_i|² + lower_face_sq_norm(u)`.
    pub fn pointwise_gradient(&self, u: &[f64]) -> Result<Vec<Gradient>> {
        self.check_finite(u, "gradient input")?;
        let mut out = vec![[0.0; 2]; self.node_count()];
        self.pointwise_gradient_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn pointwise_gradient_into(&self, u: &[f64], out: &mut [Gradient]) {
        let (strides, counts) = self.layout();
        for g in out.iter_mut() {
            *g = [0.0; 2];
        }
        for axis in 0..self.dim() {
            let (stride, n) = (strides[axis], counts[axis]);
            let inv_h = 1.0 / self.spacing[axis];
            for (idx, g) in out.iter_mut().enumerate() {
                let k = (idx / stride) % n;
                let right = if k + 1 < n { u[idx + stride] } else { 0.0 };
                g[axis] = (right - u[idx]) * inv_h;
            }
        }
    }

    /// The lower-face edge contributions to ‖Du‖² that no node's forward difference covers.
    pub fn lower_face_sq_norm(&self, u: &[f64]) -> Result<f64> {
        self.check_finite(u, "gradient input")?;
        let mut total = 0.0;
        for axis in 0..self.dim() {
            let h = self.spacing[axis];
            let sum: f64 = u
                .iter()
                .enumerate()
                .filter(|(idx, _)| self.axis_index(*idx, axis) == 0)
                .map(|(_, x)| x * x)
                .sum();
            total += sum / (h * h);
        }
        Ok(self.quad_weight * total)
    }

    /// Trapezoid rule for `∫ f dx` over the closed box, using the grid's
    /// lattice including boundary points (half weight on each face).
    ///
    /// When `f` vanishes on the boundary this equals `ΔA·Σ_interior f(x_i)`.
    pub fn integrate_closed(&self, f: impl Fn(Position) -> f64) -> f64 {
        let axis_points = |axis: usize| -> Vec<(f64, f64)> {
            let n = self.spec.nodes_per_axis[axis];
            let h = self.spacing[axis];
            (0..=n + 1)
                .map(|k| {
                    let w = if k == 0 || k == n + 1 { 0.5 } else { 1.0 };
                    (self.spec.lower[axis] + k as f64 * h, w)
                })
                .collect()
        };
        match self.dim() {
            1 => {
                let xs = axis_points(0);
                self.quad_weight * xs.iter().map(|&(x, w)| w * f([x, 0.0])).sum::<f64>()
            }
            _ => {
                let (xs, ys) = (axis_points(0), axis_points(1));
                let mut sum = 0.0;
                for &(x, wx) in &xs {
                    let mut row = 0.0;
                    for &(y, wy) in &ys {
                        row += wy * f([x, y]);
                    }
                    sum += wx * row;
                }
                self.quad_weight * sum
            }
        }
    }
}
