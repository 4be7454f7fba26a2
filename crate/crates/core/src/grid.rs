//! Cell-centred discretisation of the growing domain `Λ = λ·Λ̄`.
//!
//! The grid carries `n = round(λ · points_per_unit)` cells of width
//! `dy = λ / n`. Neumann boundary conditions are imposed with mirrored ghost
//! cells, so the discrete Laplacian is symmetric, has zero row sums and
//! conserves the spatial mean under implicit heat steps.

use crate::error::{Error, Result};

/// Default spatial resolution (cells per unit length).
pub const DEFAULT_POINTS_PER_UNIT: usize = 16;

/// Default reference interval `Λ̄`.
pub const DEFAULT_UNIT_INTERVAL: (f64, f64) = (-0.5, 0.5);

/// Uniform cell-centred grid on `λ·Λ̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    lambda: f64,
    unit_interval: (f64, f64),
    points_per_unit: usize,
    n: usize,
    dy: f64,
}

impl SpatialGrid {
    /// Builds the grid for a domain of size `lambda` over `lambda·unit_interval`.
    pub fn new(lambda: f64, unit_interval: (f64, f64), points_per_unit: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 1.0) {
            return Err(Error::invalid(format!("domain size must be >= 1, got {lambda}")));
        }
        if points_per_unit < 2 {
            return Err(Error::invalid(format!(
                "points_per_unit must be >= 2, got {points_per_unit}"
            )));
        }
        let n = (lambda * points_per_unit as f64).round() as usize;
        let mut grid = Self::with_cells(lambda, unit_interval, n)?;
        grid.points_per_unit = points_per_unit;
        Ok(grid)
    }

    /// Builds a grid with an explicit cell count. The nominal
    /// `points_per_unit` is `round(n / lambda)`.
    pub fn with_cells(lambda: f64, unit_interval: (f64, f64), n: usize) -> Result<Self> {
        let (a, b) = unit_interval;
        if !(a.is_finite() && b.is_finite()) || ((b - a) - 1.0).abs() > 1e-12 || a > 0.0 || b < 0.0 {
            return Err(Error::invalid(format!(
                "unit interval must have length 1 and contain 0, got ({a}, {b})"
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("domain size must be positive, got {lambda}")));
        }
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 cells, got {n}")));
        }
        Ok(Self {
            lambda,
            unit_interval,
            points_per_unit: ((n as f64 / lambda).round() as usize).max(1),
            n,
            dy: lambda / n as f64,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn unit_interval(&self) -> (f64, f64) {
        self.unit_interval
    }

    pub fn points_per_unit(&self) -> usize {
        self.points_per_unit
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    /// Left end of the physical domain.
    pub fn left(&self) -> f64 {
        self.lambda * self.unit_interval.0
    }

    /// Centre of cell `i`.
    pub fn node(&self, i: usize) -> f64 {
        self.left() + (i as f64 + 0.5) * self.dy
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Cell index range covering the central half of the domain.
    pub fn central_half(&self) -> std::ops::Range<usize> {
        let q = self.n / 4;
        q..self.n - q
    }
}

/// A spatial field at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::DimensionMismatch { expected: grid.n(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort(format!("non-finite field value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: SpatialGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.n()] }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        Self { grid, values: grid.nodes().into_iter().map(f).collect() }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Applies the mirror-ghost Neumann stencil `(u[i-1] - 2u[i] + u[i+1]) / dy²`.
pub fn laplacian_into(u: &[f64], dy: f64, out: &mut [f64]) {
    let n = u.len();
    debug_assert_eq!(out.len(), n);
    let inv = 1.0 / (dy * dy);
    out[0] = (u[1] - u[0]) * inv;
    for i in 1..n - 1 {
        out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv;
    }
    out[n - 1] = (u[n - 2] - u[n - 1]) * inv;
}

/// Discrete Neumann Laplacian of a field.
pub fn neumann_laplacian_apply(u: &Field) -> Result<Field> {
    let mut out = vec![0.0; u.values.len()];
    laplacian_into(&u.values, u.grid.dy(), &mut out);
    Field::new(u.grid, out)
}

/// Pre-factorised tridiagonal solver for `(I - ν·dt·Δ_h) u = rhs`.
///
/// The forward-sweep multipliers of the Thomas elimination are computed once;
/// each solve is then two passes over the data.
#[derive(Debug, Clone)]
pub struct ImplicitHeatSolver {
    coupling: f64,
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl ImplicitHeatSolver {
    pub fn new(n: usize, dy: f64, dt: f64, diffusivity: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if n < 2 {
            return Err(Error::invalid("implicit solve needs at least 2 cells"));
        }
        let r = diffusivity * dt / (dy * dy);
        let diag = |i: usize| if i == 0 || i == n - 1 { 1.0 + r } else { 1.0 + 2.0 * r };
        let mut upper = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev_upper = 0.0;
        for i in 0..n {
            let pivot = diag(i) - if i == 0 { 0.0 } else { r * prev_upper };
            inv_pivot[i] = 1.0 / pivot;
            // super-diagonal entry is -r
            upper[i] = if i + 1 < n { -r * inv_pivot[i] } else { 0.0 };
            prev_upper = -upper[i];
        }
        Ok(Self { coupling: r, upper, inv_pivot })
    }

    pub fn for_grid(grid: &SpatialGrid, dt: f64, diffusivity: f64) -> Result<Self> {
        Self::new(grid.n(), grid.dy(), dt, diffusivity)
    }

    /// Solves in place; `x` holds the right-hand side on entry.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        debug_assert_eq!(n, self.upper.len());
        let r = self.coupling;
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] + r * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

/// Solves `(I - dt·Δ_h) u = rhs` on the field's grid.
pub fn implicit_heat_solve(rhs: &Field, dt: f64) -> Result<Field> {
    let solver = ImplicitHeatSolver::for_grid(&rhs.grid, dt, 1.0)?;
    let mut u = rhs.values.clone();
    solver.solve_in_place(&mut u);
    Field::new(rhs.grid, u)
}

/// Deterministic implicit-Euler heat flow `∂u = ν·Δu` up to time `t`.
pub fn heat_evolve(initial: &Field, t: f64, dt: f64, diffusivity: f64) -> Result<Field> {
    let steps = (t / dt).round() as usize;
    let solver = ImplicitHeatSolver::for_grid(&initial.grid, dt, diffusivity)?;
    let mut u = initial.values.clone();
    for _ in 0..steps {
        solver.solve_in_place(&mut u);
    }
    Field::new(initial.grid, u)
}

/// Observed space–time field `X_t(y)` on a time grid of `n_steps + 1` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePath {
    grid: SpatialGrid,
    horizon: f64,
    dt: f64,
    n_steps: usize,
    frames: Vec<f64>,
    noise: Option<Vec<f64>>,
    diffusivity: f64,
    noise_scale: f64,
}

impl SpaceTimePath {
    /// Assembles a path from row-major frames (`(n_steps + 1) × n`).
    pub fn new(
        grid: SpatialGrid,
        horizon: f64,
        dt: f64,
        frames: Vec<f64>,
        noise: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.n();
        if frames.len() % n != 0 || frames.len() < 2 * n {
            return Err(Error::Format(format!(
                "frame buffer of length {} is not a whole number (>= 2) of {n}-cell frames",
                frames.len()
            )));
        }
        let n_steps = frames.len() / n - 1;
        if !(dt > 0.0) || ((n_steps as f64 * dt - horizon) / horizon).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "n_steps * dt = {} does not match horizon {horizon}",
                n_steps as f64 * dt
            )));
        }
        if let Some(idx) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort(format!(
                "non-finite value at step {}, cell {}",
                idx / n,
                idx % n
            )));
        }
        if let Some(xi) = &noise {
            if xi.len() != n_steps * n {
                return Err(Error::DimensionMismatch { expected: n_steps * n, found: xi.len() });
            }
        }
        Ok(Self { grid, horizon, dt, n_steps, frames, noise, diffusivity: 1.0, noise_scale: 1.0 })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.grid.lambda()
    }

    /// Time horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        let n = self.grid.n();
        &self.frames[m * n..(m + 1) * n]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    /// Iterates frames `0..n_steps` paired with their successor.
    pub fn increments(&self) -> impl Iterator<Item = (usize, &[f64], &[f64])> + '_ {
        let n = self.grid.n();
        self.frames
            .chunks_exact(n)
            .zip(self.frames.chunks_exact(n).skip(1))
            .enumerate()
            .map(|(m, (a, b))| (m, a, b))
    }

    /// Recorded standardised noise `ξ`, row-major `n_steps × n`.
    pub fn noise_record(&self) -> Option<&[f64]> {
        self.noise.as_deref()
    }

    /// Diffusivity of the generator; `λ⁻²` after rescaling to the unit domain.
    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    /// Noise amplitude; `λ^{-1/2}` after rescaling to the unit domain.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn terminal(&self) -> &[f64] {
        self.frame(self.n_steps)
    }

    pub fn range(&self) -> (f64, f64) {
        self.frames
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Maps `X` on `λ·Λ̄` to `Y_t(y) = X_t(λy)` on `Λ̄`.
///
/// Values are unchanged; the grid shrinks by `λ` and the path records the
/// diffusivity `ν = λ⁻²` and noise level `σ = λ^{-1/2}` of the rescaled equation.
pub fn rescale_to_unit_domain(path: &SpaceTimePath) -> Result<SpaceTimePath> {
    let lambda = path.lambda();
    let grid = SpatialGrid::with_cells(1.0, path.grid.unit_interval(), path.grid.n())?;
    Ok(SpaceTimePath {
        grid,
        diffusivity: path.diffusivity / (lambda * lambda),
        noise_scale: path.noise_scale / lambda.sqrt(),
        ..path.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn stencil_matrix(n: usize, dy: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut out = vec![0.0; n];
            laplacian_into(&e, dy, &mut out);
            out[i]
        })
    }

    #[test]
    fn grid_examples() {
        let g = SpatialGrid::new(50.0, (-0.5, 0.5), 16).unwrap();
        assert_eq!(g.n(), 800);
        assert!((g.dy() - 1.0 / 16.0).abs() < 1e-15);

        let g = SpatialGrid::new(1.0, (-0.5, 0.5), 2).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.dy(), 0.5);

        let g = SpatialGrid::new(4.0, (0.0, 1.0), 8).unwrap();
        assert_eq!(g.n(), 32);
        assert_eq!(g.dy(), 0.125);
        assert!(g.nodes().iter().all(|&y| y > 0.0 && y < 4.0));
        assert!(((g.dy() * g.n() as f64) - g.lambda()).abs() <= 1e-12 * g.lambda());
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(SpatialGrid::new(0.5, (-0.5, 0.5), 16).is_err());
        assert!(SpatialGrid::new(2.0, (0.0, 0.5), 16).is_err());
        assert!(SpatialGrid::new(2.0, (0.5, 1.5), 16).is_err());
        assert!(SpatialGrid::new(2.0, (-0.5, 0.5), 1).is_err());
    }

    #[test]
    fn fractional_lambda_rounds_cells() {
        let g = SpatialGrid::new(12.5, (-0.5, 0.5), 16).unwrap();
        assert_eq!(g.n(), 200);
        let g = SpatialGrid::new(3.3, (-0.5, 0.5), 4).unwrap();
        assert_eq!(g.n(), 13);
        assert!((g.dy() - 3.3 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = SpatialGrid::new(3.0, (-0.5, 0.5), 8).unwrap();
        let lap = neumann_laplacian_apply(&Field::constant(g, 2.7)).unwrap();
        assert!(lap.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_of_ramp() {
        let g = SpatialGrid::new(2.0, (0.0, 1.0), 8).unwrap();
        let u = Field::from_fn(g, |y| y);
        let lap = neumann_laplacian_apply(&u).unwrap();
        let v = lap.values();
        let dy = g.dy();
        // mirrored ghosts: left row (u1 - u0)/dy², right row (u_{n-2} - u_{n-1})/dy²
        assert!((v[0] - 1.0 / dy).abs() < 1e-9);
        assert!((v[g.n() - 1] + 1.0 / dy).abs() < 1e-9);
        for &x in &v[1..g.n() - 1] {
            assert!(x.abs() < 1e-9);
        }
    }

    #[test]
    fn stencil_symmetric_zero_row_sums() {
        for n in [2usize, 3, 7, 16, 32] {
            let a = stencil_matrix(n, 0.3);
            assert_eq!(a.clone(), a.transpose());
            for i in 0..n {
                assert_eq!(a.row(i).sum(), 0.0);
            }
        }
    }

    #[test]
    fn cosine_modes_match_brute_force_eigendecomposition() {
        for n in [4usize, 9, 32] {
            let dy = 0.25;
            let a = stencil_matrix(n, dy);
            let mut brute: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().map(|v| -v).collect();
            brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let g = SpatialGrid::with_cells(n as f64 * dy, (-0.5, 0.5), n).unwrap();
            for k in 0..n {
                let theta = 4.0 / (dy * dy) * (k as f64 * std::f64::consts::PI / (2.0 * n as f64)).sin().powi(2);
                assert!((theta - brute[k]).abs() < 1e-9 * (1.0 + theta), "n={n} k={k}");
                let v: Vec<f64> = (0..n)
                    .map(|i| (k as f64 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
                    .collect();
                let lap = neumann_laplacian_apply(&Field::new(g, v.clone()).unwrap()).unwrap();
                for i in 0..n {
                    assert!((lap.values()[i] + theta * v[i]).abs() < 1e-9 * (1.0 + theta));
                }
                // implicit solve acts as 1/(1 + dt θ) on the mode
                let dt = 0.01;
                let u = implicit_heat_solve(&Field::new(g, v.clone()).unwrap(), dt).unwrap();
                for i in 0..n {
                    assert!((u.values()[i] - v[i] / (1.0 + dt * theta)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn implicit_solve_constant_and_residual() {
        let g = SpatialGrid::new(5.0, (-0.5, 0.5), 8).unwrap();
        let u = implicit_heat_solve(&Field::constant(g, -1.25), 0.3).unwrap();
        assert!(u.values().iter().all(|&v| (v + 1.25).abs() < 1e-14));

        let rhs = Field::from_fn(g, |y| (y * 1.3).sin() + 0.2 * y);
        for dt in [1e-4, 0.01, 1.0, 100.0] {
            let u = implicit_heat_solve(&rhs, dt).unwrap();
            let lap = neumann_laplacian_apply(&u).unwrap();
            let scale = rhs.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..g.n() {
                let res = u.values()[i] - dt * lap.values()[i] - rhs.values()[i];
                assert!(res.abs() <= 1e-10 * scale, "dt={dt} residual {res}");
            }
            assert!((u.mean() - rhs.mean()).abs() < 1e-12);
        }
        assert!(implicit_heat_solve(&rhs, -1.0).is_err());
    }

    #[test]
    fn implicit_solve_delta_matches_dense_lu() {
        let g = SpatialGrid::with_cells(1.0, (-0.5, 0.5), 8).unwrap();
        let dt = g.dy() * g.dy();
        let mut rhs = vec![0.0; 8];
        rhs[4] = 1.0;
        let u = implicit_heat_solve(&Field::new(g, rhs.clone()).unwrap(), dt).unwrap();
        let a = DMatrix::identity(8, 8) - stencil_matrix(8, g.dy()) * dt;
        let dense = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..8 {
            assert!((u.values()[i] - dense[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn implicit_operator_is_spd() {
        for n in [2usize, 5, 17, 64] {
            for dt in [1e-6, 1e-2, 1.0, 1e3] {
                let a = DMatrix::identity(n, n) - stencil_matrix(n, 0.1) * dt;
                assert!(a.clone().cholesky().is_some(), "n={n} dt={dt}");
            }
        }
    }

    #[test]
    fn rescaling_metadata_and_identity() {
        let g = SpatialGrid::new(1.0, (-0.5, 0.5), 4).unwrap();
        let frames: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let p = SpaceTimePath::new(g, 0.2, 0.1, frames, None).unwrap();
        let q = rescale_to_unit_domain(&p).unwrap();
        assert_eq!(q.frames(), p.frames());
        assert_eq!(q.grid(), p.grid());
        assert_eq!(q.diffusivity(), 1.0);

        let g = SpatialGrid::new(50.0, (-0.5, 0.5), 2).unwrap();
        let p = SpaceTimePath::new(g, 1.0, 0.5, vec![3.0; 300], None).unwrap();
        let q = rescale_to_unit_domain(&p).unwrap();
        assert!(q.frames().iter().all(|&v| v == 3.0));
        assert!((q.diffusivity() - 1.0 / 2500.0).abs() < 1e-18);
        assert!((q.noise_scale() - 50f64.powf(-0.5)).abs() < 1e-15);
        assert!((q.grid().dy() * 50.0 - g.dy()).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_scaling_identity() {
        let lambda = 8.0;
        let g = SpatialGrid::new(lambda, (-0.5, 0.5), 16).unwrap();
        let x0 = Field::from_fn(g, |y| (-(y * y) / 2.0).exp() + 0.3 * (y / 3.0).cos());
        let (t, dt) = (0.5, 1e-3);
        let on_lambda = heat_evolve(&x0, t, dt, 1.0).unwrap();
        let unit = SpatialGrid::with_cells(1.0, (-0.5, 0.5), g.n()).unwrap();
        let y0 = Field::new(unit, x0.values().to_vec()).unwrap();
        let s = lambda.powi(-2);
        let on_unit = heat_evolve(&y0, s * t, s * dt, 1.0).unwrap();
        let err = on_lambda
            .values()
            .iter()
            .zip(on_unit.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "sup error {err}");
    }

    #[test]
    fn path_validation() {
        let g = SpatialGrid::new(1.0, (-0.5, 0.5), 2).unwrap();
        assert!(SpaceTimePath::new(g, 1.0, 0.5, vec![0.0; 5], None).is_err());
        assert!(SpaceTimePath::new(g, 1.0, 0.3, vec![0.0; 6], None).is_err());
        assert!(SpaceTimePath::new(g, 1.0, 0.5, vec![0.0; 6], Some(vec![0.0; 3])).is_err());
        let mut bad = vec![0.0; 6];
        bad[3] = f64::NAN;
        assert!(SpaceTimePath::new(g, 1.0, 0.5, bad, None).is_err());
        let p = SpaceTimePath::new(g, 1.0, 0.5, (0..6).map(f64::from).collect(), None).unwrap();
        assert_eq!(p.n_steps(), 2);
        assert_eq!(p.terminal(), &[4.0, 5.0]);
        assert_eq!(p.increments().count(), 2);
    }
}
