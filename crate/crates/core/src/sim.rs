//! Semi-implicit Euler–Maruyama simulation of `dX = ΔX dt + f(X) dt + dW`
//! with Neumann boundary conditions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImplicitHeatSolver, SpaceTimePath, SpatialGrid, DEFAULT_POINTS_PER_UNIT, DEFAULT_UNIT_INTERVAL};
use crate::reaction::ReactionModel;
use crate::rng::{stream, CounterRng};

pub const DEFAULT_DT: f64 = 2e-4;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_PROXY_LAMBDA: f64 = 64.0;

/// Initial condition `X₀(y) = χ(y/λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    Constant { value: f64 },
    /// Samples of `χ` at equally spaced points spanning `Λ̄` (endpoints
    /// included), linearly interpolated.
    ScaledProfile { samples: Vec<f64> },
}

impl InitialCondition {
    fn field(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let n = grid.n();
        match self {
            InitialCondition::Zero => Ok(vec![0.0; n]),
            InitialCondition::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("initial value must be finite"));
                }
                Ok(vec![*value; n])
            }
            InitialCondition::ScaledProfile { samples } => {
                if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("profile needs at least two finite samples"));
                }
                let (a, b) = grid.unit_interval();
                let last = (samples.len() - 1) as f64;
                Ok((0..n)
                    .map(|i| {
                        let u = (grid.node(i) / grid.lambda() - a) / (b - a) * last;
                        let k = (u.floor() as usize).min(samples.len() - 2);
                        let w = u - k as f64;
                        samples[k] * (1.0 - w) + samples[k + 1] * w
                    })
                    .collect())
            }
        }
    }
}

/// Everything needed to generate one path.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: SpatialGrid,
    pub horizon: f64,
    pub dt: f64,
    pub initial: InitialCondition,
    pub model: ReactionModel,
    pub seed: u128,
    pub replicate_id: u32,
    pub record_noise: bool,
    /// When false the noise increments are forced to zero.
    pub noise: bool,
}

impl SimConfig {
    /// Defaults: `Λ̄ = (-1/2, 1/2)`, 16 cells per unit, `T = 1`, `dt = 2e-4`,
    /// `X₀ ≡ 0`.
    pub fn new(lambda: f64, model: ReactionModel, seed: u128) -> Result<Self> {
        Ok(Self {
            grid: SpatialGrid::new(lambda, DEFAULT_UNIT_INTERVAL, DEFAULT_POINTS_PER_UNIT)?,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            initial: InitialCondition::Zero,
            model,
            seed,
            replicate_id: 0,
            record_noise: false,
            noise: true,
        })
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("need T > 0 and dt > 0, got T={} dt={}", self.horizon, self.dt)));
        }
        let steps = (self.horizon / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::invalid(format!("dt={} does not divide T={}", self.dt, self.horizon)));
        }
        if steps > u32::MAX as f64 {
            return Err(Error::invalid("too many time steps"));
        }
        Ok(steps as usize)
    }
}

/// Receives each step `X_m → X_{m+1}` with the standardised noise `ξ_m`.
pub trait StepObserver {
    fn observe(&mut self, step: usize, prev: &[f64], next: &[f64], noise: &[f64]) -> Result<()>;
}

impl<F: FnMut(usize, &[f64], &[f64], &[f64]) -> Result<()>> StepObserver for F {
    fn observe(&mut self, step: usize, prev: &[f64], next: &[f64], noise: &[f64]) -> Result<()> {
        self(step, prev, next, noise)
    }
}

/// Runs the scheme
/// `X_{m+1} = (I - dt Δ_h)^{-1}(X_m + dt f(X_m) + √(dt/dy) ξ_m)`
/// without storing the path; returns the terminal frame.
pub fn simulate_streaming(cfg: &SimConfig, observer: &mut impl StepObserver) -> Result<Vec<f64>> {
    let n_steps = cfg.n_steps()?;
    let dt = cfg.horizon / n_steps as f64;
    let grid = &cfg.grid;
    let n = grid.n();
    let solver = ImplicitHeatSolver::for_grid(grid, dt, 1.0)?;
    let rng = CounterRng::new(cfg.seed);
    let amp = (dt / grid.dy()).sqrt();

    let mut x = cfg.initial.field(grid)?;
    let mut next = vec![0.0; n];
    let mut xi = vec![0.0; n];
    for m in 0..n_steps {
        if cfg.noise {
            rng.fill_normals(stream::SPDE_NOISE, cfg.replicate_id, m as u32, &mut xi);
        }
        for i in 0..n {
            next[i] = x[i] + dt * cfg.model.eval(x[i]) + amp * xi[i];
        }
        solver.solve_in_place(&mut next);
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort(format!(
                "non-finite state at step {} (t = {}), cell {i}",
                m + 1,
                (m + 1) as f64 * dt
            )));
        }
        observer.observe(m, &x, &next, &xi)?;
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

/// Simulates and stores the full path.
pub fn simulate(cfg: &SimConfig) -> Result<SpaceTimePath> {
    let n_steps = cfg.n_steps()?;
    let n = cfg.grid.n();
    let mut frames = Vec::with_capacity((n_steps + 1) * n);
    frames.extend(cfg.initial.field(&cfg.grid)?);
    let mut noise = cfg.record_noise.then(|| Vec::with_capacity(n_steps * n));
    simulate_streaming(cfg, &mut |_m: usize, _p: &[f64], next: &[f64], xi: &[f64]| {
        frames.extend_from_slice(next);
        if let Some(rec) = noise.as_mut() {
            rec.extend_from_slice(xi);
        }
        Ok(())
    })?;
    SpaceTimePath::new(cfg.grid, cfg.horizon, cfg.horizon / n_steps as f64, frames, noise)
}

/// Large-domain stand-in for the whole-line process `Z` started from a
/// constant; the central half of the grid supplies samples of `Z_t(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyConfig {
    pub lambda: f64,
    pub points_per_unit: usize,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_PROXY_LAMBDA,
            points_per_unit: DEFAULT_POINTS_PER_UNIT,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        }
    }
}

impl ProxyConfig {
    pub fn sim_config(&self, model: ReactionModel, chi_value: f64, seed: u128) -> Result<SimConfig> {
        if self.lambda < 16.0 {
            return Err(Error::invalid(format!("proxy lambda must be >= 16, got {}", self.lambda)));
        }
        Ok(SimConfig {
            grid: SpatialGrid::new(self.lambda, DEFAULT_UNIT_INTERVAL, self.points_per_unit)?,
            horizon: self.horizon,
            dt: self.dt,
            initial: InitialCondition::Constant { value: chi_value },
            model,
            seed,
            replicate_id: 0,
            record_noise: false,
            noise: true,
        })
    }
}

pub fn simulate_limit_proxy(
    model: ReactionModel,
    chi_value: f64,
    proxy: &ProxyConfig,
    seed: u128,
    replicate_id: u32,
) -> Result<SpaceTimePath> {
    let mut cfg = proxy.sim_config(model, chi_value, seed)?;
    cfg.replicate_id = replicate_id;
    simulate(&cfg)
}

/// Runs `f` on a dedicated pool of `threads` workers (`None`: rayon default).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Maps replicates `0..n_reps` (each with its own RNG stream) through `job`
/// in parallel; results come back ordered by replicate id.
pub fn replicate_with<R: Send>(
    cfg: &SimConfig,
    n_reps: u32,
    job: impl Fn(&SimConfig) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if n_reps == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.replicate_id = r;
            job(&c).map_err(|e| Error::Replicate { replicate: r, source: Box::new(e) })
        })
        .collect()
}

/// Simulates `n_reps` paths and reduces each one.
pub fn replicate<R: Send>(
    cfg: &SimConfig,
    n_reps: u32,
    reducer: impl Fn(u32, &SpaceTimePath) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    replicate_with(cfg, n_reps, |c| reducer(c.replicate_id, &simulate(c)?))
}
