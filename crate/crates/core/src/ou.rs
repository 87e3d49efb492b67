//! Diagonal Ornstein–Uhlenbeck fields `X(t) = sum_j X^j(t) e_j` with
//!
//! ```text
//! dX^j = -lambda_j X^j dt + beta_j dL^j,    X^j(0) = 0,
//! ```
//!
//! the `L^j` being independent symmetric stable Lévy processes.
//!
//! Two simulation modes are provided. *Marginal-exact* draws each grid value
//! from the exact transition law of the stochastic convolution. *Jump-resolved*
//! splits the driver at `r_resolve`: jumps at least that large are placed
//! exactly and recorded in a ledger, the remainder is replaced by a Gaussian
//! with the same second moment pushed through the OU kernel.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::levy::{
    sample_big_jump, sample_poisson_times, sample_stable, sample_standard_stable,
    small_jump_sigma2, stable_tail_mass, StableLaw,
};
use crate::rng::{Lane, StreamKey};

/// Largest `rows * components` matrix [`simulate_field`] will allocate by
/// default.
pub const DEFAULT_CELL_CAP: usize = 20_000_000;

/// Eigenvalues, noise weights and the common driver law, truncated at
/// `n()` components. Index 0 is the first mode (`lambda_1` in the usual
/// 1-based notation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    lambda: Vec<f64>,
    beta: Vec<f64>,
    law: StableLaw,
}

impl SpectralModel {
    pub fn new(lambda: Vec<f64>, beta: Vec<f64>, law: StableLaw) -> Result<Self> {
        if lambda.is_empty() {
            return Err(param("lambda", "at least one component is required"));
        }
        if lambda.len() != beta.len() {
            return Err(param(
                "beta",
                format!("length {} differs from lambda length {}", beta.len(), lambda.len()),
            ));
        }
        if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(param("lambda", "eigenvalues must be positive and finite"));
        }
        if lambda.windows(2).any(|w| w[1] < w[0]) {
            return Err(param("lambda", "eigenvalues must be nondecreasing"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(param("beta", "weights must be positive and finite"));
        }
        Ok(Self { lambda, beta, law })
    }

    /// Dirichlet Laplacian on `(0, pi)`: `lambda_j = j^2`, `beta_j = 1`.
    pub fn heat(n: usize, law: StableLaw) -> Result<Self> {
        Self::new(heat_eigenvalues(n), vec![1.0; n], law)
    }

    /// Same eigenvalues and law, with every weight set to `beta`.
    pub fn with_uniform_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.lambda.clone(), vec![beta; self.n()], self.law)
    }

    pub fn with_law(&self, law: StableLaw) -> Self {
        Self { law, ..self.clone() }
    }

    /// First `n` components of this model.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n() {
            return Err(param("n", format!("must lie in 1..={}, got {n}", self.n())));
        }
        Self::new(self.lambda[..n].to_vec(), self.beta[..n].to_vec(), self.law)
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn law(&self) -> &StableLaw {
        &self.law
    }

    /// True when `lambda_j = j^2` exactly for every component.
    pub fn is_heat(&self) -> bool {
        is_heat_sequence(&self.lambda)
    }
}

pub fn heat_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (j * j) as f64).collect()
}

pub(crate) fn is_heat_sequence(lambda: &[f64]) -> bool {
    lambda
        .iter()
        .enumerate()
        .all(|(i, &l)| l == ((i + 1) * (i + 1)) as f64)
}

/// `(1 - exp(-x)) / x` with its limit 1 at `x = 0`.
#[inline]
fn one_minus_exp_over(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `int_0^dt exp(-2 lambda s) ds`.
#[inline]
pub fn ou_variance_factor(lambda: f64, dt: f64) -> f64 {
    dt * one_minus_exp_over(2.0 * lambda * dt)
}

/// Scale of `int_0^dt exp(-lambda (dt - s)) dL(s)` under the crate's CF
/// convention: `scale * ((1 - exp(-alpha lambda dt)) / (alpha lambda))^(1/alpha)`.
pub fn conv_scale(lambda: f64, law: &StableLaw, dt: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(param("lambda", format!("must be nonnegative, got {lambda}")));
    }
    if !(dt > 0.0) {
        return Err(param("dt", format!("must be positive, got {dt}")));
    }
    let a = law.alpha();
    Ok(law.scale() * (dt * one_minus_exp_over(a * lambda * dt)).powf(1.0 / a))
}

/// Precomputed exact transition of one component over a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct ExactStep {
    decay: f64,
    /// `beta_j * conv_scale(lambda_j, law, dt)`
    noise_scale: f64,
    alpha: f64,
}

impl ExactStep {
    pub fn new(lambda: f64, beta: f64, law: &StableLaw, dt: f64) -> Result<Self> {
        Ok(Self {
            decay: (-lambda * dt).exp(),
            noise_scale: beta * conv_scale(lambda, law, dt)?,
            alpha: law.alpha(),
        })
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        self.decay * x + self.noise_scale * sample_standard_stable(self.alpha, rng)
    }
}

/// `exp(-lambda_j dt) x + beta_j xi` with `xi ~ stable(alpha, conv_scale(lambda_j, dt))`.
pub fn ou_exact_update<R: Rng + ?Sized>(
    x: f64,
    j: usize,
    model: &SpectralModel,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if j >= model.n() {
        return Err(param("j", format!("component {j} out of range 0..{}", model.n())));
    }
    Ok(ExactStep::new(model.lambda[j], model.beta[j], &model.law, dt)?.step(x, rng))
}

/// One big jump of the driver, as seen by component `component`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub component: usize,
    pub time: f64,
    /// Jump of `L^component`, before the `beta` weighting.
    pub size: f64,
    /// `X^component(time-)`; the path value at `time` is
    /// `left_limit + beta * size`.
    pub left_limit: f64,
}

/// Uniform grid on `[0, horizon]` with step `h`; the last cell is shortened
/// when `h` does not divide `horizon`.
pub fn uniform_grid(horizon: f64, h: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(param("horizon", format!("must be positive, got {horizon}")));
    }
    if !(h > 0.0) {
        return Err(param("grid_step", format!("must be positive, got {h}")));
    }
    let steps = ((horizon / h) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..steps).map(|i| i as f64 * h).collect();
    grid.push(horizon);
    Ok(grid)
}

/// Sorted union of a grid and extra time points (exact duplicates dropped).
pub fn merge_times(grid: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = grid.iter().chain(extra).copied().collect();
    all.sort_unstable_by(f64::total_cmp);
    all.dedup();
    all
}

/// Big jumps of one driver on `(0, horizon)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpSet {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl JumpSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Compound-Poisson part of the driver: jumps with `|x| >= r_resolve`.
pub fn draw_big_jumps<R: Rng + ?Sized>(
    law: &StableLaw,
    r_resolve: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpSet> {
    let rate = stable_tail_mass(law, r_resolve)?;
    if rate.no_jump_part {
        return Err(Error::NoJumpPart(
            "jump-resolved simulation needs alpha < 2; use the marginal-exact mode".into(),
        ));
    }
    let times = sample_poisson_times(rate.rate, horizon, rng)?;
    let sizes = times
        .iter()
        .map(|_| sample_big_jump(law, r_resolve, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(JumpSet { times, sizes })
}

/// Evolves one component over `grid` (starting at `grid[0]` from 0).
///
/// Every jump time must be a point of `grid`. Between grid points the state
/// decays and receives the Gaussian small-jump surrogate with variance
/// `beta^2 residual_sigma2 (1 - exp(-2 lambda dt)) / (2 lambda)`; at a jump
/// time the value becomes `left + beta * size`. Returns the grid values and
/// the left limit at each jump.
pub fn evolve_component<R: Rng + ?Sized>(
    lambda: f64,
    beta: f64,
    grid: &[f64],
    jumps: &JumpSet,
    residual_sigma2: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut values = Vec::with_capacity(grid.len());
    let mut left_limits = Vec::with_capacity(jumps.len());
    let mut x = 0.0;
    values.push(x);
    let mut next_jump = 0;
    if jumps.times.first().is_some_and(|&t| t <= grid[0]) {
        return Err(param("jumps", "jump times must lie after the first grid point"));
    }
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        x *= (-lambda * dt).exp();
        if residual_sigma2 > 0.0 {
            let sd = beta * (residual_sigma2 * ou_variance_factor(lambda, dt)).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            x += sd * z;
        }
        if next_jump < jumps.len() && jumps.times[next_jump] <= w[1] {
            if jumps.times[next_jump] != w[1] {
                return Err(param(
                    "grid",
                    format!("jump time {} is not a grid point", jumps.times[next_jump]),
                ));
            }
            left_limits.push(x);
            x += beta * jumps.sizes[next_jump];
            next_jump += 1;
        }
        values.push(x);
    }
    if next_jump != jumps.len() {
        return Err(param("jumps", "jump times beyond the end of the grid"));
    }
    Ok((values, left_limits))
}

/// Single-component jump-resolved path on the uniform grid with the
/// component's own jump times inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
}

pub fn simulate_component_jump_resolved(
    j: usize,
    model: &SpectralModel,
    horizon: f64,
    r_resolve: f64,
    h: f64,
    key: StreamKey,
) -> Result<ComponentPath> {
    if j >= model.n() {
        return Err(param("j", format!("component {j} out of range 0..{}", model.n())));
    }
    let law = model.law();
    let key = key.with_component(j as u64);
    let jumps = draw_big_jumps(law, r_resolve, horizon, &mut key.rng(Lane::BigJumps))?;
    let sigma2 = small_jump_sigma2(law, r_resolve)?;
    let times = merge_times(&uniform_grid(horizon, h)?, &jumps.times);
    let (values, left) = evolve_component(
        model.lambda[j],
        model.beta[j],
        &times,
        &jumps,
        sigma2,
        &mut key.rng(Lane::Residual),
    )?;
    let jumps = ledger(j, &jumps, &left);
    Ok(ComponentPath {
        times,
        values,
        jumps,
    })
}

fn ledger(component: usize, jumps: &JumpSet, left: &[f64]) -> Vec<JumpEvent> {
    jumps
        .times
        .iter()
        .zip(&jumps.sizes)
        .zip(left)
        .map(|((&time, &size), &left_limit)| JumpEvent {
            component,
            time,
            size,
            left_limit,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SimulationMode {
    MarginalExact,
    JumpResolved { r_resolve: f64 },
}

/// Time grid, coefficient matrix and jump ledger of a simulated field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    times: Vec<f64>,
    /// Row-major `times.len() x n`.
    coeffs: Vec<f64>,
    n: usize,
    jumps: Vec<JumpEvent>,
    resolve_threshold: Option<f64>,
    beta: Vec<f64>,
}

impl FieldPath {
    /// Assembles a path from per-component columns.
    pub fn from_columns(
        times: Vec<f64>,
        columns: &[Vec<f64>],
        mut jumps: Vec<JumpEvent>,
        resolve_threshold: Option<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let n = columns.len();
        if n == 0 || columns.iter().any(|c| c.len() != times.len()) {
            return Err(param("columns", "every column must match the time grid"));
        }
        if beta.len() != n {
            return Err(param("beta", "one weight per column is required"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("times", "grid must be strictly increasing"));
        }
        let mut coeffs = vec![0.0; times.len() * n];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                coeffs[i * n + j] = v;
            }
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.component.cmp(&b.component)));
        Ok(Self {
            times,
            coeffs,
            n,
            jumps,
            resolve_threshold,
            beta,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.n..(i + 1) * self.n]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * self.n + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.value(i, j)).collect()
    }

    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    pub fn resolve_threshold(&self) -> Option<f64> {
        self.resolve_threshold
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Index of the grid point equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok()
    }
}

/// Simulates all components of `model` on `[0, horizon]`.
///
/// Components use independent streams derived from `key`; the work is
/// spread over the current rayon pool and the result does not depend on its
/// size. In jump-resolved mode every component is evaluated on the union of
/// the uniform grid and all ledger times.
pub fn simulate_field(
    model: &SpectralModel,
    horizon: f64,
    h: f64,
    mode: SimulationMode,
    key: StreamKey,
    cell_cap: usize,
) -> Result<FieldPath> {
    let base = uniform_grid(horizon, h)?;
    let n = model.n();
    let law = model.law();
    let guard = |rows: usize| -> Result<()> {
        match rows.checked_mul(n) {
            Some(cells) if cells <= cell_cap => Ok(()),
            _ => Err(Error::ResourceCap(format!(
                "{rows} time points x {n} components exceeds the cap of {cell_cap} cells; \
                 reduce N or the grid, or use a streaming scan (oscillation / threshold-scan) \
                 that never materializes the full matrix"
            ))),
        }
    };
    match mode {
        SimulationMode::MarginalExact => {
            guard(base.len())?;
            let columns = (0..n)
                .into_par_iter()
                .map(|j| {
                    let mut rng = key.with_component(j as u64).rng(Lane::Marginal);
                    let mut col = Vec::with_capacity(base.len());
                    let mut x = 0.0;
                    col.push(x);
                    for w in base.windows(2) {
                        let step = ExactStep::new(model.lambda[j], model.beta[j], law, w[1] - w[0])?;
                        x = step.step(x, &mut rng);
                        col.push(x);
                    }
                    Ok(col)
                })
                .collect::<Result<Vec<_>>>()?;
            FieldPath::from_columns(base, &columns, Vec::new(), None, model.beta.clone())
        }
        SimulationMode::JumpResolved { r_resolve } => {
            let sigma2 = small_jump_sigma2(law, r_resolve)?;
            guard(base.len())?;
            let jump_sets = (0..n)
                .into_par_iter()
                .map(|j| {
                    draw_big_jumps(
                        law,
                        r_resolve,
                        horizon,
                        &mut key.with_component(j as u64).rng(Lane::BigJumps),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let all_times: Vec<f64> = jump_sets.iter().flat_map(|s| s.times.iter().copied()).collect();
            let times = merge_times(&base, &all_times);
            guard(times.len())?;
            let evolved = (0..n)
                .into_par_iter()
                .map(|j| {
                    evolve_component(
                        model.lambda[j],
                        model.beta[j],
                        &times,
                        &jump_sets[j],
                        sigma2,
                        &mut key.with_component(j as u64).rng(Lane::Residual),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut jumps = Vec::with_capacity(all_times.len());
            let mut columns = Vec::with_capacity(n);
            for (j, (col, left)) in evolved.into_iter().enumerate() {
                jumps.extend(ledger(j, &jump_sets[j], &left));
                columns.push(col);
            }
            FieldPath::from_columns(times, &columns, jumps, Some(r_resolve), model.beta.clone())
        }
    }
}

/// Driver coefficients `L^j(t)`, `j < N`, before the `beta` weighting.
pub fn simulate_noise_partial_sum(model: &SpectralModel, t: f64, key: StreamKey) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(param("t", format!("must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(vec![0.0; model.n()]);
    }
    let law = model.law();
    let scaled = law.with_scale(law.scale() * t.powf(1.0 / law.alpha()))?;
    Ok((0..model.n())
        .map(|j| sample_stable(&scaled, &mut key.with_component(j as u64).rng(Lane::Noise)))
        .collect())
}

/// `u(xi) = sum_j coeffs_j sqrt(2/pi) sin(j xi)` at each `xi` in `(0, pi)`.
pub fn evaluate_field(coeffs: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let norm = FRAC_2_PI.sqrt();
    xi.iter()
        .map(|&x| {
            if !(x > 0.0 && x < PI) {
                return Err(Error::Domain(format!("xi = {x} lies outside (0, pi)")));
            }
            Ok(coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * norm * ((j + 1) as f64 * x).sin())
                .sum())
        })
        .collect()
}
