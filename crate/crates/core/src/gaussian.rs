//! The `alpha = 2` reference: the Hilbert–Schmidt integral continuity
//! criterion for the Gaussian heat-equation OU process, and a refinement
//! experiment contrasting its continuity modulus with a stable field.

use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::ou::{simulate_field, FieldPath, SimulationMode, SpectralModel, DEFAULT_CELL_CAP};
use crate::rng::StreamKey;
use crate::spaces::{h_delta_norm, WeightedNormSpec};
use crate::stats;

/// Fitted increment exponents below `-CONVERGENCE_GUARD` count as
/// convergent; the harmonic boundary (exponent 0) is divergent.
pub const CONVERGENCE_GUARD: f64 = 0.05;
/// Quadrature tolerance per integral.
pub const QUADRATURE_TOL: f64 = 1e-12;
/// Beyond this upper limit the remaining `v^(-beta) e^(-v)` mass is below
/// double precision.
const GAMMA_CUTOFF: f64 = 50.0;
/// Terms beyond this index are summed with Euler–Maclaurin.
const DIRECT_TERMS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HsIntegralSpec {
    pub delta: f64,
    /// Exponent of the `t^(-beta)` weight, in (0, 1).
    pub beta_exp: f64,
    /// Upper integration limit.
    pub horizon: f64,
    pub jmax: usize,
}

impl HsIntegralSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta_exp >= 1.0 {
            return Err(Error::Domain(format!(
                "t^(-{}) is not integrable at 0; beta must be < 1",
                self.beta_exp
            )));
        }
        if !(self.beta_exp > 0.0) {
            return Err(param("beta_exp", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        if self.jmax < 100 {
            return Err(param("jmax", "must be at least 100"));
        }
        if !self.delta.is_finite() {
            return Err(param("delta", "must be finite"));
        }
        Ok(())
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// `int_0^x v^(-beta) e^(-v) dv` by quadrature after `v = u^(1/(1-beta))`,
/// which turns the integrand into the bounded `exp(-u^p) / (1 - beta)`.
pub fn weighted_exp_integral(beta: f64, x: f64) -> f64 {
    let x = x.min(GAMMA_CUTOFF);
    let p = 1.0 / (1.0 - beta);
    let upper = x.powf(1.0 - beta);
    // Split where the integrand has decayed to keep the adaptive steps local.
    let knots = [0.0, 0.25 * upper, 0.5 * upper, upper];
    knots
        .windows(2)
        .map(|w| adaptive_simpson(&|u: f64| (-u.powf(p)).exp(), w[0], w[1], QUADRATURE_TOL / 3.0))
        .sum::<f64>()
        * p
}

/// `j^(2 delta) int_0^T t^(-beta) e^(-2 j^2 t) dt`, the contribution of
/// mode `j` to `int_0^T t^(-beta) |e^(t Laplacian)|^2_HS(H_0, H_delta) dt`.
pub fn hs_term(j: usize, delta: f64, beta: f64, horizon: f64) -> f64 {
    let jf = j as f64;
    let rate = 2.0 * jf * jf;
    jf.powf(2.0 * delta) * rate.powf(beta - 1.0) * weighted_exp_integral(beta, rate * horizon)
}

/// `sum_{j=m}^{n} j^s` by direct summation for short ranges and
/// Euler–Maclaurin (three correction terms) otherwise.
fn power_sum(s: f64, m: usize, n: usize) -> f64 {
    if n < m {
        return 0.0;
    }
    if n - m < 4096 || m < 1024 {
        return (m..=n).map(|j| (j as f64).powf(s)).sum();
    }
    let (a, b) = (m as f64, n as f64);
    let integral = if (s + 1.0).abs() < 1e-15 {
        (b / a).ln()
    } else {
        (b.powf(s + 1.0) - a.powf(s + 1.0)) / (s + 1.0)
    };
    let d1 = |x: f64| s * x.powf(s - 1.0);
    let d3 = |x: f64| s * (s - 1.0) * (s - 2.0) * x.powf(s - 3.0);
    let d5 = |x: f64| s * (s - 1.0) * (s - 2.0) * (s - 3.0) * (s - 4.0) * x.powf(s - 5.0);
    integral + 0.5 * (a.powf(s) + b.powf(s)) + (d1(b) - d1(a)) / 12.0 - (d3(b) - d3(a)) / 720.0
        + (d5(b) - d5(a)) / 30240.0
}

/// Truncated criterion value `sum_{j <= jmax} hs_term(j)`.
///
/// Modes whose rescaled upper limit `2 j^2 T` exceeds the incomplete-gamma
/// cutoff share one quadrature value and reduce to a power sum.
pub fn hs_value(delta: f64, beta: f64, horizon: f64, jmax: usize) -> f64 {
    // First mode whose integral has saturated.
    let saturated = ((GAMMA_CUTOFF / (2.0 * horizon)).sqrt().ceil() as usize).max(1);
    let direct_end = jmax.min(saturated.max(DIRECT_TERMS));
    let mut total: f64 = (1..saturated.min(jmax + 1))
        .map(|j| hs_term(j, delta, beta, horizon))
        .sum();
    if jmax >= saturated {
        let g = weighted_exp_integral(beta, GAMMA_CUTOFF);
        let coeff = 2f64.powf(beta - 1.0) * g;
        let s = 2.0 * delta + 2.0 * beta - 2.0;
        total += coeff * (saturated..=direct_end).map(|j| (j as f64).powf(s)).sum::<f64>();
        total += coeff * power_sum(s, direct_end + 1, jmax);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsIntegralResult {
    pub spec: HsIntegralSpec,
    pub value: f64,
    /// `(Jmax', value)` for `Jmax' = jmax / 2^k`, ascending.
    pub ladder: Vec<(usize, f64)>,
    /// Least-squares slope of `ln value` against `ln Jmax'` over the ladder.
    pub fitted_exponent: f64,
    /// Slope of `ln (V(2J) - V(J))` against `ln J`: estimates
    /// `2 delta + 2 beta - 1` whatever its sign.
    pub increment_exponent: f64,
    /// `max(0, 2 delta + 2 beta - 1)`.
    pub predicted_exponent: f64,
    pub convergent: bool,
    /// `|V(jmax) / V(jmax / 2) - 1|`.
    pub relative_doubling_change: f64,
}

pub const LADDER_RUNGS: usize = 7;

pub fn predicted_hs_exponent(delta: f64, beta: f64) -> f64 {
    (2.0 * delta + 2.0 * beta - 1.0).max(0.0)
}

/// Criterion integral with a convergence verdict from its growth in Jmax.
pub fn hs_integral(spec: HsIntegralSpec) -> Result<HsIntegralResult> {
    spec.validate()?;
    let ladder: Vec<(usize, f64)> = (0..LADDER_RUNGS)
        .rev()
        .map(|k| spec.jmax >> k)
        .filter(|&j| j >= 1)
        .map(|j| (j, hs_value(spec.delta, spec.beta_exp, spec.horizon, j)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = ladder
        .iter()
        .map(|&(j, v)| ((j as f64).ln(), v.ln()))
        .unzip();
    let fitted = stats::fit_line(&xs, &ys).slope;
    let (ix, iy): (Vec<f64>, Vec<f64>) = ladder
        .windows(2)
        .map(|w| ((w[1].0 as f64).ln(), (w[1].1 - w[0].1).ln()))
        .unzip();
    let increment = stats::fit_line(&ix, &iy).slope;
    let n = ladder.len();
    let value = ladder[n - 1].1;
    Ok(HsIntegralResult {
        spec,
        value,
        relative_doubling_change: (value / ladder[n - 2].1 - 1.0).abs(),
        fitted_exponent: fitted,
        increment_exponent: increment,
        predicted_exponent: predicted_hs_exponent(spec.delta, spec.beta_exp),
        convergent: increment < -CONVERGENCE_GUARD,
        ladder,
    })
}

/// Maximum `H_delta` increment between consecutive sampled states at each
/// dyadic refinement level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusTable {
    pub delta: f64,
    pub alpha: f64,
    pub levels: Vec<u32>,
    pub moduli: Vec<f64>,
    /// Largest `lambda_n^(delta/2) |beta_n dL|` over the ledger, if any.
    pub largest_ledger_jump: Option<f64>,
}

impl ModulusTable {
    /// Whether every refinement strictly lowered the modulus.
    pub fn strictly_decreasing(&self) -> bool {
        self.moduli.windows(2).all(|w| w[1] < w[0])
    }
}

/// Moduli of `path` on the dyadic sub-grids `T 2^-k`, `k` in `levels`, of a
/// path simulated on the level-`finest` uniform grid. Ledger jumps are
/// inserted into every sub-grid as a (left limit, post-jump) pair.
pub fn modulus_table(path: &FieldPath, delta: f64, alpha: f64, levels: &[u32], finest: u32) -> Result<ModulusTable> {
    let horizon = path.horizon();
    let h = horizon / (1u64 << finest) as f64;
    let spec = WeightedNormSpec::new(delta, modal_lambda(path.n()))?;
    let weights: Vec<f64> = (0..path.n()).map(|j| spec.weight(j).sqrt()).collect();
    let mut moduli = Vec::with_capacity(levels.len());
    for &k in levels {
        if k > finest {
            return Err(param("levels", format!("level {k} is finer than the simulated {finest}")));
        }
        let stride = 1u64 << (finest - k);
        let steps = 1u64 << finest;
        let mut states: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut i = 0u64;
        while i <= steps {
            let t = if i == steps { horizon } else { i as f64 * h };
            let idx = path
                .index_of(t)
                .ok_or_else(|| Error::Domain(format!("grid point {t} missing from path")))?;
            states.push((t, path.row(idx).to_vec()));
            i += stride;
        }
        for ev in path.jumps() {
            let idx = path.index_of(ev.time).expect("ledger times are grid points");
            let post = path.row(idx).to_vec();
            let mut left = post.clone();
            left[ev.component] = ev.left_limit;
            states.push((ev.time, left));
            states.push((ev.time, post));
        }
        // Stable sort keeps each (left, post) pair in order.
        states.sort_by(|a, b| a.0.total_cmp(&b.0));
        let modulus = states
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1].1.iter().zip(&w[0].1).map(|(x, y)| x - y).collect();
                h_delta_norm(&d, &spec)
            })
            .fold(0.0, f64::max);
        moduli.push(modulus);
    }
    let largest = path
        .jumps()
        .iter()
        .map(|ev| weights[ev.component] * (path.beta()[ev.component] * ev.size).abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(ModulusTable {
        delta,
        alpha,
        levels: levels.to_vec(),
        moduli,
        largest_ledger_jump: largest,
    })
}

fn modal_lambda(n: usize) -> Vec<f64> {
    crate::ou::heat_eigenvalues(n)
}

/// Simulates `model` on `[0, horizon]` at the finest of `levels` and reports
/// the refinement moduli in `H_delta`. Gaussian models use the exact
/// marginal scheme; stable models are jump-resolved at `r_resolve`.
pub fn gaussian_continuity_contrast(
    model: &SpectralModel,
    delta: f64,
    horizon: f64,
    levels: &[u32],
    r_resolve: f64,
    key: StreamKey,
) -> Result<ModulusTable> {
    if !model.is_heat() {
        return Err(param("model", "the modulus experiment uses heat-equation eigenvalues"));
    }
    let finest = *levels
        .iter()
        .max()
        .ok_or_else(|| param("levels", "at least one refinement level is required"))?;
    let mode = if model.law().is_gaussian() {
        SimulationMode::MarginalExact
    } else {
        SimulationMode::JumpResolved { r_resolve }
    };
    let h = horizon / (1u64 << finest) as f64;
    let path = simulate_field(model, horizon, h, mode, key, DEFAULT_CELL_CAP)?;
    modulus_table(&path, delta, model.law().alpha(), levels, finest)
}
