//! Oscillation functionals, first-jump-time statistics and càdlàg-failure
//! scans.
//!
//! The oscillation of a path over a time set is `sup_{s,t} |X(t) - X(s)|`.
//! On sampled data only a lower bound is observable; the one used here is the
//! coordinate bound `max_j (max - min of X^j over the sampled points)`, which
//! never exceeds the oscillation in any norm dominating the coordinates.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::levy::{open01, small_jump_sigma2, stable_tail_mass};
use crate::ou::{draw_big_jumps, evolve_component, merge_times, FieldPath, SpectralModel};
use crate::rng::{Lane, StreamKey};

/// Default probe lattice `{0.1, ..., 0.9} * horizon`.
pub fn default_probes(horizon: f64) -> Vec<f64> {
    (1..=9).map(|k| k as f64 * 0.1 * horizon).collect()
}

/// Per-component `max - min` of `path` over the grid points strictly inside
/// `(a, b)` together with the left limits of ledger jumps in that window.
pub fn window_ranges(path: &FieldPath, window: (f64, f64)) -> Result<Vec<f64>> {
    let (a, b) = window;
    if !(a < b) || a < 0.0 || b > path.horizon() {
        return Err(param(
            "window",
            format!("({a}, {b}) must be a nonempty subinterval of (0, {}]", path.horizon()),
        ));
    }
    let times = path.times();
    let lo = times.partition_point(|&t| t <= a);
    let hi = times.partition_point(|&t| t < b);
    if hi <= lo + 1 {
        return Err(Error::Domain(format!(
            "window ({a}, {b}) holds {} grid points; at least 2 are needed",
            hi.saturating_sub(lo)
        )));
    }
    let n = path.n();
    let mut min = path.row(lo).to_vec();
    let mut max = min.clone();
    for i in lo + 1..hi {
        for (j, &v) in path.row(i).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    for ev in path.jumps().iter().filter(|e| e.time > a && e.time < b) {
        min[ev.component] = min[ev.component].min(ev.left_limit);
        max[ev.component] = max[ev.component].max(ev.left_limit);
    }
    Ok((0..n).map(|j| max[j] - min[j]).collect())
}

/// Certified lower bound on the oscillation of `path` over `(a, b)`.
pub fn oscillation_lower_bound(path: &FieldPath, window: (f64, f64)) -> Result<f64> {
    Ok(window_ranges(path, window)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationReport {
    pub n_components: usize,
    pub probe_times: Vec<f64>,
    pub window: f64,
    pub osc_lower_bounds: Vec<f64>,
    /// `exp(-lambda_N * window)`, the decay a jump can suffer before the
    /// next sampled point.
    pub decay_correction: f64,
    pub epsilon: f64,
    pub fraction_exceeding: f64,
}

impl OscillationReport {
    fn new(n: usize, probes: &[f64], window: f64, bounds: Vec<f64>, decay: f64, epsilon: f64) -> Self {
        let exceed = bounds.iter().filter(|&&b| b >= epsilon).count();
        Self {
            n_components: n,
            probe_times: probes.to_vec(),
            window,
            fraction_exceeding: exceed as f64 / bounds.len().max(1) as f64,
            osc_lower_bounds: bounds,
            decay_correction: decay,
            epsilon,
        }
    }
}

/// Scan parameters shared by [`cadlag_failure_scan`] and [`question4_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub horizon: f64,
    /// Window length `delta_w`; windows are `(t, t + delta_w)`.
    pub window: f64,
    pub probes: Vec<f64>,
    /// Ledger threshold: jumps with `|dL| >= r1` are placed exactly.
    pub r1: f64,
    /// Sample points per window (placed at cell midpoints).
    pub points_per_window: usize,
}

impl ScanSpec {
    pub fn new(horizon: f64, window: f64, r1: f64) -> Self {
        Self {
            horizon,
            window,
            probes: default_probes(horizon),
            r1,
            points_per_window: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        if !(self.window > 0.0) {
            return Err(param("window", "must be positive"));
        }
        if !(self.r1 > 0.0) {
            return Err(param("r1", "must be positive"));
        }
        if self.points_per_window < 2 {
            return Err(param("points_per_window", "need at least 2 points per window"));
        }
        if self.probes.is_empty() {
            return Err(param("probes", "at least one probe time is required"));
        }
        for &t in &self.probes {
            if !(t >= 0.0 && t + self.window <= self.horizon) {
                return Err(param(
                    "probes",
                    format!("window ({t}, {}) leaves [0, {}]", t + self.window, self.horizon),
                ));
            }
        }
        Ok(())
    }

    fn sample_grid(&self) -> Vec<f64> {
        let m = self.points_per_window;
        let cell = self.window / m as f64;
        let mut grid = vec![0.0];
        for &t in &self.probes {
            grid.extend((0..m).map(|k| t + (k as f64 + 0.5) * cell));
        }
        grid.push(self.horizon);
        merge_times(&grid, &[])
    }
}

/// Per-component, per-probe window ranges of a streamed jump-resolved
/// simulation. Each component is simulated on the union of the probe-window
/// sample points and its own ledger times, so no `N x M` matrix is formed.
fn streamed_ranges(model: &SpectralModel, spec: &ScanSpec, key: StreamKey) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let law = model.law();
    let sigma2 = small_jump_sigma2(law, spec.r1)?;
    let sample_grid = spec.sample_grid();
    (0..model.n())
        .into_par_iter()
        .map(|j| {
            let key = key.with_component(j as u64);
            let jumps = draw_big_jumps(law, spec.r1, spec.horizon, &mut key.rng(Lane::BigJumps))?;
            let grid = merge_times(&sample_grid, &jumps.times);
            let (values, left) = evolve_component(
                model.lambda()[j],
                model.beta()[j],
                &grid,
                &jumps,
                sigma2,
                &mut key.rng(Lane::Residual),
            )?;
            Ok(spec
                .probes
                .iter()
                .map(|&t| {
                    let (a, b) = (t, t + spec.window);
                    let lo = grid.partition_point(|&s| s <= a);
                    let hi = grid.partition_point(|&s| s < b);
                    let inside = values[lo..hi].iter().copied().chain(
                        jumps
                            .times
                            .iter()
                            .zip(&left)
                            .filter(|(&tau, _)| tau > a && tau < b)
                            .map(|(_, &l)| l),
                    );
                    let (mn, mx) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), v| {
                        (mn.min(v), mx.max(v))
                    });
                    mx - mn
                })
                .collect())
        })
        .collect()
}

fn check_checkpoints(model: &SpectralModel, checkpoints: &[usize]) -> Result<()> {
    if checkpoints.is_empty()
        || checkpoints.windows(2).any(|w| w[1] <= w[0])
        || checkpoints[0] == 0
        || *checkpoints.last().unwrap() > model.n()
    {
        return Err(param(
            "checkpoints",
            format!("need increasing component counts in 1..={}", model.n()),
        ));
    }
    Ok(())
}

/// Window-oscillation scan of a jump-resolved field, reported for every
/// truncation level in `checkpoints` from one coupled simulation: the jump
/// sets of the first `N` components are shared by every larger `N`.
///
/// Requires `epsilon < r1 * r2` with `r2 = min_n beta_n`.
pub fn cadlag_failure_scan(
    model: &SpectralModel,
    spec: &ScanSpec,
    epsilon: f64,
    checkpoints: &[usize],
    key: StreamKey,
) -> Result<Vec<OscillationReport>> {
    check_checkpoints(model, checkpoints)?;
    let r2 = model.beta().iter().copied().fold(f64::INFINITY, f64::min);
    if !(epsilon > 0.0 && epsilon < spec.r1 * r2) {
        return Err(param(
            "epsilon",
            format!(
                "must satisfy 0 < epsilon < r1 * r2 = {} (strict), got {epsilon}",
                spec.r1 * r2
            ),
        ));
    }
    let ranges = streamed_ranges(&model.truncated(*checkpoints.last().unwrap())?, spec, key)?;
    let mut running = vec![0.0f64; spec.probes.len()];
    let mut reports = Vec::with_capacity(checkpoints.len());
    let mut done = 0;
    for &n in checkpoints {
        for comp in &ranges[done..n] {
            for (r, &v) in running.iter_mut().zip(comp) {
                *r = r.max(v);
            }
        }
        done = n;
        let decay = (-model.lambda()[n - 1] * spec.window).exp();
        reports.push(OscillationReport::new(n, &spec.probes, spec.window, running.clone(), decay, epsilon));
    }
    Ok(reports)
}

/// The same scan over an already simulated path.
pub fn scan_path(path: &FieldPath, probes: &[f64], window: f64, epsilon: f64, lambda_max: f64) -> Result<OscillationReport> {
    let bounds = probes
        .iter()
        .map(|&t| oscillation_lower_bound(path, (t, t + window)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OscillationReport::new(
        path.n(),
        probes,
        window,
        bounds,
        (-lambda_max * window).exp(),
        epsilon,
    ))
}

/// First times `tau_n` at which `L^n` jumps by at least `r1`: i.i.d.
/// exponential with rate `nu({|x| >= r1})`, drawn directly.
pub fn first_jump_times(model: &SpectralModel, r1: f64, key: StreamKey) -> Result<Vec<f64>> {
    let rate = stable_tail_mass(model.law(), r1)?;
    if rate.no_jump_part {
        return Err(Error::NoJumpPart("first jump times need alpha < 2".into()));
    }
    Ok(first_jump_times_with_rate(rate.rate, model.n(), key))
}

pub fn first_jump_times_with_rate(rate: f64, n: usize, key: StreamKey) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let mut rng = key.with_component(j as u64).rng(Lane::FirstJump);
            exponential(rate, &mut rng)
        })
        .collect()
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    -open01(rng).ln() / rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageCell {
    pub a: f64,
    pub b: f64,
    pub hit: bool,
    /// `1 - (1 - (exp(-rate a) - exp(-rate b)))^N`
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub width: f64,
    pub horizon: f64,
    pub n: usize,
    pub rate: f64,
    pub covered_fraction: f64,
    pub cells: Vec<CoverageCell>,
    /// Set when `width` does not divide `horizon` and the last cell is short.
    pub truncated_last_cell: bool,
}

/// Probability that at least one of `n` i.i.d. Exp(`rate`) times falls in
/// `(a, b)`.
pub fn coverage_prediction(rate: f64, n: usize, a: f64, b: f64) -> f64 {
    let p = (-rate * a).exp() - (-rate * b).exp();
    // 1 - (1 - p)^n, computed without cancellation.
    -((n as f64) * (-p).ln_1p()).exp_m1()
}

/// Fraction of the cells `(a, a + width)` of `(0, horizon)` that contain
/// at least one of `taus`, with the analytic prediction per cell.
pub fn coverage_scan(taus: &[f64], rate: f64, horizon: f64, width: f64) -> Result<CoverageReport> {
    if !(horizon > 0.0) || !(width > 0.0) {
        return Err(param("width", "horizon and width must be positive"));
    }
    if !(rate > 0.0) {
        return Err(param("rate", "must be positive"));
    }
    let cells_f = horizon / width;
    let n_cells = (cells_f - 1e-9).ceil() as usize;
    let truncated = (cells_f - cells_f.round()).abs() > 1e-9;
    let mut hit = vec![false; n_cells];
    for &t in taus {
        if t > 0.0 && t < horizon {
            let k = ((t / width) as usize).min(n_cells - 1);
            // Cells are open; a time on a cell edge belongs to neither.
            if t > k as f64 * width {
                hit[k] = true;
            }
        }
    }
    let n = taus.len();
    let cells: Vec<CoverageCell> = (0..n_cells)
        .map(|k| {
            let a = k as f64 * width;
            let b = ((k + 1) as f64 * width).min(horizon);
            CoverageCell {
                a,
                b,
                hit: hit[k],
                prediction: coverage_prediction(rate, n, a, b),
            }
        })
        .collect();
    let covered = hit.iter().filter(|&&h| h).count() as f64 / n_cells as f64;
    Ok(CoverageReport {
        width,
        horizon,
        n,
        rate,
        covered_fraction: if n == 0 { 0.0 } else { covered },
        cells,
        truncated_last_cell: truncated,
    })
}

/// Exploratory `H_delta` window scan for `delta` in `[-1/alpha, 0)`; no
/// regularity claim is attached to its output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Question4Report {
    pub delta: f64,
    pub n_components: usize,
    pub probe_times: Vec<f64>,
    pub window: f64,
    /// `max_j lambda_j^(delta/2) range_j`: certified lower bound on the
    /// `H_delta` oscillation over the sampled points.
    pub weighted_lower_bounds: Vec<f64>,
    /// `(sum_j lambda_j^delta range_j^2)^(1/2)`: envelope of the sampled
    /// `H_delta` oscillation.
    pub weighted_envelopes: Vec<f64>,
    /// Same envelope with `delta = 0`.
    pub plain_envelopes: Vec<f64>,
}

pub const EXPLORATORY_LABEL: &str = "EXPLORATORY";

pub fn question4_probe(
    model: &SpectralModel,
    delta: f64,
    spec: &ScanSpec,
    checkpoints: &[usize],
    key: StreamKey,
) -> Result<Vec<Question4Report>> {
    let alpha = model.law().alpha();
    if !(delta >= -1.0 / alpha && delta < 0.0) {
        return Err(param(
            "delta",
            format!("must lie in [-1/alpha, 0) = [{}, 0), got {delta}", -1.0 / alpha),
        ));
    }
    check_checkpoints(model, checkpoints)?;
    let ranges = streamed_ranges(&model.truncated(*checkpoints.last().unwrap())?, spec, key)?;
    let p = spec.probes.len();
    let mut lower = vec![0.0f64; p];
    let mut weighted = vec![0.0f64; p];
    let mut plain = vec![0.0f64; p];
    let mut reports = Vec::new();
    let mut done = 0;
    for &n in checkpoints {
        for (j, comp) in ranges.iter().enumerate().take(n).skip(done) {
            let w = model.lambda()[j].powf(delta);
            for k in 0..p {
                let r = comp[k];
                lower[k] = lower[k].max(w.sqrt() * r);
                weighted[k] += w * r * r;
                plain[k] += r * r;
            }
        }
        done = n;
        reports.push(Question4Report {
            delta,
            n_components: n,
            probe_times: spec.probes.clone(),
            window: spec.window,
            weighted_lower_bounds: lower.clone(),
            weighted_envelopes: weighted.iter().map(|s| s.sqrt()).collect(),
            plain_envelopes: plain.iter().map(|s| s.sqrt()).collect(),
        });
    }
    Ok(reports)
}
