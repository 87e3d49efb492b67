//! Batch execution of an [`ExperimentConfig`]: dispatch, CSV tables and
//! their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Diagnostic, ExperimentConfig, Kind};
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_continuity_contrast, hs_integral, HsIntegralSpec};
use crate::irregularity::{
    cadlag_failure_scan, coverage_scan, first_jump_times_with_rate, question4_probe, ScanSpec,
};
use crate::levy::stable_tail_mass;
use crate::ou::simulate_field;
use crate::rng::StreamKey;
use crate::spaces::{
    analytic_membership, median_partial_sum_profile, predicted_median_slope, sample_coefficients,
    tail_exponent_via_medians, WeightedNormSpec,
};
use crate::stats;

pub const MANIFEST_VERSION: u32 = 1;

/// Sidecar written next to every CSV as `<stem>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub csv: String,
    /// `<table>/<version>`, e.g. `coefficients/1`.
    pub csv_schema: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub kind: Kind,
    pub config: ExperimentConfig,
    pub artifact: String,
    pub artifact_version: String,
    /// Seconds from the start of the run to the moment the CSV was written.
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Why a run did not complete.
#[derive(Debug)]
pub enum RunFailure {
    Validation(Vec<Diagnostic>),
    Failed(Error),
}

impl From<Error> for RunFailure {
    fn from(e: Error) -> Self {
        RunFailure::Failed(e)
    }
}

impl RunFailure {
    /// 2 for invalid input, 3 for an exceeded resource cap, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Validation(_) => 2,
            RunFailure::Failed(Error::ResourceCap(_)) => 3,
            RunFailure::Failed(Error::Parameter { .. } | Error::NoJumpPart(_) | Error::Config(_)) => 2,
            RunFailure::Failed(_) => 1,
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        let (category, diagnostics) = match self {
            RunFailure::Validation(d) => ("validation", d.clone()),
            RunFailure::Failed(e) => {
                let category = match e {
                    Error::ResourceCap(_) => "resource-cap",
                    Error::Parameter { .. } | Error::NoJumpPart(_) | Error::Config(_) => "validation",
                    _ => "runtime",
                };
                let field = match e {
                    Error::Parameter { name, .. } => name.to_string(),
                    _ => String::new(),
                };
                (
                    category,
                    vec![Diagnostic {
                        field,
                        message: e.to_string(),
                    }],
                )
            }
        };
        serde_json::json!({
            "status": "error",
            "exit_code": self.exit_code(),
            "category": category,
            "diagnostics": diagnostics,
        })
    }
}

/// Files written by a successful run, CSVs first, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub csvs: Vec<PathBuf>,
    pub manifests: Vec<PathBuf>,
}

struct Table {
    stem: &'static str,
    version: u32,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(stem: &'static str, version: u32, columns: &[&str]) -> Self {
        Self {
            stem,
            version,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    x.to_string()
}

fn int(x: usize) -> String {
    x.to_string()
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

struct Writer<'a> {
    dir: PathBuf,
    config: &'a ExperimentConfig,
    kind: Kind,
    start: Instant,
    outcome: RunOutcome,
}

impl Writer<'_> {
    fn write(&mut self, table: Table) -> Result<()> {
        let csv_path = self.dir.join(format!("{}.csv", table.stem));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            csv: format!("{}.csv", table.stem),
            csv_schema: format!("{}/{}", table.stem, table.version),
            columns: table.columns,
            rows: table.rows.len(),
            kind: self.kind,
            config: self.config.clone(),
            artifact: env!("CARGO_PKG_NAME").to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.start.elapsed().as_secs_f64(),
        };
        let manifest_path = self.dir.join(format!("{}.manifest.json", table.stem));
        fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        self.outcome.csvs.push(csv_path);
        self.outcome.manifests.push(manifest_path);
        Ok(())
    }
}

/// Validates `config`, runs it on a pool of `workers` threads and writes the
/// resulting tables into its output directory. Outputs do not depend on the
/// number of workers.
pub fn run(config: &ExperimentConfig) -> std::result::Result<RunOutcome, RunFailure> {
    let diagnostics = config.validate();
    if !diagnostics.is_empty() {
        return Err(RunFailure::Validation(diagnostics));
    }
    let start = Instant::now();
    let dir = config.output_dir.clone().expect("validated");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let kind = config.kind.expect("validated");
    let mut writer = Writer {
        dir,
        config,
        kind,
        start,
        outcome: RunOutcome {
            csvs: Vec::new(),
            manifests: Vec::new(),
        },
    };
    pool.install(|| -> Result<()> {
        for table in tables(config, kind)? {
            writer.write(table)?;
        }
        Ok(())
    })?;
    Ok(writer.outcome)
}

/// Re-runs the experiment recorded in a manifest.
pub fn rerun_manifest(path: &Path) -> std::result::Result<RunOutcome, RunFailure> {
    run(&Manifest::read(path)?.config)
}

fn tables(config: &ExperimentConfig, kind: Kind) -> Result<Vec<Table>> {
    let key = StreamKey::new(config.seed.expect("validated"), 0, 0);
    match kind {
        Kind::Simulate => simulate_tables(config, key),
        Kind::ThresholdScan => threshold_tables(config, key),
        Kind::JumpDensity => jump_density_tables(config, key),
        Kind::Oscillation => oscillation_tables(config, key),
        Kind::GaussianCheck => gaussian_tables(config, key),
        Kind::Question4Probe => question4_tables(config, key),
    }
}

fn horizon(config: &ExperimentConfig) -> f64 {
    config.horizon.expect("validated")
}

fn simulate_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let model = config.model()?;
    let path = simulate_field(
        &model,
        horizon(config),
        config.grid_step.expect("validated"),
        config.mode(),
        key,
        config.cell_cap(),
    )?;
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=path.n()).map(|j| format!("X{j}")));
    let mut coeffs = Table {
        stem: "coefficients",
        version: 1,
        columns,
        rows: Vec::with_capacity(path.times().len()),
    };
    for (i, &t) in path.times().iter().enumerate() {
        let mut row = Vec::with_capacity(path.n() + 1);
        row.push(num(t));
        row.extend(path.row(i).iter().map(|&x| num(x)));
        coeffs.push(row);
    }
    let mut jumps = Table::new("jumps", 1, &["component", "time", "size", "left_limit"]);
    for ev in path.jumps() {
        jumps.push(vec![int(ev.component + 1), num(ev.time), num(ev.size), num(ev.left_limit)]);
    }
    Ok(vec![coeffs, jumps])
}

fn threshold_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let model = config.model()?;
    let target = config.target();
    let alpha = model.law().alpha();
    let samples = sample_coefficients(&model, target, horizon(config), config.replicas(), key)?;
    let mut slopes = Table::new(
        "threshold_slopes",
        1,
        &[
            "delta",
            "target",
            "alpha",
            "slope",
            "band_lo",
            "band_hi",
            "predicted_slope",
            "drift",
            "drift_slope",
            "analytic_member",
            "heuristic",
            "replicas",
        ],
    );
    let mut points = Table::new("threshold_points", 1, &["delta", "j", "median", "fitted", "residual"]);
    let mut profiles = Table::new("threshold_profiles", 1, &["delta", "J", "S_J"]);
    for &delta in config.deltas.as_deref().unwrap_or_default() {
        let spec = WeightedNormSpec::new(delta, model.lambda().to_vec())?;
        let fit = tail_exponent_via_medians(&samples.weighted_squares(&spec)?, config.j_range())?;
        let profile = median_partial_sum_profile(&samples, &spec)?;
        let verdict = analytic_membership(delta, model.law(), target, model.lambda())?;
        let predicted = if model.is_heat() {
            num(predicted_median_slope(delta, alpha, target))
        } else {
            String::new()
        };
        slopes.push(vec![
            num(delta),
            target.label().into(),
            num(alpha),
            num(fit.slope),
            num(fit.band.0),
            num(fit.band.1),
            predicted,
            profile.drift.map_or("insufficient", |d| d.label()).into(),
            profile.drift.map_or(String::new(), |d| num(d.slope())),
            flag(verdict.member),
            flag(verdict.heuristic),
            int(fit.replicas),
        ]);
        for p in &fit.points {
            points.push(vec![num(delta), int(p.j), num(p.median), num(p.fitted), num(p.residual)]);
        }
        for (j, s) in profile.sums.iter().enumerate() {
            profiles.push(vec![num(delta), int(j + 1), num(*s)]);
        }
    }
    Ok(vec![slopes, points, profiles])
}

fn jump_density_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let model = config.model()?;
    let rate = match (config.jump_rate, config.r1) {
        (Some(rate), _) => rate,
        (None, Some(r1)) => {
            let mass = stable_tail_mass(model.law(), r1)?;
            if mass.no_jump_part {
                return Err(Error::NoJumpPart("jump-density needs alpha < 2".into()));
            }
            mass.rate
        }
        (None, None) => unreachable!("validated"),
    };
    let n = model.n();
    let t = horizon(config);
    let width = config.coverage_width.unwrap_or(0.01);
    let mut taus_table = Table::new("first_jumps", 1, &["replica", "component", "tau"]);
    let mut cells = Table::new("coverage", 1, &["replica", "a", "b", "hit", "prediction"]);
    let mut summary = Table::new(
        "jump_density_summary",
        1,
        &["replica", "N", "rate", "ks_statistic", "ks_p_value", "covered_fraction", "mean_prediction"],
    );
    for r in 0..config.replicas() as u64 {
        let taus = first_jump_times_with_rate(rate, n, key.with_replica(r));
        let ks = stats::ks_one_sample(&taus, |x| -(-rate * x).exp_m1());
        let report = coverage_scan(&taus, rate, t, width)?;
        for (j, tau) in taus.iter().enumerate() {
            taus_table.push(vec![int(r as usize), int(j + 1), num(*tau)]);
        }
        for c in &report.cells {
            cells.push(vec![int(r as usize), num(c.a), num(c.b), flag(c.hit), num(c.prediction)]);
        }
        let mean_pred = report.cells.iter().map(|c| c.prediction).sum::<f64>() / report.cells.len() as f64;
        summary.push(vec![
            int(r as usize),
            int(n),
            num(rate),
            num(ks.statistic),
            num(ks.p_value),
            num(report.covered_fraction),
            num(mean_pred),
        ]);
    }
    Ok(vec![taus_table, cells, summary])
}

fn scan_spec(config: &ExperimentConfig) -> ScanSpec {
    let mut spec = ScanSpec::new(
        horizon(config),
        config.window.expect("validated"),
        config.r1.expect("validated"),
    );
    if let Some(p) = &config.probes {
        spec.probes = p.clone();
    }
    spec
}

fn oscillation_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let model = config.model()?;
    let spec = scan_spec(config);
    let epsilon = config.epsilon.expect("validated");
    let checkpoints = config.checkpoints();
    let mut bounds = Table::new(
        "oscillation",
        1,
        &["replica", "probe_t", "window", "bound", "epsilon", "exceeds", "N", "decay_correction"],
    );
    let mut fractions = vec![Vec::new(); checkpoints.len()];
    for r in 0..config.replicas() as u64 {
        let reports = cadlag_failure_scan(&model, &spec, epsilon, &checkpoints, key.with_replica(r))?;
        for (k, rep) in reports.iter().enumerate() {
            fractions[k].push(rep.fraction_exceeding);
            for (t, b) in rep.probe_times.iter().zip(&rep.osc_lower_bounds) {
                bounds.push(vec![
                    int(r as usize),
                    num(*t),
                    num(rep.window),
                    num(*b),
                    num(epsilon),
                    flag(*b >= epsilon),
                    int(rep.n_components),
                    num(rep.decay_correction),
                ]);
            }
        }
    }
    let mut summary = Table::new(
        "oscillation_summary",
        1,
        &["N", "replicas", "fraction_exceeding", "standard_error"],
    );
    for (n, f) in checkpoints.iter().zip(&fractions) {
        let se = if f.len() > 1 {
            (stats::variance(f) / f.len() as f64).sqrt()
        } else {
            0.0
        };
        summary.push(vec![int(*n), int(f.len()), num(stats::mean(f)), num(se)]);
    }
    Ok(vec![bounds, summary])
}

fn gaussian_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let t = horizon(config);
    let mut integrals = Table::new(
        "hs_integral",
        1,
        &[
            "delta",
            "beta",
            "horizon",
            "jmax",
            "value",
            "fitted_exponent",
            "increment_exponent",
            "predicted_exponent",
            "convergent",
            "relative_doubling_change",
        ],
    );
    let mut ladder = Table::new("hs_ladder", 1, &["delta", "beta", "jmax", "value"]);
    let deltas = config.deltas.clone().unwrap_or_default();
    for &delta in &deltas {
        for beta in config.beta_exps() {
            let r = hs_integral(HsIntegralSpec {
                delta,
                beta_exp: beta,
                horizon: t,
                jmax: config.jmax(),
            })?;
            integrals.push(vec![
                num(delta),
                num(beta),
                num(t),
                int(config.jmax()),
                num(r.value),
                num(r.fitted_exponent),
                num(r.increment_exponent),
                num(r.predicted_exponent),
                flag(r.convergent),
                num(r.relative_doubling_change),
            ]);
            for (j, v) in &r.ladder {
                ladder.push(vec![num(delta), num(beta), int(*j), num(*v)]);
            }
        }
    }
    let model = config.model()?;
    let levels = config.levels();
    let mut moduli = Table::new(
        "modulus",
        1,
        &["replica", "delta", "alpha", "level", "modulus", "largest_ledger_jump", "strictly_decreasing"],
    );
    for r in 0..config.replicas() as u64 {
        for &delta in &deltas {
            let table = gaussian_continuity_contrast(&model, delta, t, &levels, config.r_resolve(), key.with_replica(r))?;
            let dec = table.strictly_decreasing();
            for (level, m) in table.levels.iter().zip(&table.moduli) {
                moduli.push(vec![
                    int(r as usize),
                    num(delta),
                    num(table.alpha),
                    level.to_string(),
                    num(*m),
                    table.largest_ledger_jump.map_or(String::new(), num),
                    flag(dec),
                ]);
            }
        }
    }
    Ok(vec![integrals, ladder, moduli])
}

fn question4_tables(config: &ExperimentConfig, key: StreamKey) -> Result<Vec<Table>> {
    let model = config.model()?;
    let spec = scan_spec(config);
    let checkpoints = config.checkpoints();
    let mut out = Table::new(
        "question4",
        1,
        &[
            "replica",
            "delta",
            "N",
            "probe_t",
            "window",
            "weighted_lower_bound",
            "weighted_envelope",
            "plain_envelope",
            "label",
        ],
    );
    for r in 0..config.replicas() as u64 {
        for &delta in config.deltas.as_deref().unwrap_or_default() {
            for rep in question4_probe(&model, delta, &spec, &checkpoints, key.with_replica(r))? {
                for k in 0..rep.probe_times.len() {
                    out.push(vec![
                        int(r as usize),
                        num(delta),
                        int(rep.n_components),
                        num(rep.probe_times[k]),
                        num(rep.window),
                        num(rep.weighted_lower_bounds[k]),
                        num(rep.weighted_envelopes[k]),
                        num(rep.plain_envelopes[k]),
                        crate::irregularity::EXPLORATORY_LABEL.into(),
                    ]);
                }
            }
        }
    }
    Ok(vec![out])
}
