//! Experiment configuration: a flat TOML table with optional knobs, field
//! level validation and `key=value` overrides.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::StableLaw;
use crate::ou::{SimulationMode, SpectralModel, DEFAULT_CELL_CAP};
use crate::spaces::{heat_threshold, Target};

/// Environment variable consulted for the output directory when the config
/// does not set one.
pub const OUTPUT_ENV: &str = "STABLEFIELD_OUT";

pub const DEFAULT_R_RESOLVE: f64 = 1e-2;
pub const DEFAULT_REPLICAS: usize = 1000;
pub const DEFAULT_JMAX: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    ThresholdScan,
    JumpDensity,
    Oscillation,
    GaussianCheck,
    Question4Probe,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Simulate,
        Kind::ThresholdScan,
        Kind::JumpDensity,
        Kind::Oscillation,
        Kind::GaussianCheck,
        Kind::Question4Probe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::ThresholdScan => "threshold-scan",
            Kind::JumpDensity => "jump-density",
            Kind::Oscillation => "oscillation",
            Kind::GaussianCheck => "gaussian-check",
            Kind::Question4Probe => "question4-probe",
        }
    }

    fn needs_jumps(&self) -> bool {
        matches!(self, Kind::JumpDensity | Kind::Oscillation | Kind::Question4Probe)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    MarginalExact,
    JumpResolved,
}

/// Every knob of every experiment. Unset knobs take the defaults documented
/// on the accessor methods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Full 64-bit range; values above `i64::MAX` are written as strings.
    #[serde(skip_serializing_if = "Option::is_none", with = "seed_serde")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// `lambda_j = j^lambda_exponent`; 2 gives the heat equation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_exponent: Option<f64>,
    /// `beta_j = beta * j^(-beta_decay)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_resolve: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_range: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_exps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jmax: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_cap: Option<usize>,
}

mod seed_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match seed {
            Some(v) if *v <= i64::MAX as u64 => s.serialize_i64(*v as i64),
            Some(v) => s.serialize_str(&v.to_string()),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map(Some).map_err(|_| de::Error::custom("seed must be nonnegative")),
            Raw::Str(s) => s.parse().map(Some).map_err(de::Error::custom),
        }
    }
}

/// One validation finding, tied to a config field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub const REQUIRED_FIELDS: [&str; 6] = ["kind", "alpha", "n_components", "horizon", "seed", "output_dir"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value`, where `value` is a TOML value (`alpha=1.5`,
    /// `deltas=[0.5, 1.5]`, `kind="simulate"`). Bare words are taken as
    /// strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim().replace('-', "_");
        let raw = raw.trim();
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        table.insert(key.clone(), value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{key}`: {e}")))?;
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(1.0)
    }

    pub fn lambda_exponent(&self) -> f64 {
        self.lambda_exponent.unwrap_or(2.0)
    }

    pub fn r_resolve(&self) -> f64 {
        self.r_resolve.unwrap_or(DEFAULT_R_RESOLVE)
    }

    pub fn replicas(&self) -> usize {
        self.replicas.unwrap_or(match self.kind {
            Some(Kind::ThresholdScan) => DEFAULT_REPLICAS,
            _ => 1,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }

    pub fn cell_cap(&self) -> usize {
        self.cell_cap.unwrap_or(DEFAULT_CELL_CAP)
    }

    pub fn target(&self) -> Target {
        self.target.unwrap_or(Target::Solution)
    }

    /// Marginal-exact for the Gaussian, jump-resolved otherwise.
    pub fn mode(&self) -> SimulationMode {
        let name = self.mode.unwrap_or(if self.alpha == Some(2.0) {
            ModeName::MarginalExact
        } else {
            ModeName::JumpResolved
        });
        match name {
            ModeName::MarginalExact => SimulationMode::MarginalExact,
            ModeName::JumpResolved => SimulationMode::JumpResolved {
                r_resolve: self.r_resolve(),
            },
        }
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| self.n_components.into_iter().collect())
    }

    pub fn j_range(&self) -> (usize, usize) {
        self.j_range.unwrap_or((10, self.n_components.unwrap_or(0)))
    }

    pub fn levels(&self) -> Vec<u32> {
        self.levels.clone().unwrap_or_else(|| (6..=10).collect())
    }

    pub fn beta_exps(&self) -> Vec<f64> {
        self.beta_exps.clone().unwrap_or_else(|| vec![0.05, 0.1, 0.2])
    }

    pub fn jmax(&self) -> usize {
        self.jmax.unwrap_or(DEFAULT_JMAX)
    }

    /// `(lambda_j, beta_j)` for `j = 1..=N`.
    fn spectrum(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n_components?;
        let (p, b0, d) = (self.lambda_exponent(), self.beta.unwrap_or(1.0), self.beta_decay.unwrap_or(0.0));
        let lambda = (1..=n)
            .map(|j| if p == 2.0 { (j * j) as f64 } else { (j as f64).powf(p) })
            .collect();
        let beta = (1..=n).map(|j| b0 * (j as f64).powf(-d)).collect();
        Some((lambda, beta))
    }

    pub fn model(&self) -> Result<SpectralModel> {
        let law = StableLaw::new(self.alpha.unwrap_or(f64::NAN), self.sigma())?;
        let (lambda, beta) = self
            .spectrum()
            .ok_or_else(|| Error::Config("n_components is not set".into()))?;
        SpectralModel::new(lambda, beta, law)
    }

    /// Checks every knob against the preconditions of the configured
    /// experiment. Pure; an empty result means the config is runnable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Diagnostic {
                field: field.to_string(),
                message,
            })
        };
        let present = [
            self.kind.is_some(),
            self.alpha.is_some(),
            self.n_components.is_some(),
            self.horizon.is_some(),
            self.seed.is_some(),
            self.output_dir.is_some(),
        ];
        for (field, ok) in REQUIRED_FIELDS.iter().zip(present) {
            if !ok {
                let extra = if *field == "output_dir" {
                    format!(" (or set {OUTPUT_ENV})")
                } else {
                    String::new()
                };
                push(field, format!("required field is missing{extra}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 2.0) {
                push("alpha", format!("must lie in (0, 2], got {a}"));
            }
        }
        if !(self.sigma() > 0.0 && self.sigma().is_finite()) {
            push("sigma", format!("must be positive, got {}", self.sigma()));
        }
        if self.n_components == Some(0) {
            push("n_components", "must be at least 1".into());
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                push("horizon", format!("must be positive, got {t}"));
            }
        }
        let positive = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        for (field, v) in [
            ("grid_step", self.grid_step),
            ("r_resolve", self.r_resolve),
            ("r1", self.r1),
            ("jump_rate", self.jump_rate),
            ("window", self.window),
            ("coverage_width", self.coverage_width),
            ("beta", self.beta),
            ("lambda_exponent", self.lambda_exponent),
        ] {
            if !positive(v) {
                push(field, format!("must be positive, got {}", v.unwrap()));
            }
        }
        if self.beta_decay.is_some_and(|d| !(d >= 0.0 && d.is_finite())) {
            push("beta_decay", "must be nonnegative".into());
        }
        if self.replicas == Some(0) {
            push("replicas", "must be at least 1".into());
        }
        if self.workers == Some(0) {
            push("workers", "must be at least 1".into());
        }
        let gaussian = self.alpha == Some(2.0);
        if gaussian && self.mode == Some(ModeName::JumpResolved) {
            push(
                "mode",
                "alpha = 2 has no jump part; jump-resolved simulation needs alpha < 2".into(),
            );
        }
        let Some(kind) = self.kind else { return out };
        if gaussian && kind.needs_jumps() {
            push("alpha", format!("alpha = 2 has no jump part; {kind} needs alpha < 2"));
        }
        if let (Some(n), Some(cps)) = (self.n_components, &self.checkpoints) {
            if cps.is_empty() || cps.windows(2).any(|w| w[1] <= w[0]) || cps[0] == 0 || cps[cps.len() - 1] > n {
                push("checkpoints", format!("need increasing component counts in 1..={n}"));
            }
        }
        if let (Some(t), Some(probes)) = (self.horizon, &self.probes) {
            if probes.is_empty() || probes.iter().any(|&p| !(p >= 0.0 && p < t)) {
                push("probes", format!("need at least one probe time in [0, {t})"));
            }
        }
        let alpha = self.alpha.filter(|a| *a > 0.0 && *a <= 2.0);
        match kind {
            Kind::Simulate => {
                if self.grid_step.is_none() {
                    push("grid_step", "required for simulate".into());
                }
            }
            Kind::ThresholdScan => {
                if self.deltas.as_ref().is_none_or(|d| d.is_empty()) {
                    push("deltas", "required for threshold-scan".into());
                }
                if let (Some(a), Some(ds)) = (alpha, &self.deltas) {
                    let th = heat_threshold(a, self.target());
                    for &d in ds.iter().filter(|&&d| d == th) {
                        push(
                            "deltas",
                            format!(
                                "delta = {d} sits on the {} threshold where membership is decided by a strict inequality",
                                self.target().label()
                            ),
                        );
                    }
                }
                if self.replicas() < crate::spaces::MIN_REPLICAS {
                    push(
                        "replicas",
                        format!("median slopes need at least {} replicas", crate::spaces::MIN_REPLICAS),
                    );
                }
                let (lo, hi) = self.j_range();
                if self.n_components.is_some() && (lo == 0 || hi <= lo || (hi as f64 / lo as f64).log10() < 1.5) {
                    push("j_range", format!("need 1 <= lo < hi spanning 1.5 decades, got ({lo}, {hi})"));
                }
                if let Some(n) = self.n_components {
                    if hi > n {
                        push("j_range", format!("upper end {hi} exceeds n_components = {n}"));
                    }
                }
            }
            Kind::JumpDensity => {
                if self.r1.is_none() && self.jump_rate.is_none() {
                    push("r1", "jump-density needs r1 or jump_rate".into());
                }
                if self.coverage_width.is_some_and(|w| self.horizon.is_some_and(|t| w > t)) {
                    push("coverage_width", "must not exceed the horizon".into());
                }
            }
            Kind::Oscillation | Kind::Question4Probe => {
                for (field, v) in [("r1", self.r1), ("window", self.window)] {
                    if v.is_none() {
                        push(field, format!("required for {kind}"));
                    }
                }
                if kind == Kind::Oscillation {
                    match (self.epsilon, self.r1, self.spectrum()) {
                        (None, _, _) => push("epsilon", "required for oscillation".into()),
                        (Some(eps), Some(r1), Some((_, beta))) => {
                            let r2 = beta.iter().copied().fold(f64::INFINITY, f64::min);
                            if !(eps > 0.0 && eps < r1 * r2) {
                                push(
                                    "epsilon",
                                    format!(
                                        "must satisfy the strict inequality 0 < epsilon < r1 * r2 = {}; got {eps}",
                                        r1 * r2
                                    ),
                                );
                            }
                        }
                        _ => {}
                    }
                } else {
                    match (&self.deltas, alpha) {
                        (Some(ds), Some(a)) if !ds.is_empty() => {
                            for &d in ds {
                                if !(d >= -1.0 / a && d < 0.0) {
                                    push("deltas", format!("{d} outside [-1/alpha, 0) = [{}, 0)", -1.0 / a));
                                }
                            }
                        }
                        (Some(ds), _) if !ds.is_empty() => {}
                        _ => push("deltas", "required for question4-probe".into()),
                    }
                }
            }
            Kind::GaussianCheck => {
                if self.deltas.as_ref().is_none_or(|d| d.is_empty()) {
                    push("deltas", "required for gaussian-check".into());
                }
                for b in self.beta_exps() {
                    if !(b > 0.0 && b < 1.0) {
                        push("beta_exps", format!("{b} outside (0, 1); t^(-beta) must be integrable"));
                    }
                }
                if self.jmax() < 100 {
                    push("jmax", "must be at least 100".into());
                }
                if self.levels().is_empty() || self.levels().iter().any(|&l| l > 30) {
                    push("levels", "need refinement levels in 0..=30".into());
                }
                if self.lambda_exponent() != 2.0 {
                    push("lambda_exponent", "gaussian-check uses heat-equation eigenvalues (2)".into());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fields(d: &[Diagnostic]) -> Vec<&str> {
        d.iter().map(|d| d.field.as_str()).collect()
    }

    fn base(kind: Kind) -> ExperimentConfig {
        ExperimentConfig {
            kind: Some(kind),
            alpha: Some(1.0),
            n_components: Some(100),
            horizon: Some(1.0),
            seed: Some(7),
            output_dir: Some("out".into()),
            ..Default::default()
        }
    }

    #[test]
    fn empty_config_lists_required_fields() {
        let d = ExperimentConfig::default().validate();
        assert_eq!(fields(&d), REQUIRED_FIELDS.to_vec());
    }

    #[test]
    fn gaussian_jump_resolved_has_no_jump_part() {
        let mut c = base(Kind::Simulate);
        c.alpha = Some(2.0);
        c.grid_step = Some(0.1);
        c.mode = Some(ModeName::JumpResolved);
        let d = c.validate();
        assert!(d.iter().any(|d| d.field == "mode" && d.message.contains("no jump part")), "{d:?}");
    }

    #[test]
    fn epsilon_at_bound_cites_strict_inequality() {
        let mut c = base(Kind::Oscillation);
        c.r1 = Some(0.5);
        c.window = Some(0.01);
        c.beta = Some(2.0);
        c.epsilon = Some(1.0);
        let d = c.validate();
        assert!(d.iter().any(|d| d.field == "epsilon" && d.message.contains("strict")), "{d:?}");
        c.epsilon = Some(0.99);
        assert!(c.validate().is_empty());
    }

    #[test]
    fn threshold_delta_rejected() {
        let mut c = base(Kind::ThresholdScan);
        c.n_components = Some(1000);
        c.deltas = Some(vec![0.5, 1.0]);
        let d = c.validate();
        assert_eq!(fields(&d), vec!["deltas"]);
        c.target = Some(Target::Noise);
        c.deltas = Some(vec![-1.0]);
        assert_eq!(fields(&c.validate()), vec!["deltas"]);
    }

    #[test]
    fn question4_range() {
        let mut c = base(Kind::Question4Probe);
        c.r1 = Some(1.0);
        c.window = Some(0.01);
        c.deltas = Some(vec![-0.5]);
        assert!(c.validate().is_empty());
        c.deltas = Some(vec![0.0]);
        assert_eq!(fields(&c.validate()), vec!["deltas"]);
    }

    #[test]
    fn overrides() {
        let mut c = base(Kind::ThresholdScan);
        c.set("deltas=[0.5, 1.5]").unwrap();
        c.set("kind=simulate").unwrap();
        c.set("n-components=3").unwrap();
        c.set("output_dir=/tmp/x y").unwrap();
        assert_eq!(c.deltas, Some(vec![0.5, 1.5]));
        assert_eq!(c.kind, Some(Kind::Simulate));
        assert_eq!(c.n_components, Some(3));
        assert_eq!(c.output_dir, Some("/tmp/x y".into()));
        assert!(c.set("nonsense=1").is_err());
        assert!(c.set("alpha").is_err());
    }

    #[test]
    fn model_follows_rules() {
        let mut c = base(Kind::Simulate);
        c.n_components = Some(4);
        c.beta = Some(2.0);
        c.beta_decay = Some(1.0);
        let m = c.model().unwrap();
        assert!(m.is_heat());
        assert_eq!(m.beta(), &[2.0, 1.0, 2.0 / 3.0, 0.5]);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        let f = || proptest::option::of(-1e6f64..1e6);
        (
            proptest::option::of(proptest::sample::select(Kind::ALL.to_vec())),
            f(),
            proptest::option::of(0usize..100_000),
            f(),
            proptest::option::of(any::<u64>()),
            proptest::option::of(proptest::collection::vec(-10f64..10.0, 0..5)),
            proptest::option::of((0usize..100, 0usize..100)),
            proptest::option::of(proptest::collection::vec(0u32..20, 0..4)),
            f(),
        )
            .prop_map(|(kind, alpha, n, horizon, seed, deltas, j_range, levels, eps)| ExperimentConfig {
                kind,
                alpha,
                n_components: n,
                horizon,
                seed,
                deltas,
                j_range,
                levels,
                epsilon: eps,
                output_dir: Some("runs/a".into()),
                mode: Some(ModeName::JumpResolved),
                target: Some(Target::Noise),
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip(c in arb_config()) {
            let text = c.to_toml().unwrap();
            prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        }
    }
}
