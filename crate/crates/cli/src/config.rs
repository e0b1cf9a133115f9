//! TOML experiment configuration.
//!
//! ```toml
//! [operator]
//! kind = "linear"            # or "affine" (adds `offset`, A x = M x - offset)
//! matrix = [[1, 0, 0], [0, 0, 0], [0, 0, -1]]
//! rho = -1.0
//! eta = 3.0
//!
//! [schedule]
//! kind = "power"             # or "constant" (uses `value`)
//! q = ["1/5", "1/3", 0.5]    # one value or a list; fractions allowed
//! t0 = 0.1
//!
//! [dynamics]
//! system = ["ds", "tds"]
//! gamma = 1.0
//! delta = "4/3"
//! alpha = "4/3"
//! beta = 1.0
//! ```
//!
//! plus `[initial]` (`x0`, `v0`), `[integration]` (`tf`, `rel_tol`,
//! `abs_tol`, `samples`, `max_step`, `initial_step`), `[reference]`
//! (`x_star`), `[output]` (`directory`, `formats`) and an optional
//! `[checks]` block for sampled operator checks.

use std::fmt;
use std::path::{Path, PathBuf};

use coflow::{
    certify_comonotone, DynamicsParams, ExecutionMode, IntegratorConfig, Matrix, OperatorSpec,
    SamplingOptions, SystemKind, TikhonovSchedule, Vector,
};
use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Real number written either as a TOML number or as a string such as
/// `"1/3"` or `"2.5e-1"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Real(pub f64);

impl Real {
    pub fn parse(text: &str) -> Result<f64, String> {
        let text = text.trim();
        let value = match text.split_once('/') {
            Some((num, den)) => {
                let num: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad numerator in `{text}`"))?;
                let den: f64 = den
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad denominator in `{text}`"))?;
                num / den
            }
            None => text
                .parse()
                .map_err(|_| format!("`{text}` is not a number"))?,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(format!("`{text}` is not finite"))
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Real;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a fraction string like \"1/3\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Real, E> {
                Ok(Real(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Real, E> {
                Real::parse(v).map(Real).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKindName {
    Linear,
    Affine,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorBlock {
    pub kind: OperatorKindName,
    pub matrix: Vec<Vec<Real>>,
    pub offset: Option<Vec<Real>>,
    pub rho: Real,
    pub eta: Real,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKindName {
    Power,
    Constant,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub kind: ScheduleKindName,
    pub q: Option<OneOrMany<Real>>,
    pub value: Option<Real>,
    pub t0: Real,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub system: OneOrMany<SystemKind>,
    pub gamma: Option<Real>,
    pub delta: Option<Real>,
    pub alpha: Option<Real>,
    pub beta: Option<Real>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub x0: Vec<Real>,
    pub v0: Vec<Real>,
}

fn default_samples() -> usize {
    400
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationBlock {
    pub tf: Real,
    pub rel_tol: Option<Real>,
    pub abs_tol: Option<Real>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub max_step: Option<Real>,
    pub initial_step: Option<Real>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    pub x_star: Option<Vec<Real>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksBlock {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub box_half_width: Option<Real>,
    pub slack: Option<Real>,
    #[serde(default)]
    pub execution: ExecutionMode,
}

fn default_trials() -> usize {
    10_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorBlock,
    pub schedule: ScheduleBlock,
    pub dynamics: DynamicsBlock,
    pub initial: InitialBlock,
    pub integration: IntegrationBlock,
    #[serde(default)]
    pub reference: ReferenceBlock,
    pub output: OutputBlock,
    pub checks: Option<ChecksBlock>,
}

/// Environment variable overriding where output directories are rooted.
pub const OUTPUT_ROOT_ENV: &str = "COFLOW_OUTPUT_ROOT";

fn reals(v: &[Real]) -> Vector {
    Vector::new(v.iter().map(|r| r.0).collect())
}

/// One fully validated run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub label: String,
    pub system: SystemKind,
    pub q: Option<f64>,
    pub params: DynamicsParams,
    pub schedule: TikhonovSchedule,
    pub operator: OperatorSpec,
    pub x0: Vector,
    pub v0: Vector,
    pub t0: f64,
    pub tf: f64,
    pub samples: usize,
    pub integrator: IntegratorConfig,
    pub x_star: Option<Vector>,
    pub formats: Vec<Format>,
    pub checks: Option<(usize, u64, SamplingOptions)>,
}

impl RunSpec {
    pub fn writes(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// A parsed config together with its resolved output directory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            let key = unknown_key(&msg).unwrap_or_else(|| "<document>".into());
            CliError::config(key, msg)
        })?;
        // relative directories resolve against the override root, else the cwd
        let output_dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&config.output.directory),
            None => config.output.directory.clone(),
        };
        let exp = Experiment { config, output_dir };
        exp.runs()?;
        Ok(exp)
    }

    /// Expands list-valued entries into individual validated runs.
    pub fn runs(&self) -> CliResult<Vec<RunSpec>> {
        let c = &self.config;
        let op = operator(&c.operator)?;
        let n = op.dim();

        let x0 = reals(&c.initial.x0);
        let v0 = reals(&c.initial.v0);
        expect_dim("initial.x0", &x0, n)?;
        expect_dim("initial.v0", &v0, n)?;
        let x_star = c.reference.x_star.as_deref().map(reals);
        if let Some(x) = &x_star {
            expect_dim("reference.x_star", x, n)?;
        }

        let t0 = c.schedule.t0.0;
        if !(t0 > 0.0) {
            return Err(CliError::config(
                "schedule.t0",
                format!("{t0} must be positive"),
            ));
        }
        let tf = c.integration.tf.0;
        if !(tf > t0) {
            return Err(CliError::config(
                "integration.tf",
                format!("{tf} must exceed t0 = {t0}"),
            ));
        }
        if c.integration.samples < 2 {
            return Err(CliError::config(
                "integration.samples",
                "need at least 2 samples",
            ));
        }
        let integrator = integrator(&c.integration)?;
        if c.output.formats.is_empty() {
            return Err(CliError::config(
                "output.formats",
                "at least one format is required",
            ));
        }

        let schedules: Vec<(Option<f64>, TikhonovSchedule)> = match c.schedule.kind {
            ScheduleKindName::Power => {
                let qs = c
                    .schedule
                    .q
                    .as_ref()
                    .ok_or_else(|| CliError::config("schedule.q", "power schedules need q"))?
                    .to_vec();
                if qs.is_empty() {
                    return Err(CliError::config("schedule.q", "empty list"));
                }
                qs.into_iter()
                    .map(|q| {
                        TikhonovSchedule::power(q.0, t0)
                            .map(|s| (Some(q.0), s))
                            .map_err(|e| CliError::config("schedule.q", e.to_string()))
                    })
                    .collect::<CliResult<_>>()?
            }
            ScheduleKindName::Constant => {
                let value = c.schedule.value.ok_or_else(|| {
                    CliError::config("schedule.value", "constant schedules need value")
                })?;
                let s = TikhonovSchedule::constant(value.0, t0)
                    .map_err(|e| CliError::config("schedule.value", e.to_string()))?;
                vec![(None, s)]
            }
        };

        let systems = c.dynamics.system.to_vec();
        if systems.is_empty() {
            return Err(CliError::config("dynamics.system", "empty list"));
        }
        let checks = c.checks.as_ref().map(|ch| {
            let defaults = SamplingOptions::default();
            let opts = SamplingOptions {
                box_half_width: ch.box_half_width.map_or(defaults.box_half_width, |r| r.0),
                slack: ch.slack.map_or(defaults.slack, |r| r.0),
                execution: ch.execution,
            };
            (ch.trials, ch.seed, opts)
        });

        let mut runs = Vec::new();
        for system in dedup(&systems) {
            let params = dynamics(&c.dynamics, system)?;
            let per_schedule: &[(Option<f64>, TikhonovSchedule)] = match system {
                // the baseline ignores the schedule
                SystemKind::Tds => &schedules[..1],
                SystemKind::Ds => &schedules,
            };
            for (q, schedule) in per_schedule {
                let label = match (system, q) {
                    (SystemKind::Ds, Some(q)) => format!("ds_q{q:.4}"),
                    _ => system.label().to_string(),
                };
                runs.push(RunSpec {
                    label,
                    system,
                    q: if system == SystemKind::Ds { *q } else { None },
                    params,
                    schedule: schedule.clone(),
                    operator: op.clone(),
                    x0: x0.clone(),
                    v0: v0.clone(),
                    t0,
                    tf,
                    samples: c.integration.samples,
                    integrator: integrator.clone(),
                    x_star: x_star.clone(),
                    formats: c.output.formats.clone(),
                    checks,
                });
            }
        }
        Ok(runs)
    }
}

fn dedup(systems: &[SystemKind]) -> Vec<SystemKind> {
    let mut out = Vec::new();
    for s in systems {
        if !out.contains(s) {
            out.push(*s);
        }
    }
    out
}

/// Pulls the field name out of serde's "unknown field `x`" messages.
fn unknown_key(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    None
}

fn expect_dim(key: &str, v: &Vector, n: usize) -> CliResult<()> {
    if v.dim() == n {
        Ok(())
    } else {
        Err(CliError::config(
            key,
            format!("expected {n} entries, found {}", v.dim()),
        ))
    }
}

fn operator(b: &OperatorBlock) -> CliResult<OperatorSpec> {
    let rows: Vec<Vec<f64>> = b
        .matrix
        .iter()
        .map(|r| r.iter().map(|x| x.0).collect())
        .collect();
    let m =
        Matrix::from_rows(&rows).map_err(|e| CliError::config("operator.matrix", e.to_string()))?;
    let rho = b.rho.0;
    let cert = certify_comonotone(&m, rho)
        .map_err(|e| CliError::config("operator.matrix", e.to_string()))?;
    if !cert.holds {
        return Err(CliError::config(
            "operator.rho",
            format!(
                "matrix is not {rho}-comonotone (smallest eigenvalue {:.3e})",
                cert.witness_min_eigen
            ),
        ));
    }
    let eta = b.eta.0;
    let built = match (b.kind, &b.offset) {
        (OperatorKindName::Linear, None) => OperatorSpec::linear(m, rho, eta),
        (OperatorKindName::Linear, Some(_)) => {
            return Err(CliError::config(
                "operator.offset",
                "only affine operators take an offset",
            ))
        }
        (OperatorKindName::Affine, Some(off)) => {
            let off = reals(off);
            expect_dim("operator.offset", &off, m.n())?;
            OperatorSpec::affine(m, off, rho, eta)
        }
        (OperatorKindName::Affine, None) => {
            return Err(CliError::config(
                "operator.offset",
                "affine operators need an offset",
            ))
        }
    };
    built.map_err(|e| CliError::config("operator.eta", e.to_string()))
}

fn dynamics(b: &DynamicsBlock, system: SystemKind) -> CliResult<DynamicsParams> {
    let need = |v: Option<Real>, key: &str| {
        v.map(|r| r.0).ok_or_else(|| {
            CliError::config(
                format!("dynamics.{key}"),
                format!("required for system {}", system.label()),
            )
        })
    };
    let mut p = DynamicsParams::new(0.0, 0.0);
    match system {
        SystemKind::Ds => {
            p.gamma = need(b.gamma, "gamma")?;
            p.delta = need(b.delta, "delta")?;
            if !(p.gamma > 0.0) {
                return Err(CliError::config("dynamics.gamma", "must be positive"));
            }
        }
        SystemKind::Tds => {
            p.alpha = need(b.alpha, "alpha")?;
            p.beta = need(b.beta, "beta")?;
        }
    }
    // keep whatever else was configured for reporting
    p.gamma = b.gamma.map_or(p.gamma, |r| r.0);
    p.delta = b.delta.map_or(p.delta, |r| r.0);
    p.alpha = b.alpha.map_or(p.alpha, |r| r.0);
    p.beta = b.beta.map_or(p.beta, |r| r.0);
    Ok(p)
}

fn integrator(b: &IntegrationBlock) -> CliResult<IntegratorConfig> {
    let mut cfg = IntegratorConfig::default();
    let positive = |v: Option<Real>, key: &str, fallback: f64| match v {
        None => Ok(fallback),
        Some(r) if r.0 > 0.0 => Ok(r.0),
        Some(r) => Err(CliError::config(
            format!("integration.{key}"),
            format!("{} must be positive", r.0),
        )),
    };
    cfg.rel_tol = positive(b.rel_tol, "rel_tol", cfg.rel_tol)?;
    cfg.abs_tol = positive(b.abs_tol, "abs_tol", cfg.abs_tol)?;
    cfg.max_step = b
        .max_step
        .map(|r| positive(Some(r), "max_step", 0.0))
        .transpose()?;
    cfg.initial_step = b
        .initial_step
        .map(|r| positive(Some(r), "initial_step", 0.0))
        .transpose()?;
    Ok(cfg)
}
