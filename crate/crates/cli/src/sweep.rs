//! Parameter sweeps with an aggregated `rates.csv`.

use std::path::PathBuf;
use std::str::FromStr;

use coflow::{Error, Execution};

use crate::config::{Experiment, OneOrMany, Real};
use crate::error::{CliError, CliResult};
use crate::output::{num, Table};
use crate::run::{execute, RunArtifacts};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Q,
    Gamma,
    Delta,
    Eta,
    Tf,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Q => "q",
            SweepParam::Gamma => "gamma",
            SweepParam::Delta => "delta",
            SweepParam::Eta => "eta",
            SweepParam::Tf => "tf",
        }
    }

    fn apply(self, exp: &mut Experiment, value: f64) {
        let c = &mut exp.config;
        let v = Real(value);
        match self {
            SweepParam::Q => c.schedule.q = Some(OneOrMany::One(v)),
            SweepParam::Gamma => c.dynamics.gamma = Some(v),
            SweepParam::Delta => c.dynamics.delta = Some(v),
            SweepParam::Eta => c.operator.eta = v,
            SweepParam::Tf => c.integration.tf = v,
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "q" => SweepParam::Q,
            "gamma" => SweepParam::Gamma,
            "delta" => SweepParam::Delta,
            "eta" => SweepParam::Eta,
            "tf" => SweepParam::Tf,
            other => {
                return Err(format!(
                    "unknown sweep parameter `{other}` (q, gamma, delta, eta, tf)"
                ))
            }
        })
    }
}

/// Comma-separated reals; fractions such as `1/3` are accepted.
pub fn parse_values(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Real::parse(s).map_err(|m| CliError::config("--values", m)))
        .collect()
}

pub struct SweepOutcome {
    pub rates_csv: PathBuf,
    pub runs: Vec<(f64, CliResult<Vec<RunArtifacts>>)>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }
}

pub const RATES_HEADER: [&str; 11] = [
    "value",
    "run",
    "status",
    "quantity",
    "slope",
    "r_squared",
    "theory_exponent",
    "stated_exponent",
    "window_lo",
    "window_hi",
    "message",
];

pub fn sweep(exp: &Experiment, param: SweepParam, values: &[f64]) -> CliResult<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::InsufficientData("sweep needs at least one value".into()).into());
    }
    let root = exp.output_dir.join(format!("sweep_{}", param.name()));
    let jobs: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    let runs: Vec<(f64, CliResult<Vec<RunArtifacts>>)> =
        coflow::parallel::map(Execution::Parallel, &jobs, |&(i, v)| {
            let mut e = exp.clone();
            param.apply(&mut e, v);
            let dir = root.join(format!("{}_{i:02}", param.name()));
            (v, execute(&e, &dir))
        });

    let mut table = Table::new(&RATES_HEADER);
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for (v, result) in &runs {
        match result {
            Ok(arts) => {
                for a in arts {
                    for f in &a.summary.rate_fits {
                        table.row([
                            num(*v),
                            a.label.clone(),
                            "ok".into(),
                            f.quantity.clone(),
                            num(f.slope),
                            num(f.r_squared),
                            opt(f.theory_exponent),
                            opt(f.stated_exponent),
                            num(f.window[0]),
                            num(f.window[1]),
                            String::new(),
                        ]);
                    }
                    for msg in &a.summary.diagnostic_errors {
                        table.row([
                            num(*v),
                            a.label.clone(),
                            "diagnostic_error".into(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            msg.clone(),
                        ]);
                    }
                }
            }
            Err(e) => {
                let mut row = vec![num(*v), String::new(), e.kind().to_string()];
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(e.to_string());
                table.row(row);
            }
        }
    }
    let rates_csv = root.join("rates.csv");
    table.save(&rates_csv)?;
    Ok(SweepOutcome { rates_csv, runs })
}
