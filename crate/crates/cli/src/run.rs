//! One experiment run: hypotheses, integration, diagnostics, artifacts.

use std::path::{Path, PathBuf};

use coflow::diagnostics::DEFAULT_WINDOW_FRACTION;
use coflow::schedules::log_grid;
use coflow::{
    check_averagedness_sample, check_cocoercivity_sample_with, check_hypotheses,
    check_lipschitz_sample, decay_certificate, energy_series, fit_quantity, fit_rate,
    lemma_ineq_check, DynamicsParams, EnergyRecord, Error, Execution, HypothesisReport,
    InertialProblem, RateFit, RateQuantity, SampleCheck, StepStats, SystemKind, Trajectory, Vector,
};
use serde::Serialize;

use crate::config::{Experiment, Format, RunSpec};
use crate::error::{CliError, CliResult};
use crate::output::{num, write_json, Table};

/// Largest relative grid spacing used for the viscosity-curve lemma check.
const LEMMA_SPACING: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct FinalState {
    pub t: f64,
    pub x: Vec<f64>,
    pub norm_x: f64,
    pub dist_to_reference: Option<f64>,
    pub norm_xdot: f64,
    pub norm_yosida: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitEntry {
    pub quantity: String,
    pub window: [f64; 2],
    pub slope: f64,
    pub r_squared: f64,
    pub theory_exponent: Option<f64>,
    pub stated_exponent: Option<f64>,
}

impl FitEntry {
    fn new(fit: RateFit, quantity: Option<RateQuantity>, q: Option<f64>) -> Self {
        let exps = quantity.zip(q);
        FitEntry {
            quantity: fit.quantity,
            window: [fit.window.0, fit.window.1],
            slope: fit.slope,
            r_squared: fit.r_squared,
            theory_exponent: exps.map(|(k, q)| k.theory_exponent(q)),
            stated_exponent: exps.map(|(k, q)| k.stated_exponent(q)),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateEntry {
    pub status: &'static str,
    pub t1: Option<f64>,
    pub a_choice: Option<f64>,
    pub omega_max_rel_diff: Option<f64>,
    pub reason: Option<String>,
}

impl CertificateEntry {
    fn skipped(status: &'static str, reason: impl Into<String>) -> Self {
        CertificateEntry {
            status,
            t1: None,
            a_choice: None,
            omega_max_rel_diff: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorChecks {
    pub trials: usize,
    pub seed: u64,
    pub cocoercivity: SampleCheck,
    pub averagedness: SampleCheck,
    pub lipschitz: SampleCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub system: SystemKind,
    pub q: Option<f64>,
    pub parameters: DynamicsParams,
    pub rho: f64,
    pub eta: f64,
    pub t0: f64,
    pub tf: f64,
    pub samples: usize,
    pub final_state: FinalState,
    pub warnings: Vec<String>,
    pub rate_fits: Vec<FitEntry>,
    pub certificate: Option<CertificateEntry>,
    /// Smallest bound residual divided by `1 + E` over all samples.
    pub min_relative_bound_residual: Option<f64>,
    pub lemma_violation: Option<f64>,
    pub operator_checks: Option<OperatorChecks>,
    pub integrator: StepStats,
    pub diagnostic_errors: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub label: String,
    pub directory: PathBuf,
    pub trajectory_csv: Option<PathBuf>,
    pub diagnostics_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub hypotheses_json: Option<PathBuf>,
    pub summary: RunSummary,
}

/// Hypothesis report for one run; the baseline only depends on the
/// resolvent condition.
pub fn hypotheses_for(run: &RunSpec) -> CliResult<HypothesisReport> {
    let grid = log_grid(run.t0, run.tf, run.samples);
    let mut report = check_hypotheses(&run.schedule, &run.params, &run.operator, &grid)?;
    if run.system == SystemKind::Tds {
        report.entries.retain(|e| e.id == "b");
    }
    Ok(report)
}

fn problem(run: &RunSpec) -> InertialProblem {
    InertialProblem {
        kind: run.system,
        params: run.params,
        schedule: run.schedule.clone(),
        operator: run.operator.clone(),
        x0: run.x0.clone(),
        v0: run.v0.clone(),
        t0: run.t0,
        tf: run.tf,
    }
}

fn dist(x: &Vector, reference: Option<&Vector>) -> Option<f64> {
    reference.map(|r| (x - r).norm())
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn trajectory_table(run: &RunSpec, traj: &Trajectory) -> CliResult<Table> {
    let n = run.operator.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("xdot_{i}")));
    header.extend(["dist_to_reference", "norm_xdot", "norm_yosida"].map(String::from));
    let mut table = Table::new(&header);
    for s in &traj.samples {
        let mut row = vec![num(s.t)];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.extend(s.xdot.iter().map(|v| num(*v)));
        row.push(opt(dist(&s.x, run.x_star.as_ref())));
        row.push(num(s.xdot.norm()));
        row.push(num(run.operator.yosida(&s.x)?.norm()));
        table.row(row);
    }
    Ok(table)
}

fn ds_diagnostics_table(records: &[EnergyRecord]) -> Table {
    let mut table = Table::new(&[
        "t",
        "energy",
        "gap_sq",
        "operator_sq",
        "residual_position",
        "residual_velocity",
        "residual_operator",
    ]);
    for r in records {
        let [a, b, c] = r.bound_residuals;
        table.row([r.t, r.energy, r.gap_sq, r.operator_sq, a, b, c].map(num));
    }
    table
}

struct TdsRow {
    t: f64,
    yosida_sq: f64,
    velocity_sq: f64,
    dist_sq: Option<f64>,
}

fn tds_rows(run: &RunSpec, traj: &Trajectory) -> CliResult<Vec<TdsRow>> {
    traj.samples
        .iter()
        .map(|s| {
            Ok(TdsRow {
                t: s.t,
                yosida_sq: run.operator.yosida(&s.x)?.norm_sq(),
                velocity_sq: s.xdot.norm_sq(),
                dist_sq: dist(&s.x, run.x_star.as_ref()).map(|d| d * d),
            })
        })
        .collect()
}

fn tds_diagnostics_table(rows: &[TdsRow]) -> Table {
    let mut table = Table::new(&["t", "yosida_sq", "velocity_sq", "dist_to_reference_sq"]);
    for r in rows {
        table.row([
            num(r.t),
            num(r.yosida_sq),
            num(r.velocity_sq),
            opt(r.dist_sq),
        ]);
    }
    table
}

fn operator_checks(run: &RunSpec) -> CliResult<Option<OperatorChecks>> {
    let Some((trials, seed, opts)) = run.checks else {
        return Ok(None);
    };
    let op = &run.operator;
    Ok(Some(OperatorChecks {
        trials,
        seed,
        cocoercivity: check_cocoercivity_sample_with(op, op.cocoercivity(), trials, seed, &opts)?,
        averagedness: check_averagedness_sample(op, trials, seed, &opts)?,
        lipschitz: check_lipschitz_sample(op, trials, seed, &opts)?,
    }))
}

fn lemma_grid(t0: f64, tf: f64) -> Vec<f64> {
    let n = ((tf / t0).ln() / LEMMA_SPACING).ceil() as usize + 1;
    log_grid(t0, tf, n.clamp(2, 100_000))
}

/// Runs one spec and writes its artifacts into `dir`.
pub fn execute_run(run: &RunSpec, dir: &Path) -> CliResult<RunArtifacts> {
    let grid = log_grid(run.t0, run.tf, run.samples);
    let report = hypotheses_for(run)?;
    let cfg = run.integrator.clone().with_samples(grid);
    let traj = problem(run).solve(&cfg)?;

    let mut warnings = report.warnings();
    let mut errors = Vec::new();
    let mut fits = Vec::new();
    let mut certificate = None;
    let mut min_residual = None;
    let mut lemma = None;

    let diagnostics = match run.system {
        SystemKind::Ds => {
            let records = energy_series(
                &traj.samples,
                &run.params,
                &run.schedule,
                &run.operator,
                Execution::Parallel,
            )?;
            let xdots: Vec<Vector> = traj.samples.iter().map(|s| s.xdot.clone()).collect();
            for quantity in [
                RateQuantity::PositionGap,
                RateQuantity::VelocitySq,
                RateQuantity::OperatorSq,
                RateQuantity::Energy,
            ] {
                match fit_quantity(&records, &xdots, quantity, run.q, DEFAULT_WINDOW_FRACTION) {
                    Ok(fit) => fits.push(FitEntry::new(fit, Some(quantity), run.q)),
                    Err(e) => errors.push(format!("rate fit {}: {e}", quantity.label())),
                }
            }
            let worst = records
                .iter()
                .map(EnergyRecord::worst_relative_residual)
                .fold(f64::INFINITY, f64::min);
            if worst < -1e-6 {
                warnings.push("bound_residuals".into());
            }
            min_residual = Some(worst);
            match lemma_ineq_check(&run.operator, &run.schedule, &lemma_grid(run.t0, run.tf)) {
                Ok(v) => lemma = Some(v),
                Err(e) => errors.push(format!("lemma check: {e}")),
            }
            certificate = Some(certify(run, &traj, &report, &mut errors));
            ds_diagnostics_table(&records)
        }
        SystemKind::Tds => {
            let rows = tds_rows(run, &traj)?;
            let mut series: Vec<(&str, Vec<(f64, f64)>)> = vec![
                (
                    "yosida_sq",
                    rows.iter().map(|r| (r.t, r.yosida_sq)).collect(),
                ),
                (
                    "velocity_sq",
                    rows.iter().map(|r| (r.t, r.velocity_sq)).collect(),
                ),
            ];
            if run.x_star.is_some() {
                series.push((
                    "dist_to_reference_sq",
                    rows.iter()
                        .map(|r| (r.t, r.dist_sq.unwrap_or(f64::NAN)))
                        .collect(),
                ));
            }
            for (name, s) in series {
                match fit_rate(&s, DEFAULT_WINDOW_FRACTION) {
                    Ok(mut fit) => {
                        fit.quantity = name.to_string();
                        fits.push(FitEntry::new(fit, None, None));
                    }
                    Err(e) => errors.push(format!("rate fit {name}: {e}")),
                }
            }
            tds_diagnostics_table(&rows)
        }
    };

    let last = traj.last();
    let summary = RunSummary {
        label: run.label.clone(),
        system: run.system,
        q: run.q,
        parameters: run.params,
        rho: run.operator.rho(),
        eta: run.operator.eta(),
        t0: run.t0,
        tf: run.tf,
        samples: run.samples,
        final_state: FinalState {
            t: last.t,
            x: last.x.as_slice().to_vec(),
            norm_x: last.x.norm(),
            dist_to_reference: dist(&last.x, run.x_star.as_ref()),
            norm_xdot: last.xdot.norm(),
            norm_yosida: run.operator.yosida(&last.x)?.norm(),
        },
        warnings,
        rate_fits: fits,
        certificate,
        min_relative_bound_residual: min_residual,
        lemma_violation: lemma,
        operator_checks: operator_checks(run)?,
        integrator: traj.stats.clone(),
        diagnostic_errors: errors,
    };

    let mut artifacts = RunArtifacts {
        label: run.label.clone(),
        directory: dir.to_path_buf(),
        trajectory_csv: None,
        diagnostics_csv: None,
        summary_json: None,
        hypotheses_json: None,
        summary,
    };
    if run.writes(Format::Csv) {
        let path = dir.join("trajectory.csv");
        trajectory_table(run, &traj)?.save(&path)?;
        artifacts.trajectory_csv = Some(path);
        let path = dir.join("diagnostics.csv");
        diagnostics.save(&path)?;
        artifacts.diagnostics_csv = Some(path);
    }
    if run.writes(Format::Json) {
        let path = dir.join("summary.json");
        write_json(&path, &artifacts.summary)?;
        artifacts.summary_json = Some(path);
        let path = dir.join("hypotheses.json");
        write_json(&path, &report)?;
        artifacts.hypotheses_json = Some(path);
    }
    Ok(artifacts)
}

fn certify(
    run: &RunSpec,
    traj: &Trajectory,
    report: &HypothesisReport,
    errors: &mut Vec<String>,
) -> CertificateEntry {
    let Some(t1) = report.t1() else {
        return CertificateEntry::skipped("skipped", "no start time t1 found on the sample grid");
    };
    if t1 > run.tf {
        return CertificateEntry::skipped("skipped", format!("t1 = {t1} lies beyond tf"));
    }
    match decay_certificate(
        traj,
        &run.params,
        &run.schedule,
        &run.operator,
        run.x_star.as_ref(),
        t1,
    ) {
        Ok(c) => CertificateEntry {
            status: if c.satisfied { "satisfied" } else { "violated" },
            t1: Some(c.t1),
            a_choice: Some(c.a_choice),
            omega_max_rel_diff: c.omega_max_rel_diff,
            reason: None,
        },
        Err(Error::MissingReference) => {
            CertificateEntry::skipped("skipped", "no reference solution configured")
        }
        Err(e @ Error::HypothesisViolated(_)) => {
            CertificateEntry::skipped("refused", e.to_string())
        }
        Err(e) => {
            errors.push(format!("decay certificate: {e}"));
            CertificateEntry::skipped("failed", e.to_string())
        }
    }
}

/// Runs every expanded entry of an experiment below `root`. A single run
/// writes straight into `root`; several runs get one subdirectory each.
pub fn execute(exp: &Experiment, root: &Path) -> CliResult<Vec<RunArtifacts>> {
    let runs = exp.runs()?;
    let single = runs.len() == 1;
    coflow::parallel::map(Execution::Parallel, &runs, |run| {
        let dir = if single {
            root.to_path_buf()
        } else {
            root.join(&run.label)
        };
        execute_run(run, &dir)
    })
    .into_iter()
    .collect()
}

pub fn run_experiment(config: &Path) -> CliResult<Vec<RunArtifacts>> {
    let exp = Experiment::load(config)?;
    let root = exp.output_dir.clone();
    execute(&exp, &root)
}

/// Fails when any requested diagnostic could not be computed.
pub fn ensure_complete(artifacts: &[RunArtifacts]) -> CliResult<()> {
    let failed = artifacts
        .iter()
        .filter(|a| !a.summary.diagnostic_errors.is_empty())
        .count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::PartialFailure {
            failed,
            total: artifacts.len(),
        })
    }
}
