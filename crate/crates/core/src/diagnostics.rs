//! Viscosity curve, energy, decay certificate and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{PhaseSample, Trajectory};
use crate::linalg::{solve_dense, Matrix, Vector};
use crate::operators::{OperatorKind, OperatorSpec};
use crate::parallel::{self, Execution};
use crate::schedules::{check_hypotheses, DynamicsParams, ScheduleKind, TikhonovSchedule, Verdict};

/// Target residual `‖A_η x + εx‖` for the viscosity point.
pub const VISCOSITY_TOLERANCE: f64 = 1e-11;
pub const MAX_VISCOSITY_ITERATIONS: usize = 1_000_000;
/// Sub-intervals per sample interval when integrating `μ` and the
/// certificate forcing term.
pub const QUADRATURE_REFINEMENT: usize = 64;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "eps = {eps} must be positive"
        )))
    }
}

/// Unique zero `x_ε` of `A_η + ε·Id`.
pub fn viscosity_point(op: &OperatorSpec, eps: f64) -> Result<Vector> {
    check_eps(eps)?;
    match op.kind() {
        OperatorKind::Linear(_) | OperatorKind::Affine { .. } => viscosity_direct(op, eps),
        OperatorKind::Custom(_) => viscosity_iterative(op, eps),
    }
}

/// For affine resolvents `J z = R z + J(0)` the zero solves
/// `((1/η + ε)I − R/η) x = J(0)/η`.
fn viscosity_direct(op: &OperatorSpec, eps: f64) -> Result<Vector> {
    let n = op.dim();
    let eta = op.eta();
    let j0 = op.resolvent(&Vector::zeros(n))?;
    let mut lhs = Matrix::identity(n).add_scaled(1.0 / eta + eps - 1.0, &Matrix::identity(n));
    for k in 0..n {
        let col = &op.resolvent(&Vector::unit(n, k))? - &j0;
        for i in 0..n {
            lhs[(i, k)] -= col[i] / eta;
        }
    }
    solve_dense(&lhs, &j0.scaled(1.0 / eta))
}

/// Damped fixed-point iteration `x ← x − τ(A_η x + εx)`; works for any
/// resolvent. Exposed so the direct path can be cross-checked.
pub fn viscosity_iterative(op: &OperatorSpec, eps: f64) -> Result<Vector> {
    check_eps(eps)?;
    let lip = 1.0 / op.cocoercivity() + eps;
    let tau = eps / (lip * lip);
    let mut x = Vector::zeros(op.dim());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_VISCOSITY_ITERATIONS {
        let mut g = op.yosida(&x)?;
        g.axpy(eps, &x);
        residual = g.norm();
        if residual <= VISCOSITY_TOLERANCE {
            return Ok(x);
        }
        x.axpy(-tau, &g);
    }
    Err(Error::NoConvergence {
        iterations: MAX_VISCOSITY_ITERATIONS,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub energy: f64,
    pub x_eps: Vector,
    /// `E/ε − ‖x−x_ε‖²`, `(4+2γ²)E − ‖ẋ‖²`, `E/(ρ+η) − ‖A_η x + εx_ε‖²`.
    pub bound_residuals: [f64; 3],
    /// `‖x − x_ε‖²`.
    pub gap_sq: f64,
    /// `‖A_η x + εx_ε‖²`.
    pub operator_sq: f64,
}

impl EnergyRecord {
    /// Worst residual scaled by `1 + E`.
    pub fn worst_relative_residual(&self) -> f64 {
        self.bound_residuals
            .iter()
            .fold(f64::INFINITY, |m, r| m.min(*r))
            / (1.0 + self.energy)
    }
}

pub fn energy(
    t: f64,
    x: &Vector,
    xdot: &Vector,
    p: &DynamicsParams,
    s: &TikhonovSchedule,
    op: &OperatorSpec,
) -> Result<EnergyRecord> {
    x.check_dim(op.dim())?;
    xdot.check_dim(op.dim())?;
    let eps = s.eval(t)?.eps;
    let x_eps = viscosity_point(op, eps)?;
    energy_with(t, x, xdot, p, eps, op, x_eps)
}

fn energy_with(
    t: f64,
    x: &Vector,
    xdot: &Vector,
    p: &DynamicsParams,
    eps: f64,
    op: &OperatorSpec,
    x_eps: Vector,
) -> Result<EnergyRecord> {
    let gap = x - &x_eps;
    let ax = op.yosida(x)?;

    let mut kinetic = gap.scaled(p.gamma * eps.sqrt());
    kinetic.axpy(1.0, xdot);
    let mut g = ax.clone();
    g.axpy(eps, x);
    let e = 0.5 * kinetic.norm_sq() + g.dot(&gap);

    let mut op_term = ax;
    op_term.axpy(eps, &x_eps);
    let gap_sq = gap.norm_sq();
    let operator_sq = op_term.norm_sq();
    let bound_residuals = [
        e / eps - gap_sq,
        (4.0 + 2.0 * p.gamma * p.gamma) * e - xdot.norm_sq(),
        e / op.cocoercivity() - operator_sq,
    ];
    Ok(EnergyRecord {
        t,
        energy: e,
        x_eps,
        bound_residuals,
        gap_sq,
        operator_sq,
    })
}

/// Energy at every sample of a trajectory.
pub fn energy_series(
    samples: &[PhaseSample],
    p: &DynamicsParams,
    s: &TikhonovSchedule,
    op: &OperatorSpec,
    exec: Execution,
) -> Result<Vec<EnergyRecord>> {
    parallel::map(exec, samples, |smp| {
        energy(smp.t, &smp.x, &smp.xdot, p, s, op)
    })
    .into_iter()
    .collect()
}

/// Largest value of `‖Δx_ε/Δt‖ − (−ε̇/ε)‖x_ε‖` over the grid, with the
/// derivative taken by central differences at interval midpoints.
pub fn lemma_ineq_check(op: &OperatorSpec, s: &TikhonovSchedule, t_grid: &[f64]) -> Result<f64> {
    if t_grid.len() < 2 {
        return Err(Error::InsufficientData(
            "lemma check needs at least two grid points".into(),
        ));
    }
    let curve = t_grid
        .iter()
        .map(|&t| viscosity_point(op, s.eval(t)?.eps))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = f64::NEG_INFINITY;
    for (w, x) in t_grid.windows(2).zip(curve.windows(2)) {
        let dt = w[1] - w[0];
        if !(dt > 0.0) {
            return Err(Error::DomainError(
                "grid must be strictly increasing".into(),
            ));
        }
        let mid = 0.5 * (w[0] + w[1]);
        let sv = s.eval(mid)?;
        let x_mid = viscosity_point(op, sv.eps)?;
        let lhs = (&x[1] - &x[0]).norm() / dt;
        let rhs = -sv.deps / sv.eps * x_mid.norm();
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    /// First sample time at or after the requested start.
    pub t1: f64,
    pub a_choice: f64,
    pub times: Vec<f64>,
    pub mu_samples: Vec<f64>,
    pub omega_samples: Vec<f64>,
    pub energy: Vec<f64>,
    pub bound_curve: Vec<f64>,
    pub satisfied: bool,
    /// Quadrature `ω` when the closed form was used for the bound.
    pub omega_quadrature: Option<Vec<f64>>,
    /// Largest relative gap between closed-form and quadrature `ω`.
    pub omega_max_rel_diff: Option<f64>,
}

pub const CERTIFICATE_REL_SLACK: f64 = 1e-6;
pub const CERTIFICATE_ABS_SLACK: f64 = 1e-9;

fn mu(s: &TikhonovSchedule, p: &DynamicsParams, t: f64) -> f64 {
    let sv = s.eval_unchecked(t);
    sv.eps.sqrt() * ((1.0 - 2.0 / (p.gamma * p.gamma)) * sv.d_inv_sqrt + p.delta - p.gamma)
}

/// `ε^{−5/2}ε̇² − ε̇`.
fn forcing(s: &TikhonovSchedule, t: f64) -> f64 {
    let sv = s.eval_unchecked(t);
    sv.deps * sv.deps / (sv.eps * sv.eps * sv.eps.sqrt()) - sv.deps
}

/// `ln ω(t) − ln ω(t1)` for power schedules.
fn log_omega_closed(q: f64, p: &DynamicsParams, t1: f64, t: f64) -> f64 {
    let expo = (2.0 - q) / 2.0;
    let delta0 = 2.0 * (p.delta - p.gamma) / (2.0 - q);
    (0.5 - 1.0 / (p.gamma * p.gamma)) * q * (t / t1).ln() + delta0 * (t.powf(expo) - t1.powf(expo))
}

fn refined_nodes(a: f64, b: f64) -> impl Iterator<Item = f64> {
    let h = (b - a) / QUADRATURE_REFINEMENT as f64;
    (0..=QUADRATURE_REFINEMENT).map(move |k| {
        if k == QUADRATURE_REFINEMENT {
            b
        } else {
            a + k as f64 * h
        }
    })
}

/// Lyapunov decay certificate started at the first sample `≥ t1`.
pub fn decay_certificate(
    traj: &Trajectory,
    p: &DynamicsParams,
    s: &TikhonovSchedule,
    op: &OperatorSpec,
    x_star: Option<&Vector>,
    t1: f64,
) -> Result<DecayCertificate> {
    let x_star = x_star.ok_or(Error::MissingReference)?;
    x_star.check_dim(op.dim())?;
    let all_times = traj.times();
    let first = *all_times
        .first()
        .ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    if !(t1 >= first) {
        return Err(Error::DomainError(format!(
            "t1 = {t1} precedes the trajectory start {first}"
        )));
    }

    let report = check_hypotheses(s, p, op, &all_times)?;
    let broken: Vec<_> = ["a", "b", "c", "d", "e"]
        .into_iter()
        .filter(|id| report.verdict(id) == Some(Verdict::Violated))
        .collect();
    if !broken.is_empty() {
        return Err(Error::HypothesisViolated(format!(
            "decay certificate requires conditions {}",
            broken.join(", ")
        )));
    }

    let start = traj
        .samples
        .iter()
        .position(|smp| smp.t >= t1)
        .ok_or_else(|| Error::InsufficientData(format!("no samples at or after t1 = {t1}")))?;
    let samples = &traj.samples[start..];
    let t1 = samples[0].t;
    let times: Vec<f64> = samples.iter().map(|smp| smp.t).collect();

    let a_choice = (2.0 * p.gamma - p.delta) * op.cocoercivity();
    let closed_q = match s.kind() {
        ScheduleKind::Power { q } => Some(*q),
        ScheduleKind::Custom { .. } => None,
    };

    // Both integrals use the trapezoid rule on a refined sub-grid and stay
    // in log space. `scaled_integral[k]` is ∫_{t1}^{t_k} f ω ds / ω(t_k).
    let mut log_omega_quad = vec![0.0; times.len()];
    let mut log_omega = vec![0.0; times.len()];
    let mut scaled_integral = vec![0.0; times.len()];
    for k in 1..times.len() {
        let nodes: Vec<f64> = refined_nodes(times[k - 1], times[k]).collect();
        let mut running = vec![log_omega_quad[k - 1]; nodes.len()];
        for j in 1..nodes.len() {
            running[j] = running[j - 1]
                + 0.5 * (nodes[j] - nodes[j - 1]) * (mu(s, p, nodes[j - 1]) + mu(s, p, nodes[j]));
        }
        log_omega_quad[k] = running[nodes.len() - 1];
        let node_log: Vec<f64> = match closed_q {
            Some(q) => nodes
                .iter()
                .map(|&t| log_omega_closed(q, p, t1, t))
                .collect(),
            None => running,
        };
        let lb = node_log[nodes.len() - 1];
        log_omega[k] = lb;
        let weight = |j: usize| forcing(s, nodes[j]) * (node_log[j] - lb).exp();
        let inc: f64 = (1..nodes.len())
            .map(|j| 0.5 * (nodes[j] - nodes[j - 1]) * (weight(j - 1) + weight(j)))
            .sum();
        scaled_integral[k] = scaled_integral[k - 1] * (log_omega[k - 1] - lb).exp() + inc;
    }

    let energies = samples
        .iter()
        .map(|smp| energy(smp.t, &smp.x, &smp.xdot, p, s, op).map(|r| r.energy))
        .collect::<Result<Vec<_>>>()?;
    let e1 = energies[0];
    let ref_sq = x_star.norm_sq();
    let bound_curve: Vec<f64> = log_omega
        .iter()
        .zip(&scaled_integral)
        .map(|(lw, j)| ref_sq / a_choice * j + e1 * (-lw).exp())
        .collect();
    let satisfied = energies
        .iter()
        .zip(&bound_curve)
        .all(|(e, b)| *e <= b * (1.0 + CERTIFICATE_REL_SLACK) + CERTIFICATE_ABS_SLACK);

    let (omega_quadrature, omega_max_rel_diff) = match closed_q {
        Some(_) => {
            let diff = log_omega
                .iter()
                .zip(&log_omega_quad)
                .map(|(c, q)| (q - c).exp_m1().abs())
                .fold(0.0, f64::max);
            (
                Some(log_omega_quad.iter().map(|l| l.exp()).collect()),
                Some(diff),
            )
        }
        None => (None, None),
    };

    Ok(DecayCertificate {
        t1,
        a_choice,
        mu_samples: times.iter().map(|&t| mu(s, p, t)).collect(),
        omega_samples: log_omega.iter().map(|l| l.exp()).collect(),
        times,
        energy: energies,
        bound_curve,
        satisfied,
        omega_quadrature,
        omega_max_rel_diff,
    })
}

/// Quantities whose decay rates are tracked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateQuantity {
    /// `‖x − x_ε‖²`
    PositionGap,
    /// `‖ẋ‖²`
    VelocitySq,
    /// `‖A_η x + εx_ε‖²`
    OperatorSq,
    Energy,
}

impl RateQuantity {
    pub fn label(self) -> &'static str {
        match self {
            RateQuantity::PositionGap => "position_gap_sq",
            RateQuantity::VelocitySq => "velocity_sq",
            RateQuantity::OperatorSq => "operator_sq",
            RateQuantity::Energy => "energy",
        }
    }

    /// Exponent obtained by following the Lyapunov argument through.
    pub fn theory_exponent(self, q: f64) -> f64 {
        let slow = q < 2.0 / 3.0;
        match (self, slow) {
            (RateQuantity::PositionGap, true) => q / 2.0 - 1.0,
            (RateQuantity::PositionGap, false) => 2.0 * q - 2.0,
            (_, true) => -q / 2.0 - 1.0,
            (_, false) => q - 2.0,
        }
    }

    /// Alternative exponent reading in which the velocity and
    /// operator regimes are exchanged.
    pub fn stated_exponent(self, q: f64) -> f64 {
        let slow = q < 2.0 / 3.0;
        match (self, slow) {
            (RateQuantity::PositionGap, _) | (RateQuantity::Energy, _) => self.theory_exponent(q),
            (_, true) => q - 2.0,
            (_, false) => -q / 2.0 - 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub quantity: String,
    pub window: (f64, f64),
    pub slope: f64,
    pub r_squared: f64,
    pub theory_exponent: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 10;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;

/// Least-squares slope of `ln value` against `ln t` over the trailing
/// `window_fraction` of log-time.
pub fn fit_rate(series: &[(f64, f64)], window_fraction: f64) -> Result<RateFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    if series.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points, need {MIN_FIT_POINTS}",
            series.len()
        )));
    }
    if let Some(&(t, _)) = series.iter().find(|(t, _)| !(*t > 0.0)) {
        return Err(Error::DomainError(format!("rate fit needs t > 0, got {t}")));
    }
    let lo = series
        .iter()
        .map(|p| p.0.ln())
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .map(|p| p.0.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let cut = hi - window_fraction * (hi - lo);
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| t.ln() >= cut - 1e-12)
        .collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in window, need {MIN_FIT_POINTS}",
            window.len()
        )));
    }
    if let Some(&(t, value)) = window.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonPositiveValue { t, value });
    }

    let n = window.len() as f64;
    let xs: Vec<f64> = window.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = window.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("window spans a single time".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let t_lo = window.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_hi = window.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(RateFit {
        quantity: String::new(),
        window: (t_lo, t_hi),
        slope,
        r_squared,
        theory_exponent: f64::NAN,
        points: window.len(),
    })
}

/// [`fit_rate`] with the quantity label and theory exponent attached.
pub fn fit_quantity(
    records: &[EnergyRecord],
    xdots: &[Vector],
    quantity: RateQuantity,
    q: Option<f64>,
    window_fraction: f64,
) -> Result<RateFit> {
    let series: Vec<(f64, f64)> = match quantity {
        RateQuantity::PositionGap => records.iter().map(|r| (r.t, r.gap_sq)).collect(),
        RateQuantity::OperatorSq => records.iter().map(|r| (r.t, r.operator_sq)).collect(),
        RateQuantity::Energy => records.iter().map(|r| (r.t, r.energy)).collect(),
        RateQuantity::VelocitySq => records
            .iter()
            .zip(xdots)
            .map(|(r, v)| (r.t, v.norm_sq()))
            .collect(),
    };
    let mut fit = fit_rate(&series, window_fraction)?;
    fit.quantity = quantity.label().to_string();
    fit.theory_exponent = q.map_or(f64::NAN, |q| quantity.theory_exponent(q));
    Ok(fit)
}
