//! Phase-space vector fields of the two inertial systems.
//!
//! The regularized system
//!
//! ```text
//! ẍ + δ√ε ẋ + (1/(γ√ε)) d/dt(A_η x + εx) + A_η x + εx = 0
//! ```
//!
//! is integrated in the first-order form
//!
//! ```text
//! ẋ = −y − g/(γ√ε)
//! ẏ = −δ√ε y + κ(t) g,     g = A_η x + εx,
//! κ(t) = (γ−δ)/γ − (1/γ) d/dt(1/√ε),
//! ```
//!
//! which never differentiates the operator along the trajectory. The
//! baseline system `ẍ + (α/t)ẋ + (β/t)A_η x + d/dt(A_η x) = 0` uses the
//! substitution `y = ẋ + A_η x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig, PhaseSample, Trajectory};
use crate::linalg::Vector;
use crate::operators::OperatorSpec;
use crate::parallel::{self, Execution};
use crate::schedules::{DynamicsParams, TikhonovSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Tikhonov-regularized inertial system.
    Ds,
    /// Newton-like inertial baseline without regularization.
    Tds,
}

impl SystemKind {
    pub fn label(self) -> &'static str {
        match self {
            SystemKind::Ds => "ds",
            SystemKind::Tds => "tds",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub x: Vector,
    pub y: Vector,
}

/// `g = A_η x + εx`.
fn regularized_operator(op: &OperatorSpec, x: &Vector, eps: f64) -> Result<Vector> {
    let mut g = op.yosida(x)?;
    g.axpy(eps, x);
    Ok(g)
}

pub fn ds_vector_field(
    state: &PhaseState,
    p: &DynamicsParams,
    s: &TikhonovSchedule,
    op: &OperatorSpec,
) -> Result<(Vector, Vector)> {
    state.y.check_dim(state.x.dim())?;
    let sv = s.eval(state.t)?;
    let root = sv.eps.sqrt();
    let g = regularized_operator(op, &state.x, sv.eps)?;
    let kappa = (p.gamma - p.delta) / p.gamma - sv.d_inv_sqrt / p.gamma;

    let mut xdot = -&state.y;
    xdot.axpy(-1.0 / (p.gamma * root), &g);
    let mut ydot = state.y.scaled(-p.delta * root);
    ydot.axpy(kappa, &g);
    Ok((xdot, ydot))
}

pub fn tds_vector_field(
    state: &PhaseState,
    p: &DynamicsParams,
    op: &OperatorSpec,
) -> Result<(Vector, Vector)> {
    if !(state.t > 0.0) {
        return Err(Error::DomainError(format!(
            "baseline field needs t > 0, got {}",
            state.t
        )));
    }
    state.y.check_dim(state.x.dim())?;
    let ax = op.yosida(&state.x)?;
    let xdot = &state.y - &ax;
    let mut ydot = xdot.scaled(-p.alpha / state.t);
    ydot.axpy(-p.beta / state.t, &ax);
    Ok((xdot, ydot))
}

/// Phase state matching position `x0` and velocity `v0` at `t0`.
pub fn initial_phase_state(
    kind: SystemKind,
    x0: &Vector,
    v0: &Vector,
    t0: f64,
    p: &DynamicsParams,
    s: &TikhonovSchedule,
    op: &OperatorSpec,
) -> Result<PhaseState> {
    if !(t0 > 0.0) {
        return Err(Error::DomainError(format!("t0 = {t0} must be positive")));
    }
    x0.check_dim(op.dim())?;
    v0.check_dim(op.dim())?;
    let y = match kind {
        SystemKind::Ds => {
            let sv = s.eval(t0)?;
            let g = regularized_operator(op, x0, sv.eps)?;
            let mut y = -v0;
            y.axpy(-1.0 / (p.gamma * sv.eps.sqrt()), &g);
            y
        }
        SystemKind::Tds => {
            let mut y = v0.clone();
            y.axpy(1.0, &op.yosida(x0)?);
            y
        }
    };
    Ok(PhaseState {
        t: t0,
        x: x0.clone(),
        y,
    })
}

/// Everything needed to integrate one system from given Cauchy data.
#[derive(Clone, Debug)]
pub struct InertialProblem {
    pub kind: SystemKind,
    pub params: DynamicsParams,
    pub schedule: TikhonovSchedule,
    pub operator: OperatorSpec,
    pub x0: Vector,
    pub v0: Vector,
    pub t0: f64,
    pub tf: f64,
}

impl InertialProblem {
    pub fn field(&self, state: &PhaseState) -> Result<(Vector, Vector)> {
        match self.kind {
            SystemKind::Ds => ds_vector_field(state, &self.params, &self.schedule, &self.operator),
            SystemKind::Tds => tds_vector_field(state, &self.params, &self.operator),
        }
    }

    /// `ẋ` recovered from the field equation.
    pub fn velocity(&self, state: &PhaseState) -> Result<Vector> {
        Ok(self.field(state)?.0)
    }

    pub fn initial_state(&self) -> Result<PhaseState> {
        initial_phase_state(
            self.kind,
            &self.x0,
            &self.v0,
            self.t0,
            &self.params,
            &self.schedule,
            &self.operator,
        )
    }

    fn split(&self, t: f64, z: &[f64]) -> PhaseState {
        let n = self.operator.dim();
        PhaseState {
            t,
            x: Vector::from(&z[..n]),
            y: Vector::from(&z[n..]),
        }
    }

    pub fn solve(&self, cfg: &IntegratorConfig) -> Result<Trajectory> {
        let n = self.operator.dim();
        let start = self.initial_state()?;
        let mut z0 = start.x.clone().into_inner();
        z0.extend_from_slice(start.y.as_slice());

        let sol = integrate(
            |t, z: &[f64], dz: &mut [f64]| {
                let (xd, yd) = self.field(&self.split(t, z))?;
                dz[..n].copy_from_slice(xd.as_slice());
                dz[n..].copy_from_slice(yd.as_slice());
                Ok(())
            },
            self.t0,
            &z0,
            self.tf,
            cfg,
        )?;

        let samples = sol
            .times
            .iter()
            .zip(&sol.states)
            .map(|(&t, z)| {
                let st = self.split(t, z);
                let xdot = self.velocity(&st)?;
                Ok(PhaseSample {
                    t,
                    x: st.x,
                    y: st.y,
                    xdot,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            samples,
            stats: sol.stats,
        })
    }
}

/// Solves independent problems, possibly in parallel. Results keep the
/// input order.
pub fn solve_batch(
    problems: &[InertialProblem],
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Vec<Result<Trajectory>> {
    parallel::map(exec, problems, |p| p.solve(cfg))
}
