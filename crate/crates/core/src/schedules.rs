//! Tikhonov schedules `ε(t)`, dynamics parameters, and the hypothesis
//! report used to decide which convergence guarantees apply to a run.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OperatorSpec;

/// Magnitude below which a decaying tail counts as "tending to zero".
pub const TREND_THRESHOLD: f64 = 1e-3;

/// Fraction of the grid (from the end) inspected by trend verdicts.
const TAIL_FRACTION: f64 = 0.25;

/// Maximum number of `(t, value)` pairs kept as evidence per condition.
const EVIDENCE_POINTS: usize = 8;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScheduleKind {
    /// `ε(t) = t^{-q}`, `0 < q < 1`.
    Power { q: f64 },
    /// `ε`, `ε̇`, `ε̈` supplied as callables.
    Custom {
        eps: ScalarFn,
        deps: ScalarFn,
        ddeps: ScalarFn,
    },
}

impl fmt::Debug for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Power { q } => f.debug_struct("Power").field("q", q).finish(),
            ScheduleKind::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TikhonovSchedule {
    kind: ScheduleKind,
    t0: f64,
}

/// `ε`, `ε̇`, `ε̈` and `d/dt(1/√ε)` at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValues {
    pub eps: f64,
    pub deps: f64,
    pub ddeps: f64,
    pub d_inv_sqrt: f64,
}

fn check_t0(t0: f64) -> Result<()> {
    if !(t0 > 0.0) || !t0.is_finite() {
        return Err(Error::DomainError(format!("t0 = {t0} must be positive")));
    }
    Ok(())
}

impl TikhonovSchedule {
    pub fn power(q: f64, t0: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "q = {q} must lie in (0, 1)"
            )));
        }
        check_t0(t0)?;
        Ok(TikhonovSchedule {
            kind: ScheduleKind::Power { q },
            t0,
        })
    }

    pub fn custom(t0: f64, eps: ScalarFn, deps: ScalarFn, ddeps: ScalarFn) -> Result<Self> {
        check_t0(t0)?;
        Ok(TikhonovSchedule {
            kind: ScheduleKind::Custom { eps, deps, ddeps },
            t0,
        })
    }

    /// `ε ≡ c`. Violates the vanishing requirement; useful as a control.
    pub fn constant(c: f64, t0: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "constant epsilon {c} must be positive"
            )));
        }
        Self::custom(
            t0,
            Arc::new(move |_| c),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
        )
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Exponent `q` of the power family, if this is one.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::Power { q } => Some(q),
            ScheduleKind::Custom { .. } => None,
        }
    }

    pub fn with_t0(&self, t0: f64) -> Result<Self> {
        check_t0(t0)?;
        Ok(TikhonovSchedule {
            kind: self.kind.clone(),
            t0,
        })
    }

    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        if !(t >= self.t0) {
            return Err(Error::DomainError(format!(
                "t = {t} precedes schedule start t0 = {}",
                self.t0
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> ScheduleValues {
        match &self.kind {
            ScheduleKind::Power { q } => {
                let q = *q;
                let eps = t.powf(-q);
                ScheduleValues {
                    eps,
                    deps: -q * eps / t,
                    ddeps: q * (q + 1.0) * eps / (t * t),
                    d_inv_sqrt: 0.5 * q * t.powf(0.5 * q - 1.0),
                }
            }
            ScheduleKind::Custom { eps, deps, ddeps } => {
                let e = eps(t);
                let de = deps(t);
                ScheduleValues {
                    eps: e,
                    deps: de,
                    ddeps: ddeps(t),
                    d_inv_sqrt: -de / (2.0 * e * e.sqrt()),
                }
            }
        }
    }
}

/// Free-function form of [`TikhonovSchedule::eval`].
pub fn eval_schedule(s: &TikhonovSchedule, t: f64) -> Result<ScheduleValues> {
    s.eval(t)
}

/// Coefficients of the two inertial systems: `gamma`, `delta` for the
/// Tikhonov-regularized system, `alpha`, `beta` for the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl DynamicsParams {
    pub fn new(gamma: f64, delta: f64) -> Self {
        DynamicsParams {
            gamma,
            delta,
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn baseline(alpha: f64, beta: f64) -> Self {
        DynamicsParams {
            gamma: 0.0,
            delta: 0.0,
            alpha,
            beta,
        }
    }
}

/// Open interval `(γ, γ + γ/(γ²/2 + 1))` of admissible `δ`.
pub fn delta_window(gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::DomainError(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    Ok((gamma, gamma + gamma / (0.5 * gamma * gamma + 1.0)))
}

/// Logarithmically spaced grid on `[start, end]`.
pub fn log_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    assert!(start > 0.0 && end >= start && n >= 2);
    let (a, b) = (start.ln(), end.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = start;
    g[n - 1] = end;
    g
}

/// Grid used when none is given: 200 log-spaced points on `[t0, 100]`.
pub fn default_grid(t0: f64) -> Vec<f64> {
    log_grid(t0, 100f64.max(t0), 200)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
    Indeterminate,
}

/// How a verdict was reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Exact comparison of parameters.
    Exact,
    /// Checked at every grid point.
    Pointwise,
    /// Decided in closed form for the power family.
    Analytic,
    /// Tail behaviour on the grid; suggestive only.
    Trend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEntry {
    pub id: String,
    pub name: String,
    pub verdict: Verdict,
    pub basis: Basis,
    pub t1_estimate: Option<f64>,
    pub evidence: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub entries: Vec<HypothesisEntry>,
}

impl HypothesisReport {
    pub fn get(&self, id: &str) -> Option<&HypothesisEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn verdict(&self, id: &str) -> Option<Verdict> {
        self.get(id).map(|e| e.verdict)
    }

    /// Ids of conditions that are not satisfied.
    pub fn warnings(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.verdict != Verdict::Satisfied)
            .map(|e| e.id.clone())
            .collect()
    }

    /// `t₁` from the Hessian-regularity condition, when one was found.
    pub fn t1(&self) -> Option<f64> {
        self.get("e").and_then(|e| e.t1_estimate)
    }
}

fn evidence(ts: &[f64], vs: &[f64]) -> Vec<[f64; 2]> {
    let n = ts.len();
    if n <= EVIDENCE_POINTS {
        return ts.iter().zip(vs).map(|(t, v)| [*t, *v]).collect();
    }
    (0..EVIDENCE_POINTS)
        .map(|k| {
            let i = k * (n - 1) / (EVIDENCE_POINTS - 1);
            [ts[i], vs[i]]
        })
        .collect()
}

fn tail(values: &[f64]) -> &[f64] {
    let n = values.len();
    let k = ((n as f64 * TAIL_FRACTION).ceil() as usize).clamp(2.min(n), n);
    &values[n - k..]
}

/// Trend verdict for "`values` tends to zero".
fn vanishing_trend(values: &[f64]) -> Verdict {
    if values.iter().any(|v| !v.is_finite()) {
        return Verdict::Indeterminate;
    }
    let mags: Vec<f64> = tail(values).iter().map(|v| v.abs()).collect();
    let (first, last) = (mags[0], *mags.last().unwrap());
    let nonincreasing = mags.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    if nonincreasing && last <= TREND_THRESHOLD {
        Verdict::Satisfied
    } else if last >= first && last > TREND_THRESHOLD {
        Verdict::Violated
    } else {
        Verdict::Indeterminate
    }
}

/// Trend verdict for "the cumulative integral grows without bound":
/// increments over a log-spaced tail must not shrink.
fn divergence_trend(cumulative: &[f64]) -> Verdict {
    let incr: Vec<f64> = tail(cumulative).windows(2).map(|w| w[1] - w[0]).collect();
    if incr.is_empty() || incr.iter().any(|v| !v.is_finite()) {
        return Verdict::Indeterminate;
    }
    if incr.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)) && incr[0] > 0.0 {
        Verdict::Satisfied
    } else {
        Verdict::Indeterminate
    }
}

fn entry(
    id: &str,
    name: &str,
    verdict: Verdict,
    basis: Basis,
    t1: Option<f64>,
    evidence: Vec<[f64; 2]>,
) -> HypothesisEntry {
    HypothesisEntry {
        id: id.into(),
        name: name.into(),
        verdict,
        basis,
        t1_estimate: t1,
        evidence,
    }
}

fn from_bool(ok: bool) -> Verdict {
    if ok {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    }
}

/// Evaluates every standing hypothesis and sufficient condition on a time
/// grid. Asymptotic conditions get trend verdicts unless the schedule is a
/// power law, in which case they are decided in closed form.
pub fn check_hypotheses(
    s: &TikhonovSchedule,
    p: &DynamicsParams,
    op: &OperatorSpec,
    t_grid: &[f64],
) -> Result<HypothesisReport> {
    if t_grid.len() < 2 {
        return Err(Error::InsufficientData(
            "hypothesis grid needs at least two points".into(),
        ));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DomainError(
            "hypothesis grid must be strictly ascending".into(),
        ));
    }
    let vals: Vec<ScheduleValues> = t_grid.iter().map(|&t| s.eval(t)).collect::<Result<_>>()?;
    let ts = t_grid;
    let q = s.power_exponent();
    let (gamma, delta) = (p.gamma, p.delta);
    let mut entries = Vec::with_capacity(7);

    // (a)
    let eps: Vec<f64> = vals.iter().map(|v| v.eps).collect();
    let monotone =
        vals.iter().all(|v| v.eps > 0.0 && v.deps <= 0.0) && eps.windows(2).all(|w| w[1] <= w[0]);
    let (verdict, basis) = match q {
        Some(_) => (from_bool(monotone), Basis::Analytic),
        None if !monotone => (Verdict::Violated, Basis::Pointwise),
        None => (vanishing_trend(&eps), Basis::Trend),
    };
    entries.push(entry(
        "a",
        "epsilon positive, nonincreasing, vanishing",
        verdict,
        basis,
        None,
        evidence(ts, &eps),
    ));

    // (b)
    let bound = (-2.0 * op.rho()).max(0.0);
    entries.push(entry(
        "b",
        "eta > max(-2 rho, 0)",
        from_bool(op.eta() > bound),
        Basis::Exact,
        None,
        vec![[op.eta(), bound]],
    ));

    // (c)
    let window = delta_window(gamma).ok();
    let inside = window.is_some_and(|(lo, hi)| delta > lo && delta < hi);
    entries.push(entry(
        "c",
        "gamma < delta < gamma + gamma/(gamma^2/2 + 1)",
        from_bool(inside),
        Basis::Exact,
        None,
        window
            .map(|(lo, hi)| vec![[lo, hi], [delta, delta]])
            .unwrap_or_default(),
    ));

    // (d)
    let dinv: Vec<f64> = vals.iter().map(|v| v.d_inv_sqrt).collect();
    let (verdict, basis) = match q {
        // (q/2) t^{q/2 - 1} with q/2 - 1 < 0
        Some(_) => (Verdict::Satisfied, Basis::Analytic),
        None => (vanishing_trend(&dinv), Basis::Trend),
    };
    entries.push(entry(
        "d",
        "d/dt (1/sqrt(epsilon)) -> 0",
        verdict,
        basis,
        None,
        evidence(ts, &dinv),
    ));

    // (e)
    let margin: Vec<f64> = vals
        .iter()
        .map(|v| -0.25 * (delta - gamma) * v.deps - v.ddeps / v.eps.sqrt())
        .collect();
    let mut t1 = None;
    for i in (0..ts.len()).rev() {
        if margin[i] >= 0.0 {
            t1 = Some(ts[i]);
        } else {
            break;
        }
    }
    let (verdict, basis, t1) = match q {
        Some(q) if delta > gamma => {
            // ratio of the two sides is 4(q+1)/(δ−γ) · t^{q/2−1}
            let analytic = (4.0 * (q + 1.0) / (delta - gamma)).powf(1.0 / (1.0 - 0.5 * q));
            (
                Verdict::Satisfied,
                Basis::Analytic,
                t1.or(Some(analytic.max(s.t0()))),
            )
        }
        Some(_) => (Verdict::Violated, Basis::Analytic, None),
        None => (from_bool(t1.is_some()), Basis::Pointwise, t1),
    };
    entries.push(entry(
        "e",
        "eps^{-1/2} eps'' <= -(delta - gamma) eps' / 4 from t1 on",
        verdict,
        basis,
        t1,
        evidence(ts, &margin),
    ));

    // (f)
    let power = -2.0 - 1.0 / (gamma * gamma);
    let fvals: Vec<f64> = vals.iter().map(|v| v.eps.powf(power) * v.deps).collect();
    let (verdict, basis) = match q {
        // -q t^{q(1 + 1/γ²) - 1}
        Some(q) => (
            from_bool(q * (1.0 + 1.0 / (gamma * gamma)) - 1.0 < 0.0),
            Basis::Analytic,
        ),
        None => (vanishing_trend(&fvals), Basis::Trend),
    };
    entries.push(entry(
        "f",
        "eps^{-2 - 1/gamma^2} eps' -> 0",
        verdict,
        basis,
        None,
        evidence(ts, &fvals),
    ));

    // (g)
    let mut cumulative = vec![0.0; ts.len()];
    for i in 1..ts.len() {
        cumulative[i] = cumulative[i - 1]
            + 0.5 * (ts[i] - ts[i - 1]) * (vals[i].eps.sqrt() + vals[i - 1].eps.sqrt());
    }
    let (verdict, basis) = match q {
        // ∫ t^{-q/2} diverges for q < 2
        Some(_) => (Verdict::Satisfied, Basis::Analytic),
        None => (divergence_trend(&cumulative), Basis::Trend),
    };
    entries.push(entry(
        "g",
        "integral of sqrt(epsilon) diverges",
        verdict,
        basis,
        None,
        evidence(ts, &cumulative),
    ));

    Ok(HypothesisReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_relative_eq;

    fn example_op() -> OperatorSpec {
        OperatorSpec::linear(Matrix::diag(&[1.0, 0.0, -1.0]), -1.0, 3.0).unwrap()
    }

    #[test]
    fn power_half_at_four() {
        let v = TikhonovSchedule::power(0.5, 0.1)
            .unwrap()
            .eval(4.0)
            .unwrap();
        assert_relative_eq!(v.eps, 0.5, max_relative = 1e-15);
        assert_relative_eq!(v.deps, -1.0 / 16.0, max_relative = 1e-15);
        assert_relative_eq!(v.ddeps, 3.0 / 128.0, max_relative = 1e-15);
        assert_relative_eq!(v.d_inv_sqrt, 0.25 * 4f64.powf(-0.75), max_relative = 1e-14);
        assert_relative_eq!(v.d_inv_sqrt, 0.088_388_347_648_318_44, max_relative = 1e-12);
    }

    #[test]
    fn power_at_one() {
        for q in [0.1, 0.5, 0.9] {
            let v = TikhonovSchedule::power(q, 0.5).unwrap().eval(1.0).unwrap();
            assert_eq!(v.eps, 1.0);
            assert_relative_eq!(v.deps, -q, max_relative = 1e-15);
            assert_relative_eq!(v.ddeps, q * (q + 1.0), max_relative = 1e-15);
        }
    }

    #[test]
    fn constant_schedule() {
        let v = TikhonovSchedule::constant(0.3, 1.0)
            .unwrap()
            .eval(5.0)
            .unwrap();
        assert_eq!((v.eps, v.deps, v.ddeps, v.d_inv_sqrt), (0.3, 0.0, 0.0, 0.0));
    }

    #[test]
    fn domain_errors() {
        let s = TikhonovSchedule::power(0.5, 1.0).unwrap();
        assert!(matches!(s.eval(0.5), Err(Error::DomainError(_))));
        assert!(TikhonovSchedule::power(1.0, 1.0).is_err());
        assert!(TikhonovSchedule::power(0.5, 0.0).is_err());
    }

    #[test]
    fn windows() {
        let (lo, hi) = delta_window(1.0).unwrap();
        assert_eq!(lo, 1.0);
        assert_relative_eq!(hi, 5.0 / 3.0, max_relative = 1e-15);
        let (lo, hi) = delta_window(2.0).unwrap();
        assert_eq!(lo, 2.0);
        assert_relative_eq!(hi, 8.0 / 3.0, max_relative = 1e-15);
        assert!(matches!(delta_window(0.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn third_power_all_satisfied() {
        let s = TikhonovSchedule::power(1.0 / 3.0, 0.1).unwrap();
        let p = DynamicsParams::new(1.0, 4.0 / 3.0);
        let r = check_hypotheses(&s, &p, &example_op(), &default_grid(0.1)).unwrap();
        assert_eq!(r.entries.len(), 7);
        for e in &r.entries {
            assert_eq!(e.verdict, Verdict::Satisfied, "{e:?}");
        }
        // (4(q+1)/(δ−γ))^{1/(1−q/2)} = 16^{1.2} ≈ 27.86; the grid value is the
        // first grid point at or past it.
        let t1 = r.t1().unwrap();
        assert!(t1 >= 16f64.powf(1.2) && t1 < 16f64.powf(1.2) * 1.04, "{t1}");
        assert!(r.warnings().is_empty());
    }

    #[test]
    fn fast_power_fails_f() {
        let s = TikhonovSchedule::power(0.6, 0.1).unwrap();
        let p = DynamicsParams::new(1.0, 4.0 / 3.0);
        let r = check_hypotheses(&s, &p, &example_op(), &default_grid(0.1)).unwrap();
        assert_eq!(r.verdict("f"), Some(Verdict::Violated));
        assert_eq!(r.warnings(), vec!["f".to_string()]);
    }

    #[test]
    fn delta_equal_gamma_fails_c() {
        let s = TikhonovSchedule::power(0.5, 0.1).unwrap();
        let p = DynamicsParams::new(1.0, 1.0);
        let r = check_hypotheses(&s, &p, &example_op(), &default_grid(0.1)).unwrap();
        assert_eq!(r.verdict("c"), Some(Verdict::Violated));
        assert_eq!(r.verdict("e"), Some(Verdict::Violated));
    }

    #[test]
    fn constant_schedule_fails_vanishing() {
        let s = TikhonovSchedule::constant(0.5, 0.1).unwrap();
        let p = DynamicsParams::new(1.0, 4.0 / 3.0);
        let r = check_hypotheses(&s, &p, &example_op(), &default_grid(0.1)).unwrap();
        assert_eq!(r.verdict("a"), Some(Verdict::Violated));
        assert_eq!(r.verdict("d"), Some(Verdict::Satisfied));
        assert_eq!(r.get("a").unwrap().basis, Basis::Trend);
    }

    #[test]
    fn custom_power_matches_analytic_trends() {
        // t^{-1/3} written as a custom schedule, on a grid long enough for
        // the trend thresholds
        let q = 1.0 / 3.0;
        let s = TikhonovSchedule::custom(
            0.1,
            Arc::new(move |t: f64| t.powf(-q)),
            Arc::new(move |t: f64| -q * t.powf(-q - 1.0)),
            Arc::new(move |t: f64| q * (q + 1.0) * t.powf(-q - 2.0)),
        )
        .unwrap();
        let p = DynamicsParams::new(1.0, 4.0 / 3.0);
        let grid = log_grid(0.1, 1e12, 400);
        let r = check_hypotheses(&s, &p, &example_op(), &grid).unwrap();
        for id in ["a", "d", "e", "f", "g"] {
            assert_eq!(r.verdict(id), Some(Verdict::Satisfied), "{id}");
            if id != "e" {
                assert_eq!(r.get(id).unwrap().basis, Basis::Trend);
            }
        }
    }

    #[test]
    fn bad_grids() {
        let s = TikhonovSchedule::power(0.5, 1.0).unwrap();
        let p = DynamicsParams::new(1.0, 1.2);
        let op = example_op();
        assert!(check_hypotheses(&s, &p, &op, &[2.0]).is_err());
        assert!(check_hypotheses(&s, &p, &op, &[2.0, 1.5]).is_err());
        assert!(check_hypotheses(&s, &p, &op, &[0.5, 2.0]).is_err());
    }
}
