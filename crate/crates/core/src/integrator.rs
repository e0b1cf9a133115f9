//! Dormand–Prince 5(4) with PI step-size control and the standard
//! fourth-order continuous extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

// Butcher tableau.
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step-size controller.
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

/// Smallest admissible step relative to `|t|`.
pub const UNDERFLOW_RATIO: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step; `None` means the whole interval.
    pub max_step: Option<f64>,
    /// First trial step; `None` selects it automatically.
    pub initial_step: Option<f64>,
    /// Output times. Empty means "every accepted step".
    pub sample_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: None,
            initial_step: None,
            sample_times: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_samples(mut self, sample_times: Vec<f64>) -> Self {
        self.sample_times = sample_times;
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self, t0: f64, tf: f64) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be positive".into(),
            ));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter("max_step must be positive".into()));
            }
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter(
                    "initial_step must be positive".into(),
                ));
            }
        }
        if self.sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "sample times must be strictly increasing".into(),
            ));
        }
        if let (Some(&first), Some(&last)) = (self.sample_times.first(), self.sample_times.last()) {
            if first < t0 || last > tf {
                return Err(Error::InvalidParameter(format!(
                    "sample times [{first}, {last}] outside [{t0}, {tf}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub min_step: f64,
    pub max_step: f64,
}

/// Solution of a generic system sampled at the requested times.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
}

/// One point of a phase-space trajectory with the recovered velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub t: f64,
    pub x: Vector,
    pub y: Vector,
    pub xdot: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<PhaseSample>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &PhaseSample {
        self.samples.last().expect("trajectories are never empty")
    }
}

/// Step-by-step Dormand–Prince driver.
///
/// `field(t, y, dy)` writes the derivative into `dy`.
pub struct Dopri5<F> {
    field: F,
    n: usize,
    t: f64,
    tf: f64,
    h: f64,
    y: Vec<f64>,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    y_new: Vec<f64>,
    rtol: f64,
    atol: f64,
    hmax: f64,
    facold: f64,
    last_rejected: bool,
    // continuous extension of the last accepted step
    t_old: f64,
    h_old: f64,
    cont: [Vec<f64>; 5],
    stats: StepStats,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(mut field: F, t0: f64, y0: &[f64], tf: f64, cfg: &IntegratorConfig) -> Result<Self> {
        if !(tf > t0) {
            return Err(Error::InvalidParameter(format!(
                "tf = {tf} must exceed t0 = {t0}"
            )));
        }
        cfg.validate(t0, tf)?;
        let n = y0.len();
        let mut k1 = vec![0.0; n];
        eval(&mut field, t0, y0, &mut k1)?;
        let hmax = cfg.max_step.unwrap_or(tf - t0).min(tf - t0);
        let mut me = Dopri5 {
            field,
            n,
            t: t0,
            tf,
            h: 0.0,
            y: y0.to_vec(),
            k: [
                k1,
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
            ],
            ytmp: vec![0.0; n],
            y_new: vec![0.0; n],
            rtol: cfg.rel_tol,
            atol: cfg.abs_tol,
            hmax,
            facold: 1e-4,
            last_rejected: false,
            t_old: t0,
            h_old: 0.0,
            cont: [
                y0.to_vec(),
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
            ],
            stats: StepStats {
                evaluations: 1,
                min_step: f64::INFINITY,
                ..StepStats::default()
            },
        };
        me.h = match cfg.initial_step {
            Some(h) => h.min(hmax),
            None => me.initial_step()?,
        };
        Ok(me)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn stats(&self) -> &StepStats {
        &self.stats
    }

    pub fn finished(&self) -> bool {
        self.t >= self.tf
    }

    /// Start of the last accepted step.
    pub fn t_prev(&self) -> f64 {
        self.t_old
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.atol + self.rtol * a.abs().max(b.abs())
    }

    // Classical ‖f‖-based starting step.
    fn initial_step(&mut self) -> Result<f64> {
        let n = self.n as f64;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..self.n {
            let sk = self.atol + self.rtol * self.y[i].abs();
            dnf += (self.k[0][i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            0.01 * (dny / dnf).sqrt()
        };
        h = h.min(self.hmax);
        for i in 0..self.n {
            self.ytmp[i] = self.y[i] + h * self.k[0][i];
        }
        let mut f1 = vec![0.0; self.n];
        eval(&mut self.field, self.t + h, &self.ytmp, &mut f1)?;
        self.stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..self.n {
            let sk = self.atol + self.rtol * self.y[i].abs();
            der2 += ((f1[i] - self.k[0][i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        Ok((100.0 * h).min(h1).min(self.hmax))
    }

    /// Advances by one accepted step (rejected attempts are retried
    /// internally). Returns `false` once `tf` has been reached.
    pub fn advance(&mut self) -> Result<bool> {
        if self.finished() {
            return Ok(false);
        }
        let expo = 0.2 - PI_BETA * 0.75;
        loop {
            let mut h = self.h.min(self.hmax);
            if self.t + 1.01 * h >= self.tf {
                h = self.tf - self.t;
            }
            if !(h > UNDERFLOW_RATIO * self.t.abs()) || h <= 0.0 {
                return Err(Error::StepSizeUnderflow { t: self.t, h });
            }
            self.stage_all(h)?;

            let mut err = 0.0;
            for i in 0..self.n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let sk = self.scale(self.y[i], self.y_new[i]);
                err += (e / sk).powi(2);
            }
            let err = (err / self.n.max(1) as f64).sqrt();

            let fac11 = err.powf(expo);
            let fac =
                (fac11 / self.facold.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;

            if err <= 1.0 {
                self.facold = err.max(1e-4);
                self.stats.accepted += 1;
                self.stats.min_step = self.stats.min_step.min(h);
                self.stats.max_step = self.stats.max_step.max(h);
                self.store_dense(h);
                self.t_old = self.t;
                self.h_old = h;
                self.t = if h == self.tf - self.t {
                    self.tf
                } else {
                    self.t + h
                };
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.last_rejected = false;
                self.h = h_new;
                return Ok(true);
            }
            self.stats.rejected += 1;
            self.last_rejected = true;
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }

    fn stage_all(&mut self, h: f64) -> Result<()> {
        let n = self.n;
        let t = self.t;
        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                for i in 0..n {
                    self.ytmp[i] = self.y[i] + h * (0.0 $(+ $a * self.k[$j][i])*);
                }
                let (ytmp, k) = (&self.ytmp, &mut self.k);
                eval(&mut self.field, t + $c * h, ytmp, &mut k[$dst])?;
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for i in 0..n {
            self.y_new[i] = self.y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let (y_new, k) = (&self.y_new, &mut self.k);
        eval(&mut self.field, t + h, y_new, &mut k[6])?;
        self.stats.evaluations += 6;
        Ok(())
    }

    fn store_dense(&mut self, h: f64) {
        for i in 0..self.n {
            let dy = self.y_new[i] - self.y[i];
            let bspl = h * self.k[0][i] - dy;
            self.cont[0][i] = self.y[i];
            self.cont[1][i] = dy;
            self.cont[2][i] = bspl;
            self.cont[3][i] = dy - h * self.k[6][i] - bspl;
            self.cont[4][i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
    }

    /// Evaluates the continuous extension of the last accepted step at
    /// `t ∈ [t_prev, t]`. Endpoints reproduce the step values exactly.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        if t == self.t {
            out.copy_from_slice(&self.y);
            return;
        }
        if t == self.t_old || self.h_old == 0.0 {
            out.copy_from_slice(&self.cont[0]);
            return;
        }
        let theta = (t - self.t_old) / self.h_old;
        let theta1 = 1.0 - theta;
        for i in 0..self.n {
            out[i] = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + theta1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + theta1 * self.cont[4][i])));
        }
    }
}

fn eval<F>(field: &mut F, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    field(t, y, dy)?;
    if dy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDerivative { t });
    }
    Ok(())
}

/// Integrates `y' = field(t, y)` from `(t0, y0)` to `tf`, returning the
/// solution at `cfg.sample_times` (or at every accepted step when empty).
pub fn integrate<F>(
    field: F,
    t0: f64,
    y0: &[f64],
    tf: f64,
    cfg: &IntegratorConfig,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut solver = Dopri5::new(field, t0, y0, tf, cfg)?;
    let every_step = cfg.sample_times.is_empty();
    let mut times = Vec::with_capacity(cfg.sample_times.len());
    let mut states = Vec::with_capacity(cfg.sample_times.len());
    let mut pending = cfg.sample_times.iter().copied().peekable();

    if every_step {
        times.push(t0);
        states.push(y0.to_vec());
    }
    while let Some(&ts) = pending.peek() {
        if ts > t0 {
            break;
        }
        times.push(ts);
        states.push(y0.to_vec());
        pending.next();
    }

    while solver.advance()? {
        if every_step {
            times.push(solver.t());
            states.push(solver.y().to_vec());
            continue;
        }
        while let Some(&ts) = pending.peek() {
            if ts > solver.t() {
                break;
            }
            let mut out = vec![0.0; y0.len()];
            solver.interpolate(ts, &mut out);
            times.push(ts);
            states.push(out);
            pending.next();
        }
        if pending.peek().is_none() {
            break;
        }
    }
    Ok(DenseSolution {
        times,
        states,
        stats: solver.stats().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig::default().with_samples(vec![0.0, 1.0, 5.0]);
        let sol = integrate(decay, 0.0, &[1.0], 5.0, &cfg).unwrap();
        assert_eq!(sol.times, vec![0.0, 1.0, 5.0]);
        assert!((sol.states[1][0] - (-1f64).exp()).abs() < 1e-8);
        assert!((sol.states[2][0] - (-5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_field_is_constant() {
        let cfg = IntegratorConfig::default().with_samples(vec![0.5, 2.0, 3.0]);
        let sol = integrate(
            |_, _, dy: &mut [f64]| {
                dy.fill(0.0);
                Ok(())
            },
            0.5,
            &[1.5, -2.0],
            3.0,
            &cfg,
        )
        .unwrap();
        for s in &sol.states {
            assert_eq!(s, &vec![1.5, -2.0]);
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let tf = 2.0 * PI;
        let cfg = IntegratorConfig::default().with_samples(vec![tf]);
        let sol = integrate(oscillator, 0.0, &[1.0, 0.0], tf, &cfg).unwrap();
        let y = &sol.states[0];
        assert!((y[0] - 1.0).abs() < 1e-7 && y[1].abs() < 1e-7, "{y:?}");
        assert!((y[0] * y[0] + y[1] * y[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn dense_output_matches_step_endpoints() {
        let cfg = IntegratorConfig::default().with_tolerances(1e-6, 1e-9);
        let mut s = Dopri5::new(oscillator, 0.0, &[1.0, 0.0], 10.0, &cfg).unwrap();
        let mut prev = s.y().to_vec();
        let mut out = vec![0.0; 2];
        while s.advance().unwrap() {
            s.interpolate(s.t(), &mut out);
            for (a, b) in out.iter().zip(s.y()) {
                assert!((a - b).abs() <= 1e-13);
            }
            s.interpolate(s.t_prev(), &mut out);
            for (a, b) in out.iter().zip(&prev) {
                assert!((a - b).abs() <= 1e-13);
            }
            // the polynomial itself, evaluated just inside the step
            let t_in = s.t() - 1e-12 * (s.t() - s.t_prev());
            s.interpolate(t_in, &mut out);
            for (a, b) in out.iter().zip(s.y()) {
                assert!((a - b).abs() <= 1e-11);
            }
            prev = s.y().to_vec();
        }
        assert_eq!(s.t(), 10.0);
    }

    #[test]
    fn non_finite_field() {
        let err = integrate(
            |t, _, dy: &mut [f64]| {
                dy[0] = if t > 1.0 { f64::NAN } else { 1.0 };
                Ok(())
            },
            0.0,
            &[0.0],
            2.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteDerivative { .. }));
    }

    #[test]
    fn blow_up_underflows() {
        // y' = y², y(0) = 1 blows up at t = 1
        let err = integrate(
            |_, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            2.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::StepSizeUnderflow { .. } | Error::NonFiniteDerivative { .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn invalid_configs() {
        let bad = IntegratorConfig::default().with_samples(vec![1.0, 0.5]);
        assert!(integrate(decay, 0.0, &[1.0], 2.0, &bad).is_err());
        let outside = IntegratorConfig::default().with_samples(vec![3.0]);
        assert!(integrate(decay, 0.0, &[1.0], 2.0, &outside).is_err());
        assert!(integrate(decay, 1.0, &[1.0], 1.0, &IntegratorConfig::default()).is_err());
        let tol = IntegratorConfig::default().with_tolerances(0.0, 1e-9);
        assert!(integrate(decay, 0.0, &[1.0], 1.0, &tol).is_err());
    }

    #[test]
    fn every_step_mode_is_monotone() {
        let sol = integrate(decay, 0.0, &[1.0], 3.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(sol.times[0], 0.0);
        assert_eq!(*sol.times.last().unwrap(), 3.0);
        assert!(sol.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(sol.times.len(), sol.stats.accepted + 1);
    }
}
