use coflow::schedules::log_grid;
use coflow::*;

fn example_op() -> OperatorSpec {
    OperatorSpec::linear(Matrix::diag(&[1.0, 0.0, -1.0]), -1.0, 3.0).unwrap()
}

fn problem(kind: SystemKind) -> InertialProblem {
    let params = match kind {
        SystemKind::Ds => DynamicsParams::new(1.0, 4.0 / 3.0),
        SystemKind::Tds => DynamicsParams::baseline(4.0 / 3.0, 1.0),
    };
    InertialProblem {
        kind,
        params,
        schedule: TikhonovSchedule::power(0.5, 0.1).unwrap(),
        operator: example_op(),
        x0: Vector::new(vec![1.0, 1.0, 1.0]),
        v0: Vector::new(vec![1.0, 2.0, 3.0]),
        t0: 0.1,
        tf: 100.0,
    }
}

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default().with_samples(log_grid(0.1, 100.0, 120))
}

/// Moves a phase state by `h` along the exact field (first-order step).
fn shifted(p: &InertialProblem, st: &PhaseState, h: f64) -> PhaseState {
    let (xd, yd) = p.field(st).unwrap();
    let mut x = st.x.clone();
    x.axpy(h, &xd);
    let mut y = st.y.clone();
    y.axpy(h, &yd);
    PhaseState { t: st.t + h, x, y }
}

/// `d/dt φ(t, x(t), ẋ(t))` by central differences along the flow; the
/// symmetric second-order terms cancel.
fn flow_derivative<F>(p: &InertialProblem, st: &PhaseState, h: f64, phi: F) -> Vector
where
    F: Fn(&PhaseState, &Vector) -> Vector,
{
    let fwd = shifted(p, st, h);
    let bwd = shifted(p, st, -h);
    let a = phi(&fwd, &p.velocity(&fwd).unwrap());
    let b = phi(&bwd, &p.velocity(&bwd).unwrap());
    (&a - &b).scaled(0.5 / h)
}

#[test]
fn ds_samples_satisfy_reconstruction_identity() {
    let p = problem(SystemKind::Ds);
    let traj = p.solve(&cfg()).unwrap();
    for smp in &traj.samples {
        let eps = p.schedule.eval(smp.t).unwrap().eps;
        let mut g = p.operator.yosida(&smp.x).unwrap();
        g.axpy(eps, &smp.x);
        let mut r = &smp.xdot + &smp.y;
        r.axpy(1.0 / (p.params.gamma * eps.sqrt()), &g);
        assert!(r.norm() <= 1e-12 * (1.0 + smp.y.norm()));
    }
}

#[test]
fn ds_field_reproduces_second_order_equation() {
    let p = problem(SystemKind::Ds);
    let traj = p.solve(&cfg()).unwrap();
    let (gamma, delta) = (p.params.gamma, p.params.delta);
    for smp in traj.samples.iter().skip(1).step_by(7) {
        let st = PhaseState {
            t: smp.t,
            x: smp.x.clone(),
            y: smp.y.clone(),
        };
        let h = 1e-5 * smp.t;
        let xdd = flow_derivative(&p, &st, h, |_, v| v.clone());
        let regularized = |s: &PhaseState, _: &Vector| {
            let eps = p.schedule.eval(s.t).unwrap().eps;
            let mut g = p.operator.yosida(&s.x).unwrap();
            g.axpy(eps, &s.x);
            g
        };
        let gdot = flow_derivative(&p, &st, h, regularized);
        let g = regularized(&st, &smp.xdot);
        let root = p.schedule.eval(smp.t).unwrap().eps.sqrt();

        let mut r = xdd;
        r.axpy(delta * root, &smp.xdot);
        r.axpy(1.0 / (gamma * root), &gdot);
        r.axpy(1.0, &g);
        let scale = 1.0 + g.norm() + smp.xdot.norm();
        assert!(
            r.norm() <= 1e-6 * scale,
            "t = {}: residual {}",
            smp.t,
            r.norm()
        );
    }
}

#[test]
fn tds_field_reproduces_second_order_equation() {
    let p = problem(SystemKind::Tds);
    let traj = p.solve(&cfg()).unwrap();
    let (alpha, beta) = (p.params.alpha, p.params.beta);
    for smp in traj.samples.iter().skip(1).step_by(7) {
        let st = PhaseState {
            t: smp.t,
            x: smp.x.clone(),
            y: smp.y.clone(),
        };
        let h = 1e-5 * smp.t;
        let xdd = flow_derivative(&p, &st, h, |_, v| v.clone());
        let adot = flow_derivative(&p, &st, h, |s, _| p.operator.yosida(&s.x).unwrap());
        let ax = p.operator.yosida(&smp.x).unwrap();

        let mut r = xdd;
        r.axpy(alpha / smp.t, &smp.xdot);
        r.axpy(beta / smp.t, &ax);
        r.axpy(1.0, &adot);
        let scale = 1.0 + ax.norm() + smp.xdot.norm();
        assert!(
            r.norm() <= 1e-6 * scale,
            "t = {}: residual {}",
            smp.t,
            r.norm()
        );
    }
}

#[test]
fn velocity_and_operator_rate_are_aligned() {
    for kind in [SystemKind::Ds, SystemKind::Tds] {
        let p = problem(kind);
        let traj = p.solve(&cfg()).unwrap();
        for w in traj.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let dx = (&w[1].x - &w[0].x).scaled(1.0 / dt);
            let da = (&p.operator.yosida(&w[1].x).unwrap() - &p.operator.yosida(&w[0].x).unwrap())
                .scaled(1.0 / dt);
            let v = (&w[0].xdot + &w[1].xdot).scaled(0.5);
            assert!(dx.dot(&da) >= -1e-6 * (1.0 + v.norm_sq()));
        }
    }
}

#[test]
fn batch_solves_match_individual_runs() {
    let problems: Vec<_> = [0.2, 0.5, 0.75]
        .into_iter()
        .map(|q| InertialProblem {
            schedule: TikhonovSchedule::power(q, 0.1).unwrap(),
            ..problem(SystemKind::Ds)
        })
        .collect();
    let seq = solve_batch(&problems, &cfg(), Execution::Sequential);
    let par = solve_batch(&problems, &cfg(), Execution::Parallel);
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
    }
}
