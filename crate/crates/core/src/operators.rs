//! Operators presented through their resolvent.
//!
//! An operator `A` enters the dynamics only through its Yosida
//! regularization `A_η = (Id − J_η)/η`, where `J_η = (Id + ηA)⁻¹`. For a
//! maximally ρ-comonotone `A` with `η > max{−2ρ, 0}` the resolvent is
//! single-valued and everywhere defined, so no set-valued representation is
//! needed here.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, LuFactors, Matrix, Vector};
use crate::parallel::{self, Execution};

/// Eigenvalue slack below which a certificate still counts as holding.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-10;

/// User-supplied resolvent: `(η, z) ↦ J_η z`. Must be reentrant.
pub type ResolventFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

#[derive(Clone)]
pub enum OperatorKind {
    /// `A x = M x`.
    Linear(Matrix),
    /// `A x = M x − b`.
    Affine {
        matrix: Matrix,
        offset: Vector,
    },
    Custom(ResolventFn),
}

impl fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::Linear(m) => f.debug_tuple("Linear").field(m).finish(),
            OperatorKind::Affine { matrix, offset } => f
                .debug_struct("Affine")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            OperatorKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// An operator together with its comonotonicity modulus `rho` and the
/// Yosida index `eta`.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    kind: OperatorKind,
    rho: f64,
    eta: f64,
    dim: usize,
    // factors of I + ηM for the matrix kinds
    factors: Option<LuFactors>,
}

fn check_indices(rho: f64, eta: f64) -> Result<()> {
    if !rho.is_finite() || !eta.is_finite() {
        return Err(Error::InvalidParameter("rho and eta must be finite".into()));
    }
    if eta <= (-2.0 * rho).max(0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta = {eta} must exceed max(-2 rho, 0) = {}",
            (-2.0 * rho).max(0.0)
        )));
    }
    Ok(())
}

impl OperatorSpec {
    pub fn linear(matrix: Matrix, rho: f64, eta: f64) -> Result<Self> {
        check_indices(rho, eta)?;
        let factors = LuFactors::new(&Matrix::identity(matrix.n()).add_scaled(eta, &matrix))?;
        Ok(OperatorSpec {
            dim: matrix.n(),
            kind: OperatorKind::Linear(matrix),
            rho,
            eta,
            factors: Some(factors),
        })
    }

    pub fn affine(matrix: Matrix, offset: Vector, rho: f64, eta: f64) -> Result<Self> {
        check_indices(rho, eta)?;
        offset.check_dim(matrix.n())?;
        if !offset.is_finite() {
            return Err(Error::InvalidParameter(
                "offset has non-finite entries".into(),
            ));
        }
        let factors = LuFactors::new(&Matrix::identity(matrix.n()).add_scaled(eta, &matrix))?;
        Ok(OperatorSpec {
            dim: matrix.n(),
            kind: OperatorKind::Affine { matrix, offset },
            rho,
            eta,
            factors: Some(factors),
        })
    }

    pub fn custom(dim: usize, rho: f64, eta: f64, resolvent: ResolventFn) -> Result<Self> {
        check_indices(rho, eta)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(OperatorSpec {
            kind: OperatorKind::Custom(resolvent),
            rho,
            eta,
            dim,
            factors: None,
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cocoercivity modulus `ρ + η` of the Yosida regularization.
    pub fn cocoercivity(&self) -> f64 {
        self.rho + self.eta
    }

    /// Matrix part for linear and affine kinds.
    pub fn matrix(&self) -> Option<&Matrix> {
        match &self.kind {
            OperatorKind::Linear(m) | OperatorKind::Affine { matrix: m, .. } => Some(m),
            OperatorKind::Custom(_) => None,
        }
    }

    /// Same operator with a different Yosida index.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        match &self.kind {
            OperatorKind::Linear(m) => Self::linear(m.clone(), self.rho, eta),
            OperatorKind::Affine { matrix, offset } => {
                Self::affine(matrix.clone(), offset.clone(), self.rho, eta)
            }
            OperatorKind::Custom(f) => Self::custom(self.dim, self.rho, eta, f.clone()),
        }
    }

    /// `J_η z = (Id + ηA)⁻¹ z`.
    pub fn resolvent(&self, z: &Vector) -> Result<Vector> {
        z.check_dim(self.dim)?;
        match (&self.kind, &self.factors) {
            (OperatorKind::Linear(_), Some(lu)) => lu.solve(z),
            (OperatorKind::Affine { offset, .. }, Some(lu)) => {
                let mut rhs = z.clone();
                rhs.axpy(self.eta, offset);
                lu.solve(&rhs)
            }
            (OperatorKind::Custom(f), _) => {
                let out = f(self.eta, z);
                out.check_dim(self.dim)?;
                Ok(out)
            }
            _ => unreachable!("matrix operators always carry factors"),
        }
    }

    /// `A_η z = (z − J_η z)/η`.
    pub fn yosida(&self, z: &Vector) -> Result<Vector> {
        let j = self.resolvent(z)?;
        let mut out = z - &j;
        out.as_mut_slice().iter_mut().for_each(|v| *v /= self.eta);
        Ok(out)
    }
}

/// Outcome of the linear ρ-comonotonicity test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComonotonicityCertificate {
    pub rho: f64,
    pub holds: bool,
    /// `λ_min(sym(M) − ρ MᵀM)`.
    pub witness_min_eigen: f64,
    /// Direction `u` with `uᵀMu < ρ‖Mu‖²` when the test fails.
    pub counterexample: Option<Vector>,
}

/// Decides whether `x ↦ Mx` is ρ-comonotone, i.e. `uᵀMu ≥ ρ‖Mu‖²` for all
/// `u`, which for a linear map is `sym(M) − ρMᵀM ⪰ 0`.
pub fn certify_comonotone(m: &Matrix, rho: f64) -> Result<ComonotonicityCertificate> {
    let gram = m.transpose().matmul(m);
    let s = m.sym_part().add_scaled(-rho, &gram);
    let eig = sym_eigen(&s)?;
    let witness = eig.values[0];
    let holds = witness >= -CERTIFICATE_TOLERANCE;
    Ok(ComonotonicityCertificate {
        rho,
        holds,
        witness_min_eigen: witness,
        counterexample: (!holds).then(|| eig.vectors[0].clone()),
    })
}

/// Result of a sampled inequality check: pass/fail plus the smallest margin
/// observed (negative margins are violations before slack).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub passed: bool,
    pub worst_margin: f64,
    pub trials: usize,
}

/// Sampling parameters shared by the randomized checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Points are drawn uniformly from `[-box_half_width, box_half_width]^dim`.
    pub box_half_width: f64,
    /// Absolute slack absorbing round-off.
    pub slack: f64,
    pub execution: ExecutionMode,
}

/// Serializable mirror of [`Execution`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl From<ExecutionMode> for Execution {
    fn from(m: ExecutionMode) -> Self {
        match m {
            ExecutionMode::Sequential => Execution::Sequential,
            ExecutionMode::Parallel => Execution::Parallel,
        }
    }
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            box_half_width: 10.0,
            slack: 1e-9,
            execution: ExecutionMode::Parallel,
        }
    }
}

/// Reproducible stream of point pairs in the sampling box.
pub fn sample_pairs(
    dim: usize,
    trials: usize,
    seed: u64,
    half_width: f64,
) -> Vec<(Vector, Vector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        Vector::new(
            (0..dim)
                .map(|_| rng.gen_range(-half_width..=half_width))
                .collect(),
        )
    };
    (0..trials)
        .map(|_| {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            (x, y)
        })
        .collect()
}

fn fold_margins(margins: Vec<Result<f64>>, slack: f64) -> Result<SampleCheck> {
    let trials = margins.len();
    let mut worst = f64::INFINITY;
    for m in margins {
        worst = worst.min(m?);
    }
    if trials == 0 {
        worst = 0.0;
    }
    Ok(SampleCheck {
        passed: worst >= -slack,
        worst_margin: worst,
        trials,
    })
}

/// Margins `⟨A_η x − A_η y, x − y⟩ − β‖A_η x − A_η y‖²` over explicit pairs.
pub fn cocoercivity_margins(
    op: &OperatorSpec,
    beta: f64,
    pairs: &[(Vector, Vector)],
    exec: Execution,
    slack: f64,
) -> Result<SampleCheck> {
    let margins = parallel::map(exec, pairs, |(x, y)| {
        let du = &op.yosida(x)? - &op.yosida(y)?;
        let dx = x - y;
        Ok(du.dot(&dx) - beta * du.norm_sq())
    });
    fold_margins(margins, slack)
}

/// Sampled check that `A_η` is `beta`-cocoercive.
pub fn check_cocoercivity_sample(
    op: &OperatorSpec,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<SampleCheck> {
    check_cocoercivity_sample_with(op, beta, trials, seed, &SamplingOptions::default())
}

pub fn check_cocoercivity_sample_with(
    op: &OperatorSpec,
    beta: f64,
    trials: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<SampleCheck> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta = {beta} must be positive"
        )));
    }
    let pairs = sample_pairs(op.dim(), trials, seed, opts.box_half_width);
    cocoercivity_margins(op, beta, &pairs, opts.execution.into(), opts.slack)
}

/// Sampled check that `J_η` is θ-averaged with `θ = η/(2(ρ+η))`.
pub fn check_averagedness_sample(
    op: &OperatorSpec,
    trials: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<SampleCheck> {
    let theta = op.eta() / (2.0 * op.cocoercivity());
    let pairs = sample_pairs(op.dim(), trials, seed, opts.box_half_width);
    let margins = parallel::map(opts.execution.into(), &pairs, |(x, y)| {
        let jx = op.resolvent(x)?;
        let jy = op.resolvent(y)?;
        let dx = x - y;
        let dj = &jx - &jy;
        let dr = &dx - &dj;
        Ok(theta * (dx.norm_sq() - dj.norm_sq()) - (1.0 - theta) * dr.norm_sq())
    });
    fold_margins(margins, opts.slack)
}

/// Sampled check that `A_η` is `1/(ρ+η)`-Lipschitz (relative slack `slack`).
pub fn check_lipschitz_sample(
    op: &OperatorSpec,
    trials: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<SampleCheck> {
    let lip = 1.0 / op.cocoercivity();
    let pairs = sample_pairs(op.dim(), trials, seed, opts.box_half_width);
    let margins = parallel::map(opts.execution.into(), &pairs, |(x, y)| {
        let du = &op.yosida(x)? - &op.yosida(y)?;
        let dx = x - y;
        Ok((1.0 + opts.slack) * lip * dx.norm() - du.norm())
    });
    // the slack is already folded in multiplicatively
    fold_margins(margins, 0.0)
}

/// Brute-force test of `uᵀMu ≥ ρ‖Mu‖²` on random directions; margins are
/// normalized by `‖u‖²`.
pub fn sample_comonotone(
    m: &Matrix,
    rho: f64,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> SampleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vector> = (0..trials)
        .map(|_| Vector::new((0..m.n()).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
        .collect();
    let margins = parallel::map(exec, &dirs, |u| {
        let mu = m.mul_vec(u);
        Ok((u.dot(&mu) - rho * mu.norm_sq()) / u.norm_sq().max(f64::MIN_POSITIVE))
    });
    fold_margins(margins, CERTIFICATE_TOLERANCE).expect("margins are infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example() -> OperatorSpec {
        OperatorSpec::linear(Matrix::diag(&[1.0, 0.0, -1.0]), -1.0, 3.0).unwrap()
    }

    fn affine() -> OperatorSpec {
        OperatorSpec::affine(
            Matrix::diag(&[1.0, 0.0]),
            Vector::new(vec![1.0, 0.0]),
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    #[test]
    fn zero_operator_resolvent_is_identity() {
        let op = OperatorSpec::linear(Matrix::zeros(2), 0.0, 2.5).unwrap();
        assert_eq!(op.resolvent(&v(&[5.0, -2.0])).unwrap(), v(&[5.0, -2.0]));
    }

    #[test]
    fn example_resolvent_and_yosida() {
        let op = example();
        let j = op.resolvent(&v(&[1.0, 1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(j[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(j[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[2], -0.5, epsilon = 1e-15);
        let y = op.yosida(&v(&[1.0, 1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(y[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn affine_resolvent() {
        let j = affine().resolvent(&v(&[3.0, 7.0])).unwrap();
        assert_abs_diff_eq!(j[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[1], 7.0, epsilon = 1e-15);
    }

    #[test]
    fn yosida_vanishes_on_zeros() {
        let op = example();
        for b in [-3.0, 0.0, 2.5] {
            let z = v(&[0.0, b, 0.0]);
            assert_eq!(op.resolvent(&z).unwrap(), z);
            assert!(op.yosida(&z).unwrap().norm() == 0.0);
        }
    }

    #[test]
    fn identity_yosida() {
        let op = OperatorSpec::linear(Matrix::identity(2), 1.0, 1.0).unwrap();
        assert_eq!(op.yosida(&v(&[2.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn custom_resolvent_delegates() {
        // resolvent of A = Id is z / (1 + η)
        let f: ResolventFn = Arc::new(|eta, z: &Vector| z.scaled(1.0 / (1.0 + eta)));
        let op = OperatorSpec::custom(2, 1.0, 1.0, f).unwrap();
        assert_eq!(op.yosida(&v(&[2.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        let bad: ResolventFn = Arc::new(|_, _: &Vector| Vector::zeros(3));
        let op = OperatorSpec::custom(2, 1.0, 1.0, bad).unwrap();
        assert!(matches!(
            op.resolvent(&v(&[1.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dimension_checked() {
        assert!(matches!(
            example().resolvent(&v(&[1.0])),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn eta_window_enforced() {
        let m = Matrix::diag(&[1.0, 0.0, -1.0]);
        assert!(OperatorSpec::linear(m.clone(), -1.0, 2.0).is_err());
        assert!(OperatorSpec::linear(m.clone(), 1.0, 0.0).is_err());
        assert!(OperatorSpec::linear(m, -1.0, 2.0001).is_ok());
    }

    #[test]
    fn singular_shifted_matrix_rejected() {
        // I + ηM = diag(1, 0) for M = diag(0, -1/η)
        let m = Matrix::diag(&[0.0, -1.0 / 3.0]);
        assert!(matches!(
            OperatorSpec::linear(m, -0.1, 3.0),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn certificates() {
        let a = Matrix::diag(&[1.0, 0.0, -1.0]);
        let c = certify_comonotone(&a, -1.0).unwrap();
        assert!(c.holds);
        assert_abs_diff_eq!(c.witness_min_eigen, 0.0, epsilon = 1e-12);
        assert!(c.counterexample.is_none());

        let c = certify_comonotone(&a, 0.0).unwrap();
        assert!(!c.holds);
        assert_abs_diff_eq!(c.witness_min_eigen, -1.0, epsilon = 1e-12);
        let u = c.counterexample.unwrap();
        let au = a.mul_vec(&u);
        assert!(u.dot(&au) < 0.0);

        assert!(certify_comonotone(&Matrix::identity(3), 1.0).unwrap().holds);
    }

    #[test]
    fn cocoercivity_examples() {
        let op = example();
        let ok = check_cocoercivity_sample(&op, 2.0, 1000, 7).unwrap();
        assert!(ok.passed, "{ok:?}");
        let bad = check_cocoercivity_sample(&op, 5.0, 1000, 7).unwrap();
        assert!(!bad.passed);
        assert!(bad.worst_margin < 0.0);
    }

    #[test]
    fn coincident_pairs_have_zero_margin() {
        let op = example();
        let pairs: Vec<_> = sample_pairs(3, 50, 1, 10.0)
            .into_iter()
            .map(|(x, _)| (x.clone(), x))
            .collect();
        let check = cocoercivity_margins(&op, 2.0, &pairs, Execution::Sequential, 1e-9).unwrap();
        assert!(check.passed);
        assert_eq!(check.worst_margin, 0.0);
    }

    #[test]
    fn invalid_beta() {
        assert!(check_cocoercivity_sample(&example(), 0.0, 10, 1).is_err());
    }

    #[test]
    fn sampled_checks_are_reproducible() {
        let a = check_cocoercivity_sample(&affine(), 2.0, 200, 42).unwrap();
        let b = check_cocoercivity_sample(&affine(), 2.0, 200, 42).unwrap();
        assert_eq!(a, b);
    }
}
