//! Rigid-manipulator models `H(q) q̈ + C(q, q̇) q̇ + g(q, q̇) = τ`.
//!
//! `g` collects every non-inertial joint force: gravity, aerodynamic load,
//! friction and spring torques. Friction makes it velocity dependent, so the
//! trait takes `q̇` even though rigid-body gravity does not need it.

mod aero;
mod arm;
mod wing;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use aero::{aero_torque, AeroGeometry, AeroTable, WingAero};
pub use arm::{Friction, Spring, TwoLinkArm};
pub use wing::{WingModel, STANDARD_GRAVITY};

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qd: DVector::zeros(n) }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

pub trait ManipulatorModel: fmt::Debug + Send + Sync {
    fn dof(&self) -> usize;

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// `∂H/∂q_k` for each joint `k`.
    fn mass_matrix_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>>;

    /// Christoffel-symbol Coriolis matrix, so `Ḣ − 2C` is skew-symmetric.
    fn coriolis_matrix(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        christoffel_coriolis(&self.mass_matrix_partials(q), qd)
    }

    /// Gravity and all other joint forces (aerodynamics, friction, springs).
    fn gravity_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64>;

    /// `H q̈ + C q̇ + g`, the torque that produces `qdd` at `state`.
    fn inverse_dynamics(&self, state: &JointState, qdd: &DVector<f64>) -> DVector<f64> {
        self.mass_matrix(&state.q) * qdd
            + self.coriolis_matrix(&state.q, &state.qd) * &state.qd
            + self.gravity_vector(&state.q, &state.qd)
    }
}

/// `C_kj = Σ_i ½ (∂H_kj/∂q_i + ∂H_ki/∂q_j − ∂H_ij/∂q_k) q̇_i`.
pub fn christoffel_coriolis(partials: &[DMatrix<f64>], qd: &DVector<f64>) -> DMatrix<f64> {
    let n = qd.len();
    DMatrix::from_fn(n, n, |k, j| {
        (0..n)
            .map(|i| 0.5 * (partials[i][(k, j)] + partials[j][(k, i)] - partials[k][(i, j)]) * qd[i])
            .sum()
    })
}

/// `q̈ = H⁻¹ (τ − C q̇ − g)` via Cholesky.
pub fn forward_dynamics(model: &dyn ManipulatorModel, state: &JointState, torque: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = torque - model.coriolis_matrix(&state.q, &state.qd) * &state.qd - model.gravity_vector(&state.q, &state.qd);
    solve_mass(model, &state.q, rhs)
}

/// `H(q)⁻¹ rhs`.
pub fn solve_mass(model: &dyn ManipulatorModel, q: &DVector<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let h = model.mass_matrix(q);
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Factorization(format!("mass matrix not positive definite at q = {:?}", q.as_slice())))?;
    Ok(chol.solve(&rhs))
}

/// Wraps a model and flips the sign of its Coriolis matrix. Used as a negative
/// control for the structural checks.
#[derive(Debug, Clone)]
pub struct NegatedCoriolis(pub Arc<dyn ManipulatorModel>);

impl ManipulatorModel for NegatedCoriolis {
    fn dof(&self) -> usize {
        self.0.dof()
    }
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.0.mass_matrix(q)
    }
    fn mass_matrix_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.0.mass_matrix_partials(q)
    }
    fn coriolis_matrix(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        -self.0.coriolis_matrix(q, qd)
    }
    fn gravity_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        self.0.gravity_vector(q, qd)
    }
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const SKEW_TOLERANCE: f64 = 1e-8;
pub const LINEARITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub samples: usize,
    pub max_symmetry_defect: f64,
    pub min_eigenvalue: f64,
    /// `max |vᵀ(Ḣ − 2C)v|` with `Ḣ` from central differences along the flow.
    pub max_skew_defect: f64,
    /// `max ‖C(q, a+b)c − C(q,a)c − C(q,b)c‖`.
    pub max_linearity_defect: f64,
    /// Largest `‖H(q₁) − H(q₂)‖_F / ‖q₁ − q₂‖` over sampled pairs.
    pub lipschitz_estimate: f64,
}

impl StructuralReport {
    pub fn symmetric(&self) -> bool {
        self.max_symmetry_defect <= SYMMETRY_TOLERANCE
    }
    pub fn positive_definite(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
    pub fn skew_symmetric(&self) -> bool {
        self.max_skew_defect <= SKEW_TOLERANCE
    }
    pub fn linear_in_velocity(&self) -> bool {
        self.max_linearity_defect <= LINEARITY_TOLERANCE
    }
    pub fn lipschitz_finite(&self) -> bool {
        self.lipschitz_estimate.is_finite()
    }
    pub fn passed(&self) -> bool {
        self.symmetric() && self.positive_definite() && self.skew_symmetric() && self.linear_in_velocity() && self.lipschitz_finite()
    }

    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.symmetric() {
            out.push("mass-matrix symmetry");
        }
        if !self.positive_definite() {
            out.push("mass-matrix positive definiteness");
        }
        if !self.skew_symmetric() {
            out.push("skew-symmetry of Hdot - 2C");
        }
        if !self.linear_in_velocity() {
            out.push("linearity of C in qdot");
        }
        if !self.lipschitz_finite() {
            out.push("Lipschitz bound of H");
        }
        out
    }
}

/// Samples random states and measures the structural properties the stability
/// argument relies on. Failures are reported, never raised.
pub fn check_structural_properties(model: &dyn ManipulatorModel, sample_count: usize, seed: u64) -> StructuralReport {
    let n = model.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let vec = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let h_step = 1e-6;

    let mut report = StructuralReport {
        samples: sample_count,
        max_symmetry_defect: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_skew_defect: 0.0,
        max_linearity_defect: 0.0,
        lipschitz_estimate: 0.0,
    };
    for _ in 0..sample_count {
        let q = vec(-pi, pi, &mut rng);
        let qd = vec(-5.0, 5.0, &mut rng);
        let v = vec(-1.0, 1.0, &mut rng);
        let a = vec(-5.0, 5.0, &mut rng);
        let q2 = vec(-pi, pi, &mut rng);

        let h = model.mass_matrix(&q);
        report.max_symmetry_defect = report.max_symmetry_defect.max((&h - h.transpose()).amax());
        let sym = (&h + h.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues().min();
        report.min_eigenvalue = report.min_eigenvalue.min(eig);

        let hdot = (model.mass_matrix(&(&q + &qd * h_step)) - model.mass_matrix(&(&q - &qd * h_step))) / (2.0 * h_step);
        let n_mat = hdot - model.coriolis_matrix(&q, &qd) * 2.0;
        report.max_skew_defect = report.max_skew_defect.max((v.transpose() * &n_mat * &v)[(0, 0)].abs());

        let lhs = model.coriolis_matrix(&q, &(&a + &qd)) * &v;
        let rhs = model.coriolis_matrix(&q, &a) * &v + model.coriolis_matrix(&q, &qd) * &v;
        report.max_linearity_defect = report.max_linearity_defect.max((lhs - rhs).amax());

        let dq = (&q - &q2).norm();
        if dq > 1e-9 {
            let quotient = (h - model.mass_matrix(&q2)).norm() / dq;
            report.lipschitz_estimate = report.lipschitz_estimate.max(quotient);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_dynamics_inverts_model() {
        let arm = TwoLinkArm::surrogate_true();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let s = JointState::new(
                DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)),
                DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0)),
            );
            let tau = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            let qdd = forward_dynamics(&arm, &s, &tau).unwrap();
            assert!((arm.inverse_dynamics(&s, &qdd) - &tau).amax() < 1e-10);
        }
    }

    #[test]
    fn equilibrium_torque_gives_zero_acceleration() {
        let arm = TwoLinkArm::surrogate_true();
        let s = JointState::new(DVector::from_vec(vec![0.3, -0.8]), DVector::from_vec(vec![1.0, 2.0]));
        let tau = arm.coriolis_matrix(&s.q, &s.qd) * &s.qd + arm.gravity_vector(&s.q, &s.qd);
        assert!(forward_dynamics(&arm, &s, &tau).unwrap().amax() < 1e-12);
    }

    #[test]
    fn structural_checks() {
        let arm: Arc<dyn ManipulatorModel> = Arc::new(TwoLinkArm::surrogate_true());
        let report = check_structural_properties(arm.as_ref(), 1000, 3);
        assert!(report.passed(), "{report:?}");
        let wing = WingModel::standard();
        assert!(check_structural_properties(&wing, 100, 3).passed());
        let bad = NegatedCoriolis(arm);
        let report = check_structural_properties(&bad, 200, 3);
        assert!(!report.skew_symmetric());
        assert_eq!(report.failures(), vec!["skew-symmetry of Hdot - 2C"]);
    }
}
