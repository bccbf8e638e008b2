use nalgebra::{DMatrix, DVector};

use super::{ManipulatorModel, WingAero};

/// Single-joint wing: `J q̈ + m g₀ l sin q + aero(q) = τ`.
///
/// Without `aero` this is the damping-free pendulum used as the estimated
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct WingModel {
    /// kg·m²
    pub inertia: f64,
    /// kg
    pub mass: f64,
    /// Joint to centre of mass, m.
    pub lever: f64,
    /// m/s²
    pub gravity: f64,
    pub aero: Option<WingAero>,
}

pub const STANDARD_GRAVITY: f64 = 9.81;

impl WingModel {
    /// `J_a = 1 kg·m²`, `m = 1 kg`, `l = 1 m`, synthetic airfoil polar.
    pub fn standard() -> Self {
        Self {
            inertia: 1.0,
            mass: 1.0,
            lever: 1.0,
            gravity: STANDARD_GRAVITY,
            aero: Some(WingAero::default_synthetic()),
        }
    }

    /// Damping-free pendulum with `Ĵ = inertia_factor · J` and
    /// `l̂m̂ = mass_lever_factor · m l`; no aerodynamics.
    pub fn pendulum_estimate(&self, inertia_factor: f64, mass_lever_factor: f64) -> Self {
        Self {
            inertia: inertia_factor * self.inertia,
            mass: mass_lever_factor * self.mass,
            lever: self.lever,
            gravity: self.gravity,
            aero: None,
        }
    }

    pub fn without_air(&self) -> Self {
        Self { aero: None, ..self.clone() }
    }
}

impl ManipulatorModel for WingModel {
    fn dof(&self) -> usize {
        1
    }

    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia)
    }

    fn mass_matrix_partials(&self, _q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(1, 1)]
    }

    fn coriolis_matrix(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn gravity_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let mut g = self.mass * self.gravity * self.lever * q[0].sin();
        if let Some(aero) = &self.aero {
            g += aero.load(q[0], qd[0]);
        }
        DVector::from_element(1, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_dynamics, JointState};
    use std::f64::consts::FRAC_PI_2;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn constant_inertia_and_no_coriolis() {
        let w = WingModel::standard();
        assert_eq!(w.mass_matrix(&v(0.7))[(0, 0)], 1.0);
        assert_eq!(w.coriolis_matrix(&v(0.7), &v(3.0))[(0, 0)], 0.0);
    }

    #[test]
    fn pendulum_estimate_gravity() {
        let est = WingModel::standard().pendulum_estimate(0.9, 0.9);
        assert_eq!(est.gravity_vector(&v(0.0), &v(0.0))[0], 0.0);
        assert!((est.gravity_vector(&v(FRAC_PI_2), &v(0.0))[0] - 8.829).abs() < 1e-12);
        assert!((est.inertia - 0.9).abs() < 1e-15);
    }

    #[test]
    fn residual_without_air() {
        let truth = WingModel::standard().without_air();
        let est = truth.pendulum_estimate(0.9, 0.9);
        let r = truth.gravity_vector(&v(FRAC_PI_2), &v(0.0))[0] - est.gravity_vector(&v(FRAC_PI_2), &v(0.0))[0];
        assert!((r - 0.981).abs() < 1e-12);
    }

    #[test]
    fn unit_torque_unit_acceleration() {
        let w = WingModel::standard().without_air();
        let qdd = forward_dynamics(&w, &JointState::at_rest(v(0.0)), &v(1.0)).unwrap();
        assert_eq!(qdd[0], 1.0);
    }
}
