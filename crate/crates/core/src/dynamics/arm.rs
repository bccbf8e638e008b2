use nalgebra::{DMatrix, DVector, Vector2};

use super::ManipulatorModel;

/// Joint friction `viscous·q̇ + coulomb·tanh(q̇ / smoothing)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Friction {
    /// N·m·s/rad per joint
    pub viscous: [f64; 2],
    /// N·m per joint
    pub coulomb: [f64; 2],
    /// rad/s
    pub smoothing: f64,
}

impl Friction {
    pub fn torque(&self, qd: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(2, |i, _| self.viscous[i] * qd[i] + self.coulomb[i] * (qd[i] / self.smoothing).tanh())
    }
}

/// Elastic band between the end effector and a fixed anchor. It only pulls,
/// with force `k1 Δ + k3 Δ³` for extension `Δ > 0` beyond `rest_length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    /// Anchor in the base frame, m.
    pub anchor: [f64; 2],
    /// m
    pub rest_length: f64,
    /// N/m
    pub k1: f64,
    /// N/m³
    pub k3: f64,
}

impl Spring {
    /// The linear model of this band: same geometry, cubic term dropped.
    pub fn linearized(&self) -> Self {
        Self { k3: 0.0, ..*self }
    }

    pub fn force(&self, extension: f64) -> f64 {
        if extension <= 0.0 {
            0.0
        } else {
            self.k1 * extension + self.k3 * extension.powi(3)
        }
    }
}

/// Planar two-link arm moving in a horizontal plane (SCARA-like) unless
/// `gravity` is nonzero, in which case gravity acts along `-y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLinkArm {
    /// m
    pub lengths: [f64; 2],
    /// kg
    pub masses: [f64; 2],
    /// Link inertia about its centre of mass, kg·m².
    pub inertias: [f64; 2],
    /// Joint to centre of mass, m.
    pub com: [f64; 2],
    /// m/s²
    pub gravity: f64,
    pub friction: Option<Friction>,
    pub spring: Option<Spring>,
}

impl TwoLinkArm {
    /// Uniform rods, 0.3 m links of 1.5 kg and 1.0 kg, no friction or band.
    pub fn rigid() -> Self {
        let lengths = [0.3, 0.3];
        let masses = [1.5, 1.0];
        Self {
            lengths,
            masses,
            inertias: [masses[0] * lengths[0] * lengths[0] / 12.0, masses[1] * lengths[1] * lengths[1] / 12.0],
            com: [lengths[0] / 2.0, lengths[1] / 2.0],
            gravity: 0.0,
            friction: None,
            spring: None,
        }
    }

    pub fn default_friction() -> Friction {
        Friction {
            viscous: [0.2, 0.2],
            coulomb: [0.1, 0.1],
            smoothing: 0.01,
        }
    }

    /// Band anchored to the right of and below the stretched-out arm.
    pub fn default_spring() -> Spring {
        Spring {
            anchor: [0.75, -0.35],
            rest_length: 0.1,
            k1: 2.0,
            k3: 20.0,
        }
    }

    /// The plant: rigid arm plus friction and the nonlinear band.
    pub fn surrogate_true() -> Self {
        Self {
            friction: Some(Self::default_friction()),
            spring: Some(Self::default_spring()),
            ..Self::rigid()
        }
    }

    fn inertia_constants(&self) -> (f64, f64, f64) {
        let [l1, _] = self.lengths;
        let [m1, m2] = self.masses;
        let [i1, i2] = self.inertias;
        let [c1, c2] = self.com;
        let a = i1 + i2 + m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2);
        let b = m2 * l1 * c2;
        let c = i2 + m2 * c2 * c2;
        (a, b, c)
    }

    pub fn end_effector(&self, q: &DVector<f64>) -> Vector2<f64> {
        let [l1, l2] = self.lengths;
        let s12 = q[0] + q[1];
        Vector2::new(l1 * q[0].cos() + l2 * s12.cos(), l1 * q[0].sin() + l2 * s12.sin())
    }

    /// Joint torques produced by the band (positive = the band drives the joint).
    pub fn spring_torque(&self, q: &DVector<f64>) -> DVector<f64> {
        let Some(spring) = &self.spring else {
            return DVector::zeros(2);
        };
        let [l1, l2] = self.lengths;
        let p = self.end_effector(q);
        let d = Vector2::new(spring.anchor[0], spring.anchor[1]) - p;
        let dist = d.norm();
        if dist == 0.0 {
            return DVector::zeros(2);
        }
        let f = d * (spring.force(dist - spring.rest_length) / dist);
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        // Jᵀ f
        DVector::from_vec(vec![
            (-l1 * s1 - l2 * s12) * f.x + (l1 * c1 + l2 * c12) * f.y,
            -l2 * s12 * f.x + l2 * c12 * f.y,
        ])
    }

    pub fn friction_torque(&self, qd: &DVector<f64>) -> DVector<f64> {
        self.friction.map(|f| f.torque(qd)).unwrap_or_else(|| DVector::zeros(2))
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * (qd.transpose() * self.mass_matrix(q) * qd)[(0, 0)]
    }
}

impl ManipulatorModel for TwoLinkArm {
    fn dof(&self) -> usize {
        2
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (a, b, c) = self.inertia_constants();
        let cq = q[1].cos();
        DMatrix::from_row_slice(2, 2, &[a + 2.0 * b * cq, c + b * cq, c + b * cq, c])
    }

    fn mass_matrix_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (_, b, _) = self.inertia_constants();
        let s = q[1].sin();
        vec![
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[-2.0 * b * s, -b * s, -b * s, 0.0]),
        ]
    }

    fn gravity_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(2);
        if self.gravity != 0.0 {
            let [l1, _] = self.lengths;
            let [m1, m2] = self.masses;
            let [c1, c2] = self.com;
            let c12 = (q[0] + q[1]).cos();
            g[0] = (m1 * c1 + m2 * l1) * self.gravity * q[0].cos() + m2 * c2 * self.gravity * c12;
            g[1] = m2 * c2 * self.gravity * c12;
        }
        g + self.friction_torque(qd) - self.spring_torque(q)
    }
}
