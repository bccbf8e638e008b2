//! Lift/drag coefficient table and the aerodynamic load torque on the wing.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Rows of `(alpha_deg, c_l, c_d)` with strictly increasing alpha covering
/// `[-180, 180]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AeroTable {
    alpha: Vec<f64>,
    cl: Vec<f64>,
    cd: Vec<f64>,
}

impl AeroTable {
    pub fn new(rows: Vec<(f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidTable("need at least two rows".into()));
        }
        if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidTable("alpha must be strictly increasing".into()));
        }
        if rows.iter().any(|r| !(r.0.is_finite() && r.1.is_finite() && r.2.is_finite())) {
            return Err(Error::InvalidTable("non-finite entry".into()));
        }
        if rows.iter().any(|r| r.2 < 0.0) {
            return Err(Error::InvalidTable("drag coefficient must be non-negative".into()));
        }
        let first = rows[0].0;
        let last = rows[rows.len() - 1].0;
        if first > -180.0 || last < 180.0 {
            return Err(Error::InvalidTable(format!("alpha range [{first}, {last}] does not cover [-180, 180]")));
        }
        Ok(Self {
            alpha: rows.iter().map(|r| r.0).collect(),
            cl: rows.iter().map(|r| r.1).collect(),
            cd: rows.iter().map(|r| r.2).collect(),
        })
    }

    /// Symmetric NACA-0015-like polar: thin-airfoil lift `2π sin α` that
    /// blends into flat-plate lift `1.1 sin 2α` between 12° and 20°, with
    /// `c_d = 0.01 + 1.3 sin² α`. One row per `step_deg`.
    pub fn synthetic_naca0015(step_deg: f64) -> Self {
        let count = (360.0 / step_deg).round() as usize;
        let rows = (0..=count)
            .map(|i| {
                let deg = -180.0 + 360.0 * i as f64 / count as f64;
                let a = deg.to_radians();
                let attached = 2.0 * PI * a.sin();
                let plate = 1.1 * (2.0 * a).sin();
                let w = smoothstep((deg.abs() - STALL_START_DEG) / (STALL_END_DEG - STALL_START_DEG));
                let cl = (1.0 - w) * attached + w * plate;
                let cd = 0.01 + 1.3 * a.sin().powi(2);
                (deg, cl, cd)
            })
            .collect();
        Self::new(rows).expect("synthetic table is valid")
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len()).map(|i| (self.alpha[i], self.cl[i], self.cd[i]))
    }

    /// Linearly interpolated `(c_l, c_d)` at `alpha_deg`.
    pub fn coefficients(&self, alpha_deg: f64) -> Result<(f64, f64)> {
        let n = self.alpha.len();
        if !(alpha_deg >= self.alpha[0] && alpha_deg <= self.alpha[n - 1]) {
            return Err(Error::TableCoverage(alpha_deg));
        }
        let hi = self.alpha.partition_point(|&a| a < alpha_deg).max(1);
        let lo = hi - 1;
        if self.alpha[hi] == alpha_deg {
            return Ok((self.cl[hi], self.cd[hi]));
        }
        let t = (alpha_deg - self.alpha[lo]) / (self.alpha[hi] - self.alpha[lo]);
        Ok((
            self.cl[lo] + t * (self.cl[hi] - self.cl[lo]),
            self.cd[lo] + t * (self.cd[hi] - self.cd[lo]),
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha_deg,cl,cd\n");
        for (a, l, d) in self.rows() {
            let _ = writeln!(out, "{a:?},{l:?},{d:?}");
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::parse(origin, "missing header"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["alpha_deg", "cl", "cd"] {
            return Err(Error::parse(origin, format!("expected header alpha_deg,cl,cd, got '{header}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, format!("row {}: {e}", i + 1)))?;
            if v.len() != 3 {
                return Err(Error::parse(origin, format!("row {} needs 3 fields", i + 1)));
            }
            rows.push((v[0], v[1], v[2]));
        }
        Self::new(rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

const STALL_START_DEG: f64 = 12.0;
const STALL_END_DEG: f64 = 20.0;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Air and planform constants that scale coefficients into torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroGeometry {
    /// kg/m³
    pub density: f64,
    /// m
    pub chord: f64,
    /// m
    pub span: f64,
    /// Distance from the joint to the centre of pressure, m.
    pub pressure_lever: f64,
}

impl Default for AeroGeometry {
    /// Peak load torque is about 2 N·m at the default 7 m/s airspeed.
    fn default() -> Self {
        Self {
            density: 1.225,
            chord: 0.2,
            span: 1.0,
            pressure_lever: 0.25,
        }
    }
}

/// Wraps an angle in radians to degrees in `[-180, 180]`.
pub fn wrap_degrees(rad: f64) -> f64 {
    let mut d = rad.to_degrees() % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}

/// Aerodynamic load torque (N·m) on the wing at angle of attack `alpha`
/// (rad). Lift acts normal to the flow, drag along it; the load is
/// `lever · q_dyn · S · (c_l cos α + c_d sin α)` and is restoring for the
/// symmetric table. The value enters `g`, i.e. it opposes the input torque.
pub fn aero_torque(table: &AeroTable, alpha: f64, airspeed: f64, geometry: &AeroGeometry) -> Result<f64> {
    if !alpha.is_finite() || !airspeed.is_finite() {
        return Err(Error::Domain("non-finite aerodynamic input".into()));
    }
    let deg = wrap_degrees(alpha);
    let (cl, cd) = table.coefficients(deg)?;
    let a = deg.to_radians();
    let pressure = 0.5 * geometry.density * airspeed * airspeed * geometry.chord * geometry.span;
    Ok(geometry.pressure_lever * pressure * (cl * a.cos() + cd * a.sin()))
}

/// Aerodynamic part of the wing plant.
#[derive(Debug, Clone, PartialEq)]
pub struct WingAero {
    pub table: AeroTable,
    pub geometry: AeroGeometry,
    /// m/s
    pub airspeed: f64,
    /// Include the pressure point's own velocity in the relative wind.
    pub apparent_wind: bool,
}

impl WingAero {
    pub fn default_synthetic() -> Self {
        Self {
            table: AeroTable::synthetic_naca0015(1.0),
            geometry: AeroGeometry::default(),
            airspeed: 7.0,
            apparent_wind: false,
        }
    }

    pub fn load(&self, q: f64, qd: f64) -> f64 {
        let (alpha, speed) = if self.apparent_wind {
            // relative air velocity = free stream - velocity of the pressure point
            let r = self.geometry.pressure_lever;
            let vx = self.airspeed + r * qd * q.sin();
            let vy = -r * qd * q.cos();
            (q - vy.atan2(vx), vx.hypot(vy))
        } else {
            (q, self.airspeed)
        };
        // wrapping guarantees coverage for a validated table
        aero_torque(&self.table, alpha, speed, &self.geometry).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_table_symmetry() {
        let t = AeroTable::synthetic_naca0015(1.0);
        assert_eq!(t.len(), 361);
        for (a, cl, cd) in t.rows() {
            let (cl_neg, cd_neg) = t.coefficients(-a).unwrap();
            assert!((cl + cl_neg).abs() < 1e-12, "cl at {a}");
            assert!((cd - cd_neg).abs() < 1e-12);
            assert!(cd >= 0.0);
        }
        assert_eq!(t.coefficients(0.0).unwrap().0, 0.0);
    }

    #[test]
    fn node_and_midpoint_interpolation() {
        let t = AeroTable::synthetic_naca0015(1.0);
        let rows: Vec<_> = t.rows().collect();
        let (a0, l0, d0) = rows[200];
        let (_, l1, d1) = rows[201];
        assert_eq!(t.coefficients(a0).unwrap(), (l0, d0));
        let (lm, dm) = t.coefficients(a0 + 0.5).unwrap();
        assert!((lm - 0.5 * (l0 + l1)).abs() < 1e-14);
        assert!((dm - 0.5 * (d0 + d1)).abs() < 1e-14);
    }

    #[test]
    fn zero_angle_torque_is_drag_only() {
        let t = AeroTable::synthetic_naca0015(1.0);
        let g = AeroGeometry::default();
        assert_eq!(aero_torque(&t, 0.0, 7.0, &g).unwrap(), 0.0);
        let peak = (0..=360)
            .map(|i| aero_torque(&t, (i as f64 - 180.0).to_radians(), 7.0, &g).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(peak > 1.5 && peak < 2.5, "peak {peak}");
    }

    #[test]
    fn coverage_and_validation() {
        let short = AeroTable::new(vec![(-10.0, 0.0, 0.1), (10.0, 0.0, 0.1)]);
        assert!(matches!(short, Err(Error::InvalidTable(_))));
        let t = AeroTable::synthetic_naca0015(2.0);
        assert!(matches!(t.coefficients(181.0), Err(Error::TableCoverage(_))));
        assert!(AeroTable::new(vec![(-180.0, 0.0, 0.1), (-180.0, 0.0, 0.1), (180.0, 0.0, 0.1)]).is_err());
        let back = AeroTable::from_csv(&t.to_csv(), Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn wrap_is_periodic() {
        assert!((wrap_degrees(3.0 * PI / 2.0) + 90.0).abs() < 1e-12);
        assert!((wrap_degrees(-7.0 * PI) - 180.0).abs() < 1e-9 || (wrap_degrees(-7.0 * PI) + 180.0).abs() < 1e-9);
    }
}
