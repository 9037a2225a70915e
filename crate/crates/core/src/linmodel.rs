//! Linear design models of the attitude subsystem.
//!
//! Two closed-form variants of the input matrix exist. `Eq15` carries the
//! `sqrt(3) D / (4 I_zz R)` side-wheel entries in the psi row; `KConsistent`
//! replaces them with `D / (4 I_zz R)`, which is the variant whose LQR gain
//! matches the published gain matrix. The numeric variant linearizes the
//! implemented nonlinear plant and generally differs from both in magnitude
//! but not in structure; [`reconcile`] reports on that.

use nalgebra::{DMatrix, Matrix4, Matrix4x3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::plant::{numeric_jacobian, PlantState, RobotParams, TractionTorques};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BVariant {
    Eq15,
    #[default]
    KConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PaperEq15,
    PaperKConsistent,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x3<f64>,
    pub provenance: Provenance,
}

/// Double-integrator pair: ones at (phi, phi_rate) and (psi, psi_rate).
pub fn double_integrator_a() -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a[(0, 1)] = 1.0;
    a[(2, 3)] = 1.0;
    a
}

pub fn paper_linear_model(params: &RobotParams, variant: BVariant) -> Result<LinearModel> {
    params.validate()?;
    let d = params.pipe_diameter;
    let r = params.wheel_radius;
    let side_y = 3f64.sqrt() * d / (4.0 * params.inertia_y * r);
    let front_z = d / (2.0 * params.inertia_z * r);
    let side_z = match variant {
        BVariant::Eq15 => 3f64.sqrt() * d / (4.0 * params.inertia_z * r),
        BVariant::KConsistent => d / (4.0 * params.inertia_z * r),
    };

    let mut b = Matrix4x3::zeros();
    b[(1, 1)] = -side_y;
    b[(1, 2)] = side_y;
    b[(3, 0)] = -front_z;
    b[(3, 1)] = side_z;
    b[(3, 2)] = side_z;

    Ok(LinearModel {
        a: double_integrator_a(),
        b,
        provenance: match variant {
            BVariant::Eq15 => Provenance::PaperEq15,
            BVariant::KConsistent => Provenance::PaperKConsistent,
        },
    })
}

/// Linearize the nonlinear plant at rest (`velocity = V_f`, zero torque).
pub fn numeric_linear_model(params: &RobotParams, h: f64) -> Result<LinearModel> {
    params.validate()?;
    let (a, b) = numeric_jacobian(
        params,
        &PlantState::equilibrium(params.flow_velocity),
        &TractionTorques::ZERO,
        h,
    )?;
    Ok(LinearModel {
        a,
        b,
        provenance: Provenance::Numeric,
    })
}

impl LinearModel {
    /// `[B, AB, A^2 B, A^3 B]` as a 4x12 matrix.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(4, 12);
        let mut block = self.b;
        for k in 0..4 {
            c.view_mut((0, 3 * k), (4, 3)).copy_from(&block);
            block = self.a * block;
        }
        c
    }

    pub fn controllability_rank(&self) -> usize {
        let c = self.controllability_matrix();
        let scale = c.amax().max(f64::MIN_POSITIVE);
        c.rank(1e-10 * scale)
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == 4
    }

    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 4, self.a.as_slice())
    }

    pub fn b_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 3, self.b.as_slice())
    }
}

/// Structural comparison of two linear models.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileReport {
    pub a_sparsity_match: bool,
    pub b_sparsity_match: bool,
    pub sign_match: bool,
    /// Elementwise `reference / other` for entries nonzero in both;
    /// `None` where either is structurally zero.
    pub b_ratios: [[Option<f64>; 3]; 4],
}

impl ReconcileReport {
    /// Sparsity and signs agree. Magnitudes are informational only.
    pub fn structural_match(&self) -> bool {
        self.a_sparsity_match && self.b_sparsity_match && self.sign_match
    }
}

/// Compare `reference` against `other`. An entry counts as structurally zero
/// when its magnitude is at most `tol` times the largest entry of its matrix.
pub fn reconcile(reference: &LinearModel, other: &LinearModel, tol: f64) -> ReconcileReport {
    let zero_mask = |m: &[f64], scale: f64| -> Vec<bool> {
        m.iter().map(|v| v.abs() <= tol * scale).collect()
    };
    let a_scale_r = reference.a.amax();
    let a_scale_o = other.a.amax();
    let b_scale_r = reference.b.amax();
    let b_scale_o = other.b.amax();

    let za_r = zero_mask(reference.a.as_slice(), a_scale_r);
    let za_o = zero_mask(other.a.as_slice(), a_scale_o);
    let zb_r = zero_mask(reference.b.as_slice(), b_scale_r);
    let zb_o = zero_mask(other.b.as_slice(), b_scale_o);

    let a_sparsity_match = za_r == za_o;
    let b_sparsity_match = zb_r == zb_o;

    let signs = |m: &[f64], zero: &[bool]| -> Vec<i8> {
        m.iter()
            .zip(zero)
            .map(|(v, &z)| if z { 0 } else if *v > 0.0 { 1 } else { -1 })
            .collect()
    };
    let sign_match = signs(reference.a.as_slice(), &za_r) == signs(other.a.as_slice(), &za_o)
        && signs(reference.b.as_slice(), &zb_r) == signs(other.b.as_slice(), &zb_o);

    let mut b_ratios = [[None; 3]; 4];
    for (i, row) in b_ratios.iter_mut().enumerate() {
        for (j, ratio) in row.iter_mut().enumerate() {
            let idx = i + 4 * j;
            if !zb_r[idx] && !zb_o[idx] {
                *ratio = Some(reference.b[(i, j)] / other.b[(i, j)]);
            }
        }
    }

    ReconcileReport {
        a_sparsity_match,
        b_sparsity_match,
        sign_match,
        b_ratios,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eq15_entry_value() {
        let m = paper_linear_model(&RobotParams::default(), BVariant::Eq15).unwrap();
        let expected = 3f64.sqrt() * 0.4 / (4.0 * 0.0126 * 0.05);
        assert_relative_eq!(m.b[(1, 2)], expected, max_relative = 1e-14);
        assert_relative_eq!(m.b[(1, 2)], 274.93, epsilon = 0.01);
    }

    #[test]
    fn zero_rows_and_symmetries() {
        for variant in [BVariant::Eq15, BVariant::KConsistent] {
            let m = paper_linear_model(&RobotParams::default(), variant).unwrap();
            for j in 0..3 {
                assert_eq!(m.b[(0, j)], 0.0);
                assert_eq!(m.b[(2, j)], 0.0);
            }
            assert_eq!(m.b[(1, 0)], 0.0);
            assert_eq!(m.b[(1, 1)], -m.b[(1, 2)]);
            assert_eq!(m.b[(3, 1)], m.b[(3, 2)]);
            assert_eq!(m.a, double_integrator_a());
            assert!(m.is_controllable());
        }
    }

    #[test]
    fn doubling_diameter_doubles_b() {
        let p = RobotParams::default();
        let p2 = RobotParams {
            pipe_diameter: 2.0 * p.pipe_diameter,
            ..p.clone()
        };
        for variant in [BVariant::Eq15, BVariant::KConsistent] {
            let b1 = paper_linear_model(&p, variant).unwrap().b;
            let b2 = paper_linear_model(&p2, variant).unwrap().b;
            for (x, y) in b1.iter().zip(b2.iter()) {
                assert_relative_eq!(2.0 * x, *y, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = RobotParams {
            inertia_z: 0.0,
            ..RobotParams::default()
        };
        assert!(paper_linear_model(&p, BVariant::Eq15).is_err());
    }

    #[test]
    fn reconcile_identity() {
        let m = paper_linear_model(&RobotParams::default(), BVariant::Eq15).unwrap();
        let rep = reconcile(&m, &m, 1e-12);
        assert!(rep.structural_match());
        for row in rep.b_ratios {
            for r in row.into_iter().flatten() {
                assert_eq!(r, 1.0);
            }
        }
    }

    #[test]
    fn reconcile_variants_reports_sqrt3_on_side_wheels() {
        let p = RobotParams::default();
        let e = paper_linear_model(&p, BVariant::Eq15).unwrap();
        let k = paper_linear_model(&p, BVariant::KConsistent).unwrap();
        let rep = reconcile(&e, &k, 1e-12);
        assert!(rep.structural_match());
        assert_relative_eq!(rep.b_ratios[3][1].unwrap(), 3f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(rep.b_ratios[3][2].unwrap(), 3f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(rep.b_ratios[3][0].unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(rep.b_ratios[0], [None; 3]);
    }

    #[test]
    fn numeric_model_matches_structure_of_eq15() {
        let p = RobotParams::default();
        let e = paper_linear_model(&p, BVariant::Eq15).unwrap();
        let n = numeric_linear_model(&p, 1e-6).unwrap();
        let rep = reconcile(&e, &n, 1e-9);
        assert!(rep.structural_match(), "{rep:?}");
        assert!(n.is_controllable());
    }

    #[test]
    fn sign_flip_detected() {
        let p = RobotParams::default();
        let e = paper_linear_model(&p, BVariant::Eq15).unwrap();
        let mut f = e.clone();
        f.b[(3, 0)] = -f.b[(3, 0)];
        let rep = reconcile(&e, &f, 1e-9);
        assert!(rep.b_sparsity_match);
        assert!(!rep.sign_match);
    }

    proptest! {
        #[test]
        fn homogeneity(d in 0.15..2.0f64, r in 0.01..0.07f64, iy in 0.001..0.1f64, iz in 0.001..0.1f64) {
            let base = RobotParams { pipe_diameter: d, wheel_radius: r, inertia_y: iy, inertia_z: iz, ..RobotParams::default() };
            let m = paper_linear_model(&base, BVariant::KConsistent).unwrap();
            prop_assert!(m.is_controllable());
            let half_r = RobotParams { wheel_radius: r / 2.0, ..base.clone() };
            let m2 = paper_linear_model(&half_r, BVariant::KConsistent).unwrap();
            for (x, y) in m.b.iter().zip(m2.b.iter()) {
                prop_assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
            let double_iy = RobotParams { inertia_y: 2.0 * iy, ..base.clone() };
            let m3 = paper_linear_model(&double_iy, BVariant::KConsistent).unwrap();
            prop_assert!((m.b[(1, 2)] - 2.0 * m3.b[(1, 2)]).abs() <= 1e-12 * m.b[(1, 2)].abs());
            prop_assert_eq!(m.b[(3, 0)], m3.b[(3, 0)]);
        }
    }
}
