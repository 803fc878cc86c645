//! Modal derivatives and the quadratic-manifold reduced model.
//!
//! The mapping X = Phi x + 1/2 sum Theta_ij x_i x_j carries no velocity
//! dependence. The reduced dynamics follows from differentiating the mapping
//! twice in time and projecting the equations of motion onto the manifold
//! tangent, then normalising the configuration-dependent mass by series
//! inversion and truncating at cubic order.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::model::{eigenpairs, PhysicalModel};
use crate::poly::RPoly;
use crate::rom::{ManifoldMap, MapTerm, ReducedModel, RomMethod};

/// Which modal-derivative problem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdKind {
    /// Bordered solve of the amplitude-differentiated eigenproblem with the
    /// mass-orthogonality constraint.
    Full,
    /// Static simplification: K Theta = -2 G(phi_j, phi_i).
    Static,
}

/// Modal derivative Theta_ij and the eigenvalue-derivative byproduct of the
/// full bordered solve.
#[derive(Debug, Clone)]
pub struct ModalDerivative {
    pub theta: DVector<f64>,
    /// d(omega_i^2)/dx_j, available for the full kind only.
    pub eigenvalue_derivative: Option<f64>,
}

/// Solve for the (i, j) modal derivative of a model.
pub fn modal_derivative(
    model: &PhysicalModel,
    modes: &DMatrix<f64>,
    omega: &DVector<f64>,
    i: usize,
    j: usize,
    kind: MdKind,
) -> Result<DVector<f64>> {
    Ok(modal_derivative_full(model, modes, omega, i, j, kind)?.theta)
}

pub fn modal_derivative_full(
    model: &PhysicalModel,
    modes: &DMatrix<f64>,
    omega: &DVector<f64>,
    i: usize,
    j: usize,
    kind: MdKind,
) -> Result<ModalDerivative> {
    let n = model.n();
    if i >= modes.ncols() || j >= modes.ncols() {
        bail!("mode index out of range");
    }
    let phi_i = modes.column(i).into_owned();
    let phi_j = modes.column(j).into_owned();
    let rhs = model.quad.bilinear(&phi_j, &phi_i) * (-2.0);
    match kind {
        MdKind::Static => {
            let lu = model.stiffness.clone().lu();
            let theta = lu
                .solve(&rhs)
                .ok_or_else(|| anyhow!("singular stiffness matrix in the static solve"))?;
            Ok(ModalDerivative {
                theta,
                eigenvalue_derivative: None,
            })
        }
        MdKind::Full => {
            let mphi = &model.mass * &phi_i;
            let mut bordered = DMatrix::zeros(n + 1, n + 1);
            let w2 = omega[i] * omega[i];
            for r in 0..n {
                for c in 0..n {
                    bordered[(r, c)] = model.stiffness[(r, c)] - w2 * model.mass[(r, c)];
                }
                bordered[(r, n)] = -mphi[r];
                bordered[(n, r)] = -mphi[r];
            }
            let mut full_rhs = DVector::zeros(n + 1);
            for r in 0..n {
                full_rhs[r] = rhs[r];
            }
            let lu = bordered.lu();
            let sol = lu
                .solve(&full_rhs)
                .ok_or_else(|| anyhow!("singular bordered system in the modal-derivative solve"))?;
            Ok(ModalDerivative {
                theta: sol.rows(0, n).into_owned(),
                eigenvalue_derivative: Some(sol[n]),
            })
        }
    }
}

/// Byproducts of the quadratic-manifold build.
#[derive(Debug, Clone, Default)]
pub struct QmReport {
    /// d(omega_i^2)/dx_j for each ordered master pair (full kind only).
    pub eigenvalue_derivatives: Vec<((usize, usize), f64)>,
    /// Largest linear-coupling residue discarded when normalising the mass.
    pub linear_residue: f64,
}

/// Quadratic-manifold reduced model over the chosen masters.
pub fn qm_build(
    model: &PhysicalModel,
    masters: &[usize],
    kind: MdKind,
) -> Result<(ManifoldMap, ReducedModel, QmReport)> {
    let n = model.n();
    if masters.is_empty() {
        bail!("master set must not be empty");
    }
    let mut sorted = masters.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != masters.len() {
        bail!("master set contains duplicates");
    }
    let masters = sorted;
    let m = masters.len();
    let need = masters.iter().max().unwrap() + 1;
    let (omega_all, modes) = eigenpairs(model, need)?;
    let omega: Vec<f64> = masters.iter().map(|&p| omega_all[p]).collect();
    let phi: Vec<DVector<f64>> = masters
        .iter()
        .map(|&p| modes.column(p).into_owned())
        .collect();

    // symmetrised modal derivatives over the master pairs
    let mut report = QmReport::default();
    let mut theta_raw = vec![vec![DVector::<f64>::zeros(n); m]; m];
    for a in 0..m {
        for b in 0..m {
            let md = modal_derivative_full(model, &modes, &omega_all, masters[a], masters[b], kind)?;
            if let Some(dw2) = md.eigenvalue_derivative {
                report
                    .eigenvalue_derivatives
                    .push(((masters[a], masters[b]), dw2));
            }
            theta_raw[a][b] = md.theta;
        }
    }
    let mut theta = vec![vec![DVector::<f64>::zeros(n); m]; m];
    for a in 0..m {
        for b in 0..m {
            theta[a][b] = (&theta_raw[a][b] + &theta_raw[b][a]) * 0.5;
        }
    }

    // reduced equations by tangent projection, as polynomials in (x, xdot)
    let nv = 2 * m;
    let xv: Vec<RPoly> = (0..m).map(|i| RPoly::var(nv, i)).collect();
    let yv: Vec<RPoly> = (0..m).map(|i| RPoly::var(nv, m + i)).collect();

    // scalar projections
    let pm = |r: usize, i: usize, k: usize| phi[r].dot(&(&model.mass * &theta[i][k]));
    let tm = |r: usize, j: usize, p: usize, q: usize| {
        theta[r][j].dot(&(&model.mass * &theta[p][q]))
    };
    let pk = |r: usize, i: usize, j: usize| phi[r].dot(&(&model.stiffness * &theta[i][j]));
    let tk = |r: usize, j: usize, i: usize| theta[r][j].dot(&(&model.stiffness * &phi[i]));
    let tkt = |r: usize, j: usize, p: usize, q: usize| {
        theta[r][j].dot(&(&model.stiffness * &theta[p][q]))
    };
    let g3 = |r: usize, i: usize, j: usize| phi[r].dot(&model.quad.bilinear(&phi[i], &phi[j]));
    let gth = |r: usize, i: usize, p: usize, q: usize| {
        phi[r].dot(&model.quad.bilinear(&phi[i], &theta[p][q]))
    };
    let tg = |r: usize, j: usize, i: usize, k: usize| {
        theta[r][j].dot(&model.quad.bilinear(&phi[i], &phi[k]))
    };
    let h4 = |r: usize, i: usize, j: usize, k: usize| {
        phi[r].dot(&model.cubic.trilinear(&phi[i], &phi[j], &phi[k]))
    };

    // mass deviation M(x) = I + M1(x) + M2(x) acting on xddot
    let mut m1 = vec![vec![RPoly::zero(nv); m]; m];
    let mut m2 = vec![vec![RPoly::zero(nv); m]; m];
    for r in 0..m {
        for k in 0..m {
            for i in 0..m {
                m1[r][k] = m1[r][k].add(&xv[i].scale(pm(r, i, k) + pm(k, r, i)));
            }
            for j in 0..m {
                for p in 0..m {
                    m2[r][k] = m2[r][k].add(&xv[j].mul(&xv[p]).scale(tm(r, j, p, k)));
                }
            }
        }
    }

    // remaining force rows: velocity, stiffness and nonlinear terms
    let mut force = vec![RPoly::zero(nv); m];
    for r in 0..m {
        let mut f = RPoly::zero(nv);
        // inertia terms that carry no acceleration
        for i in 0..m {
            for j in 0..m {
                f = f.add(&yv[i].mul(&yv[j]).scale(pm(r, i, j)));
                for q in 0..m {
                    f = f.add(&xv[q].mul(&yv[i]).mul(&yv[j]).scale(tm(r, q, i, j)));
                }
            }
        }
        // stiffness rows
        f = f.add(&xv[r].scale(omega[r] * omega[r]));
        for i in 0..m {
            for j in 0..m {
                f = f.add(&xv[i].mul(&xv[j]).scale(0.5 * pk(r, i, j) + tk(r, i, j)));
                for q in 0..m {
                    f = f.add(
                        &xv[i]
                            .mul(&xv[j])
                            .mul(&xv[q])
                            .scale(0.5 * tkt(r, i, j, q)),
                    );
                }
            }
        }
        // nonlinear force rows
        for i in 0..m {
            for j in 0..m {
                f = f.add(&xv[i].mul(&xv[j]).scale(g3(r, i, j)));
                for q in 0..m {
                    f = f.add(&xv[i].mul(&xv[j]).mul(&xv[q]).scale(gth(r, i, j, q)));
                    f = f.add(&xv[i].mul(&xv[j]).mul(&xv[q]).scale(tg(r, i, j, q)));
                    f = f.add(&xv[i].mul(&xv[j]).mul(&xv[q]).scale(h4(r, i, j, q)));
                }
            }
        }
        force[r] = f.truncate(3);
    }

    // xddot = -(I - M1 - M2 + M1 M1) force, truncated at cubic order
    let mut acc = vec![RPoly::zero(nv); m];
    for r in 0..m {
        let mut a = force[r].scale(-1.0);
        for k in 0..m {
            a = a.add(&m1[r][k].mul_truncated(&force[k], 3));
            a = a.add(&m2[r][k].mul_truncated(&force[k], 3));
            for q in 0..m {
                a = a.sub(
                    &m1[r][q]
                        .mul_truncated(&m1[q][k], 3)
                        .mul_truncated(&force[k], 3),
                );
            }
        }
        acc[r] = a.truncate(3).chop(1e-300);
    }

    // assemble the reduced model; the linear part must stay -omega^2 x_r
    let mut rm = ReducedModel::linear(RomMethod::from_kind(kind), masters.clone(), omega.clone());
    for r in 0..m {
        for (key, v) in &acc[r].terms {
            let order: u8 = key.iter().sum();
            if order == 1 {
                let mut expect = vec![0u8; nv];
                expect[r] = 1;
                let target = if *key == expect {
                    -omega[r] * omega[r]
                } else {
                    0.0
                };
                let residue = (v - target).abs();
                report.linear_residue = report.linear_residue.max(residue);
                if residue > 1e-8 * omega[r] * omega[r] {
                    bail!("quadratic-manifold projection produced a spurious linear term");
                }
                continue;
            }
            let (dexp, vexp) = (key[..m].to_vec(), key[m..].to_vec());
            rm.add_term(r, -v, dexp, vexp);
        }
    }
    rm.canonicalise();

    // mapping: X = Phi x + 1/2 Theta(x, x), velocity rows by time derivative
    let mut linear = DMatrix::zeros(n, m);
    for (col, p) in phi.iter().enumerate() {
        linear.set_column(col, p);
    }
    let mut disp_terms = Vec::new();
    let mut vel_terms = Vec::new();
    for a in 0..m {
        for b in a..m {
            let fac = if a == b { 0.5 } else { 1.0 };
            let mut dexp = vec![0u8; m];
            dexp[a] += 1;
            dexp[b] += 1;
            disp_terms.push(MapTerm {
                disp_exps: dexp,
                vel_exps: vec![0; m],
                coeff: &theta[a][b] * fac,
            });
        }
    }
    for a in 0..m {
        for b in 0..m {
            let mut dexp = vec![0u8; m];
            dexp[a] = 1;
            let mut vexp = vec![0u8; m];
            vexp[b] = 1;
            vel_terms.push(MapTerm {
                disp_exps: dexp,
                vel_exps: vexp,
                coeff: theta[a][b].clone(),
            });
        }
    }
    let mut map = ManifoldMap {
        method: RomMethod::from_kind(kind),
        order: 2,
        masters,
        n_full: n,
        linear,
        disp_terms,
        vel_terms,
    };
    map.canonicalise();
    Ok((map, rm, report))
}

impl RomMethod {
    fn from_kind(kind: MdKind) -> RomMethod {
        match kind {
            MdKind::Full => RomMethod::QmMd,
            MdKind::Static => RomMethod::QmSmd,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_modal, ModalModel};
    use crate::tensor::{SymTensor3, SymTensor4};
    use approx::assert_relative_eq;

    fn two_dof_phys(omega2: f64, g211: f64, gm: f64, h: f64) -> PhysicalModel {
        let mut g = vec![];
        if g211 != 0.0 {
            g.push(([0usize, 0, 1], g211));
        }
        if gm != 0.0 {
            g.push(([0usize, 0, 0], gm));
        }
        let mut hh = vec![];
        if h != 0.0 {
            hh.push(([0usize, 0, 0, 0], h));
        }
        ModalModel::from_modal_data(
            vec![1.0, omega2],
            SymTensor3::from_raw(2, &g).unwrap(),
            SymTensor4::from_raw(2, &hh).unwrap(),
            None,
        )
        .unwrap()
        .as_physical()
    }

    #[test]
    fn zero_quadratic_means_zero_derivative() {
        let model = two_dof_phys(2.5, 0.0, 0.0, 1.0);
        let mm = assemble_modal(&model, 2).unwrap();
        for kind in [MdKind::Full, MdKind::Static] {
            let th = modal_derivative(&model, &mm.modes, &mm.omega, 0, 0, kind).unwrap();
            assert!(th.amax() < 1e-14);
        }
    }

    #[test]
    fn static_derivative_diagonal_solve() {
        // modal coordinates: K = diag(1, w2^2), Theta_s = -2 g^s_mm / K_ss
        let model = two_dof_phys(2.5, 0.5, 0.0, 0.0);
        let mm = assemble_modal(&model, 2).unwrap();
        let th = modal_derivative(&model, &mm.modes, &mm.omega, 0, 0, MdKind::Static).unwrap();
        assert_relative_eq!(th[1], -2.0 * 0.5 / 6.25, epsilon = 1e-12);
        assert_relative_eq!(th[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn full_derivative_is_mass_orthogonal() {
        let model = two_dof_phys(2.5, 0.5, 0.3, 0.0);
        let mm = assemble_modal(&model, 2).unwrap();
        let th = modal_derivative(&model, &mm.modes, &mm.omega, 0, 0, MdKind::Full).unwrap();
        let phi0 = mm.modes.column(0).into_owned();
        assert!(phi0.dot(&(&model.mass * &th)).abs() < 1e-12);
        // slave component matches the non-degenerate solve
        assert_relative_eq!(th[1], -2.0 * 0.5 / (6.25 - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn qm_map_is_velocity_independent_and_symmetric() {
        let model = two_dof_phys(2.5, 0.5, 0.3, 1.0);
        let (map, _, _) = qm_build(&model, &[0], MdKind::Static).unwrap();
        assert!(map.is_velocity_independent());
    }

    #[test]
    fn qm_zero_theta_reduces_to_linear_truncation() {
        let model = two_dof_phys(2.5, 0.0, 0.0, 1.0);
        let (map, rm, _) = qm_build(&model, &[0], MdKind::Full).unwrap();
        assert!(map.disp_terms.iter().all(|t| t.coeff.amax() < 1e-14));
        // only the bare cubic survives
        assert_relative_eq!(rm.coeff(0, &[3], &[0]), 1.0, epsilon = 1e-12);
        assert!(rm.coeff(0, &[1], &[2]).abs() < 1e-14);
    }

    #[test]
    fn qm_gamma_matches_closed_forms() {
        let model = two_dof_phys(2.5, 0.5, 0.3, 1.0);
        for (kind, method) in [(MdKind::Full, "qm-md"), (MdKind::Static, "qm-smd")] {
            let (_, rm, _) = qm_build(&model, &[0], kind).unwrap();
            let got = crate::dynamics::gamma::gamma_of_reduced_model(&rm, 0).unwrap();
            let mm = assemble_modal(&model, 2).unwrap();
            let gm = crate::dynamics::gamma::gamma_closed_form(
                &mm,
                0,
                crate::dynamics::gamma::GammaMethod::from_str(method).unwrap(),
            )
            .unwrap();
            assert_relative_eq!(got, gm.total, epsilon = 1e-10 * gm.total.abs());
        }
    }
}
