//! Desk-scale model generators: parametric oscillators and Galerkin beams.
//!
//! Beam models are simply supported with sine modes. Emitted modal models are
//! nondimensionalised: time is scaled by the first eigenfrequency of the flat
//! beam and amplitudes are in thickness units, so the flat-beam fundamental
//! sits at omega = 1 and tensor entries are O(1) for slender geometries.

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};

use crate::model::ModalModel;
use crate::tensor::{RawEntry3, RawEntry4, SymTensor3, SymTensor4};

/// Which axial stiffness multiplies the membrane integral of the beam.
///
/// The governing equation is written with N = c/(2l) * integral(w'^2); the
/// reviewed formulation prints c = EI while the classical derivation uses the
/// stretching stiffness c = ES. Both are exposed; neither is silently applied
/// to the other's place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxialStiffness {
    /// c = E I (as printed in the source beam equation).
    Bending,
    /// c = E S (classical stretching stiffness).
    #[default]
    Stretching,
}

/// Two coupled oscillators with a prescribed spectrum and tensors.
#[derive(Debug, Clone)]
pub struct TwoDofSpec {
    pub omega: [f64; 2],
    pub quad: Vec<RawEntry3>,
    pub cubic: Vec<RawEntry4>,
    pub damping: Option<[f64; 2]>,
}

/// Geometry and material of the Galerkin beam family.
#[derive(Debug, Clone)]
pub struct BeamSpec {
    pub modes: usize,
    pub length: f64,
    pub thickness: f64,
    pub youngs: f64,
    pub density: f64,
    pub axial: AxialStiffness,
    /// Cubic foundation coefficient (foundation-beam kind).
    pub kappa: f64,
    /// Static arch deflection amplitude in thickness units (shallow-arch kind).
    pub rise: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        Self {
            modes: 3,
            length: 1.0,
            thickness: 0.01,
            youngs: 1.0,
            density: 1.0,
            axial: AxialStiffness::default(),
            kappa: 0.0,
            rise: 0.0,
        }
    }
}

impl BeamSpec {
    fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            bail!("mode count must be at least 1");
        }
        for (name, v) in [
            ("length", self.length),
            ("thickness", self.thickness),
            ("youngs", self.youngs),
            ("density", self.density),
        ] {
            if v <= 0.0 || !v.is_finite() {
                bail!("beam parameter {name} must be positive, got {v}");
            }
        }
        if self.kappa < 0.0 {
            bail!("foundation coefficient must be non-negative");
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on [0, len], by Golub-Welsch.
pub fn gauss_legendre(n: usize, len: f64) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &idx in &order {
        let x = eig.eigenvalues[idx];
        let w = 2.0 * eig.eigenvectors[(0, idx)].powi(2);
        nodes.push(0.5 * len * (x + 1.0));
        weights.push(0.5 * len * w);
    }
    (nodes, weights)
}

/// Two uncoupled or coupled oscillators with given spectrum and tensors.
pub fn make_two_dof(spec: &TwoDofSpec) -> Result<ModalModel> {
    let [w1, w2] = spec.omega;
    if w1 <= 0.0 || w2 <= 0.0 {
        bail!("oscillator frequencies must be positive");
    }
    if w2 < w1 {
        bail!("frequencies must be ascending");
    }
    let quad = SymTensor3::from_raw(2, &spec.quad)
        .context("quadratic tensor entries are symmetry-inconsistent")?;
    let cubic = SymTensor4::from_raw(2, &spec.cubic)
        .context("cubic tensor entries are symmetry-inconsistent")?;
    ModalModel::from_modal_data(
        vec![w1, w2],
        quad,
        cubic,
        spec.damping.map(|d| d.to_vec()),
    )
}

struct BeamQuadrature {
    /// a2[i][j] = integral phi_i' phi_j'
    a2: DMatrix<f64>,
    /// b2[p][j] = integral phi_j'' phi_p
    b2: DMatrix<f64>,
    /// mass[p][q] = integral phi_p phi_q
    mass: DMatrix<f64>,
    /// bend[p][q] = integral phi_p'' phi_q''
    bend: DMatrix<f64>,
}

fn beam_quadrature(modes: usize, l: f64) -> BeamQuadrature {
    let npts = 8 * modes + 24;
    let (nodes, weights) = gauss_legendre(npts, l);
    let kap = |j: usize| ((j + 1) as f64 * std::f64::consts::PI / l).powi(2);
    let phi = |j: usize, y: f64| (((j + 1) as f64 * std::f64::consts::PI / l) * y).sin();
    let dphi = |j: usize, y: f64| {
        let k = (j + 1) as f64 * std::f64::consts::PI / l;
        k * (k * y).cos()
    };
    let mut a2 = DMatrix::zeros(modes, modes);
    let mut b2 = DMatrix::zeros(modes, modes);
    let mut mass = DMatrix::zeros(modes, modes);
    let mut bend = DMatrix::zeros(modes, modes);
    for i in 0..modes {
        for j in 0..modes {
            let mut s_a2 = 0.0;
            let mut s_m = 0.0;
            for (y, w) in nodes.iter().zip(&weights) {
                s_a2 += w * dphi(i, *y) * dphi(j, *y);
                s_m += w * phi(i, *y) * phi(j, *y);
            }
            a2[(i, j)] = s_a2;
            mass[(i, j)] = s_m;
            // phi_j'' = -kappa_j phi_j for sine modes
            b2[(i, j)] = -kap(j) * s_m;
            bend[(i, j)] = kap(i) * kap(j) * s_m;
        }
    }
    BeamQuadrature { a2, b2, mass, bend }
}

fn assemble_beam(
    spec: &BeamSpec,
    membrane: bool,
    foundation: bool,
    arch: bool,
) -> Result<ModalModel> {
    spec.validate()?;
    let nm = spec.modes;
    let l = spec.length;
    let ht = spec.thickness;
    let area = ht; // unit width
    let inertia = ht.powi(3) / 12.0;
    let ei = spec.youngs * inertia;
    let rho_s = spec.density * area;
    let coef = match spec.axial {
        AxialStiffness::Bending => ei,
        AxialStiffness::Stretching => spec.youngs * area,
    };
    let q = beam_quadrature(nm, l);

    // generalised mass and bending stiffness
    let m_gen = rho_s * q.mass[(0, 0)];
    for p in 0..nm {
        for r in 0..nm {
            let off = if p == r { 0.0 } else { q.mass[(p, r)].abs() };
            if off > 1e-12 * q.mass[(0, 0)] {
                bail!("sine modes lost orthogonality in quadrature");
            }
        }
        if (q.mass[(p, p)] - q.mass[(0, 0)]).abs() > 1e-12 * q.mass[(0, 0)] {
            bail!("generalised masses are not uniform");
        }
    }
    let mut k_gen = DMatrix::zeros(nm, nm);
    for p in 0..nm {
        k_gen[(p, p)] = ei * q.bend[(p, p)];
    }

    let mut quad_raw: Vec<RawEntry3> = Vec::new();
    let mut cubic_raw: Vec<RawEntry4> = Vec::new();

    if membrane {
        // initial shape: parabola with midspan rise a0, stress-free at rest.
        // The membrane force N = c/(2l) integral(2 w0' w' + w'^2) couples the
        // static shape to the motion; the O(a0^2) prestress shift of the
        // linear stiffness is dropped so the flat-beam sine modes remain the
        // exact basis for any rise (shallow-arch truncation).
        let a0 = if arch { spec.rise * ht } else { 0.0 };
        let npts = 8 * nm + 24;
        let (nodes, weights) = gauss_legendre(npts, l);
        let dphi = |j: usize, y: f64| {
            let k = (j + 1) as f64 * std::f64::consts::PI / l;
            k * (k * y).cos()
        };
        let dshape = |y: f64| a0 * 4.0 * (l - 2.0 * y) / (l * l);
        // a1[k] = integral w0' phi_k'
        let a1: Vec<f64> = (0..nm)
            .map(|k| {
                nodes
                    .iter()
                    .zip(&weights)
                    .map(|(y, w)| w * dshape(*y) * dphi(k, *y))
                    .sum()
            })
            .collect();
        let c2l = coef / (2.0 * l);

        if arch && a0 != 0.0 {
            // quadratic force from the cubic membrane energy
            // (c/2l) (integral w0' w') (integral w'^2):
            // f_p = (c/l)(a1.q)(a2[p,:].q) + (c/2l) a1[p] (q.a2 q)
            for p in 0..nm {
                for j in 0..nm {
                    for k in j..nm {
                        let mut c = c2l * (a1[k] * q.a2[(p, j)] + a1[j] * q.a2[(p, k)]);
                        c += c2l * a1[p] * q.a2[(j, k)];
                        quad_raw.push(([p, j, k], c));
                    }
                }
            }
        }

        // cubic membrane force from the quartic energy (c/8l)(integral w'^2)^2,
        // fully symmetrised
        for p in 0..nm {
            for i in 0..nm {
                for j in i..nm {
                    for k in j..nm {
                        let h = (c2l / 3.0)
                            * (q.a2[(p, i)] * q.a2[(j, k)]
                                + q.a2[(p, j)] * q.a2[(i, k)]
                                + q.a2[(p, k)] * q.a2[(i, j)]);
                        cubic_raw.push(([p, i, j, k], h));
                    }
                }
            }
        }
    }

    if foundation && spec.kappa != 0.0 {
        let npts = 8 * nm + 24;
        let (nodes, weights) = gauss_legendre(npts, l);
        let phi = |j: usize, y: f64| (((j + 1) as f64 * std::f64::consts::PI / l) * y).sin();
        for p in 0..nm {
            for i in p..nm {
                for j in i..nm {
                    for k in j..nm {
                        let mut s = 0.0;
                        for (y, w) in nodes.iter().zip(&weights) {
                            s += w * phi(p, *y) * phi(i, *y) * phi(j, *y) * phi(k, *y);
                        }
                        cubic_raw.push(([p, i, j, k], spec.kappa * s));
                    }
                }
            }
        }
    }

    // nondimensionalise: time by the flat-beam fundamental, amplitude by thickness
    let kap1 = (std::f64::consts::PI / l).powi(2);
    let omega_ref2 = ei * kap1 * kap1 / rho_s;
    let scale = m_gen * omega_ref2;
    let mut omega = Vec::with_capacity(nm);
    for p in 0..nm {
        for r in 0..nm {
            if r != p && k_gen[(p, r)].abs() > 1e-10 * k_gen[(p, p)].abs() {
                bail!("stiffness coupling outside the diagonal; arch shape must be a mode shape");
            }
        }
        let w2 = k_gen[(p, p)] / scale;
        if w2 <= 0.0 {
            bail!("non-positive squared frequency for mode {}", p + 1);
        }
        omega.push(w2.sqrt());
    }

    // scale, then drop quadrature roundoff relative to the leading entries
    let gq = ht / scale;
    let gc = ht * ht / scale;
    let quad_max = quad_raw.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs())) * gq;
    let cubic_max = cubic_raw.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs())) * gc;
    let quad_scaled: Vec<RawEntry3> = quad_raw
        .iter()
        .map(|(i, v)| (*i, v * gq))
        .filter(|(_, v)| v.abs() > 1e-12 * quad_max)
        .collect();
    let cubic_scaled: Vec<RawEntry4> = cubic_raw
        .iter()
        .map(|(i, v)| (*i, v * gc))
        .filter(|(_, v)| v.abs() > 1e-12 * cubic_max)
        .collect();

    let quad = SymTensor3::from_raw(nm, &quad_scaled)
        .context("beam quadratic tensor failed the symmetry consistency check")?;
    let cubic = SymTensor4::from_raw(nm, &cubic_scaled)
        .context("beam cubic tensor failed the symmetry consistency check")?;
    ModalModel::from_modal_data(omega, quad, cubic, None)
}

/// Flat beam with membrane-stretching nonlinearity: cubic hardening, no
/// quadratic coupling, frequencies at k^2.
pub fn make_vk_beam(spec: &BeamSpec) -> Result<ModalModel> {
    assemble_beam(spec, true, false, false)
}

/// Linear beam on a cubic elastic foundation: h^p_ijk = kappa * integral of
/// four mode shapes; no quadratic coupling.
pub fn make_foundation_beam(spec: &BeamSpec) -> Result<ModalModel> {
    assemble_beam(spec, false, true, false)
}

/// Shallow arch: first-mode static deflection adds quadratic coupling
/// proportional to the rise, with the cubic terms of the flat beam.
pub fn make_shallow_arch(spec: &BeamSpec) -> Result<ModalModel> {
    if spec.rise.abs() * spec.thickness > 0.2 * spec.length {
        bail!("arch rise is too large for the shallow model");
    }
    assemble_beam(spec, true, false, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_modal_symmetry;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(6, 2.0);
        // integral over [0,2] of y^k
        for k in 0..=11usize {
            let got: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(y, w)| w * y.powi(k as i32))
                .sum();
            let expect = 2.0_f64.powi(k as i32 + 1) / (k as f64 + 1.0);
            assert_relative_eq!(got, expect, epsilon = 1e-12 * expect.abs());
        }
    }

    #[test]
    fn two_dof_linear_when_tensors_empty() {
        let mm = make_two_dof(&TwoDofSpec {
            omega: [1.0, 2.5],
            quad: vec![],
            cubic: vec![],
            damping: None,
        })
        .unwrap();
        assert!(mm.quad.is_zero());
        assert!(mm.cubic.is_zero());
    }

    #[test]
    fn two_dof_rejects_inconsistent_entries() {
        let err = make_two_dof(&TwoDofSpec {
            omega: [1.0, 2.5],
            quad: vec![([0, 0, 1], 1.0), ([1, 0, 0], 0.5)],
            cubic: vec![],
            damping: None,
        })
        .unwrap_err();
        assert!(format!("{err:#}").contains("symmetry-inconsistent"));
    }

    #[test]
    fn vk_beam_frequencies_scale_as_k_squared() {
        let spec = BeamSpec {
            modes: 5,
            ..BeamSpec::default()
        };
        let mm = make_vk_beam(&spec).unwrap();
        for k in 0..5 {
            assert_relative_eq!(
                mm.omega[k],
                ((k + 1) * (k + 1)) as f64,
                epsilon = 1e-10
            );
        }
        assert!(mm.quad.is_zero(), "flat beam has no quadratic coupling");
        assert!(mm.cubic.get([0, 0, 0, 0]) > 0.0, "hardening Duffing term");
        assert!(check_modal_symmetry(&mm).passes(1e-12));
    }

    #[test]
    fn vk_beam_duffing_coefficient_matches_quadrature_oracle() {
        // closed form with stretching stiffness: h^p_ppp (generalised) =
        // C l kappa_p^2 / 8, nondimensionalised by ht^2/(m omega_ref^2)
        let spec = BeamSpec {
            modes: 2,
            ..BeamSpec::default()
        };
        let mm = make_vk_beam(&spec).unwrap();
        let l = spec.length;
        let ht = spec.thickness;
        let coef = spec.youngs * ht;
        let kap = |p: usize| ((p + 1) as f64 * PI / l).powi(2);
        let m_gen = spec.density * ht * l / 2.0;
        let omega_ref2 = spec.youngs * (ht.powi(3) / 12.0) * kap(0) * kap(0) / (spec.density * ht);
        let scale = ht * ht / (m_gen * omega_ref2);
        let h1111 = coef * l * kap(0) * kap(0) / 8.0 * scale;
        assert_relative_eq!(mm.cubic.get([0, 0, 0, 0]), h1111, epsilon = 1e-10 * h1111);
        let h1122 = coef * l * kap(0) * kap(1) / 24.0 * scale;
        assert_relative_eq!(mm.cubic.get([0, 0, 1, 1]), h1122, epsilon = 1e-10 * h1122);
    }

    #[test]
    fn foundation_beam_cubic_from_sine_quadrature() {
        let spec = BeamSpec {
            modes: 3,
            kappa: 2.0,
            ..BeamSpec::default()
        };
        let mm = make_foundation_beam(&spec).unwrap();
        assert!(mm.quad.is_zero());
        let l = spec.length;
        let ht = spec.thickness;
        let m_gen = spec.density * ht * l / 2.0;
        let kap1 = (PI / l).powi(2);
        let omega_ref2 = spec.youngs * (ht.powi(3) / 12.0) * kap1 * kap1 / (spec.density * ht);
        let scale = ht * ht / (m_gen * omega_ref2);
        // integral of sin^4 over [0,l] = 3l/8
        let expect_1111 = spec.kappa * 3.0 * l / 8.0 * scale;
        assert_relative_eq!(
            mm.cubic.get([0, 0, 0, 0]),
            expect_1111,
            epsilon = 1e-10 * expect_1111
        );
        // integral sin^3(pi y) sin(3 pi y) = -l/8 gives the 1,1,1,3 coupling
        let expect_1113 = -spec.kappa * l / 8.0 * scale;
        assert_relative_eq!(
            mm.cubic.get([0, 0, 0, 2]),
            expect_1113,
            epsilon = 1e-10 * expect_1113.abs()
        );
        assert!(check_modal_symmetry(&mm).passes(1e-12));
    }

    #[test]
    fn arch_quadratic_scales_linearly_in_rise() {
        let base = BeamSpec {
            modes: 3,
            rise: 0.5,
            ..BeamSpec::default()
        };
        let mm1 = make_shallow_arch(&base).unwrap();
        let mm2 = make_shallow_arch(&BeamSpec {
            rise: 1.0,
            ..base.clone()
        })
        .unwrap();
        let mm_neg = make_shallow_arch(&BeamSpec {
            rise: -0.5,
            ..base.clone()
        })
        .unwrap();
        assert!(!mm1.quad.is_zero(), "arch develops quadratic coupling");
        for (idx, v) in mm1.quad.entries() {
            assert_relative_eq!(mm2.quad.get(*idx), 2.0 * v, epsilon = 1e-12 * v.abs());
            assert_relative_eq!(mm_neg.quad.get(*idx), -v, epsilon = 1e-12 * v.abs());
        }
        // cubic terms do not depend on the sign of the rise
        for (idx, v) in mm1.cubic.entries() {
            assert_relative_eq!(mm_neg.cubic.get(*idx), *v, epsilon = 1e-12 * v.abs());
        }
        // invariant-breaking self-quadratic on the slaves is present
        assert!(mm1.quad.get([1, 0, 0]) != 0.0);
        assert!(check_modal_symmetry(&mm1).passes(1e-12));
    }

    #[test]
    fn arch_reduces_to_flat_beam_at_zero_rise() {
        let spec = BeamSpec {
            modes: 3,
            rise: 0.0,
            ..BeamSpec::default()
        };
        let arch = make_shallow_arch(&spec).unwrap();
        let flat = make_vk_beam(&spec).unwrap();
        assert!(arch.quad.is_zero());
        for (idx, v) in flat.cubic.entries() {
            assert_relative_eq!(arch.cubic.get(*idx), *v, epsilon = 1e-12 * v.abs());
        }
        for k in 0..3 {
            assert_relative_eq!(arch.omega[k], flat.omega[k], epsilon = 1e-12);
        }
    }
}
