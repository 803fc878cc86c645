//! Closed-form third-order invariant-manifold reduced models.
//!
//! Three constructions of the same family of invariant manifolds:
//! the graph-style functional relation between slave and master modal
//! coordinates, the real normal form in new coordinates with only trivially
//! resonant cubic monomials, and the direct normal form computed from the
//! physical mass and stiffness matrices with only the master eigenpairs.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::model::{eigenpairs, ModalModel, PhysicalModel};
use crate::parametrise::{
    diagonalize, parametrise, real_substitution, substitute_linear, Style,
};
use crate::poly::RPoly;
use crate::rom::{ManifoldMap, MapTerm, ReducedModel, RomMethod};

/// Relative guard on the 2:1 slave resonance |w_s - 2 w_m| / w_m.
pub const RES_GUARD_TOL: f64 = 1e-3;

fn check_masters(nm: usize, masters: &[usize]) -> Result<Vec<usize>> {
    if masters.is_empty() {
        bail!("master set must not be empty");
    }
    let mut sorted = masters.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != masters.len() {
        bail!("master set contains duplicates");
    }
    if sorted.iter().any(|&m| m >= nm) {
        bail!("master index out of range");
    }
    Ok(sorted)
}

/// Graph-style reduction to a single master mode, third order.
pub fn graph_single(mm: &ModalModel, master: usize) -> Result<(ManifoldMap, ReducedModel)> {
    graph_single_with_tol(mm, master, RES_GUARD_TOL)
}

pub fn graph_single_with_tol(
    mm: &ModalModel,
    master: usize,
    guard_tol: f64,
) -> Result<(ManifoldMap, ReducedModel)> {
    let nm = mm.n_modes();
    if master >= nm {
        bail!("master index out of range");
    }
    let wm = mm.omega[master];
    for s in 0..nm {
        if s != master && (mm.omega[s] - 2.0 * wm).abs() < guard_tol * wm {
            bail!(
                "second-order internal resonance: slave mode {} has w = {:.6} close to \
                 2 w_master = {:.6}; single-master reduction is not meaningful",
                s + 1,
                mm.omega[s],
                2.0 * wm
            );
        }
    }

    let mut linear = DMatrix::zeros(nm, 1);
    linear[(master, 0)] = 1.0;
    let mut a_coeff = DVector::zeros(nm);
    let mut b_coeff = DVector::zeros(nm);
    let mut alpha_coeff = DVector::zeros(nm);
    let mut cubic_x3 = mm.cubic.get([master, master, master, master]);
    let mut cubic_xy2 = 0.0;
    for s in 0..nm {
        if s == master {
            continue;
        }
        let ws2 = mm.omega[s] * mm.omega[s];
        let gs = mm.quad.get([s, master, master]);
        let denom = ws2 * (ws2 - 4.0 * wm * wm);
        let a = gs * (2.0 * wm * wm - ws2) / denom;
        let b = 2.0 * gs / denom;
        a_coeff[s] = a;
        b_coeff[s] = b;
        alpha_coeff[s] = -2.0 * gs / (ws2 - 4.0 * wm * wm);
        // reduced dynamics gathers 2 g^m_ms g^s_mm times the slave geometry
        let gms = mm.quad.get([master, master, s]);
        cubic_x3 += 2.0 * gms * gs * (2.0 * wm * wm - ws2) / denom;
        cubic_xy2 += 2.0 * gms * gs * 2.0 / denom;
    }

    let mut map = ManifoldMap {
        method: RomMethod::Graph,
        order: 2,
        masters: vec![master],
        n_full: nm,
        linear,
        disp_terms: vec![
            MapTerm {
                disp_exps: vec![2],
                vel_exps: vec![0],
                coeff: a_coeff,
            },
            MapTerm {
                disp_exps: vec![0],
                vel_exps: vec![2],
                coeff: b_coeff,
            },
        ],
        vel_terms: vec![MapTerm {
            disp_exps: vec![1],
            vel_exps: vec![1],
            coeff: alpha_coeff,
        }],
    };
    map.canonicalise();

    let mut rm = ReducedModel::linear(RomMethod::Graph, vec![master], vec![wm]);
    rm.add_term(0, mm.quad.get([master, master, master]), vec![2], vec![0]);
    rm.add_term(0, cubic_x3, vec![3], vec![0]);
    rm.add_term(0, cubic_xy2, vec![1], vec![2]);
    rm.canonicalise();
    if let Some(xi) = &mm.damping {
        rm = rm.with_damping(vec![xi[master]]);
    }
    Ok((map, rm))
}

/// Graph-style multi-master reduction through the parametrisation engine,
/// converted to real oscillator form.
pub fn graph_multi(mm: &ModalModel, masters: &[usize]) -> Result<(ManifoldMap, ReducedModel)> {
    let nm = mm.n_modes();
    let masters = check_masters(nm, masters)?;
    let sys = diagonalize(mm, None)?;
    let par = parametrise(&sys, &masters, 3, Style::Graph)?;
    let d = masters.len();
    let subs = real_substitution(&par.lambda_master);

    // slave geometry: x_s and y_s rows of W, orders >= 2
    let mut linear = DMatrix::zeros(nm, d);
    for (col, &m) in masters.iter().enumerate() {
        linear[(m, col)] = 1.0;
    }
    let mut disp_terms: std::collections::BTreeMap<(Vec<u8>, Vec<u8>), DVector<f64>> =
        std::collections::BTreeMap::new();
    let mut vel_terms: std::collections::BTreeMap<(Vec<u8>, Vec<u8>), DVector<f64>> =
        std::collections::BTreeMap::new();
    let one = num_complex::Complex64::new(1.0, 0.0);
    for s in 0..nm {
        for part in &par.w[1..] {
            let xrow = substitute_linear(
                &part.terms,
                &[(2 * s, one), (2 * s + 1, one)],
                &subs,
                2 * d,
            );
            let yrow = substitute_linear(
                &part.terms,
                &[(2 * s, sys.lambda[2 * s]), (2 * s + 1, sys.lambda[2 * s + 1])],
                &subs,
                2 * d,
            );
            for (target, row) in [(&mut disp_terms, xrow), (&mut vel_terms, yrow)] {
                let rp = row.into_real(1e-10)?;
                for (key, v) in &rp.terms {
                    let (dexp, vexp) = (key[..d].to_vec(), key[d..].to_vec());
                    target
                        .entry((dexp, vexp))
                        .or_insert_with(|| DVector::zeros(nm))[s] += v;
                }
            }
        }
    }
    let collect = |map: std::collections::BTreeMap<(Vec<u8>, Vec<u8>), DVector<f64>>| {
        map.into_iter()
            .filter(|(_, c)| c.amax() > 1e-300)
            .map(|((dx, vx), c)| MapTerm {
                disp_exps: dx,
                vel_exps: vx,
                coeff: c,
            })
            .collect::<Vec<_>>()
    };
    let map = ManifoldMap {
        method: RomMethod::GraphMulti,
        order: 3,
        masters: masters.clone(),
        n_full: nm,
        linear,
        disp_terms: collect(disp_terms),
        vel_terms: collect(vel_terms),
    };

    // reduced dynamics: R_r'' = lambda f_a + conj(lambda) f_b
    let omega: Vec<f64> = masters.iter().map(|&m| mm.omega[m]).collect();
    let mut rm = ReducedModel::linear(RomMethod::GraphMulti, masters.clone(), omega.clone());
    for (pos, _) in masters.iter().enumerate() {
        let la = par.lambda_master[2 * pos];
        let lb = par.lambda_master[2 * pos + 1];
        let mut acc = crate::parametrise::CPoly::zero(2 * d);
        let mut vel_check = crate::parametrise::CPoly::zero(2 * d);
        for part in &par.f {
            acc.add(&substitute_linear(
                &part.terms,
                &[(2 * pos, la), (2 * pos + 1, lb)],
                &subs,
                2 * d,
            ));
            vel_check.add(&substitute_linear(
                &part.terms,
                &[(2 * pos, one), (2 * pos + 1, one)],
                &subs,
                2 * d,
            ));
        }
        // graph style keeps the master displacement equal to the modal one,
        // so the first-order part must reduce to R' = S exactly
        let vc = vel_check.into_real(1e-10)?;
        let mut expected = RPoly::zero(2 * d);
        let mut key = vec![0u8; 2 * d];
        key[d + pos] = 1;
        expected.add_term(&key, 1.0);
        let diff = vc.sub(&expected);
        if diff.max_abs_coeff() > 1e-10 {
            bail!("graph-style reduced field is not in second-order form");
        }
        let sdot = acc.into_real(1e-10)?;
        for (kexp, v) in &sdot.terms {
            let order: u8 = kexp.iter().sum();
            if order <= 1 {
                continue; // linear part is -w^2 R_r
            }
            let (dexp, vexp) = (kexp[..d].to_vec(), kexp[d..].to_vec());
            rm.add_term(pos, -v, dexp, vexp);
        }
    }
    rm.canonicalise();
    Ok((map, rm))
}

/// Second-order normal-form coefficients a, b, gamma of the slave geometry
/// for one master pair (i, j), all modes.
struct NfQuadratic {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// gamma[(s, ij)] with ij the ordered pair index i * m + j.
    gamma: DMatrix<f64>,
}

fn nf_quadratic(mm: &ModalModel, masters: &[usize], guard_tol: f64) -> Result<NfQuadratic> {
    let nm = mm.n_modes();
    let m = masters.len();
    let mut a = DMatrix::zeros(nm, m * m);
    let mut b = DMatrix::zeros(nm, m * m);
    let mut gamma = DMatrix::zeros(nm, m * m);
    for (pi, &i) in masters.iter().enumerate() {
        for (pj, &j) in masters.iter().enumerate() {
            let wi = mm.omega[i];
            let wj = mm.omega[j];
            for s in 0..nm {
                let ws = mm.omega[s];
                let gs = mm.quad.get([s, i, j]);
                let dp = (wi + wj).powi(2) - ws * ws;
                let dn = (wi - wj).powi(2) - ws * ws;
                if (wi + wj - ws).abs() < guard_tol * ws {
                    bail!(
                        "second-order internal resonance: w{} + w{} is within {:.0e} of \
                         w{} (mode {}); the resonant monomial must be retained",
                        i + 1,
                        j + 1,
                        guard_tol,
                        s + 1,
                        s + 1
                    );
                }
                if ((wi - wj).abs() - ws).abs() < guard_tol * ws {
                    bail!(
                        "second-order internal resonance: |w{} - w{}| is within {:.0e} of \
                         w{} (mode {}); the resonant monomial must be retained",
                        i + 1,
                        j + 1,
                        guard_tol,
                        s + 1,
                        s + 1
                    );
                }
                let psi_p = gs / dp;
                let psi_n = gs / dn;
                let col = pi * m + pj;
                a[(s, col)] = 0.5 * (psi_p + psi_n);
                b[(s, col)] = -(psi_p - psi_n) / (2.0 * wi * wj);
                gamma[(s, col)] = ((wj + wi) * psi_p + (wj - wi) * psi_n) / wj;
            }
        }
    }
    Ok(NfQuadratic { a, b, gamma })
}

/// Reject non-trivial third-order internal resonances (the v1 normal form
/// keeps only trivially resonant cubic monomials).
fn check_cubic_resonances(mm: &ModalModel, masters: &[usize], tol: f64) -> Result<()> {
    let nm = mm.n_modes();
    let m = masters.len();
    for a in 0..m {
        for bq in a..m {
            for c in bq..m {
                let (ia, ib, ic) = (masters[a], masters[bq], masters[c]);
                for target in 0..nm {
                    let wt = mm.omega[target];
                    for mask in 0..8u8 {
                        let s1 = if mask & 1 != 0 { -1.0 } else { 1.0 };
                        let s2 = if mask & 2 != 0 { -1.0 } else { 1.0 };
                        let s3 = if mask & 4 != 0 { -1.0 } else { 1.0 };
                        let sum = s1 * mm.omega[ia] + s2 * mm.omega[ib] + s3 * mm.omega[ic];
                        if (sum - wt).abs() >= tol * wt {
                            continue;
                        }
                        // trivial pattern: +w_target with an equal pair of
                        // opposite signs
                        let combo = [(ia, s1), (ib, s2), (ic, s3)];
                        let mut trivial = false;
                        for t in 0..3 {
                            let (idx, sg) = combo[t];
                            if idx != target || sg < 0.0 {
                                continue;
                            }
                            let others: Vec<(usize, f64)> = (0..3)
                                .filter(|&q| q != t)
                                .map(|q| combo[q])
                                .collect();
                            if others[0].0 == others[1].0 && others[0].1 * others[1].1 < 0.0 {
                                trivial = true;
                                break;
                            }
                        }
                        if !trivial {
                            bail!(
                                "third-order internal resonance: {}w{} {}w{} {}w{} is \
                                 within {:.0e} of w{} (mode {}); the resonant monomial \
                                 must be retained",
                                if s1 > 0.0 { "+" } else { "-" },
                                ia + 1,
                                if s2 > 0.0 { "+" } else { "-" },
                                ib + 1,
                                if s3 > 0.0 { "+" } else { "-" },
                                ic + 1,
                                tol,
                                target + 1,
                                target + 1
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Assemble the cubic normal-form reduced dynamics from the A, B tensors
/// and the cubic modal coefficients restricted to the masters.
fn assemble_cubic_rom(
    method: RomMethod,
    masters: &[usize],
    omega: &[f64],
    a4: &dyn Fn(usize, usize, usize, usize) -> f64,
    b4: &dyn Fn(usize, usize, usize, usize) -> f64,
    h4: &dyn Fn(usize, usize, usize, usize) -> f64,
) -> ReducedModel {
    let m = masters.len();
    let mut rm = ReducedModel::linear(method, masters.to_vec(), omega.to_vec());
    for r in 0..m {
        let mut e3 = vec![0u8; m];
        e3[r] = 3;
        rm.add_term(r, a4(r, r, r, r) + h4(r, r, r, r), e3, vec![0; m]);
        let mut d1 = vec![0u8; m];
        d1[r] = 1;
        let mut v2 = vec![0u8; m];
        v2[r] = 2;
        rm.add_term(r, b4(r, r, r, r), d1.clone(), v2);
        for j in 0..m {
            if j == r {
                continue;
            }
            // R_r R_j^2
            let mut dx = vec![0u8; m];
            dx[r] = 1;
            dx[j] = 2;
            let coeff =
                a4(r, j, j, r) + a4(r, j, r, j) + a4(r, r, j, j) + 3.0 * h4(r, r, j, j);
            rm.add_term(r, coeff, dx, vec![0; m]);
            // R_r Rdot_j^2
            let mut dxr = vec![0u8; m];
            dxr[r] = 1;
            let mut vj = vec![0u8; m];
            vj[j] = 2;
            rm.add_term(r, b4(r, r, j, j), dxr, vj);
            // Rdot_r R_j Rdot_j
            let mut dj = vec![0u8; m];
            dj[j] = 1;
            let mut vrj = vec![0u8; m];
            vrj[r] = 1;
            vrj[j] = 1;
            rm.add_term(r, b4(r, j, j, r) + b4(r, j, r, j), dj, vrj);
        }
    }
    rm.canonicalise();
    rm
}

/// Third-order normal form in modal coordinates: second-order mapping plus
/// cubic reduced dynamics with only trivially resonant monomials.
pub fn nf_third_order(mm: &ModalModel, masters: &[usize]) -> Result<(ManifoldMap, ReducedModel)> {
    nf_third_order_with_tol(mm, masters, RES_GUARD_TOL)
}

pub fn nf_third_order_with_tol(
    mm: &ModalModel,
    masters: &[usize],
    guard_tol: f64,
) -> Result<(ManifoldMap, ReducedModel)> {
    let nm = mm.n_modes();
    let masters = check_masters(nm, masters)?;
    let m = masters.len();
    let quad = nf_quadratic(mm, &masters, guard_tol)?;
    check_cubic_resonances(mm, &masters, guard_tol)?;

    // mapping: x_k = R_k + sum a^k_ij R_i R_j + b^k_ij S_i S_j,
    //          y_k = S_k + sum gamma^k_ij R_i S_j
    let mut linear = DMatrix::zeros(nm, m);
    for (col, &mm_idx) in masters.iter().enumerate() {
        linear[(mm_idx, col)] = 1.0;
    }
    let mut disp_terms = Vec::new();
    let mut vel_terms = Vec::new();
    for pi in 0..m {
        for pj in pi..m {
            let col = pi * m + pj;
            let fac = if pi == pj { 1.0 } else { 2.0 };
            let mut dexp = vec![0u8; m];
            dexp[pi] += 1;
            dexp[pj] += 1;
            disp_terms.push(MapTerm {
                disp_exps: dexp.clone(),
                vel_exps: vec![0; m],
                coeff: quad.a.column(col) * fac,
            });
            let mut vexp = vec![0u8; m];
            vexp[pi] += 1;
            vexp[pj] += 1;
            disp_terms.push(MapTerm {
                disp_exps: vec![0; m],
                vel_exps: vexp,
                coeff: quad.b.column(col) * fac,
            });
        }
    }
    for pi in 0..m {
        for pj in 0..m {
            let col = pi * m + pj;
            let mut dexp = vec![0u8; m];
            dexp[pi] = 1;
            let mut vexp = vec![0u8; m];
            vexp[pj] += 1;
            vel_terms.push(MapTerm {
                disp_exps: dexp,
                vel_exps: vexp,
                coeff: quad.gamma.column(col).into_owned(),
            });
        }
    }
    let mut map = ManifoldMap {
        method: RomMethod::NormalForm,
        order: 2,
        masters: masters.clone(),
        n_full: nm,
        linear,
        disp_terms,
        vel_terms,
    };
    map.canonicalise();

    // A^r_ijk = sum_s 2 g^r_is a^s_jk, B^r_ijk = sum_s 2 g^r_is b^s_jk
    let a4 = |r: usize, i: usize, j: usize, k: usize| -> f64 {
        let col = j * m + k;
        (0..nm)
            .map(|s| 2.0 * mm.quad.get([masters[r], masters[i], s]) * quad.a[(s, col)])
            .sum()
    };
    let b4 = |r: usize, i: usize, j: usize, k: usize| -> f64 {
        let col = j * m + k;
        (0..nm)
            .map(|s| 2.0 * mm.quad.get([masters[r], masters[i], s]) * quad.b[(s, col)])
            .sum()
    };
    let h4 = |r: usize, i: usize, j: usize, k: usize| -> f64 {
        mm.cubic
            .get([masters[r], masters[i], masters[j], masters[k]])
    };
    let omega: Vec<f64> = masters.iter().map(|&i| mm.omega[i]).collect();
    let mut rm = assemble_cubic_rom(RomMethod::NormalForm, &masters, &omega, &a4, &b4, &h4);
    if let Some(xi) = &mm.damping {
        rm = rm.with_damping(masters.iter().map(|&i| xi[i]).collect());
    }
    Ok((map, rm))
}

/// Options for the direct normal form solves.
#[derive(Debug, Clone, Copy)]
pub struct DnfOptions {
    /// Lower bound on sigma_min(S) / ((w_i + w_j)^2 sigma_max(M)); below it the
    /// solve is declared resonance-singular.
    pub min_rcond: f64,
}

impl Default for DnfOptions {
    fn default() -> Self {
        Self { min_rcond: 4e-3 }
    }
}

/// Second-order direct normal form from the physical matrices, using only
/// the master eigenpairs.
pub fn dnf_second_order(
    model: &PhysicalModel,
    masters: &[usize],
) -> Result<(ManifoldMap, ReducedModel)> {
    dnf_second_order_with(model, masters, DnfOptions::default())
}

pub fn dnf_second_order_with(
    model: &PhysicalModel,
    masters: &[usize],
    opts: DnfOptions,
) -> Result<(ManifoldMap, ReducedModel)> {
    let n = model.n();
    let masters = check_masters(n, masters)?;
    let m = masters.len();
    let need = masters.iter().max().unwrap() + 1;
    let (omega_all, modes_all) = eigenpairs(model, need)?;
    let omega: Vec<f64> = masters.iter().map(|&i| omega_all[i]).collect();
    let phi: Vec<DVector<f64>> = masters
        .iter()
        .map(|&i| modes_all.column(i).into_owned())
        .collect();

    // quadratic solves per unordered master pair
    let mass_norm = model
        .mass
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .map(|e| e.eigenvalues.amax())
        .unwrap_or_else(|| model.mass.amax());
    let mut psi_p = vec![vec![DVector::<f64>::zeros(n); m]; m];
    let mut psi_n = vec![vec![DVector::<f64>::zeros(n); m]; m];
    for i in 0..m {
        for j in i..m {
            let rhs = model.quad.bilinear(&phi[i], &phi[j]);
            for (sign, store) in [(1.0, &mut psi_p), (-1.0, &mut psi_n)] {
                let wsum = omega[i] + sign * omega[j];
                let mat = &model.mass * (wsum * wsum) - &model.stiffness;
                let svd = mat.svd(true, true);
                let smin = svd
                    .singular_values
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b));
                let scale = (omega[i] + omega[j]).powi(2) * mass_norm;
                if smin < opts.min_rcond * scale {
                    bail!(
                        "near-singular direct normal form solve for master pair ({}, {}): \
                         w{} {} w{} = {:.6} lies close to a slave eigenfrequency \
                         (condition estimate {:.2e}); resonant pair must be retained",
                        masters[i] + 1,
                        masters[j] + 1,
                        masters[i] + 1,
                        if sign > 0.0 { "+" } else { "-" },
                        masters[j] + 1,
                        wsum.abs(),
                        smin / scale
                    );
                }
                let sol = svd
                    .solve(&rhs, 0.0)
                    .map_err(|e| anyhow::anyhow!("direct normal form solve failed: {e}"))?;
                store[i][j] = sol.clone();
                store[j][i] = sol;
            }
        }
    }

    // mapping coefficient vectors
    let mut linear = DMatrix::zeros(n, m);
    for (col, p) in phi.iter().enumerate() {
        linear.set_column(col, p);
    }
    let mut disp_terms = Vec::new();
    let mut vel_terms = Vec::new();
    let a_vec = |i: usize, j: usize| (&psi_p[i][j] + &psi_n[i][j]) * 0.5;
    let b_vec =
        |i: usize, j: usize| (&psi_p[i][j] - &psi_n[i][j]) * (-0.5 / (omega[i] * omega[j]));
    for i in 0..m {
        for j in i..m {
            let fac = if i == j { 1.0 } else { 2.0 };
            let mut dexp = vec![0u8; m];
            dexp[i] += 1;
            dexp[j] += 1;
            disp_terms.push(MapTerm {
                disp_exps: dexp,
                vel_exps: vec![0; m],
                coeff: a_vec(i, j) * fac,
            });
            let mut vexp = vec![0u8; m];
            vexp[i] += 1;
            vexp[j] += 1;
            disp_terms.push(MapTerm {
                disp_exps: vec![0; m],
                vel_exps: vexp,
                coeff: b_vec(i, j) * fac,
            });
        }
    }
    for i in 0..m {
        for j in 0..m {
            let gamma = &psi_p[i][j] * ((omega[j] + omega[i]) / omega[j])
                + &psi_n[i][j] * ((omega[j] - omega[i]) / omega[j]);
            let mut dexp = vec![0u8; m];
            dexp[i] = 1;
            let mut vexp = vec![0u8; m];
            vexp[j] += 1;
            vel_terms.push(MapTerm {
                disp_exps: dexp,
                vel_exps: vexp,
                coeff: gamma,
            });
        }
    }
    let mut map = ManifoldMap {
        method: RomMethod::DirectNormalForm,
        order: 2,
        masters: masters.clone(),
        n_full: n,
        linear,
        disp_terms,
        vel_terms,
    };
    map.canonicalise();

    // reduced dynamics: A^r_ijk = 2 phi_r . G(phi_i, a_jk)
    let a4 = |r: usize, i: usize, j: usize, k: usize| {
        2.0 * phi[r].dot(&model.quad.bilinear(&phi[i], &a_vec(j, k)))
    };
    let b4 = |r: usize, i: usize, j: usize, k: usize| {
        2.0 * phi[r].dot(&model.quad.bilinear(&phi[i], &b_vec(j, k)))
    };
    let h4 = |r: usize, i: usize, j: usize, k: usize| {
        phi[r].dot(&model.cubic.trilinear(&phi[i], &phi[j], &phi[k]))
    };
    let rm = assemble_cubic_rom(
        RomMethod::DirectNormalForm,
        &masters,
        &omega,
        &a4,
        &b4,
        &h4,
    );
    Ok((map, rm))
}

/// Report of the graph/normal-form equivalence substitution.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub amplitudes: Vec<f64>,
    pub residuals: Vec<f64>,
    pub slope: f64,
    pub gamma_graph: f64,
    pub gamma_nf: f64,
}

/// Substitute the normal-coordinate relation into the graph-style reduced
/// dynamics and measure the residual against amplitude; the two reduced
/// models describe the same dynamics up to third order, so the residual
/// must scale at least like amplitude^4.
pub fn gamma_equivalence_check(mm: &ModalModel, master: usize) -> Result<EquivalenceReport> {
    let (_, graph_rm) = graph_single(mm, master)?;
    let (nf_map, nf_rm) = nf_third_order(mm, &[master])?;
    let w = mm.omega[master];

    // polynomials over (R, S)
    let nv = 2;
    let r = RPoly::var(nv, 0);
    let s = RPoly::var(nv, 1);
    // x_m = R + a^m_mm R^2 + b^m_mm S^2 from the normal-form mapping
    let a_mm = nf_map.disp_coeff(master, &[2], &[0]);
    let b_mm = nf_map.disp_coeff(master, &[0], &[2]);
    let x_m = r
        .add(&r.mul(&r).scale(a_mm))
        .add(&s.mul(&s).scale(b_mm));

    // normal-form flow
    let c3 = nf_rm.coeff(0, &[3], &[0]);
    let c3v = nf_rm.coeff(0, &[1], &[2]);
    let sdot = r
        .scale(-w * w)
        .add(&r.mul(&r).mul(&r).scale(-c3))
        .add(&r.mul(&s).mul(&s).scale(-c3v));
    let field = vec![s.clone(), sdot];

    let max_ord = 8;
    let xdot = x_m.lie_derivative(&field, max_ord);
    let xddot = xdot.lie_derivative(&field, max_ord);

    // graph reduced equation evaluated on the substituted coordinates
    let g2 = graph_rm.coeff(0, &[2], &[0]);
    let g3 = graph_rm.coeff(0, &[3], &[0]);
    let g3v = graph_rm.coeff(0, &[1], &[2]);
    let residual = xddot
        .add(&x_m.scale(w * w))
        .add(&x_m.mul(&x_m).scale(g2))
        .add(&x_m.mul(&x_m).mul(&x_m).scale(g3))
        .add(&x_m.mul(&xdot.mul(&xdot)).scale(g3v))
        .truncate(max_ord);

    let amplitudes: Vec<f64> = (0..7)
        .map(|i| 1e-3 * 10f64.powf(i as f64 / 6.0))
        .collect();
    let mut residuals = Vec::with_capacity(amplitudes.len());
    for &a in &amplitudes {
        let mut worst: f64 = 0.0;
        for k in 0..32 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
            let state = [a * th.cos(), a * w * th.sin()];
            worst = worst.max(residual.eval(&state).abs());
        }
        residuals.push(worst);
    }
    let slope = crate::parametrise::loglog_slope(&amplitudes, &residuals);

    let gamma_graph = crate::dynamics::gamma::gamma_of_reduced_model(&graph_rm, 0)?;
    let gamma_nf = crate::dynamics::gamma::gamma_of_reduced_model(&nf_rm, 0)?;
    Ok(EquivalenceReport {
        amplitudes,
        residuals,
        slope,
        gamma_graph,
        gamma_nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalModel;
    use crate::tensor::{SymTensor3, SymTensor4};
    use approx::assert_relative_eq;

    fn coupled_two_dof(omega2: f64, g211: f64, gm: f64, h: f64) -> ModalModel {
        let mut g = vec![];
        if g211 != 0.0 {
            g.push(([0, 0, 1], g211));
        }
        if gm != 0.0 {
            g.push(([0, 0, 0], gm));
        }
        let mut hh = vec![];
        if h != 0.0 {
            hh.push(([0, 0, 0, 0], h));
        }
        ModalModel::from_modal_data(
            vec![1.0, omega2],
            SymTensor3::from_raw(2, &g).unwrap(),
            SymTensor4::from_raw(2, &hh).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn graph_single_quadratic_coefficients() {
        // w_m = 1, w_s = 2.5, g^s_mm = 0.5:
        // a_sm = 0.5 (2 - 6.25) / (6.25 (6.25 - 4)) = -0.151111...
        let mm = coupled_two_dof(2.5, 0.5, 0.0, 0.0);
        let (map, rm) = graph_single(&mm, 0).unwrap();
        let a = map.disp_coeff(1, &[2], &[0]);
        assert_relative_eq!(a, 0.5 * (2.0 - 6.25) / (6.25 * 2.25), epsilon = 1e-15);
        let b = map.disp_coeff(1, &[0], &[2]);
        assert_relative_eq!(b, 2.0 * 0.5 / (6.25 * 2.25), epsilon = 1e-15);
        let alpha = map.vel_coeff(1, &[1], &[1]);
        assert_relative_eq!(alpha, -2.0 * 0.5 / 2.25, epsilon = 1e-15);
        // reduced dynamics cubic terms carry 2 g^m_ms g^s_mm = 2 g^2
        assert_relative_eq!(rm.coeff(0, &[3], &[0]), 2.0 * 0.25 * (2.0 - 6.25) / (6.25 * 2.25));
        assert_relative_eq!(rm.coeff(0, &[1], &[2]), 2.0 * 0.25 * 2.0 / (6.25 * 2.25));
    }

    #[test]
    fn graph_single_no_invariant_breaking_terms_means_modal_oscillator() {
        let mm = coupled_two_dof(2.5, 0.0, 0.4, 1.2);
        let (map, rm) = graph_single(&mm, 0).unwrap();
        assert!(map.disp_terms.iter().all(|t| t.coeff.amax() == 0.0));
        assert_relative_eq!(rm.coeff(0, &[2], &[0]), 0.4);
        assert_relative_eq!(rm.coeff(0, &[3], &[0]), 1.2);
        assert_relative_eq!(rm.coeff(0, &[1], &[2]), 0.0);
    }

    #[test]
    fn graph_single_two_to_one_resonance_rejected() {
        let mm = coupled_two_dof(2.0, 0.5, 0.0, 0.0);
        let err = graph_single(&mm, 0).unwrap_err();
        assert!(err.to_string().contains("mode 2"), "{err}");
    }

    #[test]
    fn nf_matches_graph_slave_geometry() {
        let mm = coupled_two_dof(2.5, 0.5, 0.3, 1.0);
        let (gmap, _) = graph_single(&mm, 0).unwrap();
        let (nmap, nrm) = nf_third_order(&mm, &[0]).unwrap();
        assert_relative_eq!(
            gmap.disp_coeff(1, &[2], &[0]),
            nmap.disp_coeff(1, &[2], &[0]),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            gmap.disp_coeff(1, &[0], &[2]),
            nmap.disp_coeff(1, &[0], &[2]),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            gmap.vel_coeff(1, &[1], &[1]),
            nmap.vel_coeff(1, &[1], &[1]),
            epsilon = 1e-14
        );
        // no quadratic monomial in the normal-form reduced dynamics
        assert_eq!(nrm.coeff(0, &[2], &[0]), 0.0);
        assert!(nrm
            .terms
            .iter()
            .all(|t| t.disp_exps.iter().map(|&e| usize::from(e)).sum::<usize>()
                + t.vel_exps.iter().map(|&e| usize::from(e)).sum::<usize>()
                == 3));
    }

    #[test]
    fn nf_identity_for_linear_model() {
        let mm = coupled_two_dof(2.5, 0.0, 0.0, 0.0);
        let (map, rm) = nf_third_order(&mm, &[0]).unwrap();
        assert!(map.disp_terms.iter().all(|t| t.coeff.amax() == 0.0));
        assert!(rm.terms.is_empty());
    }

    #[test]
    fn graph_multi_singleton_matches_graph_single() {
        let mm = coupled_two_dof(2.5, 0.5, 0.3, 1.0);
        let (gmap, grm) = graph_single(&mm, 0).unwrap();
        let (mmap, mrm) = graph_multi(&mm, &[0]).unwrap();
        for (dexp, vexp) in [(vec![2u8], vec![0u8]), (vec![0], vec![2])] {
            assert_relative_eq!(
                gmap.disp_coeff(1, &dexp, &vexp),
                mmap.disp_coeff(1, &dexp, &vexp),
                epsilon = 1e-12
            );
        }
        assert_relative_eq!(
            gmap.vel_coeff(1, &[1], &[1]),
            mmap.vel_coeff(1, &[1], &[1]),
            epsilon = 1e-12
        );
        for (dexp, vexp) in [
            (vec![2u8], vec![0u8]),
            (vec![3], vec![0]),
            (vec![1], vec![2]),
        ] {
            assert_relative_eq!(
                grm.coeff(0, &dexp, &vexp),
                mrm.coeff(0, &dexp, &vexp),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn dnf_matches_modal_nf_on_modal_coordinates() {
        // modal-coordinate model: M = I, K = diag(omega^2), G = g
        let mm = coupled_two_dof(2.5, 0.5, 0.3, 1.0);
        let phys = mm.as_physical();
        let (dmap, drm) = dnf_second_order(&phys, &[0]).unwrap();
        let (nmap, nrm) = nf_third_order(&mm, &[0]).unwrap();
        for row in 0..2 {
            for (dexp, vexp) in [(vec![2u8], vec![0u8]), (vec![0], vec![2])] {
                assert_relative_eq!(
                    dmap.disp_coeff(row, &dexp, &vexp),
                    nmap.disp_coeff(row, &dexp, &vexp),
                    epsilon = 1e-8
                );
            }
            assert_relative_eq!(
                dmap.vel_coeff(row, &[1], &[1]),
                nmap.vel_coeff(row, &[1], &[1]),
                epsilon = 1e-8
            );
        }
        for (dexp, vexp) in [(vec![3u8], vec![0u8]), (vec![1], vec![2])] {
            assert_relative_eq!(
                drm.coeff(0, &dexp, &vexp),
                nrm.coeff(0, &dexp, &vexp),
                epsilon = 1e-8
            );
        }
        // no quadratic terms for a quadratic-free master equation,
        // and conservative structure c = alpha = beta = 0 is implicit in the
        // term layout: displacement rows have no R S monomials
        assert!(dmap
            .disp_terms
            .iter()
            .all(|t| t.disp_exps.iter().sum::<u8>() == 0 || t.vel_exps.iter().sum::<u8>() == 0));
    }

    #[test]
    fn dnf_linear_model_has_zero_corrections() {
        let mm = coupled_two_dof(2.5, 0.0, 0.0, 0.0);
        let phys = mm.as_physical();
        let (map, rm) = dnf_second_order(&phys, &[0]).unwrap();
        assert!(map.disp_terms.iter().all(|t| t.coeff.amax() == 0.0));
        assert!(rm.terms.is_empty());
    }

    #[test]
    fn dnf_two_to_one_resonance_detected() {
        let mm = coupled_two_dof(2.0, 0.5, 0.0, 0.0);
        let phys = mm.as_physical();
        let err = dnf_second_order(&phys, &[0]).unwrap_err();
        assert!(err.to_string().contains("near-singular"), "{err}");
    }

    #[test]
    fn equivalence_check_on_generic_two_dof() {
        let mm = coupled_two_dof(2.5, 0.5, 0.3, 1.0);
        let report = gamma_equivalence_check(&mm, 0).unwrap();
        assert!(
            report.slope >= 3.7,
            "substitution residual slope {} too low; residuals {:?}",
            report.slope,
            report.residuals
        );
        assert_relative_eq!(report.gamma_graph, report.gamma_nf, epsilon = 1e-10);
    }

    #[test]
    fn equivalence_trivial_when_no_self_quadratic() {
        let mm = coupled_two_dof(2.5, 0.5, 0.0, 1.0);
        let report = gamma_equivalence_check(&mm, 0).unwrap();
        // graph and normal-form dynamics are then identical term by term
        let (_, grm) = graph_single(&mm, 0).unwrap();
        let (_, nrm) = nf_third_order(&mm, &[0]).unwrap();
        assert_relative_eq!(
            grm.coeff(0, &[3], &[0]),
            nrm.coeff(0, &[3], &[0]),
            epsilon = 1e-13
        );
        assert_relative_eq!(
            grm.coeff(0, &[1], &[2]),
            nrm.coeff(0, &[1], &[2]),
            epsilon = 1e-13
        );
        assert_relative_eq!(report.gamma_graph, report.gamma_nf, epsilon = 1e-12);
    }
}
