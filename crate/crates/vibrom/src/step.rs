//! Non-intrusive identification of modal coupling tensors from a black-box
//! nonlinear force evaluator (prescribed-displacement static evaluations).
//!
//! Prescribing X = +-lambda phi_p and projecting the resulting nonlinear
//! force onto mode k yields a 2x2 linear system in (g^k_pp, h^k_ppp). Mixed
//! combinations of two and three modes complete the remaining entries. Each
//! symmetric entry is identified in several independent index roles, so the
//! spread across a permutation group is a genuine consistency check.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use std::collections::BTreeMap;

use crate::model::BlackBox;
use crate::tensor::{raw_symmetry_report, SymTensor3, SymTensor4, SymmetryReport};

/// Nonlinear-to-linear force ratio band for the load amplitude selection.
pub const RATIO_BAND: (f64, f64) = (1e-3, 1e-1);

/// Prescribed-displacement schedule.
#[derive(Debug, Clone)]
pub struct StepPlan {
    /// Per-mode load amplitude.
    pub lambda: Vec<f64>,
    pub singles: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub triples: Vec<(usize, usize, usize)>,
}

impl StepPlan {
    /// Full schedule covering every distinct (i <= j <= k) tensor entry.
    pub fn full(n_modes: usize, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != n_modes {
            bail!("lambda count does not match mode count");
        }
        if lambda.iter().any(|&l| l <= 0.0) {
            bail!("load amplitudes must be positive (zero makes the identification singular)");
        }
        let singles: Vec<usize> = (0..n_modes).collect();
        let mut pairs = Vec::new();
        for i in 0..n_modes {
            for j in (i + 1)..n_modes {
                pairs.push((i, j));
            }
        }
        let mut triples = Vec::new();
        for i in 0..n_modes {
            for j in (i + 1)..n_modes {
                for k in (j + 1)..n_modes {
                    triples.push((i, j, k));
                }
            }
        }
        Ok(Self {
            lambda,
            singles,
            pairs,
            triples,
        })
    }

    /// Uniform amplitude across modes.
    pub fn uniform(n_modes: usize, lambda: f64) -> Result<Self> {
        Self::full(n_modes, vec![lambda; n_modes])
    }
}

/// Identified modal tensors plus the identification diagnostics.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub quad: SymTensor3,
    pub cubic: SymTensor4,
    /// Symmetry-consistency report over the independently identified roles.
    pub symmetry: SymmetryReport,
    pub lambda: Vec<f64>,
}

/// Select per-mode load amplitudes so the nonlinear-to-linear force ratio
/// lies inside the prescribed band.
pub fn choose_lambda(
    force_eval: &BlackBox,
    modes: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    omega: &DVector<f64>,
) -> Result<Vec<f64>> {
    let n_modes = modes.ncols();
    let target = (RATIO_BAND.0 * RATIO_BAND.1).sqrt();
    let mut out = Vec::with_capacity(n_modes);
    for p in 0..n_modes {
        let phi = modes.column(p).into_owned();
        let linear_scale = (mass * &phi).norm() * omega[p] * omega[p];
        let ratio = |lam: f64| -> Result<f64> {
            let f = force_eval.eval(&(&phi * lam))?;
            Ok(f.norm() / (lam * linear_scale))
        };
        // bracket the band by doubling and halving
        let mut lam = 1.0;
        let mut r = ratio(lam)?;
        let mut grow = 0;
        while r < RATIO_BAND.0 {
            lam *= 2.0;
            r = ratio(lam)?;
            grow += 1;
            if grow > 120 {
                bail!(
                    "load-ratio band unreachable for mode {}: the force stays linear",
                    p + 1
                );
            }
        }
        let mut shrink = 0;
        while r > RATIO_BAND.1 {
            lam *= 0.5;
            r = ratio(lam)?;
            shrink += 1;
            if shrink > 240 {
                bail!("load-ratio band unreachable for mode {}", p + 1);
            }
        }
        // bisect on log(lambda) toward the geometric band centre
        let mut lo = lam;
        let mut hi = lam;
        while ratio(hi)? < target {
            hi *= 2.0;
            if hi > lam * 1e12 {
                break;
            }
        }
        while ratio(lo)? > target {
            lo *= 0.5;
            if lo < lam * 1e-12 {
                break;
            }
        }
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if ratio(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let chosen = (lo * hi).sqrt();
        let rc = ratio(chosen)?;
        if !(RATIO_BAND.0..=RATIO_BAND.1).contains(&rc) {
            bail!(
                "load-ratio band unreachable for mode {}: best ratio {:.3e}",
                p + 1,
                rc
            );
        }
        out.push(chosen);
    }
    Ok(out)
}

/// Identify the modal quadratic and cubic tensors from static evaluations.
pub fn step_identify(
    force_eval: &BlackBox,
    modes: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    plan: &StepPlan,
) -> Result<StepResult> {
    let n_modes = modes.ncols();
    if plan.lambda.len() != n_modes {
        bail!("plan amplitude count does not match mode count");
    }
    if plan.lambda.iter().any(|&l| l <= 0.0) {
        bail!("singular identification system: zero load amplitude");
    }
    let modal_mass: Vec<f64> = (0..n_modes)
        .map(|k| {
            let phi = modes.column(k);
            phi.dot(&(mass * phi))
        })
        .collect();
    let project = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let f = force_eval.eval(x)?;
        let mut out = DVector::zeros(n_modes);
        for k in 0..n_modes {
            out[k] = modes.column(k).dot(&f) / modal_mass[k];
        }
        Ok(out)
    };
    let load = |coeffs: &[(usize, f64)]| -> DVector<f64> {
        let mut x = DVector::zeros(modes.nrows());
        for &(mode, c) in coeffs {
            x.axpy(c, &modes.column(mode).into_owned(), 1.0);
        }
        x
    };

    let mut raw_quad: Vec<([usize; 3], f64)> = Vec::new();
    let mut raw_cubic: Vec<([usize; 4], f64)> = Vec::new();
    // per-equation values kept for the mixed-load subtractions
    let mut g_diag: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut h_diag: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut h_iij: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();

    for &p in &plan.singles {
        let lam = plan.lambda[p];
        let fp = project(&load(&[(p, lam)]))?;
        let fm = project(&load(&[(p, -lam)]))?;
        let a = Matrix2::new(lam * lam, lam.powi(3), lam * lam, -lam.powi(3));
        let inv = a
            .try_inverse()
            .ok_or_else(|| anyhow!("singular identification system for mode {}", p + 1))?;
        for k in 0..n_modes {
            let sol = inv * Vector2::new(fp[k], fm[k]);
            raw_quad.push(([k, p, p], sol[0]));
            raw_cubic.push(([k, p, p, p], sol[1]));
            g_diag.insert((k, p), sol[0]);
            h_diag.insert((k, p), sol[1]);
        }
    }

    let need_diag = |map: &BTreeMap<(usize, usize), f64>, k: usize, p: usize| -> Result<f64> {
        map.get(&(k, p)).copied().ok_or_else(|| {
            anyhow!(
                "plan is missing the single-mode load for mode {} required by a mixed load",
                p + 1
            )
        })
    };

    for &(i, j) in &plan.pairs {
        let lam = plan.lambda[i].min(plan.lambda[j]);
        let l2 = lam * lam;
        let l3 = lam * lam * lam;
        let ap = project(&load(&[(i, lam), (j, lam)]))?;
        let am = project(&load(&[(i, -lam), (j, -lam)]))?;
        let bp = project(&load(&[(i, lam), (j, -lam)]))?;
        let bm = project(&load(&[(i, -lam), (j, lam)]))?;
        for k in 0..n_modes {
            let gii = need_diag(&g_diag, k, i)?;
            let gjj = need_diag(&g_diag, k, j)?;
            let hiii = need_diag(&h_diag, k, i)?;
            let hjjj = need_diag(&h_diag, k, j)?;
            let qa = 0.5 * (ap[k] + am[k]) / l2;
            let qb = 0.5 * (bp[k] + bm[k]) / l2;
            // two independent estimates of the same symmetric value
            raw_quad.push(([k, i, j], 0.5 * (qa - gii - gjj)));
            raw_quad.push(([k, i, j], 0.5 * (gii + gjj - qb)));
            let ca = 0.5 * (ap[k] - am[k]) / l3;
            let cb = 0.5 * (bp[k] - bm[k]) / l3;
            let hiij = ((ca - cb) - 2.0 * hjjj) / 6.0;
            let hijj = ((ca + cb) - 2.0 * hiii) / 6.0;
            raw_cubic.push(([k, i, i, j], hiij));
            raw_cubic.push(([k, i, j, j], hijj));
            h_iij.insert((k, i, j), hiij);
            h_iij.insert((k, j, i), hijj);
        }
    }

    let need_pair = |k: usize, a: usize, b: usize| -> Result<f64> {
        h_iij.get(&(k, a, b)).copied().ok_or_else(|| {
            anyhow!(
                "plan is missing the pair load ({}, {}) required by a triple load",
                a + 1,
                b + 1
            )
        })
    };
    for &(i, j, l) in &plan.triples {
        let lam = plan.lambda[i].min(plan.lambda[j]).min(plan.lambda[l]);
        let l3 = lam * lam * lam;
        let tp = project(&load(&[(i, lam), (j, lam), (l, lam)]))?;
        let tm = project(&load(&[(i, -lam), (j, -lam), (l, -lam)]))?;
        for k in 0..n_modes {
            let ct = 0.5 * (tp[k] - tm[k]) / l3;
            let known = need_diag(&h_diag, k, i)?
                + need_diag(&h_diag, k, j)?
                + need_diag(&h_diag, k, l)?
                + 3.0 * (need_pair(k, i, j)?
                    + need_pair(k, j, i)?
                    + need_pair(k, i, l)?
                    + need_pair(k, l, i)?
                    + need_pair(k, j, l)?
                    + need_pair(k, l, j)?);
            raw_cubic.push(([k, i, j, l], (ct - known) / 6.0));
        }
    }

    // symmetry diagnostics across the independent identification roles
    let mut symmetry = raw_symmetry_report(&raw_quad);
    let cubic_rep = raw_symmetry_report(&raw_cubic);
    symmetry.violations.extend(cubic_rep.violations);
    symmetry.max_relative = symmetry.max_relative.max(cubic_rep.max_relative);

    // symmetrised output: group means on canonical keys
    let quad = symmetrise3(n_modes, &raw_quad);
    let cubic = symmetrise4(n_modes, &raw_cubic);
    Ok(StepResult {
        quad,
        cubic,
        symmetry,
        lambda: plan.lambda.clone(),
    })
}

fn symmetrise3(n: usize, raw: &[([usize; 3], f64)]) -> SymTensor3 {
    let mut groups: BTreeMap<[usize; 3], (f64, usize)> = BTreeMap::new();
    let scale = raw.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    for (idx, v) in raw {
        let mut key = *idx;
        key.sort_unstable();
        let e = groups.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let mut out = SymTensor3::zeros(n);
    for (key, (sum, count)) in groups {
        let mean = sum / count as f64;
        if mean.abs() > 1e-13 * scale.max(1e-300) {
            out.add(key, mean);
        }
    }
    out
}

fn symmetrise4(n: usize, raw: &[([usize; 4], f64)]) -> SymTensor4 {
    let mut groups: BTreeMap<[usize; 4], (f64, usize)> = BTreeMap::new();
    let scale = raw.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    for (idx, v) in raw {
        let mut key = *idx;
        key.sort_unstable();
        let e = groups.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let mut out = SymTensor4::zeros(n);
    for (key, (sum, count)) in groups {
        let mean = sum / count as f64;
        if mean.abs() > 1e-13 * scale.max(1e-300) {
            out.add(key, mean);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{as_blackbox_modal, ModalModel};
    use crate::tensor::{SymTensor3, SymTensor4};
    use approx::assert_relative_eq;

    fn sample_model() -> ModalModel {
        ModalModel::from_modal_data(
            vec![1.0, 2.7, 4.1],
            SymTensor3::from_raw(
                3,
                &[([0, 0, 1], 0.5), ([0, 0, 0], 0.2), ([1, 2, 2], -0.4), ([0, 1, 2], 0.9)],
            )
            .unwrap(),
            SymTensor4::from_raw(
                3,
                &[
                    ([0, 0, 0, 0], 1.0),
                    ([0, 0, 1, 2], 0.6),
                    ([1, 1, 2, 2], -0.3),
                    ([0, 2, 2, 2], 0.15),
                ],
            )
            .unwrap(),
            None,
        )
        .unwrap()
    }

    fn identify(mm: &ModalModel, lambda: f64) -> StepResult {
        let bb = as_blackbox_modal(mm);
        let nm = mm.n_modes();
        let plan = StepPlan::uniform(nm, lambda).unwrap();
        let modes = DMatrix::identity(nm, nm);
        let mass = DMatrix::identity(nm, nm);
        step_identify(&bb, &modes, &mass, &plan).unwrap()
    }

    #[test]
    fn exact_recovery_on_polynomial_model() {
        let mm = sample_model();
        let got = identify(&mm, 0.05);
        for (idx, v) in mm.quad.entries() {
            assert_relative_eq!(got.quad.get(*idx), *v, epsilon = 1e-9 * v.abs().max(1.0));
        }
        for (idx, v) in mm.cubic.entries() {
            assert_relative_eq!(got.cubic.get(*idx), *v, epsilon = 1e-9 * v.abs().max(1.0));
        }
        for (idx, _) in got.quad.entries() {
            assert!(mm.quad.get(*idx) != 0.0, "spurious quad entry {idx:?}");
        }
        assert!(got.symmetry.passes(1e-9), "{:?}", got.symmetry.max_relative);
    }

    #[test]
    fn linear_model_identifies_to_zero() {
        let mm = ModalModel::from_modal_data(
            vec![1.0, 2.0],
            SymTensor3::zeros(2),
            SymTensor4::zeros(2),
            None,
        )
        .unwrap();
        let got = identify(&mm, 0.1);
        assert!(got.quad.is_zero());
        assert!(got.cubic.is_zero());
    }

    #[test]
    fn plateau_under_halved_amplitude() {
        let mm = sample_model();
        let a = identify(&mm, 0.04);
        let b = identify(&mm, 0.02);
        for (idx, v) in a.quad.entries() {
            assert_relative_eq!(b.quad.get(*idx), *v, epsilon = 1e-8 * v.abs().max(1.0));
        }
        for (idx, v) in a.cubic.entries() {
            assert_relative_eq!(b.cubic.get(*idx), *v, epsilon = 1e-8 * v.abs().max(1.0));
        }
    }

    #[test]
    fn choose_lambda_band_and_degenerate_error() {
        let mm = sample_model();
        let bb = as_blackbox_modal(&mm);
        let nm = mm.n_modes();
        let modes = DMatrix::identity(nm, nm);
        let mass = DMatrix::identity(nm, nm);
        let omega = mm.omega.clone();
        let lambda = choose_lambda(&bb, &modes, &mass, &omega).unwrap();
        for (p, &lam) in lambda.iter().enumerate() {
            let phi = modes.column(p).into_owned();
            let r = bb.eval(&(&phi * lam)).unwrap().norm() / (lam * omega[p] * omega[p]);
            assert!(
                (RATIO_BAND.0..=RATIO_BAND.1).contains(&r),
                "mode {p} ratio {r}"
            );
        }
        // linear model cannot reach the band
        let lin = ModalModel::from_modal_data(
            vec![1.0, 2.0],
            SymTensor3::zeros(2),
            SymTensor4::zeros(2),
            None,
        )
        .unwrap();
        let bb = as_blackbox_modal(&lin);
        let err = choose_lambda(
            &bb,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &lin.omega,
        )
        .unwrap_err();
        assert!(err.to_string().contains("band unreachable"), "{err}");
    }

    #[test]
    fn zero_lambda_rejected() {
        assert!(StepPlan::uniform(2, 0.0).is_err());
    }
}
