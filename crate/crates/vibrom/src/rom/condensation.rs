//! Implicit condensation: static body-force sampling of the stress manifold,
//! polynomial fitting of the condensed restoring force, the explicit
//! third-order static condensation oracle and the correction factor.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::model::{eigenpairs, ModalModel, PhysicalModel};
use crate::rom::{ManifoldMap, MapTerm, ReducedModel, RomMethod};

/// Options for the stress-manifold sampling.
#[derive(Debug, Clone, Copy)]
pub struct IceOptions {
    /// Target max |x_master| over the grid (nondimensional displacement).
    pub amp_target: f64,
    /// Points per master axis; symmetric around zero.
    pub grid_points: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for IceOptions {
    fn default() -> Self {
        Self {
            amp_target: 0.1,
            grid_points: 21,
            newton_tol: 1e-12,
            newton_max_iter: 60,
        }
    }
}

/// One static sample: applied modal load factors, resulting master modal
/// displacements and the full displacement vector.
#[derive(Debug, Clone)]
pub struct IceSample {
    pub beta: Vec<f64>,
    pub x_master: Vec<f64>,
    pub x_full: DVector<f64>,
}

/// Newton solve of K X + f_nl(X) = f_ext with the analytic tangent.
pub fn static_solve(
    model: &PhysicalModel,
    f_ext: &DVector<f64>,
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let mut x = start.clone();
    let scale = 1.0 + f_ext.norm();
    for _ in 0..max_iter {
        let r = model.internal_force(&x)? - f_ext;
        if r.norm() <= tol * scale {
            return Ok(x);
        }
        let j = model.tangent_stiffness(&x);
        let lu = j.lu();
        let dx = lu
            .solve(&r)
            .ok_or_else(|| anyhow!("singular tangent stiffness in the static solve"))?;
        x -= dx;
        if !x.iter().all(|v| v.is_finite()) {
            bail!("static Newton solve diverged to a non-finite state");
        }
    }
    bail!("static Newton solve did not converge in {max_iter} iterations")
}

/// Static samples of the stress manifold for explicit load factors.
///
/// Each entry of `betas` lists one load factor per master; the applied body
/// force is sum_i beta_i M phi_i.
pub fn ice_sample(
    model: &PhysicalModel,
    masters: &[usize],
    betas: &[Vec<f64>],
) -> Result<Vec<IceSample>> {
    ice_sample_with(model, masters, betas, &IceOptions::default())
}

pub fn ice_sample_with(
    model: &PhysicalModel,
    masters: &[usize],
    betas: &[Vec<f64>],
    opts: &IceOptions,
) -> Result<Vec<IceSample>> {
    if masters.is_empty() {
        bail!("master set must not be empty");
    }
    if masters.len() > 2 {
        bail!("implicit condensation is limited to at most two masters");
    }
    let need = masters.iter().max().unwrap() + 1;
    let (_, modes) = eigenpairs(model, need)?;
    let phi: Vec<DVector<f64>> = masters
        .iter()
        .map(|&i| modes.column(i).into_owned())
        .collect();
    let mphi: Vec<DVector<f64>> = phi.iter().map(|p| &model.mass * p).collect();

    let mut samples = Vec::with_capacity(betas.len());
    let mut warm = DVector::zeros(model.n());
    let mut last_ok: Option<Vec<f64>> = None;
    for beta in betas {
        if beta.len() != masters.len() {
            bail!("load factor count does not match master count");
        }
        let mut f = DVector::zeros(model.n());
        for (b, mp) in beta.iter().zip(&mphi) {
            f.axpy(*b, mp, 1.0);
        }
        let x = static_solve(model, &f, &warm, opts.newton_tol, opts.newton_max_iter)
            .map_err(|e| match &last_ok {
                Some(b) => anyhow!(
                    "{e}; last convergent load factors were {:?} (reduce the amplitude target)",
                    b
                ),
                None => anyhow!("{e} (already at the first load step)"),
            })?;
        warm = x.clone();
        last_ok = Some(beta.clone());
        let x_master: Vec<f64> = mphi.iter().map(|mp| mp.dot(&x)).collect();
        samples.push(IceSample {
            beta: beta.clone(),
            x_master,
            x_full: x,
        });
    }
    Ok(samples)
}

/// Build the default symmetric load grid, calibrated so the largest master
/// displacement magnitude meets the amplitude target.
pub fn ice_grid(
    model: &PhysicalModel,
    masters: &[usize],
    opts: &IceOptions,
) -> Result<Vec<Vec<f64>>> {
    if masters.is_empty() || masters.len() > 2 {
        bail!("implicit condensation is limited to one or two masters");
    }
    let need = masters.iter().max().unwrap() + 1;
    let (omega, _) = eigenpairs(model, need)?;
    let mut beta_max = Vec::with_capacity(masters.len());
    for (pos, &mi) in masters.iter().enumerate() {
        let mut b = omega[mi] * omega[mi] * opts.amp_target;
        // secant-like calibration of the load level reaching the target
        for _ in 0..40 {
            let mut beta = vec![0.0; masters.len()];
            beta[pos] = b;
            let s = ice_sample_with(model, masters, &[beta], opts)?;
            let reached = s[0].x_master[pos].abs();
            if reached == 0.0 {
                bail!("master displacement stays zero under modal loading");
            }
            let ratio = opts.amp_target / reached;
            if (ratio - 1.0).abs() < 1e-10 {
                break;
            }
            b *= ratio;
        }
        beta_max.push(b);
    }
    let np = opts.grid_points.max(3);
    let axis = |bm: f64| -> Vec<f64> {
        (0..np)
            .map(|i| bm * (2.0 * i as f64 / (np - 1) as f64 - 1.0))
            .collect()
    };
    let mut grid = Vec::new();
    match masters.len() {
        1 => {
            for b in axis(beta_max[0]) {
                grid.push(vec![b]);
            }
        }
        _ => {
            for b1 in axis(beta_max[0]) {
                for b2 in axis(beta_max[1]) {
                    grid.push(vec![b1, b2]);
                }
            }
        }
    }
    // solve from small to large magnitude for warm starting
    grid.sort_by(|a, b| {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        na.total_cmp(&nb)
    });
    Ok(grid)
}

/// Result of the polynomial fit of the condensed restoring force.
#[derive(Debug, Clone)]
pub struct IceFit {
    pub rm: ReducedModel,
    /// RMS residual of the least-squares fit, per master equation.
    pub residual: Vec<f64>,
    /// Stress-manifold map fitted from the slave displacements.
    pub map: ManifoldMap,
}

fn monomial_basis(m: usize, order: u8) -> Vec<Vec<u8>> {
    fn rec(m: usize, max: u8, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == m {
            let total: u8 = prefix.iter().sum();
            if total >= 1 {
                out.push(prefix.clone());
            }
            return;
        }
        for d in 0..=max {
            prefix.push(d);
            let used: u8 = prefix.iter().sum();
            if used <= max {
                rec(m, max, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, order, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Least-squares fit of the restoring force beta(x) over the sampled stress
/// manifold, returning the reduced model and the fitted manifold map.
pub fn ice_fit(
    model: &PhysicalModel,
    masters: &[usize],
    samples: &[IceSample],
    order: u8,
) -> Result<IceFit> {
    let m = masters.len();
    if samples.len() < 3 {
        bail!("not enough stress-manifold samples to fit");
    }
    if order < 1 {
        bail!("fit order must be at least 1");
    }
    // single-master invertibility: x_m(beta) must be strictly monotonic
    if m == 1 {
        let mut pairs: Vec<(f64, f64)> = samples
            .iter()
            .map(|s| (s.beta[0], s.x_master[0]))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[1].1 <= w[0].1 {
                bail!("sample map beta -> x is not invertible on the grid");
            }
        }
    }

    let basis = monomial_basis(m, order);
    let nb = basis.len();
    let ns = samples.len();
    let mut a = DMatrix::zeros(ns, nb);
    for (row, s) in samples.iter().enumerate() {
        for (col, exps) in basis.iter().enumerate() {
            let mut v = 1.0;
            for (i, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    v *= s.x_master[i];
                }
            }
            a[(row, col)] = v;
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let smin = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    if smin < 1e-12 * smax {
        bail!("rank-deficient least-squares fit; reduce the order or widen the grid");
    }

    let need = masters.iter().max().unwrap() + 1;
    let (omega_all, modes) = eigenpairs(model, need)?;
    let mut coeffs = Vec::with_capacity(m);
    let mut residual = Vec::with_capacity(m);
    for r in 0..m {
        let rhs = DVector::from_iterator(ns, samples.iter().map(|s| s.beta[r]));
        let c = svd
            .solve(&rhs, 1e-14 * smax)
            .map_err(|e| anyhow!("least-squares solve failed: {e}"))?;
        let fit = &a * &c;
        let res = (&fit - &rhs).norm() / (ns as f64).sqrt();
        coeffs.push(c);
        residual.push(res);
    }

    // assemble the reduced model: x_r'' + beta_r(x) = 0
    let mut omega = Vec::with_capacity(m);
    for r in 0..m {
        let mut lin = vec![0u8; m];
        lin[r] = 1;
        let col = basis.iter().position(|b| *b == lin).unwrap();
        let w2 = coeffs[r][col];
        if w2 <= 0.0 {
            bail!("fitted linear stiffness is not positive");
        }
        omega.push(w2.sqrt());
    }
    let mut rm = ReducedModel::linear(RomMethod::Ice, masters.to_vec(), omega);
    for r in 0..m {
        for (col, exps) in basis.iter().enumerate() {
            let mut lin = vec![0u8; m];
            lin[r] = 1;
            if *exps == lin {
                continue; // carried by omega
            }
            rm.add_term(r, coeffs[r][col], exps.clone(), vec![0; m]);
        }
    }
    rm.canonicalise();

    // stress-manifold map: fit every full-space dof on the same basis
    let mut linear = DMatrix::zeros(model.n(), m);
    for (col, &mi) in masters.iter().enumerate() {
        linear.set_column(col, &modes.column(mi));
    }
    let mut rhs_mat = DMatrix::zeros(ns, model.n());
    for (row, s) in samples.iter().enumerate() {
        for dof in 0..model.n() {
            rhs_mat[(row, dof)] = s.x_full[dof];
        }
    }
    let sol = svd
        .solve(&rhs_mat, 1e-14 * smax)
        .map_err(|e| anyhow!("manifold fit failed: {e}"))?;
    let mut terms = Vec::new();
    for (col, exps) in basis.iter().enumerate() {
        let total: u8 = exps.iter().sum();
        if total < 2 {
            continue;
        }
        terms.push(MapTerm {
            disp_exps: exps.clone(),
            vel_exps: vec![0; m],
            coeff: sol.row(col).transpose(),
        });
    }
    let mut map = ManifoldMap {
        method: RomMethod::Ice,
        order: usize::from(order),
        masters: masters.to_vec(),
        n_full: model.n(),
        linear,
        disp_terms: terms,
        vel_terms: Vec::new(),
    };
    map.canonicalise();
    let _ = omega_all;
    Ok(IceFit { rm, residual, map })
}

/// Explicit static condensation of the slaves up to cubic order:
/// x'' + w_m^2 x + g^m_mm x^2 + (h^m_mmm - sum_s 2 g^m_ms g^s_mm / w_s^2) x^3.
pub fn static_condensation_third(mm: &ModalModel, master: usize) -> Result<ReducedModel> {
    let nm = mm.n_modes();
    if master >= nm {
        bail!("master index out of range");
    }
    let wm = mm.omega[master];
    let mut cubic = mm.cubic.get([master, master, master, master]);
    for s in 0..nm {
        if s == master {
            continue;
        }
        let ws2 = mm.omega[s] * mm.omega[s];
        if ws2 <= 0.0 {
            bail!("slave frequencies must be positive");
        }
        cubic -= 2.0 * mm.quad.get([master, master, s]) * mm.quad.get([s, master, master]) / ws2;
    }
    let mut rm = ReducedModel::linear(RomMethod::StaticCondensation, vec![master], vec![wm]);
    rm.add_term(0, mm.quad.get([master, master, master]), vec![2], vec![0]);
    rm.add_term(0, cubic, vec![3], vec![0]);
    rm.canonicalise();
    Ok(rm)
}

/// Correction factor R(rho) = (rho^2 - 8/3) / (rho^2 - 4) between the
/// condensed and invariant-manifold cubic summed terms.
pub fn correction_factor(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho <= 0.0 {
        bail!("frequency ratio must be positive");
    }
    if (rho - 2.0).abs() < 1e-9 {
        bail!("correction factor diverges at rho = 2 (2:1 internal resonance)");
    }
    Ok((rho * rho - 8.0 / 3.0) / (rho * rho - 4.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalModel;
    use crate::tensor::{SymTensor3, SymTensor4};
    use approx::assert_relative_eq;

    fn two_dof_phys(omega2: f64, g211: f64, h: f64) -> PhysicalModel {
        let mut g = vec![];
        if g211 != 0.0 {
            g.push(([0usize, 0, 1], g211));
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
    fn zero_load_gives_zero_displacement() {
        let model = two_dof_phys(2.5, 0.5, 1.0);
        let s = ice_sample(&model, &[0], &[vec![0.0]]).unwrap();
        assert_eq!(s[0].x_full.amax(), 0.0);
    }

    #[test]
    fn linear_model_statics() {
        let model = two_dof_phys(2.5, 0.0, 0.0);
        let s = ice_sample(&model, &[0], &[vec![0.05]]).unwrap();
        assert_relative_eq!(s[0].x_master[0], 0.05, epsilon = 1e-12);
        assert!(s[0].x_full[1].abs() < 1e-12);
    }

    #[test]
    fn slave_displacement_leading_order() {
        // x_s ~ -(g^s_mm / w_s^2) x_m^2 at small amplitude
        let model = two_dof_phys(2.5, 0.5, 1.0);
        let betas: Vec<Vec<f64>> = (1..=6).map(|i| vec![0.003 * i as f64]).collect();
        let samples = ice_sample(&model, &[0], &betas).unwrap();
        for s in &samples {
            let xm = s.x_master[0];
            let expect = -0.5 / 6.25 * xm * xm;
            assert!(
                (s.x_full[1] - expect).abs() < 0.05 * expect.abs(),
                "slave {} vs leading order {}",
                s.x_full[1],
                expect
            );
        }
    }

    #[test]
    fn fitted_force_linear_model() {
        let model = two_dof_phys(2.5, 0.0, 0.0);
        let grid = ice_grid(&model, &[0], &IceOptions::default()).unwrap();
        let samples = ice_sample(&model, &[0], &grid).unwrap();
        let fit = ice_fit(&model, &[0], &samples, 3).unwrap();
        assert_relative_eq!(fit.rm.omega[0], 1.0, epsilon = 1e-9);
        assert!(fit.rm.coeff(0, &[2], &[0]).abs() < 1e-10);
        assert!(fit.rm.coeff(0, &[3], &[0]).abs() < 1e-10);
    }

    #[test]
    fn fit_approaches_static_condensation_for_slow_fast() {
        let model = two_dof_phys(10.0, 0.5, 1.0);
        let opts = IceOptions {
            amp_target: 0.05,
            ..IceOptions::default()
        };
        let grid = ice_grid(&model, &[0], &opts).unwrap();
        let samples = ice_sample_with(&model, &[0], &grid, &opts).unwrap();
        let fit = ice_fit(&model, &[0], &samples, 3).unwrap();
        let mm = ModalModel::from_modal_data(
            vec![1.0, 10.0],
            SymTensor3::from_raw(2, &[([0, 0, 1], 0.5)]).unwrap(),
            SymTensor4::from_raw(2, &[([0, 0, 0, 0], 1.0)]).unwrap(),
            None,
        )
        .unwrap();
        let oracle = static_condensation_third(&mm, 0).unwrap();
        let got = fit.rm.coeff(0, &[3], &[0]);
        let expect = oracle.coeff(0, &[3], &[0]);
        assert!(
            (got - expect).abs() < 1e-4 * expect.abs(),
            "fitted cubic {got} vs condensed {expect}"
        );
        assert_relative_eq!(
            fit.rm.coeff(0, &[2], &[0]),
            oracle.coeff(0, &[2], &[0]),
            epsilon = 2e-4 * oracle.coeff(0, &[2], &[0]).abs().max(1.0)
        );
    }

    #[test]
    fn grid_dependence_is_observable() {
        let model = two_dof_phys(2.5, 0.5, 1.0);
        let fit_at = |amp: f64| {
            let opts = IceOptions {
                amp_target: amp,
                ..IceOptions::default()
            };
            let grid = ice_grid(&model, &[0], &opts).unwrap();
            let samples = ice_sample_with(&model, &[0], &grid, &opts).unwrap();
            ice_fit(&model, &[0], &samples, 3)
                .unwrap()
                .rm
                .coeff(0, &[3], &[0])
        };
        let c_small = fit_at(0.05);
        let c_large = fit_at(0.1);
        assert!(
            (c_small - c_large).abs() > 1e-9 * c_small.abs(),
            "the fitted cubic must depend on the load scale: {c_small} vs {c_large}"
        );
    }

    #[test]
    fn static_condensation_example_values() {
        // w_s = 2.5, g^m_ms = g^s_mm = 0.5, h = 1 -> cubic 1 - 2*0.25/6.25 = 0.92
        let mm = ModalModel::from_modal_data(
            vec![1.0, 2.5],
            SymTensor3::from_raw(2, &[([0, 0, 1], 0.5)]).unwrap(),
            SymTensor4::from_raw(2, &[([0, 0, 0, 0], 1.0)]).unwrap(),
            None,
        )
        .unwrap();
        let rm = static_condensation_third(&mm, 0).unwrap();
        assert_relative_eq!(rm.coeff(0, &[3], &[0]), 0.92, epsilon = 1e-14);
        // g = 0 keeps the bare cubic
        let mm0 = ModalModel::from_modal_data(
            vec![1.0, 2.5],
            SymTensor3::zeros(2),
            SymTensor4::from_raw(2, &[([0, 0, 0, 0], 1.0)]).unwrap(),
            None,
        )
        .unwrap();
        let rm0 = static_condensation_third(&mm0, 0).unwrap();
        assert_relative_eq!(rm0.coeff(0, &[3], &[0]), 1.0);
    }

    #[test]
    fn correction_factor_reference_points() {
        assert_relative_eq!(correction_factor(11.7).unwrap(), 1.0100, epsilon = 5e-4);
        assert_relative_eq!(correction_factor(4.15).unwrap(), 1.1008, epsilon = 1e-3);
        assert!(correction_factor(2.0).is_err());
        assert_relative_eq!(correction_factor(1e9).unwrap(), 1.0, epsilon = 1e-12);
    }
}
