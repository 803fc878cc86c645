//! Harmonic-balance continuation of periodic orbits.
//!
//! Backbones of conservative reduced models use a cosine-only ansatz (the
//! orbits are time-reversible), continued in pseudo-arclength over the
//! Fourier coefficients and the oscillation frequency. Forced-damped
//! responses use the full Fourier basis with the forcing frequency as the
//! continuation parameter. Stability comes from Floquet multipliers of the
//! variational monodromy integrated along the converged orbit.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::dynamics::integrate::monodromy;
use crate::dynamics::{Curve, CurvePoint, PointTag};
use crate::rom::ReducedModel;

#[derive(Debug, Clone, Copy)]
pub struct HbOptions {
    /// Retained harmonics (0..=H).
    pub harmonics: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Newton iteration count the step adaptation aims for.
    pub target_iters: usize,
    pub ds_init: f64,
    pub ds_max: f64,
    pub ds_min: f64,
    pub max_points: usize,
    /// RK4 steps per period for the monodromy matrix.
    pub stability_steps: usize,
}

impl Default for HbOptions {
    fn default() -> Self {
        Self {
            harmonics: 7,
            newton_tol: 1e-11,
            newton_max_iter: 14,
            target_iters: 3,
            ds_init: 1e-3,
            ds_max: 0.1,
            ds_min: 1e-12,
            max_points: 4000,
            stability_steps: 240,
        }
    }
}

/// Newton solve with a finite-difference Jacobian.
fn newton<F>(residual: F, guess: DVector<f64>, tol: f64, max_iter: usize) -> Result<(DVector<f64>, usize)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut u = guess;
    let n = u.len();
    for iter in 0..max_iter {
        let r = residual(&u);
        let scale = 1.0 + u.amax();
        if r.amax() <= tol * scale {
            return Ok((u, iter));
        }
        let mut jac = DMatrix::zeros(n, n);
        for col in 0..n {
            let eps = 1e-7 * (1.0 + u[col].abs());
            let mut up = u.clone();
            up[col] += eps;
            let rp = residual(&up);
            for row in 0..n {
                jac[(row, col)] = (rp[row] - r[row]) / eps;
            }
        }
        let lu = jac.lu();
        let du = lu
            .solve(&r)
            .ok_or_else(|| anyhow!("singular harmonic-balance Jacobian"))?;
        u -= du;
        if !u.iter().all(|v| v.is_finite()) {
            bail!("harmonic-balance Newton iteration diverged");
        }
    }
    bail!("harmonic-balance Newton did not converge in {max_iter} iterations")
}

struct CosineBasis {
    nh: usize,
    nt: usize,
    /// cos(k tau_i), nt x (nh + 1)
    cos_table: DMatrix<f64>,
    sin_table: DMatrix<f64>,
}

impl CosineBasis {
    fn new(nh: usize) -> Self {
        let nt = 4 * (nh + 1);
        let mut cos_table = DMatrix::zeros(nt, nh + 1);
        let mut sin_table = DMatrix::zeros(nt, nh + 1);
        for i in 0..nt {
            let tau = 2.0 * std::f64::consts::PI * i as f64 / nt as f64;
            for k in 0..=nh {
                cos_table[(i, k)] = (k as f64 * tau).cos();
                sin_table[(i, k)] = (k as f64 * tau).sin();
            }
        }
        Self {
            nh,
            nt,
            cos_table,
            sin_table,
        }
    }
}

/// Conservative backbone state: coefficients c[r][k] flattened plus omega.
struct BackboneProblem<'a> {
    rm: &'a ReducedModel,
    basis: CosineBasis,
    m: usize,
}

impl BackboneProblem<'_> {
    fn ncoef(&self) -> usize {
        self.m * (self.basis.nh + 1)
    }

    fn coef(u: &DVector<f64>, r: usize, k: usize, nh: usize) -> f64 {
        u[r * (nh + 1) + k]
    }

    /// Harmonic-balance residual projections for all masters and harmonics.
    fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        let nh = self.basis.nh;
        let nt = self.basis.nt;
        let m = self.m;
        let omega = u[self.ncoef()];
        let mut out = DVector::zeros(self.ncoef());
        let mut x = DVector::zeros(m);
        let mut v = DVector::zeros(m);
        let mut acc2 = DVector::zeros(m);
        for i in 0..nt {
            for r in 0..m {
                let mut xr = 0.0;
                let mut vr = 0.0;
                let mut ar = 0.0;
                for k in 0..=nh {
                    let c = Self::coef(u, r, k, nh);
                    xr += c * self.basis.cos_table[(i, k)];
                    vr -= c * (k as f64) * omega * self.basis.sin_table[(i, k)];
                    ar -= c * (k as f64 * omega).powi(2) * self.basis.cos_table[(i, k)];
                }
                x[r] = xr;
                v[r] = vr;
                acc2[r] = ar;
            }
            let rhs = self.rm.acceleration(0.0, &x, &v);
            for r in 0..m {
                let res = acc2[r] - rhs[r];
                for k in 0..=nh {
                    let w = if k == 0 { 1.0 } else { 2.0 };
                    out[r * (nh + 1) + k] += w / nt as f64 * res * self.basis.cos_table[(i, k)];
                }
            }
        }
        out
    }

    /// Max |x_0| over one period.
    fn amplitude(&self, u: &DVector<f64>) -> f64 {
        let nh = self.basis.nh;
        let mut worst: f64 = 0.0;
        for i in 0..256 {
            let tau = 2.0 * std::f64::consts::PI * i as f64 / 256.0;
            let mut xr = 0.0;
            for k in 0..=nh {
                xr += Self::coef(u, 0, k, nh) * (k as f64 * tau).cos();
            }
            worst = worst.max(xr.abs());
        }
        worst
    }

    fn amplitudes(&self, u: &DVector<f64>) -> Vec<f64> {
        let nh = self.basis.nh;
        (0..self.m)
            .map(|r| {
                let mut worst: f64 = 0.0;
                for i in 0..256 {
                    let tau = 2.0 * std::f64::consts::PI * i as f64 / 256.0;
                    let mut xr = 0.0;
                    for k in 0..=nh {
                        xr += Self::coef(u, r, k, nh) * (k as f64 * tau).cos();
                    }
                    worst = worst.max(xr.abs());
                }
                worst
            })
            .collect()
    }
}

fn backbone_stability(
    rm: &ReducedModel,
    u: &DVector<f64>,
    omega: f64,
    nh: usize,
    steps: usize,
) -> (bool, f64, f64) {
    let m = rm.m();
    let period = 2.0 * std::f64::consts::PI / omega;
    let orbit = |t: f64| -> (DVector<f64>, DVector<f64>) {
        let tau = omega * t;
        let mut x = DVector::zeros(m);
        let mut v = DVector::zeros(m);
        for r in 0..m {
            for k in 0..=nh {
                let c = u[r * (nh + 1) + k];
                x[r] += c * (k as f64 * tau).cos();
                v[r] -= c * (k as f64) * omega * (k as f64 * tau).sin();
            }
        }
        (x, v)
    };
    let mono = monodromy(rm, period, steps, orbit);
    let eig = mono.complex_eigenvalues();
    let mut max_mod: f64 = 0.0;
    let mut crossing_im: f64 = 0.0;
    for e in eig.iter() {
        let n = e.norm();
        if n > max_mod {
            max_mod = n;
            crossing_im = e.im.abs();
        }
    }
    (max_mod <= 1.0 + 1e-3, max_mod, crossing_im)
}

/// Backbone of a conservative reduced model up to an amplitude target.
pub fn backbone(rm: &ReducedModel, a_max: f64) -> Result<Curve> {
    backbone_with(rm, a_max, &HbOptions::default())
}

pub fn backbone_with(rm: &ReducedModel, a_max: f64, opts: &HbOptions) -> Result<Curve> {
    if !rm.is_conservative() {
        bail!("backbone continuation requires a conservative reduced model");
    }
    if a_max <= 0.0 {
        bail!("amplitude target must be positive");
    }
    let m = rm.m();
    let problem = BackboneProblem {
        rm,
        basis: CosineBasis::new(opts.harmonics),
        m,
    };
    let ncoef = problem.ncoef();
    let nh = opts.harmonics;
    let dim = ncoef + 1;

    // first two points pinned at small first-harmonic amplitudes
    let a0 = (a_max * 1e-3).max(1e-9);
    let mut points_u: Vec<DVector<f64>> = Vec::new();
    for pin in [a0, 1.6 * a0] {
        let mut guess = DVector::zeros(dim);
        guess[1] = pin; // first harmonic of master 0
        guess[ncoef] = rm.omega[0];
        if let Some(prev) = points_u.last() {
            guess = prev.clone();
            guess[1] = pin;
        }
        let res = |u: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(dim);
            let hb = problem.residual(u);
            r.rows_mut(0, ncoef).copy_from(&hb);
            r[ncoef] = u[1] - pin;
            r
        };
        let (u, _) = newton(res, guess, opts.newton_tol, opts.newton_max_iter)?;
        points_u.push(u);
    }

    let mut ds = opts.ds_init * (1.0 + a_max);
    let mut curve_u = points_u.clone();
    let mut guard = 0;
    while curve_u.len() < opts.max_points {
        guard += 1;
        if guard > 4 * opts.max_points {
            break;
        }
        let last = curve_u[curve_u.len() - 1].clone();
        let prev = curve_u[curve_u.len() - 2].clone();
        let mut tangent = &last - &prev;
        let norm = tangent.norm();
        if norm == 0.0 {
            bail!("backbone continuation stalled: identical consecutive points");
        }
        tangent /= norm;
        let predictor = &last + &tangent * ds;
        let res = |u: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(dim);
            let hb = problem.residual(u);
            r.rows_mut(0, ncoef).copy_from(&hb);
            r[ncoef] = (u - &predictor).dot(&tangent);
            r
        };
        match newton(res, predictor.clone(), opts.newton_tol, opts.newton_max_iter) {
            Ok((u, iters)) => {
                curve_u.push(u.clone());
                if iters <= opts.target_iters {
                    ds = (ds * 1.4).min(opts.ds_max * (1.0 + a_max));
                } else if iters > opts.target_iters + 2 {
                    ds *= 0.6;
                }
                if problem.amplitude(&u) >= a_max {
                    break;
                }
            }
            Err(_) => {
                ds *= 0.5;
                if ds < opts.ds_min {
                    bail!("backbone continuation stalled: step size below the floor");
                }
            }
        }
    }

    let mut points = Vec::with_capacity(curve_u.len());
    for u in &curve_u {
        let omega = u[ncoef];
        let (stable, _, _) =
            backbone_stability(rm, u, omega, nh, opts.stability_steps);
        points.push(CurvePoint {
            omega,
            amplitude: problem.amplitudes(u),
            stable,
            tag: PointTag::None,
        });
    }
    tag_folds(&mut points);
    Ok(Curve {
        method: rm.method.as_str().to_string(),
        masters: rm.masters.clone(),
        points,
    })
}

/// Tag turning points of the continuation parameter as saddle-node folds.
fn tag_folds(points: &mut [CurvePoint]) {
    if points.len() < 3 {
        return;
    }
    for i in 1..points.len() - 1 {
        let d1 = points[i].omega - points[i - 1].omega;
        let d2 = points[i + 1].omega - points[i].omega;
        let scale = points[i].omega.abs().max(1e-12);
        if d1 * d2 < 0.0 && d1.abs() > 1e-10 * scale && d2.abs() > 1e-10 * scale {
            points[i].tag = PointTag::Sn;
        }
    }
}

/// Classify stability transitions that are not folds.
fn tag_stability_transitions(points: &mut [CurvePoint], crossing_im: &[f64]) {
    for i in 1..points.len() {
        if points[i].stable != points[i - 1].stable {
            let at = if points[i].stable { i - 1 } else { i };
            if points[at].tag == PointTag::None {
                let near_fold = (at.saturating_sub(1)..=(at + 1).min(points.len() - 1))
                    .any(|j| points[j].tag == PointTag::Sn);
                if !near_fold {
                    points[at].tag = if crossing_im[at] > 0.05 {
                        PointTag::NsCandidate
                    } else {
                        PointTag::Pf
                    };
                }
            }
        }
    }
}

struct FrfProblem<'a> {
    rm: &'a ReducedModel,
    basis: CosineBasis,
    m: usize,
    force: Vec<f64>,
}

impl FrfProblem<'_> {
    fn ncoef_per_master(&self) -> usize {
        2 * self.basis.nh + 1
    }

    fn ncoef(&self) -> usize {
        self.m * self.ncoef_per_master()
    }

    fn synth(&self, u: &DVector<f64>, tau: f64, omega: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let nh = self.basis.nh;
        let npm = self.ncoef_per_master();
        let mut x = DVector::zeros(self.m);
        let mut v = DVector::zeros(self.m);
        let mut a = DVector::zeros(self.m);
        for r in 0..self.m {
            let base = r * npm;
            let mut xr = u[base];
            let mut vr = 0.0;
            let mut ar = 0.0;
            for k in 1..=nh {
                let ck = u[base + 2 * k - 1];
                let sk = u[base + 2 * k];
                let (skt, ckt) = (k as f64 * tau).sin_cos();
                xr += ck * ckt + sk * skt;
                vr += (k as f64) * omega * (-ck * skt + sk * ckt);
                ar -= (k as f64 * omega).powi(2) * (ck * ckt + sk * skt);
            }
            x[r] = xr;
            v[r] = vr;
            a[r] = ar;
        }
        (x, v, a)
    }

    fn residual(&self, u: &DVector<f64>, omega: f64) -> DVector<f64> {
        let nh = self.basis.nh;
        let nt = self.basis.nt;
        let npm = self.ncoef_per_master();
        let mut out = DVector::zeros(self.ncoef());
        for i in 0..nt {
            let tau = 2.0 * std::f64::consts::PI * i as f64 / nt as f64;
            let (x, v, acc2) = self.synth(u, tau, omega);
            let mut rhs = self.rm.acceleration(0.0, &x, &v);
            for r in 0..self.m {
                rhs[r] += self.force[r] * tau.cos();
            }
            for r in 0..self.m {
                let res = acc2[r] - rhs[r];
                let base = r * npm;
                out[base] += res / nt as f64;
                for k in 1..=nh {
                    let (skt, ckt) = (k as f64 * tau).sin_cos();
                    out[base + 2 * k - 1] += 2.0 / nt as f64 * res * ckt;
                    out[base + 2 * k] += 2.0 / nt as f64 * res * skt;
                }
            }
        }
        out
    }

    fn amplitudes(&self, u: &DVector<f64>, omega: f64) -> Vec<f64> {
        let mut worst = vec![0.0f64; self.m];
        for i in 0..256 {
            let tau = 2.0 * std::f64::consts::PI * i as f64 / 256.0;
            let (x, _, _) = self.synth(u, tau, omega);
            for r in 0..self.m {
                worst[r] = worst[r].max(x[r].abs());
            }
        }
        worst
    }
}

/// Forced-damped frequency response over a forcing frequency range.
pub fn frf(rm: &ReducedModel, omega_range: (f64, f64)) -> Result<Curve> {
    frf_with(rm, omega_range, &HbOptions::default())
}

pub fn frf_with(rm: &ReducedModel, omega_range: (f64, f64), opts: &HbOptions) -> Result<Curve> {
    let damping = rm
        .damping
        .as_ref()
        .ok_or_else(|| anyhow!("forced response requires modal damping"))?;
    if damping.iter().any(|&x| x <= 0.0) {
        bail!("forced response requires positive damping ratios");
    }
    let forcing = rm
        .forcing
        .as_ref()
        .ok_or_else(|| anyhow!("forced response requires a harmonic forcing"))?;
    let (lo, hi) = omega_range;
    if !(lo > 0.0 && hi > lo) {
        bail!("invalid forcing frequency range");
    }
    let m = rm.m();
    let problem = FrfProblem {
        rm,
        basis: CosineBasis::new(opts.harmonics),
        m,
        force: forcing.amplitude.clone(),
    };
    let ncoef = problem.ncoef();
    let dim = ncoef + 1;

    // linear-response initial guess at the range start
    let linear_guess = |omega: f64| -> DVector<f64> {
        let mut u = DVector::zeros(dim);
        for r in 0..m {
            let w = rm.omega[r];
            let two_xi_w = 2.0 * damping[r] * w;
            let den = (w * w - omega * omega).powi(2) + (two_xi_w * omega).powi(2);
            let re = problem.force[r] * (w * w - omega * omega) / den;
            let im = -problem.force[r] * two_xi_w * omega / den;
            let base = r * problem.ncoef_per_master();
            u[base + 1] = re;
            u[base + 2] = -im;
        }
        u[ncoef] = omega;
        u
    };

    let mut curve_u: Vec<DVector<f64>> = Vec::new();
    let dw0 = (hi - lo) * 1e-3;
    for target in [lo, lo + dw0] {
        let guess = match curve_u.last() {
            Some(prev) => {
                let mut g = prev.clone();
                g[ncoef] = target;
                g
            }
            None => linear_guess(target),
        };
        let res = |u: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(dim);
            let hb = problem.residual(&u.rows(0, ncoef).into_owned(), u[ncoef]);
            r.rows_mut(0, ncoef).copy_from(&hb);
            r[ncoef] = u[ncoef] - target;
            r
        };
        let (u, _) = newton(res, guess, opts.newton_tol, opts.newton_max_iter)?;
        curve_u.push(u);
    }

    let mut ds = dw0;
    let span = hi - lo;
    while curve_u.len() < opts.max_points {
        let last = curve_u[curve_u.len() - 1].clone();
        let prev = curve_u[curve_u.len() - 2].clone();
        let mut tangent = &last - &prev;
        let norm = tangent.norm();
        if norm == 0.0 {
            bail!("forced-response continuation stalled: identical points");
        }
        tangent /= norm;
        let predictor = &last + &tangent * ds;
        let res = |u: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(dim);
            let hb = problem.residual(&u.rows(0, ncoef).into_owned(), u[ncoef]);
            r.rows_mut(0, ncoef).copy_from(&hb);
            r[ncoef] = (u - &predictor).dot(&tangent);
            r
        };
        match newton(res, predictor.clone(), opts.newton_tol, opts.newton_max_iter) {
            Ok((u, iters)) => {
                let omega = u[ncoef];
                curve_u.push(u);
                if iters <= opts.target_iters {
                    ds = (ds * 1.4).min(opts.ds_max * span);
                } else if iters > opts.target_iters + 2 {
                    ds *= 0.6;
                }
                if omega > hi || omega < lo * 0.5 {
                    break;
                }
            }
            Err(_) => {
                ds *= 0.5;
                if ds < opts.ds_min * span {
                    bail!("forced-response continuation stalled: step below the floor");
                }
            }
        }
    }

    let mut points = Vec::with_capacity(curve_u.len());
    let mut crossing_im = Vec::with_capacity(curve_u.len());
    for u in &curve_u {
        let omega = u[ncoef];
        let coeffs = u.rows(0, ncoef).into_owned();
        let period = 2.0 * std::f64::consts::PI / omega;
        let orbit = |t: f64| -> (DVector<f64>, DVector<f64>) {
            let (x, v, _) = problem.synth(&coeffs, omega * t, omega);
            (x, v)
        };
        let mono = monodromy(rm, period, opts.stability_steps, orbit);
        let eig = mono.complex_eigenvalues();
        let mut max_mod: f64 = 0.0;
        let mut im_at_max = 0.0;
        for e in eig.iter() {
            if e.norm() > max_mod {
                max_mod = e.norm();
                im_at_max = e.im.abs();
            }
        }
        points.push(CurvePoint {
            omega,
            amplitude: problem.amplitudes(&coeffs, omega),
            stable: max_mod <= 1.0 + 1e-5,
            tag: PointTag::None,
        });
        crossing_im.push(im_at_max);
    }
    tag_folds(&mut points);
    tag_stability_transitions(&mut points, &crossing_im);
    Ok(Curve {
        method: rm.method.as_str().to_string(),
        masters: rm.masters.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::gamma::{gamma_from_backbone, gamma_of_oscillator};
    use crate::rom::RomMethod;

    #[test]
    fn linear_backbone_is_vertical() {
        let rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.3]);
        let curve = backbone(&rm, 0.3).unwrap();
        assert!(curve.points.len() > 3);
        for p in &curve.points {
            assert!((p.omega - 1.3).abs() < 1e-9, "omega {}", p.omega);
        }
        assert!(curve.max_amplitude() >= 0.3);
    }

    #[test]
    fn duffing_backbone_matches_first_order_hb() {
        let h = 0.8;
        let mut rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        rm.add_term(0, h, vec![3], vec![0]);
        // amplitude where (3h/8) a^2 = 0.01
        let a_star = (0.01 / (3.0 * h / 8.0)).sqrt();
        let curve = backbone(&rm, 1.2 * a_star).unwrap();
        let p = curve
            .points
            .iter()
            .min_by(|a, b| {
                (a.amplitude[0] - a_star)
                    .abs()
                    .total_cmp(&(b.amplitude[0] - a_star).abs())
            })
            .unwrap();
        let expect = 1.0 + 3.0 * h / 8.0 * p.amplitude[0].powi(2);
        assert!(
            (p.omega - expect).abs() < 0.01 * (expect - 1.0),
            "omega {} vs first-order {}",
            p.omega,
            expect
        );
    }

    #[test]
    fn backbone_curvature_matches_oscillator_gamma() {
        // include a velocity monomial to exercise the full formula
        let mut rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        rm.add_term(0, 0.9, vec![3], vec![0]);
        rm.add_term(0, 0.4, vec![1], vec![2]);
        let gamma = gamma_of_oscillator(1.0, 0.0, 0.0, 0.9, 0.4);
        let a_fit = (0.01f64 / gamma).sqrt();
        let curve = backbone(&rm, a_fit).unwrap();
        let got = gamma_from_backbone(&curve, a_fit).unwrap();
        assert!(
            (got - gamma).abs() < 0.01 * gamma.abs(),
            "fit {got} vs perturbation {gamma}"
        );
    }

    #[test]
    fn zero_forcing_gives_zero_branch() {
        let rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0])
            .with_damping(vec![0.01])
            .with_forcing(vec![0.0], 1.0);
        let curve = frf(&rm, (0.8, 1.2)).unwrap();
        assert!(curve.max_amplitude() < 1e-12);
    }

    #[test]
    fn damped_duffing_peak_bends_along_backbone() {
        let h = 0.8;
        let xi = 0.01;
        let mut conservative = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        conservative.add_term(0, h, vec![3], vec![0]);
        let mut forced = conservative.clone().with_damping(vec![xi]).with_forcing(
            vec![0.004],
            1.0,
        );
        forced.method = RomMethod::NormalForm;
        let curve = frf(&forced, (0.9, 1.25)).unwrap();
        // peak of the response
        let peak = curve
            .points
            .iter()
            .max_by(|a, b| a.amplitude[0].total_cmp(&b.amplitude[0]))
            .unwrap();
        let backbone_omega = 1.0 + 3.0 * h / 8.0 * peak.amplitude[0].powi(2);
        assert!(
            (peak.omega - backbone_omega).abs() < 0.02 * backbone_omega,
            "peak at {} vs backbone {}",
            peak.omega,
            backbone_omega
        );
        // above the fold threshold the branch carries exactly two folds
        assert_eq!(curve.count_tag(PointTag::Sn), 2, "{:?}", curve.points.len());
        // unstable segment between the folds
        assert!(curve.points.iter().any(|p| !p.stable));
    }
}
