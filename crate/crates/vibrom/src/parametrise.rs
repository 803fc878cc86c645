//! Order-k parametrisation of invariant manifolds of polynomial vector
//! fields near a fixed point.
//!
//! The mechanical system is lifted to first order and diagonalised; the
//! unknown manifold map W and reduced dynamics f are solved order by order
//! from the invariance equation F(W(s)) = DW(s) f(s). Each order splits into
//! a normal part (slave rows, solved by division by the eigenvalue divisor)
//! and a tangent part (master rows) where the style chooses the split:
//! graph style keeps the master rows of W linear and pushes everything into
//! f; normal-form style keeps only (near-)resonant monomials in f.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use nalgebra::DVector;
use num_complex::Complex64;

use crate::model::ModalModel;
use crate::poly::RPoly;

/// Near-resonance divisor threshold: |lambda_i - m.lambda_L| < eps |lambda_i|.
pub const NEAR_RES_TOL: f64 = 1e-3;
/// Default order cap (memory of dense multi-index maps at desk scale).
pub const MAX_ORDER: usize = 9;

/// Parametrisation style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Graph,
    NormalForm,
}

/// First-order diagonalised system: z' = Lambda z + Q(z,z) + C(z,z,z).
///
/// Variables are ordered per mode: 2p for the +i omega branch, 2p+1 for its
/// conjugate. Tensor maps store the total coefficient of each sorted
/// z-monomial.
#[derive(Debug, Clone)]
pub struct DiagonalSystem {
    pub lambda: Vec<Complex64>,
    pub quad: BTreeMap<[usize; 2], DVector<Complex64>>,
    pub cubic: BTreeMap<[usize; 3], DVector<Complex64>>,
    /// Back transform: stacked state (x_1..x_N, y_1..y_N) = P z.
    pub back: nalgebra::DMatrix<Complex64>,
    pub n_modes: usize,
}

fn conj_pair(lambda: Complex64) -> (Complex64, Complex64) {
    (lambda, lambda.conj())
}

/// Lift a modal model to first order and diagonalise the linear part.
pub fn diagonalize(mm: &ModalModel, damping: Option<&[f64]>) -> Result<DiagonalSystem> {
    let nm = mm.n_modes();
    let mut lambda = vec![Complex64::new(0.0, 0.0); 2 * nm];
    for p in 0..nm {
        let w = mm.omega[p];
        let xi = match (damping, &mm.damping) {
            (Some(d), _) => d[p],
            (None, Some(d)) => d[p],
            _ => 0.0,
        };
        if xi < 0.0 || xi >= 1.0 {
            bail!("modal damping ratio must lie in [0, 1) for the complex pair lift");
        }
        let lam = Complex64::new(-xi * w, w * (1.0 - xi * xi).sqrt());
        let (a, b) = conj_pair(lam);
        lambda[2 * p] = a;
        lambda[2 * p + 1] = b;
    }

    // modal nonlinear force rows expanded in the diagonal variables; the
    // multiplicity counts the ordered index arrangements behind a monomial
    let mut quad_modal: BTreeMap<[usize; 2], DVector<f64>> = BTreeMap::new();
    for (&key, &v) in mm.quad.entries().map(|(k, x)| (k, x)) {
        for (s, rest, mult) in equation_splits3(key) {
            // x_a x_b with x = z_{2a} + z_{2a+1}
            let [a, b] = rest;
            let coeff = v * mult;
            for za in [2 * a, 2 * a + 1] {
                for zb in [2 * b, 2 * b + 1] {
                    let mut mk = [za.min(zb), za.max(zb)];
                    mk.sort_unstable();
                    quad_modal
                        .entry(mk)
                        .or_insert_with(|| DVector::zeros(nm))[s] += coeff;
                }
            }
        }
    }
    let mut cubic_modal: BTreeMap<[usize; 3], DVector<f64>> = BTreeMap::new();
    for (&key, &v) in mm.cubic.entries().map(|(k, x)| (k, x)) {
        for (s, rest, mult) in equation_splits4(key) {
            let [a, b, c] = rest;
            let coeff = v * mult;
            for za in [2 * a, 2 * a + 1] {
                for zb in [2 * b, 2 * b + 1] {
                    for zc in [2 * c, 2 * c + 1] {
                        let mut mk = [za, zb, zc];
                        mk.sort_unstable();
                        cubic_modal
                            .entry(mk)
                            .or_insert_with(|| DVector::zeros(nm))[s] += coeff;
                    }
                }
            }
        }
    }

    // distribute modal rows over the conjugate pair:
    // z_{2s}'   = lambda z_{2s}   - f_s / (lambda - conj(lambda))
    // z_{2s+1}' = conj ..         + f_s / (lambda - conj(lambda))
    let expand = |rows: &DVector<f64>| -> DVector<Complex64> {
        let mut out = DVector::from_element(2 * nm, Complex64::new(0.0, 0.0));
        for s in 0..nm {
            if rows[s] == 0.0 {
                continue;
            }
            let denom = lambda[2 * s] - lambda[2 * s + 1];
            let c = Complex64::new(rows[s], 0.0) / denom;
            out[2 * s] -= c;
            out[2 * s + 1] += c;
        }
        out
    };
    let quad = quad_modal.iter().map(|(k, v)| (*k, expand(v))).collect();
    let cubic = cubic_modal.iter().map(|(k, v)| (*k, expand(v))).collect();

    let mut back = nalgebra::DMatrix::from_element(2 * nm, 2 * nm, Complex64::new(0.0, 0.0));
    for p in 0..nm {
        back[(p, 2 * p)] = Complex64::new(1.0, 0.0);
        back[(p, 2 * p + 1)] = Complex64::new(1.0, 0.0);
        back[(nm + p, 2 * p)] = lambda[2 * p];
        back[(nm + p, 2 * p + 1)] = lambda[2 * p + 1];
    }

    Ok(DiagonalSystem {
        lambda,
        quad,
        cubic,
        back,
        n_modes: nm,
    })
}

/// Distinct equation-index choices from a sorted quadratic multiset, with
/// the count of ordered index arrangements carrying the monomial.
fn equation_splits3(key: [usize; 3]) -> Vec<(usize, [usize; 2], f64)> {
    let mut out = Vec::with_capacity(3);
    for slot in 0..3 {
        if slot > 0 && key[slot] == key[slot - 1] {
            continue;
        }
        let mut rest = [0usize; 2];
        let mut at = 0;
        for (pos, &v) in key.iter().enumerate() {
            if pos != slot {
                rest[at] = v;
                at += 1;
            }
        }
        let mult = if rest[0] == rest[1] { 1.0 } else { 2.0 };
        out.push((key[slot], rest, mult));
    }
    out
}

fn equation_splits4(key: [usize; 4]) -> Vec<(usize, [usize; 3], f64)> {
    let mut out = Vec::with_capacity(4);
    for slot in 0..4 {
        if slot > 0 && key[slot] == key[slot - 1] {
            continue;
        }
        let mut rest = [0usize; 3];
        let mut at = 0;
        for (pos, &v) in key.iter().enumerate() {
            if pos != slot {
                rest[at] = v;
                at += 1;
            }
        }
        let mult = if rest[0] == rest[1] && rest[1] == rest[2] {
            1.0
        } else if rest[0] == rest[1] || rest[1] == rest[2] || rest[0] == rest[2] {
            3.0
        } else {
            6.0
        };
        out.push((key[slot], rest, mult));
    }
    out
}

/// Homogeneous polynomial map: multi-index over the master variables to a
/// complex coefficient vector.
#[derive(Debug, Clone)]
pub struct HomPoly {
    pub nvars: usize,
    pub dim: usize,
    pub terms: BTreeMap<Vec<u8>, DVector<Complex64>>,
}

impl HomPoly {
    pub fn zero(nvars: usize, dim: usize) -> Self {
        Self {
            nvars,
            dim,
            terms: BTreeMap::new(),
        }
    }

    fn add_to(&mut self, key: &[u8], vec: &DVector<Complex64>) {
        let entry = self
            .terms
            .entry(key.to_vec())
            .or_insert_with(|| DVector::from_element(self.dim, Complex64::new(0.0, 0.0)));
        *entry += vec;
    }

    pub fn eval(&self, s: &[Complex64]) -> DVector<Complex64> {
        let mut out = DVector::from_element(self.dim, Complex64::new(0.0, 0.0));
        for (key, vec) in &self.terms {
            let mut mono = Complex64::new(1.0, 0.0);
            for (v, &e) in s.iter().zip(key) {
                for _ in 0..e {
                    mono *= v;
                }
            }
            out += vec * mono;
        }
        out
    }
}

/// A near-resonant or resonant event recorded during the solve.
#[derive(Debug, Clone)]
pub struct ResonanceEvent {
    /// Multi-index of the monomial over the master variables.
    pub monomial: Vec<u8>,
    /// Diagonal variable index of the affected row.
    pub var: usize,
    /// |lambda_i - m.lambda_L| / |lambda_i|.
    pub relative_divisor: f64,
}

/// Polynomial manifold map and reduced dynamics in diagonal coordinates.
#[derive(Debug, Clone)]
pub struct Parametrisation {
    pub style: Style,
    pub order: usize,
    /// Master mode indices (into the modal model).
    pub masters: Vec<usize>,
    /// Diagonal variable indices of the master directions.
    pub master_vars: Vec<usize>,
    pub lambda: Vec<Complex64>,
    pub lambda_master: Vec<Complex64>,
    /// w[k-1] is the order-k part of W (dim 2N over 2d master variables).
    pub w: Vec<HomPoly>,
    /// f[k-1] is the order-k part of the reduced field (dim 2d).
    pub f: Vec<HomPoly>,
    pub resonance_log: Vec<ResonanceEvent>,
}

fn multi_indices(nvars: usize, degree: u8) -> Vec<Vec<u8>> {
    fn rec(nvars: usize, degree: u8, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == nvars - 1 {
            let mut full = prefix.clone();
            full.push(degree);
            out.push(full);
            return;
        }
        for d in 0..=degree {
            prefix.push(d);
            rec(nvars, degree - d, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        return out;
    }
    rec(nvars, degree, &mut Vec::new(), &mut out);
    out
}

fn key_add(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Solve the invariance equation order by order.
pub fn parametrise(
    sys: &DiagonalSystem,
    masters: &[usize],
    order: usize,
    style: Style,
) -> Result<Parametrisation> {
    parametrise_with_tol(sys, masters, order, style, NEAR_RES_TOL)
}

pub fn parametrise_with_tol(
    sys: &DiagonalSystem,
    masters: &[usize],
    order: usize,
    style: Style,
    near_tol: f64,
) -> Result<Parametrisation> {
    let nm = sys.n_modes;
    if masters.is_empty() {
        bail!("master set must not be empty");
    }
    if masters.iter().any(|&m| m >= nm) {
        bail!("master index out of range");
    }
    let mut sorted = masters.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != masters.len() {
        bail!("master set contains duplicates");
    }
    if order == 0 || order > MAX_ORDER {
        bail!("parametrisation order must lie in 1..={MAX_ORDER}");
    }

    let dim = 2 * nm;
    let master_vars: Vec<usize> = sorted.iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
    let nvars = master_vars.len();
    let lambda_master: Vec<Complex64> = master_vars.iter().map(|&v| sys.lambda[v]).collect();

    // order 1: identity tangent and linear reduced dynamics
    let mut w1 = HomPoly::zero(nvars, dim);
    let mut f1 = HomPoly::zero(nvars, nvars);
    for (r, &var) in master_vars.iter().enumerate() {
        let mut key = vec![0u8; nvars];
        key[r] = 1;
        let mut col = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        col[var] = Complex64::new(1.0, 0.0);
        w1.terms.insert(key.clone(), col);
        let mut fr = DVector::from_element(nvars, Complex64::new(0.0, 0.0));
        fr[r] = lambda_master[r];
        f1.terms.insert(key, fr);
    }
    let mut w = vec![w1];
    let mut f = vec![f1];
    let mut log = Vec::new();

    for k in 2..=order {
        // right-hand side R = [cross DW f]_k - [F2 + F3 compositions]_k
        let mut rhs = HomPoly::zero(nvars, dim);

        // quadratic field composition
        for k1 in 1..k {
            let k2 = k - k1;
            let (wa, wb) = (&w[k1 - 1], &w[k2 - 1]);
            for (ma, va) in &wa.terms {
                for (mb, vb) in &wb.terms {
                    let key = key_add(ma, mb);
                    let mut contrib = DVector::from_element(dim, Complex64::new(0.0, 0.0));
                    for (&[alpha, beta], coeff) in &sys.quad {
                        // bilinear polarisation of the total monomial coefficient
                        let cross = if alpha == beta {
                            va[alpha] * vb[beta]
                        } else {
                            (va[alpha] * vb[beta] + va[beta] * vb[alpha]) * 0.5
                        };
                        if cross.norm_sqr() > 0.0 {
                            contrib.axpy(cross, coeff, Complex64::new(1.0, 0.0));
                        }
                    }
                    // subtract because rhs = cross - compositions
                    rhs.add_to(&key, &(-contrib));
                }
            }
        }

        // cubic field composition
        for k1 in 1..k {
            for k2 in 1..k - k1 {
                let k3 = k - k1 - k2;
                if k3 == 0 {
                    continue;
                }
                let (wa, wb, wc) = (&w[k1 - 1], &w[k2 - 1], &w[k3 - 1]);
                for (ma, va) in &wa.terms {
                    for (mb, vb) in &wb.terms {
                        let mab = key_add(ma, mb);
                        for (mc, vc) in &wc.terms {
                            let key = key_add(&mab, mc);
                            let mut contrib =
                                DVector::from_element(dim, Complex64::new(0.0, 0.0));
                            for (&[a, b, c], coeff) in &sys.cubic {
                                let perms: [[usize; 3]; 6] = [
                                    [a, b, c],
                                    [a, c, b],
                                    [b, a, c],
                                    [b, c, a],
                                    [c, a, b],
                                    [c, b, a],
                                ];
                                let mut cross = Complex64::new(0.0, 0.0);
                                for p in perms {
                                    cross += va[p[0]] * vb[p[1]] * vc[p[2]];
                                }
                                cross /= 6.0;
                                if cross.norm_sqr() > 0.0 {
                                    contrib.axpy(cross, coeff, Complex64::new(1.0, 0.0));
                                }
                            }
                            rhs.add_to(&key, &(-contrib));
                        }
                    }
                }
            }
        }

        // cross terms DW_j f_i with j, i >= 2 and j + i - 1 = k
        for j in 2..k {
            let i = k + 1 - j;
            if i < 2 || i > k - 1 {
                continue;
            }
            let (wj, fi) = (&w[j - 1], &f[i - 1]);
            for (mw, vw) in &wj.terms {
                for r in 0..nvars {
                    if mw[r] == 0 {
                        continue;
                    }
                    let mut dkey = mw.clone();
                    dkey[r] -= 1;
                    for (mf, vf) in &fi.terms {
                        if vf[r].norm_sqr() == 0.0 {
                            continue;
                        }
                        let key = key_add(&dkey, mf);
                        let contrib = vw * (vf[r] * f64::from(mw[r]));
                        rhs.add_to(&key, &contrib);
                    }
                }
            }
        }

        // solve the homological equations per monomial and component
        let mut wk = HomPoly::zero(nvars, dim);
        let mut fk = HomPoly::zero(nvars, nvars);
        for key in multi_indices(nvars, k as u8) {
            let r = match rhs.terms.get(&key) {
                Some(v) => v.clone(),
                None => DVector::from_element(dim, Complex64::new(0.0, 0.0)),
            };
            let mdotl: Complex64 = key
                .iter()
                .zip(&lambda_master)
                .map(|(&e, l)| l * f64::from(e))
                .sum();
            let mut wvec = DVector::from_element(dim, Complex64::new(0.0, 0.0));
            let mut fvec = DVector::from_element(nvars, Complex64::new(0.0, 0.0));
            for i in 0..dim {
                let divisor = sys.lambda[i] - mdotl;
                let rel = divisor.norm() / sys.lambda[i].norm();
                if let Some(pos) = master_vars.iter().position(|&v| v == i) {
                    match style {
                        Style::Graph => {
                            fvec[pos] = -r[i];
                        }
                        Style::NormalForm => {
                            if rel < near_tol {
                                fvec[pos] = -r[i];
                                log.push(ResonanceEvent {
                                    monomial: key.clone(),
                                    var: i,
                                    relative_divisor: rel,
                                });
                            } else {
                                wvec[i] = r[i] / divisor;
                            }
                        }
                    }
                } else {
                    if rel < near_tol {
                        bail!(
                            "cross resonance: slave mode {} resonates with the master \
                             combination {:?} (relative divisor {:.2e}); enlarge the \
                             master set with mode {}",
                            i / 2 + 1,
                            key,
                            rel,
                            i / 2 + 1
                        );
                    }
                    wvec[i] = r[i] / divisor;
                }
            }
            if wvec.iter().any(|c| c.norm_sqr() > 0.0) {
                wk.terms.insert(key.clone(), wvec);
            }
            if fvec.iter().any(|c| c.norm_sqr() > 0.0) {
                fk.terms.insert(key, fvec);
            }
        }
        w.push(wk);
        f.push(fk);
    }

    Ok(Parametrisation {
        style,
        order,
        masters: sorted,
        master_vars,
        lambda: sys.lambda.clone(),
        lambda_master,
        w,
        f,
        resonance_log: log,
    })
}

impl Parametrisation {
    /// Evaluate the manifold map at a master state.
    pub fn eval_map(&self, s: &[Complex64]) -> DVector<Complex64> {
        let dim = self.lambda.len();
        let mut out = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        for part in &self.w {
            out += part.eval(s);
        }
        out
    }

    /// Evaluate the reduced field at a master state.
    pub fn eval_field(&self, s: &[Complex64]) -> DVector<Complex64> {
        let mut out = DVector::from_element(self.master_vars.len(), Complex64::new(0.0, 0.0));
        for part in &self.f {
            out += part.eval(s);
        }
        out
    }

    /// Conjugate-symmetric master sample of amplitude `a` and phases `theta`.
    pub fn sample_state(&self, a: f64, theta: &[f64]) -> Vec<Complex64> {
        let d = self.masters.len();
        let mut s = vec![Complex64::new(0.0, 0.0); 2 * d];
        for r in 0..d {
            let za = Complex64::from_polar(0.5 * a, theta[r]);
            s[2 * r] = za;
            s[2 * r + 1] = za.conj();
        }
        s
    }

    /// JSON dump of the map and reduced-field coefficients.
    pub fn to_json_string(&self) -> String {
        let mut out = String::from("{\n  \"style\": ");
        out.push_str(match self.style {
            Style::Graph => "\"graph\"",
            Style::NormalForm => "\"normal-form\"",
        });
        out.push_str(&format!(
            ",\n  \"order\": {},\n  \"masters\": {:?},\n  \"map\": [",
            self.order,
            self.masters.iter().map(|m| m + 1).collect::<Vec<_>>()
        ));
        let mut first = true;
        for part in &self.w {
            for (key, vec) in &part.terms {
                if !first {
                    out.push(',');
                }
                first = false;
                let re: Vec<String> = vec.iter().map(|c| crate::io::fmt_f64(c.re)).collect();
                let im: Vec<String> = vec.iter().map(|c| crate::io::fmt_f64(c.im)).collect();
                out.push_str(&format!(
                    "\n    {{\"m\": {:?}, \"re\": [{}], \"im\": [{}]}}",
                    key,
                    re.join(", "),
                    im.join(", ")
                ));
            }
        }
        out.push_str("\n  ],\n  \"field\": [");
        first = true;
        for part in &self.f {
            for (key, vec) in &part.terms {
                if !first {
                    out.push(',');
                }
                first = false;
                let re: Vec<String> = vec.iter().map(|c| crate::io::fmt_f64(c.re)).collect();
                let im: Vec<String> = vec.iter().map(|c| crate::io::fmt_f64(c.im)).collect();
                out.push_str(&format!(
                    "\n    {{\"m\": {:?}, \"re\": [{}], \"im\": [{}]}}",
                    key,
                    re.join(", "),
                    im.join(", ")
                ));
            }
        }
        out.push_str("\n  ]\n}\n");
        out
    }
}

/// Residual F(W(s)) - DW(s) f(s) evaluated on master amplitude rings.
///
/// Returns the max infinity-norm per ring.
pub fn invariance_residual(
    sys: &DiagonalSystem,
    par: &Parametrisation,
    amplitudes: &[f64],
) -> Vec<f64> {
    let d = par.masters.len();
    let phases_per_mode = match d {
        1 => 32,
        2 => 12,
        _ => 6,
    };
    let mut norms = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let mut worst: f64 = 0.0;
        let mut phase_idx = vec![0usize; d];
        loop {
            let theta: Vec<f64> = phase_idx
                .iter()
                .map(|&i| 2.0 * std::f64::consts::PI * i as f64 / phases_per_mode as f64)
                .collect();
            let s = par.sample_state(a, &theta);
            let r = residual_at(sys, par, &s);
            worst = worst.max(r);
            // advance the phase counter
            let mut carry = true;
            for slot in phase_idx.iter_mut() {
                if carry {
                    *slot += 1;
                    if *slot == phases_per_mode {
                        *slot = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        norms.push(worst);
    }
    norms
}

fn residual_at(sys: &DiagonalSystem, par: &Parametrisation, s: &[Complex64]) -> f64 {
    let dim = sys.lambda.len();
    let z = par.eval_map(s);
    // F(z)
    let mut field = DVector::from_element(dim, Complex64::new(0.0, 0.0));
    for i in 0..dim {
        field[i] = sys.lambda[i] * z[i];
    }
    for (&[a, b], coeff) in &sys.quad {
        field += coeff * (z[a] * z[b]);
    }
    for (&[a, b, c], coeff) in &sys.cubic {
        field += coeff * (z[a] * z[b] * z[c]);
    }
    // DW(s) f(s)
    let fs = par.eval_field(s);
    let mut dwf = DVector::from_element(dim, Complex64::new(0.0, 0.0));
    for part in &par.w {
        for (key, vec) in &part.terms {
            for r in 0..key.len() {
                if key[r] == 0 || fs[r].norm_sqr() == 0.0 {
                    continue;
                }
                let mut mono = Complex64::new(f64::from(key[r]), 0.0);
                for q in 0..key.len() {
                    let pow = if q == r { key[q] - 1 } else { key[q] };
                    for _ in 0..pow {
                        mono *= s[q];
                    }
                }
                dwf += vec * (mono * fs[r]);
            }
        }
    }
    (field - dwf).camax()
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(1e-300).ln()).collect();
    let sx: f64 = lx.iter().sum();
    let sy: f64 = ly.iter().sum();
    let sxx: f64 = lx.iter().map(|v| v * v).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Dense complex polynomial over real variables, used for conversions.
#[derive(Debug, Clone)]
pub struct CPoly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u8>, Complex64>,
}

impl CPoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Complex64) -> Self {
        let mut p = Self::zero(nvars);
        if c.norm_sqr() > 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    fn add_term(&mut self, key: &[u8], c: Complex64) {
        if c.norm_sqr() == 0.0 {
            return;
        }
        let entry = self
            .terms
            .entry(key.to_vec())
            .or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
    }

    pub fn add(&mut self, other: &CPoly) {
        for (k, v) in &other.terms {
            self.add_term(k, *v);
        }
    }

    pub fn mul(&self, other: &CPoly) -> CPoly {
        let mut out = CPoly::zero(self.nvars);
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let key: Vec<u8> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                out.add_term(&key, va * vb);
            }
        }
        out
    }

    /// Real part as an RPoly; fails if any imaginary part exceeds `tol`.
    pub fn into_real(self, tol: f64) -> Result<RPoly> {
        let mut out = RPoly::zero(self.nvars);
        for (k, v) in self.terms {
            if v.im.abs() > tol {
                bail!(
                    "imaginary residue {:.3e} in real conversion at monomial {:?}",
                    v.im,
                    k
                );
            }
            out.add_term(&k, v.re);
        }
        Ok(out)
    }
}

/// Substitute complex master variables by linear forms in real variables.
///
/// `subs[v]` lists (real variable, complex coefficient) pairs for master
/// variable `v`. Returns one CPoly per requested row combination.
pub fn substitute_linear(
    terms: &BTreeMap<Vec<u8>, DVector<Complex64>>,
    row_weights: &[(usize, Complex64)],
    subs: &[Vec<(usize, Complex64)>],
    n_real: usize,
) -> CPoly {
    let mut out = CPoly::zero(n_real);
    for (key, vec) in terms {
        let mut rowsum = Complex64::new(0.0, 0.0);
        for &(row, wgt) in row_weights {
            rowsum += vec[row] * wgt;
        }
        if rowsum.norm_sqr() == 0.0 {
            continue;
        }
        // expand the monomial prod_v s_v^{e_v}
        let mut acc = CPoly::constant(n_real, Complex64::new(1.0, 0.0));
        for (v, &e) in key.iter().enumerate() {
            for _ in 0..e {
                let mut lin = CPoly::zero(n_real);
                for &(rv, c) in &subs[v] {
                    let mut k = vec![0u8; n_real];
                    k[rv] = 1;
                    lin.add_term(&k, c);
                }
                acc = acc.mul(&lin);
            }
        }
        for (k, v) in &acc.terms {
            out.add_term(k, v * rowsum);
        }
    }
    out
}

/// Substitution tables from complex pair variables to (R_r, S_r) real pairs.
///
/// s_{2r} = (S_r - conj(lam) R_r)/(lam - conj(lam)), s_{2r+1} its conjugate.
pub fn real_substitution(lambda_master: &[Complex64]) -> Vec<Vec<(usize, Complex64)>> {
    let d = lambda_master.len() / 2;
    let mut subs = Vec::with_capacity(2 * d);
    for r in 0..d {
        let lam = lambda_master[2 * r];
        let lamc = lambda_master[2 * r + 1];
        let denom = lam - lamc;
        // variable order in the real polynomials: R_1..R_d, S_1..S_d
        subs.push(vec![
            (r, -lamc / denom),
            (d + r, Complex64::new(1.0, 0.0) / denom),
        ]);
        subs.push(vec![
            (r, lam / denom),
            (d + r, -Complex64::new(1.0, 0.0) / denom),
        ]);
    }
    subs
}
