//! Semi-discrete and modal equations of motion.
//!
//! The physical model is `M X'' + K X + G(X,X) + H(X,X,X) = f_e`; the modal
//! model is the same structure with unit mass, diagonal stiffness `omega^2`
//! and projected tensors g, h.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::tensor::{raw_symmetry_report, SymTensor3, SymTensor4, SymmetryReport};

/// Relative tolerance for matrix symmetry of mass and stiffness.
pub const MATRIX_SYM_TOL: f64 = 1e-12;

/// Semi-discretised equations of motion with quadratic and cubic stiffness.
#[derive(Debug, Clone)]
pub struct PhysicalModel {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub quad: SymTensor3,
    pub cubic: SymTensor4,
}

fn matrix_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

impl PhysicalModel {
    pub fn new(
        mass: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        quad: SymTensor3,
        cubic: SymTensor4,
    ) -> Result<Self> {
        let n = mass.nrows();
        if mass.ncols() != n || stiffness.nrows() != n || stiffness.ncols() != n {
            bail!("mass and stiffness must be square matrices of equal size");
        }
        if quad.n() != n || cubic.n() != n {
            bail!("tensor dimension does not match matrix dimension");
        }
        if matrix_asymmetry(&mass) > MATRIX_SYM_TOL {
            bail!("mass matrix is not symmetric to {MATRIX_SYM_TOL:e} relative");
        }
        if matrix_asymmetry(&stiffness) > MATRIX_SYM_TOL {
            bail!("stiffness matrix is not symmetric to {MATRIX_SYM_TOL:e} relative");
        }
        Ok(Self {
            mass,
            stiffness,
            quad,
            cubic,
        })
    }

    /// Linear model helper.
    pub fn linear(mass: DMatrix<f64>, stiffness: DMatrix<f64>) -> Result<Self> {
        let n = mass.nrows();
        Self::new(mass, stiffness, SymTensor3::zeros(n), SymTensor4::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.mass.nrows()
    }

    /// Internal force k(X) = K X + G(X,X) + H(X,X,X).
    pub fn internal_force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            bail!(
                "displacement length {} does not match dof count {}",
                x.len(),
                self.n()
            );
        }
        Ok(&self.stiffness * x + self.quad.contract(x) + self.cubic.contract(x))
    }

    /// Nonlinear part of the internal force: G(X,X) + H(X,X,X).
    pub fn nonlinear_force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            bail!(
                "displacement length {} does not match dof count {}",
                x.len(),
                self.n()
            );
        }
        Ok(self.quad.contract(x) + self.cubic.contract(x))
    }

    /// Tangent stiffness K + dG/dX + dH/dX at a displacement.
    pub fn tangent_stiffness(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.stiffness + self.quad.jacobian(x) + self.cubic.jacobian(x)
    }

    /// Quartic strain potential: 1/2 X.KX + 1/3 X.G(X,X) + 1/4 X.H(X,X,X).
    pub fn potential(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.stiffness * x))
            + x.dot(&self.quad.contract(x)) / 3.0
            + x.dot(&self.cubic.contract(x)) / 4.0
    }
}

/// Mass-normalised modal model: frequencies, eigenvectors and modal tensors.
#[derive(Debug, Clone)]
pub struct ModalModel {
    /// Ascending angular eigenfrequencies (rad/s).
    pub omega: DVector<f64>,
    /// Mass-normalised eigenvectors, one column per retained mode (n x N).
    pub modes: DMatrix<f64>,
    /// Modal quadratic tensor g.
    pub quad: SymTensor3,
    /// Modal cubic tensor h.
    pub cubic: SymTensor4,
    /// Optional per-mode damping ratios.
    pub damping: Option<DVector<f64>>,
}

impl ModalModel {
    pub fn n_modes(&self) -> usize {
        self.omega.len()
    }

    /// Build directly from a spectrum and modal tensors (identity eigenbasis).
    pub fn from_modal_data(
        omega: Vec<f64>,
        quad: SymTensor3,
        cubic: SymTensor4,
        damping: Option<Vec<f64>>,
    ) -> Result<Self> {
        let nm = omega.len();
        if quad.n() != nm || cubic.n() != nm {
            bail!("modal tensor dimension does not match mode count");
        }
        if omega.iter().any(|w| *w <= 0.0) {
            bail!("eigenfrequencies must be positive");
        }
        if omega.windows(2).any(|w| w[1] < w[0]) {
            bail!("eigenfrequencies must be ascending");
        }
        if let Some(d) = &damping {
            if d.len() != nm {
                bail!("damping ratio count does not match mode count");
            }
        }
        Ok(Self {
            omega: DVector::from_vec(omega),
            modes: DMatrix::identity(nm, nm),
            quad,
            cubic,
            damping: damping.map(DVector::from_vec),
        })
    }

    /// Modal nonlinear force g(x,x) + h(x,x,x) in modal coordinates.
    pub fn nonlinear_force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n_modes() {
            bail!(
                "modal displacement length {} does not match mode count {}",
                x.len(),
                self.n_modes()
            );
        }
        Ok(self.quad.contract(x) + self.cubic.contract(x))
    }

    /// View the modal oscillators as a physical model in modal coordinates
    /// (identity mass, diagonal stiffness).
    pub fn as_physical(&self) -> PhysicalModel {
        let nm = self.n_modes();
        let stiffness = DMatrix::from_diagonal(&self.omega.map(|w| w * w));
        PhysicalModel {
            mass: DMatrix::identity(nm, nm),
            stiffness,
            quad: self.quad.clone(),
            cubic: self.cubic.clone(),
        }
    }
}

/// Solve the symmetric generalized eigenproblem (K - w^2 M) phi = 0.
///
/// Returns ascending frequencies and mass-normalised eigenvectors.
pub fn eigenpairs(model: &PhysicalModel, n_modes: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = model.n();
    if n_modes == 0 || n_modes > n {
        bail!("requested {} modes of an {}-dof model", n_modes, n);
    }
    let chol = model
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| anyhow!("mass matrix is not positive definite"))?;
    // A = L^-1 K L^-T is symmetric with the same eigenvalues as (K, M).
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| anyhow!("mass Cholesky factor is singular"))?;
    let mut a = &linv * &model.stiffness * linv.transpose();
    // enforce exact symmetry against roundoff before the iterative solver
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| anyhow!("eigen-solver failed to converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut omega = DVector::zeros(n_modes);
    let mut modes = DMatrix::zeros(n, n_modes);
    for (col, &idx) in order.iter().take(n_modes).enumerate() {
        let lam = eig.eigenvalues[idx];
        if lam <= 0.0 {
            bail!("non-positive stiffness eigenvalue {lam:e}; model is not vibratory");
        }
        omega[col] = lam.sqrt();
        let phi = linv.transpose() * eig.eigenvectors.column(idx);
        // deterministic sign: largest-magnitude component positive
        let mut imax = 0;
        for i in 0..n {
            if phi[i].abs() > phi[imax].abs() {
                imax = i;
            }
        }
        let sign = if phi[imax] < 0.0 { -1.0 } else { 1.0 };
        modes.set_column(col, &(phi * sign));
    }
    Ok((omega, modes))
}

/// Assemble the modal model of the first `n_modes` modes.
pub fn assemble_modal(model: &PhysicalModel, n_modes: usize) -> Result<ModalModel> {
    let (omega, modes) = eigenpairs(model, n_modes)?;
    let quad = model.quad.project(&modes);
    let cubic = model.cubic.project(&modes);
    Ok(ModalModel {
        omega,
        modes,
        quad,
        cubic,
        damping: None,
    })
}

/// Tensor and matrix symmetry report for a physical model.
pub fn check_physical_symmetry(model: &PhysicalModel) -> SymmetryReport {
    let mut report = raw_symmetry_report(&model.quad.raw_entries());
    let cubic = raw_symmetry_report(&model.cubic.raw_entries());
    report.violations.extend(cubic.violations);
    report.max_relative = report.max_relative.max(cubic.max_relative);
    for (name, m) in [("mass", &model.mass), ("stiffness", &model.stiffness)] {
        let rel = matrix_asymmetry(m);
        if rel > 0.0 {
            report.max_relative = report.max_relative.max(rel);
            report.violations.push(crate::tensor::SymmetryViolation {
                indices: vec![],
                spread: rel * m.amax(),
                relative: rel,
            });
            let _ = name;
        }
    }
    report
}

/// Tensor symmetry report for a modal model.
pub fn check_modal_symmetry(model: &ModalModel) -> SymmetryReport {
    let mut report = raw_symmetry_report(&model.quad.raw_entries());
    let cubic = raw_symmetry_report(&model.cubic.raw_entries());
    report.violations.extend(cubic.violations);
    report.max_relative = report.max_relative.max(cubic.max_relative);
    report
}

/// Spectral quotient: integer part of (max slave decay rate / min master decay rate).
pub fn spectral_quotient(decay_rates: &[f64], masters: &[usize]) -> Result<usize> {
    if decay_rates.iter().any(|s| *s <= 0.0) {
        bail!("decay rates must be positive");
    }
    if masters.iter().any(|&m| m >= decay_rates.len()) {
        bail!("master index out of range");
    }
    let slave_max = decay_rates
        .iter()
        .enumerate()
        .filter(|(i, _)| !masters.contains(i))
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if !slave_max.is_finite() {
        bail!("slave set is empty");
    }
    let master_min = masters
        .iter()
        .map(|&m| decay_rates[m])
        .fold(f64::INFINITY, f64::min);
    if !master_min.is_finite() || masters.is_empty() {
        bail!("master set is empty");
    }
    Ok((slave_max / master_min) as usize)
}

/// Black-box nonlinear force evaluator over a model, X -> f_nl(X).
///
/// Pure and reentrant; used by the non-intrusive identification paths.
#[derive(Clone)]
pub enum BlackBox<'a> {
    Physical(&'a PhysicalModel),
    Modal(&'a ModalModel),
}

impl<'a> BlackBox<'a> {
    pub fn dim(&self) -> usize {
        match self {
            BlackBox::Physical(m) => m.n(),
            BlackBox::Modal(m) => m.n_modes(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            BlackBox::Physical(m) => m.nonlinear_force(x),
            BlackBox::Modal(m) => m.nonlinear_force(x),
        }
    }
}

/// Black-box view of a physical model.
pub fn as_blackbox(model: &PhysicalModel) -> BlackBox<'_> {
    BlackBox::Physical(model)
}

/// Black-box view of a modal model (acts in modal coordinates).
pub fn as_blackbox_modal(model: &ModalModel) -> BlackBox<'_> {
    BlackBox::Modal(model)
}
