//! Reduced-order models: shared types and the method-specific builders.

pub mod condensation;
pub mod invariant;
pub mod qm;

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};

/// Reduction method behind a map or reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomMethod {
    Graph,
    GraphMulti,
    NormalForm,
    DirectNormalForm,
    Ice,
    StaticCondensation,
    QmMd,
    QmSmd,
}

impl RomMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RomMethod::Graph => "graph",
            RomMethod::GraphMulti => "graph-multi",
            RomMethod::NormalForm => "nf",
            RomMethod::DirectNormalForm => "dnf",
            RomMethod::Ice => "ice",
            RomMethod::StaticCondensation => "static-condensation",
            RomMethod::QmMd => "qm-md",
            RomMethod::QmSmd => "qm-smd",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "graph" => RomMethod::Graph,
            "graph-multi" => RomMethod::GraphMulti,
            "nf" => RomMethod::NormalForm,
            "dnf" => RomMethod::DirectNormalForm,
            "ice" => RomMethod::Ice,
            "static-condensation" => RomMethod::StaticCondensation,
            "qm-md" => RomMethod::QmMd,
            "qm-smd" => RomMethod::QmSmd,
            other => bail!("unknown reduction method '{other}'"),
        })
    }
}

/// One polynomial term of a vector-valued map: coefficient vector times
/// prod x_i^{d_i} prod y_i^{v_i} over the master coordinates.
#[derive(Debug, Clone)]
pub struct MapTerm {
    pub disp_exps: Vec<u8>,
    pub vel_exps: Vec<u8>,
    pub coeff: DVector<f64>,
}

/// Polynomial mapping from master displacement/velocity pairs to the full
/// space. The linear part is the eigenvector restriction (identity-tangent).
#[derive(Debug, Clone)]
pub struct ManifoldMap {
    pub method: RomMethod,
    pub order: usize,
    /// Master mode (or master eigenpair) indices.
    pub masters: Vec<usize>,
    pub n_full: usize,
    /// Tangent basis (n_full x m), shared by displacement and velocity rows.
    pub linear: DMatrix<f64>,
    pub disp_terms: Vec<MapTerm>,
    pub vel_terms: Vec<MapTerm>,
}

fn eval_terms(
    terms: &[MapTerm],
    x: &DVector<f64>,
    y: &DVector<f64>,
    out: &mut DVector<f64>,
) {
    for term in terms {
        let mut mono = 1.0;
        for (i, &e) in term.disp_exps.iter().enumerate() {
            for _ in 0..e {
                mono *= x[i];
            }
        }
        for (i, &e) in term.vel_exps.iter().enumerate() {
            for _ in 0..e {
                mono *= y[i];
            }
        }
        if mono != 0.0 {
            out.axpy(mono, &term.coeff, 1.0);
        }
    }
}

impl ManifoldMap {
    pub fn m(&self) -> usize {
        self.masters.len()
    }

    /// Evaluate displacement and velocity reconstructions at a master state.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut disp = &self.linear * x;
        let mut vel = &self.linear * y;
        eval_terms(&self.disp_terms, x, y, &mut disp);
        eval_terms(&self.vel_terms, x, y, &mut vel);
        (disp, vel)
    }

    /// Coefficient of a displacement-row monomial for full-space row `row`.
    pub fn disp_coeff(&self, row: usize, disp_exps: &[u8], vel_exps: &[u8]) -> f64 {
        self.disp_terms
            .iter()
            .filter(|t| t.disp_exps == disp_exps && t.vel_exps == vel_exps)
            .map(|t| t.coeff[row])
            .sum()
    }

    pub fn vel_coeff(&self, row: usize, disp_exps: &[u8], vel_exps: &[u8]) -> f64 {
        self.vel_terms
            .iter()
            .filter(|t| t.disp_exps == disp_exps && t.vel_exps == vel_exps)
            .map(|t| t.coeff[row])
            .sum()
    }

    /// True when no displacement-row term involves a velocity monomial.
    pub fn is_velocity_independent(&self) -> bool {
        self.disp_terms
            .iter()
            .all(|t| t.vel_exps.iter().all(|&e| e == 0))
    }

    /// Merge duplicate monomials and order terms canonically.
    pub fn canonicalise(&mut self) {
        use std::collections::BTreeMap;
        for terms in [&mut self.disp_terms, &mut self.vel_terms] {
            let mut merged: BTreeMap<(Vec<u8>, Vec<u8>), DVector<f64>> = BTreeMap::new();
            for t in terms.iter() {
                let key = (t.disp_exps.clone(), t.vel_exps.clone());
                merged
                    .entry(key)
                    .and_modify(|c| *c += &t.coeff)
                    .or_insert_with(|| t.coeff.clone());
            }
            *terms = merged
                .into_iter()
                .filter(|(_, c)| c.amax() > 0.0)
                .map(|((d, v), c)| MapTerm {
                    disp_exps: d,
                    vel_exps: v,
                    coeff: c,
                })
                .collect();
        }
    }
}

/// One scalar monomial of a reduced oscillator equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTerm {
    pub eq: usize,
    pub coeff: f64,
    pub disp_exps: Vec<u8>,
    pub vel_exps: Vec<u8>,
}

/// Harmonic forcing of the reduced dynamics: F_r cos(Omega t) per master.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub amplitude: Vec<f64>,
    pub frequency: f64,
}

/// Second-order polynomial oscillator system in master coordinates:
/// x_r'' + 2 xi_r w_r x_r' + w_r^2 x_r + sum(terms_r) = F_r cos(Omega t).
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub method: RomMethod,
    pub masters: Vec<usize>,
    pub omega: Vec<f64>,
    pub terms: Vec<RomTerm>,
    pub damping: Option<Vec<f64>>,
    pub forcing: Option<Forcing>,
}

impl ReducedModel {
    pub fn m(&self) -> usize {
        self.masters.len()
    }

    pub fn linear(method: RomMethod, masters: Vec<usize>, omega: Vec<f64>) -> Self {
        Self {
            method,
            masters,
            omega,
            terms: Vec::new(),
            damping: None,
            forcing: None,
        }
    }

    pub fn with_damping(mut self, xi: Vec<f64>) -> Self {
        self.damping = Some(xi);
        self
    }

    pub fn with_forcing(mut self, amplitude: Vec<f64>, frequency: f64) -> Self {
        self.forcing = Some(Forcing {
            amplitude,
            frequency,
        });
        self
    }

    pub fn add_term(&mut self, eq: usize, coeff: f64, disp_exps: Vec<u8>, vel_exps: Vec<u8>) {
        if coeff != 0.0 {
            self.terms.push(RomTerm {
                eq,
                coeff,
                disp_exps,
                vel_exps,
            });
        }
    }

    /// Total coefficient of a monomial on equation `eq`.
    pub fn coeff(&self, eq: usize, disp_exps: &[u8], vel_exps: &[u8]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.eq == eq && t.disp_exps == disp_exps && t.vel_exps == vel_exps)
            .map(|t| t.coeff)
            .sum()
    }

    /// Merge duplicate monomials and order canonically by (eq, exponents).
    pub fn canonicalise(&mut self) {
        use std::collections::BTreeMap;
        let mut merged: BTreeMap<(usize, Vec<u8>, Vec<u8>), f64> = BTreeMap::new();
        for t in &self.terms {
            *merged
                .entry((t.eq, t.disp_exps.clone(), t.vel_exps.clone()))
                .or_insert(0.0) += t.coeff;
        }
        self.terms = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|((eq, d, v), c)| RomTerm {
                eq,
                coeff: c,
                disp_exps: d,
                vel_exps: v,
            })
            .collect();
    }

    /// Accelerations of the reduced system at a state.
    pub fn acceleration(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let m = self.m();
        let mut acc = DVector::zeros(m);
        for r in 0..m {
            let w = self.omega[r];
            acc[r] = -w * w * x[r];
            if let Some(xi) = &self.damping {
                acc[r] -= 2.0 * xi[r] * w * y[r];
            }
        }
        for term in &self.terms {
            let mut mono = term.coeff;
            for (i, &e) in term.disp_exps.iter().enumerate() {
                for _ in 0..e {
                    mono *= x[i];
                }
            }
            for (i, &e) in term.vel_exps.iter().enumerate() {
                for _ in 0..e {
                    mono *= y[i];
                }
            }
            acc[term.eq] -= mono;
        }
        if let Some(forcing) = &self.forcing {
            let c = (forcing.frequency * t).cos();
            for r in 0..m {
                acc[r] += forcing.amplitude[r] * c;
            }
        }
        acc
    }

    /// Partial derivatives of the acceleration for variational integration.
    pub fn acceleration_jacobian(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.m();
        let mut dax = DMatrix::zeros(m, m);
        let mut day = DMatrix::zeros(m, m);
        for r in 0..m {
            let w = self.omega[r];
            dax[(r, r)] = -w * w;
            if let Some(xi) = &self.damping {
                day[(r, r)] = -2.0 * xi[r] * w;
            }
        }
        for term in &self.terms {
            for target in 0..m {
                // d/dx_target
                if term.disp_exps[target] > 0 {
                    let mut mono = term.coeff * f64::from(term.disp_exps[target]);
                    for (i, &e) in term.disp_exps.iter().enumerate() {
                        let p = if i == target { e - 1 } else { e };
                        for _ in 0..p {
                            mono *= x[i];
                        }
                    }
                    for (i, &e) in term.vel_exps.iter().enumerate() {
                        for _ in 0..e {
                            mono *= y[i];
                        }
                    }
                    dax[(term.eq, target)] -= mono;
                }
                if term.vel_exps[target] > 0 {
                    let mut mono = term.coeff * f64::from(term.vel_exps[target]);
                    for (i, &e) in term.disp_exps.iter().enumerate() {
                        for _ in 0..e {
                            mono *= x[i];
                        }
                    }
                    for (i, &e) in term.vel_exps.iter().enumerate() {
                        let p = if i == target { e - 1 } else { e };
                        for _ in 0..p {
                            mono *= y[i];
                        }
                    }
                    day[(term.eq, target)] -= mono;
                }
            }
        }
        (dax, day)
    }

    /// A model is conservative when it has no damping, no forcing and every
    /// monomial carries an even total velocity power.
    pub fn is_conservative(&self) -> bool {
        self.damping.iter().all(|d| d.iter().all(|&x| x == 0.0))
            && self.forcing.is_none()
            && self
                .terms
                .iter()
                .all(|t| t.vel_exps.iter().map(|&e| usize::from(e)).sum::<usize>() % 2 == 0)
    }
}
