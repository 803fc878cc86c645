//! Small dense-exponent multivariate polynomials with real coefficients.
//!
//! Used for symbolic manipulation of reduced dynamics at desk scale:
//! quadratic-manifold projections, reduced-dynamics substitution checks and
//! conversions from complex parametrisation output.

use std::collections::BTreeMap;

/// Polynomial in `nvars` variables; keys are exponent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RPoly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u8>, f64>,
}

impl RPoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn var(nvars: usize, idx: usize) -> Self {
        let mut key = vec![0u8; nvars];
        key[idx] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(key, 1.0);
        p
    }

    pub fn add_term(&mut self, exps: &[u8], coeff: f64) {
        debug_assert_eq!(exps.len(), self.nvars);
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps.to_vec()).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.remove(exps);
        }
    }

    pub fn add(&self, other: &RPoly) -> RPoly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k, *v);
        }
        out
    }

    pub fn sub(&self, other: &RPoly) -> RPoly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k, -v);
        }
        out
    }

    pub fn scale(&self, c: f64) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (k, v) in &self.terms {
            out.add_term(k, v * c);
        }
        out
    }

    /// Product truncated at total degree `max_order` (u8::MAX for none).
    pub fn mul_truncated(&self, other: &RPoly, max_order: u8) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (ka, va) in &self.terms {
            let da: u8 = ka.iter().sum();
            for (kb, vb) in &other.terms {
                let db: u8 = kb.iter().sum();
                if da.saturating_add(db) > max_order {
                    continue;
                }
                let key: Vec<u8> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                out.add_term(&key, va * vb);
            }
        }
        out
    }

    pub fn mul(&self, other: &RPoly) -> RPoly {
        self.mul_truncated(other, u8::MAX)
    }

    /// Partial derivative with respect to variable `idx`.
    pub fn derivative(&self, idx: usize) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (k, v) in &self.terms {
            if k[idx] == 0 {
                continue;
            }
            let mut key = k.clone();
            key[idx] -= 1;
            out.add_term(&key, v * f64::from(k[idx]));
        }
        out
    }

    /// Drop terms with total degree above `max_order`.
    pub fn truncate(&self, max_order: u8) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (k, v) in &self.terms {
            if k.iter().sum::<u8>() <= max_order {
                out.add_term(k, *v);
            }
        }
        out
    }

    /// Drop terms with |coefficient| below `tol`.
    pub fn chop(&self, tol: f64) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (k, v) in &self.terms {
            if v.abs() > tol {
                out.add_term(k, *v);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut sum = 0.0;
        for (k, v) in &self.terms {
            let mut term = *v;
            for (xi, &e) in x.iter().zip(k) {
                for _ in 0..e {
                    term *= xi;
                }
            }
            sum += term;
        }
        sum
    }

    pub fn coeff(&self, exps: &[u8]) -> f64 {
        self.terms.get(exps).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Time derivative along a flow: sum_i (dp/dw_i) * field_i.
    pub fn lie_derivative(&self, field: &[RPoly], max_order: u8) -> RPoly {
        let mut out = RPoly::zero(self.nvars);
        for (i, fi) in field.iter().enumerate() {
            out = out.add(&self.derivative(i).mul_truncated(fi, max_order));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn arithmetic_and_eval() {
        // p = (x + 2y)^2 = x^2 + 4xy + 4y^2
        let x = RPoly::var(2, 0);
        let y = RPoly::var(2, 1);
        let p = x.add(&y.scale(2.0));
        let sq = p.mul(&p);
        assert_relative_eq!(sq.coeff(&[2, 0]), 1.0);
        assert_relative_eq!(sq.coeff(&[1, 1]), 4.0);
        assert_relative_eq!(sq.coeff(&[0, 2]), 4.0);
        assert_relative_eq!(sq.eval(&[1.5, -0.5]), (1.5 - 1.0_f64).powi(2));
    }

    #[test]
    fn derivative_and_lie() {
        // harmonic oscillator flow: d/dt (x^2 + y^2/w^2) = 0 for xdot=y, ydot=-w^2 x
        let w2 = 3.0;
        let x = RPoly::var(2, 0);
        let y = RPoly::var(2, 1);
        let energy = x.mul(&x).add(&y.mul(&y).scale(1.0 / w2));
        let field = vec![y.clone(), x.scale(-w2)];
        let de = energy.lie_derivative(&field, u8::MAX);
        assert!(de.is_zero(), "{de:?}");
    }
}
