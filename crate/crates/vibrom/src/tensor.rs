//! Sparse symmetric tensors for quadratic and cubic restoring forces.
//!
//! Both the physical tensors (G, H) and their modal counterparts (g, h) are
//! fully symmetric under any permutation of their indices, including the
//! equation index, because the internal force derives from a potential.
//! Canonical storage keeps one entry per sorted index multiset, holding the
//! common value of all permutations (the symmetric-part convention: for the
//! upper-triangular value split over distinct orderings, the stored value is
//! the upper-triangular coefficient divided by the number of orderings of the
//! trailing indices).

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use nalgebra::DVector;

/// Raw coordinate entry of a third-order tensor: indices (s, i, j) and value.
pub type RawEntry3 = ([usize; 3], f64);
/// Raw coordinate entry of a fourth-order tensor: indices (s, i, j, k) and value.
pub type RawEntry4 = ([usize; 4], f64);

/// One violated permutation identity found in a raw coordinate list.
#[derive(Debug, Clone)]
pub struct SymmetryViolation {
    /// Sorted index multiset of the offending group.
    pub indices: Vec<usize>,
    /// Absolute spread between the stated permutation values.
    pub spread: f64,
    /// Spread relative to the largest magnitude in the group.
    pub relative: f64,
}

/// Report of a permutation-symmetry check.
#[derive(Debug, Clone, Default)]
pub struct SymmetryReport {
    pub violations: Vec<SymmetryViolation>,
    pub max_relative: f64,
}

impl SymmetryReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative <= tol
    }
}

fn group_spread(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut mag: f64 = 0.0;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        mag = mag.max(v.abs());
    }
    let spread = hi - lo;
    let rel = if mag > 0.0 { spread / mag } else { 0.0 };
    (spread, rel)
}

/// Check permutation-symmetry consistency of raw coordinate entries.
///
/// Entries whose indices are permutations of each other must carry the same
/// value; the spread inside each group is reported relative to the largest
/// entry magnitude of the whole tensor, so noise-level groups do not mask
/// genuine violations. Entries absent from a group are not treated as zeros;
/// canonical files list each multiset once.
pub fn raw_symmetry_report<const K: usize>(entries: &[([usize; K], f64)]) -> SymmetryReport {
    let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut scale: f64 = 0.0;
    for (idx, v) in entries {
        let mut key = idx.to_vec();
        key.sort_unstable();
        groups.entry(key).or_default().push(*v);
        scale = scale.max(v.abs());
    }
    let mut report = SymmetryReport::default();
    if scale == 0.0 {
        return report;
    }
    for (key, values) in groups {
        if values.len() < 2 {
            continue;
        }
        let (spread, _) = group_spread(&values);
        let rel = spread / scale;
        if spread > 0.0 {
            report.max_relative = report.max_relative.max(rel);
            report.violations.push(SymmetryViolation {
                indices: key,
                spread,
                relative: rel,
            });
        }
    }
    report
}

fn distinct_perms3(idx: [usize; 3]) -> Vec<[usize; 3]> {
    let [a, b, c] = idx;
    let mut all = vec![
        [a, b, c],
        [a, c, b],
        [b, a, c],
        [b, c, a],
        [c, a, b],
        [c, b, a],
    ];
    all.sort_unstable();
    all.dedup();
    all
}

fn distinct_perms4(idx: [usize; 4]) -> Vec<[usize; 4]> {
    let mut all = Vec::with_capacity(24);
    let v = idx;
    for p in 0..4 {
        for q in 0..4 {
            if q == p {
                continue;
            }
            for r in 0..4 {
                if r == p || r == q {
                    continue;
                }
                let s = 6 - p - q - r;
                all.push([v[p], v[q], v[r], v[s]]);
            }
        }
    }
    all.sort_unstable();
    all.dedup();
    all
}

/// Fully symmetric third-order tensor over `n` coordinates (quadratic force).
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    n: usize,
    entries: BTreeMap<[usize; 3], f64>,
}

/// Fully symmetric fourth-order tensor over `n` coordinates (cubic force).
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor4 {
    n: usize,
    entries: BTreeMap<[usize; 4], f64>,
}

const MERGE_TOL: f64 = 1e-12;

macro_rules! sym_tensor_common {
    ($ty:ident, $k:literal) => {
        impl $ty {
            pub fn zeros(n: usize) -> Self {
                Self {
                    n,
                    entries: BTreeMap::new(),
                }
            }

            pub fn n(&self) -> usize {
                self.n
            }

            pub fn is_zero(&self) -> bool {
                self.entries.is_empty()
            }

            pub fn num_entries(&self) -> usize {
                self.entries.len()
            }

            /// Canonical entries as (sorted indices, symmetric value).
            pub fn entries(&self) -> impl Iterator<Item = (&[usize; $k], &f64)> {
                self.entries.iter()
            }

            /// Value of the tensor at any index permutation (0 when absent).
            pub fn get(&self, idx: [usize; $k]) -> f64 {
                let mut key = idx;
                key.sort_unstable();
                self.entries.get(&key).copied().unwrap_or(0.0)
            }

            /// Add `value` to the symmetric entry for `idx`.
            pub fn add(&mut self, idx: [usize; $k], value: f64) {
                let mut key = idx;
                key.sort_unstable();
                assert!(key[$k - 1] < self.n, "tensor index out of range");
                *self.entries.entry(key).or_insert(0.0) += value;
                if self.entries[&key] == 0.0 {
                    self.entries.remove(&key);
                }
            }

            /// Build from raw coordinate entries, canonicalising permutations.
            ///
            /// Entries whose indices are permutations of each other must agree
            /// to `MERGE_TOL` relative; the canonical entry stores their mean.
            pub fn from_raw(n: usize, raw: &[([usize; $k], f64)]) -> Result<Self> {
                let mut groups: BTreeMap<[usize; $k], Vec<f64>> = BTreeMap::new();
                for (idx, v) in raw {
                    let mut key = *idx;
                    key.sort_unstable();
                    if key[$k - 1] >= n {
                        bail!(
                            "tensor index {:?} out of range for n = {}",
                            idx,
                            n
                        );
                    }
                    groups.entry(key).or_default().push(*v);
                }
                let mut entries = BTreeMap::new();
                for (key, values) in groups {
                    let (spread, rel) = group_spread(&values);
                    if values.len() > 1 && rel > MERGE_TOL && spread > MERGE_TOL {
                        bail!(
                            "symmetry-inconsistent tensor entries at indices {:?}: \
                             values spread {:.3e} (relative {:.3e})",
                            key,
                            spread,
                            rel
                        );
                    }
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    if mean != 0.0 {
                        entries.insert(key, mean);
                    }
                }
                Ok(Self { n, entries })
            }

            /// Reject entries that are not sorted or appear more than once.
            pub fn from_canonical(n: usize, raw: &[([usize; $k], f64)]) -> Result<Self> {
                let mut entries = BTreeMap::new();
                for (idx, v) in raw {
                    if !idx.windows(2).all(|w| w[0] <= w[1]) {
                        bail!("non-canonical tensor entry {:?}: indices must be sorted", idx);
                    }
                    if idx[$k - 1] >= n {
                        bail!("tensor index {:?} out of range for n = {}", idx, n);
                    }
                    if entries.insert(*idx, *v).is_some() {
                        bail!("duplicate canonical tensor entry {:?}", idx);
                    }
                }
                entries.retain(|_, v: &mut f64| *v != 0.0);
                Ok(Self { n, entries })
            }

            pub fn scale(&self, factor: f64) -> Self {
                let entries = self
                    .entries
                    .iter()
                    .map(|(k, v)| (*k, v * factor))
                    .filter(|(_, v)| *v != 0.0)
                    .collect();
                Self { n: self.n, entries }
            }

            pub fn raw_entries(&self) -> Vec<([usize; $k], f64)> {
                self.entries.iter().map(|(k, v)| (*k, *v)).collect()
            }

            /// Largest absolute entry value.
            pub fn max_abs(&self) -> f64 {
                self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
            }
        }
    };
}

sym_tensor_common!(SymTensor3, 3);
sym_tensor_common!(SymTensor4, 4);

impl SymTensor3 {
    /// Bilinear contraction G(u, v): out_s = sum_ij G^s_ij u_i v_j.
    pub fn bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (&idx, &val) in &self.entries {
            for p in distinct_perms3(idx) {
                let [s, i, j] = p;
                out[s] += val * u[i] * v[j];
            }
        }
        out
    }

    /// Quadratic force G(x, x).
    pub fn contract(&self, x: &DVector<f64>) -> DVector<f64> {
        self.bilinear(x, x)
    }

    /// Jacobian of the quadratic force: d/dx_r [G(x,x)]_s = 2 sum_j G^s_rj x_j.
    pub fn jacobian(&self, x: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.n, self.n);
        for (&idx, &val) in &self.entries {
            for p in distinct_perms3(idx) {
                let [s, i, j] = p;
                // derivative w.r.t. x_i of val*x_i*x_j plus the i<->j role
                // is covered by iterating all distinct permutations
                out[(s, i)] += val * x[j];
                out[(s, j)] += val * x[i];
            }
        }
        out
    }

    /// Project onto a basis: g_pmn = phi_p^T G(phi_m, phi_n) for the columns of `basis`.
    pub fn project(&self, basis: &nalgebra::DMatrix<f64>) -> SymTensor3 {
        let nm = basis.ncols();
        let mut out = SymTensor3::zeros(nm);
        for m in 0..nm {
            let phi_m = basis.column(m).into_owned();
            for nn in m..nm {
                let phi_n = basis.column(nn).into_owned();
                let gv = self.bilinear(&phi_m, &phi_n);
                for p in 0..=m {
                    let val = basis.column(p).dot(&gv);
                    if val != 0.0 {
                        out.add([p, m, nn], val);
                    }
                }
            }
        }
        out
    }
}

impl SymTensor4 {
    /// Trilinear contraction H(u, v, w).
    pub fn trilinear(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (&idx, &val) in &self.entries {
            for p in distinct_perms4(idx) {
                let [s, i, j, k] = p;
                out[s] += val * u[i] * v[j] * w[k];
            }
        }
        out
    }

    /// Cubic force H(x, x, x).
    pub fn contract(&self, x: &DVector<f64>) -> DVector<f64> {
        self.trilinear(x, x, x)
    }

    /// Jacobian of the cubic force: d/dx_r [H(x,x,x)]_s = 3 sum_jk H^s_rjk x_j x_k.
    pub fn jacobian(&self, x: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.n, self.n);
        for (&idx, &val) in &self.entries {
            for p in distinct_perms4(idx) {
                let [s, i, j, k] = p;
                out[(s, i)] += val * x[j] * x[k];
                out[(s, j)] += val * x[i] * x[k];
                out[(s, k)] += val * x[i] * x[j];
            }
        }
        out
    }

    /// Project onto a basis: h_pmnq = phi_p^T H(phi_m, phi_n, phi_q).
    pub fn project(&self, basis: &nalgebra::DMatrix<f64>) -> SymTensor4 {
        let nm = basis.ncols();
        let mut out = SymTensor4::zeros(nm);
        for m in 0..nm {
            let phi_m = basis.column(m).into_owned();
            for nn in m..nm {
                let phi_n = basis.column(nn).into_owned();
                for q in nn..nm {
                    let phi_q = basis.column(q).into_owned();
                    let hv = self.trilinear(&phi_m, &phi_n, &phi_q);
                    for p in 0..=m {
                        let val = basis.column(p).dot(&hv);
                        if val != 0.0 {
                            out.add([p, m, nn, q], val);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_contraction_counts_orderings() {
        // g with single symmetric entry {0,1,1} = 1:
        // f_0 = x_1^2, f_1 = 2 x_0 x_1
        let g = SymTensor3::from_raw(2, &[([0, 1, 1], 1.0)]).unwrap();
        let x = DVector::from_vec(vec![3.0, 2.0]);
        let f = g.contract(&x);
        assert_relative_eq!(f[0], 4.0);
        assert_relative_eq!(f[1], 12.0);
    }

    #[test]
    fn cubic_contraction_counts_orderings() {
        // h {0,0,1,1} = 1: f_0 = 2 x_0 x_1^2 (orderings 011,101,110 on eq 0... )
        let h = SymTensor4::from_raw(2, &[([0, 0, 1, 1], 1.0)]).unwrap();
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let f = h.contract(&x);
        // eq 0: permutations with s=0: (0,1,1)x3 -> 3*x0? no: distinct perms of
        // {0,0,1,1} with leading 0: remaining {0,1,1} -> 3 orderings: x0*x1*x1*3
        assert_relative_eq!(f[0], 3.0 * 2.0 * 9.0);
        assert_relative_eq!(f[1], 3.0 * 4.0 * 3.0);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let g = SymTensor3::from_raw(3, &[([0, 1, 2], 0.7), ([1, 1, 1], -0.3)]).unwrap();
        let h = SymTensor4::from_raw(3, &[([0, 0, 1, 2], 0.4), ([2, 2, 2, 2], 1.1)]).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let eps = 1e-7;
        let jg = g.jacobian(&x);
        let jh = h.jacobian(&x);
        for r in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[r] += eps;
            xm[r] -= eps;
            let dg = (g.contract(&xp) - g.contract(&xm)) / (2.0 * eps);
            let dh = (h.contract(&xp) - h.contract(&xm)) / (2.0 * eps);
            for s in 0..3 {
                assert_relative_eq!(jg[(s, r)], dg[s], epsilon = 1e-6);
                assert_relative_eq!(jh[(s, r)], dh[s], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn raw_symmetry_violation_reported() {
        let report = raw_symmetry_report(&[([0, 0, 1], 1.0), ([1, 0, 0], 0.5)]);
        assert_eq!(report.violations.len(), 1);
        assert_relative_eq!(report.violations[0].spread, 0.5);
        assert!(!report.passes(1e-10));
        // consistent permutations pass
        let report = raw_symmetry_report(&[([0, 0, 1], 1.0), ([1, 0, 0], 1.0)]);
        assert!(report.passes(0.0));
    }

    #[test]
    fn inconsistent_raw_entries_rejected() {
        assert!(SymTensor3::from_raw(2, &[([0, 0, 1], 1.0), ([1, 0, 0], 0.5)]).is_err());
        assert!(SymTensor3::from_raw(2, &[([0, 0, 1], 1.0), ([1, 0, 0], 1.0)]).is_ok());
    }

    #[test]
    fn canonical_loader_rejects_unsorted_and_duplicates() {
        assert!(SymTensor3::from_canonical(2, &[([1, 0, 0], 1.0)]).is_err());
        assert!(SymTensor3::from_canonical(2, &[([0, 0, 1], 1.0), ([0, 0, 1], 1.0)]).is_err());
        assert!(SymTensor3::from_canonical(2, &[([0, 0, 1], 1.0)]).is_ok());
    }
}
