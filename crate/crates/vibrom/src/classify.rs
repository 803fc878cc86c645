//! Classification of nonlinear coupling monomials.
//!
//! Every monomial of the modal equations acts as a forcing term on its
//! oscillator. Terms are tagged trivially-resonant, resonant or non-resonant
//! from the eigenfrequency relations, and invariant-breaking terms
//! (g^p_mm x_m^2, h^p_mmm x_m^3 with m master, p slave) are flagged.

use anyhow::{bail, Result};

use crate::model::ModalModel;

/// Default relative detuning below which a frequency relation counts as resonant.
pub const DEFAULT_RES_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResonanceTag {
    TriviallyResonant,
    Resonant,
    NonResonant,
}

/// One classified monomial x_{i1}..x_{ik} of equation `eq`.
#[derive(Debug, Clone)]
pub struct ClassifiedMonomial {
    pub eq: usize,
    /// Sorted modal indices of the monomial (length 2 or 3).
    pub indices: Vec<usize>,
    pub coefficient: f64,
    pub tag: ResonanceTag,
    pub invariant_breaking: bool,
}

/// A detected internal resonance relation sum(sign_k w_{i_k}) ~= w_target.
#[derive(Debug, Clone)]
pub struct ResonanceRelation {
    pub target: usize,
    /// (mode index, sign) terms on the combination side.
    pub combo: Vec<(usize, i8)>,
    /// |residual| / w_target.
    pub residual: f64,
}

impl ResonanceRelation {
    pub fn describe(&self) -> String {
        let lhs: Vec<String> = self
            .combo
            .iter()
            .map(|(i, s)| format!("{}w{}", if *s >= 0 { "+" } else { "-" }, i + 1))
            .collect();
        format!(
            "{} = w{} (residual {:.2e})",
            lhs.join(" "),
            self.target + 1,
            self.residual
        )
    }
}

#[derive(Debug, Clone)]
pub struct MonomialClassification {
    pub masters: Vec<usize>,
    pub entries: Vec<ClassifiedMonomial>,
    pub resonances: Vec<ResonanceRelation>,
}

impl MonomialClassification {
    pub fn invariant_breaking(&self) -> impl Iterator<Item = &ClassifiedMonomial> {
        self.entries.iter().filter(|e| e.invariant_breaking)
    }

    pub fn has_relation_between(&self, a: usize, b: usize) -> bool {
        self.resonances
            .iter()
            .any(|r| (r.target == a && r.combo.iter().all(|(i, _)| *i == b))
                || (r.target == b && r.combo.iter().all(|(i, _)| *i == a)))
    }
}

/// Best (smallest) relative residual of sum(+-w_i) = w_eq over sign choices,
/// together with the realizing signs.
fn best_combo(omega: &[f64], eq: usize, indices: &[usize]) -> (f64, Vec<(usize, i8)>) {
    let target = omega[eq];
    let mut best = f64::INFINITY;
    let mut combo = Vec::new();
    let k = indices.len();
    for mask in 0..(1usize << k) {
        let mut sum = 0.0;
        let mut terms = Vec::with_capacity(k);
        for (pos, &i) in indices.iter().enumerate() {
            let sign: i8 = if mask & (1 << pos) != 0 { -1 } else { 1 };
            sum += f64::from(sign) * omega[i];
            terms.push((i, sign));
        }
        let res = (sum - target).abs() / target;
        if res < best {
            best = res;
            combo = terms;
        }
    }
    (best, combo)
}

/// Trivial resonance pattern: on equation p, a cubic monomial x_p x_j^2.
fn is_trivial(eq: usize, indices: &[usize]) -> bool {
    if indices.len() != 3 {
        return false;
    }
    let mut rest = Vec::new();
    let mut seen_eq = false;
    for &i in indices {
        if i == eq && !seen_eq {
            seen_eq = true;
        } else {
            rest.push(i);
        }
    }
    seen_eq && rest.len() == 2 && rest[0] == rest[1]
}

/// Classify all nonzero monomials of a modal model.
pub fn classify_monomials(
    mm: &ModalModel,
    masters: &[usize],
    tol_res: f64,
) -> Result<MonomialClassification> {
    if masters.is_empty() {
        bail!("master set must not be empty");
    }
    let nm = mm.n_modes();
    if masters.iter().any(|&m| m >= nm) {
        bail!("master index out of range");
    }
    let omega: Vec<f64> = mm.omega.iter().copied().collect();
    let is_master = |i: usize| masters.contains(&i);

    let mut entries = Vec::new();
    let mut resonances: Vec<ResonanceRelation> = Vec::new();
    let mut push_relation = |target: usize, combo: Vec<(usize, i8)>, residual: f64| {
        let dup = resonances
            .iter()
            .any(|r| r.target == target && r.combo == combo);
        if !dup {
            resonances.push(ResonanceRelation {
                target,
                combo,
                residual,
            });
        }
    };

    for (&key, &value) in mm.quad.entries().map(|(k, v)| (k, v)) {
        // each sorted multiset yields one monomial per distinct equation-index choice
        for slot in 0..3 {
            if slot > 0 && key[slot] == key[slot - 1] {
                continue;
            }
            let eq = key[slot];
            let mut indices: Vec<usize> = Vec::with_capacity(2);
            for (pos, &i) in key.iter().enumerate() {
                if pos != slot {
                    indices.push(i);
                }
            }
            let (residual, combo) = best_combo(&omega, eq, &indices);
            let resonant = residual < tol_res;
            if resonant {
                push_relation(eq, combo, residual);
            }
            let invariant_breaking =
                indices[0] == indices[1] && is_master(indices[0]) && !is_master(eq);
            entries.push(ClassifiedMonomial {
                eq,
                indices,
                coefficient: value,
                tag: if resonant {
                    ResonanceTag::Resonant
                } else {
                    ResonanceTag::NonResonant
                },
                invariant_breaking,
            });
        }
    }

    for (&key, &value) in mm.cubic.entries().map(|(k, v)| (k, v)) {
        for slot in 0..4 {
            if slot > 0 && key[slot] == key[slot - 1] {
                continue;
            }
            let eq = key[slot];
            let mut indices: Vec<usize> = Vec::with_capacity(3);
            for (pos, &i) in key.iter().enumerate() {
                if pos != slot {
                    indices.push(i);
                }
            }
            let trivial = is_trivial(eq, &indices);
            let (residual, combo) = best_combo(&omega, eq, &indices);
            let tag = if trivial {
                ResonanceTag::TriviallyResonant
            } else if residual < tol_res {
                push_relation(eq, combo, residual);
                ResonanceTag::Resonant
            } else {
                ResonanceTag::NonResonant
            };
            let invariant_breaking = indices.iter().all(|&i| i == indices[0])
                && is_master(indices[0])
                && !is_master(eq);
            entries.push(ClassifiedMonomial {
                eq,
                indices,
                coefficient: value,
                tag,
                invariant_breaking,
            });
        }
    }

    // frequency-level relations among all modes, independent of tensor content
    for j in 0..nm {
        for p in 0..nm {
            for k in p..nm {
                let (res, combo) = best_combo(&omega, j, &[p, k]);
                if res < tol_res {
                    push_relation(j, combo, res);
                }
            }
        }
    }

    Ok(MonomialClassification {
        masters: masters.to_vec(),
        entries,
        resonances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalModel;
    use crate::tensor::{SymTensor3, SymTensor4};

    fn two_dof(omega2: f64, g: &[([usize; 3], f64)], h: &[([usize; 4], f64)]) -> ModalModel {
        ModalModel::from_modal_data(
            vec![1.0, omega2],
            SymTensor3::from_raw(2, g).unwrap(),
            SymTensor4::from_raw(2, h).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn invariant_breaking_non_resonant() {
        // w = (1, 2.5), master 1: g^2_11 x_1^2 on eq 2
        let mm = two_dof(2.5, &[([0, 0, 1], 0.5)], &[]);
        let c = classify_monomials(&mm, &[0], DEFAULT_RES_TOL).unwrap();
        let entry = c
            .entries
            .iter()
            .find(|e| e.eq == 1 && e.indices == vec![0, 0])
            .expect("g^2_11 monomial present");
        assert!(entry.invariant_breaking);
        assert_eq!(entry.tag, ResonanceTag::NonResonant);
    }

    #[test]
    fn one_two_resonance_flagged() {
        // w = (1, 2): g^2_11 x_1^2 is a resonant forcing with w_2 ~ 2 w_1
        let mm = two_dof(2.0, &[([0, 0, 1], 0.5)], &[]);
        let c = classify_monomials(&mm, &[0], DEFAULT_RES_TOL).unwrap();
        let entry = c
            .entries
            .iter()
            .find(|e| e.eq == 1 && e.indices == vec![0, 0])
            .unwrap();
        assert_eq!(entry.tag, ResonanceTag::Resonant);
        assert!(c.has_relation_between(1, 0), "1:2 relation reported");
    }

    #[test]
    fn trivial_resonance_always_flagged() {
        // x_m x_p^2 on eq m is trivially resonant for any frequencies
        let mm = two_dof(
            2.5,
            &[],
            &[([0, 0, 1, 1], 0.3), ([0, 0, 0, 0], 1.0), ([0, 0, 0, 1], 0.2)],
        );
        let c = classify_monomials(&mm, &[0], DEFAULT_RES_TOL).unwrap();
        let entry = c
            .entries
            .iter()
            .find(|e| e.eq == 0 && e.indices == vec![0, 1, 1])
            .unwrap();
        assert_eq!(entry.tag, ResonanceTag::TriviallyResonant);
        let self_cubic = c
            .entries
            .iter()
            .find(|e| e.eq == 0 && e.indices == vec![0, 0, 0])
            .unwrap();
        assert_eq!(self_cubic.tag, ResonanceTag::TriviallyResonant);
        // h^p_mmm on the slave equation is invariant-breaking
        let ib = c
            .entries
            .iter()
            .find(|e| e.eq == 1 && e.indices == vec![0, 0, 0])
            .unwrap();
        assert!(ib.invariant_breaking);
    }

    #[test]
    fn slave_relabeling_invariance() {
        // exchanging which slave carries which coupling leaves the tag
        // multiset unchanged (neither slave is resonant)
        let g = &[([0, 0, 1], 0.4), ([0, 0, 2], 0.7)];
        let mm_a = ModalModel::from_modal_data(
            vec![1.0, 3.3, 4.7],
            SymTensor3::from_raw(3, g).unwrap(),
            SymTensor4::zeros(3),
            None,
        )
        .unwrap();
        let g_swapped = &[([0, 0, 1], 0.7), ([0, 0, 2], 0.4)];
        let mm_b = ModalModel::from_modal_data(
            vec![1.0, 3.3, 4.7],
            SymTensor3::from_raw(3, g_swapped).unwrap(),
            SymTensor4::zeros(3),
            None,
        )
        .unwrap();
        let ca = classify_monomials(&mm_a, &[0], DEFAULT_RES_TOL).unwrap();
        let cb = classify_monomials(&mm_b, &[0], DEFAULT_RES_TOL).unwrap();
        let count = |c: &MonomialClassification, tag| {
            c.entries.iter().filter(|e| e.tag == tag).count()
        };
        for tag in [
            ResonanceTag::TriviallyResonant,
            ResonanceTag::Resonant,
            ResonanceTag::NonResonant,
        ] {
            assert_eq!(count(&ca, tag), count(&cb, tag));
        }
        assert_eq!(
            ca.invariant_breaking().count(),
            cb.invariant_breaking().count()
        );
    }
}
