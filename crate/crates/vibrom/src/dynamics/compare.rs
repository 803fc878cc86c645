//! Geometric comparison of reduction manifolds.

use anyhow::{bail, Result};
use nalgebra::DVector;

use crate::rom::ManifoldMap;

/// Per-ring discrepancy between two maps sharing a master set.
#[derive(Debug, Clone)]
pub struct DistanceReport {
    pub rings: Vec<f64>,
    /// Max slave discrepancy over full velocity circles.
    pub full_circle: Vec<f64>,
    /// Max slave discrepancy on the zero-velocity slice.
    pub zero_velocity: Vec<f64>,
}

/// Compare two manifold maps on master amplitude rings.
///
/// Discrepancies are measured on the slave displacement coordinates, both
/// over full velocity circles (x, y) = (a cos t, a w sin t) and on the
/// zero-velocity slice spanned by the displacements alone.
pub fn compare_manifolds(
    map_a: &ManifoldMap,
    map_b: &ManifoldMap,
    omega_master: &[f64],
    rings: &[f64],
) -> Result<DistanceReport> {
    if map_a.masters != map_b.masters {
        bail!("manifold maps have different master sets");
    }
    if map_a.n_full != map_b.n_full {
        bail!("manifold maps have different full-space dimensions");
    }
    let m = map_a.m();
    if omega_master.len() != m {
        bail!("master frequency count does not match the master set");
    }
    let slave_rows: Vec<usize> = (0..map_a.n_full)
        .filter(|r| !map_a.masters.contains(r))
        .collect();

    let phases = if m == 1 { 48 } else { 12 };
    let mut full_circle = Vec::with_capacity(rings.len());
    let mut zero_velocity = Vec::with_capacity(rings.len());
    for &a in rings {
        // full velocity circles
        let mut worst: f64 = 0.0;
        let mut idx = vec![0usize; m];
        loop {
            let mut x = DVector::zeros(m);
            let mut y = DVector::zeros(m);
            for r in 0..m {
                let th = 2.0 * std::f64::consts::PI * idx[r] as f64 / phases as f64;
                x[r] = a * th.cos();
                y[r] = a * omega_master[r] * th.sin();
            }
            let (xa, _) = map_a.eval(&x, &y);
            let (xb, _) = map_b.eval(&x, &y);
            for &s in &slave_rows {
                worst = worst.max((xa[s] - xb[s]).abs());
            }
            if !advance(&mut idx, phases) {
                break;
            }
        }
        full_circle.push(worst);

        // zero-velocity slice
        let mut worst: f64 = 0.0;
        let npts = if m == 1 { 41 } else { 11 };
        let mut idx = vec![0usize; m];
        loop {
            let mut x = DVector::zeros(m);
            let y = DVector::zeros(m);
            for r in 0..m {
                x[r] = a * (2.0 * idx[r] as f64 / (npts - 1) as f64 - 1.0);
            }
            let (xa, _) = map_a.eval(&x, &y);
            let (xb, _) = map_b.eval(&x, &y);
            for &s in &slave_rows {
                worst = worst.max((xa[s] - xb[s]).abs());
            }
            if !advance(&mut idx, npts) {
                break;
            }
        }
        zero_velocity.push(worst);
    }
    Ok(DistanceReport {
        rings: rings.to_vec(),
        full_circle,
        zero_velocity,
    })
}

fn advance(idx: &mut [usize], base: usize) -> bool {
    for slot in idx.iter_mut() {
        *slot += 1;
        if *slot == base {
            *slot = 0;
        } else {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::{MapTerm, RomMethod};
    use nalgebra::DMatrix;

    fn quad_map(a: f64, b: f64) -> ManifoldMap {
        ManifoldMap {
            method: RomMethod::Graph,
            order: 2,
            masters: vec![0],
            n_full: 2,
            linear: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            disp_terms: vec![
                MapTerm {
                    disp_exps: vec![2],
                    vel_exps: vec![0],
                    coeff: DVector::from_vec(vec![0.0, a]),
                },
                MapTerm {
                    disp_exps: vec![0],
                    vel_exps: vec![2],
                    coeff: DVector::from_vec(vec![0.0, b]),
                },
            ],
            vel_terms: vec![],
        }
    }

    #[test]
    fn identical_maps_have_zero_distance() {
        let a = quad_map(-0.15, 0.07);
        let rep = compare_manifolds(&a, &a, &[1.0], &[0.1, 0.2]).unwrap();
        assert!(rep.full_circle.iter().all(|&d| d == 0.0));
        assert!(rep.zero_velocity.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn velocity_independent_map_agrees_on_slice_only() {
        // same displacement curvature, no velocity dependence in map b
        let a = quad_map(-0.15, 0.07);
        let b = quad_map(-0.15, 0.0);
        let rep = compare_manifolds(&a, &b, &[1.0], &[0.1]).unwrap();
        assert!(rep.zero_velocity[0] < 1e-15);
        assert!(rep.full_circle[0] > 1e-4);
    }
}
