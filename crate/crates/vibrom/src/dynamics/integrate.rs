//! Fixed-step explicit integration of second-order systems.

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};

use crate::model::{ModalModel, PhysicalModel};
use crate::rom::ReducedModel;

/// Second-order system X'' = a(t, X, X').
pub trait SecondOrderSystem {
    fn dim(&self) -> usize;
    fn acceleration(&self, t: f64, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
}

/// Physical model with a prefactored mass matrix.
pub struct PhysicalSystem<'a> {
    model: &'a PhysicalModel,
    mass_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> PhysicalSystem<'a> {
    pub fn new(model: &'a PhysicalModel) -> Result<Self> {
        let mass_chol = model
            .mass
            .clone()
            .cholesky()
            .ok_or_else(|| anyhow!("mass matrix is not positive definite"))?;
        Ok(Self { model, mass_chol })
    }
}

impl SecondOrderSystem for PhysicalSystem<'_> {
    fn dim(&self) -> usize {
        self.model.n()
    }

    fn acceleration(&self, _t: f64, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let f = self
            .model
            .internal_force(x)
            .expect("dimension checked at construction");
        self.mass_chol.solve(&(-f))
    }
}

impl SecondOrderSystem for ModalModel {
    fn dim(&self) -> usize {
        self.n_modes()
    }

    fn acceleration(&self, _t: f64, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut acc = -self
            .nonlinear_force(x)
            .expect("dimension checked at construction");
        for p in 0..self.n_modes() {
            acc[p] -= self.omega[p] * self.omega[p] * x[p];
            if let Some(xi) = &self.damping {
                acc[p] -= 2.0 * xi[p] * self.omega[p] * v[p];
            }
        }
        acc
    }
}

impl SecondOrderSystem for ReducedModel {
    fn dim(&self) -> usize {
        self.m()
    }

    fn acceleration(&self, t: f64, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        ReducedModel::acceleration(self, t, x, v)
    }
}

/// Trajectory of a fixed-step integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

/// Classical fourth-order Runge-Kutta on the first-order form.
pub fn integrate<S: SecondOrderSystem>(
    sys: &S,
    x0: DVector<f64>,
    v0: DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        bail!("time step must be positive");
    }
    if x0.len() != sys.dim() || v0.len() != sys.dim() {
        bail!("initial state dimension mismatch");
    }
    let steps = (t_end / dt).ceil() as usize;
    let mut t = 0.0;
    let mut x = x0;
    let mut v = v0;
    let mut out = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
    };
    out.t.push(t);
    out.x.push(x.clone());
    out.v.push(v.clone());
    for _ in 0..steps {
        let k1x = v.clone();
        let k1v = sys.acceleration(t, &x, &v);
        let k2x = &v + &k1v * (dt / 2.0);
        let k2v = sys.acceleration(
            t + dt / 2.0,
            &(&x + &k1x * (dt / 2.0)),
            &(&v + &k1v * (dt / 2.0)),
        );
        let k3x = &v + &k2v * (dt / 2.0);
        let k3v = sys.acceleration(
            t + dt / 2.0,
            &(&x + &k2x * (dt / 2.0)),
            &(&v + &k2v * (dt / 2.0)),
        );
        let k4x = &v + &k3v * dt;
        let k4v = sys.acceleration(t + dt, &(&x + &k3x * dt), &(&v + &k3v * dt));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
        t += dt;
        if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
            bail!("integration blew up to a non-finite state at t = {t:.6}");
        }
        out.t.push(t);
        out.x.push(x.clone());
        out.v.push(v.clone());
    }
    Ok(out)
}

/// Monodromy matrix of a reduced model along a periodic orbit given by a
/// sampler of (x, v) over one period.
pub fn monodromy<F>(rm: &ReducedModel, period: f64, steps: usize, orbit: F) -> DMatrix<f64>
where
    F: Fn(f64) -> (DVector<f64>, DVector<f64>),
{
    let m = rm.m();
    let dim = 2 * m;
    let mut fund = DMatrix::<f64>::identity(dim, dim);
    let dt = period / steps as f64;
    // variational field: d/dt [dx; dv] = [dv; da/dx dx + da/dv dv]
    let deriv = |t: f64, cols: &DMatrix<f64>| -> DMatrix<f64> {
        let (x, v) = orbit(t);
        let (dax, dav) = rm.acceleration_jacobian(&x, &v);
        let mut out = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..m {
                out[(r, c)] = cols[(m + r, c)];
            }
            let dx = cols.view((0, c), (m, 1)).into_owned();
            let dv = cols.view((m, c), (m, 1)).into_owned();
            let acc = &dax * dx + &dav * dv;
            for r in 0..m {
                out[(m + r, c)] = acc[r];
            }
        }
        out
    };
    let mut t = 0.0;
    for _ in 0..steps {
        let k1 = deriv(t, &fund);
        let k2 = deriv(t + dt / 2.0, &(&fund + &k1 * (dt / 2.0)));
        let k3 = deriv(t + dt / 2.0, &(&fund + &k2 * (dt / 2.0)));
        let k4 = deriv(t + dt, &(&fund + &k3 * dt));
        fund += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t += dt;
    }
    fund
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::RomMethod;
    use approx::assert_relative_eq;

    #[test]
    fn linear_oscillator_period() {
        let rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        let tr = integrate(
            &rm,
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
            2.0 * std::f64::consts::PI,
            1e-3,
        )
        .unwrap();
        let last = tr.x.last().unwrap();
        assert_relative_eq!(last[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn conservative_duffing_energy_drift() {
        let mut rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        rm.add_term(0, 1.0, vec![3], vec![0]);
        let a = 0.5;
        let period = 2.0 * std::f64::consts::PI; // close enough for stepping
        let dt = period / 1000.0;
        let tr = integrate(
            &rm,
            DVector::from_vec(vec![a]),
            DVector::from_vec(vec![0.0]),
            100.0 * period,
            dt,
        )
        .unwrap();
        let energy = |x: f64, v: f64| 0.5 * v * v + 0.5 * x * x + 0.25 * x.powi(4);
        let e0 = energy(a, 0.0);
        let mut worst: f64 = 0.0;
        for (x, v) in tr.x.iter().zip(&tr.v) {
            worst = worst.max((energy(x[0], v[0]) - e0).abs() / e0);
        }
        assert!(worst < 1e-6, "energy drift {worst:e}");
    }

    #[test]
    fn blow_up_reported_with_time() {
        // negative-stiffness cubic escapes in finite time from a large state
        let mut rm = ReducedModel::linear(RomMethod::NormalForm, vec![0], vec![1.0]);
        rm.add_term(0, -10.0, vec![3], vec![0]);
        let err = integrate(
            &rm,
            DVector::from_vec(vec![5.0]),
            DVector::from_vec(vec![0.0]),
            50.0,
            1e-2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("t ="), "{err}");
    }
}
