//! Backbone curvature: closed forms per reduction method, the perturbation
//! value of a cubic oscillator and the numerical fit from a computed curve.
//!
//! The amplitude-frequency relation is w_NL = w (1 + Gamma a^2); Gamma > 0 is
//! hardening, Gamma < 0 softening.

use anyhow::{bail, Result};

use crate::dynamics::Curve;
use crate::model::ModalModel;
use crate::rom::ReducedModel;

/// Closed-form family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMethod {
    NormalForm,
    Ice,
    QmMd,
    QmSmd,
}

impl GammaMethod {
    pub fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nf" => GammaMethod::NormalForm,
            "ice" => GammaMethod::Ice,
            "qm-md" => GammaMethod::QmMd,
            "qm-smd" => GammaMethod::QmSmd,
            other => bail!("unknown backbone-curvature method '{other}'"),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GammaMethod::NormalForm => "nf",
            GammaMethod::Ice => "ice",
            GammaMethod::QmMd => "qm-md",
            GammaMethod::QmSmd => "qm-smd",
        }
    }
}

/// Closed-form curvature split into the slave-independent part and the
/// per-slave summed term, which is where the methods differ.
#[derive(Debug, Clone)]
pub struct GammaBreakdown {
    pub total: f64,
    /// Self-quadratic and bare-cubic contribution, common to all methods.
    pub common: f64,
    /// Summed slave contribution.
    pub slave_sum: f64,
}

/// Evaluate the closed-form backbone curvature of a single-master reduction.
pub fn gamma_closed_form(
    mm: &ModalModel,
    master: usize,
    method: GammaMethod,
) -> Result<GammaBreakdown> {
    let nm = mm.n_modes();
    if master >= nm {
        bail!("master index out of range");
    }
    let w = mm.omega[master];
    let gm = mm.quad.get([master, master, master]);
    let h = mm.cubic.get([master, master, master, master]);
    let common = -5.0 / (12.0 * w * w) * (gm / w).powi(2) + 3.0 / (8.0 * w * w) * h;
    let mut slave_sum = 0.0;
    for s in 0..nm {
        if s == master {
            continue;
        }
        let ws = mm.omega[s];
        if method == GammaMethod::NormalForm && (ws - 2.0 * w).abs() < 1e-3 * w {
            bail!(
                "second-order internal resonance: slave mode {} sits at twice the master \
                 frequency; the curvature diverges",
                s + 1
            );
        }
        let gs = mm.quad.get([s, master, master]);
        let factor = match method {
            GammaMethod::NormalForm => 1.0 + 4.0 * w * w / (3.0 * (ws * ws - 4.0 * w * w)),
            GammaMethod::Ice => 1.0,
            GammaMethod::QmMd => {
                1.0 + w * w * (4.0 * ws * ws - 3.0 * w * w)
                    / (3.0 * (ws * ws - w * w).powi(2))
            }
            GammaMethod::QmSmd => 1.0 + 4.0 * w * w / (3.0 * ws * ws),
        };
        slave_sum += -3.0 / (8.0 * w * w) * 2.0 * (gs / ws).powi(2) * factor;
    }
    Ok(GammaBreakdown {
        total: common + slave_sum,
        common,
        slave_sum,
    })
}

/// Perturbation curvature of a single-master cubic oscillator
/// x'' + w^2 x + c2 x^2 + c2v xdot^2 + c3 x^3 + c3v x xdot^2 = 0.
pub fn gamma_of_oscillator(w: f64, c2: f64, c2v: f64, c3: f64, c3v: f64) -> f64 {
    let w2 = w * w;
    -5.0 * c2 * c2 / (12.0 * w2 * w2) - 5.0 * c2 * c2v / (12.0 * w2) - c2v * c2v / 6.0
        + 3.0 * c3 / (8.0 * w2)
        + c3v / 8.0
}

/// Curvature of one equation of a reduced model (other masters frozen).
pub fn gamma_of_reduced_model(rm: &ReducedModel, eq: usize) -> Result<f64> {
    if eq >= rm.m() {
        bail!("equation indexout of range");
    }
    let m = rm.m();
    let pick = |dexp_eq: u8, vexp_eq: u8| -> f64 {
        let mut dexp = vec![0u8; m];
        dexp[eq] = dexp_eq;
        let mut vexp = vec![0u8; m];
        vexp[eq] = vexp_eq;
        rm.coeff(eq, &dexp, &vexp)
    };
    Ok(gamma_of_oscillator(
        rm.omega[eq],
        pick(2, 0),
        pick(0, 2),
        pick(3, 0),
        pick(1, 2),
    ))
}

/// Least-squares fit of w(a) = w0 (1 + Gamma a^2) on the curve window a <= a_fit.
pub fn gamma_from_backbone(curve: &Curve, a_fit: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.amplitude[0] > 0.0 && p.amplitude[0] <= a_fit)
        .map(|p| (p.amplitude[0], p.omega))
        .collect();
    if pts.len() < 3 {
        bail!(
            "insufficient points below the fit amplitude {a_fit}: {} available",
            pts.len()
        );
    }
    // linear least squares on w = c0 + c1 a^2
    let n = pts.len() as f64;
    let su: f64 = pts.iter().map(|(a, _)| a * a).sum();
    let suu: f64 = pts.iter().map(|(a, _)| a.powi(4)).sum();
    let sw: f64 = pts.iter().map(|(_, w)| w).sum();
    let suw: f64 = pts.iter().map(|(a, w)| a * a * w).sum();
    let det = n * suu - su * su;
    if det.abs() < 1e-300 {
        bail!("degenerate amplitude window for the curvature fit");
    }
    let c0 = (suu * sw - su * suw) / det;
    let c1 = (n * suw - su * sw) / det;
    if c0 <= 0.0 {
        bail!("fitted linear frequency is not positive");
    }
    Ok(c1 / c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CurvePoint, PointTag};
    use crate::model::ModalModel;
    use crate::tensor::{SymTensor3, SymTensor4};
    use approx::assert_relative_eq;

    fn mm(omega2: f64, gm: f64, gs: f64, h: f64) -> ModalModel {
        let mut g = vec![];
        if gm != 0.0 {
            g.push(([0usize, 0, 0], gm));
        }
        if gs != 0.0 {
            g.push(([0usize, 0, 1], gs));
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
    }

    #[test]
    fn all_methods_coincide_without_quadratics() {
        let model = mm(2.5, 0.0, 0.0, 1.6);
        let expect = 3.0 * 1.6 / 8.0;
        for method in [
            GammaMethod::NormalForm,
            GammaMethod::Ice,
            GammaMethod::QmMd,
            GammaMethod::QmSmd,
        ] {
            let g = gamma_closed_form(&model, 0, method).unwrap();
            assert_relative_eq!(g.total, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn nf_reference_value() {
        // w_m = 1, w_s = 3, g^s_mm = 1, everything else zero:
        // Gamma = (3/8) * (-2 (1/3)^2 (1 + 4/(3*5))) = -19/180
        let model = mm(3.0, 0.0, 1.0, 0.0);
        let g = gamma_closed_form(&model, 0, GammaMethod::NormalForm).unwrap();
        assert_relative_eq!(g.total, -19.0 / 180.0, epsilon = 1e-14);
    }

    #[test]
    fn summed_term_ratio_is_correction_factor() {
        for rho in [2.3, 3.0, 4.0, 7.7, 12.0] {
            let model = mm(rho, 0.4, 0.8, 1.0);
            let nf = gamma_closed_form(&model, 0, GammaMethod::NormalForm).unwrap();
            let ice = gamma_closed_form(&model, 0, GammaMethod::Ice).unwrap();
            let r = crate::rom::condensation::correction_factor(rho).unwrap();
            assert_relative_eq!(nf.slave_sum / ice.slave_sum, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_to_one_guard_trips() {
        let model = mm(2.0, 0.0, 0.5, 0.0);
        assert!(gamma_closed_form(&model, 0, GammaMethod::NormalForm).is_err());
        // ICE has no divergence there
        assert!(gamma_closed_form(&model, 0, GammaMethod::Ice).is_ok());
    }

    #[test]
    fn backbone_fit_recovers_curvature() {
        let w0 = 1.3;
        let gamma = 0.21;
        let points: Vec<CurvePoint> = (1..40)
            .map(|i| {
                let a = 1e-3 * i as f64;
                CurvePoint {
                    omega: w0 * (1.0 + gamma * a * a),
                    amplitude: vec![a],
                    stable: true,
                    tag: PointTag::None,
                }
            })
            .collect();
        let curve = Curve {
            method: "test".into(),
            masters: vec![0],
            points,
        };
        let got = gamma_from_backbone(&curve, 0.04).unwrap();
        assert_relative_eq!(got, gamma, epsilon = 1e-10);
        // flat line gives zero
        let flat: Vec<CurvePoint> = (1..10)
            .map(|i| CurvePoint {
                omega: w0,
                amplitude: vec![1e-3 * i as f64],
                stable: true,
                tag: PointTag::None,
            })
            .collect();
        let curve = Curve {
            method: "test".into(),
            masters: vec![0],
            points: flat,
        };
        assert_relative_eq!(gamma_from_backbone(&curve, 1.0).unwrap(), 0.0);
    }
}
