//! Reduced-order models for geometrically nonlinear vibratory systems.
//!
//! The library covers the pipeline from semi-discrete models with quadratic
//! and cubic stiffness to validated reduced dynamics:
//!
//! * `model`: physical and modal equations of motion, tensor symmetry checks;
//! * `zoo`: desk-scale analytical model generators;
//! * `classify`: resonance classification of coupling monomials;
//! * `step`: non-intrusive identification of modal tensors from a force
//!   evaluator;
//! * `parametrise`: generic order-k invariant-manifold parametrisation of
//!   polynomial vector fields (graph and normal-form styles);
//! * `rom`: closed-form third-order reduced models (graph, normal form,
//!   direct normal form, implicit condensation, quadratic manifold);
//! * `dynamics`: time integration, harmonic-balance continuation of
//!   backbones and forced responses, backbone-curvature evaluation and
//!   manifold comparison;
//! * `io`: JSON and CSV serialisation of models, reduced models and curves.

pub mod classify;
pub mod io;
pub mod model;
pub mod poly;
pub mod rom;
pub mod step;
pub mod tensor;
pub mod zoo;

pub mod dynamics;
pub mod parametrise;

pub use model::{assemble_modal, ModalModel, PhysicalModel};
