//! coarse-lab: computational verification of sublinearly bilipschitz geometry
//! on Gromov-hyperbolic model spaces.
//!
//! The crate is organized around a handful of model spaces (half-plane,
//! hyperboloid, regular trees, log-models of Heintze groups) on which
//! everything is computable with explicit formulas, plus the generic
//! machinery that the theory attaches to them: four-point hyperbolicity
//! scans, visual kernels and chain quasimetrics on the boundary,
//! cross-ratios, sublinearly perturbed quasigeodesics and their tracking
//! radii, sublinearly quasimoebius boundary estimates, and the dimension
//! invariants that separate Heintze groups up to sublinear bilipschitz
//! equivalence.
//!
//! All sampling is seeded and all reductions are order-stable, so any
//! operation re-run with the same inputs produces byte-identical reports.

pub mod boundary;
pub mod coarse_maps;
pub mod heintze;
pub mod hyperbolicity;
pub mod matrix;
pub mod numerics;
pub mod rng;
pub mod spaces;
pub mod sublinear;
