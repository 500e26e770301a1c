//! PDC synthesis: LMI construction, the feasibility solver, gain extraction
//! and independent certificate verification.

pub mod certificate;
pub mod lmi;
pub mod pipeline;
pub mod solver;

pub use certificate::*;
pub use lmi::*;
pub use pipeline::*;
pub use solver::*;
