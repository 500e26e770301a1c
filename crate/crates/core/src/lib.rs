//! Exact Takagi–Sugeno fuzzy modeling, LMI-based PDC synthesis and
//! closed-loop verification for a flexible-joint robot arm.

pub mod cli;
pub mod config;
pub mod fuzzy;
pub mod numerics;
pub mod plant;
pub mod sim;
pub mod synth;
