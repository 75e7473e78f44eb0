//! A miniature optimizing compiler used as a self-contained testbed: a
//! straight-line IR, six instrumented passes, seeded defects and a
//! scenario generator.

pub mod driver;
pub mod instrument;
pub mod ir;
pub mod passes;
pub mod scenario;

pub use driver::TestbedDriver;
pub use scenario::{generate_scenarios, named_scenario, BugKind, SeededBug};
