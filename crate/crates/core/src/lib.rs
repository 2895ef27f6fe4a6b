//! Hardware-aware neural architecture search for analog in-memory-computing
//! (IMC) accelerators.
//!
//! The search explores a block-structured CNN space (VGG, pool-free VGG and
//! residual blocks with a searched kernel count per block), proposes
//! candidates with a Tree-structured Parzen Estimator, and scores each
//! candidate with `accuracy^n`, optionally divided by the latency or energy
//! predicted by an analytical memristive-crossbar cost model.
//!
//! The pipeline for one trial is:
//!
//! ```text
//! tpe::suggest -> ir::expand -> imc::estimate_network -> eval (accuracy) -> fitness -> log
//! ```
//!
//! # Example
//!
//! ```
//! use imc_nas::{ir, imc, space::{ArchGenome, InputShape}};
//!
//! let genome: ArchGenome = "MVGG/16,VGG/16,RES/16".parse().unwrap();
//! let net = ir::expand(&genome, InputShape::new(1, 28, 28), &ir::HeadSpec::new(24)).unwrap();
//! let cost = imc::estimate_network(&net, &imc::HardwareConfig::default()).unwrap();
//! assert!(cost.latency_ms > 0.0 && cost.energy_mj > 0.0);
//! ```

pub mod driver;
pub mod error;
pub mod eval;
pub mod fitness;
pub mod imc;
pub mod ir;
pub mod space;
pub mod tpe;

pub use error::{Error, Result};
