//! Bit-exact, cycle-accurate model of a weight-stationary systolic array whose
//! PEs run reduced-precision fused multiply-add pipelines.
//!
//! * [`fp`]: formats, decoding, the chain accumulator grid and final rounding.
//! * [`datapath`]: the three PE pipeline organizations.
//! * [`engine`]: the cycle-by-cycle array model.
//! * [`reference`]: exact big-integer oracle.
//! * [`workloads`], [`cost`], [`report`]: CNN layer costing.
//! * [`verify`]: randomized equivalence runs.

pub mod cost;
pub mod datapath;
pub mod engine;
pub mod fp;
pub mod io;
pub mod matrix;
pub mod reference;
pub mod report;
pub mod verify;
pub mod workloads;

pub use cost::{CostParams, Crossover};
pub use datapath::{ChainValue, Diagnostics, Mode};
pub use engine::{ArrayConfig, EngineError, PipelineEvent, SimResult, Stage, SystolicArray};
pub use fp::{FormatKind, FpError, FpFormat};
pub use matrix::Matrix;
pub use report::{run_network, NetworkReport};
pub use workloads::{GemmDims, LayerKind, LayerShape, Network};
