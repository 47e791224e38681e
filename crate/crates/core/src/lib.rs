//! Incremental single-hidden-layer networks built node by node under a
//! compact angle constraint.
//!
//! ```no_run
//! use geonet::{constructor, data, Variant, TrainConfig};
//!
//! let ds = data::gen_function(2400, 0, data::Sampling::Uniform).unwrap();
//! let (train, test) = data::split(&ds, 5.0 / 6.0, 0).unwrap();
//! let cfg = TrainConfig::new(Variant::LightGcnetII, "150:10:200".parse().unwrap());
//! let out = constructor::train(&cfg, &train, Some(&test)).unwrap();
//! println!("{} nodes, rmse {}", out.net.len(), out.trace.final_rmse());
//! ```

pub mod constructor;
pub mod data;
mod error;
pub mod harness;
pub mod linalg;
pub mod model;

pub use constructor::{
    train, Fallback, PoolRule, ScopeSchedule, TraceRecord, TrainConfig, TrainOutcome, TrainStatus,
    TrainTrace, Variant,
};
pub use data::{Dataset, NormStats};
pub use error::{Error, Result};
pub use harness::{BenchReport, ExperimentSpec, ReportFormat};
pub use linalg::Matrix;
pub use model::{ActivationKind, GeoNet, HiddenNode};
