//! Supervised linear projections for classification.
//!
//! A signal `x ∈ Rᵖ` with class label `c` is observed through `y = Φx + ε`,
//! where `Φ` is `d × p` with orthonormal rows and `ε ~ N(0, R⁻¹)`. The crate
//! designs `Φ` to maximize the Shannon mutual information `I(C;Y)` under a
//! class-conditional Gaussian-mixture prior, and provides LDA, IDA,
//! quadratic-Rényi and random projections for comparison.

pub mod classifier;
pub mod dataset;
pub mod design;
pub mod error;
pub mod experiment;
pub mod format;
pub mod linalg;
pub mod measurement;
pub mod mixture;
pub mod mmse;
pub mod objectives;
pub mod posterior;
pub mod rng;

pub use error::{ComponentId, Error, Result};
pub use measurement::MeasurementModel;
pub use mixture::{ClassGmm, GaussianComponent, SignalModel};

pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signal-model.md")]
    mod signal_model {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/mutual-information.md")]
    mod mutual_information {}
    #[doc = include_str!("../../../book/src/designers.md")]
    mod designers {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
