//! Age structure of sessile populations from length-frequency surveys.
//!
//! The crate turns per-animal length records into age-class estimates and
//! cohort chains:
//!
//! 1. [`ingest`] groups records into (stratum, reef, year) samples and
//!    gates each sample on its spat and live counts.
//! 2. [`mixfit`] fits a log-normal to spat lengths and selects a Gaussian
//!    mixture for live lengths by BIC.
//! 3. [`age`] fits a mixture to each stratum-year, turns its components
//!    into length cutoffs, assigns ages to reef components and merges
//!    components that share an age.
//! 4. [`cohort`] links components across consecutive years into cohorts.
//! 5. [`pipeline`], [`output`] and [`figures`] run all of the above from a
//!    CSV file and write tables, a manifest and SVG figures.
//!
//! [`synth`] generates populations with known cohorts, plus reference
//! computations used by the tests.

pub mod age;
pub mod cohort;
pub mod config;
pub mod figures;
pub mod ingest;
pub mod mixfit;
pub mod output;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use age::{AgedComponent, PoolingWeights, RiverModel};
pub use cohort::{CohortChain, ComponentTable};
pub use ingest::{SampleKey, ShellObservation, Stage, YearRange};
pub use mixfit::{FitConfig, MixtureFit, VarianceFamily};
pub use pipeline::{run_pipeline, PipelineConfig, RunManifest};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gating.md")]
    mod gating {}
    #[doc = include_str!("../../../book/src/mixtures.md")]
    mod mixtures {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/ages.md")]
    mod ages {}
    #[doc = include_str!("../../../book/src/cohorts.md")]
    mod cohorts {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
