//! Access-point placement for cell-free massive MIMO by vector quantization.
//!
//! Users are described by a Gaussian mixture density over a 2-D region. Three
//! quantizer designs turn that density (or a training sample drawn from it)
//! into AP positions:
//!
//! * [`vq`]: the Lloyd algorithm under squared-error distortion,
//! * [`tsvq`]: tree-structured VQ grown by binary codepoint splitting,
//! * [`pdfvq`]: a density-optimized design built from per-cluster allocation,
//!   eigen-transform coding and Lloyd-Max scalar quantizers.
//!
//! Placements can be refined by gradient ascent on the sum rate or on the
//! rates of the worst users ([`gradient`]), and are scored by Monte Carlo
//! zero-forcing uplink rates ([`metrics`]). [`examples1d`] holds the
//! one-dimensional study of colocated versus distributed placements, and
//! [`experiment`] wires everything into end-to-end experiment runs.

pub mod channel;
pub mod error;
pub mod examples1d;
pub mod experiment;
pub mod gradient;
pub mod metrics;
pub mod pdfvq;
pub mod rng;
pub mod scenario;
pub mod tsvq;
pub mod vq;

pub use channel::{ChannelMatrix, ChannelParams};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Method, Refinement, VqMethod};
pub use gradient::{AscentConfig, Objective};
pub use metrics::{LikelyRateMode, RateReport};
pub use pdfvq::{AllocationPlan, ClusterSpectrum, IntegerPlan, ScalarCodebook};
pub use scenario::{Covariance, GmmComponent, Point2, Region, UserDensity};
pub use tsvq::TsvqTree;
pub use vq::{PartitionResult, Placement};
