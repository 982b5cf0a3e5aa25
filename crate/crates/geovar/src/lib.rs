//! Semivariogram-guided contrastive learning for geolocalization.
//!
//! The pipeline: estimate how embedding dissimilarity grows with
//! great-circle distance ([`semivariogram`]), fit a spherical variogram
//! model to that curve, use the fitted curve as the expected-dissimilarity
//! reference to spot hard and false negatives ([`reweighting`]), train a
//! dual encoder (feature projection head + random-Fourier-feature location
//! encoder, [`encoders`]) with a reweighted InfoNCE loss ([`training`]),
//! and score retrieval accuracy at distance thresholds ([`evalretrieval`]).
//!
//! [`dataset`] supplies the file formats and a spatial Gaussian-process
//! generator whose known parameters serve as ground truth for the fitting
//! pipeline.

pub(crate) mod bytes;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evalretrieval;
pub mod geodesy;
pub mod reweighting;
pub mod semivariogram;
pub mod training;

pub use dataset::{generate_synthetic, Dataset, GeoTaggedEmbedding, LatLonBounds, SyntheticSpec};
pub use encoders::{DualEncoder, EncoderDims};
pub use error::Error;
pub use evalretrieval::{build_gallery, evaluate, predict, EvalReport, GpsGallery};
pub use geodesy::{equal_earth_project, haversine_km, GeoCoord, ProjectedPoint, EARTH_RADIUS_KM};
pub use reweighting::{DeltaScale, NegativeClass, ReweightConfig};
pub use semivariogram::{
    cosine_distance, estimate_empirical, evaluate_spherical, fit_spherical, EmpiricalVariogram,
    FitOutcome, SphericalModel, VariogramBin,
};
pub use training::{train, NegativeQueue, TrainConfig, TrainState};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
