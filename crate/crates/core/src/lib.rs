//! Scale-invariant 3D keypoints with a binary Laplacian sign and four discrete
//! orientation states, plus feature-set registration by kernel-weighted
//! coherent point drift.
//!
//! The pipeline is:
//!
//! 1. [`scale_space::ScaleSpace::build`] blurs a [`ScalarVolume`] into a Gaussian pyramid.
//! 2. [`detect::detect_keypoints`] finds extrema of the scale-normalized Laplacian.
//! 3. [`frame`] estimates an orientation frame per keypoint and enumerates its states.
//! 4. [`descriptor`] computes one sign-aware 64-bin descriptor per state.
//! 5. [`matching`] pairs features and votes for an initial similarity transform.
//! 6. [`cpd`] refines the transform with EM using the geometric [`kernels`].
//!
//! [`io`], [`phantom`] and [`eval`] provide file formats, synthetic data and
//! accuracy metrics.

pub mod config;
pub mod cpd;
pub mod descriptor;
pub mod detect;
pub mod error;
pub mod eval;
pub mod frame;
pub mod io;
pub mod kernels;
pub mod matching;
pub mod phantom;
pub mod scale_space;
pub mod transform;
pub mod volume;

pub use config::Config;
pub use cpd::{register, RegistrationConfig, RegistrationResult, Variant};
pub use descriptor::{extract_features, Descriptor, ExtractionConfig, Feature};
pub use detect::Keypoint;
pub use error::{Error, Result};
pub use frame::{Frame, OrientationEstimator};
pub use kernels::KernelParams;
pub use matching::{HoughResult, HoughThresholds, Match};
pub use scale_space::ScaleSpace;
pub use transform::{Geometry, SimilarityTransform};
pub use volume::ScalarVolume;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
