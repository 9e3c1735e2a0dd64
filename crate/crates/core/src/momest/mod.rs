//! Sampling oracle and clean-moment estimation under additive noise.

pub mod cumulants;
pub mod estimate;
pub mod noise;
pub mod sampling;

pub use cumulants::{cumulants_to_moments, moments_to_cumulants};
pub use estimate::{
    estimate_clean_moments, sample_size_for, CascadeMode, EstimatorConfig, MomentEstimate, Oracle, SampleCount,
};
pub use noise::NoiseSpec;
pub use sampling::{draw_labeled_samples, empirical_raw_moment, LabeledSampleBatch};
