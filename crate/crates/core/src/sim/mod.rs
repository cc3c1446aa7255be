//! Labeled spectrum simulator.
//!
//! A spectrum is a linear combination of metabolite FIDs, shaped by a
//! Lorentzian (and for the 26-parameter task, Gaussian) decay, phased,
//! transformed to the frequency domain, cropped to 0.2–4.2 ppm at 512
//! points, and finally offset by a smooth baseline plus white noise.

mod basis;
mod dataset;
mod synth;
mod variant;

pub use basis::{baseline_library, build_basis_set, ppm_axis, BasisSet, GridSpec};
pub use dataset::{
    generate_dataset, generate_dataset_on, read_dataset, write_dataset, Dataset, Split, FORMAT_VERSION,
    GENERATOR_VERSION,
};
pub use synth::{
    sample_parameters, sample_parameters_with, sample_rng, synthesize, Noise, ParameterVector, Spectrum,
    Synthesizer, DEFAULT_LIBRARY_SIZE,
};
pub use variant::{
    Bounds, DefaultBounds, ParamRole, SchemaEntry, TaskVariant, VariantName, BASELINES_PER_SPECTRUM,
};

/// Points per output spectrum.
pub const OUTPUT_LEN: usize = 512;
pub const PPM_LOW: f64 = 0.2;
pub const PPM_HIGH: f64 = 4.2;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid sampling bounds for {0}")]
    InvalidBounds(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("basis: {0}")]
    Basis(String),
    #[error("variant/basis mismatch: {0}")]
    Mismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
