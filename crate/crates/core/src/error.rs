use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid-spec: {0}")]
    InvalidSpec(String),
    #[error("singular-diagonal: kernel requested at zero displacement")]
    SingularDiagonal,
    #[error("cutoff-too-small: cutoff {cutoff} is below 4*mass = {required}")]
    CutoffTooSmall { cutoff: usize, required: f64 },
    #[error("bad-range: {0}")]
    BadRange(String),
    #[error("invalid-params: {0}")]
    InvalidParams(String),
    #[error("coincident-vortices: vortices {i} and {j} are {distance:e} apart")]
    CoincidentVortices { i: usize, j: usize, distance: f64 },
    #[error("non-finite-energy: {0}")]
    NonFiniteEnergy(String),
    #[error("insufficient-samples: {per_bin:.2} effective samples per bin (need 10)")]
    InsufficientSamples { per_bin: f64 },
    #[error("not-mean-zero: grid mean is {mean:e}")]
    NotMeanZero { mean: f64 },
    #[error("N-too-large: deterministic quadrature supports N <= {max}, got {n}")]
    NTooLarge { n: usize, max: usize },
    #[error("invalid-density: {0}")]
    InvalidDensity(String),
    #[error("noise-dominated: signal {signal:e} is below twice the noise floor {floor:e} at N = {n}")]
    NoiseDominated { n: usize, signal: f64, floor: f64 },
}
