use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("subdomain has no images")]
    EmptySubdomain,
    #[error("target histogram for channel {channel} has zero mass")]
    DegenerateTarget { channel: &'static str },
    #[error("need at least {needed} images, got {got}")]
    TooFewImages { needed: usize, got: usize },
    #[error("cluster count {k} outside [{min}, {max}]")]
    BadK { k: usize, min: usize, max: usize },
    #[error("k-means could not produce {k} non-empty clusters")]
    EmptyClusterUnrecoverable { k: usize },
    #[error("image {index} is the only member of its cluster")]
    SingletonCluster { index: usize },
    #[error("partition has a single cluster")]
    SingleCluster,
    #[error("label map has no valid pixels")]
    EmptyLabel,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("every pixel of the label map is ignored")]
    AllIgnored,
    #[error("iteration {iter} outside [0, {max_iter}]")]
    IterOutOfRange { iter: u64, max_iter: u64 },
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("EMA momentum {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad scene spec: {0}")]
    BadSpec(String),
    #[error("invalid value for {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
}
