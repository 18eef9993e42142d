use thiserror::Error;

/// Errors produced while building networks, propagating relevance or running audits.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input has length {got}, expected {expected}")]
    InputShape { expected: usize, got: usize },

    #[error("input contains a non-finite value at index {index}")]
    NonFiniteInput { index: usize },

    #[error("class index {class} out of range for {outputs} outputs")]
    ClassIndex { class: usize, outputs: usize },

    #[error("layer index {layer} out of range {min}..={max}")]
    LayerIndex { layer: usize, min: usize, max: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("search direction is orthogonal to the weight vector (|w.v| = {dot:e})")]
    OrthogonalDirection { dot: f64 },

    #[error("neuron carries zero relevance; the root would coincide with the layer input")]
    ZeroRelevance,

    #[error("degenerate denominator {value:e} for neuron {neuron}")]
    DegenerateDenominator { neuron: usize, value: f64 },

    #[error("no admissible root at layer {layer}: {reason}")]
    RootUnavailable { layer: usize, reason: String },

    #[error("sampler exhausted: accepted {accepted} of {requested} inputs after {draws} draws")]
    SamplerExhausted {
        accepted: usize,
        requested: usize,
        draws: usize,
    },

    #[error("evaluation point lies within {margin:e} of a region boundary")]
    BoundaryProximity { margin: f64 },

    #[error("target relevance is unreachable: {0}")]
    UnreachableTarget(String),

    #[error("cannot parse rule `{0}` (expected lrp0, eps:<f>, w2, zplus, gamma:<f> or ab:1:0)")]
    RuleParse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
