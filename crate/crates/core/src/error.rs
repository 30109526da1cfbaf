use thiserror::Error;

use crate::lattice::AtomId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unusable lattice: arity {arity}, depth {depth} (need arity >= 2, 1 <= depth <= {max_depth})")]
    InvalidLattice {
        arity: usize,
        depth: usize,
        max_depth: usize,
    },

    #[error("atom ({}, {}) is not part of the lattice", .0.depth, .0.index)]
    InvalidAtom(AtomId),

    #[error("atom ({}, {}) is a leaf and has no children", .0.depth, .0.index)]
    LeafAtom(AtomId),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid function: {0}")]
    InvalidFunction(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("symbol is not mean-zero at atom ({}, {}): residual {residual:e} exceeds {tolerance:e}", .atom.depth, .atom.index)]
    MeanZeroViolation {
        atom: AtomId,
        residual: f64,
        tolerance: f64,
    },

    #[error("negative coefficient {value} on edge into atom ({}, {})", .atom.depth, .atom.index)]
    NegativeCoefficient { atom: AtomId, value: f64 },

    #[error("function has a negative value {value} at leaf {leaf}")]
    NegativeFunction { leaf: usize, value: f64 },

    #[error("root atoms ({}, {}) and ({}, {}) overlap", .0.depth, .0.index, .1.depth, .1.index)]
    OverlappingRoots(AtomId, AtomId),

    #[error("input is not normalized: {0}")]
    Unnormalized(String),

    #[error("grid oracle supports at most {max} leaves, lattice has {leaves}")]
    TooManyLeaves { leaves: usize, max: usize },

    #[error("no admissible input: {0}")]
    NoAdmissibleInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance field `{field}`: {message}")]
    InstanceField { field: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
