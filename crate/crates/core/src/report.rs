use serde::Serialize;

/// One checked inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl Inequality {
    /// Passes when `lhs ≤ rhs + tol`.
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: lhs <= rhs + tol,
        }
    }

    /// Passes when `lhs < rhs`.
    pub fn strict(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: lhs < rhs,
        }
    }

    /// Passes when `lhs ≤ rhs + rel · max(|rhs|, 1)`.
    pub fn relative(name: impl Into<String>, lhs: f64, rhs: f64, rel: f64) -> Self {
        Self::new(name, lhs, rhs, rel * rhs.abs().max(1.0))
    }
}

/// Two values that should agree to a relative tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identity {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relative_error: f64,
    pub pass: bool,
}

impl Identity {
    /// `scale` is the size the error is measured against, typically the sum
    /// of absolute values of the terms.
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, scale: f64, tol: f64) -> Self {
        let err = (lhs - rhs).abs();
        let scale = scale.abs().max(lhs.abs()).max(rhs.abs());
        let relative_error = if scale > 0.0 { err / scale } else { 0.0 };
        Identity {
            name: name.into(),
            lhs,
            rhs,
            relative_error,
            pass: relative_error <= tol,
        }
    }
}
