use std::fmt;

/// Every failure the pipeline can report. `code()` gives a stable machine-readable tag.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point {k:?} is not on the grid of step {step}")]
    OffGrid { k: Vec<f64>, step: f64 },
    #[error("spectral gap closed at k = {k:?}: eigenvalues {lower} and {upper}")]
    GapClosed { k: Vec<f64>, lower: f64, upper: f64 },
    #[error("matrix is not unitary (defect {defect:.3e})")]
    NonUnitary { defect: f64 },
    #[error("matrix is not symmetric (defect {defect:.3e})")]
    NotSymmetric { defect: f64 },
    #[error("frames span different subspaces (defect {defect:.3e})")]
    SpanMismatch { defect: f64 },
    #[error("obstruction unitary at {k:?} is not symmetric (defect {defect:.3e}); time-reversal data is inconsistent")]
    SymmetryDefect { k: Vec<f64>, defect: f64 },
    #[error("grid too coarse: determinant phase jumps by {increment:.3} at loop segment {segment}")]
    GridTooCoarse { segment: usize, increment: f64 },
    #[error("boundary map has nonzero degree {degree}")]
    NonzeroDegree { degree: i64 },
    #[error("no stereographic base point found (best clearance {clearance:.3e})")]
    NoStereographicPoint { clearance: f64 },
    #[error("chart seam `{identity}` mismatch {defect:.3e}")]
    ChartSeamMismatch { identity: String, defect: f64 },
    #[error("extension check failed: {what} = {value:.3e}")]
    ExtensionCheck { what: String, value: f64 },
    #[error("boundary relation {relation} violated at k = {k:?} (residual {residual:.3e})")]
    BoundaryRelationViolated { relation: String, k: Vec<f64>, residual: f64 },
    #[error("unitary has an eigenphase within {tol:e} of pi")]
    EigenphaseNearPi { tol: f64 },
    #[error("frames too far apart for a midpoint: distance {dist:.3e} >= {limit:.3e}{}", at_k(.k))]
    TooFarApart { dist: f64, limit: f64, k: Option<Vec<f64>> },
    #[error("smoothing could not reach sup distance {target:.3e} (best {best:.3e} at cutoff {cutoff})")]
    EpsilonInfeasible { target: f64, best: f64, cutoff: usize },
    #[error("smoothed frame lost rank at k = {k:?} (smallest singular value {sigma:.3e})")]
    ProjectionRankLoss { k: Vec<f64>, sigma: f64 },
    #[error("invalid model configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("model fails assumption checks: {0}")]
    AssumptionsFailed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_k(k: &Option<Vec<f64>>) -> String {
    match k {
        Some(k) => format!(" at k = {k:?}"),
        None => String::new(),
    }
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::OffGrid { .. } => "OffGrid",
            Error::GapClosed { .. } => "GapClosed",
            Error::NonUnitary { .. } => "NonUnitary",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::SpanMismatch { .. } => "SpanMismatch",
            Error::SymmetryDefect { .. } => "SymmetryDefect",
            Error::GridTooCoarse { .. } => "GridTooCoarse",
            Error::NonzeroDegree { .. } => "NonzeroDegree",
            Error::NoStereographicPoint { .. } => "NoStereographicPoint",
            Error::ChartSeamMismatch { .. } => "ChartSeamMismatch",
            Error::ExtensionCheck { .. } => "ExtensionCheck",
            Error::BoundaryRelationViolated { .. } => "BoundaryRelationViolated",
            Error::EigenphaseNearPi { .. } => "EigenphaseNearPi",
            Error::TooFarApart { .. } => "TooFarApart",
            Error::EpsilonInfeasible { .. } => "EpsilonInfeasible",
            Error::ProjectionRankLoss { .. } => "ProjectionRankLoss",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::AssumptionsFailed(_) => "AssumptionsFailed",
            Error::Unsupported(_) => "Unsupported",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Display helper for relation names in diagnostics.
pub(crate) struct Relation<'a> {
    pub s: u8,
    pub lambda: &'a [i64],
}

impl fmt::Display for Relation<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lam: Vec<String> = self.lambda.iter().map(|x| x.to_string()).collect();
        if self.s == 0 {
            write!(f, "F(k+({0})) = tau({0}) F(k)", lam.join(","))
        } else {
            write!(f, "F(-k+({0})) = tau({0}) Theta F(k)", lam.join(","))
        }
    }
}
