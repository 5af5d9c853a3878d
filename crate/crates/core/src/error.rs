use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the toolkit.
///
/// Variants fall into two families: input/shape problems (the caller asked
/// for something ill-formed) and numerical guards (the physics preconditions
/// failed, e.g. the Fermi level is not in a gap). The latter carry a stable
/// guard name, see [`Error::guard`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("gap hypothesis violated: no spectral gap in [{lo}, {hi}] (closest eigenvalues {offending:?})")]
    GapViolated {
        lo: f64,
        hi: f64,
        offending: Vec<f64>,
    },

    #[error("Fermi level touches spectrum: eigenvalue {eigenvalue} within {tolerance:e} of E_g = {e_g}")]
    FermiTouchesSpectrum {
        e_g: f64,
        eigenvalue: f64,
        tolerance: f64,
    },

    #[error("spin spectrum islands not separated: min island gap {min_gap:.3e} below threshold {threshold:.3e}")]
    IslandsNotSeparated { min_gap: f64, threshold: f64 },

    #[error("no exponential decay detected (fitted rate {eta})")]
    NoDecay { eta: f64 },

    #[error("transfer matrix undefined at k = {k} (condition number {cond:.3e})")]
    TransferUndefined { k: f64, cond: f64 },

    #[error("not hyperbolic: E_g not in a gap (k = {k}, min ||mu|-1| = {margin:.3e})")]
    NotHyperbolic { k: f64, margin: f64 },

    #[error("symplectic split violated: {contracting} contracting eigenvalues, expected {expected}")]
    SymplecticSplit { contracting: usize, expected: usize },

    #[error("U undefined at k = {k} (condition number {cond:.3e})")]
    UUndefined { k: f64, cond: f64 },

    #[error("insufficient k-resolution: phase step {step:.3} at k = {k} after refinement")]
    InsufficientResolution { k: f64, step: f64 },

    #[error("winding unreliable: phase defect {defect:.3e}")]
    WindingUnreliable { defect: f64 },

    #[error("marker not converged: raw value {raw}")]
    MarkerNotConverged { raw: f64 },

    #[error("oracle unreliable: {0}")]
    OracleUnreliable(String),

    #[error("density support [{lo}, {hi}] not inside the gap ({gap_lo}, {gap_hi})")]
    SupportOutsideGap {
        lo: f64,
        hi: f64,
        gap_lo: f64,
        gap_hi: f64,
    },

    #[error("increase N2: edge cutoff leakage {leakage:.3e}")]
    EdgeLeakage { leakage: f64 },

    #[error("budget exceeded: estimated cost {cost} above budget {budget} (use --force-budget)")]
    BudgetExceeded { cost: u128, budget: u128 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Name of the numerical guard that fired, or `None` for input errors.
    pub fn guard(&self) -> Option<&'static str> {
        Some(match self {
            Error::GapViolated { .. } => "gap hypothesis violated",
            Error::FermiTouchesSpectrum { .. } => "Fermi level touches spectrum",
            Error::IslandsNotSeparated { .. } => "islands not separated",
            Error::NoDecay { .. } => "no exponential decay detected",
            Error::TransferUndefined { .. } => "transfer matrix undefined",
            Error::NotHyperbolic { .. } => "not hyperbolic",
            Error::SymplecticSplit { .. } => "symplectic split violated",
            Error::UUndefined { .. } => "U undefined",
            Error::InsufficientResolution { .. } => "insufficient k-resolution",
            Error::WindingUnreliable { .. } => "winding unreliable",
            Error::MarkerNotConverged { .. } => "marker not converged",
            Error::OracleUnreliable(_) => "oracle unreliable",
            Error::SupportOutsideGap { .. } => "support outside gap",
            Error::EdgeLeakage { .. } => "increase N2",
            Error::Linalg(_) => "linear algebra failure",
            _ => return None,
        })
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
