use std::fmt;

/// Crate-wide error type.
///
/// Variants map onto the failure modes of the public operations; the CLI
/// translates `PrecisionLoss` to exit code 2 and everything else to 1.
#[derive(Debug)]
pub enum Error {
    /// A spec string (rate spec, system file, config file) failed to parse.
    Parse(String),
    /// A precondition on an argument or model was violated.
    Domain(String),
    /// Rates that must be pairwise distinct are equal or nearly so.
    Distinctness(String),
    /// A requested series diverges.
    Divergence(String),
    /// A query cannot be decided from the available description
    /// (tabulated rate without a tail descriptor).
    Undecidable(String),
    /// An alternating sum lost too many digits to cancellation; the result
    /// would be noise rather than a value.
    PrecisionLoss(String),
    /// Too few data points for the requested fit.
    InsufficientData(String),
    /// A conditioned sample came out empty.
    EmptySample(String),
    /// Empirical and predicted curves share no support.
    DisjointSupport(String),
    /// The operation requires regularly varying feedback.
    RegularVariation(String),
    /// Degenerate statistical input (zero variance).
    Degenerate(String),
    /// Family combination outside the supported case analysis.
    Unsupported(String),
    /// An extra assumption of the asymptotic result is violated.
    Assumption(String),
    /// Two sampled explosion times coincide to within floating resolution.
    DegenerateTie(String),
    /// Unknown experiment name.
    UnknownExperiment(String),
    /// Bad experiment configuration (unknown key, unparsable value).
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Distinctness(m) => write!(f, "distinctness error: {m}"),
            Error::Divergence(m) => write!(f, "divergence error: {m}"),
            Error::Undecidable(m) => write!(f, "undecidable: {m}"),
            Error::PrecisionLoss(m) => write!(f, "precision loss: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::EmptySample(m) => write!(f, "empty sample: {m}"),
            Error::DisjointSupport(m) => write!(f, "disjoint support: {m}"),
            Error::RegularVariation(m) => write!(f, "regular variation required: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
            Error::Assumption(m) => write!(f, "assumption violated: {m}"),
            Error::DegenerateTie(m) => write!(f, "degenerate tie: {m}"),
            Error::UnknownExperiment(m) => write!(f, "unknown experiment: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// True for errors caused by floating cancellation rather than bad input.
    pub fn is_precision_loss(&self) -> bool {
        matches!(self, Error::PrecisionLoss(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
