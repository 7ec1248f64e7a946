use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("total dimension {0} exceeds the cap of {1}")]
    DimensionOverflow(usize, usize),
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("operator is not Hermitian: deviation {0:.3e}")]
    NotHermitian(f64),
    #[error("operator is not a projector: deviation {0:.3e}")]
    NotProjector(f64),
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("state is not normalized: |norm - 1| = {0:.3e}")]
    NotNormalized(f64),
    #[error("invalid site set: {0}")]
    InvalidSiteSet(String),
    #[error("empty region")]
    EmptyRegion,
    #[error("statements are not time-orderable: {0}")]
    NotTimeOrderable(String),
    #[error("unknown statement label `{0}`")]
    UnknownStatement(String),
    #[error("structural hypothesis violated: {0}")]
    StructuralViolation(String),
    #[error("expression over {0} leaves exceeds the expansion cap of {1}")]
    ExpansionCap(usize, usize),
    #[error("conditioning on a null statement (measure {0:.3e})")]
    NullConditioning(f64),
    #[error("records are not pairwise spacelike: {0}")]
    NotSpacelike(String),
    #[error("generator count {0} exceeds the cap of {1}")]
    GeneratorCap(usize, usize),
    #[error("element does not belong to this algebra")]
    ForeignElement,
    #[error("degenerate spectrum: smallest eigenvalue gap {0:.3e}")]
    DegenerateSpectrum(f64),
    #[error("initial state is not a product state: Schmidt residual {0:.3e} at cut {1}")]
    NotProductState(f64, usize),
    #[error("invalid probability weights: {0}")]
    InvalidWeights(String),
    #[error("map is not a refinement: {0}")]
    NotRefinement(String),
    #[error("separateness violated: generator `{0}` touches system sites {1:?}")]
    NotSeparate(String, Vec<usize>),
    #[error("projection-valued measure is invalid: {0}")]
    InvalidPvm(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
