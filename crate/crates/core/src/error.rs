use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in node {node} at row {row}")]
    NonFinite { node: usize, row: usize },

    #[error("map is not strictly increasing (sum of alpha*w is {0})")]
    NotMonotone(f64),

    #[error("inversion failed{}: target {target}: {detail}", node_suffix(*.node))]
    Inversion {
        node: Option<usize>,
        target: f64,
        detail: String,
    },

    #[error("near-singular inverse{}: f'({y}) = {slope:e}", node_suffix(*.node))]
    NearSingular {
        node: Option<usize>,
        y: f64,
        slope: f64,
    },

    #[error("VAR coefficients are unstable (companion spectral radius {0})")]
    Unstable(f64),

    #[error("normal equations are rank deficient (pivot {pivot:e} at column {column}); use a positive ridge")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("segment too short: {0}")]
    TooShort(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn node_suffix(node: Option<usize>) -> String {
    match node {
        Some(n) => format!(" at node {n}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a node index to inversion errors raised by a single map.
    pub fn at_node(self, node: usize) -> Self {
        match self {
            Error::Inversion { target, detail, .. } => Error::Inversion {
                node: Some(node),
                target,
                detail,
            },
            Error::NearSingular { y, slope, .. } => Error::NearSingular {
                node: Some(node),
                y,
                slope,
            },
            other => other,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Inversion { .. }
            | Error::NearSingular { .. }
            | Error::NotMonotone(_)
            | Error::Unstable(_)
            | Error::RankDeficient { .. } => true,
            Error::Training { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
