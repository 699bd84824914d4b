use std::io;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending file line, factor, or geometry without a debugger.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}:{line}: timestamps must be strictly increasing ({prev_ns} -> {next_ns})")]
    NonMonotone {
        file: String,
        line: usize,
        prev_ns: i64,
        next_ns: i64,
    },

    #[error("{0} stream is empty")]
    EmptyStream(&'static str),

    #[error("matrix is not skew-symmetric (largest symmetric entry {0:.3e})")]
    NotSkewSymmetric(f64),

    #[error("bearing norm deviates from 1 by {0:.3e}")]
    BadBearing(f64),

    #[error("point norm {0:.3e} is too small to form a bearing")]
    ShortRange(f64),

    #[error(
        "degenerate cloud geometry: condition number {condition:.3e}, \
         null direction [{:.4}, {:.4}, {:.4}]",
        null_direction[0],
        null_direction[1],
        null_direction[2]
    )]
    DegenerateGeometry {
        condition: f64,
        null_direction: [f64; 3],
    },

    #[error("no static consensus: {inliers} inliers, {required} required")]
    NoConsensus { inliers: usize, required: usize },

    #[error("measurement at t={t_ns} precedes the window start {window_start_ns}")]
    Expired { t_ns: i64, window_start_ns: i64 },

    #[error("non-finite cost from factor {0}")]
    Diverged(String),

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    TomlParse {
        context: String,
        #[source]
        source: toml::de::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
