use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical degeneracy in {param}[{node}, {community}]: zero denominator with positive numerator")]
    Degenerate {
        param: &'static str,
        node: usize,
        community: usize,
    },

    #[error("pair ({0}, {1}) has no positive rate term")]
    DegeneratePair(usize, usize),

    #[error("posterior violates Q = 1 on observed edge ({0}, {1})")]
    Contract(usize, usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("restart {restart}, iteration {iteration}: {source}")]
    Fit {
        restart: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
