use thiserror::Error;

use crate::ratings::{MovieId, PersonId};

/// Failures while reading, validating or generating ratings data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}vote {raw} is not on the declared scale", line_prefix(*.line))]
    OutOfScale { raw: f64, line: Option<u64> },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{}person {person} already voted on movie {movie}", line_prefix(*.line))]
    DuplicateVote {
        person: PersonId,
        movie: MovieId,
        line: Option<u64>,
    },
    #[error("person {0} appears twice")]
    DuplicatePerson(PersonId),
    #[error("movie {0} has votes but no metadata entry")]
    UnknownMovie(MovieId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("store file: {0}")]
    Store(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    pub(crate) fn at_line(self, at: u64) -> Self {
        match self {
            DataError::OutOfScale { raw, .. } => DataError::OutOfScale {
                raw,
                line: Some(at),
            },
            DataError::DuplicateVote { person, movie, .. } => DataError::DuplicateVote {
                person,
                movie,
                line: Some(at),
            },
            other => other,
        }
    }
}

fn line_prefix(line: Option<u64>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Too few common movies for an affinity to be defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("only {n_common} common movies, at least {min_common} required")]
pub struct Insufficient {
    pub n_common: usize,
    pub min_common: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("antigen has {votes} votes, at least {min_common} required")]
    IneligibleAntigen { votes: usize, min_common: usize },
    #[error("no person shares enough movies with the antigen")]
    NoEligibleCandidates,
    #[error("invalid AIS parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need {needed} persons with at least {min_votes} votes, found {found}")]
    InsufficientUsers {
        needed: usize,
        found: usize,
        min_votes: usize,
    },
    #[error("requested {requested} pairs but only {available} eligible pairs exist")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}
