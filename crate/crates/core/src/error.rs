use std::path::PathBuf;

use crate::network::{LinkId, NodeId};
use crate::value::FeasibilityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("link {link} references node {node} which is not in the node table")]
    DanglingNode { link: LinkId, node: NodeId },

    #[error("duplicate link id {0}")]
    DuplicateLink(LinkId),

    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),

    #[error("link {link} has non-positive length {value}")]
    NonPositiveLength { link: LinkId, value: f64 },

    #[error("link {link} has {got} attributes, expected {expected}")]
    AttributeCount {
        link: LinkId,
        expected: usize,
        got: usize,
    },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown link {0}")]
    UnknownLink(LinkId),

    #[error("node {0} has no incoming link and cannot be a destination")]
    UnreachableDestination(NodeId),

    #[error("node {0} has no outgoing link and cannot be an origin")]
    IsolatedOrigin(NodeId),

    #[error("observation {id}: {message}")]
    InvalidObservation { id: String, message: String },

    #[error("observation {id}: destination {destination} is unreachable from origin {origin}")]
    UnreachableOd {
        id: String,
        origin: NodeId,
        destination: NodeId,
    },

    #[error(
        "observation {id} has {transitions} transitions but the prism for destination \
         {destination} allows {stages}; raise T to at least {transitions}"
    )]
    OutOfPrism {
        id: String,
        destination: NodeId,
        transitions: usize,
        stages: usize,
    },

    #[error("prism for destination {destination} with T = {stages} contains no feasible path")]
    EmptyPrism { destination: NodeId, stages: usize },

    #[error("dimension mismatch: expected {expected} parameters, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("value function is infeasible: {}", .0.failure.as_deref().unwrap_or("unknown"))]
    InfeasibleValueFunction(Box<FeasibilityReport>),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("simulation aborted: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn observation(id: &str, message: impl Into<String>) -> Self {
        Error::InvalidObservation {
            id: id.to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by the value function having no valid solution.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InfeasibleValueFunction(_))
    }
}
