//! Netlist readers and writers.
//!
//! Three front ends produce the same [`CircuitGraph`]: ISCAS-style
//! `.bench`, a structural subset of BLIF, and a task-graph JSON dialect.
//! One back end (`emit_bench`) writes `.bench` text back out; emitted text
//! re-parses to an isomorphic graph.

mod bench;
mod blif;
mod taskgraph;

pub use bench::{emit_bench, isomorphic, parse_bench};
pub use blif::parse_blif;
pub use taskgraph::{parse_taskgraph_doc, parse_taskgraph_json, TaskGraphDoc, TaskNode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unsupported construct: {msg}")]
    Unsupported { line: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
    #[error("cannot emit `.bench`: node `{0}` has kind LUT, which has no `.bench` spelling")]
    LutNotRepresentable(String),
}

impl ParseError {
    pub(crate) fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn unsupported(line: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Unsupported {
            line,
            msg: msg.into(),
        }
    }
}

/// Input formats accepted by the front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Bench,
    Blif,
    TaskGraphJson,
}

impl Format {
    /// Guesses the format from a file name.
    pub fn from_path(path: &str) -> Option<Format> {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".bench") {
            Some(Format::Bench)
        } else if lower.ends_with(".blif") {
            Some(Format::Blif)
        } else if lower.ends_with(".json") {
            Some(Format::TaskGraphJson)
        } else {
            None
        }
    }
}

/// Parses `text` in the given format into a validated graph.
pub fn parse(text: &str, format: Format, name: &str) -> Result<crate::CircuitGraph, ParseError> {
    match format {
        Format::Bench => parse_bench(text, name),
        Format::Blif => parse_blif(text),
        Format::TaskGraphJson => parse_taskgraph_json(text),
    }
}
