//! Directed interaction graph read off the coefficient tensor.
//!
//! Node `j` influences node `i` when some lag couples them with magnitude
//! above a threshold: `max_p |a^(p)_{ij}| > threshold`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::VarCoefficients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub destination: usize,
    /// Largest absolute coefficient over lags.
    pub strength: f64,
}

/// Edges sorted by source, then destination.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
}

pub const EDGE_CSV_HEADER: &str = "source,destination,strength";

impl EdgeList {
    fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|e| (e.source, e.destination))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(EDGE_CSV_HEADER);
        out.push('\n');
        for e in &self.edges {
            let _ = writeln!(out, "{},{},{}", e.source, e.destination, e.strength);
        }
        out
    }

    /// Parses an edge CSV. Node indices must be below `n_nodes`.
    pub fn from_csv(text: &str, n_nodes: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == EDGE_CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{EDGE_CSV_HEADER}`"),
                })
            }
        }
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let node = |s: &str, name: &str| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| err(format!("bad {name} `{s}`")))?;
                if v >= n_nodes {
                    return Err(err(format!("{name} {v} out of range for {n_nodes} nodes")));
                }
                Ok(v)
            };
            let source = node(fields[0], "source")?;
            let destination = node(fields[1], "destination")?;
            let strength: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad strength `{}`", fields[2])))?;
            edges.push(Edge {
                source,
                destination,
                strength,
            });
        }
        edges.sort_by_key(|e| (e.source, e.destination));
        Ok(Self { n_nodes, edges })
    }
}

pub fn extract_topology(var: &VarCoefficients, threshold: f64) -> Result<EdgeList> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    let n = var.n_nodes();
    let mut edges = Vec::new();
    for source in 0..n {
        for destination in 0..n {
            let strength = (0..var.order())
                .map(|lag| var.get(lag, destination, source).abs())
                .fold(0.0_f64, f64::max);
            if strength > threshold {
                edges.push(Edge {
                    source,
                    destination,
                    strength,
                });
            }
        }
    }
    Ok(EdgeList { n_nodes: n, edges })
}

/// Precision and recall of `estimated` against `truth`, ignoring strengths.
///
/// An empty estimate has precision 1 only when the truth is empty too; an
/// empty truth gives recall 1.
pub fn compare_topology(estimated: &EdgeList, truth: &EdgeList) -> (f64, f64) {
    let est = estimated.pairs();
    let tru = truth.pairs();
    let hits = est.intersection(&tru).count() as f64;
    let precision = match (est.is_empty(), tru.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hits / est.len() as f64,
    };
    let recall = if tru.is_empty() {
        1.0
    } else {
        hits / tru.len() as f64
    };
    (precision, recall)
}
