//! Chord-graph data: clustered task nodes plus the strongest transfer arcs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{BentoError, Result};
use crate::ict::{IctMatrix, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordNode {
    pub id: TaskId,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordArc {
    pub source: TaskId,
    pub target: TaskId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordGraph {
    pub top_fraction: f64,
    pub nodes: Vec<ChordNode>,
    /// Strongest first.
    pub arcs: Vec<ChordArc>,
}

/// `ceil(fraction * N(N-1))`, tolerant of float noise such as `0.1 * 30`.
pub fn arc_count(n: usize, top_fraction: f64) -> usize {
    let total = n * n.saturating_sub(1);
    let x = top_fraction * total as f64;
    let count = (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize;
    count.min(total)
}

pub fn chord_export(a: &IctMatrix, clusters: &ClusterAssignment, top_fraction: f64) -> Result<ChordGraph> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(BentoError::InvalidArgument(format!("top_fraction must be in (0, 1], got {top_fraction}")));
    }
    if clusters.tasks != a.tasks() {
        return Err(BentoError::Shape("cluster assignment and matrix list different tasks".into()));
    }
    let n = a.len();
    let tasks = a.tasks();
    let mut arcs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, a.get(i, j)))
        .collect();
    arcs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    arcs.truncate(arc_count(n, top_fraction));

    Ok(ChordGraph {
        top_fraction,
        nodes: tasks
            .iter()
            .zip(&clusters.labels)
            .map(|(t, &c)| ChordNode { id: t.clone(), cluster: c })
            .collect(),
        arcs: arcs
            .into_iter()
            .map(|(i, j, w)| ChordArc { source: tasks[i].clone(), target: tasks[j].clone(), weight: w })
            .collect(),
    })
}

impl ChordGraph {
    /// Fraction of arcs whose endpoints share a cluster.
    pub fn intra_cluster_fraction(&self) -> f64 {
        if self.arcs.is_empty() {
            return 0.0;
        }
        let cluster_of = |t: &TaskId| self.nodes.iter().find(|n| &n.id == t).map(|n| n.cluster);
        let intra = self.arcs.iter().filter(|a| cluster_of(&a.source) == cluster_of(&a.target)).count();
        intra as f64 / self.arcs.len() as f64
    }

    /// Graphviz DOT rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ict {\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  {} [cluster={}];", quote(n.id.as_str()), n.cluster);
        }
        for a in &self.arcs {
            let _ = writeln!(s, "  {} -> {} [weight={:?}];", quote(a.source.as_str()), quote(a.target.as_str()), a.weight);
        }
        s.push_str("}\n");
        s
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}
