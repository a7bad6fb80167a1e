//! Session-prefix graphs for the gated graph network.
//!
//! Nodes are the distinct items of the prefix in first-occurrence order.
//! An edge u→v exists iff v was clicked directly after u somewhere in the
//! prefix; repeated transitions count once. `a_out` row u spreads u's unit
//! outgoing mass over its successors, `a_in` row v spreads v's unit incoming
//! mass over its predecessors, so each row sums to 1 or 0.

use crate::numeric::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SessionGraph {
    /// Distinct item indices, first-occurrence order.
    pub nodes: Vec<usize>,
    /// n×n; row v holds 1/indeg(v) at each predecessor u.
    pub a_in: Tensor,
    /// n×n; row u holds 1/outdeg(u) at each successor v.
    pub a_out: Tensor,
    /// Prefix position → node position.
    pub alias: Vec<usize>,
    /// Node position of the final prefix item.
    pub last_node: usize,
}

impl SessionGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

pub fn build_graph(prefix: &[usize]) -> SessionGraph {
    assert!(!prefix.is_empty(), "session prefix must be non-empty");

    let mut nodes: Vec<usize> = Vec::new();
    let mut alias = Vec::with_capacity(prefix.len());
    for &item in prefix {
        let pos = match nodes.iter().position(|&n| n == item) {
            Some(p) => p,
            None => {
                nodes.push(item);
                nodes.len() - 1
            }
        };
        alias.push(pos);
    }

    let n = nodes.len();
    let mut edges = vec![false; n * n];
    for w in alias.windows(2) {
        edges[w[0] * n + w[1]] = true;
    }

    let mut a_out = Tensor::zeros(&[n, n]);
    let mut a_in = Tensor::zeros(&[n, n]);
    for u in 0..n {
        let outdeg = (0..n).filter(|&v| edges[u * n + v]).count();
        for v in 0..n {
            if edges[u * n + v] {
                a_out.data_mut()[u * n + v] = 1.0 / outdeg as f64;
            }
        }
    }
    for v in 0..n {
        let indeg = (0..n).filter(|&u| edges[u * n + v]).count();
        for u in 0..n {
            if edges[u * n + v] {
                a_in.data_mut()[v * n + u] = 1.0 / indeg as f64;
            }
        }
    }

    let last_node = *alias.last().expect("non-empty prefix");
    SessionGraph {
        nodes,
        a_in,
        a_out,
        alias,
        last_node,
    }
}
