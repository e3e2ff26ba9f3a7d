//! Small networks for tests, benches and experiments, plus the bundled
//! Sioux Falls network.

use std::collections::BTreeSet;

use super::{io, Link, Network, Node, NodeId, CAPACITY, LENGTH};

const SIOUX_FALLS_NET: &str = include_str!("../../data/SiouxFalls_net.tntp");
const SIOUX_FALLS_NODE: &str = include_str!("../../data/SiouxFalls_node.tntp");

/// Sioux Falls with `Length` (free-flow time) and `Capacity` divided by its maximum.
pub fn sioux_falls() -> Network {
    let mut net = io::parse_tntp(SIOUX_FALLS_NET, Some(SIOUX_FALLS_NODE), "SiouxFalls_net.tntp".as_ref())
        .expect("bundled network is valid");
    net.normalize_by_max(CAPACITY).expect("capacity column present");
    net
}

/// Builds a network with a single `Length` attribute from `(tail, head, length)`
/// triples; link ids are assigned from 1 in order and nodes are inferred.
pub fn line(edges: &[(NodeId, NodeId, f64)]) -> Network {
    let ids: BTreeSet<NodeId> = edges.iter().flat_map(|&(t, h, _)| [t, h]).collect();
    let nodes = ids
        .into_iter()
        .map(|id| Node {
            id,
            x: id as f64,
            y: 0.0,
        })
        .collect();
    let links = edges
        .iter()
        .enumerate()
        .map(|(i, &(tail, head, len))| Link {
            id: i as u32 + 1,
            tail,
            head,
            attrs: vec![len],
        })
        .collect();
    Network::new(nodes, links, vec![LENGTH.to_string()]).expect("valid edge list")
}

/// Links 1→2, 2→3, 3→1 of unit length.
pub fn triangle() -> Network {
    line(&[(1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0)])
}

/// Grid node id at `(row, col)`, numbered row-major from 1.
pub fn grid_node(cols: usize, row: usize, col: usize) -> NodeId {
    (row * cols + col + 1) as NodeId
}

/// Bidirectional `rows × cols` grid with a `Length` attribute given per directed link.
pub fn grid(rows: usize, cols: usize, mut length: impl FnMut(NodeId, NodeId) -> f64) -> Network {
    grid_with(rows, cols, &[LENGTH], |t, h| vec![length(t, h)])
}

/// Bidirectional grid with arbitrary attributes. Links are numbered from 1,
/// visiting nodes row-major and emitting the right, down, left and up
/// neighbours in that order.
pub fn grid_with(
    rows: usize,
    cols: usize,
    names: &[&str],
    attrs: impl FnMut(NodeId, NodeId) -> Vec<f64>,
) -> Network {
    build_grid(rows, cols, names, true, attrs)
}

/// Acyclic grid where links only point right or down.
pub fn directed_grid(
    rows: usize,
    cols: usize,
    names: &[&str],
    attrs: impl FnMut(NodeId, NodeId) -> Vec<f64>,
) -> Network {
    build_grid(rows, cols, names, false, attrs)
}

fn build_grid(
    rows: usize,
    cols: usize,
    names: &[&str],
    both_ways: bool,
    mut attrs: impl FnMut(NodeId, NodeId) -> Vec<f64>,
) -> Network {
    let mut nodes = Vec::with_capacity(rows * cols);
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: grid_node(cols, r, c),
                x: c as f64,
                y: r as f64,
            });
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let here = grid_node(cols, r, c);
            let mut nbrs = Vec::with_capacity(4);
            if c + 1 < cols {
                nbrs.push(grid_node(cols, r, c + 1));
            }
            if r + 1 < rows {
                nbrs.push(grid_node(cols, r + 1, c));
            }
            if both_ways {
                if c > 0 {
                    nbrs.push(grid_node(cols, r, c - 1));
                }
                if r > 0 {
                    nbrs.push(grid_node(cols, r - 1, c));
                }
            }
            for n in nbrs {
                links.push(Link {
                    id: links.len() as u32 + 1,
                    tail: here,
                    head: n,
                    attrs: attrs(here, n),
                });
            }
        }
    }
    Network::new(nodes, links, names.iter().map(|s| s.to_string()).collect()).expect("valid grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_link_count() {
        let net = grid(3, 4, |_, _| 1.0);
        // 2 directions × (horizontal 3·3 + vertical 2·4)
        assert_eq!(net.links().len(), 2 * (9 + 8));
        let dag = directed_grid(3, 4, &[LENGTH], |_, _| vec![1.0]);
        assert_eq!(dag.links().len(), 17);
    }

    #[test]
    fn sioux_falls_capacity_is_normalized() {
        let net = sioux_falls();
        assert_eq!(net.links().len(), 76);
        let col = net.attr_index(CAPACITY).unwrap();
        let max = net.links().iter().map(|l| l.attrs[col]).fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }
}
