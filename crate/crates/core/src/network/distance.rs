use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::{NodeId, StateGraph, StateId, LENGTH};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Steps from every state to the absorbing state of a destination.
    ToDestination,
    /// Steps from the origin state of a node to every state.
    FromOrigin,
}

/// Minimum number of transitions between a fixed anchor state and every state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepDistanceMap {
    anchor: StateId,
    direction: Direction,
    steps: Vec<u32>,
}

impl StepDistanceMap {
    pub const UNREACHABLE: u32 = u32::MAX;

    pub fn anchor(&self) -> StateId {
        self.anchor
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Step count, or `None` when unreachable.
    pub fn get(&self, k: StateId) -> Option<usize> {
        let s = self.steps[k];
        (s != Self::UNREACHABLE).then_some(s as usize)
    }

    pub fn is_reachable(&self, k: StateId) -> bool {
        self.steps[k] != Self::UNREACHABLE
    }

    pub fn raw(&self) -> &[u32] {
        &self.steps
    }
}

/// Breadth-first step counts in the unit-weight state graph.
///
/// `node` names the destination for [`Direction::ToDestination`] and the origin
/// for [`Direction::FromOrigin`]; the corresponding dummy state must exist.
pub fn min_steps(graph: &StateGraph, node: NodeId, direction: Direction) -> Result<StepDistanceMap> {
    let anchor = match direction {
        Direction::ToDestination => graph.dest_state(node),
        Direction::FromOrigin => graph.origin_state(node),
    }
    .ok_or(Error::UnknownNode(node))?;

    let mut steps = vec![StepDistanceMap::UNREACHABLE; graph.n_states()];
    let mut queue = VecDeque::new();
    steps[anchor] = 0;
    queue.push_back(anchor);
    while let Some(s) = queue.pop_front() {
        let next = steps[s] + 1;
        let mut visit = |n: StateId| {
            if steps[n] == StepDistanceMap::UNREACHABLE {
                steps[n] = next;
                queue.push_back(n);
            }
        };
        match direction {
            Direction::ToDestination => {
                for &e in graph.incoming(s) {
                    visit(graph.source(e));
                }
            }
            Direction::FromOrigin => {
                for e in graph.actions(s) {
                    visit(graph.target(e));
                }
            }
        }
    }
    Ok(StepDistanceMap {
        anchor,
        direction,
        steps,
    })
}

/// Shortest `Length` from every state to a destination.
///
/// For a link state the distance is measured from its head node, so the
/// state's own length is excluded and `SP(k) = min_a [Length(a) + SP(a)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthDistanceMap {
    destination: NodeId,
    dist: Vec<f64>,
}

impl LengthDistanceMap {
    pub fn destination(&self) -> NodeId {
        self.destination
    }

    /// Distance, `f64::INFINITY` when the destination is unreachable.
    pub fn get(&self, k: StateId) -> f64 {
        self.dist[k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }
}

#[derive(PartialEq)]
struct Entry(f64, StateId);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed so that `BinaryHeap` pops the smallest distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

pub fn length_distances(graph: &StateGraph, destination: NodeId) -> Result<LengthDistanceMap> {
    let col = graph
        .network()
        .attr_index(LENGTH)
        .ok_or_else(|| Error::UnknownAttribute(LENGTH.to_string()))?;
    let anchor = graph
        .dest_state(destination)
        .ok_or(Error::UnknownNode(destination))?;

    let mut dist = vec![f64::INFINITY; graph.n_states()];
    let mut heap = BinaryHeap::new();
    dist[anchor] = 0.0;
    heap.push(Entry(0.0, anchor));
    while let Some(Entry(d, s)) = heap.pop() {
        if d > dist[s] {
            continue;
        }
        for &e in graph.incoming(s) {
            let k = graph.source(e);
            let cand = d + graph.target_attr(e, col);
            if cand < dist[k] {
                dist[k] = cand;
                heap.push(Entry(cand, k));
            }
        }
    }
    Ok(LengthDistanceMap { destination, dist })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_state_graph, synthetic};

    #[test]
    fn line_network_steps() {
        let net = synthetic::line(&[(1, 2, 1.0), (2, 3, 1.0)]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let d = min_steps(&g, 3, Direction::ToDestination).unwrap();
        assert_eq!(d.get(g.origin_state(1).unwrap()), Some(3));
        assert_eq!(d.get(g.dest_state(3).unwrap()), Some(0));
        assert_eq!(d.get(g.link_state(2).unwrap()), Some(1));

        let o = min_steps(&g, 1, Direction::FromOrigin).unwrap();
        assert_eq!(o.get(g.dest_state(3).unwrap()), Some(3));
    }

    #[test]
    fn grid_corner_steps_are_manhattan_plus_one() {
        let net = synthetic::grid(5, 5, |_, _| 1.0);
        let g = build_state_graph(&net, &[25], &[1]).unwrap();
        let d = min_steps(&g, 25, Direction::ToDestination).unwrap();
        // origin dummy: 8 link transitions + absorbing
        assert_eq!(d.get(g.origin_state(1).unwrap()), Some(9));
        // a link entering node 2 = (0,1): remaining Manhattan distance 7, plus absorbing
        let k = g
            .network()
            .links()
            .iter()
            .find(|l| l.tail == 1 && l.head == 2)
            .unwrap()
            .id;
        assert_eq!(d.get(g.link_state(k).unwrap()), Some(8));
    }

    #[test]
    fn unreachable_is_marked() {
        let net = synthetic::line(&[(1, 2, 1.0), (3, 2, 1.0), (2, 4, 1.0)]);
        let g = build_state_graph(&net, &[2], &[]).unwrap();
        let d = min_steps(&g, 2, Direction::ToDestination).unwrap();
        assert_eq!(d.get(g.link_state(3).unwrap()), None);
        let sp = length_distances(&g, 2).unwrap();
        assert!(sp.get(g.link_state(3).unwrap()).is_infinite());
    }

    #[test]
    fn length_picks_shorter_route() {
        // 1 -> 2 -> 4 (10) and 1 -> 3 -> 4 (12)
        let net = synthetic::line(&[(1, 2, 4.0), (2, 4, 6.0), (1, 3, 5.0), (3, 4, 7.0)]);
        let g = build_state_graph(&net, &[4], &[1]).unwrap();
        let sp = length_distances(&g, 4).unwrap();
        assert_eq!(sp.get(g.origin_state(1).unwrap()), 10.0);
        assert_eq!(sp.get(g.link_state(2).unwrap()), 0.0);
        assert_eq!(sp.get(g.link_state(1).unwrap()), 6.0);
        assert_eq!(sp.get(g.dest_state(4).unwrap()), 0.0);
    }

    #[test]
    fn single_link_length() {
        let net = synthetic::line(&[(1, 2, 7.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let sp = length_distances(&g, 2).unwrap();
        assert_eq!(sp.get(g.origin_state(1).unwrap()), 7.0);
        assert_eq!(sp.get(g.link_state(1).unwrap()), 0.0);
    }
}
