use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use super::{LinkId, Network, NodeId};
use crate::error::{Error, Result};

pub type StateId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    /// A network link; `index` points into `Network::links`.
    Link {
        id: LinkId,
        index: usize,
        tail: NodeId,
        head: NodeId,
    },
    /// Absorbing state of a destination node.
    Destination(NodeId),
    /// Entry state at an origin node; its actions are the node's outgoing links.
    Origin(NodeId),
}

/// Link-based state space with per-destination absorbing states.
///
/// States are ordered links first (by link id), then destination states (by
/// node id), then origin states (by node id). Actions are stored in CSR form;
/// an edge index identifies one admissible pair `(k, a)`.
#[derive(Clone, Debug)]
pub struct StateGraph {
    network: Network,
    kinds: Vec<StateKind>,
    link_states: HashMap<LinkId, StateId>,
    dest_states: BTreeMap<NodeId, StateId>,
    origin_states: BTreeMap<NodeId, StateId>,
    offsets: Vec<usize>,
    sources: Vec<StateId>,
    targets: Vec<StateId>,
    uturn: Vec<bool>,
    rev_offsets: Vec<usize>,
    rev_edges: Vec<usize>,
}

/// Builds the state graph for the given destination and origin nodes.
pub fn build_state_graph(
    network: &Network,
    destinations: &[NodeId],
    origins: &[NodeId],
) -> Result<StateGraph> {
    StateGraph::new(network.clone(), destinations, origins)
}

impl StateGraph {
    pub fn new(network: Network, destinations: &[NodeId], origins: &[NodeId]) -> Result<Self> {
        let destinations: BTreeSet<NodeId> = destinations.iter().copied().collect();
        let origins: BTreeSet<NodeId> = origins.iter().copied().collect();

        let mut order: Vec<usize> = (0..network.links().len()).collect();
        order.sort_by_key(|&i| network.links()[i].id);

        let mut kinds = Vec::with_capacity(order.len() + destinations.len() + origins.len());
        let mut link_states = HashMap::with_capacity(order.len());
        let mut out_links: HashMap<NodeId, Vec<StateId>> = HashMap::new();
        let mut in_degree: HashMap<NodeId, usize> = HashMap::new();
        for &i in &order {
            let l = &network.links()[i];
            let s = kinds.len();
            kinds.push(StateKind::Link {
                id: l.id,
                index: i,
                tail: l.tail,
                head: l.head,
            });
            link_states.insert(l.id, s);
            out_links.entry(l.tail).or_default().push(s);
            *in_degree.entry(l.head).or_default() += 1;
        }

        let mut dest_states = BTreeMap::new();
        for &d in &destinations {
            if !network.has_node(d) {
                return Err(Error::UnknownNode(d));
            }
            if in_degree.get(&d).copied().unwrap_or(0) == 0 {
                return Err(Error::UnreachableDestination(d));
            }
            dest_states.insert(d, kinds.len());
            kinds.push(StateKind::Destination(d));
        }
        let mut origin_states = BTreeMap::new();
        for &o in &origins {
            if !network.has_node(o) {
                return Err(Error::UnknownNode(o));
            }
            if out_links.get(&o).is_none_or(|v| v.is_empty()) {
                return Err(Error::IsolatedOrigin(o));
            }
            origin_states.insert(o, kinds.len());
            kinds.push(StateKind::Origin(o));
        }

        let n = kinds.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut uturn = Vec::new();
        offsets.push(0);
        for (k, kind) in kinds.iter().enumerate() {
            match *kind {
                StateKind::Link { tail, head, .. } => {
                    if let Some(next) = out_links.get(&head) {
                        for &a in next {
                            let StateKind::Link { tail: at, head: ah, .. } = kinds[a] else {
                                unreachable!()
                            };
                            sources.push(k);
                            targets.push(a);
                            uturn.push(ah == tail && at == head);
                        }
                    }
                    if let Some(&d) = dest_states.get(&head) {
                        sources.push(k);
                        targets.push(d);
                        uturn.push(false);
                    }
                }
                StateKind::Origin(o) => {
                    for &a in &out_links[&o] {
                        sources.push(k);
                        targets.push(a);
                        uturn.push(false);
                    }
                }
                StateKind::Destination(_) => {}
            }
            offsets.push(targets.len());
        }

        let mut rev_count = vec![0usize; n + 1];
        for &t in &targets {
            rev_count[t + 1] += 1;
        }
        for i in 0..n {
            rev_count[i + 1] += rev_count[i];
        }
        let rev_offsets = rev_count.clone();
        let mut fill = rev_count;
        let mut rev_edges = vec![0usize; targets.len()];
        for (e, &t) in targets.iter().enumerate() {
            rev_edges[fill[t]] = e;
            fill[t] += 1;
        }

        Ok(Self {
            network,
            kinds,
            link_states,
            dest_states,
            origin_states,
            offsets,
            sources,
            targets,
            uturn,
            rev_offsets,
            rev_edges,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn n_states(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn kind(&self, k: StateId) -> StateKind {
        self.kinds[k]
    }

    pub fn is_link(&self, k: StateId) -> bool {
        matches!(self.kinds[k], StateKind::Link { .. })
    }

    /// Edge indices of the admissible actions `A(k)`.
    pub fn actions(&self, k: StateId) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Edge indices whose target is `a`.
    pub fn incoming(&self, a: StateId) -> &[usize] {
        &self.rev_edges[self.rev_offsets[a]..self.rev_offsets[a + 1]]
    }

    pub fn source(&self, e: usize) -> StateId {
        self.sources[e]
    }

    pub fn target(&self, e: usize) -> StateId {
        self.targets[e]
    }

    pub fn targets(&self) -> &[StateId] {
        &self.targets
    }

    pub fn uturn(&self, e: usize) -> bool {
        self.uturn[e]
    }

    /// The edge `(k, a)` if `δ(a|k) = 1`.
    pub fn edge(&self, k: StateId, a: StateId) -> Option<usize> {
        self.actions(k).find(|&e| self.targets[e] == a)
    }

    pub fn incidence(&self, k: StateId, a: StateId) -> bool {
        self.edge(k, a).is_some()
    }

    pub fn link_state(&self, id: LinkId) -> Option<StateId> {
        self.link_states.get(&id).copied()
    }

    pub fn dest_state(&self, node: NodeId) -> Option<StateId> {
        self.dest_states.get(&node).copied()
    }

    pub fn origin_state(&self, node: NodeId) -> Option<StateId> {
        self.origin_states.get(&node).copied()
    }

    pub fn destinations(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.dest_states.keys().copied()
    }

    pub fn origins(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.origin_states.keys().copied()
    }

    /// Attribute `col` of the target of edge `e`; zero when the target is absorbing.
    pub fn target_attr(&self, e: usize, col: usize) -> f64 {
        match self.kinds[self.targets[e]] {
            StateKind::Link { index, .. } => self.network.links()[index].attrs[col],
            _ => 0.0,
        }
    }

    /// Attribute `col` of state `k` itself (zero for dummy states).
    pub fn state_attr(&self, k: StateId, col: usize) -> f64 {
        match self.kinds[k] {
            StateKind::Link { index, .. } => self.network.links()[index].attrs[col],
            _ => 0.0,
        }
    }

    pub fn label(&self, k: StateId) -> String {
        match self.kinds[k] {
            StateKind::Link { id, .. } => format!("link:{id}"),
            StateKind::Destination(d) => format!("dest:{d}"),
            StateKind::Origin(o) => format!("orig:{o}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::synthetic;

    #[test]
    fn triangle_with_destination() {
        let net = synthetic::triangle();
        let g = build_state_graph(&net, &[3], &[]).unwrap();
        assert_eq!(g.n_states(), 4);
        let l2 = g.link_state(2).unwrap();
        let d = g.dest_state(3).unwrap();
        assert!(g.incidence(l2, d));
        // link 2 (2->3) continues to link 3 (3->1) and to the absorbing state
        assert_eq!(g.actions(l2).len(), 2);
        assert!(g.actions(d).is_empty());
    }

    #[test]
    fn reverse_link_is_uturn() {
        let net = synthetic::line(&[(1, 2, 1.0), (2, 1, 1.0)]);
        let g = build_state_graph(&net, &[], &[]).unwrap();
        let k = g.link_state(1).unwrap();
        let a = g.link_state(2).unwrap();
        let e = g.edge(k, a).unwrap();
        assert!(g.uturn(e));
    }

    #[test]
    fn destination_without_inflow_is_rejected() {
        let net = synthetic::line(&[(1, 2, 1.0)]);
        let err = build_state_graph(&net, &[1], &[]).unwrap_err();
        assert!(matches!(err, Error::UnreachableDestination(1)));
    }

    #[test]
    fn state_order_is_stable() {
        let net = synthetic::grid(3, 3, |_, _| 1.0);
        let a = build_state_graph(&net, &[9, 5], &[1]).unwrap();
        let b = build_state_graph(&net, &[5, 9], &[1]).unwrap();
        let ka: Vec<_> = (0..a.n_states()).map(|k| a.kind(k)).collect();
        let kb: Vec<_> = (0..b.n_states()).map(|k| b.kind(k)).collect();
        assert_eq!(ka, kb);
        assert_eq!(a.targets(), b.targets());
    }

    #[test]
    fn incidence_matches_action_sets() {
        let net = synthetic::grid(3, 3, |_, _| 1.0);
        let g = build_state_graph(&net, &[9], &[1]).unwrap();
        for k in 0..g.n_states() {
            for a in 0..g.n_states() {
                let listed = g.actions(k).any(|e| g.target(e) == a);
                assert_eq!(listed, g.incidence(k, a));
            }
            for e in g.actions(k) {
                assert!(g.incoming(g.target(e)).contains(&e));
                assert_eq!(g.source(e), k);
            }
        }
    }
}
