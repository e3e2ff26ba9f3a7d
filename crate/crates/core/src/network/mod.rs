//! Directed networks, their link-based state representation, and the
//! step/length distances used by prisms and nested scales.

mod distance;
mod io;
mod observation;
mod state;
pub mod synthetic;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{length_distances, min_steps, Direction, LengthDistanceMap, StepDistanceMap};
pub use io::{load_network, load_network_csv, load_tntp};
pub use observation::{load_observations, write_observations, PathObservation};
pub use state::{build_state_graph, StateGraph, StateId, StateKind};

pub type NodeId = u32;
pub type LinkId = u32;

/// Attribute name used for link lengths.
pub const LENGTH: &str = "Length";
/// Attribute name used for link capacities.
pub const CAPACITY: &str = "Capacity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub tail: NodeId,
    pub head: NodeId,
    pub attrs: Vec<f64>,
}

/// A validated directed graph with per-link attribute vectors.
#[derive(Clone, Debug)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    attr_names: Vec<String>,
    node_index: HashMap<NodeId, usize>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, attr_names: Vec<String>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                return Err(Error::DuplicateNode(n.id));
            }
        }
        let length_col = attr_names.iter().position(|a| a == LENGTH);
        let mut seen = HashSet::with_capacity(links.len());
        for l in &links {
            if !seen.insert(l.id) {
                return Err(Error::DuplicateLink(l.id));
            }
            for node in [l.tail, l.head] {
                if !node_index.contains_key(&node) {
                    return Err(Error::DanglingNode { link: l.id, node });
                }
            }
            if l.attrs.len() != attr_names.len() {
                return Err(Error::AttributeCount {
                    link: l.id,
                    expected: attr_names.len(),
                    got: l.attrs.len(),
                });
            }
            if let Some(&bad) = l.attrs.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("attribute {bad} on link {}", l.id)));
            }
            if let Some(c) = length_col {
                if l.attrs[c] <= 0.0 {
                    return Err(Error::NonPositiveLength {
                        link: l.id,
                        value: l.attrs[c],
                    });
                }
            }
        }
        Ok(Self {
            nodes,
            links,
            attr_names,
            node_index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attr_names.iter().position(|a| a == name)
    }

    pub fn has_node(&self, id: NodeId) -> bool {
        self.node_index.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.iter().find(|l| l.id == id)
    }

    /// Divides an attribute column by its maximum over all links.
    pub fn normalize_by_max(&mut self, attr: &str) -> Result<()> {
        let col = self
            .attr_index(attr)
            .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))?;
        let max = self
            .links
            .iter()
            .map(|l| l.attrs[col])
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            return Err(Error::Spec(format!(
                "cannot normalize `{attr}`: maximum is {max}"
            )));
        }
        for l in &mut self.links {
            l.attrs[col] /= max;
        }
        Ok(())
    }

    /// Adds a derived attribute column computed from each link.
    pub fn add_attribute(&mut self, name: &str, f: impl Fn(&Link) -> f64) -> Result<()> {
        if self.attr_index(name).is_some() {
            return Err(Error::Spec(format!("attribute `{name}` already exists")));
        }
        for l in &mut self.links {
            let v = f(l);
            l.attrs.push(v);
        }
        self.attr_names.push(name.to_string());
        Ok(())
    }
}
