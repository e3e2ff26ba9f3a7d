use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinkId, Network, NodeId, StateGraph, StateId};
use crate::error::{Error, Result};

/// An observed path: the link sequence between an origin and a destination node.
///
/// As a state sequence the path starts at the origin's entry state, walks the
/// links, and ends at the destination's absorbing state, so it has
/// `links.len() + 1` transitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathObservation {
    pub id: String,
    pub origin: NodeId,
    pub destination: NodeId,
    pub links: Vec<LinkId>,
}

impl PathObservation {
    /// Builds an observation and checks it against the network.
    pub fn new(
        id: impl Into<String>,
        origin: NodeId,
        destination: NodeId,
        links: Vec<LinkId>,
        network: &Network,
    ) -> Result<Self> {
        let obs = Self {
            id: id.into(),
            origin,
            destination,
            links,
        };
        obs.validate(network)?;
        Ok(obs)
    }

    /// Number of transitions `J_n`, including the one into the absorbing state.
    pub fn transitions(&self) -> usize {
        self.links.len() + 1
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::observation(&self.id, "empty path"));
        }
        let mut prev: Option<(LinkId, NodeId)> = None;
        for &id in &self.links {
            let link = network
                .link(id)
                .ok_or_else(|| Error::observation(&self.id, format!("unknown link {id}")))?;
            match prev {
                None if link.tail != self.origin => {
                    return Err(Error::observation(
                        &self.id,
                        format!("first link {id} does not leave origin {}", self.origin),
                    ))
                }
                Some((p, head)) if head != link.tail => {
                    return Err(Error::observation(
                        &self.id,
                        format!("links {p} and {id} are not connected"),
                    ))
                }
                _ => {}
            }
            prev = Some((id, link.head));
        }
        if let Some((last, head)) = prev {
            if head != self.destination {
                return Err(Error::observation(
                    &self.id,
                    format!("last link {last} does not reach destination {}", self.destination),
                ));
            }
        }
        Ok(())
    }

    /// State sequence `[origin state, links..., absorbing state]`.
    pub fn states(&self, graph: &StateGraph) -> Result<Vec<StateId>> {
        let mut out = Vec::with_capacity(self.links.len() + 2);
        out.push(
            graph
                .origin_state(self.origin)
                .ok_or_else(|| Error::observation(&self.id, format!("no origin state for node {}", self.origin)))?,
        );
        for &l in &self.links {
            out.push(graph.link_state(l).ok_or(Error::UnknownLink(l))?);
        }
        out.push(graph.dest_state(self.destination).ok_or_else(|| {
            Error::observation(&self.id, format!("no absorbing state for node {}", self.destination))
        })?);
        for w in out.windows(2) {
            if !graph.incidence(w[0], w[1]) {
                return Err(Error::observation(
                    &self.id,
                    format!("{} cannot be followed by {}", graph.label(w[0]), graph.label(w[1])),
                ));
            }
        }
        Ok(out)
    }

    /// Rebuilds an observation from a state sequence produced by a sampler.
    pub fn from_states(id: impl Into<String>, graph: &StateGraph, states: &[StateId]) -> Result<Self> {
        use super::StateKind;
        let id = id.into();
        let (Some(&first), Some(&last)) = (states.first(), states.last()) else {
            return Err(Error::observation(&id, "empty state sequence"));
        };
        let StateKind::Origin(origin) = graph.kind(first) else {
            return Err(Error::observation(&id, "sequence must start at an origin state"));
        };
        let StateKind::Destination(destination) = graph.kind(last) else {
            return Err(Error::observation(&id, "sequence must end at an absorbing state"));
        };
        let links = states[1..states.len() - 1]
            .iter()
            .map(|&s| match graph.kind(s) {
                StateKind::Link { id, .. } => Ok(id),
                _ => Err(Error::observation(&id, "interior state is not a link")),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id,
            origin,
            destination,
            links,
        })
    }
}

#[derive(Deserialize)]
struct Row {
    obs_id: String,
    origin_node: NodeId,
    dest_node: NodeId,
    link_sequence: String,
}

/// Reads `obs_id,origin_node,dest_node,link_sequence` rows with `;`-separated link ids.
pub fn load_observations(path: impl AsRef<Path>, network: &Network) -> Result<Vec<PathObservation>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let links = row
            .link_sequence
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<LinkId>()
                    .map_err(|_| Error::parse(path, line, format!("invalid link id `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PathObservation::new(
            row.obs_id,
            row.origin_node,
            row.dest_node,
            links,
            network,
        )?);
    }
    Ok(out)
}

pub fn write_observations(path: impl AsRef<Path>, observations: &[PathObservation]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::from("obs_id,origin_node,dest_node,link_sequence\n");
    for o in observations {
        let seq: Vec<String> = o.links.iter().map(|l| l.to_string()).collect();
        buf.push_str(&format!("{},{},{},{}\n", o.id, o.origin, o.destination, seq.join(";")));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}
