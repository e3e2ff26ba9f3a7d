use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Link, Network, Node, CAPACITY, LENGTH};
use crate::error::{Error, Result};

/// Loads a network from a CSV directory, a `links.csv` file, or a TNTP `_net` file.
///
/// A directory must contain `nodes.csv` and `links.csv`. A `.csv` path names the
/// link table and the node table is read from `nodes.csv` next to it. For TNTP the
/// node coordinates are read from the sibling `_node.tntp` file when present.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    if path.is_dir() {
        return load_network_csv(path.join("nodes.csv"), path.join("links.csv"));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("tntp") => {
            let node_file = sibling_node_file(path);
            load_tntp(path, node_file.as_deref())
        }
        Some("csv") => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            load_network_csv(dir.join("nodes.csv"), path)
        }
        _ => Err(Error::parse(path, 0, "unrecognized network format")),
    }
}

fn sibling_node_file(net: &Path) -> Option<PathBuf> {
    let name = net.file_name()?.to_str()?;
    let node_name = if name.contains("_net") {
        name.replacen("_net", "_node", 1)
    } else {
        return None;
    };
    let candidate = net.with_file_name(node_name);
    candidate.exists().then_some(candidate)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{s}`")))
}

pub fn load_network_csv(nodes_path: impl AsRef<Path>, links_path: impl AsRef<Path>) -> Result<Network> {
    let nodes_path = nodes_path.as_ref();
    let links_path = links_path.as_ref();

    let mut nodes = Vec::new();
    let mut rdr = csv_reader(nodes_path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(nodes_path, 1, e.to_string()))?
        .clone();
    if headers.len() < 3 {
        return Err(Error::parse(nodes_path, 1, "expected header node_id,x,y"));
    }
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(nodes_path, line, e.to_string()))?;
        nodes.push(Node {
            id: parse_field(nodes_path, line, "node id", &rec[0])?,
            x: parse_field(nodes_path, line, "x", &rec[1])?,
            y: parse_field(nodes_path, line, "y", &rec[2])?,
        });
    }

    let mut rdr = csv_reader(links_path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(links_path, 1, e.to_string()))?
        .clone();
    if headers.len() < 3 {
        return Err(Error::parse(links_path, 1, "expected header link_id,from,to,..."));
    }
    let attr_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut links = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(links_path, line, e.to_string()))?;
        let attrs = rec
            .iter()
            .skip(3)
            .map(|s| parse_field(links_path, line, "attribute", s))
            .collect::<Result<Vec<f64>>>()?;
        links.push(Link {
            id: parse_field(links_path, line, "link id", &rec[0])?,
            tail: parse_field(links_path, line, "node id", &rec[1])?,
            head: parse_field(links_path, line, "node id", &rec[2])?,
            attrs,
        });
    }
    Network::new(nodes, links, attr_names)
}

/// Reads a TNTP link file. Free-flow time becomes `Length` and capacity becomes
/// `Capacity`; links are numbered from 1 in file order.
pub fn load_tntp(net_path: impl AsRef<Path>, node_path: Option<&Path>) -> Result<Network> {
    let net_path = net_path.as_ref();
    let text = read_to_string(net_path)?;
    let nodes = match node_path {
        Some(p) => Some(parse_tntp_nodes(&read_to_string(p)?, p)?),
        None => None,
    };
    build_tntp(&text, nodes, net_path)
}

/// Parses TNTP link (and optional node) text already in memory.
pub(crate) fn parse_tntp(net: &str, node: Option<&str>, name: &Path) -> Result<Network> {
    let nodes = match node {
        Some(t) => Some(parse_tntp_nodes(t, name)?),
        None => None,
    };
    build_tntp(net, nodes, name)
}

fn build_tntp(text: &str, nodes: Option<Vec<Node>>, net_path: &Path) -> Result<Network> {
    let mut declared_links: Option<usize> = None;
    let mut in_metadata = true;
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if in_metadata {
            if line.starts_with("<END OF METADATA>") {
                in_metadata = false;
            } else if let Some(rest) = line.strip_prefix("<NUMBER OF LINKS>") {
                declared_links = Some(parse_field(net_path, i + 1, "link count", rest.trim())?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('~') {
            columns = header
                .split_whitespace()
                .filter(|c| *c != ";")
                .map(|c| c.to_ascii_lowercase())
                .collect();
            continue;
        }
        rows.push((i + 1, line.trim_end_matches(';').split_whitespace().collect()));
    }
    if in_metadata {
        return Err(Error::parse(net_path, 0, "missing <END OF METADATA>"));
    }

    let col = |name: &str, default: usize| columns.iter().position(|c| c == name).unwrap_or(default);
    let (c_tail, c_head, c_cap, c_fft) = (
        col("init_node", 0),
        col("term_node", 1),
        col("capacity", 2),
        col("free_flow_time", 4),
    );
    let needed = c_tail.max(c_head).max(c_cap).max(c_fft);

    let mut links = Vec::with_capacity(rows.len());
    let mut node_ids = BTreeSet::new();
    for (idx, (line, fields)) in rows.iter().enumerate() {
        if fields.len() <= needed {
            return Err(Error::parse(net_path, *line, "too few columns"));
        }
        let tail = parse_field(net_path, *line, "node id", fields[c_tail])?;
        let head = parse_field(net_path, *line, "node id", fields[c_head])?;
        let cap: f64 = parse_field(net_path, *line, "capacity", fields[c_cap])?;
        let fft: f64 = parse_field(net_path, *line, "free-flow time", fields[c_fft])?;
        node_ids.insert(tail);
        node_ids.insert(head);
        links.push(Link {
            id: idx as u32 + 1,
            tail,
            head,
            attrs: vec![fft, cap],
        });
    }
    if let Some(n) = declared_links {
        if n != links.len() {
            return Err(Error::parse(
                net_path,
                0,
                format!("header declares {n} links but {} rows were read", links.len()),
            ));
        }
    }

    let nodes = nodes.unwrap_or_else(|| {
        node_ids
            .into_iter()
            .map(|id| Node { id, x: 0.0, y: 0.0 })
            .collect()
    });
    Network::new(nodes, links, vec![LENGTH.to_string(), CAPACITY.to_string()])
}

fn parse_tntp_nodes(text: &str, path: &Path) -> Result<Vec<Node>> {
    let mut nodes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let fields: Vec<&str> = raw.trim().trim_end_matches(';').split_whitespace().collect();
        if fields.len() < 3 || fields[0].parse::<u32>().is_err() {
            continue;
        }
        nodes.push(Node {
            id: parse_field(path, i + 1, "node id", fields[0])?,
            x: parse_field(path, i + 1, "x", fields[1])?,
            y: parse_field(path, i + 1, "y", fields[2])?,
        });
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_csv_triangle() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "nodes.csv", "node_id,x,y\n1,0,0\n2,1,0\n3,0,1\n");
        write(
            dir.path(),
            "links.csv",
            "link_id,from,to,Length\n1,1,2,1.0\n2,2,3,1.0\n3,3,1,1.0\n",
        );
        let net = load_network(dir.path()).unwrap();
        assert_eq!(net.nodes().len(), 3);
        assert_eq!(net.links().len(), 3);
        assert_eq!(net.attr_names(), &["Length".to_string()]);
    }

    #[test]
    fn csv_dangling_reference_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "nodes.csv", "node_id,x,y\n1,0,0\n2,1,0\n3,0,1\n");
        let links = write(
            dir.path(),
            "links.csv",
            "link_id,from,to,Length\n1,1,2,1.0\n2,2,99,1.0\n",
        );
        let err = load_network(links).unwrap_err();
        assert!(matches!(err, Error::DanglingNode { link: 2, node: 99 }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_network("/nonexistent/links.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn loads_bundled_sioux_falls() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/SiouxFalls_net.tntp");
        let text = fs::read_to_string(&path).unwrap();
        // independent count: data rows are the non-comment lines after the metadata block
        let body = text.split("<END OF METADATA>").nth(1).unwrap();
        let rows = body
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('~'))
            .count();
        assert_eq!(rows, 76);

        let net = load_network(&path).unwrap();
        assert_eq!(net.links().len(), rows);
        assert_eq!(net.nodes().len(), 24);
        let first = &net.links()[0];
        assert_eq!((first.tail, first.head), (1, 2));
        assert_eq!(first.attrs, vec![6.0, 25900.20064]);
        assert!((net.node(1).unwrap().x + 96.77042).abs() < 1e-9);
    }
}
