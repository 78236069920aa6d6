//! Network topologies: undirected attributed graphs of routers and links.
//!
//! Links are symmetric point-to-point connections carrying a datarate and a
//! propagation delay. Buffers on each directed edge are sized as the product
//! of the link capacity and the link's own round-trip time (twice its
//! propagation delay).

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type NodeId = usize;

/// One undirected link between routers `u` and `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub u: NodeId,
    pub v: NodeId,
    pub datarate_mbps: f64,
    /// Propagation delay in integer microseconds.
    pub delay_us: u64,
}

/// Undirected attributed router graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_nodes: usize,
    links: Vec<Link>,
    /// All directed edges, sorted by (src, dst). Edge index order is the
    /// canonical layout shared by observations, link weights and actions.
    directed: Vec<(NodeId, NodeId)>,
    /// neighbors[v], ascending.
    neighbors: Vec<Vec<NodeId>>,
    /// link index per directed edge, aligned with `directed`.
    link_of_edge: Vec<usize>,
}

/// Size classes for generated topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeClass {
    XS,
    S,
    M,
    L,
}

impl SizeClass {
    pub fn node_range(self) -> (usize, usize) {
        match self {
            SizeClass::XS => (6, 10),
            SizeClass::S => (11, 25),
            SizeClass::M => (26, 50),
            SizeClass::L => (51, 100),
        }
    }

    pub fn parse(s: &str) -> Option<SizeClass> {
        match s.to_ascii_lowercase().as_str() {
            "xs" | "nx-xs" => Some(SizeClass::XS),
            "s" | "nx-s" => Some(SizeClass::S),
            "m" | "nx-m" => Some(SizeClass::M),
            "l" | "nx-l" => Some(SizeClass::L),
            _ => None,
        }
    }
}

pub const DATARATE_MBPS_MIN: f64 = 50.0;
pub const DATARATE_MBPS_MAX: f64 = 200.0;
pub const DELAY_US_MIN: u64 = 1_000;
pub const DELAY_US_MAX: u64 = 10_000;

impl Topology {
    /// Builds a topology from a link list, validating connectivity and
    /// attribute ranges.
    pub fn new(n_nodes: usize, links: Vec<Link>) -> Result<Topology> {
        if n_nodes == 0 {
            return Err(CoreError::Topology("empty node set".into()));
        }
        for l in &links {
            if l.u >= n_nodes || l.v >= n_nodes {
                return Err(CoreError::TopologyParse {
                    field: "links.u/v".into(),
                    message: format!("link ({},{}) references unknown node", l.u, l.v),
                });
            }
            if l.u == l.v {
                return Err(CoreError::TopologyParse {
                    field: "links.u/v".into(),
                    message: format!("self link at node {}", l.u),
                });
            }
            if !(l.datarate_mbps.is_finite() && l.datarate_mbps > 0.0) {
                return Err(CoreError::TopologyParse {
                    field: "links.datarate_mbps".into(),
                    message: format!("non-positive datarate on link ({},{})", l.u, l.v),
                });
            }
            if l.delay_us == 0 {
                return Err(CoreError::TopologyParse {
                    field: "links.delay_ms".into(),
                    message: format!("non-positive delay on link ({},{})", l.u, l.v),
                });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &links {
            let key = (l.u.min(l.v), l.u.max(l.v));
            if !seen.insert(key) {
                return Err(CoreError::TopologyParse {
                    field: "links".into(),
                    message: format!("duplicate link between {} and {}", key.0, key.1),
                });
            }
        }

        let mut neighbors = vec![Vec::new(); n_nodes];
        for l in &links {
            neighbors[l.u].push(l.v);
            neighbors[l.v].push(l.u);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }

        let mut directed: Vec<(NodeId, NodeId, usize)> = Vec::with_capacity(links.len() * 2);
        for (i, l) in links.iter().enumerate() {
            directed.push((l.u, l.v, i));
            directed.push((l.v, l.u, i));
        }
        directed.sort_unstable();
        let link_of_edge = directed.iter().map(|d| d.2).collect();
        let directed = directed.into_iter().map(|d| (d.0, d.1)).collect();

        let topo = Topology {
            n_nodes,
            links,
            directed,
            neighbors,
            link_of_edge,
        };
        if !topo.is_connected() {
            return Err(CoreError::NotConnected);
        }
        Ok(topo)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Directed edges in canonical (src, dst) order.
    pub fn directed_edges(&self) -> &[(NodeId, NodeId)] {
        &self.directed
    }

    pub fn n_directed_edges(&self) -> usize {
        self.directed.len()
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[v]
    }

    /// Canonical index of directed edge (u, v), if it exists.
    pub fn edge_index(&self, u: NodeId, v: NodeId) -> Option<usize> {
        self.directed.binary_search(&(u, v)).ok()
    }

    pub fn link_of_directed(&self, edge_idx: usize) -> &Link {
        &self.links[self.link_of_edge[edge_idx]]
    }

    pub fn datarate_mbps(&self, edge_idx: usize) -> f64 {
        self.link_of_directed(edge_idx).datarate_mbps
    }

    pub fn delay_us(&self, edge_idx: usize) -> u64 {
        self.link_of_directed(edge_idx).delay_us
    }

    /// Send-buffer capacity of a directed edge in bytes: link capacity times
    /// the link's round-trip time (2x its propagation delay).
    pub fn buffer_bytes(&self, edge_idx: usize) -> u64 {
        let l = self.link_of_directed(edge_idx);
        buffer_bytes_for(l.datarate_mbps, l.delay_us)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_nodes
    }
}

/// Buffer bytes for a link: datarate (bits per microsecond at 1 Mbps = 1)
/// times round-trip time, converted to bytes.
pub fn buffer_bytes_for(datarate_mbps: f64, delay_us: u64) -> u64 {
    let rtt_us = 2 * delay_us;
    let bits = datarate_mbps * rtt_us as f64;
    (bits / 8.0).round() as u64
}

/// The canonical five-node instance: nodes 0..4, six links, uniform
/// 100 Mbps datarates. Node 1 is the central node with a maximum
/// shortest-path delay of 8 ms.
pub fn build_mini5() -> Topology {
    let ms = |x: u64| x * 1_000;
    let links = vec![
        Link { u: 0, v: 1, datarate_mbps: 100.0, delay_us: ms(3) },
        Link { u: 0, v: 2, datarate_mbps: 100.0, delay_us: ms(2) },
        Link { u: 1, v: 2, datarate_mbps: 100.0, delay_us: ms(4) },
        Link { u: 2, v: 3, datarate_mbps: 100.0, delay_us: ms(4) },
        Link { u: 1, v: 4, datarate_mbps: 100.0, delay_us: ms(6) },
        Link { u: 3, v: 4, datarate_mbps: 100.0, delay_us: ms(5) },
    ];
    Topology::new(5, links).expect("mini5 is valid by construction")
}

/// Generates a connected random topology of the given size class. The node
/// count is uniform over the class range; a random recursive spanning tree
/// guarantees connectivity and extra edges are added until the mean degree
/// is roughly 3. Datarates and delays are sampled uniformly from
/// [50, 200] Mbps and [1, 10] ms. Pure function of (size_class, seed).
pub fn generate_nx(size_class: SizeClass, seed: u64) -> Topology {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x746f_706f);
    let (lo, hi) = size_class.node_range();
    let n = rng.random_range(lo..=hi);

    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.push((u.min(v), u.max(v)));
    }
    // extra edges toward mean degree ~3, i.e. ~1.5 * n undirected links
    let target_links = ((n as f64) * 1.5).ceil() as usize;
    let max_links = n * (n - 1) / 2;
    let target_links = target_links.min(max_links);
    let mut have: std::collections::BTreeSet<(NodeId, NodeId)> = pairs.iter().copied().collect();
    while have.len() < target_links {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if have.insert(key) {
            pairs.push(key);
        }
    }

    pairs.sort_unstable();
    let links = pairs
        .into_iter()
        .map(|(u, v)| {
            let datarate_mbps = rng
                .random_range(DATARATE_MBPS_MIN..=DATARATE_MBPS_MAX)
                .clamp(DATARATE_MBPS_MIN, DATARATE_MBPS_MAX);
            let delay_us = rng.random_range(DELAY_US_MIN..=DELAY_US_MAX);
            Link { u, v, datarate_mbps, delay_us }
        })
        .collect();

    Topology::new(n, links).expect("generated topology is connected by construction")
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyDoc {
    nodes: usize,
    links: Vec<LinkDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkDoc {
    u: usize,
    v: usize,
    datarate_mbps: f64,
    delay_ms: f64,
}

/// Serializes a topology to the key/value + link-list document format.
pub fn save_topology(topology: &Topology, path: &Path) -> Result<()> {
    let doc = TopologyDoc {
        nodes: topology.n_nodes(),
        links: topology
            .links()
            .iter()
            .map(|l| LinkDoc {
                u: l.u,
                v: l.v,
                datarate_mbps: l.datarate_mbps,
                delay_ms: l.delay_us as f64 / 1_000.0,
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&doc)
        .map_err(|e| CoreError::Topology(format!("serialize failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a topology document, validating all invariants.
pub fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    parse_topology(&text)
}

pub fn parse_topology(text: &str) -> Result<Topology> {
    let doc: TopologyDoc = toml::from_str(text).map_err(|e| CoreError::TopologyParse {
        field: "document".into(),
        message: e.to_string(),
    })?;
    let mut links = Vec::with_capacity(doc.links.len());
    for l in doc.links {
        if !(l.delay_ms.is_finite() && l.delay_ms > 0.0) {
            return Err(CoreError::TopologyParse {
                field: "links.delay_ms".into(),
                message: format!("non-positive delay on link ({},{})", l.u, l.v),
            });
        }
        links.push(Link {
            u: l.u,
            v: l.v,
            datarate_mbps: l.datarate_mbps,
            delay_us: (l.delay_ms * 1_000.0).round() as u64,
        });
    }
    Topology::new(doc.nodes, links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mini5_shape() {
        let t = build_mini5();
        assert_eq!(t.n_nodes(), 5);
        assert_eq!(t.links().len(), 6);
        assert_eq!(t.n_directed_edges(), 12);
        assert!(t.is_connected());
    }

    #[test]
    fn mini5_buffers() {
        let t = build_mini5();
        // 100 Mbps link with 3 ms delay: 100 bits/us * 6000 us / 8 = 75000 B
        let idx = t.edge_index(0, 1).unwrap();
        assert_eq!(t.buffer_bytes(idx), 75_000);
    }

    #[test]
    fn size_classes_respected() {
        for (class, lo, hi) in [
            (SizeClass::XS, 6, 10),
            (SizeClass::S, 11, 25),
            (SizeClass::M, 26, 50),
            (SizeClass::L, 51, 100),
        ] {
            for seed in [1u64, 7, 42] {
                let t = generate_nx(class, seed);
                assert!(t.n_nodes() >= lo && t.n_nodes() <= hi, "{:?} seed {seed}: {}", class, t.n_nodes());
                assert!(t.is_connected());
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_nx(SizeClass::XS, 7);
        let b = generate_nx(SizeClass::XS, 7);
        assert_eq!(a, b);
        let c = generate_nx(SizeClass::L, 1);
        let d = generate_nx(SizeClass::L, 1);
        assert_eq!(c, d);
        assert!(c.n_nodes() >= 51 && c.n_nodes() <= 100);
    }

    #[test]
    fn roundtrip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini5.toml");
        let t = build_mini5();
        save_topology(&t, &path).unwrap();
        let u = load_topology(&path).unwrap();
        assert_eq!(t, u);

        let g = generate_nx(SizeClass::S, 3);
        let path2 = dir.path().join("nx.toml");
        save_topology(&g, &path2).unwrap();
        assert_eq!(g, load_topology(&path2).unwrap());
    }

    #[test]
    fn disconnected_rejected() {
        let text = r#"
nodes = 4
[[links]]
u = 0
v = 1
datarate_mbps = 100.0
delay_ms = 1.0
[[links]]
u = 2
v = 3
datarate_mbps = 100.0
delay_ms = 1.0
"#;
        match parse_topology(text) {
            Err(CoreError::NotConnected) => {}
            other => panic!("expected NotConnected, got {other:?}"),
        }
    }

    #[test]
    fn negative_delay_rejected() {
        let text = r#"
nodes = 2
[[links]]
u = 0
v = 1
datarate_mbps = 100.0
delay_ms = -2.0
"#;
        match parse_topology(text) {
            Err(CoreError::TopologyParse { field, .. }) => assert_eq!(field, "links.delay_ms"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_index_canonical_order() {
        let t = build_mini5();
        let edges = t.directed_edges();
        for w in edges.windows(2) {
            assert!(w[0] < w[1]);
        }
        for (i, &(u, v)) in edges.iter().enumerate() {
            assert_eq!(t.edge_index(u, v), Some(i));
            assert!(t.neighbors(u).contains(&v));
        }
    }

    proptest! {
        #[test]
        fn generated_attribute_ranges(seed in 0u64..200) {
            let t = generate_nx(SizeClass::XS, seed);
            for l in t.links() {
                prop_assert!(l.datarate_mbps >= DATARATE_MBPS_MIN && l.datarate_mbps <= DATARATE_MBPS_MAX);
                prop_assert!(l.delay_us >= DELAY_US_MIN && l.delay_us <= DELAY_US_MAX);
            }
            prop_assert!(t.is_connected());
        }

        #[test]
        fn buffer_monotone(d1 in 50.0f64..200.0, d2 in 50.0f64..200.0, t1 in 1_000u64..10_000, t2 in 1_000u64..10_000) {
            let lo_rate = d1.min(d2);
            let hi_rate = d1.max(d2);
            let lo_delay = t1.min(t2);
            let hi_delay = t1.max(t2);
            prop_assert!(buffer_bytes_for(lo_rate, lo_delay) > 0);
            prop_assert!(buffer_bytes_for(hi_rate, lo_delay) >= buffer_bytes_for(lo_rate, lo_delay));
            prop_assert!(buffer_bytes_for(lo_rate, hi_delay) >= buffer_bytes_for(lo_rate, lo_delay));
        }
    }
}
