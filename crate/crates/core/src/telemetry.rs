//! Telemetry snapshots and delay-aware observation assembly.
//!
//! After every simulation step each node produces a timestamped snapshot of
//! its local counters and incident-link state. Observers assemble directed
//! attributed observation graphs from the snapshot store: a remote node's
//! features come from the newest snapshot old enough to have propagated to
//! the observer over the shortest-delay path, the observer's own state is
//! current, and the birds-eye view sees everything instantly.

use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use crate::netsim::{StepTrace, TimeUs};
use crate::topology::{NodeId, Topology};

/// Node feature layout: tx MB, rx MB, dropped MB, discarded MB, staleness
/// age in ms, is-observer flag, missing-snapshot flag.
pub const NODE_FEATURES: usize = 7;
/// Edge feature layout: datarate Mbps, delay ms, send-buffer occupancy
/// fraction, dropped MB, previous link weight.
pub const EDGE_FEATURES: usize = 5;
/// Global feature layout: step index / episode length, delivered MB.
pub const GLOBAL_FEATURES: usize = 2;

pub const FEATURE_LAYOUT_VERSION: u32 = 1;

/// Observer id used to mark the birds-eye view.
pub const BIRDSEYE_OBSERVER_ID: i64 = -1;

const MB: f64 = 1_000_000.0;

/// Send-side state of one directed link, visible instantly to its source.
#[derive(Debug, Clone, Serialize)]
pub struct OutgoingEdgeSnapshot {
    pub occupancy_bytes: u64,
    pub occupancy_fraction: f64,
    pub dropped_bytes: u64,
    pub datarate_mbps: f64,
    pub delay_us: u64,
}

/// Receive-side state of one directed link, visible instantly to its target.
#[derive(Debug, Clone, Serialize)]
pub struct IncomingEdgeSnapshot {
    pub rx_bytes: u64,
}

/// Local telemetry record of one node at one step boundary.
#[derive(Debug, Clone, Serialize)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub timestamp_us: TimeUs,
    #[serde(skip)]
    pub tx_by_pair: BTreeMap<(NodeId, NodeId), u64>,
    #[serde(skip)]
    pub rx_by_pair: BTreeMap<(NodeId, NodeId), u64>,
    pub dropped_bytes: u64,
    pub discarded_bytes: u64,
    pub delivered_bytes: u64,
    /// Keyed by neighbor id: state of the edge node -> neighbor.
    pub outgoing: BTreeMap<NodeId, OutgoingEdgeSnapshot>,
    /// Keyed by neighbor id: state of the edge neighbor -> node.
    pub incoming: BTreeMap<NodeId, IncomingEdgeSnapshot>,
}

impl NodeSnapshot {
    pub fn tx_total(&self) -> u64 {
        self.tx_by_pair.values().sum()
    }
    pub fn rx_total(&self) -> u64 {
        self.rx_by_pair.values().sum()
    }
}

/// Append-only per-episode snapshot history, one series per node with
/// strictly increasing timestamps.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    per_node: Vec<Vec<NodeSnapshot>>,
}

impl SnapshotStore {
    pub fn new(n_nodes: usize) -> SnapshotStore {
        SnapshotStore { per_node: vec![Vec::new(); n_nodes] }
    }

    /// Stores exactly one snapshot per node for the step that ended at
    /// `timestamp_us`, built from the step trace counters.
    pub fn record(&mut self, topology: &Topology, trace: &StepTrace, timestamp_us: TimeUs) {
        for node in 0..topology.n_nodes() {
            if let Some(last) = self.per_node[node].last() {
                assert!(
                    last.timestamp_us < timestamp_us,
                    "snapshot timestamps must strictly increase"
                );
            }
            let nc = &trace.node_counters[node];
            let mut outgoing = BTreeMap::new();
            let mut incoming = BTreeMap::new();
            for &neigh in topology.neighbors(node) {
                let out_idx = topology.edge_index(node, neigh).expect("edge exists");
                let in_idx = topology.edge_index(neigh, node).expect("edge exists");
                let oc = &trace.edge_counters[out_idx];
                outgoing.insert(
                    neigh,
                    OutgoingEdgeSnapshot {
                        occupancy_bytes: oc.occupancy_bytes,
                        occupancy_fraction: oc.occupancy_fraction,
                        dropped_bytes: oc.drop_bytes,
                        datarate_mbps: topology.datarate_mbps(out_idx),
                        delay_us: topology.delay_us(out_idx),
                    },
                );
                incoming.insert(
                    neigh,
                    IncomingEdgeSnapshot { rx_bytes: trace.edge_counters[in_idx].rx_bytes },
                );
            }
            self.per_node[node].push(NodeSnapshot {
                node,
                timestamp_us,
                tx_by_pair: nc.tx_by_pair.clone(),
                rx_by_pair: nc.rx_by_pair.clone(),
                dropped_bytes: nc.dropped_bytes,
                discarded_bytes: nc.discarded_bytes,
                delivered_bytes: nc.delivered_bytes,
                outgoing,
                incoming,
            });
        }
    }

    /// Newest snapshot of `node` with timestamp <= `cutoff_us`.
    pub fn latest_at(&self, node: NodeId, cutoff_us: TimeUs) -> Option<&NodeSnapshot> {
        let series = &self.per_node[node];
        let idx = series.partition_point(|s| s.timestamp_us <= cutoff_us);
        if idx == 0 {
            None
        } else {
            Some(&series[idx - 1])
        }
    }

    pub fn len(&self, node: NodeId) -> usize {
        self.per_node[node].len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_node.iter().all(|s| s.is_empty())
    }
}

/// All-pairs minimum cumulative link propagation delay.
#[derive(Debug, Clone)]
pub struct DelayMatrix {
    n: usize,
    delays_us: Vec<u64>,
}

impl DelayMatrix {
    pub fn delay_us(&self, v: NodeId, u: NodeId) -> u64 {
        self.delays_us[v * self.n + u]
    }

    pub fn max_delay_us(&self, v: NodeId) -> u64 {
        (0..self.n).map(|u| self.delay_us(v, u)).max().unwrap_or(0)
    }
}

fn dijkstra_delays(topology: &Topology, source: NodeId) -> (Vec<u64>, Vec<Option<NodeId>>) {
    let n = topology.n_nodes();
    let mut dist = vec![u64::MAX; n];
    let mut parent: Vec<Option<NodeId>> = vec![None; n];
    let mut heap: BinaryHeap<std::cmp::Reverse<(u64, NodeId)>> = BinaryHeap::new();
    dist[source] = 0;
    heap.push(std::cmp::Reverse((0, source)));
    while let Some(std::cmp::Reverse((d, x))) = heap.pop() {
        if d > dist[x] {
            continue;
        }
        for &y in topology.neighbors(x) {
            let e = topology.edge_index(x, y).expect("edge exists");
            let cand = d + topology.delay_us(e);
            if cand < dist[y] || (cand == dist[y] && parent[y].is_some_and(|p| x < p)) {
                dist[y] = cand;
                parent[y] = Some(x);
                heap.push(std::cmp::Reverse((cand, y)));
            }
        }
    }
    (dist, parent)
}

/// Minimum total link delay between `v` and `u` over all paths.
pub fn shortest_delay_us(topology: &Topology, v: NodeId, u: NodeId) -> u64 {
    dijkstra_delays(topology, v).0[u]
}

pub fn delay_matrix(topology: &Topology) -> DelayMatrix {
    let n = topology.n_nodes();
    let mut delays_us = vec![0; n * n];
    for v in 0..n {
        let (dist, _) = dijkstra_delays(topology, v);
        delays_us[v * n..(v + 1) * n].copy_from_slice(&dist);
    }
    DelayMatrix { n, delays_us }
}

/// The node minimizing its maximum shortest-path delay to all others;
/// ties resolve toward the lowest node id.
pub fn central_node(topology: &Topology) -> NodeId {
    let m = delay_matrix(topology);
    let mut best = 0;
    let mut best_delay = m.max_delay_us(0);
    for v in 1..topology.n_nodes() {
        let d = m.max_delay_us(v);
        if d < best_delay {
            best = v;
            best_delay = d;
        }
    }
    best
}

/// Parent per node of the minimum-delay spanning tree rooted at `root`
/// (the root's entry is `None`). Ties prefer the lower parent id.
pub fn min_delay_spanning_tree(topology: &Topology, root: NodeId) -> Vec<Option<NodeId>> {
    dijkstra_delays(topology, root).1
}

/// Who is assembling an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observer {
    Birdseye,
    Node(NodeId),
}

impl Observer {
    pub fn id(self) -> i64 {
        match self {
            Observer::Birdseye => BIRDSEYE_OBSERVER_ID,
            Observer::Node(v) => v as i64,
        }
    }
}

/// Directed attributed graph fed to policies and value functions. Feature
/// vectors are flat row-major arrays with the layouts documented on the
/// `*_FEATURES` constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationGraph {
    pub observer_id: i64,
    pub n_nodes: usize,
    pub edges: Vec<(NodeId, NodeId)>,
    pub node_features: Vec<f64>,
    pub edge_features: Vec<f64>,
    pub global_features: Vec<f64>,
}

impl ObservationGraph {
    pub fn node_feature(&self, node: NodeId, k: usize) -> f64 {
        self.node_features[node * NODE_FEATURES + k]
    }

    pub fn edge_feature(&self, edge_idx: usize, k: usize) -> f64 {
        self.edge_features[edge_idx * EDGE_FEATURES + k]
    }

    /// Staleness age of a node's features in milliseconds.
    pub fn staleness_ms(&self, node: NodeId) -> f64 {
        self.node_feature(node, 4)
    }

    pub fn missing_flag(&self, node: NodeId) -> f64 {
        self.node_feature(node, 6)
    }

    /// Overwrites the previous-link-weight feature column.
    pub fn inject_previous_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.edges.len());
        for (i, w) in weights.iter().enumerate() {
            self.edge_features[i * EDGE_FEATURES + 4] = *w;
        }
    }
}

/// Assembles the observation graph seen by `observer` at time `t_us`.
///
/// Remote node features come from the newest snapshot with timestamp at
/// most `t_us - delay(observer, node)`; the observer's own node and the
/// birds-eye view read the newest snapshot at `t_us`. Nodes without a
/// qualifying snapshot get zero features, a staleness age equal to the
/// episode clock and a set missing flag.
pub fn assemble_observation(
    topology: &Topology,
    store: &SnapshotStore,
    delays: &DelayMatrix,
    observer: Observer,
    t_us: TimeUs,
    step_idx: usize,
    steps_per_episode: usize,
) -> ObservationGraph {
    let n = topology.n_nodes();
    let snapshot_of = |u: NodeId| -> Option<&NodeSnapshot> {
        let cutoff = match observer {
            Observer::Birdseye => t_us,
            Observer::Node(v) if v == u => t_us,
            Observer::Node(v) => t_us.checked_sub(delays.delay_us(v, u))?,
        };
        store.latest_at(u, cutoff)
    };

    let mut node_features = vec![0.0; n * NODE_FEATURES];
    let mut delivered_mb = 0.0;
    for u in 0..n {
        let row = &mut node_features[u * NODE_FEATURES..(u + 1) * NODE_FEATURES];
        match snapshot_of(u) {
            Some(s) => {
                row[0] = s.tx_total() as f64 / MB;
                row[1] = s.rx_total() as f64 / MB;
                row[2] = s.dropped_bytes as f64 / MB;
                row[3] = s.discarded_bytes as f64 / MB;
                row[4] = (t_us - s.timestamp_us) as f64 / 1_000.0;
                row[6] = 0.0;
                delivered_mb += s.delivered_bytes as f64 / MB;
            }
            None => {
                row[4] = t_us as f64 / 1_000.0;
                row[6] = 1.0;
            }
        }
        row[5] = if observer == Observer::Node(u) { 1.0 } else { 0.0 };
    }

    let edges = topology.directed_edges().to_vec();
    let mut edge_features = vec![0.0; edges.len() * EDGE_FEATURES];
    for (i, &(a, b)) in edges.iter().enumerate() {
        let row = &mut edge_features[i * EDGE_FEATURES..(i + 1) * EDGE_FEATURES];
        row[0] = topology.datarate_mbps(i);
        row[1] = topology.delay_us(i) as f64 / 1_000.0;
        if let Some(s) = snapshot_of(a) {
            if let Some(out) = s.outgoing.get(&b) {
                row[2] = out.occupancy_fraction;
                row[3] = out.dropped_bytes as f64 / MB;
            }
        }
        // row[4] = previous link weight, injected by the policy runner
    }

    let global_features = vec![
        step_idx as f64 / steps_per_episode.max(1) as f64,
        delivered_mb,
    ];

    ObservationGraph {
        observer_id: observer.id(),
        n_nodes: n,
        edges,
        node_features,
        edge_features,
        global_features,
    }
}

/// Payload bytes of a full node snapshot: per-pair usage maps plus
/// per-neighbor link state plus per-flow records and a header.
pub fn payload_size_full(n_nodes: u64, n_neighbors: u64, n: u64) -> u64 {
    32 * n_nodes * n_nodes + 62 * n_neighbors + 232 * n + 4
}

/// Payload bytes of the compact snapshot variant carrying map aggregates.
pub fn payload_size_compact(n_neighbors: u64) -> u64 {
    62 * n_neighbors + 268
}

/// True when a compact snapshot fits a single 1500-byte packet payload.
pub fn compact_fits_one_packet(n_neighbors: u64) -> bool {
    payload_size_compact(n_neighbors) <= crate::netsim::MAX_PAYLOAD_BYTES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{ForwardingTables, Simulator};
    use crate::policy::{actions, baselines};
    use crate::topology::{build_mini5, generate_nx, SizeClass};
    use crate::traffic::generate_schedule;

    fn static_tables(t: &Topology) -> ForwardingTables {
        let w = baselines::sp_weights(t, baselines::SpMetric::Eigrp);
        let action = actions::to_action_single(t, &w).unwrap();
        let mut tables = ForwardingTables::identity(t.n_nodes());
        for ((u, z), v) in action.rows() {
            tables.set(u, z, v);
        }
        tables
    }

    /// Runs `steps` simulation steps of 5 ms on mini5, recording snapshots.
    fn run_mini5(steps: u64, intensity: f64) -> (Topology, SnapshotStore, DelayMatrix) {
        let t = build_mini5();
        let sched = generate_schedule(&t, 5, intensity, 2_000);
        let mut sim = Simulator::new(&t, &sched, static_tables(&t));
        let mut store = SnapshotStore::new(t.n_nodes());
        for step in 1..=steps {
            let trace = sim.advance(step * 5_000);
            store.record(&t, &trace, step * 5_000);
        }
        let delays = delay_matrix(&t);
        (t, store, delays)
    }

    #[test]
    fn one_snapshot_per_node_per_step() {
        let (t, store, _) = run_mini5(1, 1.0);
        for v in 0..t.n_nodes() {
            assert_eq!(store.len(v), 1);
            assert_eq!(store.latest_at(v, 5_000).unwrap().timestamp_us, 5_000);
        }
    }

    #[test]
    fn idle_network_zero_counters() {
        let t = build_mini5();
        let sched = crate::traffic::FlowSchedule {
            seed: 0,
            intensity: 1.0,
            horizon_us: 2_000_000,
            flows: vec![],
        };
        let mut sim = Simulator::new(&t, &sched, static_tables(&t));
        let mut store = SnapshotStore::new(t.n_nodes());
        let trace = sim.advance(5_000);
        store.record(&t, &trace, 5_000);
        for v in 0..t.n_nodes() {
            let s = store.latest_at(v, 5_000).unwrap();
            assert_eq!(s.tx_total(), 0);
            assert_eq!(s.rx_total(), 0);
            assert_eq!(s.dropped_bytes, 0);
        }
    }

    #[test]
    fn snapshot_counters_match_trace() {
        let t = build_mini5();
        let sched = generate_schedule(&t, 5, 2.0, 500);
        let mut sim = Simulator::new(&t, &sched, static_tables(&t));
        let mut store = SnapshotStore::new(t.n_nodes());
        for step in 1..=50u64 {
            let trace = sim.advance(step * 5_000);
            store.record(&t, &trace, step * 5_000);
            for v in 0..t.n_nodes() {
                let s = store.latest_at(v, step * 5_000).unwrap();
                // recompute the delivered counter from terminal events
                let delivered: u64 = trace
                    .events
                    .iter()
                    .filter(|e| {
                        e.kind == crate::netsim::TerminalKind::Delivery
                            && *e.path.last().unwrap() == v
                    })
                    .map(|e| e.payload_bytes)
                    .sum();
                assert_eq!(s.delivered_bytes, delivered, "node {v} step {step}");
            }
        }
    }

    #[test]
    fn mini5_shortest_delays() {
        let t = build_mini5();
        assert_eq!(shortest_delay_us(&t, 1, 0), 3_000);
        assert_eq!(shortest_delay_us(&t, 1, 2), 4_000);
        assert_eq!(shortest_delay_us(&t, 1, 3), 8_000);
        assert_eq!(shortest_delay_us(&t, 1, 4), 6_000);
        assert_eq!(shortest_delay_us(&t, 1, 1), 0);
    }

    #[test]
    fn mini5_central_node() {
        let t = build_mini5();
        assert_eq!(central_node(&t), 1);
        let m = delay_matrix(&t);
        assert_eq!(m.max_delay_us(1), 8_000);
    }

    #[test]
    fn delay_matrix_matches_brute_force_enumeration() {
        let t = generate_nx(SizeClass::XS, 31);
        assert!(t.n_nodes() <= 10);
        let m = delay_matrix(&t);

        fn explore(
            t: &Topology,
            node: NodeId,
            dst: NodeId,
            cost: u64,
            visited: &mut Vec<bool>,
            best: &mut u64,
        ) {
            if node == dst {
                *best = (*best).min(cost);
                return;
            }
            for &next in t.neighbors(node) {
                if visited[next] {
                    continue;
                }
                let e = t.edge_index(node, next).unwrap();
                visited[next] = true;
                explore(t, next, dst, cost + t.delay_us(e), visited, best);
                visited[next] = false;
            }
        }

        for v in 0..t.n_nodes() {
            for u in 0..t.n_nodes() {
                let mut best = u64::MAX;
                let mut visited = vec![false; t.n_nodes()];
                visited[v] = true;
                explore(&t, v, u, 0, &mut visited, &mut best);
                if v == u {
                    best = 0;
                }
                assert_eq!(m.delay_us(v, u), best, "pair ({v},{u})");
            }
        }
    }

    #[test]
    fn spanning_tree_is_a_tree_with_shortest_delays() {
        let t = build_mini5();
        let parents = min_delay_spanning_tree(&t, 1);
        assert_eq!(parents[1], None);
        let m = delay_matrix(&t);
        for v in 0..5 {
            if v == 1 {
                continue;
            }
            // walk up to the root accumulating delay
            let mut at = v;
            let mut total = 0;
            while let Some(p) = parents[at] {
                let e = t.edge_index(p, at).unwrap();
                total += t.delay_us(e);
                at = p;
            }
            assert_eq!(at, 1);
            assert_eq!(total, m.delay_us(1, v));
        }
    }

    #[test]
    fn mini5_staleness_ages() {
        let (t, store, delays) = run_mini5(4, 1.0);
        let t_us = 4 * 5_000;
        let obs = assemble_observation(&t, &store, &delays, Observer::Node(1), t_us, 4, 400);
        // nodes 0 and 2 are one step old, nodes 3 and 4 two steps old
        assert_eq!(obs.staleness_ms(0), 5.0);
        assert_eq!(obs.staleness_ms(2), 5.0);
        assert_eq!(obs.staleness_ms(3), 10.0);
        assert_eq!(obs.staleness_ms(4), 10.0);
        assert_eq!(obs.staleness_ms(1), 0.0);
        assert_eq!(obs.node_feature(1, 5), 1.0); // is-observer
        assert_eq!(obs.observer_id, 1);
    }

    #[test]
    fn birdseye_is_current_everywhere() {
        let (t, store, delays) = run_mini5(3, 1.0);
        let obs = assemble_observation(&t, &store, &delays, Observer::Birdseye, 15_000, 3, 400);
        assert_eq!(obs.observer_id, BIRDSEYE_OBSERVER_ID);
        for v in 0..t.n_nodes() {
            assert_eq!(obs.staleness_ms(v), 0.0);
            assert_eq!(obs.missing_flag(v), 0.0);
            assert_eq!(obs.node_feature(v, 5), 0.0);
        }
    }

    #[test]
    fn missing_snapshots_at_episode_start() {
        let t = build_mini5();
        let store = SnapshotStore::new(t.n_nodes());
        let delays = delay_matrix(&t);
        let obs = assemble_observation(&t, &store, &delays, Observer::Node(1), 0, 0, 400);
        for v in 0..t.n_nodes() {
            assert_eq!(obs.missing_flag(v), 1.0, "node {v}");
            assert_eq!(obs.node_feature(v, 0), 0.0);
        }
    }

    #[test]
    fn no_future_leakage_and_monotone_staleness() {
        let (t, store, delays) = run_mini5(40, 2.0);
        for v in 0..t.n_nodes() {
            let mut prev_used: Vec<i64> = vec![-1; t.n_nodes()];
            for step in 1..=40u64 {
                let t_us = step * 5_000;
                let obs =
                    assemble_observation(&t, &store, &delays, Observer::Node(v), t_us, step as usize, 400);
                for u in 0..t.n_nodes() {
                    if obs.missing_flag(u) == 1.0 {
                        continue;
                    }
                    let ts_used = t_us as i64 - (obs.staleness_ms(u) * 1_000.0) as i64;
                    if u != v {
                        assert!(
                            ts_used as u64 + delays.delay_us(v, u) <= t_us,
                            "future leakage at step {step} observer {v} node {u}"
                        );
                    }
                    assert!(ts_used >= prev_used[u], "staleness regressed");
                    prev_used[u] = ts_used;
                }
            }
        }
    }

    #[test]
    fn birdseye_dominates_local_observers() {
        let (t, store, delays) = run_mini5(10, 2.0);
        let t_us = 10 * 5_000;
        let bird = assemble_observation(&t, &store, &delays, Observer::Birdseye, t_us, 10, 400);
        for v in 0..t.n_nodes() {
            let local = assemble_observation(&t, &store, &delays, Observer::Node(v), t_us, 10, 400);
            for u in 0..t.n_nodes() {
                assert!(bird.staleness_ms(u) <= local.staleness_ms(u));
            }
        }
    }

    #[test]
    fn feature_layout_is_stable() {
        let (t, store, delays) = run_mini5(6, 1.0);
        for step in 0..=6u64 {
            for obs in [Observer::Birdseye, Observer::Node(0), Observer::Node(4)] {
                let g = assemble_observation(&t, &store, &delays, obs, step * 5_000, step as usize, 400);
                assert_eq!(g.node_features.len(), t.n_nodes() * NODE_FEATURES);
                assert_eq!(g.edge_features.len(), t.n_directed_edges() * EDGE_FEATURES);
                assert_eq!(g.global_features.len(), GLOBAL_FEATURES);
            }
        }
    }

    #[test]
    fn payload_formulas() {
        assert_eq!(payload_size_compact(19), 1_446);
        assert!(compact_fits_one_packet(19));
        assert!(!compact_fits_one_packet(20));
        assert_eq!(payload_size_compact(3), 454);
        assert_eq!(payload_size_full(5, 2, 0), 928);
    }
}
