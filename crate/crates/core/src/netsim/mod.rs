//! Deterministic discrete-event packet-level network simulator.
//!
//! Store-and-forward links with drop-tail send buffers, destination-based
//! forwarding with timed table installation, a windowed retransmitting TCP
//! model with in-order delivery, and constant-bitrate UDP. All timestamps
//! are integer microseconds; event ties are broken by class and insertion
//! sequence, so identical inputs replay bit-identically.

mod flows;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::topology::{NodeId, Topology};
use crate::traffic::{FlowSchedule, Protocol};

use flows::{TcpReceiver, TcpSender, UdpSource};

pub type TimeUs = u64;

pub const MAX_PAYLOAD_BYTES: u64 = 1_500;
pub const ACK_WIRE_BYTES: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PacketKind {
    Data,
    Ack,
}

#[derive(Debug, Clone, Serialize)]
pub struct Packet {
    pub flow: usize,
    pub seq: u64,
    pub kind: PacketKind,
    /// Flow payload bytes carried; zero for ACKs.
    pub payload_bytes: u64,
    /// Bytes occupying buffers and link time.
    pub wire_bytes: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub path_trace: Vec<NodeId>,
    pub send_time_us: TimeUs,
    pub retransmitted: bool,
    /// Cumulative acknowledgment carried by ACK packets.
    pub ack_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DropReason {
    BufferOverflow,
    LoopGuard,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiscardReason {
    Duplicate,
    BeyondReorderWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminalKind {
    Delivery,
    Drop(DropReason),
    TcpDiscard(DiscardReason),
}

/// A packet reaching the end of its life: delivered in order, dropped in
/// the network, or rejected by the receiving transport.
#[derive(Debug, Clone, Serialize)]
pub struct TerminalEvent {
    pub flow: usize,
    pub kind: TerminalKind,
    pub payload_bytes: u64,
    pub path: Vec<NodeId>,
    pub send_time_us: TimeUs,
    pub time_us: TimeUs,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NodeStepCounters {
    #[serde(serialize_with = "serialize_pair_map")]
    pub tx_by_pair: BTreeMap<(NodeId, NodeId), u64>,
    #[serde(serialize_with = "serialize_pair_map")]
    pub rx_by_pair: BTreeMap<(NodeId, NodeId), u64>,
    pub dropped_bytes: u64,
    pub discarded_bytes: u64,
    /// Application bytes delivered in order at this node.
    pub delivered_bytes: u64,
}

impl NodeStepCounters {
    pub fn tx_total(&self) -> u64 {
        self.tx_by_pair.values().sum()
    }
    pub fn rx_total(&self) -> u64 {
        self.rx_by_pair.values().sum()
    }
}

fn serialize_pair_map<S: serde::Serializer>(
    map: &BTreeMap<(NodeId, NodeId), u64>,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    let entries: Vec<(NodeId, NodeId, u64)> =
        map.iter().map(|(&(a, b), &v)| (a, b, v)).collect();
    serde::Serialize::serialize(&entries, ser)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EdgeStepCounters {
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    pub drop_bytes: u64,
    /// Send-buffer occupancy at the step boundary.
    pub occupancy_bytes: u64,
    pub occupancy_fraction: f64,
    /// Time-averaged occupancy fraction over the step.
    pub mean_occupancy_fraction: f64,
}

/// Everything the simulator reports for one advance window.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub from_us: TimeUs,
    pub to_us: TimeUs,
    pub events: Vec<TerminalEvent>,
    pub node_counters: Vec<NodeStepCounters>,
    pub edge_counters: Vec<EdgeStepCounters>,
}

impl StepTrace {
    pub fn delivered_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| e.kind == TerminalKind::Delivery)
            .map(|e| e.payload_bytes)
            .sum()
    }

    pub fn dropped_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, TerminalKind::Drop(_)))
            .map(|e| e.payload_bytes)
            .sum()
    }

    pub fn discarded_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, TerminalKind::TcpDiscard(_)))
            .map(|e| e.payload_bytes)
            .sum()
    }
}

/// Per-flow byte ledger at a step boundary. `in_flight_bytes` covers packets
/// being serialized or propagating plus segments parked in the receiver's
/// reorder buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowLedger {
    pub sent_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
    pub discarded_bytes: u64,
    pub queued_bytes: u64,
    pub in_flight_bytes: u64,
}

impl FlowLedger {
    pub fn balanced(&self) -> bool {
        self.sent_bytes
            == self.delivered_bytes
                + self.dropped_bytes
                + self.discarded_bytes
                + self.queued_bytes
                + self.in_flight_bytes
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    InstallRows { node: NodeId, rows: Vec<(NodeId, NodeId)> },
    FlowStart { flow: usize },
    UdpEmit { flow: usize, k: u64 },
    Arrival { packet: Packet, node: NodeId },
    TxEnd { edge: usize },
    TcpTimeout { flow: usize, generation: u64 },
}

/// Installs sort before all other events at the same timestamp, so a row
/// activated at t governs every packet forwarded at t.
const CLASS_INSTALL: u8 = 0;
const CLASS_DEFAULT: u8 = 1;

struct HeapEntry {
    time: TimeUs,
    class: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.class, self.seq) == (other.time, other.class, other.seq)
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we pop the earliest event
        (other.time, other.class, other.seq).cmp(&(self.time, self.class, self.seq))
    }
}

/// Per-router forwarding state: destination to next-hop neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTables {
    rows: Vec<Vec<NodeId>>,
}

impl ForwardingTables {
    /// Tables where every destination maps to the router itself; callers
    /// must install real rows before traffic flows.
    pub fn identity(n: usize) -> ForwardingTables {
        ForwardingTables { rows: (0..n).map(|u| vec![u; n]).collect() }
    }

    pub fn set(&mut self, u: NodeId, dst: NodeId, next: NodeId) {
        self.rows[u][dst] = next;
    }

    pub fn next_hop(&self, u: NodeId, dst: NodeId) -> NodeId {
        self.rows[u][dst]
    }
}

#[derive(Debug)]
struct EdgeState {
    src: NodeId,
    dst: NodeId,
    datarate_mbps: f64,
    delay_us: u64,
    capacity_bytes: u64,
    queue: VecDeque<Packet>,
    queued_bytes: u64,
    transmitting: bool,
    occ_integral_byte_us: u128,
    occ_updated_at: TimeUs,
    step: EdgeStepCounters,
    step_occ_integral_start: u128,
}

impl EdgeState {
    fn flush_occupancy(&mut self, now: TimeUs) {
        if now > self.occ_updated_at {
            let dt = (now - self.occ_updated_at) as u128;
            self.occ_integral_byte_us += self.queued_bytes as u128 * dt;
            self.occ_updated_at = now;
        }
    }
}

struct FlowRuntime {
    src: NodeId,
    dst: NodeId,
    protocol: Protocol,
    sent_bytes: u64,
    delivered_bytes: u64,
    dropped_bytes: u64,
    discarded_bytes: u64,
    udp: Option<UdpSource>,
    tcp_tx: Option<TcpSender>,
    tcp_rx: Option<TcpReceiver>,
}

/// The simulator instance. Single-threaded; owns all its state.
pub struct Simulator {
    topology: Topology,
    now: TimeUs,
    queue: BinaryHeap<HeapEntry>,
    event_seq: u64,
    tables: ForwardingTables,
    edges: Vec<EdgeState>,
    flows: Vec<FlowRuntime>,
    node_step: Vec<NodeStepCounters>,
    events_out: Vec<TerminalEvent>,
    hop_budget: usize,
    pending_installs: Vec<(TimeUs, NodeId)>,
    total_dropped_bytes: u64,
}

impl Simulator {
    pub fn new(topology: &Topology, schedule: &FlowSchedule, initial: ForwardingTables) -> Simulator {
        let n = topology.n_nodes();
        let edges = topology
            .directed_edges()
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| EdgeState {
                src: u,
                dst: v,
                datarate_mbps: topology.datarate_mbps(i),
                delay_us: topology.delay_us(i),
                capacity_bytes: topology.buffer_bytes(i),
                queue: VecDeque::new(),
                queued_bytes: 0,
                transmitting: false,
                occ_integral_byte_us: 0,
                occ_updated_at: 0,
                step: EdgeStepCounters::default(),
                step_occ_integral_start: 0,
            })
            .collect();

        let mut sim = Simulator {
            topology: topology.clone(),
            now: 0,
            queue: BinaryHeap::new(),
            event_seq: 0,
            tables: initial,
            edges,
            flows: Vec::with_capacity(schedule.flows.len()),
            node_step: vec![NodeStepCounters::default(); n],
            events_out: Vec::new(),
            hop_budget: 4 * n,
            pending_installs: Vec::new(),
            total_dropped_bytes: 0,
        };

        for (i, f) in schedule.flows.iter().enumerate() {
            sim.flows.push(FlowRuntime {
                src: f.src,
                dst: f.dst,
                protocol: f.protocol,
                sent_bytes: 0,
                delivered_bytes: 0,
                dropped_bytes: 0,
                discarded_bytes: 0,
                udp: match f.protocol {
                    Protocol::Udp => Some(UdpSource::new(
                        f.bitrate_mbps.unwrap_or(1.0),
                        f.duration_us.unwrap_or(0),
                    )),
                    Protocol::Tcp => None,
                },
                tcp_tx: match f.protocol {
                    Protocol::Tcp => Some(TcpSender::new(f.size_bytes.unwrap_or(0))),
                    Protocol::Udp => None,
                },
                tcp_rx: match f.protocol {
                    Protocol::Tcp => Some(TcpReceiver::new()),
                    Protocol::Udp => None,
                },
            });
            sim.push_event(f.start_us, CLASS_DEFAULT, EventKind::FlowStart { flow: i });
        }
        sim
    }

    pub fn now(&self) -> TimeUs {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn tables(&self) -> &ForwardingTables {
        &self.tables
    }

    pub fn total_dropped_bytes(&self) -> u64 {
        self.total_dropped_bytes
    }

    /// Installation times still pending, for inspection.
    pub fn pending_installs(&self) -> &[(TimeUs, NodeId)] {
        &self.pending_installs
    }

    fn push_event(&mut self, time: TimeUs, class: u8, kind: EventKind) {
        let seq = self.event_seq;
        self.event_seq += 1;
        self.queue.push(HeapEntry { time, class, seq, kind });
    }

    /// Schedules row updates for router `u` to take effect at `at_us`.
    /// Rows are validated now: each next hop must be a neighbor of `u`.
    pub fn install_forwarding(
        &mut self,
        u: NodeId,
        rows: &[(NodeId, NodeId)],
        at_us: TimeUs,
    ) -> Result<()> {
        if at_us < self.now {
            return Err(CoreError::Forwarding(format!(
                "install time {at_us} is before current time {}",
                self.now
            )));
        }
        for &(dst, next) in rows {
            if dst >= self.topology.n_nodes() || dst == u {
                return Err(CoreError::Forwarding(format!(
                    "invalid destination {dst} for router {u}"
                )));
            }
            if !self.topology.neighbors(u).contains(&next) {
                return Err(CoreError::Forwarding(format!(
                    "next hop {next} is not a neighbor of router {u}"
                )));
            }
        }
        self.pending_installs.push((at_us, u));
        self.push_event(at_us, CLASS_INSTALL, EventKind::InstallRows { node: u, rows: rows.to_vec() });
        Ok(())
    }

    /// Processes all events with time <= `until_us` and returns the trace
    /// of terminal packet events plus per-node/edge counters for the window.
    pub fn advance(&mut self, until_us: TimeUs) -> StepTrace {
        assert!(until_us >= self.now, "cannot advance into the past");
        let from_us = self.now;

        while let Some(top) = self.queue.peek() {
            if top.time > until_us {
                break;
            }
            let entry = self.queue.pop().expect("peeked");
            self.now = entry.time;
            self.dispatch(entry.kind);
        }
        self.now = until_us;

        for e in &mut self.edges {
            e.flush_occupancy(until_us);
        }

        let window = (until_us - from_us).max(1) as u128;
        let edge_counters = self
            .edges
            .iter_mut()
            .map(|e| {
                let mut c = std::mem::take(&mut e.step);
                c.occupancy_bytes = e.queued_bytes;
                c.occupancy_fraction = e.queued_bytes as f64 / e.capacity_bytes as f64;
                let step_integral = e.occ_integral_byte_us - e.step_occ_integral_start;
                c.mean_occupancy_fraction =
                    step_integral as f64 / (e.capacity_bytes as u128 * window) as f64;
                e.step_occ_integral_start = e.occ_integral_byte_us;
                c
            })
            .collect();

        let node_counters = std::mem::replace(
            &mut self.node_step,
            vec![NodeStepCounters::default(); self.topology.n_nodes()],
        );

        StepTrace {
            from_us,
            to_us: until_us,
            events: std::mem::take(&mut self.events_out),
            node_counters,
            edge_counters,
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::InstallRows { node, rows } => {
                let now = self.now;
                self.pending_installs.retain(|&(t, u)| !(t == now && u == node));
                for (dst, next) in rows {
                    self.tables.set(node, dst, next);
                }
            }
            EventKind::FlowStart { flow } => self.on_flow_start(flow),
            EventKind::UdpEmit { flow, k } => self.on_udp_emit(flow, k),
            EventKind::Arrival { packet, node } => self.on_arrival(packet, node),
            EventKind::TxEnd { edge } => self.on_tx_end(edge),
            EventKind::TcpTimeout { flow, generation } => self.on_tcp_timeout(flow, generation),
        }
    }

    fn on_flow_start(&mut self, flow: usize) {
        match self.flows[flow].protocol {
            Protocol::Udp => self.on_udp_emit(flow, 0),
            Protocol::Tcp => {
                self.tcp_pump(flow);
                self.tcp_arm_timer(flow);
            }
        }
    }

    fn on_udp_emit(&mut self, flow: usize, k: u64) {
        let now = self.now;
        let (src, dst) = (self.flows[flow].src, self.flows[flow].dst);
        let (payload, interval, more) = {
            let Some(udp) = self.flows[flow].udp.as_ref() else { return };
            let Some(payload) = udp.payload_of(k) else { return };
            (payload, udp.interval_us(), udp.payload_of(k + 1).is_some())
        };
        if more {
            self.push_event(now + interval, CLASS_DEFAULT, EventKind::UdpEmit { flow, k: k + 1 });
        }
        let packet = Packet {
            flow,
            seq: k,
            kind: PacketKind::Data,
            payload_bytes: payload,
            wire_bytes: payload,
            src,
            dst,
            path_trace: vec![src],
            send_time_us: now,
            retransmitted: false,
            ack_seq: 0,
        };
        self.flows[flow].sent_bytes += payload;
        self.forward_from(packet, src);
    }

    fn on_arrival(&mut self, mut packet: Packet, node: NodeId) {
        packet.path_trace.push(node);
        let edge_idx = {
            let prev = packet.path_trace[packet.path_trace.len() - 2];
            self.topology.edge_index(prev, node).expect("arrival over existing edge")
        };
        self.edges[edge_idx].step.rx_bytes += packet.wire_bytes;
        if packet.kind == PacketKind::Data {
            let pair = (packet.src, packet.dst);
            *self.node_step[node].rx_by_pair.entry(pair).or_insert(0) += packet.payload_bytes;
        }

        if node == packet.dst {
            self.on_reach_destination(packet);
            return;
        }
        let hops = packet.path_trace.len() - 1;
        if hops > self.hop_budget {
            self.drop_packet(packet, node, DropReason::LoopGuard);
            return;
        }
        self.forward_from(packet, node);
    }

    fn forward_from(&mut self, packet: Packet, u: NodeId) {
        let next = self.tables.next_hop(u, packet.dst);
        let Some(edge_idx) = self.topology.edge_index(u, next) else {
            // no usable row, e.g. identity tables before any installation
            self.drop_packet(packet, u, DropReason::NoRoute);
            return;
        };
        self.enqueue(edge_idx, packet);
    }

    fn enqueue(&mut self, edge_idx: usize, packet: Packet) {
        let now = self.now;
        let wire = packet.wire_bytes;
        let edge = &mut self.edges[edge_idx];
        if edge.queued_bytes + wire > edge.capacity_bytes {
            edge.step.drop_bytes += wire;
            let at = edge.src;
            self.drop_packet(packet, at, DropReason::BufferOverflow);
            return;
        }
        edge.flush_occupancy(now);
        edge.queue.push_back(packet);
        edge.queued_bytes += wire;
        if !edge.transmitting {
            self.start_tx(edge_idx);
        }
    }

    fn start_tx(&mut self, edge_idx: usize) {
        let now = self.now;
        let edge = &mut self.edges[edge_idx];
        let Some(packet) = edge.queue.pop_front() else { return };
        edge.flush_occupancy(now);
        edge.queued_bytes -= packet.wire_bytes;
        edge.transmitting = true;
        edge.step.tx_bytes += packet.wire_bytes;
        if packet.kind == PacketKind::Data {
            let pair = (packet.src, packet.dst);
            *self.node_step[edge.src].tx_by_pair.entry(pair).or_insert(0) += packet.payload_bytes;
        }
        let tx_us = tx_time_us(packet.wire_bytes, edge.datarate_mbps);
        let arrival = now + tx_us + edge.delay_us;
        let dst_node = edge.dst;
        self.push_event(now + tx_us, CLASS_DEFAULT, EventKind::TxEnd { edge: edge_idx });
        self.push_event(arrival, CLASS_DEFAULT, EventKind::Arrival { packet, node: dst_node });
    }

    fn on_tx_end(&mut self, edge_idx: usize) {
        self.edges[edge_idx].transmitting = false;
        if !self.edges[edge_idx].queue.is_empty() {
            self.start_tx(edge_idx);
        }
    }

    fn drop_packet(&mut self, packet: Packet, at: NodeId, reason: DropReason) {
        if packet.kind == PacketKind::Data {
            self.flows[packet.flow].dropped_bytes += packet.payload_bytes;
            self.node_step[at].dropped_bytes += packet.payload_bytes;
            self.total_dropped_bytes += packet.payload_bytes;
        }
        self.events_out.push(TerminalEvent {
            flow: packet.flow,
            kind: TerminalKind::Drop(reason),
            payload_bytes: packet.payload_bytes,
            path: packet.path_trace,
            send_time_us: packet.send_time_us,
            time_us: self.now,
        });
    }

    fn on_reach_destination(&mut self, packet: Packet) {
        match packet.kind {
            PacketKind::Ack => self.on_tcp_ack(packet),
            PacketKind::Data => match self.flows[packet.flow].protocol {
                Protocol::Udp => self.deliver(packet),
                Protocol::Tcp => self.on_tcp_data(packet),
            },
        }
    }

    fn deliver(&mut self, packet: Packet) {
        let flow = &mut self.flows[packet.flow];
        flow.delivered_bytes += packet.payload_bytes;
        self.node_step[packet.dst].delivered_bytes += packet.payload_bytes;
        self.events_out.push(TerminalEvent {
            flow: packet.flow,
            kind: TerminalKind::Delivery,
            payload_bytes: packet.payload_bytes,
            path: packet.path_trace,
            send_time_us: packet.send_time_us,
            time_us: self.now,
        });
    }

    fn discard(&mut self, packet: Packet, reason: DiscardReason) {
        let dst = packet.dst;
        self.flows[packet.flow].discarded_bytes += packet.payload_bytes;
        self.node_step[dst].discarded_bytes += packet.payload_bytes;
        self.events_out.push(TerminalEvent {
            flow: packet.flow,
            kind: TerminalKind::TcpDiscard(reason),
            payload_bytes: packet.payload_bytes,
            path: packet.path_trace,
            send_time_us: packet.send_time_us,
            time_us: self.now,
        });
    }

    // ---- TCP ----

    fn on_tcp_data(&mut self, packet: Packet) {
        let flow_idx = packet.flow;
        let rx = self.flows[flow_idx].tcp_rx.as_mut().expect("tcp flow");
        match rx.accept(packet) {
            flows::RxOutcome::Deliver(ready) => {
                for p in ready {
                    self.deliver(p);
                }
            }
            flows::RxOutcome::Held => {}
            flows::RxOutcome::Discard(p, reason) => self.discard(p, reason),
        }
        let ack_seq = self.flows[flow_idx].tcp_rx.as_ref().expect("tcp flow").expected();
        self.send_ack(flow_idx, ack_seq);
    }

    fn send_ack(&mut self, flow_idx: usize, ack_seq: u64) {
        let (src, dst) = (self.flows[flow_idx].src, self.flows[flow_idx].dst);
        let ack = Packet {
            flow: flow_idx,
            seq: 0,
            kind: PacketKind::Ack,
            payload_bytes: 0,
            wire_bytes: ACK_WIRE_BYTES,
            src: dst,
            dst: src,
            path_trace: vec![dst],
            send_time_us: self.now,
            retransmitted: false,
            ack_seq,
        };
        self.forward_from(ack, dst);
    }

    fn on_tcp_ack(&mut self, packet: Packet) {
        let flow_idx = packet.flow;
        let now = self.now;
        let action = {
            let tx = self.flows[flow_idx].tcp_tx.as_mut().expect("tcp flow");
            tx.on_ack(packet.ack_seq, now)
        };
        if action.retransmit {
            self.tcp_retransmit(flow_idx);
        }
        if action.rearm_timer {
            self.tcp_arm_timer(flow_idx);
        }
        self.tcp_pump(flow_idx);
    }

    fn on_tcp_timeout(&mut self, flow_idx: usize, generation: u64) {
        let fire = {
            let tx = self.flows[flow_idx].tcp_tx.as_mut().expect("tcp flow");
            tx.on_timeout(generation)
        };
        if fire {
            self.tcp_retransmit(flow_idx);
            self.tcp_arm_timer(flow_idx);
        }
    }

    fn tcp_pump(&mut self, flow_idx: usize) {
        let (src, dst) = (self.flows[flow_idx].src, self.flows[flow_idx].dst);
        loop {
            let now = self.now;
            let seg = {
                let tx = self.flows[flow_idx].tcp_tx.as_mut().expect("tcp flow");
                tx.next_fresh_segment(now)
            };
            let Some((seq, payload)) = seg else { break };
            let packet = Packet {
                flow: flow_idx,
                seq,
                kind: PacketKind::Data,
                payload_bytes: payload,
                wire_bytes: payload,
                src,
                dst,
                path_trace: vec![src],
                send_time_us: now,
                retransmitted: false,
                ack_seq: 0,
            };
            self.flows[flow_idx].sent_bytes += payload;
            self.forward_from(packet, src);
        }
    }

    fn tcp_retransmit(&mut self, flow_idx: usize) {
        let now = self.now;
        let (src, dst) = (self.flows[flow_idx].src, self.flows[flow_idx].dst);
        let seg = {
            let tx = self.flows[flow_idx].tcp_tx.as_mut().expect("tcp flow");
            tx.retransmit_segment(now)
        };
        let Some((seq, payload)) = seg else { return };
        let packet = Packet {
            flow: flow_idx,
            seq,
            kind: PacketKind::Data,
            payload_bytes: payload,
            wire_bytes: payload,
            src,
            dst,
            path_trace: vec![src],
            send_time_us: now,
            retransmitted: true,
            ack_seq: 0,
        };
        self.flows[flow_idx].sent_bytes += payload;
        self.forward_from(packet, src);
    }

    fn tcp_arm_timer(&mut self, flow_idx: usize) {
        let now = self.now;
        let arm = {
            let tx = self.flows[flow_idx].tcp_tx.as_mut().expect("tcp flow");
            tx.arm_timer(now)
        };
        if let Some((at, generation)) = arm {
            self.push_event(at, CLASS_DEFAULT, EventKind::TcpTimeout { flow: flow_idx, generation });
        }
    }

    // ---- accounting ----

    /// Per-flow conservation ledger at the current instant. Only valid at
    /// quiescent points (between advances).
    pub fn flow_ledgers(&self) -> Vec<FlowLedger> {
        let mut ledgers: Vec<FlowLedger> = self
            .flows
            .iter()
            .map(|f| FlowLedger {
                sent_bytes: f.sent_bytes,
                delivered_bytes: f.delivered_bytes,
                dropped_bytes: f.dropped_bytes,
                discarded_bytes: f.discarded_bytes,
                queued_bytes: 0,
                in_flight_bytes: 0,
            })
            .collect();
        for e in &self.edges {
            for p in &e.queue {
                if p.kind == PacketKind::Data {
                    ledgers[p.flow].queued_bytes += p.payload_bytes;
                }
            }
        }
        for entry in self.queue.iter() {
            if let EventKind::Arrival { packet, .. } = &entry.kind {
                if packet.kind == PacketKind::Data {
                    ledgers[packet.flow].in_flight_bytes += packet.payload_bytes;
                }
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            if let Some(rx) = &f.tcp_rx {
                ledgers[i].in_flight_bytes += rx.held_bytes();
            }
        }
        ledgers
    }

    /// Mean over send buffers of the time-averaged occupancy fraction, in
    /// percent, for the given step counters.
    pub fn mean_queue_load_pct(edge_counters: &[EdgeStepCounters]) -> f64 {
        if edge_counters.is_empty() {
            return 0.0;
        }
        let sum: f64 = edge_counters.iter().map(|c| c.mean_occupancy_fraction).sum();
        100.0 * sum / edge_counters.len() as f64
    }
}

/// Transmission time of `wire_bytes` on a link of `datarate_mbps`, in
/// microseconds (1 Mbps moves one bit per microsecond). Rounded up.
pub fn tx_time_us(wire_bytes: u64, datarate_mbps: f64) -> u64 {
    let us = (wire_bytes * 8) as f64 / datarate_mbps;
    (us.ceil() as u64).max(1)
}

/// Runs one full episode (the schedule horizon) under static shortest-path
/// routing with the given metric and returns the total dropped payload
/// bytes. Used by traffic intensity calibration.
pub fn dropped_bytes_under_static_routing(
    topology: &Topology,
    schedule: &FlowSchedule,
    metric: crate::policy::baselines::SpMetric,
) -> u64 {
    let weights = crate::policy::baselines::sp_weights(topology, metric);
    let action = crate::policy::actions::to_action_single(topology, &weights)
        .expect("baseline weights are positive");
    let mut tables = ForwardingTables::identity(topology.n_nodes());
    for ((u, dst), next) in action.rows() {
        tables.set(u, dst, next);
    }
    let mut sim = Simulator::new(topology, schedule, tables);
    sim.advance(schedule.horizon_us);
    sim.total_dropped_bytes()
}
