//! Transport state machines: constant-bitrate UDP sources and the reduced
//! TCP model (fixed 1500-byte segments, additive-increase window capped at
//! 64 segments, halving on triple duplicate ACKs or timeout, receiver-side
//! in-order delivery with a 64-segment reorder buffer).

use std::collections::BTreeMap;

use super::{DiscardReason, Packet, TimeUs, MAX_PAYLOAD_BYTES};

pub const TCP_SEGMENT_BYTES: u64 = MAX_PAYLOAD_BYTES;
pub const TCP_WINDOW_CAP: f64 = 64.0;
pub const TCP_INIT_CWND: f64 = 4.0;
pub const TCP_DUP_ACK_THRESHOLD: u32 = 3;
pub const TCP_REORDER_WINDOW: u64 = 64;
pub const TCP_MIN_RTO_US: TimeUs = 10_000;
pub const TCP_INIT_RTO_US: TimeUs = 50_000;

#[derive(Debug)]
pub struct UdpSource {
    interval_us: TimeUs,
    total_bytes: u64,
    n_packets: u64,
}

impl UdpSource {
    pub fn new(bitrate_mbps: f64, duration_us: TimeUs) -> UdpSource {
        let total_bytes = (bitrate_mbps * duration_us as f64 / 8.0) as u64;
        let n_packets = total_bytes.div_ceil(MAX_PAYLOAD_BYTES);
        let interval_us = ((MAX_PAYLOAD_BYTES * 8) as f64 / bitrate_mbps).round().max(1.0) as TimeUs;
        UdpSource { interval_us, total_bytes, n_packets }
    }

    pub fn interval_us(&self) -> TimeUs {
        self.interval_us
    }

    pub fn payload_of(&self, k: u64) -> Option<u64> {
        if k >= self.n_packets {
            return None;
        }
        Some((self.total_bytes - k * MAX_PAYLOAD_BYTES).min(MAX_PAYLOAD_BYTES))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AckAction {
    pub retransmit: bool,
    pub rearm_timer: bool,
}

#[derive(Debug)]
pub struct TcpSender {
    total_bytes: u64,
    n_seg: u64,
    next_seq: u64,
    acked_upto: u64,
    outstanding: u64,
    cwnd: f64,
    dup_acks: u32,
    srtt_us: Option<TimeUs>,
    timer_gen: u64,
    /// (last send time, was a retransmission) per segment.
    sent_info: Vec<(TimeUs, bool)>,
}

impl TcpSender {
    pub fn new(total_bytes: u64) -> TcpSender {
        TcpSender {
            total_bytes,
            n_seg: total_bytes.div_ceil(TCP_SEGMENT_BYTES),
            next_seq: 0,
            acked_upto: 0,
            outstanding: 0,
            cwnd: TCP_INIT_CWND,
            dup_acks: 0,
            srtt_us: None,
            timer_gen: 0,
            sent_info: Vec::new(),
        }
    }

    fn seg_payload(&self, seq: u64) -> u64 {
        (self.total_bytes - seq * TCP_SEGMENT_BYTES).min(TCP_SEGMENT_BYTES)
    }

    pub fn done(&self) -> bool {
        self.acked_upto >= self.n_seg
    }

    pub fn cwnd_segments(&self) -> f64 {
        self.cwnd
    }

    fn record_send(&mut self, seq: u64, now: TimeUs, retransmitted: bool) {
        let idx = seq as usize;
        if self.sent_info.len() <= idx {
            self.sent_info.resize(idx + 1, (0, false));
        }
        self.sent_info[idx] = (now, retransmitted);
    }

    /// Next never-sent segment permitted by the window, if any.
    pub fn next_fresh_segment(&mut self, now: TimeUs) -> Option<(u64, u64)> {
        if self.next_seq >= self.n_seg || self.outstanding >= self.cwnd.floor() as u64 {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.outstanding += 1;
        self.record_send(seq, now, false);
        Some((seq, self.seg_payload(seq)))
    }

    /// Lowest unacknowledged segment, resent on loss detection.
    pub fn retransmit_segment(&mut self, now: TimeUs) -> Option<(u64, u64)> {
        if self.done() || self.acked_upto >= self.next_seq {
            return None;
        }
        let seq = self.acked_upto;
        self.record_send(seq, now, true);
        Some((seq, self.seg_payload(seq)))
    }

    pub fn on_ack(&mut self, ack_seq: u64, now: TimeUs) -> AckAction {
        if ack_seq > self.acked_upto {
            let newly = ack_seq - self.acked_upto;
            let sample_seq = (ack_seq - 1) as usize;
            if let Some(&(sent_at, retx)) = self.sent_info.get(sample_seq) {
                if !retx {
                    let sample = now.saturating_sub(sent_at);
                    self.srtt_us = Some(match self.srtt_us {
                        None => sample,
                        Some(s) => (7 * s + sample) / 8,
                    });
                }
            }
            self.acked_upto = ack_seq;
            self.outstanding = self.outstanding.saturating_sub(newly);
            self.dup_acks = 0;
            self.cwnd = (self.cwnd + newly as f64 / self.cwnd).min(TCP_WINDOW_CAP);
            AckAction { retransmit: false, rearm_timer: true }
        } else if ack_seq == self.acked_upto && self.outstanding > 0 {
            self.dup_acks += 1;
            if self.dup_acks >= TCP_DUP_ACK_THRESHOLD {
                self.dup_acks = 0;
                self.cwnd = (self.cwnd / 2.0).max(1.0);
                AckAction { retransmit: true, rearm_timer: true }
            } else {
                AckAction::default()
            }
        } else {
            AckAction::default()
        }
    }

    /// True when the timer with this generation is still live and should
    /// trigger a retransmission.
    pub fn on_timeout(&mut self, generation: u64) -> bool {
        if generation != self.timer_gen || self.done() || self.outstanding == 0 {
            return false;
        }
        self.cwnd = (self.cwnd / 2.0).max(1.0);
        true
    }

    fn rto_us(&self) -> TimeUs {
        match self.srtt_us {
            None => TCP_INIT_RTO_US,
            Some(s) => (2 * s).max(TCP_MIN_RTO_US),
        }
    }

    /// Invalidates any live timer and arms a new one unless the flow is
    /// idle or complete.
    pub fn arm_timer(&mut self, now: TimeUs) -> Option<(TimeUs, u64)> {
        self.timer_gen += 1;
        if self.done() || self.outstanding == 0 {
            return None;
        }
        Some((now + self.rto_us(), self.timer_gen))
    }
}

pub enum RxOutcome {
    Deliver(Vec<Packet>),
    Held,
    Discard(Packet, DiscardReason),
}

#[derive(Debug)]
pub struct TcpReceiver {
    expected: u64,
    held: BTreeMap<u64, Packet>,
    held_bytes: u64,
}

impl TcpReceiver {
    pub fn new() -> TcpReceiver {
        TcpReceiver { expected: 0, held: BTreeMap::new(), held_bytes: 0 }
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    pub fn held_bytes(&self) -> u64 {
        self.held_bytes
    }

    pub fn accept(&mut self, packet: Packet) -> RxOutcome {
        let seq = packet.seq;
        if seq < self.expected || self.held.contains_key(&seq) {
            return RxOutcome::Discard(packet, DiscardReason::Duplicate);
        }
        if seq == self.expected {
            self.expected += 1;
            let mut ready = vec![packet];
            while let Some(p) = self.held.remove(&self.expected) {
                self.held_bytes -= p.payload_bytes;
                self.expected += 1;
                ready.push(p);
            }
            RxOutcome::Deliver(ready)
        } else if seq < self.expected + TCP_REORDER_WINDOW {
            self.held_bytes += packet.payload_bytes;
            self.held.insert(seq, packet);
            RxOutcome::Held
        } else {
            RxOutcome::Discard(packet, DiscardReason::BeyondReorderWindow)
        }
    }
}
