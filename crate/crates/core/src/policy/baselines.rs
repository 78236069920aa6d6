//! Static shortest-path baselines with protocol-style link metrics.

use serde::{Deserialize, Serialize};

use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpMetric {
    /// Datarate-dependent cost: 1e8 / datarate in bps.
    Ospf,
    /// Composite datarate/delay cost: 1e7 / datarate in kbps + delay in
    /// tens of microseconds.
    Eigrp,
    /// Unit cost per link, i.e. lowest hop count.
    Rip,
}

impl SpMetric {
    pub fn parse(s: &str) -> Option<SpMetric> {
        match s.to_ascii_lowercase().as_str() {
            "ospf" => Some(SpMetric::Ospf),
            "eigrp" => Some(SpMetric::Eigrp),
            "rip" => Some(SpMetric::Rip),
            _ => None,
        }
    }
}

/// Per directed edge link weights for the chosen metric, in canonical edge
/// order.
pub fn sp_weights(topology: &Topology, metric: SpMetric) -> Vec<f64> {
    (0..topology.n_directed_edges())
        .map(|e| {
            let datarate_mbps = topology.datarate_mbps(e);
            let delay_us = topology.delay_us(e);
            match metric {
                SpMetric::Ospf => 1e8 / (datarate_mbps * 1e6),
                SpMetric::Eigrp => 1e7 / (datarate_mbps * 1e3) + delay_us as f64 / 10.0,
                SpMetric::Rip => 1.0,
            }
        })
        .collect()
}
