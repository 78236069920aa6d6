//! Routing policies: the two-stage neural policy (message-passing network
//! producing per-edge log-space weight distributions, followed by the
//! Dijkstra action stage), the graph value function, and the static
//! shortest-path baselines.

pub mod actions;
pub mod baselines;
pub mod mpn;

pub use actions::{to_action_local, to_action_single, RoutingAction};
pub use baselines::{sp_weights, SpMetric};
pub use mpn::{
    act, lognormal_entropy, lognormal_kl, lognormal_logpdf, ActResult, GraphBatch, MpnConfig,
    PolicyNet, PolicyOutput, ValueNet,
};

/// Tracks the previously emitted link weights of one policy instance so
/// they can be supplied as an edge feature on the next observation.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    prev_weights: Vec<f64>,
    feed_previous: bool,
}

impl PolicyRunner {
    pub fn new(n_edges: usize, feed_previous: bool) -> PolicyRunner {
        PolicyRunner { prev_weights: vec![0.0; n_edges], feed_previous }
    }

    /// Zeroes the cache at episode boundaries.
    pub fn reset(&mut self) {
        self.prev_weights.iter_mut().for_each(|w| *w = 0.0);
    }

    /// Clones the observation with the previous-weight feature injected.
    pub fn prepare(&self, graph: &crate::telemetry::ObservationGraph) -> crate::telemetry::ObservationGraph {
        let mut g = graph.clone();
        if self.feed_previous {
            g.inject_previous_weights(&self.prev_weights);
        }
        g
    }

    pub fn remember(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.prev_weights.len());
        self.prev_weights.copy_from_slice(weights);
    }

    pub fn previous_weights(&self) -> &[f64] {
        &self.prev_weights
    }
}
