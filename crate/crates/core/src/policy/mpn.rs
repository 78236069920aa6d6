//! Message-passing policy and value networks over attributed graphs.
//!
//! The policy runs L rounds of edge/node/global latent updates (each an MLP
//! with layer normalization inside a residual connection, aggregation by
//! concatenated mean and minimum), then reads two values (mu, sigma) off
//! every directed edge. Link weights are exp(mu) at inference; during
//! exploration they are sampled from the per-edge log-normal. The value
//! network shares the MPN structure and pools node readouts with a global
//! max into one scalar per graph.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{xavier, xavier_scaled, Array, ParamSet, Tape, Var};
use crate::telemetry::{ObservationGraph, EDGE_FEATURES, GLOBAL_FEATURES, NODE_FEATURES};

pub const SIGMA_FLOOR: f64 = 1e-4;
/// Clamp on log-space weights before exponentiation.
pub const LOG_WEIGHT_CLAMP: f64 = 30.0;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MpnConfig {
    pub message_passing_steps: usize,
    pub latent_dim: usize,
    pub mlp_hidden_layers: usize,
    pub mlp_hidden_dim: usize,
    pub leaky_relu_slope: f64,
    /// Predict weights in log space (exp head); the ablation alternative is
    /// a direct softplus head.
    pub log_space: bool,
    pub feed_previous_weights: bool,
    /// Aggregate incoming (rather than outgoing) edge latents in the node
    /// update.
    pub aggregate_incoming: bool,
}

impl Default for MpnConfig {
    fn default() -> MpnConfig {
        MpnConfig {
            message_passing_steps: 4,
            latent_dim: 32,
            mlp_hidden_layers: 2,
            mlp_hidden_dim: 32,
            leaky_relu_slope: 0.01,
            log_space: true,
            feed_previous_weights: true,
            aggregate_incoming: true,
        }
    }
}

/// Several observation graphs merged into one disjoint union for batched
/// forward passes.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub node_feats: Array,
    pub edge_feats: Array,
    pub glob_feats: Array,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub node_graph: Vec<usize>,
    pub edge_graph: Vec<usize>,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&ObservationGraph]) -> GraphBatch {
        assert!(!graphs.is_empty());
        let n_nodes: usize = graphs.iter().map(|g| g.n_nodes).sum();
        let n_edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut node_feats = Vec::with_capacity(n_nodes * NODE_FEATURES);
        let mut edge_feats = Vec::with_capacity(n_edges * EDGE_FEATURES);
        let mut glob_feats = Vec::with_capacity(graphs.len() * GLOBAL_FEATURES);
        let mut edge_src = Vec::with_capacity(n_edges);
        let mut edge_dst = Vec::with_capacity(n_edges);
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut edge_graph = Vec::with_capacity(n_edges);
        let mut node_offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            node_feats.extend_from_slice(&g.node_features);
            edge_feats.extend_from_slice(&g.edge_features);
            glob_feats.extend_from_slice(&g.global_features);
            for &(u, v) in &g.edges {
                edge_src.push(node_offset + u);
                edge_dst.push(node_offset + v);
                edge_graph.push(gi);
            }
            node_graph.extend(std::iter::repeat_n(gi, g.n_nodes));
            node_offset += g.n_nodes;
        }
        GraphBatch {
            n_graphs: graphs.len(),
            n_nodes,
            n_edges,
            node_feats: Array::from_vec(n_nodes, NODE_FEATURES, node_feats),
            edge_feats: Array::from_vec(n_edges, EDGE_FEATURES, edge_feats),
            glob_feats: Array::from_vec(graphs.len(), GLOBAL_FEATURES, glob_feats),
            edge_src,
            edge_dst,
            node_graph,
            edge_graph,
        }
    }

    pub fn single(g: &ObservationGraph) -> GraphBatch {
        GraphBatch::from_graphs(&[g])
    }
}

struct Bound<'a> {
    params: &'a ParamSet,
    vars: &'a [Var],
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Var {
        for (i, (n, _)) in self.params.iter().enumerate() {
            if n == name {
                return self.vars[i];
            }
        }
        panic!("unknown parameter {name}");
    }
}

fn push_mlp(params: &mut ParamSet, rng: &mut ChaCha20Rng, prefix: &str, dims: &[usize]) {
    for j in 0..dims.len() - 1 {
        params.push(format!("{prefix}.l{j}.w"), xavier(rng, dims[j], dims[j + 1]));
        params.push(format!("{prefix}.l{j}.b"), Array::zeros(1, dims[j + 1]));
    }
}

fn push_layer_norm(params: &mut ParamSet, prefix: &str, dim: usize) {
    params.push(format!("{prefix}.ln.g"), Array::from_vec(1, dim, vec![1.0; dim]));
    params.push(format!("{prefix}.ln.b"), Array::zeros(1, dim));
}

fn apply_mlp(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, layers: usize, slope: f64) -> Var {
    let mut h = x;
    for j in 0..layers {
        let w = bound.get(&format!("{prefix}.l{j}.w"));
        let b = bound.get(&format!("{prefix}.l{j}.b"));
        h = tape.matmul(h, w);
        h = tape.add_row(h, b);
        if j + 1 < layers {
            h = tape.leaky_relu(h, slope);
        }
    }
    h
}

fn apply_layer_norm(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Var {
    let g = bound.get(&format!("{prefix}.ln.g"));
    let b = bound.get(&format!("{prefix}.ln.b"));
    tape.layer_norm(x, g, b, 1e-5)
}

/// Pushes the shared MPN trunk parameters (encoders plus per-step update
/// functions) onto `params`.
fn init_trunk(params: &mut ParamSet, config: &MpnConfig, rng: &mut ChaCha20Rng) {
    let d = config.latent_dim;
    let h = config.mlp_hidden_dim;
    let layers = config.mlp_hidden_layers;
    let mlp_dims = |input: usize| -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(h, layers));
        dims.push(d);
        dims
    };
    push_mlp(params, rng, "enc_node", &[NODE_FEATURES, d]);
    push_mlp(params, rng, "enc_edge", &[EDGE_FEATURES, d]);
    push_mlp(params, rng, "enc_glob", &[GLOBAL_FEATURES, d]);
    for l in 0..config.message_passing_steps {
        push_mlp(params, rng, &format!("step{l}.edge"), &mlp_dims(4 * d));
        push_layer_norm(params, &format!("step{l}.edge"), d);
        push_mlp(params, rng, &format!("step{l}.node"), &mlp_dims(3 * d));
        push_layer_norm(params, &format!("step{l}.node"), d);
        push_mlp(params, rng, &format!("step{l}.glob"), &mlp_dims(5 * d));
        push_layer_norm(params, &format!("step{l}.glob"), d);
    }
}

/// Runs the MPN trunk, returning final (node, edge, global) latents.
fn run_trunk(
    tape: &mut Tape,
    bound: &Bound,
    config: &MpnConfig,
    batch: &GraphBatch,
) -> (Var, Var, Var) {
    let slope = config.leaky_relu_slope;
    let layers_in_mlp = config.mlp_hidden_layers + 1;

    let node_in = tape.leaf(batch.node_feats.clone());
    let edge_in = tape.leaf(batch.edge_feats.clone());
    let glob_in = tape.leaf(batch.glob_feats.clone());

    let mut node = apply_mlp(tape, bound, "enc_node", node_in, 1, slope);
    let mut edge = apply_mlp(tape, bound, "enc_edge", edge_in, 1, slope);
    let mut glob = apply_mlp(tape, bound, "enc_glob", glob_in, 1, slope);

    for l in 0..config.message_passing_steps {
        // edge update from both endpoint latents, the edge latent and the
        // owning graph's global latent
        let src = tape.gather_rows(node, &batch.edge_src);
        let dst = tape.gather_rows(node, &batch.edge_dst);
        let glob_per_edge = tape.gather_rows(glob, &batch.edge_graph);
        let e_in = tape.concat_cols(&[src, dst, edge, glob_per_edge]);
        let e_upd = apply_mlp(tape, bound, &format!("step{l}.edge"), e_in, layers_in_mlp, slope);
        let e_upd = apply_layer_norm(tape, bound, &format!("step{l}.edge"), e_upd);
        edge = tape.add(edge, e_upd);

        // node update from the mean and minimum over adjacent edge latents
        let agg_rows = if config.aggregate_incoming { &batch.edge_dst } else { &batch.edge_src };
        let mean = tape.segment_mean(edge, agg_rows, batch.n_nodes);
        let min = tape.segment_min(edge, agg_rows, batch.n_nodes);
        let n_in = tape.concat_cols(&[node, mean, min]);
        let n_upd = apply_mlp(tape, bound, &format!("step{l}.node"), n_in, layers_in_mlp, slope);
        let n_upd = apply_layer_norm(tape, bound, &format!("step{l}.node"), n_upd);
        node = tape.add(node, n_upd);

        // global update from node and edge aggregates
        let nm = tape.segment_mean(node, &batch.node_graph, batch.n_graphs);
        let nmin = tape.segment_min(node, &batch.node_graph, batch.n_graphs);
        let em = tape.segment_mean(edge, &batch.edge_graph, batch.n_graphs);
        let emin = tape.segment_min(edge, &batch.edge_graph, batch.n_graphs);
        let g_in = tape.concat_cols(&[nm, nmin, em, emin, glob]);
        let g_upd = apply_mlp(tape, bound, &format!("step{l}.glob"), g_in, layers_in_mlp, slope);
        let g_upd = apply_layer_norm(tape, bound, &format!("step{l}.glob"), g_upd);
        glob = tape.add(glob, g_upd);
    }
    (node, edge, glob)
}

/// Per-edge output heads of the policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Policy network: MPN trunk plus a two-value edge readout.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub config: MpnConfig,
    pub params: ParamSet,
}

impl PolicyNet {
    pub fn init(config: MpnConfig, seed: u64) -> PolicyNet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x706f_6c69);
        let mut params = ParamSet::new();
        init_trunk(&mut params, &config, &mut rng);
        let d = config.latent_dim;
        params.push("readout.w", xavier_scaled(&mut rng, d, 2, 0.1));
        params.push("readout.b", Array::zeros(1, 2));
        PolicyNet { config, params }
    }

    /// Tape forward over a batch: returns per-edge mu and sigma columns and
    /// the bound parameter vars for gradient collection.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &GraphBatch) -> (Var, Var, Vec<Var>) {
        let vars = self.params.bind(tape);
        let bound = Bound { params: &self.params, vars: &vars };
        let (_, edge, _) = run_trunk(tape, &bound, &self.config, batch);
        let w = bound.get("readout.w");
        let b = bound.get("readout.b");
        let out = tape.matmul(edge, w);
        let out = tape.add_row(out, b);
        let mu = tape.slice_cols(out, 0, 1);
        let sigma_raw = tape.slice_cols(out, 1, 1);
        let sigma = tape.softplus(sigma_raw);
        let sigma = tape.add_scalar(sigma, SIGMA_FLOOR);
        (mu, sigma, vars)
    }

    /// Value-only forward without gradient bookkeeping.
    pub fn infer(&self, graph: &ObservationGraph) -> PolicyOutput {
        let batch = GraphBatch::single(graph);
        let mut tape = Tape::new(false);
        let (mu, sigma, _) = self.forward_tape(&mut tape, &batch);
        PolicyOutput {
            mu: tape.value(mu).data.clone(),
            sigma: tape.value(sigma).data.clone(),
        }
    }

    pub fn infer_batch(&self, batch: &GraphBatch) -> PolicyOutput {
        let mut tape = Tape::new(false);
        let (mu, sigma, _) = self.forward_tape(&mut tape, batch);
        PolicyOutput {
            mu: tape.value(mu).data.clone(),
            sigma: tape.value(sigma).data.clone(),
        }
    }
}

/// Value network: MPN trunk, node-level MLP and readout, global max pool.
#[derive(Debug, Clone)]
pub struct ValueNet {
    pub config: MpnConfig,
    pub params: ParamSet,
}

impl ValueNet {
    pub fn init(config: MpnConfig, seed: u64) -> ValueNet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7661_6c75);
        let mut params = ParamSet::new();
        init_trunk(&mut params, &config, &mut rng);
        let d = config.latent_dim;
        let h = config.mlp_hidden_dim;
        let mut dims = vec![d];
        dims.extend(std::iter::repeat_n(h, config.mlp_hidden_layers));
        dims.push(d);
        push_mlp(&mut params, &mut rng, "value_mlp", &dims);
        params.push("value_readout.w", xavier(&mut rng, d, 1));
        params.push("value_readout.b", Array::zeros(1, 1));
        ValueNet { config, params }
    }

    /// Returns one scalar per graph ([G, 1]) plus the bound parameter vars.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &GraphBatch) -> (Var, Vec<Var>) {
        let vars = self.params.bind(tape);
        let bound = Bound { params: &self.params, vars: &vars };
        let (node, _, _) = run_trunk(tape, &bound, &self.config, batch);
        let layers = self.config.mlp_hidden_layers + 1;
        let h = apply_mlp(tape, &bound, "value_mlp", node, layers, self.config.leaky_relu_slope);
        let h = tape.leaky_relu(h, self.config.leaky_relu_slope);
        let w = bound.get("value_readout.w");
        let b = bound.get("value_readout.b");
        let per_node = tape.matmul(h, w);
        let per_node = tape.add_row(per_node, b);
        let pooled = tape.segment_max(per_node, &batch.node_graph, batch.n_graphs);
        (pooled, vars)
    }

    pub fn infer(&self, graph: &ObservationGraph) -> f64 {
        let batch = GraphBatch::single(graph);
        let mut tape = Tape::new(false);
        let (v, _) = self.forward_tape(&mut tape, &batch);
        tape.value(v).data[0]
    }

    pub fn infer_batch(&self, batch: &GraphBatch) -> Vec<f64> {
        let mut tape = Tape::new(false);
        let (v, _) = self.forward_tape(&mut tape, batch);
        tape.value(v).data.clone()
    }
}

/// Sampled (or deterministic) weights plus their joint log-probability.
#[derive(Debug, Clone)]
pub struct ActResult {
    pub weights: Vec<f64>,
    pub log_prob: f64,
}

/// Log-density of the per-edge log-normal at `w`.
pub fn lognormal_logpdf(w: f64, mu: f64, sigma: f64) -> f64 {
    let lnw = w.ln();
    let z = (lnw - mu) / sigma;
    -lnw - sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
}

/// Closed-form entropy of one log-normal edge distribution.
pub fn lognormal_entropy(mu: f64, sigma: f64) -> f64 {
    mu + 0.5 * (LN_2PI + 1.0) + sigma.ln()
}

/// KL divergence between log-normals in log space (normal closed form).
pub fn lognormal_kl(mu_old: f64, sigma_old: f64, mu_new: f64, sigma_new: f64) -> f64 {
    (sigma_new / sigma_old).ln()
        + (sigma_old * sigma_old + (mu_old - mu_new) * (mu_old - mu_new))
            / (2.0 * sigma_new * sigma_new)
        - 0.5
}

/// Turns policy heads into link weights. With `explore` the weights are
/// drawn from the per-edge log-normal and the joint log-probability is
/// accumulated; otherwise the deterministic head is used. With log-space
/// prediction disabled the deterministic path is softplus(mu).
pub fn act(
    output: &PolicyOutput,
    log_space: bool,
    explore: bool,
    rng: &mut ChaCha20Rng,
) -> Result<ActResult> {
    let m = output.mu.len();
    if output.sigma.len() != m {
        return Err(CoreError::FeatureLayout("mu/sigma length mismatch".into()));
    }
    if !log_space {
        let weights = output
            .mu
            .iter()
            .map(|&mu| crate::nn::softplus(mu).max(1e-9))
            .collect();
        return Ok(ActResult { weights, log_prob: 0.0 });
    }
    let mut weights = Vec::with_capacity(m);
    let mut log_prob = 0.0;
    for i in 0..m {
        let (mu, sigma) = (output.mu[i], output.sigma[i]);
        if !(sigma > 0.0) {
            return Err(CoreError::FeatureLayout(format!("non-positive sigma {sigma}")));
        }
        let lnw = if explore {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            (mu + sigma * z).clamp(-LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP)
        } else {
            mu.clamp(-LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP)
        };
        let w = lnw.exp();
        log_prob += lognormal_logpdf(w, mu, sigma);
        weights.push(w);
    }
    Ok(ActResult { weights, log_prob })
}

use rand_distr::Distribution;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{EDGE_FEATURES, NODE_FEATURES};

    /// A small synthetic observation graph with pseudo-random features.
    pub(crate) fn synth_graph(n: usize, edges: &[(usize, usize)], salt: u64) -> ObservationGraph {
        let mix = |a: u64, b: u64| -> f64 {
            let mut x = a.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(b);
            x ^= x >> 33;
            x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
            x ^= x >> 33;
            (x % 1_000) as f64 / 500.0 - 1.0
        };
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        let node_features = (0..n * NODE_FEATURES).map(|i| mix(salt, i as u64)).collect();
        let edge_features = (0..edges.len() * EDGE_FEATURES)
            .map(|i| mix(salt ^ 0xabcd, i as u64))
            .collect();
        let global_features = (0..crate::telemetry::GLOBAL_FEATURES)
            .map(|i| mix(salt ^ 0x1234, i as u64))
            .collect();
        ObservationGraph {
            observer_id: -1,
            n_nodes: n,
            edges,
            node_features,
            edge_features,
            global_features,
        }
    }

    fn tiny_config() -> MpnConfig {
        MpnConfig {
            message_passing_steps: 2,
            latent_dim: 6,
            mlp_hidden_dim: 6,
            ..MpnConfig::default()
        }
    }

    #[test]
    fn zero_readout_gives_unit_weights() {
        let mut net = PolicyNet::init(MpnConfig::default(), 3);
        *net.params.get_mut("readout.w") = Array::zeros(32, 2);
        *net.params.get_mut("readout.b") = Array::zeros(1, 2);
        let g = synth_graph(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)], 9);
        let out = net.infer(&g);
        assert!(out.mu.iter().all(|&m| m == 0.0));
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let act = act(&out, true, false, &mut rng).unwrap();
        assert!(act.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn permutation_equivariance() {
        let net = PolicyNet::init(tiny_config(), 11);
        let edges = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0), (2, 3), (3, 2)];
        let g = synth_graph(4, &edges, 5);

        // relabel nodes by the permutation p
        let p = [2usize, 0, 3, 1];
        let mut perm_edges: Vec<(usize, usize, usize)> = g
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| (p[u], p[v], i))
            .collect();
        perm_edges.sort_unstable();
        let mut node_features = vec![0.0; g.node_features.len()];
        for u in 0..4 {
            for k in 0..NODE_FEATURES {
                node_features[p[u] * NODE_FEATURES + k] = g.node_features[u * NODE_FEATURES + k];
            }
        }
        let mut edge_features = vec![0.0; g.edge_features.len()];
        for (new_idx, &(_, _, old_idx)) in perm_edges.iter().enumerate() {
            for k in 0..EDGE_FEATURES {
                edge_features[new_idx * EDGE_FEATURES + k] =
                    g.edge_features[old_idx * EDGE_FEATURES + k];
            }
        }
        let permuted = ObservationGraph {
            observer_id: -1,
            n_nodes: 4,
            edges: perm_edges.iter().map(|&(u, v, _)| (u, v)).collect(),
            node_features,
            edge_features,
            global_features: g.global_features.clone(),
        };

        let base = net.infer(&g);
        let alt = net.infer(&permuted);
        for (new_idx, &(_, _, old_idx)) in perm_edges.iter().enumerate() {
            assert!(
                (base.mu[old_idx] - alt.mu[new_idx]).abs() < 1e-9,
                "mu mismatch at edge {old_idx}"
            );
            assert!((base.sigma[old_idx] - alt.sigma[new_idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn batched_disjoint_copies_match_single() {
        let net = PolicyNet::init(tiny_config(), 13);
        let g = synth_graph(5, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 4), (4, 3)], 21);
        let single = net.infer(&g);
        let batch = GraphBatch::from_graphs(&[&g, &g]);
        let double = net.infer_batch(&batch);
        let m = g.edges.len();
        for i in 0..m {
            assert!((double.mu[i] - single.mu[i]).abs() < 1e-12);
            assert!((double.mu[m + i] - single.mu[i]).abs() < 1e-12);
            assert!((double.sigma[m + i] - single.sigma[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn value_permutation_invariance_and_batching() {
        let net = ValueNet::init(tiny_config(), 17);
        let edges = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)];
        let g = synth_graph(3, &edges, 2);

        let p = [1usize, 2, 0];
        let mut perm_edges: Vec<(usize, usize, usize)> = g
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| (p[u], p[v], i))
            .collect();
        perm_edges.sort_unstable();
        let mut node_features = vec![0.0; g.node_features.len()];
        for u in 0..3 {
            for k in 0..NODE_FEATURES {
                node_features[p[u] * NODE_FEATURES + k] = g.node_features[u * NODE_FEATURES + k];
            }
        }
        let mut edge_features = vec![0.0; g.edge_features.len()];
        for (new_idx, &(_, _, old_idx)) in perm_edges.iter().enumerate() {
            for k in 0..EDGE_FEATURES {
                edge_features[new_idx * EDGE_FEATURES + k] =
                    g.edge_features[old_idx * EDGE_FEATURES + k];
            }
        }
        let permuted = ObservationGraph {
            observer_id: -1,
            n_nodes: 3,
            edges: perm_edges.iter().map(|&(u, v, _)| (u, v)).collect(),
            node_features,
            edge_features,
            global_features: g.global_features.clone(),
        };
        assert!((net.infer(&g) - net.infer(&permuted)).abs() < 1e-9);

        let other = synth_graph(3, &edges, 77);
        let batch = GraphBatch::from_graphs(&[&g, &other]);
        let batched = net.infer_batch(&batch);
        assert!((batched[0] - net.infer(&g)).abs() < 1e-12);
        assert!((batched[1] - net.infer(&other)).abs() < 1e-12);
    }

    #[test]
    fn zero_value_readout_gives_zero() {
        let mut net = ValueNet::init(MpnConfig::default(), 23);
        *net.params.get_mut("value_readout.w") = Array::zeros(32, 1);
        *net.params.get_mut("value_readout.b") = Array::zeros(1, 1);
        let g = synth_graph(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)], 8);
        assert_eq!(net.infer(&g), 0.0);
    }

    #[test]
    fn lognormal_sample_mean_matches_analytic_moment() {
        let (mu, sigma) = (0.3, 0.4);
        let out = PolicyOutput { mu: vec![mu], sigma: vec![sigma] };
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += act(&out, true, true, &mut rng).unwrap().weights[0];
        }
        let mean = sum / n as f64;
        let analytic = (mu + sigma * sigma / 2.0_f64).exp();
        assert!(
            (mean - analytic).abs() / analytic < 0.02,
            "sample mean {mean} vs analytic {analytic}"
        );
    }

    #[test]
    fn deterministic_inference_ignores_rng() {
        let out = PolicyOutput { mu: vec![0.5, -1.0], sigma: vec![0.3, 0.7] };
        let mut r1 = ChaCha20Rng::seed_from_u64(1);
        let mut r2 = ChaCha20Rng::seed_from_u64(2);
        let a = act(&out, true, false, &mut r1).unwrap();
        let b = act(&out, true, false, &mut r2).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.weights, vec![0.5f64.exp(), (-1.0f64).exp()]);
    }

    #[test]
    fn tiny_sigma_logprob_finite_and_peaked_at_exp_mu() {
        let mu: f64 = 0.7;
        let sigma = 1e-4;
        let w_star = mu.exp();
        let at_mode = lognormal_logpdf(w_star, mu, sigma);
        assert!(at_mode.is_finite());
        for off in [0.99, 1.01] {
            assert!(at_mode > lognormal_logpdf(w_star * off, mu, sigma));
        }
    }

    #[test]
    fn softplus_head_when_log_space_disabled() {
        let out = PolicyOutput { mu: vec![0.0, 2.0, -50.0], sigma: vec![0.5, 0.5, 0.5] };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let act = act(&out, false, false, &mut rng).unwrap();
        assert!((act.weights[0] - 2.0f64.ln()).abs() < 1e-12);
        assert!((act.weights[1] - crate::nn::softplus(2.0)).abs() < 1e-12);
        assert!(act.weights[2] > 0.0);
    }

    #[test]
    fn full_pipeline_finite_difference() {
        // gradient of the joint log-probability through MPN, heads and the
        // log-normal density
        let net = PolicyNet::init(tiny_config(), 31);
        let g = synth_graph(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)], 3);
        let batch = GraphBatch::single(&g);
        let lnw: Vec<f64> = (0..batch.n_edges).map(|i| 0.1 * i as f64 - 0.2).collect();

        let build = |tape: &mut Tape, params: &ParamSet, vars: &[Var]| -> Var {
            let bound = Bound { params, vars };
            let (_, edge, _) = run_trunk(tape, &bound, &net.config, &batch);
            let w = bound.get("readout.w");
            let b = bound.get("readout.b");
            let out = tape.matmul(edge, w);
            let out = tape.add_row(out, b);
            let mu = tape.slice_cols(out, 0, 1);
            let sigma_raw = tape.slice_cols(out, 1, 1);
            let sigma = tape.softplus(sigma_raw);
            let sigma = tape.add_scalar(sigma, SIGMA_FLOOR);
            // log-normal log-density of the fixed sample, summed over edges
            let lnw_leaf = tape.leaf(Array::column(lnw.clone()));
            let diff = tape.sub(lnw_leaf, mu);
            let sq = tape.square(diff);
            let var2 = tape.square(sigma);
            let var2 = tape.scale(var2, 2.0);
            let q = tape.div(sq, var2);
            let log_sigma = tape.log(sigma);
            let t1 = tape.add(q, log_sigma);
            let neg = tape.neg(t1);
            let shifted = tape.add_scalar(neg, -0.5 * LN_2PI);
            tape.sum_all(shifted)
        };

        // analytic gradients
        let mut tape = Tape::new(true);
        let vars = net.params.bind(&mut tape);
        let loss = build(&mut tape, &net.params, &vars);
        let node_grads = tape.backward(loss);
        let grads = net.params.collect_grads(&vars, &node_grads);

        // compare >= 50 coordinates spread across all parameters
        let eval = |p: &ParamSet| -> f64 {
            let mut t = Tape::new(false);
            let vars = p.bind(&mut t);
            let loss = build(&mut t, p, &vars);
            t.value(loss).data[0]
        };
        let mut checked = 0;
        let mut stride = 0;
        for entry in 0..net.params.len() {
            let n = net.params.entry(entry).1.len();
            let k = stride % n;
            stride += 7;
            let x = net.params.entry(entry).1.data[k];
            let eps = 1e-5 * x.abs().max(1.0);
            let mut plus = net.params.clone();
            plus.entry_mut(entry).data[k] = x + eps;
            let mut minus = net.params.clone();
            minus.entry_mut(entry).data[k] = x - eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let analytic = grads[entry].data[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "entry {entry} coord {k}: {analytic} vs {numeric}"
            );
            checked += 1;
        }
        assert!(checked >= 50, "only {checked} coordinates checked");
    }
}
