//! The closed-loop routing environment: a step loop that assembles
//! observations per deployment mode, installs forwarding actions after the
//! mode's communication and inference delays, advances the packet
//! simulator, and computes global/local/mixed rewards plus episode metrics.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::netsim::{ForwardingTables, Simulator, StepTrace, TerminalKind, TimeUs};
use crate::policy::actions::RoutingAction;
use crate::policy::baselines::{sp_weights, SpMetric};
use crate::telemetry::{
    assemble_observation, central_node, delay_matrix, DelayMatrix, ObservationGraph, Observer,
    SnapshotStore,
};
use crate::topology::{NodeId, Topology};
use crate::traffic::FlowSchedule;

/// Spatial decay applied per path hop when attributing terminal packet
/// events to the routers that forwarded the packet.
pub const LAMBDA_DECAY: f64 = 0.8;
/// Number of trailing path hops that receive a share.
pub const DECAY_HOPS: usize = 3;

const MB: f64 = 1_000_000.0;

/// Observer/agent placement combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeploymentMode {
    BirdseyeSingle,
    CentralSingle,
    BirdseyeMulti,
    CentralMulti,
    LocalMulti,
}

impl DeploymentMode {
    pub fn is_multi(self) -> bool {
        matches!(
            self,
            DeploymentMode::BirdseyeMulti | DeploymentMode::CentralMulti | DeploymentMode::LocalMulti
        )
    }

    pub fn is_central(self) -> bool {
        matches!(self, DeploymentMode::CentralSingle | DeploymentMode::CentralMulti)
    }

    pub fn is_birdseye(self) -> bool {
        matches!(self, DeploymentMode::BirdseyeSingle | DeploymentMode::BirdseyeMulti)
    }

    pub fn parse(s: &str) -> Option<DeploymentMode> {
        match s.to_ascii_lowercase().as_str() {
            "birdseye-single" => Some(DeploymentMode::BirdseyeSingle),
            "central-single" => Some(DeploymentMode::CentralSingle),
            "birdseye-multi" => Some(DeploymentMode::BirdseyeMulti),
            "central-multi" => Some(DeploymentMode::CentralMulti),
            "local-multi" => Some(DeploymentMode::LocalMulti),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentMode::BirdseyeSingle => "birdseye-single",
            DeploymentMode::CentralSingle => "central-single",
            DeploymentMode::BirdseyeMulti => "birdseye-multi",
            DeploymentMode::CentralMulti => "central-multi",
            DeploymentMode::LocalMulti => "local-multi",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Steps per episode (H).
    pub steps_per_episode: usize,
    /// Milliseconds per step (tau).
    pub step_ms: u64,
    pub mode: DeploymentMode,
    /// Scaling on measured inference time.
    pub lambda_ac: f64,
    /// Reward mixing weight: 1 is purely global, 0 purely local.
    pub lambda_reward_mix: f64,
}

impl Default for EnvConfig {
    fn default() -> EnvConfig {
        EnvConfig {
            steps_per_episode: 400,
            step_ms: 5,
            mode: DeploymentMode::BirdseyeSingle,
            lambda_ac: 0.2,
            lambda_reward_mix: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 || self.step_ms == 0 {
            return Err(CoreError::Env("episode must have positive extent".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_ac) {
            return Err(CoreError::Env(format!("lambda_ac {} out of [0,1]", self.lambda_ac)));
        }
        if !(0.0..=1.0).contains(&self.lambda_reward_mix) {
            return Err(CoreError::Env(format!(
                "lambda_reward_mix {} out of [0,1]",
                self.lambda_reward_mix
            )));
        }
        Ok(())
    }

    pub fn step_us(&self) -> TimeUs {
        self.step_ms * 1_000
    }

    pub fn episode_us(&self) -> TimeUs {
        self.step_us() * self.steps_per_episode as TimeUs
    }
}

/// Actions handed to `Env::step`: one full routing action in single-agent
/// modes, per-agent row bundles otherwise.
#[derive(Debug, Clone)]
pub enum ActionBundle {
    Single(RoutingAction),
    Multi(Vec<Vec<(NodeId, NodeId)>>),
}

/// Measured (or synthetic) inference times in milliseconds.
#[derive(Debug, Clone)]
pub enum InferenceTimes {
    Single(f64),
    PerAgent(Vec<f64>),
}

impl InferenceTimes {
    pub fn zero(mode: DeploymentMode, n: usize) -> InferenceTimes {
        if mode.is_multi() {
            InferenceTimes::PerAgent(vec![0.0; n])
        } else {
            InferenceTimes::Single(0.0)
        }
    }

    fn for_router(&self, u: NodeId) -> f64 {
        match self {
            InferenceTimes::Single(ms) => *ms,
            InferenceTimes::PerAgent(v) => v[u],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixedReward {
    Single(f64),
    PerAgent(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rewards {
    /// Delivered MB this step.
    pub global: f64,
    /// Spatially decayed per-node attribution of terminal events.
    pub per_node: Vec<f64>,
    pub mixed: MixedReward,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StepMetrics {
    pub delivered_mb: f64,
    pub mean_delay_ms: f64,
    pub queue_load_pct: f64,
    pub discard_mb: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EpisodeMetrics {
    pub delivered_mb: f64,
    pub mean_delay_ms: f64,
    pub queue_load_pct: f64,
    pub discard_mb: f64,
    pub dropped_mb: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<ObservationGraph>,
    pub rewards: Rewards,
    pub metrics: StepMetrics,
    pub done: bool,
}

/// Attributes every terminal event to the routers that decided its fate:
/// the last forwarding node receives the undecayed base value (positive
/// payload MB for deliveries, negative for drops and discards), each
/// earlier node on the path one decay factor less, for up to three hops.
/// Deliveries and receiver discards end at the destination, which made no
/// forwarding decision; drops end at the router that made the fatal one.
pub fn compute_rewards(
    trace: &StepTrace,
    lambda_reward_mix: f64,
    n_nodes: usize,
    multi_agent: bool,
) -> Rewards {
    let mut per_node = vec![0.0; n_nodes];
    let mut global = 0.0;
    for event in &trace.events {
        let magnitude = event.payload_bytes as f64 / MB;
        let (base, chain): (f64, &[NodeId]) = match event.kind {
            TerminalKind::Delivery => {
                global += magnitude;
                (magnitude, &event.path[..event.path.len() - 1])
            }
            TerminalKind::TcpDiscard(_) => (-magnitude, &event.path[..event.path.len() - 1]),
            TerminalKind::Drop(_) => (-magnitude, &event.path[..]),
        };
        for k in 1..=DECAY_HOPS {
            if chain.len() < k {
                break;
            }
            per_node[chain[chain.len() - k]] += base * LAMBDA_DECAY.powi(k as i32 - 1);
        }
    }

    let mixed = if multi_agent {
        MixedReward::PerAgent(
            per_node
                .iter()
                .map(|r| (1.0 - lambda_reward_mix) * r + lambda_reward_mix * global)
                .collect(),
        )
    } else {
        let mean_local = per_node.iter().sum::<f64>() / n_nodes as f64;
        MixedReward::Single((1.0 - lambda_reward_mix) * mean_local + lambda_reward_mix * global)
    };

    Rewards { global, per_node, mixed }
}

/// One environment instance; strictly sequential within an episode.
pub struct Env {
    topology: Topology,
    config: EnvConfig,
    sim: Simulator,
    store: SnapshotStore,
    delays: DelayMatrix,
    central: NodeId,
    step_idx: usize,
    // episode accumulators
    delivered_mb: f64,
    dropped_mb: f64,
    discard_mb: f64,
    delay_sum_ms: f64,
    delay_count: u64,
    queue_load_sum: f64,
}

impl Env {
    /// Initializes the simulator with EIGRP-metric shortest-path forwarding
    /// and returns the step-0 observations.
    pub fn reset(
        topology: &Topology,
        schedule: &FlowSchedule,
        config: EnvConfig,
        _seed: u64,
    ) -> Result<(Env, StepResult)> {
        config.validate()?;
        let weights = sp_weights(topology, SpMetric::Eigrp);
        let action = crate::policy::actions::to_action_single(topology, &weights)?;
        let mut tables = ForwardingTables::identity(topology.n_nodes());
        for ((u, z), v) in action.rows() {
            tables.set(u, z, v);
        }
        let sim = Simulator::new(topology, schedule, tables);
        let delays = delay_matrix(topology);
        let central = central_node(topology);

        let mut store = SnapshotStore::new(topology.n_nodes());
        // zero-valued snapshots at the episode start so the observer's own
        // state exists at t = 0
        let empty = StepTrace {
            from_us: 0,
            to_us: 0,
            events: vec![],
            node_counters: vec![Default::default(); topology.n_nodes()],
            edge_counters: vec![Default::default(); topology.n_directed_edges()],
        };
        store.record(topology, &empty, 0);

        let env = Env {
            topology: topology.clone(),
            config,
            sim,
            store,
            delays,
            central,
            step_idx: 0,
            delivered_mb: 0.0,
            dropped_mb: 0.0,
            discard_mb: 0.0,
            delay_sum_ms: 0.0,
            delay_count: 0,
            queue_load_sum: 0.0,
        };
        let observations = env.observe();
        let n = env.topology.n_nodes();
        let zero_trace = StepTrace {
            from_us: 0,
            to_us: 0,
            events: vec![],
            node_counters: vec![],
            edge_counters: vec![],
        };
        let rewards = compute_rewards(
            &zero_trace,
            env.config.lambda_reward_mix,
            n,
            env.config.mode.is_multi(),
        );
        let result = StepResult {
            observations,
            rewards,
            metrics: StepMetrics::default(),
            done: false,
        };
        Ok((env, result))
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn central(&self) -> NodeId {
        self.central
    }

    pub fn delays(&self) -> &DelayMatrix {
        &self.delays
    }

    pub fn step_idx(&self) -> usize {
        self.step_idx
    }

    pub fn now_us(&self) -> TimeUs {
        self.step_idx as TimeUs * self.config.step_us()
    }

    pub fn done(&self) -> bool {
        self.step_idx >= self.config.steps_per_episode
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    fn assemble(&self, observer: Observer) -> ObservationGraph {
        assemble_observation(
            &self.topology,
            &self.store,
            &self.delays,
            observer,
            self.now_us(),
            self.step_idx,
            self.config.steps_per_episode,
        )
    }

    /// Observations per the deployment mode: one graph in single-agent
    /// modes, one per router otherwise.
    pub fn observe(&self) -> Vec<ObservationGraph> {
        let n = self.topology.n_nodes();
        match self.config.mode {
            DeploymentMode::BirdseyeSingle => vec![self.assemble(Observer::Birdseye)],
            DeploymentMode::CentralSingle => vec![self.assemble(Observer::Node(self.central))],
            DeploymentMode::BirdseyeMulti => {
                let g = self.assemble(Observer::Birdseye);
                vec![g; n]
            }
            DeploymentMode::CentralMulti => {
                let g = self.assemble(Observer::Node(self.central));
                vec![g; n]
            }
            DeploymentMode::LocalMulti => {
                (0..n).map(|v| self.assemble(Observer::Node(v))).collect()
            }
        }
    }

    /// The central observer's view, used by centralized value functions.
    pub fn central_observation(&self) -> ObservationGraph {
        self.assemble(Observer::Node(self.central))
    }

    pub fn birdseye_observation(&self) -> ObservationGraph {
        self.assemble(Observer::Birdseye)
    }

    fn validate_actions(&self, actions: &ActionBundle) -> Result<()> {
        let n = self.topology.n_nodes();
        match (actions, self.config.mode.is_multi()) {
            (ActionBundle::Single(action), false) => {
                if action.n_nodes() != n {
                    return Err(CoreError::Env(format!(
                        "action covers {} nodes, topology has {n}",
                        action.n_nodes()
                    )));
                }
                Ok(())
            }
            (ActionBundle::Multi(per_agent), true) => {
                if per_agent.len() != n {
                    return Err(CoreError::Env(format!(
                        "expected rows for {n} agents, got {}",
                        per_agent.len()
                    )));
                }
                let mut missing = Vec::new();
                for (u, rows) in per_agent.iter().enumerate() {
                    let mut need: Vec<bool> = (0..n).map(|z| z != u).collect();
                    for &(z, _) in rows {
                        if z < n {
                            need[z] = false;
                        }
                    }
                    for (z, miss) in need.into_iter().enumerate() {
                        if miss {
                            missing.push((u, z));
                        }
                    }
                }
                if missing.is_empty() {
                    Ok(())
                } else {
                    Err(CoreError::MissingRows(missing))
                }
            }
            _ => Err(CoreError::Env(format!(
                "action bundle arity does not match mode {}",
                self.config.mode.as_str()
            ))),
        }
    }

    /// Installation delay for router `u` in microseconds: scaled inference
    /// time, plus the central-to-router propagation delay in central modes.
    fn install_delay_us(&self, u: NodeId, inference: &InferenceTimes) -> TimeUs {
        let scaled_ms = self.config.lambda_ac * inference.for_router(u).max(0.0);
        let mut delay = (scaled_ms * 1_000.0).round() as TimeUs;
        if self.config.mode.is_central() {
            delay += self.delays.delay_us(self.central, u);
        }
        delay
    }

    /// Installs the step's actions with their delays, advances the
    /// simulator by one step, records snapshots and returns observations,
    /// rewards and metrics.
    pub fn step(&mut self, actions: &ActionBundle, inference: &InferenceTimes) -> Result<StepResult> {
        if self.done() {
            return Err(CoreError::Env("episode is complete".into()));
        }
        self.validate_actions(actions)?;
        if let (InferenceTimes::PerAgent(v), true) = (inference, self.config.mode.is_multi()) {
            if v.len() != self.topology.n_nodes() {
                return Err(CoreError::Env("inference times must cover every agent".into()));
            }
        }

        let now = self.now_us();
        for u in 0..self.topology.n_nodes() {
            let rows = match actions {
                ActionBundle::Single(action) => action.rows_for(u),
                ActionBundle::Multi(per_agent) => per_agent[u].clone(),
            };
            let at = now + self.install_delay_us(u, inference);
            self.sim.install_forwarding(u, &rows, at)?;
        }

        let until = now + self.config.step_us();
        let trace = self.sim.advance(until);
        self.store.record(&self.topology, &trace, until);
        self.step_idx += 1;

        let rewards = compute_rewards(
            &trace,
            self.config.lambda_reward_mix,
            self.topology.n_nodes(),
            self.config.mode.is_multi(),
        );

        let mut delay_sum = 0.0;
        let mut delay_count = 0u64;
        for e in &trace.events {
            if e.kind == TerminalKind::Delivery {
                delay_sum += (e.time_us - e.send_time_us) as f64 / 1_000.0;
                delay_count += 1;
            }
        }
        let metrics = StepMetrics {
            delivered_mb: rewards.global,
            mean_delay_ms: if delay_count > 0 { delay_sum / delay_count as f64 } else { 0.0 },
            queue_load_pct: Simulator::mean_queue_load_pct(&trace.edge_counters),
            discard_mb: trace.discarded_bytes() as f64 / MB,
        };

        self.delivered_mb += metrics.delivered_mb;
        self.dropped_mb += trace.dropped_bytes() as f64 / MB;
        self.discard_mb += metrics.discard_mb;
        self.delay_sum_ms += delay_sum;
        self.delay_count += delay_count;
        self.queue_load_sum += metrics.queue_load_pct;

        Ok(StepResult {
            observations: self.observe(),
            rewards,
            metrics,
            done: self.done(),
        })
    }

    pub fn episode_metrics(&self) -> EpisodeMetrics {
        let steps = self.step_idx.max(1) as f64;
        EpisodeMetrics {
            delivered_mb: self.delivered_mb,
            mean_delay_ms: if self.delay_count > 0 {
                self.delay_sum_ms / self.delay_count as f64
            } else {
                0.0
            },
            queue_load_pct: self.queue_load_sum / steps,
            discard_mb: self.discard_mb,
            dropped_mb: self.dropped_mb,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::TerminalEvent;
    use crate::topology::build_mini5;
    use crate::traffic::generate_schedule;

    fn eigrp_action(t: &Topology) -> RoutingAction {
        let w = sp_weights(t, SpMetric::Eigrp);
        crate::policy::actions::to_action_single(t, &w).unwrap()
    }

    fn mini5_env(mode: DeploymentMode, lambda_ac: f64) -> (Env, StepResult) {
        let t = build_mini5();
        let sched = generate_schedule(&t, 7, 2.0, 2_000);
        let config = EnvConfig {
            steps_per_episode: 40,
            mode,
            lambda_ac,
            ..EnvConfig::default()
        };
        Env::reset(&t, &sched, config, 0).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let (_, a) = mini5_env(DeploymentMode::LocalMulti, 0.2);
        let (_, b) = mini5_env(DeploymentMode::LocalMulti, 0.2);
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn observation_counts_per_mode() {
        let (_, single) = mini5_env(DeploymentMode::BirdseyeSingle, 0.2);
        assert_eq!(single.observations.len(), 1);
        assert_eq!(single.observations[0].observer_id, -1);

        let (_, central) = mini5_env(DeploymentMode::CentralSingle, 0.2);
        assert_eq!(central.observations.len(), 1);
        assert_eq!(central.observations[0].observer_id, 1);

        let (_, local) = mini5_env(DeploymentMode::LocalMulti, 0.2);
        assert_eq!(local.observations.len(), 5);
        for (v, g) in local.observations.iter().enumerate() {
            assert_eq!(g.observer_id, v as i64);
        }
    }

    #[test]
    fn missing_rows_listed() {
        let (mut env, _) = mini5_env(DeploymentMode::LocalMulti, 0.0);
        let action = eigrp_action(env.topology());
        let mut per_agent: Vec<Vec<(usize, usize)>> =
            (0..5).map(|u| action.rows_for(u)).collect();
        per_agent[2].retain(|&(z, _)| z != 4);
        let err = env
            .step(
                &ActionBundle::Multi(per_agent),
                &InferenceTimes::PerAgent(vec![0.0; 5]),
            )
            .unwrap_err();
        match err {
            CoreError::MissingRows(missing) => assert_eq!(missing, vec![(2, 4)]),
            other => panic!("expected MissingRows, got {other:?}"),
        }
    }

    #[test]
    fn central_single_install_delay_arithmetic() {
        // on mini5, router 3 with inference 5 ms and scaling 0.2:
        // 1 ms + delay(central=1, 3) = 1 + 8 = 9 ms after the step start
        let (mut env, _) = mini5_env(DeploymentMode::CentralSingle, 0.2);
        let action = eigrp_action(env.topology());
        env.step(&ActionBundle::Single(action), &InferenceTimes::Single(5.0))
            .unwrap();
        // the step advanced past 5 ms; installs beyond the boundary remain pending
        let pending = env.sim().pending_installs();
        assert!(pending.contains(&(9_000, 3)), "pending: {pending:?}");
    }

    #[test]
    fn reward_decay_on_delivery_and_drop() {
        let delivery = TerminalEvent {
            flow: 0,
            kind: TerminalKind::Delivery,
            payload_bytes: 1_000_000,
            path: vec![0, 2, 4, 6],
            send_time_us: 0,
            time_us: 100,
        };
        let trace = StepTrace {
            from_us: 0,
            to_us: 5_000,
            events: vec![delivery],
            node_counters: vec![],
            edge_counters: vec![],
        };
        let r = compute_rewards(&trace, 1.0, 7, false);
        assert_eq!(r.per_node[4], 1.0);
        assert!((r.per_node[2] - 0.8).abs() < 1e-12);
        assert!((r.per_node[0] - 0.64).abs() < 1e-12);
        assert_eq!(r.per_node[6], 0.0);
        assert_eq!(r.global, 1.0);

        let drop = TerminalEvent {
            flow: 0,
            kind: TerminalKind::Drop(crate::netsim::DropReason::BufferOverflow),
            payload_bytes: 1_000_000,
            path: vec![0, 2, 4, 6],
            send_time_us: 0,
            time_us: 100,
        };
        let trace = StepTrace {
            from_us: 0,
            to_us: 5_000,
            events: vec![drop],
            node_counters: vec![],
            edge_counters: vec![],
        };
        let r = compute_rewards(&trace, 1.0, 8, false);
        assert_eq!(r.per_node[6], -1.0);
        assert!((r.per_node[4] + 0.8).abs() < 1e-12);
        assert!((r.per_node[2] + 0.64).abs() < 1e-12);
        assert_eq!(r.per_node[0], 0.0);
        assert_eq!(r.global, 0.0);
    }

    #[test]
    fn pure_global_mixing() {
        let event = TerminalEvent {
            flow: 0,
            kind: TerminalKind::Delivery,
            payload_bytes: 500_000,
            path: vec![0, 1, 2],
            send_time_us: 0,
            time_us: 100,
        };
        let trace = StepTrace {
            from_us: 0,
            to_us: 5_000,
            events: vec![event],
            node_counters: vec![],
            edge_counters: vec![],
        };
        let r = compute_rewards(&trace, 1.0, 5, true);
        match r.mixed {
            MixedReward::PerAgent(ref v) => {
                for &x in v {
                    assert!((x - r.global).abs() < 1e-12);
                }
            }
            _ => panic!("multi-agent expected"),
        }

        let r = compute_rewards(&trace, 0.5, 5, true);
        match r.mixed {
            MixedReward::PerAgent(ref v) => {
                for (i, &x) in v.iter().enumerate() {
                    let want = 0.5 * r.per_node[i] + 0.5 * r.global;
                    assert!((x - want).abs() < 1e-12);
                }
            }
            _ => panic!("multi-agent expected"),
        }
    }

    #[test]
    fn no_events_zero_rewards() {
        let trace = StepTrace {
            from_us: 0,
            to_us: 5_000,
            events: vec![],
            node_counters: vec![],
            edge_counters: vec![],
        };
        let r = compute_rewards(&trace, 0.5, 4, false);
        assert_eq!(r.global, 0.0);
        assert!(r.per_node.iter().all(|&x| x == 0.0));
        assert_eq!(r.mixed, MixedReward::Single(0.0));
    }

    #[test]
    fn episode_reward_sum_equals_delivered_metric() {
        let (mut env, _) = mini5_env(DeploymentMode::BirdseyeSingle, 0.0);
        let action = eigrp_action(env.topology());
        let mut total = 0.0;
        while !env.done() {
            let r = env
                .step(&ActionBundle::Single(action.clone()), &InferenceTimes::Single(0.0))
                .unwrap();
            total += r.rewards.global;
        }
        let metrics = env.episode_metrics();
        assert_eq!(total, metrics.delivered_mb);
        assert!(metrics.delivered_mb > 0.0);
    }

    #[test]
    fn static_actions_match_raw_simulation() {
        // stepping with rows identical to the installed tables must not
        // change anything relative to a raw run of the simulator
        let t = build_mini5();
        let sched = generate_schedule(&t, 3, 2.0, 500);
        let config = EnvConfig {
            steps_per_episode: 100,
            mode: DeploymentMode::BirdseyeSingle,
            lambda_ac: 0.0,
            ..EnvConfig::default()
        };
        let (mut env, _) = Env::reset(&t, &sched, config, 0).unwrap();
        let action = eigrp_action(&t);
        let mut env_delivered = 0u64;
        while !env.done() {
            let r = env
                .step(&ActionBundle::Single(action.clone()), &InferenceTimes::Single(0.0))
                .unwrap();
            env_delivered += (r.metrics.delivered_mb * 1e6).round() as u64;
        }

        let w = sp_weights(&t, SpMetric::Eigrp);
        let a = crate::policy::actions::to_action_single(&t, &w).unwrap();
        let mut tables = ForwardingTables::identity(5);
        for ((u, z), v) in a.rows() {
            tables.set(u, z, v);
        }
        let mut sim = Simulator::new(&t, &sched, tables);
        let mut raw_delivered = 0u64;
        for s in 1..=100u64 {
            raw_delivered += sim.advance(s * 5_000).delivered_bytes();
        }
        assert_eq!(env_delivered, raw_delivered);
    }

    #[test]
    fn conservation_through_env_steps() {
        let (mut env, _) = mini5_env(DeploymentMode::LocalMulti, 0.2);
        let action = eigrp_action(env.topology());
        let per_agent: Vec<Vec<(usize, usize)>> = (0..5).map(|u| action.rows_for(u)).collect();
        while !env.done() {
            env.step(
                &ActionBundle::Multi(per_agent.clone()),
                &InferenceTimes::PerAgent(vec![3.0; 5]),
            )
            .unwrap();
            for ledger in env.sim().flow_ledgers() {
                assert!(ledger.balanced(), "{ledger:?}");
            }
        }
    }
}
