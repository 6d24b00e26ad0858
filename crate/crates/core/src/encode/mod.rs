//! Semantic telemetry encoding: qualitative discretization, call-graph text,
//! carrier construction, workload forecasting, and prompt aggregation.
//!
//! Everything here is a pure function over immutable inputs; the prompt a
//! policy sees is a deterministic rendering of the discretized cluster state.

mod vocab;

pub use vocab::{TokenId, TokenizeError, Vocab};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::{
    ActionKind, ClusterState, Scenario, ScalingAction, ServiceId, Thresholds,
};

/// Three-level qualitative bin with Low < Medium < High.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualitativeLevel {
    Low,
    Medium,
    High,
}

impl QualitativeLevel {
    pub fn word(self) -> &'static str {
        match self {
            QualitativeLevel::Low => "LOW",
            QualitativeLevel::Medium => "MEDIUM",
            QualitativeLevel::High => "HIGH",
        }
    }

    pub fn rank(self) -> u8 {
        match self {
            QualitativeLevel::Low => 0,
            QualitativeLevel::Medium => 1,
            QualitativeLevel::High => 2,
        }
    }
}

/// SLO standing derived from the latency level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SloStatus {
    Ok,
    AtRisk,
    Violated,
}

impl SloStatus {
    pub fn word(self) -> &'static str {
        match self {
            SloStatus::Ok => "OK",
            SloStatus::AtRisk => "AT_RISK",
            SloStatus::Violated => "VIOLATED",
        }
    }
}

/// Maps a raw value onto Low/Medium/High with two cut points: at or below the
/// first cut is Low, above the second is High.
pub fn level_of(value: f64, cuts: (f64, f64)) -> QualitativeLevel {
    if value <= cuts.0 {
        QualitativeLevel::Low
    } else if value <= cuts.1 {
        QualitativeLevel::Medium
    } else {
        QualitativeLevel::High
    }
}

/// Per-service qualitative summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceLevels {
    pub cpu: QualitativeLevel,
    pub mem: QualitativeLevel,
    pub latency: QualitativeLevel,
    pub replicas: u32,
    pub ready: u32,
    pub slo: SloStatus,
}

/// Qualitative rendering of a full cluster state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizedState {
    pub services: BTreeMap<ServiceId, ServiceLevels>,
    pub arrival: QualitativeLevel,
}

impl DiscretizedState {
    /// Level vector (arrival first, then per-service cpu/mem/latency in id
    /// order) used as the clustering feature space.
    pub fn feature_vector(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(1 + 3 * self.services.len());
        v.push(self.arrival.rank());
        for levels in self.services.values() {
            v.push(levels.cpu.rank());
            v.push(levels.mem.rank());
            v.push(levels.latency.rank());
        }
        v
    }
}

/// Discretizes a cluster state against a threshold table.
pub fn discretize(state: &ClusterState, thresholds: &Thresholds) -> DiscretizedState {
    let mut services = BTreeMap::new();
    for (id, svc) in &state.services {
        let latency_ratio = svc.mean_latency_ms / thresholds.slo_ms;
        let latency = level_of(latency_ratio, thresholds.latency);
        let slo = match latency {
            QualitativeLevel::Low => SloStatus::Ok,
            QualitativeLevel::Medium => SloStatus::AtRisk,
            QualitativeLevel::High => SloStatus::Violated,
        };
        services.insert(
            *id,
            ServiceLevels {
                cpu: level_of(svc.cpu_util, thresholds.cpu),
                mem: level_of(svc.mem_util, thresholds.mem),
                latency,
                replicas: svc.replica_count(),
                ready: svc.ready_count(state.tick),
                slo,
            },
        );
    }
    DiscretizedState {
        services,
        arrival: level_of(state.arrival_rate, thresholds.arrival_rps),
    }
}

/// Renders the call graph as special-token text: for each service one
/// downstream line `#id @P -> #callee...` annotated with the caller's profile
/// (uppercase) and one upstream line `#id @p <- #caller...` annotated with the
/// callee's own profile (lowercase). Services are ordered by id.
pub fn encode_call_graph(scenario: &Scenario) -> String {
    let mut upstream: BTreeMap<ServiceId, Vec<ServiceId>> = BTreeMap::new();
    for (id, spec) in &scenario.services {
        for callee in &spec.downstream {
            upstream.entry(*callee).or_default().push(*id);
        }
    }
    let mut out = String::new();
    for (id, spec) in &scenario.services {
        let upper = spec.profile.letter();
        out.push_str(&format!("#{} @{} ->", id.0, upper));
        for callee in &spec.downstream {
            out.push_str(&format!(" #{}", callee.0));
        }
        out.push('\n');
        out.push_str(&format!("#{} @{} <-", id.0, upper.to_ascii_lowercase()));
        if let Some(callers) = upstream.get(id) {
            let mut callers = callers.clone();
            callers.sort_unstable();
            for caller in callers {
                out.push_str(&format!(" #{}", caller.0));
            }
        }
        out.push('\n');
    }
    out
}

/// Observed effect of applying an action in some state region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Improved,
    Neutral,
    Degraded,
}

impl Outcome {
    pub fn past_word(self) -> &'static str {
        match self {
            Outcome::Improved => "IMPROVED",
            Outcome::Neutral => "NEUTRAL",
            Outcome::Degraded => "DEGRADED",
        }
    }

    /// Present-tense spelling used in carrier text.
    pub fn effect_word(self) -> &'static str {
        match self {
            Outcome::Improved => "IMPROVES",
            Outcome::Neutral => "NEUTRAL",
            Outcome::Degraded => "DEGRADES",
        }
    }
}

/// One observed (state, action, outcome) triple from the gathering phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub state: DiscretizedState,
    pub action: ScalingAction,
    pub outcome: Outcome,
}

/// Majority effect of one action kind within a carrier cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectStat {
    pub effect: Outcome,
    pub support: u32,
}

/// One carrier cluster: a medoid state region plus per-kind effect statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarrierCluster {
    /// Feature vector of the medoid state.
    pub centroid: Vec<u8>,
    pub effects: BTreeMap<ActionKind, EffectStat>,
    /// History entries assigned to this cluster.
    pub size: u32,
}

/// Compact clustered summary of configuration-change sensitivity.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Carrier {
    pub clusters: Vec<CarrierCluster>,
}

fn hamming(a: &[u8], b: &[u8]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// k-medoids over discretized feature vectors with Hamming distance.
///
/// Medoids start from the first `k` distinct vectors in history order and the
/// assign/update loop runs until the medoid set is stable; if fewer than `k`
/// distinct states exist, `k` shrinks to that count. Effect statistics take
/// the majority outcome per action kind with ties resolved to Neutral; no-op
/// actions are excluded.
pub fn build_carrier(history: &[HistoryEntry], k: usize) -> Carrier {
    assert!(!history.is_empty(), "carrier needs at least one history entry");
    assert!(k >= 1, "carrier needs at least one cluster");

    let features: Vec<Vec<u8>> = history.iter().map(|h| h.state.feature_vector()).collect();
    let mut distinct: Vec<usize> = Vec::new();
    for (idx, f) in features.iter().enumerate() {
        if !distinct.iter().any(|&d| features[d] == *f) {
            distinct.push(idx);
        }
    }
    let k = k.min(distinct.len());
    let mut medoids: Vec<usize> = distinct[..k].to_vec();

    let assign = |medoids: &[usize]| -> Vec<usize> {
        features
            .iter()
            .map(|f| {
                let mut best = 0usize;
                let mut best_d = u32::MAX;
                for (ci, &m) in medoids.iter().enumerate() {
                    let d = hamming(f, &features[m]);
                    if d < best_d {
                        best_d = d;
                        best = ci;
                    }
                }
                best
            })
            .collect()
    };

    let mut assignment = assign(&medoids);
    for _ in 0..50 {
        let mut next_medoids = medoids.clone();
        for (ci, slot) in next_medoids.iter_mut().enumerate() {
            let members: Vec<usize> =
                (0..history.len()).filter(|&i| assignment[i] == ci).collect();
            if members.is_empty() {
                continue;
            }
            let mut best = *slot;
            let mut best_cost = u32::MAX;
            for &candidate in &members {
                let cost: u32 =
                    members.iter().map(|&m| hamming(&features[candidate], &features[m])).sum();
                if cost < best_cost {
                    best_cost = cost;
                    best = candidate;
                }
            }
            *slot = best;
        }
        if next_medoids == medoids {
            break;
        }
        medoids = next_medoids;
        assignment = assign(&medoids);
    }

    let mut clusters = Vec::with_capacity(k);
    for ci in 0..k {
        let members: Vec<usize> = (0..history.len()).filter(|&i| assignment[i] == ci).collect();
        let mut tallies: BTreeMap<ActionKind, BTreeMap<Outcome, u32>> = BTreeMap::new();
        for &m in &members {
            let entry = &history[m];
            if entry.action.no_op {
                continue;
            }
            *tallies
                .entry(entry.action.kind)
                .or_default()
                .entry(entry.outcome)
                .or_insert(0) += 1;
        }
        let mut effects = BTreeMap::new();
        for (kind, counts) in tallies {
            let support: u32 = counts.values().sum();
            let top = counts.values().max().copied().unwrap_or(0);
            let winners: Vec<Outcome> =
                counts.iter().filter(|(_, &c)| c == top).map(|(&o, _)| o).collect();
            let effect = if winners.len() == 1 { winners[0] } else { Outcome::Neutral };
            effects.insert(kind, EffectStat { effect, support });
        }
        clusters.push(CarrierCluster {
            centroid: features[medoids[ci]].clone(),
            effects,
            size: members.len() as u32,
        });
    }
    Carrier { clusters }
}

/// Near-term workload estimate supplied to prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadForecast {
    /// Predicted requests/s; never negative.
    pub rate: f64,
    pub confidence: Option<f64>,
}

/// Forecasting seam; the default in-process backend is an EWMA, and an
/// external predictor can be slotted in behind the same interface.
pub trait WorkloadPredictor {
    fn forecast(&self, recent: &[f64], horizon_ticks: u64) -> WorkloadForecast;
}

/// Exponentially weighted moving average with a fixed decay.
#[derive(Debug, Clone, Copy)]
pub struct EwmaPredictor {
    pub decay: f64,
}

impl Default for EwmaPredictor {
    fn default() -> Self {
        Self { decay: 0.5 }
    }
}

impl WorkloadPredictor for EwmaPredictor {
    fn forecast(&self, recent: &[f64], _horizon_ticks: u64) -> WorkloadForecast {
        assert!(!recent.is_empty(), "forecast needs at least one observation");
        let mut ewma = recent[0];
        for &x in &recent[1..] {
            ewma = self.decay * x + (1.0 - self.decay) * ewma;
        }
        WorkloadForecast { rate: ewma.max(0.0), confidence: None }
    }
}

/// Convenience wrapper over the default predictor.
pub fn predict_workload(recent: &[f64], horizon_ticks: u64) -> WorkloadForecast {
    EwmaPredictor::default().forecast(recent, horizon_ticks)
}

/// Which of the two control problems a prompt is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTask {
    Rca,
    Allocation,
}

/// The aggregated prompt handed to a policy: labeled text sections in fixed
/// order plus its tokenization under the standard vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub task: PromptTask,
    pub guidance: String,
    pub deployments: String,
    pub call_graph: String,
    pub expected_schema: String,
    pub cluster_state: String,
    pub carrier: String,
    pub text: String,
    pub token_sequence: Vec<TokenId>,
}

impl Prompt {
    /// The generation context handed to autoregressive policies.
    pub fn context_token(&self, vocab: &Vocab) -> TokenId {
        self.token_sequence.last().copied().unwrap_or_else(|| vocab.bos())
    }
}

const GUIDANCE_TEXT: &str = "Reason step by step about the cluster. \
First inspect each service level, then list faulty candidates, then judge \
for each candidate whether a resource change would help, and only then name \
root causes. Respect the SLO and scale services with long readiness early.";

fn expected_schema_text() -> String {
    let mut s = String::new();
    s.push_str("Respond with exactly these four tag pairs in order:\n");
    s.push_str("<think> observations and hypotheses </think>\n");
    s.push_str("<Fault> candidate faulty services as #id @P pairs or NONE </Fault>\n");
    s.push_str("<Counterfactual> one claim per line: IF SCALE_OUT #id THEN IMPROVED ");
    s.push_str("(verbs: SCALE_OUT SCALE_IN CPU_UP CPU_DOWN MEM_UP MEM_DOWN; ");
    s.push_str("outcomes: IMPROVED NEUTRAL DEGRADED) or NONE </Counterfactual>\n");
    s.push_str("<root> confirmed root causes as #id @P pairs or NONE </root>");
    s
}

/// One line per service describing its deployment facts.
pub fn deployments_text(scenario: &Scenario) -> String {
    let mut out = String::new();
    for (id, spec) in &scenario.services {
        out.push_str(&format!(
            "#{} {} profile @{} rate {} cpu {} mem {} ready {}s\n",
            id.0,
            spec.name,
            spec.profile.letter(),
            spec.base_service_rate.round() as i64,
            spec.cpu_request,
            spec.mem_request,
            spec.readiness_time.round() as i64,
        ));
    }
    out
}

/// Renders the discretized state (and optional forecast) as prompt text.
pub fn cluster_state_text(state: &DiscretizedState, forecast: Option<&WorkloadForecast>) -> String {
    let mut out = String::new();
    for (id, levels) in &state.services {
        out.push_str(&format!(
            "#{} cpu {} mem {} latency {} replicas {} ready {} {}\n",
            id.0,
            levels.cpu.word(),
            levels.mem.word(),
            levels.latency.word(),
            levels.replicas,
            levels.ready,
            levels.slo.word(),
        ));
    }
    out.push_str(&format!("arrival {}", state.arrival.word()));
    if let Some(f) = forecast {
        out.push_str(&format!(" forecast {} rps", f.rate.round() as i64));
        if let Some(c) = f.confidence {
            out.push_str(&format!(" confidence {} %", (c * 100.0).round() as i64));
        }
    }
    out.push('\n');
    out
}

fn carrier_text(carrier: &Carrier) -> String {
    if carrier.clusters.is_empty() {
        return "NONE\n".to_string();
    }
    let mut out = String::new();
    for (idx, cluster) in carrier.clusters.iter().enumerate() {
        out.push_str(&format!("cluster {} size {}", idx, cluster.size));
        for (kind, stat) in &cluster.effects {
            let kind_word = match kind {
                ActionKind::Horizontal => "SCALE_OUT",
                ActionKind::VerticalCpu => "CPU_UP",
                ActionKind::VerticalMem => "MEM_UP",
            };
            out.push_str(&format!(
                " {} {} support {}",
                kind_word,
                stat.effect.effect_word(),
                stat.support
            ));
        }
        out.push('\n');
    }
    out
}

/// Assembles the five labeled sections (plus the carrier section for
/// allocation prompts) in fixed order and tokenizes the result.
pub fn aggregate_prompt(
    state: &DiscretizedState,
    call_graph: &str,
    carrier: Option<&Carrier>,
    forecast: Option<&WorkloadForecast>,
    deployments: &str,
    task: PromptTask,
    vocab: &Vocab,
) -> Prompt {
    let cluster_state = cluster_state_text(state, forecast);
    let expected_schema = expected_schema_text();
    let carrier_section = match task {
        PromptTask::Rca => String::new(),
        PromptTask::Allocation => carrier.map(carrier_text).unwrap_or_else(|| "NONE\n".into()),
    };

    let mut text = String::new();
    text.push_str("[GUIDANCE]\n");
    text.push_str(GUIDANCE_TEXT);
    text.push('\n');
    text.push_str("[DEPLOYMENTS]\n");
    text.push_str(deployments);
    text.push_str("[CALL_GRAPH]\n");
    text.push_str(call_graph);
    text.push_str("[EXPECTED_OUTPUT]\n");
    text.push_str(&expected_schema);
    text.push('\n');
    text.push_str("[CLUSTER_STATE]\n");
    text.push_str(&cluster_state);
    if task == PromptTask::Allocation {
        text.push_str("[CARRIER]\n");
        text.push_str(&carrier_section);
    }

    let token_sequence = vocab.tokenize_lossy(&text);
    Prompt {
        task,
        guidance: GUIDANCE_TEXT.to_string(),
        deployments: deployments.to_string(),
        call_graph: call_graph.to_string(),
        expected_schema,
        cluster_state,
        carrier: carrier_section,
        text,
        token_sequence,
    }
}

/// Section headers expected in a prompt for the given task, in order.
pub fn required_sections(task: PromptTask) -> &'static [&'static str] {
    match task {
        PromptTask::Rca => &[
            "[GUIDANCE]",
            "[DEPLOYMENTS]",
            "[CALL_GRAPH]",
            "[EXPECTED_OUTPUT]",
            "[CLUSTER_STATE]",
        ],
        PromptTask::Allocation => &[
            "[GUIDANCE]",
            "[DEPLOYMENTS]",
            "[CALL_GRAPH]",
            "[EXPECTED_OUTPUT]",
            "[CLUSTER_STATE]",
            "[CARRIER]",
        ],
    }
}

/// Checks that every required header occurs exactly once and in order.
pub fn sections_present(text: &str, task: PromptTask) -> bool {
    let mut cursor = 0;
    for header in required_sections(task) {
        match text[cursor..].find(header) {
            Some(at) => cursor += at + header.len(),
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Simulator;

    fn demo_scenario() -> Scenario {
        Scenario::from_json(
            r#"{
                "name": "demo",
                "machines": [{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}],
                "services": [
                    {"id": 1, "name": "front", "profile": "Memory",
                     "base_service_rate": 100.0, "cpu_request": 100, "mem_request": 128,
                     "downstream": [2]},
                    {"id": 2, "name": "back", "profile": "Cpu",
                     "base_service_rate": 50.0, "cpu_request": 100, "mem_request": 128}
                ],
                "workload": {"inline": [[0, 10.0]]},
                "slo_ms": 100.0
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn level_boundaries() {
        assert_eq!(level_of(0.0, (0.5, 0.8)), QualitativeLevel::Low);
        assert_eq!(level_of(0.5, (0.5, 0.8)), QualitativeLevel::Low);
        assert_eq!(level_of(0.62, (0.5, 0.8)), QualitativeLevel::Medium);
        assert_eq!(level_of(0.82, (0.5, 0.8)), QualitativeLevel::High);
    }

    #[test]
    fn latency_past_slo_is_violated() {
        let scenario = demo_scenario();
        let sim = Simulator::new(scenario.clone());
        let mut state = sim.initial_state();
        // Force a modeled latency 1.2x the SLO on service 2.
        state.services.get_mut(&ServiceId(2)).unwrap().mean_latency_ms =
            1.2 * scenario.thresholds.slo_ms;
        let d = discretize(&state, &scenario.thresholds);
        assert_eq!(d.services[&ServiceId(2)].slo, SloStatus::Violated);
        assert_eq!(d.services[&ServiceId(2)].latency, QualitativeLevel::High);
    }

    #[test]
    fn discretization_is_monotone() {
        let cuts = (0.5, 0.8);
        let mut last = QualitativeLevel::Low;
        for i in 0..=100 {
            let lvl = level_of(i as f64 / 100.0, cuts);
            assert!(lvl >= last);
            last = lvl;
        }
    }

    #[test]
    fn call_graph_lines_carry_profiles() {
        let text = encode_call_graph(&demo_scenario());
        assert!(text.contains("#1 @M -> #2"), "{text}");
        assert!(text.contains("#1 @m <-\n"), "{text}");
        assert!(text.contains("#2 @C ->"), "{text}");
        assert!(text.contains("#2 @c <- #1"), "{text}");
        assert_eq!(text, encode_call_graph(&demo_scenario()));
    }

    #[test]
    fn ewma_examples() {
        assert_eq!(predict_workload(&[100.0, 100.0, 100.0], 1).rate, 100.0);
        assert_eq!(predict_workload(&[0.0, 0.0, 0.0], 1).rate, 0.0);
        assert_eq!(predict_workload(&[100.0, 200.0], 1).rate, 150.0);
    }

    fn uniform_history(n: usize, outcome: Outcome) -> Vec<HistoryEntry> {
        let scenario = demo_scenario();
        let sim = Simulator::new(scenario.clone());
        let state = discretize(&sim.initial_state(), &scenario.thresholds);
        (0..n)
            .map(|_| HistoryEntry {
                state: state.clone(),
                action: ScalingAction::horizontal(ServiceId(1), 1),
                outcome,
            })
            .collect()
    }

    #[test]
    fn identical_history_yields_single_cluster() {
        let carrier = build_carrier(&uniform_history(6, Outcome::Improved), 1);
        assert_eq!(carrier.clusters.len(), 1);
        let stat = carrier.clusters[0].effects[&ActionKind::Horizontal];
        assert_eq!(stat.effect, Outcome::Improved);
        assert_eq!(stat.support, 6);
    }

    #[test]
    fn tie_votes_resolve_to_neutral() {
        let mut history = uniform_history(2, Outcome::Improved);
        history.extend(uniform_history(2, Outcome::Degraded));
        let carrier = build_carrier(&history, 1);
        let stat = carrier.clusters[0].effects[&ActionKind::Horizontal];
        assert_eq!(stat.effect, Outcome::Neutral);
        assert_eq!(stat.support, 4);
    }

    #[test]
    fn k_shrinks_to_distinct_states() {
        let carrier = build_carrier(&uniform_history(4, Outcome::Neutral), 3);
        assert_eq!(carrier.clusters.len(), 1);
    }

    #[test]
    fn clusters_partition_history() {
        let mut history = uniform_history(3, Outcome::Improved);
        // A second, clearly different state group.
        let mut other = uniform_history(4, Outcome::Degraded);
        for entry in &mut other {
            for levels in entry.state.services.values_mut() {
                levels.cpu = QualitativeLevel::High;
                levels.latency = QualitativeLevel::High;
            }
        }
        history.extend(other);
        let carrier = build_carrier(&history, 2);
        let total: u32 = carrier.clusters.iter().map(|c| c.size).sum();
        assert_eq!(total as usize, history.len());
    }

    #[test]
    fn prompt_sections_and_round_trip() {
        let scenario = demo_scenario();
        let sim = Simulator::new(scenario.clone());
        let state = discretize(&sim.initial_state(), &scenario.thresholds);
        let graph = encode_call_graph(&scenario);
        let deployments = deployments_text(&scenario);
        let vocab = Vocab::standard();

        let rca = aggregate_prompt(&state, &graph, None, None, &deployments, PromptTask::Rca, vocab);
        assert!(sections_present(&rca.text, PromptTask::Rca));
        assert!(!rca.text.contains("[CARRIER]"));
        assert_eq!(vocab.detokenize(&rca.token_sequence), rca.text);

        let carrier = build_carrier(&uniform_history(2, Outcome::Improved), 1);
        let alloc = aggregate_prompt(
            &state,
            &graph,
            Some(&carrier),
            Some(&WorkloadForecast { rate: 42.0, confidence: Some(0.8) }),
            &deployments,
            PromptTask::Allocation,
            vocab,
        );
        assert!(sections_present(&alloc.text, PromptTask::Allocation));
        assert!(alloc.text.contains("[CARRIER]"));
        assert_eq!(vocab.detokenize(&alloc.token_sequence), alloc.text);

        let again = aggregate_prompt(&state, &graph, None, None, &deployments, PromptTask::Rca, vocab);
        assert_eq!(rca.text, again.text);
    }
}
