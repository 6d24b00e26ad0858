//! MAPE-K control loops: task dispatch, the scheduling loop with optional
//! online adaptation, the rule-based action verifier, multi-agent conflict
//! resolution, and the state-gathering phase that builds the carrier.
//!
//! The loop shape per scheduling iteration: discretize the current state,
//! compose the allocation prompt (carrier included), generate a group of
//! candidates, keep the best-scoring one, interpret its improvement-predicting
//! counterfactual claims into actions, verify them against the safety rules,
//! execute on the simulator, classify the observed outcome, and optionally
//! take one online training step when the backend is trainable.
//!
//! The root-cause path is one-shot and never mutates the simulator: it reads
//! a state snapshot, builds the (carrier-free) prompt, generates, parses, and
//! returns the root set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cot::{self, CotOutput};
use crate::encode::{
    self, aggregate_prompt, discretize, Carrier, HistoryEntry, Outcome, Prompt, PromptTask,
    Vocab, WorkloadForecast,
};
use crate::policy::{GenerationContext, PolicyBackend, PolicyError, Sample, ScriptedOracle};
use crate::reward::{RewardBreakdown, RewardConfig};
use crate::rng::XorShift64;
use crate::sim::{
    ActionKind, ClusterState, Resource, ScalingAction, ServiceId, Simulator, TruthSet,
};
use crate::train::{self, classify_outcome, AnnotatedSample, TrainingConfig};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("policy backend failed: {0}")]
    Policy(#[from] PolicyError),
    #[error("training failed: {0}")]
    Train(#[from] train::TrainError),
    #[error("horizon {horizon} is not a positive multiple of interval {interval}")]
    BadHorizon { horizon: u64, interval: u64 },
    #[error("episode audit failed at record {index}: {reason}")]
    AuditFailed { index: usize, reason: String },
}

/// Which control problem a run solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    RootCauseIdentification,
    Allocation,
}

/// Safety limits enforced before any action executes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierRules {
    pub min_replicas: u32,
    pub max_replicas: u32,
    /// Ceiling on the cluster-wide sum of `replicas * cpu_alloc`.
    pub max_total_millicores: u64,
    pub max_step_replicas: u32,
    pub max_step_millicores: u32,
    pub max_step_mib: u32,
}

impl Default for VerifierRules {
    fn default() -> Self {
        Self {
            min_replicas: 1,
            max_replicas: 10,
            max_total_millicores: 64_000,
            max_step_replicas: 3,
            max_step_millicores: 500,
            max_step_mib: 512,
        }
    }
}

/// Control-loop configuration; flags mirror the CLI one to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub task: TaskKind,
    /// Ticks between scheduling iterations.
    pub interval_ticks: u64,
    pub horizon_ticks: u64,
    pub required_offline_training: bool,
    pub required_online_training: bool,
    pub rules: VerifierRules,
    /// Candidates generated per decision.
    pub group_size: usize,
    /// Carrier cluster budget.
    pub carrier_k: usize,
    /// Length of the state-gathering phase in ticks.
    pub gather_ticks: u64,
    /// Exploratory perturbation probability per gathering interval.
    pub explore_probability: f64,
    /// Rebuild the carrier every N iterations; never when absent.
    pub refresh_carrier_every: Option<u64>,
    pub seed: u64,
    pub training: TrainingConfig,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Allocation,
            interval_ticks: 10,
            horizon_ticks: 500,
            required_offline_training: false,
            required_online_training: false,
            rules: VerifierRules::default(),
            group_size: 4,
            carrier_k: 4,
            gather_ticks: 200,
            explore_probability: 0.2,
            refresh_carrier_every: None,
            seed: 17,
            training: TrainingConfig::default(),
        }
    }
}

/// Why the verifier rejected an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownService,
    ZeroDelta,
    Duplicate,
    MinReplicas,
    MaxReplicas,
    StepTooLarge,
    BudgetExceeded,
    CapacityExceeded,
}

/// Shadow of the cluster's allocation bookkeeping, mutated as the verifier
/// accepts actions so that a whole batch is judged cumulatively, matching the
/// order in which the simulator will apply it.
struct AllocationShadow {
    machine_ids: Vec<u32>,
    cpu_free: Vec<u64>,
    mem_free: Vec<u64>,
    services: std::collections::BTreeMap<ServiceId, ShadowService>,
}

struct ShadowService {
    cpu_alloc: u32,
    mem_alloc: u32,
    slots: Vec<u32>,
}

impl AllocationShadow {
    fn from_state(state: &ClusterState) -> Self {
        Self {
            machine_ids: state.machines.iter().map(|m| m.id).collect(),
            cpu_free: state.machines.iter().map(|m| m.cpu_free()).collect(),
            mem_free: state.machines.iter().map(|m| m.mem_free()).collect(),
            services: state
                .services
                .iter()
                .map(|(&id, s)| {
                    (
                        id,
                        ShadowService {
                            cpu_alloc: s.cpu_alloc,
                            mem_alloc: s.mem_alloc,
                            slots: s.slots.iter().map(|slot| slot.machine).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    fn total_millicores(&self) -> u64 {
        self.services
            .values()
            .map(|s| s.slots.len() as u64 * u64::from(s.cpu_alloc))
            .sum()
    }

    /// First-fit placement of `count` replicas; applied only if all fit.
    fn try_place(&mut self, service: ServiceId, count: u64) -> bool {
        let (cpu, mem) = {
            let svc = &self.services[&service];
            (u64::from(svc.cpu_alloc), u64::from(svc.mem_alloc))
        };
        let mut cpu_free = self.cpu_free.clone();
        let mut mem_free = self.mem_free.clone();
        let mut placed = Vec::new();
        for _ in 0..count {
            let Some(i) =
                (0..cpu_free.len()).find(|&i| cpu_free[i] >= cpu && mem_free[i] >= mem)
            else {
                return false;
            };
            cpu_free[i] -= cpu;
            mem_free[i] -= mem;
            placed.push(self.machine_ids[i]);
        }
        self.cpu_free = cpu_free;
        self.mem_free = mem_free;
        self.services.get_mut(&service).expect("present").slots.extend(placed);
        true
    }

    /// Removes `count` replicas from the tail, releasing their allocation.
    fn remove(&mut self, service: ServiceId, count: u64) {
        let svc = self.services.get_mut(&service).expect("present");
        for _ in 0..count {
            let Some(machine) = svc.slots.pop() else { break };
            if let Some(i) = self.machine_ids.iter().position(|&m| m == machine) {
                self.cpu_free[i] += u64::from(svc.cpu_alloc);
                self.mem_free[i] += u64::from(svc.mem_alloc);
            }
        }
    }

    /// Changes a per-replica allocation; applied only if every hosting
    /// machine can absorb the increase.
    fn try_vertical(&mut self, service: ServiceId, delta: i64, is_cpu: bool) -> bool {
        let svc = &self.services[&service];
        let free = if is_cpu { &self.cpu_free } else { &self.mem_free };
        if delta > 0 {
            let mut needed: std::collections::BTreeMap<u32, u64> = std::collections::BTreeMap::new();
            for &machine in &svc.slots {
                *needed.entry(machine).or_insert(0) += delta.unsigned_abs();
            }
            for (machine, need) in &needed {
                let Some(i) = self.machine_ids.iter().position(|m| m == machine) else {
                    return false;
                };
                if free[i] < *need {
                    return false;
                }
            }
        }
        let slots = self.services[&service].slots.clone();
        for machine in slots {
            if let Some(i) = self.machine_ids.iter().position(|&m| m == machine) {
                let free = if is_cpu { &mut self.cpu_free } else { &mut self.mem_free };
                if delta > 0 {
                    free[i] -= delta.unsigned_abs();
                } else {
                    free[i] += delta.unsigned_abs();
                }
            }
        }
        let svc = self.services.get_mut(&service).expect("present");
        let alloc = if is_cpu { &mut svc.cpu_alloc } else { &mut svc.mem_alloc };
        *alloc = (i64::from(*alloc) + delta).max(1) as u32;
        true
    }
}

/// Rule-based verification: duplicates (same service and kind) keep the first
/// occurrence; replica bounds, step-size bounds, the cluster CPU budget, and
/// machine capacity are all checked cumulatively over the batch, in the order
/// the simulator will apply it.
pub fn verify_actions(
    actions: &[ScalingAction],
    state: &ClusterState,
    rules: &VerifierRules,
) -> (Vec<ScalingAction>, Vec<(ScalingAction, RejectReason)>) {
    let mut accepted: Vec<ScalingAction> = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: BTreeSet<(ServiceId, ActionKind)> = BTreeSet::new();
    let mut shadow = AllocationShadow::from_state(state);

    for &action in actions {
        if action.no_op {
            continue;
        }
        if !state.services.contains_key(&action.service_id) {
            rejected.push((action, RejectReason::UnknownService));
            continue;
        }
        if action.delta == 0 {
            rejected.push((action, RejectReason::ZeroDelta));
            continue;
        }
        if !seen.insert((action.service_id, action.kind)) {
            rejected.push((action, RejectReason::Duplicate));
            continue;
        }
        let step = action.delta.unsigned_abs();
        let replicas = shadow.services[&action.service_id].slots.len() as u64;
        match action.kind {
            ActionKind::Horizontal => {
                if step > u64::from(rules.max_step_replicas) {
                    rejected.push((action, RejectReason::StepTooLarge));
                    continue;
                }
                if action.delta < 0 {
                    if replicas.saturating_sub(step) < u64::from(rules.min_replicas) {
                        rejected.push((action, RejectReason::MinReplicas));
                        continue;
                    }
                    shadow.remove(action.service_id, step);
                } else {
                    if replicas + step > u64::from(rules.max_replicas) {
                        rejected.push((action, RejectReason::MaxReplicas));
                        continue;
                    }
                    let added = step * u64::from(shadow.services[&action.service_id].cpu_alloc);
                    if shadow.total_millicores() + added > rules.max_total_millicores {
                        rejected.push((action, RejectReason::BudgetExceeded));
                        continue;
                    }
                    if !shadow.try_place(action.service_id, step) {
                        rejected.push((action, RejectReason::CapacityExceeded));
                        continue;
                    }
                }
            }
            ActionKind::VerticalCpu => {
                if step > u64::from(rules.max_step_millicores) {
                    rejected.push((action, RejectReason::StepTooLarge));
                    continue;
                }
                if i64::from(shadow.services[&action.service_id].cpu_alloc) + action.delta < 1 {
                    rejected.push((action, RejectReason::MinReplicas));
                    continue;
                }
                if action.delta > 0 {
                    let added = replicas * step;
                    if shadow.total_millicores() + added > rules.max_total_millicores {
                        rejected.push((action, RejectReason::BudgetExceeded));
                        continue;
                    }
                }
                if !shadow.try_vertical(action.service_id, action.delta, true) {
                    rejected.push((action, RejectReason::CapacityExceeded));
                    continue;
                }
            }
            ActionKind::VerticalMem => {
                if step > u64::from(rules.max_step_mib) {
                    rejected.push((action, RejectReason::StepTooLarge));
                    continue;
                }
                if i64::from(shadow.services[&action.service_id].mem_alloc) + action.delta < 1 {
                    rejected.push((action, RejectReason::MinReplicas));
                    continue;
                }
                if !shadow.try_vertical(action.service_id, action.delta, false) {
                    rejected.push((action, RejectReason::CapacityExceeded));
                    continue;
                }
            }
        }
        accepted.push(action);
    }
    (accepted, rejected)
}

/// Merges per-agent proposals: for conflicting actions on the same
/// (service, kind) the one provisioning more resources (numerically larger
/// delta) wins; non-conflicting actions pass through in first-seen order.
pub fn resolve_conflicts(proposals: &[Vec<ScalingAction>]) -> Vec<ScalingAction> {
    let mut order: Vec<(ServiceId, ActionKind)> = Vec::new();
    let mut best: std::collections::BTreeMap<(ServiceId, ActionKind), ScalingAction> =
        std::collections::BTreeMap::new();
    for agent in proposals {
        for &action in agent {
            if action.no_op {
                continue;
            }
            let key = (action.service_id, action.kind);
            match best.get(&key) {
                None => {
                    order.push(key);
                    best.insert(key, action);
                }
                Some(current) if action.delta > current.delta => {
                    best.insert(key, action);
                }
                Some(_) => {}
            }
        }
    }
    order.into_iter().map(|key| best[&key]).collect()
}

/// Append-only record of one control iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub tick: u64,
    pub prompt_text: String,
    pub cot: CotOutput,
    pub executed: Vec<ScalingAction>,
    pub rejected: Vec<(ScalingAction, RejectReason)>,
    pub pre_digest: u64,
    pub post_digest: u64,
    pub reward: Option<RewardBreakdown>,
    pub outcome: Outcome,
}

/// Per-tick metric sample collected while a loop runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TickMetric {
    pub tick: u64,
    pub arrival_rps: f64,
    pub served_rps: f64,
    pub latency_ms: f64,
    pub slo_violated: bool,
}

/// Everything a finished allocation run leaves behind.
#[derive(Debug, Clone)]
pub struct SchedulingRun {
    pub records: Vec<EpisodeRecord>,
    pub ticks: Vec<TickMetric>,
    pub latency_samples: Vec<f64>,
    pub final_state: ClusterState,
}

/// Output of `run_system`, by task.
#[derive(Debug, Clone)]
pub enum SystemOutput {
    RootCause(RcaAnswer),
    Scheduling(SchedulingRun),
}

/// One-shot root-cause answer.
#[derive(Debug, Clone)]
pub struct RcaAnswer {
    pub predicted: TruthSet,
    pub top1: Option<(ServiceId, Resource)>,
    pub cot: CotOutput,
    pub reward: Option<RewardBreakdown>,
}

fn record_tick(sim: &Simulator, state: &ClusterState, ticks: &mut Vec<TickMetric>) {
    ticks.push(TickMetric {
        tick: state.tick,
        arrival_rps: state.arrival_rate,
        served_rps: sim.served_rps(state),
        latency_ms: sim.end_to_end_latency_ms(state),
        slo_violated: sim.end_to_end_latency_ms(state) > sim.scenario().thresholds.slo_ms,
    });
}

/// Picks the candidate with the highest total reward (ties keep the first).
/// When truth is unavailable only the truth-free components (format and
/// length) are compared.
pub fn select_candidate(
    samples: &[Sample],
    truth: Option<&TruthSet>,
    vocab: &Vocab,
    cfg: &RewardConfig,
) -> (usize, CotOutput, Option<RewardBreakdown>) {
    assert!(!samples.is_empty());
    let mut best_idx = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_out = None;
    let mut best_reward = None;
    for (idx, sample) in samples.iter().enumerate() {
        let out = cot::parse(&sample.text, vocab);
        let (c_total, c_invalid) = cot::count_format_checks(&out);
        let length = cot::reasoning_length(&out, vocab) as u32;
        let (score, reward) = match truth {
            Some(truth) => {
                let breakdown = crate::reward::score_sample(
                    &out.root_set(),
                    truth,
                    c_total,
                    c_invalid,
                    length,
                    0.0,
                    cfg,
                )
                .expect("counts in range");
                (breakdown.r_total, Some(breakdown))
            }
            None => {
                let format = crate::reward::r_format(c_total, c_invalid).expect("counts in range");
                (format, None)
            }
        };
        if score > best_score {
            best_score = score;
            best_idx = idx;
            best_out = Some(out);
            best_reward = reward;
        }
    }
    (best_idx, best_out.expect("non-empty samples"), best_reward)
}

/// The state-gathering phase: runs the simulator under the threshold baseline
/// with seeded exploratory perturbations, records one
/// (state, action, outcome) triple per interval, and clusters them into the
/// carrier.
pub fn state_gathering_phase(
    sim: &Simulator,
    cfg: &ControlConfig,
) -> (Carrier, Vec<HistoryEntry>, ClusterState) {
    assert!(cfg.gather_ticks >= 1);
    let thresholds = &sim.scenario().thresholds;
    let mut rng = XorShift64::new(cfg.seed ^ 0x6a74);
    let mut state = sim.initial_state();
    let mut history = Vec::new();
    let interval = cfg.interval_ticks.max(1);
    let iterations = (cfg.gather_ticks / interval).max(1);

    for _ in 0..iterations {
        let discretized = discretize(&state, thresholds);
        let mut proposed = crate::policy::threshold_baseline(&discretized);
        if rng.next_f64() < cfg.explore_probability {
            let ids: Vec<ServiceId> = state.services.keys().copied().collect();
            let target = ids[rng.next_usize(ids.len())];
            let delta = if rng.next_f64() < 0.5 { 1 } else { -1 };
            proposed.push(ScalingAction::horizontal(target, delta));
        }
        let (accepted, _) = verify_actions(&proposed, &state, &cfg.rules);
        let action = accepted.first().copied().unwrap_or(ScalingAction::no_op(
            state.services.keys().next().copied().unwrap_or(ServiceId(1)),
        ));
        let pre = state.clone();
        state = sim.step(&state, &accepted);
        for _ in 1..interval {
            state = sim.step(&state, &[]);
        }
        let outcome = classify_outcome(&pre, &state, thresholds.slo_ms);
        history.push(HistoryEntry { state: discretized, action, outcome });
    }
    let carrier = encode::build_carrier(&history, cfg.carrier_k);
    (carrier, history, state)
}

/// Everything one decision produced, before any online adaptation.
struct IterationOutcome {
    prompt: Prompt,
    chosen_tokens: Vec<crate::encode::TokenId>,
    predicted: Option<Outcome>,
    record: EpisodeRecord,
    next: ClusterState,
    /// The iteration as carrier evidence, for optional carrier refreshes.
    history_entry: HistoryEntry,
}

/// The monitor-analyze-plan-execute half of an iteration: prompt, generate,
/// select, interpret, verify, execute, classify. Advances
/// `cfg.interval_ticks` ticks.
#[allow(clippy::too_many_arguments)]
fn decide_and_execute(
    sim: &Simulator,
    state: &ClusterState,
    carrier: &Carrier,
    backend: &dyn PolicyBackend,
    recent_arrivals: &[f64],
    cfg: &ControlConfig,
    seed: u64,
    ticks: &mut Vec<TickMetric>,
) -> Result<IterationOutcome, ControlError> {
    let scenario = sim.scenario();
    let vocab = Vocab::standard();
    let discretized = discretize(state, &scenario.thresholds);
    let forecast: Option<WorkloadForecast> = if recent_arrivals.is_empty() {
        None
    } else {
        Some(encode::predict_workload(recent_arrivals, cfg.interval_ticks))
    };
    let prompt = aggregate_prompt(
        &discretized,
        &encode::encode_call_graph(scenario),
        Some(carrier),
        forecast.as_ref(),
        &encode::deployments_text(scenario),
        PromptTask::Allocation,
        vocab,
    );

    let truth = sim.ground_truth_labels(state);
    backend.observe(&GenerationContext { discretized: Some(&discretized), truth: Some(&truth) });
    let samples = backend.generate(&prompt, cfg.group_size, seed)?;
    let (best_idx, out, reward) =
        select_candidate(&samples, Some(&truth), vocab, &cfg.training.reward);

    let claims = cot::interpret(&out);
    let proposed: Vec<ScalingAction> = claims.iter().map(|(_, a)| *a).collect();
    let (accepted, rejected) = verify_actions(&proposed, state, &cfg.rules);
    let predicted = claims
        .iter()
        .find(|(_, a)| accepted.contains(a))
        .map(|(o, _)| *o);

    let pre_digest = state.digest();
    let mut next = sim.step(state, &accepted);
    record_tick(sim, &next, ticks);
    for _ in 1..cfg.interval_ticks.max(1) {
        next = sim.step(&next, &[]);
        record_tick(sim, &next, ticks);
    }
    let outcome = classify_outcome(state, &next, scenario.thresholds.slo_ms);

    let history_entry = HistoryEntry {
        state: discretized,
        action: accepted
            .first()
            .copied()
            .unwrap_or_else(|| ScalingAction::no_op(sim.scenario().entry)),
        outcome,
    };
    let record = EpisodeRecord {
        tick: state.tick,
        prompt_text: prompt.text.clone(),
        cot: out,
        executed: accepted,
        rejected,
        pre_digest,
        post_digest: next.digest(),
        reward,
        outcome,
    };
    Ok(IterationOutcome {
        prompt,
        chosen_tokens: samples[best_idx].tokens.clone(),
        predicted,
        record,
        next,
        history_entry,
    })
}

/// One scheduling iteration: prompt, generate, interpret, verify, execute,
/// classify, optionally adapt online. Advances the state by
/// `cfg.interval_ticks` ticks.
#[allow(clippy::too_many_arguments)]
pub fn scheduling_iteration(
    sim: &Simulator,
    state: &ClusterState,
    carrier: &Carrier,
    backend: &dyn PolicyBackend,
    online: Option<&mut crate::policy::TokenSequencePolicy>,
    recent_arrivals: &[f64],
    cfg: &ControlConfig,
    seed: u64,
    ticks: &mut Vec<TickMetric>,
) -> Result<(Vec<ScalingAction>, EpisodeRecord, ClusterState), ControlError> {
    let outcome = decide_and_execute(sim, state, carrier, backend, recent_arrivals, cfg, seed, ticks)?;
    if cfg.required_online_training && !outcome.record.executed.is_empty() {
        if let (Some(policy), Some(predicted)) = (online, outcome.predicted) {
            let context = outcome.prompt.context_token(&policy.vocab);
            train::online_step(
                policy,
                context,
                &outcome.chosen_tokens,
                predicted,
                outcome.record.outcome,
                &cfg.training,
            )?;
        }
        // Non-trainable backends skip online adaptation by design.
    }
    Ok((outcome.record.executed.clone(), outcome.record, outcome.next))
}

/// Generic loop driver: `iterate` runs one full decision (and any online
/// adaptation) per interval; a policy failure costs the iteration, not the
/// run, leaving a degraded no-op record so the episode log stays replayable.
/// When configured, the carrier is rebuilt every N iterations from the run's
/// own accumulated (state, action, outcome) history.
fn drive_loop(
    sim: &Simulator,
    cfg: &ControlConfig,
    initial_carrier: &Carrier,
    mut iterate: impl FnMut(
        &ClusterState,
        &Carrier,
        &[f64],
        u64,
        &mut Vec<TickMetric>,
    ) -> Result<IterationOutcome, ControlError>,
) -> Result<SchedulingRun, ControlError> {
    let interval = cfg.interval_ticks;
    if interval == 0 || cfg.horizon_ticks == 0 || !cfg.horizon_ticks.is_multiple_of(interval) {
        return Err(ControlError::BadHorizon { horizon: cfg.horizon_ticks, interval });
    }
    let iterations = cfg.horizon_ticks / interval;
    let mut seed_stream = XorShift64::new(cfg.seed);
    let mut state = sim.initial_state();
    let mut ticks = Vec::with_capacity(cfg.horizon_ticks as usize);
    let mut records = Vec::with_capacity(iterations as usize);
    let mut latency_samples = Vec::new();
    let mut arrivals: Vec<f64> = vec![state.arrival_rate];
    let mut carrier = initial_carrier.clone();
    let mut history: Vec<HistoryEntry> = Vec::new();

    for iteration in 0..iterations {
        if let Some(every) = cfg.refresh_carrier_every {
            if every > 0 && iteration > 0 && iteration.is_multiple_of(every) && !history.is_empty() {
                carrier = encode::build_carrier(&history, cfg.carrier_k);
            }
        }
        let seed = seed_stream.next_u64();
        match iterate(&state, &carrier, &arrivals, seed, &mut ticks) {
            Ok(outcome) => {
                history.push(outcome.history_entry);
                records.push(outcome.record);
                state = outcome.next;
            }
            Err(ControlError::Policy(err)) => {
                eprintln!("iteration {iteration}: policy failure, continuing with no-op: {err}");
                let pre_digest = state.digest();
                let pre = state.clone();
                for _ in 0..interval {
                    state = sim.step(&state, &[]);
                    record_tick(sim, &state, &mut ticks);
                }
                records.push(EpisodeRecord {
                    tick: pre.tick,
                    prompt_text: String::new(),
                    cot: cot::parse("", Vocab::standard()),
                    executed: Vec::new(),
                    rejected: Vec::new(),
                    pre_digest,
                    post_digest: state.digest(),
                    reward: None,
                    outcome: classify_outcome(&pre, &state, sim.scenario().thresholds.slo_ms),
                });
            }
            Err(other) => return Err(other),
        }
        arrivals.push(state.arrival_rate);
        if arrivals.len() > 16 {
            arrivals.remove(0);
        }
        let sample_seed = seed_stream.next_u64();
        latency_samples.extend(sim.sample_latency_distribution(&state, 200, sample_seed));
    }
    Ok(SchedulingRun { records, ticks, latency_samples, final_state: state })
}

/// Runs the allocation loop for `floor(horizon / interval)` iterations over a
/// fresh simulation, sampling the latency distribution at each iteration
/// boundary. No online adaptation.
pub fn run_allocation_loop(
    sim: &Simulator,
    backend: &dyn PolicyBackend,
    carrier: &Carrier,
    cfg: &ControlConfig,
) -> Result<SchedulingRun, ControlError> {
    drive_loop(sim, cfg, carrier, |state, carrier, arrivals, seed, ticks| {
        decide_and_execute(sim, state, carrier, backend, arrivals, cfg, seed, ticks)
    })
}

/// Allocation loop for the trainable policy: the very policy that generates
/// each decision receives the online updates, so adaptation feeds the next
/// iteration's generation.
pub fn run_allocation_loop_online(
    sim: &Simulator,
    policy: &mut crate::policy::TokenSequencePolicy,
    carrier: &Carrier,
    cfg: &ControlConfig,
) -> Result<SchedulingRun, ControlError> {
    drive_loop(sim, cfg, carrier, |state, carrier, arrivals, seed, ticks| {
        let outcome = decide_and_execute(sim, state, carrier, &*policy, arrivals, cfg, seed, ticks)?;
        if cfg.required_online_training && !outcome.record.executed.is_empty() {
            if let Some(predicted) = outcome.predicted {
                let context = outcome.prompt.context_token(&policy.vocab);
                train::online_step(
                    policy,
                    context,
                    &outcome.chosen_tokens,
                    predicted,
                    outcome.record.outcome,
                    &cfg.training,
                )?;
            }
        }
        Ok(outcome)
    })
}

/// One-shot root-cause identification over a state snapshot. Performs no
/// simulator mutations.
pub fn run_rca_once(
    sim: &Simulator,
    state: &ClusterState,
    backend: &dyn PolicyBackend,
    cfg: &ControlConfig,
) -> Result<RcaAnswer, ControlError> {
    let scenario = sim.scenario();
    let vocab = Vocab::standard();
    let discretized = discretize(state, &scenario.thresholds);
    let prompt = aggregate_prompt(
        &discretized,
        &encode::encode_call_graph(scenario),
        None,
        None,
        &encode::deployments_text(scenario),
        PromptTask::Rca,
        vocab,
    );
    let truth = sim.ground_truth_labels(state);
    backend.observe(&GenerationContext { discretized: Some(&discretized), truth: Some(&truth) });
    let samples = backend.generate(&prompt, cfg.group_size, cfg.seed)?;
    let (_, out, reward) = select_candidate(&samples, Some(&truth), vocab, &cfg.training.reward);
    Ok(RcaAnswer { predicted: out.root_set(), top1: out.top1(), cot: out, reward })
}

/// System-wide dispatch: optional offline training (trainable backends only),
/// then either the one-shot root-cause path over the provided or initial
/// state, or the full allocation loop after a state-gathering phase.
pub fn run_system(
    sim: &Simulator,
    handle: &mut crate::policy::PolicyHandle,
    rca_state: Option<&ClusterState>,
    cfg: &ControlConfig,
) -> Result<SystemOutput, ControlError> {
    if cfg.required_offline_training {
        if let Some(policy) = handle.as_toy_mut() {
            let dataset = synthesize_dataset(sim.scenario(), 32, cfg.seed ^ 0xda7a);
            let (sft_part, gspo_part) =
                train::split_dataset(dataset, cfg.training.partition_ratio, cfg.training.seed)?;
            train::run_sft(policy, &sft_part, &cfg.training)?;
            let task = train::AnnotatedTask {
                samples: &gspo_part,
                vocab: Vocab::standard(),
                cfg: cfg.training.reward,
            };
            train::run_gspo(policy, &task, &cfg.training)?;
        } else {
            eprintln!("offline training requested but the backend is not trainable; skipping");
        }
    }

    match cfg.task {
        TaskKind::RootCauseIdentification => {
            let initial;
            let state = match rca_state {
                Some(s) => s,
                None => {
                    initial = sim.initial_state();
                    &initial
                }
            };
            let answer = run_rca_once(sim, state, handle.backend(), cfg)?;
            Ok(SystemOutput::RootCause(answer))
        }
        TaskKind::Allocation => {
            let (carrier, _, _) = state_gathering_phase(sim, cfg);
            let run = match handle.as_toy_mut() {
                Some(policy) if cfg.required_online_training => {
                    run_allocation_loop_online(sim, policy, &carrier, cfg)?
                }
                _ => run_allocation_loop(sim, handle.backend(), &carrier, cfg)?,
            };
            Ok(SystemOutput::Scheduling(run))
        }
    }
}

/// Builds an annotated dataset of fault scenarios answered by the scripted
/// oracle: per sample, inject a random fault window, advance a fresh
/// simulation into it, and pair the resulting prompt with the oracle's
/// violation-free response.
pub fn synthesize_dataset(
    scenario: &crate::sim::Scenario,
    n: usize,
    seed: u64,
) -> Vec<AnnotatedSample> {
    let vocab = Vocab::standard();
    let mut rng = XorShift64::new(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (sim, target_tick) = inject_random_faults(scenario, &mut rng);
        let mut state = sim.initial_state();
        for _ in 0..target_tick {
            state = sim.step(&state, &[]);
        }
        let truth = sim.ground_truth_labels(&state);
        let discretized = discretize(&state, &scenario.thresholds);
        let prompt = aggregate_prompt(
            &discretized,
            &encode::encode_call_graph(scenario),
            None,
            None,
            &encode::deployments_text(scenario),
            PromptTask::Rca,
            vocab,
        );
        let text = ScriptedOracle::response_text(&truth);
        let reference_response = vocab.tokenize_content(&text);
        out.push(AnnotatedSample { prompt, reference_response, truth });
    }
    out
}

/// Derives a scenario copy with one or two random fault injections and
/// returns a simulator plus a tick inside the fault window.
pub fn inject_random_faults(
    scenario: &crate::sim::Scenario,
    rng: &mut XorShift64,
) -> (Simulator, u64) {
    let mut derived = scenario.clone();
    derived.faults.clear();
    let ids: Vec<ServiceId> = derived.services.keys().copied().collect();
    let fault_count = 1 + rng.next_usize(2);
    let types = [
        crate::sim::FaultType::CpuHog,
        crate::sim::FaultType::MemLeak,
        crate::sim::FaultType::NetDelay,
    ];
    let mut used: BTreeSet<ServiceId> = BTreeSet::new();
    for _ in 0..fault_count {
        let service = ids[rng.next_usize(ids.len())];
        if !used.insert(service) {
            continue;
        }
        derived.faults.push(crate::sim::FaultInjection {
            service_id: service,
            fault_type: types[rng.next_usize(3)],
            magnitude: 0.3 + 0.4 * rng.next_f64(),
            start_tick: 1,
            end_tick: 40,
        });
    }
    // MemLeak needs a couple of ticks to show; tick 4 sits inside every window.
    (Simulator::new(derived), 4)
}

/// Replays a scheduling run from its records and confirms that every executed
/// action re-verifies against the replayed pre-state and that state digests
/// line up. Determinism makes the replay exact.
pub fn audit_episodes(
    sim: &Simulator,
    cfg: &ControlConfig,
    records: &[EpisodeRecord],
) -> Result<(), ControlError> {
    let mut state = sim.initial_state();
    for (index, record) in records.iter().enumerate() {
        if state.digest() != record.pre_digest {
            return Err(ControlError::AuditFailed {
                index,
                reason: format!(
                    "pre-state digest mismatch: replay {:#x}, record {:#x}",
                    state.digest(),
                    record.pre_digest
                ),
            });
        }
        let (accepted, _) = verify_actions(&record.executed, &state, &cfg.rules);
        if accepted != record.executed {
            return Err(ControlError::AuditFailed {
                index,
                reason: format!(
                    "executed actions fail re-verification: {:?} vs {:?}",
                    record.executed, accepted
                ),
            });
        }
        state = sim.step(&state, &record.executed);
        for _ in 1..cfg.interval_ticks.max(1) {
            state = sim.step(&state, &[]);
        }
        if state.digest() != record.post_digest {
            return Err(ControlError::AuditFailed {
                index,
                reason: "post-state digest mismatch".into(),
            });
        }
    }
    Ok(())
}
