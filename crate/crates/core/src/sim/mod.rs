//! Deterministic discrete-time microservice cluster simulation.
//!
//! The simulator is the ground-truth environment the rest of the crate is
//! built against: a DAG of services with per-service M/M/c queues, replica
//! readiness delays, first-fit placement on a fixed machine pool, fault
//! injection (CPU hogs, memory leaks, network delays), and workload replay.
//!
//! Determinism contract: identical (scenario, action sequence, seed) inputs
//! produce bit-identical state trajectories. All randomness flows through the
//! crate's seeded xorshift64* generator, and all state containers iterate in
//! a fixed order.

mod scenario;

pub use scenario::{FanOutMode, Scenario, ScenarioError, Thresholds, WorkloadTrace};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{Digest, XorShift64};

/// Stable service identifier, 1..=20.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceId(pub u32);

impl std::fmt::Display for ServiceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Machine identifier.
pub type MachineId = u32;

/// Resource dimension: doubles as a service's dominant profile and as the
/// resource axis of a root-cause label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    Cpu,
    Disk,
    Memory,
    Network,
}

impl Resource {
    /// Uppercase profile letter used in call-graph and root-cause text.
    pub fn letter(self) -> char {
        match self {
            Resource::Cpu => 'C',
            Resource::Disk => 'D',
            Resource::Memory => 'M',
            Resource::Network => 'N',
        }
    }

    pub fn from_letter(c: char) -> Option<Resource> {
        match c.to_ascii_uppercase() {
            'C' => Some(Resource::Cpu),
            'D' => Some(Resource::Disk),
            'M' => Some(Resource::Memory),
            'N' => Some(Resource::Network),
            _ => None,
        }
    }
}

/// Physical machine with allocatable CPU (millicores) and memory (MiB).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Machine {
    pub id: MachineId,
    pub cpu_capacity: u32,
    pub mem_capacity: u32,
}

/// Static description of one microservice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: ServiceId,
    pub name: String,
    pub profile: Resource,
    /// Requests/s one replica sustains at its requested CPU allocation.
    pub base_service_rate: f64,
    /// Requested millicores per replica.
    pub cpu_request: u32,
    /// Requested MiB per replica.
    pub mem_request: u32,
    /// Seconds before a new replica serves traffic.
    pub readiness_time: f64,
    /// Callee services, in call order.
    pub downstream: Vec<ServiceId>,
}

/// Kinds of scaling operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Horizontal,
    VerticalCpu,
    VerticalMem,
}

/// One scaling operation targeting one service.
///
/// `delta` is replicas for `Horizontal`, millicores for `VerticalCpu`, and
/// MiB for `VerticalMem`. A `no_op` action carries zero delta and is skipped
/// by the executor; any other action must have a nonzero delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingAction {
    pub service_id: ServiceId,
    pub kind: ActionKind,
    pub delta: i64,
    pub no_op: bool,
}

impl ScalingAction {
    pub fn horizontal(service_id: ServiceId, delta: i64) -> Self {
        Self { service_id, kind: ActionKind::Horizontal, delta, no_op: false }
    }

    pub fn vertical_cpu(service_id: ServiceId, delta: i64) -> Self {
        Self { service_id, kind: ActionKind::VerticalCpu, delta, no_op: false }
    }

    pub fn vertical_mem(service_id: ServiceId, delta: i64) -> Self {
        Self { service_id, kind: ActionKind::VerticalMem, delta, no_op: false }
    }

    pub fn no_op(service_id: ServiceId) -> Self {
        Self { service_id, kind: ActionKind::Horizontal, delta: 0, no_op: true }
    }

    pub fn is_valid(&self) -> bool {
        self.no_op || self.delta != 0
    }
}

impl std::fmt::Display for ScalingAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.no_op {
            return write!(f, "no-op {}", self.service_id);
        }
        let verb = match (self.kind, self.delta >= 0) {
            (ActionKind::Horizontal, true) => "SCALE_OUT",
            (ActionKind::Horizontal, false) => "SCALE_IN",
            (ActionKind::VerticalCpu, true) => "CPU_UP",
            (ActionKind::VerticalCpu, false) => "CPU_DOWN",
            (ActionKind::VerticalMem, true) => "MEM_UP",
            (ActionKind::VerticalMem, false) => "MEM_DOWN",
        };
        write!(f, "{verb} {} {}", self.service_id, self.delta.abs())
    }
}

/// Injected fault classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultType {
    CpuHog,
    MemLeak,
    NetDelay,
}

impl FaultType {
    /// Root-cause resource dimension this fault manifests as.
    pub fn resource(self) -> Resource {
        match self {
            FaultType::CpuHog => Resource::Cpu,
            FaultType::MemLeak => Resource::Memory,
            FaultType::NetDelay => Resource::Network,
        }
    }
}

/// One scheduled fault: active on ticks in `[start_tick, end_tick)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub service_id: ServiceId,
    pub fault_type: FaultType,
    /// Severity in (0, 1].
    pub magnitude: f64,
    pub start_tick: u64,
    pub end_tick: u64,
}

impl FaultInjection {
    pub fn active_at(&self, tick: u64) -> bool {
        self.start_tick <= tick && tick < self.end_tick
    }
}

/// One replica and where it lives; `ready_at` is the first tick it serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSlot {
    pub machine: MachineId,
    pub ready_at: u64,
}

/// Per-service dynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub slots: Vec<ReplicaSlot>,
    /// Millicores allocated per replica.
    pub cpu_alloc: u32,
    /// MiB allocated per replica.
    pub mem_alloc: u32,
    pub cpu_util: f64,
    pub mem_util: f64,
    /// Modeled mean sojourn time through this service, in milliseconds.
    pub mean_latency_ms: f64,
    /// Modeled arrival rate at this service, requests/s.
    pub rps: f64,
    /// Accumulated memory-leak level (fraction of the requested footprint).
    pub leak_level: f64,
}

impl ServiceState {
    pub fn replica_count(&self) -> u32 {
        self.slots.len() as u32
    }

    pub fn ready_count(&self, tick: u64) -> u32 {
        self.slots.iter().filter(|s| s.ready_at <= tick).count() as u32
    }
}

/// Per-machine usage snapshot carried in the state for capacity checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineUsage {
    pub id: MachineId,
    pub cpu_capacity: u32,
    pub mem_capacity: u32,
    pub cpu_used: u64,
    pub mem_used: u64,
}

impl MachineUsage {
    pub fn cpu_free(&self) -> u64 {
        u64::from(self.cpu_capacity).saturating_sub(self.cpu_used)
    }

    pub fn mem_free(&self) -> u64 {
        u64::from(self.mem_capacity).saturating_sub(self.mem_used)
    }
}

/// Full simulated cluster snapshot at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub tick: u64,
    /// Requests/s arriving at the entry service.
    pub arrival_rate: f64,
    pub services: BTreeMap<ServiceId, ServiceState>,
    pub machines: Vec<MachineUsage>,
    /// Faults active at this tick.
    pub active_faults: Vec<FaultInjection>,
}

impl ClusterState {
    /// Stable structural digest; equal digests mean equal trajectories.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        d.write_u64(self.tick);
        d.write_f64(self.arrival_rate);
        for (id, s) in &self.services {
            d.write_u32(id.0);
            d.write_u32(s.cpu_alloc);
            d.write_u32(s.mem_alloc);
            d.write_f64(s.cpu_util);
            d.write_f64(s.mem_util);
            d.write_f64(s.mean_latency_ms);
            d.write_f64(s.rps);
            d.write_f64(s.leak_level);
            d.write_u64(s.slots.len() as u64);
            for slot in &s.slots {
                d.write_u32(slot.machine);
                d.write_u64(slot.ready_at);
            }
        }
        for m in &self.machines {
            d.write_u32(m.id);
            d.write_u64(m.cpu_used);
            d.write_u64(m.mem_used);
        }
        d.write_u64(self.active_faults.len() as u64);
        for f in &self.active_faults {
            d.write_u32(f.service_id.0);
            d.write_u32(f.fault_type as u32);
            d.write_f64(f.magnitude);
            d.write_u64(f.start_tick);
            d.write_u64(f.end_tick);
        }
        d.finish()
    }

    /// Number of services whose modeled latency exceeds the SLO.
    pub fn slo_violation_count(&self, slo_ms: f64) -> usize {
        self.services.values().filter(|s| s.mean_latency_ms > slo_ms).count()
    }
}

/// Ground-truth root-cause label set: (service, resource dimension) pairs.
pub type TruthSet = std::collections::BTreeSet<(ServiceId, Resource)>;

/// Mean M/M/c sojourn time in seconds via the Erlang-B recurrence, or `None`
/// when the queue is unstable (rho >= 1) or has no servers.
pub fn mmc_mean_sojourn(lambda: f64, mu: f64, servers: u32) -> Option<f64> {
    if servers == 0 || mu <= 0.0 {
        return None;
    }
    let c = f64::from(servers);
    if lambda <= 0.0 {
        return Some(1.0 / mu);
    }
    let rho = lambda / (c * mu);
    if rho >= 1.0 {
        return None;
    }
    let offered = lambda / mu;
    // Erlang-B by recurrence, then the standard B -> C conversion.
    let mut blocking = 1.0;
    for k in 1..=servers {
        blocking = offered * blocking / (f64::from(k) + offered * blocking);
    }
    let erlang_c = blocking / (1.0 - rho * (1.0 - blocking));
    Some(1.0 / mu + erlang_c / (c * mu - lambda))
}

/// Probability an arrival waits (Erlang C), used by the latency sampler.
fn mmc_wait_probability(lambda: f64, mu: f64, servers: u32) -> f64 {
    if servers == 0 || mu <= 0.0 || lambda <= 0.0 {
        return 0.0;
    }
    let c = f64::from(servers);
    let rho = lambda / (c * mu);
    if rho >= 1.0 {
        return 1.0;
    }
    let offered = lambda / mu;
    let mut blocking = 1.0;
    for k in 1..=servers {
        blocking = offered * blocking / (f64::from(k) + offered * blocking);
    }
    blocking / (1.0 - rho * (1.0 - blocking))
}

/// Per-service queueing figures for one state, shared by the stepper and the
/// latency sampler.
#[derive(Debug, Clone)]
struct ServiceLoad {
    lambda: f64,
    mu_effective: f64,
    ready: u32,
    saturated: bool,
    mean_sojourn_ms: f64,
    wait_probability: f64,
    /// Added per outbound call, from active NetDelay faults.
    net_delay_ms: f64,
}

/// Deterministic simulator bound to one validated scenario.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    /// Calls per entry request reaching each service.
    visits: BTreeMap<ServiceId, f64>,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Self {
        let visits = compute_visits(&scenario);
        Self { scenario, visits }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn dt(&self) -> f64 {
        self.scenario.dt_seconds
    }

    /// Initial state: every service at one ready replica at its requested
    /// allocation, placed first-fit over the machine list, tick 0 metrics
    /// computed from the trace's tick-0 arrival rate.
    pub fn initial_state(&self) -> ClusterState {
        let mut machines: Vec<MachineUsage> = self
            .scenario
            .machines
            .iter()
            .map(|m| MachineUsage {
                id: m.id,
                cpu_capacity: m.cpu_capacity,
                mem_capacity: m.mem_capacity,
                cpu_used: 0,
                mem_used: 0,
            })
            .collect();
        let mut services = BTreeMap::new();
        for spec in self.scenario.services.values() {
            let slot = (0..machines.len())
                .find(|&i| {
                    machines[i].cpu_free() >= u64::from(spec.cpu_request)
                        && machines[i].mem_free() >= u64::from(spec.mem_request)
                })
                .expect("initial fit validated at load time");
            machines[slot].cpu_used += u64::from(spec.cpu_request);
            machines[slot].mem_used += u64::from(spec.mem_request);
            services.insert(
                spec.id,
                ServiceState {
                    slots: vec![ReplicaSlot { machine: machines[slot].id, ready_at: 0 }],
                    cpu_alloc: spec.cpu_request,
                    mem_alloc: spec.mem_request,
                    cpu_util: 0.0,
                    mem_util: 0.0,
                    mean_latency_ms: 0.0,
                    rps: 0.0,
                    leak_level: 0.0,
                },
            );
        }
        let mut state = ClusterState {
            tick: 0,
            arrival_rate: self.scenario.trace.rate_at(0),
            services,
            machines,
            active_faults: self.active_faults_at(0),
        };
        self.recompute_metrics(&mut state);
        state
    }

    fn active_faults_at(&self, tick: u64) -> Vec<FaultInjection> {
        self.scenario.faults.iter().filter(|f| f.active_at(tick)).copied().collect()
    }

    /// Advances one tick, applying `actions` first.
    ///
    /// Actions are assumed to have passed the verifier; an infeasible action
    /// reaching this point is a caller defect and is clamped defensively.
    /// Horizontal additions become ready `ceil(readiness_time / dt)` ticks
    /// after they appear; vertical changes are visible from the produced tick.
    pub fn step(&self, state: &ClusterState, actions: &[ScalingAction]) -> ClusterState {
        let tick = state.tick + 1;
        let mut services = state.services.clone();
        let mut machines = state.machines.clone();

        for action in actions {
            if action.no_op || action.delta == 0 {
                continue;
            }
            let Some(spec) = self.scenario.services.get(&action.service_id) else {
                debug_assert!(false, "verifier let through unknown service {}", action.service_id);
                continue;
            };
            let svc = services.get_mut(&action.service_id).expect("state covers all services");
            match action.kind {
                ActionKind::Horizontal => {
                    if action.delta > 0 {
                        let readiness_ticks =
                            (spec.readiness_time / self.scenario.dt_seconds).ceil() as u64;
                        for _ in 0..action.delta {
                            let Some(slot) = first_fit(&machines, svc.cpu_alloc, svc.mem_alloc) else {
                                debug_assert!(false, "verifier let through infeasible scale-out");
                                break;
                            };
                            machines[slot].cpu_used += u64::from(svc.cpu_alloc);
                            machines[slot].mem_used += u64::from(svc.mem_alloc);
                            svc.slots.push(ReplicaSlot {
                                machine: machines[slot].id,
                                ready_at: tick + readiness_ticks,
                            });
                        }
                    } else {
                        let remove = action.delta.unsigned_abs() as usize;
                        for _ in 0..remove {
                            if svc.slots.len() <= 1 {
                                debug_assert!(false, "verifier let through scale-in below 1");
                                break;
                            }
                            let slot = svc.slots.pop().expect("len > 1");
                            if let Some(m) = machines.iter_mut().find(|m| m.id == slot.machine) {
                                m.cpu_used = m.cpu_used.saturating_sub(u64::from(svc.cpu_alloc));
                                m.mem_used = m.mem_used.saturating_sub(u64::from(svc.mem_alloc));
                            }
                        }
                    }
                }
                ActionKind::VerticalCpu => {
                    let new_alloc = (i64::from(svc.cpu_alloc) + action.delta).max(1) as u32;
                    apply_vertical(&mut machines, svc, new_alloc, svc.mem_alloc);
                }
                ActionKind::VerticalMem => {
                    let new_alloc = (i64::from(svc.mem_alloc) + action.delta).max(1) as u32;
                    apply_vertical(&mut machines, svc, svc.cpu_alloc, new_alloc);
                }
            }
        }

        let mut next = ClusterState {
            tick,
            arrival_rate: self.scenario.trace.rate_at(tick),
            services,
            machines,
            active_faults: self.active_faults_at(tick),
        };

        // Memory-leak growth, then OOM restarts before load is evaluated.
        // A restart always costs at least one tick of readiness.
        let leak_by_service = self.fault_magnitude(&next, FaultType::MemLeak);
        let mut oomed = Vec::new();
        let ids: Vec<ServiceId> = next.services.keys().copied().collect();
        for id in ids {
            let spec = &self.scenario.services[&id];
            let grow = leak_by_service.get(&id).copied().unwrap_or(0.0);
            let svc = next.services.get_mut(&id).expect("present");
            if grow > 0.0 {
                svc.leak_level += grow;
            }
            let resident_frac = f64::from(spec.mem_request) * (MEM_BASE_FRACTION + svc.leak_level)
                / f64::from(svc.mem_alloc);
            if resident_frac >= 1.0 {
                let readiness_ticks = (spec.readiness_time / self.scenario.dt_seconds).ceil() as u64;
                for slot in &mut svc.slots {
                    slot.ready_at = tick + readiness_ticks.max(1);
                }
                svc.leak_level = 0.0;
                oomed.push(id);
            }
        }

        self.recompute_metrics(&mut next);
        for id in oomed {
            next.services.get_mut(&id).expect("present").mem_util = 1.0;
        }
        next
    }

    /// Total CpuHog magnitude per service (multiplicatively combined slowdown).
    fn fault_magnitude(&self, state: &ClusterState, kind: FaultType) -> BTreeMap<ServiceId, f64> {
        let mut out = BTreeMap::new();
        for f in &state.active_faults {
            if f.fault_type == kind {
                *out.entry(f.service_id).or_insert(0.0) += f.magnitude;
            }
        }
        out
    }

    fn service_loads(&self, state: &ClusterState) -> BTreeMap<ServiceId, ServiceLoad> {
        let cpu_hogs = self.fault_magnitude(state, FaultType::CpuHog);
        let net_delays = self.fault_magnitude(state, FaultType::NetDelay);
        let mut loads = BTreeMap::new();
        for (id, svc) in &state.services {
            let spec = &self.scenario.services[id];
            let lambda = state.arrival_rate * self.visits[id];
            let hog = cpu_hogs.get(id).copied().unwrap_or(0.0).min(1.0);
            let mu_effective = spec.base_service_rate
                * (f64::from(svc.cpu_alloc) / f64::from(spec.cpu_request))
                * (1.0 - hog);
            let ready = svc.ready_count(state.tick);
            let sojourn = if mu_effective > 0.0 {
                mmc_mean_sojourn(lambda, mu_effective, ready)
            } else {
                None
            };
            let (saturated, mean_sojourn_ms) = match sojourn {
                Some(w) => (false, w * 1000.0),
                None => (true, self.scenario.saturation_cap_ms),
            };
            loads.insert(
                *id,
                ServiceLoad {
                    lambda,
                    mu_effective,
                    ready,
                    saturated,
                    mean_sojourn_ms,
                    wait_probability: if saturated {
                        1.0
                    } else {
                        mmc_wait_probability(lambda, mu_effective, ready)
                    },
                    net_delay_ms: net_delays.get(id).copied().unwrap_or(0.0) * 100.0,
                },
            );
        }
        loads
    }

    fn recompute_metrics(&self, state: &mut ClusterState) {
        let loads = self.service_loads(state);
        for (id, svc) in state.services.iter_mut() {
            let load = &loads[id];
            let spec = &self.scenario.services[id];
            svc.rps = load.lambda;
            svc.mean_latency_ms = load.mean_sojourn_ms;
            svc.cpu_util = if load.saturated {
                1.0
            } else {
                (load.lambda / (f64::from(load.ready) * load.mu_effective)).min(1.0)
            };
            svc.mem_util = (f64::from(spec.mem_request) * (MEM_BASE_FRACTION + svc.leak_level)
                / f64::from(svc.mem_alloc))
            .min(1.0);
        }
    }

    /// Modeled end-to-end mean latency (ms) for a request entering at the
    /// entry service, following the configured fan-out composition.
    pub fn end_to_end_latency_ms(&self, state: &ClusterState) -> f64 {
        let loads = self.service_loads(state);
        let total = self.path_latency(self.scenario.entry, &loads);
        total.min(self.scenario.saturation_cap_ms)
    }

    fn path_latency(&self, id: ServiceId, loads: &BTreeMap<ServiceId, ServiceLoad>) -> f64 {
        let load = &loads[&id];
        let own = load.mean_sojourn_ms;
        let spec = &self.scenario.services[&id];
        match self.scenario.fan_out {
            FanOutMode::Sequential => {
                own + spec
                    .downstream
                    .iter()
                    .map(|d| load.net_delay_ms + self.path_latency(*d, loads))
                    .sum::<f64>()
            }
            FanOutMode::Parallel => {
                own + spec
                    .downstream
                    .iter()
                    .map(|d| load.net_delay_ms + self.path_latency(*d, loads))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Modeled throughput in requests/s: the entry arrival rate scaled down by
    /// the most-loaded service on the call graph.
    pub fn served_rps(&self, state: &ClusterState) -> f64 {
        if state.arrival_rate <= 0.0 {
            return 0.0;
        }
        let loads = self.service_loads(state);
        let mut fraction: f64 = 1.0;
        for load in loads.values() {
            if load.lambda <= 0.0 {
                continue;
            }
            let capacity = f64::from(load.ready) * load.mu_effective;
            fraction = fraction.min((capacity / load.lambda).min(1.0));
        }
        state.arrival_rate * fraction.max(0.0)
    }

    /// Draws `n` end-to-end latency samples (ms), deterministic under `seed`.
    ///
    /// Per service visit the queueing wait is drawn from the M/M/c waiting
    /// law (an atom at zero plus an exponential tail) while the service time
    /// enters at its mean, so a zero-load service contributes exactly `1/mu`.
    /// A saturated service contributes the saturation cap, and every sample
    /// is clamped to the cap so distributions stay finite.
    pub fn sample_latency_distribution(&self, state: &ClusterState, n: usize, seed: u64) -> Vec<f64> {
        assert!(n >= 1, "need at least one sample");
        let loads = self.service_loads(state);
        let mut rng = XorShift64::new(seed);
        let cap = self.scenario.saturation_cap_ms;
        (0..n)
            .map(|_| self.sample_path(self.scenario.entry, &loads, &mut rng).min(cap))
            .collect()
    }

    fn sample_path(
        &self,
        id: ServiceId,
        loads: &BTreeMap<ServiceId, ServiceLoad>,
        rng: &mut XorShift64,
    ) -> f64 {
        let load = &loads[&id];
        let cap = self.scenario.saturation_cap_ms;
        let own = if load.saturated {
            cap
        } else {
            let service_time_ms = 1000.0 / load.mu_effective;
            let u = rng.next_f64();
            let wait_ms = if u < load.wait_probability {
                let rate = f64::from(load.ready) * load.mu_effective - load.lambda;
                rng.next_exp(rate) * 1000.0
            } else {
                0.0
            };
            service_time_ms + wait_ms
        };
        let spec = &self.scenario.services[&id];
        let downstream: f64 = match self.scenario.fan_out {
            FanOutMode::Sequential => spec
                .downstream
                .iter()
                .map(|d| load.net_delay_ms + self.sample_path(*d, loads, rng))
                .sum(),
            FanOutMode::Parallel => spec
                .downstream
                .iter()
                .map(|d| load.net_delay_ms + self.sample_path(*d, loads, rng))
                .fold(0.0, f64::max),
        };
        own + downstream
    }

    /// Maps the state's active fault injections to root-cause labels.
    pub fn ground_truth_labels(&self, state: &ClusterState) -> TruthSet {
        state
            .active_faults
            .iter()
            .map(|f| (f.service_id, f.fault_type.resource()))
            .collect()
    }
}

/// Fraction of the requested memory footprint resident with no load or leak.
const MEM_BASE_FRACTION: f64 = 0.3;

fn first_fit(machines: &[MachineUsage], cpu: u32, mem: u32) -> Option<usize> {
    (0..machines.len())
        .find(|&i| machines[i].cpu_free() >= u64::from(cpu) && machines[i].mem_free() >= u64::from(mem))
}

/// Moves a service's per-replica allocation to new values, updating machine
/// usage for every hosted replica.
fn apply_vertical(machines: &mut [MachineUsage], svc: &mut ServiceState, new_cpu: u32, new_mem: u32) {
    for slot in &svc.slots {
        if let Some(m) = machines.iter_mut().find(|m| m.id == slot.machine) {
            m.cpu_used = m.cpu_used.saturating_sub(u64::from(svc.cpu_alloc)) + u64::from(new_cpu);
            m.mem_used = m.mem_used.saturating_sub(u64::from(svc.mem_alloc)) + u64::from(new_mem);
        }
    }
    svc.cpu_alloc = new_cpu;
    svc.mem_alloc = new_mem;
}

fn compute_visits(scenario: &Scenario) -> BTreeMap<ServiceId, f64> {
    let mut visits: BTreeMap<ServiceId, f64> = scenario.services.keys().map(|&k| (k, 0.0)).collect();
    visits.insert(scenario.entry, 1.0);
    for id in scenario.topo_order() {
        let weight = visits[&id];
        if weight == 0.0 {
            continue;
        }
        for callee in &scenario.services[&id].downstream {
            *visits.get_mut(callee).expect("validated") += weight;
        }
    }
    visits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_service_scenario(rate: f64, arrival: f64) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{
                "name": "one",
                "machines": [{{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}}],
                "services": [{{"id": 1, "name": "solo", "profile": "Cpu",
                              "base_service_rate": {rate}, "cpu_request": 100, "mem_request": 128}}],
                "workload": {{"inline": [[0, {arrival}]]}}
            }}"#
        ))
        .unwrap()
    }

    fn chain_scenario() -> Scenario {
        Scenario::from_json(
            r#"{
                "name": "chain",
                "machines": [{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}],
                "services": [
                    {"id": 1, "name": "front", "profile": "Network",
                     "base_service_rate": 100.0, "cpu_request": 100, "mem_request": 128,
                     "downstream": [2]},
                    {"id": 2, "name": "back", "profile": "Cpu",
                     "base_service_rate": 50.0, "cpu_request": 100, "mem_request": 128}
                ],
                "workload": {"inline": [[0, 10.0]]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn zero_load_latency_is_sum_of_service_times() {
        let sim = Simulator::new(Scenario::from_json(
            r#"{
                "machines": [{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}],
                "services": [
                    {"id": 1, "name": "a", "profile": "Cpu", "base_service_rate": 100.0,
                     "cpu_request": 100, "mem_request": 128, "downstream": [2]},
                    {"id": 2, "name": "b", "profile": "Cpu", "base_service_rate": 200.0,
                     "cpu_request": 100, "mem_request": 128}
                ],
                "workload": {"inline": [[0, 0.0]]}
            }"#,
        ).unwrap());
        let state = sim.initial_state();
        for svc in state.services.values() {
            assert_eq!(svc.cpu_util, 0.0);
        }
        // 1/100 s + 1/200 s = 15 ms.
        let e2e = sim.end_to_end_latency_ms(&state);
        assert!((e2e - 15.0).abs() < 1e-9, "{e2e}");
    }

    #[test]
    fn doubling_replicas_halves_utilization() {
        let sim = Simulator::new(single_service_scenario(100.0, 60.0));
        let base = sim.initial_state();
        let util_one = base.services[&ServiceId(1)].cpu_util;
        let doubled = sim.step(&base, &[ScalingAction::horizontal(ServiceId(1), 1)]);
        // readiness_time defaults to 0, so the new replica serves immediately.
        let util_two = doubled.services[&ServiceId(1)].cpu_util;
        assert!((util_one - 0.6).abs() < 1e-12);
        assert!((util_two - 0.3).abs() < 1e-12, "{util_two}");
    }

    #[test]
    fn cpu_hog_halves_rate_and_raises_latency() {
        let mut scenario = single_service_scenario(100.0, 40.0);
        scenario.faults.push(FaultInjection {
            service_id: ServiceId(1),
            fault_type: FaultType::CpuHog,
            magnitude: 0.5,
            start_tick: 1,
            end_tick: 100,
        });
        let sim = Simulator::new(scenario);
        let healthy = sim.initial_state();
        let hogged = sim.step(&healthy, &[]);
        let before = healthy.services[&ServiceId(1)].mean_latency_ms;
        let after = hogged.services[&ServiceId(1)].mean_latency_ms;
        // mu drops 100 -> 50 with lambda 40: still stable but strictly slower.
        assert!(after > before, "{before} -> {after}");
        let expected = mmc_mean_sojourn(40.0, 50.0, 1).unwrap() * 1000.0;
        assert!((after - expected).abs() < 1e-9);
    }

    #[test]
    fn latency_sampling_is_deterministic() {
        let sim = Simulator::new(single_service_scenario(100.0, 70.0));
        let state = sim.initial_state();
        let a = sim.sample_latency_distribution(&state, 1000, 9);
        let b = sim.sample_latency_distribution(&state, 1000, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_load_samples_equal_service_time() {
        let sim = Simulator::new(single_service_scenario(100.0, 0.0));
        let state = sim.initial_state();
        let samples = sim.sample_latency_distribution(&state, 100, 5);
        for s in samples {
            assert!((s - 10.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn saturation_pins_p99_to_cap() {
        let sim = Simulator::new(single_service_scenario(100.0, 150.0));
        let state = sim.initial_state();
        assert_eq!(state.services[&ServiceId(1)].cpu_util, 1.0);
        let samples = sim.sample_latency_distribution(&state, 100, 7);
        for s in samples {
            assert_eq!(s, 10_000.0);
        }
    }

    #[test]
    fn near_saturation_p99_approaches_cap() {
        // rho = 0.999: the exponential wait tail blows past the cap, so the
        // clamped p99 sits exactly at the cap.
        let sim = Simulator::new(single_service_scenario(100.0, 99.9));
        let state = sim.initial_state();
        let mut samples = sim.sample_latency_distribution(&state, 2000, 13);
        samples.sort_by(f64::total_cmp);
        let p99 = samples[(0.99 * 2000.0) as usize - 1];
        assert_eq!(p99, 10_000.0, "p99 {p99}");
        // Mild load for contrast: p99 far below the cap.
        let relaxed = Simulator::new(single_service_scenario(100.0, 50.0));
        let state = relaxed.initial_state();
        let mut samples = relaxed.sample_latency_distribution(&state, 2000, 13);
        samples.sort_by(f64::total_cmp);
        assert!(samples[1979] < 200.0);
    }

    #[test]
    fn sampled_mean_matches_modeled_sojourn() {
        let sim = Simulator::new(single_service_scenario(100.0, 70.0));
        let state = sim.initial_state();
        let n = 100_000;
        let samples = sim.sample_latency_distribution(&state, n, 77);
        let mean = samples.iter().sum::<f64>() / n as f64;
        let modeled = state.services[&ServiceId(1)].mean_latency_ms;
        // Wait-time std at rho 0.7 is ~ the mean; 3 sigma over 100k draws.
        let sigma = modeled / (n as f64).sqrt() * 3.0;
        assert!(
            (mean - modeled).abs() < 3.0 * sigma + 0.5,
            "sampled mean {mean} vs modeled {modeled}"
        );
    }

    #[test]
    fn ground_truth_maps_fault_types() {
        let mut scenario = chain_scenario();
        scenario.faults.push(FaultInjection {
            service_id: ServiceId(2),
            fault_type: FaultType::MemLeak,
            magnitude: 0.2,
            start_tick: 0,
            end_tick: 10,
        });
        scenario.faults.push(FaultInjection {
            service_id: ServiceId(1),
            fault_type: FaultType::NetDelay,
            magnitude: 0.4,
            start_tick: 0,
            end_tick: 10,
        });
        let sim = Simulator::new(scenario);
        let state = sim.initial_state();
        let truth = sim.ground_truth_labels(&state);
        assert_eq!(truth.len(), 2);
        assert!(truth.contains(&(ServiceId(2), Resource::Memory)));
        assert!(truth.contains(&(ServiceId(1), Resource::Network)));
    }

    #[test]
    fn no_faults_empty_truth() {
        let sim = Simulator::new(chain_scenario());
        let state = sim.initial_state();
        assert!(sim.ground_truth_labels(&state).is_empty());
    }

    #[test]
    fn readiness_delays_capacity_exactly() {
        let mut scenario = single_service_scenario(100.0, 0.0);
        scenario
            .services
            .get_mut(&ServiceId(1))
            .unwrap()
            .readiness_time = 3.0;
        let sim = Simulator::new(scenario);
        let mut state = sim.initial_state();
        state = sim.step(&state, &[ScalingAction::horizontal(ServiceId(1), 1)]);
        // Added while producing tick 1; ceil(3/1) = 3 ticks of zero capacity.
        for expect_ready in [1u32, 1, 1, 2] {
            assert_eq!(
                state.services[&ServiceId(1)].ready_count(state.tick),
                expect_ready,
                "tick {}",
                state.tick
            );
            state = sim.step(&state, &[]);
        }
    }

    #[test]
    fn mem_leak_triggers_oom_restart() {
        let mut scenario = single_service_scenario(100.0, 10.0);
        scenario.services.get_mut(&ServiceId(1)).unwrap().readiness_time = 2.0;
        scenario.faults.push(FaultInjection {
            service_id: ServiceId(1),
            fault_type: FaultType::MemLeak,
            magnitude: 0.25,
            start_tick: 1,
            end_tick: 100,
        });
        let sim = Simulator::new(scenario);
        let mut state = sim.initial_state();
        let mut oom_seen = false;
        for _ in 0..6 {
            state = sim.step(&state, &[]);
            if state.services[&ServiceId(1)].mem_util >= 1.0 {
                oom_seen = true;
                break;
            }
        }
        assert!(oom_seen, "leak of 0.25/tick should OOM within 6 ticks");
        // Right after OOM every replica is restarting: zero ready capacity.
        let after = sim.step(&state, &[]);
        assert_eq!(after.services[&ServiceId(1)].ready_count(after.tick), 0);
        assert_eq!(after.services[&ServiceId(1)].mean_latency_ms, 10_000.0);
    }

    #[test]
    fn capacity_conserved_across_steps() {
        let sim = Simulator::new(chain_scenario());
        let mut state = sim.initial_state();
        for i in 0..10 {
            let action = if i % 2 == 0 {
                ScalingAction::horizontal(ServiceId(2), 1)
            } else {
                ScalingAction::vertical_cpu(ServiceId(1), 50)
            };
            state = sim.step(&state, &[action]);
            for m in &state.machines {
                assert!(m.cpu_used <= u64::from(m.cpu_capacity));
                assert!(m.mem_used <= u64::from(m.mem_capacity));
            }
        }
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let scenario = chain_scenario();
        let sim_a = Simulator::new(scenario.clone());
        let sim_b = Simulator::new(scenario);
        let mut a = sim_a.initial_state();
        let mut b = sim_b.initial_state();
        for _ in 0..20 {
            a = sim_a.step(&a, &[ScalingAction::horizontal(ServiceId(2), 1)]);
            b = sim_b.step(&b, &[ScalingAction::horizontal(ServiceId(2), 1)]);
            assert_eq!(a.digest(), b.digest());
        }
    }

    #[test]
    fn net_delay_adds_to_outbound_calls() {
        let mut scenario = chain_scenario();
        scenario.faults.push(FaultInjection {
            service_id: ServiceId(1),
            fault_type: FaultType::NetDelay,
            magnitude: 0.5,
            start_tick: 0,
            end_tick: 10,
        });
        let healthy = Simulator::new(chain_scenario());
        let delayed = Simulator::new(scenario);
        let hs = healthy.initial_state();
        let ds = delayed.initial_state();
        let gap = delayed.end_to_end_latency_ms(&ds) - healthy.end_to_end_latency_ms(&hs);
        assert!((gap - 50.0).abs() < 1e-9, "{gap}");
    }

    #[test]
    fn parallel_fan_out_takes_slowest_branch() {
        let json = r#"{
            "machines": [{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}],
            "services": [
                {"id": 1, "name": "gw", "profile": "Network", "base_service_rate": 100.0,
                 "cpu_request": 100, "mem_request": 128, "downstream": [2, 3]},
                {"id": 2, "name": "fast", "profile": "Cpu", "base_service_rate": 200.0,
                 "cpu_request": 100, "mem_request": 128},
                {"id": 3, "name": "slow", "profile": "Cpu", "base_service_rate": 50.0,
                 "cpu_request": 100, "mem_request": 128}
            ],
            "workload": {"inline": [[0, 0.0]]},
            "fan_out": "parallel"
        }"#;
        let parallel = Simulator::new(Scenario::from_json(json).unwrap());
        let sequential =
            Simulator::new(Scenario::from_json(&json.replace("parallel", "sequential")).unwrap());
        // Zero load: gateway 10ms, branches 5ms and 20ms.
        let p = parallel.end_to_end_latency_ms(&parallel.initial_state());
        let s = sequential.end_to_end_latency_ms(&sequential.initial_state());
        assert!((p - 30.0).abs() < 1e-9, "{p}");
        assert!((s - 35.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn visits_accumulate_along_shared_paths() {
        let scenario = Scenario::from_json(
            r#"{
                "machines": [{"id": 1, "cpu_capacity": 64000, "mem_capacity": 65536}],
                "services": [
                    {"id": 1, "name": "a", "profile": "Cpu", "base_service_rate": 100.0,
                     "cpu_request": 100, "mem_request": 128, "downstream": [2, 3]},
                    {"id": 2, "name": "b", "profile": "Cpu", "base_service_rate": 100.0,
                     "cpu_request": 100, "mem_request": 128, "downstream": [4]},
                    {"id": 3, "name": "c", "profile": "Cpu", "base_service_rate": 100.0,
                     "cpu_request": 100, "mem_request": 128, "downstream": [4]},
                    {"id": 4, "name": "d", "profile": "Cpu", "base_service_rate": 100.0,
                     "cpu_request": 100, "mem_request": 128}
                ],
                "workload": {"inline": [[0, 10.0]]}
            }"#,
        )
        .unwrap();
        let sim = Simulator::new(scenario);
        let state = sim.initial_state();
        // Service 4 is reached through both branches: twice per entry request.
        assert!((state.services[&ServiceId(4)].rps - 20.0).abs() < 1e-12);
    }
}
