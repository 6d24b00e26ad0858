//! Scenario files: cluster topology, workload, fault schedule, thresholds.
//!
//! A scenario is a JSON document with `machines[]`, `services[]`, `workload`
//! (inline `[tick, rps]` pairs or a `csv` path relative to the scenario file),
//! and `faults[]`, plus the SLO and discretization cut points used downstream.
//! Loading validates the call graph (a DAG, no self-calls), resolves every
//! service reference, and checks that the tick-0 placement fits the machines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FaultInjection, FaultType, Machine, Resource, ServiceId, ServiceSpec};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario has no machines")]
    NoMachines,
    #[error("scenario has no services")]
    NoServices,
    #[error("duplicate machine id {0}")]
    DuplicateMachine(u32),
    #[error("duplicate service id {0}")]
    DuplicateService(u32),
    #[error("service id {0} out of range 1..=20")]
    ServiceIdRange(u32),
    #[error("service {caller} calls unknown service {callee}")]
    UnknownService { caller: u32, callee: u32 },
    #[error("call graph contains a cycle through service {0} (self-calls count)")]
    CycleDetected(u32),
    #[error("service {caller} lists callee {callee} twice")]
    DuplicateEdge { caller: u32, callee: u32 },
    #[error("entry service {0} does not exist")]
    UnknownEntry(u32),
    #[error("machine {0}: non-positive capacity")]
    BadCapacity(u32),
    #[error("service {0}: {1}")]
    BadService(u32, String),
    #[error("fault on service {0}: {1}")]
    BadFault(u32, String),
    #[error("workload trace: {0}")]
    BadTrace(String),
    #[error("initial placement does not fit: {0}")]
    CapacityOverflow(String),
}

/// Dominant-resource / fan-out knobs with serde-friendly spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FanOutMode {
    /// Downstream calls compose sequentially (latencies add).
    #[default]
    Sequential,
    /// Downstream calls run concurrently (slowest branch dominates).
    Parallel,
}

/// Discretization cut points and the SLO they are anchored to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thresholds {
    /// CPU utilization cuts: at or below the first is Low, above the second is High.
    pub cpu: (f64, f64),
    /// Memory utilization cuts.
    pub mem: (f64, f64),
    /// Latency cuts as fractions of the SLO.
    pub latency: (f64, f64),
    /// Latency service-level objective in milliseconds.
    pub slo_ms: f64,
    /// Absolute arrival-rate cuts in requests/s.
    pub arrival_rps: (f64, f64),
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        for (name, (lo, hi)) in [
            ("cpu", self.cpu),
            ("mem", self.mem),
            ("latency", self.latency),
            ("arrival", self.arrival_rps),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(format!("{name} cuts must be strictly increasing"));
            }
        }
        if self.slo_ms <= 0.0 {
            return Err("slo_ms must be positive".into());
        }
        Ok(())
    }
}

/// Replayable arrival-rate trace for the entry service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    /// `(tick, requests/s)` points with strictly increasing ticks.
    pub points: Vec<(u64, f64)>,
}

impl WorkloadTrace {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut last: Option<u64> = None;
        for &(tick, rps) in &self.points {
            if let Some(prev) = last {
                if tick <= prev {
                    return Err(ScenarioError::BadTrace(format!(
                        "ticks must be strictly increasing (saw {prev} then {tick})"
                    )));
                }
            }
            if rps < 0.0 || !rps.is_finite() {
                return Err(ScenarioError::BadTrace(format!(
                    "rate at tick {tick} must be a non-negative number"
                )));
            }
            last = Some(tick);
        }
        Ok(())
    }

    /// Step-function lookup: the rate of the latest point at or before `tick`,
    /// zero before the first point.
    pub fn rate_at(&self, tick: u64) -> f64 {
        let mut rate = 0.0;
        for &(t, r) in &self.points {
            if t > tick {
                break;
            }
            rate = r;
        }
        rate
    }

    /// Parses the `tick,rps` CSV format.
    pub fn from_csv(text: &str) -> Result<Self, ScenarioError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header.trim() == "tick,rps" => {}
            other => {
                return Err(ScenarioError::BadTrace(format!(
                    "expected header 'tick,rps', found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut points = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let tick = cols
                .next()
                .and_then(|c| c.trim().parse::<u64>().ok())
                .ok_or_else(|| ScenarioError::BadTrace(format!("bad tick on line {}", idx + 2)))?;
            let rps = cols
                .next()
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| ScenarioError::BadTrace(format!("bad rps on line {}", idx + 2)))?;
            if cols.next().is_some() {
                return Err(ScenarioError::BadTrace(format!("extra column on line {}", idx + 2)));
            }
            points.push((tick, rps));
        }
        let trace = WorkloadTrace { points };
        trace.validate()?;
        Ok(trace)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,rps\n");
        for &(tick, rps) in &self.points {
            out.push_str(&format!("{tick},{rps}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WorkloadSource {
    Inline(Vec<(u64, f64)>),
    Csv(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: String,
    machines: Vec<Machine>,
    services: Vec<ServiceFileEntry>,
    workload: WorkloadSource,
    #[serde(default)]
    faults: Vec<FaultFileEntry>,
    #[serde(default)]
    entry_service: Option<u32>,
    #[serde(default = "default_slo_ms")]
    slo_ms: f64,
    #[serde(default)]
    bin_cuts: Option<BinCutsFile>,
    #[serde(default = "default_cap_ms")]
    saturation_cap_ms: f64,
    #[serde(default)]
    fan_out: FanOutMode,
    #[serde(default = "default_dt")]
    dt_seconds: f64,
}

fn default_slo_ms() -> f64 {
    250.0
}

fn default_cap_ms() -> f64 {
    10_000.0
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BinCutsFile {
    #[serde(default)]
    cpu: Option<(f64, f64)>,
    #[serde(default)]
    mem: Option<(f64, f64)>,
    #[serde(default)]
    latency: Option<(f64, f64)>,
    #[serde(default)]
    arrival_rps: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ServiceFileEntry {
    id: u32,
    name: String,
    profile: Resource,
    base_service_rate: f64,
    cpu_request: u32,
    mem_request: u32,
    #[serde(default)]
    readiness_time: f64,
    #[serde(default)]
    downstream: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FaultFileEntry {
    service_id: u32,
    fault_type: FaultType,
    magnitude: f64,
    start_tick: u64,
    end_tick: u64,
}

/// A fully validated scenario ready to drive a simulation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub machines: Vec<Machine>,
    pub services: BTreeMap<ServiceId, ServiceSpec>,
    pub entry: ServiceId,
    pub trace: WorkloadTrace,
    pub faults: Vec<FaultInjection>,
    pub thresholds: Thresholds,
    pub saturation_cap_ms: f64,
    pub fan_out: FanOutMode,
    pub dt_seconds: f64,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} machines, {} services, {} faults, entry #{}",
            self.name,
            self.machines.len(),
            self.services.len(),
            self.faults.len(),
            self.entry.0
        )
    }
}

impl Scenario {
    /// Loads and validates a scenario from a JSON file on disk.
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScenarioFile = serde_json::from_str(&text)?;
        let trace = match &file.workload {
            WorkloadSource::Inline(points) => {
                let trace = WorkloadTrace { points: points.clone() };
                trace.validate()?;
                trace
            }
            WorkloadSource::Csv(rel) => {
                let csv_path = path.parent().unwrap_or_else(|| Path::new(".")).join(rel);
                let csv = std::fs::read_to_string(&csv_path).map_err(|source| ScenarioError::Io {
                    path: csv_path.display().to_string(),
                    source,
                })?;
                WorkloadTrace::from_csv(&csv)?
            }
        };
        Self::from_parts(file, trace)
    }

    /// Parses a scenario from an in-memory JSON string (inline workload only).
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let trace = match &file.workload {
            WorkloadSource::Inline(points) => {
                let trace = WorkloadTrace { points: points.clone() };
                trace.validate()?;
                trace
            }
            WorkloadSource::Csv(p) => {
                return Err(ScenarioError::BadTrace(format!(
                    "csv workload '{p}' not supported for in-memory scenarios"
                )))
            }
        };
        Self::from_parts(file, trace)
    }

    fn from_parts(file: ScenarioFile, trace: WorkloadTrace) -> Result<Scenario, ScenarioError> {
        if file.machines.is_empty() {
            return Err(ScenarioError::NoMachines);
        }
        if file.services.is_empty() {
            return Err(ScenarioError::NoServices);
        }
        let mut machine_ids = BTreeSet::new();
        for m in &file.machines {
            if m.cpu_capacity == 0 || m.mem_capacity == 0 {
                return Err(ScenarioError::BadCapacity(m.id));
            }
            if !machine_ids.insert(m.id) {
                return Err(ScenarioError::DuplicateMachine(m.id));
            }
        }

        let mut services: BTreeMap<ServiceId, ServiceSpec> = BTreeMap::new();
        for s in &file.services {
            if !(1..=20).contains(&s.id) {
                return Err(ScenarioError::ServiceIdRange(s.id));
            }
            if s.base_service_rate <= 0.0 || !s.base_service_rate.is_finite() {
                return Err(ScenarioError::BadService(s.id, "base_service_rate must be positive".into()));
            }
            if s.cpu_request == 0 || s.mem_request == 0 {
                return Err(ScenarioError::BadService(s.id, "cpu/mem requests must be positive".into()));
            }
            if s.readiness_time < 0.0 {
                return Err(ScenarioError::BadService(s.id, "readiness_time must be >= 0".into()));
            }
            let spec = ServiceSpec {
                id: ServiceId(s.id),
                name: s.name.clone(),
                profile: s.profile,
                base_service_rate: s.base_service_rate,
                cpu_request: s.cpu_request,
                mem_request: s.mem_request,
                readiness_time: s.readiness_time,
                downstream: s.downstream.iter().map(|&d| ServiceId(d)).collect(),
            };
            if services.insert(spec.id, spec).is_some() {
                return Err(ScenarioError::DuplicateService(s.id));
            }
        }

        // Edge validation: callees exist, no duplicate edges, no self-calls.
        for (id, spec) in &services {
            let mut seen = BTreeSet::new();
            for callee in &spec.downstream {
                if !services.contains_key(callee) {
                    return Err(ScenarioError::UnknownService { caller: id.0, callee: callee.0 });
                }
                if !seen.insert(*callee) {
                    return Err(ScenarioError::DuplicateEdge { caller: id.0, callee: callee.0 });
                }
            }
        }
        check_acyclic(&services)?;

        let entry = match file.entry_service {
            Some(raw) => {
                let id = ServiceId(raw);
                if !services.contains_key(&id) {
                    return Err(ScenarioError::UnknownEntry(raw));
                }
                id
            }
            None => {
                // Default to the lowest-id service that nothing calls.
                let mut called = BTreeSet::new();
                for spec in services.values() {
                    called.extend(spec.downstream.iter().copied());
                }
                services
                    .keys()
                    .find(|id| !called.contains(id))
                    .copied()
                    .unwrap_or_else(|| *services.keys().next().expect("non-empty"))
            }
        };

        let mut faults = Vec::new();
        for f in &file.faults {
            let sid = ServiceId(f.service_id);
            if !services.contains_key(&sid) {
                return Err(ScenarioError::BadFault(f.service_id, "unknown service".into()));
            }
            if !(f.magnitude > 0.0 && f.magnitude <= 1.0) {
                return Err(ScenarioError::BadFault(f.service_id, "magnitude must be in (0, 1]".into()));
            }
            if f.start_tick >= f.end_tick {
                return Err(ScenarioError::BadFault(f.service_id, "start_tick must precede end_tick".into()));
            }
            faults.push(FaultInjection {
                service_id: sid,
                fault_type: f.fault_type,
                magnitude: f.magnitude,
                start_tick: f.start_tick,
                end_tick: f.end_tick,
            });
        }

        let entry_rate = services[&entry].base_service_rate;
        let cuts = file.bin_cuts.unwrap_or(BinCutsFile { cpu: None, mem: None, latency: None, arrival_rps: None });
        let thresholds = Thresholds {
            cpu: cuts.cpu.unwrap_or((0.5, 0.8)),
            mem: cuts.mem.unwrap_or((0.5, 0.8)),
            latency: cuts.latency.unwrap_or((0.5, 1.0)),
            slo_ms: file.slo_ms,
            arrival_rps: cuts.arrival_rps.unwrap_or((0.5 * entry_rate, 0.8 * entry_rate)),
        };
        thresholds
            .validate()
            .map_err(|e| ScenarioError::BadTrace(format!("thresholds: {e}")))?;

        if file.dt_seconds <= 0.0 {
            return Err(ScenarioError::BadTrace("dt_seconds must be positive".into()));
        }
        if file.saturation_cap_ms <= 0.0 {
            return Err(ScenarioError::BadTrace("saturation_cap_ms must be positive".into()));
        }

        let scenario = Scenario {
            name: if file.name.is_empty() { "unnamed".into() } else { file.name },
            machines: file.machines,
            services,
            entry,
            trace,
            faults,
            thresholds,
            saturation_cap_ms: file.saturation_cap_ms,
            fan_out: file.fan_out,
            dt_seconds: file.dt_seconds,
        };
        scenario.check_initial_fit()?;
        Ok(scenario)
    }

    /// First-fit feasibility of one replica per service at requested allocations.
    fn check_initial_fit(&self) -> Result<(), ScenarioError> {
        let mut cpu_free: Vec<u64> = self.machines.iter().map(|m| u64::from(m.cpu_capacity)).collect();
        let mut mem_free: Vec<u64> = self.machines.iter().map(|m| u64::from(m.mem_capacity)).collect();
        for spec in self.services.values() {
            let slot = (0..self.machines.len()).find(|&i| {
                cpu_free[i] >= u64::from(spec.cpu_request) && mem_free[i] >= u64::from(spec.mem_request)
            });
            match slot {
                Some(i) => {
                    cpu_free[i] -= u64::from(spec.cpu_request);
                    mem_free[i] -= u64::from(spec.mem_request);
                }
                None => {
                    return Err(ScenarioError::CapacityOverflow(format!(
                        "no machine can host service #{} at requested allocation",
                        spec.id.0
                    )))
                }
            }
        }
        Ok(())
    }

    /// Topological order of the call graph (callers before callees).
    pub fn topo_order(&self) -> Vec<ServiceId> {
        let mut indegree: BTreeMap<ServiceId, usize> = self.services.keys().map(|&k| (k, 0)).collect();
        for spec in self.services.values() {
            for callee in &spec.downstream {
                *indegree.get_mut(callee).expect("validated") += 1;
            }
        }
        let mut queue: Vec<ServiceId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.services.len());
        while let Some(id) = queue.first().copied() {
            queue.remove(0);
            order.push(id);
            for callee in &self.services[&id].downstream {
                let d = indegree.get_mut(callee).expect("validated");
                *d -= 1;
                if *d == 0 {
                    // Insert keeping the queue sorted for a deterministic order.
                    let pos = queue.binary_search(callee).unwrap_or_else(|p| p);
                    queue.insert(pos, *callee);
                }
            }
        }
        debug_assert_eq!(order.len(), self.services.len());
        order
    }
}

fn check_acyclic(services: &BTreeMap<ServiceId, ServiceSpec>) -> Result<(), ScenarioError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut marks: BTreeMap<ServiceId, Mark> = services.keys().map(|&k| (k, Mark::White)).collect();

    fn visit(
        id: ServiceId,
        services: &BTreeMap<ServiceId, ServiceSpec>,
        marks: &mut BTreeMap<ServiceId, Mark>,
    ) -> Result<(), ScenarioError> {
        match marks[&id] {
            Mark::Black => return Ok(()),
            Mark::Grey => return Err(ScenarioError::CycleDetected(id.0)),
            Mark::White => {}
        }
        marks.insert(id, Mark::Grey);
        for callee in &services[&id].downstream {
            visit(*callee, services, marks)?;
        }
        marks.insert(id, Mark::Black);
        Ok(())
    }

    let ids: Vec<ServiceId> = services.keys().copied().collect();
    for id in ids {
        visit(id, services, &mut marks)?;
    }
    Ok(())
}
