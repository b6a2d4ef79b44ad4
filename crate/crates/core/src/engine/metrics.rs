use serde::{Deserialize, Serialize};

use crate::array::{Coord, Cycle};
use crate::ft::{FtStats, Word};
use crate::power::EnergyReport;
use crate::protocol::Reliability;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMetrics {
    pub replica: u8,
    pub granted: u32,
    pub invade_latency: Cycle,
    pub claim_latency: Cycle,
    pub stall_cycles: Cycle,
    pub retreat_latency: Option<Cycle>,
    pub pes: Vec<Coord>,
}

/// Per-application results. For replicated applications the latencies are
/// summed over the replica claims, which are made one after the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMetrics {
    pub app: u32,
    pub strategy: String,
    pub reliability: Reliability,
    pub requested: u32,
    pub granted: u32,
    pub complete: bool,
    pub invade_latency: Cycle,
    pub claim_latency: Cycle,
    pub stall_cycles: Cycle,
    pub retreat_latency: Option<Cycle>,
    pub speedup_vs_centralized: f64,
    pub claimed_at: Option<Cycle>,
    pub released_at: Option<Cycle>,
    pub replicas: Vec<ReplicaMetrics>,
    pub ft: Option<FtStats>,
    /// Loop outputs equal the fault-free reference.
    pub ft_correct: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub outputs: Vec<Option<Word>>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl AppMetrics {
    pub(crate) fn new(
        app: u32,
        strategy: String,
        reliability: Reliability,
        requested: u32,
    ) -> Self {
        AppMetrics {
            app,
            strategy,
            reliability,
            requested,
            granted: 0,
            complete: false,
            invade_latency: 0,
            claim_latency: 0,
            stall_cycles: 0,
            retreat_latency: None,
            speedup_vs_centralized: 0.0,
            claimed_at: None,
            released_at: None,
            replicas: Vec::new(),
            ft: None,
            ft_correct: None,
            outputs: Vec::new(),
            error: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub cycle: Cycle,
    pub fraction: f64,
}

/// Fraction of PEs with the processing unit on, stored as change points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub average: f64,
    pub peak: f64,
    pub timeline: Vec<UtilSample>,
}

impl Utilization {
    pub(crate) fn record(&mut self, cycle: Cycle, fraction: f64) {
        if self.timeline.last().is_none_or(|s| s.fraction != fraction) {
            self.timeline.push(UtilSample { cycle, fraction });
        }
    }

    pub(crate) fn finish(&mut self, span: Cycle) {
        self.timeline.retain(|s| s.cycle < span);
        let mut area = 0.0;
        for (k, s) in self.timeline.iter().enumerate() {
            let end = self.timeline.get(k + 1).map_or(span, |n| n.cycle);
            area += s.fraction * (end - s.cycle) as f64;
        }
        self.average = if span > 0 { area / span as f64 } else { 0.0 };
        self.peak = self.timeline.iter().map(|s| s.fraction).fold(0.0, f64::max);
    }

    /// Fraction at `cycle`.
    pub fn at(&self, cycle: Cycle) -> f64 {
        self.timeline
            .iter()
            .take_while(|s| s.cycle <= cycle)
            .last()
            .map_or(0.0, |s| s.fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_cycles: Cycle,
    /// The run hit `max_cycles` before finishing.
    pub truncated: bool,
    pub apps: Vec<AppMetrics>,
    pub energy: EnergyReport,
    pub utilization: Utilization,
    pub invariant_violations: Vec<String>,
}

impl Metrics {
    pub fn app(&self, id: u32) -> Option<&AppMetrics> {
        self.apps.iter().find(|a| a.app == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}
