//! Staged rate sweeps: a fresh Poisson run per stage until latency degrades
//! or a request is rejected.

use super::config::SimConfig;
use super::{run, SimError};
use crate::telemetry::RunReport;
use crate::workload::{sweep_stage_rate, sweep_verdict, ArrivalSpec, SweepStop};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStage {
    pub stage: usize,
    pub rate: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub stages: Vec<SweepStage>,
    pub stop: SweepStop,
}

impl SweepReport {
    /// Rate of the stage that tripped the stop rule (the last stage run).
    pub fn stop_rate(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.rate)
    }
}

pub fn run_sweep(cfg: &SimConfig) -> Result<SweepReport, SimError> {
    cfg.validate()?;
    let ArrivalSpec::Sweep { start, step, max_stages, p99_multiple } = cfg.workload.arrival else {
        return Err(SimError::Config(super::config::ConfigError::Field {
            field: "workload.arrival".into(),
            msg: "not a sweep".into(),
        }));
    };
    let mut stages = Vec::new();
    let mut baseline = None;
    for k in 0..max_stages {
        let rate = sweep_stage_rate(start, step, k);
        let mut stage_cfg = cfg.clone();
        stage_cfg.workload.arrival = ArrivalSpec::Poisson { rate, burst: None };
        let report = run(&stage_cfg)?.report;
        let p99 = report.metrics.ttft_ms.p99;
        if k == 0 {
            baseline = p99;
        }
        let verdict = sweep_verdict(k, max_stages, baseline, p99, report.rejected, p99_multiple);
        stages.push(SweepStage { stage: k, rate, report });
        if verdict != SweepStop::Continue {
            return Ok(SweepReport { stages, stop: verdict });
        }
    }
    Ok(SweepReport { stages, stop: SweepStop::MaxStages })
}
