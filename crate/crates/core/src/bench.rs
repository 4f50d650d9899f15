//! Method comparison and runtime benchmarks over seeded random transitions.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::planner::{Method, ModelConfig, PlannerConfig, Workspace};
use crate::sim::{
    mean, percentile, random_transition_scenario, run_scenario, std_dev, NoiseSpec, RunMetrics,
    ScenarioSpec, SimOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub methods: Vec<Method>,
    pub counts: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    /// Simulated time limit per trial, s.
    pub duration: f64,
    pub workspace: Workspace,
    pub out_dir: PathBuf,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            counts: vec![10, 20, 30],
            trials: 20,
            base_seed: 1,
            duration: 20.0,
            workspace: Workspace::default(),
            out_dir: PathBuf::from("results"),
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("benchmark needs at least one trial"));
        }
        if self.counts.is_empty() || self.counts.contains(&0) {
            return Err(invalid("agent counts must be non-empty and positive"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        Ok(())
    }

    /// Seed of trial `trial` at swarm size `n`; shared by every method.
    pub fn trial_seed(&self, n: usize, trial: usize) -> u64 {
        self.base_seed
            .wrapping_mul(1_000_003)
            .wrapping_add(1000 * n as u64 + trial as u64)
    }

    pub fn scenario(
        &self,
        n: usize,
        trial: usize,
        e: &crate::collision::EllipsoidSpec,
        noise: NoiseSpec,
    ) -> Result<ScenarioSpec> {
        let mut spec = random_transition_scenario(
            n,
            self.workspace,
            e,
            self.duration,
            self.trial_seed(n, trial),
        )?;
        spec.noise = noise;
        Ok(spec)
    }
}

/// One row of the comparison CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub method: Method,
    pub n_agents: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub transit_time_s: Option<f64>,
    pub min_scaled_dist_m: f64,
    pub mean_qp_ms: f64,
    pub p95_qp_ms: f64,
    pub resets: usize,
    pub mean_cycle_ms: f64,
    pub fallbacks: usize,
    pub failure: String,
}

/// Columns that depend on the machine rather than the run.
pub const TIMING_COLUMNS: [&str; 3] = ["mean_qp_ms", "p95_qp_ms", "mean_cycle_ms"];

impl TrialRow {
    pub fn new(method: Method, n: usize, trial: usize, seed: u64, m: &RunMetrics) -> Self {
        Self {
            method,
            n_agents: n,
            trial,
            seed,
            success: m.success,
            transit_time_s: m.transit_time.filter(|_| m.success),
            min_scaled_dist_m: m.min_scaled_distance,
            mean_qp_ms: m.mean_qp_ms(),
            p95_qp_ms: m.p95_qp_ms(),
            resets: m.resets.len(),
            mean_cycle_ms: m.mean_cycle_ms(),
            fallbacks: m.fallbacks,
            failure: m.failure.clone().unwrap_or_default(),
        }
    }

    fn failed(method: Method, n: usize, trial: usize, seed: u64, err: String) -> Self {
        Self {
            method,
            n_agents: n,
            trial,
            seed,
            success: false,
            transit_time_s: None,
            min_scaled_dist_m: f64::NAN,
            mean_qp_ms: f64::NAN,
            p95_qp_ms: f64::NAN,
            resets: 0,
            mean_cycle_ms: f64::NAN,
            fallbacks: 0,
            failure: err,
        }
    }
}

/// A finished trial with its full timing samples.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub row: TrialRow,
    pub qp_ms: Vec<f64>,
    pub cycle_ms: Vec<f64>,
}

pub struct Harness<'a> {
    pub model: &'a ModelConfig,
    pub planner: &'a PlannerConfig,
    pub noise: NoiseSpec,
    pub options: SimOptions,
    /// How trials are spread; agents inside a trial run sequentially.
    pub execution: Execution,
}

impl Harness<'_> {
    /// Every (method, count, trial) combination, in that nesting order.
    pub fn run(&self, spec: &BenchmarkSpec) -> Result<Vec<TrialResult>> {
        spec.validate()?;
        let mut jobs = Vec::new();
        for &method in &spec.methods {
            for &n in &spec.counts {
                for trial in 0..spec.trials {
                    jobs.push((method, n, trial));
                }
            }
        }
        let opts = SimOptions {
            execution: Execution::Sequential,
            record_trajectory: false,
            ..self.options
        };
        let results = self.execution.map(&jobs, |&(method, n, trial)| {
            let seed = spec.trial_seed(n, trial);
            let cfg = PlannerConfig {
                method,
                ..self.planner.clone()
            };
            let run = spec
                .scenario(n, trial, &cfg.ellipsoid, self.noise)
                .and_then(|s| run_scenario(&s, self.model, &cfg, &opts));
            match run {
                Ok(out) => TrialResult {
                    row: TrialRow::new(method, n, trial, seed, &out.metrics),
                    qp_ms: out.metrics.qp_ms,
                    cycle_ms: out.metrics.cycle_ms,
                },
                Err(err) => {
                    log::warn!("{method} n={n} trial {trial}: {err}");
                    TrialResult {
                        row: TrialRow::failed(method, n, trial, seed, err.to_string()),
                        qp_ms: Vec::new(),
                        cycle_ms: Vec::new(),
                    }
                }
            }
        });
        Ok(results)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n_agents: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful trials only.
    pub mean_transit_time_s: Option<f64>,
}

pub fn aggregate(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    for r in rows {
        let idx = match out
            .iter()
            .position(|a| a.method == r.method && a.n_agents == r.n_agents)
        {
            Some(i) => i,
            None => {
                out.push(AggregateRow {
                    method: r.method,
                    n_agents: r.n_agents,
                    trials: 0,
                    successes: 0,
                    success_rate: 0.0,
                    mean_transit_time_s: None,
                });
                out.len() - 1
            }
        };
        out[idx].trials += 1;
        out[idx].successes += r.success as usize;
    }
    for a in &mut out {
        a.success_rate = a.successes as f64 / a.trials as f64;
        let times: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == a.method && r.n_agents == a.n_agents)
            .filter_map(|r| r.transit_time_s)
            .collect();
        a.mean_transit_time_s = (!times.is_empty()).then(|| mean(&times));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub method: Method,
    pub n_agents: usize,
    pub solves: usize,
    pub mean_qp_ms: f64,
    pub std_qp_ms: f64,
    pub p95_qp_ms: f64,
    pub mean_cycle_ms: f64,
    pub std_cycle_ms: f64,
}

/// Per-agent solve and update time statistics per (method, count).
pub fn runtime_summary(results: &[TrialResult]) -> Vec<RuntimeRow> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in results {
        let k = (r.row.method, r.row.n_agents);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, n)| {
            let group = results
                .iter()
                .filter(|r| r.row.method == method && r.row.n_agents == n);
            let qp: Vec<f64> = group
                .clone()
                .flat_map(|r| r.qp_ms.iter().copied())
                .collect();
            let cycle: Vec<f64> = group.flat_map(|r| r.cycle_ms.iter().copied()).collect();
            RuntimeRow {
                method,
                n_agents: n,
                solves: qp.len(),
                mean_qp_ms: mean(&qp),
                std_qp_ms: std_dev(&qp),
                p95_qp_ms: percentile(&qp, 0.95),
                mean_cycle_ms: mean(&cycle),
                std_cycle_ms: std_dev(&cycle),
            }
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_csv_file<T: Serialize>(rows: &[T], path: &std::path::Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    write_csv(rows, std::fs::File::create(&tmp)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, n: usize, success: bool, t: Option<f64>) -> TrialRow {
        TrialRow {
            method,
            n_agents: n,
            trial: 0,
            seed: 0,
            success,
            transit_time_s: t,
            min_scaled_dist_m: 0.3,
            mean_qp_ms: 1.0,
            p95_qp_ms: 1.0,
            resets: 0,
            mean_cycle_ms: 1.0,
            fallbacks: 0,
            failure: String::new(),
        }
    }

    #[test]
    fn aggregate_counts_and_means() {
        let rows = vec![
            row(Method::Bvc, 10, true, Some(4.0)),
            row(Method::Bvc, 10, false, None),
            row(Method::Bvc, 10, true, Some(6.0)),
            row(Method::OndemandInput, 10, false, None),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].successes, 2);
        assert!((agg[0].success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg[0].mean_transit_time_s, Some(5.0));
        assert_eq!(agg[1].mean_transit_time_s, None);
    }

    #[test]
    fn seeds_differ_per_trial_and_count() {
        let spec = BenchmarkSpec::default();
        assert_ne!(spec.trial_seed(10, 0), spec.trial_seed(10, 1));
        assert_ne!(spec.trial_seed(10, 0), spec.trial_seed(20, 0));
    }

    #[test]
    fn csv_header_is_stable() {
        let mut buf = Vec::new();
        write_csv(&[row(Method::Bvc, 10, true, Some(4.0))], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "method,n_agents,trial,seed,success,transit_time_s,min_scaled_dist_m,mean_qp_ms,p95_qp_ms,resets,"
        ));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("bvc,10,0,0,true,4.0,"));
    }

    #[test]
    fn bad_spec_rejected() {
        let spec = BenchmarkSpec {
            trials: 0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
