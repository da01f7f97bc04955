//! Replicated runs and their on-disk outputs: one CSV per replication, a summary JSON and
//! a config echo holding every resolved default.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::model::json::network_to_json;
use crate::model::{build_topology, NetworkSpec};
use crate::policies::{build_policy, PolicyConfig, ResolvedPolicy};
use crate::sim::{run, ArrivalProcess, MetricsSeries, SimConfig, SimError, DEFAULT_MEMORY_CAP};

/// `max_k Q^N / N` at or below this counts as stable-suspect in summaries.
pub const STABLE_Q_OVER_N: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name or spec path, for the echo.
    pub source: String,
    pub network: NetworkSpec<f64>,
    pub policy: PolicyConfig<f64>,
    pub arrivals: ArrivalProcess<f64>,
    pub horizon: u64,
    pub seed: u64,
    pub replications: u32,
    pub stride: u64,
    pub memory_cap: u64,
    pub out_dir: Option<PathBuf>,
    pub assumed: Vec<String>,
}

impl RunConfig {
    pub fn new(source: String, network: NetworkSpec<f64>, policy: PolicyConfig<f64>, arrivals: ArrivalProcess<f64>) -> Self {
        Self {
            source,
            network,
            policy,
            arrivals,
            horizon: 1_000_000,
            seed: 1,
            replications: 1,
            stride: 1000,
            memory_cap: DEFAULT_MEMORY_CAP,
            out_dir: None,
            assumed: Vec::new(),
        }
    }

    /// Seed of replication `i` (0-based).
    pub fn replication_seed(&self, i: u32) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Validates everything and fills in policy defaults without simulating.
    pub fn resolve(&self) -> Result<ResolvedPolicy<f64>, SimError> {
        if self.horizon == 0 || self.replications == 0 || self.stride == 0 {
            return Err(SimError::Config("horizon, replications and stride must be positive".into()));
        }
        self.network.validate().into_result().map_err(SimError::Invalid)?;
        let sources = self.network.arrival_rates().len();
        self.arrivals.validate(sources, self.network.num_tasks())?;
        let topology = match &self.network {
            NetworkSpec::Dag(d) => Some(build_topology(d)),
            NetworkSpec::Fqn(_) => None,
        };
        Ok(build_policy(&self.network, topology.as_ref(), &self.policy)?.1)
    }

    fn sim_config(&self, i: u32) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            seed: self.replication_seed(i),
            stride: self.stride,
            memory_cap: self.memory_cap,
            check_every: crate::sim::DEFAULT_CHECK_EVERY,
        }
    }

    /// Every input and resolved default, as written to `config.json`.
    pub fn echo(&self, resolved: &ResolvedPolicy<f64>) -> Value {
        let mut assumed = self.assumed.clone();
        if resolved.eps0_assumed && !assumed.iter().any(|a| a.starts_with("eps0")) {
            assumed.push("eps0: half the smallest nu_k / mu_k".into());
        }
        if resolved.p0_assumed && !assumed.iter().any(|a| a.starts_with("p0")) {
            assumed.push("p0: projection of the zero vector".into());
        }
        json!({
            "source": self.source,
            "network": network_to_json(&self.network),
            "policy": {
                "name": self.policy.kind.name(),
                "a": self.policy.exponent,
                "delta": self.policy.delta,
                "eps0": resolved.eps0,
                "p0": resolved.p0,
                "premultiplied": self.policy.premultiplied,
            },
            "arrivals": self.arrivals,
            "horizon": self.horizon,
            "seed": self.seed,
            "replication_seeds": (0..self.replications).map(|i| self.replication_seed(i)).collect::<Vec<_>>(),
            "replications": self.replications,
            "stride": self.stride,
            "memory_cap": self.memory_cap,
            "initial_queues": "empty",
            "assumed": assumed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub index: u32,
    pub seed: u64,
    pub outcome: Result<MetricsSeries, SimError>,
}

impl ReplicationResult {
    pub fn verdict(&self) -> &'static str {
        match &self.outcome {
            Ok(m) if m.max_q_over_n() <= STABLE_Q_OVER_N => "stable-suspect",
            Ok(_) | Err(SimError::MemoryGuard { .. }) => "unstable-suspect",
            Err(_) => "error",
        }
    }

    pub fn hit_memory_guard(&self) -> bool {
        matches!(self.outcome, Err(SimError::MemoryGuard { .. }))
    }
}

/// Runs all replications on a pool of `threads` workers; results come back in index order.
pub fn run_replications(cfg: &RunConfig, threads: usize) -> Result<Vec<ReplicationResult>, SimError> {
    cfg.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok(pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|i| ReplicationResult {
                index: i,
                seed: cfg.replication_seed(i),
                outcome: run(&cfg.network, &cfg.policy, &cfg.arrivals, &cfg.sim_config(i)).map(|o| o.metrics),
            })
            .collect()
    }))
}

#[derive(Serialize)]
struct ReplicationSummary<'a> {
    replication: u32,
    seed: u64,
    verdict: &'a str,
    error: Option<String>,
    csv: Option<String>,
    final_queue_lengths: Option<&'a [u64]>,
    q_over_n: Option<&'a [f64]>,
    max_q_over_n: Option<f64>,
    final_allocation: Option<&'a [f64]>,
    mean_queue_tail: Option<&'a [f64]>,
    nonempty_fraction_total: Option<f64>,
    nonempty_fraction_tail: Option<f64>,
    conservation_checks: Option<u64>,
    conservation_violations: Option<u64>,
}

fn csv_name(i: u32) -> String {
    format!("rep_{:03}.csv", i + 1)
}

/// End-of-run statistics for all replications.
pub fn summary_json(cfg: &RunConfig, results: &[ReplicationResult]) -> Value {
    let reps: Vec<Value> = results
        .iter()
        .map(|r| {
            let m = r.outcome.as_ref().ok();
            let s = ReplicationSummary {
                replication: r.index + 1,
                seed: r.seed,
                verdict: r.verdict(),
                error: r.outcome.as_ref().err().map(|e| e.to_string()),
                csv: m.map(|_| csv_name(r.index)),
                final_queue_lengths: m.map(|m| m.final_queue_lengths.as_slice()),
                q_over_n: m.map(|m| m.q_over_n.as_slice()),
                max_q_over_n: m.map(MetricsSeries::max_q_over_n),
                final_allocation: m.map(|m| m.final_allocation.as_slice()),
                mean_queue_tail: m.map(|m| m.mean_queue_tail.as_slice()),
                nonempty_fraction_total: m.map(|m| m.nonempty_fraction_total),
                nonempty_fraction_tail: m.map(|m| m.nonempty_fraction_tail),
                conservation_checks: m.map(|m| m.conservation_checks),
                conservation_violations: m.map(|m| m.conservation_violations),
            };
            serde_json::to_value(s).expect("summary serializes")
        })
        .collect();
    let labels = results
        .iter()
        .find_map(|r| r.outcome.as_ref().ok().map(|m| m.queue_labels.clone()));
    json!({
        "source": cfg.source,
        "policy": cfg.policy.kind.name(),
        "horizon": cfg.horizon,
        "queue_labels": labels,
        "replications": reps,
    })
}

/// Writes `rep_NNN.csv` for each successful replication, `summary.json` and `config.json`.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    resolved: &ResolvedPolicy<f64>,
    results: &[ReplicationResult],
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for r in results {
        if let Ok(m) = &r.outcome {
            let file = BufWriter::new(File::create(dir.join(csv_name(r.index)))?);
            m.write_csv(file).map_err(std::io::Error::other)?;
        }
    }
    let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json serializes");
    fs::write(dir.join("summary.json"), pretty(&summary_json(cfg, results)))?;
    fs::write(dir.join("config.json"), pretty(&cfg.echo(resolved)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    fn small(name: &str) -> RunConfig {
        let p = preset(name).unwrap();
        let mut cfg = RunConfig::new(name.into(), p.network, p.policy, p.arrivals);
        cfg.horizon = 2000;
        cfg.stride = 100;
        cfg.replications = 3;
        cfg.assumed = p.assumed;
        cfg
    }

    #[test]
    fn replications_are_ordered_and_seeded() {
        let cfg = small("fig4a");
        let res = run_replications(&cfg, 2).unwrap();
        assert_eq!(res.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let again = run_replications(&cfg, 1).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn outputs_are_written() {
        let cfg = small("fqn-demo");
        let resolved = cfg.resolve().unwrap();
        let res = run_replications(&cfg, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("flexnet-exp-{}", std::process::id()));
        write_outputs(&dir, &cfg, &resolved, &res).unwrap();
        let csv = fs::read_to_string(dir.join("rep_001.csv")).unwrap();
        assert!(csv.starts_with("slot,q1,q2,q3,p1,p2,p3,nonempty_fraction"));
        assert_eq!(csv.lines().count(), 22);
        let echo: Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
        assert!((echo["policy"]["eps0"].as_f64().unwrap() - 0.1).abs() < 1e-12);
        assert!(echo["assumed"].as_array().unwrap().len() >= 3);
        fs::remove_dir_all(dir).unwrap();
    }
}
