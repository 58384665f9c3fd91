//! Subcommand implementations. Each one writes its files into `out` and
//! returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use fedrough_core::harness::{self, format_rounds, rounds_to_threshold, ExperimentOutput, Federation};
use fedrough_core::report::{self, fmt_f64};

use crate::config::FileConfig;

fn write(out: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(cfg: &FileConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "resolved_config.toml", &cfg.to_toml())
}

fn summary_line(cfg: &FileConfig, exp: &ExperimentOutput) -> String {
    format!(
        "{:<10} seeds={} final_accuracy={:.4} rounds_to_{}={}",
        cfg.train.algorithm_name(),
        exp.runs.len(),
        exp.mean_final_accuracy(),
        cfg.threshold,
        format_rounds(rounds_to_threshold(&exp.mean, cfg.threshold)),
    )
}

/// `metrics.csv` (first replicate), `metrics_seed<S>.csv` per replicate when
/// there are several, and `mean.csv`.
pub fn cmd_run(cfg: &FileConfig, out: &Path, threads: Option<usize>) -> anyhow::Result<String> {
    let exp_cfg = cfg.to_experiment()?;
    prepare_out(cfg, out)?;
    let exp = harness::run_experiment(&exp_cfg, threads)?;
    write(out, "metrics.csv", &report::metrics_csv(&exp.runs[0].metrics))?;
    if exp.runs.len() > 1 {
        for run in &exp.runs {
            write(out, &format!("metrics_seed{}.csv", run.seed), &report::metrics_csv(&run.metrics))?;
        }
    }
    write(out, "mean.csv", &report::metrics_csv(&exp.mean))?;
    Ok(summary_line(cfg, &exp))
}

pub const SWEEP_HEADER: &str = "point,directions,intervals,lambda,eta,final_accuracy,rounds_to_threshold";

/// One mean-metrics file per grid point plus `sweep_summary.csv`.
pub fn cmd_sweep(cfg: &FileConfig, out: &Path, threads: Option<usize>) -> anyhow::Result<String> {
    let grid = cfg.grid()?;
    prepare_out(cfg, out)?;
    let mut summary = String::from(SWEEP_HEADER);
    summary.push('\n');
    let mut table = String::new();
    for (i, (point, point_cfg)) in grid.iter().enumerate() {
        let exp = harness::run_experiment(&point_cfg.to_experiment()?, threads)
            .with_context(|| format!("sweep point {}", point.label()))?;
        write(out, &format!("sweep_{}.csv", point.label()), &report::metrics_csv(&exp.mean))?;
        let rounds = format_rounds(rounds_to_threshold(&exp.mean, cfg.threshold));
        let _ = writeln!(
            summary,
            "{i},{},{},{},{},{},{rounds}",
            point.directions,
            point.intervals,
            fmt_f64(point.lambda),
            fmt_f64(point.eta),
            fmt_f64(exp.mean_final_accuracy()),
        );
        let _ = writeln!(table, "{:<40} {:.4} {rounds}", point.label(), exp.mean_final_accuracy());
    }
    write(out, "sweep_summary.csv", &summary)?;
    Ok(table.trim_end().to_string())
}

/// `ri_trace.csv` for the first replicate (and `ri_trace_seed<S>.csv` per
/// replicate when there are several). Algorithms that do not use the index
/// have it probed with the `[roughness]` settings.
pub fn cmd_ri_probe(cfg: &FileConfig, out: &Path, threads: Option<usize>) -> anyhow::Result<String> {
    let mut probe_cfg = cfg.clone();
    probe_cfg.roughness.probe = true;
    let exp_cfg = probe_cfg.to_experiment()?;
    prepare_out(&probe_cfg, out)?;
    let exp = harness::run_experiment(&exp_cfg, threads)?;
    write(out, "ri_trace.csv", &report::ri_trace_csv(&exp.runs[0].metrics))?;
    if exp.runs.len() > 1 {
        for run in &exp.runs {
            write(out, &format!("ri_trace_seed{}.csv", run.seed), &report::ri_trace_csv(&run.metrics))?;
        }
    }
    let first = &exp.runs[0].metrics;
    let mean_of = |m: &harness::RoundMetrics| m.client_ri.iter().sum::<f64>() / m.client_ri.len().max(1) as f64;
    Ok(format!(
        "mean client roughness index: round 0 {:.4}, round {} {:.4}",
        first.first().map(mean_of).unwrap_or(0.0),
        first.len().saturating_sub(1),
        first.last().map(mean_of).unwrap_or(0.0),
    ))
}

/// `partition_stats.csv` for the first replicate's training split.
pub fn cmd_partition(cfg: &FileConfig, out: &Path) -> anyhow::Result<String> {
    let exp_cfg = cfg.to_experiment()?;
    prepare_out(cfg, out)?;
    let fed = Federation::prepare(&exp_cfg, exp_cfg.replicate_seed(0))?;
    write(out, "partition_stats.csv", &report::partition_stats_csv(&fed.shards, &fed.train))?;
    let sizes: Vec<usize> = fed.shards.iter().map(|s| s.n_k()).collect();
    Ok(format!(
        "{} clients, shard sizes min {} max {}",
        sizes.len(),
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0),
    ))
}
