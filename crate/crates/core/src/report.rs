//! CSV rendering.
//!
//! All files use `,` separators, `\n` line endings, a fixed column order and
//! floats written with 17 significant digits in scientific notation
//! (`{:.16e}`), which round-trips every `f64` and does not depend on the
//! platform. Absent values are empty cells.

use std::fmt::Write as _;

use crate::data::{ClientShard, Dataset};
use crate::harness::RoundMetrics;

pub const METRICS_HEADER: &str = "round,test_accuracy,test_loss,mean_drift_sq,mean_ri,grad_norm_sq,wall_seconds";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.round,
            fmt_opt(m.test_accuracy),
            fmt_opt(m.test_loss),
            fmt_f64(m.mean_drift_sq),
            fmt_opt(m.mean_ri),
            fmt_opt(m.grad_norm_sq),
            fmt_opt(m.wall_seconds),
        );
    }
    out
}

/// Long-format roughness trace: one line per sampled client per round, with
/// the round's mean and population standard deviation repeated on each line.
pub fn ri_trace_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::from("round,client_id,ri,round_mean_ri,round_std_ri\n");
    for m in rows.iter().filter(|m| !m.client_ri.is_empty()) {
        let n = m.client_ri.len() as f64;
        let mean = m.client_ri.iter().sum::<f64>() / n;
        let std = (m.client_ri.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        for (id, ri) in m.clients.iter().zip(&m.client_ri) {
            let _ = writeln!(out, "{},{},{},{},{}", m.round, id, fmt_f64(*ri), fmt_f64(mean), fmt_f64(std));
        }
    }
    out
}

/// `client_id,n_k,class_0,...,class_{C-1}`, one line per shard.
pub fn partition_stats_csv(shards: &[ClientShard], ds: &Dataset) -> String {
    let mut out = String::from("client_id,n_k");
    for c in 0..ds.num_classes() {
        let _ = write!(out, ",class_{c}");
    }
    out.push('\n');
    for s in shards {
        let _ = write!(out, "{},{}", s.client_id, s.n_k());
        for count in s.class_counts(ds) {
            let _ = write!(out, ",{count}");
        }
        out.push('\n');
    }
    out
}
