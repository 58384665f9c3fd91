//! Command-line front end for the `fedrough` simulator: config parsing and
//! the `run`, `sweep`, `ri-probe` and `partition` subcommands.

pub mod commands;
pub mod config;

pub use config::{parse_config, parse_config_str, FileConfig};

/// Worker-thread cap from `FEDROUGH_THREADS`; `None` (all cores) when unset.
pub fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("FEDROUGH_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("FEDROUGH_THREADS must be a positive integer, got {v:?}"))?;
            if n == 0 {
                anyhow::bail!("FEDROUGH_THREADS must be >= 1");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
