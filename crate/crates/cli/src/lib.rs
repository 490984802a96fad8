//! Library side of the `cmtrack` command: sequence discovery, the
//! subcommands, and exit-code classification.

pub mod commands;
pub mod layout;

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use cmtrack::config::RunConfig;

/// Error caused by how the command was invoked rather than by the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Usage errors (bad flags, bad configuration) exit with 1; everything else
/// with 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|e| {
        e.is::<Usage>() || matches!(e.downcast_ref::<cmtrack::Error>(), Some(cmtrack::Error::Config(_)))
    });
    if usage {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Reads the config file (if any), then applies `key=value` overrides and
/// the seed override, in that order.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Usage(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects key=value, got '{o}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Usage(e.to_string()))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Usage(e.to_string())).context("invalid configuration")?;
    Ok(cfg)
}
