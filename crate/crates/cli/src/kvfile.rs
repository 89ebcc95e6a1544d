//! Tiny key=value config files: one pair per line, `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sbmm_core::sim::AcceleratorConfig;
use sbmm_core::Error as CoreError;

use crate::error::{io_err, CliError, Result};
use crate::opcount::ModelShape;

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Core(CoreError::Format(format!(
                "line {}: expected key=value, got {raw:?}",
                lineno + 1
            )))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn parse_kv_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path.as_ref()).map_err(io_err(path.as_ref()))?;
    parse_kv(&text)
}

/// Build an accelerator config from defaults plus the file's overrides.
/// Unknown keys are rejected.
pub fn accel_config_from_map(map: &BTreeMap<String, String>) -> Result<AcceleratorConfig> {
    let mut config = AcceleratorConfig::default();
    for (key, value) in map {
        let parse_usize = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|e| CliError::Core(CoreError::Format(format!("{key}: {e}"))))
        };
        match key.as_str() {
            "weight_slots" => config.weight_slots = parse_usize()?,
            "input_slots" => config.input_slots = parse_usize()?,
            "output_slots" => config.output_slots = parse_usize()?,
            "sbvp_lanes" => config.sbvp_lanes = parse_usize()?,
            "tile_macs_per_cycle" => config.tile_macs_per_cycle = parse_usize()?,
            "stream_width_bits" => config.stream_width_bits = parse_usize()?,
            "clock_mhz" => {
                config.clock_mhz = value
                    .parse::<f64>()
                    .map_err(|e| CliError::Core(CoreError::Format(format!("{key}: {e}"))))?
            }
            other => {
                return Err(CliError::Core(CoreError::Format(format!(
                    "unknown accelerator config key {other:?}"
                ))));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn accel_config_from_file(path: impl AsRef<Path>) -> Result<AcceleratorConfig> {
    accel_config_from_map(&parse_kv_file(path)?)
}

pub fn model_shape_from_file(path: impl AsRef<Path>) -> Result<ModelShape> {
    ModelShape::from_kv_map(&parse_kv_file(path)?)
}
