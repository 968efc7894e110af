//! The run configuration document.
//!
//! Configurations are TOML. Every section has defaults, so an empty document
//! is the shipped baseline; `--set section.key=value` overrides are applied
//! to the parsed document before it is deserialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, DecodeModel, NoiseConfig, PathlossModel, DEFAULT_NOISE_FLOOR_DBM};
use crate::congestion::{CbrConfig, PolicyConfig};
use crate::error::{Error, Result};
use crate::grid::{default_mcs_table, lookup_mcs, n_subchannels, subchannels_needed, GridConfig, McsProfile};
use crate::mac_sps::SpsConfig;
use crate::metrics::MetricsConfig;
use crate::scenario::{RoadConfig, TrafficConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub noise_floor_dbm: f64,
    /// Optional `mcs, sinr_db, bler` file replacing the synthesized curves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_file: Option<PathBuf>,
    pub pathloss: PathlossModel,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
            curve_file: None,
            pathloss: PathlossModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub channel: ChannelConfig,
    pub sps: SpsConfig,
    pub cbr: CbrConfig,
    pub policy: PolicyConfig,
    pub road: RoadConfig,
    pub traffic: TrafficConfig,
    pub metrics: MetricsConfig,
    pub mcs: Vec<McsProfile>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            grid: GridConfig::default(),
            channel: ChannelConfig::default(),
            sps: SpsConfig::default(),
            cbr: CbrConfig::default(),
            policy: PolicyConfig::default(),
            road: RoadConfig::default(),
            traffic: TrafficConfig::default(),
            metrics: MetricsConfig::default(),
            mcs: default_mcs_table(),
        }
    }
}

impl RunConfig {
    /// Runs every per-section and cross-field check; the first failure is
    /// returned.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = n_subchannels(&self.grid)?;
        if self.mcs.is_empty() {
            return Err(Error::config("mcs: table is empty"));
        }
        for p in &self.mcs {
            p.validate()?;
        }
        lookup_mcs(&self.mcs, self.grid.sci_mcs)?;
        self.channel.pathloss.validate()?;
        if !self.channel.noise_floor_dbm.is_finite() {
            return Err(Error::config("channel.noise_floor_dbm must be finite"));
        }
        self.sps.validate()?;
        self.cbr.validate()?;
        self.policy.validate()?;
        self.road.validate()?;
        self.traffic.validate()?;
        self.metrics.validate()?;
        for kind in [&self.traffic.bsm, &self.traffic.hpm] {
            let profile = lookup_mcs(&self.mcs, kind.mcs)?;
            let needed = subchannels_needed(kind, profile, &self.grid)?;
            debug_assert!(needed <= n);
        }
        if self.sps.p_step != self.traffic.itt_ms {
            return Err(Error::config(format!(
                "sps.p_step ({}) must equal traffic.itt_ms ({})",
                self.sps.p_step, self.traffic.itt_ms
            )));
        }
        if self.sps.harq_max_gap == 0 {
            return Err(Error::config("sps.harq_max_gap must be at least 1"));
        }
        if let Some(path) = &self.channel.curve_file {
            let model = DecodeModel::load_curve_file(path)?;
            for mcs in self
                .mcs
                .iter()
                .map(|p| p.mcs_index)
                .filter(|&m| m == self.grid.sci_mcs || m == self.traffic.bsm.mcs || m == self.traffic.hpm.mcs)
            {
                model.curve(mcs)?;
            }
        }
        Ok(())
    }

    pub fn warmup_subframes(&self) -> u64 {
        self.metrics
            .warmup_subframes
            .unwrap_or_else(|| self.sps.sensing_window_len.max(self.cbr.window))
    }

    pub fn decode_model(&self) -> Result<DecodeModel> {
        match &self.channel.curve_file {
            Some(path) => DecodeModel::load_curve_file(path),
            None => Ok(DecodeModel::from_mcs_table(&self.mcs)),
        }
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        Ok(ChannelModel {
            pathloss: self.channel.pathloss.clone(),
            noise: NoiseConfig {
                noise_floor_dbm: self.channel.noise_floor_dbm,
            },
            decode: self.decode_model()?,
            sci_mcs: self.grid.sci_mcs,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config parse error: {e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a config file (or the defaults when `path` is `None`), applies
    /// `key=value` overrides in order and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e: toml::de::Error| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(RunConfig::default()).expect("defaults serialize"),
        };
        let cfg = apply_overrides(base, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `a.b.c=value` into its key path and raw value.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override `{s}` has an empty key")));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

/// Interprets an override value as a TOML value, falling back to a bare
/// string (so `policy.kind=adaptive` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("unknown override key `{key}`: `{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies overrides to a parsed document and deserializes it. Each
/// override is first checked on its own so an error names the key.
pub fn apply_overrides(base: toml::Table, overrides: &[String]) -> Result<RunConfig> {
    let mut merged = base.clone();
    for s in overrides {
        let (key, raw) = parse_override(s)?;
        let value = parse_value(&raw);
        let mut probe = base.clone();
        set_path(&mut probe, &key, value.clone())?;
        if let Err(e) = RunConfig::from_table(probe) {
            return Err(Error::config(format!("invalid override `{key}`: {e}")));
        }
        set_path(&mut merged, &key, value)?;
    }
    RunConfig::from_table(merged)
}
