//! Time-frequency resource lattice and packet sizing.
//!
//! The sidelink pool is a grid of 1 ms subframes by subchannels, where a
//! subchannel is a fixed group of resource blocks (RBs). A packet occupies a
//! contiguous run of subchannels in one subframe: its sidelink control
//! information (SCI) sits in the first RBs of the run and the transport block
//! (TB) fills the rest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBs taken by the SCI at the start of every allocation.
pub const SCI_RBS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub subframe_duration_ms: f64,
    pub subcarrier_spacing_khz: f64,
    pub rb_subcarriers: u32,
    pub symbols_per_subframe: u32,
    pub data_symbols: u32,
    pub total_rbs: u32,
    pub rbs_per_subchannel: u32,
    pub adjacent_sci_tb: bool,
    /// MCS used for the SCI.
    pub sci_mcs: u8,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            subframe_duration_ms: 1.0,
            subcarrier_spacing_khz: 15.0,
            rb_subcarriers: 12,
            symbols_per_subframe: 14,
            data_symbols: 9,
            total_rbs: 100,
            rbs_per_subchannel: 10,
            adjacent_sci_tb: true,
            sci_mcs: 2,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rbs_per_subchannel == 0 {
            return Err(Error::config("grid.rbs_per_subchannel must be at least 1"));
        }
        if self.data_symbols >= self.symbols_per_subframe {
            return Err(Error::config(
                "grid.data_symbols must be smaller than grid.symbols_per_subframe",
            ));
        }
        if !self.adjacent_sci_tb {
            return Err(Error::config(
                "grid.adjacent_sci_tb: only the adjacent SCI+TB layout is supported",
            ));
        }
        if self.rbs_per_subchannel <= SCI_RBS {
            return Err(Error::config(format!(
                "grid.rbs_per_subchannel must exceed the {SCI_RBS} SCI RBs"
            )));
        }
        n_subchannels(self)?;
        Ok(())
    }
}

/// A single subchannel in a single subframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceIndex {
    pub subframe: u64,
    pub subchannel: u32,
}

/// A contiguous run of subchannels `[start, start + len)` within one subframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub start: u32,
    pub len: u32,
}

impl Allocation {
    pub fn new(start: u32, len: u32) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }

    pub fn contains(&self, subchannel: u32) -> bool {
        subchannel >= self.start && subchannel < self.end()
    }

    pub fn overlaps(&self, other: &Allocation) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    pub fn fits(&self, n_subchannels: u32) -> bool {
        self.len >= 1 && self.end() <= n_subchannels
    }
}

/// A candidate single-subframe resource: subframe plus subchannel run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resource {
    pub subframe: u64,
    pub alloc: Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McsProfile {
    pub mcs_index: u8,
    /// Modulation order exponent: 2 (QPSK), 4 (16QAM) or 6 (64QAM).
    pub bits_per_symbol: u32,
    pub code_rate: f64,
    /// SINR at which the default decode curve for this MCS has 50% block errors.
    pub decode_sinr_threshold_db: f64,
}

impl McsProfile {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 6].contains(&self.bits_per_symbol) {
            return Err(Error::config(format!(
                "mcs {}: bits_per_symbol must be 2, 4 or 6",
                self.mcs_index
            )));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(Error::config(format!(
                "mcs {}: code_rate must lie in (0, 1]",
                self.mcs_index
            )));
        }
        Ok(())
    }
}

/// The shipped MCS table: SCI at MCS 2, certificate-bearing TBs at MCS 5,
/// certificate-free TBs at MCS 11.
pub fn default_mcs_table() -> Vec<McsProfile> {
    vec![
        McsProfile {
            mcs_index: 2,
            bits_per_symbol: 2,
            code_rate: 0.19,
            decode_sinr_threshold_db: 3.0,
        },
        McsProfile {
            mcs_index: 5,
            bits_per_symbol: 2,
            code_rate: 0.40,
            decode_sinr_threshold_db: 7.0,
        },
        McsProfile {
            mcs_index: 11,
            bits_per_symbol: 4,
            code_rate: 0.37,
            decode_sinr_threshold_db: 13.0,
        },
    ]
}

pub fn lookup_mcs(table: &[McsProfile], mcs_index: u8) -> Result<&McsProfile> {
    table
        .iter()
        .find(|p| p.mcs_index == mcs_index)
        .ok_or(Error::MissingCurve(mcs_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageClass {
    Bsm,
    Hpm,
}

impl MessageClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageClass::Bsm => "bsm",
            MessageClass::Hpm => "hpm",
        }
    }
}

impl std::fmt::Display for MessageClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageKind {
    pub class: MessageClass,
    pub payload_bytes: u32,
    pub carries_certificate: bool,
    /// MCS of the transport block.
    pub mcs: u8,
}

impl MessageKind {
    pub fn bsm() -> Self {
        Self {
            class: MessageClass::Bsm,
            payload_bytes: 190,
            carries_certificate: false,
            mcs: 11,
        }
    }

    pub fn hpm() -> Self {
        Self {
            class: MessageClass::Hpm,
            payload_bytes: 300,
            carries_certificate: true,
            mcs: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_bytes == 0 {
            return Err(Error::config(format!(
                "{} payload_bytes must be positive",
                self.class
            )));
        }
        if self.class == MessageClass::Hpm && !self.carries_certificate {
            return Err(Error::config("hpm messages always carry a certificate"));
        }
        Ok(())
    }
}

/// Number of whole subchannels per subframe.
pub fn n_subchannels(cfg: &GridConfig) -> Result<u32> {
    if cfg.rbs_per_subchannel == 0 {
        return Err(Error::config("grid.rbs_per_subchannel must be at least 1"));
    }
    let n = cfg.total_rbs / cfg.rbs_per_subchannel;
    if n == 0 {
        return Err(Error::config(format!(
            "grid: {} RBs hold no whole subchannel of {} RBs",
            cfg.total_rbs, cfg.rbs_per_subchannel
        )));
    }
    Ok(n)
}

/// Payload bits one RB carries at this MCS.
pub fn rb_capacity_bits(profile: &McsProfile, cfg: &GridConfig) -> u32 {
    let raw = cfg.data_symbols as f64
        * cfg.rb_subcarriers as f64
        * profile.bits_per_symbol as f64
        * profile.code_rate;
    // Guard against 107.99999 style representation error before flooring.
    (raw + 1e-9).floor() as u32
}

/// Subchannels a message of this kind occupies (`L_subCH`), SCI included.
pub fn subchannels_needed(kind: &MessageKind, profile: &McsProfile, cfg: &GridConfig) -> Result<u32> {
    let n = n_subchannels(cfg)?;
    let cap = rb_capacity_bits(profile, cfg);
    let infeasible = |needed| Error::Infeasible {
        what: format!("{} ({} bytes at MCS {})", kind.class, kind.payload_bytes, profile.mcs_index),
        needed,
        available: n,
    };
    if cap == 0 {
        return Err(infeasible(u32::MAX));
    }
    let bits = kind.payload_bytes.max(1) as u64 * 8;
    let tb_rbs = bits.div_ceil(cap as u64);
    let sci_rbs = if cfg.adjacent_sci_tb { SCI_RBS as u64 } else { 0 };
    let needed = (tb_rbs + sci_rbs).div_ceil(cfg.rbs_per_subchannel as u64);
    let needed = u32::try_from(needed).unwrap_or(u32::MAX);
    if needed > n {
        return Err(infeasible(needed));
    }
    Ok(needed.max(1))
}
