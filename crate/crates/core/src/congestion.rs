//! Channel busy ratio measurement and BSM transmit power policies.

use serde::{Deserialize, Serialize};

use crate::channel::dbm_to_mw;
use crate::error::{Error, Result};
use crate::mac_sps::SensingWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbrConfig {
    /// Trailing window in subframes.
    pub window: u64,
    pub threshold_dbm: f64,
}

impl Default for CbrConfig {
    fn default() -> Self {
        Self {
            window: 100,
            threshold_dbm: -92.0,
        }
    }
}

impl CbrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("cbr.window must be at least 1"));
        }
        Ok(())
    }
}

/// Fraction of samples strictly above the threshold; 0 for no samples.
pub fn cbr_from_samples(s_rssi_mw: impl IntoIterator<Item = f64>, threshold_dbm: f64) -> f64 {
    let threshold_mw = dbm_to_mw(threshold_dbm);
    let (mut busy, mut n) = (0usize, 0usize);
    for p in s_rssi_mw {
        n += 1;
        if p > threshold_mw {
            busy += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        busy as f64 / n as f64
    }
}

/// CBR over the `cfg.window` subframes before `now`. Subframes in which the
/// UE transmitted (or had not started) do not count in the denominator.
pub fn measure_cbr(window: &SensingWindow, now: u64, cfg: &CbrConfig) -> Result<f64> {
    if now < cfg.window {
        return Err(Error::WarmUp {
            have: now,
            need: cfg.window,
        });
    }
    let samples = (now - cfg.window..now)
        .filter_map(|y| window.rssi_at(y))
        .flat_map(|row| row.iter().copied());
    Ok(cbr_from_samples(samples, cfg.threshold_dbm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fixed,
    Adaptive,
    Selective,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Fixed => "fixed",
            PolicyKind::Adaptive => "adaptive",
            PolicyKind::Selective => "selective",
        }
    }
}

/// Flat configuration form of [`PowerPolicy`]; every field is always present
/// so a sweep can switch `kind` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// BSM power under the fixed policy.
    pub power_dbm: f64,
    pub p_max_dbm: f64,
    pub p_min_dbm: f64,
    pub cbr_lo: f64,
    pub cbr_hi: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Fixed,
            power_dbm: 20.0,
            p_max_dbm: 20.0,
            p_min_dbm: 0.0,
            cbr_lo: 0.07,
            cbr_hi: 0.29,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min_dbm <= self.p_max_dbm) {
            return Err(Error::config("policy.p_min_dbm must not exceed policy.p_max_dbm"));
        }
        if !(0.0 <= self.cbr_lo && self.cbr_lo < self.cbr_hi && self.cbr_hi <= 1.0) {
            return Err(Error::config("policy: need 0 <= cbr_lo < cbr_hi <= 1"));
        }
        if !self.power_dbm.is_finite() {
            return Err(Error::config("policy.power_dbm must be finite"));
        }
        Ok(())
    }

    pub fn policy(&self) -> PowerPolicy {
        let map = CbrPowerMap {
            p_max_dbm: self.p_max_dbm,
            p_min_dbm: self.p_min_dbm,
            cbr_lo: self.cbr_lo,
            cbr_hi: self.cbr_hi,
        };
        match self.kind {
            PolicyKind::Fixed => PowerPolicy::Fixed {
                power_dbm: self.power_dbm,
                p_max_dbm: self.p_max_dbm,
            },
            PolicyKind::Adaptive => PowerPolicy::Adaptive(map),
            PolicyKind::Selective => PowerPolicy::Selective(map),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbrPowerMap {
    pub p_max_dbm: f64,
    pub p_min_dbm: f64,
    pub cbr_lo: f64,
    pub cbr_hi: f64,
}

impl CbrPowerMap {
    /// Full power up to `cbr_lo`, minimum from `cbr_hi`, linear in dB between.
    pub fn power_for(&self, cbr: f64) -> f64 {
        if cbr <= self.cbr_lo {
            self.p_max_dbm
        } else if cbr >= self.cbr_hi {
            self.p_min_dbm
        } else {
            let t = (cbr - self.cbr_lo) / (self.cbr_hi - self.cbr_lo);
            self.p_max_dbm + t * (self.p_min_dbm - self.p_max_dbm)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PowerPolicy {
    /// `p_max_dbm` is only used for event messages.
    Fixed { power_dbm: f64, p_max_dbm: f64 },
    Adaptive(CbrPowerMap),
    /// Adaptive only while some event message is active, full power otherwise.
    Selective(CbrPowerMap),
}

impl PowerPolicy {
    pub fn p_max_dbm(&self) -> f64 {
        match self {
            PowerPolicy::Fixed { p_max_dbm, .. } => *p_max_dbm,
            PowerPolicy::Adaptive(m) | PowerPolicy::Selective(m) => m.p_max_dbm,
        }
    }
}

pub fn bsm_tx_power(policy: &PowerPolicy, cbr: f64, hpm_active_in_scenario: bool) -> f64 {
    match policy {
        PowerPolicy::Fixed { power_dbm, .. } => *power_dbm,
        PowerPolicy::Adaptive(map) => map.power_for(cbr),
        PowerPolicy::Selective(map) => {
            if hpm_active_in_scenario {
                map.power_for(cbr)
            } else {
                map.p_max_dbm
            }
        }
    }
}

/// Event messages always go out at full power.
pub fn hpm_tx_power(policy: &PowerPolicy) -> f64 {
    policy.p_max_dbm()
}
