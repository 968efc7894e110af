//! Highway topology, mobility and the BSM/HPM traffic schedule.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MessageClass, MessageKind};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadConfig {
    pub length_m: f64,
    /// Vehicles per km.
    pub density: f64,
    /// m/s; 0 gives a static snapshot.
    pub speed: f64,
    pub wraparound: bool,
    /// Explicit initial positions. Overrides `density` when present.
    pub positions: Option<Vec<f64>>,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length_m: 4800.0,
            density: 66.67,
            speed: 30.0,
            wraparound: true,
            positions: None,
        }
    }
}

impl RoadConfig {
    pub fn vehicle_count(&self) -> usize {
        match &self.positions {
            Some(p) => p.len(),
            None => (self.length_m / 1000.0 * self.density).round().max(0.0) as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::config("road.length_m must be positive"));
        }
        if self.positions.is_none() && !(self.density > 0.0) {
            return Err(Error::config("road.density must be positive"));
        }
        if !(self.speed >= 0.0) {
            return Err(Error::config("road.speed must be >= 0"));
        }
        if let Some(p) = &self.positions {
            if p.iter().any(|x| !(0.0..self.length_m).contains(x)) {
                return Err(Error::config("road.positions must lie in [0, road.length_m)"));
            }
        }
        if self.vehicle_count() == 0 {
            return Err(Error::config("road: scenario has no vehicles"));
        }
        Ok(())
    }

    /// Distance between two road positions; ring distance under wraparound.
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        ring_distance(a, b, self.length_m, self.wraparound)
    }
}

pub fn ring_distance(a: f64, b: f64, length: f64, wraparound: bool) -> f64 {
    let d = (a - b).abs();
    if wraparound {
        let d = d % length;
        d.min(length - d)
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub itt_ms: u64,
    pub bsm: MessageKind,
    pub hpm: MessageKind,
    pub hpm_node_fraction: f64,
    pub hpm_batch_interval_s: f64,
    pub hpm_rate_hz: f64,
    pub hpm_duration_s: f64,
    pub sim_time_s: f64,
    /// Send event messages in addition to, rather than instead of, BSMs.
    pub hpm_additive: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            itt_ms: 100,
            bsm: MessageKind::bsm(),
            hpm: MessageKind::hpm(),
            hpm_node_fraction: 0.01,
            hpm_batch_interval_s: 5.0,
            hpm_rate_hz: 10.0,
            hpm_duration_s: 1.0,
            sim_time_s: 50.0,
            hpm_additive: false,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.itt_ms == 0 {
            return Err(Error::config("traffic.itt_ms must be positive"));
        }
        if self.bsm.class != MessageClass::Bsm || self.hpm.class != MessageClass::Hpm {
            return Err(Error::config("traffic.bsm / traffic.hpm have the wrong class"));
        }
        self.bsm.validate()?;
        self.hpm.validate()?;
        if !(0.0..=1.0).contains(&self.hpm_node_fraction) {
            return Err(Error::config("traffic.hpm_node_fraction must lie in [0, 1]"));
        }
        let packets = self.hpm_rate_hz * self.hpm_duration_s;
        if (packets - packets.round()).abs() > 1e-9 {
            return Err(Error::config(
                "traffic: hpm_rate_hz * hpm_duration_s must be a whole packet count",
            ));
        }
        if (self.hpm_rate_hz * self.itt_ms as f64 / 1000.0 - 1.0).abs() > 1e-9 {
            return Err(Error::config("traffic.hpm_rate_hz must match the 1/itt packet rate"));
        }
        if !(self.hpm_duration_s <= self.hpm_batch_interval_s && self.hpm_batch_interval_s > 0.0) {
            return Err(Error::config(
                "traffic.hpm_duration_s must not exceed hpm_batch_interval_s",
            ));
        }
        if !(self.sim_time_s > 0.0) {
            return Err(Error::config("traffic.sim_time_s must be positive"));
        }
        Ok(())
    }

    pub fn total_subframes(&self) -> u64 {
        (self.sim_time_s * 1000.0).round() as u64
    }

    fn batch_interval_ms(&self) -> i64 {
        (self.hpm_batch_interval_s * 1000.0).round() as i64
    }

    fn duration_ms(&self) -> i64 {
        (self.hpm_duration_s * 1000.0).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub position: f64,
    pub speed: f64,
    pub is_hpm_node: bool,
    /// Phase of the periodic packet clock, in `[0, itt)`.
    pub tx_offset: u64,
    /// Start of the first event window, in `[0, hpm_batch_interval)` ms.
    pub hpm_phase: u64,
}

/// Places vehicles uniformly on the road and picks the event-generating nodes.
pub fn build(road: &RoadConfig, traffic: &TrafficConfig, seed: u64) -> Result<Vec<VehicleState>> {
    road.validate()?;
    traffic.validate()?;
    let n = road.vehicle_count();
    let mut place = substream(seed, Purpose::Placement, 0);
    let positions: Vec<f64> = match &road.positions {
        Some(p) => p.clone(),
        None => (0..n).map(|_| place.random_range(0.0..road.length_m)).collect(),
    };
    let n_hpm = ((traffic.hpm_node_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut pick = substream(seed, Purpose::HpmNodes, 0);
    let mut is_hpm = vec![false; n];
    for i in sample(&mut pick, n, n_hpm.min(n)) {
        is_hpm[i] = true;
    }
    let mut offsets = substream(seed, Purpose::Offsets, 0);
    let mut phases = substream(seed, Purpose::HpmPhase, 0);
    let batch = traffic.batch_interval_ms().max(1) as u64;
    Ok(positions
        .into_iter()
        .enumerate()
        .map(|(id, position)| VehicleState {
            id,
            position,
            speed: road.speed,
            is_hpm_node: is_hpm[id],
            tx_offset: offsets.random_range(0..traffic.itt_ms),
            hpm_phase: phases.random_range(0..batch),
        })
        .collect())
}

/// Moves every vehicle forward by `dt_ms`.
pub fn advance(vehicles: &mut [VehicleState], dt_ms: f64, road: &RoadConfig) {
    for v in vehicles {
        v.position += v.speed * dt_ms / 1000.0;
        if road.wraparound {
            v.position = v.position.rem_euclid(road.length_m);
        }
    }
}

/// Whether the vehicle's packet clock fires at `now`.
pub fn packet_due(v: &VehicleState, now: u64, traffic: &TrafficConfig) -> bool {
    now >= v.tx_offset && (now - v.tx_offset) % traffic.itt_ms == 0
}

/// Whether an event window of this vehicle covers `now`.
pub fn hpm_event_active(v: &VehicleState, now: u64, traffic: &TrafficConfig) -> bool {
    if !v.is_hpm_node {
        return false;
    }
    let since = (now as i64 - v.hpm_phase as i64).rem_euclid(traffic.batch_interval_ms());
    since < traffic.duration_ms()
}

/// The message the vehicle sends at `now`, if any. During an event window
/// the event message takes the BSM's place.
pub fn message_schedule(v: &VehicleState, now: u64, traffic: &TrafficConfig) -> Option<MessageClass> {
    if !packet_due(v, now, traffic) {
        return None;
    }
    if !traffic.hpm_additive && hpm_event_active(v, now, traffic) {
        Some(MessageClass::Hpm)
    } else {
        Some(MessageClass::Bsm)
    }
}
