//! Semi-persistent scheduling (SPS) for sidelink Mode 4.
//!
//! Each UE keeps a sensing window over the last `sensing_window_len`
//! subframes. When it needs new resources it runs the candidate procedure:
//!
//! 1. every allocation of `L_subCH` subchannels in `[now + t1, now + t2]` is a
//!    candidate;
//! 2. candidates in subframes periodically related to subframes the UE could
//!    not sense (because it was transmitting) are dropped, unless that alone
//!    would leave fewer than `candidate_fraction` of all candidates;
//! 3. candidates overlapping a reservation announced by a decoded SCI with
//!    RSRP above the threshold are dropped;
//! 4. if fewer than `candidate_fraction` of all candidates survive, the
//!    threshold is raised by `threshold_step_db` and step 3 is redone;
//! 5. survivors are ranked by average S-RSSI over their periodic projections
//!    in the window, and the quietest `candidate_fraction` are retained.
//!
//! Two resources at most `harq_max_gap` subframes apart are then drawn from
//! the retained set for the initial transmission and its blind HARQ copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{DecodedSci, RxObservation};
use crate::error::{Error, Result};
use crate::grid::{Allocation, Resource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsConfig {
    /// Reservation period in subframes.
    pub p_step: u64,
    pub sensing_window_len: u64,
    pub t1: u64,
    pub t2: u64,
    pub initial_threshold_dbm: f64,
    pub threshold_step_db: f64,
    pub candidate_fraction: f64,
    pub slrrc_min: u32,
    pub slrrc_max: u32,
    /// Probability of keeping the old resources when the counter expires.
    pub p_keep: f64,
    pub harq_max_gap: u64,
    /// Reselect after this many consecutive unused reserved occasions.
    pub underuse_trigger: Option<u32>,
}

impl Default for SpsConfig {
    fn default() -> Self {
        Self {
            p_step: 100,
            sensing_window_len: 1000,
            t1: 4,
            t2: 100,
            initial_threshold_dbm: -84.18,
            threshold_step_db: 3.0,
            candidate_fraction: 0.2,
            slrrc_min: 5,
            slrrc_max: 15,
            p_keep: 0.0,
            harq_max_gap: 15,
            underuse_trigger: None,
        }
    }
}

impl SpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction < 1.0) {
            return Err(Error::config("sps.candidate_fraction must lie in (0, 1)"));
        }
        if self.slrrc_min > self.slrrc_max || self.slrrc_min == 0 {
            return Err(Error::config("sps.slrrc_min must be in [1, sps.slrrc_max]"));
        }
        if !(self.t1 < self.t2 && self.t2 <= self.p_step) {
            return Err(Error::config("sps: need t1 < t2 <= p_step"));
        }
        if !(0.0..=0.8).contains(&self.p_keep) {
            return Err(Error::config("sps.p_keep must lie in [0, 0.8]"));
        }
        if self.harq_max_gap == 0 {
            return Err(Error::config("sps.harq_max_gap must be at least 1"));
        }
        if self.sensing_window_len < self.p_step {
            return Err(Error::config("sps.sensing_window_len must cover at least one p_step"));
        }
        if !(self.threshold_step_db > 0.0) {
            return Err(Error::config("sps.threshold_step_db must be positive"));
        }
        Ok(())
    }

    /// Candidates that must remain: `ceil(fraction * total)`.
    pub fn required_candidates(&self, total: usize) -> usize {
        ((self.candidate_fraction * total as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn threshold_after(&self, escalations: u32) -> f64 {
        self.initial_threshold_dbm + escalations as f64 * self.threshold_step_db
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    /// Nothing recorded (before the UE started, or overwritten).
    Empty,
    Observed,
    /// The UE transmitted and could not sense.
    OwnTx,
}

/// Ring buffer of per-subframe sensing results.
#[derive(Debug, Clone)]
pub struct SensingWindow {
    len: u64,
    n_subchannels: u32,
    noise_mw: f64,
    stamp: Vec<u64>,
    state: Vec<SlotState>,
    rssi_mw: Vec<f64>,
    scis: Vec<Vec<DecodedSci>>,
}

const NEVER: u64 = u64::MAX;

impl SensingWindow {
    pub fn new(len: u64, n_subchannels: u32, noise_mw: f64) -> Self {
        let slots = len as usize;
        Self {
            len,
            n_subchannels,
            noise_mw,
            stamp: vec![NEVER; slots],
            state: vec![SlotState::Empty; slots],
            rssi_mw: vec![noise_mw; slots * n_subchannels as usize],
            scis: vec![Vec::new(); slots],
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_subchannels(&self) -> u32 {
        self.n_subchannels
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    fn slot(&self, subframe: u64) -> usize {
        (subframe % self.len) as usize
    }

    fn claim(&mut self, subframe: u64, state: SlotState) -> usize {
        let i = self.slot(subframe);
        self.stamp[i] = subframe;
        self.state[i] = state;
        self.scis[i].clear();
        i
    }

    /// Stores one observed subframe (one entry per subchannel).
    pub fn record(&mut self, subframe: u64, resources: &[RxObservation]) {
        let i = self.claim(subframe, SlotState::Observed);
        let n = self.n_subchannels as usize;
        let row = &mut self.rssi_mw[i * n..(i + 1) * n];
        for (dst, r) in row.iter_mut().zip(resources) {
            *dst = r.s_rssi_mw;
        }
        for r in resources {
            self.scis[i].extend_from_slice(&r.decoded_scis);
        }
    }

    /// Stores an observation given as raw per-subchannel power and SCIs.
    pub fn record_raw(&mut self, subframe: u64, rssi_mw: &[f64], scis: &[DecodedSci]) {
        let i = self.claim(subframe, SlotState::Observed);
        let n = self.n_subchannels as usize;
        self.rssi_mw[i * n..(i + 1) * n].copy_from_slice(&rssi_mw[..n]);
        self.scis[i].extend_from_slice(scis);
    }

    pub fn record_own_tx(&mut self, subframe: u64) {
        let i = self.claim(subframe, SlotState::OwnTx);
        let n = self.n_subchannels as usize;
        self.rssi_mw[i * n..(i + 1) * n].fill(self.noise_mw);
    }

    pub fn state_at(&self, subframe: u64) -> SlotState {
        let i = self.slot(subframe);
        if self.stamp[i] == subframe {
            self.state[i]
        } else {
            SlotState::Empty
        }
    }

    /// Per-subchannel S-RSSI in mW, if the subframe was observed and is still held.
    pub fn rssi_at(&self, subframe: u64) -> Option<&[f64]> {
        if self.state_at(subframe) != SlotState::Observed {
            return None;
        }
        let i = self.slot(subframe);
        let n = self.n_subchannels as usize;
        Some(&self.rssi_mw[i * n..(i + 1) * n])
    }

    pub fn scis_at(&self, subframe: u64) -> &[DecodedSci] {
        if self.state_at(subframe) == SlotState::Observed {
            &self.scis[self.slot(subframe)]
        } else {
            &[]
        }
    }

    /// First subframe still covered when the current time is `now`.
    pub fn start(&self, now: u64) -> u64 {
        now.saturating_sub(self.len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Quietest surviving candidates, in rank order.
    pub retained: Vec<Resource>,
    /// Candidates in the selection window before any exclusion.
    pub total: usize,
    /// Candidates left after steps 2-4 at the final threshold.
    pub after_exclusion: usize,
    pub threshold_dbm: f64,
    pub escalations: u32,
}

/// Runs the five-step candidate procedure for an allocation of `l_subch`
/// subchannels at time `now`.
pub fn candidate_resources(
    window: &SensingWindow,
    now: u64,
    l_subch: u32,
    cfg: &SpsConfig,
) -> CandidateSet {
    let n_sub = window.n_subchannels();
    let first = now + cfg.t1;
    let last = now + cfg.t2;
    let span = (last - first + 1) as usize;
    let starts = if l_subch == 0 || l_subch > n_sub {
        0
    } else {
        (n_sub - l_subch + 1) as usize
    };
    let total = span * starts;
    let required = cfg.required_candidates(total);
    let win_start = window.start(now);

    // Step 2: subframes periodically related to unmonitored ones.
    let mut blocked_subframe = vec![false; span];
    // Step 3 bookkeeping: strongest announcing RSRP per (subframe, subchannel).
    let mut blocker = vec![f64::NEG_INFINITY; span * n_sub as usize];
    for y in win_start..now {
        match window.state_at(y) {
            SlotState::OwnTx => {
                let mut s = y + cfg.p_step;
                while s <= last {
                    if s >= first {
                        blocked_subframe[(s - first) as usize] = true;
                    }
                    s += cfg.p_step;
                }
            }
            SlotState::Observed => {
                for sci in window.scis_at(y) {
                    let period = sci.reservation.period;
                    if period == 0 {
                        continue;
                    }
                    for k in 1..=sci.reservation.remaining as u64 {
                        let s = y + k * period;
                        if s > last {
                            break;
                        }
                        if s < first {
                            continue;
                        }
                        let row = (s - first) as usize * n_sub as usize;
                        for c in sci.alloc.start..sci.alloc.end().min(n_sub) {
                            let b = &mut blocker[row + c as usize];
                            if sci.rsrp_dbm > *b {
                                *b = sci.rsrp_dbm;
                            }
                        }
                    }
                }
            }
            SlotState::Empty => {}
        }
    }

    // With short periods a UE's own past transmissions can cover every
    // residue; step 2 is then lifted rather than starving the selection.
    let open = blocked_subframe.iter().filter(|b| !**b).count() * starts;
    let lift_step2 = open < required;

    // Survivors of step 2 with the RSRP level that would exclude them.
    let mut survivors: Vec<(Resource, f64)> = Vec::with_capacity(total);
    for (i, &blocked) in blocked_subframe.iter().enumerate() {
        if blocked && !lift_step2 {
            continue;
        }
        let row = &blocker[i * n_sub as usize..(i + 1) * n_sub as usize];
        for start in 0..starts as u32 {
            let level = row[start as usize..(start + l_subch) as usize]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let res = Resource {
                subframe: first + i as u64,
                alloc: Allocation::new(start, l_subch),
            };
            survivors.push((res, level));
        }
    }

    // Steps 3-4.
    let max_level = survivors
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut escalations = 0u32;
    let mut threshold = cfg.threshold_after(0);
    loop {
        let left = survivors.iter().filter(|s| s.1 <= threshold).count();
        if left >= required || max_level <= threshold {
            break;
        }
        escalations += 1;
        threshold = cfg.threshold_after(escalations);
    }
    survivors.retain(|s| s.1 <= threshold);
    let after_exclusion = survivors.len();

    // Step 5: rank by average S-RSSI over periodic projections.
    let mut ranked: Vec<(f64, Resource)> = survivors
        .into_iter()
        .map(|(res, _)| (average_rssi(window, now, &res, cfg.p_step), res))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(required.max(1).min(ranked.len()));

    CandidateSet {
        retained: ranked.into_iter().map(|r| r.1).collect(),
        total,
        after_exclusion,
        threshold_dbm: threshold,
        escalations,
    }
}

/// Linear mean S-RSSI of a candidate over its periodic projections in the
/// window; the noise floor when no projection was observed.
pub fn average_rssi(window: &SensingWindow, now: u64, res: &Resource, p_step: u64) -> f64 {
    let win_start = window.start(now);
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut k = 1;
    while let Some(y) = res.subframe.checked_sub(k * p_step) {
        if y < win_start {
            break;
        }
        if y < now {
            if let Some(row) = window.rssi_at(y) {
                for c in res.alloc.start..res.alloc.end() {
                    sum += row[c as usize];
                    n += 1;
                }
            }
        }
        k += 1;
    }
    if n == 0 {
        window.noise_mw()
    } else {
        sum / n as f64
    }
}

/// Initial transmission and optional blind HARQ copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarqPair {
    pub initial: Resource,
    pub redundant: Option<Resource>,
}

impl HarqPair {
    pub fn gap(&self) -> Option<u64> {
        self.redundant.map(|r| r.subframe - self.initial.subframe)
    }
}

/// Draws the first resource uniformly, then its partner uniformly among the
/// candidates in a different subframe at most `harq_max_gap` away. Returns
/// `None` only for an empty candidate set.
pub fn draw_pair<R: Rng>(candidates: &[Resource], cfg: &SpsConfig, rng: &mut R) -> Option<HarqPair> {
    if candidates.is_empty() {
        return None;
    }
    let a = candidates[rng.random_range(0..candidates.len())];
    let partners: Vec<Resource> = candidates
        .iter()
        .copied()
        .filter(|c| c.subframe != a.subframe && c.subframe.abs_diff(a.subframe) <= cfg.harq_max_gap)
        .collect();
    if partners.is_empty() {
        return Some(HarqPair {
            initial: a,
            redundant: None,
        });
    }
    let b = partners[rng.random_range(0..partners.len())];
    let (initial, redundant) = if a.subframe < b.subframe { (a, b) } else { (b, a) };
    Some(HarqPair {
        initial,
        redundant: Some(redundant),
    })
}

/// Periodic reservation: the next occasion for each HARQ copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub next: HarqPair,
    pub period: u64,
}

impl Reservation {
    pub fn len(&self) -> u32 {
        self.next.initial.alloc.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the current occasion and moves to the next period.
    pub fn take_occasion(&mut self) -> HarqPair {
        let now = self.next;
        self.next.initial.subframe += self.period;
        if let Some(r) = self.next.redundant.as_mut() {
            r.subframe += self.period;
        }
        now
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsState {
    pub slrrc: u32,
    pub reserved: Option<Reservation>,
    pub effective_threshold_dbm: f64,
    pub unused_occasions: u32,
}

impl SpsState {
    pub fn new(cfg: &SpsConfig) -> Self {
        Self {
            slrrc: 0,
            reserved: None,
            effective_threshold_dbm: cfg.initial_threshold_dbm,
            unused_occasions: 0,
        }
    }

    fn rearm<R: Rng>(&mut self, cfg: &SpsConfig, rng: &mut R) -> u32 {
        self.slrrc = rng.random_range(cfg.slrrc_min..=cfg.slrrc_max);
        self.slrrc
    }

    /// Decides whether a packet generated at `now` needing `needed_subch`
    /// subchannels requires fresh resources. When the counter has expired and
    /// the keep draw succeeds, the counter is re-armed and the old resources
    /// are reused; the re-armed value is returned in `Reselect::Kept`.
    pub fn needs_reselection<R: Rng>(
        &mut self,
        needed_subch: u32,
        now: u64,
        cfg: &SpsConfig,
        rng: &mut R,
    ) -> ReselectDecision {
        let Some(res) = &self.reserved else {
            return ReselectDecision::Reselect(Trigger::NoReservation);
        };
        if res.next.initial.subframe < now {
            return ReselectDecision::Reselect(Trigger::NoReservation);
        }
        if res.len() < needed_subch {
            return ReselectDecision::Reselect(Trigger::Qos);
        }
        if let Some(limit) = cfg.underuse_trigger {
            if self.unused_occasions >= limit {
                return ReselectDecision::Reselect(Trigger::Underuse);
            }
        }
        if self.slrrc == 0 {
            let draw: f64 = rng.random();
            if draw < cfg.p_keep {
                let v = self.rearm(cfg, rng);
                return ReselectDecision::Kept(v);
            }
            return ReselectDecision::Reselect(Trigger::Counter);
        }
        ReselectDecision::Keep
    }

    /// Draws a HARQ pair from `candidates`, stores it as the reservation
    /// with period `period` and re-arms the counter.
    pub fn select_pair<R: Rng>(
        &mut self,
        candidates: &[Resource],
        period: u64,
        cfg: &SpsConfig,
        rng: &mut R,
    ) -> Option<HarqPair> {
        let pair = draw_pair(candidates, cfg, rng)?;
        self.rearm(cfg, rng);
        self.reserved = Some(Reservation { next: pair, period });
        self.unused_occasions = 0;
        Some(pair)
    }

    /// One packet sent on the reservation.
    pub fn on_transmit(&mut self) {
        self.slrrc = self.slrrc.saturating_sub(1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    NoReservation,
    /// Reserved allocation too small for the pending packet.
    Qos,
    Underuse,
    Counter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReselectDecision {
    Keep,
    /// Counter expired but the old resources were kept; carries the re-armed value.
    Kept(u32),
    Reselect(Trigger),
}

impl ReselectDecision {
    pub fn reselect(&self) -> bool {
        matches!(self, ReselectDecision::Reselect(_))
    }
}
