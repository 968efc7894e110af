//! Reference implementations and helpers shared by the integration tests.
//!
//! The references below are written from the definitions, not from the
//! production code: history is a plain map keyed by subframe, every candidate
//! is checked against every record, and nothing is cached.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cv2x_core::channel::DecodedSci;
use cv2x_core::grid::{Allocation, Resource};
use cv2x_core::mac_sps::SpsConfig;
use cv2x_core::RunConfig;

/// What a UE remembers about one past subframe.
#[derive(Debug, Clone)]
pub enum Past {
    OwnTx,
    Heard { rssi_mw: Vec<f64>, scis: Vec<DecodedSci> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub retained: Vec<Resource>,
    pub total: usize,
    pub after_exclusion: usize,
    pub threshold_dbm: f64,
    pub escalations: u32,
    pub step2_lifted: bool,
}

/// Exhaustive candidate procedure over a history map. Only subframes in
/// `[now - window_len, now)` are visible. Candidates with no heard
/// projection rank at `noise_mw`.
pub fn reference_candidates(
    history: &BTreeMap<u64, Past>,
    window_len: u64,
    n_sub: u32,
    noise_mw: f64,
    now: u64,
    l: u32,
    cfg: &SpsConfig,
) -> Reference {
    let lo = now.saturating_sub(window_len);
    let visible: Vec<(u64, &Past)> = history.range(lo..now).map(|(k, v)| (*k, v)).collect();

    let mut all = Vec::new();
    for s in now + cfg.t1..=now + cfg.t2 {
        for start in 0..n_sub {
            if start + l <= n_sub {
                all.push(Resource {
                    subframe: s,
                    alloc: Allocation::new(start, l),
                });
            }
        }
    }
    let total = all.len();
    let required = (0..=total)
        .find(|&k| k as f64 >= cfg.candidate_fraction * total as f64 - 1e-9)
        .unwrap_or(total);

    let unmonitored = |c: &Resource| {
        visible.iter().any(|(y, p)| {
            matches!(p, Past::OwnTx) && c.subframe > *y && (c.subframe - y) % cfg.p_step == 0
        })
    };
    // Strongest RSRP among SCIs whose announced reservation lands on `c`.
    let level = |c: &Resource| {
        let mut best = f64::NEG_INFINITY;
        for (y, p) in &visible {
            if let Past::Heard { scis, .. } = p {
                for sci in scis {
                    if sci.reservation.period == 0 {
                        continue;
                    }
                    let hits = (1..=sci.reservation.remaining as u64)
                        .any(|k| y + k * sci.reservation.period == c.subframe);
                    let clipped = Allocation::new(sci.alloc.start, sci.alloc.len.min(n_sub.saturating_sub(sci.alloc.start)));
                    if hits && clipped.len > 0 && clipped.overlaps(&c.alloc) && sci.rsrp_dbm > best {
                        best = sci.rsrp_dbm;
                    }
                }
            }
        }
        best
    };
    let mut monitored: Vec<(Resource, f64)> = all
        .iter()
        .filter(|c| !unmonitored(c))
        .map(|c| (*c, level(c)))
        .collect();
    let step2_lifted = monitored.len() < required;
    if step2_lifted {
        monitored = all.iter().map(|c| (*c, level(c))).collect();
    }

    let mut escalations = 0u32;
    let threshold = loop {
        let th = cfg.initial_threshold_dbm + escalations as f64 * cfg.threshold_step_db;
        let kept = monitored.iter().filter(|(_, lv)| *lv <= th).count();
        let anything_above = monitored.iter().any(|(_, lv)| *lv > th);
        if kept >= required || !anything_above {
            break th;
        }
        escalations += 1;
    };
    let survivors: Vec<Resource> = monitored
        .iter()
        .filter(|(_, lv)| *lv <= threshold)
        .map(|(c, _)| *c)
        .collect();

    let mut ranked: Vec<(f64, Resource)> = survivors
        .iter()
        .map(|c| {
            let mut sum = 0.0;
            let mut n = 0;
            let mut k = 1;
            while k * cfg.p_step <= c.subframe && c.subframe - k * cfg.p_step >= lo {
                let y = c.subframe - k * cfg.p_step;
                if y < now {
                    if let Some(Past::Heard { rssi_mw, .. }) = history.get(&y) {
                        for ch in c.alloc.start..c.alloc.start + c.alloc.len {
                            sum += rssi_mw[ch as usize];
                            n += 1;
                        }
                    }
                }
                k += 1;
            }
            (if n == 0 { noise_mw } else { sum / n as f64 }, *c)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let keep = required.max(1).min(ranked.len());
    Reference {
        retained: ranked[..keep].iter().map(|r| r.1).collect(),
        total,
        after_exclusion: survivors.len(),
        threshold_dbm: threshold,
        escalations,
        step2_lifted,
    }
}

/// SINR in dB from the textbook formula, evaluated in watts with natural
/// logarithms.
pub fn reference_sinr_db(signal_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> f64 {
    let watts = |dbm: f64| (dbm / 10.0 * std::f64::consts::LN_10).exp() / 1000.0;
    let mut denom = watts(noise_dbm);
    for &i in interferers_dbm {
        denom += watts(i);
    }
    10.0 * (watts(signal_dbm) / denom).ln() / std::f64::consts::LN_10
}

/// Desk-scale configuration: 1.2 km ring, `vehicles` cars, 10 s.
pub fn desk(vehicles: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.road.length_m = 1200.0;
    cfg.road.density = vehicles as f64 / 1.2;
    cfg.traffic.sim_time_s = 10.0;
    cfg
}

/// Sets the SPS period (and the packet rate that must match it).
pub fn with_period(mut cfg: RunConfig, p: u64) -> RunConfig {
    cfg.sps.p_step = p;
    cfg.traffic.itt_ms = p;
    cfg.sps.t2 = cfg.sps.t2.min(p);
    cfg.traffic.hpm_rate_hz = 1000.0 / p as f64;
    cfg
}

/// One randomized sensing history and the query to run against it.
pub struct OracleCase {
    pub cfg: SpsConfig,
    pub n_sub: u32,
    pub window_len: u64,
    pub noise_mw: f64,
    pub now: u64,
    pub l: u32,
    pub history: BTreeMap<u64, Past>,
}

impl OracleCase {
    /// Draws a case on a grid of at most 200 subframes by 10 subchannels.
    /// RSRP values cluster around the first few threshold levels so that
    /// escalation and ties both happen regularly.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let p_step = [20u64, 25, 40, 50, 100][rng.random_range(0..5)];
        let window_len = rng.random_range(p_step..=200);
        let n_sub = rng.random_range(1..=10u32);
        let l = rng.random_range(1..=n_sub);
        let t2 = rng.random_range(2..=p_step);
        let t1 = rng.random_range(0..t2);
        let cfg = SpsConfig {
            p_step,
            sensing_window_len: window_len,
            t1,
            t2,
            candidate_fraction: [0.2, 0.2, 0.5, 0.05][rng.random_range(0..4)],
            ..SpsConfig::default()
        };
        let now = rng.random_range(0..window_len + 150);
        let noise_mw = 10f64.powf(-12.4);
        let busy = rng.random::<f64>();
        // Occasionally dense enough in own transmissions to block everything.
        let own = rng.random::<f64>() * if rng.random::<f64>() < 0.2 { 0.6 } else { 0.1 };
        let mut history = BTreeMap::new();
        for y in now.saturating_sub(window_len + 60)..now {
            let u: f64 = rng.random();
            if u < own {
                history.insert(y, Past::OwnTx);
                continue;
            }
            if u > 0.9 {
                continue;
            }
            // Coarse levels create exact ties in the ranking.
            let rssi_mw = (0..n_sub)
                .map(|_| noise_mw * (1 + rng.random_range(0..4)) as f64)
                .collect();
            let mut scis = Vec::new();
            while rng.random::<f64>() < busy * 0.8 {
                let start = rng.random_range(0..n_sub);
                let len = rng.random_range(1..=3);
                let level = rng.random_range(-2..=6) as f64;
                let jitter = [0.0, 0.5, -0.5, 1e-9][rng.random_range(0..4)];
                scis.push(DecodedSci {
                    tx: rng.random_range(0..50),
                    rsrp_dbm: cfg.initial_threshold_dbm + 3.0 * level + jitter,
                    alloc: Allocation::new(start, len),
                    reservation: cv2x_core::channel::SciReservation {
                        period: [0, p_step, p_step, 2 * p_step][rng.random_range(0..4)],
                        remaining: rng.random_range(0..=15),
                    },
                });
            }
            history.insert(y, Past::Heard { rssi_mw, scis });
        }
        Self {
            cfg,
            n_sub,
            window_len,
            noise_mw,
            now,
            l,
            history,
        }
    }

    /// The same history loaded into the production ring buffer.
    pub fn window(&self) -> cv2x_core::mac_sps::SensingWindow {
        let mut w = cv2x_core::mac_sps::SensingWindow::new(self.window_len, self.n_sub, self.noise_mw);
        for (&y, p) in &self.history {
            match p {
                Past::OwnTx => w.record_own_tx(y),
                Past::Heard { rssi_mw, scis } => w.record_raw(y, rssi_mw, scis),
            }
        }
        w
    }

    pub fn reference(&self) -> Reference {
        reference_candidates(&self.history, self.window_len, self.n_sub, self.noise_mw, self.now, self.l, &self.cfg)
    }
}

/// Runs `cases` random oracle comparisons; returns the indices that differ.
pub fn oracle_mismatches(cases: usize, seed: u64) -> Vec<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for i in 0..cases {
        let case = OracleCase::random(&mut rng);
        let got = cv2x_core::mac_sps::candidate_resources(&case.window(), case.now, case.l, &case.cfg);
        let want = case.reference();
        let as_set = |v: &[Resource]| v.iter().copied().collect::<std::collections::BTreeSet<_>>();
        let same = as_set(&got.retained) == as_set(&want.retained)
            && got.retained.len() == want.retained.len()
            && got.total == want.total
            && got.after_exclusion == want.after_exclusion
            && got.threshold_dbm == want.threshold_dbm
            && got.escalations == want.escalations;
        if !same {
            bad.push(i);
        }
    }
    bad
}

/// Worst relative error of `sinr_db` against the reference on `cases`
/// random links with up to eight interferers. Relative error is taken
/// against `max(|reference|, 1 dB)`.
pub fn sinr_worst_error(cases: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = rng.random_range(-130.0..30.0);
        let k = rng.random_range(0..=8);
        let is: Vec<f64> = (0..k).map(|_| rng.random_range(-130.0..30.0)).collect();
        let n = rng.random_range(-130.0..-90.0);
        let got = cv2x_core::channel::sinr_db(s, &is, &cv2x_core::channel::NoiseConfig { noise_floor_dbm: n });
        let want = reference_sinr_db(s, &is, n);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    worst
}
