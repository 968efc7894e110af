//! Received power, SINR and probabilistic decoding.
//!
//! All power bookkeeping happens in linear milliwatts; decibel values are
//! converted at the edges. A packet copy occupies a run of subchannels; its
//! SCI is decoded against the co-channel power on its first subchannel and
//! its TB against the co-channel power averaged across the whole run.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Allocation, McsProfile, ResourceIndex};
use crate::rng::{stream_seed, Purpose, SimRng};

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Dual-slope log-distance loss with optional per-link lognormal shadowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossModel {
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub exponent_near: f64,
    pub exponent_far: f64,
    pub breakpoint_m: f64,
    /// Standard deviation of the shadowing term; 0 disables it.
    pub shadowing_sigma_db: f64,
    /// Shadowing draws are held for this many subframes.
    pub shadowing_reseed_period: u64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            reference_loss_db: 47.0,
            reference_distance_m: 1.0,
            exponent_near: 2.0,
            exponent_far: 3.8,
            breakpoint_m: 220.0,
            shadowing_sigma_db: 3.0,
            shadowing_reseed_period: 100,
        }
    }
}

impl PathlossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::config("channel.pathloss.reference_distance_m must be positive"));
        }
        if !(self.exponent_near > 0.0 && self.exponent_far > 0.0) {
            return Err(Error::config("channel.pathloss exponents must be positive"));
        }
        if !(self.breakpoint_m >= self.reference_distance_m) {
            return Err(Error::config(
                "channel.pathloss.breakpoint_m must not be below reference_distance_m",
            ));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::config("channel.pathloss.shadowing_sigma_db must be >= 0"));
        }
        if self.shadowing_reseed_period == 0 {
            return Err(Error::config("channel.pathloss.shadowing_reseed_period must be >= 1"));
        }
        Ok(())
    }

    /// Distance-dependent loss without shadowing. Distances below the
    /// reference distance are clamped to it.
    pub fn pathloss_db(&self, d: f64) -> f64 {
        let d = d.max(self.reference_distance_m);
        if d <= self.breakpoint_m {
            self.reference_loss_db
                + 10.0 * self.exponent_near * (d / self.reference_distance_m).log10()
        } else {
            self.reference_loss_db
                + 10.0 * self.exponent_near * (self.breakpoint_m / self.reference_distance_m).log10()
                + 10.0 * self.exponent_far * (d / self.breakpoint_m).log10()
        }
    }

    /// Shadowing offset for the unordered link `{a, b}` during the hold
    /// period containing `subframe`. Symmetric in `a` and `b`.
    pub fn shadowing_db(&self, seed: u64, a: usize, b: usize, subframe: u64) -> f64 {
        if self.shadowing_sigma_db == 0.0 {
            return 0.0;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let epoch = subframe / self.shadowing_reseed_period;
        let owner = (lo as u64) << 40 ^ (hi as u64) << 16 ^ epoch;
        let mut rng = SimRng::seed_from_u64(stream_seed(seed, Purpose::Shadowing, owner));
        let z: f64 = rng.sample(StandardNormal);
        self.shadowing_sigma_db * z
    }

    pub fn link_loss_db(&self, d: f64, seed: u64, a: usize, b: usize, subframe: u64) -> f64 {
        self.pathloss_db(d) + self.shadowing_db(seed, a, b, subframe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub noise_floor_dbm: f64,
}

/// Noise floor per subchannel; see the README for how it was chosen.
pub const DEFAULT_NOISE_FLOOR_DBM: f64 = -124.0;

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
        }
    }
}

impl NoiseConfig {
    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_floor_dbm)
    }
}

/// SINR in dB of a target against a set of interferers and the noise floor.
pub fn sinr_db(target_rx_dbm: f64, interferer_rx_dbm: &[f64], noise: &NoiseConfig) -> f64 {
    let interference: f64 = interferer_rx_dbm.iter().map(|&p| dbm_to_mw(p)).sum();
    sinr_linear_db(dbm_to_mw(target_rx_dbm), interference, noise.noise_mw())
}

fn sinr_linear_db(target_mw: f64, interference_mw: f64, noise_mw: f64) -> f64 {
    mw_to_dbm(target_mw / (interference_mw + noise_mw))
}

/// Block error rate versus SINR, piecewise linear in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlerCurve {
    points: Vec<(f64, f64)>,
}

pub const CURVE_MIN_SINR_DB: f64 = -10.0;
pub const CURVE_MAX_SINR_DB: f64 = 30.0;

impl BlerCurve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() < 2 {
            return Err(Error::config("decode curve needs at least two points"));
        }
        for w in points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::config(format!("decode curve repeats SINR {} dB", w[0].0)));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::config(format!(
                    "decode curve must be nonincreasing in SINR (rises at {} dB)",
                    w[1].0
                )));
            }
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.1) || !p.0.is_finite()) {
            return Err(Error::config("decode curve probabilities must lie in [0, 1]"));
        }
        if points[0].0 > CURVE_MIN_SINR_DB || points[points.len() - 1].0 < CURVE_MAX_SINR_DB {
            return Err(Error::config(format!(
                "decode curve must cover [{CURVE_MIN_SINR_DB}, {CURVE_MAX_SINR_DB}] dB"
            )));
        }
        Ok(Self { points })
    }

    /// Logistic waterfall: 50% errors at `center_db`, one decade of BLER per
    /// `db_per_decade` above it. Sampled every 0.1 dB over the covered range.
    pub fn logistic(center_db: f64, db_per_decade: f64) -> Self {
        let steps = ((CURVE_MAX_SINR_DB - CURVE_MIN_SINR_DB) * 10.0).round() as usize;
        let points = (0..=steps)
            .map(|i| {
                let s = CURVE_MIN_SINR_DB + i as f64 * 0.1;
                let b = 1.0 / (1.0 + 10f64.powf((s - center_db) / db_per_decade));
                let b = if b < 1e-12 {
                    0.0
                } else if b > 1.0 - 1e-12 {
                    1.0
                } else {
                    b
                };
                (s, b)
            })
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn bler_at(&self, sinr_db: f64) -> f64 {
        let pts = &self.points;
        if sinr_db <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if sinr_db >= last.0 || sinr_db.is_nan() {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= sinr_db);
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        y0 + (y1 - y0) * (sinr_db - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeModel {
    curves: BTreeMap<u8, BlerCurve>,
}

/// BLER slope of the synthesized default curves.
pub const DEFAULT_DB_PER_DECADE: f64 = 1.0;

impl DecodeModel {
    pub fn from_mcs_table(table: &[McsProfile]) -> Self {
        let curves = table
            .iter()
            .map(|p| {
                (
                    p.mcs_index,
                    BlerCurve::logistic(p.decode_sinr_threshold_db, DEFAULT_DB_PER_DECADE),
                )
            })
            .collect();
        Self { curves }
    }

    pub fn insert(&mut self, mcs: u8, curve: BlerCurve) {
        self.curves.insert(mcs, curve);
    }

    pub fn curve(&self, mcs: u8) -> Result<&BlerCurve> {
        self.curves.get(&mcs).ok_or(Error::MissingCurve(mcs))
    }

    /// Parses rows of `mcs, sinr_db, bler`; `#` starts a comment.
    pub fn parse_curve_file(text: &str) -> Result<Self> {
        let mut raw: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::config(format!("curve file line {}: expected `mcs, sinr_db, bler`", lineno + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            let mcs: u8 = fields[0].parse().map_err(|_| bad())?;
            let sinr: f64 = fields[1].parse().map_err(|_| bad())?;
            let bler: f64 = fields[2].parse().map_err(|_| bad())?;
            raw.entry(mcs).or_default().push((sinr, bler));
        }
        let mut model = DecodeModel::default();
        for (mcs, pts) in raw {
            let curve = BlerCurve::new(pts)
                .map_err(|e| Error::config(format!("curve file, MCS {mcs}: {e}")))?;
            model.insert(mcs, curve);
        }
        Ok(model)
    }

    pub fn load_curve_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read curve file {}: {e}", path.display()))
        })?;
        Self::parse_curve_file(&text)
    }
}

/// True iff the block decodes: `rng_draw` is compared against the
/// interpolated BLER at `sinr`.
pub fn decode(sinr: f64, profile: &McsProfile, model: &DecodeModel, rng_draw: f64) -> Result<bool> {
    Ok(decode_with(sinr, model.curve(profile.mcs_index)?, rng_draw))
}

fn decode_with(sinr: f64, curve: &BlerCurve, rng_draw: f64) -> bool {
    rng_draw >= curve.bler_at(sinr)
}

#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub pathloss: PathlossModel,
    pub noise: NoiseConfig,
    pub decode: DecodeModel,
    pub sci_mcs: u8,
}

/// Reservation announced in an SCI: the period and how many further
/// periods the transmitter intends to use the resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SciReservation {
    pub period: u64,
    pub remaining: u32,
}

/// One packet copy on air in the observed subframe.
#[derive(Debug, Clone, Copy)]
pub struct Emission {
    pub tx: usize,
    pub alloc: Allocation,
    pub tb_mcs: u8,
    pub reservation: SciReservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedSci {
    pub tx: usize,
    pub rsrp_dbm: f64,
    pub alloc: Allocation,
    pub reservation: SciReservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxObservation {
    pub resource: ResourceIndex,
    pub s_rssi_mw: f64,
    /// SCIs decoded whose allocation starts on this subchannel.
    pub decoded_scis: Vec<DecodedSci>,
}

impl RxObservation {
    pub fn s_rssi_dbm(&self) -> f64 {
        mw_to_dbm(self.s_rssi_mw)
    }
}

/// What one receiver made of one emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkOutcome {
    pub rx_dbm: f64,
    pub sci_sinr_db: f64,
    pub sci_decoded: bool,
    pub tb_sinr_db: f64,
    pub tb_decoded: bool,
    /// Other emissions overlapping this one's subchannels.
    pub co_channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubframeObservation {
    pub resources: Vec<RxObservation>,
    /// Parallel to the emissions passed to [`observe`].
    pub links: Vec<LinkOutcome>,
}

/// Observes one subframe from a non-transmitting receiver.
///
/// `rx_dbm[i]` is the power of `emissions[i]` at this receiver. Two uniform
/// draws are consumed per emission (SCI then TB) regardless of outcome.
pub fn observe<R: Rng>(
    subframe: u64,
    n_subchannels: u32,
    emissions: &[Emission],
    rx_dbm: &[f64],
    channel: &ChannelModel,
    rng: &mut R,
) -> Result<SubframeObservation> {
    debug_assert_eq!(emissions.len(), rx_dbm.len());
    let noise_mw = channel.noise.noise_mw();
    let rx_mw: Vec<f64> = rx_dbm.iter().map(|&p| dbm_to_mw(p)).collect();

    let mut resources: Vec<RxObservation> = (0..n_subchannels)
        .map(|c| RxObservation {
            resource: ResourceIndex {
                subframe,
                subchannel: c,
            },
            s_rssi_mw: noise_mw,
            decoded_scis: Vec::new(),
        })
        .collect();
    for (e, &p) in emissions.iter().zip(&rx_mw) {
        for c in e.alloc.start..e.alloc.end().min(n_subchannels) {
            resources[c as usize].s_rssi_mw += p;
        }
    }

    let sci_curve = channel.decode.curve(channel.sci_mcs)?;
    let mut links = Vec::with_capacity(emissions.len());
    for (i, e) in emissions.iter().enumerate() {
        let mut sci_interference = 0.0;
        let mut tb_interference = 0.0;
        let mut co_channel = 0;
        for (j, other) in emissions.iter().enumerate() {
            if i == j || !other.alloc.overlaps(&e.alloc) {
                continue;
            }
            co_channel += 1;
            if other.alloc.contains(e.alloc.start) {
                sci_interference += rx_mw[j];
            }
            let shared = e.alloc.end().min(other.alloc.end()) - e.alloc.start.max(other.alloc.start);
            tb_interference += rx_mw[j] * shared as f64;
        }
        tb_interference /= e.alloc.len as f64;

        let sci_sinr_db = sinr_linear_db(rx_mw[i], sci_interference, noise_mw);
        let tb_sinr_db = sinr_linear_db(rx_mw[i], tb_interference, noise_mw);
        let sci_draw: f64 = rng.random();
        let tb_draw: f64 = rng.random();
        let sci_decoded = decode_with(sci_sinr_db, sci_curve, sci_draw);
        let tb_decoded =
            sci_decoded && decode_with(tb_sinr_db, channel.decode.curve(e.tb_mcs)?, tb_draw);
        if sci_decoded {
            resources[e.alloc.start as usize].decoded_scis.push(DecodedSci {
                tx: e.tx,
                rsrp_dbm: rx_dbm[i],
                alloc: e.alloc,
                reservation: e.reservation,
            });
        }
        links.push(LinkOutcome {
            rx_dbm: rx_dbm[i],
            sci_sinr_db,
            sci_decoded,
            tb_sinr_db,
            tb_decoded,
            co_channel,
        });
    }
    Ok(SubframeObservation { resources, links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::default_mcs_table;
    use rand::SeedableRng;

    fn no_shadow() -> PathlossModel {
        PathlossModel {
            shadowing_sigma_db: 0.0,
            ..PathlossModel::default()
        }
    }

    fn channel() -> ChannelModel {
        ChannelModel {
            pathloss: no_shadow(),
            noise: NoiseConfig::default(),
            decode: DecodeModel::from_mcs_table(&default_mcs_table()),
            sci_mcs: 2,
        }
    }

    fn emission(tx: usize, start: u32, len: u32) -> Emission {
        Emission {
            tx,
            alloc: Allocation::new(start, len),
            tb_mcs: 11,
            reservation: SciReservation {
                period: 100,
                remaining: 5,
            },
        }
    }

    #[test]
    fn pathloss_reference_points() {
        let m = no_shadow();
        assert_eq!(m.pathloss_db(1.0), 47.0);
        assert!((m.pathloss_db(10.0) - 67.0).abs() < 1e-12);
        assert_eq!(m.pathloss_db(0.2), 47.0);
    }

    #[test]
    fn sinr_examples() {
        let noise = NoiseConfig {
            noise_floor_dbm: -92.0,
        };
        assert!((sinr_db(-80.0, &[], &noise) - 12.0).abs() < 1e-9);
        let quiet = NoiseConfig {
            noise_floor_dbm: -200.0,
        };
        assert!(sinr_db(-80.0, &[-80.0], &quiet).abs() < 1e-9);
    }

    #[test]
    fn decode_extremes() {
        let table = default_mcs_table();
        let model = DecodeModel::from_mcs_table(&table);
        let p = &table[2];
        for draw in [0.0, 0.3, 0.999_999] {
            assert!(decode(60.0, p, &model, draw).unwrap());
            assert!(!decode(-40.0, p, &model, draw).unwrap());
        }
        let missing = McsProfile {
            mcs_index: 7,
            ..p.clone()
        };
        assert!(matches!(decode(0.0, &missing, &model, 0.5), Err(Error::MissingCurve(7))));
    }

    #[test]
    fn half_bler_point_decodes_half_the_time() {
        let table = default_mcs_table();
        let model = DecodeModel::from_mcs_table(&table);
        let p = &table[1];
        let center = p.decode_sinr_threshold_db;
        assert!((model.curve(5).unwrap().bler_at(center) - 0.5).abs() < 1e-9);
        let mut rng = SimRng::seed_from_u64(11);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| decode(center, p, &model, rng.random()).unwrap())
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn curve_file_roundtrip_and_validation() {
        let text = "# mcs, sinr, bler\n11, -10, 1\n11, 10, 0.5\n11, 30, 0\n";
        let m = DecodeModel::parse_curve_file(text).unwrap();
        assert!((m.curve(11).unwrap().bler_at(0.0) - 0.75).abs() < 1e-12);
        assert!(DecodeModel::parse_curve_file("11, -10, 0.2\n11, 30, 0.5\n").is_err());
        assert!(DecodeModel::parse_curve_file("11, 0, 1\n11, 30, 0\n").is_err());
        assert!(DecodeModel::parse_curve_file("11, -10\n").is_err());
    }

    #[test]
    fn empty_channel_observation() {
        let ch = channel();
        let mut rng = SimRng::seed_from_u64(1);
        let obs = observe(7, 10, &[], &[], &ch, &mut rng).unwrap();
        assert_eq!(obs.resources.len(), 10);
        for r in &obs.resources {
            assert_eq!(r.s_rssi_mw, ch.noise.noise_mw());
            assert!(r.decoded_scis.is_empty());
        }
    }

    #[test]
    fn lone_transmitter_decodes_with_rsrp_equal_to_rx_power() {
        let ch = channel();
        let mut rng = SimRng::seed_from_u64(2);
        let obs = observe(0, 10, &[emission(3, 4, 2)], &[-70.0], &ch, &mut rng).unwrap();
        let sci = &obs.resources[4].decoded_scis;
        assert_eq!(sci.len(), 1);
        assert_eq!(sci[0].rsrp_dbm, -70.0);
        assert!(obs.links[0].tb_decoded);
        assert_eq!(obs.links[0].co_channel, 0);
        assert!(obs.resources[4].s_rssi_dbm() > -70.0);
    }

    #[test]
    fn equal_power_collision_is_near_zero_db() {
        let ch = channel();
        let mut rng = SimRng::seed_from_u64(3);
        let obs = observe(
            0,
            10,
            &[emission(0, 2, 2), emission(1, 2, 2)],
            &[-70.0, -70.0],
            &ch,
            &mut rng,
        )
        .unwrap();
        for l in &obs.links {
            assert!(l.sci_sinr_db.abs() < 1e-3);
            assert!(l.tb_sinr_db.abs() < 1e-3);
            assert_eq!(l.co_channel, 1);
        }
    }

    #[test]
    fn equal_power_collision_decode_rate_matches_curve() {
        // At 0 dB the SCI (MCS 2, 3 dB center) decodes with probability
        // 1 - bler(0) and the TB (MCS 5 here) with 1 - bler(0) of its curve.
        let mut ch = channel();
        ch.noise.noise_floor_dbm = -250.0;
        let sci_ok = 1.0 - ch.decode.curve(2).unwrap().bler_at(0.0);
        let tb_ok = 1.0 - ch.decode.curve(5).unwrap().bler_at(0.0);
        let mut rng = SimRng::seed_from_u64(4);
        let mut e = [emission(0, 0, 3), emission(1, 0, 3)];
        e[0].tb_mcs = 5;
        e[1].tb_mcs = 5;
        let n = 20_000;
        let (mut sci, mut tb) = (0usize, 0usize);
        for _ in 0..n {
            let obs = observe(0, 10, &e, &[-60.0, -60.0], &ch, &mut rng).unwrap();
            sci += obs.links[0].sci_decoded as usize;
            tb += obs.links[0].tb_decoded as usize;
        }
        let sci_rate = sci as f64 / n as f64;
        let tb_rate = tb as f64 / n as f64;
        assert!((sci_rate - sci_ok).abs() < 0.015, "{sci_rate} vs {sci_ok}");
        assert!((tb_rate - sci_ok * tb_ok).abs() < 0.015, "{tb_rate} vs {}", sci_ok * tb_ok);
    }

    #[test]
    fn shadowing_is_symmetric_and_held() {
        let m = PathlossModel::default();
        let a = m.shadowing_db(9, 3, 8, 120);
        assert_eq!(a, m.shadowing_db(9, 8, 3, 150));
        assert_ne!(a, m.shadowing_db(9, 3, 8, 200));
        assert_eq!(no_shadow().shadowing_db(9, 3, 8, 120), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pathloss_monotone(d1 in 0.0f64..5000.0, d2 in 0.0f64..5000.0) {
                let m = no_shadow();
                let (lo, hi) = (d1.min(d2), d1.max(d2));
                prop_assert!(m.pathloss_db(lo) <= m.pathloss_db(hi) + 1e-12);
            }

            #[test]
            fn interference_never_helps(
                target in -120.0f64..-30.0,
                interf in prop::collection::vec(-130.0f64..-30.0, 0..6),
                extra in -130.0f64..-30.0,
                noise in -130.0f64..-80.0,
            ) {
                let n = NoiseConfig { noise_floor_dbm: noise };
                let base = sinr_db(target, &interf, &n);
                let mut more = interf.clone();
                more.push(extra);
                prop_assert!(sinr_db(target, &more, &n) <= base);
                let silent = NoiseConfig { noise_floor_dbm: -400.0 };
                prop_assert!(sinr_db(target, &interf, &silent) >= base);
            }

            #[test]
            fn common_power_shift_is_invisible_without_noise(
                target in -100.0f64..-40.0,
                interf in prop::collection::vec(-100.0f64..-40.0, 1..5),
                delta in -20.0f64..20.0,
            ) {
                let n = NoiseConfig { noise_floor_dbm: -400.0 };
                let shifted: Vec<f64> = interf.iter().map(|p| p + delta).collect();
                let a = sinr_db(target, &interf, &n);
                let b = sinr_db(target + delta, &shifted, &n);
                prop_assert!((a - b).abs() < 1e-9);
            }

            #[test]
            fn observation_conserves_power(
                txs in prop::collection::vec((0u32..8, 1u32..3, -110.0f64..-40.0), 0..6),
                seed in any::<u64>(),
            ) {
                let ch = channel();
                let emissions: Vec<Emission> = txs.iter().enumerate()
                    .map(|(i, &(s, l, _))| emission(i, s, l)).collect();
                let rx: Vec<f64> = txs.iter().map(|t| t.2).collect();
                let mut rng = SimRng::seed_from_u64(seed);
                let obs = observe(0, 10, &emissions, &rx, &ch, &mut rng).unwrap();
                let noise = ch.noise.noise_mw();
                let attributed: f64 = obs.resources.iter().map(|r| r.s_rssi_mw - noise).sum();
                let emitted: f64 = emissions.iter().zip(&rx)
                    .map(|(e, &p)| dbm_to_mw(p) * e.alloc.len as f64).sum();
                prop_assert!((attributed - emitted).abs() <= 1e-9 * emitted.max(1e-30) + 1e-24);
                for r in &obs.resources {
                    for s in &r.decoded_scis {
                        prop_assert!(dbm_to_mw(s.rsrp_dbm) <= r.s_rssi_mw);
                    }
                }
            }
        }
    }
}
