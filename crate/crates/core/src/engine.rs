//! Subframe-resolution event loop.
//!
//! Each subframe runs the same phases in order: mobility, packet generation
//! (SPS decisions and power), transmission, reception and sensing, own-tx
//! marking, metrics. Per-UE randomness comes from per-UE substreams, so the
//! order in which UEs are visited inside a phase never matters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{observe, ChannelModel, Emission, LinkOutcome, SciReservation};
use crate::config::RunConfig;
use crate::congestion::{bsm_tx_power, hpm_tx_power, measure_cbr, PolicyKind};
use crate::error::{Error, Result};
use crate::grid::{lookup_mcs, n_subchannels, subchannels_needed, MessageClass, MessageKind, Resource};
use crate::mac_sps::{candidate_resources, ReselectDecision, SensingWindow, SpsState};
use crate::metrics::{LossTag, MetricsStore, ReselectionRecord, RunMeta, TraceRow};
use crate::rng::{substream, Purpose, SimRng};
use crate::scenario::{self, VehicleState};

/// One on-air copy of a packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub tx: usize,
    pub resource: Resource,
    pub class: MessageClass,
    pub harq_index: u8,
    pub packet: u64,
    pub power_dbm: f64,
    pub generated: u64,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    tx: Transmission,
    mcs: u8,
    reservation: SciReservation,
}

struct Flow {
    sps: SpsState,
    queue: Vec<Queued>,
}

struct Ue {
    window: SensingWindow,
    flows: Vec<Flow>,
    sps_rng: SimRng,
    decode_rng: SimRng,
    last_cbr_sample: Option<u64>,
}

#[derive(Debug, Clone)]
struct RxTrack {
    rx: usize,
    distance: f64,
    bin: usize,
    heard: bool,
    collided: bool,
    first_success: Option<u64>,
}

struct Packet {
    tx: usize,
    class: MessageClass,
    generated: u64,
    copies_left: u8,
    tracks: Option<Vec<RxTrack>>,
    /// Receiver id to index in `tracks`.
    slot: Vec<u32>,
}

const NO_SLOT: u32 = u32::MAX;

/// Everything a run needs that does not change between subframes.
struct Setup {
    cfg: RunConfig,
    channel: ChannelModel,
    n_sub: u32,
    bsm_subch: u32,
    hpm_subch: u32,
    warmup: u64,
    subframes: u64,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let n_sub = n_subchannels(&cfg.grid)?;
        let need = |kind: &MessageKind| subchannels_needed(kind, lookup_mcs(&cfg.mcs, kind.mcs)?, &cfg.grid);
        Ok(Self {
            channel: cfg.channel_model()?,
            n_sub,
            bsm_subch: need(&cfg.traffic.bsm)?,
            hpm_subch: need(&cfg.traffic.hpm)?,
            warmup: cfg.warmup_subframes(),
            subframes: cfg.traffic.total_subframes(),
            cfg: cfg.clone(),
        })
    }

    fn kind(&self, class: MessageClass) -> (&MessageKind, u32) {
        match class {
            MessageClass::Bsm => (&self.cfg.traffic.bsm, self.bsm_subch),
            MessageClass::Hpm => (&self.cfg.traffic.hpm, self.hpm_subch),
        }
    }
}

fn meta(cfg: &RunConfig, vehicles: &[VehicleState], warmup: u64) -> RunMeta {
    RunMeta {
        seed: cfg.seed,
        policy: cfg.policy.kind.as_str().to_string(),
        density: cfg.road.density,
        power_dbm: match cfg.policy.kind {
            PolicyKind::Fixed => cfg.policy.power_dbm,
            _ => cfg.policy.p_max_dbm,
        },
        vehicles: vehicles.len(),
        hpm_nodes: vehicles.iter().filter(|v| v.is_hpm_node).count(),
        subframes: cfg.traffic.total_subframes(),
        warmup,
        initial_threshold_dbm: cfg.sps.initial_threshold_dbm,
    }
}

/// The vehicle table a run starts from.
pub fn vehicles(cfg: &RunConfig) -> Result<Vec<VehicleState>> {
    scenario::build(&cfg.road, &cfg.traffic, cfg.seed)
}

/// Runs one simulation to completion.
pub fn run(cfg: &RunConfig) -> Result<MetricsStore> {
    let setup = Setup::new(cfg)?;
    let cfg = &setup.cfg;
    let mut vehicles = vehicles(cfg)?;
    let n = vehicles.len();
    let noise_mw = setup.channel.noise.noise_mw();
    let n_flows = if cfg.traffic.hpm_additive { 2 } else { 1 };
    let mut ues: Vec<Ue> = (0..n)
        .map(|i| Ue {
            window: SensingWindow::new(cfg.sps.sensing_window_len, setup.n_sub, noise_mw),
            flows: (0..n_flows)
                .map(|_| Flow {
                    sps: SpsState::new(&cfg.sps),
                    queue: Vec::new(),
                })
                .collect(),
            sps_rng: substream(cfg.seed, Purpose::Sps, i as u64),
            decode_rng: substream(cfg.seed, Purpose::Decode, i as u64),
            last_cbr_sample: None,
        })
        .collect();
    let mut store = MetricsStore::new(meta(cfg, &vehicles, setup.warmup), &cfg.metrics);
    let policy = cfg.policy.policy();
    let binning = store.binning;
    let mut packets: BTreeMap<u64, Packet> = BTreeMap::new();
    let mut next_packet: u64 = 0;
    let mut transmitting = vec![false; n];
    // Link loss is constant between mobility ticks and shadowing epochs.
    let mut loss = vec![0.0f64; n * n];
    let mut loss_key: Option<(u64, u64)> = None;

    for now in 0..setup.subframes {
        // (1) mobility
        if now > 0 && now % 100 == 0 {
            scenario::advance(&mut vehicles, 100.0, &cfg.road);
        }

        let key = (now / 100, now / cfg.channel.pathloss.shadowing_reseed_period);
        if loss_key != Some(key) {
            fill_loss(&mut loss, &vehicles, cfg, &setup.channel, now);
            loss_key = Some(key);
        }

        // (2) packet generation
        let hpm_active = vehicles
            .iter()
            .any(|v| scenario::hpm_event_active(v, now, &cfg.traffic));
        for (i, v) in vehicles.iter().enumerate() {
            let mut due: Vec<(usize, MessageClass)> = Vec::new();
            if let Some(class) = scenario::message_schedule(v, now, &cfg.traffic) {
                due.push((0, class));
            }
            if cfg.traffic.hpm_additive
                && scenario::packet_due(v, now, &cfg.traffic)
                && scenario::hpm_event_active(v, now, &cfg.traffic)
            {
                due.push((1, MessageClass::Hpm));
            }
            for (f, class) in due {
                let ue = &mut ues[i];
                let (kind, needed) = setup.kind(class);
                let flow = &mut ue.flows[f];
                let decision = flow.sps.needs_reselection(needed, now, &cfg.sps, &mut ue.sps_rng);
                if let ReselectDecision::Kept(v) = decision {
                    if let Some(a) = store.sps_audit.as_mut() {
                        a.rearms.push(v);
                    }
                }
                if decision.reselect() {
                    let cs = candidate_resources(&ue.window, now, needed, &cfg.sps);
                    let pair = flow
                        .sps
                        .select_pair(&cs.retained, cfg.sps.p_step, &cfg.sps, &mut ue.sps_rng)
                        .ok_or_else(|| Error::Runtime(format!("UE {i}: no candidate resources at {now}")))?;
                    flow.sps.effective_threshold_dbm = cs.threshold_dbm;
                    if now >= setup.warmup {
                        store.threshold_series.entry(i).or_default().push((now, cs.threshold_dbm));
                    }
                    if let Some(a) = store.sps_audit.as_mut() {
                        a.rearms.push(flow.sps.slrrc);
                        a.reselections.push(ReselectionRecord {
                            ue: i,
                            subframe: now,
                            total: cs.total,
                            after_exclusion: cs.after_exclusion,
                            retained: cs.retained.len(),
                            threshold_dbm: cs.threshold_dbm,
                            escalations: cs.escalations,
                            harq_gap: pair.gap(),
                        });
                    }
                }
                let reservation = flow.sps.reserved.as_mut().expect("reservation after selection");
                let occasion = reservation.take_occasion();
                flow.sps.on_transmit();
                let power_dbm = match class {
                    MessageClass::Bsm => {
                        let cbr = measure_cbr(&ue.window, now, &cfg.cbr).unwrap_or(0.0);
                        let sample_due = ue
                            .last_cbr_sample
                            .is_none_or(|t| now - t >= cfg.metrics.cbr_decimation);
                        if now >= setup.warmup && sample_due {
                            store.cbr_series.entry(i).or_default().push((now, cbr));
                            ue.last_cbr_sample = Some(now);
                        }
                        bsm_tx_power(&policy, cbr, hpm_active)
                    }
                    MessageClass::Hpm => hpm_tx_power(&policy),
                };
                let packet = next_packet;
                next_packet += 1;
                let sci = SciReservation {
                    period: cfg.sps.p_step,
                    remaining: flow.sps.slrrc,
                };
                let copies = [Some(occasion.initial), occasion.redundant];
                let mut count = 0;
                for (h, res) in copies.iter().enumerate() {
                    if let Some(resource) = res {
                        count += 1;
                        flow.queue.push(Queued {
                            tx: Transmission {
                                tx: i,
                                resource: *resource,
                                class,
                                harq_index: h as u8,
                                packet,
                                power_dbm,
                                generated: now,
                            },
                            mcs: kind.mcs,
                            reservation: sci,
                        });
                    }
                }
                packets.insert(
                    packet,
                    Packet {
                        tx: i,
                        class,
                        generated: now,
                        copies_left: count,
                        tracks: None,
                        slot: Vec::new(),
                    },
                );
            }
        }

        // (3) materialize this subframe's transmissions
        let mut on_air: Vec<Queued> = Vec::new();
        for ue in ues.iter_mut() {
            for flow in ue.flows.iter_mut() {
                flow.queue.retain(|q| {
                    if q.tx.resource.subframe == now {
                        on_air.push(*q);
                        false
                    } else {
                        debug_assert!(q.tx.resource.subframe > now);
                        true
                    }
                });
            }
        }
        transmitting.iter_mut().for_each(|t| *t = false);
        for q in &on_air {
            transmitting[q.tx.tx] = true;
            let p = packets.get_mut(&q.tx.packet).expect("packet registered");
            if p.tracks.is_none() {
                let mut tracks = Vec::new();
                let mut slot = vec![NO_SLOT; n];
                for (r, v) in vehicles.iter().enumerate() {
                    if r == p.tx {
                        continue;
                    }
                    let d = cfg.road.distance(vehicles[p.tx].position, v.position);
                    if let Some(bin) = binning.bin_of(d) {
                        slot[r] = tracks.len() as u32;
                        tracks.push(RxTrack {
                            rx: r,
                            distance: d,
                            bin,
                            heard: false,
                            collided: false,
                            first_success: None,
                        });
                    }
                }
                p.tracks = Some(tracks);
                p.slot = slot;
            }
            if let Some(rows) = store.trace.as_mut() {
                rows.push(TraceRow::Tx {
                    subframe: now,
                    tx: q.tx.tx,
                    packet: q.tx.packet,
                    class: q.tx.class,
                    harq: q.tx.harq_index,
                    start: q.tx.resource.alloc.start,
                    len: q.tx.resource.alloc.len,
                    power_dbm: q.tx.power_dbm,
                });
            }
        }
        let emissions: Vec<Emission> = on_air
            .iter()
            .map(|q| Emission {
                tx: q.tx.tx,
                alloc: q.tx.resource.alloc,
                tb_mcs: q.mcs,
                reservation: q.reservation,
            })
            .collect();

        // (4) reception and sensing at every non-transmitting UE
        let outcomes: Vec<(usize, Vec<LinkOutcome>)> = ues
            .par_iter_mut()
            .enumerate()
            .filter(|(r, _)| !transmitting[*r])
            .map(|(r, ue)| -> Result<(usize, Vec<LinkOutcome>)> {
                let rx_dbm: Vec<f64> = on_air
                    .iter()
                    .map(|q| q.tx.power_dbm - loss[q.tx.tx * n + r])
                    .collect();
                let obs = observe(now, setup.n_sub, &emissions, &rx_dbm, &setup.channel, &mut ue.decode_rng)?;
                ue.window.record(now, &obs.resources);
                Ok((r, obs.links))
            })
            .collect::<Result<_>>()?;

        // (5) half-duplex: transmitters sensed nothing
        for (r, ue) in ues.iter_mut().enumerate() {
            if transmitting[r] {
                ue.window.record_own_tx(now);
            }
        }

        // (6) metrics
        for (r, links) in outcomes {
            for (q, link) in on_air.iter().zip(links) {
                let p = packets.get_mut(&q.tx.packet).expect("packet registered");
                let s = p.slot[r];
                if s == NO_SLOT {
                    continue;
                }
                if now >= setup.warmup {
                    store.record_sci(link.sci_decoded, link.rx_dbm);
                }
                let t = &mut p.tracks.as_mut().expect("tracks built")[s as usize];
                t.heard = true;
                if link.co_channel > 0 {
                    t.collided = true;
                }
                if link.tb_decoded && t.first_success.is_none() {
                    t.first_success = Some(now);
                    store.record_ia_update(p.tx, r, t.bin, now, p.generated);
                }
            }
        }
        for q in &on_air {
            let p = packets.get_mut(&q.tx.packet).expect("packet registered");
            p.copies_left -= 1;
            if p.copies_left == 0 {
                let p = packets.remove(&q.tx.packet).expect("packet registered");
                finalize(&mut store, q.tx.packet, p, setup.warmup);
            }
        }
    }
    // Packets cut off by the end of the run count with the copies they got.
    for (id, p) in std::mem::take(&mut packets) {
        if p.tracks.is_some() {
            finalize(&mut store, id, p, setup.warmup);
        }
    }
    store.finish(setup.subframes);
    Ok(store)
}

fn fill_loss(loss: &mut [f64], vehicles: &[VehicleState], cfg: &RunConfig, channel: &ChannelModel, now: u64) {
    let n = vehicles.len();
    for a in 0..n {
        for b in a + 1..n {
            let d = cfg.road.distance(vehicles[a].position, vehicles[b].position);
            let l = channel.pathloss.link_loss_db(d, cfg.seed, a, b, now);
            loss[a * n + b] = l;
            loss[b * n + a] = l;
        }
    }
}

fn finalize(store: &mut MetricsStore, id: u64, p: Packet, warmup: u64) {
    for t in p.tracks.unwrap_or_default() {
        let tag = match (t.first_success, t.heard, t.collided) {
            (Some(_), _, _) => None,
            (None, false, _) => Some(LossTag::HalfDuplex),
            (None, true, true) => Some(LossTag::Collision),
            (None, true, false) => Some(LossTag::Sinr),
        };
        if p.generated >= warmup {
            store.record_opportunity(p.class, t.bin, tag);
        }
        if let Some(rows) = store.trace.as_mut() {
            rows.push(TraceRow::Rx {
                packet: id,
                tx: p.tx,
                rx: t.rx,
                class: p.class,
                distance_m: t.distance,
                generated: p.generated,
                first_success: t.first_success,
                tag,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TxPowers,
    Densities,
    Policies,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::TxPowers => "tx_powers",
            SweepAxis::Densities => "densities",
            SweepAxis::Policies => "policies",
        }
    }
}

/// One configuration per sweep value; run `k` gets seed `base.seed ^ k`.
pub fn sweep_configs(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<RunConfig>> {
    if values.is_empty() {
        return Err(Error::config("sweep: no values given"));
    }
    values
        .iter()
        .enumerate()
        .map(|(k, raw)| {
            let mut cfg = base.clone();
            cfg.seed = base.seed ^ k as u64;
            let num = || {
                raw.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("sweep {}: `{raw}` is not a number", axis.as_str())))
            };
            match axis {
                SweepAxis::TxPowers => {
                    cfg.policy.kind = PolicyKind::Fixed;
                    cfg.policy.power_dbm = num()?;
                }
                SweepAxis::Densities => cfg.road.density = num()?,
                SweepAxis::Policies => {
                    cfg.policy.kind = match raw.trim() {
                        "fixed" => PolicyKind::Fixed,
                        "adaptive" => PolicyKind::Adaptive,
                        "selective" => PolicyKind::Selective,
                        other => return Err(Error::config(format!("sweep policies: unknown policy `{other}`"))),
                    }
                }
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// Runs `configs` on up to `jobs` threads. Results keep the input order and
/// a failing run does not stop the others.
pub fn run_many(configs: &[RunConfig], jobs: usize) -> Vec<Result<MetricsStore>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| configs.par_iter().map(run).collect())
}

pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[String], jobs: usize) -> Result<Vec<Result<MetricsStore>>> {
    Ok(run_many(&sweep_configs(base, axis, values)?, jobs))
}
