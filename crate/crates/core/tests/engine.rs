mod common;

use std::collections::{BTreeMap, BTreeSet};

use cv2x_core::congestion::PolicyKind;
use cv2x_core::grid::MessageClass;
use cv2x_core::metrics::{self, LossTag, TraceRow};
use cv2x_core::{run, RunConfig};

fn pair_at(distance: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.road.length_m = 10_000.0;
    cfg.road.wraparound = false;
    cfg.road.speed = 0.0;
    cfg.road.positions = Some(vec![0.0, distance]);
    cfg.traffic.sim_time_s = 2.0;
    cfg.traffic.hpm_node_fraction = 0.0;
    cfg
}

fn traced(mut cfg: RunConfig) -> RunConfig {
    cfg.metrics.trace = true;
    cfg
}

#[test]
fn two_vehicles_one_km_apart_always_decode() {
    let store = run(&pair_at(1000.0)).unwrap();
    let last = store.binning.n_bins() - 1;
    let c = store.counts(MessageClass::Bsm, last);
    // 10 packets per second each way after the 1 s warm-up.
    assert_eq!(c.opportunities, 20);
    assert_eq!(c.successes, 20);
    assert_eq!(metrics::prr(&store, MessageClass::Bsm, last), Some(1.0));
    assert_eq!(store.opportunities(), 20);
}

#[test]
fn lone_vehicle_runs_without_opportunities() {
    let mut cfg = pair_at(0.0);
    cfg.road.positions = Some(vec![0.0]);
    let store = run(&cfg).unwrap();
    assert_eq!(store.opportunities(), 0);
    assert_eq!(store.sci_attempts, 0);
    assert!(store.cbr_series[&0].iter().all(|&(_, c)| c == 0.0));
}

#[test]
fn runs_are_reproducible() {
    let cfg = common::desk(20, 4);
    let a = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 5;
    assert_ne!(a, serde_json::to_string(&run(&other).unwrap()).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = traced(common::desk(20, 2));
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| serde_json::to_string(&run(&cfg).unwrap()).unwrap())
    };
    assert_eq!(in_pool(1), in_pool(4));
}

struct Trace {
    /// packet -> subframes its copies were on air.
    copies: BTreeMap<u64, Vec<(u64, u8, MessageClass, f64)>>,
    /// UE -> subframes it transmitted in.
    busy: BTreeMap<usize, BTreeSet<u64>>,
    rx: Vec<TraceRow>,
}

fn split(rows: &[TraceRow]) -> Trace {
    let mut t = Trace {
        copies: BTreeMap::new(),
        busy: BTreeMap::new(),
        rx: Vec::new(),
    };
    for row in rows {
        match row {
            TraceRow::Tx {
                subframe,
                tx,
                packet,
                class,
                harq,
                power_dbm,
                ..
            } => {
                t.copies.entry(*packet).or_default().push((*subframe, *harq, *class, *power_dbm));
                t.busy.entry(*tx).or_default().insert(*subframe);
            }
            TraceRow::Rx { .. } => t.rx.push(row.clone()),
        }
    }
    t
}

#[test]
fn trace_respects_half_duplex_and_harq_limits() {
    let store = run(&traced(common::desk(40, 3))).unwrap();
    let t = split(store.trace.as_ref().unwrap());
    assert!(!t.copies.is_empty());
    for copies in t.copies.values() {
        assert!(copies.len() <= 2);
        if let [a, b] = copies.as_slice() {
            assert_eq!((a.1, b.1), (0, 1));
            assert!((1..=15).contains(&(b.0 - a.0)), "{copies:?}");
        }
    }
    let mut half_duplex = 0;
    for row in &t.rx {
        let TraceRow::Rx { packet, rx, tag, first_success, .. } = row else { unreachable!() };
        let on_air: Vec<u64> = t.copies[packet].iter().map(|c| c.0).collect();
        let busy = t.busy.get(rx).cloned().unwrap_or_default();
        let deaf = on_air.iter().all(|s| busy.contains(s));
        assert_eq!(deaf, *tag == Some(LossTag::HalfDuplex), "{row:?}");
        if let Some(at) = first_success {
            assert!(on_air.contains(at) && !busy.contains(at));
        }
        half_duplex += deaf as usize;
    }
    assert!(half_duplex > 0);
}

#[test]
fn adaptive_powers_stay_in_range() {
    let mut cfg = traced(common::desk(80, 1));
    cfg.policy.kind = PolicyKind::Adaptive;
    cfg.traffic.hpm_node_fraction = 0.05;
    let store = run(&cfg).unwrap();
    let t = split(store.trace.as_ref().unwrap());
    let mut below_max = 0;
    let mut hpm = 0;
    for copies in t.copies.values() {
        for &(_, _, class, p) in copies {
            match class {
                MessageClass::Hpm => {
                    hpm += 1;
                    assert_eq!(p, 20.0);
                }
                MessageClass::Bsm => {
                    assert!((0.0..=20.0).contains(&p));
                    below_max += (p < 20.0) as usize;
                }
            }
        }
        // Both copies of a packet carry the same power.
        assert!(copies.iter().all(|c| c.3 == copies[0].3));
    }
    assert!(hpm > 0 && below_max > 0);
}

#[test]
fn thresholds_lie_on_the_escalation_ladder() {
    let mut cfg = common::with_period(common::desk(60, 1), 20);
    cfg.traffic.sim_time_s = 3.0;
    cfg.metrics.sps_audit = true;
    let store = run(&cfg).unwrap();
    let on_ladder = |th: f64| {
        let k = ((th + 84.18) / 3.0).round();
        k >= 0.0 && th == -84.18 + 3.0 * k
    };
    let mut n = 0;
    for series in store.threshold_series.values() {
        for &(_, th) in series {
            assert!(on_ladder(th), "{th}");
            n += 1;
        }
    }
    assert!(n > 0);
    let audit = store.sps_audit.unwrap();
    assert!(audit.reselections.iter().any(|r| r.escalations > 0));
    for r in &audit.reselections {
        assert!(on_ladder(r.threshold_dbm));
        assert!(r.retained as f64 >= 0.2 * r.total as f64 - 1e-9 || r.retained == r.after_exclusion);
    }
}

#[test]
fn losses_partition_opportunities() {
    let store = run(&common::desk(40, 6)).unwrap();
    let mut total = 0;
    for class in [MessageClass::Bsm, MessageClass::Hpm] {
        for bin in 0..store.binning.n_bins() {
            let c = store.counts(class, bin);
            assert_eq!(c.successes + c.losses(), c.opportunities);
            total += c.opportunities;
        }
    }
    assert_eq!(total, store.pair_enumerations);
    assert!(total > 0);
}

#[test]
fn selective_without_events_matches_fixed_full_power() {
    let mut fixed = traced(common::desk(40, 2));
    fixed.traffic.hpm_node_fraction = 0.0;
    let mut selective = fixed.clone();
    selective.policy.kind = PolicyKind::Selective;
    let a = run(&fixed).unwrap();
    let b = run(&selective).unwrap();
    assert_eq!(a.prr_bins, b.prr_bins);
    assert_eq!(a.cbr_series, b.cbr_series);
    assert_eq!(a.threshold_series, b.threshold_series);
    assert_eq!(a.ia_hist, b.ia_hist);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn trace_replay_reproduces_reception_metrics() {
    let mut cfg = traced(common::desk(40, 8));
    cfg.traffic.hpm_node_fraction = 0.05;
    let store = run(&cfg).unwrap();
    let rows = store.trace.clone().unwrap();
    let replayed = metrics::replay(&rows, store.meta.clone(), &cfg.metrics);
    assert_eq!(replayed.prr_bins, store.prr_bins);
    assert_eq!(replayed.ia_hist, store.ia_hist);
    assert_eq!(replayed.pair_enumerations, store.pair_enumerations);
}

#[test]
fn additive_event_flow_runs() {
    let mut cfg = traced(common::desk(20, 3));
    cfg.traffic.hpm_additive = true;
    cfg.traffic.hpm_node_fraction = 0.1;
    let store = run(&cfg).unwrap();
    let t = split(store.trace.as_ref().unwrap());
    let classes: BTreeSet<_> = t.copies.values().flatten().map(|c| c.2).collect();
    assert_eq!(classes.len(), 2);
}

#[test]
fn golden_pathloss() {
    let model = cv2x_core::channel::PathlossModel::default();
    let text = include_str!("data/pathloss_golden.csv");
    for line in text.lines().skip(1) {
        let (d, want) = line.split_once(',').unwrap();
        let (d, want): (f64, f64) = (d.parse().unwrap(), want.parse().unwrap());
        let got = model.pathloss_db(d);
        assert!((got - want).abs() < 1e-9, "{d}: {got} vs {want}");
    }
}
