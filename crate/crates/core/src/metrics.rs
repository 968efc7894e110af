//! Per-run accumulators and the reports derived from them.
//!
//! Reception is scored per (packet, potential receiver) pair: a packet counts
//! once for every receiver within `max_range_m` of its transmitter, and is a
//! success if either HARQ copy's transport block decoded there.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::MessageClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bin_width_m: f64,
    pub max_range_m: f64,
    /// Subframes excluded from metrics; defaults to the longer of the
    /// sensing window and the CBR window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_subframes: Option<u64>,
    /// Minimum spacing between recorded CBR samples of one UE.
    pub cbr_decimation: u64,
    /// Keep the per-pair information-age update log.
    pub ia_traces: bool,
    /// Keep a full transmission/reception event trace.
    pub trace: bool,
    /// Keep a record of every SPS reselection.
    pub sps_audit: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bin_width_m: 50.0,
            max_range_m: 1000.0,
            warmup_subframes: None,
            cbr_decimation: 100,
            ia_traces: false,
            trace: false,
            sps_audit: false,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.binning().validate()?;
        if self.cbr_decimation == 0 {
            return Err(Error::config("metrics.cbr_decimation must be at least 1"));
        }
        Ok(())
    }

    pub fn binning(&self) -> DistanceBinning {
        DistanceBinning {
            bin_width_m: self.bin_width_m,
            max_range_m: self.max_range_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBinning {
    pub bin_width_m: f64,
    pub max_range_m: f64,
}

impl DistanceBinning {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_m > 0.0 && self.max_range_m > 0.0) {
            return Err(Error::config("metrics: bin width and max range must be positive"));
        }
        let ratio = self.max_range_m / self.bin_width_m;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config("metrics.bin_width_m must divide metrics.max_range_m"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.max_range_m / self.bin_width_m).round() as usize
    }

    /// Bin of a link distance; `None` beyond `max_range_m`. A link exactly
    /// at `max_range_m` falls in the last bin.
    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if !(d >= 0.0) || d > self.max_range_m {
            return None;
        }
        Some(((d / self.bin_width_m).floor() as usize).min(self.n_bins() - 1))
    }

    pub fn bin_low(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTag {
    Sinr,
    Collision,
    HalfDuplex,
}

impl LossTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossTag::Sinr => "sinr",
            LossTag::Collision => "collision",
            LossTag::HalfDuplex => "half_duplex",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sinr" => Some(LossTag::Sinr),
            "collision" => Some(LossTag::Collision),
            "half_duplex" => Some(LossTag::HalfDuplex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub successes: u64,
    pub opportunities: u64,
    pub lost_sinr: u64,
    pub lost_collision: u64,
    pub lost_half_duplex: u64,
}

impl BinCounts {
    pub fn losses(&self) -> u64 {
        self.lost_sinr + self.lost_collision + self.lost_half_duplex
    }
}

/// Successive newest-packet updates of one (tx, rx) link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTrace {
    pub tx: usize,
    pub rx: usize,
    /// (reception subframe, generation subframe) of each newer packet.
    pub updates: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReselectionRecord {
    pub ue: usize,
    pub subframe: u64,
    pub total: usize,
    pub after_exclusion: usize,
    pub retained: usize,
    pub threshold_dbm: f64,
    pub escalations: u32,
    pub harq_gap: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpsAudit {
    pub reselections: Vec<ReselectionRecord>,
    /// Every value the reselection counter was re-armed to.
    pub rearms: Vec<u32>,
}

/// One row of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceRow {
    Tx {
        subframe: u64,
        tx: usize,
        packet: u64,
        class: MessageClass,
        harq: u8,
        start: u32,
        len: u32,
        power_dbm: f64,
    },
    Rx {
        packet: u64,
        tx: usize,
        rx: usize,
        class: MessageClass,
        distance_m: f64,
        generated: u64,
        first_success: Option<u64>,
        tag: Option<LossTag>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub policy: String,
    pub density: f64,
    pub power_dbm: f64,
    pub vehicles: usize,
    pub hpm_nodes: usize,
    pub subframes: u64,
    pub warmup: u64,
    pub initial_threshold_dbm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PairIa {
    generated: u64,
    since: u64,
    bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsStore {
    pub meta: RunMeta,
    pub binning: DistanceBinning,
    /// Indexed by [`class_index`], then by distance bin.
    pub prr_bins: [Vec<BinCounts>; 2],
    pub cbr_series: BTreeMap<usize, Vec<(u64, f64)>>,
    pub threshold_series: BTreeMap<usize, Vec<(u64, f64)>>,
    /// Per distance bin, histogram of information-age samples in ms.
    pub ia_hist: Vec<Vec<u64>>,
    pub ia_traces: Option<Vec<PairTrace>>,
    pub sci_attempts: u64,
    pub sci_decoded: u64,
    /// Decoded SCI RSRP, keyed by floor(dBm * 100).
    pub rsrp_hist: BTreeMap<i64, u64>,
    pub pair_enumerations: u64,
    pub sps_audit: Option<SpsAudit>,
    pub trace: Option<Vec<TraceRow>>,
    #[serde(skip)]
    ia_state: HashMap<(usize, usize), PairIa>,
    #[serde(skip)]
    ia_log: HashMap<(usize, usize), Vec<(u64, u64)>>,
}

pub fn class_index(class: MessageClass) -> usize {
    match class {
        MessageClass::Bsm => 0,
        MessageClass::Hpm => 1,
    }
}

impl MetricsStore {
    pub fn new(meta: RunMeta, cfg: &MetricsConfig) -> Self {
        let binning = cfg.binning();
        let n = binning.n_bins();
        Self {
            meta,
            binning,
            prr_bins: [vec![BinCounts::default(); n], vec![BinCounts::default(); n]],
            cbr_series: BTreeMap::new(),
            threshold_series: BTreeMap::new(),
            ia_hist: vec![Vec::new(); n],
            ia_traces: cfg.ia_traces.then(Vec::new),
            sci_attempts: 0,
            sci_decoded: 0,
            rsrp_hist: BTreeMap::new(),
            pair_enumerations: 0,
            sps_audit: cfg.sps_audit.then(SpsAudit::default),
            trace: cfg.trace.then(Vec::new),
            ia_state: HashMap::new(),
            ia_log: HashMap::new(),
        }
    }

    /// Scores one (packet, receiver) opportunity. `tag` must be `Some` iff
    /// the packet was lost.
    pub fn record_opportunity(&mut self, class: MessageClass, bin: usize, tag: Option<LossTag>) {
        self.pair_enumerations += 1;
        let b = &mut self.prr_bins[class_index(class)][bin];
        b.opportunities += 1;
        match tag {
            None => b.successes += 1,
            Some(LossTag::Sinr) => b.lost_sinr += 1,
            Some(LossTag::Collision) => b.lost_collision += 1,
            Some(LossTag::HalfDuplex) => b.lost_half_duplex += 1,
        }
    }

    pub fn record_sci(&mut self, decoded: bool, rsrp_dbm: f64) {
        self.sci_attempts += 1;
        if decoded {
            self.sci_decoded += 1;
            *self.rsrp_hist.entry((rsrp_dbm * 100.0).floor() as i64).or_default() += 1;
        }
    }

    /// A packet generated at `generated` from `tx` was first decoded at `rx`
    /// in subframe `at`.
    pub fn record_ia_update(&mut self, tx: usize, rx: usize, bin: usize, at: u64, generated: u64) {
        let warmup = self.meta.warmup;
        match self.ia_state.get_mut(&(tx, rx)) {
            Some(st) if generated <= st.generated => return,
            Some(st) => {
                add_ia_samples(&mut self.ia_hist[st.bin], st.since.max(warmup), at, st.generated);
                *st = PairIa {
                    generated,
                    since: at,
                    bin,
                };
            }
            None => {
                self.ia_state.insert(
                    (tx, rx),
                    PairIa {
                        generated,
                        since: at,
                        bin,
                    },
                );
            }
        }
        if self.ia_traces.is_some() {
            self.ia_log.entry((tx, rx)).or_default().push((at, generated));
        }
    }

    /// Closes the information-age series at `end` (exclusive).
    pub fn finish(&mut self, end: u64) {
        let warmup = self.meta.warmup;
        let mut pairs: Vec<_> = self.ia_state.drain().collect();
        pairs.sort_by_key(|p| p.0);
        for (_, st) in pairs {
            add_ia_samples(&mut self.ia_hist[st.bin], st.since.max(warmup), end, st.generated);
        }
        if let Some(traces) = self.ia_traces.as_mut() {
            let mut logs: Vec<_> = self.ia_log.drain().collect();
            logs.sort_by_key(|p| p.0);
            traces.extend(logs.into_iter().map(|((tx, rx), updates)| PairTrace { tx, rx, updates }));
        }
    }

    pub fn opportunities(&self) -> u64 {
        self.prr_bins.iter().flatten().map(|b| b.opportunities).sum()
    }

    pub fn counts(&self, class: MessageClass, bin: usize) -> BinCounts {
        self.prr_bins[class_index(class)][bin]
    }
}

fn add_ia_samples(hist: &mut Vec<u64>, from: u64, to: u64, generated: u64) {
    if to <= from {
        return;
    }
    let lo = (from - generated) as usize;
    let hi = (to - generated) as usize;
    if hist.len() < hi {
        hist.resize(hi, 0);
    }
    for v in &mut hist[lo..hi] {
        *v += 1;
    }
}

/// Successes over opportunities; `None` for an empty bin.
pub fn prr(store: &MetricsStore, class: MessageClass, bin: usize) -> Option<f64> {
    let c = store.prr_bins[class_index(class)].get(bin)?;
    (c.opportunities > 0).then(|| c.successes as f64 / c.opportunities as f64)
}

/// Event-message PRR minus BSM PRR, in percentage points.
pub fn hpm_gain(store: &MetricsStore, bin: usize) -> Option<f64> {
    Some(100.0 * (prr(store, MessageClass::Hpm, bin)? - prr(store, MessageClass::Bsm, bin)?))
}

/// Per-subframe information age of one link, reconstructed from its update
/// log: `(subframe, age_ms)` from the first reception up to `end`. `None`
/// when the link never received anything or traces were not kept.
pub fn information_age(store: &MetricsStore, tx: usize, rx: usize, end: u64) -> Option<Vec<(u64, u64)>> {
    let trace = store.ia_traces.as_ref()?.iter().find(|t| t.tx == tx && t.rx == rx)?;
    ia_series(&trace.updates, end)
}

pub fn ia_series(updates: &[(u64, u64)], end: u64) -> Option<Vec<(u64, u64)>> {
    let first = updates.first()?;
    let mut out = Vec::new();
    let mut generated = first.1;
    let mut next = 1;
    for n in first.0..end {
        while next < updates.len() && updates[next].0 <= n {
            generated = generated.max(updates[next].1);
            next += 1;
        }
        out.push((n, n - generated));
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IaSummary {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub samples: u64,
}

pub fn ia_summary_of_hist(hist: &[u64]) -> Option<IaSummary> {
    let samples: u64 = hist.iter().sum();
    if samples == 0 {
        return None;
    }
    let mean = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum::<f64>()
        / samples as f64;
    // Nearest-rank 95th percentile.
    let rank = ((0.95 * samples as f64) - 1e-9).ceil().max(1.0) as u64;
    let mut acc = 0;
    let mut p95 = 0;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        if acc >= rank {
            p95 = v;
            break;
        }
    }
    Some(IaSummary {
        mean_ms: mean,
        p95_ms: p95 as f64,
        samples,
    })
}

pub fn ia_summary(store: &MetricsStore, bin: usize) -> Option<IaSummary> {
    ia_summary_of_hist(store.ia_hist.get(bin)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub samples: usize,
    pub escalated_samples: usize,
    pub mean_threshold_dbm: Option<f64>,
    /// Decoded SCIs over SCI decode attempts.
    pub p_decode_sci: Option<f64>,
    /// Share of decoded SCIs with RSRP above the mean effective threshold.
    pub p_rsrp_above: Option<f64>,
    /// Product of the two probabilities: the share of sensed SCIs that
    /// would exclude a resource at the mean threshold.
    pub exclusion_balance: Option<f64>,
}

pub fn threshold_analysis(store: &MetricsStore) -> ThresholdReport {
    let values: Vec<f64> = store.threshold_series.values().flatten().map(|s| s.1).collect();
    let initial = store.meta.initial_threshold_dbm;
    let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    let p_decode = (store.sci_attempts > 0).then(|| store.sci_decoded as f64 / store.sci_attempts as f64);
    let p_above = match (mean, store.sci_decoded) {
        (Some(x), n) if n > 0 => {
            let key = (x * 100.0).floor() as i64;
            let above: u64 = store.rsrp_hist.range(key + 1..).map(|e| *e.1).sum();
            Some(above as f64 / n as f64)
        }
        _ => None,
    };
    ThresholdReport {
        samples: values.len(),
        escalated_samples: values.iter().filter(|&&v| v > initial + 1e-9).count(),
        mean_threshold_dbm: mean,
        p_decode_sci: p_decode,
        p_rsrp_above: p_above,
        exclusion_balance: p_decode.zip(p_above).map(|(a, b)| a * b),
    }
}

/// Brackets the power at which the mean effective threshold first rises
/// above the initial one: `(last non-escalating power, first escalating
/// power)`. The lower bound is `None` when even the lowest power escalates.
pub fn locate_p_opt(runs: &[(f64, ThresholdReport)], initial_dbm: f64) -> Option<(Option<f64>, f64)> {
    let mut sorted: Vec<&(f64, ThresholdReport)> = runs.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = None;
    for (power, report) in sorted {
        match report.mean_threshold_dbm {
            Some(m) if m > initial_dbm + 1e-9 => return Some((below, *power)),
            _ => below = Some(*power),
        }
    }
    None
}

/// Distance (bin lower edge) of the first populated bin whose PRR is below
/// `level`; `None` if no bin drops below it.
pub fn range_below(store: &MetricsStore, class: MessageClass, level: f64) -> Option<f64> {
    (0..store.binning.n_bins())
        .find(|&b| prr(store, class, b).is_some_and(|p| p < level))
        .map(|b| store.binning.bin_low(b))
}

pub fn mean_cbr(store: &MetricsStore) -> Option<f64> {
    let all: Vec<f64> = store.cbr_series.values().flatten().map(|s| s.1).collect();
    (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
}

/// Mean of `hpm_gain` over populated bins whose lower edge lies in `[lo, hi)`.
pub fn mean_hpm_gain(store: &MetricsStore, lo_m: f64, hi_m: f64) -> Option<f64> {
    let gains: Vec<f64> = (0..store.binning.n_bins())
        .filter(|&b| {
            let low = store.binning.bin_low(b);
            low >= lo_m && low < hi_m
        })
        .filter_map(|b| hpm_gain(store, b))
        .collect();
    (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64)
}

/// Formats with six significant digits, dropping trailing zeros.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..6).contains(&exp) {
        let rounded: f64 = sci.parse().expect("float");
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{rounded:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round6(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub meta: RunMeta,
    pub opportunities: u64,
    pub prr_bsm: Option<f64>,
    pub prr_hpm: Option<f64>,
    pub mean_cbr: Option<f64>,
    pub hpm_gain_100_600_pp: Option<f64>,
    pub bsm_range_below_0_9_m: Option<f64>,
    pub losses: BTreeMap<String, u64>,
    pub threshold: ThresholdReport,
}

pub fn summary(store: &MetricsStore) -> Summary {
    let overall = |class| {
        let bins = &store.prr_bins[class_index(class)];
        let s: u64 = bins.iter().map(|b| b.successes).sum();
        let o: u64 = bins.iter().map(|b| b.opportunities).sum();
        (o > 0).then(|| round6(s as f64 / o as f64))
    };
    let mut losses = BTreeMap::new();
    for tag in [LossTag::Sinr, LossTag::Collision, LossTag::HalfDuplex] {
        let n = store
            .prr_bins
            .iter()
            .flatten()
            .map(|b| match tag {
                LossTag::Sinr => b.lost_sinr,
                LossTag::Collision => b.lost_collision,
                LossTag::HalfDuplex => b.lost_half_duplex,
            })
            .sum();
        losses.insert(tag.as_str().to_string(), n);
    }
    let mut threshold = threshold_analysis(store);
    for v in [
        &mut threshold.mean_threshold_dbm,
        &mut threshold.p_decode_sci,
        &mut threshold.p_rsrp_above,
        &mut threshold.exclusion_balance,
    ] {
        *v = v.map(round6);
    }
    let mut meta = store.meta.clone();
    meta.density = round6(meta.density);
    meta.power_dbm = round6(meta.power_dbm);
    Summary {
        meta,
        opportunities: store.opportunities(),
        prr_bsm: overall(MessageClass::Bsm),
        prr_hpm: overall(MessageClass::Hpm),
        mean_cbr: mean_cbr(store).map(round6),
        hpm_gain_100_600_pp: mean_hpm_gain(store, 100.0, 600.0).map(round6),
        bsm_range_below_0_9_m: range_below(store, MessageClass::Bsm, 0.9),
        losses,
        threshold,
    }
}

pub fn prr_csv(store: &MetricsStore) -> String {
    let mut out = String::from("kind,bin_low_m,successes,opportunities,prr\n");
    for class in [MessageClass::Bsm, MessageClass::Hpm] {
        for (b, c) in store.prr_bins[class_index(class)].iter().enumerate() {
            let p = prr(store, class, b).map(sig6).unwrap_or_else(|| "NA".into());
            let _ = writeln!(
                out,
                "{class},{},{},{},{p}",
                sig6(store.binning.bin_low(b)),
                c.successes,
                c.opportunities
            );
        }
    }
    out
}

pub fn cbr_csv(store: &MetricsStore) -> String {
    let mut out = String::from("ue,subframe,cbr\n");
    for (ue, series) in &store.cbr_series {
        for (sf, v) in series {
            let _ = writeln!(out, "{ue},{sf},{}", sig6(*v));
        }
    }
    out
}

pub fn threshold_csv(store: &MetricsStore) -> String {
    let mut out = String::from("ue,subframe,dbm\n");
    for (ue, series) in &store.threshold_series {
        for (sf, v) in series {
            let _ = writeln!(out, "{ue},{sf},{}", sig6(*v));
        }
    }
    out
}

pub fn ia_csv(store: &MetricsStore) -> String {
    let mut out = String::from("bin_low_m,mean_ms,p95_ms\n");
    for b in 0..store.binning.n_bins() {
        let low = sig6(store.binning.bin_low(b));
        match ia_summary(store, b) {
            Some(s) => {
                let _ = writeln!(out, "{low},{},{}", sig6(s.mean_ms), sig6(s.p95_ms));
            }
            None => {
                let _ = writeln!(out, "{low},NA,NA");
            }
        }
    }
    out
}

pub fn summary_json(store: &MetricsStore) -> String {
    serde_json::to_string_pretty(&summary(store)).expect("summary serializes") + "\n"
}

const TRACE_HEADER: &str = "event,subframe,tx,rx,packet,kind,harq,start,len,power_dbm,distance_m,generated,first_success,tag";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for row in rows {
        match row {
            TraceRow::Tx {
                subframe,
                tx,
                packet,
                class,
                harq,
                start,
                len,
                power_dbm,
            } => {
                let _ = writeln!(
                    out,
                    "tx,{subframe},{tx},,{packet},{class},{harq},{start},{len},{power_dbm},,,,"
                );
            }
            TraceRow::Rx {
                packet,
                tx,
                rx,
                class,
                distance_m,
                generated,
                first_success,
                tag,
            } => {
                let fs = first_success.map(|v| v.to_string()).unwrap_or_default();
                let tag = tag.map(|t| t.as_str()).unwrap_or("");
                let _ = writeln!(
                    out,
                    "rx,,{tx},{rx},{packet},{class},,,,,{distance_m},{generated},{fs},{tag}"
                );
            }
        }
    }
    out
}

/// Parses a trace written by [`trace_csv`]. Floats are written with full
/// round-trip precision, so parsing reproduces the rows exactly.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Runtime(format!("trace line {}: malformed row", i + 1));
        if f.len() != 14 {
            return Err(bad());
        }
        let class = match f[5] {
            "bsm" => MessageClass::Bsm,
            "hpm" => MessageClass::Hpm,
            _ => return Err(bad()),
        };
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let row = match f[0] {
            "tx" => TraceRow::Tx {
                subframe: num(f[1])?,
                tx: num(f[2])? as usize,
                packet: num(f[4])?,
                class,
                harq: num(f[6])? as u8,
                start: num(f[7])? as u32,
                len: num(f[8])? as u32,
                power_dbm: f[9].parse().map_err(|_| bad())?,
            },
            "rx" => TraceRow::Rx {
                packet: num(f[4])?,
                tx: num(f[2])? as usize,
                rx: num(f[3])? as usize,
                class,
                distance_m: f[10].parse().map_err(|_| bad())?,
                generated: num(f[11])?,
                first_success: if f[12].is_empty() { None } else { Some(num(f[12])?) },
                tag: if f[13].is_empty() {
                    None
                } else {
                    Some(LossTag::parse(f[13]).ok_or_else(bad)?)
                },
            },
            _ => return Err(bad()),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuilds the reception metrics (PRR bins, loss tags, information age)
/// from an event trace.
pub fn replay(rows: &[TraceRow], meta: RunMeta, cfg: &MetricsConfig) -> MetricsStore {
    let mut store = MetricsStore::new(meta, cfg);
    let warmup = store.meta.warmup;
    let binning = store.binning;
    let mut updates: Vec<(u64, usize, usize, usize, u64)> = Vec::new();
    for row in rows {
        if let TraceRow::Rx {
            tx,
            rx,
            class,
            distance_m,
            generated,
            first_success,
            tag,
            ..
        } = row
        {
            let Some(bin) = binning.bin_of(*distance_m) else {
                continue;
            };
            if *generated >= warmup {
                store.record_opportunity(*class, bin, *tag);
            }
            if let Some(at) = first_success {
                updates.push((*at, *tx, *rx, bin, *generated));
            }
        }
    }
    updates.sort();
    for (at, tx, rx, bin, generated) in updates {
        store.record_ia_update(tx, rx, bin, at, generated);
    }
    store.finish(store.meta.subframes);
    store
}

/// Writes the standard result files into `dir`.
pub fn write_outputs(store: &MetricsStore, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("prr.csv"), prr_csv(store))?;
    std::fs::write(dir.join("cbr.csv"), cbr_csv(store))?;
    std::fs::write(dir.join("threshold.csv"), threshold_csv(store))?;
    std::fs::write(dir.join("ia.csv"), ia_csv(store))?;
    std::fs::write(dir.join("summary.json"), summary_json(store))?;
    if let Some(rows) = &store.trace {
        std::fs::write(dir.join("trace.csv"), trace_csv(rows))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> MetricsStore {
        MetricsStore::new(
            RunMeta {
                initial_threshold_dbm: -84.18,
                subframes: 10_000,
                ..RunMeta::default()
            },
            &MetricsConfig {
                ia_traces: true,
                ..MetricsConfig::default()
            },
        )
    }

    #[test]
    fn binning() {
        let b = MetricsConfig::default().binning();
        assert_eq!(b.n_bins(), 20);
        assert_eq!(b.bin_of(0.0), Some(0));
        assert_eq!(b.bin_of(49.99), Some(0));
        assert_eq!(b.bin_of(50.0), Some(1));
        assert_eq!(b.bin_of(1000.0), Some(19));
        assert_eq!(b.bin_of(1000.1), None);
        let bad = MetricsConfig {
            bin_width_m: 70.0,
            ..MetricsConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prr_and_gain_arithmetic() {
        let mut s = store();
        assert_eq!(prr(&s, MessageClass::Bsm, 3), None);
        for _ in 0..100 {
            s.record_opportunity(MessageClass::Bsm, 3, Some(LossTag::Sinr));
            s.record_opportunity(MessageClass::Bsm, 4, None);
        }
        assert_eq!(prr(&s, MessageClass::Bsm, 3), Some(0.0));
        assert_eq!(prr(&s, MessageClass::Bsm, 4), Some(1.0));
        assert_eq!(hpm_gain(&s, 4), None);
        for i in 0..100 {
            s.record_opportunity(MessageClass::Hpm, 4, (i < 10).then_some(LossTag::Collision));
        }
        // HPM 0.9 vs BSM 1.0.
        assert!((hpm_gain(&s, 4).unwrap() + 10.0).abs() < 1e-9);
        let c = s.counts(MessageClass::Bsm, 3);
        assert_eq!(c.losses() + c.successes, c.opportunities);
        assert_eq!(s.pair_enumerations, s.opportunities());
    }

    #[test]
    fn equal_prr_gives_zero_gain() {
        let mut s = store();
        for class in [MessageClass::Bsm, MessageClass::Hpm] {
            s.record_opportunity(class, 0, None);
            s.record_opportunity(class, 0, Some(LossTag::HalfDuplex));
        }
        assert_eq!(hpm_gain(&s, 0), Some(0.0));
    }

    #[test]
    fn ia_sawtooth_lossless() {
        // Packets generated every 100 ms and received instantly.
        let mut s = store();
        for k in 0..100u64 {
            s.record_ia_update(0, 1, 2, k * 100, k * 100);
        }
        s.finish(10_000);
        let sum = ia_summary(&s, 2).unwrap();
        assert!((sum.mean_ms - 49.5).abs() < 1e-9);
        assert_eq!(sum.p95_ms, 94.0);
        let series = information_age(&s, 0, 1, 10_000).unwrap();
        assert_eq!(series.len(), 10_000);
        assert_eq!(series[150], (150, 50));
    }

    #[test]
    fn ia_every_other_packet_lost() {
        // Brute force: rebuild the series sample by sample and compare.
        let mut s = store();
        let received: Vec<u64> = (0..100u64).filter(|k| k % 2 == 0).map(|k| k * 100).collect();
        for &g in &received {
            s.record_ia_update(0, 1, 0, g, g);
        }
        s.finish(10_000);
        let mut brute = Vec::new();
        for n in 0..10_000u64 {
            let newest = received.iter().filter(|&&g| g <= n).max().unwrap();
            brute.push(n - newest);
        }
        let mean_brute = brute.iter().sum::<u64>() as f64 / brute.len() as f64;
        let sum = ia_summary(&s, 0).unwrap();
        assert!((sum.mean_ms - mean_brute).abs() < 1e-9);
        assert!((sum.mean_ms - 99.5).abs() < 1e-9);
    }

    #[test]
    fn ia_without_reception() {
        let s = store();
        assert!(ia_summary(&s, 0).is_none());
        assert!(information_age(&s, 0, 1, 100).is_none());
    }

    #[test]
    fn ia_respects_warmup() {
        let mut s = store();
        s.meta.warmup = 1000;
        s.record_ia_update(0, 1, 0, 500, 500);
        s.record_ia_update(0, 1, 0, 1500, 1500);
        s.finish(1600);
        let sum = ia_summary(&s, 0).unwrap();
        // Samples 1000..1500 at ages 500..1000, then 1500..1600 at 0..100.
        assert_eq!(sum.samples, 600);
    }

    #[test]
    fn threshold_report_without_escalation() {
        let mut s = store();
        s.threshold_series.insert(0, vec![(10, -84.18), (900, -84.18)]);
        for i in 0..10 {
            s.record_sci(i < 4, -90.0 + i as f64);
        }
        let r = threshold_analysis(&s);
        assert!((r.mean_threshold_dbm.unwrap() + 84.18).abs() < 1e-9);
        assert_eq!(r.escalated_samples, 0);
        assert!((r.p_decode_sci.unwrap() - 0.4).abs() < 1e-12);
        assert!(r.exclusion_balance.unwrap() < 0.8);
    }

    #[test]
    fn p_opt_bracket() {
        let report = |m: f64| ThresholdReport {
            samples: 1,
            escalated_samples: 0,
            mean_threshold_dbm: Some(m),
            p_decode_sci: None,
            p_rsrp_above: None,
            exclusion_balance: None,
        };
        let runs = vec![
            (10.0, report(-84.18)),
            (0.0, report(-84.18)),
            (20.0, report(-80.0)),
            (15.0, report(-83.0)),
        ];
        assert_eq!(locate_p_opt(&runs, -84.18), Some((Some(10.0), 15.0)));
        assert_eq!(locate_p_opt(&runs[..2], -84.18), None);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(-84.18), "-84.18");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(950.0), "950");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn trace_roundtrip() {
        let rows = vec![
            TraceRow::Tx {
                subframe: 5,
                tx: 1,
                packet: 9,
                class: MessageClass::Hpm,
                harq: 1,
                start: 3,
                len: 3,
                power_dbm: 12.345678901234,
            },
            TraceRow::Rx {
                packet: 9,
                tx: 1,
                rx: 2,
                class: MessageClass::Hpm,
                distance_m: 123.456789012345,
                generated: 1,
                first_success: None,
                tag: Some(LossTag::HalfDuplex),
            },
        ];
        assert_eq!(parse_trace(&trace_csv(&rows)).unwrap(), rows);
    }
}
