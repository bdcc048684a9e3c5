//! Refresh mitigations and their verification: refresh-rate scaling,
//! proactive victim-row refresh (PRVR), and retention-aware refresh with a
//! weak-row set held either in an exact bitmap or a Bloom filter.

use serde::{Deserialize, Serialize};

use crate::array::DramArray;
use crate::characterize::FailureProfile;
use crate::engine::{execute_opts, BitflipReport, EngineOptions, Temperature};
use crate::error::{Result, SimError};
use crate::rng::fnv1a;
use crate::stream::{CommandStream, StreamOp, StreamSeg, TimedOp, TimingParams};

/// REF commands per refresh window; dividing the window by this yields
/// t_REFI (8192 gives the usual 3.9 us at a 32 ms window).
pub const REF_COMMANDS_PER_WINDOW: f64 = crate::engine::REFRESH_SLOTS as f64;

// ---------------------------------------------------------------------------
// Bloom filter
// ---------------------------------------------------------------------------

/// Fixed hash-stream seeds; documented constants so a stored filter is
/// reproducible across runs and hosts.
const BLOOM_SEEDS: [u64; 6] = [
    0x9E3779B97F4A7C15,
    0xC2B2AE3D27D4EB4F,
    0x165667B19E3779F9,
    0x27D4EB2F165667C5,
    0x85EBCA77C2B2AE63,
    0xFF51AFD7ED558CCD,
];

/// Blocked Bloom-style membership filter sized in bits with k hash streams.
/// No false negatives; false-positive rate about `(1 - e^(-kn/m))^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BloomFilter {
    bits: Vec<u64>,
    m: usize,
    k: usize,
    inserted: usize,
}

impl BloomFilter {
    /// The standard configuration: 8 Kb, 6 hash functions.
    pub fn standard() -> Self {
        BloomFilter::new(8192, 6)
    }

    pub fn new(m_bits: usize, k: usize) -> Self {
        assert!(m_bits > 0 && k > 0 && k <= BLOOM_SEEDS.len());
        BloomFilter {
            bits: vec![0; m_bits.div_ceil(64)],
            m: m_bits,
            k,
            inserted: 0,
        }
    }

    #[inline]
    fn position(&self, key: u64, i: usize) -> usize {
        let mut x = key ^ BLOOM_SEEDS[i];
        // splitmix64 finalizer.
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
        x ^= x >> 31;
        (x % self.m as u64) as usize
    }

    pub fn insert(&mut self, key: u64) {
        for i in 0..self.k {
            let p = self.position(key, i);
            self.bits[p / 64] |= 1 << (p % 64);
        }
        self.inserted += 1;
    }

    pub fn query(&self, key: u64) -> bool {
        (0..self.k).all(|i| {
            let p = self.position(key, i);
            self.bits[p / 64] & (1 << (p % 64)) != 0
        })
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    /// Analytic false-positive rate for n insertions.
    pub fn expected_fp_rate(m: usize, k: usize, n: usize) -> f64 {
        (1.0 - (-(k as f64) * n as f64 / m as f64).exp()).powi(k as i32)
    }
}

// ---------------------------------------------------------------------------
// Weak-row set
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakSetVariant {
    Bitmap,
    Bloom,
}

/// Weak-row membership: either one exact bit per row or a Bloom filter.
/// The bitmap is exact; the Bloom variant never misses a member but may
/// report extra rows, which only causes safe over-refresh.
#[derive(Debug, Clone, PartialEq)]
pub enum WeakRowSet {
    Bitmap { bits: Vec<u64>, rows: usize },
    Bloom(BloomFilter),
}

impl WeakRowSet {
    pub fn new(variant: WeakSetVariant, rows: usize) -> Self {
        match variant {
            WeakSetVariant::Bitmap => WeakRowSet::Bitmap {
                bits: vec![0; rows.div_ceil(64)],
                rows,
            },
            WeakSetVariant::Bloom => WeakRowSet::Bloom(BloomFilter::standard()),
        }
    }

    pub fn insert(&mut self, row: usize) {
        match self {
            WeakRowSet::Bitmap { bits, rows } => {
                assert!(row < *rows, "row outside bitmap");
                bits[row / 64] |= 1 << (row % 64);
            }
            WeakRowSet::Bloom(b) => b.insert(fnv1a(&(row as u64).to_le_bytes())),
        }
    }

    pub fn query(&self, row: usize) -> bool {
        match self {
            WeakRowSet::Bitmap { bits, rows } => {
                row < *rows && bits[row / 64] & (1 << (row % 64)) != 0
            }
            WeakRowSet::Bloom(b) => b.query(fnv1a(&(row as u64).to_le_bytes())),
        }
    }
}

// ---------------------------------------------------------------------------
// Refresh policies
// ---------------------------------------------------------------------------

/// Proactive victim-row refresh parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PrvrConfig {
    /// Budget for refreshing all victims once: the time to the first flip
    /// under sustained aggression. Victim refreshes are spread evenly so a
    /// full pass spans exactly this long.
    pub t_first: f64,
    /// Fraction of `t_first` of accumulated aggressor open time that arms
    /// the mechanism.
    pub trigger_fraction: f64,
}

/// Retention-aware refresh parameters: weak rows refresh every `t_weak`,
/// the rest every `t_strong`.
#[derive(Debug, Clone, PartialEq)]
pub struct RaidrConfig {
    pub weak_rows: WeakRowSet,
    pub t_weak: f64,
    pub t_strong: f64,
}

impl RaidrConfig {
    pub fn new(weak_rows: WeakRowSet, t_weak: f64, t_strong: f64) -> Result<Self> {
        if !(t_weak > 0.0 && t_strong > 0.0) {
            return Err(SimError::Config("refresh periods must be positive".into()));
        }
        if t_weak > t_strong {
            return Err(SimError::Config("t_weak must not exceed t_strong".into()));
        }
        Ok(RaidrConfig {
            weak_rows,
            t_weak,
            t_strong,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefreshPolicy {
    /// All-bank REF every `window / 8192`.
    Periodic {
        window: f64,
    },
    Prvr(PrvrConfig),
    Raidr(RaidrConfig),
}

/// REF_all commands covering `duration` for a periodic policy with the
/// given refresh window (t_REFI = window / 8192).
pub fn periodic_refresh_stream(bank: usize, window: f64, duration: f64) -> Result<CommandStream> {
    if !(window > 0.0) {
        return Err(SimError::Config("refresh window must be positive".into()));
    }
    let t_refi = window / REF_COMMANDS_PER_WINDOW;
    let mut s = CommandStream::new(bank);
    let count = (duration / t_refi).floor() as u64;
    if count > 0 {
        s.push(StreamSeg::Loop {
            start: 0.0,
            period: t_refi,
            iterations: count,
            body: vec![TimedOp {
                at: t_refi,
                op: StreamOp::RefAll,
            }],
        });
    }
    s.extend_to(duration);
    Ok(s)
}

/// t_REFI for a refresh window.
pub fn t_refi_for_window(window: f64) -> f64 {
    window / REF_COMMANDS_PER_WINDOW
}

/// Victim rows of an aggressor: every row of its subarray and of the two
/// neighboring subarrays.
pub fn prvr_victims(array: &DramArray, aggressor_row: usize) -> Result<Vec<usize>> {
    let subs = array.perturbed_subarrays(aggressor_row)?;
    let mut rows = Vec::new();
    for s in subs {
        rows.extend(array.layout().row_range(s));
    }
    Ok(rows)
}

/// First time the cumulative open time of any row in the aggression trace
/// crosses `threshold`, if it does.
fn trigger_time(aggression: &CommandStream, threshold: f64) -> Option<(usize, f64)> {
    use std::collections::HashMap;
    let mut acc: HashMap<usize, f64> = HashMap::new();
    let mut best: Option<(usize, f64)> = None;
    for seg in &aggression.segs {
        match seg {
            StreamSeg::One(_) => {}
            StreamSeg::Loop {
                start,
                period,
                iterations,
                body,
            } => {
                // Pair ACT/PRE offsets.
                let mut open: Option<(usize, f64)> = None;
                for t in body {
                    match t.op {
                        StreamOp::Act { row } => open = Some((row, t.at)),
                        StreamOp::Pre => {
                            if let Some((row, at)) = open.take() {
                                let len = t.at - at;
                                if len <= 0.0 {
                                    continue;
                                }
                                let already = *acc.get(&row).unwrap_or(&0.0);
                                let need = threshold - already;
                                let k = (need / len).ceil().max(1.0);
                                if k as u64 <= *iterations {
                                    let t_hit = start + period * (k - 1.0) + t.at;
                                    match best {
                                        Some((_, b)) if b <= t_hit => {}
                                        _ => best = Some((row, t_hit)),
                                    }
                                }
                                *acc.entry(row).or_insert(0.0) += len * *iterations as f64;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    // Explicit windows: accumulate in time order.
    let mut open: Option<(usize, f64)> = None;
    let mut ops: Vec<TimedOp> = aggression
        .segs
        .iter()
        .filter_map(|s| match s {
            StreamSeg::One(t) => Some(*t),
            _ => None,
        })
        .collect();
    ops.sort_by(|a, b| a.at.total_cmp(&b.at));
    for t in ops {
        match t.op {
            StreamOp::Act { row } => open = Some((row, t.at)),
            StreamOp::Pre => {
                if let Some((row, at)) = open.take() {
                    let e = acc.entry(row).or_insert(0.0);
                    let before = *e;
                    *e += t.at - at;
                    if before < threshold && *e >= threshold {
                        let t_hit = at + (threshold - before);
                        match best {
                            Some((_, b)) if b <= t_hit => {}
                            _ => best = Some((row, t_hit)),
                        }
                    }
                }
            }
            _ => {}
        }
    }
    best
}

/// PRVR refresh stream for an aggression trace: once a row's accumulated
/// open time crosses the trigger, every victim row of three subarrays is
/// refreshed once per pass, evenly spaced so a pass spans `t_first`, and
/// passes repeat while the aggression lasts.
pub fn prvr_stream(
    array: &DramArray,
    aggression: &CommandStream,
    config: &PrvrConfig,
) -> Result<CommandStream> {
    if !(config.t_first > 0.0) {
        return Err(SimError::Config("t_first must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.trigger_fraction) {
        return Err(SimError::Config(
            "trigger fraction must be in [0, 1]".into(),
        ));
    }
    let mut s = CommandStream::new(aggression.bank);
    s.extend_to(aggression.end);
    let Some((agg_row, t0)) = trigger_time(aggression, config.trigger_fraction * config.t_first)
    else {
        return Ok(s);
    };
    let victims = prvr_victims(array, agg_row)?;
    let n = victims.len();
    if n == 0 {
        return Ok(s);
    }
    let spacing = config.t_first / n as f64;
    let remaining = aggression.end - t0;
    if remaining <= 0.0 {
        return Ok(s);
    }
    let passes = (remaining / config.t_first).ceil() as u64;
    let body: Vec<TimedOp> = victims
        .iter()
        .enumerate()
        .map(|(i, &row)| TimedOp {
            at: i as f64 * spacing,
            op: StreamOp::RefRow { row },
        })
        .collect();
    s.push(StreamSeg::Loop {
        start: t0,
        period: config.t_first,
        iterations: passes,
        body,
    });
    s.extend_to(aggression.end);
    Ok(s)
}

/// Classify rows whose cells fail within the strong window as weak.
pub fn classify_weak_rows(
    profile: &FailureProfile,
    strong_window: f64,
    variant: WeakSetVariant,
) -> WeakRowSet {
    let mut set = WeakRowSet::new(variant, profile.total_rows);
    for row in 0..profile.total_rows {
        let weak = (0..profile.columns_per_row).any(|col| profile.at(row, col) <= strong_window);
        if weak {
            set.insert(row);
        }
    }
    set
}

/// Exact weak rows (for counting/comparison), from the same rule.
pub fn weak_row_indices(profile: &FailureProfile, strong_window: f64) -> Vec<usize> {
    (0..profile.total_rows)
        .filter(|&row| {
            (0..profile.columns_per_row).any(|col| profile.at(row, col) <= strong_window)
        })
        .collect()
}

/// Retention-aware refresh stream: rows the weak set reports are refreshed
/// every `t_weak`, the rest every `t_strong`. Bloom false positives are
/// refreshed at the weak rate, which is safe over-refresh.
pub fn raidr_stream(
    array: &DramArray,
    bank: usize,
    config: &RaidrConfig,
    duration: f64,
) -> Result<CommandStream> {
    let mut s = CommandStream::new(bank);
    let mut weak_body = Vec::new();
    let mut strong_body = Vec::new();
    for row in 0..array.total_rows() {
        if config.weak_rows.query(row) {
            weak_body.push(row);
        } else {
            strong_body.push(row);
        }
    }
    for (rows, period) in [(weak_body, config.t_weak), (strong_body, config.t_strong)] {
        let count = (duration / period).floor() as u64;
        if rows.is_empty() || count == 0 {
            continue;
        }
        s.push(StreamSeg::Loop {
            start: 0.0,
            period,
            iterations: count,
            body: rows
                .iter()
                .map(|&row| TimedOp {
                    at: period,
                    op: StreamOp::RefRow { row },
                })
                .collect(),
        });
    }
    s.extend_to(duration);
    Ok(s)
}

/// Refresh stream for any policy against a given aggression trace.
pub fn policy_stream(
    array: &DramArray,
    bank: usize,
    policy: &RefreshPolicy,
    aggression: &CommandStream,
    duration: f64,
) -> Result<CommandStream> {
    match policy {
        RefreshPolicy::Periodic { window } => periodic_refresh_stream(bank, *window, duration),
        RefreshPolicy::Prvr(cfg) => prvr_stream(array, aggression, cfg),
        RefreshPolicy::Raidr(cfg) => raidr_stream(array, bank, cfg, duration),
    }
}

// ---------------------------------------------------------------------------
// Policy verification
// ---------------------------------------------------------------------------

/// Result of running an aggression trace under a refresh policy.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    pub flips: BitflipReport,
    /// Refresh commands that landed while a row was open (applied
    /// refresh-first and reported, not masked).
    pub conflicts: u64,
    pub ref_all_count: u64,
    pub ref_row_count: u64,
}

impl ViolationReport {
    pub fn is_sound(&self) -> bool {
        self.flips.is_empty()
    }
}

/// Merge the aggression and policy streams by timestamp (refresh first on
/// ties), run the engine, and report any flip plus refresh-op accounting.
pub fn verify_policy(
    array: &mut DramArray,
    aggression: &CommandStream,
    policy: &RefreshPolicy,
    duration: f64,
    timings: &TimingParams,
    temperature: &Temperature,
) -> Result<ViolationReport> {
    let refresh = policy_stream(array, aggression.bank, policy, aggression, duration)?;
    let (_, ref_all_count, ref_row_count) = refresh.op_counts();
    let mut merged = aggression.clone().merge(refresh)?;
    merged.extend_to(duration);
    let report = execute_opts(
        array,
        &merged,
        timings,
        temperature,
        &EngineOptions::default(),
    )?;
    Ok(ViolationReport {
        conflicts: report.conflicts,
        flips: report,
        ref_all_count,
        ref_row_count,
    })
}

/// Serialized refresh cost of one PRVR pass over `n` rows.
pub fn prvr_pass_cost(n: usize, timings: &TimingParams) -> f64 {
    n as f64 * timings.t_row_refresh
}
