//! Command-stream execution against a [`DramArray`].
//!
//! The model: while a row is open, every perturbed column (the whole
//! aggressor subarray plus the shared half of each neighbor) carries the
//! voltage of the open row's bit on that column; while the bank is
//! precharged every column sits at VDD/2. A charged cell on a column at
//! voltage `v` consumes its flip time at rate `1 / (s(T) * t_flip(v))`,
//! where `t_flip` interpolates the cell's three anchors and `s(T)` is the
//! temperature flip-time scale. The cell discharges when the consumed
//! fraction reaches 1. Holding the bitline at VDD/2 is plain retention, so
//! one accrual model covers column disturbance and retention loss.
//!
//! RowHammer/RowPress is a separate per-activation term: each ACT deposits
//! `(1 + t_open / t_ras) / rh_threshold` hammer damage into the rows within
//! the hammer radius of the aggressor (same subarray only). Hammer flips
//! follow a per-cell direction flag.
//!
//! Refresh commands and row restores (each PRE fully recharges the row that
//! was open) reset accrued damage without touching stored bits; cells that
//! already flipped stay flipped until re-initialized. A refresh that lands
//! while a row is open applies at its timestamp, refresh-first; such
//! conflicts are counted and reported rather than rejected.
//!
//! Loops are consumed in closed form: damage per iteration is computed once
//! per cell and the crossing iteration is solved arithmetically, so a
//! 36 ns-period press over 512 ms costs the same as a single interval.
//! Drive levels are sampled from stored bits when the run starts; a cell of
//! an aggressor row that flips mid-run keeps driving its original level
//! until the stream ends (aggressor rows are restored every activation, so
//! this only matters for deliberately pathological profiles).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::array::{CellProfile, DramArray, FlipDirection, Polarity};
use crate::error::{Result, SimError};
use crate::stream::{CommandStream, StreamOp, StreamSeg, TimedOp, TimingParams};

// ---------------------------------------------------------------------------
// Temperature
// ---------------------------------------------------------------------------

/// Flip-time scale versus temperature: `s(T) = exp(-lambda * (T - 85))`,
/// so `s(85 °C) = 1` and flip times shrink as temperature rises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempProfile {
    lambda: f64,
}

/// Shipped 45 -> 95 °C speedup factors (steepest to shallowest).
pub const SPEEDUP_STEEP: f64 = 9.05;
pub const SPEEDUP_MODERATE: f64 = 5.15;
pub const SPEEDUP_SHALLOW: f64 = 1.96;

impl TempProfile {
    /// Profile whose flip times shrink by `speedup` between 45 °C and
    /// 95 °C. The factor must exceed 1 so the scale is strictly decreasing.
    pub fn from_speedup_45_to_95(speedup: f64) -> Result<Self> {
        if !(speedup > 1.0) || !speedup.is_finite() {
            return Err(SimError::Config(format!(
                "temperature speedup must be > 1, got {speedup}"
            )));
        }
        Ok(TempProfile {
            lambda: speedup.ln() / 50.0,
        })
    }

    pub fn scale(&self, celsius: f64) -> f64 {
        (-self.lambda * (celsius - 85.0)).exp()
    }
}

impl Default for TempProfile {
    fn default() -> Self {
        TempProfile::from_speedup_45_to_95(SPEEDUP_MODERATE).unwrap()
    }
}

/// Operating temperature plus its flip-time scale profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub celsius: f64,
    pub profile: TempProfile,
}

impl Temperature {
    pub fn new(celsius: f64, speedup_45_to_95: f64) -> Result<Self> {
        Ok(Temperature {
            celsius,
            profile: TempProfile::from_speedup_45_to_95(speedup_45_to_95)?,
        })
    }

    /// 85 °C reference point: scale is exactly 1 regardless of profile.
    pub fn reference() -> Self {
        Temperature {
            celsius: 85.0,
            profile: TempProfile::default(),
        }
    }

    /// Flip-time multiplier at this temperature.
    pub fn scale(&self) -> f64 {
        self.profile.scale(self.celsius)
    }
}

// ---------------------------------------------------------------------------
// Average column voltage (reporting metric)
// ---------------------------------------------------------------------------

/// Time-weighted average voltage on the perturbed columns of a hammer/press
/// loop: the column sits at the aggressor's data level for `t_agg_on` and at
/// VDD/2 for `t_rp` out of every `t_agg_on + t_rp`.
pub fn avg_column_voltage(t_agg_on: f64, t_rp: f64, dp_col: f64, vdd: f64) -> Result<f64> {
    let denom = t_agg_on + t_rp;
    if !(denom > 0.0) {
        return Err(SimError::Input("t_agg_on + t_rp must be positive".into()));
    }
    if !(0.0..=vdd).contains(&dp_col) {
        return Err(SimError::Input(format!(
            "dp_col {dp_col} outside [0, {vdd}]"
        )));
    }
    Ok((t_agg_on * dp_col + (vdd / 2.0) * t_rp) / denom)
}

// ---------------------------------------------------------------------------
// Bitflip records
// ---------------------------------------------------------------------------

/// Attributed cause of a recorded flip. A flip is hammer-caused when hammer
/// damage crossed its threshold first; otherwise it is column disturbance if
/// the cell's column was ever driven away from VDD/2 before the flip, and a
/// plain retention failure if not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipCause {
    ColumnDisturb,
    RetentionBaseline,
    RowHammerRowPress,
}

impl std::fmt::Display for FlipCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlipCause::ColumnDisturb => write!(f, "column-disturb"),
            FlipCause::RetentionBaseline => write!(f, "retention-baseline"),
            FlipCause::RowHammerRowPress => write!(f, "rowhammer-rowpress"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitflipRecord {
    pub bank: usize,
    pub subarray: usize,
    /// Global row index within the bank.
    pub row: usize,
    pub col: usize,
    pub time: f64,
    pub direction: FlipDirection,
    pub cause: FlipCause,
}

/// All flips of one run plus enough geometry to compute the metrics.
#[derive(Debug, Clone, Default)]
pub struct BitflipReport {
    pub records: Vec<BitflipRecord>,
    /// Simulated duration (the stream horizon).
    pub duration: f64,
    /// Refresh commands that landed while a row was open; they were applied
    /// refresh-first at their timestamp. Exact for explicit refreshes,
    /// proportional estimate inside compressed loops.
    pub conflicts: u64,
    pub banks: usize,
    pub columns_per_row: usize,
    pub subarray_sizes: Vec<usize>,
}

impl BitflipReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn in_subarray(&self, subarray: usize) -> impl Iterator<Item = &BitflipRecord> {
        self.records.iter().filter(move |r| r.subarray == subarray)
    }

    pub fn cells_in_subarray(&self, subarray: usize) -> usize {
        self.subarray_sizes[subarray] * self.columns_per_row
    }

    /// Earliest flip time with the given cause (any cause if `None`).
    pub fn first_flip(&self, cause: Option<FlipCause>) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| cause.is_none_or(|c| r.cause == c))
            .map(|r| r.time)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.min(t)))
            })
    }
}

// ---------------------------------------------------------------------------
// Row copy (two back-to-back activations within a subarray)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloneOutcome {
    /// Source and destination share a subarray; the data was copied.
    Copied,
    /// Different subarrays: the copy fails and the destination keeps its
    /// content. Boundary reverse engineering relies on this failure.
    CrossSubarray,
}

/// In-array row copy. Copying rewrites the destination (damage and flip
/// state cleared); both activations restore whatever row they touch.
pub fn rowclone(
    array: &mut DramArray,
    bank: usize,
    src: usize,
    dst: usize,
) -> Result<CloneOutcome> {
    let rows = array.total_rows();
    if bank >= array.banks() || src >= rows || dst >= rows {
        return Err(SimError::Input(format!(
            "rowclone out of range: bank {bank}, {src} -> {dst}"
        )));
    }
    let same = array.layout().subarray_of_row(src) == array.layout().subarray_of_row(dst);
    for col in 0..array.columns_per_row() {
        let bit = {
            let s = array.state_mut(bank, src, col);
            s.damage = 0.0;
            s.hammer_damage = 0.0;
            s.stored_bit
        };
        let d = array.state_mut(bank, dst, col);
        if same && src != dst {
            d.stored_bit = bit;
            d.flipped_at = None;
        }
        d.damage = 0.0;
        d.hammer_damage = 0.0;
    }
    Ok(if same {
        CloneOutcome::Copied
    } else {
        CloneOutcome::CrossSubarray
    })
}

// ---------------------------------------------------------------------------
// Engine options
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    /// Neighbor-row distance receiving hammer damage (0 disables, max 2).
    pub hammer_radius: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { hammer_radius: 1 }
    }
}

// ---------------------------------------------------------------------------
// Prepared timeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Drive {
    Gnd,
    Vdd,
}

struct DriveRow {
    subarray: usize,
    levels: Vec<Drive>,
}

#[derive(Debug, Clone, Copy)]
struct BodyWin {
    off0: f64,
    off1: f64,
    row_ix: usize,
}

enum Activity {
    Window {
        t0: f64,
        t1: f64,
        row_ix: usize,
    },
    Loop {
        start: f64,
        period: f64,
        iterations: u64,
        wins: Vec<BodyWin>,
    },
}

impl Activity {
    fn span(&self) -> (f64, f64) {
        match self {
            Activity::Window { t0, t1, .. } => (*t0, *t1),
            Activity::Loop {
                start,
                period,
                iterations,
                ..
            } => (*start, start + period * *iterations as f64),
        }
    }
}

/// All-bank refresh rotates through this many slices; one full rotation
/// refreshes every row once, so a row's refresh period equals the refresh
/// window (window = 8192 * t_REFI).
pub const REFRESH_SLOTS: u64 = 8192;

/// The rotation slot that owns a row.
pub fn refresh_slot(row: usize, total_rows: usize) -> u64 {
    debug_assert!(row < total_rows);
    row as u64 * REFRESH_SLOTS / total_rows as u64
}

/// Periodic event times: `start + k * period` for `k < count`.
#[derive(Debug, Clone, Copy)]
struct Periodic {
    start: f64,
    period: f64,
    count: u64,
}

impl Periodic {
    fn last(&self) -> f64 {
        self.start + self.period * (self.count - 1) as f64
    }
}

/// Number of periodic fires in [a, b).
fn fires_in(per: &Periodic, a: f64, b: f64) -> u64 {
    if per.count == 0 || b <= per.start {
        return 0;
    }
    let first = if a <= per.start {
        0u64
    } else {
        ((a - per.start) / per.period).ceil() as u64
    };
    let mut last_f = ((b - per.start) / per.period).floor();
    if last_f < 0.0 {
        return 0;
    }
    if per.start + last_f * per.period >= b {
        last_f -= 1.0;
    }
    if last_f < 0.0 {
        return 0;
    }
    let last = (last_f as u64).min(per.count - 1);
    if first > last {
        0
    } else {
        last - first + 1
    }
}

#[derive(Default)]
struct RowEvents {
    times: Vec<f64>,
    periodic: Vec<Periodic>,
}

/// Hammer deposits into one row: sporadic hits and per-loop fire blocks.
/// Blocks from distinct loops never interleave because activity spans are
/// disjoint.
#[derive(Debug, Clone)]
enum HammerEvents {
    Hit {
        t: f64,
        inc: f64,
    },
    Block {
        start: f64,
        period: f64,
        count: u64,
        /// (offset within iteration, increment) per fire, offset-sorted.
        fires: Vec<(f64, f64)>,
    },
}

impl HammerEvents {
    fn start(&self) -> f64 {
        match self {
            HammerEvents::Hit { t, .. } => *t,
            HammerEvents::Block { start, fires, .. } => *start + fires[0].0,
        }
    }
}

/// A source of all-bank refresh commands, used to rotate the slice counter.
#[derive(Debug, Clone, Copy)]
enum RefAllSrc {
    One { at: f64 },
    Loop { start: f64, period: f64, count: u64 },
}

impl RefAllSrc {
    fn span(&self) -> (f64, f64) {
        match self {
            RefAllSrc::One { at } => (*at, *at),
            RefAllSrc::Loop {
                start,
                period,
                count,
            } => (*start, start + period * (count.saturating_sub(1)) as f64),
        }
    }

    fn commands(&self) -> u64 {
        match self {
            RefAllSrc::One { .. } => 1,
            RefAllSrc::Loop { count, .. } => *count,
        }
    }
}

struct Prepared {
    activities: Vec<Activity>,
    drive_rows: Vec<DriveRow>,
    /// Per-row REF_all slice hits (indexed by row); apply to every bank.
    refresh_all: Vec<RowEvents>,
    /// REF_row plus activation restores; stream bank only.
    row_events: HashMap<usize, RowEvents>,
    hammer: HashMap<usize, Vec<HammerEvents>>,
    conflicts: u64,
    end: f64,
}

fn intern_row(
    array: &DramArray,
    bank: usize,
    row: usize,
    drive_rows: &mut Vec<DriveRow>,
    drive_ix: &mut HashMap<usize, usize>,
) -> Result<usize> {
    if row >= array.total_rows() {
        return Err(SimError::Input(format!("row {row} out of range")));
    }
    if let Some(&ix) = drive_ix.get(&row) {
        return Ok(ix);
    }
    let subarray = array.layout().subarray_of_row(row).unwrap();
    let levels = (0..array.columns_per_row())
        .map(|col| {
            let prof = array.profile(bank, row, col);
            let bit = array.state(bank, row, col).stored_bit;
            if DramArray::is_charged(prof, bit) {
                Drive::Vdd
            } else {
                Drive::Gnd
            }
        })
        .collect();
    drive_rows.push(DriveRow { subarray, levels });
    let ix = drive_rows.len() - 1;
    drive_ix.insert(row, ix);
    Ok(ix)
}

fn hammer_victims(array: &DramArray, row: usize, radius: usize) -> Vec<usize> {
    let sub = array.layout().subarray_of_row(row).unwrap();
    let range = array.layout().row_range(sub);
    let mut out = Vec::new();
    for d in 1..=radius {
        if row >= d && range.contains(&(row - d)) {
            out.push(row - d);
        }
        if range.contains(&(row + d)) {
            out.push(row + d);
        }
    }
    out
}

fn prepare(
    array: &DramArray,
    stream: &CommandStream,
    timings: &TimingParams,
    opts: &EngineOptions,
) -> Result<Prepared> {
    let bank = stream.bank;
    if bank >= array.banks() {
        return Err(SimError::Input(format!("stream bank {bank} out of range")));
    }

    let mut activities: Vec<Activity> = Vec::new();
    let mut drive_rows: Vec<DriveRow> = Vec::new();
    let mut drive_ix: HashMap<usize, usize> = HashMap::new();
    let mut ref_all_srcs: Vec<RefAllSrc> = Vec::new();
    let mut row_events: HashMap<usize, RowEvents> = HashMap::new();
    let mut hammer: HashMap<usize, Vec<HammerEvents>> = HashMap::new();
    // For conflict reporting only: refresh commands vs open windows.
    let mut explicit_refresh_times: Vec<f64> = Vec::new();
    let mut refresh_loop_periodics: Vec<Periodic> = Vec::new();
    let mut conflicts: u64 = 0;
    let mut end = stream.end;

    let mut explicit: Vec<TimedOp> = Vec::new();
    for seg in &stream.segs {
        end = end.max(seg.end_time());
        match seg {
            StreamSeg::One(t) => {
                if t.at < 0.0 {
                    return Err(SimError::Protocol("negative timestamp".into()));
                }
                explicit.push(*t);
            }
            StreamSeg::Loop {
                start,
                period,
                iterations,
                body,
            } => {
                if *iterations == 0 || body.is_empty() {
                    continue;
                }
                if !(*period > 0.0) || *start < 0.0 {
                    return Err(SimError::Protocol(
                        "loop period must be positive and start non-negative".into(),
                    ));
                }
                let is_refresh = body
                    .iter()
                    .all(|t| matches!(t.op, StreamOp::RefAll | StreamOp::RefRow { .. }));
                let is_activity = body
                    .iter()
                    .all(|t| matches!(t.op, StreamOp::Act { .. } | StreamOp::Pre));
                if !is_refresh && !is_activity {
                    return Err(SimError::Protocol(
                        "loop bodies may not mix activation and refresh commands".into(),
                    ));
                }
                for w in body.windows(2) {
                    if w[1].at < w[0].at {
                        return Err(SimError::Protocol("loop body out of order".into()));
                    }
                }
                if body[0].at < 0.0 || body.last().unwrap().at > *period {
                    return Err(SimError::Protocol(
                        "loop body offsets must lie within one period".into(),
                    ));
                }

                if is_refresh {
                    let ref_all_in_body = body
                        .iter()
                        .filter(|t| matches!(t.op, StreamOp::RefAll))
                        .count();
                    if ref_all_in_body > 1 {
                        return Err(SimError::Protocol(
                            "at most one all-bank refresh per loop body".into(),
                        ));
                    }
                    for t in body {
                        let per = Periodic {
                            start: start + t.at,
                            period: *period,
                            count: *iterations,
                        };
                        match t.op {
                            StreamOp::RefAll => ref_all_srcs.push(RefAllSrc::Loop {
                                start: start + t.at,
                                period: *period,
                                count: *iterations,
                            }),
                            StreamOp::RefRow { row } => {
                                if row >= array.total_rows() {
                                    return Err(SimError::Input(format!(
                                        "refresh row {row} out of range"
                                    )));
                                }
                                row_events.entry(row).or_default().periodic.push(per);
                                refresh_loop_periodics.push(per);
                            }
                            _ => unreachable!(),
                        }
                    }
                    continue;
                }

                // Activation loop: pair ACT/PRE into windows.
                let mut raw_wins: Vec<(usize, f64, f64)> = Vec::new();
                let mut open: Option<(usize, f64)> = None;
                for t in body {
                    match t.op {
                        StreamOp::Act { row } => {
                            if open.is_some() {
                                return Err(SimError::Protocol("loop body double-activate".into()));
                            }
                            open = Some((row, t.at));
                        }
                        StreamOp::Pre => {
                            let (row, at) = open.take().ok_or_else(|| {
                                SimError::Protocol("loop body PRE without ACT".into())
                            })?;
                            raw_wins.push((row, at, t.at));
                        }
                        _ => unreachable!(),
                    }
                }
                if open.is_some() {
                    return Err(SimError::Protocol(
                        "loop body leaves a row open across iterations".into(),
                    ));
                }
                let mut wins = Vec::with_capacity(raw_wins.len());
                for (row, off0, off1) in raw_wins {
                    let row_ix = intern_row(array, bank, row, &mut drive_rows, &mut drive_ix)?;
                    wins.push(BodyWin { off0, off1, row_ix });
                    // Restore at each PRE.
                    row_events.entry(row).or_default().periodic.push(Periodic {
                        start: start + off1,
                        period: *period,
                        count: *iterations,
                    });
                    let inc = 1.0 + (off1 - off0) / timings.t_ras;
                    for victim in hammer_victims(array, row, opts.hammer_radius) {
                        let list = hammer.entry(victim).or_default();
                        if let Some(HammerEvents::Block {
                            start: bs,
                            period: bp,
                            count: bc,
                            fires,
                        }) = list.last_mut()
                        {
                            if *bs == *start && *bp == *period && *bc == *iterations {
                                fires.push((off1, inc));
                                fires.sort_by(|a, b| a.0.total_cmp(&b.0));
                                continue;
                            }
                        }
                        list.push(HammerEvents::Block {
                            start: *start,
                            period: *period,
                            count: *iterations,
                            fires: vec![(off1, inc)],
                        });
                    }
                }
                activities.push(Activity::Loop {
                    start: *start,
                    period: *period,
                    iterations: *iterations,
                    wins,
                });
            }
        }
    }

    // Refresh-first, then PRE, then ACT on equal timestamps.
    let priority = |op: &StreamOp| match op {
        StreamOp::RefAll | StreamOp::RefRow { .. } => 0,
        StreamOp::Pre => 1,
        StreamOp::Act { .. } => 2,
        StreamOp::Idle { .. } => 3,
    };
    explicit.sort_by(|a, b| {
        a.at.total_cmp(&b.at)
            .then_with(|| priority(&a.op).cmp(&priority(&b.op)))
    });

    let mut open: Option<(usize, f64)> = None;
    for t in &explicit {
        match t.op {
            StreamOp::Act { row } => {
                if open.is_some() {
                    return Err(SimError::Protocol(format!(
                        "activate at {} while a row is open",
                        t.at
                    )));
                }
                open = Some((row, t.at));
            }
            StreamOp::Pre => {
                let (row, at) = open.take().ok_or_else(|| {
                    SimError::Protocol(format!("precharge at {} with no open row", t.at))
                })?;
                let row_ix = intern_row(array, bank, row, &mut drive_rows, &mut drive_ix)?;
                activities.push(Activity::Window {
                    t0: at,
                    t1: t.at,
                    row_ix,
                });
                row_events.entry(row).or_default().times.push(t.at);
                let inc = 1.0 + (t.at - at) / timings.t_ras;
                for victim in hammer_victims(array, row, opts.hammer_radius) {
                    hammer
                        .entry(victim)
                        .or_default()
                        .push(HammerEvents::Hit { t: t.at, inc });
                }
            }
            StreamOp::RefAll => {
                ref_all_srcs.push(RefAllSrc::One { at: t.at });
                explicit_refresh_times.push(t.at);
            }
            StreamOp::RefRow { row } => {
                if row >= array.total_rows() {
                    return Err(SimError::Input(format!("refresh row {row} out of range")));
                }
                row_events.entry(row).or_default().times.push(t.at);
                explicit_refresh_times.push(t.at);
            }
            StreamOp::Idle { .. } => {}
        }
    }
    if let Some((row, at)) = open {
        // Stream ends with the row still open: close the window at the
        // horizon, without a restore.
        let row_ix = intern_row(array, bank, row, &mut drive_rows, &mut drive_ix)?;
        activities.push(Activity::Window {
            t0: at,
            t1: end,
            row_ix,
        });
    }

    activities.sort_by(|a, b| a.span().0.total_cmp(&b.span().0));
    for pair in activities.windows(2) {
        if pair[1].span().0 < pair[0].span().1 {
            return Err(SimError::Protocol(
                "overlapping activations (two rows open at once)".into(),
            ));
        }
    }
    for ev in row_events.values_mut() {
        ev.times.sort_by(f64::total_cmp);
    }
    for list in hammer.values_mut() {
        list.sort_by(|a, b| a.start().total_cmp(&b.start()));
    }

    // Rotate the refresh slice counter through the all-bank refresh
    // sources in time order and hand each row the commands that cover its
    // slot. Sources may not interleave (a rotation split across two
    // concurrent streams has no defined counter order).
    ref_all_srcs.sort_by(|a, b| a.span().0.total_cmp(&b.span().0));
    for pair in ref_all_srcs.windows(2) {
        if pair[1].span().0 <= pair[0].span().1 && pair[0].commands() > 0 {
            return Err(SimError::Protocol(
                "overlapping all-bank refresh sources".into(),
            ));
        }
    }
    let total_rows = array.total_rows();
    let mut refresh_all: Vec<RowEvents> = (0..total_rows).map(|_| RowEvents::default()).collect();
    let mut counter: u64 = 0;
    for src in &ref_all_srcs {
        match src {
            RefAllSrc::One { at } => {
                let slot = counter % REFRESH_SLOTS;
                for row in rows_for_slot(slot, total_rows) {
                    refresh_all[row].times.push(*at);
                }
                counter += 1;
            }
            RefAllSrc::Loop {
                start,
                period,
                count,
            } => {
                let c0 = counter % REFRESH_SLOTS;
                for (row, events) in refresh_all.iter_mut().enumerate() {
                    let slot = refresh_slot(row, total_rows);
                    let i0 = (slot + REFRESH_SLOTS - c0) % REFRESH_SLOTS;
                    if i0 < *count {
                        events.periodic.push(Periodic {
                            start: start + period * i0 as f64,
                            period: period * REFRESH_SLOTS as f64,
                            count: (*count - 1 - i0) / REFRESH_SLOTS + 1,
                        });
                    }
                }
                counter += *count;
            }
        }
        if let RefAllSrc::Loop {
            start,
            period,
            count,
        } = src
        {
            refresh_loop_periodics.push(Periodic {
                start: *start,
                period: *period,
                count: *count,
            });
        }
    }

    // Conflict accounting: exact membership for explicit refreshes, a
    // proportional estimate for compressed loops.
    let in_open_window = |t: f64| -> bool {
        activities.iter().any(|act| {
            let (s0, s1) = act.span();
            if t < s0 || t >= s1 {
                return false;
            }
            match act {
                Activity::Window { .. } => true,
                Activity::Loop {
                    start,
                    period,
                    wins,
                    ..
                } => {
                    let off = (t - start) % period;
                    wins.iter().any(|w| off >= w.off0 && off < w.off1)
                }
            }
        })
    };
    for &t in &explicit_refresh_times {
        if in_open_window(t) {
            conflicts += 1;
        }
    }
    for per in &refresh_loop_periodics {
        conflicts += periodic_conflicts(per, &activities);
    }

    Ok(Prepared {
        activities,
        drive_rows,
        refresh_all,
        row_events,
        hammer,
        conflicts,
        end,
    })
}

/// Rows owned by a refresh rotation slot.
fn rows_for_slot(slot: u64, total_rows: usize) -> std::ops::Range<usize> {
    let lo = (slot * total_rows as u64).div_ceil(REFRESH_SLOTS) as usize;
    let hi = ((slot + 1) * total_rows as u64).div_ceil(REFRESH_SLOTS) as usize;
    lo..hi.min(total_rows)
}

fn periodic_conflicts(per: &Periodic, activities: &[Activity]) -> u64 {
    let mut n = 0.0;
    for act in activities {
        match act {
            Activity::Window { t0, t1, .. } => {
                n += fires_in(per, *t0, *t1) as f64;
            }
            Activity::Loop {
                start,
                period,
                iterations,
                wins,
            } => {
                let span_end = start + period * *iterations as f64;
                let a = per.start.max(*start);
                let b = per.last().min(span_end);
                if b <= a {
                    continue;
                }
                let open_frac: f64 = wins.iter().map(|w| w.off1 - w.off0).sum::<f64>() / period;
                n += fires_in(per, a, b) as f64 * open_frac;
            }
        }
    }
    n.round() as u64
}

// ---------------------------------------------------------------------------
// Per-cell rate view
// ---------------------------------------------------------------------------

enum ActRates {
    Win { rate: f64 },
    Loop { win_rates: Vec<f64>, per_iter: f64 },
}

struct CellRates {
    rate_half: f64,
    acts: Vec<ActRates>,
    rate_max: f64,
    /// First instant the cell's column is driven away from VDD/2, if ever.
    first_exposure: f64,
}

/// Drive level seen by a cell at (subarray, col) when `drive`'s row is open,
/// or `None` when the cell's column is not perturbed (stays at VDD/2).
#[inline]
fn level_for(drive: &DriveRow, cell_sub: usize, col: usize, vdd: f64) -> Option<f64> {
    let k = drive.subarray;
    let src = if cell_sub == k {
        col
    } else if k > 0 && cell_sub == k - 1 {
        // The lower neighbor's odd columns are the aggressor's even columns.
        if !col.is_multiple_of(2) {
            col - 1
        } else {
            return None;
        }
    } else if cell_sub == k + 1 {
        // The upper neighbor's even columns are the aggressor's odd columns.
        if col.is_multiple_of(2) {
            col + 1
        } else {
            return None;
        }
    } else {
        return None;
    };
    if src >= drive.levels.len() {
        return None;
    }
    Some(match drive.levels[src] {
        Drive::Gnd => 0.0,
        Drive::Vdd => vdd,
    })
}

fn cell_rates(
    prepared: &Prepared,
    profile: &CellProfile,
    cell_sub: usize,
    col: usize,
    vdd: f64,
    temp_scale: f64,
) -> CellRates {
    let rate_at = |v: f64| -> f64 {
        let t = profile.t_flip_at(v, vdd) * temp_scale;
        if t.is_infinite() {
            0.0
        } else {
            1.0 / t
        }
    };
    let rate_half = rate_at(vdd * 0.5);
    let mut rate_max = rate_half;
    let mut first_exposure = f64::INFINITY;
    let mut acts = Vec::with_capacity(prepared.activities.len());
    for act in &prepared.activities {
        match act {
            Activity::Window { t0, row_ix, .. } => {
                let rate = match level_for(&prepared.drive_rows[*row_ix], cell_sub, col, vdd) {
                    Some(v) => {
                        first_exposure = first_exposure.min(*t0);
                        rate_at(v)
                    }
                    None => rate_half,
                };
                rate_max = rate_max.max(rate);
                acts.push(ActRates::Win { rate });
            }
            Activity::Loop {
                start,
                period,
                wins,
                ..
            } => {
                let mut win_rates = Vec::with_capacity(wins.len());
                let mut open_time = 0.0;
                let mut open_damage = 0.0;
                for w in wins {
                    let rate = match level_for(&prepared.drive_rows[w.row_ix], cell_sub, col, vdd) {
                        Some(v) => {
                            first_exposure = first_exposure.min(start + w.off0);
                            rate_at(v)
                        }
                        None => rate_half,
                    };
                    rate_max = rate_max.max(rate);
                    open_time += w.off1 - w.off0;
                    open_damage += (w.off1 - w.off0) * rate;
                    win_rates.push(rate);
                }
                let per_iter = open_damage + (period - open_time) * rate_half;
                acts.push(ActRates::Loop {
                    win_rates,
                    per_iter,
                });
            }
        }
    }
    CellRates {
        rate_half,
        acts,
        rate_max,
        first_exposure,
    }
}

// ---------------------------------------------------------------------------
// Damage walking
// ---------------------------------------------------------------------------

enum WalkResult {
    Accrued(f64),
    Crossed(f64),
}

#[inline]
fn uniform_step(t0: f64, t1: f64, rate: f64, acc: f64, budget: f64) -> WalkResult {
    if t1 <= t0 {
        return WalkResult::Accrued(acc);
    }
    let d = (t1 - t0) * rate;
    if rate > 0.0 && acc + d >= budget {
        WalkResult::Crossed(t0 + (budget - acc) / rate)
    } else {
        WalkResult::Accrued(acc + d)
    }
}

/// Largest number of whole steps of size `per_step` that keeps the running
/// total strictly below `budget_left` (so the crossing step is walked
/// explicitly), capped at `max_steps`.
fn safe_full_steps(budget_left: f64, per_step: f64, max_steps: u64) -> u64 {
    if per_step <= 0.0 || budget_left.is_infinite() {
        return max_steps;
    }
    let k = (budget_left / per_step).floor();
    let mut k = if k.is_finite() && k > 0.0 {
        k as u64
    } else {
        0
    };
    while k > 0 && per_step * k as f64 >= budget_left {
        k -= 1;
    }
    k.min(max_steps)
}

struct DamageWalker<'a> {
    prepared: &'a Prepared,
    rates: &'a CellRates,
}

impl<'a> DamageWalker<'a> {
    fn new(prepared: &'a Prepared, rates: &'a CellRates) -> Self {
        DamageWalker { prepared, rates }
    }

    fn damage_between(&self, a: f64, b: f64) -> f64 {
        match self.walk(a, b, f64::INFINITY) {
            WalkResult::Accrued(d) => d,
            WalkResult::Crossed(_) => unreachable!("infinite budget cannot cross"),
        }
    }

    fn crossing(&self, a: f64, b: f64, budget: f64) -> Option<f64> {
        if budget <= 0.0 {
            return Some(a);
        }
        match self.walk(a, b, budget) {
            WalkResult::Accrued(_) => None,
            WalkResult::Crossed(t) => Some(t),
        }
    }

    fn walk(&self, a: f64, b: f64, budget: f64) -> WalkResult {
        let mut acc = 0.0;
        let mut cursor = a;
        if b <= a {
            return WalkResult::Accrued(0.0);
        }
        let half = self.rates.rate_half;
        for (act, rates) in self.prepared.activities.iter().zip(&self.rates.acts) {
            let (s0, s1) = act.span();
            if s1 <= cursor {
                continue;
            }
            if s0 >= b {
                break;
            }
            let gap_end = s0.min(b).max(cursor);
            match uniform_step(cursor, gap_end, half, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
            cursor = gap_end;
            if cursor >= b {
                return WalkResult::Accrued(acc);
            }
            let lo = cursor.max(s0);
            let hi = b.min(s1);
            match self.walk_activity(act, rates, lo, hi, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
            cursor = hi;
            if cursor >= b {
                return WalkResult::Accrued(acc);
            }
        }
        if cursor < b {
            match uniform_step(cursor, b, half, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
        }
        WalkResult::Accrued(acc)
    }

    fn walk_activity(
        &self,
        act: &Activity,
        rates: &ActRates,
        a: f64,
        b: f64,
        acc0: f64,
        budget: f64,
    ) -> WalkResult {
        match (act, rates) {
            (Activity::Window { t0, t1, .. }, ActRates::Win { rate }) => {
                uniform_step(a.max(*t0), b.min(*t1), *rate, acc0, budget)
            }
            (
                Activity::Loop {
                    start,
                    period,
                    iterations,
                    wins,
                },
                ActRates::Loop {
                    win_rates,
                    per_iter,
                },
            ) => {
                let mut acc = acc0;
                let loop_end = start + period * *iterations as f64;
                let a = a.max(*start);
                let b = b.min(loop_end);
                if b <= a {
                    return WalkResult::Accrued(acc);
                }
                let mut i = (((a - start) / period).floor().max(0.0)) as u64;
                while i < *iterations {
                    let it_start = start + period * i as f64;
                    if it_start >= b {
                        break;
                    }
                    let it_end = it_start + period;
                    if a <= it_start && it_end <= b {
                        // Run of fully covered iterations.
                        let whole_limit =
                            ((((b - start) / period).floor()) as u64).min(*iterations);
                        let n = whole_limit - i;
                        if n > 0 {
                            let k = safe_full_steps(budget - acc, *per_iter, n);
                            acc += per_iter * k as f64;
                            if k == n {
                                i = whole_limit;
                                continue;
                            }
                            // Crossing expected inside iteration i + k.
                            let base = start + period * (i + k) as f64;
                            match self.walk_iteration(
                                base,
                                *period,
                                wins,
                                win_rates,
                                base,
                                base + period,
                                acc,
                                budget,
                            ) {
                                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                                WalkResult::Accrued(d) => {
                                    // Rounding pushed the crossing out of
                                    // this iteration; continue stepping.
                                    acc = d;
                                    i += k + 1;
                                    continue;
                                }
                            }
                        }
                    }
                    // Partial iteration.
                    let lo = a.max(it_start);
                    let hi = b.min(it_end);
                    match self
                        .walk_iteration(it_start, *period, wins, win_rates, lo, hi, acc, budget)
                    {
                        WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                        WalkResult::Accrued(d) => acc = d,
                    }
                    i += 1;
                }
                WalkResult::Accrued(acc)
            }
            _ => unreachable!("activity/rate mismatch"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_iteration(
        &self,
        it_start: f64,
        period: f64,
        wins: &[BodyWin],
        win_rates: &[f64],
        a: f64,
        b: f64,
        acc0: f64,
        budget: f64,
    ) -> WalkResult {
        let half = self.rates.rate_half;
        let mut acc = acc0;
        let mut cursor = a;
        for (w, &rate) in wins.iter().zip(win_rates) {
            let w0 = it_start + w.off0;
            let w1 = it_start + w.off1;
            if w1 <= cursor {
                continue;
            }
            if w0 >= b {
                break;
            }
            let gap_end = w0.min(b).max(cursor);
            match uniform_step(cursor, gap_end, half, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
            cursor = gap_end;
            if cursor >= b {
                return WalkResult::Accrued(acc);
            }
            match uniform_step(cursor.max(w0), b.min(w1), rate, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
            cursor = b.min(w1);
        }
        let tail_end = (it_start + period).min(b);
        if cursor < tail_end {
            match uniform_step(cursor, tail_end, half, acc, budget) {
                WalkResult::Crossed(t) => return WalkResult::Crossed(t),
                WalkResult::Accrued(d) => acc = d,
            }
        }
        WalkResult::Accrued(acc)
    }
}

// ---------------------------------------------------------------------------
// Reset schedules
// ---------------------------------------------------------------------------

/// Merged, time-ordered reset times for one row: global refreshes plus
/// row-local refreshes and restores. Few sources, so a linear min scan per
/// step is fine.
struct ResetIter<'a> {
    explicit: Vec<&'a [f64]>,
    cursors: Vec<usize>,
    periodic: Vec<Periodic>,
    fired: Vec<u64>,
    end: f64,
}

impl<'a> ResetIter<'a> {
    fn new(refresh_all: &'a RowEvents, row: Option<&'a RowEvents>, end: f64) -> Self {
        let mut explicit = vec![refresh_all.times.as_slice()];
        let mut periodic = refresh_all.periodic.clone();
        if let Some(ev) = row {
            explicit.push(&ev.times);
            periodic.extend_from_slice(&ev.periodic);
        }
        let cursors = vec![0; explicit.len()];
        let fired = vec![0; periodic.len()];
        ResetIter {
            explicit,
            cursors,
            periodic,
            fired,
            end,
        }
    }

    fn is_empty(&self) -> bool {
        self.explicit.iter().all(|s| s.is_empty()) && self.periodic.iter().all(|p| p.count == 0)
    }

    /// Upper bound on the largest reset-free gap in [0, end]: the merged
    /// schedule's largest gap cannot exceed the smallest single-source gap.
    fn gap_bound(&self, end: f64) -> f64 {
        let mut bound = end;
        for src in &self.explicit {
            if src.is_empty() {
                continue;
            }
            let mut g = src[0];
            for w in src.windows(2) {
                g = g.max(w[1] - w[0]);
            }
            g = g.max(end - src[src.len() - 1]);
            bound = bound.min(g);
        }
        for p in &self.periodic {
            if p.count == 0 {
                continue;
            }
            let g = p.start.max(p.period).max(end - p.last());
            bound = bound.min(g);
        }
        bound
    }

    /// Latest reset at or before `t`, if any.
    fn last_before(&self, t: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for src in &self.explicit {
            let i = src.partition_point(|&v| v <= t);
            if i > 0 {
                let v = src[i - 1];
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        for p in &self.periodic {
            if p.count == 0 || p.start > t {
                continue;
            }
            let k = (((t - p.start) / p.period).floor() as u64).min(p.count - 1);
            let v = p.start + p.period * k as f64;
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
        best
    }
}

impl Iterator for ResetIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for (src, cur) in self.explicit.iter().zip(&self.cursors) {
            if *cur < src.len() {
                let v = src[*cur];
                min = Some(min.map_or(v, |m: f64| m.min(v)));
            }
        }
        for (p, fired) in self.periodic.iter().zip(&self.fired) {
            if *fired < p.count {
                let v = p.start + p.period * *fired as f64;
                min = Some(min.map_or(v, |m: f64| m.min(v)));
            }
        }
        let v = min?;
        if v > self.end {
            return None;
        }
        for (src, cur) in self.explicit.iter().zip(self.cursors.iter_mut()) {
            while *cur < src.len() && src[*cur] <= v {
                *cur += 1;
            }
        }
        for (p, fired) in self.periodic.iter().zip(self.fired.iter_mut()) {
            while *fired < p.count && p.start + p.period * *fired as f64 <= v {
                *fired += 1;
            }
        }
        Some(v)
    }
}

// ---------------------------------------------------------------------------
// Hammer resolution
// ---------------------------------------------------------------------------

/// Earliest time hammer damage reaches 1 for a cell with `threshold`,
/// starting at `h0`, with resets applied refresh-first.
fn hammer_crossing(
    events: &[HammerEvents],
    threshold: f64,
    h0: f64,
    resets: ResetIter<'_>,
    end: f64,
) -> Option<f64> {
    let mut reset_times: Vec<f64> = resets.collect();
    reset_times.push(f64::INFINITY);
    let mut ri = 0usize;
    let mut h = h0;

    for ev in events {
        while reset_times[ri] <= ev.start() {
            h = 0.0;
            ri += 1;
        }
        match ev {
            HammerEvents::Hit { t, inc } => {
                if *t > end {
                    return None;
                }
                h += inc / threshold;
                if h >= 1.0 {
                    return Some(*t);
                }
            }
            HammerEvents::Block {
                start,
                period,
                count,
                fires,
            } => {
                let per_iter: f64 = fires.iter().map(|(_, inc)| inc / threshold).sum();
                let mut i = 0u64;
                while i < *count {
                    let it_base = start + period * i as f64;
                    if it_base > end {
                        return None;
                    }
                    let next_reset = reset_times[ri];
                    // Whole iterations before the next reset: closed form.
                    let run_end = if next_reset.is_finite() {
                        ((((next_reset - start) / period).floor()).max(0.0) as u64).min(*count)
                    } else {
                        *count
                    };
                    if run_end > i && per_iter > 0.0 {
                        let n = run_end - i;
                        let k = safe_full_steps(1.0 - h, per_iter, n);
                        h += per_iter * k as f64;
                        if k == n {
                            i = run_end;
                            continue;
                        }
                        // Crossing expected inside iteration i + k.
                        let base = start + period * (i + k) as f64;
                        let mut crossed = None;
                        for (off, inc) in fires {
                            h += inc / threshold;
                            if h >= 1.0 {
                                crossed = Some(base + off);
                                break;
                            }
                        }
                        match crossed {
                            Some(t) if t <= end => return Some(t),
                            Some(_) => return None,
                            None => {
                                i += k + 1;
                                continue;
                            }
                        }
                    } else if run_end > i {
                        // No damage per iteration: skip the run.
                        i = run_end;
                        continue;
                    }
                    // A reset interleaves this iteration: fire by fire.
                    for (off, inc) in fires {
                        let t = it_base + off;
                        if t > end {
                            return None;
                        }
                        while reset_times[ri] <= t {
                            h = 0.0;
                            ri += 1;
                        }
                        h += inc / threshold;
                        if h >= 1.0 {
                            return Some(t);
                        }
                    }
                    i += 1;
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Execute
// ---------------------------------------------------------------------------

/// Run a command stream against the array and report every bitflip.
pub fn execute(
    array: &mut DramArray,
    stream: &CommandStream,
    timings: &TimingParams,
    temperature: &Temperature,
) -> Result<BitflipReport> {
    execute_opts(
        array,
        stream,
        timings,
        temperature,
        &EngineOptions::default(),
    )
}

pub fn execute_opts(
    array: &mut DramArray,
    stream: &CommandStream,
    timings: &TimingParams,
    temperature: &Temperature,
    opts: &EngineOptions,
) -> Result<BitflipReport> {
    timings.validate()?;
    if opts.hammer_radius > 2 {
        return Err(SimError::Config("hammer radius is limited to 2".into()));
    }
    let prepared = prepare(array, stream, timings, opts)?;
    let end = prepared.end;
    let temp_scale = temperature.scale();
    let vdd = array.geometry().vdd;
    let stream_bank = stream.bank;

    let mut records: Vec<BitflipRecord> = Vec::new();

    for bank in 0..array.banks() {
        let in_stream_bank = bank == stream_bank;
        for subarray in 0..array.layout().subarrays() {
            for row in array.layout().row_range(subarray) {
                let row_events = if in_stream_bank {
                    prepared.row_events.get(&row)
                } else {
                    None
                };
                let hammer_events = if in_stream_bank {
                    prepared.hammer.get(&row)
                } else {
                    None
                };
                let make_resets = || ResetIter::new(&prepared.refresh_all[row], row_events, end);
                let probe = make_resets();
                let has_resets = !probe.is_empty();
                let gap_bound = probe.gap_bound(end);
                let last_reset = if has_resets {
                    make_resets().last_before(end)
                } else {
                    None
                };

                for col in 0..array.columns_per_row() {
                    let profile = *array.profile(bank, row, col);
                    let st = *array.state(bank, row, col);
                    if st.flipped_at.is_some() {
                        continue;
                    }
                    let charged = DramArray::is_charged(&profile, st.stored_bit);

                    let rates = if in_stream_bank {
                        cell_rates(&prepared, &profile, subarray, col, vdd, temp_scale)
                    } else {
                        let t = profile.t_flip_at(vdd * 0.5, vdd) * temp_scale;
                        let rate_half = if t.is_infinite() { 0.0 } else { 1.0 / t };
                        CellRates {
                            rate_half,
                            acts: Vec::new(),
                            rate_max: rate_half,
                            first_exposure: f64::INFINITY,
                        }
                    };
                    let walker = DamageWalker::new(&prepared, &rates);

                    // Voltage-damage candidate.
                    let mut t_v: Option<f64> = None;
                    let mut final_damage = st.damage;
                    if charged && rates.rate_max > 0.0 {
                        let may_cross = st.damage + end * rates.rate_max >= 1.0;
                        let gap_safe = st.damage + gap_bound * rates.rate_max < 1.0;
                        if may_cross && !gap_safe {
                            let mut a = 0.0;
                            let mut d = st.damage;
                            let mut crossed = None;
                            for r in make_resets() {
                                if r >= end {
                                    break;
                                }
                                if let Some(t) = walker.crossing(a, r, 1.0 - d) {
                                    crossed = Some(t);
                                    break;
                                }
                                a = r;
                                d = 0.0;
                            }
                            if crossed.is_none() {
                                crossed = walker.crossing(a, end, 1.0 - d);
                            }
                            t_v = crossed;
                        }
                        if t_v.is_none() {
                            match last_reset {
                                Some(r) => final_damage = walker.damage_between(r, end),
                                None => final_damage = st.damage + walker.damage_between(0.0, end),
                            }
                        }
                    }

                    // Hammer candidate.
                    let mut t_h: Option<f64> = None;
                    if let Some(events) = hammer_events {
                        let compatible = match profile.hammer_direction {
                            FlipDirection::OneToZero => st.stored_bit == 1,
                            FlipDirection::ZeroToOne => st.stored_bit == 0,
                        };
                        if compatible && profile.rh_threshold.is_finite() {
                            t_h = hammer_crossing(
                                events,
                                profile.rh_threshold,
                                st.hammer_damage,
                                make_resets(),
                                end,
                            );
                        }
                    }

                    let winner = match (t_v, t_h) {
                        (Some(v), Some(h)) => Some(if h <= v { (h, true) } else { (v, false) }),
                        (Some(v), None) => Some((v, false)),
                        (None, Some(h)) => Some((h, true)),
                        (None, None) => None,
                    };

                    match winner {
                        Some((t, by_hammer)) => {
                            let (direction, cause, new_bit) = if by_hammer {
                                let dir = profile.hammer_direction;
                                let bit = match dir {
                                    FlipDirection::OneToZero => 0,
                                    FlipDirection::ZeroToOne => 1,
                                };
                                (dir, FlipCause::RowHammerRowPress, bit)
                            } else {
                                let dir = match profile.polarity {
                                    Polarity::TrueCell => FlipDirection::OneToZero,
                                    Polarity::AntiCell => FlipDirection::ZeroToOne,
                                };
                                let cause = if rates.first_exposure < t {
                                    FlipCause::ColumnDisturb
                                } else {
                                    FlipCause::RetentionBaseline
                                };
                                (dir, cause, DramArray::discharged_bit(&profile))
                            };
                            records.push(BitflipRecord {
                                bank,
                                subarray,
                                row,
                                col,
                                time: t,
                                direction,
                                cause,
                            });
                            let s = array.state_mut(bank, row, col);
                            s.stored_bit = new_bit;
                            s.damage = 1.0;
                            s.hammer_damage = 0.0;
                            s.flipped_at = Some(t);
                        }
                        None => {
                            let s = array.state_mut(bank, row, col);
                            s.damage = final_damage;
                            if last_reset.is_some() {
                                s.hammer_damage = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    records.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.bank.cmp(&b.bank))
            .then(a.subarray.cmp(&b.subarray))
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });

    let layout = array.layout();
    Ok(BitflipReport {
        records,
        duration: end,
        conflicts: prepared.conflicts,
        banks: array.banks(),
        columns_per_row: array.columns_per_row(),
        subarray_sizes: (0..layout.subarrays()).map(|s| layout.rows_in(s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_array, AnchorDist, DataPattern, DramGeometry, ProfileDistribution};
    use crate::stream::{idle_stream, single_aggressor_counted};
    use crate::units::MS;

    fn geometry(cols: usize) -> DramGeometry {
        DramGeometry {
            banks: 1,
            subarrays_per_bank: 3,
            rows_per_subarray: 16,
            columns_per_row: cols,
            vdd: 1.0,
        }
    }

    fn dist(gnd_ms: f64, half_ms: f64) -> ProfileDistribution {
        ProfileDistribution {
            t_flip_gnd: AnchorDist::constant(gnd_ms * MS),
            t_flip_half: AnchorDist::constant(half_ms * MS),
            t_flip_vdd: AnchorDist::infinite(),
            rh_threshold: AnchorDist::infinite(),
            anti_cell_fraction: 0.0,
            hammer_zero_to_one_fraction: 0.5,
        }
    }

    #[test]
    fn avg_voltage_worked_example() {
        let v = avg_column_voltage(36.0, 14.0, 0.0, 1.0).unwrap();
        assert_eq!(v, 0.14);
    }

    #[test]
    fn avg_voltage_at_half_is_constant() {
        for (ta, trp) in [(36.0, 14.0), (70200.0, 14.0), (1.0, 99.0)] {
            let v = avg_column_voltage(ta, trp, 0.5, 1.0).unwrap();
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn avg_voltage_long_press() {
        let v = avg_column_voltage(70.2 * crate::units::US, 14.0, 0.0, 1.0).unwrap();
        assert!((v - (0.5 * 14.0) / 70214.0).abs() < 1e-18);
        assert!((v - 9.97e-5).abs() < 1e-7);
    }

    #[test]
    fn avg_voltage_rejects_zero_denominator() {
        assert!(avg_column_voltage(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn idle_cell_flips_exactly_at_retention_time() {
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ONE);
        let stream = idle_stream(0, 40.0 * MS);
        let report = execute(
            &mut arr,
            &stream,
            &TimingParams::default(),
            &Temperature::reference(),
        )
        .unwrap();
        // Damage reaches exactly 1 at the horizon boundary.
        assert_eq!(report.len(), arr.total_rows() * arr.columns_per_row());
        for r in &report.records {
            assert!((r.time - 40.0 * MS).abs() < 1e-6);
            assert_eq!(r.cause, FlipCause::RetentionBaseline);
            assert_eq!(r.direction, FlipDirection::OneToZero);
        }
    }

    #[test]
    fn idle_all_zero_never_flips() {
        let mut arr = build_array(geometry(8), &dist(1.0, 2.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ZERO);
        let stream = idle_stream(0, 100.0 * MS);
        let report = execute(
            &mut arr,
            &stream,
            &TimingParams::default(),
            &Temperature::reference(),
        )
        .unwrap();
        assert!(report.is_empty());
    }

    #[test]
    fn press_spreads_across_three_subarrays_only() {
        let mut arr = build_array(geometry(8), &dist(20.0, 500.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ONE);
        let agg = 16 + 8; // middle subarray
        arr.init_region(0, agg..agg + 1, DataPattern::ALL_ZERO)
            .unwrap();
        let t = TimingParams::default();
        let n = (100.0 * MS / t.loop_period()).ceil() as u64;
        let stream = single_aggressor_counted(0, agg, &t, n);
        let report = execute(&mut arr, &stream, &t, &Temperature::reference()).unwrap();
        assert!(!report.is_empty());
        let cd: Vec<_> = report
            .records
            .iter()
            .filter(|r| r.cause == FlipCause::ColumnDisturb)
            .collect();
        assert!(!cd.is_empty());
        assert!(cd.iter().all(|r| r.subarray <= 2));
        assert!(cd.iter().any(|r| r.subarray == 0));
        assert!(cd.iter().any(|r| r.subarray == 1));
        assert!(cd.iter().any(|r| r.subarray == 2));
        // Directionality: charged-to-discharged only.
        assert!(report
            .records
            .iter()
            .all(|r| r.direction == FlipDirection::OneToZero));
    }

    #[test]
    fn refresh_window_protects_rows_and_slices_rotate() {
        // All-bank refresh rotates: a 20 ms window (one REF_all every
        // window / 8192) refreshes each row every 20 ms, which keeps cells
        // with 40 ms retention alive over 100 ms.
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ONE);
        let window = 20.0 * MS;
        let t_refi = window / REFRESH_SLOTS as f64;
        let mut stream = idle_stream(0, 100.0 * MS);
        stream.push(crate::stream::StreamSeg::Loop {
            start: 0.0,
            period: t_refi,
            iterations: (100.0 * MS / t_refi) as u64,
            body: vec![crate::stream::TimedOp {
                at: t_refi,
                op: StreamOp::RefAll,
            }],
        });
        let report = execute(
            &mut arr,
            &stream,
            &TimingParams::default(),
            &Temperature::reference(),
        )
        .unwrap();
        assert!(report.is_empty(), "{} flips", report.len());

        // A 60 ms window leaves rows unrefreshed past their 40 ms retention.
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ONE);
        let window = 60.0 * MS;
        let t_refi = window / REFRESH_SLOTS as f64;
        let mut stream = idle_stream(0, 100.0 * MS);
        stream.push(crate::stream::StreamSeg::Loop {
            start: 0.0,
            period: t_refi,
            iterations: (100.0 * MS / t_refi) as u64,
            body: vec![crate::stream::TimedOp {
                at: t_refi,
                op: StreamOp::RefAll,
            }],
        });
        let report = execute(
            &mut arr,
            &stream,
            &TimingParams::default(),
            &Temperature::reference(),
        )
        .unwrap();
        assert!(!report.is_empty(), "rows beyond the window must fail");
    }

    #[test]
    fn double_activate_is_protocol_error() {
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_all(DataPattern::ALL_ONE);
        let mut stream = CommandStream::new(0);
        stream.push(StreamSeg::One(TimedOp {
            at: 0.0,
            op: StreamOp::Act { row: 1 },
        }));
        stream.push(StreamSeg::One(TimedOp {
            at: 10.0,
            op: StreamOp::Act { row: 2 },
        }));
        let err = execute(
            &mut arr,
            &stream,
            &TimingParams::default(),
            &Temperature::reference(),
        );
        assert!(matches!(err, Err(SimError::Protocol(_))));
    }

    #[test]
    fn rowclone_same_subarray_copies() {
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_region(0, 3..4, DataPattern(0xAA)).unwrap();
        arr.init_region(0, 5..6, DataPattern(0x55)).unwrap();
        assert_eq!(rowclone(&mut arr, 0, 3, 5).unwrap(), CloneOutcome::Copied);
        for col in 0..8 {
            assert_eq!(
                arr.state(0, 5, col).stored_bit,
                arr.state(0, 3, col).stored_bit
            );
        }
    }

    #[test]
    fn rowclone_cross_subarray_leaves_dst() {
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_region(0, 3..4, DataPattern(0xAA)).unwrap();
        arr.init_region(0, 20..21, DataPattern(0x55)).unwrap();
        assert_eq!(
            rowclone(&mut arr, 0, 3, 20).unwrap(),
            CloneOutcome::CrossSubarray
        );
        for col in 0..8 {
            assert_eq!(arr.state(0, 20, col).stored_bit, DataPattern(0x55).bit(col));
        }
    }

    #[test]
    fn rowclone_identity_is_noop() {
        let mut arr = build_array(geometry(8), &dist(10.0, 40.0), 1).unwrap();
        arr.init_region(0, 3..4, DataPattern(0xAA)).unwrap();
        assert_eq!(rowclone(&mut arr, 0, 3, 3).unwrap(), CloneOutcome::Copied);
        for col in 0..8 {
            assert_eq!(arr.state(0, 3, col).stored_bit, DataPattern(0xAA).bit(col));
        }
        assert!(rowclone(&mut arr, 0, 3, 999).is_err());
    }

    #[test]
    fn temperature_scale_matches_speedup() {
        let p = TempProfile::from_speedup_45_to_95(9.05).unwrap();
        assert!((p.scale(45.0) / p.scale(95.0) - 9.05).abs() < 1e-9);
        assert!((p.scale(85.0) - 1.0).abs() < 1e-12);
        assert!(p.scale(95.0) < p.scale(85.0));
    }

    use crate::stream::{CommandStream, StreamSeg, TimedOp};
}
