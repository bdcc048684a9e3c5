//! Timestamped command streams.
//!
//! A stream is a sequence of segments: single timestamped commands or
//! compressed loops (a short body repeated at a fixed period). Loops keep
//! long hammer/press runs tractable: a 36 ns aggressor pressed for 512 ms is
//! ten million ACT/PRE pairs, which the engine consumes in closed form
//! instead of one event at a time.
//!
//! Timestamps are f64 nanoseconds from the start of the run.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// DRAM timing parameters in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    /// Minimum activate-to-precharge delay.
    #[serde(default = "d_t_ras")]
    pub t_ras: f64,
    /// Precharge-to-activate delay.
    #[serde(default = "d_t_rp")]
    pub t_rp: f64,
    /// Time the aggressor row stays open per activation; >= t_ras.
    #[serde(default = "d_t_agg_on")]
    pub t_agg_on: f64,
    /// Refresh window.
    #[serde(default = "d_t_refw")]
    pub t_refw: f64,
    /// All-bank refresh command latency.
    #[serde(default = "d_t_rfc")]
    pub t_rfc: f64,
    /// Cost of refreshing a single row.
    #[serde(default = "d_t_row_refresh")]
    pub t_row_refresh: f64,
}

fn d_t_ras() -> f64 {
    36.0
}
fn d_t_rp() -> f64 {
    14.0
}
fn d_t_agg_on() -> f64 {
    70.2 * crate::units::US
}
fn d_t_refw() -> f64 {
    64.0 * crate::units::MS
}
fn d_t_rfc() -> f64 {
    410.0
}
fn d_t_row_refresh() -> f64 {
    70.0
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_ras: d_t_ras(),
            t_rp: d_t_rp(),
            t_agg_on: d_t_agg_on(),
            t_refw: d_t_refw(),
            t_rfc: d_t_rfc(),
            t_row_refresh: d_t_row_refresh(),
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_ras", self.t_ras),
            ("t_rp", self.t_rp),
            ("t_agg_on", self.t_agg_on),
            ("t_refw", self.t_refw),
            ("t_rfc", self.t_rfc),
            ("t_row_refresh", self.t_row_refresh),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.t_agg_on < self.t_ras {
            return Err(SimError::Config(format!(
                "t_agg_on ({}) must be >= t_ras ({})",
                self.t_agg_on, self.t_ras
            )));
        }
        Ok(())
    }

    /// Period of one ACT/PRE hammer iteration.
    pub fn loop_period(&self) -> f64 {
        self.t_agg_on + self.t_rp
    }
}

/// One DRAM command (or an explicit idle gap).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamOp {
    Act { row: usize },
    Pre,
    RefAll,
    RefRow { row: usize },
    Idle { duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedOp {
    pub at: f64,
    pub op: StreamOp,
}

/// A stream segment: one command or a periodic loop. Loop body offsets are
/// relative to the iteration start and must stay below the period; loop
/// bodies that open a row must close it before the iteration ends.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamSeg {
    One(TimedOp),
    Loop {
        start: f64,
        period: f64,
        iterations: u64,
        body: Vec<TimedOp>,
    },
}

impl StreamSeg {
    pub fn start_time(&self) -> f64 {
        match self {
            StreamSeg::One(t) => t.at,
            StreamSeg::Loop { start, .. } => *start,
        }
    }

    pub fn end_time(&self) -> f64 {
        match self {
            StreamSeg::One(t) => match t.op {
                StreamOp::Idle { duration } => t.at + duration,
                _ => t.at,
            },
            StreamSeg::Loop {
                start,
                period,
                iterations,
                ..
            } => start + period * *iterations as f64,
        }
    }
}

/// A per-bank command stream with an explicit simulation horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandStream {
    pub bank: usize,
    pub segs: Vec<StreamSeg>,
    /// Simulation horizon; damage accrues up to this time.
    pub end: f64,
}

impl CommandStream {
    pub fn new(bank: usize) -> Self {
        CommandStream {
            bank,
            segs: Vec::new(),
            end: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segs.is_empty() && self.end == 0.0
    }

    pub fn push(&mut self, seg: StreamSeg) {
        self.end = self.end.max(seg.end_time());
        self.segs.push(seg);
    }

    /// Extend the horizon without adding commands (idle tail).
    pub fn extend_to(&mut self, end: f64) {
        self.end = self.end.max(end);
    }

    /// Count commands of each kind: (ACT, REF_all, REF_row).
    pub fn op_counts(&self) -> (u64, u64, u64) {
        let mut acts = 0;
        let mut ref_all = 0;
        let mut ref_row = 0;
        for seg in &self.segs {
            let (mult, body): (u64, &[TimedOp]) = match seg {
                StreamSeg::One(t) => (1, std::slice::from_ref(t)),
                StreamSeg::Loop {
                    iterations, body, ..
                } => (*iterations, body),
            };
            for t in body {
                match t.op {
                    StreamOp::Act { .. } => acts += mult,
                    StreamOp::RefAll => ref_all += mult,
                    StreamOp::RefRow { .. } => ref_row += mult,
                    _ => {}
                }
            }
        }
        (acts, ref_all, ref_row)
    }

    /// Expand to individual timestamped commands, sorted by time. Intended
    /// for small streams (oracles, debugging); errors above `cap` ops.
    pub fn flatten(&self, cap: usize) -> Result<Vec<TimedOp>> {
        let mut out = Vec::new();
        for seg in &self.segs {
            match seg {
                StreamSeg::One(t) => out.push(*t),
                StreamSeg::Loop {
                    start,
                    period,
                    iterations,
                    body,
                } => {
                    let total = body.len() as u64 * *iterations;
                    if out.len() as u64 + total > cap as u64 {
                        return Err(SimError::Input(format!(
                            "stream too large to flatten (cap {cap})"
                        )));
                    }
                    for i in 0..*iterations {
                        let base = start + period * i as f64;
                        for t in body {
                            out.push(TimedOp {
                                at: base + t.at,
                                op: t.op,
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.at.total_cmp(&b.at));
        Ok(out)
    }

    /// Merge another stream into this one (same bank). Commands keep their
    /// timestamps; the engine applies refreshes first on ties.
    pub fn merge(mut self, other: CommandStream) -> Result<CommandStream> {
        if self.bank != other.bank {
            return Err(SimError::Input(
                "cannot merge streams of different banks".into(),
            ));
        }
        self.end = self.end.max(other.end);
        self.segs.extend(other.segs);
        self.segs
            .sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
        Ok(self)
    }
}

/// Access-pattern shape for characterization runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessPatternKind {
    /// One aggressor: the perturbed columns swing between the aggressor's
    /// data level and VDD/2.
    SingleAggressor,
    /// Two aggressors with complementary data in the same subarray: the
    /// columns cycle data -> VDD/2 -> complement -> VDD/2.
    TwoAggressor,
}

impl std::fmt::Display for AccessPatternKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccessPatternKind::SingleAggressor => write!(f, "single"),
            AccessPatternKind::TwoAggressor => write!(f, "two-aggressor"),
        }
    }
}

/// Hammer/press loop for one aggressor, by iteration count.
pub fn single_aggressor_counted(
    bank: usize,
    row: usize,
    timings: &TimingParams,
    iterations: u64,
) -> CommandStream {
    let mut s = CommandStream::new(bank);
    if iterations == 0 {
        return s;
    }
    s.push(StreamSeg::Loop {
        start: 0.0,
        period: timings.loop_period(),
        iterations,
        body: vec![
            TimedOp {
                at: 0.0,
                op: StreamOp::Act { row },
            },
            TimedOp {
                at: timings.t_agg_on,
                op: StreamOp::Pre,
            },
        ],
    });
    s
}

/// Alternating two-aggressor loop, by iteration count (each iteration
/// activates both rows once).
pub fn two_aggressor_counted(
    bank: usize,
    row1: usize,
    row2: usize,
    timings: &TimingParams,
    iterations: u64,
) -> CommandStream {
    let mut s = CommandStream::new(bank);
    if iterations == 0 {
        return s;
    }
    let half = timings.t_agg_on + timings.t_rp;
    s.push(StreamSeg::Loop {
        start: 0.0,
        period: 2.0 * half,
        iterations,
        body: vec![
            TimedOp {
                at: 0.0,
                op: StreamOp::Act { row: row1 },
            },
            TimedOp {
                at: timings.t_agg_on,
                op: StreamOp::Pre,
            },
            TimedOp {
                at: half,
                op: StreamOp::Act { row: row2 },
            },
            TimedOp {
                at: half + timings.t_agg_on,
                op: StreamOp::Pre,
            },
        ],
    });
    s
}

/// An idle (precharged) stream of the given duration.
pub fn idle_stream(bank: usize, duration: f64) -> CommandStream {
    let mut s = CommandStream::new(bank);
    s.extend_to(duration);
    s
}

/// Build the characterization access pattern covering `total_duration`.
///
/// Single aggressor: `floor(duration / (t_agg_on + t_rp))` ACT/PRE pairs.
/// Two aggressors must be distinct rows of the same subarray (their data
/// patterns are complementary by construction of the experiment, which
/// initializes the rows; the stream itself only encodes timing).
pub fn build_access_pattern(
    array: &crate::array::DramArray,
    bank: usize,
    kind: AccessPatternKind,
    rows: &[usize],
    timings: &TimingParams,
    total_duration: f64,
) -> Result<CommandStream> {
    timings.validate()?;
    if total_duration < 0.0 {
        return Err(SimError::Input("duration must be non-negative".into()));
    }
    for &r in rows {
        if r >= array.total_rows() {
            return Err(SimError::Input(format!("aggressor row {r} out of range")));
        }
    }
    let mut stream = match kind {
        AccessPatternKind::SingleAggressor => {
            let &[row] = rows else {
                return Err(SimError::Input(
                    "single-aggressor pattern takes exactly one row".into(),
                ));
            };
            let n = (total_duration / timings.loop_period()).floor() as u64;
            single_aggressor_counted(bank, row, timings, n)
        }
        AccessPatternKind::TwoAggressor => {
            let &[r1, r2] = rows else {
                return Err(SimError::Input(
                    "two-aggressor pattern takes exactly two rows".into(),
                ));
            };
            if r1 == r2 {
                return Err(SimError::Input("two-aggressor rows must differ".into()));
            }
            let s1 = array.layout().subarray_of_row(r1);
            let s2 = array.layout().subarray_of_row(r2);
            if s1 != s2 {
                return Err(SimError::Input(
                    "two-aggressor rows must share a subarray".into(),
                ));
            }
            let n = (total_duration / (2.0 * timings.loop_period())).floor() as u64;
            two_aggressor_counted(bank, r1, r2, timings, n)
        }
    };
    stream.extend_to(total_duration);
    Ok(stream)
}
