//! Measurement algorithms on top of the engine: bisection search for the
//! time to the first bitflip, blast radius and fraction-of-cells metrics,
//! subarray boundary reverse engineering via row-copy probing, failure
//! filtering, and parameter sweeps.

use serde::{Deserialize, Serialize};

use crate::array::{build_array, DataPattern, DramArray, DramGeometry, ProfileDistribution};
use crate::engine::{execute_opts, BitflipReport, EngineOptions, FlipCause, Temperature};
use crate::error::{Result, SimError};
use crate::stream::{idle_stream, AccessPatternKind, TimingParams};
use crate::units::MS;

/// Aggressor placement within the tested subarray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggressorLocation {
    Beginning,
    Middle,
    End,
    /// Explicit row offset within the subarray.
    Row(usize),
}

impl std::fmt::Display for AggressorLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggressorLocation::Beginning => write!(f, "beginning"),
            AggressorLocation::Middle => write!(f, "middle"),
            AggressorLocation::End => write!(f, "end"),
            AggressorLocation::Row(r) => write!(f, "row{r}"),
        }
    }
}

/// One characterization experiment: aggressor placement and data, access
/// pattern shape, timings, temperature, and the refresh-free interval the
/// pattern runs for.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub location: AggressorLocation,
    pub aggressor_pattern: DataPattern,
    /// Victim data; `None` uses the negated aggressor pattern.
    pub victim_pattern: Option<DataPattern>,
    pub access: AccessPatternKind,
    pub timings: TimingParams,
    pub temperature: Temperature,
    /// Experiment duration: no refresh is issued for this long.
    pub refresh_interval: f64,
    /// Rows around the aggressor excluded from column-disturb metrics.
    pub exclusion_radius: usize,
    pub engine: EngineOptions,
}

impl ExperimentSpec {
    pub fn new(timings: TimingParams, temperature: Temperature, refresh_interval: f64) -> Self {
        ExperimentSpec {
            location: AggressorLocation::Middle,
            aggressor_pattern: DataPattern::ALL_ZERO,
            victim_pattern: None,
            access: AccessPatternKind::SingleAggressor,
            timings,
            temperature,
            refresh_interval,
            exclusion_radius: 8,
            engine: EngineOptions::default(),
        }
    }

    pub fn victim(&self) -> DataPattern {
        self.victim_pattern
            .unwrap_or_else(|| self.aggressor_pattern.negated())
    }

    /// Aggressor rows (global indices) for the given subarray. The second
    /// aggressor of a two-aggressor pattern sits two rows from the first so
    /// the pair does not hammer each other.
    pub fn aggressor_rows(&self, array: &DramArray, subarray: usize) -> Result<Vec<usize>> {
        let range = array.layout().row_range(subarray);
        let n = range.len();
        let first = match self.location {
            AggressorLocation::Beginning => range.start,
            AggressorLocation::Middle => range.start + n / 2,
            AggressorLocation::End => range.end - 1,
            AggressorLocation::Row(i) => {
                if i >= n {
                    return Err(SimError::Input(format!(
                        "aggressor offset {i} outside subarray of {n} rows"
                    )));
                }
                range.start + i
            }
        };
        match self.access {
            AccessPatternKind::SingleAggressor => Ok(vec![first]),
            AccessPatternKind::TwoAggressor => {
                let second = if first + 2 < range.end {
                    first + 2
                } else {
                    first - 2
                };
                Ok(vec![first, second])
            }
        }
    }

    /// ACT-to-ACT period of the access pattern loop.
    pub fn loop_duration(&self) -> f64 {
        match self.access {
            AccessPatternKind::SingleAggressor => self.timings.loop_period(),
            AccessPatternKind::TwoAggressor => 2.0 * self.timings.loop_period(),
        }
    }
}

/// Outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: BitflipReport,
    pub aggressor_rows: Vec<usize>,
}

/// Initialize the bank for the experiment and run the access pattern for a
/// given number of loop iterations (the horizon still extends to
/// `refresh_interval` when `duration` exceeds the looped span).
pub fn run_point_counted(
    array: &mut DramArray,
    bank: usize,
    spec: &ExperimentSpec,
    subarray: usize,
    iterations: u64,
    horizon: f64,
) -> Result<RunOutcome> {
    let rows = spec.aggressor_rows(array, subarray)?;
    array.init_region(bank, 0..array.total_rows(), spec.victim())?;
    array.init_region(bank, rows[0]..rows[0] + 1, spec.aggressor_pattern)?;
    if rows.len() == 2 {
        // Complementary data in the second aggressor.
        array.init_region(bank, rows[1]..rows[1] + 1, spec.aggressor_pattern.negated())?;
    }
    let mut stream = match spec.access {
        AccessPatternKind::SingleAggressor => {
            crate::stream::single_aggressor_counted(bank, rows[0], &spec.timings, iterations)
        }
        AccessPatternKind::TwoAggressor => {
            crate::stream::two_aggressor_counted(bank, rows[0], rows[1], &spec.timings, iterations)
        }
    };
    stream.extend_to(horizon);
    let report = execute_opts(
        array,
        &stream,
        &spec.timings,
        &spec.temperature,
        &spec.engine,
    )?;
    Ok(RunOutcome {
        report,
        aggressor_rows: rows,
    })
}

/// Run the experiment's access pattern over its whole refresh interval.
pub fn run_point(
    array: &mut DramArray,
    bank: usize,
    spec: &ExperimentSpec,
    subarray: usize,
) -> Result<RunOutcome> {
    let iterations = (spec.refresh_interval / spec.loop_duration()).floor() as u64;
    run_point_counted(
        array,
        bank,
        spec,
        subarray,
        iterations,
        spec.refresh_interval,
    )
}

/// Column-disturb flips in a subarray after excluding the hammer guardband
/// around the aggressors.
pub fn column_disturb_flips(
    outcome: &RunOutcome,
    subarray: usize,
    radius: usize,
) -> impl Iterator<Item = &crate::engine::BitflipRecord> {
    let aggressors = outcome.aggressor_rows.clone();
    outcome
        .report
        .in_subarray(subarray)
        .filter(move |r| r.cause == FlipCause::ColumnDisturb)
        .filter(move |r| aggressors.iter().all(|&a| r.row.abs_diff(a) > radius))
}

// ---------------------------------------------------------------------------
// Bisection search
// ---------------------------------------------------------------------------

/// Cap on the searched interval: a subarray with no flip inside this span
/// gets the sentinel result.
pub const BISECT_CAP: f64 = 512.0 * MS;

/// Search repetitions; the minimum across repeats is returned.
pub const BISECT_REPEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub subarray_id: usize,
    /// Time to the first column-disturb flip; `None` when nothing flips
    /// within the cap.
    pub time_to_first_flip: Option<f64>,
    /// Engine probes executed across all repeats.
    pub iterations: usize,
}

/// Bisection over the hammer count: find the minimal number of access-loop
/// iterations that induces a column-disturb flip in `subarray`, and convert
/// it to time via the loop period. The search terminates once consecutive
/// measurements differ by less than 1% and is repeated five times (the
/// minimum across repeats is returned).
pub fn bisect_time_to_first_flip(
    array: &mut DramArray,
    bank: usize,
    spec: &ExperimentSpec,
    subarray: usize,
) -> Result<SearchResult> {
    bisect_with_cap(array, bank, spec, subarray, BISECT_CAP)
}

pub fn bisect_with_cap(
    array: &mut DramArray,
    bank: usize,
    spec: &ExperimentSpec,
    subarray: usize,
    cap: f64,
) -> Result<SearchResult> {
    let loop_len = spec.loop_duration();
    let cap_n = (cap / loop_len).floor() as u64;
    let mut probes = 0usize;

    let probe = |array: &mut DramArray, n: u64, probes: &mut usize| -> Result<bool> {
        *probes += 1;
        let horizon = n as f64 * loop_len;
        let outcome = run_point_counted(array, bank, spec, subarray, n, horizon)?;
        let any = column_disturb_flips(&outcome, subarray, spec.exclusion_radius)
            .next()
            .is_some();
        Ok(any)
    };

    if cap_n == 0 || !probe(array, cap_n, &mut probes)? {
        return Ok(SearchResult {
            subarray_id: subarray,
            time_to_first_flip: None,
            iterations: probes,
        });
    }

    let mut best: Option<f64> = None;
    for _ in 0..BISECT_REPEATS {
        let mut lo = 0u64; // known not to flip
        let mut hi = cap_n; // known to flip
                            // A measurement is a count observed to flip; the search stops once
                            // consecutive measurements agree within 1%. Probes that fail to
                            // flip narrow the interval without producing a measurement, so the
                            // stop rule always certifies a 1% bound on the returned value.
        let mut prev_measure = hi as f64 * loop_len;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if probe(array, mid, &mut probes)? {
                hi = mid;
                let cur = mid as f64 * loop_len;
                let converged = (prev_measure - cur).abs() < 0.01 * prev_measure;
                prev_measure = cur;
                if converged {
                    break;
                }
            } else {
                lo = mid;
            }
        }
        let t = hi as f64 * loop_len;
        best = Some(best.map_or(t, |b: f64| b.min(t)));
    }
    Ok(SearchResult {
        subarray_id: subarray,
        time_to_first_flip: best,
        iterations: probes,
    })
}

// ---------------------------------------------------------------------------
// Report metrics
// ---------------------------------------------------------------------------

/// Number of distinct rows of the subarray with at least one flip.
pub fn blast_radius(report: &BitflipReport, subarray: usize) -> usize {
    let mut rows: Vec<usize> = report.in_subarray(subarray).map(|r| r.row).collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

/// Distinct flipped cells over total cells of the subarray.
pub fn fraction_cells_with_flips(report: &BitflipReport, subarray: usize) -> f64 {
    let mut cells: Vec<(usize, usize)> = report
        .in_subarray(subarray)
        .map(|r| (r.row, r.col))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let total = report.cells_in_subarray(subarray);
    if total == 0 {
        0.0
    } else {
        cells.len() as f64 / total as f64
    }
}

// ---------------------------------------------------------------------------
// Subarray reverse engineering
// ---------------------------------------------------------------------------

/// Recover subarray boundaries by probing row copies: a copy between two
/// rows succeeds exactly when they share a subarray, so probing consecutive
/// pairs walks every boundary. The probe only reads cell contents; it never
/// consults the layout. Scratches the array's data.
pub fn reverse_engineer_subarrays(
    array: &mut DramArray,
    bank: usize,
) -> Result<Vec<std::ops::Range<usize>>> {
    let total = array.total_rows();
    let src_pat = DataPattern(0xAA);
    let dst_pat = DataPattern(0x55);
    let mut boundaries = vec![0usize];
    for row in 0..total.saturating_sub(1) {
        array.init_region(bank, row..row + 1, src_pat)?;
        array.init_region(bank, row + 1..row + 2, dst_pat)?;
        crate::engine::rowclone(array, bank, row, row + 1)?;
        let copied = (0..array.columns_per_row())
            .all(|col| array.state(bank, row + 1, col).stored_bit == src_pat.bit(col));
        if !copied {
            boundaries.push(row + 1);
        }
    }
    boundaries.push(total);
    Ok(boundaries.windows(2).map(|w| w[0]..w[1]).collect())
}

// ---------------------------------------------------------------------------
// Failure profiles and filtering
// ---------------------------------------------------------------------------

/// Per-cell minimum observed flip time for one bank, from repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureProfile {
    pub bank: usize,
    pub total_rows: usize,
    pub columns_per_row: usize,
    /// Observation window: times are only meaningful up to this duration.
    pub duration: f64,
    /// `total_rows * columns_per_row` entries; infinity = never failed.
    pub min_flip: Vec<f64>,
}

impl FailureProfile {
    fn empty(array: &DramArray, bank: usize, duration: f64) -> Self {
        FailureProfile {
            bank,
            total_rows: array.total_rows(),
            columns_per_row: array.columns_per_row(),
            duration,
            min_flip: vec![f64::INFINITY; array.total_rows() * array.columns_per_row()],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.min_flip[row * self.columns_per_row + col]
    }

    fn absorb(&mut self, report: &BitflipReport) {
        for r in &report.records {
            let ix = r.row * self.columns_per_row + r.col;
            if r.time < self.min_flip[ix] {
                self.min_flip[ix] = r.time;
            }
        }
    }

    /// Pointwise minimum of two profiles over the same geometry.
    pub fn merged(&self, other: &FailureProfile) -> Result<FailureProfile> {
        if self.min_flip.len() != other.min_flip.len() {
            return Err(SimError::Input("profile geometry mismatch".into()));
        }
        let mut out = self.clone();
        out.duration = self.duration.max(other.duration);
        for (a, b) in out.min_flip.iter_mut().zip(&other.min_flip) {
            *a = a.min(*b);
        }
        Ok(out)
    }

    /// Persist as a flat text file keyed by cell coordinate.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bank,row,col,min_flip_ns")?;
        for row in 0..self.total_rows {
            for col in 0..self.columns_per_row {
                let v = self.at(row, col);
                if v.is_finite() {
                    writeln!(f, "{},{},{},{}", self.bank, row, col, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(
        path: &std::path::Path,
        bank: usize,
        total_rows: usize,
        columns_per_row: usize,
        duration: f64,
    ) -> Result<FailureProfile> {
        let text = std::fs::read_to_string(path)?;
        let mut profile = FailureProfile {
            bank,
            total_rows,
            columns_per_row,
            duration,
            min_flip: vec![f64::INFINITY; total_rows * columns_per_row],
        };
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(SimError::Input(format!("bad profile line {}", i + 1)));
            }
            let row: usize = parts[1]
                .parse()
                .map_err(|_| SimError::Input(format!("bad row on line {}", i + 1)))?;
            let col: usize = parts[2]
                .parse()
                .map_err(|_| SimError::Input(format!("bad col on line {}", i + 1)))?;
            let v: f64 = parts[3]
                .parse()
                .map_err(|_| SimError::Input(format!("bad value on line {}", i + 1)))?;
            if row >= total_rows || col >= columns_per_row {
                return Err(SimError::Input(format!(
                    "coordinate out of range, line {}",
                    i + 1
                )));
            }
            profile.min_flip[row * columns_per_row + col] = v;
        }
        Ok(profile)
    }
}

/// Patterns covering both charge states of every cell.
pub fn retention_test_patterns() -> Vec<DataPattern> {
    let base = [0x00u8, 0xAA, 0x11, 0x33, 0x77];
    let mut v: Vec<DataPattern> = base.iter().map(|&b| DataPattern(b)).collect();
    v.extend(base.iter().map(|&b| DataPattern(!b)));
    v
}

/// Retention profile: idle runs over each data pattern, repeated to catch
/// the worst case, keeping each cell's minimum observed flip time.
pub fn profile_retention(
    array: &DramArray,
    bank: usize,
    duration: f64,
    timings: &TimingParams,
    temperature: &Temperature,
    patterns: &[DataPattern],
    repeats: usize,
) -> Result<FailureProfile> {
    let mut profile = FailureProfile::empty(array, bank, duration);
    for &pattern in patterns {
        for _ in 0..repeats.max(1) {
            let mut scratch = array.clone();
            scratch.init_region(bank, 0..scratch.total_rows(), pattern)?;
            let stream = idle_stream(bank, duration);
            let report = execute_opts(
                &mut scratch,
                &stream,
                timings,
                temperature,
                &EngineOptions::default(),
            )?;
            profile.absorb(&report);
        }
    }
    Ok(profile)
}

/// Disturbance-inclusive profile: on top of retention, press the middle row
/// of every subarray with the worst-case all-zero aggressor pattern and
/// record each cell's earliest flip.
pub fn profile_disturbance(
    array: &DramArray,
    bank: usize,
    duration: f64,
    spec: &ExperimentSpec,
) -> Result<FailureProfile> {
    let mut profile = profile_retention(
        array,
        bank,
        duration,
        &spec.timings,
        &spec.temperature,
        &retention_test_patterns(),
        1,
    )?;
    for subarray in 0..array.layout().subarrays() {
        let mut scratch = array.clone();
        let mut point = spec.clone();
        point.refresh_interval = duration;
        point.location = AggressorLocation::Middle;
        point.aggressor_pattern = DataPattern::ALL_ZERO;
        point.victim_pattern = Some(DataPattern::ALL_ONE);
        let outcome = run_point(&mut scratch, bank, &point, subarray)?;
        profile.absorb(&outcome.report);
    }
    Ok(profile)
}

/// Drop flips explained by something other than column disturbance: rows
/// within the hammer guardband of an aggressor, and cells whose profiled
/// minimum retention does not outlast the experiment interval.
pub fn filter_known_failures(
    report: &BitflipReport,
    profile: &FailureProfile,
    aggressor_rows: &[usize],
    radius: usize,
) -> BitflipReport {
    let mut out = report.clone();
    out.records.retain(|r| {
        if aggressor_rows.iter().any(|&a| r.row.abs_diff(a) <= radius) {
            return false;
        }
        profile.at(r.row, r.col) > report.duration
    });
    out
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    TimeToFirstFlip,
    BlastRadius,
    FractionCells,
    TotalFlips,
}

/// Cartesian sweep axes; every axis must be non-empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub temperatures_c: Vec<f64>,
    pub t_agg_ons: Vec<f64>,
    pub aggressor_patterns: Vec<DataPattern>,
    pub access_kinds: Vec<AccessPatternKind>,
    pub locations: Vec<AggressorLocation>,
    pub refresh_intervals: Vec<f64>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.temperatures_c.len()
            * self.t_agg_ons.len()
            * self.aggressor_patterns.len()
            * self.access_kinds.len()
            * self.locations.len()
            * self.refresh_intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &temp in &self.temperatures_c {
            for &t_agg_on in &self.t_agg_ons {
                for &pattern in &self.aggressor_patterns {
                    for &access in &self.access_kinds {
                        for &location in &self.locations {
                            for &interval in &self.refresh_intervals {
                                out.push(SweepPoint {
                                    temperature_c: temp,
                                    t_agg_on,
                                    aggressor_pattern: pattern,
                                    access,
                                    location,
                                    refresh_interval: interval,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub temperature_c: f64,
    pub t_agg_on: f64,
    pub aggressor_pattern: DataPattern,
    pub access: AccessPatternKind,
    pub location: AggressorLocation,
    pub refresh_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub subarray: usize,
    pub time_to_first_flip: Option<f64>,
    pub blast_radius: Option<usize>,
    pub fraction_cells: Option<f64>,
    pub total_flips: Option<usize>,
}

/// Run every grid point against a fresh deterministic array (same seed per
/// point, so cross-point comparisons see identical cells) and collect the
/// requested metrics for the target subarray.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    geometry: DramGeometry,
    distribution: &ProfileDistribution,
    seed: u64,
    base: &ExperimentSpec,
    grid: &SweepGrid,
    metrics: &[Metric],
    bank: usize,
    subarray: usize,
    temp_speedup: f64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(SimError::Config("sweep grid has an empty axis".into()));
    }
    if metrics.is_empty() {
        return Err(SimError::Config("sweep needs at least one metric".into()));
    }
    let points = grid.points();
    use rayon::prelude::*;
    let rows: Result<Vec<SweepRow>> = points
        .par_iter()
        .map(|point| -> Result<SweepRow> {
            let mut spec = base.clone();
            spec.temperature = Temperature::new(point.temperature_c, temp_speedup)?;
            spec.timings.t_agg_on = point.t_agg_on;
            spec.timings.validate()?;
            spec.aggressor_pattern = point.aggressor_pattern;
            spec.victim_pattern = None;
            spec.access = point.access;
            spec.location = point.location;
            spec.refresh_interval = point.refresh_interval;

            let mut array = build_array(geometry, distribution, seed)?;
            let mut row = SweepRow {
                point: *point,
                subarray,
                time_to_first_flip: None,
                blast_radius: None,
                fraction_cells: None,
                total_flips: None,
            };
            let needs_run = metrics.iter().any(|m| {
                matches!(
                    m,
                    Metric::BlastRadius | Metric::FractionCells | Metric::TotalFlips
                )
            });
            if needs_run {
                let outcome = run_point(&mut array, bank, &spec, subarray)?;
                let cd: Vec<_> = column_disturb_flips(&outcome, subarray, spec.exclusion_radius)
                    .cloned()
                    .collect();
                let filtered = BitflipReport {
                    records: cd,
                    ..outcome.report.clone()
                };
                for m in metrics {
                    match m {
                        Metric::BlastRadius => {
                            row.blast_radius = Some(blast_radius(&filtered, subarray))
                        }
                        Metric::FractionCells => {
                            row.fraction_cells =
                                Some(fraction_cells_with_flips(&filtered, subarray))
                        }
                        Metric::TotalFlips => row.total_flips = Some(filtered.records.len()),
                        Metric::TimeToFirstFlip => {}
                    }
                }
            }
            if metrics.contains(&Metric::TimeToFirstFlip) {
                let result = bisect_time_to_first_flip(&mut array, bank, &spec, subarray)?;
                row.time_to_first_flip = result.time_to_first_flip;
            }
            Ok(row)
        })
        .collect();
    rows
}
