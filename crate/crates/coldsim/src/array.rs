//! DRAM array model: bank geometry, the open-bitline column-sharing
//! topology between adjacent subarrays, per-cell flip-time profiles, and
//! data-pattern initialization.
//!
//! Column sharing follows the open-bitline convention: a subarray's even
//! local columns are the same physical bitlines as the lower-indexed
//! neighbor's odd columns (even column `c` of subarray `k` is odd column
//! `c + 1` of subarray `k - 1`), and symmetrically its odd columns pair with
//! the higher-indexed neighbor's even columns. At the bank edges the
//! unpaired half terminates at edge sense amplifiers and perturbs nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::Stream;

/// Bank geometry. Counts must be positive; rows and columns per subarray
/// must be even so the even/odd bitline split is well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramGeometry {
    pub banks: usize,
    pub subarrays_per_bank: usize,
    pub rows_per_subarray: usize,
    pub columns_per_row: usize,
    /// Normalized supply voltage; 1.0 = VDD.
    #[serde(default = "default_vdd")]
    pub vdd: f64,
}

fn default_vdd() -> f64 {
    1.0
}

impl DramGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.banks == 0 || self.subarrays_per_bank == 0 {
            return Err(SimError::Config("banks and subarrays must be >= 1".into()));
        }
        if self.rows_per_subarray == 0 || self.columns_per_row == 0 {
            return Err(SimError::Config(
                "rows_per_subarray and columns_per_row must be >= 1".into(),
            ));
        }
        if !self.rows_per_subarray.is_multiple_of(2) {
            return Err(SimError::Config(format!(
                "rows_per_subarray must be even, got {}",
                self.rows_per_subarray
            )));
        }
        if !self.columns_per_row.is_multiple_of(2) {
            return Err(SimError::Config(format!(
                "columns_per_row must be even, got {}",
                self.columns_per_row
            )));
        }
        if !(self.vdd > 0.0) {
            return Err(SimError::Config("vdd must be positive".into()));
        }
        Ok(())
    }

    pub fn rows_per_bank(&self) -> usize {
        self.subarrays_per_bank * self.rows_per_subarray
    }
}

/// A physical column identified by subarray and local column index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub subarray_id: usize,
    pub local_column: usize,
}

/// Cell charge encoding. A true cell stores logic 1 fully charged; an
/// anti cell stores logic 1 fully discharged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    TrueCell,
    AntiCell,
}

/// Direction of a recorded bitflip in logical bit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipDirection {
    OneToZero,
    ZeroToOne,
}

impl std::fmt::Display for FlipDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlipDirection::OneToZero => write!(f, "1->0"),
            FlipDirection::ZeroToOne => write!(f, "0->1"),
        }
    }
}

/// Per-cell flip-time anchors and hammer susceptibility.
///
/// `t_flip_gnd <= t_flip_half <= t_flip_vdd` (a cell discharges faster the
/// further its bitline sits below the stored level; `t_flip_half` is the
/// plain retention time, and `t_flip_vdd` may be infinite). All durations
/// are nanoseconds at the 85 °C reference temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProfile {
    pub t_flip_gnd: f64,
    pub t_flip_half: f64,
    pub t_flip_vdd: f64,
    pub polarity: Polarity,
    /// RowHammer threshold in single-activation units; may be infinite.
    pub rh_threshold: f64,
    /// Direction a hammer-induced flip takes for this cell.
    pub hammer_direction: FlipDirection,
}

impl CellProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_flip_gnd > 0.0 && self.t_flip_half > 0.0 && self.t_flip_vdd > 0.0) {
            return Err(SimError::Config("flip times must be positive".into()));
        }
        if !(self.t_flip_gnd <= self.t_flip_half && self.t_flip_half <= self.t_flip_vdd) {
            return Err(SimError::Config(
                "flip times must be monotone in bitline voltage".into(),
            ));
        }
        Ok(())
    }

    /// Flip time at bitline voltage `v` (normalized to `vdd`): piecewise
    /// linear through the three anchors. An infinite upper anchor makes the
    /// whole open interval above VDD/2 infinite.
    pub fn t_flip_at(&self, v: f64, vdd: f64) -> f64 {
        let half = vdd * 0.5;
        if v <= 0.0 {
            self.t_flip_gnd
        } else if v == half {
            self.t_flip_half
        } else if v >= vdd {
            self.t_flip_vdd
        } else if v < half {
            let w = v / half;
            self.t_flip_gnd + w * (self.t_flip_half - self.t_flip_gnd)
        } else if self.t_flip_vdd.is_infinite() {
            f64::INFINITY
        } else {
            let w = (v - half) / half;
            self.t_flip_half + w * (self.t_flip_vdd - self.t_flip_half)
        }
    }
}

/// Mutable per-cell state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub stored_bit: u8,
    /// Consumed fraction of the flip time since the last restore.
    pub damage: f64,
    /// Accumulated hammer damage since the last restore.
    pub hammer_damage: f64,
    /// Set when the cell flipped; cleared only by re-initialization.
    pub flipped_at: Option<f64>,
}

impl CellState {
    fn fresh(bit: u8) -> Self {
        CellState {
            stored_bit: bit,
            damage: 0.0,
            hammer_damage: 0.0,
            flipped_at: None,
        }
    }
}

/// Row data pattern: one byte repeated across the row, most significant bit
/// first within each byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataPattern(pub u8);

impl DataPattern {
    pub const ALL_ZERO: DataPattern = DataPattern(0x00);
    pub const ALL_ONE: DataPattern = DataPattern(0xFF);

    /// Logical bit driven onto local column `col`.
    #[inline]
    pub fn bit(&self, col: usize) -> u8 {
        (self.0 >> (7 - (col % 8))) & 1
    }

    pub fn negated(&self) -> DataPattern {
        DataPattern(!self.0)
    }
}

impl std::fmt::Display for DataPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "0x{:02X}", self.0)
    }
}

/// Log-normal sampling spec for one profile anchor. `sigma == 0` pins every
/// sample to the median; an infinite median (JSON `null`) makes the anchor
/// infinite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(from = "AnchorDistRepr", into = "AnchorDistRepr")]
pub struct AnchorDist {
    pub median: f64,
    pub sigma: f64,
}

/// JSON form of [`AnchorDist`]: a `null` median stands for infinity, which
/// JSON cannot express directly.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorDistRepr {
    median: Option<f64>,
    #[serde(default)]
    sigma: f64,
}

impl From<AnchorDistRepr> for AnchorDist {
    fn from(r: AnchorDistRepr) -> Self {
        AnchorDist {
            median: r.median.unwrap_or(f64::INFINITY),
            sigma: r.sigma,
        }
    }
}

impl From<AnchorDist> for AnchorDistRepr {
    fn from(a: AnchorDist) -> Self {
        AnchorDistRepr {
            median: a.median.is_finite().then_some(a.median),
            sigma: a.sigma,
        }
    }
}

impl AnchorDist {
    pub fn constant(median: f64) -> Self {
        AnchorDist { median, sigma: 0.0 }
    }

    pub fn infinite() -> Self {
        AnchorDist {
            median: f64::INFINITY,
            sigma: 0.0,
        }
    }

    fn sample(&self, rng: &mut Stream) -> f64 {
        rng.next_log_normal(self.median, self.sigma)
    }
}

/// Per-cell profile sampling spec. Anchors are drawn independently and then
/// clamped into voltage-monotone order, which preserves each marginal's
/// scale while guaranteeing the profile invariant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDistribution {
    /// Flip time with the bitline held at GND, in ns.
    pub t_flip_gnd: AnchorDist,
    /// Retention time (bitline at VDD/2), in ns.
    pub t_flip_half: AnchorDist,
    /// Flip time with the bitline held at VDD, in ns; usually infinite.
    #[serde(default = "AnchorDist::infinite")]
    pub t_flip_vdd: AnchorDist,
    /// RowHammer threshold in activation units; usually infinite.
    #[serde(default = "AnchorDist::infinite")]
    pub rh_threshold: AnchorDist,
    /// Fraction of anti-cells; 0 keeps the directionality observations in
    /// terms of 1 -> 0.
    #[serde(default)]
    pub anti_cell_fraction: f64,
    /// Fraction of hammer-susceptible cells flipping 0 -> 1 rather than
    /// 1 -> 0.
    #[serde(default = "default_half")]
    pub hammer_zero_to_one_fraction: f64,
}

fn default_half() -> f64 {
    0.5
}

impl ProfileDistribution {
    /// Millisecond-scale illustrative preset. Not calibrated to any
    /// particular chip; heavy-tailed like measured retention distributions.
    pub fn illustrative() -> Self {
        ProfileDistribution {
            t_flip_gnd: AnchorDist {
                median: 150.0 * crate::units::MS,
                sigma: 0.6,
            },
            t_flip_half: AnchorDist {
                median: 900.0 * crate::units::MS,
                sigma: 0.6,
            },
            t_flip_vdd: AnchorDist::infinite(),
            rh_threshold: AnchorDist::infinite(),
            anti_cell_fraction: 0.0,
            hammer_zero_to_one_fraction: 0.5,
        }
    }

    fn sample(&self, rng: &mut Stream) -> CellProfile {
        let gnd = self.t_flip_gnd.sample(rng).max(f64::MIN_POSITIVE);
        let half = self.t_flip_half.sample(rng).max(gnd);
        let vdd = self.t_flip_vdd.sample(rng).max(half);
        let rh = self.rh_threshold.sample(rng).max(1.0);
        let polarity = if self.anti_cell_fraction > 0.0 && rng.next_bool(self.anti_cell_fraction) {
            Polarity::AntiCell
        } else {
            Polarity::TrueCell
        };
        let hammer_direction = if rng.next_bool(self.hammer_zero_to_one_fraction) {
            FlipDirection::ZeroToOne
        } else {
            FlipDirection::OneToZero
        };
        CellProfile {
            t_flip_gnd: gnd,
            t_flip_half: half,
            t_flip_vdd: vdd,
            polarity,
            rh_threshold: rh,
            hammer_direction,
        }
    }
}

/// Subarray layout of a bank: contiguous row ranges. Uniform for arrays
/// built from a [`DramGeometry`]; explicit sizes support boundary
/// reverse-engineering tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubarrayLayout {
    sizes: Vec<usize>,
    starts: Vec<usize>,
    total_rows: usize,
}

impl SubarrayLayout {
    pub fn uniform(subarrays: usize, rows_per_subarray: usize) -> Self {
        Self::explicit(vec![rows_per_subarray; subarrays]).expect("uniform layout")
    }

    pub fn explicit(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(SimError::Config(
                "layout needs at least one subarray".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0 || !s.is_multiple_of(2)) {
            return Err(SimError::Config(
                "subarray sizes must be positive and even".into(),
            ));
        }
        let mut starts = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            starts.push(acc);
            acc += s;
        }
        Ok(SubarrayLayout {
            sizes,
            starts,
            total_rows: acc,
        })
    }

    pub fn subarrays(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn rows_in(&self, subarray: usize) -> usize {
        self.sizes[subarray]
    }

    pub fn start_of(&self, subarray: usize) -> usize {
        self.starts[subarray]
    }

    pub fn subarray_of_row(&self, row: usize) -> Option<usize> {
        if row >= self.total_rows {
            return None;
        }
        match self.starts.binary_search(&row) {
            Ok(i) => Some(i),
            Err(i) => Some(i - 1),
        }
    }

    pub fn row_range(&self, subarray: usize) -> std::ops::Range<usize> {
        let s = self.starts[subarray];
        s..s + self.sizes[subarray]
    }
}

/// The materialized array: per-bank cell profiles and states plus the
/// shared bitline topology.
#[derive(Debug, Clone)]
pub struct DramArray {
    geometry: DramGeometry,
    layout: SubarrayLayout,
    /// `banks * total_rows * columns_per_row` entries, row-major.
    profiles: Vec<CellProfile>,
    states: Vec<CellState>,
    seed: u64,
}

/// Build a deterministic array. Every cell's profile is drawn from a stream
/// keyed by its coordinate, so two builds with equal inputs are bit
/// identical.
pub fn build_array(
    geometry: DramGeometry,
    distribution: &ProfileDistribution,
    seed: u64,
) -> Result<DramArray> {
    geometry.validate()?;
    let layout = SubarrayLayout::uniform(geometry.subarrays_per_bank, geometry.rows_per_subarray);
    build_with_layout(geometry, layout, distribution, seed)
}

/// Build an array with explicit subarray sizes (the bank geometry's
/// row/subarray counts are overridden by the layout).
pub fn build_with_layout(
    geometry: DramGeometry,
    layout: SubarrayLayout,
    distribution: &ProfileDistribution,
    seed: u64,
) -> Result<DramArray> {
    if geometry.banks == 0
        || geometry.columns_per_row == 0
        || !geometry.columns_per_row.is_multiple_of(2)
    {
        return Err(SimError::Config(
            "banks must be >= 1 and columns_per_row positive and even".into(),
        ));
    }
    let cells = geometry.banks * layout.total_rows() * geometry.columns_per_row;
    let mut profiles = Vec::with_capacity(cells);
    let mut states = Vec::with_capacity(cells);
    for bank in 0..geometry.banks {
        for subarray in 0..layout.subarrays() {
            for row in 0..layout.rows_in(subarray) {
                let global_row = layout.start_of(subarray) + row;
                for col in 0..geometry.columns_per_row {
                    let mut rng = Stream::for_cell(seed, bank, subarray, global_row, col);
                    let p = distribution.sample(&mut rng);
                    p.validate()?;
                    profiles.push(p);
                    states.push(CellState::fresh(0));
                }
            }
        }
    }
    Ok(DramArray {
        geometry,
        layout,
        profiles,
        states,
        seed,
    })
}

impl DramArray {
    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn layout(&self) -> &SubarrayLayout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn columns_per_row(&self) -> usize {
        self.geometry.columns_per_row
    }

    pub fn total_rows(&self) -> usize {
        self.layout.total_rows()
    }

    pub fn banks(&self) -> usize {
        self.geometry.banks
    }

    #[inline]
    pub fn cell_index(&self, bank: usize, row: usize, col: usize) -> usize {
        (bank * self.layout.total_rows() + row) * self.geometry.columns_per_row + col
    }

    pub fn profile(&self, bank: usize, row: usize, col: usize) -> &CellProfile {
        &self.profiles[self.cell_index(bank, row, col)]
    }

    pub fn state(&self, bank: usize, row: usize, col: usize) -> &CellState {
        &self.states[self.cell_index(bank, row, col)]
    }

    pub fn state_mut(&mut self, bank: usize, row: usize, col: usize) -> &mut CellState {
        let i = self.cell_index(bank, row, col);
        &mut self.states[i]
    }

    /// Override one cell's profile (used to plant known-weak cells).
    pub fn set_profile(&mut self, bank: usize, row: usize, col: usize, profile: CellProfile) {
        let i = self.cell_index(bank, row, col);
        self.profiles[i] = profile;
    }

    /// Whether the cell's capacitor is currently charged, given its
    /// polarity and stored bit.
    #[inline]
    pub fn is_charged(profile: &CellProfile, bit: u8) -> bool {
        match profile.polarity {
            Polarity::TrueCell => bit == 1,
            Polarity::AntiCell => bit == 0,
        }
    }

    /// Logical bit a charged->discharged transition leaves behind.
    #[inline]
    pub fn discharged_bit(profile: &CellProfile) -> u8 {
        match profile.polarity {
            Polarity::TrueCell => 0,
            Polarity::AntiCell => 1,
        }
    }

    /// Initialize rows `range` (global row indices) of `bank` with a data
    /// pattern: stored bits set per pattern, damage cleared, flips cleared.
    pub fn init_region(
        &mut self,
        bank: usize,
        range: std::ops::Range<usize>,
        pattern: DataPattern,
    ) -> Result<()> {
        if bank >= self.geometry.banks || range.end > self.layout.total_rows() {
            return Err(SimError::Input(format!(
                "init out of range: bank {bank}, rows {range:?}"
            )));
        }
        for row in range {
            for col in 0..self.geometry.columns_per_row {
                let i = self.cell_index(bank, row, col);
                self.states[i] = CellState::fresh(pattern.bit(col));
            }
        }
        Ok(())
    }

    /// Initialize every row of every bank.
    pub fn init_all(&mut self, pattern: DataPattern) {
        let rows = self.layout.total_rows();
        for bank in 0..self.geometry.banks {
            self.init_region(bank, 0..rows, pattern).expect("in range");
        }
    }

    /// The physical column of the neighboring subarray that shares a
    /// bitline with `col`, if any. Even columns pair with the lower
    /// neighbor's odd columns; odd columns with the upper neighbor's even
    /// columns; edge halves terminate unpaired.
    pub fn shared_column(&self, col: ColumnRef) -> Option<ColumnRef> {
        let c = col.local_column;
        if c.is_multiple_of(2) {
            if col.subarray_id == 0 {
                None
            } else {
                Some(ColumnRef {
                    subarray_id: col.subarray_id - 1,
                    local_column: c + 1,
                })
            }
        } else if col.subarray_id + 1 >= self.layout.subarrays() {
            None
        } else {
            Some(ColumnRef {
                subarray_id: col.subarray_id + 1,
                local_column: c - 1,
            })
        }
    }

    /// All columns whose bitline voltage is perturbed when a row of
    /// `aggressor_row`'s subarray is open: the whole aggressor subarray plus
    /// the shared half of each neighboring subarray. Subarrays at distance
    /// >= 2 share no bitlines and are never returned.
    pub fn perturbed_columns(&self, aggressor_row: usize) -> Result<Vec<ColumnRef>> {
        let sub = self
            .layout
            .subarray_of_row(aggressor_row)
            .ok_or_else(|| SimError::Input(format!("row {aggressor_row} out of range")))?;
        let cols = self.geometry.columns_per_row;
        let mut out = Vec::with_capacity(cols * 2);
        for c in 0..cols {
            let own = ColumnRef {
                subarray_id: sub,
                local_column: c,
            };
            out.push(own);
            if let Some(shared) = self.shared_column(own) {
                out.push(shared);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Subarrays perturbed by activating `aggressor_row` (self plus
    /// existing neighbors).
    pub fn perturbed_subarrays(&self, aggressor_row: usize) -> Result<Vec<usize>> {
        let sub = self
            .layout
            .subarray_of_row(aggressor_row)
            .ok_or_else(|| SimError::Input(format!("row {aggressor_row} out of range")))?;
        let mut v = Vec::with_capacity(3);
        if sub > 0 {
            v.push(sub - 1);
        }
        v.push(sub);
        if sub + 1 < self.layout.subarrays() {
            v.push(sub + 1);
        }
        Ok(v)
    }

    /// Total cells in one subarray of one bank.
    pub fn cells_in_subarray(&self, subarray: usize) -> usize {
        self.layout.rows_in(subarray) * self.geometry.columns_per_row
    }
}
