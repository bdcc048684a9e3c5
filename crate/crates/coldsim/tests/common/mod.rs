//! Shared test support: an independent fine-timestep reference simulator
//! and small builders for deterministic test arrays.
//!
//! The reference executor advances in fixed steps and accumulates damage
//! numerically per cell, sharing nothing with the engine's interval-exact
//! path except the array topology helpers. It is deliberately slow and only
//! suitable for small arrays and short streams.

#![allow(dead_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use coldsim::array::{
    AnchorDist, CellProfile, ColumnRef, DataPattern, DramArray, DramGeometry, FlipDirection,
    Polarity, ProfileDistribution,
};
use coldsim::engine::Temperature;
use coldsim::stream::{CommandStream, StreamOp, TimedOp};
use coldsim::units::MS;

pub fn geometry(subarrays: usize, rows: usize, cols: usize) -> DramGeometry {
    DramGeometry {
        banks: 1,
        subarrays_per_bank: subarrays,
        rows_per_subarray: rows,
        columns_per_row: cols,
        vdd: 1.0,
    }
}

pub fn constant_profile(gnd_ms: f64, half_ms: f64, vdd_ms: Option<f64>) -> ProfileDistribution {
    ProfileDistribution {
        t_flip_gnd: AnchorDist::constant(gnd_ms * MS),
        t_flip_half: AnchorDist::constant(half_ms * MS),
        t_flip_vdd: vdd_ms.map_or(AnchorDist::infinite(), |v| AnchorDist::constant(v * MS)),
        rh_threshold: AnchorDist::infinite(),
        anti_cell_fraction: 0.0,
        hammer_zero_to_one_fraction: 0.5,
    }
}

pub fn immortal_profile() -> CellProfile {
    CellProfile {
        t_flip_gnd: f64::INFINITY,
        t_flip_half: f64::INFINITY,
        t_flip_vdd: f64::INFINITY,
        polarity: Polarity::TrueCell,
        rh_threshold: f64::INFINITY,
        hammer_direction: FlipDirection::OneToZero,
    }
}

/// Make every cell unable to flip, then plant specific weak cells.
pub fn immortalize(array: &mut DramArray) {
    let immortal = CellProfile {
        t_flip_gnd: 1e18,
        t_flip_half: f64::INFINITY,
        t_flip_vdd: f64::INFINITY,
        ..immortal_profile()
    };
    for row in 0..array.total_rows() {
        for col in 0..array.columns_per_row() {
            array.set_profile(0, row, col, immortal);
        }
    }
}

/// A reference flip observed by the fine-timestep simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefFlip {
    pub row: usize,
    pub col: usize,
    pub time: f64,
}

pub struct RefOutcome {
    pub flips: Vec<RefFlip>,
    /// Damage at the horizon per (row, col), for unflipped cells.
    pub damage: Vec<Vec<f64>>,
}

/// Numerical reference: step the clock by `dt`, track the open row from the
/// flattened command list, apply per-cell damage increments, reset damage
/// on refresh/restore, and record crossings. Bank 0 only, no hammer term.
pub fn fine_timestep(
    array: &DramArray,
    stream: &CommandStream,
    temperature: &Temperature,
    dt: f64,
) -> RefOutcome {
    let ops = stream.flatten(2_000_000).expect("stream small enough");
    let end = stream.end;
    let cols = array.columns_per_row();
    let rows = array.total_rows();
    let scale = temperature.scale();
    let vdd = array.geometry().vdd;

    // Stored bits and charge state come from the array as initialized.
    let mut charged: Vec<Vec<bool>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let st = array.state(0, r, c);
                    DramArray::is_charged(array.profile(0, r, c), st.stored_bit)
                        && st.flipped_at.is_none()
                })
                .collect()
        })
        .collect();
    let mut damage = vec![vec![0.0f64; cols]; rows];
    let mut flips = Vec::new();

    // Column voltage for a cell while `open_row` drives its subarray: the
    // cell's own column in the aggressor subarray, or the shared bitline's
    // aggressor-side column in a neighbor, or the precharge level.
    let level_for = |open_row: usize, row: usize, col: usize| -> f64 {
        let agg_sub = array.layout().subarray_of_row(open_row).unwrap();
        let cell_sub = array.layout().subarray_of_row(row).unwrap();
        let src = if cell_sub == agg_sub {
            Some(col)
        } else {
            match array.shared_column(ColumnRef {
                subarray_id: cell_sub,
                local_column: col,
            }) {
                Some(r) if r.subarray_id == agg_sub => Some(r.local_column),
                _ => None,
            }
        };
        match src {
            Some(c) => {
                let st = array.state(0, open_row, c);
                let charged_drive =
                    DramArray::is_charged(array.profile(0, open_row, c), st.stored_bit);
                if charged_drive {
                    vdd
                } else {
                    0.0
                }
            }
            None => vdd * 0.5,
        }
    };

    let mut op_ix = 0usize;
    let mut open: Option<usize> = None;
    let mut ref_all_counter: u64 = 0;
    let steps = (end / dt).round() as u64;
    for step in 0..steps {
        let t0 = step as f64 * dt;
        // Apply commands scheduled strictly before the step midpoint
        // boundary: commands are aligned to step boundaries by test
        // construction (refresh-first ordering preserved by flatten sort).
        while op_ix < ops.len() && ops[op_ix].at <= t0 + dt * 1e-6 {
            apply_op(
                &ops[op_ix],
                &mut open,
                &mut damage,
                &mut ref_all_counter,
                rows,
            );
            op_ix += 1;
        }
        for row in 0..rows {
            for col in 0..cols {
                if !charged[row][col] {
                    continue;
                }
                let v = match open {
                    Some(open_row) => level_for(open_row, row, col),
                    None => vdd * 0.5,
                };
                let t_flip = array.profile(0, row, col).t_flip_at(v, vdd) * scale;
                if t_flip.is_infinite() {
                    continue;
                }
                let before = damage[row][col];
                let after = before + dt / t_flip;
                damage[row][col] = after;
                if after >= 1.0 {
                    // Crossing inside this step: linear interpolation.
                    let frac = (1.0 - before) / (after - before);
                    flips.push(RefFlip {
                        row,
                        col,
                        time: t0 + frac * dt,
                    });
                    charged[row][col] = false;
                }
            }
        }
    }
    // Trailing commands exactly at the horizon.
    while op_ix < ops.len() {
        apply_op(
            &ops[op_ix],
            &mut open,
            &mut damage,
            &mut ref_all_counter,
            rows,
        );
        op_ix += 1;
    }
    RefOutcome { flips, damage }
}

fn apply_op(
    op: &TimedOp,
    open: &mut Option<usize>,
    damage: &mut [Vec<f64>],
    ref_all_counter: &mut u64,
    rows: usize,
) {
    match op.op {
        StreamOp::Act { row } => *open = Some(row),
        StreamOp::Pre => {
            if let Some(row) = open.take() {
                damage[row].iter_mut().for_each(|d| *d = 0.0);
            }
        }
        StreamOp::RefAll => {
            // Rotating slice: one REF command covers one slot of the
            // window, so a row's refresh period is the full window.
            let slot = *ref_all_counter % coldsim::engine::REFRESH_SLOTS;
            *ref_all_counter += 1;
            for (r, row_damage) in damage.iter_mut().enumerate() {
                if coldsim::engine::refresh_slot(r, rows) == slot {
                    row_damage.iter_mut().for_each(|d| *d = 0.0);
                }
            }
        }
        StreamOp::RefRow { row } => {
            damage[row].iter_mut().for_each(|d| *d = 0.0);
        }
        StreamOp::Idle { .. } => {}
    }
}

/// Victims all-one, aggressor row all-zero.
pub fn worst_case_init(array: &mut DramArray, aggressor_row: usize) {
    array.init_all(DataPattern::ALL_ONE);
    array
        .init_region(0, aggressor_row..aggressor_row + 1, DataPattern::ALL_ZERO)
        .unwrap();
}
