//! Experiment runner: loads a JSON config (or a bundled preset), runs the
//! requested subcommand deterministically, and writes CSVs plus a manifest
//! into the output directory. Output files are written atomically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use coldsim::analytics::{self, EnergyParams};
use coldsim::array::{build_array, build_with_layout, DataPattern, DramArray, SubarrayLayout};
use coldsim::characterize::{
    bisect_time_to_first_flip, profile_disturbance, reverse_engineer_subarrays, run_sweep,
    ExperimentSpec,
};
use coldsim::config::{
    config_hash, preset, preset_names, CodeChoice, Manifest, RunConfig, TOOL_VERSION,
};
use coldsim::ecc::{self, LinearCode, MeasureMode};
use coldsim::engine::FlipCause;
use coldsim::error::{Result, SimError};
use coldsim::mitigate::{
    classify_weak_rows, verify_policy, PrvrConfig, RaidrConfig, RefreshPolicy, WeakSetVariant,
};
use coldsim::rng::seed_for;
use coldsim::stream::single_aggressor_counted;
use coldsim::units::MS;

#[derive(Parser)]
#[command(
    name = "coldsim",
    version,
    about = "Command-level DRAM read-disturbance simulator and evaluation toolkit"
)]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled preset name (alternative to --config).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the characterization sweep and emit per-point metrics.
    Characterize,
    /// Recover subarray boundaries by row-copy probing.
    ReverseSubarrays,
    /// Compare refresh policies on one aggression scenario.
    Mitigate,
    /// Closed-form refresh overhead tables.
    Analytics,
    /// Code miscorrection rates and per-chunk flip histograms.
    Ecc,
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore failure if a pool already exists (tests, repeated calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    let raw = match (&cli.config, &cli.preset) {
        (Some(path), None) => std::fs::read_to_string(path)?,
        (None, Some(name)) => preset(name)
            .ok_or_else(|| {
                SimError::Config(format!(
                    "unknown preset {name:?}; available: {}",
                    preset_names().join(", ")
                ))
            })?
            .to_string(),
        (Some(_), Some(_)) => {
            return Err(SimError::Config(
                "--config and --preset are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(SimError::Config(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    let mut cfg = RunConfig::parse(&raw)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;

    let manifest = Manifest {
        tool_version: TOOL_VERSION,
        master_seed: cfg.master_seed,
        config_hash: config_hash(&raw),
        config: &cfg,
    };
    atomic_write(
        &cli.out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;

    match cli.cmd {
        Cmd::Characterize => cmd_characterize(&cfg, &cli.out),
        Cmd::ReverseSubarrays => cmd_reverse(&cfg, &cli.out),
        Cmd::Mitigate => cmd_mitigate(&cfg, &cli.out),
        Cmd::Analytics => cmd_analytics(&cfg, &cli.out),
        Cmd::Ecc => cmd_ecc(&cfg, &cli.out),
    }
}

fn atomic_write(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

// ---------------------------------------------------------------------------
// characterize
// ---------------------------------------------------------------------------

fn cmd_characterize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let c = cfg
        .characterize
        .as_ref()
        .ok_or_else(|| SimError::Config("config has no characterize section".into()))?;
    let temperature = cfg.temperature.build()?;
    let mut base = ExperimentSpec::new(
        cfg.timings,
        temperature,
        c.grid
            .refresh_intervals
            .first()
            .copied()
            .unwrap_or(128.0 * MS),
    );
    base.exclusion_radius = c.exclusion_radius;
    let subarray = c.subarray.unwrap_or(cfg.geometry.subarrays_per_bank / 2);
    let rows = run_sweep(
        cfg.geometry,
        &cfg.profile,
        seed_for(cfg.master_seed, "characterize", 0),
        &base,
        &c.grid,
        &c.metrics,
        c.bank,
        subarray,
        cfg.temperature.speedup_45_to_95,
    )?;

    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# column-disturbance characterization sweep: per-point metrics for one subarray"
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(
        csv,
        "temperature_c,t_agg_on_ns,aggressor_pattern,access,location,refresh_interval_ms,subarray,time_to_first_flip_ms,blast_radius,fraction_cells,total_flips"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.point.temperature_c,
            r.point.t_agg_on,
            r.point.aggressor_pattern,
            r.point.access,
            r.point.location,
            r.point.refresh_interval / MS,
            r.subarray,
            fmt_opt(r.time_to_first_flip.map(|t| t / MS)),
            fmt_opt(r.blast_radius),
            fmt_opt(r.fraction_cells),
            fmt_opt(r.total_flips),
        );
    }
    atomic_write(&out.join("characterize.csv"), &csv)?;
    println!(
        "characterize: {} sweep points -> {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// reverse-subarrays
// ---------------------------------------------------------------------------

fn cmd_reverse(cfg: &RunConfig, out: &Path) -> Result<()> {
    let r = cfg.reverse_subarrays.clone().unwrap_or_default();
    let seed = seed_for(cfg.master_seed, "reverse", 0);
    let mut array = match &r.subarray_sizes {
        Some(sizes) => build_with_layout(
            cfg.geometry,
            SubarrayLayout::explicit(sizes.clone())?,
            &cfg.profile,
            seed,
        )?,
        None => build_array(cfg.geometry, &cfg.profile, seed)?,
    };
    let ranges = reverse_engineer_subarrays(&mut array, r.bank)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "# subarray boundaries recovered by row-copy probing");
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(csv, "subarray,start_row,end_row,rows");
    for (i, range) in ranges.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{}", range.start, range.end - 1, range.len());
    }
    atomic_write(&out.join("boundaries.csv"), &csv)?;
    println!(
        "reverse-subarrays: {} subarrays -> {}",
        ranges.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// mitigate
// ---------------------------------------------------------------------------

fn scenario_init(array: &mut DramArray, bank: usize, aggressor_row: usize) -> Result<()> {
    array.init_region(bank, 0..array.total_rows(), DataPattern::ALL_ONE)?;
    array.init_region(
        bank,
        aggressor_row..aggressor_row + 1,
        DataPattern::ALL_ZERO,
    )?;
    Ok(())
}

fn cmd_mitigate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = cfg
        .mitigate
        .as_ref()
        .ok_or_else(|| SimError::Config("config has no mitigate section".into()))?;
    let temperature = cfg.temperature.build()?;
    let seed = seed_for(cfg.master_seed, "mitigate", 0);
    let template = build_array(cfg.geometry, &cfg.profile, seed)?;
    let mid_sub = cfg.geometry.subarrays_per_bank / 2;
    let aggressor_row = m.aggressor_row.unwrap_or_else(|| {
        let range = template.layout().row_range(mid_sub);
        range.start + range.len() / 2
    });

    // Derive the PRVR pass budget from a bisection measurement when the
    // config does not pin it: half the time to the first flip.
    let spec = {
        let mut s = ExperimentSpec::new(cfg.timings, temperature, m.duration);
        s.victim_pattern = Some(DataPattern::ALL_ONE);
        s
    };
    let t_first = match m.prvr_t_first {
        Some(v) => v,
        None => {
            let mut scratch = template.clone();
            let sub = scratch.layout().subarray_of_row(aggressor_row).unwrap();
            let result = bisect_time_to_first_flip(&mut scratch, m.bank, &spec, sub)?;
            result
                .time_to_first_flip
                .map(|t| t / 2.0)
                .unwrap_or(m.duration / 4.0)
        }
    };

    // Weak-row classification from a disturbance-inclusive failure profile.
    let profile = {
        let mut p = spec.clone();
        p.refresh_interval = m.raidr_t_strong;
        profile_disturbance(&template, m.bank, m.raidr_t_strong, &p)?
    };
    let bitmap = classify_weak_rows(&profile, m.raidr_t_strong, WeakSetVariant::Bitmap);
    let bloom = classify_weak_rows(&profile, m.raidr_t_strong, WeakSetVariant::Bloom);

    let mut policies: Vec<(String, RefreshPolicy)> = Vec::new();
    for &w in &m.periodic_windows {
        policies.push((
            format!("periodic-{}ms", w / MS),
            RefreshPolicy::Periodic { window: w },
        ));
    }
    policies.push((
        "prvr".into(),
        RefreshPolicy::Prvr(PrvrConfig {
            t_first,
            trigger_fraction: m.prvr_trigger_fraction,
        }),
    ));
    policies.push((
        "raidr-bitmap".into(),
        RefreshPolicy::Raidr(RaidrConfig::new(bitmap, m.raidr_t_weak, m.raidr_t_strong)?),
    ));
    policies.push((
        "raidr-bloom".into(),
        RefreshPolicy::Raidr(RaidrConfig::new(bloom, m.raidr_t_weak, m.raidr_t_strong)?),
    ));

    let energy =
        EnergyParams::illustrative((cfg.geometry.rows_per_bank() * cfg.geometry.banks) as u64);
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# refresh-policy comparison on one sustained-aggression scenario (prvr t_first = {} ms)",
        t_first / MS
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(
        csv,
        "policy,flips,column_disturb_flips,conflicts,ref_all_ops,ref_row_ops,est_blocked_fraction,est_refresh_energy_j"
    );
    for (name, policy) in &policies {
        let mut array = template.clone();
        scenario_init(&mut array, m.bank, aggressor_row)?;
        let iterations = (m.duration / cfg.timings.loop_period()).floor() as u64;
        let aggression = {
            let mut s = single_aggressor_counted(m.bank, aggressor_row, &cfg.timings, iterations);
            s.extend_to(m.duration);
            s
        };
        let v = verify_policy(
            &mut array,
            &aggression,
            policy,
            m.duration,
            &cfg.timings,
            &temperature,
        )?;
        let cd = v
            .flips
            .records
            .iter()
            .filter(|r| r.cause == FlipCause::ColumnDisturb)
            .count();
        let blocked = (v.ref_all_count as f64 * cfg.timings.t_rfc
            + v.ref_row_count as f64 * cfg.timings.t_row_refresh)
            / m.duration;
        let joules = v.ref_all_count as f64 * energy.energy_ref_all
            + v.ref_row_count as f64 * energy.energy_ref_row;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            name,
            v.flips.len(),
            cd,
            v.conflicts,
            v.ref_all_count,
            v.ref_row_count,
            blocked,
            joules,
        );
    }
    atomic_write(&out.join("mitigate.csv"), &csv)?;
    println!("mitigate: {} policies -> {}", policies.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// analytics
// ---------------------------------------------------------------------------

fn cmd_analytics(cfg: &RunConfig, out: &Path) -> Result<()> {
    let a = cfg
        .analytics
        .as_ref()
        .ok_or_else(|| SimError::Config("config has no analytics section".into()))?;
    let energy = a
        .energy
        .unwrap_or_else(|| EnergyParams::illustrative(a.device.rows_per_device()));

    // Normalized row-refresh operation grid.
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# row-refresh operations of two-class retention-aware refresh, normalized to refreshing every row at the weak period"
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(csv, "weak_fraction,strong_window_ms,normalized_ops");
    for &f in &a.weak_fractions {
        for &t in &a.strong_windows {
            let v = analytics::normalized_refresh_ops(f, t, a.t_weak)?;
            let _ = writeln!(csv, "{},{},{}", f, t / MS, v);
        }
    }
    atomic_write(&out.join("refresh_ops.csv"), &csv)?;

    // Throughput / energy table: fixed windows plus the PRVR comparison.
    let c = analytics::prvr_vs_fixed_rate(
        a.prvr.n_victims,
        a.prvr.t_first,
        a.prvr.default_window,
        a.prvr.fast_window,
        &cfg.timings,
        &a.device,
        &energy,
    )?;
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# refresh throughput loss and refresh energy: fixed refresh windows versus proactive victim-row refresh"
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(
        csv,
        "scheme,throughput_loss,energy_rate_j_per_s,throughput_reduction_vs_fast,energy_reduction_vs_fast"
    );
    let default_loss = analytics::throughput_loss(
        cfg.timings.t_rfc,
        a.prvr.default_window / coldsim::mitigate::REF_COMMANDS_PER_WINDOW,
    )?;
    let default_energy = coldsim::units::SEC
        / (a.prvr.default_window / coldsim::mitigate::REF_COMMANDS_PER_WINDOW)
        * energy.energy_ref_all;
    let _ = writeln!(
        csv,
        "fixed-{}ms,{},{},,",
        a.prvr.default_window / MS,
        default_loss,
        default_energy
    );
    let _ = writeln!(
        csv,
        "fixed-{}ms,{},{},0,0",
        a.prvr.fast_window / MS,
        c.fixed_loss,
        c.fixed_energy_rate
    );
    let _ = writeln!(
        csv,
        "prvr,{},{},{},{}",
        c.prvr_loss, c.prvr_energy_rate, c.throughput_reduction, c.energy_reduction
    );
    atomic_write(&out.join("throughput_energy.csv"), &csv)?;

    // Neighbor-refresh latency table.
    let mut csv = String::new();
    let _ = writeln!(csv, "# neighbor-row refresh latency at 70 ns per row");
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(csv, "scope,rows,latency_ns");
    for radius in [2u32, 4] {
        let _ = writeln!(
            csv,
            "radius-{radius},{},{}",
            2 * radius,
            analytics::drfm_latency(radius)
        );
    }
    let _ = writeln!(
        csv,
        "three-subarrays,{},{}",
        a.prvr.n_victims,
        analytics::row_refresh_latency(a.prvr.n_victims)
    );
    atomic_write(&out.join("drfm.csv"), &csv)?;
    println!(
        "analytics: {} grid cells -> {}",
        a.weak_fractions.len() * a.strong_windows.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ecc
// ---------------------------------------------------------------------------

fn cmd_ecc(cfg: &RunConfig, out: &Path) -> Result<()> {
    let e = cfg
        .ecc
        .as_ref()
        .ok_or_else(|| SimError::Config("config has no ecc section".into()))?;
    let mut codes: Vec<LinearCode> = Vec::new();
    for choice in &e.codes {
        codes.push(match choice {
            CodeChoice::Hamming74 => LinearCode::hamming_7_4(),
            CodeChoice::Secded7264 => LinearCode::secded_72_64(),
            CodeChoice::Sec136128 => LinearCode::sec_136_128(),
            CodeChoice::Custom => {
                let path = e.h_matrix_file.as_ref().expect("validated");
                LinearCode::from_h_file(Path::new(path), "custom")?
            }
        });
    }

    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# decoder miscorrection rates under injected multi-bit errors"
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(
        csv,
        "code,n,k,overhead,weight,mode,seed,patterns,miscorrections,rate"
    );
    for (i, code) in codes.iter().enumerate() {
        for &w in &e.weights {
            match ecc::miscorrection_rate(code, w, MeasureMode::Exhaustive) {
                Ok(r) => {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},exhaustive,,{},{},{}",
                        code.name(),
                        code.n(),
                        code.k(),
                        code.overhead(),
                        w,
                        r.patterns,
                        r.miscorrections,
                        r.rate
                    );
                }
                Err(SimError::Mode(_)) => {}
                Err(other) => return Err(other),
            }
            let seed = seed_for(cfg.master_seed, "ecc", (i * e.weights.len() + w) as u64);
            let r = ecc::miscorrection_rate(
                code,
                w,
                MeasureMode::MonteCarlo {
                    trials: e.monte_carlo_trials,
                    seed,
                },
            )?;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},monte-carlo,{},{},{},{}",
                code.name(),
                code.n(),
                code.k(),
                code.overhead(),
                w,
                seed,
                r.patterns,
                r.miscorrections,
                r.rate
            );
        }
    }
    atomic_write(&out.join("ecc_miscorrection.csv"), &csv)?;

    // Per-chunk flip histogram from one disturbance run.
    let temperature = cfg.temperature.build()?;
    let mut array = build_array(
        cfg.geometry,
        &cfg.profile,
        seed_for(cfg.master_seed, "ecc-histogram", 0),
    )?;
    let mut spec = ExperimentSpec::new(cfg.timings, temperature, e.histogram_interval);
    spec.victim_pattern = Some(DataPattern::ALL_ONE);
    let mid = cfg.geometry.subarrays_per_bank / 2;
    let outcome = coldsim::characterize::run_point(&mut array, 0, &spec, mid)?;
    let hist = ecc::chunk_histogram(&outcome.report, e.chunk_bits);
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# data chunks by bitflip count after a {} ms disturbance run ({}-bit chunks)",
        e.histogram_interval / MS,
        e.chunk_bits
    );
    let _ = writeln!(csv, "# schema: coldsim-csv-v1");
    let _ = writeln!(csv, "bin,chunks,exceeds_secded");
    for (&bin, &n) in &hist.bins {
        let _ = writeln!(csv, "{},{},{}", bin, n, bin >= 3);
    }
    atomic_write(&out.join("ecc_histogram.csv"), &csv)?;
    println!("ecc: {} codes -> {}", codes.len(), out.display());
    Ok(())
}
