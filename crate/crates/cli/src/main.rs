//! `dmtlink`: runs single links, sweeps, the rate/reach table and fading
//! profiles, writing CSV tables, a reproducibility manifest and optional SVG
//! plots into the output directory.
//!
//! Exit codes: 0 success, 1 BER above target, 2 unreadable or invalid
//! configuration, 3 format infeasible, 4 execution error.

mod config;
mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmtlink::channel::end_to_end_fading_profile;
use dmtlink::harness::{
    analytic_fading_profile, evaluate_operating_point, osnr_crossing, run_link, spans_for, sweep_detuning,
    sweep_osnr, sweep_reach, table_base, ChannelStatus, ScenarioConfig, SweepPoint, TableRow, TABLE_SCENARIOS,
};
use dmtlink::persist::{persist_run, run_stem, status_name, write_sweep_csv, write_table_csv, SweepAxis};
use dmtlink::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::svg::{Plot, Series, YScale};

const EXIT_BER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_EXECUTION: u8 = 4;

/// Lowest BER drawn on log-scale plots; error-free points sit here.
const PLOT_FLOOR: f64 = 1e-7;

#[derive(Parser)]
#[command(name = "dmtlink", version, about = "IM/DD DMT WDM link simulator")]
struct Cli {
    #[command(flatten)]
    opts: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Globals {
    /// JSON scenario file; absent keys keep the command's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Also write an SVG plot next to the CSV.
    #[arg(long, global = true)]
    svg: bool,
    #[arg(long, global = true, env = "DMTLINK_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for the simulation pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Number of wavelengths in the comb.
    #[arg(long, global = true)]
    channels: Option<usize>,
    /// Net rate per wavelength.
    #[arg(long, global = true)]
    rate_gbps: Option<f64>,
    /// Fiber reach, split into spans of at most 80 km; 0 is back-to-back.
    #[arg(long, global = true)]
    reach_km: Option<f64>,
    /// Laser offset from the interleaver passband centre.
    #[arg(long, global = true, allow_negative_numbers = true)]
    detuning_ghz: Option<f64>,
    /// OSNR in 12.5 GHz ("inf" disables noise); the reference-span OSNR
    /// when the scenario has a span budget.
    #[arg(long, global = true)]
    osnr_db: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one link and persist its BER, SNR and loading tables.
    Run,
    /// Sweep OSNR, detuning or reach for one or more rate series.
    Sweep(SweepArgs),
    /// Evaluate the wavelength-count/rate/reach operating points.
    Table(TableArgs),
    /// Dump the simulated and analytic fading response of the link.
    Fading,
    /// Print the resolved scenario as a complete config file.
    Config {
        /// Start from the rate/reach table defaults.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Axis {
    Osnr,
    Detuning,
    Reach,
}

impl Axis {
    fn persist(self) -> SweepAxis {
        match self {
            Axis::Osnr => SweepAxis::Osnr,
            Axis::Detuning => SweepAxis::Detuning,
            Axis::Reach => SweepAxis::Reach,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::Osnr => "osnr",
            Axis::Detuning => "detuning",
            Axis::Reach => "reach",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Axis::Osnr => "OSNR (dB / 12.5 GHz)",
            Axis::Detuning => "Laser detuning (GHz)",
            Axis::Reach => "Reach (km)",
        }
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Osnr => (0..=10).map(|k| 20.0 + 2.0 * k as f64).collect(),
            Axis::Detuning => (0..=10).map(|k| 2.5 * k as f64).collect(),
            Axis::Reach => vec![0.0, 10.0, 20.0, 40.0, 80.0],
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated points in the axis unit (dB, GHz or km).
    #[arg(long, value_delimiter = ',', conflicts_with = "range", allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
    /// Points as start:stop:step, stop included.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// One series per rate (default: the scenario rate).
    #[arg(long, value_delimiter = ',')]
    rates_gbps: Vec<f64>,
    /// One series per detuning for OSNR and reach sweeps (default: the
    /// scenario detuning).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    detunings_ghz: Vec<f64>,
}

#[derive(Args)]
struct TableArgs {
    /// Restrict to one operating point, e.g. "8x56".
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Sim(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Sim(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Sim(e.into())
    }
}

impl Failure {
    fn report(&self) -> u8 {
        match self {
            Failure::Config(msg) => {
                eprintln!("error: {msg}");
                EXIT_CONFIG
            }
            Failure::Sim(e) => {
                eprintln!("error: {e}");
                match e.root() {
                    e if e.is_infeasible() => EXIT_INFEASIBLE,
                    Error::InvalidConfig(_) | Error::InvalidBer(_) | Error::InvalidOrder(_) => EXIT_CONFIG,
                    _ => EXIT_EXECUTION,
                }
            }
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.opts.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(EXIT_EXECUTION);
        }
    }
    let outcome = match &cli.command {
        Command::Run => cmd_run(&cli.opts),
        Command::Sweep(a) => cmd_sweep(&cli.opts, a),
        Command::Table(a) => cmd_table(&cli.opts, a),
        Command::Fading => cmd_fading(&cli.opts),
        Command::Config { table } => cmd_config(&cli.opts, *table),
    };
    ExitCode::from(outcome.unwrap_or_else(|f| f.report()))
}

/// `base`, overlaid with the config file, then the command-line overrides.
fn scenario(g: &Globals, base: ScenarioConfig) -> Result<ScenarioConfig, Failure> {
    let mut sc = base;
    if let Some(path) = &g.config {
        config::load(path).map_err(|e| Failure::Config(e.0))?.apply(&mut sc);
    }
    if let Some(n) = g.channels {
        sc.link.n_channels = n;
    }
    if let Some(r) = g.rate_gbps {
        sc.net_rate = r * 1e9;
    }
    if let Some(l) = g.reach_km {
        sc.link.span_lengths_km = spans_for(l);
    }
    if let Some(d) = g.detuning_ghz {
        sc.link.detuning = d * 1e9;
    }
    if let Some(o) = g.osnr_db {
        sc.link.osnr_db = o;
    }
    sc.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(sc)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(format!("cannot write {}", path.display())).into())
}

fn make_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("cannot create {}", dir.display())).into())
}

/// Short content hash of anything serializable, for artifact names.
fn content_hash<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_vec(v).expect("serializable");
    Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn gbps(rate: f64) -> String {
    format!("{}", (rate / 1e8).round() / 10.0)
}

/// Manifest of a sweep, table or fading command.
#[derive(Serialize)]
struct CommandManifest<'a> {
    version: &'static str,
    command: &'static str,
    args: Vec<String>,
    scenario_hash: String,
    seed: u64,
    scenario: &'a ScenarioConfig,
    wall_time_s: f64,
    files: Vec<String>,
}

fn write_manifest(dir: &Path, name: &str, m: &CommandManifest) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, m).map_err(Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(path)
}

fn cmd_run(g: &Globals) -> Outcome {
    let sc = scenario(g, ScenarioConfig::default())?;
    let rec = run_link(&sc, g.seed)?;
    let manifest = persist_run(&rec, &sc, &g.out_dir)?;
    for c in &rec.channels {
        let counts = c
            .ber
            .as_ref()
            .map_or(String::new(), |b| format!(" ({} errors / {} bits)", b.bit_errors, b.bits_total));
        let margin = c.margin_db.map_or(String::new(), |m| format!(", margin {m:.2} dB"));
        println!(
            "channel {}: {} BER {:.3e}{counts}{margin}",
            c.channel,
            status_name(c.status),
            c.ber_value()
        );
    }
    println!("manifest: {}", manifest.display());
    Ok(if rec.channels.iter().any(|c| c.status == ChannelStatus::Infeasible) {
        EXIT_INFEASIBLE
    } else if rec.passes(sc.target_ber) {
        0
    } else {
        EXIT_BER
    })
}

/// `start:stop:step`, stop included when it lies on the grid.
fn parse_range(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Config(format!("range {s:?} is not start:stop:step with step > 0"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[derive(Serialize)]
struct SweepKey<'a> {
    scenario: &'a ScenarioConfig,
    axis: Axis,
    values: &'a [f64],
    series: &'a [(f64, f64)],
}

fn cmd_sweep(g: &Globals, a: &SweepArgs) -> Outcome {
    let started = Instant::now();
    let sc = scenario(g, ScenarioConfig::default())?;
    let values = match (&a.values, &a.range) {
        (Some(v), _) => v.clone(),
        (None, Some(r)) => parse_range(r)?,
        (None, None) => a.axis.default_values(),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Failure::Config("sweep values must be finite and non-empty".into()));
    }
    if a.axis == Axis::Detuning && !a.detunings_ghz.is_empty() {
        return Err(Failure::Config("--detunings-ghz does not apply to a detuning sweep".into()));
    }
    let rates: Vec<f64> = if a.rates_gbps.is_empty() {
        vec![sc.net_rate]
    } else {
        a.rates_gbps.iter().map(|r| r * 1e9).collect()
    };
    let detunings: Vec<f64> = if a.detunings_ghz.is_empty() {
        vec![sc.link.detuning]
    } else {
        a.detunings_ghz.iter().map(|d| d * 1e9).collect()
    };
    let combos: Vec<(f64, f64)> = rates.iter().flat_map(|&r| detunings.iter().map(move |&d| (r, d))).collect();

    let mut series = Vec::new();
    let mut footer = Vec::new();
    for &(rate, det) in &combos {
        let mut s = sc.clone();
        s.net_rate = rate;
        s.link.detuning = det;
        s.validate()?;
        let (name, points) = match a.axis {
            Axis::Osnr => {
                let name = format!("{}G_{}GHz", gbps(rate), det / 1e9);
                let pts = sweep_osnr(&s, &values, g.seed)?;
                footer.push(match osnr_crossing(&pts, s.target_ber) {
                    Some(o) => format!("{name}: required OSNR {o:.2} dB at BER {:.1e}", s.target_ber),
                    None => format!("{name}: BER {:.1e} not crossed in range", s.target_ber),
                });
                (name, pts)
            }
            Axis::Detuning => {
                let name = format!("{}G", gbps(rate));
                let offsets: Vec<f64> = values.iter().map(|v| v * 1e9).collect();
                let sw = sweep_detuning(&s, &offsets, g.seed)?;
                let best = &sw.points[sw.argmin];
                footer.push(format!("{name}: lowest BER {:.3e} at {} GHz", best.ber, best.value / 1e9));
                (name, sw.points)
            }
            Axis::Reach => {
                let name = format!("{}G_{}GHz", gbps(rate), det / 1e9);
                let pts = sweep_reach(&s, &values, g.seed)?;
                let reach = pts
                    .iter()
                    .take_while(|p| p.status == ChannelStatus::Measured && p.ber <= s.target_ber)
                    .last()
                    .map(|p| p.value);
                footer.push(match reach {
                    Some(l) => format!("{name}: below BER {:.1e} up to {l} km", s.target_ber),
                    None => format!("{name}: above BER {:.1e} at the shortest reach", s.target_ber),
                });
                (name, pts)
            }
        };
        for p in &points {
            println!(
                "{name} {}={} BER {:.3e} {}",
                a.axis.persist().column(),
                a.axis.persist().display_value(p.value),
                p.ber,
                status_name(p.status)
            );
        }
        series.push((name, points));
    }
    for line in &footer {
        println!("{line}");
    }

    make_dir(&g.out_dir)?;
    let hash = content_hash(&SweepKey {
        scenario: &sc,
        axis: a.axis,
        values: &values,
        series: &combos,
    });
    let stem = format!("sweep_{}_{}", a.axis.name(), run_stem(&hash, g.seed));
    let mut files = vec![format!("{stem}.csv")];
    let mut out = create(&g.out_dir.join(&files[0]))?;
    write_sweep_csv(a.axis.persist(), &series, &mut out)?;
    out.flush()?;
    if g.svg {
        let name = format!("{stem}.svg");
        fs::write(g.out_dir.join(&name), sweep_plot(a.axis, &series, sc.target_ber).render())?;
        files.push(name);
    }
    let manifest = write_manifest(
        &g.out_dir,
        &format!("{stem}.json"),
        &CommandManifest {
            version: env!("CARGO_PKG_VERSION"),
            command: "sweep",
            args: std::env::args().skip(1).collect(),
            scenario_hash: hash,
            seed: g.seed,
            scenario: &sc,
            wall_time_s: started.elapsed().as_secs_f64(),
            files,
        },
    )?;
    println!("manifest: {}", manifest.display());
    Ok(0)
}

fn sweep_plot(axis: Axis, series: &[(String, Vec<SweepPoint>)], target: f64) -> Plot {
    Plot {
        title: format!("Worst-channel BER vs {}", axis.name()),
        x_label: axis.label().into(),
        y_label: "BER".into(),
        y_scale: YScale::Log { floor: PLOT_FLOOR },
        series: series
            .iter()
            .map(|(name, pts)| Series {
                name: name.clone(),
                points: pts.iter().map(|p| (axis.persist().display_value(p.value), p.ber)).collect(),
            })
            .collect(),
        reference: Some((target, format!("BER {target:.0e}"))),
    }
}

/// Parses "NxR" (wavelengths x Gb/s) into a table operating point.
fn parse_operating_point(s: &str) -> Result<(usize, f64, f64), Failure> {
    let bad = || {
        let known: Vec<String> = TABLE_SCENARIOS.iter().map(|&(n, r, _)| format!("{n}x{}", gbps(r))).collect();
        Failure::Config(format!("unknown scenario {s:?}; expected one of {}", known.join(", ")))
    };
    let (n, r) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let r: f64 = r.trim().parse().map_err(|_| bad())?;
    TABLE_SCENARIOS
        .iter()
        .copied()
        .find(|&(tn, tr, _)| tn == n && (tr / 1e9 - r).abs() < 0.05)
        .ok_or_else(bad)
}

fn cmd_table(g: &Globals, a: &TableArgs) -> Outcome {
    let started = Instant::now();
    if g.channels.is_some() || g.rate_gbps.is_some() || g.reach_km.is_some() {
        return Err(Failure::Config(
            "--channels, --rate-gbps and --reach-km are set per row; use --scenario to pick one".into(),
        ));
    }
    let sc = scenario(g, table_base())?;
    let points: Vec<(usize, f64, f64)> = match &a.scenario {
        Some(s) => vec![parse_operating_point(s)?],
        None => TABLE_SCENARIOS.to_vec(),
    };
    let mut rows: Vec<TableRow> = Vec::new();
    for &(n, rate, reach) in &points {
        let row = evaluate_operating_point(&sc, n, rate, reach, g.seed)?;
        println!(
            "{n}x{}G @ {reach} km: worst channel {} BER {:.3e} {} {}",
            gbps(rate),
            row.worst_channel,
            row.worst_ber,
            status_name(row.status),
            if row.pass { "PASS" } else { "FAIL" }
        );
        rows.push(row);
    }

    make_dir(&g.out_dir)?;
    let hash = content_hash(&(&sc, &points));
    let stem = format!("table_{}", run_stem(&hash, g.seed));
    let files = vec![format!("{stem}.csv")];
    let mut out = create(&g.out_dir.join(&files[0]))?;
    write_table_csv(&rows, &mut out)?;
    out.flush()?;
    let manifest = write_manifest(
        &g.out_dir,
        &format!("{stem}.json"),
        &CommandManifest {
            version: env!("CARGO_PKG_VERSION"),
            command: "table",
            args: std::env::args().skip(1).collect(),
            scenario_hash: hash,
            seed: g.seed,
            scenario: &sc,
            wall_time_s: started.elapsed().as_secs_f64(),
            files,
        },
    )?;
    println!("manifest: {}", manifest.display());
    Ok(if rows.iter().all(|r| r.pass) { 0 } else { EXIT_BER })
}

fn cmd_fading(g: &Globals) -> Outcome {
    let started = Instant::now();
    let sc = scenario(g, ScenarioConfig::default())?;
    let simulated = end_to_end_fading_profile(&sc.link, sc.link.detuning);
    let analytic = analytic_fading_profile(&sc.link);
    debug_assert_eq!(simulated.len(), analytic.len());

    make_dir(&g.out_dir)?;
    let hash = content_hash(&sc.link);
    let stem = format!("fading_{hash}");
    let mut files = vec![format!("{stem}.csv")];
    {
        let mut w = csv::Writer::from_writer(create(&g.out_dir.join(&files[0]))?);
        w.write_record(["frequency_hz", "simulated_db", "analytic_db"]).map_err(Error::from)?;
        for (s, a) in simulated.iter().zip(&analytic) {
            w.write_record([
                format!("{:.1}", s.frequency),
                format!("{:.6}", s.response_db),
                format!("{:.6}", a.response_db),
            ])
            .map_err(Error::from)?;
        }
        w.flush()?;
    }
    if g.svg {
        // Nulls are deep; clip the plot so the passband stays readable.
        let clip = |db: f64| db.max(-40.0);
        let plot = Plot {
            title: format!("Fading response, {} km", sc.link.span_lengths_km.iter().sum::<f64>()),
            x_label: "Frequency (GHz)".into(),
            y_label: "Response (dB)".into(),
            y_scale: YScale::Linear,
            series: vec![
                Series {
                    name: format!("simulated, {} GHz detuning", sc.link.detuning / 1e9),
                    points: simulated.iter().map(|p| (p.frequency / 1e9, clip(p.response_db))).collect(),
                },
                Series {
                    name: "analytic DSB".into(),
                    points: analytic.iter().map(|p| (p.frequency / 1e9, clip(p.response_db))).collect(),
                },
            ],
            reference: None,
        };
        let name = format!("{stem}.svg");
        fs::write(g.out_dir.join(&name), plot.render())?;
        files.push(name);
    }
    let worst = simulated.iter().map(|p| p.response_db).fold(f64::INFINITY, f64::min);
    println!(
        "{} tones to {} GHz, deepest simulated response {worst:.1} dB",
        simulated.len(),
        simulated.last().map_or(0.0, |p| p.frequency / 1e9)
    );
    let manifest = write_manifest(
        &g.out_dir,
        &format!("{stem}.json"),
        &CommandManifest {
            version: env!("CARGO_PKG_VERSION"),
            command: "fading",
            args: std::env::args().skip(1).collect(),
            scenario_hash: hash,
            seed: g.seed,
            scenario: &sc,
            wall_time_s: started.elapsed().as_secs_f64(),
            files,
        },
    )?;
    println!("manifest: {}", manifest.display());
    Ok(0)
}

fn cmd_config(g: &Globals, table: bool) -> Outcome {
    let base = if table { table_base() } else { ScenarioConfig::default() };
    let sc = scenario(g, base)?;
    let text = serde_json::to_string_pretty(&ConfigFile::from_scenario(&sc)).map_err(Error::from)?;
    println!("{text}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_includes_stop() {
        let v = parse_range("0:25:2.5").unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[10], 25.0);
        assert_eq!(parse_range("20:29:2").unwrap(), vec![20.0, 22.0, 24.0, 26.0, 28.0]);
        assert!(parse_range("5:1:1").is_err());
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn operating_points_match_the_table() {
        assert_eq!(parse_operating_point("8x56").ok().map(|p| p.2), Some(240.0));
        assert_eq!(parse_operating_point("6X74.7").ok().map(|p| p.0), Some(6));
        assert!(parse_operating_point("8x64").is_err());
        assert!(parse_operating_point("eight").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
