//! Run artifacts: a JSON manifest plus CSV result tables.
//!
//! Filenames embed the scenario hash and the seed, so runs never overwrite each
//! other unless they are the same run. CSV bodies depend only on scenario and
//! seed; wall time lives in the manifest alone.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ChannelStatus, RunRecord, ScenarioConfig, SweepPoint, TableRow};
use crate::loading::write_loading_csv;

/// Everything needed to reproduce a run, plus its headline results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub wall_time_s: f64,
    pub channels: Vec<ChannelSummary>,
    /// Artifact filenames relative to the manifest's directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: usize,
    pub status: ChannelStatus,
    pub bit_errors: Option<u64>,
    pub bits_total: Option<u64>,
    pub ber: f64,
    pub margin_db: Option<f64>,
}

pub fn status_name(s: ChannelStatus) -> &'static str {
    match s {
        ChannelStatus::Measured => "measured",
        ChannelStatus::Infeasible => "infeasible",
        ChannelStatus::SyncLost => "sync_lost",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(format!("cannot write {}", path.display())))
}

/// Per-channel BER table: `channel,status,bit_errors,bits_total,ber,margin_db`.
pub fn write_ber_csv<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "status", "bit_errors", "bits_total", "ber", "margin_db"])?;
    for c in &record.channels {
        let (e, n) = c
            .ber
            .as_ref()
            .map_or((String::new(), String::new()), |b| (b.bit_errors.to_string(), b.bits_total.to_string()));
        w.write_record([
            c.channel.to_string(),
            status_name(c.status).into(),
            e,
            n,
            format!("{:.6e}", c.ber_value()),
            fmt_opt(c.margin_db),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Probed SNR of every channel: `channel,subcarrier,snr_db`.
pub fn write_snr_csv<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "subcarrier", "snr_db"])?;
    for c in &record.channels {
        for (i, db) in c.snr.db().iter().enumerate() {
            w.write_record([c.channel.to_string(), i.to_string(), format!("{db:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sweep coordinate of a [`SweepPoint`] table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Osnr,
    Detuning,
    Reach,
}

impl SweepAxis {
    /// CSV column name, with units.
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::Osnr => "osnr_db",
            SweepAxis::Detuning => "detuning_ghz",
            SweepAxis::Reach => "reach_km",
        }
    }

    /// Converts a [`SweepPoint::value`] into the column's unit.
    pub fn display_value(self, v: f64) -> f64 {
        match self {
            SweepAxis::Detuning => v / 1e9,
            _ => v,
        }
    }
}

/// Sweep table: `series,<axis>,ber,status,margin_db`, one row per point and
/// series in the given order.
pub fn write_sweep_csv<W: Write>(axis: SweepAxis, series: &[(String, Vec<SweepPoint>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", axis.column(), "ber", "status", "margin_db"])?;
    for (name, points) in series {
        for p in points {
            w.write_record([
                name.clone(),
                format!("{:.6}", axis.display_value(p.value)),
                format!("{:.6e}", p.ber),
                status_name(p.status).into(),
                fmt_opt(p.margin_db),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rate/reach table: `reach_km,n_channels,net_rate_gbps,worst_channel,worst_ber,status,pass`.
pub fn write_table_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "reach_km",
        "n_channels",
        "net_rate_gbps",
        "worst_channel",
        "worst_ber",
        "status",
        "pass",
    ])?;
    for r in rows {
        w.write_record([
            format!("{}", r.reach_km),
            r.n_channels.to_string(),
            format!("{}", r.net_rate / 1e9),
            r.worst_channel.to_string(),
            format!("{:.6e}", r.worst_ber),
            status_name(r.status).into(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Stem shared by all artifacts of one run.
pub fn run_stem(scenario_hash: &str, seed: u64) -> String {
    format!("{scenario_hash}_s{seed}")
}

/// Writes the manifest `run_<hash>_s<seed>.json`, `ber_…csv`, `snr_…csv` and
/// one `loading_…_ch<k>.csv` per channel with a plan into `dir` (created if
/// missing). Returns the manifest path.
pub fn persist_run(record: &RunRecord, scenario: &ScenarioConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("cannot create {}", dir.display())))?;
    let stem = run_stem(&record.scenario_hash, record.seed);
    let mut files = Vec::new();

    let name = format!("ber_{stem}.csv");
    write_ber_csv(record, create(&dir.join(&name))?)?;
    files.push(name);
    let name = format!("snr_{stem}.csv");
    write_snr_csv(record, create(&dir.join(&name))?)?;
    files.push(name);
    for c in &record.channels {
        if let Some(plan) = &c.plan {
            let name = format!("loading_{stem}_ch{}.csv", c.channel);
            write_loading_csv(&c.snr, plan, create(&dir.join(&name))?)?;
            files.push(name);
        }
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        scenario_hash: record.scenario_hash.clone(),
        seed: record.seed,
        scenario: scenario.clone(),
        wall_time_s: record.wall_time_s,
        channels: record
            .channels
            .iter()
            .map(|c| ChannelSummary {
                channel: c.channel,
                status: c.status,
                bit_errors: c.ber.as_ref().map(|b| b.bit_errors),
                bits_total: c.ber.as_ref().map(|b| b.bits_total),
                ber: c.ber_value(),
                margin_db: c.margin_db,
            })
            .collect(),
        files,
    };
    let path = dir.join(format!("run_{stem}.json"));
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("cannot read {}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
