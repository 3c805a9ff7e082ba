//! Per-cell cycle data: loading, validation, normalization and train/test
//! splitting.
//!
//! On disk a fleet is a directory of one CSV file per cell plus a plain-text
//! manifest listing the files. The CSV contract is a fixed header
//! (`cycle_index,discharge_capacity,charge_capacity,internal_resistance,
//! temp_avg,temp_min,temp_max,charge_time`), one row per cycle, `.` decimal
//! separator. Columns are matched by header name, not position.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// The seven per-cycle measurement channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    DischargeCapacity,
    ChargeCapacity,
    InternalResistance,
    ChargeTime,
    TempAvg,
    TempMin,
    TempMax,
}

/// Canonical channel order used by [`FeatureSelection`] prefixes: capacity
/// channels first, then resistance and charge time, temperatures last.
pub const CANONICAL_ORDER: [Channel; 7] = [
    Channel::DischargeCapacity,
    Channel::ChargeCapacity,
    Channel::InternalResistance,
    Channel::ChargeTime,
    Channel::TempAvg,
    Channel::TempMin,
    Channel::TempMax,
];

/// Column order of the cell CSV contract (differs from the canonical
/// feature order: temperatures come before charge time on disk).
pub const CSV_CHANNEL_ORDER: [Channel; 7] = [
    Channel::DischargeCapacity,
    Channel::ChargeCapacity,
    Channel::InternalResistance,
    Channel::TempAvg,
    Channel::TempMin,
    Channel::TempMax,
    Channel::ChargeTime,
];

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::DischargeCapacity => "discharge_capacity",
            Channel::ChargeCapacity => "charge_capacity",
            Channel::InternalResistance => "internal_resistance",
            Channel::ChargeTime => "charge_time",
            Channel::TempAvg => "temp_avg",
            Channel::TempMin => "temp_min",
            Channel::TempMax => "temp_max",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        CANONICAL_ORDER.iter().copied().find(|c| c.name() == name)
    }

    /// Position in [`CANONICAL_ORDER`]; stable across releases, used by the
    /// checkpoint format.
    pub fn canonical_index(self) -> u8 {
        CANONICAL_ORDER.iter().position(|c| *c == self).unwrap() as u8
    }

    pub fn from_canonical_index(index: u8) -> Option<Channel> {
        CANONICAL_ORDER.get(index as usize).copied()
    }
}

/// One cycle's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    /// 1-based cycle number.
    pub cycle_index: u32,
    /// Discharge capacity in Ah.
    pub discharge_capacity: f64,
    /// Charge capacity in Ah.
    pub charge_capacity: f64,
    /// Internal resistance in Ohm.
    pub internal_resistance: f64,
    /// Average cell temperature over the cycle, in deg C.
    pub temp_avg: f64,
    /// Minimum cell temperature over the cycle, in deg C.
    pub temp_min: f64,
    /// Maximum cell temperature over the cycle, in deg C.
    pub temp_max: f64,
    /// Charge duration in minutes.
    pub charge_time: f64,
}

impl CycleRecord {
    pub fn channel(&self, ch: Channel) -> f64 {
        match ch {
            Channel::DischargeCapacity => self.discharge_capacity,
            Channel::ChargeCapacity => self.charge_capacity,
            Channel::InternalResistance => self.internal_resistance,
            Channel::ChargeTime => self.charge_time,
            Channel::TempAvg => self.temp_avg,
            Channel::TempMin => self.temp_min,
            Channel::TempMax => self.temp_max,
        }
    }

    /// Checks finiteness, positivity and temperature ordering.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.discharge_capacity,
            self.charge_capacity,
            self.internal_resistance,
            self.temp_avg,
            self.temp_min,
            self.temp_max,
            self.charge_time,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "cycle {}: non-finite channel value",
                self.cycle_index
            )));
        }
        if self.cycle_index == 0 {
            return Err(Error::Data("cycle_index must be >= 1".into()));
        }
        if self.discharge_capacity <= 0.0
            || self.charge_capacity <= 0.0
            || self.internal_resistance <= 0.0
            || self.charge_time <= 0.0
        {
            return Err(Error::Data(format!(
                "cycle {}: capacities, resistance and charge_time must be > 0",
                self.cycle_index
            )));
        }
        if !(self.temp_min <= self.temp_avg && self.temp_avg <= self.temp_max) {
            return Err(Error::Data(format!(
                "cycle {}: temperature ordering violated (min <= avg <= max required)",
                self.cycle_index
            )));
        }
        Ok(())
    }
}

/// One battery's full cycling history. Records are contiguous from cycle 1
/// to EOL with no gaps or duplicates; EOL equals the record count.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistory {
    cell_id: String,
    records: Vec<CycleRecord>,
}

impl CellHistory {
    pub fn new(cell_id: impl Into<String>, records: Vec<CycleRecord>) -> Result<Self> {
        let cell_id = cell_id.into();
        if records.is_empty() {
            return Err(Error::Data(format!("cell {cell_id}: no cycle records")));
        }
        for (i, rec) in records.iter().enumerate() {
            rec.validate()
                .map_err(|e| Error::Data(format!("cell {cell_id}: {e}")))?;
            let expected = (i + 1) as u32;
            if rec.cycle_index != expected {
                return Err(Error::Data(format!(
                    "cell {cell_id}: cycle_index {} at position {} (expected {}, \
                     records must be contiguous from 1)",
                    rec.cycle_index, i, expected
                )));
            }
        }
        Ok(CellHistory { cell_id, records })
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn records(&self) -> &[CycleRecord] {
        &self.records
    }

    /// End of life: the last (and highest) cycle index.
    pub fn eol(&self) -> usize {
        self.records.len()
    }

    /// Values of one channel across all cycles, in cycle order.
    pub fn channel_values(&self, ch: Channel) -> Vec<f64> {
        self.records.iter().map(|r| r.channel(ch)).collect()
    }
}

/// An ordered, duplicate-free subset of the seven channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSelection {
    channels: Vec<Channel>,
}

impl FeatureSelection {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() || channels.len() > 7 {
            return Err(Error::Config(format!(
                "feature selection must contain 1..=7 channels, got {}",
                channels.len()
            )));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::Config(format!(
                    "duplicate channel in feature selection: {}",
                    c.name()
                )));
            }
        }
        Ok(FeatureSelection { channels })
    }

    /// First `n` channels of the canonical order.
    pub fn first_n(n: usize) -> Result<Self> {
        if n == 0 || n > 7 {
            return Err(Error::Config(format!(
                "feature count must be in 1..=7, got {n}"
            )));
        }
        Ok(FeatureSelection {
            channels: CANONICAL_ORDER[..n].to_vec(),
        })
    }

    pub fn all() -> Self {
        FeatureSelection {
            channels: CANONICAL_ORDER.to_vec(),
        }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Per-channel mean and population standard deviation over a training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    entries: Vec<(Channel, f64, f64)>, // (channel, mean, std)
}

impl NormalizationStats {
    pub fn from_entries(entries: Vec<(Channel, f64, f64)>) -> Result<Self> {
        for (ch, _, std) in &entries {
            if !(*std > 0.0) {
                return Err(Error::Data(format!(
                    "channel {} has non-positive std {std}",
                    ch.name()
                )));
            }
        }
        Ok(NormalizationStats { entries })
    }

    pub fn entries(&self) -> &[(Channel, f64, f64)] {
        &self.entries
    }

    pub fn lookup(&self, ch: Channel) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .find(|(c, _, _)| *c == ch)
            .map(|(_, m, s)| (*m, *s))
    }
}

/// Selected-channel values of one cell as a dense row-per-channel matrix,
/// either raw or normalized. This is what the windowing layer cuts up.
#[derive(Debug, Clone, PartialEq)]
pub struct CellChannels {
    cell_id: String,
    eol: usize,
    /// `rows[r][c]` = channel r (selection order) at cycle c+1.
    rows: Vec<Vec<f64>>,
}

impl CellChannels {
    pub fn from_cell(cell: &CellHistory, selection: &FeatureSelection) -> Self {
        CellChannels {
            cell_id: cell.cell_id().to_string(),
            eol: cell.eol(),
            rows: selection
                .channels()
                .iter()
                .map(|&ch| cell.channel_values(ch))
                .collect(),
        }
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn eol(&self) -> usize {
        self.eol
    }

    pub fn n_channels(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Population mean/std per selected channel over the pooled cycles of
/// `cells`. Constant channels are rejected.
pub fn compute_normalization(
    cells: &[CellHistory],
    selection: &FeatureSelection,
) -> Result<NormalizationStats> {
    if cells.is_empty() {
        return Err(Error::Data(
            "cannot compute normalization stats from an empty cell list".into(),
        ));
    }
    let mut entries = Vec::with_capacity(selection.len());
    for &ch in selection.channels() {
        let mut n = 0usize;
        let mut sum = 0.0;
        for cell in cells {
            for rec in cell.records() {
                sum += rec.channel(ch);
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for cell in cells {
            for rec in cell.records() {
                let d = rec.channel(ch) - mean;
                ss += d * d;
            }
        }
        let var = ss / n as f64;
        if var == 0.0 {
            return Err(Error::Data(format!(
                "channel {} has zero variance over the training pool",
                ch.name()
            )));
        }
        entries.push((ch, mean, var.sqrt()));
    }
    NormalizationStats::from_entries(entries)
}

/// Z-scores the selected channels of `cell` with `stats`; unselected
/// channels are dropped.
pub fn apply_normalization(
    cell: &CellHistory,
    stats: &NormalizationStats,
    selection: &FeatureSelection,
) -> Result<CellChannels> {
    let mut rows = Vec::with_capacity(selection.len());
    for &ch in selection.channels() {
        let (mean, std) = stats.lookup(ch).ok_or_else(|| {
            Error::Data(format!(
                "normalization stats do not cover channel {}",
                ch.name()
            ))
        })?;
        rows.push(
            cell.channel_values(ch)
                .into_iter()
                .map(|v| (v - mean) / std)
                .collect(),
        );
    }
    Ok(CellChannels {
        cell_id: cell.cell_id().to_string(),
        eol: cell.eol(),
        rows,
    })
}

/// Inverse of [`apply_normalization`] for a single channel's values.
pub fn denormalize_channel(values: &[f64], mean: f64, std: f64) -> Vec<f64> {
    values.iter().map(|v| v * std + mean).collect()
}

/// Deterministic seeded shuffle split into `n_train` training cells and the
/// rest as test cells.
pub fn split_train_test(
    cells: Vec<CellHistory>,
    n_train: usize,
    seed: u64,
) -> Result<(Vec<CellHistory>, Vec<CellHistory>)> {
    if n_train >= cells.len() {
        return Err(Error::Config(format!(
            "n_train ({n_train}) must be smaller than the number of cells ({})",
            cells.len()
        )));
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(cells.len() - n_train);
    let mut cells: Vec<Option<CellHistory>> = cells.into_iter().map(Some).collect();
    for (pos, idx) in order.into_iter().enumerate() {
        let cell = cells[idx].take().expect("each index visited once");
        if pos < n_train {
            train.push(cell);
        } else {
            test.push(cell);
        }
    }
    Ok((train, test))
}

const CSV_HEADER: &str = "cycle_index,discharge_capacity,charge_capacity,internal_resistance,\
                          temp_avg,temp_min,temp_max,charge_time";

/// Loads one cell from a CSV file conforming to the contract. The cell id is
/// the file stem.
pub fn load_cell_file(path: &Path) -> Result<CellHistory> {
    let fname = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: fname.clone(),
            line: 0,
            msg: e.to_string(),
        })?;

    // Map each contract column to its position in this file's header.
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            file: fname.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                file: fname.clone(),
                line: 1,
                msg: format!("missing column '{name}'"),
            })
    };
    let idx_cycle = col("cycle_index")?;
    let idx: Vec<usize> = CSV_CHANNEL_ORDER
        .iter()
        .map(|ch| col(ch.name()))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let row = row.map_err(|e| Error::Parse {
            file: fname.clone(),
            line,
            msg: e.to_string(),
        })?;
        let field = |j: usize| -> Result<&str> {
            row.get(j).ok_or_else(|| Error::Parse {
                file: fname.clone(),
                line,
                msg: format!("missing field {j}"),
            })
        };
        let parse_f64 = |j: usize| -> Result<f64> {
            let s = field(j)?;
            s.parse::<f64>().map_err(|_| Error::Parse {
                file: fname.clone(),
                line,
                msg: format!("invalid number '{s}'"),
            })
        };
        let cycle_index: u32 = field(idx_cycle)?.parse().map_err(|_| Error::Parse {
            file: fname.clone(),
            line,
            msg: format!("invalid cycle_index '{}'", field(idx_cycle).unwrap_or("")),
        })?;
        let v: Vec<f64> = idx.iter().map(|&j| parse_f64(j)).collect::<Result<_>>()?;
        records.push(CycleRecord {
            cycle_index,
            discharge_capacity: v[0],
            charge_capacity: v[1],
            internal_resistance: v[2],
            temp_avg: v[3],
            temp_min: v[4],
            temp_max: v[5],
            charge_time: v[6],
        });
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fname.clone());
    CellHistory::new(stem, records).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{fname}: {msg}")),
        other => other,
    })
}

/// Loads a fleet. `path` may be a manifest file (one relative CSV path per
/// line, `#` comments allowed) or a directory; a directory is read through
/// its `manifest.txt` when present, otherwise all `*.csv` files sorted by
/// name. Files load in parallel; results keep manifest order.
pub fn load_cells(path: &Path) -> Result<Vec<CellHistory>> {
    let files = resolve_fleet_files(path)?;
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no cell files found under {}",
            path.display()
        )));
    }
    files
        .par_iter()
        .map(|f| load_cell_file(f))
        .collect::<Result<Vec<_>>>()
}

fn resolve_fleet_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(Error::Data(format!("path does not exist: {}", path.display())));
    }
    if path.is_dir() {
        let manifest = path.join("manifest.txt");
        if manifest.is_file() {
            return read_manifest(&manifest);
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
            .collect();
        files.sort();
        Ok(files)
    } else {
        read_manifest(path)
    }
}

/// Parses a manifest: one relative path per line, blank lines and `#`
/// comments skipped. Paths resolve against the manifest's directory.
pub fn read_manifest(manifest: &Path) -> Result<Vec<PathBuf>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(manifest)?;
    let mut files = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        files.push(base.join(line));
    }
    Ok(files)
}

/// Writes one cell to `path` in the CSV contract. Numeric text carries 17
/// significant digits so a reload is bit-exact.
pub fn save_cell_file(cell: &CellHistory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in cell.records() {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.cycle_index,
            r.discharge_capacity,
            r.charge_capacity,
            r.internal_resistance,
            r.temp_avg,
            r.temp_min,
            r.temp_max,
            r.charge_time,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every cell as `<cell_id>.csv` under `dir` plus a `manifest.txt`
/// listing them in order. Returns the manifest path.
pub fn save_cells(cells: &[CellHistory], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.txt");
    let mut m = BufWriter::new(File::create(&manifest)?);
    writeln!(m, "# fleet manifest: one cell CSV per line")?;
    for cell in cells {
        let fname = format!("{}.csv", cell.cell_id());
        save_cell_file(cell, &dir.join(&fname))?;
        writeln!(m, "{fname}")?;
    }
    m.flush()?;
    Ok(manifest)
}
