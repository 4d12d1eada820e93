//! On-disk dataset format: `manifest.json` plus one CSV per rate.
//!
//! CSV header is `t,voltage,mode,rate,soc,i0..i{n-1}` with mode as the class
//! integer 0-3, rate as 0 = 0.2C / 1 = 1.0C, and all floats printed with nine
//! decimal places so emit/parse round trips agree within 1e-9.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CRate, CellProtocol, Dataset, GridSpec, Mode, PeakSpec, SampleRecord, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// Everything needed to regenerate or reload a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub wavelength: f64,
    pub grid: GridSpec,
    pub background: [f64; 3],
    pub guard_band: f64,
    pub peaks: Vec<PeakSpec>,
    pub runs: Vec<ManifestRun>,
}

/// One generated run (one rate, one file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRun {
    pub protocol: CellProtocol,
    pub file: String,
    pub rows: usize,
}

impl Manifest {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            wavelength: self.wavelength,
            grid: self.grid.clone(),
            background: self.background,
            guard_band: self.guard_band,
        }
    }
}

fn csv_file_name(rate: CRate) -> String {
    format!("data_{}.csv", rate.label())
}

/// Write one dataset per protocol plus the manifest; returns the manifest.
pub fn write_dataset_dir(
    dir: &Path,
    cfg: &SynthConfig,
    peaks: &[PeakSpec],
    runs: &[(CellProtocol, Dataset)],
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest_runs = Vec::with_capacity(runs.len());
    for (protocol, dataset) in runs {
        let file = csv_file_name(protocol.rate);
        write_csv(&dir.join(&file), dataset)?;
        manifest_runs.push(ManifestRun {
            protocol: protocol.clone(),
            file,
            rows: dataset.records.len(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        wavelength: cfg.wavelength,
        grid: cfg.grid.clone(),
        background: cfg.background,
        guard_band: cfg.guard_band,
        peaks: peaks.to_vec(),
        runs: manifest_runs,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let n = dataset.two_theta.len();
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "t,voltage,mode,rate,soc")?;
    for i in 0..n {
        write!(w, ",i{i}")?;
    }
    writeln!(w)?;
    for r in &dataset.records {
        write!(
            w,
            "{:.9},{:.9},{},{},{:.9}",
            r.t,
            r.voltage,
            r.mode.class_index(),
            r.rate.class_index(),
            r.soc
        )?;
        for v in &r.intensity {
            write!(w, ",{v:.9}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a dataset directory: parse the manifest, then every run file in
/// manifest order, merged into one dataset on the manifest grid.
pub fn read_dataset_dir(dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Version(format!(
            "manifest version {} (supported: {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    manifest.grid.validate()?;
    let two_theta = manifest.grid.values();
    let mut dataset = Dataset { two_theta, records: Vec::new() };
    for run in &manifest.runs {
        let records = read_csv(&dir.join(&run.file), manifest.grid.n)?;
        dataset.records.extend(records);
    }
    Ok((manifest, dataset))
}

fn read_csv(path: &PathBuf, n_points: usize) -> Result<Vec<SampleRecord>> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut offset: u64 = 0;
    let mut line = String::new();

    let bad = |offset: u64, msg: String| Error::Format { offset, msg };

    // header
    let read = reader.read_line(&mut line)?;
    if read == 0 {
        return Err(bad(0, "empty csv".into()));
    }
    let expected_cols = 5 + n_points;
    let header_cols = line.trim_end().split(',').count();
    if header_cols != expected_cols {
        return Err(bad(0, format!("header has {header_cols} columns, expected {expected_cols}")));
    }
    offset += read as u64;

    let mut records = Vec::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        let row = line.trim_end();
        if row.is_empty() {
            offset += read as u64;
            continue;
        }
        let mut fields = row.split(',');
        let mut next_f64 = |what: &str| -> Result<f64> {
            let s = fields
                .next()
                .ok_or_else(|| bad(offset, format!("missing column {what}")))?;
            s.parse::<f64>()
                .map_err(|e| bad(offset, format!("bad {what} value {s:?}: {e}")))
        };
        let t = next_f64("t")?;
        let voltage = next_f64("voltage")?;
        let mode = Mode::from_class_index(next_f64("mode")? as usize)?;
        let rate = CRate::from_class_index(next_f64("rate")? as usize)?;
        let soc = next_f64("soc")?;
        let mut intensity = Vec::with_capacity(n_points);
        for i in 0..n_points {
            intensity.push(next_f64(&format!("i{i}"))?);
        }
        if fields.next().is_some() {
            return Err(bad(offset, "extra columns in row".into()));
        }
        records.push(SampleRecord { intensity, voltage, mode, rate, soc, t });
        offset += read as u64;
    }
    Ok(records)
}
