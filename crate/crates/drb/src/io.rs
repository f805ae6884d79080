//! File formats: measures (JSON or CSV), potentials, traces, certificates
//! and sample dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use drb_core::measures::MeasureData;
use drb_core::{ConvergenceTrace, DiscreteMeasure, PointCloud, PotentialVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const TRACE_HEADER: [&str; 6] = [
    "t",
    "dual_value",
    "improvement_bound",
    "gap_upper_bound",
    "max_osc",
    "wall_ms",
];

pub const FREE_TRACE_EXTRA: [&str; 3] = ["epsilon_certified", "n_samples", "sigma"];

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads `{"points": [...], "weights": [...]}` or a CSV file with a header
/// row, `d` coordinate columns and a final weight column.
pub fn read_measure_data(path: &Path) -> Result<MeasureData> {
    if !is_csv(path) {
        return read_json(path);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let width = reader.headers()?.len();
    if width < 2 {
        bail!(
            "{}: need at least one coordinate column and a weight column",
            path.display()
        );
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            bail!(
                "{}: row {} has {} fields, expected {width}",
                path.display(),
                row + 1,
                record.len()
            );
        }
        let values = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), row + 1))?;
        weights.push(values[width - 1]);
        points.push(values[..width - 1].to_vec());
    }
    Ok(MeasureData { points, weights })
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    read_measure_data(path)?
        .into_measure()
        .with_context(|| format!("invalid measure in {}", path.display()))
}

pub fn write_measure(path: &Path, measure: &DiscreteMeasure) -> Result<()> {
    if is_csv(path) {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=measure.dim()).map(|i| format!("x{i}")).collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for (x, wt) in measure.points().iter().zip(measure.weights()) {
            let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
            row.push(wt.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        return Ok(());
    }
    write_json(path, &MeasureData::from(measure))
}

/// Potentials `ψʲ` as value lists, one per marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialsFile {
    pub potentials: Vec<Vec<f64>>,
}

impl PotentialsFile {
    pub fn from_potentials(psi: &[PotentialVector]) -> Self {
        Self {
            potentials: psi.iter().map(|p| p.values().to_vec()).collect(),
        }
    }

    pub fn anchor(self, marginals: &[DiscreteMeasure]) -> Result<Vec<PotentialVector>> {
        if self.potentials.len() != marginals.len() {
            bail!(
                "{} potentials given for {} marginals",
                self.potentials.len(),
                marginals.len()
            );
        }
        self.potentials
            .into_iter()
            .zip(marginals)
            .enumerate()
            .map(|(j, (v, nu))| {
                PotentialVector::on(nu, v).with_context(|| format!("potential {j}"))
            })
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a trace with the fixed header, plus the sampling columns when
/// `free_support` is set.
pub fn write_trace_csv(path: &Path, trace: &ConvergenceTrace, free_support: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut header: Vec<&str> = TRACE_HEADER.to_vec();
    if free_support {
        header.extend(FREE_TRACE_EXTRA);
    }
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![
            r.t.to_string(),
            opt(r.dual_value),
            r.improvement_bound.to_string(),
            opt(r.gap_upper_bound),
            r.max_osc.to_string(),
            r.wall_ms.to_string(),
        ];
        if free_support {
            row.push(opt(r.epsilon_certified));
            row.push(r.n_samples.map(|n| n.to_string()).unwrap_or_default());
            row.push(opt(r.sigma));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed trace row; empty cells become `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub dual_value: Option<f64>,
    pub improvement_bound: f64,
    pub gap_upper_bound: Option<f64>,
    pub max_osc: f64,
    pub wall_ms: f64,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < TRACE_HEADER.len() || header[..TRACE_HEADER.len()] != TRACE_HEADER {
        bail!("{}: unexpected trace header {:?}", path.display(), header);
    }
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse()?))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(TraceRow {
            t: r[0].parse()?,
            dual_value: cell(&r[1])?,
            improvement_bound: r[2].parse()?,
            gap_upper_bound: cell(&r[3])?,
            max_osc: r[4].parse()?,
            wall_ms: r[5].parse()?,
        });
    }
    Ok(rows)
}

/// One row per point, columns `x1..xd`.
pub fn write_samples_csv(path: &Path, points: &PointCloud) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let header: Vec<String> = (1..=points.dim()).map(|i| format!("x{i}")).collect();
    w.write_record(&header)?;
    for x in points.iter() {
        w.write_record(x.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<PointCloud> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(
            r.iter()
                .map(str::parse)
                .collect::<std::result::Result<Vec<f64>, _>>()?,
        );
    }
    Ok(PointCloud::new(&rows)?)
}
