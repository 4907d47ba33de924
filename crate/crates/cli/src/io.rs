//! Ingestion and artifact formats: the sample CSV schema, plot-ready density
//! tables, and the mixture-model JSON document.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, FixedOffset};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use ttmix_core::postprocess::{Component, RepairComponent};
use ttmix_core::{MixtureModel, TimeGrid};

use crate::Failure;

/// One parsed input row.
#[derive(Debug, Clone)]
pub struct Row {
    /// Timestamp as written, kept verbatim for snapshots.
    pub timestamp: Option<String>,
    pub parsed: Option<DateTime<FixedOffset>>,
    pub travel_time_s: f64,
    pub link: Option<String>,
}

/// A parsed input file.
#[derive(Debug, Clone)]
pub struct InputData {
    pub rows: Vec<Row>,
    pub has_timestamps: bool,
    pub has_links: bool,
}

impl InputData {
    pub fn travel_times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.travel_time_s).collect()
    }
}

fn bad(msg: String) -> Failure {
    Failure::Input(msg)
}

/// Read a sample CSV. The header decides the shape: `travel_time_s` alone,
/// with a leading `timestamp_iso8601`, or with a trailing `link_id`.
pub fn read_input(path: &Path) -> Result<InputData, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let names: Vec<&str> = headers.iter().map(String::as_str).collect();
    let (has_timestamps, has_links) = match names.as_slice() {
        ["travel_time_s"] => (false, false),
        ["timestamp_iso8601", "travel_time_s"] => (true, false),
        ["timestamp_iso8601", "travel_time_s", "link_id"] => (true, true),
        other => {
            return Err(bad(format!(
                "{}: unrecognized header {other:?}; expected travel_time_s, optionally \
                 preceded by timestamp_iso8601 and followed by link_id",
                path.display()
            )))
        }
    };

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(format!("{} line {line}: {e}", path.display())))?;
        let mut fields = rec.iter();
        let (timestamp, parsed) = if has_timestamps {
            let raw = fields.next().unwrap_or_default();
            let parsed = DateTime::parse_from_rfc3339(raw).map_err(|e| {
                bad(format!("{} line {line}: bad timestamp '{raw}': {e}", path.display()))
            })?;
            (Some(raw.to_string()), Some(parsed))
        } else {
            (None, None)
        };
        let raw_t = fields.next().unwrap_or_default();
        let travel_time_s: f64 = raw_t.parse().map_err(|_| {
            bad(format!("{} line {line}: bad travel time '{raw_t}'", path.display()))
        })?;
        if !travel_time_s.is_finite() {
            return Err(bad(format!(
                "{} line {line}: travel time must be finite, got {raw_t}",
                path.display()
            )));
        }
        let link = if has_links {
            let id = fields.next().unwrap_or_default();
            if id.is_empty() {
                return Err(bad(format!("{} line {line}: empty link_id", path.display())));
            }
            Some(id.to_string())
        } else {
            None
        };
        rows.push(Row { timestamp, parsed, travel_time_s, link });
    }
    Ok(InputData { rows, has_timestamps, has_links })
}

/// Reject the first out-of-order timestamp, pointing at `--sort`.
pub fn ensure_ordered(rows: &[Row]) -> Result<(), Failure> {
    for (i, pair) in rows.windows(2).enumerate() {
        if pair[1].parsed < pair[0].parsed {
            return Err(Failure::Input(format!(
                "rows are not ordered by timestamp (line {} precedes line {}); \
                 pass --sort to order them",
                i + 3,
                i + 2
            )));
        }
    }
    Ok(())
}

/// Stable sort by timestamp; equal stamps keep their file order.
pub fn sort_rows(rows: &mut [Row]) {
    rows.sort_by_key(|r| r.parsed);
}

/// Write the ingestion-schema CSV that `read_input` accepts.
pub fn write_samples_csv(path: &Path, rows: &[Row], links: bool) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(f);
    writeln!(
        out,
        "timestamp_iso8601,travel_time_s{}",
        if links { ",link_id" } else { "" }
    )?;
    for r in rows {
        write!(out, "{},{}", r.timestamp.as_deref().unwrap_or_default(), r.travel_time_s)?;
        if links {
            write!(out, ",{}", r.link.as_deref().unwrap_or_default())?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Write the plot table: per-cell masses of the smoothed and fitted
/// densities; each mass column sums to one.
pub fn write_density_csv(
    path: &Path,
    grid: &TimeGrid,
    parzen: &Array1<f64>,
    fitted: &Array1<f64>,
) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(f);
    writeln!(out, "t_s,parzen,fitted")?;
    for (i, &t) in grid.support_times().iter().enumerate() {
        writeln!(out, "{t},{},{}", parzen[i], fitted[i])?;
    }
    out.flush()
}

/// One mixture component in artifact coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub t_s: f64,
    pub sigma_s: f64,
    pub weight: f64,
}

impl From<&Component> for ComponentDoc {
    fn from(c: &Component) -> Self {
        Self { t_s: c.location, sigma_s: c.scale, weight: c.weight }
    }
}

/// The appended make-up component restoring an exact unit weight sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RepairDoc {
    pub t_s: f64,
    pub sigma_s: f64,
    pub weight: f64,
    pub normalizer: f64,
}

impl From<&RepairComponent> for RepairDoc {
    fn from(r: &RepairComponent) -> Self {
        Self { t_s: r.location, sigma_s: r.scale, weight: r.weight, normalizer: r.normalizer }
    }
}

/// Fit diagnostics embedded in the model document; no timing, so the file
/// is identical across runs of the same configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub samples: usize,
    pub bandwidth_s: f64,
    pub reg_weight: f64,
    pub support_size: usize,
    pub objective: f64,
    pub rmse_to_target: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dictionary_id: String,
}

/// The model artifact: grid, components, repair record, diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub grid: TimeGrid,
    pub components: Vec<ComponentDoc>,
    pub repair: Option<RepairDoc>,
    pub metrics: MetricsDoc,
}

impl ModelDoc {
    pub fn new(grid: &TimeGrid, model: &MixtureModel, metrics: MetricsDoc) -> Self {
        Self {
            grid: grid.clone(),
            components: model.components.iter().map(ComponentDoc::from).collect(),
            repair: model.repair.as_ref().map(RepairDoc::from),
            metrics,
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(doc).expect("document serializes");
    std::fs::write(path, text + "\n")
}
