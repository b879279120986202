//! Result rows and the single CSV writer they go through.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: [&str; 11] = [
    "run_id",
    "experiment",
    "architecture",
    "loss",
    "direction",
    "seed",
    "epoch",
    "metric_name",
    "metric_value",
    "wall_time_s",
    "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Failed => "failed",
        }
    }
}

/// One measurement. `seed: None` marks an aggregate over seeds and
/// `epoch: None` a final value.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub experiment: String,
    pub architecture: String,
    pub loss: String,
    pub direction: String,
    pub seed: Option<u64>,
    pub epoch: Option<usize>,
    pub metric_name: String,
    pub metric_value: f64,
    pub wall_time_s: f64,
    pub status: Status,
}

impl ResultRow {
    /// Cells as written: the status is forced to `failed` for a
    /// non-finite value.
    pub fn cells(&self) -> [String; 11] {
        let status = if self.metric_value.is_finite() { self.status } else { Status::Failed };
        [
            self.run_id.clone(),
            self.experiment.clone(),
            self.architecture.clone(),
            self.loss.clone(),
            self.direction.clone(),
            self.seed.map_or_else(|| "all".to_string(), |s| s.to_string()),
            self.epoch.map_or_else(|| "final".to_string(), |e| e.to_string()),
            self.metric_name.clone(),
            format!("{}", self.metric_value),
            format!("{:.3}", self.wall_time_s),
            status.name().to_string(),
        ]
    }

    pub fn from_cells(cells: &[&str]) -> Result<Self> {
        if cells.len() != HEADER.len() {
            return Err(Error::Io(format!("expected {} columns, got {}", HEADER.len(), cells.len())));
        }
        let bad = |what: &str, v: &str| Error::Io(format!("bad {what} `{v}`"));
        Ok(ResultRow {
            run_id: cells[0].into(),
            experiment: cells[1].into(),
            architecture: cells[2].into(),
            loss: cells[3].into(),
            direction: cells[4].into(),
            seed: match cells[5] {
                "all" => None,
                s => Some(s.parse().map_err(|_| bad("seed", s))?),
            },
            epoch: match cells[6] {
                "final" => None,
                e => Some(e.parse().map_err(|_| bad("epoch", e))?),
            },
            metric_name: cells[7].into(),
            metric_value: cells[8].parse().map_err(|_| bad("metric_value", cells[8]))?,
            wall_time_s: cells[9].parse().map_err(|_| bad("wall_time_s", cells[9]))?,
            status: match cells[10] {
                "ok" => Status::Ok,
                "failed" => Status::Failed,
                s => return Err(bad("status", s)),
            },
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Read every row of a results file.
pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Io(format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(csv_err)?;
            ResultRow::from_cells(&r.iter().collect::<Vec<_>>())
        })
        .collect()
}

/// Appends rows to one CSV file. A run id already in the file counts as
/// complete, since each run's rows are written together.
pub struct ResultSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl ResultSink {
    /// Open `path` for a run matrix. Fails if any planned run id is
    /// already present, unless `force`, which drops those runs' rows.
    pub fn open(path: impl AsRef<Path>, planned: &[String], force: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let existing = if path.exists() && fs::metadata(&path)?.len() > 0 {
            read_rows(&path)?
        } else {
            Vec::new()
        };
        let planned: BTreeSet<&str> = planned.iter().map(String::as_str).collect();
        let done: BTreeSet<&str> = existing.iter().map(|r| r.run_id.as_str()).filter(|id| planned.contains(id)).collect();
        if !done.is_empty() && !force {
            let list: Vec<&str> = done.into_iter().collect();
            return Err(Error::Config(format!(
                "{} already holds completed runs (rerun with --force to replace them): {}",
                path.display(),
                list.join(", ")
            )));
        }
        if !done.is_empty() || existing.is_empty() {
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(HEADER).map_err(csv_err)?;
            for row in existing.iter().filter(|r| !done.contains(r.run_id.as_str())) {
                w.write_record(row.cells()).map_err(csv_err)?;
            }
            w.flush()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(ResultSink {
            path,
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, rows: &[ResultRow]) -> Result<()> {
        for row in rows {
            self.writer.write_record(row.cells()).map_err(csv_err)?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

/// Rows as CSV text with a header, for printing or diffing.
pub fn to_csv_string(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(row.cells()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
