//! Result files: CSV or JSON records plus a `<path>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ExperimentSpec, Metric, ResultRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "scenario",
    "estimator",
    "snr_db",
    "k",
    "trial",
    "seed",
    "nmse",
    "se",
    "wall_time_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub software: String,
    pub version: String,
    pub format: Format,
    pub records: usize,
    pub spec: Option<ExperimentSpec>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn metric_cell(m: Metric) -> String {
    match m {
        Metric::Value(v) => v.to_string(),
        Metric::Infeasible => Metric::INFEASIBLE.to_string(),
        Metric::Missing => String::new(),
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    match s {
        "" => Ok(Metric::Missing),
        Metric::INFEASIBLE => Ok(Metric::Infeasible),
        v => v.parse().map(Metric::Value).map_err(|e| format!("{v:?}: {e}")),
    }
}

/// Writes CSV to any sink. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_csv<W: Write>(records: &[ResultRecord], sink: W) -> Result<()> {
    for r in records {
        r.check_finite()?;
    }
    let mut w = csv::Writer::from_writer(sink);
    let wrap = |e: csv::Error| Error::Format { path: PathBuf::from("<csv>"), message: e.to_string() };
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.estimator.clone(),
            r.snr_db.to_string(),
            r.k.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            metric_cell(r.nmse),
            metric_cell(r.se),
            r.wall_time_ms.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn parse_csv<R: Read>(source: R, path: &Path) -> Result<Vec<ResultRecord>> {
    let fmt_err = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = rd.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(fmt_err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| fmt_err(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |name: &str, e: String| fmt_err(format!("row {}: {name}: {e}", line + 1));
        out.push(ResultRecord {
            scenario: field(0).to_string(),
            estimator: field(1).to_string(),
            snr_db: field(2).parse().map_err(|e| bad("snr_db", format!("{e}")))?,
            k: field(3).parse().map_err(|e| bad("k", format!("{e}")))?,
            trial: field(4).parse().map_err(|e| bad("trial", format!("{e}")))?,
            seed: field(5).parse().map_err(|e| bad("seed", format!("{e}")))?,
            nmse: parse_metric(field(6)).map_err(|e| bad("nmse", e))?,
            se: parse_metric(field(7)).map_err(|e| bad("se", e))?,
            wall_time_ms: field(8).parse().map_err(|e| bad("wall_time_ms", format!("{e}")))?,
        });
    }
    Ok(out)
}

/// Writes `records` to `path` and the spec with the software version to
/// `<path>.meta.json`.
pub fn write_results(records: &[ResultRecord], spec: Option<&ExperimentSpec>, path: &Path, format: Format) -> Result<()> {
    for r in records {
        r.check_finite()?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut sink = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(records, &mut sink).map_err(|e| relabel(e, path))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, records)
                .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
            sink.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    sink.flush().map_err(|e| Error::io(path, e))?;

    let meta = Metadata {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        format,
        records: records.len(),
        spec: spec.cloned(),
    };
    let meta_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(meta_path, e))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::Format { path: path.to_path_buf(), message },
        other => other,
    }
}

pub fn read_results(path: &Path, format: Format) -> Result<Vec<ResultRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => parse_csv(file, path),
        Format::Json => serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() }),
    }
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: meta_path, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ResultRecord> {
        let base = ResultRecord {
            scenario: "single_user_downlink".into(),
            estimator: "MF_AM".into(),
            snr_db: -10.0,
            k: 400,
            trial: 0,
            seed: u64::MAX,
            nmse: Metric::Value(0.1 + 0.2),
            se: Metric::Missing,
            wall_time_ms: 0.0,
        };
        vec![
            base.clone(),
            ResultRecord { estimator: "LS".into(), nmse: Metric::Infeasible, se: Metric::Infeasible, ..base.clone() },
            ResultRecord { nmse: Metric::Value(1.2345678901234567e-300), se: Metric::Value(7.25), snr_db: 2.5, ..base },
        ]
    }

    #[test]
    fn csv_round_trip_and_header() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,estimator,snr_db,k,trial,seed,nmse,se,wall_time_ms\n"));
        assert!(text.contains(",infeasible,infeasible,"));
        assert_eq!(parse_csv(buf.as_slice(), Path::new("x")).unwrap(), sample());

        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "scenario,estimator,snr_db,k,trial,seed,nmse,se,wall_time_ms\n");
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::single_user_default();
        for (name, fmt) in [("r.csv", Format::Csv), ("r.json", Format::Json)] {
            let path = dir.path().join(name);
            write_results(&sample(), Some(&spec), &path, fmt).unwrap();
            assert_eq!(read_results(&path, fmt).unwrap(), sample());
            let meta = read_metadata(&path).unwrap();
            assert_eq!(meta.spec.as_ref(), Some(&spec));
            assert_eq!(meta.records, 3);
            assert_eq!(meta.version, env!("CARGO_PKG_VERSION"));
        }
    }

    #[test]
    fn rejects_nan_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut rows = sample();
        rows[0].nmse = Metric::Value(f64::NAN);
        assert!(matches!(write_results(&rows, None, &path, Format::Csv), Err(Error::InvalidArgument(_))));
        assert!(!path.exists());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let path = Path::new("/nonexistent-dir/out.csv");
        match write_results(&sample(), None, path, Format::Csv) {
            Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
    }
}
