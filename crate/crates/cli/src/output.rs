//! Result files: a JSON-lines bundle and one CSV table per report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mlqmc_core::estimators::Screening;
use mlqmc_core::rates::{RateFit, TheoremVerdict};
use mlqmc_core::verify::VerifyReport;
use mlqmc_core::{Error, EstimatorReport, LevelKey, LevelRecord, MultiIndex};

use crate::{CliError, CliResult};

use crate::config::{OutputFormat, RunConfig};

pub const FORMAT_VERSION: u32 = 1;

/// One line of the bundle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum BundleRecord {
    Header {
        version: String,
        format: u32,
        command: String,
        config_hash: String,
        config: Box<RunConfig>,
    },
    Screening(Box<Screening>),
    Report(Box<EstimatorReport>),
    Verdict(Box<TheoremVerdict>),
    Rates(Box<RateFit>),
    Verify(Box<VerifyReport>),
    Failure { stage: String, kind: String, message: String },
}

pub fn header(command: &str, config: &RunConfig) -> BundleRecord {
    let mut echo = config.clone();
    echo.output = Default::default();
    echo.threads = 0;
    BundleRecord::Header {
        version: env!("CARGO_PKG_VERSION").into(),
        format: FORMAT_VERSION,
        command: command.into(),
        config_hash: config.hash(),
        config: Box::new(echo),
    }
}

pub fn failure(stage: &str, err: &Error) -> BundleRecord {
    let kind = match err {
        Error::Config(_) => "config",
        Error::Argument(_) => "argument",
        _ => "estimator",
    };
    BundleRecord::Failure {
        stage: stage.into(),
        kind: kind.into(),
        message: err.to_string(),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes the bundle to `<dir>/<name>.jsonl`.
pub fn write_bundle(dir: &Path, name: &str, records: &[BundleRecord]) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(format!("{name}.jsonl"));
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| io_err(&path, e))?;
        buf.push(b'\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_bundle(path: &Path) -> CliResult<Vec<BundleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::Core(Error::Config(format!("{} line {}: {e}", path.display(), i + 1))))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    key: String,
    mean: f64,
    raw_variance: f64,
    variance_of_mean: f64,
    cost_per_sample: f64,
    #[serde(rename = "N")]
    n: u64,
    #[serde(rename = "R")]
    r: u64,
    total_cost: f64,
}

pub fn write_table(path: &Path, records: &[LevelRecord]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for rec in records {
        w.serialize(Row {
            key: rec.key.to_string(),
            mean: rec.mean,
            raw_variance: rec.raw_variance,
            variance_of_mean: rec.variance_of_mean,
            cost_per_sample: rec.cost_per_sample,
            n: rec.n,
            r: rec.r,
            total_cost: rec.total_cost,
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn parse_key(text: &str) -> mlqmc_core::Result<LevelKey> {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix('(').and_then(|s| s.strip_suffix(')')) {
        let levels = inner
            .split(',')
            .map(|c| c.trim().parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("invalid multi-index key '{t}'")))?;
        return Ok(LevelKey::Index(MultiIndex::new(levels)));
    }
    t.parse::<u32>()
        .map(LevelKey::Level)
        .map_err(|_| Error::Config(format!("invalid level key '{t}'")))
}

/// Reads a table written by [`write_table`].
pub fn read_table(path: &Path) -> mlqmc_core::Result<Vec<LevelRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = vec![];
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
        out.push(LevelRecord {
            key: parse_key(&row.key)?,
            mean: row.mean,
            variance_of_mean: row.variance_of_mean,
            raw_variance: row.raw_variance,
            cost_per_sample: row.cost_per_sample,
            modeled_cost_per_sample: row.cost_per_sample,
            n: row.n,
            r: row.r,
            total_cost: row.total_cost,
        });
    }
    Ok(out)
}

pub fn wants_jsonl(config: &RunConfig) -> bool {
    config.output.format != OutputFormat::Csv
}

pub fn wants_csv(config: &RunConfig) -> bool {
    config.output.format != OutputFormat::Jsonl
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip() {
        for key in [LevelKey::Level(7), LevelKey::Index(MultiIndex::new(vec![1, 0, 3]))] {
            assert_eq!(parse_key(&key.to_string()).unwrap(), key);
        }
        assert!(parse_key("(1,x)").is_err());
        assert!(parse_key("-1").is_err());
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let recs = vec![
            LevelRecord::new(LevelKey::Index(MultiIndex::new(vec![1, 2])), 0.25, 1e-3, 12.0, 64, 4),
            LevelRecord::structural_zero(LevelKey::Index(MultiIndex::new(vec![0, 2]))),
        ];
        write_table(&path, &recs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("key,mean,raw_variance,variance_of_mean,cost_per_sample,N,R,total_cost\n"));
        assert!(text.contains("\"(1,2)\""));
        assert_eq!(read_table(&path).unwrap(), recs);
    }
}
