use std::fs::{File, OpenOptions};
use std::path::Path;

use csv::{Terminator, WriterBuilder};

use super::HarnessError;
use crate::tuning::{Flag, GridRow, Method};

pub const RECORD_COLUMNS: [&str; 12] = [
    "instance_id",
    "method",
    "n",
    "eta",
    "beta",
    "lambda",
    "trial",
    "seed",
    "mse",
    "excess_exact",
    "wall_ms",
    "flag",
];

/// One trial of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub instance_id: String,
    pub method: Method,
    pub n: usize,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub mse: f64,
    pub excess_exact: f64,
    pub wall_ms: f64,
    pub flag: Flag,
}

impl ExperimentRecord {
    fn fields(&self) -> [String; 12] {
        [
            self.instance_id.clone(),
            self.method.to_string(),
            self.n.to_string(),
            fmt_opt(self.eta),
            fmt_opt(self.beta),
            fmt_opt(self.lambda),
            self.trial.to_string(),
            self.seed.to_string(),
            fmt_f64(self.mse),
            fmt_f64(self.excess_exact),
            fmt_f64(self.wall_ms),
            self.flag.as_str().to_string(),
        ]
    }
}

/// Shortest representation that parses back to the same value.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Expands a grid row into one record per trial. Rows that never ran
/// (skipped or failed before any trial) produce `trials` flagged records
/// with NaN metrics.
pub fn records_for_row(
    instance_id: &str,
    method: Method,
    n: usize,
    seed: u64,
    row: &GridRow,
    trials: usize,
    keep_timing: bool,
) -> Vec<ExperimentRecord> {
    let base = |trial: usize| ExperimentRecord {
        instance_id: instance_id.to_string(),
        method,
        n,
        eta: row.params.eta,
        beta: row.params.beta,
        lambda: row.params.lambda,
        trial,
        seed,
        mse: f64::NAN,
        excess_exact: f64::NAN,
        wall_ms: 0.0,
        flag: row.flag,
    };
    let mut out: Vec<ExperimentRecord> = row
        .outcomes
        .iter()
        .map(|o| ExperimentRecord {
            mse: o.mse,
            excess_exact: o.excess,
            wall_ms: if keep_timing { o.wall_ms } else { 0.0 },
            flag: if o.diverged { Flag::Diverged } else { Flag::Ok },
            ..base(o.trial)
        })
        .collect();
    // trials after a construction failure never ran
    let done = out.len();
    out.extend((done..trials).map(|t| ExperimentRecord {
        flag: if row.flag == Flag::Ok { Flag::Failed } else { row.flag },
        ..base(t)
    }));
    out
}

fn csv_writer(file: File) -> csv::Writer<File> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(file)
}

/// Writes rows under `header`, replacing any existing file.
pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv_writer(file);
    w.write_record(header).map_err(|e| HarnessError::csv(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    write_table(path, &RECORD_COLUMNS, records.iter().map(ExperimentRecord::fields))
}

/// Appends to `path`, writing the header first when the file is new or empty.
pub fn append_records(path: &Path, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv_writer(file);
    if fresh {
        w.write_record(RECORD_COLUMNS).map_err(|e| HarnessError::csv(path, e))?;
    }
    for r in records {
        w.write_record(r.fields()).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn parse_flag(s: &str) -> Option<Flag> {
    [Flag::Ok, Flag::Skipped, Flag::Diverged, Flag::Failed]
        .into_iter()
        .find(|f| f.as_str() == s)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    let header = r.headers().map_err(|e| HarnessError::csv(path, e))?;
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(HarnessError::Config(format!("{} is not a records file", path.display())));
    }
    let bad = |what: &str| HarnessError::Config(format!("{}: bad {what}", path.display()));
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
    let opt = |s: &str, what: &str| {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, what).map(Some)
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        out.push(ExperimentRecord {
            instance_id: f(0).to_string(),
            method: f(1).parse().map_err(|_| bad("method"))?,
            n: f(2).parse().map_err(|_| bad("n"))?,
            eta: opt(f(3), "eta")?,
            beta: opt(f(4), "beta")?,
            lambda: opt(f(5), "lambda")?,
            trial: f(6).parse().map_err(|_| bad("trial"))?,
            seed: f(7).parse().map_err(|_| bad("seed"))?,
            mse: num(f(8), "mse")?,
            excess_exact: num(f(9), "excess_exact")?,
            wall_ms: num(f(10), "wall_ms")?,
            flag: parse_flag(f(11)).ok_or_else(|| bad("flag"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::{Params, TrialOutcome};

    fn row(flag: Flag, outcomes: Vec<TrialOutcome>) -> GridRow {
        GridRow {
            params: Params {
                eta: Some(0.1),
                beta: Some(0.0),
                lambda: None,
            },
            mean: 1.0,
            std: 0.0,
            trials: outcomes.len(),
            flag,
            reason: None,
            outcomes,
        }
    }

    fn outcome(trial: usize, mse: f64) -> TrialOutcome {
        TrialOutcome {
            trial,
            mse,
            excess: mse / 2.0,
            diverged: false,
            wall_ms: 3.5,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let mut recs = records_for_row(
            "a,b \"quoted\"",
            Method::Presgd,
            50,
            7,
            &row(Flag::Ok, vec![outcome(0, 0.1 + 0.2), outcome(1, 1e-300)]),
            2,
            true,
        );
        recs.extend(records_for_row("x", Method::Sgd, 50, 7, &row(Flag::Skipped, vec![]), 2, false));
        write_records(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.starts_with("instance_id,method,n,eta,beta,lambda,trial,seed,mse,excess_exact,wall_ms,flag\n"));
        assert!(text.contains("\"a,b \"\"quoted\"\"\""));
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.mse.to_bits(), b.mse.to_bits());
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.flag, b.flag);
            assert_eq!(a.lambda, b.lambda);
        }
        assert_eq!(back[2].flag, Flag::Skipped);
        assert!(back[2].mse.is_nan());
    }

    #[test]
    fn timing_is_dropped_unless_requested() {
        let r = row(Flag::Ok, vec![outcome(0, 1.0)]);
        assert_eq!(records_for_row("a", Method::Sgd, 5, 0, &r, 1, false)[0].wall_ms, 0.0);
        assert_eq!(records_for_row("a", Method::Sgd, 5, 0, &r, 1, true)[0].wall_ms, 3.5);
    }

    #[test]
    fn failed_rows_fill_missing_trials() {
        let recs = records_for_row("a", Method::Ridge, 5, 0, &row(Flag::Failed, vec![outcome(0, 1.0)]), 3, false);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].flag, Flag::Ok);
        assert_eq!(recs[2].flag, Flag::Failed);
        assert_eq!(recs[2].trial, 2);
    }

    #[test]
    fn append_writes_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = records_for_row("a", Method::Sgd, 5, 0, &row(Flag::Ok, vec![outcome(0, 1.0)]), 1, false);
        append_records(&path, &recs).unwrap();
        append_records(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("instance_id").count(), 1);
        assert_eq!(read_records(&path).unwrap().len(), 2);
    }
}
