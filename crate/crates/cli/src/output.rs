use std::path::Path;

use fedsurv::survival::KmState;

use crate::{CliError, CliResult};

pub const FIT_HEADER: [&str; 8] = ["term", "kind", "landmark_index", "landmark", "estimate", "std_error", "z", "p"];
pub const KM_HEADER: [&str; 2] = ["grid", "survival"];
pub const DEBIAS_HEADER: [&str; 8] = ["term", "local", "local_se", "global", "lambda", "debiased", "shrunk", "n_site"];
pub const KM_STATE_FILE: &str = "km_state.json";

pub(crate) fn num(v: f64) -> String {
    format!("{v:?}")
}

fn out_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Output { path: path.display().to_string(), message: e.to_string() }
}

pub(crate) fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| out_err(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(path, e))?;
    w.write_record(header).map_err(|e| out_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| out_err(path, e))?;
    }
    w.flush().map_err(|e| out_err(path, e))
}

pub(crate) fn write_km(path: &Path, km: &KmState<f64>) -> CliResult<()> {
    write_table(path, &KM_HEADER, km.grid.iter().zip(&km.survival).map(|(&t, &s)| vec![num(t), num(s)]))
}

/// One `fit.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub term: String,
    pub kind: String,
    pub landmark_index: Option<usize>,
    pub landmark: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
}

impl FitRow {
    pub(crate) fn record(&self) -> Vec<String> {
        vec![
            self.term.clone(),
            self.kind.clone(),
            self.landmark_index.map(|j| j.to_string()).unwrap_or_default(),
            self.landmark.map(num).unwrap_or_default(),
            num(self.estimate),
            num(self.std_error),
            num(self.z),
            num(self.p),
        ]
    }
}

pub fn read_fit_csv(path: &Path) -> CliResult<Vec<FitRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| out_err(path, e))?;
    let header = r.headers().map_err(|e| out_err(path, e))?.clone();
    if header.iter().ne(FIT_HEADER) {
        return Err(out_err(path, "not a fit table"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| out_err(path, e))?;
        let line = i + 2;
        let float = |k: usize| -> CliResult<f64> {
            rec[k].parse().map_err(|_| out_err(path, format!("line {line}: bad number `{}`", &rec[k])))
        };
        let opt = |k: usize| -> CliResult<Option<f64>> { if rec[k].is_empty() { Ok(None) } else { float(k).map(Some) } };
        rows.push(FitRow {
            term: rec[0].to_string(),
            kind: rec[1].to_string(),
            landmark_index: if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse().map_err(|_| out_err(path, format!("line {line}: bad landmark index")))?)
            },
            landmark: opt(3)?,
            estimate: float(4)?,
            std_error: float(5)?,
            z: float(6)?,
            p: float(7)?,
        });
    }
    Ok(rows)
}
