//! Site dataset CSV: header `subject_id,time,event,<covariates...>`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::survival::SubjectRecord;

pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    pub name: String,
    pub covariate_names: Vec<String>,
    pub records: Vec<SubjectRecord<f64>>,
}

fn csv_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv { path: path.display().to_string(), line, message: message.into() }
}

/// Reads a site CSV. Every row must have all fields; the site id is `name`.
pub fn read_site_csv(path: &Path, name: &str) -> Result<SiteData> {
    let file = File::open(path).map_err(|e| csv_error(path, 0, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, 1, e.to_string()))?.clone();
    let fixed = ["subject_id", "time", "event"];
    if header.len() < 3 || header.iter().take(3).ne(fixed) {
        return Err(csv_error(path, 1, "header must start with subject_id,time,event"));
    }
    let covariate_names: Vec<String> = header.iter().skip(3).map(|s| s.trim().to_string()).collect();
    if covariate_names.iter().any(String::is_empty) {
        return Err(csv_error(path, 1, "empty covariate name"));
    }
    let width = header.len();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(csv_error(path, line, format!("expected {width} fields, found {}", row.len())));
        }
        if let Some(k) = row.iter().position(|f| f.trim().is_empty()) {
            return Err(csv_error(path, line, format!("missing value in column `{}`", &header[k])));
        }
        let number = |k: usize| -> Result<f64> {
            let v: f64 = row[k]
                .trim()
                .parse()
                .map_err(|_| csv_error(path, line, format!("`{}` is not a number in column `{}`", &row[k], &header[k])))?;
            if !v.is_finite() {
                return Err(csv_error(path, line, format!("non-finite value in column `{}`", &header[k])));
            }
            Ok(v)
        };
        let time = number(1)?;
        if time < 0.0 {
            return Err(csv_error(path, line, "negative time"));
        }
        let event = match row[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(csv_error(path, line, format!("event must be 0 or 1, found `{other}`"))),
        };
        let covariates = (3..width).map(number).collect::<Result<Vec<f64>>>()?;
        records.push(SubjectRecord::new(row[0].trim(), name, time, event, covariates));
    }
    if records.is_empty() {
        return Err(csv_error(path, 1, "no data rows"));
    }
    Ok(SiteData { name: name.to_string(), covariate_names, records })
}

/// Reads `<dir>/data.csv`, naming the site after the directory.
pub fn read_site_dir(dir: &Path) -> Result<SiteData> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    read_site_csv(&dir.join(DATA_FILE), &name)
}

/// Site subdirectories of `root` that contain a data file, sorted by name.
pub fn list_site_dirs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(DATA_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no site directories with {DATA_FILE} under {}", root.display())));
    }
    Ok(dirs)
}

/// Writes records in the site CSV format, floats in shortest round-trip form.
pub fn write_site_csv(path: &Path, covariate_names: &[String], records: &[SubjectRecord<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e.to_string()))?;
    let mut header = vec!["subject_id".to_string(), "time".into(), "event".into()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, 1, e.to_string()))?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![r.subject_id.clone(), format!("{:?}", r.time), if r.event { "1" } else { "0" }.to_string()];
        row.extend(r.covariates.iter().map(|c| format!("{c:?}")));
        w.write_record(&row).map_err(|e| csv_error(path, i as u64 + 2, e.to_string()))?;
    }
    w.flush().map_err(|e| csv_error(path, 0, e.to_string()))?;
    Ok(())
}

/// Writes plain text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("data.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            SubjectRecord::new("a", "s", 0.1 + 0.2, true, vec![1.0 / 3.0, -2.0]),
            SubjectRecord::new("b", "s", 5.0, false, vec![0.0, 1e-17]),
        ];
        let names = vec!["z1".to_string(), "z2".to_string()];
        let p = dir.path().join("data.csv");
        write_site_csv(&p, &names, &recs).unwrap();
        let back = read_site_csv(&p, "s").unwrap();
        assert_eq!(back.records, recs);
        assert_eq!(back.covariate_names, names);
    }

    #[test]
    fn bad_rows_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("subject_id,time,event,z1\na,1,1,0\nb,,0,1\n", 3),
            ("subject_id,time,event,z1\na,1,2,0\n", 2),
            ("subject_id,time,event,z1\na,1,1,0\nb,2,0\n", 3),
            ("subject_id,time,event,z1\na,-1,1,0\n", 2),
            ("subject_id,time,event,z1\na,1,1,x\n", 2),
            ("subject_id,time,event,z1\na,inf,1,0\n", 2),
            ("id,time,event\n", 1),
        ];
        for (body, line) in cases {
            let p = write(dir.path(), body);
            match read_site_csv(&p, "s") {
                Err(Error::Csv { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
    }
}
