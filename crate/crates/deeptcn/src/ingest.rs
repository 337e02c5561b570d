//! CSV panel ingestion.
//!
//! Contracts:
//! - values CSV: header `series_id,timestamp,value[,cov_1,...]`, ISO-8601
//!   dates or date-hours, plain decimal points.
//! - static CSV: header `series_id,<feature>...`, every feature a
//!   categorical string.
//! - calendar CSV: one ISO date per line, no header.
//!
//! Timestamps must be contiguous at the declared granularity; a gap is an
//! error naming the series and the position, not something to impute.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use deeptcn_core::calendar::{self, Granularity, Stamp};
use deeptcn_core::panel::{PanelBuilder, SeriesPanel};

use crate::error::{AppError, AppResult};

/// Load and validate a panel from the CSV contracts. When `granularity` is
/// `None` it is inferred from the first series' spacing. A panel without
/// static attributes may omit the static file.
pub fn load_panel(
    values_path: &Path,
    static_path: Option<&Path>,
    calendar_path: Option<&Path>,
    granularity: Option<Granularity>,
) -> AppResult<SeriesPanel> {
    let (rows, cov_names) = read_values(values_path)?;
    let statics = match static_path {
        Some(p) => read_statics(p)?,
        None => StaticTable {
            columns: Vec::new(),
            by_id: BTreeMap::new(),
        },
    };
    let holidays = match calendar_path {
        Some(p) => read_calendar(p)?,
        None => BTreeSet::new(),
    };

    // cross-reference ids both ways
    if static_path.is_some() {
        for id in rows.keys() {
            if !statics.by_id.contains_key(id) {
                return Err(AppError::Data(format!(
                    "series '{id}' appears in values but not in the static file"
                )));
            }
        }
        for id in statics.by_id.keys() {
            if !rows.contains_key(id) {
                return Err(AppError::Data(format!(
                    "series '{id}' appears in the static file but has no values"
                )));
            }
        }
    }

    let granularity = match granularity {
        Some(g) => g,
        None => infer_granularity(&rows)?,
    };

    let mut builder = PanelBuilder::new(granularity)
        .static_columns(statics.columns.clone())
        .real_covariates(cov_names.clone())
        .holidays(holidays);

    for (id, mut points) in rows {
        points.sort_by_key(|(stamp, _, _)| *stamp);
        let start = points[0].0;
        let mut values = Vec::with_capacity(points.len());
        let mut covs: Vec<Vec<f32>> = vec![Vec::with_capacity(points.len()); cov_names.len()];
        for (i, (stamp, value, cov_vals)) in points.iter().enumerate() {
            let expect = calendar::step(start, granularity, i as i64);
            if *stamp != expect {
                return Err(AppError::Data(format!(
                    "series '{id}': gap in timestamps at position {i}: expected {}, found {}",
                    calendar::format_stamp(expect, granularity),
                    calendar::format_stamp(*stamp, granularity),
                )));
            }
            values.push(*value);
            for (c, v) in cov_vals.iter().enumerate() {
                covs[c].push(*v);
            }
        }
        let static_vals: Vec<&str> = match statics.by_id.get(&id) {
            Some(vals) => vals.iter().map(String::as_str).collect(),
            None => Vec::new(),
        };
        builder.add_series(&id, start, values, &static_vals, covs);
    }

    builder.build().map_err(AppError::Core)
}

type ValueRows = BTreeMap<String, Vec<(Stamp, f32, Vec<f32>)>>;

fn read_values(path: &Path) -> AppResult<(ValueRows, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;

    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "series_id" || cols[1] != "timestamp" || cols[2] != "value" {
        return Err(AppError::Data(format!(
            "{}: header must start with series_id,timestamp,value",
            path.display()
        )));
    }
    let cov_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();

    let mut rows: ValueRows = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record?;
        if record.len() != cols.len() {
            return Err(AppError::Data(format!(
                "{} line {line}: {} fields, expected {}",
                path.display(),
                record.len(),
                cols.len()
            )));
        }
        let id = record[0].to_string();
        let stamp = calendar::parse_stamp(&record[1])
            .map_err(|e| AppError::Data(format!("{} line {line}: {e}", path.display())))?;
        let value: f32 = parse_number(&record[2], path, line, "value")?;
        let mut covs = Vec::with_capacity(cov_names.len());
        for (c, name) in cov_names.iter().enumerate() {
            covs.push(parse_number(&record[3 + c], path, line, name)?);
        }
        rows.entry(id).or_default().push((stamp, value, covs));
    }
    if rows.is_empty() {
        return Err(AppError::Data(format!("{}: no data rows", path.display())));
    }
    Ok((rows, cov_names))
}

fn parse_number(field: &str, path: &Path, line: usize, what: &str) -> AppResult<f32> {
    let v: f32 = field.parse().map_err(|_| {
        AppError::Data(format!(
            "{} line {line}: non-numeric {what} '{field}'",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(AppError::Data(format!(
            "{} line {line}: non-finite {what} '{field}'",
            path.display()
        )));
    }
    Ok(v)
}

struct StaticTable {
    columns: Vec<String>,
    by_id: BTreeMap<String, Vec<String>>,
}

fn read_statics(path: &Path) -> AppResult<StaticTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.is_empty() || cols[0] != "series_id" {
        return Err(AppError::Data(format!(
            "{}: header must start with series_id",
            path.display()
        )));
    }
    let columns: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut by_id = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != cols.len() {
            return Err(AppError::Data(format!(
                "{} line {line}: {} fields, expected {}",
                path.display(),
                record.len(),
                cols.len()
            )));
        }
        let id = record[0].to_string();
        let values: Vec<String> = (1..record.len()).map(|c| record[c].to_string()).collect();
        if by_id.insert(id.clone(), values).is_some() {
            return Err(AppError::Data(format!(
                "{} line {line}: duplicate series id '{id}'",
                path.display()
            )));
        }
    }
    Ok(StaticTable { columns, by_id })
}

fn read_calendar(path: &Path) -> AppResult<BTreeSet<NaiveDate>> {
    let text = std::fs::read_to_string(path)?;
    let mut dates = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let date = calendar::parse_date(line)
            .map_err(|e| AppError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        dates.insert(date);
    }
    Ok(dates)
}

fn infer_granularity(rows: &ValueRows) -> AppResult<Granularity> {
    let (id, points) = rows.iter().next().expect("rows checked non-empty");
    if points.len() < 2 {
        return Err(AppError::Data(format!(
            "series '{id}' has a single point; pass the granularity explicitly"
        )));
    }
    let mut sorted: Vec<Stamp> = points.iter().map(|(s, _, _)| *s).collect();
    sorted.sort();
    let delta = sorted[1].signed_duration_since(sorted[0]);
    let secs = delta.num_seconds();
    if secs == 3600 {
        Ok(Granularity::Hourly)
    } else if secs == 86_400 {
        Ok(Granularity::Daily)
    } else if (28..=31).contains(&delta.num_days()) {
        Ok(Granularity::Monthly)
    } else {
        Err(AppError::Data(format!(
            "cannot infer granularity from a spacing of {secs} seconds on series '{id}'"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn smoke_two_series_daily() {
        let dir = tempfile::tempdir().unwrap();
        let mut values = String::from("series_id,timestamp,value\n");
        for d in 1..=10 {
            values.push_str(&format!("a,2020-01-{d:02},{}\n", d as f64));
            values.push_str(&format!("b,2020-01-{d:02},{}\n", 2.0 * d as f64));
        }
        let vp = write_file(&dir, "values.csv", &values);
        let sp = write_file(&dir, "static.csv", "series_id,region\na,north\nb,south\n");
        let panel = load_panel(&vp, Some(&sp), None, None).unwrap();
        assert_eq!(panel.len(), 2);
        assert_eq!(panel.granularity, Granularity::Daily);
        assert_eq!(panel.static_vocabs[0], vec!["north", "south"]);
        assert_eq!(panel.series[0].values.len(), 10);
    }

    #[test]
    fn gap_in_timestamps_names_series_and_position() {
        let dir = tempfile::tempdir().unwrap();
        let vp = write_file(
            &dir,
            "values.csv",
            "series_id,timestamp,value\na,2020-01-01,1\na,2020-01-02,2\na,2020-01-04,3\n",
        );
        let sp = write_file(&dir, "static.csv", "series_id\na\n");
        let err = load_panel(&vp, Some(&sp), None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'a'") && msg.contains("gap"), "{msg}");
        assert!(msg.contains("2020-01-03"), "{msg}");
    }

    #[test]
    fn non_numeric_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let vp = write_file(
            &dir,
            "values.csv",
            "series_id,timestamp,value\na,2020-01-01,1\na,2020-01-02,oops\n",
        );
        let sp = write_file(&dir, "static.csv", "series_id\na\n");
        let err = load_panel(&vp, Some(&sp), None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("non-numeric"), "{msg}");
    }

    #[test]
    fn unknown_id_cross_reference_fails() {
        let dir = tempfile::tempdir().unwrap();
        let vp = write_file(
            &dir,
            "values.csv",
            "series_id,timestamp,value\na,2020-01-01,1\na,2020-01-02,2\n",
        );
        let sp = write_file(&dir, "static.csv", "series_id,cat\na,x\nb,y\n");
        let err = load_panel(&vp, Some(&sp), None, None).unwrap_err();
        assert!(err.to_string().contains("'b'"));
    }

    #[test]
    fn calendar_and_covariates_load() {
        let dir = tempfile::tempdir().unwrap();
        let vp = write_file(
            &dir,
            "values.csv",
            "series_id,timestamp,value,price\na,2020-01-01,1,9.5\na,2020-01-02,2,8.0\n",
        );
        let sp = write_file(&dir, "static.csv", "series_id\na\n");
        let cp = write_file(&dir, "cal.csv", "2020-01-01\n2020-12-25\n");
        let panel = load_panel(&vp, Some(&sp), Some(&cp), None).unwrap();
        assert_eq!(panel.real_cov_names, vec!["price"]);
        assert_eq!(panel.series[0].real_covs[0], vec![9.5, 8.0]);
        assert_eq!(panel.holidays.len(), 2);
    }

    #[test]
    fn hourly_inference() {
        let dir = tempfile::tempdir().unwrap();
        let vp = write_file(
            &dir,
            "values.csv",
            "series_id,timestamp,value\na,2020-01-01T00,1\na,2020-01-01T01,2\n",
        );
        let sp = write_file(&dir, "static.csv", "series_id\na\n");
        let panel = load_panel(&vp, Some(&sp), None, None).unwrap();
        assert_eq!(panel.granularity, Granularity::Hourly);
    }
}
