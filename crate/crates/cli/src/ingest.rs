use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use dqlm::model::TimeSeriesData;

use crate::config::InputConfig;
use crate::error::{CliError, CliResult};

fn input_err<T>(msg: String) -> CliResult<T> {
    Err(CliError::Input(msg))
}

/// Integer index or ISO date (days since 0001-01-01).
fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.num_days_from_ce() as i64)
}

fn column(headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::Input(format!("column `{name}` not found (have: {})", headers.iter().collect::<Vec<_>>().join(", "))))
}

/// Reads a delimited series. Line numbers in errors count the header as
/// line 1.
pub fn ingest_reader<R: Read>(reader: R, mapping: &InputConfig) -> CliResult<TimeSeriesData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let t_col = mapping.time_column.as_deref().map(|c| column(&headers, c)).transpose()?;
    let y_col = column(&headers, &mapping.value_column)?;
    let x_col = mapping.covariate_column.as_deref().map(|c| column(&headers, c)).transpose()?;
    let mut times: Vec<i64> = Vec::new();
    let mut lines: Vec<u64> = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        let field = |c: usize| rec.get(c).unwrap_or("");
        let t = match t_col {
            Some(c) => match parse_time(field(c)) {
                Some(t) => t,
                None => return input_err(format!("line {line}: time `{}` is neither an integer nor a YYYY-MM-DD date", field(c))),
            },
            None => i as i64 + 1,
        };
        let v = field(y_col);
        if v.is_empty() {
            return input_err(format!("line {line}: missing value in column `{}`", mapping.value_column));
        }
        match v.parse::<f64>() {
            Ok(v) if v.is_finite() => y.push(v),
            _ => return input_err(format!("line {line}: value `{v}` is not a finite number")),
        }
        if let Some(c) = x_col {
            match field(c).parse::<f64>() {
                Ok(v) if v.is_finite() => x.push(vec![v]),
                _ => return input_err(format!("line {line}: covariate `{}` is not a finite number", field(c))),
            }
        }
        if let Some(k) = times.iter().position(|&s| s == t) {
            return input_err(format!("line {line}: duplicate time {t} (first seen on line {})", lines[k]));
        }
        if let Some(&prev) = times.last() {
            if t < prev {
                return input_err(format!("line {line}: times must increase, {t} follows {prev}"));
            }
        }
        times.push(t);
        lines.push(line);
    }
    if y.is_empty() {
        return input_err("input has no data rows".into());
    }
    let data = TimeSeriesData::new(times, y)?;
    if x_col.is_some() {
        Ok(data.with_covariates(x)?)
    } else {
        Ok(data)
    }
}

pub fn ingest_csv(path: &Path, mapping: &InputConfig) -> CliResult<TimeSeriesData> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, mapping)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> CliResult<TimeSeriesData> {
        ingest_reader(text.as_bytes(), &InputConfig::default())
    }

    #[test]
    fn three_rows() {
        let d = read("t,y\n1,2.5\n2,3\n3,-1\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.y, vec![2.5, 3.0, -1.0]);
    }

    #[test]
    fn bad_value_names_its_line() {
        let text = "t,y\n1,1\n2,1\n3,1\n4,1\n5,1\n6,oops\n";
        let e = read(text).unwrap_err().to_string();
        assert!(e.contains("line 7"), "{e}");
    }

    #[test]
    fn missing_value_names_its_line() {
        let e = read("t,y\n1,1\n2,\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("missing"), "{e}");
    }

    #[test]
    fn duplicate_times_rejected() {
        let e = read("t,y\n1,1\n2,1\n2,3\n").unwrap_err().to_string();
        assert!(e.contains("duplicate"), "{e}");
    }

    #[test]
    fn dates_are_accepted() {
        let d = read("t,y\n1990-01-01,1\n1990-02-01,2\n").unwrap();
        assert_eq!(d.times[1] - d.times[0], 31);
    }

    #[test]
    fn implicit_index() {
        let m = InputConfig { time_column: None, ..Default::default() };
        let d = ingest_reader("y\n4\n5\n".as_bytes(), &m).unwrap();
        assert_eq!(d.times, vec![1, 2]);
    }
}
