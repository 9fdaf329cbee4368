//! Dataset CSV ingestion and emission.
//!
//! The header is `y,a,r,x1,...,xp`; every field is numeric and `a`, `r` are 0/1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{SubjectRecord, TrialDataset};

pub fn read_dataset_csv<R: Read>(reader: R) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "y" || &headers[1] != "a" || &headers[2] != "r" {
        return Err(Error::invalid(
            "header",
            format!(
                "expected `y,a,r,x1,...,xp`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    for (j, h) in headers.iter().enumerate().skip(3) {
        let expected = format!("x{}", j - 2);
        if h != expected {
            return Err(Error::invalid(
                "header",
                format!("column {} should be `{expected}`, found `{h}`", j + 1),
            ));
        }
    }
    let p = headers.len() - 3;
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |j: usize| -> Result<f64> {
            let field = row.get(j).unwrap_or("");
            if field.is_empty() {
                return Err(Error::invalid(
                    &headers[j],
                    format!("row {}: missing value", line + 1),
                ));
            }
            field.parse::<f64>().map_err(|_| {
                Error::invalid(
                    &headers[j],
                    format!("row {}: `{field}` is not numeric", line + 1),
                )
            })
        };
        let indicator = |j: usize| -> Result<u8> {
            match num(j)? {
                0.0 => Ok(0),
                1.0 => Ok(1),
                v => Err(Error::invalid(
                    &headers[j],
                    format!("row {}: indicator must be 0 or 1, found {v}", line + 1),
                )),
            }
        };
        let y = num(0)?;
        let a = indicator(1)?;
        let r = indicator(2)?;
        let x = (0..p).map(|k| num(3 + k)).collect::<Result<Vec<_>>>()?;
        records.push(SubjectRecord::new(x, r, a, y));
    }
    Ok(TrialDataset::new(p, records))
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<TrialDataset> {
    read_dataset_csv(File::open(path)?)
}

pub fn write_dataset_csv<W: Write>(d: &TrialDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "a".to_string(), "r".to_string()];
    header.extend((1..=d.p).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    for rec in &d.records {
        let mut row = vec![rec.y.to_string(), rec.a.to_string(), rec.r.to_string()];
        row.extend(rec.x.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toy_file() {
        let text = "y,a,r,x1\n2.0,1,1,0.5\n1,0,1,-0.5\n1.5,0,0,0\n";
        let d = read_dataset_csv(text.as_bytes()).unwrap();
        assert_eq!(d.p, 1);
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.records[0], SubjectRecord::new(vec![0.5], 1, 1, 2.0));
    }

    #[test]
    fn rejects_missing_value() {
        let text = "y,a,r,x1\n2.0,1,1,\n";
        let err = read_dataset_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing value"), "{err}");
    }

    #[test]
    fn rejects_bad_header_and_indicator() {
        assert!(read_dataset_csv("a,y,r\n".as_bytes()).is_err());
        assert!(read_dataset_csv("y,a,r,x2\n1,1,1,0\n".as_bytes()).is_err());
        assert!(read_dataset_csv("y,a,r\n1,2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn covariate_free_file() {
        let d = read_dataset_csv("y,a,r\n1,1,1\n0,0,0\n".as_bytes()).unwrap();
        assert_eq!(d.p, 0);
        assert!(d.records.iter().all(|r| r.x.is_empty()));
    }
}
