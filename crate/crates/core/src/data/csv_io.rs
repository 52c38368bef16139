//! CSV ingestion and output.
//!
//! Comma separated, header row, UTF-8, `.` decimal separator. Empty cells are
//! always missing; a configurable token (default `NA`) is missing as well.
//! Missing cells are written back as empty cells.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_MISSING_TOKEN: &str = "NA";

pub fn load_csv(path: impl AsRef<Path>, missing_token: &str) -> Result<MaskedMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, missing_token)
}

pub fn read_csv<R: Read>(reader: R, missing_token: &str) -> Result<MaskedMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ncols = header.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut nrows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        if record.len() != ncols {
            return Err(Error::Format(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                record.len(),
                ncols
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell == missing_token {
                values.push(f64::NAN);
                mask.push(false);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.push(v);
                    mask.push(true);
                }
                _ => {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        nrows += 1;
    }
    MaskedMatrix::new(nrows, ncols, values, mask, header)
}

pub fn write_csv<W: Write>(m: &MaskedMatrix, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(m.column_names())
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        buf.clear();
        for j in 0..m.ncols() {
            // `{}` on f64 prints the shortest representation that round-trips
            buf.push(m.get(i, j).map(|v| v.to_string()).unwrap_or_default());
        }
        wtr.write_record(&buf)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn save_csv(m: &MaskedMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(m, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_empty_cell() {
        let m = read_csv("a,b\n1,2\n3,\n".as_bytes(), DEFAULT_MISSING_TOKEN).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.mask().iter().filter(|&&b| !b).count(), 1);
        assert_eq!(m.get(1, 1), None);
    }

    #[test]
    fn all_na() {
        let m = read_csv("a,b\nNA,NA\nNA,NA\n".as_bytes(), "NA").unwrap();
        assert!(m.mask().iter().all(|&b| !b));
    }

    #[test]
    fn parse_error_names_cell() {
        let err = read_csv("a,b\n1,2\n3,x\n".as_bytes(), "NA").unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
                assert_eq!(value, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = read_csv("a,b\n1,2\n3\n".as_bytes(), "NA").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = MaskedMatrix::from_rows(&[
            vec![Some(0.1 + 0.2), None, Some(-1e-300)],
            vec![Some(std::f64::consts::PI), Some(1e22), None],
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "NA").unwrap();
        assert_eq!(back.mask(), m.mask());
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(back.get(i, j).map(f64::to_bits), m.get(i, j).map(f64::to_bits));
            }
        }
    }
}
