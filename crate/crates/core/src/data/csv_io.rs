use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Reads a numeric table. Empty cells and `NaN` (any case) become NaN.
///
/// With `header`, the first record is skipped. Errors carry the 1-based
/// line and column of the offending cell.
pub fn load_csv(path: &Path, header: bool) -> Result<Tensor> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .from_reader(file);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        cols.get_or_insert(record.len());
        for (j, cell) in record.iter().enumerate() {
            data.push(parse_cell(cell).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                col: j + 1,
                msg: format!("not a number: `{cell}`"),
            })?);
        }
        rows += 1;
    }
    Tensor::new(rows, cols.unwrap_or(0), data)
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    cell.parse().ok()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, col) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            path: path.to_path_buf(),
            row,
            col: (len as usize).min(expected_len as usize) + 1,
            msg: format!("ragged row: expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            row,
            col,
            msg: format!("{other:?}"),
        },
    }
}

/// Reads a 0/1 mask (1 = observed).
pub fn load_mask_csv(path: &Path, header: bool) -> Result<Tensor> {
    let t = load_csv(path, header)?;
    for (k, &v) in t.data().iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: k / t.cols().max(1) + 1 + usize::from(header),
                col: k % t.cols().max(1) + 1,
                msg: format!("mask entries must be 0 or 1, found {v}"),
            });
        }
    }
    Ok(t)
}

/// Loads a table and its mask. A separate mask file takes precedence over
/// the NaN markers: values it marks missing are hidden, and it may not mark
/// an empty cell as observed.
pub fn load_dataset(x_path: &Path, mask_path: Option<&Path>, header: bool) -> Result<Dataset> {
    let x = load_csv(x_path, header)?;
    match mask_path {
        None => Dataset::from_observed(x),
        Some(mp) => {
            let mask = load_mask_csv(mp, header)?;
            if mask.shape() != x.shape() {
                return Err(Error::shape("mask file", &x.shape(), &mask.shape()));
            }
            if let Some(k) = (0..x.len()).find(|&k| mask.data()[k] == 1.0 && x.data()[k].is_nan()) {
                return Err(Error::Data(format!(
                    "mask marks entry ({}, {}) observed but the value is missing",
                    k / x.cols(),
                    k % x.cols()
                )));
            }
            let x_obs = x.zip_map(&mask, |v, r| if r == 1.0 { v } else { f64::NAN });
            Dataset::new(x_obs, mask, None)
        }
    }
}

/// Writes a table with shortest round-trip float formatting; NaN becomes an
/// empty cell.
pub fn save_csv(path: &Path, table: &Tensor, header: Option<&[String]>) -> Result<()> {
    write_table(path, table, header, |v| {
        if v.is_nan() {
            String::new()
        } else {
            v.to_string()
        }
    })
}

pub fn save_mask_csv(path: &Path, mask: &Tensor, header: Option<&[String]>) -> Result<()> {
    write_table(path, mask, header, |v| if v == 1.0 { "1".into() } else { "0".into() })
}

fn write_table(
    path: &Path,
    table: &Tensor,
    header: Option<&[String]>,
    fmt: impl Fn(f64) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_error(path, e))?;
    }
    for i in 0..table.rows() {
        w.write_record(table.row(i).iter().map(|&v| fmt(v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cell_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "1.0,,3.0\n4,5,NaN\n").unwrap();
        let ds = Dataset::from_observed(load_csv(&p, false).unwrap()).unwrap();
        assert_eq!(ds.mask.row(0), &[1.0, 0.0, 1.0]);
        assert_eq!(ds.mask.row(1), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let t = Tensor::from_rows(&[
            vec![0.1 + 0.2, f64::NAN, -1e-300],
            vec![1.0 / 3.0, 12345.678, f64::NAN],
        ])
        .unwrap();
        save_csv(&p, &t, Some(&["a".into(), "b".into(), "c".into()])).unwrap();
        let back = load_csv(&p, true).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn mask_file_overrides_markers() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let mp = dir.path().join("m.csv");
        std::fs::write(&xp, "1,2\n3,4\n").unwrap();
        std::fs::write(&mp, "1,0\n1,1\n").unwrap();
        let ds = load_dataset(&xp, Some(&mp), false).unwrap();
        assert!(ds.x_obs.get(0, 1).is_nan());
        assert_eq!(ds.n_missing(), 1);
    }

    #[test]
    fn errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "1,2\n3,abc\n").unwrap();
        match load_csv(&p, false) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(load_csv(&p, false), Err(Error::Parse { row: 2, .. })));
    }
}
