//! CSV datasets and noise-variance files.
//!
//! A dataset file has a header row. Regression files need a column named
//! `y`; every other column is a covariate, in file order. Graph files use
//! every column as a node. Empty fields and `NA` (any case) are missing
//! cells, accepted only when missing-at-random handling is requested.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use eiv_core::{Dataset, Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Regression,
    Graph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    /// Covariate (or node) names in column order.
    pub names: Vec<String>,
    pub y: Option<DVector<f64>>,
    pub z: DMatrix<f64>,
    /// Observed-cell mask; present only when missing cells were allowed.
    pub mask: Option<DMatrix<bool>>,
}

impl CsvData {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        let n = self.n();
        let y = self.y.unwrap_or_else(|| DVector::zeros(n));
        Dataset::new(y, self.z, self.mask)
    }
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token.eq_ignore_ascii_case("na")
}

pub fn ingest_csv(path: &Path, layout: Layout, allow_missing: bool) -> Result<CsvData> {
    let file = File::open(path)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, layout, allow_missing).map_err(|e| match e {
        Error::Input(m) => Error::input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R, layout: Layout, allow_missing: bool) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::input(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();

    let mut seen = HashSet::new();
    for (c, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(Error::input(format!("header column {} is empty", c + 1)));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::input(format!("duplicate header name '{name}'")));
        }
    }
    let y_col = match layout {
        Layout::Regression => Some(
            names
                .iter()
                .position(|n| n == "y")
                .ok_or_else(|| Error::input("no column named 'y'"))?,
        ),
        Layout::Graph => None,
    };
    let cov_cols: Vec<usize> = (0..names.len()).filter(|&c| Some(c) != y_col).collect();

    let width = names.len();
    let mut y = Vec::new();
    let mut cells = Vec::new();
    let mut observed = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = r + 2;
        let record = record.map_err(|e| Error::input(format!("line {line}: {e}")))?;
        if record.len() != width {
            return Err(Error::input(format!(
                "line {line}: expected {width} fields, found {}",
                record.len()
            )));
        }
        if let Some(c) = y_col {
            let tok = &record[c];
            if is_missing(tok) {
                return Err(Error::input(format!(
                    "line {line}: response 'y' is missing"
                )));
            }
            y.push(parse_cell(tok, line, &names[c])?);
        }
        for &c in &cov_cols {
            let tok = &record[c];
            if is_missing(tok) {
                if !allow_missing {
                    return Err(Error::input(format!(
                        "line {line}, column '{}': missing value; pass --mar to treat cells as missing at random",
                        names[c]
                    )));
                }
                cells.push(0.0);
                observed.push(false);
            } else {
                cells.push(parse_cell(tok, line, &names[c])?);
                observed.push(true);
            }
        }
    }

    let n = if cov_cols.is_empty() {
        y.len()
    } else {
        cells.len() / cov_cols.len()
    };
    let p = cov_cols.len();
    if n < 2 {
        return Err(Error::input(format!(
            "need at least 2 data rows, found {n}"
        )));
    }
    if p < 2 {
        return Err(Error::input(format!(
            "need at least 2 covariate columns, found {p}"
        )));
    }
    Ok(CsvData {
        names: cov_cols.iter().map(|&c| names[c].clone()).collect(),
        y: y_col.map(|_| DVector::from_vec(y)),
        z: DMatrix::from_row_slice(n, p, &cells),
        mask: allow_missing.then(|| DMatrix::from_row_slice(n, p, &observed)),
    })
}

fn parse_cell(tok: &str, line: usize, column: &str) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::input(format!(
            "line {line}, column '{column}': cannot parse '{tok}' as a finite number"
        ))),
    }
}

/// One nonnegative number per line, `p` lines; blank lines are ignored.
pub fn read_gamma(path: &Path, p: usize) -> Result<Vec<f64>> {
    let file = File::open(path)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
    let mut gamma = Vec::with_capacity(p);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => gamma.push(v),
            _ => {
                return Err(Error::input(format!(
                    "{} line {}: '{tok}' is not a nonnegative number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if gamma.len() != p {
        return Err(Error::input(format!(
            "{}: expected {p} noise variances, found {}",
            path.display(),
            gamma.len()
        )));
    }
    Ok(gamma)
}

/// Write `data` as a regression file with columns `y, z1, ..., zp`; missing
/// cells are written as `NA`. Values round-trip exactly.
pub fn write_csv<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let io = |e: csv::Error| Error::input(format!("cannot write dataset: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(io)?;
    for i in 0..data.n() {
        let mut row = vec![data.y()[i].to_string()];
        for k in 0..data.p() {
            let observed = data.mask().is_none_or(|m| m[(i, k)]);
            row.push(if observed {
                data.z()[(i, k)].to_string()
            } else {
                "NA".to_string()
            });
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::input(format!("cannot write dataset: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, layout: Layout, mar: bool) -> Result<CsvData> {
        read_csv(text.as_bytes(), layout, mar)
    }

    #[test]
    fn numeric_body() {
        let d = parse("y,z1,z2\n1,2,3\n4,5,6\n7,8,9\n", Layout::Regression, false).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y.unwrap().as_slice(), &[1.0, 4.0, 7.0]);
        assert_eq!(d.z[(2, 1)], 9.0);
        assert_eq!(d.names, ["z1", "z2"]);
    }

    #[test]
    fn response_column_can_be_anywhere() {
        let d = parse("a,y,b\n1,2,3\n4,5,6\n", Layout::Regression, false).unwrap();
        assert_eq!(d.y.unwrap().as_slice(), &[2.0, 5.0]);
        assert_eq!(d.z.row(1).iter().cloned().collect::<Vec<_>>(), [4.0, 6.0]);
    }

    #[test]
    fn missing_cells_need_mar() {
        let text = "y,z1,z2\n1,NA,3\n4,5,\n7,8,9\n";
        let err = parse(text, Layout::Regression, false).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let d = parse(text, Layout::Regression, true).unwrap();
        let mask = d.mask.unwrap();
        assert!(!mask[(0, 0)] && !mask[(1, 1)] && mask[(2, 0)]);
        assert_eq!(d.z[(0, 0)], 0.0);
    }

    #[test]
    fn validation_errors() {
        let cases = [
            ("y,z1,z1\n1,2,3\n4,5,6\n", "duplicate"),
            ("a,b,c\n1,2,3\n4,5,6\n", "'y'"),
            ("y,z1,z2\n1,2,3\n4,5\n", "expected 3 fields"),
            ("y,z1,z2\n1,2,x\n4,5,6\n", "cannot parse 'x'"),
            ("y,z1,z2\n1,2,inf\n4,5,6\n", "finite"),
            ("y,z1,z2\n1,2,3\n", "at least 2 data rows"),
            ("y,z1\n1,2\n3,4\n", "at least 2 covariate"),
            ("y,z1,z2\nNA,2,3\n4,5,6\n", "response"),
        ];
        for (text, needle) in cases {
            let err = parse(text, Layout::Regression, true).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn graph_files_need_no_response() {
        let d = parse("a,b,c\n1,2,3\n4,5,6\n", Layout::Graph, false).unwrap();
        assert!(d.y.is_none());
        assert_eq!(d.p(), 3);
    }

    #[test]
    fn written_datasets_read_back_exactly() {
        let z = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        let mask = DMatrix::from_row_slice(2, 2, &[true, false, true, true]);
        let data = Dataset::new(
            DVector::from_vec(vec![std::f64::consts::PI, -0.0]),
            z,
            Some(mask),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &data).unwrap();
        let back = read_csv(buf.as_slice(), Layout::Regression, true)
            .unwrap()
            .into_dataset()
            .unwrap();
        assert_eq!(back, data);
    }
}
