//! CSV and JSON files read and written by the commands.

use std::fs;
use std::io::Write;
use std::path::Path;

use mixdens::{Error, Grid, MixingPmf, Observations, Result};

/// C's `%.17g`: 17 significant digits, trailing zeros dropped.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mantissa), sign, exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header plus rows of numbers.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| fmt_g17(*v))).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ascii output"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_context(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_context(path, e))
}

/// Reads a headed CSV and returns the named columns.
fn read_columns(path: &Path, wanted: &[&str]) -> Result<Option<Vec<Vec<f64>>>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut idx = Vec::with_capacity(wanted.len());
    for name in wanted {
        match headers.iter().position(|h| h == *name) {
            Some(i) => idx.push(i),
            None => return Ok(None),
        }
    }
    let mut cols = vec![Vec::new(); wanted.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (c, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column '{}': '{field}' is not a number",
                    path.display(),
                    line + 1,
                    wanted[c]
                ))
            })?;
            cols[c].push(v);
        }
    }
    Ok(Some(cols))
}

/// Data CSV with a `y` column, or `y1,y2` for paired replicates.
pub fn read_data(path: &Path) -> Result<Observations> {
    let obs = if let Some(cols) = read_columns(path, &["y"])? {
        Observations::univariate(&cols[0])
    } else if let Some(cols) = read_columns(path, &["y1", "y2"])? {
        let pairs: Vec<(f64, f64)> = cols[0].iter().copied().zip(cols[1].iter().copied()).collect();
        Observations::paired(&pairs)
    } else {
        return Err(Error::Parse(format!("{}: expected a 'y' column or 'y1,y2' columns", path.display())));
    };
    if obs.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(obs)
}

pub fn data_table(data: &Observations, thetas: Option<&[Vec<f64>]>) -> Table {
    let bivariate = data.width() == 2;
    let mut header: Vec<&str> = if bivariate { vec!["y1", "y2"] } else { vec!["y"] };
    if let Some(t) = thetas {
        let width = t.first().map_or(0, |r| r.len());
        header.extend(if width == 2 { &["theta1", "theta2"][..] } else { &["theta"][..] });
    }
    let mut table = Table::new(&header);
    for i in 0..data.len() {
        let mut row: Vec<f64> = data.row(i).to_vec();
        if let Some(t) = thetas {
            row.extend(&t[i]);
        }
        table.rows.push(row);
    }
    table
}

pub fn density_table(pmf: &MixingPmf) -> Table {
    let grid = pmf.grid();
    let mut table = if grid.dim() == 2 {
        Table::new(&["theta1", "theta2", "prob"])
    } else {
        Table::new(&["theta", "prob"])
    };
    for (j, &w) in pmf.weights().iter().enumerate() {
        let mut row = grid.point(j).to_vec();
        row.push(w);
        table.rows.push(row);
    }
    table
}

/// Density CSV with `theta,prob` or `theta1,theta2,prob`.
pub fn read_density(path: &Path) -> Result<MixingPmf> {
    let (grid, probs) = if let Some(cols) = read_columns(path, &["theta", "prob"])? {
        (Grid::univariate(cols[0].clone())?, cols[1].clone())
    } else if let Some(cols) = read_columns(path, &["theta1", "theta2", "prob"])? {
        let points: Vec<Vec<f64>> = cols[0].iter().zip(&cols[1]).map(|(a, b)| vec![*a, *b]).collect();
        (Grid::from_points(2, &points)?, cols[2].clone())
    } else {
        return Err(Error::Parse(format!(
            "{}: expected 'theta,prob' or 'theta1,theta2,prob' columns",
            path.display()
        )));
    };
    MixingPmf::new(grid, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1e17, "1e+17"),
            (12345678901234567.0, "12345678901234568"),
            (0.0001, "0.0001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (6.02e23, "6.02e+23"),
            (100.0, "100"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_g17(v), want, "{v}");
        }
    }

    #[test]
    fn g17_round_trips() {
        for v in [std::f64::consts::PI, 1e-300, -7.123456789e150, 0.3, 2.0f64.sqrt() * 1e-7] {
            assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
        }
    }
}
