//! Comma-separated tables with a header row, `\n` line endings and decimals
//! printed to 12 significant digits.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::EpochRecord;

/// Shortest decimal text carrying 12 significant digits: plain notation for
/// exponents in `[-5, 15)`, scientific otherwise. Non-finite values print as
/// an empty cell.
pub fn format_decimal(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn format_optional(v: Option<f64>) -> String {
    v.map_or_else(String::new, format_decimal)
}

/// Empty cells read back as `None`.
pub fn parse_optional(cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("invalid decimal {cell:?}")))
}

/// A header plus string rows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Schema(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut table = Table::new(header);
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            table.push(rec.iter().map(str::to_string).collect())?;
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Appends the rows to `path`, writing the header first when the file is
    /// new or empty. An existing header must match.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let existing = match fs::read_to_string(path) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        };
        let full = self.to_csv_string();
        let body = match existing.as_deref() {
            None | Some("") => full,
            Some(text) => {
                let old = Table::parse(text)?;
                if old.header != self.header {
                    return Err(Error::Schema(format!("{}: header mismatch", path.display())));
                }
                full.split_once('\n').map_or(String::new(), |(_, rest)| rest.to_string())
            }
        };
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub const RECORD_COLUMNS: [&str; 8] = [
    "epoch",
    "train_loss",
    "core_corr",
    "spurious_corr",
    "decoded_core",
    "decoded_spurious",
    "spurious_subnet_weight",
    "core_subnet_weight",
];

pub fn records_table(records: &[EpochRecord]) -> Table {
    let mut t = Table::new(RECORD_COLUMNS);
    for r in records {
        t.rows.push(vec![
            r.epoch.to_string(),
            format_decimal(r.train_loss),
            format_decimal(r.core_corr),
            format_decimal(r.spurious_corr),
            format_optional(r.decoded_core),
            format_optional(r.decoded_spurious),
            format_optional(r.spurious_subnet_weight),
            format_optional(r.core_subnet_weight),
        ]);
    }
    t
}

/// Inverse of [`records_table`]; empty loss or correlation cells read as NaN.
pub fn parse_records(table: &Table) -> Result<Vec<EpochRecord>> {
    let idx: Vec<usize> = RECORD_COLUMNS
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let cell = |k: usize| row[idx[k]].as_str();
            let num = |k: usize| parse_optional(cell(k)).map(|v| v.unwrap_or(f64::NAN));
            Ok(EpochRecord {
                epoch: cell(0)
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid epoch {:?}", cell(0))))?,
                train_loss: num(1)?,
                core_corr: num(2)?,
                spurious_corr: num(3)?,
                decoded_core: parse_optional(cell(4))?,
                decoded_spurious: parse_optional(cell(5))?,
                spurious_subnet_weight: parse_optional(cell(6))?,
                core_subnet_weight: parse_optional(cell(7))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(0.0), "0");
        assert_eq!(format_decimal(-0.0), "0");
        assert_eq!(format_decimal(1.0), "1");
        assert_eq!(format_decimal(0.5), "0.5");
        assert_eq!(format_decimal(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_decimal(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(format_decimal(123456.789), "123456.789");
        assert_eq!(format_decimal(1e-7), "1e-7");
        assert_eq!(format_decimal(1.5e20), "1.5e20");
        assert_eq!(format_decimal(0.00001234), "0.00001234");
        assert_eq!(format_decimal(9.9999999999999), "10");
        assert_eq!(format_decimal(f64::NAN), "");
        assert_eq!(format_decimal(f64::INFINITY), "");
    }

    #[test]
    fn quoted_cells_round_trip() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), "plain".into()]).unwrap();
        t.push(vec!["".into(), "q\"uote".into()]).unwrap();
        let text = t.to_csv_string();
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string(), text);
        assert!(t.push(vec!["1".into()]).is_err());
        assert!(t.column("c").is_err());
    }

    #[test]
    fn records_round_trip() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 0.123456789012345,
            core_corr: 0.5,
            spurious_corr: f64::NAN,
            decoded_core: None,
            decoded_spurious: Some(0.99),
            spurious_subnet_weight: Some(1.25),
            core_subnet_weight: None,
        };
        let t = records_table(&[r]);
        let back = parse_records(&Table::parse(&t.to_csv_string()).unwrap()).unwrap();
        assert_eq!(back[0].epoch, 3);
        assert!(back[0].spurious_corr.is_nan());
        assert_eq!(back[0].decoded_spurious, Some(0.99));
        assert_eq!(records_table(&back).to_csv_string(), t.to_csv_string());
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(["k"]);
        t.push(vec!["1".into()]).unwrap();
        t.append_to(&p).unwrap();
        t.append_to(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "k\n1\n1\n");
        assert!(Table::new(["other"]).append_to(&p).is_err());
    }
}
