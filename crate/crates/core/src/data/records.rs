//! Monthly loan performance records and the pipe-delimited file reader.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: u16,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: u16, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(invalid!("month {month} out of range"));
        }
        Ok(Self { year, month })
    }

    /// Months since year 0, for arithmetic.
    pub fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn plus_months(self, n: i64) -> Self {
        let i = self.index() + n;
        Self { year: i.div_euclid(12) as u16, month: (i.rem_euclid(12) + 1) as u8 }
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    /// Parses `YYYYMM`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid!("period '{s}' is not YYYYMM"));
        }
        YearMonth::new(s[..4].parse().expect("digits"), s[4..].parse().expect("digits"))
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}{:02}", self.year, self.month)
    }
}

/// Current loan delinquency status: months past due, or a non-numeric
/// disposition code such as `RA` (REO acquisition).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Clds {
    Months(u32),
    Code(String),
}

impl Clds {
    pub fn parse(s: &str) -> Option<Clds> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        Some(match s.parse::<u32>() {
            Ok(n) => Clds::Months(n),
            Err(_) => Clds::Code(s.to_string()),
        })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Clds::Months(_))
    }
}

impl fmt::Display for Clds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clds::Months(n) => write!(f, "{n}"),
            Clds::Code(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanMonthRecord {
    pub loan_id: String,
    pub period: YearMonth,
    pub clds: Clds,
    pub current_actual_upb: f64,
    pub current_deferred_upb: f64,
    pub current_interest_rate: f64,
    /// `None` when the file reports it as unknown.
    pub estimated_ltv: Option<f64>,
    /// `None` when blank (older files predate the field).
    pub interest_bearing_upb: Option<f64>,
    pub assistance_status_code: Option<String>,
    pub remaining_months_to_maturity: i32,
}

/// Zero-based column index of every field used from a performance file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub version: u32,
    pub delimiter: char,
    pub loan_id: usize,
    pub period: usize,
    pub current_actual_upb: usize,
    pub clds: usize,
    pub remaining_months_to_maturity: usize,
    pub current_interest_rate: usize,
    pub current_deferred_upb: usize,
    pub estimated_ltv: usize,
    pub assistance_status_code: usize,
    pub interest_bearing_upb: usize,
}

impl Default for ColumnMap {
    /// Positions in the published single-family monthly performance layout
    /// (32 fields, pipe-delimited).
    fn default() -> Self {
        Self {
            version: 1,
            delimiter: '|',
            loan_id: 0,
            period: 1,
            current_actual_upb: 2,
            clds: 3,
            remaining_months_to_maturity: 5,
            current_interest_rate: 10,
            current_deferred_upb: 11,
            estimated_ltv: 25,
            assistance_status_code: 29,
            interest_bearing_upb: 31,
        }
    }
}

impl ColumnMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: ColumnMap = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        if map.version != 1 {
            return Err(Error::Config(format!("unsupported column map version {}", map.version)));
        }
        Ok(map)
    }

    pub fn max_index(&self) -> usize {
        [
            self.loan_id,
            self.period,
            self.current_actual_upb,
            self.clds,
            self.remaining_months_to_maturity,
            self.current_interest_rate,
            self.current_deferred_upb,
            self.estimated_ltv,
            self.assistance_status_code,
            self.interest_bearing_upb,
        ]
        .into_iter()
        .max()
        .expect("non-empty")
    }

    pub fn parse_line(&self, line: &str) -> std::result::Result<LoanMonthRecord, String> {
        let fields: Vec<&str> = line.split(self.delimiter).collect();
        if fields.len() <= self.max_index() {
            return Err(format!("truncated line: {} fields", fields.len()));
        }
        let num = |idx: usize, name: &str| -> std::result::Result<f64, String> {
            let s = fields[idx].trim();
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("bad {name} '{s}'"))
        };
        let opt_num = |idx: usize, name: &str| -> std::result::Result<Option<f64>, String> {
            if fields[idx].trim().is_empty() {
                Ok(None)
            } else {
                num(idx, name).map(Some)
            }
        };
        let loan_id = fields[self.loan_id].trim();
        if loan_id.is_empty() {
            return Err("empty loan id".into());
        }
        let period = fields[self.period].trim().parse::<YearMonth>().map_err(|e| e.to_string())?;
        let clds = Clds::parse(fields[self.clds]).ok_or("missing delinquency status")?;
        let current_actual_upb = num(self.current_actual_upb, "current actual UPB")?;
        let current_deferred_upb = opt_num(self.current_deferred_upb, "deferred UPB")?.unwrap_or(0.0);
        let current_interest_rate = num(self.current_interest_rate, "interest rate")?;
        // 999 marks an unknown estimate
        let estimated_ltv = opt_num(self.estimated_ltv, "estimated LTV")?.filter(|&v| v != 999.0);
        let interest_bearing_upb = opt_num(self.interest_bearing_upb, "interest bearing UPB")?;
        if current_actual_upb < 0.0 || current_deferred_upb < 0.0 || interest_bearing_upb.is_some_and(|v| v < 0.0) {
            return Err("negative UPB".into());
        }
        let assistance = fields[self.assistance_status_code].trim();
        let remaining = fields[self.remaining_months_to_maturity].trim();
        let remaining_months_to_maturity =
            remaining.parse::<i32>().map_err(|_| format!("bad remaining months '{remaining}'"))?;
        Ok(LoanMonthRecord {
            loan_id: loan_id.to_string(),
            period,
            clds,
            current_actual_upb,
            current_deferred_upb,
            current_interest_rate,
            estimated_ltv,
            interest_bearing_upb,
            assistance_status_code: (!assistance.is_empty()).then(|| assistance.to_string()),
            remaining_months_to_maturity,
        })
    }

    /// Renders a record as a full-width line of the layout this map describes.
    pub fn format_line(&self, r: &LoanMonthRecord) -> String {
        let mut fields = vec![String::new(); self.max_index() + 1];
        fields[self.loan_id] = r.loan_id.clone();
        fields[self.period] = r.period.to_string();
        fields[self.current_actual_upb] = format!("{:.2}", r.current_actual_upb);
        fields[self.clds] = r.clds.to_string();
        fields[self.remaining_months_to_maturity] = r.remaining_months_to_maturity.to_string();
        fields[self.current_interest_rate] = format!("{:.3}", r.current_interest_rate);
        fields[self.current_deferred_upb] = format!("{:.2}", r.current_deferred_upb);
        fields[self.estimated_ltv] = r.estimated_ltv.map_or_else(|| "999".to_string(), |v| format!("{v:.0}"));
        fields[self.assistance_status_code] = r.assistance_status_code.clone().unwrap_or_default();
        fields[self.interest_bearing_upb] = r.interest_bearing_upb.map(|v| format!("{v:.2}")).unwrap_or_default();
        fields.join(&self.delimiter.to_string())
    }
}

/// Counters from one parse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines: usize,
    pub parsed: usize,
    pub skipped: usize,
    /// First few `(line number, reason)` pairs for skipped lines.
    pub examples: Vec<(usize, String)>,
}

const MAX_EXAMPLES: usize = 20;

/// Streaming reader over a performance file; malformed lines are skipped and counted.
pub struct PerformanceReader<R> {
    lines: std::io::Lines<R>,
    map: ColumnMap,
    report: ParseReport,
    checked: bool,
    max_records: Option<usize>,
}

impl<R: BufRead> PerformanceReader<R> {
    pub fn new(reader: R, map: ColumnMap) -> Self {
        Self { lines: reader.lines(), map, report: ParseReport::default(), checked: false, max_records: None }
    }

    /// Stops after `n` successfully parsed records.
    pub fn with_limit(mut self, n: Option<usize>) -> Self {
        self.max_records = n;
        self
    }

    pub fn report(&self) -> &ParseReport {
        &self.report
    }
}

impl<R: BufRead> Iterator for PerformanceReader<R> {
    type Item = Result<LoanMonthRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.max_records.is_some_and(|n| self.report.parsed >= n) {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.report.lines += 1;
            if line.trim().is_empty() {
                continue;
            }
            if !self.checked {
                self.checked = true;
                let width = line.split(self.map.delimiter).count();
                if width <= self.map.max_index() {
                    return Some(Err(Error::Config(format!(
                        "column map references index {} but the file has {width} fields",
                        self.map.max_index()
                    ))));
                }
            }
            match self.map.parse_line(&line) {
                Ok(r) => {
                    self.report.parsed += 1;
                    return Some(Ok(r));
                }
                Err(reason) => {
                    self.report.skipped += 1;
                    if self.report.examples.len() < MAX_EXAMPLES {
                        self.report.examples.push((self.report.lines, reason));
                    }
                }
            }
        }
    }
}

/// Reads a whole performance file.
pub fn parse_performance_file(
    path: &Path,
    map: &ColumnMap,
    max_records: Option<usize>,
) -> Result<(Vec<LoanMonthRecord>, ParseReport)> {
    let file = File::open(path).map_err(|e| invalid!("cannot open {}: {e}", path.display()))?;
    let mut reader = PerformanceReader::new(BufReader::new(file), map.clone()).with_limit(max_records);
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    if reader.report().skipped > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), reader.report().skipped);
    }
    Ok((records, reader.report().clone()))
}

pub fn write_performance_file(path: &Path, map: &ColumnMap, records: &[LoanMonthRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", map.format_line(r))?;
    }
    w.flush()?;
    Ok(())
}
