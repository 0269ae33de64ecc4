//! Cohort mortality input (HMD cohort-rate text and two-column CSV) and
//! plain-text outputs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ode::{CurveMeta, RateCurve, SolverMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sex {
    #[default]
    Total,
    Male,
    Female,
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "total" => Ok(Sex::Total),
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            other => Err(Error::InvalidParameter(format!(
                "unknown sex `{other}` (expected total, male or female)"
            ))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Total => "total",
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

/// Observed mortality rates of one birth cohort. Missing ages are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSeries {
    pub country: String,
    pub cohort_year: Option<i32>,
    pub sex: Sex,
    pub ages: Vec<f64>,
    pub rates: Vec<f64>,
    pub source: String,
}

impl CohortSeries {
    pub fn new(ages: Vec<f64>, rates: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        let series = Self {
            country: String::new(),
            cohort_year: None,
            sex: Sex::Total,
            ages,
            rates,
            source: source.into(),
        };
        series.check()?;
        Ok(series)
    }

    fn check(&self) -> Result<()> {
        if self.ages.len() != self.rates.len() {
            return Err(Error::Malformed(format!(
                "{}: {} ages but {} rates",
                self.source,
                self.ages.len(),
                self.rates.len()
            )));
        }
        if self.ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Malformed(format!("{}: ages must be strictly increasing", self.source)));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Malformed(format!("{}: nonpositive rate {r}", self.source)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    /// Points with `lo <= age <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        self.ages
            .iter()
            .zip(&self.rates)
            .filter(|(a, _)| **a >= lo && **a <= hi)
            .map(|(a, r)| (*a, *r))
            .unzip()
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses an HMD cohort death-rate table (`Year Age Female Male Total`).
pub fn parse_hmd_cohort(text: &str, source: &str, cohort_year: i32, sex: Sex) -> Result<CohortSeries> {
    let mut lines = text.lines().enumerate();
    let country = text
        .lines()
        .next()
        .and_then(|l| l.split(',').next())
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    let mut found_header = false;
    for (_, line) in lines.by_ref() {
        let cols: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
        if cols == ["year", "age", "female", "male", "total"] {
            found_header = true;
            break;
        }
    }
    if !found_header {
        return Err(Error::Malformed(format!(
            "{source}: no `Year Age Female Male Total` header line"
        )));
    }
    let column = match sex {
        Sex::Female => 2,
        Sex::Male => 3,
        Sex::Total => 4,
    };
    let mut rows = 0;
    let mut ages = Vec::new();
    let mut rates = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 5 {
            return Err(parse_error(source, lineno, format!("expected 5 columns, found {}", toks.len())));
        }
        let year: i32 = toks[0]
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad year `{}`", toks[0])))?;
        if year != cohort_year {
            continue;
        }
        rows += 1;
        let age_tok = toks[1].trim_end_matches('+');
        let age: f64 = age_tok
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad age `{}`", toks[1])))?;
        if let Some(&last) = ages.last() {
            if age <= last {
                return Err(parse_error(source, lineno, format!("age {age} not after {last}")));
            }
        }
        let value = toks[column];
        if value == "." {
            continue;
        }
        let rate: f64 = value
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad rate `{value}`")))?;
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(parse_error(source, lineno, format!("negative rate {rate}")));
        }
        if rate == 0.0 {
            // A zero observed rate carries no log-scale information.
            continue;
        }
        ages.push(age);
        rates.push(rate);
    }
    if rows == 0 {
        return Err(Error::InsufficientData(format!("{source}: cohort {cohort_year} not present")));
    }
    if ages.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{source}: cohort {cohort_year} has no {sex} rates"
        )));
    }
    Ok(CohortSeries {
        country,
        cohort_year: Some(cohort_year),
        sex,
        ages,
        rates,
        source: source.to_string(),
    })
}

/// Parses a two-column `age,rate` CSV with a header line.
pub fn parse_csv_series(text: &str, source: &str) -> Result<CohortSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(source, 1, "empty file"))?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    if cols != ["age", "rate"] {
        return Err(parse_error(source, 1, format!("expected header `age,rate`, found `{header}`")));
    }
    let mut ages: Vec<f64> = Vec::new();
    let mut rates = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_error(source, lineno, format!("expected 2 fields, found {}", fields.len())));
        }
        let age: f64 = fields[0]
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad age `{}`", fields[0])))?;
        let rate: f64 = fields[1]
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad rate `{}`", fields[1])))?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(parse_error(source, lineno, format!("rate {rate} must be positive")));
        }
        if let Some(&last) = ages.last() {
            if age <= last {
                return Err(parse_error(source, lineno, format!("age {age} not after {last}")));
            }
        }
        ages.push(age);
        rates.push(rate);
    }
    if ages.is_empty() {
        return Err(Error::InsufficientData(format!("{source}: no data rows")));
    }
    Ok(CohortSeries {
        country: String::new(),
        cohort_year: None,
        sex: Sex::Total,
        ages,
        rates,
        source: source.to_string(),
    })
}

/// Reads a series, choosing the parser from the extension (`.csv` or HMD text).
pub fn load_series(path: &Path, cohort_year: i32, sex: Sex) -> Result<CohortSeries> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut s = parse_csv_series(&text, &source)?;
        s.cohort_year = Some(cohort_year);
        Ok(s)
    } else {
        parse_hmd_cohort(&text, &source, cohort_year, sex)
    }
}

/// Rebuilds a rate curve from the CSV written by `solve` (columns m, u_star,
/// u_prime, lower_env, upper_env; others ignored).
pub fn parse_curve_csv(text: &str, source: &str) -> Result<RateCurve> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Malformed(format!("{source}: empty curve file")))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        names.iter().position(|n| *n == name).ok_or_else(|| {
            Error::Malformed(format!("{source}: curve header lacks `{name}`"))
        })
    };
    let idx = [col("m")?, col("u_star")?, col("u_prime")?, col("lower_env")?, col("upper_env")?];
    let residual_col = names.iter().position(|n| *n == "residual");
    let mut cols: [Vec<f64>; 5] = Default::default();
    let mut residual = 0.0_f64;
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            fields[j].parse().map_err(|_| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("bad number `{}`", fields[j]),
            })
        };
        for (c, &j) in cols.iter_mut().zip(&idx) {
            c.push(num(j)?);
        }
        if let Some(j) = residual_col {
            let r = num(j)?;
            if r.is_finite() {
                residual = residual.max(r);
            }
        }
    }
    let [m, u, du, lo, hi] = cols;
    let meta = CurveMeta {
        mode: SolverMode::Collocation,
        residual,
        iterations: 0,
    };
    RateCurve::new(m, u, du, lo, hi, meta)
}

/// Number with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

pub fn series_to_csv(series: &CohortSeries) -> String {
    let mut out = String::from("age,rate\n");
    for (a, r) in series.ages.iter().zip(&series.rates) {
        out.push_str(&format!("{a},{}\n", fmt_num(*r)));
    }
    out
}

/// CSV table with a header row; all values at 17 significant digits.
pub fn table_to_csv(header: &[&str], columns: &[&[f64]]) -> Result<String> {
    if header.len() != columns.len() {
        return Err(Error::InvalidParameter("header and column counts differ".into()));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::InvalidParameter("columns differ in length".into()));
    }
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..rows {
        let row: Vec<String> = columns.iter().map(|c| fmt_num(c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Flat `key = value` report.
pub fn key_values(entries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SNIPPET: &str = "Testland, Death rates (cohort 1x1),\tLast modified: 01 Jan 2020\n\
\n\
  Year          Age             Female            Male           Total\n\
  1899           40             0.001000          0.002000       0.001500\n\
  1900           40             0.002100          0.003000       0.002500\n\
  1900           41             0.002200          .              0.002700\n\
  1900           42             0.002300          0.003300       0.002900\n\
  1900           43             .                 .              .\n\
  1900          110+            0.600000          0.700000       0.650000\n";

    #[test]
    fn hmd_cohort_rows() {
        let s = parse_hmd_cohort(SNIPPET, "t.txt", 1900, Sex::Total).unwrap();
        assert_eq!(s.ages, vec![40.0, 41.0, 42.0, 110.0]);
        assert_eq!(s.rates[1], 0.0027);
        assert_eq!(s.country, "Testland");
        let m = parse_hmd_cohort(SNIPPET, "t.txt", 1900, Sex::Male).unwrap();
        assert_eq!(m.ages, vec![40.0, 42.0, 110.0]);
        let three = "Year Age Female Male Total\n1900 40 . . 0.0025\n1900 41 . . 0.0027\n1900 42 . . 0.0029\n";
        let s = parse_hmd_cohort(three, "t.txt", 1900, Sex::Total).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn hmd_errors() {
        assert!(matches!(
            parse_hmd_cohort("no header here\n1900 40 1 1 1\n", "x", 1900, Sex::Total),
            Err(Error::Malformed(_))
        ));
        assert!(matches!(
            parse_hmd_cohort(SNIPPET, "x", 1950, Sex::Total),
            Err(Error::InsufficientData(_))
        ));
        let missing = "Year Age Female Male Total\n1900 40 . . .\n";
        assert!(matches!(
            parse_hmd_cohort(missing, "x", 1900, Sex::Total),
            Err(Error::InsufficientData(_))
        ));
        let bad = "Year Age Female Male Total\n1900 40 0.1 0.1\n";
        assert!(matches!(
            parse_hmd_cohort(bad, "x", 1900, Sex::Total),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn hmd_partial_cohort_window() {
        let mut text = String::from("Year Age Female Male Total\n");
        for age in 0..=110 {
            let v = if (47..=77).contains(&age) {
                format!("{:.6}", 1e-4 * (0.09 * age as f64).exp())
            } else {
                ".".to_string()
            };
            text.push_str(&format!("1900 {age} . . {v}\n"));
        }
        let s = parse_hmd_cohort(&text, "bg", 1900, Sex::Total).unwrap();
        assert_eq!(s.ages.first(), Some(&47.0));
        assert_eq!(s.ages.last(), Some(&77.0));
        assert_eq!(s.len(), 31);
    }

    #[test]
    fn csv_examples() {
        let s = parse_csv_series("age,rate\n40,0.002\n41,0.0021", "s.csv").unwrap();
        assert_eq!(s.ages, vec![40.0, 41.0]);
        assert_eq!(s.rates, vec![0.002, 0.0021]);
        match parse_csv_series("age,rate\n40,0.002\n41,-0.1\n", "s.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_csv_series("age,rate\n41,0.002\n40,0.003\n", "s.csv"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_csv_series("x,y\n1,2\n", "s.csv").is_err());
    }

    #[test]
    fn table_layout() {
        let csv = table_to_csv(&["a", "b"], &[&[1.0, 2.0], &[0.1, 0.2]]).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("a,b\n1.0000000000000000e0,"));
        assert!(table_to_csv(&["a"], &[&[1.0], &[2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(start in 0u32..60, rates in prop::collection::vec(1e-9f64..1.0, 1..60)) {
            let ages: Vec<f64> = (0..rates.len()).map(|i| (start + i as u32) as f64).collect();
            let s = CohortSeries::new(ages, rates, "mem").unwrap();
            let back = parse_csv_series(&series_to_csv(&s), "mem").unwrap();
            prop_assert_eq!(&back.ages, &s.ages);
            prop_assert_eq!(&back.rates, &s.rates);
        }
    }
}
