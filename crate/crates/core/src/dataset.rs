//! Partially observed samples: always-observed `X`, block-missing `Y`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::RowMatrix;

/// Token marking a missing cell in CSV input. Case-sensitive.
pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    pub kind: ColumnKind,
}

/// Column-role map, read from a flat `name = role[,kind]` text file.
///
/// ```text
/// # role is x or y; kind defaults to continuous
/// weight = x
/// strain_sex = x, binary
/// expression = y
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnConfig {
    pub columns: Vec<ColumnSpec>,
}

impl ColumnConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, rest) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected name = role[,kind]", lineno + 1))
            })?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Config(format!("line {}: empty column name", lineno + 1)));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("column '{name}' listed twice")));
            }
            let mut parts = rest.split(',').map(str::trim);
            let role = match parts.next() {
                Some("x") => ColumnRole::X,
                Some("y") => ColumnRole::Y,
                other => {
                    return Err(Error::Config(format!(
                        "column '{name}': unknown role {other:?} (expected x or y)"
                    )))
                }
            };
            let kind = match parts.next() {
                None | Some("continuous") => ColumnKind::Continuous,
                Some("binary") => ColumnKind::Binary,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "column '{name}': unknown kind '{other}' (expected continuous or binary)"
                    )))
                }
            };
            if parts.next().is_some() {
                return Err(Error::Config(format!("column '{name}': too many fields")));
            }
            columns.push(ColumnSpec { name, role, kind });
        }
        let cfg = Self { columns };
        if cfg.names(ColumnRole::X).is_empty() {
            return Err(Error::Config("no x columns configured".into()));
        }
        if cfg.names(ColumnRole::Y).is_empty() {
            return Err(Error::Config("no y columns configured".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn names(&self, role: ColumnRole) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn x_kinds(&self) -> Vec<ColumnKind> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::X)
            .map(|c| c.kind)
            .collect()
    }
}

impl fmt::Display for ColumnConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.columns {
            let role = match c.role {
                ColumnRole::X => "x",
                ColumnRole::Y => "y",
            };
            let kind = match c.kind {
                ColumnKind::Continuous => "continuous",
                ColumnKind::Binary => "binary",
            };
            writeln!(f, "{} = {}, {}", c.name, role, kind)?;
        }
        Ok(())
    }
}

/// `n` rows of observed `X` and possibly missing `Y`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: RowMatrix,
    /// Missing rows hold NaN; never read them without checking `delta`.
    y: RowMatrix,
    delta: Vec<bool>,
    x_names: Vec<String>,
    y_names: Vec<String>,
    x_kinds: Vec<ColumnKind>,
    demoted_rows: usize,
}

impl Dataset {
    /// Build from `X` rows and optional `Y` rows (`None` = missing).
    pub fn new(
        x: RowMatrix,
        y: Vec<Option<Vec<f64>>>,
        x_names: Vec<String>,
        y_names: Vec<String>,
        x_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let n = x.nrows();
        let dx = x.ncols();
        let dy = y_names.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if dx == 0 || dy == 0 {
            return Err(Error::Validation("need at least one x and one y column".into()));
        }
        if x_names.len() != dx || x_kinds.len() != dx {
            return Err(Error::Validation("x names/kinds do not match x width".into()));
        }
        if y.len() != n {
            return Err(Error::Validation("x and y row counts differ".into()));
        }
        for (i, row) in x.rows_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Schema(format!(
                        "x column '{}' has a non-finite value at row {}",
                        x_names[j],
                        i + 1
                    )));
                }
                if x_kinds[j] == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::Schema(format!(
                        "binary x column '{}' has value {v} at row {}",
                        x_names[j],
                        i + 1
                    )));
                }
            }
        }
        let mut ydata = Vec::with_capacity(n * dy);
        let mut delta = Vec::with_capacity(n);
        for (i, row) in y.into_iter().enumerate() {
            match row {
                Some(r) => {
                    if r.len() != dy {
                        return Err(Error::Validation(format!("y row {} has wrong width", i + 1)));
                    }
                    if r.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "observed y row {} has a non-finite entry",
                            i + 1
                        )));
                    }
                    ydata.extend_from_slice(&r);
                    delta.push(true);
                }
                None => {
                    ydata.extend(std::iter::repeat(f64::NAN).take(dy));
                    delta.push(false);
                }
            }
        }
        if !delta.iter().any(|&d| d) {
            return Err(Error::Validation("no complete rows: every y row is missing".into()));
        }
        Ok(Self {
            x,
            y: RowMatrix::from_vec(n, dy, ydata),
            delta,
            x_names,
            y_names,
            x_kinds,
            demoted_rows: 0,
        })
    }

    /// Convenience constructor with generated column names and all-continuous X.
    pub fn from_rows(x: &[Vec<f64>], y: &[Option<Vec<f64>>]) -> Result<Self> {
        let dx = x.first().map_or(0, Vec::len);
        let dy = y.iter().flatten().next().map_or(1, Vec::len);
        Self::new(
            RowMatrix::from_rows(x),
            y.to_vec(),
            (1..=dx).map(|j| format!("x{j}")).collect(),
            (1..=dy).map(|j| format!("y{j}")).collect(),
            vec![ColumnKind::Continuous; dx],
        )
    }

    pub fn with_x_kinds(mut self, kinds: Vec<ColumnKind>) -> Result<Self> {
        assert_eq!(kinds.len(), self.dx());
        for (j, k) in kinds.iter().enumerate() {
            if *k == ColumnKind::Binary
                && self.x.rows_iter().any(|r| r[j] != 0.0 && r[j] != 1.0)
            {
                return Err(Error::Schema(format!(
                    "x column '{}' declared binary but has values outside {{0,1}}",
                    self.x_names[j]
                )));
            }
        }
        self.x_kinds = kinds;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }
    pub fn dx(&self) -> usize {
        self.x.ncols()
    }
    pub fn dy(&self) -> usize {
        self.y.ncols()
    }
    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }
    /// Observed `Y` row. Panics in debug builds if the row is missing.
    pub fn y_row(&self, i: usize) -> &[f64] {
        debug_assert!(self.delta[i], "y_row({i}) on a missing row");
        self.y.row(i)
    }
    pub fn y_opt(&self, i: usize) -> Option<&[f64]> {
        self.delta[i].then(|| self.y.row(i))
    }
    pub fn is_complete(&self, i: usize) -> bool {
        self.delta[i]
    }
    pub fn delta(&self) -> &[bool] {
        &self.delta
    }
    pub fn x(&self) -> &RowMatrix {
        &self.x
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn y_names(&self) -> &[String] {
        &self.y_names
    }
    pub fn x_kinds(&self) -> &[ColumnKind] {
        &self.x_kinds
    }
    /// Rows whose `Y` was partially `NA` in the source file and were treated as missing.
    pub fn demoted_rows(&self) -> usize {
        self.demoted_rows
    }
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.delta[i]).collect()
    }
    pub fn missing_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.delta[i]).collect()
    }
    pub fn n_complete(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }
    pub fn n_missing(&self) -> usize {
        self.n() - self.n_complete()
    }

    /// New dataset made of the given rows (repeats allowed), preserving missingness.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let dx = self.dx();
        let mut x = Vec::with_capacity(rows.len() * dx);
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(self.x.row(i));
            y.push(self.y_opt(i).map(<[f64]>::to_vec));
        }
        Self::new(
            RowMatrix::from_vec(rows.len(), dx, x),
            y,
            self.x_names.clone(),
            self.y_names.clone(),
            self.x_kinds.clone(),
        )
    }

    pub fn complete_case(&self) -> Result<Self> {
        self.select_rows(&self.complete_rows())
    }

    pub fn load_csv(path: &Path, config: &ColumnConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, config)
    }

    pub fn parse_csv(text: &str, config: &ColumnConfig) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let locate = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
        };
        let x_names = config.names(ColumnRole::X);
        let y_names = config.names(ColumnRole::Y);
        let x_idx = x_names.iter().map(|n| locate(n)).collect::<Result<Vec<_>>>()?;
        let y_idx = y_names.iter().map(|n| locate(n)).collect::<Result<Vec<_>>>()?;

        let parse = |cell: &str, row: usize, col: &str| -> Result<f64> {
            cell.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: col.to_string(),
                message: format!("'{cell}' is not a number"),
            })
        };

        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut demoted = 0;
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 1;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                column: String::new(),
                message: e.to_string(),
            })?;
            let cell = |j: usize| rec.get(j).unwrap_or("");
            for (name, &j) in x_names.iter().zip(&x_idx) {
                if cell(j) == MISSING_TOKEN {
                    return Err(Error::Schema(format!(
                        "x column '{name}' is missing at row {row}; x must always be observed"
                    )));
                }
                x.push(parse(cell(j), row, name)?);
            }
            let n_na = y_idx.iter().filter(|&&j| cell(j) == MISSING_TOKEN).count();
            if n_na == 0 {
                let vals = y_names
                    .iter()
                    .zip(&y_idx)
                    .map(|(name, &j)| parse(cell(j), row, name))
                    .collect::<Result<Vec<_>>>()?;
                y.push(Some(vals));
            } else {
                if n_na < y_idx.len() {
                    demoted += 1;
                }
                y.push(None);
            }
        }
        if y.is_empty() {
            return Err(Error::Validation("file has no data rows".into()));
        }
        if demoted > 0 {
            log::warn!("{demoted} row(s) with partially missing y treated as fully missing");
        }
        let n = y.len();
        let mut d = Self::new(
            RowMatrix::from_vec(n, x_names.len(), x),
            y,
            x_names,
            y_names,
            config.x_kinds(),
        )?;
        d.demoted_rows = demoted;
        Ok(d)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self
            .x_names
            .iter()
            .chain(&self.y_names)
            .map(String::as_str)
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n() {
            let mut cells: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            match self.y_opt(i) {
                Some(r) => cells.extend(r.iter().map(|v| v.to_string())),
                None => cells.extend(std::iter::repeat(MISSING_TOKEN.to_string()).take(self.dy())),
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn column_config(&self) -> ColumnConfig {
        let mut columns: Vec<ColumnSpec> = self
            .x_names
            .iter()
            .zip(&self.x_kinds)
            .map(|(n, k)| ColumnSpec {
                name: n.clone(),
                role: ColumnRole::X,
                kind: *k,
            })
            .collect();
        columns.extend(self.y_names.iter().map(|n| ColumnSpec {
            name: n.clone(),
            role: ColumnRole::Y,
            kind: ColumnKind::Continuous,
        }));
        ColumnConfig { columns }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionWarning {
    /// Complete-case fraction under 5%: the propensity is likely not bounded away from zero.
    LowCompleteFraction { fraction: f64 },
    /// Four or more smoothed coordinates with a second-order kernel.
    HigherOrderKernelAdvised { smoothed_dims: usize, order: u8 },
    /// `n h^d < 1`: too few effective observations per kernel window.
    SmallEffectiveSample { n_h_d: f64 },
}

impl fmt::Display for ConditionWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LowCompleteFraction { fraction } => write!(
                f,
                "only {:.1}% complete rows; propensity may not be bounded away from zero",
                100.0 * fraction
            ),
            Self::HigherOrderKernelAdvised {
                smoothed_dims,
                order,
            } => write!(
                f,
                "{smoothed_dims} smoothed x dimensions with a kernel of order {order}; use order > 2 to control bias"
            ),
            Self::SmallEffectiveSample { n_h_d } => {
                write!(f, "n*h^d = {n_h_d:.3} < 1; bandwidth too small for the sample size")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionReport {
    pub warnings: Vec<ConditionWarning>,
}

impl ConditionReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Non-fatal checks of the regularity conditions the imputation relies on.
pub fn validate_conditions(d: &Dataset, k: &KernelSpec) -> ConditionReport {
    let mut warnings = Vec::new();
    let fraction = d.n_complete() as f64 / d.n() as f64;
    if fraction < 0.05 {
        warnings.push(ConditionWarning::LowCompleteFraction { fraction });
    }
    let dims = d
        .x_kinds()
        .iter()
        .filter(|&&k| k == ColumnKind::Continuous)
        .count();
    if dims >= 4 && k.order() == 2 {
        warnings.push(ConditionWarning::HigherOrderKernelAdvised {
            smoothed_dims: dims,
            order: k.order(),
        });
    }
    let n_h_d = d.n() as f64 * k.bandwidth().powi(dims as i32);
    if dims > 0 && n_h_d < 1.0 {
        warnings.push(ConditionWarning::SmallEffectiveSample { n_h_d });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    ConditionReport { warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ColumnConfig {
        ColumnConfig::parse("a = x\nb = y\n").unwrap()
    }

    #[test]
    fn fully_observed_file() {
        let d = Dataset::parse_csv("a,b\n1,2\n3,4\n5,6\n", &cfg()).unwrap();
        assert_eq!(d.delta(), &[true, true, true]);
    }

    #[test]
    fn na_in_y_marks_row_missing() {
        let d = Dataset::parse_csv("a,b\n1,2\n3,NA\n5,6\n", &cfg()).unwrap();
        assert_eq!(d.delta(), &[true, false, true]);
    }

    #[test]
    fn na_in_x_is_schema_error() {
        let e = Dataset::parse_csv("a,b\n1,2\nNA,3\n", &cfg()).unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn lowercase_na_is_a_parse_error() {
        let e = Dataset::parse_csv("a,b\n1,2\n3,na\n", &cfg()).unwrap_err();
        match e {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_complete_rows_is_validation_error() {
        let e = Dataset::parse_csv("a,b\n1,NA\n2,NA\n", &cfg()).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn partial_na_rows_are_demoted() {
        let c = ColumnConfig::parse("a = x\nb = y\nc = y\n").unwrap();
        let d = Dataset::parse_csv("a,b,c\n1,2,3\n4,NA,6\n7,NA,NA\n", &c).unwrap();
        assert_eq!(d.delta(), &[true, false, false]);
        assert_eq!(d.demoted_rows(), 1);
    }

    #[test]
    fn binary_column_rejects_other_values() {
        let c = ColumnConfig::parse("a = x, binary\nb = y\n").unwrap();
        assert!(Dataset::parse_csv("a,b\n0,1\n2,1\n", &c).is_err());
        assert!(Dataset::parse_csv("a,b\n0,1\n1,1\n", &c).is_ok());
    }

    #[test]
    fn config_rejects_bad_roles() {
        assert!(ColumnConfig::parse("a = z\nb = y").is_err());
        assert!(ColumnConfig::parse("a = x").is_err());
        assert!(ColumnConfig::parse("a = x, ordinal\nb = y").is_err());
    }

    #[test]
    fn condition_report_examples() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<Option<Vec<f64>>> = (0..100)
            .map(|i| (i % 2 == 0).then(|| vec![i as f64]))
            .collect();
        let d = Dataset::from_rows(&x, &y).unwrap();
        let k = KernelSpec::new(2, 0.5).unwrap();
        assert!(validate_conditions(&d, &k).is_clean());

        let y2: Vec<Option<Vec<f64>>> = (0..100)
            .map(|i| (i < 2).then(|| vec![i as f64]))
            .collect();
        let d2 = Dataset::from_rows(&x, &y2).unwrap();
        assert!(matches!(
            validate_conditions(&d2, &k).warnings[..],
            [ConditionWarning::LowCompleteFraction { .. }]
        ));

        let x4: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64; 4]).collect();
        let d4 = Dataset::from_rows(&x4, &y).unwrap();
        assert!(validate_conditions(&d4, &k)
            .warnings
            .iter()
            .any(|w| matches!(w, ConditionWarning::HigherOrderKernelAdvised { .. })));
    }
}
