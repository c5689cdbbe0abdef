//! Tabular ingestion, plausibility filtering, imputation and binning.
//!
//! Continuous cells are stored as `Option<f64>`, categorical cells as
//! `Option<i64>` category codes. After [`impute`] no `None` remains: missing
//! continuous values take the column mean and missing categorical values take
//! [`SENTINEL_CATEGORY`].
//!
//! Binning uses half-open intervals that are lower-exclusive and
//! upper-inclusive. With cut points `c[0] < c[1] < ... < c[k-1]`, a value `v`
//! lands in bin `i` when `c[i-1] < v <= c[i]`, with `c[-1] = -inf` and
//! `c[k] = +inf`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category code reserved for missing categorical values.
pub const SENTINEL_CATEGORY: i64 = -1;

/// Largest bin count a single feature may use (bin indices are stored as `u16`).
pub const MAX_BINS_LIMIT: usize = u16::MAX as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_true")]
    pub allowed_missing: bool,
}

impl ColumnSchema {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            allowed_missing: true,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            allowed_missing: true,
        }
    }
}

fn default_delimiter() -> char {
    ','
}

/// Feature columns plus the label and optional group columns of a file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub label: String,
    #[serde(default)]
    pub group: Option<String>,
    /// Extra token treated as missing in addition to the empty string.
    #[serde(default)]
    pub missing_token: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            group: None,
            missing_token: None,
            delimiter: ',',
            columns,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .chain(std::iter::once(self.label.as_str()))
            .chain(self.group.as_deref())
        {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Schema("delimiter must be a single ASCII character".into()));
        }
        Ok(())
    }
}

/// One cell of a row, as seen by models at prediction time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(i64),
    Missing,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<i64>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Continuous(_) => ColumnKind::Continuous,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn cell(&self, row: usize) -> Cell {
        match self {
            ColumnData::Continuous(v) => v[row].map_or(Cell::Missing, Cell::Num),
            ColumnData::Categorical(v) => v[row].map_or(Cell::Missing, Cell::Cat),
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.iter().filter(|x| x.is_none()).count(),
            ColumnData::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }
}

/// Column-typed tabular data with binary labels and optional group ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    labels: Vec<u8>,
    group_id: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        schema: Schema,
        columns: Vec<ColumnData>,
        labels: Vec<u8>,
        group_id: Option<Vec<String>>,
    ) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns for a schema of {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        let n = labels.len();
        for (col, spec) in columns.iter().zip(&schema.columns) {
            if col.kind() != spec.kind {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` data does not match its declared kind",
                    spec.name
                )));
            }
            if col.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "column `{}` has {} rows, labels have {n}",
                    spec.name,
                    col.len()
                )));
            }
        }
        if let Some(pos) = labels.iter().position(|&y| y > 1) {
            return Err(Error::LabelDomain {
                line: pos as u64 + 2,
                value: labels[pos].to_string(),
            });
        }
        match (&schema.group, &group_id) {
            (Some(_), Some(g)) if g.len() != n => {
                return Err(Error::LengthMismatch(format!(
                    "group column has {} rows, labels have {n}",
                    g.len()
                )))
            }
            (None, Some(_)) => {
                return Err(Error::SchemaMismatch(
                    "group ids supplied but the schema declares no group column".into(),
                ))
            }
            (Some(g), None) => {
                return Err(Error::SchemaMismatch(format!("group column `{g}` has no data")))
            }
            _ => {}
        }
        Ok(Self {
            schema,
            columns,
            labels,
            group_id,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn group_id(&self) -> Option<&[String]> {
        self.group_id.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(ColumnData::missing_count).sum()
    }

    /// Row `i` as `(column name, cell)` pairs in schema order.
    pub fn row(&self, i: usize) -> Vec<(&str, Cell)> {
        self.schema
            .columns
            .iter()
            .zip(&self.columns)
            .map(|(s, c)| (s.name.as_str(), c.cell(i)))
            .collect()
    }

    /// New dataset holding `rows` (in the given order, repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            group_id: self
                .group_id
                .as_ref()
                .map(|g| rows.iter().map(|&r| g[r].clone()).collect()),
        }
    }

    /// Reads delimiter-separated text with a header row.
    pub fn from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter as u8)
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let header_pos: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        if header_pos.len() != headers.len() {
            return Err(Error::SchemaMismatch("duplicate header names".into()));
        }

        let expected: Vec<&str> = schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .chain(std::iter::once(schema.label.as_str()))
            .chain(schema.group.as_deref())
            .collect();
        for name in &expected {
            if !header_pos.contains_key(name) {
                return Err(Error::SchemaMismatch(format!("column `{name}` missing from header")));
            }
        }
        for h in headers.iter() {
            if !expected.contains(&h.trim()) {
                return Err(Error::SchemaMismatch(format!(
                    "header column `{}` is not declared in the schema",
                    h.trim()
                )));
            }
        }

        let feature_pos: Vec<usize> = schema.columns.iter().map(|c| header_pos[c.name.as_str()]).collect();
        let label_pos = header_pos[schema.label.as_str()];
        let group_pos = schema.group.as_deref().map(|g| header_pos[g]);

        let mut columns: Vec<ColumnData> = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => ColumnData::Continuous(Vec::new()),
                ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
            })
            .collect();
        let mut labels = Vec::new();
        let mut groups = group_pos.map(|_| Vec::new());

        let is_missing = |s: &str| s.is_empty() || schema.missing_token.as_deref() == Some(s);

        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            for ((col, spec), &pos) in columns.iter_mut().zip(&schema.columns).zip(&feature_pos) {
                let raw = record.get(pos).unwrap_or("").trim();
                if is_missing(raw) && !spec.allowed_missing {
                    return Err(Error::DisallowedMissing {
                        line,
                        column: spec.name.clone(),
                    });
                }
                match col {
                    ColumnData::Continuous(v) => {
                        if is_missing(raw) {
                            v.push(None);
                        } else {
                            let x: f64 = raw.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                                Error::Parse {
                                    line,
                                    column: spec.name.clone(),
                                    value: raw.to_string(),
                                    expected: "a finite number",
                                }
                            })?;
                            v.push(Some(x));
                        }
                    }
                    ColumnData::Categorical(v) => {
                        if is_missing(raw) {
                            v.push(None);
                        } else {
                            let code: i64 = raw.parse().map_err(|_| Error::Parse {
                                line,
                                column: spec.name.clone(),
                                value: raw.to_string(),
                                expected: "an integer category code",
                            })?;
                            v.push(Some(code));
                        }
                    }
                }
            }
            let raw_label = record.get(label_pos).unwrap_or("").trim();
            labels.push(match raw_label {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::LabelDomain {
                        line,
                        value: other.to_string(),
                    })
                }
            });
            if let (Some(g), Some(pos)) = (groups.as_mut(), group_pos) {
                g.push(record.get(pos).unwrap_or("").trim().to_string());
            }
        }
        Dataset::new(schema.clone(), columns, labels, groups)
    }

    /// Writes the dataset in the same format [`load_csv`] reads.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(self.schema.delimiter as u8)
            .from_writer(writer);
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.schema.label);
        if let Some(g) = &self.schema.group {
            header.push(g);
        }
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            for col in &self.columns {
                record.push(match col.cell(i) {
                    Cell::Num(x) => x.to_string(),
                    Cell::Cat(c) => c.to_string(),
                    Cell::Missing => String::new(),
                });
            }
            record.push(self.labels[i].to_string());
            if let Some(g) = &self.group_id {
                record.push(g[i].clone());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Loads a delimiter-separated file against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_reader(std::io::BufReader::new(file), schema)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    GreaterThan,
    LessThan,
    Negative,
}

/// A row-dropping rule: rows whose `column` satisfies the predicate are removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlausibilityRule {
    pub column: String,
    pub predicate: Predicate,
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl PlausibilityRule {
    pub fn greater_than(column: impl Into<String>, threshold: f64) -> Self {
        Self {
            column: column.into(),
            predicate: Predicate::GreaterThan,
            threshold: Some(threshold),
        }
    }

    pub fn less_than(column: impl Into<String>, threshold: f64) -> Self {
        Self {
            column: column.into(),
            predicate: Predicate::LessThan,
            threshold: Some(threshold),
        }
    }

    pub fn negative(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            predicate: Predicate::Negative,
            threshold: None,
        }
    }

    fn threshold(&self) -> Result<f64> {
        match (self.predicate, self.threshold) {
            (Predicate::Negative, _) => Ok(0.0),
            (_, Some(t)) if t.is_finite() => Ok(t),
            _ => Err(Error::InvalidRule(format!(
                "rule on `{}` needs a finite threshold",
                self.column
            ))),
        }
    }

    /// Whether an observed value violates the rule.
    pub fn violated_by(&self, value: f64) -> Result<bool> {
        let t = self.threshold()?;
        Ok(match self.predicate {
            Predicate::GreaterThan => value > t,
            Predicate::LessThan => value < t,
            Predicate::Negative => value < 0.0,
        })
    }

    pub fn describe(&self) -> String {
        match self.predicate {
            Predicate::GreaterThan => format!("{} > {}", self.column, self.threshold.unwrap_or(f64::NAN)),
            Predicate::LessThan => format!("{} < {}", self.column, self.threshold.unwrap_or(f64::NAN)),
            Predicate::Negative => format!("{} < 0", self.column),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleDrops {
    pub rule: String,
    /// Row indices (in the input dataset) violating this rule. A row violating
    /// several rules is listed under each of them.
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterReport {
    pub rows_before: usize,
    pub rows_after: usize,
    pub per_rule: Vec<RuleDrops>,
}

/// Drops every row violating at least one rule. Missing cells never trigger a rule.
pub fn apply_filters(d: &Dataset, rules: &[PlausibilityRule]) -> Result<(Dataset, FilterReport)> {
    let mut drop = vec![false; d.n_rows()];
    let mut per_rule = Vec::with_capacity(rules.len());
    for rule in rules {
        let col = d
            .column(&rule.column)
            .ok_or_else(|| Error::UnknownColumn(rule.column.clone()))?;
        rule.threshold()?;
        let mut rows = Vec::new();
        for i in 0..d.n_rows() {
            let value = match col.cell(i) {
                Cell::Num(x) => x,
                Cell::Cat(c) => c as f64,
                Cell::Missing => continue,
            };
            if rule.violated_by(value)? {
                rows.push(i);
                drop[i] = true;
            }
        }
        per_rule.push(RuleDrops {
            rule: rule.describe(),
            rows,
        });
    }
    let keep: Vec<usize> = (0..d.n_rows()).filter(|&i| !drop[i]).collect();
    let filtered = d.select_rows(&keep);
    let report = FilterReport {
        rows_before: d.n_rows(),
        rows_after: filtered.n_rows(),
        per_rule,
    };
    Ok((filtered, report))
}

/// Mean of the observed values of a continuous column.
pub fn observed_mean(values: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean imputation for continuous columns, sentinel code for categorical ones.
pub fn impute(d: &Dataset) -> Result<Dataset> {
    let mut columns = Vec::with_capacity(d.columns.len());
    for (col, spec) in d.columns.iter().zip(&d.schema.columns) {
        columns.push(match col {
            ColumnData::Continuous(v) => {
                if v.iter().all(Option::is_some) {
                    col.clone()
                } else {
                    let mean = observed_mean(v).ok_or_else(|| Error::AllMissing(spec.name.clone()))?;
                    ColumnData::Continuous(v.iter().map(|x| Some(x.unwrap_or(mean))).collect())
                }
            }
            ColumnData::Categorical(v) => ColumnData::Categorical(
                v.iter().map(|x| Some(x.unwrap_or(SENTINEL_CATEGORY))).collect(),
            ),
        });
    }
    Ok(Dataset {
        schema: d.schema.clone(),
        columns,
        labels: d.labels.clone(),
        group_id: d.group_id.clone(),
    })
}

/// Discretization of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBins {
    Continuous {
        /// Strictly increasing cut points; `cuts.len() + 1` bins.
        cuts: Vec<f64>,
        /// Observed training range, used for plotting and axis scaling.
        min: f64,
        max: f64,
        /// Training mean; a missing value at prediction time is treated as this.
        mean: f64,
    },
    Categorical {
        /// Observed category codes in ascending order; bin `i` holds
        /// `categories[i]` and bin `categories.len()` is the sentinel bin.
        categories: Vec<i64>,
    },
}

impl FeatureBins {
    pub fn n_bins(&self) -> usize {
        match self {
            FeatureBins::Continuous { cuts, .. } => cuts.len() + 1,
            FeatureBins::Categorical { categories } => categories.len() + 1,
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            FeatureBins::Continuous { .. } => ColumnKind::Continuous,
            FeatureBins::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    /// Index of the sentinel bin of a categorical feature.
    pub fn sentinel_bin(&self) -> Option<usize> {
        match self {
            FeatureBins::Continuous { .. } => None,
            FeatureBins::Categorical { categories } => Some(categories.len()),
        }
    }

    /// Bin of a continuous value under the half-open convention.
    pub fn bin_of_value(cuts: &[f64], v: f64) -> usize {
        cuts.partition_point(|&c| c < v)
    }

    pub fn bin_of_code(categories: &[i64], code: i64) -> usize {
        categories.binary_search(&code).unwrap_or(categories.len())
    }

    /// Bin of an arbitrary cell. Unseen categories and missing categorical
    /// cells go to the sentinel bin; missing continuous cells use the
    /// training mean.
    pub fn bin_of(&self, cell: Cell) -> usize {
        match (self, cell) {
            (FeatureBins::Continuous { cuts, .. }, Cell::Num(v)) => Self::bin_of_value(cuts, v),
            (FeatureBins::Continuous { cuts, mean, .. }, Cell::Missing) => Self::bin_of_value(cuts, *mean),
            (FeatureBins::Continuous { cuts, .. }, Cell::Cat(c)) => Self::bin_of_value(cuts, c as f64),
            (FeatureBins::Categorical { categories }, Cell::Cat(c)) => Self::bin_of_code(categories, c),
            (FeatureBins::Categorical { categories }, Cell::Num(v)) => {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    Self::bin_of_code(categories, v as i64)
                } else {
                    categories.len()
                }
            }
            (FeatureBins::Categorical { categories }, Cell::Missing) => categories.len(),
        }
    }

    /// Human-readable bounds of bin `i`: `(lower, upper)` for continuous
    /// features (bins are `(lower, upper]`), the category code otherwise.
    pub fn describe_bin(&self, i: usize) -> BinLabel {
        match self {
            FeatureBins::Continuous { cuts, .. } => BinLabel::Range {
                lower: if i == 0 { f64::NEG_INFINITY } else { cuts[i - 1] },
                upper: if i == cuts.len() { f64::INFINITY } else { cuts[i] },
            },
            FeatureBins::Categorical { categories } => match categories.get(i) {
                Some(&c) => BinLabel::Category(c),
                None => BinLabel::Sentinel,
            },
        }
    }

    /// Finite extent of bin `i` for plotting: edge bins are closed off at
    /// the observed training range.
    pub fn bin_extent(&self, i: usize) -> Option<(f64, f64)> {
        match self {
            FeatureBins::Continuous { cuts, min, max, .. } => {
                let lo = if i == 0 { *min } else { cuts[i - 1] };
                let hi = if i == cuts.len() { *max } else { cuts[i] };
                Some((lo, hi.max(lo)))
            }
            FeatureBins::Categorical { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinLabel {
    Range { lower: f64, upper: f64 },
    Category(i64),
    Sentinel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinning {
    pub name: String,
    pub bins: FeatureBins,
    /// Training rows per bin.
    pub counts: Vec<u64>,
}

/// Per-feature discretization built once from the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMap {
    pub features: Vec<FeatureBinning>,
}

impl BinMap {
    pub fn feature(&self, name: &str) -> Option<&FeatureBinning> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// Linear-interpolation quantile of sorted data (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Equal-frequency cut points: quantiles at `k / max_bins` for
/// `k = 1..max_bins`, duplicates collapsed. A cut is also dropped when no
/// value falls between it and the previous cut, so every bin is occupied.
pub fn quantile_cuts(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    let mut cuts: Vec<f64> = Vec::with_capacity(max_bins.saturating_sub(1));
    for k in 1..max_bins {
        let c = quantile_sorted(&sorted, k as f64 / max_bins as f64);
        if c >= max {
            break;
        }
        let prev = cuts.last().copied().unwrap_or(f64::NEG_INFINITY);
        // occupied iff some value v satisfies prev < v <= c
        let first_above_prev = sorted.partition_point(|&v| v <= prev);
        if c > prev && sorted[first_above_prev] <= c {
            cuts.push(c);
        }
    }
    cuts
}

pub fn build_bins(d: &Dataset, max_bins: usize) -> Result<BinMap> {
    if max_bins < 2 {
        return Err(Error::InvalidArgument(format!("max_bins must be at least 2, got {max_bins}")));
    }
    if max_bins > MAX_BINS_LIMIT {
        return Err(Error::InvalidArgument(format!("max_bins must be at most {MAX_BINS_LIMIT}")));
    }
    if d.n_rows() == 0 {
        return Err(Error::Empty("cannot build bins from an empty dataset".into()));
    }
    let mut features = Vec::with_capacity(d.columns.len());
    for (col, spec) in d.columns.iter().zip(&d.schema.columns) {
        let (bins, counts) = match col {
            ColumnData::Continuous(v) => {
                let values: Vec<f64> = v
                    .iter()
                    .map(|x| x.ok_or_else(|| Error::NotImputed(spec.name.clone())))
                    .collect::<Result<_>>()?;
                let cuts = quantile_cuts(&values, max_bins);
                let mut counts = vec![0u64; cuts.len() + 1];
                for &x in &values {
                    counts[FeatureBins::bin_of_value(&cuts, x)] += 1;
                }
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                (FeatureBins::Continuous { cuts, min, max, mean }, counts)
            }
            ColumnData::Categorical(v) => {
                let mut tally: BTreeMap<i64, u64> = BTreeMap::new();
                for x in v {
                    let code = x.ok_or_else(|| Error::NotImputed(spec.name.clone()))?;
                    *tally.entry(code).or_default() += 1;
                }
                let sentinel = tally.remove(&SENTINEL_CATEGORY).unwrap_or(0);
                if tally.len() + 1 > MAX_BINS_LIMIT {
                    return Err(Error::InvalidArgument(format!(
                        "column `{}` has too many categories",
                        spec.name
                    )));
                }
                let categories: Vec<i64> = tally.keys().copied().collect();
                let mut counts: Vec<u64> = tally.values().copied().collect();
                counts.push(sentinel);
                (FeatureBins::Categorical { categories }, counts)
            }
        };
        features.push(FeatureBinning {
            name: spec.name.clone(),
            bins,
            counts,
        });
    }
    Ok(BinMap { features })
}

/// Integer bin indices for every feature of a [`BinMap`], column-major.
#[derive(Clone, Debug)]
pub struct BinnedDataset {
    pub binmap: BinMap,
    pub columns: Vec<Vec<u16>>,
    pub labels: Vec<u8>,
}

impl BinnedDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.binmap.features[feature].bins.n_bins()
    }

    pub fn name(&self, feature: usize) -> &str {
        &self.binmap.features[feature].name
    }
}

/// Maps every cell to its bin. Columns are matched to the bin map by name.
pub fn discretize(d: &Dataset, b: &BinMap) -> Result<BinnedDataset> {
    let mut columns = Vec::with_capacity(b.features.len());
    for feature in &b.features {
        let col = d
            .column(&feature.name)
            .ok_or_else(|| Error::SchemaMismatch(format!("dataset lacks feature `{}`", feature.name)))?;
        let binned: Vec<u16> = (0..d.n_rows())
            .map(|i| feature.bins.bin_of(col.cell(i)) as u16)
            .collect();
        columns.push(binned);
    }
    Ok(BinnedDataset {
        binmap: b.clone(),
        columns,
        labels: d.labels.clone(),
    })
}
