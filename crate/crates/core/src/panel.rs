//! Panel data model: product-week rows, the historical/future split and the
//! per-week coupling groups that carry category totals.
//!
//! Rows are kept sorted by `(week, product_id)`. The first `m` rows carry
//! observed sales (historical region); the remaining `n - m` rows are future
//! rows whose weeks carry a category total supplied as domain knowledge.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct PanelRecord<T> {
    pub product_id: String,
    pub week: u32,
    pub features: Vec<T>,
    /// Present iff the row is historical.
    pub actual_sales: Option<T>,
}

/// All rows of one week, coupled through the week's category total.
#[derive(Clone, Debug, PartialEq)]
pub struct WeekGroup<T> {
    pub week: u32,
    pub members: Vec<usize>,
    pub count: usize,
    /// Sum of member actuals for historical weeks, the supplied total otherwise.
    pub category_total: T,
    pub is_future: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset<T> {
    records: Vec<PanelRecord<T>>,
    m: usize,
    groups: Vec<WeekGroup<T>>,
    row_group: Vec<usize>,
    feature_names: Vec<String>,
}

/// Column names used when reading a panel CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanelSchema {
    pub product: String,
    pub week: String,
    pub target: String,
    pub category_total: String,
    /// Optional category column; must be constant when present.
    pub category: String,
    /// Feature columns; `None` takes every remaining column in header order.
    pub features: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            product: "product_id".into(),
            week: "week".into(),
            target: "sales".into(),
            category_total: "category_total".into(),
            category: "category".into(),
            features: None,
        }
    }
}

impl<T: Scalar> PanelDataset<T> {
    /// Builds a dataset from unsorted records. `m` is inferred from which rows
    /// carry actuals; `future_totals` supplies the category total of every
    /// future week.
    pub fn new(
        mut records: Vec<PanelRecord<T>>,
        feature_names: Vec<String>,
        future_totals: &BTreeMap<u32, T>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        let dim = feature_names.len();
        let mut seen = HashSet::new();
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::Validation(format!(
                    "row ({}, week {}) has {} features, expected {dim}",
                    r.product_id,
                    r.week,
                    r.features.len()
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite feature in row ({}, week {})",
                    r.product_id, r.week
                )));
            }
            if let Some(s) = r.actual_sales {
                if !s.is_finite() || s < T::zero() {
                    return Err(Error::Validation(format!(
                        "sales must be finite and non-negative, got {s} for ({}, week {})",
                        r.product_id, r.week
                    )));
                }
            }
            if !seen.insert((r.week, r.product_id.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate row for product {} in week {}",
                    r.product_id, r.week
                )));
            }
        }
        drop(seen);
        records.sort_by(|a, b| a.week.cmp(&b.week).then_with(|| a.product_id.cmp(&b.product_id)));

        let m = records.iter().take_while(|r| r.actual_sales.is_some()).count();
        if let Some(late) = records[m..].iter().find(|r| r.actual_sales.is_some()) {
            return Err(Error::Ordering(format!(
                "historical row ({}, week {}) follows a future row; history must be a week-contiguous prefix",
                late.product_id, late.week
            )));
        }
        if m == 0 {
            return Err(Error::Validation("dataset has no historical rows".into()));
        }

        let groups = build_week_groups(&records, m, future_totals)?;
        let mut row_group = vec![0; records.len()];
        for (g, group) in groups.iter().enumerate() {
            for &i in &group.members {
                row_group[i] = g;
            }
        }
        Ok(Self {
            records,
            m,
            groups,
            row_group,
            feature_names,
        })
    }

    pub fn records(&self) -> &[PanelRecord<T>] {
        &self.records
    }

    /// Number of historical rows.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn groups(&self) -> &[WeekGroup<T>] {
        &self.groups
    }

    pub fn future_groups(&self) -> impl Iterator<Item = &WeekGroup<T>> {
        self.groups.iter().filter(|g| g.is_future)
    }

    pub fn historical_groups(&self) -> impl Iterator<Item = &WeekGroup<T>> {
        self.groups.iter().filter(|g| !g.is_future)
    }

    /// Index into [`groups`](Self::groups) of the week containing `row`.
    pub fn group_of(&self, row: usize) -> usize {
        self.row_group[row]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Observed sales of the historical rows, in row order.
    pub fn actuals(&self) -> Vec<T> {
        self.records[..self.m]
            .iter()
            .map(|r| r.actual_sales.expect("historical row carries sales"))
            .collect()
    }

    pub fn feature_matrix(&self) -> FeatureMatrix<T> {
        let data: Vec<T> = self
            .records
            .iter()
            .flat_map(|r| r.features.iter().copied())
            .collect();
        FeatureMatrix::new(self.records.len(), self.feature_count(), data)
            .expect("dataset features validated on construction")
    }

    /// Category totals of the future weeks, keyed by week.
    pub fn future_totals(&self) -> BTreeMap<u32, T> {
        self.future_groups()
            .map(|g| (g.week, g.category_total))
            .collect()
    }

    /// Copy of the dataset with every row's features replaced by `features`.
    pub fn with_features(&self, features: &FeatureMatrix<T>, names: Vec<String>) -> Result<Self> {
        if features.rows() != self.n() || features.cols() != names.len() {
            return Err(Error::Validation(format!(
                "replacement features are {}x{}, dataset needs {} rows and {} named columns",
                features.rows(),
                features.cols(),
                self.n(),
                names.len()
            )));
        }
        let mut out = self.clone();
        for (i, r) in out.records.iter_mut().enumerate() {
            r.features = features.row(i).to_vec();
        }
        out.feature_names = names;
        Ok(out)
    }
}

/// Groups sorted records by week. Historical totals are member sums in row
/// order; future totals are copied from `future_totals`.
pub fn build_week_groups<T: Scalar>(
    records: &[PanelRecord<T>],
    m: usize,
    future_totals: &BTreeMap<u32, T>,
) -> Result<Vec<WeekGroup<T>>> {
    if records.windows(2).any(|w| w[0].week > w[1].week) {
        return Err(Error::Ordering("records are not sorted by week".into()));
    }
    let mut groups: Vec<WeekGroup<T>> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let week = records[start].week;
        let end = start + records[start..].iter().take_while(|r| r.week == week).count();
        if start < m && end > m {
            return Err(Error::Ordering(format!(
                "week {week} mixes rows with and without sales"
            )));
        }
        let members: Vec<usize> = (start..end).collect();
        let is_future = start >= m;
        let category_total = if is_future {
            let total = *future_totals.get(&week).ok_or_else(|| {
                Error::ConstraintData(format!("future week {week} has no category total"))
            })?;
            if !total.is_finite() || total < T::zero() {
                return Err(Error::ConstraintData(format!(
                    "future week {week} has invalid category total {total}"
                )));
            }
            total
        } else {
            let mut sum = T::zero();
            for r in &records[start..end] {
                sum = sum + r.actual_sales.ok_or_else(|| {
                    Error::Validation(format!("historical row in week {week} lacks sales"))
                })?;
            }
            sum
        };
        groups.push(WeekGroup {
            week,
            count: members.len(),
            members,
            category_total,
            is_future,
        });
        start = end;
    }
    Ok(groups)
}

struct RawRow<T> {
    record: PanelRecord<T>,
    total: Option<T>,
    line: u64,
}

struct Columns {
    product: usize,
    week: usize,
    target: usize,
    total: usize,
    category: Option<usize>,
    features: Vec<usize>,
    feature_names: Vec<String>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, schema: &PanelSchema) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
        };
        let product = find(&schema.product)?;
        let week = find(&schema.week)?;
        let target = find(&schema.target)?;
        let total = find(&schema.category_total)?;
        let category = headers.iter().position(|h| h == schema.category);
        let feature_names: Vec<String> = match &schema.features {
            Some(names) => names.clone(),
            None => headers
                .iter()
                .enumerate()
                .filter(|(i, _)| ![product, week, target, total].contains(i) && Some(*i) != category)
                .map(|(_, h)| h.to_string())
                .collect(),
        };
        let features = feature_names
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            product,
            week,
            target,
            total,
            category,
            features,
            feature_names,
        })
    }
}

fn parse_real<T: Scalar>(field: &str, what: &str, line: u64) -> Result<Option<T>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<T>()
        .map(Some)
        .map_err(|_| Error::Validation(format!("line {line}: cannot parse {what} '{field}'")))
}

fn read_rows<T: Scalar, R: Read>(
    reader: R,
    schema: &PanelSchema,
    rows: &mut Vec<RawRow<T>>,
    category: &mut Option<String>,
) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let cols = Columns::resolve(&headers, schema)?;
    for result in rdr.records() {
        let rec = result.map_err(|e| Error::Validation(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("");
        if let Some(ci) = cols.category {
            let c = get(ci).trim().to_string();
            match category {
                Some(prev) if *prev != c => {
                    return Err(Error::Validation(format!(
                        "line {line}: more than one category ('{prev}' and '{c}')"
                    )))
                }
                Some(_) => {}
                None => *category = Some(c),
            }
        }
        let week = get(cols.week)
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::Validation(format!("line {line}: bad week '{}'", get(cols.week))))?;
        let mut features = Vec::with_capacity(cols.features.len());
        for (&fi, name) in cols.features.iter().zip(&cols.feature_names) {
            let v: T = parse_real(get(fi), name, line)?
                .ok_or_else(|| Error::Validation(format!("line {line}: feature '{name}' is empty")))?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "line {line}: feature '{name}' is not finite"
                )));
            }
            features.push(v);
        }
        rows.push(RawRow {
            record: PanelRecord {
                product_id: get(cols.product).trim().to_string(),
                week,
                features,
                actual_sales: parse_real(get(cols.target), "sales", line)?,
            },
            total: parse_real(get(cols.total), "category_total", line)?,
            line,
        });
    }
    Ok(cols.feature_names)
}

fn assemble<T: Scalar>(rows: Vec<RawRow<T>>, feature_names: Vec<String>) -> Result<PanelDataset<T>> {
    let mut future_totals: BTreeMap<u32, T> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.record.actual_sales.is_none()) {
        let week = row.record.week;
        let total = row.total.ok_or_else(|| {
            Error::ConstraintData(format!(
                "line {}: future week {week} row has no category_total",
                row.line
            ))
        })?;
        if let Some(prev) = future_totals.insert(week, total) {
            if prev != total {
                return Err(Error::ConstraintData(format!(
                    "future week {week} has conflicting category totals {prev} and {total}"
                )));
            }
        }
    }
    PanelDataset::new(
        rows.into_iter().map(|r| r.record).collect(),
        feature_names,
        &future_totals,
    )
}

/// Reads a panel dataset from CSV text.
pub fn read_panel_csv<T: Scalar, R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let mut rows = Vec::new();
    let mut category = None;
    let names = read_rows(reader, schema, &mut rows, &mut category)?;
    assemble(rows, names)
}

pub fn load_panel_csv<T: Scalar>(path: &Path, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    load_panel_csvs(&[path], schema)
}

/// Loads and concatenates several panel CSV files sharing one feature set,
/// e.g. a history file and a future file.
pub fn load_panel_csvs<T: Scalar, P: AsRef<Path>>(paths: &[P], schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let mut rows = Vec::new();
    let mut category = None;
    let mut names: Option<Vec<String>> = None;
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(Error::io(path))?;
        let these = read_rows(file, schema, &mut rows, &mut category)?;
        match &names {
            Some(prev) if *prev != these => {
                return Err(Error::Schema(format!(
                    "{} has feature columns {these:?}, expected {prev:?}",
                    path.display()
                )))
            }
            Some(_) => {}
            None => names = Some(these),
        }
    }
    assemble(rows, names.unwrap_or_default())
}

/// Writes `rows` of the dataset (all rows when `None`) in the panel CSV layout.
/// Historical rows leave `category_total` empty.
pub fn write_panel_rows<T: Scalar, W: Write>(
    dataset: &PanelDataset<T>,
    rows: impl IntoIterator<Item = usize>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["product_id".to_string(), "week".into(), "sales".into(), "category_total".into()];
    header.extend(dataset.feature_names().iter().cloned());
    let persist = |e: csv::Error| Error::Persistence(format!("writing CSV: {e}"));
    w.write_record(&header).map_err(persist)?;
    for i in rows {
        let r = &dataset.records()[i];
        let group = &dataset.groups()[dataset.group_of(i)];
        let mut fields = vec![
            r.product_id.clone(),
            r.week.to_string(),
            r.actual_sales.map(|s| s.to_string()).unwrap_or_default(),
            if group.is_future {
                group.category_total.to_string()
            } else {
                String::new()
            },
        ];
        fields.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(persist)?;
    }
    w.flush().map_err(|e| Error::Persistence(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn write_panel_csv<T: Scalar>(dataset: &PanelDataset<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    write_panel_rows(dataset, 0..dataset.n(), std::io::BufWriter::new(file))
}
