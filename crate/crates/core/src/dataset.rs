//! Tabular datasets with mixed numeric and categorical columns.
//!
//! Features are stored row-major as `f64`. Categorical cells hold the integer
//! code of their label in the column's category list; codes follow
//! first-appearance order in the file.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Category labels, indexed by code. Empty for numeric columns.
    #[serde(default)]
    pub categories: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

/// Borrowed view of one record.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub id: u64,
    pub values: &'a [f64],
    pub target: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TabularDataset {
    schema: Vec<ColumnSchema>,
    values: Vec<f64>,
    n_rows: usize,
    target: Option<Vec<f64>>,
    row_ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl PartialEq for TabularDataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.n_rows == other.n_rows
            && self.row_ids == other.row_ids
            && bits(&self.values) == bits(&other.values)
            && self.target.as_deref().map(bits) == other.target.as_deref().map(bits)
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut seen = HashSet::new();
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(Error::InvalidSchema(format!("duplicate column `{}`", col.name)));
        }
        match col.kind {
            ColumnKind::Categorical if col.categories.is_empty() => {
                return Err(Error::InvalidSchema(format!(
                    "categorical column `{}` has no categories",
                    col.name
                )))
            }
            ColumnKind::Numeric if !col.categories.is_empty() => {
                return Err(Error::InvalidSchema(format!(
                    "numeric column `{}` lists categories",
                    col.name
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

impl TabularDataset {
    /// Builds a dataset from row-major values. Row ids default to `0..n` when
    /// `row_ids` is `None`.
    pub fn new(
        schema: Vec<ColumnSchema>,
        values: Vec<f64>,
        target: Option<Vec<f64>>,
        row_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        validate_schema(&schema)?;
        let d = schema.len();
        if d == 0 {
            if !values.is_empty() {
                return Err(Error::InvalidSchema("values without columns".into()));
            }
        } else if values.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values do not fill rows of width {d}",
                values.len()
            )));
        }
        let n_rows = match (d, &target, &row_ids) {
            (0, Some(t), _) => t.len(),
            (0, None, Some(ids)) => ids.len(),
            (0, None, None) => 0,
            _ => values.len() / d,
        };
        if let Some(t) = &target {
            if t.len() != n_rows {
                return Err(Error::InvalidArgument(format!(
                    "target has {} entries for {n_rows} rows",
                    t.len()
                )));
            }
        }
        let row_ids = row_ids.unwrap_or_else(|| (0..n_rows as u64).collect());
        if row_ids.len() != n_rows {
            return Err(Error::InvalidArgument(format!(
                "{} row ids for {n_rows} rows",
                row_ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(n_rows);
        for (pos, &id) in row_ids.iter().enumerate() {
            if index.insert(id, pos).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate row id {id}")));
            }
        }
        for (j, col) in schema.iter().enumerate() {
            for i in 0..n_rows {
                let v = values[i * d + j];
                match col.kind {
                    ColumnKind::Numeric if !v.is_finite() => {
                        return Err(Error::BadNumeric {
                            row: i,
                            column: col.name.clone(),
                            value: v.to_string(),
                        })
                    }
                    ColumnKind::Categorical
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= col.categories.len() =>
                    {
                        return Err(Error::InvalidSchema(format!(
                            "code {v} out of range in column `{}` at row {i}",
                            col.name
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(TabularDataset {
            schema,
            values,
            n_rows,
            target,
            row_ids,
            index,
        })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn features(&self, pos: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[pos * d..(pos + 1) * d]
    }

    pub fn value(&self, pos: usize, col: usize) -> f64 {
        self.values[pos * self.n_cols() + col]
    }

    pub fn row(&self, pos: usize) -> Row<'_> {
        Row {
            id: self.row_ids[pos],
            values: self.features(pos),
            target: self.target.as_ref().map(|t| t[pos]),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.target.as_deref()
    }

    pub fn require_target(&self) -> Result<&[f64]> {
        self.target.as_deref().ok_or(Error::NoTarget)
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn is_fully_numeric(&self) -> bool {
        self.schema.iter().all(ColumnSchema::is_numeric)
    }

    /// Rows at the given positions, in the given order.
    pub fn subset(&self, positions: &[usize]) -> TabularDataset {
        let d = self.n_cols();
        let mut values = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            values.extend_from_slice(self.features(p));
        }
        let target = self
            .target
            .as_ref()
            .map(|t| positions.iter().map(|&p| t[p]).collect());
        let row_ids: Vec<u64> = positions.iter().map(|&p| self.row_ids[p]).collect();
        let index = row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        TabularDataset {
            schema: self.schema.clone(),
            values,
            n_rows: positions.len(),
            target,
            row_ids,
            index,
        }
    }

    /// Rows with the given ids, in the given order.
    pub fn select_ids(&self, ids: &[u64]) -> Result<TabularDataset> {
        let positions = ids
            .iter()
            .map(|&id| self.position_of(id).ok_or(Error::UnknownRowId(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&positions))
    }

    pub fn without_target(&self) -> TabularDataset {
        let mut out = self.clone();
        out.target = None;
        out
    }

    pub fn with_target(&self, target: Vec<f64>) -> Result<TabularDataset> {
        if target.len() != self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "target has {} entries for {} rows",
                target.len(),
                self.n_rows
            )));
        }
        let mut out = self.clone();
        out.target = Some(target);
        Ok(out)
    }

    /// Same column names and kinds. Category lists may differ in length.
    pub fn check_compatible(&self, other: &[ColumnSchema]) -> Result<()> {
        if self.schema.len() != other.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns vs {}",
                self.schema.len(),
                other.len()
            )));
        }
        for (a, b) in self.schema.iter().zip(other) {
            if a.name != b.name || a.kind != b.kind {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` ({:?}) vs `{}` ({:?})",
                    a.name, a.kind, b.name, b.kind
                )));
            }
        }
        Ok(())
    }

    /// Replaces the schema with a compatible one whose category lists extend
    /// the current ones (codes stay valid).
    pub fn extend_schema(&self, schema: &[ColumnSchema]) -> Result<TabularDataset> {
        self.check_compatible(schema)?;
        for (a, b) in self.schema.iter().zip(schema) {
            if !b.categories.starts_with(&a.categories) {
                return Err(Error::SchemaMismatch(format!(
                    "categories of `{}` are not an extension",
                    a.name
                )));
            }
        }
        let mut out = self.clone();
        out.schema = schema.to_vec();
        Ok(out)
    }

    /// Writes the dataset as CSV with a header; categorical codes are written
    /// back as their labels and the target (if any) as the last column.
    pub fn write_csv(&self, path: &Path, target_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.schema.iter().map(|c| c.name.as_str()).collect();
        if self.target.is_some() {
            header.push(target_name);
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows {
            let mut rec: Vec<String> = self
                .schema
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let v = self.value(i, j);
                    match col.kind {
                        ColumnKind::Numeric => format!("{v:?}"),
                        ColumnKind::Categorical => col.categories[v as usize].clone(),
                    }
                })
                .collect();
            if let Some(t) = &self.target {
                rec.push(format!("{:?}", t[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a CSV file with a header row.
///
/// Columns covered by `schema_hint` keep the hinted kind; hinted categorical
/// columns keep their category order and append unseen labels. Other columns
/// are numeric when every cell parses as a finite real, categorical otherwise.
pub fn load_csv(
    path: &Path,
    schema_hint: Option<&[ColumnSchema]>,
    target_column: &str,
) -> Result<TabularDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let width = header.len();
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::NonRectangular {
                row: i,
                found: rec.len(),
                expected: width,
            });
        }
        cells.push(rec.iter().map(str::to_string).collect());
    }
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTargetColumn(target_column.to_string()))?;
    if cells.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if cell.trim().is_empty() {
                return Err(Error::MissingValue {
                    row: i,
                    column: header[j].clone(),
                });
            }
        }
    }

    let n = cells.len();
    let target = cells
        .iter()
        .enumerate()
        .map(|(i, row)| {
            parse_finite(&row[target_idx]).ok_or_else(|| Error::BadNumeric {
                row: i,
                column: target_column.to_string(),
                value: row[target_idx].clone(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;

    let feature_cols: Vec<usize> = (0..width).filter(|&j| j != target_idx).collect();
    let mut schema = Vec::with_capacity(feature_cols.len());
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(feature_cols.len());
    for &j in &feature_cols {
        let name = &header[j];
        let hint = schema_hint.and_then(|h| h.iter().find(|c| &c.name == name));
        let kind = match hint {
            Some(c) => c.kind,
            None => {
                // A column that parses everywhere (including NaN/inf) is numeric;
                // non-finite values are then reported rather than treated as labels.
                let all_parse = cells.iter().all(|r| r[j].trim().parse::<f64>().is_ok());
                if all_parse {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            }
        };
        match kind {
            ColumnKind::Numeric => {
                let col = cells
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        parse_finite(&r[j]).ok_or_else(|| Error::BadNumeric {
                            row: i,
                            column: name.clone(),
                            value: r[j].clone(),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                schema.push(ColumnSchema::numeric(name.clone()));
                columns.push(col);
            }
            ColumnKind::Categorical => {
                let mut categories: Vec<String> =
                    hint.map(|c| c.categories.clone()).unwrap_or_default();
                let mut lookup: HashMap<String, usize> = categories
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (c.clone(), k))
                    .collect();
                let col = cells
                    .iter()
                    .map(|r| {
                        let label = r[j].trim().to_string();
                        let next = categories.len();
                        let code = *lookup.entry(label.clone()).or_insert_with(|| {
                            categories.push(label);
                            next
                        });
                        code as f64
                    })
                    .collect();
                schema.push(ColumnSchema::categorical(name.clone(), categories));
                columns.push(col);
            }
        }
    }
    let d = schema.len();
    let mut values = vec![0.0; n * d];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * d + j] = v;
        }
    }
    TabularDataset::new(schema, values, Some(target), None)
}

/// Per-numeric-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `(column index, mean, std)` for every numeric column.
    pub columns: Vec<(usize, f64, f64)>,
}

impl Standardizer {
    pub fn fit(d: &TabularDataset) -> Standardizer {
        let n = d.n_rows().max(1) as f64;
        let columns = d
            .schema()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_numeric())
            .map(|(j, _)| {
                let mean = (0..d.n_rows()).map(|i| d.value(i, j)).sum::<f64>() / n;
                let var = (0..d.n_rows())
                    .map(|i| (d.value(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                (j, mean, var.sqrt())
            })
            .collect();
        Standardizer { columns }
    }

    fn map(&self, d: &TabularDataset, f: impl Fn(f64, f64, f64) -> f64) -> TabularDataset {
        let width = d.n_cols();
        let mut out = d.clone();
        for &(j, mean, std) in &self.columns {
            for i in 0..d.n_rows() {
                let v = &mut out.values[i * width + j];
                *v = f(*v, mean, std);
            }
        }
        out
    }

    pub fn transform(&self, d: &TabularDataset) -> TabularDataset {
        self.map(d, |v, mean, std| if std > 0.0 { (v - mean) / std } else { 0.0 })
    }

    pub fn inverse_transform(&self, d: &TabularDataset) -> TabularDataset {
        self.map(d, |v, mean, std| if std > 0.0 { v * std + mean } else { mean })
    }
}

pub fn standardize_fit_transform(d: &TabularDataset) -> (TabularDataset, Standardizer) {
    let s = Standardizer::fit(d);
    (s.transform(d), s)
}

/// Partition by a predicate on rows: `(matching, rest)`, both preserving ids.
pub fn split_domain(
    d: &TabularDataset,
    predicate: impl Fn(&Row<'_>) -> bool,
) -> (TabularDataset, TabularDataset) {
    let (yes, no): (Vec<usize>, Vec<usize>) = (0..d.n_rows()).partition(|&i| predicate(&d.row(i)));
    (d.subset(&yes), d.subset(&no))
}

/// Real-valued encoding for geometric methods: standardized numeric columns
/// followed by 0/1 indicators for every category of every categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    standardizer: Standardizer,
    schema: Vec<ColumnSchema>,
}

impl FeatureEncoder {
    pub fn fit(d: &TabularDataset) -> FeatureEncoder {
        FeatureEncoder {
            standardizer: Standardizer::fit(d),
            schema: d.schema().to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.schema
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numeric => 1,
                ColumnKind::Categorical => c.categories.len(),
            })
            .sum()
    }

    pub fn encode(&self, d: &TabularDataset) -> Result<DMatrix<f64>> {
        d.check_compatible(&self.schema)?;
        let z = self.standardizer.transform(d);
        let width = self.width();
        let mut out = DMatrix::zeros(d.n_rows(), width);
        let mut offset = 0;
        for (j, col) in self.schema.iter().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    for i in 0..d.n_rows() {
                        out[(i, offset)] = z.value(i, j);
                    }
                    offset += 1;
                }
                ColumnKind::Categorical => {
                    for i in 0..d.n_rows() {
                        let code = z.value(i, j) as usize;
                        // Labels unknown to the fitted schema get an all-zero block.
                        if code < col.categories.len() {
                            out[(i, offset + code)] = 1.0;
                        }
                    }
                    offset += col.categories.len();
                }
            }
        }
        Ok(out)
    }
}

pub const SYNTHETIC_NOISE_STD: f64 = 0.1;

/// Source task response.
pub fn synthetic_g(x: &[f64]) -> f64 {
    let x1 = x[0];
    let x2 = x.get(1).copied().unwrap_or(0.0);
    (2.0 * x1).sin() + x2 * x2
}

/// Component of the transfer response uncorrelated with [`synthetic_g`].
pub fn synthetic_h(x: &[f64]) -> f64 {
    let x1 = x[0];
    let x2 = x.get(1).copied().unwrap_or(0.0);
    (2.0 * x1).cos() - x2
}

/// Noise-free transfer response for correlation `rho`.
pub fn synthetic_transfer_response(x: &[f64], rho: f64) -> f64 {
    rho * synthetic_g(x) + (1.0 - rho * rho).max(0.0).sqrt() * synthetic_h(x)
}

/// Source and transfer datasets for a synthetic transfer task.
///
/// Source features are standard normal; transfer features are standard normal
/// shifted by `shift` in every coordinate. Both sets use columns `x0..` and
/// row ids starting at zero.
pub fn make_synthetic_transfer(
    n_source: usize,
    n_transfer: usize,
    dims: usize,
    target_correlation: f64,
    shift: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    if dims == 0 {
        return Err(Error::InvalidArgument("dims must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&target_correlation) || !(shift >= 0.0) {
        return Err(Error::InvalidArgument(
            "target_correlation must lie in [0, 1] and shift must be nonnegative".into(),
        ));
    }
    let schema: Vec<ColumnSchema> = (0..dims).map(|j| ColumnSchema::numeric(format!("x{j}"))).collect();
    let mut rng = rng::named_rng(seed, "synthetic");
    let mut draw = |n: usize, offset: f64, response: &dyn Fn(&[f64]) -> f64| {
        let mut values = Vec::with_capacity(n * dims);
        let mut target = Vec::with_capacity(n);
        for _ in 0..n {
            let start = values.len();
            for _ in 0..dims {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(z + offset);
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            target.push(response(&values[start..]) + SYNTHETIC_NOISE_STD * noise);
        }
        (values, target)
    };
    let (sv, st) = draw(n_source, 0.0, &synthetic_g);
    let (tv, tt) = draw(n_transfer, shift, &|x| {
        synthetic_transfer_response(x, target_correlation)
    });
    Ok((
        TabularDataset::new(schema.clone(), sv, Some(st), None)?,
        TabularDataset::new(schema, tv, Some(tt), None)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn numeric(values: &[f64]) -> TabularDataset {
        TabularDataset::new(vec![ColumnSchema::numeric("a")], values.to_vec(), None, None).unwrap()
    }

    #[test]
    fn load_mixed_csv() {
        let f = write_tmp("a,b,y\n1.5,red,1\n2.5,blue,2\n-1,red,3\n");
        let d = load_csv(f.path(), None, "y").unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.schema()[0].kind, ColumnKind::Numeric);
        assert_eq!(d.schema()[1].kind, ColumnKind::Categorical);
        assert_eq!(d.schema()[1].categories, vec!["red", "blue"]);
        assert_eq!(d.target().unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.features(2), &[-1.0, 0.0]);
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp("a,b,y\n");
        assert!(matches!(load_csv(f.path(), None, "y"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn mixed_cells_infer_categorical() {
        let f = write_tmp("c,y\n1.0,1\n2.0,2\nx,3\n");
        let d = load_csv(f.path(), None, "y").unwrap();
        assert_eq!(d.schema()[0].kind, ColumnKind::Categorical);
        assert_eq!(d.schema()[0].categories.len(), 3);
    }

    #[test]
    fn load_errors() {
        let f = write_tmp("a,y\n1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), None, "y"),
            Err(Error::NonRectangular { row: 1, .. })
        ));
        let f = write_tmp("a,y\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), None, "z"),
            Err(Error::MissingTargetColumn(_))
        ));
        let f = write_tmp("a,y\n1,2\nNaN,3\n");
        assert!(matches!(
            load_csv(f.path(), None, "y"),
            Err(Error::BadNumeric { row: 1, .. })
        ));
        let f = write_tmp("a,y\n1,2\n,3\n");
        assert!(matches!(
            load_csv(f.path(), None, "y"),
            Err(Error::MissingValue { row: 1, .. })
        ));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), None, "y"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn hint_extends_categories() {
        let hint = vec![
            ColumnSchema::categorical("b", vec!["blue".into(), "red".into()]),
        ];
        let f = write_tmp("b,y\nred,1\ngreen,2\n");
        let d = load_csv(f.path(), Some(&hint), "y").unwrap();
        assert_eq!(d.schema()[0].categories, vec!["blue", "red", "green"]);
        assert_eq!(d.features(0), &[1.0]);
        assert_eq!(d.features(1), &[2.0]);
    }

    #[test]
    fn csv_write_read_round_trip() {
        let f = write_tmp("a,b,y\n0.1,red,1\n2.5e-3,blue,2\n");
        let d = load_csv(f.path(), None, "y").unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(out.path(), "y").unwrap();
        let back = load_csv(out.path(), None, "y").unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn standardize_two_points() {
        let (z, s) = standardize_fit_transform(&numeric(&[2.0, 4.0]));
        assert_eq!(z.values(), &[-1.0, 1.0]);
        assert_eq!(s.columns, vec![(0, 3.0, 1.0)]);
    }

    #[test]
    fn standardize_constant_column() {
        let (z, _) = standardize_fit_transform(&numeric(&[5.0, 5.0, 5.0]));
        assert_eq!(z.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardize_is_idempotent_on_fixed_point() {
        let (z, _) = standardize_fit_transform(&numeric(&[1.0, 7.0, -3.0, 0.5]));
        let (zz, _) = standardize_fit_transform(&z);
        for (a, b) in z.values().iter().zip(zz.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn standardize_leaves_categoricals() {
        let schema = vec![
            ColumnSchema::numeric("a"),
            ColumnSchema::categorical("b", vec!["p".into(), "q".into()]),
        ];
        let d = TabularDataset::new(schema, vec![1.0, 1.0, 3.0, 0.0], None, None).unwrap();
        let (z, _) = standardize_fit_transform(&d);
        assert_eq!(z.value(0, 1), 1.0);
        assert_eq!(z.value(1, 1), 0.0);
    }

    proptest! {
        #[test]
        fn standardize_round_trip(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let d = numeric(&values);
            let (z, s) = standardize_fit_transform(&d);
            let n = values.len() as f64;
            let mean = z.values().iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let back = s.inverse_transform(&z);
            for (a, b) in values.iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            if s.columns[0].2 > 1e-6 {
                let sd = (z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn split_partitions_ids(n in 0usize..30, cut in 0u64..30) {
            let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let d = numeric(&values);
            let (a, b) = split_domain(&d, |r| r.id < cut);
            prop_assert_eq!(a.n_rows() + b.n_rows(), n);
            let mut ids: Vec<u64> = a.row_ids().iter().chain(b.row_ids()).copied().collect();
            prop_assert!(a.row_ids().iter().all(|id| !b.row_ids().contains(id)));
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_counts() {
        let d = numeric(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (a, b) = split_domain(&d, |r| r.id <= 3);
        assert_eq!((a.n_rows(), b.n_rows()), (4, 6));
        let (a, b) = split_domain(&d, |_| false);
        assert_eq!((a.n_rows(), b.n_rows()), (0, 10));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic_transfer(50, 40, 3, 0.7, 0.5, 9).unwrap();
        let b = make_synthetic_transfer(50, 40, 3, 0.7, 0.5, 9).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_transfer(50, 40, 3, 0.7, 0.5, 10).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn synthetic_shift_moves_transfer_mean() {
        let (s, t) = make_synthetic_transfer(4000, 4000, 2, 0.5, 2.0, 3).unwrap();
        let mean = |d: &TabularDataset| d.values().iter().sum::<f64>() / d.values().len() as f64;
        assert!(mean(&s).abs() < 0.05);
        assert!((mean(&t) - 2.0).abs() < 0.05);
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    // y on the source's own x against y' evaluated on the same x, noise included.
    fn paired_targets(rho: f64) -> (Vec<f64>, Vec<f64>) {
        let (s, _) = make_synthetic_transfer(10_000, 0, 3, rho, 0.0, 21).unwrap();
        let mut rng = rng::named_rng(21, "noise");
        let y = s.target().unwrap().to_vec();
        let yp = (0..s.n_rows())
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                synthetic_transfer_response(s.features(i), rho) + SYNTHETIC_NOISE_STD * e
            })
            .collect();
        (y, yp)
    }

    #[test]
    fn synthetic_correlation_one() {
        let (y, yp) = paired_targets(1.0);
        assert!(corr(&y, &yp) > 0.95);
    }

    #[test]
    fn synthetic_correlation_zero() {
        let (y, yp) = paired_targets(0.0);
        assert!(corr(&y, &yp).abs() < 0.05);
    }

    #[test]
    fn encoder_one_hot() {
        let schema = vec![
            ColumnSchema::numeric("a"),
            ColumnSchema::categorical("b", vec!["p".into(), "q".into(), "r".into()]),
        ];
        let d = TabularDataset::new(schema, vec![1.0, 2.0, 3.0, 0.0], None, None).unwrap();
        let enc = FeatureEncoder::fit(&d);
        let m = enc.encode(&d).unwrap();
        assert_eq!(m.ncols(), 4);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn subset_and_select_preserve_ids() {
        let d = numeric(&[10.0, 11.0, 12.0]);
        let s = d.select_ids(&[2, 0]).unwrap();
        assert_eq!(s.row_ids(), &[2, 0]);
        assert_eq!(s.values(), &[12.0, 10.0]);
        assert!(matches!(d.select_ids(&[7]), Err(Error::UnknownRowId(7))));
    }
}
