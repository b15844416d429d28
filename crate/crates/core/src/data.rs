//! Tabular ingestion: schemas, CSV loading, missing-value fill,
//! standardization, one-hot encoding and deterministic splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Input,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

/// Typed description of the table's columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Schema> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(json: &str) -> Result<Schema> {
        let schema: Schema = serde_json::from_str(json)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Schema> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {:?}", c.name)));
            }
        }
        if !self.columns.iter().any(|c| c.role == ColumnRole::Input) {
            return Err(Error::Schema("schema needs at least one input column".into()));
        }
        let text_targets = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target && c.kind == ColumnKind::Text)
            .count();
        if text_targets != 1 {
            return Err(Error::Schema(format!(
                "schema needs exactly one text target column, found {text_targets}"
            )));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<(usize, &ColumnSchema)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    /// The single textual target column.
    pub fn text_target(&self) -> &ColumnSchema {
        self.columns
            .iter()
            .find(|c| c.role == ColumnRole::Target && c.kind == ColumnKind::Text)
            .expect("validated schema has a text target")
    }

    /// Numeric/categorical target columns, used as auxiliary heads in
    /// multi-task mode.
    pub fn aux_targets(&self) -> Vec<&ColumnSchema> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target && c.kind != ColumnKind::Text)
            .collect()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns.iter().filter(|c| c.role == ColumnRole::Input)
    }

    pub fn input_names(&self, kind: ColumnKind) -> Vec<String> {
        self.inputs()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f32),
    Category(String),
    Text(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f32> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Category(s) | Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

pub const MISSING_CATEGORY: &str = "missing";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericStat {
    pub mean: f32,
    pub std: f32,
}

/// Fill and normalization state fitted on the training split: per-numeric
/// mean/std (population) and per-categorical category lists with the
/// reserved "missing" category at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TableStats {
    pub numeric: BTreeMap<String, NumericStat>,
    pub categories: BTreeMap<String, Vec<String>>,
}

impl TableStats {
    /// Fit on (the training split of) `ds`: means/stds over observed numeric
    /// values, sorted category lists over observed categories.
    pub fn fit(ds: &Dataset) -> Result<TableStats> {
        let mut stats = TableStats::default();
        for (ci, col) in ds.schema.columns.iter().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    let mut n = 0u64;
                    let mut sum = 0.0f64;
                    let mut sumsq = 0.0f64;
                    for row in &ds.rows {
                        if let Cell::Number(v) = row[ci] {
                            n += 1;
                            sum += v as f64;
                            sumsq += (v as f64) * (v as f64);
                        }
                    }
                    if n == 0 {
                        return Err(Error::NoObservedNumeric(col.name.clone()));
                    }
                    let mean = sum / n as f64;
                    let var = (sumsq / n as f64 - mean * mean).max(0.0);
                    stats.numeric.insert(
                        col.name.clone(),
                        NumericStat {
                            mean: mean as f32,
                            std: var.sqrt() as f32,
                        },
                    );
                }
                ColumnKind::Categorical => {
                    let mut observed: BTreeSet<String> = BTreeSet::new();
                    for row in &ds.rows {
                        if let Cell::Category(c) = &row[ci] {
                            if c != MISSING_CATEGORY {
                                observed.insert(c.clone());
                            }
                        }
                    }
                    let mut cats = vec![MISSING_CATEGORY.to_string()];
                    cats.extend(observed);
                    stats.categories.insert(col.name.clone(), cats);
                }
                ColumnKind::Text => {}
            }
        }
        Ok(stats)
    }

    pub fn numeric(&self, column: &str) -> Result<NumericStat> {
        self.numeric
            .get(column)
            .copied()
            .ok_or_else(|| Error::Schema(format!("no numeric stats for column {column:?}")))
    }

    pub fn categories(&self, column: &str) -> Result<&[String]> {
        self.categories
            .get(column)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("no category map for column {column:?}")))
    }

    /// Dense category index; missing and unseen values map to index 0.
    pub fn category_index(&self, column: &str, cell: &Cell) -> Result<usize> {
        let cats = self.categories(column)?;
        Ok(match cell {
            Cell::Category(c) => cats.iter().position(|x| x == c).unwrap_or(0),
            _ => 0,
        })
    }
}

/// Loaded rows plus (once fitted) fill/normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    rows: Vec<Vec<Cell>>,
    pub stats: Option<TableStats>,
}

impl Dataset {
    pub fn from_rows(schema: Schema, rows: Vec<Vec<Cell>>) -> Result<Dataset> {
        schema.validate()?;
        for row in &rows {
            if row.len() != schema.columns.len() {
                return Err(Error::Schema(format!(
                    "row has {} cells, schema has {} columns",
                    row.len(),
                    schema.columns.len()
                )));
            }
        }
        Ok(Dataset {
            schema,
            rows,
            stats: None,
        })
    }

    /// Parse an RFC 4180 CSV with a header row naming every schema column.
    /// Empty cells and unparsable numeric cells are marked missing.
    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(false)
            .from_path(path.as_ref())
            .map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let mut col_idx = Vec::with_capacity(schema.columns.len());
        for col in &schema.columns {
            let idx = headers
                .iter()
                .position(|h| h == col.name)
                .ok_or_else(|| Error::MissingColumn(col.name.clone()))?;
            col_idx.push(idx);
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let mut row = Vec::with_capacity(schema.columns.len());
            for (col, &idx) in schema.columns.iter().zip(&col_idx) {
                let raw = record.get(idx).unwrap_or("");
                row.push(parse_cell(raw, col.kind));
            }
            rows.push(row);
        }
        Ok(Dataset {
            schema: schema.clone(),
            rows,
            stats: None,
        })
    }

    /// Write rows back out as CSV in schema column order; missing cells
    /// become empty fields.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))
            .map_err(csv_err)?;
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(cell_to_string).collect();
            w.write_record(&fields).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })?;
        String::from_utf8(bytes).map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn cell(&self, row: usize, column: &str) -> Result<&Cell> {
        let (ci, _) = self
            .schema
            .column(column)
            .ok_or_else(|| Error::Schema(format!("unknown column {column:?}")))?;
        Ok(&self.rows[row][ci])
    }

    /// Indices of rows whose text target is present. Rows with a missing
    /// target are excluded from training loss and test scoring but still
    /// accepted at impute time.
    pub fn rows_with_target(&self) -> Vec<usize> {
        let (ti, _) = self
            .schema
            .column(&self.schema.text_target().name)
            .expect("target column exists");
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, row)| matches!(&row[ti], Cell::Text(t) if !t.is_empty()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Replace missing cells: numeric -> training mean, categorical ->
    /// reserved "missing" category, text -> empty string. Idempotent.
    pub fn fill_missing(&self, stats: &TableStats) -> Result<Dataset> {
        let mut out = self.clone();
        for (ci, col) in self.schema.columns.iter().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    let stat = stats.numeric(&col.name)?;
                    for row in &mut out.rows {
                        if row[ci].is_missing() {
                            row[ci] = Cell::Number(stat.mean);
                        }
                    }
                }
                ColumnKind::Categorical => {
                    for row in &mut out.rows {
                        if row[ci].is_missing() {
                            row[ci] = Cell::Category(MISSING_CATEGORY.to_string());
                        }
                    }
                }
                ColumnKind::Text => {
                    for row in &mut out.rows {
                        if row[ci].is_missing() {
                            row[ci] = Cell::Text(String::new());
                        }
                    }
                }
            }
        }
        out.stats = Some(stats.clone());
        Ok(out)
    }

    /// Z-score every numeric cell with the training statistics; zero-variance
    /// columns map to 0. Apply once, after [`Dataset::fill_missing`].
    pub fn standardize(&self, stats: &TableStats) -> Result<Dataset> {
        let mut out = self.clone();
        for (ci, col) in self.schema.columns.iter().enumerate() {
            if col.kind != ColumnKind::Numeric {
                continue;
            }
            let stat = stats.numeric(&col.name)?;
            for row in &mut out.rows {
                if let Cell::Number(v) = row[ci] {
                    row[ci] = Cell::Number(standardize_value(v, stat));
                }
            }
        }
        out.stats = Some(stats.clone());
        Ok(out)
    }

    /// `fill_missing` then `standardize` with the given training stats.
    pub fn preprocess(&self, stats: &TableStats) -> Result<Dataset> {
        self.fill_missing(stats)?.standardize(stats)
    }

    /// Deterministic 81/9/10 train/validation/test split: a seeded uniform
    /// shuffle with test = floor(0.10 n) and validation = floor(0.09 n).
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        let n = self.rows.len();
        if n < 10 {
            return Err(Error::SplitTooSmall(n));
        }
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let n_test = n / 10;
        let n_valid = n * 9 / 100;
        let mut test: Vec<usize> = indices[..n_test].to_vec();
        let mut valid: Vec<usize> = indices[n_test..n_test + n_valid].to_vec();
        let mut train: Vec<usize> = indices[n_test + n_valid..].to_vec();
        test.sort_unstable();
        valid.sort_unstable();
        train.sort_unstable();
        Ok((
            self.subset(&train),
            self.subset(&valid),
            self.subset(&test),
        ))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            stats: self.stats.clone(),
        }
    }

    /// One-hot encode a categorical column; each row becomes a length-C
    /// indicator. Unseen categories light up the "missing" index.
    pub fn one_hot(&self, stats: &TableStats, column: &str) -> Result<Vec<Vec<f32>>> {
        let (ci, col) = self
            .schema
            .column(column)
            .ok_or_else(|| Error::Schema(format!("unknown column {column:?}")))?;
        if col.kind != ColumnKind::Categorical {
            return Err(Error::Schema(format!("column {column:?} is not categorical")));
        }
        let c = stats.categories(column)?.len();
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let idx = stats.category_index(column, &row[ci])?;
            let mut v = vec![0.0f32; c];
            v[idx] = 1.0;
            out.push(v);
        }
        Ok(out)
    }
}

pub fn standardize_value(v: f32, stat: NumericStat) -> f32 {
    if stat.std == 0.0 {
        0.0
    } else {
        (v - stat.mean) / stat.std
    }
}

pub fn destandardize_value(z: f32, stat: NumericStat) -> f32 {
    z * stat.std + stat.mean
}

fn parse_cell(raw: &str, kind: ColumnKind) -> Cell {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Cell::Missing;
    }
    match kind {
        ColumnKind::Numeric => match trimmed.parse::<f32>() {
            Ok(v) if v.is_finite() => Cell::Number(v),
            _ => Cell::Missing,
        },
        ColumnKind::Categorical => Cell::Category(raw.to_string()),
        ColumnKind::Text => Cell::Text(raw.to_string()),
    }
}

fn cell_to_string(cell: &Cell) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::Number(v) => format!("{v}"),
        Cell::Category(s) | Cell::Text(s) => s.clone(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        line,
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn reviews_schema() -> Schema {
        Schema::new(vec![
            ColumnSchema {
                name: "rating".into(),
                kind: ColumnKind::Numeric,
                role: ColumnRole::Input,
            },
            ColumnSchema {
                name: "verified".into(),
                kind: ColumnKind::Categorical,
                role: ColumnRole::Input,
            },
            ColumnSchema {
                name: "review".into(),
                kind: ColumnKind::Text,
                role: ColumnRole::Input,
            },
            ColumnSchema {
                name: "summary".into(),
                kind: ColumnKind::Text,
                role: ColumnRole::Target,
            },
        ])
        .unwrap()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn schema_rejects_duplicates_and_missing_target() {
        let dup = Schema::new(vec![
            ColumnSchema {
                name: "a".into(),
                kind: ColumnKind::Numeric,
                role: ColumnRole::Input,
            },
            ColumnSchema {
                name: "a".into(),
                kind: ColumnKind::Text,
                role: ColumnRole::Target,
            },
        ]);
        assert!(dup.is_err());
        let no_target = Schema::new(vec![ColumnSchema {
            name: "a".into(),
            kind: ColumnKind::Numeric,
            role: ColumnRole::Input,
        }]);
        assert!(no_target.is_err());
    }

    #[test]
    fn header_only_file_gives_zero_rows() {
        let f = write_csv("rating,verified,review,summary\n");
        let ds = Dataset::load_csv(f.path(), &reviews_schema()).unwrap();
        assert_eq!(ds.len(), 0);
    }

    #[test]
    fn empty_numeric_cell_is_missing() {
        let f = write_csv("rating,verified,review,summary\n,yes,fine,ok\nx,no,bad,meh\n");
        let ds = Dataset::load_csv(f.path(), &reviews_schema()).unwrap();
        assert!(ds.cell(0, "rating").unwrap().is_missing());
        assert!(ds.cell(1, "rating").unwrap().is_missing());
    }

    #[test]
    fn quoted_cell_parses_as_single_value() {
        let f = write_csv("rating,verified,review,summary\n5,yes,\"a, b\",ok\n");
        let ds = Dataset::load_csv(f.path(), &reviews_schema()).unwrap();
        assert_eq!(ds.cell(0, "review").unwrap().as_str(), Some("a, b"));
    }

    #[test]
    fn missing_header_column_is_named() {
        let f = write_csv("rating,verified,review\n");
        let err = Dataset::load_csv(f.path(), &reviews_schema()).unwrap_err();
        assert!(err.to_string().contains("summary"), "{err}");
    }

    #[test]
    fn malformed_csv_reports_line() {
        let f = write_csv("rating,verified,review,summary\n1,yes,ok\n");
        let err = Dataset::load_csv(f.path(), &reviews_schema()).unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected error {e}"),
        }
    }

    fn numeric_only_rows(values: &[Option<f32>]) -> Dataset {
        let schema = reviews_schema();
        let rows = values
            .iter()
            .map(|v| {
                vec![
                    v.map(Cell::Number).unwrap_or(Cell::Missing),
                    Cell::Category("yes".into()),
                    Cell::Text("t".into()),
                    Cell::Text("s".into()),
                ]
            })
            .collect();
        Dataset::from_rows(schema, rows).unwrap()
    }

    #[test]
    fn fill_replaces_numeric_missing_with_mean() {
        let ds = numeric_only_rows(&[Some(1.0), None, Some(3.0)]);
        let stats = TableStats::fit(&ds).unwrap();
        let filled = ds.fill_missing(&stats).unwrap();
        assert_eq!(filled.cell(1, "rating").unwrap().as_number(), Some(2.0));
    }

    #[test]
    fn fill_categorical_and_text() {
        let schema = reviews_schema();
        let rows = vec![vec![
            Cell::Number(1.0),
            Cell::Missing,
            Cell::Missing,
            Cell::Text("s".into()),
        ]];
        let ds = Dataset::from_rows(schema, rows).unwrap();
        let stats = TableStats::fit(&ds).unwrap();
        let filled = ds.fill_missing(&stats).unwrap();
        assert_eq!(
            filled.cell(0, "verified").unwrap().as_str(),
            Some(MISSING_CATEGORY)
        );
        assert_eq!(filled.cell(0, "review").unwrap().as_str(), Some(""));
        assert_eq!(stats.category_index("verified", filled.cell(0, "verified").unwrap()).unwrap(), 0);
    }

    #[test]
    fn fill_errors_when_numeric_column_all_missing() {
        let ds = numeric_only_rows(&[None, None]);
        assert!(matches!(
            TableStats::fit(&ds),
            Err(Error::NoObservedNumeric(_))
        ));
    }

    #[test]
    fn fill_is_idempotent() {
        let ds = numeric_only_rows(&[Some(1.0), None, Some(3.0)]);
        let stats = TableStats::fit(&ds).unwrap();
        let once = ds.fill_missing(&stats).unwrap();
        let twice = once.fill_missing(&stats).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn standardize_zero_variance_maps_to_zero() {
        let ds = numeric_only_rows(&[Some(2.0), Some(2.0), Some(2.0)]);
        let stats = TableStats::fit(&ds).unwrap();
        let z = ds.preprocess(&stats).unwrap();
        for i in 0..3 {
            assert_eq!(z.cell(i, "rating").unwrap().as_number(), Some(0.0));
        }
    }

    #[test]
    fn standardize_hand_zscore() {
        let ds = numeric_only_rows(&[Some(1.0), Some(3.0)]);
        let stats = TableStats::fit(&ds).unwrap();
        let stat = stats.numeric("rating").unwrap();
        assert_eq!(stat.mean, 2.0);
        assert_eq!(stat.std, 1.0);
        let z = ds.preprocess(&stats).unwrap();
        assert_eq!(z.cell(0, "rating").unwrap().as_number(), Some(-1.0));
        assert_eq!(z.cell(1, "rating").unwrap().as_number(), Some(1.0));
        // A test-split value standardized with TRAINING stats.
        assert_eq!(standardize_value(5.0, stat), 3.0);
    }

    #[test]
    fn standardized_training_column_is_centered() {
        let values: Vec<Option<f32>> = (0..200).map(|i| Some(i as f32 * 0.7 - 30.0)).collect();
        let ds = numeric_only_rows(&values);
        let stats = TableStats::fit(&ds).unwrap();
        let z = ds.preprocess(&stats).unwrap();
        let zs: Vec<f32> = (0..z.len())
            .map(|i| z.cell(i, "rating").unwrap().as_number().unwrap())
            .collect();
        let mean: f64 = zs.iter().map(|&v| v as f64).sum::<f64>() / zs.len() as f64;
        let var: f64 =
            zs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 1e-5, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-3, "std {}", var.sqrt());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let values: Vec<Option<f32>> = (0..100).map(|i| Some(i as f32)).collect();
        let ds = numeric_only_rows(&values);
        let (train, valid, test) = ds.split(42).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (81, 9, 10));
        let (train2, ..) = ds.split(42).unwrap();
        assert_eq!(train.rows(), train2.rows());
    }

    #[test]
    fn split_floor_arithmetic_n20() {
        let values: Vec<Option<f32>> = (0..20).map(|i| Some(i as f32)).collect();
        let ds = numeric_only_rows(&values);
        let (train, valid, test) = ds.split(1).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (17, 1, 2));
    }

    #[test]
    fn split_too_small_errors() {
        let ds = numeric_only_rows(&[Some(1.0); 9]);
        assert!(matches!(ds.split(0), Err(Error::SplitTooSmall(9))));
    }

    #[test]
    fn one_hot_basics() {
        let schema = reviews_schema();
        let rows = vec![
            vec![
                Cell::Number(1.0),
                Cell::Category("no".into()),
                Cell::Text("t".into()),
                Cell::Text("s".into()),
            ],
            vec![
                Cell::Number(1.0),
                Cell::Category("yes".into()),
                Cell::Text("t".into()),
                Cell::Text("s".into()),
            ],
            vec![
                Cell::Number(1.0),
                Cell::Category("unseen-at-fit".into()),
                Cell::Text("t".into()),
                Cell::Text("s".into()),
            ],
        ];
        let ds = Dataset::from_rows(schema, rows).unwrap();
        let fit_ds = ds.subset(&[0, 1]);
        let stats = TableStats::fit(&fit_ds).unwrap();
        // categories: [missing, no, yes]
        let oh = ds.one_hot(&stats, "verified").unwrap();
        assert_eq!(oh[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(oh[1], vec![0.0, 0.0, 1.0]);
        assert_eq!(oh[2], vec![1.0, 0.0, 0.0]); // unseen -> missing index
        let dot: f32 = oh[0].iter().zip(&oh[1]).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
    }

    proptest! {
        #[test]
        fn split_partitions_rows_exactly(n in 10usize..200, seed in 0u64..1000) {
            let values: Vec<Option<f32>> = (0..n).map(|i| Some(i as f32)).collect();
            let ds = numeric_only_rows(&values);
            let (train, valid, test) = ds.split(seed).unwrap();
            let mut seen: Vec<f32> = Vec::new();
            for part in [&train, &valid, &test] {
                for i in 0..part.len() {
                    seen.push(part.cell(i, "rating").unwrap().as_number().unwrap());
                }
            }
            seen.sort_by(f32::total_cmp);
            let expect: Vec<f32> = (0..n).map(|i| i as f32).collect();
            prop_assert_eq!(seen, expect);
        }
    }
}
