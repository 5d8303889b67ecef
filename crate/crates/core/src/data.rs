//! Tabular data loading and preprocessing.
//!
//! Continuous columns are min-max scaled to `[0,1]`, categorical columns are
//! one-hot encoded, and the label column is mapped to class indices. A fitted
//! [`Preprocessor`] carries everything needed to transform unseen rows the same
//! way, so it travels with trained models.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

/// Default cutoff for dropping rows with missing cells.
pub const DEFAULT_MAX_MISSING_FRACTION: f64 = 0.5;

/// Category name given to missing categorical cells.
pub const MISSING_CATEGORY: &str = "<missing>";

const MISSING_TOKENS: [&str; 7] = ["", "?", "NA", "N/A", "NaN", "nan", "null"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Fixed category order; learned from data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// One entry of the JSON schema sidecar (`{"col": {"kind": ..., "categories": [...]}}`).
#[derive(Clone, Debug, Deserialize, Serialize)]
struct ColumnSpec {
    kind: ColumnKind,
    #[serde(default)]
    categories: Option<Vec<String>>,
}

/// Column descriptions, ordered as the CSV header orders them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    /// Parses the JSON sidecar. Column order is fixed later against the CSV header.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let specs: BTreeMap<String, ColumnSpec> = serde_json::from_str(text)
            .map_err(|e| DlnError::Config(format!("invalid schema: {e}")))?;
        Schema::new(
            specs
                .into_iter()
                .map(|(name, spec)| ColumnSchema {
                    name,
                    kind: spec.kind,
                    categories: spec.categories,
                })
                .collect(),
        )
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DlnError::io(path, e))?;
        Schema::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let map: BTreeMap<&str, ColumnSpec> = self
            .columns
            .iter()
            .map(|c| {
                (
                    c.name.as_str(),
                    ColumnSpec {
                        kind: c.kind,
                        categories: c.categories.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("schema serializes")
    }

    fn validate(&self) -> Result<()> {
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(DlnError::Config(format!(
                "schema must have exactly one label column, found {labels}"
            )));
        }
        let mut names = BTreeSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(DlnError::Config(format!("duplicate column '{}'", col.name)));
            }
            if let Some(cats) = &col.categories {
                if col.kind == ColumnKind::Continuous {
                    return Err(DlnError::Config(format!(
                        "continuous column '{}' cannot list categories",
                        col.name
                    )));
                }
                let unique: BTreeSet<_> = cats.iter().collect();
                if unique.len() != cats.len() {
                    return Err(DlnError::Config(format!(
                        "column '{}' has duplicate categories",
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Reorders the schema to follow `header`. Header columns absent from the
    /// schema are ignored; schema columns absent from the header are an error.
    fn ordered_by(&self, header: &[String]) -> Result<Schema> {
        for col in &self.columns {
            if !header.iter().any(|h| h == &col.name) {
                return Err(DlnError::Data(format!(
                    "schema column '{}' not found in CSV header",
                    col.name
                )));
            }
        }
        let columns = header
            .iter()
            .filter_map(|h| self.column(h).cloned())
            .collect();
        Ok(Schema { columns })
    }

    pub fn label(&self) -> &ColumnSchema {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label")
    }
}

/// Parsed but untransformed rows. Missing cells are `None`.
#[derive(Clone, Debug, Default)]
pub struct RawTable {
    pub continuous_names: Vec<String>,
    pub categorical_names: Vec<String>,
    pub continuous: Vec<Vec<Option<f64>>>,
    pub categorical: Vec<Vec<Option<String>>>,
    pub labels: Vec<String>,
    /// Rows dropped for having too many missing cells or no label.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_TOKENS.contains(&t)
}

/// Reads a CSV file against `schema`, dropping rows whose fraction of missing
/// feature cells exceeds `max_missing_fraction` (and rows without a label).
pub fn read_raw_csv(path: &Path, schema: &Schema, max_missing_fraction: f64) -> Result<(Schema, RawTable)> {
    let file = std::fs::File::open(path).map_err(|e| DlnError::io(path, e))?;
    read_raw(file, schema, max_missing_fraction)
}

pub fn read_raw<R: std::io::Read>(
    reader: R,
    schema: &Schema,
    max_missing_fraction: f64,
) -> Result<(Schema, RawTable)> {
    if !(0.0..=1.0).contains(&max_missing_fraction) {
        return Err(DlnError::InvalidArgument(format!(
            "max_missing_fraction must be in [0,1], got {max_missing_fraction}"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DlnError::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let schema = schema.ordered_by(&header)?;
    let position = |name: &str| header.iter().position(|h| h == name).expect("checked");

    let mut cont_cols = Vec::new();
    let mut cat_cols = Vec::new();
    let mut label_col = 0;
    let mut table = RawTable::default();
    for col in &schema.columns {
        match col.kind {
            ColumnKind::Continuous => {
                cont_cols.push(position(&col.name));
                table.continuous_names.push(col.name.clone());
            }
            ColumnKind::Categorical => {
                cat_cols.push(position(&col.name));
                table.categorical_names.push(col.name.clone());
            }
            ColumnKind::Label => label_col = position(&col.name),
        }
    }
    let n_features = cont_cols.len() + cat_cols.len();

    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DlnError::Data(format!("CSV row {}: {e}", row_no + 2)))?;
        let label = record.get(label_col).unwrap_or("");
        if is_missing(label) {
            table.dropped_rows += 1;
            continue;
        }
        let cont: Vec<Option<f64>> = cont_cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                if is_missing(cell) {
                    None
                } else {
                    // unparseable numbers count as missing
                    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
                }
            })
            .collect();
        let cat: Vec<Option<String>> = cat_cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                (!is_missing(cell)).then(|| cell.trim().to_string())
            })
            .collect();
        let missing = cont.iter().filter(|v| v.is_none()).count() + cat.iter().filter(|v| v.is_none()).count();
        if n_features > 0 && missing as f64 / n_features as f64 > max_missing_fraction {
            table.dropped_rows += 1;
            continue;
        }
        table.continuous.push(cont);
        table.categorical.push(cat);
        table.labels.push(label.trim().to_string());
    }
    Ok((schema, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFeature {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Imputation value for missing cells, in original units.
    pub median: f64,
}

impl ContinuousFeature {
    pub fn scale(&self, value: f64) -> f64 {
        let range = self.max - self.min;
        if range <= 0.0 {
            return 0.0;
        }
        ((value - self.min) / range).clamp(0.0, 1.0)
    }

    /// Maps a scaled value back to original units (no clamping).
    pub fn unscale(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub categories: Vec<String>,
}

/// Fitted preprocessing state: scaler ranges, category lists and class names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub schema: Schema,
    pub continuous: Vec<ContinuousFeature>,
    pub categorical: Vec<CategoricalFeature>,
    pub label_name: String,
    pub classes: Vec<String>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl Preprocessor {
    /// Fits scaler ranges, medians and learned categories on `rows` of `table`.
    /// Class names come from the schema or from the whole table, so class
    /// indices agree across splits.
    pub fn fit(schema: &Schema, table: &RawTable, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(DlnError::Data("no rows to fit preprocessing on".into()));
        }
        let continuous = table
            .continuous_names
            .iter()
            .enumerate()
            .map(|(f, name)| {
                let mut present: Vec<f64> = rows.iter().filter_map(|&r| table.continuous[r][f]).collect();
                let min = present.iter().copied().fold(f64::INFINITY, f64::min);
                let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let med = median(&mut present);
                match med {
                    Some(med) => ContinuousFeature { name: name.clone(), min, max, median: med },
                    None => ContinuousFeature { name: name.clone(), min: 0.0, max: 0.0, median: 0.0 },
                }
            })
            .collect();

        let categorical = table
            .categorical_names
            .iter()
            .enumerate()
            .map(|(f, name)| {
                let declared = schema.column(name).and_then(|c| c.categories.clone());
                let mut categories = declared.unwrap_or_else(|| {
                    rows.iter()
                        .filter_map(|&r| table.categorical[r][f].clone())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect()
                });
                let has_missing = rows.iter().any(|&r| table.categorical[r][f].is_none());
                if has_missing && !categories.iter().any(|c| c == MISSING_CATEGORY) {
                    categories.push(MISSING_CATEGORY.to_string());
                }
                CategoricalFeature { name: name.clone(), categories }
            })
            .collect();

        let label = schema.label();
        let classes = match &label.categories {
            Some(c) => c.clone(),
            None => table.labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        };
        Ok(Preprocessor {
            schema: schema.clone(),
            continuous,
            categorical,
            label_name: label.name.clone(),
            classes,
        })
    }

    /// Identity preprocessing for data that is already scaled and encoded:
    /// continuous features `x0..` on `[0,1]`, categorical features `c0..` with
    /// `category_counts[i]` categories named `"0".."k"`, classes `"0".."n"`.
    pub fn unit(n_continuous: usize, category_counts: &[usize], n_classes: usize) -> Self {
        let names = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        let continuous: Vec<ContinuousFeature> = (0..n_continuous)
            .map(|f| ContinuousFeature { name: format!("x{f}"), min: 0.0, max: 1.0, median: 0.5 })
            .collect();
        let categorical: Vec<CategoricalFeature> = category_counts
            .iter()
            .enumerate()
            .map(|(f, &k)| CategoricalFeature { name: format!("c{f}"), categories: names(k) })
            .collect();
        let mut columns: Vec<ColumnSchema> = continuous
            .iter()
            .map(|f| ColumnSchema { name: f.name.clone(), kind: ColumnKind::Continuous, categories: None })
            .collect();
        columns.extend(categorical.iter().map(|f| ColumnSchema {
            name: f.name.clone(),
            kind: ColumnKind::Categorical,
            categories: Some(f.categories.clone()),
        }));
        columns.push(ColumnSchema { name: "y".into(), kind: ColumnKind::Label, categories: Some(names(n_classes)) });
        Preprocessor {
            schema: Schema { columns },
            continuous,
            categorical,
            label_name: "y".into(),
            classes: names(n_classes),
        }
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    pub fn n_onehot(&self) -> usize {
        self.categorical.iter().map(|c| c.categories.len()).sum()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Name of each one-hot bit as `(feature, category)`.
    pub fn onehot_names(&self) -> Vec<(String, String)> {
        self.categorical
            .iter()
            .flat_map(|f| f.categories.iter().map(move |c| (f.name.clone(), c.clone())))
            .collect()
    }

    /// Transforms one row of raw cells. Returns the number of categorical
    /// cells that matched no known category (encoded as an all-zero group).
    pub fn transform_row(
        &self,
        continuous: &[Option<f64>],
        categorical: &[Option<String>],
        cont_out: &mut Vec<f64>,
        onehot_out: &mut Vec<u8>,
    ) -> usize {
        for (feature, value) in self.continuous.iter().zip(continuous) {
            cont_out.push(feature.scale(value.unwrap_or(feature.median)));
        }
        let mut unknown = 0;
        for (feature, value) in self.categorical.iter().zip(categorical) {
            let key = value.as_deref().unwrap_or(MISSING_CATEGORY);
            let hit = feature.categories.iter().position(|c| c == key);
            if hit.is_none() {
                unknown += 1;
            }
            onehot_out.extend((0..feature.categories.len()).map(|i| (Some(i) == hit) as u8));
        }
        unknown
    }

    /// Parses and transforms one row given as string cells in schema column
    /// order (label column excluded).
    pub fn transform_cells(&self, cells: &[&str]) -> Result<(Vec<f64>, Vec<u8>, usize)> {
        let features: Vec<&ColumnSchema> =
            self.schema.columns.iter().filter(|c| c.kind != ColumnKind::Label).collect();
        if cells.len() != features.len() {
            return Err(DlnError::Data(format!(
                "expected {} feature cells, got {}",
                features.len(),
                cells.len()
            )));
        }
        let mut cont = Vec::new();
        let mut cat = Vec::new();
        for (col, cell) in features.iter().zip(cells) {
            match col.kind {
                ColumnKind::Continuous => cont.push(if is_missing(cell) {
                    None
                } else {
                    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
                }),
                ColumnKind::Categorical => cat.push((!is_missing(cell)).then(|| cell.trim().to_string())),
                ColumnKind::Label => unreachable!(),
            }
        }
        let mut c = Vec::with_capacity(cont.len());
        let mut o = Vec::with_capacity(self.n_onehot());
        let unknown = self.transform_row(&cont, &cat, &mut c, &mut o);
        Ok((c, o, unknown))
    }

    /// Transforms `rows` of `table` into a [`Dataset`].
    pub fn transform(&self, table: &Arc<RawTable>, rows: &[usize]) -> Result<Dataset> {
        if table.continuous_names.len() != self.continuous.len()
            || table.categorical_names.len() != self.categorical.len()
            || table.continuous_names.iter().zip(&self.continuous).any(|(a, b)| a != &b.name)
            || table.categorical_names.iter().zip(&self.categorical).any(|(a, b)| a != &b.name)
        {
            return Err(DlnError::Data("table columns do not match the fitted preprocessing".into()));
        }
        let mut continuous = Vec::with_capacity(rows.len() * self.n_continuous());
        let mut onehot = Vec::with_capacity(rows.len() * self.n_onehot());
        let mut labels = Vec::with_capacity(rows.len());
        let mut unknown = 0;
        for &r in rows {
            unknown += self.transform_row(&table.continuous[r], &table.categorical[r], &mut continuous, &mut onehot);
            let label = self
                .classes
                .iter()
                .position(|c| c == &table.labels[r])
                .ok_or_else(|| DlnError::Data(format!("unknown class label '{}'", table.labels[r])))?;
            labels.push(label);
        }
        if unknown > 0 {
            warn!("{unknown} categorical cells had unseen categories and were encoded as all-zero");
        }
        Ok(Dataset {
            preprocessor: Arc::new(self.clone()),
            raw: Arc::clone(table),
            rows: rows.to_vec(),
            continuous,
            onehot,
            labels,
            unknown_categories: unknown,
        })
    }
}

/// A preprocessed dataset. Keeps a handle on the raw rows so it can be re-split
/// and re-fitted without leaking test statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub preprocessor: Arc<Preprocessor>,
    raw: Arc<RawTable>,
    rows: Vec<usize>,
    /// Row-major `[n × n_continuous]`, values in `[0,1]`.
    pub continuous: Vec<f64>,
    /// Row-major `[n × n_onehot]`, values in `{0,1}`.
    pub onehot: Vec<u8>,
    pub labels: Vec<usize>,
    /// Categorical cells encoded as all-zero because their category was unseen.
    pub unknown_categories: usize,
}

/// Borrowed view of one preprocessed sample.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub continuous: &'a [f64],
    pub onehot: &'a [u8],
}

impl Dataset {
    /// Builds a dataset directly from already-preprocessed arrays.
    pub fn from_arrays(
        preprocessor: Preprocessor,
        continuous: Vec<f64>,
        onehot: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if continuous.len() != n * preprocessor.n_continuous() || onehot.len() != n * preprocessor.n_onehot() {
            return Err(DlnError::Data("array sizes do not match the preprocessing layout".into()));
        }
        if labels.iter().any(|&l| l >= preprocessor.n_classes()) {
            return Err(DlnError::Data("label index out of range".into()));
        }
        // reconstruct raw rows in original units so re-splitting works
        let raw = RawTable {
            continuous_names: preprocessor.continuous.iter().map(|f| f.name.clone()).collect(),
            categorical_names: preprocessor.categorical.iter().map(|f| f.name.clone()).collect(),
            continuous: (0..n)
                .map(|i| {
                    preprocessor
                        .continuous
                        .iter()
                        .enumerate()
                        .map(|(f, feat)| Some(feat.unscale(continuous[i * preprocessor.n_continuous() + f])))
                        .collect()
                })
                .collect(),
            categorical: (0..n)
                .map(|i| {
                    let bits = &onehot[i * preprocessor.n_onehot()..(i + 1) * preprocessor.n_onehot()];
                    let mut offset = 0;
                    preprocessor
                        .categorical
                        .iter()
                        .map(|feat| {
                            let group = &bits[offset..offset + feat.categories.len()];
                            offset += feat.categories.len();
                            group.iter().position(|&b| b == 1).map(|p| feat.categories[p].clone())
                        })
                        .collect()
                })
                .collect(),
            labels: labels.iter().map(|&l| preprocessor.classes[l].clone()).collect(),
            dropped_rows: 0,
        };
        Ok(Dataset {
            preprocessor: Arc::new(preprocessor),
            raw: Arc::new(raw),
            rows: (0..n).collect(),
            continuous,
            onehot,
            labels,
            unknown_categories: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_continuous(&self) -> usize {
        self.preprocessor.n_continuous()
    }

    pub fn n_onehot(&self) -> usize {
        self.preprocessor.n_onehot()
    }

    pub fn n_classes(&self) -> usize {
        self.preprocessor.n_classes()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let nc = self.n_continuous();
        let no = self.n_onehot();
        Sample {
            continuous: &self.continuous[i * nc..(i + 1) * nc],
            onehot: &self.onehot[i * no..(i + 1) * no],
        }
    }

    /// Column `f` of the continuous matrix.
    pub fn continuous_column(&self, f: usize) -> Vec<f64> {
        let nc = self.n_continuous();
        (0..self.len()).map(|i| self.continuous[i * nc + f]).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn raw(&self) -> &RawTable {
        &self.raw
    }

    /// Re-fits preprocessing on `train` (local indices) and applies it to both
    /// index sets.
    pub fn refit_split(&self, train: &[usize], test: &[usize]) -> Result<(Dataset, Dataset)> {
        let train_rows: Vec<usize> = train.iter().map(|&i| self.rows[i]).collect();
        let test_rows: Vec<usize> = test.iter().map(|&i| self.rows[i]).collect();
        let pre = Preprocessor::fit(&self.preprocessor.schema, &self.raw, &train_rows)?;
        let mut pre = pre;
        // class list stays the one this dataset was built with
        pre.classes = self.preprocessor.classes.clone();
        Ok((pre.transform(&self.raw, &train_rows)?, pre.transform(&self.raw, &test_rows)?))
    }
}

/// Loads a CSV file and fits preprocessing on all surviving rows.
pub fn load_csv(path: &Path, schema: &Schema, max_missing_fraction: f64) -> Result<Dataset> {
    let (schema, table) = read_raw_csv(path, schema, max_missing_fraction)?;
    dataset_from_raw(&schema, table)
}

pub fn dataset_from_raw(schema: &Schema, table: RawTable) -> Result<Dataset> {
    if table.is_empty() {
        return Err(DlnError::Data("dataset is empty after filtering rows".into()));
    }
    let rows: Vec<usize> = (0..table.len()).collect();
    let pre = Preprocessor::fit(schema, &table, &rows)?;
    pre.transform(&Arc::new(table), &rows)
}

fn indices_by_class(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Stratified train/test split. Preprocessing is re-fitted on the train part.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(&dataset.labels, dataset.n_classes(), test_fraction, seed)
        .map_err(|class| {
            DlnError::Data(format!(
                "class '{}' has too few samples for a train/test split at test_fraction {test_fraction}",
                dataset.preprocessor.classes[class]
            ))
        })
        .and_then(|r| r.ok_or_else(|| DlnError::InvalidArgument(format!("test_fraction must be in (0,1), got {test_fraction}"))))?;
    dataset.refit_split(&train, &test)
}

/// Returns `Err(class)` when a present class would leave either side empty,
/// `Ok(None)` for an invalid fraction.
fn split_indices(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> std::result::Result<Option<(Vec<usize>, Vec<usize>)>, usize> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in indices_by_class(labels, n_classes).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test >= idx.len() {
            return Err(class);
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Some((train, test)))
}

/// Label-stratified assignment of samples to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn stratified(dataset: &Dataset, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(DlnError::InvalidArgument(format!("need at least 2 folds, got {k}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignments = vec![0; dataset.len()];
        let mut next = 0;
        for (class, mut idx) in indices_by_class(&dataset.labels, dataset.n_classes()).into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            if idx.len() < k {
                return Err(DlnError::Data(format!(
                    "class '{}' has {} samples, fewer than {k} folds",
                    dataset.preprocessor.classes[class],
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            for i in idx {
                assignments[i] = next;
                next = (next + 1) % k;
            }
        }
        Ok(FoldPlan { k, assignments })
    }

    /// `(train, held_out)` local indices for `fold`.
    pub fn fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        (train, held)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_recall: Vec<Option<f64>>,
}

/// Accuracy, per-class recall, and their class-balanced mean.
pub fn classification_report(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<ClassificationReport> {
    if predictions.len() != truth.len() {
        return Err(DlnError::InvalidArgument(format!(
            "prediction/truth length mismatch: {} vs {}",
            predictions.len(),
            truth.len()
        )));
    }
    let n_classes = n_classes.max(truth.iter().max().map_or(0, |m| m + 1));
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let per_class_recall: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let absent = per_class_recall.iter().filter(|r| r.is_none()).count();
    if absent > 0 {
        warn!("{absent} classes absent from ground truth; excluded from balanced accuracy");
    }
    let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
    let balanced_accuracy = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let accuracy = if truth.is_empty() {
        0.0
    } else {
        hits.iter().sum::<usize>() as f64 / truth.len() as f64
    };
    Ok(ClassificationReport {
        balanced_accuracy,
        accuracy,
        per_class_recall,
    })
}

/// Mean of per-class recalls over classes present in `truth`.
pub fn balanced_accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(classification_report(predictions, truth, 0)?.balanced_accuracy)
}
