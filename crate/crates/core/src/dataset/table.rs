use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles for a classification CSV.
///
/// Columns not named as label, categorical, or dropped are parsed as numeric
/// features. Categorical columns are one-hot encoded with categories in
/// lexicographic order; an empty category list means "infer from the file".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: String,
    /// Explicit label-to-class mapping. When absent, distinct labels are
    /// sorted (numerically if they all parse as integers) and numbered.
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, usize>>,
    #[serde(default)]
    pub categorical: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub drop: Vec<String>,
    /// Cell values treated as missing; rows containing one are dropped.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSource {
    /// A raw CSV column.
    Column(String),
    /// A column of the encoded feature matrix.
    ContextIndex(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupRule {
    /// `value >= threshold` maps to group 1, everything else to group 0.
    Threshold { threshold: f64 },
    /// Group index is the number of (sorted) edges `<= value`.
    Buckets { edges: Vec<f64> },
    /// Group index is the position of the set containing the raw value.
    Categories { sets: Vec<Vec<String>> },
}

impl GroupRule {
    pub fn num_groups(&self) -> usize {
        match self {
            GroupRule::Threshold { .. } => 2,
            GroupRule::Buckets { edges } => edges.len() + 1,
            GroupRule::Categories { sets } => sets.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_groups() < 2 {
            return Err(Error::Schema("group rule must produce at least 2 groups".into()));
        }
        match self {
            GroupRule::Buckets { edges } if edges.windows(2).any(|w| w[0] >= w[1]) => Err(
                Error::Schema("bucket edges must be strictly increasing".into()),
            ),
            GroupRule::Categories { sets } => {
                let mut seen = BTreeSet::new();
                for v in sets.iter().flatten() {
                    if !seen.insert(v) {
                        return Err(Error::Schema(format!(
                            "category {v:?} appears in more than one group set"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn numeric(&self, value: f64) -> Option<usize> {
        match self {
            GroupRule::Threshold { threshold } => Some(usize::from(value >= *threshold)),
            GroupRule::Buckets { edges } => Some(edges.iter().filter(|&&e| e <= value).count()),
            GroupRule::Categories { .. } => None,
        }
    }

    fn assign(&self, raw: &str, row: usize) -> Result<usize> {
        match self {
            GroupRule::Categories { sets } => sets
                .iter()
                .position(|set| set.iter().any(|v| v == raw))
                .ok_or_else(|| Error::Ingestion {
                    row,
                    message: format!("group value {raw:?} is not covered by any group set"),
                }),
            _ => {
                let value = raw.parse::<f64>().map_err(|_| Error::Ingestion {
                    row,
                    message: format!("group value {raw:?} is not numeric"),
                })?;
                Ok(self.numeric(value).expect("numeric rule"))
            }
        }
    }
}

/// Sensitive-attribute definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub source: GroupSource,
    pub rule: GroupRule,
    #[serde(default = "default_true")]
    pub keep_in_context: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTable {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
    pub num_classes: usize,
    pub num_groups: usize,
    pub feature_names: Vec<String>,
}

impl ClassificationTable {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        groups: Vec<usize>,
        num_classes: usize,
        num_groups: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || groups.len() != n {
            return Err(Error::Data("table columns have inconsistent lengths".into()));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::Data("label out of range".into()));
        }
        if groups.iter().any(|&g| g >= num_groups) {
            return Err(Error::Data("group out of range".into()));
        }
        let feature_names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            features,
            labels,
            groups,
            num_classes,
            num_groups,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn context_dim(&self) -> usize {
        self.features.ncols()
    }
}

enum ColumnKind {
    Numeric,
    Categorical(Vec<String>),
}

/// Read a CSV classification table, one-hot encode categoricals, map labels
/// to `0..K` and assign group labels.
pub fn load_csv(path: &Path, schema: &Schema, group: &GroupSpec) -> Result<ClassificationTable> {
    group.rule.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };

    let label_col = col(&schema.label)?;
    for name in schema.categorical.keys().chain(&schema.drop) {
        col(name)?;
    }
    let group_col = match &group.source {
        GroupSource::Column(name) => Some(col(name)?),
        GroupSource::ContextIndex(_) => None,
    };
    if group_col.is_none() && matches!(group.rule, GroupRule::Categories { .. }) {
        return Err(Error::Schema(
            "category-set group rules need a raw column source".into(),
        ));
    }
    let dropped: BTreeSet<usize> = schema.drop.iter().map(|n| col(n)).collect::<Result<_>>()?;
    if dropped.contains(&label_col) {
        return Err(Error::Schema("label column cannot be dropped".into()));
    }

    // Read, dropping rows with missing values in any used column.
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut missing_rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        if cells.len() != headers.len() {
            return Err(Error::Ingestion {
                row: row_no,
                message: format!("expected {} fields, found {}", headers.len(), cells.len()),
            });
        }
        let has_missing = cells
            .iter()
            .enumerate()
            .any(|(j, c)| !dropped.contains(&j) && schema.missing.iter().any(|m| m == c));
        if has_missing {
            missing_rows += 1;
        } else {
            rows.push((row_no, cells));
        }
    }
    if missing_rows > 0 {
        log::info!("dropped {missing_rows} rows with missing values from {}", path.display());
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{} contains no usable data rows", path.display())));
    }

    let keep_group_column = group.keep_in_context || group_col.is_none();
    let mut kinds: Vec<(usize, ColumnKind)> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == label_col || dropped.contains(&j) {
            continue;
        }
        if Some(j) == group_col && !keep_group_column {
            continue;
        }
        let kind = match schema.categorical.get(name) {
            Some(declared) if !declared.is_empty() => {
                let mut cats = declared.clone();
                cats.sort();
                cats.dedup();
                ColumnKind::Categorical(cats)
            }
            Some(_) => {
                let cats: BTreeSet<&str> = rows.iter().map(|(_, r)| r[j].as_str()).collect();
                ColumnKind::Categorical(cats.into_iter().map(str::to_string).collect())
            }
            None => ColumnKind::Numeric,
        };
        kinds.push((j, kind));
    }

    let mut feature_names = Vec::new();
    for (j, kind) in &kinds {
        match kind {
            ColumnKind::Numeric => feature_names.push(headers[*j].clone()),
            ColumnKind::Categorical(cats) => {
                feature_names.extend(cats.iter().map(|c| format!("{}={c}", headers[*j])))
            }
        }
    }

    let width = feature_names.len();
    let mut data = Vec::with_capacity(rows.len() * width);
    for (row_no, cells) in &rows {
        for (j, kind) in &kinds {
            let cell = &cells[*j];
            match kind {
                ColumnKind::Numeric => {
                    let v = cell.parse::<f64>().map_err(|_| Error::Ingestion {
                        row: *row_no,
                        message: format!("column {:?} value {cell:?} is not numeric", headers[*j]),
                    })?;
                    data.push(v);
                }
                ColumnKind::Categorical(cats) => {
                    let hot = cats.iter().position(|c| c == cell).ok_or_else(|| {
                        Error::Ingestion {
                            row: *row_no,
                            message: format!(
                                "column {:?} has unmapped category {cell:?}",
                                headers[*j]
                            ),
                        }
                    })?;
                    data.extend((0..cats.len()).map(|k| if k == hot { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    let mut features =
        Array2::from_shape_vec((rows.len(), width), data).expect("row-major feature layout");

    let (labels, num_classes) = map_labels(&rows, label_col, schema)?;

    let groups: Vec<usize> = match (&group.source, group_col) {
        (GroupSource::Column(_), Some(gc)) => rows
            .iter()
            .map(|(row_no, cells)| group.rule.assign(&cells[gc], *row_no))
            .collect::<Result<_>>()?,
        (GroupSource::ContextIndex(idx), _) => {
            if *idx >= width {
                return Err(Error::Schema(format!(
                    "group context index {idx} >= feature width {width}"
                )));
            }
            let groups = features
                .column(*idx)
                .iter()
                .map(|&v| group.rule.numeric(v).expect("numeric rule"))
                .collect();
            if !group.keep_in_context {
                let keep: Vec<usize> = (0..width).filter(|&j| j != *idx).collect();
                features = features.select(ndarray::Axis(1), &keep);
                feature_names.remove(*idx);
            }
            groups
        }
        (GroupSource::Column(_), None) => unreachable!("column resolved above"),
    };

    if num_classes < 2 {
        return Err(Error::Data(format!(
            "label column {:?} has fewer than 2 classes",
            schema.label
        )));
    }
    Ok(ClassificationTable {
        features,
        labels,
        groups,
        num_classes,
        num_groups: group.rule.num_groups(),
        feature_names,
    })
}

fn map_labels(
    rows: &[(usize, Vec<String>)],
    label_col: usize,
    schema: &Schema,
) -> Result<(Vec<usize>, usize)> {
    if let Some(map) = &schema.label_map {
        let k = map.values().max().map_or(0, |m| m + 1);
        let labels = rows
            .iter()
            .map(|(row_no, cells)| {
                map.get(&cells[label_col]).copied().ok_or_else(|| Error::Ingestion {
                    row: *row_no,
                    message: format!("label {:?} is not in label_map", cells[label_col]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((labels, k));
    }
    let distinct: BTreeSet<&str> = rows.iter().map(|(_, r)| r[label_col].as_str()).collect();
    let mut ordered: Vec<&str> = distinct.into_iter().collect();
    if ordered.iter().all(|s| s.parse::<i64>().is_ok()) {
        ordered.sort_by_key(|s| s.parse::<i64>().expect("checked"));
    }
    let labels = rows
        .iter()
        .map(|(_, r)| {
            ordered
                .iter()
                .position(|&s| s == r[label_col])
                .expect("label collected above")
        })
        .collect();
    Ok((labels, ordered.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn schema(label: &str) -> Schema {
        Schema {
            label: label.into(),
            label_map: None,
            categorical: BTreeMap::new(),
            drop: vec![],
            missing: default_missing(),
        }
    }

    fn threshold_group(col: &str, t: f64) -> GroupSpec {
        GroupSpec {
            source: GroupSource::Column(col.into()),
            rule: GroupRule::Threshold { threshold: t },
            keep_in_context: true,
        }
    }

    #[test]
    fn reads_small_table() {
        let f = write_csv("a,b,y\n1,0.5,yes\n2,1.5,no\n3,2.5,yes\n4,3.5,no\n");
        let t = load_csv(f.path(), &schema("y"), &threshold_group("a", 3.0)).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.num_classes, 2);
        assert_eq!(t.labels, vec![1, 0, 1, 0]);
        assert_eq!(t.groups, vec![0, 0, 1, 1]);
        assert_eq!(t.context_dim(), 2);
    }

    #[test]
    fn one_hot_is_sorted_and_group_can_be_excluded() {
        let f = write_csv("color,x,y\nred,1,0\nblue,2,1\ngreen,3,2\n");
        let mut s = schema("y");
        s.categorical.insert("color".into(), vec![]);
        let g = GroupSpec {
            source: GroupSource::Column("x".into()),
            rule: GroupRule::Buckets { edges: vec![2.0, 3.0] },
            keep_in_context: false,
        };
        let t = load_csv(f.path(), &s, &g).unwrap();
        assert_eq!(t.feature_names, vec!["color=blue", "color=green", "color=red"]);
        assert_eq!(t.features.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(t.groups, vec![0, 1, 2]);
        assert_eq!(t.num_classes, 3);
    }

    #[test]
    fn missing_rows_are_dropped() {
        let f = write_csv("x,y\n1,0\n?,1\n3,1\n");
        let t = load_csv(f.path(), &schema("y"), &threshold_group("x", 2.0)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn uncovered_group_category_names_the_row() {
        let f = write_csv("race,x,y\nWhite,1,0\nBlack,2,1\nOther,3,0\n");
        let g = GroupSpec {
            source: GroupSource::Column("race".into()),
            rule: GroupRule::Categories {
                sets: vec![vec!["White".into()], vec!["Black".into()]],
            },
            keep_in_context: false,
        };
        let err = load_csv(f.path(), &schema("y"), &g).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 3, .. }), "{err}");
    }

    #[test]
    fn unmapped_declared_category_is_an_error() {
        let f = write_csv("c,y\na,0\nb,1\nz,1\n");
        let mut s = schema("y");
        s.categorical.insert("c".into(), vec!["a".into(), "b".into()]);
        let g = GroupSpec {
            source: GroupSource::ContextIndex(0),
            rule: GroupRule::Threshold { threshold: 0.5 },
            keep_in_context: true,
        };
        let err = load_csv(f.path(), &s, &g).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 3, .. }), "{err}");
    }

    #[test]
    fn schema_errors() {
        let f = write_csv("x,y\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), &schema("label"), &threshold_group("x", 0.0)),
            Err(Error::Schema(_))
        ));
        let empty = write_csv("x,y\n");
        assert!(load_csv(empty.path(), &schema("y"), &threshold_group("x", 0.0)).is_err());
        let missing = Path::new("/definitely/not/here.csv");
        assert!(matches!(
            load_csv(missing, &schema("y"), &threshold_group("x", 0.0)),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn integer_labels_sort_numerically() {
        let f = write_csv("x,y\n1,10\n2,9\n3,2\n");
        let t = load_csv(f.path(), &schema("y"), &threshold_group("x", 2.0)).unwrap();
        assert_eq!(t.labels, vec![2, 1, 0]);
    }
}
