use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{CfxError, Result};

/// One raw feature value: a number for continuous features, a category
/// index for categorical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Cat(usize),
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match *self {
            Cell::Num(v) => Some(v),
            Cell::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<usize> {
        match *self {
            Cell::Cat(c) => Some(c),
            Cell::Num(_) => None,
        }
    }
}

pub type RawRow = Vec<Cell>;

/// Rows in raw units with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: FeatureSchema,
    pub rows: Vec<RawRow>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    /// Rows dropped for missing or unparseable cells.
    pub dropped: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Writes the table as CSV with the label in the last column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let label = self.schema.label.clone().unwrap_or_else(|| "label".into());
        let mut header: Vec<String> = self
            .schema
            .features
            .iter()
            .map(|f| f.name.clone())
            .collect();
        header.push(label);
        w.write_record(&header)?;
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            let mut rec = format_row(&self.schema, row);
            rec.push(self.classes[y].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Renders a raw row as strings in schema order.
pub fn format_row(schema: &FeatureSchema, row: &[Cell]) -> Vec<String> {
    schema
        .features
        .iter()
        .zip(row)
        .map(|(f, cell)| match *cell {
            Cell::Num(v) => format!("{v}"),
            Cell::Cat(c) => f
                .categories
                .get(c)
                .cloned()
                .unwrap_or_else(|| c.to_string()),
        })
        .collect()
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "?"
}

/// Parses one raw cell against its feature declaration. `Ok(None)` means the
/// cell is missing or unparseable and the row should be dropped.
pub fn parse_cell(
    schema: &FeatureSchema,
    feature: usize,
    text: &str,
) -> std::result::Result<Option<Cell>, String> {
    let spec = &schema.features[feature];
    if is_missing(text) {
        return Ok(None);
    }
    let t = text.trim();
    match spec.kind {
        FeatureKind::Continuous => Ok(t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Num)),
        FeatureKind::Categorical => spec
            .category_index(t)
            .map(|c| Some(Cell::Cat(c)))
            .ok_or_else(|| format!("unknown category `{t}` for feature `{}`", spec.name)),
    }
}

/// Writes feature rows (no label column) with the schema's names as header.
pub fn write_rows<W: std::io::Write>(
    writer: W,
    schema: &FeatureSchema,
    rows: &[RawRow],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.features.iter().map(|f| f.name.as_str()))?;
    for row in rows {
        w.write_record(format_row(schema, row))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads feature rows by header name; extra columns are ignored and a
/// missing cell is an error rather than a dropped row.
pub fn read_rows<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let cols = schema
        .features
        .iter()
        .map(|f| {
            header
                .iter()
                .position(|h| *h == f.name)
                .ok_or_else(|| CfxError::Data(format!("feature `{}` missing from header", f.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(cols.len());
        for (fi, &c) in cols.iter().enumerate() {
            let text = rec.get(c).unwrap_or("");
            match parse_cell(schema, fi, text) {
                Ok(Some(cell)) => row.push(cell),
                Ok(None) => {
                    return Err(CfxError::Data(format!(
                        "row {}, column {}: missing or invalid value `{text}`",
                        line + 1,
                        c + 1
                    )))
                }
                Err(msg) => {
                    return Err(CfxError::Data(format!(
                        "row {}, column {}: {msg}",
                        line + 1,
                        c + 1
                    )))
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CfxError::Data("no data rows".into()));
    }
    Ok(rows)
}

/// Reads a CSV whose header holds the schema's features plus one label
/// column. Rows with a missing (`""` or `"?"`) or unparseable cell are
/// dropped and counted.
pub fn load_dataset(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CfxError::Data("no data rows".into()));
    }
    let label_name = schema
        .label
        .clone()
        .unwrap_or_else(|| header.last().cloned().unwrap_or_default());
    let positions: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if header.len() != schema.len() + 1 {
        return Err(CfxError::Data(format!(
            "header has {} columns, expected {} features plus a label",
            header.len(),
            schema.len()
        )));
    }
    let label_col = *positions.get(label_name.as_str()).ok_or_else(|| {
        CfxError::Data(format!("label column `{label_name}` missing from header"))
    })?;
    let mut cols = Vec::with_capacity(schema.len());
    for f in &schema.features {
        let c = *positions
            .get(f.name.as_str())
            .ok_or_else(|| CfxError::Data(format!("feature `{}` missing from header", f.name)))?;
        cols.push(c);
    }

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut dropped = 0;
    let mut seen_any = false;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        seen_any = true;
        let label = rec.get(label_col).unwrap_or("");
        if is_missing(label) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(cols.len());
        let mut complete = true;
        for (fi, &c) in cols.iter().enumerate() {
            match parse_cell(schema, fi, rec.get(c).unwrap_or("")) {
                Ok(Some(cell)) => row.push(cell),
                Ok(None) => {
                    complete = false;
                    break;
                }
                Err(msg) => {
                    return Err(CfxError::Data(format!(
                        "row {}, column {}: {msg}",
                        line + 1,
                        c + 1
                    )))
                }
            }
        }
        if complete {
            rows.push(row);
            raw_labels.push(label.trim().to_string());
        } else {
            dropped += 1;
        }
    }
    if !seen_any || rows.is_empty() {
        return Err(CfxError::Data("no data rows".into()));
    }

    let classes = match &schema.classes {
        Some(c) => c.clone(),
        None => infer_classes(&raw_labels),
    };
    let index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = raw_labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| CfxError::Data(format!("unknown class label `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let mut schema = schema.clone();
    schema.label = Some(label_name);
    Ok(RawTable {
        schema,
        rows,
        labels,
        classes,
        dropped,
    })
}

/// Sorted unique labels; numerically sorted when every label is a number.
fn infer_classes(labels: &[String]) -> Vec<String> {
    let unique: BTreeSet<&String> = labels.iter().collect();
    let mut classes: Vec<String> = unique.into_iter().cloned().collect();
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
        });
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureSpec::continuous("age"),
            FeatureSpec::categorical("color", ["red", "blue"]),
        ])
        .unwrap()
    }

    #[test]
    fn drops_rows_with_missing_cells() {
        let csv = "age,color,y\n1,red,0\n2,,1\n3,blue,1\n4,red,0\n5,blue,1\n";
        let t = read_dataset(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.dropped, 1);
        assert_eq!(t.classes, vec!["0", "1"]);
        assert_eq!(t.rows[1], vec![Cell::Num(3.0), Cell::Cat(1)]);
    }

    #[test]
    fn question_mark_and_garbage_count_as_missing() {
        let csv = "age,color,y\n?,red,0\nabc,red,1\n3,blue,1\n";
        let t = read_dataset(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.dropped, 2);
    }

    #[test]
    fn unknown_category_is_an_error() {
        let csv = "age,color,y\n1,green,0\n";
        let err = read_dataset(csv.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("green"), "{err}");
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn header_mismatch_and_empty_file() {
        let csv = "age,colour,y\n1,red,0\n";
        assert!(read_dataset(csv.as_bytes(), &schema()).is_err());
        let err = read_dataset("".as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("no data rows"));
        let err = read_dataset("age,color,y\n".as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("no data rows"));
    }

    #[test]
    fn label_column_can_be_anywhere_when_named() {
        let csv = "y,age,color\n1,1,red\n0,2,blue\n";
        let t = read_dataset(csv.as_bytes(), &schema().with_label("y")).unwrap();
        assert_eq!(t.labels, vec![1, 0]);
    }

    #[test]
    fn numeric_classes_sort_numerically() {
        assert_eq!(
            infer_classes(&["10".into(), "2".into(), "1".into()]),
            vec!["1", "2", "10"]
        );
    }

    #[test]
    fn accepts_credit_approval_shaped_schema() {
        let mut features = Vec::new();
        for i in 0..4 {
            features.push(FeatureSpec::continuous(format!("c{i}")));
        }
        for i in 0..10 {
            features.push(FeatureSpec::categorical(format!("k{i}"), ["a", "b"]));
        }
        let schema = FeatureSchema::new(features).unwrap();
        let mut csv = String::new();
        let names: Vec<_> = schema.features.iter().map(|f| f.name.clone()).collect();
        csv.push_str(&names.join(","));
        csv.push_str(",approved\n");
        for r in 0..3 {
            let mut cells: Vec<String> = (0..4).map(|i| format!("{}", i + r)).collect();
            cells.extend((0..10).map(|i| if (i + r) % 2 == 0 { "a" } else { "b" }.to_string()));
            cells.push(if r % 2 == 0 { "+" } else { "-" }.to_string());
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        let t = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.schema.layout().width, 4 + 20);
    }
}
