//! In-memory microdata table, CSV ingestion/egress and missing-value handling.
//!
//! Every cell is stored as text next to a declared [`AttributeKind`]. Typed
//! kinds are validated once at load time; afterwards all stages operate on
//! strings, which keeps generalised labels ("20-29", "> 2019") and raw values
//! in a single representation.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel stored in place of every empty or null-like cell.
pub const MISSING: &str = "missing";

/// Default drop threshold for sparse attributes.
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.85;

const NULL_LIKE: [&str; 5] = ["na", "n/a", "null", "nan", "none"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Numeric,
    Year,
    Categorical,
    FreeText,
}

/// Attribute role in the DID/QID/SA/NSA taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "DID")]
    Did,
    #[serde(rename = "QID")]
    Qid,
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "NSA")]
    Nsa,
}

impl Role {
    pub fn code(self) -> &'static str {
        match self {
            Role::Did => "DID",
            Role::Qid => "QID",
            Role::Sa => "SA",
            Role::Nsa => "NSA",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Role::Did => "Direct identifier",
            Role::Qid => "Quasi-identifier",
            Role::Sa => "Sensitive attribute",
            Role::Nsa => "Non-sensitive attribute",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DID" => Ok(Role::Did),
            "QID" => Ok(Role::Qid),
            "SA" => Ok(Role::Sa),
            "NSA" => Ok(Role::Nsa),
            other => Err(format!("unknown role '{other}' (expected DID, QID, SA or NSA)")),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Schema entry for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMeta {
    pub name: String,
    pub kind: AttributeKind,
    /// Manual role override; survives automatic classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_role: Option<Role>,
    /// Declared rank order of values, used as the ordered ground distance
    /// when this attribute is evaluated as a sensitive attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_order: Option<Vec<String>>,
}

impl AttributeMeta {
    pub fn new(name: impl Into<String>, kind: AttributeKind) -> Self {
        Self {
            name: name.into(),
            kind,
            declared_role: None,
            value_order: None,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.declared_role = Some(role);
        self
    }
}

/// Schema document: `{"attributes": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttributeMeta>,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv parse error at row {row}, column {column}: {message}")]
    Parse { row: u64, column: u64, message: String },
    #[error("header does not match schema (missing from header: [{}]; not in schema: [{}])", missing.join(", "), unexpected.join(", "))]
    SchemaMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("attribute '{attribute}' row {row}: value '{value}' is not a valid {kind:?}")]
    Type {
        attribute: String,
        row: usize,
        value: String,
        kind: AttributeKind,
    },
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("record {row} has {found} cells, expected {expected}")]
    Arity { row: usize, found: usize, expected: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered rows × named attributes of text cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    attributes: Vec<AttributeMeta>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<AttributeMeta>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        validate_schema(&attributes)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != attributes.len() {
                return Err(TableError::Arity {
                    row: i,
                    found: row.len(),
                    expected: attributes.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            attributes,
            rows,
        })
    }

    pub fn attributes(&self) -> &[AttributeMeta] {
        &self.attributes
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn attribute_names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn index_of(&self, attribute: &str) -> Result<usize, TableError> {
        self.attributes
            .iter()
            .position(|a| a.name == attribute)
            .ok_or_else(|| TableError::UnknownAttribute(attribute.to_string()))
    }

    pub fn meta(&self, attribute: &str) -> Result<&AttributeMeta, TableError> {
        Ok(&self.attributes[self.index_of(attribute)?])
    }

    /// Cells of one attribute, in row order.
    pub fn column(&self, attribute: &str) -> Result<impl Iterator<Item = &str> + '_, TableError> {
        let idx = self.index_of(attribute)?;
        Ok(self.rows.iter().map(move |r| r[idx].as_str()))
    }

    /// New table with one attribute's cells rewritten by `f(row, cell)`.
    pub fn map_column<E>(
        &self,
        attribute: &str,
        mut f: impl FnMut(usize, &str) -> Result<String, E>,
    ) -> Result<Table, E>
    where
        E: From<TableError>,
    {
        let idx = self.index_of(attribute)?;
        let mut rows = self.rows.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            row[idx] = f(i, &row[idx])?;
        }
        Ok(Table {
            name: self.name.clone(),
            attributes: self.attributes.clone(),
            rows,
        })
    }

    /// New table without the named attribute.
    pub fn without_attribute(&self, attribute: &str) -> Result<Table, TableError> {
        let idx = self.index_of(attribute)?;
        let mut attributes = self.attributes.clone();
        attributes.remove(idx);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.remove(idx);
                r
            })
            .collect();
        Ok(Table {
            name: self.name.clone(),
            attributes,
            rows,
        })
    }

    /// Replace attribute metadata (same names, same order).
    pub fn with_attributes(&self, attributes: Vec<AttributeMeta>) -> Result<Table, TableError> {
        let same = attributes.len() == self.attributes.len()
            && attributes.iter().zip(&self.attributes).all(|(a, b)| a.name == b.name);
        if !same {
            return Err(TableError::InvalidSchema(
                "replacement metadata must keep attribute names and order".into(),
            ));
        }
        Ok(Table {
            name: self.name.clone(),
            attributes,
            rows: self.rows.clone(),
        })
    }
}

fn validate_schema(attributes: &[AttributeMeta]) -> Result<(), TableError> {
    let mut seen = HashSet::new();
    for a in attributes {
        if a.name.trim().is_empty() {
            return Err(TableError::InvalidSchema("attribute names must be non-empty".into()));
        }
        if !seen.insert(a.name.as_str()) {
            return Err(TableError::InvalidSchema(format!(
                "duplicate attribute name '{}'",
                a.name
            )));
        }
    }
    Ok(())
}

/// True for cells that normalise to [`MISSING`].
pub fn is_null_like(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || NULL_LIKE.iter().any(|n| t.eq_ignore_ascii_case(n))
}

/// Accepts a decimal comma ("23,8") and returns the decimal-point form.
fn normalise_decimal(cell: &str) -> String {
    let t = cell.trim();
    let mut parts = t.splitn(2, ',');
    match (parts.next(), parts.next()) {
        (Some(int), Some(frac))
            if !frac.is_empty()
                && frac.bytes().all(|b| b.is_ascii_digit())
                && int.trim_start_matches(['-', '+']).bytes().all(|b| b.is_ascii_digit())
                && !int.trim_start_matches(['-', '+']).is_empty() =>
        {
            format!("{int}.{frac}")
        }
        _ => cell.to_string(),
    }
}

/// Parses a numeric cell. Rejects NaN and infinities.
pub fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a year cell: exactly four ASCII digits.
pub fn parse_year(cell: &str) -> Option<i32> {
    let t = cell.trim();
    if t.len() == 4 && t.bytes().all(|b| b.is_ascii_digit()) {
        t.parse().ok()
    } else {
        None
    }
}

/// Reads an RFC-4180 CSV with a header row. Columns are reordered to schema
/// order; missing-value normalisation is not applied.
pub fn load_csv<R: Read>(name: impl Into<String>, source: R, schema: &[AttributeMeta]) -> Result<Table, TableError> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);

    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();

    let header_set: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    let schema_set: BTreeSet<&str> = schema.iter().map(|a| a.name.as_str()).collect();
    if header_set != schema_set || header_set.len() != header.len() {
        let missing = schema_set.difference(&header_set).map(|s| s.to_string()).collect();
        let mut unexpected: Vec<String> = header_set.difference(&schema_set).map(|s| s.to_string()).collect();
        if header_set.len() != header.len() {
            let mut seen = HashSet::new();
            for h in &header {
                if !seen.insert(h) {
                    unexpected.push(format!("{h} (duplicate)"));
                }
            }
        }
        return Err(TableError::SchemaMismatch { missing, unexpected });
    }

    let positions: Vec<usize> = schema
        .iter()
        .map(|a| header.iter().position(|h| *h == a.name).expect("checked above"))
        .collect();

    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let mut row = Vec::with_capacity(schema.len());
        for (meta, &pos) in schema.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or_default();
            row.push(check_typed(meta, raw, row_idx)?);
        }
        rows.push(row);
    }

    Table::new(name, schema.to_vec(), rows)
}

fn check_typed(meta: &AttributeMeta, raw: &str, row: usize) -> Result<String, TableError> {
    if is_null_like(raw) || raw == MISSING {
        return Ok(raw.to_string());
    }
    let type_error = || TableError::Type {
        attribute: meta.name.clone(),
        row,
        value: raw.to_string(),
        kind: meta.kind,
    };
    match meta.kind {
        AttributeKind::Numeric => {
            let cell = normalise_decimal(raw);
            parse_number(&cell).ok_or_else(type_error)?;
            Ok(cell)
        }
        AttributeKind::Year => {
            parse_year(raw).ok_or_else(type_error)?;
            Ok(raw.to_string())
        }
        AttributeKind::Categorical | AttributeKind::FreeText => Ok(raw.to_string()),
    }
}

fn csv_error(e: csv::Error) -> TableError {
    let (row, column) = match e.position() {
        Some(p) => (p.line(), p.record()),
        None => (0, 0),
    };
    let column = match e.kind() {
        csv::ErrorKind::UnequalLengths { len, .. } => *len,
        _ => column,
    };
    TableError::Parse {
        row,
        column,
        message: e.to_string(),
    }
}

/// Writes the table as RFC-4180 CSV with a header row.
pub fn write_csv<W: Write>(table: &Table, sink: W) -> Result<(), TableError> {
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(sink);
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => TableError::Io(io),
        other => TableError::Io(std::io::Error::other(format!("{other:?}"))),
    };
    writer
        .write_record(table.attributes.iter().map(|a| a.name.as_str()))
        .map_err(to_io)?;
    for row in &table.rows {
        writer.write_record(row).map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// CSV bytes of a table.
pub fn to_csv_bytes(table: &Table) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Per-attribute missing count after normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingStat {
    pub attribute: String,
    pub missing_count: usize,
    pub missing_fraction: f64,
}

/// Replaces every empty or null-like cell with [`MISSING`].
pub fn normalize_missing(table: &Table) -> (Table, Vec<MissingStat>) {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| {
                    if is_null_like(c) {
                        MISSING.to_string()
                    } else {
                        c.clone()
                    }
                })
                .collect()
        })
        .collect();
    let normalised = Table {
        name: table.name.clone(),
        attributes: table.attributes.clone(),
        rows,
    };
    let stats = missing_stats(&normalised);
    (normalised, stats)
}

/// Counts [`MISSING`] cells per attribute. Fractions are 0 for an empty table.
pub fn missing_stats(table: &Table) -> Vec<MissingStat> {
    let n = table.row_count();
    table
        .attributes
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let missing_count = table.rows.iter().filter(|r| r[j] == MISSING).count();
            MissingStat {
                attribute: a.name.clone(),
                missing_count,
                missing_fraction: if n == 0 { 0.0 } else { missing_count as f64 / n as f64 },
            }
        })
        .collect()
}

/// Drops attributes whose missing fraction is strictly above `threshold`.
pub fn drop_sparse_attributes(table: &Table, threshold: f64) -> (Table, Vec<MissingStat>) {
    let n = table.row_count();
    let dropped: Vec<MissingStat> = missing_stats(table)
        .into_iter()
        // count/n > threshold, compared without dividing
        .filter(|s| n > 0 && s.missing_count as f64 > threshold * n as f64)
        .collect();
    let keep: Vec<usize> = table
        .attributes
        .iter()
        .enumerate()
        .filter(|(_, a)| !dropped.iter().any(|d| d.attribute == a.name))
        .map(|(i, _)| i)
        .collect();
    let attributes = keep.iter().map(|&i| table.attributes[i].clone()).collect();
    let rows = table
        .rows
        .iter()
        .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
        .collect();
    (
        Table {
            name: table.name.clone(),
            attributes,
            rows,
        },
        dropped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(names: &[&str]) -> Vec<AttributeMeta> {
        names
            .iter()
            .map(|n| AttributeMeta::new(*n, AttributeKind::Categorical))
            .collect()
    }

    fn single_column(values: &[&str]) -> Table {
        Table::new(
            "t",
            schema(&["a"]),
            values.iter().map(|v| vec![v.to_string()]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn column_order_follows_schema() {
        let csv = "b,a\n1,2\n3,4\n";
        let t = load_csv("t", csv.as_bytes(), &schema(&["a", "b"])).unwrap();
        assert_eq!(t.attribute_names(), vec!["a", "b"]);
        assert_eq!(t.rows()[0], vec!["2", "1"]);
    }

    #[test]
    fn header_only_gives_empty_table() {
        let t = load_csv("t", "a,b\n".as_bytes(), &schema(&["a", "b"])).unwrap();
        assert_eq!(t.row_count(), 0);
    }

    #[test]
    fn schema_mismatch_names_missing_attribute() {
        let err = load_csv("t", "a,b,c\n1,2,3\n".as_bytes(), &schema(&["a", "b", "c", "d"])).unwrap_err();
        match err {
            TableError::SchemaMismatch { missing, unexpected } => {
                assert_eq!(missing, vec!["d"]);
                assert!(unexpected.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_row_reports_position() {
        let err = load_csv("t", "a,b\n1,2\n3\n".as_bytes(), &schema(&["a", "b"])).unwrap_err();
        assert!(matches!(err, TableError::Parse { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn typed_cells_are_checked() {
        let s = vec![
            AttributeMeta::new("bmi", AttributeKind::Numeric),
            AttributeMeta::new("year", AttributeKind::Year),
        ];
        let t = load_csv("t", "bmi,year\n\"23,8\",1997\n,NA\n".as_bytes(), &s).unwrap();
        assert_eq!(t.rows()[0], vec!["23.8", "1997"]);

        let err = load_csv("t", "bmi,year\nabc,1997\n".as_bytes(), &s).unwrap_err();
        assert!(
            matches!(&err, TableError::Type { attribute, row: 0, .. } if attribute == "bmi"),
            "{err:?}"
        );
        let err = load_csv("t", "bmi,year\n1.0,97\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(&err, TableError::Type { attribute, .. } if attribute == "year"));
    }

    #[test]
    fn null_like_cells_become_missing() {
        let t = single_column(&["", "  ", "NA", "n/a", "Null", "NaN", "none", "x"]);
        let (n, stats) = normalize_missing(&t);
        let col: Vec<&str> = n.column("a").unwrap().collect();
        assert_eq!(&col[..7], &[MISSING; 7]);
        assert_eq!(col[7], "x");
        assert_eq!(stats[0].missing_count, 7);
        assert_eq!(stats[0].missing_fraction, 7.0 / 8.0);
    }

    #[test]
    fn missing_fraction_examples() {
        let mut values = vec![""; 440];
        values.extend(std::iter::repeat_n("yes", 60));
        let (_, stats) = normalize_missing(&single_column(&values));
        assert_eq!(stats[0].missing_fraction, 0.88);

        let mut values = vec![""; 918];
        values.extend(std::iter::repeat_n("yes", 82));
        let (_, stats) = normalize_missing(&single_column(&values));
        assert_eq!(stats[0].missing_fraction, 0.918);

        let (_, stats) = normalize_missing(&single_column(&["a", "b"]));
        assert_eq!(stats[0].missing_fraction, 0.0);
    }

    #[test]
    fn empty_table_has_zero_missing_fraction() {
        let t = Table::new("t", schema(&["a"]), vec![]).unwrap();
        let (_, stats) = normalize_missing(&t);
        assert_eq!(stats[0].missing_fraction, 0.0);
    }

    #[test]
    fn sparse_drop_is_strict() {
        // 88 of 100 missing in a, exactly 85 of 100 missing in b
        let rows = (0..100)
            .map(|i| {
                vec![
                    if i < 88 { MISSING.into() } else { "x".into() },
                    if i < 85 { MISSING.into() } else { "y".into() },
                    "z".to_string(),
                ]
            })
            .collect();
        let t = Table::new("t", schema(&["a", "b", "c"]), rows).unwrap();
        let (kept, dropped) = drop_sparse_attributes(&t, DEFAULT_DROP_THRESHOLD);
        assert_eq!(kept.attribute_names(), vec!["b", "c"]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].attribute, "a");
        assert_eq!(
            kept.column("b").unwrap().collect::<Vec<_>>(),
            t.column("b").unwrap().collect::<Vec<_>>()
        );

        let (same, none) = drop_sparse_attributes(&kept, DEFAULT_DROP_THRESHOLD);
        assert_eq!(same, kept);
        assert!(none.is_empty());
    }

    #[test]
    fn commas_are_quoted_on_write() {
        let t = single_column(&["a,b", "plain", "say \"hi\""]);
        let bytes = to_csv_bytes(&t);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text, "a\n\"a,b\"\nplain\n\"say \"\"hi\"\"\"\n");
        let back = load_csv("t", bytes.as_slice(), t.attributes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_only_output_for_empty_table() {
        let t = Table::new("t", schema(&["a", "b"]), vec![]).unwrap();
        assert_eq!(to_csv_bytes(&t), b"a,b\n");
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Table::new("t", schema(&["a", "a"]), vec![]).is_err());
        assert!(Table::new("t", schema(&[""]), vec![]).is_err());
    }
}
