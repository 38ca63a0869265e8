//! Relational schema and populated database instances.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SandboxError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
}

impl ColumnType {
    pub fn sql_name(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "REAL",
            ColumnType::Text => "TEXT",
        }
    }

    pub fn from_sql_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_uppercase().as_str() {
            "INTEGER" => Some(ColumnType::Integer),
            "REAL" => Some(ColumnType::Real),
            "TEXT" => Some(ColumnType::Text),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: &str, ty: ColumnType) -> Self {
        Column { name: name.to_string(), ty }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_key: Option<String>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// `child_table.child_column -> parent_table.parent_column`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescription {
    pub tables: Vec<TableSchema>,
    pub foreign_keys: Vec<ForeignKey>,
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl SchemaDescription {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    /// Checks naming rules, uniqueness, and that every foreign key resolves.
    pub fn validate(&self) -> Result<(), SandboxError> {
        let mut table_names = HashSet::new();
        for table in &self.tables {
            if !is_identifier(&table.name) {
                return Err(SandboxError::Schema(format!("invalid table name '{}'", table.name)));
            }
            if !table_names.insert(table.name.as_str()) {
                return Err(SandboxError::Schema(format!("duplicate table '{}'", table.name)));
            }
            if table.columns.is_empty() {
                return Err(SandboxError::Schema(format!("table '{}' has no columns", table.name)));
            }
            let mut column_names = HashSet::new();
            for column in &table.columns {
                if !is_identifier(&column.name) {
                    return Err(SandboxError::Schema(format!(
                        "invalid column name '{}.{}'",
                        table.name, column.name
                    )));
                }
                if !column_names.insert(column.name.as_str()) {
                    return Err(SandboxError::Schema(format!(
                        "duplicate column '{}.{}'",
                        table.name, column.name
                    )));
                }
            }
            if let Some(pk) = &table.primary_key {
                if table.column_index(pk).is_none() {
                    return Err(SandboxError::Schema(format!(
                        "primary key '{}.{}' is not a column",
                        table.name, pk
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            let child = self.table(&fk.child_table).ok_or_else(|| {
                SandboxError::Schema(format!("foreign key on unknown table '{}'", fk.child_table))
            })?;
            if child.column_index(&fk.child_column).is_none() {
                return Err(SandboxError::Schema(format!(
                    "foreign key on unknown column '{}.{}'",
                    fk.child_table, fk.child_column
                )));
            }
            let parent = self.table(&fk.parent_table).ok_or_else(|| {
                SandboxError::Schema(format!("foreign key references unknown table '{}'", fk.parent_table))
            })?;
            if parent.column_index(&fk.parent_column).is_none() {
                return Err(SandboxError::Schema(format!(
                    "foreign key references unknown column '{}.{}'",
                    fk.parent_table, fk.parent_column
                )));
            }
        }
        Ok(())
    }
}

/// A single stored cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    fn matches(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Value::Null, _)
                | (Value::Integer(_), ColumnType::Integer)
                | (Value::Real(_), ColumnType::Real)
                | (Value::Text(_), ColumnType::Text)
        )
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Key used for foreign-key lookups. Reals never participate in keys here.
    fn key(&self) -> Option<KeyValue<'_>> {
        match self {
            Value::Null | Value::Real(_) => None,
            Value::Integer(v) => Some(KeyValue::Int(*v)),
            Value::Text(s) => Some(KeyValue::Text(s)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "NULL"),
            Value::Integer(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
            Value::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum KeyValue<'a> {
    Int(i64),
    Text(&'a str),
}

pub type Row = Vec<Value>;

/// A populated database: schema plus rows, one row list per schema table in
/// schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatabaseInstance {
    pub id: String,
    pub schema: SchemaDescription,
    pub rows: Vec<Vec<Row>>,
}

impl DatabaseInstance {
    pub fn empty(id: impl Into<String>, schema: SchemaDescription) -> Self {
        let rows = vec![Vec::new(); schema.tables.len()];
        DatabaseInstance { id: id.into(), schema, rows }
    }

    pub fn table_rows(&self, table: &str) -> Option<&[Row]> {
        self.schema.table_index(table).map(|i| self.rows[i].as_slice())
    }

    pub fn table_rows_mut(&mut self, table: &str) -> Option<&mut Vec<Row>> {
        self.schema.table_index(table).map(move |i| &mut self.rows[i])
    }

    pub fn row_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Schema checks, per-row arity and type checks, then relational integrity.
    pub fn validate(&self) -> Result<(), SandboxError> {
        self.schema.validate()?;
        if self.rows.len() != self.schema.tables.len() {
            return Err(SandboxError::Schema(format!(
                "{} row groups for {} tables",
                self.rows.len(),
                self.schema.tables.len()
            )));
        }
        for (table, rows) in self.schema.tables.iter().zip(&self.rows) {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != table.columns.len() {
                    return Err(SandboxError::Schema(format!(
                        "row {i} of '{}' has arity {}, expected {}",
                        table.name,
                        row.len(),
                        table.columns.len()
                    )));
                }
                for (value, column) in row.iter().zip(&table.columns) {
                    if !value.matches(column.ty) {
                        return Err(SandboxError::Schema(format!(
                            "row {i} of '{}': value {value} does not fit column '{}' ({:?})",
                            table.name, column.name, column.ty
                        )));
                    }
                    if let Value::Real(v) = value {
                        if !v.is_finite() {
                            return Err(SandboxError::Schema(format!(
                                "row {i} of '{}': non-finite real in '{}'",
                                table.name, column.name
                            )));
                        }
                    }
                }
            }
        }
        self.check_integrity()
    }

    fn check_integrity(&self) -> Result<(), SandboxError> {
        let mut parent_keys: HashMap<(&str, &str), HashSet<KeyValue<'_>>> = HashMap::new();
        for fk in &self.schema.foreign_keys {
            let entry = (fk.parent_table.as_str(), fk.parent_column.as_str());
            if parent_keys.contains_key(&entry) {
                continue;
            }
            let ti = self.schema.table_index(&fk.parent_table).expect("validated");
            let ci = self.schema.tables[ti].column_index(&fk.parent_column).expect("validated");
            let keys = self.rows[ti].iter().filter_map(|r| r[ci].key()).collect();
            parent_keys.insert(entry, keys);
        }
        for fk in &self.schema.foreign_keys {
            let keys = &parent_keys[&(fk.parent_table.as_str(), fk.parent_column.as_str())];
            let ti = self.schema.table_index(&fk.child_table).expect("validated");
            let ci = self.schema.tables[ti].column_index(&fk.child_column).expect("validated");
            for (i, row) in self.rows[ti].iter().enumerate() {
                if matches!(row[ci], Value::Null) {
                    continue;
                }
                let found = row[ci].key().is_some_and(|k| keys.contains(&k));
                if !found {
                    return Err(SandboxError::Integrity(format!(
                        "{}.{} = {} in row {i} has no parent in {}.{}",
                        fk.child_table, fk.child_column, row[ci], fk.parent_table, fk.parent_column
                    )));
                }
            }
        }
        Ok(())
    }
}
