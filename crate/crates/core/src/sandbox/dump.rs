//! Portable text dumps (`db_<id>.sql`) and the engine-native file form.

use std::fmt::Write as _;
use std::path::Path;

use rusqlite::types::ValueRef;
use rusqlite::fallible_iterator::FallibleIterator;
use rusqlite::{Batch, Connection};

use super::schema::{Column, ColumnType, DatabaseInstance, ForeignKey, SchemaDescription, TableSchema, Value};
use super::SandboxError;

pub(crate) fn quote_text(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn sql_literal(value: &Value) -> String {
    match value {
        Value::Null => "NULL".to_string(),
        Value::Integer(v) => v.to_string(),
        // Debug keeps a decimal point or exponent, so the engine reads a real back.
        Value::Real(v) => format!("{v:?}"),
        Value::Text(s) => quote_text(s),
    }
}

/// Renders the canonical text dump: one transaction with `CREATE TABLE`
/// statements in schema order followed by `INSERT` statements in row order.
pub fn to_sql(db: &DatabaseInstance) -> String {
    let mut out = String::from("BEGIN TRANSACTION;\n");
    for table in &db.schema.tables {
        let mut parts: Vec<String> = table
            .columns
            .iter()
            .map(|c| format!("{} {}", c.name, c.ty.sql_name()))
            .collect();
        if let Some(pk) = &table.primary_key {
            parts.push(format!("PRIMARY KEY ({pk})"));
        }
        for fk in db.schema.foreign_keys.iter().filter(|fk| fk.child_table == table.name) {
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {} ({})",
                fk.child_column, fk.parent_table, fk.parent_column
            ));
        }
        let _ = writeln!(out, "CREATE TABLE {} ({});", table.name, parts.join(", "));
    }
    for (table, rows) in db.schema.tables.iter().zip(&db.rows) {
        for row in rows {
            let values: Vec<String> = row.iter().map(sql_literal).collect();
            let _ = writeln!(out, "INSERT INTO {} VALUES ({});", table.name, values.join(", "));
        }
    }
    out.push_str("COMMIT;\n");
    out
}

const ALLOWED_PREFIXES: [&str; 4] = ["CREATE TABLE", "INSERT INTO", "BEGIN", "COMMIT"];

/// Parses a text dump into a validated [`DatabaseInstance`].
///
/// The dump is replayed into a scratch in-memory engine; only `CREATE TABLE`,
/// `INSERT INTO`, `BEGIN` and `COMMIT` statements are accepted.
pub fn load_database(id: &str, dump: &str) -> Result<DatabaseInstance, SandboxError> {
    let conn = Connection::open_in_memory()?;
    let mut batch = Batch::new(&conn, dump);
    loop {
        let next = batch.next().map_err(|e| SandboxError::Load(e.to_string()))?;
        let Some(mut stmt) = next else { break };
        let text = stmt.expanded_sql().unwrap_or_default();
        let head = text.trim_start().to_ascii_uppercase();
        if !ALLOWED_PREFIXES.iter().any(|p| head.starts_with(p)) {
            let shown: String = text.chars().take(40).collect();
            return Err(SandboxError::Load(format!("unsupported statement in dump: {shown}")));
        }
        stmt.raw_execute().map_err(|e| SandboxError::Load(e.to_string()))?;
    }
    if !conn.is_autocommit() {
        return Err(SandboxError::Load("dump leaves an open transaction".into()));
    }
    let db = read_database(&conn, id)?;
    db.validate()?;
    Ok(db)
}

pub fn load_database_file(path: &Path) -> Result<DatabaseInstance, SandboxError> {
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| SandboxError::Load(format!("bad dump path {}", path.display())))?;
    let id = stem.strip_prefix("db_").unwrap_or(stem);
    load_database(id, &text)
}

/// Reads schema and contents back out of a live connection.
pub(crate) fn read_database(conn: &Connection, id: &str) -> Result<DatabaseInstance, SandboxError> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
    )?;
    let names: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
    let mut schema = SchemaDescription::default();
    for name in &names {
        let mut info = conn.prepare(&format!("PRAGMA table_info(\"{name}\")"))?;
        let cols: Vec<(String, String, i64)> = info
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))?
            .collect::<Result<_, _>>()?;
        let mut columns = Vec::with_capacity(cols.len());
        let mut pk = Vec::new();
        for (col, ty, pk_pos) in cols {
            let ty = ColumnType::from_sql_name(&ty)
                .ok_or_else(|| SandboxError::Load(format!("unsupported column type '{ty}' on {name}.{col}")))?;
            if pk_pos > 0 {
                pk.push(col.clone());
            }
            columns.push(Column { name: col, ty });
        }
        if pk.len() > 1 {
            return Err(SandboxError::Load(format!("composite primary key on '{name}'")));
        }
        schema.tables.push(TableSchema { name: name.clone(), columns, primary_key: pk.pop() });

        let mut fks = conn.prepare(&format!("PRAGMA foreign_key_list(\"{name}\")"))?;
        let mut found: Vec<(i64, ForeignKey)> = fks
            .query_map([], |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    ForeignKey {
                        child_table: name.clone(),
                        child_column: r.get(3)?,
                        parent_table: r.get(2)?,
                        parent_column: r.get::<_, Option<String>>(4)?.unwrap_or_default(),
                    },
                ))
            })?
            .collect::<Result<_, _>>()?;
        // The pragma lists constraints in reverse declaration order.
        found.sort_by_key(|(fk_id, _)| std::cmp::Reverse(*fk_id));
        schema.foreign_keys.extend(found.into_iter().map(|(_, fk)| fk));
    }

    let mut db = DatabaseInstance::empty(id, schema);
    for (ti, table) in db.schema.tables.iter().enumerate() {
        let mut stmt = conn.prepare(&format!("SELECT * FROM \"{}\" ORDER BY rowid", table.name))?;
        let width = table.columns.len();
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            let mut out = Vec::with_capacity(width);
            for i in 0..width {
                out.push(value_from_ref(row.get_ref(i)?));
            }
            db.rows[ti].push(out);
        }
    }
    Ok(db)
}

pub(crate) fn value_from_ref(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Integer(i),
        ValueRef::Real(f) => Value::Real(f),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Text(b.iter().map(|x| format!("{x:02x}")).collect()),
    }
}

/// Writes the engine-native single-file form (`db_<id>.sqlite`).
pub fn write_native(db: &DatabaseInstance, path: &Path) -> Result<(), SandboxError> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let conn = Connection::open_in_memory()?;
    conn.execute_batch(&to_sql(db))?;
    let target = path.to_str().ok_or_else(|| SandboxError::Load(format!("non-utf8 path {}", path.display())))?;
    conn.execute("VACUUM INTO ?1", [target])?;
    Ok(())
}

/// Opens an engine-native file and reads it back into memory.
pub fn load_native(id: &str, path: &Path) -> Result<DatabaseInstance, SandboxError> {
    if !path.exists() {
        return Err(SandboxError::Load(format!("no such database file {}", path.display())));
    }
    let conn = Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let db = read_database(&conn, id)?;
    db.validate()?;
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::schema::Column;

    fn sample() -> DatabaseInstance {
        let schema = SchemaDescription {
            tables: vec![
                TableSchema {
                    name: "team".into(),
                    columns: vec![Column::new("team_id", ColumnType::Integer), Column::new("name", ColumnType::Text)],
                    primary_key: Some("team_id".into()),
                },
                TableSchema {
                    name: "score".into(),
                    columns: vec![
                        Column::new("team_id", ColumnType::Integer),
                        Column::new("points", ColumnType::Real),
                        Column::new("note", ColumnType::Text),
                    ],
                    primary_key: None,
                },
            ],
            foreign_keys: vec![ForeignKey {
                child_table: "score".into(),
                child_column: "team_id".into(),
                parent_table: "team".into(),
                parent_column: "team_id".into(),
            }],
        };
        let mut db = DatabaseInstance::empty("s", schema);
        db.rows[0].push(vec![Value::Integer(1), Value::text("O'Hara; FC")]);
        db.rows[1].push(vec![Value::Integer(1), Value::Real(2.5), Value::Null]);
        db.rows[1].push(vec![Value::Integer(1), Value::Real(3.0), Value::text("  spaced ")]);
        db
    }

    #[test]
    fn dump_round_trips_byte_exactly() {
        let db = sample();
        let text = to_sql(&db);
        let back = load_database("s", &text).unwrap();
        assert_eq!(back, db);
        assert_eq!(to_sql(&back), text);
    }

    #[test]
    fn malformed_dump_is_a_load_error() {
        let err = load_database("x", "CREATE TABLE t (a INTEGER;").unwrap_err();
        assert!(matches!(err, SandboxError::Load(_)), "{err:?}");
    }

    #[test]
    fn foreign_statements_are_refused() {
        let dump = "CREATE TABLE t (a INTEGER);\nCREATE VIEW v AS SELECT a FROM t;\n";
        assert!(matches!(load_database("x", dump), Err(SandboxError::Load(_))));
    }

    #[test]
    fn native_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db_s.sqlite");
        let db = sample();
        write_native(&db, &path).unwrap();
        assert_eq!(load_native("s", &path).unwrap(), db);
    }
}
