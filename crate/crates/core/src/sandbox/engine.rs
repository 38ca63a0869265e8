//! Read-only query execution against an in-process engine.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::dump::{read_database, to_sql, value_from_ref};
use super::schema::{DatabaseInstance, Row};
use super::SandboxError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    /// The engine raised an exception (syntax, unknown column, ...).
    Engine,
    /// The statement was refused before execution because it would write.
    ReadOnly,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineError {
    pub message: String,
    pub tag: ErrorTag,
}

impl EngineError {
    pub fn new(tag: ErrorTag, message: impl Into<String>) -> Self {
        EngineError { message: message.into(), tag }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutionOutcome {
    EngineError(EngineError),
    ResultSet(ResultSet),
}

impl ExecutionOutcome {
    pub fn is_error(&self) -> bool {
        matches!(self, ExecutionOutcome::EngineError(_))
    }
}

const WRITE_KEYWORDS: [&str; 16] = [
    "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER", "REPLACE", "ATTACH", "DETACH", "PRAGMA", "VACUUM",
    "REINDEX", "ANALYZE", "BEGIN", "COMMIT", "ROLLBACK",
];

fn strip_leading_noise(mut sql: &str) -> &str {
    loop {
        let trimmed = sql.trim_start();
        if let Some(rest) = trimmed.strip_prefix("--") {
            sql = rest.split_once('\n').map_or("", |(_, tail)| tail);
        } else if let Some(rest) = trimmed.strip_prefix("/*") {
            sql = rest.split_once("*/").map_or("", |(_, tail)| tail);
        } else if let Some(rest) = trimmed.strip_prefix('(') {
            sql = rest;
        } else {
            return trimmed;
        }
    }
}

/// Statement-type inspection: only `SELECT`, `WITH` and `VALUES` may run.
fn check_read_only(sql: &str) -> Result<(), EngineError> {
    let body = strip_leading_noise(sql);
    let word: String = body.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let word = word.to_ascii_uppercase();
    if WRITE_KEYWORDS.contains(&word.as_str()) {
        return Err(EngineError::new(
            ErrorTag::ReadOnly,
            format!("{word} statements are not permitted in the sandbox"),
        ));
    }
    Ok(())
}

/// One connection bound to one immutable database. Not shared across threads;
/// open one sandbox per worker.
pub struct Sandbox {
    conn: Connection,
    db_id: String,
    timeout: Duration,
}

impl Sandbox {
    pub fn open(db: &DatabaseInstance) -> Result<Self, SandboxError> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch(&to_sql(db))?;
        conn.execute_batch("PRAGMA query_only = ON;")?;
        Ok(Sandbox { conn, db_id: db.id.clone(), timeout: DEFAULT_TIMEOUT })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn execute(&self, sql: &str) -> ExecutionOutcome {
        self.execute_with_timeout(sql, self.timeout)
    }

    pub fn execute_with_timeout(&self, sql: &str, timeout: Duration) -> ExecutionOutcome {
        match self.run(sql, timeout) {
            Ok(rs) => ExecutionOutcome::ResultSet(rs),
            Err(e) => ExecutionOutcome::EngineError(e),
        }
    }

    fn run(&self, sql: &str, timeout: Duration) -> Result<ResultSet, EngineError> {
        if sql.trim().is_empty() {
            return Err(EngineError::new(ErrorTag::Engine, "empty query"));
        }
        check_read_only(sql)?;

        let engine_err = |e: rusqlite::Error| EngineError::new(ErrorTag::Engine, e.to_string());
        let mut stmt = self.conn.prepare(sql).map_err(engine_err)?;
        if !stmt.readonly() {
            return Err(EngineError::new(ErrorTag::ReadOnly, "statement would modify the database"));
        }

        let expired = Arc::new(AtomicBool::new(false));
        let deadline = Instant::now() + timeout;
        let flag = Arc::clone(&expired);
        self.conn.progress_handler(
            1000,
            Some(move || {
                if Instant::now() >= deadline {
                    flag.store(true, Ordering::Relaxed);
                    true
                } else {
                    false
                }
            }),
        )
        .map_err(engine_err)?;

        let result = (|| {
            let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
            let width = columns.len();
            let mut rows = Vec::new();
            let mut cursor = stmt.query([])?;
            while let Some(row) = cursor.next()? {
                let mut out = Vec::with_capacity(width);
                for i in 0..width {
                    out.push(value_from_ref(row.get_ref(i)?));
                }
                rows.push(out);
            }
            Ok::<_, rusqlite::Error>(ResultSet { columns, rows })
        })();
        let _ = self.conn.progress_handler(0, None::<fn() -> bool>);

        match result {
            Ok(rs) => Ok(rs),
            Err(_) if expired.load(Ordering::Relaxed) => Err(EngineError::new(
                ErrorTag::Timeout,
                format!("timeout: query exceeded {} ms", timeout.as_millis()),
            )),
            Err(e) => Err(engine_err(e)),
        }
    }

    /// Reads the current contents back out of the engine.
    pub fn snapshot(&self) -> Result<DatabaseInstance, SandboxError> {
        read_database(&self.conn, &self.db_id)
    }
}

/// One sandbox per database id.
#[derive(Default)]
pub struct SandboxPool {
    sandboxes: HashMap<String, Sandbox>,
}

impl SandboxPool {
    pub fn open_all<'a>(dbs: impl IntoIterator<Item = &'a DatabaseInstance>) -> Result<Self, SandboxError> {
        let mut pool = SandboxPool::default();
        for db in dbs {
            pool.sandboxes.insert(db.id.clone(), Sandbox::open(db)?);
        }
        Ok(pool)
    }

    pub fn insert(&mut self, sandbox: Sandbox) {
        self.sandboxes.insert(sandbox.db_id.clone(), sandbox);
    }

    pub fn get(&self, db_id: &str) -> Option<&Sandbox> {
        self.sandboxes.get(db_id)
    }

    pub fn len(&self) -> usize {
        self.sandboxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sandboxes.is_empty()
    }
}

/// Convenience wrapper: opens a fresh sandbox for `db` and runs one query.
pub fn execute(db: &DatabaseInstance, sql: &str, timeout: Duration) -> Result<ExecutionOutcome, SandboxError> {
    Ok(Sandbox::open(db)?.execute_with_timeout(sql, timeout))
}
