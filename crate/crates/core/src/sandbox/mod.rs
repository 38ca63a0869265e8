//! In-process relational sandbox: database instances, read-only execution and
//! canonical result comparison.

mod canon;
mod dump;
mod engine;
mod schema;

pub use canon::{canonicalize, numbers_close, CanonicalAnswer, Scalar, ABS_TOLERANCE, REL_TOLERANCE};
pub use dump::{load_database, load_database_file, load_native, to_sql, write_native};
pub use engine::{execute, EngineError, ErrorTag, ExecutionOutcome, ResultSet, Sandbox, SandboxPool, DEFAULT_TIMEOUT};
pub use schema::{Column, ColumnType, DatabaseInstance, ForeignKey, Row, SchemaDescription, TableSchema, Value};

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("malformed database dump: {0}")]
    Load(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("engine: {0}")]
    Engine(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
