//! Spider-format corpus ingestion: split files, schema catalog, DDL rendering.
//!
//! The expected on-disk layout follows the Spider distribution:
//! a JSON split file (array of `{question, query, db_id}` records), a tables
//! metadata file (`table_names_original`, `column_names_original`,
//! `column_types`, `primary_keys`, `foreign_keys`), and SQLite database files
//! under `db_root/<db_id>/<db_id>.sqlite`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// One Text-to-SQL example: a natural-language question against one database.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    /// Stable identifier, `<split name>-<index>`.
    pub id: String,
    pub question: String,
    pub db_id: String,
    /// Gold SQL, absent on inference-only splits.
    pub gold_sql: Option<String>,
}

impl TaskInstance {
    /// Returns the gold SQL or errors; most pipeline stages require it.
    pub fn gold(&self) -> Result<&str> {
        self.gold_sql
            .as_deref()
            .ok_or_else(|| Error::Config(format!("task {} has no gold query", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    /// Type string passed through verbatim from the metadata (uppercased at
    /// render time).
    pub col_type: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

/// One foreign-key edge, already resolved from column indices to names.
#[derive(Debug, Clone, PartialEq)]
pub struct ForeignKeyDef {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

/// Tables, columns and keys of one database.
#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    /// Primary-key column names per table, aligned with `tables`; empty when
    /// the table has none. Composite keys keep metadata order.
    pub primary_keys: Vec<Vec<String>>,
    /// Foreign keys in metadata order.
    pub foreign_keys: Vec<ForeignKeyDef>,
}

/// Lookup from `db_id` to schema plus the root of the database files.
#[derive(Debug, Clone)]
pub struct SchemaCatalog {
    schemas: BTreeMap<String, DatabaseSchema>,
    db_root: PathBuf,
}

impl SchemaCatalog {
    pub fn schema(&self, db_id: &str) -> Result<&DatabaseSchema> {
        self.schemas
            .get(db_id)
            .ok_or_else(|| Error::UnknownDatabase {
                db_id: db_id.to_string(),
            })
    }

    /// Path of the SQLite file for a database, per the Spider layout.
    pub fn db_path(&self, db_id: &str) -> PathBuf {
        self.db_root.join(db_id).join(format!("{db_id}.sqlite"))
    }

    pub fn db_root(&self) -> &Path {
        &self.db_root
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    /// Errors if any task references a database missing from the catalog.
    pub fn validate_split(&self, split: &[TaskInstance]) -> Result<()> {
        for task in split {
            self.schema(&task.db_id)?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawExample {
    question: String,
    #[serde(default)]
    query: Option<String>,
    db_id: String,
}

/// Loads a Spider split file into task instances, order preserved.
///
/// Ids are assigned sequentially as `<file stem>-<index>`. Records with a
/// missing or empty `query` are accepted with `gold_sql` absent.
pub fn load_split(examples_path: &Path) -> Result<Vec<TaskInstance>> {
    let text = fs::read_to_string(examples_path).map_err(|e| Error::io(examples_path, e))?;
    let records: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::json(examples_path, e))?;
    let stem = examples_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".to_string());

    let mut out = Vec::with_capacity(records.len());
    for (index, value) in records.into_iter().enumerate() {
        let raw: RawExample =
            serde_json::from_value(value).map_err(|e| Error::MalformedRecord {
                path: examples_path.to_path_buf(),
                index,
                reason: e.to_string(),
            })?;
        if raw.question.trim().is_empty() {
            return Err(Error::MalformedRecord {
                path: examples_path.to_path_buf(),
                index,
                reason: "empty question".to_string(),
            });
        }
        let gold_sql = raw.query.filter(|q| !q.trim().is_empty());
        out.push(TaskInstance {
            id: format!("{stem}-{index}"),
            question: raw.question,
            db_id: raw.db_id,
            gold_sql,
        });
    }
    Ok(out)
}

/// `primary_keys` entries are plain column indices in the original Spider
/// metadata and index lists in later revisions; both are accepted.
#[derive(Deserialize)]
#[serde(untagged)]
enum PkEntry {
    Single(usize),
    Composite(Vec<usize>),
}

#[derive(Deserialize)]
struct RawTables {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<PkEntry>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Loads the tables metadata file and resolves key indices to names.
pub fn load_catalog(tables_path: &Path, db_root: &Path) -> Result<SchemaCatalog> {
    let err = |reason: String| Error::SchemaLoad {
        path: tables_path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(tables_path).map_err(|e| Error::io(tables_path, e))?;
    let entries: Vec<RawTables> =
        serde_json::from_str(&text).map_err(|e| Error::json(tables_path, e))?;
    if !db_root.is_dir() {
        return Err(Error::io(
            db_root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "db_root is not a directory"),
        ));
    }

    let mut schemas = BTreeMap::new();
    for raw in entries {
        let db_id = raw.db_id.clone();
        if raw.column_names_original.len() != raw.column_types.len() {
            return Err(err(format!(
                "{db_id}: column_names_original and column_types lengths differ"
            )));
        }
        let mut tables: Vec<TableDef> = raw
            .table_names_original
            .iter()
            .map(|name| TableDef {
                name: name.clone(),
                columns: Vec::new(),
            })
            .collect();
        {
            let names: HashSet<&str> = raw
                .table_names_original
                .iter()
                .map(|s| s.as_str())
                .collect();
            if names.len() != tables.len() {
                return Err(err(format!("{db_id}: duplicate table name")));
            }
        }

        // Column index -> (table index, column name); index 0 is the "*"
        // pseudo-column with table -1 and is never a valid key endpoint.
        let mut col_owner: Vec<Option<(usize, String)>> = Vec::new();
        for (idx, ((table_idx, col_name), _)) in raw
            .column_names_original
            .iter()
            .zip(raw.column_types.iter())
            .enumerate()
        {
            if *table_idx < 0 {
                col_owner.push(None);
                continue;
            }
            let t = *table_idx as usize;
            if t >= tables.len() {
                return Err(err(format!(
                    "{db_id}: column {idx} references missing table {table_idx}"
                )));
            }
            tables[t].columns.push(ColumnDef {
                name: col_name.clone(),
                col_type: raw.column_types[idx].clone(),
            });
            col_owner.push(Some((t, col_name.clone())));
        }

        let resolve = |col_idx: usize, what: &str| -> Result<(usize, String)> {
            col_owner
                .get(col_idx)
                .and_then(|c| c.clone())
                .ok_or_else(|| {
                    err(format!(
                        "{db_id}: {what} column index {col_idx} out of range"
                    ))
                })
        };

        let mut primary_keys = vec![Vec::new(); tables.len()];
        let flat_pks: Vec<Vec<usize>> = raw
            .primary_keys
            .into_iter()
            .map(|e| match e {
                PkEntry::Single(i) => vec![i],
                PkEntry::Composite(v) => v,
            })
            .collect();
        for group in flat_pks {
            for col_idx in group {
                let (t, name) = resolve(col_idx, "primary key")?;
                primary_keys[t].push(name);
            }
        }

        let mut foreign_keys = Vec::new();
        for (src, dst) in raw.foreign_keys {
            let (src_t, src_c) = resolve(src, "foreign key")?;
            let (dst_t, dst_c) = resolve(dst, "foreign key")?;
            foreign_keys.push(ForeignKeyDef {
                table: tables[src_t].name.clone(),
                column: src_c,
                ref_table: tables[dst_t].name.clone(),
                ref_column: dst_c,
            });
        }

        let schema = DatabaseSchema {
            db_id: db_id.clone(),
            tables,
            primary_keys,
            foreign_keys,
        };
        if schemas.insert(db_id.clone(), schema).is_some() {
            return Err(err(format!("duplicate db_id '{db_id}'")));
        }
    }

    Ok(SchemaCatalog {
        schemas,
        db_root: db_root.to_path_buf(),
    })
}

/// Renders a schema as the CREATE TABLE text used in prompts.
///
/// One block per table in catalog order: columns one per line with their
/// declared type uppercased, then a single `PRIMARY KEY (...)` clause when
/// the table has one, then `FOREIGN KEY(col) REFERENCES table(col)` lines in
/// metadata order. Deterministic; no trailing newline.
pub fn render_schema(schema: &DatabaseSchema) -> String {
    let mut blocks = Vec::with_capacity(schema.tables.len());
    for (t_idx, table) in schema.tables.iter().enumerate() {
        let mut items: Vec<String> = table
            .columns
            .iter()
            .map(|c| format!("{} {}", c.name, c.col_type.to_uppercase()))
            .collect();
        let pk = &schema.primary_keys[t_idx];
        if !pk.is_empty() {
            items.push(format!("PRIMARY KEY ({})", pk.join(",")));
        }
        for fk in schema
            .foreign_keys
            .iter()
            .filter(|fk| fk.table == table.name)
        {
            items.push(format!(
                "FOREIGN KEY({}) REFERENCES {}({})",
                fk.column, fk.ref_table, fk.ref_column
            ));
        }
        blocks.push(format!(
            "CREATE TABLE {} (\n{}\n);",
            table.name,
            items.join(",\n")
        ));
    }
    blocks.join("\n")
}
