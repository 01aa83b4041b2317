//! Shared inputs for the criterion benches; see `benches/pipeline.rs`.

use epi_sql_core::spider::{ColumnDef, DatabaseSchema, ForeignKeyDef, TableDef};

/// A three-table schema representative of prompt-rendering workloads.
pub fn sample_schema() -> DatabaseSchema {
    let table = |name: &str, cols: &[(&str, &str)]| TableDef {
        name: name.to_string(),
        columns: cols
            .iter()
            .map(|(n, t)| ColumnDef {
                name: n.to_string(),
                col_type: t.to_string(),
            })
            .collect(),
    };
    DatabaseSchema {
        db_id: "department_management".into(),
        tables: vec![
            table(
                "department",
                &[
                    ("Department_ID", "int"),
                    ("Name", "text"),
                    ("Creation", "text"),
                    ("Ranking", "int"),
                    ("Budget_in_Billions", "real"),
                    ("Num_Employees", "real"),
                ],
            ),
            table(
                "head",
                &[
                    ("head_ID", "int"),
                    ("name", "text"),
                    ("born_state", "text"),
                    ("age", "real"),
                ],
            ),
            table(
                "management",
                &[
                    ("department_ID", "int"),
                    ("head_ID", "int"),
                    ("temporary_acting", "text"),
                ],
            ),
        ],
        primary_keys: vec![
            vec!["Department_ID".into()],
            vec!["head_ID".into()],
            vec!["department_ID".into(), "head_ID".into()],
        ],
        foreign_keys: vec![
            ForeignKeyDef {
                table: "management".into(),
                column: "head_ID".into(),
                ref_table: "head".into(),
                ref_column: "head_ID".into(),
            },
            ForeignKeyDef {
                table: "management".into(),
                column: "department_ID".into(),
                ref_table: "department".into(),
                ref_column: "Department_ID".into(),
            },
        ],
    }
}
