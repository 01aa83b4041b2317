//! Golden-file tests: every prompt builder must reproduce its frozen
//! fixture byte for byte, and schema rendering must reproduce the DDL those
//! prompts embed.

use std::path::{Path, PathBuf};

use epi_sql_core::prompt::{
    build_epi_context, build_epigen, build_sqlgen_epi, build_zero_shot, Demonstration, EpigenSeed,
};
use epi_sql_core::spider::{load_catalog, render_schema};

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/prompts")
        .join(name)
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

fn spider_fixture_catalog(db_root: &Path) -> epi_sql_core::SchemaCatalog {
    let tables =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/spider/tables_fixture.json");
    load_catalog(&tables, db_root).unwrap()
}

#[test]
fn zero_shot_prompt_matches_golden_file() {
    let golden = fixture("zero_shot_prompt.txt");
    let (ddl, _) = golden.split_once("\n\nQuestion:").unwrap();

    let dir = tempfile::tempdir().unwrap();
    let catalog = spider_fixture_catalog(dir.path());
    let schema = catalog.schema("department_management").unwrap();
    assert_eq!(
        render_schema(schema),
        ddl,
        "rendered DDL differs from the prompt fixture"
    );

    let prompt = build_zero_shot(
        &render_schema(schema),
        "How many heads of the departments are older than 56 ?",
    )
    .unwrap();
    assert_eq!(prompt, golden);
}

#[test]
fn epigen_prompt_matches_golden_file() {
    let golden = fixture("epigen_prompt.txt");
    let prompt = build_epigen(
        EpigenSeed::builtin(),
        "List the name, born state and age of the heads of departments ordered by age.",
        "SELECT name ,  born_state ,  age FROM head ORDER BY age",
        "SELECT head.name, head.born_state, head.age FROM head INNER JOIN management ON head.head_ID = management.head_ID ORDER BY head.age",
    )
    .unwrap();
    assert_eq!(prompt, golden);
}

#[test]
fn epi_context_prompt_matches_golden_file() {
    let golden = fixture("epi_context_prompt.txt");
    let demos: Vec<Demonstration> =
        serde_json::from_str(&fixture("epi_context_demos.json")).unwrap();
    assert_eq!(demos.len(), 10);
    let prompt = build_epi_context(&demos, "What is the total number of singers?").unwrap();
    assert_eq!(prompt, golden);
}

#[test]
fn sqlgen_epi_prompt_matches_golden_file() {
    let golden = fixture("sqlgen_epi_prompt.txt");
    let ddl = fixture("sqlgen_epi_schema_ddl.txt");
    let parts: serde_json::Value = serde_json::from_str(&fixture("sqlgen_epi_parts.json")).unwrap();
    let prompt = build_sqlgen_epi(
        &ddl,
        parts["question"].as_str().unwrap(),
        parts["epi"].as_str().unwrap(),
    )
    .unwrap();
    assert_eq!(prompt, golden);
}

#[test]
fn builders_emit_no_carriage_returns() {
    for name in [
        "zero_shot_prompt.txt",
        "epigen_prompt.txt",
        "epi_context_prompt.txt",
        "sqlgen_epi_prompt.txt",
    ] {
        assert!(!fixture(name).contains('\r'), "{name} contains CR");
    }
}

#[test]
fn distinct_fixture_schemas_render_distinct_text() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = spider_fixture_catalog(dir.path());
    let a = render_schema(catalog.schema("department_management").unwrap());
    let b = render_schema(catalog.schema("concert_singer").unwrap());
    assert_ne!(a, b);
}

/// Test-only DDL parser: recovers tables, columns, keys from rendered text.
/// Kept independent of the renderer so the two can check each other.
mod parse_back {
    #[derive(Debug, PartialEq, Default)]
    pub struct ParsedTable {
        pub name: String,
        pub columns: Vec<(String, String)>,
        pub primary_key: Vec<String>,
        pub foreign_keys: Vec<(String, String, String)>,
    }

    pub fn parse(ddl: &str) -> Vec<ParsedTable> {
        let mut tables = Vec::new();
        let mut current: Option<ParsedTable> = None;
        for line in ddl.lines() {
            let line = line.trim().trim_end_matches(',');
            if let Some(rest) = line.strip_prefix("CREATE TABLE ") {
                let name = rest.trim_end_matches('(').trim();
                current = Some(ParsedTable {
                    name: name.to_string(),
                    ..Default::default()
                });
            } else if line == ");" {
                tables.push(current.take().expect("table open"));
            } else if let Some(rest) = line.strip_prefix("PRIMARY KEY (") {
                let cols = rest.trim_end_matches(')');
                current.as_mut().unwrap().primary_key =
                    cols.split(',').map(|c| c.trim().to_string()).collect();
            } else if let Some(rest) = line.strip_prefix("FOREIGN KEY(") {
                let (col, target) = rest.split_once(") REFERENCES ").unwrap();
                let (ref_table, ref_col) = target.split_once('(').unwrap();
                current.as_mut().unwrap().foreign_keys.push((
                    col.trim().to_string(),
                    ref_table.trim().to_string(),
                    ref_col.trim_end_matches(')').trim().to_string(),
                ));
            } else if let Some((name, ty)) = line.rsplit_once(' ') {
                current
                    .as_mut()
                    .unwrap()
                    .columns
                    .push((name.to_string(), ty.to_string()));
            }
        }
        tables
    }
}

#[test]
fn render_round_trips_through_parse_back_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = spider_fixture_catalog(dir.path());
    for db_id in ["department_management", "concert_singer"] {
        let schema = catalog.schema(db_id).unwrap();
        let parsed = parse_back::parse(&render_schema(schema));

        assert_eq!(parsed.len(), schema.tables.len(), "{db_id}: table count");
        for (t_idx, (parsed_table, table)) in parsed.iter().zip(&schema.tables).enumerate() {
            assert_eq!(parsed_table.name, table.name);
            let want_cols: Vec<(String, String)> = table
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.col_type.to_uppercase()))
                .collect();
            assert_eq!(parsed_table.columns, want_cols, "{db_id}.{}", table.name);
            assert_eq!(parsed_table.primary_key, schema.primary_keys[t_idx]);
            let want_fks: Vec<(String, String, String)> = schema
                .foreign_keys
                .iter()
                .filter(|fk| fk.table == table.name)
                .map(|fk| {
                    (
                        fk.column.clone(),
                        fk.ref_table.clone(),
                        fk.ref_column.clone(),
                    )
                })
                .collect();
            assert_eq!(
                parsed_table.foreign_keys, want_fks,
                "{db_id}.{}",
                table.name
            );
        }
    }
}
