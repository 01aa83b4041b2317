//! Shared end-to-end fixture: a 10-task mini-corpus over two databases with
//! a fully scripted mock backend.
//!
//! Each test binary uses a different subset of these helpers.
#![allow(dead_code)]
//!
//! Hand-derived outcomes, used by the integration and acceptance suites:
//! zero-shot drafts fail on tasks 1, 5 and 8 (collected=3); EPI-verification
//! fixes 1 and 5 and rejects 8 (verified=2, persisted=2); final predictions
//! fix tasks 1 and 5 but regress tasks 4 and 9, leaving 7 of 10 correct
//! (EX=0.700). Task 0's embeddings are built so question-similarity prefers
//! the first QSESet entry while SQL-similarity prefers the second, which the
//! weight-ablation test relies on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use epi_sql_core::gateway::{CacheKey, MockFixtures, MockResponse};
use epi_sql_core::prompt::{
    build_epi_context, build_epigen, build_sqlgen_epi, build_zero_shot, Demonstration, EpigenSeed,
};
use epi_sql_core::spider::{load_catalog, render_schema};
use epi_sql_core::LlmParams;

pub const COMPLETION_MODEL: &str = "mock-model";
pub const EMBEDDING_MODEL: &str = "embed-test";

/// (question, db, gold, draft, draft_is_correct, final, final_is_correct)
pub struct TaskScript {
    pub question: &'static str,
    pub db_id: &'static str,
    pub gold: &'static str,
    /// Raw zero-shot completion (may carry fences or labels).
    pub draft_response: &'static str,
    /// The SQL the pipeline extracts from `draft_response`.
    pub draft_sql: &'static str,
    pub draft_correct: bool,
    pub final_sql: &'static str,
    pub final_correct: bool,
    pub q_emb: [f64; 8],
    pub s_emb: [f64; 8],
}

pub const TASKS: [TaskScript; 10] = [
    TaskScript {
        question: "How many singers do we have?",
        db_id: "concert_singer",
        gold: "SELECT count(*) FROM singer",
        draft_response: "```sql\nSELECT count(*) FROM singer\n```",
        draft_sql: "SELECT count(*) FROM singer",
        draft_correct: true,
        final_sql: "SELECT COUNT(*) FROM singer",
        final_correct: true,
        q_emb: [0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.1, 0.9, 0.0, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "Show name, country, age for all singers ordered by age from the oldest to the youngest.",
        db_id: "concert_singer",
        gold: "SELECT name, country, age FROM singer ORDER BY age DESC",
        draft_response: "SELECT name, country, age FROM singer ORDER BY age",
        draft_sql: "SELECT name, country, age FROM singer ORDER BY age",
        draft_correct: false,
        final_sql: "SELECT name, country, age FROM singer ORDER BY age DESC",
        final_correct: true,
        q_emb: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "What is the average age of singers from France?",
        db_id: "concert_singer",
        gold: "SELECT avg(age) FROM singer WHERE country = 'France'",
        draft_response: "SELECT avg(age) FROM singer WHERE country = 'France'",
        draft_sql: "SELECT avg(age) FROM singer WHERE country = 'France'",
        draft_correct: true,
        final_sql: "SELECT avg(age) FROM singer WHERE country = 'France'",
        final_correct: true,
        q_emb: [0.2, 0.3, 0.1, 0.0, 0.5, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.3, 0.3, 0.2, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "What are the distinct countries of the singers?",
        db_id: "concert_singer",
        gold: "SELECT DISTINCT country FROM singer",
        draft_response: "SELECT DISTINCT country FROM singer",
        draft_sql: "SELECT DISTINCT country FROM singer",
        draft_correct: true,
        final_sql: "SELECT DISTINCT country FROM singer",
        final_correct: true,
        q_emb: [0.1, 0.1, 0.2, 0.0, 0.0, 0.6, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.2, 0.1, 0.0, 0.4, 0.0, 0.0],
    },
    TaskScript {
        question: "Show the stadium name and the number of concerts in each stadium.",
        db_id: "concert_singer",
        gold: "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        draft_response: "SQL: SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        draft_sql: "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        draft_correct: true,
        final_sql: "SELECT T2.name, count(*) FROM stadium AS T2 LEFT JOIN concert AS T1 ON T1.stadium_id = T2.stadium_id GROUP BY T2.stadium_id",
        final_correct: false, // LEFT JOIN counts the concert-less stadium
        q_emb: [0.3, 0.2, 0.0, 0.1, 0.0, 0.0, 0.5, 0.0],
        s_emb: [0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.3, 0.0],
    },
    TaskScript {
        question: "How many heads of the departments are older than 56 ?",
        db_id: "department_management",
        gold: "SELECT count(*) FROM head WHERE age > 56",
        draft_response: "SELECT count(*) FROM head WHERE age >= 56",
        draft_sql: "SELECT count(*) FROM head WHERE age >= 56",
        draft_correct: false,
        final_sql: "SELECT count(*) FROM head WHERE age > 56",
        final_correct: true,
        q_emb: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "List the name, born state and age of the heads of departments ordered by age.",
        db_id: "department_management",
        gold: "SELECT name, born_state, age FROM head ORDER BY age",
        draft_response: "SELECT name, born_state, age FROM head ORDER BY age",
        draft_sql: "SELECT name, born_state, age FROM head ORDER BY age",
        draft_correct: true,
        final_sql: "SELECT name, born_state, age FROM head ORDER BY age ASC",
        final_correct: true,
        q_emb: [0.5, 0.5, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "What are the maximum and minimum budget of the departments?",
        db_id: "department_management",
        gold: "SELECT max(budget_in_billions), min(budget_in_billions) FROM department",
        draft_response: "SELECT max(budget_in_billions), min(budget_in_billions) FROM department",
        draft_sql: "SELECT max(budget_in_billions), min(budget_in_billions) FROM department",
        draft_correct: true,
        final_sql: "SELECT max(budget_in_billions), min(budget_in_billions) FROM department",
        final_correct: true,
        q_emb: [0.2, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6],
        s_emb: [0.0, 0.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.5],
    },
    TaskScript {
        question: "What is the name of the department with the most employees?",
        db_id: "department_management",
        gold: "SELECT name FROM department ORDER BY num_employees DESC LIMIT 1",
        draft_response: "SELECT name FROM departments ORDER BY num_employees DESC LIMIT 1",
        draft_sql: "SELECT name FROM departments ORDER BY num_employees DESC LIMIT 1",
        draft_correct: false, // no such table: sql error
        final_sql: "SELECT name, num_employees FROM department ORDER BY num_employees DESC LIMIT 1",
        final_correct: false, // extra column
        q_emb: [0.4, 0.4, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.35, 0.35, 0.1, 0.0, 0.0, 0.0],
    },
    TaskScript {
        question: "How many acting statuses are there?",
        db_id: "department_management",
        gold: "SELECT count(DISTINCT temporary_acting) FROM management",
        draft_response: "SELECT count(DISTINCT temporary_acting) FROM management",
        draft_sql: "SELECT count(DISTINCT temporary_acting) FROM management",
        draft_correct: true,
        final_sql: "SELECT count(*) FROM management",
        final_correct: false, // duplicates counted
        q_emb: [0.1, 0.6, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0],
        s_emb: [0.0, 0.0, 0.15, 0.5, 0.0, 0.0, 0.1, 0.0],
    },
];

/// Indices of tasks whose drafts fail (the collected set).
pub const ERROR_TASKS: [usize; 3] = [1, 5, 8];
/// Of those, the ones whose EPI passes verification, i.e. the QSESet.
pub const VERIFIED_TASKS: [usize; 2] = [1, 5];

pub fn general_epi(task_index: usize) -> &'static str {
    match task_index {
        1 => "When a question asks for ordering from the oldest to the youngest, sort by age in descending order with DESC.",
        5 => "When a question says strictly older than a value, use the > operator, not >=.",
        8 => "Use the exact table names from the schema; the table is named department, not departments.",
        _ => panic!("task {task_index} has no general EPI"),
    }
}

/// SQL returned when verifying the general EPI on its source task.
pub fn verify_response(task_index: usize) -> &'static str {
    match task_index {
        1 => "SELECT name, country, age FROM singer ORDER BY age DESC",
        5 => "SELECT count(*) FROM head WHERE age > 56",
        8 => "SELECT name, num_employees FROM department ORDER BY num_employees DESC LIMIT 1",
        _ => panic!("task {task_index} is never verified"),
    }
}

pub fn contextual_epi(task_index: usize) -> String {
    format!(
        "Before writing the SQL for this question, re-check ordering direction, comparison operators and exact table names (task {task_index})."
    )
}

pub fn params() -> LlmParams {
    LlmParams {
        model_id: COMPLETION_MODEL.to_string(),
        temperature: 0.0,
        max_output_tokens: 512,
    }
}

fn core_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn prompt_fixture(name: &str) -> String {
    std::fs::read_to_string(core_fixture_dir().join("prompts").join(name)).unwrap()
}

fn create_databases(db_root: &Path) {
    let cs = db_root.join("concert_singer");
    std::fs::create_dir_all(&cs).unwrap();
    rusqlite::Connection::open(cs.join("concert_singer.sqlite"))
        .unwrap()
        .execute_batch(
            "CREATE TABLE stadium (stadium_id int, location text, name text, capacity int, highest int, lowest int, average int, PRIMARY KEY (stadium_id));
             CREATE TABLE singer (singer_id int, name text, country text, song_name text, song_release_year text, age int, is_male bool, PRIMARY KEY (singer_id));
             CREATE TABLE concert (concert_id int, concert_name text, theme text, stadium_id int, year int, PRIMARY KEY (concert_id));
             CREATE TABLE singer_in_concert (concert_id int, singer_id int, PRIMARY KEY (concert_id, singer_id));
             INSERT INTO stadium VALUES (1, 'Amsterdam', 'Big Arena', 10000, 5000, 1000, 3000);
             INSERT INTO stadium VALUES (2, 'Paris', 'Small Hall', 500, 300, 50, 120);
             INSERT INTO singer VALUES (1, 'Joe Sharp', 'Netherlands', 'You', '1992', 52, 1);
             INSERT INTO singer VALUES (2, 'Timbaland', 'United States', 'Dangerous', '2008', 32, 1);
             INSERT INTO singer VALUES (3, 'Rose White', 'France', 'Sun', '2003', 41, 0);
             INSERT INTO concert VALUES (1, 'Super bootcamp', 'Free choice', 1, 2014);
             INSERT INTO concert VALUES (2, 'Home Visits', 'Wide Awake', 1, 2015);
             INSERT INTO singer_in_concert VALUES (1, 1);
             INSERT INTO singer_in_concert VALUES (1, 2);
             INSERT INTO singer_in_concert VALUES (2, 3);",
        )
        .unwrap();

    let dm = db_root.join("department_management");
    std::fs::create_dir_all(&dm).unwrap();
    rusqlite::Connection::open(dm.join("department_management.sqlite"))
        .unwrap()
        .execute_batch(
            "CREATE TABLE department (department_id int, name text, creation text, ranking int, budget_in_billions real, num_employees real, PRIMARY KEY (department_id));
             CREATE TABLE head (head_id int, name text, born_state text, age real, PRIMARY KEY (head_id));
             CREATE TABLE management (department_id int, head_id int, temporary_acting text, PRIMARY KEY (department_id, head_id));
             INSERT INTO department VALUES (1, 'State', '1789', 1, 9.96, 30266.0);
             INSERT INTO department VALUES (2, 'Treasury', '1789', 2, 11.1, 115897.0);
             INSERT INTO department VALUES (3, 'Defense', '1947', 3, 439.3, 3000000.0);
             INSERT INTO head VALUES (1, 'Alice Reed', 'Alabama', 56.0);
             INSERT INTO head VALUES (2, 'Bob Stone', 'California', 69.0);
             INSERT INTO head VALUES (3, 'Cora Villa', 'Texas', 43.0);
             INSERT INTO head VALUES (4, 'Dan Ocean', 'Ohio', 61.0);
             INSERT INTO management VALUES (1, 1, 'Yes');
             INSERT INTO management VALUES (2, 2, 'Yes');",
        )
        .unwrap();
}

fn split_json() -> String {
    let records: Vec<serde_json::Value> = TASKS
        .iter()
        .map(|t| {
            serde_json::json!({
                "question": t.question,
                "query": t.gold,
                "db_id": t.db_id,
            })
        })
        .collect();
    serde_json::to_string_pretty(&records).unwrap()
}

/// Builds the full fixture tree under `root` and returns the config path.
pub fn build_fixture_tree(root: &Path) -> PathBuf {
    std::fs::create_dir_all(root).unwrap();
    create_databases(&root.join("database"));
    std::fs::copy(
        core_fixture_dir().join("spider/tables_fixture.json"),
        root.join("tables.json"),
    )
    .unwrap();
    std::fs::write(root.join("train.json"), split_json()).unwrap();
    std::fs::write(root.join("dev.json"), split_json()).unwrap();

    let fixtures = mock_fixtures(root);
    std::fs::write(
        root.join("fixtures.json"),
        serde_json::to_string_pretty(&fixtures).unwrap(),
    )
    .unwrap();

    let config = serde_json::json!({
        "train_path": "train.json",
        "dev_path": "dev.json",
        "tables_path": "tables.json",
        "db_root": "database",
        "cache_dir": "cache",
        "output_dir": "out",
        "backend": {"kind": "mock", "fixtures": "fixtures.json"},
        "completion_model": COMPLETION_MODEL,
        "embedding_model": EMBEDDING_MODEL,
        "temperature": 0.0,
        "max_output_tokens": 512,
        "retrieval": {"k": 10, "w_question": 0.5, "w_sql": 0.5},
        "parallelism": 4,
        "retries": 1,
        "exec_timeout_secs": 5,
        "kmeans_seed": 7,
        "kmeans_ks": [2, 3],
        "min_samples": 0
    });
    let config_path = root.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    config_path
}

/// Every prompt the pipeline can issue against this corpus, keyed by digest.
fn mock_fixtures(root: &Path) -> MockFixtures {
    let params = params();
    let catalog = load_catalog(&root.join("tables.json"), &root.join("database")).unwrap();
    let seed = EpigenSeed::builtin();
    let mut responses: BTreeMap<String, MockResponse> = BTreeMap::new();

    let mut on_complete = |prompt: &str, response: &str| {
        let key = CacheKey::completion(&params, prompt);
        responses.insert(
            key.digest().to_string(),
            MockResponse::Text(response.to_string()),
        );
    };

    let ddl_for = |db_id: &str| render_schema(catalog.schema(db_id).unwrap());

    for task in TASKS.iter() {
        let zero_shot = build_zero_shot(&ddl_for(task.db_id), task.question).unwrap();
        on_complete(&zero_shot, task.draft_response);
    }

    for &i in ERROR_TASKS.iter() {
        let task = &TASKS[i];
        let epigen = build_epigen(seed, task.question, task.gold, task.draft_sql).unwrap();
        on_complete(&epigen, general_epi(i));
        let verify = build_sqlgen_epi(&ddl_for(task.db_id), task.question, general_epi(i)).unwrap();
        on_complete(&verify, verify_response(i));
    }

    // EPI-context prompts: cover every demonstration list retrieval can
    // produce from the two persisted entries (both orders and both
    // singletons), all mapping to the same canned EPI per task.
    let demo = |i: usize| Demonstration::new(TASKS[i].question, general_epi(i)).unwrap();
    let demo_lists = [
        vec![demo(1), demo(5)],
        vec![demo(5), demo(1)],
        vec![demo(1)],
        vec![demo(5)],
    ];
    for (i, task) in TASKS.iter().enumerate() {
        for demos in demo_lists.iter() {
            let context = build_epi_context(demos, task.question).unwrap();
            on_complete(&context, &contextual_epi(i));
        }
        let sqlgen =
            build_sqlgen_epi(&ddl_for(task.db_id), task.question, &contextual_epi(i)).unwrap();
        on_complete(&sqlgen, task.final_sql);
    }

    // Embeddings for every question and every draft the pipeline embeds.
    let mut on_embed = |text: &str, values: &[f64]| {
        let key = CacheKey::embedding(EMBEDDING_MODEL, text);
        responses.insert(
            key.digest().to_string(),
            MockResponse::Vector(values.to_vec()),
        );
    };
    for task in TASKS.iter() {
        on_embed(task.question, &task.q_emb);
        on_embed(task.draft_sql, &task.s_emb);
    }

    MockFixtures {
        responses,
        script: Vec::new(),
    }
}

pub struct CliOutput {
    pub status: std::process::ExitStatus,
    pub stdout: String,
    pub stderr: String,
}

impl CliOutput {
    pub fn assert_ok(&self) -> &Self {
        assert!(
            self.status.success(),
            "command failed\nstdout:\n{}\nstderr:\n{}",
            self.stdout,
            self.stderr
        );
        self
    }
}

/// Runs the release of the `epi-sql` binary built for this test profile.
pub fn run_cli(args: &[&str]) -> CliOutput {
    let output = Command::new(env!("CARGO_BIN_EXE_epi-sql"))
        .args(args)
        .output()
        .expect("spawn epi-sql");
    CliOutput {
        status: output.status,
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

/// Convenience: number of tasks whose final SQL is scripted as correct.
pub fn expected_ex() -> f64 {
    let correct = TASKS.iter().filter(|t| t.final_correct).count();
    correct as f64 / TASKS.len() as f64
}
