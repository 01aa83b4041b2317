//! Prompt construction and response extraction.
//!
//! Four prompt kinds drive the pipeline: the plain zero-shot SQL prompt, the
//! EPIGen prompt that turns one failure into an error-prevention instruction,
//! the EPI-context prompt that synthesizes a task-specific instruction from
//! retrieved demonstrations, and the SQL-generation prompt that carries the
//! instruction. The layouts (labels, commas, quoting, blank lines) are frozen
//! and covered by golden-file tests; instruction wording is deliberately kept
//! verbatim, idiosyncrasies included. Newlines are LF throughout.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::sqlscan;

/// Instruction line of the zero-shot SQL prompt.
pub const ZERO_SHOT_INSTRUCTION: &str =
    "Please translate question to SQL based on given dataset schema.";
/// Request line of each EPIGen block.
pub const EPIGEN_REQUEST: &str =
    "Please write an instruction to tell GPT4 do not make this mistake again.";
/// Instruction line of the SQL-generation-with-EPI prompt.
pub const SQLGEN_INSTRUCTION: &str = "Please translate this Question to a SQL.";

/// One retrieved (question, EPI) pair shown in the EPI-context prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub epi: String,
}

impl Demonstration {
    pub fn new(question: impl Into<String>, epi: impl Into<String>) -> Result<Self> {
        let demo = Demonstration {
            question: question.into(),
            epi: epi.into(),
        };
        if demo.question.trim().is_empty() || demo.epi.trim().is_empty() {
            return Err(Error::PromptInput("empty demonstration field".into()));
        }
        if demo.epi.lines().any(|l| l.starts_with("SQL:")) {
            return Err(Error::PromptInput(
                "demonstration EPI contains a SQL: line".into(),
            ));
        }
        Ok(demo)
    }
}

/// One worked example of the EPIGen seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedExample {
    pub question: String,
    pub correct_sql: String,
    pub erroneous_sql: String,
    pub instruction: String,
}

/// The worked examples prepended to every EPIGen prompt. Shipped as data so
/// the EPIGen behavior is auditable and swappable.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigenSeed {
    examples: Vec<SeedExample>,
}

static BUILTIN_SEED: OnceLock<EpigenSeed> = OnceLock::new();

impl EpigenSeed {
    pub fn new(examples: Vec<SeedExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::PromptInput("empty EPIGen seed".into()));
        }
        Ok(EpigenSeed { examples })
    }

    /// The five worked examples shipped with the crate.
    pub fn builtin() -> &'static EpigenSeed {
        BUILTIN_SEED.get_or_init(|| {
            let examples: Vec<SeedExample> =
                serde_json::from_str(include_str!("../data/epigen_seed.json"))
                    .expect("builtin EPIGen seed parses");
            EpigenSeed { examples }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let examples: Vec<SeedExample> =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(examples)
    }

    pub fn examples(&self) -> &[SeedExample] {
        &self.examples
    }
}

fn require(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::PromptInput(what.to_string()))
    }
}

/// Zero-shot SQL prompt: schema DDL, a blank line, the question, the fixed
/// instruction line, and a trailing `SQL:` label.
pub fn build_zero_shot(schema_ddl: &str, question: &str) -> Result<String> {
    require(!schema_ddl.trim().is_empty(), "empty schema DDL")?;
    require(!question.trim().is_empty(), "empty question")?;
    Ok(format!(
        "{schema_ddl}\n\nQuestion: {question}\n{ZERO_SHOT_INSTRUCTION}\nSQL:"
    ))
}

fn epigen_block(
    question: &str,
    correct_sql: &str,
    erroneous_sql: &str,
    instruction: &str,
) -> String {
    format!(
        "Question: {question},\nCorrect SQL: {correct_sql},\nErroneous SQL: {erroneous_sql}\n{EPIGEN_REQUEST}\nInstruction: {instruction}"
    )
}

/// EPIGen prompt: the seed's worked blocks, then the target failure's block
/// with the instruction left blank for the model to complete.
pub fn build_epigen(
    seed: &EpigenSeed,
    question: &str,
    correct_sql: &str,
    erroneous_sql: &str,
) -> Result<String> {
    require(!question.trim().is_empty(), "empty question")?;
    require(!correct_sql.trim().is_empty(), "empty correct SQL")?;
    require(!erroneous_sql.trim().is_empty(), "empty erroneous SQL")?;
    require(
        correct_sql != erroneous_sql,
        "correct and erroneous SQL are identical",
    )?;

    let mut blocks: Vec<String> = seed
        .examples()
        .iter()
        .map(|ex| {
            epigen_block(
                &ex.question,
                &ex.correct_sql,
                &ex.erroneous_sql,
                &ex.instruction,
            )
        })
        .collect();
    blocks.push(epigen_block(question, correct_sql, erroneous_sql, ""));
    Ok(blocks.join("\n\n"))
}

/// EPI-context prompt: one quoted question + instruction block per
/// demonstration in the given order, then the target question with the
/// instruction left blank.
pub fn build_epi_context(demos: &[Demonstration], question: &str) -> Result<String> {
    require(!demos.is_empty(), "at least one demonstration is required")?;
    require(!question.trim().is_empty(), "empty question")?;
    let mut blocks: Vec<String> = demos
        .iter()
        .map(|d| format!("Question: \"{}\",\nInstruction: {}", d.question, d.epi))
        .collect();
    blocks.push(format!("Question: \"{question}\",\nInstruction:"));
    Ok(blocks.join("\n\n"))
}

/// SQL-generation prompt with an EPI: DDL, the quoted question, the fixed
/// translate line, the EPI paragraph, and the `SQL:` label.
pub fn build_sqlgen_epi(schema_ddl: &str, question: &str, epi: &str) -> Result<String> {
    require(!schema_ddl.trim().is_empty(), "empty schema DDL")?;
    require(!question.trim().is_empty(), "empty question")?;
    require(!epi.trim().is_empty(), "empty EPI")?;
    Ok(format!(
        "{schema_ddl}\nQuestion: \"{question}\",\n{SQLGEN_INSTRUCTION}\n{epi}\nSQL:"
    ))
}

const SQL_KEYWORDS: [&str; 6] = ["select", "with", "insert", "update", "delete", "create"];

fn find_sql_start(text: &str) -> Option<usize> {
    let lower = text.to_lowercase();
    let bytes = lower.as_bytes();
    let mut best: Option<usize> = None;
    for kw in SQL_KEYWORDS {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(kw) {
            let at = from + pos;
            let before_ok =
                at == 0 || !(bytes[at - 1].is_ascii_alphanumeric() || bytes[at - 1] == b'_');
            let after = at + kw.len();
            let after_ok = after >= bytes.len()
                || !(bytes[after].is_ascii_alphanumeric() || bytes[after] == b'_');
            if before_ok && after_ok {
                best = Some(best.map_or(at, |b| b.min(at)));
                break;
            }
            from = at + 1;
        }
    }
    best
}

/// Content of the first fenced code block, when the text has one.
fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after_fence = &text[open + 3..];
    // Skip an optional language tag on the fence line.
    let body_start = after_fence.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after_fence[body_start..];
    match body.find("```") {
        Some(close) => Some(&body[..close]),
        None => Some(body),
    }
}

/// Pulls the SQL statement out of a raw model response.
///
/// Strips code fences and a leading `SQL:` label, starts at the first SQL
/// keyword, and truncates at the first statement terminator (outside string
/// literals) or at a blank line that introduces trailing prose. Idempotent:
/// re-extracting the result returns it unchanged.
pub fn extract_sql(response: &str) -> Result<String> {
    let no_sql = || Error::Extraction {
        snippet: response.chars().take(80).collect(),
    };
    let mut text = response.trim();
    if let Some(inner) = fenced_block(text) {
        text = inner.trim();
    }
    if text.len() >= 4 && text[..4].eq_ignore_ascii_case("sql:") {
        text = text[4..].trim_start();
    }
    let start = find_sql_start(text).ok_or_else(no_sql)?;
    let mut sql = &text[start..];
    if let Some(end) = sqlscan::first_terminator(sql) {
        sql = &sql[..end];
    }
    if let Some(end) = sql.find("\n\n") {
        sql = &sql[..end];
    }
    let sql = sql.trim();
    if sql.is_empty() {
        return Err(no_sql());
    }
    Ok(sql.to_string())
}

/// Pulls the EPI text out of an EPI-context response: everything after the
/// last `Instruction:` marker when the model echoed the prompt shape,
/// otherwise the whole response, trimmed. Multi-paragraph EPIs are kept
/// whole.
pub fn extract_epi(response: &str) -> Result<String> {
    let tail = match response.rfind("Instruction:") {
        Some(pos) => &response[pos + "Instruction:".len()..],
        None => response,
    };
    let epi = tail.trim();
    if epi.is_empty() {
        return Err(Error::EmptyResponse {
            context: "EPI extraction".into(),
        });
    }
    Ok(epi.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shot_section_order_and_suffix() {
        let prompt = build_zero_shot("CREATE TABLE t (\na INT\n);", "List a?").unwrap();
        let ddl_pos = prompt.find("CREATE TABLE t").unwrap();
        let q_pos = prompt.find("Question: List a?").unwrap();
        let instr_pos = prompt.find(ZERO_SHOT_INSTRUCTION).unwrap();
        let sql_pos = prompt.rfind("SQL:").unwrap();
        assert!(ddl_pos < q_pos && q_pos < instr_pos && instr_pos < sql_pos);
        assert!(prompt.ends_with("SQL:"));
        assert!(!prompt.contains('\r'));
    }

    #[test]
    fn epigen_target_is_sixth_question_block() {
        let seed = EpigenSeed::builtin();
        let prompt = build_epigen(seed, "Q?", "SELECT 1", "SELECT 2").unwrap();
        assert_eq!(prompt.matches("Question: ").count(), 6);
        assert!(prompt.ends_with("Instruction: "));
    }

    #[test]
    fn epigen_swap_changes_only_the_two_sql_lines() {
        let seed = EpigenSeed::builtin();
        let a = build_epigen(seed, "Q?", "SELECT 1", "SELECT 2").unwrap();
        let b = build_epigen(seed, "Q?", "SELECT 2", "SELECT 1").unwrap();
        let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff.len(), 2);
        assert!(diff
            .iter()
            .all(|(x, _)| { x.starts_with("Correct SQL:") || x.starts_with("Erroneous SQL:") }));
    }

    #[test]
    fn epigen_rejects_identical_sql() {
        let seed = EpigenSeed::builtin();
        assert!(build_epigen(seed, "Q?", "SELECT 1", "SELECT 1").is_err());
    }

    #[test]
    fn builtin_seed_has_five_examples() {
        assert_eq!(EpigenSeed::builtin().examples().len(), 5);
    }

    #[test]
    fn epi_context_single_demo_has_two_question_blocks() {
        let demos = vec![Demonstration::new("Q1?", "Use JOIN.").unwrap()];
        let prompt = build_epi_context(&demos, "Q2?").unwrap();
        assert_eq!(prompt.matches("Question: \"").count(), 2);
        assert!(prompt.ends_with("Instruction:"));
    }

    #[test]
    fn epi_context_preserves_demo_order() {
        let d1 = Demonstration::new("first", "epi one").unwrap();
        let d2 = Demonstration::new("second", "epi two").unwrap();
        let forward = build_epi_context(&[d1.clone(), d2.clone()], "target").unwrap();
        let reversed = build_epi_context(&[d2, d1], "target").unwrap();
        assert!(forward.find("first").unwrap() < forward.find("second").unwrap());
        assert!(reversed.find("second").unwrap() < reversed.find("first").unwrap());
    }

    #[test]
    fn epi_context_requires_demos() {
        assert!(matches!(
            build_epi_context(&[], "Q?"),
            Err(Error::PromptInput(_))
        ));
    }

    #[test]
    fn demonstration_rejects_sql_line() {
        assert!(Demonstration::new("q", "Do this.\nSQL: SELECT 1").is_err());
    }

    #[test]
    fn sqlgen_epi_ordering_and_empty_epi() {
        let prompt =
            build_sqlgen_epi("CREATE TABLE t (\na INT\n);", "Q?", "Mind the join.").unwrap();
        let translate = prompt.find(SQLGEN_INSTRUCTION).unwrap();
        let epi = prompt.find("Mind the join.").unwrap();
        let sql = prompt.rfind("SQL:").unwrap();
        assert!(translate < epi && epi < sql);
        assert!(build_sqlgen_epi("ddl", "Q?", "  ").is_err());
    }

    #[test]
    fn extract_sql_identity_on_bare_sql() {
        assert_eq!(
            extract_sql("SELECT count(*) FROM singer").unwrap(),
            "SELECT count(*) FROM singer"
        );
    }

    #[test]
    fn extract_sql_strips_fence_label_and_trailing_prose() {
        let response = "Sure! Here is the query:\n```sql\nSELECT name FROM head;\n```\nThis selects every head name.";
        assert_eq!(extract_sql(response).unwrap(), "SELECT name FROM head");

        let labeled = "SQL: SELECT a FROM t";
        assert_eq!(extract_sql(labeled).unwrap(), "SELECT a FROM t");

        let prose_after = "SELECT a FROM t\n\nExplanation: this works because...";
        assert_eq!(extract_sql(prose_after).unwrap(), "SELECT a FROM t");
    }

    #[test]
    fn extract_sql_errors_without_sql_keyword() {
        let err = extract_sql("Sure! Here is...").unwrap_err();
        assert!(matches!(err, Error::Extraction { .. }));
    }

    #[test]
    fn extract_sql_keeps_semicolons_inside_literals() {
        assert_eq!(
            extract_sql("SELECT 'a;b' FROM t; done").unwrap(),
            "SELECT 'a;b' FROM t"
        );
    }

    #[test]
    fn extract_sql_idempotent_on_fixtures() {
        let cases = [
            "SELECT count(*) FROM singer",
            "```sql\nSELECT name FROM head;\n```",
            "SQL: SELECT a FROM t\n\ntrailing words",
            "the answer is SELECT x FROM y WHERE z = 'w'",
        ];
        for case in cases {
            let once = extract_sql(case).unwrap();
            let twice = extract_sql(&once).unwrap();
            assert_eq!(once, twice, "not idempotent on {case:?}");
        }
    }

    #[test]
    fn extract_epi_takes_tail_after_last_marker() {
        let response = "Instruction: old\n\nQuestion: \"q\",\nInstruction: Use COUNT(*) ordering.";
        assert_eq!(extract_epi(response).unwrap(), "Use COUNT(*) ordering.");
        assert_eq!(extract_epi("Plain advice.").unwrap(), "Plain advice.");
        assert!(extract_epi("Instruction:   ").is_err());
    }
}
