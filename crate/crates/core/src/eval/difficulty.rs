//! Query hardness bucketing by shallow component counting.
//!
//! The buckets approximate the Spider easy/medium/hard/extra-hard partition
//! without a full SQL parser. Components are counted token-wise outside
//! string literals and scored by the rule table below; queries that cannot
//! be scanned (unbalanced quotes or parens) fall in the most conservative
//! bucket.
//!
//! Rule table:
//!
//! | component                          | points          |
//! |------------------------------------|-----------------|
//! | each JOIN                          | +2              |
//! | GROUP BY present                   | +1              |
//! | ORDER BY present                   | +1              |
//! | LIMIT present                      | +1              |
//! | WHERE or HAVING present            | +1              |
//! | two or more predicates (AND/OR)    | +1              |
//! | more than one select-list aggregate| +1              |
//! | more than one select column        | +1              |
//! | each nested subquery               | +3              |
//! | any INTERSECT/UNION/EXCEPT         | extra-hard      |
//!
//! Totals: 0-1 easy, 2-3 medium, 4-6 hard, 7+ extra-hard.

use serde::{Deserialize, Serialize};

use super::sqlscan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    ExtraHard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::ExtraHard,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::ExtraHard => "extra-hard",
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "extra-hard" | "extra_hard" | "extra" => Ok(Difficulty::ExtraHard),
            other => Err(format!("unknown difficulty '{other}'")),
        }
    }
}

/// Shallow component counts of one statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SqlComponents {
    pub joins: usize,
    pub group_by: bool,
    pub order_by: bool,
    pub limit: bool,
    pub where_or_having: bool,
    /// AND/OR connectives anywhere in the statement.
    pub connectives: usize,
    /// Aggregate calls in the first top-level select list.
    pub aggregates: usize,
    pub select_columns: usize,
    /// INTERSECT / UNION / EXCEPT occurrences.
    pub set_ops: usize,
    /// SELECT keywords inside parentheses.
    pub nested_subqueries: usize,
}

const AGGREGATES: [&str; 5] = ["count", "sum", "avg", "min", "max"];

/// Counts components, or `None` when the statement cannot be scanned.
pub fn sql_components(sql: &str) -> Option<SqlComponents> {
    let masked = sqlscan::mask(sql)?;
    let mut c = SqlComponents {
        joins: masked.keyword_count("join", false),
        group_by: masked.keyword_pair_count("group", "by", false) > 0,
        order_by: masked.keyword_pair_count("order", "by", false) > 0,
        limit: masked.keyword_count("limit", false) > 0,
        where_or_having: masked.keyword_count("where", false)
            + masked.keyword_count("having", false)
            > 0,
        connectives: masked.keyword_count("and", false) + masked.keyword_count("or", false),
        set_ops: masked.keyword_count("intersect", false)
            + masked.keyword_count("union", false)
            + masked.keyword_count("except", false),
        ..Default::default()
    };

    let selects = masked.keyword_offsets("select", false);
    let top_selects = masked.keyword_offsets("select", true);
    c.nested_subqueries = selects
        .iter()
        .filter(|&&off| top_selects.binary_search(&off).is_err())
        .count();

    // Width of the first top-level select list, and the aggregates in it.
    c.select_columns = 1;
    if let Some(&sel) = top_selects.first() {
        let from = masked
            .keyword_offsets("from", true)
            .into_iter()
            .find(|&f| f > sel)
            .unwrap_or(masked.len());
        c.select_columns = masked.commas_in_range(sel..from, 0) + 1;
        for agg in AGGREGATES {
            for offset in masked.keyword_offsets(agg, false) {
                if offset < sel || offset >= from {
                    continue;
                }
                // Only function-call syntax counts as an aggregate.
                let rest = sql.as_bytes()[offset + agg.len()..]
                    .iter()
                    .find(|b| !b.is_ascii_whitespace());
                if rest == Some(&b'(') {
                    c.aggregates += 1;
                }
            }
        }
    }
    Some(c)
}

fn score(c: &SqlComponents) -> usize {
    let mut points = 2 * c.joins + 3 * c.nested_subqueries;
    points += usize::from(c.group_by);
    points += usize::from(c.order_by);
    points += usize::from(c.limit);
    points += usize::from(c.where_or_having);
    points += usize::from(c.where_or_having && c.connectives >= 1);
    points += usize::from(c.aggregates > 1);
    points += usize::from(c.select_columns > 1);
    points
}

/// Classifies per the rule table; unparseable input is extra-hard.
pub fn classify_difficulty(sql: &str) -> Difficulty {
    classify_difficulty_checked(sql).0
}

/// Like [`classify_difficulty`] but also flags statements that could not be
/// scanned and were bucketed conservatively.
pub fn classify_difficulty_checked(sql: &str) -> (Difficulty, bool) {
    let Some(components) = sql_components(sql) else {
        return (Difficulty::ExtraHard, true);
    };
    if components.set_ops > 0 {
        return (Difficulty::ExtraHard, false);
    }
    let bucket = match score(&components) {
        0..=1 => Difficulty::Easy,
        2..=3 => Difficulty::Medium,
        4..=6 => Difficulty::Hard,
        _ => Difficulty::ExtraHard,
    };
    (bucket, false)
}
