//! Shallow, quote-aware SQL scanning.
//!
//! No grammar: string-literal bytes are blanked out and parenthesis depth is
//! tracked per byte, which is enough for keyword counting, the ordered-result
//! check, and statement-terminator search. Shared by response extraction and
//! the evaluator.

/// A statement with string literals blanked and per-byte paren depth.
#[derive(Debug)]
pub struct MaskedSql {
    /// Same length as the input; bytes inside `'...'`, `"..."` or
    /// `` `...` `` literals (quotes included) are spaces.
    masked: Vec<u8>,
    /// Paren depth per byte; an opening paren carries the outer depth.
    depth: Vec<i32>,
}

/// Masks literals and computes depths. `None` when quoting is unbalanced or
/// parens go negative, which downstream treats as unparseable.
pub fn mask(sql: &str) -> Option<MaskedSql> {
    let bytes = sql.as_bytes();
    let mut masked = Vec::with_capacity(bytes.len());
    let mut depth = Vec::with_capacity(bytes.len());
    let mut level = 0i32;
    let mut quote: Option<u8> = None;
    let mut i = 0;

    while i < bytes.len() {
        let b = bytes[i];
        if let Some(q) = quote {
            if b == q {
                if bytes.get(i + 1) == Some(&q) {
                    masked.push(b' ');
                    depth.push(level);
                    masked.push(b' ');
                    depth.push(level);
                    i += 2;
                    continue; // doubled quote: escape, stay inside
                }
                quote = None;
            }
            masked.push(b' ');
            depth.push(level);
            i += 1;
            continue;
        }
        match b {
            b'\'' | b'"' | b'`' => {
                quote = Some(b);
                masked.push(b' ');
                depth.push(level);
            }
            b'(' => {
                masked.push(b);
                depth.push(level);
                level += 1;
            }
            b')' => {
                level -= 1;
                if level < 0 {
                    return None;
                }
                masked.push(b);
                depth.push(level);
            }
            _ => {
                masked.push(b);
                depth.push(level);
            }
        }
        i += 1;
    }
    if quote.is_some() {
        return None;
    }
    Some(MaskedSql { masked, depth })
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl MaskedSql {
    /// Byte offsets where `word` occurs at a word boundary, outside string
    /// literals, optionally at depth 0 only.
    pub fn keyword_offsets(&self, word: &str, top_level_only: bool) -> Vec<usize> {
        let needle = word.as_bytes();
        let mut hits = Vec::new();
        if needle.is_empty() || self.masked.len() < needle.len() {
            return hits;
        }
        for start in 0..=self.masked.len() - needle.len() {
            if top_level_only && self.depth[start] != 0 {
                continue;
            }
            if !self.masked[start..start + needle.len()].eq_ignore_ascii_case(needle) {
                continue;
            }
            let before_ok = start == 0 || !is_word_byte(self.masked[start - 1]);
            let after_ok = self
                .masked
                .get(start + needle.len())
                .map(|&b| !is_word_byte(b))
                .unwrap_or(true);
            if before_ok && after_ok {
                hits.push(start);
            }
        }
        hits
    }

    pub fn keyword_count(&self, word: &str, top_level_only: bool) -> usize {
        self.keyword_offsets(word, top_level_only).len()
    }

    /// Counts `first <ws> second` keyword pairs, e.g. `ORDER BY`.
    pub fn keyword_pair_count(&self, first: &str, second: &str, top_level_only: bool) -> usize {
        let mut count = 0;
        for start in self.keyword_offsets(first, top_level_only) {
            let mut j = start + first.len();
            while j < self.masked.len() && self.masked[j].is_ascii_whitespace() {
                j += 1;
            }
            if j == start + first.len() || j + second.len() > self.masked.len() {
                continue;
            }
            if self.masked[j..j + second.len()].eq_ignore_ascii_case(second.as_bytes()) {
                let after_ok = self
                    .masked
                    .get(j + second.len())
                    .map(|&b| !is_word_byte(b))
                    .unwrap_or(true);
                if after_ok {
                    count += 1;
                }
            }
        }
        count
    }

    /// Offset of the first `;` outside literals.
    pub fn first_terminator(&self) -> Option<usize> {
        self.masked.iter().position(|&b| b == b';')
    }

    /// Commas at the given depth within a byte range, for select-list width.
    pub fn commas_in_range(&self, range: std::ops::Range<usize>, at_depth: i32) -> usize {
        range
            .filter(|&i| self.masked[i] == b',' && self.depth[i] == at_depth)
            .count()
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }
}

/// First `;` outside string literals of a statement, if any. Unbalanced
/// input returns `None`.
pub fn first_terminator(sql: &str) -> Option<usize> {
    mask(sql)?.first_terminator()
}

/// True when the statement has a top-level ORDER BY (not inside a subquery
/// or string literal). Unbalanced input counts as unordered.
pub fn has_top_level_order_by(sql: &str) -> bool {
    mask(sql)
        .map(|m| m.keyword_pair_count("order", "by", true) > 0)
        .unwrap_or(false)
}
