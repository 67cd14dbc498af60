//! Prompt templates with volatility classes, a synthetic tokenizer, and the
//! program database that feeds evolutionary-search prompts.
//!
//! `DEFAULT` rendering keeps the authored segment order. `OPTIMIZED`
//! rendering emits STATIC segments, then SLOW ones, then DYNAMIC segments
//! sorted by `sort_key`, so consecutive prompts that share their slowly
//! changing content also share a long token prefix.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simcore::RngStream;

/// FNV-1a, 32-bit.
fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Token id of a single word.
pub fn word_token(word: &str) -> u32 {
    fnv1a32(word.as_bytes())
}

/// Whitespace tokenizer: one token per word, id = 32-bit hash of the word.
pub fn tokenize(text: &str) -> Vec<u32> {
    text.split_whitespace().map(word_token).collect()
}

/// Tokens of the synthetic words `"{stem}_{i}"` for `i` in `range`,
/// identical to tokenizing those words joined by spaces.
pub fn synthetic_tokens(stem: &str, range: std::ops::Range<u64>) -> Vec<u32> {
    use std::fmt::Write;
    let mut buf = String::with_capacity(stem.len() + 12);
    range
        .map(|i| {
            buf.clear();
            write!(buf, "{stem}_{i}").unwrap();
            word_token(&buf)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Volatility {
    Static,
    Slow,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub volatility: Volatility,
    #[serde(default)]
    pub sort_key: i64,
    pub text: String,
}

impl Segment {
    pub fn new(id: impl Into<String>, volatility: Volatility, sort_key: i64, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            volatility,
            sort_key,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptMode {
    #[default]
    Default,
    Optimized,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Default => "DEFAULT",
            PromptMode::Optimized => "OPTIMIZED",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SimError::config(path.display().to_string(), e.to_string()))
    }

    /// Segment order for `mode`. The result is always a permutation of the
    /// template's segments.
    pub fn render(&self, mode: PromptMode) -> Result<Vec<&Segment>> {
        if self.segments.is_empty() {
            return Err(SimError::EmptyTemplate);
        }
        let mut keys = BTreeSet::new();
        for s in self.segments.iter().filter(|s| s.volatility == Volatility::Dynamic) {
            if !keys.insert(s.sort_key) {
                return Err(SimError::DuplicateSortKey(s.sort_key));
            }
        }
        let mut out: Vec<&Segment> = self.segments.iter().collect();
        if mode == PromptMode::Optimized {
            // stable sort keeps authored order within STATIC and SLOW
            out.sort_by_key(|s| match s.volatility {
                Volatility::Static => (0, 0),
                Volatility::Slow => (1, 0),
                Volatility::Dynamic => (2, s.sort_key),
            });
        }
        Ok(out)
    }

    /// Rendered text joined by newlines.
    pub fn render_text(&self, mode: PromptMode) -> Result<String> {
        Ok(self
            .render(mode)?
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n"))
    }

    pub fn render_tokens(&self, mode: PromptMode) -> Result<Vec<u32>> {
        Ok(self
            .render(mode)?
            .iter()
            .flat_map(|s| tokenize(&s.text))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramDbEntry {
    pub program_id: String,
    pub score: f64,
    pub insertion_index: u64,
    pub token_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbSample {
    /// Best entries by score, ties to the earlier insertion.
    pub top: Vec<ProgramDbEntry>,
    /// Uniform picks from the remainder, in draw order.
    pub diverse: Vec<ProgramDbEntry>,
    /// Set when fewer entries existed than were asked for.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ProgramDb {
    entries: Vec<ProgramDbEntry>,
    ids: BTreeSet<String>,
}

impl ProgramDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ProgramDbEntry] {
        &self.entries
    }

    pub fn latest(&self) -> Option<&ProgramDbEntry> {
        self.entries.last()
    }

    pub fn insert(&mut self, program_id: impl Into<String>, score: f64, token_len: u64) -> Result<u64> {
        let program_id = program_id.into();
        if self.ids.contains(&program_id) {
            return Err(SimError::DuplicateProgram(program_id));
        }
        let insertion_index = self.entries.last().map_or(0, |e| e.insertion_index + 1);
        self.ids.insert(program_id.clone());
        self.entries.push(ProgramDbEntry {
            program_id,
            score,
            insertion_index,
            token_len,
        });
        Ok(insertion_index)
    }

    pub fn sample(&self, n_top: usize, n_diverse: usize, rng: &mut RngStream) -> Result<DbSample> {
        self.sample_excluding(n_top, n_diverse, None, rng)
    }

    /// Like [`ProgramDb::sample`] but never returns the entry with
    /// insertion index `exclude`.
    pub fn sample_excluding(
        &self,
        n_top: usize,
        n_diverse: usize,
        exclude: Option<u64>,
        rng: &mut RngStream,
    ) -> Result<DbSample> {
        if self.entries.is_empty() {
            return Err(SimError::EmptyDatabase);
        }
        let mut pool: Vec<&ProgramDbEntry> = self
            .entries
            .iter()
            .filter(|e| Some(e.insertion_index) != exclude)
            .collect();
        let truncated = n_top + n_diverse > pool.len();
        pool.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.insertion_index.cmp(&b.insertion_index))
        });
        let split = n_top.min(pool.len());
        let top: Vec<ProgramDbEntry> = pool[..split].iter().map(|e| (*e).clone()).collect();
        // remainder back in insertion order so draws do not depend on scores
        let mut rest: Vec<&ProgramDbEntry> = pool[split..].to_vec();
        rest.sort_by_key(|e| e.insertion_index);
        let picks = n_diverse.min(rest.len());
        for i in 0..picks {
            let j = i + rng.below(rest.len() - i);
            rest.swap(i, j);
        }
        let diverse = rest[..picks].iter().map(|e| (*e).clone()).collect();
        Ok(DbSample {
            top,
            diverse,
            truncated,
        })
    }
}

/// Text of a synthetic program body: `token_len` distinct words.
pub fn program_text(entry: &ProgramDbEntry) -> String {
    (0..entry.token_len)
        .map(|j| format!("{}_{}", entry.program_id, j))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds the evolutionary-search prompt: a static preamble, the current
/// program, the top programs, and the diverse programs.
///
/// Authored order is `[system, current, top, diverse...]`. The current
/// program and each diverse program are DYNAMIC with their insertion index
/// as sort key, so optimized rendering places the diverse programs in
/// database order and the current (newest) program last.
pub fn evolve_template(sample: &DbSample, current: &ProgramDbEntry, preamble_tokens: u64) -> PromptTemplate {
    let mut segments = Vec::with_capacity(3 + sample.diverse.len());
    if preamble_tokens > 0 {
        let text = (0..preamble_tokens)
            .map(|j| format!("system_{j}"))
            .collect::<Vec<_>>()
            .join(" ");
        segments.push(Segment::new("system", Volatility::Static, 0, text));
    }
    segments.push(Segment::new(
        "current",
        Volatility::Dynamic,
        current.insertion_index as i64,
        format!("# Current Prog Information\n{}", program_text(current)),
    ));
    let mut top = String::from("# Top Performing Progs");
    for e in &sample.top {
        top.push('\n');
        top.push_str(&program_text(e));
    }
    top.push_str("\n# Diverse Progs");
    segments.push(Segment::new("top", Volatility::Slow, 0, top));
    for e in &sample.diverse {
        segments.push(Segment::new(
            format!("diverse:{}", e.program_id),
            Volatility::Dynamic,
            e.insertion_index as i64,
            program_text(e),
        ));
    }
    PromptTemplate::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::rng_substream;

    fn ids<'a>(segs: &[&'a Segment]) -> Vec<&'a str> {
        segs.iter().map(|s| s.id.as_str()).collect()
    }

    #[test]
    fn tokenize_basics() {
        assert!(tokenize("").is_empty());
        let t = tokenize("a b a");
        assert_eq!(t.len(), 3);
        assert_eq!(t[0], t[2]);
        assert_ne!(t[0], t[1]);
        let x = tokenize("one two three");
        let y = tokenize("one TWO three");
        assert_eq!(x[0], y[0]);
        assert_ne!(x[1], y[1]);
        assert_eq!(x[2], y[2]);
    }

    #[test]
    fn synthetic_tokens_match_tokenizer() {
        let words: Vec<String> = (3..7).map(|i| format!("doc_{i}")).collect();
        assert_eq!(synthetic_tokens("doc", 3..7), tokenize(&words.join(" ")));
    }

    #[test]
    fn optimized_layout() {
        let t = PromptTemplate::new(vec![
            Segment::new("current", Volatility::Dynamic, 9, "cur"),
            Segment::new("top", Volatility::Slow, 0, "top"),
            Segment::new("B", Volatility::Dynamic, 2, "b"),
            Segment::new("A", Volatility::Dynamic, 1, "a"),
        ]);
        assert_eq!(ids(&t.render(PromptMode::Default).unwrap()), ["current", "top", "B", "A"]);
        assert_eq!(ids(&t.render(PromptMode::Optimized).unwrap()), ["top", "A", "B", "current"]);
    }

    #[test]
    fn all_static_identical() {
        let t = PromptTemplate::new(vec![
            Segment::new("x", Volatility::Static, 0, "x"),
            Segment::new("y", Volatility::Static, 0, "y"),
        ]);
        assert_eq!(
            ids(&t.render(PromptMode::Default).unwrap()),
            ids(&t.render(PromptMode::Optimized).unwrap())
        );
    }

    #[test]
    fn dynamic_sorted_by_key() {
        let t = PromptTemplate::new(vec![
            Segment::new("seven", Volatility::Dynamic, 7, "s"),
            Segment::new("three", Volatility::Dynamic, 3, "t"),
        ]);
        assert_eq!(ids(&t.render(PromptMode::Optimized).unwrap()), ["three", "seven"]);
    }

    #[test]
    fn render_errors() {
        assert!(matches!(
            PromptTemplate::default().render(PromptMode::Default),
            Err(SimError::EmptyTemplate)
        ));
        let t = PromptTemplate::new(vec![
            Segment::new("a", Volatility::Dynamic, 1, "a"),
            Segment::new("b", Volatility::Dynamic, 1, "b"),
        ]);
        assert!(matches!(t.render(PromptMode::Optimized), Err(SimError::DuplicateSortKey(1))));
    }

    #[test]
    fn template_json_schema() {
        let t: PromptTemplate = serde_json::from_str(
            r#"{"segments":[{"id":"sys","volatility":"STATIC","text":"hello world"},
                {"id":"d","volatility":"DYNAMIC","sort_key":4,"text":"x"}]}"#,
        )
        .unwrap();
        assert_eq!(t.segments[0].volatility, Volatility::Static);
        assert_eq!(t.segments[1].sort_key, 4);
    }

    #[test]
    fn db_insert_indices() {
        let mut db = ProgramDb::new();
        assert_eq!(db.insert("a", 0.1, 10).unwrap(), 0);
        assert_eq!(db.insert("b", 0.2, 10).unwrap(), 1);
        assert!(matches!(db.insert("a", 0.3, 10), Err(SimError::DuplicateProgram(_))));
    }

    #[test]
    fn db_sample_top_and_diverse() {
        let mut db = ProgramDb::new();
        for i in 0..14 {
            db.insert(format!("p{i}"), f64::from(i % 5) / 10.0, 32).unwrap();
        }
        let mut rng = rng_substream(1, "diverse");
        let s = db.sample(4, 10, &mut rng).unwrap();
        assert!(!s.truncated);
        assert_eq!(s.top.len() + s.diverse.len(), 14);
        // scores 0.4 at p4, p9; 0.3 at p3, p8
        let top: Vec<&str> = s.top.iter().map(|e| e.program_id.as_str()).collect();
        assert_eq!(top, ["p4", "p9", "p3", "p8"]);

        let all = db.sample(14, 0, &mut rng).unwrap();
        assert!(all.top.windows(2).all(|w| w[0].score >= w[1].score));

        let over = db.sample(10, 10, &mut rng).unwrap();
        assert!(over.truncated);
        assert_eq!(over.top.len() + over.diverse.len(), 14);
    }

    #[test]
    fn db_sample_deterministic() {
        let mut db = ProgramDb::new();
        for i in 0..40 {
            db.insert(format!("p{i}"), 0.5, 8).unwrap();
        }
        let a = db.sample(4, 10, &mut rng_substream(3, "s")).unwrap();
        let b = db.sample(4, 10, &mut rng_substream(3, "s")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_db_errors() {
        let db = ProgramDb::new();
        assert!(matches!(db.sample(1, 1, &mut rng_substream(0, "x")), Err(SimError::EmptyDatabase)));
    }

    #[test]
    fn evolve_template_layout() {
        let mut db = ProgramDb::new();
        for i in 0..20 {
            db.insert(format!("p{i}"), if i < 4 { 0.9 } else { 0.1 }, 16).unwrap();
        }
        let current = db.latest().unwrap().clone();
        let s = db
            .sample_excluding(4, 3, Some(current.insertion_index), &mut rng_substream(5, "d"))
            .unwrap();
        let t = evolve_template(&s, &current, 8);
        let def = ids(&t.render(PromptMode::Default).unwrap());
        assert_eq!(&def[..3], ["system", "current", "top"]);
        let opt = t.render(PromptMode::Optimized).unwrap();
        assert_eq!(opt[0].id, "system");
        assert_eq!(opt[1].id, "top");
        assert_eq!(opt.last().unwrap().id, "current");
        let keys: Vec<i64> = opt[2..opt.len() - 1].iter().map(|s| s.sort_key).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
