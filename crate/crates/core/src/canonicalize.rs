//! Mapping raw model responses onto option identities.
//!
//! Strategies run in a fixed order and the first one that decides wins:
//!
//! 1. `exact`: the normalized response equals a normalized option text or alias.
//! 2. `escape`: the normalized response equals or contains an escape phrase.
//! 3. `numbered`: `option i`, `(i)`, `i.` or a bare integer `i`.
//! 4. `substring`: exactly one option's words occur in the response, or the
//!    response's words occur in exactly one option.
//! 5. `synonym_substring`: as 4, after rewriting synonym-group terms toward
//!    each option's own vocabulary.
//! 6. `segmented_multi` (multi mode only): split the response and resolve
//!    each piece with strategies 1-5, taking the union.
//!
//! Anything else is `unmapped`. Ambiguity never resolves to a guess.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templating::{OptionSet, SelectionMode};

pub const DEFAULT_PREAMBLES: &[&str] = &[
    "the clause implies that",
    "the clause states that",
    "the answer is",
];

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’', '«', '»'];
const TERMINAL_PUNCT: &[char] = &['.', '!', '?', ';', ':', ',', '…'];
const BULLETS: &[char] = &['-', '*', '•', '–', '—'];

#[derive(Debug, Error)]
pub enum SynonymError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synonym table: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalAnswer {
    Selected { option_ids: BTreeSet<String> },
    Escape,
    Unmapped { raw: String },
}

impl CanonicalAnswer {
    pub fn selected<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CanonicalAnswer::Selected {
            option_ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn selected_ids(&self) -> Option<&BTreeSet<String>> {
        match self {
            CanonicalAnswer::Selected { option_ids } => Some(option_ids),
            _ => None,
        }
    }

    pub fn is_escape(&self) -> bool {
        matches!(self, CanonicalAnswer::Escape)
    }

    pub fn is_unmapped(&self) -> bool {
        matches!(self, CanonicalAnswer::Unmapped { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    Exact,
    Escape,
    Numbered,
    Substring,
    SynonymSubstring,
    SegmentedMulti,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchTrace {
    pub strategy: MatchStrategy,
    pub needed_cleanup: bool,
    pub segments_matched: usize,
}

impl MatchTrace {
    fn new(strategy: MatchStrategy) -> Self {
        Self {
            strategy,
            needed_cleanup: !matches!(strategy, MatchStrategy::Exact | MatchStrategy::Escape),
            segments_matched: 0,
        }
    }
}

/// Groups of interchangeable party names, e.g. Lessee/Tenant/Seller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SynonymTableFile")]
pub struct SynonymTable {
    pub id: String,
    pub groups: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct SynonymTableFile {
    id: String,
    groups: Vec<Vec<String>>,
}

impl TryFrom<SynonymTableFile> for SynonymTable {
    type Error = SynonymError;

    fn try_from(file: SynonymTableFile) -> Result<Self, Self::Error> {
        SynonymTable::new(file.id, file.groups)
    }
}

impl SynonymTable {
    pub fn new(id: impl Into<String>, groups: Vec<Vec<String>>) -> Result<Self, SynonymError> {
        let mut seen = HashSet::new();
        for group in &groups {
            for term in group {
                let key = tokens(&normalize_basic(term)).join(" ");
                if key.is_empty() {
                    return Err(SynonymError::Invalid(format!("empty term {term:?}")));
                }
                if !seen.insert(key) {
                    return Err(SynonymError::Invalid(format!(
                        "term {term:?} appears in more than one place"
                    )));
                }
            }
        }
        Ok(Self {
            id: id.into(),
            groups,
        })
    }

    pub fn empty(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            groups: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynonymError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SynonymError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynonymError::Invalid(e.to_string()))
    }
}

/// Tunable word lists. Serializable so run configs can override them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Canonicalizer {
    /// Leading phrases removed during normalization.
    pub preambles: Vec<String>,
    /// Segment separators for multi-select responses, strongest level first.
    /// A piece that fails to resolve is split again with the next level.
    pub segment_levels: Vec<Vec<String>>,
}

impl Default for Canonicalizer {
    fn default() -> Self {
        Self {
            preambles: DEFAULT_PREAMBLES.iter().map(|s| s.to_string()).collect(),
            segment_levels: vec![
                vec!["\n".into(), ";".into(), ". ".into()],
                vec![", and ".into(), " and ".into()],
                vec![",".into()],
            ],
        }
    }
}

fn default_canonicalizer() -> &'static Canonicalizer {
    static DEFAULT: OnceLock<Canonicalizer> = OnceLock::new();
    DEFAULT.get_or_init(Canonicalizer::default)
}

/// [`Canonicalizer::normalize`] with the default preamble list.
pub fn normalize(text: &str) -> String {
    default_canonicalizer().normalize(text)
}

/// [`Canonicalizer::canonicalize`] with default word lists.
pub fn canonicalize(
    raw: &str,
    option_set: &OptionSet,
    escape_phrases: &[String],
    synonyms: Option<&SynonymTable>,
    mode: SelectionMode,
) -> (CanonicalAnswer, MatchTrace) {
    default_canonicalizer().canonicalize(raw, option_set, escape_phrases, synonyms, mode)
}

fn normalize_basic(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    loop {
        let next = s
            .trim_matches(QUOTES)
            .trim_end_matches(TERMINAL_PUNCT)
            .trim();
        if next == s {
            break;
        }
        s = next;
    }
    s.to_string()
}

fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_seq<S: AsRef<str>, T: AsRef<str>>(haystack: &[S], needle: &[T]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack
        .windows(needle.len())
        .any(|w| w.iter().zip(needle).all(|(a, b)| a.as_ref() == b.as_ref()))
}

fn replace_seq(haystack: &[String], from: &[String], to: &[String]) -> Vec<String> {
    if from.is_empty() {
        return haystack.to_vec();
    }
    let mut out = Vec::with_capacity(haystack.len());
    let mut i = 0;
    while i < haystack.len() {
        if haystack[i..].starts_with(from) {
            out.extend_from_slice(to);
            i += from.len();
        } else {
            out.push(haystack[i].clone());
            i += 1;
        }
    }
    out
}

fn owned_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().map(String::from).collect()
}

fn numbered_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:options?\s*(?:no\.?\s*|number\s*|#\s*)?(\d+)\s*[:.)\-]?|\((\d+)\)|(\d+)[.)])(?:\s+(.*))?$",
        )
        .expect("valid regex")
    })
}

/// Prepared per-option matching data.
struct OptionForms<'a> {
    id: &'a str,
    normalized: Vec<String>,
    token_forms: Vec<Vec<String>>,
}

enum Numbered {
    NoMatch,
    Selected(String),
    Reject,
}

enum Outcome {
    Decided(CanonicalAnswer, MatchTrace),
    /// Matched two or more options: terminal in single mode.
    Ambiguous,
    NoMatch,
}

impl Canonicalizer {
    /// Case-folds, collapses whitespace, strips surrounding quotes, terminal
    /// punctuation and known preambles, repeating until nothing changes.
    pub fn normalize(&self, text: &str) -> String {
        let preambles: Vec<String> = self
            .preambles
            .iter()
            .map(|p| normalize_basic(p))
            .filter(|p| !p.is_empty())
            .collect();
        let mut current = normalize_basic(text);
        loop {
            let mut next = current.clone();
            for p in &preambles {
                if let Some(rest) = next.strip_prefix(p.as_str()) {
                    if rest.is_empty() || rest.starts_with(|c: char| !c.is_alphanumeric()) {
                        next = rest.trim_start_matches([',', ':']).to_string();
                    }
                }
            }
            let next = normalize_basic(&next);
            if next == current {
                return current;
            }
            current = next;
        }
    }

    pub fn canonicalize(
        &self,
        raw: &str,
        option_set: &OptionSet,
        escape_phrases: &[String],
        synonyms: Option<&SynonymTable>,
        mode: SelectionMode,
    ) -> (CanonicalAnswer, MatchTrace) {
        let forms: Vec<OptionForms> = option_set
            .options()
            .iter()
            .map(|o| {
                let normalized: Vec<String> =
                    o.surface_forms().map(|f| self.normalize(f)).collect();
                let token_forms = normalized.iter().map(|n| owned_tokens(n)).collect();
                OptionForms {
                    id: &o.canonical_id,
                    normalized,
                    token_forms,
                }
            })
            .collect();
        let escapes: Vec<Vec<String>> = escape_phrases
            .iter()
            .map(|p| owned_tokens(&self.normalize(p)))
            .filter(|t| !t.is_empty())
            .collect();

        match self.resolve_single(raw, option_set, &forms, &escapes, synonyms, mode) {
            Outcome::Decided(answer, trace) => return (answer, trace),
            Outcome::Ambiguous if mode == SelectionMode::Single => return unmapped(raw),
            _ => {}
        }
        if mode == SelectionMode::Multi {
            let mut ids = BTreeSet::new();
            let matched = self.resolve_segments(
                &raw.to_lowercase(),
                0,
                option_set,
                &forms,
                &escapes,
                synonyms,
                &mut ids,
            );
            if !ids.is_empty() {
                let mut trace = MatchTrace::new(MatchStrategy::SegmentedMulti);
                trace.segments_matched = matched;
                return (CanonicalAnswer::Selected { option_ids: ids }, trace);
            }
        }
        unmapped(raw)
    }

    /// Strategies 1-5 on one piece of text.
    fn resolve_single(
        &self,
        raw: &str,
        option_set: &OptionSet,
        forms: &[OptionForms],
        escapes: &[Vec<String>],
        synonyms: Option<&SynonymTable>,
        mode: SelectionMode,
    ) -> Outcome {
        let norm = self.normalize(raw);
        if norm.is_empty() {
            return Outcome::NoMatch;
        }
        let raw_tokens = owned_tokens(&norm);

        let exact: BTreeSet<&str> = forms
            .iter()
            .filter(|f| f.normalized.contains(&norm))
            .map(|f| f.id)
            .collect();
        if exact.len() == 1 {
            return decided([exact.into_iter().next().unwrap()], MatchStrategy::Exact);
        }

        if escapes.iter().any(|e| contains_seq(&raw_tokens, e)) {
            return Outcome::Decided(
                CanonicalAnswer::Escape,
                MatchTrace::new(MatchStrategy::Escape),
            );
        }

        match self.numbered(&norm, option_set, forms) {
            Numbered::Selected(id) => return decided([id], MatchStrategy::Numbered),
            Numbered::Reject if mode == SelectionMode::Single => return Outcome::Ambiguous,
            Numbered::Reject => return Outcome::NoMatch,
            Numbered::NoMatch => {}
        }

        let hits = substring_hits(
            &raw_tokens,
            forms.iter().map(|f| (f.id, &f.token_forms[..])),
        );
        match hits.len() {
            1 => return decided(hits, MatchStrategy::Substring),
            0 => {}
            _ => return Outcome::Ambiguous,
        }

        if let Some(table) = synonyms.filter(|t| !t.groups.is_empty()) {
            let mut hits = BTreeSet::new();
            for f in forms {
                let rewritten = rewrite_toward(&raw_tokens, &f.token_forms, table);
                if f.token_forms
                    .iter()
                    .any(|form| contains_seq(&rewritten, form) || contains_seq(form, &rewritten))
                {
                    hits.insert(f.id);
                }
            }
            match hits.len() {
                1 => return decided(hits, MatchStrategy::SynonymSubstring),
                0 => {}
                _ => return Outcome::Ambiguous,
            }
        }
        Outcome::NoMatch
    }

    fn numbered(&self, norm: &str, option_set: &OptionSet, forms: &[OptionForms]) -> Numbered {
        let (ordinal, trailing) = if let Ok(n) = norm.parse::<usize>() {
            (n, None)
        } else if let Some(caps) = numbered_regex().captures(norm) {
            let digits = caps
                .get(1)
                .or_else(|| caps.get(2))
                .or_else(|| caps.get(3))
                .map(|m| m.as_str())
                .unwrap_or_default();
            match digits.parse::<usize>() {
                Ok(n) => (n, caps.get(4).map(|m| m.as_str())),
                Err(_) => return Numbered::Reject,
            }
        } else {
            return Numbered::NoMatch;
        };
        let Some(option) = option_set.by_ordinal(ordinal) else {
            return Numbered::Reject;
        };
        if let Some(trailing) = trailing
            .map(|t| self.normalize(t))
            .filter(|t| !t.is_empty())
        {
            // Text after the number must not point at some other option.
            let toks = owned_tokens(&trailing);
            if toks.iter().any(|t| t.parse::<usize>().is_ok()) {
                return Numbered::Reject;
            }
            let exact: Vec<&str> = forms
                .iter()
                .filter(|f| f.normalized.contains(&trailing))
                .map(|f| f.id)
                .collect();
            let hits = if exact.is_empty() {
                substring_hits(&toks, forms.iter().map(|f| (f.id, &f.token_forms[..])))
            } else {
                exact.into_iter().collect()
            };
            if !hits.is_empty() && !(hits.len() == 1 && hits.contains(option.canonical_id.as_str()))
            {
                return Numbered::Reject;
            }
        }
        Numbered::Selected(option.canonical_id.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn resolve_segments(
        &self,
        text: &str,
        level: usize,
        option_set: &OptionSet,
        forms: &[OptionForms],
        escapes: &[Vec<String>],
        synonyms: Option<&SynonymTable>,
        ids: &mut BTreeSet<String>,
    ) -> usize {
        let Some(markers) = self.segment_levels.get(level) else {
            return 0;
        };
        let pieces = split_on_any(text, markers);
        if pieces.len() <= 1 {
            return self.resolve_segments(
                text,
                level + 1,
                option_set,
                forms,
                escapes,
                synonyms,
                ids,
            );
        }
        let mut matched = 0;
        for piece in pieces {
            let piece = piece.trim().trim_start_matches(BULLETS).trim();
            if piece.is_empty() {
                continue;
            }
            match self.resolve_single(
                piece,
                option_set,
                forms,
                escapes,
                synonyms,
                SelectionMode::Single,
            ) {
                Outcome::Decided(CanonicalAnswer::Selected { option_ids }, _) => {
                    ids.extend(option_ids);
                    matched += 1;
                }
                Outcome::Decided(_, _) => {}
                Outcome::Ambiguous | Outcome::NoMatch => {
                    matched += self.resolve_segments(
                        piece,
                        level + 1,
                        option_set,
                        forms,
                        escapes,
                        synonyms,
                        ids,
                    );
                }
            }
        }
        matched
    }
}

fn decided<I, S>(ids: I, strategy: MatchStrategy) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    Outcome::Decided(CanonicalAnswer::selected(ids), MatchTrace::new(strategy))
}

fn unmapped(raw: &str) -> (CanonicalAnswer, MatchTrace) {
    (
        CanonicalAnswer::Unmapped {
            raw: raw.to_string(),
        },
        MatchTrace::new(MatchStrategy::None),
    )
}

fn substring_hits<'a, 'f>(
    raw_tokens: &[String],
    forms: impl Iterator<Item = (&'a str, &'f [Vec<String>])>,
) -> BTreeSet<&'a str> {
    let mut hits = BTreeSet::new();
    if raw_tokens.is_empty() {
        return hits;
    }
    for (id, token_forms) in forms {
        if token_forms
            .iter()
            .any(|form| contains_seq(raw_tokens, form) || contains_seq(form, raw_tokens))
        {
            hits.insert(id);
        }
    }
    hits
}

/// Rewrites every synonym-group term in `raw` to the term the option itself
/// uses from that group. Groups the option does not mention are left alone.
fn rewrite_toward(
    raw: &[String],
    option_forms: &[Vec<String>],
    table: &SynonymTable,
) -> Vec<String> {
    let mut out = raw.to_vec();
    for group in &table.groups {
        let terms: Vec<Vec<String>> = group
            .iter()
            .map(|t| owned_tokens(&normalize_basic(t)))
            .collect();
        let target = option_forms
            .iter()
            .find_map(|form| terms.iter().find(|t| contains_seq(form, t)));
        let Some(target) = target else { continue };
        for term in terms.iter().filter(|t| *t != target) {
            out = replace_seq(&out, term, target);
        }
    }
    out
}

fn split_on_any<'a>(text: &'a str, markers: &[String]) -> Vec<&'a str> {
    let mut pieces = vec![text];
    for marker in markers.iter().filter(|m| !m.is_empty()) {
        pieces = pieces
            .into_iter()
            .flat_map(|p| p.split(marker.as_str()))
            .collect();
    }
    pieces
}
