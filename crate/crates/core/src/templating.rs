//! Option sets, prompt templates, rendering and in-context example seeding.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalize;
use crate::corpus::{Clause, Dataset, Question, QuestionMode};

pub const OPTIONS_PLACEHOLDER: &str = "Options";
pub const CLAUSE_PLACEHOLDER: &str = "Clause";
pub const QUESTION_PLACEHOLDER: &str = "Question";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {what}: {message}")]
    Json { what: String, message: String },
    #[error("template front matter: {0}")]
    FrontMatter(String),
    #[error("template {template_id}: placeholder {{{{{name}}}}} must appear exactly once, found {count}")]
    PlaceholderCount {
        template_id: String,
        name: &'static str,
        count: usize,
    },
    #[error("template {0} declares no escape phrases")]
    NoEscapePhrases(String),
    #[error("template {0} needs a question but none was given")]
    MissingQuestion(String),
    #[error("template {template_id}: unresolved placeholder {{{{{name}}}}}")]
    UnresolvedPlaceholder { template_id: String, name: String },
    #[error("option set {id}: {message}")]
    InvalidOptionSet { id: String, message: String },
    #[error("example set {example_set}: clause {clause_id} not found in the example corpus")]
    DanglingExampleClause {
        example_set: String,
        clause_id: String,
    },
    #[error("example set {example_set}: option {option_id} is not in option set {option_set}")]
    UnknownExampleOption {
        example_set: String,
        option_id: String,
        option_set: String,
    },
    #[error("example set {example_set}: clause {clause_id} needs exactly one answer for a single-select template, found {count}")]
    ExampleArity {
        example_set: String,
        clause_id: String,
        count: usize,
    },
    #[error("conversation must end with a user message")]
    MissingFinalUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Single,
    Multi,
}

impl From<QuestionMode> for SelectionMode {
    fn from(mode: QuestionMode) -> Self {
        match mode {
            QuestionMode::SingleSelect => SelectionMode::Single,
            QuestionMode::MultiSelect => SelectionMode::Multi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberingStyle {
    Paren,
    #[default]
    Dot,
    Bare,
}

impl NumberingStyle {
    pub fn format(self, ordinal: usize, text: &str) -> String {
        match self {
            NumberingStyle::Paren => format!("({ordinal}) {text}"),
            NumberingStyle::Dot => format!("{ordinal}. {text}"),
            NumberingStyle::Bare => format!("{ordinal} {text}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    /// Display position, 1-based. Always equals the option's index in its set plus one.
    #[serde(default)]
    pub ordinal: usize,
    pub canonical_id: String,
    pub text: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl AnswerOption {
    pub fn new(canonical_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            ordinal: 0,
            canonical_id: canonical_id.into(),
            text: text.into(),
            aliases: Vec::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }

    /// The option text followed by its aliases.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.text.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Deserialize)]
struct OptionSetFile {
    id: String,
    question_id: String,
    #[serde(default)]
    synonym_table_id: Option<String>,
    #[serde(default)]
    notes: Option<String>,
    options: Vec<AnswerOption>,
}

/// A closed, ordered answer vocabulary for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OptionSetFile")]
pub struct OptionSet {
    pub id: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synonym_table_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    options: Vec<AnswerOption>,
}

impl TryFrom<OptionSetFile> for OptionSet {
    type Error = TemplateError;

    fn try_from(file: OptionSetFile) -> Result<Self, Self::Error> {
        let mut set = OptionSet::new(file.id, file.question_id, file.options)?;
        set.synonym_table_id = file.synonym_table_id;
        set.notes = file.notes;
        Ok(set)
    }
}

impl OptionSet {
    /// Builds a set, assigning ordinals by position.
    pub fn new(
        id: impl Into<String>,
        question_id: impl Into<String>,
        mut options: Vec<AnswerOption>,
    ) -> Result<Self, TemplateError> {
        let id = id.into();
        let invalid = |message: String| TemplateError::InvalidOptionSet {
            id: id.clone(),
            message,
        };
        if options.len() < 2 {
            return Err(invalid(format!(
                "needs at least 2 options, found {}",
                options.len()
            )));
        }
        let mut ids = BTreeSet::new();
        let mut forms: HashMap<String, String> = HashMap::new();
        for (i, option) in options.iter_mut().enumerate() {
            option.ordinal = i + 1;
            if option.canonical_id.is_empty() {
                return Err(invalid(format!(
                    "option {} has an empty canonical_id",
                    i + 1
                )));
            }
            if option.text.trim().is_empty() {
                return Err(invalid(format!(
                    "option {} has empty text",
                    option.canonical_id
                )));
            }
            if !ids.insert(option.canonical_id.clone()) {
                return Err(invalid(format!(
                    "duplicate canonical_id {}",
                    option.canonical_id
                )));
            }
            for form in option.surface_forms() {
                let normalized = canonicalize::normalize(form);
                if normalized.is_empty() {
                    return Err(invalid(format!(
                        "surface form {form:?} of {} normalizes to nothing",
                        option.canonical_id
                    )));
                }
                if let Some(owner) = forms.get(&normalized) {
                    if owner != &option.canonical_id {
                        return Err(invalid(format!(
                            "surface form {form:?} of {} collides with {owner}",
                            option.canonical_id
                        )));
                    }
                }
                forms.insert(normalized, option.canonical_id.clone());
            }
        }
        Ok(Self {
            id,
            question_id: question_id.into(),
            synonym_table_id: None,
            notes: None,
            options,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| TemplateError::Json {
            what: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn options(&self) -> &[AnswerOption] {
        &self.options
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn by_ordinal(&self, ordinal: usize) -> Option<&AnswerOption> {
        ordinal.checked_sub(1).and_then(|i| self.options.get(i))
    }

    pub fn by_id(&self, canonical_id: &str) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.canonical_id == canonical_id)
    }

    pub fn contains(&self, canonical_id: &str) -> bool {
        self.by_id(canonical_id).is_some()
    }

    pub fn canonical_ids(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.canonical_id.as_str())
    }

    pub fn render(&self, style: NumberingStyle) -> String {
        render_options(&self.options, style)
    }
}

/// One line per option in ordinal order, no trailing newline.
pub fn render_options(options: &[AnswerOption], style: NumberingStyle) -> String {
    let mut sorted: Vec<&AnswerOption> = options.iter().collect();
    sorted.sort_by_key(|o| o.ordinal);
    sorted
        .iter()
        .map(|o| style.format(o.ordinal, &o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Returns a copy with options reordered by a permutation seeded from `seed`.
/// Canonical ids and texts are unchanged; ordinals follow the new order.
pub fn shuffle_options(option_set: &OptionSet, seed: u64) -> OptionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = option_set.clone();
    shuffled.options.shuffle(&mut rng);
    for (i, option) in shuffled.options.iter_mut().enumerate() {
        option.ordinal = i + 1;
    }
    shuffled
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub selection_mode: SelectionMode,
    pub escape_phrases: Vec<String>,
    #[serde(default)]
    pub numbering_style: NumberingStyle,
}

const FENCE: &str = "---";

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        selection_mode: SelectionMode,
        escape_phrases: Vec<String>,
        numbering_style: NumberingStyle,
    ) -> Result<Self, TemplateError> {
        let template = Self {
            id: id.into(),
            body: body.into(),
            selection_mode,
            escape_phrases,
            numbering_style,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for name in [OPTIONS_PLACEHOLDER, CLAUSE_PLACEHOLDER] {
            let count = self.body.matches(&format!("{{{{{name}}}}}")).count();
            if count != 1 {
                return Err(TemplateError::PlaceholderCount {
                    template_id: self.id.clone(),
                    name,
                    count,
                });
            }
        }
        if self.escape_phrases.iter().all(|p| p.trim().is_empty()) {
            return Err(TemplateError::NoEscapePhrases(self.id.clone()));
        }
        Ok(())
    }

    pub fn needs_question(&self) -> bool {
        self.body
            .contains(&format!("{{{{{QUESTION_PLACEHOLDER}}}}}"))
    }

    /// Parses the on-disk form: a `---` fenced block of `key: value` lines
    /// followed by the body.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let fm = |m: &str| TemplateError::FrontMatter(m.to_string());
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut lines = text.split_inclusive('\n');
        match lines.next() {
            Some(first) if first.trim_end() == FENCE => {}
            _ => return Err(fm("file must start with a --- line")),
        }
        let mut id = None;
        let mut selection_mode = None;
        let mut numbering_style = NumberingStyle::default();
        let mut escape_phrases = None;
        let mut closed = false;
        for line in lines.by_ref() {
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim_end() == FENCE {
                closed = true;
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| fm(&format!("expected key: value, got {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "id" => id = Some(value.to_string()),
                "selection_mode" => {
                    selection_mode = Some(parse_enum::<SelectionMode>(key, value)?);
                }
                "numbering_style" => numbering_style = parse_enum(key, value)?,
                "escape_phrases" => {
                    escape_phrases =
                        Some(serde_json::from_str::<Vec<String>>(value).map_err(|e| {
                            fm(&format!("escape_phrases must be a JSON string array: {e}"))
                        })?);
                }
                other => return Err(fm(&format!("unknown key {other:?}"))),
            }
        }
        if !closed {
            return Err(fm("missing closing --- line"));
        }
        let body: String = lines.collect();
        let body = body
            .strip_suffix('\n')
            .map(|b| b.strip_suffix('\r').unwrap_or(b))
            .unwrap_or(&body)
            .to_string();
        Self::new(
            id.ok_or_else(|| fm("missing id"))?,
            body,
            selection_mode.ok_or_else(|| fm("missing selection_mode"))?,
            escape_phrases.ok_or_else(|| fm("missing escape_phrases"))?,
            numbering_style,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn to_file_string(&self) -> String {
        let style = serde_json::to_value(self.numbering_style).expect("enum serializes");
        let mode = serde_json::to_value(self.selection_mode).expect("enum serializes");
        format!(
            "---\nid: {}\nselection_mode: {}\nnumbering_style: {}\nescape_phrases: {}\n---\n{}\n",
            self.id,
            mode.as_str().unwrap_or_default(),
            style.as_str().unwrap_or_default(),
            serde_json::to_string(&self.escape_phrases).expect("strings serialize"),
            self.body
        )
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, TemplateError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| TemplateError::FrontMatter(format!("invalid {key}: {value:?}")))
}

fn read(path: &Path) -> Result<String, TemplateError> {
    fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationMetadata {
    pub template_id: String,
    pub option_set_id: String,
    pub clause_id: String,
    #[serde(default)]
    pub example_set_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedConversation {
    pub messages: Vec<ChatMessage>,
    pub metadata: ConversationMetadata,
}

impl RenderedConversation {
    pub fn final_user_message(&self) -> Option<&ChatMessage> {
        self.messages.last().filter(|m| m.role == Role::User)
    }

    /// True when the conversation is optional system messages, then strict
    /// user/assistant pairs, then one final user message.
    pub fn is_well_formed(&self) -> bool {
        let turns: Vec<Role> = self
            .messages
            .iter()
            .map(|m| m.role)
            .skip_while(|r| *r == Role::System)
            .collect();
        if turns.len().is_multiple_of(2) {
            return false;
        }
        turns.iter().enumerate().all(|(i, role)| {
            if i % 2 == 0 {
                *role == Role::User
            } else {
                *role == Role::Assistant
            }
        })
    }
}

/// Substitutes placeholders in one pass; inserted text is never rescanned.
fn substitute(
    template: &PromptTemplate,
    options_block: &str,
    clause_text: &str,
    question: Option<&Question>,
) -> Result<String, TemplateError> {
    let mut out =
        String::with_capacity(template.body.len() + clause_text.len() + options_block.len());
    let mut rest = template.body.as_str();
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(TemplateError::UnresolvedPlaceholder {
                template_id: template.id.clone(),
                name: after.to_string(),
            });
        };
        let name = &after[..end];
        match name {
            OPTIONS_PLACEHOLDER => out.push_str(options_block),
            CLAUSE_PLACEHOLDER => out.push_str(clause_text),
            QUESTION_PLACEHOLDER => match question {
                Some(q) => out.push_str(&q.text),
                None => return Err(TemplateError::MissingQuestion(template.id.clone())),
            },
            other => {
                return Err(TemplateError::UnresolvedPlaceholder {
                    template_id: template.id.clone(),
                    name: other.to_string(),
                })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a single-message conversation for one clause.
pub fn render(
    template: &PromptTemplate,
    option_set: &OptionSet,
    clause: &Clause,
    question: Option<&Question>,
) -> Result<RenderedConversation, TemplateError> {
    let options_block = option_set.render(template.numbering_style);
    let content = substitute(template, &options_block, &clause.text, question)?;
    Ok(RenderedConversation {
        messages: vec![ChatMessage::user(content)],
        metadata: ConversationMetadata {
            template_id: template.id.clone(),
            option_set_id: option_set.id.clone(),
            clause_id: clause.id.clone(),
            example_set_ids: Vec::new(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub clause_id: String,
    pub answer_option_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub id: String,
    pub examples: Vec<Example>,
}

impl ExampleSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        serde_json::from_str(&read(path)?).map_err(|e| TemplateError::Json {
            what: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// What the assistant turn of a seeded example contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStyle {
    /// The exact option text, one line per selected option.
    #[default]
    OptionText,
    /// The option numbers, one per line.
    Ordinal,
}

fn example_answer(option_set: &OptionSet, ids: &BTreeSet<String>, style: AnswerStyle) -> String {
    let mut chosen: Vec<&AnswerOption> = option_set
        .options()
        .iter()
        .filter(|o| ids.contains(&o.canonical_id))
        .collect();
    chosen.sort_by_key(|o| o.ordinal);
    chosen
        .iter()
        .map(|o| match style {
            AnswerStyle::OptionText => o.text.clone(),
            AnswerStyle::Ordinal => o.ordinal.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inserts labelled example turns ahead of the final user message.
///
/// Each example becomes a user turn (the template rendered over the example
/// clause) and an assistant turn holding its gold answer. Earlier messages
/// and the final user message are kept byte-identical.
#[allow(clippy::too_many_arguments)]
pub fn seed_with_examples(
    conversation: &RenderedConversation,
    example_sets: &[ExampleSet],
    template: &PromptTemplate,
    option_set: &OptionSet,
    corpus: &Dataset,
    question: Option<&Question>,
    style: AnswerStyle,
) -> Result<RenderedConversation, TemplateError> {
    let Some(final_user) = conversation.final_user_message().cloned() else {
        return Err(TemplateError::MissingFinalUser);
    };
    if example_sets.is_empty() {
        return Ok(conversation.clone());
    }
    let mut messages: Vec<ChatMessage> =
        conversation.messages[..conversation.messages.len() - 1].to_vec();
    for set in example_sets {
        for example in &set.examples {
            let clause = corpus.clause(&example.clause_id).ok_or_else(|| {
                TemplateError::DanglingExampleClause {
                    example_set: set.id.clone(),
                    clause_id: example.clause_id.clone(),
                }
            })?;
            if let Some(unknown) = example
                .answer_option_ids
                .iter()
                .find(|id| !option_set.contains(id))
            {
                return Err(TemplateError::UnknownExampleOption {
                    example_set: set.id.clone(),
                    option_id: unknown.clone(),
                    option_set: option_set.id.clone(),
                });
            }
            let arity = example.answer_option_ids.len();
            if (template.selection_mode == SelectionMode::Single && arity != 1) || arity == 0 {
                return Err(TemplateError::ExampleArity {
                    example_set: set.id.clone(),
                    clause_id: example.clause_id.clone(),
                    count: arity,
                });
            }
            let prompt = render(template, option_set, clause, question)?;
            messages.extend(prompt.messages);
            messages.push(ChatMessage::assistant(example_answer(
                option_set,
                &example.answer_option_ids,
                style,
            )));
        }
    }
    messages.push(final_user);
    let mut metadata = conversation.metadata.clone();
    metadata
        .example_set_ids
        .extend(example_sets.iter().map(|s| s.id.clone()));
    Ok(RenderedConversation { messages, metadata })
}
