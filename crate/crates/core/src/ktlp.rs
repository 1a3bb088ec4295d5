//! Knowledge tracing rendered as text: prompt templates, the formatter and
//! its inverse, and the word-level tokenizer used by the language model.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Interaction, InteractionDataset, StudentHistory, Target};

#[derive(Error, Debug)]
pub enum KtlpError {
    #[error("template error: {0}")]
    Template(String),
    #[error("KC `{kc_id}` has no name; description mode requires one")]
    EmptyKcName { kc_id: String },
    #[error("KC id `{0}` cannot be rendered as an id token")]
    InvalidId(String),
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Decode { id: u32, size: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KtlpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationMode {
    #[default]
    Description,
    Id,
}

impl std::fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RepresentationMode::Description => "description",
            RepresentationMode::Id => "id",
        })
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = KtlpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "description" => Ok(RepresentationMode::Description),
            "id" => Ok(RepresentationMode::Id),
            other => Err(KtlpError::Template(format!("unknown representation mode `{other}`"))),
        }
    }
}

/// Every string that glues a prompt together. All of them are configurable.
///
/// Rendered layout:
/// `{instruction} {open}{repr}{sep}{word}{close}{connector}...{target_marker}{target}{answer_cue}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub pair_open: String,
    pub pair_close: String,
    pub pair_separator: String,
    pub step_connector: String,
    /// Must start with whitespace so the prompt splits cleanly into tokens at it.
    pub target_marker: String,
    pub answer_cue: String,
    pub correct_word: String,
    pub incorrect_word: String,
    pub answer_yes: String,
    pub answer_no: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction: "Will the student answer the target exercise correctly? History:".into(),
            pair_open: "(".into(),
            pair_close: ")".into(),
            pair_separator: ", ".into(),
            step_connector: " -> ".into(),
            target_marker: " Target: ".into(),
            answer_cue: " Answer:".into(),
            correct_word: "correct".into(),
            incorrect_word: "incorrect".into(),
            answer_yes: "yes".into(),
            answer_no: "no".into(),
        }
    }
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_')
}

impl PromptTemplate {
    fn delimiters(&self) -> [(&'static str, &str); 6] {
        [
            ("pair_open", &self.pair_open),
            ("pair_close", &self.pair_close),
            ("pair_separator", &self.pair_separator),
            ("step_connector", &self.step_connector),
            ("target_marker", &self.target_marker),
            ("answer_cue", &self.answer_cue),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let delims = self.delimiters();
        for (name, d) in &delims {
            if d.trim().is_empty() {
                return Err(KtlpError::Template(format!("{name} must contain a non-space character")));
            }
        }
        for (i, (na, a)) in delims.iter().enumerate() {
            for (nb, b) in &delims[i + 1..] {
                let (a, b) = (a.trim(), b.trim());
                if a == b || a.contains(b) || b.contains(a) {
                    return Err(KtlpError::Template(format!("{na} `{a}` collides with {nb} `{b}`")));
                }
            }
        }
        if !self.target_marker.starts_with(char::is_whitespace) {
            return Err(KtlpError::Template("target_marker must start with whitespace".into()));
        }
        for (name, w) in [
            ("correct_word", &self.correct_word),
            ("incorrect_word", &self.incorrect_word),
            ("answer_yes", &self.answer_yes),
            ("answer_no", &self.answer_no),
        ] {
            if !is_word(w) {
                return Err(KtlpError::Template(format!("{name} `{w}` must be a single alphanumeric word")));
            }
        }
        if self.correct_word == self.incorrect_word {
            return Err(KtlpError::Template("correctness words must differ".into()));
        }
        if self.answer_yes == self.answer_no {
            return Err(KtlpError::Template("answer words must differ".into()));
        }
        Ok(())
    }

    /// Removes delimiter strings (and angle brackets) from a KC name and
    /// collapses whitespace.
    pub fn sanitize(&self, name: &str) -> String {
        let mut s = name.to_string();
        for (_, d) in self.delimiters() {
            for pat in [d, d.trim()] {
                if !pat.is_empty() {
                    s = s.replace(pat, " ");
                }
            }
        }
        s = s.replace(['<', '>'], " ");
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn correctness_word(&self, correct: bool) -> &str {
        if correct {
            &self.correct_word
        } else {
            &self.incorrect_word
        }
    }
}

/// One rendered next-step prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KtlpExample {
    pub input: String,
    pub output: String,
    pub student_id: String,
    pub step: u64,
}

pub fn format_label(y: bool) -> &'static str {
    if y {
        "yes"
    } else {
        "no"
    }
}

pub fn parse_label(word: &str) -> Option<bool> {
    match word {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn represent(kc_id: &str, kc_name: &str, mode: RepresentationMode, template: &PromptTemplate) -> Result<String> {
    match mode {
        RepresentationMode::Description => {
            let name = template.sanitize(kc_name);
            if name.is_empty() {
                return Err(KtlpError::EmptyKcName { kc_id: kc_id.to_string() });
            }
            Ok(name)
        }
        RepresentationMode::Id => {
            if !is_id_body(kc_id) {
                return Err(KtlpError::InvalidId(kc_id.to_string()));
            }
            Ok(format!("<{kc_id}>"))
        }
    }
}

/// Renders the task input for predicting `target` after `history`.
pub fn format_input(
    history: &[Interaction],
    target: &Target,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<String> {
    template.validate()?;
    let mut text = template.instruction.clone();
    for (i, it) in history.iter().enumerate() {
        text.push_str(if i == 0 { " " } else { &template.step_connector });
        text.push_str(&template.pair_open);
        text.push_str(&represent(&it.kc_id, &it.kc_name, mode, template)?);
        text.push_str(&template.pair_separator);
        text.push_str(template.correctness_word(it.correct));
        text.push_str(&template.pair_close);
    }
    text.push_str(&template.target_marker);
    text.push_str(&represent(&target.kc_id, &target.kc_name, mode, template)?);
    text.push_str(&template.answer_cue);
    Ok(text)
}

/// Renders one training example: `history` predicts `next`.
pub fn format_example(
    history: &[Interaction],
    next: &Interaction,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<KtlpExample> {
    let input = format_input(history, &next.target(), mode, template)?;
    let output = if next.correct {
        template.answer_yes.clone()
    } else {
        template.answer_no.clone()
    };
    Ok(KtlpExample {
        input,
        output,
        student_id: next.student_id.clone(),
        step: next.step,
    })
}

/// One example per interaction with a non-empty preceding history.
pub fn format_history(
    history: &StudentHistory,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<Vec<KtlpExample>> {
    (1..history.len())
        .map(|t| format_example(&history.interactions[..t], &history.interactions[t], mode, template))
        .collect()
}

pub fn format_dataset(
    ds: &InteractionDataset,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<Vec<KtlpExample>> {
    let mut out = Vec::with_capacity(ds.n_interactions());
    for h in ds.histories.values() {
        out.extend(format_history(h, mode, template)?);
    }
    Ok(out)
}

/// Example texts covering every KC of a catalog, used to seed a vocabulary
/// without touching any student record.
pub fn catalog_corpus(
    kc_table: &BTreeMap<String, String>,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<Vec<KtlpExample>> {
    let mut out = Vec::with_capacity(kc_table.len() * 2);
    for (kc_id, kc_name) in kc_table {
        let mk = |correct| Interaction {
            student_id: String::new(),
            step: 0,
            exercise_id: String::new(),
            kc_id: kc_id.clone(),
            kc_name: kc_name.clone(),
            correct,
        };
        out.push(format_example(&[mk(true)], &mk(false), mode, template)?);
        out.push(format_example(&[mk(false)], &mk(true), mode, template)?);
    }
    Ok(out)
}

/// A prompt decoded back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub pairs: Vec<(String, bool)>,
    pub target: String,
}

pub fn parse_example(text: &str, template: &PromptTemplate) -> Result<ParsedPrompt> {
    let err = |offset: usize, message: &str| KtlpError::Parse {
        offset,
        message: message.to_string(),
    };
    let rest = text
        .strip_prefix(template.instruction.as_str())
        .ok_or_else(|| err(0, "text does not start with the instruction"))?;
    let base = template.instruction.len();
    let marker_at = rest
        .rfind(template.target_marker.as_str())
        .ok_or_else(|| err(base, "missing target marker"))?;
    let target_start = marker_at + template.target_marker.len();
    let target = rest[target_start..]
        .strip_suffix(template.answer_cue.as_str())
        .ok_or_else(|| err(base + rest.len(), "missing answer cue"))?;
    if target.is_empty() {
        return Err(err(base + target_start, "empty target"));
    }

    let body = &rest[..marker_at];
    let mut pairs = Vec::new();
    if !body.is_empty() {
        let body = body
            .strip_prefix(' ')
            .ok_or_else(|| err(base, "expected a space before the history"))?;
        let mut offset = base + 1;
        for chunk in body.split(template.step_connector.as_str()) {
            let inner = chunk
                .strip_prefix(template.pair_open.as_str())
                .and_then(|c| c.strip_suffix(template.pair_close.as_str()))
                .ok_or_else(|| err(offset, "malformed interaction pair"))?;
            let sep = inner
                .rfind(template.pair_separator.as_str())
                .ok_or_else(|| err(offset, "missing pair separator"))?;
            let repr = &inner[..sep];
            let word = &inner[sep + template.pair_separator.len()..];
            let correct = if word == template.correct_word {
                true
            } else if word == template.incorrect_word {
                false
            } else {
                return Err(err(offset, "unknown correctness word"));
            };
            if repr.is_empty() {
                return Err(err(offset, "empty exercise representation"));
            }
            pairs.push((repr.to_string(), correct));
            offset += chunk.len() + template.step_connector.len();
        }
    }
    Ok(ParsedPrompt {
        pairs,
        target: target.to_string(),
    })
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

fn is_id_body(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_id_char)
}

/// Length in bytes of an id token (`<body>`) starting at the head of `s`.
fn id_token_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix('<')?;
    let end = rest.find(|c: char| !is_id_char(c))?;
    (end > 0 && rest[end..].starts_with('>')).then_some(end + 2)
}

/// Splits text into word-level tokens: `<id>` tokens are atomic, runs of
/// alphanumerics form words and runs of other non-space characters form
/// punctuation tokens. Whitespace only separates.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut i = 0;
        while i < chunk.len() {
            let rest = &chunk[i..];
            let len = if let Some(n) = id_token_len(rest) {
                n
            } else {
                let first = rest.chars().next().unwrap();
                let word = first.is_alphanumeric() || first == '_';
                let mut n = 0;
                for (j, c) in rest.char_indices() {
                    let same = if word {
                        c.is_alphanumeric() || c == '_'
                    } else {
                        !(c.is_alphanumeric() || c == '_') && (j == 0 || id_token_len(&rest[j..]).is_none())
                    };
                    if !same {
                        break;
                    }
                    n = j + c.len_utf8();
                }
                n
            };
            out.push(&rest[..len]);
            i += len;
        }
    }
    out
}

pub const PAD: &str = "<|pad|>";
pub const UNK: &str = "<|unk|>";
pub const BOS: &str = "<|bos|>";
pub const EOS: &str = "<|eos|>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: BTreeMap<String, u32>,
    special: BTreeMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const BOS_ID: u32 = 2;
    pub const EOS_ID: u32 = 3;

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .into_iter()
            .map(|t| self.id(t).unwrap_or(Self::UNK_ID))
            .collect()
    }

    /// Joins tokens with single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.token(id).ok_or(KtlpError::Decode {
                    id,
                    size: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        let specials = [("pad", PAD), ("unk", UNK), ("bos", BOS), ("eos", EOS)];
        let file = VocabFile {
            tokens: self.index.iter().map(|(t, &i)| (t.clone(), i)).collect(),
            special: specials
                .iter()
                .map(|(k, t)| (k.to_string(), self.index[*t]))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        let n = file.tokens.len();
        let mut tokens = vec![None; n];
        for (t, i) in file.tokens {
            let slot = tokens
                .get_mut(i as usize)
                .ok_or_else(|| KtlpError::Template(format!("token id {i} out of range")))?;
            *slot = Some(t);
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| KtlpError::Template(format!("token id {i} missing"))))
            .collect::<Result<_>>()?;
        let v = Vocab::from_tokens(tokens);
        for (name, tok, id) in [
            ("pad", PAD, Self::PAD_ID),
            ("unk", UNK, Self::UNK_ID),
            ("bos", BOS, Self::BOS_ID),
            ("eos", EOS, Self::EOS_ID),
        ] {
            if v.id(tok) != Some(id) || file.special.get(name) != Some(&id) {
                return Err(KtlpError::Template(format!("special token `{name}` must have id {id}")));
            }
        }
        Ok(v)
    }
}

/// Word-level vocabulary over inputs and outputs. Special tokens come first,
/// then tokens by descending frequency with lexicographic tie-breaking.
pub fn build_vocab(corpus: &[KtlpExample], extra_id_tokens: &[String]) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(KtlpError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in corpus {
        for t in tokenize(&ex.input).into_iter().chain(tokenize(&ex.output)) {
            *counts.entry(t).or_default() += 1;
        }
    }
    for forced in ["yes", "no"] {
        counts.entry(forced).or_default();
    }
    let wrapped: Vec<String> = extra_id_tokens
        .iter()
        .map(|t| if id_token_len(t) == Some(t.len()) { t.clone() } else { format!("<{t}>") })
        .collect();
    for t in &wrapped {
        counts.entry(t.as_str()).or_default();
    }
    let specials = [PAD, UNK, BOS, EOS];
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !specials.contains(t)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = specials
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Ok(Vocab::from_tokens(tokens))
}

pub fn write_jsonl<W: Write>(examples: &[KtlpExample], mut w: W) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<KtlpExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
