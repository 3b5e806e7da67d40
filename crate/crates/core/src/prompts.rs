//! Prompt templates and their rendering into token sequences with mask slots.
//!
//! A template set holds three templates: the support template (sentence,
//! mask slots and the sentence's label), the query template (sentence and
//! mask slots) and the request sent to a text generator for a category
//! description. Every rendered prompt carries a canonical text and its
//! SHA-256 key; an external exporter that reproduces the canonical text
//! byte for byte can key embeddings the same way.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SENTENCE_SLOT: &str = "{x}";
pub const MASK_SLOT: &str = "{MASK}";
pub const LABEL_SLOT: &str = "{L}";
pub const CATEGORY_SLOT: &str = "{c}";

/// Token standing in for one mask slot. The tokenizer can never produce it
/// because brackets are always split off.
pub const MASK_TOKEN: &str = "[mask]";

const ALL_SLOTS: [&str; 4] = [SENTENCE_SLOT, MASK_SLOT, LABEL_SLOT, CATEGORY_SLOT];

pub const DEFAULT_MASK_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub support: String,
    pub query: String,
    pub description_request: String,
    pub mask_count: usize,
}

/// Named hard-template pairs. `about-category` is the default.
pub const PRESETS: [(&str, &str, &str); 5] = [
    (
        "about-category",
        "About {x} Category {MASK} are : {L}.",
        "About {x} Category {MASK}.",
    ),
    (
        "opinions-about",
        "In {x}, the opinions about {L} are {MASK}.",
        "In {x}, the opinion that exists are {MASK}.",
    ),
    (
        "aspects-of",
        "{L} The aspects of {x} are {MASK}.",
        "The aspects of {x} are {MASK}.",
    ),
    (
        "what-are-aspects",
        "{L} What are the aspects of {x} {MASK}.",
        "What are the aspects of {x} {MASK}.",
    ),
    (
        "this-means",
        "This {x} means : {L} {MASK}.",
        "This {x} means : {MASK}.",
    ),
];

pub const DEFAULT_DESCRIPTION_REQUEST: &str = "Provide a comprehensive description of {c}.";

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::preset("about-category", DEFAULT_MASK_COUNT)
            .expect("default preset is valid")
    }
}

impl TemplateSet {
    pub fn new(
        support: impl Into<String>,
        query: impl Into<String>,
        description_request: impl Into<String>,
        mask_count: usize,
    ) -> Result<Self> {
        let set = TemplateSet {
            support: support.into(),
            query: query.into(),
            description_request: description_request.into(),
            mask_count,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn preset(name: &str, mask_count: usize) -> Result<Self> {
        let (_, support, query) = PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| {
                let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
                Error::InvalidArgument(format!(
                    "unknown template preset {name:?} (known: {})",
                    names.join(", ")
                ))
            })?;
        TemplateSet::new(*support, *query, DEFAULT_DESCRIPTION_REQUEST, mask_count)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: TemplateSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_count == 0 {
            return Err(Error::Validation("mask_count must be at least 1".into()));
        }
        check_slots("support", &self.support, &[SENTENCE_SLOT, MASK_SLOT, LABEL_SLOT])?;
        check_slots("query", &self.query, &[SENTENCE_SLOT, MASK_SLOT])?;
        check_slots("description_request", &self.description_request, &[CATEGORY_SLOT])?;
        Ok(())
    }

    /// Support prompt: sentence, mask slots and the sentence's label.
    pub fn render_support(&self, sentence: &str, label: &str) -> Result<RenderedPrompt> {
        let text = normalize_text(sentence);
        if text.is_empty() {
            return Err(Error::InvalidArgument("empty support sentence".into()));
        }
        if label.trim().is_empty() {
            return Err(Error::InvalidArgument("empty support label".into()));
        }
        let label = label_to_text(label);
        self.render(&self.support, PromptKind::Support, &text, Some(&label))
    }

    pub fn render_query(&self, sentence: &str) -> Result<RenderedPrompt> {
        let text = normalize_text(sentence);
        if text.is_empty() {
            return Err(Error::InvalidArgument("empty query sentence".into()));
        }
        self.render(&self.query, PromptKind::Query, &text, None)
    }

    /// Support-template prompt for a category description, labelled with the
    /// category it describes.
    pub fn render_description(&self, description: &str, label: &str) -> Result<RenderedPrompt> {
        let mut prompt = self.render_support(description, label)?;
        prompt.kind = PromptKind::Description;
        Ok(prompt)
    }

    /// Text sent to a generator to describe `label`.
    pub fn render_description_request(&self, label: &str) -> Result<String> {
        if label.trim().is_empty() {
            return Err(Error::InvalidArgument("empty category label".into()));
        }
        Ok(self
            .description_request
            .replacen(CATEGORY_SLOT, &label_to_text(label), 1))
    }

    fn render(
        &self,
        template: &str,
        kind: PromptKind,
        sentence: &str,
        label: Option<&str>,
    ) -> Result<RenderedPrompt> {
        let mut tokens = Vec::new();
        let mut mask_positions = Vec::with_capacity(self.mask_count);
        let mut canonical = String::with_capacity(template.len() + sentence.len() + 32);

        for piece in split_slots(template) {
            match piece {
                Piece::Literal(s) => {
                    canonical.push_str(s);
                    tokens.extend(tokenize(s));
                }
                Piece::Slot(SENTENCE_SLOT) => {
                    canonical.push_str(sentence);
                    tokens.extend(tokenize(sentence));
                }
                Piece::Slot(LABEL_SLOT) => {
                    let label = label.ok_or_else(|| {
                        Error::Validation("template has a label slot but no label".into())
                    })?;
                    canonical.push_str(label);
                    tokens.extend(tokenize(label));
                }
                Piece::Slot(MASK_SLOT) => {
                    for j in 1..=self.mask_count {
                        if j > 1 {
                            canonical.push(' ');
                        }
                        canonical.push_str(&format!("[MASK_{j}]"));
                        mask_positions.push(tokens.len());
                        tokens.push(MASK_TOKEN.to_string());
                    }
                }
                Piece::Slot(other) => {
                    return Err(Error::Validation(format!(
                        "placeholder {other} is not allowed here"
                    )))
                }
            }
        }

        let key = prompt_key(&canonical);
        Ok(RenderedPrompt {
            kind,
            tokens,
            mask_positions,
            canonical_text: canonical,
            key,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Support,
    Query,
    Description,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Support => "support",
            PromptKind::Query => "query",
            PromptKind::Description => "description",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub tokens: Vec<String>,
    pub mask_positions: Vec<usize>,
    pub canonical_text: String,
    /// Lowercase hex SHA-256 of `canonical_text`.
    pub key: String,
}

impl RenderedPrompt {
    pub fn mask_count(&self) -> usize {
        self.mask_positions.len()
    }

    /// Every token that is not a mask slot, in order.
    pub fn context_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens
            .iter()
            .map(String::as_str)
            .filter(|t| *t != MASK_TOKEN)
    }
}

pub fn prompt_key(canonical_text: &str) -> String {
    hex::encode(Sha256::digest(canonical_text.as_bytes()))
}

/// Lowercases, splits on whitespace and detaches every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Trims and collapses runs of whitespace to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `food_food_bread` -> `food food bread`.
pub fn label_to_text(label: &str) -> String {
    normalize_text(&label.replace('_', " "))
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn split_slots(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while !rest.is_empty() {
        let next = ALL_SLOTS
            .iter()
            .filter_map(|slot| rest.find(slot).map(|at| (at, *slot)))
            .min_by_key(|(at, _)| *at);
        match next {
            Some((at, slot)) => {
                if at > 0 {
                    pieces.push(Piece::Literal(&rest[..at]));
                }
                pieces.push(Piece::Slot(slot));
                rest = &rest[at + slot.len()..];
            }
            None => {
                pieces.push(Piece::Literal(rest));
                rest = "";
            }
        }
    }
    pieces
}

fn check_slots(name: &str, template: &str, required: &[&str]) -> Result<()> {
    for slot in ALL_SLOTS {
        let count = template.matches(slot).count();
        let want = usize::from(required.contains(&slot));
        if count != want {
            return Err(Error::Validation(format!(
                "{name} template must contain {slot} exactly {want} time(s), found {count}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks_of(p: &RenderedPrompt) -> Vec<&str> {
        p.mask_positions.iter().map(|&i| p.tokens[i].as_str()).collect()
    }

    #[test]
    fn support_prompt_structure() {
        let set = TemplateSet::default();
        let p = set.render_support("great pizza", "food_food_pizza").unwrap();
        assert_eq!(
            p.tokens,
            [
                "about", "great", "pizza", "category", "[mask]", "[mask]", "[mask]", "are", ":",
                "food", "food", "pizza", "."
            ]
        );
        assert_eq!(p.mask_positions, vec![4, 5, 6]);
        assert_eq!(
            p.canonical_text,
            "About great pizza Category [MASK_1] [MASK_2] [MASK_3] are : food food pizza."
        );
        assert_eq!(p.kind, PromptKind::Support);
        let again = set.render_support("great pizza", "food_food_pizza").unwrap();
        assert_eq!(p.key, again.key);
        assert_eq!(p.key.len(), 64);
    }

    #[test]
    fn single_mask_slot() {
        let set = TemplateSet::preset("about-category", 1).unwrap();
        let p = set.render_support("great pizza", "food").unwrap();
        assert_eq!(p.mask_positions.len(), 1);
        assert_eq!(masks_of(&p), ["[mask]"]);
    }

    #[test]
    fn query_prompt_structure() {
        let set = TemplateSet::default();
        let q = set.render_query("Slow   service").unwrap();
        assert_eq!(
            q.tokens,
            ["about", "slow", "service", "category", "[mask]", "[mask]", "[mask]", "."]
        );
        assert_eq!(q.canonical_text, "About Slow service Category [MASK_1] [MASK_2] [MASK_3].");
        let s = set.render_support("Slow service", "service").unwrap();
        assert_ne!(q.canonical_text, s.canonical_text);
        assert_ne!(q.key, s.key);
        assert!(set.render_query("   ").is_err());
        assert!(set.render_support("", "x").is_err());
    }

    #[test]
    fn description_request() {
        let set = TemplateSet::default();
        assert_eq!(
            set.render_description_request("food_food_bread").unwrap(),
            "Provide a comprehensive description of food food bread."
        );
        assert_eq!(
            set.render_description_request("price").unwrap(),
            "Provide a comprehensive description of price."
        );
        assert!(set.render_description_request("").is_err());
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Tasty pizza!"), ["tasty", "pizza", "!"]);
        assert!(tokenize("").is_empty());
        let once = tokenize("Don't   stop... [MASK] now!");
        assert_eq!(once, ["don", "'", "t", "stop", ".", ".", ".", "[", "mask", "]", "now", "!"]);
        assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn literal_mask_text_is_not_a_sentinel() {
        let set = TemplateSet::default();
        let p = set.render_query("the [mask] is off").unwrap();
        let sentinels = p.tokens.iter().filter(|t| *t == MASK_TOKEN).count();
        assert_eq!(sentinels, 3);
        assert_eq!(masks_of(&p), ["[mask]"; 3]);
    }

    #[test]
    fn validation_rejects_bad_templates() {
        let d = DEFAULT_DESCRIPTION_REQUEST;
        assert!(TemplateSet::new("{x} {MASK}", "{x} {MASK}", d, 3).is_err());
        assert!(TemplateSet::new("{x} {MASK} {L} {L}", "{x} {MASK}", d, 3).is_err());
        assert!(TemplateSet::new("{x} {MASK} {L}", "{x} {MASK} {L}", d, 3).is_err());
        assert!(TemplateSet::new("{x} {MASK} {L}", "{x} {MASK}", "describe", 3).is_err());
        assert!(TemplateSet::new("{x} {MASK} {L}", "{x} {MASK}", d, 0).is_err());
        assert!(TemplateSet::new("{x} {MASK} {L}", "{x} {MASK}", d, 2).is_ok());
        assert!(TemplateSet::preset("nope", 3).is_err());
        for (name, _, _) in PRESETS {
            assert!(TemplateSet::preset(name, 4).is_ok(), "{name}");
        }
    }

    #[test]
    fn template_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(
            &path,
            r#"{"support":"{x} {MASK} {L}","query":"{x} {MASK}","description_request":"{c}","mask_count":2}"#,
        )
        .unwrap();
        let set = TemplateSet::load(&path).unwrap();
        assert_eq!(set.mask_count, 2);
        std::fs::write(
            &path,
            r#"{"support":"{x} {MASK} {L}","query":"{x} {MASK}","description_request":"{c}","mask_count":2,"extra":1}"#,
        )
        .unwrap();
        assert!(TemplateSet::load(&path).is_err());
    }
}
