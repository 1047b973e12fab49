//! Question templates: parsing, rendering under agreement rules, and
//! diversified variants.
//!
//! # Pattern syntax
//!
//! A pattern is a whitespace-separated sequence of tokens:
//!
//! * `{SLOT}`: one of `QUESTION_TYPE`, `COPULA`, `DEMONSTRATIVE`, `ARTICLE`,
//!   `PAIR`, `ATTR1`, `ATTR2`, `ATTRIBUTE_NAME`, `CATEGORY`, `LOCATION`,
//!   `CONJUNCTION`, `PART`;
//! * `[` … `]`: an optional phrase. It is rendered normally, removed by the
//!   phrase-dropping variant, and elided whole when one of its slots binds
//!   to nothing (an absent location);
//! * `?` and `,`: punctuation, attached to the preceding word;
//! * anything else: a literal word.
//!
//! `QUESTION_TYPE` renders the template's `question_type` string with
//! `is/are` resolved by agreement and `{attribute}` replaced by the bound
//! attribute name. Rendering collapses all spacing, so output never holds
//! doubled, leading or trailing spaces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::keyed_rng;
use crate::taxonomy::{AgreementBundle, Article, Category, Diagnostic, LocationPhrase, Number, Taxonomy};

pub const TEMPLATES_SCHEMA_VERSION: u32 = 1;

/// Words a non-binary question may start with.
pub const QUESTION_WORDS: [&str; 4] = ["what", "why", "when", "how"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Binary,
    NonBinary,
}

impl AnswerType {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Binary => "binary",
            AnswerType::NonBinary => "non_binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    QuestionType,
    Copula,
    Demonstrative,
    Article,
    Pair,
    Attr1,
    Attr2,
    AttributeName,
    Category,
    Location,
    Conjunction,
    Part,
}

impl Slot {
    const NAMES: [(Slot, &'static str); 12] = [
        (Slot::QuestionType, "QUESTION_TYPE"),
        (Slot::Copula, "COPULA"),
        (Slot::Demonstrative, "DEMONSTRATIVE"),
        (Slot::Article, "ARTICLE"),
        (Slot::Pair, "PAIR"),
        (Slot::Attr1, "ATTR1"),
        (Slot::Attr2, "ATTR2"),
        (Slot::AttributeName, "ATTRIBUTE_NAME"),
        (Slot::Category, "CATEGORY"),
        (Slot::Location, "LOCATION"),
        (Slot::Conjunction, "CONJUNCTION"),
        (Slot::Part, "PART"),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(s, _)| *s == self).map(|(_, n)| *n).unwrap()
    }

    pub fn parse(name: &str) -> Option<Slot> {
        Self::NAMES.iter().find(|(_, n)| *n == name).map(|(s, _)| *s)
    }

    /// Slots that describe the item itself; truncation stops at the first.
    fn is_descriptive(self) -> bool {
        matches!(
            self,
            Slot::Article | Slot::Pair | Slot::Attr1 | Slot::Attr2 | Slot::Category | Slot::Location | Slot::Part
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    Slot(Slot),
    Punct(char),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Piece {
    pub token: Token,
    /// Optional-phrase group this token belongs to.
    pub group: Option<u16>,
}

/// A parsed template pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern {
    pieces: Vec<Piece>,
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Pattern> {
        let mut pieces = Vec::new();
        let mut group: Option<u16> = None;
        let mut next_group = 0u16;
        let spaced = text
            .replace('[', " [ ")
            .replace(']', " ] ")
            .replace('?', " ? ")
            .replace(',', " , ");
        for raw in spaced.split_whitespace() {
            match raw {
                "[" => {
                    if group.is_some() {
                        return Err(Error::Pattern(format!("nested `[` in `{text}`")));
                    }
                    group = Some(next_group);
                    next_group += 1;
                }
                "]" => {
                    if group.take().is_none() {
                        return Err(Error::Pattern(format!("unbalanced `]` in `{text}`")));
                    }
                }
                "?" => pieces.push(Piece { token: Token::Punct('?'), group }),
                "," => pieces.push(Piece { token: Token::Punct(','), group }),
                w if w.starts_with('{') => {
                    let name = w
                        .strip_prefix('{')
                        .and_then(|w| w.strip_suffix('}'))
                        .ok_or_else(|| Error::Pattern(format!("malformed slot `{w}` in `{text}`")))?;
                    let slot =
                        Slot::parse(name).ok_or_else(|| Error::Pattern(format!("unknown slot `{name}` in `{text}`")))?;
                    pieces.push(Piece { token: Token::Slot(slot), group });
                }
                w => {
                    if w.contains(['{', '}']) {
                        return Err(Error::Pattern(format!("malformed slot `{w}` in `{text}`")));
                    }
                    pieces.push(Piece { token: Token::Word(w.to_string()), group });
                }
            }
        }
        if group.is_some() {
            return Err(Error::Pattern(format!("unclosed `[` in `{text}`")));
        }
        if pieces.is_empty() {
            return Err(Error::Pattern("empty pattern".into()));
        }
        Ok(Pattern { pieces })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.pieces.iter().filter_map(|p| match p.token {
            Token::Slot(s) => Some(s),
            _ => None,
        })
    }

    pub fn has_slot(&self, slot: Slot) -> bool {
        self.slots().any(|s| s == slot)
    }

    pub fn groups(&self) -> Vec<u16> {
        let mut gs: Vec<u16> = self.pieces.iter().filter_map(|p| p.group).collect();
        gs.dedup();
        gs
    }

    /// Whether `slot` occurs outside every optional phrase.
    pub fn slot_is_mandatory(&self, slot: Slot) -> bool {
        self.pieces
            .iter()
            .any(|p| p.token == Token::Slot(slot) && p.group.is_none())
    }

    fn from_pieces(pieces: Vec<Piece>) -> Pattern {
        Pattern { pieces }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let mut open: Option<u16> = None;
        for piece in &self.pieces {
            if open.is_some() && piece.group != open {
                out.push(']');
                open = None;
            }
            let text = match &piece.token {
                Token::Word(w) => w.clone(),
                Token::Slot(s) => format!("{{{}}}", s.name()),
                Token::Punct(c) => {
                    out.push(*c);
                    continue;
                }
            };
            if !out.is_empty() {
                out.push(' ');
            }
            if piece.group.is_some() && open != piece.group {
                out.push('[');
                open = piece.group;
            }
            out.push_str(&text);
        }
        if open.is_some() {
            out.push(']');
        }
        f.write_str(&out)
    }
}

impl TryFrom<String> for Pattern {
    type Error = Error;
    fn try_from(s: String) -> Result<Pattern> {
        Pattern::parse(&s)
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.to_string()
    }
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionTemplate {
    pub template_id: String,
    pub answer_type: AnswerType,
    pub question_type: String,
    pub pattern: Pattern,
    pub arity: u8,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub permutation_id: u8,
    /// Attributes the template is written for (`*` suffix = prefix match).
    /// Empty means any attribute.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_attributes: Vec<String>,
    /// Non-binary template that describes the item with attribute values
    /// other than the one asked about. Off unless enabled in the config.
    #[serde(default, skip_serializing_if = "is_false")]
    pub context_values: bool,
    /// Variant rendered with deliberately switched number agreement.
    #[serde(default, skip_serializing_if = "is_false")]
    pub noise: bool,
}

/// Orderings of ATTR1, ATTR2 and CATEGORY realized by each permutation id.
pub fn permutations(arity: u8) -> &'static [&'static [Slot]] {
    use Slot::{Attr1 as A1, Attr2 as A2, Category as C};
    match arity {
        0 => &[&[C]],
        1 => &[&[A1, C], &[C, A1]],
        2 => &[&[A1, A2, C], &[A2, A1, C], &[A1, C, A2], &[A2, C, A1], &[C, A1, A2], &[C, A2, A1]],
        _ => &[],
    }
}

fn matches_attr(pattern: &str, attribute: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => attribute.starts_with(prefix),
        None => pattern == attribute,
    }
}

impl QuestionTemplate {
    /// Written for this attribute by name or prefix. A bare `*` makes the
    /// template universal instead.
    pub fn is_specific_to(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|p| p != "*" && matches_attr(p, attribute))
    }

    pub fn is_universal(&self) -> bool {
        self.attributes.iter().any(|p| p == "*")
    }

    pub fn accepts_attribute(&self, attribute: &str) -> bool {
        (self.attributes.is_empty() || self.attributes.iter().any(|p| matches_attr(p, attribute)))
            && !self.exclude_attributes.iter().any(|p| matches_attr(p, attribute))
    }

    /// Order of ATTR1/ATTR2/CATEGORY in the pattern.
    pub fn slot_order(&self) -> Vec<Slot> {
        self.pattern
            .slots()
            .filter(|s| matches!(s, Slot::Attr1 | Slot::Attr2 | Slot::Category))
            .collect()
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let src = "templates";
        let id = &self.template_id;
        let mut err = |code: &str, msg: String| out.push(Diagnostic::error(src, code, format!("`{id}`: {msg}")));
        if self.template_id.is_empty() || self.template_id.contains('~') {
            err("schema", "template_id must be non-empty and must not contain `~`".into());
        }
        let has1 = self.pattern.has_slot(Slot::Attr1);
        let has2 = self.pattern.has_slot(Slot::Attr2);
        let arity = u8::from(has1) + u8::from(has2);
        if self.arity > 2 {
            err("arity", format!("arity {} outside 0..=2", self.arity));
        } else if arity != self.arity || (has2 && !has1) {
            err("arity", format!("arity {} does not match ATTR slots in `{}`", self.arity, self.pattern));
        }
        match self.answer_type {
            AnswerType::Binary => {
                if self.pieces_end_with_question_mark().is_none() {
                    err("punctuation", "binary pattern must end with `?`".into());
                }
                if !self.pattern.has_slot(Slot::Category) {
                    err("schema", "binary pattern needs a CATEGORY slot".into());
                }
                let perms = permutations(self.arity);
                match perms.get(self.permutation_id as usize) {
                    None => err(
                        "permutation",
                        format!("permutation_id {} outside 0..{}", self.permutation_id, perms.len()),
                    ),
                    Some(order) if self.slot_order() != *order => err(
                        "permutation",
                        format!("slot order does not realize permutation_id {}", self.permutation_id),
                    ),
                    Some(_) => {}
                }
            }
            AnswerType::NonBinary => {
                let first = match self.pattern.pieces().first().map(|p| &p.token) {
                    Some(Token::Word(w)) => Some(w.as_str()),
                    Some(Token::Slot(Slot::QuestionType)) => self.question_type.split_whitespace().next(),
                    _ => None,
                };
                if !first.is_some_and(|w| QUESTION_WORDS.contains(&w)) {
                    err("question-word", "non-binary pattern must begin with what/why/when/how".into());
                }
                if self.pieces_end_with_question_mark().is_none() {
                    err("punctuation", "non-binary pattern must end with `?`".into());
                }
                if self.arity > 0 && !self.context_values {
                    err("arity", "non-binary templates with ATTR slots must set context_values".into());
                }
            }
        }
        out
    }

    fn pieces_end_with_question_mark(&self) -> Option<()> {
        match self.pattern.pieces().last()?.token {
            Token::Punct('?') => Some(()),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Binding and rendering

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCategory {
    pub name: String,
    pub singular: String,
    pub plural: String,
}

impl From<&Category> for BoundCategory {
    fn from(c: &Category) -> Self {
        BoundCategory {
            name: c.name.clone(),
            singular: c.singular_form.clone(),
            plural: c.plural_form.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoundValue {
    pub attribute: String,
    pub value: String,
}

impl BoundValue {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        BoundValue {
            attribute: attribute.into(),
            value: value.into(),
        }
    }
}

/// Everything a template needs to become a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<BoundCategory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attr_values: Vec<BoundValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LocationPhrase>,
    pub agreement: AgreementBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjunction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionText(pub String);

impl QuestionText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QuestionText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

enum Out {
    Words(String),
    Article,
    Punct(char),
}

/// Fill a template. Pure: identical inputs give identical text.
pub fn render(template: &QuestionTemplate, binding: &Binding) -> Result<QuestionText> {
    let agreement = if template.noise {
        binding.agreement.flipped()
    } else {
        binding.agreement
    };
    for (i, a) in binding.attr_values.iter().enumerate() {
        if binding.attr_values[..i].iter().any(|b| b.attribute == a.attribute) {
            return Err(Error::InvalidCombination(format!(
                "binding repeats attribute `{}`",
                a.attribute
            )));
        }
    }
    let missing = |slot: Slot| Error::MissingSlot {
        template_id: template.template_id.clone(),
        slot: slot.name().to_string(),
    };

    // Ok(None): slot binds to nothing and is elided
    let fill = |slot: Slot| -> Result<Option<Out>> {
        let words = |s: &str| Ok(Some(Out::Words(s.to_string())));
        match slot {
            Slot::QuestionType => {
                let text = template
                    .question_type
                    .split_whitespace()
                    .map(|w| match w {
                        "is/are" => agreement.copula.as_str(),
                        w => w,
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                let text = if text.contains("{attribute}") {
                    let name = binding.attribute_name.as_deref().ok_or_else(|| missing(Slot::AttributeName))?;
                    text.replace("{attribute}", name)
                } else {
                    text
                };
                words(&text)
            }
            Slot::Copula => words(agreement.copula.as_str()),
            Slot::Demonstrative => words(agreement.demonstrative.as_str()),
            Slot::Article => Ok((agreement.article != Article::None).then_some(Out::Article)),
            Slot::Pair => words(agreement.pair_phrase.as_str()),
            Slot::Attr1 => binding
                .attr_values
                .first()
                .map(|v| Some(Out::Words(v.value.clone())))
                .ok_or_else(|| missing(slot)),
            Slot::Attr2 => binding
                .attr_values
                .get(1)
                .map(|v| Some(Out::Words(v.value.clone())))
                .ok_or_else(|| missing(slot)),
            Slot::AttributeName => binding
                .attribute_name
                .as_deref()
                .map(|n| Some(Out::Words(n.to_string())))
                .ok_or_else(|| missing(slot)),
            Slot::Category => {
                let c = binding.category.as_ref().ok_or_else(|| missing(slot))?;
                words(match agreement.noun_form {
                    Number::Singular => &c.singular,
                    Number::Plural => &c.plural,
                })
            }
            Slot::Location => Ok(binding.location.map(|l| Out::Words(l.as_str().to_string()))),
            Slot::Conjunction => words(binding.conjunction.as_deref().unwrap_or("with")),
            Slot::Part => binding
                .part
                .as_deref()
                .map(|p| Some(Out::Words(p.to_string())))
                .ok_or_else(|| missing(slot)),
        }
    };

    let mut outs: Vec<Out> = Vec::new();
    let pieces = template.pattern.pieces();
    let mut i = 0;
    while i < pieces.len() {
        let group = pieces[i].group;
        let end = match group {
            Some(g) => i + pieces[i..].iter().take_while(|p| p.group == Some(g)).count(),
            None => i + 1,
        };
        let mut chunk = Vec::new();
        let mut elided = false;
        for piece in &pieces[i..end] {
            match &piece.token {
                Token::Word(w) => chunk.push(Out::Words(w.clone())),
                Token::Punct(c) => chunk.push(Out::Punct(*c)),
                Token::Slot(slot) => match fill(*slot)? {
                    Some(out) => chunk.push(out),
                    None if *slot == Slot::Location => elided = true,
                    None => {}
                },
            }
        }
        // an optional phrase with an unbound location disappears entirely
        if !(elided && group.is_some()) {
            outs.extend(chunk);
        }
        i = end;
    }

    let words: Vec<Option<String>> = outs
        .iter()
        .map(|o| match o {
            Out::Words(w) => Some(w.clone()),
            _ => None,
        })
        .collect();
    let mut text = String::new();
    for (k, out) in outs.iter().enumerate() {
        let piece = match out {
            Out::Punct(c) => {
                text.push(*c);
                continue;
            }
            Out::Words(w) => w.clone(),
            Out::Article => {
                let next = words[k + 1..].iter().flatten().flat_map(|w| w.split_whitespace()).next();
                match next {
                    Some(next) => Article::before(next).as_str().to_string(),
                    None => continue,
                }
            }
        };
        for w in piece.split_whitespace() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(w);
        }
    }
    Ok(QuestionText(text.to_lowercase()))
}

// ---------------------------------------------------------------------------
// Diversification

fn default_drop() -> f64 {
    0.10
}
fn default_conjunction_swap() -> f64 {
    0.25
}
fn default_truncate() -> f64 {
    0.05
}
fn default_agreement_noise() -> f64 {
    0.02
}
fn default_conjunctions() -> Vec<String> {
    ["with", "designed with", "featured in {} design", "in {} design"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversifyPolicy {
    #[serde(default = "default_drop")]
    pub drop_phrase_prob: f64,
    #[serde(default = "default_conjunction_swap")]
    pub conjunction_swap_prob: f64,
    /// Replacements for a single-word conjunction after the category. `{}`
    /// marks where the attribute value goes; without it the value follows.
    #[serde(default = "default_conjunctions")]
    pub conjunction_alternatives: Vec<String>,
    #[serde(default = "default_truncate")]
    pub truncate_prob: f64,
    #[serde(default = "default_agreement_noise")]
    pub agreement_noise_prob: f64,
    /// Seed for variant selection. Not read from configuration files; the
    /// generator sets it from the master seed.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for DiversifyPolicy {
    fn default() -> Self {
        DiversifyPolicy {
            drop_phrase_prob: default_drop(),
            conjunction_swap_prob: default_conjunction_swap(),
            conjunction_alternatives: default_conjunctions(),
            truncate_prob: default_truncate(),
            agreement_noise_prob: default_agreement_noise(),
            rng_seed: 0,
        }
    }
}

impl DiversifyPolicy {
    /// Policy that never produces variants.
    pub fn none() -> Self {
        DiversifyPolicy {
            drop_phrase_prob: 0.0,
            conjunction_swap_prob: 0.0,
            truncate_prob: 0.0,
            agreement_noise_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("drop_phrase_prob", self.drop_phrase_prob),
            ("conjunction_swap_prob", self.conjunction_swap_prob),
            ("truncate_prob", self.truncate_prob),
            ("agreement_noise_prob", self.agreement_noise_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self
            .conjunction_alternatives
            .iter()
            .any(|c| c.trim().is_empty() || c.matches("{}").count() > 1)
        {
            return Err(Error::Config("conjunction alternatives must be non-empty with at most one `{}`".into()));
        }
        Ok(())
    }

    fn swappable_words(&self) -> impl Iterator<Item = &str> {
        self.conjunction_alternatives
            .iter()
            .map(String::as_str)
            .filter(|c| !c.contains("{}") && !c.contains(' '))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Drop(u16),
    Conjunction(usize),
    Truncate,
    Noise,
}

impl Variant {
    fn suffix(self) -> String {
        match self {
            Variant::Drop(g) => format!("drop{g}"),
            Variant::Conjunction(k) => format!("conj{k}"),
            Variant::Truncate => "trunc".into(),
            Variant::Noise => "noise".into(),
        }
    }

    fn parse(suffix: &str) -> Option<Variant> {
        if let Some(g) = suffix.strip_prefix("drop") {
            return g.parse().ok().map(Variant::Drop);
        }
        if let Some(k) = suffix.strip_prefix("conj") {
            return k.parse().ok().map(Variant::Conjunction);
        }
        match suffix {
            "trunc" => Some(Variant::Truncate),
            "noise" => Some(Variant::Noise),
            _ => None,
        }
    }
}

/// Index of the first conjunction word after CATEGORY that directly
/// precedes an attribute slot.
fn conjunction_position(template: &QuestionTemplate, policy: &DiversifyPolicy) -> Option<usize> {
    let pieces = template.pattern.pieces();
    let cat = pieces.iter().position(|p| p.token == Token::Slot(Slot::Category))?;
    (cat + 1..pieces.len().saturating_sub(1)).find(|&i| {
        matches!(&pieces[i].token, Token::Word(w) if policy.swappable_words().any(|c| c == w))
            && matches!(pieces[i + 1].token, Token::Slot(Slot::Attr1 | Slot::Attr2))
    })
}

fn truncation_point(template: &QuestionTemplate) -> Option<usize> {
    if template.answer_type != AnswerType::Binary {
        return None;
    }
    let pieces = template.pattern.pieces();
    let cut = pieces
        .iter()
        .position(|p| matches!(p.token, Token::Slot(s) if s.is_descriptive()))?;
    (cut > 0).then_some(cut)
}

fn apply_variant(template: &QuestionTemplate, variant: Variant, policy: &DiversifyPolicy) -> Option<QuestionTemplate> {
    let pieces = template.pattern.pieces();
    let new_pieces: Vec<Piece> = match variant {
        Variant::Drop(g) => {
            if !template.pattern.groups().contains(&g) {
                return None;
            }
            pieces.iter().filter(|p| p.group != Some(g)).cloned().collect()
        }
        Variant::Conjunction(k) => {
            let at = conjunction_position(template, policy)?;
            let alt = policy.conjunction_alternatives.get(k)?;
            let Token::Word(current) = &pieces[at].token else { return None };
            if alt == current {
                return None;
            }
            let group = pieces[at].group;
            let attr = pieces[at + 1].clone();
            let word = |w: &str| Piece {
                token: Token::Word(w.to_string()),
                group,
            };
            let mut replacement = Vec::new();
            match alt.split_once("{}") {
                Some((before, after)) => {
                    replacement.extend(before.split_whitespace().map(word));
                    replacement.push(attr);
                    replacement.extend(after.split_whitespace().map(word));
                }
                None => {
                    replacement.extend(alt.split_whitespace().map(word));
                    replacement.push(attr);
                }
            }
            let mut out = pieces[..at].to_vec();
            out.extend(replacement);
            out.extend_from_slice(&pieces[at + 2..]);
            out
        }
        Variant::Truncate => pieces[truncation_point(template)?..].to_vec(),
        Variant::Noise => pieces.to_vec(),
    };
    Some(QuestionTemplate {
        template_id: format!("{}~{}", template.template_id, variant.suffix()),
        pattern: Pattern::from_pieces(new_pieces),
        noise: template.noise || variant == Variant::Noise,
        ..template.clone()
    })
}

/// The template followed by its sampled variants.
///
/// Each variant applies one transformation to the primary template: drop an
/// optional phrase, swap the conjunction after the category, truncate the
/// question-type phrase (binary only), or switch number agreement (flagged
/// as noise). Draws come from a generator keyed by the policy seed, the
/// template id and `combo_key`, so the list is reproducible anywhere.
pub fn diversify(template: &QuestionTemplate, policy: &DiversifyPolicy, combo_key: &str) -> Vec<QuestionTemplate> {
    let mut rng = keyed_rng(policy.rng_seed, &format!("diversify|{}|{combo_key}", template.template_id));
    // fixed draw order, independent of which transformations apply
    let u_drop: f64 = rng.random();
    let pick_group: u32 = rng.random();
    let u_conj: f64 = rng.random();
    let pick_conj: u32 = rng.random();
    let u_trunc: f64 = rng.random();
    let u_noise: f64 = rng.random();

    let mut variants = vec![template.clone()];
    let groups = template.pattern.groups();
    if u_drop < policy.drop_phrase_prob && !groups.is_empty() {
        let g = groups[pick_group as usize % groups.len()];
        variants.extend(apply_variant(template, Variant::Drop(g), policy));
    }
    if u_conj < policy.conjunction_swap_prob {
        if let Some(at) = conjunction_position(template, policy) {
            let Token::Word(current) = &template.pattern.pieces()[at].token else { unreachable!() };
            let choices: Vec<usize> = (0..policy.conjunction_alternatives.len())
                .filter(|&k| &policy.conjunction_alternatives[k] != current)
                .collect();
            if !choices.is_empty() {
                let k = choices[pick_conj as usize % choices.len()];
                variants.extend(apply_variant(template, Variant::Conjunction(k), policy));
            }
        }
    }
    if u_trunc < policy.truncate_prob {
        variants.extend(apply_variant(template, Variant::Truncate, policy));
    }
    if u_noise < policy.agreement_noise_prob {
        variants.extend(apply_variant(template, Variant::Noise, policy));
    }
    variants
}

// ---------------------------------------------------------------------------
// Library

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateDocument {
    pub schema_version: u32,
    pub templates: Vec<QuestionTemplate>,
}

impl TemplateDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("template library", e))
    }

    pub fn validate(&self, taxonomy: Option<&Taxonomy>) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.schema_version != TEMPLATES_SCHEMA_VERSION {
            out.push(Diagnostic::error(
                "templates",
                "schema-version",
                format!("schema_version {} (expected {TEMPLATES_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let mut seen = BTreeMap::new();
        for t in &self.templates {
            out.extend(t.validate());
            if seen.insert(t.template_id.as_str(), ()).is_some() {
                out.push(Diagnostic::error(
                    "templates",
                    "duplicate-template",
                    format!("template_id `{}` declared twice", t.template_id),
                ));
            }
            if let Some(tax) = taxonomy {
                for a in t.attributes.iter().chain(&t.exclude_attributes) {
                    let known = tax.attributes().any(|attr| matches_attr(a, &attr.name));
                    if !known {
                        out.push(Diagnostic::warning(
                            "templates",
                            "unmatched-attribute",
                            format!("`{}`: attribute filter `{a}` matches no registered attribute", t.template_id),
                        ));
                    }
                }
            }
        }
        // every binary question-type family realizes all permutations of
        // each arity it uses
        let mut families: BTreeMap<(&str, u8), Vec<u8>> = BTreeMap::new();
        for t in self.templates.iter().filter(|t| t.answer_type == AnswerType::Binary) {
            families.entry((t.question_type.as_str(), t.arity)).or_default().push(t.permutation_id);
        }
        for ((qt, arity), mut ids) in families {
            ids.sort_unstable();
            ids.dedup();
            let want = permutations(arity).len();
            if ids.len() != want {
                out.push(Diagnostic::error(
                    "templates",
                    "permutation-coverage",
                    format!("binary `{qt}` arity {arity} realizes {} of {want} permutations", ids.len()),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: BTreeMap<String, QuestionTemplate>,
}

impl TemplateLibrary {
    pub fn from_document(doc: TemplateDocument) -> Result<Self> {
        let diagnostics = doc.validate(None);
        if crate::taxonomy::has_errors(&diagnostics) {
            return Err(Error::Validation(diagnostics));
        }
        Ok(TemplateLibrary {
            templates: doc.templates.into_iter().map(|t| (t.template_id.clone(), t)).collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(TemplateDocument::from_json(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(crate::builtin::TEMPLATES).expect("shipped templates are valid")
    }

    /// Templates in id order.
    pub fn iter(&self) -> impl Iterator<Item = &QuestionTemplate> {
        self.templates.values()
    }

    pub fn get(&self, template_id: &str) -> Option<&QuestionTemplate> {
        self.templates.get(template_id)
    }

    /// Rebuild a template or one of its variants from its id.
    pub fn resolve(&self, template_id: &str, policy: &DiversifyPolicy) -> Result<QuestionTemplate> {
        let (base, suffix) = match template_id.split_once('~') {
            Some((b, s)) => (b, Some(s)),
            None => (template_id, None),
        };
        let template = self.get(base).ok_or_else(|| Error::miss("template", template_id))?;
        match suffix {
            None => Ok(template.clone()),
            Some(s) => Variant::parse(s)
                .and_then(|v| apply_variant(template, v, policy))
                .ok_or_else(|| Error::miss("template variant", template_id)),
        }
    }

    /// Templates applicable to `attribute` (or to the bare category when
    /// `None`) on `category`, ordered by template id.
    ///
    /// For non-binary questions, attribute-specific templates replace the
    /// generic ones when any exist; universal (`*`) templates always apply.
    pub fn templates_for(
        &self,
        taxonomy: &Taxonomy,
        attribute: Option<&str>,
        category: &Category,
        answer_type: AnswerType,
    ) -> Vec<&QuestionTemplate> {
        let candidates = self.iter().filter(|t| t.answer_type == answer_type);
        match attribute {
            None => match answer_type {
                AnswerType::Binary => candidates.filter(|t| t.arity == 0).collect(),
                AnswerType::NonBinary => Vec::new(),
            },
            Some(attr) => {
                let applicable = taxonomy
                    .attribute(attr)
                    .map(|a| a.applies_to(category.super_category))
                    .unwrap_or(false);
                if !applicable {
                    return Vec::new();
                }
                let accepted: Vec<&QuestionTemplate> = candidates
                    .filter(|t| t.accepts_attribute(attr))
                    .filter(|t| answer_type == AnswerType::NonBinary || t.arity > 0)
                    .collect();
                if answer_type == AnswerType::NonBinary && accepted.iter().any(|t| t.is_specific_to(attr)) {
                    accepted
                        .into_iter()
                        .filter(|t| t.is_specific_to(attr) || t.is_universal())
                        .collect()
                } else {
                    accepted
                }
            }
        }
    }
}
