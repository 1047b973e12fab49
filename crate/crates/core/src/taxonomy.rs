//! Category and attribute ontology.
//!
//! The taxonomy is loaded from a declarative registry document (JSON, see
//! `data/taxonomy.json` and the README for the schema). Nothing about the
//! ontology is hard-coded: the loader validates the document, resolves
//! category locations and precomputes the synonym closure of every category
//! and attribute value. After construction the taxonomy is immutable.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAXONOMY_SCHEMA_VERSION: u32 = 1;

/// Attributes that every super-category carries.
pub const GENERAL_ATTRIBUTES: [&str; 5] = ["color", "pattern", "fit type", "closure type", "material"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SuperCategory {
    #[serde(rename = "apparel top")]
    ApparelTop,
    #[serde(rename = "apparel bottom")]
    ApparelBottom,
    #[serde(rename = "one-piece clothing")]
    OnePiece,
    #[serde(rename = "shoes")]
    Shoes,
    #[serde(rename = "accessories")]
    Accessories,
}

impl SuperCategory {
    pub const ALL: [SuperCategory; 5] = [
        SuperCategory::ApparelTop,
        SuperCategory::ApparelBottom,
        SuperCategory::OnePiece,
        SuperCategory::Shoes,
        SuperCategory::Accessories,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuperCategory::ApparelTop => "apparel top",
            SuperCategory::ApparelBottom => "apparel bottom",
            SuperCategory::OnePiece => "one-piece clothing",
            SuperCategory::Shoes => "shoes",
            SuperCategory::Accessories => "accessories",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sc| sc.as_str() == s)
    }
}

impl fmt::Display for SuperCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relative location of the primary item in a multi-item image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LocationPhrase {
    #[serde(rename = "on the top")]
    OnTheTop,
    #[serde(rename = "on the bottom")]
    OnTheBottom,
    #[serde(rename = "on the feet")]
    OnTheFeet,
    #[serde(rename = "over the neck")]
    OverTheNeck,
    #[serde(rename = "on the head")]
    OnTheHead,
}

impl LocationPhrase {
    pub const ALL: [LocationPhrase; 5] = [
        LocationPhrase::OnTheTop,
        LocationPhrase::OnTheBottom,
        LocationPhrase::OnTheFeet,
        LocationPhrase::OverTheNeck,
        LocationPhrase::OnTheHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LocationPhrase::OnTheTop => "on the top",
            LocationPhrase::OnTheBottom => "on the bottom",
            LocationPhrase::OnTheFeet => "on the feet",
            LocationPhrase::OverTheNeck => "over the neck",
            LocationPhrase::OnTheHead => "on the head",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// The super-category a phrase is reserved for. The neck and head
    /// phrases belong to accessory categories (scarf, hat).
    fn home_super(self) -> SuperCategory {
        match self {
            LocationPhrase::OnTheTop => SuperCategory::ApparelTop,
            LocationPhrase::OnTheBottom => SuperCategory::ApparelBottom,
            LocationPhrase::OnTheFeet => SuperCategory::Shoes,
            LocationPhrase::OverTheNeck | LocationPhrase::OnTheHead => SuperCategory::Accessories,
        }
    }
}

impl fmt::Display for LocationPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    pub super_category: SuperCategory,
    pub parent: Option<String>,
    pub singular_form: String,
    pub plural_form: String,
    pub is_paired: bool,
    pub default_location: Option<LocationPhrase>,
    pub alternatives: BTreeSet<String>,
}

impl Category {
    /// Location phrase used to disambiguate the item when a person (and so,
    /// presumably, other items) is in the image. One-piece clothing never
    /// gets one.
    pub fn location_for(&self, has_person: bool) -> Option<LocationPhrase> {
        if !has_person || self.super_category == SuperCategory::OnePiece {
            return None;
        }
        self.default_location
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub applicable_supers: BTreeSet<SuperCategory>,
    pub value_names: Vec<String>,
}

impl Attribute {
    pub fn applies_to(&self, super_category: SuperCategory) -> bool {
        self.applicable_supers.contains(&super_category)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeValue {
    pub name: String,
    pub attribute: String,
    pub alternatives: BTreeSet<String>,
    pub parents: BTreeSet<String>,
    pub exclusions: BTreeSet<String>,
}

// ---------------------------------------------------------------------------
// Agreement

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Number {
    Singular,
    Plural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Copula {
    Is,
    Are,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Demonstrative {
    This,
    These,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairPhrase {
    #[serde(rename = "")]
    None,
    #[serde(rename = "pair of")]
    PairOf,
    #[serde(rename = "pairs of")]
    PairsOf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Article {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "an")]
    An,
    #[serde(rename = "")]
    None,
}

impl Copula {
    pub fn as_str(self) -> &'static str {
        match self {
            Copula::Is => "is",
            Copula::Are => "are",
        }
    }
}

impl Demonstrative {
    pub fn as_str(self) -> &'static str {
        match self {
            Demonstrative::This => "this",
            Demonstrative::These => "these",
        }
    }
}

impl PairPhrase {
    pub fn as_str(self) -> &'static str {
        match self {
            PairPhrase::None => "",
            PairPhrase::PairOf => "pair of",
            PairPhrase::PairsOf => "pairs of",
        }
    }
}

impl Article {
    pub fn as_str(self) -> &'static str {
        match self {
            Article::A => "a",
            Article::An => "an",
            Article::None => "",
        }
    }

    /// Indefinite article for the word that follows it: "an" before a
    /// vowel letter, "a" otherwise. Pronunciation exceptions are ignored.
    pub fn before(word: &str) -> Article {
        match word.chars().next().map(|c| c.to_ascii_lowercase()) {
            Some('a' | 'e' | 'i' | 'o' | 'u') => Article::An,
            _ => Article::A,
        }
    }
}

/// Surface choices that must agree with the number of items in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgreementBundle {
    pub copula: Copula,
    pub demonstrative: Demonstrative,
    pub pair_phrase: PairPhrase,
    pub noun_form: Number,
    pub article: Article,
}

impl AgreementBundle {
    pub fn number(&self) -> Number {
        self.noun_form
    }

    /// The same bundle with every number-sensitive choice switched. Used for
    /// deliberate agreement noise.
    pub fn flipped(&self) -> AgreementBundle {
        let plural = self.noun_form == Number::Singular;
        let paired = self.pair_phrase != PairPhrase::None;
        AgreementBundle {
            copula: if plural { Copula::Are } else { Copula::Is },
            demonstrative: if plural { Demonstrative::These } else { Demonstrative::This },
            pair_phrase: match (paired, plural) {
                (false, _) => PairPhrase::None,
                (true, true) => PairPhrase::PairsOf,
                (true, false) => PairPhrase::PairOf,
            },
            noun_form: if plural { Number::Plural } else { Number::Singular },
            article: if plural { Article::None } else { Article::A },
        }
    }
}

/// Agreement choices for `piece_count` items of a (possibly paired) category.
///
/// `following_word` is the surface word after the article slot. A paired
/// singular item is always followed by "pair", so it takes "a".
pub fn agreement_forms(piece_count: u32, is_paired: bool, following_word: &str) -> Result<AgreementBundle> {
    if piece_count < 1 {
        return Err(Error::InvalidItem(format!("piece count {piece_count} < 1")));
    }
    let bundle = if piece_count > 1 {
        AgreementBundle {
            copula: Copula::Are,
            demonstrative: Demonstrative::These,
            pair_phrase: if is_paired { PairPhrase::PairsOf } else { PairPhrase::None },
            noun_form: Number::Plural,
            article: Article::None,
        }
    } else {
        let next = if is_paired { "pair" } else { following_word };
        AgreementBundle {
            copula: Copula::Is,
            demonstrative: Demonstrative::This,
            pair_phrase: if is_paired { PairPhrase::PairOf } else { PairPhrase::None },
            noun_form: Number::Singular,
            article: Article::before(next),
        }
    };
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub source: String,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(source: &str, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            source: source.to_string(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn warning(source: &str, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(source, code, message)
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}:{}]: {}", self.source, self.code, self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

// ---------------------------------------------------------------------------
// Registry document

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyDocument {
    pub schema_version: u32,
    pub categories: Vec<CategoryRecord>,
    pub attributes: Vec<AttributeRecord>,
    pub values: Vec<ValueRecord>,
    #[serde(default)]
    pub locations: Vec<LocationRecord>,
    #[serde(default)]
    pub parts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryRecord {
    pub name: String,
    pub super_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plural: Option<String>,
    #[serde(default)]
    pub paired: bool,
    /// Noun has identical singular and plural forms (e.g. "pants").
    #[serde(default)]
    pub number_invariant: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRecord {
    pub name: String,
    pub applies_to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRecord {
    pub attribute: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<String>,
}

/// Maps a super-category or a category name to a location phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationRecord {
    pub target: String,
    pub phrase: String,
}

impl TaxonomyDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("taxonomy registry", e))
    }

    /// Structural and referential checks. Loading fails if any error-level
    /// diagnostic is reported.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let src = "taxonomy";
        let mut err = |code: &str, msg: String| out.push(Diagnostic::error(src, code, msg));

        if self.schema_version != TAXONOMY_SCHEMA_VERSION {
            err(
                "schema-version",
                format!("schema_version {} (expected {TAXONOMY_SCHEMA_VERSION})", self.schema_version),
            );
        }

        // categories
        let mut cats: BTreeMap<&str, &CategoryRecord> = BTreeMap::new();
        for c in &self.categories {
            if c.name.trim().is_empty() {
                err("schema", "category with empty name".into());
            }
            if cats.insert(c.name.as_str(), c).is_some() {
                err("duplicate-category", format!("category `{}` declared twice", c.name));
            }
            if SuperCategory::parse(&c.super_category).is_none() {
                err(
                    "unknown-super",
                    format!("category `{}` has unknown super-category `{}`", c.name, c.super_category),
                );
            }
            let singular = c.singular.as_deref().unwrap_or(&c.name);
            let plural = c.plural.clone().unwrap_or_else(|| format!("{singular}s"));
            if singular == plural && !c.paired && !c.number_invariant {
                err(
                    "number-forms",
                    format!("category `{}` has identical singular and plural forms `{singular}`", c.name),
                );
            }
        }
        for c in &self.categories {
            if let Some(parent) = &c.parent {
                match cats.get(parent.as_str()) {
                    None => err(
                        "dangling-reference",
                        format!("category `{}` has unknown parent `{parent}`", c.name),
                    ),
                    Some(p) if p.super_category != c.super_category => err(
                        "parent-super-mismatch",
                        format!(
                            "category `{}` ({}) has parent `{parent}` in a different super-category ({})",
                            c.name, c.super_category, p.super_category
                        ),
                    ),
                    Some(_) => {}
                }
                if parent == &c.name {
                    err("self-relation", format!("category `{}` is its own parent", c.name));
                }
            }
            for alt in &c.alternatives {
                if alt == &c.name {
                    err("self-relation", format!("category `{}` lists itself as alternative", c.name));
                    continue;
                }
                match cats.get(alt.as_str()) {
                    None => err(
                        "dangling-reference",
                        format!("category `{}` has unknown alternative `{alt}`", c.name),
                    ),
                    Some(other) if !other.alternatives.contains(&c.name) => err(
                        "asymmetric-alternative",
                        format!("category `{}` lists `{alt}` as alternative but not vice versa", c.name),
                    ),
                    Some(_) => {}
                }
            }
        }
        for c in &self.categories {
            let mut seen = BTreeSet::new();
            let mut cur = c.parent.as_deref();
            while let Some(p) = cur {
                if !seen.insert(p) || p == c.name {
                    err("cyclic-parent", format!("category `{}` has a cyclic parent chain", c.name));
                    break;
                }
                cur = cats.get(p).and_then(|r| r.parent.as_deref());
            }
        }

        // attributes
        let mut attrs: BTreeMap<&str, &AttributeRecord> = BTreeMap::new();
        for a in &self.attributes {
            if attrs.insert(a.name.as_str(), a).is_some() {
                err("duplicate-attribute", format!("attribute `{}` declared twice", a.name));
            }
            for s in &a.applies_to {
                if SuperCategory::parse(s).is_none() {
                    err(
                        "unknown-super",
                        format!("attribute `{}` applies to unknown super-category `{s}`", a.name),
                    );
                }
            }
            if GENERAL_ATTRIBUTES.contains(&a.name.as_str()) {
                let covered: BTreeSet<_> = a.applies_to.iter().filter_map(|s| SuperCategory::parse(s)).collect();
                if covered.len() != SuperCategory::ALL.len() {
                    err(
                        "general-attribute-coverage",
                        format!("general attribute `{}` must apply to all five super-categories", a.name),
                    );
                }
            }
        }

        // values
        let mut vals: BTreeMap<(&str, &str), &ValueRecord> = BTreeMap::new();
        for v in &self.values {
            if !attrs.contains_key(v.attribute.as_str()) {
                err(
                    "missing-attribute",
                    format!("value `{}` references unknown attribute `{}`", v.name, v.attribute),
                );
            }
            if v.name.trim().is_empty() {
                err("schema", format!("empty value name under attribute `{}`", v.attribute));
            }
            if vals.insert((v.attribute.as_str(), v.name.as_str()), v).is_some() {
                err(
                    "duplicate-value",
                    format!("value `{}` declared twice under `{}`", v.name, v.attribute),
                );
            }
        }
        for a in &self.attributes {
            if !self.values.iter().any(|v| v.attribute == a.name) {
                err("empty-attribute", format!("attribute `{}` has no values", a.name));
            }
        }
        for v in &self.values {
            let relations = [
                ("alternative", &v.alternatives),
                ("parent", &v.parents),
                ("exclusion", &v.exclusions),
            ];
            for (rel, names) in relations {
                for n in names {
                    if n == &v.name {
                        err(
                            "self-relation",
                            format!("value `{}`/`{}` lists itself as {rel}", v.attribute, v.name),
                        );
                    } else if !vals.contains_key(&(v.attribute.as_str(), n.as_str())) {
                        err(
                            "dangling-reference",
                            format!(
                                "value `{}`/`{}` has unknown {rel} `{n}` (relations stay within one attribute)",
                                v.attribute, v.name
                            ),
                        );
                    }
                }
            }
            for alt in &v.alternatives {
                if let Some(other) = vals.get(&(v.attribute.as_str(), alt.as_str())) {
                    if !other.alternatives.contains(&v.name) {
                        err(
                            "asymmetric-alternative",
                            format!(
                                "value `{}`/`{}` lists `{alt}` as alternative but not vice versa",
                                v.attribute, v.name
                            ),
                        );
                    }
                }
            }
            for ex in &v.exclusions {
                if v.alternatives.contains(ex) || v.parents.contains(ex) {
                    err(
                        "exclusion-conflict",
                        format!(
                            "value `{}`/`{}` both excludes and relates to `{ex}`",
                            v.attribute, v.name
                        ),
                    );
                }
            }
        }
        // parent cycles among values (DFS with colors)
        for v in &self.values {
            let mut stack: Vec<(&str, Vec<&str>)> = vec![(v.name.as_str(), vec![v.name.as_str()])];
            let mut cyclic = false;
            let mut visited = BTreeSet::new();
            while let Some((node, path)) = stack.pop() {
                if let Some(rec) = vals.get(&(v.attribute.as_str(), node)) {
                    for p in &rec.parents {
                        if p == &v.name {
                            cyclic = true;
                        } else if visited.insert(p.as_str()) {
                            let mut next = path.clone();
                            next.push(p);
                            stack.push((p.as_str(), next));
                        }
                    }
                }
            }
            if cyclic {
                err(
                    "cyclic-parent",
                    format!("value `{}`/`{}` is its own ancestor", v.attribute, v.name),
                );
            }
        }

        // locations
        let mut targets = BTreeSet::new();
        for l in &self.locations {
            let Some(phrase) = LocationPhrase::parse(&l.phrase) else {
                err("unknown-location", format!("`{}` is not a location phrase", l.phrase));
                continue;
            };
            if !targets.insert(l.target.as_str()) {
                err("duplicate-location", format!("location target `{}` mapped twice", l.target));
            }
            let target_super = SuperCategory::parse(&l.target)
                .or_else(|| cats.get(l.target.as_str()).and_then(|c| SuperCategory::parse(&c.super_category)));
            match target_super {
                None => err(
                    "dangling-reference",
                    format!("location target `{}` is neither a super-category nor a category", l.target),
                ),
                Some(s) if s != phrase.home_super() => err(
                    "location-target",
                    format!("`{}` cannot locate `{}` ({s})", l.phrase, l.target),
                ),
                Some(_) => {
                    if matches!(phrase, LocationPhrase::OverTheNeck | LocationPhrase::OnTheHead)
                        && SuperCategory::parse(&l.target).is_some()
                    {
                        err(
                            "location-target",
                            format!("`{}` must target an accessory category, not a super-category", l.phrase),
                        );
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Loaded taxonomy

#[derive(Debug, Clone)]
pub struct Taxonomy {
    categories: BTreeMap<String, Category>,
    attributes: BTreeMap<String, Attribute>,
    attribute_order: Vec<String>,
    values: BTreeMap<(String, String), AttributeValue>,
    value_synonyms: BTreeMap<(String, String), BTreeSet<String>>,
    category_synonyms: BTreeMap<String, BTreeSet<String>>,
    parts: BTreeSet<String>,
}

impl Taxonomy {
    pub fn from_document(doc: &TaxonomyDocument) -> Result<Self> {
        let diagnostics = doc.validate();
        if has_errors(&diagnostics) {
            return Err(Error::Validation(diagnostics));
        }

        let location_map: BTreeMap<&str, LocationPhrase> = doc
            .locations
            .iter()
            .filter_map(|l| LocationPhrase::parse(&l.phrase).map(|p| (l.target.as_str(), p)))
            .collect();
        let records: BTreeMap<&str, &CategoryRecord> =
            doc.categories.iter().map(|c| (c.name.as_str(), c)).collect();

        let mut categories = BTreeMap::new();
        for c in &doc.categories {
            let super_category = SuperCategory::parse(&c.super_category).expect("validated");
            // nearest explicit mapping along the parent chain, then the super
            let mut location = None;
            let mut cur = Some(c.name.as_str());
            while let Some(name) = cur {
                if let Some(p) = location_map.get(name) {
                    location = Some(*p);
                    break;
                }
                cur = records.get(name).and_then(|r| r.parent.as_deref());
            }
            let location = location.or_else(|| location_map.get(super_category.as_str()).copied());
            let singular = c.singular.clone().unwrap_or_else(|| c.name.clone());
            let plural = c.plural.clone().unwrap_or_else(|| {
                if c.paired || c.number_invariant {
                    singular.clone()
                } else {
                    format!("{singular}s")
                }
            });
            categories.insert(
                c.name.clone(),
                Category {
                    name: c.name.clone(),
                    super_category,
                    parent: c.parent.clone(),
                    singular_form: singular,
                    plural_form: plural,
                    is_paired: c.paired,
                    default_location: location,
                    alternatives: c.alternatives.iter().cloned().collect(),
                },
            );
        }

        let mut attributes = BTreeMap::new();
        let mut attribute_order = Vec::new();
        for a in &doc.attributes {
            attribute_order.push(a.name.clone());
            attributes.insert(
                a.name.clone(),
                Attribute {
                    name: a.name.clone(),
                    applicable_supers: a.applies_to.iter().filter_map(|s| SuperCategory::parse(s)).collect(),
                    value_names: Vec::new(),
                },
            );
        }
        let mut values = BTreeMap::new();
        for v in &doc.values {
            attributes
                .get_mut(&v.attribute)
                .expect("validated")
                .value_names
                .push(v.name.clone());
            values.insert(
                (v.attribute.clone(), v.name.clone()),
                AttributeValue {
                    name: v.name.clone(),
                    attribute: v.attribute.clone(),
                    alternatives: v.alternatives.iter().cloned().collect(),
                    parents: v.parents.iter().cloned().collect(),
                    exclusions: v.exclusions.iter().cloned().collect(),
                },
            );
        }

        let value_synonyms = values
            .keys()
            .map(|(attr, name)| {
                let closure = closure(name, |n| {
                    let key = (attr.clone(), n.to_string());
                    let mut next: Vec<String> = values[&key].alternatives.iter().cloned().collect();
                    next.extend(
                        values
                            .values()
                            .filter(|v| &v.attribute == attr && v.parents.contains(n))
                            .map(|v| v.name.clone()),
                    );
                    next
                });
                ((attr.clone(), name.clone()), closure)
            })
            .collect();
        let category_synonyms = categories
            .keys()
            .map(|name| {
                let closure = closure(name, |n| {
                    let mut next: Vec<String> = categories[n].alternatives.iter().cloned().collect();
                    next.extend(
                        categories
                            .values()
                            .filter(|c| c.parent.as_deref() == Some(n))
                            .map(|c| c.name.clone()),
                    );
                    next
                });
                (name.clone(), closure)
            })
            .collect();

        Ok(Taxonomy {
            categories,
            attributes,
            attribute_order,
            values,
            value_synonyms,
            category_synonyms,
            parts: doc.parts.iter().cloned().collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&TaxonomyDocument::from_json(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(crate::builtin::TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn category(&self, name: &str) -> Result<&Category> {
        self.categories.get(name).ok_or_else(|| Error::miss("category", name))
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.values()
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        self.attributes.get(name).ok_or_else(|| Error::miss("attribute", name))
    }

    /// Attributes in registry order.
    pub fn attributes(&self) -> impl Iterator<Item = &Attribute> {
        self.attribute_order.iter().map(|n| &self.attributes[n])
    }

    pub fn value(&self, attribute: &str, name: &str) -> Result<&AttributeValue> {
        self.values
            .get(&(attribute.to_string(), name.to_string()))
            .ok_or_else(|| Error::miss("attribute value", format!("{attribute}/{name}")))
    }

    pub fn has_value(&self, attribute: &str, name: &str) -> bool {
        self.values.contains_key(&(attribute.to_string(), name.to_string()))
    }

    pub fn is_part(&self, name: &str) -> bool {
        self.parts.contains(name)
    }

    /// Values whose positives also count as positives of `name`: its
    /// alternatives and hierarchical descendants, closed transitively.
    /// Never contains `name` itself and never leaves the attribute.
    pub fn synonyms_of(&self, attribute: &str, name: &str) -> Result<&BTreeSet<String>> {
        self.value_synonyms
            .get(&(attribute.to_string(), name.to_string()))
            .ok_or_else(|| Error::miss("attribute value", format!("{attribute}/{name}")))
    }

    /// Category counterpart of [`Taxonomy::synonyms_of`]: alternatives and
    /// sub-categories.
    pub fn category_synonyms_of(&self, name: &str) -> Result<&BTreeSet<String>> {
        self.category_synonyms.get(name).ok_or_else(|| Error::miss("category", name))
    }

    pub fn location_for(&self, category: &str, has_person: bool) -> Result<Option<LocationPhrase>> {
        Ok(self.category(category)?.location_for(has_person))
    }

    /// Agreement bundle for an item, given the word following the article.
    pub fn agreement_forms(&self, item: &crate::ingest::FashionItem, following_word: &str) -> Result<AgreementBundle> {
        let category = self.category(&item.category)?;
        agreement_forms(item.piece_count, category.is_paired, following_word)
    }

    /// Depth of a category in the sub-category hierarchy (roots are 0).
    pub fn category_depth(&self, name: &str) -> usize {
        let mut depth = 0;
        let mut cur = self.categories.get(name).and_then(|c| c.parent.as_deref());
        while let Some(p) = cur {
            depth += 1;
            cur = self.categories.get(p).and_then(|c| c.parent.as_deref());
        }
        depth
    }
}

fn closure<F>(start: &str, mut next: F) -> BTreeSet<String>
where
    F: FnMut(&str) -> Vec<String>,
{
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start.to_string()]);
    while let Some(n) = queue.pop_front() {
        for m in next(&n) {
            if m != start && seen.insert(m.clone()) {
                queue.push_back(m);
            }
        }
    }
    seen
}
